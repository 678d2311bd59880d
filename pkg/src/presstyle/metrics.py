"""Sequence metrics and the per-category transfer report.

``rmse`` averages the per-frame mean squared cell error over time before the
square root. ``binary_r2`` binarizes both inputs (cell > threshold) and
computes a coefficient of determination over every cell of every frame.
"""
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import DatasetManifest, PressureSequence
from .errors import DegenerateMetricError, ShapeError

log = logging.getLogger(__name__)

PROTOCOLS = ("seen", "unseen")
PAIRINGS = ("identity", "cross")

# reference values of the original full-scale study, not desk targets
REFERENCE_TRANSFER = {"seen": {"rmse": 8.88, "binary_r2": 0.79}, "unseen": {"rmse": 12.82, "binary_r2": 0.70}}


def _frames(x):
    return x.frames if isinstance(x, PressureSequence) else np.asarray(x, dtype=np.float64)


def _pair(synth, truth):
    a, b = _frames(synth), _frames(truth)
    if a.shape != b.shape:
        dim = "frames" if a.shape[1:] == b.shape[1:] else "grid"
        raise ShapeError(f"sequence shapes differ: {a.shape} vs {b.shape}", dim=dim)
    if a.ndim < 2:
        raise ShapeError(f"expected (T, H, W) or (H, W) frames, got {a.shape}", dim="rank")
    if a.ndim == 2:
        a, b = a[None], b[None]
    return a.reshape(a.shape[0], -1), b.reshape(b.shape[0], -1)


def rmse(synth, truth):
    """Root of the time-averaged per-frame mean squared cell difference."""
    a, b = _pair(synth, truth)
    per_frame = ((a.astype(np.float64) - b) ** 2).mean(axis=1)
    return float(np.sqrt(per_frame.mean()))


def binarize(x, threshold=0.0):
    return _frames(x) > threshold


def binary_r2(synth, truth, threshold=0.0, mask=False):
    """R^2 of the binarized maps; 1 is a perfect contact match, may go negative.

    With ``mask=True`` only cells where either input is in contact at some
    frame contribute. Raises :class:`DegenerateMetricError` if the
    binarized truth is constant, unless the two binarized inputs are
    identical, which scores 1.0.
    """
    a, b = _pair(synth, truth)
    bs, bt = (a > threshold).astype(np.float64), (b > threshold).astype(np.float64)
    if mask:
        keep = (bs.any(axis=0) | bt.any(axis=0))
        bs, bt = bs[:, keep], bt[:, keep]
    ss_tot = ((bt - bt.mean()) ** 2).sum() if bt.size else 0.0
    if ss_tot == 0:
        if np.array_equal(bs, bt):
            return 1.0
        raise DegenerateMetricError("binarized truth is constant; binary R^2 undefined")
    return float(1.0 - ((bs - bt) ** 2).sum() / ss_tot)


def mean_frame_baseline(truth):
    """Predict every frame as the sequence's temporal mean map."""
    f = _frames(truth)
    return np.broadcast_to(f.mean(axis=0), f.shape)


# ---------------------------------------------------------------- report


@dataclass
class EvalRow:
    category: str
    tag: str
    rmse: float
    binary_r2: float
    n: int = 1


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    pairing: str = "identity"

    def tags(self):
        return [t for t in PROTOCOLS if any(r.tag == t for r in self.rows)]

    def averages(self):
        """Per tag, the unweighted mean over its category rows."""
        out = {}
        for t in self.tags():
            rs = [r for r in self.rows if r.tag == t]
            out[t] = {"rmse": float(np.mean([r.rmse for r in rs])), "binary_r2": float(np.mean([r.binary_r2 for r in rs]))}
        return out

    def to_dict(self):
        return {"pairing": self.pairing, "rows": [asdict(r) for r in self.rows], "averages": self.averages(),
                "reference": REFERENCE_TRANSFER}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self):
        lines = [f"{'category':<12} {'split':<7} {'RMSE':>9} {'binary R2':>10} {'n':>4}"]
        for t in self.tags():
            for r in (r for r in self.rows if r.tag == t):
                lines.append(f"{r.category:<12} {r.tag:<7} {r.rmse:>9.4f} {r.binary_r2:>10.4f} {r.n:>4d}")
            avg = self.averages()[t]
            lines.append(f"{'average':<12} {t:<7} {avg['rmse']:>9.4f} {avg['binary_r2']:>10.4f}")
        return "\n".join(lines)

    def save(self, path):
        path = Path(path)
        path.write_text(self.to_json() + "\n")
        path.with_suffix(".txt").write_text(self.to_text() + "\n")


def _as_transfer_fn(model, stride):
    if callable(model) and not hasattr(model, "params"):
        return model
    from .model import transfer

    return lambda seq, attrs: transfer(seq, attrs, model, stride=stride)


def _held_out(manifest, protocol):
    trained = set(manifest.scripts("train", "val"))
    held = manifest.split("test")
    if protocol == "seen":
        return [e for e in held if e.script in trained]
    return [e for e in held if e.script not in trained]


def evaluate(manifest, model, protocol="seen", pairing="identity", stride=30):
    """Score transfer outputs on held-out subjects, one row per motion category.

    ``protocol`` is "seen", "unseen" or "both". ``model`` is a TransferNet,
    a weights path, or any ``f(seq, target_attrs) -> seq``. With
    ``pairing="identity"`` each held-out sequence is re-rendered for its own
    body; with "cross" each is rendered from another held-out subject's
    sequence of the same script.
    """
    if isinstance(manifest, (str, Path)):
        manifest = DatasetManifest.load(manifest)
    if pairing not in PAIRINGS:
        raise ValueError(f"pairing must be one of {PAIRINGS}")
    protocols = PROTOCOLS if protocol == "both" else (protocol,)
    for p in protocols:
        if p not in PROTOCOLS:
            raise ValueError(f"protocol must be seen, unseen or both, not {p!r}")
    if isinstance(model, (str, Path)):
        from .model import TransferNet

        model = TransferNet.load(model)
    fn = _as_transfer_fn(model, stride)
    report = EvalReport(pairing=pairing)
    for p in protocols:
        entries = _held_out(manifest, p)
        if not entries:
            warnings.warn(f"no held-out sequences for the {p} protocol", stacklevel=2)
            continue
        by_script = {}
        for e in entries:
            by_script.setdefault(e.script, []).append(e)
        scores = {}
        for e in entries:
            truth = e.load()
            if pairing == "identity":
                src = truth
            else:
                peers = sorted((x for x in by_script[e.script] if x.subject_id != e.subject_id),
                               key=lambda x: x.subject_id)
                if not peers:
                    warnings.warn(f"no cross-subject source for {e.script}/{e.subject_id}", stacklevel=2)
                    continue
                src = peers[0].load()
            out = fn(src, truth.attributes)
            n = min(len(out), len(truth))
            scores.setdefault(e.motion_label, []).append(
                (rmse(out.frames[:n], truth.frames[:n]), binary_r2(out.frames[:n], truth.frames[:n]))
            )
        for cat in sorted(scores):
            s = np.array(scores[cat])
            report.rows.append(EvalRow(cat, p, float(s[:, 0].mean()), float(s[:, 1].mean()), len(s)))
        log.info("%s protocol: %d categories", p, len(scores))
    return report
