"""Downstream activity recognition: pseudo-labels, a window classifier, and
the real / synthetic / combined comparison.

Activity labels are treated as unknown. Windows are summarized by a
12-d descriptor, clustered with mean shift, and the cluster ids serve as
class labels for a small conv classifier.
"""
import csv
import json
import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import numerics as nx
from .data import WINDOW, DatasetManifest, window_starts
from .errors import ShapeError, TrainingError
from .numerics.backend import K
from .synth import sample_attributes

log = logging.getLogger(__name__)

DESCRIPTOR_NAMES = (
    "force_mean",
    "force_var",
    "flight_fraction",
    "area_mean",
    "area_var",
    "row_speed",
    "col_speed",
    "row_range",
    "col_range",
    "row_spread",
    "col_spread",
    "row_spread_max",
)
COLUMNS = ("Real", "Synthetic", "Real+Synthetic")
REFERENCE_F1 = {"Real": (0.879, 0.014), "Synthetic": (0.803, 0.02), "Real+Synthetic": (0.911, 0.015)}


# ---------------------------------------------------------------- descriptors


def describe_windows(windows):
    """(B, T, H, W) pressure windows -> (B, 12) descriptors.

    Force and contact area are divided by their window maximum, so the
    features describe the motion rather than the body's weight or size.
    Centroid features are speeds and ranges, never absolute positions, so
    where on the mat a motion happens does not matter. Spreads are per-frame
    standard deviations of the row / column pressure profiles, averaged over
    the frames with contact. Lengths are in units of the square root of the
    window's peak contact area, which cancels foot size.
    """
    w = np.asarray(windows, dtype=np.float64)
    if w.ndim == 3:
        w = w[None]
    if w.ndim != 4:
        raise ShapeError(f"expected (B, T, H, W) windows, got {w.shape}", dim="rank")
    _, _, h, wd = w.shape
    force = w.sum(axis=(2, 3))  # (B, T)
    area = (w > 0).sum(axis=(2, 3)).astype(np.float64)
    f = force / np.maximum(force.max(axis=1, keepdims=True), 1e-12)
    a = area / np.maximum(area.max(axis=1, keepdims=True), 1.0)
    live = force > 0
    n_live = np.maximum(live.sum(axis=1), 1)
    safe = np.maximum(force, 1e-12)[..., None]
    rows, cols = np.arange(h) + 0.5, np.arange(wd) + 0.5
    r_prof, c_prof = w.sum(axis=3) / safe, w.sum(axis=2) / safe
    rc, cc = r_prof @ rows, c_prof @ cols
    rs = np.sqrt(np.maximum(r_prof @ rows**2 - rc**2, 0.0))
    cs = np.sqrt(np.maximum(c_prof @ cols**2 - cc**2, 0.0))

    def tmean(x):
        return np.where(live, x, 0.0).sum(axis=1) / n_live

    def trange(x):
        hi = np.where(live, x, -np.inf).max(axis=1)
        lo = np.where(live, x, np.inf).min(axis=1)
        return np.where(live.any(axis=1), hi - lo, 0.0)

    unit = np.sqrt(np.maximum(area.max(axis=1), 1.0))[:, None]
    rc, cc, rs, cs = rc / unit, cc / unit, rs / unit, cs / unit
    both = live[:, 1:] & live[:, :-1]
    n_both = np.maximum(both.sum(axis=1), 1)

    def speed(x):
        return (np.abs(np.diff(x, axis=1)) * both).sum(axis=1) / n_both

    out = np.stack(
        [f.mean(1), f.var(1), 1.0 - live.mean(1), a.mean(1), a.var(1), speed(rc), speed(cc), trange(rc),
         trange(cc), tmean(rs), tmean(cs), np.where(live, rs, 0.0).max(axis=1)],
        axis=1,
    )
    out[~live.any(axis=1)] = 0.0
    return out


@dataclass(frozen=True)
class WindowDescriptor:
    values: np.ndarray
    sequence: int = 0
    start: int = 0

    @classmethod
    def of(cls, frames, sequence=0, start=0):
        return cls(describe_windows(frames)[0], sequence, start)

    def as_dict(self):
        return dict(zip(DESCRIPTOR_NAMES, map(float, self.values)))


# ---------------------------------------------------------------- mean shift


def _pairwise_sq(a, b):
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def estimate_bandwidth(points, quantile=0.5, scale=0.25):
    """Median heuristic: ``scale`` times the ``quantile`` of all pairwise
    point distances."""
    x = np.asarray(points, dtype=np.float64)
    if len(x) < 2:
        return 1.0
    iu = np.triu_indices(len(x), 1)
    d = np.sqrt(_pairwise_sq(x, x)[iu])
    bw = scale * float(np.quantile(d, quantile))
    return bw if bw > 0 else 1.0


@dataclass
class ClusterModel:
    modes: np.ndarray
    bandwidth: float
    center: np.ndarray = None  # descriptor standardization, if any
    scale: np.ndarray = None
    sizes: np.ndarray = None

    @property
    def n_clusters(self):
        return len(self.modes)

    def _prep(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.center is not None:
            x = (x - self.center) / self.scale
        return x

    def predict(self, points):
        return np.argmin(_pairwise_sq(self._prep(points), self.modes), axis=1)

    def to_dict(self):
        d = {"modes": self.modes.tolist(), "bandwidth": self.bandwidth}
        if self.center is not None:
            d.update(center=self.center.tolist(), scale=self.scale.tolist())
        if self.sizes is not None:
            d["sizes"] = self.sizes.tolist()
        return d


def _polish(centers, data, w, bw, flat, max_iter):
    """Climb kept modes to tight convergence, so a mode does not depend on
    which of its converged points represented it."""
    centers = centers.copy()
    for _ in range(max_iter):
        new = K.mean_shift_step(np.ascontiguousarray(centers), data, w, bw, flat)
        done = np.sqrt(((new - centers) ** 2).sum(1)).max() < 1e-10 * bw
        centers = new
        if done:
            break
    return centers


def mean_shift(points, bandwidth=0.0, kernel="gaussian", weights=None, tol=1e-4, max_iter=300, merge=0.5,
               min_size=0.0):
    """Mode-seeking clustering; returns ``(ClusterModel, labels)``.

    Every point climbs the kernel density until its shift drops below
    ``tol * bandwidth``. Converged points are merged in order of density,
    a point joining the first kept mode within ``merge * bandwidth``.
    Modes are ordered lexicographically so labels do not depend on input
    order. ``bandwidth=0`` selects the median heuristic. Modes holding
    less than ``min_size`` of the total weight are dropped and their points
    go to the nearest remaining mode.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) < 1:
        raise ValueError("mean_shift needs at least one point")
    if not np.isfinite(x).all():
        raise ValueError("non-finite descriptor value")
    if kernel not in ("gaussian", "flat"):
        raise ValueError("kernel must be 'gaussian' or 'flat'")
    w = np.ones(len(x)) if weights is None else np.asarray(weights, dtype=np.float64)
    bw = float(bandwidth) if bandwidth and bandwidth > 0 else estimate_bandwidth(x)
    # shift to the data mean so float error does not depend on a global offset
    origin = x.mean(axis=0)
    data = np.ascontiguousarray(x - origin)
    modes = data.copy()
    active = np.arange(len(data))
    flat = kernel == "flat"
    for _ in range(max_iter):
        if active.size == 0:
            break
        new = K.mean_shift_step(np.ascontiguousarray(modes[active]), data, w, bw, flat)
        moved = np.sqrt(((new - modes[active]) ** 2).sum(1))
        modes[active] = new
        active = active[moved >= tol * bw]
    # density at each converged point decides merge priority
    dens = np.zeros(len(modes))
    step = max(1, 4_000_000 // len(data))
    for s in range(0, len(modes), step):
        d2 = _pairwise_sq(modes[s : s + step], data)
        k = (d2 <= bw * bw).astype(float) if flat else np.exp(-0.5 * d2 / (bw * bw))
        dens[s : s + step] = k @ w
    order = np.lexsort(tuple(np.round(modes[:, ::-1].T, 9)) + (-np.round(dens, 9),))
    kept = []
    for i in order:
        if all(((modes[i] - modes[j]) ** 2).sum() > (merge * bw) ** 2 for j in kept):
            kept.append(i)
    centers = _polish(modes[kept], data, w, bw, flat, max_iter)
    kept = []
    for i in range(len(centers)):
        if all(((centers[i] - centers[j]) ** 2).sum() > (merge * bw) ** 2 for j in kept):
            kept.append(i)
    centers = centers[kept]
    if min_size > 0 and len(centers) > 1:
        sizes = np.bincount(np.argmin(_pairwise_sq(modes, centers), axis=1), weights=w, minlength=len(centers))
        big = sizes >= min_size * w.sum()
        big[np.argmax(sizes)] = True
        centers = centers[big]
    centers = centers[np.lexsort(np.round(centers[:, ::-1].T, 9))]
    labels = np.argmin(_pairwise_sq(modes, centers), axis=1)
    sizes = np.bincount(labels, weights=w, minlength=len(centers))
    return ClusterModel(centers + origin, bw, sizes=sizes), labels


def adjusted_rand(a, b):
    """Adjusted Rand index between two labelings."""
    a, b = np.asarray(a), np.asarray(b)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)

    def c2(x):
        return (x * (x - 1) / 2).sum()

    n = len(a)
    idx, ra, rb = c2(table), c2(table.sum(1)), c2(table.sum(0))
    expected = ra * rb / (n * (n - 1) / 2) if n > 1 else 0.0
    top = (ra + rb) / 2
    if top == expected:
        return 1.0
    return float((idx - expected) / (top - expected))


# ---------------------------------------------------------------- pseudo-labels


@dataclass
class LabeledWindows:
    """Non-overlapping windows of a set of sequences with pseudo-labels."""

    frames: np.ndarray = field(repr=False)  # (B, T, H, W) float32
    descriptors: np.ndarray = field(repr=False)
    labels: np.ndarray
    sequence: np.ndarray  # index into ``keys``
    start: np.ndarray
    keys: list  # (subject_id, script) per sequence
    model: ClusterModel = None

    @property
    def subjects(self):
        return np.array([self.keys[i][0] for i in self.sequence])

    @property
    def n_clusters(self):
        return int(len(np.unique(self.labels)))

    def subset(self, mask):
        m = np.asarray(mask)
        return LabeledWindows(self.frames[m], self.descriptors[m], self.labels[m], self.sequence[m], self.start[m],
                              self.keys, self.model)


def windows_of(sequences, stride=WINDOW, size=WINDOW):
    frames, seq_ids, starts = [], [], []
    for k, s in enumerate(sequences):
        for t in window_starts(len(s), size, stride):
            frames.append(s.frames[t : t + size])
            seq_ids.append(k)
            starts.append(t)
    if not frames:
        raise ShapeError(f"no sequence is long enough for a {size}-frame window", dim="frames")
    return np.stack(frames).astype(np.float32), np.array(seq_ids), np.array(starts)


# variation below this share of a feature's RMS size is not treated as structure
SCALE_FLOOR = 0.1
# smallest automatic bandwidth, in standardized descriptor units
MIN_BANDWIDTH = 0.5


def standardize(desc):
    center = desc.mean(axis=0)
    floor = np.maximum(SCALE_FLOOR * np.sqrt((desc**2).mean(axis=0)), 1e-3)
    scale = np.maximum(desc.std(axis=0), floor)
    return (desc - center) / scale, center, scale


def pseudo_label(manifest, bandwidth=0.0, splits=None, stride=WINDOW, kernel="gaussian", min_size=0.02):
    """Cluster every window of the selected sequences; labels are cluster ids.

    ``manifest`` is a DatasetManifest, a path, or a list of sequences.
    Descriptors are standardized per dimension before mean shift; the
    automatic bandwidth never drops below ``MIN_BANDWIDTH``, so a corpus
    without real structure stays one cluster.
    """
    if isinstance(manifest, (str, Path)):
        manifest = DatasetManifest.load(manifest)
    if isinstance(manifest, DatasetManifest):
        entries = manifest.split(*splits) if splits else manifest.entries
        seqs = [e.load() for e in entries]
    else:
        seqs = list(manifest)
    frames, seq_ids, starts = windows_of(seqs, stride)
    desc = describe_windows(frames)
    z, center, scale = standardize(desc)
    if not bandwidth or bandwidth <= 0:
        bandwidth = max(estimate_bandwidth(z), MIN_BANDWIDTH)
    model, labels = mean_shift(z, bandwidth, kernel=kernel, min_size=min_size)
    model.center, model.scale = center, scale
    keys = [(s.subject_id, s.motion_label) for s in seqs]
    log.info("pseudo-labelled %d windows into %d clusters (bandwidth %.3g)", len(labels), model.n_clusters,
             model.bandwidth)
    return LabeledWindows(frames, desc, labels, seq_ids, starts, keys, model)


def export_clusters_csv(path, labeled):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["window_id", "subject_id", "motion", "start", "pseudo_label"])
        for i, (k, t, lab) in enumerate(zip(labeled.sequence, labeled.start, labeled.labels)):
            sid, motion = labeled.keys[k]
            out.writerow([i, sid, motion, int(t), int(lab)])


# ---------------------------------------------------------------- classifier


@dataclass
class ClassifierConfig:
    widths: tuple = (8, 16)
    lr: float = 0.005
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 8
    val_fraction: float = 0.1
    pressure_scale: float = 10.0
    seed: int = 0

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown classifier config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


class WindowClassifier:
    """conv3x3/2 -> ReLU -> pool -> conv3x3 -> ReLU -> pool -> dense -> softmax."""

    def __init__(self, n_classes, cfg=None, in_shape=(WINDOW, 80, 28)):
        self.cfg = cfg or ClassifierConfig()
        self.n_classes = int(n_classes)
        self.in_shape = tuple(in_shape)
        rng = np.random.default_rng(np.random.SeedSequence([self.cfg.seed, 23]))
        c0, h, w = self.in_shape
        c1, c2 = self.cfg.widths
        h1, w1 = ((h - 1) // 2 + 1) // 2, ((w - 1) // 2 + 1) // 2
        h2, w2 = h1 // 2, w1 // 2
        flat = c2 * h2 * w2

        def he(shape, fan):
            return rng.uniform(-1, 1, size=shape) * np.sqrt(6.0 / fan)

        p = OrderedDict()
        p["conv1.w"] = he((c1, c0, 3, 3), c0 * 9)
        p["conv1.b"] = np.zeros(c1)
        p["conv2.w"] = he((c2, c1, 3, 3), c1 * 9)
        p["conv2.b"] = np.zeros(c2)
        p["fc.w"] = he((flat, self.n_classes), flat) * 0.5
        p["fc.b"] = np.zeros(self.n_classes)
        self.params = OrderedDict((k, nx.Tensor(v.astype(np.float32), requires_grad=True, name=k))
                                  for k, v in p.items())

    def logits(self, x):
        p = self.params
        h = nx.Tensor(np.asarray(x, dtype=np.float32)) * (1.0 / self.cfg.pressure_scale)
        h = nx.relu(nx.conv2d(h, p["conv1.w"], p["conv1.b"], stride=2, padding=1))
        h, _ = nx.max_pool2d(h)
        h = nx.relu(nx.conv2d(h, p["conv2.w"], p["conv2.b"], padding=1))
        h, _ = nx.max_pool2d(h)
        return nx.dense(nx.flatten(h), p["fc.w"], p["fc.b"])

    def predict(self, x, batch=128):
        out = [np.argmax(self.logits(x[i : i + batch]).data, axis=1) for i in range(0, len(x), batch)]
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    def state(self):
        return OrderedDict((k, v.data.copy()) for k, v in self.params.items())

    def load_state(self, state):
        for k, v in state.items():
            self.params[k].data = v.copy()


def train_classifier(frames, labels, cfg=None, n_classes=None):
    """Fit a :class:`WindowClassifier`; returns the best-validation model.

    Labels must be integer ids; a 9:1 random split picks the checkpoint
    with the lowest validation cross-entropy.
    """
    cfg = cfg or ClassifierConfig()
    labels = np.asarray(labels, dtype=np.int64)
    frames = np.asarray(frames)
    if len(np.unique(labels)) < 2:
        raise TrainingError("classifier needs at least two classes")
    n_classes = n_classes or int(labels.max()) + 1
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 29]))
    perm = rng.permutation(len(labels))
    n_val = max(1, int(round(cfg.val_fraction * len(labels))))
    val, tr = perm[:n_val], perm[n_val:]
    if tr.size == 0:
        raise TrainingError("too few windows to train a classifier")
    clf = WindowClassifier(n_classes, cfg, frames.shape[1:])
    state = nx.AdamState(lr=cfg.lr)
    best, best_state, since = np.inf, clf.state(), 0
    for _ in range(cfg.max_epochs):
        order = rng.permutation(tr)
        for s in range(0, len(order), cfg.batch_size):
            ids = np.sort(order[s : s + cfg.batch_size])
            for t in clf.params.values():
                t.grad = None
            loss = nx.cross_entropy(clf.logits(frames[ids]), labels[ids])
            nx.backward(loss, list(clf.params.values()))
            nx.adam_step(clf.params, {k: v.grad for k, v in clf.params.items()}, state)
        vl = float(nx.cross_entropy(clf.logits(frames[val]), labels[val]).data)
        if vl < best - 1e-9:
            best, best_state, since = vl, clf.state(), 0
        else:
            since += 1
            if since >= cfg.patience:
                break
    clf.load_state(best_state)
    return clf


def confusion_matrix(pred, labels, classes=None):
    pred, labels = np.asarray(pred), np.asarray(labels)
    classes = np.unique(np.concatenate([labels, pred])) if classes is None else np.asarray(classes)
    idx = {c: i for i, c in enumerate(classes.tolist())}
    m = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, t in zip(pred.tolist(), labels.tolist()):
        m[idx[t], idx[p]] += 1
    return m


def macro_f1(pred, labels):
    """Unweighted mean of per-class F1 over every class seen in either input."""
    pred, labels = np.asarray(pred), np.asarray(labels)
    if pred.shape != labels.shape:
        raise ShapeError(f"{pred.shape} predictions vs {labels.shape} labels", dim="N")
    if labels.size == 0:
        raise ValueError("macro_f1 of empty input")
    m = confusion_matrix(pred, labels)
    tp = np.diag(m).astype(np.float64)
    denom = m.sum(0) + m.sum(1)  # 2tp + fp + fn
    f1 = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    return float(f1.mean())


# ---------------------------------------------------------------- protocol


@dataclass
class HarConfig:
    iterations: int = 10
    bandwidth: float = 0.0
    kernel: str = "gaussian"
    eval_fraction: float = 0.5  # share of real subjects held out per iteration
    synth_bodies: int = 2  # re-rendered bodies per real training sequence
    splits: tuple = ("test",)
    seed: int = 0
    classifier: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown har config keys: {sorted(unknown)}")
        d = dict(d)
        if "splits" in d:
            d["splits"] = tuple(d["splits"])
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["splits"] = list(self.splits)
        return d


@dataclass
class HarReport:
    scores: dict  # column -> list of macro F1 per iteration
    n_clusters: int
    n_windows: int
    bandwidth: float

    def summary(self):
        return {c: (float(np.mean(v)), float(np.std(v))) for c, v in self.scores.items()}

    def to_dict(self):
        return {
            "columns": list(COLUMNS),
            "scores": {c: list(map(float, v)) for c, v in self.scores.items()},
            "summary": {c: {"mean": m, "spread": s} for c, (m, s) in self.summary().items()},
            "iterations": len(next(iter(self.scores.values()))),
            "n_clusters": self.n_clusters,
            "n_windows": self.n_windows,
            "bandwidth": self.bandwidth,
            "reference": {c: {"mean": m, "spread": s} for c, (m, s) in REFERENCE_F1.items()},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self):
        s = self.summary()
        head = "".join(f"{c:>18}" for c in COLUMNS)
        row = "".join(f"{f'{s[c][0]:.3f}±{s[c][1]:.3f}':>18}" for c in COLUMNS)
        return f"{'':<10}{head}\n{'macro F1':<10}{row}"

    def save(self, path):
        path = Path(path)
        path.write_text(self.to_json() + "\n")
        path.with_suffix(".txt").write_text(self.to_text() + "\n")


def _synthesize(seqs, model, n_bodies, seed):
    """Re-render each sequence for ``n_bodies`` random population bodies."""
    if callable(model) and not hasattr(model, "params"):
        fn = model
    else:
        from .model import transfer

        fn = lambda s, a: transfer(s, a, model)  # noqa: E731
    rng = np.random.default_rng(np.random.SeedSequence([seed, 31]))
    out = []
    for k, s in enumerate(seqs):
        for j in range(n_bodies):
            body = sample_attributes(int(rng.integers(2)), 1, rng)[0]
            out.append((k, fn(s, body)))
    return out


def har_protocol(manifest, model, cfg=None, progress=None):
    """Compare classifiers trained on real, synthetic and combined windows.

    The real pool is pseudo-labelled once. Each iteration holds out a
    seeded share of the real subjects for evaluation; the real classifier
    trains on the remaining subjects' windows, the synthetic one on their
    re-rendered windows (labels carried over from the source window), the
    combined one on both. No evaluation subject ever reaches training.
    """
    cfg = cfg or HarConfig()
    if isinstance(manifest, (str, Path)):
        manifest = DatasetManifest.load(manifest)
    if isinstance(model, (str, Path)):
        from .model import TransferNet

        model = TransferNet.load(model)
    entries = manifest.split(*cfg.splits)
    if not entries:
        raise ValueError(f"manifest has no sequences in splits {cfg.splits}")
    seqs = [e.load() for e in entries]
    real = pseudo_label(seqs, cfg.bandwidth, kernel=cfg.kernel)
    n_classes = real.model.n_clusters
    if n_classes < 2:
        raise TrainingError("pseudo-labelling found a single cluster; nothing to classify")
    synth_seqs = _synthesize(seqs, model, cfg.synth_bodies, cfg.seed)
    s_frames, s_seq, s_start = windows_of([s for _, s in synth_seqs])
    s_src = np.array([synth_seqs[i][0] for i in s_seq])
    # synthetic window j of a source sequence copies that source window's label
    lab_of = {(int(k), int(t)): int(l) for k, t, l in zip(real.sequence, real.start, real.labels)}
    s_labels = np.array([lab_of[(int(k), int(t))] for k, t in zip(s_src, s_start)])
    subjects = sorted({s.subject_id for s in seqs})
    if len(subjects) < 2:
        raise ValueError("need at least two real subjects to hold some out")
    ccfg = ClassifierConfig.from_dict(cfg.classifier)
    seq_subject = np.array([s.subject_id for s in seqs])
    scores = {c: [] for c in COLUMNS}
    for it in range(cfg.iterations):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 37, it]))
        n_eval = min(len(subjects) - 1, max(1, int(round(cfg.eval_fraction * len(subjects)))))
        held = set(rng.choice(subjects, size=n_eval, replace=False).tolist())
        r_eval = np.isin(seq_subject[real.sequence], list(held))
        s_train = ~np.isin(seq_subject[s_src], list(held))
        xr, yr = real.frames[~r_eval], real.labels[~r_eval]
        xs, ys = s_frames[s_train], s_labels[s_train]
        xe, ye = real.frames[r_eval], real.labels[r_eval]
        sets = {"Real": (xr, yr), "Synthetic": (xs, ys),
                "Real+Synthetic": (np.concatenate([xr, xs]), np.concatenate([yr, ys]))}
        for col in COLUMNS:
            x, y = sets[col]
            clf = train_classifier(x, y, ClassifierConfig(**{**asdict(ccfg), "seed": ccfg.seed + it}), n_classes)
            scores[col].append(macro_f1(clf.predict(xe), ye))
        if progress:
            progress({"iteration": it + 1, **{c: scores[c][-1] for c in COLUMNS}})
        log.info("iteration %d: %s", it + 1, {c: round(scores[c][-1], 4) for c in COLUMNS})
    return HarReport(scores, n_classes, len(real.labels), real.model.bandwidth)
