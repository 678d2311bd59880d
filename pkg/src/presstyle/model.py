"""Attribute-conditioned encoder-decoder for pressure-window transfer.

Encoder: three (conv3x3 -> BN -> ReLU -> maxpool2x2) blocks over the 30
frames stacked as channels, flatten, dense to 128, concat the source
attributes, dense to the 128-d latent. Decoder: concat target attributes,
dense, reshape to the bottleneck grid, then three (unpool -> conv-transpose
-> BN -> ReLU) blocks that reuse the encoder's pool records. No feature
skips cross from encoder to decoder; only argmax positions do.
"""
import json
import logging
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import numerics as nx
from .data import (
    COLS,
    POOLED_POPULATION,
    ROWS,
    WINDOW,
    DatasetManifest,
    PopulationStats,
    PressureSequence,
    Window,
    normalize_attributes,
    window_starts,
)
from .errors import ShapeError, TrainingError
from .numerics import BatchNormState, Tensor

log = logging.getLogger(__name__)

N_ATTR = 3


@dataclass
class NetConfig:
    widths: tuple = (16, 32, 64)
    latent: int = 128
    frames: int = WINDOW
    rows: int = ROWS
    cols: int = COLS
    lr: float = 0.01
    lr_halve_every: int = 20
    batch_size: int = 64
    max_epochs: int = 500
    patience: int = 50
    steps_per_epoch: int = 8  # None -> one full pass over the training pairs
    val_pairs: int = 128
    val_fraction: float = 0.1
    window_stride: int = 1
    pressure_scale: float = 10.0  # newtons; network works in these units
    content_features: str = "pixel"  # or "encoder"
    out_bn_gamma: float = 0.3  # initial scale of the last batch norm; 1.0 starts far above the data
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) != 3 or min(self.widths) < 1:
            raise ValueError(f"need three positive conv widths, got {self.widths}")
        if self.content_features not in ("pixel", "encoder"):
            raise ValueError(f"content_features must be 'pixel' or 'encoder', got {self.content_features!r}")

    @classmethod
    def reference(cls, **kw):
        """Reference protocol: batch 1028, full passes, 500 epochs, patience 50."""
        return cls(**{"batch_size": 1028, "steps_per_epoch": None, **kw})

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @property
    def bottleneck(self):
        h, w = self.rows, self.cols
        for _ in range(3):
            h, w = h // 2, w // 2
        return self.widths[2], h, w


def _he_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class TransferNet:
    """Parameters, batch-norm buffers and the forward pass."""

    def __init__(self, cfg=None, population=POOLED_POPULATION, params=None):
        self.cfg = cfg or NetConfig()
        self.population = population
        if params is None:
            params = self._init_params()
        self.params = params
        self.bn = {
            name: BatchNormState(params[f"{name}.running_mean"].data, params[f"{name}.running_var"].data)
            for name in self._bn_names()
        }

    @staticmethod
    def _bn_names():
        return ["enc.bn1", "enc.bn2", "enc.bn3", "dec.bn3", "dec.bn2", "dec.bn1"]

    def _init_params(self):
        cfg = self.cfg
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
        dt = np.dtype(cfg.dtype)
        c1, c2, c3 = cfg.widths
        p = OrderedDict()

        def add(name, arr, trainable=True):
            p[name] = Tensor(arr, requires_grad=trainable, name=name)

        chans = [cfg.frames, c1, c2, c3]
        for i in range(3):
            cin, cout = chans[i], chans[i + 1]
            add(f"enc.conv{i + 1}.w", _he_uniform(rng, (cout, cin, 3, 3), cin * 9, dt))
            add(f"enc.conv{i + 1}.b", np.zeros(cout, dt))
            self._add_bn(add, f"enc.bn{i + 1}", cout, dt)
        flat = int(np.prod(cfg.bottleneck))
        add("enc.fc1.w", _he_uniform(rng, (flat, cfg.latent), flat, dt))
        add("enc.fc1.b", np.zeros(cfg.latent, dt))
        add("enc.fc2.w", _he_uniform(rng, (cfg.latent + N_ATTR, cfg.latent), cfg.latent + N_ATTR, dt))
        add("enc.fc2.b", np.zeros(cfg.latent, dt))
        add("dec.fc.w", _he_uniform(rng, (cfg.latent + N_ATTR, flat), cfg.latent + N_ATTR, dt))
        add("dec.fc.b", np.zeros(flat, dt))
        for i in (3, 2, 1):
            cin, cout = chans[i], chans[i - 1]
            add(f"dec.deconv{i}.w", _he_uniform(rng, (cin, cout, 3, 3), cin * 9, dt))
            add(f"dec.deconv{i}.b", np.zeros(cout, dt))
            self._add_bn(add, f"dec.bn{i}", cout, dt, cfg.out_bn_gamma if i == 1 else 1.0)
        add("meta.population", self.population.to_array().astype(dt), False)
        add("meta.pressure_scale", np.array([cfg.pressure_scale], dt), False)
        return p

    @staticmethod
    def _add_bn(add, name, c, dt, gamma=1.0):
        add(f"{name}.gamma", np.full(c, gamma, dt))
        add(f"{name}.beta", np.zeros(c, dt))
        add(f"{name}.running_mean", np.zeros(c, dt), False)
        add(f"{name}.running_var", np.ones(c, dt), False)

    # ------------------------------------------------------------ state

    def trainable(self):
        return OrderedDict((k, v) for k, v in self.params.items() if v.requires_grad)

    def state_dict(self):
        return OrderedDict((k, v.data) for k, v in self.params.items())

    def save(self, path):
        nx.save_params(path, self.state_dict())

    @classmethod
    def from_state(cls, state, cfg=None):
        """Rebuild from a name -> array mapping (e.g. a loaded PTNW file)."""
        widths = tuple(int(state[f"enc.conv{i}.w"].shape[0]) for i in (1, 2, 3))
        base = cfg or NetConfig()
        cfg = replace(
            base,
            widths=widths,
            frames=int(state["enc.conv1.w"].shape[1]),
            latent=int(state["enc.fc1.w"].shape[1]),
            pressure_scale=float(np.asarray(state["meta.pressure_scale"]).ravel()[0]),
            dtype=str(np.asarray(state["enc.conv1.w"]).dtype),
        )
        pop = PopulationStats.from_array(state["meta.population"])
        params = OrderedDict()
        for k, v in state.items():
            trainable = not (k.startswith("meta.") or k.endswith(".running_mean") or k.endswith(".running_var"))
            params[k] = Tensor(np.array(v, dtype=cfg.dtype), requires_grad=trainable, name=k)
        return cls(cfg, pop, params)

    @classmethod
    def load(cls, path, cfg=None):
        return cls.from_state(nx.load_params(path), cfg)

    def copy(self):
        return TransferNet.from_state({k: v.copy() for k, v in self.state_dict().items()}, self.cfg)

    # ------------------------------------------------------------ forward

    def attrs(self, attributes):
        """Normalized (B, 3) attribute matrix for a list of AttributeVectors."""
        return np.stack([normalize_attributes(a, self.population) for a in attributes]).astype(self.cfg.dtype)

    def _conv_block(self, x, i, train):
        p = self.params
        h = nx.conv2d(x, p[f"enc.conv{i}.w"], p[f"enc.conv{i}.b"], padding=1)
        h = nx.batch_norm(h, p[f"enc.bn{i}.gamma"], p[f"enc.bn{i}.beta"], self.bn[f"enc.bn{i}"], train=train)
        return nx.relu(h)

    def encode(self, windows, src_attrs, train=False, features=False):
        """(B, 30, 80, 28) pressure + (B, 3) normalized attrs -> latent (B, 128).

        Returns ``(latent, pool_records)``; with ``features=True`` also the
        first block's activations.
        """
        cfg = self.cfg
        x = windows if isinstance(windows, Tensor) else Tensor(np.asarray(windows, dtype=cfg.dtype))
        if x.ndim == 3:
            x = x.reshape(1, *x.shape)
        if x.shape[1:] != (cfg.frames, cfg.rows, cfg.cols):
            raise ShapeError(
                f"window batch must be (B, {cfg.frames}, {cfg.rows}, {cfg.cols}), got {x.shape}", dim="window"
            )
        a = np.asarray(src_attrs, dtype=cfg.dtype).reshape(x.shape[0], N_ATTR)
        h = x * (1.0 / cfg.pressure_scale)
        records, first = [], None
        for i in (1, 2, 3):
            h = self._conv_block(h, i, train)
            if i == 1:
                first = h
            h, rec = nx.max_pool2d(h)
            records.append(rec)
        p = self.params
        z = nx.relu(nx.dense(nx.flatten(h), p["enc.fc1.w"], p["enc.fc1.b"]))
        z = nx.dense(nx.concat([z, a], axis=1), p["enc.fc2.w"], p["enc.fc2.b"])
        return (z, records, first) if features else (z, records)

    def decode(self, latent, tgt_attrs, records, train=False):
        """Latent (B, 128) + target attrs (B, 3) -> (B, 30, 80, 28) pressure."""
        cfg = self.cfg
        if records is None or len(records) != 3:
            raise ShapeError("decode needs the three pool records from encode", dim="records")
        z = latent if isinstance(latent, Tensor) else Tensor(np.asarray(latent, dtype=cfg.dtype))
        if z.ndim == 1:
            z = z.reshape(1, -1)
        if z.shape[1] != cfg.latent:
            raise ShapeError(f"latent width {z.shape[1]} != {cfg.latent}", dim="latent")
        a = np.asarray(tgt_attrs, dtype=cfg.dtype).reshape(z.shape[0], N_ATTR)
        p = self.params
        h = nx.relu(nx.dense(nx.concat([z, a], axis=1), p["dec.fc.w"], p["dec.fc.b"]))
        h = h.reshape(z.shape[0], *cfg.bottleneck)
        for i in (3, 2, 1):
            rec = records[i - 1]
            h = nx.max_unpool2d(h, rec)
            h = nx.conv2d_transpose(h, p[f"dec.deconv{i}.w"], p[f"dec.deconv{i}.b"], padding=1,
                                    output_size=rec.input_size)
            h = nx.batch_norm(h, p[f"dec.bn{i}.gamma"], p[f"dec.bn{i}.beta"], self.bn[f"dec.bn{i}"], train=train)
            h = nx.relu(h)
        return h * cfg.pressure_scale

    def __call__(self, windows, src_attrs, tgt_attrs, train=False):
        z, records = self.encode(windows, src_attrs, train)
        return self.decode(z, tgt_attrs, records, train)

    def loss(self, src, src_attrs, tgt_attrs, target, train=True):
        out = self(src, src_attrs, tgt_attrs, train)
        if self.cfg.content_features == "pixel":
            return nx.content_loss(out, target)
        _, _, f_gen = self.encode(out, tgt_attrs, train=False, features=True)
        _, _, f_tgt = self.encode(np.asarray(target, dtype=self.cfg.dtype), tgt_attrs, train=False, features=True)
        return nx.content_loss(f_gen, f_tgt.data)


def content_loss(generated, target):
    """Content loss between window batches, as a float."""
    return float(nx.content_loss(np.asarray(generated), np.asarray(target)).data)


# ---------------------------------------------------------------- pairs


@dataclass(frozen=True)
class TrainingPair:
    source: Window
    source_attrs: object
    target: Window
    target_attrs: object
    aligned: bool = True


@dataclass
class PairPool:
    """Aligned windows of every script: frames[s] is (subjects, T, 80, 28).

    A pair id enumerates (script, start, source subject, target subject);
    source and target always share script and start index.
    """

    scripts: list
    frames: list = field(repr=False)
    attrs: list = field(repr=False)  # per script: list of AttributeVector
    starts: list = field(repr=False)

    @classmethod
    def from_manifest(cls, manifest, splits=("train", "val"), stride=1, size=WINDOW, dtype="float32"):
        by_script = OrderedDict()
        for e in manifest.split(*splits):
            by_script.setdefault(e.script, []).append(e)
        scripts, frames, attrs, starts = [], [], [], []
        for script, entries in by_script.items():
            seqs = [e.load() for e in sorted(entries, key=lambda e: e.subject_id)]
            n = min(len(s) for s in seqs)
            st = window_starts(n, size, stride)
            if st.size == 0:
                continue
            scripts.append(script)
            frames.append(np.stack([s.frames[:n] for s in seqs]).astype(dtype))
            attrs.append([s.attributes for s in seqs])
            starts.append(st)
        if not scripts:
            raise TrainingError("no alignable training pairs (need a train sequence of at least one window)")
        return cls(scripts, frames, attrs, starts)

    def _sizes(self):
        return [len(st) * len(a) ** 2 for st, a in zip(self.starts, self.attrs)]

    def __len__(self):
        return int(sum(self._sizes()))

    def decode(self, ids):
        """Pair ids -> (script, start, source, target) index arrays."""
        ids = np.asarray(ids, dtype=np.int64)
        bounds = np.cumsum([0] + self._sizes())
        sc = np.searchsorted(bounds, ids, side="right") - 1
        local = ids - bounds[sc]
        n_sub = np.array([len(a) for a in self.attrs])[sc]
        tgt = local % n_sub
        local //= n_sub
        src = local % n_sub
        local //= n_sub
        start = np.array([self.starts[s][k] for s, k in zip(sc, local)], dtype=np.int64)
        return sc, start, src, tgt

    def batch(self, ids, size=WINDOW):
        sc, start, src, tgt = self.decode(ids)
        xs = np.stack([self.frames[s][i, t : t + size] for s, t, i in zip(sc, start, src)])
        ys = np.stack([self.frames[s][j, t : t + size] for s, t, j in zip(sc, start, tgt)])
        a_src = [self.attrs[s][i] for s, i in zip(sc, src)]
        a_tgt = [self.attrs[s][j] for s, j in zip(sc, tgt)]
        return xs, a_src, ys, a_tgt

    def pair(self, pid, size=WINDOW):
        sc, start, src, tgt = (int(v[0]) for v in self.decode([pid]))
        a, b = self.attrs[sc][src], self.attrs[sc][tgt]
        return TrainingPair(
            Window(self.frames[sc][src, start : start + size], a, start), a,
            Window(self.frames[sc][tgt, start : start + size], b, start), b,
        )


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    model: TransferNet
    history: list
    best_epoch: int
    stopped_early: bool
    seconds: float

    def history_json(self):
        # wall-clock times stay out so the file is reproducible byte for byte
        epochs = [{k: v for k, v in r.items() if k != "seconds"} for r in self.history]
        return json.dumps({"best_epoch": self.best_epoch, "stopped_early": self.stopped_early, "epochs": epochs},
                          indent=2)


def lr_at(cfg, epoch):
    """Learning rate for 0-based ``epoch``: halved every ``lr_halve_every``."""
    return cfg.lr * 0.5 ** (epoch // cfg.lr_halve_every)


def _zero_grads(params):
    for t in params.values():
        t.grad = None


def train(manifest, cfg=None, pool=None, progress=None):
    """Fit a :class:`TransferNet` on aligned cross-subject pairs.

    Pairs are split 9:1 at random into train/validation; each epoch runs
    ``steps_per_epoch`` Adam steps, then scores the validation subset in
    eval mode. Stops after ``patience`` epochs without improvement and
    returns the best-validation model.
    """
    cfg = cfg or NetConfig()
    t0 = time.perf_counter()
    if pool is None:
        if isinstance(manifest, (str, Path)):
            manifest = DatasetManifest.load(manifest, require_train=True)
        pool = PairPool.from_manifest(manifest, stride=cfg.window_stride, size=cfg.frames, dtype=cfg.dtype)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 11]))
    n = len(pool)
    if n < 2:
        raise TrainingError(f"need at least two training pairs, have {n}")
    perm = rng.permutation(n)
    n_val = max(1, int(round(cfg.val_fraction * n)))
    val_ids = np.sort(perm[:n_val][: cfg.val_pairs])
    train_ids = perm[n_val:]
    steps = cfg.steps_per_epoch or max(1, int(np.ceil(len(train_ids) / cfg.batch_size)))
    bs = min(cfg.batch_size, len(train_ids))
    if bs < 2:
        raise TrainingError("batch norm needs at least two training pairs per batch")

    model = TransferNet(cfg)
    params = model.trainable()
    state = nx.AdamState(lr=cfg.lr)
    val_batch = pool.batch(val_ids, cfg.frames)
    order, cursor = rng.permutation(train_ids), 0
    history, best, best_epoch, since = [], np.inf, -1, 0
    best_state = model.state_dict()
    stopped = False
    for epoch in range(cfg.max_epochs):
        state.lr = lr_at(cfg, epoch)
        losses = []
        for _ in range(steps):
            if cursor + bs > len(order):
                order, cursor = rng.permutation(train_ids), 0
            ids = order[cursor : cursor + bs]
            cursor += bs
            xs, a_src, ys, a_tgt = pool.batch(ids, cfg.frames)
            _zero_grads(params)
            loss = model.loss(xs, model.attrs(a_src), model.attrs(a_tgt), ys, train=True)
            nx.backward(loss, list(params.values()))
            nx.adam_step(params, {k: v.grad for k, v in params.items()}, state)
            losses.append(float(loss.data))
        val = evaluate_loss(model, *val_batch)
        rec = {"epoch": epoch + 1, "train_loss": float(np.mean(losses)), "val_loss": val, "lr": state.lr,
               "seconds": round(time.perf_counter() - t0, 3)}
        history.append(rec)
        if progress:
            progress(rec)
        log.info("epoch %d train %.4g val %.4g lr %.3g", epoch + 1, rec["train_loss"], val, state.lr)
        if val < best:
            best, best_epoch, since = val, epoch + 1, 0
            best_state = OrderedDict((k, v.copy()) for k, v in model.state_dict().items())
        else:
            since += 1
            if since >= cfg.patience:
                stopped = True
                break
    best_model = TransferNet.from_state(best_state, cfg)
    return TrainResult(best_model, history, best_epoch, stopped, time.perf_counter() - t0)


def evaluate_loss(model, xs, a_src, ys, a_tgt, batch=64):
    tot, n = 0.0, 0
    for i in range(0, len(xs), batch):
        out = model(xs[i : i + batch], model.attrs(a_src[i : i + batch]), model.attrs(a_tgt[i : i + batch]))
        tot += float(nx.content_loss(out.data, ys[i : i + batch]).data) * len(out.data)
        n += len(out.data)
    return tot / n


# ---------------------------------------------------------------- inference


def transfer(seq, target_attrs, model, stride=WINDOW, batch=32):
    """Re-render ``seq`` for the body ``target_attrs``.

    Windows start every ``stride`` frames, plus one right-aligned window for
    the tail; overlapping predictions are averaged per frame. Output length
    equals input length.
    """
    if isinstance(model, (str, Path)):
        model = TransferNet.load(model)
    size = model.cfg.frames
    n = len(seq)
    if n < size:
        raise ShapeError(f"sequence has {n} frames, transfer needs at least {size}", dim="frames")
    starts = list(range(0, n - size + 1, stride))
    if starts[-1] != n - size:
        starts.append(n - size)
    src_a = model.attrs([seq.attributes])
    tgt_a = model.attrs([target_attrs])
    acc = np.zeros((n, seq.frames.shape[1], seq.frames.shape[2]))
    cnt = np.zeros(n)
    frames = seq.frames.astype(model.cfg.dtype, copy=False)
    for i in range(0, len(starts), batch):
        chunk = starts[i : i + batch]
        xs = np.stack([frames[s : s + size] for s in chunk])
        out = model(xs, np.repeat(src_a, len(chunk), 0), np.repeat(tgt_a, len(chunk), 0)).data
        for s, o in zip(chunk, out):
            acc[s : s + size] += o
            cnt[s : s + size] += 1
    return PressureSequence(acc / cnt[:, None, None], seq.fps, target_attrs, seq.motion_label, seq.subject_id)
