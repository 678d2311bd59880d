"""Procedural ground-pressure generator.

A :class:`MotionScript` is an attribute-free timeline: for every frame, which
body regions touch the mat, where (in body-height units), and what fraction
of body weight each carries. :func:`generate_sequence` renders it for one
body: geometry scales with height, forces with weight.

Mat geometry: 80 x 28 cells at 2 cm pitch (160 x 56 cm), rows along the
walking axis. Region centres snap to cell centres so that a region's cell
count depends only on its size, which keeps contact area monotone in height.
"""
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .data import (
    COLS,
    FEMALE_POPULATION,
    GRAVITY,
    MALE_POPULATION,
    POOLED_POPULATION,
    ROWS,
    AttributeVector,
    DatasetManifest,
    ManifestEntry,
    PressureSequence,
    save_sequence,
)
from .errors import ScriptOutOfGridError

log = logging.getLogger(__name__)

ACTIVITIES = ("walk", "exercise", "freestyle", "act")
CELL_CM = 2.0
HEEL_SHARE = 0.6  # stance load on the heel ellipse; forefoot carries the rest
FOOT_LENGTH = 0.152  # x height
STANCE_HALF = 0.05  # lateral foot offset from the midline, x height
KNEE_AXES = (0.030, 0.024)  # semi-axes along rows / cols, x height


class Contact(NamedTuple):
    kind: str  # "foot" | "knee"
    side: int  # -1 left, +1 right
    fwd: float  # along rows, height units from mat centre
    lat: float  # extra lateral offset, height units
    direction: int  # +1 toes toward higher rows
    load: float  # fraction of body weight
    heel: float = HEEL_SHARE  # heel share of a foot's load


@dataclass
class MotionScript:
    activity: str
    duration: float
    fps: float
    seed: int
    name: str
    frames: list = field(repr=False)  # per frame: tuple of Contact

    @property
    def n_frames(self):
        return len(self.frames)

    def load_fractions(self):
        return np.array([sum(c.load for c in fr) for fr in self.frames])

    def full_support(self, tol=1e-12):
        return np.abs(self.load_fractions() - 1.0) <= tol


# ---------------------------------------------------------------- geometry


def _ellipse(ar, ac):
    """Weights on the integer lattice inside an ellipse with semi-axes
    (ar, ac) cells, centred on a cell; falls off to half at the rim."""
    ir, ic = int(math.floor(ar)), int(math.floor(ac))
    i = np.arange(-ir, ir + 1)[:, None]
    j = np.arange(-ic, ic + 1)[None, :]
    q = (i / ar) ** 2 + (j / ac) ** 2
    w = np.where(q <= 1.0, 1.0 - 0.5 * q, 0.0)
    return w / w.sum()


@lru_cache(maxsize=4096)
def _ellipse_cached(ar, ac):
    w = _ellipse(ar, ac)
    w.flags.writeable = False
    return w


@dataclass(frozen=True)
class FootprintTemplate:
    """Per-cell load weights of one foot, anchored at the heel centre."""

    weights: np.ndarray = field(repr=False)
    origin: tuple  # (row, col) of the heel centre inside ``weights``
    length_cells: float
    width_cells: float

    @property
    def mask(self):
        return self.weights > 0


def foot_size(attrs):
    length = FOOT_LENGTH * attrs.height / CELL_CM
    width = length * (0.38 if attrs.sex == 1 else 0.36)
    return length, width


def _foot_parts(length, width):
    heel = _ellipse_cached(0.16 * length, 0.34 * width)
    fore = _ellipse_cached(0.24 * length, 0.50 * width)
    offset = int(math.floor(0.54 * length + 0.5))
    return heel, fore, offset


def make_footprint(attrs, heel_share=HEEL_SHARE, direction=1):
    length, width = foot_size(attrs)
    heel, fore, off = _foot_parts(length, width)
    hr, fr = heel.shape[0] // 2, fore.shape[0] // 2
    hc, fc = heel.shape[1] // 2, fore.shape[1] // 2
    top = max(hr, fr - off)
    bottom = max(hr, off + fr)
    half_c = max(hc, fc)
    out = np.zeros((top + bottom + 1, 2 * half_c + 1))
    o = (top, half_c)
    out[o[0] - hr : o[0] + hr + 1, o[1] - hc : o[1] + hc + 1] += heel_share * heel
    out[o[0] + off - fr : o[0] + off + fr + 1, o[1] - fc : o[1] + fc + 1] += (1 - heel_share) * fore
    if direction < 0:
        out = out[::-1]
        o = (out.shape[0] - 1 - o[0], o[1])
    return FootprintTemplate(out, o, length, width)


def _snap(x):
    return int(math.floor(x + 0.5))


def _stamp(grid, w, r, c, amount, frame):
    hr, hc = w.shape[0] // 2, w.shape[1] // 2
    if r - hr < 0 or r + hr >= grid.shape[0] or c - hc < 0 or c + hc >= grid.shape[1]:
        raise ScriptOutOfGridError(frame, f"region centred at cell ({r}, {c}) with half-size ({hr}, {hc}) leaves the grid")
    grid[r - hr : r + hr + 1, c - hc : c + hc + 1] += amount * w


def render_contact(grid, contact, attrs, frame):
    """Add one contact's force (newtons) to ``grid`` in place."""
    h = attrs.height
    force = attrs.weight * GRAVITY * contact.load
    mid_r = (ROWS - 1) / 2 + contact.fwd * h / CELL_CM
    mid_c = (COLS - 1) / 2 + (contact.side * STANCE_HALF + contact.lat) * h / CELL_CM
    col = _snap(mid_c)
    if contact.kind == "knee":
        w = _ellipse_cached(KNEE_AXES[0] * h / CELL_CM, KNEE_AXES[1] * h / CELL_CM)
        _stamp(grid, w, _snap(mid_r), col, force, frame)
        return
    length, width = foot_size(attrs)
    heel, fore, off = _foot_parts(length, width)
    d = contact.direction
    heel_r = _snap(mid_r - d * 0.27 * length)
    # bounds are checked for both parts even when one carries no load
    _stamp(grid, heel, heel_r, col, force * contact.heel, frame)
    _stamp(grid, fore, heel_r + d * off, col, force * (1.0 - contact.heel), frame)


def generate_sequence(script, attrs, fps=None, subject_id=""):
    """Render ``script`` for the body ``attrs``.

    Per frame, the grid sum equals weight * g * (sum of contact loads);
    contact geometry scales with height; timing comes from the script alone.
    """
    if fps is not None and float(fps) != float(script.fps):
        raise ValueError(f"script was built at {script.fps} fps, requested {fps}")
    frames = np.zeros((script.n_frames, ROWS, COLS))
    for t, contacts in enumerate(script.frames):
        for c in contacts:
            if c.load > 0:
                render_contact(frames[t], c, attrs, t)
            else:
                render_contact(np.zeros((ROWS, COLS)), c, attrs, t)
    return PressureSequence(frames, float(script.fps), attrs, script.activity, subject_id)


# ---------------------------------------------------------------- scripts


def _smooth(x):
    x = min(max(x, 0.0), 1.0)
    return x * x * (3 - 2 * x)


def roll_heel_share(rho):
    """Heel share over a stance: heel strike, flat stance, toe-off."""
    if rho < 0.2:
        return 1.0 - (1.0 - HEEL_SHARE) * _smooth(rho / 0.2)
    if rho < 0.7:
        return HEEL_SHARE
    return HEEL_SHARE * (1.0 - _smooth((rho - 0.7) / 0.3))


def _stand(fwd=0.0, lat=0.0, split=0.5, heel=HEEL_SHARE, direction=1, total=1.0):
    return (
        Contact("foot", -1, fwd, -lat, direction, total * split, heel),
        Contact("foot", 1, fwd, lat, direction, total * (1 - split), heel),
    )


class _Timeline:
    """Piecewise timeline: segments (t0, t1, fn(tau, dur) -> contacts)."""

    def __init__(self):
        self.segments = []
        self.end = 0.0

    def add(self, dur, fn):
        self.segments.append((self.end, self.end + dur, fn))
        self.end += dur

    def sample(self, duration, fps):
        n = int(round(duration * fps))
        out, k = [], 0
        for i in range(n):
            t = i / fps
            while k < len(self.segments) - 1 and t >= self.segments[k][1]:
                k += 1
            t0, t1, fn = self.segments[k]
            out.append(tuple(fn(t - t0, t1 - t0)))
        return out


def _walk_footfalls(rng, duration):
    """Back-and-forth passes of two steps; each turn is one pivot footfall
    placed beside the last one, facing back."""
    period = rng.uniform(1.0, 1.2)
    step = rng.uniform(0.22, 0.26)
    stance = 0.6 * period
    side = -1 if rng.random() < 0.5 else 1
    x, d = -step, 1
    plan = [(side, x, d)]
    while len(plan) * period / 2 < duration + period:
        for _ in range(2):
            side, x = -side, x + step * d
            plan.append((side, x, d))
        d = -d
        side = -side
        plan.append((side, x, d))
    return [(i * period / 2, i * period / 2 + stance, s, px, dd) for i, (s, px, dd) in enumerate(plan)]


def _walk_contacts(falls):
    def fn(t, _dur):
        active = [f for f in falls if f[0] <= t < f[1]]
        if not active:  # cannot happen with stance > half period
            return ()
        if len(active) == 1:
            loads = [1.0]
        else:
            prev, cur = active
            frac = (prev[1] - t) / (prev[1] - cur[0])
            loads = [frac, 1.0 - frac]
        out = []
        for f, ld in zip(active, loads):
            rho = (t - f[0]) / (f[1] - f[0])
            out.append(Contact("foot", f[2], f[3], 0.0, f[4], ld, roll_heel_share(rho)))
        return out

    return fn


def _walk(rng, duration):
    tl = _Timeline()
    tl.add(duration + 1.0, _walk_contacts(_walk_footfalls(rng, duration)))
    return tl


def _seg_stand(rng):
    amp, cycles = rng.uniform(0.03, 0.1), rng.integers(1, 3)
    return lambda t, d: _stand(split=0.5 + amp * math.sin(2 * math.pi * cycles * t / d))


def _seg_squat(rng):
    depth = rng.uniform(0.2, 0.35)
    return lambda t, d: _stand(heel=HEEL_SHARE + depth * math.sin(2 * math.pi * t / d))


def _seg_lunge(rng, front_side=1):
    reach = rng.uniform(0.16, 0.2)

    def fn(t, d):
        u = t / d
        if u < 0.12 or u >= 0.88:  # swing leg in the air
            return (Contact("foot", -front_side, 0.0, 0.0, 1, 1.0),)
        hold = _smooth((u - 0.12) / 0.15) * _smooth((0.88 - u) / 0.15)
        front = 0.5 * hold + 0.05
        return (
            Contact("foot", -front_side, 0.0, 0.0, 1, 1.0 - front, HEEL_SHARE * (1 - hold)),
            Contact("foot", front_side, reach, 0.0, 1, front, 0.7),
        )

    return fn


def _exercise(rng, duration):
    """In-place squat and lunge sets; lunges alternate the front leg."""
    tl = _Timeline()
    while tl.end < duration + 1.0:
        if rng.random() < 0.5:
            for _ in range(rng.integers(2, 4)):
                tl.add(rng.uniform(1.2, 1.8), _seg_squat(rng))
        else:
            side = 1 if rng.random() < 0.5 else -1
            for _ in range(rng.integers(2, 4)):
                tl.add(rng.uniform(2.0, 2.6), _seg_lunge(rng, side))
                side = -side
    return tl


def _seg_shuffle(rng):
    amp = rng.uniform(0.015, 0.03)
    n = rng.integers(2, 4)

    def fn(t, d):
        phase = (t / d) * n
        k, u = int(phase), phase - int(phase)
        lat = amp * (1 if k % 2 == 0 else -1)
        if u < 0.25:  # trailing foot lifted
            return (Contact("foot", 1, 0.0, lat, 1, 1.0, 0.5),)
        return (
            Contact("foot", -1, 0.0, lat, 1, 0.5, 0.5),
            Contact("foot", 1, 0.0, lat, 1, 0.5, 0.5),
        )

    return fn


def _seg_hop(rng):
    side = 1 if rng.random() < 0.5 else -1
    x = rng.uniform(-0.08, 0.08)
    n = rng.integers(3, 6)

    def fn(t, d):
        u = ((t / d) * n) % 1.0
        if u >= 0.6:
            return ()
        ramp = min(1.0, u / 0.1, (0.6 - u) / 0.1)
        return (Contact("foot", side, x, -side * 0.03, 1, max(ramp, 1e-3), 0.2),)

    return fn


def _seg_pivot(rng):
    n = rng.integers(2, 4)
    start = 1 if rng.random() < 0.5 else -1

    def fn(t, d):
        phase = (t / d) * n
        k, u = int(phase), phase - int(phase)
        dirn = start if k % 2 == 0 else -start
        if u < 0.3:
            return (Contact("foot", -1, 0.0, 0.0, -dirn, 1.0, 0.3),)
        return _stand(direction=dirn, heel=0.4)

    return fn


def _freestyle(rng, duration):
    tl = _Timeline()
    prims = {"shuffle": _seg_shuffle, "hop": _seg_hop, "pivot": _seg_pivot}
    names = list(prims)
    while tl.end < duration + 1.0:
        name = names[rng.integers(len(names))]
        tl.add(rng.uniform(1.0, 2.5), prims[name](rng))
    return tl


def _kneel_contacts(side, depth, heel_lead=HEEL_SHARE):
    """Kneeling on ``side``: knee + toes of that leg, other foot planted ahead."""
    knee_x, lead_x = -0.04, 0.13
    toe_x = knee_x - 0.22
    return (
        Contact("foot", -side, lead_x, 0.0, 1, 1.0 - depth * 0.6, heel_lead),
        Contact("knee", side, knee_x, 0.0, 1, depth * 0.45),
        Contact("foot", side, toe_x, 0.0, 1, depth * 0.15, 0.0),
    )


def _act(rng, duration):
    """Stand, step back into a kneel, hold, rise; the kneeling leg alternates."""
    tl = _Timeline()
    side = 1 if rng.random() < 0.5 else -1
    while tl.end < duration + 1.0:
        tl.add(rng.uniform(0.3, 0.6), _seg_stand(rng))
        tl.add(rng.uniform(0.8, 1.2), lambda t, d, s=side: _kneel_contacts(s, max(_smooth(t / d), 1e-3)))
        tl.add(rng.uniform(2.0, 3.5), lambda t, d, s=side: _kneel_contacts(s, 1.0, 0.5 + 0.1 * math.sin(4 * t)))
        tl.add(rng.uniform(0.8, 1.2), lambda t, d, s=side: _kneel_contacts(s, max(_smooth(1 - t / d), 1e-3)))
        side = -side
    return tl


_BUILDERS = {"walk": _walk, "exercise": _exercise, "freestyle": _freestyle, "act": _act}


def make_script(activity, duration=10.0, fps=60.0, seed=0, name=None):
    """Build a motion timeline. Same arguments -> same timeline."""
    if activity not in _BUILDERS:
        raise ValueError(f"unknown activity {activity!r}; choose from {ACTIVITIES}")
    rng = np.random.default_rng(seed)
    tl = _BUILDERS[activity](rng, duration)
    return MotionScript(activity, float(duration), float(fps), int(seed), name or activity, tl.sample(duration, fps))


# ---------------------------------------------------------------- corpus


def sample_attributes(sex, n, rng):
    """Draw ``n`` bodies from the sex's Gaussian population, truncated at 3 spreads."""
    pop = MALE_POPULATION if sex == 1 else FEMALE_POPULATION

    def draw(g):
        out = np.empty(n)
        filled = 0
        while filled < n:
            v = rng.normal(g.mean, g.std, size=n - filled)
            v = v[np.abs(v - g.mean) <= 3 * g.std]
            out[filled : filled + v.size] = v
            filled += v.size
        return out

    heights, weights = draw(pop.height), draw(pop.weight)
    return [AttributeVector(sex, round(float(w), 3), round(float(h), 3)) for w, h in zip(weights, heights)]


@dataclass
class GenerationConfig:
    activities: tuple = ACTIVITIES
    subjects_per_sex: int = 8
    test_subjects_per_sex: int = 0
    unseen_scripts: bool = False
    seed: int = 0
    fps: float = 60.0
    duration: float = 10.0

    def __post_init__(self):
        self.activities = tuple(self.activities)
        bad = [a for a in self.activities if a not in ACTIVITIES]
        if bad:
            raise ValueError(f"unknown activities {bad}")
        if self.subjects_per_sex < 1:
            raise ValueError("subjects_per_sex must be >= 1")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown generation config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        d = asdict(self)
        d["activities"] = list(self.activities)
        return d


def script_seed(seed, activity, variant):
    return int(np.random.SeedSequence([seed, ACTIVITIES.index(activity), variant]).generate_state(1)[0])


def corpus_scripts(cfg):
    """Seen scripts (``walk1`` ...) and, optionally, unseen ones (``walk2`` ...)."""
    seen = [make_script(a, cfg.duration, cfg.fps, script_seed(cfg.seed, a, 1), f"{a}1") for a in cfg.activities]
    unseen = []
    if cfg.unseen_scripts:
        unseen = [make_script(a, cfg.duration, cfg.fps, script_seed(cfg.seed, a, 2), f"{a}2") for a in cfg.activities]
    return seen, unseen


def corpus_subjects(cfg):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 99]))
    subjects = []
    for prefix, n, split in (("", cfg.subjects_per_sex, "train"), ("T", cfg.test_subjects_per_sex, "test")):
        for sex, tag in ((1, "M"), (0, "F")):
            for i, a in enumerate(sample_attributes(sex, n, rng)):
                subjects.append((f"{prefix}{tag}{i + 1:02d}", a, split))
    return subjects


def generate_corpus(cfg, out_dir, threads=1):
    """Write one ``.pseq`` per (subject, script) and ``manifest.json``.

    Train subjects perform the seen scripts; test subjects perform seen and
    unseen scripts. Every subject replays the identical timeline of a script.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seen, unseen = corpus_scripts(cfg)
    jobs = []
    for sid, attrs, split in corpus_subjects(cfg):
        for script in seen + (unseen if split == "test" else []):
            jobs.append((sid, attrs, split, script))

    def run(job):
        sid, attrs, split, script = job
        path = out_dir / f"{script.name}_{sid}.pseq"
        save_sequence(path, generate_sequence(script, attrs, subject_id=sid))
        return ManifestEntry(path.resolve(), sid, attrs, script.activity, split, script.name)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            entries = list(ex.map(run, jobs))
    else:
        entries = [run(j) for j in jobs]
    meta = {
        "generator": cfg.to_dict(),
        "population": POOLED_POPULATION.to_array().tolist(),
        "unseen_scripts": [s.name for s in unseen],
    }
    manifest = DatasetManifest(entries, meta)
    manifest.save(out_dir / "manifest.json")
    log.info("wrote %d sequences to %s", len(entries), out_dir)
    return manifest
