"""Pressure sequences, body attributes, windows and on-disk formats.

``.pseq`` layout (little-endian)::

    b"PSEQ" | u16 version | u16 rows | u16 cols | u32 frames | f32 fps |
    u8 sex | f32 weight_kg | f32 height_cm | u16 label_len | utf-8 label |
    frames x rows x cols f32, row-major

Cell values are newtons of normal force.
"""
import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    AttributeRangeError,
    BadMagicError,
    FormatError,
    ManifestError,
    NegativeCellError,
    ShapeError,
    TruncatedPayloadError,
    VersionMismatchError,
)

ROWS, COLS = 80, 28
GRAVITY = 9.81
WINDOW = 30

PSEQ_MAGIC = b"PSEQ"
PSEQ_VERSION = 1
_HEAD = struct.Struct("<4sHHHIf")
_ATTR = struct.Struct("<Bff")

SPLITS = ("train", "val", "test")


class ShortSequenceWarning(UserWarning):
    pass


def parse_sex(value):
    if isinstance(value, str):
        v = value.strip().lower()
        if v in ("m", "male", "1"):
            return 1
        if v in ("f", "female", "0"):
            return 0
        raise AttributeRangeError(f"unknown sex {value!r}")
    if value in (0, 1):
        return int(value)
    raise AttributeRangeError(f"sex must be 0 (female) or 1 (male), got {value!r}")


@dataclass(frozen=True)
class AttributeVector:
    sex: int  # 0 female, 1 male
    weight: float  # kg
    height: float  # cm

    def __post_init__(self):
        object.__setattr__(self, "sex", parse_sex(self.sex))
        object.__setattr__(self, "weight", float(self.weight))
        object.__setattr__(self, "height", float(self.height))
        if not 20 < self.weight < 300:
            raise AttributeRangeError(f"weight {self.weight} kg outside (20, 300)")
        if not 50 < self.height < 250:
            raise AttributeRangeError(f"height {self.height} cm outside (50, 250)")

    def as_array(self):
        return np.array([self.sex, self.weight, self.height], dtype=np.float64)

    def to_dict(self):
        return {"sex": self.sex, "weight": self.weight, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        return cls(d["sex"], d["weight"], d["height"])


@dataclass(frozen=True)
class Gaussian:
    mean: float
    std: float


@dataclass(frozen=True)
class PopulationStats:
    """Location/spread used to z-score weight and height."""

    weight: Gaussian
    height: Gaussian

    def __post_init__(self):
        if self.weight.std <= 0 or self.height.std <= 0:
            raise ValueError("population spreads must be positive")

    @classmethod
    def pooled(cls, *groups):
        """Equal-mixture statistics of several populations."""
        def mix(parts):
            mu = sum(p.mean for p in parts) / len(parts)
            var = sum(p.std**2 + (p.mean - mu) ** 2 for p in parts) / len(parts)
            return Gaussian(mu, math.sqrt(var))

        return cls(mix([g.weight for g in groups]), mix([g.height for g in groups]))

    def to_array(self):
        return np.array([self.weight.mean, self.weight.std, self.height.mean, self.height.std])

    @classmethod
    def from_array(cls, a):
        a = [float(v) for v in np.asarray(a).ravel()]
        return cls(Gaussian(a[0], a[1]), Gaussian(a[2], a[3]))


MALE_POPULATION = PopulationStats(weight=Gaussian(75.0, 10.0), height=Gaussian(175.0, 15.0))
FEMALE_POPULATION = PopulationStats(weight=Gaussian(65.0, 10.0), height=Gaussian(165.0, 15.0))
POOLED_POPULATION = PopulationStats.pooled(MALE_POPULATION, FEMALE_POPULATION)


def normalize_attributes(attrs, pop=POOLED_POPULATION):
    """(sex, weight, height) -> (sex, z_weight, z_height)."""
    if pop.weight.std == 0 or pop.height.std == 0:
        raise ValueError("population spread is zero")
    return np.array(
        [attrs.sex, (attrs.weight - pop.weight.mean) / pop.weight.std, (attrs.height - pop.height.mean) / pop.height.std]
    )


def denormalize_attributes(vec, pop=POOLED_POPULATION):
    sex, zw, zh = (float(v) for v in vec)
    return AttributeVector(int(round(sex)), zw * pop.weight.std + pop.weight.mean, zh * pop.height.std + pop.height.mean)


@dataclass(eq=False)
class PressureSequence:
    frames: np.ndarray  # (T, 80, 28) newtons
    fps: float
    attributes: AttributeVector
    motion_label: str
    subject_id: str = ""

    def __post_init__(self):
        f = np.asarray(self.frames)
        if not np.issubdtype(f.dtype, np.floating):
            f = f.astype(np.float64)
        if f.ndim != 3 or f.shape[1:] != (ROWS, COLS):
            raise ShapeError(f"frames must be (T, {ROWS}, {COLS}), got {f.shape}", dim="frames")
        if not np.all(np.isfinite(f)):
            raise ValueError("pressure frames contain non-finite values")
        if f.size and f.min() < 0:
            raise NegativeCellError(f"negative pressure cell ({f.min()})")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        self.frames = f

    def __len__(self):
        return self.frames.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PressureSequence):
            return NotImplemented
        return (
            self.fps == other.fps
            and self.attributes == other.attributes
            and self.motion_label == other.motion_label
            and self.frames.shape == other.frames.shape
            and np.array_equal(self.frames, other.frames)
        )

    def total_force(self):
        return self.frames.sum(axis=(1, 2))

    def replace(self, **kw):
        d = dict(frames=self.frames, fps=self.fps, attributes=self.attributes,
                 motion_label=self.motion_label, subject_id=self.subject_id)
        d.update(kw)
        return PressureSequence(**d)


@dataclass(frozen=True)
class Window:
    frames: np.ndarray = field(repr=False)  # (30, 80, 28)
    attributes: AttributeVector
    start: int


def window_starts(length, size=WINDOW, stride=1):
    if length < size:
        return np.zeros(0, dtype=np.int64)
    return np.arange(0, length - size + 1, stride, dtype=np.int64)


def make_windows(seq, size=WINDOW, stride=1):
    """Consecutive ``size``-frame windows ordered by start index.

    A sequence shorter than ``size`` yields an empty list and a
    :class:`ShortSequenceWarning`.
    """
    if len(seq) < size:
        warnings.warn(f"sequence of {len(seq)} frames is shorter than window {size}", ShortSequenceWarning, stacklevel=2)
        return []
    return [Window(seq.frames[s : s + size], seq.attributes, int(s)) for s in window_starts(len(seq), size, stride)]


def header_size(motion_label):
    return _HEAD.size + _ATTR.size + 2 + len(motion_label.encode("utf-8"))


def dumps_sequence(seq):
    label = seq.motion_label.encode("utf-8")
    t, r, c = seq.frames.shape
    a = seq.attributes
    frames = np.ascontiguousarray(seq.frames, dtype="<f4")
    if frames.size and frames.min() < 0:
        raise NegativeCellError("negative pressure cell")
    return b"".join(
        [
            _HEAD.pack(PSEQ_MAGIC, PSEQ_VERSION, r, c, t, seq.fps),
            _ATTR.pack(a.sex, a.weight, a.height),
            struct.pack("<H", len(label)),
            label,
            frames.tobytes(),
        ]
    )


def loads_sequence(buf, subject_id=""):
    if len(buf) < 4 or buf[:4] != PSEQ_MAGIC:
        raise BadMagicError("not a .pseq file")
    if len(buf) < _HEAD.size + _ATTR.size + 2:
        raise TruncatedPayloadError("truncated .pseq header")
    _, version, rows, cols, count, fps = _HEAD.unpack_from(buf, 0)
    if version != PSEQ_VERSION:
        raise VersionMismatchError(f".pseq version {version}, expected {PSEQ_VERSION}")
    if (rows, cols) != (ROWS, COLS):
        raise FormatError(f"grid {rows}x{cols} is not {ROWS}x{COLS}")
    pos = _HEAD.size
    sex, weight, height = _ATTR.unpack_from(buf, pos)
    pos += _ATTR.size
    (nlabel,) = struct.unpack_from("<H", buf, pos)
    pos += 2
    if len(buf) < pos + nlabel:
        raise TruncatedPayloadError("truncated motion label")
    label = bytes(buf[pos : pos + nlabel]).decode("utf-8")
    pos += nlabel
    need = count * rows * cols * 4
    if len(buf) - pos < need:
        raise TruncatedPayloadError(f"payload holds {len(buf) - pos} bytes, header declares {need}")
    if len(buf) - pos > need:
        raise FormatError(f"{len(buf) - pos - need} trailing bytes after frames")
    frames = np.frombuffer(buf, dtype="<f4", count=count * rows * cols, offset=pos).reshape(count, rows, cols)
    if frames.size and frames.min() < 0:
        raise NegativeCellError("file contains a negative pressure cell")
    return PressureSequence(frames.astype(np.float32), float(fps), AttributeVector(sex, weight, height), label, subject_id)


def save_sequence(path, seq):
    Path(path).write_bytes(dumps_sequence(seq))


def load_sequence(path, subject_id=""):
    return loads_sequence(Path(path).read_bytes(), subject_id)


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    subject_id: str
    attributes: AttributeVector
    motion_label: str
    split: str
    script: str = ""

    def load(self):
        return load_sequence(self.path, self.subject_id)

    def to_dict(self, root=None):
        p = Path(self.path)
        if root is not None:
            try:
                p = p.relative_to(root)
            except ValueError:
                pass
        return {
            "path": p.as_posix(),
            "subject_id": self.subject_id,
            "attributes": self.attributes.to_dict(),
            "motion_label": self.motion_label,
            "script": self.script or self.motion_label,
            "split": self.split,
        }


@dataclass
class DatasetManifest:
    entries: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for e in self.entries:
            if e.split not in SPLITS:
                raise ManifestError(f"unknown split tag {e.split!r} for {e.path}")

    def split(self, *tags):
        return [e for e in self.entries if e.split in tags]

    def subjects(self, *tags):
        out = []
        for e in self.split(*tags) if tags else self.entries:
            if e.subject_id not in out:
                out.append(e.subject_id)
        return out

    def scripts(self, *tags):
        out = []
        for e in self.split(*tags) if tags else self.entries:
            if e.script not in out:
                out.append(e.script)
        return out

    def check_files(self):
        missing = [str(e.path) for e in self.entries if not Path(e.path).is_file()]
        if missing:
            raise ManifestError(f"{len(missing)} manifest file(s) missing, first: {missing[0]}")

    def to_json(self, root=None):
        return json.dumps(
            {"format": "presstyle-manifest", "version": 1, "meta": self.meta,
             "entries": [e.to_dict(root) for e in self.entries]},
            indent=2,
            sort_keys=True,
        )

    def save(self, path):
        path = Path(path)
        path.write_text(self.to_json(root=path.parent.resolve()) + "\n")

    @classmethod
    def load(cls, path, require_train=False):
        """Read a manifest; relative paths resolve against its directory.

        Missing sequence files raise :class:`ManifestError`.
        """
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
        root = path.parent.resolve()
        entries = []
        for d in doc.get("entries", []):
            p = Path(d["path"])
            entries.append(
                ManifestEntry(
                    path=p if p.is_absolute() else root / p,
                    subject_id=str(d["subject_id"]),
                    attributes=AttributeVector.from_dict(d["attributes"]),
                    motion_label=d["motion_label"],
                    split=d["split"],
                    script=d.get("script", d["motion_label"]),
                )
            )
        man = cls(entries, doc.get("meta", {}))
        man.check_files()
        if require_train and not man.split("train"):
            raise ManifestError(f"manifest {path} has no train entries")
        return man
