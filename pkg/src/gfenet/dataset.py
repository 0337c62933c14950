"""Landmark-frame datasets: parsing the UCI text layout, validation and a synthetic generator."""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

N_POINTS = 100
N_COORDS = 3 * N_POINTS

# inclusive attribute-index ranges, canonical region order
REGIONS: tuple[tuple[str, int, int], ...] = (
    ("LeftEye", 0, 7),
    ("RightEye", 8, 15),
    ("LeftEyebrow", 16, 25),
    ("RightEyebrow", 26, 35),
    ("Nose", 36, 47),
    ("Mouth", 48, 67),
    ("FaceContour", 68, 86),
    ("IrisesAndNoseTip", 87, 89),
    ("LineAboveLeftEyebrow", 90, 94),
    ("LineAboveRightEyebrow", 95, 99),
)
REGION_NAMES = tuple(r[0] for r in REGIONS)


class DatasetError(Exception):
    pass


class MalformedLine(DatasetError):
    def __init__(self, line: int, reason: str = ""):
        self.line = line
        super().__init__(f"malformed line {line}" + (f": {reason}" if reason else ""))


class EmptyFile(DatasetError):
    pass


class InvalidLabel(DatasetError):
    def __init__(self, line: int, token: str):
        self.line = line
        self.token = token
        super().__init__(f"invalid label {token!r} on line {line}")


class LengthMismatch(DatasetError):
    def __init__(self, n_frames: int, n_labels: int):
        self.n_frames = n_frames
        self.n_labels = n_labels
        super().__init__(f"{n_frames} frames but {n_labels} labels")


class InvalidRegion(DatasetError):
    pass


class MarkerClass(enum.Enum):
    """The nine grammatical markers, in canonical order.

    ``value`` is the file-name token used by the UCI distribution.
    """

    ASSERTION = "affirmative"
    YES_NO_QUESTION = "yn_question"
    NEGATIVE = "negative"
    TOPIC = "topics"
    CONDITIONAL = "conditional"
    DOUBT_QUESTION = "doubt_question"
    FOCUS = "emphasis"
    RELATIVE = "relative"
    WH_QUESTION = "wh_question"

    @property
    def index(self) -> int:
        return list(MarkerClass).index(self)

    @property
    def label(self) -> str:
        return _DISPLAY[self]

    @classmethod
    def parse(cls, name: str) -> "MarkerClass":
        key = re.sub(r"[^a-z]", "", name.lower())
        try:
            return _ALIASES[key]
        except KeyError:
            raise ValueError(f"unknown marker {name!r}") from None


_DISPLAY = {
    MarkerClass.ASSERTION: "Assertion",
    MarkerClass.YES_NO_QUESTION: "Yes/no question",
    MarkerClass.NEGATIVE: "Negative",
    MarkerClass.TOPIC: "Topic",
    MarkerClass.CONDITIONAL: "Conditional",
    MarkerClass.DOUBT_QUESTION: "Doubt question",
    MarkerClass.FOCUS: "Focus",
    MarkerClass.RELATIVE: "Relative",
    MarkerClass.WH_QUESTION: "Wh question",
}

_ALIASES: dict[str, MarkerClass] = {}
for _m in MarkerClass:
    for _alias in (_m.name, _m.value, _DISPLAY[_m]):
        _ALIASES[re.sub(r"[^a-z]", "", _alias.lower())] = _m
_ALIASES.update(
    {
        "assertion": MarkerClass.ASSERTION,
        "affirmative": MarkerClass.ASSERTION,
        "yesno": MarkerClass.YES_NO_QUESTION,
        "yn": MarkerClass.YES_NO_QUESTION,
        "topic": MarkerClass.TOPIC,
        "doubt": MarkerClass.DOUBT_QUESTION,
        "focus": MarkerClass.FOCUS,
        "emphasis": MarkerClass.FOCUS,
        "wh": MarkerClass.WH_QUESTION,
    }
)

USERS = ("a", "b")


@dataclass(frozen=True)
class LandmarkFrame:
    timestamp: float
    coords: tuple[float, ...]

    def __post_init__(self):
        if len(self.coords) != N_COORDS:
            raise ValueError(f"expected {N_COORDS} coords, got {len(self.coords)}")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("non-finite coordinate")
        if not (np.isfinite(self.timestamp) and self.timestamp >= 0):
            raise ValueError(f"bad timestamp {self.timestamp}")


@dataclass(frozen=True, eq=False)
class MarkerDataset:
    """Frames with labels, stored column-wise.

    ``marker`` is a single marker for a binary dataset, or a tuple of markers
    for a pooled multiclass set where label ``i`` means ``marker[i]``.
    """

    marker: MarkerClass | tuple[MarkerClass, ...]
    user: str
    timestamps: np.ndarray
    coords: np.ndarray
    labels: np.ndarray
    n_classes: int = 2

    def __post_init__(self):
        ts = np.array(self.timestamps, dtype=np.float64).reshape(-1)
        xs = np.array(self.coords, dtype=np.float64).reshape(-1, N_COORDS)
        ys = np.array(self.labels, dtype=np.int64).reshape(-1)
        if not (len(ts) == len(xs) == len(ys)):
            raise LengthMismatch(len(xs), len(ys))
        if len(ys) and (ys.min() < 0 or ys.max() >= self.n_classes):
            raise ValueError(f"labels outside 0..{self.n_classes - 1}")
        if not np.all(np.isfinite(xs)):
            raise ValueError("non-finite coordinate")
        for a in (ts, xs, ys):
            a.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "coords", xs)
        object.__setattr__(self, "labels", ys)

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MarkerDataset):
            return NotImplemented
        return (
            self.marker == other.marker
            and self.user == other.user
            and self.n_classes == other.n_classes
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.coords, other.coords)
            and np.array_equal(self.labels, other.labels)
        )

    @property
    def frames(self) -> list[LandmarkFrame]:
        return [LandmarkFrame(float(t), tuple(map(float, c))) for t, c in zip(self.timestamps, self.coords)]

    def subset(self, idx) -> "MarkerDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return MarkerDataset(
            self.marker, self.user, self.timestamps[idx], self.coords[idx], self.labels[idx], self.n_classes
        )

    def with_coords(self, coords: np.ndarray) -> "MarkerDataset":
        return MarkerDataset(self.marker, self.user, self.timestamps, coords, self.labels, self.n_classes)

    @property
    def name(self) -> str:
        markers = self.marker if isinstance(self.marker, tuple) else (self.marker,)
        return f"{self.user}_" + "+".join(m.value for m in markers)


# -- parsing ----------------------------------------------------------------

_SPLIT = re.compile(r"[,\s]+")


def _tokens(line: str) -> list[str]:
    return [t for t in _SPLIT.split(line.strip()) if t]


def parse_datapoints_file(text: str) -> list[LandmarkFrame]:
    ts, xs = parse_datapoints_array(text)
    return [LandmarkFrame(float(t), tuple(map(float, c))) for t, c in zip(ts, xs)]


def parse_datapoints_array(text: str) -> tuple[np.ndarray, np.ndarray]:
    """Parse a datapoints file into ``(timestamps, coords)`` arrays.

    The first line is a column header and is skipped. Line numbers in errors
    are 1-based file lines.
    """
    lines = text.splitlines()
    if not lines:
        raise EmptyFile("empty datapoints file")
    ts: list[float] = []
    rows: list[list[float]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        toks = _tokens(line)
        if not toks:
            continue
        if len(toks) != N_COORDS + 1:
            raise MalformedLine(lineno, f"expected {N_COORDS + 1} fields, got {len(toks)}")
        try:
            vals = [float(t) for t in toks]
        except ValueError as exc:
            raise MalformedLine(lineno, str(exc)) from None
        if not all(np.isfinite(vals)) or vals[0] < 0:
            raise MalformedLine(lineno, "non-finite value or negative timestamp")
        ts.append(vals[0])
        rows.append(vals[1:])
    if not rows:
        raise EmptyFile("no data lines")
    return np.array(ts), np.array(rows)


def parse_targets_file(text: str) -> list[int]:
    labels = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tok = line.strip()
        if not tok:
            continue
        if tok not in ("0", "1"):
            raise InvalidLabel(lineno, tok)
        labels.append(int(tok))
    return labels


def serialize_datapoints(frames: Iterable[LandmarkFrame]) -> str:
    """Inverse of :func:`parse_datapoints_file` (floats written with ``repr``)."""
    header = " ".join(["timestamp"] + [f"{i}{a}" for i in range(N_POINTS) for a in "xyz"])
    lines = [header]
    for f in frames:
        lines.append(" ".join(repr(float(v)) for v in (f.timestamp, *f.coords)))
    return "\n".join(lines) + "\n"


def serialize_targets(labels: Iterable[int]) -> str:
    return "".join(f"{int(y)}\n" for y in labels)


def load_marker_dataset(datapoints_path, targets_path, marker: MarkerClass, user: str) -> MarkerDataset:
    ts, xs = parse_datapoints_array(Path(datapoints_path).read_text())
    ys = parse_targets_file(Path(targets_path).read_text())
    if len(ys) != len(ts):
        raise LengthMismatch(len(ts), len(ys))
    return MarkerDataset(marker, user, ts, xs, np.array(ys, dtype=np.int64))


def dataset_summary(dataset: MarkerDataset) -> tuple[int, int, int]:
    pos = int(np.sum(dataset.labels == 1))
    total = len(dataset)
    return pos, total - pos, total


def concat_datasets(parts: Sequence[MarkerDataset], user: str | None = None) -> MarkerDataset:
    first = parts[0]
    return MarkerDataset(
        first.marker,
        user or first.user,
        np.concatenate([p.timestamps for p in parts]),
        np.concatenate([p.coords for p in parts]),
        np.concatenate([p.labels for p in parts]),
        first.n_classes,
    )


# -- discovery --------------------------------------------------------------

MANIFEST_NAME = "manifest.json"


@dataclass
class DatasetFiles:
    user: str
    marker: MarkerClass
    datapoints: Path
    targets: Path


def discover(data_root) -> list[DatasetFiles]:
    """Find ``<user>_<marker>_datapoints.txt`` / ``_targets.txt`` pairs.

    A ``manifest.json`` in the root maps ``"<user>_<marker>"`` to
    ``{"datapoints": ..., "targets": ...}`` and overrides the convention.
    """
    root = Path(data_root)
    found: dict[tuple[str, MarkerClass], DatasetFiles] = {}
    if not root.is_dir():
        return []
    for user in USERS:
        for m in MarkerClass:
            dp = root / f"{user}_{m.value}_datapoints.txt"
            tg = root / f"{user}_{m.value}_targets.txt"
            if dp.exists() and tg.exists():
                found[(user, m)] = DatasetFiles(user, m, dp, tg)
    manifest = root / MANIFEST_NAME
    if manifest.exists():
        for key, entry in json.loads(manifest.read_text()).items():
            user, _, mname = key.partition("_")
            m = MarkerClass.parse(mname)
            found[(user, m)] = DatasetFiles(user, m, root / entry["datapoints"], root / entry["targets"])
    return [found[k] for k in sorted(found, key=lambda k: (k[0], k[1].index))]


def load_user_marker(data_root, marker: MarkerClass, user: str) -> MarkerDataset:
    """Load one marker for user ``a``, ``b`` or the pooled pseudo-user ``ab``."""
    users = list(user) if user == "ab" else [user]
    files = {(f.user, f.marker): f for f in discover(data_root)}
    parts = []
    for u in users:
        f = files.get((u, marker))
        if f is None:
            raise FileNotFoundError(f"no dataset for user {u!r}, marker {marker.value!r} under {data_root}")
        parts.append(load_marker_dataset(f.datapoints, f.targets, marker, u))
    return concat_datasets(parts, user=user)


# -- synthetic data ---------------------------------------------------------


def region_coord_indices(region: int) -> np.ndarray:
    if not 0 <= region < len(REGIONS):
        raise InvalidRegion(f"region index {region} outside 0..{len(REGIONS) - 1}")
    _, lo, hi = REGIONS[region]
    return np.arange(3 * lo, 3 * hi + 3)


def _region_index(region) -> int:
    if isinstance(region, str):
        if region not in REGION_NAMES:
            raise InvalidRegion(f"unknown region {region!r}")
        return REGION_NAMES.index(region)
    region = int(region)
    if not 0 <= region < len(REGIONS):
        raise InvalidRegion(f"region index {region} outside 0..{len(REGIONS) - 1}")
    return region


@dataclass(frozen=True)
class SyntheticSpec:
    # base face template: x/y in pixels, z in mm
    xy_center: float = 320.0
    xy_spread: float = 60.0
    z_center: float = 700.0
    z_spread: float = 40.0
    xy_noise: float = 4.0
    z_noise: float = 8.0
    # positive-class offset on signal coordinates, in units of the coordinate noise
    signal_strength: float = 1.0
    placeholder_fraction: float = 0.01


def generate_synthetic_dataset(
    seed: int,
    n_positive: int,
    n_negative: int,
    signal_regions: Iterable = (),
    marker: MarkerClass = MarkerClass.ASSERTION,
    user: str = "a",
    params: SyntheticSpec = SyntheticSpec(),
    template_seed: int | None = None,
) -> MarkerDataset:
    """Seeded two-class landmark data separable only through ``signal_regions``.

    Positive frames get a fixed per-coordinate offset (random sign, magnitude
    ``signal_strength`` noise units) on the signal-region coordinates. About
    ``placeholder_fraction`` of all coordinates are overwritten with 0.0.
    ``template_seed`` pins the base face (and offset signs) independently of
    ``seed`` so several markers can share one face.
    """
    if n_positive < 0 or n_negative < 0:
        raise ValueError("sample counts must be non-negative")
    regions = sorted({_region_index(r) for r in signal_regions})
    rng = np.random.default_rng(seed)
    trng = rng if template_seed is None else np.random.default_rng(template_seed)

    template = np.empty(N_COORDS)
    template[0::3] = params.xy_center + params.xy_spread * trng.uniform(-1, 1, N_POINTS)
    template[1::3] = params.xy_center + params.xy_spread * trng.uniform(-1, 1, N_POINTS)
    template[2::3] = params.z_center + params.z_spread * trng.uniform(-1, 1, N_POINTS)
    noise = np.empty(N_COORDS)
    noise[0::3] = params.xy_noise
    noise[1::3] = params.xy_noise
    noise[2::3] = params.z_noise

    offset = np.zeros(N_COORDS)
    for r in regions:
        idx = region_coord_indices(r)
        offset[idx] = params.signal_strength * noise[idx] * trng.choice([-1.0, 1.0], size=len(idx))

    n = n_positive + n_negative
    labels = np.array([1] * n_positive + [0] * n_negative, dtype=np.int64)
    labels = labels[rng.permutation(n)]
    coords = template + noise * rng.standard_normal((n, N_COORDS))
    coords += labels[:, None] * offset
    holes = rng.random((n, N_COORDS)) < params.placeholder_fraction
    coords[holes] = 0.0
    timestamps = 1000.0 + 33.0 * np.arange(n)
    return MarkerDataset(marker, user, timestamps, coords, labels)


def write_dataset(dataset: MarkerDataset, directory, user: str | None = None) -> tuple[Path, Path]:
    """Write ``dataset`` in the UCI layout; returns ``(datapoints, targets)`` paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    marker = dataset.marker if isinstance(dataset.marker, MarkerClass) else dataset.marker[0]
    stem = f"{user or dataset.user}_{marker.value}"
    dp = directory / f"{stem}_datapoints.txt"
    tg = directory / f"{stem}_targets.txt"
    dp.write_text(serialize_datapoints(dataset.frames))
    tg.write_text(serialize_targets(dataset.labels))
    return dp, tg
