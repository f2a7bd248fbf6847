"""Synthetic solid-color scenes with known posterior modes.

A camera slides along a straight trajectory at a steady rate and sees one
solid color per trajectory segment. Reusing a color on several segments
makes every observation of that color ambiguous, and the set of segments
carrying it is the exact set of posterior modes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidScene, OffTrajectory, ParseError, UnknownColor
from .geometry import Pose, rotation_about

PALETTE = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "cyan": (0.0, 1.0, 1.0),
    "magenta": (1.0, 0.0, 1.0),
}

# camera x along +x (the direction of travel), optical axis (z) along +y
FACING_PLUS_Y = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])

COLOR_TOL = 0.1
LATERAL_TOL = 1e-6
OBS_CLAMP = (-0.5, 1.5)


@dataclass(frozen=True)
class Segment:
    start: float
    end: float
    color: str
    rotation: np.ndarray


@dataclass(frozen=True)
class SceneSpec:
    """Straight trajectory split into equal, color-labeled segments."""

    pattern: tuple
    palette: dict
    origin: np.ndarray
    direction: np.ndarray
    length: float
    base_rotation: np.ndarray
    segment_yaw: tuple = None
    seed: int = 0

    @property
    def segments(self):
        n = len(self.pattern)
        w = self.length / n
        segs = []
        for i, c in enumerate(self.pattern):
            R = self.base_rotation
            if self.segment_yaw is not None:
                R = rotation_about("z", self.segment_yaw[i]) @ R
            segs.append(Segment(i * w, (i + 1) * w, c, R))
        return segs

    def point(self, s):
        """World position at trajectory coordinate(s) ``s``."""
        s = np.asarray(s, dtype=np.float64)
        return self.origin + s[..., None] * self.direction

    def segment_index(self, s):
        """Owning segment of coordinate ``s``; intervals are left-closed, the
        final one also contains the trajectory end."""
        n = len(self.pattern)
        i = int(np.floor(s / (self.length / n)))
        return min(max(i, 0), n - 1)

    def color_of(self, label):
        return np.asarray(self.palette[label], dtype=np.float64)

    def to_dict(self):
        return {
            "pattern": list(self.pattern),
            "palette": {k: list(v) for k, v in self.palette.items()},
            "origin": self.origin.tolist(),
            "direction": self.direction.tolist(),
            "length": self.length,
            "base_rotation": self.base_rotation.tolist(),
            "segment_yaw": None if self.segment_yaw is None else list(self.segment_yaw),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return _validated(
            pattern=tuple(d["pattern"]),
            palette={k: tuple(v) for k, v in d["palette"].items()},
            origin=np.asarray(d["origin"], dtype=np.float64),
            direction=np.asarray(d["direction"], dtype=np.float64),
            length=float(d["length"]),
            base_rotation=np.asarray(d["base_rotation"], dtype=np.float64),
            segment_yaw=None if d.get("segment_yaw") is None else tuple(d["segment_yaw"]),
            seed=int(d.get("seed", 0)),
        )


def _validated(**kw):
    pattern = kw["pattern"]
    palette = kw["palette"]
    if len(pattern) < 3:
        raise InvalidScene(f"need at least 3 segments, got {len(pattern)}")
    missing = sorted(set(pattern) - set(palette))
    if missing:
        raise InvalidScene(f"color pattern references colors missing from the palette: {missing}")
    used = [np.asarray(palette[c], dtype=np.float64) for c in dict.fromkeys(pattern)]
    for i in range(len(used)):
        for j in range(i + 1, len(used)):
            if np.linalg.norm(used[i] - used[j]) <= 2 * COLOR_TOL:
                raise InvalidScene("palette colors are not distinguishable")
    if kw["segment_yaw"] is not None and len(kw["segment_yaw"]) != len(pattern):
        raise InvalidScene("segment_yaw needs one angle per segment")
    if not kw["length"] > 0:
        raise InvalidScene("trajectory length must be positive")
    d = kw["direction"]
    kw["direction"] = d / np.linalg.norm(d)
    return SceneSpec(**kw)


def build_tricolor_scene(
    seed=0,
    pattern=("red", "green", "red"),
    palette=None,
    length=3.0,
    origin=(0.0, 0.0, 0.0),
    direction=(1.0, 0.0, 0.0),
    segment_yaw=None,
):
    """Scene with equal-length segments colored by ``pattern``.

    The default is three unit segments along +x colored red, green, red with
    the camera looking along +y: red observations have two modes, green one.
    ``segment_yaw`` (degrees, one per segment) turns the camera about the
    vertical axis per segment, which places modes apart in rotation as well.
    Generation is deterministic; ``seed`` is recorded for provenance.
    """
    return _validated(
        pattern=tuple(pattern),
        palette=dict(PALETTE if palette is None else palette),
        origin=np.asarray(origin, dtype=np.float64),
        direction=np.asarray(direction, dtype=np.float64),
        length=float(length),
        base_rotation=FACING_PLUS_Y.copy(),
        segment_yaw=None if segment_yaw is None else tuple(float(a) for a in segment_yaw),
        seed=int(seed),
    )


@dataclass(frozen=True)
class Observation:
    features: np.ndarray

    @property
    def rgb(self):
        """Color estimate: mean over the replicated channel groups."""
        f = self.features
        k = len(f) // 3
        if k == 0:
            raise ValueError("observation has fewer than 3 features")
        return f[: 3 * k].reshape(k, 3).mean(axis=0)


def trajectory_coordinate(scene: SceneSpec, pose: Pose, tol=LATERAL_TOL):
    """Arc-length coordinate of ``pose`` on the trajectory (raises OffTrajectory)."""
    rel = pose.translation - scene.origin
    s = float(rel @ scene.direction)
    lateral = np.linalg.norm(rel - s * scene.direction)
    if lateral > tol or s < -tol or s > scene.length + tol:
        raise OffTrajectory(f"pose at {pose.translation} is not on the trajectory")
    return min(max(s, 0.0), scene.length)


def _features(rgb, n_features, sigma, rng):
    base = np.resize(np.asarray(rgb, dtype=np.float64), n_features)
    if sigma > 0:
        base = base + sigma * rng.standard_normal(n_features)
    return np.clip(base, *OBS_CLAMP)


def render_observation(scene, pose, noise_seed=None, sigma=0.01, n_features=3):
    """Solid color seen from ``pose``, with optional seeded pixel noise."""
    s = trajectory_coordinate(scene, pose)
    seg = scene.segments[scene.segment_index(s)]
    rng = np.random.default_rng(noise_seed)
    return Observation(_features(scene.color_of(seg.color), n_features, sigma, rng))


@dataclass
class Dataset:
    split: str
    seed: int
    coordinates: np.ndarray
    rotations: np.ndarray
    translations: np.ndarray
    features: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.coordinates)

    def pose(self, i):
        return Pose(self.rotations[i], self.translations[i])

    def observation(self, i):
        return Observation(self.features[i].copy())

    @property
    def poses(self):
        return [self.pose(i) for i in range(len(self))]


def generate_dataset(scene, n_samples, spacing=None, seed=0, split="train", sigma=0.01, n_features=3):
    """Poses at a steady spacing along the trajectory with their observations.

    Train coordinates are segment midpoints of a uniform grid,
    ``(i + 1/2) * spacing``; the test split is shifted by another half
    spacing, ``(i + 1) * spacing``, so its last query sits on the trajectory
    end. With the default sizes (300 train, 60 test over length 3) no test
    coordinate coincides with a train coordinate. ``spacing`` defaults to
    ``length / n_samples``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    if split not in ("train", "test"):
        raise ValueError(f"unknown split {split!r}")
    if spacing is None:
        spacing = scene.length / n_samples
    offset = 0.5 * spacing if split == "test" else 0.0
    s = (np.arange(n_samples) + 0.5) * spacing + offset
    if s[-1] > scene.length + 1e-12:
        raise ValueError("samples run past the end of the trajectory")
    s = np.minimum(s, scene.length)
    segs = scene.segments
    owners = [segs[scene.segment_index(v)] for v in s]
    rng = np.random.default_rng(seed)
    feats = np.stack([_features(scene.color_of(o.color), n_features, sigma, rng) for o in owners])
    return Dataset(
        split=split,
        seed=seed,
        coordinates=s,
        rotations=np.stack([o.rotation for o in owners]),
        translations=scene.point(s),
        features=feats,
    )


@dataclass(frozen=True)
class ModeRegion:
    """A segment of the trajectory: every pose on it is a posterior mode."""

    start: float
    end: float
    start_point: np.ndarray
    end_point: np.ndarray
    rotation: np.ndarray

    @property
    def center(self):
        return Pose(self.rotation, 0.5 * (self.start_point + self.end_point))

    def translation_distance(self, t):
        """Distance from points ``t`` (..., 3) to the region's line segment."""
        t = np.asarray(t, dtype=np.float64)
        seg = self.end_point - self.start_point
        u = np.clip(((t - self.start_point) @ seg) / (seg @ seg), 0.0, 1.0)
        return np.linalg.norm(t - (self.start_point + u[..., None] * seg), axis=-1)


def match_color(scene, observation, tol=COLOR_TOL):
    obs = observation if isinstance(observation, Observation) else Observation(np.asarray(observation, dtype=np.float64))
    rgb = obs.rgb
    best, best_d = None, np.inf
    for label in dict.fromkeys(scene.pattern):
        d = np.linalg.norm(rgb - scene.color_of(label))
        if d < best_d:
            best, best_d = label, d
    if best_d > tol:
        raise UnknownColor(f"observation color {rgb} matches no scene color")
    return best


def true_mode_set(scene, observation):
    """All segments whose color matches the observation, as mode regions."""
    label = match_color(scene, observation)
    return [
        ModeRegion(seg.start, seg.end, scene.point(seg.start), scene.point(seg.end), seg.rotation)
        for seg in scene.segments
        if seg.color == label
    ]


# ------------------------------------------------------------------ file I/O


def _fmt(x):
    return format(float(x), ".17g")


def format_records(ds: Dataset):
    lines = []
    for i in range(len(ds)):
        fields = [ds.split, _fmt(ds.coordinates[i])]
        fields += [_fmt(v) for v in ds.rotations[i].reshape(-1)]
        fields += [_fmt(v) for v in ds.translations[i]]
        fields += [_fmt(v) for v in ds.features[i]]
        lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"


def write_dataset(ds: Dataset, path):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(format_records(ds))


def parse_records(text, seed=0):
    splits, rows = [], []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 15:
            raise ParseError(f"line {n}: expected at least 15 fields, got {len(parts)}")
        try:
            rows.append([float(v) for v in parts[1:]])
        except ValueError as exc:
            raise ParseError(f"line {n}: {exc}") from None
        splits.append(parts[0])
    if not rows:
        raise ParseError("dataset file has no records")
    if len({len(r) for r in rows}) != 1:
        raise ParseError("records have differing feature counts")
    if len(set(splits)) != 1:
        raise ParseError(f"mixed splits in one file: {sorted(set(splits))}")
    a = np.array(rows)
    return Dataset(
        split=splits[0],
        seed=seed,
        coordinates=a[:, 0],
        rotations=a[:, 1:10].reshape(-1, 3, 3),
        translations=a[:, 10:13],
        features=a[:, 13:],
    )


def read_dataset(path, seed=0):
    with open(path, encoding="ascii") as fh:
        return parse_records(fh.read(), seed=seed)
