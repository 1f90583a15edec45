"""Core value types shared by the calibration pipeline.

Anchors are oriented 3D boxes (x, y, z, w, l, h, theta). Calibration only
ever rewrites the three size fields; positions and yaw are carried through
untouched so downstream consumers keep their residual conventions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# Smallest admissible box side in meters. Perturbations are clamped here so
# the optimizer can never hand the feature extractor a degenerate box.
SIZE_FLOOR = 0.05

FrameId = int

# A feature vector is a 1-D float array of fixed dimension D. Databases store
# them as float32 rows so the in-memory values match the on-disk format
# exactly and round-trips are lossless.
FeatureVector = np.ndarray


class EmptyDatabaseError(ValueError):
    """A stage that needs at least one feature vector received none."""


class InsufficientSamplesError(ValueError):
    """Fewer samples than mixture components."""


class DimensionMismatchError(ValueError):
    """Feature dimensions of two artifacts disagree."""


class UnknownFrameError(KeyError):
    """A frame id outside the extractor's enumeration."""


class CalibrationError(RuntimeError):
    """The optimizer could not make progress (e.g. every candidate scored -inf)."""


def normalize_yaw(theta: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return float((theta + math.pi) % (2.0 * math.pi) - math.pi)


@dataclass(frozen=True)
class AnchorSizes:
    """Width, length, height of an anchor box in meters. All positive."""

    w: float
    l: float
    h: float

    def __post_init__(self) -> None:
        for name in ("w", "l", "h"):
            v = getattr(self, name)
            if not math.isfinite(v) or v <= 0.0:
                raise ValueError(f"anchor size {name} must be finite and positive, got {v!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.l, self.h], dtype=np.float64)

    @classmethod
    def from_array(cls, arr: Iterable[float]) -> "AnchorSizes":
        w, l, h = (float(v) for v in arr)
        return cls(w, l, h)

    def axis(self, name: str) -> float:
        if name not in ("w", "l", "h"):
            raise ValueError(f"unknown size axis {name!r}")
        return float(getattr(self, name))

    def replace_axis(self, name: str, value: float) -> "AnchorSizes":
        if name not in ("w", "l", "h"):
            raise ValueError(f"unknown size axis {name!r}")
        fields = {"w": self.w, "l": self.l, "h": self.h}
        fields[name] = float(value)
        return AnchorSizes(**fields)


SIZE_AXES = ("w", "l", "h")


@dataclass(frozen=True)
class Anchor:
    """A full oriented box. Positions in meters, theta wrapped to [-pi, pi)."""

    x: float
    y: float
    z: float
    w: float
    l: float
    h: float
    theta: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "z", "theta"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"anchor field {name} must be finite, got {v!r}")
        for name in ("w", "l", "h"):
            v = getattr(self, name)
            if not math.isfinite(v) or v <= 0.0:
                raise ValueError(f"anchor size {name} must be finite and positive, got {v!r}")
        object.__setattr__(self, "theta", normalize_yaw(self.theta))

    @property
    def sizes(self) -> AnchorSizes:
        return AnchorSizes(self.w, self.l, self.h)

    def with_sizes(self, sizes: AnchorSizes) -> "Anchor":
        return Anchor(self.x, self.y, self.z, sizes.w, sizes.l, sizes.h, self.theta)


@dataclass(frozen=True)
class SizePerturbation:
    """Additive offsets (meters) applied to the three anchor sizes."""

    dw: float
    dl: float
    dh: float

    def __post_init__(self) -> None:
        for name in ("dw", "dl", "dh"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"perturbation field {name} must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.dw, self.dl, self.dh], dtype=np.float64)

    def negated(self) -> "SizePerturbation":
        return SizePerturbation(-self.dw, -self.dl, -self.dh)


def apply_perturbation(
    sizes: AnchorSizes, eps: SizePerturbation, floor: float = SIZE_FLOOR
) -> tuple[AnchorSizes, bool]:
    """Add eps to the sizes, clamping each side at the positivity floor.

    Returns the perturbed sizes and a flag that is True when any side was
    clamped. Monotone in eps componentwise.
    """
    if floor <= 0.0:
        raise ValueError("positivity floor must be positive")
    raw = sizes.as_array() + eps.as_array()
    clamped = bool(np.any(raw < floor))
    out = np.maximum(raw, floor)
    return AnchorSizes.from_array(out), clamped


@dataclass(frozen=True)
class ScoredProposal:
    """One detector proposal: confidence, regression residuals, latent feature.

    Size residuals are carried for completeness but suppressed when features
    are built, so the effective box always has the queried anchor sizes.
    """

    score: float
    center_residuals: tuple[float, float, float]
    yaw_residual: float
    size_residuals: tuple[float, float, float]
    feature: FeatureVector = field(repr=False)

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"proposal score must lie in [0, 1], got {self.score!r}")
        feat = np.asarray(self.feature, dtype=np.float32)
        if feat.ndim != 1:
            raise ValueError("proposal feature must be a 1-D vector")
        if not np.all(np.isfinite(feat)):
            raise ValueError("proposal feature must be finite")
        object.__setattr__(self, "feature", feat)

    @property
    def dim(self) -> int:
        return int(self.feature.shape[0])


class FeatureDatabase:
    """A bag of fixed-dimension feature vectors, stored as float32 rows.

    Order is preserved as built; consumers that need order independence
    (the mixture fit, the fitness) are responsible for it themselves.
    """

    __slots__ = ("_dim", "_rows")

    def __init__(self, dim: int, rows: np.ndarray | None = None) -> None:
        if dim < 1:
            raise ValueError("feature dimension must be >= 1")
        self._dim = int(dim)
        if rows is None:
            rows = np.empty((0, dim), dtype=np.float32)
        rows = np.ascontiguousarray(rows, dtype=np.float32)
        if rows.ndim != 2 or rows.shape[1] != self._dim:
            raise DimensionMismatchError(
                f"database rows have shape {rows.shape}, expected (*, {self._dim})"
            )
        if rows.size and not np.all(np.isfinite(rows)):
            raise ValueError("database entries must be finite")
        self._rows = rows

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def rows(self) -> np.ndarray:
        return self._rows

    def __len__(self) -> int:
        return int(self._rows.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureDatabase):
            return NotImplemented
        return self._dim == other._dim and np.array_equal(self._rows, other._rows)

    def __repr__(self) -> str:
        return f"FeatureDatabase(dim={self._dim}, count={len(self)})"

    @classmethod
    def from_vectors(cls, vectors: Sequence[FeatureVector], dim: int | None = None) -> "FeatureDatabase":
        if not vectors:
            if dim is None:
                raise ValueError("dim is required for an empty database")
            return cls(dim)
        stacked = np.stack([np.asarray(v, dtype=np.float32) for v in vectors])
        if dim is not None and stacked.shape[1] != dim:
            raise DimensionMismatchError(
                f"vectors have dimension {stacked.shape[1]}, expected {dim}"
            )
        return cls(stacked.shape[1], stacked)

    @classmethod
    def concat(cls, parts: Sequence["FeatureDatabase"]) -> "FeatureDatabase":
        if not parts:
            raise ValueError("cannot concatenate zero databases")
        dim = parts[0].dim
        for p in parts:
            if p.dim != dim:
                raise DimensionMismatchError("cannot concatenate databases of different dims")
        return cls(dim, np.concatenate([p.rows for p in parts], axis=0))
