"""Synthetic desk-scale stand-in for a frozen 3D detector.

A domain is a distribution over frames: boxes with Gaussian-perturbed sizes
placed uniformly in a scene, surface-sampled object points, and uniform
background clutter. Object points sit on a shell inset from the true box
faces (annotation boxes run a little larger than the physical surface), so
a box at the true size captures essentially every object point while an
undersized one slices the shell away and an oversized one admits clutter.

The surrogate "detector" places one candidate box per object at a frozen
noisy center estimate, scores it by point capture

    score = own_in / (own_in + foreign_in + own_missed)

and describes it by a G x G x G occupancy histogram of captured points in
box-normalized coordinates, scaled by the inverse capture count. Anchor
sizes change the effective box, so both the score and the feature react to
calibration exactly the way the pipeline assumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import AnchorSizes, FrameId, ScoredProposal, UnknownFrameError, normalize_yaw
from .extractor import FeatureExtractor


@dataclass(frozen=True)
class SyntheticDomain:
    """Generative description of one domain, including surrogate noise knobs.

    size_mean / size_std: per-axis object size distribution in meters; the
        means must dominate the spread (mean > 3 * std).
    objects_per_frame: Poisson mean of the object count.
    points_per_object: point density on objects, points per cubic meter.
    clutter_rate: Poisson mean of background points per frame.
    frame_extent: scene bounding box (x, y, z) in meters, centered at 0.
    seed: drives every random draw for the domain, frames included.
    """

    size_mean: AnchorSizes
    size_std: tuple[float, float, float]
    objects_per_frame: float = 4.0
    points_per_object: float = 25.0
    clutter_rate: float = 10000.0
    frame_extent: tuple[float, float, float] = (20.0, 20.0, 4.0)
    seed: int = 0
    center_noise: float = 0.02
    size_estimate_noise: float = 0.05
    yaw_noise: float = 0.0
    surface_margin: float = 0.09
    point_jitter: float = 0.015
    grid_resolution: int = 4
    nms: bool = True
    nms_iou: float = 0.5

    def __post_init__(self) -> None:
        std = tuple(float(s) for s in self.size_std)
        if len(std) != 3 or any(s < 0.0 or not math.isfinite(s) for s in std):
            raise ValueError("size_std must be three finite non-negative values")
        object.__setattr__(self, "size_std", std)
        mean = self.size_mean.as_array()
        if np.any(mean <= 3.0 * np.asarray(std)):
            raise ValueError("size_mean must exceed 3x size_std on every axis")
        if self.objects_per_frame < 0.0:
            raise ValueError(f"objects_per_frame must be >= 0, got {self.objects_per_frame!r}")
        if self.points_per_object <= 0.0:
            raise ValueError(f"points_per_object must be positive, got {self.points_per_object!r}")
        if self.clutter_rate < 0.0:
            raise ValueError(f"clutter_rate must be >= 0, got {self.clutter_rate!r}")
        ext = tuple(float(e) for e in self.frame_extent)
        if len(ext) != 3 or any(e <= 0.0 for e in ext):
            raise ValueError("frame_extent must be three positive lengths")
        object.__setattr__(self, "frame_extent", ext)
        diag = math.hypot(mean[0], mean[1])
        if min(ext[0], ext[1]) < 2.0 * diag or ext[2] < 2.0 * mean[2]:
            raise ValueError("frame_extent leaves no room to place objects")
        for name in ("center_noise", "size_estimate_noise", "yaw_noise", "point_jitter"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if self.surface_margin < 0.0:
            raise ValueError("surface_margin must be >= 0")
        if self.grid_resolution < 1:
            raise ValueError("grid_resolution must be >= 1")
        if not (0.0 < self.nms_iou <= 1.0):
            raise ValueError("nms_iou must lie in (0, 1]")

    @property
    def feature_dim(self) -> int:
        return self.grid_resolution**3


@dataclass(frozen=True)
class SyntheticObject:
    """One generated object plus the surrogate's frozen estimates for it."""

    center: np.ndarray
    size: np.ndarray
    yaw: float
    est_center: np.ndarray
    est_size: np.ndarray
    est_yaw: float
    points: np.ndarray  # (n, 3) world coordinates

    def __post_init__(self) -> None:
        for name in ("center", "size", "est_center", "est_size"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", pts)

    @property
    def n_points(self) -> int:
        return int(self.points.shape[0])


@dataclass(frozen=True)
class SyntheticFrame:
    objects: tuple[SyntheticObject, ...]
    clutter: np.ndarray  # (m, 3)
    points: np.ndarray = field(init=False, repr=False)  # all points, objects first
    owner: np.ndarray = field(init=False, repr=False)  # object index per point, -1 clutter

    def __post_init__(self) -> None:
        clutter = np.asarray(self.clutter, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "clutter", clutter)
        chunks = [o.points for o in self.objects] + [clutter]
        owners = [np.full(o.n_points, i, dtype=np.int32) for i, o in enumerate(self.objects)]
        owners.append(np.full(clutter.shape[0], -1, dtype=np.int32))
        object.__setattr__(self, "points", np.concatenate(chunks, axis=0))
        object.__setattr__(self, "owner", np.concatenate(owners, axis=0))
        object.__setattr__(self, "_r2_cache", {})

    def squared_distances(self, obj_idx: int) -> np.ndarray:
        """Squared distance of every frame point to one object's estimated
        center. Frame data is frozen, so this is computed once and reused
        across all candidate sizes."""
        cached = self._r2_cache.get(obj_idx)
        if cached is None:
            rel = self.points - self.objects[obj_idx].est_center
            cached = np.einsum("ij,ij->i", rel, rel)
            self._r2_cache[obj_idx] = cached
        return cached


def _rotation_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _sample_shell(
    rng: np.random.Generator, size: np.ndarray, margin: float, jitter: float, n: int
) -> np.ndarray:
    """Points on the inset surface shell of a box, in local coordinates.

    The shell sits margin meters inside each true face (annotation boxes pad
    the physical surface), clamped so very small boxes keep a valid shell.
    """
    if n == 0:
        return np.empty((0, 3))
    half = size / 2.0 - np.minimum(margin, 0.35 * size)
    areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]])
    probs = np.repeat(areas, 2)
    probs = probs / probs.sum()
    face = rng.choice(6, size=n, p=probs)
    uv = rng.uniform(-1.0, 1.0, (n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    for a in range(3):
        mask = axis == a
        others = [b for b in range(3) if b != a]
        pts[mask, a] = sign[mask] * half[a]
        pts[mask, others[0]] = uv[mask, 0] * half[others[0]]
        pts[mask, others[1]] = uv[mask, 1] * half[others[1]]
    return pts + rng.normal(size=(n, 3)) * jitter


def _generate_frame(spec: SyntheticDomain, rng: np.random.Generator) -> SyntheticFrame:
    ext = np.asarray(spec.frame_extent)
    mean = spec.size_mean.as_array()
    std = np.asarray(spec.size_std)
    n_obj = int(rng.poisson(spec.objects_per_frame))
    objects = []
    for _ in range(n_obj):
        size = np.maximum(mean + rng.normal(size=3) * std, 0.2 * mean)
        footprint = math.hypot(size[0], size[1])
        margin = np.array([footprint / 2.0, footprint / 2.0, size[2] / 2.0])
        center = rng.uniform(-ext / 2.0 + margin, ext / 2.0 - margin)
        yaw = float(rng.uniform(-math.pi, math.pi))
        volume = float(size[0] * size[1] * size[2])
        n_pts = int(rng.poisson(spec.points_per_object * volume))
        local = _sample_shell(rng, size, spec.surface_margin, spec.point_jitter, n_pts)
        world = local @ _rotation_z(yaw).T + center
        est_center = center + rng.normal(size=3) * spec.center_noise
        est_size = np.maximum(size + rng.normal(size=3) * spec.size_estimate_noise, 0.05)
        est_yaw = normalize_yaw(yaw + float(rng.normal()) * spec.yaw_noise)
        objects.append(
            SyntheticObject(center, size, yaw, est_center, est_size, est_yaw, world)
        )
    n_clutter = int(rng.poisson(spec.clutter_rate))
    clutter = rng.uniform(-ext / 2.0, ext / 2.0, (n_clutter, 3))
    return SyntheticFrame(tuple(objects), clutter)


def occupancy_feature(
    local_points: np.ndarray, box_size: np.ndarray, grid: int
) -> np.ndarray:
    """Histogram of box-local points over a grid^3 lattice, inverse-count scaled."""
    n = local_points.shape[0]
    if n == 0:
        return np.zeros(grid**3, dtype=np.float32)
    u = local_points / box_size + 0.5
    bins = np.clip(np.floor(u * grid).astype(np.int64), 0, grid - 1)
    flat = (bins[:, 0] * grid + bins[:, 1]) * grid + bins[:, 2]
    counts = np.bincount(flat, minlength=grid**3)
    return (counts / n).astype(np.float32)


def _axis_aligned_iou(c1, h1, c2, h2) -> float:
    lo = np.maximum(c1 - h1, c2 - h2)
    hi = np.minimum(c1 + h1, c2 + h2)
    edge = np.maximum(hi - lo, 0.0)
    inter = float(edge[0] * edge[1] * edge[2])
    v1 = float(8.0 * h1[0] * h1[1] * h1[2])
    v2 = float(8.0 * h2[0] * h2[1] * h2[2])
    union = v1 + v2 - inter
    return inter / union if union > 0.0 else 0.0


class SyntheticExtractor(FeatureExtractor):
    """FeatureExtractor over pre-generated synthetic frames."""

    def __init__(
        self,
        frames: Sequence[SyntheticFrame],
        source_sizes: AnchorSizes,
        grid_resolution: int = 4,
        nms: bool = True,
        nms_iou: float = 0.5,
        domain: SyntheticDomain | None = None,
    ) -> None:
        self._frames = list(frames)
        self._source_sizes = source_sizes
        self._grid = int(grid_resolution)
        self._nms = bool(nms)
        self._nms_iou = float(nms_iou)
        self.domain = domain

    @property
    def feature_dim(self) -> int:
        return self._grid**3

    @property
    def source_sizes(self) -> AnchorSizes:
        return self._source_sizes

    def frames(self) -> Sequence[FrameId]:
        return range(len(self._frames))

    def frame_data(self, frame: FrameId) -> SyntheticFrame:
        """Ground-truth access for oracles and reports."""
        if not (0 <= int(frame) < len(self._frames)):
            raise UnknownFrameError(f"frame {frame!r} is outside 0..{len(self._frames) - 1}")
        return self._frames[int(frame)]

    def propose(
        self,
        frame: FrameId,
        sizes: AnchorSizes,
        suppress_size_residuals: bool = True,
    ) -> list[ScoredProposal]:
        data = self.frame_data(frame)
        query = sizes.as_array()
        raw: list[tuple[int, ScoredProposal, np.ndarray, np.ndarray]] = []
        for idx, obj in enumerate(data.objects):
            if obj.n_points == 0:
                continue
            eff_size = query if suppress_size_residuals else obj.est_size
            half = eff_size / 2.0
            near = data.squared_distances(idx) <= float(half @ half) * (1.0 + 1e-9)
            rel = data.points[near] - obj.est_center
            owner = data.owner[near]
            c, s = math.cos(obj.est_yaw), math.sin(obj.est_yaw)
            local = np.empty_like(rel)
            local[:, 0] = rel[:, 0] * c + rel[:, 1] * s
            local[:, 1] = -rel[:, 0] * s + rel[:, 1] * c
            local[:, 2] = rel[:, 2]
            inside = np.all(np.abs(local) <= half * (1.0 + 1e-9) + 1e-12, axis=1)
            n_in = int(np.count_nonzero(inside))
            own_in = int(np.count_nonzero(inside & (owner == idx)))
            foreign_in = n_in - own_in
            own_out = obj.n_points - own_in
            score = own_in / (own_in + foreign_in + own_out)
            feature = occupancy_feature(local[inside], eff_size, self._grid)
            cell = np.floor(obj.est_center) + 0.5
            proposal = ScoredProposal(
                score=score,
                center_residuals=tuple(float(v) for v in (obj.est_center - cell)),
                yaw_residual=normalize_yaw(obj.est_yaw),
                size_residuals=tuple(float(v) for v in (obj.est_size - query)),
                feature=feature,
            )
            raw.append((idx, proposal, obj.est_center.copy(), half.copy()))
        if self._nms and len(raw) > 1:
            raw = self._suppress(raw)
        return [entry[1] for entry in raw]

    def _suppress(self, raw):
        order = sorted(range(len(raw)), key=lambda j: (-raw[j][1].score, raw[j][0]))
        kept: list[int] = []
        for j in order:
            _, _, cj, hj = raw[j]
            if all(
                _axis_aligned_iou(cj, hj, raw[k][2], raw[k][3]) <= self._nms_iou
                for k in kept
            ):
                kept.append(j)
        kept.sort()
        return [raw[j] for j in kept]


def generate_domain(spec: SyntheticDomain, n_frames: int) -> SyntheticExtractor:
    """Materialize n_frames frames of the domain; fully seeded by spec.seed."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    children = np.random.SeedSequence(spec.seed).spawn(n_frames)
    frames = [_generate_frame(spec, np.random.default_rng(child)) for child in children]
    return SyntheticExtractor(
        frames,
        spec.size_mean,
        grid_resolution=spec.grid_resolution,
        nms=spec.nms,
        nms_iou=spec.nms_iou,
        domain=spec,
    )


def mean_capture_score(
    extractor: SyntheticExtractor,
    frames: Sequence[FrameId],
    sizes: AnchorSizes,
    suppress_size_residuals: bool = True,
) -> float:
    """Ungated mean proposal score: the surrogate's detection-quality proxy."""
    scores: list[float] = []
    for frame in frames:
        for p in extractor.propose(frame, sizes, suppress_size_residuals):
            scores.append(p.score)
    return float(np.mean(scores)) if scores else 0.0
