"""Feature extraction boundary and gated database builders.

Any detector backend plugs in by subclassing FeatureExtractor: it exposes
its feature dimension, the anchor sizes it was configured with, a frame
enumeration, and a propose() that returns scored proposals for one frame
under the queried anchor sizes. Databases are the score-gated collection of
proposal features over a set of frames.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    Anchor,
    AnchorSizes,
    EmptyDatabaseError,
    FeatureDatabase,
    FrameId,
    ScoredProposal,
)


@dataclass(frozen=True)
class GateConfig:
    """Confidence gate applied while collecting features.

    tau: proposals enter the database only when score > tau (strict).
    max_features: optional cap, applied after a deterministic frame order.
    frame_subset: optional fraction of frames to keep, selected by a seeded
        shuffle-then-prefix so the subset is reproducible.
    """

    tau: float = 0.6
    max_features: int | None = None
    frame_subset: float | None = None
    subset_seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.tau <= 1.0):
            raise ValueError(f"tau must lie in [0, 1], got {self.tau!r}")
        if self.max_features is not None and self.max_features < 1:
            raise ValueError("max_features must be >= 1 when given")
        if self.frame_subset is not None and not (0.0 < self.frame_subset <= 1.0):
            raise ValueError("frame_subset must lie in (0, 1] when given")


class FeatureExtractor(ABC):
    """A frozen detector bound to one domain's frames."""

    @property
    @abstractmethod
    def feature_dim(self) -> int:
        """Dimension D of every proposal feature."""

    @property
    @abstractmethod
    def source_sizes(self) -> AnchorSizes:
        """The anchor sizes the detector was configured (trained) with."""

    @property
    def source_anchor(self) -> Anchor:
        s = self.source_sizes
        return Anchor(0.0, 0.0, 0.0, s.w, s.l, s.h, 0.0)

    @abstractmethod
    def frames(self) -> Sequence[FrameId]:
        """Deterministic enumeration of the domain's frames."""

    @abstractmethod
    def propose(
        self,
        frame: FrameId,
        sizes: AnchorSizes,
        suppress_size_residuals: bool = True,
    ) -> list[ScoredProposal]:
        """Scored proposals for one frame under the given anchor sizes.

        Must be pure: identical (frame, sizes) inputs yield identical
        proposals. With suppression on, the effective boxes keep the
        queried sizes and only the carried pose residuals apply.
        """


def _select_frames(frames: Sequence[FrameId], gate: GateConfig) -> list[FrameId]:
    frames = list(frames)
    if gate.frame_subset is None or gate.frame_subset >= 1.0:
        return frames
    rng = np.random.default_rng(gate.subset_seed)
    perm = rng.permutation(len(frames))
    keep = max(1, int(np.ceil(gate.frame_subset * len(frames))))
    return [frames[i] for i in perm[:keep]]


def _collect(
    extractor: FeatureExtractor,
    frames: Sequence[FrameId],
    sizes: AnchorSizes,
    gate: GateConfig,
    suppress_size_residuals: bool,
) -> FeatureDatabase:
    vectors: list[np.ndarray] = []
    for frame in _select_frames(frames, gate):
        for proposal in extractor.propose(frame, sizes, suppress_size_residuals):
            if proposal.score > gate.tau:
                vectors.append(proposal.feature)
                if gate.max_features is not None and len(vectors) >= gate.max_features:
                    return FeatureDatabase.from_vectors(vectors, dim=extractor.feature_dim)
    return FeatureDatabase.from_vectors(vectors, dim=extractor.feature_dim)


def build_reference_db(
    extractor: FeatureExtractor,
    frames: Sequence[FrameId],
    gate: GateConfig,
    suppress_size_residuals: bool = True,
) -> FeatureDatabase:
    """Gated feature database under the extractor's own source anchors.

    Raises EmptyDatabaseError when nothing passes the gate, so the caller
    can lower tau instead of silently fitting a model to nothing.
    """
    db = _collect(extractor, frames, extractor.source_sizes, gate, suppress_size_residuals)
    if len(db) == 0:
        raise EmptyDatabaseError(
            f"no proposal passed the gate (tau={gate.tau}) over {len(list(frames))} frames"
        )
    return db


def build_target_db(
    extractor: FeatureExtractor,
    frames: Sequence[FrameId],
    sizes: AnchorSizes,
    gate: GateConfig,
    suppress_size_residuals: bool = True,
) -> FeatureDatabase:
    """Gated feature database under candidate anchor sizes.

    May be empty; an empty database marks a candidate that captured nothing,
    which the optimizer treats as worst possible fitness.
    """
    return _collect(extractor, frames, sizes, gate, suppress_size_residuals)
