"""In-memory representation of a labeled multi-channel recording."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import StructuralError

PHASE_FLEXION = "flexion-onset"
PHASE_RETURN = "return-onset"
PHASE_REST = "rest"
PHASES = (PHASE_FLEXION, PHASE_RETURN, PHASE_REST)


@dataclass(frozen=True)
class Annotation:
    """Ground-truth marker: a gesture phase starting at sample ``n``."""

    n: int
    gesture: str
    phase: str

    def __post_init__(self):
        if self.phase not in PHASES:
            raise StructuralError(f"unknown phase '{self.phase}'")


@dataclass
class Recording:
    """Raw samples plus ground-truth annotations.

    Attributes:
        sample_rate: Sampling frequency in Hz.
        samples: (n_samples, channels) float64 block; row index is the
            sample index.
        annotations: Markers sorted by sample index.
    """

    sample_rate: float
    samples: np.ndarray
    annotations: list[Annotation] = field(default_factory=list)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise StructuralError("samples must be a (n, channels) block")
        n = self.samples.shape[0]
        for a in self.annotations:
            if not 0 <= a.n < n:
                raise StructuralError(
                    f"annotation at {a.n} outside recording of {n} samples"
                )
        self.annotations = sorted(self.annotations, key=lambda a: a.n)

    @property
    def num_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def channels(self) -> int:
        return self.samples.shape[1]

    def onsets(self, phase: str) -> list[Annotation]:
        return [a for a in self.annotations if a.phase == phase]
