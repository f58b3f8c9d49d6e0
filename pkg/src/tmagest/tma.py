"""Temporal muscle activation (TMA) maps.

A TMA map is a dense matrix summarizing one sliding window of the envelope
stream. Each column is the feature vector of one time step: the raw channel
envelopes first, followed by every pairwise product of channel envelopes
(including squares). The products expose mutual activation of channel groups,
which single-channel features cannot.

For ``L`` channels a column has ``D = L + L*(L+1)/2`` entries; with ``L = 8``
that is 44. Columns run oldest to newest, and a map is indexed by the sample
index of its *newest* column, so the map at index ``n`` covers samples
``n - map_width + 1 .. n`` - exactly the data available at time ``n`` in a
causal loop.

Maps are treated as immutable once assembled and may be shared freely.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dsp import EnvelopeFrame
from .errors import ConfigError, NotReadyError, StructuralError


def feature_rows(channels: int) -> int:
    """Rows of a map: channels plus all ordered channel pairs (i <= j)."""
    return channels + channels * (channels + 1) // 2


def channels_for_rows(rows: int) -> int:
    """Invert :func:`feature_rows`; raises if no channel count matches."""
    L = 1
    while feature_rows(L) < rows:
        L += 1
    if feature_rows(L) != rows:
        raise StructuralError(f"no channel count yields {rows} feature rows")
    return L


def pair_indices(channels: int) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs (i, j), i <= j, in the column order used by feature vectors."""
    return np.triu_indices(channels)


def build_feature_vector(values: np.ndarray) -> np.ndarray:
    """Expand one envelope frame into its first- and second-order terms.

    Ordering: ``x_0 .. x_{L-1}``, then ``x_i * x_j`` for ``i <= j`` in
    lexicographic order (``x_0^2, x_0 x_1, ..., x_0 x_{L-1}, x_1^2, ...``).
    """
    x = np.asarray(values, dtype=np.float64)
    iu, ju = pair_indices(x.shape[0])
    return np.concatenate([x, x[iu] * x[ju]])


def feature_matrix(frames: np.ndarray) -> np.ndarray:
    """Column-wise :func:`build_feature_vector` for a (n, channels) block.

    Returns a (feature_rows, n) matrix; column ``t`` is the feature vector of
    row ``t`` of the input.
    """
    frames = np.asarray(frames, dtype=np.float64)
    first = frames.T
    iu, ju = pair_indices(frames.shape[1])
    return np.concatenate([first, first[iu] * first[ju]], axis=0)


@dataclass
class TmaMap:
    """One assembled activation map.

    Attributes:
        end_index: Sample index of the newest column.
        data: (feature_rows, map_width) matrix, columns oldest to newest.
    """

    end_index: int
    data: np.ndarray

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def rows(self) -> int:
        return self.data.shape[0]


class FrameRing:
    """Fixed-capacity ring of the most recent envelope frames.

    Pushes are O(1); assembly snapshots the window in time order. Frames must
    arrive with consecutive sample indices. Single-owner, sequential use.
    """

    def __init__(self, map_width: int, channels: int):
        if map_width < 1:
            raise ConfigError(f"map_width must be >= 1, got {map_width}")
        self._buf = np.zeros((map_width, channels))
        self._head = 0          # slot for the next push
        self._count = 0
        self._last_t: int | None = None

    @property
    def is_full(self) -> bool:
        return self._count == self._buf.shape[0]

    @property
    def newest_index(self) -> int | None:
        return self._last_t

    def push(self, frame: EnvelopeFrame) -> None:
        if frame.values.shape[0] != self._buf.shape[1]:
            raise StructuralError(
                f"expected {self._buf.shape[1]} channels, got {frame.values.shape[0]}"
            )
        self.push_values(frame.t, frame.values)

    def push_values(self, t: int, values: np.ndarray) -> None:
        """Unwrapped push for the streaming hot path."""
        if self._last_t is not None and t != self._last_t + 1:
            raise StructuralError(
                f"frame index {t} does not follow {self._last_t}"
            )
        self._buf[self._head] = values
        self._head = (self._head + 1) % self._buf.shape[0]
        self._count = min(self._count + 1, self._buf.shape[0])
        self._last_t = t

    def window(self) -> np.ndarray:
        """The (map_width, channels) window, oldest row first."""
        if not self.is_full:
            raise NotReadyError(
                f"ring holds {self._count} of {self._buf.shape[0]} frames"
            )
        return np.roll(self._buf, -self._head, axis=0)


def assemble_map(ring: FrameRing) -> TmaMap:
    """Build the activation map ending at the ring's newest frame.

    Raises:
        NotReadyError: Until the ring has seen a full window of frames.
    """
    window = ring.window()
    return TmaMap(end_index=ring.newest_index, data=feature_matrix(window))


@dataclass(frozen=True)
class NormalizationBounds:
    """Per-region [0, 1] scaling bounds fitted on a training set.

    First-order rows (raw envelopes) and second-order rows (products) live on
    different scales, so each region is normalized independently.
    """

    first_order_min: float
    first_order_max: float
    second_order_min: float
    second_order_max: float

    def __post_init__(self):
        if not (self.first_order_min < self.first_order_max):
            raise ConfigError("first-order bounds must satisfy min < max")
        if not (self.second_order_min < self.second_order_max):
            raise ConfigError("second-order bounds must satisfy min < max")


def fit_normalization(maps: Iterable[TmaMap] | Sequence[TmaMap]) -> NormalizationBounds:
    """Global per-region min/max over a training set of maps.

    A degenerate region (min == max, e.g. an all-zero training set) is widened
    by one unit so the scaling stays defined.
    """
    fo_min = fo_max = so_min = so_max = None
    channels = None
    for m in maps:
        if channels is None:
            channels = channels_for_rows(m.rows)
        first = m.data[:channels]
        second = m.data[channels:]
        fo_min = first.min() if fo_min is None else min(fo_min, first.min())
        fo_max = first.max() if fo_max is None else max(fo_max, first.max())
        so_min = second.min() if so_min is None else min(so_min, second.min())
        so_max = second.max() if so_max is None else max(so_max, second.max())
    if channels is None:
        raise ConfigError("cannot fit normalization on an empty training set")
    if fo_max == fo_min:
        fo_max = fo_min + 1.0
    if so_max == so_min:
        so_max = so_min + 1.0
    return NormalizationBounds(
        first_order_min=float(fo_min),
        first_order_max=float(fo_max),
        second_order_min=float(so_min),
        second_order_max=float(so_max),
    )


def normalize_array(data: np.ndarray, bounds: NormalizationBounds, channels: int,
                    out: np.ndarray | None = None) -> np.ndarray:
    """Region-wise (v - min) / (max - min), clamped to [0, 1]."""
    if out is None:
        out = np.empty_like(data, dtype=np.float64)
    fo_span = bounds.first_order_max - bounds.first_order_min
    so_span = bounds.second_order_max - bounds.second_order_min
    np.subtract(data[:channels], bounds.first_order_min, out=out[:channels])
    out[:channels] /= fo_span
    np.subtract(data[channels:], bounds.second_order_min, out=out[channels:])
    out[channels:] /= so_span
    np.clip(out, 0.0, 1.0, out=out)
    return out


def normalize(m: TmaMap, bounds: NormalizationBounds) -> TmaMap:
    """Return a normalized copy of a map; the input is left untouched."""
    channels = channels_for_rows(m.rows)
    return TmaMap(end_index=m.end_index,
                  data=normalize_array(m.data, bounds, channels))
