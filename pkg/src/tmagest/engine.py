"""The streaming recognition loop.

Per iteration the engine waits for one stride of new raw samples, extends the
envelopes, assembles the activation map ending at the newest sample, and
compares it against the map from the previous iteration. When the difference
crosses the calibrated threshold outside the refractory window, the map is
classified - unless alternate-onset suppression is active and this onset is
the expected return to neutral, in which case the onset is reported without
classification.

The engine owns all mutable state (filter memory, frame ring, previous map,
detector, suppression flag) and must be stepped by one caller in order.
Emitted events are immutable values.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .cnn import CnnModel, predict
from .config import SessionConfig
from .dsp import EnvelopeFilter, design_butterworth_lowpass
from .errors import ConfigError, StructuralError, UsageError
from .onset import OnsetDetector, difference
from .recording import Recording
from .tma import FrameRing, TmaMap, feature_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Prediction:
    """A classified onset."""

    n: int
    gesture: str
    confidence: float
    compute_micros: float


@dataclass(frozen=True)
class SuppressedOnset:
    """An onset exempted from classification (expected return to neutral)."""

    n: int
    d_value: float
    compute_micros: float


def event_to_dict(event, include_timing: bool = True) -> dict:
    """JSON-ready form of an emitted event (one object per output line)."""
    if isinstance(event, Prediction):
        d = {"n": event.n, "type": "prediction", "gesture": event.gesture,
             "confidence": event.confidence}
    else:
        d = {"n": event.n, "type": "suppressed", "gesture": None,
             "confidence": None}
    if include_timing:
        d["compute_us"] = event.compute_micros
    return d


class Engine:
    """Streaming gesture recognizer over batches of raw samples."""

    def __init__(self, model: CnnModel, config: SessionConfig,
                 threshold: float | None = None,
                 suppress_alternate: bool | None = None):
        arch = model.architecture
        if arch.input_rows != config.feature_rows:
            raise ConfigError(
                f"model expects {arch.input_rows} feature rows, config "
                f"yields {config.feature_rows}"
            )
        if arch.input_cols != config.map_width:
            raise ConfigError(
                f"model expects {arch.input_cols} map columns, config "
                f"map_width is {config.map_width}"
            )
        if threshold is None:
            if model.calibration is None:
                raise UsageError(
                    "no onset threshold: model carries no calibration and "
                    "none was passed explicitly"
                )
            threshold = model.calibration.threshold
        self.model = model
        self.config = config
        self.threshold = float(threshold)
        self.suppress_alternate = (config.suppress_alternate_onsets
                                   if suppress_alternate is None
                                   else suppress_alternate)
        coeffs = design_butterworth_lowpass(config.envelope_cutoff_hz,
                                            config.sample_rate)
        self._filter = EnvelopeFilter(coeffs, config.channels)
        self._ring = FrameRing(config.map_width, config.channels)
        self._detector = OnsetDetector(self.threshold, config.refractory,
                                       warmup_end=config.warmup_samples)
        self._prev_map: TmaMap | None = None
        self._expect_flexion = True
        self._count = 0

    @property
    def samples_consumed(self) -> int:
        return self._count

    def step(self, batch: np.ndarray):
        """Consume exactly one stride of raw samples.

        Returns a :class:`Prediction`, a :class:`SuppressedOnset`, or None.

        Raises:
            StructuralError: If the batch is not (map_stride, channels).
        """
        t0 = time.perf_counter_ns()
        cfg = self.config
        batch = np.asarray(batch, dtype=np.float64)
        if batch.shape != (cfg.map_stride, cfg.channels):
            raise StructuralError(
                f"expected a ({cfg.map_stride}, {cfg.channels}) batch, "
                f"got {batch.shape}"
            )
        env = self._filter.process(np.abs(batch))
        for i in range(env.shape[0]):
            self._ring.push_values(self._count + i, env[i])
        self._count += env.shape[0]
        newest = self._count - 1

        if not self._ring.is_full:
            return None
        current = TmaMap(end_index=newest, data=feature_matrix(self._ring.window()))
        prev, self._prev_map = self._prev_map, current
        if prev is None:
            return None
        point = difference(current, prev, expected_spacing=cfg.map_stride)
        hit = self._detector.step(point)
        if hit is None:
            return None
        if self.suppress_alternate and not self._expect_flexion:
            self._expect_flexion = True
            return SuppressedOnset(
                n=hit.n, d_value=hit.d_value,
                compute_micros=(time.perf_counter_ns() - t0) / 1000.0)
        if self.suppress_alternate:
            self._expect_flexion = False
        gesture, confidence = predict(self.model, current)
        return Prediction(
            n=hit.n, gesture=gesture, confidence=confidence,
            compute_micros=(time.perf_counter_ns() - t0) / 1000.0)


def iter_batches(samples: np.ndarray, stride: int) -> Iterator[np.ndarray]:
    """Split a (n, channels) block into full stride-sized batches.

    A trailing remainder shorter than one stride is dropped: the loop only
    ever acts on complete strides.
    """
    full = samples.shape[0] - samples.shape[0] % stride
    for start in range(0, full, stride):
        yield samples[start:start + stride]


def run_replay(recording: Recording, model: CnnModel, config: SessionConfig,
               pacing: str = "fast", threshold: float | None = None,
               suppress_alternate: bool | None = None) -> Iterator[object]:
    """Feed a recording through the engine, yielding events as they fire.

    ``pacing="realtime"`` sleeps between strides to mimic live acquisition;
    ``"fast"`` runs unthrottled. The emitted event sequence is identical
    either way (timing fields aside). A stride whose processing overruns its
    real-time budget is logged, never dropped.

    Raises:
        ConfigError: If the recording's sampling rate differs from the config.
    """
    if pacing not in ("fast", "realtime"):
        raise ConfigError(f"unknown pacing '{pacing}'")
    if recording.sample_rate != config.sample_rate:
        raise ConfigError(
            f"recording at {recording.sample_rate} Hz, config expects "
            f"{config.sample_rate} Hz"
        )
    engine = Engine(model, config, threshold=threshold,
                    suppress_alternate=suppress_alternate)
    budget_s = config.map_stride / config.sample_rate
    next_deadline = time.perf_counter() + budget_s
    for batch in iter_batches(recording.samples, config.map_stride):
        start = time.perf_counter()
        event = engine.step(batch)
        if event is not None:
            yield event
        if pacing == "realtime":
            now = time.perf_counter()
            if now - start > budget_s:
                logger.warning(
                    "stride overran its %.1f ms budget (%.1f ms)",
                    budget_s * 1e3, (now - start) * 1e3,
                )
            if next_deadline > now:
                time.sleep(next_deadline - now)
            next_deadline = max(next_deadline + budget_s,
                                time.perf_counter())
