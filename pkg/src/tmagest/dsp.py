"""Causal envelope extraction for multi-channel sEMG streams.

The envelope of an sEMG channel approximates the amplitude modulation of the
underlying muscle activity. It is obtained here in two causal steps:

1. full-wave rectification, ``|x[n]|``
2. low-pass filtering with a second-order Butterworth biquad

The filter runs as a direct-form-II-transposed recursion so it can be stepped
sample by sample in a real-time loop. Zero-phase (forward-backward) filtering
is deliberately not offered: it needs future samples and therefore cannot run
streaming. The price is the filter's group delay, which downstream onset
timing simply inherits.

All arithmetic is 64-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, StructuralError

_SQRT2 = math.sqrt(2.0)


@dataclass
class RawSample:
    """One multi-channel sample of the raw signal.

    Attributes:
        t: Sample index (consecutive integers at the sampling rate).
        channels: Signed amplitudes, one per electrode.
    """

    t: int
    channels: np.ndarray

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        if self.channels.ndim != 1:
            raise StructuralError("sample channels must be a 1-D vector")


@dataclass
class EnvelopeFrame:
    """One time step of the envelope stream (same index as its raw sample).

    Individual values may transiently undershoot zero: a causal IIR filter is
    free to overshoot on steps. Only the steady-state response to non-negative
    input is guaranteed non-negative.
    """

    t: int
    values: np.ndarray


@dataclass(frozen=True)
class BiquadCoefficients:
    """Normalized (a0 = 1) coefficients of one second-order section.

    The difference equation realized by :class:`EnvelopeFilter` is::

        y[n] = b0*x[n] + b1*x[n-1] + b2*x[n-2] - a1*y[n-1] - a2*y[n-2]
    """

    b0: float
    b1: float
    b2: float
    a1: float
    a2: float

    def dc_gain(self) -> float:
        return (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)

    def magnitude_at(self, freq_hz: float, sample_rate: float) -> float:
        """Transfer-function magnitude |H(e^{j*2*pi*f/fs})|."""
        w = 2.0 * math.pi * freq_hz / sample_rate
        z1 = complex(math.cos(-w), math.sin(-w))
        z2 = z1 * z1
        num = self.b0 + self.b1 * z1 + self.b2 * z2
        den = 1.0 + self.a1 * z1 + self.a2 * z2
        return abs(num / den)

    def is_stable(self) -> bool:
        # Jury criterion for a second-order denominator.
        return abs(self.a2) < 1.0 and abs(self.a1) < 1.0 + self.a2


def design_butterworth_lowpass(cutoff_hz: float, sample_rate: float) -> BiquadCoefficients:
    """Design a second-order Butterworth low-pass biquad.

    The analog prototype ``H(s) = 1 / (s^2 + sqrt(2)s + 1)`` is mapped to the
    z-domain by the bilinear transform with the cutoff prewarped so that the
    -3 dB point lands exactly on ``cutoff_hz`` after warping.

    Args:
        cutoff_hz: -3 dB corner frequency in Hz.
        sample_rate: Sampling frequency in Hz.

    Returns:
        Coefficients with unity DC gain.

    Raises:
        ConfigError: If the cutoff is outside (0, sample_rate / 2).
    """
    if sample_rate <= 0:
        raise ConfigError(f"sample_rate must be positive, got {sample_rate}")
    if not 0 < cutoff_hz < sample_rate / 2:
        raise ConfigError(
            f"cutoff must lie in (0, {sample_rate / 2}) Hz, got {cutoff_hz}"
        )
    c = 1.0 / math.tan(math.pi * cutoff_hz / sample_rate)
    norm = 1.0 / (1.0 + _SQRT2 * c + c * c)
    return BiquadCoefficients(
        b0=norm,
        b1=2.0 * norm,
        b2=norm,
        a1=2.0 * (1.0 - c * c) * norm,
        a2=(1.0 - _SQRT2 * c + c * c) * norm,
    )


def rectify(sample: RawSample) -> RawSample:
    """Full-wave rectification: every channel replaced by its absolute value."""
    return RawSample(t=sample.t, channels=np.abs(sample.channels))


class EnvelopeFilter:
    """Per-channel streaming biquad bank (direct form II transposed).

    One instance owns the filter memory of one logical stream and must be
    stepped by a single caller in sample order. Coefficients are immutable
    and may be shared between instances.
    """

    def __init__(self, coeffs: BiquadCoefficients, channels: int):
        if channels < 1:
            raise ConfigError(f"channels must be >= 1, got {channels}")
        self.coeffs = coeffs
        self.channels = channels
        self._z1 = np.zeros(channels)
        self._z2 = np.zeros(channels)

    def reset(self) -> None:
        """Return to zero state (as at construction)."""
        self._z1[:] = 0.0
        self._z2[:] = 0.0

    def step_values(self, x: np.ndarray) -> np.ndarray:
        """Advance the recursion by one sample for every channel."""
        c = self.coeffs
        y = c.b0 * x + self._z1
        self._z1 = c.b1 * x - c.a1 * y + self._z2
        self._z2 = c.b2 * x - c.a2 * y
        return y

    def filter_step(self, rectified: RawSample) -> EnvelopeFrame:
        """One filter update on an already rectified sample.

        Raises:
            StructuralError: If the channel count does not match the state.
        """
        if rectified.channels.shape[0] != self.channels:
            raise StructuralError(
                f"expected {self.channels} channels, got {rectified.channels.shape[0]}"
            )
        return EnvelopeFrame(t=rectified.t, values=self.step_values(rectified.channels))

    def process(self, block: np.ndarray) -> np.ndarray:
        """Filter a (samples, channels) block in time order.

        Identical arithmetic to repeated :meth:`step_values` calls; exists so
        offline consumers share the streaming code path exactly.
        """
        block = np.asarray(block, dtype=np.float64)
        if block.ndim != 2 or block.shape[1] != self.channels:
            raise StructuralError(
                f"expected a (n, {self.channels}) block, got {block.shape}"
            )
        c = self.coeffs
        z1, z2 = self._z1, self._z2
        out = np.empty_like(block)
        for i in range(block.shape[0]):
            x = block[i]
            y = c.b0 * x + z1
            z1 = c.b1 * x - c.a1 * y + z2
            z2 = c.b2 * x - c.a2 * y
            out[i] = y
        self._z1, self._z2 = z1, z2
        return out


def envelope_stream(raw: np.ndarray, coeffs: BiquadCoefficients) -> np.ndarray:
    """Rectify and filter a whole (samples, channels) recording from zero state."""
    raw = np.asarray(raw, dtype=np.float64)
    filt = EnvelopeFilter(coeffs, raw.shape[1])
    return filt.process(np.abs(raw))
