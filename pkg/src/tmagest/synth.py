"""Synthetic multi-channel sEMG sessions with ground-truth annotations.

Each channel is zero-mean broadband noise (the carrier, band-limited,
amplitude-compressed, and scaled to unit standard deviation) modulated by a
slowly varying gain::

    signal[t, l] = carrier[t, l] * (floor + sum_g amp_g * gain_g[l] * prof_g(t))

where ``prof_g`` is the piecewise-linear activation profile of gesture ``g``:
a burst over the rise, a settle to the hold plateau, and a mirrored braking
burst at release. Distinct gestures use distinct channel gain patterns, so
their envelope steps differ in shape across channels - the structure the
classifier is meant to pick up.

The per-activation amplitude ``amp_g`` is solved from the requested SNR so
that total signal power during a hold, relative to rest, matches the target::

    mean_l (floor + amp * gain_l)^2 = 10^(snr_db / 10) * floor^2

Everything is a pure function of (script, templates, seed): identical inputs
give bit-identical recordings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sp_signal

from .config import SessionConfig
from .errors import ConfigError
from .recording import PHASE_FLEXION, PHASE_RETURN, Annotation, Recording

_CARRIER_BAND_HZ = (20.0, 95.0)


@dataclass
class GestureTemplate:
    """Channel activation pattern and timing of one gesture.

    The activation profile is piecewise linear: a burst to ``burst_gain``
    over the rise, settling to the hold plateau, then a mirrored braking
    burst at release before falling back to zero. The bursts reproduce the
    triphasic agonist/antagonist pattern of ballistic movements and are what
    makes transitions stand clear of the envelope jitter during holds; with
    ``burst_gain=1`` (and ``settle_s=0``) the profile degenerates to a plain
    trapezoid.
    """

    gesture: str
    gains: np.ndarray
    rise_s: float = 0.05
    hold_s: float = 5.0
    fall_s: float = 0.10
    burst_gain: float = 2.0
    settle_s: float = 0.15

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=np.float64)
        if self.gains.ndim != 1:
            raise ConfigError("template gains must be a 1-D vector")
        if np.any(self.gains < 0):
            raise ConfigError("template gains must be non-negative")
        if not np.any(self.gains > 0):
            raise ConfigError("template needs at least one positive gain")
        if min(self.rise_s, self.hold_s, self.fall_s) <= 0:
            raise ConfigError("template rise/hold/fall must be positive")
        if self.burst_gain < 1.0:
            raise ConfigError("burst_gain must be >= 1")
        if self.settle_s < 0:
            raise ConfigError("settle_s must be >= 0")

    @property
    def release_start_s(self) -> float:
        """Offset of the release (braking burst) from the activation start."""
        return self.rise_s + self.settle_s + self.hold_s

    @property
    def active_s(self) -> float:
        return self.release_start_s + self.rise_s + self.fall_s


@dataclass(frozen=True)
class ScriptedGesture:
    """One activation: which gesture, when it starts, rest that follows."""

    gesture: str
    start_s: float
    rest_s: float = 5.0


@dataclass
class SessionScript:
    """Ordered activation schedule plus the noise parameters of a session.

    ``carrier_compression`` is the exponent of the amplitude compression
    applied to the noise carrier (``sign(x) * |x|**a``). 1.0 keeps plain
    Gaussian noise; smaller values stabilize the carrier's local amplitude,
    which keeps the envelope jitter - and with it the difference-signal
    baseline - proportionally small. The default mimics the amplitude
    stability real multi-unit sEMG shows once tens of motor units
    superpose.
    """

    events: list[ScriptedGesture] = field(default_factory=list)
    noise_floor: float = 0.1
    snr_db: float = 20.0
    seed: int = 0
    tail_s: float = 3.0
    carrier_compression: float = 0.2

    def __post_init__(self):
        if self.noise_floor <= 0:
            raise ConfigError("noise_floor must be positive")
        if not 0 < self.carrier_compression <= 1:
            raise ConfigError("carrier_compression must lie in (0, 1]")
        starts = [e.start_s for e in self.events]
        if starts != sorted(starts):
            raise ConfigError("script events must be ordered by start time")


def _activation_profile(t: np.ndarray, start: float,
                        tpl: GestureTemplate) -> np.ndarray:
    """Piecewise-linear profile: burst, settle, hold, braking burst, fall."""
    release = start + tpl.release_start_s
    knots_t = [start, start + tpl.rise_s, start + tpl.rise_s + tpl.settle_s,
               release, release + tpl.rise_s, release + tpl.rise_s + tpl.fall_s]
    knots_v = [0.0, tpl.burst_gain, 1.0, 1.0, tpl.burst_gain, 0.0]
    return np.interp(t, knots_t, knots_v)


def _solve_amplitude(gains: np.ndarray, floor: float, snr_db: float) -> float:
    """Modulation amplitude so hold power over rest power hits the SNR."""
    s = 10.0 ** (snr_db / 10.0)
    L = gains.shape[0]
    a = float(np.sum(gains * gains))
    b = 2.0 * floor * float(np.sum(gains))
    c = L * floor * floor * (1.0 - s)
    return (-b + math.sqrt(b * b - 4.0 * a * c)) / (2.0 * a)


def _carrier(rng: np.random.Generator, n: int, channels: int,
             sample_rate: float, compression: float) -> np.ndarray:
    """Unit-variance broadband noise carrier.

    Gaussian noise confined to the sEMG band, then amplitude-compressed
    (``sign(x) * |x|**a``) and rescaled to unit standard deviation.
    """
    white = rng.standard_normal((n, channels))
    low, high = _CARRIER_BAND_HZ
    nyq = sample_rate / 2.0
    if high >= nyq:
        high = 0.95 * nyq
    sos = sp_signal.butter(4, [low / nyq, high / nyq], btype="bandpass",
                           output="sos")
    shaped = sp_signal.sosfilt(sos, white, axis=0)
    if compression != 1.0:
        shaped = np.sign(shaped) * np.abs(shaped) ** compression
    return shaped / shaped.std(axis=0)


def generate(script: SessionScript, templates: dict[str, GestureTemplate],
             config: SessionConfig) -> Recording:
    """Render a script into a labeled recording.

    Each activation contributes a flexion-onset annotation at its start and a
    return-onset annotation where the fall begins.

    Raises:
        ConfigError: On an unknown gesture id or overlapping activations.
    """
    fs = config.sample_rate
    channels = config.channels
    for event in script.events:
        if event.gesture not in templates:
            raise ConfigError(f"no template for gesture '{event.gesture}'")
        if templates[event.gesture].gains.shape[0] != channels:
            raise ConfigError(
                f"template '{event.gesture}' has "
                f"{templates[event.gesture].gains.shape[0]} gains, "
                f"config expects {channels}"
            )
    end_s = script.tail_s
    prev_end = None
    for event in script.events:
        tpl = templates[event.gesture]
        if prev_end is not None and event.start_s < prev_end:
            raise ConfigError(
                f"activation at {event.start_s:.3f}s overlaps the previous one"
            )
        prev_end = event.start_s + tpl.active_s
        end_s = max(end_s, prev_end + event.rest_s + script.tail_s)

    n = int(round(end_s * fs))
    rng = np.random.default_rng(script.seed)
    carrier = _carrier(rng, n, channels, fs, script.carrier_compression)

    t = np.arange(n) / fs
    modulation = np.full((n, channels), script.noise_floor)
    annotations = []
    for event in script.events:
        tpl = templates[event.gesture]
        amp = _solve_amplitude(tpl.gains, script.noise_floor, script.snr_db)
        profile = _activation_profile(t, event.start_s, tpl)
        modulation += amp * profile[:, None] * tpl.gains[None, :]
        annotations.append(Annotation(
            n=int(round(event.start_s * fs)),
            gesture=event.gesture, phase=PHASE_FLEXION))
        annotations.append(Annotation(
            n=int(round((event.start_s + tpl.release_start_s) * fs)),
            gesture=event.gesture, phase=PHASE_RETURN))

    return Recording(sample_rate=fs, samples=carrier * modulation,
                     annotations=annotations)


def default_template_set(channels: int, gestures: tuple[str, ...],
                         separation: float = 0.8) -> dict[str, GestureTemplate]:
    """Construct gain patterns with pairwise cosine similarity <= separation.

    Templates use short channel blocks stepped around the array; when the
    requested separation forces orthogonality the blocks are made disjoint.
    Template magnitudes additionally differ so no two are identical.

    Raises:
        ConfigError: If the construction cannot reach the separation for the
            given channel and gesture counts.
    """
    G = len(gestures)
    if G < 2:
        raise ConfigError("need at least 2 gestures")
    if G > 2 ** channels - 1:
        raise ConfigError(
            f"{G} distinct non-empty channel subsets do not exist for "
            f"{channels} channels"
        )
    if separation <= 0:
        stride = channels // G
        if stride < 1:
            raise ConfigError(
                f"orthogonal patterns need at least {G} channels, have {channels}"
            )
    else:
        stride = max(1, channels // G)
    width = min(3, stride) if separation <= 0 else min(3, channels)
    weights = np.array([1.0, 0.7, 0.4][:width])

    templates: dict[str, GestureTemplate] = {}
    for i, name in enumerate(gestures):
        gains = np.zeros(channels)
        for m, w in enumerate(weights):
            gains[(i * stride + m) % channels] += w
        templates[name] = GestureTemplate(gesture=name, gains=gains * (1.0 + 0.1 * i))

    vecs = [templates[name].gains for name in gestures]
    worst = 0.0
    for i in range(G):
        for j in range(i + 1, G):
            cos = float(np.dot(vecs[i], vecs[j])
                        / (np.linalg.norm(vecs[i]) * np.linalg.norm(vecs[j])))
            worst = max(worst, cos)
    if worst > separation + 1e-9:
        raise ConfigError(
            f"cannot reach pairwise cosine <= {separation} with "
            f"{channels} channels and {G} gestures (achieved {worst:.3f})"
        )
    return templates


def blocked_script(gestures: tuple[str, ...],
                   templates: dict[str, GestureTemplate],
                   repetitions: int, rest_s: float = 5.0, lead_s: float = 3.0,
                   noise_floor: float = 0.1, snr_db: float = 20.0,
                   seed: int = 0,
                   carrier_compression: float = 0.2) -> SessionScript:
    """Collection-style schedule: all repetitions of each gesture in a block."""
    events = []
    t = lead_s
    for name in gestures:
        tpl = templates[name]
        for _ in range(repetitions):
            events.append(ScriptedGesture(gesture=name, start_s=t, rest_s=rest_s))
            t += tpl.active_s + rest_s
    return SessionScript(events=events, noise_floor=noise_floor,
                         snr_db=snr_db, seed=seed,
                         carrier_compression=carrier_compression)


def balanced_sequence_script(gestures: tuple[str, ...],
                             templates: dict[str, GestureTemplate],
                             count: int, rng: np.random.Generator,
                             rest_s: float = 5.0, lead_s: float = 3.0,
                             noise_floor: float = 0.1, snr_db: float = 20.0,
                             seed: int = 0,
                             carrier_compression: float = 0.2) -> SessionScript:
    """Evaluation-style schedule: a shuffled sequence with equal class counts."""
    G = len(gestures)
    if count % G != 0:
        raise ConfigError(f"count {count} is not a multiple of {G} gestures")
    labels = list(gestures) * (count // G)
    order = rng.permutation(len(labels))
    events = []
    t = lead_s
    for i in order:
        name = labels[int(i)]
        events.append(ScriptedGesture(gesture=name, start_s=t, rest_s=rest_s))
        t += templates[name].active_s + rest_s
    return SessionScript(events=events, noise_floor=noise_floor,
                         snr_db=snr_db, seed=seed,
                         carrier_compression=carrier_compression)
