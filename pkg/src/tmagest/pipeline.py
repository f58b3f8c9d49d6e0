"""Offline orchestration: training-set extraction and batch evaluation.

Extraction mirrors how the classifier is used online: the envelope stream is
computed causally (bit-identical to the streaming filter), and one activation
map is taken at every sample time inside a window centered on each labeled
onset. Evaluation replays a recording through the very same engine code path
used live and scores the emitted events against the ground truth.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .cnn import CnnModel, TrainingExample
from .config import SessionConfig
from .dsp import design_butterworth_lowpass, envelope_stream
from .engine import Prediction, run_replay
from .errors import UsageError
from .onset import difference_series
from .recording import PHASE_FLEXION, PHASE_REST, PHASE_RETURN, Recording
from .tma import TmaMap, feature_matrix

logger = logging.getLogger(__name__)

MATCH_TOLERANCE_S = 1.0


def _envelopes(recording: Recording, config: SessionConfig) -> np.ndarray:
    coeffs = design_butterworth_lowpass(config.envelope_cutoff_hz,
                                        config.sample_rate)
    return envelope_stream(recording.samples, coeffs)


def extract_training_set(recording: Recording,
                         config: SessionConfig) -> list[TrainingExample]:
    """Unnormalized training examples around every labeled onset.

    For an onset at ``n0`` one map is taken at each sample time in
    ``[n0 - w/2, n0 + w/2)`` where ``w`` is the extraction width - exactly
    ``w`` maps per onset, all labeled with the onset's gesture. Onsets whose
    window (including map history) would leave the recording are dropped with
    a warning. The returned maps are read-only views into one shared feature
    matrix.

    Raises:
        UsageError: If the recording has no labeled onsets, or labeled onsets
            are closer together than the extraction width.
    """
    onsets = recording.onsets(PHASE_FLEXION)
    if not onsets:
        raise UsageError("recording has no labeled onsets to extract around")
    marks = [a.n for a in recording.annotations if a.phase != PHASE_REST]
    for a, b in zip(marks, marks[1:]):
        if b - a < config.extraction_width:
            raise UsageError(
                f"onsets at {a} and {b} are closer than the extraction "
                f"width ({config.extraction_width}); labels would overlap"
            )
    feats = feature_matrix(_envelopes(recording, config))
    n_samples = recording.num_samples
    width = config.extraction_width
    half = width // 2
    map_w = config.map_width
    examples: list[TrainingExample] = []
    for a in onsets:
        lo = a.n - half
        if lo - map_w + 1 < 0 or lo + width - 1 >= n_samples:
            logger.warning(
                "dropping onset at %d: extraction window leaves the recording",
                a.n,
            )
            continue
        for t in range(lo, lo + width):
            examples.append(TrainingExample(
                map=TmaMap(end_index=t, data=feats[:, t - map_w + 1:t + 1]),
                label=a.gesture,
            ))
    return examples


def calibration_segments(recording: Recording, config: SessionConfig,
                         onset_exclusion: tuple[int, int] | None = None,
                         ) -> list[tuple[str, np.ndarray]]:
    """Per-gesture difference-signal segments for threshold calibration.

    The difference series of the whole recording (warm-up excluded) is split
    at midpoints between consecutive labeled onsets; each segment - the
    activation plus its surrounding rest - is attributed to its gesture.

    Points inside an exclusion window around every labeled onset are left
    out of the segments: the calibrated spread has to describe the signal's
    steady behavior (rest and hold), not the very transients the threshold
    is meant to catch. Were the transition peaks themselves pooled into the
    per-gesture spread, the threshold would scale with the peaks and sit
    above most of them regardless of signal quality (each transition adds
    map_width times its squared peak to the summed squares, which at the
    standard multiplier always overshoots). The default window
    keeps the late tail of each transition inside the pool, which gives the
    threshold a safety margin above steady-state excursions.

    Args:
        onset_exclusion: (before, after) in samples around each labeled
            onset; defaults to (2 * map_stride, map_width + 2 * map_stride).

    Raises:
        UsageError: If the recording has no labeled onsets.
    """
    onsets = recording.onsets(PHASE_FLEXION)
    if not onsets:
        raise UsageError("recording has no labeled onsets to calibrate from")
    if onset_exclusion is None:
        onset_exclusion = (2 * config.map_stride,
                           config.map_width + 2 * config.map_stride)
    env = _envelopes(recording, config)
    points = difference_series(env, config.map_width, config.map_stride,
                               min_index=config.warmup_samples)
    if not points:
        return []
    ns = np.array([p.n for p in points])
    values = np.array([p.value for p in points])
    keep = np.ones(ns.shape[0], dtype=bool)
    before, after = onset_exclusion
    for a in recording.annotations:
        if a.phase == PHASE_REST:
            continue
        keep &= ~((ns >= a.n - before) & (ns <= a.n + after))
    starts = [a.n for a in onsets]
    boundaries = [(a + b) // 2 for a, b in zip(starts, starts[1:])]
    which = np.searchsorted(boundaries, ns, side="right")
    return [(onsets[i].gesture, values[keep & (which == i)])
            for i in range(len(onsets))]


@dataclass
class EvaluationReport:
    """Scores of one replayed session against its ground truth.

    The confusion matrix has one row per gesture (true flexion events) and
    one column per gesture plus a trailing "missed" column, so each row sums
    to that gesture's ground-truth event count.
    """

    gestures: tuple[str, ...]
    confusion: np.ndarray
    onset_recall: float
    onset_false_positive_rate: float
    classification_accuracy: float
    per_class_accuracy: dict[str, float]
    n_true_onsets: int
    n_events: int
    n_predictions: int
    n_suppressed: int
    latency_us: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "gestures": list(self.gestures),
            "confusion": self.confusion.tolist(),
            "confusion_columns": list(self.gestures) + ["missed"],
            "onset_recall": self.onset_recall,
            "onset_false_positive_rate": self.onset_false_positive_rate,
            "classification_accuracy": self.classification_accuracy,
            "per_class_accuracy": dict(self.per_class_accuracy),
            "n_true_onsets": self.n_true_onsets,
            "n_events": self.n_events,
            "n_predictions": self.n_predictions,
            "n_suppressed": self.n_suppressed,
            "latency_us": dict(self.latency_us),
        }

    def format_table(self) -> str:
        lines = []
        name_w = max(len(g) for g in self.gestures) + 2
        lines.append(f"{'gesture':<{name_w}} {'events':>7} {'accuracy %':>11}")
        for i, g in enumerate(self.gestures):
            total = int(self.confusion[i].sum())
            acc = self.per_class_accuracy[g] * 100.0
            lines.append(f"{g:<{name_w}} {total:>7} {acc:>11.2f}")
        lines.append(f"{'total':<{name_w}} {int(self.confusion.sum()):>7} "
                     f"{self.classification_accuracy * 100.0:>11.2f}")
        lines.append("")
        lines.append(f"onset recall: {self.onset_recall:.4f}   "
                     f"false positives per true event: "
                     f"{self.onset_false_positive_rate:.4f}")
        if self.latency_us:
            lines.append(
                "prediction compute: mean {mean:.0f} us, p50 {p50:.0f} us, "
                "p95 {p95:.0f} us, max {max:.0f} us".format(**self.latency_us))
        return "\n".join(lines)


def _match_events(event_ns: list[int], truth_ns: list[int],
                  tolerance: int) -> dict[int, int]:
    """Greedy nearest matching event->truth within a tolerance, one-to-one."""
    matches: dict[int, int] = {}
    used = set()
    for ei, en in enumerate(event_ns):
        best = None
        best_gap = tolerance + 1
        for ti, tn in enumerate(truth_ns):
            if ti in used:
                continue
            gap = abs(en - tn)
            if gap <= tolerance and gap < best_gap:
                best, best_gap = ti, gap
        if best is not None:
            matches[ei] = best
            used.add(best)
    return matches


def evaluate(model: CnnModel, recording: Recording,
             config: SessionConfig) -> EvaluationReport:
    """Replay a labeled recording through the engine and score the events.

    Events are matched one-to-one to ground-truth onsets within +/-1 s (the
    refractory period guarantees unambiguous matching at that tolerance).
    Classification is scored over true flexion events; a flexion event whose
    matched emission is missing or unclassified counts in the "missed"
    column. A recording with no annotated gestures is legal: every emitted
    event then counts as a false positive.

    Raises:
        ConfigError: If model and config disagree on map geometry.
        UsageError: If the model is missing bounds or labels.
    """
    model.require_ready()
    gestures = model.labels
    events = list(run_replay(recording, model, config, pacing="fast"))

    flexions = recording.onsets(PHASE_FLEXION)
    returns = recording.onsets(PHASE_RETURN)
    truths = sorted(flexions + returns, key=lambda a: a.n)
    tolerance = int(round(MATCH_TOLERANCE_S * config.sample_rate))
    matches = _match_events([e.n for e in events], [a.n for a in truths],
                            tolerance)

    g_index = {g: i for i, g in enumerate(gestures)}
    confusion = np.zeros((len(gestures), len(gestures) + 1), dtype=np.int64)
    truth_to_event = {ti: ei for ei, ti in matches.items()}
    for ti, truth in enumerate(truths):
        if truth.phase != PHASE_FLEXION:
            continue
        row = g_index[truth.gesture]
        ei = truth_to_event.get(ti)
        if ei is not None and isinstance(events[ei], Prediction):
            confusion[row, g_index[events[ei].gesture]] += 1
        else:
            confusion[row, -1] += 1

    n_truths = len(truths)
    matched_truths = len(matches)
    false_pos = len(events) - matched_truths
    diag = np.array([confusion[i, i] for i in range(len(gestures))])
    row_sums = confusion.sum(axis=1)
    # Vacuous scores (no events of a class / no truths at all) read as 1.0:
    # nothing was there to get wrong.
    per_class = {
        g: (float(diag[i] / row_sums[i]) if row_sums[i] else 1.0)
        for i, g in enumerate(gestures)
    }
    overall = float(diag.sum() / row_sums.sum()) if row_sums.sum() else 1.0

    predictions = [e for e in events if isinstance(e, Prediction)]
    latency: dict[str, float] = {}
    if predictions:
        lat = np.array([p.compute_micros for p in predictions])
        latency = {"mean": float(lat.mean()),
                   "p50": float(np.percentile(lat, 50)),
                   "p95": float(np.percentile(lat, 95)),
                   "max": float(lat.max())}

    return EvaluationReport(
        gestures=tuple(gestures),
        confusion=confusion,
        onset_recall=matched_truths / n_truths if n_truths else 1.0,
        onset_false_positive_rate=false_pos / max(n_truths, 1),
        classification_accuracy=overall,
        per_class_accuracy=per_class,
        n_true_onsets=n_truths,
        n_events=len(events),
        n_predictions=len(predictions),
        n_suppressed=len(events) - len(predictions),
        latency_us=latency,
    )
