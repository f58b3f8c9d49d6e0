"""Real-time multi-channel sEMG gesture recognition with activation maps."""

from .config import SessionConfig
from .dsp import (
    BiquadCoefficients,
    EnvelopeFilter,
    EnvelopeFrame,
    RawSample,
    design_butterworth_lowpass,
    envelope_stream,
    rectify,
)
from .engine import Engine, Prediction, SuppressedOnset, run_replay
from .errors import TmagestError
from .cnn import (
    CnnArchitecture,
    CnnModel,
    TrainingExample,
    forward,
    loss_and_gradients,
    predict,
    train,
)
from .onset import (
    DifferencePoint,
    OnsetDetector,
    OnsetEvent,
    ThresholdCalibration,
    calibrate_threshold,
    difference,
    difference_series,
)
from .pipeline import EvaluationReport, evaluate, extract_training_set
from .recording import Annotation, Recording
from .synth import GestureTemplate, SessionScript, default_template_set, generate
from .tma import (
    FrameRing,
    NormalizationBounds,
    TmaMap,
    assemble_map,
    build_feature_vector,
    fit_normalization,
    normalize,
)

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "BiquadCoefficients",
    "CnnArchitecture",
    "CnnModel",
    "DifferencePoint",
    "Engine",
    "EnvelopeFilter",
    "EnvelopeFrame",
    "EvaluationReport",
    "FrameRing",
    "GestureTemplate",
    "NormalizationBounds",
    "OnsetDetector",
    "OnsetEvent",
    "Prediction",
    "RawSample",
    "Recording",
    "SessionConfig",
    "SessionScript",
    "SuppressedOnset",
    "ThresholdCalibration",
    "TmaMap",
    "TmagestError",
    "TrainingExample",
    "assemble_map",
    "build_feature_vector",
    "calibrate_threshold",
    "default_template_set",
    "design_butterworth_lowpass",
    "difference",
    "difference_series",
    "envelope_stream",
    "evaluate",
    "extract_training_set",
    "fit_normalization",
    "forward",
    "generate",
    "loss_and_gradients",
    "normalize",
    "predict",
    "rectify",
    "run_replay",
    "train",
]
