import dataclasses
from types import SimpleNamespace

import numpy as np
import pytest

from tmagest import cnn, synth
from tmagest.config import SessionConfig
from tmagest.onset import calibrate_threshold
from tmagest.pipeline import calibration_segments, extract_training_set
from tmagest.tma import fit_normalization, normalize_array

SMALL_CONFIG_KWARGS = dict(
    sample_rate=200.0,
    channels=4,
    envelope_cutoff_hz=2.0,
    map_width=40,
    map_stride=10,
    refractory=150,
    extraction_width=60,
    gestures=("grip", "point", "spread"),
    conv1_filters=3,
    conv2_filters=4,
    batch_size=16,
    learning_rate=0.05,
    epochs=8,
    seed=11,
)


@pytest.fixture
def config():
    return SessionConfig()


@pytest.fixture
def small_config():
    """Scaled-down pipeline for fast end-to-end tests."""
    return SessionConfig(**SMALL_CONFIG_KWARGS)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_templates(config, hold_s=1.2):
    """Templates with transitions short enough for the small map window."""
    templates = synth.default_template_set(config.channels, config.gestures,
                                           separation=0.9)
    for tpl in templates.values():
        tpl.hold_s = hold_s
        tpl.rise_s = 0.025
        tpl.settle_s = 0.05
        tpl.fall_s = 0.05
    return templates


@pytest.fixture(scope="session")
def trained_setup():
    """One small synthetic session trained end to end, shared read-only."""
    config = SessionConfig(**SMALL_CONFIG_KWARGS)
    templates = make_templates(config)
    train_script = synth.blocked_script(config.gestures, templates,
                                        repetitions=4, rest_s=1.5,
                                        lead_s=2.0, seed=211)
    train_rec = synth.generate(train_script, templates, config)
    segments = calibration_segments(train_rec, config)
    calibration = calibrate_threshold(segments, config.threshold_multiplier,
                                      expected_gestures=config.gestures)
    examples = extract_training_set(train_rec, config)
    bounds = fit_normalization(ex.map for ex in examples)
    for ex in examples:
        ex.map = dataclasses.replace(
            ex.map, data=normalize_array(ex.map.data, bounds, config.channels))
    model = cnn.train(examples, config, bounds=bounds,
                      calibration=calibration)
    eval_script = synth.balanced_sequence_script(
        config.gestures, templates, count=9,
        rng=cnn.derive_rng(config.seed, "eval-sequence"),
        rest_s=1.5, lead_s=2.0, seed=311)
    eval_rec = synth.generate(eval_script, templates, config)
    return SimpleNamespace(config=config, templates=templates,
                           calibration=calibration, model=model,
                           train_recording=train_rec,
                           eval_recording=eval_rec,
                           eval_script=eval_script)
