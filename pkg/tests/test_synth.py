import numpy as np
import pytest

from tmagest.config import SessionConfig
from tmagest.dsp import design_butterworth_lowpass, envelope_stream
from tmagest.errors import ConfigError
from tmagest.recording import PHASE_FLEXION, PHASE_RETURN
from tmagest.synth import (
    GestureTemplate,
    ScriptedGesture,
    SessionScript,
    balanced_sequence_script,
    blocked_script,
    default_template_set,
    generate,
)


def pairwise_cosines(templates):
    vecs = [t.gains for t in templates.values()]
    out = []
    for i in range(len(vecs)):
        for j in range(i + 1, len(vecs)):
            out.append(np.dot(vecs[i], vecs[j])
                       / (np.linalg.norm(vecs[i]) * np.linalg.norm(vecs[j])))
    return np.array(out)


class TestTemplates:
    def test_default_set_respects_separation(self):
        g = tuple(f"g{i}" for i in range(5))
        templates = default_template_set(8, g, separation=0.8)
        assert len(templates) == 5
        assert (pairwise_cosines(templates) <= 0.8).all()

    def test_orthogonal_two_gestures(self):
        templates = default_template_set(8, ("a", "b"), separation=0.0)
        assert pairwise_cosines(templates).max() == 0.0

    def test_subset_exhaustion_is_infeasible(self):
        gestures = tuple(f"g{i}" for i in range(8))  # > 2^2 - 1 = 3 subsets
        with pytest.raises(ConfigError):
            default_template_set(2, gestures, separation=0.0)

    def test_orthogonality_needs_enough_channels(self):
        with pytest.raises(ConfigError):
            default_template_set(4, ("a", "b", "c", "d", "e"), separation=0.0)

    def test_templates_are_distinct(self):
        templates = default_template_set(8, tuple(f"g{i}" for i in range(5)))
        seen = [tuple(t.gains) for t in templates.values()]
        assert len(set(seen)) == len(seen)

    def test_template_validation(self):
        with pytest.raises(ConfigError):
            GestureTemplate(gesture="x", gains=np.zeros(4))
        with pytest.raises(ConfigError):
            GestureTemplate(gesture="x", gains=np.array([1.0, -0.1]))
        with pytest.raises(ConfigError):
            GestureTemplate(gesture="x", gains=np.ones(4), burst_gain=0.5)


def tiny_setup(snr_db=20.0, seed=3, hold_s=0.8, rest_s=0.8, reps=2,
               channels=4, gestures=("a", "b")):
    config = SessionConfig(channels=channels, gestures=gestures, seed=seed)
    templates = default_template_set(channels, gestures, separation=0.9)
    for t in templates.values():
        t.hold_s = hold_s
    script = blocked_script(gestures, templates, repetitions=reps,
                            rest_s=rest_s, lead_s=1.0, snr_db=snr_db,
                            seed=seed)
    return config, templates, script


class TestGenerate:
    def test_empty_script_is_pure_noise_floor(self):
        config = SessionConfig(channels=4, gestures=("a", "b"))
        templates = default_template_set(4, ("a", "b"))
        rec = generate(SessionScript(events=[], seed=1), templates, config)
        assert rec.annotations == []
        assert rec.num_samples == int(3.0 * config.sample_rate)
        # amplitude stays at the floor level
        assert np.abs(rec.samples).max() < 10 * 0.1

    def test_deterministic_per_seed(self):
        config, templates, script = tiny_setup()
        a = generate(script, templates, config)
        b = generate(script, templates, config)
        np.testing.assert_array_equal(a.samples, b.samples)
        assert a.annotations == b.annotations

    def test_annotation_indices_mark_rise_and_release(self):
        config, templates, script = tiny_setup()
        rec = generate(script, templates, config)
        fs = config.sample_rate
        flex = rec.onsets(PHASE_FLEXION)
        ret = rec.onsets(PHASE_RETURN)
        assert len(flex) == len(ret) == 4
        for event, a in zip(script.events, flex):
            assert a.n == int(round(event.start_s * fs))
            assert a.gesture == event.gesture
        for event, a in zip(script.events, ret):
            tpl = templates[event.gesture]
            assert a.n == int(round((event.start_s + tpl.release_start_s) * fs))

    def test_single_channel_activation_rises_only_there(self):
        # gain on channel 0 only: its envelope steps up, the others stay
        config = SessionConfig(channels=4, gestures=("solo", "other"))
        templates = {
            "solo": GestureTemplate(gesture="solo",
                                    gains=np.array([1.0, 0, 0, 0]),
                                    hold_s=2.0, burst_gain=1.0,
                                    settle_s=0.0),
            "other": GestureTemplate(gesture="other",
                                     gains=np.array([0, 1.0, 0, 0])),
        }
        script = SessionScript(
            events=[ScriptedGesture(gesture="solo", start_s=2.0)],
            seed=9)
        rec = generate(script, templates, config)
        env = envelope_stream(rec.samples, design_butterworth_lowpass(
            config.envelope_cutoff_hz, config.sample_rate))
        fs = int(config.sample_rate)
        rest = env[fs:2 * fs]          # pre-activation
        hold = env[int(2.8 * fs):int(3.8 * fs)]
        amp_solo = hold[:, 0].mean() - rest[:, 0].mean()
        assert amp_solo > 5 * rest[:, 0].mean()
        for ch in range(1, 4):
            shift = abs(hold[:, ch].mean() - rest[:, ch].mean())
            assert shift < 0.05 * amp_solo

    def test_snr_contract(self):
        config, templates, script = tiny_setup(snr_db=20.0, hold_s=2.0,
                                               rest_s=2.0)
        rec = generate(script, templates, config)
        fs = config.sample_rate
        hold_pow, rest_pow = [], []
        for event in script.events:
            tpl = templates[event.gesture]
            h0 = int((event.start_s + tpl.rise_s + tpl.settle_s + 0.2) * fs)
            h1 = int((event.start_s + tpl.release_start_s - 0.2) * fs)
            hold_pow.append((rec.samples[h0:h1] ** 2).mean())
            r0 = int((event.start_s + tpl.active_s + 0.3) * fs)
            r1 = int(r0 + 1.2 * fs)
            rest_pow.append((rec.samples[r0:r1] ** 2).mean())
        measured = 10 * np.log10(np.mean(hold_pow) / np.mean(rest_pow))
        assert abs(measured - 20.0) < 1.0

    def test_rest_interval_is_stationary(self):
        # variance of the envelope over two halves of a long rest interval
        config = SessionConfig(channels=4, gestures=("a", "b"))
        templates = default_template_set(4, ("a", "b"))
        rec = generate(SessionScript(events=[], tail_s=40.0, seed=5),
                       templates, config)
        env = envelope_stream(rec.samples, design_butterworth_lowpass(
            config.envelope_cutoff_hz, config.sample_rate))
        half = env.shape[0] // 2
        v1 = env[400:half].var(axis=0)
        v2 = env[half:].var(axis=0)
        ratio = v1 / v2
        assert (ratio > 0.5).all() and (ratio < 2.0).all()

    def test_unknown_gesture_rejected(self):
        config, templates, _ = tiny_setup()
        script = SessionScript(events=[ScriptedGesture("nope", 1.0)])
        with pytest.raises(ConfigError):
            generate(script, templates, config)

    def test_overlapping_events_rejected(self):
        config, templates, _ = tiny_setup()
        script = SessionScript(events=[ScriptedGesture("a", 1.0),
                                       ScriptedGesture("b", 1.2)])
        with pytest.raises(ConfigError):
            generate(script, templates, config)

    def test_gaussian_carrier_option(self):
        config, templates, script = tiny_setup()
        script.carrier_compression = 1.0
        rec = generate(script, templates, config)
        assert rec.num_samples > 0


class TestScripts:
    def test_blocked_counts_and_order(self):
        config, templates, script = tiny_setup(reps=3)
        names = [e.gesture for e in script.events]
        assert names == ["a"] * 3 + ["b"] * 3

    def test_balanced_sequence_counts(self):
        gestures = ("a", "b", "c")
        templates = default_template_set(6, gestures)
        rng = np.random.default_rng(0)
        script = balanced_sequence_script(gestures, templates, 12, rng)
        names = [e.gesture for e in script.events]
        assert sorted(names) == sorted(gestures * 4)
        assert names != sorted(names)  # actually shuffled

    def test_balanced_sequence_needs_divisible_count(self):
        gestures = ("a", "b", "c")
        templates = default_template_set(6, gestures)
        with pytest.raises(ConfigError):
            balanced_sequence_script(gestures, templates, 10,
                                     np.random.default_rng(0))
