import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from advpost.audio import Waveform
from advpost.evaluate import (EvaluationError, compute_dsr, deception_success_rate, eer_delta, mt_summary,
                              read_score_table, recount_dsr, silence_speech_mt, spectrogram_diff)
from advpost.synth import toy_clip


def tagged(values, prefix):
    """Waveforms whose first sample doubles as a precomputed detector score."""
    return [Waveform(np.array([v, 0.0]), metadata={"path": f"{prefix}{i}"}) for i, v in enumerate(values)]


def first_sample(w):
    return float(w.samples[0])


def test_dsr_arithmetic():
    assert deception_success_rate(47, 100, 1) == 0.47
    assert deception_success_rate(100, 100, 1) == 1.0
    assert deception_success_rate(0, 100, 3) == 0.0
    with pytest.raises(EvaluationError):
        deception_success_rate(201, 100, 2)
    with pytest.raises(EvaluationError):
        deception_success_rate(0, 0, 1)


def test_dsr_all_and_none_fooled():
    genuine = tagged([0.8, 0.9, 0.95], "g")
    fooled = compute_dsr([first_sample], tagged([0.99, 0.97], "f"), genuine)
    assert fooled.dsr == 1.0
    caught = compute_dsr([first_sample], tagged([0.1, 0.2], "f"), genuine)
    assert caught.dsr == 0.0


def test_dsr_47_of_100():
    fakes = tagged([0.9] * 47 + [0.1] * 53, "f")
    rep = compute_dsr([first_sample], fakes, tagged([0.8], "g"), thresholds=[0.5])
    assert (rep.W, rep.A, rep.N, rep.dsr) == (47, 100, 1, 0.47)


def test_dsr_two_detectors_half():
    fakes = tagged([0.5] * 100, "f")
    rep = compute_dsr([lambda w: 1.0, lambda w: 0.0], fakes, tagged([0.9], "g"), thresholds=[0.5, 0.5])
    assert rep.dsr == 0.5 and rep.N == 2 and rep.A == 100


def test_table_round_trip_recount(tmp_path, rng):
    fakes = tagged(rng.uniform(0, 1, 30), "f")
    genuine = tagged(rng.uniform(0.3, 1, 30), "g")
    rep = compute_dsr([first_sample, lambda w: 1 - first_sample(w)], fakes, genuine, names=["a", "b"])
    path = tmp_path / "table.csv"
    rep.write_table(path)
    assert recount_dsr(read_score_table(path)) == (rep.W, rep.A, rep.N)
    rep.write_json(tmp_path / "report.json")
    meta = json.loads((tmp_path / "report.json").read_text())["metadata"]
    assert "fake" in meta["A_definition"]


def test_failed_fakes_excluded():
    def picky(w):
        if w.metadata["path"] == "f1":
            raise RuntimeError("cannot score")
        return first_sample(w)

    rep = compute_dsr([picky], tagged([0.9, 0.9, 0.1], "f"), tagged([0.5, 0.8], "g"))
    assert rep.A == 2
    assert rep.excluded[0]["path"] == "f1"


def test_dsr_rejects_empty_inputs():
    with pytest.raises(EvaluationError):
        compute_dsr([], tagged([0.1], "f"), tagged([0.9], "g"))
    with pytest.raises(EvaluationError):
        compute_dsr([first_sample], [], tagged([0.9], "g"))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 40), min_size=1, max_size=30), st.lists(st.integers(0, 40), min_size=1, max_size=30))
def test_dsr_invariant_under_increasing_transform(fake, gen):
    # grid scores keep the transform strictly increasing in floating point
    fake, gen = [k / 40 for k in fake], [k / 40 for k in gen]
    f = lambda s: np.exp(2 * s) + s ** 3
    plain = compute_dsr([first_sample], tagged(fake, "f"), tagged(gen, "g"))
    warped = compute_dsr([lambda w: f(first_sample(w))], tagged(fake, "f"), tagged(gen, "g"))
    assert warped.W == plain.W


def test_eer_delta_identity_swap_and_perfect(rng):
    genuine = tagged(rng.uniform(0.4, 1, 20), "g")
    before, after = tagged(rng.uniform(0, 0.6, 20), "b"), tagged(rng.uniform(0.2, 0.9, 20), "a")
    e_b, e_a = eer_delta(first_sample, genuine, before, after)
    assert eer_delta(first_sample, genuine, before, before) == (e_b, e_b)
    assert eer_delta(first_sample, genuine, after, before) == (e_a, e_b)
    perfect = tagged([0.9, 0.95], "g")
    assert eer_delta(first_sample, perfect, tagged([0.1], "b"), tagged([0.2], "a")) == (0.0, 0.0)


def _speech_and_silence(n=16000):
    x = np.zeros(n)
    t = np.arange(n // 2) / 16000
    x[n // 4:3 * n // 4] = 0.5 * np.sin(2 * np.pi * 200 * t)
    x += 1e-4 * np.random.default_rng(0).standard_normal(n)
    return Waveform(x)


def test_zero_residual_gives_zero_mt():
    w = _speech_and_silence()
    r = silence_speech_mt(w, Waveform(np.zeros(len(w))))
    assert r.speech == 0.0 and r.silence == 0.0


def test_residual_only_in_silence_is_flagged():
    w = _speech_and_silence()
    p = np.zeros(len(w))
    p[: len(w) // 8] = 0.01
    r = silence_speech_mt(w, Waveform(p))
    assert r.silence > r.speech
    assert mt_summary([(w, Waveform(p))])[2] == 0.0


def test_absent_class_is_none():
    w = Waveform(0.5 * np.sin(np.linspace(0, 400 * np.pi, 8000)))
    r = silence_speech_mt(w, Waveform(np.full(8000, 0.01)))
    assert r.silence is None and r.speech is not None
    with pytest.raises(EvaluationError):
        silence_speech_mt(w, Waveform(np.zeros(10)))


def test_spectrogram_diff_identical(tmp_path):
    w = toy_clip("genuine", np.random.default_rng(0))
    bands = spectrogram_diff(w, w, tmp_path / "spec.png")
    assert set(bands.values()) == {0.0}
    assert (tmp_path / "spec.png").stat().st_size > 0
    dump = np.load(tmp_path / "spec.npz")
    assert not dump["diff_db"].any()
    assert json.loads((tmp_path / "spec.json").read_text())["mean_abs_log_diff_db"] == bands


def test_spectrogram_diff_noise_hits_high_bands_harder(tmp_path):
    rng = np.random.default_rng(1)
    w = toy_clip("genuine", rng)
    noisy = w.replace(w.samples + 0.01 * rng.standard_normal(len(w)))
    bands = spectrogram_diff(w, noisy, tmp_path / "noise.png")
    values = list(bands.values())
    assert len(values) == 8
    assert np.mean(values[:2]) < np.mean(values[-2:])


def test_spectrogram_diff_length_mismatch(tmp_path):
    with pytest.raises(EvaluationError):
        spectrogram_diff(Waveform(np.zeros(1000)), Waveform(np.zeros(999)), tmp_path / "x.png")
