"""Acceptance criteria, one test each.

Every test records a one-line verdict that is printed in the terminal summary
under "acceptance criteria", then asserts it.
"""

import time

import numpy as np
import pytest
import torch

import conftest
from advpost.adversarial import (TrainSchedule, modification_magnitude, total_loss, train_rgn)
from advpost.audio import Waveform
from advpost.augment import apply_gain, augment_random, default_menu, downsample_roundtrip
from advpost.detector import Detector, compute_eer
from advpost.evaluate import compute_dsr, read_score_table, recount_dsr
from advpost.lfcc import LfccConfig, extract_lfcc
from advpost.rgn import GeneratorConfig, ResidualGenerator
from advpost.synth import toy_clip
from oracles import count_fooled, reference_lfcc, scalar_mt, sweep_eer, tone_power_db

MINI_LFCC = LfccConfig(win_ms=1.0, hop_ms=0.5, n_filters=8, n_coeff=4)


def record(n, ok, detail):
    conftest.ACCEPTANCE[n] = (bool(ok), detail)
    assert ok, f"criterion {n}: {detail}"


def tiny_detector(seed, lfcc=None, dtype=torch.float32):
    torch.manual_seed(seed)
    return Detector(lfcc, arch="tiny").to(dtype).eval()


def test_01_loss_identities():
    rng = np.random.default_rng(1)
    det = tiny_detector(0)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(800, 2400))
        s = rng.uniform(-1, 1, n) * rng.uniform(0, 1)
        p = rng.standard_normal(n) * 10 ** rng.uniform(-5, -1)
        lam_a, lam_r = rng.uniform(0, 2), rng.uniform(0, 50)
        b = total_loss(det, s, p, lam_a, lam_r)
        worst = max(worst, abs(b.L_R - (b.L_r + b.L_m + b.L_s)), abs(b.L - (lam_a * b.L_A + lam_r * b.L_R)))
    elapsed = time.perf_counter() - t0
    record(1, worst <= 1e-9 and elapsed < 10, f"max identity error {worst:.2e}, {elapsed:.1f} s")


def test_02_mt_oracle():
    rng = np.random.default_rng(2)
    p = rng.standard_normal(10 ** 5) * 10 ** rng.uniform(-6, 0, 10 ** 5)
    s = rng.uniform(-1, 1, 10 ** 5) * (rng.random(10 ** 5) > 0.1)
    m = modification_magnitude(p, s).numpy()
    expected = np.array([scalar_mt(a, b) for a, b in zip(p.tolist(), s.tolist())])
    mismatches = int(np.count_nonzero(m != expected))
    in_range = bool(np.all(m >= 0) and np.all(m < 1))
    record(2, mismatches == 0 and in_range, f"{mismatches} mismatches in 1e5 pairs, all in [0,1): {in_range}")


def test_03_gradient_check():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        det = tiny_detector(seed, MINI_LFCC, torch.float64)
        rng = np.random.default_rng(seed)
        s = torch.as_tensor(rng.uniform(-0.5, 0.5, 64))
        p0 = rng.uniform(0.005, 0.05, 64) * rng.choice([-1, 1], 64)
        p = torch.tensor(p0, requires_grad=True)
        total_loss(det, s, p).total.backward()
        numeric = np.zeros(64)
        eps = 1e-6
        for i in range(64):
            up, dn = p0.copy(), p0.copy()
            up[i] += eps
            dn[i] -= eps
            numeric[i] = (total_loss(det, s, torch.as_tensor(up)).L - total_loss(det, s, torch.as_tensor(dn)).L) / (2 * eps)
        worst = max(worst, np.linalg.norm(p.grad.numpy() - numeric) / np.linalg.norm(numeric))
    elapsed = time.perf_counter() - t0
    record(3, worst <= 1e-3 and elapsed < 60, f"max relative error {worst:.2e} over 20 seeds, {elapsed:.1f} s")


def test_04_lfcc_reference():
    rng = np.random.default_rng(4)
    worst = 0.0
    for i in range(10):
        x = toy_clip("genuine" if i % 2 else "fake", rng).samples if i < 5 else rng.uniform(-0.5, 0.5, 16000)
        ours = extract_lfcc(Waveform(x), LfccConfig()).values
        worst = max(worst, float(np.abs(ours - reference_lfcc(x)).max()))
    record(4, worst <= 1e-4, f"max abs error {worst:.2e} on 10 one-second clips")


def test_05_eer_oracle():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        pos = rng.random(rng.integers(1, 51))
        neg = rng.random(rng.integers(1, 51))
        if rng.random() < 0.3:  # quantised scores exercise ties
            pos, neg = np.round(pos * 8) / 8, np.round(neg * 8) / 8
        worst = max(worst, abs(compute_eer(pos, neg)[0] - sweep_eer(pos, neg)))
    record(5, worst <= 1e-9, f"max |EER - sweep| {worst:.2e} on 200 score sets")


def _tagged(values, prefix):
    return [Waveform(np.array([v, 0.0]), metadata={"path": f"{prefix}{i}"}) for i, v in enumerate(values)]


def test_06_dsr_identities(tmp_path):
    first = lambda w: float(w.samples[0])  # noqa: E731
    genuine = _tagged([0.7, 0.8, 0.9], "g")
    all_fooled = compute_dsr([first], _tagged([0.95] * 10, "f"), genuine).dsr
    none_fooled = compute_dsr([first], _tagged([0.1] * 10, "f"), genuine).dsr
    case = compute_dsr([first], _tagged([0.9] * 47 + [0.1] * 53, "f"), genuine, thresholds=[0.5])

    rng = np.random.default_rng(6)
    recount_ok = True
    for k in range(20):
        fakes, gens = _tagged(rng.random(30), "f"), _tagged(rng.random(25) * 0.5 + 0.5, "g")
        rep = compute_dsr([first, lambda w: first(w) ** 2], fakes, gens, names=["a", "b"])
        rep.write_table(tmp_path / f"t{k}.csv")
        table = read_score_table(tmp_path / f"t{k}.csv")
        w, a, n = recount_dsr(table)
        brute = sum(count_fooled([r["score"] for r in table if r["label"] == "fake" and r["detector"] == d],
                                 rep.thresholds[d]) for d in ("a", "b"))
        recount_ok &= (w, a, n) == (rep.W, rep.A, rep.N) and brute == rep.W and rep.dsr == w / (a * n)
    ok = all_fooled == 1.0 and none_fooled == 0.0 and case.dsr == 0.47 and recount_ok
    record(6, ok, f"all={all_fooled} none={none_fooled} 47/100/1={case.dsr} recount over 20 runs ok={recount_ok}")


@pytest.mark.slow
def test_07_toy_directional(toy_experiment):
    r = toy_experiment.result
    sched = TrainSchedule()
    lrs = {e["lr"] for e in r.history}
    faithful = (r.setup.lambda_A, r.setup.lambda_R) == (1.0, 20.0) and lrs == {sched.lr_at(0)}
    gain = r.final.eer_increase("held")
    minutes = toy_experiment.seconds / 60  # corpus, both detectors, generator, evaluation
    ok = gain >= 0.10 and r.setup.steps <= 2000 and faithful and minutes < 15
    record(7, ok, f"held-out EER {r.final.eer_before['held']:.2f} -> {r.final.eer_after['held']:.2f} "
                  f"(+{100 * gain:.0f} pts) after {r.setup.steps} steps, {minutes:.1f} min")


@pytest.mark.slow
def test_08_silence_sparing(toy_experiment):
    rows = [u for u in toy_experiment.result.per_utterance_mt if u["speech"] is not None and u["silence"] is not None]
    frac = sum(u["silence"] < u["speech"] for u in rows) / len(rows)
    record(8, frac >= 0.90 and len(rows) == len(toy_experiment.corpus.eval_fake),
           f"silence M_t below speech M_t on {frac:.0%} of {len(rows)} utterances")


@pytest.mark.slow
def test_09_frozen_adversary(toy_experiment):
    r = toy_experiment.result
    record(9, r.detector_sha_before == r.detector_sha_after,
           f"checkpoint sha256 {r.detector_sha_before[:12]} before, {r.detector_sha_after[:12]} after")


def test_10_lr_schedule():
    rng = np.random.default_rng(10)
    clips = [Waveform(rng.uniform(-0.3, 0.3, 4000)) for _ in range(2)]
    det = tiny_detector(0)
    logged = {}
    for step in (0, 4999, 5000, 10000, 30000, 50000):
        torch.manual_seed(0)
        g = ResidualGenerator(GeneratorConfig(base_channels=16))
        history = []
        train_rgn(g, det, clips, TrainSchedule(total_steps=step + 1, batch_size=1, crop_seconds=0.25),
                  resume={"step": step}, history=history)
        logged[step] = history[-1]["lr"]
    expected = {0: 1e-4, 4999: 1e-4, 5000: 5e-5, 10000: 2.5e-5, 30000: 1.25e-5, 50000: 6.25e-6}
    record(10, logged == expected, f"logged {logged}")


def test_11_augmentation_contracts():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(200):
        gain = rng.uniform(-20, 20)
        w = Waveform(rng.uniform(-1, 1, 256) * min(1.0, 10 ** (-gain / 20)) * 0.99)
        worst = max(worst, float(np.abs(apply_gain(apply_gain(w, gain), -gain).samples - w.samples).max()))
    t = np.arange(16000) / 16000
    probe = Waveform(0.5 * np.sin(2 * np.pi * 6000 * t))
    drop = tone_power_db(probe.samples, 16000, 6000) - tone_power_db(downsample_roundtrip(probe).samples, 16000, 6000)
    clip, menu = toy_clip("fake", rng), default_menu()
    same = all(augment_random(clip, menu, s)[0].samples.tobytes() == augment_random(clip, menu, s)[0].samples.tobytes()
               for s in range(20))
    ok = worst <= 1e-6 and drop >= 40 and same
    record(11, ok, f"gain round trip {worst:.1e}, 6 kHz drop {drop:.0f} dB, deterministic per seed: {same}")
