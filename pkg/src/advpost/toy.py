"""Synthetic end-to-end run: toy corpus, two detectors, generator, evaluation.

Everything stays in memory so the whole loop runs on a CPU in a few minutes.
`write_toy_corpus` dumps the same clips as WAV files plus manifests for the
file-based CLI pipeline.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from . import checkpoint
from .adversarial import TrainSchedule, train_rgn
from .audio import Waveform, write_wav
from .augment import augment_random, default_menu
from .config import sub_seed
from .detector import (DatasetSplit, Detector, DetectorTrainConfig, compute_eer, save_detector,
                       score_waveform, train_detector)
from .evaluate import compute_dsr, mt_summary, silence_speech_mt
from .lfcc import LfccConfig
from .manifest import write_jsonl
from .rgn import GeneratorConfig, ResidualGenerator, apply, generate_residual
from .synth import toy_clip

log = logging.getLogger(__name__)


@dataclass
class ToySetup:
    seed: int = 0
    n_train: int = 200          # adversary + held-out training clips, half genuine
    n_eval: int = 100           # evaluation clips, half genuine
    n_rgn: int = 200            # fake clips the generator trains on
    duration: float = 1.0
    silence_level: float = 3e-4
    breath_level: float = 0.002
    detector_arch: str = "small"
    detector_epochs: int = 20
    detector_lr: float = 3e-3
    augment_copies: int = 1     # augmented copies per adversary negative
    generator_channels: int = 32
    output_scale: float = 0.02
    steps: int = 1000
    batch_size: int = 4
    lambda_A: float = 1.0
    lambda_R: float = 20.0
    eval_every: int = 0         # 0: evaluate only at the end


@dataclass
class ToyCorpus:
    adv_genuine: list
    adv_fake: list
    held_genuine: list
    held_fake: list
    eval_genuine: list
    eval_fake: list
    rgn_fake: list

    def groups(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _clips(kind: str, n: int, seed: int, setup: ToySetup) -> list[Waveform]:
    rng = np.random.default_rng(seed)
    return [toy_clip(kind, rng, setup.duration, silence_level=setup.silence_level,
                     breath_level=setup.breath_level) for _ in range(n)]


def toy_corpus(setup: ToySetup) -> ToyCorpus:
    """Disjoint clip sets for the two detectors, the generator and evaluation."""
    quarter, half_eval = setup.n_train // 4, setup.n_eval // 2
    if quarter < 2 or half_eval < 2:
        raise ValueError("toy corpus too small")
    s = setup.seed
    return ToyCorpus(
        adv_genuine=_clips("genuine", quarter, sub_seed(s, "toy/adv/genuine"), setup),
        adv_fake=_clips("fake", quarter, sub_seed(s, "toy/adv/fake"), setup),
        held_genuine=_clips("genuine", quarter, sub_seed(s, "toy/held/genuine"), setup),
        held_fake=_clips("fake", quarter, sub_seed(s, "toy/held/fake"), setup),
        eval_genuine=_clips("genuine", half_eval, sub_seed(s, "toy/eval/genuine"), setup),
        eval_fake=_clips("fake", half_eval, sub_seed(s, "toy/eval/fake"), setup),
        rgn_fake=_clips("fake", setup.n_rgn, sub_seed(s, "toy/rgn/fake"), setup),
    )


def write_toy_corpus(corpus: ToyCorpus, out_dir) -> dict:
    """Write every clip as PCM16 WAV; returns {group: manifest path}."""
    labels = {"genuine": "target_natural", "fake": "fake"}
    manifests = {}
    for name, clips in corpus.groups().items():
        rows = []
        for i, w in enumerate(clips):
            rel = os.path.join(name, f"{name}_{i:04d}.wav")
            write_wav(w, os.path.join(out_dir, rel))
            rows.append({"path": rel, "label": labels[name.split("_")[1]], "speaker": "toy"})
        manifests[name] = os.path.join(out_dir, f"{name}.jsonl")
        write_jsonl(manifests[name], rows)
    return manifests


def train_toy_detectors(corpus: ToyCorpus, setup: ToySetup, lfcc: LfccConfig | None = None):
    """Adversary (augmented negatives) and an independently trained held-out detector."""
    menu = default_menu()
    negatives = list(corpus.adv_fake)
    for c in range(setup.augment_copies):
        for i, w in enumerate(corpus.adv_fake):
            negatives.append(augment_random(w, menu, sub_seed(setup.seed, f"toy/aug/{c}/{i}"))[0])
    adversary = train_detector(
        DatasetSplit(corpus.adv_genuine, negatives),
        DetectorTrainConfig(arch=setup.detector_arch, epochs=setup.detector_epochs,
                            learning_rate=setup.detector_lr, seed=sub_seed(setup.seed, "toy/adversary")), lfcc)
    held = train_detector(
        DatasetSplit(corpus.held_genuine, corpus.held_fake),
        DetectorTrainConfig(arch=setup.detector_arch, epochs=setup.detector_epochs,
                            learning_rate=setup.detector_lr, seed=sub_seed(setup.seed, "toy/held")), lfcc)
    return adversary, held


def _scores(det: Detector, clips) -> np.ndarray:
    return np.array([score_waveform(det, w) for w in clips])


@dataclass
class ToyMeasurement:
    step: int
    eer_before: dict
    eer_after: dict
    mean_score_before: dict
    mean_score_after: dict
    mean_Mt_speech: float | None
    mean_Mt_silence: float | None
    silence_below_speech: float

    def eer_increase(self, name: str = "held") -> float:
        return self.eer_after[name] - self.eer_before[name]


def measure(g: ResidualGenerator, detectors: dict, corpus: ToyCorpus, step: int) -> ToyMeasurement:
    post = [apply(g, w) for w in corpus.eval_fake]
    m = ToyMeasurement(step, {}, {}, {}, {}, None, None, float("nan"))
    for name, det in detectors.items():
        gen, before, after = (_scores(det, c) for c in (corpus.eval_genuine, corpus.eval_fake, post))
        m.eer_before[name] = compute_eer(gen, before)[0]
        m.eer_after[name] = compute_eer(gen, after)[0]
        m.mean_score_before[name] = float(before.mean())
        m.mean_score_after[name] = float(after.mean())
    pairs = [(w, generate_residual(g, w)) for w in corpus.eval_fake]
    m.mean_Mt_speech, m.mean_Mt_silence, m.silence_below_speech = mt_summary(pairs)
    return m


@dataclass
class ToyResult:
    setup: ToySetup
    final: ToyMeasurement
    trace: list = field(default_factory=list)
    history: list = field(default_factory=list)
    detector_sha_before: str = ""
    detector_sha_after: str = ""
    per_utterance_mt: list = field(default_factory=list)
    dsr: float | None = None
    seconds: float = 0.0
    generator: ResidualGenerator | None = field(default=None, repr=False)


def run_toy(setup: ToySetup | None = None, out_dir=None, lfcc: LfccConfig | None = None,
            corpus: ToyCorpus | None = None, detectors=None) -> ToyResult:
    """Train both detectors and the generator on the toy corpus, then measure.

    With `out_dir`, the adversary checkpoint, the generator training state and
    the step log are written there and the adversary file hash is compared
    before and after generator training.
    """
    setup = setup or ToySetup()
    t0 = time.time()
    corpus = corpus or toy_corpus(setup)
    adversary, held = detectors or train_toy_detectors(corpus, setup, lfcc)
    dets = {"adversary": adversary, "held": held}

    adv_path = log_path = ckpt_path = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        adv_path = os.path.join(out_dir, "adversary.pt")
        save_detector(adversary, adv_path)
        log_path = os.path.join(out_dir, "rgn_log.jsonl")
        ckpt_path = os.path.join(out_dir, "rgn.pt")
    sha_before = checkpoint.file_sha256(adv_path) if adv_path else checkpoint.parameters_sha256(adversary)

    torch.manual_seed(sub_seed(setup.seed, "toy/generator"))
    g = ResidualGenerator(GeneratorConfig(base_channels=setup.generator_channels,
                                          output_scale=setup.output_scale))
    sched = TrainSchedule(total_steps=setup.steps, batch_size=setup.batch_size,
                          seed=sub_seed(setup.seed, "toy/train"), crop_seconds=setup.duration,
                          checkpoint_every=0)
    trace, history = [], []

    def on_step(k, gen):
        if setup.eval_every and k % setup.eval_every == 0 and k < setup.steps:
            trace.append(measure(gen, dets, corpus, k))
            log.info("toy step %d: %s", k, trace[-1])

    train_rgn(g, adversary, corpus.rgn_fake, sched, setup.lambda_A, setup.lambda_R,
              log_path=log_path, checkpoint_path=ckpt_path, history=history, callback=on_step)
    if adv_path:
        # same file name: the zip archive inside a torch checkpoint is named after it
        after_path = os.path.join(out_dir, "after_rgn", "adversary.pt")
        save_detector(adversary, after_path)
        sha_after = checkpoint.file_sha256(after_path)
    else:
        sha_after = checkpoint.parameters_sha256(adversary)

    final = measure(g, dets, corpus, setup.steps)
    trace.append(final)
    per_utt = [silence_speech_mt(w, generate_residual(g, w))._asdict() for w in corpus.eval_fake]
    post = [apply(g, w) for w in corpus.eval_fake]
    dsr = compute_dsr([held], post, corpus.eval_genuine, names=["held"]).dsr
    return ToyResult(setup, final, trace, history, sha_before, sha_after, per_utt, dsr,
                     time.time() - t0, g)
