"""Adversarial training of the residual generator against a frozen detector.

Objective per batch::

    L_A = 1 - D(F(s + P(s)))                      detector acceptance
    M_t = |P_t| / (|P_t| + |s_t| + 1e-4)          per-sample modification
    L_r = max(P) - min(P)   (per utterance, batch-averaged)
    L_m = mean(P ** 2)
    L_s = mean(M_t)
    L   = lambda_A * L_A + lambda_R * (L_r + L_m + L_s)

Clipping to [-1, 1] is applied only when audio is written, never inside the loss.
"""

from __future__ import annotations

import bisect
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from . import checkpoint
from .audio import Waveform, ensure_canonical, read_wav
from .detector import Detector, TrainingError
from .rgn import ResidualGenerator, save_generator

log = logging.getLogger(__name__)

MT_EPS = 1e-4


def _tensor(x, dtype=None) -> torch.Tensor:
    if isinstance(x, Waveform):
        x = x.samples
    t = x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x))
    return t.to(dtype) if dtype is not None else t


def modification_magnitude(residual, original) -> torch.Tensor:
    p, s = _tensor(residual), _tensor(original)
    if p.shape != s.shape:
        raise ValueError(f"residual shape {tuple(p.shape)} != original shape {tuple(s.shape)}")
    s = s.to(p.dtype)
    return p.abs() / (p.abs() + s.abs() + MT_EPS)


def regularization_loss(residual, original):
    """(L_r, L_m, L_s) for a (T,) or (batch, T) residual."""
    p, s = _tensor(residual), _tensor(original)
    if p.numel() == 0:
        raise ValueError("empty residual")
    if p.dim() == 1:
        p, s = p.unsqueeze(0), s.unsqueeze(0)
    l_r = (p.amax(dim=-1) - p.amin(dim=-1)).mean()
    l_m = p.square().mean()
    l_s = modification_magnitude(p, s).mean()
    return l_r, l_m, l_s


def adversarial_loss(det: Detector, processed, log_domain: bool = False) -> torch.Tensor:
    """1 - P(target | processed), batch-averaged; ``log_domain`` uses -log P instead."""
    x = _tensor(processed, next(det.parameters()).dtype)
    if x.dim() == 1:
        x = x.unsqueeze(0)
    if log_domain:
        return -torch.nn.functional.logsigmoid(det.logits(det.frontend(x))).mean()
    return 1.0 - det(x).mean()


@dataclass
class LossBreakdown:
    L_A: float
    L_r: float
    L_m: float
    L_s: float
    L_R: float
    L: float
    lambda_A: float
    lambda_R: float
    total: torch.Tensor | None = field(default=None, repr=False, compare=False)

    def as_log(self) -> dict:
        return {k: getattr(self, k) for k in ("L_A", "L_r", "L_m", "L_s", "L_R", "L", "lambda_A", "lambda_R")}


def total_loss(det: Detector, original, residual, lambda_A: float = 1.0, lambda_R: float = 20.0,
               log_domain: bool = False) -> LossBreakdown:
    s = _tensor(original)
    p = _tensor(residual)
    s = s.to(p.dtype)
    l_a = adversarial_loss(det, s + p, log_domain)
    l_r, l_m, l_s = regularization_loss(p, s)
    l_reg = l_r + l_m + l_s
    total = lambda_A * l_a + lambda_R * l_reg
    la, lr, lm, ls = (float(v.detach()) for v in (l_a, l_r, l_m, l_s))
    reg = lr + lm + ls
    return LossBreakdown(la, lr, lm, ls, reg, lambda_A * la + lambda_R * reg, lambda_A, lambda_R, total)


@dataclass
class TrainSchedule:
    learning_rates: list = field(default_factory=lambda: [1e-4, 5e-5, 2.5e-5, 1.25e-5, 6.25e-6])
    decay_boundaries_steps: list = field(default_factory=lambda: [5000, 10000, 30000, 50000])
    total_steps: int = 60000
    batch_size: int = 8
    seed: int = 0
    crop_seconds: float = 4.0
    optimizer: str = "adam"
    checkpoint_every: int = 1000
    log_domain: bool = False

    def __post_init__(self):
        if len(self.learning_rates) != len(self.decay_boundaries_steps) + 1:
            raise ValueError("need exactly one more learning rate than decay boundaries")
        b = self.decay_boundaries_steps
        if any(x >= y for x, y in zip(b, b[1:])):
            raise ValueError("decay boundaries must be strictly increasing")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def lr_at(self, step: int) -> float:
        """Rate i applies on steps in [boundary[i-1], boundary[i])."""
        return self.learning_rates[bisect.bisect_right(self.decay_boundaries_steps, step)]


def _load_corpus(corpus) -> list[np.ndarray]:
    out = []
    for item in corpus:
        w = item if isinstance(item, Waveform) else read_wav(item["path"])
        out.append(ensure_canonical(w).samples.astype(np.float32))
    return out


def _batch(clips: list[np.ndarray], sched: TrainSchedule, step: int, crop: int) -> torch.Tensor:
    rng = np.random.default_rng([sched.seed, step])
    rows = []
    for i in rng.integers(len(clips), size=sched.batch_size):
        clip = clips[i]
        start = int(rng.integers(len(clip) - crop + 1))
        rows.append(clip[start:start + crop])
    return torch.from_numpy(np.stack(rows))


def _make_optimizer(g: ResidualGenerator, sched: TrainSchedule):
    if sched.optimizer == "sgd":
        return torch.optim.SGD(g.parameters(), lr=sched.lr_at(0))
    return torch.optim.Adam(g.parameters(), lr=sched.lr_at(0), betas=(0.5, 0.9))


def save_training_state(path, g, opt, step: int, sched: TrainSchedule, lambdas) -> None:
    save_generator(g, path, step=step, optimizer=opt.state_dict(), schedule=asdict(sched),
                   lambda_A=lambdas[0], lambda_R=lambdas[1])


def train_rgn(g: ResidualGenerator, det: Detector, corpus, sched: TrainSchedule | None = None,
              lambda_A: float = 1.0, lambda_R: float = 20.0, log_path=None, checkpoint_path=None,
              resume: dict | None = None, history: list | None = None,
              callback=None) -> ResidualGenerator:
    """Train `g` in place against the frozen `det`.

    `resume` is the ``extra`` dict of a training-state checkpoint (step and
    optimizer state); the generator weights must already be loaded into `g`.
    `callback(steps_done, g)` runs after every optimizer step; it may switch
    `g` to eval mode, training mode is restored afterwards.
    """
    sched = sched or TrainSchedule()
    if lambda_A < 0 or lambda_R < 0:
        raise ValueError("loss weights must be non-negative")
    clips = _load_corpus(corpus)
    if not clips:
        raise ValueError("empty training corpus")
    crop = min(int(sched.crop_seconds * det.lfcc_cfg.sample_rate), min(len(c) for c in clips))
    if crop < det.lfcc_cfg.win_length:
        raise ValueError("training clips are shorter than one LFCC window")

    det.eval()
    det.requires_grad_(False)
    det_hash = checkpoint.parameters_sha256(det)

    opt = _make_optimizer(g, sched)
    start = 0
    if resume:
        start = int(resume["step"])
        if resume.get("optimizer"):
            opt.load_state_dict(resume["optimizer"])
    g.train()
    last_good, last_good_step = {k: v.clone() for k, v in g.state_dict().items()}, start
    log_fh = open(log_path, "a" if resume else "w") if log_path else None
    try:
        for step in range(start, sched.total_steps):
            lr = sched.lr_at(step)
            for group in opt.param_groups:
                group["lr"] = lr
            x = _batch(clips, sched, step, crop)
            residual = g(x)
            parts = total_loss(det, x, residual, lambda_A, lambda_R, sched.log_domain)
            if not math.isfinite(parts.L):
                saved_step = step
                if not all(torch.isfinite(v).all() for v in g.state_dict().values()):
                    # the previous update itself diverged; its optimizer state is unusable
                    g.load_state_dict(last_good)
                    saved_step = last_good_step
                    opt = _make_optimizer(g, sched)
                if checkpoint_path:
                    save_training_state(checkpoint_path, g, opt, saved_step, sched, (lambda_A, lambda_R))
                raise TrainingError(f"non-finite loss at step {step}: {parts.as_log()}")
            last_good, last_good_step = {k: v.clone() for k, v in g.state_dict().items()}, step
            opt.zero_grad()
            parts.total.backward()
            opt.step()

            entry = {"step": step, "lr": lr, **parts.as_log()}
            if history is not None:
                history.append(entry)
            if log_fh:
                log_fh.write(json.dumps(entry) + "\n")
            if step % 100 == 0:
                log.info("rgn step %d lr %g L %.4f L_A %.4f L_R %.4f", step, lr, parts.L, parts.L_A, parts.L_R)
            if checkpoint_path and sched.checkpoint_every and (step + 1) % sched.checkpoint_every == 0:
                save_training_state(checkpoint_path, g, opt, step + 1, sched, (lambda_A, lambda_R))
            if callback is not None:
                callback(step + 1, g)
                g.train()
    finally:
        if log_fh:
            log_fh.close()
    if checkpoint_path:
        save_training_state(checkpoint_path, g, opt, max(start, sched.total_steps), sched, (lambda_A, lambda_R))
    if checkpoint.parameters_sha256(det) != det_hash:
        raise TrainingError("detector parameters changed during generator training")
    g.eval()
    return g
