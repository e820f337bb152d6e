"""Target-speaker detector: residual CNN over LFCC with statistics pooling.

The detector separates target-speaker natural speech (positives) from
everything else (negatives) and doubles as the frozen adversary when the
residual generator is trained.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import checkpoint
from .audio import Waveform, ensure_canonical, read_wav
from .lfcc import LFCC, FeatureMatrix, LfccConfig

log = logging.getLogger(__name__)

ARCHITECTURES = {
    # name: (channels per stage, blocks per stage)
    "tiny": ((4, 8, 8, 8), (1, 1, 1, 1)),
    "small": ((8, 16, 32, 32), (1, 1, 1, 1)),
    "default": ((16, 32, 64, 128), (1, 1, 1, 1)),
    "resnet34": ((32, 64, 128, 256), (3, 4, 6, 3)),
}


class FeatureDimensionError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


class BasicBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(c_out)
        self.shortcut = nn.Identity()
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Sequential(nn.Conv2d(c_in, c_out, 1, stride, bias=False), nn.BatchNorm2d(c_out))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class Detector(nn.Module):
    """LFCC front-end + residual CNN; ``forward`` maps waveforms to P(target)."""

    def __init__(self, lfcc: LfccConfig | None = None, arch: str = "default",
                 channels=None, blocks=None):
        super().__init__()
        self.lfcc_cfg = lfcc or LfccConfig()
        default_ch, default_bl = ARCHITECTURES[arch]
        channels = tuple(channels or default_ch)
        blocks = tuple(blocks or default_bl)
        self.arch = {"name": arch, "channels": list(channels), "blocks": list(blocks),
                     "feature_dim": self.lfcc_cfg.feature_dim}
        self.frontend = LFCC(self.lfcc_cfg)
        self.feature_dim = self.lfcc_cfg.feature_dim

        self.input_norm = nn.BatchNorm1d(self.feature_dim)
        self.stem = nn.Sequential(nn.Conv2d(1, channels[0], 3, 2, 1, bias=False),
                                  nn.BatchNorm2d(channels[0]), nn.ReLU())
        stages, c_in = [], channels[0]
        for i, (c, n) in enumerate(zip(channels, blocks)):
            for j in range(n):
                stages.append(BasicBlock(c_in, c, stride=2 if (i > 0 and j == 0) else 1))
                c_in = c
        self.stages = nn.Sequential(*stages)
        freq_out = self.feature_dim
        for _ in range(len(channels)):
            freq_out = (freq_out - 1) // 2 + 1
        self.head = nn.Linear(2 * c_in * freq_out, 1)

    def logits(self, feats: torch.Tensor) -> torch.Tensor:
        """feats: (batch, frames, feature_dim) -> (batch,) logits."""
        if feats.dim() == 2:
            feats = feats.unsqueeze(0)
        if feats.shape[-1] != self.feature_dim:
            raise FeatureDimensionError(
                f"detector expects {self.feature_dim}-dim features, got {feats.shape[-1]}")
        x = self.input_norm(feats.transpose(1, 2))  # (B, D, T)
        x = self.stages(self.stem(x.unsqueeze(1)))  # (B, C, D', T')
        x = x.flatten(1, 2)
        mean = x.mean(dim=-1)
        std = torch.sqrt(x.var(dim=-1, unbiased=False) + 1e-5)
        return self.head(torch.cat([mean, std], dim=1)).squeeze(-1)

    def score_features(self, feats: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(feats))

    def forward(self, waveforms: torch.Tensor) -> torch.Tensor:
        return self.score_features(self.frontend(waveforms))

    def zero_head_(self) -> "Detector":
        with torch.no_grad():
            self.head.weight.zero_()
            self.head.bias.zero_()
        return self


def score(model: Detector, feats) -> float | torch.Tensor:
    """P(target) for one utterance's features.

    A FeatureMatrix or ndarray yields a float; a tensor yields a (differentiable) tensor.
    """
    model.eval()
    if isinstance(feats, torch.Tensor):
        return model.score_features(feats.to(next(model.parameters()).dtype)).squeeze(0)
    values = feats.values if isinstance(feats, FeatureMatrix) else np.asarray(feats)
    with torch.no_grad():
        t = torch.as_tensor(values, dtype=next(model.parameters()).dtype)
        return float(model.score_features(t))


def score_waveform(model: Detector, w: Waveform) -> float:
    model.eval()
    with torch.no_grad():
        x = torch.as_tensor(w.samples, dtype=next(model.parameters()).dtype)
        return float(model(x.unsqueeze(0))[0])


def compute_eer(pos_scores, neg_scores) -> tuple[float, float]:
    """Equal error rate and its threshold.

    A score >= t is accepted. FAR(t) is the accepted fraction of negatives and
    FRR(t) the rejected fraction of positives. Operating points are evaluated
    at every distinct score (plus one just above the maximum); the EER is the
    linear interpolation between the two adjacent points bracketing
    FAR == FRR, preferring the lowest threshold on exact ties.
    """
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ValueError("compute_eer needs nonempty positive and negative score lists")
    thresholds = np.unique(np.concatenate([pos, neg]))
    thresholds = np.append(thresholds, np.nextafter(thresholds[-1], np.inf))
    pos_sorted, neg_sorted = np.sort(pos), np.sort(neg)
    far = 1.0 - np.searchsorted(neg_sorted, thresholds, side="left") / neg.size
    frr = np.searchsorted(pos_sorted, thresholds, side="left") / pos.size
    diff = far - frr
    i = int(np.argmax(diff <= 0))  # diff[0] == 1 > 0 and diff[-1] == -1
    if diff[i] == 0:
        return float(far[i]), float(thresholds[i])
    a = diff[i - 1] / (diff[i - 1] - diff[i])
    eer = far[i - 1] + a * (far[i] - far[i - 1])
    thr = thresholds[i - 1] + a * (thresholds[i] - thresholds[i - 1])
    # a > 0, so the threshold lies strictly above the lower point even after rounding
    thr = max(thr, np.nextafter(thresholds[i - 1], np.inf))
    return float(eer), float(thr)


def bce_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(logits, labels)


@dataclass
class DatasetSplit:
    positives: list
    negatives: list

    def validate(self):
        if not self.positives or not self.negatives:
            raise ValueError("dataset split needs nonempty positives and negatives")
        paths = lambda items: {i["path"] for i in items if isinstance(i, dict)}
        overlap = paths(self.positives) & paths(self.negatives)
        if overlap:
            raise ValueError(f"positives and negatives share {len(overlap)} paths, e.g. {sorted(overlap)[0]}")


@dataclass
class DetectorTrainConfig:
    arch: str = "default"
    epochs: int = 20
    batch_size: int = 16
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    crop_frames: int = 400
    val_fraction: float = 0.1
    seed: int = 0
    log_path: str | None = None
    history: list = field(default_factory=list, repr=False)


def _as_waveform(item) -> Waveform:
    if isinstance(item, Waveform):
        return ensure_canonical(item)
    return ensure_canonical(read_wav(item["path"]))


def _crop(feats: torch.Tensor, n: int, gen: torch.Generator) -> torch.Tensor:
    t = feats.shape[0]
    if t < n:
        reps = -(-n // t)
        return feats.repeat(reps, 1)[:n]
    start = int(torch.randint(0, t - n + 1, (1,), generator=gen))
    return feats[start:start + n]


def _features(model: Detector, items) -> list[torch.Tensor]:
    with torch.no_grad():
        return [model.frontend(torch.as_tensor(_as_waveform(i).samples, dtype=torch.float32))
                for i in items]


def eval_scores(model: Detector, feats: list[torch.Tensor]) -> np.ndarray:
    model.eval()
    with torch.no_grad():
        return np.array([float(model.score_features(f)) for f in feats])


def train_detector(split: DatasetSplit, cfg: DetectorTrainConfig | None = None,
                   lfcc: LfccConfig | None = None) -> Detector:
    """Train with binary cross-entropy; returns the best-validation-EER model in eval mode."""
    cfg = cfg or DetectorTrainConfig()
    split.validate()
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)

    model = Detector(lfcc, arch=cfg.arch)
    feats = _features(model, split.positives) + _features(model, split.negatives)
    labels = np.array([1.0] * len(split.positives) + [0.0] * len(split.negatives))

    # stratified hold-out
    val_idx = []
    for lab in (1.0, 0.0):
        idx = rng.permutation(np.flatnonzero(labels == lab))
        n_val = int(round(cfg.val_fraction * len(idx)))
        if 0 < cfg.val_fraction and n_val == 0 and len(idx) > 1:
            n_val = 1
        val_idx.extend(idx[:n_val].tolist())
    val_set = set(val_idx)
    train_idx = np.array([i for i in range(len(labels)) if i not in val_set])
    val_idx = np.array(sorted(val_set))
    has_val = len(val_idx) and len(set(labels[val_idx])) == 2

    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    best_key, best_state = (math.inf, math.inf), None
    history = cfg.history
    history.clear()
    step = 0
    for epoch in range(cfg.epochs):
        model.train()
        order = train_idx[rng.permutation(len(train_idx))]
        losses = []
        for b in range(0, len(order), cfg.batch_size):
            batch = order[b:b + cfg.batch_size]
            if len(batch) < 2:
                continue  # batch norm needs more than one example
            x = torch.stack([_crop(feats[i], cfg.crop_frames, gen) for i in batch])
            y = torch.as_tensor(labels[batch], dtype=torch.float32)
            loss = bce_loss(model.logits(x), y)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss.item()} at epoch {epoch} step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
            step += 1
        entry = {"epoch": epoch, "steps": step, "train_loss": float(np.mean(losses)) if losses else None,
                 "step_losses": losses}
        if has_val:
            s = eval_scores(model, [feats[i] for i in val_idx])
            y = labels[val_idx]
            entry["val_eer"], _ = compute_eer(s[y == 1], s[y == 0])
            p = np.clip(s, 1e-7, 1 - 1e-7)
            entry["val_loss"] = float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))
            # small validation sets tie on EER often; the loss breaks ties
            key = (entry["val_eer"], entry["val_loss"])
            if key < best_key:
                best_key, best_state = key, copy.deepcopy(model.state_dict())
        history.append(entry)
        log.info("detector epoch %d loss %.4f val_eer %s", epoch, entry["train_loss"] or float("nan"),
                 entry.get("val_eer"))
    if cfg.log_path:
        with open(cfg.log_path, "w") as fh:
            for entry in history:
                fh.write(json.dumps(entry) + "\n")
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return model


def save_detector(model: Detector, path, **extra) -> None:
    checkpoint.save(path, "detector", model.arch, model.state_dict(), model.lfcc_cfg.to_dict(), **extra)


def load_detector(path) -> Detector:
    payload = checkpoint.load(path, "detector")
    arch = payload["arch"]
    model = Detector(LfccConfig(**payload["lfcc"]), arch=arch["name"],
                     channels=arch["channels"], blocks=arch["blocks"])
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model


def train_config_dict(cfg: DetectorTrainConfig) -> dict:
    d = asdict(cfg)
    d.pop("history")
    return d
