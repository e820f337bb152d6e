"""Run configuration: one YAML file with a section per pipeline stage.

Every key has a default, so an empty file is a valid config. Unknown keys
and out-of-range values are rejected with the offending key path (and its
line number when known).
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields

import yaml

from .adversarial import TrainSchedule
from .lfcc import LfccConfig
from .rgn import GeneratorConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key, self.line = key, line
        where = f"line {line}: " if line else ""
        super().__init__(f"{where}{message}")


@dataclass
class LfccSection:
    win_ms: float = 25.0
    hop_ms: float = 10.0
    n_filters: int = 70
    n_coeff: int = 20
    include_deltas: bool = True
    log_floor: float = 1e-10
    sample_rate: int = 16000


@dataclass
class AugmentSection:
    snr_db: list = field(default_factory=lambda: [0.0, 20.0])
    gain_db: list = field(default_factory=lambda: [-10.0, 20.0])
    codec_quality: list = field(default_factory=lambda: [0.0, 1.0])
    rt60: list = field(default_factory=lambda: [0.2, 0.8])
    noise_dir: str | None = None
    music_dir: str | None = None
    babble_dir: str | None = None
    rir_dir: str | None = None
    codec_bin_dir: str | None = None
    augment_positives: bool = False
    copies_per_negative: int = 1


@dataclass
class DetectorSection:
    arch: str = "default"
    epochs: int = 20
    batch_size: int = 16
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    crop_frames: int = 400
    val_fraction: float = 0.1


@dataclass
class RgnSection:
    upsample_factors: list = field(default_factory=lambda: [8, 8, 2, 2])
    base_channels: int = 128
    kernel_size: int = 7
    stack_kernel_size: int = 3
    stack_dilations: list = field(default_factory=lambda: [1, 3, 9])
    leaky_slope: float = 0.2
    use_weight_norm: bool = True
    output_scale: float = 0.1
    bounded_output: bool = True


@dataclass
class TrainSection:
    learning_rates: list = field(default_factory=lambda: [1e-4, 5e-5, 2.5e-5, 1.25e-5, 6.25e-6])
    decay_boundaries_steps: list = field(default_factory=lambda: [5000, 10000, 30000, 50000])
    total_steps: int = 60000
    batch_size: int = 8
    crop_seconds: float = 4.0
    optimizer: str = "adam"
    checkpoint_every: int = 1000
    log_domain: bool = False
    lambda_A: float = 1.0
    lambda_R: float = 20.0


@dataclass
class EvalSection:
    vad_threshold_db: float = -30.0
    vad_frame_ms: float = 25.0
    band_hz: float = 1000.0
    spectrogram_examples: int = 3


@dataclass
class IoSection:
    manifest: str | None = None
    out_dir: str = "runs"
    detector_checkpoint: str | None = None
    rgn_checkpoint: str | None = None
    eval_detectors: list = field(default_factory=list)
    genuine_manifest: str | None = None
    fakes_before_manifest: str | None = None
    fakes_after_manifest: str | None = None


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    lfcc: LfccSection = field(default_factory=LfccSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    detector: DetectorSection = field(default_factory=DetectorSection)
    rgn: RgnSection = field(default_factory=RgnSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    io: IoSection = field(default_factory=IoSection)

    # conversions to the module-level configs
    def lfcc_config(self) -> LfccConfig:
        return LfccConfig(**dataclasses.asdict(self.lfcc))

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(**dataclasses.asdict(self.rgn))

    def train_schedule(self) -> TrainSchedule:
        t = dataclasses.asdict(self.train)
        t.pop("lambda_A")
        t.pop("lambda_R")
        return TrainSchedule(seed=sub_seed(self.seed, "train"), **t)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def sub_seed(seed: int, name: str) -> int:
    """Stable per-module seed derived from the global one."""
    digest = hashlib.sha256(f"{seed}/{name}".encode()).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF


def _key_lines(text: str) -> dict:
    """Map dotted key paths to 1-based line numbers."""
    out = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return out

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                path = f"{prefix}{k.value}"
                out[path] = k.start_mark.line + 1
                walk(v, path + ".")

    if root is not None:
        walk(root, "")
    return out


_NUMBER = (int, float)


def _check_type(value, default, key: str):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}", key)
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}", key)
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, _NUMBER):
            raise ConfigError(f"{key}: expected a number, got {value!r}", key)
        value = float(value)
    elif isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}", key)
    elif isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}", key)
    return value


def _build(cls, data, prefix: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: expected a mapping", prefix.rstrip("."))
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        keys = ", ".join(prefix + k for k in unknown)
        raise ConfigError(f"unknown key(s): {keys}", prefix + unknown[0])
    kwargs = {}
    default = cls()
    for name, f in known.items():
        if name not in data:
            continue
        key = prefix + name
        current = getattr(default, name)
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), data[name], key + ".")
        else:
            kwargs[name] = _check_type(data[name], current, key)
    return cls(**kwargs)


def _validate(cfg: RunConfig) -> None:
    t = cfg.train
    if t.lambda_A < 0 or t.lambda_R < 0:
        bad = "train.lambda_A" if t.lambda_A < 0 else "train.lambda_R"
        raise ConfigError(f"{bad}: loss weights must be >= 0", bad)
    if cfg.schema_version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported version {cfg.schema_version}", "schema_version")
    for lo_hi in ("snr_db", "gain_db", "codec_quality", "rt60"):
        v = getattr(cfg.augment, lo_hi)
        if len(v) != 2 or v[0] > v[1]:
            raise ConfigError(f"augment.{lo_hi}: expected [low, high]", f"augment.{lo_hi}")
    if not 0.0 <= cfg.detector.val_fraction < 1.0:
        raise ConfigError("detector.val_fraction: must lie in [0, 1)", "detector.val_fraction")
    for section, build in (("lfcc", cfg.lfcc_config), ("rgn", cfg.generator_config), ("train", cfg.train_schedule)):
        try:
            build()
        except ValueError as exc:
            raise ConfigError(f"{section}: {exc}", section) from exc


def config_from_dict(data: dict | None) -> RunConfig:
    cfg = _build(RunConfig, data or {}, "")
    _validate(cfg)
    return cfg


def loads_config(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"parse error: {getattr(exc, 'problem', exc)}",
                          line=mark.line + 1 if mark else None) from exc
    try:
        return config_from_dict(data)
    except ConfigError as exc:
        line = _key_lines(text).get(exc.key or "")
        if line and not exc.line:
            raise ConfigError(str(exc), exc.key, line) from None
        raise


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return loads_config(fh.read())


def dumps_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_config(cfg))
