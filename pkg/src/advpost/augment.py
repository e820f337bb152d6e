"""Negative-data augmentation menu: additive distortion, reverb, volume,
lossy codecs and a narrowband round trip.

Each operation is a pure function of (waveform, params, rng). Interferers and
RIRs come from user-supplied WAV lists when configured and from the small
synthetic generators in :mod:`advpost.synth` otherwise.
"""

from __future__ import annotations

import glob
import os
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, convolve, sosfiltfilt

from . import synth
from .audio import Waveform, read_wav, resample, speech_mask, write_wav

ADDITIVE_KINDS = ("noise", "music", "babble")
CODEC_KINDS = ("codec_mp3", "codec_ogg", "codec_aac", "codec_opus")
ALL_KINDS = ADDITIVE_KINDS + ("reverb", "volume") + CODEC_KINDS + ("downsample",)

CODEC_ENV_VAR = "ADVPOST_CODEC_DIR"

# ffmpeg encoder, container, bitrate range in kbit/s (quality 0 -> low end)
_FFMPEG_CODECS = {
    "codec_mp3": ("libmp3lame", "mp3", (8, 192)),
    "codec_ogg": ("libvorbis", "ogg", (48, 192)),
    "codec_aac": ("aac", "m4a", (16, 192)),
    "codec_opus": ("libopus", "opus", (6, 128)),
}


class AugmentError(ValueError):
    pass


class ZeroPowerInterfererError(AugmentError):
    pass


class EmptyRirError(AugmentError):
    pass


class EmptyMenuError(AugmentError):
    pass


@dataclass
class AugmentSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise AugmentError(f"unknown augmentation kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}


def default_menu(snr_db=(0.0, 20.0), gain_db=(-10.0, 20.0), quality=(0.0, 1.0), rt60=(0.2, 0.8),
                 sources: dict | None = None, rir_paths=None, codec_bin_dir=None) -> list[AugmentSpec]:
    """One spec per row of the augmentation table, with the stock ranges."""
    sources = sources or {}
    menu = [AugmentSpec(k, {"snr_db": list(snr_db), "sources": sources.get(k)}) for k in ADDITIVE_KINDS]
    menu.append(AugmentSpec("reverb", {"rir_paths": rir_paths, "rt60": list(rt60)}))
    menu.append(AugmentSpec("volume", {"gain_db": list(gain_db)}))
    menu += [AugmentSpec(k, {"quality": list(quality), "codec_bin_dir": codec_bin_dir}) for k in CODEC_KINDS]
    menu.append(AugmentSpec("downsample", {"target_rate": 8000}))
    return menu


def _clip(x: np.ndarray) -> np.ndarray:
    return np.clip(x, -1.0, 1.0)


def _fit_length(x: np.ndarray, n: int) -> np.ndarray:
    if len(x) >= n:
        return x[:n]
    return np.pad(x, (0, n - len(x)))


def _loop_to(x: np.ndarray, n: int) -> np.ndarray:
    if len(x) == 0:
        return np.zeros(n)
    reps = -(-n // len(x))
    return np.tile(x, reps)[:n]


def mix_additive(w: Waveform, interferer: Waveform, snr_db: float) -> Waveform:
    if interferer.sample_rate != w.sample_rate:
        raise AugmentError("interferer sample rate differs from the waveform's")
    other = _loop_to(interferer.samples, len(w))
    region = speech_mask(w.samples, w.sample_rate)
    if not region.any():
        region = np.ones(len(w), dtype=bool)
    p_sig = np.mean(w.samples[region] ** 2)
    p_int = np.mean(other[region] ** 2)
    if p_int <= 0 or not np.any(interferer.samples):
        raise ZeroPowerInterfererError("zero-power interferer")
    gain = np.sqrt(p_sig / (p_int * 10 ** (snr_db / 10)))
    return w.replace(_clip(w.samples + gain * other))


def apply_reverb(w: Waveform, rir: Waveform) -> Waveform:
    if len(rir) == 0:
        raise EmptyRirError("empty RIR")
    if rir.sample_rate != w.sample_rate:
        raise AugmentError("RIR sample rate differs from the waveform's")
    wet = convolve(w.samples, rir.samples, mode="full")[: len(w)]
    peak_in, peak_out = np.abs(w.samples).max(initial=0.0), np.abs(wet).max(initial=0.0)
    if peak_out > 0 and peak_in > 0 and peak_out != peak_in:
        wet = wet * (peak_in / peak_out)
    return w.replace(wet)


def apply_gain(w: Waveform, gain_db: float) -> Waveform:
    return w.replace(_clip(w.samples * 10 ** (gain_db / 20)))


def find_codec_backend(codec_bin_dir: str | None = None) -> str | None:
    """Path to an ffmpeg binary, looked up in the given dir, $ADVPOST_CODEC_DIR, then PATH."""
    for d in (codec_bin_dir, os.environ.get(CODEC_ENV_VAR)):
        if d:
            found = shutil.which("ffmpeg", path=d)
            if found:
                return found
    return shutil.which("ffmpeg")


def _ffmpeg_roundtrip(ffmpeg: str, w: Waveform, kind: str, quality: float) -> np.ndarray:
    encoder, ext, (lo, hi) = _FFMPEG_CODECS[kind]
    kbps = int(round(lo + quality * (hi - lo)))
    with tempfile.TemporaryDirectory() as tmp:
        src, enc, dec = (os.path.join(tmp, n) for n in ("in.wav", f"enc.{ext}", "out.wav"))
        write_wav(w, src)
        subprocess.run([ffmpeg, "-nostdin", "-loglevel", "error", "-y", "-i", src, "-c:a", encoder,
                        "-b:a", f"{kbps}k", enc], check=True, capture_output=True)
        subprocess.run([ffmpeg, "-nostdin", "-loglevel", "error", "-y", "-i", enc, "-ac", "1",
                        "-ar", str(w.sample_rate), "-c:a", "pcm_s16le", dec], check=True, capture_output=True)
        return read_wav(dec).samples


def codec_surrogate(x: np.ndarray, sample_rate: int, quality: float) -> np.ndarray:
    """Built-in lossy stand-in: zero-phase low-pass plus bit-depth reduction.

    quality 1 keeps 16 bits and a 7 kHz band, quality 0 leaves 4 bits and 1.5 kHz.
    """
    cutoff = 1500.0 + quality * 5500.0
    bits = int(round(4 + 12 * quality))
    sos = butter(8, min(cutoff, 0.45 * sample_rate), "lowpass", fs=sample_rate, output="sos")
    y = sosfiltfilt(sos, x) if len(x) > 60 else x.copy()
    step = 2.0 / (2 ** bits)
    return np.round(y / step) * step


def apply_codec(w: Waveform, spec: AugmentSpec, rng: np.random.Generator | None = None) -> Waveform:
    if spec.kind not in CODEC_KINDS:
        raise AugmentError(f"{spec.kind!r} is not a codec augmentation")
    rng = rng if rng is not None else np.random.default_rng(0)
    q_lo, q_hi = spec.params.get("quality", (0.0, 1.0))
    quality = float(rng.uniform(q_lo, q_hi)) if q_hi > q_lo else float(q_lo)
    ffmpeg = None if spec.params.get("force_surrogate") else find_codec_backend(spec.params.get("codec_bin_dir"))
    out = None
    if ffmpeg:
        try:
            out = _ffmpeg_roundtrip(ffmpeg, w, spec.kind, quality)
            backend = "ffmpeg"
        except (subprocess.CalledProcessError, OSError):
            out = None
    if out is None:
        out = codec_surrogate(w.samples, w.sample_rate, quality)
        backend = "surrogate"
    out = _fit_length(out, len(w))
    return w.replace(_clip(out), codec=spec.kind, quality=quality, codec_backend=backend,
                     codec_surrogate=backend == "surrogate")


def downsample_roundtrip(w: Waveform, target_rate: int = 8000) -> Waveform:
    narrow = resample(w, target_rate)
    back = resample(narrow, w.sample_rate)
    return w.replace(_clip(_fit_length(back.samples, len(w))))


def _pick_source(paths, rng: np.random.Generator) -> Waveform | None:
    if not paths:
        return None
    if isinstance(paths, str):
        paths = sorted(glob.glob(os.path.join(paths, "**", "*.wav"), recursive=True)) if os.path.isdir(paths) else [paths]
    if not paths:
        return None
    return read_wav(paths[int(rng.integers(len(paths)))])


def _interferer(kind: str, w: Waveform, params: dict, rng: np.random.Generator) -> Waveform:
    loaded = _pick_source(params.get("sources"), rng)
    if loaded is not None:
        return resample(loaded, w.sample_rate)
    n = max(len(w), 1)
    if kind == "noise":
        x = synth.white_noise(n, rng)
    elif kind == "music":
        x = synth.tone_complex(n, w.sample_rate, rng)
    else:
        x = synth.babble(n, w.sample_rate, rng)
    return Waveform(x, w.sample_rate)


def apply_spec(w: Waveform, spec: AugmentSpec, rng: np.random.Generator) -> tuple[Waveform, dict]:
    """Apply one augmentation with parameters drawn from `rng`; returns the drawn parameters too."""
    p = spec.params
    if spec.kind in ADDITIVE_KINDS:
        snr = float(rng.uniform(*p.get("snr_db", (0.0, 20.0))))
        out = mix_additive(w, _interferer(spec.kind, w, p, rng), snr)
        return out, {"snr_db": snr}
    if spec.kind == "reverb":
        rir = _pick_source(p.get("rir_paths"), rng)
        if rir is None:
            rt60 = float(rng.uniform(*p.get("rt60", (0.2, 0.8))))
            rir = Waveform(synth.exponential_rir(w.sample_rate, rng, rt60), w.sample_rate)
            drawn = {"rt60": rt60}
        else:
            rir = resample(rir, w.sample_rate)
            drawn = {}
        return apply_reverb(w, rir), drawn
    if spec.kind == "volume":
        gain = float(rng.uniform(*p.get("gain_db", (-10.0, 20.0))))
        return apply_gain(w, gain), {"gain_db": gain}
    if spec.kind in CODEC_KINDS:
        out = apply_codec(w, spec, rng)
        return out, {"quality": out.metadata["quality"], "backend": out.metadata["codec_backend"]}
    target = int(p.get("target_rate", 8000))
    return downsample_roundtrip(w, target), {"target_rate": target}


def augment_random(w: Waveform, menu: list[AugmentSpec], seed: int) -> tuple[Waveform, AugmentSpec]:
    """Apply exactly one augmentation chosen uniformly from `menu` by `seed`."""
    if not menu:
        raise EmptyMenuError("empty augmentation menu")
    rng = np.random.default_rng(seed)
    chosen = menu[int(rng.integers(len(menu)))]
    out, drawn = apply_spec(w, chosen, rng)
    out.metadata.update(augmentation=chosen.kind, params=drawn, seed=seed)
    return out, chosen
