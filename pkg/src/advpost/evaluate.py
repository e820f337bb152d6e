"""Deception and perceptual-cost measurements.

* DSR = W / (A * N): W wrong decisions (fake accepted as genuine at the
  detector's own EER threshold) summed over N detectors, A evaluated fakes.
* EER of a transfer detector before and after post-processing.
* Mean modification magnitude over speech and silence frames.
* Log-spectrogram differences, per frequency band.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.signal import stft

from .adversarial import modification_magnitude
from .audio import Waveform, ensure_canonical, read_wav, speech_mask
from .detector import Detector, compute_eer, score_waveform

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
A_DEFINITION = "A counts evaluated fake samples only; genuine samples set thresholds"

Scorer = Callable[[Waveform], float]


class EvaluationError(ValueError):
    pass


def as_scorer(d) -> Scorer:
    if isinstance(d, Detector):
        return lambda w: score_waveform(d, w)
    if callable(d):
        return d
    raise TypeError(f"cannot score with {type(d).__name__}")


def _load(item) -> Waveform:
    if isinstance(item, Waveform):
        return item
    return ensure_canonical(read_wav(item["path"]))


def _path(item, i: int, prefix: str) -> str:
    if isinstance(item, Waveform):
        return item.metadata.get("path", f"{prefix}{i}")
    return item["path"]


def deception_success_rate(wrong: int, evaluated: int, n_detectors: int) -> float:
    if evaluated <= 0 or n_detectors <= 0:
        raise EvaluationError("DSR needs at least one evaluated sample and one detector")
    if not 0 <= wrong <= evaluated * n_detectors:
        raise EvaluationError(f"W={wrong} outside [0, A*N={evaluated * n_detectors}]")
    return wrong / (evaluated * n_detectors)


@dataclass
class EvalReport:
    eer_before: float | None = None
    eer_after: float | None = None
    dsr: float | None = None
    W: int = 0
    A: int = 0
    N: int = 0
    mean_Mt_speech: float | None = None
    mean_Mt_silence: float | None = None
    table: list = field(default_factory=list)
    thresholds: dict = field(default_factory=dict)
    excluded: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("table")
        d["schema_version"] = SCHEMA_VERSION
        d["metadata"] = {"A_definition": A_DEFINITION, **self.metadata}
        return d

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def write_table(self, path) -> None:
        write_score_table(path, self.table)


TABLE_FIELDS = ("detector", "path", "label", "score", "threshold", "fooled")


def write_score_table(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TABLE_FIELDS, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


def read_score_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["score"] = float(r["score"])
        r["threshold"] = float(r["threshold"]) if r["threshold"] else None
        r["fooled"] = r["fooled"] == "True"
    return rows


def recount_dsr(table: list[dict]) -> tuple[int, int, int]:
    """Brute-force (W, A, N) from a per-file table."""
    detectors = sorted({r["detector"] for r in table})
    fakes = sorted({r["path"] for r in table if r["label"] == "fake"})
    wrong = 0
    for r in table:
        if r["label"] == "fake" and r["score"] >= r["threshold"]:
            wrong += 1
    return wrong, len(fakes), len(detectors)


def compute_dsr(detectors, fakes, genuines, names=None, thresholds=None) -> EvalReport:
    """DSR of `fakes` against each detector at its own EER operating point.

    `detectors` are Detector instances or callables ``Waveform -> P(genuine)``.
    A fake that fails to score under any detector is excluded for all of them.
    `thresholds` overrides the EER operating points (one per detector).
    """
    if not detectors:
        raise EvaluationError("no detectors")
    if not fakes or not genuines:
        raise EvaluationError("empty fake or genuine set")
    scorers = [as_scorer(d) for d in detectors]
    names = list(names or [f"detector{i}" for i in range(len(scorers))])

    fake_w, excluded = [], []
    for i, item in enumerate(fakes):
        try:
            fake_w.append((_path(item, i, "fake"), _load(item)))
        except Exception as exc:  # unreadable file
            excluded.append({"path": _path(item, i, "fake"), "reason": str(exc)})
    gen_w = [(_path(item, i, "genuine"), _load(item)) for i, item in enumerate(genuines)]

    fake_scores = {}
    for name, scorer in zip(names, scorers):
        for path, w in fake_w:
            if path in fake_scores.get(name, {}):
                continue
            try:
                s = float(scorer(w))
                if not np.isfinite(s):
                    raise ValueError(f"non-finite score {s}")
            except Exception as exc:
                excluded.append({"path": path, "detector": name, "reason": str(exc)})
                continue
            fake_scores.setdefault(name, {})[path] = s
    bad = {e["path"] for e in excluded}
    kept = [(p, w) for p, w in fake_w if p not in bad]
    if not kept:
        raise EvaluationError("every fake sample failed to score")

    report = EvalReport(N=len(scorers), A=len(kept), excluded=excluded)
    for k, (name, scorer) in enumerate(zip(names, scorers)):
        g_scores = np.array([float(scorer(w)) for _, w in gen_w])
        f_scores = np.array([fake_scores[name][p] for p, _ in kept])
        thr = thresholds[k] if thresholds is not None else compute_eer(g_scores, f_scores)[1]
        report.thresholds[name] = thr
        for (p, _), s in zip(gen_w, g_scores):
            report.table.append({"detector": name, "path": p, "label": "genuine", "score": float(s),
                                 "threshold": thr, "fooled": False})
        for (p, _), s in zip(kept, f_scores):
            fooled = bool(s >= thr)
            report.W += fooled
            report.table.append({"detector": name, "path": p, "label": "fake", "score": float(s),
                                 "threshold": thr, "fooled": fooled})
    report.dsr = deception_success_rate(report.W, report.A, report.N)
    if recount_dsr(report.table) != (report.W, report.A, report.N):
        raise EvaluationError("DSR recount from the per-file table disagrees")
    return report


def eer_delta(det, genuines, fakes_before, fakes_after) -> tuple[float, float]:
    scorer = as_scorer(det)
    g = [scorer(_load(x)) for x in genuines]
    before = compute_eer(g, [scorer(_load(x)) for x in fakes_before])[0]
    after = compute_eer(g, [scorer(_load(x)) for x in fakes_after])[0]
    return before, after


class SpeechSilenceMt(NamedTuple):
    speech: float | None
    silence: float | None


def silence_speech_mt(original: Waveform, residual: Waveform, vad_threshold_db: float = -30.0,
                      frame_ms: float = 25.0) -> SpeechSilenceMt:
    """Mean modification magnitude over speech and silence frames; an absent class is None."""
    if len(original) != len(residual):
        raise EvaluationError("original and residual lengths differ")
    mt = modification_magnitude(residual.samples, original.samples).numpy()
    mask = speech_mask(original.samples, original.sample_rate, frame_ms, vad_threshold_db)
    speech = float(mt[mask].mean()) if mask.any() else None
    silence = float(mt[~mask].mean()) if (~mask).any() else None
    return SpeechSilenceMt(speech, silence)


def log_spectrogram(w: Waveform, n_fft: int = 512, hop_ms: float = 10.0, floor_db: float = -80.0):
    hop = int(round(hop_ms * w.sample_rate / 1000))
    x = w.samples if len(w) >= n_fft else np.pad(w.samples, (0, n_fft - len(w)))
    freqs, times, z = stft(x, fs=w.sample_rate, nperseg=n_fft, noverlap=n_fft - hop,
                           boundary=None, padded=False)
    db = 20 * np.log10(np.maximum(np.abs(z), 10 ** (floor_db / 20)))
    return freqs, times, db


def band_differences(freqs, diff_db, band_hz: float = 1000.0) -> dict:
    """Mean absolute log-spectral difference per band, keyed "lo-hi" in Hz."""
    out = {}
    top = freqs[-1]
    lo = 0.0
    while lo < top:
        hi = lo + band_hz
        sel = (freqs >= lo) & ((freqs < hi) | ((hi >= top) & (freqs <= top)))
        if sel.any():
            out[f"{int(lo)}-{int(min(hi, top))}"] = float(np.abs(diff_db[sel]).mean())
        lo = hi
    return out


def spectrogram_diff(before: Waveform, after: Waveform, out, band_hz: float = 1000.0) -> dict:
    """Write `out` (PNG: before, after, difference), plus `<stem>.npz` and `<stem>.json`.

    Returns the per-band mean absolute log-difference written to the JSON.
    """
    if len(before) != len(after):
        raise EvaluationError("before and after lengths differ")
    if before.sample_rate != after.sample_rate:
        raise EvaluationError("before and after sample rates differ")
    freqs, times, db_before = log_spectrogram(before)
    _, _, db_after = log_spectrogram(after)
    diff = db_after - db_before
    bands = band_differences(freqs, diff, band_hz)

    stem = os.path.splitext(os.fspath(out))[0]
    parent = os.path.dirname(stem)
    if parent:
        os.makedirs(parent, exist_ok=True)
    np.savez_compressed(stem + ".npz", freqs=freqs, times=times, before_db=db_before,
                        after_db=db_after, diff_db=diff)
    with open(stem + ".json", "w") as fh:
        json.dump({"band_hz": band_hz, "mean_abs_log_diff_db": bands}, fh, indent=2)

    from .plotting import spectrogram_figure
    spectrogram_figure(freqs, times, db_before, db_after, diff, out)
    return bands


def mt_summary(pairs) -> tuple[float | None, float | None, float]:
    """Aggregate (original, residual) pairs: mean speech M_t, mean silence M_t, and the
    fraction of utterances (having both classes) whose silence mean is below speech."""
    speech, silence, wins, both = [], [], 0, 0
    for original, residual in pairs:
        r = silence_speech_mt(original, residual)
        if r.speech is not None:
            speech.append(r.speech)
        if r.silence is not None:
            silence.append(r.silence)
        if r.speech is not None and r.silence is not None:
            both += 1
            wins += r.silence < r.speech
    return (float(np.mean(speech)) if speech else None,
            float(np.mean(silence)) if silence else None,
            wins / both if both else float("nan"))
