"""Command-line entry point: one pipeline stage per invocation.

    advpost prepare         canonicalize a manifest and add augmented negatives (or --toy)
    advpost train-detector  train the target-speaker detector
    advpost train-rgn       train the residual generator against a frozen detector
    advpost apply           post-process a manifest of fakes
    advpost eval            EER before/after, DSR, modification statistics
    advpost report          figures and a summary CSV from an eval directory

Failures print one JSON object on stderr and exit with a code per failure class.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import torch

from . import __version__
from .adversarial import modification_magnitude, train_rgn
from .audio import AudioError, ensure_canonical, read_wav, write_wav
from .augment import augment_random, default_menu
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, config_from_dict, load_config, save_config, sub_seed
from .detector import (DatasetSplit, DetectorTrainConfig, TrainingError, compute_eer, load_detector,
                       save_detector, score_waveform, train_detector)
from .evaluate import EvaluationError, compute_dsr, mt_summary, silence_speech_mt, spectrogram_diff
from .manifest import ManifestError, by_label, read_jsonl, read_manifest, write_jsonl
from .rgn import ResidualGenerator, generate_residual, load_generator

log = logging.getLogger("advpost")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_INPUT = 5
EXIT_RUNTIME = 6

SNAPSHOT_NAME = "config.resolved.yaml"


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str, **details):
        super().__init__(message)
        self.code, self.kind, self.details = code, kind, details


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, "usage", message, usage=self.format_usage().strip())


def _missing(path, what: str) -> CliError:
    return CliError(EXIT_MISSING, "missing_artifact", f"missing {what}: {path}", path=os.fspath(path))


def _require(path, what: str) -> str:
    if not path or not os.path.exists(path):
        raise _missing(path, what)
    return path


def _out(cfg: RunConfig, args) -> str:
    out = args.out or cfg.io.out_dir
    os.makedirs(out, exist_ok=True)
    return out


# -- prepare ---------------------------------------------------------------

def _menu(cfg: RunConfig):
    a = cfg.augment
    sources = {"noise": a.noise_dir, "music": a.music_dir, "babble": a.babble_dir}
    return default_menu(a.snr_db, a.gain_db, a.codec_quality, a.rt60, sources, a.rir_dir, a.codec_bin_dir)


def _mirror(paths: list[str]) -> tuple[str, list[str]]:
    """Common root of `paths` and each path relative to it."""
    root = os.path.commonpath([os.path.dirname(os.path.abspath(p)) for p in paths]) if paths else ""
    return root, [os.path.relpath(os.path.abspath(p), root) for p in paths]


def _prepare_toy(cfg: RunConfig, out: str) -> dict:
    from .toy import ToySetup, toy_corpus, write_toy_corpus
    corpus = toy_corpus(ToySetup(seed=cfg.seed))
    manifests = write_toy_corpus(corpus, out)
    # the detector trains on the adversary split; the held-out split trains a transfer detector
    rows = read_jsonl(manifests["adv_genuine"]) + read_jsonl(manifests["adv_fake"])
    write_jsonl(os.path.join(out, "manifest.jsonl"), rows)
    held = read_jsonl(manifests["held_genuine"]) + read_jsonl(manifests["held_fake"])
    write_jsonl(os.path.join(out, "held_manifest.jsonl"), held)
    return {k: os.path.relpath(v, out) for k, v in manifests.items()}


def cmd_prepare(cfg: RunConfig, args) -> dict:
    out = _out(cfg, args)
    if args.toy:
        return {"toy_manifests": _prepare_toy(cfg, out), "manifest": os.path.join(out, "manifest.jsonl")}
    path = _require(args.manifest or cfg.io.manifest, "manifest")
    rows = read_manifest(path)
    if not rows:
        raise CliError(EXIT_INPUT, "invalid_input", f"manifest {path} has no rows", path=path)
    root, rel = _mirror([r["path"] for r in rows])
    menu = _menu(cfg)
    copies = cfg.augment.copies_per_negative

    def work(i):
        row = rows[i]
        w = ensure_canonical(read_wav(row["path"]))
        target = os.path.join(out, "audio", rel[i])
        write_wav(w, target)
        produced = [{**row, "path": os.path.relpath(target, out), "augmentation": None}]
        is_negative = row["label"] != "target_natural"
        if is_negative or cfg.augment.augment_positives:
            stem, ext = os.path.splitext(target)
            for c in range(copies):
                seed = sub_seed(cfg.seed, f"augment/{rel[i]}/{c}")
                aug, spec = augment_random(w, menu, seed)
                aug_path = f"{stem}.aug{c}{ext}"
                write_wav(aug, aug_path)
                produced.append({**row, "path": os.path.relpath(aug_path, out), "augmentation": spec.kind,
                                 "params": aug.metadata.get("params"), "seed": seed,
                                 "source": row["path"]})
        return produced

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(work, range(len(rows))))
    out_rows = [r for group in results for r in group]
    manifest_out = os.path.join(out, "manifest.jsonl")
    write_jsonl(manifest_out, out_rows)
    return {"manifest": manifest_out, "rows": len(out_rows), "source_root": root}


# -- training ----------------------------------------------------------------

def _rows(path, what: str) -> list[dict]:
    return read_manifest(_require(path, what))


def cmd_train_detector(cfg: RunConfig, args) -> dict:
    out = _out(cfg, args)
    rows = _rows(args.manifest or cfg.io.manifest, "manifest")
    split = DatasetSplit(by_label(rows, "target_natural"), by_label(rows, "other_natural", "fake"))
    try:
        split.validate()
    except ValueError as exc:
        raise CliError(EXIT_INPUT, "invalid_input", str(exc)) from exc
    d = cfg.detector
    tcfg = DetectorTrainConfig(arch=d.arch, epochs=d.epochs, batch_size=d.batch_size, learning_rate=d.learning_rate,
                               weight_decay=d.weight_decay, crop_frames=d.crop_frames, val_fraction=d.val_fraction,
                               seed=sub_seed(cfg.seed, "detector"),
                               log_path=os.path.join(out, "detector_log.jsonl"))
    model = train_detector(split, tcfg, cfg.lfcc_config())
    ckpt = os.path.join(out, "detector.pt")
    save_detector(model, ckpt, seed=cfg.seed)
    scores = [{"path": r["path"], "score": score_waveform(model, ensure_canonical(read_wav(r["path"]))),
               "label": r["label"]}
              for r in rows]
    write_jsonl(os.path.join(out, "detector_scores.jsonl"), scores)
    return {"checkpoint": ckpt, "log": tcfg.log_path}


def cmd_train_rgn(cfg: RunConfig, args) -> dict:
    out = _out(cfg, args)
    det_path = _require(args.detector or cfg.io.detector_checkpoint or os.path.join(out, "detector.pt"),
                        "detector checkpoint")
    det = load_detector(det_path)
    rows = by_label(_rows(args.manifest or cfg.io.manifest, "manifest"), "fake")
    if not rows:
        raise CliError(EXIT_INPUT, "invalid_input", "manifest contains no fake rows to train on")
    ckpt = os.path.join(out, "rgn.pt")
    log_path = os.path.join(out, "rgn_log.jsonl")
    resume = None
    if args.resume:
        src = _require(ckpt if args.resume is True else args.resume, "generator checkpoint")
        g, resume = load_generator(src)
    else:
        torch.manual_seed(sub_seed(cfg.seed, "rgn"))
        g = ResidualGenerator(cfg.generator_config())
    sched = cfg.train_schedule()
    if args.steps is not None:
        sched.total_steps = args.steps
    train_rgn(g, det, rows, sched, cfg.train.lambda_A, cfg.train.lambda_R,
              log_path=log_path, checkpoint_path=ckpt, resume=resume)
    return {"checkpoint": ckpt, "log": log_path, "steps": sched.total_steps}


# -- apply / eval ------------------------------------------------------------

def cmd_apply(cfg: RunConfig, args) -> dict:
    out = _out(cfg, args)
    g, _ = load_generator(_require(args.generator or cfg.io.rgn_checkpoint or os.path.join(out, "rgn.pt"),
                                   "generator checkpoint"))
    rows = _rows(args.manifest or cfg.io.fakes_before_manifest or cfg.io.manifest, "manifest")
    _, rel = _mirror([r["path"] for r in rows])

    def work(i):
        w = ensure_canonical(read_wav(rows[i]["path"]))
        r = generate_residual(g, w)
        processed = w.replace(np.clip(w.samples + r.samples, -1.0, 1.0))
        target = os.path.join(out, "processed", rel[i])
        write_wav(processed, target)
        mt = modification_magnitude(r.samples, w.samples).numpy()
        entry = {"path": rows[i]["path"], "mean_Mt": float(mt.mean()),
                 "max_residual": float(np.abs(r.samples).max()) if len(r) else 0.0}
        return entry, {**rows[i], "path": os.path.relpath(target, out), "source": rows[i]["path"]}

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(work, range(len(rows))))
    write_jsonl(os.path.join(out, "apply_log.jsonl"), [e for e, _ in results])
    manifest_out = os.path.join(out, "processed.jsonl")
    write_jsonl(manifest_out, [m for _, m in results])
    return {"processed_manifest": manifest_out, "files": len(results)}


def _detector_paths(cfg: RunConfig, args, out: str) -> list[str]:
    paths = args.detectors or cfg.io.eval_detectors or [os.path.join(out, "detector.pt")]
    return [_require(p, "detector checkpoint") for p in paths]


def cmd_eval(cfg: RunConfig, args) -> dict:
    out = _out(cfg, args)
    det_paths = _detector_paths(cfg, args, out)
    genuine = by_label(_rows(args.genuine or cfg.io.genuine_manifest, "genuine manifest"),
                       "target_natural")
    before = _rows(args.before or cfg.io.fakes_before_manifest, "fakes-before manifest")
    after_path = args.after or cfg.io.fakes_after_manifest or os.path.join(out, "processed.jsonl")
    after = _rows(after_path, "fakes-after manifest")
    if not genuine:
        raise CliError(EXIT_INPUT, "invalid_input", "genuine manifest has no target_natural rows")
    detectors = [load_detector(p) for p in det_paths]
    names = [os.path.relpath(p) for p in det_paths]

    report = compute_dsr(detectors, after, genuine, names=names)
    gen_w = [ensure_canonical(read_wav(r["path"])) for r in genuine]
    before_w = {r["path"]: ensure_canonical(read_wav(r["path"])) for r in before}
    after_w = [(r, ensure_canonical(read_wav(r["path"]))) for r in after]

    primary = detectors[0]
    g_scores = [score_waveform(primary, w) for w in gen_w]
    report.eer_before = compute_eer(g_scores, [score_waveform(primary, w) for w in before_w.values()])[0]
    report.eer_after = compute_eer(g_scores, [score_waveform(primary, w) for _, w in after_w])[0]

    pairs = []
    for row, w in after_w:
        src = before_w.get(row.get("source"))
        if src is not None and len(src) == len(w):
            pairs.append((src, w.replace(w.samples - src.samples)))
    if pairs:
        report.mean_Mt_speech, report.mean_Mt_silence, frac = mt_summary(pairs)
        report.metadata["silence_below_speech_fraction"] = frac
    report.metadata.update(detectors=names, eer_detector=names[0], paired_utterances=len(pairs))

    report.write_json(os.path.join(out, "report.json"))
    report.write_table(os.path.join(out, "table.csv"))
    dump = [{"path": r["path"], "score": r["score"], "label": r["label"], "detector": r["detector"]}
            for r in report.table]
    dump += [{"path": p, "score": score_waveform(primary, w), "label": "fake_before", "detector": names[0]}
             for p, w in before_w.items()]
    write_jsonl(os.path.join(out, "scores.jsonl"), dump)
    return {"report": os.path.join(out, "report.json"), "dsr": report.dsr,
            "eer_before": report.eer_before, "eer_after": report.eer_after}


# -- report ------------------------------------------------------------------

def cmd_report(cfg: RunConfig, args) -> dict:
    from . import plotting
    out = _out(cfg, args)
    src = args.eval_dir or out
    report_path = _require(os.path.join(src, "report.json"), "eval report")
    scores_path = _require(os.path.join(src, "scores.jsonl"), "score dump")
    with open(report_path) as fh:
        report = json.load(fh)
    scores = read_jsonl(scores_path)
    figures = {}

    groups = {}
    first = report["metadata"].get("eer_detector")
    for r in scores:
        if r["detector"] == first:
            groups.setdefault(r["label"], []).append(r["score"])
    thr = {first: report["thresholds"][first]} if first in report.get("thresholds", {}) else None
    figures["scores"] = plotting.score_histogram(groups, os.path.join(out, "scores.png"), thr, first or "")

    log_path = args.rgn_log or os.path.join(src, "rgn_log.jsonl")
    if os.path.exists(log_path):
        figures["training"] = plotting.training_curves(read_jsonl(log_path), os.path.join(out, "training.png"))

    processed = os.path.join(src, "processed.jsonl")
    per_utt = []
    if os.path.exists(processed):
        rows = [r for r in read_manifest(processed) if r.get("source") and os.path.exists(r["source"])]
        for k, r in enumerate(rows):
            before = ensure_canonical(read_wav(r["source"]))
            after = ensure_canonical(read_wav(r["path"]))
            if len(before) != len(after):
                continue
            m = silence_speech_mt(before, after.replace(after.samples - before.samples),
                                  cfg.eval.vad_threshold_db, cfg.eval.vad_frame_ms)
            per_utt.append({"path": r["source"], "mean_Mt_speech": m.speech, "mean_Mt_silence": m.silence})
            if k < cfg.eval.spectrogram_examples:
                figures[f"spectrogram_{k}"] = os.path.join(out, f"spectrogram_{k}.png")
                spectrogram_diff(before, after, figures[f"spectrogram_{k}"], cfg.eval.band_hz)
        both = [u for u in per_utt if u["mean_Mt_speech"] is not None and u["mean_Mt_silence"] is not None]
        if both:
            figures["mt"] = plotting.mt_scatter([u["mean_Mt_speech"] for u in both],
                                                [u["mean_Mt_silence"] for u in both],
                                                os.path.join(out, "mt_scatter.png"))
        with open(os.path.join(out, "mt_per_utterance.csv"), "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["path", "mean_Mt_speech", "mean_Mt_silence"])
            writer.writeheader()
            writer.writerows(per_utt)

    summary = os.path.join(out, "summary.csv")
    with open(summary, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for key in ("eer_before", "eer_after", "dsr", "W", "A", "N", "mean_Mt_speech", "mean_Mt_silence"):
            writer.writerow([key, report.get(key)])
        frac = report["metadata"].get("silence_below_speech_fraction")
        if frac is not None:
            writer.writerow(["silence_below_speech_fraction", frac])
    return {"summary": summary, "figures": figures}


# -- plumbing ----------------------------------------------------------------

COMMANDS = {
    "prepare": cmd_prepare,
    "train-detector": cmd_train_detector,
    "train-rgn": cmd_train_rgn,
    "apply": cmd_apply,
    "eval": cmd_eval,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (defaults apply to missing keys)")
    common.add_argument("--seed", type=int, help="override the global seed")
    common.add_argument("--out", help="output directory (default: io.out_dir)")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers for file processing")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="advpost", description="Adversarial post-processing of synthetic speech.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", parents=[common], help="canonicalize audio and augment negatives")
    p.add_argument("--manifest")
    p.add_argument("--toy", action="store_true", help="write the synthetic toy corpus instead")

    p = sub.add_parser("train-detector", parents=[common], help="train the detector")
    p.add_argument("--manifest")

    p = sub.add_parser("train-rgn", parents=[common], help="train the residual generator")
    p.add_argument("--manifest")
    p.add_argument("--detector")
    p.add_argument("--steps", type=int, help="override train.total_steps")
    p.add_argument("--resume", nargs="?", const=True, default=None,
                   help="resume from a training-state checkpoint (default: <out>/rgn.pt)")

    p = sub.add_parser("apply", parents=[common], help="post-process fakes")
    p.add_argument("--manifest")
    p.add_argument("--generator")

    p = sub.add_parser("eval", parents=[common], help="score before/after sets")
    p.add_argument("--detectors", nargs="+")
    p.add_argument("--genuine")
    p.add_argument("--before")
    p.add_argument("--after")

    p = sub.add_parser("report", parents=[common], help="render figures and a summary CSV")
    p.add_argument("--eval-dir", help="directory holding report.json and scores.jsonl (default: --out)")
    p.add_argument("--rgn-log")
    return parser


def _resolve_config(args) -> RunConfig:
    if args.config:
        if not os.path.exists(args.config):
            raise _missing(args.config, "config file")
        cfg = load_config(args.config)
    else:
        cfg = config_from_dict({})
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _emit_error(err: CliError) -> int:
    payload = {"error": err.kind, "message": str(err), "exit_code": err.code, **err.details}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return err.code


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.jobs < 1:
            raise CliError(EXIT_USAGE, "usage", "--jobs must be >= 1")
        torch.set_num_threads(args.jobs)
        cfg = _resolve_config(args)
        out = _out(cfg, args)
        save_config(cfg, os.path.join(out, SNAPSHOT_NAME))
        result = COMMANDS[args.command](cfg, args)
        print(json.dumps({"command": args.command, **result}, sort_keys=True, default=str))
        return EXIT_OK
    except CliError as err:
        return _emit_error(err)
    except ConfigError as exc:
        return _emit_error(CliError(EXIT_CONFIG, "invalid_config", str(exc), key=exc.key, line=exc.line))
    except FileNotFoundError as exc:
        return _emit_error(CliError(EXIT_MISSING, "missing_artifact", str(exc),
                                    path=getattr(exc, "filename", None)))
    except (ManifestError, AudioError, CheckpointError, EvaluationError) as exc:
        return _emit_error(CliError(EXIT_INPUT, "invalid_input", str(exc)))
    except TrainingError as exc:
        return _emit_error(CliError(EXIT_RUNTIME, "training_failed", str(exc)))


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
