"""``scenerec`` command-line entry point.

Configuration is layered: built-in defaults < config file < flags. The
config file (``--config`` or ``$SCENEREC_CONFIG``) is JSON with optional
global keys (seed, log_level, threads) and one block per command, e.g.
``{"seed": 7, "train": {"learning_rate": 0.001}}``. Unknown keys are a
usage error. Every command that writes a directory also writes the fully
resolved configuration there as ``config.json``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import logging
import os
import sys
import traceback
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .audio import WavError, Waveform, apply_gain, read_wav, wav_info
from .bench import DEFAULT_DURATIONS_S, latency_benchmark
from .dataset import (CLIP_SECONDS, LABELS, SPLIT_RATIOS, AugmentationConfig, DatasetError, DatasetManifest,
                      SceneLabel, SourceClip, build_mixed_dataset, compute_corpus_rms, speech_slice_offsets,
                      split_dataset, standardisation_gain)
from .evaluation import DEFAULT_GAINS_DB, evaluate, gain_sweep_eval, score_clips
from .features import DEFAULT_CONFIG, clip_patches, mel_centres_hz, write_patch
from .model import clip_scores, count_parameters, init_model, softmax_aggregate
from .training import LabeledClip, TrainConfig, TrainingError, train_head
from .weightfile import WeightFileError, load_weights, save_weights

log = logging.getLogger("scenerec")

CONFIG_ENV = "SCENEREC_CONFIG"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class Option:
    flags: tuple[str, ...]
    dest: str
    default: Any
    help: str
    type: Callable | None = None
    action: str | None = None
    choices: tuple | None = None
    nargs: str | None = None


def _opt(*flags, dest, default=None, help, **kw) -> Option:
    return Option(tuple(flags), dest, default, help, **kw)


GLOBAL_OPTIONS = [
    _opt("--seed", dest="seed", default=0, type=int, help="seed for every random choice (default 0)"),
    _opt("--config", dest="config", default=None,
         help=f"JSON config file (default: ${CONFIG_ENV} if set)"),
    _opt("--log-level", dest="log_level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"),
         help="diagnostic verbosity on stderr (default INFO)"),
    _opt("--threads", dest="threads", default=None, type=int, help="cap on BLAS/worker threads"),
]

COMMANDS: dict[str, tuple[str, list[Option]]] = {
    "build-dataset": ("Standardise, mix, split and catalogue source corpora.", [
        _opt("--sources", dest="sources", help="corpus descriptor JSON (required)"),
        _opt("--out", dest="out", help="output dataset directory (required)"),
        _opt("--interfering-quota", dest="interfering_quota", type=int,
             help="interfering_speakers clip count (default: all speech left after mixing)"),
        _opt("--split-ratios", dest="split_ratios", type=float, nargs="+", default=list(SPLIT_RATIOS),
             help="train/validation/test fractions (default 0.7 0.1 0.2)"),
        _opt("--no-silence-check", dest="check_silence", action="store_false", default=True,
             help="do not skip zero-RMS source clips"),
    ]),
    "train": ("Train the classifier head on frozen backbone embeddings.", [
        _opt("--dataset", dest="dataset", help="dataset directory with manifest.json (required)"),
        _opt("--out", dest="out", help="run directory (required)"),
        _opt("--backbone", dest="backbone",
             help="weight file for the frozen backbone (default: fresh random backbone from --seed)"),
        _opt("--lr", dest="learning_rate", type=float, default=TrainConfig.learning_rate,
             help="initial learning rate (default 1e-5)"),
        _opt("--max-epochs", dest="max_epochs", type=int, default=TrainConfig.max_epochs,
             help="epoch limit (default 100)"),
        _opt("--batch-size", dest="batch_size", type=int, default=TrainConfig.batch_size,
             help="windows per optimiser step (default 32)"),
        _opt("--head-init", dest="head_init", default="random", choices=("random", "zeros"),
             help="initial dense head (default random)"),
        _opt("--label-smoothing", dest="label_smoothing", type=float, default=TrainConfig.label_smoothing,
             help="smoothing factor (default 0.1)"),
        _opt("--focal-alpha", dest="focal_alpha", type=float, default=TrainConfig.focal_alpha,
             help="focal loss positive weight (default 0.25)"),
        _opt("--focal-gamma", dest="focal_gamma", type=float, default=TrainConfig.focal_gamma,
             help="focal loss focusing power (default 2)"),
        _opt("--no-augment", dest="augment", action="store_false", default=True,
             help="disable on-the-fly gain/noise/stretch augmentation"),
    ]),
    "eval": ("Evaluate a model on one split of a dataset.", [
        _opt("--model", dest="model", help="weight file (required)"),
        _opt("--dataset", dest="dataset", help="dataset directory (required)"),
        _opt("--split", dest="split", default="test", choices=("train", "validation", "test"),
             help="split to evaluate (default test)"),
        _opt("--out", dest="out", help="report directory (required)"),
        _opt("--gain-sweep", dest="gain_sweep", action="store_true", default=False,
             help="also evaluate at -20..+20 dB input gain"),
        _opt("--no-plot", dest="plot", action="store_false", default=True, help="skip the SVG report"),
    ]),
    "infer": ("Score every 960 ms window of a WAV file.", [
        _opt("--model", dest="model", help="weight file (required)"),
        _opt("--wav", dest="wav", help="16 kHz mono PCM16 WAV (required)"),
        _opt("--format", dest="format", default="json", choices=("json", "csv"), help="output format (default json)"),
        _opt("--gain-db", dest="gain_db", type=float, default=0.0, help="input gain applied first (default 0)"),
        _opt("--aggregate", dest="aggregate", default="none", choices=("none", "softmax"),
             help="add a clip-level softmax over summed window scores"),
        _opt("--out", dest="out", help="output file (default stdout); its resolved config goes to <out>.config.json"),
    ]),
    "bench": ("Time inference at several clip durations and fit a line.", [
        _opt("--model", dest="model", help="weight file (required)"),
        _opt("--durations", dest="durations", type=float, nargs="+", default=list(DEFAULT_DURATIONS_S),
             help="clip durations in seconds (default 5 10 20 30)"),
        _opt("--repeats", dest="repeats", type=int, default=5, help="timed runs per duration (default 5)"),
        _opt("--out", dest="out", help="output directory (required)"),
    ]),
    "inspect-model": ("Summarise, convert or create a weight file.", [
        _opt("--model", dest="model", help="weight file to inspect or convert"),
        _opt("--random", dest="random_classes", type=int,
             help="create a random model with this many classes instead of reading one"),
        _opt("--init", dest="init_scheme", default="fan_in", choices=("fan_in", "truncated_normal", "zeros"),
             help="initialisation for --random (default fan_in)"),
        _opt("--convert", dest="convert", choices=("f16", "f32"), help="storage precision to write"),
        _opt("--output", dest="output", help="where to write a converted or created model"),
    ]),
    "inspect-features": ("Summarise the log-mel patches of a WAV file.", [
        _opt("--wav", dest="wav", help="16 kHz mono PCM16 WAV (required)"),
        _opt("--out", dest="out", help="directory for one .patch file per window"),
    ]),
}

REQUIRED = {
    "build-dataset": ("sources", "out"),
    "train": ("dataset", "out"),
    "eval": ("model", "dataset", "out"),
    "infer": ("model", "wav"),
    "bench": ("model", "out"),
    "inspect-features": ("wav",),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add(parser: argparse.ArgumentParser, opt: Option) -> None:
    kw: dict[str, Any] = {"dest": opt.dest, "help": opt.help, "default": argparse.SUPPRESS}
    if opt.action:
        kw["action"] = opt.action
    else:
        kw["metavar"] = opt.dest.upper()
        for name in ("type", "choices", "nargs"):
            if getattr(opt, name) is not None:
                kw[name] = getattr(opt, name)
        if opt.choices:
            kw.pop("metavar")
    parser.add_argument(*opt.flags, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scenerec", description="Acoustic scene recognition toolkit.")
    parser.add_argument("--version", action="version", version=f"scenerec {__version__}")
    for opt in GLOBAL_OPTIONS:
        _add(parser, opt)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, (doc, options) in COMMANDS.items():
        p = sub.add_parser(name, help=doc, description=doc)
        for opt in options:
            _add(p, opt)
        # global options are accepted after the command name too
        glob = p.add_argument_group("global options")
        for opt in GLOBAL_OPTIONS:
            _add(glob, opt)
    return parser


# ---------------------------------------------------------------- configuration

def _defaults(options: Sequence[Option]) -> dict:
    return {o.dest: o.default for o in options if o.dest != "config"}


def load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    allowed = set(_defaults(GLOBAL_OPTIONS)) | set(COMMANDS)
    unknown = set(data) - allowed
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)} (allowed: {sorted(allowed)})")
    for name in COMMANDS:
        block = data.get(name, {})
        if not isinstance(block, dict):
            raise UsageError(f"config block {name!r} must be an object")
        extra = {"augmentation"} if name == "train" else set()
        unknown = set(block) - set(_defaults(COMMANDS[name][1])) - extra
        if unknown:
            raise UsageError(f"unknown keys in config block {name!r}: {sorted(unknown)}")
    return data


def resolve(argv: Sequence[str]) -> tuple[str, dict, dict]:
    """Parse argv and merge layers; returns (command, global options, command options)."""
    args = vars(build_parser().parse_args(list(argv)))
    command = args.pop("command", None)
    if command is None:
        raise UsageError("no command given; choose one of: " + ", ".join(COMMANDS))
    config_path = args.get("config") or os.environ.get(CONFIG_ENV)
    file_cfg = load_config_file(config_path)
    glob = _defaults(GLOBAL_OPTIONS)
    glob.update({k: v for k, v in file_cfg.items() if k in glob})
    glob.update({k: v for k, v in args.items() if k in glob})
    opts = _defaults(COMMANDS[command][1])
    opts.update(file_cfg.get(command, {}))
    opts.update({k: v for k, v in args.items() if k in opts})
    missing = [k for k in REQUIRED.get(command, ()) if opts.get(k) in (None, "")]
    if missing:
        flags = {o.dest: o.flags[0] for o in COMMANDS[command][1]}
        raise UsageError(f"{command}: missing required option(s): " + ", ".join(flags[k] for k in missing))
    return command, glob, opts


def _write_config(path: Path, command: str, glob: dict, opts: dict, **extra) -> None:
    doc = {**glob, command: {**opts, **extra}}
    doc.pop("config", None)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=str) + "\n")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- build-dataset

def _corpus_files(spec: dict, base: Path, name: str) -> list[Path]:
    if "files" in spec:
        files = [base / f for f in spec["files"]]
    elif "dir" in spec:
        files = sorted((base / spec["dir"]).glob("*.wav"))
    else:
        raise DatasetError(f"corpus {name!r} needs 'dir' or 'files'")
    if not files:
        raise DatasetError(f"corpus {name!r} has no WAV files")
    return files


def _file_clips(path: Path, offsets: list[int], clip_samples: int, rate: int) -> list[SourceClip]:
    def make(o):
        return SourceClip(path.stem, o / rate, lambda: read_wav(path, offset=o, frames=clip_samples))
    return [make(o) for o in offsets]


def _scaled(clips: list[SourceClip], gain: float) -> list[SourceClip]:
    def make(c):
        return SourceClip(c.source_id, c.offset_s,
                          lambda: (w := c.load()).with_samples(w.samples.astype(np.float64) * gain))
    return [make(c) for c in clips]


def load_sources(path: str | Path) -> tuple[list[SourceClip], dict[SceneLabel, list[SourceClip]], float, dict]:
    """Read a corpus descriptor and return standardised lazy corpora.

    Descriptor keys: ``speech`` ({"dir"|"files"}; each file is a
    conversation recording cut into 10 s clips after its first second),
    ``corpora`` (label name -> {"dir"|"files"}; each file is cut into
    consecutive 10 s clips, any shorter tail dropped) and optional
    ``rms_from`` (label name -> corpus whose RMS it is divided by; default
    cocktail_party, except music which uses its own). The reference level
    is the pooled RMS of the speech clips.
    """
    path = Path(path)
    try:
        desc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path} is not valid JSON: {e}")
    unknown = set(desc) - {"speech", "corpora", "rms_from"}
    if unknown:
        raise DatasetError(f"unknown keys in {path}: {sorted(unknown)}")
    base = path.parent
    rate = DEFAULT_CONFIG.sample_rate_hz
    clip_samples = int(CLIP_SECONDS * rate)

    speech: list[SourceClip] = []
    for f in _corpus_files(desc.get("speech", {}), base, "speech"):
        _, n = wav_info(f)
        speech += _file_clips(f, speech_slice_offsets(n, rate), clip_samples, rate)

    corpora: dict[SceneLabel, list[SourceClip]] = {}
    for name, spec in desc.get("corpora", {}).items():
        try:
            label = SceneLabel(name)
        except ValueError:
            raise DatasetError(f"unknown corpus label {name!r}")
        clips = []
        for f in _corpus_files(spec, base, name):
            _, n = wav_info(f)
            clips += _file_clips(f, list(range(0, n - clip_samples + 1, clip_samples)), clip_samples, rate)
        if not clips:
            raise DatasetError(f"corpus {name!r} has no file of at least {CLIP_SECONDS:g} s")
        corpora[label] = clips

    per_corpus = {"speech": compute_corpus_rms(c.load() for c in speech)}
    for label, clips in corpora.items():
        per_corpus[label.value] = compute_corpus_rms(c.load() for c in clips)
    reference = per_corpus["speech"]
    rms_from = {label.value: SceneLabel.COCKTAIL_PARTY.value for label in corpora}
    if SceneLabel.MUSIC in corpora:
        rms_from[SceneLabel.MUSIC.value] = SceneLabel.MUSIC.value
    rms_from.update(desc.get("rms_from", {}))
    standardised = {}
    for label, clips in corpora.items():
        source = rms_from[label.value]
        if source not in per_corpus:
            raise DatasetError(f"{label.value} is standardised by {source!r}, which is not a supplied corpus")
        standardised[label] = _scaled(clips, standardisation_gain(per_corpus[source], reference))
    return speech, standardised, reference, per_corpus


def cmd_build_dataset(glob: dict, opts: dict) -> None:
    out = Path(opts["out"])
    speech, corpora, reference, per_corpus = load_sources(opts["sources"])
    log.info("%d speech clips; corpora: %s", len(speech), {k.value: len(v) for k, v in corpora.items()})
    manifest = build_mixed_dataset(speech, corpora, out, interfering_quota=opts["interfering_quota"],
                                   seed=glob["seed"], reference_rms=reference, per_corpus_rms=per_corpus,
                                   check_silence=opts["check_silence"])
    manifest = split_dataset(manifest, opts["split_ratios"], glob["seed"])
    manifest.save(out)
    _write_config(out / "config.json", "build-dataset", glob, opts)
    log.info("wrote %d clips to %s", len(manifest.clips), out)


# ---------------------------------------------------------------- train / eval

def dataset_clips(root: str | Path, split: str) -> list[LabeledClip]:
    root = Path(root)
    manifest = DatasetManifest.load(root)
    index = {label: i for i, label in enumerate(LABELS)}

    def make(rec):
        return LabeledClip(rec.clip_id, index[rec.label], lambda: read_wav(root / rec.path))
    clips = [make(r) for r in manifest.select(split)]
    if not clips:
        raise DatasetError(f"split {split!r} of {root} is empty")
    return clips


def cmd_train(glob: dict, opts: dict) -> None:
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    file_aug = opts.get("augmentation") or {}
    aug = AugmentationConfig(**{**file_aug, "rng_seed": file_aug.get("rng_seed", glob["seed"])})
    if not opts["augment"]:
        aug = AugmentationConfig(**{**file_aug, "probability_each": 0.0, "rng_seed": aug.rng_seed})
    cfg = TrainConfig(learning_rate=opts["learning_rate"], max_epochs=opts["max_epochs"],
                      batch_size=opts["batch_size"], head_init=opts["head_init"],
                      label_smoothing=opts["label_smoothing"], focal_alpha=opts["focal_alpha"],
                      focal_gamma=opts["focal_gamma"], seed=glob["seed"], augmentation=aug)
    labels = tuple(label.value for label in LABELS)
    if opts["backbone"]:
        backbone = load_weights(opts["backbone"])
    else:
        backbone = init_model(len(labels), seed=glob["seed"], labels=labels, scheme="fan_in")
    train = dataset_clips(opts["dataset"], "train")
    validation = dataset_clips(opts["dataset"], "validation")
    _write_config(out / "config.json", "train", glob, opts, augmentation=cfg.to_dict()["augmentation"])
    result = train_head(train, validation, backbone, cfg, labels=labels)
    (out / "history.csv").write_text(result.history.to_csv())
    save_weights(result.model, out / "best.weights")
    save_weights(result.final_model, out / "final.weights")
    log.info("best epoch %s of %d", result.history.best_epoch, len(result.history.epochs))


def cmd_eval(glob: dict, opts: dict) -> None:
    out = Path(opts["out"])
    model = load_weights(opts["model"])
    clips = dataset_clips(opts["dataset"], opts["split"])
    if model.class_count != len(LABELS):
        raise DatasetError(f"model has {model.class_count} classes, the dataset has {len(LABELS)} labels")
    scores, truth = score_clips(clips, model)
    report = evaluate(scores, truth, model.labels)
    report.write(out, plot=opts["plot"])
    if opts["gain_sweep"]:
        rows = gain_sweep_eval(clips, model, DEFAULT_GAINS_DB)
        with open(out / "gain_sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["gain_db", "mAP", "accuracy"])
            for r in rows:
                w.writerow([r.gain_db, repr(r.mean_average_precision), repr(r.accuracy)])
    _write_config(out / "config.json", "eval", glob, opts)
    log.info("mAP %.4f accuracy %.4f over %d windows", report.mean_average_precision, report.accuracy,
             report.window_count)


# ---------------------------------------------------------------- infer / bench / inspect

def infer_rows(w: Waveform, model, gain_db: float = 0.0) -> np.ndarray:
    if gain_db:
        w = apply_gain(w, gain_db)
    return clip_scores(w, model)


def format_scores(scores: np.ndarray, labels: Sequence[str], fmt: str, aggregate: np.ndarray | None) -> str:
    hop = DEFAULT_CONFIG.hop_samples / DEFAULT_CONFIG.sample_rate_hz
    if fmt == "json":
        doc: dict[str, Any] = {"labels": list(labels),
                               "windows": [{"index": i, "start_s": round(i * hop, 6),
                                            "scores": [float(v) for v in row]} for i, row in enumerate(scores)]}
        if aggregate is not None:
            doc["softmax_aggregate"] = [float(v) for v in aggregate]
        return json.dumps(doc, indent=1) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["window", "start_s"] + list(labels))
    for i, row in enumerate(scores):
        w.writerow([i, round(i * hop, 6)] + [repr(float(v)) for v in row])
    if aggregate is not None:
        w.writerow(["softmax_aggregate", ""] + [repr(float(v)) for v in aggregate])
    return buf.getvalue()


def cmd_infer(glob: dict, opts: dict) -> None:
    model = load_weights(opts["model"])
    scores = infer_rows(read_wav(opts["wav"]), model, opts["gain_db"])
    agg = softmax_aggregate(scores) if opts["aggregate"] == "softmax" else None
    _emit(format_scores(scores, model.labels, opts["format"], agg), opts["out"])
    if opts["out"]:
        _write_config(Path(opts["out"] + ".config.json"), "infer", glob, opts)


def cmd_bench(glob: dict, opts: dict) -> None:
    out = Path(opts["out"])
    report = latency_benchmark(opts["model"], opts["durations"], opts["repeats"], seed=glob["seed"])
    report.write(out)
    _write_config(out / "config.json", "bench", glob, opts)
    log.info("fit: %.3f ms/s + %.3f ms (R^2 %.4f); load %.2f ms", report.fit.slope, report.fit.intercept,
             report.fit.r_squared, report.load_ms)


def model_summary(model, path: str | None = None) -> dict:
    return {
        "path": path,
        "file_bytes": Path(path).stat().st_size if path else None,
        "dtype": model.dtype,
        "classes": model.class_count,
        "labels": list(model.labels),
        "parameters": count_parameters(model),
        "bn_epsilon": model.bn_epsilon,
        "layers": [{"name": l.name, "kind": l.kind, "shapes": {k: list(v) for k, v in l.tensor_shapes().items()}}
                   for l in model.layers if l.tensors],
    }


def cmd_inspect_model(glob: dict, opts: dict) -> None:
    if (opts["model"] is None) == (opts["random_classes"] is None):
        raise UsageError("inspect-model: give exactly one of --model or --random")
    if opts["random_classes"] is not None:
        if not opts["output"]:
            raise UsageError("inspect-model: --random needs --output")
        model = init_model(opts["random_classes"], seed=glob["seed"], scheme=opts["init_scheme"])
        path = None
    else:
        model = load_weights(opts["model"])
        path = opts["model"]
    if opts["output"]:
        save_weights(model, opts["output"], opts["convert"])
        _write_config(Path(opts["output"] + ".config.json"), "inspect-model", glob, opts)
        path = opts["output"]
        model = load_weights(path)
    elif opts["convert"]:
        raise UsageError("inspect-model: --convert needs --output")
    sys.stdout.write(json.dumps(model_summary(model, path), indent=1) + "\n")


def cmd_inspect_features(glob: dict, opts: dict) -> None:
    w = read_wav(opts["wav"])
    patches = clip_patches(w)
    hop = DEFAULT_CONFIG.hop_samples / DEFAULT_CONFIG.sample_rate_hz
    summary = {
        "wav": opts["wav"], "samples": len(w), "duration_s": w.duration_s, "windows": len(patches),
        "patch_shape": list(patches.shape[1:]),
        "mel_centres_hz": [round(float(f), 3) for f in mel_centres_hz()],
        "patches": [{"index": i, "start_s": round(i * hop, 6), "min": float(p.min()), "max": float(p.max()),
                     "mean": float(p.mean())} for i, p in enumerate(patches)],
    }
    if opts["out"]:
        out = Path(opts["out"])
        out.mkdir(parents=True, exist_ok=True)
        for i, p in enumerate(patches):
            write_patch(p, out / f"window-{i:04d}.patch")
        _write_config(out / "config.json", "inspect-features", glob, opts)
    sys.stdout.write(json.dumps(summary, indent=1) + "\n")


HANDLERS = {
    "build-dataset": cmd_build_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "bench": cmd_bench,
    "inspect-model": cmd_inspect_model,
    "inspect-features": cmd_inspect_features,
}

DATA_ERRORS = (WavError, DatasetError, WeightFileError, TrainingError, FileNotFoundError, IsADirectoryError,
               PermissionError)


def _thread_limit(n: int | None):
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def execute_command(argv: Sequence[str]) -> int:
    try:
        command, glob, opts = resolve(argv)
    except SystemExit as e:
        # --help and --version
        return EXIT_OK if not e.code else EXIT_USAGE
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        print("run 'scenerec --help' or 'scenerec COMMAND --help' for usage", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=glob["log_level"], stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)
    try:
        with _thread_limit(glob["threads"]):
            HANDLERS[command](glob, opts)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"error: invalid input: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception:
        traceback.print_exc(file=sys.stderr)
        print("error: internal failure; please report with the traceback above", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    return execute_command(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
