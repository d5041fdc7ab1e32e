"""Command line entry point: ``htrclp <command> [flags]``.

Every command takes ``--seed`` and ``--out DIR`` and writes only inside
``--out``.  ``--config FILE`` reads ``key = value`` lines (``#`` comments)
whose keys are flag names without dashes; flags on the command line win.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .augment import KINDS, AugmentSpec, apply as augment_apply
from .data import HANDS, SynthSpec, TextSource, load_dataset, save_dataset, synth_generate, write_pgm
from .data.dataset import Dataset, LabeledLine
from .model import (DESK, PAPER, CheckpointError, ConfigError, FreezeSpec, TrainSchedule, evaluate_model,
                    fine_tune, load, save)
from .noise import (ClpConfig, ClpError, CorruptionSpec, cer_histogram, clp, corrupt, score_folds,
                    sensitivity_sweep, sweep_csv)
from .numerics.alloc import tune_allocator
from .rng import substream
from .schemes import Scheme, SchemeError, SchemeSpec, run_scheme, validate_scheme

log = logging.getLogger("htrclp")

FREEZE_NAMES = ("all-free", "cnn1", "cnn12", "cnn123")
COMPARE_EPSILONS = (0.5, 0.7)


class UsageError(Exception):
    """Bad arguments; reported before any computation with exit code 2."""


# -- helpers -------------------------------------------------------------------

def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def _history_csv(history: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_cer", "skipped", "aborted"])
    for r in history:
        w.writerow([r["epoch"], f"{r['train_loss']:.6f}", f"{r['val_cer']:.6f}", r["skipped"], r["aborted"]])
    return buf.getvalue()


def _dataset(path, height=None, charset=None) -> Dataset:
    if path is None:
        raise UsageError("a dataset directory is required")
    if not Path(path).is_dir():
        raise UsageError(f"dataset directory {path} does not exist")
    return load_dataset(path, height=height, charset=charset)


def _checkpoint(path):
    if path is None:
        raise UsageError("--source/--model checkpoint is required")
    if not Path(path).is_file():
        raise UsageError(f"checkpoint {path} does not exist")
    return load(path)


def _schedule(args) -> TrainSchedule:
    return TrainSchedule(max_epochs=args.epochs, batch_size=args.batch_size, patience=min(args.patience, max(args.epochs, 1)),
                         seed=args.seed, lr=args.lr, optimizer=args.optimizer, clip_norm=args.clip_norm or None)


def _augment(args) -> AugmentSpec:
    return AugmentSpec(kind=args.aug_kind, rotation_deg=args.aug_rotation, shear_deg=args.aug_shear,
                       scale_range=(args.aug_scale_min, args.aug_scale_max), translate_px=args.aug_translate,
                       grid_px=args.aug_grid, sigma_px=args.aug_sigma)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _report_files(out: Path, report) -> None:
    _write(out / "report.json", report.to_json())
    _write(out / "report.csv", report.to_csv())


# -- commands ------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.hand not in HANDS:
        raise UsageError(f"unknown hand {args.hand!r}; choose from {sorted(HANDS)}")
    text_seed = args.seed if args.text_seed is None else args.text_seed
    spec = SynthSpec(atlas=args.atlas, hand=HANDS[args.hand], n_lines=args.lines, seed=args.seed,
                     height=args.height, id_prefix=args.prefix,
                     text=TextSource(kind=args.text, min_chars=args.min_chars, max_chars=args.max_chars,
                                     seed=text_seed))
    save_dataset(synth_generate(spec), _out(args))
    return 0


def _scheme_args(args, default: Scheme):
    scheme = Scheme(args.scheme) if args.scheme else default
    source = None
    if args.source is not None:
        source = _checkpoint(args.source)
    from .schemes import source_was_augmented

    validate_scheme(scheme, source is not None, None if source is None else source_was_augmented(source))
    return scheme, source


def _run_training(args, default: Scheme) -> int:
    scheme, source = _scheme_args(args, default)
    schedule = _schedule(args)
    freeze = FreezeSpec.parse(args.freeze)
    data = _dataset(args.data, height=source.config.input_height if source else args.height or None)
    test = _dataset(args.test, height=data.height, charset=data.charset) if args.test else None
    config = PAPER if args.paper_scale else DESK
    config = dataclasses.replace(config, input_height=data.height, scale=args.scale)
    spec = SchemeSpec(scheme, freeze=freeze, source=source, augment=_augment(args))
    out = _out(args)
    state, history = run_scheme(spec, data, schedule, config)
    save(state, out / "model.ckpt")
    _write(out / "history.csv", _history_csv(history))
    if test is not None:
        report, _ = evaluate_model(state, test, B=args.bootstrap, seed=args.seed)
        _report_files(out, report)
    return 0


def cmd_train(args) -> int:
    return _run_training(args, Scheme.SCRATCH)


def cmd_transfer(args) -> int:
    return _run_training(args, Scheme.DA_TL)


def cmd_eval(args) -> int:
    state = _checkpoint(args.model)
    data = _dataset(args.data, height=state.config.input_height)
    out = _out(args)
    missing = sorted({c for t in data.texts for c in t} - set(state.charset))
    if missing:
        raise UsageError(f"dataset characters {missing} are not in the model charset")
    report, hyps = evaluate_model(state, data, B=args.bootstrap, seed=args.seed)
    _report_files(out, report)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "hyp", "ref"])
    for ln, h in zip(data, hyps):
        w.writerow([ln.id, h, ln.text])
    _write(out / "decodes.csv", buf.getvalue())
    return 0


def cmd_corrupt(args) -> int:
    data = _dataset(args.data)
    spec = CorruptionSpec(L=args.L, R=args.R, seed=args.seed)
    out = _out(args)
    corrupted, mask = corrupt(data, spec)
    save_dataset(corrupted, out)
    _write(out / "corrupted.txt", "".join(f"{ln.id}\n" for ln, m in zip(corrupted, mask) if m))
    return 0


def _clp_config(args, epsilon) -> ClpConfig:
    return ClpConfig(folds=args.folds, epsilon=epsilon, schedule=_schedule(args), freeze=FreezeSpec.parse(args.freeze),
                     align=args.align, seed=args.seed, jobs=args.jobs)


def cmd_clp(args) -> int:
    if args.compare and not args.test:
        raise UsageError("--compare needs --test to report CERs")
    config = _clp_config(args, args.epsilon)
    source = _checkpoint(args.source)
    data = _dataset(args.data, height=source.config.input_height)
    test = _dataset(args.test, height=data.height, charset=data.charset) if args.test else None
    out = _out(args)
    scores = score_folds(source, data, config)
    try:
        purged, final, report = clp(source, data, config, test, scores=scores)
    except ClpError as exc:
        _write(out / "report.json", exc.report.to_json())
        raise
    save(final, out / "model.ckpt")
    save_dataset(purged, out / "purged")
    _write(out / "report.json", report.to_json())
    _write(out / "clp_lines.csv", report.lines_csv())
    hist = cer_histogram(report, args.bin_width)
    _write(out / "clp_hist.csv", hist.to_csv())
    _write(out / "clp_summary.txt", hist.summary())
    if args.compare:
        base, _ = fine_tune(source, data, config.schedule, config.freeze)
        base_report, _ = evaluate_model(base, test, seed=args.seed)
        rows = [{"setting": "baseline", "epsilon": None, "cer": base_report.cer, "removed": 0}]
        for eps in COMPARE_EPSILONS:
            if eps == config.epsilon:
                rep = report
            else:
                _, _, rep = clp(source, data, dataclasses.replace(config, epsilon=eps), test, scores=scores)
            rows.append({"setting": f"eps={int(round(eps * 100))}%", "epsilon": eps,
                         "cer": rep.final_eval.cer, "removed": rep.n_removed})
        _write(out / "compare.json", json.dumps(rows, indent=2, sort_keys=True) + "\n")
        _write(out / "compare.txt", format_compare(rows))
    return 0


def format_compare(rows) -> str:
    """One line per setting; CER in percent, removed lines in parentheses."""
    cells = []
    for r in rows:
        cell = f"{r['setting']}: {100 * r['cer']:.2f}"
        if r["epsilon"] is not None:
            cell += f" ({r['removed']})"
        cells.append(cell)
    return "\n".join(cells) + "\n"


def cmd_sweep(args) -> int:
    try:
        counts = [int(c) for c in args.line_counts.split(",") if c.strip()]
    except ValueError:
        raise UsageError(f"--line-counts must be comma-separated integers, got {args.line_counts!r}") from None
    source = _checkpoint(args.source)
    data = _dataset(args.data, height=source.config.input_height)
    test = _dataset(args.test, height=data.height, charset=data.charset)
    if counts[-1:] and counts[-1] > len(data):
        raise UsageError(f"line count {counts[-1]} exceeds the {len(data)} lines of {args.data}")
    corruption = CorruptionSpec(L=args.L, R=args.R, seed=args.seed) if args.L > 0 else None
    out = _out(args)
    points = sensitivity_sweep(source, data, test, counts, _schedule(args), FreezeSpec.parse(args.freeze),
                               corruption, seed=args.seed)
    _write(out / "sweep.csv", sweep_csv(points))
    return 0


def cmd_augment_preview(args) -> int:
    data = _dataset(args.data)
    spec = _augment(args)
    out = _out(args)
    n = min(args.n, len(data))
    pick = sorted(substream(args.seed, "preview").choice(len(data), size=n, replace=False).tolist())
    for i in pick:
        ln: LabeledLine = data[i]
        write_pgm(out / f"{ln.id}_before.pgm", ln.image)
        write_pgm(out / f"{ln.id}_after.pgm", augment_apply(ln.image, spec, substream(args.seed, "augment", i)))
    return 0


# -- parser --------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="worker processes for independent fold trainings")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="key = value file; command line flags take precedence")
    p.add_argument("-v", "--verbose", action="store_true")


def _training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--clip-norm", type=float, default=5.0, help="0 disables clipping")
    p.add_argument("--freeze", choices=FREEZE_NAMES, default="cnn1")
    p.add_argument("--bootstrap", type=int, default=1000, help="bootstrap replicates for CIs")


def _augmentation(p: argparse.ArgumentParser) -> None:
    d = AugmentSpec()
    p.add_argument("--aug-kind", choices=KINDS, default=d.kind)
    p.add_argument("--aug-rotation", type=float, default=d.rotation_deg)
    p.add_argument("--aug-shear", type=float, default=d.shear_deg)
    p.add_argument("--aug-scale-min", type=float, default=d.scale_range[0])
    p.add_argument("--aug-scale-max", type=float, default=d.scale_range[1])
    p.add_argument("--aug-translate", type=float, default=d.translate_px)
    p.add_argument("--aug-grid", type=int, default=d.grid_px)
    p.add_argument("--aug-sigma", type=float, default=d.sigma_px)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="htrclp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic line dataset")
    _common(p)
    p.add_argument("--atlas", choices=("A", "B"), default="A")
    p.add_argument("--hand", default="A", help="perturbation preset: plain, A or B")
    p.add_argument("--lines", type=int, default=100)
    p.add_argument("--text", choices=("uniform", "words"), default="uniform")
    p.add_argument("--text-seed", type=int, default=None, help="transcript seed (default: --seed)")
    p.add_argument("--min-chars", type=int, default=8)
    p.add_argument("--max-chars", type=int, default=16)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--prefix", default="line")
    p.set_defaults(func=cmd_synth)

    for name, func, default in (("train", cmd_train, "scratch"), ("transfer", cmd_transfer, "da-tl")):
        p = sub.add_parser(name, help=f"run a training scheme (default {default})")
        _common(p)
        _training(p)
        _augmentation(p)
        p.add_argument("--scheme", choices=[s.value for s in Scheme], default=default)
        p.add_argument("--source", help="source checkpoint for tl, da-tl and da-tl-da")
        p.add_argument("--data", help="training dataset directory")
        p.add_argument("--test", help="evaluation dataset directory")
        p.add_argument("--height", type=int, default=0, help="resize lines to this height (default: data)")
        p.add_argument("--scale", type=float, default=1.0, help="width multiplier for new models")
        p.add_argument("--paper-scale", action="store_true", help="full-size architecture for new models")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="decode a dataset and report CER/WER with bootstrap CIs")
    _common(p)
    p.add_argument("--model", help="checkpoint")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--bootstrap", type=int, default=1000)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("corrupt", help="plant label noise in a dataset")
    _common(p)
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--L", type=float, default=0.1, help="line modification probability")
    p.add_argument("--R", type=float, default=0.3, help="character replacement probability")
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("clp", help="corrupted label purging")
    _common(p)
    _training(p)
    p.add_argument("--source", help="source checkpoint")
    p.add_argument("--data", help="target training dataset")
    p.add_argument("--test", help="evaluation dataset for the final model")
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--folds", type=int, default=2)
    p.add_argument("--align", action="store_true", help="realign flagged annotations")
    p.add_argument("--compare", action="store_true", help="baseline vs eps=50%% vs eps=70%%")
    p.add_argument("--bin-width", type=float, default=0.05)
    p.set_defaults(func=cmd_clp)

    p = sub.add_parser("sweep", help="test CER against the number of target lines")
    _common(p)
    _training(p)
    p.add_argument("--source", help="source checkpoint")
    p.add_argument("--data", help="target training dataset")
    p.add_argument("--test", help="evaluation dataset")
    p.add_argument("--line-counts", default="29,116,351")
    p.add_argument("--L", type=float, default=0.0, help="corrupt the target first (0: clean)")
    p.add_argument("--R", type=float, default=0.3)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("augment-preview", help="write before/after augmentation pairs")
    _common(p)
    _augmentation(p)
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--n", type=int, default=8)
    p.set_defaults(func=cmd_augment_preview)
    return parser


def read_config_file(path) -> dict:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value.strip("\"'")
    return values


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        if not Path(args.config).is_file():
            raise UsageError(f"config file {args.config} does not exist")
        values = read_config_file(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, value in values.items():
            if key not in known or key in ("config", "out", "help"):
                raise UsageError(f"{args.config}: unknown key {key!r} for {args.command}")
            action = known[key]
            if action.nargs == 0:
                defaults[key] = value.lower() in ("1", "true", "yes", "on")
            else:
                defaults[key] = action.type(value) if action.type else value
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        raise UsageError(f"--jobs must be at least 1, got {args.jobs}")
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"htrclp: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    tune_allocator()
    try:
        return args.func(args)
    except (UsageError, SchemeError, ConfigError) as exc:
        print(f"htrclp: error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, ClpError, ValueError, RuntimeError, OSError) as exc:
        print(f"htrclp: {args.command} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
