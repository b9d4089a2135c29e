"""``gazeload`` command line.

Exit codes: 0 success, 1 usage error, 2 data error. Every subcommand writes
``run_manifest.json`` next to its outputs; ``gazeload rerun <manifest>``
replays it.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import load_session, read_manifest, save_session, trim_pre_task
from .dataset import (InputMode, SplitMode, WindowConfig, export_dataset_csv, load_dataset,
                      save_dataset, split)
from .errors import GazeLoadError
from .evaluation import evaluate, report_table
from .forest import FULL_GRID, grid_search, load_grid, save_forest, write_scores_csv
from .ivt import IvtConfig, detect_fixations, write_fixations_csv
from .mlp import MlpConfig, save_model, train
from .pipeline import PipelineConfig, build_dataset, fit_and_evaluate, model_meta
from .preprocess import NormalizeScope, PreprocessConfig, preprocess_pupil
from .stream import StreamConfig, load_any_model, serve, serve_pipe
from .synth import SynthConfig, generate_cohort

log = logging.getLogger("gazeload")

MANIFEST_NAME = "run_manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- argument groups ---------------------------------------------------------

def _seed(p):
    p.add_argument("--seed", type=int, default=0, help="seed for every random choice")


def _session_in(p):
    p.add_argument("--in", dest="inp", required=True, help="gaze CSV")
    p.add_argument("--manifest", required=True, help="session manifest (key=value)")


def _cohort(p):
    g = p.add_argument_group("data source")
    g.add_argument("--data", help="directory of <id>.csv + <id>.manifest pairs")
    g.add_argument("--synthetic", action="store_true", help="generate a synthetic cohort")
    g.add_argument("--n-low", type=int, default=10)
    g.add_argument("--n-high", type=int, default=10)
    g.add_argument("--effect", type=float, default=1.0, help="multiplier on class differences")
    g.add_argument("--duration", type=float, default=120.0, help="seconds per synthetic session")


def _features(p, normalize_default="global"):
    g = p.add_argument_group("features")
    g.add_argument("--window-len", type=int, default=2000)
    g.add_argument("--stride", type=int, default=500)
    g.add_argument("--input-mode", choices=["flatten", "summary"], default="flatten")
    g.add_argument("--cutoff-hz", type=float, default=4.0)
    g.add_argument("--normalize", choices=["global", "session"], default=normalize_default)
    g.add_argument("--ivt-threshold", type=float, default=30.0, help="deg/s")
    g.add_argument("--min-fixation-ms", type=float, default=60.0)
    g.add_argument("--max-gap-ms", type=float, default=75.0)


def _splitting(p):
    p.add_argument("--split", choices=["window", "subject"], default="window")
    p.add_argument("--test-fraction", type=float, default=0.2)


def _mlp_flags(p):
    g = p.add_argument_group("MLP")
    g.add_argument("--epochs", type=int, default=500)
    g.add_argument("--lr", type=float, default=1e-5)
    g.add_argument("--batch", type=int, default=256)


def _rf_flags(p):
    g = p.add_argument_group("random forest")
    g.add_argument("--grid", help="JSON grid file, or 'full' for the 486-cell grid")
    g.add_argument("--folds", type=int, default=3)


def build_parser():
    parser = _Parser(prog="gazeload", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gazeload {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="write a synthetic cohort as CSV + manifests")
    _cohort(p)
    _seed(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("preprocess", help="denoise and normalise one session's pupil signals")
    _session_in(p)
    p.add_argument("--cutoff-hz", type=float, default=4.0)
    p.add_argument("--normalize", choices=["session"], default="session",
                   help="a single session can only be scaled to its own range")
    p.add_argument("--out", required=True, help="output CSV")

    p = sub.add_parser("fixations", help="detect fixations in one session")
    _session_in(p)
    p.add_argument("--ivt-threshold", type=float, default=30.0)
    p.add_argument("--min-fixation-ms", type=float, default=60.0)
    p.add_argument("--max-gap-ms", type=float, default=75.0)
    p.add_argument("--out", required=True, help="output CSV")

    p = sub.add_parser("dataset", help="build the windowed dataset")
    _cohort(p)
    _features(p)
    _seed(p)
    p.add_argument("--csv", help="also export the dataset as CSV")
    p.add_argument("--out", required=True, help="output .glds file")

    p = sub.add_parser("train-mlp", help="train the MLP on the training side of a split")
    p.add_argument("--dataset", required=True)
    _splitting(p)
    _mlp_flags(p)
    _seed(p)
    p.add_argument("--out", required=True, help="output .glmn file")

    p = sub.add_parser("train-rf", help="grid-search and train the random forest")
    p.add_argument("--dataset", required=True)
    _splitting(p)
    _rf_flags(p)
    _seed(p)
    p.add_argument("--scores", help="grid score CSV (default: next to --out)")
    p.add_argument("--out", required=True, help="output .glrf file")

    p = sub.add_parser("evaluate", help="score a model on the test side of a split")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    _splitting(p)
    p.add_argument("--on", choices=["test", "all"], default="test")
    p.add_argument("--threshold", type=float, default=0.5)
    _seed(p)
    p.add_argument("--out", required=True, help="output directory for report.csv/report.txt")

    p = sub.add_parser("serve", help="stream predictions over TCP or stdin/stdout")
    p.add_argument("--model", required=True)
    p.add_argument("--listen", default="127.0.0.1:7878", help="host:port")
    p.add_argument("--pipe", action="store_true", help="read stdin, write stdout")
    p.add_argument("--emit-stride", type=int, help="override the model's stride")
    p.add_argument("--floor-range-mm", type=float, default=0.5)

    p = sub.add_parser("pipeline", help="synthesise or load, build features, train both, report")
    _cohort(p)
    _features(p)
    _splitting(p)
    _mlp_flags(p)
    _rf_flags(p)
    _seed(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("rerun", help="replay a run from its run_manifest.json")
    p.add_argument("manifest")
    p.add_argument("--out", help="redirect outputs to another location")
    return parser


# -- helpers -----------------------------------------------------------------

def _write_run_manifest(out_dir, args, inputs, outputs, extra=None):
    """Deterministic record of one run (no clocks, no hostnames)."""
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    doc = {"tool": "gazeload", "version": __version__, "command": args.command,
           "seed": getattr(args, "seed", None), "config": cfg,
           "inputs": [str(p) for p in inputs], "outputs": [str(p) for p in outputs]}
    if extra:
        doc.update(extra)
    path = Path(out_dir) / MANIFEST_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _load_dir(path):
    root = Path(path)
    if not root.is_dir():
        raise UsageError(f"--data {path} is not a directory")
    sessions, inputs = [], []
    for csv_path in sorted(root.glob("*.csv")):
        man = csv_path.with_suffix(".manifest")
        if not man.exists():
            log.info("no manifest for %s, skipping", csv_path.name)
            continue
        sessions.append(load_session(csv_path, man))
        inputs += [csv_path, man]
    if not sessions:
        raise UsageError(f"no <id>.csv + <id>.manifest pairs in {path}")
    return sessions, inputs


def _cohort_sessions(args):
    if bool(args.synthetic) == bool(args.data):
        raise UsageError("give exactly one of --synthetic or --data")
    if args.data:
        return _load_dir(args.data)
    base = SynthConfig(duration_s=args.duration)
    return [s for s, _ in generate_cohort(args.n_low, args.n_high, args.effect, args.seed, base)], []


def _window_cfg(args):
    return WindowConfig(args.window_len, args.stride, InputMode[args.input_mode.upper()])


def _ivt_cfg(args):
    return IvtConfig(args.ivt_threshold, args.min_fixation_ms, args.max_gap_ms)


def _grid(args):
    if args.grid is None:
        return None
    if args.grid == "full":
        return FULL_GRID
    return load_grid(args.grid)


def _pipeline_cfg(args):
    return PipelineConfig(
        window=_window_cfg(args), cutoff_hz=args.cutoff_hz,
        normalize_scope=NormalizeScope(args.normalize), ivt=_ivt_cfg(args),
        split=SplitMode(args.split), test_fraction=args.test_fraction,
        mlp=MlpConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch,
                    seed=args.seed),
        grid=_grid(args), folds=args.folds, seed=args.seed,
    )


def _sidecar(dataset_path):
    return Path(str(dataset_path) + ".json")


def _dataset_meta(path):
    side = _sidecar(path)
    return json.loads(side.read_text(encoding="utf-8")) if side.exists() else {}


def _write_reports(reports, out_dir):
    text, csv_text = report_table(reports)
    out = Path(out_dir)
    (out / "report.csv").write_text(csv_text, encoding="utf-8")
    (out / "report.txt").write_text(text, encoding="utf-8")
    return [out / "report.csv", out / "report.txt"], text


# -- subcommands -------------------------------------------------------------

def cmd_synth(args):
    args.synthetic = True
    args.data = None
    sessions, _ = _cohort_sessions(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for s in sessions:
        pid = s.meta.participant_id
        save_session(s, out / f"{pid}.csv", out / f"{pid}.manifest")
        outputs += [out / f"{pid}.csv", out / f"{pid}.manifest"]
    _write_run_manifest(out, args, [], outputs)
    print(f"wrote {len(sessions)} sessions to {out}")
    return 0


def cmd_preprocess(args):
    session = trim_pre_task(load_session(args.inp, args.manifest))
    cfg = PreprocessConfig(args.cutoff_hz, NormalizeScope(args.normalize))
    left, right = preprocess_pupil(session, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write("timestamp_us,left_pupil,right_pupil\n")
        for t, a, b in zip(session.timestamp_us, left, right):
            fh.write(f"{int(t)},{float(a)!r},{float(b)!r}\n")
    _write_run_manifest(out.parent, args, [args.inp, args.manifest], [out])
    return 0


def cmd_fixations(args):
    session = trim_pre_task(load_session(args.inp, args.manifest))
    events = detect_fixations(session, _ivt_cfg(args))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_fixations_csv(events, out)
    _write_run_manifest(out.parent, args, [args.inp, args.manifest], [out])
    print(f"{len(events)} fixations -> {out}")
    return 0


def cmd_dataset(args):
    sessions, inputs = _cohort_sessions(args)
    window = _window_cfg(args)
    ds, scales = build_dataset(sessions, window, args.cutoff_hz, NormalizeScope(args.normalize),
                               _ivt_cfg(args))
    cfg = PipelineConfig(window=window, cutoff_hz=args.cutoff_hz,
                         normalize_scope=NormalizeScope(args.normalize), ivt=_ivt_cfg(args))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    meta = model_meta(cfg, scales, sessions[0].meta.sampling_hz)
    _sidecar(out).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    outputs = [out, _sidecar(out)]
    if args.csv:
        export_dataset_csv(ds, args.csv)
        outputs.append(Path(args.csv))
    _write_run_manifest(out.parent, args, inputs, outputs)
    print(f"{len(ds)} windows x {ds.width} -> {out}")
    return 0


def _train_side(args):
    ds = load_dataset(args.dataset)
    train_ds, _ = split(ds, args.split, args.test_fraction, args.seed)
    return train_ds


def cmd_train_mlp(args):
    train_ds = _train_side(args)
    cfg = MlpConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch,
                    seed=args.seed)
    model = train(train_ds.inputs, train_ds.labels, cfg)
    model.meta.update(_dataset_meta(args.dataset))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    _write_run_manifest(out.parent, args, [args.dataset], [out])
    print(f"final loss {model.loss_history[-1]:.4f} -> {out}")
    return 0


def cmd_train_rf(args):
    train_ds = _train_side(args)
    model, rows = grid_search(train_ds.inputs, train_ds.labels, _grid(args), args.folds, args.seed)
    model.meta.update(_dataset_meta(args.dataset))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    scores = Path(args.scores) if args.scores else out.parent / "grid_scores.csv"
    save_forest(model, out)
    write_scores_csv(rows, scores)
    _write_run_manifest(out.parent, args, [args.dataset], [out, scores])
    print(f"best {model.config.as_dict()} -> {out}")
    return 0


def cmd_evaluate(args):
    model = load_any_model(args.model)
    ds = load_dataset(args.dataset)
    test = ds if args.on == "all" else split(ds, args.split, args.test_fraction, args.seed)[1]
    report = evaluate(model, test, args.threshold, dataset_tag=args.on)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs, text = _write_reports([report], out)
    _write_run_manifest(out, args, [args.model, args.dataset], outputs)
    print(text, end="")
    return 0


def cmd_serve(args):
    model = load_any_model(args.model)
    overrides = {"floor_range_mm": args.floor_range_mm}
    if args.emit_stride:
        overrides["stride"] = args.emit_stride
    cfg = StreamConfig.from_meta(model.meta, **overrides)
    if args.pipe:
        serve_pipe(model, cfg)
    else:
        serve(args.listen, args.model, cfg)
    return 0


def cmd_pipeline(args):
    sessions, inputs = _cohort_sessions(args)
    cfg = _pipeline_cfg(args)
    ds, scales = build_dataset(sessions, cfg.window, cfg.cutoff_hz, cfg.normalize_scope, cfg.ivt)
    result = fit_and_evaluate(ds, cfg, model_meta(cfg, scales, sessions[0].meta.sampling_hz))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out / "dataset.glds")
    save_model(result.mlp, out / "mlp.glmn")
    save_forest(result.forest, out / "rf.glrf")
    write_scores_csv(result.grid_rows, out / "grid_scores.csv")
    reports, text = _write_reports(result.reports, out)
    outputs = [out / "dataset.glds", out / "mlp.glmn", out / "rf.glrf", out / "grid_scores.csv",
               *reports]
    _write_run_manifest(out, args, inputs, outputs, {
        "windows": {"total": len(ds), "train": len(result.train), "test": len(result.test),
                    "high_fraction": float(np.mean(ds.labels))},
        "rf_best": result.forest.config.as_dict(),
    })
    print(text, end="")
    return 0


def cmd_rerun(args):
    doc = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    cfg = dict(doc["config"])
    if args.out:
        cfg["out"] = args.out
    parser = build_parser()
    ns = parser.parse_args([cfg["command"], *_required_positionals(cfg)])
    for k, v in cfg.items():
        setattr(ns, k, v)
    return COMMANDS[ns.command](ns)


def _required_positionals(cfg):
    # satisfy required flags so argparse builds a namespace; values are then overwritten
    flags = {"synth": ["out"], "preprocess": ["inp", "manifest", "out"],
             "fixations": ["inp", "manifest", "out"], "dataset": ["out"],
             "train-mlp": ["dataset", "out"], "train-rf": ["dataset", "out"],
             "evaluate": ["model", "dataset", "out"], "serve": ["model"], "pipeline": ["out"]}
    argv = []
    for key in flags.get(cfg["command"], []):
        flag = "--in" if key == "inp" else "--" + key.replace("_", "-")
        argv += [flag, str(cfg[key])]
    return argv


COMMANDS = {
    "synth": cmd_synth, "preprocess": cmd_preprocess, "fixations": cmd_fixations,
    "dataset": cmd_dataset, "train-mlp": cmd_train_mlp, "train-rf": cmd_train_rf,
    "evaluate": cmd_evaluate, "serve": cmd_serve, "pipeline": cmd_pipeline, "rerun": cmd_rerun,
}


def main(argv=None):
    level = os.environ.get("GAZELOAD_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gazeload: error: {exc}", file=sys.stderr)
        return 1
    except (GazeLoadError, OSError, json.JSONDecodeError) as exc:
        print(f"gazeload: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
