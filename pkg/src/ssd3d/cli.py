"""Command line entry point: ``ssd3d <genscenes|sample|train|eval|gradcheck> ...``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .config import ConfigError, RunConfig, load_config
from .core import Detection, PointCloud, Scene
from .data import RecallBenchSpec, recall_benchmark_scenes
from .nn import save_checkpoint
from .sampling import RecallCell, Strategy, recall_grid, row_label
from .scene_io import SceneFormatError, load_split, write_dataset

class CliError(RuntimeError):
    """Failure with a stable machine-readable class name."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


# ---------------------------------------------------------------- helpers


def _resolve(args) -> RunConfig:
    overrides: Dict[str, object] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    cfg = load_config(args.config, overrides)
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError("OutputDirError", f"cannot create {out}: {exc}") from None
    return out


def _echo_config(cfg: RunConfig, out: Path, command: str) -> None:
    doc = {"command": command, "seed": cfg.seed, "config": cfg.resolved()}
    (out / "resolved_config.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _scenes_from_dataset(path: str, split: Optional[str]) -> List[Scene]:
    if split is None:
        return load_split(path, "train") + load_split(path, "val")
    return load_split(path, split)


# ---------------------------------------------------------------- recall reports


def recall_table_csv(rows: Sequence[RecallCell]) -> str:
    """One row per method, one column per budget."""
    budgets = sorted({r.budget for r in rows})
    methods: List[str] = []
    grid: Dict[Tuple[str, int], float] = {}
    for r in rows:
        label = row_label(Strategy(r.strategy), r.lam)
        if label not in methods:
            methods.append(label)
        grid[(label, r.budget)] = r.recall
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", *budgets])
    for m in methods:
        w.writerow([m, *(repr(grid[(m, b)]) for b in budgets)])
    return buf.getvalue()


def read_recall_table(text: str) -> Dict[str, Dict[int, float]]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if not header or header[0] != "method":
        raise ValueError("not a recall table")
    budgets = [int(b) for b in header[1:]]
    return {row[0]: {b: float(v) for b, v in zip(budgets, row[1:])} for row in reader if row}


def recall_long_csv(rows: Sequence[RecallCell]) -> str:
    """Plot-ready long form: method, strategy, lambda, budget, recall."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "strategy", "lambda", "budget", "recall"])
    for r in rows:
        w.writerow([row_label(Strategy(r.strategy), r.lam), r.strategy, "" if r.lam is None else r.lam, r.budget, repr(r.recall)])
    return buf.getvalue()


def sampling_cells(cfg: RunConfig, strategy: Optional[str], lam: Optional[float]) -> List[Tuple[Strategy, float]]:
    strategies = [strategy] if strategy else cfg.sample.strategies
    lambdas = [lam] if lam is not None else cfg.sample.lambdas
    cells: List[Tuple[Strategy, float]] = []
    for s in strategies:
        s = Strategy(s)
        if s is Strategy.DFPS:
            cells.append((s, 1.0))
        else:
            cells.extend((s, float(l)) for l in lambdas)
    return cells


def _with_raw_features(scenes: Sequence[Scene]) -> List[Scene]:
    out = []
    for s in scenes:
        if s.cloud.features is None:
            c = s.cloud
            s = Scene(PointCloud(c.xyz, c.reflectance, c.raw_channels()), s.instances, s.id)
        out.append(s)
    return out


# ---------------------------------------------------------------- commands


def cmd_genscenes(args) -> Dict[str, object]:
    from .pipeline import class_names, make_splits

    cfg = _resolve(args)
    out = _out_dir(cfg)
    _echo_config(cfg, out, "genscenes")
    n_train, n_val = cfg.data.n_train, cfg.data.n_val
    if args.n is not None:
        if args.n < 1:
            raise CliError("ArgumentError", "--n must be >= 1")
        n_val = round(args.n * cfg.data.n_val / max(1, cfg.data.n_train + cfg.data.n_val))
        n_train = args.n - n_val
    splits = make_splits(cfg, n_train, n_val, cfg.seed)
    manifest = write_dataset(out, splits, class_names(cfg), {"seed": cfg.seed, "n_train": n_train, "n_val": n_val})
    return {"manifest": str(manifest), "n_train": n_train, "n_val": n_val}


def cmd_sample(args) -> Dict[str, object]:
    cfg = _resolve(args)
    out = _out_dir(cfg)
    _echo_config(cfg, out, "sample")
    if args.dataset:
        scenes = _scenes_from_dataset(args.dataset, None)
    else:
        scenes = recall_benchmark_scenes(RecallBenchSpec(seed=cfg.sample.bench_seed), cfg.sample.scenes)
    cells = sampling_cells(cfg, args.strategy, args.lam)
    if any(s is not Strategy.DFPS for s, _ in cells) and any(sc.cloud.features is None for sc in scenes):
        if not cfg.sample.raw_feature_fallback:
            raise CliError("MissingFeaturesError", "F-FPS needs per-point features and raw_feature_fallback is off")
        warnings.warn("scenes carry no features; F-FPS uses raw input channels", stacklevel=1)
        scenes = _with_raw_features(scenes)
    budgets = [args.budget] if args.budget else cfg.sample.budgets
    rows, timing = recall_grid(scenes, cells, budgets)
    (out / "recall_table.csv").write_text(recall_table_csv(rows), encoding="utf-8")
    (out / "recall_long.csv").write_text(recall_long_csv(rows), encoding="utf-8")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "points_per_sec"])
    for k, v in timing.items():
        w.writerow([k, f"{v:.1f}"])
    (out / "timing.csv").write_text(buf.getvalue(), encoding="utf-8")
    return {"rows": len(rows), "scenes": len(scenes), "table": str(out / "recall_table.csv")}


def cmd_train(args) -> Dict[str, object]:
    from .pipeline import checkpoint_meta, make_splits
    from .training import train

    cfg = _resolve(args)
    if args.steps is not None:
        cfg.train.steps = args.steps
    out = _out_dir(cfg)
    _echo_config(cfg, out, "train")
    scenes = load_split(args.dataset, "train") if args.dataset else make_splits(cfg, n_val=0)["train"]
    log_path = out / "train_log.jsonl"
    with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
        result = train(cfg, scenes, on_record=lambda r: fh.write(json.dumps(r) + "\n"))
    ckpt = out / "checkpoint.ssd3d"
    save_checkpoint(ckpt, result.model.params.state_dict(), checkpoint_meta(cfg, cfg.seed, cfg.train.steps, cfg.train.assignment))
    return {"checkpoint": str(ckpt), "log": str(log_path), "steps": cfg.train.steps, "seconds": round(result.seconds, 2)}


def cmd_eval(args) -> Dict[str, object]:
    from .pipeline import evaluate_model, make_splits, model_from_checkpoint, run_ablation

    cfg = _resolve(args)
    out = _out_dir(cfg)
    _echo_config(cfg, out, "eval")
    if args.dataset:
        val = load_split(args.dataset, "val")
    else:
        val = make_splits(cfg, n_train=0)["val"]
    if args.ablation:
        train_scenes = load_split(args.dataset, "train") if args.dataset else make_splits(cfg, n_val=0)["train"]
        rows = run_ablation(cfg, train_scenes, val, seed=cfg.seed, steps=args.steps)
        keys = sorted({k for r in rows for k in r.ap})
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["strategy", "assignment", "points_recall", *keys])
        for r in rows:
            w.writerow([r.strategy, r.assignment, repr(r.points_recall), *(repr(r.ap[k]) for k in keys)])
        (out / "ablation.csv").write_text(buf.getvalue(), encoding="utf-8")
        _write_json(out / "ablation.json", [r.to_dict() for r in rows])
        return {"ablation": str(out / "ablation.csv"), "rows": len(rows)}
    if args.oracle:
        from .metrics import evaluate
        from .pipeline import class_names, eval_inputs

        inputs = eval_inputs(cfg, val)
        dets = [[Detection(i.box, i.class_id, 1.0) for i in s.instances] for s in inputs]
        ev = cfg.eval
        report = evaluate(dets, inputs, ev.iou_thresholds, class_names(cfg), ev.primary_threshold)
        _write_json(out / "metrics.json", report.to_dict())
        return {"metrics": str(out / "metrics.json"), "mAP": report.mAP, "NDS": report.nds}
    if not args.checkpoint:
        raise CliError("ArgumentError", "eval needs --checkpoint (or --ablation / --oracle)")
    try:
        model = model_from_checkpoint(args.checkpoint, cfg if args.config else None)
    except (KeyError, ValueError) as exc:
        raise CliError("CheckpointMismatchError", str(exc).strip("'\"")) from None
    report = evaluate_model(model, cfg, val)
    _write_json(out / "metrics.json", report.to_dict())
    return {"metrics": str(out / "metrics.json"), "mAP": report.mAP, "NDS": report.nds}


def cmd_gradcheck(args) -> Dict[str, object]:
    from .gradcheck import linear_check, pipeline_check

    cfg = _resolve(args)
    out = _out_dir(cfg)
    _echo_config(cfg, out, "gradcheck")
    lin = linear_check(cfg.seed)
    full = pipeline_check(cfg.seed, max_entries=args.max_entries)
    doc = {"linear": lin.to_dict(), "pipeline": full.to_dict(), "passed": lin.passed and full.passed}
    _write_json(out / "gradcheck.json", doc)
    if not doc["passed"]:
        raise CliError("GradcheckFailed", f"max relative error {full.max_rel_error:.3g} (linear {lin.max_rel_error:.3g})")
    return {"passed": True, "max_rel_error": full.max_rel_error, "linear_max_error": lin.max_rel_error}


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", help="output directory (overrides the config)")

    p = argparse.ArgumentParser(prog="ssd3d", description="Point-based single-stage 3D detection at desk scale.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("genscenes", parents=[common], help="write synthetic scenes and a manifest")
    g.add_argument("--n", type=int, help="total scene count (split train/val by the config ratio)")
    g.set_defaults(func=cmd_genscenes)

    s = sub.add_parser("sample", parents=[common], help="points-recall grid and sampler throughput")
    s.add_argument("--dataset", help="manifest path; defaults to the built-in remote-instance benchmark")
    s.add_argument("--budget", type=int)
    s.add_argument("--strategy", choices=[x.value for x in Strategy])
    s.add_argument("--lambda", dest="lam", type=float)
    s.set_defaults(func=cmd_sample)

    t = sub.add_parser("train", parents=[common], help="train a detector")
    t.add_argument("--dataset", help="manifest path; defaults to scenes generated from the config")
    t.add_argument("--steps", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint or run the ablation grid")
    e.add_argument("--dataset")
    e.add_argument("--checkpoint")
    e.add_argument("--ablation", action="store_true", help="train and compare sampling strategies and assignments")
    e.add_argument("--steps", type=int, help="ablation training steps per cell")
    e.add_argument("--oracle", action="store_true", help="score ground truth as detections (sanity check of the metric path)")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    c.add_argument("--max-entries", type=int, default=24, help="entries checked per parameter block")
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        summary = args.func(args)
    except CliError as exc:
        print(f"error {exc.kind}: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error ConfigError: {exc}", file=sys.stderr)
        return 1
    except SceneFormatError as exc:
        print(f"error SceneFormatError: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error FileNotFoundError: {exc.filename}", file=sys.stderr)
        return 1
    except Exception as exc:  # unexpected: still one parseable line
        msg = " ".join(str(exc).split())
        print(f"error {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
