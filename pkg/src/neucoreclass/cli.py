"""Command-line interface: ``ncrc {synth,derive,train,score,evaluate,sweep}``.

Exit codes: 0 ok, 2 usage or input error, 3 output exists (use --force),
4 numeric failure during training, 5 aggregation failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import glob
import json
import logging
import platform
import shutil
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .data import (
    N_MINUS_1_VS_REST,
    ONE_VS_REST,
    SETTINGS,
    default_data_dir,
    derive_problems,
    load_dataset,
    load_problem,
    problem_dir,
    save_problem,
    write_sktime_ts,
    write_ucr_tsv,
    znormalize,
)
from .evaluation import (
    EvaluationResult,
    aggregate,
    evaluate,
    format_report,
    write_report,
    write_results,
)
from .exceptions import (
    DataError,
    InvalidConfig,
    MissingProblem,
    NCRCError,
    NonFiniteLoss,
    UnevenSeeds,
)
from .model import ModelConfig, init_model, load_checkpoint, save_checkpoint
from .scoring import score_batch, write_contributions, write_scores
from .training import (
    ABLATION_VARIANTS,
    K_GRID,
    TAU_GRID,
    TrainConfig,
    normalize_tasks,
    run_ablation,
    run_sensitivity,
    train,
    variant_name,
)

log = logging.getLogger("neucoreclass")

EXIT_OK, EXIT_USAGE, EXIT_EXISTS, EXIT_NUMERIC, EXIT_AGGREGATE = 0, 2, 3, 4, 5
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
DEFAULT_METHOD = "NeuCoReClassAD"

_MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"input_channels", "input_length"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}
_ALIASES = {"K": "n_transformations", "k": "n_transformations", "lr": "initial_lr",
            "patience": "scheduler_patience", "tasks": "enabled_tasks"}


class OutputExists(NCRCError):
    pass


# --------------------------------------------------------------------------
# Config handling


def load_config(path) -> tuple[dict, dict]:
    """Read a flat ``key: value`` YAML document into (model, train) dicts.

    Missing keys keep their defaults (the full-size reference hyperparameters).
    """
    raw = {}
    if path is not None:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise InvalidConfig(f"{path}: config must be a flat key-value mapping")
    model, train_cfg = {}, {}
    for key, value in raw.items():
        key = _ALIASES.get(key, key)
        if key in _MODEL_KEYS:
            model[key] = value
        elif key in _TRAIN_KEYS:
            train_cfg[key] = value
        else:
            raise InvalidConfig(f"unknown config key {key!r}")
    return model, train_cfg


def _apply_overrides(model_cfg, train_cfg, args):
    if getattr(args, "k", None) is not None:
        model_cfg["n_transformations"] = args.k
    if getattr(args, "tau", None) is not None:
        train_cfg["tau"] = args.tau
    if getattr(args, "batch_size_train", None) is not None:
        train_cfg["batch_size"] = args.batch_size_train
    if getattr(args, "max_epochs", None) is not None:
        train_cfg["max_epochs"] = args.max_epochs
    if getattr(args, "tasks", None) is not None:
        train_cfg["enabled_tasks"] = normalize_tasks(args.tasks)
    return model_cfg, train_cfg


def _parse_list(text, cast):
    if text is None:
        return None
    return [cast(v) for v in text.replace(" ", "").split(",") if v]


def _manifest(command, args, **extra):
    return {
        "command": command,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "versions": {
            "neucoreclass": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "torch": __import__("torch").__version__,
        },
        "arguments": {k: v for k, v in vars(args).items() if k != "func"},
        **extra,
    }


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _prepare_out(out: Path, sentinel: str, force: bool):
    if (out / sentinel).exists() and not force:
        raise OutputExists(f"{out / sentinel} exists; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)


def _resolve_input(path) -> Path:
    p = Path(path)
    if not p.exists():
        root = default_data_dir()
        if root is not None and (root / p).exists():
            return root / p
        raise FileNotFoundError(f"{path} does not exist")
    return p


def _print_table(rows, columns):
    widths = [max(len(str(c)), *(len(str(r[c])) for r in rows)) for c in columns]
    print("  ".join(str(c).ljust(w) for c, w in zip(columns, widths)))
    for r in rows:
        print("  ".join(str(r[c]).ljust(w) for c, w in zip(columns, widths)))


# --------------------------------------------------------------------------
# Commands


def cmd_synth(args):
    from .synthetic import make_sine_problem, make_synthetic_dataset

    out = Path(args.out)
    if args.kind == "sines":
        problem = make_sine_problem(seed=args.seed)
        target = problem_dir(out, problem)
        _prepare_out(target, "meta.json", args.force)
        print(save_problem(problem, out))
        return EXIT_OK
    ds = make_synthetic_dataset(n_classes=args.classes, seed=args.seed, channels=args.channels)
    writer = write_ucr_tsv if args.format == "ucr-tsv" else write_sktime_ts
    suffix = ".tsv" if args.format == "ucr-tsv" else ".ts"
    _prepare_out(out, f"{ds.name}_TRAIN{suffix}", args.force)
    for p in writer(ds, out):
        print(p)
    return EXIT_OK


def cmd_derive(args):
    dataset = load_dataset(_resolve_input(args.dataset), args.format)
    settings = SETTINGS if args.setting == "both" else (args.setting,)
    out = Path(args.out)
    problems = [p for s in settings for p in derive_problems(dataset, s)]
    existing = [problem_dir(out, p) for p in problems if problem_dir(out, p).exists()]
    if existing and not args.force:
        raise OutputExists(f"{existing[0]} exists; pass --force to overwrite")
    rows = []
    for p in problems:
        if args.normalize:
            p = znormalize(p)
        target = problem_dir(out, p)
        if target.exists():
            shutil.rmtree(target)
        save_problem(p, out)
        rows.append({
            "setting": p.setting, "problem_id": p.problem_id, "n_train": p.n_train,
            "n_eval": p.n_eval, "anomaly_fraction": f"{p.eval_labels.mean():.3f}",
        })
    _print_table(rows, ["setting", "problem_id", "n_train", "n_eval", "anomaly_fraction"])
    return EXIT_OK


def _train_one(problem, pdir, model_cfg, train_cfg, seed, out, args, method):
    from .data import split_train_val

    _prepare_out(out, "model.ncrc", args.force)
    mc = ModelConfig.from_dict({**model_cfg, "input_channels": problem.n_channels,
                                "input_length": problem.length})
    tc = TrainConfig.from_dict({**train_cfg, "seed": seed})
    split = split_train_val(problem, val_fraction=args.val_fraction, seed=seed)
    model = init_model(mc, seed=seed)
    log_path = out / "train_log.jsonl"
    with open(log_path, "w") as fh:
        def on_epoch(rec):
            fh.write(json.dumps(rec) + "\n")
            fh.flush()
        model, history = train(model, problem.train_normals, split, tc, on_epoch=on_epoch)
    save_checkpoint(model, out / "model.ncrc", seed=seed,
                    extra={"method": method, "problem_id": problem.problem_id})
    _write_json(out / "manifest.json", _manifest(
        "train", args, problem_dir=str(pdir), problem_id=problem.problem_id, method=method,
        seed=seed, model_config=mc.to_dict(), train_config=tc.to_dict(),
        enabled_tasks=list(tc.enabled_tasks), stop_reason=history.stop_reason,
        best_epoch=history.best_epoch, best_val_score=history.best_val_score,
        n_epochs=len(history.epochs), uncertainty=model.weights.as_dict(),
    ))
    print(f"{problem.problem_id} seed {seed}: {len(history.epochs)} epochs, "
          f"stop={history.stop_reason}, best val score {history.best_val_score:.6g} -> {out}")


def cmd_train(args):
    pdir = _resolve_input(args.problem_dir)
    problem = load_problem(pdir)
    model_cfg, train_cfg = _apply_overrides(*load_config(args.config), args)
    method = args.method or (DEFAULT_METHOD if "enabled_tasks" not in train_cfg
                             else variant_name(train_cfg["enabled_tasks"]))
    out = Path(args.out)
    seeds = _parse_list(args.seeds, int)
    if seeds:
        for s in seeds:
            _train_one(problem, pdir, model_cfg, train_cfg, s, out / f"seed_{s}", args, method)
    else:
        _train_one(problem, pdir, model_cfg, train_cfg, args.seed, out, args, method)
    return EXIT_OK


def cmd_score(args):
    problem = load_problem(_resolve_input(args.problem_dir))
    model, meta = load_checkpoint(_resolve_input(args.checkpoint))
    out = Path(args.out)
    _prepare_out(out, "scores.tsv", args.force)
    table = score_batch(model, problem.eval_sequences, batch_size=args.batch_size)
    write_scores(out / "scores.tsv", problem.problem_id, table, problem.eval_labels)
    write_contributions(out / "contributions.tsv", table, problem.eval_labels)
    extra = meta.get("extra", {})
    _write_json(out / "manifest.json", _manifest(
        "score", args, problem_id=problem.problem_id, seed=meta.get("seed"),
        method=extra.get("method", DEFAULT_METHOD), checkpoint=str(args.checkpoint),
        n_eval=problem.n_eval,
    ))
    print(f"{problem.problem_id}: scored {len(table)} samples -> {out}")
    return EXIT_OK


def _collect_results(patterns):
    from .scoring import read_scores

    paths = sorted({p for pat in patterns for p in glob.glob(pat, recursive=True)})
    if not paths:
        raise FileNotFoundError(f"no score files match {patterns}")
    results = []
    for path in paths:
        scores = read_scores(path)
        manifest_path = Path(path).with_name("manifest.json")
        meta = {}
        if manifest_path.exists():
            with open(manifest_path) as fh:
                meta = json.load(fh)
        problem_id = scores["problem_id"][0] if scores["problem_id"] else meta.get("problem_id")
        seed = meta.get("seed")
        results.append(evaluate(scores["overall"], scores["label"],
                                meta.get("method", DEFAULT_METHOD), problem_id,
                                0 if seed is None else seed))
    return results


def cmd_evaluate(args):
    results = _collect_results(args.scores)
    out = Path(args.out)
    _prepare_out(out, "results.tsv", args.force)
    write_results(out / "results.tsv", results)
    report = aggregate(results, reference_method=args.reference)
    write_report(out / "report.tsv", report)
    text = format_report(report)
    (out / "report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_sweep(args):
    pdir = _resolve_input(args.problem_dir)
    problem = load_problem(pdir)
    model_cfg, train_cfg = _apply_overrides(*load_config(args.config), args)
    seeds = _parse_list(args.seeds, int) or [args.seed]
    out = Path(args.out)
    tc = TrainConfig.from_dict({**train_cfg, "seed": seeds[0]})
    rows, per_run = [], []
    if args.mode == "ablation":
        _prepare_out(out, "summary.tsv", args.force)
        runs = run_ablation(problem, model_cfg, tc, ABLATION_VARIANTS, seeds=seeds,
                            jobs=args.jobs, keep_models=False)
        full = runs[variant_name(ABLATION_VARIANTS[-1])]
        full_auroc = float(np.mean([r.auroc for r in full]))
        full_aupr = float(np.mean([r.aupr for r in full]))
        for name, seed_runs in runs.items():
            au = float(np.mean([r.auroc for r in seed_runs]))
            ap = float(np.mean([r.aupr for r in seed_runs]))
            rows.append({"variant": name, "auroc": au, "aupr": ap,
                         "delta_auroc": au - full_auroc, "delta_aupr": ap - full_aupr})
            per_run += [EvaluationResult(name, problem.problem_id, r.seed, r.auroc, r.aupr)
                        for r in seed_runs]
        columns = ["variant", "auroc", "aupr", "delta_auroc", "delta_aupr"]
    else:
        k_grid = _parse_list(args.k_grid, int)
        tau_grid = _parse_list(args.tau_grid, float)
        if k_grid == [] or tau_grid == []:
            raise InvalidConfig("sensitivity grids must not be empty")
        k_grid = list(K_GRID) if k_grid is None else k_grid
        tau_grid = list(TAU_GRID) if tau_grid is None else tau_grid
        _prepare_out(out, "summary.tsv", args.force)
        rows = run_sensitivity(problem, model_cfg, tc, k_grid, tau_grid, seeds=seeds, jobs=args.jobs)
        columns = ["parameter", "value", "auroc", "aupr", "n_seeds"]
    with open(out / "summary.tsv", "w") as fh:
        fh.write("\t".join(columns) + "\n")
        for r in rows:
            fh.write("\t".join(repr(float(r[c])) if isinstance(r[c], float) else str(r[c])
                               for c in columns) + "\n")
    if per_run:
        write_results(out / "results.tsv", per_run)
    _write_json(out / "manifest.json", _manifest(
        "sweep", args, problem_id=problem.problem_id, seeds=seeds, model_config=model_cfg,
        train_config=tc.to_dict(),
    ))
    _print_table([{c: (f"{r[c]:.4f}" if isinstance(r[c], float) else r[c]) for c in columns}
                  for r in rows], columns)
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser


def _add_training_flags(p):
    p.add_argument("--config", help="flat YAML key-value file with model/training settings")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", help="comma-separated seeds (e.g. 0,1,2,3,4)")
    p.add_argument("--tasks", help="enabled proxy tasks, e.g. rec or con,class")
    p.add_argument("--k", type=int, help="number of transformations K")
    p.add_argument("--tau", type=float, help="contrastive temperature")
    p.add_argument("--batch-size", dest="batch_size_train", type=int, help="training batch size")
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--val-fraction", type=float, default=0.1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ncrc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic fixture dataset or problem")
    p.add_argument("--kind", choices=("waves", "sines"), default="waves")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--format", choices=("ucr-tsv", "sktime-ts"), default="ucr-tsv")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("derive", help="derive one-class problems from a dataset")
    p.add_argument("dataset", help="dataset directory or _TRAIN/_TEST file (relative to "
                                   "$NCRC_DATA_DIR if not found)")
    p.add_argument("--format", choices=("ucr-tsv", "sktime-ts"))
    p.add_argument("--setting", choices=(ONE_VS_REST, N_MINUS_1_VS_REST, "both"), default="both")
    p.add_argument("--no-normalize", dest="normalize", action="store_false",
                   help="keep raw values instead of z-normalizing with training statistics")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("train", help="train a model on a problem directory")
    p.add_argument("problem_dir")
    _add_training_flags(p)
    p.add_argument("--method", help="method name recorded for evaluation")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score a problem's evaluation set")
    p.add_argument("problem_dir")
    p.add_argument("checkpoint")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="compute AUROC/AUPR and aggregate score files")
    p.add_argument("scores", nargs="+", help="scores.tsv files or glob patterns")
    p.add_argument("--reference", help="method the deltas are computed against")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="ablation or sensitivity sweep on one problem")
    p.add_argument("problem_dir")
    p.add_argument("--mode", choices=("ablation", "sensitivity"), required=True)
    _add_training_flags(p)
    p.add_argument("--k-grid", help=f"comma-separated K values (default {','.join(map(str, K_GRID))})")
    p.add_argument("--tau-grid", help="comma-separated temperatures "
                                      f"(default {','.join(map(str, TAU_GRID))})")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except OutputExists as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXISTS
    except NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UnevenSeeds, MissingProblem) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_AGGREGATE
    except (FileNotFoundError, DataError, InvalidConfig, NCRCError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
