"""Batch command-line interface.

Every command reads its inputs, runs one pipeline, and writes CSV/JSON
outputs plus a ``*.manifest.json`` describing the run. Exit codes: 0 on
success, 1 on runtime or I/O errors, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .analysis import (
    ASSIGN_MODES,
    assign_samples,
    cluster_stimuli,
    common_regions,
    region_activation_matrix,
    region_importance,
)
from .baseline import RidgeModel, ridge_fit, ridge_grid_search, ridge_predict
from .dataset import Dataset
from .exceptions import ArgumentError, InsufficientDataError, MixRegError
from .io import load_atlas, load_matrix_with_ids, load_model, matrix_to_bytes, matrix_to_csv, model_to_json
from .metrics import REPORT_COLUMNS, anova_oneway, evaluate_methods, mae, r2_score
from .model import MixtureModel, predict_mean
from .selection import BIC_COLUMNS, make_fold_plan, select_k, select_k_cv
from .synthetic import SyntheticSpec, generate_synthetic
from .trainer import INIT_MODES, TrainingConfig, fit

logger = logging.getLogger("mixreg")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonneg_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _positive_float(text):
    value = _nonneg_float(text)
    if value == 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return value


def _fraction(text):
    value = _positive_float(text)
    if value > 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1], got {text}")
    return value


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _csv_text(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: (repr(v) if isinstance(v, float) else v) for c, v in row.items()})
    return buf.getvalue()


def _json_text(obj) -> str:
    def default(o):
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.floating):
            return float(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(f"not JSON serializable: {type(o).__name__}")

    return json.dumps(obj, indent=2, sort_keys=True, default=default) + "\n"


def _matrix_bytes(matrix, path: Path, ids=None) -> bytes:
    if path.suffix == ".bin":
        return matrix_to_bytes(matrix)
    return matrix_to_csv(matrix, ids).encode()


class Run:
    """Collects outputs in memory and writes them, plus a manifest, at the end."""

    def __init__(self, args, manifest_path: Path):
        self.args = args
        self.manifest_path = manifest_path
        self.started = datetime.now(timezone.utc).isoformat()
        self.inputs = {}
        self.outputs = {}
        self.seeds = {}

    def read(self, path):
        path = Path(path)
        self.inputs[str(path)] = _sha256(path)
        return path

    def put(self, path, data):
        self.outputs[Path(path)] = data.encode() if isinstance(data, str) else data

    def commit(self):
        for path, data in self.outputs.items():
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
        config = {
            k: (str(v) if isinstance(v, Path) else v)
            for k, v in vars(self.args).items()
            if k not in ("func",)
        }
        manifest = {
            "command": self.args.command,
            "config": config,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": {str(p): hashlib.sha256(d).hexdigest() for p, d in self.outputs.items()},
            "tool_version": __version__,
            "started_at": self.started,
            "finished_at": datetime.now(timezone.utc).isoformat(),
        }
        self.manifest_path.parent.mkdir(parents=True, exist_ok=True)
        self.manifest_path.write_text(_json_text(manifest))


def _manifest_for(path: Path) -> Path:
    path = Path(path)
    return path.with_name(path.name.split(".")[0] + ".manifest.json")


def _load_dataset(run: Run, x_path, y_path=None, header=False) -> Dataset:
    x, ids = load_matrix_with_ids(run.read(x_path), header=header)
    y = None
    if y_path is not None:
        y, y_ids = load_matrix_with_ids(run.read(y_path), header=header)
        ids = ids or y_ids
        if y.shape[0] != x.shape[0]:
            raise ArgumentError(f"--x has {x.shape[0]} rows but --y has {y.shape[0]}")
    return Dataset(x, y, ids)


def _training_config(args, k=None) -> TrainingConfig:
    return TrainingConfig(
        k=args.experts if k is None else k,
        max_iters=args.max_iters,
        tol=args.tol,
        eta=args.eta,
        gating_steps=args.gating_steps,
        seed=args.seed,
        variance_floor=args.variance_floor,
        init=args.init,
    )


# ---------------------------------------------------------------- commands


def cmd_synth(args):
    spec = SyntheticSpec(
        k=args.experts,
        n=args.in_dim,
        m=args.out_dim,
        n_samples=args.samples,
        gating_scale=args.gating_scale,
        noise_std=args.noise_std,
        seed=args.seed,
    )
    out = Path(args.out)
    run = Run(args, out / "manifest.json")
    run.seeds = {"generator": args.seed}
    synth = generate_synthetic(spec)
    ext = args.format
    run.put(out / f"x.{ext}", _matrix_bytes(synth.data.x, Path(f"x.{ext}")))
    run.put(out / f"y.{ext}", _matrix_bytes(synth.data.y, Path(f"y.{ext}")))
    run.put(out / "truth_model.json", model_to_json(synth.model))
    rows = [{"index": i, "expert": int(lab)} for i, lab in enumerate(synth.labels)]
    run.put(out / "labels.csv", _csv_text(rows, ("index", "expert")))
    run.commit()


def cmd_fit(args):
    model_path = Path(args.model)
    trace_path = Path(args.trace) if args.trace else model_path.with_name(model_path.name.split(".")[0] + ".trace.csv")
    run = Run(args, _manifest_for(model_path))
    run.seeds = {"init": args.seed}
    config = _training_config(args)
    data = _load_dataset(run, args.x, args.y, args.header)
    model, trace = fit(data, config)
    run.put(model_path, model_to_json(model))
    rows = [{"iteration": i, "log_likelihood": ll} for i, ll in enumerate(trace.log_likelihoods)]
    run.put(trace_path, _csv_text(rows, ("iteration", "log_likelihood")))
    summary = {
        "iterations_run": trace.iterations_run,
        "converged": trace.converged,
        "final_log_likelihood": trace.final_log_likelihood,
        "empty_expert_events": trace.empty_expert_events,
    }
    run.put(trace_path.with_suffix(".json"), _json_text(summary))
    run.commit()
    print(f"converged={trace.converged} iterations={trace.iterations_run} logL={trace.final_log_likelihood:.6f}")


def _predict(model, X):
    if isinstance(model, MixtureModel):
        return predict_mean(model, X)
    if isinstance(model, RidgeModel):
        return ridge_predict(model, X)
    raise ArgumentError(f"unsupported model type {type(model).__name__}")


def cmd_predict(args):
    out = Path(args.out)
    run = Run(args, _manifest_for(out))
    model = load_model(run.read(args.model))
    data = _load_dataset(run, args.x, header=args.header)
    pred = _predict(model, data.x)
    run.put(out, _matrix_bytes(pred, out, data.ids))
    run.commit()


def _parse_pred(spec):
    name, sep, path = spec.partition("=")
    if not sep or not name or not path:
        raise UsageError(f"--pred expects NAME=PATH, got {spec!r}")
    return name, path


def cmd_evaluate(args):
    preds = [_parse_pred(p) for p in args.pred]
    names = [n for n, _ in preds]
    if len(set(names)) != len(names):
        raise UsageError("--pred method names must be unique")
    prefix = Path(args.out_prefix)
    run = Run(args, prefix.with_name(prefix.name + ".manifest.json"))
    y_true, _ = load_matrix_with_ids(run.read(args.y_true), header=args.header)
    predictions = {}
    for name, path in preds:
        predictions[name], _ = load_matrix_with_ids(run.read(path), header=args.header)
    table = evaluate_methods(y_true, predictions)
    regression = {}
    per_sample_mae = {}
    for name, pred in predictions.items():
        regression[name] = {"mae": mae(y_true, pred)}
        if y_true.shape[0] >= 2:
            regression[name]["r2"] = r2_score(y_true, pred)
        per_sample_mae[name] = np.abs(y_true - pred).mean(axis=1)
    report = {"table": table, "regression": regression}
    if len(predictions) >= 2:
        try:
            res = anova_oneway(list(per_sample_mae.values()))
            report["anova_mae"] = dataclasses.asdict(res)
        except ArgumentError as exc:
            report["anova_mae"] = {"error": str(exc)}
    run.put(prefix.with_name(prefix.name + ".table.csv"), _csv_text(table, ("method", "k") + REPORT_COLUMNS))
    run.put(prefix.with_name(prefix.name + ".json"), _json_text(report))
    run.commit()


def cmd_select_k(args):
    if args.k_min > args.k_max:
        raise UsageError("--k-min must not exceed --k-max")
    out = Path(args.out)
    run = Run(args, _manifest_for(out))
    run.seeds = {"restart_seeds": [args.seed + r for r in range(args.restarts)]}
    data = _load_dataset(run, args.x, args.y, args.header)
    base = _training_config(args, k=args.k_min)
    ks = range(args.k_min, args.k_max + 1)
    report = select_k(data, ks, base, restarts=args.restarts, n_jobs=args.threads)
    columns = BIC_COLUMNS + ("error",)
    if args.cv_folds:
        plan = make_fold_plan(data.n_samples, args.cv_folds, args.seed)
        run.seeds["fold_plan"] = args.seed
        report.cv = select_k_cv(data, ks, base, plan, n_jobs=args.threads)
        columns += ("cv_mae", "cv_r2")
    rows = report.rows()
    for row in rows:
        row["best_k"] = report.best_k
    run.put(out, _csv_text(rows, columns + ("best_k",)))
    run.put(
        out.with_suffix(".json"),
        _json_text({"best_k": report.best_k, "best_k_cv": report.best_k_cv, "entries": rows}),
    )
    run.commit()
    print(f"best_k={report.best_k}")


def cmd_baseline_ridge(args):
    model_path = Path(args.model)
    run = Run(args, _manifest_for(model_path))
    data = _load_dataset(run, args.x, args.y, args.header)
    summary = {}
    lam = args.lam
    if args.lambda_grid:
        grid = [float(v) for v in args.lambda_grid.split(",")]
        run.seeds = {"fold_plan": args.seed}
        lam, scores = ridge_grid_search(data, grid, args.folds, args.seed)
        summary["grid_mae"] = {repr(k): v for k, v in scores.items()}
    model = ridge_fit(data, lam)
    summary["lambda"] = lam
    run.put(model_path, model_to_json(model))
    run.put(model_path.with_name(model_path.name.split(".")[0] + ".ridge.json"), _json_text(summary))
    run.commit()


def cmd_analyze(args):
    out = Path(args.out_dir)
    run = Run(args, out / "manifest.json")
    model = load_model(run.read(args.model))
    if not isinstance(model, MixtureModel):
        raise ArgumentError("analyze needs a mixture model")
    data = _load_dataset(run, args.x, args.y, args.header)
    atlas = load_atlas(run.read(args.atlas))
    table = assign_samples(model, data, args.mode)
    prob_cols = tuple(f"p{j}" for j in range(model.k))
    run.put(out / "assignments.csv", _csv_text(table.rows(), ("id", "expert") + prob_cols))
    run.put(out / "assignments.json", _json_text({"mode": table.mode, "members": table.member_ids()}))

    results, region_rows, skipped = [], [], {}
    for j in range(model.k):
        try:
            matrix = region_activation_matrix(table, data, atlas, j, args.aggregate)
            imp = region_importance(matrix, atlas.region_labels, args.variance_target, args.score_threshold, expert=j)
        except (InsufficientDataError, MixRegError) as exc:
            skipped[j] = str(exc)
            continue
        results.append(imp)
        region_rows += [{"expert": j, "region": lab, "score": s} for lab, s in imp.regions]
    payload = {
        "experts": [
            {
                "expert": r.expert,
                "n_components": r.n_components,
                "explained_variance": r.explained_variance,
                "regions": [{"region": lab, "score": s} for lab, s in r.regions],
            }
            for r in results
        ],
        "skipped": skipped,
        "common_regions": list(common_regions(results)),
        "common_regions_definition": "intersection of the per-expert qualified region sets",
    }
    run.put(out / "regions.csv", _csv_text(region_rows, ("expert", "region", "score")))
    run.put(out / "regions.json", _json_text(payload))
    run.commit()


def cmd_cluster(args):
    prefix = Path(args.out)
    run = Run(args, prefix.with_name(prefix.name + ".manifest.json"))
    run.seeds = {"kmeans": args.seed}
    matrix, ids = load_matrix_with_ids(run.read(args.data), header=args.header)
    res = cluster_stimuli(matrix, args.k, args.metric, args.seed, ids, args.max_iters)
    ids = ids or [str(i) for i in range(matrix.shape[0])]
    rows = [{"id": sid, "cluster": int(c)} for sid, c in zip(ids, res.labels)]
    run.put(prefix.with_name(prefix.name + ".csv"), _csv_text(rows, ("id", "cluster")))
    run.put(prefix.with_name(prefix.name + ".json"), _json_text({"members": res.members, "sse": res.sse}))
    run.commit()


# ---------------------------------------------------------------- parser


def _add_common(p, seed=True):
    p.add_argument("--config", help="JSON file with default values for any flag (flags win)")
    p.add_argument("--threads", type=_positive_int, default=1, help="worker threads; 1 = serial deterministic mode")
    if seed:
        p.add_argument("--seed", type=int, default=0)


def _add_training(p, experts=True):
    if experts:
        p.add_argument("--experts", type=_positive_int, default=3)
    p.add_argument("--max-iters", type=_positive_int, default=200)
    p.add_argument("--tol", type=_positive_float, default=1e-10)
    p.add_argument("--eta", type=_positive_float, default=0.1)
    p.add_argument("--gating-steps", type=_positive_int, default=5)
    p.add_argument("--variance-floor", type=_positive_float, default=1e-6)
    p.add_argument("--init", choices=INIT_MODES, default="kmeans_partition")


def _add_xy(p, y=True):
    p.add_argument("--x", required=True, help="input matrix (.csv or .bin)")
    if y:
        p.add_argument("--y", required=True, help="target matrix (.csv or .bin)")
    p.add_argument("--header", action="store_true", help="CSV inputs have a header row")


def build_parser():
    parser = argparse.ArgumentParser(prog="mixreg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mixreg {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic mixture dataset")
    _add_common(p)
    p.add_argument("--experts", type=_positive_int, default=3)
    p.add_argument("--in-dim", type=_positive_int, default=4)
    p.add_argument("--out-dim", type=_positive_int, default=3)
    p.add_argument("--samples", type=_positive_int, default=2000)
    p.add_argument("--noise-std", type=_nonneg_float, default=0.1)
    p.add_argument("--gating-scale", type=_nonneg_float, default=3.0)
    p.add_argument("--format", choices=("bin", "csv"), default="bin")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="train a mixture of experts by EM")
    _add_common(p)
    _add_xy(p)
    _add_training(p)
    p.add_argument("--model", required=True, help="output model file (.json)")
    p.add_argument("--trace", help="log-likelihood trace CSV (default: <model>.trace.csv)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict targets with a saved model")
    _add_common(p, seed=False)
    _add_xy(p, y=False)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="prediction matrix (.csv or .bin)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="MAE, R^2 and mu+k*sigma classification tables")
    _add_common(p, seed=False)
    p.add_argument("--y-true", required=True)
    p.add_argument("--pred", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--header", action="store_true")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("select-k", help="choose the number of experts by BIC (and optionally CV)")
    _add_common(p)
    _add_xy(p)
    _add_training(p, experts=False)
    p.add_argument("--k-min", type=_positive_int, default=1)
    p.add_argument("--k-max", type=_positive_int, default=6)
    p.add_argument("--restarts", type=_positive_int, default=3)
    p.add_argument("--cv-folds", type=int, default=0, help="also score each K by k-fold CV (0 = off)")
    p.add_argument("--out", required=True, help="BIC report CSV")
    p.set_defaults(func=cmd_select_k)

    p = sub.add_parser("baseline-ridge", help="fit the ridge regression baseline")
    _add_common(p)
    _add_xy(p)
    p.add_argument("--lambda", dest="lam", type=_nonneg_float, default=1.0)
    p.add_argument("--lambda-grid", help="comma-separated lambdas chosen by k-fold MAE")
    p.add_argument("--folds", type=_positive_int, default=5)
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_baseline_ridge)

    p = sub.add_parser("analyze", help="expert assignments and PCA region importance")
    _add_common(p, seed=False)
    _add_xy(p)
    p.add_argument("--model", required=True)
    p.add_argument("--atlas", required=True, help="CSV of dim_index,region_label")
    p.add_argument("--mode", choices=ASSIGN_MODES, default="gate")
    p.add_argument("--variance-target", type=_fraction, default=0.85)
    p.add_argument("--score-threshold", type=float, default=0.2)
    p.add_argument("--aggregate", choices=("mean", "sum"), default="mean")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("cluster", help="k-means clustering of stimuli or activations")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--header", action="store_true")
    p.add_argument("--k", type=_positive_int, default=5)
    p.add_argument("--metric", choices=("euclidean", "cosine"), default="cosine")
    p.add_argument("--max-iters", type=_positive_int, default=300)
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_cluster)

    return parser, sub


def _apply_config(parser, sub, args, argv):
    """Re-parse with the --config JSON as defaults so explicit flags win."""
    if not getattr(args, "config", None):
        return args
    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read --config: {exc}")
    if not isinstance(cfg, dict):
        parser.error("--config must hold a JSON object")
    subparser = sub.choices[args.command]
    known = {a.dest for a in subparser._actions}
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    unknown = sorted(set(cfg) - known)
    if unknown:
        parser.error(f"--config has unknown keys: {', '.join(unknown)}")
    # string defaults go through each flag's type check, just like typed-in values
    cfg = {k: str(v) if isinstance(v, (int, float)) and not isinstance(v, bool) else v for k, v in cfg.items()}
    subparser.set_defaults(**cfg)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser, sub = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    args = _apply_config(parser, sub, args, argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            args.func(args)
    except (UsageError, ArgumentError) as exc:
        print(f"mixreg {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (MixRegError, OSError, ValueError) as exc:
        print(f"mixreg {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
