"""Command-line entry point: ``smtl {train,eval,cv,experiment,imbalance}``.

Machine-readable results go to files under ``--out``; progress goes to
stderr and a one-line summary to stdout. Exit status is 0 on success, 2 for
invalid input (bad flags, unparsable data, unsupported labels) and 1 for
anything else.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import traceback
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, admm, data as dio
from .errors import SmtlError, ValidationError
from .metrics import CSV_COLUMNS, evaluate, write_csv
from .model import (LossKind, LossMetric, MultiTaskDataset, Regularizer, SmtlConfig,
                    TaskDataset, load_model, make_rng, save_model)

EXIT_OK, EXIT_INTERNAL, EXIT_INVALID = 0, 1, 2

# method name -> loss; MTL-CLS is the Hamming-loss special case
METHODS = {"smtl-f1": LossKind.F1, "smtl-auc": LossKind.AUC, "mtl-cls": LossKind.HAMMING}
DEFAULT_RATIOS = "1:1,1:5,1:10"
KEY_CV = 7


def _progress(msg):
    print(msg, file=sys.stderr, flush=True)


def _dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---- argument parsing ---------------------------------------------------------

def _lambda_list(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"--lambda expects numbers, got {text!r}") from None
    if not vals:
        raise ValidationError("--lambda is empty")
    return vals


def _mu_schedule(text):
    if text is None:
        return None
    parts = text.split(",")
    if len(parts) != 2:
        raise ValidationError(f"--mu-schedule expects rho,max, got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise ValidationError(f"--mu-schedule expects numbers, got {text!r}") from None


def _solver_flags(p, with_loss=True):
    if with_loss:
        p.add_argument("--loss", choices=[k.value for k in LossKind], default="f1")
    p.add_argument("--reg", choices=[r.value for r in Regularizer], default="l21")
    p.add_argument("--lambda", dest="lam", default=None,
                   help="trade-off; a comma list sets the CV grid where allowed")
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--outer-tol", type=float, default=1e-4)
    p.add_argument("--outer-max-iter", type=int, default=200)
    p.add_argument("--inner-tol", type=float, default=1e-5)
    p.add_argument("--inner-max-iter", type=int, default=5000)
    p.add_argument("--warm-start", action="store_true")
    p.add_argument("--mu-schedule", default=None, metavar="RHO,MAX")


def _common(p):
    p.add_argument("--dataset", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)


def build_parser():
    ap = argparse.ArgumentParser(prog="smtl", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"smtl {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit one model")
    _common(p)
    _solver_flags(p)

    p = sub.add_parser("eval", help="evaluate a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["csv", "json"], default="csv")

    p = sub.add_parser("cv", help="select lambda by cross-validation")
    _common(p)
    _solver_flags(p)
    p.add_argument("--cv-folds", type=int, default=10)

    for name, hlp in (("experiment", "partitions x CV x train x evaluate"),
                      ("imbalance", "resample class ratios, then run the experiment")):
        p = sub.add_parser(name, help=hlp)
        _common(p)
        _solver_flags(p, with_loss=False)
        p.add_argument("--methods", default=None,
                       help="comma list of smtl-f1, smtl-auc, mtl-cls (optionally name:reg)")
        p.add_argument("--partitions", type=int, default=10)
        p.add_argument("--cv-folds", type=int, default=10)
        p.add_argument("--normalize", choices=["minmax_pm1", "zscore", "none"],
                       default="minmax_pm1")
        if name == "imbalance":
            p.add_argument("--ratios", default=DEFAULT_RATIOS)
    return ap


def _config(args, loss=None, lam=None) -> SmtlConfig:
    if lam is None:
        lams = _lambda_list(args.lam) if args.lam is not None else [1.0]
        if len(lams) != 1:
            raise ValidationError("--lambda takes a single value for this command")
        lam = lams[0]
    kind = LossKind(loss if loss is not None else args.loss)
    return SmtlConfig(regularizer=Regularizer(args.reg), loss=LossMetric(kind), lam=lam,
                      mu=args.mu, outer_tol=args.outer_tol, outer_max_iter=args.outer_max_iter,
                      inner_tol=args.inner_tol, inner_max_iter=args.inner_max_iter,
                      seed=args.seed, warm_start=args.warm_start,
                      mu_schedule=_mu_schedule(args.mu_schedule))


def _grid(args):
    return dio.lambda_grid() if args.lam is None else sorted(_lambda_list(args.lam))


def _out_dir(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create output directory {out}: {exc.strerror or exc}") from None
    return out


def _load(path):
    try:
        return dio.load_dataset(path)
    except FileNotFoundError:
        raise ValidationError(f"dataset not found: {path}") from None


def _manifest(args, extra=None):
    rec = {"command": args.command, "version": __version__}
    for k, v in sorted(vars(args).items()):
        if k not in ("command", "func"):
            rec[k] = v
    if extra:
        rec.update(extra)
    return rec


# ---- commands -------------------------------------------------------------------

def cmd_train(args):
    config = _config(args)
    data = _load(args.dataset)
    out = _out_dir(args.out)
    def progress(rec, state):
        if rec.iteration % 10 == 0 or rec.infeasibility <= config.outer_tol:
            _progress(f"iter {rec.iteration}: infeasibility {rec.infeasibility:.3e} "
                      f"dual residual {rec.dual_residual:.3e} inner gap {rec.inner_gap:.3e}")

    W, report = admm.train(data, config, callback=progress)
    save_model(W, config, out / "model.txt")
    rep = report.to_dict()
    timing = [r.pop("wall_time") for r in rep["per_iteration"]]
    _dump_json(rep, out / "report.json")
    _dump_json({"wall_time": timing}, out / "timing.json")
    _dump_json(_manifest(args, {"config": config.to_record()}), out / "manifest.json")
    print(f"trained d={data.feature_dim} m={data.n_tasks} in {report.outer_iterations} "
          f"iterations, infeasibility {report.final_infeasibility:.3e}, "
          f"{'converged' if report.converged else 'NOT converged'}")
    return EXIT_OK


def cmd_eval(args):
    W, config = load_model(args.model)
    data = _load(args.dataset)
    if W.shape[0] != data.feature_dim:
        raise ValidationError(f"model has d={W.shape[0]}, dataset has d={data.feature_dim}")
    if W.shape[1] != data.n_tasks:
        raise ValidationError(f"model has m={W.shape[1]} tasks, dataset has {data.n_tasks}")
    out = _out_dir(args.out)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = evaluate(W, data)
    for w in caught:
        _progress(f"warning: {w.message}")
    method = _method_name(config.loss.kind)
    if args.format == "csv":
        row = rep.csv_row(args.dataset, method, config.regularizer.value, config.loss.kind.value,
                          config.lam, config.seed)
        (out / "eval.csv").write_text(write_csv([row]))
    else:
        rec = rep.to_record()
        rec.update(dataset=args.dataset, method=method, regularizer=config.regularizer.value,
                   loss=config.loss.kind.value, seed=config.seed)
        rec["lambda"] = config.lam
        _dump_json(rec, out / "eval.json")
    print(f"macro_f1={rep.macro_f1:.3f} micro_f1={rep.micro_f1:.3f} avg_auc={rep.average_auc:.3f}")
    return EXIT_OK


def cmd_cv(args):
    grid = _grid(args)
    config = _config(args, lam=grid[0])
    data = _load(args.dataset)
    out = _out_dir(args.out)
    res = dio.cross_validate(data, config, folds=args.cv_folds, grid=grid)
    _dump_json({"best_lambda": res.best_lambda, "grid": res.grid, "mean_scores": res.mean_scores},
               out / "cv.json")
    _dump_json(_manifest(args, {"config": config.to_record()}), out / "manifest.json")
    print(f"best lambda {res.best_lambda!r}")
    return EXIT_OK


def _method_name(kind):
    return {v: k for k, v in METHODS.items()}[LossKind(kind)]


def _parse_methods(text, default_reg):
    names = text.split(",") if text else ["smtl-f1", "smtl-auc", "mtl-cls"]
    out = []
    for tok in names:
        tok = tok.strip()
        name, _, reg = tok.partition(":")
        if name not in METHODS:
            raise ValidationError(f"unknown method {name!r}; expected one of {sorted(METHODS)}")
        try:
            reg = Regularizer(reg or default_reg)
        except ValueError:
            raise ValidationError(f"unknown regularizer in {tok!r}") from None
        out.append((name, reg))
    if not out:
        raise ValidationError("--methods is empty")
    return out


def _std(vals):
    # sample standard deviation; 0 for a single partition
    return float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0


def run_experiment(data: MultiTaskDataset, args, methods, dataset_label, log=_progress):
    """Shared-partition protocol. Returns (per-partition rows, summary records, splits)."""
    grid = _grid(args)
    plans, parts = dio.partition_rows(data, args.seed, args.partitions)
    units = [(mi, p) for mi in range(len(methods)) for p in range(args.partitions)]
    workers = admm.thread_count()
    # parallelism goes to the (method, partition) units
    inner = 1 if workers > 1 else None

    def unit(job):
        mi, p = job
        name, reg = methods[mi]
        base = _config(args, loss=METHODS[name], lam=grid[0]).with_(regularizer=reg)
        tr_rows, te_rows = parts[p]
        train, test = dio.split_tasks(data, tr_rows), dio.split_tasks(data, te_rows)
        if args.normalize != "none":
            train, params = dio.normalize(train, args.normalize)
            test = params.apply_dataset(test)
        fold_seed = int(make_rng(args.seed, KEY_CV, p).integers(2**31))
        cv = dio.cross_validate(train, base.with_(seed=fold_seed), folds=args.cv_folds,
                                grid=grid, threads=inner)
        W, report = admm.train(train, base.with_(lam=cv.best_lambda), threads=inner)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = evaluate(W, test)
        log(f"{name}:{reg.value} partition {p + 1}/{args.partitions}: lambda={cv.best_lambda!r} "
            f"macro_f1={rep.macro_f1:.3f} avg_auc={rep.average_auc:.3f}")
        row = rep.csv_row(dataset_label, name, reg.value, METHODS[name].value, cv.best_lambda, args.seed)
        row["partition"] = p
        return row

    if workers > 1 and len(units) > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(unit, units))
    else:
        rows = [unit(u) for u in units]

    summary = []
    for mi, (name, reg) in enumerate(methods):
        mine = [r for r in rows if r["method"] == name and r["regularizer"] == reg.value]
        rec = {"dataset": dataset_label, "method": name, "regularizer": reg.value,
               "loss": METHODS[name].value, "seed": args.seed, "partitions": len(mine)}
        for key in ("macro_f1", "micro_f1", "avg_auc"):
            vals = [float(r[key]) for r in mine]
            rec[key] = float(np.mean(vals))
            rec[key + "_std"] = _std(vals)
        rec["lambdas"] = [float(r["lambda"]) for r in mine]
        summary.append(rec)
    unique = {id(pl): pl for pl in plans}
    return rows, summary, [pl.to_record() for pl in unique.values()]


def _write_experiment(out, rows, summary, splits, manifest):
    out.mkdir(parents=True, exist_ok=True)
    (out / "partitions.csv").write_text(write_csv([{k: r[k] for k in CSV_COLUMNS} for r in rows]))
    summary_rows = [{"dataset": s["dataset"], "method": s["method"], "regularizer": s["regularizer"],
                     "loss": s["loss"], "lambda": "cv", "macro_f1": repr(s["macro_f1"]),
                     "micro_f1": repr(s["micro_f1"]), "avg_auc": repr(s["avg_auc"]),
                     "seed": str(s["seed"])} for s in summary]
    (out / "summary.csv").write_text(write_csv(summary_rows))
    _dump_json(summary, out / "summary.json")
    table = ["method\tregularizer\tmacro_f1\tmicro_f1\tavg_auc"]
    for s in summary:
        table.append("\t".join([s["method"], s["regularizer"]] + [
            f"{s[k]:.3f}±{s[k + '_std']:.3f}" for k in ("macro_f1", "micro_f1", "avg_auc")]))
    (out / "table.txt").write_text("\n".join(table) + "\n")
    _dump_json(splits, out / "splits.json")
    _dump_json(manifest, out / "manifest.json")


def cmd_experiment(args):
    methods = _parse_methods(args.methods, args.reg)
    _grid(args)
    _config(args, loss="f1", lam=1.0)  # validate flags before any I/O
    _check_counts(args)
    data = _load(args.dataset)
    out = _out_dir(args.out)
    rows, summary, splits = run_experiment(data, args, methods, args.dataset)
    _write_experiment(out, rows, summary, splits,
                      _manifest(args, {"methods": [f"{n}:{r.value}" for n, r in methods],
                                       "lambda_grid": _grid(args)}))
    for s in summary:
        print(f"{s['method']}:{s['regularizer']} macro_f1={s['macro_f1']:.3f}±{s['macro_f1_std']:.3f} "
              f"micro_f1={s['micro_f1']:.3f}±{s['micro_f1_std']:.3f} "
              f"avg_auc={s['avg_auc']:.3f}±{s['avg_auc_std']:.3f}")
    return EXIT_OK


def _check_counts(args):
    if args.partitions < 1:
        raise ValidationError(f"--partitions must be >= 1, got {args.partitions}")
    if args.cv_folds < 2:
        raise ValidationError(f"--cv-folds must be >= 2, got {args.cv_folds}")


def parse_ratios(text):
    """``"1:1,1:5"`` -> ``[(1, 1), (1, 5)]`` (positive : negative)."""
    out = []
    for tok in text.split(","):
        a, sep, b = tok.strip().partition(":")
        try:
            pos, neg = int(a), int(b)
        except ValueError:
            raise ValidationError(f"bad ratio token {tok!r}; expected P:N with integers") from None
        if not sep or pos < 1 or neg < 1:
            raise ValidationError(f"bad ratio token {tok!r}; expected P:N with positive integers")
        out.append((pos, neg))
    if not out:
        raise ValidationError("no ratios given")
    return out


def resample_task(task: TaskDataset, ratio, rng) -> TaskDataset:
    """Draw, with replacement, ``n`` rows with positives and negatives in ``ratio``."""
    pos_idx = np.flatnonzero(task.labels > 0)
    neg_idx = np.flatnonzero(task.labels < 0)
    if pos_idx.size == 0 or neg_idx.size == 0:
        raise ValidationError(f"task {task.task_name!r} needs both classes to resample")
    n = task.n_samples
    p, q = ratio
    n_pos = int(math.floor(n * p / (p + q) + 0.5))
    n_pos = min(max(n_pos, 1), n - 1)
    rows = np.concatenate([rng.choice(pos_idx, n_pos, replace=True),
                           rng.choice(neg_idx, n - n_pos, replace=True)])
    return task.subset(rows)


def cmd_imbalance(args):
    ratios = parse_ratios(args.ratios)
    methods = _parse_methods(args.methods or "smtl-auc,mtl-cls", args.reg)
    _grid(args)
    _config(args, loss="f1", lam=1.0)
    _check_counts(args)
    data = _load(args.dataset)
    out = _out_dir(args.out)
    table = []
    for ri, ratio in enumerate(ratios):
        tag = f"{ratio[0]}to{ratio[1]}"
        tasks = [resample_task(t, ratio, make_rng(args.seed, dio.KEY_RESAMPLE, ri, ti))
                 for ti, t in enumerate(data.tasks)]
        fixture = out / "fixtures" / f"ratio_{tag}"
        fixture.mkdir(parents=True, exist_ok=True)
        for t in tasks:
            dio.write_multilabel(fixture / f"{t.task_name}.svm", dio.MultiLabelDataset(
                t.features, tuple((t.task_name,) if v > 0 else () for v in t.labels),
                (t.task_name,)))
        resampled = dio.load_dataset(fixture)
        _progress(f"ratio {ratio[0]}:{ratio[1]}: fixture written to {fixture}")
        rows, summary, splits = run_experiment(resampled, args, methods, f"{args.dataset}@{tag}")
        _write_experiment(out / f"ratio_{tag}", rows, summary, splits,
                          _manifest(args, {"ratio": f"{ratio[0]}:{ratio[1]}",
                                           "methods": [f"{n}:{r.value}" for n, r in methods]}))
        for s in summary:
            table.append({"ratio": f"{ratio[0]}:{ratio[1]}", **{k: s[k] for k in (
                "method", "regularizer", "macro_f1", "macro_f1_std", "micro_f1", "micro_f1_std",
                "avg_auc", "avg_auc_std")}})
    cols = ["ratio", "method", "regularizer", "macro_f1", "macro_f1_std", "micro_f1",
            "micro_f1_std", "avg_auc", "avg_auc_std"]
    lines = [",".join(cols)] + [",".join(r[c] if isinstance(r[c], str) else repr(r[c]) for c in cols)
                                for r in table]
    (out / "comparison.csv").write_text("\n".join(lines) + "\n")
    _dump_json(_manifest(args, {"ratios": [f"{a}:{b}" for a, b in ratios]}), out / "manifest.json")
    for r in table:
        print(f"{r['ratio']} {r['method']}:{r['regularizer']} avg_auc={r['avg_auc']:.3f}±"
              f"{r['avg_auc_std']:.3f} macro_f1={r['macro_f1']:.3f}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "cv": cmd_cv,
            "experiment": cmd_experiment, "imbalance": cmd_imbalance}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SmtlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
