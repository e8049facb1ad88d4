"""Command-line interface: ``compreg <command> [options]``.

Commands: fit, predict, test, loocv, bootstrap, simulate, experiment.
Options may also come from ``--config FILE`` (``key = value`` lines, keys
spelled like the long flags with ``_`` or ``-``); flags given on the
command line win.  Every run writes ``manifest.txt`` into ``--out-dir``.
"""

from __future__ import annotations

import argparse
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import baselines, direct, inference, io, simgen
from .errors import CompregError, ConfigError, DimMismatch, UnsupportedDimension
from .simplex import CompositionDataset, kld

MODELS = ("direct", "ilr", "logit")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="RNG seed (random if omitted)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for replicates")
    p.add_argument("--out-dir", default=".", help="directory for output files")
    p.add_argument("--config", default=None, help="key = value file supplying option defaults")
    p.add_argument(
        "--model",
        default=None,
        help="direct, ilr or logit (loocv accepts a comma-separated list; default direct, loocv all)",
    )
    return p


def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=False, help="input CSV with a header row")
    p.add_argument("--x-cols", help="comma-separated predictor columns")
    p.add_argument("--y-cols", help="comma-separated outcome columns")
    p.add_argument("--id-col", default=None, help="optional row-label column")
    p.add_argument(
        "--close",
        action="store_true",
        help="rescale each row to unit sum (for counts or percentages)",
    )


def _fit_args(p):
    p.add_argument("--tol", type=float, default=1e-10, help="EM objective tolerance")
    p.add_argument("--max-iter", type=int, default=10_000)


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="compreg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit a model and write its coefficients")
    _data_args(p)
    _fit_args(p)
    p.add_argument("--delta", type=float, default=0.10, help="shift used in the contrast table")

    p = sub.add_parser("predict", parents=[common], help="predict E[y|x] from a saved B_hat.csv")
    p.add_argument("--coef", required=False, help="B_hat.csv written by 'fit'")
    p.add_argument("--data")
    p.add_argument("--x-cols")
    p.add_argument("--id-col", default=None)
    p.add_argument("--close", action="store_true")

    p = sub.add_parser("test", parents=[common], help="permutation test of independence")
    _data_args(p)
    _fit_args(p)
    p.add_argument("--permutations", type=int, default=1000)

    p = sub.add_parser("loocv", parents=[common], help="leave-one-out predictions and KLD")
    _data_args(p)

    p = sub.add_parser("bootstrap", parents=[common], help="bootstrap B and ternary regions")
    _data_args(p)
    _fit_args(p)
    p.add_argument("--replicates", type=int, default=1000)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--svg", action="store_true", help="also draw regions.svg (3-part outcomes)")

    p = sub.add_parser("simulate", parents=[common], help="write one simulated dataset")
    p.add_argument("--truth", default="B1", help="named truth, see 'builtin_matrices'")
    p.add_argument("--dgm", default="dirichlet", choices=simgen.DGM_KINDS)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--concentration", type=float, default=10.0)
    p.add_argument("--count-min", type=int, default=1)
    p.add_argument("--count-max", type=int, default=30)
    p.add_argument("--noise-sd", type=float, default=1.0)

    p = sub.add_parser("experiment", parents=[common], help="run a simulation study from a config")
    p.add_argument("--experiment", choices=("comparison", "error_rate"), default=None)

    return parser


# ---------------------------------------------------------------------------
# config handling


EXPERIMENT_KEYS = {
    "experiment",
    "truths",
    "models",
    "dgm",
    "dgms",
    "ns",
    "replicates",
    "n_test",
    "n_permutations",
    "alpha",
    "test_model",
    "concentration",
    "count_min",
    "count_max",
    "noise_sd",
    "seed",
    "out_dir",
    "threads",
}


def _apply_config(parser, argv):
    """Re-parse ``argv`` with defaults taken from the ``--config`` file."""
    args = parser.parse_args(argv)
    if not args.config or args.command == "experiment":
        return args
    cfg = io.read_kv(args.config)
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    dests = {a.dest for a in subparser._actions}
    defaults = {}
    for key, val in cfg.items():
        dest = key.replace("-", "_")
        if dest not in dests or dest == "config":
            raise ConfigError(f"{args.config}: key {key!r} is not an option of '{args.command}'")
        action = next(a for a in subparser._actions if a.dest == dest)
        if isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = val.lower() in ("1", "true", "yes", "on")
        else:
            defaults[dest] = val
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _experiment_config(args):
    raw = io.read_kv(args.config) if args.config else {}
    cfg = {k.lower().replace("-", "_"): v for k, v in raw.items()}
    bad = sorted(set(cfg) - EXPERIMENT_KEYS)
    if bad:
        raise ConfigError(f"{args.config}: unknown experiment key(s) {bad}")
    kind = args.experiment or cfg.get("experiment")
    if kind not in ("comparison", "error_rate"):
        raise ConfigError("experiment must be 'comparison' or 'error_rate'")

    def lst(key, conv=str):
        try:
            return tuple(conv(s.strip()) for s in cfg[key].split(",") if s.strip())
        except ValueError as exc:
            raise ConfigError(f"{args.config}: key {key!r}: {exc}") from None

    def num(key, conv):
        try:
            return conv(cfg[key])
        except ValueError as exc:
            raise ConfigError(f"{args.config}: key {key!r}: {exc}") from None

    kw = {}
    if "concentration" in cfg:
        kw["concentration"] = num("concentration", float)
    if "noise_sd" in cfg:
        kw["noise_sd"] = num("noise_sd", float)
    if "count_min" in cfg or "count_max" in cfg:
        kw["count_range"] = (
            num("count_min", int) if "count_min" in cfg else 1,
            num("count_max", int) if "count_max" in cfg else 30,
        )
    if "truths" in cfg:
        kw["truths"] = lst("truths")
        for t in kw["truths"]:
            simgen.get_truth(t)
    if "ns" in cfg:
        kw["Ns"] = lst("ns", int)
    if "replicates" in cfg:
        kw["replicates"] = num("replicates", int)
    seed = args.seed if args.seed is not None else (num("seed", int) if "seed" in cfg else None)
    kw["seed"] = inference.make_seed(seed)
    if kind == "comparison":
        if "models" in cfg:
            kw["models"] = lst("models")
            bad = set(kw["models"]) - set(MODELS)
            if bad:
                raise ConfigError(f"{args.config}: unknown model(s) {sorted(bad)}")
        if "dgm" in cfg:
            kw["dgm"] = cfg["dgm"]
        if "n_test" in cfg:
            kw["n_test"] = num("n_test", int)
        return simgen.ComparisonConfig(**kw)
    if "dgms" in cfg:
        kw["dgms"] = lst("dgms")
    if "n_permutations" in cfg:
        kw["n_permutations"] = num("n_permutations", int)
    if "alpha" in cfg:
        kw["alpha"] = num("alpha", float)
    if "test_model" in cfg:
        kw["test_model"] = cfg["test_model"]
        if kw["test_model"] not in MODELS:
            raise ConfigError(f"{args.config}: unknown test_model {kw['test_model']!r}")
    for d in kw.get("dgms", ()) + ((kw["dgm"],) if "dgm" in kw else ()):
        if d not in simgen.DGM_KINDS:
            raise ConfigError(f"{args.config}: unknown DGM {d!r}")
    return simgen.ErrorRateConfig(**kw)


# ---------------------------------------------------------------------------
# commands


def _load(args) -> CompositionDataset:
    missing = [f for f in ("data", "x_cols", "y_cols") if not getattr(args, f, None)]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    schema = io.TableSchema.from_strings(args.x_cols, args.y_cols, args.id_col, args.close)
    return io.load_dataset(args.data, schema)


def _names(data):
    return list(data.x_names), list(data.y_names)


def _r3(v) -> str:
    return f"{v:.3f}"


def _matrix_text(M, rows, cols) -> list[str]:
    w = max(len(c) for c in list(cols) + list(rows) + ["0.000"]) + 2
    lines = [" " * w + "".join(c.rjust(w) for c in cols)]
    for name, r in zip(rows, M):
        lines.append(name.ljust(w) + "".join(_r3(v).rjust(w) for v in r))
    return lines


def cmd_fit(args, out: Path, meta: dict) -> None:
    data = _load(args)
    xs, ys = _names(data)
    meta["n_obs"] = data.N
    report = [f"model = {args.model}", f"n_obs = {data.N}"]
    if args.model == "direct":
        res = direct.fit(data, tol=args.tol, max_iter=args.max_iter)
        io.write_matrix(out / "B_hat.csv", res.B_hat, xs, ys)
        report += [
            f"final_objective = {res.final_objective:.6f}",
            f"iterations = {res.iterations}",
            f"converged = {str(res.converged).lower()}",
            f"starved_rows = {','.join(xs[j] for j in res.starved_rows)}",
            "",
            "B_hat (rows: predictor parts, columns: outcome parts)",
            *_matrix_text(res.B_hat, xs, ys),
            "",
            f"contrasts: change in E[y] when the first part rises by {args.delta:g} "
            "at the expense of the second",
        ]
        for j in range(data.D_s):
            for k in range(data.D_s):
                if j != k:
                    c = direct.contrast(res.B_hat, j, k, args.delta)
                    report.append(f"  {xs[j]} vs {xs[k]}: " + " ".join(_r3(v) for v in c))
    elif args.model == "ilr":
        m = baselines.fit_ilr_pivot(data)
        coords = [f"ilr{k + 1}" for k in range(data.D_r - 1)]
        regs = ["intercept"] + [f"ilr{j + 1}" for j in range(data.D_s - 1)]
        io.write_matrix(out / "ilr_coefficients.csv", m.coef[0, 0], regs, coords)
        io.write_matrix(out / "ilr_pivot_headline.csv", m.headline, ys, xs, corner="outcome_pivot")
        report += ["", "unpivoted model coefficients", *_matrix_text(m.coef[0, 0], regs, coords)]
        report += ["", "pivot slopes (rows: outcome pivot, columns: predictor pivot)"]
        report += _matrix_text(m.headline, ys, xs)
    else:
        m = baselines.fit_logit_qml(data, max_iter=min(args.max_iter, 1000))
        cats = ys[:-1]
        regs = ["intercept"] + [f"ilr{j + 1}" for j in range(data.D_s - 1)]
        io.write_matrix(out / "logit_coefficients.csv", m.coef, regs, cats)
        report += [
            f"quasi_loglik = {m.loglik:.6f}",
            f"iterations = {m.iterations}",
            f"gradient_norm = {m.gradient_norm:.3g}",
            f"gradient_fallback = {str(m.gradient_fallback).lower()}",
            f"reference_part = {ys[-1]}",
            "",
            *_matrix_text(m.coef, regs, cats),
        ]
    (out / "fit_report.txt").write_text("\n".join(report) + "\n")


def cmd_predict(args, out: Path, meta: dict) -> None:
    if not (args.coef and args.data and args.x_cols):
        raise ConfigError("predict needs --coef, --data and --x-cols")
    B, rows, cols = io.read_matrix(args.coef)
    B = direct.as_transition_matrix(B)
    x_cols = [c.strip() for c in args.x_cols.split(",") if c.strip()]
    if len(x_cols) != B.shape[0]:
        raise DimMismatch(f"{len(x_cols)} predictor columns but B has {B.shape[0]} rows")
    X, labels = io.load_predictors(args.data, x_cols, args.id_col, args.close)
    pred = direct.predict(B, X)
    io.write_table(out / "predictions.csv", ["id"] + list(cols), ([lab] + list(p) for lab, p in zip(labels, pred)))
    meta["n_obs"] = len(labels)


def cmd_test(args, out: Path, meta: dict) -> None:
    data = _load(args)
    opts = {"tol": args.tol, "max_iter": args.max_iter} if args.model == "direct" else {}
    res = inference.permutation_test(
        data, args.permutations, seed=args.seed, model=args.model, n_jobs=args.threads, **opts
    )
    meta["seed"] = res.seed
    io.write_kv(
        out / "test_result.txt",
        {
            "model": res.model,
            "n_obs": data.N,
            "lambda_obs": res.lambda_obs,
            "p_value": res.p_value,
            "p_value_add_one": res.p_value_add_one,
            "n_permutations": res.n_permutations,
            "n_exceeding": int(np.sum(res.lambda_perm >= res.lambda_obs)),
            "seed": res.seed,
        },
    )


def cmd_loocv(args, out: Path, meta: dict) -> None:
    data = _load(args)
    models = [m.strip() for m in (args.model or ",".join(MODELS)).split(",") if m.strip()]
    bad = set(models) - set(MODELS)
    if bad or not models:
        raise ConfigError(f"unknown model(s) {sorted(bad)}")
    xs, ys = _names(data)
    labels = data.labels or [str(i + 1) for i in range(data.N)]
    rows, summary = [], {}
    for m in models:
        pred, ok = inference.loocv_predictions(data, m)
        d = kld(data.Y[ok], pred[ok]) if ok.any() else np.array([])
        summary[f"{m}.mean_kld"] = float(np.mean(d)) if d.size else float("nan")
        summary[f"{m}.n_used"] = int(ok.sum())
        summary[f"{m}.n_excluded"] = int((~ok).sum())
        for i in range(data.N):
            rows.append([labels[i], m, str(bool(ok[i])).lower()] + list(data.Y[i]) + list(pred[i]))
    header = ["id", "model", "ok"] + [f"obs_{c}" for c in ys] + [f"pred_{c}" for c in ys]
    io.write_table(out / "predictions.csv", header, rows)
    io.write_kv(out / "kld_summary.txt", summary)
    meta["n_obs"] = data.N


def cmd_bootstrap(args, out: Path, meta: dict) -> None:
    data = _load(args)
    xs, ys = _names(data)
    boot = inference.bootstrap_rows(
        data,
        args.replicates,
        seed=args.seed,
        region_level=args.level,
        n_jobs=args.threads,
        tol=args.tol,
        max_iter=args.max_iter,
    )
    meta["seed"] = boot.seed
    meta["dropped_replicates"] = boot.dropped_count
    rep_rows = []
    for r, B in zip(boot.kept_index, boot.replicates):
        for j in range(data.D_s):
            rep_rows.append([int(r), xs[j]] + list(B[j]))
    io.write_table(out / "replicates.csv", ["replicate", "row"] + ys, rep_rows)

    notes = {}
    if data.D_r == 3:
        regions, reg_rows = {}, []
        for j in range(data.D_s):
            poly = inference.region_coordinates(boot, j)
            regions[xs[j]] = poly
            comp = inference.ternary_to_composition(poly)
            for v, (xy, c) in enumerate(zip(poly, comp)):
                reg_rows.append([xs[j], v, xy[0], xy[1]] + list(c))
            notes[f"area.{xs[j]}"] = inference.polygon_area(poly)
        io.write_table(out / "regions.csv", ["row", "vertex", "x", "y"] + ys, reg_rows)
        if args.svg:
            pts = {str(j + 1): boot.point_estimate[j] for j in range(data.D_s)}
            (out / "regions.svg").write_text(io.ternary_svg(pts, {str(j + 1): regions[xs[j]] for j in range(data.D_s)}, ys))
    else:
        # no ternary geometry: central percentile interval per entry instead
        lo_q, hi_q = (1 - args.level) / 2, 1 - (1 - args.level) / 2
        lo = np.quantile(boot.replicates, lo_q, axis=0)
        hi = np.quantile(boot.replicates, hi_q, axis=0)
        reg_rows = [[xs[j], ys[k], lo[j, k], hi[j, k]] for j in range(data.D_s) for k in range(data.D_r)]
        io.write_table(out / "regions.csv", ["row", "part", "lower", "upper"], reg_rows)
        if args.svg:
            notes["svg"] = f"skipped: {UnsupportedDimension.__name__} (ternary plots need 3 outcome parts, got {data.D_r})"
    io.write_kv(
        out / "bootstrap_report.txt",
        {"replicates": boot.R, "kept": len(boot.replicates), "dropped": boot.dropped_count,
         "level": boot.region_level, "seed": boot.seed, **notes},
    )


def cmd_simulate(args, out: Path, meta: dict) -> None:
    truth = simgen.get_truth(args.truth)
    spec = simgen.DgmSpec(
        kind=args.dgm,
        mean_model=truth,
        concentration=args.concentration,
        count_range=(args.count_min, args.count_max),
        noise_sd=args.noise_sd,
        N=args.n,
    )
    seed = inference.make_seed(args.seed)
    meta["seed"] = seed
    data = simgen.simulate(spec, seed)
    io.write_dataset(out / "data.csv", data)


def cmd_experiment(args, out: Path, meta: dict) -> None:
    cfg = _experiment_config(args)
    meta["seed"] = cfg.seed
    for k, v in simgen.config_dict(cfg).items():
        meta[f"experiment.{k}"] = v
    if isinstance(cfg, simgen.ComparisonConfig):
        report = simgen.run_model_comparison(cfg)
    else:
        report = simgen.run_error_rate_study(cfg)
    report.to_csv(out / "report.csv")


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "test": cmd_test,
    "loocv": cmd_loocv,
    "bootstrap": cmd_bootstrap,
    "simulate": cmd_simulate,
    "experiment": cmd_experiment,
}


def _prepare(args) -> None:
    if args.command in ("fit", "test"):
        args.model = args.model or "direct"
        if args.model not in MODELS:
            raise ConfigError(f"--model must be one of {', '.join(MODELS)}, got {args.model!r}")
    elif args.command in ("predict", "bootstrap") and args.model not in (None, "direct"):
        raise ConfigError(f"'{args.command}' works with the direct model only")
    if args.seed is None and args.command in ("test", "bootstrap"):
        args.seed = inference.make_seed()


def main(argv=None) -> int:
    """Run one command; returns the process exit code.

    0 on success, 2 for usage errors (from argparse), 3 for unreadable or
    unwritable files, otherwise the ``exit_code`` of the package error.
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    start = time.time()
    args = parser.parse_args(argv)
    out = Path(args.out_dir)
    meta = {"command": args.command, "argv": " ".join(argv), "seed": ""}
    code = 0
    try:
        args = _apply_config(parser, argv)
        out = Path(args.out_dir)
        _prepare(args)
        meta["seed"] = "" if args.seed is None else args.seed
        for k, v in sorted(vars(args).items()):
            if k != "command":
                meta[f"option.{k}"] = "" if v is None else v
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, out, meta)
        meta["status"] = "ok"
    except CompregError as exc:
        print(f"compreg: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = exc.exit_code
        meta["status"] = f"error {type(exc).__name__}: {exc}"
    except OSError as exc:
        print(f"compreg: error: {exc}", file=sys.stderr)
        code = 3
        meta["status"] = f"error {type(exc).__name__}: {exc}"
    meta["exit_code"] = code
    meta.update(io.versions())
    meta["started"] = datetime.fromtimestamp(start, timezone.utc).isoformat(timespec="seconds")
    meta["elapsed_seconds"] = f"{time.time() - start:.3f}"
    try:
        out.mkdir(parents=True, exist_ok=True)
        io.write_kv(out / "manifest.txt", meta)
    except OSError as exc:
        print(f"compreg: error: cannot write manifest: {exc}", file=sys.stderr)
        code = code or 3
    return code


if __name__ == "__main__":
    sys.exit(main())
