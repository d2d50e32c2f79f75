"""Command-line interface.

Subcommands: ``eval``, ``converge-table``, ``fit``, ``simulate``, ``study``,
``predict`` and ``cv``.  Exit codes: 0 success, 2 invalid input,
3 numerical failure, 4 failed monotonicity check in ``converge-table``.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .covmat import assemble, read_points_csv, sparsity_stats, write_points_csv
from .errors import (
    ConvergenceError,
    DomainError,
    DuplicateLocationError,
    FitError,
    NotPositiveDefiniteError,
    PrecisionLossError,
)
from .inference import FAMILIES, ParamVector, build_model, fit_ml, initial_guess
from .kernels import min_shape, practical_range
from .montecarlo import SimConfig, run_study, simulate_grf, uniform_points
from .predict import krige, loo_cv, resample_scores
from .spectral import convergence_table

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4

TABLE_NU = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5)
TABLE_MU = (5.0, 10.0, 20.0, 40.0, 80.0, 160.0, 320.0, 640.0)


class InputError(Exception):
    """Invalid command-line input."""


# ---------------------------------------------------------------------------
# helpers


def _floats(text: str) -> list:
    try:
        return [float(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError as exc:
        raise InputError(f"expected a comma-separated list of numbers, got {text!r}") from exc


def _grid(text: str) -> np.ndarray:
    """``start:stop:num`` (inclusive linspace) or a comma-separated list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise InputError("grid must be start:stop:num")
        try:
            a, b, k = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError as exc:
            raise InputError(f"bad grid {text!r}") from exc
        if k < 1:
            raise InputError("grid needs at least one point")
        return np.linspace(a, b, k)
    return np.array(_floats(text))


def read_params(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}: expected key = value, got {raw.strip()!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k] = v
    return out


def write_params(path, record: dict, header=()):
    with open(path, "w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        for k, v in record.items():
            fh.write(f"{k} = {_fmt(v)}\n")


def _fmt(v):
    if isinstance(v, bool) or not isinstance(v, (float, np.floating)):
        return str(v)
    return f"{v:.17g}"


def _aligned(record: dict, decimals: int = 5) -> str:
    width = max(len(k) for k in record)
    lines = []
    for k, v in record.items():
        if isinstance(v, (float, np.floating)) and not isinstance(v, bool):
            v = f"{v:.{decimals}f}" if abs(v) < 1e6 else f"{v:.{decimals}e}"
        lines.append(f"{k.ljust(width)}  {v}")
    return "\n".join(lines)


def _header(args, extra=()) -> list:
    lines = [f"gwmatern {__version__}", f"subcommand = {args.command}"]
    if getattr(args, "seed", None) is not None:
        lines.append(f"seed = {args.seed}")
    return lines + list(extra)


def _load_points(path, need_values: bool):
    try:
        ps, values = read_points_csv(path)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if need_values and values is None:
        raise InputError(f"{path} has no value column")
    return ps, values


def _check_writable(path):
    if path is None:
        return
    folder = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(folder) or not os.access(folder, os.W_OK):
        raise InputError(f"cannot write {path}: directory missing or not writable")
    if os.path.isdir(path):
        raise InputError(f"cannot write {path}: is a directory")


# ---------------------------------------------------------------------------
# model options


def _add_model_options(p):
    g = p.add_argument_group("model")
    g.add_argument("--params", help="key = value file with model parameters (flags override it)")
    g.add_argument("--family", choices=FAMILIES, help="correlation family")
    g.add_argument("--nu", type=float, help="smoothness parameter")
    g.add_argument("--mu", type=float, help="shape parameter (Wendland families)")
    g.add_argument("--beta", type=float, help="scale (support for the gw family)")
    g.add_argument("--sigma2", type=float, help="variance (default 1)")
    g.add_argument("--tau2", type=float, help="nugget fraction in [0, 1) (default 0)")
    g.add_argument("--dim", type=int, default=None, help="spatial dimension (default 2)")


def _resolve_model(args, require=("family", "nu", "beta")) -> dict:
    """Merge the params file with command-line flags and validate."""
    base = read_params(args.params) if getattr(args, "params", None) else {}
    out = {}
    for key in ("family", "nu", "mu", "mu_star", "beta", "sigma2", "tau2", "dim"):
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in base:
            out[key] = base[key]
    try:
        for key in ("nu", "mu", "mu_star", "beta", "sigma2", "tau2"):
            if key in out:
                out[key] = float(out[key])
        out["dim"] = int(float(out.get("dim", 2)))
    except ValueError as exc:
        raise InputError(f"bad parameter value: {exc}") from exc
    if "mu" not in out and "mu_star" in out:
        out["mu"] = 1.0 / out["mu_star"]
    out.pop("mu_star", None)
    out.setdefault("sigma2", 1.0)
    out.setdefault("tau2", 0.0)
    for key in require:
        if key not in out:
            raise InputError(f"missing parameter: {key}")
    fam = out.get("family")
    if fam is not None and fam not in FAMILIES:
        raise InputError(f"family must be one of {FAMILIES}")
    if fam in ("phi", "gw") and "beta" in require and "mu" not in out:
        raise InputError(f"family {fam} needs mu")
    if fam in ("phi", "gw") and "mu" in out and "nu" in out:
        lam = min_shape(out["dim"], out["nu"])
        if out["mu"] < lam:
            raise InputError(f"mu = {out['mu']:g} violates mu >= lambda(d, nu) = {lam:g}")
    return out


def _model_from(cfg: dict):
    theta = ParamVector(cfg["sigma2"], cfg["beta"],
                        None if cfg["family"] == "matern" else 1.0 / cfg["mu"], cfg["tau2"])
    return build_model(theta, cfg["family"], cfg["nu"], cfg["dim"])


def _model_lines(cfg: dict) -> list:
    return [f"{k} = {_fmt(v)}" for k, v in cfg.items()]


# ---------------------------------------------------------------------------
# subcommands


def cmd_eval(args) -> int:
    cfg = _resolve_model(args)
    model = _model_from(cfg)
    r = _grid(args.r_grid)
    if np.any(r < 0):
        raise InputError("r-grid must be nonnegative")
    _check_writable(args.out)
    rho = np.asarray(model.correlation(r), dtype=float)
    info = {"delta": model.support, "practical_range": practical_range(model)}
    lines = _header(args, _model_lines(cfg)) + [f"{k} = {v:.5f}" for k, v in info.items()]
    for line in lines:
        print(f"# {line}")
    print(f"{'r':>12}{'rho':>12}")
    for a, b in zip(r, rho):
        print(f"{a:12.5f}{b:12.5f}")
    if args.out:
        with open(args.out, "w") as fh:
            for line in _header(args, _model_lines(cfg)) + [f"{k} = {_fmt(v)}" for k, v in info.items()]:
                fh.write(f"# {line}\n")
            fh.write("r,rho\n")
            for a, b in zip(r, rho):
                fh.write(f"{a:.17g},{b:.17g}\n")
    return EXIT_OK


def cmd_converge(args) -> int:
    nus = _floats(args.nu_list) if args.nu_list else list(TABLE_NU)
    mus = _floats(args.mu_list) if args.mu_list else list(TABLE_MU)
    if any(n < 0 for n in nus):
        raise InputError("nu must be nonnegative")
    for nu in nus:
        lam = min_shape(args.dim, nu)
        bad = [m for m in mus if m < lam]
        if bad:
            raise InputError(f"mu = {bad[0]:g} violates mu >= lambda(d, nu) = {lam:g} for nu = {nu:g}")
    _check_writable(args.out)
    cols = ([None] if not args.no_lambda else []) + mus
    rep = convergence_table(nus, cols, beta=args.beta, dim=args.dim, workers=args.threads)
    print(rep.to_text(5))
    if args.out:
        with open(args.out, "w") as fh:
            for line in _header(args, [f"beta = {args.beta:.17g}", f"dim = {args.dim}"]):
                fh.write(f"# {line}\n")
            fh.write("nu,mu,max_abs_error,argmax_r\n")
            for row in rep.rows():
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    if not rep.is_decreasing():
        print("error: maximal error is not strictly decreasing in mu along every row", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def _parse_fix(items, dim, nu):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise InputError(f"--fix expects name=value, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        try:
            v = float(v)
        except ValueError as exc:
            raise InputError(f"--fix {item!r}: bad value") from exc
        if k == "mu":
            k, v = "mu_star", 1.0 / v
        if k not in ("sigma2", "beta", "mu_star", "tau2"):
            raise InputError(f"cannot fix unknown parameter {k!r}")
        out[k] = v
    return out


def cmd_fit(args) -> int:
    cfg = _resolve_model(args, require=("family", "nu"))
    fam, nu, dim = cfg["family"], cfg["nu"], cfg["dim"]
    fix = _parse_fix(args.fix, dim, nu)
    if fam == "matern" and "mu_star" in fix:
        raise InputError("the matern family has no mu")
    if "mu_star" in fix and fix["mu_star"] * min_shape(dim, nu) > 1.0 + 1e-12:
        raise InputError(f"fixed mu violates mu >= lambda(d, nu) = {min_shape(dim, nu):g}")
    ps, z = _load_points(args.data, need_values=True)
    _check_writable(args.out)
    init = initial_guess(ps, z, fam, nu, dim, mu=cfg.get("mu"), nugget=args.nugget)
    start = {k: cfg[k] for k in ("beta",) if k in cfg}
    if args.params is not None or args.sigma2 is not None:
        start["sigma2"] = cfg["sigma2"]
    start.update(fix)
    fixed = set(fix)
    if not args.nugget and "tau2" not in fix:
        fixed.add("tau2")
    init = ParamVector(start.get("sigma2", init.sigma2), start.get("beta", init.beta),
                       start.get("mu_star", init.mu_star), start.get("tau2", init.tau2),
                       fixed=frozenset(fixed))
    res = fit_ml(ps, z, fam, nu, init=init, dim=dim, max_iter=args.max_iter)
    record = {"family": fam, "nu": nu, "dim": dim, "n": ps.n} | res.summary()
    record.pop("family"), record.pop("nu")
    record = {"family": fam, "nu": nu} | record
    print(_aligned(record))
    if args.out:
        write_params(args.out, record, _header(args, [f"data = {args.data}"]))
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _resolve_model(args)
    model = _model_from(cfg)
    if args.points:
        ps, _ = _load_points(args.points, need_values=False)
    else:
        if args.n is None or args.n < 1:
            raise InputError("give --points or a positive --n")
        box = tuple((0.0, 1.0) for _ in range(cfg["dim"]))
    _check_writable(args.out)
    seq = np.random.SeedSequence(args.seed)
    loc_seq, field_seq = seq.spawn(2)
    if not args.points:
        ps = uniform_points(args.n, loc_seq, box)
    z = simulate_grf(ps, model, field_seq)
    write_points_csv(args.out, ps, z, _header(args, _model_lines(cfg)))
    return EXIT_OK


def cmd_study(args) -> int:
    nu = args.nu
    dim = 2
    lam = min_shape(dim, nu)
    mu = args.mu if args.mu is not None else lam + args.mu_offset
    if mu < lam:
        raise InputError(f"mu = {mu:g} violates mu >= lambda(d, nu) = {lam:g}")
    n, reps = (1000, 500) if args.full else (args.n, args.replicates)
    free = tuple(s.strip() for s in args.free.split(",") if s.strip())
    bad = set(free) - {"sigma2", "beta", "mu_star", "tau2"}
    if bad:
        raise InputError(f"unknown free parameters: {sorted(bad)}")
    try:
        cfg = SimConfig(n=n, replicates=reps, seed=args.seed,
                        delta=None if args.beta is not None else args.delta,
                        beta=args.beta, sigma2=args.sigma2)
    except DomainError as exc:
        raise InputError(str(exc)) from exc
    _check_writable(args.out)
    rep = run_study(cfg, nu, mu, free=free, workers=args.threads)
    summ = rep.summaries()
    keys = ("min", "q1", "median", "q3", "max", "iqr", "outliers")
    print(f"{'statistic':>14}" + "".join(f"{k:>11}" for k in keys))
    for name, s in summ.items():
        print(f"{name:>14}" + "".join(f"{s[k]:11.5f}" if k != "outliers" else f"{s[k]:11d}" for k in keys))
    print(f"# replicates = {reps}, failures = {len(rep.failures)}")
    if args.out:
        extra = [f"nu = {nu:.17g}", f"mu = {mu:.17g}", f"n = {n}", f"replicates = {reps}",
                 f"beta = {rep.theta.beta:.17g}", f"sigma2 = {rep.theta.sigma2:.17g}",
                 f"free = {','.join(rep.free)}"]
        rep.to_csv(args.out, _header(args, extra))
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _resolve_model(args)
    model = _model_from(cfg)
    train, z = _load_points(args.train, need_values=True)
    targets, truth = _load_points(args.targets, need_values=False)
    _check_writable(args.out)
    res = krige(train, z, model, targets)
    with open(args.out, "w") as fh:
        for line in _header(args, _model_lines(cfg)):
            fh.write(f"# {line}\n")
        names = ["x", "y", "z"][: targets.dim]
        fh.write(",".join(names + ["yhat", "sd"]) + "\n")
        for c, yh, sd in zip(targets.coords, res.prediction, res.sd):
            fh.write(",".join(f"{v:.17g}" for v in (*c, yh, sd)) + "\n")
    return EXIT_OK


def cmd_cv(args) -> int:
    cfg = _resolve_model(args)
    model = _model_from(cfg)
    ps, z = _load_points(args.data, need_values=True)
    _check_writable(args.out)
    storage = args.storage
    if storage == "auto":
        storage = "sparse" if model.is_compact else "dense"
    stats = sparsity_stats(assemble(ps, model, storage=storage))
    print(f"# stats: storage = {storage}, percent_zero = {stats['percent_zero']:.5f}")
    if args.repeats:
        scores = resample_scores(ps, z, model, holdout_fraction=args.holdout, repeats=args.repeats,
                                 seed=args.seed, storage=storage, workers=args.threads)
        method = "resample"
    else:
        scores = loo_cv(ps, z, model, storage=storage)
        method = "loo"
    record = {"method": method} | scores.as_dict() | {"storage": storage,
                                                      "percent_zero": stats["percent_zero"]}
    print(_aligned(record))
    if args.out:
        write_params(args.out, record, _header(args, _model_lines(cfg) + [f"data = {args.data}"]))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gwmatern", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"gwmatern {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")

    s = sub.add_parser("eval", help="evaluate a correlation function on a grid")
    _add_model_options(s)
    s.add_argument("--r-grid", default="0:1:11", help="start:stop:num or comma list")
    s.add_argument("--out", help="CSV output")
    common(s)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("converge-table", help="sup-norm gap to the Matern model over a (nu, mu) grid")
    s.add_argument("--nu-list", help="comma list (default 0,0.5,...,2.5)")
    s.add_argument("--mu-list", help="comma list (default 5,10,...,640); lambda(d, nu) is prepended")
    s.add_argument("--no-lambda", action="store_true", help="do not prepend the lambda column")
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--dim", type=int, default=2)
    s.add_argument("--out", help="CSV output with columns nu, mu, max_abs_error, argmax_r")
    common(s)
    s.set_defaults(func=cmd_converge)

    s = sub.add_parser("fit", help="maximum-likelihood fit to point data")
    s.add_argument("--data", required=True, help="CSV with x,y[,z],value")
    _add_model_options(s)
    s.add_argument("--fix", action="append", metavar="NAME=VALUE",
                   help="hold a parameter fixed (sigma2, beta, mu, tau2); repeatable")
    s.add_argument("--nugget", action="store_true", help="estimate a nugget")
    s.add_argument("--max-iter", type=int, default=5000)
    s.add_argument("--out", help="key = value result file")
    common(s)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="simulate one Gaussian random field")
    _add_model_options(s)
    s.add_argument("--n", type=int, help="number of uniform locations in the unit cube")
    s.add_argument("--points", help="CSV with locations (overrides --n)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="CSV output x,y[,z],value")
    common(s)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("study", help="replicated simulation and estimation study")
    s.add_argument("--nu", type=float, required=True)
    s.add_argument("--mu", type=float, help="shape (default lambda(2, nu) + --mu-offset)")
    s.add_argument("--mu-offset", type=float, default=3.0)
    s.add_argument("--delta", type=float, default=0.6, help="target compact support")
    s.add_argument("--beta", type=float, help="explicit scale instead of --delta")
    s.add_argument("--sigma2", type=float, default=1.0)
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--replicates", type=int, default=200)
    s.add_argument("--full", action="store_true", help="n = 1000 with 500 replicates")
    s.add_argument("--free", default="sigma2,beta", help="comma list of estimated parameters")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="CSV output")
    common(s)
    s.set_defaults(func=cmd_study)

    s = sub.add_parser("predict", help="kriging predictions at target locations")
    s.add_argument("--train", required=True, help="CSV with x,y[,z],value")
    s.add_argument("--targets", required=True, help="CSV with target locations")
    _add_model_options(s)
    s.add_argument("--out", required=True, help="CSV output x,y,yhat,sd")
    common(s)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("cv", help="cross-validation scores")
    s.add_argument("--data", required=True, help="CSV with x,y[,z],value")
    _add_model_options(s)
    s.add_argument("--repeats", type=int, default=0, help="random splits (0: leave-one-out)")
    s.add_argument("--holdout", type=float, default=0.2, help="held-out fraction per split")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--storage", choices=("auto", "dense", "sparse"), default="auto")
    s.add_argument("--out", help="key = value score file")
    common(s)
    s.set_defaults(func=cmd_cv)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (InputError, DomainError, DuplicateLocationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NotPositiveDefiniteError, FitError, ConvergenceError, PrecisionLossError,
            ArithmeticError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
