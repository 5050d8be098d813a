"""Command-line front end.

Subcommands cover the kernel solves, path simulation, the pathwise
decomposition, variogram construction, scaling-exponent fits and the
bound audits.  Every run writes its outputs plus a JSON manifest of the
resolved parameters; `mfbm --manifest <file>` replays a recorded run.

Exit codes: 0 success, 1 usage or validation error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import NumericalError
from .quadrature import Alpha, Grid
from .kernel_solve import SweepSolver
from .gaussian_paths import simulate, simulate_ensemble
from .decomposition import decompose
from .regularity import build_variogram, default_fit_window, fit_holder, audit_lemma_bounds
from . import outputs as out

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; the contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(f"{self.prog}: error: {message}")


def _fail(message: str) -> "SystemExit":
    print(f"error: {message}", file=sys.stderr)
    return SystemExit(1)


def _check_h(h: float, lower: float = 0.75):
    if not lower < h <= 1.0:
        raise _fail(f"--H must be in ({lower}, 1], got {h}")


def _check_n(n: int):
    if n < 64 or n > 4096 or n & (n - 1) != 0:
        raise _fail(f"--n must be a power of two in [64, 4096], got {n}")


def _out_path(params, name: str) -> Path:
    return Path(params["out_dir"]) / f"{params['prefix']}{name}"


def _finish(command: str, params: dict, files) -> int:
    manifest = out.write_manifest(
        _out_path(params, "_manifest.json"), command, params, files, __version__
    )
    for path in [*files, manifest]:
        print(f"wrote {path}")
    return 0


def _add_common(parser, prefix_default: str, with_seed=True):
    parser.add_argument("--T", type=float, default=1.0, help="time horizon (default 1.0)")
    parser.add_argument("--n", type=int, default=1024, help="grid cells, power of two in [64, 4096]")
    parser.add_argument("--out-dir", default=None,
                        help=f"output directory (default ${out.OUT_DIR_ENV} or '.')")
    parser.add_argument("--prefix", default=prefix_default, help="output file name prefix")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker cap for parallel axes (results are unaffected)")
    if with_seed:
        parser.add_argument("--seed", type=int, default=0, help="base random seed")


def _resolve_common(args) -> dict:
    params = {
        "T": float(args.T),
        "n": int(args.n),
        "out_dir": str(args.out_dir if args.out_dir is not None else out.default_out_dir()),
        "prefix": str(args.prefix),
        "threads": None if args.threads is None else int(args.threads),
    }
    if hasattr(args, "seed"):
        params["seed"] = int(args.seed)
    return params


# ---------------------------------------------------------------- solve-kernel

def run_solve_kernel(params: dict) -> int:
    _check_h(params["H"])
    _check_n(params["n"])
    if not 0.0 < params["upper"] <= params["T"]:
        raise _fail(f"upper limit {params['upper']} outside (0, {params['T']}]")
    grid = Grid(params["T"], params["n"])
    alpha = Alpha.from_h(params["H"])
    k = grid.nearest_node_index(params["upper"])
    if k < 1:
        raise _fail("upper limit rounds to node 0")
    solver = SweepSolver(grid, alpha)
    field = solver.L_field(k) if params["kind"] == "L" else solver.g_field(k)
    csv = out.write_csv(
        _out_path(params, ".csv"), ["r", "value"],
        zip(field.midpoints, field.values),
    )
    return _finish("solve-kernel", params, [csv])


def _cmd_solve_kernel(args) -> int:
    params = _resolve_common(args)
    params.pop("seed", None)
    upper = args.s if args.s is not None else args.t
    if upper is None or (args.s is not None and args.t is not None):
        raise _fail("pass exactly one of --s / --t")
    params.update({"kind": args.kind, "H": float(args.H), "upper": float(upper)})
    return run_solve_kernel(params)


# ------------------------------------------------------------------- simulate

def run_simulate(params: dict) -> int:
    _check_h(params["H"], lower=0.0)
    _check_n(params["n"])
    grid = Grid(params["T"], params["n"])
    if params["paths"] < 1:
        raise _fail("--paths must be >= 1")
    if params["paths"] == 1:
        path = simulate(grid, params["H"], params["seed"])
        csv = out.write_csv(
            _out_path(params, ".csv"), ["t", "fbm", "bm", "mixed"],
            zip(grid.nodes, path.fbm, path.bm, path.mixed),
        )
    else:
        fbm, bm, mixed = simulate_ensemble(
            grid, params["H"], params["seed"], params["paths"], threads=params["threads"]
        )
        csv = out.write_csv(
            _out_path(params, ".csv"),
            ["t", "mean_fbm", "var_fbm", "mean_bm", "var_bm", "mean_mixed", "var_mixed"],
            zip(
                grid.nodes,
                fbm.mean(axis=0), fbm.var(axis=0, ddof=1),
                bm.mean(axis=0), bm.var(axis=0, ddof=1),
                mixed.mean(axis=0), mixed.var(axis=0, ddof=1),
            ),
        )
    return _finish("simulate", params, [csv])


def _cmd_simulate(args) -> int:
    params = _resolve_common(args)
    params.update({"H": float(args.H), "paths": int(args.paths)})
    return run_simulate(params)


# ------------------------------------------------------------------ decompose

def run_decompose(params: dict) -> int:
    _check_h(params["H"])
    _check_n(params["n"])
    if params["decimation"] < 1 or params["n"] % params["decimation"] != 0:
        raise _fail(f"--decimation must divide n={params['n']}")
    grid = Grid(params["T"], params["n"])
    path = simulate(grid, params["H"], params["seed"])
    drift, innovation = decompose(
        path, decimation=params["decimation"], threads=params["threads"]
    )
    subset = drift.s_subset
    csv = out.write_csv(
        _out_path(params, ".csv"),
        ["t", "X", "phi", "M", "bbar", "residual"],
        zip(
            grid.nodes[subset], path.mixed[subset], drift.phi,
            innovation.m_values, innovation.bbar, innovation.residual,
        ),
    )
    max_res = float(np.max(np.abs(innovation.residual)))
    print(f"max residual {out.format_float(max_res)} "
          f"({out.format_float(max_res / max(1e-300, float(np.max(np.abs(path.mixed)))))} of max |X|)")
    return _finish("decompose", params, [csv])


def _cmd_decompose(args) -> int:
    params = _resolve_common(args)
    params.update({"H": float(args.H), "decimation": int(args.decimation)})
    return run_decompose(params)


# ------------------------------------------------------- variogram and holder

def _variogram_from(params: dict):
    _check_h(params["H"])
    _check_n(params["n"])
    try:
        return build_variogram(
            params["H"], params["t0"], params["lags"], params["n"],
            method=params["method"], horizon=params["T"], seed=params["seed"],
            n_paths=params["paths"], mc_refine=params["mc_refine"],
            threads=params["threads"],
        )
    except ValueError as exc:
        raise _fail(str(exc))


def _write_variogram_csv(params: dict, variogram) -> Path:
    stderr = variogram.stderr if variogram.stderr is not None else np.zeros_like(variogram.values)
    return out.write_csv(
        _out_path(params, ".csv"),
        ["lag", "value", "log_lag", "log_value", "method", "stderr"],
        [
            (lag, val, np.log(lag), np.log(val), variogram.method, err)
            for lag, val, err in zip(variogram.lags, variogram.values, stderr)
        ],
    )


def run_variogram(params: dict) -> int:
    variogram = _variogram_from(params)
    csv = _write_variogram_csv(params, variogram)
    return _finish("variogram", params, [csv])


def run_holder(params: dict) -> int:
    variogram = _variogram_from(params)
    csv = _write_variogram_csv(params, variogram)
    window = (params["window_min"], params["window_max"])
    if window[0] is None or window[1] is None:
        window = default_fit_window(Grid(params["T"], params["n"]), params["t0"])
        params = {**params, "window_min": window[0], "window_max": window[1]}
    try:
        fit = fit_holder(variogram, window=window)
    except ValueError as exc:
        raise _fail(str(exc))
    fit_json = out.write_json(
        _out_path(params, "_fit.json"),
        {
            "slope": fit.slope,
            "intercept": fit.intercept,
            "r_squared": fit.r_squared,
            "slope_stderr": fit.slope_stderr,
            "residual_norm": fit.residual_norm,
            "target": fit.target,
            "window": list(fit.lag_window),
            "n_points": fit.n_points,
            "method": variogram.method,
        },
    )
    files = [csv, fit_json]
    if params.get("svg"):
        files.append(out.loglog_svg(
            _out_path(params, ".svg"), variogram.lags, variogram.values,
            fit.slope, fit.intercept, fit.target,
        ))
    print(f"slope {fit.slope:.6f} target {fit.target:.6f} r_squared {fit.r_squared:.6f}")
    return _finish("holder", params, files)


def _variogram_params(args) -> dict:
    params = _resolve_common(args)
    params.update({
        "H": float(args.H),
        "t0": float(args.t0),
        "lags": int(args.lags),
        "method": args.method,
        "paths": int(args.paths),
        "mc_refine": int(args.mc_refine),
    })
    return params


def _cmd_variogram(args) -> int:
    return run_variogram(_variogram_params(args))


def _cmd_holder(args) -> int:
    params = _variogram_params(args)
    params.update({
        "window_min": None if args.window_min is None else float(args.window_min),
        "window_max": None if args.window_max is None else float(args.window_max),
        "svg": bool(args.svg),
    })
    return run_holder(params)


# --------------------------------------------------------------- audit-bounds

def run_audit_bounds(params: dict) -> int:
    _check_h(params["H"])
    sweep = params["n_sweep"]
    if len(sweep) < 2 or sorted(sweep) != list(sweep):
        raise _fail("--n-sweep must be an increasing list of at least two sizes")
    for n in sweep:
        _check_n(n)
    if not 0.0 < params["s"] < params["t"] <= params["T"]:
        raise _fail("need 0 < s < t <= T")
    reports = audit_lemma_bounds(
        Alpha.from_h(params["H"]), params["s"], params["t"], sweep,
        horizon=params["T"], threads=params["threads"],
    )
    payload = {
        part: {
            "grid_sizes": list(rep.grid_sizes),
            "constants": list(rep.constants),
            "stability_ratio": rep.stability_ratio,
            **({"envelope": rep.envelope} if rep.envelope is not None else {}),
        }
        for part, rep in reports.items()
    }
    report = out.write_json(_out_path(params, "_bounds.json"), payload)
    return _finish("audit-bounds", params, [report])


def _cmd_audit_bounds(args) -> int:
    params = _resolve_common(args)
    params.pop("seed", None)
    params.pop("n", None)
    try:
        sweep = [int(x) for x in args.n_sweep.split(",")]
    except ValueError:
        raise _fail(f"cannot parse --n-sweep {args.n_sweep!r}")
    params.update({"H": float(args.H), "s": float(args.s), "t": float(args.t), "n_sweep": sweep})
    return run_audit_bounds(params)


# -------------------------------------------------------------------- wiring

_RUNNERS = {
    "solve-kernel": run_solve_kernel,
    "simulate": run_simulate,
    "decompose": run_decompose,
    "variogram": run_variogram,
    "holder": run_holder,
    "audit-bounds": run_audit_bounds,
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="mfbm", description=__doc__)
    parser.add_argument("--version", action="version", version=f"mfbm {__version__}")
    parser.add_argument("--manifest", default=None,
                        help="replay a recorded run from its manifest file")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("solve-kernel", help="solve one kernel equation and dump the midpoint values")
    p.add_argument("--kind", choices=["L", "g"], required=True)
    p.add_argument("--H", type=float, required=True)
    p.add_argument("--s", type=float, default=None, help="upper limit (drift kernel)")
    p.add_argument("--t", type=float, default=None, help="upper limit (martingale kernel)")
    _add_common(p, "solve_kernel", with_seed=False)
    p.set_defaults(func=_cmd_solve_kernel)

    p = sub.add_parser("simulate", help="simulate component paths or an ensemble summary")
    p.add_argument("--H", type=float, required=True)
    p.add_argument("--paths", type=int, default=1)
    _add_common(p, "simulate")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("decompose", help="drift / martingale / innovation split of one path")
    p.add_argument("--H", type=float, required=True)
    p.add_argument("--decimation", type=int, default=8,
                   help="solve the kernel families every this many nodes (default 8)")
    _add_common(p, "decompose")
    p.set_defaults(func=_cmd_decompose)

    for name, helptext in (
        ("variogram", "second moments of drift increments over geometric lags"),
        ("holder", "variogram plus log-log slope fit against 4H-3"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--H", type=float, required=True)
        p.add_argument("--t0", type=float, default=0.5, help="base point (default T/2 = 0.5)")
        p.add_argument("--lags", type=int, default=6, help="number of dyadic lags (default 6)")
        p.add_argument("--method", choices=["gram", "reduced", "monte-carlo"], default="reduced")
        p.add_argument("--paths", type=int, default=5000, help="ensemble size for monte-carlo")
        p.add_argument("--mc-refine", type=int, default=2,
                       help="grid refinement for monte-carlo sampling (default 2)")
        if name == "holder":
            p.add_argument("--window-min", type=float, default=None,
                           help="smallest lag in the fit (default 16 h)")
            p.add_argument("--window-max", type=float, default=None,
                           help="largest lag in the fit (default t0 / 4)")
            p.add_argument("--svg", action="store_true", help="also write a log-log plot")
        _add_common(p, name)
        p.set_defaults(func=_cmd_variogram if name == "variogram" else _cmd_holder)

    p = sub.add_parser("audit-bounds", help="refinement stability of the solution-bound constants")
    p.add_argument("--H", type=float, required=True)
    p.add_argument("--s", type=float, default=0.5)
    p.add_argument("--t", type=float, default=0.625)
    p.add_argument("--n-sweep", default="128,256,512,1024")
    _add_common(p, "audit_bounds", with_seed=False)
    p.set_defaults(func=_cmd_audit_bounds)

    return parser


def _replay(manifest_path: str) -> int:
    manifest = out.load_manifest(manifest_path)
    command = manifest["command"]
    if command not in _RUNNERS:
        raise _fail(f"manifest names unknown command {command!r}")
    params = dict(manifest["parameters"])
    if "method" in params and params["method"] == "monte-carlo":
        params["method"] = "monte_carlo"
    return _RUNNERS[command](params)


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.manifest is not None:
            code = _replay(args.manifest)
        elif args.command is None:
            parser.print_help()
            code = 1
        else:
            if getattr(args, "method", None) == "monte-carlo":
                args.method = "monte_carlo"
            code = args.func(args)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return 1
        return 0 if exc.code is None else int(exc.code)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return code


if __name__ == "__main__":
    raise SystemExit(main())
