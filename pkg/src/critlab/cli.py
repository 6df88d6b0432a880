"""Command-line entry point.

Every run prints a JSON run record on stdout.  Wall time goes to stderr and
to the optional ``--record`` file only, so stdout is bit-identical across
runs with the same configuration.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 failed acceptance check.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from . import critpoints, gauss, intensity, kernel, moments, oned, simulate

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ACCEPT = 0, 1, 2, 3
KERNELS = {"plane-wave": kernel.plane_wave, "bargmann-fock": kernel.bargmann_fock}
NOT_CONFIG = {"command", "sub", "csv", "record", "threads", "handler"}


class NumericalFlag(RuntimeError):
    """A module raised a diagnostic flag; the outputs are still reported."""

    def __init__(self, message: str, outputs: dict):
        super().__init__(message)
        self.outputs = outputs


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def _write_csv(path, rows: list[dict]) -> None:
    cols = list(rows[0]) if rows else ["empty"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow(_jsonable(r))


def _model(args, normalized: bool = True):
    if args.kernel_file:
        m = kernel.load_kernel(args.kernel_file)
    elif args.kernel in KERNELS:
        m = KERNELS[args.kernel]()
    else:
        raise ValueError(f"unknown kernel {args.kernel!r}; use a name or --kernel-file")
    return kernel.normalize(m) if normalized else m


def _mc(args):
    return intensity.McConfig(samples=args.samples, seed=args.seed)


# --------------------------------------------------------------------------
# handlers: each returns (outputs, csv_rows or None, passed or None)
# --------------------------------------------------------------------------


def cmd_kernel_check(args):
    raw = _model(args, normalized=False)
    m = kernel.normalize(raw)
    rep = kernel.check_conditions(m)
    rho = m.spectral
    out = {"conditions": rep.to_dict(), "passed": rep.passed, "rescale": m.rescale,
           "moments": {"m20": rho.moment(2, 0), "m40": rho.moment(4, 0), "m22": rho.moment(2, 2)},
           "normalized_kernel": m.to_config()}
    return out, None, None


def cmd_sigma_dump(args):
    m = _model(args)
    r = args.r
    ss = gauss.assemble_sigma(m, (0.0, 0.0), (r * math.cos(args.theta), r * math.sin(args.theta)))
    return ss.to_dict(), None, None


def cmd_lemma_check(args):
    lem = gauss.lemma_suite(args.trials, args.seed)
    sup = gauss.det_sup_suite(min(args.trials, args.det_trials), args.seed)
    order = gauss.bound_order_suite(min(args.trials, args.det_trials), args.seed)
    ok = (lem["max_rel_err"] <= 1e-10 and sup["max_rel_err"] <= 1e-6
          and sup["grid_exceeds_closed"] == 0 and order["violations"] == 0)
    out = {"matrix_lemma": lem, "det_sup": sup, "bound_order": order,
           "max_rel_err": lem["max_rel_err"], "passed": ok}
    return out, None, ok


def cmd_intensity_eval(args):
    m = _model(args)
    v = intensity.intensity(m, args.which, r=args.r, s=args.s, t=args.t, mc=_mc(args))
    return {"kernel": m.kind, **v.to_dict()}, None, None


def cmd_bound_predict(args):
    m = _model(args)
    rep = intensity.bound_predict(m, args.R, args.a, args.b, delta=args.delta, mc=_mc(args))
    return rep.to_dict(), None, None


def cmd_simulate_count(args):
    m = _model(args)
    ens = simulate.sample_field(m, args.M, args.seed)
    cps = critpoints.find_critical_points(ens, args.R, critpoints.DetectorConfig(grid_h=args.grid_h))
    out = {
        "ensemble": ens.to_record(),
        "R": args.R,
        "total": len(cps),
        "in_window": critpoints.count_in_window(cps, args.a, args.b),
        "types": cps.counts_by_type(),
        "pair_counts": critpoints.pair_counts(cps, args.a, args.b, args.delta),
        "diagnostics": cps.diagnostics,
    }
    rows = [{"x": x, "y": y, "height": h, "h11": hs[0], "h12": hs[1], "h22": hs[2], "type": t}
            for (x, y), h, hs, t in zip(cps.locations, cps.heights, cps.hessians, cps.types)]
    if cps.low_confidence:
        raise NumericalFlag("detector flagged low confidence", out)
    return out, rows, None


def cmd_moments_estimate(args):
    m = _model(args)
    rep = moments.estimate_moments(m, args.R, args.a, args.b, args.reps, args.M, args.seed,
                                   threads=args.threads)
    out = rep.to_dict()
    if rep.flagged:
        raise NumericalFlag("more than 2% of replications flagged low confidence", out)
    return out, [out], None


def cmd_verify_first_moment(args):
    raw = _model(args, normalized=False)
    m = raw if args.skip_normalization else kernel.normalize(raw)
    rep = moments.verify_first_moment(m, args.R, args.a, args.b, args.reps, args.seed, args.M,
                                      mc=_mc(args), skip_normalization=args.skip_normalization,
                                      threads=args.threads)
    return rep.to_dict(), [{k: v for k, v in rep.to_dict().items() if k != "moments"}], rep.passed


def cmd_verify_bound(args):
    m = _model(args)
    st = moments.verify_second_moment_bound(m, args.R_list, args.lambda_list, args.reps, args.seed,
                                            args.M, args.center, threads=args.threads)
    out = st.to_dict()
    out["scaling_fit"] = moments.scaling_fit(st)
    return out, st.rows(), st.passed


def cmd_verify_bound_1d(args):
    pm = oned.normalize_1d(oned.process(_model(args, normalized=False)))
    st = oned.verify_bound_1d(pm, args.R_list, args.lambda_list, args.reps, args.seed, args.M,
                              args.center, threads=args.threads)
    out = st.to_dict()
    out["scaling_fit"] = moments.scaling_fit(st)
    return out, st.rows(), st.passed


def cmd_asymptotics(args):
    rep = intensity.near_diagonal_asymptotics(_model(args), args.r_list)
    return rep.to_dict(), rep.rows(), None


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _kernel_opts(p):
    p.add_argument("--kernel", default="plane-wave", help="plane-wave | bargmann-fock")
    p.add_argument("--kernel-file", default=None, help="JSON file with a user-radial profile")


def _mc_opts(p):
    p.add_argument("--samples", type=int, default=200_000)


def _window_opts(p, a=-0.5, b=0.5):
    p.add_argument("--a", type=float, default=a)
    p.add_argument("--b", type=float, default=b)


def _seed(p):
    p.add_argument("--seed", type=int, required=True)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="critlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--csv", default=None, help="write the table output to this CSV file")
    common.add_argument("--record", default=None, help="also write the run record (with wall time) here")
    common.add_argument("--threads", type=int, default=int(os.environ.get("CRITLAB_THREADS", "1")))
    top = ap.add_subparsers(dest="command", required=True)

    def group(name):
        g = top.add_parser(name).add_subparsers(dest="sub", required=True)
        return g

    def leaf(parent, name, handler):
        p = parent.add_parser(name, parents=[common])
        p.set_defaults(handler=handler)
        return p

    g = group("kernel")
    p = leaf(g, "check", cmd_kernel_check)
    _kernel_opts(p)

    g = group("sigma")
    p = leaf(g, "dump", cmd_sigma_dump)
    _kernel_opts(p)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--theta", type=float, default=0.0)

    g = group("lemma")
    p = leaf(g, "check", cmd_lemma_check)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--det-trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)

    g = group("intensity")
    p = leaf(g, "eval", cmd_intensity_eval)
    _kernel_opts(p)
    _mc_opts(p)
    _seed(p)
    p.add_argument("--which", type=int, choices=[1, 2, 3, 4, 5], required=True)
    p.add_argument("--r", type=float, default=1.0)
    p.add_argument("--s", type=float, default=0.0)
    p.add_argument("--t", type=float, default=0.0)

    g = group("bound")
    p = leaf(g, "predict", cmd_bound_predict)
    _kernel_opts(p)
    _seed(p)
    p.add_argument("--samples", type=int, default=20_000)
    p.add_argument("--R", type=float, required=True)
    _window_opts(p)
    p.add_argument("--delta", type=float, default=None)

    g = group("simulate")
    p = leaf(g, "count", cmd_simulate_count)
    _kernel_opts(p)
    _seed(p)
    p.add_argument("--R", type=float, default=10.0)
    p.add_argument("--M", type=int, default=500)
    p.add_argument("--grid-h", type=float, default=0.3)
    p.add_argument("--delta", type=float, default=1.0)
    _window_opts(p, -math.inf, math.inf)

    g = group("moments")
    p = leaf(g, "estimate", cmd_moments_estimate)
    _kernel_opts(p)
    _seed(p)
    p.add_argument("--R", type=float, required=True)
    _window_opts(p)
    p.add_argument("--reps", type=int, default=400)
    p.add_argument("--M", type=int, default=500)

    g = group("verify")
    p = leaf(g, "first-moment", cmd_verify_first_moment)
    _kernel_opts(p)
    _mc_opts(p)
    _seed(p)
    p.add_argument("--R", type=float, default=10.0)
    _window_opts(p)
    p.add_argument("--reps", type=int, default=400)
    p.add_argument("--M", type=int, default=500)
    p.add_argument("--skip-normalization", action="store_true",
                   help="simulate the raw kernel (negative control)")
    for name, handler, R_default in (("bound", cmd_verify_bound, "5,10,20"),
                                     ("bound-1d", cmd_verify_bound_1d, "20,40,80")):
        p = leaf(g, name, handler)
        _kernel_opts(p)
        _seed(p)
        p.add_argument("--R-list", type=_floats, default=_floats(R_default))
        p.add_argument("--lambda-list", type=_floats, default=_floats("0.02,0.1,0.5,2"))
        p.add_argument("--reps", type=int, default=400)
        p.add_argument("--M", type=int, default=500)
        p.add_argument("--center", type=float, default=0.0)

    p = top.add_parser("asymptotics", parents=[common])
    p.set_defaults(handler=cmd_asymptotics, sub=None)
    _kernel_opts(p)
    p.add_argument("--r-list", type=_floats, default=_floats("0.1,0.05,0.02,0.01,0.005,0.002,0.001"))
    return ap


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in NOT_CONFIG}


def run(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    command = " ".join(c for c in (args.command, args.sub) if c)
    config = _jsonable(_config(args))
    record = {
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "version": __version__,
        "config_hash": hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest(),
    }
    if args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    t0 = time.perf_counter()
    code = EXIT_OK
    rows = None
    try:
        outputs, rows, passed = args.handler(args)
        if passed is False:
            code = EXIT_ACCEPT
    except NumericalFlag as exc:
        outputs, code = exc.outputs, EXIT_NUMERIC
        record["error"] = str(exc)
    except (ValueError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        if isinstance(exc, np.linalg.LinAlgError) or isinstance(exc, gauss.NotPSDError):
            code = EXIT_NUMERIC
        else:
            code = EXIT_CONFIG
        outputs = {}
        record["error"] = f"{type(exc).__name__}: {exc}"
    except (np.linalg.LinAlgError, ArithmeticError, RuntimeError) as exc:
        outputs, code = {}, EXIT_NUMERIC
        record["error"] = f"{type(exc).__name__}: {exc}"
    wall = time.perf_counter() - t0
    record["exit_code"] = code
    record["outputs"] = _jsonable(outputs)
    if args.csv and rows is not None:
        _write_csv(args.csv, rows)
        record["outputs_csv"] = args.csv
    print(json.dumps(record, indent=2, sort_keys=True))
    print(f"critlab {command}: exit {code}, wall time {wall:.3f} s", file=sys.stderr)
    if args.record:
        with open(args.record, "w", encoding="utf-8") as fh:
            json.dump({**record, "wall_time": wall}, fh, indent=2, sort_keys=True)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
