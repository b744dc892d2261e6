"""Experiment runner CLI.

Subcommands solve tracing survival curves, reproduce the pinned figure
scenarios, run parameter sweeps, and simulate the endemic SIS comparison.
All outputs are comma-separated text files with a ``#``-prefixed metadata
block (parameters, seed, version), written atomically; identical scenarios
and seeds give byte-identical files regardless of thread count.

Exit codes: 0 success, 2 validation error, 3 solver failure, 4 insufficient
Monte Carlo sample.
"""
from __future__ import annotations

import argparse
import os
import sys
import tempfile

import numpy as np

from . import __version__, presets
from .approx import (
    first_order_backward,
    first_order_forward,
    first_order_full,
    rct_exponential,
    rct_fixed,
    rct_latency,
    reproduction_number,
)
from .core import (
    AgeProfile,
    DelayKernel,
    Grid,
    InsufficientSampleError,
    Rates,
    SolverError,
    ValidationError,
    kappa_hat,
)
from .endemic import integrate_sis, simulate_sis_finite
from .kappa import (
    SolverSettings,
    TraceConfig,
    limit_curve,
    solve_backward_onestep,
    solve_backward_recursive,
    solve_forward_generations,
    solve_full,
)
from .mc import estimate_kappa, run_ensemble

THREADS_ENV = "DELAYTRACE_THREADS"

_MC_GRID = Grid(h=0.05, a_max=3.0)


def _apply_thread_env():
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"{THREADS_ENV} must be an integer, got {raw!r}")
    if n < 1:
        raise ValidationError(f"{THREADS_ENV} must be >= 1")
    try:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except ImportError:  # pragma: no cover - numba is a hard dependency
        pass


def _fmt(x) -> str:
    # cast numpy scalars down so repr is the plain shortest round-trip form
    if isinstance(x, float):
        return repr(float(x))
    return str(x)


def _write_csv(path: str, meta: dict, header: list[str], rows) -> None:
    """Write atomically: a # metadata block, a header row, then data rows."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(f"# delaytrace {__version__}\n")
            for k in sorted(meta):
                f.write(f"# {k} = {_fmt(meta[k])}\n")
            f.write(",".join(header) + "\n")
            for row in rows:
                f.write(",".join(_fmt(v) for v in row) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _parse_delay(spec: str) -> DelayKernel:
    kind, _, value = spec.partition(":")
    kind = kind.strip().lower()
    if not value:
        raise ValidationError(f"delay spec {spec!r} must look like dirac:0.5 or exp:1.0")
    try:
        T = float(value)
    except ValueError:
        raise ValidationError(f"bad delay value in {spec!r}")
    if kind == "dirac":
        return DelayKernel.dirac(T)
    if kind in ("exp", "exponential"):
        return DelayKernel.exponential(T)
    raise ValidationError(f"unknown delay kind {kind!r} (use dirac or exp)")


def _parse_range(spec: str) -> np.ndarray:
    """start:stop:step inclusive of both endpoints (within half a step)."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ValidationError(f"range {spec!r} must look like start:stop:step")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise ValidationError(f"bad number in range {spec!r}")
    if step <= 0 or stop < start:
        raise ValidationError(f"range {spec!r} needs stop >= start and step > 0")
    n = int(round((stop - start) / step)) + 1
    return start + step * np.arange(n)


def _load_config(path: str) -> list[str]:
    """Flat key = value lines become long flags, inserted before explicit ones."""
    flags: list[str] = []
    try:
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValidationError(f"{path}:{lineno}: expected key = value")
                key, value = (s.strip() for s in line.split("=", 1))
                if not key:
                    raise ValidationError(f"{path}:{lineno}: empty key")
                flags.append(f"--{key.replace('_', '-')}")
                if value:
                    flags.append(value)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}")
    return flags


def _meta_from(args: argparse.Namespace, keys: list[str]) -> dict:
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


# --------------------------------------------------------------------------
# kappa subcommand


def _cmd_kappa(args) -> int:
    rates = Rates(beta=args.beta, alpha=args.alpha, sigma=args.sigma, p=args.p)
    kernel = _parse_delay(args.delay)
    settings = SolverSettings.default(rates.gamma, kernel.mean)
    if args.grid_h is not None or args.a_max is not None:
        grid = Grid(
            h=args.grid_h if args.grid_h is not None else settings.grid.h,
            a_max=args.a_max if args.a_max is not None else settings.grid.a_max,
        )
        settings = SolverSettings(grid=grid)
    grid = settings.grid
    config = TraceConfig(direction=args.direction, mode=args.mode,
                         generations=args.generations)

    if args.latency > 0:
        profile = AgeProfile.fixed_latency(rates, args.latency)
        from .kappa import solve_age_dependent

        curves = solve_age_dependent(profile, kernel, config.mode,
                                     config.generations, settings)
        final = limit_curve(curves)
    elif config.direction == "backward":
        if config.mode == "recursive":
            final = solve_backward_recursive(rates, kernel, settings)
        else:
            final = solve_backward_onestep(rates, kernel, settings)
        curves = [final]
    elif config.direction == "forward":
        curves = solve_forward_generations(rates, kernel, config.mode,
                                           config.generations, settings)
        final = limit_curve(curves)
    else:
        curves = solve_full(rates, kernel, config.mode, config.generations, settings)
        final = limit_curve(curves)

    header = ["a", "kappa_hat"] + [f"kappa_gen_{c.generation}" for c in curves]
    kh = kappa_hat(grid.ages, rates.gamma)
    columns = [grid.ages, kh] + [c.values for c in curves]
    meta = _meta_from(args, ["direction", "mode", "beta", "alpha", "sigma",
                             "p", "delay", "generations", "latency"])
    meta.update({"grid_h": grid.h, "a_max": grid.a_max})
    _write_csv(args.output, meta, header, zip(*columns))

    profile = AgeProfile.constant(rates)
    r_numeric = reproduction_number(final, profile)
    if kernel.kind == "dirac":
        rct = rct_fixed(rates.r0, rates.p, rates.p_obs, rates.gamma, kernel.T).rct
    else:
        rct = rct_exponential(rates.r0, rates.p, rates.p_obs, rates.gamma, kernel.T).rct
    print(f"R0={rates.r0:.6g} Rct_first_order={rct:.6g} R_numeric={r_numeric:.6g}")
    print(f"wrote {args.output}")
    return 0


# --------------------------------------------------------------------------
# reproduce subcommand


def _curve_figure(direction: str, outdir: str, seed: int, replicas: int) -> None:
    kernel = presets.curve_kernel()
    mc_gen = 0 if direction == "backward" else presets.CURVE_MC_GENERATION
    for p in presets.CURVE_PS:
        rates = presets.curve_rates(p)
        settings = SolverSettings.default(rates.gamma, kernel.T)
        grid = settings.grid
        kh = kappa_hat(grid.ages, rates.gamma)
        columns: dict[str, np.ndarray] = {"a": grid.ages, "kappa_hat": kh}
        for mode in ("one-step", "recursive"):
            if direction == "backward":
                solver = (solve_backward_recursive if mode == "recursive"
                          else solve_backward_onestep)
                columns[f"kappa_{mode}"] = solver(rates, kernel, settings).values
            else:
                if direction == "forward":
                    curves = solve_forward_generations(rates, kernel, mode, 8, settings)
                else:
                    curves = solve_full(rates, kernel, mode, 8, settings)
                for c in curves:
                    if isinstance(c.generation, int) and c.generation > 4:
                        continue
                    columns[f"kappa_{mode}_gen_{c.generation}"] = c.values
        if direction == "backward":
            fo = first_order_backward(rates, kernel, grid)
        elif direction == "forward":
            fo = first_order_forward(rates, kernel, grid)
        else:
            fo = first_order_full(rates, kernel, grid)[1]
        columns["first_order"] = fo.curve.values

        config = TraceConfig(direction=direction, mode="recursive",
                             generations=max(mc_gen, 1))
        stats = run_ensemble(rates, kernel, config, replicas, seed, _MC_GRID)
        est = estimate_kappa(stats, mc_gen)
        columns["mc"] = est.curve.at(grid.ages)
        columns["mc_lo"] = np.interp(grid.ages, _MC_GRID.ages, est.lower)
        columns["mc_hi"] = np.interp(grid.ages, _MC_GRID.ages, est.upper)

        meta = {"direction": direction, "p": p, "beta": rates.beta,
                "alpha": rates.alpha, "sigma": rates.sigma,
                "delay": f"dirac:{kernel.T}", "seed": seed,
                "replicas": replicas, "mc_generation": mc_gen}
        path = os.path.join(outdir, f"{direction}_p{p}.csv")
        _write_csv(path, meta, list(columns), zip(*columns.values()))
        print(f"wrote {path}")


def _kernels_figure(outdir: str) -> None:
    rates = presets.kernels_rates()
    T = presets.KERNELS_T
    settings = SolverSettings.default(rates.gamma, T)
    grid = settings.grid
    kh = kappa_hat(grid.ages, rates.gamma)
    columns = {"a": grid.ages}
    for name, kernel in (("dirac", DelayKernel.dirac(T)),
                         ("exponential", DelayKernel.exponential(T))):
        with np.errstate(divide="ignore", invalid="ignore"):
            columns[f"backward_{name}"] = np.where(
                kh > 0, first_order_backward(rates, kernel, grid).curve.values / kh, 0.0)
            columns[f"forward_{name}"] = np.where(
                kh > 0, first_order_forward(rates, kernel, grid).curve.values / kh, 0.0)
    meta = {"beta": rates.beta, "alpha": rates.alpha, "sigma": rates.sigma,
            "p": rates.p, "T": T}
    path = os.path.join(outdir, "kernels.csv")
    _write_csv(path, meta, list(columns), zip(*columns.values()))
    print(f"wrote {path}")


def _sis_figure(outdir: str, seed: int) -> None:
    rates = presets.sis_rates()
    T = presets.SIS_DELAY_T
    det = integrate_sis(rates, T, presets.SIS_N, presets.SIS_HORIZON,
                        presets.SIS_TRACING_START, n_init=presets.SIS_N_INIT)
    sto = simulate_sis_finite(
        rates, DelayKernel.dirac(T), TraceConfig(direction="full", mode="one-step"),
        presets.SIS_N, seed, presets.SIS_HORIZON, presets.SIS_TRACING_START,
        n_init=presets.SIS_N_INIT)
    det_interp = np.interp(sto.times, det.times, det.values)
    meta = {"beta": rates.beta, "alpha": rates.alpha, "sigma": rates.sigma,
            "p": rates.p, "T": T, "N": presets.SIS_N, "seed": seed,
            "tracing_start": presets.SIS_TRACING_START}
    path = os.path.join(outdir, "sis.csv")
    rows = zip(sto.times, det_interp, sto.values / presets.SIS_N,
               (int(t >= presets.SIS_TRACING_START) for t in sto.times))
    _write_csv(path, meta, ["t", "i_deterministic", "i_stochastic", "tracing_active"], rows)
    print(f"wrote {path}")


def _sweep_grid(r0: float, p: float, p_obs: float, gamma: float,
                Ts: np.ndarray, Tis: np.ndarray):
    for T in Ts:
        for Ti in Tis:
            br = rct_latency(r0, p, p_obs, gamma, float(T), float(Ti))
            bracket = (br.backward_term + br.forward_term) / (0.5 * p_obs * r0)
            yield (float(T), float(Ti), bracket, br.rct)


def _sweep_figure(outdir: str) -> None:
    r0 = presets.SWEEP_R0
    Ts = _parse_range(":".join(map(str, presets.SWEEP_T)))
    Tis = _parse_range(":".join(map(str, presets.SWEEP_TI)))
    meta = {"r0": r0, "p": 0.3, "p_obs": 0.9, "gamma": 1.0}
    path = os.path.join(outdir, "sweep_rct_latency.csv")
    _write_csv(path, meta, ["T", "Ti", "bracket", "rct"],
               _sweep_grid(r0, 0.3, 0.9, 1.0, Ts, Tis))
    print(f"wrote {path}")


def _cmd_reproduce(args) -> int:
    os.makedirs(args.output_dir, exist_ok=True)
    fig = args.figure
    if fig in ("fig1", "fig2", "fig3"):
        direction = {"fig1": "backward", "fig2": "forward", "fig3": "full"}[fig]
        _curve_figure(direction, args.output_dir, args.seed, args.replicas)
    elif fig == "kernels":
        _kernels_figure(args.output_dir)
    elif fig == "sis":
        _sis_figure(args.output_dir, args.seed)
    elif fig == "sweep":
        _sweep_figure(args.output_dir)
    else:  # argparse choices already guard this
        raise ValidationError(f"unknown figure {fig!r}")
    return 0


# --------------------------------------------------------------------------
# sweep subcommand


def _cmd_sweep(args) -> int:
    if args.what != "rct-latency":
        raise ValidationError(f"unknown sweep {args.what!r}")
    Ts = _parse_range(args.T)
    Tis = _parse_range(args.Ti)
    meta = _meta_from(args, ["r0", "p", "p_obs", "gamma", "T", "Ti"])
    _write_csv(args.output, meta, ["T", "Ti", "bracket", "rct"],
               _sweep_grid(args.r0, args.p, args.p_obs, args.gamma, Ts, Tis))
    print(f"wrote {args.output}")
    return 0


# --------------------------------------------------------------------------
# sis subcommand


def _cmd_sis(args) -> int:
    rates = Rates(beta=args.beta, alpha=args.alpha, sigma=args.sigma, p=args.p)
    kernel = _parse_delay(args.delay)
    config = TraceConfig(direction="full", mode=args.mode)
    sto = simulate_sis_finite(rates, kernel, config, args.N, args.seed,
                              args.horizon, args.tracing_start,
                              sample_dt=args.sample_dt, n_init=args.n_init)
    det = integrate_sis(rates, kernel.mean, args.N, args.horizon,
                        args.tracing_start, n_init=args.n_init)
    det_interp = np.interp(sto.times, det.times, det.values)
    meta = _meta_from(args, ["beta", "alpha", "sigma", "p", "delay", "N",
                             "seed", "horizon", "tracing_start", "n_init"])
    if sto.extinct:
        meta["extinct"] = 1
    rows = zip(sto.times, det_interp, sto.values / args.N,
               (int(t >= args.tracing_start) for t in sto.times))
    _write_csv(args.output, meta,
               ["t", "i_deterministic", "i_stochastic", "tracing_active"], rows)
    print(f"wrote {args.output}")
    return 0


# --------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="delaytrace",
        description="Contact tracing with delay: solvers, simulators, sweeps.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    k = sub.add_parser("kappa", help="solve a tracing survival curve")
    k.add_argument("--config", help="flat key = value file supplying defaults")
    k.add_argument("--direction", choices=("backward", "forward", "full"),
                   default="full")
    k.add_argument("--mode", choices=("one-step", "recursive"), default="recursive")
    k.add_argument("--beta", type=float, required=True)
    k.add_argument("--alpha", type=float, required=True)
    k.add_argument("--sigma", type=float, required=True)
    k.add_argument("--p", type=float, default=0.0)
    k.add_argument("--delay", default="dirac:0.5", help="dirac:T or exp:T")
    k.add_argument("--generations", type=int, default=8)
    k.add_argument("--latency", type=float, default=0.0,
                   help="latency period Ti (0 disables)")
    k.add_argument("--grid-h", type=float, default=None)
    k.add_argument("--a-max", type=float, default=None)
    k.add_argument("--output", "-o", default="kappa.csv")
    k.set_defaults(func=_cmd_kappa)

    r = sub.add_parser("reproduce", help="run a pinned figure scenario")
    r.add_argument("figure", choices=("fig1", "fig2", "fig3", "kernels", "sis", "sweep"))
    r.add_argument("--config", help="flat key = value file supplying defaults")
    r.add_argument("--output-dir", "-o", default="figures")
    r.add_argument("--seed", type=int, default=20260823)
    r.add_argument("--replicas", type=int, default=20_000)
    r.set_defaults(func=_cmd_reproduce)

    s = sub.add_parser("sweep", help="parameter sweeps")
    s.add_argument("what", choices=("rct-latency",))
    s.add_argument("--config", help="flat key = value file supplying defaults")
    s.add_argument("--r0", type=float, default=2.0)
    s.add_argument("--p", type=float, default=0.3)
    s.add_argument("--p-obs", type=float, default=0.9)
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--T", default="0:3:0.05")
    s.add_argument("--Ti", default="0:3:0.05")
    s.add_argument("--output", "-o", default="sweep.csv")
    s.set_defaults(func=_cmd_sweep)

    z = sub.add_parser("sis", help="finite-population SIS with tracing")
    z.add_argument("--config", help="flat key = value file supplying defaults")
    z.add_argument("--beta", type=float, default=presets.SIS_BETA)
    z.add_argument("--alpha", type=float, default=presets.SIS_ALPHA)
    z.add_argument("--sigma", type=float, default=presets.SIS_SIGMA)
    z.add_argument("--p", type=float, default=presets.SIS_P)
    z.add_argument("--delay", default=f"dirac:{presets.SIS_DELAY_T}")
    z.add_argument("--mode", choices=("one-step", "recursive"), default="one-step")
    z.add_argument("--N", type=int, default=presets.SIS_N)
    z.add_argument("--n-init", type=int, default=presets.SIS_N_INIT)
    z.add_argument("--seed", type=int, default=20260823)
    z.add_argument("--horizon", type=float, default=presets.SIS_HORIZON)
    z.add_argument("--tracing-start", type=float, default=presets.SIS_TRACING_START)
    z.add_argument("--sample-dt", type=float, default=0.1)
    z.add_argument("--output", "-o", default="sis.csv")
    z.set_defaults(func=_cmd_sis)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # expand --config into flags placed right after the subcommand, so that
    # explicitly passed flags still win (argparse keeps the last occurrence)
    if "--config" in argv:
        idx = argv.index("--config")
        if idx + 1 >= len(argv):
            print("error: --config needs a path", file=sys.stderr)
            return 2
        path = argv[idx + 1]
        head, tail = argv[:idx], argv[idx + 2 :]
        try:
            flags = _load_config(path)
        except ValidationError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        n_pos = 2 if head and head[0] in ("reproduce", "sweep") else 1
        argv = head[:n_pos] + flags + head[n_pos:] + tail
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_thread_env()
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    except InsufficientSampleError as exc:
        print(f"insufficient sample: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
