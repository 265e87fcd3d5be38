"""Command-line entry point: ``vrstream <command> ...``.

Exit status: 0 success, 1 usage or validation error, 2 infeasible problem,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bundle import csv_text, header_fields, keyvalue_text, read_solution, solution_files, write_files_atomic
from .config import ConfigError, RunConfig, describe_schema, load_config
from .optimizer import (
    OptimizationProblem,
    Solution,
    expected_distortion,
    is_feasible,
    stream_loads,
    sweep_stream_count,
    storage_rate,
    transmission_rate,
)
from .ratedist import RateModelError, fit_rate_model, lloyd_max_two_level, read_rd_samples, stream_rates
from .simulator import load_trace_csv, psnr, sample_trace, simulate_session, static_baseline
from .viewmodel import ConvergenceError, ModelError

log = logging.getLogger("vrstream")

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NUMERIC = 0, 1, 2, 3


def expected_psnr(problem: OptimizationProblem, sol: Solution) -> float:
    return psnr(problem.per_frame(sol.expected_distortion))


def two_qp_summary(problem: OptimizationProblem, sol: Solution) -> dict:
    """Snap every stream to two Lloyd-Max levels and re-evaluate it."""
    rm = problem.rate_model
    A, _ = stream_loads(problem, sol.mapping, sol.num_streams)
    quantized = sol.streams.copy()
    out = {}
    for i in range(sol.num_streams):
        if not np.any(sol.streams[i] < rm.d_max):
            out[f"two_qp_levels_{i + 1}"] = "unencoded"
            continue
        tq = lloyd_max_two_level(sol.streams[i], A[i], rm.d_max)
        quantized[i] = tq.apply(sol.streams[i], rm.d_max)
        out[f"two_qp_levels_{i + 1}"] = f"{tq.levels[0]!r};{tq.levels[1]!r}"
    D = expected_distortion(problem, quantized, sol.mapping)
    out["two_qp_expected_psnr"] = psnr(problem.per_frame(D))
    out["two_qp_storage_rate"] = storage_rate(problem, quantized)
    out["two_qp_transmission_rate"] = transmission_rate(problem, quantized, sol.mapping)
    return out


def solve(cfg: RunConfig, problem: OptimizationProblem):
    if cfg["scheme"] == "static":
        return static_baseline(problem), None
    res = sweep_stream_count(problem, cfg["max_streams"], cfg.constraint_tol, cfg.alternate_tol, cfg.max_iters)
    return res.best, res


def sweep_rows(problem, res, frac):
    for n, s in res.table:
        yield [
            n, int(is_feasible(problem, s, frac) and not s.infeasible), s.num_streams,
            s.expected_distortion, expected_psnr(problem, s), s.storage_rate, s.transmission_rate,
            s.multipliers.lam, s.multipliers.mu, s.note,
        ]


def binding_constraint(problem: OptimizationProblem, sol: Solution) -> str:
    if sol.note.startswith("infeasible:"):
        return sol.note.split(":", 1)[1]
    if sol.storage_rate > problem.storage_budget:
        return "storage"
    return "transmission"


# -- commands -----------------------------------------------------------------

def cmd_fit_rd(args) -> int:
    samples = read_rd_samples(args.samples)
    fit = fit_rate_model(samples, args.d_max, args.rate_floor)
    m = fit.model
    write_files_atomic(
        Path(args.out).parent,
        {Path(args.out).name: keyvalue_text({
            "sigma": m.sigma, "d_max": m.d_max, "amplitude": m.amplitude,
            "fit_residual": fit.residual, "samples_used": fit.used,
        })},
    )
    print(f"sigma={m.sigma:.6g} d_max={m.d_max:.6g} amplitude={m.amplitude:.6g} "
          f"residual={fit.residual:.3g} ({fit.used} samples)")
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = load_config(args.config, args.set)
    problem = cfg.problem()
    sol, res = solve(cfg, problem)
    frac = cfg.constraint_tol
    if res is not None:
        print(f"{'|S|':>4} {'feasible':>8} {'E[PSNR]':>9} {'storage':>10} {'transmit':>10}")
        for row in sweep_rows(problem, res, frac):
            print(f"{row[0]:>4} {row[1]:>8} {row[4]:>9.3f} {row[5]:>10.4f} {row[6]:>10.4f}")
    if sol.infeasible or not is_feasible(problem, sol, frac):
        print(f"infeasible: {binding_constraint(problem, sol)} budget too small", file=sys.stderr)
        return EXIT_INFEASIBLE

    amp = problem.rate_model.amplitude
    rates = stream_rates(problem.rate_model, sol.streams)
    summary = {
        "scheme": cfg["scheme"],
        "expected_psnr": expected_psnr(problem, sol),
        "storage_budget": problem.storage_budget,
        "transmission_budget": problem.C,
        "rate_amplitude": amp,
        "peak_stream_rate": float(rates.max()),
        "peak_rate_over_budget": int(rates.max() > problem.C * (1 + frac)),
    }
    summary.update(two_qp_summary(problem, sol))
    rows = list(sweep_rows(problem, res, frac)) if res is not None else None
    out = cfg.output_dir / "solution"
    write_files_atomic(out, solution_files(sol, summary, cfg.digest, rows))
    print(f"chosen |S|={sol.num_streams} objective={sol.lagrangian:.6g} "
          f"E[D]={sol.expected_distortion:.6g} E[PSNR]={summary['expected_psnr']:.3f} dB "
          f"storage={sol.storage_rate:.6g}/{problem.storage_budget:.6g} "
          f"transmission={sol.transmission_rate:.6g}/{problem.C:.6g}")
    if summary["peak_rate_over_budget"]:
        log.warning("a single stream exceeds the transmission budget (expected-rate constraint only)")
    print(f"wrote {out}")
    return EXIT_OK


def _trace_for(cfg: RunConfig, problem: OptimizationProblem, trace_path):
    if trace_path:
        return load_trace_csv(trace_path, problem.K)
    return sample_trace(problem.model, cfg["duration_frames"], cfg["seed"], problem.q)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, args.set)
    problem = cfg.problem()
    bundle = Path(args.solution) if args.solution else cfg.output_dir / "solution"
    sol, meta = read_solution(bundle)
    if sol.streams.shape[1] != problem.K:
        raise ConfigError(f"solution has K={sol.streams.shape[1]}, config K={problem.K}")
    trace = _trace_for(cfg, problem, args.trace)
    rep = simulate_session(sol, trace, cfg.session(), problem.rate_model, problem.space.a)

    n = cfg["duration_frames"]
    frames = csv_text(
        ["frame", "angle", "stream", "distortion"],
        zip(range(n), (trace.angles[:n] + 1).tolist(), (rep.served + 1).tolist(), rep.per_frame_distortion.tolist()),
    )
    summary = header_fields("session", cfg.digest)
    summary["solution_config_hash"] = meta.get("config_hash", "")
    summary["mean_psnr_expected"] = expected_psnr(problem, sol)
    summary.update(rep.summary())
    write_files_atomic(cfg.output_dir, {"session.csv": frames, "session_summary.txt": keyvalue_text(summary)})
    print(f"frames={n} mean PSNR (trace)={rep.mean_psnr:.3f} dB "
          f"(expected {summary['mean_psnr_expected']:.3f} dB) switches={rep.switch_count}")
    return EXIT_OK


def cmd_sample_trace(args) -> int:
    cfg = load_config(args.config, args.set)
    problem = cfg.problem()
    length = args.length or cfg["duration_frames"]
    trace = sample_trace(problem.model, length, cfg["seed"], problem.q)
    out = Path(args.out) if args.out else cfg.output_dir / "trace.csv"
    write_files_atomic(out.parent, {out.name: "".join(f"{int(k) + 1}\n" for k in trace.angles)})
    print(f"wrote {length} angles to {out}")
    return EXIT_OK


def compare_table(cfg: RunConfig, grid: list[float], simulate: bool = True):
    """Rows of (B, adaptive PSNR, static PSNR, chosen |S|, trace PSNRs)."""
    base = cfg.problem()
    static = static_baseline(base)
    trace = sample_trace(base.model, cfg["duration_frames"], cfg["seed"], base.q) if simulate else None
    session = cfg.session()

    def trace_psnr(sol):
        if trace is None:
            return float("nan")
        return simulate_session(sol, trace, session, base.rate_model, base.space.a).mean_psnr

    static_trace = trace_psnr(static)
    amp = base.rate_model.amplitude
    rows = []
    for B in grid:
        problem = base.with_budgets(B=B / amp)
        res = sweep_stream_count(problem, cfg["max_streams"], cfg.constraint_tol, cfg.alternate_tol, cfg.max_iters)
        best = res.best
        feasible = not best.infeasible and is_feasible(problem, best, cfg.constraint_tol)
        rows.append([
            B,
            expected_psnr(problem, best) if feasible else float("nan"),
            expected_psnr(problem, static_baseline(problem)),
            best.num_streams if feasible else 0,
            trace_psnr(best) if feasible else float("nan"),
            static_trace,
        ])
    return rows


def cmd_compare(args) -> int:
    cfg = load_config(args.config, args.set)
    grid = [float(x) for x in args.storage_grid.split(",")] if args.storage_grid else cfg["storage_grid"]
    if len(grid) < 2:
        raise ConfigError("compare needs a storage grid of at least 2 budgets")
    rows = compare_table(cfg, grid, simulate=not args.no_simulate)
    header = ["storage", "psnr_adaptive", "psnr_static", "chosen_streams",
              "psnr_adaptive_trace", "psnr_static_trace"]
    text = "".join(f"# {k}={v}\n" for k, v in header_fields("compare", cfg.digest).items())
    text += csv_text(header, rows)
    write_files_atomic(cfg.output_dir, {"compare.csv": text})
    print(f"{'storage':>12} {'adaptive':>9} {'static':>9} {'|S|':>4}")
    for r in rows:
        print(f"{r[0]:>12.6g} {r[1]:>9.3f} {r[2]:>9.3f} {r[3]:>4}")
    if any(r[3] == 0 for r in rows):
        print("some storage budgets are infeasible", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="vrstream",
        description="Multi-stream 360 video stream design and RTT-delayed session simulation.",
        epilog="config keys:\n" + describe_schema(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("config", help="YAML run configuration")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
        return sp

    sp = sub.add_parser("fit-rd", help="fit the clipped-Laplacian rate model to RD samples")
    sp.add_argument("samples")
    sp.add_argument("out")
    sp.add_argument("--d-max", type=float, default=46.0, help="used when no sample clips")
    sp.add_argument("--rate-floor", type=float, default=1e-9)
    sp.set_defaults(func=cmd_fit_rd)

    sp = with_config(sub.add_parser("optimize", help="sweep stream counts and write the best solution"))
    sp.set_defaults(func=cmd_optimize)

    sp = with_config(sub.add_parser("simulate", help="simulate a session for a solution bundle"))
    sp.add_argument("--solution", help="bundle directory (default <output_dir>/solution)")
    sp.add_argument("--trace", help="head trace CSV, one 1-based angle per line")
    sp.set_defaults(func=cmd_simulate)

    sp = with_config(sub.add_parser("compare", help="adaptive vs static PSNR over a storage grid"))
    sp.add_argument("--storage-grid", help="comma-separated storage budgets B")
    sp.add_argument("--no-simulate", action="store_true", help="skip the trace-averaged columns")
    sp.set_defaults(func=cmd_compare)

    sp = with_config(sub.add_parser("sample-trace", help="sample a head trace from the view model"))
    sp.add_argument("--length", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_sample_trace)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ModelError, RateModelError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
