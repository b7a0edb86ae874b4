"""Command-line runner: ``nlfrac <subcommand> --config run.yaml --out DIR``.

Exit codes: 0 success, 1 configuration error, 2 solver error (including a
recovery aborted over budget), 3 output error, 4 failed self-check.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, parse_config
from .dn_map import DNData, dn_derivative, dn_matrix
from .errors import NlfracError
from .fieldio import OutputError, write_field_csv, write_json, write_table_csv
from .linearization import (
    LinearizationState,
    aggregate_check,
    cascade_residuals,
    compute_cascade,
    fd_derivative,
    fit_slope,
    remainder_study,
)
from .multiindex import binary_indices
from .nonlinear_solver import check_smallness, solve_nlfse
from .recovery import Simulator, make_task, run_full_recovery
from .runge import lambda_sweep, runge_control
from .shapes import window_bumps

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO, EXIT_CHECK = 0, 1, 2, 3, 4


def _map(fn: Callable, items: Sequence, jobs: int) -> list:
    """Ordered map, threaded when jobs > 1 (FFT and LAPACK release the GIL)."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _tag(alpha) -> str:
    return "".join(str(int(a)) for a in alpha)


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


# subcommands ---------------------------------------------------------------


def cmd_forward(cfg: RunConfig, out: Path, args) -> int:
    g = cfg.grid()
    params = cfg.params()
    q = cfg.potential(g)
    P = cfg.nonlinearity(g, params)
    f = cfg.data(g)[0]
    ccfg = cfg.contraction()
    rep = solve_nlfse(g, q, P, f, ccfg)
    small = check_smallness(g, f, P, q, ccfg, seed=cfg.seed)
    write_field_csv(out / "solution.csv", g, rep.solution, cfg.text_hash)
    write_json(out / "solve_report.json", {
        "iterations": rep.iterations,
        "residual_norm": rep.residual_norm,
        "method": rep.method,
        "data_max_norm": float(np.max(np.abs(f))),
        "smallness": {
            "holds": small.holds,
            "data_small": small.data_small,
            "coefficient_sum": small.coefficient_sum,
            "operator_bound": small.operator_bound,
            "delta_star": small.delta_star,
        },
    }, cfg.text_hash)
    print(f"forward: {rep.iterations} iterations, residual {rep.residual_norm:.3e}")
    return EXIT_OK


def cmd_linearize(cfg: RunConfig, out: Path, args) -> int:
    g = cfg.grid()
    params = cfg.params()
    q = cfg.potential(g)
    P = cfg.nonlinearity(g, params)
    data = cfg.data(g)[: params.K]
    if len(data) < params.K:
        raise ConfigError(f"solver.data needs K={params.K} fields for linearize")
    state = compute_cascade(LinearizationState(g, q, P, data), params.K)
    steps = [float(h) for h in cfg.section("solver").get("fd_steps", [8e-3, 4e-3, 2e-3, 1e-3])]
    alphas = [a for a in binary_indices(params.K, params.K)]

    def check(alpha):
        w = state.w[alpha]
        errs = [float(np.max(np.abs(fd_derivative(alpha, data, h, g, q, P) - w))) for h in steps]
        scale = max(float(np.max(np.abs(w))), 1e-300)
        slope = fit_slope(steps, errs) if min(errs) > 0 else float("nan")
        return (_tag(alpha), slope, errs[-1] / scale)

    rows = _map(check, alphas, args.jobs)
    for alpha in alphas:
        write_field_csv(out / f"w_{_tag(alpha)}.csv", g, state.w[alpha], cfg.text_hash, {"alpha": _tag(alpha)})
    write_table_csv(out / "fd_check.csv", ["alpha", "fd_order", "terminal_rel_err"], rows, cfg.text_hash,
                    {"fd_steps": " ".join(format(h, ".17g") for h in steps)})
    res = cascade_residuals(state)
    write_json(out / "linearize.json", {
        "cascade_residuals": {_tag(a): v for a, v in sorted(res.items())},
        "fd_check": [{"alpha": r[0], "fd_order": r[1], "terminal_rel_err": r[2]} for r in rows],
    }, cfg.text_hash)
    print(f"linearize: {len(alphas)} indices, max cascade residual {max(res.values()):.3e}")
    return EXIT_OK


def cmd_remainder(cfg: RunConfig, out: Path, args) -> int:
    g = cfg.grid()
    params = cfg.params()
    q = cfg.potential(g)
    P = cfg.nonlinearity(g, params)
    data = cfg.data(g)[: params.K]
    if len(data) < params.K:
        raise ConfigError(f"solver.data needs K={params.K} fields for remainder")
    scales = [float(t) for t in cfg.section("solver").get("eps_sweep")]
    state = LinearizationState(g, q, P, data)
    study = remainder_study(state, [np.full(params.K, t) for t in scales])
    rows = [(t, dn, rn, study.slope) for t, (dn, rn) in zip(scales, study.rows)]
    write_table_csv(out / "remainder.csv", ["eps_scale", "data_norm", "remainder_norm", "slope"], rows,
                    cfg.text_hash, {"K": params.K})
    agg = aggregate_check(state, np.ones(params.K))
    write_json(out / "remainder.json", {
        "K": params.K,
        "slope": study.slope,
        "rows": study.rows,
        "max_residual": max(study.residuals),
        "T_k_mismatch": agg.max_T_mismatch,
        "V_slopes": agg.V_slopes,
        "U_slopes": agg.U_slopes,
    }, cfg.text_hash)
    print(f"remainder: slope {study.slope:.4f} (K={params.K})")
    return EXIT_OK


def cmd_synthesize_dn(cfg: RunConfig, out: Path, args) -> int:
    g = cfg.grid()
    params = cfg.params()
    q = cfg.potential(g)
    P = cfg.nonlinearity(g, params)
    n_in, n_out = (int(v) for v in cfg.section("solver").get("dn_basis", [6, 6]))
    amp = float(cfg.section("solver").get("dn_amplitude", 0.05))
    basis_in = [amp * b for b in window_bumps(g, g.w1_mask, n_in)]
    basis_out = window_bumps(g, g.w2_mask, n_out)
    ccfg = cfg.contraction()
    rows = _map(lambda f: dn_matrix(g, q, P, [f], basis_out, ccfg).pairings[0], basis_in, args.jobs)
    dn = DNData(basis_in, basis_out, np.array(rows),
                descriptors={"w1_count": n_in, "w2_count": n_out, "input_amplitude": amp, "s": params.s})
    data = cfg.data(g)[: params.K]
    alpha = (1,) * len(data)
    eps = float(cfg.section("solver").get("dn_eps_step", 1e-3))
    deriv = dn_derivative(alpha, data, basis_out, eps, g, q, P, ccfg)
    dn.deriv_pairings = {f"alpha={_tag(alpha)};g={j}": float(v) for j, v in enumerate(deriv)}
    table = [(i, j, float(dn.pairings[i, j])) for i in range(n_in) for j in range(n_out)]
    write_table_csv(out / "dn_matrix.csv", ["i", "j", "pairing"], table, cfg.text_hash)
    write_json(out / "dn_data.json", {"dn": json.loads(dn.to_json())}, cfg.text_hash)
    print(f"synthesize-dn: {n_in}x{n_out} pairings")
    return EXIT_OK


def cmd_runge_sweep(cfg: RunConfig, out: Path, args) -> int:
    g = cfg.grid()
    params = cfg.params()
    q = cfg.potential(g)
    r = cfg.section("runge")
    window = {"w1": g.w1_mask, "w2": g.w2_mask}.get(r.get("window", "w1"))
    if window is None:
        raise ConfigError("runge.window must be 'w1' or 'w2'")
    target = cfg.field(g, r["target"])
    lams = [float(v) for v in r.get("lambda_grid")]
    kw = dict(cg_tol=float(r.get("cg_tol", 1e-10)), cg_max=int(r.get("cg_max", 20000)),
              penalty=r.get("penalty", "l2"))
    rows = lambda_sweep(g, target, window, q, params.s, lams, **kw)
    best = min(rows, key=lambda row: row[1])
    res = runge_control(g, target, window, q, params.s, best[0], **kw)
    write_table_csv(out / "runge_sweep.csv", ["lambda", "achieved_err", "control_l2"], rows, cfg.text_hash)
    write_field_csv(out / "control.csv", g, res.f, cfg.text_hash, {"lambda": format(best[0], ".17g")})
    write_json(out / "runge.json", {"best_lambda": best[0], "achieved_err": res.achieved_err,
                                     "iterations": res.iterations, "normal_residual": res.normal_residual},
               cfg.text_hash)
    print(f"runge-sweep: best lambda {best[0]:.1e}, achieved_err {res.achieved_err:.3e}")
    return EXIT_OK


def cmd_recover(cfg: RunConfig, out: Path, args) -> int:
    g = cfg.grid()
    params = cfg.params()
    mode = args.mode or cfg.section("recovery").get("mode", "oracle")
    sim = Simulator(g, cfg.potential(g), cfg.nonlinearity(g, params))
    task = make_task(g, sim, mode, cfg.recovery())
    rep = run_full_recovery(task)
    write_json(out / "recovery.json", {"report": json.loads(rep.to_json())}, cfg.text_hash)
    write_table_csv(out / "errors.csv", ["coefficient", "rel_l2_error", "budget"], rep.error_rows(),
                    cfg.text_hash, {"mode": mode})
    write_field_csv(out / "q_hat.csv", g, rep.q_hat, cfg.text_hash)
    for (k, sigma), a in sorted(rep.a_hat.items()):
        write_field_csv(out / f"a_{k}_{_tag(sigma)}.csv", g, a, cfg.text_hash)
    for key, err, bud in rep.error_rows():
        print(f"recover[{mode}]: {key} rel_err {err:.3e} budget {bud:.3e}")
    if rep.aborted:
        print(f"recover: aborted: {rep.aborted}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_selfcheck(cfg: RunConfig, out: Path, args) -> int:
    from .selfcheck import run_selfcheck

    results = run_selfcheck(seed=cfg.seed)
    rows = [(name, "pass" if ok else "fail", value) for name, ok, value in results]
    for name, status, value in rows:
        print(f"selfcheck {status}: {name} ({value:.3e})")
    write_table_csv(out / "selfcheck.csv", ["check", "status", "value"], rows, cfg.text_hash)
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_CHECK


COMMANDS = {
    "forward": cmd_forward,
    "linearize": cmd_linearize,
    "remainder": cmd_remainder,
    "synthesize-dn": cmd_synthesize_dn,
    "runge-sweep": cmd_runge_sweep,
    "recover": cmd_recover,
    "selfcheck": cmd_selfcheck,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nlfrac", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, default=None, help="YAML config (selfcheck: optional)")
        sp.add_argument("--out", type=Path, default=None, help="output directory (overrides output.dir)")
        sp.add_argument("--jobs", type=int, default=1, help="maximum worker threads")
        sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        if name == "recover":
            sp.add_argument("--mode", choices=("oracle", "exterior"), default=None)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.config is None:
            if args.command != "selfcheck":
                raise ConfigError("--config is required")
            cfg = parse_config("seed: 0\n")
        else:
            cfg = load_config(args.config)
        cfg = cfg.with_seed(args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or Path(cfg.section("output").get("dir", "out"))
    if args.config is not None and not out.is_absolute() and args.out is None:
        out = cfg.base_dir / out
    old = warnings.showwarning
    warnings.showwarning = _show_warning
    try:
        return COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OutputError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NlfracError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    finally:
        warnings.showwarning = old


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
