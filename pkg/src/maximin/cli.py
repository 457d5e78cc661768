"""Command line entry point: ``maximin {calibrate,pde-check,simulate,saddle}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .calibration import calibrate_lambda
from .config import Experiment, parse_config
from .errors import MaximinError
from .market_model import cumulative_r
from .pde_engine import FdGrid, h_fd_solve, h_quadrature
from .report import _fmt, csv_text, emit_report, write_csv
from .saddle import run_saddle
from .simulator import (
    estimate_value,
    replication_error,
    simulate_paths,
    wealth_price,
)
from .strategy_engine import (
    Myopic,
    PdeOptimal,
    Trivial,
    build_maximin_strategy,
    build_point_strategy,
    myopic_parameters,
    r_min_of_class,
)
from .utility_dual import eval_utility

log = logging.getLogger("maximin")


def _load(args) -> Experiment:
    exp = parse_config(args.config)
    if args.seed is not None:
        exp.sim = dataclasses.replace(exp.sim, seed=args.seed)
    if args.out is not None:
        exp.out_dir = Path(args.out)
    return exp


def _strategy(exp: Experiment):
    kind = exp.strategy["kind"]
    if kind == "trivial":
        return Trivial()
    if kind == "myopic":
        return Myopic(*myopic_parameters(exp.utility))
    if kind == "point":
        return build_point_strategy(exp.cls, exp.strategy["point"], exp.utility, exp.x0)
    return build_maximin_strategy(exp.cls, exp.utility, exp.x0)


def cmd_calibrate(args) -> int:
    exp = _load(args)
    header = ["point", "R", "lambda_hat", "achieved_price", "bracket_lo", "bracket_hi", "iterations"]
    rows = []
    for i, p in enumerate(exp.cls.points):
        R = cumulative_r(exp.cls, i)
        if R <= 0.0:
            rows.append([p.label, _fmt(R), "", "", "", "", "0"])
            continue
        res = calibrate_lambda(exp.utility, R, exp.x0, exp.cls.T)
        rows.append([p.label, _fmt(R), _fmt(res.lambda_hat), _fmt(res.achieved_price),
                     _fmt(res.bracket[0]), _fmt(res.bracket[1]), str(res.iterations)])
    text = csv_text(rows, header)
    sys.stdout.write(text)
    if args.out is not None:
        exp.out_dir.mkdir(parents=True, exist_ok=True)
        write_csv(exp.out_dir / "calibration.csv", rows, header)
    return 0


def cmd_pde_check(args) -> int:
    exp = _load(args)
    st = _strategy(exp)
    if not isinstance(st, PdeOptimal):
        R_min, _ = r_min_of_class(exp.cls)
        print(f"strategy is trivial (R_min={R_min}); nothing to check", file=sys.stderr)
        return 0
    sol = st.hsol
    grid = h_fd_solve(sol, FdGrid.centered(1.0, sol.R, args.n_space, args.n_time))
    mid = grid.middle_half()
    x = grid.x[mid]
    times = grid.times(sol.T)
    rows, worst = [], 0.0
    for k in (0, grid.n_time // 2):
        t = float(times[k])
        hq = np.asarray(h_quadrature(sol, x, t))
        hf = grid.values[k][mid]
        err = np.abs(hq - hf)
        worst = max(worst, float(np.max(err / (1.0 + np.abs(hq)))))
        rows += [[_fmt(a), _fmt(t), _fmt(b), _fmt(c), _fmt(d)] for a, b, c, d in zip(x, hq, hf, err)]
    exp.out_dir.mkdir(parents=True, exist_ok=True)
    path = exp.out_dir / "pde_check.csv"
    write_csv(path, rows, ["x", "t", "H_quad", "H_fd", "abs_err"])
    print(f"R={_fmt(sol.R)} lambda={_fmt(sol.lam)} max |err|/(1+|H|)={worst:.3e} -> {path}")
    return 0


def cmd_simulate(args) -> int:
    exp = _load(args)
    st = _strategy(exp)
    terminal, summary = [], []
    for j, p in enumerate(exp.cls.points):
        res = simulate_paths(exp.cls, j, st, exp.utility, exp.x0, exp.sim)
        est = estimate_value(res, exp.utility)
        price, price_se = wealth_price(res)
        rep = replication_error(res, st.hsol.claim) if isinstance(st, PdeOptimal) else float("nan")
        U = np.asarray(eval_utility(exp.utility, res.X_T), dtype=float)
        terminal += [[p.label, str(i), _fmt(a), _fmt(b), _fmt(c)]
                     for i, (a, b, c) in enumerate(zip(res.X_T, res.Z_T, U))]
        summary.append([p.label, _fmt(cumulative_r(exp.cls, j)), _fmt(est.mean), _fmt(est.stderr),
                        str(est.n_violations), _fmt(price), _fmt(price_se), _fmt(rep)])
    exp.out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(exp.out_dir / "terminal.csv", terminal, ["point", "path", "X_T", "Z_T", "U"])
    header = ["point", "R", "mean_U", "stderr", "violations", "price", "price_stderr",
              "replication_rms"]
    write_csv(exp.out_dir / "simulation_summary.csv", summary, header)
    sys.stdout.write(csv_text(summary, header))
    return 0


def cmd_saddle(args) -> int:
    exp = _load(args)
    report = run_saddle(exp.cls, exp.utility, exp.x0, exp.sim)
    files = emit_report(report, exp.out_dir)
    print(f"R_min={_fmt(report.R_min)} sup_inf={_fmt(report.sup_inf)} "
          f"inf_sup={_fmt(report.inf_sup)} gap={_fmt(report.gap)}+-{_fmt(report.gap_stderr)}")
    for k in sorted(report.checks):
        print(f"  {k}: {'pass' if report.checks[k] else 'FAIL'}")
    for f in files:
        print(f"  wrote {f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="maximin",
                                 description="Worst-case optimal strategies over finite parameter classes.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment JSON file")
        p.add_argument("--seed", type=int, default=None, help="override sim.seed")
        p.add_argument("--out", default=None, help="override output.dir")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("calibrate", help="lambda_hat per class point")
    common(p)
    p.set_defaults(func=cmd_calibrate)
    p = sub.add_parser("pde-check", help="quadrature vs finite differences")
    common(p)
    p.add_argument("--n-space", type=int, default=801)
    p.add_argument("--n-time", type=int, default=400)
    p.set_defaults(func=cmd_pde_check)
    p = sub.add_parser("simulate", help="simulate the configured strategy at every point")
    common(p)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("saddle", help="payoff matrix and duality gap")
    common(p)
    p.set_defaults(func=cmd_saddle)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MaximinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
