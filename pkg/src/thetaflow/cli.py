"""Command-line entry point: ``thetaflow <subcommand> ...``.

Exit codes: 0 success, 1 configuration or invariant error, 2 numerical blowup.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from thetaflow.config import RunConfig, dump_config, parse_config
from thetaflow.errors import ThetaflowError
from thetaflow.evolve import checkpoint_load, checkpoint_save, run
from thetaflow.initial import make_initial
from thetaflow.ledger import (
    CSV_VERSION,
    Ledger,
    block_decay_check,
    coercivity_check,
    continuity_inequality_check,
    dense_eigenvalues,
    estimate_terms,
    high_freq_damping_check,
    lin_eigenvalues,
    residual_summary,
    theorem_norm,
    write_blocks_csv,
    write_constants_csv,
    write_energy_csv,
    write_rates_csv,
)
from thetaflow.littlewood_paley import besov_norm, build_filter_bank

EXIT_OK, EXIT_ERROR, EXIT_BLOWUP = 0, 1, 2


@dataclass
class RunOutcome:
    E0: float
    E_max: float
    C: float
    reason: str
    exit_code: int


def execute_run(cfg: RunConfig, outdir: Path) -> RunOutcome:
    """Run + ledger for one configuration, writing all CSVs and the final checkpoint."""
    outdir.mkdir(parents=True, exist_ok=True)
    grid, params = cfg.grid(), cfg.params()
    bank = build_filter_bank(grid, cfg.j0)
    initial = make_initial(cfg)
    ledger = Ledger(bank, params, source_stride=1, residual_stride=cfg.residual_stride)
    result = run(initial, cfg.integrator(), params, callback=ledger, pair_callback=ledger.pair)
    records = ledger.records()
    blowup = not result.completed
    cont = continuity_inequality_check(records, blowup=blowup)
    write_energy_csv(outdir / "energy.csv", records)
    write_blocks_csv(outdir / "blocks.csv", ledger)
    damping = high_freq_damping_check(ledger, initial, amplitude=cfg.c0)
    write_rates_csv(outdir / "rates.csv", damping)
    tag = f"n={grid.n},N={grid.N},L={grid.L!r}"
    rows = [("continuity_C", cont.C, tag), ("E0", cont.E0, tag), ("E_max", cont.E_max, tag)]
    if len(ledger.times) >= 3:
        fit = block_decay_check(ledger)
        rows.append(("block_decay_c_min", fit.c_min, tag))
        coer = coercivity_check(ledger)
        rows += [("coercivity_min", coer.ratio_min, tag), ("coercivity_max", coer.ratio_max, tag)]
    terms = estimate_terms(result.state, bank, params)
    rows += [(f"product_{k[6:]}", terms[k], tag) for k in sorted(terms) if k.startswith("ratio_")]
    rows += [(f"residual_{k}", v, tag) for k, v in residual_summary(ledger).items()]
    write_constants_csv(outdir / "constants.csv", rows)
    checkpoint_save(result.state, result.t, outdir / "final.thfl")
    code = EXIT_BLOWUP if blowup else EXIT_OK
    return RunOutcome(cont.E0, cont.E_max, cont.C, result.reason, code)


# -- subcommands ---------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    out = Path(args.output or cfg.output)
    outcome = execute_run(cfg, out)
    print(f"{outcome.reason}: E0={outcome.E0:.6g} max E={outcome.E_max:.6g} C={outcome.C:.6g} -> {out}")
    return outcome.exit_code


def cmd_linear(args) -> int:
    cfg = parse_config(args.config)
    params, grid = cfg.params(), cfg.grid()
    out = Path(args.output or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    worst = 0.0
    rows = []
    for r in grid.moduli():
        eig = lin_eigenvalues(float(r), params)
        dense = dense_eigenvalues(float(r), params)
        closed = np.array([0.0, eig.slow, eig.fast])
        closed = closed[np.argsort(-closed.real, kind="stable")]
        worst = max(worst, float(np.max(np.abs(np.sort_complex(closed) - np.sort_complex(dense)))))
        rows.append([float(r), eig.slow.real, eig.slow.imag, eig.fast.real, eig.fast.imag, *eig.kernel])
    with open(out / "dispersion.csv", "w", newline="") as fh:
        fh.write(f"# thetaflow dispersion v{CSV_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(["r", "re_slow", "im_slow", "re_fast", "im_fast", "kernel_a", "kernel_b", "kernel_v"])
        for row in rows:
            w.writerow([repr(float(x)) for x in row])
    ok = worst <= 1e-10 * max(1.0, float(grid.moduli()[-1]) ** 2 * params.nu_q)
    print(f"{'PASS' if ok else 'FAIL'} closed form vs dense eigensolver: max deviation {worst:.3e} "
          f"over {len(rows)} moduli")
    return EXIT_OK if ok else EXIT_ERROR


def cmd_check(args) -> int:
    from thetaflow import checks

    cfg = parse_config(args.config)
    results = checks.run_suites(cfg, corrupt_bank=args.corrupt_bank, trials=args.trials)
    failed = 0
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed += not ok
    return EXIT_OK if failed == 0 else EXIT_ERROR


def parse_grid_spec(spec: str) -> list[dict]:
    """``"c0=1e-3,1e-2;gamma=1.1,1.4"`` -> cartesian product of overrides."""
    axes = []
    for part in filter(None, (p.strip() for p in spec.split(";"))):
        if "=" not in part:
            raise ThetaflowError(f"bad sweep axis {part!r}; expected key=v1,v2,...")
        key, values = part.split("=", 1)
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not vals:
            raise ThetaflowError(f"sweep axis {key!r} has no values")
        axes.append([(key.strip(), v) for v in vals])
    return [dict(combo) for combo in itertools.product(*axes)] if axes else [{}]


def _sweep_cell(args):
    text, name, outdir = args
    from thetaflow.config import parse_config_text

    try:
        cfg = parse_config_text(text, name)
        o = execute_run(cfg, Path(outdir))
        return name, o.E0, o.E_max, o.C, o.reason, o.exit_code
    except ThetaflowError as exc:
        return name, np.nan, np.nan, np.nan, f"error: {exc}", EXIT_ERROR


def cmd_sweep(args) -> int:
    cfg = parse_config(args.config)
    base = Path(args.output or cfg.output)
    cells = parse_grid_spec(args.grid)
    jobs = []
    base_text = Path(args.config).read_text()
    for i, overrides in enumerate(cells):
        label = "_".join(f"{k}={v}" for k, v in overrides.items()) or "base"
        name = f"cell{i:03d}_{label}"
        lines = [base_text] + [f"{k} = {v}" for k, v in overrides.items()]
        text = _merge(base_text, overrides) if overrides else "\n".join(lines)
        jobs.append((text, name, str(base / name)))
    workers = int(os.environ.get("THETAFLOW_THREADS", os.cpu_count() or 1))
    workers = max(1, min(workers, len(jobs)))
    if workers == 1:
        results = [_sweep_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell, jobs))
    base.mkdir(parents=True, exist_ok=True)
    with open(base / "summary.csv", "w", newline="") as fh:
        fh.write(f"# thetaflow summary v{CSV_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(["cell", "E0", "max_E", "fitted_C", "exit_reason"])
        for name, E0, Em, C, reason, _ in results:
            w.writerow([name, repr(float(E0)), repr(float(Em)), repr(float(C)), reason])
    codes = [r[-1] for r in results]
    print(f"{len(results)} cells -> {base / 'summary.csv'}")
    return max(codes) if codes else EXIT_OK


def _merge(text: str, overrides: dict) -> str:
    """Drop lines that set an overridden key, then append the overrides."""
    keep = []
    for line in text.splitlines():
        key = line.split("#", 1)[0].split("=", 1)[0].strip()
        if key in overrides:
            continue
        keep.append(line)
    keep += [f"{k} = {v}" for k, v in overrides.items()]
    return "\n".join(keep) + "\n"


def cmd_norms(args) -> int:
    state, t = checkpoint_load(args.checkpoint)
    bank = build_filter_bank(state.grid, args.j0)
    s = args.s if args.s is not None else state.grid.n / 2
    print(f"t = {t!r}  grid = {state.grid}")
    for name, field in (("a", state.a), ("u", state.u), ("b", state.b)):
        print(f"||{name}||_B^{s:g}_(2,1) = {besov_norm(bank, field, s):.10e}")
    print(f"theorem norm (j0={args.j0}) = {theorem_norm(bank, state):.10e}")
    return EXIT_OK


def cmd_dump_config(args) -> int:
    sys.stdout.write(dump_config(parse_config(args.config)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thetaflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate and write the energy ledger")
    r.add_argument("config")
    r.add_argument("--output", help="output directory (overrides the config)")
    r.set_defaults(func=cmd_run)

    lin = sub.add_parser("linear", help="dispersion relation of the linearized system")
    lin.add_argument("config")
    lin.add_argument("--output")
    lin.set_defaults(func=cmd_linear)

    c = sub.add_parser("check", help="invariant, oracle and residual suites")
    c.add_argument("config")
    c.add_argument("--trials", type=int, default=20)
    c.add_argument("--corrupt-bank", action="store_true", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("sweep", help="run a parameter grid concurrently")
    s.add_argument("config")
    s.add_argument("--grid", required=True, help='e.g. "c0=1e-3,1e-2;gamma=1.1,1.4"')
    s.add_argument("--output")
    s.set_defaults(func=cmd_sweep)

    n = sub.add_parser("norms", help="Besov norms of a checkpoint")
    n.add_argument("checkpoint")
    n.add_argument("--s", type=float, default=None)
    n.add_argument("--j0", type=int, default=1)
    n.set_defaults(func=cmd_norms)

    d = sub.add_parser("dump-config", help="print the canonical form of a config")
    d.add_argument("config")
    d.set_defaults(func=cmd_dump_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ThetaflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
