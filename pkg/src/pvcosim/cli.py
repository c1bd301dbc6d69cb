"""Command-line interface: run sweeps, compare models, manage scenarios."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .coupler import attach, run_step
from .driver import RunConfig, compare_sweep, emit, run, validate_config
from .feeder import load_feeder_file
from .network import load_network_file
from .scenarios import generate, load_profile_file, save_scenarios
from .unified import compare, solve_unified


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig.bundled()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if getattr(args, "levels", None):
        cfg = replace(cfg, levels=tuple(int(x) for x in args.levels.split(",")))
    if getattr(args, "scenarios", None) is not None:
        cfg = replace(cfg, n_scenarios=args.scenarios)
    if getattr(args, "hours", None):
        cfg = replace(cfg, hours=tuple(int(x) for x in args.hours.split(",")))
    if getattr(args, "mode", None):
        cfg = replace(cfg, mode=args.mode)
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=args.out)
    if getattr(args, "jobs", None) is not None:
        cfg = replace(cfg, jobs=args.jobs)
    validate_config(cfg)
    return cfg


def _cmd_run(args) -> int:
    cfg = _load_config(args)
    results = run(cfg)
    paths = emit(results, cfg.out_dir)
    failed = [r for r in results.records if r.error is not None]
    print(f"completed {len(results.records)} runs ({len(failed)} failed)")
    for name, p in paths.items():
        print(f"  {name}: {p}")
    return 0 if not failed else 1


def _cmd_compare(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = compare_sweep(cfg, scenario_id=args.scenario, out_path=out / "compare.csv")
    print(f"{'level':>5} {'bus':>4} {'cosim':>9} {'unified':>9} {'diff':>11}")
    for r in rows:
        print(
            f"{r['level']:>5} {r['bus']:>4} {r['v_cosim']:>9.4f} "
            f"{r['v_unified']:>9.4f} {r['diff']:>11.3e}"
        )
    worst = max(r["diff"] for r in rows)
    print(f"max positive-sequence PCC difference: {worst:.3e} pu")
    print(f"wrote {out / 'compare.csv'}")
    return 0 if worst < 1e-3 else 1


def _cmd_gen_scenarios(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    import numpy as np

    for k, (path, bus) in enumerate(cfg.feeders):
        feeder = load_feeder_file(path)
        seed = int(np.random.SeedSequence([cfg.master_seed, k]).generate_state(1, np.uint64)[0])
        scen = generate(feeder, list(cfg.levels), cfg.n_scenarios, seed, cfg.scenario_mode)
        target = out / f"scenarios_bus{bus}.json"
        save_scenarios(target, scen, seed, cfg.scenario_mode)
        print(f"bus {bus}: {len(scen)} scenarios -> {target}")
    return 0


def _cmd_validate(args) -> int:
    cfg = _load_config(args)
    net = load_network_file(cfg.network)
    print(f"network: {len(net.buses)} buses, {len(net.branches)} branches, "
          f"{len(net.generators)} generators [ok]")
    feeders = []
    for path, bus in cfg.feeders:
        f = load_feeder_file(path)
        feeders.append((f, bus))
        print(f"feeder at bus {bus}: {len(f.nodes)} nodes, "
              f"{len(f.customers())} customers, peak {f.peak_kw:.0f} kW [ok]")
    profile = load_profile_file(cfg.profile)
    print(f"profile '{profile.name}': daily energy {profile.daily_energy_per_kw():.2f} kWh/kW [ok]")

    attachments = [attach(net, bus, f) for f, bus in feeders]
    cs = run_step(net, attachments, cfg.hours[0], None, cfg.coupler, solver_opts=cfg.solver)
    us = solve_unified(net, attachments, cfg.hours[0], None)
    rep = compare(cs, us, attachments)
    print(f"no-PV base case: {cs.fpi_iterations} boundary iterations")
    for row in rep["per_pcc"]:
        print(
            f"  bus {row['bus']}: cosim {abs(row['v_cosim']):.4f} pu, "
            f"unified {abs(row['v_unified']):.4f} pu, diff {row['diff']:.2e}"
        )
    print(f"max difference {rep['max_diff']:.2e} pu "
          f"({'PASS' if rep['passed'] else 'FAIL'} at {rep['threshold']} pu)")
    return 0 if rep["passed"] else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pvcosim",
        description="Transmission-distribution co-simulation PV penetration studies",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file (JSON); bundled fixtures if omitted")
    common.add_argument("--seed", type=int, help="master seed override")
    common.add_argument("--levels", help="comma-separated penetration levels")
    common.add_argument("--scenarios", type=int, help="scenarios per level")
    common.add_argument("--hours", help="comma-separated hours (0-23)")
    common.add_argument("--mode", choices=["cosim", "oracle", "both"])
    common.add_argument("--out", help="output directory")
    common.add_argument("--jobs", type=int, help="parallel worker processes")

    p_run = sub.add_parser("run", parents=[common], help="execute the configured sweep")
    p_run.set_defaults(func=_cmd_run)

    p_cmp = sub.add_parser(
        "compare", parents=[common], help="co-simulation vs unified model across levels"
    )
    p_cmp.add_argument("--scenario", type=int, default=0, help="scenario id to compare")
    p_cmp.set_defaults(func=_cmd_compare)

    p_gen = sub.add_parser(
        "gen-scenarios", parents=[common], help="generate and save PV deployment scenarios"
    )
    p_gen.set_defaults(func=_cmd_gen_scenarios)

    p_val = sub.add_parser(
        "validate", parents=[common], help="validate inputs and check the no-PV base case"
    )
    p_val.set_defaults(func=_cmd_validate)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
