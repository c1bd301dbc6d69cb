"""Penetration-sweep orchestration, summary metrics and file outputs.

``run`` drives the co-simulation (and optionally the unified solve)
over a (scenario, level, hour) grid, isolating per-run failures, and
returns a ``ResultSet`` whose CSV/JSON emission is bit-reproducible for
a fixed configuration and master seed. Wall-clock timings are kept out
of ``results.csv`` and ``aggregates.json`` (they go to the iteration
trace) so replays compare byte-for-byte.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import data_path
from .coupler import CoSimOptions, attach, boundary_error, run_step
from .feeder import load_feeder_file
from .network import load_network_file
from .scenarios import PvScenario, generate, load_profile_file
from .sequences import unbalance_percent
from .transmission import SolverOptions
from .unified import compare, solve_unified

__all__ = [
    "RunConfig",
    "RunRecord",
    "ResultSet",
    "run",
    "unbalance_factor",
    "detect_reverse_flow",
    "emit",
    "compare_sweep",
]


@dataclass(frozen=True)
class RunConfig:
    network: str
    feeders: tuple[tuple[str, int], ...]  # (feeder file, PCC bus)
    profile: str
    levels: tuple[int, ...] = tuple(range(10, 101, 10))
    n_scenarios: int = 1
    hours: tuple[int, ...] = (12,)
    master_seed: int = 1
    mode: str = "cosim"  # cosim | oracle | both
    out_dir: str = "out"
    scenario_mode: str = "incremental"
    jobs: int = 1
    solver: SolverOptions = field(default_factory=SolverOptions)
    coupler: CoSimOptions = field(default_factory=CoSimOptions)

    @staticmethod
    def bundled(**overrides) -> "RunConfig":
        """Configuration wired to the packaged desk-scale fixtures."""
        base = dict(
            network=str(data_path("ieee9.json")),
            feeders=(
                (str(data_path("desk13.json")), 5),
                (str(data_path("desk13.json")), 6),
                (str(data_path("desk13.json")), 8),
            ),
            profile=str(data_path("pv_profile.json")),
        )
        base.update(overrides)
        return RunConfig(**base)

    @staticmethod
    def from_file(path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        base = Path(path).parent

        def resolve(p):
            q = Path(p)
            return str(q if q.is_absolute() else base / q)

        kwargs = dict(
            network=resolve(raw["network"]),
            feeders=tuple((resolve(f["path"]), int(f["bus"])) for f in raw["feeders"]),
            profile=resolve(raw["profile"]),
        )
        for key in ("levels", "hours"):
            if key in raw:
                kwargs[key] = tuple(int(x) for x in raw[key])
        for key in ("n_scenarios", "master_seed", "jobs"):
            if key in raw:
                kwargs[key] = int(raw[key])
        for key in ("mode", "out_dir", "scenario_mode"):
            if key in raw:
                kwargs[key] = str(raw[key])
        if "solver" in raw:
            kwargs["solver"] = SolverOptions(**raw["solver"])
        if "coupler" in raw:
            kwargs["coupler"] = CoSimOptions(**raw["coupler"])
        cfg = RunConfig(**kwargs)
        validate_config(cfg)
        return cfg


def validate_config(cfg: RunConfig) -> None:
    if not cfg.levels:
        raise ValueError("levels must be non-empty")
    if cfg.mode not in ("cosim", "oracle", "both"):
        raise ValueError(f"unknown mode {cfg.mode!r}")
    for p in [cfg.network, cfg.profile] + [f for f, _ in cfg.feeders]:
        if not Path(p).exists():
            raise FileNotFoundError(f"configured file missing: {p}")


@dataclass
class RunRecord:
    scenario_id: int
    level: int
    hour: int
    pcc_bus: tuple[int, ...]
    v_phase: np.ndarray  # (n_att, 3) complex pu
    s_phase: np.ndarray  # (n_att, 3) complex pu
    vuf: tuple[float, ...]
    slack_p: float
    slack_q: float
    flow_signs: dict[tuple[int, int], int]
    fpi_iterations: int
    wall_ms: float
    oracle_v1: tuple[complex, ...] | None = None
    oracle_diff: float | None = None
    error: str | None = None


@dataclass
class ResultSet:
    config: RunConfig
    records: list[RunRecord]
    baseline: dict[int, RunRecord]  # hour -> no-PV record
    trace: list[dict]

    def aggregates(self) -> dict:
        """Per-level means recomputed from the raw records, plus the
        per-PCC voltage-trend classification across levels."""
        out: dict = {"levels": {}, "n_scenarios": self.config.n_scenarios}
        ok = [r for r in self.records if r.error is None]
        levels = sorted({r.level for r in ok})
        for level in levels:
            sel = [r for r in ok if r.level == level]
            buses = sel[0].pcc_bus
            per_pcc = {}
            for i, bus in enumerate(buses):
                vmag = np.array([np.abs(r.v_phase[i]) for r in sel])
                p = np.array([r.s_phase[i].real for r in sel])
                vufs = np.array([r.vuf[i] for r in sel])
                per_pcc[str(bus)] = {
                    "mean_v": [float(x) for x in vmag.mean(axis=0)],
                    "mean_p": [float(x) for x in p.mean(axis=0)],
                    "vuf_mean": float(vufs.mean()),
                    "vuf_max": float(vufs.max()),
                }
            out["levels"][str(level)] = {
                "mean_fpi": float(np.mean([r.fpi_iterations for r in sel])),
                "n_records": len(sel),
                "pcc": per_pcc,
            }
        if ok and len(levels) >= 3:
            out["voltage_trend"] = {}
            for bus in map(str, ok[0].pcc_bus):
                series = [
                    float(np.mean(out["levels"][str(lv)]["pcc"][bus]["mean_v"]))
                    for lv in levels
                ]
                peak = int(np.argmax(series))
                if peak < len(series) - 1 and series[-1] < series[peak] - 1e-9:
                    trend = "rises_then_falls"
                    peak_level = levels[peak]
                else:
                    trend = "monotonic_rise" if series[-1] >= series[0] else "falls"
                    peak_level = levels[-1] if trend == "monotonic_rise" else levels[0]
                out["voltage_trend"][bus] = {"trend": trend, "peak_level": peak_level}
        return out


def unbalance_factor(v_phases) -> float:
    """Voltage unbalance factor in percent for one PCC phase triple."""
    v = np.asarray(v_phases, dtype=complex)
    if v.shape != (3,) or np.any(np.abs(v) == 0):
        raise ValueError("three nonzero phase voltages required")
    return unbalance_percent(v[0], v[1], v[2])


class _Runner:
    """Loads models once and executes individual (scenario, level, hour) cases."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.net = load_network_file(cfg.network)
        self.profile = load_profile_file(cfg.profile)
        self.feeders = [load_feeder_file(path) for path, _ in cfg.feeders]
        self.attachments = [
            attach(self.net, bus, f) for (_, bus), f in zip(cfg.feeders, self.feeders)
        ]
        self.scenarios: list[dict[tuple[int, int], PvScenario]] = []
        for k, f in enumerate(self.feeders):
            seed = int(
                np.random.SeedSequence([cfg.master_seed, k]).generate_state(1, np.uint64)[0]
            )
            table = {}
            for s in generate(f, list(cfg.levels), cfg.n_scenarios, seed, cfg.scenario_mode):
                table[(s.scenario_id, s.penetration_pct)] = s
            self.scenarios.append(table)

    def scenario_list(self, sid: int, level: int) -> list[PvScenario | None]:
        if level == 0:
            return [None] * len(self.attachments)
        return [tab[(sid, level)] for tab in self.scenarios]

    def run_case(self, sid: int, level: int, hour: int) -> tuple[RunRecord, list[dict]]:
        cfg = self.cfg
        t0 = time.perf_counter()
        scen = self.scenario_list(sid, level)
        buses = tuple(a.bus for a in self.attachments)

        if cfg.mode == "oracle":
            us = solve_unified(self.net, self.attachments, hour, scen, profile=self.profile)
            wall_ms = (time.perf_counter() - t0) * 1e3
            record = RunRecord(
                scenario_id=sid,
                level=level,
                hour=hour,
                pcc_bus=buses,
                v_phase=us.pcc_voltage.copy(),
                s_phase=us.pcc_power.copy(),
                vuf=tuple(unbalance_factor(us.pcc_voltage[i]) for i in range(len(buses))),
                slack_p=float(us.slack_power_pu.real),
                slack_q=float(us.slack_power_pu.imag),
                flow_signs={},
                fpi_iterations=0,
                wall_ms=wall_ms,
                oracle_v1=tuple(
                    (us.positive_sequence(b)) for b in buses
                ),
            )
            return record, []

        result = run_step(
            self.net,
            self.attachments,
            hour,
            scen,
            cfg.coupler,
            profile=self.profile,
            solver_opts=cfg.solver,
        )
        wall_ms = (time.perf_counter() - t0) * 1e3

        sol = result.seq_solution
        final = result.final_boundary
        vuf = tuple(unbalance_factor(final.v_phase[i]) for i in range(len(buses)))
        signs = {
            key: (1 if flows[:, 0].real.sum() >= 0 else -1)
            for key, flows in sol.flows.items()
        }
        record = RunRecord(
            scenario_id=sid,
            level=level,
            hour=hour,
            pcc_bus=buses,
            v_phase=final.v_phase.copy(),
            s_phase=final.s_phase.copy(),
            vuf=vuf,
            slack_p=float(sol.slack_power_pu.real),
            slack_q=float(sol.slack_power_pu.imag),
            flow_signs=signs,
            fpi_iterations=result.fpi_iterations,
            wall_ms=wall_ms,
        )
        if cfg.mode == "both":
            us = solve_unified(
                self.net, self.attachments, hour, scen, profile=self.profile
            )
            rep = compare(result, us, self.attachments)
            record.oracle_v1 = tuple(r["v_unified"] for r in rep["per_pcc"])
            record.oracle_diff = float(rep["max_diff"])

        trace_rows = []
        hist = result.boundary_history
        for k, st in enumerate(hist):
            err = None if k == 0 else boundary_error(hist[k - 1], st)
            trace_rows.append(
                {
                    "scenario": sid,
                    "level": level,
                    "hour": hour,
                    "fpi": st.iteration,
                    "v": [[c_str(x) for x in row] for row in st.v_phase],
                    "s": [[c_str(x) for x in row] for row in st.s_phase],
                    "err": None if err is None else float(err),
                    "wall_ms": round(wall_ms, 3),
                }
            )
        return record, trace_rows


def c_str(x: complex) -> str:
    return f"{x.real:.10g}{x.imag:+.10g}j"


def _safe_case(runner: _Runner, sid: int, level: int, hour: int):
    """Run one case under per-run isolation: failures become error records."""
    try:
        return runner.run_case(sid, level, hour)
    except Exception as exc:
        rec = RunRecord(
            scenario_id=sid,
            level=level,
            hour=hour,
            pcc_bus=tuple(a.bus for a in runner.attachments),
            v_phase=np.zeros((len(runner.attachments), 3), dtype=complex),
            s_phase=np.zeros((len(runner.attachments), 3), dtype=complex),
            vuf=tuple(0.0 for _ in runner.attachments),
            slack_p=0.0,
            slack_q=0.0,
            flow_signs={},
            fpi_iterations=0,
            wall_ms=0.0,
            error=f"{type(exc).__name__}: {exc}",
        )
        return rec, []


def _run_chunk(cfg: RunConfig, cases: list[tuple[int, int, int]]):
    runner = _Runner(cfg)
    return [_safe_case(runner, sid, level, hour) for sid, level, hour in cases]


def run(config: RunConfig) -> ResultSet:
    """Execute the configured sweep; failures are recorded, not raised."""
    validate_config(config)
    runner = _Runner(config)

    # No-PV baseline per hour anchors reverse-flow detection. A failed
    # baseline is recorded like any other failed run; reverse-flow flags
    # then fall back to "no reference, no flag".
    baseline: dict[int, RunRecord] = {}
    trace: list[dict] = []
    for hour in config.hours:
        rec, tr = _safe_case(runner, 0, 0, hour)
        baseline[hour] = rec
        trace.extend(tr)

    cases = [
        (sid, level, hour)
        for sid in range(config.n_scenarios)
        for level in config.levels
        for hour in config.hours
    ]
    if config.jobs > 1 and len(cases) > 1:
        chunks = [cases[i :: config.jobs] for i in range(config.jobs)]
        results = []
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            for part in pool.map(_run_chunk, [config] * len(chunks), chunks):
                results.extend(part)
    else:
        results = _run_chunk(config, cases) if cases else []

    records = [r for r, _ in results]
    for _, tr in results:
        trace.extend(tr)
    records.sort(key=lambda r: (r.scenario_id, r.level, r.hour))
    return ResultSet(config=config, records=records, baseline=baseline, trace=trace)


def detect_reverse_flow(results: ResultSet) -> dict[tuple[int, int, int], dict]:
    """Flag sign flips against the no-PV baseline, plus slack absorption."""
    flags: dict[tuple[int, int, int], dict] = {}
    for rec in results.records:
        if rec.error is not None:
            continue
        base = results.baseline[rec.hour]
        flipped = tuple(
            sorted(
                key
                for key, sign in rec.flow_signs.items()
                if base.flow_signs.get(key, sign) != sign
            )
        )
        flags[(rec.scenario_id, rec.level, rec.hour)] = {
            "reversed_branches": flipped,
            "slack_absorbing": rec.slack_p < 0,
        }
    return flags


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def emit(results: ResultSet, out_dir) -> dict[str, Path]:
    """Write results.csv, aggregates.json, trace.jsonl and plot data."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    flags = detect_reverse_flow(results)

    buses = (
        results.records[0].pcc_bus
        if results.records
        else next(iter(results.baseline.values())).pcc_bus
        if results.baseline
        else ()
    )
    header = ["scenario", "level", "hour", "error", "fpi_iterations", "slack_p", "slack_q"]
    for bus in buses:
        for ph in "abc":
            header += [
                f"v{bus}_{ph}_mag",
                f"v{bus}_{ph}_ang_deg",
                f"p{bus}_{ph}",
                f"q{bus}_{ph}",
            ]
        header.append(f"vuf{bus}")
    header += ["reversed_branches", "slack_absorbing", "oracle_diff"]

    rows = []
    for rec in results.records:
        row = [
            str(rec.scenario_id),
            str(rec.level),
            str(rec.hour),
            rec.error or "",
            str(rec.fpi_iterations),
            _fmt(rec.slack_p),
            _fmt(rec.slack_q),
        ]
        for i, _bus in enumerate(rec.pcc_bus):
            for k in range(3):
                v = rec.v_phase[i, k]
                s = rec.s_phase[i, k]
                row += [
                    _fmt(abs(v)),
                    _fmt(float(np.degrees(np.angle(v)))),
                    _fmt(s.real),
                    _fmt(s.imag),
                ]
            row.append(_fmt(rec.vuf[i]))
        fl = flags.get((rec.scenario_id, rec.level, rec.hour), {})
        row.append(
            ";".join(f"{a}-{b}" for a, b in fl.get("reversed_branches", ()))
        )
        row.append("1" if fl.get("slack_absorbing") else "0")
        row.append("" if rec.oracle_diff is None else _fmt(rec.oracle_diff))
        rows.append(row)

    results_csv = out / "results.csv"
    with open(results_csv, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")

    agg = results.aggregates()
    aggregates_json = out / "aggregates.json"
    with open(aggregates_json, "w", encoding="utf-8") as fh:
        json.dump(agg, fh, indent=1, sort_keys=True)

    trace_jsonl = out / "trace.jsonl"
    with open(trace_jsonl, "w", encoding="utf-8") as fh:
        for row in results.trace:
            fh.write(json.dumps(row, sort_keys=True) + "\n")

    plot_v = out / "plot_voltage.csv"
    with open(plot_v, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("level,bus,phase,mean_v\n")
        for level, ldata in sorted(agg["levels"].items(), key=lambda kv: int(kv[0])):
            for bus, bdata in sorted(ldata["pcc"].items(), key=lambda kv: int(kv[0])):
                for k, ph in enumerate("abc"):
                    fh.write(f"{level},{bus},{ph},{_fmt(bdata['mean_v'][k])}\n")

    plot_it = out / "plot_iterations.csv"
    with open(plot_it, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("level,mean_fpi\n")
        for level, ldata in sorted(agg["levels"].items(), key=lambda kv: int(kv[0])):
            fh.write(f"{level},{_fmt(ldata['mean_fpi'])}\n")

    return {
        "results": results_csv,
        "aggregates": aggregates_json,
        "trace": trace_jsonl,
        "plot_voltage": plot_v,
        "plot_iterations": plot_it,
    }


def compare_sweep(config: RunConfig, scenario_id: int = 0, out_path=None) -> list[dict]:
    """Run co-simulation and unified solves across levels for one scenario.

    When ``out_path`` is given, writes the comparison table as CSV and a
    JSON twin alongside it.
    """
    runner = _Runner(config)
    hour = config.hours[0]
    rows = []
    for level in config.levels:
        scen = runner.scenario_list(scenario_id, level)
        cs = run_step(
            runner.net,
            runner.attachments,
            hour,
            scen,
            config.coupler,
            profile=runner.profile,
            solver_opts=config.solver,
        )
        us = solve_unified(runner.net, runner.attachments, hour, scen, profile=runner.profile)
        rep = compare(cs, us, runner.attachments)
        for r in rep["per_pcc"]:
            rows.append(
                {
                    "level": level,
                    "bus": r["bus"],
                    "v_cosim": abs(r["v_cosim"]),
                    "v_unified": abs(r["v_unified"]),
                    "diff": r["diff"],
                }
            )
    if out_path is not None:
        out_path = Path(out_path)
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("level,bus,v_cosim,v_unified,diff\n")
            for r in rows:
                fh.write(
                    f"{r['level']},{r['bus']},{_fmt(r['v_cosim'])},"
                    f"{_fmt(r['v_unified'])},{_fmt(r['diff'])}\n"
                )
        with open(out_path.with_suffix(".json"), "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "scenario_id": scenario_id,
                    "hour": hour,
                    "max_diff": max((r["diff"] for r in rows), default=0.0),
                    "rows": rows,
                },
                fh,
                indent=1,
                sort_keys=True,
            )
    return rows
