"""One co-simulation time step: alternating T&D solves with boundary exchange.

Each fixed-point iteration solves the transmission system with the
last-known per-phase equivalent loads at every PCC, then re-solves all
attached feeders against the fresh PCC phase voltages. The iteration
stops when no boundary variable (phase voltage or phase power, both in
per-unit) moves by more than the boundary tolerance between consecutive
iterations.

Attaching a feeder to a bus replaces that bus's static load; the
substation transformer ratio is nominal, so per-unit voltages map
one-to-one across the boundary.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .feeder import FeederModel, FeederOps, FeederSolution, apply_scenario, solve_feeder
from .network import TransmissionNetwork
from .sequences import phases_from_sequences
from .transmission import (
    PowerFlowError,
    SeqSolution,
    SequenceOps,
    SolverOptions,
    solve_three_sequence,
)

__all__ = [
    "Attachment",
    "BoundaryState",
    "CoSimOptions",
    "CoSimResult",
    "CosimError",
    "CosimNonConvergenceError",
    "run_step",
    "boundary_error",
    "equivalent_load",
    "source_voltage",
    "attach",
    "effective_network",
    "verify_fixed_point",
]


class CosimError(RuntimeError):
    def __init__(self, message: str, side: str):
        super().__init__(f"[{side}] {message}")
        self.side = side


class CosimNonConvergenceError(CosimError):
    def __init__(self, iterations: int, error: float, history):
        super().__init__(
            f"boundary exchange did not converge in {iterations} iterations "
            f"(last error {error:.3e} pu)",
            side="coupler",
        )
        self.iterations = iterations
        self.error = error
        self.history = history


@dataclass(frozen=True)
class Attachment:
    bus: int
    feeder: FeederModel
    kv_ratio: float
    mva_base: float = 100.0


def attach(net: TransmissionNetwork, bus_id: int, feeder: FeederModel) -> Attachment:
    """Build an attachment; the PCC must be a pq bus."""
    bus = next((b for b in net.buses if b.id == bus_id), None)
    if bus is None:
        raise ValueError(f"unknown bus {bus_id}")
    if bus.kind != "pq":
        raise ValueError(f"PCC bus {bus_id} must be a pq bus, is {bus.kind}")
    return Attachment(
        bus=bus_id,
        feeder=feeder,
        kv_ratio=bus.base_kv / feeder.kv_base,
        mva_base=net.mva_base,
    )


@dataclass(frozen=True)
class BoundaryState:
    """Per-PCC boundary variables at one iteration.

    ``v_phase`` holds transmission-side phase voltages (pu), ``s_phase``
    distribution-side per-phase complex powers (pu, system base); one
    row per attachment.
    """

    v_phase: np.ndarray  # (n_att, 3) complex
    s_phase: np.ndarray  # (n_att, 3) complex
    iteration: int


@dataclass(frozen=True)
class CoSimOptions:
    tol_boundary: float = 1e-4
    max_fpi: int = 20
    under_relaxation: float = 1.0
    voltage_only_error: bool = False
    feeder_tol: float = 1e-7
    feeder_max_iter: int = 60

    def __post_init__(self):
        if self.tol_boundary <= 0:
            raise ValueError("tol_boundary must be positive")
        if not 0 < self.under_relaxation <= 1:
            raise ValueError("under_relaxation must be in (0, 1]")


@dataclass
class CoSimResult:
    seq_solution: SeqSolution
    feeder_solutions: tuple[FeederSolution, ...]
    boundary_history: tuple[BoundaryState, ...]
    fpi_iterations: int
    converged: bool

    @property
    def final_boundary(self) -> BoundaryState:
        return self.boundary_history[-1]


def boundary_error(prev: BoundaryState, curr: BoundaryState, voltage_only: bool = False) -> float:
    """Infinity norm of the change in all boundary variables."""
    if prev.v_phase.shape != curr.v_phase.shape:
        raise ValueError("boundary states cover different attachment sets")
    dv = float(np.max(np.abs(curr.v_phase - prev.v_phase)))
    if voltage_only:
        return dv
    ds = float(np.max(np.abs(curr.s_phase - prev.s_phase)))
    return max(dv, ds)


def equivalent_load(fs: FeederSolution, att: Attachment) -> np.ndarray:
    """Feeder PCC power as a per-phase system-pu triple."""
    return fs.pcc_power_kw / (1e3 * att.mva_base)


def source_voltage(ts: SeqSolution, att: Attachment) -> np.ndarray:
    """PCC phase voltages (pu) seen by the feeder for a transmission solve."""
    i = ts.index_of(att.bus)
    return phases_from_sequences(ts.v0[i], ts.v1[i], ts.v2[i])


def effective_network(net: TransmissionNetwork, attachments) -> TransmissionNetwork:
    """Zero the static load at every attached bus (the feeder replaces it)."""
    attached = {a.bus for a in attachments}
    buses = tuple(
        replace(b, load_p=0.0, load_q=0.0) if b.id in attached else b for b in net.buses
    )
    return replace(net, buses=buses)


_NOMINAL_V = phases_from_sequences(0.0, 1.0, 0.0)


def _solve_feeders(
    ops_list: list[FeederOps], v_rows: np.ndarray, opts: CoSimOptions
) -> list[FeederSolution]:
    def one(i: int) -> FeederSolution:
        try:
            return solve_feeder(
                ops_list[i], v_rows[i], tol=opts.feeder_tol, max_iter=opts.feeder_max_iter
            )
        except Exception as exc:
            raise CosimError(str(exc), side="distribution") from exc

    if len(ops_list) > 1:
        with ThreadPoolExecutor(max_workers=len(ops_list)) as pool:
            return list(pool.map(one, range(len(ops_list))))
    return [one(i) for i in range(len(ops_list))]


def run_step(
    net: TransmissionNetwork,
    attachments,
    hour: int,
    scenario_per_feeder,
    opts: CoSimOptions | None = None,
    *,
    profile=None,
    solver_opts: SolverOptions | None = None,
    seq_ops: SequenceOps | None = None,
) -> CoSimResult:
    """Run one quasi-static co-simulation step to boundary convergence."""
    opts = opts or CoSimOptions()
    solver_opts = solver_opts or SolverOptions()
    attachments = list(attachments)
    if scenario_per_feeder is None:
        scenario_per_feeder = [None] * len(attachments)
    if len(scenario_per_feeder) != len(attachments):
        raise ValueError("one scenario entry (or None) required per attachment")

    feeders: list[FeederModel] = []
    for att, scen in zip(attachments, scenario_per_feeder):
        if scen is None:
            feeders.append(att.feeder)
        else:
            if profile is None:
                raise ValueError("a generation profile is required to apply scenarios")
            feeders.append(apply_scenario(att.feeder, scen, hour, profile))
    ops_list = [FeederOps(f) for f in feeders]

    net_eff = effective_network(net, attachments)
    seq_ops = seq_ops if seq_ops is not None else SequenceOps(net_eff)

    n_att = len(attachments)
    v_rows = np.tile(_NOMINAL_V, (n_att, 1))

    # Decoupled first solves: each feeder at nominal balanced voltage.
    fsols = _solve_feeders(ops_list, v_rows, opts)
    s_rows = np.array([equivalent_load(fs, att) for fs, att in zip(fsols, attachments)])
    history = [BoundaryState(v_phase=v_rows.copy(), s_phase=s_rows.copy(), iteration=0)]

    seq_sol: SeqSolution | None = None
    converged = False
    err = np.inf
    for it in range(1, opts.max_fpi + 1):
        pcc_loads: dict[int, np.ndarray] = {}
        for att, s in zip(attachments, s_rows):
            pcc_loads[att.bus] = pcc_loads.get(att.bus, np.zeros(3, dtype=complex)) + s
        try:
            seq_sol = solve_three_sequence(
                net_eff, pcc_loads, solver_opts, ops=seq_ops, start=seq_sol
            )
        except PowerFlowError as exc:
            raise CosimError(str(exc), side="transmission") from exc

        v_rows = np.array([source_voltage(seq_sol, att) for att in attachments])
        fsols = _solve_feeders(ops_list, v_rows, opts)
        s_new = np.array([equivalent_load(fs, att) for fs, att in zip(fsols, attachments)])
        lam = opts.under_relaxation
        s_rows = lam * s_new + (1.0 - lam) * s_rows

        state = BoundaryState(v_phase=v_rows.copy(), s_phase=s_rows.copy(), iteration=it)
        err = boundary_error(history[-1], state, voltage_only=opts.voltage_only_error)
        history.append(state)
        if err <= opts.tol_boundary:
            converged = True
            break

    if not converged:
        raise CosimNonConvergenceError(opts.max_fpi, err, tuple(history))

    return CoSimResult(
        seq_solution=seq_sol,
        feeder_solutions=tuple(fsols),
        boundary_history=tuple(history),
        fpi_iterations=len(history) - 1,
        converged=True,
    )


def verify_fixed_point(
    net: TransmissionNetwork,
    attachments,
    result: CoSimResult,
    opts: CoSimOptions | None = None,
    *,
    hour: int = 12,
    profile=None,
    scenario_per_feeder=None,
    solver_opts: SolverOptions | None = None,
) -> float:
    """Re-solve both sides at the converged boundary; return the max shift.

    A sound fixed point moves no boundary variable by more than the
    boundary tolerance.
    """
    opts = opts or CoSimOptions()
    solver_opts = solver_opts or SolverOptions()
    attachments = list(attachments)
    final = result.final_boundary

    net_eff = effective_network(net, attachments)
    pcc_loads: dict[int, np.ndarray] = {}
    for att, s in zip(attachments, final.s_phase):
        pcc_loads[att.bus] = pcc_loads.get(att.bus, np.zeros(3, dtype=complex)) + s
    seq_sol = solve_three_sequence(net_eff, pcc_loads, solver_opts, start=result.seq_solution)
    v_rows = np.array([source_voltage(seq_sol, att) for att in attachments])

    if scenario_per_feeder is None:
        scenario_per_feeder = [None] * len(attachments)
    s_rows = []
    for i, (att, scen) in enumerate(zip(attachments, scenario_per_feeder)):
        f = att.feeder if scen is None else apply_scenario(att.feeder, scen, hour, profile)
        fs = solve_feeder(f, final.v_phase[i], tol=opts.feeder_tol)
        s_rows.append(equivalent_load(fs, att))
    state = BoundaryState(
        v_phase=v_rows, s_phase=np.array(s_rows), iteration=final.iteration + 1
    )
    return boundary_error(final, state)
