"""Three-sequence transmission power flow.

The positive-sequence network is solved with a full Newton-Raphson in
polar form; the negative- and zero-sequence networks are linear solves.
Anything that couples the sequences (inter-sequence branch coupling,
unbalanced constant-power loads) is represented as compensation current
injections recomputed from the latest voltage estimate, and the whole
thing is iterated until the positive-sequence voltages settle.

Loads are constant-power per phase. A balanced bus load is the triple
``(S/3, S/3, S/3)``; PCC loads arrive as explicit per-phase triples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .network import Branch, TransmissionNetwork, build_sequence_admittance
from .sequences import A_ANA, A_SYN, SequenceSet, phase_currents

__all__ = [
    "SolverOptions",
    "SeqSolution",
    "PowerFlowError",
    "NrNonConvergenceError",
    "SingularJacobianError",
    "SequenceSolveError",
    "OuterNonConvergenceError",
    "solve_positive_nr",
    "solve_sequence_linear",
    "compensation_currents",
    "solve_three_sequence",
    "slack_power",
    "branch_flows",
]


class PowerFlowError(RuntimeError):
    pass


class NrNonConvergenceError(PowerFlowError):
    def __init__(self, iterations: int, mismatch: float):
        super().__init__(
            f"Newton-Raphson did not converge in {iterations} iterations "
            f"(final mismatch {mismatch:.3e} pu)"
        )
        self.iterations = iterations
        self.mismatch = mismatch


class SingularJacobianError(PowerFlowError):
    def __init__(self, bus_id: int):
        super().__init__(f"singular Jacobian pivot associated with bus {bus_id}")
        self.bus_id = bus_id


class SequenceSolveError(PowerFlowError):
    def __init__(self, bus_positions: list[int], detail: str = ""):
        msg = f"singular sequence network; affected buses {bus_positions}"
        super().__init__(msg + (f" ({detail})" if detail else ""))
        self.bus_positions = bus_positions


class OuterNonConvergenceError(PowerFlowError):
    def __init__(self, iterations: int, delta: float):
        super().__init__(
            f"sequence-coupling loop did not converge in {iterations} passes "
            f"(last positive-sequence change {delta:.3e} pu)"
        )
        self.iterations = iterations
        self.delta = delta


@dataclass(frozen=True)
class SolverOptions:
    tol_nr: float = 1e-8
    tol_seq: float = 1e-6
    max_outer: int = 30
    max_nr: int = 20
    flat_start: bool = True

    def __post_init__(self):
        if self.tol_nr <= 0 or self.tol_seq <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class SeqSolution:
    """Converged three-sequence solution, immutable by convention."""

    bus_ids: tuple[int, ...]
    v0: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    slack_power_pu: complex
    flows: dict[tuple[int, int], np.ndarray]  # (from, to) -> (3, 2) seq x (from-end, to-end)
    iterations_outer: int
    iterations_nr: int
    max_mismatch: float
    nr_history: tuple[float, ...] = ()
    comp_injections: np.ndarray | None = None  # (n, 3) sequence current injections
    loads_phase: np.ndarray | None = None  # (n, 3) per-phase powers actually served

    def index_of(self, bus_id: int) -> int:
        return self.bus_ids.index(bus_id)

    def sequence_set(self, bus_id: int) -> SequenceSet:
        i = self.index_of(bus_id)
        return SequenceSet(zero=self.v0[i], positive=self.v1[i], negative=self.v2[i])

    def phase_voltages(self, bus_id: int) -> np.ndarray:
        i = self.index_of(bus_id)
        return A_SYN @ np.array([self.v0[i], self.v1[i], self.v2[i]])


# ---------------------------------------------------------------------------
# Prebuilt per-network context
# ---------------------------------------------------------------------------


class SequenceOps:
    """Index maps, admittances and factorizations reused across solves."""

    def __init__(self, net: TransmissionNetwork):
        self.net = net
        self.idx = net.bus_index()
        self.n = len(net.buses)
        self.bus_ids = tuple(b.id for b in net.buses)

        self.y1 = build_sequence_admittance(net, 1)
        self.y2 = build_sequence_admittance(net, 2)
        self.y0 = build_sequence_admittance(net, 0)
        self.y1_dense = self.y1.toarray()

        kinds = [b.kind for b in net.buses]
        self.slack = kinds.index("slack")
        self.pv = np.array([i for i, k in enumerate(kinds) if k == "pv"], dtype=int)
        self.pq = np.array([i for i, k in enumerate(kinds) if k == "pq"], dtype=int)
        self.pvpq = np.concatenate([self.pv, self.pq])

        self.v_set = np.ones(self.n)
        slack_bus = net.buses[self.slack]
        self.v_set[self.slack] = (
            slack_bus.v_setpoint if slack_bus.v_setpoint is not None else 1.0
        )
        self.p_gen = np.zeros(self.n)
        for gbus, p_set, v_set in net.generators:
            i = self.idx[gbus]
            self.v_set[i] = v_set
            if i != self.slack:
                self.p_gen[i] = p_set
        for b in net.buses:
            if b.kind == "pv" and b.v_setpoint is not None:
                self.v_set[self.idx[b.id]] = b.v_setpoint

        self.static_loads = np.array([complex(b.load_p, b.load_q) for b in net.buses])
        self.lin2 = _LinearSequenceSolver(self.y2, self.slack)
        self.lin0 = _LinearSequenceSolver(self.y0, self.slack)

        # Branches with inter-sequence coupling keep their full 3x3 series
        # admittance for compensation and exact flow computation.
        self.coupled: list[tuple[int, int, Branch, np.ndarray]] = []
        for br in net.branches:
            if br.coupling:
                yfull = np.linalg.inv(br.series_impedance_matrix())
                self.coupled.append((self.idx[br.from_bus], self.idx[br.to_bus], br, yfull))

    def flat_voltages(self) -> np.ndarray:
        v = np.ones(self.n, dtype=complex)
        v[self.slack] = self.v_set[self.slack]
        if self.pv.size:
            v[self.pv] = self.v_set[self.pv]
        return v

    def phase_load_matrix(self, pcc_loads: dict[int, np.ndarray] | None) -> np.ndarray:
        """Per-bus per-phase constant-power loads (n, 3), system pu."""
        loads = np.repeat(self.static_loads[:, None] / 3.0, 3, axis=1).astype(complex)
        if pcc_loads:
            for bus_id, s_ph in pcc_loads.items():
                if bus_id not in self.idx:
                    raise KeyError(f"PCC load references unknown bus {bus_id}")
                loads[self.idx[bus_id]] += np.asarray(s_ph, dtype=complex)
        return loads


class _LinearSequenceSolver:
    """Slack-grounded linear solver for one sequence network.

    The slack bus is held at zero volts. Connected components of the
    remaining network with no path to ground (no shunt, no slack
    coupling) are only solvable for zero injection; they are pinned to
    zero volts and flagged if they ever receive current.
    """

    def __init__(self, y: sp.csc_matrix, slack: int):
        self.n = y.shape[0]
        self.slack = slack
        keep = np.array([i for i in range(self.n) if i != slack], dtype=int)
        self.keep = keep
        ysub = y[np.ix_(keep, keep)].tocsc()

        dense_rows = np.abs(y.toarray())
        row_scale = dense_rows.max(axis=1)
        row_sum = np.abs(y.toarray().sum(axis=1))
        anchored_bus = (row_sum > 1e-8 * np.maximum(1.0, row_scale)) | (
            np.abs(y.toarray()[:, slack]) > 0
        )

        # Union components over the off-diagonal structure of the reduced
        # matrix; a component is solvable iff some member is anchored.
        nk = keep.size
        parent = list(range(nk))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        coo = ysub.tocoo()
        for r, c, v in zip(coo.row, coo.col, coo.data):
            if r != c and abs(v) > 0:
                pr, pc = find(r), find(c)
                if pr != pc:
                    parent[pr] = pc

        comp_anchored: dict[int, bool] = {}
        for k in range(nk):
            root = find(k)
            comp_anchored[root] = comp_anchored.get(root, False) or anchored_bus[keep[k]]
        solvable = np.array([comp_anchored[find(k)] for k in range(nk)], dtype=bool)
        self.solvable_local = np.where(solvable)[0]
        self.pinned_local = np.where(~solvable)[0]

        self.lu = None
        if self.solvable_local.size:
            core = ysub[np.ix_(self.solvable_local, self.solvable_local)].tocsc()
            try:
                self.lu = spla.splu(core)
            except RuntimeError as exc:
                raise SequenceSolveError(
                    [int(keep[i]) for i in self.solvable_local], str(exc)
                ) from exc

    def solve(self, injections: np.ndarray) -> np.ndarray:
        inj = np.asarray(injections, dtype=complex)
        if inj.shape != (self.n,):
            raise ValueError(f"injection vector must have length {self.n}")
        bad = [
            int(self.keep[i]) for i in self.pinned_local if abs(inj[self.keep[i]]) > 1e-11
        ]
        if bad:
            raise SequenceSolveError(bad, "current injected into ungrounded island")
        v = np.zeros(self.n, dtype=complex)
        if self.lu is not None:
            rhs = inj[self.keep[self.solvable_local]]
            v[self.keep[self.solvable_local]] = self.lu.solve(rhs)
        return v


# ---------------------------------------------------------------------------
# Newton-Raphson, positive sequence
# ---------------------------------------------------------------------------


def _nr_solve(
    ops: SequenceOps,
    sbus: np.ndarray,
    opts: SolverOptions,
    v_start: np.ndarray | None = None,
) -> tuple[np.ndarray, int, float, list[float]]:
    """Full NR in polar form. Returns (V, iterations, mismatch, history)."""
    n = ops.n
    y = ops.y1_dense
    pv, pq, pvpq, slack = ops.pv, ops.pq, ops.pvpq, ops.slack

    v = ops.flat_voltages() if v_start is None else v_start.astype(complex).copy()
    v[slack] = ops.v_set[slack]
    if pv.size:
        v[pv] = ops.v_set[pv] * v[pv] / np.abs(v[pv])

    npv, npq = pv.size, pq.size

    def mismatch(vv):
        s_calc = vv * np.conj(y @ vv)
        ds = s_calc - sbus
        return np.concatenate([ds[pvpq].real, ds[pq].imag])

    f = mismatch(v)
    norm = float(np.max(np.abs(f))) if f.size else 0.0
    history = [norm]
    it = 0
    while norm > opts.tol_nr and it < opts.max_nr:
        it += 1
        vm = np.abs(v)
        ibus = y @ v
        diag_v = np.diag(v)
        diag_i = np.diag(ibus)
        diag_vn = np.diag(v / vm)
        ds_dvm = diag_v @ np.conj(y @ diag_vn) + np.conj(diag_i) @ diag_vn
        ds_dva = 1j * diag_v @ np.conj(diag_i - y @ diag_v)

        j11 = ds_dva[np.ix_(pvpq, pvpq)].real
        j12 = ds_dvm[np.ix_(pvpq, pq)].real
        j21 = ds_dva[np.ix_(pq, pvpq)].imag
        j22 = ds_dvm[np.ix_(pq, pq)].imag
        jac = np.block([[j11, j12], [j21, j22]])

        lu, piv = scipy.linalg.lu_factor(jac, check_finite=False)
        udiag = np.abs(np.diag(lu))
        if udiag.size and udiag.min() < 1e-12 * max(1.0, udiag.max()):
            var = int(np.argmin(udiag))
            bus_pos = pvpq[var] if var < npv + npq else pq[var - npv - npq]
            raise SingularJacobianError(ops.bus_ids[bus_pos])
        dx = scipy.linalg.lu_solve((lu, piv), f, check_finite=False)

        va = np.angle(v)
        vm = np.abs(v)
        va[pvpq] -= dx[: npv + npq]
        if npq:
            vm[pq] -= dx[npv + npq :]
        v = vm * np.exp(1j * va)

        f = mismatch(v)
        norm = float(np.max(np.abs(f))) if f.size else 0.0
        history.append(norm)

    if norm > opts.tol_nr:
        raise NrNonConvergenceError(it, norm)
    return v, it, norm, history


def solve_positive_nr(
    net: TransmissionNetwork,
    extra_injections: dict[int, complex] | None = None,
    opts: SolverOptions | None = None,
    *,
    ops: SequenceOps | None = None,
    v_start: np.ndarray | None = None,
) -> tuple[np.ndarray, dict]:
    """Positive-sequence Newton-Raphson power flow.

    ``extra_injections`` maps bus ids to complex power added to the bus
    balance (generation-positive). Returns the complex bus voltages in
    ``net.buses`` order and an info dict with iteration diagnostics.
    """
    opts = opts or SolverOptions()
    ops = ops or SequenceOps(net)
    sbus = (ops.p_gen - ops.static_loads).astype(complex)
    if extra_injections:
        for bus_id, s in extra_injections.items():
            sbus[ops.idx[bus_id]] += s
    v, it, norm, history = _nr_solve(ops, sbus, opts, v_start=v_start)
    return v, {"iterations": it, "mismatch": norm, "history": history}


def solve_sequence_linear(
    y: sp.spmatrix, injections: np.ndarray, slack_index: int | None = None
) -> np.ndarray:
    """Solve ``Y V = I`` with the slack bus held at zero volts."""
    y = sp.csc_matrix(y)
    slack = 0 if slack_index is None else slack_index
    return _LinearSequenceSolver(y, slack).solve(np.asarray(injections, dtype=complex))


# ---------------------------------------------------------------------------
# Compensation currents
# ---------------------------------------------------------------------------


def _compensation_arrays(
    ops: SequenceOps,
    v0: np.ndarray,
    v1: np.ndarray,
    v2: np.ndarray,
    loads_ph: np.ndarray,
) -> np.ndarray:
    """Sequence-domain compensation current injections, (n, 3).

    Column order (zero, positive, negative); generator sign convention
    (positive current flows into the network). For loads the
    positive-sequence column carries only the correction relative to the
    balanced constant-power model the NR already accounts for, so a
    balanced system yields an all-zero matrix.
    """
    n = ops.n
    inj = np.zeros((n, 3), dtype=complex)

    seq = np.stack([v0, v1, v2], axis=1)
    vabc = seq @ A_SYN.T

    loaded = np.where(np.abs(loads_ph).sum(axis=1) > 0)[0]
    for i in loaded:
        i_ph = phase_currents(loads_ph[i], vabc[i])
        i_seq = A_ANA @ i_ph
        s_total = loads_ph[i].sum()
        i1_balanced = np.conj(s_total / v1[i])
        inj[i, 0] -= i_seq[0]
        inj[i, 1] -= i_seq[1] - i1_balanced
        inj[i, 2] -= i_seq[2]

    for f, t, _br, yfull in ops.coupled:
        dv = seq[f] - seq[t]  # (3,) sequence-domain across-voltages
        yoff = yfull - np.diag(np.diag(yfull))
        di = yoff @ dv  # extra series current per sequence
        inj[f] -= di
        inj[t] += di
    return inj


def compensation_currents(
    net: TransmissionNetwork,
    seq_voltages: dict[int, SequenceSet],
    pcc_loads: dict[int, np.ndarray] | None = None,
    *,
    ops: SequenceOps | None = None,
) -> dict[int, SequenceSet]:
    """Per-bus compensation current injections for a voltage estimate."""
    ops = ops or SequenceOps(net)
    v0 = np.array([seq_voltages[b].zero for b in ops.bus_ids])
    v1 = np.array([seq_voltages[b].positive for b in ops.bus_ids])
    v2 = np.array([seq_voltages[b].negative for b in ops.bus_ids])
    loads_ph = ops.phase_load_matrix(pcc_loads)
    inj = _compensation_arrays(ops, v0, v1, v2, loads_ph)
    return {
        b: SequenceSet(zero=inj[i, 0], positive=inj[i, 1], negative=inj[i, 2])
        for i, b in enumerate(ops.bus_ids)
    }


# ---------------------------------------------------------------------------
# Outer three-sequence loop
# ---------------------------------------------------------------------------


def solve_three_sequence(
    net: TransmissionNetwork,
    pcc_loads: dict[int, np.ndarray] | None = None,
    opts: SolverOptions | None = None,
    *,
    ops: SequenceOps | None = None,
    start: SeqSolution | None = None,
) -> SeqSolution:
    """Solve the network in three-sequence detail.

    ``pcc_loads`` maps bus id to a per-phase complex power triple
    (system pu) added on top of the bus's balanced static load.
    """
    opts = opts or SolverOptions()
    ops = ops or SequenceOps(net)
    loads_ph = ops.phase_load_matrix(pcc_loads)
    sbus_const = (ops.p_gen - loads_ph.sum(axis=1)).astype(complex)

    if start is not None:
        v0, v1, v2 = start.v0.copy(), start.v1.copy(), start.v2.copy()
    else:
        v1 = ops.flat_voltages()
        v0 = np.zeros(ops.n, dtype=complex)
        v2 = np.zeros(ops.n, dtype=complex)

    total_nr = 0
    mismatch = np.inf
    history: list[float] = []
    comp = np.zeros((ops.n, 3), dtype=complex)
    converged = False
    outer = 0
    while outer < opts.max_outer:
        outer += 1
        comp = _compensation_arrays(ops, v0, v1, v2, loads_ph)
        extra = v1 * np.conj(comp[:, 1])
        v1_new, it, mismatch, nr_hist = _nr_solve(ops, sbus_const + extra, opts, v_start=v1)
        total_nr += it
        history = nr_hist
        v0_new = ops.lin0.solve(comp[:, 0])
        v2_new = ops.lin2.solve(comp[:, 2])
        # The positive-sequence change alone can read zero one pass before
        # the coupling feedback arrives, so all three sequences gate the
        # exit.
        delta = float(
            max(
                np.max(np.abs(v1_new - v1)),
                np.max(np.abs(v0_new - v0)),
                np.max(np.abs(v2_new - v2)),
            )
        )
        v0, v1, v2 = v0_new, v1_new, v2_new
        if outer > 1 and delta <= opts.tol_seq:
            converged = True
            break
    if not converged:
        raise OuterNonConvergenceError(outer, delta)

    sol = SeqSolution(
        bus_ids=ops.bus_ids,
        v0=v0,
        v1=v1,
        v2=v2,
        slack_power_pu=0j,
        flows={},
        iterations_outer=outer,
        iterations_nr=total_nr,
        max_mismatch=mismatch,
        nr_history=tuple(history),
        comp_injections=comp,
        loads_phase=loads_ph,
    )
    sol.flows = branch_flows(sol, net, ops=ops)
    sol.slack_power_pu = slack_power(sol, net, ops=ops)
    return sol


def slack_power(
    sol: SeqSolution, net: TransmissionNetwork, *, ops: SequenceOps | None = None
) -> complex:
    """Slack generator complex output, positive = generating."""
    ops = ops or SequenceOps(net)
    s = ops.slack
    i_net = (ops.y1_dense @ sol.v1)[s]
    i_comp = sol.comp_injections[s, 1] if sol.comp_injections is not None else 0j
    s_load = (
        sol.loads_phase[s].sum() if sol.loads_phase is not None else ops.static_loads[s]
    )
    i_load = np.conj(s_load / sol.v1[s]) if abs(s_load) > 0 else 0j
    i_gen = i_net - i_comp + i_load
    return complex(sol.v1[s] * np.conj(i_gen))


def branch_flows(
    sol: SeqSolution, net: TransmissionNetwork, *, ops: SequenceOps | None = None
) -> dict[tuple[int, int], np.ndarray]:
    """Per-branch per-sequence complex power at both ends.

    Returns ``{(from, to): array (3, 2)}`` with rows (zero, positive,
    negative) and columns (from-end, to-end); currents are taken flowing
    into the branch at each end so the two columns sum to the loss.
    """
    ops = ops or SequenceOps(net)
    idx = ops.idx
    seq = np.stack([sol.v0, sol.v1, sol.v2], axis=1)
    out: dict[tuple[int, int], np.ndarray] = {}
    for br in net.branches:
        f, t = idx[br.from_bus], idx[br.to_bus]
        vf, vt = seq[f], seq[t]
        yfull = (
            np.linalg.inv(br.series_impedance_matrix())
            if br.coupling
            else np.diag([1.0 / br.z0, 1.0 / br.z1, 1.0 / br.z2])
        )
        series = yfull @ (vf - vt)  # coupling-aware series currents (tap == 1 there)
        flows = np.zeros((3, 2), dtype=complex)
        for s in range(3):
            z = (br.z0, br.z1, br.z2)[s]
            bsh = br.b0 if s == 0 else br.b1
            if s == 0 and br.zero_seq_open:
                i_f = 0j
                i_t = vt[0] / z if abs(z) > 0 else 0j
            elif br.tap != 1.0:
                ys = yfull[s, s]
                i_f = (ys + 1j * bsh / 2.0) / br.tap**2 * vf[s] - ys / br.tap * vt[s]
                i_t = (ys + 1j * bsh / 2.0) * vt[s] - ys / br.tap * vf[s]
            else:
                i_f = series[s] + 1j * bsh / 2.0 * vf[s]
                i_t = -series[s] + 1j * bsh / 2.0 * vt[s]
            flows[s, 0] = vf[s] * np.conj(i_f)
            flows[s, 1] = vt[s] * np.conj(i_t)
        out[(br.from_bus, br.to_bus)] = flows
    return out
