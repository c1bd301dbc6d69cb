"""Unbalanced three-phase radial feeder model and forward-backward sweep.

Feeder files are JSON with ``nodes``, ``lines``, ``transformer``,
``kv_base`` and ``peak_kw``. Line impedance matrices are 3x3 nested
``[re, im]`` pairs in ohms; loads are kW/kvar per phase. The solver
works in volts and ohms; the source voltage at the PCC is given in
per-unit of the feeder line-to-neutral base (the substation transformer
ratio is nominal, so transmission per-unit maps one-to-one).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "FeederNode",
    "FeederLine",
    "PvUnit",
    "SubstationTransformer",
    "FeederModel",
    "FeederSolution",
    "FeederDataError",
    "FeederSolveError",
    "load_feeder",
    "load_feeder_file",
    "solve_feeder",
    "pcc_power",
    "apply_scenario",
]

PHASES = "abc"


class FeederDataError(ValueError):
    """Raised for feeder-file parse failures and invariant violations."""


class FeederSolveError(RuntimeError):
    def __init__(self, message: str, *, last_change: float | None = None):
        super().__init__(message)
        self.last_change = last_change


@dataclass(frozen=True)
class FeederNode:
    id: str
    phases: str  # subset of "abc", canonical order
    loads: dict[str, complex] = field(default_factory=dict)  # phase -> kW + j kvar
    customer_class: str = "residential"

    def load_vector(self) -> np.ndarray:
        out = np.zeros(3, dtype=complex)
        for ph, s in self.loads.items():
            out[PHASES.index(ph)] = s
        return out


@dataclass(frozen=True)
class FeederLine:
    from_node: str
    to_node: str
    z_abc: tuple  # 3x3 nested tuple of complex ohms

    def z_matrix(self) -> np.ndarray:
        return np.array(self.z_abc, dtype=complex).reshape(3, 3)


@dataclass(frozen=True)
class PvUnit:
    node: str
    phases: str
    rating_kw: float
    profile_id: str = "default"


@dataclass(frozen=True)
class SubstationTransformer:
    ratio: float  # nominal HV/LV voltage ratio
    z_pu: complex  # series impedance, system MVA base at feeder kv


@dataclass(frozen=True)
class FeederModel:
    nodes: tuple[FeederNode, ...]
    lines: tuple[FeederLine, ...]
    transformer: SubstationTransformer
    kv_base: float
    peak_kw: float
    pv_units: tuple[PvUnit, ...] = ()
    mva_base: float = 100.0

    @property
    def root(self) -> str:
        children = {ln.to_node for ln in self.lines}
        return next(n.id for n in self.nodes if n.id not in children)

    def node(self, node_id: str) -> FeederNode:
        return next(n for n in self.nodes if n.id == node_id)

    def customers(self) -> tuple[FeederNode, ...]:
        return tuple(n for n in self.nodes if n.loads)

    @property
    def v_ln_base(self) -> float:
        return self.kv_base * 1e3 / np.sqrt(3.0)

    @property
    def z_base(self) -> float:
        return self.kv_base**2 / self.mva_base


@dataclass
class FeederSolution:
    node_ids: tuple[str, ...]
    v: np.ndarray  # (n, 3) complex volts, parent value carried on absent phases
    phase_mask: np.ndarray  # (n, 3) bool
    line_currents: dict[tuple[str, str], np.ndarray]  # (3,) amps into the to-node
    pcc_power_kw: np.ndarray  # (3,) complex kW at the transmission side
    head_current: np.ndarray  # (3,) amps into the substation transformer
    iterations: int
    converged: bool
    v_ln_base: float

    def v_pu(self) -> np.ndarray:
        return self.v / self.v_ln_base

    def voltage(self, node_id: str) -> np.ndarray:
        return self.v[self.node_ids.index(node_id)]


# ---------------------------------------------------------------------------
# Parsing and validation
# ---------------------------------------------------------------------------


def _cx(value) -> complex:
    return complex(float(value[0]), float(value[1]))


def load_feeder(text: str) -> FeederModel:
    """Parse and validate a JSON feeder file."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FeederDataError(f"parse error at line {exc.lineno}: {exc.msg}") from exc

    try:
        nodes = []
        for rn in raw["nodes"]:
            loads = {ph: _cx(v) for ph, v in rn.get("loads", {}).items()}
            nodes.append(
                FeederNode(
                    id=str(rn["id"]),
                    phases="".join(p for p in PHASES if p in rn.get("phases", "abc")),
                    loads=loads,
                    customer_class=rn.get("customer_class", "residential"),
                )
            )
        lines = []
        for rl in raw.get("lines", []):
            z = tuple(tuple(_cx(e) for e in row) for row in rl["z_abc"])
            lines.append(FeederLine(from_node=str(rl["from"]), to_node=str(rl["to"]), z_abc=z))
        rt = raw["transformer"]
        transformer = SubstationTransformer(ratio=float(rt["ratio"]), z_pu=_cx(rt["z"]))
        model = FeederModel(
            nodes=tuple(nodes),
            lines=tuple(lines),
            transformer=transformer,
            kv_base=float(raw["kv_base"]),
            peak_kw=float(raw["peak_kw"]),
            mva_base=float(raw.get("mva_base", 100.0)),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        if isinstance(exc, FeederDataError):
            raise
        raise FeederDataError(f"malformed feeder data: {exc}") from exc

    validate_feeder(model)
    return model


def load_feeder_file(path) -> FeederModel:
    with open(path, encoding="utf-8") as fh:
        return load_feeder(fh.read())


def validate_feeder(model: FeederModel) -> None:
    if not model.nodes:
        raise FeederDataError("feeder has no nodes")
    if model.kv_base <= 0 or model.peak_kw <= 0:
        raise FeederDataError("kv_base and peak_kw must be positive")

    ids = [n.id for n in model.nodes]
    if len(set(ids)) != len(ids):
        raise FeederDataError("duplicate node ids")
    idset = set(ids)

    for n in model.nodes:
        if not n.phases or any(p not in PHASES for p in n.phases):
            raise FeederDataError(f"node {n.id}: invalid phases {n.phases!r}")
        for ph in n.loads:
            if ph not in n.phases:
                raise FeederDataError(f"node {n.id}: load on absent phase {ph}")

    parents: dict[str, str] = {}
    for ln in model.lines:
        if ln.from_node not in idset or ln.to_node not in idset:
            raise FeederDataError(f"line {ln.from_node}-{ln.to_node}: unknown node")
        if ln.to_node in parents:
            raise FeederDataError(f"node {ln.to_node} has two parents (cycle)")
        parents[ln.to_node] = ln.from_node
        z = ln.z_matrix()
        child = model.node(ln.to_node)
        parent_node = model.node(ln.from_node)
        missing = set(child.phases) - set(parent_node.phases)
        if missing:
            raise FeederDataError(
                f"line {ln.from_node}-{ln.to_node}: child phases {sorted(missing)} "
                "not carried by the parent node"
            )
        for r in range(3):
            for c in range(3):
                if (PHASES[r] not in child.phases or PHASES[c] not in child.phases) and z[
                    r, c
                ] != 0:
                    raise FeederDataError(
                        f"line {ln.from_node}-{ln.to_node}: impedance on absent phase"
                    )

    roots = [i for i in ids if i not in parents]
    if len(roots) != 1:
        raise FeederDataError(f"feeder must have exactly one root, found {roots}")

    # Walk up from every node; a repeated visit is a cycle, a dead end a
    # disconnected island.
    root = roots[0]
    for nid in ids:
        seen = set()
        cur = nid
        while cur != root:
            if cur in seen:
                raise FeederDataError(f"cycle detected at node {cur}")
            seen.add(cur)
            if cur not in parents:
                raise FeederDataError(f"node {cur} disconnected from substation")
            cur = parents[cur]

    for pv in model.pv_units:
        if pv.node not in idset:
            raise FeederDataError(f"pv unit references unknown node {pv.node}")
        if pv.rating_kw <= 0:
            raise FeederDataError(f"pv unit at {pv.node}: rating must be positive")
        for ph in pv.phases:
            if ph not in model.node(pv.node).phases:
                raise FeederDataError(f"pv unit at {pv.node}: injection on absent phase {ph}")


# ---------------------------------------------------------------------------
# Scenario application
# ---------------------------------------------------------------------------


def apply_scenario(feeder: FeederModel, scenario, hour: int, profile) -> FeederModel:
    """Fold a PV deployment into the feeder's constant-power loads.

    Each placement injects ``rating * profile(hour)`` kW at unity power
    factor, split equally across the unit's phases, as negative load.
    The returned model carries the placements in ``pv_units`` for
    traceability; their effect is already in the node loads.
    """
    factor = profile.value(hour)
    by_node: dict[str, FeederNode] = {n.id: n for n in feeder.nodes}
    units = []
    for node_id, phases, rating_kw in scenario.placements:
        if node_id not in by_node:
            raise FeederDataError(f"scenario places PV at unknown node {node_id}")
        units.append(
            PvUnit(node=node_id, phases=phases, rating_kw=rating_kw, profile_id=profile.name)
        )
        inj = rating_kw * factor
        if inj == 0:
            continue
        node = by_node[node_id]
        share = inj / len(phases)
        loads = dict(node.loads)
        for ph in phases:
            loads[ph] = loads.get(ph, 0j) - share
        by_node[node_id] = replace(node, loads=loads)
    return replace(
        feeder,
        nodes=tuple(by_node[n.id] for n in feeder.nodes),
        pv_units=tuple(units),
    )


# ---------------------------------------------------------------------------
# Forward-backward sweep
# ---------------------------------------------------------------------------


class FeederOps:
    """Topological order and per-line matrices, reusable across solves."""

    def __init__(self, model: FeederModel):
        self.model = model
        self.ids = tuple(n.id for n in model.nodes)
        self.index = {nid: i for i, nid in enumerate(self.ids)}
        self.root = self.index[model.root]

        n = len(self.ids)
        self.mask = np.zeros((n, 3), dtype=bool)
        self.loads = np.zeros((n, 3), dtype=complex)  # VA
        for i, node in enumerate(model.nodes):
            for ph in node.phases:
                self.mask[i, PHASES.index(ph)] = True
            self.loads[i] = node.load_vector() * 1e3

        self.children: list[list[int]] = [[] for _ in range(n)]
        self.parent = np.full(n, -1, dtype=int)
        self.z_line: list[np.ndarray | None] = [None] * n  # keyed by child index
        self.line_of_child: dict[int, FeederLine] = {}
        for ln in model.lines:
            f, t = self.index[ln.from_node], self.index[ln.to_node]
            self.children[f].append(t)
            self.parent[t] = f
            self.z_line[t] = ln.z_matrix()
            self.line_of_child[t] = ln

        # Depth-first order from the root; reversed it walks leaves-first.
        order = []
        stack = [self.root]
        while stack:
            i = stack.pop()
            order.append(i)
            stack.extend(self.children[i])
        self.topo = np.array(order, dtype=int)

        zb = model.z_base
        self.z_trafo = model.transformer.z_pu * zb * np.eye(3, dtype=complex)
        self.v_ln = model.v_ln_base


def solve_feeder(
    feeder: FeederModel | FeederOps,
    source_v: np.ndarray,
    tol: float = 1e-7,
    max_iter: int = 60,
) -> FeederSolution:
    """Forward-backward sweep at a fixed per-phase source voltage.

    ``source_v`` is the PCC voltage in per-unit of the feeder
    line-to-neutral base (three complex phasors).
    """
    ops = feeder if isinstance(feeder, FeederOps) else FeederOps(feeder)
    model = ops.model
    src = np.asarray(source_v, dtype=complex) * ops.v_ln
    if src.shape != (3,):
        raise ValueError("source_v must be three phasors")
    if np.any(np.abs(src) == 0):
        raise ValueError("source voltage must be nonzero on all phases")

    n = len(ops.ids)
    v = np.tile(src, (n, 1))
    i_line = np.zeros((n, 3), dtype=complex)  # current into node i through its feeding line
    head = np.zeros(3, dtype=complex)

    it = 0
    change = np.inf
    while it < max_iter:
        it += 1
        # Backward: accumulate load currents up the tree.
        i_line[:] = 0
        for i in ops.topo[::-1]:
            s = ops.loads[i]
            m = ops.mask[i]
            inode = np.zeros(3, dtype=complex)
            nz = m & (np.abs(s) > 0)
            inode[nz] = np.conj(s[nz] / v[i, nz])
            i_line[i] += inode
            p = ops.parent[i]
            if p >= 0:
                i_line[p] += i_line[i]
        head = i_line[ops.root].copy()

        # Forward: push voltages down from the source.
        v_new = v.copy()
        v_new[ops.root] = src - ops.z_trafo @ head
        for i in ops.topo:
            for c in ops.children[i]:
                v_new[c] = v_new[i] - ops.z_line[c] @ i_line[c]

        change = float(np.max(np.abs((v_new - v)[ops.mask]) / ops.v_ln))
        v = v_new
        low = np.abs(v[ops.mask]) / ops.v_ln < 0.5
        if np.any(low):
            raise FeederSolveError(
                "voltage collapse: node voltage below 0.5 pu during sweep",
                last_change=change,
            )
        if change <= tol:
            break
    if change > tol:
        raise FeederSolveError(
            f"sweep did not converge in {max_iter} iterations "
            f"(last change {change:.3e} pu)",
            last_change=change,
        )

    s_pcc = src * np.conj(head) / 1e3  # complex kW per phase, transmission side
    line_currents = {
        (ln.from_node, ln.to_node): i_line[ops.index[ln.to_node]].copy()
        for ln in model.lines
    }
    return FeederSolution(
        node_ids=ops.ids,
        v=v,
        phase_mask=ops.mask.copy(),
        line_currents=line_currents,
        pcc_power_kw=s_pcc,
        head_current=head,
        iterations=it,
        converged=True,
        v_ln_base=ops.v_ln,
    )


def pcc_power(sol: FeederSolution) -> np.ndarray:
    """Per-phase complex power (kW/kvar) drawn at the PCC."""
    if not sol.converged:
        raise FeederSolveError("solution did not converge")
    return sol.pcc_power_kw.copy()
