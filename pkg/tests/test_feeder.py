import json

import numpy as np
import pytest

from pvcosim import apply_scenario, load_feeder, pcc_power, solve_feeder
from pvcosim.feeder import FeederDataError, FeederSolveError
from pvcosim.scenarios import GenerationProfile, PvScenario
from pvcosim.sequences import phases_from_sequences

from .conftest import constant_load_feeder, small_feeder
from .oracles import feeder_nodal_solve, two_bus_constant_power

BAL = phases_from_sequences(0.0, 1.0, 0.0)

# Receiving-end voltage of the one-line fixture (2+4j ohm, 3000 kW +
# 1200 kvar, 34.5 kV), from the closed-form two-bus equation, frozen.
SMALL_FEEDER_V_END = 19348.392881366304 - 481.9619638452528j


def noon_profile(name="default"):
    f = [0.0] * 24
    f[12] = 1.0
    f[10] = 0.5
    return GenerationProfile(name=name, factors=tuple(f))


def test_bundled_feeder_shape(desk13):
    assert len(desk13.nodes) == 13
    assert len(desk13.lines) == 12
    assert desk13.root == "650"
    assert len(desk13.customers()) == 10
    assert desk13.peak_kw == pytest.approx(
        sum(sum(s.real for s in n.loads.values()) for n in desk13.nodes)
    )


def test_cycle_rejected():
    doc = json.loads(small_feeder())
    doc["lines"].append(
        {
            "from": "end",
            "to": "src",
            "z_abc": [[[0, 0]] * 3 for _ in range(3)],
        }
    )
    with pytest.raises(FeederDataError):
        load_feeder(json.dumps(doc))


def test_disconnected_node_rejected():
    doc = json.loads(small_feeder())
    doc["nodes"].append({"id": "orphan", "phases": "abc"})
    with pytest.raises(FeederDataError, match="one root"):
        load_feeder(json.dumps(doc))


def test_load_on_absent_phase_rejected():
    doc = json.loads(small_feeder())
    doc["nodes"][1]["loads"]["b"] = [100.0, 10.0]
    with pytest.raises(FeederDataError, match="absent phase"):
        load_feeder(json.dumps(doc))


def test_impedance_on_absent_phase_rejected():
    doc = json.loads(small_feeder())
    doc["lines"][0]["z_abc"][1][1] = [1.0, 1.0]
    with pytest.raises(FeederDataError, match="absent phase"):
        load_feeder(json.dumps(doc))


def test_child_phases_must_be_subset_of_parent():
    doc = json.loads(small_feeder())
    doc["nodes"][0]["phases"] = "ab"
    doc["nodes"].append({"id": "tail", "phases": "c"})
    doc["lines"].append(
        {"from": "end", "to": "tail", "z_abc": [[[0, 0]] * 3 for _ in range(3)]}
    )
    with pytest.raises(FeederDataError):
        load_feeder(json.dumps(doc))


def test_parse_error_reports_line():
    with pytest.raises(FeederDataError, match="line"):
        load_feeder("{\n nope\n}")


def test_single_node_feeder_is_valid():
    model = load_feeder(constant_load_feeder(1000.0, 300.0))
    assert len(model.nodes) == 1
    sol = solve_feeder(model, BAL)
    assert np.allclose(sol.pcc_power_kw.sum(), 1000 + 300j, atol=1e-9)


def test_zero_load_feeder_flat_voltage(desk13):
    stripped = json.loads((__import__("pvcosim").data_path("desk13.json")).read_text())
    for n in stripped["nodes"]:
        n.pop("loads", None)
    model = load_feeder(json.dumps(stripped))
    sol = solve_feeder(model, BAL)
    for i in range(len(sol.node_ids)):
        m = sol.phase_mask[i]
        assert np.allclose(sol.v[i][m], (BAL * model.v_ln_base)[m], atol=1e-9)
    assert np.allclose(sol.pcc_power_kw, 0, atol=1e-12)


def test_single_line_matches_closed_form():
    model = load_feeder(small_feeder())
    sol = solve_feeder(model, BAL, tol=1e-12)
    v_end = sol.voltage("end")[0]
    assert abs(v_end - SMALL_FEEDER_V_END) < 1e-6 * model.v_ln_base
    live = two_bus_constant_power(model.v_ln_base + 0j, 2 + 4j, (3000 + 1200j) * 1e3)
    assert abs(v_end - live) < 1e-6 * model.v_ln_base


def test_bundled_feeder_matches_nodal_oracle(desk13):
    sol = solve_feeder(desk13, BAL, tol=1e-10)
    ref = feeder_nodal_solve(desk13, BAL, tol=1e-12)
    worst = 0.0
    for i, nid in enumerate(sol.node_ids):
        node = desk13.nodes[i]
        for ph in node.phases:
            k = "abc".index(ph)
            worst = max(worst, abs(sol.v[i, k] - ref[(nid, ph)]) / desk13.v_ln_base)
    assert worst < 1e-6


def test_pcc_power_zero_load():
    model = load_feeder(constant_load_feeder(0.001, 0.0))
    # zero everything manually: single node, zero load not allowed by peak>0
    sol = solve_feeder(model, BAL)
    assert abs(sol.pcc_power_kw.sum().real - 0.001) < 1e-9


def test_reverse_flow_when_pv_exceeds_load():
    model = load_feeder(small_feeder(load_kw=1000.0, load_kvar=300.0))
    scen = PvScenario(0, 100, placements=(("end", "a", 5000.0),), seed=1)
    applied = apply_scenario(model, scen, 12, noon_profile())
    sol = solve_feeder(applied, BAL)
    assert pcc_power(sol).sum().real < 0


def test_energy_audit(desk13, profile):
    scen = PvScenario(0, 50, placements=tuple(
        (n.id, "".join(sorted(n.loads)), 2000.0) for n in desk13.customers()[:5]
    ), seed=1)
    applied = apply_scenario(desk13, scen, 12, profile)
    sol = solve_feeder(applied, BAL, tol=1e-10)

    net_load = sum(n.load_vector().sum() for n in applied.nodes) * 1e3
    loss = 0j
    for ln in applied.lines:
        i = sol.line_currents[(ln.from_node, ln.to_node)]
        vf = sol.voltage(ln.from_node)
        vt = sol.voltage(ln.to_node)
        loss += ((vf - vt) * np.conj(i)).sum()
    src = BAL * applied.v_ln_base
    vroot = sol.voltage(applied.root)
    loss += ((src - vroot) * np.conj(sol.head_current)).sum()

    audit = sol.pcc_power_kw.sum() * 1e3 - net_load - loss
    s_base = applied.mva_base * 1e6
    assert abs(audit) / s_base < 1e-6


def test_kcl_at_every_node(desk13):
    sol = solve_feeder(desk13, BAL, tol=1e-10)
    children = {}
    for ln in desk13.lines:
        children.setdefault(ln.from_node, []).append(ln.to_node)
    i_base = desk13.mva_base * 1e6 / 3 / desk13.v_ln_base
    for i, node in enumerate(desk13.nodes):
        into = (
            sol.head_current
            if node.id == desk13.root
            else sol.line_currents[
                next((l.from_node, l.to_node) for l in desk13.lines if l.to_node == node.id)
            ]
        )
        out = np.zeros(3, dtype=complex)
        for ch in children.get(node.id, []):
            out += sol.line_currents[
                next((l.from_node, l.to_node) for l in desk13.lines if l.to_node == ch)
            ]
        load_i = np.zeros(3, dtype=complex)
        for ph, s_kw in node.loads.items():
            k = "abc".index(ph)
            load_i[k] = np.conj(s_kw * 1e3 / sol.v[i, k])
        residual = np.abs(into - out - load_i) / i_base
        assert residual.max() < 1e-6


def test_voltage_drop_consistency(desk13):
    sol = solve_feeder(desk13, BAL, tol=1e-10)
    for ln in desk13.lines:
        vf = sol.voltage(ln.from_node)
        vt = sol.voltage(ln.to_node)
        i = sol.line_currents[(ln.from_node, ln.to_node)]
        drop = ln.z_matrix() @ i
        child = desk13.node(ln.to_node)
        for ph in child.phases:
            k = "abc".index(ph)
            assert abs((vf[k] - vt[k]) - drop[k]) <= 1e-9 * max(abs(vf[k]), 1.0)


def test_monotone_pv_response(desk13):
    prev = np.inf
    for rating in (0.0, 1000.0, 2000.0, 4000.0):
        scen = PvScenario(0, 10, placements=(("671", "abc", rating),), seed=1) \
            if rating else None
        model = apply_scenario(desk13, scen, 12, noon_profile()) if scen else desk13
        sol = solve_feeder(model, BAL)
        p = sol.pcc_power_kw.sum().real
        assert p <= prev + 1e-9
        prev = p


def test_determinism(desk13):
    a = solve_feeder(desk13, BAL)
    b = solve_feeder(desk13, BAL)
    assert np.array_equal(a.v, b.v)
    assert np.array_equal(a.pcc_power_kw, b.pcc_power_kw)


def test_apply_scenario_night_is_identity(desk13, profile):
    scen = PvScenario(0, 10, placements=(("671", "abc", 1000.0),), seed=1)
    applied = apply_scenario(desk13, scen, 2, profile)
    for before, after in zip(desk13.nodes, applied.nodes):
        assert before.loads == after.loads


def test_apply_scenario_scales_linearly(desk13):
    scen = PvScenario(0, 10, placements=(("671", "a", 100.0),), seed=1)
    applied = apply_scenario(desk13, scen, 10, noon_profile())  # factor 0.5
    before = desk13.node("671").loads["a"]
    after = applied.node("671").loads["a"]
    assert before - after == pytest.approx(50.0)


def test_apply_scenario_total_injection(desk13, profile):
    placements = tuple(
        (n.id, "".join(sorted(n.loads)), 1500.0) for n in desk13.customers()
    )
    scen = PvScenario(0, 100, placements=placements, seed=1)
    applied = apply_scenario(desk13, scen, 12, profile)
    delta = sum(
        (b.load_vector().sum() - a.load_vector().sum()).real
        for b, a in zip(desk13.nodes, applied.nodes)
    )
    assert delta == pytest.approx(1500.0 * len(placements))


def test_apply_scenario_unknown_node(desk13, profile):
    scen = PvScenario(0, 10, placements=(("nowhere", "a", 100.0),), seed=1)
    with pytest.raises(FeederDataError, match="unknown node"):
        apply_scenario(desk13, scen, 12, profile)


def test_voltage_collapse_aborts():
    model = load_feeder(small_feeder(load_kw=60000.0, load_kvar=30000.0))
    with pytest.raises(FeederSolveError, match="collapse|converge"):
        solve_feeder(model, BAL)


def test_non_convergence_reports_change(desk13):
    with pytest.raises(FeederSolveError) as err:
        solve_feeder(desk13, BAL, max_iter=1, tol=1e-12)
    assert err.value.last_change is not None
