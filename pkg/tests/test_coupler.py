import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pvcosim import (
    attach,
    boundary_error,
    equivalent_load,
    load_feeder,
    run_step,
    solve_three_sequence,
    source_voltage,
    verify_fixed_point,
)
from pvcosim.coupler import BoundaryState, CoSimOptions, CosimNonConvergenceError
from pvcosim.scenarios import PvScenario
from pvcosim.sequences import A_ANA, phases_from_sequences
from pvcosim.transmission import SolverOptions

from .conftest import constant_load_feeder


@pytest.fixture(scope="module")
def attachments(ieee9, desk13):
    return [attach(ieee9, b, desk13) for b in (5, 6, 8)]


@pytest.fixture(scope="module")
def base_result(ieee9, attachments):
    return run_step(ieee9, attachments, 12, None)


# ---------------------------------------------------------------------------
# boundary_error
# ---------------------------------------------------------------------------


def _state(v, s, it=0):
    return BoundaryState(v_phase=np.asarray(v, complex), s_phase=np.asarray(s, complex), iteration=it)


def test_boundary_error_identical_states_is_zero():
    v = np.ones((2, 3), dtype=complex)
    s = np.full((2, 3), 0.1 + 0.02j)
    assert boundary_error(_state(v, s), _state(v, s, 1)) == 0.0


def test_boundary_error_single_entry():
    v = np.ones((1, 3), dtype=complex)
    s = np.zeros((1, 3), dtype=complex)
    v2 = v.copy()
    v2[0, 1] += 0.01
    assert boundary_error(_state(v, s), _state(v2, s, 1)) == pytest.approx(0.01)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_boundary_error_matches_recomputation(seed):
    rng = np.random.default_rng(seed)
    v1, v2 = (rng.normal(size=(2, 3)) + 1j * rng.normal(size=(2, 3)) for _ in range(2))
    s1, s2 = (rng.normal(size=(2, 3)) + 1j * rng.normal(size=(2, 3)) for _ in range(2))
    got = boundary_error(_state(v1, s1), _state(v2, s2, 1))
    expect = max(np.abs(v2 - v1).max(), np.abs(s2 - s1).max())
    assert got == pytest.approx(expect)


def test_boundary_error_mismatched_sets():
    with pytest.raises(ValueError):
        boundary_error(
            _state(np.ones((1, 3)), np.zeros((1, 3))),
            _state(np.ones((2, 3)), np.zeros((2, 3)), 1),
        )


def test_voltage_only_variant():
    v = np.ones((1, 3), dtype=complex)
    s = np.zeros((1, 3), dtype=complex)
    s2 = s + 0.5
    assert boundary_error(_state(v, s), _state(v, s2, 1)) == pytest.approx(0.5)
    assert boundary_error(_state(v, s), _state(v, s2, 1), voltage_only=True) == 0.0


# ---------------------------------------------------------------------------
# run_step
# ---------------------------------------------------------------------------


def test_degenerate_feeders_reproduce_plain_solve(ieee9):
    atts = []
    for b in ieee9.buses:
        if b.load_p:
            f = load_feeder(constant_load_feeder(b.load_p * 1e5, b.load_q * 1e5))
            atts.append(attach(ieee9, b.id, f))
    result = run_step(ieee9, atts, 12, None)
    assert result.fpi_iterations <= 2

    plain = solve_three_sequence(ieee9)
    for att in atts:
        i = plain.index_of(att.bus)
        j = result.seq_solution.index_of(att.bus)
        assert abs(plain.v1[i] - result.seq_solution.v1[j]) < 1e-4


def test_iteration_accounting(base_result):
    assert base_result.fpi_iterations == len(base_result.boundary_history) - 1


def test_fixed_point_certificate(ieee9, attachments, base_result):
    shift = verify_fixed_point(ieee9, attachments, base_result)
    assert shift <= CoSimOptions().tol_boundary


def test_boundary_conservation(ieee9, attachments, base_result):
    # What transmission served at each PCC (its load model) vs what the
    # feeders actually drew at the final voltages.
    final = base_result.final_boundary
    sol = base_result.seq_solution
    tol = CoSimOptions().tol_boundary
    for k, att in enumerate(attachments):
        i = sol.index_of(att.bus)
        served = sol.loads_phase[i]
        assert np.max(np.abs(served - final.s_phase[k])) <= 10 * tol


def test_under_relaxation_neutral_at_convergence(ieee9, attachments):
    results = {}
    for lam in (1.0, 0.7, 0.5):
        opts = CoSimOptions(under_relaxation=lam)
        results[lam] = run_step(ieee9, attachments, 12, None, opts)
    ref = results[1.0].final_boundary
    tol = CoSimOptions().tol_boundary
    for lam, res in results.items():
        fb = res.final_boundary
        assert np.max(np.abs(fb.v_phase - ref.v_phase)) <= tol
        assert np.max(np.abs(fb.s_phase - ref.s_phase)) <= tol


def test_non_convergence_carries_history(ieee9, attachments):
    with pytest.raises(CosimNonConvergenceError) as err:
        run_step(ieee9, attachments, 12, None, CoSimOptions(max_fpi=1, tol_boundary=1e-12))
    assert len(err.value.history) >= 2


def test_attach_validates_bus(ieee9, desk13):
    with pytest.raises(ValueError, match="unknown bus"):
        attach(ieee9, 99, desk13)
    with pytest.raises(ValueError, match="pq"):
        attach(ieee9, 1, desk13)


def test_solver_errors_tagged_with_side(ieee9):
    from pvcosim.coupler import CosimError

    from .conftest import small_feeder

    # distribution side: load beyond the feeder line's transfer limit
    sick = load_feeder(small_feeder(load_kw=4.0e5, load_kvar=2.0e5))
    with pytest.raises(CosimError) as err:
        run_step(ieee9, [attach(ieee9, 5, sick)], 12, None)
    assert err.value.side == "distribution"

    # transmission side: boundary load far beyond transfer capability but
    # harmless for the ideal degenerate feeder itself
    heavy = load_feeder(constant_load_feeder(9.0e5, 3.0e5))
    with pytest.raises(CosimError) as err2:
        run_step(ieee9, [attach(ieee9, 5, heavy)], 12, None)
    assert err2.value.side == "transmission"


def test_multiple_attachments_per_bus(ieee9):
    one = load_feeder(constant_load_feeder(25e3, 6e3))
    double = load_feeder(constant_load_feeder(50e3, 12e3))
    two_small = run_step(ieee9, [attach(ieee9, 5, one), attach(ieee9, 5, one)], 12, None)
    one_big = run_step(ieee9, [attach(ieee9, 5, double)], 12, None)
    va = two_small.seq_solution.v1[two_small.seq_solution.index_of(5)]
    vb = one_big.seq_solution.v1[one_big.seq_solution.index_of(5)]
    assert abs(va - vb) < 1e-6


# ---------------------------------------------------------------------------
# equivalent_load / source_voltage
# ---------------------------------------------------------------------------


def test_equivalent_load_zero_feeder(ieee9):
    feeder = load_feeder(constant_load_feeder(1e-6, 0.0))
    att = attach(ieee9, 5, feeder)
    from pvcosim import solve_feeder

    fs = solve_feeder(feeder, phases_from_sequences(0.0, 1.0, 0.0))
    s = equivalent_load(fs, att)
    assert np.max(np.abs(s)) < 1e-10


def test_equivalent_load_balanced_feeder_has_no_negative_sequence(ieee9, desk13):
    # a perfectly balanced degenerate feeder yields phase powers whose
    # sequence current content is pure positive
    feeder = load_feeder(constant_load_feeder(30e3, 9e3))
    att = attach(ieee9, 5, feeder)
    from pvcosim import solve_feeder
    from pvcosim.sequences import phase_currents

    fs = solve_feeder(feeder, phases_from_sequences(0.0, 1.0, 0.0))
    s = equivalent_load(fs, att)
    i_ph = phase_currents(s, phases_from_sequences(0.0, 1.0, 0.0))
    i_seq = A_ANA @ i_ph
    assert abs(i_seq[0]) < 1e-9
    assert abs(i_seq[2]) < 1e-9


def test_unbalanced_feeder_excites_negative_sequence_at_pcc(ieee9):
    doc = json.loads(constant_load_feeder(45e3, 11e3))
    loads = doc["nodes"][0]["loads"]
    loads["a"][0] *= 1.05
    loads["c"][0] *= 0.95
    feeder = load_feeder(json.dumps(doc))
    atts = [attach(ieee9, 5, feeder)]
    res = run_step(ieee9, atts, 12, None)
    sol = res.seq_solution
    i = sol.index_of(5)
    assert abs(sol.v2[i]) > 1e-5
    # cross-check against a direct three-sequence solve with the same
    # boundary powers on the same effective network
    from pvcosim.coupler import effective_network

    direct = solve_three_sequence(
        effective_network(ieee9, atts), {5: res.final_boundary.s_phase[0]}, SolverOptions()
    )
    assert abs(direct.v2[direct.index_of(5)] - sol.v2[i]) < 1e-4


def test_source_voltage_balanced(base_result, attachments):
    sol = base_result.seq_solution

    v = source_voltage(sol, attachments[0])
    i = sol.index_of(attachments[0].bus)
    expected = phases_from_sequences(sol.v0[i], sol.v1[i], sol.v2[i])
    assert np.allclose(v, expected, atol=1e-15)


def test_source_voltage_reconstruction_spread():
    from pvcosim.transmission import SeqSolution

    sol = SeqSolution(
        bus_ids=(5,),
        v0=np.array([0j]),
        v1=np.array([1.05 + 0j]),
        v2=np.array([0.002 + 0j]),
        slack_power_pu=0j,
        flows={},
        iterations_outer=1,
        iterations_nr=1,
        max_mismatch=0.0,
    )

    class Att:
        bus = 5

    v = source_voltage(sol, Att())
    mags = np.abs(v)
    assert mags.max() - mags.min() <= 2 * 0.002 + 1e-12
    assert mags.max() - mags.min() > 0


def test_pcc_band_under_sweeps(ieee9, attachments, desk13, profile):
    from pvcosim import generate

    mags = []
    for level in (0, 50, 100):
        scen = None
        if level:
            s = generate(desk13, [level], 1, master_seed=1)[0]
            scen = [s, s, s]
        res = run_step(ieee9, attachments, 12, scen, profile=profile)
        mags.append(np.abs(res.final_boundary.v_phase))
    allmag = np.concatenate([m.ravel() for m in mags])
    assert allmag.min() >= 1.04
    assert allmag.max() <= 1.07
