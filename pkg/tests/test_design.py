from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cipherloop.design import (
    DesignError,
    DivergentEmpiricalBoundError,
    IntegerizationError,
    PlantSpec,
    RegulatorInfeasibleError,
    StabilityMarginError,
    closed_loop_matrices,
    compute_modulus_bound,
    default_initial_reference,
    default_initial_state,
    integerize,
    solve_regulator,
    validate_design,
)
from cipherloop.exactmath import identity, invert_matrix, rational_matrix

from conftest import BENCH_ICS, bench_spec, deadbeat_spec


def zero_deadbeat_spec() -> PlantSpec:
    # Memoryless plant, unit gain, no feedback needed: the error dynamics
    # vanish identically, exercising the zero-matrix analytic branch.
    return PlantSpec(
        A=[["0"]], B=[["1"]], C=[["1"]], S=[["3/2"]],
        K=[["0"]], L=[["0"]], c_xp0="1", c_vp0="1",
    )


def test_regulator_frozen_benchmark(bench):
    spec, reg, _ = bench
    assert reg.state_map.tolist() == [[F(10), F(-100)], [F(0), F(10)]]
    assert reg.input_map.tolist() == [[F(15), F(-155, 2)], [F(0), F(5, 2)]]
    assert reg.unique
    ff = reg.feedforward(spec)
    assert ff.tolist() == [[F(15), F(-145, 2)], [F(0), F(5, 2)]]


def test_regulator_residuals_are_exact(bench):
    spec, reg, _ = bench
    res1 = reg.state_map @ spec.S - spec.A @ reg.state_map - spec.B @ reg.input_map
    res2 = spec.C @ reg.state_map - identity(spec.v)
    assert all(x == 0 for x in res1.flat)
    assert all(x == 0 for x in res2.flat)


def test_integerize_frozen_benchmark(bench):
    _, _, art = bench
    assert art.obs_dyn.tolist() == [[0, -1], [0, 1]]
    assert art.obs_input.tolist() == [[1, -1], [0, 2]]
    assert art.obs_sensor.tolist() == [[0, 5], [0, 0]]
    assert art.ref_dyn.tolist() == [[3, 4], [0, 2]]
    assert art.innov_gain == 1
    assert art.fb_gain.tolist() == [[0, -1], [0, 0]]
    assert art.ff_gain.tolist() == [[30, -145], [0, 5]]
    assert art.ref_scaled.tolist() == [[3, 4], [0, 2]]
    assert art.cayley.coeffs == (-5, 6)
    assert art.cayley.coeffs_ext == (1, -5, 6)
    assert art.cayley.window == 2
    assert art.stability_waiver  # gamma sits exactly on the loop radius
    assert art.gamma == F(1, 2) and art.s == F(1, 2)
    assert art.zoom.at(2) == F(1, 4)


def test_integerize_frozen_deadbeat(deadbeat):
    _, _, art = deadbeat
    assert art.obs_dyn.tolist() == [[0]]
    assert art.obs_input.tolist() == [[1]]
    assert art.obs_sensor.tolist() == [[1]]
    assert art.ref_dyn.tolist() == [[3]]
    assert art.fb_gain.tolist() == [[-2]]
    assert art.ff_gain.tolist() == [[3]]
    assert art.cayley.coeffs == (-3,)
    assert not art.stability_waiver  # gamma well above the deadbeat radius 0


def test_integerize_rejects_fractional_quotients():
    spec = deadbeat_spec()
    reg = solve_regulator(spec)
    with pytest.raises(IntegerizationError) as exc:
        integerize(spec, reg, "1/3", "1/2")
    names = {e[0] for e in exc.value.entries}
    assert names == {"obs_input", "obs_sensor", "ref_dyn", "innov_gain"}
    assert len(exc.value.entries) == 4


def test_integerize_stability_margin():
    spec = bench_spec()
    reg = solve_regulator(spec)
    with pytest.raises(StabilityMarginError):
        integerize(spec, reg, "1/4", "1/2")


def test_integerize_parameter_validation(bench):
    spec, reg, _ = bench
    for gamma in ("0", "1", "-1/2"):
        with pytest.raises(DesignError):
            integerize(spec, reg, gamma, "1/2")
    with pytest.raises(DesignError):
        integerize(spec, reg, "1/2", "0")


def test_regulator_infeasible():
    spec = PlantSpec(
        A=[["1"]], B=[["1"]], C=[["0"]], S=[["3/2"]],
        K=[["0"]], L=[["0"]], c_xp0="1", c_vp0="1",
    )
    with pytest.raises(RegulatorInfeasibleError):
        solve_regulator(spec)


def test_regulator_nonunique_flagged():
    spec = PlantSpec(
        A=[["1"]], B=[["1", "1"]], C=[["1"]], S=[["3/2"]],
        K=[["0"], ["0"]], L=[["0"]], c_xp0="1", c_vp0="1",
    )
    reg = solve_regulator(spec)
    assert not reg.unique
    res = reg.state_map @ spec.S - spec.A @ reg.state_map - spec.B @ reg.input_map
    assert all(x == 0 for x in res.flat)


def test_plant_spec_validation():
    with pytest.raises(ValueError):
        PlantSpec(A=[["1", "0"]], B=[["1"]], C=[["1"]], S=[["1"]],
                  K=[["0"]], L=[["0"]], c_xp0="1", c_vp0="1")
    with pytest.raises(ValueError):
        PlantSpec(A=[["1"]], B=[["1"]], C=[["1"]], S=[["1"]],
                  K=[["0"]], L=[["0"]], c_xp0="-1", c_vp0="1")


def test_default_initial_vectors(bench):
    spec, _, _ = bench
    assert list(default_initial_state(spec)) == [F(1), F(1)]
    assert list(default_initial_reference(spec)) == [F(1), F(0)]


def test_closed_loop_matrices_frozen(bench):
    spec, reg, art = bench
    a_cl, b_cl = closed_loop_matrices(spec, reg, art.gamma)
    assert a_cl.tolist() == [
        [F(0), F(-1), F(0), F(1)],
        [F(0), F(1), F(0), F(0)],
        [F(0), F(0), F(0), F(-1)],
        [F(0), F(0), F(0), F(1)],
    ]
    assert b_cl[:2, :2].tolist() == [[F(-30), F(150)], [F(0), F(-10)]]
    assert b_cl[2:, 2:].tolist() == [[F(0), F(10)], [F(0), F(0)]]


def test_modulus_bound_benchmark_empirical(bench):
    spec, reg, art = bench
    bound = compute_modulus_bound(spec, reg, art, horizon=60, **BENCH_ICS)
    assert bound.method == "empirical"
    assert bound.q_min == 2821
    assert abs(float(bound.c_pe) - 30.0333) < 1e-3
    assert bound.rho is None and bound.c_rho is None
    assert any("no contraction certificate" in n for n in bound.notes)
    # Default initial vectors coincide with the benchmark's, so omitting them
    # reproduces the same bound.
    assert compute_modulus_bound(spec, reg, art, horizon=60).q_min == 2821


def test_modulus_bound_deadbeat_analytic(deadbeat):
    spec, reg, art = deadbeat
    bound = compute_modulus_bound(spec, reg, art)
    assert bound.method == "analytic"
    assert bound.q_min == 781
    assert bound.rho == 0.5  # midpoint certificate for nilpotent dynamics
    assert abs(float(bound.c_rho) - 4 * 2**0.5) < 1e-6
    assert abs(float(bound.c_pe) - 48) < 1e-6
    assert any("nilpotent" in n for n in bound.notes)


def test_modulus_bound_zero_dynamics_analytic():
    spec = zero_deadbeat_spec()
    reg = solve_regulator(spec)
    art = integerize(spec, reg, "1/2", "1/2")
    bound = compute_modulus_bound(spec, reg, art)
    assert bound.method == "analytic"
    assert bound.q_min == 13
    assert bound.rho == 0.0 and bound.c_rho == 1
    assert any("identically zero" in n for n in bound.notes)


def test_modulus_bound_monotone_in_initial_bound():
    frozen = {1: 781, 2: 781, 10: 1421, 100: 12941}
    q_mins = []
    for c_xp0, expected in frozen.items():
        spec = PlantSpec(
            A=[["1"]], B=[["1"]], C=[["1"]], S=[["3/2"]],
            K=[["-1"]], L=[["1"]], c_xp0=c_xp0, c_vp0="1",
        )
        reg = solve_regulator(spec)
        art = integerize(spec, reg, "1/2", "1/2")
        bound = compute_modulus_bound(spec, reg, art)
        assert bound.q_min == expected
        q_mins.append(bound.q_min)
    assert q_mins == sorted(q_mins)
    assert q_mins[1] < q_mins[2] < q_mins[3]


def test_modulus_bound_divergent_envelope_rejected():
    # Defective dynamics on the unit circle: the plaintext envelope drifts
    # without bound, so no finite modulus may be certified.
    spec = PlantSpec(
        A=[["1/2", "1"], ["0", "1/2"]],
        B=[["1", "0"], ["0", "1"]],
        C=[["1", "0"], ["0", "1"]],
        S=[["1", "0"], ["0", "1"]],
        K=[["0", "0"], ["0", "0"]],
        L=[["0", "0"], ["0", "0"]],
        c_xp0="1", c_vp0="1",
    )
    reg = solve_regulator(spec)
    art = integerize(spec, reg, "1/2", "1/2")
    with pytest.raises(DivergentEmpiricalBoundError):
        compute_modulus_bound(spec, reg, art, horizon=30)


def test_modulus_bound_to_dict(deadbeat):
    spec, reg, art = deadbeat
    d = compute_modulus_bound(spec, reg, art).to_dict()
    assert d["method"] == "analytic"
    assert d["q_min"] == 781
    assert isinstance(d["c_pe"], str) and isinstance(d["c_pe_float"], float)
    assert isinstance(d["notes"], list)


def test_artifacts_with_bound(bench):
    spec, reg, art = bench
    assert art.bound is None
    bound = compute_modulus_bound(spec, reg, art, horizon=60, **BENCH_ICS)
    art2 = art.with_bound(bound)
    assert art2.bound is bound and art.bound is None
    assert set(art2.integer_matrix_table()) == {
        "obs_dyn", "obs_input", "obs_sensor", "ref_dyn",
        "fb_gain", "ff_gain", "ref_scaled",
    }


def test_validate_design_benchmark(bench):
    spec, reg, art = bench
    report = validate_design(spec, reg, art)
    assert report.ok
    by_check = {row["check"]: row for row in report.rows}
    assert by_check["zoom margin"]["status"] == "warn"
    assert "equality waiver" in by_check["zoom margin"]["detail"]
    assert by_check["regulator residual zero"]["status"] == "pass"
    assert by_check["characteristic coefficients"]["status"] == "pass"
    assert by_check["reference is persistent"]["status"] == "pass"
    assert by_check["initial observer state integerizes"]["status"] == "pass"


def test_validate_design_flags_bad_initial_state(bench):
    spec, reg, art = bench
    report = validate_design(spec, reg, art, xhat0=["1/3", "0"])
    assert not report.ok
    failing = [r for r in report.rows if r["status"] == "fail"]
    assert len(failing) == 1
    assert failing[0]["check"] == "initial observer state integerizes"


def test_validate_design_nonunique_warns():
    spec = PlantSpec(
        A=[["1"]], B=[["1", "1"]], C=[["1"]], S=[["3/2"]],
        K=[["-1/2"], ["-1/2"]], L=[["1"]], c_xp0="1", c_vp0="1",
    )
    reg = solve_regulator(spec)
    art = integerize(spec, reg, "1/2", "1/2")
    report = validate_design(spec, reg, art)
    warns = {r["check"] for r in report.rows if r["status"] == "warn"}
    assert "regulator uniqueness" in warns


def _unimodular(n, entries):
    lower = identity(n)
    upper = identity(n)
    it = iter(entries)
    for i in range(n):
        for j in range(i):
            lower[i, j] = F(next(it))
        for j in range(i + 1, n):
            upper[i, j] = F(next(it))
    return lower @ upper


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_regulator_exact_on_random_square_plants(data):
    # B = I and invertible C force state_map = inv(C) and
    # input_map = inv(C) S - A inv(C); the solver must recover both exactly.
    n = data.draw(st.integers(min_value=1, max_value=4))
    ints = st.integers(min_value=-3, max_value=3)
    c_mat = _unimodular(n, data.draw(st.lists(ints, min_size=n * n, max_size=n * n)))
    a_mat = rational_matrix(
        [[data.draw(ints) for _ in range(n)] for _ in range(n)]
    )
    s_mat = rational_matrix(
        [[data.draw(ints) for _ in range(n)] for _ in range(n)]
    )
    zero = identity(n) * 0
    spec = PlantSpec(
        A=a_mat, B=identity(n), C=c_mat, S=s_mat,
        K=zero, L=zero, c_xp0="1", c_vp0="1",
    )
    reg = solve_regulator(spec)
    assert reg.unique
    c_inv = invert_matrix(c_mat)
    assert (reg.state_map == c_inv).all()
    assert (reg.input_map == c_inv @ s_mat - a_mat @ c_inv).all()
