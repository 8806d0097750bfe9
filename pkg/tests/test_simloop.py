import dataclasses
from fractions import Fraction as F

import pytest

from cipherloop.design import CayleyCoefficients, PlantSpec, integerize, solve_regulator
from cipherloop.he import keygen
from cipherloop.simloop import (
    LoopConfig,
    LoopError,
    LoopInvariantError,
    NonIntegerInitialStateError,
    init_loop,
    run_closed_loop,
    run_plaintext_loop,
)

from conftest import BENCH_ICS


def make_loop(bench, scheme="a", q=2**15, horizon=20, seed=1, backend="mock",
              ics=None, artifacts=None):
    spec, reg, art = bench
    if artifacts is not None:
        art = artifacts
    if backend == "mock":
        params = keygen("mock", q=q, seed=seed)
    else:
        params = keygen("paillier", bits=256, seed=seed)
    ics = dict(BENCH_ICS if ics is None else ics)
    return LoopConfig(spec=spec, reg=reg, artifacts=art, scheme=scheme,
                      he_params=params, horizon=horizon, **ics)


def test_benchmark_scheme_a_short_run(bench):
    result = run_closed_loop(make_loop(bench, horizon=20))
    assert result.first_restoration_failure is None
    assert result.first_overflow is None
    assert len(result.records) == 20
    first, last = result.records[0], result.records[-1]
    assert first.k == 0 and first.y_err_inf == F(1, 10)
    assert first.figure4_norm == 0 and first.internal_state_inf == 0
    assert first.l_k == 1
    assert last.y_err_inf < first.y_err_inf
    assert result.final_tracking_error < F(1, 10**3)


def test_dual_route_agreement(bench):
    # The encrypted loop and the plaintext loop must produce the identical
    # restored-sum norm sequence step for step.
    spec, reg, art = bench
    result = run_closed_loop(make_loop(bench, horizon=25))
    plain = list(run_plaintext_loop(spec, reg, art, horizon=25, **BENCH_ICS))
    assert [r.figure4_norm for r in result.records] == \
        [p.figure4_norm for p in plain[:25]]
    assert [r.y_err_inf for r in result.records] == \
        [p.y_err_inf for p in plain[:25]]


def test_plaintext_loop_yields_inclusive_horizon(bench):
    spec, reg, art = bench
    plain = list(run_plaintext_loop(spec, reg, art, horizon=10, **BENCH_ICS))
    assert [p.k for p in plain] == list(range(11))
    assert plain[0].y_err_inf == F(1, 10)


def test_scheme_b_internal_state_equals_restored_sum(bench):
    result = run_closed_loop(make_loop(bench, scheme="b", horizon=20))
    assert result.first_restoration_failure is None
    for rec in result.records:
        assert rec.internal_state_inf == rec.figure4_norm
    assert result.max_internal_state < F(2**15, 2)


def test_scheme_a_internal_state_grows(bench):
    result = run_closed_loop(make_loop(bench, horizon=25))
    internals = [r.internal_state_inf for r in result.records]
    assert internals[-1] > internals[5]
    assert max(internals) == result.max_internal_state


def test_naive_scheme_overflows_at_frozen_step(bench):
    result = run_closed_loop(make_loop(bench, scheme="naive", q=2**10, horizon=20))
    assert result.first_overflow == 5
    assert result.first_restoration_failure == 5
    for rec in result.records[:5]:
        assert rec.restoration_exact and not rec.overflow_detected


def test_naive_scheme_exact_at_large_modulus(bench):
    result = run_closed_loop(make_loop(bench, scheme="naive", q=2**60, horizon=20))
    assert result.first_overflow is None
    assert result.first_restoration_failure is None


def test_run_is_deterministic(bench):
    a = run_closed_loop(make_loop(bench, horizon=12, seed=9))
    b = run_closed_loop(make_loop(bench, horizon=12, seed=9))
    assert a.records == b.records
    assert a.final_tracking_error == b.final_tracking_error


def test_paillier_matches_mock_records(bench):
    spec, reg, art = bench
    paillier_params = keygen("paillier", bits=256, seed=1)
    paillier = run_closed_loop(LoopConfig(
        spec=spec, reg=reg, artifacts=art, scheme="a",
        he_params=paillier_params, horizon=8, **BENCH_ICS,
    ))
    mock = run_closed_loop(LoopConfig(
        spec=spec, reg=reg, artifacts=art, scheme="a",
        he_params=keygen("mock", q=paillier_params.q, seed=1), horizon=8,
        **BENCH_ICS,
    ))
    # Identical plaintext trajectory under the same modulus; only the
    # ciphertext representation differs between the backends.
    assert paillier.records == mock.records


def test_horizon_zero(bench):
    result = run_closed_loop(make_loop(bench, horizon=0))
    assert result.records == ()
    assert result.final_tracking_error == F(1, 10)
    assert result.max_figure4_norm == 0
    assert result.first_restoration_failure is None


def test_non_integer_initial_state_rejected(bench):
    ics = dict(BENCH_ICS)
    ics["xhat0"] = ["1/3", "0"]
    with pytest.raises(NonIntegerInitialStateError):
        run_closed_loop(make_loop(bench, ics=ics))


def test_loop_config_validation(bench):
    spec, reg, art = bench
    params = keygen("mock", q=2**10, seed=0)
    with pytest.raises(LoopError):
        LoopConfig(spec=spec, reg=reg, artifacts=art, scheme="c",
                   he_params=params, horizon=5, **BENCH_ICS)
    with pytest.raises(LoopError):
        LoopConfig(spec=spec, reg=reg, artifacts=art, scheme="a",
                   he_params=params, horizon=-1, **BENCH_ICS)
    bad = dict(BENCH_ICS)
    bad["x_p0"] = ["1"]
    with pytest.raises(LoopError):
        LoopConfig(spec=spec, reg=reg, artifacts=art, scheme="a",
                   he_params=params, horizon=5, **bad)


def test_corrupted_coefficients_trip_the_invariant(bench):
    spec, reg, art = bench
    broken = dataclasses.replace(
        art, cayley=CayleyCoefficients(coeffs=(-5, 7), coeffs_ext=(1, -5, 7))
    )
    with pytest.raises(LoopInvariantError):
        run_closed_loop(make_loop(bench, horizon=5, artifacts=broken))


def singular_reference_system():
    # The reference dynamics collapse to zero, so the scaled transition is
    # singular and the identity check cannot be seeded backwards.
    spec = PlantSpec(
        A=[["1/2"]], B=[["1"]], C=[["1"]], S=[["0"]],
        K=[["-1/2"]], L=[["1"]], c_xp0="1", c_vp0="1",
    )
    reg = solve_regulator(spec)
    art = integerize(spec, reg, "1/2", "1/2")
    return spec, reg, art


def test_singular_reference_defers_identity_check():
    spec, reg, art = singular_reference_system()
    assert art.ref_dyn.tolist() == [[0]]
    params = keygen("mock", q=2**20, seed=0)
    cfg = LoopConfig(
        spec=spec, reg=reg, artifacts=art, scheme="a", he_params=params,
        horizon=10, x_p0=["1"], v_p0=["1"], xhat0=["0"], vhat0=["0"],
    )
    _, _, _, oracle, _, _ = init_loop(cfg)
    assert oracle.identity_from == art.cayley.window == 1
    result = run_closed_loop(cfg)
    assert result.first_restoration_failure is None


def test_summary_dict_contents(bench):
    result = run_closed_loop(make_loop(bench, horizon=10))
    d = result.summary_dict()
    assert d["scheme"] == "a" and d["backend"] == "mock"
    assert d["q"] == str(2**15)
    assert d["horizon"] == 10 and d["seed"] == 1
    assert d["all_restorations_exact"] is True
    assert set(d["final_tracking_error"]) == {"exact", "float"}
