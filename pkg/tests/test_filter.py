import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit, logit

from stockloan.errors import AllocationError, DomainError
from stockloan.filter import (BLOCK, BeliefState, affine_consistency, affine_drift, coupled_comparison, innovations,
                              simulate, step_log_odds)
from stockloan.model import ModelParams

P = ModelParams(a=0.15, b=0.01, gamma=0.08, r=0.03)


def test_belief_state_consistency():
    s = BeliefState.from_pi(0.3)
    assert expit(s.log_odds) == pytest.approx(0.3, abs=1e-15)
    assert BeliefState.from_log_odds(s.log_odds).pi == pytest.approx(0.3, abs=1e-15)


@pytest.mark.parametrize("pi", [0.0, 1.0, -0.1, 1.5])
def test_belief_state_rejects_faces(pi):
    with pytest.raises(DomainError):
        BeliefState.from_pi(pi)


def test_step_log_odds_symmetric_point():
    s = BeliefState.from_pi(0.5)
    assert step_log_odds(s, 0.01, 0.0, 0.3).log_odds == s.log_odds


def test_step_log_odds_zero_delta_is_identity():
    s = BeliefState.from_pi(0.8)
    assert step_log_odds(s, 0.01, 0.7, 0.0).log_odds == s.log_odds


def test_step_log_odds_hand_example():
    s = BeliefState.from_pi(0.75)
    out = step_log_odds(s, 0.01, 0.1, 0.2)
    assert out.log_odds == pytest.approx(math.log(3) + 0.0001 + 0.02, abs=1e-14)
    # one Euler step on d pi = Delta pi (1 - pi) dW agrees to O(dt)
    euler = 0.75 + 0.2 * 0.75 * 0.25 * 0.1
    assert abs(out.pi - euler) < 0.01


def test_step_log_odds_rejects_bad_dt():
    with pytest.raises(DomainError):
        step_log_odds(BeliefState.from_pi(0.5), 0.0, 0.1, 0.2)


@given(st.floats(1e-6, 1 - 1e-6), st.floats(1e-5, 0.1), st.floats(-3, 3), st.floats(0.01, 2.0))
def test_step_log_odds_stays_inside(pi, dt, z, delta):
    out = step_log_odds(BeliefState.from_pi(pi), dt, z * math.sqrt(dt), delta)
    assert 0.0 < out.pi < 1.0
    assert math.isfinite(out.log_odds)


def test_simulate_zero_steps():
    b = simulate(P, 100.0, 0.4, 0.01, 0, 5, seed=3)
    assert b.x.shape == (5, 1)
    assert np.all(b.x == 100.0)
    assert np.all(b.pi == 0.4)
    assert affine_consistency(b, P) == 0.0


def test_simulate_invariants():
    b = simulate(P, 100.0, 0.4, 0.01, 100, 500, seed=1)
    assert np.all(b.x > 0)
    assert np.all((b.pi > 0) & (b.pi < 1))
    assert np.all(np.isfinite(b.log_odds))
    d = P.delta_drift
    mu = d * b.pi + P.b
    assert np.all((P.b <= mu) & (mu <= P.a))
    assert b.n_paths == 500 and b.n_steps == 100


def test_simulate_is_deterministic():
    b1 = simulate(P, 100.0, 0.4, 0.01, 20, 300, seed=9)
    b2 = simulate(P, 100.0, 0.4, 0.01, 20, 300, seed=9)
    b3 = simulate(P, 100.0, 0.4, 0.01, 20, 300, seed=10)
    assert np.array_equal(b1.x, b2.x)
    assert not np.array_equal(b1.x, b3.x)


def test_paths_independent_of_worker_count():
    n = 2 * BLOCK + 17
    a = innovations(5, n, 4, 0.01, workers=1)
    b = innovations(5, n, 4, 0.01, workers=3)
    assert np.array_equal(a, b)


def test_path_prefix_is_stable():
    # path i does not depend on how many paths are requested
    a = innovations(5, 10, 6, 0.01)
    b = innovations(5, BLOCK + 3, 6, 0.01)
    assert np.array_equal(a, b[:10])


def test_streams_are_distinct():
    a = innovations(5, 10, 6, 0.01, stream=0)
    b = innovations(5, 10, 6, 0.01, stream=1)
    assert not np.array_equal(a, b)


def test_simulate_rejects_bad_inputs():
    with pytest.raises(DomainError):
        simulate(P, 0.0, 0.4, 0.01, 10, 10)
    with pytest.raises(DomainError):
        simulate(P, 100.0, 1.0, 0.01, 10, 10)
    with pytest.raises(DomainError):
        simulate(P, 100.0, 0.4, 0.0, 10, 10)
    with pytest.raises(AllocationError):
        simulate(P, 100.0, 0.4, 0.01, 10**6, 10**4)


def test_posterior_martingale():
    b = simulate(P, 100.0, 0.35, 0.02, 50, 20_000, seed=2)
    for n in (10, 25, 50):
        col = b.pi[:, n]
        se = col.std(ddof=1) / math.sqrt(col.size)
        assert abs(col.mean() - 0.35) <= 3 * se + 1e-12


def test_bear_limit_is_geometric():
    ell0 = -13.8  # pi0 about 1e-6
    b = simulate(P, 100.0, float(expit(ell0)), 0.01, 100, 20_000, seed=4)
    y = math.exp(P.gamma - P.b) * b.x[:, -1]
    se = y.std(ddof=1) / math.sqrt(y.size)
    assert abs(y.mean() - 100.0) <= 3 * se


@pytest.mark.parametrize("lo, hi", [(0.5 - 1e-6, 0.5), (0.2, 0.8), (1e-4, 1e-4 + 1e-9)])
def test_coupled_ordering(lo, hi):
    assert coupled_comparison(P, 100.0, lo, hi, 0.01, 100, 1000, seed=7) == 0


def test_coupled_single_node():
    assert coupled_comparison(P, 100.0, 0.2, 0.3, 0.01, 0, 1) == 0


def test_coupled_rejects_unordered():
    with pytest.raises(DomainError):
        coupled_comparison(P, 100.0, 0.6, 0.4, 0.01, 10, 10)


def test_affine_identity_hand_step():
    b = simulate(P, 100.0, 0.6, 0.01, 1, 1, seed=0)
    d = P.delta_drift
    dw = b.w[0, 1]
    ell1 = logit(0.6) + d * d * 0.1 * 0.01 + d * dw
    logx1 = math.log(100.0) + (d * 0.6 + P.b - P.gamma - 0.5) * 0.01 + dw
    assert b.log_odds[0, 1] == pytest.approx(ell1, abs=1e-13)
    assert math.log(b.x[0, 1]) == pytest.approx(logx1, abs=1e-13)
    lhs = ell1 - d * logx1 - affine_drift(P) * 0.01
    assert lhs == pytest.approx(logit(0.6) - d * math.log(100.0), abs=1e-13)


def test_affine_residual_at_rounding_level():
    # both updates share one frozen pi, so the identity holds to rounding
    for dt in (2e-3, 1e-3):
        b = simulate(P, 100.0, 0.4, dt, int(round(1 / dt)), 200, seed=3)
        assert affine_consistency(b, P) <= 10 * dt * P.delta_drift ** 2
        assert affine_consistency(b, P) <= 1e-9


def test_csv_export():
    b = simulate(P, 100.0, 0.4, 0.5, 2, 2, seed=11)
    text = b.to_csv()
    lines = text.splitlines()
    assert lines[0] == "# seed=11 dt=0.5"
    assert lines[1] == "path,t,x,pi"
    assert len(lines) == 2 + 2 * 3
    buf = io.StringIO()
    b.to_csv(buf)
    assert buf.getvalue() == text
