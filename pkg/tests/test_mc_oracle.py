import math

import numpy as np
import pytest
from conftest import CASES

from stockloan.boundary1d import european_lower_bound_g
from stockloan.errors import DomainError, GridError, RegressionError
from stockloan.mc_oracle import (LSMCResult, BasisSpec, OracleEstimate, estimates_to_csv, european_closed_form,
                                 european_value, lattice_value, lsmc_value)
from stockloan.model import payoff

C3 = CASES["Case3"]


def test_estimate_validation_and_csv():
    e = OracleEstimate(1.5, 0.25, "european", 10, 3)
    assert e.csv_line() == "european,1.5,0.25,10,3"
    assert OracleEstimate(2.0, 0.0, "lattice", 5).csv_line() == "lattice,2.0,0.0,5,"
    assert estimates_to_csv([e]).splitlines() == ["method,estimate,stderr,n,seed", "european,1.5,0.25,10,3"]
    with pytest.raises(ValueError):
        OracleEstimate(math.nan, 0.0, "x", 1)
    with pytest.raises(ValueError):
        OracleEstimate(1.0, -1.0, "x", 1)


def test_european_zero_price():
    assert european_value(C3, 0.0, 0.5, n_paths=10).estimate == 0.0


def test_european_small_strike_is_growth_mean():
    p = C3.replace(K=1e-8)
    e = european_value(p, 100.0, 1e-9, n_paths=20_000, seed=1)
    assert abs(e.estimate - 100.0 * math.exp((p.b - p.r) * p.T)) <= 3 * e.stderr


def test_european_bear_limit_matches_closed_form():
    e = european_value(C3, 100.0, 1e-9, n_paths=50_000, seed=2)
    g = european_lower_bound_g(C3, 100.0, 0.0)
    assert abs(e.estimate - g) <= 3 * e.stderr
    assert european_closed_form(C3, 100.0, 1e-9, 0.0) == pytest.approx(g, rel=1e-6)


def test_european_mixture_closed_form():
    e = european_value(C3, 100.0, 0.5, n_paths=50_000, seed=3)
    assert abs(e.estimate - european_closed_form(C3, 100.0, 0.5, 0.0)) <= 3 * e.stderr


def test_european_rejects_bad_inputs():
    with pytest.raises(DomainError):
        european_value(C3, -1.0, 0.5)
    with pytest.raises(DomainError):
        european_value(C3, 100.0, 0.0)


def test_single_date_reproduces_european():
    e = european_value(C3, 100.0, 0.5, n_paths=5000, seed=4)
    l1 = lsmc_value(C3, 100.0, 0.5, n_paths=5000, n_exercise_dates=1, seed=4)
    assert l1.estimate == e.estimate
    assert l1.stderr == e.stderr


def test_lsmc_deterministic():
    a = lsmc_value(C3, 100.0, 0.5, n_paths=4000, n_exercise_dates=10, seed=5)
    b = lsmc_value(C3, 100.0, 0.5, n_paths=4000, n_exercise_dates=10, seed=5)
    assert a == b


def test_lsmc_never_exercise_regime():
    p = CASES["Case0"]
    e = european_value(p, 100.0, 0.5, n_paths=20_000, seed=6)
    l = lsmc_value(p, 100.0, 0.5, n_paths=20_000, n_exercise_dates=20, seed=6)
    assert abs(l.estimate - e.estimate) <= 2 * math.hypot(l.stderr, e.stderr)


def test_lsmc_exercise_lies_above_strike():
    p = CASES["Case4"]
    res = lsmc_value(p, 400.0, 0.05, n_paths=20_000, n_exercise_dates=20, seed=7, details=True)
    assert isinstance(res, LSMCResult)
    assert res.exercised_x.size > 0
    assert np.all(res.exercised_x > p.K)
    assert res.estimate.estimate >= payoff(400.0, p.K)


def test_lsmc_lower_bound_chain():
    e = european_value(C3, 100.0, 0.5, n_paths=20_000, seed=8)
    l = lsmc_value(C3, 100.0, 0.5, n_paths=20_000, n_exercise_dates=20, seed=8)
    lat = lattice_value(C3, 100.0, 0.5, n_time=2000, n_space=401)
    assert payoff(100.0, C3.K) <= e.estimate
    assert e.estimate <= l.estimate + 2 * l.stderr
    assert l.estimate <= lat.estimate + 2 * l.stderr + lat.error_estimate + 1e-2 * C3.K


def test_single_bundle_is_flagged():
    l = lsmc_value(C3, 100.0, 0.5, n_paths=4000, n_exercise_dates=5, seed=1, two_bundle=False)
    assert l.method == "lsmc-single-bundle"


def test_lsmc_degenerate_design():
    # fewer in-the-money paths than basis functions
    with pytest.raises(RegressionError):
        lsmc_value(C3, 100.0, 0.5, n_paths=5, n_exercise_dates=5, seed=0)
    with pytest.raises(RegressionError):
        lsmc_value(C3, 100.0, 0.5, n_paths=500, n_exercise_dates=5, seed=0,
                   basis_spec=BasisSpec(deg_logx=0, deg_pi=0, cross=False, european=False))


def test_lsmc_far_out_of_money_is_zero():
    assert lsmc_value(C3, 1e-3, 0.5, n_paths=500, n_exercise_dates=5, seed=0).estimate == 0.0


def test_basis_design_shape():
    b = BasisSpec()
    x = np.array([90.0, 110.0, 130.0])
    X = b.design(x, np.array([0.2, 0.5, 0.9]), 100.0, C3, 0.5)
    assert X.shape == (3, b.size)
    with pytest.raises(ValueError):
        b.design(x, x / 200, 100.0)


def test_lattice_one_step_bellman():
    x0, width = 120.0, 1.0
    est = lattice_value(C3, x0, 0.5, n_time=1, n_space=3, width=width, refine=False).estimate
    # hand-rolled single Bellman step on the three nodes
    d = C3.delta_drift
    mu = d * 0.5 + C3.b - C3.gamma - 0.5
    diff = 0.5 / width ** 2
    p_dn, p_up = diff - 0.5 * mu / width, diff + 0.5 * mu / width
    xs = x0 * np.exp(np.array([-width, 0.0, width]))
    v = payoff(xs, C3.K)
    cont = math.exp(C3.gamma - C3.r) * (p_dn * v[0] + (1 - p_dn - p_up) * v[1] + p_up * v[2])
    assert est == pytest.approx(max(payoff(x0, C3.K), cont), rel=1e-12)


def test_lattice_dominates_european_and_refines():
    lat = lattice_value(C3, 100.0, 0.5, n_time=2000, n_space=401)
    assert lat.stderr == 0.0
    assert lat.estimate >= european_closed_form(C3, 100.0, 0.5, 0.0) - lat.error_estimate
    assert lat.error_estimate < 0.5


def test_lattice_errors():
    with pytest.raises(GridError):
        lattice_value(C3, 100.0, 0.5, n_time=10**5, n_space=1001)
    with pytest.raises(GridError):
        lattice_value(C3, 100.0, 0.5, n_time=2, n_space=401)
    with pytest.raises(GridError):
        lattice_value(C3, 100.0, 0.5, n_time=0, n_space=101)
    with pytest.raises(DomainError):
        lattice_value(C3, 0.0, 0.5)
