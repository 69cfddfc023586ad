import numpy as np
import pytest
from scipy.integrate import solve_bvp

from lifetime_ruin.curves import Grid, ValueCurve
from lifetime_ruin.model import MarketParams, Params, REFERENCE
from lifetime_ruin.pde_primal import (SolverError, convexity_report, feedback_policy, gamma,
                                      hjb_residual, ladder_gap, lift_2d, policy_root_form,
                                      residual_order, solve_primal, solve_unbounded)

CORRELATED = MarketParams(r=0.03, mu=0.08, sigma=0.25, a=0.01, b=0.2, rho=0.5, lam=0.05)


def bvp_oracle(prm, M):
    """Collocation solve of the HJB with f'' written as the positive root of its quadratic."""
    d, lam = prm.derived, prm.lam

    def rhs(z, s):
        f, f1 = s
        a = 0.5 * d.bbar2 * z ** 2
        K = (d.r_tilde * z - 1.0) * f1 - lam * f
        S = np.sqrt(K * K + 4.0 * a * d.m * f1 * f1)
        x = np.where(K >= 0, 2.0 * d.m * f1 * f1 / (K + S + 1e-300), (S - K) / (2.0 * a + 1e-300))
        return np.vstack([f1, x])

    z = np.linspace(0.0, M, 801)
    guess = np.vstack([np.exp(-z / 6) * (1 - z / M), -np.exp(-z / 6) / 6])
    sol = solve_bvp(rhs, lambda a, b: [a[0] - 1.0, b[0]], z, guess, tol=1e-8, max_nodes=200000)
    assert sol.status == 0
    return sol.sol


@pytest.mark.parametrize("market, M", [(REFERENCE, 40.0), (CORRELATED, 30.0)])
def test_matches_collocation_oracle(market, M):
    prm = Params.build(market)
    curve = solve_primal(prm, M, 4001)
    oracle = bvp_oracle(prm, M)
    assert np.max(np.abs(oracle(curve.z)[0] - curve.values)) < 1e-4


def test_boundary_values_and_shape(primal):
    v = primal.values
    assert v[0] == 1.0 and v[-1] == 0.0
    assert np.all(np.diff(v) < 0)
    assert np.all(np.diff(v, 2) > 0)
    assert primal.meta["report"].converged


def test_residual_first_order(prm):
    out = residual_order(prm, 40.0, 2001)
    assert 1.3 <= out["ratio"] <= 2.7


def test_residual_small(primal, prm):
    assert np.max(np.abs(hjb_residual(primal, prm))) < 1e-4


def test_convexity_bound(primal, prm):
    rep = convexity_report(primal, prm)
    assert rep.all_pass
    assert np.all(gamma(primal.z[1:-1], prm) < 0)


def test_policy_forms_agree_at_ten(prm):
    # the forms differ by the O(h) truncation error of the upwind scheme
    gaps = []
    for n in (4001, 8001):
        curve = solve_primal(prm, 40.0, n)
        i = int(np.argmin(np.abs(curve.z - 10.0)))
        gaps.append(abs(feedback_policy(curve, prm).pi[i] - policy_root_form(curve, prm)[i]))
    assert gaps[1] < 1e-3
    assert gaps[0] / gaps[1] == pytest.approx(2.0, rel=0.1)


def test_policy_positive(primal, prm):
    assert np.all(feedback_policy(primal, prm).pi > 0)


def test_no_premium_means_no_investment():
    market = MarketParams(r=0.03, mu=0.03, sigma=0.2, a=0.0, b=0.1, rho=0.0, lam=0.04)
    prm = Params.build(market)
    curve = solve_primal(prm, 40.0, 2001)
    # curvature near 0 is exponentially small and drowns in rounding
    assert curve.meta["report"].unresolved > 0
    assert np.all(feedback_policy(curve, prm).pi == 0.0)
    assert np.all(policy_root_form(curve, prm)[1:-1] == 0.0)


def test_lift_is_scale_invariant(primal, prm):
    psi1, pi1 = lift_2d(primal, prm, 10.0, 1.0)
    psi2, pi2 = lift_2d(primal, prm, 100.0, 10.0)
    assert psi1 == pytest.approx(psi2, abs=1e-14)
    assert pi2 == pytest.approx(10.0 * pi1)
    assert float(psi1) == pytest.approx(float(primal(10.0)))


def test_lift_adds_hedge_term():
    prm = Params.build(CORRELATED)
    curve = solve_primal(prm, 30.0, 2001)
    _, pi_star = lift_2d(curve, prm, 5.0, 2.0)
    pi_tilde = feedback_policy(curve, prm)(2.5)
    assert float(pi_star) == pytest.approx(2.0 * (pi_tilde + 0.5 * 0.2 / 0.25 * 2.5))


def test_lift_refuses_outside_domain(primal, prm):
    with pytest.raises(ValueError, match="extrapolation refused"):
        lift_2d(primal, prm, 50.0, 1.0)
    with pytest.raises(ValueError):
        lift_2d(primal, prm, 1.0, 0.0)


def test_ladder_decreasing_and_unbounded(prm):
    curve = solve_unbounded(prm)
    gaps = curve.meta["ladder"].sup_gaps
    assert all(b < a for a, b in zip(gaps[:-1], gaps[1:]))
    assert gaps[-1] < 1e-4
    assert curve.kind == "primal_unbounded"
    # lengthening the barrier can only raise the ruin probability's tail toward its limit
    assert float(curve(10.0)) >= float(solve_primal(prm, 40.0, 4001)(10.0))


def test_ladder_gap_needs_shared_grid(prm):
    a = solve_primal(prm, 40.0, 401)
    b = solve_primal(prm, 80.0, 1001)
    with pytest.raises(ValueError, match="share grid"):
        ladder_gap(a, b)


@pytest.mark.parametrize("kw, message", [
    ({"M": 0.0}, "barrier M must be positive"),
    ({"M": 40.0, "n": 50}, "at least 101"),
    ({"M": 40.0, "tol": 0.0}, "tol must be positive"),
])
def test_argument_errors(prm, kw, message):
    with pytest.raises(ValueError, match=message):
        solve_primal(prm, **kw)


def test_iteration_cap_reports_last_change(prm):
    with pytest.raises(SolverError, match="did not converge in 2 sweeps; last change"):
        solve_primal(prm, 40.0, 1001, max_iter=2)


def test_feedback_policy_rejects_dual_curve(prm):
    g = Grid(0.0, 1.0, 11)
    c = ValueCurve.from_values(g, np.minimum(g.points, 0.5), "dual_game")
    with pytest.raises(ValueError, match="needs a primal curve"):
        feedback_policy(c, prm)
