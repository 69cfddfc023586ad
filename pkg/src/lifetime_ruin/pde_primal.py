"""Finite-difference solution of the ruin-probability HJB equation.

The wealth-to-consumption ratio ``z`` solves a one-dimensional nonlinear
boundary-value problem

    lam f = (r~ z - 1) f' + 1/2 bbar2 z^2 f'' + min_pi [excess pi f' + 1/2 sigma^2 pi^2 f'']

with f(0) = 1 and f(M) = 0.  We discretise with an upwind (monotone) scheme and
handle the minimisation by Howard policy iteration.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .curves import Grid, PolicyCurve, ValueCurve, first_derivative, second_derivative
from .model import Params

log = logging.getLogger(__name__)

D2_FLOOR = 1e-12
MAX_POLICY_ITERATIONS = 200


class SolverError(RuntimeError):
    """A solver failed to converge or its output broke a structural property."""


def _linear_solve(z, h, pi, prm: Params, left: float, right: float) -> np.ndarray:
    """Solve the frozen-policy linear problem exactly (tridiagonal system)."""
    d = prm.derived
    lam = prm.lam
    zi = z[1:-1]
    drift = d.r_tilde * zi - 1.0 + d.excess * pi
    diff = 0.5 * (d.bbar2 * zi ** 2 + prm.market.sigma ** 2 * pi ** 2)
    up = np.maximum(drift, 0.0) / h
    down = np.maximum(-drift, 0.0) / h
    lower = diff / h ** 2 + down          # coefficient of f[i-1]
    upper = diff / h ** 2 + up            # coefficient of f[i+1]
    main = -(2.0 * diff / h ** 2 + up + down + lam)

    n = zi.size
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1] = main
    ab[2, :-1] = lower[1:]
    rhs = np.zeros(n)
    rhs[0] -= lower[0] * left
    rhs[-1] -= upper[-1] * right
    interior = solve_banded((1, 1), ab, rhs)
    return np.concatenate(([left], interior, [right]))


def policy_from_derivatives(d1, d2, prm: Params) -> np.ndarray:
    """Minimiser of the Hamiltonian: -excess f' / (sigma^2 f'')."""
    return -prm.derived.excess * d1 / (prm.market.sigma ** 2 * d2)


@dataclass
class PrimalReport:
    iterations: int = 0
    changes: list[float] = field(default_factory=list)
    converged: bool = False
    # interior points where the last policy update hit the curvature floor
    clamped: int = 0
    # interior second differences indistinguishable from zero in floating point
    unresolved: int = 0


def solve_primal(prm: Params, M: float, n: int = 4001, tol: float = 1e-10,
                 max_iter: int = MAX_POLICY_ITERATIONS, *, min_n: int = 101) -> ValueCurve:
    """Solve for the ruin probability with an upper absorbing barrier at ``M``.

    The returned curve carries the iteration history in ``meta["report"]``.
    """
    if not M > 0:
        raise ValueError(f"barrier M must be positive, got {M}")
    if n < min_n:
        raise ValueError(f"grid needs at least {min_n} points, got {n}")
    if not tol > 0:
        raise ValueError("tol must be positive")

    grid = Grid(0.0, float(M), int(n))
    z, h = grid.points, grid.h
    report = PrimalReport()

    f = 1.0 - z / M
    # the linear start carries no curvature, so the first sweep uses pi = 0
    pi = np.zeros(n - 2)
    for k in range(1, max_iter + 1):
        f_new = _linear_solve(z, h, pi, prm, 1.0, 0.0)
        change = float(np.max(np.abs(f_new - f)))
        report.changes.append(change)
        f = f_new
        if len(report.changes) >= 3 and change > 10.0 * report.changes[-2]:
            raise SolverError(
                f"policy iteration diverging at sweep {k}: change {change:.3e} "
                f"after {report.changes[-2]:.3e}")
        if change < tol:
            report.converged = True
            break
        d1 = first_derivative(f, h)[1:-1]
        d2 = second_derivative(f, h)[1:-1]
        pi = policy_from_derivatives(d1, np.maximum(d2, D2_FLOOR), prm)
    report.iterations = k
    if not report.converged:
        raise SolverError(
            f"policy iteration did not converge in {max_iter} sweeps; last change {change:.3e}")

    report.clamped = int(np.sum(d2 <= D2_FLOOR)) if report.iterations > 1 else 0
    curve = ValueCurve.from_values(grid, f, "primal_M", M=float(M), report=report)
    # second differences of O(1) values carry rounding noise ~ eps / h^2; only a
    # negative value beyond that is a genuine loss of convexity
    noise = 4.0 * np.finfo(float).eps * (np.abs(f[:-2]) + 2.0 * np.abs(f[1:-1]) + np.abs(f[2:])) / h ** 2
    report.unresolved = int(np.sum(np.abs(curve.d2[1:-1]) <= noise))
    if np.any(curve.d2[1:-1] <= -noise) or np.all(curve.d2[1:-1] <= noise):
        bad = int(np.argmin(curve.d2[1:-1] + noise)) + 1
        raise SolverError(
            f"converged solution is not strictly convex at z={z[bad]:.6g} "
            f"(second difference {curve.d2[bad]:.3e}); scheme violation")
    log.debug("primal solve M=%g n=%d converged in %d sweeps", M, n, k)
    return curve


@dataclass
class LadderReport:
    barriers: list[float]
    sup_gaps: list[float]
    converged: bool


def solve_unbounded(prm: Params, tol: float = 1e-4, M0: float = 40.0, h: float = 0.01,
                    max_rungs: int = 8, solve_tol: float = 1e-10) -> ValueCurve:
    """Approximate the no-upper-barrier ruin probability by doubling M.

    Every rung uses the same spacing ``h``.  Stops at the first M with
    sup |phi_2M - phi_M| < tol and returns phi_M relabelled as unbounded.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    M = float(M0)
    prev = solve_primal(prm, M, Grid.with_spacing(0.0, M, h).n, solve_tol)
    barriers, gaps = [M], []
    for _ in range(max_rungs):
        M2 = 2.0 * M
        nxt = solve_primal(prm, M2, Grid.with_spacing(0.0, M2, h).n, solve_tol)
        gap = ladder_gap(prev, nxt)
        gaps.append(gap)
        barriers.append(M2)
        log.debug("ladder M=%g -> %g: sup gap %.3e", M, M2, gap)
        if len(gaps) >= 2 and not gaps[-1] < gaps[-2]:
            raise SolverError(f"M-ladder fails to contract: gaps {gaps}")
        if gap < tol:
            ladder = LadderReport(barriers, gaps, True)
            return ValueCurve(prev.grid, prev.values, prev.d1, prev.d2, "primal_unbounded",
                              {"M": M, "ladder": ladder, "report": prev.meta["report"]})
        prev, M = nxt, M2
    raise SolverError(f"M-ladder did not reach tol={tol} after {max_rungs} doublings: {gaps}")


def ladder_gap(short: ValueCurve, long: ValueCurve) -> float:
    """sup over [0, 2M] of |phi_2M - phi_M|, with phi_M = 0 beyond M."""
    n = short.grid.n
    if not np.allclose(long.z[:n], short.z, rtol=0, atol=1e-9 * short.grid.upper):
        raise ValueError("ladder rungs must share grid points")
    inner = np.max(np.abs(long.values[:n] - short.values))
    outer = np.max(np.abs(long.values[n:])) if long.grid.n > n else 0.0
    return float(max(inner, outer))


def feedback_policy(curve: ValueCurve, prm: Params) -> PolicyCurve:
    """Optimal dollar amount in the second risky asset on the curve's grid."""
    if curve.kind not in ("primal_M", "primal_unbounded", "dual_transform"):
        raise ValueError(f"feedback policy needs a primal curve, got {curve.kind}")
    if prm.derived.excess == 0.0:
        return PolicyCurve(curve.grid, np.zeros(curve.grid.n))
    d2 = curve.d2
    if np.any(d2[1:-1] <= 0):
        raise SolverError("curve is not strictly convex on the interior; policy undefined")
    pi = np.empty(curve.grid.n)
    pi[1:-1] = policy_from_derivatives(curve.d1[1:-1], d2[1:-1], prm)
    # one-sided fill: the endpoint d2 estimates are extrapolated, so reuse them
    # only when they stay positive
    for end, nb in ((0, 1), (-1, -2)):
        pi[end] = (policy_from_derivatives(curve.d1[end], d2[end], prm)
                   if d2[end] > 0 else pi[nb])
    return PolicyCurve(curve.grid, pi)


def policy_root_form(curve: ValueCurve, prm: Params) -> np.ndarray:
    """The policy written with f and f' only (positive quadratic root).

    Uses the HJB to eliminate f''; valid where f' < 0.  Returns NaN at the
    endpoints.
    """
    d = prm.derived
    sig2 = prm.market.sigma ** 2
    z = curve.z
    out = np.full(curve.grid.n, np.nan)
    if d.excess == 0.0:
        # no risk premium: holding the second asset only adds variance
        out[1:-1] = 0.0
        return out
    f, f1 = curve.values[1:-1], curve.d1[1:-1]
    zi = z[1:-1]
    A = -prm.lam * f / f1 + d.r_tilde * zi - 1.0
    disc = A ** 2 + d.excess ** 2 * d.bbar2 * zi ** 2 / sig2
    # rationalised root avoids cancellation when A > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out[1:-1] = np.where(
            A > 0,
            d.excess * d.bbar2 * zi ** 2 / (sig2 * (A + np.sqrt(disc))),
            (-A + np.sqrt(disc)) / d.excess)
    return out


def lift_2d(curve: ValueCurve, prm: Params, w, c, policy: PolicyCurve | None = None):
    """Evaluate psi(w, c) = phi(w / c) and the optimal dollar amount in the stock."""
    w = np.asarray(w, dtype=float)
    c = np.asarray(c, dtype=float)
    if np.any(c <= 0):
        raise ValueError("consumption rate must be positive")
    if np.any(w < 0):
        raise ValueError("wealth must be nonnegative")
    z = w / c
    if np.any(z > curve.grid.upper):
        raise ValueError(f"w/c = {np.max(z):.6g} beyond curve upper {curve.grid.upper}; "
                         "extrapolation refused")
    policy = policy or feedback_policy(curve, prm)
    psi = curve(z)
    m = prm.market
    pi_star = c * (policy(z) + m.rho * (m.b / m.sigma) * z)
    return psi, pi_star


def hjb_residual(curve: ValueCurve, prm: Params) -> np.ndarray:
    """Pointwise HJB residual on the interior, using the stored derivatives.

    lam f - (r~ z - 1) f' - 1/2 bbar2 z^2 f'' + m f'^2 / f''
    """
    d = prm.derived
    z = curve.z[1:-1]
    f, f1, f2 = curve.values[1:-1], curve.d1[1:-1], curve.d2[1:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        hamiltonian = np.where(f1 == 0, 0.0, d.m * f1 ** 2 / f2)
    return prm.lam * f - (d.r_tilde * z - 1.0) * f1 - 0.5 * d.bbar2 * z ** 2 * f2 + hamiltonian


def gamma(z, prm: Params):
    """Ratio of the positive root of the convexity polynomial to f'."""
    d = prm.derived
    z = np.asarray(z, dtype=float)
    k = d.r_tilde * z - 1.0
    return (-k - np.sqrt(k ** 2 + 2.0 * d.m * d.bbar2 * z ** 2)) / (d.bbar2 * z ** 2)


@dataclass
class ConvexityReport:
    passed: np.ndarray
    slack: np.ndarray

    @property
    def all_pass(self) -> bool:
        return bool(np.all(self.passed))

    @property
    def min_slack(self) -> float:
        return float(np.min(self.slack))

    def to_dict(self) -> dict:
        return {"all_pass": self.all_pass, "min_slack": self.min_slack,
                "n_points": int(self.passed.size), "n_fail": int(np.sum(~self.passed))}


def convexity_report(curve: ValueCurve, prm: Params) -> ConvexityReport:
    """Check f'' >= gamma(z) f' > 0 at each interior point."""
    z = curve.z[1:-1]
    bound = gamma(z, prm) * curve.d1[1:-1]
    slack = curve.d2[1:-1] - bound
    passed = (slack >= 0) & (bound > 0)
    return ConvexityReport(passed, slack)


def residual_order(prm: Params, M: float, n: int, tol: float = 1e-10) -> dict:
    """Sup interior residual at ``n`` and at the halved spacing."""
    coarse = solve_primal(prm, M, n, tol)
    fine = solve_primal(prm, M, 2 * (n - 1) + 1, tol)
    r_c = float(np.max(np.abs(hjb_residual(coarse, prm))))
    r_f = float(np.max(np.abs(hjb_residual(fine, prm))))
    h = coarse.grid.h
    return {"h": h, "residual": r_c, "residual_half": r_f, "ratio": r_c / r_f,
            "C": r_c / h}

