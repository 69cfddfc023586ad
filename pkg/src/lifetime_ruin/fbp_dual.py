"""Controller-and-stopper free-boundary problem, solved by shooting.

On the continuation region (y_M, y_0) the game value g solves

    lam g = y + (lam - r~) y g' + m y^2 g'' - 1/2 bbar2 g'^2 / g''

with g = u_M and g' = u_M' at both ends.  Starting at a trial y_M with
g = M y_M, g' = M we integrate until g' reaches zero; the trial is accepted
when g is 1 there.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .curves import Grid, ValueCurve
from .model import Params

log = logging.getLogger(__name__)

SCAN_POINTS = 64
MARGIN = 0.10
PATH_SAMPLES = 20001


class ShootingError(RuntimeError):
    """Shooting could not produce a pasting point or a concave curvature."""


class DegenerateRegion(ValueError):
    """The continuation region is empty or no pasting root exists."""


def payoff_u(M: float, y):
    """Stopper's payoff min(M y, 1)."""
    return np.minimum(M * np.asarray(y, dtype=float), 1.0)


def y_cap(prm: Params, M: float) -> float:
    return max(10.0 * prm.lam, 10.0 / M) * 10.0


def concave_curvature(y, g, g1, prm: Params):
    """Nonpositive root g'' of  m y^2 x^2 - K x - 1/2 bbar2 g'^2 = 0.

    K = lam g - y - (lam - r~) y g'.  Both branches are written without
    cancellation.
    """
    d = prm.derived
    K = prm.lam * g - y - (prm.lam - d.r_tilde) * y * g1
    a = d.m * y * y
    S = math.sqrt(K * K + 2.0 * a * d.bbar2 * g1 * g1)
    if K >= 0:
        return -d.bbar2 * g1 * g1 / (K + S) if K + S > 0 else 0.0
    if a <= 0:
        raise ShootingError(f"no nonpositive curvature root at y={y:.6g} (concavity breakdown)")
    return (K - S) / (2.0 * a)


def dual_ode_residual(y, g, g1, g2, prm: Params):
    """lam g - y - (lam - r~) y g' - m y^2 g'' + 1/2 bbar2 g'^2 / g''."""
    d = prm.derived
    return (prm.lam * g - y - (prm.lam - d.r_tilde) * y * g1 - d.m * y * y * g2
            + 0.5 * d.bbar2 * g1 * g1 / g2)


@dataclass
class ShootRecord:
    y_start: float
    y_stop: float | None
    g_at_stop: float | None
    slope_at_stop: float | None
    ode: object
    t: np.ndarray
    states: np.ndarray

    @property
    def pasted(self) -> bool:
        return self.y_stop is not None


def shoot_dual(prm: Params, M: float, y_trial: float, rtol: float = 1e-12,
               atol: float = 1e-14, *, strict: bool = True) -> ShootRecord:
    """Integrate the dual ODE from a trial lower boundary until g' hits zero.

    With ``strict`` a missing pasting point raises; otherwise the record has
    ``y_stop = None`` and the caller decides.
    """
    if not 0.0 < y_trial < 1.0 / M:
        raise ValueError(f"trial y_M must lie in (0, 1/M) = (0, {1.0 / M:.6g})")

    def rhs(y, s):
        return (s[1], concave_curvature(y, s[0], s[1], prm))

    def flat(y, s):
        return s[1]
    flat.terminal = True
    flat.direction = -1

    sol = solve_ivp(rhs, (y_trial, y_cap(prm, M)), (M * y_trial, float(M)), method="DOP853",
                    rtol=rtol, atol=atol, events=flat, dense_output=True)
    if sol.status == -1:
        raise ShootingError(f"integration failed from y_M={y_trial:.6g}: {sol.message}")
    if sol.t_events[0].size == 0:
        if strict:
            raise ShootingError(
                f"no pasting point: g' stays positive up to Y_CAP={y_cap(prm, M):.6g} "
                f"from y_M={y_trial:.6g}")
        return ShootRecord(y_trial, None, None, None, sol.sol, sol.t, sol.y)
    y_stop = float(sol.t_events[0][0])
    g_stop, g1_stop = (float(v) for v in sol.y_events[0][0])
    return ShootRecord(y_trial, y_stop, g_stop, g1_stop, sol.sol, sol.t, sol.y)


@dataclass(frozen=True)
class FreeBoundary:
    y_M: float
    y_0: float

    def ordered(self, M: float, lam: float) -> bool:
        return self.y_M < 1.0 / M < lam <= self.y_0


@dataclass(frozen=True, eq=False)
class DualSolution:
    M: float
    curve: ValueCurve
    boundary: FreeBoundary
    pasting_residuals: tuple[float, float]
    value_residuals: tuple[float, float]
    dense: object
    path_y: np.ndarray
    path_g: np.ndarray
    path_g1: np.ndarray
    path_g2: np.ndarray
    scan: dict = field(default_factory=dict)

    def value(self, y):
        """Game value on [0, inf): the obstacle off D, the shooting solution on it."""
        y = np.asarray(y, dtype=float)
        out = payoff_u(self.M, y)
        inside = (y > self.boundary.y_M) & (y < self.boundary.y_0)
        if np.any(inside):
            out = np.array(out, dtype=float)
            out[inside] = self.dense(y[inside])[0]
        return out

    def slope(self, y):
        y = np.asarray(y, dtype=float)
        out = np.where(y <= self.boundary.y_M, self.M, 0.0).astype(float)
        inside = (y > self.boundary.y_M) & (y < self.boundary.y_0)
        if np.any(inside):
            out[inside] = self.dense(y[inside])[1]
        return out

    def to_dict(self) -> dict:
        return {"M": self.M, "y_M": self.boundary.y_M, "y_0": self.boundary.y_0,
                "pasting_residuals": list(self.pasting_residuals),
                "value_residuals": list(self.value_residuals)}


def _scan(prm: Params, M: float) -> tuple[np.ndarray, np.ndarray]:
    delta = 1e-8 / M
    trials = np.linspace(delta, 1.0 / M - delta, SCAN_POINTS)
    miss = np.empty(SCAN_POINTS)
    for i, yt in enumerate(trials):
        rec = shoot_dual(prm, M, float(yt), rtol=1e-9, atol=1e-12, strict=False)
        # g' never vanishing means g kept rising past the cap: an overshoot
        miss[i] = rec.g_at_stop - 1.0 if rec.pasted else math.inf
    return trials, miss


def solve_dual(prm: Params, M: float, tol: float = 1e-10, n: int = 4001) -> DualSolution:
    """Locate the free boundary and assemble the game value on [0, 1.1 y_0]."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not M > 1.0 / prm.lam:
        raise DegenerateRegion(
            f"M={M:g} <= 1/lambda={1.0 / prm.lam:g}: the continuation region is only "
            "guaranteed non-empty for M > 1/lambda")

    trials, miss = _scan(prm, M)
    signs = np.sign(miss)
    changes = [i for i in range(SCAN_POINTS - 1) if signs[i] < 0 < signs[i + 1]]
    finite = miss[np.isfinite(miss)]
    monotone = bool(np.all(np.diff(finite) >= 0))
    if not changes:
        raise DegenerateRegion(
            "degenerate continuation region: no sign change of g(y_0) - 1 over the "
            f"trial scan in (0, 1/M); range [{np.min(miss):.3g}, {np.max(miss):.3g}]")
    if len(changes) > 1:
        log.warning("several pasting roots bracketed: %s", [float(trials[i]) for i in changes])
    lo, hi = float(trials[changes[0]]), float(trials[changes[0] + 1])

    def f(yt):
        rec = shoot_dual(prm, M, yt, strict=False)
        return rec.g_at_stop - 1.0 if rec.pasted else 1.0

    y_M = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    rec = shoot_dual(prm, M, y_M)
    value_res = abs(rec.g_at_stop - 1.0)
    if value_res > tol:
        # brentq stops on bracket width; finish with plain bisection on g - 1
        a, b = lo, hi
        for _ in range(200):
            mid = 0.5 * (a + b)
            if f(mid) < 0:
                a = mid
            else:
                b = mid
            if b - a < 1e-17:
                break
        y_M = 0.5 * (a + b)
        rec = shoot_dual(prm, M, y_M)
        value_res = abs(rec.g_at_stop - 1.0)
        if value_res > tol:
            raise ShootingError(f"value pasting residual {value_res:.3e} above tol {tol:.1e}")
    y_0 = rec.y_stop
    boundary = FreeBoundary(float(y_M), float(y_0))

    py = np.linspace(y_M, y_0, PATH_SAMPLES)
    ps = rec.ode(py)
    pg, pg1 = ps[0], ps[1]
    # derivative pasting holds exactly at both ends; the event residual is kept below
    pg1[0], pg1[-1] = M, 0.0
    pg2 = np.array([concave_curvature(y, g, g1, prm) for y, g, g1 in zip(py, pg, pg1)])

    slope_res = (abs(float(rec.ode(y_M)[1]) - M), abs(rec.slope_at_stop))
    value_yM = abs(float(rec.ode(y_M)[0]) - M * y_M)
    sol = DualSolution(M=float(M), curve=None, boundary=boundary, pasting_residuals=slope_res,
                       value_residuals=(value_yM, value_res), dense=rec.ode,
                       path_y=py, path_g=pg, path_g1=pg1, path_g2=pg2,
                       scan={"trials": trials, "miss": miss, "roots": len(changes),
                             "monotone": monotone})
    # the gridded curve is sampled through sol.value / sol.slope, so it is attached last
    object.__setattr__(sol, "curve", _assemble_curve(sol, prm, n))
    return sol


def _assemble_curve(sol: DualSolution, prm: Params, n: int) -> ValueCurve:
    yM, y0 = sol.boundary.y_M, sol.boundary.y_0
    grid = Grid(0.0, y0 * (1.0 + MARGIN), n)
    y = grid.points
    values = sol.value(y)
    d1 = sol.slope(y)
    d2 = np.zeros(n)
    inside = (y > yM) & (y < y0)
    d2[inside] = [concave_curvature(yy, g, g1, prm)
                  for yy, g, g1 in zip(y[inside], values[inside], d1[inside])]
    return ValueCurve(grid, values, d1, d2, "dual_game", {"M": sol.M})


@dataclass(frozen=True, eq=False)
class AlphaCurve:
    """Optimal controller feedback on D, in ratio and quadratic-root forms."""

    y: np.ndarray
    ratio: np.ndarray
    root: np.ndarray
    boundary: FreeBoundary

    def control(self, y):
        """Feedback extended to [0, inf): linear ramp to 0 below y_M, 0 above y_0."""
        y = np.asarray(y, dtype=float)
        yM, y0 = self.boundary.y_M, self.boundary.y_0
        inner = np.interp(y, self.y, self.ratio)
        ramp = self.ratio[0] * np.clip(y, 0.0, None) / yM if yM > 0 else 0.0 * y
        return np.where(y <= yM, ramp, np.where(y >= y0, 0.0, inner))


def alpha_star(sol: DualSolution, prm: Params) -> AlphaCurve:
    d = prm.derived
    y, g, g1, g2 = sol.path_y, sol.path_g, sol.path_g1, sol.path_g2
    if np.any(g2[:-1] >= 0):
        bad = int(np.argmax(g2[:-1] >= 0))
        raise ShootingError(f"strict concavity violated inside D at y={y[bad]:.6g}")
    bbar = math.sqrt(d.bbar2)
    ratio = -bbar * g1 / g2
    with np.errstate(divide="ignore", invalid="ignore"):
        B = (y - prm.lam * g) / g1 + (prm.lam - d.r_tilde) * y
        S = np.sqrt(B * B + 2.0 * d.bbar2 * d.m * y * y)
        root = np.where(B > 0, 2.0 * bbar * d.m * y * y / (B + S), (S - B) / bbar)
    # g' = 0 at y_0 makes B infinite; the control vanishes there
    root[-1] = 0.0
    return AlphaCurve(y, ratio, root, sol.boundary)
