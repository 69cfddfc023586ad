"""Legendre bridge between the game value and the ruin probability."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .curves import Grid, ValueCurve
from .fbp_dual import DualSolution, FreeBoundary, concave_curvature
from .model import Params

# spacing at which the reference tolerances below are quoted (M=40, n=4001)
REFERENCE_H = 0.01
SUP_GAP_TOL = 5e-3
BOUNDARY_TOL = 1e-2
SLOPE_TOL = 1e-2
CURVATURE_RTOL = 0.10
N_SLOPE_SAMPLES = 10


class DualityError(ValueError):
    pass


def scaled_tol(base: float, h: float) -> float:
    """Tolerance quoted at the reference spacing, widened linearly for coarser grids."""
    return base * max(1.0, h / REFERENCE_H)


def inverse_slope(sol: DualSolution, prm: Params, z) -> np.ndarray:
    """I_M(z): the point of D where the game value has slope z, for z in [0, M]."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    g1 = sol.path_g1
    if abs(g1[0] - sol.M) > 1e-8 * sol.M or abs(g1[-1]) > 1e-8 * sol.M:
        raise DualityError(f"slope range [{g1[-1]:.3g}, {g1[0]:.3g}] does not cover [0, M]")
    if np.any(z < 0) or np.any(z > sol.M):
        raise DualityError("slope query outside [0, M]")
    # g1 is decreasing along the path; np.interp wants increasing abscissae
    y = np.interp(-z, -g1, sol.path_y)
    inside = (z > 0) & (z < sol.M)
    yi = y[inside]
    if yi.size:
        # one Newton step on the dense solution: the linear guess is already close
        state = sol.dense(yi)
        curv = np.array([concave_curvature(a, g, s, prm)
                         for a, g, s in zip(yi, state[0], state[1])])
        y[inside] = np.clip(yi - (state[1] - z[inside]) / curv, sol.boundary.y_M, sol.boundary.y_0)
    y[z <= 0] = sol.boundary.y_0
    y[z >= sol.M] = sol.boundary.y_M
    return y


def legendre_value(sol: DualSolution, prm: Params, z) -> np.ndarray:
    """max_y [ghat(y) - z y] for any z >= 0; identically 0 from z = M on."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    out = np.zeros_like(z)
    body = z < sol.M
    ys = inverse_slope(sol, prm, z[body])
    out[body] = sol.value(ys) - z[body] * ys
    out[z == 0] = 1.0
    return out


def legendre_concave(sol: DualSolution, prm: Params, n: int | None = None) -> ValueCurve:
    """Convex dual of the game value on [0, M], by monotone slope inversion."""
    n = n or sol.curve.grid.n
    grid = Grid(0.0, sol.M, n)
    z = grid.points
    ys = inverse_slope(sol, prm, z)
    values = sol.value(ys) - z * ys
    values[0], values[-1] = 1.0, 0.0
    g = sol.value(ys)
    g1 = z.copy()
    g2 = np.array([concave_curvature(a, b, c, prm) for a, b, c in zip(ys, g, g1)])
    return ValueCurve(grid, values, -ys, -1.0 / g2, "dual_transform", {"M": sol.M})


def concave_conjugate(curve: ValueCurve, y) -> np.ndarray:
    """min_z [Phi(z) + z y] for a convex decreasing curve, by slope inversion.

    Slopes of the curve are increasing in z; values between grid points come
    from a cubic Hermite interpolant of the stored values and slopes.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z, d1 = curve.z, curve.d1
    if np.any(np.diff(d1) < -1e-12):
        raise DualityError("curve slopes are not non-decreasing; not convex")
    zs = np.interp(-y, d1, z)
    spline = CubicHermiteSpline(z, curve.values, d1)
    return spline(zs) + zs * y


def conjugate_brute(x: np.ndarray, values: np.ndarray, slopes, *, mode: str) -> np.ndarray:
    """Grid-search conjugate, kept as an independent check of slope inversion.

    mode "max": max_j [values_j - s x_j]   (concave -> convex dual)
    mode "min": min_j [values_j + s x_j]   (convex -> concave dual)
    """
    slopes = np.atleast_1d(np.asarray(slopes, dtype=float))
    out = np.empty_like(slopes)
    for i, s in enumerate(slopes):
        if mode == "max":
            out[i] = np.max(values - s * x)
        elif mode == "min":
            out[i] = np.min(values + s * x)
        else:
            raise ValueError(mode)
    return out


def boundary_from_primal(curve: ValueCurve) -> FreeBoundary:
    """(y_M, y_0) = (-phi'(M-), -phi'(0+)) from one-sided slope estimates."""
    if curve.kind != "primal_M":
        raise DualityError(f"boundary recovery needs a primal_M curve, got {curve.kind}")
    lo, hi = curve.d1[-1], curve.d1[0]
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise DualityError("endpoint derivative estimate unavailable")
    return FreeBoundary(float(-lo), float(-hi))


@dataclass
class DualityReport:
    sup_gap: float
    boundary_gap: tuple[float, float]
    biconjugate_gap: float
    slope_checks: list[dict] = field(default_factory=list)
    h: float = 0.0
    tolerances: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        t = self.tolerances
        return (self.sup_gap <= t["sup_gap"]
                and max(self.boundary_gap) <= t["boundary"]
                and self.biconjugate_gap <= t["biconjugate"]
                and all(c["slope_ok"] and c["curvature_ok"] for c in self.slope_checks))

    def to_dict(self) -> dict:
        return {
            "sup_gap": self.sup_gap,
            "boundary_gap_yM": self.boundary_gap[0],
            "boundary_gap_y0": self.boundary_gap[1],
            "biconjugate_gap": self.biconjugate_gap,
            "slope_checks": self.slope_checks,
            "h": self.h,
            "tolerances": self.tolerances,
            "passed": self.passed,
        }


def biconjugate_check(sol: DualSolution, primal: ValueCurve, prm: Params) -> DualityReport:
    """Cross-check the shooting solution against a direct primal solve."""
    if primal.kind != "primal_M" or abs(primal.meta.get("M", sol.M) - sol.M) > 1e-12:
        raise DualityError("primal curve must be a primal_M solve at the same barrier")
    h = primal.grid.h
    z = primal.z
    transform = legendre_concave(sol, prm, primal.grid.n)
    sup_gap = float(np.max(np.abs(transform.values - primal.values)))

    recovered = boundary_from_primal(primal)
    boundary_gap = (abs(recovered.y_M - sol.boundary.y_M), abs(recovered.y_0 - sol.boundary.y_0))

    ygrid = np.linspace(sol.boundary.y_M, sol.boundary.y_0, 2001)
    back = concave_conjugate(transform, ygrid)
    biconj_gap = float(np.max(np.abs(back - sol.value(ygrid))))

    tol = {"sup_gap": scaled_tol(SUP_GAP_TOL, h), "boundary": scaled_tol(BOUNDARY_TOL, h),
           "biconjugate": scaled_tol(SUP_GAP_TOL, h), "slope": scaled_tol(SLOPE_TOL, h),
           "curvature_rtol": CURVATURE_RTOL}

    checks = []
    # ten interior sample points, away from the endpoint stencils
    idx = np.linspace(0, primal.grid.n - 1, N_SLOPE_SAMPLES + 2).round().astype(int)[1:-1]
    I = inverse_slope(sol, prm, z[idx])
    g = sol.value(I)
    for k, i in enumerate(idx):
        g2 = concave_curvature(I[k], g[k], z[i], prm)
        want_curv = -1.0 / g2
        slope_err = abs(primal.d1[i] + I[k])
        curv_err = abs(primal.d2[i] - want_curv) / abs(want_curv)
        checks.append({"z": float(z[i]), "phi_slope": float(primal.d1[i]), "minus_I": float(-I[k]),
                       "slope_err": float(slope_err), "slope_ok": bool(slope_err <= tol["slope"]),
                       "phi_curvature": float(primal.d2[i]), "dual_curvature": float(want_curv),
                       "curvature_rel_err": float(curv_err),
                       "curvature_ok": bool(curv_err <= tol["curvature_rtol"])})
    return DualityReport(sup_gap, boundary_gap, biconj_gap, checks, h, tol)


__all__ = [
    "DualityReport", "biconjugate_check", "boundary_from_primal", "concave_conjugate",
    "conjugate_brute", "inverse_slope", "legendre_concave", "legendre_value", "scaled_tol",
]
