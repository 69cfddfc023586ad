"""Monte Carlo checks of the ruin probability and of the stopping game.

Every path owns a counter-based Philox stream keyed by (path index, seed), so
results do not depend on how paths are split across workers.  Death is never
sampled: a ruin at time t pays exp(-lam t).
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .curves import PolicyCurve, ValueCurve
from .fbp_dual import AlphaCurve, DualSolution, payoff_u
from .model import Params
from .pde_primal import feedback_policy

LOW, HIGH, CAPPED, STOPPED, EXITED = 0, 1, 2, 3, 4
OUTCOME_NAMES = {LOW: "low", HIGH: "high", CAPPED: "capped", STOPPED: "stopped", EXITED: "exited"}
DISCRETIZATION_ALLOWANCE = 0.01


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 100_000
    dt: float = 1.0 / 250.0
    seed: int = 20240501
    t_cap: float = 200.0
    antithetic: bool = False
    # normals per step are summed from this many finer draws; lets runs at
    # dt and dt/2 share one Brownian path
    substeps: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if not self.dt > 0 or not self.t_cap > 0:
            raise ValueError("dt and t_cap must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.substeps < 1:
            raise ValueError("substeps must be at least 1")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic sampling needs an even path count")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.t_cap / self.dt - 1e-9))

    def refined(self) -> "SimConfig":
        """Same Brownian paths at half the step."""
        if self.substeps % 2:
            raise ValueError("refinement needs an even substep count")
        return SimConfig(self.n_paths, self.dt / 2, self.seed, self.t_cap, self.antithetic,
                         self.substeps // 2, self.workers)


@dataclass
class SimResult:
    estimate: float
    std_error: float
    n_absorbed_low: int
    n_absorbed_high: int
    n_capped: int
    bias_bound: float
    n_paths: int
    n_stopped: int = 0
    outcomes: np.ndarray | None = field(default=None, repr=False)
    taus: np.ndarray | None = field(default=None, repr=False)
    payoffs: np.ndarray | None = field(default=None, repr=False)

    def tolerance(self, allowance: float = DISCRETIZATION_ALLOWANCE) -> float:
        """3 SE + allowance + capped-path bias."""
        return 3.0 * self.std_error + allowance + self.capped_bias

    @property
    def capped_bias(self) -> float:
        return self.n_capped / self.n_paths * self.bias_bound

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "std_error": self.std_error,
                "n_paths": self.n_paths, "n_absorbed_low": self.n_absorbed_low,
                "n_absorbed_high": self.n_absorbed_high, "n_capped": self.n_capped,
                "n_stopped": self.n_stopped, "bias_bound": self.bias_bound,
                "capped_bias": self.capped_bias}

    def dump_paths(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path_id", "outcome", "tau", "payoff"])
            for i, (o, t, p) in enumerate(zip(self.outcomes, self.taus, self.payoffs)):
                w.writerow([i, OUTCOME_NAMES[int(o)], repr(float(t)), repr(float(p))])


def path_generator(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(int(stream) << 64) | int(seed)))


def _run_paths(cfg: SimConfig, kernel, start: tuple, args: tuple) -> SimResult:
    """Call ``kernel(gen, sign, x0, *args)`` once per path and reduce in path order."""
    n = cfg.n_paths
    outcomes = np.empty(n, dtype=np.int64)
    taus = np.empty(n)
    payoffs = np.empty(n)

    def work(lo, hi):
        for i in range(lo, hi):
            stream, sign = (i // 2, -1.0 if i % 2 else 1.0) if cfg.antithetic else (i, 1.0)
            outcomes[i], taus[i], payoffs[i] = kernel(path_generator(cfg.seed, stream), sign,
                                                      *start, *args)

    if cfg.workers > 1:
        edges = np.linspace(0, n, cfg.workers + 1).astype(int)
        with ThreadPoolExecutor(cfg.workers) as pool:
            list(pool.map(work, edges[:-1], edges[1:]))
    else:
        work(0, n)
    return _reduce(cfg, outcomes, taus, payoffs)


def _reduce(cfg, outcomes, taus, payoffs) -> SimResult:
    n = payoffs.size
    estimate = float(np.mean(payoffs))
    if cfg.antithetic:
        pair = 0.5 * (payoffs[0::2] + payoffs[1::2])
        se = float(np.std(pair, ddof=1) / math.sqrt(pair.size)) if pair.size > 1 else 0.0
    else:
        se = float(np.std(payoffs, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    counts = np.bincount(outcomes, minlength=5)
    return SimResult(estimate, se, int(counts[LOW]), int(counts[HIGH]),
                     int(counts[CAPPED] + counts[EXITED]), math.nan, n, int(counts[STOPPED]),
                     outcomes, taus, payoffs)


@numba.njit(cache=True)
def _normal_pair(gen, sign, sub):
    a = 0.0
    b = 0.0
    for _ in range(sub):
        a += gen.standard_normal()
        b += gen.standard_normal()
    s = sign / math.sqrt(sub)
    return a * s, b * s


@numba.njit(cache=True)
def _table(x, h, tab):
    """Linear interpolation on a uniform table starting at 0."""
    u = x / h
    i = int(u)
    if i >= tab.size - 1:
        return tab[tab.size - 1]
    if i < 0:
        return tab[0]
    w = u - i
    return (1.0 - w) * tab[i] + w * tab[i + 1]


@numba.njit(cache=True, nogil=True)
def _ruin_path(gen, sign, z0, upper, h, pi_tab, r_t, excess, bbar, s2, rho_t, lam,
               dt, n_steps, sub):
    if z0 <= 0.0:
        return LOW, 0.0, 1.0
    if z0 >= upper:
        return HIGH, 0.0, 0.0
    sq = math.sqrt(dt)
    cr = math.sqrt(1.0 - rho_t * rho_t)
    z = z0
    for k in range(n_steps):
        x1, x2 = _normal_pair(gen, sign, sub)
        pi = _table(z, h, pi_tab)
        db1 = sq * x1
        db2 = sq * (rho_t * x1 + cr * x2)
        z += (r_t * z - 1.0 + excess * pi) * dt + (z - pi) * bbar * db1 + pi * s2 * db2
        t = (k + 1) * dt
        if z <= 0.0:
            return LOW, t, math.exp(-lam * t)
        if z >= upper:
            return HIGH, t, 0.0
    return CAPPED, n_steps * dt, 0.0


def simulate_ruin(prm: Params, M: float | None, policy: PolicyCurve, z0: float,
                  cfg: SimConfig) -> SimResult:
    """Estimate E[exp(-lam tau_0); tau_0 < tau_M] under the feedback ``policy``.

    With ``M=None`` the policy grid's upper end acts as a truncation barrier.
    """
    upper = policy.grid.upper if M is None else float(M)
    if upper > policy.grid.upper + 1e-9 or policy.grid.lower != 0.0:
        raise ValueError(f"policy grid [0, {policy.grid.upper}] does not cover [0, {upper}]")
    if not 0.0 <= z0 <= upper:
        raise ValueError(f"start z0={z0} outside [0, {upper}]")
    d, mk = prm.derived, prm.market
    args = (upper, policy.grid.h, np.ascontiguousarray(policy.pi, dtype=float), d.r_tilde,
            d.excess, math.sqrt(d.bbar2), math.sqrt(d.bbar2 + mk.sigma ** 2), d.rho_tilde,
            prm.lam, cfg.dt, cfg.n_steps, cfg.substeps)
    res = _run_paths(cfg, _ruin_path, (float(z0),), args)
    res.bias_bound = math.exp(-prm.lam * cfg.n_steps * cfg.dt)
    return res


@numba.njit(cache=True, nogil=True)
def _ruin_2d_path(gen, sign, w0, c0, zmax, h, pi_tab, r, mu, sigma, a, b, rho, lam,
                  dt, n_steps, sub):
    if w0 <= 0.0:
        return LOW, 0.0, 1.0
    sq = math.sqrt(dt)
    cr = math.sqrt(1.0 - rho * rho)
    w = w0
    c = c0
    for k in range(n_steps):
        z = w / c
        if z > zmax:
            return EXITED, k * dt, 0.0
        x1, x2 = _normal_pair(gen, sign, sub)
        pi = c * (_table(z, h, pi_tab) + rho * (b / sigma) * z)
        dbs = sq * x1
        dbc = sq * (rho * x1 + cr * x2)
        w += (r * w + (mu - r) * pi - c) * dt + sigma * pi * dbs
        c *= math.exp((a - 0.5 * b * b) * dt + b * dbc)
        t = (k + 1) * dt
        if w <= 0.0:
            return LOW, t, math.exp(-lam * t)
    return CAPPED, n_steps * dt, 0.0


def simulate_ruin_2d(prm: Params, curve: ValueCurve, w0: float, c0: float,
                     cfg: SimConfig, policy: PolicyCurve | None = None) -> SimResult:
    """Ruin estimate for the original wealth/consumption pair under the lifted policy.

    Consumption is advanced exactly (it is geometric); wealth by Euler.  Paths
    whose ratio w/c leaves the curve's domain are stopped with payoff 0 and
    counted as capped.
    """
    if not c0 > 0:
        raise ValueError("consumption c0 must be positive")
    if w0 < 0:
        raise ValueError("wealth w0 must be nonnegative")
    if w0 / c0 > curve.grid.upper:
        raise ValueError("w0/c0 beyond curve domain")
    policy = policy or feedback_policy(curve, prm)
    mk = prm.market
    args = (curve.grid.upper, policy.grid.h, np.ascontiguousarray(policy.pi, dtype=float),
            mk.r, mk.mu, mk.sigma, mk.a, mk.b, mk.rho, mk.lam, cfg.dt, cfg.n_steps,
            cfg.substeps)
    res = _run_paths(cfg, _ruin_2d_path, (float(w0), float(c0)), args)
    res.bias_bound = math.exp(-prm.lam * cfg.n_steps * cfg.dt)
    return res


@numba.njit(cache=True, nogil=True)
def _game_path(gen, sign, y0, M, lo, hi, t_stop, y_lo, y_hi, alpha_tab, ctrl_scale, clip,
               lam, drift, vol, bbar, dt, n_steps, sub):
    """One path of the stopping game.

    Stops at the first time Y leaves (lo, hi) (boundary included) or reaches
    t_stop.  The control is ctrl_scale * alpha(Y), where alpha is tabulated on
    [y_lo, y_hi], ramps linearly to 0 below and vanishes above; with ``clip``
    it is capped at clip * Y.
    """
    acc = 0.0
    y = y0
    h = (y_hi - y_lo) / (alpha_tab.size - 1)
    sq = math.sqrt(dt)
    step_disc = math.exp(-lam * dt)
    disc = 1.0
    for k in range(n_steps + 1):
        t = k * dt
        if y <= lo or y >= hi or t >= t_stop - 1e-12:
            code = LOW if y <= lo else (HIGH if y >= hi else STOPPED)
            return code, t, acc + disc * min(M * y, 1.0)
        if k == n_steps:
            break
        if y <= y_lo:
            a = alpha_tab[0] * y / y_lo
        elif y >= y_hi:
            a = 0.0
        else:
            a = _table(y - y_lo, h, alpha_tab)
        a *= ctrl_scale
        if clip > 0.0 and a > clip * y:
            a = clip * y
        x1, x2 = _normal_pair(gen, sign, sub)
        acc += disc * y * dt
        disc *= step_disc
        y += y * (drift * dt + vol * sq * x1) + a * (bbar * dt + sq * x2)
        if y < 0.0:
            y = 0.0
    return CAPPED, n_steps * dt, acc + disc * min(M * y, 1.0)


@dataclass(frozen=True)
class StopRule:
    """Stopper strategy: leave (lo, hi), or reach time T, whichever first."""

    lo: float = -math.inf
    hi: float = math.inf
    T: float = math.inf
    name: str = "custom"


@dataclass(frozen=True)
class ControlRule:
    scale: float = 1.0
    clip_sqrt2m: bool = False
    name: str = "alpha*"


def optimal_stop(sol: DualSolution) -> StopRule:
    return StopRule(sol.boundary.y_M, sol.boundary.y_0, math.inf, "tau*")


def simulate_game(prm: Params, M: float, sol: DualSolution, y0: float, cfg: SimConfig,
                  alpha: AlphaCurve | None = None, stop: StopRule | None = None,
                  control: ControlRule | None = None) -> SimResult:
    """Discounted running reward plus terminal obstacle payoff under (control, stop).

    Defaults to the saddle pair (alpha*, tau*).
    """
    from .fbp_dual import alpha_star

    yM, y0b = sol.boundary.y_M, sol.boundary.y_0
    if not yM <= y0 <= y0b:
        raise ValueError(f"start y0={y0} outside the continuation region [{yM}, {y0b}]")
    if abs(M - sol.M) > 1e-12:
        raise ValueError("barrier does not match the dual solution")
    alpha = alpha or alpha_star(sol, prm)
    stop = stop or optimal_stop(sol)
    control = control or ControlRule()
    d = prm.derived
    clip = math.sqrt(2.0 * d.m) if control.clip_sqrt2m else 0.0
    args = (float(M), stop.lo, stop.hi, stop.T, yM, y0b,
            np.ascontiguousarray(alpha.ratio, dtype=float), control.scale, clip, prm.lam,
            prm.lam - d.r_tilde, d.excess / prm.market.sigma, math.sqrt(d.bbar2),
            cfg.dt, cfg.n_steps, cfg.substeps)
    res = _run_paths(cfg, _game_path, (float(y0),), args)
    res.bias_bound = math.exp(-prm.lam * cfg.n_steps * cfg.dt)
    return res


@dataclass
class SaddleRow:
    name: str
    side: str            # "stopper": estimate >= value;  "controller": estimate <= value
    estimate: float
    std_error: float
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def saddle_test(prm: Params, M: float, sol: DualSolution, y0: float, cfg: SimConfig,
                allowance: float = DISCRETIZATION_ALLOWANCE) -> dict:
    """Unilateral deviations from (alpha*, tau*) must not help the deviator."""
    from .fbp_dual import alpha_star

    yM, y0b = sol.boundary.y_M, sol.boundary.y_0
    if not yM < y0 < y0b:
        raise ValueError("saddle test needs a start strictly inside the continuation region")
    value = float(sol.value(y0))
    alpha = alpha_star(sol, prm)
    delta = 0.1 * (y0b - yM)
    rows = []

    u0 = float(payoff_u(M, y0))
    rows.append(SaddleRow("stop immediately", "stopper", u0, 0.0, 0.0, u0 >= value))

    stoppers = [StopRule(T=1.0, name="stop at T=1"),
                StopRule(yM + delta, y0b - delta, name="exit shrunken region"),
                StopRule(name="never stop before cap")]
    for rule in stoppers:
        res = simulate_game(prm, M, sol, y0, cfg, alpha, rule, ControlRule())
        tol = res.tolerance(allowance)
        rows.append(SaddleRow(rule.name, "stopper", res.estimate, res.std_error, tol,
                              res.estimate >= value - tol))

    controllers = [ControlRule(0.0, False, "alpha = 0"), ControlRule(0.5, False, "alpha = alpha*/2"),
                   ControlRule(2.0, True, "alpha = 2 alpha*, clipped at sqrt(2m) y")]
    for rule in controllers:
        res = simulate_game(prm, M, sol, y0, cfg, alpha, optimal_stop(sol), rule)
        tol = res.tolerance(allowance)
        rows.append(SaddleRow(rule.name, "controller", res.estimate, res.std_error, tol,
                              res.estimate <= value + tol))

    eq = simulate_game(prm, M, sol, y0, cfg, alpha)
    eq_tol = eq.tolerance(allowance)
    return {"y0": y0, "value": value, "rows": [r.to_dict() for r in rows],
            "equilibrium": {**eq.to_dict(), "tolerance": eq_tol,
                            "passed": abs(eq.estimate - value) <= eq_tol},
            "passed": all(r.passed for r in rows) and abs(eq.estimate - value) <= eq_tol}


def explicit_y_check(prm: Params, alpha_path, y0: float, cfg: SimConfig, coarsen: int = 1,
                     return_paths: bool = False) -> dict:
    """Euler scheme for the controlled dual process against its closed form.

    ``alpha_path`` is a constant or a callable of time, held constant over each
    step.  Increments are drawn at ``cfg.dt`` and summed ``coarsen`` at a
    time, so calls differing only in ``coarsen`` share one Brownian path.
    """
    if y0 < 0:
        raise ValueError("y0 must be nonnegative")
    d = prm.derived
    n_fine = cfg.n_steps
    if n_fine % coarsen:
        raise ValueError("coarsen must divide the number of steps")
    rng = path_generator(cfg.seed, 0)
    fine = rng.standard_normal((2, cfg.n_paths, n_fine)) * math.sqrt(cfg.dt)
    dB = fine.reshape(2, cfg.n_paths, n_fine // coarsen, coarsen).sum(axis=3)
    dt = cfg.dt * coarsen
    n = n_fine // coarsen
    t = np.arange(n) * dt
    alpha = (np.asarray(alpha_path(t), dtype=float) * np.ones(n) if callable(alpha_path)
             else np.full(n, float(alpha_path)))
    vol = d.excess / prm.market.sigma
    bbar = math.sqrt(d.bbar2)

    euler = np.empty((cfg.n_paths, n + 1))
    euler[:, 0] = y0
    for k in range(n):
        yk = euler[:, k]
        euler[:, k + 1] = yk + yk * ((prm.lam - d.r_tilde) * dt + vol * dB[0, :, k]) \
            + alpha[k] * (bbar * dt + dB[1, :, k])

    B1 = np.concatenate((np.zeros((cfg.n_paths, 1)), np.cumsum(dB[0], axis=1)), axis=1)
    tt = np.arange(n + 1) * dt
    H = np.exp((prm.lam - d.r_tilde - d.m) * tt + vol * B1)
    integrand = alpha / H[:, :-1] * (bbar * dt + dB[1])
    inner = np.concatenate((np.zeros((cfg.n_paths, 1)), np.cumsum(integrand, axis=1)), axis=1)
    closed = H * (y0 + inner)

    sup_gap = np.max(np.abs(euler - closed), axis=1)
    out = {"dt": dt, "max_gap": float(np.max(sup_gap)), "mean_sup_gap": float(np.mean(sup_gap))}
    if return_paths:
        out["euler"], out["closed"] = euler, closed
    return out
