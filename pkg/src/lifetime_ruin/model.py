"""Market and mortality parameters, and the constants derived from them.

All rates are per year and volatilities per square-root year.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

PARAM_KEYS = ("r", "mu", "sigma", "a", "b", "rho", "lambda")


class ParameterError(ValueError):
    """Raised when a parameter set violates the standing assumptions."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid parameters: " + "; ".join(self.problems))


@dataclass(frozen=True)
class MarketParams:
    r: float
    mu: float
    sigma: float
    a: float
    b: float
    rho: float
    lam: float

    @classmethod
    def from_mapping(cls, data: dict) -> "MarketParams":
        missing = [k for k in PARAM_KEYS if k not in data]
        if missing:
            raise ParameterError([f"missing key {k!r}" for k in missing])
        unknown = sorted(set(data) - set(PARAM_KEYS))
        if unknown:
            raise ParameterError([f"unknown key {k!r}" for k in unknown])
        try:
            values = {k: float(data[k]) for k in PARAM_KEYS}
        except (TypeError, ValueError) as exc:
            raise ParameterError([f"non-numeric value: {exc}"]) from None
        return cls(values["r"], values["mu"], values["sigma"], values["a"],
                   values["b"], values["rho"], values["lambda"])

    def to_mapping(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


REFERENCE = MarketParams(r=0.02, mu=0.06, sigma=0.2, a=0.0, b=0.1, rho=0.0, lam=0.04)


@dataclass(frozen=True)
class ValidationReport:
    problems: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.problems

    def __bool__(self) -> bool:
        return self.ok


def validate(p: MarketParams) -> ValidationReport:
    """Check the standing assumptions; never raises."""
    problems = []
    for name in ("r", "mu", "sigma", "a", "b", "rho", "lam"):
        if not math.isfinite(getattr(p, name)):
            problems.append(f"{name} must be finite")
    if not p.sigma > 0:
        problems.append("sigma must be positive")
    if not p.b > 0:
        problems.append("b must be positive")
    if not p.lam > 0:
        problems.append("lambda must be positive")
    if not p.r > 0:
        problems.append("r must be positive")
    if abs(p.rho) >= 1:
        problems.append("|rho| = 1 precluded" if abs(p.rho) == 1 else "rho must lie in (-1, 1)")
    return ValidationReport(tuple(problems))


@dataclass(frozen=True)
class DerivedParams:
    r_tilde: float
    mu_tilde: float
    rho_tilde: float
    m: float
    excess: float
    # b^2 (1 - rho^2): the idiosyncratic consumption variance, used everywhere
    bbar2: float


def derive_params(p: MarketParams) -> DerivedParams:
    report = validate(p)
    if not report:
        raise ParameterError(list(report.problems))
    excess = p.mu - p.r - p.sigma * p.b * p.rho
    r_tilde = p.r - p.a + p.b ** 2 + excess * p.rho * p.b / p.sigma
    mu_tilde = excess + r_tilde
    bbar2 = p.b ** 2 * (1.0 - p.rho ** 2)
    rho_tilde = math.sqrt(bbar2) / math.sqrt(bbar2 + p.sigma ** 2)
    m = 0.5 * (excess / p.sigma) ** 2
    return DerivedParams(r_tilde, mu_tilde, rho_tilde, m, excess, bbar2)


@dataclass(frozen=True)
class Params:
    """Immutable (market, derived) bundle handed to every solver."""

    market: MarketParams
    derived: DerivedParams

    @classmethod
    def build(cls, market: MarketParams) -> "Params":
        return cls(market, derive_params(market))

    @property
    def lam(self) -> float:
        return self.market.lam


def load_params(path: str | Path) -> MarketParams:
    """Read parameters from a JSON object or a key=value text file."""
    text = Path(path).read_text()
    stripped = text.strip()
    if stripped.startswith("{"):
        data = json.loads(stripped)
        if "params" in data and isinstance(data["params"], dict):
            data = data["params"]
    else:
        data = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError([f"line {lineno}: expected key=value"])
            key, value = (s.strip() for s in line.split("=", 1))
            data[key] = value
    return MarketParams.from_mapping(data)
