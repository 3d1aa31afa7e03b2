"""Value distributions for ad items.

Four kinds are supported: ``uniform`` on ``[0, upper]``, ``lognormal``
truncated to ``[0, upper]`` and renormalized, ``degenerate-zero`` (organic
items, all mass at 0) and ``piecewise-table`` (piecewise-linear CDF, used to
build counterexamples in tests).

Every operation has a scalar form and most have a vectorized ``*_array`` twin
used by the batch simulation paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import ndtr, ndtri

UNIFORM = "uniform"
LOGNORMAL = "lognormal"
DEGENERATE_ZERO = "degenerate-zero"
PIECEWISE_TABLE = "piecewise-table"
KINDS = (UNIFORM, LOGNORMAL, DEGENERATE_ZERO, PIECEWISE_TABLE)

REGULARITY_GRID = 10_000
_SQRT2PI = math.sqrt(2.0 * math.pi)
_Z999 = 3.090232306167813  # standard normal 99.9th percentile


class DomainError(ValueError):
    """A value lies outside the support of a distribution."""


class UnsupportedOperation(ValueError):
    """The operation is undefined for this kind of distribution."""


class SingularityError(ArithmeticError):
    """The virtual value is undefined because the density vanishes."""


@dataclass(frozen=True)
class ValueDistribution:
    kind: str
    upper: float
    mu: float = 0.0
    sigma: float = 0.0
    breakpoints: tuple[float, ...] = ()
    cdf_values: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == DEGENERATE_ZERO:
            if self.upper != 0.0:
                raise ValueError("degenerate-zero distribution has upper bound 0")
            return
        if not (math.isfinite(self.upper) and self.upper > 0):
            raise ValueError(f"support upper bound must be positive, got {self.upper}")
        if self.kind == LOGNORMAL and self.sigma < 0:
            raise ValueError("lognormal sigma must be non-negative")
        if self.kind == PIECEWISE_TABLE:
            xs, fs = self.breakpoints, self.cdf_values
            if len(xs) != len(fs) or len(xs) < 2:
                raise ValueError("table needs matching breakpoints and cdf values")
            if xs[0] != 0.0 or xs[-1] != self.upper:
                raise ValueError("table breakpoints must span [0, upper]")
            if fs[0] != 0.0 or fs[-1] != 1.0:
                raise ValueError("table cdf must run from 0 to 1")
            if any(b <= a for a, b in zip(xs, xs[1:])):
                raise ValueError("table breakpoints must be strictly increasing")
            if any(b < a for a, b in zip(fs, fs[1:])):
                raise ValueError("table cdf must be non-decreasing")

    @property
    def log_upper_z(self) -> float:
        return (math.log(self.upper) - self.mu) / self.sigma

    @property
    def mass(self) -> float:
        """Untruncated lognormal mass below ``upper`` (renormalizing constant)."""
        return float(ndtr(self.log_upper_z))

    def to_json(self) -> dict:
        if self.kind == UNIFORM:
            return {"kind": UNIFORM, "upper": self.upper}
        if self.kind == LOGNORMAL:
            return {"kind": LOGNORMAL, "mu": self.mu, "sigma": self.sigma, "upper": self.upper}
        if self.kind == DEGENERATE_ZERO:
            return {"kind": DEGENERATE_ZERO}
        return {
            "kind": PIECEWISE_TABLE,
            "breakpoints": list(self.breakpoints),
            "cdf": list(self.cdf_values),
        }


def uniform(upper: float) -> ValueDistribution:
    return ValueDistribution(UNIFORM, float(upper))


def lognormal(mu: float, sigma: float, upper: float | None = None) -> ValueDistribution:
    """Lognormal truncated to ``[0, upper]``.

    ``upper`` defaults to the 99.9th percentile of the untruncated law.
    """
    if upper is None:
        upper = math.exp(mu + sigma * _Z999)
    return ValueDistribution(LOGNORMAL, float(upper), mu=float(mu), sigma=float(sigma))


def degenerate_zero() -> ValueDistribution:
    return ValueDistribution(DEGENERATE_ZERO, 0.0)


def piecewise_table(breakpoints, cdf_values) -> ValueDistribution:
    xs = tuple(float(x) for x in breakpoints)
    return ValueDistribution(
        PIECEWISE_TABLE, xs[-1], breakpoints=xs, cdf_values=tuple(float(f) for f in cdf_values)
    )


def from_json(desc: dict) -> ValueDistribution:
    kind = desc.get("kind")
    if kind == UNIFORM:
        return uniform(desc["upper"])
    if kind == LOGNORMAL:
        return lognormal(desc["mu"], desc["sigma"], desc.get("upper"))
    if kind == DEGENERATE_ZERO:
        return degenerate_zero()
    if kind == PIECEWISE_TABLE:
        return piecewise_table(desc["breakpoints"], desc["cdf"])
    raise ValueError(f"unknown distribution kind {kind!r}")


def _check_support(dist: ValueDistribution, v: float) -> None:
    if not (0.0 <= v <= dist.upper):
        raise DomainError(f"value {v} outside support [0, {dist.upper}]")


def _table_segment(dist: ValueDistribution, v: float) -> int:
    xs = dist.breakpoints
    seg = int(np.searchsorted(xs, v, side="right")) - 1
    return min(max(seg, 0), len(xs) - 2)


def cdf(dist: ValueDistribution, v: float) -> float:
    _check_support(dist, v)
    if dist.kind == DEGENERATE_ZERO:
        return 1.0
    if v >= dist.upper:
        return 1.0
    if dist.kind == UNIFORM:
        return v / dist.upper
    if dist.kind == LOGNORMAL:
        if v <= 0.0:
            return 0.0
        if dist.sigma == 0.0:
            return 1.0 if v >= math.exp(dist.mu) else 0.0
        z = (math.log(v) - dist.mu) / dist.sigma
        return min(float(ndtr(z)) / dist.mass, 1.0)
    return float(np.interp(v, dist.breakpoints, dist.cdf_values))


def pdf(dist: ValueDistribution, v: float) -> float:
    _check_support(dist, v)
    if dist.kind == DEGENERATE_ZERO:
        raise UnsupportedOperation("degenerate-zero distribution has no density")
    if dist.kind == UNIFORM:
        return 1.0 / dist.upper
    if dist.kind == LOGNORMAL:
        if dist.sigma == 0.0:
            raise UnsupportedOperation("lognormal with sigma=0 is a point mass")
        if v <= 0.0:
            return 0.0
        z = (math.log(v) - dist.mu) / dist.sigma
        return math.exp(-0.5 * z * z) / (v * dist.sigma * _SQRT2PI) / dist.mass
    seg = _table_segment(dist, v)
    xs, fs = dist.breakpoints, dist.cdf_values
    return (fs[seg + 1] - fs[seg]) / (xs[seg + 1] - xs[seg])


def virtual_value(dist: ValueDistribution, v: float) -> float:
    """``v - (1 - F(v)) / f(v)``; raises :class:`SingularityError` where f vanishes."""
    density = pdf(dist, v)
    if density <= 0.0:
        raise SingularityError(f"zero density at v={v}")
    if dist.kind == UNIFORM:
        return 2.0 * v - dist.upper
    return v - (1.0 - cdf(dist, v)) / density


class InverseResult(NamedTuple):
    value: float
    clamped: bool


def virtual_value_range(dist: ValueDistribution) -> tuple[float, float]:
    """Infimum and maximum of the virtual value over the support."""
    if dist.kind == UNIFORM:
        return -dist.upper, dist.upper
    if dist.kind == LOGNORMAL:
        return -math.inf, dist.upper
    lo = 0.0
    while pdf(dist, lo) <= 0.0:
        lo = _table_segment_end(dist, lo)
    return virtual_value(dist, lo), dist.upper


def _table_segment_end(dist: ValueDistribution, v: float) -> float:
    seg = _table_segment(dist, v)
    return dist.breakpoints[seg + 1]


def _safe_phi(dist: ValueDistribution, v: float) -> float:
    try:
        return virtual_value(dist, v)
    except SingularityError:
        return -math.inf


def inverse_virtual_value(dist: ValueDistribution, y: float) -> InverseResult:
    """Value whose virtual value is ``y``, by monotone bisection.

    Targets outside the virtual-value range are clamped to the nearest support
    endpoint and flagged.
    """
    if dist.kind == DEGENERATE_ZERO:
        raise UnsupportedOperation("degenerate-zero distribution has no virtual value")
    lo_phi, hi_phi = virtual_value_range(dist)
    if y >= hi_phi:
        return InverseResult(dist.upper, y > hi_phi)
    if y <= lo_phi:
        return InverseResult(0.0, y < lo_phi)
    if dist.kind == UNIFORM:
        return InverseResult(min(max(0.5 * (y + dist.upper), 0.0), dist.upper), False)
    # bisect until the bracket cannot shrink further in floating point;
    # the virtual value is steep near 0, so a fixed value tolerance is not enough
    lo, hi = 0.0, dist.upper
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _safe_phi(dist, mid) < y:
            lo = mid
        else:
            hi = mid
    return InverseResult(0.5 * (lo + hi), False)


def check_regularity(dist: ValueDistribution, grid_n: int = REGULARITY_GRID) -> bool:
    """True iff the virtual value is non-decreasing on a ``grid_n``-point grid."""
    if grid_n < 2:
        raise ValueError("grid_n must be at least 2")
    if dist.kind == DEGENERATE_ZERO:
        return True
    if dist.kind == LOGNORMAL and dist.sigma == 0.0:
        return False
    grid = np.linspace(0.0, dist.upper, grid_n)
    phi = virtual_value_array(dist, grid)
    finite = phi[np.isfinite(phi)]
    if finite.size < 2:
        return True
    # -inf only occurs at the low end of the support, where it is the minimum
    first = int(np.argmax(np.isfinite(phi)))
    if not np.all(np.isfinite(phi[first:])):
        return False
    slack = 1e-12 * np.maximum(1.0, np.abs(finite[:-1]))
    return bool(np.all(np.diff(finite) >= -slack))


def quantile(dist: ValueDistribution, p):
    """Inverse CDF; accepts a scalar or an array of probabilities."""
    p = np.asarray(p, dtype=float)
    if dist.kind == DEGENERATE_ZERO:
        out = np.zeros_like(p)
    elif dist.kind == UNIFORM:
        out = p * dist.upper
    elif dist.kind == LOGNORMAL:
        if dist.sigma == 0.0:
            out = np.full_like(p, math.exp(dist.mu))
        else:
            with np.errstate(divide="ignore"):
                out = np.exp(dist.mu + dist.sigma * ndtri(p * dist.mass))
            out = np.clip(out, 0.0, dist.upper)
    else:
        out = np.interp(p, dist.cdf_values, dist.breakpoints)
    return float(out) if out.ndim == 0 else out


def sample(dist: ValueDistribution, rng: np.random.Generator, size=None):
    """Draw from ``dist`` by inverse transform; reproducible given ``rng``."""
    if dist.kind == DEGENERATE_ZERO:
        return 0.0 if size is None else np.zeros(size)
    if dist.kind == UNIFORM:
        return rng.uniform(0.0, dist.upper, size)
    return quantile(dist, rng.uniform(0.0, 1.0, size))


def fit_lognormal(samples) -> ValueDistribution:
    """Moment-match a lognormal to positive samples; upper = 1.5 * max sample."""
    xs = np.asarray(samples, dtype=float)
    if xs.size < 2:
        raise ValueError("need at least two samples")
    if np.any(xs <= 0):
        raise DomainError("lognormal fit requires positive samples")
    logs = np.log(xs)
    sigma = float(np.std(logs, ddof=1))
    if sigma < 1e-12 * max(1.0, abs(float(np.mean(logs)))):
        sigma = 0.0
    return ValueDistribution(
        LOGNORMAL, float(xs.max() * 1.5), mu=float(np.mean(logs)), sigma=sigma
    )


# vectorized twins


def cdf_array(dist: ValueDistribution, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if dist.kind == DEGENERATE_ZERO:
        return np.ones_like(v)
    if dist.kind == UNIFORM:
        return np.clip(v / dist.upper, 0.0, 1.0)
    if dist.kind == LOGNORMAL:
        with np.errstate(divide="ignore"):
            z = (np.log(np.maximum(v, 0.0)) - dist.mu) / dist.sigma
        return np.minimum(ndtr(z) / dist.mass, 1.0)
    return np.interp(v, dist.breakpoints, dist.cdf_values)


def pdf_array(dist: ValueDistribution, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if dist.kind == DEGENERATE_ZERO:
        raise UnsupportedOperation("degenerate-zero distribution has no density")
    if dist.kind == UNIFORM:
        return np.full_like(v, 1.0 / dist.upper)
    if dist.kind == LOGNORMAL:
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (np.log(v) - dist.mu) / dist.sigma
            out = np.exp(-0.5 * z * z) / (v * dist.sigma * _SQRT2PI) / dist.mass
        return np.where(v > 0, out, 0.0)
    xs = np.asarray(dist.breakpoints)
    fs = np.asarray(dist.cdf_values)
    dens = np.diff(fs) / np.diff(xs)
    seg = np.clip(np.searchsorted(xs, v, side="right") - 1, 0, len(xs) - 2)
    return dens[seg]


def virtual_value_array(dist: ValueDistribution, v: np.ndarray) -> np.ndarray:
    """Vectorized virtual value; ``-inf`` where the density vanishes."""
    v = np.asarray(v, dtype=float)
    if dist.kind == UNIFORM:
        return 2.0 * v - dist.upper
    dens = pdf_array(dist, v)
    tail = 1.0 - cdf_array(dist, v)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = v - tail / dens
    return np.where(dens > 0, out, -np.inf)


def inverse_virtual_value_array(dist: ValueDistribution, y: np.ndarray) -> np.ndarray:
    """Vectorized inverse virtual value, clamped into ``[0, upper]``."""
    y = np.asarray(y, dtype=float)
    if dist.kind == UNIFORM:
        return np.clip(0.5 * (y + dist.upper), 0.0, dist.upper)
    lo = np.zeros_like(y)
    hi = np.full_like(y, dist.upper)
    # 48 halvings bring the bracket below 1e-14 * upper
    for _ in range(48):
        mid = 0.5 * (lo + hi)
        below = virtual_value_array(dist, mid) < y
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    out = 0.5 * (lo + hi)
    out = np.where(y >= dist.upper, dist.upper, out)
    return np.where(np.isneginf(y), 0.0, out)
