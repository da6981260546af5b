"""Firing coefficients S(a, r): hazard of discharge at age ``a`` given activity ``r``.

Two kinds are supported. :class:`RefractoryModel` is ``phi(r)`` for ages at or
beyond an absolute refractory period ``sigma`` and zero before it; everything
about it has a closed form. :class:`CustomModel` wraps an arbitrary vectorized
callable and falls back on quadrature and finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, DomainError
from .quadrature import adaptive_gauss

ArrayLike = float | np.ndarray

FD_REL_STEP = 1e-6
CUMULATIVE_RTOL = 1e-10
CUMULATIVE_DEPTH = 30


def _check_nonneg(name: str, x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0) or np.any(~np.isfinite(arr)):
        raise DomainError(f"{name} must be finite and non-negative, got {x!r}")
    return arr


def _scalar_or_array(x: np.ndarray):
    return float(x) if np.ndim(x) == 0 else x


def central_difference(f: Callable, r: np.ndarray) -> np.ndarray:
    """Derivative of ``f`` at ``r`` with step ``1e-6 * max(1, |r|)``.

    Falls back to a one-sided second-order stencil where ``r - h`` would be
    negative.
    """
    r = np.asarray(r, dtype=float)
    h = FD_REL_STEP * np.maximum(1.0, np.abs(r))
    central = (f(r + h) - f(np.maximum(r - h, 0.0))) / (2 * h)
    near_zero = r - h < 0
    if np.any(near_zero):
        forward = (-3 * f(r) + 4 * f(r + h) - f(r + 2 * h)) / (2 * h)
        central = np.where(near_zero, forward, central)
    return central


# ---------------------------------------------------------------------------
# Hazard curves phi(r)


class HazardCurve:
    """Activity-dependent rate ``phi(r)`` with a known positive lower bound."""

    name = "custom"

    def __call__(self, r: ArrayLike) -> ArrayLike:
        raise NotImplementedError

    def derivative(self, r: ArrayLike) -> ArrayLike:
        raise NotImplementedError

    @property
    def lower_bound(self) -> float:
        """Infimum of ``phi`` over ``r >= 0``."""
        raise NotImplementedError

    def upper_bound(self, r_max: float) -> float:
        """A bound on ``phi`` over ``[0, r_max]``, used to size quadrature panels."""
        grid = np.linspace(0.0, r_max, 257)
        return float(np.max(self(grid)))

    def params(self) -> dict:
        return {}


@dataclass(frozen=True)
class Sigmoid9(HazardCurve):
    """Logistic curve ``1 / (1 + exp(-9 b r + 3.5))``."""

    b: float
    name = "sigmoid9"

    def __call__(self, r):
        return 1.0 / (1.0 + np.exp(-9.0 * self.b * np.asarray(r, dtype=float) + 3.5))

    def derivative(self, r):
        p = self(r)
        return 9.0 * self.b * p * (1.0 - p)

    @property
    def lower_bound(self) -> float:
        # increasing for b >= 0, so the infimum sits at r = 0
        if self.b >= 0:
            return float(self(0.0))
        return 0.0

    def upper_bound(self, r_max: float) -> float:
        return float(max(self(0.0), self(r_max)))

    def params(self) -> dict:
        return {"b": self.b}


@dataclass(frozen=True)
class SatQuad(HazardCurve):
    """Saturating quadratic ``10 b_bar r^2 / (b_bar r^2 + 1) + 0.5``."""

    b_bar: float
    name = "satquad"

    def __post_init__(self):
        if self.b_bar < 0:
            raise ConfigurationError("b_bar must be non-negative")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        q = self.b_bar * r * r
        return 10.0 * q / (q + 1.0) + 0.5

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        return 20.0 * self.b_bar * r / (self.b_bar * r * r + 1.0) ** 2

    @property
    def lower_bound(self) -> float:
        return 0.5

    def upper_bound(self, r_max: float) -> float:
        return float(self(r_max))

    def params(self) -> dict:
        return {"b_bar": self.b_bar}


@dataclass(frozen=True)
class ConstantRate(HazardCurve):
    """Activity-independent rate."""

    s: float
    name = "constant"

    def __post_init__(self):
        if not self.s > 0:
            raise ConfigurationError("constant rate must be positive")

    def __call__(self, r):
        return np.full(np.shape(r), self.s, dtype=float) if np.ndim(r) else float(self.s)

    def derivative(self, r):
        return np.zeros(np.shape(r)) if np.ndim(r) else 0.0

    @property
    def lower_bound(self) -> float:
        return float(self.s)

    def upper_bound(self, r_max: float) -> float:
        return float(self.s)

    def params(self) -> dict:
        return {"s": self.s}


@dataclass(frozen=True)
class CustomCurve(HazardCurve):
    """User-supplied ``phi``; derivative by finite differences unless given."""

    func: Callable
    lower: float
    dfunc: Optional[Callable] = None
    name = "custom"

    def __post_init__(self):
        if not self.lower > 0:
            raise ConfigurationError("a custom hazard curve needs a positive lower bound")

    def __call__(self, r):
        return self.func(r)

    def derivative(self, r):
        if self.dfunc is not None:
            return self.dfunc(r)
        return central_difference(self.func, r)

    @property
    def lower_bound(self) -> float:
        return float(self.lower)


# ---------------------------------------------------------------------------
# Firing models S(a, r)


class FiringModel:
    """Common interface. Subclasses are immutable and vectorized in ``a`` and ``r``."""

    sigma: float
    is_refractory = False

    @property
    def s0(self) -> float:
        raise NotImplementedError

    def rate(self, a, r):
        raise NotImplementedError

    def dS_dr(self, a, r):
        raise NotImplementedError

    def cumulative(self, a, r):
        raise NotImplementedError

    def survival(self, a, r):
        return np.exp(-self.cumulative(a, r))

    def rate_bound(self, r: float) -> float:
        """Upper bound on ``S(., r)`` over all ages."""
        raise NotImplementedError

    @property
    def time_scale(self) -> float:
        """Characteristic age used to size grids by default."""
        return self.sigma if self.sigma > 0 else 1.0 / self.s0

    def describe(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class RefractoryModel(FiringModel):
    """``S(a, r) = phi(r)`` for ``a >= sigma`` and 0 below.

    The age ``a = sigma`` itself counts as active.

    Examples
    --------
    >>> m = RefractoryModel(0.5, Sigmoid9(1.0))
    >>> round(m.rate(1.0, 0.5), 6)
    0.731059
    """

    sigma: float
    phi: HazardCurve
    is_refractory = True

    def __post_init__(self):
        if not (self.sigma > 0 and np.isfinite(self.sigma)):
            raise ConfigurationError("refractory period sigma must be positive")
        if not self.phi.lower_bound > 0:
            raise ConfigurationError("hazard curve must be bounded below by a positive rate")

    @property
    def s0(self) -> float:
        return self.phi.lower_bound

    def rate(self, a, r):
        a = _check_nonneg("age", a)
        r = _check_nonneg("activity", r)
        return _scalar_or_array(np.where(a >= self.sigma, self.phi(r), 0.0))

    def dS_dr(self, a, r):
        a = _check_nonneg("age", a)
        r = _check_nonneg("activity", r)
        return _scalar_or_array(np.where(a >= self.sigma, self.phi.derivative(r), 0.0))

    def cumulative(self, a, r):
        a = _check_nonneg("age", a)
        r = _check_nonneg("activity", r)
        return _scalar_or_array(self.phi(r) * np.maximum(a - self.sigma, 0.0))

    def exposure(self, a0, a1, r):
        """``int_{a0}^{a1} S(s, r) ds`` for arrays of age intervals."""
        active = np.clip(a1, self.sigma, None) - np.clip(a0, self.sigma, None)
        return self.phi(r) * active

    def rate_bound(self, r: float) -> float:
        return float(self.phi(r))

    def describe(self) -> dict:
        return {"kind": "refractory", "sigma": self.sigma, "phi": self.phi.name, **self.phi.params()}


@dataclass(frozen=True)
class CustomModel(FiringModel):
    """Arbitrary firing coefficient given by a vectorized callable ``rate(a, r)``.

    Parameters
    ----------
    rate_func : callable
        ``(a, r) -> S`` broadcasting over numpy arrays.
    sigma : float
        Activation age; ``rate_func`` is expected to be at least ``s0`` beyond it.
    lower_rate : float
        The lower bound ``s0``.
    d_rate_func : callable, optional
        Analytic ``dS/dr``. Without it a central difference is used, unless
        ``allow_fd`` is False.
    rate_max : float, optional
        Upper bound on the rate; estimated by sampling when omitted.
    """

    rate_func: Callable
    sigma: float
    lower_rate: float
    d_rate_func: Optional[Callable] = None
    allow_fd: bool = True
    rate_max: Optional[float] = None
    label: str = field(default="custom")

    def __post_init__(self):
        if not (self.sigma >= 0 and np.isfinite(self.sigma)):
            raise ConfigurationError("activation age sigma must be non-negative")
        if not self.lower_rate > 0:
            raise ConfigurationError("custom models must declare a positive lower rate s0")

    @property
    def s0(self) -> float:
        return float(self.lower_rate)

    def rate(self, a, r):
        a = _check_nonneg("age", a)
        r = _check_nonneg("activity", r)
        return _scalar_or_array(np.asarray(self.rate_func(a, r), dtype=float))

    def dS_dr(self, a, r):
        a = _check_nonneg("age", a)
        r = _check_nonneg("activity", r)
        if self.d_rate_func is not None:
            out = self.d_rate_func(a, r)
        elif self.allow_fd:
            out = central_difference(lambda x: self.rate_func(a, x), r)
        else:
            raise ConfigurationError("no analytic dS/dr and finite differences are disabled")
        return _scalar_or_array(np.asarray(out, dtype=float))

    def cumulative(self, a, r):
        a = _check_nonneg("age", a)
        r = _check_nonneg("activity", r)
        a_b, r_b = np.broadcast_arrays(a, r)
        out = np.empty(a_b.shape)
        for idx in np.ndindex(a_b.shape):
            out[idx] = self._cumulative_scalar(float(a_b[idx]), float(r_b[idx]))
        return _scalar_or_array(out)

    def _cumulative_scalar(self, a: float, r: float) -> float:
        if a == 0.0:
            return 0.0
        f = lambda s: self.rate_func(s, r)
        cuts = [0.0, a] if not (0.0 < self.sigma < a) else [0.0, self.sigma, a]
        return sum(adaptive_gauss(f, lo, hi, rtol=CUMULATIVE_RTOL, max_depth=CUMULATIVE_DEPTH)
                   for lo, hi in zip(cuts[:-1], cuts[1:]))

    def rate_bound(self, r: float) -> float:
        if self.rate_max is not None:
            return float(self.rate_max)
        ages = np.linspace(0.0, self.sigma + 60.0 / self.s0, 2001)
        return float(np.max(self.rate_func(ages, r)))

    def describe(self) -> dict:
        return {"kind": "custom", "sigma": self.sigma, "s0": self.s0, "label": self.label}


def refractory_as_custom(model: RefractoryModel, analytic_derivative: bool = True) -> CustomModel:
    """Wrap a refractory model pointwise so the general quadrature routes apply to it."""
    d = model.dS_dr if analytic_derivative else None
    return CustomModel(model.rate, model.sigma, model.s0, d_rate_func=d,
                       rate_max=model.phi.upper_bound(1.0 / model.sigma), label="wrapped-refractory")


# Functional aliases


def eval_S(model: FiringModel, a, r):
    """Firing rate ``S(a, r)``."""
    return model.rate(a, r)


def eval_dSdr(model: FiringModel, a, r):
    """Partial derivative ``dS/dr``."""
    return model.dS_dr(a, r)


def cumulative_S(model: FiringModel, a, r):
    """Exposure ``int_0^a S(s, r) ds``."""
    return model.cumulative(a, r)


def survival(model: FiringModel, a, r):
    """Probability of reaching age ``a`` without discharge at frozen activity ``r``."""
    return model.survival(a, r)
