"""Steady states of the elapsed-time model: roots of ``r I(r) = 1``.

``I(r)`` is the mean inter-spike interval at frozen activity ``r``; the
equilibrium density is ``n*(a) = r* exp(-int_0^a S(s, r*) ds)``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import InconsistencyError, NumericalError
from .firing import FD_REL_STEP, FiringModel
from .quadrature import PanelRule, pinned_edges

log = logging.getLogger(__name__)

ROOT_TOL = 1e-12
DEDUP_TOL = 1e-9
FOLD_TOL = 1e-8
MASS_TOL = 1e-8
REFRACTORY_IDENTITY_TOL = 1e-6
MAX_PANELS = 200_000


@dataclass(frozen=True)
class SteadyState:
    """Equilibrium activity with its linear-stability indicators.

    Attributes
    ----------
    r_star : float
        Equilibrium activity.
    A_star : float
        Connectivity indicator ``int dS/dr(a, r*) n*(a) da``.
    phi_at_r : float or None
        ``phi(r*)`` for refractory models.
    slope_inv_I : float
        ``d/dr (1/I)`` at ``r*``.
    mass_residual : float
        ``|int n* - 1|`` by quadrature.
    model : FiringModel
    fold_suspect : bool
        Set when the root is (nearly) tangential.
    """

    r_star: float
    A_star: float
    phi_at_r: Optional[float]
    slope_inv_I: float
    mass_residual: float
    model: FiringModel
    fold_suspect: bool = False

    @property
    def activation_age(self) -> float:
        return self.model.sigma

    def n_star(self, a):
        return density_n_star(self.model, self.r_star, a)


def default_a_max(model: FiringModel, r: float | None = None) -> float:
    """Age beyond which the survival tail is below ``1e-12``."""
    lower = model.s0
    if model.is_refractory and r is not None:
        lower = max(lower, float(model.phi(r)))
    return model.sigma + max(50.0, 30.0 / lower)


def tail_bound(model: FiringModel, a_max: float, r: float | None = None) -> float:
    """Analytic bound on ``int_{a_max}^inf exp(-int S)``."""
    lower = model.s0
    if model.is_refractory and r is not None:
        lower = max(lower, float(model.phi(r)))
    return float(np.exp(-lower * (a_max - model.sigma)) / lower)


def age_rule(model: FiringModel, r: float, a_max: float | None = None) -> PanelRule:
    """Composite Gauss rule on ``[0, a_max]`` with an edge pinned at ``sigma``.

    Panel width is ``min(sigma, 1/S_max)/4``; more than ``MAX_PANELS`` panels
    raises :class:`NumericalError`.
    """
    if a_max is None:
        a_max = default_a_max(model, r)
    width = min(model.time_scale, 1.0 / max(model.rate_bound(r), 1e-300)) / 4.0
    if a_max / width > MAX_PANELS:
        raise NumericalError(f"hazard at r={r!r} is too stiff for the age quadrature "
                             f"({a_max / width:.3g} panels needed, limit {MAX_PANELS})")
    pin = model.sigma if model.sigma > 0 else None
    return _cached_rule(float(a_max), float(width), pin)


@lru_cache(maxsize=16)
def _cached_rule(a_max: float, width: float, pin: float | None) -> PanelRule:
    return PanelRule.from_edges(pinned_edges(0.0, a_max, width, pin))


def survival_on_rule(model: FiringModel, r: float, rule: PanelRule) -> np.ndarray:
    """Survival at every node of ``rule``, integrating the hazard panel by panel."""
    if model.is_refractory:
        return model.survival(rule.nodes, r)
    cum = rule.cumulative(lambda a: model.rate(a, r))
    return np.exp(-cum)


def integral_I(model: FiringModel, r: float) -> float:
    """Mean inter-spike interval ``I(r) = int_0^inf exp(-int_0^a S(s, r) ds) da``.

    Examples
    --------
    >>> from elapsed_stability.firing import RefractoryModel, ConstantRate
    >>> integral_I(RefractoryModel(0.5, ConstantRate(1.0)), 3.0)
    1.5
    """
    r = float(r)
    if r < 0:
        from .errors import DomainError
        raise DomainError("activity must be non-negative")
    if model.is_refractory:
        value = model.sigma + 1.0 / float(model.phi(r))
    else:
        rule = age_rule(model, r)
        value = float(rule.integrate(survival_on_rule(model, r, rule)))
        value += tail_bound(model, rule.edges[-1])
    if not np.isfinite(value):
        raise NumericalError(f"I(r) is not finite at r={r!r} (value {value!r})")
    return value


def mismatch(model: FiringModel, r: float) -> float:
    """``psi(r) = r I(r) - 1``, zero exactly at steady states."""
    return r * integral_I(model, r) - 1.0


def compute_A_star(model: FiringModel, r_star: float) -> float:
    """Connectivity indicator ``A*``.

    Closed form ``r* phi'(r*) / phi(r*)`` for refractory models.
    """
    if model.is_refractory:
        return float(r_star * model.phi.derivative(r_star) / model.phi(r_star))
    rule = age_rule(model, r_star)
    dens = r_star * survival_on_rule(model, r_star, rule)
    return float(rule.integrate(model.dS_dr(rule.nodes, r_star) * dens))


def density_n_star(model: FiringModel, r_star: float, a):
    """Equilibrium density ``r* * survival(a, r*)``."""
    return r_star * model.survival(a, r_star)


def slope_inv_I(model: FiringModel, r_star: float) -> float:
    """``d/dr (1/I)`` at ``r*`` as ``-I'/I^2`` with a central difference for ``I'``."""
    h = FD_REL_STEP * max(1.0, abs(r_star))
    if r_star - h >= 0:
        d_I = (integral_I(model, r_star + h) - integral_I(model, r_star - h)) / (2 * h)
    else:
        d_I = (-3 * integral_I(model, r_star) + 4 * integral_I(model, r_star + h)
               - integral_I(model, r_star + 2 * h)) / (2 * h)
    value = -d_I / integral_I(model, r_star) ** 2
    if model.is_refractory:
        phi = float(model.phi(r_star))
        closed = compute_A_star(model, r_star) / (1.0 + model.sigma * phi)
        if abs(value - closed) > REFRACTORY_IDENTITY_TOL * max(1.0, abs(closed)):
            raise InconsistencyError(
                f"slope of 1/I by differences ({value}) disagrees with A*/(1+sigma phi) ({closed})")
    return float(value)


def mass_residual(model: FiringModel, r_star: float) -> float:
    rule = age_rule(model, r_star)
    mass = r_star * (rule.integrate(survival_on_rule(model, r_star, rule))
                     + tail_bound(model, rule.edges[-1], r_star))
    return float(abs(mass - 1.0))


def build_steady_state(model: FiringModel, r_star: float, fold_suspect: bool = False) -> SteadyState:
    """Package a certified root with its indicators."""
    A = compute_A_star(model, r_star)
    slope = slope_inv_I(model, r_star)
    phi = float(model.phi(r_star)) if model.is_refractory else None
    if model.is_refractory:
        refr = phi / (1.0 + model.sigma * phi)
        if abs(refr - r_star) > 1e-10:
            raise InconsistencyError(f"r*={r_star} violates r = phi/(1+sigma phi) ({refr})")
    resid = mass_residual(model, r_star)
    if resid > MASS_TOL:
        raise InconsistencyError(f"equilibrium density has mass error {resid:.3g}")
    fold = fold_suspect or abs(1.0 - slope) < 1e-3
    return SteadyState(float(r_star), A, phi, slope, resid, model, fold)


def default_r_max(model: FiringModel) -> float:
    if model.is_refractory:
        return 1.0 / model.sigma
    return 10.0 / model.time_scale


def find_steady_states(model: FiringModel, r_max: float | None = None,
                       n_scan: int = 2000) -> list[SteadyState]:
    """All steady states in ``(0, r_max]`` by sign scan plus bisection.

    Tangential roots, where ``|psi|`` dips below ``1e-8`` without a sign change,
    are returned with ``fold_suspect`` set.

    Examples
    --------
    >>> from elapsed_stability.firing import RefractoryModel, SatQuad
    >>> [round(s.r_star, 4) for s in find_steady_states(RefractoryModel(1.0, SatQuad(0.43**2)))]
    [0.4729]
    """
    if r_max is None:
        r_max = default_r_max(model)
    if not r_max > 0:
        raise ValueError("r_max must be positive")
    if n_scan < 100:
        raise ValueError("n_scan must be at least 100")

    grid = np.linspace(0.0, r_max, n_scan + 1)
    grid[0] = min(1e-12, r_max * 1e-9)
    psi = np.array([mismatch(model, r) for r in grid])
    f = lambda r: mismatch(model, r)

    found: list[tuple[float, bool]] = []
    for i in range(n_scan):
        lo, hi = grid[i], grid[i + 1]
        if psi[i] == 0.0:
            found.append((lo, False))
        elif psi[i] * psi[i + 1] < 0:
            root = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
            found.append((root, False))
    if psi[-1] == 0.0:
        found.append((grid[-1], False))

    # tangential roots: local minima of |psi| that never change sign
    absval = np.abs(psi)
    for i in range(1, n_scan):
        if absval[i] <= absval[i - 1] and absval[i] <= absval[i + 1] and psi[i - 1] * psi[i + 1] > 0 \
                and psi[i - 1] * psi[i] > 0:
            res = minimize_scalar(lambda r: abs(f(r)), bounds=(grid[i - 1], grid[i + 1]),
                                  method="bounded", options={"xatol": 1e-13})
            if abs(res.fun) < FOLD_TOL:
                found.append((float(res.x), True))

    found.sort()
    unique: list[tuple[float, bool]] = []
    for r, fold in found:
        if unique and abs(r - unique[-1][0]) <= DEDUP_TOL:
            unique[-1] = (unique[-1][0], unique[-1][1] or fold)
        else:
            unique.append((r, fold))

    states = []
    for r, fold in unique:
        if not fold and abs(f(r)) > 1e-10:
            raise NumericalError(f"root at r={r} not certified: |rI-1|={abs(f(r)):.3g}")
        states.append(build_steady_state(model, r, fold))

    if not states:
        if model.is_refractory:
            raise NumericalError("no steady state found for a refractory model; one always exists")
        near_edge = psi[-1]
        if near_edge <= 0:
            warnings.warn(f"psi(r_max)={near_edge:.3g} <= 0: roots may lie beyond r_max={r_max}")
    return states
