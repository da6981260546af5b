"""Characteristic roots of the delayed linearization and stability verdicts.

For refractory models root finding uses the entire function

    F(z) = exp(z d) (z + phi (1 - exp(-sigma z))) / z - A*,

whose zeros are those of ``Phi_d(z) = 1 - exp(-z d) (h0_hat(z) + A*)``
without the removable singularity at the origin. Other models evaluate
``Phi_d`` through the quadrature transform, which is valid only for
``Re z > -0.95 s0``.

Roots are counted with the argument principle on rectangle boundaries,
isolated by bisection and polished by damped Newton iterations. Only the
upper half plane is searched; conjugates are implied.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigurationError, DomainError, IndeterminateError, NumericalError
from .firing import FiringModel
from .kernel import KernelTrace, age_moments, laplace_h0_general, laplace_h0_refractory
from .steady import SteadyState

log = logging.getLogger(__name__)

MIN_EDGE_POINTS = 64
MAX_REFINE_DEPTH = 20
MAX_PERTURB = 5
PERTURB_STEP = 1e-6
BOUNDARY_EPS = 1e-9
NEWTON_MAX_ITER = 100
CERTIFY_TOL = 1e-10
DEAD_BAND = 1e-4
TIE_TOL = 1e-9
REAL_AXIS_MARGIN = 1e-3
SERIES_RADIUS = 1e-4


class Verdict(str, Enum):
    STABLE = "Stable"
    UNSTABLE = "Unstable"
    INCONCLUSIVE = "Inconclusive"


class Clause(str, Enum):
    """Criterion that decided a verdict; the values are the labels written to output tables."""

    SLOPE_ABOVE_ONE = "Thm3_1"
    KERNEL_CONTRACTION = "Thm3_2"
    A_STAR_ABOVE_ONE = "Thm3_3"
    REFRACTORY_A_BELOW_ONE = "Thm5_1"
    REFRACTORY_A_BETWEEN = "Thm5_2"
    REFRACTORY_A_ABOVE_UPPER = "Thm5_3"
    DOMINANT_ROOT_SIGN = "DominantRootSign"
    NONE = "None"


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle ``[re_lo, re_hi] x [om_lo, om_hi]`` in the complex plane."""

    re_lo: float
    re_hi: float
    om_lo: float
    om_hi: float

    def __post_init__(self):
        if not (self.re_lo < self.re_hi and self.om_lo < self.om_hi):
            raise ValueError(f"degenerate rectangle {self}")

    @property
    def width(self) -> float:
        return self.re_hi - self.re_lo

    @property
    def height(self) -> float:
        return self.om_hi - self.om_lo

    @property
    def center(self) -> complex:
        return complex(0.5 * (self.re_lo + self.re_hi), 0.5 * (self.om_lo + self.om_hi))

    @property
    def diameter(self) -> float:
        return float(np.hypot(self.width, self.height))

    def contains(self, z: complex, margin: float = 0.0) -> bool:
        return (self.re_lo - margin <= z.real <= self.re_hi + margin
                and self.om_lo - margin <= z.imag <= self.om_hi + margin)

    def grown(self, eps: float) -> "Rect":
        return Rect(self.re_lo - eps, self.re_hi + eps, self.om_lo - eps, self.om_hi + eps)

    def split(self, fraction: float = 0.5) -> tuple["Rect", "Rect"]:
        """Cut across the longer side at ``fraction`` of its length."""
        if self.width >= self.height:
            cut = self.re_lo + fraction * self.width
            return (Rect(self.re_lo, cut, self.om_lo, self.om_hi),
                    Rect(cut, self.re_hi, self.om_lo, self.om_hi))
        cut = self.om_lo + fraction * self.height
        return (Rect(self.re_lo, self.re_hi, self.om_lo, cut),
                Rect(self.re_lo, self.re_hi, cut, self.om_hi))

    def boundary(self, spacing: float) -> np.ndarray:
        """Counter-clockwise closed polygon of boundary points (first point repeated)."""
        corners = [complex(self.re_lo, self.om_lo), complex(self.re_hi, self.om_lo),
                   complex(self.re_hi, self.om_hi), complex(self.re_lo, self.om_hi)]
        pts = []
        for a, b in zip(corners, corners[1:] + corners[:1]):
            n = max(MIN_EDGE_POINTS, int(np.ceil(abs(b - a) / spacing)))
            pts.append(a + (b - a) * np.arange(n) / n)
        pts.append(np.array([corners[0]]))
        return np.concatenate(pts)


@dataclass(frozen=True)
class ComplexRoot:
    """A zero of the characteristic function, canonicalized to ``Im z >= 0``."""

    z: complex
    residual: float
    newton_iters: int
    region: Optional[Rect] = None
    unrefined: bool = False
    derivative_abs: float = 1.0
    multiplicity: int = 1

    @property
    def rate(self) -> float:
        return self.z.real

    @property
    def frequency(self) -> float:
        return self.z.imag


@dataclass(frozen=True)
class StabilityReport:
    verdict: Verdict
    clause: Clause
    dominant: Optional[ComplexRoot] = None
    notes: str = ""


class CharFunction:
    """Characteristic function of a steady state at delay ``d``.

    Parameters
    ----------
    steady : SteadyState
    d : float
        Delay, non-negative.
    mode : {"entire", "general"}, optional
        Defaults to ``"entire"`` for refractory models.

    Calling the object evaluates ``F`` (entire mode) or ``Phi_d`` (general mode);
    both vanish at the same points. :meth:`phi_d` always returns ``Phi_d``.
    """

    def __init__(self, steady: SteadyState, d: float, mode: str | None = None):
        if d < 0 or not np.isfinite(d):
            raise DomainError("delay must be finite and non-negative")
        self.steady = steady
        self.model: FiringModel = steady.model
        self.d = float(d)
        if mode is None:
            mode = "entire" if self.model.is_refractory else "general"
        if mode not in ("entire", "general"):
            raise ConfigurationError(f"unknown characteristic function mode {mode!r}")
        if mode == "entire" and not self.model.is_refractory:
            raise ConfigurationError("the entire form needs a refractory model")
        self.mode = mode
        self.A = steady.A_star
        self.phi = steady.phi_at_r
        self.sigma = self.model.sigma

    def with_delay(self, d: float) -> "CharFunction":
        return CharFunction(self.steady, d, self.mode)

    @property
    def domain_re_min(self) -> float:
        return -np.inf if self.mode == "entire" else -0.95 * self.model.s0

    # entire form -----------------------------------------------------------

    def _q(self, z: np.ndarray) -> np.ndarray:
        """``(z + phi (1 - exp(-sigma z))) / z`` with its series near 0."""
        phi, sig = self.phi, self.sigma
        out = np.empty(z.shape, dtype=complex)
        small = np.abs(z) < SERIES_RADIUS
        zs = z[small]
        out[small] = 1.0 + phi * sig - phi * sig ** 2 * zs / 2 + phi * sig ** 3 * zs ** 2 / 6
        zb = z[~small]
        out[~small] = 1.0 + phi * (-np.expm1(-sig * zb)) / zb
        return out

    def _dq(self, z: np.ndarray) -> np.ndarray:
        phi, sig = self.phi, self.sigma
        out = np.empty(z.shape, dtype=complex)
        small = np.abs(z) < SERIES_RADIUS
        zs = z[small]
        out[small] = -phi * sig ** 2 / 2 + phi * sig ** 3 * zs / 3
        zb = z[~small]
        out[~small] = phi * (sig * np.exp(-sig * zb) * zb + np.expm1(-sig * zb)) / zb ** 2
        return out

    # public evaluation -----------------------------------------------------

    def __call__(self, z):
        scalar = np.ndim(z) == 0
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        if self.mode == "entire":
            # far-left trial points overflow to inf/nan; callers reject non-finite values
            with np.errstate(over="ignore", invalid="ignore"):
                val = np.exp(z * self.d) * self._q(z) - self.A
        else:
            val = 1.0 - np.exp(-z * self.d) * laplace_h0_general(self.model, self.steady, z)
        return complex(val[0]) if scalar else val

    def derivative(self, z):
        scalar = np.ndim(z) == 0
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        if self.mode == "entire":
            with np.errstate(over="ignore", invalid="ignore"):
                val = np.exp(z * self.d) * (self.d * self._q(z) + self._dq(z))
        else:
            # analytic, so step along the imaginary axis to keep Re z inside the domain
            h = 1e-6j * np.maximum(1.0, np.abs(z))
            val = (self(z + h) - self(z - h)) / (2 * h)
        return complex(val[0]) if scalar else val

    def phi_d(self, z):
        """``1 - exp(-z d) (h0_hat(z) + A*)``."""
        if self.mode == "entire":
            return 1.0 - np.exp(-np.asarray(z) * self.d) * laplace_h0_refractory(self.steady, z)
        return self(z)

    def sampling_spacing(self) -> float:
        """Boundary point spacing resolving the oscillation scales ``d`` and ``sigma``."""
        return 0.5 / max(self.d, self.model.time_scale, 0.05)


def eval_char(cf: CharFunction, z):
    """Evaluate the characteristic function (entire ``F`` or ``Phi_d`` by mode)."""
    if cf.mode == "general" and np.any(np.asarray(z).real <= cf.domain_re_min):
        raise DomainError("z lies outside the transform domain")
    return cf(z)


# ---------------------------------------------------------------------------
# Argument principle


def _winding(cf: CharFunction, rect: Rect) -> int:
    z = rect.boundary(cf.sampling_spacing())
    vals = cf(z)
    scale = 1.0 + abs(cf.A)
    for _ in range(MAX_REFINE_DEPTH + 1):
        if np.min(np.abs(vals)) < BOUNDARY_EPS * scale or not np.all(np.isfinite(vals)):
            raise _OnBoundary
        steps = np.angle(vals[1:] / vals[:-1])
        bad = np.nonzero(np.abs(steps) >= np.pi / 2)[0]
        if len(bad) == 0:
            total = np.sum(steps) / (2 * np.pi)
            n = int(round(total))
            if abs(total - n) > 1e-3:
                raise IndeterminateError(f"winding number {total} is not an integer")
            return n
        mid = 0.5 * (z[bad] + z[bad + 1])
        z = np.insert(z, bad + 1, mid)
        vals = np.insert(vals, bad + 1, cf(mid))
    raise IndeterminateError(f"phase continuity not reached on {rect} after {MAX_REFINE_DEPTH} refinements")


class _OnBoundary(Exception):
    pass


def count_roots_rect(cf: CharFunction, rect: Rect) -> int:
    """Number of zeros (with multiplicity) inside ``rect``.

    If a zero sits on or near the boundary the rectangle is grown by ``1e-6``
    and the count retried, up to five times.
    """
    if rect.re_lo <= cf.domain_re_min:
        raise DomainError("rectangle leaves the transform domain")
    for attempt in range(MAX_PERTURB + 1):
        try:
            return _winding(cf, rect.grown(attempt * PERTURB_STEP))
        except _OnBoundary:
            continue
    raise IndeterminateError(f"a zero lies on the boundary of {rect}; perturbation failed")


# ---------------------------------------------------------------------------
# Root isolation and refinement


def newton_polish(cf: CharFunction, z0: complex, tol: float = 1e-12,
                  max_iter: int = NEWTON_MAX_ITER) -> tuple[complex, float, int, bool, float]:
    """Damped Newton iteration with step halving.

    Returns ``(z, |F(z)|, iterations, converged, |F'(z)|)``.
    """
    z = complex(z0)
    f = cf(z)
    fp = cf.derivative(z)
    for it in range(1, max_iter + 1):
        if fp == 0 or not np.isfinite(fp):
            return z, abs(f), it, False, abs(fp)
        step = f / fp
        t = 1.0
        while True:
            zn = z - t * step
            # trial points left of the transform domain count as failed steps
            fn = cf(zn) if zn.real > cf.domain_re_min else complex(np.inf)
            if np.isfinite(fn) and abs(fn) < abs(f):
                break
            t *= 0.5
            if t < 1e-10:
                break
        if not (np.isfinite(fn) and abs(fn) < abs(f)):
            ok = abs(f) <= CERTIFY_TOL * (1.0 + abs(fp))
            return z, abs(f), it, ok, abs(fp)
        z, f = zn, fn
        fp = cf.derivative(z)
        if abs(f) <= tol * (1.0 + abs(fp)):
            return z, abs(f), it, True, abs(fp)
        if abs(t * step) < 4e-16 * (1.0 + abs(z)):
            ok = abs(f) <= CERTIFY_TOL * (1.0 + abs(fp))
            return z, abs(f), it, ok, abs(fp)
    ok = abs(f) <= CERTIFY_TOL * (1.0 + abs(fp))
    return z, abs(f), max_iter, ok, abs(fp)


def _canonical(root: ComplexRoot) -> ComplexRoot:
    if root.z.imag < 0:
        return replace(root, z=root.z.conjugate())
    return root


_SPLIT_FRACTIONS = (0.5 + 1 / 97, 0.5 - 1 / 53, 0.5 + 1 / 31, 0.41, 0.61)


def find_roots(cf: CharFunction, rect: Rect, tol: float = 1e-12,
               min_size: float = 1e-9) -> list[ComplexRoot]:
    """All zeros inside ``rect``, each refined to ``|F| <= tol (1 + |F'|)``.

    The rectangle is bisected until each piece holds one zero, which Newton
    then polishes from the piece's center. Zeros that refuse to converge, or
    clusters that cannot be separated above ``min_size``, are returned with
    ``unrefined`` set. Roots with negative imaginary part are reported as
    their conjugates.
    """
    total = count_roots_rect(cf, rect)
    roots: list[ComplexRoot] = []
    stack = [(rect, total)]
    while stack:
        r, n = stack.pop()
        if n <= 0:
            continue
        tiny = r.diameter < min_size
        if n == 1 or tiny:
            z, res, iters, ok, dabs = newton_polish(cf, r.center, tol)
            if ok and r.contains(z, margin=1e-9 * (1 + abs(z))):
                roots.append(ComplexRoot(z, res, iters, r, False, dabs, n))
                continue
            if tiny:
                roots.append(ComplexRoot(r.center, abs(cf(r.center)), iters, r, True, dabs, n))
                continue
        for frac in _SPLIT_FRACTIONS:
            a, b = r.split(frac)
            try:
                na, nb = count_roots_rect(cf, a), count_roots_rect(cf, b)
            except IndeterminateError:
                continue
            if na + nb == n:
                stack.extend([(a, na), (b, nb)])
                break
        else:
            roots.append(ComplexRoot(r.center, abs(cf(r.center)), 0, r, True, 1.0, n))
    roots = [_canonical(x) for x in roots]
    roots.sort(key=lambda x: (-x.z.real, abs(x.z.imag)))
    unique: list[ComplexRoot] = []
    for x in roots:
        if not any(abs(x.z - y.z) <= 1e-8 * (1 + abs(x.z)) for y in unique):
            unique.append(x)
    return unique


# ---------------------------------------------------------------------------
# Dominant root


@dataclass(frozen=True)
class SearchRegion:
    re_lo: float
    re_hi: float
    om_max: float


def default_search(cf: CharFunction) -> SearchRegion:
    """Default rectangle for the dominant-root search.

    ``re_lo`` stays a little left of ``min(ln|A*|/d, 0)`` when ``0 < |A*| < 1``
    (never below ``-0.9 s0``), so roots just left of the imaginary axis are
    always inside.
    """
    model = cf.model
    s0 = model.s0
    A = abs(cf.A)
    d = cf.d
    floor = -0.9 * s0
    if d > 0 and 0 < A < 1:
        re_lo = max(floor, min(np.log(A) / d, 0.0) - 0.05)
    else:
        re_lo = floor
    rate_hi = cf.phi if cf.phi is not None else model.rate_bound(cf.steady.r_star)
    if d > 0:
        re_hi = max(2.0, A * np.e / d, 4.0 * rate_hi + 1.0)
    else:
        gap = abs(1.0 - cf.A)
        re_hi = max(2.0, min(1e3, 2.0 * rate_hi / gap + 1.0)) if gap > 0 else 1e3
    scale = min(d, model.time_scale) if d > 0 else model.time_scale
    return SearchRegion(float(re_lo), float(re_hi), float(20 * np.pi / scale))


def _strip(search: SearchRegion, re_lo: float) -> Rect:
    return Rect(re_lo, search.re_hi, -REAL_AXIS_MARGIN, search.om_max)


def _pick_dominant(roots: list[ComplexRoot]) -> Optional[ComplexRoot]:
    if not roots:
        return None
    top = max(x.z.real for x in roots)
    tied = [x for x in roots if x.z.real >= top - TIE_TOL]
    return min(tied, key=lambda x: abs(x.z.imag))


def dominant_root(cf: CharFunction, search: SearchRegion | None = None,
                  re_resolution: float = 1e-2) -> Optional[ComplexRoot]:
    """Root of maximal real part inside the search region, or None.

    The left edge is bisected on "region still holds a root" until the strip
    is ``re_resolution`` wide; the roots in that strip are then located.
    """
    search = search or default_search(cf)
    lo = search.re_lo
    if count_roots_rect(cf, _strip(search, lo)) == 0:
        return None
    hi = search.re_hi
    while hi - lo > re_resolution:
        mid = 0.5 * (lo + hi)
        if count_roots_rect(cf, _strip(search, mid)) > 0:
            lo = mid
        else:
            hi = mid
    roots = find_roots(cf, Rect(lo, hi, -REAL_AXIS_MARGIN, search.om_max))
    return _pick_dominant(roots)


def roots_in_band(cf: CharFunction, band: float, search: SearchRegion | None = None,
                  limit: int = 24) -> list[ComplexRoot]:
    """Roots within ``band`` of the dominant real part, best first."""
    search = search or default_search(cf)
    top = dominant_root(cf, search)
    if top is None:
        return []
    lo = max(search.re_lo, top.z.real - band)
    roots = find_roots(cf, _strip(search, lo))
    roots.sort(key=lambda x: (-x.z.real, abs(x.z.imag)))
    return roots[:limit]


# ---------------------------------------------------------------------------
# Stability classification


def classify_stability(model: FiringModel, steady: SteadyState, d: float,
                       kernel: KernelTrace | None = None,
                       search: SearchRegion | None = None) -> StabilityReport:
    """Verdict from the first clause of the criteria cascade that applies.

    Order: slope of ``1/I`` above 1 (``d > 0``); ``|A*| > 1`` (``d > 0``);
    ``|A*| + ||h0||_1 < 1`` when a kernel is supplied; the refractory
    ``d = 0`` criteria in ``A*`` and ``1 + sigma phi``; finally the sign of the
    dominant root with a ``1e-4`` dead band.
    """
    A = steady.A_star
    if d > 0 and steady.slope_inv_I > 1:
        return StabilityReport(Verdict.UNSTABLE, Clause.SLOPE_ABOVE_ONE,
                               notes=f"slope of 1/I = {steady.slope_inv_I:.6g} > 1")
    if d > 0 and abs(A) > 1:
        return StabilityReport(Verdict.UNSTABLE, Clause.A_STAR_ABOVE_ONE, notes=f"|A*| = {abs(A):.6g} > 1")
    if kernel is not None:
        total = abs(A) + kernel.l1_partial + kernel.l1_tail_bound
        if total < 1:
            return StabilityReport(Verdict.STABLE, Clause.KERNEL_CONTRACTION,
                                   notes=f"|A*| + ||h0||_1 <= {total:.6g} < 1")
    if model.is_refractory and d == 0:
        upper = 1.0 + model.sigma * steady.phi_at_r
        if np.isclose(A, 1.0, rtol=0, atol=1e-12) or np.isclose(A, upper, rtol=0, atol=1e-12):
            return StabilityReport(Verdict.INCONCLUSIVE, Clause.NONE,
                                   notes="A* sits on a boundary of the d = 0 criteria")
        if A < 1:
            return StabilityReport(Verdict.STABLE, Clause.REFRACTORY_A_BELOW_ONE, notes=f"A* = {A:.6g} < 1")
        if A < upper:
            return StabilityReport(Verdict.UNSTABLE, Clause.REFRACTORY_A_BETWEEN,
                                   notes=f"1 < A* = {A:.6g} < 1 + sigma phi = {upper:.6g}")
        return StabilityReport(Verdict.STABLE, Clause.REFRACTORY_A_ABOVE_UPPER,
                               notes=f"A* = {A:.6g} > 1 + sigma phi = {upper:.6g}")
    cf = CharFunction(steady, d)
    root = dominant_root(cf, search)
    if root is None:
        return StabilityReport(Verdict.STABLE, Clause.DOMINANT_ROOT_SIGN,
                               notes="no root in the search region")
    if root.z.real > DEAD_BAND:
        verdict = Verdict.UNSTABLE
    elif root.z.real < -DEAD_BAND:
        verdict = Verdict.STABLE
    else:
        verdict = Verdict.INCONCLUSIVE
    return StabilityReport(verdict, Clause.DOMINANT_ROOT_SIGN, root,
                           notes=f"dominant root {root.z:.6g}")


# ---------------------------------------------------------------------------
# Continuation in the delay


@dataclass(frozen=True)
class TracePoint:
    d: float
    root: Optional[ComplexRoot]
    error: str = ""


def _continue_roots(cf: CharFunction, seeds: list[complex]) -> list[ComplexRoot]:
    out: list[ComplexRoot] = []
    for z0 in seeds:
        z, res, iters, ok, dabs = newton_polish(cf, z0)
        if not ok or abs(z - z0) > 0.5:
            continue
        root = _canonical(ComplexRoot(z, res, iters, None, False, dabs))
        if not any(abs(root.z - y.z) <= 1e-7 * (1 + abs(root.z)) for y in out):
            out.append(root)
    return out


def trace_dominant_root(model: FiringModel, steady: SteadyState, d_grid,
                        rescan_every: int = 10, band: float = 0.5,
                        mode: str | None = None) -> list[TracePoint]:
    """Dominant root along an increasing grid of positive delays.

    A set of leading roots is continued by Newton from one delay to the next;
    a full search every ``rescan_every`` points refreshes the set and takes
    over whenever it finds a root further right than the continued ones.
    """
    d_grid = np.asarray(d_grid, dtype=float)
    if np.any(d_grid <= 0) or np.any(np.diff(d_grid) <= 0):
        raise DomainError("d_grid must be positive and strictly increasing")
    points: list[TracePoint] = []
    candidates: list[ComplexRoot] = []
    for i, d in enumerate(d_grid):
        cf = CharFunction(steady, float(d), mode)
        try:
            continued = _continue_roots(cf, [c.z for c in candidates])
            if i % rescan_every == 0 or not continued:
                fresh = roots_in_band(cf, band)
                best_fresh = _pick_dominant(fresh)
                best_cont = _pick_dominant(continued)
                if best_cont is None or (best_fresh is not None
                                         and best_fresh.z.real > best_cont.z.real + 1e-6):
                    continued = fresh
                else:
                    continued = _merge(continued, fresh)
            candidates = continued
            points.append(TracePoint(float(d), _pick_dominant(continued)))
        except NumericalError as exc:
            log.warning("trace failed at d=%g: %s", d, exc)
            candidates = []
            points.append(TracePoint(float(d), None, str(exc)))
    return points


def _merge(a: list[ComplexRoot], b: list[ComplexRoot]) -> list[ComplexRoot]:
    out = list(a)
    for x in b:
        if not any(abs(x.z - y.z) <= 1e-7 * (1 + abs(x.z)) for y in out):
            out.append(x)
    out.sort(key=lambda x: (-x.z.real, abs(x.z.imag)))
    return out


def delay_grid(d_lo: float, d_hi: float, max_step: float = 0.01, rel_step: float = 0.1) -> np.ndarray:
    """Grid with steps ``min(max_step, rel_step * d)``, ending exactly at ``d_hi``."""
    pts = [d_lo]
    while pts[-1] < d_hi:
        pts.append(min(d_hi, pts[-1] + min(max_step, rel_step * pts[-1])))
    return np.array(pts)


@dataclass(frozen=True)
class Crossing:
    d_crit: float
    frequency: float
    direction: str
    residual: float = 0.0


@dataclass
class CriticalDelayResult:
    crossings: list[Crossing]
    unscanned: list[tuple[float, float]] = field(default_factory=list)
    trace: list[TracePoint] = field(default_factory=list)


STABLE_TO_UNSTABLE = "stable->unstable"
UNSTABLE_TO_STABLE = "unstable->stable"


def _follow(cf_at, z0: complex, d0: float, d1: float, substeps: int = 1) -> ComplexRoot:
    z = z0
    root = None
    for d in np.linspace(d0, d1, substeps + 1)[1:]:
        cf = cf_at(d)
        z, res, iters, ok, dabs = newton_polish(cf, z)
        if not ok:
            raise NumericalError(f"continuation lost the root at d={d}")
        root = ComplexRoot(z, res, iters, None, False, dabs)
    return _canonical(root)


def critical_delays(model: FiringModel, steady: SteadyState, d_lo: float, d_hi: float,
                    re_tol: float = 1e-6, mode: str | None = None,
                    max_step: float = 0.01) -> CriticalDelayResult:
    """Delays in ``[d_lo, d_hi]`` where the dominant root crosses the imaginary axis.

    Each sign change of ``Re z0`` along the trace is refined by Brent's method
    on the real part of the crossing root, continued from the unstable end.
    """
    if not 0 < d_lo < d_hi:
        raise DomainError("need 0 < d_lo < d_hi")
    if steady.A_star == 0:
        return CriticalDelayResult([])
    grid = delay_grid(d_lo, d_hi, max_step)
    trace = trace_dominant_root(model, steady, grid, mode=mode)
    cf_at = lambda d: CharFunction(steady, float(d), mode)
    crossings: list[Crossing] = []
    unscanned: list[tuple[float, float]] = []
    for p, q in zip(trace[:-1], trace[1:]):
        if p.root is None or q.root is None:
            if p.error or q.error:
                unscanned.append((p.d, q.d))
            continue
        up_p, up_q = p.root.z.real > 0, q.root.z.real > 0
        if up_p == up_q:
            continue
        anchor = p if up_p else q
        other_d = q.d if up_p else p.d

        def re_at(d, anchor=anchor):
            if d == anchor.d:
                return anchor.root.z.real
            for sub in (1, 4, 16):
                try:
                    return _follow(cf_at, anchor.root.z, anchor.d, d, sub).z.real
                except NumericalError:
                    continue
            raise NumericalError("continuation failed")

        try:
            if re_at(other_d) > 0:
                raise NumericalError("crossing root not followed across the interval")
            d_c = brentq(re_at, p.d, q.d, xtol=1e-12, rtol=1e-12, maxiter=200)
            root = _follow(cf_at, anchor.root.z, anchor.d, d_c, 4)
            if abs(root.z.real) > re_tol:
                root = _follow(cf_at, root.z, d_c, d_c, 1)
        except (NumericalError, ValueError) as exc:
            log.warning("crossing in [%g, %g] not resolved: %s", p.d, q.d, exc)
            unscanned.append((p.d, q.d))
            continue
        direction = STABLE_TO_UNSTABLE if up_q else UNSTABLE_TO_STABLE
        crossings.append(Crossing(float(d_c), abs(root.z.imag), direction, abs(root.z.real)))
    return CriticalDelayResult(crossings, unscanned, trace)


# ---------------------------------------------------------------------------
# Eigenfunction certification


def eigenfunction_residual(model: FiringModel, steady: SteadyState, d: float,
                           root: ComplexRoot | complex) -> float:
    """Defect of the eigenfunction built from a candidate eigenvalue.

    With ``psi(0) = 1``, ``psi(a) = E(a) [exp(-lam a) - r* exp(-lam d) w(a)]``.
    Returns ``|int psi| + |1 - int S psi - A* exp(-lam d)|``, both of which
    vanish for a genuine eigenvalue.

    Raises
    ------
    NumericalError
        When ``psi`` is not integrable (``Re lam <= -0.95 s0``).
    """
    lam = complex(root.z if isinstance(root, ComplexRoot) else root)
    try:
        mom = age_moments(model, steady.r_star, lam)
    except DomainError as exc:
        raise NumericalError(f"eigenfunction for {lam} has no decaying tail: {exc}") from exc
    delay = np.exp(-lam * d)
    r = steady.r_star
    mass = mom["den"][0] - r * delay * mom["num"][0]
    emitted = mom["s_den"][0] - r * delay * mom["s_num"][0]
    boundary = 1.0 - emitted - steady.A_star * delay
    return float(abs(mass) + abs(boundary))
