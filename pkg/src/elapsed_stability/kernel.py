"""Linear response kernel h0, delayed Volterra solver and Laplace transforms.

``h0(t)`` is the activity response of the frozen-activity linear semigroup
to the perturbation measure ``G = -dS/dr(., r*) n* + A* delta_0``. It solves
the undelayed renewal equation ``u = g + h * u`` with

* ``h(t) = S(t, r*) exp(-int_0^t S)`` (inter-spike interval density),
* ``g(t) = A* h(t) - r* int_0^inf h(t + s) dS/dr(s, r*) ds``.

Its transform enters the characteristic function through ``h0_hat(z) + A*``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.signal import fftconvolve

from .errors import DomainError, InconsistencyError, NearPoleError, StepTooLargeError
from .firing import FiringModel
from .quadrature import PanelRule, gauss_between, pinned_edges
from .steady import SteadyState, age_rule, default_a_max, survival_on_rule, tail_bound
from .trace import ActivityTrace, fit_envelope

G_MASS_TOL = 1e-6
TAIL_FLOOR = 1e-13
SERIES_RADIUS = 1e-4
LIMIT_RADIUS = 1e-8
TRANSFORM_MARGIN = 0.05
NEAR_POLE = 1e-14


# ---------------------------------------------------------------------------
# Perturbation measure


@dataclass(frozen=True)
class MeasureWithAtom:
    """Signed measure ``atom * delta_0 + density(a) da`` on ``[0, support_bound]``."""

    atom_at_zero: float
    density: Callable
    support_bound: float
    rule: PanelRule | None = None

    def density_mass(self) -> float:
        rule = self.rule or PanelRule.from_edges(pinned_edges(0.0, self.support_bound, 0.25))
        return float(rule.integrate(self.density(rule.nodes)))

    def total_mass(self) -> float:
        return self.atom_at_zero + self.density_mass()


def build_G(model: FiringModel, steady: SteadyState) -> MeasureWithAtom:
    """Perturbation measure ``A* delta_0 - dS/dr(a, r*) n*(a)``.

    Raises
    ------
    InconsistencyError
        If the total mass differs from zero by more than ``1e-6``.
    """
    r = steady.r_star
    rule = age_rule(model, r)

    def density(a):
        return -np.asarray(model.dS_dr(a, r)) * r * np.asarray(model.survival(a, r))

    if model.is_refractory:
        dens_vals = density(rule.nodes)
    else:
        dens_vals = -model.dS_dr(rule.nodes, r) * r * survival_on_rule(model, r, rule)
    mass = steady.A_star + float(rule.integrate(dens_vals))
    if abs(mass) > G_MASS_TOL:
        raise InconsistencyError(f"perturbation measure has total mass {mass:.3g}, expected 0")
    return MeasureWithAtom(steady.A_star, density, float(rule.edges[-1]), rule)


# ---------------------------------------------------------------------------
# Volterra equation with a discrete delay


def align_step(d: float, delta_t: float) -> tuple[float, int, float]:
    """Make ``d`` an integer multiple of the step.

    Returns ``(delta_t, m, d)``. ``d`` is rounded to the nearest multiple when
    that moves it by at most ``1e-6`` relative; otherwise the step is refined to
    ``d / ceil(d / delta_t)``.
    """
    if d < 0:
        raise DomainError("delay must be non-negative")
    if d == 0:
        return delta_t, 0, 0.0
    m = int(round(d / delta_t))
    if m >= 1 and abs(m * delta_t - d) <= 1e-6 * d:
        return delta_t, m, m * delta_t
    m = int(np.ceil(d / delta_t))
    return d / m, m, d


@dataclass(frozen=True)
class VolterraProblem:
    """``u(t) = g(t) + int_0^t h(t-s) u(s) ds + A* u(t-d)``, with ``u = 0`` for ``t < 0``.

    ``g`` and ``h`` are sampled on ``t_k = k * delta_t`` for ``k = 0..N``.
    """

    g: np.ndarray
    h: np.ndarray
    A_star: float
    d: float
    delta_t: float
    T: float

    def __post_init__(self):
        n = int(round(self.T / self.delta_t)) + 1
        if len(self.g) != n or len(self.h) != n:
            raise DomainError(f"g and h must have {n} samples on the grid, got {len(self.g)}, {len(self.h)}")
        if self.d < 0:
            raise DomainError("delay must be non-negative")
        if self.d > 0:
            m = self.d / self.delta_t
            if abs(m - round(m)) > 1e-9 * max(1.0, m):
                raise DomainError("delay must be an integer multiple of delta_t; see align_step")

    @property
    def delay_steps(self) -> int:
        return int(round(self.d / self.delta_t))


def solve_volterra(p: VolterraProblem) -> ActivityTrace:
    """March the delayed Volterra equation with trapezoidal convolution weights.

    The delayed term is right-continuous: at ``t = k d`` the jump has
    already happened.

    Examples
    --------
    >>> import numpy as np
    >>> t = np.arange(0, 3.001, 0.5)
    >>> p = VolterraProblem(np.ones_like(t), np.zeros_like(t), 0.5, 1.0, 0.5, 3.0)
    >>> solve_volterra(p).values.tolist()
    [1.0, 1.0, 1.5, 1.5, 1.75, 1.75, 1.875]
    """
    dt = p.delta_t
    g = np.asarray(p.g, dtype=float)
    h = np.asarray(p.h, dtype=float)
    m = p.delay_steps
    n = len(g)
    diag = 1.0 - 0.5 * dt * h[0]
    implicit = diag - (p.A_star if m == 0 else 0.0)
    if diag <= 0:
        raise StepTooLargeError(f"1 - dt*h(0)/2 = {diag:.3g} <= 0; reduce delta_t")
    if implicit == 0:
        raise StepTooLargeError("undelayed equation with A* = 1 - dt*h(0)/2 is singular")

    u = np.zeros(n)
    u[0] = g[0] / (1.0 - p.A_star) if m == 0 else g[0]
    for k in range(1, n):
        acc = g[k] + dt * (np.dot(h[k - 1:0:-1], u[1:k]) + 0.5 * h[k] * u[0])
        if m > 0 and k >= m:
            acc += p.A_star * u[k - m]
        u[k] = acc / (implicit if m == 0 else diag)
    return ActivityTrace(dt, u, p.d, meta={"A_star": p.A_star, "T": p.T})


# ---------------------------------------------------------------------------
# Kernel h0 on a time grid


@dataclass(frozen=True)
class KernelTrace:
    """Samples of ``h0`` with an empirical exponential tail.

    Attributes
    ----------
    delta_t : float
    values : ndarray
        ``h0(k * delta_t)``, ``k = 0..N``.
    decay_rate_fit : float
        Envelope decay rate on the fitted tail (``inf`` when ``h0`` vanishes).
    l1_partial : float
        Trapezoid integral of ``|h0|`` over the sampled window.
    l1_tail_bound : float
        ``envelope(T) / decay_rate_fit``; ``inf`` when the tail does not decay.
    fit_amplitude, fit_residual : float
        Envelope prefactor and rms log residual of the fit.
    decaying : bool
    """

    delta_t: float
    values: np.ndarray
    decay_rate_fit: float
    l1_partial: float
    l1_tail_bound: float
    fit_amplitude: float = 0.0
    fit_residual: float = 0.0
    decaying: bool = True

    @property
    def times(self) -> np.ndarray:
        return self.delta_t * np.arange(len(self.values))

    @property
    def T(self) -> float:
        return self.delta_t * (len(self.values) - 1)

    @property
    def l1_norm_bound(self) -> float:
        return self.l1_partial + self.l1_tail_bound

    def envelope(self, t):
        return self.fit_amplitude * np.exp(-self.decay_rate_fit * np.asarray(t))

    def laplace(self, z: complex) -> complex:
        """Trapezoid transform of the samples plus an exponential tail beyond ``T``."""
        t = self.times
        f = self.values * np.exp(-z * t)
        body = self.delta_t * (np.sum(f) - 0.5 * (f[0] + f[-1]))
        tail = 0.0
        if self.decaying and np.isfinite(self.decay_rate_fit) and abs(self.values[-1]) > TAIL_FLOOR:
            tail = self.values[-1] * np.exp(-z * self.T) / (self.decay_rate_fit + z)
        return complex(body + tail)


def _hazard_grid(model: FiringModel, r: float, t: np.ndarray):
    """Right-continuous ``S``, its value averaged at ``sigma``, and survival on ``t``."""
    sigma = model.sigma
    rate = np.asarray(model.rate(t, r), dtype=float)
    avg = rate.copy()
    at_pin = np.isclose(t, sigma, rtol=0, atol=1e-12 * max(1.0, sigma)) & (sigma > 0)
    if np.any(at_pin):
        left = float(model.rate(max(sigma * (1 - 1e-12), 0.0), r))
        avg[at_pin] = 0.5 * (left + rate[at_pin])
    if model.is_refractory:
        surv = np.asarray(model.survival(t, r))
    else:
        pin = sigma if sigma > 0 else None
        pieces = gauss_between(lambda a: model.rate(a, r), t[:-1], t[1:], pin=pin)
        surv = np.exp(-np.concatenate(([0.0], np.cumsum(pieces))))
    return rate, avg, surv, at_pin


def kernel_h0(model: FiringModel, steady: SteadyState, delta_t: float | None = None,
              T: float | None = None) -> KernelTrace:
    """Sample ``h0`` on ``[0, T]`` by the renewal (Volterra) route.

    Parameters
    ----------
    delta_t : float, optional
        Time step, at most ``sigma/10``; default ``sigma/200``. Adjusted so that
        ``sigma`` is a grid point.
    T : float, optional
        Horizon; default ``40 max(sigma, 1/s0)``.
    """
    scale = model.time_scale
    if delta_t is None:
        delta_t = scale / 200.0
    if delta_t > scale / 10.0 + 1e-15:
        raise DomainError(f"delta_t={delta_t} exceeds sigma/10={scale / 10}")
    if model.sigma > 0:
        delta_t = model.sigma / int(np.ceil(model.sigma / delta_t - 1e-9))
    if T is None:
        T = 40.0 * max(model.sigma, 1.0 / model.s0)
    n = int(np.ceil(T / delta_t - 1e-9))
    T = n * delta_t
    r = steady.r_star

    if steady.A_star == 0.0 and np.all(model.dS_dr(np.linspace(0, default_a_max(model, r), 64), r) == 0):
        return KernelTrace(delta_t, np.zeros(n + 1), np.inf, 0.0, 0.0)

    n_age = int(np.ceil(default_a_max(model, r) / delta_t))
    t_ext = delta_t * np.arange(n + 2 * n_age + 1)
    rate, rate_avg, surv, at_pin = _hazard_grid(model, r, t_ext)
    isi_right = rate * surv
    isi = rate_avg * surv

    ages = t_ext[: n_age + 1]
    dS = np.asarray(model.dS_dr(ages, r), dtype=float)
    pin_ages = at_pin[: n_age + 1]
    if np.any(pin_ages):
        left = float(model.dS_dr(max(model.sigma * (1 - 1e-12), 0.0), r))
        dS[pin_ages] = 0.5 * (left + dS[pin_ages])
    weights = np.full(n_age + 1, delta_t)
    weights[0] = weights[-1] = 0.5 * delta_t
    # correlation sum_j isi(t_k + s_j) dS(s_j) w_j for k = 0..n + n_age
    corr = fftconvolve(isi_right, (weights * dS)[::-1], mode="valid")

    # Discrete balance: the trapezoid sums of h and g must be exactly 1 and 0,
    # otherwise the renewal equation keeps a spurious constant mode of size
    # O(dt^2) that never decays.
    isi = isi / _trapezoid_sum(isi, delta_t)
    atom_part = steady.A_star * isi[: len(corr)]
    corr_sum = _trapezoid_sum(corr, delta_t)
    if corr_sum != 0.0:
        corr = corr * (_trapezoid_sum(atom_part, delta_t) / (r * corr_sum))
    g = (atom_part - r * corr)[: n + 1]

    problem = VolterraProblem(g, isi[: n + 1], 0.0, 0.0, delta_t, T)
    h0 = solve_volterra(problem).values
    return _with_tail_fit(delta_t, h0)


def _trapezoid_sum(values: np.ndarray, delta_t: float) -> float:
    return float(delta_t * (np.sum(values) - 0.5 * (values[0] + values[-1])))


def _with_tail_fit(delta_t: float, h0: np.ndarray) -> KernelTrace:
    t = delta_t * np.arange(len(h0))
    absval = np.abs(h0)
    l1 = float(delta_t * (np.sum(absval) - 0.5 * (absval[0] + absval[-1])))
    above = np.nonzero(absval > TAIL_FLOOR)[0]
    if len(above) == 0:
        return KernelTrace(delta_t, h0, np.inf, l1, 0.0)
    t_end = t[above[-1]]
    sel = (t >= 0.5 * t_end) & (t <= t_end)
    try:
        fit = fit_envelope(t[sel], h0[sel], floor=TAIL_FLOOR)
    except ValueError:
        warnings.warn("kernel tail too short to fit an envelope")
        return KernelTrace(delta_t, h0, 0.0, l1, np.inf, decaying=False)
    if fit.rate <= 0:
        warnings.warn(f"kernel tail does not decay (fitted rate {fit.rate:.3g}); tail bound set to inf")
        return KernelTrace(delta_t, h0, fit.rate, l1, np.inf, fit.amplitude, fit.rms_log_residual, False)
    T = t[-1]
    tail = float(fit(T) / fit.rate)
    return KernelTrace(delta_t, h0, fit.rate, l1, tail, fit.amplitude, fit.rms_log_residual, True)


# ---------------------------------------------------------------------------
# Laplace transforms of h0 (plus A*)


def laplace_h0_refractory(steady: SteadyState, z):
    """``h0_hat(z) + A* = A* z / (z + phi (1 - exp(-sigma z)))`` for refractory models.

    The removable singularity at 0 is patched with a three-term series for
    ``|z| < 1e-4``.

    Raises
    ------
    NearPoleError
        At zeros of the denominator away from the origin.
    """
    if steady.phi_at_r is None:
        raise DomainError("closed-form transform requires a refractory steady state")
    A, phi, sigma = steady.A_star, steady.phi_at_r, steady.activation_age
    z = np.asarray(z, dtype=complex)
    out = np.empty(z.shape, dtype=complex)
    az = np.abs(z)
    tiny = az < LIMIT_RADIUS
    small = (az >= LIMIT_RADIUS) & (az < SERIES_RADIUS)
    big = az >= SERIES_RADIUS
    out[tiny] = A / (1.0 + sigma * phi)
    zs = z[small]
    out[small] = A / ((1.0 + sigma * phi) - phi * sigma ** 2 * zs / 2 + phi * sigma ** 3 * zs ** 2 / 6)
    zb = z[big]
    den = zb + phi * (-np.expm1(-sigma * zb))
    if np.any(np.abs(den) < 1e-300):
        raise NearPoleError("z is a zero of z + phi(1 - exp(-sigma z))")
    out[big] = A * zb / den
    return complex(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class _AgeRuleCache:
    nodes: np.ndarray
    weights: np.ndarray
    edges: np.ndarray
    surv: np.ndarray
    log_surv: np.ndarray
    rate: np.ndarray
    dS: np.ndarray
    sub_coef: np.ndarray
    surv_w: np.ndarray
    dS_w: np.ndarray
    # panels sharing a width share their node offsets:
    # (panel indices, node-to-sub-node lags[i, k], node offsets[i], width)
    lag_groups: tuple


def _lag_groups(rule: PanelRule) -> tuple:
    widths = np.diff(rule.edges)
    keys = np.round(widths / widths.max(), 12)
    lags = rule.nodes[:, :, None] - rule.sub_nodes
    offsets = rule.nodes - rule.edges[:-1, None]
    groups = []
    for key in np.unique(keys):
        idx = np.nonzero(keys == key)[0]
        groups.append((idx, lags[idx[0]], offsets[idx[0]], float(widths[idx[0]])))
    return tuple(groups)


@lru_cache(maxsize=64)
def _age_rule_cache(model: FiringModel, r: float, refine: int) -> _AgeRuleCache:
    base = age_rule(model, r)
    a_max = float(base.edges[-1])
    width = float(np.diff(base.edges).max()) / 2 ** refine
    pin = model.sigma if model.sigma > 0 else None
    rule = PanelRule.from_edges(pinned_edges(0.0, a_max, width, pin))
    surv = survival_on_rule(model, r, rule)
    surv = np.where(surv > 0, surv, np.finfo(float).tiny)
    return _AgeRuleCache(rule.nodes, rule.weights, rule.edges, surv, np.log(surv),
                         np.asarray(model.rate(rule.nodes, r), dtype=float),
                         np.asarray(model.dS_dr(rule.nodes, r), dtype=float),
                         np.asarray(model.dS_dr(rule.sub_nodes, r), dtype=float) * rule.sub_weights,
                         surv * rule.weights,
                         np.asarray(model.dS_dr(rule.nodes, r), dtype=float) * rule.weights,
                         _lag_groups(rule))


def _refine_level(model: FiringModel, r: float, im: float) -> int:
    base_width = min(model.time_scale, 1.0 / max(model.rate_bound(r), 1e-300)) / 4.0
    level = 0
    while abs(im) * base_width / 2 ** level > 3.0:
        level += 1
    return level


def _check_domain(model: FiringModel, z: np.ndarray) -> None:
    bound = -(1.0 - TRANSFORM_MARGIN) * model.s0
    if np.any(z.real <= bound):
        raise DomainError(f"Re z = {z.real.min():.4g} outside the transform domain Re z > {bound:.4g}")


def age_moments(model: FiringModel, r: float, z, batch: int = 16) -> dict:
    """Age integrals behind the transform ratio and the eigenfunction check.

    With ``E`` the survival at ``r`` and ``w(a) = int_0^a exp(-z(a-s)) dS/dr(s) ds``:

    * ``num = int E w``, ``den = int E exp(-z a)``,
    * ``s_num = int S E w``, ``s_den = int S E exp(-z a)``.

    ``w`` is carried panel to panel, so nothing overflows. Integration stops
    per ``z`` once the integrand envelope is 40 e-folds below its peak.
    Vectorized over ``z``.
    """
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    _check_domain(model, z)
    out = {k: np.empty(z.shape, dtype=complex) for k in ("num", "den", "s_num", "s_den")}
    levels = np.array([_refine_level(model, r, zi.imag) for zi in z])
    for level in np.unique(levels):
        idx = np.nonzero(levels == level)[0]
        c = _age_rule_cache(model, r, int(level))
        for start in range(0, len(idx), batch):
            sel = idx[start:start + batch]
            res = _moments_batch(c, z[sel])
            for k in out:
                out[k][sel] = res[k]
    return out


def _moments_batch(c: _AgeRuleCache, z: np.ndarray) -> dict:
    # |w| grows like exp(-Re z a) only when Re z < 0
    log_env = c.log_surv[None] + np.maximum(0.0, -z.real)[:, None, None] * c.nodes[None]
    panel_env = np.max(log_env, axis=2)
    active = panel_env > np.max(panel_env, axis=1, keepdims=True) - 40.0
    last = int(np.max(np.nonzero(active.any(axis=0))[0])) + 1
    mask = np.zeros(active.shape)
    for i in range(len(z)):
        mask[i, : int(np.nonzero(active[i])[0][-1]) + 1] = 1.0

    nz, order = len(z), c.nodes.shape[1]
    left = c.edges[:last]
    # within-panel exponentials depend only on the panel width, so they are built per width group
    decay_to_node = np.empty((nz, last, order), dtype=complex)
    within = np.empty((nz, last, order), dtype=complex)
    panel_inc = np.empty((nz, last), dtype=complex)
    panel_gain = np.empty((nz, last), dtype=complex)
    for idx, lag, offset, width in c.lag_groups:
        idx = idx[idx < last]
        if not len(idx):
            continue
        to_node = np.exp(-z[:, None] * offset)
        to_right = np.exp(-z[:, None] * (width - offset))
        decay_to_node[:, idx] = to_node[:, None, :]
        kernel = np.exp(-z[:, None, None] * lag[None])
        within[:, idx] = np.einsum("zik,pik->zpi", kernel, c.sub_coef[idx])
        panel_inc[:, idx] = to_right @ c.dS_w[idx].T
        panel_gain[:, idx] = np.exp(-z * width)[:, None]
    w_left = np.empty((nz, last), dtype=complex)
    acc = np.zeros(nz, dtype=complex)
    for p in range(last):
        w_left[:, p] = acc
        acc = panel_gain[:, p] * acc + panel_inc[:, p]
    w = decay_to_node * w_left[:, :, None] + within
    expz = np.exp(-z[:, None] * left)[:, :, None] * decay_to_node

    ew = c.surv_w[:last] * mask[:, :last, None]
    ewr = ew * c.rate[:last]
    return {
        "num": np.einsum("zpi,zpi->z", ew, w),
        "den": np.einsum("zpi,zpi->z", ew, expz),
        "s_num": np.einsum("zpi,zpi->z", ewr, w),
        "s_den": np.einsum("zpi,zpi->z", ewr, expz),
    }


def laplace_h0_general(model: FiringModel, steady: SteadyState, z):
    """``h0_hat(z) + A*`` by quadrature of the ratio formula.

    ``r* int E(a) w(a) da / int E(a) exp(-z a) da`` with ``E`` the survival at
    ``r*`` and ``w(a) = int_0^a exp(-z(a-s)) dS/dr(s, r*) ds``. Accepts a
    scalar or an array of ``z``.

    Raises
    ------
    DomainError
        If ``Re z <= -0.95 s0``.
    NearPoleError
        If the denominator is below ``1e-14`` in modulus.
    """
    scalar = np.ndim(z) == 0
    mom = age_moments(model, steady.r_star, z)
    if np.any(np.abs(mom["den"]) < NEAR_POLE):
        raise NearPoleError("transform denominator vanishes (z is near a pole)")
    value = steady.r_star * mom["num"] / mom["den"]
    return complex(value[0]) if scalar else value
