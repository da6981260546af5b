"""Conservative method-of-characteristics solver for the delayed elapsed-time PDE.

The age grid and time step coincide (``dt = da``), so transport is exact:
every step each cell first discharges part of its mass, the survivors move
one cell to the right, and the discharged mass re-enters at age 0. The last
cell absorbs everything older than ``a_max``. Total mass is conserved to
roundoff and masses stay non-negative.

Activity samples are interval averages ``r_k = (mass discharged during
[t_{k-1}, t_k]) / dt``. The step over ``[t_k, t_k + dt]`` uses the delayed
average over ``[t_k - d, t_k - d + dt]``, i.e. sample ``k - m + 1`` with
``m = d / dt``.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq, fixed_point

from .errors import ConvergenceError, DomainError
from .firing import FiringModel
from .quadrature import gauss_between
from .trace import ActivityTrace, fit_envelope

RENORMALIZE_WARN = 1e-3
FIXED_POINT_TOL = 1e-12
FIXED_POINT_MAX_ITER = 500
BRACKET_SAMPLES = 200


@dataclass(frozen=True)
class AgeGrid:
    """Uniform age cells ``[j da, (j+1) da)``, ``j = 0..n_cells-1``."""

    delta_a: float
    n_cells: int
    sigma: float = 0.0

    @property
    def a_max(self) -> float:
        return self.n_cells * self.delta_a

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.delta_a

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.n_cells + 1) * self.delta_a

    @classmethod
    def build(cls, model: FiringModel, delta_a: float | None = None, d: float = 0.0,
              a_max: float | None = None, max_refine: int = 16) -> "AgeGrid":
        """Grid with ``sigma`` (and, when possible, ``d``) on cell edges.

        Defaults: ``delta_a = sigma/200``, ``a_max = sigma + 50/s0``. The step is
        reduced until ``sigma`` is a whole number of cells and ``da <= sigma/20``;
        it is then refined by up to ``max_refine`` so that ``d`` is a whole
        number of steps. If that fails ``d`` is left for :func:`snap_delay`.
        """
        sigma = model.sigma
        scale = model.time_scale
        if delta_a is None:
            delta_a = scale / 200.0
        if not delta_a > 0:
            raise DomainError("delta_a must be positive")
        if sigma > 0:
            per_sigma = max(20, int(np.ceil(sigma / delta_a - 1e-9)))
            delta_a = sigma / per_sigma
        if d > 0:
            for k in range(1, max_refine + 1):
                trial = delta_a / k
                ratio = d / trial
                if abs(ratio - round(ratio)) <= 1e-6 * ratio and round(ratio) >= 1:
                    delta_a = trial
                    break
        if a_max is None:
            a_max = sigma + 50.0 / model.s0
        n = int(np.ceil(a_max / delta_a - 1e-9))
        return cls(float(delta_a), n, float(sigma))


def snap_delay(d: float, delta_t: float) -> tuple[int, float]:
    """Number of steps in the delay and the delay actually simulated."""
    if d == 0:
        return 0, 0.0
    m = max(1, int(round(d / delta_t)))
    snapped = m * delta_t
    if abs(snapped - d) > 1e-6 * d:
        warnings.warn(f"delay {d} is not a multiple of the step {delta_t}; using {snapped}")
    return m, snapped


@dataclass
class SimState:
    """Cell masses, time and delay history of one run.

    ``history`` holds the last ``m`` activity samples, oldest first.
    """

    masses: np.ndarray
    t: float
    history: deque
    grid: AgeGrid
    d: float = 0.0
    last_r: float = 0.0
    snapshots: dict = field(default_factory=dict)

    @property
    def density(self) -> np.ndarray:
        return self.masses / self.grid.delta_a

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.masses))

    @property
    def r_history(self) -> np.ndarray:
        return np.array(self.history)


def _as_callable(x) -> Callable:
    if callable(x):
        return x
    value = float(x)
    return lambda t: np.full(np.shape(t), value) if np.ndim(t) else value


def init_state(grid: AgeGrid, n0, r0, d: float = 0.0) -> SimState:
    """Initial cell masses by midpoint sampling, renormalized to unit mass.

    ``r0`` (callable on ``[-d, 0]`` or a constant) fills the delay history at
    the midpoints of the steps preceding ``t = 0``.
    """
    n0 = _as_callable(n0)
    r0 = _as_callable(r0)
    masses = np.asarray(n0(grid.centers), dtype=float) * grid.delta_a
    if np.any(masses < 0) or not np.all(np.isfinite(masses)):
        raise DomainError("initial density must be finite and non-negative")
    raw = masses.sum()
    if raw <= 0:
        raise DomainError("initial density has zero mass")
    if abs(raw - 1.0) > RENORMALIZE_WARN:
        warnings.warn(f"initial density has mass {raw:.6g} on [0, {grid.a_max:g}]; renormalizing")
    masses = masses / raw
    m, d = snap_delay(d, grid.delta_a)
    past = -d + (np.arange(m) + 0.5) * grid.delta_a
    hist = np.asarray(r0(past), dtype=float) if m else np.zeros(0)
    if np.any(hist < 0):
        raise DomainError("initial activity history must be non-negative")
    return SimState(masses, 0.0, deque(hist.tolist(), maxlen=max(m, 1)), grid, d,
                    float(r0(0.0)))


class _Exposure:
    """Hazard integrated along each cell's one-step sweep, as a function of activity."""

    def __init__(self, model: FiringModel, grid: AgeGrid):
        self.model = model
        da = grid.delta_a
        lo = grid.centers
        hi = lo + da
        if model.is_refractory:
            overlap = np.clip(hi - np.maximum(lo, model.sigma), 0.0, da)
            overlap[-1] = da
            self.overlap = overlap
        else:
            self.lo, self.hi = lo[:-1], hi[:-1]
            self.a_max = grid.a_max
            self.da = da

    def __call__(self, r: float) -> np.ndarray:
        if self.model.is_refractory:
            return float(self.model.phi(r)) * self.overlap
        pin = self.model.sigma if self.model.sigma > 0 else None
        body = gauss_between(lambda a: self.model.rate(a, r), self.lo, self.hi, pin=pin)
        tail = float(self.model.rate(self.a_max, r)) * self.da
        return np.append(body, tail)


def _discharge(masses: np.ndarray, exposure: np.ndarray) -> np.ndarray:
    return masses * (-np.expm1(-exposure))


def _advance(masses: np.ndarray, fired: np.ndarray, out: np.ndarray) -> float:
    """Shift survivors one cell right, re-inject the discharged mass; returns it."""
    total = float(np.sum(fired))
    surv = masses - fired
    out[1:] = surv[:-1]
    out[-1] += surv[-1]
    out[0] = total
    return total


def _solve_undelayed(masses: np.ndarray, exposure_of: Callable, dt: float, r_guess: float) -> float:
    def discharged(r):
        return float(np.sum(_discharge(masses, exposure_of(max(float(r), 0.0))))) / dt

    try:
        r = float(fixed_point(discharged, r_guess, xtol=FIXED_POINT_TOL, maxiter=FIXED_POINT_MAX_ITER))
    except RuntimeError:
        r = _bracketed_fixed_point(discharged, float(np.sum(masses)) / dt, r_guess)
    return discharged(r)


def _bracketed_fixed_point(g: Callable, g_max: float, r_guess: float) -> float:
    """Root of ``g(r) - r`` on ``[0, g_max]`` nearest ``r_guess``.

    ``0 <= g <= g_max`` guarantees a sign change; used when plain iteration
    is repelled because ``g' > 1``.
    """
    rs = np.linspace(0.0, g_max, BRACKET_SAMPLES + 1)
    excess = np.array([g(r) - r for r in rs])
    if excess[0] == 0.0:
        return 0.0
    changes = np.flatnonzero(np.sign(excess[:-1]) != np.sign(excess[1:]))
    if changes.size == 0:
        raise ConvergenceError("activity fixed point could not be bracketed without delay")
    i = changes[np.argmin(np.abs(rs[changes] - r_guess))]
    return brentq(lambda r: g(r) - r, rs[i], rs[i + 1], xtol=FIXED_POINT_TOL)


def step(state: SimState, model: FiringModel, grid: AgeGrid | None = None) -> SimState:
    """Advance one step ``dt = da`` and return a new state."""
    grid = grid or state.grid
    exposure_of = _Exposure(model, grid)
    dt = grid.delta_a
    if state.d > 0:
        r_del = state.history[0]
        exposure = exposure_of(r_del)
    else:
        r_del = _solve_undelayed(state.masses, exposure_of, dt, state.last_r)
        exposure = exposure_of(r_del)
    fired = _discharge(state.masses, exposure)
    out = np.empty_like(state.masses)
    r = _advance(state.masses, fired, out) / dt
    history = deque(state.history, maxlen=state.history.maxlen)
    if state.d > 0:
        history.append(r)
    return SimState(out, state.t + dt, history, grid, state.d, r, dict(state.snapshots))


def simulate(model: FiringModel, grid: AgeGrid, n0, r0, d: float, T: float,
             snapshot_times=()) -> tuple[ActivityTrace, SimState]:
    """Integrate the delayed nonlinear problem on ``[0, T]``.

    Returns the activity trace (``values[0] = r0(0)``, then the interval
    averages) and the final state. Densities at ``snapshot_times`` are stored
    in ``state.snapshots``.
    """
    if d < 0:
        raise DomainError("delay must be non-negative")
    state = init_state(grid, n0, r0, d)
    dt = grid.delta_a
    n_steps = int(round(T / dt))
    exposure_of = _Exposure(model, grid)
    masses = state.masses.copy()
    buf = np.empty_like(masses)
    values = np.empty(n_steps + 1)
    values[0] = state.last_r
    history = state.history
    snap_steps = {int(round(ts / dt)): ts for ts in snapshot_times}
    snapshots = {}
    if 0 in snap_steps:
        snapshots[snap_steps[0]] = masses / dt
    r = state.last_r
    for k in range(n_steps):
        if state.d > 0:
            exposure = exposure_of(history[0])
        else:
            exposure = exposure_of(_solve_undelayed(masses, exposure_of, dt, r))
        fired = _discharge(masses, exposure)
        r = _advance(masses, fired, buf) / dt
        masses, buf = buf, masses
        if state.d > 0:
            history.append(r)
        values[k + 1] = r
        if k + 1 in snap_steps:
            snapshots[snap_steps[k + 1]] = masses / dt
    final = SimState(masses, n_steps * dt, history, grid, state.d, r, snapshots)
    meta = {"model": model.describe(), "delta_a": dt, "a_max": grid.a_max,
            "d": state.d, "T": n_steps * dt}
    trace = ActivityTrace(dt, values, state.d, meta, np.array(history))
    return trace, final


def simulate_linear(model: FiringModel, r_bar: float, grid: AgeGrid, n0, T: float) -> ActivityTrace:
    """Same scheme with the activity inside ``S`` frozen at ``r_bar``."""
    state = init_state(grid, n0, r_bar, 0.0)
    dt = grid.delta_a
    exposure = _Exposure(model, grid)(r_bar)
    keep = np.exp(-exposure)
    masses = state.masses.copy()
    buf = np.empty_like(masses)
    n_steps = int(round(T / dt))
    values = np.empty(n_steps + 1)
    values[0] = float(np.sum(_discharge(masses, exposure))) / dt
    for k in range(n_steps):
        fired = masses * (1.0 - keep)
        values[k + 1] = _advance(masses, fired, buf) / dt
        masses, buf = buf, masses
    meta = {"model": model.describe(), "r_bar": r_bar, "delta_a": dt, "T": n_steps * dt}
    return ActivityTrace(dt, values, 0.0, meta)


# ---------------------------------------------------------------------------
# Initial data


def perturbed_equilibrium(sigma: float, r: float) -> Callable:
    """``r exp(-(r/(1 - sigma r)) (a - sigma)_+)``: the refractory equilibrium shape at a rounded ``r``."""
    rate = r / (1.0 - sigma * r)
    return lambda a: r * np.exp(-rate * np.clip(np.asarray(a) - sigma, 0.0, None))


def exponential_profile(a):
    """``exp(-a)``."""
    return np.exp(-np.asarray(a))


# ---------------------------------------------------------------------------
# Trace diagnostics


@dataclass(frozen=True)
class PeriodResult:
    """Outcome of :func:`detect_period`: ``kind`` is converged, periodic or undetermined."""

    kind: str
    value: Optional[float] = None
    period: Optional[float] = None
    correlation: Optional[float] = None
    amplitude: float = 0.0


def _pearson_autocorrelation(x: np.ndarray, max_lag: int) -> np.ndarray:
    n = len(x)
    size = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(x, size)
    raw = np.fft.irfft(spec * np.conj(spec), size)[: max_lag + 1]
    sq = np.concatenate(([0.0], np.cumsum(x * x)))
    lags = np.arange(max_lag + 1)
    head = sq[n - lags]            # sum of x[:n-lag]^2
    tail = sq[n] - sq[lags]        # sum of x[lag:]^2
    return raw / np.sqrt(np.maximum(head * tail, 1e-300))


def detect_period(trace: ActivityTrace, window: float, threshold: float = 0.95,
                  converged_amplitude: float = 1e-6) -> PeriodResult:
    """Classify the tail of a trace as converged, periodic or undetermined.

    The last ``2 * window`` of the trace is examined. It is converged when its
    peak-to-peak amplitude is below ``1e-6``, periodic when the normalized
    autocorrelation of the mean-removed tail has a local maximum of at least
    ``threshold`` at a lag in ``(2 dt, window)``.
    """
    dt = trace.delta_t
    if 2 * window > trace.T + 1e-12:
        raise DomainError("window must be at most half the trace length")
    tail = trace.tail(2 * window)
    amp = float(np.max(tail) - np.min(tail))
    if amp < converged_amplitude:
        return PeriodResult("converged", value=float(np.mean(tail)), amplitude=amp)
    x = tail - np.mean(tail)
    max_lag = int(np.floor(window / dt))
    ac = _pearson_autocorrelation(x, max_lag)
    for k in range(3, max_lag):
        if ac[k] >= threshold and ac[k] >= ac[k - 1] and ac[k] >= ac[k + 1]:
            return PeriodResult("periodic", period=k * dt, correlation=float(ac[k]), amplitude=amp)
    return PeriodResult("undetermined", amplitude=amp)


def distance_to_equilibrium(trace: ActivityTrace, r_star: float, tail: float) -> float:
    """``max |r(t) - r*|`` over the final ``tail`` time units."""
    return float(np.max(np.abs(trace.tail(tail) - r_star)))


def perturbation_growth_rate(trace: ActivityTrace, r_star: float, t_lo: float, t_hi: float) -> float:
    """Exponential growth rate of the envelope of ``|r(t) - r*|`` on ``[t_lo, t_hi]``.

    Negative for decaying perturbations; comparable with the real part of the
    dominant characteristic root.
    """
    t, r = trace.window(t_lo, t_hi)
    return -fit_envelope(t, r - r_star).rate
