"""Uniformly sampled time series produced by the Volterra and PDE solvers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.signal import find_peaks


@dataclass
class ActivityTrace:
    """Samples ``values[k]`` of a signal at ``t = t0 + k * delta_t``.

    Attributes
    ----------
    delta_t : float
    values : ndarray
    d : float
        Delay the run used (0 for undelayed problems).
    meta : dict
        Run parameters, written as a header block by the CSV writer.
    history : ndarray, optional
        Delay ring contents at the end of the run, oldest first.
    """

    delta_t: float
    values: np.ndarray
    d: float = 0.0
    meta: dict = field(default_factory=dict)
    history: Optional[np.ndarray] = None
    t0: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("trace contains non-finite samples")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.delta_t * np.arange(len(self.values))

    @property
    def T(self) -> float:
        return self.t0 + self.delta_t * (len(self.values) - 1)

    def __len__(self) -> int:
        return len(self.values)

    def window(self, t_lo: float, t_hi: float) -> tuple[np.ndarray, np.ndarray]:
        t = self.times
        sel = (t >= t_lo - 1e-12) & (t <= t_hi + 1e-12)
        return t[sel], self.values[sel]

    def tail(self, length: float) -> np.ndarray:
        n = int(round(length / self.delta_t)) + 1
        return self.values[-n:]


@dataclass(frozen=True)
class EnvelopeFit:
    """Least-squares fit ``log|x| ~ log(amplitude) - rate * t`` through envelope peaks."""

    rate: float
    amplitude: float
    rms_log_residual: float
    n_points: int

    def __call__(self, t):
        return self.amplitude * np.exp(-self.rate * np.asarray(t))


def fit_envelope(t: np.ndarray, x: np.ndarray, floor: float = 0.0) -> EnvelopeFit:
    """Fit an exponential envelope to an oscillating signal.

    Uses the local maxima of ``|x|`` so that oscillation does not bias the
    slope; falls back to every sample when fewer than three maxima exist.
    Samples with ``|x| <= floor`` are ignored. A positive ``rate`` means decay.
    """
    t = np.asarray(t, dtype=float)
    mag = np.abs(np.asarray(x))
    keep = mag > floor
    t, mag = t[keep], mag[keep]
    if len(t) < 2:
        raise ValueError("not enough samples above the floor to fit an envelope")
    peaks, _ = find_peaks(mag)
    if len(peaks) >= 3:
        t, mag = t[peaks], mag[peaks]
    slope, intercept = np.polyfit(t, np.log(mag), 1)
    resid = np.log(mag) - (slope * t + intercept)
    return EnvelopeFit(-float(slope), float(np.exp(intercept)),
                       float(np.sqrt(np.mean(resid ** 2))), len(t))
