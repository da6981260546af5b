"""Parameter sweeps over a connectivity parameter ``b``.

Bifurcation diagrams of the steady states with stability verdicts, fold
localization, level crossings of ``A*`` and the pseudo-equilibrium
recursion ``x_k = 1 / I(x_{k-1})``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import ElapsedStabilityError, NumericalError
from .firing import ConstantRate, FiringModel, RefractoryModel, SatQuad, Sigmoid9
from .spectrum import classify_stability
from .steady import (SteadyState, build_steady_state, default_r_max, find_steady_states,
                     integral_I, mismatch)

log = logging.getLogger(__name__)

LEVEL_A_EQ_1 = "A_eq_1"
LEVEL_A_EQ_1_PLUS_SIGMA_PHI = "A_eq_1_plus_sigma_phi"
B_TOL = 1e-6


@dataclass(frozen=True)
class ModelFamily:
    """One-parameter family ``b -> FiringModel``."""

    name: str
    build: Callable[[float], FiringModel]

    def __call__(self, b: float) -> FiringModel:
        return self.build(float(b))


def sigmoid9_family(sigma: float = 0.5) -> ModelFamily:
    return ModelFamily("sigmoid9", lambda b: RefractoryModel(sigma, Sigmoid9(b)))


def satquad_family(sigma: float = 1.0) -> ModelFamily:
    """Saturating quadratic with ``b_bar = b^2``."""
    return ModelFamily("satquad", lambda b: RefractoryModel(sigma, SatQuad(b * b)))


def constant_family(s: float = 1.0, sigma: float = 0.5) -> ModelFamily:
    """Rate independent of both activity and ``b``."""
    return ModelFamily("constant", lambda b: RefractoryModel(sigma, ConstantRate(s)))


FAMILIES = {"sigmoid9": sigmoid9_family, "satquad": satquad_family, "constant": constant_family}


@dataclass(frozen=True)
class BifurcationRow:
    b: float
    branch_id: int
    r_star: float
    A_star: float
    slope_inv_I: float
    verdict_d0: str
    verdict_dpos: str
    fold_suspect: bool = False
    phi_at_r: Optional[float] = None


@dataclass
class BifurcationScan:
    family: ModelFamily
    b_values: np.ndarray
    counts: np.ndarray
    rows: list[BifurcationRow]
    d_probe: float
    failures: dict = field(default_factory=dict)

    def branch(self, branch_id: int) -> list[BifurcationRow]:
        return [row for row in self.rows if row.branch_id == branch_id]

    @property
    def branch_ids(self) -> list[int]:
        return sorted({row.branch_id for row in self.rows})


def _verdict(model: FiringModel, st: SteadyState, d: float) -> str:
    try:
        return classify_stability(model, st, d).verdict.value
    except ElapsedStabilityError as exc:
        log.warning("classification failed at r*=%g, d=%g: %s", st.r_star, d, exc)
        return "Failed"


def _scan_point(family: ModelFamily, b: float, d_probe: float):
    model = family(b)
    states = find_steady_states(model)
    return [(st, _verdict(model, st, 0.0), _verdict(model, st, d_probe)) for st in states]


def bifurcation_scan(family: ModelFamily, b_lo: float, b_hi: float, n_points: int = 200,
                     d_probe: float = 0.1, threads: int = 1) -> BifurcationScan:
    """Steady states and their verdicts at ``d = 0`` and ``d = d_probe`` on a uniform ``b`` grid.

    Branch labels come from nearest-neighbour continuation in ``(b, r*)``.
    Points that fail are recorded in ``failures`` and skipped.
    """
    if not b_lo < b_hi:
        raise ValueError("need b_lo < b_hi")
    if n_points < 50:
        raise ValueError("n_points must be at least 50")
    bs = np.linspace(b_lo, b_hi, n_points)

    def work(b):
        try:
            return _scan_point(family, b, d_probe)
        except ElapsedStabilityError as exc:
            return exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, bs))
    else:
        results = [work(b) for b in bs]

    failures = {}
    counts = np.zeros(n_points, dtype=int)
    per_b = []
    for i, (b, res) in enumerate(zip(bs, results)):
        if isinstance(res, Exception):
            failures[float(b)] = str(res)
            counts[i] = -1
            per_b.append([])
        else:
            counts[i] = len(res)
            per_b.append(res)
    rows = _assign_branches(bs, per_b)
    return BifurcationScan(family, bs, counts, rows, d_probe, failures)


def _assign_branches(bs: np.ndarray, per_b: list) -> list[BifurcationRow]:
    db = float(bs[1] - bs[0]) if len(bs) > 1 else 1.0
    r_all = [st.r_star for entries in per_b for st, _, _ in entries]
    base_limit = 0.05 * (max(r_all) - min(r_all)) if r_all else 0.0
    active: dict[int, list[tuple[float, float]]] = {}
    next_id = 0
    rows: list[BifurcationRow] = []
    for b, entries in zip(bs, per_b):
        pairs = []
        for bid, hist in active.items():
            last_b, last_r = hist[-1]
            slope = 0.0
            if len(hist) >= 2:
                (b0, r0), (b1, r1) = hist[-2], hist[-1]
                slope = abs(r1 - r0) / max(b1 - b0, 1e-300)
            predicted = last_r if len(hist) < 2 else last_r + (hist[-1][1] - hist[-2][1]) / max(
                hist[-1][0] - hist[-2][0], 1e-300) * (b - last_b)
            limit = max(10 * db * slope, base_limit, 1e-3)
            for j, (st, _, _) in enumerate(entries):
                dist = abs(st.r_star - predicted)
                if dist <= limit:
                    pairs.append((dist, bid, j))
        pairs.sort()
        used_b, used_j, match = set(), set(), {}
        for dist, bid, j in pairs:
            if bid in used_b or j in used_j:
                continue
            used_b.add(bid)
            used_j.add(j)
            match[j] = bid
        new_active = {}
        for j, (st, v0, vp) in enumerate(entries):
            if j in match:
                bid = match[j]
                hist = active[bid] + [(float(b), st.r_star)]
            else:
                bid = next_id
                next_id += 1
                hist = [(float(b), st.r_star)]
            new_active[bid] = hist[-3:]
            rows.append(BifurcationRow(float(b), bid, st.r_star, st.A_star, st.slope_inv_I, v0, vp,
                                       st.fold_suspect, st.phi_at_r))
        active = new_active
    return rows


# ---------------------------------------------------------------------------
# Folds


@dataclass(frozen=True)
class FoldPoint:
    b: float
    r_star: float
    slope_inv_I: float
    resolved: bool = True
    interval: tuple[float, float] = (np.nan, np.nan)


def _extremum(model: FiringModel, lo: float, hi: float, minimize: bool) -> tuple[float, float]:
    sign = 1.0 if minimize else -1.0
    res = minimize_scalar(lambda r: sign * mismatch(model, r), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    return float(res.x), float(sign * res.fun)


def _fold_between(family: ModelFamily, b_many: float, b_few: float, roots: list[float],
                  r_max: float) -> Optional[FoldPoint]:
    model = family(b_many)
    best = None
    for ra, rb in zip(roots[:-1], roots[1:]):
        mid = 0.5 * (ra + rb)
        minimize = mismatch(model, mid) < 0
        pad = max(rb - ra, 0.02)
        lo, hi = max(ra - pad, 1e-9), min(rb + pad, r_max)
        _, val = _extremum(model, ra, rb, minimize)
        if best is None or abs(val) < abs(best[0]):
            best = (val, lo, hi, minimize)
    if best is None:
        return None
    _, lo, hi, minimize = best

    def excess(b):
        return _extremum(family(b), lo, hi, minimize)[1]

    e_many, e_few = excess(b_many), excess(b_few)
    if e_many * e_few > 0:
        return None
    b_fold = brentq(excess, min(b_many, b_few), max(b_many, b_few), xtol=1e-10)
    r_fold, _ = _extremum(family(b_fold), lo, hi, minimize)
    st_model = family(b_fold)
    from .steady import slope_inv_I
    slope = slope_inv_I(st_model, r_fold)
    return FoldPoint(float(b_fold), r_fold, slope, True, (min(b_many, b_few), max(b_many, b_few)))


def _count(family: ModelFamily, b: float) -> int:
    return len(find_steady_states(family(b)))


def find_fold_points(scan: BifurcationScan, slope_tol: float = 1e-3) -> list[FoldPoint]:
    """Parameter values where two steady states merge.

    Between scan points whose root counts differ by two, the extremum of
    ``psi = r I(r) - 1`` between the merging roots is driven to zero by Brent's
    method, which places the fold to far better than ``1e-6`` in ``b``. At the
    fold the slope of ``1/I`` must be 1 (tangency with the diagonal).
    Other count changes are bisected on the count for at most ten levels and
    reported as unresolved intervals.
    """
    folds: list[FoldPoint] = []
    bs, counts = scan.b_values, scan.counts
    for i in range(len(bs) - 1):
        c0, c1 = counts[i], counts[i + 1]
        if c0 < 0 or c1 < 0 or c0 == c1:
            continue
        b0, b1 = float(bs[i]), float(bs[i + 1])
        fold = None
        if abs(c0 - c1) == 2:
            b_many, b_few = (b0, b1) if c0 > c1 else (b1, b0)
            model = scan.family(b_many)
            roots = [st.r_star for st in find_steady_states(model)]
            try:
                fold = _fold_between(scan.family, b_many, b_few, roots, default_r_max(model))
            except (ValueError, NumericalError) as exc:
                log.warning("fold refinement in [%g, %g] failed: %s", b0, b1, exc)
            if fold is not None and abs(fold.slope_inv_I - 1.0) > slope_tol:
                log.warning("fold at b=%g has slope %g, not 1", fold.b, fold.slope_inv_I)
                fold = None
        if fold is None:
            lo, hi = b0, b1
            for _ in range(10):
                mid = 0.5 * (lo + hi)
                if _count(scan.family, mid) == c0:
                    lo = mid
                else:
                    hi = mid
            fold = FoldPoint(0.5 * (lo + hi), np.nan, np.nan, False, (lo, hi))
        folds.append(fold)
    return folds


# ---------------------------------------------------------------------------
# Level crossings of A*


@dataclass(frozen=True)
class LevelCrossing:
    b: float
    branch_id: int
    level: str
    bracketed: bool = True
    r_star: float = np.nan


def _level_value(st: SteadyState, level: str) -> float:
    if level == LEVEL_A_EQ_1:
        return st.A_star - 1.0
    if level == LEVEL_A_EQ_1_PLUS_SIGMA_PHI:
        if st.phi_at_r is None:
            raise ValueError("level 1 + sigma phi needs a refractory model")
        return st.A_star - (1.0 + st.model.sigma * st.phi_at_r)
    raise ValueError(f"unknown level {level!r}")


def _branch_state(family: ModelFamily, b: float, r_guess: float) -> SteadyState:
    states = find_steady_states(family(b))
    if not states:
        raise NumericalError(f"no steady state at b={b}")
    return min(states, key=lambda st: abs(st.r_star - r_guess))


def _fold_endpoints(scan: BifurcationScan, rows: list[BifurcationRow], folds: list[FoldPoint],
                    level: str) -> list[tuple[float, float, float]]:
    """Fold points where this branch ends, as ``(b, r*, level value)``."""
    present = {row.b for row in rows}
    ends = []
    for fold in folds:
        if not fold.resolved:
            continue
        lo, hi = fold.interval
        for end_b, other_b in ((lo, hi), (hi, lo)):
            if end_b in present and other_b not in present:
                end_row = next(row for row in rows if row.b == end_b)
                if abs(end_row.r_star - fold.r_star) > 0.25 * abs(end_row.r_star) + 0.05:
                    continue
                st = build_steady_state(scan.family(fold.b), fold.r_star)
                ends.append((fold.b, fold.r_star, _level_value(st, level)))
    return ends


def find_level_crossings(scan: BifurcationScan, level: str = LEVEL_A_EQ_1,
                         folds: Optional[list[FoldPoint]] = None) -> list[LevelCrossing]:
    """Parameter values where ``A*`` crosses 1 (or ``1 + sigma phi``) along a branch.

    Each bracket found in the scan is refined by Brent's method on ``A*(b)``,
    re-solving the branch steady state at every trial ``b``. Branches that end
    at a fold are extended to the fold point so that crossings between the
    last grid sample and the fold are not missed. Since ``A* = 1 + sigma phi``
    holds at every fold, that level is crossed at the folds themselves.
    """
    if folds is None:
        folds = find_fold_points(scan)
    out: list[LevelCrossing] = []
    for bid in scan.branch_ids:
        rows = scan.branch(bid)
        pts = [(row.b, row.r_star, _level_value_row(row, scan, level)) for row in rows]
        pts += _fold_endpoints(scan, rows, folds, level)
        pts.sort()
        if len(pts) < 2:
            if pts and abs(pts[0][2]) < 1e-2:
                out.append(LevelCrossing(pts[0][0], bid, level, False, pts[0][1]))
            continue
        for (pb, pr, vp), (qb, qr, vq) in zip(pts[:-1], pts[1:]):
            if vp == 0.0:
                out.append(LevelCrossing(pb, bid, level, True, pr))
                continue
            if vp * vq > 0:
                continue

            def guess(b, pb=pb, pr=pr, qb=qb, qr=qr):
                return pr + (qr - pr) * (b - pb) / (qb - pb)

            def f(b, pb=pb, qb=qb, vp=vp, vq=vq):
                if b == pb:
                    return vp
                if b == qb:
                    return vq
                return _level_value(_branch_state(scan.family, b, guess(b)), level)

            try:
                b_c = brentq(f, pb, qb, xtol=B_TOL / 10)
                r_c = _branch_state(scan.family, b_c, guess(b_c)).r_star
                out.append(LevelCrossing(float(b_c), bid, level, True, r_c))
            except (ValueError, NumericalError) as exc:
                log.warning("level crossing on branch %d in [%g, %g] unresolved: %s", bid, pb, qb, exc)
                out.append(LevelCrossing(0.5 * (pb + qb), bid, level, False))
    out.sort(key=lambda c: c.b)
    return out


def _level_value_row(row: BifurcationRow, scan: BifurcationScan, level: str) -> float:
    if level == LEVEL_A_EQ_1:
        return row.A_star - 1.0
    if row.phi_at_r is None:
        raise ValueError("level 1 + sigma phi needs a refractory model")
    return row.A_star - (1.0 + scan.family(row.b).sigma * row.phi_at_r)


# ---------------------------------------------------------------------------
# Pseudo-equilibrium recursion


@dataclass(frozen=True)
class PseudoEqSequence:
    """Iterates of ``x -> 1/I(x)``.

    ``x[k+1] = 1 / I(x[k])``. When ``converged``, ``converged_at`` is the first
    ``k`` whose image moved by at most the tolerance and ``fixed_point`` is
    that image.
    """

    x: np.ndarray
    fixed_point: Optional[float]
    converged: bool
    converged_at: Optional[int] = None
    divergent: bool = False


def pseudo_equilibrium_sequence(model: FiringModel, x0: float, K: int = 1000,
                                tol: float = 1e-12, blowup: float = 1e6) -> PseudoEqSequence:
    """Iterate ``x_k = 1 / I(x_{k-1})`` for at most ``K`` steps.

    Examples
    --------
    >>> from elapsed_stability.firing import RefractoryModel, ConstantRate
    >>> seq = pseudo_equilibrium_sequence(RefractoryModel(0.5, ConstantRate(1.0)), 0.1)
    >>> seq.converged_at, round(seq.fixed_point, 12)
    (1, 0.666666666667)
    """
    if not x0 > 0:
        raise ValueError("x0 must be positive")
    if K < 1:
        raise ValueError("K must be at least 1")
    xs = [float(x0)]
    for k in range(K):
        nxt = 1.0 / integral_I(model, xs[-1])
        xs.append(nxt)
        if not np.isfinite(nxt) or abs(nxt) > blowup:
            return PseudoEqSequence(np.array(xs), None, False, None, True)
        if k >= 1 and abs(nxt - xs[-2]) <= tol:
            return PseudoEqSequence(np.array(xs), nxt, True, k)
    return PseudoEqSequence(np.array(xs), None, False)


def pseudo_eq_fixed_point_state(model: FiringModel, seq: PseudoEqSequence) -> Optional[SteadyState]:
    """Steady state built at a converged limit, for comparison with the root finder."""
    if not seq.converged:
        return None
    return build_steady_state(model, seq.fixed_point)
