"""Optimal Laplace-scale design under the privacy constraints.

Minimizes the error-bound objective::

    f(b0, ..., bm) = (p b0^2 + sum_i q_i b_i^2) / (gamma3 + 2 min_i b_i^2)

over positive scales subject to the output condition ``c1 d / b0 <= eps`` and
the per-channel input conditions ``(ci2[i] / b0 + 1 / b_i) d <= eps``.  The
objective is non-smooth (the ``min`` kink) and non-convex, so the solver is a
deterministic grid-seeded projected coordinate descent with multistart; a
dense-grid oracle in the test suite cross-checks it at small channel counts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .privacy import PrivacyConstants, calibrate_all

__all__ = [
    "NoiseDesignProblem",
    "NoiseDesignSolution",
    "SearchBox",
    "objective",
    "feasible",
    "bounding_box",
    "optimize",
]

_SLACK_TOL = 1e-9


@dataclass(frozen=True)
class NoiseDesignProblem:
    """Inputs of the scale-design problem."""

    p: int
    q: tuple[int, ...]
    gamma3: float
    epsilon: float
    delta_adj: float
    consts: PrivacyConstants

    def __init__(self, p, q, gamma3, epsilon, delta_adj, consts):
        if gamma3 <= 0 or epsilon <= 0 or delta_adj <= 0:
            raise ValueError("gamma3, epsilon and delta_adj must be positive")
        q = tuple(int(x) for x in q)
        if len(q) != len(consts.ci2):
            raise ValueError("one input order per amplification constant required")
        object.__setattr__(self, "p", int(p))
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "gamma3", float(gamma3))
        object.__setattr__(self, "epsilon", float(epsilon))
        object.__setattr__(self, "delta_adj", float(delta_adj))
        object.__setattr__(self, "consts", consts)

    @property
    def m(self) -> int:
        return len(self.q)


@dataclass(frozen=True)
class SearchBox:
    """Axis-aligned search region (coordinate-wise bounds on the scales)."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]


@dataclass(frozen=True)
class NoiseDesignSolution:
    """Solver output: scales, objective value, feasibility slacks, box used."""

    b_star: tuple[float, ...]
    f_star: float
    slacks: tuple[float, ...]
    search_box: SearchBox


def objective(b, problem: NoiseDesignProblem) -> float:
    """Error-bound objective ``f`` at a point (no feasibility check)."""
    b = tuple(float(x) for x in b)
    num = problem.p * b[0] ** 2 + sum(
        qi * bi ** 2 for qi, bi in zip(problem.q, b[1:])
    )
    denom = problem.gamma3 + 2.0 * min(bi ** 2 for bi in b)
    return num / denom


def _objective_grid(B: np.ndarray, problem: NoiseDesignProblem) -> np.ndarray:
    """Vectorized objective over points stacked along the last axis."""
    weights = np.array([problem.p] + list(problem.q), dtype=float)
    num = np.tensordot(B ** 2, weights, axes=([-1], [0]))
    denom = problem.gamma3 + 2.0 * np.min(B, axis=-1) ** 2
    return num / denom


def _slacks(b, problem: NoiseDesignProblem) -> tuple[float, ...]:
    c = problem.consts
    eps, d = problem.epsilon, problem.delta_adj
    out = [eps - c.c1 * d / b[0]]
    for i, ci2 in enumerate(c.ci2):
        out.append(eps - (ci2 / b[0] + 1.0 / b[1 + i]) * d)
    return tuple(out)


def feasible(b, problem: NoiseDesignProblem, tol: float = 0.0):
    """Check the privacy constraints at a candidate point.

    Returns ``(ok, slacks)``; slacks are ``epsilon`` minus each constraint's
    left-hand side (non-negative means satisfied).  Points with a
    non-positive coordinate are infeasible with ``slacks=None``.
    """
    b = tuple(float(x) for x in b)
    if len(b) != problem.m + 1:
        raise ValueError("candidate has the wrong number of scales")
    if any(x <= 0 for x in b):
        return False, None
    slacks = _slacks(b, problem)
    return all(s >= -tol for s in slacks), slacks


def _feasible_grid(B: np.ndarray, problem: NoiseDesignProblem) -> np.ndarray:
    c = problem.consts
    eps, d = problem.epsilon, problem.delta_adj
    ok = np.all(B > 0, axis=-1)
    ok = ok & (c.c1 * d / B[..., 0] <= eps)
    for i, ci2 in enumerate(c.ci2):
        ok = ok & ((ci2 / B[..., 0] + 1.0 / B[..., 1 + i]) * d <= eps)
    return ok


def bounding_box(problem: NoiseDesignProblem, scale: float = 10.0) -> SearchBox:
    """Search region guaranteed to contain an optimal point.

    Lower corner: the constraint floors ``b0 >= max(c1, max ci2) d/eps`` and
    ``b_i >= d/eps`` (necessary for any feasible point).  Upper corner: a
    uniform multiple of the largest floor — oversized scales can always be
    reduced toward the floors without increasing the objective or leaving the
    feasible set, so enlarging the box (see `optimize`'s doubling pass) never
    changes the optimum once the box is big enough.

    Without feedback terms (``p == 0``) the output scale never enters the
    objective's numerator, while raising it relaxes every input floor toward
    ``d/eps`` — the objective is non-increasing in ``b0`` and its infimum sits
    on the large-``b0`` ridge.  The box then stretches that one coordinate far
    enough that the remaining gap to the ridge's limit is below any practical
    tolerance.
    """
    c = problem.consts
    eps, d = problem.epsilon, problem.delta_adj
    lo0 = c.c1 * d / eps
    if c.ci2:
        lo0 = max(lo0, max(c.ci2) * d / eps)
    lower = (lo0,) + (d / eps,) * problem.m
    hi = scale * max(lower)
    hi0 = hi if problem.p > 0 else hi * 1e10
    upper = (hi0,) + (hi,) * problem.m
    return SearchBox(lower=lower, upper=upper)


def _coordinate_floor(j: int, b: list[float], problem: NoiseDesignProblem) -> float:
    """Smallest value of coordinate ``j`` keeping the point feasible."""
    c = problem.consts
    eps, d = problem.epsilon, problem.delta_adj
    if j == 0:
        lo = c.c1 * d / eps
        for i, ci2 in enumerate(c.ci2):
            margin = eps / d - 1.0 / b[1 + i]
            if margin <= 0:
                if ci2 > 0:
                    return math.inf
                continue
            lo = max(lo, ci2 / margin)
        return lo
    ci2 = c.ci2[j - 1]
    margin = eps / d - ci2 / b[0]
    if margin <= 0:
        return math.inf
    return 1.0 / margin


def _golden_min(f, lo: float, hi: float, iters: int = 80) -> tuple[float, float]:
    """Golden-section minimum of a 1-D function on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(iters):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = f(x2)
    x = 0.5 * (a + b)
    return x, f(x)


def _line_search(j: int, b: list[float], problem: NoiseDesignProblem,
                 hi: float, scan: int = 129, prefer_high: bool = False) -> None:
    """Minimize the objective along coordinate ``j`` in place.

    ``prefer_high`` marks a costless coordinate (the output scale when no
    feedback terms exist): the objective is flat-or-falling along it, so ties
    resolve to the top of the range — the point that leaves the sibling
    coordinates' floors slackest — instead of to the floor.
    """
    lo = _coordinate_floor(j, b, problem)
    if not math.isfinite(lo) or lo > hi:
        return
    lo = max(lo, 1e-300)
    if hi / lo < 1.0 + 1e-13:
        b[j] = hi if prefer_high else lo
        return

    def f1(x: float) -> float:
        b[j] = x
        return objective(b, problem)

    xs = np.geomspace(lo, hi, scan)
    vals = np.array([f1(x) for x in xs])
    best = int(np.argmin(vals))
    bl = xs[max(best - 1, 0)]
    bh = xs[min(best + 1, scan - 1)]
    x, fx = _golden_min(f1, bl, bh)
    # The exact floor is a frequent optimum; prefer it on ties — except on a
    # costless coordinate, where the top of the range dominates.
    if prefer_high and f1(hi) <= fx:
        b[j] = hi
    elif f1(lo) <= fx:
        b[j] = lo
    else:
        b[j] = x


def _min_lift(b: list[float], problem: NoiseDesignProblem, hi: float) -> None:
    """Jointly raise every low coordinate: ``b <- max(b, t)`` over ``t``.

    The denominator rewards a larger *smallest* scale, but raising one
    coordinate at a time never moves the minimum while any sibling stays
    low, so plain coordinate moves stall in equal-minimum valleys.  Raising
    a whole block preserves feasibility (every constraint is monotone in
    each scale), making this a legitimate projected descent move.
    """
    lo = max(min(b), 1e-300)
    if hi / lo < 1.0 + 1e-13:
        return
    arr = np.array(b, dtype=float)
    f_here = objective(arr, problem)

    def f1(t: float) -> float:
        return objective(np.maximum(arr, t), problem)

    xs = np.geomspace(lo, hi, 129)
    vals = np.array([f1(x) for x in xs])
    best = int(np.argmin(vals))
    x, fx = _golden_min(f1, xs[max(best - 1, 0)], xs[min(best + 1, len(xs) - 1)])
    if fx < f_here:
        b[:] = [float(v) for v in np.maximum(arr, x)]


def _descend(b0: tuple[float, ...], problem: NoiseDesignProblem,
             box: SearchBox, tol: float) -> tuple[tuple[float, ...], float]:
    b = list(b0)
    f_prev = objective(b, problem)
    for _ in range(100):
        for j in range(problem.m + 1):
            _line_search(j, b, problem, box.upper[j],
                         prefer_high=(j == 0 and problem.p == 0))
        _min_lift(b, problem, max(box.upper))
        f_now = objective(b, problem)
        if f_prev - f_now <= 0.1 * tol * max(1.0, abs(f_now)):
            break
        f_prev = f_now
    return tuple(float(x) for x in b), float(objective(b, problem))


def _seed_points(problem: NoiseDesignProblem, box: SearchBox,
                 grid: int = 12, keep: int = 16) -> list[tuple[float, ...]]:
    axes = [np.geomspace(box.lower[j], box.upper[j], grid)
            for j in range(problem.m + 1)]
    mesh = np.meshgrid(*axes, indexing="ij")
    B = np.stack(mesh, axis=-1)
    ok = _feasible_grid(B, problem)
    seeds: list[tuple[float, ...]] = []
    if np.any(ok):
        vals = np.where(ok, _objective_grid(B, problem), np.inf)
        flat = np.argsort(vals, axis=None)[:keep]
        pts = B.reshape(-1, problem.m + 1)
        seeds.extend(tuple(map(float, pts[i])) for i in flat
                     if np.isfinite(vals.reshape(-1)[i]))
    # Smallest feasible all-equal point: the equal-minimum valley's floor,
    # a frequent optimum when the denominator term dominates.
    d_over_e = problem.delta_adj / problem.epsilon
    s_eq = max([problem.consts.c1 * d_over_e]
               + [(c + 1.0) * d_over_e for c in problem.consts.ci2])
    eq = tuple(min(max(s_eq, lo), up)
               for lo, up in zip(box.lower, box.upper))
    # Seeds sit on exact constraint boundaries; admit them with the same
    # slack tolerance the final solution is checked against, so float
    # rounding on a floor computation cannot drop a starting point.
    if feasible(eq, problem, tol=_SLACK_TOL)[0]:
        seeds.append(eq)
    for rho in (0.25, 0.5, 0.75):
        try:
            spec = calibrate_all(problem.consts, problem.epsilon,
                                 problem.delta_adj, rho)
        except ValueError:
            continue
        pt = tuple(min(max(x, lo), up) for x, lo, up
                   in zip(spec.b, box.lower, box.upper))
        if feasible(pt, problem, tol=_SLACK_TOL)[0]:
            seeds.append(pt)
    return seeds


def _zoom_seed(problem: NoiseDesignProblem, box: SearchBox,
               stages: int = 4) -> tuple[tuple[float, ...], float] | None:
    """Adaptive dense-grid seed: log-grid the box, then re-grid the cell
    around the winner.  Four stages shrink the per-axis resolution by
    ``(2/(pts-1))**stages`` of the box span, placing the seed well inside
    the global basin before the descent polishes it."""
    dim = problem.m + 1
    pts = {1: 257, 2: 65, 3: 41, 4: 21}.get(dim, 11)
    lo = np.array(box.lower, dtype=float)
    hi = np.array(box.upper, dtype=float)
    incumbent: tuple[tuple[float, ...], float] | None = None
    for _ in range(stages):
        axes = [np.geomspace(lo[j], hi[j], pts) for j in range(dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        B = np.stack(mesh, axis=-1)
        ok = _feasible_grid(B, problem)
        if not np.any(ok):
            break
        vals = np.where(ok, _objective_grid(B, problem), np.inf)
        idx = np.unravel_index(int(np.argmin(vals)), vals.shape)
        cand = tuple(float(axes[j][idx[j]]) for j in range(dim))
        f = float(vals[idx])
        if incumbent is None or f < incumbent[1]:
            incumbent = (cand, f)
        lo = np.array([axes[j][max(idx[j] - 1, 0)] for j in range(dim)])
        hi = np.array([axes[j][min(idx[j] + 1, pts - 1)] for j in range(dim)])
    return incumbent


def _corner_seed(problem: NoiseDesignProblem,
                 box: SearchBox) -> tuple[float, ...] | None:
    """Largest-``b0`` corner with every input at its implied floor — the
    natural basin when the output scale is free (no feedback term)."""
    b = [float(box.upper[0])] + [1.0] * problem.m
    for j in range(1, problem.m + 1):
        floor = _coordinate_floor(j, b, problem)
        if not math.isfinite(floor):
            return None
        b[j] = min(max(floor, box.lower[j]), box.upper[j])
    pt = tuple(b)
    return pt if feasible(pt, problem, tol=_SLACK_TOL)[0] else None


def _solve_in_box(problem: NoiseDesignProblem, box: SearchBox,
                  tol: float) -> tuple[tuple[float, ...], float] | None:
    seeds = _seed_points(problem, box)
    zoom = _zoom_seed(problem, box)
    if zoom is not None:
        seeds.append(zoom[0])
    corner = _corner_seed(problem, box)
    if corner is not None:
        seeds.append(corner)
    if not seeds:
        return None
    best: tuple[tuple[float, ...], float] | None = None
    for seed in seeds:
        b, f = _descend(seed, problem, box, tol)
        if best is None or f < best[1] - 1e-15 or (
            abs(f - best[1]) <= 1e-15
            and tuple(round(x, 12) for x in b)
            < tuple(round(x, 12) for x in best[0])
        ):
            best = (b, f)
    return best


def optimize(problem: NoiseDesignProblem, tol: float = 1e-9) -> NoiseDesignSolution:
    """Best feasible scales found by multistart projected coordinate descent.

    The search box upper corner starts at ten times the largest constraint
    floor and doubles while enlarging it keeps improving the incumbent, so
    the non-constructive "big enough region" always ends up covered.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    box = bounding_box(problem)
    best = _solve_in_box(problem, box, tol)
    if best is None:
        raise RuntimeError("search box contains no feasible point")
    while True:
        wider = SearchBox(lower=box.lower,
                          upper=tuple(2.0 * u for u in box.upper))
        cand = _solve_in_box(problem, wider, tol)
        if cand is None or cand[1] >= best[1] - tol * max(1.0, abs(best[1])):
            break
        best, box = cand, wider
    b_star, f_star = best
    ok, slacks = feasible(b_star, problem, tol=_SLACK_TOL)
    if not ok:
        raise RuntimeError("optimizer returned an infeasible point")
    f_star = float(objective(b_star, problem))
    return NoiseDesignSolution(b_star=tuple(float(x) for x in b_star),
                               f_star=f_star, slacks=slacks, search_box=box)
