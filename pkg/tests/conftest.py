"""Shared helpers for the test suite: reference systems and random model
generators with controlled root placement."""
from __future__ import annotations

import numpy as np
import pytest

from privarx.design import NoiseDesignProblem
from privarx.model import ArxModel
from privarx.privacy import PrivacyConstants

# Three-participant second-order reference system used across the suite; its
# feedback polynomial 1 + z/4 - 3 z^2 / 8 has roots 2 and -4/3.
A_REF = (-0.25, 0.375)
B_REF = ((1.0, 2.0), (3.0, 4.0), (5.0, 6.0))


@pytest.fixture
def ref_model() -> ArxModel:
    return ArxModel(a=A_REF, b=B_REF)


def coeffs_from_roots(roots) -> tuple[float, ...]:
    """Feedback coefficients ``a`` whose polynomial ``1 - sum a_j z^j`` has
    exactly the given roots (real, or closed under conjugation)."""
    poly = np.array([1.0])
    used = set()
    for idx, z in enumerate(roots):
        if idx in used:
            continue
        z = complex(z)
        if abs(z.imag) < 1e-12:
            poly = np.convolve(poly, [1.0, -1.0 / z.real])
        else:
            # Pair with its conjugate: (1 - z/z0)(1 - z/conj(z0)).
            used.add(_conjugate_partner(roots, idx))
            poly = np.convolve(poly, [1.0, -2.0 * (1.0 / z).real, 1.0 / abs(z) ** 2])
    return tuple(-float(c) for c in poly[1:])


def _conjugate_partner(roots, idx) -> int:
    z = complex(roots[idx])
    for j, other in enumerate(roots):
        if j != idx and abs(complex(other) - z.conjugate()) < 1e-9:
            return j
    raise ValueError("complex roots must come in conjugate pairs")


def random_roots(rng: np.random.Generator, p: int, lo: float, hi: float):
    """``p`` polynomial roots with moduli drawn from ``[lo, hi]``, closed
    under conjugation."""
    roots: list[complex] = []
    while len(roots) < p:
        mod = rng.uniform(lo, hi)
        if p - len(roots) >= 2 and rng.random() < 0.4:
            ang = rng.uniform(0.15, np.pi - 0.15)
            z = mod * np.exp(1j * ang)
            roots += [z, z.conjugate()]
        else:
            roots.append(complex(mod if rng.random() < 0.5 else -mod, 0.0))
    return roots


def random_b(rng: np.random.Generator, m: int, q_max: int = 3):
    return tuple(
        tuple(rng.uniform(-3.0, 3.0) for _ in range(rng.integers(1, q_max + 1)))
        for _ in range(m)
    )


def random_stable_model(rng: np.random.Generator, p_max: int = 4,
                        m_max: int = 3) -> ArxModel:
    """Random model whose feedback roots all lie outside the unit disk."""
    p = int(rng.integers(0, p_max + 1))
    m = int(rng.integers(1, m_max + 1))
    a = coeffs_from_roots(random_roots(rng, p, 1.15, 3.0)) if p else ()
    return ArxModel(a=a, b=random_b(rng, m))


def random_unstable_model(rng: np.random.Generator, p_max: int = 3,
                          m_max: int = 2) -> ArxModel:
    """Random model with at least one feedback root inside the unit disk."""
    p = int(rng.integers(1, p_max + 1))
    m = int(rng.integers(1, m_max + 1))
    inside = random_roots(rng, 1, 0.35, 0.9)
    outside = random_roots(rng, p - 1, 1.2, 3.0) if p > 1 else []
    a = coeffs_from_roots(inside + outside)
    return ArxModel(a=a, b=random_b(rng, m))


def random_problem(rng: np.random.Generator, m_max: int = 2) -> NoiseDesignProblem:
    """Random scale-design problem with up to ``m_max`` input channels."""
    m = int(rng.integers(0, m_max + 1))
    p = int(rng.integers(0, 4))
    if p == 0 and m == 0:
        p = 1
    return NoiseDesignProblem(
        p=p,
        q=tuple(int(rng.integers(1, 4)) for _ in range(m)),
        gamma3=float(rng.uniform(0.1, 2000.0)),
        epsilon=float(rng.uniform(0.2, 4.0)),
        delta_adj=float(rng.uniform(0.2, 3.0)),
        consts=PrivacyConstants(
            c1=float(rng.uniform(1.0, 20.0)),
            ci2=tuple(rng.uniform(0.0, 60.0) for _ in range(m))),
    )


def design_oracle(problem, box) -> float:
    """Independent reference minimum for the scale-design objective.

    Two candidate families cover the optimum's possible structure inside
    the box:

    * a zooming dense log-grid (interior optima, any kink pattern);
    * a scan over the output scale with every input either at its exact
      constraint floor or lifted to a common level ``t`` — at an optimum an
      input above its floor is only worth paying for while it raises the
      smallest scale, so non-floor inputs share one level.

    Both families are refined around their winners; the smaller value wins.
    """
    eps, d = problem.epsilon, problem.delta_adj
    c1, ci2 = problem.consts.c1, np.array(problem.consts.ci2, dtype=float)
    qw = np.array(problem.q, dtype=float)
    g3, p = problem.gamma3, problem.p
    dim = problem.m + 1
    best = np.inf

    # Family A: zooming grid.
    lo = np.array(box.lower, dtype=float)
    hi = np.array(box.upper, dtype=float)
    pts = 41
    for _ in range(4):
        axes = [np.geomspace(lo[j], hi[j], pts) for j in range(dim)]
        grids = np.meshgrid(*axes, indexing="ij")
        B = np.stack([g.ravel() for g in grids], axis=1)
        ok = c1 * d / B[:, 0] <= eps
        for i in range(problem.m):
            ok &= (ci2[i] / B[:, 0] + 1.0 / B[:, 1 + i]) * d <= eps
        num = p * B[:, 0] ** 2 + (B[:, 1:] ** 2 @ qw if problem.m else 0.0)
        f = np.where(ok, num / (g3 + 2.0 * np.min(B, axis=1) ** 2), np.inf)
        i_best = int(np.argmin(f))
        best = min(best, float(f[i_best]))
        idx = np.unravel_index(i_best, (pts,) * dim)
        lo = np.array([axes[j][max(idx[j] - 1, 0)] for j in range(dim)])
        hi = np.array([axes[j][min(idx[j] + 1, pts - 1)] for j in range(dim)])

    if problem.m == 0:
        return best

    # Family B: floor-or-common-lift ridge.
    b0_lo, b0_hi = box.lower[0], box.upper[0]
    t_lo, t_hi = min(box.lower[1:]), max(box.upper)
    for _ in range(3):
        b0s = np.geomspace(b0_lo, b0_hi, 900)
        ts = np.geomspace(t_lo, t_hi, 300)
        margins = eps / d - ci2[None, :] / b0s[:, None]          # (900, m)
        rows_ok = (c1 * d / b0s <= eps) & np.all(margins > 0, axis=1)
        floors = 1.0 / np.where(margins > 0, margins, np.nan)    # (900, m)
        Bi = np.maximum(floors[:, None, :], ts[None, :, None])   # (900, 300, m)
        num = p * b0s[:, None] ** 2 + Bi ** 2 @ qw
        mn = np.minimum(b0s[:, None], np.min(Bi, axis=2))
        f = num / (g3 + 2.0 * mn ** 2)
        f[~rows_ok, :] = np.inf
        f[np.max(Bi, axis=2) > max(box.upper) * (1 + 1e-12)] = np.inf
        f[~np.isfinite(f)] = np.inf
        i0, i1 = np.unravel_index(int(np.argmin(f)), f.shape)
        if np.isfinite(f[i0, i1]):
            best = min(best, float(f[i0, i1]))
        b0_lo, b0_hi = b0s[max(i0 - 1, 0)], b0s[min(i0 + 1, len(b0s) - 1)]
        t_lo, t_hi = ts[max(i1 - 1, 0)], ts[min(i1 + 1, len(ts) - 1)]

    # Families C and D: one-dimensional structures the two-grid scan can
    # only straddle — the all-equal diagonal, and every input tied to the
    # output scale (at its floor where the floor is higher).
    def eval_points(B: np.ndarray) -> np.ndarray:
        ok = np.all(B > 0, axis=1)
        ok &= c1 * d / B[:, 0] <= eps
        for i in range(problem.m):
            ok &= (ci2[i] / B[:, 0] + 1.0 / B[:, 1 + i]) * d <= eps
        ok &= np.all(B <= np.array(box.upper)[None, :] * (1 + 1e-12), axis=1)
        num = p * B[:, 0] ** 2 + B[:, 1:] ** 2 @ qw
        f = num / (g3 + 2.0 * np.min(B, axis=1) ** 2)
        return np.where(ok & np.isfinite(f), f, np.inf)

    for family in ("diagonal", "tied"):
        s_lo, s_hi = min(box.lower), max(box.upper)
        for _ in range(3):
            s = np.geomspace(max(s_lo, 1e-300), s_hi, 2001)
            if family == "diagonal":
                B = np.repeat(s[:, None], dim, axis=1)
            else:
                margins = eps / d - ci2[None, :] / s[:, None]
                floors = 1.0 / np.where(margins > 0, margins, np.nan)
                B = np.concatenate(
                    [s[:, None], np.maximum(floors, s[:, None])], axis=1)
                B[~np.all(margins > 0, axis=1)] = np.nan
            f = eval_points(np.nan_to_num(B, nan=-1.0))
            i_best = int(np.argmin(f))
            if np.isfinite(f[i_best]):
                best = min(best, float(f[i_best]))
            s_lo = s[max(i_best - 1, 0)]
            s_hi = s[min(i_best + 1, len(s) - 1)]
    return best
