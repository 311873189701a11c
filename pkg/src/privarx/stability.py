"""Stability certification for the output-feedback part of an ARX model.

The feedback polynomial is ``lam(z) = 1 - a_1 z - ... - a_p z^p``.  The system
is asymptotically stable when every root of ``lam`` lies strictly outside the
closed unit disk — equivalently, when the companion matrix built from the
feedback coefficients has spectral radius below one.

A certificate carries a decay pair ``(c0, decay)`` with
``norm(A^k) <= c0 * decay^k`` for all ``k``; this pair drives every noise
calibration constant downstream, so it is verified numerically before the
certificate is returned.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ArxModel

__all__ = [
    "StabilityCertificate",
    "companion_matrix",
    "certify",
    "matrix_power_norms",
    "feedback_roots",
]

#: Roots this close to the unit circle are classified unstable: the decay-pair
#: constants blow up as the margin vanishes, so the conservative call is the
#: only safe one for noise calibration.
_UNIT_CIRCLE_TOL = 1e-9

#: Relative slack when numerically verifying the decay envelope (the bound is
#: exact in real arithmetic; this absorbs floating-point rounding only).
_ENVELOPE_SLACK = 1e-9


@dataclass(frozen=True)
class StabilityCertificate:
    """Outcome of :func:`certify`.

    Attributes
    ----------
    roots:
        Roots of the feedback polynomial (empty when ``p == 0`` or all
        feedback coefficients vanish).
    spectral_radius:
        Spectral radius of the companion matrix (0 when ``p == 0``).
    c0, decay:
        Decay pair with ``norm(A^k) <= c0 * decay^k``; ``None`` when the
        model is unstable.  ``c0 == 0`` in the degenerate ``p == 0`` case.
    stable:
        Whether every root lies strictly outside the closed unit disk.
    strategy:
        How ``c0`` was obtained: ``"order-zero"`` (no feedback),
        ``"eigenvector-condition"`` (condition number of the unit-column
        eigenvector matrix, with ``decay`` equal to the spectral radius) or
        ``"power-envelope"`` (empirical envelope with a small margin added to
        the spectral radius).
    """

    roots: tuple[complex, ...]
    spectral_radius: float
    c0: float | None
    decay: float | None
    stable: bool
    strategy: str


def companion_matrix(model: ArxModel) -> np.ndarray:
    """Companion matrix of the feedback recursion.

    Layout: ones on the superdiagonal, reversed feedback coefficients
    ``[a_p, ..., a_1]`` in the bottom row, zeros elsewhere, so that the
    state ``[y[k+1-p], ..., y[k]]`` advances by one step under it.

    Raises
    ------
    ValueError
        If the model has no feedback part (``p == 0``).
    """
    p = model.p
    if p == 0:
        raise ValueError("a feed-through model (p == 0) has no companion matrix")
    A = np.zeros((p, p))
    for j in range(p - 1):
        A[j, j + 1] = 1.0
    A[p - 1, :] = list(reversed(model.a))
    return A


def feedback_roots(model: ArxModel) -> tuple[complex, ...]:
    """Roots of ``lam(z) = 1 - a_1 z - ... - a_p z^p``.

    Leading zero coefficients are stripped, so the root count equals the
    effective polynomial degree (an all-zero feedback vector has no roots).
    """
    coeffs = [1.0] + [-aj for aj in model.a]          # ascending powers
    while len(coeffs) > 1 and coeffs[-1] == 0.0:
        coeffs.pop()
    if len(coeffs) == 1:
        return ()
    roots = np.roots(list(reversed(coeffs)))          # numpy wants descending
    return tuple(sorted((complex(r) for r in roots), key=lambda z: (abs(z), z.real, z.imag)))


def matrix_power_norms(A: np.ndarray, k_max: int) -> np.ndarray:
    """Operator 2-norms of ``A^k`` for ``k = 0..k_max``."""
    if k_max < 0:
        raise ValueError("k_max must be non-negative")
    A = np.asarray(A, dtype=float)
    norms = np.empty(k_max + 1)
    power = np.eye(A.shape[0])
    for k in range(k_max + 1):
        norms[k] = np.linalg.norm(power, 2)
        if k < k_max:
            power = power @ A
    return norms


def _eigenvector_condition(A: np.ndarray) -> tuple[float, bool]:
    """Condition number of the unit-column eigenvector matrix.

    Returns ``(cond, ok)`` where ``ok`` is False when the matrix is not
    numerically diagonalizable (near-parallel eigenvectors).
    """
    w, S = np.linalg.eig(A)
    S = S / np.linalg.norm(S, axis=0, keepdims=True)
    cond = np.linalg.cond(S, 2)
    if not np.isfinite(cond) or cond > 1e8:
        return float(cond), False
    # Reconstruction residual guards against a formally invertible but
    # meaningless eigenbasis.
    recon = S @ np.diag(w) @ np.linalg.inv(S)
    scale = max(1.0, float(np.linalg.norm(A, 2)))
    if np.linalg.norm(recon - A, 2) > 1e-8 * scale * cond:
        return float(cond), False
    return float(cond), True


def certify(model: ArxModel, k_max: int = 200) -> StabilityCertificate:
    """Certify asymptotic stability and produce a verified decay pair.

    Parameters
    ----------
    model:
        System whose feedback part is analyzed.
    k_max:
        Largest matrix power used both for the empirical-envelope strategy
        and for the numerical verification of the returned pair.

    Returns
    -------
    StabilityCertificate
        For a stable model the pair satisfies
        ``norm(A^k) <= c0 * decay^k`` for every ``k <= k_max`` (checked); an
        unstable model yields ``stable=False`` with no pair.
    """
    if model.p == 0:
        return StabilityCertificate(
            roots=(), spectral_radius=0.0, c0=0.0, decay=0.5,
            stable=True, strategy="order-zero",
        )
    A = companion_matrix(model)
    roots = feedback_roots(model)
    rho = float(max(abs(np.linalg.eigvals(A))))
    stable = all(abs(z) > 1.0 + _UNIT_CIRCLE_TOL for z in roots) and rho < 1.0
    if not stable:
        return StabilityCertificate(
            roots=roots, spectral_radius=rho, c0=None, decay=None,
            stable=False, strategy="none",
        )

    c0 = None
    decay = None
    strategy = "power-envelope"
    if rho > 1e-12:
        cond, ok = _eigenvector_condition(A)
        if ok:
            c0, decay, strategy = cond, rho, "eigenvector-condition"
    if c0 is None:
        decay = rho + 0.01 * (1.0 - rho)
        norms = matrix_power_norms(A, k_max)
        c0 = float(np.max(norms / decay ** np.arange(k_max + 1)))

    norms = matrix_power_norms(A, k_max)
    envelope = c0 * decay ** np.arange(k_max + 1)
    if np.any(norms > envelope * (1.0 + _ENVELOPE_SLACK) + 1e-300):
        # The eigenvector-condition bound is exact in real arithmetic; if
        # rounding ever breaks it, fall back to the empirical envelope.
        decay = rho + 0.01 * (1.0 - rho)
        c0 = float(np.max(norms / decay ** np.arange(k_max + 1)))
        strategy = "power-envelope"
    return StabilityCertificate(
        roots=roots, spectral_radius=rho, c0=float(c0), decay=float(decay),
        stable=True, strategy=strategy,
    )
