"""Recursive least-squares estimation on perturbed signals.

The recursion consumes released (noisy) regressors ``phi_bar[k]`` and outputs
``y_bar[k+1]`` and maintains the gain matrix ``P[k]`` in covariance form::

    g[k]     = 1 / (1 + phi_bar[k]' P[k] phi_bar[k])          (gain in (0, 1])
    theta[k+1] = theta[k] + g[k] P[k] phi_bar[k] (y_bar[k+1] - phi_bar[k]' theta[k])
    P[k+1]   = P[k] - g[k] P[k] phi_bar[k] phi_bar[k]' P[k]

with ``P[0] = I / alpha``.  The information matrix ``P[k]^{-1} = alpha I +
sum phi_bar phi_bar'`` is tracked only through its running log-determinant
(each step adds ``-ln g[k]``); eigenvalue diagnostics invert the covariance
spectrum instead, and a closed-form regularized least-squares solve acts as
an independent oracle for the whole recursion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RlsState",
    "ExcitationReport",
    "ErrorBound",
    "NumericalBreakdownError",
    "init",
    "step",
    "batch_oracle",
    "excitation",
    "error_bound_basic",
    "error_bound_refined",
    "logdet_gain_check",
    "noise_energy",
]


class NumericalBreakdownError(ArithmeticError):
    """The recursion left its numerically valid regime (non-finite values or
    loss of positive-definiteness beyond tolerance)."""


@dataclass
class RlsState:
    """Mutable single-owner state of one estimation run.

    Attributes
    ----------
    theta:
        Current estimate (length ``n``).
    p_bar:
        Covariance-form gain matrix, kept symmetric positive-definite.
    r:
        Accumulated regressor energy ``e + sum ||phi_bar||^2`` (starts at
        Euler's number so its logarithm starts at 1).
    k:
        Number of completed steps.
    logdet_info:
        Running ``ln det`` of the information matrix ``p_bar^{-1}``.
    gain_sum:
        Accumulated ``g[k] * phi' P phi`` terms (equivalently
        ``sum (1 - g[k])``), compared against the log-determinant increase by
        :func:`logdet_gain_check`.
    alpha:
        Regularizer defining the initial information matrix ``alpha I``.
    """

    theta: np.ndarray
    p_bar: np.ndarray
    r: float
    k: int
    logdet_info: float
    gain_sum: float
    alpha: float

    @property
    def n(self) -> int:
        return int(self.theta.shape[0])


@dataclass(frozen=True)
class ExcitationReport:
    """Spectral excitation diagnostics at one step of a run.

    ``ratio`` (and its ``ratio_beta2`` variant with the iterated-logarithm
    factor ``(ln(e + ln r))^kappa``) must trend to zero for the estimate to
    converge; ``gamma1_hat`` estimates the asymptotic per-step information
    floor used by the error bounds.
    """

    lambda_min_info: float
    lambda_max_info: float
    gamma1_hat: float
    ratio: float
    ratio_beta2: float


@dataclass(frozen=True)
class ErrorBound:
    """A closed-form asymptotic error bound with its inputs retained.

    ``kind`` is ``"basic"`` (denominator is the information floor alone),
    ``"refined"`` (denominator gains ``2 min b^2``) or ``"optimized"``
    (refined form evaluated at an optimizer solution).  ``recompute`` rebuilds
    the value from the stored inputs so invariance is checkable.
    """

    value: float
    kind: str
    theta_norm: float
    p: int
    q: tuple[int, ...]
    b: tuple[float, ...]
    gamma: float

    def recompute(self) -> float:
        num = self.p * self.b[0] ** 2 + sum(
            qi * bi ** 2 for qi, bi in zip(self.q, self.b[1:])
        )
        denom = self.gamma
        if self.kind in ("refined", "optimized"):
            denom = denom + 2.0 * min(bi ** 2 for bi in self.b)
        return 2.0 * self.theta_norm * math.sqrt(num / denom)


def init(n: int, alpha: float, theta0=None) -> RlsState:
    """Fresh state with information matrix ``alpha I`` and estimate ``theta0``."""
    if alpha <= 0:
        raise ValueError("regularizer alpha must be positive")
    if n < 1:
        raise ValueError("dimension must be at least 1")
    theta = np.zeros(n) if theta0 is None else np.asarray(theta0, dtype=float).copy()
    if theta.shape != (n,):
        raise ValueError("initial estimate has the wrong dimension")
    return RlsState(
        theta=theta,
        p_bar=np.eye(n) / alpha,
        r=math.e,
        k=0,
        logdet_info=n * math.log(alpha),
        gain_sum=0.0,
        alpha=float(alpha),
    )


def step(state: RlsState, phi_bar: np.ndarray, y_bar_next: float) -> float:
    """Advance the recursion by one observation.

    Mutates ``state`` in place and returns the scalar gain
    ``1 / (1 + phi' P phi)`` applied to the innovation, which satisfies
    ``1 - gain == gain * (phi' P phi)``.
    """
    phi = np.asarray(phi_bar, dtype=float)
    if phi.shape != (state.n,):
        raise ValueError("regressor has the wrong dimension")

    P = state.p_bar
    Pphi = P @ phi
    quad = float(phi @ Pphi)
    # A NaN anywhere in the regressor propagates into `quad` and fails this
    # comparison, so the same branch catches breakdown and corrupt input.
    if not quad >= -1e-12:
        raise NumericalBreakdownError(
            f"gain matrix lost positive-definiteness or the regressor is "
            f"not finite (phi'Pphi = {quad:.3e})"
        )
    quad = max(quad, 0.0)
    gain = 1.0 / (1.0 + quad)
    innovation = y_bar_next - float(phi @ state.theta)
    if not math.isfinite(innovation) or not math.isfinite(quad):
        raise NumericalBreakdownError("non-finite observation fed to the recursion")
    state.theta += (gain * innovation) * Pphi
    P -= gain * np.outer(Pphi, Pphi)
    sym = P + P.T
    sym *= 0.5
    state.p_bar = sym
    logdet_inc = math.log1p(quad)
    if not math.isfinite(logdet_inc):
        raise NumericalBreakdownError("log-determinant update is not finite")
    state.logdet_info += logdet_inc
    state.gain_sum += gain * quad
    state.r += float(phi @ phi)
    state.k += 1
    return gain


def batch_oracle(alpha: float, theta0, phis: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Closed-form regularized least-squares solution over a whole data set.

    Solves ``(alpha I + sum phi phi') theta = alpha theta0 + sum phi y`` by a
    direct symmetric factorization; the recursion must agree with this at
    every step, which is the core correctness oracle of the estimator.
    """
    if alpha <= 0:
        raise ValueError("regularizer alpha must be positive")
    phis = np.asarray(phis, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if phis.ndim != 2 or phis.shape[0] != ys.shape[0]:
        raise ValueError("regressor matrix and target vector are misaligned")
    n = phis.shape[1]
    theta0 = np.zeros(n) if theta0 is None else np.asarray(theta0, dtype=float)
    G = alpha * np.eye(n) + phis.T @ phis
    rhs = alpha * theta0 + phis.T @ ys
    return np.linalg.solve(G, rhs)


def excitation(state: RlsState, kappa: float = 1.1) -> ExcitationReport:
    """Spectral excitation diagnostics for the current state.

    Requires at least one completed step.  Eigenvalues of the information
    matrix are obtained as reciprocals of the covariance spectrum, avoiding
    an explicit inverse.
    """
    if state.k < 1:
        raise ValueError("excitation diagnostics need at least one step")
    eigs = np.linalg.eigvalsh(state.p_bar)
    if eigs[-1] <= 0 or eigs[0] <= 0:
        raise NumericalBreakdownError("gain matrix spectrum left the positive cone")
    lam_min_info = 1.0 / float(eigs[-1])
    lam_max_info = 1.0 / float(eigs[0])
    log_r = math.log(state.r)
    return ExcitationReport(
        lambda_min_info=lam_min_info,
        lambda_max_info=lam_max_info,
        gamma1_hat=lam_min_info / state.k,
        ratio=log_r / lam_min_info,
        ratio_beta2=log_r * math.log(math.e + log_r) ** kappa / lam_min_info,
    )


def _numerator(p: int, q, b) -> float:
    b = tuple(float(x) for x in b)
    q = tuple(int(x) for x in q)
    if len(b) != len(q) + 1:
        raise ValueError("need one output scale plus one scale per input channel")
    return p * b[0] ** 2 + sum(qi * bi ** 2 for qi, bi in zip(q, b[1:]))


def error_bound_basic(theta_norm: float, p: int, q, b, gamma1: float) -> ErrorBound:
    """Asymptotic error bound ``2 ||theta|| sqrt(noise energy / gamma1)``.

    ``gamma1`` is the per-step floor of the smallest information eigenvalue
    (estimated from a run or supplied); the numerator ``p b0^2 + sum q_i
    b_i^2`` is the stationary energy the privacy noise injects into the
    regressor as seen through the parameter vector.
    """
    if gamma1 <= 0:
        raise ValueError("information floor gamma1 must be positive")
    num = _numerator(p, q, b)
    value = 2.0 * theta_norm * math.sqrt(num / gamma1)
    return ErrorBound(value=value, kind="basic", theta_norm=float(theta_norm),
                      p=int(p), q=tuple(int(x) for x in q),
                      b=tuple(float(x) for x in b), gamma=float(gamma1))


def error_bound_refined(theta_norm: float, p: int, q, b, gamma3: float,
                        kind: str = "refined") -> ErrorBound:
    """Refined bound whose denominator gains the noise's own excitation.

    The perturbation itself excites the regressor, contributing
    ``2 min_i b_i^2`` (minimum over the output scale and every input scale)
    to the information floor; the refined bound is therefore never larger
    than the basic bound evaluated at the same floor.
    """
    if gamma3 <= 0:
        raise ValueError("information floor gamma3 must be positive")
    if kind not in ("refined", "optimized"):
        raise ValueError("kind must be 'refined' or 'optimized'")
    num = _numerator(p, q, b)
    b = tuple(float(x) for x in b)
    denom = gamma3 + 2.0 * min(bi ** 2 for bi in b)
    value = 2.0 * theta_norm * math.sqrt(num / denom)
    return ErrorBound(value=value, kind=kind, theta_norm=float(theta_norm),
                      p=int(p), q=tuple(int(x) for x in q), b=b,
                      gamma=float(gamma3))


def logdet_gain_check(state: RlsState) -> tuple[float, float]:
    """Accumulated normalized gain vs. log-determinant increase.

    Returns ``(lhs, rhs)`` where ``lhs = sum g[k] phi' P phi`` and ``rhs``
    is the total increase of ``ln det`` of the information matrix; the
    recursion guarantees ``lhs <= rhs`` because each term ``x/(1+x)`` is
    bounded by ``ln(1+x)``.
    """
    rhs = state.logdet_info - state.n * math.log(state.alpha)
    return state.gain_sum, rhs


def noise_energy(theta_true: np.ndarray, phi_true: np.ndarray,
                 phi_bar: np.ndarray) -> np.ndarray:
    """Running energy of the regressor perturbation as seen through theta.

    ``s[k] = sum_{t<=k} (theta' (phi[t] - phi_bar[t]))^2``; identically zero
    when the released regressor equals the true one (e.g. no feedback lags
    and unperturbed inputs).
    """
    theta_true = np.asarray(theta_true, dtype=float)
    phi_true = np.asarray(phi_true, dtype=float)
    phi_bar = np.asarray(phi_bar, dtype=float)
    if phi_true.shape != phi_bar.shape:
        raise ValueError("true and released regressor sequences are misaligned")
    if phi_true.ndim != 2 or phi_true.shape[1] != theta_true.shape[0]:
        raise ValueError("regressor dimension does not match theta")
    d = (phi_true - phi_bar) @ theta_true
    return np.cumsum(d * d)
