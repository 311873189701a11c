"""Laplace-mechanism calibration and exact privacy-loss accounting.

Sensitive signals are the system output and each participant's input stream.
The mechanism releases ``y_bar[k] = y[k] + eta[k]`` and
``u_bar_i[k] = u_i[k] + xi_i[k]`` with independent zero-mean Laplace noise of
scales ``b0`` and ``b_i``.  Adjacency is an L1 ball of radius ``delta_adj``
around a sensitive sequence.

Two amplification constants translate adjacency into released-signal
sensitivity through the closed-loop dynamics:

* ``c1 = 1 + sqrt(p) * c0 * decay / (1 - decay)`` bounds how far an output
  deviation of L1 mass ``delta`` can spread over the whole released output
  (``c1 = 1`` when ``p == 0``);
* ``ci2[i] = c1 * sum_j |b_{i,j}|`` bounds the total output response to an
  input deviation of L1 mass ``delta`` on channel ``i``.

The privacy level ``epsilon`` holds for the output stream when
``c1 * delta / b0 <= epsilon`` and for input channel ``i`` when
``(ci2[i] / b0 + 1 / b_i) * delta <= epsilon``.

Because the input coefficients are exactly what the estimator is trying to
learn, ``ci2`` cannot be computed from the unknown true system; callers
declare upper bounds on ``sum_j |b_{i,j}|`` instead and obtain conservative
constants.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import Trajectory
from .stability import StabilityCertificate

__all__ = [
    "PrivacySpec",
    "PrivacyConstants",
    "CoefficientBounds",
    "PerturbedTrajectory",
    "CalibrationError",
    "constants",
    "calibrate_b0",
    "calibrate_all",
    "laplace_sample",
    "laplace_array",
    "perturb",
    "privacy_loss_output",
    "privacy_loss_input",
]


class CalibrationError(ValueError):
    """Raised when noise calibration is impossible (unstable dynamics)."""


@dataclass(frozen=True)
class CoefficientBounds:
    """User-declared upper bounds on ``sum_j |b_{i,j}|`` per participant."""

    sum_abs_b: tuple[float, ...]

    def __init__(self, sum_abs_b):
        vals = tuple(float(s) for s in sum_abs_b)
        if any(s < 0 for s in vals):
            raise ValueError("coefficient bounds must be non-negative")
        object.__setattr__(self, "sum_abs_b", vals)


@dataclass(frozen=True)
class PrivacyConstants:
    """Amplification constants of the release mechanism."""

    c1: float
    ci2: tuple[float, ...]

    def __init__(self, c1, ci2):
        if c1 < 1.0:
            raise ValueError("output amplification constant is at least 1")
        object.__setattr__(self, "c1", float(c1))
        object.__setattr__(self, "ci2", tuple(float(c) for c in ci2))


@dataclass(frozen=True)
class PrivacySpec:
    """Privacy target plus the Laplace scales that realize it.

    ``b[0]`` is the output scale (always positive).  An input scale of 0
    means that channel is released unperturbed and no input-privacy claim is
    made for it; positive input scales must satisfy the input condition.
    """

    epsilon: float
    delta_adj: float
    b: tuple[float, ...]

    def __init__(self, epsilon, delta_adj, b):
        if epsilon <= 0:
            raise ValueError("privacy level must be positive")
        if delta_adj <= 0:
            raise ValueError("adjacency radius must be positive")
        b = tuple(float(x) for x in b)
        if len(b) < 1 or b[0] <= 0:
            raise ValueError("output scale b[0] must be positive")
        if any(x < 0 for x in b[1:]):
            raise ValueError("input scales must be non-negative")
        object.__setattr__(self, "epsilon", float(epsilon))
        object.__setattr__(self, "delta_adj", float(delta_adj))
        object.__setattr__(self, "b", b)

    @property
    def b0(self) -> float:
        return self.b[0]

    @property
    def input_scales(self) -> tuple[float, ...]:
        return self.b[1:]

    def check(self, consts: PrivacyConstants, tol: float = 1e-9) -> None:
        """Verify both calibration conditions; raise on violation."""
        if consts.c1 * self.delta_adj / self.b0 > self.epsilon + tol:
            raise ValueError("output-privacy condition violated")
        for i, bi in enumerate(self.input_scales):
            if bi == 0.0:
                continue
            lhs = (consts.ci2[i] / self.b0 + 1.0 / bi) * self.delta_adj
            if lhs > self.epsilon + tol:
                raise ValueError(f"input-privacy condition violated for channel {i}")


@dataclass(frozen=True)
class PerturbedTrajectory:
    """Released (noisy) signals plus the raw noise draws for diagnostics."""

    y: np.ndarray
    u: tuple[np.ndarray, ...]
    eta: np.ndarray
    xi: tuple[np.ndarray, ...]


def constants(cert: StabilityCertificate, p: int, bounds: CoefficientBounds) -> PrivacyConstants:
    """Amplification constants from a stability certificate.

    Parameters
    ----------
    cert:
        Must certify stability; calibration is impossible otherwise (an
        adversary can distinguish adjacent inputs of an unstable system at
        any noise level, see the adversary module).
    p:
        Output-regression order of the model the certificate belongs to.
    bounds:
        Declared upper bounds standing in for the unknown true
        ``sum_j |b_{i,j}|``.
    """
    if not cert.stable:
        raise CalibrationError(
            "cannot calibrate noise for an unstable system: released signals "
            "admit adjacent pairs with unbounded likelihood ratio"
        )
    if p == 0:
        c1 = 1.0
    else:
        c1 = 1.0 + math.sqrt(p) * cert.c0 * cert.decay / (1.0 - cert.decay)
    ci2 = tuple(c1 * s for s in bounds.sum_abs_b)
    return PrivacyConstants(c1=c1, ci2=ci2)


def calibrate_b0(consts: PrivacyConstants, epsilon: float, delta_adj: float) -> float:
    """Minimal output scale meeting the output-privacy condition."""
    if epsilon <= 0 or delta_adj <= 0:
        raise ValueError("epsilon and delta_adj must be positive")
    return consts.c1 * delta_adj / epsilon


def calibrate_all(
    consts: PrivacyConstants, epsilon: float, delta_adj: float, rho: float = 0.5
) -> PrivacySpec:
    """Scales meeting both privacy conditions via a simple budget split.

    The input condition couples ``b0`` and ``b_i``; the split parameter
    ``rho`` in (0, 1) gives the input-noise term ``rho * epsilon`` of the
    budget and leaves the rest to the output-amplification term::

        b_i = delta / (rho * epsilon)
        b0  = max(c1 * delta / epsilon,  max_i ci2[i] * delta / ((1 - rho) * epsilon))

    The returned spec is verified against both conditions before return.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError("budget split rho must lie strictly inside (0, 1)")
    if epsilon <= 0 or delta_adj <= 0:
        raise ValueError("epsilon and delta_adj must be positive")
    b0 = calibrate_b0(consts, epsilon, delta_adj)
    if consts.ci2:
        b0 = max(b0, max(consts.ci2) * delta_adj / ((1.0 - rho) * epsilon))
    bi = delta_adj / (rho * epsilon)
    spec = PrivacySpec(epsilon=epsilon, delta_adj=delta_adj,
                       b=(b0,) + (bi,) * len(consts.ci2))
    spec.check(consts)
    return spec


def laplace_sample(scale: float, rng: np.random.Generator) -> float:
    """One draw from the zero-mean Laplace distribution via the inverse CDF.

    Uses ``x = -scale * sign(u) * ln(1 - 2|u|)`` with ``u`` uniform on
    (-1/2, 1/2); the median draw ``u = 0`` maps to exactly 0.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    u = 0.5 - rng.random()
    while abs(u) >= 0.5:                      # measure-zero edge, avoids log(0)
        u = 0.5 - rng.random()
    return -scale * math.copysign(1.0, u) * math.log1p(-2.0 * abs(u))


def laplace_array(scale: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Vector of independent Laplace draws; same transform as `laplace_sample`."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    u = 0.5 - rng.random(size)
    bad = np.abs(u) >= 0.5
    while np.any(bad):
        u[bad] = 0.5 - rng.random(int(bad.sum()))
        bad = np.abs(u) >= 0.5
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def perturb(traj: Trajectory, spec: PrivacySpec, rngs) -> PerturbedTrajectory:
    """Release a trajectory through the Laplace mechanism.

    Parameters
    ----------
    traj:
        True signals.
    spec:
        Laplace scales; input channels with scale 0 pass through unperturbed
        (their noise array is all zeros).
    rngs:
        Sequence of ``1 + m`` independent generators, one per noise source
        (output first), so that cross-channel independence holds by
        construction.
    """
    m = len(traj.u)
    if len(spec.input_scales) != m:
        raise ValueError(f"spec carries {len(spec.input_scales)} input scales, "
                         f"trajectory has {m} channels")
    if len(rngs) != 1 + m:
        raise ValueError(f"need {1 + m} generators, got {len(rngs)}")
    T = traj.horizon
    eta = laplace_array(spec.b0, T, rngs[0])
    xi = []
    for i, bi in enumerate(spec.input_scales):
        if bi == 0.0:
            xi.append(np.zeros(T))
        else:
            xi.append(laplace_array(bi, T, rngs[1 + i]))
    u_bar = tuple(traj.u[i] + xi[i] for i in range(m))
    return PerturbedTrajectory(y=traj.y + eta, u=u_bar, eta=eta, xi=tuple(xi))


def privacy_loss_output(y: np.ndarray, y_prime: np.ndarray, b0: float) -> float:
    """Exact worst-case log-likelihood ratio of the released output stream.

    For the Laplace mechanism the ratio of output densities at any released
    sequence is bounded by ``exp(sum_k |y[k] - y'[k]| / b0)``, with equality
    achievable; privacy at level ``epsilon`` holds for this pair exactly when
    the returned value is at most ``epsilon``.
    """
    y = np.asarray(y, dtype=float)
    y_prime = np.asarray(y_prime, dtype=float)
    if y.shape != y_prime.shape:
        raise ValueError("output sequences must have equal length")
    if b0 <= 0:
        raise ValueError("scale must be positive")
    return float(np.sum(np.abs(y - y_prime)) / b0)


def privacy_loss_input(
    y: np.ndarray, y_prime: np.ndarray,
    u_i: np.ndarray, u_i_prime: np.ndarray,
    b0: float, b_i: float,
) -> float:
    """Exact worst-case log-likelihood ratio when one input channel changes.

    The adversary sees both the released output and the released channel, so
    the losses add: ``sum |y - y'| / b0 + sum |u_i - u_i'| / b_i``.
    """
    u_i = np.asarray(u_i, dtype=float)
    u_i_prime = np.asarray(u_i_prime, dtype=float)
    if u_i.shape != u_i_prime.shape:
        raise ValueError("input sequences must have equal length")
    if b_i <= 0:
        raise ValueError("input channel released unperturbed carries no privacy claim")
    return privacy_loss_output(y, y_prime, b0) + float(np.sum(np.abs(u_i - u_i_prime)) / b_i)
