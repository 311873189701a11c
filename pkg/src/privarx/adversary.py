"""Impossibility constructions for non-stable systems.

When the feedback polynomial has a root inside (or on) the unit circle, no
Laplace scale protects the released signals: an adversary can craft two
adjacent sensitive sequences whose released-output distributions separate by
an arbitrarily large likelihood-ratio factor as the horizon grows.  This
module builds those pairs and evaluates the separation analytically.

The probe direction is the resonant sequence ``D[k] = 2 r^k cos(k beta)``
built from the reciprocal ``r e^{i beta}`` of the offending root; it solves
the homogeneous feedback recursion exactly, so a deviation shaped like its
prefix keeps reproducing itself — growing when ``r > 1`` — instead of dying
out.  On the index set where ``cos(k beta)`` is bounded below by ``gamma > 0``
the deviation has a guaranteed sign and magnitude, which turns half-line
events on the released output into distinguishers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ArxModel, simulate
from .stability import feedback_roots

__all__ = [
    "ResonantSequence",
    "AdjacentPair",
    "SingleIndexEvent",
    "ConstructionError",
    "resonant_sequence",
    "adjacent_output_pair",
    "adjacent_input_pair",
    "distinguishing_ratio",
    "single_index_event",
    "required_index_count",
]

#: Roots with modulus up to 1 + this tolerance count as non-stable, matching
#: the conservative boundary rule of the stability certificate.
_UNIT_CIRCLE_TOL = 1e-9

_ANGLE_TOL = 1e-12


class ConstructionError(ValueError):
    """The requested adversarial construction does not exist."""


@dataclass(frozen=True)
class ResonantSequence:
    """Growth direction extracted from a non-stable root.

    Attributes
    ----------
    model:
        System the sequence belongs to.
    z0:
        Chosen characteristic root (smallest modulus, ``|z0| <= 1``).
    r, beta:
        Modulus and argument of ``1 / z0`` (``beta`` in ``[0, pi]``).
    delta_seq:
        ``D[k] = 2 r^k cos(k beta)`` for steps ``1..T`` (0-based storage).
    k_indices:
        1-based steps where ``cos(k beta)`` clears the angular window, i.e.
        where the deviation has guaranteed positive magnitude.
    gamma:
        Guaranteed cosine lower bound on the selected indices
        (``D[k_i] >= 2 gamma r^{k_i}`` exactly).
    alpha0:
        Angular window radius achieving that bound.
    """

    model: ArxModel
    z0: complex
    r: float
    beta: float
    delta_seq: np.ndarray
    k_indices: tuple[int, ...]
    gamma: float
    alpha0: float


@dataclass(frozen=True)
class AdjacentPair:
    """Two adjacent sensitive sequences plus the probe metadata.

    ``kind`` is ``"output-pair"`` (the output stream differs by the scaled
    resonant prefix) or ``"input-pair"`` (one participant's input stream
    differs by the back-solved ladder that reproduces the resonant deviation
    on the output).  ``base`` and ``shifted`` are the sensitive prefixes up
    to ``T1``; their L1 distance equals ``delta_adj`` exactly.
    """

    kind: str
    base: np.ndarray
    shifted: np.ndarray
    direction: np.ndarray
    delta_adj: float
    T1: int
    seq: ResonantSequence
    prefix_norm: float = 1.0
    participant: int | None = None

    @property
    def norm_v(self) -> float:
        """L1 mass of the raw (unnormalized) probe prefix.

        The propagated deviation at step ``k`` is
        ``delta_adj * D[k] / norm_v``, so this norm — not the unit L1 mass
        of the stored normalized ``direction`` — scales every analytic
        likelihood-ratio exponent.
        """
        return self.prefix_norm


@dataclass(frozen=True)
class SingleIndexEvent:
    """Half-line event on one released-output coordinate.

    The event is ``released output at `index` does not exceed its base
    value``; under the base hypothesis its probability is exactly 1/2 (the
    Laplace noise is median-centered), while under the shifted hypothesis it
    is ``exp(-shift / b0) / 2``.
    """

    index: int
    shift: float
    p_base: float
    p_shifted: float
    log_ratio: float


def _angular_distance(x: float) -> float:
    """Distance from ``x`` to the nearest multiple of ``2 pi``."""
    return abs(math.remainder(x, 2.0 * math.pi))


def resonant_sequence(model: ArxModel, T: int) -> ResonantSequence:
    """Build the probe sequence of a non-stable model.

    Raises
    ------
    ConstructionError
        If every characteristic root lies strictly outside the unit circle
        (the construction is exactly what stability rules out), or if no
        index clears the angular window within the horizon.
    """
    if T < 1:
        raise ValueError("horizon must be at least 1")
    roots = feedback_roots(model)
    inside = [z for z in roots if abs(z) <= 1.0 + _UNIT_CIRCLE_TOL]
    if not inside:
        raise ConstructionError(
            "all characteristic roots lie outside the unit circle; "
            "a stable system admits no growing probe direction"
        )
    z0 = min(inside, key=lambda z: (abs(z), z.real, -abs(z.imag)))
    if z0.imag < 0:
        z0 = z0.conjugate()
    w = 1.0 / z0
    r = abs(w)
    beta = abs(math.atan2(w.imag, w.real))

    ks = np.arange(1, T + 1, dtype=float)
    delta_seq = 2.0 * r ** ks * np.cos(ks * beta)

    alpha0 = None
    for k in range(1, T + 1):
        d = _angular_distance(k * beta)
        if d < math.pi / 2.0:
            alpha0 = d
            break
    if alpha0 is None:
        raise ConstructionError(
            "no step within the horizon clears the angular window; "
            "increase the horizon"
        )
    selected = []
    cosines = []
    for k in range(1, T + 1):
        d = _angular_distance(k * beta)
        if d <= alpha0 + _ANGLE_TOL:
            selected.append(k)
            cosines.append(math.cos(d))
    gamma = min(math.cos(alpha0), min(cosines))
    return ResonantSequence(
        model=model, z0=z0, r=r, beta=beta, delta_seq=delta_seq,
        k_indices=tuple(selected), gamma=float(gamma), alpha0=float(alpha0),
    )


def adjacent_output_pair(seq: ResonantSequence, y_base, T1: int,
                         delta_adj: float) -> AdjacentPair:
    """Output stream pair differing by the scaled resonant prefix.

    ``shifted = base + delta_adj * v / ||v||_1`` with ``v`` the first ``T1``
    resonant values; because the probe solves the feedback recursion, the
    deviation between the two full trajectories continues as the resonant
    sequence itself for every later step.
    """
    p = seq.model.p
    if T1 < p:
        raise ValueError(f"prefix length {T1} shorter than the feedback order {p}")
    if T1 > seq.delta_seq.shape[0]:
        raise ValueError("prefix length exceeds the probe horizon")
    if delta_adj <= 0:
        raise ValueError("adjacency radius must be positive")
    y_base = np.asarray(y_base, dtype=float)[:T1]
    if y_base.shape[0] != T1:
        raise ValueError("base output shorter than the prefix length")
    v = seq.delta_seq[:T1].copy()
    norm = float(np.sum(np.abs(v)))
    if norm == 0.0:
        raise ConstructionError("degenerate probe prefix (zero L1 mass)")
    shifted = y_base + delta_adj * v / norm
    return AdjacentPair(kind="output-pair", base=y_base, shifted=shifted,
                        direction=v / norm, delta_adj=float(delta_adj),
                        T1=int(T1), seq=seq, prefix_norm=norm)


def adjacent_input_pair(seq: ResonantSequence, model: ArxModel, i: int,
                        T1: int, delta_adj: float) -> AdjacentPair:
    """Input stream pair whose output response reproduces the probe.

    Back-solves the input ladder on the last ``p`` input slots before ``T1``
    so that the induced output deviation hits the first ``p`` resonant values
    exactly, then normalizes the ladder to L1 mass ``delta_adj``.  The base
    stream is the zero sequence; by linearity any base works identically.

    Requires the leading input coefficient ``b_{i,1}`` to be nonzero — the
    ladder divides by it.
    """
    p = model.p
    if T1 < p:
        raise ValueError(f"prefix length {T1} shorter than the feedback order {p}")
    if not 0 <= i < model.m:
        raise ValueError(f"participant index {i} out of range")
    if delta_adj <= 0:
        raise ValueError("adjacency radius must be positive")
    bi = model.b[i]
    if bi[0] == 0.0:
        raise ConstructionError(
            "participant's leading input coefficient is zero; the input "
            "ladder cannot imprint the probe on the output"
        )
    if p > seq.delta_seq.shape[0]:
        raise ValueError("probe horizon shorter than the feedback order")
    qi = len(bi)
    a = model.a
    D = seq.delta_seq                      # D[j-1] = resonant value at step j
    s = T1 - p
    ladder = np.zeros(T1)
    for j in range(1, p + 1):
        acc = D[j - 1]
        for l in range(1, min(p, j - 1) + 1):
            acc -= a[l - 1] * D[j - l - 1]
        for l in range(2, min(qi, j) + 1):
            acc -= bi[l - 1] * ladder[s + j - l]
        ladder[s + j - 1] = acc / bi[0]
    norm = float(np.sum(np.abs(ladder)))
    if norm == 0.0:
        raise ConstructionError("degenerate input ladder (zero L1 mass)")
    base = np.zeros(T1)
    shifted = delta_adj * ladder / norm
    return AdjacentPair(kind="input-pair", base=base, shifted=shifted,
                        direction=ladder / norm, delta_adj=float(delta_adj),
                        T1=int(T1), seq=seq, prefix_norm=norm,
                        participant=int(i))


def _extended_probe(seq: ResonantSequence, T2: int) -> tuple[np.ndarray, list[int]]:
    """Probe values and selected 1-based indices out to horizon ``T2``."""
    ks = np.arange(1, T2 + 1, dtype=float)
    D = 2.0 * seq.r ** ks * np.cos(ks * seq.beta)
    selected = [k for k in range(1, T2 + 1)
                if _angular_distance(k * seq.beta) <= seq.alpha0 + _ANGLE_TOL]
    return D, selected


def _induced_output_difference(pair: AdjacentPair, T2: int) -> np.ndarray:
    """Exact output deviation caused by an input-pair perturbation."""
    model = pair.seq.model
    du = np.zeros(T2)
    du[: pair.T1] = pair.shifted - pair.base
    inputs = [np.zeros(T2) for _ in range(model.m)]
    inputs[pair.participant] = du
    return simulate(model, inputs, np.zeros(T2), T2).y


def distinguishing_ratio(pair: AdjacentPair, b0: float, T2: int,
                         b_i: float | None = None) -> tuple[float, int]:
    """Analytic log likelihood-ratio of the half-line distinguisher.

    For an output pair the released-output deviation at step ``k`` equals
    ``delta_adj * D[k] / ||v||_1`` for every ``k`` up to ``T2`` (the probe
    solves the recursion), and the event on the selected indices yields the
    exponent ``delta_adj * sum D[k_i] / (||v||_1 b0)``.

    For an input pair the deviation is computed by exact simulation of the
    perturbed channel (the idealized continuation formula is only exact for
    one-tap channels), only positively-shifted selected indices contribute,
    and observing the released input channel costs at most
    ``delta_adj / b_i``, which is subtracted.

    Returns ``(log_ratio, n_selected)``.
    """
    if b0 <= 0:
        raise ValueError("output scale must be positive")
    if T2 < pair.T1:
        raise ValueError("evaluation horizon must reach past the prefix")
    D, selected = _extended_probe(pair.seq, T2)
    if pair.kind == "output-pair":
        total = sum(D[k - 1] for k in selected)
        return float(pair.delta_adj * total / (pair.norm_v * b0)), len(selected)
    if pair.kind == "input-pair":
        if b_i is None or b_i <= 0:
            raise ValueError("input pairs need the positive input scale b_i")
        s = pair.T1 - pair.seq.model.p
        x = _induced_output_difference(pair, T2)
        shifted_idx = [s + k for k in selected if 1 <= s + k <= T2]
        total = sum(max(float(x[k - 1]), 0.0) for k in shifted_idx)
        return float(total / b0 - pair.delta_adj / b_i), len(shifted_idx)
    raise ValueError(f"unknown pair kind {pair.kind!r}")


def single_index_event(pair: AdjacentPair, b0: float, T2: int) -> SingleIndexEvent:
    """Exact event probabilities at the last selected index within ``T2``.

    The event "released output at that index is at most its base value" has
    probability exactly 1/2 under the base sequence and
    ``exp(-shift / b0) / 2`` under the shifted one; privacy at level
    ``epsilon`` is contradicted as soon as ``shift / b0 > epsilon``.
    """
    if pair.kind != "output-pair":
        raise ValueError("the single-index event is defined for output pairs")
    if b0 <= 0:
        raise ValueError("output scale must be positive")
    D, selected = _extended_probe(pair.seq, T2)
    if not selected:
        raise ConstructionError("no selected index within the horizon")
    k_star = selected[-1]
    shift = float(pair.delta_adj * D[k_star - 1] / pair.norm_v)
    if shift < 0:
        raise ConstructionError("selected index carries a negative shift")
    return SingleIndexEvent(
        index=k_star,
        shift=shift,
        p_base=0.5,
        p_shifted=0.5 * math.exp(-shift / b0),
        log_ratio=shift / b0,
    )


def single_index_crossing(pair: AdjacentPair, b0: float, epsilon: float,
                          max_T2: int) -> int:
    """Smallest horizon at which the single-index event alone refutes
    ``epsilon``-privacy, i.e. its likelihood-ratio exponent reaches
    ``epsilon``.  Raises :class:`ConstructionError` when no horizon up to
    ``max_T2`` suffices."""
    if epsilon <= 0:
        raise ValueError("privacy level must be positive")
    D, selected = _extended_probe(pair.seq, max_T2)
    for k in selected:
        shift = float(pair.delta_adj * D[k - 1] / pair.norm_v)
        if shift / b0 >= epsilon:
            return max(k, pair.T1)
    raise ConstructionError(
        f"no single selected index reaches exponent {epsilon} within {max_T2} steps"
    )


def required_index_count(pair: AdjacentPair, b0: float, epsilon: float) -> int:
    """Conservative number of selected indices that certifies separation.

    Each selected index contributes at least ``2 gamma delta_adj /
    (||v||_1 b0)`` to the exponent (the probe magnitude is at least
    ``2 gamma`` there whenever ``r >= 1``), so
    ``ceil(||v||_1 b0 epsilon / (2 delta_adj gamma))`` indices guarantee the
    exponent exceeds ``epsilon`` regardless of the growth rate.
    """
    if b0 <= 0 or epsilon <= 0:
        raise ValueError("scale and privacy level must be positive")
    if pair.seq.r < 1.0 - 1e-12:
        raise ConstructionError("count bound needs a non-decaying probe (r >= 1)")
    bound = pair.norm_v * b0 * epsilon / (2.0 * pair.delta_adj * pair.seq.gamma)
    return int(math.ceil(bound - 1e-12))
