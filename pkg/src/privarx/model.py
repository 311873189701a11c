"""Multi-participant ARX system model and exact trajectory simulation.

The system relates one scalar output to ``m`` exogenous input channels, one per
participant::

    y[k+1] = a_1 y[k] + ... + a_p y[k+1-p]
             + sum_i ( b_{i,1} u_i[k] + ... + b_{i,q_i} u_i[k+1-q_i] )
             + w[k+1]

with zero history: ``y[k] = 0`` and ``u_i[k] = 0`` for ``k <= 0``.  The stacked
coefficient vector is ``theta = [a_1..a_p, b_{1,1}..b_{1,q_1}, ...,
b_{m,1}..b_{m,q_m}]`` and the matching regressor at step ``k`` is
``phi[k] = [y[k]..y[k+1-p], u_1[k]..u_1[k+1-q_1], ...]`` so that
``y[k+1] = theta . phi[k] + w[k+1]`` exactly.

Everything in this module is pure and deterministic; random signal generation
lives in the experiment harness.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ArxModel",
    "Trajectory",
    "regressor_of",
    "regressor_matrix",
    "simulate",
    "continue_homogeneous",
]


@dataclass(frozen=True)
class ArxModel:
    """Immutable description of a multi-participant ARX system.

    Parameters
    ----------
    a:
        Output-feedback coefficients ``(a_1, ..., a_p)``; ``p = len(a)`` may
        be zero (pure feed-through system).
    b:
        Per-participant input coefficients; ``b[i]`` holds
        ``(b_{i,1}, ..., b_{i,q_i})`` and must be non-empty.
    """

    a: tuple[float, ...]
    b: tuple[tuple[float, ...], ...]

    def __init__(self, a, b):
        object.__setattr__(self, "a", tuple(float(x) for x in a))
        object.__setattr__(self, "b", tuple(tuple(float(x) for x in bi) for bi in b))
        if len(self.b) < 1:
            raise ValueError("at least one input participant is required")
        for i, bi in enumerate(self.b):
            if len(bi) < 1:
                raise ValueError(f"participant {i} has an empty coefficient list")
        if self.n < 1:
            raise ValueError("parameter dimension must be at least 1")

    @property
    def p(self) -> int:
        """Output-regression order."""
        return len(self.a)

    @property
    def m(self) -> int:
        """Number of input participants."""
        return len(self.b)

    @property
    def q(self) -> tuple[int, ...]:
        """Input orders ``(q_1, ..., q_m)``."""
        return tuple(len(bi) for bi in self.b)

    @property
    def n(self) -> int:
        """Stacked parameter dimension ``p + sum(q)``."""
        return self.p + sum(self.q)

    @property
    def theta(self) -> np.ndarray:
        """Stacked coefficient vector ``[a, b_1, ..., b_m]``."""
        return np.concatenate([np.asarray(self.a, dtype=float)]
                              + [np.asarray(bi, dtype=float) for bi in self.b])


@dataclass(frozen=True)
class Trajectory:
    """One realized input/output path of an :class:`ArxModel`.

    Arrays use 0-based storage: ``y[j]`` holds output step ``j+1`` (steps
    ``1..T``), ``u[i][j]`` holds input step ``j`` (steps ``0..T-1``) and
    ``w[j]`` holds system-noise step ``j+1``.
    """

    y: np.ndarray
    u: tuple[np.ndarray, ...]
    w: np.ndarray

    def __init__(self, y, u, w):
        object.__setattr__(self, "y", np.asarray(y, dtype=float))
        object.__setattr__(self, "u", tuple(np.asarray(ui, dtype=float) for ui in u))
        object.__setattr__(self, "w", np.asarray(w, dtype=float))
        T = self.y.shape[0]
        for ui in self.u:
            if ui.shape[0] != T:
                raise ValueError("input sequences must match the output horizon")
        if self.w.shape[0] != T:
            raise ValueError("noise sequence must match the output horizon")

    @property
    def horizon(self) -> int:
        return int(self.y.shape[0])


def _output_at(y: np.ndarray, step: int) -> float:
    """Output value at time index ``step`` with the zero-history convention."""
    if step <= 0:
        return 0.0
    return float(y[step - 1])


def _input_at(ui: np.ndarray, step: int) -> float:
    """Input value at time index ``step`` with the zero-history convention."""
    if step < 0:
        return 0.0
    return float(ui[step])


def regressor_of(traj: Trajectory, model: ArxModel, k: int) -> np.ndarray:
    """Regressor vector ``phi[k]`` of a trajectory.

    Parameters
    ----------
    traj:
        Source signals (any object with ``y`` and ``u`` arrays laid out like
        :class:`Trajectory`, e.g. a perturbed copy).
    model:
        Supplies the orders ``p`` and ``q_i`` only.
    k:
        Step index, ``0 <= k < T``.

    Returns
    -------
    numpy.ndarray
        ``[y[k], ..., y[k+1-p], u_1[k], ..., u_1[k+1-q_1], ...]`` with
        out-of-range history replaced by zeros.
    """
    T = traj.y.shape[0]
    if not 0 <= k < T:
        raise IndexError(f"step index {k} outside the horizon [0, {T})")
    phi = np.empty(model.n, dtype=float)
    pos = 0
    for j in range(model.p):
        phi[pos] = _output_at(traj.y, k - j)
        pos += 1
    for i, qi in enumerate(model.q):
        ui = traj.u[i]
        for j in range(qi):
            phi[pos] = _input_at(ui, k - j)
            pos += 1
    return phi


def regressor_matrix(traj: Trajectory, model: ArxModel) -> np.ndarray:
    """All regressors of a trajectory stacked as a ``(T, n)`` matrix.

    Vectorized equivalent of calling :func:`regressor_of` for every step;
    used by the estimator driver where per-call overhead matters.
    """
    T = traj.y.shape[0]
    cols: list[np.ndarray] = []
    # Output column j holds y[k-j]; output step s >= 1 lives at storage
    # index s-1, so col[k] = y_storage[k-j-1] wherever that index exists.
    for j in range(model.p):
        col = np.zeros(T)
        lo = j + 1
        if T > lo:
            col[lo:] = traj.y[: T - lo]
        cols.append(col)
    for i, qi in enumerate(model.q):
        ui = traj.u[i]
        for j in range(qi):
            col = np.zeros(T)
            if T > j:
                col[j:] = ui[: T - j]
            cols.append(col)
    if not cols:
        return np.zeros((T, 0))
    return np.stack(cols, axis=1)


def simulate(model: ArxModel, inputs, noise, T: int) -> Trajectory:
    """Run the exact recursion for ``T`` steps.

    Parameters
    ----------
    model:
        System coefficients.
    inputs:
        ``m`` sequences of length at least ``T`` (input steps ``0..T-1``).
    noise:
        System-noise sequence of length at least ``T`` (steps ``1..T``).
    T:
        Horizon; ``T == 0`` yields an empty trajectory.

    Returns
    -------
    Trajectory
        Satisfies ``y[k+1] = theta . phi[k] + w[k+1]`` exactly at every step.
    """
    if T < 0:
        raise ValueError("horizon must be non-negative")
    if len(inputs) != model.m:
        raise ValueError(f"expected {model.m} input sequences, got {len(inputs)}")
    u = []
    for i, ui in enumerate(inputs):
        ui = np.asarray(ui, dtype=float)
        if ui.shape[0] < T:
            raise ValueError(f"input sequence {i} shorter than the horizon")
        u.append(ui[:T].copy())
    w = np.asarray(noise, dtype=float)
    if w.shape[0] < T:
        raise ValueError("noise sequence shorter than the horizon")
    w = w[:T].copy()

    # Input contribution to step k+1 is a causal convolution of each input
    # channel with its coefficient taps; the zero-history convention is the
    # natural truncation of the full convolution.
    drive = w.copy()
    for i, bi in enumerate(model.b):
        if T:
            drive += np.convolve(u[i], np.asarray(bi, dtype=float))[:T]

    y = np.zeros(T)
    a = model.a
    p = model.p
    if p == 0:
        y[:] = drive
    else:
        for k in range(T):
            s = drive[k]
            for j in range(1, p + 1):
                idx = k - j
                if idx >= 0:
                    s += a[j - 1] * y[idx]
            y[k] = s
    return Trajectory(y=y, u=tuple(u), w=w)


def continue_homogeneous(model: ArxModel, prefix, T: int) -> np.ndarray:
    """Propagate an output deviation forward with no further forcing.

    Given a deviation imposed on output steps ``1..len(prefix)``, returns the
    length-``T`` deviation sequence whose later steps follow the pure
    feedback recursion ``d[k+1] = a_1 d[k] + ... + a_p d[k+1-p]``.  This is
    exactly the output difference between two trajectories that share inputs
    and noise but differ by ``prefix`` on an initial segment — the quantity
    the output-perturbation privacy analysis bounds.

    Parameters
    ----------
    prefix:
        Deviation on steps ``1..T1`` (0-based array of length ``T1 <= T``).
    T:
        Total length of the returned deviation sequence.
    """
    prefix = np.asarray(prefix, dtype=float)
    T1 = prefix.shape[0]
    if T1 > T:
        raise ValueError("prefix longer than the requested horizon")
    d = np.zeros(T)
    d[:T1] = prefix
    a = model.a
    p = model.p
    if p == 0:
        return d
    for k in range(T1, T):
        s = 0.0
        for j in range(1, p + 1):
            idx = k - j
            if idx >= 0:
                s += a[j - 1] * d[idx]
        d[k] = s
    return d
