"""End-to-end experiment orchestration.

One experiment = simulate the true system, release the signals through the
Laplace mechanism, run the recursive estimator on the released data, and
record the estimate-error trajectory plus excitation diagnostics.  Runs are
deterministic per seed (independent counter-based noise streams per source),
execute in parallel over seeds, and persist fixed-column CSV traces.

The bundled reference benchmarks pin the amplification constants and trend
behavior of two concrete three-participant systems; `reproduce_example1`
recomputes the constants against their frozen reference values and
`reproduce_example2` repeats the privacy-level sweep on the second system.
"""
from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import estimator
from .design import NoiseDesignProblem, optimize
from .model import ArxModel, Trajectory, regressor_matrix, simulate
from .privacy import (
    CalibrationError,
    CoefficientBounds,
    PrivacyConstants,
    PrivacySpec,
    calibrate_all,
    calibrate_b0,
    constants,
    perturb,
)
from .stability import StabilityCertificate, certify

__all__ = [
    "ConfigError",
    "InputLaw",
    "NoiseLaw",
    "PrivacyPolicy",
    "ExperimentConfig",
    "RunRecord",
    "SweepResult",
    "EXAMPLE1_MODEL",
    "EXAMPLE2_MODEL",
    "REFERENCE_CONSTANTS",
    "model_from_dict",
    "privacy_from_dict",
    "config_from_dict",
    "resolve_privacy",
    "ResolvedPrivacy",
    "seed_streams",
    "run",
    "sweep",
    "reproduce_example1",
    "reproduce_example2",
    "write_run_csv",
    "write_summary_csv",
    "write_sweep_csv",
]

#: Trace CSV column contract (order is part of the format).
TRACE_COLUMNS = ("k", "err", "lambda_min_info", "r_k", "s_k", "gamma1_hat")

#: Environment variable overriding the worker count (1 forces serial).
WORKERS_ENV = "PRIVARX_WORKERS"


class ConfigError(ValueError):
    """Invalid experiment configuration."""


# --------------------------------------------------------------------------
# Reference benchmarks
# --------------------------------------------------------------------------

#: Benchmark 1: second-order feedback, three two-tap participants.
EXAMPLE1_MODEL = ArxModel(a=(-0.25, 0.375),
                          b=((1.0, 2.0), (3.0, 4.0), (5.0, 6.0)))

#: Benchmark 2: same feedback, different participant coefficients.
EXAMPLE2_MODEL = ArxModel(a=(-0.25, 0.375),
                          b=((2.0, 2.2), (1.5, 2.5), (2.4, 1.6)))

#: Frozen reference values for benchmark 1 (targets of `reproduce_example1`).
REFERENCE_CONSTANTS = {
    "c1": 7.864,
    "ci2": (23.594, 55.053, 86.512),
    "roots": (2.0, -4.0 / 3.0),
    "c0": 1.618,
    "decay": 0.75,
}


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class InputLaw:
    """Input-signal law of one participant: iid Gaussian, optionally silenced
    after a cutoff step (``sigma2 = 0`` means an all-zero input)."""

    sigma2: float = 1.0
    cutoff: int | None = None

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ConfigError("input variance must be non-negative")
        if self.cutoff is not None and self.cutoff < 0:
            raise ConfigError("input cutoff must be non-negative")


@dataclass(frozen=True)
class NoiseLaw:
    """System-noise law: iid Gaussian (``sigma2 = 0`` means noise-free)."""

    sigma2: float = 0.0

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ConfigError("system-noise variance must be non-negative")


@dataclass(frozen=True)
class PrivacyPolicy:
    """How the Laplace scales are determined.

    ``mode``:
      * ``"explicit"`` — use the given scales verbatim;
      * ``"calibrate"`` — certify stability, compute the amplification
        constants from declared coefficient bounds and split the budget
        (``output_only=True`` perturbs only the output stream);
      * ``"optimize"`` — solve the scale-design problem at ``gamma3``.
    """

    mode: str = "calibrate"
    b: tuple[float, ...] | None = None
    epsilon: float | None = None
    delta_adj: float | None = None
    rho: float = 0.5
    gamma3: float | None = None
    bounds: tuple[float, ...] | None = None
    output_only: bool = False

    def __post_init__(self):
        if self.mode not in ("explicit", "calibrate", "optimize"):
            raise ConfigError(f"unknown privacy mode {self.mode!r}")
        if self.mode == "explicit" and self.b is None:
            raise ConfigError("explicit privacy mode needs the scales 'b'")
        if self.mode in ("calibrate", "optimize"):
            if self.epsilon is None or self.delta_adj is None:
                raise ConfigError(f"{self.mode} mode needs epsilon and delta_adj")
        if self.mode == "optimize" and self.gamma3 is None:
            raise ConfigError("optimize mode needs gamma3")


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete description of one experiment."""

    model: ArxModel
    inputs: tuple[InputLaw, ...]
    noise: NoiseLaw
    privacy: PrivacyPolicy
    horizon: int
    seeds: tuple[int, ...]
    alpha: float = 1.0
    kappa: float = 1.1
    trace_points: int = 400
    outdir: str | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(self.inputs) != self.model.m:
            raise ConfigError("one input law per participant is required")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if self.trace_points < 2:
            raise ConfigError("at least two trace points are required")


def _require_mapping(obj, path: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected a mapping")
    return obj


def _check_keys(d: dict, allowed: set[str], path: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")


def model_from_dict(mdoc) -> ArxModel:
    """Parse and validate the ``model`` section (keys ``a`` and ``b``)."""
    mdoc = _require_mapping(mdoc, "model")
    _check_keys(mdoc, {"a", "b"}, "model")
    try:
        return ArxModel(a=mdoc.get("a", ()), b=mdoc.get("b", ()))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from exc


def privacy_from_dict(pdoc) -> PrivacyPolicy:
    """Parse and validate the ``privacy`` section."""
    pdoc = _require_mapping(pdoc, "privacy")
    _check_keys(pdoc, {"mode", "b", "epsilon", "delta_adj", "rho", "gamma3",
                       "bounds", "output_only"}, "privacy")
    return PrivacyPolicy(
        mode=pdoc.get("mode", "calibrate"),
        b=tuple(float(x) for x in pdoc["b"]) if "b" in pdoc else None,
        epsilon=(float(pdoc["epsilon"]) if "epsilon" in pdoc else None),
        delta_adj=(float(pdoc["delta_adj"]) if "delta_adj" in pdoc else None),
        rho=float(pdoc.get("rho", 0.5)),
        gamma3=(float(pdoc["gamma3"]) if "gamma3" in pdoc else None),
        bounds=(tuple(float(x) for x in pdoc["bounds"])
                if "bounds" in pdoc else None),
        output_only=bool(pdoc.get("output_only", False)),
    )


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Build a validated :class:`ExperimentConfig` from a parsed document.

    Unknown keys anywhere in the document are rejected (fail-fast), so a
    typo cannot silently fall back to a default.
    """
    doc = _require_mapping(doc, "config")
    _check_keys(doc, {"model", "inputs", "noise", "privacy", "horizon",
                      "seeds", "alpha", "kappa", "trace_points", "outdir",
                      "sweep", "attack"}, "config")

    model = model_from_dict(doc.get("model"))

    idoc = doc.get("inputs", {})
    if isinstance(idoc, dict):
        idoc = [idoc] * model.m
    if not isinstance(idoc, list) or len(idoc) != model.m:
        raise ConfigError("inputs: provide one mapping, or one per participant")
    laws = []
    for j, law in enumerate(idoc):
        law = _require_mapping(law, f"inputs[{j}]")
        _check_keys(law, {"sigma2", "cutoff"}, f"inputs[{j}]")
        laws.append(InputLaw(sigma2=float(law.get("sigma2", 1.0)),
                             cutoff=law.get("cutoff")))

    ndoc = _require_mapping(doc.get("noise", {}), "noise")
    _check_keys(ndoc, {"sigma2"}, "noise")
    noise = NoiseLaw(sigma2=float(ndoc.get("sigma2", 0.0)))

    privacy = privacy_from_dict(doc.get("privacy", {}))

    if "horizon" not in doc:
        raise ConfigError("config: 'horizon' is required")
    if "seeds" not in doc:
        raise ConfigError("config: 'seeds' is required")
    seeds = doc["seeds"]
    if isinstance(seeds, int):
        seeds = list(range(seeds))
    return ExperimentConfig(
        model=model,
        inputs=tuple(laws),
        noise=noise,
        privacy=privacy,
        horizon=int(doc["horizon"]),
        seeds=tuple(int(s) for s in seeds),
        alpha=float(doc.get("alpha", 1.0)),
        kappa=float(doc.get("kappa", 1.1)),
        trace_points=int(doc.get("trace_points", 400)),
        outdir=doc.get("outdir"),
    )


# --------------------------------------------------------------------------
# RNG streams
# --------------------------------------------------------------------------


def seed_streams(seed: int, m: int):
    """Independent counter-based generators for every noise source.

    Child order is fixed: system noise, output release noise, one release
    stream per input channel, one signal stream per input channel.  Distinct
    seeds and distinct sources never alias.
    """
    children = np.random.SeedSequence(seed).spawn(2 + 2 * m)
    gens = [np.random.Generator(np.random.Philox(c)) for c in children]
    return {
        "system": gens[0],
        "output": gens[1],
        "input_noise": gens[2:2 + m],
        "input_signal": gens[2 + m:2 + 2 * m],
    }


# --------------------------------------------------------------------------
# Privacy resolution
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ResolvedPrivacy:
    spec: PrivacySpec
    consts: PrivacyConstants | None
    cert: StabilityCertificate | None


def resolve_privacy(config: ExperimentConfig) -> ResolvedPrivacy:
    """Turn the privacy policy into concrete Laplace scales."""
    model = config.model
    pol = config.privacy
    if pol.mode == "explicit":
        eps = pol.epsilon if pol.epsilon is not None else 1.0
        d = pol.delta_adj if pol.delta_adj is not None else 1.0
        spec = PrivacySpec(epsilon=eps, delta_adj=d, b=pol.b)
        if len(spec.input_scales) != model.m:
            raise ConfigError("explicit scales must cover every input channel")
        return ResolvedPrivacy(spec=spec, consts=None, cert=None)

    cert = certify(model)
    if not cert.stable:
        raise CalibrationError(
            "the configured system is not asymptotically stable, so no "
            "Laplace scale meets the privacy target: an adversary can "
            "amplify an adjacent perturbation without bound through the "
            "feedback (see the attack-demo subcommand)"
        )
    bounds_vals = pol.bounds
    if bounds_vals is None:
        bounds_vals = tuple(sum(abs(x) for x in bi) for bi in model.b)
    if len(bounds_vals) != model.m:
        raise ConfigError("one coefficient bound per participant is required")
    consts = constants(cert, model.p, CoefficientBounds(bounds_vals))

    if pol.mode == "calibrate":
        if pol.output_only:
            b0 = calibrate_b0(consts, pol.epsilon, pol.delta_adj)
            spec = PrivacySpec(epsilon=pol.epsilon, delta_adj=pol.delta_adj,
                               b=(b0,) + (0.0,) * model.m)
        else:
            spec = calibrate_all(consts, pol.epsilon, pol.delta_adj, pol.rho)
        return ResolvedPrivacy(spec=spec, consts=consts, cert=cert)

    problem = NoiseDesignProblem(p=model.p, q=model.q, gamma3=pol.gamma3,
                                 epsilon=pol.epsilon, delta_adj=pol.delta_adj,
                                 consts=consts)
    solution = optimize(problem)
    spec = PrivacySpec(epsilon=pol.epsilon, delta_adj=pol.delta_adj,
                       b=solution.b_star)
    return ResolvedPrivacy(spec=spec, consts=consts, cert=cert)


# --------------------------------------------------------------------------
# Single-seed execution
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RunRecord:
    """Trace and summary of one seeded run.

    ``rows`` is a ``(checkpoints, 6)`` float array in `TRACE_COLUMNS` order;
    the summary holds the final values, the scales used, the amplification
    constants when available, the closed-form error bound evaluated at the
    run's own information-floor estimate, wall time, and a failure marker if
    the recursion broke down (the trace then covers the completed prefix).
    """

    seed: int
    rows: np.ndarray
    summary: dict


def _checkpoints(T: int, points: int) -> np.ndarray:
    ks = np.unique(np.round(np.geomspace(1, T, min(points, T))).astype(np.int64))
    return ks


def _run_single(config: ExperimentConfig, seed: int) -> RunRecord:
    t0 = time.perf_counter()
    model = config.model
    T = config.horizon
    streams = seed_streams(seed, model.m)

    u = []
    for i, law in enumerate(config.inputs):
        sig = streams["input_signal"][i].normal(0.0, math.sqrt(law.sigma2), T) \
            if law.sigma2 > 0 else np.zeros(T)
        if law.cutoff is not None:
            sig[law.cutoff:] = 0.0
        u.append(sig)
    w = streams["system"].normal(0.0, math.sqrt(config.noise.sigma2), T) \
        if config.noise.sigma2 > 0 else np.zeros(T)

    traj = simulate(model, u, w, T)
    resolved = resolve_privacy(config)
    released = perturb(traj, resolved.spec,
                       [streams["output"]] + streams["input_noise"])

    theta_true = model.theta
    phi_true = regressor_matrix(traj, model)
    phi_bar = regressor_matrix(released, model)
    dev = (phi_true - phi_bar) @ theta_true
    s_running = np.cumsum(dev * dev)

    state = estimator.init(model.n, config.alpha)
    marks = _checkpoints(T, config.trace_points)
    mark_set = np.zeros(T + 1, dtype=bool)
    mark_set[marks] = True
    rows = []
    failed = None
    y_bar = released.y
    for k in range(T):
        try:
            estimator.step(state, phi_bar[k], y_bar[k])
        except estimator.NumericalBreakdownError as exc:
            failed = str(exc)
            break
        kk = k + 1
        if mark_set[kk]:
            rep = estimator.excitation(state, config.kappa)
            err = float(np.linalg.norm(theta_true - state.theta))
            rows.append((kk, err, rep.lambda_min_info, state.r,
                         float(s_running[k]), rep.gamma1_hat))

    rows_arr = np.array(rows, dtype=float) if rows else np.zeros((0, 6))
    summary: dict = {
        "seed": seed,
        "final_k": int(state.k),
        "final_err": float(np.linalg.norm(theta_true - state.theta)),
        "theta_norm": float(np.linalg.norm(theta_true)),
        "b": tuple(resolved.spec.b),
        "epsilon": resolved.spec.epsilon,
        "delta_adj": resolved.spec.delta_adj,
        "failed": failed,
        "wall_time": time.perf_counter() - t0,
    }
    if resolved.consts is not None:
        summary["c1"] = resolved.consts.c1
        summary["ci2"] = tuple(resolved.consts.ci2)
    if state.k >= 1 and failed is None:
        rep = estimator.excitation(state, config.kappa)
        summary["gamma1_hat"] = rep.gamma1_hat
        summary["excitation_ratio"] = rep.ratio
        if rep.gamma1_hat > 0:
            summary["error_bound"] = estimator.error_bound_basic(
                summary["theta_norm"], model.p, model.q,
                resolved.spec.b, rep.gamma1_hat).value
    return RunRecord(seed=seed, rows=rows_arr, summary=summary)


def _worker(args) -> RunRecord:
    config, seed = args
    return _run_single(config, seed)


def _worker_count(n_tasks: int) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"{WORKERS_ENV} must be an integer") from exc
    return max(1, min(os.cpu_count() or 1, n_tasks))


def _pool_map(tasks) -> list[RunRecord]:
    tasks = list(tasks)
    workers = _worker_count(len(tasks))
    if workers > 1:
        try:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(_worker, tasks))
        except (OSError, RuntimeError):
            pass                      # restricted sandbox: fall back to serial
    return [_worker(t) for t in tasks]


def run(config: ExperimentConfig) -> list[RunRecord]:
    """Execute one run per configured seed (parallel over seeds).

    Results are ordered by position in ``config.seeds`` regardless of the
    execution backend, so aggregation is deterministic.
    """
    return _pool_map((config, s) for s in config.seeds)


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------

#: Expected direction of the seed-mean final error along each sweep axis:
#: +1 means the error may only grow with the axis value, -1 only shrink.
_SWEEP_DIRECTION = {"epsilon": -1, "delta_adj": +1, "sigma2": -1}


@dataclass(frozen=True)
class SweepResult:
    axis: str
    values: tuple[float, ...]
    records: tuple[tuple[RunRecord, ...], ...]
    mean_final_err: tuple[float, ...]
    inversions: int


def _apply_axis(config: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    if axis == "epsilon":
        return replace(config, privacy=replace(config.privacy, epsilon=float(value)))
    if axis == "delta_adj":
        return replace(config, privacy=replace(config.privacy, delta_adj=float(value)))
    if axis == "sigma2":
        laws = tuple(replace(law, sigma2=float(value)) for law in config.inputs)
        return replace(config, inputs=laws)
    raise ConfigError(f"unknown sweep axis {axis!r}")


def sweep(config: ExperimentConfig, axis: str, values) -> SweepResult:
    """Run the experiment across one axis and summarize the error ordering.

    ``inversions`` counts adjacent value pairs whose seed-mean final error
    moves against the expected monotone direction of the axis.
    """
    values = tuple(float(v) for v in values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    if axis not in _SWEEP_DIRECTION:
        raise ConfigError(f"unknown sweep axis {axis!r}")
    tasks = []
    for v in values:
        cfg_v = _apply_axis(config, axis, v)
        tasks.extend((cfg_v, s) for s in cfg_v.seeds)
    flat = _pool_map(tasks)
    n_seeds = len(config.seeds)
    grouped = tuple(tuple(flat[j * n_seeds:(j + 1) * n_seeds])
                    for j in range(len(values)))
    means = tuple(float(np.mean([r.summary["final_err"] for r in group]))
                  for group in grouped)
    direction = _SWEEP_DIRECTION[axis]
    inversions = 0
    for lo, hi in zip(means, means[1:]):
        if direction < 0 and hi > lo:
            inversions += 1
        if direction > 0 and hi < lo:
            inversions += 1
    return SweepResult(axis=axis, values=values, records=grouped,
                       mean_final_err=means, inversions=inversions)


# --------------------------------------------------------------------------
# Reference benchmarks
# --------------------------------------------------------------------------


def reproduce_example1() -> list[dict]:
    """Recompute benchmark 1's analytic constants against frozen references.

    Returns one row per quantity: name, computed value, reference value and
    relative deviation.
    """
    model = EXAMPLE1_MODEL
    cert = certify(model)
    bounds = CoefficientBounds(tuple(sum(abs(x) for x in bi) for bi in model.b))
    consts = constants(cert, model.p, bounds)
    ref = REFERENCE_CONSTANTS

    rows = []

    def add(name: str, computed: float, reference: float) -> None:
        rel = abs(computed - reference) / max(abs(reference), 1e-300)
        rows.append({"name": name, "computed": computed,
                     "reference": reference, "rel_dev": rel})

    add("c1", consts.c1, ref["c1"])
    for i, ci2 in enumerate(consts.ci2):
        add(f"c{i + 1}2", ci2, ref["ci2"][i])
    roots = sorted((z.real for z in cert.roots), reverse=True)
    for z, z_ref in zip(roots, sorted(ref["roots"], reverse=True)):
        add(f"root_{z_ref:g}", z, z_ref)
    add("c0", cert.c0, ref["c0"])
    add("decay", cert.decay, ref["decay"])
    return rows


def reproduce_example2(horizon: int = 20000, seeds=tuple(range(10)),
                       epsilons=(0.5, 1.0, 2.0, 4.0, 8.0)) -> SweepResult:
    """Privacy-level sweep on benchmark 2 (seed-mean error must not grow
    as the privacy level relaxes)."""
    config = ExperimentConfig(
        model=EXAMPLE2_MODEL,
        inputs=(InputLaw(sigma2=100.0),) * EXAMPLE2_MODEL.m,
        noise=NoiseLaw(sigma2=1.0),
        privacy=PrivacyPolicy(mode="calibrate", epsilon=0.5, delta_adj=1.0,
                              rho=0.5),
        horizon=horizon,
        seeds=tuple(seeds),
    )
    return sweep(config, "epsilon", epsilons)


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_run_csv(record: RunRecord, path) -> None:
    """Write one run's trace with the fixed column contract."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for row in record.rows:
            writer.writerow([str(int(row[0]))] + [repr(float(x)) for x in row[1:]])


def write_summary_csv(records: list[RunRecord], path) -> None:
    """Write the per-seed summaries (one row per seed)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = ["seed", "final_k", "final_err", "theta_norm", "epsilon",
            "delta_adj", "b", "c1", "gamma1_hat", "error_bound", "failed",
            "wall_time"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(keys)
        for rec in records:
            row = []
            for key in keys:
                val = rec.summary.get(key)
                if isinstance(val, tuple):
                    row.append(" ".join(_fmt(v) for v in val))
                elif val is None:
                    row.append("")
                else:
                    row.append(_fmt(val))
            writer.writerow(row)


def write_sweep_csv(result: SweepResult, path) -> None:
    """Write a sweep's final errors: one row per (value, seed) plus the
    seed-mean row per value (seed column = ``mean``)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([result.axis, "seed", "final_err"])
        for value, group in zip(result.values, result.records):
            for rec in group:
                writer.writerow([_fmt(value), str(rec.seed),
                                 repr(rec.summary["final_err"])])
            writer.writerow([_fmt(value), "mean",
                             repr(float(np.mean([r.summary["final_err"]
                                                 for r in group])))])
