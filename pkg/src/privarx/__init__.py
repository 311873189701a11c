"""Differentially private recursive identification of multi-participant
ARX systems.

The pipeline: participants' input signals and the shared output are released
through a Laplace mechanism whose scales are calibrated from a stability
certificate of the feedback polynomial; a recursive least-squares estimator
runs on the released signals; explicit, computable error bounds tie the
estimate accuracy to the privacy scales and the excitation level; and an
adversary construction shows the calibration is impossible precisely when
the feedback is not asymptotically stable.

Modules
-------
``model``      system representation, simulation, regressor construction
``stability``  root/spectral-radius certificates and decay envelopes
``privacy``    amplification constants, Laplace mechanism, scale calibration
``estimator``  recursive least squares, excitation diagnostics, error bounds
``design``     noise-scale design (accuracy objective under privacy floors)
``adversary``  distinguishing constructions for unstable feedback
``harness``    end-to-end experiments, sweeps, benchmarks, persistence
``figures``    PNG rendering alongside the CSV artifacts
``cli``        ``privarx`` command-line entry point
"""
from .model import (
    ArxModel,
    Trajectory,
    continue_homogeneous,
    regressor_matrix,
    regressor_of,
    simulate,
)
from .stability import StabilityCertificate, certify, companion_matrix, feedback_roots
from .privacy import (
    CalibrationError,
    CoefficientBounds,
    PerturbedTrajectory,
    PrivacyConstants,
    PrivacySpec,
    calibrate_all,
    calibrate_b0,
    constants,
    laplace_sample,
    perturb,
    privacy_loss_input,
    privacy_loss_output,
)
from .estimator import (
    ErrorBound,
    ExcitationReport,
    NumericalBreakdownError,
    RlsState,
    batch_oracle,
    error_bound_basic,
    error_bound_refined,
    excitation,
    init,
    logdet_gain_check,
    noise_energy,
    step,
)
from .design import (
    NoiseDesignProblem,
    NoiseDesignSolution,
    SearchBox,
    bounding_box,
    feasible,
    objective,
    optimize,
)
from .adversary import (
    AdjacentPair,
    ConstructionError,
    ResonantSequence,
    SingleIndexEvent,
    adjacent_input_pair,
    adjacent_output_pair,
    distinguishing_ratio,
    required_index_count,
    resonant_sequence,
    single_index_crossing,
    single_index_event,
)
from .harness import (
    ConfigError,
    ExperimentConfig,
    InputLaw,
    NoiseLaw,
    PrivacyPolicy,
    RunRecord,
    SweepResult,
    config_from_dict,
    reproduce_example1,
    reproduce_example2,
    run,
    seed_streams,
    sweep,
)

__version__ = "0.1.0"

__all__ = [
    "ArxModel", "Trajectory", "continue_homogeneous", "regressor_matrix",
    "regressor_of", "simulate",
    "StabilityCertificate", "certify", "companion_matrix", "feedback_roots",
    "CalibrationError", "CoefficientBounds", "PerturbedTrajectory",
    "PrivacyConstants", "PrivacySpec", "calibrate_all", "calibrate_b0",
    "constants", "laplace_sample", "perturb", "privacy_loss_input",
    "privacy_loss_output",
    "ErrorBound", "ExcitationReport", "NumericalBreakdownError", "RlsState",
    "batch_oracle", "error_bound_basic", "error_bound_refined", "excitation",
    "init", "logdet_gain_check", "noise_energy", "step",
    "NoiseDesignProblem", "NoiseDesignSolution", "SearchBox", "bounding_box",
    "feasible", "objective", "optimize",
    "AdjacentPair", "ConstructionError", "ResonantSequence",
    "SingleIndexEvent", "adjacent_input_pair", "adjacent_output_pair",
    "distinguishing_ratio", "required_index_count", "resonant_sequence",
    "single_index_crossing",
    "single_index_event",
    "ConfigError", "ExperimentConfig", "InputLaw", "NoiseLaw",
    "PrivacyPolicy", "RunRecord", "SweepResult", "config_from_dict",
    "reproduce_example1", "reproduce_example2", "run", "seed_streams",
    "sweep",
    "__version__",
]
