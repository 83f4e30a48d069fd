"""Linear decomposition of sequence-embedding models.

Fits one model's sequence embeddings as a matrix-weighted linear
combination of other models' embeddings, in closed form from streaming
moment statistics, and reports R2 dependency and rho correlation
metrics for model pairs, leave-one-out groups and sequence-length
sweeps.
"""

from ._kernels import available_backends, get_backend, use_backend
from .errors import (
    AlignmentError,
    ConfigError,
    CorruptionError,
    DegenerateTargetError,
    DimensionError,
    EmptyAccumulatorError,
    FormatError,
    LmdkitError,
    RankDeficiencyError,
    ValidationError,
)
from .metrics import (
    CorrelationReport,
    DatasetGroup,
    FitReport,
    SweepReport,
    evaluate_r2,
    fit_datasets,
    group_analysis,
    length_sweep,
    pairwise_analysis,
)
from .moments import MomentAccumulator, MomentSummary, accumulate
from .solver import (
    DependenceVerdict,
    LmdSolution,
    SolverConfig,
    check_linear_dependence,
    loss_and_gradient,
    solve,
)
from .store import (
    AlignedView,
    DatasetManifest,
    EmbeddingDataset,
    align_datasets,
    iter_chunks,
    l2_normalized,
    read_dataset,
    read_manifest,
    write_dataset,
)
from .synth import (
    Affine,
    GroundTruth,
    PermuteRows,
    Scale,
    SynthSpec,
    expected_noisy_r2,
    generate,
    perturb,
    sigma_for_expected_r2,
)

__version__ = "0.1.0"

__all__ = [
    "AlignedView",
    "Affine",
    "AlignmentError",
    "ConfigError",
    "CorrelationReport",
    "CorruptionError",
    "DatasetGroup",
    "DatasetManifest",
    "DegenerateTargetError",
    "DependenceVerdict",
    "DimensionError",
    "EmbeddingDataset",
    "EmptyAccumulatorError",
    "FitReport",
    "FormatError",
    "GroundTruth",
    "LmdSolution",
    "LmdkitError",
    "MomentAccumulator",
    "MomentSummary",
    "PermuteRows",
    "RankDeficiencyError",
    "Scale",
    "SolverConfig",
    "SweepReport",
    "SynthSpec",
    "ValidationError",
    "accumulate",
    "align_datasets",
    "available_backends",
    "check_linear_dependence",
    "evaluate_r2",
    "expected_noisy_r2",
    "fit_datasets",
    "generate",
    "get_backend",
    "group_analysis",
    "iter_chunks",
    "l2_normalized",
    "length_sweep",
    "loss_and_gradient",
    "pairwise_analysis",
    "perturb",
    "read_dataset",
    "read_manifest",
    "sigma_for_expected_r2",
    "solve",
    "use_backend",
    "write_dataset",
]
