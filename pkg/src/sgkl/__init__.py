"""Narrowband spectral-kernel dictionary learning for graph signal interpolation.

Learns a bank of Gaussian kernels in the graph frequency domain jointly with
sparse representation coefficients from partially observed signals on one or
more graphs, then fills in the missing entries (transductively on the
training signals or inductively on new ones).
"""

from .coder import (
    AdmmConfig,
    AdmmState,
    SweepBundle,
    soft_threshold,
    solve_signal_coefficients,
    sweep_coefficients,
)
from .errors import ConfigError, DataFormatError, NumericalError, SgklError
from .graphs import (
    Graph,
    ObservedSignalSet,
    SignalGraphLaplacian,
    SpectralDecomposition,
    build_knn_graph,
    build_signal_graph,
    eigendecompose,
    graph_spectrum,
    median_pairwise_scale,
    normalized_laplacian,
)
from .kernel_opt import (
    DescentConfig,
    GraphFitData,
    KernelPrior,
    descend,
    gradient_psi,
    objective_psi,
)
from .kernels import (
    Dictionary,
    KernelParams,
    build_dictionary,
    eval_kernel,
    kernel_param_jacobian,
)
from .learner import (
    GraphDataset,
    SgklConfig,
    SgklModel,
    fit,
    infer_inductive,
    reconstruct,
    total_objective,
)
from .synthetic import (
    PsiDistribution,
    SyntheticSpec,
    apply_mask,
    generate_synthetic,
    mean_fill,
    nmse,
)

__version__ = "0.1.0"

__all__ = [
    "AdmmConfig",
    "AdmmState",
    "ConfigError",
    "DataFormatError",
    "DescentConfig",
    "Dictionary",
    "Graph",
    "GraphDataset",
    "GraphFitData",
    "KernelParams",
    "KernelPrior",
    "NumericalError",
    "ObservedSignalSet",
    "PsiDistribution",
    "SgklConfig",
    "SgklError",
    "SgklModel",
    "SignalGraphLaplacian",
    "SpectralDecomposition",
    "SweepBundle",
    "SyntheticSpec",
    "apply_mask",
    "build_dictionary",
    "build_knn_graph",
    "build_signal_graph",
    "descend",
    "eigendecompose",
    "eval_kernel",
    "fit",
    "generate_synthetic",
    "gradient_psi",
    "graph_spectrum",
    "infer_inductive",
    "kernel_param_jacobian",
    "mean_fill",
    "median_pairwise_scale",
    "nmse",
    "normalized_laplacian",
    "objective_psi",
    "reconstruct",
    "soft_threshold",
    "solve_signal_coefficients",
    "sweep_coefficients",
    "total_objective",
]
