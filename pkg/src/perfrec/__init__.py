"""Dynamic liver perfusion simulation, reconstruction and evaluation."""

from .errors import (
    ConfigurationError,
    DomainError,
    FormatError,
    InputError,
    PerfrecError,
    ShapeError,
    UnderdeterminedError,
)
from .phantom import (
    DynamicPhantom,
    PhantomConfig,
    TAC,
    TACModel,
    Tissue,
    build_phantom,
    eval_tac,
    load_phantom,
    sample_volume,
    save_phantom,
)
from .projector import (
    Geometry,
    ScanProtocol,
    TimedSinogram,
    back_project,
    forward_project,
    load_sinogram,
    make_protocol,
    project_dynamic,
    save_sinogram,
    system_matrix,
)
from .recon import (
    ReconConfig,
    Volume,
    reconstruct_static,
    reconstruct_sweeps,
)
from .tst import (
    BasisSet,
    CoefficientVolumes,
    PerfusionMaps,
    ProjectionCoefficients,
    evaluate_basis,
    first_coeff_image,
    fit_projection_coeffs,
    harmonic_basis,
    load_basis,
    perfusion_surrogates,
    reconstruct_coeff_volumes,
    save_basis,
    svd_basis,
    synthesize_tac,
    synthesize_tacs,
    tst_reconstruct,
)
from .segeval import (
    ConfusionCounts,
    MetricsReport,
    UTestResult,
    confusion_counts,
    largest_component,
    mann_whitney_u,
    metrics,
    summarize,
)
from .datasetgen import (
    DatasetManifest,
    SuiteConfig,
    generate_suite,
    inject_artifact_slices,
    load_manifest,
    make_folds,
    make_tac_library,
    save_manifest,
)
from .tensorio import read_tensor, write_tensor

__version__ = "0.1.0"

__all__ = [
    "BasisSet",
    "CoefficientVolumes",
    "ConfigurationError",
    "ConfusionCounts",
    "DatasetManifest",
    "DomainError",
    "DynamicPhantom",
    "FormatError",
    "Geometry",
    "InputError",
    "MetricsReport",
    "PerfrecError",
    "PerfusionMaps",
    "PhantomConfig",
    "ProjectionCoefficients",
    "ReconConfig",
    "ScanProtocol",
    "ShapeError",
    "SuiteConfig",
    "TAC",
    "TACModel",
    "TimedSinogram",
    "Tissue",
    "UTestResult",
    "UnderdeterminedError",
    "Volume",
    "back_project",
    "build_phantom",
    "confusion_counts",
    "eval_tac",
    "evaluate_basis",
    "first_coeff_image",
    "fit_projection_coeffs",
    "forward_project",
    "generate_suite",
    "harmonic_basis",
    "inject_artifact_slices",
    "largest_component",
    "load_basis",
    "load_manifest",
    "load_phantom",
    "load_sinogram",
    "make_folds",
    "make_protocol",
    "make_tac_library",
    "mann_whitney_u",
    "metrics",
    "perfusion_surrogates",
    "project_dynamic",
    "read_tensor",
    "reconstruct_coeff_volumes",
    "reconstruct_static",
    "reconstruct_sweeps",
    "sample_volume",
    "save_basis",
    "save_manifest",
    "save_phantom",
    "save_sinogram",
    "summarize",
    "svd_basis",
    "synthesize_tac",
    "synthesize_tacs",
    "system_matrix",
    "tst_reconstruct",
    "write_tensor",
]
