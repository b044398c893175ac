"""Model-agnostic uncertainty propagation for two-modality black-box predictors.

Estimate image-only, text-only, and joint output variances by seeded
resampling, fit a no-intercept linear propagation model over them, and run
the downstream analyses: calibration, coefficient ANOVA, resample-size
sweeps, redundancy detection, modality ablation, and derivative probes.
"""

from .analysis import (
    AblationResult,
    DerivativeProbeResult,
    RedundancyReport,
    SweepResult,
    ablate_all,
    ablate_modality,
    detect_redundancy,
    probe_derivatives,
    sweep_resample_size,
)
from .calibration import (
    AnovaResult,
    CalibrationReport,
    anova_oneway,
    coefficient_anova,
    confidence_map,
    ece,
    kfold_split,
)
from .config import RunConfig, load_config, save_config
from .data import InputPair, OutputVector, load_dataset, save_dataset
from .errors import MupmError
from .estimation import (
    EstimationConfig,
    UncertaintyRecord,
    benchmark_overall,
    estimate_dataset,
    estimate_sample,
    read_records,
    run_branch,
    sample_variance,
    write_records,
)
from .models import (
    HttpAdapter,
    ModelSpec,
    ReplayAdapter,
    SyntheticAdapter,
    build_adapter,
    export_manifest,
    import_outputs,
    manifest_entries,
)
from .perturb import (
    PerturbationSpec,
    injected_output_correlation,
    latent_for_output_correlation,
    perturb_branch,
    perturb_image,
    perturb_joint,
    perturb_text,
)
from .regression import (
    MupmFit,
    build_design,
    fit_ols,
    fit_records,
    predict_overall,
    r_squared,
)

__version__ = "0.1.0"

__all__ = [
    "AblationResult",
    "AnovaResult",
    "CalibrationReport",
    "DerivativeProbeResult",
    "EstimationConfig",
    "HttpAdapter",
    "InputPair",
    "ModelSpec",
    "MupmError",
    "MupmFit",
    "OutputVector",
    "PerturbationSpec",
    "RedundancyReport",
    "ReplayAdapter",
    "RunConfig",
    "SweepResult",
    "SyntheticAdapter",
    "UncertaintyRecord",
    "ablate_all",
    "ablate_modality",
    "anova_oneway",
    "benchmark_overall",
    "build_adapter",
    "build_design",
    "coefficient_anova",
    "confidence_map",
    "detect_redundancy",
    "ece",
    "estimate_dataset",
    "estimate_sample",
    "export_manifest",
    "fit_ols",
    "fit_records",
    "import_outputs",
    "injected_output_correlation",
    "kfold_split",
    "latent_for_output_correlation",
    "load_config",
    "load_dataset",
    "manifest_entries",
    "perturb_branch",
    "perturb_image",
    "perturb_joint",
    "perturb_text",
    "predict_overall",
    "probe_derivatives",
    "r_squared",
    "read_records",
    "run_branch",
    "sample_variance",
    "save_config",
    "save_dataset",
    "sweep_resample_size",
    "write_records",
]
