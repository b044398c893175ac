"""Downstream analyses built on top of fitted propagation models.

Four applications: the resample-size efficiency sweep, redundancy detection
from coefficients and covariance contributions, modality ablation accuracy,
and a derivative-instability probe (exact Jacobians where available, central
differences otherwise).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from .data import InputPair
from .errors import EmptyInput, InvalidSpec, NonFiniteDifference, UnsupportedKind
from .estimation import (
    EstimationConfig,
    UncertaintyRecord,
    benchmark_overall,
    estimate_dataset,
)
from .models import ModelSpec, build_adapter
from .perturb import PerturbationSpec, perturb_branch
from .regression import MupmFit, build_design, predict_overall
from .rng import BRANCH_JOINT

DEFAULT_N_LIST = (2, 5, 8, 11, 14, 17, 20, 23)
ABLATION_MODES = ("image-only", "text-only", "both")

VERDICT_REDUNDANT = "redundant"
VERDICT_NOT_REDUNDANT = "not-redundant"
VERDICT_INCONCLUSIVE = "inconclusive"


def _resolve(model):
    return build_adapter(model) if isinstance(model, ModelSpec) else model


def _spread(values: np.ndarray) -> float:
    # identical values must report exactly zero spread despite fp summation
    if values.size < 2 or np.all(values == values[0]):
        return 0.0
    return float(values.std(ddof=1))


# -- resample-size sweep ------------------------------------------------------------

@dataclass
class SweepPoint:
    n: int
    mean_norm: float
    std_norm: float
    mean_abs_dev: float  # mean over samples of |predicted - benchmark| norms
    line_gap: float  # |mean predicted norm - mean benchmark norm|


@dataclass
class SweepResult:
    points: list[SweepPoint]
    benchmark_mean_norm: float
    benchmark_norms: list[float]
    reduction: str

    def validate(self) -> None:
        ns = [p.n for p in self.points]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise InvalidSpec("sweep n values must be strictly increasing")
        for p in self.points:
            stats = (p.mean_norm, p.std_norm, p.mean_abs_dev, p.line_gap)
            if any(not math.isfinite(s) or s < 0.0 for s in stats):
                raise InvalidSpec(f"non-finite or negative sweep stats at n={p.n}")


def prediction_norm(fit: MupmFit, record: UncertaintyRecord) -> float:
    return float(np.linalg.norm(predict_overall(fit, record).values))


def sweep_resample_size(
    model,
    dataset_subset: list[InputPair],
    pspec: PerturbationSpec,
    cfg: EstimationConfig,
    fit: MupmFit,
    n_list: tuple[int, ...] = DEFAULT_N_LIST,
    seed: int = 0,
    threads: int = 1,
) -> SweepResult:
    """Re-estimate at each n, predict overall uncertainty with one fixed fit.

    The benchmark is computed once from cfg and serves as the horizontal
    reference for every sweep point.
    """
    if not n_list:
        raise InvalidSpec("n_list must be non-empty")
    if any(n < 2 for n in n_list):
        raise InvalidSpec("sweep n values must be >= 2")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise InvalidSpec("sweep n values must be strictly increasing")
    adapter = _resolve(model)
    bench = benchmark_overall(adapter, dataset_subset, pspec, cfg, seed, threads=threads)
    bench_norms = np.array([float(np.linalg.norm(vec)) for vec in bench])
    points = []
    for n in n_list:
        cfg_n = replace(cfg, n_resamples=n, benchmark_repeats=max(cfg.benchmark_repeats, n))
        records = estimate_dataset(adapter, dataset_subset, pspec, cfg_n, seed, threads=threads)
        norms = np.array([prediction_norm(fit, rec) for rec in records])
        points.append(
            SweepPoint(
                n=int(n),
                mean_norm=float(norms.mean()),
                std_norm=_spread(norms),
                mean_abs_dev=float(np.abs(norms - bench_norms).mean()),
                line_gap=abs(float(norms.mean()) - float(bench_norms.mean())),
            )
        )
    result = SweepResult(
        points=points,
        benchmark_mean_norm=float(bench_norms.mean()),
        benchmark_norms=[float(v) for v in bench_norms],
        reduction=fit.reduction,
    )
    result.validate()
    return result


SWEEP_COLUMNS = ("n", "mean_norm", "std_norm", "mean_abs_dev", "line_gap")


def sweep_to_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for p in result.points:
        writer.writerow(
            [p.n, repr(p.mean_norm), repr(p.std_norm), repr(p.mean_abs_dev), repr(p.line_gap)]
        )
    return buf.getvalue()


def sweep_to_jsonable(result: SweepResult) -> dict:
    return {
        "reduction": result.reduction,
        "benchmark_mean_norm": result.benchmark_mean_norm,
        "benchmark_norms": result.benchmark_norms,
        "points": [
            {
                "n": p.n,
                "mean_norm": p.mean_norm,
                "std_norm": p.std_norm,
                "mean_abs_dev": p.mean_abs_dev,
                "line_gap": p.line_gap,
            }
            for p in result.points
        ],
    }


# -- redundancy detection -----------------------------------------------------------

@dataclass
class ModalityRedundancy:
    modality: str
    coefficient: float
    standardized_coefficient: float
    share: float
    verdict: str


@dataclass
class RedundancyReport:
    image: ModalityRedundancy
    text: ModalityRedundancy
    cov_contribution: float  # beta3 * mean(cov_term) in design units
    cov_contribution_std: float
    tau_beta: float
    tau_cov: float
    n_observations: int


def _rms(v: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(v)))) if v.size else 0.0


def detect_redundancy(
    fit: MupmFit,
    records: list[UncertaintyRecord],
    tau_beta: float = 0.05,
    tau_cov: float = 0.05,
) -> RedundancyReport:
    """Two-threshold redundancy rule on standardized regressors.

    A modality is redundant only when its standardized coefficient AND the
    standardized covariance contribution are both below threshold. A large
    coefficient alone settles the question (not-redundant); a small
    coefficient with an active covariance term is inconclusive, because the
    shared term cannot be attributed to one modality.
    """
    if tau_beta <= 0.0 or tau_cov <= 0.0:
        raise InvalidSpec("thresholds must be positive")
    if not records:
        zero = lambda name, b: ModalityRedundancy(  # noqa: E731
            modality=name,
            coefficient=float(b),
            standardized_coefficient=0.0,
            share=0.0,
            verdict=VERDICT_INCONCLUSIVE,
        )
        return RedundancyReport(
            image=zero("image", fit.beta1),
            text=zero("text", fit.beta2),
            cov_contribution=0.0,
            cov_contribution_std=0.0,
            tau_beta=tau_beta,
            tau_cov=tau_cov,
            n_observations=0,
        )
    x, y = build_design(records, fit.reduction)
    y_scale = _rms(y) or 1.0
    col_rms = [_rms(x[:, j]) for j in range(3)]
    std_coefs = [fit.beta[j] * col_rms[j] / y_scale for j in range(3)]
    weights = [abs(fit.beta[j]) * col_rms[j] for j in range(3)]
    total = sum(weights)
    shares = [w / total if total > 0.0 else 0.0 for w in weights]
    cov_raw = float(fit.beta3 * x[:, 2].mean())
    cov_std = std_coefs[2]
    cov_low = abs(cov_std) < tau_cov

    def classify(name: str, idx: int) -> ModalityRedundancy:
        coef_low = abs(std_coefs[idx]) < tau_beta
        if not coef_low:
            verdict = VERDICT_NOT_REDUNDANT
        elif cov_low:
            verdict = VERDICT_REDUNDANT
        else:
            verdict = VERDICT_INCONCLUSIVE
        return ModalityRedundancy(
            modality=name,
            coefficient=float(fit.beta[idx]),
            standardized_coefficient=float(std_coefs[idx]),
            share=float(shares[idx]),
            verdict=verdict,
        )

    return RedundancyReport(
        image=classify("image", 0),
        text=classify("text", 1),
        cov_contribution=cov_raw,
        cov_contribution_std=float(cov_std),
        tau_beta=tau_beta,
        tau_cov=tau_cov,
        n_observations=int(x.shape[0]),
    )


def redundancy_to_jsonable(report: RedundancyReport) -> dict:
    def one(m: ModalityRedundancy) -> dict:
        return {
            "coefficient": m.coefficient,
            "standardized_coefficient": m.standardized_coefficient,
            "share": m.share,
            "verdict": m.verdict,
        }

    return {
        "image": one(report.image),
        "text": one(report.text),
        "cov_contribution": report.cov_contribution,
        "cov_contribution_std": report.cov_contribution_std,
        "tau_beta": report.tau_beta,
        "tau_cov": report.tau_cov,
        "n_observations": report.n_observations,
    }


# -- modality ablation --------------------------------------------------------------

@dataclass
class ModeAblation:
    mode: str
    fold_accuracies: list[float]
    mean_accuracy: float
    std_accuracy: float
    overall_accuracy: float

    def validate(self) -> None:
        for a in [self.mean_accuracy, self.overall_accuracy] + self.fold_accuracies:
            if not 0.0 <= a <= 1.0:
                raise InvalidSpec("accuracy must lie in [0, 1]")


@dataclass
class AblationResult:
    modes: dict[str, ModeAblation]
    n_samples: int
    k_folds: int


def ablate_pair(
    pair: InputPair,
    mode: str,
    neutral_image: np.ndarray | None = None,
    neutral_text: tuple[int, ...] | None = None,
) -> InputPair:
    """Replace the removed modality with a neutral element; mode names the kept one."""
    if mode not in ABLATION_MODES:
        raise InvalidSpec(f"mode must be one of {ABLATION_MODES}")
    if mode == "both":
        return pair
    if mode == "image-only":
        text = neutral_text if neutral_text is not None else (0,) * len(pair.text)
        return InputPair(
            sample_id=pair.sample_id, image=pair.image, text=tuple(text), label=pair.label
        )
    image = neutral_image if neutral_image is not None else np.zeros_like(pair.image)
    return InputPair(
        sample_id=pair.sample_id, image=np.asarray(image, dtype=np.float64),
        text=pair.text, label=pair.label,
    )


def ablate_modality(
    model,
    dataset: list[InputPair],
    mode: str,
    folds: list[list[int]],
    neutral_image: np.ndarray | None = None,
    neutral_text: tuple[int, ...] | None = None,
) -> ModeAblation:
    """Per-fold argmax accuracy with one modality replaced by its neutral element."""
    if not dataset:
        raise EmptyInput("dataset is empty")
    if not folds or any(not fold for fold in folds):
        raise InvalidSpec("folds must be non-empty index lists")
    if any(pair.label is None for pair in dataset):
        raise InvalidSpec("ablation requires a labeled dataset")
    adapter = _resolve(model)
    correct = np.zeros(len(dataset), dtype=bool)
    for i, pair in enumerate(dataset):
        ablated = ablate_pair(pair, mode, neutral_image, neutral_text)
        values = adapter.evaluate(ablated).values
        correct[i] = int(np.argmax(values)) == int(pair.label)
    fold_accs = []
    used = 0
    for fold in folds:
        hits = correct[np.asarray(fold, dtype=int)]
        fold_accs.append(float(hits.mean()))
        used += len(fold)
    pooled = float(
        correct[np.concatenate([np.asarray(f, dtype=int) for f in folds])].mean()
    )
    accs = np.array(fold_accs)
    result = ModeAblation(
        mode=mode,
        fold_accuracies=fold_accs,
        mean_accuracy=float(accs.mean()),
        std_accuracy=_spread(accs),
        overall_accuracy=pooled,
    )
    result.validate()
    return result


def ablate_all(
    model,
    dataset: list[InputPair],
    folds: list[list[int]],
    neutral_image: np.ndarray | None = None,
    neutral_text: tuple[int, ...] | None = None,
) -> AblationResult:
    adapter = _resolve(model)
    modes = {
        mode: ablate_modality(adapter, dataset, mode, folds, neutral_image, neutral_text)
        for mode in ABLATION_MODES
    }
    return AblationResult(modes=modes, n_samples=len(dataset), k_folds=len(folds))


ABLATION_COLUMNS = ("mode", "fold", "accuracy")


def ablation_to_csv(result: AblationResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ABLATION_COLUMNS)
    for mode in ABLATION_MODES:
        for fold, acc in enumerate(result.modes[mode].fold_accuracies):
            writer.writerow([mode, fold, repr(acc)])
    return buf.getvalue()


def ablation_to_jsonable(result: AblationResult) -> dict:
    return {
        "n_samples": result.n_samples,
        "k_folds": result.k_folds,
        "modes": {
            mode: {
                "fold_accuracies": m.fold_accuracies,
                "mean_accuracy": m.mean_accuracy,
                "std_accuracy": m.std_accuracy,
                "overall_accuracy": m.overall_accuracy,
            }
            for mode, m in result.modes.items()
        },
    }


# -- derivative-instability probe ---------------------------------------------------

@dataclass
class ProbeStat:
    mean: float
    std: float
    per_sample: list[float]


@dataclass
class DerivativeProbeResult:
    image_original: ProbeStat
    text_original: ProbeStat
    image_perturbed: ProbeStat
    text_perturbed: ProbeStat
    h: float
    derivative_mode: str = "analytic"


PROBE_MODES = ("auto", "analytic", "finite-difference")


def _fd_mean_abs(adapter, x: np.ndarray, y: np.ndarray, h: float, sample_id: str) -> tuple[float, float]:
    """Mean |dF/dx| and |dF/dy| entries by central differences."""

    def probe_axis(base: np.ndarray, other: np.ndarray, image_side: bool) -> float:
        cols = []
        for j in range(base.shape[0]):
            hi = base.copy()
            lo = base.copy()
            hi[j] += h
            lo[j] -= h
            if image_side:
                f_hi = adapter.continuous_forward(hi, other)
                f_lo = adapter.continuous_forward(lo, other)
            else:
                f_hi = adapter.continuous_forward(other, hi)
                f_lo = adapter.continuous_forward(other, lo)
            cols.append((f_hi - f_lo) / (2.0 * h))
        jac = np.asarray(cols)
        if not np.all(np.isfinite(jac)):
            raise NonFiniteDifference(
                f"sample {sample_id}: non-finite finite-difference derivative"
            )
        return float(np.abs(jac).mean())

    return probe_axis(x, y, True), probe_axis(y, x, False)


def _analytic_mean_abs(adapter, pair: InputPair) -> tuple[float, float]:
    j_img, j_txt = adapter.true_derivatives(pair)
    return float(np.abs(j_img).mean()), float(np.abs(j_txt).mean())


def probe_derivatives(
    model,
    samples: list[InputPair],
    h: float = 1e-4,
    pspec: PerturbationSpec | None = None,
    seed: int = 0,
    mode: str = "auto",
) -> DerivativeProbeResult:
    """Mean absolute derivative magnitude per modality across samples.

    Uses the adapter's exact Jacobians when it has them ("analytic"),
    falling back to central differences ("finite-difference"); mode "auto"
    picks the first that works. Evaluated at the original inputs and, when
    a perturbation spec is given, at one jointly perturbed draw per sample;
    without a spec the perturbed point coincides with the original.
    """
    if h <= 0.0:
        raise InvalidSpec("h must be > 0")
    if mode not in PROBE_MODES:
        raise InvalidSpec(f"unknown probe mode {mode!r}")
    if not samples:
        raise EmptyInput("no samples to probe")
    adapter = _resolve(model)
    use_analytic = mode == "analytic"
    if mode == "auto":
        try:
            _analytic_mean_abs(adapter, samples[0])
            use_analytic = True
        except UnsupportedKind:
            use_analytic = False

    def mean_abs(pair: InputPair) -> tuple[float, float]:
        if use_analytic:
            return _analytic_mean_abs(adapter, pair)
        x = np.asarray(pair.image, dtype=np.float64).ravel()
        y = np.asarray(pair.text, dtype=np.float64)
        return _fd_mean_abs(adapter, x, y, h, pair.sample_id)

    img_orig, txt_orig, img_pert, txt_pert = [], [], [], []
    for pair in samples:
        a_i, b_t = mean_abs(pair)
        img_orig.append(a_i)
        txt_orig.append(b_t)
        if pspec is None:
            img_pert.append(a_i)
            txt_pert.append(b_t)
        else:
            image_p, text_p = perturb_branch(pair, pspec, seed, BRANCH_JOINT, 0)
            shifted = InputPair(
                sample_id=pair.sample_id, image=image_p, text=text_p, label=pair.label
            )
            a, b = mean_abs(shifted)
            img_pert.append(a)
            txt_pert.append(b)

    def stat(values: list[float]) -> ProbeStat:
        arr = np.asarray(values)
        return ProbeStat(mean=float(arr.mean()), std=_spread(arr), per_sample=list(map(float, arr)))

    return DerivativeProbeResult(
        image_original=stat(img_orig),
        text_original=stat(txt_orig),
        image_perturbed=stat(img_pert),
        text_perturbed=stat(txt_pert),
        h=float(h),
        derivative_mode="analytic" if use_analytic else "finite-difference",
    )


def probe_to_jsonable(result: DerivativeProbeResult) -> dict:
    def one(s: ProbeStat) -> dict:
        return {"mean": s.mean, "std": s.std, "per_sample": s.per_sample}

    return {
        "h": result.h,
        "derivative_mode": result.derivative_mode,
        "image_original": one(result.image_original),
        "text_original": one(result.text_original),
        "image_perturbed": one(result.image_perturbed),
        "text_perturbed": one(result.text_perturbed),
    }
