"""No-intercept least-squares fit of the uncertainty propagation model.

The model regresses the joint-branch variance on the two single-branch
variances and the product of their standard deviations:

    var_joint ~ b1 * var_image + b2 * var_text + b3 * cov_term

For an exactly linear predictor the coefficients collapse to (1, 1, 2*rho).
There is no intercept: zero input variance must predict zero overall
variance. Fitting uses a Householder QR decomposition; an independent
normal-equations solver cross-checks it in the test suite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import atomic_write_text
from .errors import (
    ConstantBenchmark,
    DegenerateDesign,
    EmptyInput,
    InvalidSpec,
    LengthMismatch,
    ReductionMismatch,
    TooFewObservations,
)
from .estimation import REDUCTIONS, UncertaintyRecord

MAX_CONDITION = 1e12
COLUMN_NAMES = ("var_image", "var_text", "cov_term")


@dataclass
class MupmFit:
    beta1: float
    beta2: float
    beta3: float
    r_squared: float
    residual_std: float
    n_observations: int
    reduction: str
    norms: dict[str, float] | None = None
    stderr: tuple[float, float, float] | None = None
    dropped: tuple[str, ...] = ()
    clamp_rate: float | None = None

    @property
    def beta(self) -> np.ndarray:
        return np.array([self.beta1, self.beta2, self.beta3])

    def validate(self) -> None:
        if self.n_observations < 3:
            raise InvalidSpec("fit needs n_observations >= 3")
        if self.r_squared > 1.0 + 1e-12:
            raise InvalidSpec("r_squared cannot exceed 1")
        if self.residual_std < 0.0:
            raise InvalidSpec("residual_std must be >= 0")


def build_design(
    records: list[UncertaintyRecord], reduction: str = "per-dimension"
) -> tuple[np.ndarray, np.ndarray]:
    """Design matrix (m x 3) and target vector for the propagation fit."""
    if not records:
        raise EmptyInput("no uncertainty records")
    if reduction not in REDUCTIONS:
        raise InvalidSpec(f"reduction must be one of {REDUCTIONS}")
    rows = []
    targets = []
    if reduction == "per-dimension":
        for rec in records:
            for dim in range(rec.k):
                rows.append(
                    (rec.var_image[dim], rec.var_text[dim], rec.cov_term[dim])
                )
                targets.append(rec.var_joint[dim])
    else:
        for rec in records:
            rows.append(
                (
                    float(np.linalg.norm(rec.var_image)),
                    float(np.linalg.norm(rec.var_text)),
                    float(np.linalg.norm(rec.cov_term)),
                )
            )
            targets.append(float(np.linalg.norm(rec.var_joint)))
    return np.asarray(rows, dtype=np.float64), np.asarray(targets, dtype=np.float64)


def fit_ols(
    x: np.ndarray,
    y: np.ndarray,
    reduction: str = "per-dimension",
    norms: dict[str, float] | None = None,
) -> MupmFit:
    """Least squares without intercept via QR; strict about degeneracy."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    m = x.shape[0]
    if x.ndim != 2 or x.shape[1] != 3:
        raise InvalidSpec(f"design must be m x 3, got {x.shape}")
    if m != y.shape[0]:
        raise LengthMismatch(f"{m} rows vs {y.shape[0]} targets")
    if m < 3:
        raise TooFewObservations(f"need at least 3 observations, got {m}")
    col_norms = np.linalg.norm(x, axis=0)
    if np.any(col_norms == 0.0):
        dead = [COLUMN_NAMES[i] for i in np.flatnonzero(col_norms == 0.0)]
        raise DegenerateDesign(f"all-zero design columns: {', '.join(dead)}")
    singular = np.linalg.svd(x, compute_uv=False)
    if singular[-1] == 0.0 or (singular[0] / singular[-1]) ** 2 >= MAX_CONDITION:
        raise DegenerateDesign("design is rank-deficient (condition number too large)")

    q, r = np.linalg.qr(x)
    beta = np.linalg.solve(r, q.T @ y)
    residuals = y - x @ beta
    dof = m - 3
    residual_std = math.sqrt(float(residuals @ residuals) / dof) if dof > 0 else 0.0
    ss_res = float(residuals @ residuals)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else (1.0 if ss_res == 0.0 else 0.0)
    r_inv = np.linalg.inv(r)
    xtx_inv_diag = np.sum(r_inv * r_inv, axis=1)
    stderr = tuple(float(residual_std * math.sqrt(v)) for v in xtx_inv_diag)
    return MupmFit(
        beta1=float(beta[0]),
        beta2=float(beta[1]),
        beta3=float(beta[2]),
        r_squared=float(r2),
        residual_std=float(residual_std),
        n_observations=int(m),
        reduction=reduction,
        norms=norms,
        stderr=stderr,
    )


def record_norms(records: list[UncertaintyRecord]) -> dict[str, float]:
    """L2 norms of the across-sample mean variance vectors (report summaries)."""
    mean_image = np.mean([rec.var_image for rec in records], axis=0)
    mean_text = np.mean([rec.var_text for rec in records], axis=0)
    mean_cov = np.mean([rec.cov_term for rec in records], axis=0)
    mean_joint = np.mean([rec.var_joint for rec in records], axis=0)
    return {
        "image": float(np.linalg.norm(mean_image)),
        "text": float(np.linalg.norm(mean_text)),
        "cov": float(np.linalg.norm(mean_cov)),
        "joint": float(np.linalg.norm(mean_joint)),
    }


def fit_records(
    records: list[UncertaintyRecord],
    reduction: str = "per-dimension",
    on_degenerate: str = "raise",
) -> MupmFit:
    """Fit directly from uncertainty records.

    ``on_degenerate="drop-zero"`` removes (near-)zero design columns, fits the
    reduced system, and reports 0 for the dropped coefficients. A modality the
    model never reacts to produces exactly-zero variance columns; the strict
    path must refuse such designs, but pipeline callers (redundancy analysis
    in particular) need the zero-coefficient reading instead of an error.
    """
    if on_degenerate not in ("raise", "drop-zero"):
        raise InvalidSpec("on_degenerate must be 'raise' or 'drop-zero'")
    x, y = build_design(records, reduction)
    norms = record_norms(records)
    if on_degenerate == "raise":
        return fit_ols(x, y, reduction, norms)

    m = x.shape[0]
    if m < 3:
        raise TooFewObservations(f"need at least 3 observations, got {m}")
    col_norms = np.linalg.norm(x, axis=0)
    scale = max(float(col_norms.max()), float(np.linalg.norm(y)), 1e-300)
    keep = np.flatnonzero(col_norms > 1e-12 * scale)
    if keep.size == 0:
        raise DegenerateDesign("all design columns are zero")
    if keep.size == 3:
        return fit_ols(x, y, reduction, norms)

    xk = x[:, keep]
    singular = np.linalg.svd(xk, compute_uv=False)
    if singular[-1] == 0.0 or (singular[0] / singular[-1]) ** 2 >= MAX_CONDITION:
        raise DegenerateDesign("design is rank-deficient after dropping zero columns")
    q, r = np.linalg.qr(xk)
    beta_k = np.linalg.solve(r, q.T @ y)
    beta = np.zeros(3)
    beta[keep] = beta_k
    residuals = y - x @ beta
    dof = m - keep.size
    residual_std = math.sqrt(float(residuals @ residuals) / dof) if dof > 0 else 0.0
    ss_res = float(residuals @ residuals)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else (1.0 if ss_res == 0.0 else 0.0)
    dropped = tuple(COLUMN_NAMES[i] for i in range(3) if i not in keep)
    return MupmFit(
        beta1=float(beta[0]),
        beta2=float(beta[1]),
        beta3=float(beta[2]),
        r_squared=float(r2),
        residual_std=float(residual_std),
        n_observations=int(m),
        reduction=reduction,
        norms=norms,
        stderr=None,
        dropped=dropped,
    )


@dataclass
class Prediction:
    values: np.ndarray
    clamped: np.ndarray  # elementwise flag: raw prediction was negative

    @property
    def clamp_count(self) -> int:
        return int(self.clamped.sum())


def predict_overall(
    fit: MupmFit, record: UncertaintyRecord, reduction: str | None = None
) -> Prediction:
    """Forward application of the fitted model to one record."""
    if reduction is not None and reduction != fit.reduction:
        raise ReductionMismatch(
            f"fit uses {fit.reduction!r}, caller requested {reduction!r}"
        )
    if fit.reduction == "per-dimension":
        raw = (
            fit.beta1 * record.var_image
            + fit.beta2 * record.var_text
            + fit.beta3 * record.cov_term
        )
    else:
        raw = np.array(
            [
                fit.beta1 * float(np.linalg.norm(record.var_image))
                + fit.beta2 * float(np.linalg.norm(record.var_text))
                + fit.beta3 * float(np.linalg.norm(record.cov_term))
            ]
        )
    clamped = raw < 0.0
    return Prediction(values=np.where(clamped, 0.0, raw), clamped=clamped)


def r_squared(predictions: np.ndarray, benchmark: np.ndarray) -> float:
    """1 - SS_res/SS_tot of predictions against the benchmark."""
    predictions = np.asarray(predictions, dtype=np.float64).ravel()
    benchmark = np.asarray(benchmark, dtype=np.float64).ravel()
    if predictions.shape[0] != benchmark.shape[0]:
        raise LengthMismatch(
            f"{predictions.shape[0]} predictions vs {benchmark.shape[0]} benchmark values"
        )
    if predictions.shape[0] < 2:
        raise LengthMismatch("need at least 2 values")
    ss_tot = float(np.sum((benchmark - benchmark.mean()) ** 2))
    if ss_tot == 0.0:
        raise ConstantBenchmark("benchmark is constant; R^2 undefined")
    ss_res = float(np.sum((benchmark - predictions) ** 2))
    return 1.0 - ss_res / ss_tot


# -- serialization ---------------------------------------------------------------

def fit_to_jsonable(fit: MupmFit) -> dict:
    def clean(v):
        return None if v is None or (isinstance(v, float) and not math.isfinite(v)) else v

    return {
        "beta": [fit.beta1, fit.beta2, fit.beta3],
        "r_squared": fit.r_squared,
        "residual_std": fit.residual_std,
        "n_observations": fit.n_observations,
        "reduction": fit.reduction,
        "norms": fit.norms,
        "stderr": None if fit.stderr is None else [clean(s) for s in fit.stderr],
        "dropped": list(fit.dropped),
        "clamp_rate": fit.clamp_rate,
    }


def fit_from_jsonable(obj: dict) -> MupmFit:
    try:
        beta = obj["beta"]
        fit = MupmFit(
            beta1=float(beta[0]),
            beta2=float(beta[1]),
            beta3=float(beta[2]),
            r_squared=float(obj["r_squared"]),
            residual_std=float(obj["residual_std"]),
            n_observations=int(obj["n_observations"]),
            reduction=str(obj["reduction"]),
            norms=obj.get("norms"),
            stderr=None if obj.get("stderr") is None else tuple(obj["stderr"]),
            dropped=tuple(obj.get("dropped", ())),
            clamp_rate=obj.get("clamp_rate"),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise InvalidSpec(f"bad fit object: {exc}") from exc
    return fit


def save_fit(fit: MupmFit, path: str) -> None:
    atomic_write_text(path, json.dumps(fit_to_jsonable(fit), indent=2) + "\n")


def load_fit(path: str) -> MupmFit:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if "averaged" in obj:  # full fit report written by the command line
        return fit_from_jsonable(obj["averaged"])
    return fit_from_jsonable(obj)
