"""Calibration error, fold splitting, and one-way ANOVA over fit coefficients.

Confidence is derived from uncertainty norms through the parameter-free
log-sigmoid map 1 - sigmoid(ln(u + eps)) = 1/(1 + u + eps). ECE uses
equal-count percentile bins over the norms. The F-distribution tail is
evaluated through the regularized incomplete beta function.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from .data import atomic_write_text, format_float
from .errors import (
    DegenerateGroups,
    InvalidSpec,
    NegativeInput,
    TooFewSamples,
)

EPSILON = 1e-12


def confidence_map(uncertainty_norm: float) -> float:
    """1 - sigmoid(ln(u + eps)); strictly decreasing, 1 at u=0, 0.5 at u=1."""
    u = float(uncertainty_norm)
    if u < 0.0:
        raise NegativeInput(f"uncertainty norm must be >= 0, got {u}")
    return 1.0 / (1.0 + u + EPSILON)


@dataclass
class CalibrationBin:
    bin_index: int
    count: int
    accuracy: float
    confidence: float

    @property
    def gap(self) -> float:
        return abs(self.accuracy - self.confidence)


@dataclass
class CalibrationReport:
    n_bins: int
    bins: list[CalibrationBin]
    ece: float

    def validate(self) -> None:
        if not (0.0 <= self.ece <= 1.0):
            raise InvalidSpec("ece must lie in [0, 1]")


def ece(
    samples: list[tuple[str, bool, float]],
    n_bins: int = 10,
    confidence_fn=confidence_map,
) -> CalibrationReport:
    """Expected calibration error over (sample_id, correct, uncertainty_norm).

    Samples are sorted by uncertainty norm (ties broken by sample_id) and cut
    into n_bins contiguous groups whose sizes differ by at most one; ECE is
    the count-weighted mean absolute gap between per-bin accuracy and per-bin
    mean confidence.
    """
    if n_bins < 1:
        raise InvalidSpec("n_bins must be >= 1")
    if len(samples) < n_bins:
        raise TooFewSamples(f"need at least {n_bins} samples, got {len(samples)}")
    ordered = sorted(samples, key=lambda s: (s[2], s[0]))
    n = len(ordered)
    base, extra = divmod(n, n_bins)
    bins: list[CalibrationBin] = []
    weighted_gap = 0.0
    start = 0
    for b in range(n_bins):
        size = base + (1 if b < extra else 0)
        chunk = ordered[start : start + size]
        start += size
        acc = float(np.mean([1.0 if c else 0.0 for _, c, _ in chunk]))
        conf = float(np.mean([confidence_fn(u) for _, _, u in chunk]))
        bins.append(CalibrationBin(bin_index=b, count=size, accuracy=acc, confidence=conf))
        weighted_gap += size * abs(acc - conf)
    report = CalibrationReport(n_bins=n_bins, bins=bins, ece=weighted_gap / n)
    report.validate()
    return report


def kfold_split(n_samples: int, k: int = 5, seed: int = 0) -> list[list[int]]:
    """k disjoint index folds; sizes differ by at most one; seed-deterministic."""
    if k < 2:
        raise InvalidSpec("k must be >= 2")
    if n_samples < k:
        raise TooFewSamples(f"need at least {k} samples, got {n_samples}")
    gen = np.random.Generator(np.random.PCG64(int(seed)))
    perm = gen.permutation(n_samples)
    return [list(map(int, fold)) for fold in np.array_split(perm, k)]


# -- one-way ANOVA -----------------------------------------------------------------

@dataclass
class AnovaResult:
    f_statistic: float
    p_value: float
    df_between: int
    df_within: int
    group_means: list[float]
    group_sizes: list[int]


def f_distribution_cdf(x: float, d1: int, d2: int) -> float:
    """CDF of the F(d1, d2) distribution via the regularized incomplete beta."""
    if x <= 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    t = d1 * x / (d1 * x + d2)
    return float(betainc(d1 / 2.0, d2 / 2.0, t))


def f_distribution_sf(x: float, d1: int, d2: int) -> float:
    """Upper tail 1 - CDF, computed directly for numerical accuracy."""
    if x <= 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    t = d2 / (d2 + d1 * x)
    return float(betainc(d2 / 2.0, d1 / 2.0, t))


def anova_oneway(groups: list[list[float]]) -> AnovaResult:
    if len(groups) < 2:
        raise InvalidSpec("need at least 2 groups")
    arrays = [np.asarray(g, dtype=np.float64) for g in groups]
    if any(a.size < 2 for a in arrays):
        raise InvalidSpec("each group needs at least 2 values")
    n_total = sum(a.size for a in arrays)
    g = len(arrays)
    grand = float(np.concatenate(arrays).mean())
    means = [float(a.mean()) for a in arrays]
    ss_between = sum(a.size * (m - grand) ** 2 for a, m in zip(arrays, means))
    ss_within = sum(float(((a - m) ** 2).sum()) for a, m in zip(arrays, means))
    df_between = g - 1
    df_within = n_total - g
    ms_between = ss_between / df_between
    ms_within = ss_within / df_within
    if ms_within == 0.0:
        if ms_between == 0.0:
            raise DegenerateGroups("all values identical in every group")
        f_stat, p = math.inf, 0.0
    else:
        f_stat = ms_between / ms_within
        p = f_distribution_sf(f_stat, df_between, df_within)
    return AnovaResult(
        f_statistic=float(f_stat),
        p_value=float(p),
        df_between=df_between,
        df_within=df_within,
        group_means=means,
        group_sizes=[int(a.size) for a in arrays],
    )


def coefficient_anova(fit_groups: list[list]) -> dict[str, AnovaResult]:
    """One-way ANOVA per coefficient across conditions of repeated fits."""
    if len(fit_groups) < 2:
        raise InvalidSpec("need at least 2 conditions")
    if any(len(fits) < 2 for fits in fit_groups):
        raise InvalidSpec("each condition needs at least 2 fits")
    out: dict[str, AnovaResult] = {}
    for name, attr in (("beta1", "beta1"), ("beta2", "beta2"), ("beta3", "beta3")):
        groups = [[float(getattr(f, attr)) for f in fits] for fits in fit_groups]
        out[name] = anova_oneway(groups)
    return out


# -- serialization -------------------------------------------------------------------

def calibration_to_jsonable(report: CalibrationReport) -> dict:
    return {
        "n_bins": report.n_bins,
        "ece": report.ece,
        "bins": [
            {
                "bin_index": b.bin_index,
                "count": b.count,
                "accuracy": b.accuracy,
                "confidence": b.confidence,
                "gap": b.gap,
            }
            for b in report.bins
        ],
    }


def bins_to_csv(report: CalibrationReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["bin_index", "count", "accuracy", "confidence", "gap"])
    for b in report.bins:
        writer.writerow(
            [
                b.bin_index,
                b.count,
                format_float(b.accuracy),
                format_float(b.confidence),
                format_float(b.gap),
            ]
        )
    return buf.getvalue()


def anova_to_jsonable(results: dict[str, AnovaResult]) -> dict:
    def one(r: AnovaResult) -> dict:
        return {
            "f_statistic": None if math.isinf(r.f_statistic) else r.f_statistic,
            "f_is_infinite": math.isinf(r.f_statistic),
            "p_value": r.p_value,
            "df_between": r.df_between,
            "df_within": r.df_within,
            "group_means": r.group_means,
            "group_sizes": r.group_sizes,
        }

    return {name: one(r) for name, r in results.items()}


def save_json(obj: dict, path: str) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2) + "\n")
