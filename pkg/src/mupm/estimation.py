"""Branch resampling and per-sample uncertainty estimation.

For each sample, n replicates are run per branch (image-only, text-only,
joint), outputs are optionally one-hot encoded, and unbiased per-dimension
sample variances become the uncertainty record. The covariance-term regressor
is the elementwise product of the two single-branch standard deviations; the
replicate-paired Pearson correlation between the single-modality branches is
kept as a diagnostic. A benchmark overall uncertainty averages many
independent joint-branch estimates.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import InputPair, atomic_write_text, format_float, harden
from .errors import (
    EmptyInput,
    InconsistentK,
    InvalidSpec,
    ParseFailure,
    TooFewReplicates,
)
from .models import ModelSpec, ReplayAdapter, SyntheticAdapter, build_adapter
from .perturb import PerturbationSpec, perturb_branch
from .rng import BRANCH_IMAGE, BRANCH_JOINT, BRANCH_TEXT

REDUCTIONS = ("per-dimension", "l2-norm")


@dataclass
class EstimationConfig:
    n_resamples: int = 20
    benchmark_repeats: int = 100
    encode_hard: bool = False
    reduction: str = "per-dimension"

    def validate(self) -> None:
        if self.n_resamples < 2:
            raise InvalidSpec("n_resamples must be >= 2")
        if self.benchmark_repeats < self.n_resamples:
            raise InvalidSpec("benchmark_repeats must be >= n_resamples")
        if self.reduction not in REDUCTIONS:
            raise InvalidSpec(f"reduction must be one of {REDUCTIONS}")


@dataclass
class UncertaintyRecord:
    sample_id: str
    var_image: np.ndarray
    var_text: np.ndarray
    var_joint: np.ndarray
    cov_term: np.ndarray
    paired_corr: np.ndarray
    degenerate: np.ndarray  # per-dimension flag: paired_corr undefined there

    @property
    def k(self) -> int:
        return int(self.var_image.shape[0])


def _resolve(model) -> object:
    return build_adapter(model) if isinstance(model, ModelSpec) else model


def run_branch(
    model,
    pair: InputPair,
    branch: str,
    pspec: PerturbationSpec,
    cfg: EstimationConfig,
    seed: int,
    replicate_offset: int = 0,
) -> np.ndarray:
    """n x K matrix of (optionally one-hot encoded) replicate outputs."""
    adapter = _resolve(model)
    n = cfg.n_resamples
    if isinstance(adapter, ReplayAdapter):
        rows = [
            adapter.evaluate(pair, branch=branch, replicate=replicate_offset + j).values
            for j in range(n)
        ]
        out = np.asarray(rows)
    else:
        inputs = [
            perturb_branch(pair, pspec, seed, branch, replicate_offset + j)
            for j in range(n)
        ]
        if isinstance(adapter, SyntheticAdapter) and len(
            {len(text) for _, text in inputs}
        ) == 1:
            out = adapter.evaluate_batch(
                [image for image, _ in inputs],
                [text for _, text in inputs],
                sample_id=pair.sample_id,
            )
        else:
            rows = []
            for j, (image, text) in enumerate(inputs):
                replicate_pair = InputPair(
                    sample_id=pair.sample_id, image=image, text=text, label=pair.label
                )
                rows.append(
                    adapter.evaluate(
                        replicate_pair, branch=branch, replicate=replicate_offset + j
                    ).values
                )
            out = np.asarray(rows)
    if cfg.encode_hard:
        out = np.asarray([harden(row) for row in out])
    return out


def sample_variance(matrix: np.ndarray) -> np.ndarray:
    """Unbiased per-column variance (denominator n - 1)."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 2:
        raise TooFewReplicates("sample variance needs at least 2 replicates")
    return matrix.var(axis=0, ddof=1)


def _paired_corr(m_image: np.ndarray, m_text: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k = m_image.shape[1]
    corr = np.zeros(k)
    degenerate = np.zeros(k, dtype=bool)
    a = m_image - m_image.mean(axis=0)
    b = m_text - m_text.mean(axis=0)
    sa = np.sqrt((a * a).sum(axis=0))
    sb = np.sqrt((b * b).sum(axis=0))
    # a numerically constant branch leaves rounding residue ~1e-16 relative to
    # the raw values, so "no spread" is judged against the column magnitude
    tol_a = 1e-9 * np.sqrt((m_image * m_image).sum(axis=0))
    tol_b = 1e-9 * np.sqrt((m_text * m_text).sum(axis=0))
    for i in range(k):
        if sa[i] <= tol_a[i] or sb[i] <= tol_b[i]:
            degenerate[i] = True
        else:
            corr[i] = float(np.clip((a[:, i] * b[:, i]).sum() / (sa[i] * sb[i]), -1.0, 1.0))
    return corr, degenerate


def estimate_sample(
    model,
    pair: InputPair,
    pspec: PerturbationSpec,
    cfg: EstimationConfig,
    seed: int,
) -> UncertaintyRecord:
    adapter = _resolve(model)
    m_image = run_branch(adapter, pair, BRANCH_IMAGE, pspec, cfg, seed)
    m_text = run_branch(adapter, pair, BRANCH_TEXT, pspec, cfg, seed)
    m_joint = run_branch(adapter, pair, BRANCH_JOINT, pspec, cfg, seed)
    if not (m_image.shape[1] == m_text.shape[1] == m_joint.shape[1]):
        raise InconsistentK(
            f"sample {pair.sample_id}: branch output widths differ"
        )
    var_image = sample_variance(m_image)
    var_text = sample_variance(m_text)
    var_joint = sample_variance(m_joint)
    cov_term = np.sqrt(var_image) * np.sqrt(var_text)
    corr, degenerate = _paired_corr(m_image, m_text)
    return UncertaintyRecord(
        sample_id=pair.sample_id,
        var_image=var_image,
        var_text=var_text,
        var_joint=var_joint,
        cov_term=cov_term,
        paired_corr=corr,
        degenerate=degenerate,
    )


def estimate_dataset(
    model,
    dataset: list[InputPair],
    pspec: PerturbationSpec,
    cfg: EstimationConfig,
    seed: int,
    threads: int = 1,
) -> list[UncertaintyRecord]:
    """One record per sample, in dataset order, schedule-independent."""
    if not dataset:
        raise EmptyInput("dataset is empty")
    adapter = _resolve(model)
    if threads <= 1:
        return [estimate_sample(adapter, pair, pspec, cfg, seed) for pair in dataset]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [
            pool.submit(estimate_sample, adapter, pair, pspec, cfg, seed)
            for pair in dataset
        ]
        return [f.result() for f in futures]


def benchmark_sample(
    model,
    pair: InputPair,
    pspec: PerturbationSpec,
    cfg: EstimationConfig,
    seed: int,
) -> np.ndarray:
    """Average of benchmark_repeats independent joint-branch variance estimates.

    Repeat r uses joint replicate indices [(r+1)*n, (r+2)*n), so benchmark
    draws never overlap the primary estimate's replicates 0..n-1.
    """
    adapter = _resolve(model)
    n = cfg.n_resamples
    total: np.ndarray | None = None
    for r in range(cfg.benchmark_repeats):
        matrix = run_branch(
            adapter, pair, BRANCH_JOINT, pspec, cfg, seed, replicate_offset=(r + 1) * n
        )
        var = sample_variance(matrix)
        total = var if total is None else total + var
    return total / cfg.benchmark_repeats


def benchmark_overall(
    model,
    dataset: list[InputPair],
    pspec: PerturbationSpec,
    cfg: EstimationConfig,
    seed: int,
    threads: int = 1,
) -> list[np.ndarray]:
    if not dataset:
        raise EmptyInput("dataset is empty")
    if cfg.benchmark_repeats < 2:
        raise InvalidSpec("benchmark_repeats must be >= 2")
    adapter = _resolve(model)
    if threads <= 1:
        return [benchmark_sample(adapter, pair, pspec, cfg, seed) for pair in dataset]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [
            pool.submit(benchmark_sample, adapter, pair, pspec, cfg, seed)
            for pair in dataset
        ]
        return [f.result() for f in futures]


# -- delimited serialization ------------------------------------------------------

RECORD_COLUMNS = (
    "sample_id",
    "dim",
    "var_image",
    "var_text",
    "var_joint",
    "cov_term",
    "paired_corr",
    "degenerate_flag",
)


def records_to_csv(records: list[UncertaintyRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RECORD_COLUMNS)
    for rec in records:
        for dim in range(rec.k):
            writer.writerow(
                [
                    rec.sample_id,
                    dim,
                    format_float(rec.var_image[dim]),
                    format_float(rec.var_text[dim]),
                    format_float(rec.var_joint[dim]),
                    format_float(rec.cov_term[dim]),
                    format_float(rec.paired_corr[dim]),
                    int(rec.degenerate[dim]),
                ]
            )
    return buf.getvalue()


def write_records(records: list[UncertaintyRecord], path: str) -> None:
    atomic_write_text(path, records_to_csv(records))


def read_records(path: str) -> list[UncertaintyRecord]:
    grouped: dict[str, list[list[float]]] = {}
    order: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(RECORD_COLUMNS):
            raise ParseFailure(f"unexpected header {header} in {path}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(RECORD_COLUMNS):
                raise ParseFailure("wrong column count", line=lineno)
            try:
                sid = row[0]
                dim = int(row[1])
                values = [float(v) for v in row[2:7]] + [float(int(row[7]))]
            except ValueError as exc:
                raise ParseFailure(str(exc), line=lineno) from exc
            if sid not in grouped:
                grouped[sid] = []
                order.append(sid)
            if dim != len(grouped[sid]):
                raise ParseFailure(
                    f"dims for sample {sid} must be contiguous from 0", line=lineno
                )
            grouped[sid].append(values)
    records = []
    k = None
    for sid in order:
        block = np.asarray(grouped[sid])
        if k is None:
            k = block.shape[0]
        elif block.shape[0] != k:
            raise InconsistentK(f"sample {sid} has {block.shape[0]} dims, expected {k}")
        records.append(
            UncertaintyRecord(
                sample_id=sid,
                var_image=block[:, 0],
                var_text=block[:, 1],
                var_joint=block[:, 2],
                cov_term=block[:, 3],
                paired_corr=block[:, 4],
                degenerate=block[:, 5] != 0.0,
            )
        )
    if not records:
        raise ParseFailure(f"no records in {path}")
    return records


BENCHMARK_COLUMNS = ("sample_id", "dim", "var_benchmark")


def write_benchmark(
    sample_ids: list[str], benchmark: list[np.ndarray], path: str
) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(BENCHMARK_COLUMNS)
    for sid, vec in zip(sample_ids, benchmark):
        for dim, value in enumerate(vec):
            writer.writerow([sid, dim, format_float(value)])
    atomic_write_text(path, buf.getvalue())


def read_benchmark(path: str) -> tuple[list[str], list[np.ndarray]]:
    grouped: dict[str, list[float]] = {}
    order: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(BENCHMARK_COLUMNS):
            raise ParseFailure(f"unexpected header {header} in {path}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                sid, dim, value = row[0], int(row[1]), float(row[2])
            except (IndexError, ValueError) as exc:
                raise ParseFailure(str(exc), line=lineno) from exc
            if sid not in grouped:
                grouped[sid] = []
                order.append(sid)
            if dim != len(grouped[sid]):
                raise ParseFailure(
                    f"dims for sample {sid} must be contiguous from 0", line=lineno
                )
            grouped[sid].append(value)
    if not order:
        raise ParseFailure(f"no records in {path}")
    return order, [np.asarray(grouped[sid]) for sid in order]
