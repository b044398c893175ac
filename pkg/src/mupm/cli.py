"""Command line interface.

Commands: estimate, fit, calibrate, anova, sweep, redundancy, ablate,
derivatives, report, manifest (export|import). Every command reruns
byte-identically for a fixed config and seed; all files are written
atomically. Exit codes: 1 config, 2 file/format, 3 model adapter.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import analysis, calibration, estimation, figures, models, regression
from .config import RunConfig, load_config
from .data import load_dataset
from .errors import (
    ConfigError,
    DegenerateDesign,
    InvalidSpec,
    MissingArtifact,
    MupmError,
    ParseFailure,
    exit_code_for,
)

log = logging.getLogger("mupm")

RECORDS_FILE = "uncertainties.csv"
BENCHMARK_FILE = "benchmark.csv"
FIT_FILE = "fit.json"
MANIFEST_FILE = "manifest.jsonl"
SWEEP_CSV = "sweep.csv"
SWEEP_JSON = "sweep.json"
CALIBRATION_JSON = "calibration.json"
CALIBRATION_BINS = "calibration_bins.csv"
ANOVA_JSON = "anova.json"
REDUNDANCY_JSON = "redundancy.json"
ABLATION_CSV = "ablation.csv"
ABLATION_JSON = "ablation.json"
DERIVATIVES_JSON = "derivatives.json"
REPORT_SVG = "report.svg"
ABLATION_SVG = "ablation.svg"
SUMMARY_JSON = "summary.json"


def _setup_logging() -> None:
    level = os.environ.get("MUPM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


def _outdir(args, cfg: RunConfig | None = None) -> str:
    out = args.out or (cfg.output_dir if cfg is not None else ".")
    os.makedirs(out, exist_ok=True)
    return out


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.global_seed = int(args.seed)
    if getattr(args, "threads", None) is not None:
        cfg.threads = int(args.threads)
        cfg.validate()
    return cfg


def _require(path: str) -> str:
    if not os.path.exists(path):
        raise MissingArtifact(f"required artifact not found: {path}")
    return path


def _emit(path: str) -> None:
    print(f"wrote {path}")


def _write_json(obj: dict, path: str) -> None:
    calibration.save_json(obj, path)
    _emit(path)


# -- estimate ------------------------------------------------------------------------

def cmd_estimate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _outdir(args, cfg)
    dataset = load_dataset(cfg.dataset_path)

    if args.export_manifest:
        if args.benchmark or args.replay:
            raise ConfigError("--export-manifest cannot be combined with --benchmark/--replay")
        entries = models.manifest_entries(
            dataset, cfg.pspec, cfg.global_seed, cfg.estimation.n_resamples
        )
        path = os.path.join(out, MANIFEST_FILE)
        models.export_manifest(entries, path)
        _emit(path)
        return 0

    if args.replay:
        model = models.ReplayAdapter.from_path(_require(args.replay))
        if args.benchmark:
            raise ConfigError(
                "--benchmark is unavailable with --replay: manifests cover only "
                "the primary replicates, not benchmark repeats"
            )
    else:
        model = cfg.model

    records = estimation.estimate_dataset(
        model, dataset, cfg.pspec, cfg.estimation, cfg.global_seed, threads=cfg.threads
    )
    records_path = os.path.join(out, RECORDS_FILE)
    estimation.write_records(records, records_path)
    _emit(records_path)

    if args.benchmark:
        bench = estimation.benchmark_overall(
            model, dataset, cfg.pspec, cfg.estimation, cfg.global_seed, threads=cfg.threads
        )
        bench_path = os.path.join(out, BENCHMARK_FILE)
        estimation.write_benchmark([p.sample_id for p in dataset], bench, bench_path)
        _emit(bench_path)
    return 0


# -- fit -----------------------------------------------------------------------------

def _benchmark_targets(path: str, reduction: str) -> np.ndarray:
    _, vectors = estimation.read_benchmark(path)
    if reduction == "per-dimension":
        return np.concatenate(vectors)
    return np.array([float(np.linalg.norm(v)) for v in vectors])


def table_row(beta, norms: dict[str, float], r2: float, ece: float | None = None) -> str:
    cells = [
        f"{beta[0]:.2f} ({norms['image']:.2f})",
        f"{beta[1]:.2f} ({norms['text']:.2f})",
        f"{beta[2]:.2f} ({norms['cov']:.2f})",
        f"{r2:.2f}",
        "-" if ece is None else f"{ece:.2f}",
    ]
    return " | ".join(cells)


def cmd_fit(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _outdir(args, cfg)
    reduction = args.reduction or cfg.estimation.reduction
    records_path = _require(args.records or os.path.join(out, RECORDS_FILE))
    records = estimation.read_records(records_path)
    on_degenerate = "drop-zero" if args.drop_zero_columns else "raise"

    folds = calibration.kfold_split(len(records), k=cfg.k_folds, seed=cfg.global_seed)
    fold_fits = []
    for idx, fold in enumerate(folds):
        subset = [records[i] for i in fold]
        try:
            fold_fits.append(regression.fit_records(subset, reduction, on_degenerate))
        except DegenerateDesign as exc:
            raise DegenerateDesign(f"fold {idx}: {exc}") from exc

    beta = np.mean([f.beta for f in fold_fits], axis=0)
    fold_spread = tuple(
        float(np.std([f.beta[j] for f in fold_fits], ddof=1)) if len(fold_fits) > 1 else 0.0
        for j in range(3)
    )
    x, y = regression.build_design(records, reduction)
    residuals = y - x @ beta
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(residuals @ residuals)
    r2_insample = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0.0 else 0.0)
    averaged = regression.MupmFit(
        beta1=float(beta[0]),
        beta2=float(beta[1]),
        beta3=float(beta[2]),
        r_squared=float(r2_insample),
        residual_std=float(np.sqrt(ss_res / max(len(y) - 3, 1))),
        n_observations=int(len(y)),
        reduction=reduction,
        norms=regression.record_norms(records),
        stderr=fold_spread,
        dropped=tuple(sorted({name for f in fold_fits for name in f.dropped})),
    )

    bench_path = args.benchmark_file or os.path.join(out, BENCHMARK_FILE)
    r2_bench = None
    if os.path.exists(bench_path):
        predictions = np.concatenate(
            [regression.predict_overall(averaged, rec).values for rec in records]
        )
        r2_bench = regression.r_squared(predictions, _benchmark_targets(bench_path, reduction))

    payload = {
        "schema_version": 1,
        "reduction": reduction,
        "k_folds": cfg.k_folds,
        "folds": [regression.fit_to_jsonable(f) for f in fold_fits],
        "averaged": regression.fit_to_jsonable(averaged),
        "coefficient_fold_spread": list(fold_spread),
        "r_squared_benchmark": r2_bench,
        "table_row": table_row(
            beta, averaged.norms, r2_bench if r2_bench is not None else r2_insample
        ),
    }
    _write_json(payload, os.path.join(out, FIT_FILE))
    return 0


# -- calibrate -----------------------------------------------------------------------

def cmd_calibrate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _outdir(args, cfg)
    fit = regression.load_fit(_require(os.path.join(out, FIT_FILE)))
    records = estimation.read_records(_require(os.path.join(out, RECORDS_FILE)))
    by_id = {rec.sample_id: rec for rec in records}
    dataset = load_dataset(cfg.dataset_path)
    if any(pair.label is None for pair in dataset):
        raise InvalidSpec("calibration requires a labeled dataset")
    adapter = models.build_adapter(cfg.model)
    samples = []
    for pair in dataset:
        if pair.sample_id not in by_id:
            raise ParseFailure(f"no uncertainty record for sample {pair.sample_id}")
        correct = int(np.argmax(adapter.evaluate(pair).values)) == int(pair.label)
        samples.append(
            (pair.sample_id, correct, analysis.prediction_norm(fit, by_id[pair.sample_id]))
        )
    report = calibration.ece(samples, n_bins=args.bins)
    _write_json(calibration.calibration_to_jsonable(report), os.path.join(out, CALIBRATION_JSON))
    bins_path = os.path.join(out, CALIBRATION_BINS)
    from .data import atomic_write_text

    atomic_write_text(bins_path, calibration.bins_to_csv(report))
    _emit(bins_path)
    return 0


# -- anova ---------------------------------------------------------------------------

def _fold_fits_from_file(path: str) -> list[regression.MupmFit]:
    with open(_require(path), "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    folds = obj.get("folds")
    if not folds:
        raise ParseFailure(f"{path} has no per-fold fits")
    return [regression.fit_from_jsonable(f) for f in folds]


def cmd_anova(args) -> int:
    out = _outdir(args)
    groups = [_fold_fits_from_file(path) for path in args.fits]
    results = calibration.coefficient_anova(groups)
    payload = calibration.anova_to_jsonable(results)
    payload["conditions"] = list(args.fits)
    _write_json(payload, os.path.join(out, ANOVA_JSON))
    return 0


# -- sweep ---------------------------------------------------------------------------

def _parse_n_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"bad --n-list {text!r}: {exc}") from exc


def cmd_sweep(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _outdir(args, cfg)
    fit = regression.load_fit(_require(os.path.join(out, FIT_FILE)))
    dataset = load_dataset(cfg.dataset_path)
    subset = dataset[-args.holdout :] if args.holdout else dataset
    n_list = _parse_n_list(args.n_list) if args.n_list else cfg.n_list
    result = analysis.sweep_resample_size(
        cfg.model,
        subset,
        cfg.pspec,
        cfg.estimation,
        fit,
        n_list=n_list,
        seed=cfg.global_seed,
        threads=cfg.threads,
    )
    from .data import atomic_write_text

    csv_path = os.path.join(out, SWEEP_CSV)
    atomic_write_text(csv_path, analysis.sweep_to_csv(result))
    _emit(csv_path)
    _write_json(analysis.sweep_to_jsonable(result), os.path.join(out, SWEEP_JSON))
    return 0


# -- redundancy ----------------------------------------------------------------------

def cmd_redundancy(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _outdir(args, cfg)
    fit = regression.load_fit(_require(os.path.join(out, FIT_FILE)))
    records = estimation.read_records(_require(os.path.join(out, RECORDS_FILE)))
    report = analysis.detect_redundancy(
        fit, records, tau_beta=args.tau_beta, tau_cov=args.tau_cov
    )
    _write_json(analysis.redundancy_to_jsonable(report), os.path.join(out, REDUNDANCY_JSON))
    return 0


# -- ablate --------------------------------------------------------------------------

def cmd_ablate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _outdir(args, cfg)
    dataset = load_dataset(cfg.dataset_path)
    folds = calibration.kfold_split(len(dataset), k=cfg.k_folds, seed=cfg.global_seed)
    result = analysis.ablate_all(cfg.model, dataset, folds)
    from .data import atomic_write_text

    csv_path = os.path.join(out, ABLATION_CSV)
    atomic_write_text(csv_path, analysis.ablation_to_csv(result))
    _emit(csv_path)
    _write_json(analysis.ablation_to_jsonable(result), os.path.join(out, ABLATION_JSON))
    return 0


# -- derivatives ---------------------------------------------------------------------

def cmd_derivatives(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _outdir(args, cfg)
    dataset = load_dataset(cfg.dataset_path)
    result = analysis.probe_derivatives(
        cfg.model,
        dataset,
        h=args.step,
        pspec=cfg.pspec,
        seed=cfg.global_seed,
        mode=args.mode,
    )
    _write_json(analysis.probe_to_jsonable(result), os.path.join(out, DERIVATIVES_JSON))
    return 0


# -- report --------------------------------------------------------------------------

def _read_sweep_csv(path: str) -> list[analysis.SweepPoint]:
    points = []
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(analysis.SWEEP_COLUMNS):
            raise ParseFailure(f"unexpected header {header} in {path}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                points.append(
                    analysis.SweepPoint(
                        n=int(row[0]),
                        mean_norm=float(row[1]),
                        std_norm=float(row[2]),
                        mean_abs_dev=float(row[3]),
                        line_gap=float(row[4]),
                    )
                )
            except (IndexError, ValueError) as exc:
                raise ParseFailure(str(exc), line=lineno) from exc
    if not points:
        raise ParseFailure(f"no sweep rows in {path}")
    return points


def _read_ablation_csv(path: str) -> analysis.AblationResult:
    per_mode: dict[str, list[float]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(analysis.ABLATION_COLUMNS):
            raise ParseFailure(f"unexpected header {header} in {path}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                per_mode.setdefault(row[0], []).append(float(row[2]))
            except (IndexError, ValueError) as exc:
                raise ParseFailure(str(exc), line=lineno) from exc
    modes = {}
    n_folds = 0
    for mode in analysis.ABLATION_MODES:
        accs = per_mode.get(mode)
        if not accs:
            raise ParseFailure(f"no rows for mode {mode!r} in {path}")
        arr = np.asarray(accs)
        n_folds = max(n_folds, len(accs))
        modes[mode] = analysis.ModeAblation(
            mode=mode,
            fold_accuracies=[float(a) for a in accs],
            mean_accuracy=float(arr.mean()),
            std_accuracy=0.0 if np.all(arr == arr[0]) else float(arr.std(ddof=1)),
            overall_accuracy=float(arr.mean()),
        )
    return analysis.AblationResult(modes=modes, n_samples=0, k_folds=n_folds)


def cmd_report(args) -> int:
    out = _outdir(args)
    points = _read_sweep_csv(_require(os.path.join(out, SWEEP_CSV)))
    _, bench_vectors = estimation.read_benchmark(_require(os.path.join(out, BENCHMARK_FILE)))
    bench_norms = [float(np.linalg.norm(v)) for v in bench_vectors]
    sweep = analysis.SweepResult(
        points=points,
        benchmark_mean_norm=float(np.mean(bench_norms)),
        benchmark_norms=bench_norms,
        reduction="per-dimension",
    )
    sweep.validate()
    report_path = os.path.join(out, REPORT_SVG)
    sweep_annotation = figures.render_sweep_figure(sweep, report_path)
    _emit(report_path)

    summary: dict = {"sweep": sweep_annotation}
    ablation_csv = os.path.join(out, ABLATION_CSV)
    if os.path.exists(ablation_csv):
        ablation = _read_ablation_csv(ablation_csv)
        ablation_path = os.path.join(out, ABLATION_SVG)
        summary["ablation"] = figures.render_ablation_figure(ablation, ablation_path)
        _emit(ablation_path)
    fit_path = os.path.join(out, FIT_FILE)
    if os.path.exists(fit_path):
        with open(fit_path, "r", encoding="utf-8") as fh:
            fit_obj = json.load(fh)
        ece_value = None
        calib_path = os.path.join(out, CALIBRATION_JSON)
        if os.path.exists(calib_path):
            with open(calib_path, "r", encoding="utf-8") as fh:
                ece_value = json.load(fh).get("ece")
            summary["ece"] = ece_value
        averaged = fit_obj.get("averaged", {})
        norms = averaged.get("norms")
        r2 = fit_obj.get("r_squared_benchmark")
        if r2 is None:
            r2 = averaged.get("r_squared", float("nan"))
        if norms:
            summary["table_row"] = table_row(averaged["beta"], norms, r2, ece_value)
    _write_json(summary, os.path.join(out, SUMMARY_JSON))
    return 0


# -- manifest ------------------------------------------------------------------------

def cmd_manifest(args) -> int:
    if args.action == "export":
        args.export_manifest = True
        args.benchmark = False
        args.replay = None
        return cmd_estimate(args)
    cfg = _apply_overrides(load_config(args.config), args)
    out = _outdir(args, cfg)
    dataset = load_dataset(cfg.dataset_path)
    model = models.ReplayAdapter.from_path(_require(args.outputs))
    records = estimation.estimate_dataset(
        model, dataset, cfg.pspec, cfg.estimation, cfg.global_seed, threads=cfg.threads
    )
    records_path = os.path.join(out, RECORDS_FILE)
    estimation.write_records(records, records_path)
    _emit(records_path)
    return 0


# -- parser --------------------------------------------------------------------------

def _add_common(sub, config_required: bool = True) -> None:
    sub.add_argument("--config", required=config_required, help="run config JSON")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--seed", type=int, default=None, help="override global seed")
    sub.add_argument("--threads", type=int, default=None, help="worker thread cap")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mupm",
        description="Estimate modality-wise output uncertainties of a two-input "
        "black-box model and fit a linear propagation model over them.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate per-sample branch variances")
    _add_common(p)
    p.add_argument("--export-manifest", action="store_true",
                   help="write perturbed inputs for external evaluation instead of running")
    p.add_argument("--replay", default=None, help="recorded outputs JSONL to replay")
    p.add_argument("--benchmark", action="store_true",
                   help="also write the repeated-joint-estimate benchmark")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("fit", help="fit the propagation model per fold and averaged")
    _add_common(p)
    p.add_argument("--records", default=None, help="uncertainty CSV (default <out>/uncertainties.csv)")
    p.add_argument("--benchmark-file", default=None, help="benchmark CSV for R^2 scoring")
    p.add_argument("--reduction", choices=estimation.REDUCTIONS, default=None)
    p.add_argument("--drop-zero-columns", action="store_true",
                   help="zero out coefficients of all-zero design columns instead of failing")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("calibrate", help="expected calibration error over uncertainty bins")
    _add_common(p)
    p.add_argument("--bins", type=int, default=10)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("anova", help="one-way ANOVA of coefficients across fit files")
    p.add_argument("fits", nargs="+", help="two or more fit.json files")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_anova)

    p = sub.add_parser("sweep", help="re-estimate at several resample sizes")
    _add_common(p)
    p.add_argument("--n-list", default=None, help="comma-separated resample sizes")
    p.add_argument("--holdout", type=int, default=0,
                   help="use only the last N samples (keeps the fit data disjoint)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("redundancy", help="coefficient/covariance redundancy verdicts")
    _add_common(p)
    p.add_argument("--tau-beta", type=float, default=0.05)
    p.add_argument("--tau-cov", type=float, default=0.05)
    p.set_defaults(func=cmd_redundancy)

    p = sub.add_parser("ablate", help="accuracy with one modality replaced by a neutral input")
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("derivatives", help="derivative instability probe")
    _add_common(p)
    p.add_argument("--step", type=float, default=1e-4, help="finite-difference step")
    p.add_argument(
        "--mode",
        choices=list(analysis.PROBE_MODES),
        default="auto",
        help="exact Jacobians, central differences, or pick automatically",
    )
    p.set_defaults(func=cmd_derivatives)

    p = sub.add_parser("report", help="render SVG charts and a summary from CSV artifacts")
    p.add_argument("--out", default=None, help="directory holding the CSV artifacts")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("manifest", help="export perturbed inputs / import recorded outputs")
    p.add_argument("action", choices=("export", "import"))
    _add_common(p)
    p.add_argument("--outputs", default=None, help="recorded outputs JSONL (import)")
    p.set_defaults(func=cmd_manifest)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "manifest" and args.action == "import" and not args.outputs:
        parser.error("manifest import requires --outputs")
    try:
        return args.func(args)
    except MupmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        log.debug("command failed", exc_info=True)
        return exit_code_for(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
