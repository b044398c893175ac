"""Static SVG charts for sweep and ablation results.

Output must be byte-identical across runs: the SVG hash salt is pinned, the
Date metadata field is suppressed, and files are written atomically. The
numeric values behind each chart are embedded as a JSON payload in the SVG's
Description metadata so downstream checks can read the plotted numbers back
without parsing picture geometry.
"""

from __future__ import annotations

import io
import json
import xml.etree.ElementTree as ET

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .analysis import ABLATION_MODES, AblationResult, SweepResult  # noqa: E402
from .data import atomic_write_text  # noqa: E402
from .errors import InvalidSpec  # noqa: E402

HASH_SALT = "mupm-figures"
DC_DESCRIPTION = "{http://purl.org/dc/elements/1.1/}description"


def _save_svg(fig, path: str, annotation: dict) -> None:
    buf = io.StringIO()
    with plt.rc_context({"svg.hashsalt": HASH_SALT}):
        fig.savefig(
            buf,
            format="svg",
            metadata={"Date": None, "Description": json.dumps(annotation, sort_keys=True)},
        )
    plt.close(fig)
    atomic_write_text(path, buf.getvalue())


def read_annotation(path: str) -> dict:
    """Parse the JSON payload back out of an SVG's Description metadata."""
    root = ET.parse(path).getroot()
    node = root.find(f".//{DC_DESCRIPTION}")
    if node is None or not node.text:
        raise InvalidSpec(f"no embedded annotation in {path}")
    return json.loads(node.text)


def render_sweep_figure(result: SweepResult, path: str) -> dict:
    """Line chart of mean predicted norm (error bars: across-sample std) per n,
    with the benchmark mean as a horizontal reference line."""
    ns = [p.n for p in result.points]
    means = [p.mean_norm for p in result.points]
    stds = [p.std_norm for p in result.points]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.errorbar(
        ns, means, yerr=stds, marker="o", capsize=3, label="predicted overall"
    )
    ax.axhline(
        result.benchmark_mean_norm, linestyle="--", color="tab:red", label="benchmark"
    )
    ax.set_xlabel("resample size n")
    ax.set_ylabel("mean L2 norm of overall uncertainty")
    ax.legend(loc="best")
    fig.tight_layout()
    annotation = {
        "kind": "sweep",
        "n": ns,
        "mean_norm": means,
        "std_norm": stds,
        "mean_abs_dev": [p.mean_abs_dev for p in result.points],
        "line_gap": [p.line_gap for p in result.points],
        "benchmark_mean_norm": result.benchmark_mean_norm,
    }
    _save_svg(fig, path, annotation)
    return annotation


def render_ablation_figure(result: AblationResult, path: str) -> dict:
    """Box summary of per-fold accuracies for each input mode."""
    data = [result.modes[mode].fold_accuracies for mode in ABLATION_MODES]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.boxplot(data, tick_labels=list(ABLATION_MODES), showmeans=True)
    ax.set_ylabel("accuracy")
    ax.set_ylim(-0.05, 1.05)
    fig.tight_layout()
    annotation = {
        "kind": "ablation",
        "modes": {
            mode: {
                "mean_accuracy": result.modes[mode].mean_accuracy,
                "std_accuracy": result.modes[mode].std_accuracy,
                "fold_accuracies": result.modes[mode].fold_accuracies,
            }
            for mode in ABLATION_MODES
        },
    }
    _save_svg(fig, path, annotation)
    return annotation
