"""Seeded image/text perturbations and the correlated joint perturbation.

Image perturbations: circular shift, multiplicative intensity scale, additive
Gaussian noise whose std is drawn once per sample from a configured range.
Text perturbations: optional subset retention over token positions, then
independent synonym swaps. Every draw comes from a keyed stream (see rng.py),
so identical keys give bitwise-identical perturbations.

Joint perturbation couples the two modalities through a Gaussian copula: a
latent pair (z1, z2) with correlation ``joint_correlation`` is drawn per
replicate; z1 becomes the standardized noise of the first image component and
Phi(z2) becomes the swap uniform of the first swappable token. Quantile
mapping through each modality's own marginal keeps the single-branch
distributions unchanged, while the latent correlation induces a known output
correlation (see ``injected_output_correlation``) that analytic oracles and
the propagation fit can target exactly.

A copula over augmentation intensities alone would leave the two modalities'
realized perturbations uncorrelated to first order (the noise is symmetric
given its scale), so the coupling must act on the realizations themselves.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .data import InputPair, atomic_write_text
from .errors import EmptyAfterSubset, InvalidSpec
from .rng import RngStream

SAMPLE_SCALE_PURPOSE = "image-noise-std"


@dataclass
class PerturbationSpec:
    """Configuration for all three perturbation families."""

    image_noise_std_range: tuple[float, float] = (0.1, 0.1)
    image_shift_max: int = 0
    image_scale_range: tuple[float, float] = (1.0, 1.0)
    text_swap_prob: float = 0.1
    synonym_table: dict[int, tuple[int, ...]] = field(default_factory=dict)
    text_subset_keep: tuple[int, int] | None = None
    joint_correlation: float = 0.0
    n_resamples: int = 20

    def __post_init__(self):
        self.image_noise_std_range = (
            float(self.image_noise_std_range[0]),
            float(self.image_noise_std_range[1]),
        )
        self.image_scale_range = (
            float(self.image_scale_range[0]),
            float(self.image_scale_range[1]),
        )
        self.image_shift_max = int(self.image_shift_max)
        self.text_swap_prob = float(self.text_swap_prob)
        self.joint_correlation = float(self.joint_correlation)
        self.n_resamples = int(self.n_resamples)
        self.synonym_table = {
            int(k): tuple(int(v) for v in vs) for k, vs in self.synonym_table.items()
        }
        if self.text_subset_keep is not None:
            self.text_subset_keep = (
                int(self.text_subset_keep[0]),
                int(self.text_subset_keep[1]),
            )

    def validate(self) -> None:
        lo, hi = self.image_noise_std_range
        if not (0.0 <= lo <= hi) or not math.isfinite(hi):
            raise InvalidSpec(f"bad image_noise_std_range {self.image_noise_std_range}")
        if self.image_shift_max < 0:
            raise InvalidSpec("image_shift_max must be >= 0")
        slo, shi = self.image_scale_range
        if not (0.0 <= slo <= shi) or not math.isfinite(shi):
            raise InvalidSpec(f"bad image_scale_range {self.image_scale_range}")
        if not (0.0 <= self.text_swap_prob <= 1.0):
            raise InvalidSpec("text_swap_prob must lie in [0, 1]")
        for token, subs in self.synonym_table.items():
            if token < 0 or len(subs) == 0 or any(s < 0 for s in subs):
                raise InvalidSpec(f"bad synonym entry for token {token}")
        if self.text_subset_keep is not None:
            kmin, kmax = self.text_subset_keep
            if not (0 <= kmin <= kmax):
                raise InvalidSpec(f"bad text_subset_keep {self.text_subset_keep}")
        if not (-1.0 <= self.joint_correlation <= 1.0):
            raise InvalidSpec("joint_correlation must lie in [-1, 1]")
        if self.n_resamples < 2:
            raise InvalidSpec("n_resamples must be >= 2")


def _as_generator(stream) -> np.random.Generator:
    if isinstance(stream, RngStream):
        return stream.generator()
    if isinstance(stream, np.random.Generator):
        return stream
    raise InvalidSpec(f"stream must be RngStream or Generator, got {type(stream)!r}")


def sample_noise_std(spec: PerturbationSpec, stream: RngStream) -> float:
    """Per-sample noise std, drawn once per sample and shared by all branches."""
    lo, hi = spec.image_noise_std_range
    if hi == lo:
        return lo
    return float(stream.sample_scoped(SAMPLE_SCALE_PURPOSE).uniform(lo, hi))


def perturb_image(
    image: np.ndarray,
    spec: PerturbationSpec,
    stream,
    scale_override: float | None = None,
    *,
    copula_noise: float | None = None,
) -> np.ndarray:
    """Return a perturbed copy of ``image``.

    Draw order is fixed: circular shift offsets (one per axis, only when
    image_shift_max > 0), intensity scale factor (only when the range is
    non-degenerate), then the Gaussian noise field. ``scale_override`` fixes
    the noise std; otherwise it is the per-sample draw from
    image_noise_std_range. ``copula_noise`` replaces the first component of
    the standardized noise field (joint-branch coupling).
    """
    gen = _as_generator(stream)
    if scale_override is not None:
        std = float(scale_override)
        if std < 0:
            raise InvalidSpec("scale_override must be >= 0")
    elif isinstance(stream, RngStream):
        std = sample_noise_std(spec, stream)
    elif spec.image_noise_std_range[0] == spec.image_noise_std_range[1]:
        std = spec.image_noise_std_range[0]
    else:
        raise InvalidSpec("scale_override required when called with a bare generator")

    out = np.array(image, dtype=np.float64, copy=True)
    if spec.image_shift_max > 0:
        shifts = [
            int(gen.integers(-spec.image_shift_max, spec.image_shift_max + 1))
            for _ in range(out.ndim)
        ]
        out = np.roll(out, shifts, axis=tuple(range(out.ndim)))
    slo, shi = spec.image_scale_range
    if shi > slo:
        out *= gen.uniform(slo, shi)
    elif slo != 1.0:
        out *= slo
    if std > 0.0:
        noise = gen.standard_normal(out.shape)
        if copula_noise is not None:
            noise.flat[0] = copula_noise
        out += std * noise
    return out


def perturb_text(
    text: tuple[int, ...],
    spec: PerturbationSpec,
    stream,
    intensity_override: float | None = None,
    *,
    copula_uniform: float | None = None,
) -> tuple[int, ...]:
    """Return a perturbed copy of the token sequence.

    When text_subset_keep is set, a uniformly drawn subset of token positions
    is retained first (order preserved); each surviving token with a synonym
    entry is then independently swapped with probability
    ``intensity_override`` or text_swap_prob. A token swaps when its uniform
    falls in the upper tail (u >= 1 - p), so larger copula latents mean more
    perturbation. ``copula_uniform`` replaces the uniform of the first
    swappable token (joint-branch coupling).
    """
    gen = _as_generator(stream)
    prob = spec.text_swap_prob if intensity_override is None else float(intensity_override)
    if not (0.0 <= prob <= 1.0):
        raise InvalidSpec("swap probability must lie in [0, 1]")

    tokens = list(text)
    if spec.text_subset_keep is not None:
        kmin, kmax = spec.text_subset_keep
        count = int(gen.integers(kmin, kmax + 1)) if kmax > kmin else kmin
        if count <= 0:
            raise EmptyAfterSubset("subset retention would empty the token sequence")
        count = min(count, len(tokens))
        keep = np.sort(gen.choice(len(tokens), size=count, replace=False))
        tokens = [tokens[i] for i in keep]

    if prob == 0.0 or not spec.synonym_table:
        return tuple(tokens)

    uniforms = gen.random(len(tokens))
    if copula_uniform is not None:
        for i, token in enumerate(tokens):
            if token in spec.synonym_table:
                uniforms[i] = copula_uniform
                break
    out: list[int] = []
    for token, u in zip(tokens, uniforms):
        subs = spec.synonym_table.get(token)
        if subs is not None and u >= 1.0 - prob:
            if len(subs) == 1:
                token = subs[0]
            else:
                token = subs[int(gen.integers(0, len(subs)))]
        out.append(token)
    return tuple(out)


def copula_latents(rho: float, gen: np.random.Generator) -> tuple[float, float]:
    """Draw a standard bivariate Gaussian pair with correlation ``rho``."""
    w1 = float(gen.standard_normal())
    w2 = float(gen.standard_normal())
    return w1, rho * w1 + math.sqrt(max(0.0, 1.0 - rho * rho)) * w2


def perturb_joint(
    pair: InputPair, spec: PerturbationSpec, stream: RngStream
) -> tuple[np.ndarray, tuple[int, ...]]:
    """Perturb both modalities with copula-coupled randomness.

    Draw order: latent pair, image perturbation draws, text perturbation
    draws, all from the single joint stream.
    """
    if not isinstance(stream, RngStream):
        raise InvalidSpec("perturb_joint requires an RngStream")
    gen = stream.generator()
    z1, z2 = copula_latents(spec.joint_correlation, gen)
    std = sample_noise_std(spec, stream)
    image = perturb_image(pair.image, spec, gen, scale_override=std, copula_noise=z1)
    text = perturb_text(pair.text, spec, gen, copula_uniform=float(ndtr(z2)))
    return image, text


def perturb_branch(
    pair: InputPair,
    spec: PerturbationSpec,
    global_seed: int,
    branch: str,
    replicate: int,
) -> tuple[np.ndarray, tuple[int, ...]]:
    """Perturbed inputs for one replicate of one branch.

    The image-only branch keeps the original text fixed, the text-only branch
    keeps the original image fixed, and the joint branch perturbs both. The
    stream key is branch-scoped, so changing one modality's settings never
    moves the other branch's draws.
    """
    from .rng import BRANCH_IMAGE, BRANCH_JOINT, BRANCH_TEXT, replicate_stream

    if branch == BRANCH_IMAGE:
        stream = replicate_stream(global_seed, pair.sample_id, branch, replicate, "image")
        return perturb_image(pair.image, spec, stream), pair.text
    if branch == BRANCH_TEXT:
        stream = replicate_stream(global_seed, pair.sample_id, branch, replicate, "text")
        return np.array(pair.image, copy=True), perturb_text(pair.text, spec, stream)
    if branch == BRANCH_JOINT:
        stream = replicate_stream(global_seed, pair.sample_id, branch, replicate, "joint")
        return perturb_joint(pair, spec, stream)
    raise InvalidSpec(f"unknown branch {branch!r}")


# -- latent-to-output correlation mapping --------------------------------------

def injected_output_correlation(rho_latent: float, swap_prob: float) -> float:
    """Output-level correlation produced by a given latent correlation.

    Exact for designs where the coupled components carry all the variance:
    a single-component image noise channel and a single swappable token with
    one synonym. With s = Phi^-1(1 - p), Cov(z1, 1{z2 >= s}) = rho * phi(s),
    and the swap indicator has std sqrt(p(1-p)).
    """
    p = float(swap_prob)
    if not (0.0 < p < 1.0):
        raise InvalidSpec("swap_prob must lie strictly inside (0, 1)")
    s = ndtri(1.0 - p)
    phi = math.exp(-0.5 * s * s) / math.sqrt(2.0 * math.pi)
    return float(rho_latent) * phi / math.sqrt(p * (1.0 - p))


def latent_for_output_correlation(rho_out: float, swap_prob: float) -> float:
    """Inverse of ``injected_output_correlation``; validates attainability."""
    unit = injected_output_correlation(1.0, swap_prob)
    rho_latent = float(rho_out) / unit
    if abs(rho_latent) > 1.0:
        raise InvalidSpec(
            f"output correlation {rho_out} not attainable at swap_prob={swap_prob}"
            f" (max {unit:.4f})"
        )
    return rho_latent


# -- synonym table files --------------------------------------------------------

def load_synonym_table(path: str) -> dict[int, tuple[int, ...]]:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise InvalidSpec("synonym table must be a JSON object")
    return {int(k): tuple(int(v) for v in vs) for k, vs in raw.items()}


def save_synonym_table(table: dict[int, tuple[int, ...]], path: str) -> None:
    atomic_write_text(
        path, json.dumps({str(k): list(v) for k, v in table.items()}, indent=2) + "\n"
    )
