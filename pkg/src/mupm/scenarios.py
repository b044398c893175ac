"""Ready-made synthetic scenarios with analytically known behavior.

Each builder returns a Scenario bundling a model spec, a dataset, a
perturbation spec, and the constants needed to compute closed-form
expectations. They exist so validation suites and demos exercise the full
pipeline against ground truth instead of eyeballing output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import InputPair
from .errors import InvalidSpec
from .estimation import UncertaintyRecord
from .models import ModelSpec
from .perturb import PerturbationSpec, latent_for_output_correlation
from .rng import generator_for


@dataclass
class Scenario:
    model: ModelSpec
    dataset: list[InputPair]
    pspec: PerturbationSpec
    expected: dict = field(default_factory=dict)


def _swap_std(prob: float, delta: float) -> float:
    return delta * float(np.sqrt(prob * (1.0 - prob)))


# -- scalar-channel linear model: exact first-order propagation ----------------------

def delta_oracle_scenario(rho_out: float = 0.0, noise_std: float = 0.1) -> Scenario:
    """Linear model reading one image component and one swappable token.

    Every output dimension reads the same two scalar channels, so the injected
    output correlation applies to all dimensions and the propagated variance
    a^2 s_I^2 + b^2 s_T^2 + 2 a b rho s_I s_T is exact per dimension.
    """
    a = np.array([2.0, 1.0, 0.5])
    b = np.array([0.6, 1.2, 0.9])
    d_image, d_text = 4, 3
    w = np.zeros((3, d_image))
    w[:, 0] = a
    v = np.zeros((3, d_text))
    v[:, 0] = b
    model = ModelSpec(kind="synthetic-linear", weights_image=w, weights_text=v, bias=np.zeros(3))
    swap_prob, delta = 0.5, 1.0
    pspec = PerturbationSpec(
        image_noise_std_range=(noise_std, noise_std),
        text_swap_prob=swap_prob,
        synonym_table={7: (8,)},
        joint_correlation=latent_for_output_correlation(rho_out, swap_prob),
    )
    pair = InputPair(sample_id="s0", image=np.array([1.0, 0.3, 0.2, 0.5]), text=(7, 3, 4))
    sigma_t = _swap_std(swap_prob, delta)
    expected = {
        "a": a,
        "b": b,
        "sigma_image": noise_std,
        "sigma_text": sigma_t,
        "rho": rho_out,
        "var_image": (a * noise_std) ** 2,
        "var_text": (b * sigma_t) ** 2,
        "var_joint": (a * noise_std) ** 2
        + (b * sigma_t) ** 2
        + 2.0 * a * b * rho_out * noise_std * sigma_t,
    }
    return Scenario(model=model, dataset=[pair], pspec=pspec, expected=expected)


def recovery_scenario(m: int = 200, rho_out: float = 0.5, seed: int = 1) -> Scenario:
    """Heterogeneous linear scenario for coefficient recovery.

    Per-sample image-noise std is drawn from a range and the text swap
    distance cycles through 1..5 via the token assignment, so every design
    column has genuine spread. Ten output dimensions split into modality-pure
    anchors and mixed-ratio channels keep the columns well separated; the
    propagation law is exact per dimension with coefficients (1, 1, 2 rho).
    """
    deltas = (1, 2, 3, 4, 5)
    alt_deltas = (2, 3, 1, 5, 4)
    synonyms = {20 + j: (20 + j + d,) for j, d in enumerate(deltas)}
    synonyms.update({40 + j: (40 + j + d,) for j, d in enumerate(alt_deltas)})
    # Dims 0-2 are image-only anchors on separate noise components, dims 3-5
    # text-only anchors on the independently swapped token, dims 6-9 mix both
    # modalities through the correlated channel pair (image component 0, token
    # position 0) at several weight ratios. The modality-pure dimensions pin
    # the marginal coefficients; only the mixed ones carry the covariance
    # regressor, so its coefficient is identified without leaning on the
    # noisier marginal columns.
    # mixed weights stay small so the anchors keep the marginal-column
    # leverage, and the image/text shares are balanced against the average
    # perturbation scales to sharpen the covariance column
    mixed = [(0.7, 0.24), (0.55, 0.18), (0.45, 0.15), (0.35, 0.11)]
    w = np.zeros((10, 3))
    v = np.zeros((10, 2))
    w[0, 0], w[1, 1], w[2, 2] = 1.5, 1.2, 0.9
    v[3, 1], v[4, 1], v[5, 1] = 1.2, 1.0, 0.8
    for k, (a, b) in enumerate(mixed):
        w[6 + k, 0] = a
        v[6 + k, 0] = b
    model = ModelSpec(
        kind="synthetic-linear", weights_image=w, weights_text=v, bias=np.zeros(10)
    )
    swap_prob = 0.5
    pspec = PerturbationSpec(
        image_noise_std_range=(0.2, 0.5),
        text_swap_prob=swap_prob,
        synonym_table=synonyms,
        joint_correlation=latent_for_output_correlation(rho_out, swap_prob),
    )
    gen = generator_for(seed, "recovery-inputs")
    dataset = [
        InputPair(
            sample_id=f"s{i:04d}",
            image=gen.uniform(-1.0, 1.0, size=3),
            text=(20 + i % len(deltas), 40 + (i // len(deltas)) % len(alt_deltas)),
        )
        for i in range(m)
    ]
    expected = {
        "beta": (1.0, 1.0, 2.0 * rho_out),
        "weights_image": w,
        "weights_text": v,
        "deltas": deltas,
        "alt_deltas": alt_deltas,
        "swap_prob": swap_prob,
        "rho": rho_out,
    }
    return Scenario(model=model, dataset=dataset, pspec=pspec, expected=expected)


# -- nonlinear scenarios ---------------------------------------------------------------

SOFTMAX_SCALES = (1.0, 3.0, 8.0)


def softmax_scenario(scale: float = 1.0, m: int = 60, seed: int = 2) -> Scenario:
    """Softmax model with an input-product interaction; scale inflates both
    perturbation intensities, pushing the first-order propagation out of its
    validity region.

    Every fourth sample carries tokens with no synonym entry, so its text
    branch cannot move and the row pins the image coefficient; the wide image
    noise range spreads the image column independently of the text column,
    keeping the regression identifiable on small folds. Scale widens the
    image noise and lengthens the synonym jumps while the swap probability
    stays at one half, where the binomial variance estimate is most stable.
    """
    if scale <= 0.0:
        raise InvalidSpec("scale must be > 0")
    model = ModelSpec(
        kind="synthetic-softmax",
        weights_image=[[1.0, -0.5], [-0.8, 0.7], [0.3, 0.9]],
        weights_text=[[0.15, -0.1], [0.08, 0.2], [-0.22, 0.05]],
        bias=[0.1, -0.1, 0.0],
        interaction=1.0,
    )
    step = max(1, int(round(scale)))
    pspec = PerturbationSpec(
        image_noise_std_range=(0.01 * scale, 0.1 * scale),
        text_swap_prob=0.5,
        synonym_table={5: (5 + step,), 6: (6 + 2 * step,), 8: (8 + 3 * step,)},
        joint_correlation=0.0,
    )
    gen = generator_for(seed, "softmax-inputs")
    dataset = []
    for i in range(m):
        if i % 4 == 0:
            text = (3, 3)
        else:
            text = (int(gen.choice([5, 6, 8])), int(gen.choice([5, 6, 8])))
        dataset.append(
            InputPair(
                sample_id=f"s{i:04d}",
                image=gen.normal(0.0, 1.0, size=2),
                text=text,
            )
        )
    return Scenario(
        model=model, dataset=dataset, pspec=pspec, expected={"scale": scale}
    )


def saturating_scenario(m: int = 60, gain: float = 10.0, seed: int = 3) -> Scenario:
    """High-gain tanh-squashed model over inputs spanning the saturation region.

    Samples near a logit zero crossing see steep local slopes while saturated
    samples see nearly flat ones, giving per-sample derivative magnitudes with
    spread larger than their mean.
    """
    model = ModelSpec(
        kind="synthetic-saturating",
        weights_image=[[1.2, -0.6], [-0.4, 1.0]],
        weights_text=[[0.8, 0.5], [-0.7, 1.1]],
        bias=[0.0, 0.0],
        gain=gain,
    )
    pspec = PerturbationSpec(
        image_noise_std_range=(0.05, 0.05),
        text_swap_prob=0.2,
        synonym_table={1: (2,), 2: (3,), 3: (1,)},
    )
    gen = generator_for(seed, "saturating-inputs")
    dataset = [
        InputPair(
            sample_id=f"s{i:04d}",
            image=gen.uniform(-2.0, 2.0, size=2),
            text=(int(gen.integers(0, 5)), int(gen.integers(0, 5))),
        )
        for i in range(m)
    ]
    return Scenario(model=model, dataset=dataset, pspec=pspec, expected={"gain": gain})


# -- redundancy / ablation scenarios ---------------------------------------------------

def text_blind_scenario(m: int = 120, seed: int = 4) -> Scenario:
    """Model with zero text weights and exactly balanced labels.

    Text perturbation never moves the output, so the text variance column is
    exactly zero; ablating the image leaves a constant predictor whose
    accuracy sits at chance because every class appears equally often.
    """
    k = 4
    model = ModelSpec(
        kind="synthetic-linear",
        weights_image=[[0.5], [1.0], [1.5], [2.0]],
        weights_text=[[0.0], [0.0], [0.0], [0.0]],
        bias=[0.01, 0.02, 0.03, 0.04],
    )
    pspec = PerturbationSpec(
        image_noise_std_range=(0.1, 0.4),
        text_swap_prob=0.5,
        synonym_table={1: (2,), 2: (1,)},
    )
    gen = generator_for(seed, "text-blind-inputs")
    dataset = [
        InputPair(
            sample_id=f"s{i:04d}",
            image=np.array([float(gen.uniform(-1.0, 1.0))]),
            text=(int(gen.integers(1, 3)),),
            label=i % k,
        )
        for i in range(m)
    ]
    return Scenario(model=model, dataset=dataset, pspec=pspec, expected={"k": k})


def balanced_scenario(m: int = 120, rho_out: float = 0.5, seed: int = 5) -> Scenario:
    """Four-class model where each modality carries one label bit.

    The class reads as 2*a + b with bit a in the image sign and bit b in the
    token value (1 or 2). Weight patterns are shifted to be strictly positive,
    which leaves the argmax unchanged (the shift adds the same amount to every
    logit) but keeps all per-dimension image/text weight products positive, so
    the injected covariance enters every output dimension with one sign.
    """
    w_pattern = np.array([-1.0, -1.0, 1.0, 1.0])
    v_pattern = np.array([-1.0, 1.0, -1.0, 1.0])
    w = (w_pattern + 1.5).reshape(4, 1)
    v = (v_pattern + 1.5).reshape(4, 1)
    # center the text term at the token midpoint 1.5 so y=1 and y=2 are symmetric
    bias = (-1.5 * v).ravel()
    model = ModelSpec(
        kind="synthetic-linear", weights_image=w, weights_text=v, bias=bias
    )
    swap_prob = 0.5
    pspec = PerturbationSpec(
        image_noise_std_range=(0.2, 0.6),
        text_swap_prob=swap_prob,
        synonym_table={1: (3,), 2: (3,)},  # both swaps move the value upward
        joint_correlation=latent_for_output_correlation(rho_out, swap_prob),
    )
    gen = generator_for(seed, "balanced-inputs")
    dataset = []
    for i in range(m):
        bit_image = int(gen.integers(0, 2))
        bit_text = int(gen.integers(0, 2))
        dataset.append(
            InputPair(
                sample_id=f"s{i:04d}",
                image=np.array([2.0 * bit_image - 1.0]),
                text=(bit_text + 1,),
                label=2 * bit_image + bit_text,
            )
        )
    return Scenario(
        model=model,
        dataset=dataset,
        pspec=pspec,
        expected={"k": 4, "rho": rho_out},
    )


# -- record-level generator for coefficient-robustness trials --------------------------

def propagation_records(
    m: int,
    beta: tuple[float, float, float] = (1.0, 1.0, 0.5),
    rel_noise: float = 0.02,
    seed: int = 0,
    var_range: tuple[float, float] = (0.02, 0.5),
    levels: int | None = None,
) -> list[UncertaintyRecord]:
    """Uncertainty records drawn from a known propagation law.

    Variances are log-uniform over var_range, the covariance regressor is the
    product of the two standard deviations, and the joint variance follows
    the given beta with multiplicative Gaussian noise. Useful when a trial
    needs many independent fits without paying for model evaluations.

    With levels set, both variances are instead tiled in a balanced cycle
    over a log-spaced grid of that many points, so every cross-validation
    fold sees nearly the same design and the fitted coefficients share one
    fluctuation direction.
    """
    if m < 1:
        raise InvalidSpec("m must be >= 1")
    if not (0.0 < var_range[0] < var_range[1]):
        raise InvalidSpec("var_range must be increasing and positive")
    if levels is not None and levels < 2:
        raise InvalidSpec("levels must be >= 2")
    gen = generator_for(seed, "propagation-records")
    if levels is None:
        v1 = np.exp(gen.uniform(np.log(var_range[0]), np.log(var_range[1]), size=m))
        v2 = np.exp(gen.uniform(np.log(var_range[0]), np.log(var_range[1]), size=m))
    else:
        grid = np.exp(np.linspace(np.log(var_range[0]), np.log(var_range[1]), levels))
        idx = np.arange(m)
        v1 = grid[idx % levels]
        v2 = grid[(idx // levels) % levels]
    x3 = np.sqrt(v1 * v2)
    clean = beta[0] * v1 + beta[1] * v2 + beta[2] * x3
    joint = np.maximum(clean * (1.0 + rel_noise * gen.standard_normal(m)), 1e-9)
    records = []
    for i in range(m):
        records.append(
            UncertaintyRecord(
                sample_id=f"r{i:04d}",
                var_image=np.array([v1[i]]),
                var_text=np.array([v2[i]]),
                var_joint=np.array([joint[i]]),
                cov_term=np.array([x3[i]]),
                paired_corr=np.array([0.0]),
                degenerate=np.array([False]),
            )
        )
    return records
