import numpy as np
import pytest

from mupm.data import InputPair
from mupm.models import ModelSpec
from mupm.perturb import PerturbationSpec


@pytest.fixture
def linear_model() -> ModelSpec:
    return ModelSpec(
        kind="synthetic-linear",
        weights_image=[[2.0, 0.0], [0.0, 1.0]],
        weights_text=[[0.6, 0.0], [0.0, 0.5]],
        bias=[0.0, 0.1],
    )


@pytest.fixture
def softmax_model() -> ModelSpec:
    return ModelSpec(
        kind="synthetic-softmax",
        weights_image=[[1.0, -0.5], [-0.8, 0.7], [0.3, 0.9]],
        weights_text=[[0.4, -0.3], [0.2, 0.5], [-0.6, 0.1]],
        bias=[0.1, -0.1, 0.0],
        interaction=0.5,
    )


@pytest.fixture
def saturating_model() -> ModelSpec:
    return ModelSpec(
        kind="synthetic-saturating",
        weights_image=[[1.2, -0.6], [-0.4, 1.0]],
        weights_text=[[0.8, 0.5], [-0.7, 1.1]],
        bias=[0.05, -0.05],
        gain=10.0,
    )


@pytest.fixture
def sample_pair() -> InputPair:
    return InputPair(sample_id="s0", image=np.array([0.4, -0.2]), text=(5, 9), label=1)


@pytest.fixture
def basic_pspec() -> PerturbationSpec:
    return PerturbationSpec(
        image_noise_std_range=(0.1, 0.1),
        text_swap_prob=0.5,
        synonym_table={5: (6,), 9: (11,)},
    )
