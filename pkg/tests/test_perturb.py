import math

import numpy as np
import pytest

from mupm.data import InputPair
from mupm.errors import EmptyAfterSubset, InvalidSpec
from mupm.perturb import (
    PerturbationSpec,
    injected_output_correlation,
    latent_for_output_correlation,
    load_synonym_table,
    perturb_branch,
    perturb_image,
    perturb_joint,
    perturb_text,
    sample_noise_std,
    save_synonym_table,
)
from mupm.rng import (
    BRANCH_IMAGE,
    BRANCH_JOINT,
    BRANCH_TEXT,
    derive_seed,
    generator_for,
    replicate_stream,
)


def test_derive_seed_is_stable_and_key_sensitive():
    assert derive_seed(1, "a", 2) == derive_seed(1, "a", 2)
    assert derive_seed(1, "a", 2) != derive_seed(1, "a", 3)
    assert derive_seed(1, "a", 2) != derive_seed(1, "b", 2)
    # separator prevents "ab"+"c" colliding with "a"+"bc"
    assert derive_seed("ab", "c") != derive_seed("a", "bc")
    assert 0 <= derive_seed("x") < 2 ** 128


def test_stream_repeat_draws_are_bitwise_identical(sample_pair, basic_pspec):
    for branch in (BRANCH_IMAGE, BRANCH_TEXT, BRANCH_JOINT):
        img_a, txt_a = perturb_branch(sample_pair, basic_pspec, 3, branch, 4)
        img_b, txt_b = perturb_branch(sample_pair, basic_pspec, 3, branch, 4)
        assert np.array_equal(img_a, img_b)
        assert txt_a == txt_b


def test_replicates_differ(sample_pair, basic_pspec):
    img_0, _ = perturb_branch(sample_pair, basic_pspec, 3, BRANCH_IMAGE, 0)
    img_1, _ = perturb_branch(sample_pair, basic_pspec, 3, BRANCH_IMAGE, 1)
    assert not np.array_equal(img_0, img_1)


def test_image_branch_keeps_text_and_vice_versa(sample_pair, basic_pspec):
    img, txt = perturb_branch(sample_pair, basic_pspec, 0, BRANCH_IMAGE, 0)
    assert txt == sample_pair.text
    assert not np.array_equal(img, sample_pair.image)
    img, txt = perturb_branch(sample_pair, basic_pspec, 0, BRANCH_TEXT, 5)
    assert np.array_equal(img, sample_pair.image)


def test_branches_are_decoupled(sample_pair, basic_pspec):
    """Changing text settings must not move the image branch's draws."""
    img_before, _ = perturb_branch(sample_pair, basic_pspec, 9, BRANCH_IMAGE, 2)
    other = PerturbationSpec(
        image_noise_std_range=basic_pspec.image_noise_std_range,
        text_swap_prob=0.9,
        synonym_table={5: (17, 18), 9: (2,)},
    )
    img_after, _ = perturb_branch(sample_pair, other, 9, BRANCH_IMAGE, 2)
    assert np.array_equal(img_before, img_after)


def test_noise_marginal_matches_spec():
    spec = PerturbationSpec(image_noise_std_range=(0.3, 0.3))
    base = np.zeros(4)
    draws = np.stack(
        [
            perturb_image(base, spec, generator_for("mc", i), scale_override=0.3)
            for i in range(4000)
        ]
    )
    assert abs(draws.std(ddof=1) - 0.3) < 0.01
    assert abs(draws.mean()) < 0.01


def test_per_sample_scale_shared_across_branches():
    spec = PerturbationSpec(image_noise_std_range=(0.1, 0.5))
    streams = [
        replicate_stream(11, "s7", branch, rep, mod)
        for branch, rep, mod in [
            (BRANCH_IMAGE, 0, "image"),
            (BRANCH_IMAGE, 3, "image"),
            (BRANCH_JOINT, 1, "joint"),
            (BRANCH_TEXT, 2, "text"),
        ]
    ]
    stds = {sample_noise_std(spec, s) for s in streams}
    assert len(stds) == 1
    assert 0.1 <= stds.pop() <= 0.5
    # a different sample draws a different scale
    other = sample_noise_std(spec, replicate_stream(11, "s8", BRANCH_IMAGE, 0, "image"))
    assert other not in stds


def test_swap_frequency_matches_probability():
    spec = PerturbationSpec(text_swap_prob=0.25, synonym_table={3: (4,)})
    hits = sum(
        perturb_text((3,), spec, generator_for("swap", i))[0] == 4 for i in range(8000)
    )
    assert abs(hits / 8000 - 0.25) < 0.02


def test_swap_uses_upper_tail():
    """u >= 1 - p swaps, so copula_uniform pins the outcome exactly."""
    spec = PerturbationSpec(text_swap_prob=0.3, synonym_table={3: (4,)})
    gen = generator_for("tail")
    assert perturb_text((3,), spec, gen, copula_uniform=0.71) == (4,)
    assert perturb_text((3,), spec, gen, copula_uniform=0.69) == (3,)


def test_tokens_without_synonyms_never_change():
    spec = PerturbationSpec(text_swap_prob=1.0, synonym_table={3: (4,)})
    out = perturb_text((9, 3, 9), spec, generator_for("fixed"))
    assert out == (9, 4, 9)


def test_subset_keep_preserves_order_and_raises_when_empty():
    spec = PerturbationSpec(text_subset_keep=(2, 2), synonym_table={})
    out = perturb_text((10, 11, 12, 13), spec, generator_for("subset", 0))
    assert len(out) == 2
    idx = [(10, 11, 12, 13).index(t) for t in out]
    assert idx == sorted(idx)

    empty = PerturbationSpec(text_subset_keep=(0, 0), synonym_table={})
    with pytest.raises(EmptyAfterSubset):
        perturb_text((10, 11), empty, generator_for("subset", 1))


def test_image_shift_rolls_without_changing_values():
    spec = PerturbationSpec(image_noise_std_range=(0.0, 0.0), image_shift_max=2)
    base = np.arange(6, dtype=np.float64)
    out = perturb_image(base, spec, generator_for("roll"), scale_override=0.0)
    assert sorted(out.tolist()) == base.tolist()


def test_correlation_map_round_trip_and_bounds():
    for p in (0.1, 0.3, 0.5, 0.7):
        for rho in (0.4, -0.4, 0.0):
            latent = latent_for_output_correlation(rho, p)
            assert injected_output_correlation(latent, p) == pytest.approx(rho, abs=1e-12)
    # max attainable at p=0.5 is phi(0)/0.5 = sqrt(2/pi) ~ 0.7979
    assert injected_output_correlation(1.0, 0.5) == pytest.approx(
        math.sqrt(2.0 / math.pi), abs=1e-12
    )
    with pytest.raises(InvalidSpec):
        latent_for_output_correlation(0.9, 0.5)
    with pytest.raises(InvalidSpec):
        injected_output_correlation(0.5, 0.0)


@pytest.mark.parametrize("rho_out", [0.5, -0.5])
def test_joint_draws_realize_requested_output_correlation(rho_out):
    """Monte Carlo: corr(first noise component, swap indicator) hits the target."""
    p = 0.5
    spec = PerturbationSpec(
        image_noise_std_range=(1.0, 1.0),
        text_swap_prob=p,
        synonym_table={3: (4,)},
        joint_correlation=latent_for_output_correlation(rho_out, p),
    )
    pair = InputPair(sample_id="mc", image=np.zeros(1), text=(3,))
    n = 40000
    noise = np.empty(n)
    swapped = np.empty(n)
    for r in range(n):
        img, txt = perturb_branch(pair, spec, 123, BRANCH_JOINT, r)
        noise[r] = img[0]
        swapped[r] = 1.0 if txt[0] == 4 else 0.0
    got = np.corrcoef(noise, swapped)[0, 1]
    assert got == pytest.approx(rho_out, abs=0.02)
    assert abs(swapped.mean() - p) < 0.02


def test_joint_requires_stream(sample_pair, basic_pspec):
    with pytest.raises(InvalidSpec):
        perturb_joint(sample_pair, basic_pspec, generator_for("bare"))


def test_unknown_branch_rejected(sample_pair, basic_pspec):
    with pytest.raises(InvalidSpec):
        perturb_branch(sample_pair, basic_pspec, 0, "sideways", 0)


def test_spec_validation_rejects_bad_ranges():
    with pytest.raises(InvalidSpec):
        PerturbationSpec(image_noise_std_range=(0.5, 0.1)).validate()
    with pytest.raises(InvalidSpec):
        PerturbationSpec(text_swap_prob=1.5).validate()
    with pytest.raises(InvalidSpec):
        PerturbationSpec(joint_correlation=1.2).validate()


def test_synonym_table_round_trip(tmp_path):
    table = {3: (4, 5), 10: (11,)}
    path = str(tmp_path / "syn.json")
    save_synonym_table(table, path)
    assert load_synonym_table(path) == table
