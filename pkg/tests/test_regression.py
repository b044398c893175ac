import numpy as np
import pytest

from mupm.errors import (
    ConstantBenchmark,
    DegenerateDesign,
    LengthMismatch,
    ReductionMismatch,
    TooFewObservations,
)
from mupm.estimation import UncertaintyRecord
from mupm.regression import (
    MupmFit,
    build_design,
    fit_from_jsonable,
    fit_ols,
    fit_records,
    fit_to_jsonable,
    load_fit,
    predict_overall,
    r_squared,
    record_norms,
    save_fit,
)


def normal_equations(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Independent reference solver: beta = (X'X)^-1 X'y."""
    return np.linalg.solve(x.T @ x, x.T @ y)


def make_record(sample_id, vi, vt, vj):
    vi = np.asarray(vi, dtype=float)
    vt = np.asarray(vt, dtype=float)
    vj = np.asarray(vj, dtype=float)
    return UncertaintyRecord(
        sample_id=sample_id,
        var_image=vi,
        var_text=vt,
        var_joint=vj,
        cov_term=np.sqrt(vi) * np.sqrt(vt),
        paired_corr=np.zeros_like(vi),
        degenerate=np.zeros(vi.shape, dtype=bool),
    )


def test_qr_matches_normal_equations_on_100_systems():
    gen = np.random.Generator(np.random.PCG64(42))
    worst = 0.0
    for _ in range(100):
        m = int(gen.integers(8, 60))
        x = gen.uniform(0.1, 3.0, size=(m, 3))
        beta_true = gen.uniform(-2.0, 2.0, size=3)
        y = x @ beta_true + 0.05 * gen.standard_normal(m)
        fit = fit_ols(x, y)
        want = normal_equations(x, y)
        worst = max(worst, float(np.abs(fit.beta - want).max()))
        # residual orthogonality: X'r = 0 at the optimum
        r = y - x @ fit.beta
        assert np.abs(x.T @ r).max() < 1e-8 * max(np.abs(y).max(), 1.0)
    assert worst < 1e-8


def test_exact_solution_recovered():
    x = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]])
    y = x @ np.array([2.0, -1.0, 0.5])
    fit = fit_ols(x, y)
    np.testing.assert_allclose(fit.beta, [2.0, -1.0, 0.5], atol=1e-13)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.residual_std == pytest.approx(0.0, abs=1e-12)


def test_scale_equivariance():
    gen = np.random.Generator(np.random.PCG64(7))
    x = gen.uniform(0.5, 2.0, size=(30, 3))
    y = x @ np.array([1.0, 0.8, 0.3]) + 0.01 * gen.standard_normal(30)
    base = fit_ols(x, y).beta
    np.testing.assert_allclose(fit_ols(x * 4.0, y).beta, base / 4.0, rtol=1e-10)
    np.testing.assert_allclose(fit_ols(x, y * 4.0).beta, base * 4.0, rtol=1e-10)


def test_degenerate_designs_rejected():
    x = np.ones((10, 3))
    x[:, 1] = 2.0 * x[:, 0]  # duplicated direction
    x[:, 2] = np.linspace(0.1, 1.0, 10)
    with pytest.raises(DegenerateDesign):
        fit_ols(x, np.ones(10))
    z = np.ones((10, 3))
    z[:, 1] = 0.0
    z[:, 2] = np.linspace(0.1, 1.0, 10)
    with pytest.raises(DegenerateDesign):
        fit_ols(z, np.ones(10))
    with pytest.raises(TooFewObservations):
        fit_ols(np.eye(3)[:2], np.ones(2))


def test_build_design_per_dimension_and_norm():
    rec = make_record("a", [1.0, 4.0], [9.0, 16.0], [10.0, 20.0])
    x, y = build_design([rec], "per-dimension")
    assert x.shape == (2, 3)
    np.testing.assert_allclose(x[0], [1.0, 9.0, 3.0])
    np.testing.assert_allclose(x[1], [4.0, 16.0, 8.0])
    np.testing.assert_allclose(y, [10.0, 20.0])

    x, y = build_design([rec], "l2-norm")
    assert x.shape == (1, 3)
    np.testing.assert_allclose(x[0, 0], np.hypot(1.0, 4.0))
    np.testing.assert_allclose(y[0], np.hypot(10.0, 20.0))


def test_fit_records_recovers_exact_law():
    gen = np.random.Generator(np.random.PCG64(3))
    records = []
    for i in range(40):
        vi = gen.uniform(0.05, 0.5, size=2)
        vt = gen.uniform(0.05, 0.5, size=2)
        cov = np.sqrt(vi) * np.sqrt(vt)
        vj = 1.0 * vi + 1.0 * vt + 0.6 * cov
        records.append(make_record(f"s{i}", vi, vt, vj))
    fit = fit_records(records)
    np.testing.assert_allclose(fit.beta, [1.0, 1.0, 0.6], atol=1e-10)
    assert fit.norms is not None and fit.norms["joint"] > 0


def test_fit_records_drop_zero_gives_zero_coefficients():
    gen = np.random.Generator(np.random.PCG64(4))
    records = []
    for i in range(20):
        vi = gen.uniform(0.1, 0.4, size=2)
        vt = np.zeros(2)
        vj = 0.97 * vi
        records.append(make_record(f"s{i}", vi, vt, vj))
    with pytest.raises(DegenerateDesign):
        fit_records(records)  # strict path refuses the dead columns
    fit = fit_records(records, on_degenerate="drop-zero")
    assert fit.beta2 == 0.0
    assert fit.beta3 == 0.0
    assert fit.beta1 == pytest.approx(0.97, abs=1e-10)
    assert set(fit.dropped) == {"var_text", "cov_term"}


def test_predict_overall_and_clamping():
    fit = MupmFit(
        beta1=1.0, beta2=1.0, beta3=-5.0, r_squared=0.9, residual_std=0.1,
        n_observations=10, reduction="per-dimension",
    )
    rec = make_record("p", [0.01, 0.5], [0.01, 0.5], [0.02, 1.0])
    pred = predict_overall(fit, rec)
    assert pred.values[0] == 0.0  # raw value negative, clamped
    assert pred.clamped.tolist() == [True, True]
    with pytest.raises(ReductionMismatch):
        predict_overall(fit, rec, reduction="l2-norm")


def test_r_squared_reference_and_errors():
    bench = np.array([1.0, 2.0, 3.0, 4.0])
    pred = np.array([1.1, 1.9, 3.2, 3.8])
    want = 1.0 - np.sum((bench - pred) ** 2) / np.sum((bench - bench.mean()) ** 2)
    assert r_squared(pred, bench) == pytest.approx(want, abs=1e-15)
    with pytest.raises(LengthMismatch):
        r_squared(pred, bench[:3])
    with pytest.raises(ConstantBenchmark):
        r_squared(np.array([1.0, 1.0]), np.array([2.0, 2.0]))


def test_record_norms():
    rec = make_record("n", [3.0, 4.0], [1.0, 1.0], [5.0, 12.0])
    norms = record_norms([rec])
    assert norms["image"] == pytest.approx(5.0)
    assert norms["joint"] == pytest.approx(13.0)
    assert set(norms) == {"image", "text", "cov", "joint"}


def test_fit_serialization_round_trip(tmp_path):
    fit = MupmFit(
        beta1=1.1, beta2=0.9, beta3=0.4, r_squared=0.95, residual_std=0.02,
        n_observations=120, reduction="per-dimension",
        norms={"image": 1.0, "text": 0.5, "cov": 0.7, "joint": 2.0},
        stderr=(0.01, 0.02, 0.03), dropped=(), clamp_rate=0.0,
    )
    clone = fit_from_jsonable(fit_to_jsonable(fit))
    assert clone == fit
    path = str(tmp_path / "fit.json")
    save_fit(fit, path)
    assert load_fit(path) == fit
