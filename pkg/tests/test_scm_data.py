import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causalflow import scm_data as sd
from causalflow.errors import ContractError, FitError, GenerationError, SchemaError


def _cfg(**over):
    return sd.default_config(n=over.pop("n", 200), d_x=over.pop("d_x", 4),
                             seed=over.pop("seed", 0), **over)


def test_zero_coefficient_arms():
    cfg = sd.DgpConfig(n=50, d_x=3, beta=(0.0,) * 3, omega=0.0,
                       w_shift=(0.0,) * 3, noise_sd=0.0, seed=1)
    ds = sd.generate_ihdp_like(cfg)
    assert np.all(ds.y[ds.a == 1] == 0.0)  # linear arm hits x@0 - 0
    assert np.all(ds.y[ds.a == 0] == 1.0)  # exponential arm hits exp(0)


def test_noise_scale_matches_config():
    cfg = _cfg(n=10000, noise_sd=0.7)
    ds = sd.generate_ihdp_like(cfg)
    eps = ds.y - np.where(ds.a == 1, ds.mu1, ds.mu0)
    assert abs(np.std(eps) - 0.7) / 0.7 < 0.10


def test_counterfactual_shares_noise():
    ds = sd.generate_ihdp_like(_cfg(n=500))
    eps = ds.y - np.where(ds.a == 1, ds.mu1, ds.mu0)
    np.testing.assert_allclose(ds.ycf, np.where(ds.a == 1, ds.mu0, ds.mu1) + eps,
                               rtol=1e-12, atol=1e-12)


def test_ihdp_scale_shape():
    ds = sd.generate_ihdp_like(sd.default_config(n=747, d_x=25, seed=3))
    assert ds.x.shape == (747, 25)
    assert ds.a.shape == ds.y.shape == (747,)


def test_generation_deterministic():
    d1 = sd.generate_ihdp_like(_cfg(seed=9))
    d2 = sd.generate_ihdp_like(_cfg(seed=9))
    assert np.array_equal(d1.x, d2.x) and np.array_equal(d1.a, d2.a)
    assert np.array_equal(d1.y, d2.y) and np.array_equal(d1.ycf, d2.ycf)


def test_logistic_propensity_keeps_both_arms():
    cfg = _cfg(n=4000, propensity="logistic", propensity_coef=(3.0, -2.0, 1.0, 0.5))
    ds = sd.generate_ihdp_like(cfg)
    share = ds.a.mean()
    assert 0.05 < share < 0.95
    assert len(np.unique(ds.a)) == 2


def test_overflow_reports_row():
    cfg = sd.DgpConfig(n=10, d_x=2, beta=(400.0, 400.0), omega=0.0,
                       w_shift=(0.0, 0.0), noise_sd=1.0, seed=0)
    with pytest.raises(GenerationError, match="row"):
        sd.generate_ihdp_like(cfg)


def test_config_validation():
    with pytest.raises(ContractError):
        sd.DgpConfig(n=0, d_x=2, beta=(0.0, 0.0), omega=0.0, w_shift=(0.0, 0.0))
    with pytest.raises(ContractError):
        sd.DgpConfig(n=5, d_x=2, beta=(0.0,), omega=0.0, w_shift=(0.0, 0.0))
    with pytest.raises(ContractError):
        sd.DgpConfig(n=5, d_x=1, beta=(0.0,), omega=0.0, w_shift=(0.0,),
                     propensity="logistic")


def test_abduction_on_identity_arm_function():
    f = lambda x, a: float(a)
    assert sd.abduct_predict(f, np.zeros(2), 1, 1.3) == pytest.approx(0.3, abs=1e-12)
    assert sd.abduct_predict(f, np.zeros(2), 0, -0.2) == pytest.approx(0.8, abs=1e-12)


def test_abduction_is_an_involution():
    f = lambda x, a: 2.0 * float(a) + 0.5
    y = 1.7
    once = sd.abduct_predict(f, np.zeros(1), 1, y)
    assert sd.abduct_predict(f, np.zeros(1), 0, once) == pytest.approx(y, abs=1e-12)


def test_oracle_counterfactual_matches_hand_formula():
    cfg = _cfg(n=40, seed=5)
    ds = sd.generate_ihdp_like(cfg)
    beta = np.asarray(cfg.beta)
    for i in range(ds.n):
        x, a, y = ds.x[i], int(ds.a[i]), float(ds.y[i])
        f1 = x @ beta - cfg.omega
        f0 = np.exp((x + np.asarray(cfg.w_shift)) @ beta)
        eps = y - (f1 if a == 1 else f0)
        expect = (f0 if a == 1 else f1) + eps
        got = sd.oracle_counterfactual(cfg, x, a, y)
        assert got == pytest.approx(expect, abs=1e-12)
        assert got == pytest.approx(float(ds.ycf[i]), abs=1e-12)


def test_csv_round_trip_exact(tmp_path):
    ds = sd.generate_ihdp_like(_cfg(n=30, seed=2))
    path = tmp_path / "data.csv"
    sd.write_csv(ds, path)
    back = sd.load_csv(path)
    np.testing.assert_array_equal(back.x, ds.x)
    np.testing.assert_array_equal(back.a, ds.a)
    np.testing.assert_array_equal(back.y, ds.y)
    np.testing.assert_array_equal(back.ycf, ds.ycf)


def test_csv_minimal_schema(tmp_path):
    path = tmp_path / "mini.csv"
    path.write_text("x0,x1,a,y\n0.5,-1.0,1,2.25\n")
    ds = sd.load_csv(path)
    assert ds.d_x == 2 and ds.n == 1
    assert ds.mu0 is None and ds.mu1 is None and ds.ycf is None
    assert ds.y[0] == 2.25 and ds.a[0] == 1


def test_csv_missing_mandatory_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x0,a\n0.5,1\n")
    with pytest.raises(SchemaError, match="y"):
        sd.load_csv(path)


def test_csv_bad_treatment_names_row(tmp_path):
    path = tmp_path / "bad.csv"
    lines = ["x0,a,y"] + ["0.1,1,0.2"] * 4 + ["0.1,2,0.2", "0.1,0,0.2"]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="row 5"):
        sd.load_csv(path)


def test_csv_non_numeric_cell_names_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x0,a,y\n0.1,1,0.2\nzap,0,0.3\n")
    with pytest.raises(ValueError, match="row 2"):
        sd.load_csv(path)


def test_split_sizes_and_partition():
    ds = sd.generate_ihdp_like(_cfg(n=10))
    train, test = sd.split(ds, 0.3, seed=4)
    assert (train.n, test.n) == (7, 3)
    merged = np.sort(np.concatenate([train.y, test.y]))
    np.testing.assert_array_equal(merged, np.sort(ds.y))
    t2, s2 = sd.split(ds, 0.3, seed=4)
    np.testing.assert_array_equal(t2.y, train.y)
    np.testing.assert_array_equal(s2.y, test.y)


def test_split_rejects_empty_side():
    ds = sd.generate_ihdp_like(_cfg(n=10))
    with pytest.raises(ContractError):
        sd.split(ds, 0.01, seed=0)
    with pytest.raises(ContractError):
        sd.split(ds, 0.99, seed=0)


def test_standardize_hand_values():
    ds = sd.CausalDataset(np.array([[1.0], [3.0]]), np.array([0, 1]), np.array([4.0, 8.0]))
    out, scaler = sd.standardize(ds)
    np.testing.assert_allclose(out.x[:, 0], [-1.0, 1.0])
    np.testing.assert_allclose(out.y, [-1.0, 1.0])
    assert scaler.y_mean == 6.0 and scaler.y_sd == 2.0


def test_standardize_leaves_constant_column():
    ds = sd.CausalDataset(np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]]),
                          np.array([0, 1, 0]), np.array([1.0, 2.0, 3.0]))
    out, scaler = sd.standardize(ds)
    np.testing.assert_array_equal(out.x[:, 0], [5.0, 5.0, 5.0])
    assert scaler.x_sd[0] == 1.0 and scaler.x_mean[0] == 0.0


def test_standardize_round_trip():
    ds = sd.generate_ihdp_like(_cfg(n=100, seed=8))
    out, scaler = sd.standardize(ds)
    back = sd.unstandardize(out, scaler)
    np.testing.assert_allclose(back.x, ds.x, atol=1e-10)
    np.testing.assert_allclose(back.y, ds.y, atol=1e-10)
    np.testing.assert_allclose(back.ycf, ds.ycf, atol=1e-10)


def test_standardize_keeps_generator_identity():
    ds = sd.generate_ihdp_like(_cfg(n=100, seed=8))
    out, _ = sd.standardize(ds)
    eps = out.y - np.where(out.a == 1, out.mu1, out.mu0)
    np.testing.assert_allclose(out.ycf, np.where(out.a == 1, out.mu0, out.mu1) + eps,
                               atol=1e-12)


@given(seed=st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_standardize_unit_moments(seed):
    ds = sd.generate_ihdp_like(_cfg(n=64, seed=seed))
    out, _ = sd.standardize(ds)
    np.testing.assert_allclose(out.y.mean(), 0.0, atol=1e-9)
    np.testing.assert_allclose(out.y.std(), 1.0, atol=1e-9)
    np.testing.assert_allclose(out.x.mean(axis=0), 0.0, atol=1e-9)


def test_propensity_balanced_near_half():
    # balanced assignment independent of x: fitted scores hug 0.5 everywhere
    ds = sd.generate_ihdp_like(sd.default_config(n=2000, d_x=1, seed=0))
    model = sd.fit_propensity(ds)
    w = model.predict(ds.x)
    assert np.all(np.abs(w - 0.5) < 0.05)


def test_propensity_balanced_near_half_higher_dim():
    ds = sd.generate_ihdp_like(_cfg(n=2000, seed=12))
    w = sd.fit_propensity(ds).predict(ds.x)
    assert abs(np.mean(w) - 0.5) < 0.02
    assert np.quantile(np.abs(w - 0.5), 0.95) < 0.05


def test_propensity_single_arm_rejected():
    ds = sd.CausalDataset(np.zeros((5, 1)), np.ones(5, dtype=int), np.zeros(5))
    with pytest.raises(FitError):
        sd.fit_propensity(ds)


def test_propensity_separable_stays_finite():
    x = np.linspace(-1, 1, 40).reshape(-1, 1)
    a = (x[:, 0] > 0).astype(int)
    ds = sd.CausalDataset(x, a, np.zeros(40))
    model = sd.fit_propensity(ds)
    assert np.all(np.isfinite(model.coef))
    w = model.predict(ds.x)
    assert np.all((w >= 0.01) & (w <= 0.99))


def test_propensity_clipping_bounds():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((500, 1)) * 4.0
    p = sd.sigmoid_kernel(3.0 * x[:, 0])
    a = (rng.random(500) < p).astype(int)
    ds = sd.CausalDataset(x, a, np.zeros(500))
    w = sd.fit_propensity(ds).predict(ds.x)
    assert w.min() >= 0.01 and w.max() <= 0.99
