import numpy as np
import pytest

from adlift import data, synthetic
from adlift.synthetic import GenConfig, GroundTruth, generate, true_iae


def small_config(**kw):
    base = dict(n_samples=2000, seed=11)
    base.update(kw)
    return GenConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError, match="n_samples"):
        GenConfig(n_samples=30, n_treatments=5)
    with pytest.raises(ValueError, match="bias"):
        GenConfig(bias=-1.0)
    with pytest.raises(ValueError, match="lift"):
        GenConfig(lift_low=5.0, lift_high=1.0)
    with pytest.raises(ValueError, match="n_treatments"):
        GenConfig(n_treatments=1)


def test_default_dimensions():
    cfg = GenConfig()
    assert cfg.d == 30
    assert cfg.schema().dim == 30
    names = [g.name for g in cfg.schema().groups]
    assert names == ["ids", "pv_sources_lastday", "pv_sources_lastweek",
                     "shop", "competition"]


def test_generate_shapes_and_ranges():
    cfg = small_config()
    ds, gt = generate(cfg)
    assert len(ds) == 2000
    assert ds.x_raw.shape == (2000, 30)
    assert set(np.unique(ds.t)) <= set(range(1, 6))
    assert np.all(ds.y >= 0)
    # one-hot block is exactly one-hot
    assert np.array_equal(ds.x_raw[:, :10].sum(axis=1), np.ones(2000))


def test_bit_identical_regeneration():
    cfg = small_config()
    ds1, _ = generate(cfg)
    ds2, _ = generate(cfg)
    assert np.array_equal(ds1.x_raw, ds2.x_raw)
    assert np.array_equal(ds1.t, ds2.t)
    assert np.array_equal(ds1.y, ds2.y)


def test_g_curve_shape():
    _, gt = generate(small_config())
    g = gt.g(np.arange(5))
    assert g[0] == 0.0
    assert g[-1] == 1.0
    assert np.all(np.diff(g) > 0)
    assert np.all(np.diff(np.diff(g)) < 0)  # concave


def test_ground_truth_outcome_structure():
    ds, gt = generate(small_config())
    x = ds.x_raw[:50]
    lift = gt.lift(x)
    assert np.all((lift >= 1.0) & (lift <= 5.0))
    base = gt.base(x)
    assert np.all((base >= 10.0) & (base <= 30.0))
    m1 = gt.m(x, 1)
    m5 = gt.m(x, 5)
    assert np.allclose(m1, base)  # g(0) = 0
    assert np.allclose(m5, base + lift)  # g(n-1) = 1
    assert np.all(m5 > m1)


def test_true_iae_matches_lift_times_g_difference():
    ds, gt = generate(small_config())
    x = ds.x_raw[:20]
    a = true_iae(gt, x, 2, 4)
    expected = gt.lift(x) * (gt.g(3) - gt.g(1))
    assert np.allclose(a, expected, atol=1e-12)
    # antisymmetry and zero diagonal
    assert np.allclose(true_iae(gt, x, 4, 2), -a, atol=1e-12)
    assert np.allclose(true_iae(gt, x, 3, 3), 0.0, atol=1e-12)


def test_alpha_matrix_consistent_with_alpha():
    ds, gt = generate(small_config())
    x = ds.x_raw[:10]
    mats = gt.alpha_matrix(x)
    assert mats.shape == (10, 5, 5)
    assert np.allclose(mats[:, 1, 3], gt.alpha(x, 2, 4), atol=1e-12)
    # monotone in the upper triangle: more clicks never hurt
    for i in range(5):
        for j in range(i + 1, 5):
            assert np.all(mats[:, i, j] >= 0)


def test_uniform_assignment_at_zero_bias():
    ds, _ = generate(small_config(n_samples=10000, bias=0.0))
    counts = ds.counts()
    expect = len(ds) / 5
    tol = 3 * np.sqrt(len(ds) * 0.2 * 0.8)
    assert np.all(np.abs(counts - expect) < tol)


def test_bias_induces_confounding_chi2():
    ds0, _ = generate(small_config(n_samples=8000, bias=0.0, seed=3))
    ds5, _ = generate(small_config(n_samples=8000, bias=5.0, seed=3))
    p0 = synthetic.treatment_feature_dependence(ds0)
    p5 = synthetic.treatment_feature_dependence(ds5)
    assert p0 > 0.05
    assert p5 < 1e-3


def test_positivity_floor_and_counts():
    ds, gt = generate(small_config(n_samples=8000, bias=5.0, seed=5))
    probs = gt.assignment_probs(ds.x_raw)
    assert probs.min() >= gt.positivity_floor() - 1e-12
    assert np.all(ds.counts() > 0)


def test_bias_shifts_treatment_toward_high_lift():
    # higher-lift contexts should get more clicks when bias > 0
    ds, gt = generate(small_config(n_samples=8000, bias=5.0, seed=7))
    lift = gt.lift(ds.x_raw)
    lo, hi = lift < np.median(lift), lift >= np.median(lift)
    assert ds.t[hi].mean() > ds.t[lo].mean() + 0.3


def test_clipping_is_rare():
    ds, gt = generate(small_config(n_samples=10000, noise=1.0, seed=9))
    clipped = np.mean(ds.y == 0.0)
    assert clipped < 0.01


def test_ground_truth_sidecar_roundtrip(tmp_path):
    cfg = small_config(n_samples=500)
    ds, gt = generate(cfg)
    path = str(tmp_path / "synth.csv")
    data.save(ds, path)
    loaded = data.load(path)
    gt2 = GroundTruth.from_dict(loaded.ground_truth)
    x = loaded.x_raw[:30]
    assert np.allclose(gt2.m(x, 3), gt.m(x, 3), atol=1e-12)
    assert np.allclose(gt2.alpha(x, 1, 5), gt.alpha(x, 1, 5), atol=1e-12)


def test_n_treatments_2_edge():
    ds, gt = generate(small_config(n_samples=200, n_treatments=2))
    assert set(np.unique(ds.t)) <= {1, 2}
    assert gt.g(1) == 1.0
    assert np.allclose(gt.alpha(ds.x_raw[:5], 1, 2), gt.lift(ds.x_raw[:5]))
