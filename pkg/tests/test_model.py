import numpy as np
import pytest

from adlift.model import Model, ModelConfig, config_sidecar_path
from adlift.tensor import ShapeError
from helpers import mlp_forward


def small_config(**kw):
    base = dict(context_dim=8, n_treatments=4, rep_width=16, rep_depth=2,
                hyp_width=12, hyp_depth=2, seed=3)
    base.update(kw)
    return ModelConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError, match="n_treatments"):
        ModelConfig(context_dim=5, n_treatments=1)
    with pytest.raises(ValueError, match="rep_depth"):
        ModelConfig(context_dim=5, n_treatments=3, rep_depth=0)
    with pytest.raises(ValueError, match="activation"):
        ModelConfig(context_dim=5, n_treatments=3, activation="tanh")
    with pytest.raises(ValueError, match="context_dim"):
        ModelConfig(context_dim=0, n_treatments=3)


def test_parameter_shapes():
    m = Model(small_config())
    assert m.params["phi.0.w"].shape == (8, 16)
    assert m.params["phi.1.w"].shape == (16, 16)
    assert m.params["h.0.w"].shape == (17, 12)  # rep_width + treatment channel
    assert m.params["h.out.w"].shape == (12, 1)
    assert m.params["h.out.b"].shape == (1,)


def test_same_seed_same_params_different_seed_differs():
    a = Model(small_config(seed=7))
    b = Model(small_config(seed=7))
    c = Model(small_config(seed=8))
    assert np.array_equal(a.params["phi.0.w"].values, b.params["phi.0.w"].values)
    assert not np.array_equal(a.params["phi.0.w"].values, c.params["phi.0.w"].values)


def test_forward_matches_straight_line_numpy():
    cfg = small_config()
    m = Model(cfg)
    rng = np.random.default_rng(0)
    x = rng.normal(0, 1, (5, cfg.context_dim))

    rep_w = [m.params[f"phi.{k}.w"].values for k in range(cfg.rep_depth)]
    rep_b = [m.params[f"phi.{k}.b"].values for k in range(cfg.rep_depth)]
    rep_ref = mlp_forward(x, rep_w, rep_b, m._rep_scales)
    assert np.allclose(m.represent(x), rep_ref, atol=1e-12)

    i = 3
    ch = np.full((5, 1), (i - 1) / (cfg.n_treatments - 1))
    hyp_in = np.concatenate([rep_ref, ch], axis=1)
    hyp_w = [m.params["h.0.w"].values, m.params["h.1.w"].values, m.params["h.out.w"].values]
    hyp_b = [m.params["h.0.b"].values, m.params["h.1.b"].values, m.params["h.out.b"].values]
    pred_ref = mlp_forward(hyp_in, hyp_w, hyp_b, [1.0, 1.0, 1.0], last_linear=True)[:, 0]
    assert np.allclose(m.predict(x, i), pred_ref, atol=1e-12)


def test_representation_unit_scale_at_init():
    cfg = ModelConfig(context_dim=30, n_treatments=5, seed=1)
    m = Model(cfg)
    x = np.random.default_rng(2).normal(0, 1, (400, 30))
    rep = m.represent(x)
    assert 0.2 < rep.std() < 2.0


def test_treatment_channel_endpoints():
    m = Model(small_config())
    assert m.treatment_channel(1) == 0.0
    assert m.treatment_channel(4) == 1.0
    assert m.treatment_channel(2) == pytest.approx(1.0 / 3.0)


def test_predict_rejects_bad_treatment_index():
    m = Model(small_config())
    x = np.zeros(8)
    with pytest.raises(ValueError, match="out of range"):
        m.predict(x, 0)
    with pytest.raises(ValueError, match="out of range"):
        m.predict(x, 5)


def test_predict_rejects_bad_context_shape():
    m = Model(small_config())
    with pytest.raises(ShapeError):
        m.predict(np.zeros(7), 1)


def test_predictions_vary_with_treatment():
    m = Model(small_config())
    x = np.random.default_rng(4).normal(0, 1, 8)
    preds = [m.predict(x, i)[0] for i in range(1, 5)]
    assert len(set(preds)) > 1


def test_iae_matrix_properties():
    cfg = small_config()
    m = Model(cfg)
    rng = np.random.default_rng(5)
    x = rng.normal(0, 1, (50, cfg.context_dim))
    mats = m.iae_matrix(x)
    assert mats.shape == (50, 4, 4)
    n = cfg.n_treatments
    assert np.max(np.abs(mats + np.swapaxes(mats, 1, 2))) < 1e-9
    assert np.max(np.abs(mats[:, np.arange(n), np.arange(n)])) < 1e-9
    for i in range(n):
        for j in range(n):
            for k in range(n):
                resid = mats[:, i, j] + mats[:, j, k] - mats[:, i, k]
                assert np.max(np.abs(resid)) < 1e-9


def test_iae_matrix_single_context():
    m = Model(small_config())
    x = np.random.default_rng(6).normal(0, 1, 8)
    mat = m.iae_matrix(x)
    assert mat.shape == (4, 4)
    preds = m.predict_all(x[None, :])[0]
    assert mat[0, 3] == pytest.approx(preds[3] - preds[0], abs=1e-12)


def test_save_load_roundtrip(tmp_path):
    cfg = small_config()
    m = Model(cfg)
    x = np.random.default_rng(7).normal(0, 1, (6, cfg.context_dim))
    path = str(tmp_path / "model.json")
    m.save(path, extra={"standardization": {"mean": [0.0], "std": [1.0]}})
    loaded = Model.load(path)
    assert loaded.config == cfg
    assert np.array_equal(loaded.predict_all(x), m.predict_all(x))
    assert loaded.meta["standardization"]["std"] == [1.0]
    assert config_sidecar_path(path).endswith("model.config.json")


def test_load_rejects_bad_sidecar(tmp_path):
    path = tmp_path / "m.json"
    sidecar = tmp_path / "m.config.json"
    path.write_text("{}")
    sidecar.write_text('{"format": "wrong", "version": 1}')
    with pytest.raises(ValueError, match="sidecar"):
        Model.load(str(path))


def test_hypothesis_weight_matrices_selection():
    m = Model(small_config())
    names = set(m.hypothesis_weight_matrices())
    assert names == {"h.0.w", "h.1.w", "h.out.w"}
