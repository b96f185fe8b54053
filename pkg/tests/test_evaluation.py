import numpy as np
import pytest

from adlift import evaluation as ev
from adlift.ipm import IpmConfig
from adlift.model import Model, ModelConfig
from adlift.synthetic import GenConfig, generate
from helpers import brute_force_pehe


def small_world(n_treatments=5, n_samples=400, seed=0, bias=2.0):
    cfg = GenConfig(n_samples=n_samples, n_treatments=n_treatments, bias=bias,
                    seed=seed)
    return generate(cfg)


def small_model(dataset, seed=0):
    return Model(ModelConfig(context_dim=dataset.schema.dim,
                             n_treatments=dataset.n_treatments,
                             rep_width=16, rep_depth=2, hyp_width=16,
                             hyp_depth=2, seed=seed))


def potential_errors(rng, b, n):
    """Random error tensors with the structure real ones must have.

    Both the estimated and true matrices are differences of per-treatment
    values, so their difference is too: tau[b, i, j] = v[b, j] - v[b, i].
    """
    v = rng.normal(0, 1, (b, n))
    return v[:, None, :] - v[:, :, None]


def test_pehe_matches_brute_force():
    rng = np.random.default_rng(0)
    errors = potential_errors(rng, 100, 5)
    alpha_true = potential_errors(rng, 100, 5)
    alpha_hat = alpha_true + errors
    assert ev.pehe_from_errors(errors) == pytest.approx(
        brute_force_pehe(alpha_hat, alpha_true), rel=1e-12)


def test_pehe_zero_for_perfect_errors():
    assert ev.pehe_from_errors(np.zeros((10, 4, 4))) == 0.0


def test_pehe_constant_offset_n2():
    # off by delta on treatment 2 only: pehe = delta^2
    delta = 0.7
    v = np.zeros((50, 2))
    v[:, 1] = delta
    errors = v[:, None, :] - v[:, :, None]
    assert ev.pehe_from_errors(errors) == pytest.approx(delta ** 2, rel=1e-12)


def test_tau_antisymmetry_and_telescoping():
    ds, gt = small_world()
    model = small_model(ds, seed=1)
    sub = ds.subset(np.arange(80))
    t12 = ev.tau(model, sub, 1, 2)
    t23 = ev.tau(model, sub, 2, 3)
    t13 = ev.tau(model, sub, 1, 3)
    t31 = ev.tau(model, sub, 3, 1)
    assert np.max(np.abs(t13 - (t12 + t23))) < 1e-9
    assert np.max(np.abs(t13 + t31)) < 1e-12
    with pytest.raises(ValueError, match="out of range"):
        ev.tau(model, sub, 0, 2)


def test_unit_weight_adjacent_sum_fails_at_n5():
    # equal adjacent errors: pehe = 5c^2 but the unit-weight sum is 4c^2,
    # while the pair-counted weights give exactly 5c^2 (equality case)
    c = 0.3
    n, b = 5, 40
    v = np.tile(c * np.arange(n), (b, 1))
    errors = v[:, None, :] - v[:, :, None]
    p = ev.pehe_from_errors(errors)
    e_adj = ev.adjacent_mean_squares(errors)
    assert p == pytest.approx(5 * c ** 2, rel=1e-12)
    assert float(e_adj.sum()) == pytest.approx(4 * c ** 2, rel=1e-12)
    assert p > float(e_adj.sum())
    weighted = float((ev.pair_count_weights(n) * e_adj).sum())
    assert p == pytest.approx(weighted, rel=1e-12)


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_weighted_bound_holds_on_random_potentials(n):
    rng = np.random.default_rng(n)
    for _ in range(200):
        errors = potential_errors(rng, rng.integers(1, 30), n)
        p = ev.pehe_from_errors(errors)
        e_adj = ev.adjacent_mean_squares(errors)
        weighted = float((ev.pair_count_weights(n) * e_adj).sum())
        assert p <= weighted * (1 + 1e-9) + 1e-12
        if n <= 3:
            # unit weights coincide with the pair-counted ones up to n=3
            assert p <= float(e_adj.sum()) * (1 + 1e-9) + 1e-12


def test_pair_count_weights_values():
    assert np.allclose(ev.pair_count_weights(2), [1.0])
    assert np.allclose(ev.pair_count_weights(3), [1.0, 1.0])
    assert np.allclose(ev.pair_count_weights(5), [1.0, 1.5, 1.5, 1.0])


def test_factual_losses_match_manual():
    ds, gt = small_world(n_samples=300, seed=3)
    model = small_model(ds, seed=4)
    fl = ev.factual_losses(model, ds)
    preds = model.predict_all(ds.x)
    for j in range(1, ds.n_treatments + 1):
        mask = ds.t == j
        manual = float(((preds[mask, j - 1] - ds.y[mask]) ** 2).mean())
        assert fl[j - 1] == pytest.approx(manual, rel=1e-12)


def test_bound_check_report_structure():
    ds, gt = small_world(n_samples=300, seed=5)
    model = small_model(ds, seed=6)
    report = ev.bound_check(model, ds, beta=1.0,
                            ipm_config=IpmConfig(epsilon=0.05, iterations=40))
    assert report.n_treatments == 5
    assert report.n_contexts == 300
    assert report.pehe > 0
    assert report.weighted_holds
    assert report.adjacent_sum == pytest.approx(
        float(np.sum(report.adjacent_mean_squares)), rel=1e-12)
    assert report.weighted_adjacent_sum >= report.adjacent_sum
    assert all(d is None or d >= 0 for d in report.ipm_distances)
    assert report.ipm_skipped == 0
    expected_surrogate = 2.0 * sum(
        pf + 1.0 * (d or 0.0)
        for pf, d in zip(report.pairwise_factual, report.ipm_distances))
    assert report.surrogate_bound == pytest.approx(expected_surrogate, rel=1e-12)
    payload = report.to_dict()
    assert payload["format"] == "adlift-eval-report"


def test_bound_check_equality_at_n2():
    ds, gt = small_world(n_treatments=2, n_samples=200, seed=7)
    model = small_model(ds, seed=8)
    report = ev.bound_check(model, ds, beta=0.0)
    assert report.adjacent_sum == pytest.approx(report.pehe, rel=1e-9)
    assert report.adjacent_sum_holds and report.weighted_holds


def test_bound_check_requires_ground_truth():
    ds, gt = small_world(n_samples=120, seed=9)
    ds.ground_truth = None
    model = small_model(ds, seed=10)
    with pytest.raises(ValueError, match="ground truth"):
        ev.bound_check(model, ds)


def test_ipm_skip_on_thin_treatment():
    ds, gt = small_world(n_samples=300, seed=11)
    idx = np.nonzero(ds.t != 3)[0]
    one = np.nonzero(ds.t == 3)[0][:1]
    sub = ds.subset(np.concatenate([idx, one]))
    model = small_model(ds, seed=12)
    dists = ev.adjacent_ipm_distances(model, sub, IpmConfig(iterations=10))
    assert dists[1] is None and dists[2] is None
    report = ev.bound_check(model, sub, ipm_config=IpmConfig(iterations=10))
    assert report.ipm_skipped == 2


def test_ledger_append(tmp_path):
    ds, gt = small_world(n_samples=200, seed=13)
    model = small_model(ds, seed=14)
    report = ev.bound_check(model, ds, ipm_config=IpmConfig(iterations=10))
    path = str(tmp_path / "ledger.csv")
    ev.append_ledger(report, path, "run-a")
    ev.append_ledger(report, path, "run-b")
    lines = open(path).read().splitlines()
    assert lines[0] == ev.LEDGER_HEADER
    assert len(lines) == 3
    assert lines[1].startswith("run-a,5,200,")
    assert lines[1].split(",")[0:1] == ["run-a"]
    with pytest.raises(ValueError, match="tag"):
        report.ledger_row("bad,tag")
