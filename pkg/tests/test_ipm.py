import numpy as np
import pytest
from scipy.stats import wasserstein_distance

from adlift import ipm
from adlift.tensor import Tensor
from helpers import brute_force_matching_distance, numeric_gradient, relative_error


def test_config_validation():
    with pytest.raises(ValueError, match="method"):
        ipm.IpmConfig(method="swd")
    with pytest.raises(ValueError, match="epsilon"):
        ipm.IpmConfig(epsilon=0.0)
    with pytest.raises(ValueError, match="iterations"):
        ipm.IpmConfig(iterations=0)


def test_evaluation_fidelity_defaults():
    cfg = ipm.IpmConfig.evaluation()
    assert cfg.epsilon == pytest.approx(0.01)
    assert cfg.iterations == 200


def test_exact_1d_equal_sizes_is_sorted_mean():
    rng = np.random.default_rng(0)
    p = rng.normal(0, 1, 40)
    q = rng.normal(1, 2, 40)
    expected = np.abs(np.sort(p) - np.sort(q)).mean()
    assert ipm.exact_wasserstein_1d(p, q) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("sizes", [(10, 10), (7, 23), (40, 13), (2, 61)])
def test_exact_1d_matches_scipy(sizes):
    rng = np.random.default_rng(sum(sizes))
    p = rng.normal(0, 1, sizes[0])
    q = rng.normal(0.5, 1.5, sizes[1])
    ours = ipm.exact_wasserstein_1d(p, q)
    ref = wasserstein_distance(p, q)
    assert ours == pytest.approx(ref, rel=1e-10)


def test_exact_1d_matches_brute_force_assignment():
    rng = np.random.default_rng(3)
    for size in (2, 3, 5, 7):
        p = rng.normal(0, 1, size)
        q = rng.normal(0.3, 1.2, size)
        assert ipm.exact_wasserstein_1d(p, q) == pytest.approx(
            brute_force_matching_distance(p, q), abs=1e-12)


def test_exact_1d_gradient_matches_fd():
    rng = np.random.default_rng(4)
    for m, n in ((12, 12), (9, 17)):
        p = rng.normal(0, 1, m)
        q = rng.normal(0.5, 1.3, n)
        est = ipm.ipm_distance(p, q, ipm.IpmConfig(method="exact-1d"))
        fd_p = numeric_gradient(lambda x: ipm.exact_wasserstein_1d(x, q), p.copy())
        fd_q = numeric_gradient(lambda x: ipm.exact_wasserstein_1d(p, x), q.copy())
        assert relative_error(est.grad_p.ravel(), fd_p) < 1e-6
        assert relative_error(est.grad_q.ravel(), fd_q) < 1e-6


def test_exact_1d_rejects_multidim():
    with pytest.raises(ValueError, match="1-dimensional"):
        ipm.ipm_distance(np.zeros((4, 2)), np.zeros((4, 2)),
                         ipm.IpmConfig(method="exact-1d"))


def test_sinkhorn_converges_to_exact_1d_within_2pct():
    rng = np.random.default_rng(5)
    cfg = ipm.IpmConfig.evaluation()
    for kind in range(6):
        m, n = rng.integers(15, 60), rng.integers(15, 60)
        if kind % 3 == 0:
            p, q = rng.normal(0, 1, m), rng.normal(0.4, 1.3, n)  # overlapping
        elif kind % 3 == 1:
            p, q = rng.normal(0, 1, m), rng.normal(3.5, 1.0, n)  # separated
        else:
            p = np.concatenate([rng.normal(0, 0.3, m // 2), rng.normal(3, 0.3, m - m // 2)])
            q = rng.normal(1.5, 2.0, n)
        exact = ipm.exact_wasserstein_1d(p, q)
        est = ipm.ipm_distance(p, q, cfg)
        assert abs(est.distance - exact) / exact < 0.02


def test_sinkhorn_symmetric_and_nonnegative():
    rng = np.random.default_rng(6)
    cfg = ipm.IpmConfig(epsilon=0.1, iterations=30)
    for _ in range(10):
        p = rng.normal(0, 1, (rng.integers(2, 25), 3))
        q = rng.normal(0.5, 1.5, (rng.integers(2, 25), 3))
        d1 = ipm.ipm_distance(p, q, cfg).distance
        d2 = ipm.ipm_distance(q, p, cfg).distance
        assert d1 == d2  # canonical ordering makes this exact
        assert d1 >= 0.0


def test_sinkhorn_self_distance_near_zero():
    rng = np.random.default_rng(7)
    p = rng.normal(0, 1, (20, 4))
    d = ipm.ipm_distance(p, p, ipm.IpmConfig.evaluation()).distance
    assert 0.0 <= d < 1e-3


def test_sinkhorn_gradient_matches_fd_fixed_epsilon():
    # fd check runs on the unrolled loop with epsilon held constant
    rng = np.random.default_rng(8)
    p = rng.normal(0, 1, (6, 2))
    q = rng.normal(0.7, 1.2, (5, 2))
    eps = 0.1 * ipm.cost_scale(p, q)

    def value(x, y):
        return ipm.sinkhorn_distance(Tensor(x), Tensor(y), eps, 25).item()

    tp, tq = Tensor(p, requires_grad=True), Tensor(q, requires_grad=True)
    out = ipm.sinkhorn_distance(tp, tq, eps, 25)
    out.backward()
    fd_p = numeric_gradient(lambda x: value(x, q), p.copy())
    fd_q = numeric_gradient(lambda y: value(p, y), q.copy())
    assert relative_error(tp.grad, fd_p) < 1e-3
    assert relative_error(tq.grad, fd_q) < 1e-3


def test_sinkhorn_gradient_moves_clouds_together():
    # gradient descent on the distance should shrink it
    rng = np.random.default_rng(9)
    p = rng.normal(0, 0.5, (15, 2))
    q = rng.normal(2.5, 0.5, (15, 2))
    cfg = ipm.IpmConfig(epsilon=0.1, iterations=40)
    d0 = ipm.ipm_distance(p, q, cfg)
    p2 = p - 0.5 * d0.grad_p / np.abs(d0.grad_p).max()
    d1 = ipm.ipm_distance(p2, q, cfg)
    assert d1.distance < d0.distance


def test_empty_cloud_rejected():
    with pytest.raises(ValueError, match="non-empty"):
        ipm.ipm_distance(np.zeros((0, 2)), np.zeros((3, 2)))


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError, match="dimensions differ"):
        ipm.ipm_distance(np.zeros((3, 2)), np.zeros((3, 4)))


def test_cost_scale_positive_and_sane():
    rng = np.random.default_rng(10)
    p = rng.normal(0, 1, (30, 2))
    q = rng.normal(5, 1, (30, 2))  # centers (0,0) and (5,5), gap ~7.07
    s = ipm.cost_scale(p, q)
    assert 5.0 < s < 9.0


def test_single_sample_clouds_work():
    d = ipm.ipm_distance(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]]),
                         ipm.IpmConfig(epsilon=0.1, iterations=60)).distance
    assert d == pytest.approx(5.0, rel=1e-3)
