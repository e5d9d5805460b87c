import numpy as np
import pytest

from gdsec.core import DimensionMismatch
from gdsec.objectives import (
    FAMILIES,
    LocalDataset,
    Objective,
    ObjectiveSpec,
    local_gradient,
    local_value,
    smoothness,
    stochastic_gradient,
)


def one_sample(x, y, n_total=1):
    return LocalDataset(np.array([x], dtype=float), np.array([y], dtype=float), n_total)


def central_difference(spec, data, theta, step=1e-6):
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        hi = theta.copy()
        lo = theta.copy()
        hi[i] += step
        lo[i] -= step
        grad[i] = (local_value(spec, data, hi) - local_value(spec, data, lo)) / (2 * step)
    return grad


def test_ridge_value_single_sample():
    spec = ObjectiveSpec("ridge_linear", lam=0.0, n_workers=1)
    assert local_value(spec, one_sample([1.0, 0.0], 1.0), np.zeros(2)) == pytest.approx(0.5)


def test_logistic_value_at_zero_is_log_two():
    spec = ObjectiveSpec("logistic", lam=0.0, n_workers=1)
    val = local_value(spec, one_sample([3.7, -2.0], 1.0), np.zeros(2))
    assert val == pytest.approx(np.log(2.0), rel=1e-12)


def test_nlls_value_hand_evaluated():
    # residual (1 - 1/(1+e^0)) = 1/2, halved square = 1/8
    spec = ObjectiveSpec("nlls", lam=0.0, n_workers=1)
    assert local_value(spec, one_sample([0.0], 1.0), np.zeros(1)) == pytest.approx(0.125)


def test_ridge_gradient_example():
    spec = ObjectiveSpec("ridge_linear", lam=0.0, n_workers=1)
    data = one_sample([1.0, 0.0], 1.0)
    grad = local_gradient(spec, data, np.zeros(2))
    fd = central_difference(spec, data, np.zeros(2))
    assert np.allclose(grad, [-1.0, 0.0], atol=1e-12)
    assert np.allclose(grad, fd, rtol=1e-5, atol=1e-8)


def test_logistic_gradient_example():
    spec = ObjectiveSpec("logistic", lam=0.0, n_workers=1)
    data = one_sample([1.0], 1.0)
    grad = local_gradient(spec, data, np.zeros(1))
    assert grad == pytest.approx([-0.5], rel=1e-12)


def test_lasso_subgradient_sign_zero_convention():
    spec = ObjectiveSpec("lasso", lam=1.0, n_workers=5)
    data = LocalDataset(np.zeros((3, 4)), np.zeros(3), 3)
    grad = local_gradient(spec, data, np.zeros(4))
    assert np.array_equal(grad, np.zeros(4))


def _random_instance(rng, family):
    n, d = int(rng.integers(2, 8)), int(rng.integers(1, 6))
    X = rng.normal(size=(n, d))
    y = rng.normal(size=n) if family in ("ridge_linear", "lasso") else rng.choice([-1.0, 1.0], n)
    data = LocalDataset(X, y, n + int(rng.integers(0, 4)))
    theta = rng.normal(size=d)
    if family == "lasso":
        # keep clear of the kink so the subgradient is a classical gradient
        theta = np.where(np.abs(theta) < 1e-2, 0.5, theta)
    spec = ObjectiveSpec(family, lam=float(rng.uniform(0, 0.5)), n_workers=int(rng.integers(1, 4)))
    return spec, data, theta


@pytest.mark.parametrize("family", FAMILIES)
def test_gradients_match_central_differences(family):
    rng = np.random.default_rng(hash(family) % 2**32)
    for _ in range(20):
        spec, data, theta = _random_instance(rng, family)
        grad = local_gradient(spec, data, theta)
        fd = central_difference(spec, data, theta)
        scale = max(1.0, float(np.max(np.abs(fd))))
        assert np.max(np.abs(grad - fd)) / scale <= 1e-5


@pytest.mark.parametrize("family", FAMILIES)
def test_sum_of_locals_equals_pooled_objective(family):
    rng = np.random.default_rng(5)
    M, n, d = 4, 6, 5
    N = M * n
    datasets = [
        LocalDataset(rng.normal(size=(n, d)), rng.choice([-1.0, 1.0], n), N) for _ in range(M)
    ]
    spec = ObjectiveSpec(family, lam=0.3, n_workers=M)
    pooled = LocalDataset(
        np.vstack([ds.features for ds in datasets]),
        np.concatenate([ds.labels for ds in datasets]),
        N,
    )
    pooled_spec = ObjectiveSpec(family, lam=0.3, n_workers=1)
    theta = rng.normal(size=d)
    total = sum(local_value(spec, ds, theta) for ds in datasets)
    assert total == pytest.approx(local_value(pooled_spec, pooled, theta), rel=1e-12)


def test_stochastic_full_batch_equals_local_gradient():
    rng = np.random.default_rng(8)
    spec = ObjectiveSpec("ridge_linear", lam=0.2, n_workers=2)
    data = LocalDataset(rng.normal(size=(5, 3)), rng.normal(size=5), 11)
    theta = rng.normal(size=3)
    g = stochastic_gradient(spec, data, theta, np.arange(5))
    assert np.allclose(g, local_gradient(spec, data, theta), rtol=1e-12)

    single = LocalDataset(data.features[:1], data.labels[:1], 1)
    g1 = stochastic_gradient(spec, single, theta, [0])
    assert np.allclose(g1, local_gradient(spec, single, theta), rtol=1e-12)


def test_stochastic_singleton_mean_equals_local_gradient():
    rng = np.random.default_rng(9)
    spec = ObjectiveSpec("logistic", lam=0.1, n_workers=3)
    data = LocalDataset(rng.normal(size=(7, 4)), rng.choice([-1.0, 1.0], 7), 21)
    theta = rng.normal(size=4)
    # exhaustive enumeration oracle over all singleton batches
    mean = np.mean([stochastic_gradient(spec, data, theta, [i]) for i in range(7)], axis=0)
    assert np.allclose(mean, local_gradient(spec, data, theta), rtol=1e-10)


def test_stochastic_batch_errors():
    spec = ObjectiveSpec("ridge_linear", lam=0.0, n_workers=1)
    data = one_sample([1.0], 1.0)
    with pytest.raises(ValueError):
        stochastic_gradient(spec, data, np.zeros(1), [])
    with pytest.raises(IndexError):
        stochastic_gradient(spec, data, np.zeros(1), [5])


def power_iteration(G, iters=2000):
    rng = np.random.default_rng(0)
    v = rng.normal(size=G.shape[0])
    for _ in range(iters):
        v = G @ v
        v /= np.linalg.norm(v)
    return float(v @ G @ v)


def test_smoothness_isotropic_gram():
    n = 4
    X = np.sqrt(n) * np.eye(n)  # (1/N) X^T X = I
    spec = ObjectiveSpec("ridge_linear", lam=0.0, n_workers=1)
    info = smoothness(spec, [LocalDataset(X, np.ones(n), n)])
    assert info.L_global == pytest.approx(1.0, rel=1e-12)
    assert np.allclose(info.L_coord, 1.0, rtol=1e-12)


def test_smoothness_duplicated_column_symmetry():
    rng = np.random.default_rng(3)
    col = rng.normal(size=(6, 1))
    X = np.hstack([col, col, rng.normal(size=(6, 1))])
    spec = ObjectiveSpec("ridge_linear", lam=0.1, n_workers=1)
    info = smoothness(spec, [LocalDataset(X, np.ones(6), 6)])
    assert info.L_coord[0] == pytest.approx(info.L_coord[1], rel=1e-14)


def test_smoothness_matches_power_iteration_oracle():
    rng = np.random.default_rng(14)
    X = rng.normal(size=(5, 3))
    lam = 0.25
    spec = ObjectiveSpec("ridge_linear", lam=lam, n_workers=1)
    info = smoothness(spec, [LocalDataset(X, np.ones(5), 5)])
    oracle = power_iteration(X.T @ X / 5 + lam * np.eye(3))
    assert info.L_global == pytest.approx(oracle, rel=1e-8)


def test_smoothness_mu_sandwich_for_l2_families():
    rng = np.random.default_rng(21)
    for family in ("ridge_linear", "logistic"):
        X = rng.normal(size=(8, 4))
        spec = ObjectiveSpec(family, lam=0.4, n_workers=2)
        datasets = [LocalDataset(X[:4], np.ones(4), 8), LocalDataset(X[4:], -np.ones(4), 8)]
        info = smoothness(spec, datasets)
        assert info.mu == pytest.approx(0.4)
        assert np.all(info.L_coord >= info.mu - 1e-12)
        assert np.all(info.L_coord <= info.L_global + 1e-12)


def test_nlls_smoothness_is_positive_estimate():
    rng = np.random.default_rng(2)
    datasets = [LocalDataset(rng.uniform(size=(6, 3)), rng.choice([-1.0, 1.0], 6), 12) for _ in range(2)]
    spec = ObjectiveSpec("nlls", lam=0.05, n_workers=2)
    info = smoothness(spec, datasets)
    assert info.L_global > 0
    assert np.all(info.L_coord > 0)
    assert info.mu == 0.0
    # a pure function of the data
    info2 = smoothness(spec, datasets)
    assert info2.L_global == info.L_global


def test_objective_round_eval_matches_per_worker_ops():
    rng = np.random.default_rng(33)
    M, n, d = 3, 5, 4
    datasets = [LocalDataset(rng.normal(size=(n, d)), rng.normal(size=n), M * n) for _ in range(M)]
    for family in FAMILIES:
        spec = ObjectiveSpec(family, lam=0.2, n_workers=M)
        obj = Objective(spec, datasets)
        theta = rng.normal(size=d)
        f, G, full = obj.round_eval(theta, np.arange(M))
        assert f == pytest.approx(sum(local_value(spec, ds, theta) for ds in datasets), rel=1e-12)
        for m in range(M):
            assert np.allclose(G[m], local_gradient(spec, datasets[m], theta), rtol=1e-12, atol=1e-14)
        assert np.allclose(full, G.sum(axis=0), rtol=1e-12)


def test_objective_round_eval_unequal_split():
    rng = np.random.default_rng(34)
    d = 3
    datasets = [
        LocalDataset(rng.normal(size=(4, d)), rng.normal(size=4), 9),
        LocalDataset(rng.normal(size=(5, d)), rng.normal(size=5), 9),
    ]
    spec = ObjectiveSpec("ridge_linear", lam=0.1, n_workers=2)
    obj = Objective(spec, datasets)
    theta = rng.normal(size=d)
    _, G, _ = obj.round_eval(theta, np.arange(2))
    for m in range(2):
        assert np.allclose(G[m], local_gradient(spec, datasets[m], theta), rtol=1e-12)


def test_dimension_mismatch_raises():
    spec = ObjectiveSpec("ridge_linear", lam=0.0, n_workers=1)
    data = one_sample([1.0, 2.0], 1.0)
    with pytest.raises(DimensionMismatch):
        local_value(spec, data, np.zeros(3))
    with pytest.raises(DimensionMismatch):
        local_gradient(spec, data, np.zeros(1))
