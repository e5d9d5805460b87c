"""Local loss families: values, (sub)gradients, minibatch gradients, and
smoothness/strong-convexity constants.

Four families are supported:

* ``ridge_linear``: squared loss plus an L2 penalty split as lam/(2M) per worker
* ``logistic``: log loss plus lam/(2M) L2 penalty (strongly convex for lam > 0)
* ``lasso``: squared loss plus lam/M L1 penalty, handled by subgradient
* ``nlls``: squared loss of a sigmoid prediction plus lam/(2M) L2 (nonconvex)

All data terms are normalized by the global sample count N (not the local
N_m), so the sum of the M local functions equals the pooled objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from gdsec.core import DimensionMismatch, check_finite

FAMILIES = ("ridge_linear", "logistic", "lasso", "nlls")

# Fixed seed for the empirical smoothness probe of the nonconvex family:
# the estimate must be a pure function of the data.
_NLLS_PROBE_SEED = 0x5EC


@dataclass(frozen=True)
class LocalDataset:
    """One worker's private samples plus the global normalization count."""

    features: np.ndarray  # (n_m, d)
    labels: np.ndarray  # (n_m,)
    n_total: int

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.float64)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ValueError("features must be (n, d) with matching labels")
        if X.shape[0] < 1:
            raise ValueError("dataset must hold at least one sample")
        if self.n_total < X.shape[0]:
            raise ValueError("n_total cannot be smaller than the local count")
        check_finite(X.ravel(), "features")
        check_finite(y, "labels")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n_local(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class ObjectiveSpec:
    family: str
    lam: float
    n_workers: int

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.lam < 0:
            raise ValueError("regularization weight must be nonnegative")
        if self.n_workers < 1:
            raise ValueError("need at least one worker")


@dataclass(frozen=True)
class SmoothnessInfo:
    """Gradient-Lipschitz constants (global, per worker, per coordinate) and
    the strong-convexity modulus used by the theory checker."""

    L_global: float
    L_worker: np.ndarray
    L_coord: np.ndarray
    mu: float


def _check_theta(theta: np.ndarray, data: LocalDataset) -> None:
    if theta.shape[0] != data.dim:
        raise DimensionMismatch(
            f"theta has dimension {theta.shape[0]}, data has {data.dim}"
        )


def local_value(spec: ObjectiveSpec, data: LocalDataset, theta: np.ndarray) -> float:
    """Worker-local objective value at ``theta``."""
    _check_theta(theta, data)
    X, y, N, M = data.features, data.labels, data.n_total, spec.n_workers
    z = X @ theta
    if spec.family == "ridge_linear":
        fit = 0.5 * np.sum((y - z) ** 2) / N
        reg = 0.5 * spec.lam / M * float(theta @ theta)
    elif spec.family == "logistic":
        fit = np.sum(np.logaddexp(0.0, -y * z)) / N
        reg = 0.5 * spec.lam / M * float(theta @ theta)
    elif spec.family == "lasso":
        fit = 0.5 * np.sum((y - z) ** 2) / N
        reg = spec.lam / M * float(np.sum(np.abs(theta)))
    else:  # nlls
        fit = 0.5 * np.sum((y - expit(z)) ** 2) / N
        reg = 0.5 * spec.lam / M * float(theta @ theta)
    return float(fit + reg)


def _fit_residual(spec: ObjectiveSpec, y: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Per-sample derivative of the fit term with respect to the margin z."""
    if spec.family in ("ridge_linear", "lasso"):
        return -(y - z)
    if spec.family == "logistic":
        return -y * expit(-y * z)
    p = expit(z)  # nlls
    return -(y - p) * p * (1.0 - p)


def _reg_gradient(spec: ObjectiveSpec, theta: np.ndarray) -> np.ndarray:
    if spec.family == "lasso":
        # Subgradient selection: sign(0) = 0.
        return spec.lam / spec.n_workers * np.sign(theta)
    return spec.lam / spec.n_workers * theta


def local_gradient(spec: ObjectiveSpec, data: LocalDataset, theta: np.ndarray) -> np.ndarray:
    """Exact gradient (subgradient for lasso) of :func:`local_value`."""
    _check_theta(theta, data)
    X, y, N = data.features, data.labels, data.n_total
    w = _fit_residual(spec, y, X @ theta)
    return X.T @ w / N + _reg_gradient(spec, theta)


def stochastic_gradient(
    spec: ObjectiveSpec,
    data: LocalDataset,
    theta: np.ndarray,
    batch_indices,
) -> np.ndarray:
    """Minibatch gradient scaled so that its expectation under uniform
    sampling equals :func:`local_gradient`.

    The regularizer gradient is added in full (it is deterministic).
    """
    _check_theta(theta, data)
    batch = np.asarray(batch_indices, dtype=np.int64)
    if batch.size == 0:
        raise ValueError("batch must be nonempty")
    if np.any(batch < 0) or np.any(batch >= data.n_local):
        raise IndexError("batch index out of range")
    X = data.features[batch]
    y = data.labels[batch]
    w = _fit_residual(spec, y, X @ theta)
    scale = data.n_local / (data.n_total * batch.size)
    return scale * (X.T @ w) + _reg_gradient(spec, theta)


def _top_eigenvalue(G: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(G)[-1])


def _curvature_factor(family: str) -> float:
    # Logistic per-sample curvature in the margin is bounded by 1/4.
    return 0.25 if family == "logistic" else 1.0


def _nlls_probe(spec, datasets, rng, dim):
    """Empirical Lipschitz estimates for the nonconvex family.

    Max observed gradient-difference ratio along random segments (globally,
    per worker, and per coordinate). These are estimates, not certified
    bounds, and are meant for default step-size suggestions only. The probed
    gradients include the regularizer, so no curvature term is added later.
    """
    M = len(datasets)
    slices = np.cumsum([0] + [ds.n_local for ds in datasets])
    X = np.vstack([ds.features for ds in datasets])
    y = np.concatenate([ds.labels for ds in datasets])
    N = datasets[0].n_total

    def worker_grads(th):
        w = _fit_residual(spec, y, X @ th)
        reg = _reg_gradient(spec, th)
        return [
            X[slices[m] : slices[m + 1]].T @ w[slices[m] : slices[m + 1]] / N + reg
            for m in range(M)
        ]

    scale = 1.0 / np.sqrt(dim)
    L_est = 0.0
    L_worker = np.zeros(M)
    L_coord = np.zeros(dim)
    for _ in range(8):
        a = rng.normal(scale=scale, size=dim)
        b = a + rng.normal(scale=scale, size=dim)
        ga, gb = worker_grads(a), worker_grads(b)
        dist = float(np.linalg.norm(b - a))
        L_est = max(L_est, float(np.linalg.norm(sum(gb) - sum(ga))) / dist)
        for m in range(M):
            L_worker[m] = max(L_worker[m], float(np.linalg.norm(gb[m] - ga[m])) / dist)
    for _ in range(4):
        a = rng.normal(scale=scale, size=dim)
        ga = sum(worker_grads(a))
        t = rng.uniform(0.05, 0.5)
        for i in range(dim):
            th = a.copy()
            th[i] += t
            gi = sum(worker_grads(th))
            L_coord[i] = max(L_coord[i], abs(gi[i] - ga[i]) / t)
    return L_est, L_worker, np.maximum(L_coord, 1e-12)


def smoothness(spec: ObjectiveSpec, datasets: list[LocalDataset]) -> SmoothnessInfo:
    """Smoothness constants of the pooled objective and of each local one.

    For the quadratic and logistic families these come from the scaled Gram
    matrix (top eigenvalue globally, diagonal per coordinate) plus the
    regularizer curvature. For lasso only the smooth part is bounded; for the
    nonconvex family the constants are empirical estimates.
    """
    if not datasets:
        raise ValueError("need at least one dataset")
    dim = datasets[0].dim
    if any(ds.dim != dim for ds in datasets):
        raise DimensionMismatch("datasets disagree on dimension")
    N = datasets[0].n_total
    M = spec.n_workers

    if spec.family == "nlls":
        rng = np.random.default_rng(_NLLS_PROBE_SEED)
        L_est, L_worker, L_coord = _nlls_probe(spec, datasets, rng, dim)
        return SmoothnessInfo(L_est, L_worker, L_coord, 0.0)

    factor = _curvature_factor(spec.family)
    # lam enters the Hessian only for the L2-regularized families.
    lam_full = spec.lam if spec.family != "lasso" else 0.0

    X_all = np.vstack([ds.features for ds in datasets])
    G = X_all.T @ X_all / N
    L_global = factor * _top_eigenvalue(G) + lam_full
    L_coord = factor * np.diag(G) + lam_full
    L_worker = np.array(
        [
            factor * _top_eigenvalue(ds.features.T @ ds.features / N) + lam_full / M
            for ds in datasets
        ]
    )
    mu = spec.lam if spec.family in ("ridge_linear", "logistic") else 0.0
    return SmoothnessInfo(L_global, L_worker, np.maximum(L_coord, 1e-300), mu)


class Objective:
    """Spec plus per-worker datasets, with pooled fast paths for the round loop.

    The pooled evaluation shares one forward pass X @ theta across the global
    value, the per-worker gradients, and the full gradient, which is what the
    simulator needs every round.
    """

    def __init__(self, spec: ObjectiveSpec, datasets: list[LocalDataset]):
        if len(datasets) != spec.n_workers:
            raise ValueError("one dataset per worker required")
        dim = datasets[0].dim
        if any(ds.dim != dim for ds in datasets):
            raise DimensionMismatch("datasets disagree on dimension")
        n_total = datasets[0].n_total
        if any(ds.n_total != n_total for ds in datasets):
            raise ValueError("datasets disagree on the global sample count")
        self.spec = spec
        self.datasets = datasets
        self.dim = dim
        self.n_total = n_total
        self.n_workers = spec.n_workers
        self._X = np.vstack([ds.features for ds in datasets])
        self._y = np.concatenate([ds.labels for ds in datasets])
        bounds = np.cumsum([0] + [ds.n_local for ds in datasets])
        self._lo = bounds[:-1]
        self._hi = bounds[1:]
        # Equal per-worker counts admit one batched matvec for all workers.
        counts = {ds.n_local for ds in datasets}
        self._X3 = (
            self._X.reshape(len(datasets), datasets[0].n_local, dim)
            if len(counts) == 1
            else None
        )
        self._smoothness: SmoothnessInfo | None = None

    def value(self, theta: np.ndarray) -> float:
        return self._forward(theta)[0]

    def _forward(self, theta):
        spec = self.spec
        z = self._X @ theta
        y = self._y
        N = self.n_total
        if spec.family in ("ridge_linear", "lasso"):
            fit = 0.5 * np.sum((y - z) ** 2) / N
        elif spec.family == "logistic":
            fit = np.sum(np.logaddexp(0.0, -y * z)) / N
        else:
            fit = 0.5 * np.sum((y - expit(z)) ** 2) / N
        if spec.family == "lasso":
            reg = spec.lam * float(np.sum(np.abs(theta)))
        else:
            reg = 0.5 * spec.lam * float(theta @ theta)
        w = _fit_residual(spec, y, z)
        return float(fit + reg), w

    def round_eval(self, theta, active, batch_size=None, rng=None):
        """Global value, the (len(active), d) matrix of per-worker gradients
        aligned with ``active``, and the exact full gradient.

        One shared forward pass feeds all three. With ``batch_size`` set,
        worker gradients are minibatch estimates drawn from ``rng`` (without
        replacement); the full gradient stays exact.
        """
        f, w = self._forward(theta)
        reg = _reg_gradient(self.spec, theta)
        active = np.asarray(active)
        if batch_size is None:
            if self._X3 is not None:
                nm = self._X3.shape[1]
                G_all = np.matmul(w.reshape(self.n_workers, 1, nm), self._X3)[:, 0, :]
            else:
                G_all = np.empty((self.n_workers, self.dim))
                for m in range(self.n_workers):
                    lo, hi = self._lo[m], self._hi[m]
                    G_all[m] = self._X[lo:hi].T @ w[lo:hi]
            G_all /= self.n_total
            G_all += reg
            full_grad = G_all.sum(axis=0)
            G = G_all if active.size == self.n_workers else G_all[active]
            return f, G, full_grad
        rows = []
        for m in active:
            ds = self.datasets[m]
            batch = rng.choice(ds.n_local, size=min(batch_size, ds.n_local), replace=False)
            rows.append(stochastic_gradient(self.spec, ds, theta, batch))
        G = np.vstack(rows) if rows else np.zeros((0, self.dim))
        full_grad = self._X.T @ w / self.n_total + reg * self.n_workers
        return f, G, full_grad

    def worker_gradient(self, m: int, theta: np.ndarray) -> np.ndarray:
        return local_gradient(self.spec, self.datasets[m], theta)

    def full_gradient(self, theta: np.ndarray) -> np.ndarray:
        _, w = self._forward(theta)
        return self._X.T @ w / self.n_total + _reg_gradient(self.spec, theta) * self.n_workers

    def smoothness(self) -> SmoothnessInfo:
        if self._smoothness is None:
            self._smoothness = smoothness(self.spec, self.datasets)
        return self._smoothness
