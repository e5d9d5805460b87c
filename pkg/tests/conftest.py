import numpy as np
import pytest

from gdsec import data as datagen
from gdsec.objectives import Objective, ObjectiveSpec


@pytest.fixture
def small_ridge():
    """Well-conditioned ridge instance shared by engine and theory tests."""
    spec = datagen.GeneratorSpec("gaussian_ridge", n_workers=5, per_worker_n=40, dim=10, seed=3)
    datasets = datagen.generate(spec)
    objective = Objective(
        ObjectiveSpec("ridge_linear", lam=1.0 / 200, n_workers=5), datasets
    )
    return objective


def ridge_f_star(objective):
    X = np.vstack([ds.features for ds in objective.datasets])
    y = np.concatenate([ds.labels for ds in objective.datasets])
    N = objective.n_total
    A = X.T @ X / N + objective.spec.lam * np.eye(objective.dim)
    theta = np.linalg.solve(A, X.T @ y / N)
    return objective.value(theta)
