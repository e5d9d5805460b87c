"""Synthetic dataset generators and text-format loaders with even splitting.

Generators are pure functions of their spec (including the seed). Splitting
across workers is contiguous and order-preserving: the first floor(N/M) rows
go to worker 0, and the remainder joins the last worker, so worker-structured
constructions survive a write/load round trip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gdsec.objectives import LocalDataset

BLOCK = 50  # width of the per-worker and shared feature blocks

GENERATOR_KINDS = ("logistic_blocks", "coord_lipschitz", "gaussian_ridge")


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    n_workers: int
    per_worker_n: int
    dim: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.n_workers < 1 or self.per_worker_n < 1 or self.dim < 1:
            raise ValueError("workers, samples, and dimension must be positive")


def _rademacher(rng, n):
    return rng.integers(0, 2, size=n) * 2.0 - 1.0


def gen_logistic_blocks(spec: GeneratorSpec) -> list[LocalDataset]:
    """Block-structured features: worker m draws its own 50-coordinate block
    from U(0,1), the shared last 50 coordinates from U(0,10), and everything
    else from U(0,0.01). Labels are +-1 with equal probability.

    Worker m's block covers 0-based coordinates [50m, 50m+50); the shared
    block is the last 50 coordinates. Requires dim >= 50*workers + 50.
    """
    if spec.dim < BLOCK * spec.n_workers + BLOCK:
        raise ValueError("dimension too small for the block layout")
    rng = np.random.default_rng(spec.seed)
    n, d, N = spec.per_worker_n, spec.dim, spec.n_workers * spec.per_worker_n
    out = []
    for m in range(spec.n_workers):
        X = rng.uniform(0.0, 0.01, size=(n, d))
        X[:, BLOCK * m : BLOCK * (m + 1)] = rng.uniform(0.0, 1.0, size=(n, BLOCK))
        X[:, d - BLOCK :] = rng.uniform(0.0, 10.0, size=(n, BLOCK))
        y = _rademacher(rng, n)
        out.append(LocalDataset(X, y, N))
    return out


def gen_coord_lipschitz(spec: GeneratorSpec) -> list[LocalDataset]:
    """Features U(0,0.01) except that sample n of worker m carries the value
    ``(m+1) * 1.1**(n+1)`` in its n-th coordinate (both 1-based in that
    formula), which makes the coordinate-wise and per-worker smoothness
    constants strictly increasing. Labels are +-1 with equal probability.
    """
    if spec.per_worker_n < spec.dim:
        raise ValueError("need at least dim samples per worker (one per coordinate)")
    rng = np.random.default_rng(spec.seed)
    n, d, N = spec.per_worker_n, spec.dim, spec.n_workers * spec.per_worker_n
    out = []
    for m in range(spec.n_workers):
        X = rng.uniform(0.0, 0.01, size=(n, d))
        for i in range(min(n, d)):
            X[i, i] = (m + 1) * 1.1 ** (i + 1)
        y = _rademacher(rng, n)
        out.append(LocalDataset(X, y, N))
    return out


def gen_gaussian_ridge(spec: GeneratorSpec) -> list[LocalDataset]:
    """Standard-normal features with labels from a planted linear model plus
    noise; a generic well-conditioned regression instance."""
    rng = np.random.default_rng(spec.seed)
    n, d, N = spec.per_worker_n, spec.dim, spec.n_workers * spec.per_worker_n
    theta_true = rng.normal(size=d) / np.sqrt(d)
    out = []
    for _ in range(spec.n_workers):
        X = rng.normal(size=(n, d))
        y = X @ theta_true + 0.1 * rng.normal(size=n)
        out.append(LocalDataset(X, y, N))
    return out


def generate(spec: GeneratorSpec) -> list[LocalDataset]:
    return {
        "logistic_blocks": gen_logistic_blocks,
        "coord_lipschitz": gen_coord_lipschitz,
        "gaussian_ridge": gen_gaussian_ridge,
    }[spec.kind](spec)


def even_split(X: np.ndarray, y: np.ndarray, n_workers: int) -> list[LocalDataset]:
    """Contiguous order-preserving split; the remainder joins the last worker."""
    N = X.shape[0]
    if N < n_workers:
        raise ValueError("fewer samples than workers")
    per = N // n_workers
    out = []
    for m in range(n_workers):
        lo = m * per
        hi = (m + 1) * per if m < n_workers - 1 else N
        out.append(LocalDataset(X[lo:hi].copy(), y[lo:hi].copy(), N))
    return out


def standardize_features(X: np.ndarray) -> np.ndarray:
    """Per-feature z-scoring with population variance; constant columns are
    left at zero rather than dividing by zero."""
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0.0] = 1.0
    return (X - mean) / std


def load_svm_format(
    path, n_workers: int, dim: int | None = None, standardize: bool = False
) -> list[LocalDataset]:
    """Load ``label idx:val ...`` sparse text (1-based ascending indices),
    materialized dense, evenly split across workers.

    ``dim`` defaults to the largest index seen. Parse failures report the
    line number.
    """
    rows = []
    labels = []
    max_idx = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                labels.append(float(parts[0]))
                entries = []
                prev = 0
                for tok in parts[1:]:
                    idx_s, val_s = tok.split(":", 1)
                    idx = int(idx_s)
                    if idx <= prev:
                        raise ValueError("indices must be ascending and 1-based")
                    prev = idx
                    entries.append((idx, float(val_s)))
            except (ValueError, IndexError) as err:
                raise ValueError(f"{path}: parse error on line {lineno}: {err}") from None
            rows.append(entries)
            if entries:
                max_idx = max(max_idx, entries[-1][0])
    if not rows:
        raise ValueError(f"{path}: empty file")
    d = dim if dim is not None else max_idx
    X = np.zeros((len(rows), d))
    for r, entries in enumerate(rows):
        for idx, val in entries:
            if idx > d:
                raise ValueError(f"{path}: index {idx} exceeds dimension {d}")
            X[r, idx - 1] = val
    if standardize:
        X = standardize_features(X)
    return even_split(X, np.array(labels), n_workers)


def load_csv(path, n_workers: int, standardize: bool = False) -> list[LocalDataset]:
    """Load ``label,f1,...,fd`` rows (header optional), evenly split."""
    labels = []
    feats = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if lineno == 1 and cells[0].strip().lower() == "label":
                continue
            try:
                values = [float(c) for c in cells]
            except ValueError as err:
                raise ValueError(f"{path}: parse error on line {lineno}: {err}") from None
            labels.append(values[0])
            feats.append(values[1:])
    if not feats:
        raise ValueError(f"{path}: empty file")
    widths = {len(f) for f in feats}
    if len(widths) != 1:
        raise ValueError(f"{path}: inconsistent row widths {sorted(widths)}")
    X = np.array(feats)
    if standardize:
        X = standardize_features(X)
    return even_split(X, np.array(labels), n_workers)


def write_csv(datasets: list[LocalDataset], path) -> None:
    """Write pooled rows in worker order in the ``label,f1,...,fd`` layout."""
    d = datasets[0].dim
    with open(path, "w", newline="") as fh:
        fh.write("label," + ",".join(f"f{i+1}" for i in range(d)) + "\n")
        for ds in datasets:
            for row, label in zip(ds.features, ds.labels):
                fh.write(repr(float(label)) + "," + ",".join(repr(float(v)) for v in row) + "\n")
