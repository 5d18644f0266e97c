"""Power-sum embeddings of multisets and their injectivity check on grids.

Pooling sums the power vectors in ascending order of the pooled values, so
the result is a function of the multiset alone and permutation invariance
holds bitwise, not just up to rounding.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from subgroup_forge import kernels
from subgroup_forge.groups import DimensionError

MAX_GRID_POINTS = 1_000_000


def _warn_range(x):
    if np.any((x < 0.0) | (x > 1.0)):
        warnings.warn("input outside [0, 1]; multiset uniqueness is only established on the unit cube", stacklevel=3)


def gamma(t, n: int) -> np.ndarray:
    """[1, t, t^2, ..., t^n]; broadcasts over array-valued ``t`` (new last axis)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    t = np.asarray(t, dtype=np.float64)
    return t[..., None] ** np.arange(n + 1)


def _pooled_powers(vals: np.ndarray, n: int) -> np.ndarray:
    """Sum of gamma over the last axis of ``vals`` in sorted order."""
    powers = gamma(np.sort(vals, axis=-1), n)  # (..., k, n+1)
    k = powers.shape[-2]
    acc = np.zeros(powers.shape[:-2] + (n + 1,))
    for i in range(k):
        acc = acc + powers[..., i, :]
    return acc


def sum_gamma_pool(x) -> np.ndarray:
    """sum_i gamma(x_i, n) for a length-n vector x."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise DimensionError("sum_gamma_pool expects a non-empty vector")
    return _pooled_powers(x, x.size)


def embed_Sk0(x, k: int) -> np.ndarray:
    """[sum_{i<k} gamma(x_i, n), x_k, ..., x_{n-1}], length (n + 1) + (n - k).

    Accepts a vector or a batch of row vectors.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range 1..{n}")
    _warn_range(x)
    head = _pooled_powers(x[..., :k], n)
    return np.concatenate([head, x[..., k:]], axis=-1)


@dataclass
class InjectivityReport:
    n: int
    k: int
    grid_step: float
    points: int
    colliding_pairs: int
    counterexamples: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.counterexamples


def _grid(n: int, step: float) -> np.ndarray:
    m = int(round(1.0 / step))
    if m < 1 or abs(m * step - 1.0) > 1e-9:
        raise ValueError(f"grid step {step} does not divide [0, 1]")
    count = (m + 1) ** n
    if count > MAX_GRID_POINTS:
        raise ValueError(f"grid has {count} points, above the limit of {MAX_GRID_POINTS}")
    axis = np.linspace(0.0, 1.0, m + 1)
    mesh = np.meshgrid(*([axis] * n), indexing="ij")
    return np.stack([g.reshape(-1) for g in mesh], axis=1)


def injectivity_certificate(n: int, k: int, grid_step: float = 0.1, tol: float = 1e-12,
                            max_examples: int = 10) -> InjectivityReport:
    """Check on a grid over [0,1]^n that embed_Sk0 identifies exactly the
    points whose first-k multisets and tails coincide.

    Both directions are checked: every pair of grid points whose embeddings
    agree within ``tol`` must share the canonical key (sorted head, tail), and
    every pair sharing a key must have embeddings within ``tol``.
    """
    X = _grid(n, grid_step)
    emb = embed_Sk0(X, k)
    keys = np.concatenate([np.sort(X[:, :k], axis=1), X[:, k:]], axis=1)
    report = InjectivityReport(n, k, grid_step, len(X), 0)

    pairs = kernels.close_pairs(emb, tol)
    report.colliding_pairs = len(pairs)
    if len(pairs):
        bad = np.any(keys[pairs[:, 0]] != keys[pairs[:, 1]], axis=1)
        for i, j in pairs[bad][:max_examples]:
            report.counterexamples.append(("collision", X[i].tolist(), X[j].tolist()))

    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    cls = inverse[order]
    starts = np.flatnonzero(np.r_[True, cls[1:] != cls[:-1]])
    rep = order[starts[np.searchsorted(starts, np.arange(len(cls)), side="right") - 1]]
    spread = np.abs(emb[order] - emb[rep]).max(axis=1)
    for pos in np.flatnonzero(spread > tol)[: max(0, max_examples - len(report.counterexamples))]:
        report.counterexamples.append(("split", X[order[pos]].tolist(), X[rep[pos]].tolist()))
    return report
