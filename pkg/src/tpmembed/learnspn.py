"""LearnSPN-b structure learning.

Variables are split into groups by thresholding the pairwise G statistic,
instances are split in two by EM over a product-of-Bernoulli mixture, and
slices smaller than ``m_min_instances`` are fully factorized.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .data import BinaryDataset
from .spn import LeafNode, ProductNode, Spn, SumNode

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LearnSpnParams:
    m_min_instances: int = 500
    rho: float = 20.0
    alpha: float = 0.1
    cluster_max_iters: int = 100
    cluster_restarts: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.m_min_instances < 1:
            raise ValueError("m_min_instances must be >= 1")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.cluster_max_iters < 1 or self.cluster_restarts < 1:
            raise ValueError("cluster_max_iters and cluster_restarts must be positive")


def _xlogy_sum(c, expected_log):
    # 0 * log(0) = 0
    return np.where(c > 0, c * expected_log, 0.0)


def g_test(data: np.ndarray, i: int, j: int) -> float:
    """G statistic of independence between binary columns ``i`` and ``j``."""
    data = np.asarray(data)
    n = data.shape[1]
    if i == j:
        raise ValueError("g_test needs two distinct variables")
    if not (0 <= i < n and 0 <= j < n):
        raise ValueError(f"variable index out of range for n={n}")
    N = data.shape[0]
    if N < 1:
        raise ValueError("g_test needs at least one row")
    xi = data[:, i].astype(bool)
    xj = data[:, j].astype(bool)
    counts = np.array([[np.sum(~xi & ~xj), np.sum(~xi & xj)],
                       [np.sum(xi & ~xj), np.sum(xi & xj)]], dtype=float)
    return g_from_counts(counts)


def g_from_counts(counts) -> float:
    c = np.asarray(counts, dtype=float)
    N = c.sum()
    ci = c.sum(axis=1)
    cj = c.sum(axis=0)
    g = 0.0
    for a in range(2):
        for b in range(2):
            if c[a, b] > 0:
                g += c[a, b] * np.log(c[a, b] * N / (ci[a] * cj[b]))
    return max(0.0, 2.0 * g)


def g_matrix(data: np.ndarray) -> np.ndarray:
    """All pairwise G statistics of the columns of ``data`` (diagonal 0)."""
    X = np.asarray(data, dtype=float)
    N = float(X.shape[0])
    c11 = X.T @ X
    c1 = np.diag(c11).copy()
    c10 = c1[:, None] - c11
    c01 = c1[None, :] - c11
    c00 = N - c1[:, None] - c1[None, :] + c11
    c0 = N - c1
    g = np.zeros_like(c11)
    with np.errstate(divide="ignore", invalid="ignore"):
        for cnt, mi, mj in ((c00, c0[:, None], c0[None, :]),
                            (c01, c0[:, None], c1[None, :]),
                            (c10, c1[:, None], c0[None, :]),
                            (c11, c1[:, None], c1[None, :])):
            g += _xlogy_sum(cnt, np.log(cnt * N / (mi * mj)))
    g = np.maximum(2.0 * g, 0.0)
    np.fill_diagonal(g, 0.0)
    return g


def dependency_components(data: np.ndarray, scope, rho: float) -> list[list[int]]:
    """Connected components of the graph linking pairs with G > rho."""
    scope = sorted(int(v) for v in scope)
    if len(scope) < 2:
        raise ValueError("dependency_components needs at least two variables")
    g = g_matrix(np.asarray(data)[:, scope])
    _, labels = connected_components(csr_matrix(g > rho), directed=False)
    groups: dict[int, list[int]] = {}
    for v, lab in zip(scope, labels):
        groups.setdefault(lab, []).append(v)
    return sorted(groups.values(), key=lambda comp: comp[0])


def _bernoulli_mixture_em(X, rng, max_iters, tol=1e-4, eps=1e-2):
    N, d = X.shape
    r = rng.random((N, 2))
    r /= r.sum(axis=1, keepdims=True)
    prev = -np.inf
    ll = -np.inf
    for _ in range(max_iters):
        mass = r.sum(axis=0)
        log_pi = np.log(np.maximum(mass, 1e-300) / N)
        theta = (r.T @ X + eps) / (mass[:, None] + 2 * eps)
        log_lik = X @ np.log(theta).T + (1 - X) @ np.log1p(-theta).T + log_pi
        mx = log_lik.max(axis=1, keepdims=True)
        norm = mx + np.log(np.exp(log_lik - mx).sum(axis=1, keepdims=True))
        r = np.exp(log_lik - norm)
        ll = float(norm.sum())
        if np.isfinite(prev) and abs(ll - prev) <= tol * abs(prev):
            break
        prev = ll
    return r, ll


def cluster_rows(data: np.ndarray, params: LearnSpnParams, rng: Optional[np.random.Generator] = None):
    """Split rows in two clusters.

    Returns ``(assignments, weights)`` or ``None`` when EM leaves one cluster
    empty (the degenerate-split signal).
    """
    X = np.asarray(data, dtype=float)
    N = X.shape[0]
    if N < 2:
        raise ValueError("cluster_rows needs at least two rows")
    if rng is None:
        rng = np.random.default_rng(params.seed)
    if np.all(X == X[0]):
        return None
    best_ll, best_r = -np.inf, None
    for _ in range(params.cluster_restarts):
        r, ll = _bernoulli_mixture_em(X, rng, params.cluster_max_iters)
        if best_r is None or ll > best_ll:
            best_ll, best_r = ll, r
    assign = np.argmax(best_r, axis=1).astype(np.int64)
    sizes = np.bincount(assign, minlength=2)
    if sizes.min() == 0:
        return None
    return assign, sizes / N


def _leaf(var, column, alpha):
    N = column.shape[0]
    p1 = (float(column.sum()) + alpha) / (N + 2 * alpha)
    return LeafNode.bernoulli(var, p1)


def learn_spn_b(ds, params: LearnSpnParams = LearnSpnParams()) -> Spn:
    """Learn an SPN with LearnSPN-b.

    Per-node randomness is derived from ``params.seed`` and the node's path
    from the root, so a sub-network never depends on how its siblings were
    learned.
    """
    X = ds.samples if isinstance(ds, BinaryDataset) else np.asarray(ds)
    X = np.asarray(X, dtype=np.uint8)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError("learn_spn_b needs a non-empty dataset")
    m, n = X.shape
    nodes: list = []

    def emit(node):
        nodes.append(node)
        return len(nodes) - 1

    def factorize(rows, scope):
        if len(scope) == 1:
            return emit(_leaf(scope[0], X[rows, scope[0]], params.alpha))
        kids = [emit(_leaf(v, X[rows, v], params.alpha)) for v in scope]
        return emit(ProductNode(tuple(kids)))

    # Work items: ("build", rows, scope, path, skip_col) or ("finish", ...).
    results: dict[tuple, int] = {}
    stack: list = [("build", np.arange(m), list(range(n)), (), False)]
    while stack:
        item = stack.pop()
        if item[0] == "finish":
            _, path, kind, n_kids, weights = item
            kids = tuple(results.pop(path + (c,)) for c in range(n_kids))
            if kind == "sum":
                node = SumNode.from_weights(kids, weights)
            else:
                node = ProductNode(kids)
            results[path] = emit(node)
            continue
        _, rows, scope, path, skip_col = item
        N = len(rows)
        if len(scope) == 1:
            results[path] = emit(_leaf(scope[0], X[rows, scope[0]], params.alpha))
            continue
        if N < params.m_min_instances:
            logger.info("factorize rows=%d scope=%d (early stop)", N, len(scope))
            results[path] = factorize(rows, scope)
            continue
        if not skip_col:
            comps = dependency_components(X[rows], scope, params.rho)
            if len(comps) > 1:
                logger.info("product rows=%d scope=%d components=%d", N, len(scope), len(comps))
                stack.append(("finish", path, "product", len(comps), None))
                for c in reversed(range(len(comps))):
                    stack.append(("build", rows, comps[c], path + (c,), True))
                continue
        rng = np.random.default_rng(np.random.SeedSequence(params.seed, spawn_key=path))
        split = cluster_rows(X[np.ix_(rows, scope)], params, rng)
        if split is None:
            logger.info("factorize rows=%d scope=%d (degenerate split)", N, len(scope))
            results[path] = factorize(rows, scope)
            continue
        assign, weights = split
        logger.info("sum rows=%d scope=%d split=%d/%d", N, len(scope),
                    int((assign == 0).sum()), int((assign == 1).sum()))
        stack.append(("finish", path, "sum", 2, weights))
        for c in (1, 0):
            stack.append(("build", rows[assign == c], scope, path + (c,), False))
    return Spn(nodes, root=results[()])
