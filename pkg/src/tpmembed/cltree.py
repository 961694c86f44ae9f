"""Chow-Liu trees and EM-fitted Mixtures of Trees over binary variables."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import BinaryDataset, PartialEvidence
from .spn import SpnScopeError, _as_mask

logger = logging.getLogger(__name__)


class ModelFormatError(ValueError):
    pass


def _samples(ds) -> np.ndarray:
    X = ds.samples if isinstance(ds, BinaryDataset) else np.asarray(ds)
    return np.asarray(X)


def _smoothed_pair_tables(X: np.ndarray, weights: np.ndarray, alpha: float):
    """Weighted Laplace-smoothed joint (n, n, 2, 2) and marginal (n, 2) tables."""
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if not total > 0:
        raise ValueError("weights must have a positive sum")
    Xf = X.astype(float)
    w11 = Xf.T @ (Xf * w[:, None])
    w1 = np.diag(w11).copy()
    w10 = w1[:, None] - w11
    w01 = w1[None, :] - w11
    w00 = total - w1[:, None] - w1[None, :] + w11
    denom = total + 4 * alpha
    joint = np.stack([np.stack([w00, w01], -1), np.stack([w10, w11], -1)], -2)
    joint = (np.maximum(joint, 0.0) + alpha) / denom
    marg = np.stack([total - w1, w1], -1)
    marg = (np.maximum(marg, 0.0) + 2 * alpha) / denom
    return joint, marg


def _mi_from_tables(joint, marg):
    n = marg.shape[0]
    mi = np.zeros((n, n))
    with np.errstate(divide="ignore", invalid="ignore"):
        for a in range(2):
            for b in range(2):
                p = joint[:, :, a, b]
                ratio = p / (marg[:, None, a] * marg[None, :, b])
                mi += np.where(p > 0, p * np.log(ratio), 0.0)
    mi = 0.5 * (mi + mi.T)
    np.fill_diagonal(mi, 0.0)
    return mi


def weighted_mutual_information(ds, weights=None, alpha: float = 0.0) -> np.ndarray:
    X = _samples(ds)
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    joint, marg = _smoothed_pair_tables(X, w, alpha)
    return _mi_from_tables(joint, marg)


def maximum_spanning_tree(weights: np.ndarray) -> list[tuple[int, int]]:
    """Greedy edge insertion over edges sorted by (-weight, i, j)."""
    n = weights.shape[0]
    if n < 2:
        return []
    iu, ju = np.triu_indices(n, k=1)
    order = np.lexsort((ju, iu, -weights[iu, ju]))
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    edges = []
    for e in order:
        i, j = int(iu[e]), int(ju[e])
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            edges.append((i, j))
            if len(edges) == n - 1:
                break
    return edges


def _root_edges(n, edges, root=0):
    adj = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    par = np.full(n, -1, dtype=np.int64)
    order = [root]
    seen = {root}
    head = 0
    while head < len(order):
        v = order[head]
        head += 1
        for u in sorted(adj[v]):
            if u not in seen:
                seen.add(u)
                par[u] = v
                order.append(u)
    return par, np.array(order, dtype=np.int64)


class ChowLiuTree:
    """Tree-structured distribution rooted at variable 0.

    ``log_cpt[v, a, b]`` is log P(X_v = a | X_parent(v) = b); for the root both
    ``b`` columns hold its marginal.
    """

    def __init__(self, parent, log_cpt):
        parent = np.asarray(parent, dtype=np.int64)
        log_cpt = np.asarray(log_cpt, dtype=float)
        n = parent.shape[0]
        if log_cpt.shape != (n, 2, 2):
            raise ValueError(f"log_cpt must have shape ({n}, 2, 2)")
        roots = np.flatnonzero(parent < 0)
        if len(roots) != 1:
            raise ValueError("a tree needs exactly one root")
        self.root = int(roots[0])
        children = [[] for _ in range(n)]
        for v, p in enumerate(parent):
            if p >= n:
                raise ValueError(f"parent {p} of {v} out of range")
            if p >= 0:
                children[p].append(v)
        order = [self.root]
        for v in order:
            order.extend(sorted(children[v]))
        if len(order) != n:
            raise ValueError("parent array does not encode a spanning tree")
        norm = np.logaddexp(log_cpt[:, 0, :], log_cpt[:, 1, :])
        if np.max(np.abs(norm)) > 1e-9:
            raise ValueError("conditional tables are not normalized")
        self.parent = parent
        self.order = np.array(order, dtype=np.int64)
        self.log_cpt = log_cpt
        self.parent.setflags(write=False)
        self.order.setflags(write=False)
        self.log_cpt.setflags(write=False)

    @property
    def n_vars(self) -> int:
        return self.parent.shape[0]

    def edges(self) -> list[tuple[int, int]]:
        return sorted((min(v, int(p)), max(v, int(p))) for v, p in enumerate(self.parent) if p >= 0)

    def log_joint(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.int64)
        pa = np.where(self.parent < 0, 0, self.parent)
        xp = X[:, pa]
        cols = np.arange(self.n_vars)
        terms = self.log_cpt[cols, X, xp]
        out = np.zeros(X.shape[0])
        for v in range(self.n_vars):
            out += terms[:, v]
        return out

    def log_marginal_batch(self, X: np.ndarray, scope) -> np.ndarray:
        """Leaf-to-root elimination, vectorized over the rows of ``X``."""
        X = np.asarray(X)
        n = self.n_vars
        if X.ndim != 2 or X.shape[1] < n:
            raise SpnScopeError(f"data of shape {X.shape} does not cover {n} variables")
        mask = _as_mask(scope, X.shape[1])
        m = X.shape[0]
        lam = np.zeros((n, m, 2))
        for v in self.order[::-1]:
            lv = lam[v]
            if mask[v]:
                xv = X[:, v].astype(bool)
                lv[xv, 0] = -np.inf
                lv[~xv, 1] = -np.inf
            if v == self.root:
                continue
            p = self.parent[v]
            cpt = self.log_cpt[v]
            if mask[v]:
                a = X[:, v].astype(np.int64)
                own = lv[np.arange(m), a]
                msg = own[:, None] + cpt[a, :]
            else:
                msg = np.logaddexp(lv[:, 0:1] + cpt[0][None, :], lv[:, 1:2] + cpt[1][None, :])
            lam[p] += msg
        r = self.root
        prior = self.log_cpt[r, :, 0]
        if mask[r]:
            a = X[:, r].astype(np.int64)
            return lam[r][np.arange(m), a] + prior[a]
        return np.logaddexp(lam[r][:, 0] + prior[0], lam[r][:, 1] + prior[1])

    def log_marginal(self, ev: PartialEvidence) -> float:
        if ev.scope and ev.scope[-1] >= self.n_vars:
            raise SpnScopeError(f"variable {ev.scope[-1]} out of range for n={self.n_vars}")
        mask, vals = ev.to_mask(self.n_vars)
        return float(self.log_marginal_batch(vals[None, :], mask)[0])

    def p1_table(self) -> np.ndarray:
        """P(X_v=1 | parent=0), P(X_v=1 | parent=1) per node."""
        return np.exp(self.log_cpt[:, 1, :])


def learn_chow_liu(ds, weights=None, alpha: float = 0.1) -> ChowLiuTree:
    X = _samples(ds)
    n = X.shape[1]
    if n < 1:
        raise ValueError("learn_chow_liu needs at least one variable")
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    joint, marg = _smoothed_pair_tables(X, w, alpha)
    mi = _mi_from_tables(joint, marg)
    edges = maximum_spanning_tree(mi)
    parent, _ = _root_edges(n, edges)
    log_cpt = np.empty((n, 2, 2))
    with np.errstate(divide="ignore"):
        lm = np.log(marg)
        log_cpt[0] = lm[0][:, None]
        for v in range(1, n):
            p = parent[v]
            # joint[v, p, a, b] / marg[p, b]
            log_cpt[v] = np.log(joint[v, p]) - lm[p][None, :]
    # Renormalize away the rounding of the division.
    log_cpt -= np.logaddexp(log_cpt[:, 0:1, :], log_cpt[:, 1:2, :])
    return ChowLiuTree(parent, log_cpt)


def tree_log_marginal(tree: ChowLiuTree, ev: PartialEvidence) -> float:
    return tree.log_marginal(ev)


def _lse_rows(parts: Sequence[np.ndarray]) -> np.ndarray:
    mx = parts[0].copy()
    for p in parts[1:]:
        np.maximum(mx, p, out=mx)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    s = np.zeros_like(mx)
    for p in parts:
        s += np.exp(p - safe)
    with np.errstate(divide="ignore"):
        return safe + np.log(s)


class MixtureOfTrees:
    def __init__(self, components: Sequence[ChowLiuTree], log_lambda):
        self.components = tuple(components)
        self.log_lambda = np.asarray(log_lambda, dtype=float)
        if not self.components or len(self.components) != self.log_lambda.shape[0]:
            raise ValueError("need as many weights as (at least one) components")
        if abs(np.logaddexp.reduce(self.log_lambda)) > 1e-9:
            raise ValueError("mixture weights are not normalized")
        if len({t.n_vars for t in self.components}) != 1:
            raise ValueError("components disagree on the number of variables")
        self.log_lambda.setflags(write=False)

    @property
    def n_vars(self) -> int:
        return self.components[0].n_vars

    @property
    def n_components(self) -> int:
        return len(self.components)

    def log_marginal_batch(self, X: np.ndarray, scope) -> np.ndarray:
        parts = [lw + t.log_marginal_batch(X, scope) for lw, t in zip(self.log_lambda, self.components)]
        return _lse_rows(parts)

    def component_log_joint(self, X: np.ndarray) -> np.ndarray:
        return np.stack([t.log_joint(X) for t in self.components], axis=1)

    def log_joint(self, X: np.ndarray) -> np.ndarray:
        comp = self.component_log_joint(X) + self.log_lambda
        return _lse_rows(list(comp.T))

    def log_marginal(self, ev: PartialEvidence) -> float:
        if ev.scope and ev.scope[-1] >= self.n_vars:
            raise SpnScopeError(f"variable {ev.scope[-1]} out of range for n={self.n_vars}")
        mask, vals = ev.to_mask(self.n_vars)
        return float(self.log_marginal_batch(vals[None, :], mask)[0])

    def to_text(self) -> str:
        lines = [f"MT {self.n_components}"]
        for lw, t in zip(self.log_lambda, self.components):
            lines.append(f"LAMBDA {float(np.exp(lw))!r}")
            p1 = t.p1_table()
            for v in range(t.n_vars):
                lines.append(f"NODE {v} {int(t.parent[v])} {float(p1[v, 0])!r} {float(p1[v, 1])!r}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    def __repr__(self):
        return f"MixtureOfTrees(n_vars={self.n_vars}, components={self.n_components})"


def mt_log_marginal(mt: MixtureOfTrees, ev: PartialEvidence) -> float:
    return mt.log_marginal(ev)


def _tree_from_p1(parent, p1):
    p1 = np.asarray(p1, dtype=float)
    with np.errstate(divide="ignore"):
        log_cpt = np.stack([np.log1p(-p1), np.log(p1)], axis=1)
    return ChowLiuTree(parent, log_cpt)


def parse_mt(text: str) -> MixtureOfTrees:
    lines = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0][0] != "MT":
        raise ModelFormatError("missing 'MT <C>' header")
    C = int(lines[0][1])
    blocks: list[tuple[float, list]] = []
    for tok in lines[1:]:
        if tok[0] == "LAMBDA":
            blocks.append((float(tok[1]), []))
        elif tok[0] == "NODE":
            if not blocks:
                raise ModelFormatError("NODE before any LAMBDA")
            blocks[-1][1].append((int(tok[1]), int(tok[2]), float(tok[3]), float(tok[4])))
        else:
            raise ModelFormatError(f"unknown record {tok[0]!r}")
    if len(blocks) != C:
        raise ModelFormatError(f"header declares {C} components, found {len(blocks)}")
    comps, weights = [], []
    for w, nodes in blocks:
        nodes.sort()
        if [v for v, *_ in nodes] != list(range(len(nodes))):
            raise ModelFormatError("component nodes must be numbered 0..n-1")
        parent = [p for _, p, _, _ in nodes]
        p1 = [[a, b] for _, _, a, b in nodes]
        comps.append(_tree_from_p1(parent, p1))
        weights.append(w)
    with np.errstate(divide="ignore"):
        return MixtureOfTrees(comps, np.log(np.asarray(weights)))


def load_mt(path) -> MixtureOfTrees:
    return parse_mt(Path(path).read_text())


def _reseed_column(X, rng):
    """Soft neighbourhood of a random row: weight exp(-hamming distance)."""
    j = int(rng.integers(0, X.shape[0]))
    ham = np.abs(X - X[j]).sum(axis=1)
    return np.exp(-ham.astype(float))


def fit_mixture_em(ds, C: int = 3, iters: int = 100, tol: float = 1e-4,
                   alpha: float = 0.1, seed: int = 0, restarts: int = 1):
    """Fit a Mixture of Trees by EM.

    Returns ``(model, history)`` where ``history`` holds the training
    log-likelihood after every M-step of the winning restart.
    """
    X = _samples(ds).astype(np.int64)
    m = X.shape[0]
    if C < 1:
        raise ValueError("C must be >= 1")
    if C > m:
        raise ValueError(f"C={C} exceeds the number of samples m={m}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        r = rng.random((m, C))
        r /= r.sum(axis=1, keepdims=True)
        history: list[float] = []
        model = prev_model = None
        for it in range(iters):
            mass = r.sum(axis=0)
            for c in np.flatnonzero(mass < 1e-12):
                logger.warning("EM iteration %d: component %d lost its mass, re-seeding", it, c)
                r[:, c] = _reseed_column(X, rng)
                r /= r.sum(axis=1, keepdims=True)
                mass = r.sum(axis=0)
            trees = [learn_chow_liu(X, r[:, c], alpha) for c in range(C)]
            log_lambda = np.log(mass / mass.sum())
            log_lambda -= np.logaddexp.reduce(log_lambda)
            model = MixtureOfTrees(trees, log_lambda)
            comp = model.component_log_joint(X) + log_lambda
            mx = comp.max(axis=1, keepdims=True)
            norm = mx + np.log(np.exp(comp - mx).sum(axis=1, keepdims=True))
            ll = float(norm.sum())
            if history and ll < history[-1] - 1e-8:
                # Smoothing and re-seeding can lower the raw likelihood; keep
                # the last model that did not.
                logger.info("EM iteration %d: likelihood fell to %.6f, stopping", it, ll)
                model = prev_model
                break
            r = np.exp(comp - norm)
            history.append(ll)
            prev_model = model
            if len(history) > 1 and (ll - history[-2]) < tol * abs(history[-2]):
                break
        if best is None or history[-1] > best[1][-1]:
            best = (model, history)
    return best
