"""Sum-Product Networks over binary variables.

Nodes live in a flat list in topological order (children first) and are
addressed by position. Every probability is kept in natural-log space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .data import BinaryDataset, PartialEvidence

NORM_TOL = 1e-9


class SpnStructureError(ValueError):
    pass


class SpnScopeError(IndexError):
    pass


@dataclass(frozen=True)
class LeafNode:
    var: int
    log_p: tuple[float, float]

    @classmethod
    def bernoulli(cls, var: int, p1: float) -> "LeafNode":
        with np.errstate(divide="ignore"):
            return cls(int(var), (float(np.log1p(-p1)), float(np.log(p1))))

    @property
    def p1(self) -> float:
        return math.exp(self.log_p[1])


@dataclass(frozen=True)
class ProductNode:
    children: tuple[int, ...]


@dataclass(frozen=True)
class SumNode:
    children: tuple[int, ...]
    log_weights: tuple[float, ...]

    @classmethod
    def from_weights(cls, children, weights) -> "SumNode":
        with np.errstate(divide="ignore"):
            lw = np.log(np.asarray(weights, dtype=float))
        return cls(tuple(int(c) for c in children), tuple(float(w) for w in lw))


SpnNode = Union[LeafNode, ProductNode, SumNode]


def _lse(values) -> float:
    a = np.asarray(values, dtype=float)
    mx = a.max()
    if not np.isfinite(mx):
        return float(mx)
    return float(mx + np.log(np.exp(a - mx).sum()))


@dataclass
class Violation:
    node: int
    prop: str
    detail: str

    def __str__(self):
        return f"node {self.node}: {self.prop}: {self.detail}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def __str__(self):
        if self.ok:
            return "ok"
        return "\n".join(str(v) for v in self.violations)


class Spn:
    """Rooted DAG of sum, product and Bernoulli leaf nodes.

    The root defaults to the last node. Instances are immutable; evaluation
    allocates its own scratch buffers so one network can serve many threads.
    """

    def __init__(self, nodes: Sequence[SpnNode], root: Optional[int] = None):
        if not nodes:
            raise SpnStructureError("an SPN needs at least one node")
        self.nodes: tuple[SpnNode, ...] = tuple(nodes)
        self.root = len(self.nodes) - 1 if root is None else int(root)
        size = len(self.nodes)
        if not 0 <= self.root < size:
            raise SpnStructureError(f"root id {self.root} out of range")
        for i, node in enumerate(self.nodes):
            for c in getattr(node, "children", ()):
                if not 0 <= c < size:
                    raise SpnStructureError(f"node {i}: child id {c} out of range")
        self.scopes = self._compute_scopes()
        root_scope = self.scopes[self.root] or frozenset()
        self.n_vars = max(root_scope) + 1 if root_scope else 0
        self._report: Optional[ValidationReport] = None

        leaf_ids = [i for i, nd in enumerate(self.nodes) if isinstance(nd, LeafNode)]
        self._leaf_ids = np.array(leaf_ids, dtype=np.int64)
        self._leaf_var = np.array([self.nodes[i].var for i in leaf_ids], dtype=np.int64)
        self._leaf_logp = np.array([self.nodes[i].log_p for i in leaf_ids], dtype=float).reshape(-1, 2)
        self._leaf_row = {nid: j for j, nid in enumerate(leaf_ids)}
        parents = np.zeros(size, dtype=np.int64)
        for node in self.nodes:
            for c in getattr(node, "children", ()):
                parents[c] += 1
        self._n_parents = parents
        scope_mat = np.zeros((size, max(self.n_vars, 1)), dtype=bool)
        for i, sc in enumerate(self.scopes):
            if sc:
                scope_mat[i, [v for v in sc if v < self.n_vars]] = True
        self._scope_mat = scope_mat

    def _compute_scopes(self):
        scopes: list[Optional[frozenset]] = [None] * len(self.nodes)
        state = [0] * len(self.nodes)  # 0 new, 1 on stack, 2 done
        for start in range(len(self.nodes)):
            if state[start]:
                continue
            stack = [(start, False)]
            while stack:
                i, expanded = stack.pop()
                node = self.nodes[i]
                if isinstance(node, LeafNode):
                    scopes[i] = frozenset((node.var,))
                    state[i] = 2
                    continue
                if expanded:
                    acc = frozenset()
                    for c in node.children:
                        if scopes[c] is None:
                            break
                        acc = acc | scopes[c]
                    else:
                        scopes[i] = acc
                    state[i] = 2
                    continue
                if state[i] == 2:
                    continue
                state[i] = 1
                stack.append((i, True))
                for c in node.children:
                    if state[c] == 0:
                        stack.append((c, False))
                    elif state[c] == 1:
                        scopes[i] = None  # cycle; reported by validate
        return scopes

    # structure -----------------------------------------------------------
    def __len__(self):
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return sum(len(getattr(nd, "children", ())) for nd in self.nodes)

    def counts(self) -> dict[str, int]:
        out = {"sum": 0, "product": 0, "leaf": 0}
        for nd in self.nodes:
            key = {SumNode: "sum", ProductNode: "product", LeafNode: "leaf"}[type(nd)]
            out[key] += 1
        return out

    def validate(self) -> ValidationReport:
        if self._report is None:
            self._report = validate_spn(self)
        return self._report

    def _require_valid(self):
        report = self.validate()
        if not report.ok:
            raise SpnStructureError(f"invalid SPN:\n{report}")

    # evaluation ----------------------------------------------------------
    def log_eval_batch(self, X: np.ndarray, observed, on_visit: Optional[Callable[[int], None]] = None) -> np.ndarray:
        """Log-probability of every row of ``X`` restricted to ``observed``.

        ``observed`` is a boolean mask over the variables (or an iterable of
        indices); unobserved columns of ``X`` are ignored.
        """
        self._require_valid()
        X = np.asarray(X)
        if X.ndim != 2 or X.shape[1] < self.n_vars:
            raise SpnScopeError(f"data of shape {X.shape} does not cover {self.n_vars} variables")
        mask = _as_mask(observed, X.shape[1])
        m = X.shape[0]

        # A node whose scope misses every observed variable has marginal 1.
        relevant = self._scope_mat[:, mask[:self.n_vars]].any(axis=1)
        if not relevant[self.root]:
            return np.zeros(m)
        remaining = self._n_parents.copy()
        vals: dict[int, np.ndarray] = {}
        for i, node in enumerate(self.nodes):
            if not relevant[i]:
                continue
            if on_visit is not None:
                on_visit(i)
            if isinstance(node, LeafNode):
                # relevant leaves are observed ones
                vals[i] = np.where(X[:, node.var] != 0, node.log_p[1], node.log_p[0])
                continue
            ch = node.children
            if isinstance(node, ProductNode):
                ch = [c for c in ch if relevant[c]]
                acc = vals[ch[0]].copy()
                for c in ch[1:]:
                    acc += vals[c]
            else:
                terms = [vals[c] + w for c, w in zip(ch, node.log_weights)]
                mx = terms[0].copy()
                for t in terms[1:]:
                    np.maximum(mx, t, out=mx)
                safe = np.where(np.isfinite(mx), mx, 0.0)
                s = np.zeros(m)
                for t in terms:
                    s += np.exp(t - safe)
                with np.errstate(divide="ignore"):
                    acc = safe + np.log(s)
                acc[mx == -np.inf] = -np.inf
            vals[i] = acc
            for c in ch:
                if not relevant[c]:
                    continue
                remaining[c] -= 1
                if remaining[c] == 0 and c != self.root:
                    del vals[c]
        return vals[self.root]

    def log_marginal(self, ev: PartialEvidence) -> float:
        x, mask = _evidence_row(ev, self.n_vars)
        return float(self.log_eval_batch(x, mask)[0])

    def log_marginal_batch(self, X: np.ndarray, scope) -> np.ndarray:
        return self.log_eval_batch(X, scope)

    def log_joint(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X)
        return self.log_eval_batch(X, np.ones(X.shape[1], dtype=bool))

    # serialization -------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        order = list(range(len(self.nodes)))
        if self.root != order[-1]:
            order.remove(self.root)
            order.append(self.root)
        for i in order:
            nd = self.nodes[i]
            if isinstance(nd, LeafNode):
                lines.append(f"LEAF {i} {nd.var} {nd.p1!r}")
            elif isinstance(nd, ProductNode):
                lines.append(f"PRD {i} " + " ".join(str(c) for c in nd.children))
            else:
                parts = [f"({c}:{math.exp(w)!r})" for c, w in zip(nd.children, nd.log_weights)]
                lines.append(f"SUM {i} " + " ".join(parts))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    def __repr__(self):
        c = self.counts()
        return (f"Spn(n_vars={self.n_vars}, nodes={len(self)}, sums={c['sum']}, "
                f"products={c['product']}, leaves={c['leaf']})")


def _as_mask(observed, n: int) -> np.ndarray:
    obs = np.asarray(observed)
    if obs.dtype == bool:
        if obs.shape != (n,):
            raise SpnScopeError(f"mask of shape {obs.shape} does not match {n} variables")
        return obs
    mask = np.zeros(n, dtype=bool)
    idx = obs.astype(np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise SpnScopeError(f"scope index out of range for n={n}")
    mask[idx] = True
    return mask


def _evidence_row(ev: PartialEvidence, n: int):
    if ev.scope and ev.scope[-1] >= n:
        raise SpnScopeError(f"variable {ev.scope[-1]} out of range for n={n}")
    mask, vals = ev.to_mask(n)
    return vals[None, :], mask


def validate_spn(spn: Spn) -> ValidationReport:
    report = ValidationReport()
    bad = report.violations
    for i, nd in enumerate(spn.nodes):
        children = getattr(nd, "children", ())
        if any(c >= i for c in children):
            bad.append(Violation(i, "order", "children must precede their parent"))
        if spn.scopes[i] is None:
            bad.append(Violation(i, "acyclic", "node lies on or above a cycle"))
            continue
        if isinstance(nd, LeafNode):
            if nd.var < 0:
                bad.append(Violation(i, "leaf", f"negative variable index {nd.var}"))
            if abs(_lse(nd.log_p)) > NORM_TOL:
                bad.append(Violation(i, "leaf_normalized", f"logsumexp(log_p) = {_lse(nd.log_p)}"))
            continue
        if not children:
            bad.append(Violation(i, "arity", "inner node without children"))
            continue
        child_scopes = [spn.scopes[c] for c in children]
        if any(s is None for s in child_scopes):
            continue
        if isinstance(nd, SumNode):
            if len(nd.log_weights) != len(children):
                bad.append(Violation(i, "arity", "weights and children differ in length"))
            elif abs(_lse(nd.log_weights)) > NORM_TOL:
                bad.append(Violation(i, "sum_normalized",
                                     f"logsumexp(log_weights) = {_lse(nd.log_weights)}"))
            for c, s in zip(children, child_scopes):
                if s != spn.scopes[i]:
                    bad.append(Violation(i, "completeness",
                                         f"child {c} scope differs from the node scope"))
                    break
        else:
            seen: set = set()
            for c, s in zip(children, child_scopes):
                if seen & s:
                    bad.append(Violation(i, "decomposability",
                                         f"child {c} overlaps the scope of a sibling"))
                    break
                seen |= s
    root_scope = spn.scopes[spn.root]
    if root_scope is not None and root_scope != frozenset(range(spn.n_vars)):
        bad.append(Violation(spn.root, "root_scope",
                             f"root scope is not {{0..{spn.n_vars - 1}}}"))
    return report


def spn_log_marginal(spn: Spn, ev: PartialEvidence) -> float:
    return spn.log_marginal(ev)


def spn_log_eval_batch(spn: Spn, ds: Union[BinaryDataset, np.ndarray], scope) -> np.ndarray:
    X = ds.samples if isinstance(ds, BinaryDataset) else np.asarray(ds)
    if X.shape[0] == 0:
        spn._require_valid()
        return np.zeros(0)
    return spn.log_eval_batch(X, scope)


def parse_spn(text: str) -> Spn:
    """Parse the line format ``LEAF id var p1`` / ``PRD id c...`` / ``SUM id (c:w)...``."""
    nodes: list[SpnNode] = []
    ids: dict[int, int] = {}

    def child(tok, lineno):
        try:
            cid = int(tok)
        except ValueError:
            raise SpnStructureError(f"line {lineno}: bad child id {tok!r}") from None
        if cid not in ids:
            raise SpnStructureError(f"line {lineno}: child {cid} is not defined before use")
        return ids[cid]

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        kind = tok[0].upper()
        try:
            nid = int(tok[1])
        except (IndexError, ValueError):
            raise SpnStructureError(f"line {lineno}: missing node id") from None
        if nid in ids:
            raise SpnStructureError(f"line {lineno}: duplicate node id {nid}")
        try:
            if kind == "LEAF":
                node = LeafNode.bernoulli(int(tok[2]), float(tok[3]))
            elif kind == "PRD":
                node = ProductNode(tuple(child(t, lineno) for t in tok[2:]))
            elif kind == "SUM":
                cs, ws = [], []
                for t in tok[2:]:
                    c, _, w = t.strip("()").partition(":")
                    cs.append(child(c, lineno))
                    ws.append(float(w))
                node = SumNode.from_weights(cs, ws)
            else:
                raise SpnStructureError(f"line {lineno}: unknown node kind {tok[0]!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, SpnStructureError):
                raise
            raise SpnStructureError(f"line {lineno}: {exc}") from None
        ids[nid] = len(nodes)
        nodes.append(node)
    if not nodes:
        raise SpnStructureError("empty SPN file")
    spn = Spn(nodes)
    report = spn.validate()
    if not report.ok:
        raise SpnStructureError(f"SPN fails validation:\n{report}")
    return spn


def load_spn(path) -> Spn:
    return parse_spn(Path(path).read_text())
