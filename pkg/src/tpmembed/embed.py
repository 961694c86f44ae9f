"""Embeddings from random marginal queries and from sliding-window patch models.

Any model exposing ``n_vars`` and ``log_marginal_batch(X, scope)`` can be
used as an evaluator; :class:`~tpmembed.spn.Spn` and
:class:`~tpmembed.cltree.MixtureOfTrees` both qualify.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from .data import BinaryDataset, PartialEvidence


class EmbeddingError(ValueError):
    pass


@runtime_checkable
class MarginalEvaluator(Protocol):
    n_vars: int

    def log_marginal(self, ev: PartialEvidence) -> float: ...

    def log_marginal_batch(self, X: np.ndarray, scope) -> np.ndarray: ...


@dataclass(frozen=True)
class QuerySet:
    scopes: tuple[tuple[int, ...], ...]
    geometry: Optional[tuple[int, int]] = None
    gen_params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        scopes = tuple(tuple(sorted(int(v) for v in s)) for s in self.scopes)
        for s in scopes:
            if not s:
                raise EmbeddingError("query scopes must be non-empty")
            if s[0] < 0 or len(set(s)) != len(s):
                raise EmbeddingError(f"invalid query scope {s}")
        object.__setattr__(self, "scopes", scopes)

    def __len__(self):
        return len(self.scopes)

    @property
    def k(self) -> int:
        return len(self.scopes)

    @property
    def max_index(self) -> int:
        return max((s[-1] for s in self.scopes), default=-1)

    def to_text(self) -> str:
        return "".join(" ".join(str(v) for v in s) + "\n" for s in self.scopes)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str, geometry=None) -> "QuerySet":
        scopes = [tuple(int(t) for t in line.split()) for line in text.splitlines() if line.strip()]
        return cls(tuple(scopes), geometry=geometry)

    @classmethod
    def load(cls, path, geometry=None) -> "QuerySet":
        return cls.from_text(Path(path).read_text(), geometry=geometry)


def gen_rect_queries(geometry: tuple[int, int], k: int, min_side: int = 2,
                     max_side: int = 10, seed: int = 0) -> QuerySet:
    """Random axis-aligned rectangles of pixels on a ``(width, height)`` image."""
    w, h = (int(v) for v in geometry)
    if k < 0:
        raise EmbeddingError("k must be non-negative")
    if min_side < 1 or min_side > max_side:
        raise EmbeddingError(f"need 1 <= min_side <= max_side, got {min_side}, {max_side}")
    if max_side > min(w, h):
        raise EmbeddingError(f"max_side={max_side} exceeds the image size {w}x{h}")
    rng = np.random.default_rng(seed)
    scopes = []
    for _ in range(k):
        rw = int(rng.integers(min_side, max_side + 1))
        rh = int(rng.integers(min_side, max_side + 1))
        x0 = int(rng.integers(0, w - rw + 1))
        y0 = int(rng.integers(0, h - rh + 1))
        rows = np.arange(y0, y0 + rh)[:, None]
        cols = np.arange(x0, x0 + rw)[None, :]
        scopes.append(tuple((rows * w + cols).ravel().tolist()))
    return QuerySet(tuple(scopes), geometry=(w, h),
                    gen_params={"min_side": min_side, "max_side": max_side, "seed": seed})


@dataclass
class EmbeddingMatrix:
    values: np.ndarray
    scale: str = "log"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise EmbeddingError("embedding values must be a 2-D matrix")
        if self.scale not in ("log", "linear"):
            raise EmbeddingError(f"unknown scale {self.scale!r}")
        if np.isnan(v).any():
            raise EmbeddingError("embedding contains NaN")
        self.values = v

    @property
    def shape(self):
        return self.values.shape

    def save(self, path, queries: Optional[QuerySet] = None) -> None:
        """Write ``path`` as CSV plus a ``.json`` sidecar next to it."""
        path = Path(path)
        with open(path, "w") as fh:
            for row in self.values:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        meta = {"scale": self.scale, "shape": list(self.values.shape), **self.provenance}
        if queries is not None:
            meta["queries"] = [list(s) for s in queries.scopes]
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "EmbeddingMatrix":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        rows = [[float(t) for t in line.split(",")] for line in path.read_text().splitlines() if line]
        values = np.array(rows, dtype=float).reshape(meta["shape"])
        prov = {k: v for k, v in meta.items() if k not in ("scale", "shape", "queries")}
        return cls(values, meta["scale"], prov)


def _samples(ds) -> np.ndarray:
    return ds.samples if isinstance(ds, BinaryDataset) else np.asarray(ds)


def _query_column(model, X, scope, memoize):
    sub = X[:, list(scope)]
    if not memoize:
        return model.log_marginal_batch(X, scope)
    if sub.shape[1] <= 63:
        keys = sub.astype(np.int64) @ (np.int64(1) << np.arange(sub.shape[1], dtype=np.int64))
        _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
        patterns = sub[first]
    else:
        patterns, inverse = np.unique(sub, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    Xu = np.zeros((patterns.shape[0], X.shape[1]), dtype=X.dtype)
    Xu[:, list(scope)] = patterns
    return model.log_marginal_batch(Xu, scope)[inverse]


def _run_columns(fn, n_cols, workers):
    if workers <= 1 or n_cols <= 1:
        return [fn(j) for j in range(n_cols)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_cols)))


def rand_query_embedding(model: MarginalEvaluator, ds, queries: QuerySet, scale: str = "log",
                         memoize: bool = True, workers: int = 1,
                         provenance: Optional[dict] = None) -> EmbeddingMatrix:
    """Entry (i, j) is log p(x_i restricted to the j-th query scope).

    With ``memoize`` each distinct observed configuration of a scope is
    evaluated once; results are identical either way.
    """
    X = _samples(ds)
    if scale not in ("log", "linear"):
        raise EmbeddingError(f"unknown scale {scale!r}")
    if X.shape[1] != model.n_vars:
        raise EmbeddingError(f"model over {model.n_vars} variables, data has {X.shape[1]}")
    if queries.max_index >= X.shape[1]:
        raise EmbeddingError(f"query index {queries.max_index} out of range for n={X.shape[1]}")
    m = X.shape[0]
    if m == 0 or queries.k == 0:
        values = np.zeros((m, queries.k))
    else:
        cols = _run_columns(lambda j: _query_column(model, X, queries.scopes[j], memoize),
                            queries.k, workers)
        values = np.column_stack(cols)
    if scale == "linear":
        values = np.exp(values)
    return EmbeddingMatrix(values, scale, dict(provenance or {}))


def extract_random_patches(ds, s: int, d: int, seed: int = 0) -> BinaryDataset:
    X = _samples(ds)
    m, n = X.shape
    if d < 1 or d > n:
        raise EmbeddingError(f"patch length d={d} must lie in [1, {n}]")
    if s < 1:
        raise EmbeddingError("patch count s must be >= 1")
    if m < 1:
        raise EmbeddingError("cannot extract patches from an empty dataset")
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, m, size=s)
    starts = rng.integers(0, n - d + 1, size=s)
    patches = X[rows[:, None], starts[:, None] + np.arange(d)[None, :]]
    name = getattr(ds, "name", "dataset") + "-patches"
    return BinaryDataset(samples=patches, name=name)


def n_windows(n: int, d: int, stride: int = 1) -> int:
    return (n - d) // stride + 1


def rand_patch_embedding(model: MarginalEvaluator, ds, d: int, stride: int = 1,
                         scale: str = "log", workers: int = 1,
                         provenance: Optional[dict] = None) -> EmbeddingMatrix:
    """Slide a length-``d`` window over each flattened sample and score it."""
    X = _samples(ds)
    n = X.shape[1]
    if model.n_vars != d:
        raise EmbeddingError(f"patch model covers {model.n_vars} variables, expected d={d}")
    if d > n:
        raise EmbeddingError(f"d={d} exceeds the sample length {n}")
    if stride < 1:
        raise EmbeddingError("stride must be >= 1")
    w = n_windows(n, d, stride)
    full = np.ones(d, dtype=bool)

    def window(h):
        start = h * stride
        return model.log_marginal_batch(X[:, start:start + d], full)

    if X.shape[0] == 0:
        values = np.zeros((0, w))
    else:
        values = np.column_stack(_run_columns(window, w, workers))
    if scale == "linear":
        values = np.exp(values)
    return EmbeddingMatrix(values, scale, dict(provenance or {}))
