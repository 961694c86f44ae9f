"""Binary datasets: loading, validation, splitting and synthetic generators.

Canonical on-disk format is comma separated 0/1 text, one sample per row,
with an optional trailing non-negative integer label column.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

SPLIT_TAGS = ("train", "valid", "test", "unsplit")
FORMATS = ("csv_labeled", "csv_unlabeled")


class DatasetError(ValueError):
    pass


class DatasetParseError(DatasetError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BinaryDataset:
    """An m x n matrix of binary observations.

    ``labels`` are class ids in ``[0, n_classes)``; ``geometry`` is
    ``(width, height)`` with pixels flattened in row-major order.
    """

    samples: np.ndarray
    labels: Optional[np.ndarray] = None
    geometry: Optional[tuple[int, int]] = None
    name: str = "dataset"
    split_tag: str = "unsplit"

    def __post_init__(self):
        x = np.asarray(self.samples)
        if x.ndim != 2:
            raise DatasetError(f"samples must be 2-D, got shape {x.shape}")
        if x.size and not np.isin(x, (0, 1)).all():
            raise DatasetError("samples must contain only 0/1 entries")
        object.__setattr__(self, "samples", _readonly(x.astype(np.uint8)))
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.shape != (x.shape[0],):
                raise DatasetError(
                    f"labels length {y.shape} does not match {x.shape[0]} samples")
            if y.size and (y.min() < 0 or not np.all(y == np.round(y))):
                raise DatasetError("labels must be non-negative integers")
            object.__setattr__(self, "labels", _readonly(y.astype(np.int64)))
        if self.geometry is not None:
            w, h = (int(v) for v in self.geometry)
            if w * h != x.shape[1]:
                raise DatasetError(
                    f"geometry {w}x{h}={w * h} does not match n={x.shape[1]}")
            object.__setattr__(self, "geometry", (w, h))
        if self.split_tag not in SPLIT_TAGS:
            raise DatasetError(f"unknown split tag {self.split_tag!r}")

    @property
    def m(self) -> int:
        return self.samples.shape[0]

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    @property
    def n_classes(self) -> int:
        if self.labels is None or self.labels.size == 0:
            return 0
        return int(self.labels.max()) + 1

    def __len__(self):
        return self.m

    def describe(self) -> str:
        parts = [f"{self.name} [{self.split_tag}]: m={self.m} n={self.n}"]
        if self.labels is not None:
            parts.append(f"L={self.n_classes}")
        if self.geometry is not None:
            parts.append("geometry={}x{}".format(*self.geometry))
        parts.append(f"density={self.samples.mean() if self.samples.size else 0.0:.4f}")
        return " ".join(parts)


@dataclass(frozen=True)
class PartialEvidence:
    """Assignment of 0/1 values to a sorted, duplicate-free variable scope."""

    scope: tuple[int, ...] = ()
    values: tuple[int, ...] = field(default=())

    def __post_init__(self):
        scope = tuple(int(v) for v in self.scope)
        values = tuple(int(v) for v in self.values)
        if len(scope) != len(values):
            raise ValueError("scope and values must have equal length")
        if any(b <= a for a, b in zip(scope, scope[1:])):
            raise ValueError("scope must be strictly increasing")
        if scope and scope[0] < 0:
            raise ValueError("negative variable index in scope")
        if any(v not in (0, 1) for v in values):
            raise ValueError("evidence values must be 0 or 1")
        object.__setattr__(self, "scope", scope)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_dict(cls, assignment: dict[int, int]) -> "PartialEvidence":
        items = sorted(assignment.items())
        return cls(tuple(k for k, _ in items), tuple(v for _, v in items))

    @classmethod
    def restrict(cls, sample: Sequence[int], scope: Sequence[int]) -> "PartialEvidence":
        scope = sorted(scope)
        return cls(tuple(scope), tuple(int(sample[v]) for v in scope))

    def to_mask(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Dense (observed mask, values) pair over n variables."""
        if self.scope and self.scope[-1] >= n:
            raise IndexError(f"variable {self.scope[-1]} out of range for n={n}")
        mask = np.zeros(n, dtype=bool)
        vals = np.zeros(n, dtype=np.uint8)
        mask[list(self.scope)] = True
        vals[list(self.scope)] = self.values
        return mask, vals


def load_binary_dataset(path, format: str = "csv_unlabeled", name: str | None = None) -> BinaryDataset:
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}, expected one of {FORMATS}")
    path = Path(path)
    labeled = format == "csv_labeled"
    rows, labels = [], []
    arity = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            tokens = [t.strip() for t in line.split(",")]
            if arity is None:
                arity = len(tokens)
                if labeled and arity < 2:
                    raise DatasetParseError(path, lineno, "labeled row needs at least one feature")
            elif len(tokens) != arity:
                raise DatasetParseError(
                    path, lineno, f"expected {arity} fields, found {len(tokens)}")
            feats = tokens[:-1] if labeled else tokens
            bad = [t for t in feats if t not in ("0", "1")]
            if bad:
                raise DatasetParseError(path, lineno, f"non-binary entry {bad[0]!r}")
            rows.append([int(t) for t in feats])
            if labeled:
                lab = tokens[-1]
                if not lab.isdigit():
                    raise DatasetParseError(path, lineno, f"invalid label {lab!r}")
                labels.append(int(lab))
    if not rows:
        raise DatasetError(f"{path}: empty dataset")
    return BinaryDataset(
        samples=np.array(rows, dtype=np.uint8),
        labels=np.array(labels, dtype=np.int64) if labeled else None,
        name=name or path.stem.split(".")[0],
    )


def write_binary_dataset(ds: BinaryDataset, path) -> None:
    with open(path, "w") as fh:
        for i, row in enumerate(ds.samples):
            fields = [str(int(v)) for v in row]
            if ds.labels is not None:
                fields.append(str(int(ds.labels[i])))
            fh.write(",".join(fields) + "\n")


def attach_geometry(ds: BinaryDataset, width: int, height: int) -> BinaryDataset:
    if width <= 0 or height <= 0:
        raise DatasetError("width and height must be positive")
    if width * height != ds.n:
        raise DatasetError(f"dimension mismatch: {width}x{height}={width * height} != n={ds.n}")
    return replace(ds, geometry=(width, height))


def split_dataset(ds: BinaryDataset, fractions=(0.6, 0.2, 0.2), seed: int = 0):
    """Shuffle rows under ``seed`` and cut them into train/valid/test parts."""
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3 or any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise DatasetError(f"fractions must be 3 positive values summing to 1, got {fractions}")
    m = ds.m
    if m < 3:
        raise DatasetError(f"need at least 3 rows to split, got {m}")
    n_train = int(math.floor(fr[0] * m + 1e-9))
    n_valid = int(math.floor(fr[1] * m + 1e-9))
    n_test = m - n_train - n_valid
    if min(n_train, n_valid, n_test) <= 0:
        raise DatasetError(f"fractions {fr} leave an empty part for m={m}")
    perm = np.random.default_rng(seed).permutation(m)
    cuts = np.split(perm, [n_train, n_train + n_valid])
    parts = []
    for idx, tag in zip(cuts, ("train", "valid", "test")):
        parts.append(BinaryDataset(
            samples=ds.samples[idx],
            labels=None if ds.labels is None else ds.labels[idx],
            geometry=ds.geometry,
            name=ds.name,
            split_tag=tag,
        ))
    return tuple(parts)


def split_paths(directory, name: str) -> dict[str, Path]:
    directory = Path(directory)
    return {tag: directory / f"{name}.{tag}.csv" for tag in ("train", "valid", "test")}


def _rect_outline(rng, width, height, wide):
    img = np.zeros((height, width), dtype=np.uint8)
    while True:
        rw = int(rng.integers(3, width + 1))
        rh = int(rng.integers(3, height + 1))
        if (rw > rh) == wide and rw != rh:
            break
    x0 = int(rng.integers(0, width - rw + 1))
    y0 = int(rng.integers(0, height - rh + 1))
    img[y0, x0:x0 + rw] = 1
    img[y0 + rh - 1, x0:x0 + rw] = 1
    img[y0:y0 + rh, x0] = 1
    img[y0:y0 + rh, x0 + rw - 1] = 1
    return img.ravel()


def make_rectangles_noise(m: int, width: int = 8, height: int = 8, flip: float = 0.05,
                          seed: int = 0, name: str = "rectnoise") -> BinaryDataset:
    """Three-class image set: wide outlines (0), tall outlines (1), noise (2).

    Noise images are i.i.d. pixels at the mean density of the rectangle
    images, so the classes differ in pixel interactions rather than in
    ink. Every pixel is then flipped with probability ``flip``.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, size=m)
    rects = [_rect_outline(rng, width, height, wide=bool(rng.integers(0, 2)))
             for _ in range(256)]
    density = float(np.mean(rects))
    x = np.empty((m, width * height), dtype=np.uint8)
    for i, lab in enumerate(labels):
        if lab == 2:
            x[i] = rng.random(width * height) < density
        else:
            x[i] = _rect_outline(rng, width, height, wide=(lab == 0))
    x ^= (rng.random(x.shape) < flip).astype(np.uint8)
    return BinaryDataset(samples=x, labels=labels, geometry=(width, height), name=name)
