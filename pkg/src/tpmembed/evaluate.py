"""One-vs-rest L2 logistic regression and accuracy-vs-feature-count curves."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit

C_GRID = (0.0001, 0.001, 0.01, 0.1, 1.0)


@dataclass(frozen=True)
class OptimizerSettings:
    max_iters: int = 1000
    grad_tol: float = 1e-5


@dataclass(frozen=True)
class Standardizer:
    """Clamp -inf cells, then centre and scale with training statistics.

    With ``scale=False`` only the clamp is applied (mean 0, std 1).
    """

    floor: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X, scale: bool = True) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        _check_finite_or_neginf(X)
        finite = np.isfinite(X)
        col_min = np.where(finite, X, np.inf).min(axis=0) if X.shape[0] else np.zeros(X.shape[1])
        floor = np.where(np.isfinite(col_min), col_min - 10.0, -10.0)
        if not scale:
            return cls(floor, np.zeros(X.shape[1]), np.ones(X.shape[1]))
        Xc = np.where(finite, X, floor)
        mean = Xc.mean(axis=0)
        std = Xc.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(floor, mean, std)

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        _check_finite_or_neginf(X)
        if X.shape[1] != self.mean.shape[0]:
            raise ValueError(f"expected {self.mean.shape[0]} features, got {X.shape[1]}")
        Xc = np.where(np.isfinite(X), X, self.floor)
        return (Xc - self.mean) / self.std


def _check_finite_or_neginf(X):
    if np.isnan(X).any() or np.isposinf(X).any():
        raise ValueError("features must be finite or -inf")


def binary_objective(wb: np.ndarray, Xs: np.ndarray, t: np.ndarray, C: float):
    """0.5 |w|^2 + C sum log(1 + exp(-t (w.x + b))) and its gradient."""
    w, b = wb[:-1], wb[-1]
    z = t * (Xs @ w + b)
    f = 0.5 * float(w @ w) - C * float(log_expit(z).sum())
    coef = -C * t * expit(-z)
    grad = np.empty_like(wb)
    grad[:-1] = w + Xs.T @ coef
    grad[-1] = coef.sum()
    return f, grad


@dataclass
class LogisticModel:
    weights: np.ndarray  # (L, k)
    biases: np.ndarray  # (L,)
    C: float
    scaler: Standardizer
    converged: bool = True
    objectives: list = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def scores(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got shape {X.shape}")
        return self.scaler.transform(X) @ self.weights.T + self.biases

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.scores(X), axis=1)


def _fit_binary(Xs, t, C, opt: OptimizerSettings, init=None):
    x0 = np.zeros(Xs.shape[1] + 1) if init is None else np.asarray(init, dtype=float)
    res = minimize(binary_objective, x0, args=(Xs, t, C), jac=True, method="L-BFGS-B",
                   options={"maxiter": opt.max_iters, "gtol": opt.grad_tol,
                            "ftol": 0.0, "maxcor": 20})
    gnorm = float(np.max(np.abs(res.jac))) if res.jac.size else 0.0
    return res.x, float(res.fun), gnorm < opt.grad_tol


def train_logreg_ovr(X, y, C: float, opt: OptimizerSettings = OptimizerSettings(),
                     init: Optional[np.ndarray] = None, standardize: bool = True) -> LogisticModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if not C > 0:
        raise ValueError("C must be positive")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y disagree on the number of samples")
    L = int(y.max()) + 1 if y.size else 0
    if len(np.unique(y)) < 2:
        raise ValueError("need at least two classes in y")
    scaler = Standardizer.fit(X, scale=standardize)
    Xs = scaler.transform(X)
    k = X.shape[1]
    W = np.zeros((L, k))
    b = np.zeros(L)
    converged = True
    objectives = []
    for c in range(L):
        t = np.where(y == c, 1.0, -1.0)
        x0 = None if init is None else init[c]
        wb, f, ok = _fit_binary(Xs, t, C, opt, x0)
        W[c], b[c] = wb[:-1], wb[-1]
        converged &= ok
        objectives.append(f)
    return LogisticModel(W, b, float(C), scaler, bool(converged), objectives)


def accuracy(model: LogisticModel, X, y) -> float:
    y = np.asarray(y)
    if y.size == 0:
        return 0.0
    return float(np.mean(model.predict(X) == y))


def select_C(train, valid, grid: Sequence[float] = C_GRID,
             opt: OptimizerSettings = OptimizerSettings(), workers: int = 1,
             standardize: bool = True):
    """Fit one model per C on ``train`` and keep the best on ``valid``.

    Returns ``(C, model, valid_accuracy)``; ties go to the smaller C.
    """
    grid = sorted(float(c) for c in grid)
    if not grid:
        raise ValueError("empty C grid")
    (Xtr, ytr), (Xva, yva) = train, valid

    def fit(C):
        model = train_logreg_ovr(Xtr, ytr, C, opt, standardize=standardize)
        return model, accuracy(model, Xva, yva)

    if workers > 1 and len(grid) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(fit, grid))
    else:
        results = [fit(C) for C in grid]
    best = 0
    for i, (_, acc) in enumerate(results):
        if acc > results[best][1]:
            best = i
    model, acc = results[best]
    return grid[best], model, acc


@dataclass
class CurveResult:
    rows: list  # (features, C, valid_acc, test_acc)
    baseline: Optional[tuple] = None  # (n_features, C, valid_acc, test_acc)

    def to_csv(self) -> str:
        lines = ["features,C,valid_acc,test_acc"]
        for j, C, va, te in self.rows:
            lines.append(f"{j},{C!r},{va!r},{te!r}")
        if self.baseline is not None:
            _, C, va, te = self.baseline
            lines.append(f"baseline,{C!r},{va!r},{te!r}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "CurveResult":
        rows, baseline = [], None
        for line in text.splitlines()[1:]:
            f, C, va, te = line.split(",")
            if f == "baseline":
                baseline = (None, float(C), float(va), float(te))
            else:
                rows.append((int(f), float(C), float(va), float(te)))
        return cls(rows, baseline)


def feature_counts(k: int, step: int) -> list[int]:
    if step < 1:
        raise ValueError("step must be >= 1")
    counts = list(range(step, k + 1, step))
    if k > 0 and (not counts or counts[-1] != k):
        counts.append(k)
    return counts


def _values(e):
    return e.values if hasattr(e, "values") else np.asarray(e, dtype=float)


def feature_curve(embeddings, labels, step: int = 100, grid: Sequence[float] = C_GRID,
                  opt: OptimizerSettings = OptimizerSettings(), raw=None,
                  workers: int = 1, standardize: bool = True) -> CurveResult:
    """Accuracy of ``select_C`` on the first j embedding columns, j = step, 2 step, ...

    ``embeddings`` and ``labels`` are (train, valid, test) triples; ``raw`` is
    an optional triple of original samples for the baseline row.
    """
    Etr, Eva, Ete = (_values(e) for e in embeddings)
    ytr, yva, yte = (np.asarray(y) for y in labels)
    k = Etr.shape[1]
    if Eva.shape[1] != k or Ete.shape[1] != k:
        raise ValueError("train/valid/test embeddings differ in width")

    def point(j):
        C, model, va = select_C((Etr[:, :j], ytr), (Eva[:, :j], yva), grid, opt,
                                standardize=standardize)
        return (j, C, va, accuracy(model, Ete[:, :j], yte))

    counts = feature_counts(k, step)
    if workers > 1 and len(counts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(point, counts))
    else:
        rows = [point(j) for j in counts]
    baseline = None
    if raw is not None:
        Rtr, Rva, Rte = (np.asarray(getattr(r, "samples", r), dtype=float) for r in raw)
        C, model, va = select_C((Rtr, ytr), (Rva, yva), grid, opt, workers, standardize)
        baseline = (Rtr.shape[1], C, va, accuracy(model, Rte, yte))
    return CurveResult(rows, baseline)
