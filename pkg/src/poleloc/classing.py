"""Pseudo pole classes via Forgy-initialized k-means.

Assignment: nearest centroid by squared Euclidean distance, ties to the
lowest index. Update: centroid = mean of its members. Iteration stops when
the labels no longer change (or ``max_iters`` is hit).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from poleloc.errors import InvalidArgumentError, ParseError

_CHUNK = 4096


@dataclass(frozen=True)
class KMeansParams:
    k: int = 200
    seed: int = 0
    max_iters: int = 300
    standardize: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise InvalidArgumentError("k must be >= 1")
        if self.max_iters < 1:
            raise InvalidArgumentError("max_iters must be >= 1")


@dataclass
class KMeansModel:
    centroids: np.ndarray  # (k, d), in standardized space when mean/scale are set
    seed: int = 0
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def d(self) -> int:
        return self.centroids.shape[1]

    def transform(self, X: np.ndarray) -> np.ndarray:
        if self.mean is None:
            return X
        return (X - self.mean) / self.scale

    def predict(self, X) -> np.ndarray:
        X = _check_matrix(X, d=self.d)
        return assign_labels(self.transform(X), self.centroids)


@dataclass
class FitResult:
    model: KMeansModel
    labels: np.ndarray
    n_iter: int
    converged: bool
    sse_history: list = field(default_factory=list)


def _check_matrix(X, d=None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1) if d is None or X.size == d else X
    if X.ndim != 2:
        raise InvalidArgumentError(f"descriptors must be 2-D, got shape {X.shape}")
    if d is not None and X.shape[1] != d:
        raise InvalidArgumentError(f"descriptor dimension {X.shape[1]} != model dimension {d}")
    if not np.all(np.isfinite(X)):
        raise InvalidArgumentError("non-finite descriptor")
    return X


def sq_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    # explicit differences, not the |x|^2 - 2xc + |c|^2 expansion: exact zeros and ties survive
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def assign_labels(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    labels = np.empty(len(X), dtype=np.int64)
    step = max(1, _CHUNK * 64 // max(1, C.shape[0] * C.shape[1]))
    for start in range(0, len(X), step):
        # argmin returns the first minimum -> lowest index on ties
        labels[start : start + step] = np.argmin(sq_distances(X[start : start + step], C), axis=1)
    return labels


def sse(X: np.ndarray, C: np.ndarray, labels: np.ndarray) -> float:
    return float(((X - C[labels]) ** 2).sum())


def _update(X: np.ndarray, labels: np.ndarray, C: np.ndarray) -> np.ndarray:
    k, d = C.shape
    sums = np.zeros((k, d))
    np.add.at(sums, labels, X)
    counts = np.bincount(labels, minlength=k)
    newC = C.copy()
    live = counts > 0
    newC[live] = sums[live] / counts[live, None]
    empty = np.flatnonzero(~live)
    if len(empty):
        # reseat empty clusters on the points worst served by their current centroid
        resid = ((X - newC[labels]) ** 2).sum(axis=1)
        order = np.argsort(-resid, kind="stable")
        used = set()
        pos = 0
        for c in empty:
            while pos < len(order) and tuple(X[order[pos]]) in used:
                pos += 1
            pick = order[pos] if pos < len(order) else order[0]
            used.add(tuple(X[pick]))
            newC[c] = X[pick]
            pos += 1
    return newC


def kmeans_fit(descriptors, params: KMeansParams) -> FitResult:
    X = _check_matrix(descriptors)
    n = len(X)
    if params.k > n:
        raise InvalidArgumentError(f"k={params.k} exceeds the number of samples ({n})")

    mean = scale = None
    if params.standardize:
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        X = (X - mean) / scale

    rng = np.random.default_rng(params.seed)
    init = rng.choice(n, size=params.k, replace=False)
    C = X[np.sort(init)].copy()

    labels = assign_labels(X, C)
    history = []
    converged = False
    it = 0
    for it in range(1, params.max_iters + 1):
        C = _update(X, labels, C)
        history.append(sse(X, C, labels))
        new_labels = assign_labels(X, C)
        if np.array_equal(new_labels, labels):
            converged = True
            break
        labels = new_labels
    if not converged:
        # keep centroids consistent with the returned labels
        C = _update(X, labels, C)
        history.append(sse(X, C, labels))

    model = KMeansModel(centroids=C, seed=params.seed, mean=mean, scale=scale)
    return FitResult(model=model, labels=labels, n_iter=it, converged=converged, sse_history=history)


def assign_class(model: KMeansModel, descriptor) -> int:
    x = np.asarray(descriptor, dtype=float).reshape(-1)
    if x.size != model.d:
        raise InvalidArgumentError(f"descriptor dimension {x.size} != model dimension {model.d}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("non-finite descriptor")
    x = model.transform(x[None, :])
    return int(np.argmin(sq_distances(x, model.centroids)[0]))


# ---------------------------------------------------------------- persistence


def save_model(model: KMeansModel, path) -> None:
    """CSV: ``k,d,seed`` header + values, then one centroid per row.

    Standardized models append ``mean,...`` and ``scale,...`` rows.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("k,d,seed\n")
        fh.write(f"{model.k},{model.d},{model.seed}\n")
        for row in model.centroids.tolist():
            fh.write(",".join(repr(v) for v in row) + "\n")
        if model.mean is not None:
            fh.write("mean," + ",".join(repr(v) for v in model.mean.tolist()) + "\n")
            fh.write("scale," + ",".join(repr(v) for v in model.scale.tolist()) + "\n")


def load_model(path) -> KMeansModel:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if len(lines) < 2 or lines[0].strip() != "k,d,seed":
        raise ParseError("missing 'k,d,seed' header", line=1, path=path)
    try:
        k, d, seed = (int(v) for v in lines[1].split(","))
    except ValueError:
        raise ParseError("bad k,d,seed values", line=2, path=path) from None
    rows, extra = [], {}
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split(",")
        tag = None
        if parts[0] in ("mean", "scale"):
            tag, parts = parts[0], parts[1:]
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise ParseError(f"non-numeric value in {line!r}", line=lineno, path=path) from None
        if len(vals) != d or not all(math.isfinite(v) for v in vals):
            raise ParseError(f"expected {d} finite values", line=lineno, path=path)
        if tag:
            extra[tag] = np.array(vals)
        else:
            rows.append(vals)
    if len(rows) != k:
        raise ParseError(f"header declares k={k} but file holds {len(rows)} centroids", path=path)
    return KMeansModel(
        centroids=np.array(rows, dtype=float).reshape(k, d),
        seed=seed,
        mean=extra.get("mean"),
        scale=extra.get("scale"),
    )
