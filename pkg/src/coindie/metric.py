"""Same-die probability from the distance distribution of an aligned pair.

An aligned pair is summarized by the normalized histogram of its
nearest-neighbor distances, and an L2-regularized logistic regression maps
that histogram to the probability that both coins share a die.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch, ParseError, SingleClass
from .geometry import PointCloud, RigidTransform, SpatialIndex

DEFAULT_BINS = 64
DEFAULT_H_MAX = 1.0
# normalized histograms have entries far below 1, so a unit penalty flattens
# the model to the base rate; 1e-3 keeps it nearly unregularized
DEFAULT_LAMBDA = 1e-3


def distance_map(source: PointCloud, target: PointCloud, alignment: Optional[RigidTransform] = None) -> np.ndarray:
    """Squared distance from each aligned source point to its nearest target point."""
    if len(source) == 0 or len(target) == 0:
        raise ValueError("distance_map needs non-empty clouds")
    pts = source.points if alignment is None else alignment.transform_points(source.points)
    _, d2 = SpatialIndex(target).query(pts)
    return d2


@dataclass(frozen=True, eq=False)
class DistanceHistogram:
    """Binned distribution of ``sqrt(D)`` over ``[0, h_max]`` mm; overflow joins the last bin."""

    bins: np.ndarray
    h_max: float = DEFAULT_H_MAX
    normalized: bool = True

    def __post_init__(self):
        b = np.array(self.bins, dtype=float)
        if b.ndim != 1 or len(b) < 2 or np.any(b < 0):
            raise ValueError("bins must be a 1-D array of >= 2 non-negative values")
        if self.normalized and abs(b.sum() - 1.0) > 1e-9:
            raise ValueError("normalized histogram must sum to 1")
        b.setflags(write=False)
        object.__setattr__(self, "bins", b)

    def __len__(self):
        return len(self.bins)


def histogram(dmap, bins: int = DEFAULT_BINS, h_max: float = DEFAULT_H_MAX) -> DistanceHistogram:
    """Count-normalized histogram of the distances ``sqrt(dmap)``.

    >>> histogram(np.array([0.01, 0.25]), bins=5, h_max=1.0).bins.tolist()
    [0.5, 0.0, 0.5, 0.0, 0.0]
    """
    if bins < 2 or not h_max > 0:
        raise ValueError("need bins >= 2 and h_max > 0")
    d = np.sqrt(np.asarray(dmap, dtype=float))
    if len(d) == 0:
        raise ValueError("empty distance map")
    k = np.minimum(np.floor(d * (bins / h_max)), bins - 1).astype(np.intp)
    counts = np.bincount(k, minlength=bins).astype(float)
    return DistanceHistogram(counts / len(d), h_max, True)


@dataclass(frozen=True)
class ComparisonRecord:
    pair: Tuple[str, str]
    histogram: DistanceHistogram
    label: int

    def __post_init__(self):
        if self.pair[0] == self.pair[1]:
            raise ValueError("a comparison needs two distinct coins")
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")
        if not self.histogram.normalized:
            raise ValueError("histogram must be normalized")


@dataclass(frozen=True, eq=False)
class LogisticModel:
    theta: np.ndarray
    bias: float = 0.0
    lam: float = DEFAULT_LAMBDA
    h_max: float = DEFAULT_H_MAX

    def __post_init__(self):
        th = np.array(self.theta, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(th)) and np.isfinite(self.bias)):
            raise ValueError("model parameters must be finite")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def dimension(self) -> int:
        return len(self.theta)

    @classmethod
    def zero(cls, dimension: int = DEFAULT_BINS, **kw) -> "LogisticModel":
        return cls(np.zeros(dimension), 0.0, **kw)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def objective(params: np.ndarray, X: np.ndarray, y: np.ndarray, lam: float) -> Tuple[float, np.ndarray]:
    """Regularized negative log-likelihood and its gradient.

    ``params`` is ``theta`` followed by the bias; the bias is not penalized.
    """
    theta, b = params[:-1], params[-1]
    z = X @ theta + b
    loss = float(np.sum(np.logaddexp(0.0, z) - y * z) + lam * theta @ theta)
    r = _sigmoid(z) - y
    grad = np.concatenate([X.T @ r + 2.0 * lam * theta, [r.sum()]])
    return loss, grad


def _hessian(params, X, lam):
    z = X @ params[:-1] + params[-1]
    p = _sigmoid(z)
    w = p * (1.0 - p)
    Xa = np.hstack([X, np.ones((len(X), 1))])
    H = (Xa * w[:, None]).T @ Xa
    d = len(params) - 1
    H[:d, :d] += 2.0 * lam * np.eye(d)
    return H


def fit_logistic(X, y, lam: float = 1.0, method: str = "newton", max_iter: int = 1000, tol: float = 1e-6):
    """Minimize :func:`objective` from zero with a backtracking line search.

    Returns ``(theta, bias, losses)`` where ``losses`` lists the objective
    after every accepted step, starting from the initial value.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    params = np.zeros(X.shape[1] + 1)
    loss, grad = objective(params, X, y, lam)
    losses = [loss]
    for _ in range(max_iter):
        if np.linalg.norm(grad) < tol:
            break
        if method == "newton":
            direction = -np.linalg.solve(_hessian(params, X, lam), grad)
        elif method == "gd":
            direction = -grad
        else:
            raise ValueError(f"unknown method {method!r}")
        step = 1.0
        slope = grad @ direction
        while step > 1e-12:
            cand = params + step * direction
            cand_loss, cand_grad = objective(cand, X, y, lam)
            if cand_loss <= loss + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            break
        params, loss, grad = cand, cand_loss, cand_grad
        losses.append(loss)
    return params[:-1], float(params[-1]), losses


def self_match_histogram(bins: int = DEFAULT_BINS, h_max: float = DEFAULT_H_MAX) -> DistanceHistogram:
    """Histogram of a coin compared with itself: all mass in the first bin."""
    return histogram(np.zeros(1), bins, h_max)


def train(
    records: Sequence[ComparisonRecord],
    lam: float = DEFAULT_LAMBDA,
    method: str = "newton",
    self_matches: int = 0,
) -> LogisticModel:
    """Fit a logistic model on labeled comparison histograms.

    ``self_matches`` adds that many zero-distance positives (a coin
    against itself).  Scanner noise keeps real same-die pairs out of the
    first bin, so without them an exact duplicate scores as different.
    """
    if len(records) < 2:
        raise ValueError("need at least two records")
    if self_matches < 0:
        raise ValueError("self_matches must be >= 0")
    y = np.array([r.label for r in records], dtype=float)
    if y.min() == y.max():
        raise SingleClass("training labels are all equal")
    dims = {len(r.histogram) for r in records}
    hmax = {r.histogram.h_max for r in records}
    if len(dims) != 1 or len(hmax) != 1:
        raise DimensionMismatch("records mix histogram shapes")
    X = np.vstack([r.histogram.bins for r in records])
    h_max = hmax.pop()
    if self_matches:
        X = np.vstack([X, np.tile(self_match_histogram(X.shape[1], h_max).bins, (self_matches, 1))])
        y = np.concatenate([y, np.ones(self_matches)])
    theta, b, _ = fit_logistic(X, y, lam, method)
    return LogisticModel(theta, b, lam, h_max)


def predict(model: LogisticModel, h) -> float:
    """Same-die probability ``sigmoid(theta . h + b)``."""
    bins = h.bins if isinstance(h, DistanceHistogram) else np.asarray(h, dtype=float)
    if len(bins) != model.dimension:
        raise DimensionMismatch(f"histogram has {len(bins)} bins, model expects {model.dimension}")
    if isinstance(h, DistanceHistogram) and h.h_max != model.h_max:
        raise DimensionMismatch(f"histogram range {h.h_max} differs from model range {model.h_max}")
    return float(_sigmoid(np.array([bins @ model.theta + model.bias]))[0])


def accuracy(model: LogisticModel, records: Sequence[ComparisonRecord], threshold: float = 0.5) -> float:
    hits = [(predict(model, r.histogram) >= threshold) == bool(r.label) for r in records]
    return float(np.mean(hits))


_MAGIC = "coindie-logistic-model 1"


def save_model(model: LogisticModel, path) -> None:
    """Write the model as plain text with 17 significant digits per value."""
    lines = [
        _MAGIC,
        f"dimension {model.dimension}",
        f"bins {model.dimension}",
        f"h_max {model.h_max:.17g}",
        f"lambda {model.lam:.17g}",
        f"bias {model.bias:.17g}",
        "theta",
    ]
    lines += [f"{v:.17g}" for v in model.theta]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> LogisticModel:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh]
    if not lines or lines[0] != _MAGIC:
        raise ParseError(f"{path}: line 1: not a model file")
    header = {}
    i = 1
    while i < len(lines) and lines[i] != "theta":
        parts = lines[i].split()
        if len(parts) != 2:
            raise ParseError(f"{path}: line {i + 1}: expected 'key value'")
        header[parts[0]] = parts[1]
        i += 1
    try:
        dim = int(header["dimension"])
        theta = [float(v) for v in lines[i + 1 : i + 1 + dim]]
        model = LogisticModel(np.array(theta), float(header["bias"]), float(header["lambda"]), float(header["h_max"]))
    except (KeyError, ValueError, IndexError) as exc:
        raise ParseError(f"{path}: malformed model ({exc})") from exc
    if len(theta) != dim or int(header.get("bins", dim)) != dim:
        raise ParseError(f"{path}: expected {dim} theta entries, found {len(theta)}")
    return model
