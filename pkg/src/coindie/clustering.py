"""Dies as connected components of a thresholded same-die probability graph."""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CoinDieError, UndefinedARI
from .geometry import PointCloud
from .globalreg import GlobalConfig
from .metric import LogisticModel, predict
from .pipeline import compare


class ProbabilityMatrix:
    """Symmetric matrix of pairwise same-die probabilities, unit diagonal."""

    def __init__(self, p, ids: Optional[Sequence[str]] = None):
        p = np.array(p, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError("probability matrix must be square")
        if not np.array_equal(p, p.T):
            raise ValueError("probability matrix must be symmetric")
        if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must lie in [0, 1]")
        np.fill_diagonal(p, 1.0)
        p.setflags(write=False)
        self.p = p
        self.ids = [str(i) for i in range(len(p))] if ids is None else [str(i) for i in ids]
        if len(self.ids) != len(p):
            raise ValueError("one id per row required")

    @property
    def n(self) -> int:
        return len(self.p)

    @classmethod
    def from_pairs(cls, n: int, values: Dict[Tuple[int, int], float], ids=None) -> "ProbabilityMatrix":
        p = np.eye(n)
        for (i, j), v in values.items():
            p[i, j] = p[j, i] = v
        return cls(p, ids)


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # the smaller root wins, so every root is its component's minimum
            lo, hi = min(ra, rb), max(ra, rb)
            self.parent[hi] = lo


@dataclass
class ClusterGraph:
    """Thresholded graph and its components.

    ``components`` lists each component as sorted member indices, ordered by
    smallest member; ``labels[i]`` is that smallest member for coin ``i``.
    """

    adjacency: np.ndarray
    alpha: float
    components: List[List[int]]
    labels: List[int]
    ids: List[str]
    probabilities: Optional[ProbabilityMatrix] = None
    failures: List[Tuple[str, str, str]] = field(default_factory=list)

    def labeling(self) -> Dict[str, int]:
        return dict(zip(self.ids, self.labels))


def threshold_graph(P: ProbabilityMatrix, alpha: float) -> ClusterGraph:
    """Edges where ``p_ij >= alpha`` (``i != j``) and their components."""
    A = P.p >= alpha
    np.fill_diagonal(A, False)
    uf = UnionFind(P.n)
    for i, j in zip(*np.nonzero(np.triu(A, 1))):
        uf.union(int(i), int(j))
    labels = [uf.find(i) for i in range(P.n)]
    groups: Dict[int, List[int]] = {}
    for i, lab in enumerate(labels):
        groups.setdefault(lab, []).append(i)
    comps = [groups[k] for k in sorted(groups)]
    return ClusterGraph(A, float(alpha), comps, labels, list(P.ids), P)


def _comb2(x):
    x = np.asarray(x, dtype=float)
    return x * (x - 1) / 2


def adjusted_rand_index(predicted, truth) -> float:
    """Chance-corrected pair-counting agreement of two labelings.

    Labelings are sequences (aligned by position) or dicts keyed by item.

    Raises
    ------
    UndefinedARI
        If the expected and maximal index coincide but the partitions differ.
    """
    if isinstance(predicted, dict) or isinstance(truth, dict):
        if set(predicted) != set(truth):
            raise ValueError("labelings cover different items")
        keys = sorted(truth)
        predicted = [predicted[k] for k in keys]
        truth = [truth[k] for k in keys]
    if len(predicted) != len(truth):
        raise ValueError("labelings have different lengths")
    _, a = np.unique(np.asarray(predicted, dtype=object).astype(str), return_inverse=True)
    _, b = np.unique(np.asarray(truth, dtype=object).astype(str), return_inverse=True)
    table = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(table, (a, b), 1)
    index = _comb2(table).sum()
    rows = _comb2(table.sum(axis=1)).sum()
    cols = _comb2(table.sum(axis=0)).sum()
    total = _comb2(len(a))
    expected = rows * cols / total if total else 0.0
    top = 0.5 * (rows + cols)
    if top == expected:
        same = np.count_nonzero(table) == table.shape[0] == table.shape[1]
        if same:
            return 1.0
        raise UndefinedARI("adjusted Rand index undefined for these partitions")
    return float((index - expected) / (top - expected))


def _pair_job(args):
    i, j, source, target, model, cfg = args
    try:
        _, h = compare(source, target, cfg, model.dimension, model.h_max)
        return i, j, predict(model, h), None
    except CoinDieError as exc:
        return i, j, 0.0, f"{type(exc).__name__}: {exc}"


def probability_matrix(clouds: Sequence[PointCloud], model: LogisticModel, cfg: Optional[GlobalConfig] = None, jobs: int = 1, progress=None):
    """All pairwise probabilities plus the pairs that failed to register.

    The lower id of each pair is registered onto the higher one.  Failed
    registrations get probability 0.
    """
    cfg = GlobalConfig() if cfg is None else cfg
    n = len(clouds)
    tasks = [(i, j, clouds[i], clouds[j], model, cfg) for i in range(n) for j in range(i + 1, n)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_pair_job, tasks, chunksize=1))
    else:
        results = []
        for t in tasks:
            results.append(_pair_job(t))
            if progress:
                progress(len(results), len(tasks))
    values, failures = {}, []
    ids = [c.id for c in clouds]
    for i, j, p, err in sorted(results, key=lambda r: (r[0], r[1])):
        values[(i, j)] = p
        if err is not None:
            failures.append((ids[i], ids[j], err))
    return ProbabilityMatrix.from_pairs(n, values, ids), failures


def cluster_pipeline(
    clouds: Sequence[PointCloud],
    model: LogisticModel,
    cfg: Optional[GlobalConfig] = None,
    alpha: float = 0.5,
    jobs: int = 1,
    progress=None,
) -> ClusterGraph:
    """Register every pair, predict, threshold at ``alpha``."""
    if len(clouds) < 2:
        raise ValueError("clustering needs at least two clouds")
    P, failures = probability_matrix(clouds, model, cfg, jobs, progress)
    graph = threshold_graph(P, alpha)
    graph.failures = failures
    return graph


def write_matrix_csv(P: ProbabilityMatrix, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["id"] + P.ids) + "\n")
        for cid, row in zip(P.ids, P.p):
            fh.write(",".join([cid] + [f"{v:.6f}" for v in row]) + "\n")


_PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


def write_dot(graph: ClusterGraph, path) -> None:
    comp_of = {m: k for k, comp in enumerate(graph.components) for m in comp}
    lines = ["graph dies {", "  node [style=filled];"]
    for i, cid in enumerate(graph.ids):
        color = _PALETTE[comp_of[i] % len(_PALETTE)]
        lines.append(f'  "{cid}" [fillcolor="{color}", component={comp_of[i]}];')
    for i, j in zip(*np.nonzero(np.triu(graph.adjacency, 1))):
        p = graph.probabilities.p[i, j] if graph.probabilities is not None else 1.0
        lines.append(f'  "{graph.ids[i]}" -- "{graph.ids[j]}" [weight={p:.6f}];')
    lines.append("}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def graph_document(graph: ClusterGraph) -> dict:
    edges = []
    for i, j in zip(*np.nonzero(np.triu(graph.adjacency, 1))):
        p = graph.probabilities.p[i, j] if graph.probabilities is not None else None
        edges.append({"source": graph.ids[i], "target": graph.ids[j], "p": None if p is None else round(float(p), 6)})
    return {
        "nodes": [{"id": cid, "component": int(k)} for k, cid in zip(graph.labels, graph.ids)],
        "edges": edges,
        "components": [[graph.ids[m] for m in comp] for comp in graph.components],
        "alpha": graph.alpha,
        "failures": [{"source": a, "target": b, "error": e} for a, b, e in graph.failures],
    }


def write_json(graph: ClusterGraph, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(graph_document(graph), fh, indent=2, sort_keys=True)
        fh.write("\n")
