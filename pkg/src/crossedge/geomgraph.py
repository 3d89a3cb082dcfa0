"""Geometric graphs on point clouds and their edge / 2-star summaries."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np
from scipy.spatial.distance import cdist

from .numerics import RandomSource


class GraphError(ValueError):
    pass


class NotNiceError(GraphError):
    """Raised when distinct pairwise distances are required but absent."""


def as_points(points) -> np.ndarray:
    """Coerce to a float (n, d) array; a flat vector is read as n points in R^1."""
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise GraphError(f"expected an (n, d) point array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise GraphError("point coordinates must be finite")
    return x


def squared_distances(x: np.ndarray) -> np.ndarray:
    # cdist works pair by pair, so equal distances stay exactly equal
    return cdist(x, x, "sqeuclidean")


def is_nice(points) -> bool:
    """True when all pairwise distances are distinct (and points are distinct)."""
    x = as_points(points)
    n = x.shape[0]
    if n < 2:
        return True
    iu = np.triu_indices(n, 1)
    diff = x[iu[0]] - x[iu[1]]
    d2 = np.einsum("ij,ij->i", diff, diff)
    if np.any(d2 == 0.0):
        return False
    return np.unique(d2).size == d2.size


@dataclass(frozen=True, eq=False)
class GeometricGraph:
    n: int
    directed: bool
    edges: np.ndarray  # (m, 2) int64, lexicographically sorted
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= self.n):
            raise GraphError("edge endpoint out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise GraphError("self-loops are not allowed")
        if not self.directed:
            e = np.sort(e, axis=1)
        if e.size:
            e = np.unique(e, axis=0)
            if e.shape[0] != np.asarray(self.edges).reshape(-1, 2).shape[0]:
                raise GraphError("duplicate edges are not allowed")
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)

    def __eq__(self, other):
        if not isinstance(other, GeometricGraph):
            return NotImplemented
        return (self.n, self.directed) == (other.n, other.directed) and np.array_equal(self.edges, other.edges)

    __hash__ = None

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    def doubled(self) -> "GeometricGraph":
        """Directed version with both orientations of every undirected edge."""
        if self.directed:
            return self
        e = np.concatenate([self.edges, self.edges[:, ::-1]])
        return GeometricGraph(self.n, True, e, dict(self.info))

    def out_degrees(self) -> np.ndarray:
        return np.bincount(self.edges[:, 0], minlength=self.n)

    def in_degrees(self) -> np.ndarray:
        return np.bincount(self.edges[:, 1], minlength=self.n)

    def degrees(self) -> np.ndarray:
        return self.out_degrees() + self.in_degrees()

    def edge_set(self) -> set:
        return {(int(a), int(b)) for a, b in self.edges}

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"#directed={int(self.directed)} n={self.n}\n")
        for a, b in self.edges:
            buf.write(f"{a}\t{b}\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "GeometricGraph":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("#"):
            raise GraphError("missing '#directed=<0|1> n=<n>' header")
        head = dict(tok.split("=", 1) for tok in lines[0][1:].split())
        edges = [tuple(int(v) for v in ln.split("\t")) for ln in lines[1:]]
        return cls(int(head["n"]), head["directed"] == "1", np.array(edges, dtype=np.int64).reshape(-1, 2))


# ------------------------------------------------------------------ builders

@numba.njit(cache=True)
def _prim(x):
    n, d = x.shape
    in_tree = np.zeros(n, dtype=np.bool_)
    best = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=np.int64)
    out = np.empty((n - 1, 2), dtype=np.int64)
    ties = False
    u = 0
    in_tree[0] = True
    for step in range(n - 1):
        # relax from the newest tree vertex u
        for v in range(n):
            if in_tree[v]:
                continue
            s = 0.0
            for k in range(d):
                t = x[u, k] - x[v, k]
                s += t * t
            if s < best[v]:
                best[v] = s
                parent[v] = u
            elif s == best[v]:
                ties = True
                # lexicographic tie-break on the (min, max) index pair
                a0 = min(u, v)
                b0 = max(u, v)
                a1 = min(parent[v], v)
                b1 = max(parent[v], v)
                if a0 < a1 or (a0 == a1 and b0 < b1):
                    parent[v] = u
        w = -1
        for v in range(n):
            if in_tree[v]:
                continue
            if w < 0 or best[v] < best[w]:
                w = v
            elif best[v] == best[w]:
                ties = True
                av = min(parent[v], v)
                bv = max(parent[v], v)
                aw = min(parent[w], w)
                bw = max(parent[w], w)
                if av < aw or (av == aw and bv < bw):
                    w = v
        in_tree[w] = True
        out[step, 0] = min(parent[w], w)
        out[step, 1] = max(parent[w], w)
        u = w
    return out, ties


def build_mst(points, require_nice: bool = False) -> GeometricGraph:
    """Euclidean minimum spanning tree by Prim's O(n^2) scan.

    Equal distances are resolved by the lexicographic (min, max) index pair,
    so every input has a unique answer.  With ``require_nice`` any distance
    tie raises :class:`NotNiceError`.
    """
    x = as_points(points)
    n = x.shape[0]
    if n < 2:
        raise GraphError("a spanning tree needs at least two points")
    if require_nice and not is_nice(x):
        raise NotNiceError("pairwise distances are not all distinct")
    edges, ties = _prim(np.ascontiguousarray(x))
    info = {"functional": "mst"}
    if ties:
        info["ties"] = True
    return GeometricGraph(n, False, edges, info)


def knn_lists(x: np.ndarray, k: int) -> np.ndarray:
    """Indices of each point's k nearest neighbours, ties broken by index."""
    d2 = squared_distances(x)
    np.fill_diagonal(d2, np.inf)
    n = x.shape[0]
    idx = np.tile(np.arange(n), (n, 1))
    order = np.lexsort((idx, d2), axis=1)
    return order[:, :k]


def build_knn(points, k: int) -> GeometricGraph:
    """Undirected K-NN graph: a--b when either is among the other's k nearest."""
    x = as_points(points)
    n = x.shape[0]
    if not 1 <= k <= n - 1:
        raise GraphError(f"k must lie in [1, n-1] = [1, {n - 1}], got {k}")
    nb = knn_lists(x, k)
    src = np.repeat(np.arange(n), k)
    e = np.sort(np.stack([src, nb.reshape(-1)], axis=1), axis=1)
    e = np.unique(e, axis=0)
    return GeometricGraph(n, False, e, {"functional": f"knn({k})", "k": k})


def build_nbm(points, seed: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> GeometricGraph:
    """Minimum-weight perfect matching on Euclidean distances.

    For odd n one uniformly chosen point is left out; its index is stored in
    ``info['dropped']`` and it stays in the graph as an isolated vertex.
    """
    import networkx as nx

    x = as_points(points)
    n = x.shape[0]
    if n < 2:
        raise GraphError("a matching needs at least two points")
    keep = np.arange(n)
    info = {"functional": "nbm"}
    if n % 2:
        if rng is None:
            rng = RandomSource(0 if seed is None else seed, (0x4E424D,)).generator()
        drop = int(rng.integers(n))
        keep = np.delete(keep, drop)
        info["dropped"] = drop
    m = keep.size
    if m == 2:
        return GeometricGraph(n, False, keep[None, :], info)
    d = np.sqrt(squared_distances(x[keep]))
    # maximise (offset - distance) over maximum-cardinality matchings
    offset = float(d.max()) + 1.0
    g = nx.Graph()
    iu, ju = np.triu_indices(m, 1)
    g.add_weighted_edges_from(zip(iu.tolist(), ju.tolist(), (offset - d[iu, ju]).tolist()))
    mate = nx.max_weight_matching(g, maxcardinality=True)
    pairs = np.array([sorted((keep[a], keep[b])) for a, b in mate], dtype=np.int64)
    if pairs.shape[0] != m // 2:
        raise GraphError("matching is not perfect")
    return GeometricGraph(n, False, pairs, info)


def build_sorted_path(points) -> GeometricGraph:
    """Path through univariate points in increasing order (ties by index)."""
    x = as_points(points)
    if x.shape[1] != 1:
        raise GraphError(f"the sorted path needs 1-dimensional points, got d={x.shape[1]}")
    n = x.shape[0]
    if n < 2:
        raise GraphError("a path needs at least two points")
    order = np.argsort(x[:, 0], kind="stable")
    e = np.stack([order[:-1], order[1:]], axis=1)
    return GeometricGraph(n, False, e, {"functional": "path1d"})


# -------------------------------------------------------------- statistics

@dataclass(frozen=True)
class GraphStats:
    """Edge and 2-star counts.

    For undirected graphs ``e_n`` is the undirected edge count while the
    directed fields describe the doubled graph in which each edge appears in
    both orientations.
    """

    directed: bool
    n: int
    e_n: int
    e_plus: int
    t2_up: int
    t2_down: int
    t2_mixed: int
    t2_undirected: int
    max_degree: int
    degrees: np.ndarray = field(repr=False, compare=False)  # (n, 3): out, in, total

    @classmethod
    def from_degrees(cls, out_deg, in_deg, e_plus: int, directed: bool = True) -> "GraphStats":
        """Counts for a directed graph known only through its degree sequences.

        Every bidirectional pair is a mixed in/out 2-star at both ends with a
        repeated neighbour, so those are removed from the product sum.
        """
        out_deg = np.asarray(out_deg, dtype=np.int64)
        in_deg = np.asarray(in_deg, dtype=np.int64)
        e = int(out_deg.sum())
        if e != int(in_deg.sum()):
            raise GraphError("in- and out-degree sums differ")
        tot = out_deg + in_deg
        return cls(
            directed=directed,
            n=int(out_deg.size),
            e_n=e,
            e_plus=int(e_plus),
            t2_up=_c2sum(out_deg),
            t2_down=_c2sum(in_deg),
            t2_mixed=int(np.sum(out_deg * in_deg, dtype=np.int64)) - 2 * int(e_plus),
            t2_undirected=_c2sum(tot),
            max_degree=int(tot.max(initial=0)),
            degrees=np.stack([out_deg, in_deg, tot], axis=1),
        )


def _c2sum(deg) -> int:
    deg = np.asarray(deg, dtype=np.int64)
    return int(np.sum(deg * (deg - 1) // 2, dtype=np.int64))


def graph_stats(g: GeometricGraph) -> GraphStats:
    if g.directed:
        e = g.edges
        if e.size:
            fwd = e[:, 0] * g.n + e[:, 1]
            rev = e[:, 1] * g.n + e[:, 0]
            e_plus = int(np.isin(fwd, rev).sum()) // 2
        else:
            e_plus = 0
        return GraphStats.from_degrees(g.out_degrees(), g.in_degrees(), e_plus, directed=True)
    deg = g.degrees()
    c2 = _c2sum(deg)
    return GraphStats(
        directed=False,
        n=g.n,
        e_n=g.n_edges,
        e_plus=g.n_edges,
        t2_up=c2,
        t2_down=c2,
        t2_mixed=2 * c2,
        t2_undirected=c2,
        max_degree=int(deg.max(initial=0)),
        degrees=np.stack([deg, deg, deg], axis=1),
    )


@dataclass(frozen=True)
class ScaledDegrees:
    directed: bool
    up: Optional[np.ndarray]  # N * out-degree / e
    down: Optional[np.ndarray]  # N * in-degree / e
    total: Optional[np.ndarray]  # N * degree / e (undirected)


def scaled_degrees(g: GeometricGraph, n_total: Optional[int] = None) -> ScaledDegrees:
    if g.n_edges == 0:
        raise GraphError("scaled degrees need at least one edge")
    big_n = g.n if n_total is None else int(n_total)
    e = g.n_edges
    if g.directed:
        return ScaledDegrees(True, big_n * g.out_degrees() / e, big_n * g.in_degrees() / e, None)
    return ScaledDegrees(False, None, None, big_n * g.degrees() / e)


def build_graph(points, functional: str, k: int = 3, seed: Optional[int] = None) -> GeometricGraph:
    """Dispatch on a functional name: mst, knn, nbm or path1d."""
    name = functional.lower()
    if name == "mst":
        return build_mst(points)
    if name.startswith("knn"):
        if "(" in name:
            k = int(name[name.index("(") + 1:name.rindex(")")])
        return build_knn(points, k)
    if name in ("nbm", "cm", "crossmatch"):
        return build_nbm(points, seed=seed)
    if name in ("path1d", "runs", "path"):
        return build_sorted_path(points)
    raise GraphError(f"unknown graph functional {functional!r}")


def total_length(points, g: GeometricGraph) -> float:
    x = as_points(points)
    diff = x[g.edges[:, 0]] - x[g.edges[:, 1]]
    return math.fsum(sorted(np.sqrt(np.einsum("ij,ij->i", diff, diff)).tolist()))
