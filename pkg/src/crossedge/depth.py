"""Depth functions, relative outlyingness and the Liu-Singh rank-sum statistic."""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .geomgraph import GeometricGraph, GraphStats, as_points
from .numerics import NotPositiveDefiniteError, RandomSource, cholesky, symmetric_eigen

DEPTH_KINDS = ("mahalanobis", "halfspace", "univariate-cdf")
_ALIASES = {
    "md": "mahalanobis", "mahalanobis": "mahalanobis",
    "hd": "halfspace", "halfspace": "halfspace", "tukey": "halfspace",
    "cdf": "univariate-cdf", "univariate-cdf": "univariate-cdf", "mw": "univariate-cdf",
}


class DepthError(ValueError):
    pass


def depth_kind(name: str) -> str:
    key = name.lower().removeprefix("depth-").removeprefix("depth(").removesuffix(")")
    try:
        return _ALIASES[key]
    except KeyError:
        raise DepthError(f"unknown depth kind {name!r}; choose from {DEPTH_KINDS}") from None


@dataclass(frozen=True)
class LabeledSample:
    """Pooled points with labels 1 (first sample) and 2 (second sample)."""

    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        pts = as_points(self.points)
        lab = np.asarray(self.labels, dtype=np.int8).reshape(-1)
        if lab.size != pts.shape[0]:
            raise ValueError(f"{lab.size} labels for {pts.shape[0]} points")
        if not np.all((lab == 1) | (lab == 2)):
            raise ValueError("labels must be 1 or 2")
        if not (np.any(lab == 1) and np.any(lab == 2)):
            raise ValueError("both samples must be nonempty")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)

    @classmethod
    def pool(cls, x, y) -> "LabeledSample":
        x, y = as_points(x), as_points(y)
        if x.shape[1] != y.shape[1]:
            raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
        lab = np.concatenate([np.ones(len(x), np.int8), np.full(len(y), 2, np.int8)])
        return cls(np.vstack([x, y]), lab)

    @property
    def n(self) -> int:
        return int(self.labels.size)

    @property
    def n1(self) -> int:
        return int(np.sum(self.labels == 1))

    @property
    def n2(self) -> int:
        return int(np.sum(self.labels == 2))


@dataclass(frozen=True)
class DepthModel:
    """Depth with respect to the empirical distribution of ``reference``.

    Halfspace depth is exact for d <= 2.  In higher dimension it is the
    minimum over ``n_projections`` random unit directions (drawn from
    ``seed``), which can only overstate the true depth; setting
    ``reference_directions`` adds the centred reference points as extra
    directions.
    """

    kind: str
    reference: np.ndarray
    n_projections: int = 500
    reference_directions: bool = False
    seed: int = 0
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", depth_kind(self.kind))
        ref = as_points(self.reference)
        object.__setattr__(self, "reference", ref)
        n, d = ref.shape
        if self.kind == "univariate-cdf":
            if d != 1:
                raise DepthError(f"univariate-cdf depth needs d=1, got d={d}")
            self._cache["sorted"] = np.sort(ref[:, 0])
        elif self.kind == "mahalanobis":
            mu = ref.mean(axis=0)
            if n < 2:
                raise DepthError("mahalanobis depth needs at least two reference points")
            cov = np.atleast_2d(np.cov(ref, rowvar=False))
            try:
                L = cholesky(cov)
            except NotPositiveDefiniteError:
                vals, vecs = symmetric_eigen(cov)
                direction = np.round(vecs[:, -1], 6).tolist()
                raise DepthError(
                    f"sample covariance is singular; smallest eigenvalue {vals[-1]:.3g} "
                    f"along direction {direction}") from None
            self._cache["mean"] = mu
            self._cache["chol"] = L
        else:
            if d == 1:
                self._cache["sorted"] = np.sort(ref[:, 0])
            elif d >= 3:
                u = self.projection_directions()
                proj = ref @ u.T
                self._cache["dirs"] = u
                self._cache["proj_sorted"] = np.ascontiguousarray(np.sort(proj.T, axis=1))

    @property
    def dim(self) -> int:
        return int(self.reference.shape[1])

    @property
    def n_ref(self) -> int:
        return int(self.reference.shape[0])

    def projection_directions(self) -> np.ndarray:
        rng = RandomSource(self.seed, (0x48445052,)).generator()
        u = rng.standard_normal((self.n_projections, self.dim))
        if self.reference_directions:
            c = self.reference - self.reference.mean(axis=0)
            norms = np.linalg.norm(c, axis=1)
            u = np.vstack([u, c[norms > 0]])
        return u / np.linalg.norm(u, axis=1, keepdims=True)

    def depth(self, points) -> np.ndarray:
        x = as_points(points)
        if x.shape[1] != self.dim:
            raise DepthError(f"query dimension {x.shape[1]} does not match reference dimension {self.dim}")
        if self.kind == "univariate-cdf":
            return np.searchsorted(self._cache["sorted"], x[:, 0], side="right") / self.n_ref
        if self.kind == "mahalanobis":
            return 1.0 / (1.0 + _mahalanobis_sq(x, self._cache["mean"], self._cache["chol"]))
        return _halfspace_counts(self, x) / self.n_ref


def _mahalanobis_sq(x, mu, L) -> np.ndarray:
    # forward substitution L w = (x - mu)^T for all rows at once
    r = (x - mu).T.copy()
    d = L.shape[0]
    for i in range(d):
        r[i] = (r[i] - L[i, :i] @ r[:i]) / L[i, i]
    return np.sum(r * r, axis=0)


def _univariate_halfspace(sorted_ref: np.ndarray, v: np.ndarray) -> np.ndarray:
    le = np.searchsorted(sorted_ref, v, side="right")
    ge = sorted_ref.size - np.searchsorted(sorted_ref, v, side="left")
    return np.minimum(le, ge)


@numba.njit(cache=True)
def _planar_counts(ref, x):
    """Tukey depth counts in the plane by an angular sweep per query."""
    n = ref.shape[0]
    m = x.shape[0]
    out = np.empty(m, dtype=np.int64)
    two_pi = 2.0 * np.pi
    for q in range(m):
        ang = np.empty(n)
        k = 0
        for i in range(n):
            dx = ref[i, 0] - x[q, 0]
            dy = ref[i, 1] - x[q, 1]
            if dx == 0.0 and dy == 0.0:
                continue
            a = np.arctan2(dy, dx)
            if a < 0.0:
                a += two_pi
            ang[k] = a
            k += 1
        if k == 0:
            out[q] = n
            continue
        a = np.sort(ang[:k])
        aa = np.concatenate((a, a + two_pi))
        crit = np.empty(2 * k)
        for i in range(k):
            crit[i] = a[i]
            c = a[i] - np.pi
            crit[k + i] = c + two_pi if c < 0.0 else c
        crit = np.sort(crit)
        # the largest open half-plane with x on its boundary; x itself never
        # lies inside it, so depth = n - that count
        best = 0
        for i in range(2 * k):
            lo = crit[i]
            hi = crit[i + 1] if i + 1 < 2 * k else crit[0] + two_pi
            if hi <= lo:
                continue
            s = 0.5 * (lo + hi)
            if s >= two_pi:
                s -= two_pi
            cnt = np.searchsorted(aa, s + np.pi, side="left") - np.searchsorted(aa, s, side="right")
            if cnt > best:
                best = cnt
        out[q] = n - best
    return out


def _halfspace_counts(model: DepthModel, x: np.ndarray) -> np.ndarray:
    d = model.dim
    if d == 1:
        return _univariate_halfspace(model._cache["sorted"], x[:, 0])
    if d == 2:
        return _planar_counts(np.ascontiguousarray(model.reference), np.ascontiguousarray(x))
    u = model._cache["dirs"]
    px = np.ascontiguousarray((x @ u.T).T)
    return _projection_counts(model._cache["proj_sorted"], px)


@numba.njit(cache=True)
def _projection_counts(ps, px):
    """Minimum over directions of the smaller closed tail count.

    ``ps`` holds the sorted reference projections row by row; queries are
    sorted per direction and merged against them.
    """
    n_dirs, n = ps.shape
    m = px.shape[1]
    best = np.full(m, n, dtype=np.int64)
    for j in range(n_dirs):
        row = ps[j]
        order = np.argsort(px[j])
        lt = 0
        le = 0
        for t in range(m):
            q = order[t]
            v = px[j, q]
            while lt < n and row[lt] < v:
                lt += 1
            if le < lt:
                le = lt
            while le < n and row[le] <= v:
                le += 1
            c = min(le, n - lt)
            if c < best[q]:
                best[q] = c
    return best


def mahalanobis_depth(x, model: DepthModel):
    if model.kind != "mahalanobis":
        model = DepthModel("mahalanobis", model.reference)
    out = model.depth(_query(x, model.dim))
    return float(out[0]) if _is_single(x, model.dim) else out


def halfspace_depth(x, model: DepthModel):
    if model.kind != "halfspace":
        model = DepthModel("halfspace", model.reference, model.n_projections, model.reference_directions, model.seed)
    pts = _query(x, model.dim)
    out = model.depth(pts)
    return float(out[0]) if _is_single(x, model.dim) else out


def _is_single(x, d) -> bool:
    a = np.asarray(x, dtype=float)
    return a.ndim == 0 or (a.ndim == 1 and a.size == d and d > 1) or (a.ndim == 1 and d == 1 and a.size == 1)


def _query(x, d) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(1, d) if (d > 1 and a.size == d) else a.reshape(-1, d)
    return a


@dataclass(frozen=True)
class DepthScores:
    values: np.ndarray
    labels: np.ndarray
    tie_pairs: int  # cross-sample pairs with equal depth


def depth_scores(pooled: LabeledSample, model: DepthModel) -> DepthScores:
    ref = pooled.points[pooled.labels == 1]
    if ref.shape != model.reference.shape or not np.array_equal(np.sort(ref, axis=0), np.sort(model.reference, axis=0)):
        raise DepthError("the depth model's reference must be exactly the label-1 subsample")
    vals = model.depth(pooled.points)
    return DepthScores(vals, pooled.labels.copy(), _cross_ties(vals, pooled.labels))


def _cross_ties(vals, labels) -> int:
    a = np.sort(vals[labels == 1])
    b = vals[labels == 2]
    return int(np.sum(np.searchsorted(a, b, "right") - np.searchsorted(a, b, "left")))


def rank_count(dx: np.ndarray, dy: np.ndarray) -> int:
    """#{(i, j): dx[i] <= dy[j]} by sorting."""
    a = np.sort(dx)
    return int(np.sum(np.searchsorted(a, dy, side="right"), dtype=np.int64))


def liu_singh_Q(x, y, kind: str = "mahalanobis", **model_kw) -> float:
    """Share of pairs (X_i, Y_j) with D(X_i) <= D(Y_j), depth taken against X."""
    x, y = as_points(x), as_points(y)
    if x.shape[1] != y.shape[1]:
        raise DepthError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    model = DepthModel(kind, x, **model_kw)
    return rank_count(model.depth(x), model.depth(y)) / (len(x) * len(y))


def relative_outlyingness(y, reference, kind: str = "mahalanobis", **model_kw):
    """Fraction of reference points no deeper than y."""
    model = DepthModel(kind, reference, **model_kw)
    ref_depth = np.sort(model.depth(model.reference))
    dy = model.depth(_query(y, model.dim))
    out = np.searchsorted(ref_depth, dy, side="right") / model.n_ref
    return float(out[0]) if _is_single(y, model.dim) else out


# ------------------------------------------------------------- depth graph

def depth_graph(values) -> GeometricGraph:
    """Complete directed graph with i -> j whenever D_i <= D_j (i != j)."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n > 2000:
        raise DepthError("refusing to materialise a depth graph with more than 2000 vertices")
    i, j = np.nonzero(v[:, None] <= v[None, :])
    keep = i != j
    return GeometricGraph(n, True, np.stack([i[keep], j[keep]], axis=1), {"functional": "depth"})


def depth_degrees(values):
    """Out-degrees, in-degrees and tied-pair count of the depth graph."""
    v = np.asarray(values, dtype=float)
    n = v.size
    s = np.sort(v)
    out_deg = n - np.searchsorted(s, v, side="left") - 1  # D_j >= D_i, j != i
    in_deg = np.searchsorted(s, v, side="right") - 1  # D_j <= D_i, j != i
    _, counts = np.unique(s, return_counts=True)
    e_plus = int(np.sum(counts * (counts - 1) // 2, dtype=np.int64))
    return out_deg.astype(np.int64), in_deg.astype(np.int64), e_plus


def depth_graph_stats(values) -> GraphStats:
    out_deg, in_deg, e_plus = depth_degrees(values)
    return GraphStats.from_degrees(out_deg, in_deg, e_plus, directed=True)


def depth_cross_count(values, labels) -> int:
    """Edges from label 1 to label 2 in the depth graph."""
    v = np.asarray(values, dtype=float)
    lab = np.asarray(labels)
    return rank_count(v[lab == 1], v[lab == 2])


def pooled_depths(points, labels, kind: str, **model_kw):
    """Depth of every pooled point against the label-1 subsample."""
    pts = as_points(points)
    lab = np.asarray(labels)
    model = DepthModel(kind, pts[lab == 1], **model_kw)
    return model.depth(pts)
