"""Cross-edge two-sample statistic with exact, asymptotic and permutation calibration."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import ndtr

from . import depth as _depth
from .depth import LabeledSample
from .geomgraph import GeometricGraph, GraphError, GraphStats, build_graph, graph_stats
from .numerics import RandomSource, parallel_map

DEGENERATE_TOL = 1e-12
DIRECTIONS = ("lower", "upper", "two-sided")
_PERM_STREAM = 0x5045524D

__all__ = [
    "LabeledSample", "TestResult", "cross_count", "cross_statistic", "null_mean",
    "bootstrap_variance", "null_variance", "permutation_variance", "run_test", "permutation_pvalue",
]


def _labels(labels, n: int) -> np.ndarray:
    lab = np.asarray(labels).reshape(-1)
    if lab.size != n:
        raise ValueError(f"{lab.size} labels for a graph on {n} vertices")
    return lab


def cross_count(g: GeometricGraph, labels) -> int:
    lab = _labels(labels, g.n)
    a, b = lab[g.edges[:, 0]], lab[g.edges[:, 1]]
    if g.directed:
        return int(np.sum((a == 1) & (b == 2)))
    return int(np.sum(a != b))


def cross_statistic(g: GeometricGraph, labels) -> float:
    """Share of edges running from sample 1 to sample 2 (either way if undirected)."""
    if g.n_edges == 0:
        raise GraphError("the cross-edge statistic needs at least one edge")
    return cross_count(g, labels) / g.n_edges


def null_mean(g: Union[GeometricGraph, bool], n1: int, n2: int) -> Fraction:
    """Exact permutation mean of the statistic on a fixed graph."""
    directed = g if isinstance(g, bool) else g.directed
    n = n1 + n2
    if n < 2:
        raise ValueError("need at least two points")
    base = Fraction(n1 * n2, n * (n - 1))
    return base if directed else 2 * base


def _coefficients(n1: int, n2: int):
    n = n1 + n2
    nu = Fraction(n1 * n2, n * n)
    a = nu - nu * nu
    c = nu * nu
    b_up = Fraction(n1 * n2 * n2, n ** 3) - c
    b_down = Fraction(n1 * n1 * n2, n ** 3) - c
    return n, a, c, b_up, b_down


def bootstrap_variance(stats: GraphStats, n1: int, n2: int) -> float:
    """Variance of sqrt(N) T when labels are i.i.d. with P(label 1) = n1/N.

    Undirected graphs are handled through their doubled directed version,
    whose statistic is exactly half of the undirected one.
    """
    if stats.e_n <= 0:
        raise GraphError("variance needs at least one edge")
    n, a, c, b_up, b_down = (float(v) for v in _coefficients(n1, n2))
    if stats.directed:
        e, scale = float(stats.e_n), 1.0
    else:
        e, scale = 2.0 * stats.e_n, 4.0
    v = (n * a / e
         - 2 * c * n * stats.e_plus / e ** 2
         + 2 * b_up * n * stats.t2_up / e ** 2
         + 2 * b_down * n * stats.t2_down / e ** 2
         - 2 * c * n * stats.t2_mixed / e ** 2)
    return scale * v


def _r_hat(n1: int, n2: int) -> float:
    n = n1 + n2
    return 2.0 * (n1 / n) * (n2 / n)


def null_variance(stats: GraphStats, n1: int, n2: int, sigma11_sq: Optional[float] = None) -> float:
    """Bootstrap variance minus the label-count correction r(1-2r)/2 (on the native scale)."""
    s11 = bootstrap_variance(stats, n1, n2) if sigma11_sq is None else sigma11_sq
    r = _r_hat(n1, n2)
    corr = 0.5 * r * (1.0 - 2.0 * r)
    return s11 - (corr if stats.directed else 4.0 * corr)


def permutation_variance(stats: GraphStats, n1: int, n2: int) -> Fraction:
    """Exact variance of sqrt(N) T over relabelings with n1 ones, for a fixed graph.

    Pairs of edges are sorted by how they share vertices; each class has a
    closed-form joint probability under sampling without replacement.
    """
    n = n1 + n2
    if n < 4:
        raise ValueError("exact permutation variance needs at least four points")
    f3 = n * (n - 1) * (n - 2)
    p2 = Fraction(n1 * n2, n * (n - 1))
    p112 = Fraction(n1 * (n1 - 1) * n2, f3)
    p122 = Fraction(n1 * n2 * (n2 - 1), f3)
    p1212 = Fraction(n1 * (n1 - 1) * n2 * (n2 - 1), f3 * (n - 3))
    if stats.directed:
        e = stats.e_n
        mean = e * p2
        disjoint = e * (e - 1) - 2 * (stats.e_plus + stats.t2_up + stats.t2_down + stats.t2_mixed)
        second = mean + 2 * stats.t2_up * p122 + 2 * stats.t2_down * p112 + disjoint * p1212
    else:
        e = stats.e_n
        mean = 2 * e * p2
        shared = stats.t2_undirected
        second = mean + 2 * shared * (p112 + p122) + (e * (e - 1) - 2 * shared) * 4 * p1212
    return n * (second - mean * mean) / (e * e)


def is_degenerate(sigma1_sq: float, perm_var: Optional[float] = None) -> bool:
    """True when the root-N normal approximation has nothing to work with.

    Either the asymptotic null variance vanishes, or the statistic is
    exactly constant over relabelings of the observed graph.
    """
    if not sigma1_sq > DEGENERATE_TOL:
        return True
    return perm_var is not None and not perm_var > DEGENERATE_TOL


def tail_pvalue(z: float, direction: str) -> float:
    if direction == "lower":
        return float(ndtr(z))
    if direction == "upper":
        return float(ndtr(-z))
    if direction == "two-sided":
        return float(min(1.0, 2.0 * ndtr(-abs(z))))
    raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")


# ------------------------------------------------------------- permutations

def _perm_labels(labels: np.ndarray, seed: int, k: int) -> np.ndarray:
    return RandomSource(seed, (_PERM_STREAM, k)).generator().permutation(labels)


def _is_extreme(stat, obs, centre, direction, tol=1e-12):
    slack = tol * max(1.0, abs(obs))
    if direction == "lower":
        return stat <= obs + slack
    if direction == "upper":
        return stat >= obs - slack
    return abs(stat - centre) >= abs(obs - centre) - slack


def _graph_perm_chunk(args):
    g, labels, seed, ks, obs_count, centre_count, direction = args
    hits = 0
    counts = []
    for k in ks:
        c = cross_count(g, _perm_labels(labels, seed, k))
        counts.append(c)
        if direction == "lower":
            hits += c <= obs_count
        elif direction == "upper":
            hits += c >= obs_count
        else:
            hits += abs(c - centre_count) >= abs(obs_count - centre_count)
    return hits, counts


def _fn_perm_chunk(args):
    fn, labels, seed, ks, obs, centre, direction = args
    hits = 0
    vals = []
    for k in ks:
        s = float(fn(_perm_labels(labels, seed, k)))
        vals.append(s)
        hits += bool(_is_extreme(s, obs, centre, direction))
    return hits, vals


def _chunks(b: int, workers: int):
    size = max(1, math.ceil(b / max(1, 4 * workers)))
    return [range(i, min(b, i + size)) for i in range(0, b, size)]


def permutation_pvalue(target: Union[GeometricGraph, Callable], labels, b: int, seed: int = 0,
                       direction: str = "lower", centre: Optional[float] = None,
                       workers: int = 1, return_draws: bool = False):
    """Add-one Monte Carlo permutation p-value.

    ``target`` is either a fixed graph (statistic = cross-edge share) or a
    callable mapping a label vector to the statistic, which lets label-dependent
    constructions such as depth graphs be rebuilt for each relabelling.
    Replicate k always uses stream k of ``seed`` so the answer does not
    depend on ``workers``.
    """
    if b < 1:
        raise ValueError("need at least one permutation")
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    labels = np.asarray(labels).reshape(-1)
    n1, n2 = int(np.sum(labels == 1)), int(np.sum(labels == 2))
    ranges = _chunks(b, workers)
    if isinstance(target, GeometricGraph):
        obs = cross_count(target, labels)
        if centre is None:
            centre = float(null_mean(target, n1, n2)) * target.n_edges
        jobs = [(target, labels, seed, ks, obs, centre, direction) for ks in ranges]
        parts = parallel_map(_graph_perm_chunk, jobs, workers)
        scale = 1.0 / target.n_edges
    else:
        obs = float(target(labels))
        if centre is None:
            centre = float(Fraction(n1 * n2, (n1 + n2) * (n1 + n2 - 1)))
        jobs = [(target, labels, seed, ks, obs, centre, direction) for ks in ranges]
        parts = parallel_map(_fn_perm_chunk, jobs, workers)
        scale = 1.0
    hits = sum(p[0] for p in parts)
    p = (1 + hits) / (b + 1)
    if return_draws:
        draws = np.array([v for part in parts for v in part[1]], dtype=float) * scale
        return p, draws
    return p


# --------------------------------------------------------------- test runner

@dataclass
class TestResult:
    functional: str
    n1: int
    n2: int
    t: float
    null_mean: float
    r_centered: float
    sigma11_sq: float
    sigma1_sq: float
    z: Optional[float]
    p_asymptotic: Optional[float]
    p_permutation: Optional[float]
    permutations: int
    direction: str
    seed: int
    degenerate: bool = False
    tie_pairs: Optional[int] = None
    warnings: list = field(default_factory=list)
    permutation_variance: Optional[float] = None

    __test__ = False  # keep pytest from collecting this class

    def to_dict(self) -> dict:
        keys = ["functional", "n1", "n2", "t", "null_mean", "r_centered", "sigma11_sq", "sigma1_sq",
                "z", "p_asymptotic", "p_permutation", "permutations", "direction", "seed",
                "permutation_variance", "degenerate", "tie_pairs", "warnings"]
        out = {}
        warn = list(self.warnings)
        for k in keys:
            v = getattr(self, k)
            if isinstance(v, float) and not math.isfinite(v):
                warn.append(f"{k} is not finite and was written as null")
                v = None
            out[k] = v
        out["warnings"] = warn
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def default_direction(functional: str) -> str:
    return "two-sided" if functional.lower().startswith("depth") else "lower"


def _depth_setup(functional: str):
    name = functional.lower()
    if not name.startswith("depth"):
        return None
    return _depth.depth_kind(name)


def depth_statistic(points, labels, kind: str, **model_kw):
    """(cross count, edge count, graph stats) of the depth graph built from these labels."""
    vals = _depth.pooled_depths(points, labels, kind, **model_kw)
    stats = _depth.depth_graph_stats(vals)
    cross = _depth.depth_cross_count(vals, labels)
    return cross, stats, vals


@dataclass(frozen=True)
class DepthStatistic:
    """Picklable label -> statistic map that rebuilds depths for each labelling."""

    points: np.ndarray
    kind: str
    model_kw: dict = field(default_factory=dict)

    def __call__(self, labels) -> float:
        cross, stats, _ = depth_statistic(self.points, labels, self.kind, **self.model_kw)
        return cross / stats.e_n


def run_test(x, y, functional: str = "mst", direction: Optional[str] = None, permutations: int = 0,
             seed: int = 0, k: int = 3, workers: int = 1, n_projections: int = 500) -> TestResult:
    """Build the graph on the pooled sample and calibrate the cross-edge statistic.

    ``functional`` is one of mst, knn (with ``k``), nbm, path1d, or
    depth-cdf / depth-hd / depth-md.  Geometric graphs reject for small
    values by default, depth graphs on both sides.
    """
    pooled = LabeledSample.pool(x, y)
    n1, n2, n = pooled.n1, pooled.n2, pooled.n
    if n < 3:
        raise ValueError("need at least three pooled points")
    direction = direction or default_direction(functional)
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    warnings = []
    kind = _depth_setup(functional)
    tie_pairs = None
    perm_var = None
    if kind is not None:
        model_kw = {"n_projections": n_projections, "seed": seed} if kind == "halfspace" else {}
        cross, stats, vals = depth_statistic(pooled.points, pooled.labels, kind, **model_kw)
        t = cross / stats.e_n
        mu = float(null_mean(True, n1, n2))
        tie_pairs = _depth._cross_ties(vals, pooled.labels)
        if tie_pairs:
            warnings.append(f"{tie_pairs} cross-sample pairs have equal depth")
        name = f"depth-{kind}"
        target = DepthStatistic(pooled.points, kind, model_kw)
    else:
        g = build_graph(pooled.points, functional, k=k, seed=seed)
        stats = graph_stats(g)
        t = cross_statistic(g, pooled.labels)
        mu = float(null_mean(g, n1, n2))
        name = g.info.get("functional", functional)
        if "dropped" in g.info:
            warnings.append(f"odd sample size: point {g.info['dropped']} left out of the matching")
        if g.info.get("ties"):
            warnings.append("tied pairwise distances; ties broken by index")
        target = g
        if n >= 4:
            perm_var = float(permutation_variance(stats, n1, n2))
    s11 = bootstrap_variance(stats, n1, n2)
    s1 = null_variance(stats, n1, n2, s11)
    r_c = math.sqrt(n) * (t - mu)
    degenerate = is_degenerate(s1, perm_var)
    if degenerate:
        z = p_asym = None
        warnings.append("null variance is degenerate at the root-N scale; "
                        "use permutation calibration instead of the normal approximation")
    else:
        z = r_c / math.sqrt(s1)
        p_asym = tail_pvalue(z, direction)
    p_perm = None
    if permutations:
        p_perm = permutation_pvalue(target, pooled.labels, permutations, seed=seed,
                                    direction=direction, workers=workers)
    return TestResult(name, n1, n2, float(t), mu, float(r_c), float(s11), float(s1), z, p_asym,
                      p_perm, int(permutations), direction, int(seed), degenerate, tie_pairs, warnings,
                      perm_var)
