"""Dense linear algebra, quadrature and reproducible random streams."""

from __future__ import annotations

import heapq
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class NotPositiveDefiniteError(ValueError):
    def __init__(self, pivot: int, value: float):
        self.pivot = pivot
        self.value = value
        super().__init__(f"matrix is not positive definite (pivot {pivot}, value {value:.3g})")


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (off-diagonal residual {residual:.3g})")


class QuadratureError(RuntimeError):
    def __init__(self, message: str, worst_cell=None, worst_error: float = float("nan")):
        self.worst_cell = worst_cell
        self.worst_error = worst_error
        super().__init__(f"{message}; worst cell {worst_cell} with error estimate {worst_error:.3g}")


def _check_symmetric(m: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    scale = max(np.abs(m).max(initial=0.0), 1.0)
    asym = np.abs(m - m.T).max(initial=0.0)
    if asym > tol * scale:
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3g})")
    return m


def cholesky(m) -> np.ndarray:
    """Lower-triangular L with L @ L.T == m.

    Pivots are numbered from 1, so the error for [[1,2],[2,1]] names pivot 2.
    """
    a = _check_symmetric(m)
    n = a.shape[0]
    L = np.zeros_like(a)
    for j in range(n):
        s = a[j, j] - L[j, :j] @ L[j, :j]
        if not s > 0.0:
            raise NotPositiveDefiniteError(j + 1, float(s))
        L[j, j] = math.sqrt(s)
        if j + 1 < n:
            L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def cholesky_solve(L: np.ndarray, b) -> np.ndarray:
    """Solve (L L^T) x = b by forward then back substitution."""
    b = np.asarray(b, dtype=float)
    n = L.shape[0]
    y = np.array(b, dtype=float, copy=True)
    for i in range(n):
        y[i] = (y[i] - L[i, :i] @ y[:i]) / L[i, i]
    x = y
    for i in range(n - 1, -1, -1):
        x[i] = (x[i] - L[i + 1:, i] @ x[i + 1:]) / L[i, i]
    return x


def symmetric_eigen(m, tol: float = 1e-12, max_sweeps: int = 100):
    """Cyclic Jacobi eigen-decomposition.

    Returns eigenvalues in descending order and the matching orthonormal
    eigenvectors as columns.  Iterates until the off-diagonal Frobenius norm
    drops below ``tol`` times the matrix norm.
    """
    a = _check_symmetric(m).copy()
    n = a.shape[0]
    v = np.eye(n)
    norm = max(np.linalg.norm(a), np.finfo(float).tiny)

    mask = ~np.eye(n, dtype=bool)

    def off(x):
        return math.sqrt(float(np.sum(x[mask] ** 2)))

    for _ in range(max_sweeps):
        if off(a) <= tol * norm:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                # negligible next to both diagonal entries: drop it
                g = 100.0 * abs(apq)
                if abs(a[p, p]) + g == abs(a[p, p]) and abs(a[q, q]) + g == abs(a[q, q]):
                    a[p, q] = a[q, p] = 0.0
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        res = off(a)
        if res > tol * norm:
            raise ConvergenceError(f"Jacobi iteration did not converge in {max_sweeps} sweeps", res)

    vals = np.diag(a).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], v[:, order]


# ---------------------------------------------------------------- quadrature

@dataclass(frozen=True)
class QuadratureSpec:
    """How to evaluate an integral.

    ``lower``/``upper`` give an axis-aligned box; leave both as None for the
    whole of R^d, which is mapped through x = loc + scale * tan(pi u / 2).
    """

    kind: str = "adaptive"  # "gauss-legendre" | "adaptive" | "monte-carlo"
    dim: int = 1
    lower: Optional[Sequence[float]] = None
    upper: Optional[Sequence[float]] = None
    tolerance: float = 1e-10
    order: int = 20
    loc: float | Sequence[float] = 0.0
    scale: float | Sequence[float] = 1.0
    max_cells: int = 4000
    samples: int = 200_000
    seed: int = 0

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.kind not in ("gauss-legendre", "adaptive", "monte-carlo"):
            raise ValueError(f"unknown quadrature kind {self.kind!r}")
        if (self.lower is None) != (self.upper is None):
            raise ValueError("give both lower and upper, or neither for an unbounded domain")

    @property
    def unbounded(self) -> bool:
        """True when the domain is all of R^d."""
        if self.lower is None:
            return True
        lo = np.broadcast_to(np.asarray(self.lower, dtype=float), (self.dim,))
        hi = np.broadcast_to(np.asarray(self.upper, dtype=float), (self.dim,))
        return bool(np.all(np.isneginf(lo)) and np.all(np.isposinf(hi)))


@dataclass
class QuadratureResult:
    value: float
    error: float
    evaluations: int
    method: str


def _axis_maps(spec: QuadratureSpec):
    """Per-axis substitution onto a finite working interval.

    Doubly infinite axes use x = loc + scale * tan(pi u / 2) on (-1, 1); half-lines
    use x = a +/- scale * u / (1 - u) on [0, 1).
    """
    d = spec.dim
    loc = np.broadcast_to(np.asarray(spec.loc, dtype=float), (d,))
    scale = np.broadcast_to(np.asarray(spec.scale, dtype=float), (d,))
    if spec.unbounded:
        lo_in, hi_in = np.full(d, -np.inf), np.full(d, np.inf)
    else:
        lo_in = np.broadcast_to(np.asarray(spec.lower, dtype=float), (d,))
        hi_in = np.broadcast_to(np.asarray(spec.upper, dtype=float), (d,))
    kinds, lo, hi = [], np.empty(d), np.empty(d)
    for k in range(d):
        a, b = lo_in[k], hi_in[k]
        if np.isfinite(a) and np.isfinite(b):
            kinds.append("finite")
            lo[k], hi[k] = a, b
        elif np.isfinite(a) or np.isfinite(b):
            kinds.append("upper" if np.isfinite(a) else "lower")
            lo[k], hi[k] = 0.0, 1.0
        else:
            kinds.append("both")
            lo[k], hi[k] = -1.0, 1.0
    return kinds, lo_in, hi_in, loc, scale, lo, hi


def _mapped(f: Callable, spec: QuadratureSpec):
    """Integrand on the working box together with that box."""
    d = spec.dim
    kinds, a, b, loc, scale, lo, hi = _axis_maps(spec)
    if all(k == "finite" for k in kinds):
        return (lambda x: _call(f, x, d)), lo, hi

    def g(u):
        x = np.empty_like(u)
        jac = np.ones(u.shape[0])
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            for k, kind in enumerate(kinds):
                uk = u[:, k]
                if kind == "finite":
                    x[:, k] = uk
                elif kind == "both":
                    t = np.tan(0.5 * np.pi * uk)
                    x[:, k] = loc[k] + scale[k] * t
                    jac *= scale[k] * 0.5 * np.pi * (1.0 + t * t)
                else:
                    t = uk / (1.0 - uk)
                    x[:, k] = a[k] + scale[k] * t if kind == "upper" else b[k] - scale[k] * t
                    jac *= scale[k] / (1.0 - uk) ** 2
            val = _call(f, x, d) * jac
        return np.where(np.isfinite(val), val, 0.0)

    return g, lo, hi


def _call(f, x: np.ndarray, d: int) -> np.ndarray:
    # 1-d integrands receive a flat vector, others an (m, d) array
    out = f(x[:, 0]) if d == 1 else f(x)
    return np.asarray(out, dtype=float).reshape(-1)


def _tensor_rule(lo, hi, order):
    t, w = np.polynomial.legendre.leggauss(order)
    d = len(lo)
    grids = [0.5 * (hi[k] - lo[k]) * t + 0.5 * (hi[k] + lo[k]) for k in range(d)]
    wts = [0.5 * (hi[k] - lo[k]) * w for k in range(d)]
    pts = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, d)
    ww = wts[0]
    for k in range(1, d):
        ww = np.multiply.outer(ww, wts[k])
    return pts, ww.reshape(-1)


def _gauss_fixed(g, lo, hi, order):
    pts, w = _tensor_rule(lo, hi, order)
    return float(w @ g(pts)), len(w)


def _adaptive_1d(g, lo, hi, spec: QuadratureSpec):
    t, w = np.polynomial.legendre.leggauss(spec.order)

    def rule(a, b):
        x = 0.5 * (b - a) * t + 0.5 * (a + b)
        return 0.5 * (b - a) * float(w @ g(x[:, None]))

    def cell(a, b):
        whole = rule(a, b)
        m = 0.5 * (a + b)
        left, right = rule(a, m), rule(m, b)
        return (left + right, abs(left + right - whole), a, b)

    a0, b0 = float(lo[0]), float(hi[0])
    evals = 0
    # start from a handful of cells so narrow peaks are not missed
    edges = np.linspace(a0, b0, 9)
    heap = []
    for a, b in zip(edges[:-1], edges[1:]):
        v, e, a_, b_ = cell(a, b)
        evals += 3 * spec.order
        heapq.heappush(heap, (-e, a_, b_, v))
    while True:
        total_err = sum(-h[0] for h in heap)
        if total_err <= 0.5 * spec.tolerance:
            break
        if len(heap) >= spec.max_cells:
            worst = heap[0]
            raise QuadratureError("adaptive subdivision cap reached", (worst[1], worst[2]), -worst[0])
        ne, a, b, _ = heapq.heappop(heap)
        m = 0.5 * (a + b)
        for aa, bb in ((a, m), (m, b)):
            v, e, a_, b_ = cell(aa, bb)
            evals += 3 * spec.order
            heapq.heappush(heap, (-e, a_, b_, v))
    value = math.fsum(h[3] for h in heap)
    return value, sum(-h[0] for h in heap), evals


def _adaptive_nd(g, lo, hi, spec: QuadratureSpec):
    # raise the tensor order until two successive estimates agree
    order = max(4, spec.order // 2)
    prev, evals = _gauss_fixed(g, lo, hi, order)
    err = float("inf")
    cap = max(8, int(round(2_000_000 ** (1.0 / len(lo)))))
    while True:
        order = int(order * 1.5) + 1
        if order > cap:
            raise QuadratureError("tensor order cap reached", (tuple(lo), tuple(hi)), err)
        cur, n = _gauss_fixed(g, lo, hi, order)
        evals += n
        err = abs(cur - prev)
        if err <= 0.5 * spec.tolerance:
            return cur, err, evals
        prev = cur


def _monte_carlo(f, spec: QuadratureSpec):
    rng = RandomSource(spec.seed, 0).generator()
    d = spec.dim
    n = spec.samples
    if spec.unbounded:
        loc = np.broadcast_to(np.asarray(spec.loc, dtype=float), (d,))
        scale = np.broadcast_to(np.asarray(spec.scale, dtype=float), (d,))
        # importance sampling from a widened normal
        s = 1.5 * scale
        z = rng.standard_normal((n, d))
        x = loc + s * z
        logq = -0.5 * np.sum(z * z, axis=1) - np.sum(np.log(s)) - 0.5 * d * math.log(2 * math.pi)
        vals = _call(f, x, d) / np.exp(logq)
    else:
        lo = np.broadcast_to(np.asarray(spec.lower, dtype=float), (d,))
        hi = np.broadcast_to(np.asarray(spec.upper, dtype=float), (d,))
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("monte-carlo quadrature needs a finite box or all of R^d")
        x = lo + (hi - lo) * rng.random((n, d))
        vals = _call(f, x, d) * float(np.prod(hi - lo))
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n)), n


def integrate_with_error(f: Callable, spec: QuadratureSpec) -> QuadratureResult:
    """Integral of ``f`` plus an error estimate.

    ``f`` must be vectorised: a flat vector of abscissae when dim == 1,
    otherwise an (m, dim) array.
    """
    if spec.kind == "monte-carlo":
        v, e, n = _monte_carlo(f, spec)
        return QuadratureResult(v, e, n, "monte-carlo")
    g, lo, hi = _mapped(f, spec)
    if spec.kind == "gauss-legendre":
        v, n = _gauss_fixed(g, lo, hi, spec.order)
        v2, _ = _gauss_fixed(g, lo, hi, spec.order + 1)
        return QuadratureResult(v, abs(v2 - v), n, f"gauss-legendre({spec.order})")
    if spec.dim == 1:
        v, e, n = _adaptive_1d(g, lo, hi, spec)
    else:
        v, e, n = _adaptive_nd(g, lo, hi, spec)
    method = "adaptive" + ("+tan-substitution" if spec.unbounded else "")
    return QuadratureResult(v, e, n, method)


def integrate(f: Callable, spec: QuadratureSpec) -> float:
    return integrate_with_error(f, spec).value


# ------------------------------------------------------------- random streams

def _as_key(stream) -> tuple:
    if isinstance(stream, (tuple, list)):
        return tuple(int(s) & 0xFFFFFFFFFFFFFFFF for s in stream)
    return (int(stream) & 0xFFFFFFFFFFFFFFFF,)


@dataclass(frozen=True)
class RandomSource:
    """A seed plus a stream path; equal pairs give equal sequences.

    Streams are derived with numpy's SeedSequence spawn keys, so the stream
    for replicate k of experiment e is a pure function of (seed, e, k).
    """

    seed: int
    stream: tuple = field(default=(0,))

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFFFFFFFFFFFFFF)
        object.__setattr__(self, "stream", _as_key(self.stream))

    def child(self, *keys: int) -> "RandomSource":
        return RandomSource(self.seed, self.stream + _as_key(keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        return np.random.Generator(np.random.PCG64(ss))


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Ordered map, optionally over worker processes; results never depend on ``workers``."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))
