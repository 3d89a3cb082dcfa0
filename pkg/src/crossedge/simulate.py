"""Local-alternative power experiments, parametric baselines and the Le Cam check."""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import stats as _st

from .efficiency import ParametricFamily, depth_ae, log_likelihood_ratio, make_family
from .geomgraph import as_points
from .numerics import NotPositiveDefiniteError, RandomSource, cholesky, parallel_map
from .twosample import default_direction, run_test

_POWER_STREAM = 0x504F5752


def _delta_key(delta: float) -> int:
    # streams follow the delta value, not its grid position, so any subgrid
    # reproduces the matching rows of a full sweep
    return struct.unpack("<Q", struct.pack("<d", float(delta) + 0.0))[0]
_LECAM_STREAM = 0x4C45434D
PARAMETRIC = ("hotelling", "glr-scale", "cov-lr")


class SingularEstimateError(ValueError):
    pass


# ------------------------------------------------------------ baseline tests

def _logdet(m: np.ndarray, what: str) -> float:
    try:
        L = cholesky(m)
    except NotPositiveDefiniteError as exc:
        raise SingularEstimateError(f"{what} is singular ({exc}); a larger sample is needed") from None
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def hotelling_t2(x, y):
    """Two-sample Hotelling T^2 with its exact F calibration."""
    x, y = as_points(x), as_points(y)
    n1, n2 = len(x), len(y)
    d = x.shape[1]
    n = n1 + n2
    if n <= d + 1:
        raise ValueError("need n1 + n2 > d + 1")
    diff = x.mean(axis=0) - y.mean(axis=0)
    s = ((n1 - 1) * np.atleast_2d(np.cov(x, rowvar=False)) + (n2 - 1) * np.atleast_2d(np.cov(y, rowvar=False))) / (n - 2)
    try:
        L = cholesky(s)
    except NotPositiveDefiniteError as exc:
        raise SingularEstimateError(f"pooled covariance is singular ({exc})") from None
    w = diff.copy()
    for i in range(d):
        w[i] = (w[i] - L[i, :i] @ w[:i]) / L[i, i]
    t2 = n1 * n2 / n * float(w @ w)
    f = (n - d - 1) / ((n - 2) * d) * t2
    return t2, float(_st.f.sf(f, d, n - d - 1))


def glr_scale_test(x, y):
    """Likelihood ratio for a common scalar scale N(0, s^2 I).

    The statistic is N log(mean z'z) - N1 log(mean x'x) - N2 log(mean y'y);
    d times it is the usual -2 log LR, which is referred to chi-square(1).
    """
    x, y = as_points(x), as_points(y)
    n1, n2 = len(x), len(y)
    d = x.shape[1]
    sx = float(np.mean(np.sum(x * x, axis=1)))
    sy = float(np.mean(np.sum(y * y, axis=1)))
    if sx <= 0 or sy <= 0:
        raise ValueError("mean squared norms must be positive")
    s0 = (n1 * sx + n2 * sy) / (n1 + n2)
    stat = (n1 + n2) * math.log(s0) - n1 * math.log(sx) - n2 * math.log(sy)
    stat = max(stat, 0.0)
    return stat, float(_st.chi2.sf(d * stat, 1))


def cov_lr_test(x, y):
    """Likelihood ratio for equal covariance matrices (means unrestricted).

    N log|S0| - N1 log|S1| - N2 log|S2| with maximum-likelihood S1, S2 and
    the pooled within-sample S0, referred to chi-square(d(d+1)/2).
    """
    x, y = as_points(x), as_points(y)
    n1, n2 = len(x), len(y)
    d = x.shape[1]
    s1 = np.atleast_2d(np.cov(x, rowvar=False, bias=True))
    s2 = np.atleast_2d(np.cov(y, rowvar=False, bias=True))
    s0 = (n1 * s1 + n2 * s2) / (n1 + n2)
    stat = ((n1 + n2) * _logdet(s0, "pooled covariance") - n1 * _logdet(s1, "first-sample covariance")
            - n2 * _logdet(s2, "second-sample covariance"))
    stat = max(stat, 0.0)
    return stat, float(_st.chi2.sf(stat, d * (d + 1) // 2))


# --------------------------------------------------------- power experiment

@dataclass
class PowerExperimentConfig:
    family: str = "normal-location"
    dim: int = 4
    theta1: Optional[list] = None
    h: Optional[list] = None
    deltas: list = field(default_factory=lambda: np.linspace(0.0, 3.0, 20).tolist())
    n1: int = 1125
    n2: int = 375
    reps: int = 1000
    alpha: float = 0.05
    tests: list = field(default_factory=lambda: ["mst"])
    seed: int = 0
    directions: dict = field(default_factory=dict)
    permutations: int = 0
    k: int = 3
    n_projections: int = 500

    def __post_init__(self):
        if not self.deltas:
            raise ValueError("the delta grid must be nonempty")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.n1 < 2 or self.n2 < 2:
            raise ValueError("both samples need at least two points")
        fam = make_family(self.family, self.dim)
        if self.theta1 is None:
            self.theta1 = [1.0] if self.family == "normal-scale" else [0.0] * fam.theta_dim
        if self.h is None:
            self.h = [1.0] * fam.theta_dim
        self.deltas = [float(d) for d in self.deltas]
        self.theta1 = [float(t) for t in self.theta1]
        self.h = [float(t) for t in self.h]

    def build_family(self) -> ParametricFamily:
        return make_family(self.family, self.dim)


def _run_one_test(name: str, x, y, cfg: PowerExperimentConfig, seed: int):
    """(statistic, p-value) of one configured test."""
    if name == "hotelling":
        return hotelling_t2(x, y)
    if name == "glr-scale":
        return glr_scale_test(x, y)
    if name == "cov-lr":
        return cov_lr_test(x, y)
    direction = cfg.directions.get(name) or default_direction(name)
    res = run_test(x, y, name, direction=direction, permutations=cfg.permutations, seed=seed,
                   k=cfg.k, n_projections=cfg.n_projections)
    p = res.p_permutation if cfg.permutations else res.p_asymptotic
    stat = res.z if res.z is not None else float("nan")
    return stat, (float("nan") if p is None else p)


def _power_chunk(args):
    cfg, di, reps = args
    fam = cfg.build_family()
    t1 = np.asarray(cfg.theta1)
    big_n = cfg.n1 + cfg.n2
    t2 = t1 + cfg.deltas[di] * np.asarray(cfg.h) / math.sqrt(big_n)
    out = []
    for rep in reps:
        rng = RandomSource(cfg.seed, (_POWER_STREAM, _delta_key(cfg.deltas[di]), rep)).generator()
        x = fam.sample(rng, cfg.n1, t1)
        y = fam.sample(rng, cfg.n2, t2)
        # per-replicate seed for permutations, matchings and projections
        sub = int(rng.integers(2 ** 31))
        row = []
        for name in cfg.tests:
            try:
                s, p = _run_one_test(name, x, y, cfg, sub)
            except (ValueError, ArithmeticError, np.linalg.LinAlgError):
                s, p = float("nan"), float("nan")
            row.append((s, p))
        out.append(row)
    return di, out


@dataclass
class PowerCurve:
    config: dict
    rows: list  # dicts with test, delta, power, se, mean_stat, mean_p, failures

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["test", "delta", "power", "se", "mean_stat", "mean_p"])
        for r in self.rows:
            w.writerow([r["test"], _fmt(r["delta"]), _fmt(r["power"]), _fmt(r["se"]),
                        _fmt(r["mean_stat"]), _fmt(r["mean_p"])])
        return buf.getvalue()

    def sidecar(self) -> str:
        failures = {f"{r['test']}@{_fmt(r['delta'])}": r["failures"] for r in self.rows if r["failures"]}
        return json.dumps({"config": self.config, "failures": failures}, indent=2, sort_keys=True)

    def power(self, test: str) -> np.ndarray:
        return np.array([r["power"] for r in self.rows if r["test"] == test])

    def column(self, test: str, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows if r["test"] == test])


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    return format(float(v), ".17g")


def run_power_experiment(cfg: PowerExperimentConfig, workers: int = 1, chunk: int = 25) -> PowerCurve:
    """Rejection rates of every configured test along the delta grid.

    Replicate k at grid value delta draws from stream (seed, delta, k), so the
    curve is the same for any number of workers and each row is unchanged
    when the rest of the grid changes.
    """
    jobs = [(cfg, di, range(s, min(cfg.reps, s + chunk)))
            for di in range(len(cfg.deltas)) for s in range(0, cfg.reps, chunk)]
    parts = parallel_map(_power_chunk, jobs, workers)
    per_delta = {di: [] for di in range(len(cfg.deltas))}
    for di, rows in parts:
        per_delta[di].extend(rows)
    out = []
    for ti, name in enumerate(cfg.tests):
        for di, delta in enumerate(cfg.deltas):
            cells = [row[ti] for row in per_delta[di]]
            ok = [(s, p) for s, p in cells if not math.isnan(p)]
            fails = len(cells) - len(ok)
            if ok:
                rej = sum(1 for _, p in ok if p <= cfg.alpha)
                m = len(ok)
                pw = rej / m
                se = math.sqrt(pw * (1 - pw) / m)
                stats_ok = [s for s, _ in ok if not math.isnan(s)]
                mean_stat = math.fsum(stats_ok) / len(stats_ok) if stats_ok else float("nan")
                mean_p = math.fsum(p for _, p in ok) / m
            else:
                pw = se = mean_stat = mean_p = float("nan")
            out.append({"test": name, "delta": delta, "power": pw, "se": se, "mean_stat": mean_stat,
                        "mean_p": mean_p, "failures": fails})
    return PowerCurve(asdict(cfg), out)


# ----------------------------------------------------------- Le Cam check

def _lecam_chunk(args):
    functional, fam_kind, dim, t1, h, n1, n2, seed, reps, direction = args
    fam = make_family(fam_kind, dim)
    big_n = n1 + n2
    t2 = t1 + h / math.sqrt(big_n)
    out = []
    for rep in reps:
        rng = RandomSource(seed, (_LECAM_STREAM, 0, rep)).generator()
        x = fam.sample(rng, n1, t1)
        y = fam.sample(rng, n2, t1)
        r0 = run_test(x, y, functional, direction=direction, seed=seed)
        ll = log_likelihood_ratio(y, fam, t1, h, big_n)
        rng = RandomSource(seed, (_LECAM_STREAM, 1, rep)).generator()
        x = fam.sample(rng, n1, t1)
        y = fam.sample(rng, n2, t2)
        r1 = run_test(x, y, functional, direction=direction, seed=seed)
        out.append((r0.r_centered, ll, r1.r_centered, r0.sigma1_sq, r1.z if r1.z is not None else float("nan")))
    return out


def closed_form_sigma12(functional: str, family: ParametricFamily, theta1, h, p: float) -> float:
    """Signed limiting covariance of the centred statistic with the log-likelihood ratio."""
    if functional.lower().startswith("depth"):
        rep = depth_ae(family, theta1, h, p, functional)
        q, r = 1.0 - p, 2.0 * p * (1.0 - p)
        return 0.5 * r * (p * rep.integrals["i_down"] - q * rep.integrals["i_up"])
    # geometric graphs: constant scaled degree and the gradient integrates to zero
    return 0.0


def lecam_joint_check(functional: str, family: ParametricFamily, theta1, h, p: float, n: int, reps: int,
                      seed: int = 0, workers: int = 1, chunk: int = 100) -> dict:
    """Simulated covariance of (R, L_N) under the null and the mean of R under the local alternative."""
    t1 = family.check_theta(theta1)
    hv = np.broadcast_to(np.asarray(h, dtype=float), t1.shape).copy()
    n1 = int(round(p * n))
    n2 = n - n1
    direction = "upper" if functional.lower().startswith("depth") else "lower"
    jobs = [(functional, family.kind, family.dim, t1, hv, n1, n2, seed, range(s, min(reps, s + chunk)), direction)
            for s in range(0, reps, chunk)]
    rows = np.array([r for part in parallel_map(_lecam_chunk, jobs, workers) for r in part], dtype=float)
    r0, ll, r1, s1, _ = rows.T
    prod = (r0 - r0.mean()) * (ll - ll.mean())
    cov = float(prod.sum() / (reps - 1))
    return {
        "functional": functional,
        "n1": n1, "n2": n2, "reps": reps, "seed": seed,
        "h": hv.tolist(),
        "cov_R_L": cov,
        "se_cov": float(prod.std(ddof=1) / math.sqrt(reps)),
        "mean_R_alt": float(r1.mean()),
        "se_mean_R_alt": float(r1.std(ddof=1) / math.sqrt(reps)),
        "mean_R_null": float(r0.mean()),
        "var_R_null": float(r0.var(ddof=1)),
        "mean_L_null": float(ll.mean()),
        "var_L_null": float(ll.var(ddof=1)),
        "sigma1_sq": float(s1.mean()),
        "sigma12": closed_form_sigma12(functional, family, t1, hv, n1 / n),
    }
