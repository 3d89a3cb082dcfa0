import math

import numpy as np
import pytest

from crossedge.numerics import (ConvergenceError, NotPositiveDefiniteError, QuadratureSpec, RandomSource,
                                cholesky, cholesky_solve, integrate, integrate_with_error, parallel_map,
                                symmetric_eigen)


def test_cholesky_identity():
    assert np.array_equal(cholesky(np.eye(3)), np.eye(3))


def test_cholesky_2x2():
    L = cholesky([[4, 2], [2, 3]])
    assert np.allclose(L, [[2, 0], [1, math.sqrt(2)]], atol=1e-14)
    assert np.allclose(L @ L.T, [[4, 2], [2, 3]], atol=1e-14)


def test_cholesky_indefinite_names_pivot():
    with pytest.raises(NotPositiveDefiniteError) as err:
        cholesky([[1, 2], [2, 1]])
    assert err.value.pivot == 2
    assert "not positive definite" in str(err.value)


def test_cholesky_solve():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(5, 5))
    m = a @ a.T + 5 * np.eye(5)
    b = rng.normal(size=5)
    assert np.allclose(cholesky_solve(cholesky(m), b), np.linalg.solve(m, b), atol=1e-12)


def test_eigen_diagonal():
    vals, vecs = symmetric_eigen(np.diag([1.0, 3.0]))
    assert np.allclose(vals, [3, 1])
    assert np.allclose(np.abs(vecs), [[0, 1], [1, 0]])


def test_eigen_2x2_symmetric():
    vals, vecs = symmetric_eigen([[2, 1], [1, 2]])
    assert np.allclose(vals, [3, 1], atol=1e-14)
    s = 1 / math.sqrt(2)
    assert np.allclose(np.abs(vecs[:, 0]), [s, s])
    assert abs(vecs[0, 1] + vecs[1, 1]) < 1e-14


def test_eigen_reconstruction():
    rng = np.random.default_rng(11)
    a = rng.normal(size=(6, 6))
    m = a + a.T
    vals, vecs = symmetric_eigen(m)
    assert np.all(np.diff(vals) <= 0)
    assert np.max(np.abs(vecs @ np.diag(vals) @ vecs.T - m)) < 1e-8
    assert np.allclose(vals, np.sort(np.linalg.eigvalsh(m))[::-1], atol=1e-10)


def test_eigen_iteration_cap():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(8, 8))
    with pytest.raises(ConvergenceError) as err:
        symmetric_eigen(a + a.T, max_sweeps=1)
    assert err.value.residual > 0


def phi(x):
    return np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)


@pytest.mark.parametrize("kind,order", [("adaptive", 20), ("gauss-legendre", 64)])
def test_normal_density_integrals(kind, order):
    spec = QuadratureSpec(kind=kind, dim=1, lower=-math.inf, upper=math.inf, order=order)
    assert abs(integrate(phi, spec) - 1.0) < 1e-9
    assert abs(integrate(lambda x: phi(x) ** 2, spec) - 1 / (2 * math.sqrt(math.pi))) < 1e-9
    assert abs(integrate(lambda x: x * phi(x), spec)) < 1e-9


def test_bounded_polynomial():
    res = integrate_with_error(lambda x: x ** 3, QuadratureSpec(dim=1, lower=0.0, upper=2.0))
    assert abs(res.value - 4.0) < 1e-12
    assert res.evaluations > 0


def test_half_line():
    assert abs(integrate(phi, QuadratureSpec(lower=0.0, upper=math.inf)) - 0.5) < 1e-12


def test_two_dimensional_gaussian():
    spec = QuadratureSpec(kind="adaptive", dim=2, tolerance=1e-9)
    val = integrate(lambda z: np.exp(-0.5 * np.sum(z * z, axis=1)) / (2 * math.pi), spec)
    assert abs(val - 1.0) < 1e-8


def test_monte_carlo_is_seeded():
    spec = QuadratureSpec(kind="monte-carlo", dim=3, lower=-math.inf, upper=math.inf, samples=20000, seed=5)
    f = lambda z: np.exp(-0.5 * np.sum(z * z, axis=1)) / (2 * math.pi) ** 1.5
    a, b = integrate_with_error(f, spec), integrate_with_error(f, spec)
    assert a.value == b.value
    assert abs(a.value - 1.0) < 5 * a.error + 1e-3


def test_random_source_streams():
    a = RandomSource(7, (1, 2)).generator().random(3)
    b = RandomSource(7, (1, 2)).generator().random(3)
    c = RandomSource(7, (1, 3)).generator().random(3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.array_equal(RandomSource(7, (1,)).child(2).generator().random(3), a)


def _square(x):
    return x * x


def test_parallel_map_order():
    assert parallel_map(_square, range(6), workers=1) == parallel_map(_square, range(6), workers=2) == [0, 1, 4, 9, 16, 25]
