import numpy as np
import pytest
import sympy as sp
from numpy.polynomial import chebyshev as C

from irgnm4pi import chebyshev
from irgnm4pi.chebyshev import GramError, axis_integrals, build_phase_basis


def _sym_basis_1d(degree, H, x):
    return [sp.chebyshevt(i, x / H) for i in range(degree + 1)]


@pytest.mark.parametrize("degree,H", [(1, 2), (2, 3), (3, sp.Rational(1, 2))])
def test_axis_integrals_match_symbolic(degree, H):
    x = sp.symbols("x")
    T = _sym_basis_1d(degree, H, x)
    got = axis_integrals(degree, float(H))
    forms = {
        "mass": lambda a, b: a * b,
        "stiff": lambda a, b: sp.diff(a, x) * sp.diff(b, x),
        "bending": lambda a, b: sp.diff(a, x, 2) * sp.diff(b, x, 2),
        "mixed": lambda a, b: sp.diff(a, x, 2) * b,
    }
    for key, form in forms.items():
        want = np.array([[float(sp.integrate(form(a, b), (x, -H, H))) for b in T] for a in T])
        assert np.allclose(got[key], want, rtol=1e-12, atol=1e-12), key


def test_degree_one_gram_in_one_dimension():
    # int T0^2 = 2H, int T1^2 + T1'^2 = 2H/3 + 2/H at H = 2
    basis = build_phase_basis([1], [2.0])
    assert np.allclose(basis.gram, np.diag([4.0, 4.0 / 3.0 + 1.0]))


def test_two_dimensional_gram_matches_symbolic_h2_form():
    x, y = sp.symbols("x y")
    H1, H2 = 2, 3
    deg = (2, 1)
    funcs = [sp.chebyshevt(i, x / H1) * sp.chebyshevt(j, y / H2)
             for i in range(deg[0] + 1) for j in range(deg[1] + 1)]

    def lap(f):
        return sp.diff(f, x, 2) + sp.diff(f, y, 2)

    def form(f, g):
        return f * g + sp.diff(f, x) * sp.diff(g, x) + sp.diff(f, y) * sp.diff(g, y) + lap(f) * lap(g)

    want = np.array([[float(sp.integrate(sp.expand(form(f, g)), (x, -H1, H1), (y, -H2, H2)))
                      for g in funcs] for f in funcs])
    got = build_phase_basis(deg, [H1, H2]).gram
    assert np.allclose(got, want, rtol=1e-12, atol=1e-10)


def test_degree_zero_gram_is_volume():
    basis = build_phase_basis([0, 0, 0], [1.0, 2.0, 0.5])
    assert basis.gram.shape == (1, 1)
    assert np.isclose(basis.gram[0, 0], 8 * 1.0 * 2.0 * 0.5)


@pytest.mark.parametrize("degrees,halfwidths", [([3], [5.0]), ([4, 3], [900.0, 1500.0]),
                                                ([3, 3, 3], [600.0, 600.0, 1200.0])])
def test_gram_is_symmetric_positive_definite_and_factored(degrees, halfwidths, rng):
    b = build_phase_basis(degrees, halfwidths)
    assert np.array_equal(b.gram, b.gram.T)
    assert np.linalg.eigvalsh(b.gram).min() > 0
    assert np.allclose(b.factor.T @ b.factor, b.gram, rtol=1e-10, atol=1e-10 * np.abs(b.gram).max())
    c = rng.standard_normal(b.size)
    assert np.allclose(b.unwhiten(b.whiten(c)), c, rtol=1e-8, atol=1e-10)
    assert np.isclose(b.norm(c), np.linalg.norm(b.whiten(c)), rtol=1e-10)
    v = rng.standard_normal(b.size)
    assert np.allclose(b.gram @ b.riesz(v), v, rtol=1e-8, atol=1e-8 * np.abs(v).max())
    assert np.allclose(b.factor.T @ b.unwhiten_adjoint(v), v, rtol=1e-8, atol=1e-8)


def test_evaluate_matches_numpy_chebval(rng):
    b = build_phase_basis([3, 2], [2.0, 4.0])
    c = rng.standard_normal(b.shape)
    xs, ys = np.linspace(-2, 2, 7), np.linspace(-4, 4, 5)
    want = C.chebgrid2d(xs / 2.0, ys / 4.0, c)
    assert np.allclose(b.evaluate(c, [xs, ys]), want)


def test_moments_is_transpose_of_evaluate(rng):
    b = build_phase_basis([2, 3, 1], [1.0, 2.0, 3.0])
    coords = [np.linspace(-1, 1, 4), np.linspace(-2, 2, 6), np.linspace(-3, 3, 5)]
    c = rng.standard_normal(b.size)
    v = rng.standard_normal((4, 6, 5))
    lhs = np.sum(b.evaluate(c, coords) * v) * 0.7
    rhs = c @ b.moments(v, coords, 0.7)
    assert np.isclose(lhs, rhs)


def test_constant_function_norm():
    # the constant 1 has zero derivatives, so its squared norm is the volume
    b = build_phase_basis([2, 2], [1.5, 2.5])
    c = np.zeros(b.shape)
    c[0, 0] = 1.0
    assert np.isclose(b.norm(c) ** 2, 4 * 1.5 * 2.5)


@pytest.mark.parametrize("degrees,halfwidths", [([], []), ([1, 2], [1.0]), ([-1], [1.0]), ([2], [0.0])])
def test_invalid_arguments(degrees, halfwidths):
    with pytest.raises(ValueError):
        build_phase_basis(degrees, halfwidths)


def test_evaluate_rejects_wrong_axis_count():
    with pytest.raises(ValueError):
        build_phase_basis([1, 1], [1.0, 1.0]).evaluate(np.zeros(4), [np.zeros(3)])


def test_gram_error_is_a_linalg_error():
    assert issubclass(GramError, np.linalg.LinAlgError)
    assert chebyshev.__all__.count("GramError") == 1
