"""Polynomial arithmetic, jacobians and the monomial basis."""

import math

import numpy as np
import pytest

from sosctl.errors import DimensionError, PolynomialParseError
from sosctl.poly import (
    MatrixPolynomial,
    Monomial,
    MonomialVector,
    Polynomial,
    PolyVectorField,
    VanishingConditionWarning,
    format_polynomial,
    monomial_basis,
    parse_polynomial,
)


def P(text, n=2):
    return parse_polynomial(text, n)


def test_eval_zero_constant_free_poly_at_origin():
    p = P("x1^2 + 2*x2")
    assert p.eval([0.0, 0.0]) == 0.0


def test_eval_first_reference_monomial():
    # First entry of the reference monomial vector, evaluated at the
    # experiment's initial state.
    p = P("x2")
    assert p.eval([-0.5, 0.5]) == pytest.approx(0.5, abs=1e-15)


def test_eval_pure_square_matches_direct_arithmetic():
    p = P("x1^2")
    x = (-0.3926, 0.5201)
    assert p.eval(x) == pytest.approx((-0.3926) ** 2, rel=1e-14)
    assert p.eval(x) == pytest.approx(0.15413, abs=5e-6)


def test_eval_dimension_mismatch_rejected():
    with pytest.raises(DimensionError):
        P("x1 + x2").eval([1.0])


def test_difference_of_squares():
    assert P("x1 + x2") * P("x1 - x2") == P("x1^2 - x2^2")


def test_additive_inverse_has_no_stored_terms():
    p = P("0.3*x1^2 - 7*x2 + 1.25")
    q = p + p.scale(-1.0)
    assert q.is_zero
    assert len(q) == 0


def test_square_expansion_and_eval_commute():
    p = P("x1 + 1", n=1)
    sq = p * p
    assert sq == P("x1^2 + 2*x1 + 1", n=1)
    assert sq.eval([2.0]) == 9.0


def test_eval_is_ring_homomorphism():
    rng = np.random.default_rng(7)
    basis = monomial_basis(3, 3)
    for _ in range(30):
        ca = rng.normal(size=len(basis))
        cb = rng.normal(size=len(basis))
        a = Polynomial(3, dict(zip(basis, ca)))
        b = Polynomial(3, dict(zip(basis, cb)))
        x = rng.uniform(-2, 2, size=3)
        scale = 1.0 + abs(a.eval(x)) + abs(b.eval(x)) + abs((a * b).eval(x))
        assert abs((a * b).eval(x) - a.eval(x) * b.eval(x)) <= 1e-12 * scale
        assert abs((a + b).eval(x) - (a.eval(x) + b.eval(x))) <= 1e-12 * scale


def test_mul_degree_adds():
    rng = np.random.default_rng(3)
    for _ in range(10):
        da, db = rng.integers(0, 4, size=2)
        a = Polynomial(2, {Monomial((int(da), 0)): 1.0, Monomial((0, 0)): 0.5})
        b = Polynomial(2, {Monomial((0, int(db))): -2.0})
        assert (a * b).degree == a.degree + b.degree


def test_eval_many_matches_scalar_eval():
    rng = np.random.default_rng(11)
    p = P("1.5*x1^3 - 2*x1*x2 + 0.25*x2^2 - 4")
    pts = rng.uniform(-3, 3, size=(40, 2))
    vals = p.eval_many(pts)
    for x, v in zip(pts, vals):
        assert v == pytest.approx(p.eval(x), rel=1e-13, abs=1e-13)


# -- jacobian ---------------------------------------------------------------


def test_jacobian_reference_vector():
    Z = MonomialVector(2, [Monomial((0, 1)), Monomial((2, 0))])
    J = Z.jacobian()
    assert J[0, 0].is_zero
    assert J[0, 1] == P("1")
    assert J[1, 0] == P("2*x1")
    assert J[1, 1].is_zero


def test_jacobian_single_variable_identity():
    Z = MonomialVector(1, [Monomial((1,))])
    J = Z.jacobian()
    assert J.shape == (1, 1)
    assert J[0, 0] == parse_polynomial("1", 1)


def test_jacobian_evaluates_correctly():
    Z = MonomialVector(2, [Monomial((1, 0)), Monomial((0, 1)), Monomial((1, 1))])
    J = Z.jacobian().eval([1.0, 2.0])
    assert np.allclose(J, [[1, 0], [0, 1], [2, 1]])


def _finite_difference_jacobian(Z, x, h=1e-6):
    out = np.zeros((Z.N, Z.n))
    for i in range(Z.n):
        xp = np.array(x, dtype=float)
        xm = np.array(x, dtype=float)
        xp[i] += h
        xm[i] -= h
        out[:, i] = (Z.eval(xp) - Z.eval(xm)) / (2 * h)
    return out


def test_jacobian_matches_central_differences():
    rng = np.random.default_rng(42)
    for _ in range(20):
        n = int(rng.integers(1, 5))
        pool = [m for m in monomial_basis(n, 4) if not m.is_constant]
        pures = [Monomial(tuple(int(rng.integers(1, 4)) if j == i else 0 for j in range(n)))
                 for i in range(n)]
        extra_count = int(rng.integers(0, min(3, len(pool)) + 1))
        extras = [pool[i] for i in rng.choice(len(pool), size=extra_count, replace=False)]
        monos = list(dict.fromkeys(pures + extras))
        Z = MonomialVector(n, monos)
        x = rng.uniform(-1, 1, size=n)
        sym = Z.jacobian().eval(x)
        num = _finite_difference_jacobian(Z, x)
        assert np.max(np.abs(sym - num)) <= 1e-6


# -- monomial basis ----------------------------------------------------------


def test_basis_order_two_vars_degree_one():
    basis = monomial_basis(2, 1)
    assert [str(m) for m in basis] == ["1", "x1", "x2"]


def test_basis_counts():
    assert len(monomial_basis(2, 2)) == 6
    assert len(monomial_basis(3, 3)) == 20
    for n in range(1, 6):
        for d in range(0, 6):
            assert len(monomial_basis(n, d)) == math.comb(n + d, d)


def test_basis_entries_unique_and_within_degree():
    basis = monomial_basis(3, 4)
    assert len(set(basis)) == len(basis)
    assert all(m.degree <= 4 for m in basis)


# -- monomial vector validation ----------------------------------------------


def test_monomial_vector_rejects_constant_entry():
    with pytest.raises(ValueError):
        MonomialVector(2, [Monomial((0, 0))])


def test_monomial_vector_rejects_duplicates():
    with pytest.raises(ValueError):
        MonomialVector(2, [Monomial((1, 0)), Monomial((1, 0))])


def test_monomial_vector_warns_without_pure_power():
    with pytest.warns(VanishingConditionWarning):
        MonomialVector(2, [Monomial((1, 1))])


def test_reference_vector_satisfies_pure_power_condition(recwarn):
    MonomialVector(2, [Monomial((0, 1)), Monomial((2, 0))])
    assert not [w for w in recwarn if issubclass(w.category, VanishingConditionWarning)]


# -- matrix polynomials --------------------------------------------------------


def test_matrix_polynomial_matmul_and_eval():
    A = np.array([[1.0, 0.0], [0.0, 1.0]])
    Z = MonomialVector(2, [Monomial((0, 1)), Monomial((2, 0))])
    col = Z.as_column()
    prod = A @ col
    assert prod.shape == (2, 1)
    x = [0.3, -0.7]
    assert np.allclose(prod.eval(x)[:, 0], Z.eval(x))


def test_matrix_polynomial_transpose_degree():
    entries = [[P("x1^2"), P("1")], [P("x2"), P("0")]]
    M = MatrixPolynomial(entries)
    assert M.degree == 2
    assert M.T[0, 1] == P("x2")


def test_matrix_polynomial_shape_mismatch():
    M = MatrixPolynomial([[P("x1")]])
    with pytest.raises(DimensionError):
        M @ MatrixPolynomial([[P("x1"), P("x2")], [P("1"), P("0")]])


# -- parsing / printing ----------------------------------------------------------


def test_parse_format_round_trip():
    cases = ["-4.2114*x1^3 + 2*x1*x2 - 1", "x2", "0", "1e-05*x1^2 + 1e-05*x2^2"]
    for text in cases:
        p = parse_polynomial(text, 2)
        assert parse_polynomial(format_polynomial(p), 2) == p


def test_parse_scientific_notation():
    p = parse_polynomial("1e-5*x1^2+1e-5*x2^2", 2)
    assert p.coefficient(Monomial((2, 0))) == pytest.approx(1e-5)


def test_parse_rejects_out_of_range_variable():
    with pytest.raises(PolynomialParseError):
        parse_polynomial("x3 + 1", 2)


def test_parse_rejects_garbage():
    with pytest.raises(PolynomialParseError):
        parse_polynomial("2**x1", 2)


# -- vector field evaluator -------------------------------------------------------


def test_poly_vector_field_batched_eval():
    rng = np.random.default_rng(5)
    polys = [P("x2"), P("x1^2 - 0.5*x2")]
    f = PolyVectorField(polys)
    pts = rng.uniform(-2, 2, size=(25, 2))
    vals = f(pts)
    for x, v in zip(pts, vals):
        assert np.allclose(v, [p.eval(x) for p in polys], rtol=1e-13, atol=1e-13)
    single = f(pts[0])
    assert single.shape == (2,)
