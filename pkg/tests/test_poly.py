from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from curvlab.poly import (
    DegreeOverflowError,
    MultiPoly,
    PolyMatrix,
    PolyParseError,
    degree_cap,
    det_fraction,
    parse_poly,
    polydet,
    truncation,
)


def polys(nvars, max_deg=2, max_terms=5):
    exps = st.lists(st.integers(0, max_deg), min_size=nvars, max_size=nvars).filter(lambda e: sum(e) <= max_deg)
    coefs = st.fractions(min_value=-5, max_value=5, max_denominator=6)
    return st.dictionaries(exps.map(tuple), coefs, max_size=max_terms).map(lambda t: MultiPoly(nvars, t))


def points(nvars):
    return st.lists(st.fractions(min_value=-3, max_value=3, max_denominator=7), min_size=nvars, max_size=nvars)


# evaluation

def test_eval_monomial():
    assert parse_poly("x1*x2").eval([2, 3]) == 6


def test_eval_zero_polynomial():
    assert MultiPoly(2).eval([F(7, 3), -1]) == 0
    assert MultiPoly.zero(3).is_zero()


def test_eval_pythagorean():
    assert parse_poly("x1^2 + x2^2 - 1").eval([F(3, 5), F(4, 5)]) == 0


def test_eval_dimension_mismatch():
    with pytest.raises(ValueError):
        parse_poly("x1*x2").eval([1, 2, 3])


def test_eval_many_matches_exact():
    p = parse_poly("3/2*x1^2*x2 - x2^3 + 1/7")
    pts = np.array([[0.5, -1.25], [2.0, 3.0]])
    vals = p.eval_many(pts)
    for pt, v in zip(pts, vals):
        assert v == pytest.approx(float(p.eval([F(x) for x in pt])), rel=1e-14)


# derivatives

def test_partial_power_rule():
    assert parse_poly("x1^2*x2").partial(0) == parse_poly("2*x1*x2")


def test_partial_of_constant():
    assert MultiPoly.constant(5, 3).partial(1).is_zero()


def test_partial_derived_example():
    # term-by-term oracle: d/dx2 (x1^3 - 3 x1 x2^2) = -6 x1 x2
    assert parse_poly("x1^3 - 3*x1*x2^2").partial(1) == parse_poly("-6*x1*x2")


@given(polys(3, 3), st.integers(0, 2), st.integers(0, 2))
def test_partials_commute(p, i, j):
    assert p.partial(i).partial(j) == p.partial(j).partial(i)


# affine substitution

def test_compose_affine_identity():
    p = parse_poly("x1", nvars=1)
    assert p.compose_affine([[1]]) == p


def test_compose_affine_scaling():
    assert parse_poly("x1*x2").compose_affine([[2, 0], [0, 3]]) == parse_poly("6*x1*x2")


def test_compose_affine_shear():
    # (x1 + x2)^2 expanded by hand
    got = parse_poly("x1^2", nvars=2).compose_affine([[1, 1], [0, 1]], [0, 1])
    assert got == parse_poly("x1^2 + 2*x1*x2 + x2^2")


@given(polys(2), polys(2), st.lists(st.integers(-3, 3), min_size=4, max_size=4), points(2))
def test_compose_affine_homomorphism(p, q, a, b):
    A = [a[:2], a[2:]]
    assert (p * q).compose_affine(A, b) == p.compose_affine(A, b) * q.compose_affine(A, b)


# ring laws and text form

@given(polys(3), polys(3), polys(3))
def test_ring_laws(p, q, r):
    assert p * (q + r) == p * q + p * r
    assert (p - p).is_zero()
    assert p * q == q * p


@given(polys(3, 3, 6))
def test_text_round_trip(p):
    assert parse_poly(p.to_string(), nvars=3) == p


def test_canonical_order_grlex():
    assert parse_poly("x2 + x1^2 + 1").to_string() == "1 * x1^2 + 1 * x2 + 1"


@pytest.mark.parametrize("text", ["x1 +", "x1 ** ", "(x1", "2 @ x1", ""])
def test_malformed_text(text):
    with pytest.raises(PolyParseError):
        parse_poly(text)


def test_degree_cap_overflow():
    p = parse_poly("x1^3")
    with degree_cap(5):
        with pytest.raises(DegreeOverflowError):
            p * p


def test_truncation_drops_high_terms():
    p = parse_poly("1 + x1 + x2")
    with truncation(1):
        sq = p * p
    assert sq == parse_poly("1 + 2*x1 + 2*x2")


# determinants

def test_det_1x1():
    x = MultiPoly.variable(0, 1)
    assert polydet([[x]]) == x


def test_det_rotcurv_xy():
    # [[0, y], [x, 1]] -> -x y (cofactor oracle)
    x, y = MultiPoly.variables(2)
    assert polydet([[0, y], [x, 1]], nvars=2) == -(x * y)


def test_det_repeated_row_vanishes():
    x, y, z = MultiPoly.variables(3)
    row = [x, y * y, z + 1]
    assert polydet([row, [z, 1, x], row]).is_zero()


def test_det_non_square():
    with pytest.raises(ValueError):
        polydet([[MultiPoly.variable(0, 1), 1]])


def test_polymatrix_ragged():
    with pytest.raises(ValueError):
        PolyMatrix([[1, 2], [3]], nvars=1)


@pytest.mark.parametrize("size", [1, 2, 3, 4, 5])
def test_polydet_matches_numeric(size, rng):
    nv = 3
    for _ in range(4):
        M = [[MultiPoly(nv, {tuple(rng.integers(0, 2, nv)): int(rng.integers(-3, 4)),
                             tuple(rng.integers(0, 2, nv)): int(rng.integers(-3, 4))})
              for _ in range(size)] for _ in range(size)]
        D = polydet(M, nvars=nv)
        for _ in range(25):
            pt = [F(int(rng.integers(-9, 10)), int(rng.integers(1, 6))) for _ in range(nv)]
            assert D.eval(pt) == det_fraction([[e.eval(pt) for e in r] for r in M])
            fp = np.array([[float(v) for v in pt]])
            num = np.linalg.det(PolyMatrix(M, nv).evaluate_many(fp)[0])
            assert float(D.eval(pt)) == pytest.approx(num, rel=1e-10, abs=1e-10)


def test_bareiss_and_subsets_agree(rng):
    nv = 2
    M = [[MultiPoly(nv, {tuple(rng.integers(0, 3, nv)): int(rng.integers(-3, 4))}) + int(rng.integers(-2, 3))
          for _ in range(5)] for _ in range(5)]
    full = polydet(M, nvars=nv)
    with truncation(50):
        sub = polydet(M, nvars=nv)
    assert full == sub


@given(st.integers(0, 3), st.integers(0, 3))
def test_polydet_alternating(i, j):
    x, y = MultiPoly.variables(2)
    rows = [[x, y, 1, x * y], [y * y, 2, x, 0], [1, x - y, y, 3], [x * x, 1, 0, y]]
    swapped = [list(r) for r in rows]
    swapped[i], swapped[j] = swapped[j], swapped[i]
    a, b = polydet(rows, nvars=2), polydet(swapped, nvars=2)
    assert b == (a if i == j else -a)
