from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from curvlab.poly import MultiPoly, parse_poly, polydet
from curvlab.verify import random_affine, random_cone_map, random_gl_int, random_point, random_poly
from curvlab.weights import (
    ConeMap,
    PhaseSystem,
    WeightFunctional,
    WeightInputError,
    covector_symbolic,
    d1_apply,
    dop_apply,
    induce,
    pairing,
    rotcurv1,
    rotcurv1_symbolic,
    rotcurv2,
    rotcurv2_symbolic,
    w1,
    w1_partial,
    w1_symbolic,
    w2,
    w2_jk,
    w2_k,
    w3,
)

W1 = WeightFunctional("W1")
HALF, THIRD = F(1, 2), F(1, 3)


def cubic_phase():
    rho = "x1*x4 + x2*x5 + x3*x6 + x4^2*x5 + x1*x5^2 + x2*x6^2"
    return PhaseSystem(3, 3, rho, ["x4 + 2*x6"])


# rotational curvature on phase systems

def test_rotcurv1_xy():
    ps = PhaseSystem(1, 1, "x1*x2")
    assert rotcurv1_symbolic(ps) == parse_poly("-x1*x2")
    assert rotcurv1(ps, [2, 3]) == -6


def test_rotcurv1_bilinear_plane():
    # the 3x3 determinant is -(x1 y1 + x2 y2), computed by hand cofactor expansion
    ps = PhaseSystem(2, 2, "x1*x3 + x2*x4")
    assert rotcurv1_symbolic(ps) == -ps.rho


def test_rotcurv1_no_x_dependence():
    ps = PhaseSystem(1, 2, "x2^2 + x3", ["x2*x3"])
    assert rotcurv1_symbolic(ps).is_zero()


def test_rotcurv1_needs_cutoffs():
    with pytest.raises(WeightInputError):
        rotcurv1(PhaseSystem(1, 2, "x1*x2 + x3"), [1, 2, 3])


def test_rotcurv2_cubic_oracle_value():
    pt = [HALF, THIRD, 1, F(2, 3), -1, F(3, 4)]
    assert rotcurv2(cubic_phase(), pt) == F(-482315, 8748)


def test_rotcurv2_bilinear_vanishes():
    ps = PhaseSystem(3, 3, "x1*x4 + 2*x2*x5 - x3*x6 + x4*x6", ["x4 + x5 + x6"])
    assert rotcurv2_symbolic(ps).is_zero()


def test_rotcurv2_permuting_y(rng):
    ps = cubic_phase()
    # swap y1 <-> y3 consistently in rho, phi and the point
    perm = [0, 1, 2, 5, 4, 3]
    A = np.eye(6, dtype=int)[perm].tolist()
    swapped = PhaseSystem(3, 3, ps.rho.compose_affine(A), [p.compose_affine(A) for p in ps.phi])
    for _ in range(5):
        pt = random_point(rng, 6)
        assert abs(rotcurv2(swapped, pt)) == abs(rotcurv2(ps, [pt[i] for i in perm]))


def test_rotcurv_cross_path(rng):
    # RotCurv1/2 of (rho, phi) equal W1/W2 of (d_x rho, (rho, phi)) with x frozen
    for _ in range(6):
        ps = PhaseSystem(2, 3, random_poly(rng, 5, 3), [random_poly(rng, 5, 2), random_poly(rng, 5, 2)])
        x = random_point(rng, 2)
        y = random_point(rng, 3)
        cm = ps.freeze_x(x)
        assert abs(rotcurv1(ps, x + y)) == abs(w1(cm, y))
        assert abs(rotcurv2(ps, x + y)) == abs(w2(cm, y))


def test_symbolic_numeric_exact_agree(rng):
    ps = cubic_phase()
    sym = rotcurv2_symbolic(ps)
    pts = rng.uniform(-1, 1, size=(20, 6))
    num = WeightFunctional("RotCurv2").numeric(ps, pts)
    assert num == pytest.approx(sym.eval_many(pts), rel=1e-9, abs=1e-9)
    pt = random_point(rng, 6)
    assert rotcurv2(ps, pt) == sym.eval(pt)


# D1, D, D- covectors

def test_d1_circle_cutoff():
    cm = ConeMap(2, ["x1", "x2"], ["x1^2 + x2^2"])
    assert covector_symbolic(cm, "D1") == [parse_poly("-2*x1", nvars=2), parse_poly("-2*x2", nvars=2)]
    assert d1_apply(cm, [3, 5]) == [-6, -10]


def test_d1_constant_map():
    cm = ConeMap(2, ["3", "-1"], ["x1^2 + x2"])
    assert all(c.is_zero() for c in covector_symbolic(cm, "D1"))


@given(st.fractions(min_value=-4, max_value=4, max_denominator=5))
def test_d1_linear_in_cutoff(c):
    cm = ConeMap(2, ["x1*x2", "x2^2 + x1"], ["x1^3 - x2"])
    scaled = ConeMap(2, cm.Phi, [cm.phi[0].scale(c)])
    y = [F(2, 3), F(-1, 2)]
    assert d1_apply(scaled, y) == [c * v for v in d1_apply(cm, y)]


def test_d1_numeric_batch(rng):
    cm = random_cone_map(rng, 3, 2, 2, degree=3)
    pts = rng.uniform(-1, 1, size=(7, 3))
    batch = d1_apply(cm, pts)
    for row, p in zip(batch, pts):
        assert row == pytest.approx(d1_apply(cm, list(p), exact=False), rel=1e-12)


def test_d_annihilates_phi(rng):
    for _ in range(10):
        d = int(rng.integers(1, 4))
        n = int(rng.integers(2, d + 3))
        cm = random_cone_map(rng, d, n, d - n + 2, degree=3)
        y = random_point(rng, d)
        assert pairing(dop_apply(cm, "D", y), [p.eval(y) for p in cm.Phi]) == 0


def test_dop_bad_mode():
    with pytest.raises(WeightInputError):
        dop_apply(ConeMap(1, ["x1"]), "D1", [1])


def test_dminus_relation(rng):
    # D1 of (lam Phi_2.., (lam Phi_1 - 1, phi)) in variables (lam, y) is +-lam^(n-1) D- Phi at lam = 1/Phi_1,
    # with sign (-1)^(d+n+1)
    checked = 0
    while checked < 16:
        d = int(rng.integers(1, 5))
        n = int(rng.integers(1, d + 2))
        cm = random_cone_map(rng, d, n + 1, d - n + 1, degree=2)
        y = random_point(rng, d)
        P1 = cm.Phi[0].eval(y)
        if P1 == 0:
            continue
        lam = 1 / P1
        nd, pos = d + 1, list(range(1, d + 1))
        L = MultiPoly.variable(0, nd)
        tilde = ConeMap(nd, [L * p.embed(nd, pos) for p in cm.Phi[1:]],
                        [L * cm.Phi[0].embed(nd, pos) - 1] + [p.embed(nd, pos) for p in cm.phi])
        lhs = d1_apply(tilde, [lam] + y)
        rhs = dop_apply(cm, "Dminus", y)
        sign = (-1) ** (d + n + 1)
        assert lhs == [sign * lam ** (n - 1) * v for v in rhs]
        checked += 1


def test_second_order_pairing_sign(rng):
    # on level sets of affine phi: <Y_i D Phi, Y_j Phi> = -<D Phi, Y_i Y_j Phi>
    for _ in range(8):
        d = int(rng.integers(2, 4))
        n = int(rng.integers(3, d + 3))
        q = d - n + 2
        C = rng.integers(-3, 4, size=(q, d - q))
        phi = [MultiPoly.linear([int(k == i) for k in range(q)] + C[i].tolist(), int(rng.integers(-2, 3)))
               for i in range(q)]
        cm = ConeMap(d, [random_poly(rng, d, 3) for _ in range(n)], phi)
        Ys = [[-int(C[k, j]) for k in range(q)] + [int(i == j) for i in range(d - q)] for j in range(d - q)]

        def along(p, Y):
            return sum((p.partial(a).scale(c) for a, c in enumerate(Y) if c), MultiPoly.zero(d))

        D = covector_symbolic(cm, "D")
        y = random_point(rng, d)
        for Yi in Ys:
            for Yj in Ys:
                lhs = sum(along(Dk, Yi).eval(y) * along(P, Yj).eval(y) for Dk, P in zip(D, cm.Phi))
                rhs = sum(Dk.eval(y) * along(along(P, Yi), Yj).eval(y) for Dk, P in zip(D, cm.Phi))
                assert lhs == -rhs


# W1 family

def test_w1_circle_cutoff():
    cm = ConeMap(2, ["x1", "x2"], ["x1^2 + x2^2"])
    assert w1_symbolic(cm) == parse_poly("-2*x1^2 - 2*x2^2")
    assert w1(cm, [1, 1]) == -4


def test_w1_linear_cutoff():
    assert w1_symbolic(ConeMap(2, ["x1", "x2"], ["x1"])) == parse_poly("-x1", nvars=2)


def test_w1_values_on_a_line():
    cm = ConeMap(2, ["x1^2 + x2", "3*x1^2 + 3*x2"], [])
    assert w1_symbolic(ConeMap(2, cm.Phi, ["x1*x2"])).is_zero()


def test_w1_transformation_law(rng):
    for _ in range(20):
        d = int(rng.integers(1, 4))
        n = int(rng.integers(1, d + 2))
        cm = random_cone_map(rng, d, n, d - n + 1, degree=2)
        Q = random_gl_int(rng, n)
        y = random_point(rng, d)
        det_q = F(int(round(np.linalg.det(np.array(Q, float)))))
        assert abs(w1(cm.linear_image(Q), y)) == abs(det_q) * abs(w1(cm, y))
        u, v = d1_apply(cm, y), d1_apply(cm.linear_image(Q), y)
        assert [sum(Q[j][i] * v[j] for j in range(n)) for i in range(n)] == [det_q * c for c in u]


def test_w1_partial_no_vectors_is_jacobian(rng):
    d, n = 3, 2
    cm = random_cone_map(rng, d, n, d - n, degree=3)
    jac = polydet([[p.partial(j) for j in range(d)] for p in list(cm.phi) + list(cm.Phi)], nvars=d)
    y = random_point(rng, d)
    assert abs(w1_partial(cm, [], y)) == abs(jac.eval(y))


def test_w1_partial_dependent_vectors(rng):
    cm = random_cone_map(rng, 3, 3, 2, degree=2)
    y = random_point(rng, 3)
    assert w1_partial(cm, [[1, 2, 0], [2, 4, 0]], y) == 0


@given(st.fractions(min_value=-5, max_value=5, max_denominator=4))
def test_w1_partial_multilinear(c):
    cm = ConeMap(2, ["x1^2", "x1*x2", "x2^3 + 1"], ["x1 - x2", "x1*x2^2"])
    y = [F(1, 2), F(-2, 3)]
    assert w1_partial(cm, [[c, 1, 2]], y) == w1_partial(cm, [[1, 0, 0]], y) * c + w1_partial(cm, [[0, 1, 2]], y)


def test_w1_reparametrization(rng):
    for _ in range(10):
        d = int(rng.integers(1, 4))
        n = int(rng.integers(1, d + 2))
        cm = random_cone_map(rng, d, n, d - n + 1, degree=2)
        A = random_gl_int(rng, d)
        b = [int(v) for v in rng.integers(-2, 3, d)]
        u = random_point(rng, d)
        psi = [sum(A[i][j] * u[j] for j in range(d)) + b[i] for i in range(d)]
        det_a = abs(F(int(round(np.linalg.det(np.array(A, float))))))
        assert abs(w1(cm.reparametrize(A, b), u)) == abs(w1(cm, psi)) * det_a


# W2 family

def test_w2_paraboloid_cone():
    cm = ConeMap(2, ["1", "x1", "x2", "(x1^2 + x2^2)/2"])
    assert w2(cm, [HALF, THIRD]) == 1


def test_w2_cylinder_cone():
    cm = ConeMap(2, ["1", "x1", "x2", "x1^2"])
    assert WeightFunctional("W2").symbolic(cm).is_zero()


def test_w2_linear_map(rng):
    cm = ConeMap(3, [random_affine(rng, 3) for _ in range(3)], [random_poly(rng, 3, 2) for _ in range(2)])
    assert WeightFunctional("W2").symbolic(cm).is_zero()


def test_w2_k_zero_matches_w2_on_cone(rng):
    # W2 of (1, Psi) equals W2_k (k = 0) of Psi up to sign
    for _ in range(5):
        d, n = 3, 4
        psi = [random_poly(rng, d, 3) for _ in range(n - 1)]
        phi = [random_affine(rng, d) for _ in range(d - n + 2)]
        y = random_point(rng, d)
        cone = ConeMap(d, [MultiPoly.constant(1, d)] + psi, phi)
        assert abs(w2(cone, y)) == abs(w2_k(ConeMap(d, psi, phi), 0, y))


def test_w2_jk_without_vectors_is_w2_k(rng):
    d = 3
    cm = ConeMap(d, [random_poly(rng, d, 3) for _ in range(3)], [random_affine(rng, d) for _ in range(2)])
    y = random_point(rng, d)
    for k in range(3):
        assert w2_jk(cm, [], k, y) == w2_k(cm, k, y)


def test_w2_k_range():
    cm = ConeMap(2, ["x1", "x2"], ["x1"])
    with pytest.raises(WeightInputError):
        w2_k(cm, 2, [1, 1])


def test_w2_literal_vs_covariant_nonlinear_cutoff(rng):
    # affine phi: both forms agree with the induced weight; curved phi: only the covariant form does
    literal_differs = False
    for _ in range(12):
        cm = random_cone_map(rng, 2, 3, 1, degree=2, affine_phi=False)
        y = random_point(rng, 2)
        ind = induce(W1, cm, y)
        assert abs(w2(cm, y, form="covariant")) == ind
        literal_differs |= abs(w2(cm, y)) != ind
    assert literal_differs
    for _ in range(6):
        cm = random_cone_map(rng, 2, 3, 1, degree=2)
        y = random_point(rng, 2)
        assert abs(w2(cm, y)) == abs(w2(cm, y, form="covariant")) == induce(W1, cm, y)


def test_augment_keeps_weights_up_to_sign(rng):
    cm = random_cone_map(rng, 2, 3, 1, degree=3)
    big = cm.augment(2)
    y = random_point(rng, 2)
    z = random_point(rng, 2)
    assert abs(w1(big, y + z)) == abs(w1(cm, y))
    assert abs(w2(big, y + z)) == abs(w2(cm, y))


# W3 and the induction engine

def moment_cone():
    return ConeMap(2, ["1 + x1*x2", "x1", "x2", "x1^2*x2 + x2^3"], ["x1 + 2*x2"])


def test_w3_oracle_value():
    assert w3(moment_cone(), [HALF, THIRD]) == F(-20056, 5103)


def test_w3_zero_when_functional_vanishes():
    cm = ConeMap(2, ["x1 - x2", "x1", "x2", "x1^2*x2 + x2^3"], ["x1 + 2*x2"])
    assert w3(cm, [F(2, 3), F(2, 3)]) == 0


def test_w3_affine_map_vanishes(rng):
    cm = ConeMap(2, [random_affine(rng, 2) for _ in range(4)], ["x1 + 2*x2"])
    assert w3(cm, [F(1, 5), F(3, 7)]) == 0


def test_w3_needs_n_above_two():
    with pytest.raises(WeightInputError):
        w3(ConeMap(2, ["x1", "x2"], ["x1", "x2"]), [1, 1])


def test_induce_twice_is_w3():
    cm = moment_cone()
    y = [HALF, THIRD]
    assert induce(WeightFunctional.induced(W1), cm, y) == abs(w3(cm, y))


def test_induce_zero_first_component():
    cm = ConeMap(2, ["x1 - 1", "x2", "x1*x2"], ["x1^2"])
    assert induce(W1, cm, [1, F(5, 2)]) == 0


def test_induce_rejects_zero_beta():
    with pytest.raises(WeightInputError):
        induce(W1, ConeMap(2, ["1", "x1", "x2"], ["x1"]), [1, 1], alpha=2, beta=0)


def test_induce_closure_sample(rng):
    for _ in range(5):
        cm = random_cone_map(rng, 3, 4, 1, degree=3)
        y = random_point(rng, 3)
        assert induce(W1, cm, y) == abs(w2(cm, y))


def test_numeric_matches_exact_for_cone_kinds(rng):
    cm = random_cone_map(rng, 3, 3, 3, degree=3)
    pts = rng.uniform(-1, 1, size=(6, 3))
    for wf in [WeightFunctional("W1"), WeightFunctional("W2"), WeightFunctional("W3"),
               WeightFunctional("W1Partial", {"V": [[1, 2, 0]]})]:
        num = wf.numeric(cm, pts)
        ref = [float(wf.exact(cm, [F(v) for v in p])) for p in pts]
        assert num == pytest.approx(ref, rel=1e-8, abs=1e-9)


# plumbing

def test_weight_functional_round_trip():
    wf = WeightFunctional.induced(WeightFunctional("W2K", {"k": 1}), alpha=F(3, 2), beta=2)
    assert WeightFunctional.from_dict(wf.to_dict()) == wf


def test_instances_round_trip():
    cm = moment_cone()
    assert ConeMap.from_dict(cm.to_dict()) == cm
    ps = cubic_phase()
    assert PhaseSystem.from_dict(ps.to_dict()) == ps


def test_unknown_kind():
    with pytest.raises(WeightInputError):
        WeightFunctional("W4")


def test_wrong_instance_type():
    with pytest.raises(WeightInputError):
        WeightFunctional("RotCurv1").exact(moment_cone(), [1, 1])
