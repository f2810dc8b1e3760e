import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from curvlab.linalg import GLn, LinalgInputError, batched_det, build_tv, complete_square, det, sample_gl
from curvlab.verify import complete_square_check


@pytest.mark.parametrize("M, expected", [(np.eye(3), 1.0), (np.diag([2.0, 3.0]), 6.0), ([[0, 1], [1, 0]], -1.0)])
def test_det_examples(M, expected):
    assert det(M) == pytest.approx(expected)


def test_det_non_square():
    with pytest.raises(LinalgInputError):
        det(np.ones((2, 3)))


def test_batched_det_empty_blocks():
    assert np.array_equal(batched_det(np.zeros((4, 0, 0))), np.ones(4))


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_det_multiplicative(n, seed):
    r = np.random.default_rng(seed)
    A, B = r.standard_normal((n, n)), r.standard_normal((n, n))
    assert det(A @ B) == pytest.approx(det(A) * det(B), rel=1e-9, abs=1e-12)


def test_gln_rejects_singular():
    with pytest.raises(LinalgInputError):
        GLn([[1.0, 2.0], [2.0, 4.0]])


def test_gln_is_immutable():
    g = GLn(np.eye(2))
    with pytest.raises(ValueError):
        g.entries[0, 0] = 5.0


# T_V projection

def test_tv_single_vector_in_plane():
    T = build_tv([[1.0, 0.0]])
    assert T.matrix.shape == (1, 2)
    assert T.matrix[0, 0] == pytest.approx(0.0, abs=1e-15)
    assert abs(T.matrix[0, 1]) == pytest.approx(1.0)


def test_tv_two_vectors_in_space():
    T = build_tv([[1.0, 0, 0], [0, 1.0, 0]])
    z = np.array([0.3, -2.0, 5.0])
    assert abs(T(z)[0]) == pytest.approx(5.0)


def test_tv_rank_deficient_is_zero():
    T = build_tv([[1.0, 0, 0], [1.0, 0, 0]])
    assert not np.any(T.matrix)


def test_tv_needs_room():
    with pytest.raises(LinalgInputError):
        build_tv(np.eye(3))


@pytest.mark.parametrize("d, k1", [(3, 1), (4, 2), (5, 2), (6, 3)])
def test_tv_mapping_invariant(d, k1, rng):
    V = rng.standard_normal((k1, d))
    T = build_tv(V)
    T2 = build_tv(V, basis_seed=99)
    for _ in range(50):
        Z = rng.standard_normal((d - k1, d))
        lhs = abs(np.linalg.det(T.matrix @ Z.T))
        rhs = abs(np.linalg.det(np.vstack([V, Z])))
        assert lhs == pytest.approx(rhs, rel=1e-8)
        # an independent construction differs by a unimodular factor
        assert abs(np.linalg.det(T2.matrix @ Z.T)) == pytest.approx(lhs, rel=1e-8)
    assert T.matrix @ V.T == pytest.approx(np.zeros((d - k1, k1)), abs=1e-12)


# completing the square

def test_complete_square_identity():
    Q0, v, b = complete_square(np.eye(2))
    assert Q0.entries == pytest.approx(np.array([[1.0]]))
    assert v == pytest.approx([0.0])
    assert b == pytest.approx(1.0)


def test_complete_square_diagonal():
    Q0, v, b = complete_square(np.diag([-3.0, -0.5]))
    assert abs(Q0.entries[0, 0]) == pytest.approx(3.0)
    assert v == pytest.approx([0.0])
    assert b == pytest.approx(0.5)


def test_complete_square_shear():
    # |Qz|^2 = (z1 + z2)^2 + z2^2 by hand
    Q0, v, b = complete_square([[1.0, 1.0], [0.0, 1.0]])
    assert Q0.entries == pytest.approx(np.array([[1.0]]))
    assert v == pytest.approx([-1.0])
    assert b == pytest.approx(1.0)


def test_complete_square_singular():
    with pytest.raises(LinalgInputError):
        complete_square([[1.0, 2.0], [2.0, 4.0]])


@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_complete_square_round_trip(size, seed):
    r = np.random.default_rng(seed)
    Q = r.standard_normal((size, size)) + 2 * np.eye(size)
    ok, info = complete_square_check(Q, r)
    assert ok, info


# GL(n) sampler

def test_sample_gl_deterministic():
    assert np.array_equal(sample_gl(2, 5).entries, sample_gl(2, 5).entries)


def test_sample_gl_unit_det():
    for s in range(20):
        assert abs(sample_gl(3, s).det) == pytest.approx(1.0, abs=1e-9)


def test_sample_gl_range_and_cap():
    lo, hi = -2.0, 3.0
    logs = []
    for s in range(1000):
        g = sample_gl(3, s, (lo, hi), cond_cap=50.0)
        assert g.cond() <= 50.0 * (1 + 1e-9)
        logs.append(np.log(abs(g.det)))
    logs = np.array(logs)
    assert logs.min() >= lo - 1e-9 and logs.max() <= hi + 1e-9
    # histogram oracle: every fifth of the range is populated
    counts, _ = np.histogram(logs, bins=5, range=(lo, hi))
    assert np.all(counts > 100)


@pytest.mark.parametrize("kw", [{"log_det_range": (1.0, 0.0)}, {"cond_cap": 1.0}, {"log_det_range": (0, np.inf)}])
def test_sample_gl_bad_config(kw):
    with pytest.raises(LinalgInputError):
        sample_gl(2, 0, **kw)
