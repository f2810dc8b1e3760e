"""Float linear algebra: determinants, T_V projections, completing the square, GL(n) sampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SINGULAR_TOL = 1e-12


class LinalgInputError(ValueError):
    """Invalid matrix input (shape, singularity, unsatisfiable sampler constraints)."""


def det(M) -> float:
    """Determinant by LU with partial pivoting (LAPACK getrf)."""
    a = np.asarray(M, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise LinalgInputError(f"determinant needs a square matrix, got shape {a.shape}")
    if a.shape[0] == 0:
        return 1.0
    return float(np.linalg.det(a))


def batched_det(stack: np.ndarray) -> np.ndarray:
    """Determinants of an (N, k, k) stack; k = 0 gives ones."""
    a = np.asarray(stack, dtype=float)
    if a.shape[-1] == 0:
        return np.ones(a.shape[:-2])
    return np.linalg.det(a)


@dataclass(frozen=True)
class GLn:
    """Invertible n x n matrix with its cached determinant."""

    entries: np.ndarray
    det: float = field(init=False)

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise LinalgInputError(f"GLn needs a square matrix, got shape {a.shape}")
        d = det(a)
        if not np.isfinite(d) or abs(d) <= SINGULAR_TOL:
            raise LinalgInputError(f"matrix is singular (det={d:.3e})")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)
        object.__setattr__(self, "det", d)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def cond(self) -> float:
        return float(np.linalg.cond(self.entries))

    def to_list(self) -> list[list[float]]:
        return self.entries.tolist()


@dataclass(frozen=True)
class ProjectionTV:
    """Linear map R^d -> R^(d-k-1) annihilating span(V), normalized against V."""

    d: int
    k: int
    matrix: np.ndarray

    def __call__(self, z):
        return self.matrix @ np.asarray(z, dtype=float)

    @property
    def out_dim(self) -> int:
        return self.d - self.k - 1


def build_tv(V, basis_seed: int | None = None) -> ProjectionTV:
    """T_V for k+1 vectors V in R^d.

    Rows span the orthogonal complement of span(V), scaled so that
    |det(T z_1 ... T z_{d-k-1})| = |det(v_1 ... v_{k+1} z_1 ... z_{d-k-1})|.
    A rank-deficient V yields the zero map (both sides vanish identically).
    ``basis_seed`` rotates the complement basis, giving an independent
    construction of the same map up to a unimodular factor.
    """
    vs = np.atleast_2d(np.asarray(V, dtype=float))
    k1, d = vs.shape
    if d <= k1:
        raise LinalgInputError(f"need d > k+1, got d={d} with {k1} vectors")
    out = d - k1
    u, sv, vt = np.linalg.svd(vs, full_matrices=True)
    scale = np.max(sv) if sv.size else 0.0
    rank = int(np.sum(sv > 1e-12 * max(scale, 1.0)))
    if rank < k1:
        return ProjectionTV(d=d, k=k1 - 1, matrix=np.zeros((out, d)))
    comp = vt[k1:]  # orthonormal rows spanning span(V)^perp
    if basis_seed is not None:
        rng = np.random.default_rng(basis_seed)
        q, r = np.linalg.qr(rng.standard_normal((out, out)))
        comp = (q * np.sign(np.diag(r))) @ comp
    # |det[V, W]| for orthonormal W orthogonal to V is the Gram volume of V
    vol = float(np.sqrt(abs(np.linalg.det(vs @ vs.T))))
    return ProjectionTV(d=d, k=k1 - 1, matrix=vol ** (1.0 / out) * comp)


def complete_square(Q) -> tuple[GLn, np.ndarray, float]:
    """Split |Qz|^2 = |Q0(z' - v z_last)|^2 + b^2 z_last^2 with z' the first n coordinates.

    Block Cholesky of Q^T Q; Q0 is upper triangular with positive diagonal and b > 0.
    """
    q = Q.entries if isinstance(Q, GLn) else np.asarray(Q, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[0] < 2:
        raise LinalgInputError("complete_square needs a square matrix of size >= 2")
    if abs(det(q)) <= SINGULAR_TOL:
        raise LinalgInputError("complete_square needs an invertible matrix")
    g = q.T @ q
    n = q.shape[0] - 1
    g11, gv, gamma = g[:n, :n], g[:n, n], g[n, n]
    L = np.linalg.cholesky(g11)
    w = np.linalg.solve(g11, gv)
    schur = gamma - gv @ w
    if schur <= 0:
        raise LinalgInputError("Schur complement not positive; matrix numerically singular")
    return GLn(L.T), -w, float(np.sqrt(schur))


def sample_gl(n: int, rng_seed, log_det_range=(0.0, 0.0), cond_cap: float = 1e3) -> GLn:
    """Random GL(n) element with log|det| uniform in the range and condition <= cond_cap.

    Built as U diag(sigma) V^T with Haar-random orthogonal U, V; log singular
    values are spread uniformly inside [-log(cap)/2, log(cap)/2] then shifted to
    hit the drawn determinant.  Deterministic given the seed.
    """
    if n < 1:
        raise LinalgInputError("n must be positive")
    lo, hi = (float(v) for v in log_det_range)
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise LinalgInputError(f"invalid log_det_range {log_det_range!r}")
    if not cond_cap > 1:
        raise LinalgInputError("cond_cap must exceed 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    half = 0.5 * np.log(cond_cap) * (1 - 1e-9)
    logs = rng.uniform(-half, half, size=n)
    logs -= logs.mean()
    # centring can stretch the spread past log(cap); rescale if so
    spread = logs.max() - logs.min()
    if spread > 2 * half:
        logs *= 2 * half / spread
    target = rng.uniform(lo, hi) if hi > lo else lo
    sigma = np.exp(logs + target / n)
    u = _haar(rng, n)
    v = _haar(rng, n)
    if rng.random() < 0.5:
        u[:, 0] = -u[:, 0]
    return GLn((u * sigma) @ v.T)


def _haar(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))
