"""Curvature weights, bordered-determinant derivative operators and the induction step.

Every weight is written once as a function of a *ring* that decides how
polynomial entries become values and how determinants are taken:

* ``SymbolicRing``: entries stay polynomials, determinants via :func:`polydet`.
* ``PointRing``: exact rationals at the origin of a local jet (exact pointwise path).
* ``ArrayRing``: float values at a batch of points, determinants via LAPACK.

Covector-valued operators (D1, D, D-) that are differentiated again are always
built symbolically first.  Exact pointwise evaluation re-centres the
polynomials at the point and truncates every product at the weight's
derivative order, which keeps constant terms exact and intermediates small.

Conventions: in a :class:`PhaseSystem` the variables are ``(x_1..x_dl, y_1..y_dr)``;
a :class:`ConeMap` lives on ``y`` only.  A weight whose cutoff list needs ``q``
entries uses the first ``q`` entries of ``phi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Any, Callable, Sequence

import numpy as np

from .linalg import batched_det
from .poly import (
    MultiPoly,
    det_fraction,
    parse_poly,
    polydet,
    to_fraction,
    truncation,
)


class WeightInputError(ValueError):
    """Dimension or hypothesis mismatch between a weight and its instance."""


# --- instances -----------------------------------------------------------------

def _as_poly(p, nvars: int) -> MultiPoly:
    if isinstance(p, MultiPoly):
        if p.nvars != nvars:
            raise WeightInputError(f"polynomial has {p.nvars} variables, expected {nvars}")
        return p
    if isinstance(p, str):
        return parse_poly(p, nvars=nvars)
    return MultiPoly.constant(p, nvars)


@dataclass(frozen=True)
class ConeMap:
    """Phi: R^d -> R^n together with cutoff maps phi, all polynomial in y."""

    d: int
    Phi: tuple
    phi: tuple = ()

    def __post_init__(self):
        if self.d < 1:
            raise WeightInputError("domain dimension must be positive")
        Phi = tuple(_as_poly(p, self.d) for p in self.Phi)
        phi = tuple(_as_poly(p, self.d) for p in self.phi)
        if not Phi:
            raise WeightInputError("Phi must have at least one component")
        object.__setattr__(self, "Phi", Phi)
        object.__setattr__(self, "phi", phi)

    @property
    def n(self) -> int:
        return len(self.Phi)

    def recenter(self, point) -> "ConeMap":
        """Polynomials re-expanded around ``point`` (respects an active truncation)."""
        pt = [to_fraction(v) for v in point]
        if len(pt) != self.d:
            raise WeightInputError(f"point has length {len(pt)}, expected {self.d}")
        if not any(pt):
            return ConeMap(self.d, tuple(_trunc_now(p) for p in self.Phi), tuple(_trunc_now(p) for p in self.phi))
        return ConeMap(self.d, tuple(p.shift(pt) for p in self.Phi), tuple(p.shift(pt) for p in self.phi))

    def linear_image(self, Q) -> "ConeMap":
        """The map Q Phi for a rational (or float, converted exactly) n x n matrix Q."""
        rows = np.asarray(Q, dtype=object).tolist() if not isinstance(Q, list) else Q
        if len(rows) != self.n or any(len(r) != self.n for r in rows):
            raise WeightInputError(f"Q must be {self.n}x{self.n}")
        new = []
        for r in rows:
            acc = MultiPoly.zero(self.d)
            for c, p in zip(r, self.Phi):
                acc = acc + p.scale(to_fraction(c))
            new.append(acc)
        return ConeMap(self.d, tuple(new), self.phi)

    def reparametrize(self, A, b=None) -> "ConeMap":
        """Pull back Phi and phi along the affine map u -> A u + b."""
        return ConeMap(
            self.d,
            tuple(p.compose_affine(A, b) for p in self.Phi),
            tuple(p.compose_affine(A, b) for p in self.phi),
        )

    def augment(self, extra: int) -> "ConeMap":
        """Append ``extra`` dummy variables z and put their coordinates first in phi.

        Phi does not depend on z.  Every bordered weight of the augmented map
        equals the original one up to sign.
        """
        if extra < 0:
            raise WeightInputError("extra must be nonnegative")
        nd = self.d + extra
        pos = list(range(self.d))
        z = [MultiPoly.variable(self.d + i, nd) for i in range(extra)]
        return ConeMap(
            nd,
            tuple(p.embed(nd, pos) for p in self.Phi),
            tuple(z) + tuple(p.embed(nd, pos) for p in self.phi),
        )

    def to_dict(self) -> dict:
        return {
            "type": "ConeMap",
            "d": self.d,
            "Phi": [p.to_string() for p in self.Phi],
            "phi": [p.to_string() for p in self.phi],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ConeMap":
        d = int(data["d"])
        return cls(d, tuple(parse_poly(s, nvars=d) for s in data["Phi"]),
                   tuple(parse_poly(s, nvars=d) for s in data.get("phi", [])))


@dataclass(frozen=True)
class PhaseSystem:
    """Phase rho(x, y) with cutoff maps phi(x, y); x in R^d_l, y in R^d_r."""

    d_l: int
    d_r: int
    rho: Any
    phi: tuple = ()

    def __post_init__(self):
        if self.d_l < 1 or self.d_r < 1:
            raise WeightInputError("d_l and d_r must be positive")
        nv = self.d_l + self.d_r
        object.__setattr__(self, "rho", _as_poly(self.rho, nv))
        object.__setattr__(self, "phi", tuple(_as_poly(p, nv) for p in self.phi))

    @property
    def nvars(self) -> int:
        return self.d_l + self.d_r

    @property
    def x_vars(self) -> range:
        return range(self.d_l)

    @property
    def y_vars(self) -> range:
        return range(self.d_l, self.d_l + self.d_r)

    def freeze_x(self, x) -> ConeMap:
        """Phi = d_x rho(x, .), phi = (rho(x, .), phi(x, .)) with x fixed."""
        if len(x) != self.d_l:
            raise WeightInputError(f"x has length {len(x)}, expected {self.d_l}")
        vals = {i: to_fraction(v) for i, v in enumerate(x)}
        Phi = tuple(self.rho.partial(i).fix(vals) for i in self.x_vars)
        phi = (self.rho.fix(vals),) + tuple(p.fix(vals) for p in self.phi)
        return ConeMap(self.d_r, Phi, phi)

    def recenter(self, point) -> "PhaseSystem":
        pt = [to_fraction(v) for v in point]
        return PhaseSystem(self.d_l, self.d_r, self.rho.shift(pt), tuple(p.shift(pt) for p in self.phi))

    def to_dict(self) -> dict:
        return {
            "type": "PhaseSystem",
            "d_l": self.d_l,
            "d_r": self.d_r,
            "rho": self.rho.to_string(),
            "phi": [p.to_string() for p in self.phi],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PhaseSystem":
        d_l, d_r = int(data["d_l"]), int(data["d_r"])
        nv = d_l + d_r
        return cls(d_l, d_r, parse_poly(data["rho"], nvars=nv),
                   tuple(parse_poly(s, nvars=nv) for s in data.get("phi", [])))


def _trunc_now(p: MultiPoly) -> MultiPoly:
    from .poly import current_truncation

    k = current_truncation()
    return p if k is None else p.truncate(k)


# --- rings ---------------------------------------------------------------------

class SymbolicRing:
    exact = True

    def __init__(self, nvars: int):
        self.nvars = nvars

    def lift(self, p: MultiPoly):
        return p

    def const(self, c):
        return MultiPoly.constant(c, self.nvars)

    def det(self, rows):
        if not rows:
            return MultiPoly.constant(1, self.nvars)
        return polydet(rows, self.nvars)

    def div(self, a, b):
        raise WeightInputError("this weight involves a quotient and has no polynomial form")

    def is_zero(self, v):
        return v.is_zero()


class PointRing:
    """Exact values at the origin of re-centred polynomials."""

    exact = True

    def lift(self, p: MultiPoly):
        return p.constant_term()

    def const(self, c):
        return to_fraction(c)

    def det(self, rows):
        if not rows:
            return Fraction(1)
        return det_fraction(rows)

    def div(self, a, b):
        return a / b if b else Fraction(0)

    def is_zero(self, v):
        return v == 0


class ArrayRing:
    """Float values at the rows of an (N, nvars) array."""

    exact = False

    def __init__(self, points: np.ndarray):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.size = self.points.shape[0]
        self._cache: dict = {}

    def lift(self, p: MultiPoly):
        v = self._cache.get(p)
        if v is None:
            v = p.eval_many(self.points)
            self._cache[p] = v
        return v

    def const(self, c):
        return float(c)

    def det(self, rows):
        k = len(rows)
        if k == 0:
            return np.ones(self.size)
        stack = np.empty((self.size, k, k))
        for i, r in enumerate(rows):
            for j, e in enumerate(r):
                stack[:, i, j] = e
        return batched_det(stack)

    def div(self, a, b):
        a = np.broadcast_to(np.asarray(a, dtype=float), (self.size,))
        b = np.broadcast_to(np.asarray(b, dtype=float), (self.size,))
        out = np.zeros(self.size)
        np.divide(a, b, out=out, where=b != 0)
        return out

    def is_zero(self, v):
        return np.asarray(v) == 0


def _sum(values, zero):
    acc = zero
    for v in values:
        acc = acc + v
    return acc


# --- shared building blocks ------------------------------------------------------

def _prefix(phi: tuple, q: int, what: str) -> tuple:
    if q < 0:
        raise WeightInputError(f"{what}: dimension hypothesis violated (needs {q} cutoff maps)")
    if len(phi) < q:
        raise WeightInputError(f"{what}: needs {q} cutoff maps, instance has {len(phi)}")
    return phi[:q]


def _grad_rows(R, polys, variables) -> list[list]:
    return [[R.lift(p.partial(j)) for j in variables] for p in polys]


def dual_covector(R, top: list[list], bottom: list[list]) -> list:
    """Covector L with <L, z> = det[[0, top], [z, bottom]].

    ``top`` has t rows and ``bottom`` has m rows, both with c columns, t + m = c + 1.
    """
    t, m = len(top), len(bottom)
    c = len((top or bottom)[0])
    if t + m != c + 1:
        raise WeightInputError(f"bordered matrix is not square ({t}+{m} rows, {c}+1 columns)")
    out = []
    for i in range(m):
        minor = top + bottom[:i] + bottom[i + 1:]
        v = R.det(minor)
        out.append(-v if (t + i) % 2 else v)
    return out


def _d1_blocks(R, cm: ConeMap):
    q = cm.d - cm.n + 1
    phi = _prefix(cm.phi, q, "D1")
    ys = range(cm.d)
    return _grad_rows(R, phi, ys), _grad_rows(R, cm.Phi, ys)


def _d_blocks(R, cm: ConeMap):
    q = cm.d - cm.n + 2
    phi = _prefix(cm.phi, q, "D")
    ys = range(cm.d)
    zero = R.const(0)
    top = [[zero] + row for row in _grad_rows(R, phi, ys)]
    bottom = [[R.lift(P)] + row for P, row in zip(cm.Phi, _grad_rows(R, cm.Phi, ys))]
    return top, bottom


def _dminus_blocks(R, cm: ConeMap):
    # cm maps into R^(n+1); the covector lives in R^n
    n = cm.n - 1
    if n < 1:
        raise WeightInputError("D- needs Phi with at least two components")
    q = cm.d - n + 1
    phi = _prefix(cm.phi, q, "D-")
    ys = range(cm.d)
    zero = R.const(0)
    top = [[zero] + row for row in _grad_rows(R, phi, ys)]
    P1 = cm.Phi[0]
    top.append([R.lift(P1)] + [R.lift(P1.partial(j)) for j in ys])
    bottom = [[R.lift(P)] + [R.lift(P.partial(j)) for j in ys] for P in cm.Phi[1:]]
    return top, bottom


_DOP_BLOCKS = {"D1": _d1_blocks, "D": _d_blocks, "Dminus": _dminus_blocks}


def covector(R, cm: ConeMap, mode: str) -> list:
    try:
        blocks = _DOP_BLOCKS[mode]
    except KeyError:
        raise WeightInputError(f"unknown operator {mode!r}; expected one of {sorted(_DOP_BLOCKS)}") from None
    return dual_covector(R, *blocks(R, cm))


def covector_symbolic(cm: ConeMap, mode: str) -> list[MultiPoly]:
    return covector(SymbolicRing(cm.d), cm, mode)


# --- weight formulas (ring-generic) ----------------------------------------------

def _w1(R, cm: ConeMap):
    q = cm.d - cm.n + 1
    phi = _prefix(cm.phi, q, "W1")
    ys = range(cm.d)
    zero = R.const(0)
    rows = [[zero] + r for r in _grad_rows(R, phi, ys)]
    rows += [[R.lift(P)] + r for P, r in zip(cm.Phi, _grad_rows(R, cm.Phi, ys))]
    return R.det(rows)


def _w1_partial(R, cm: ConeMap, V):
    V = [list(v) for v in V]
    j = len(V)
    if j > cm.n:
        raise WeightInputError(f"W1 partial: {j} vectors exceed the target dimension {cm.n}")
    if any(len(v) != cm.n for v in V):
        raise WeightInputError(f"W1 partial: vectors must lie in R^{cm.n}")
    q = cm.d - cm.n + j
    phi = _prefix(cm.phi, q, "W1 partial")
    ys = range(cm.d)
    zero = R.const(0)
    rows = [[zero] * j + r for r in _grad_rows(R, phi, ys)]
    for a, (P, r) in enumerate(zip(cm.Phi, _grad_rows(R, cm.Phi, ys))):
        rows.append([R.const(V[b][a]) for b in range(j)] + r)
    return R.det(rows)


def _bordered(R, border: list[list], M: list[list]):
    """det [[0, B], [B^T, M]] for a border block B (rows x d)."""
    b = len(border)
    zero = R.const(0)
    rows = [[zero] * b + list(r) for r in border]
    d = len(M)
    for i in range(d):
        rows.append([border[a][i] for a in range(b)] + list(M[i]))
    return R.det(rows)


def _w2(R, cm: ConeMap, form: str = "literal"):
    q = cm.d - cm.n + 2
    phi = _prefix(cm.phi, q, "W2")
    ys = range(cm.d)
    d = cm.d
    A = _grad_rows(R, phi, ys)
    if form == "literal":
        zero = R.const(0)
        top = [[zero, zero] + r for r in A]
        base = [(R.lift(P), [R.lift(P.partial(j)) for j in ys]) for P in cm.Phi]
        M = [[None] * d for _ in range(d)]
        for i in range(d):
            for j in range(i, d):
                rows = top + [[R.lift(P.partial(i).partial(j)), v, *g] for P, (v, g) in zip(cm.Phi, base)]
                M[i][j] = M[j][i] = R.det(rows)
    elif form == "covariant":
        D = covector_symbolic(cm, "D")
        dPhi = [[R.lift(P.partial(j)) for j in ys] for P in cm.Phi]
        zero = R.const(0)
        M = [[-_sum((R.lift(D[k].partial(i)) * dPhi[k][j] for k in range(cm.n)), zero) for j in ys] for i in ys]
    else:
        raise WeightInputError(f"unknown W2 form {form!r}")
    return _bordered(R, A, M)


def _w2_k(R, cm: ConeMap, k: int):
    # Phi maps into R^(n-1) with n = cm.n + 1
    n = cm.n + 1
    if not 0 <= k <= n - 2:
        raise WeightInputError(f"W2_k: need 0 <= k <= {n - 2}, got {k}")
    q = cm.d - n + 2
    phi = _prefix(cm.phi, q, "W2_k")
    ys = range(cm.d)
    d = cm.d
    A = _grad_rows(R, phi, ys)
    zero = R.const(0)
    top = [[zero] + r for r in A]
    grads = _grad_rows(R, cm.Phi, ys)
    M = [[None] * d for _ in range(d)]
    for i in range(d):
        for j in range(i, d):
            rows = top + [[R.lift(P.partial(i).partial(j))] + g for P, g in zip(cm.Phi, grads)]
            M[i][j] = M[j][i] = R.det(rows)
    return _bordered(R, A + grads[:k], M)


def _w2_jk(R, cm: ConeMap, V, m: int):
    V = [list(v) for v in V]
    j = len(V)
    n = cm.n
    if any(len(v) != n for v in V):
        raise WeightInputError(f"W2_jk: vectors must lie in R^{n}")
    if not 0 <= m <= n - j - 1:
        raise WeightInputError(f"W2_jk: need 0 <= m <= {n - j - 1}, got {m}")
    q = cm.d - n + j + 1
    phi = _prefix(cm.phi, q, "W2_jk")
    ys = range(cm.d)
    d = cm.d
    A = _grad_rows(R, phi, ys)
    zero = R.const(0)
    top = [[zero] * (j + 1) + r for r in A]
    grads = _grad_rows(R, cm.Phi, ys)
    M = [[None] * d for _ in range(d)]
    for i in range(d):
        for l in range(i, d):
            rows = top + [[R.const(V[b][a]) for b in range(j)] + [R.lift(P.partial(i).partial(l))] + g
                          for a, (P, g) in enumerate(zip(cm.Phi, grads))]
            M[i][l] = M[l][i] = R.det(rows)
    return _bordered(R, A + grads[:m], M)


def _w3(R, cm: ConeMap, ell=None):
    n, d = cm.n, cm.d
    if n <= 2:
        raise WeightInputError("W3 needs target dimension n > 2")
    ell = [1] + [0] * (n - 1) if ell is None else list(ell)
    if len(ell) != n or not any(ell):
        raise WeightInputError(f"W3: ell must be a nonzero covector in R^{n}")
    q2, q3 = d - n + 2, d - n + 3
    phi3 = _prefix(cm.phi, q3, "W3")
    phi2 = phi3[:q2]
    ys = range(d)
    zero = R.const(0)
    D = covector_symbolic(cm, "D")
    Dl = [R.lift(c) for c in D]
    ellPhi = _sum((P.scale(c) for c, P in zip(ell, cm.Phi) if c), MultiPoly.zero(d))
    dPhi = [[R.lift(P.partial(b)) for b in ys] for P in cm.Phi]
    H = [[_sum((Dl[k] * R.lift(cm.Phi[k].partial(a).partial(b)) for k in range(n)), zero) for b in ys] for a in ys]
    A2 = _grad_rows(R, phi2, ys)
    A3 = _grad_rows(R, phi3, ys)

    def inner(middle):
        rows = [[zero] * q3 + r for r in A2]
        rows.append([zero] * q3 + list(middle))
        for a in ys:
            rows.append([A3[c][a] for c in range(q3)] + H[a])
        return R.det(rows)

    detB = inner([R.lift(ellPhi.partial(b)) for b in ys])
    ell_val = R.lift(ellPhi)
    N = [[None] * d for _ in range(d)]
    for i in ys:
        for j in ys:
            d2D = [D[k].partial(i).partial(j) for k in range(n)]
            middle = [_sum((R.lift(d2D[k]) * dPhi[k][b] for k in range(n)), zero) for b in ys]
            N[i][j] = inner(middle) - R.div(H[i][j], ell_val) * detB
    out = _bordered(R, A3, N)
    if R.exact:
        return out if ell_val != 0 else Fraction(0)
    return np.where(np.asarray(ell_val) == 0, 0.0, out)


# --- phase-system weights --------------------------------------------------------

def _rotcurv1(R, ps: PhaseSystem):
    q = ps.d_r - ps.d_l
    phi = _prefix(ps.phi, q, "rotational curvature")
    xs, ys = ps.x_vars, ps.y_vars
    zero = R.const(0)
    rho_x = [ps.rho.partial(i) for i in xs]
    rows = [[zero] * (q + 1) + [R.lift(p) for p in rho_x]]
    for yj in ys:
        rows.append([R.lift(f.partial(yj)) for f in phi] + [R.lift(ps.rho.partial(yj))]
                    + [R.lift(p.partial(yj)) for p in rho_x])
    return R.det(rows)


def _rotcurv2(R, ps: PhaseSystem):
    if ps.d_l > ps.d_r + 1:
        raise WeightInputError("second-order curvature needs d_l <= d_r + 1")
    q = ps.d_r - ps.d_l + 1
    phi = _prefix(ps.phi, q, "second-order curvature")
    xs, ys = ps.x_vars, ps.y_vars
    zero = R.const(0)
    rho_x = [ps.rho.partial(i) for i in xs]
    first = [zero] * (q + 1) + [R.lift(p) for p in rho_x]
    yrows = [[R.lift(f.partial(yj)) for f in phi] + [R.lift(ps.rho.partial(yj))]
             + [R.lift(p.partial(yj)) for p in rho_x] for yj in ys]
    dr = ps.d_r
    M = [[None] * dr for _ in range(dr)]
    for a, yi in enumerate(ys):
        for b in range(a, dr):
            yj = ys[b]
            third = [zero] * (q + 1) + [R.lift(p.partial(yi).partial(yj)) for p in rho_x]
            M[a][b] = M[b][a] = R.det([first, third] + yrows)
    border = [[R.lift(f.partial(yj)) for yj in ys] for f in phi] + [[R.lift(ps.rho.partial(yj)) for yj in ys]]
    return _bordered(R, border, M)


# --- induction step --------------------------------------------------------------

def induced_exponent(alpha, beta, n: int) -> Fraction:
    """Power of |Phi_1| in the induced weight, with alpha, beta the base exponents."""
    alpha, beta = to_fraction(alpha), to_fraction(beta)
    if beta == 0:
        raise WeightInputError("beta must be nonzero")
    if alpha == -1:
        raise WeightInputError("alpha = -1 makes the induced exponent undefined")
    return (Fraction(n * n - 1) * alpha / (n * (alpha + 1)) - 1) * (alpha + 1) / beta


def natural_exponents(base: "WeightFunctional", n: int) -> tuple[Fraction, Fraction]:
    """(alpha, beta) of the geometric estimate satisfied by ``base`` on maps into R^n."""
    if base.kind == "W1":
        return Fraction(n), Fraction(1)
    if base.kind == "W2" or (base.kind == "Induced" and base.params["base"].kind == "W1"):
        return Fraction(n - 2), Fraction(1, n)
    if base.kind == "W3" or (base.kind == "Induced" and base.params["base"].kind in ("W2", "Induced")):
        return Fraction(n * (n - 3), n - 1), Fraction(1, (n - 1) * (n - 2))
    raise WeightInputError(f"no natural exponents known for base kind {base.kind}")


def tilde_map(cm: ConeMap, lam0) -> tuple[ConeMap, MultiPoly]:
    """The lifted map (t, y) -> (lam^(n-1) D-Phi(y), (lam Phi_1 - 1, phi)) with lam = lam0 + t.

    Returns the tilde ConeMap in d+1 variables (t first) and Phi_1.
    """
    d = cm.d
    n = cm.n - 1
    Dm = covector_symbolic(cm, "Dminus")
    nd = d + 1
    pos = list(range(1, nd))
    lam = MultiPoly.variable(0, nd) + to_fraction(lam0)
    lam_pow = lam ** (n - 1)
    Psi = tuple(lam_pow * c.embed(nd, pos) for c in Dm)
    P1 = cm.Phi[0].embed(nd, pos)
    phit = (lam * P1 - 1,) + tuple(p.embed(nd, pos) for p in cm.phi)
    return ConeMap(nd, Psi, phit), cm.Phi[0]


def _induce_at(base: "WeightFunctional", alpha, beta, cm: ConeMap, point):
    """Exact induced weight at a rational point; cm may already be a jet."""
    if cm.n < 2:
        raise WeightInputError("induction needs Phi with at least two components")
    n = cm.n - 1
    if alpha is None or beta is None:
        a0, b0 = natural_exponents(base, n)
        alpha = a0 if alpha is None else alpha
        beta = b0 if beta is None else beta
    e = induced_exponent(alpha, beta, n)
    order = base.order + 1
    with truncation(order):
        jet = cm.recenter(point)
        P1 = jet.Phi[0].constant_term()
        if P1 == 0:
            return Fraction(0)
        tilde, _ = tilde_map(jet, 1 / P1)
        w = base._exact_at_origin(tilde)
    scale = abs(P1)
    if e.denominator == 1:
        return scale ** e.numerator * abs(w)
    return float(scale) ** float(e) * abs(float(w))


# --- WeightFunctional ----------------------------------------------------------------

_CONE_KINDS = ("W1", "W1Partial", "W2", "W2K", "W2JK", "W3", "Induced")
_PHASE_KINDS = ("RotCurv1", "RotCurv2")
_ORDERS = {"RotCurv1": 2, "RotCurv2": 3, "W1": 1, "W1Partial": 1, "W2": 2, "W2K": 2, "W2JK": 2, "W3": 3}


@dataclass(frozen=True)
class WeightFunctional:
    """A weight kind plus its parameters; evaluate against a ConeMap or PhaseSystem.

    Parameters by kind: W1Partial ``V``; W2 ``form`` ("literal"/"covariant");
    W2K ``k``; W2JK ``V``, ``m``; W3 ``ell``; Induced ``base``, ``alpha``, ``beta``
    (None selects the base's natural exponents).
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _CONE_KINDS + _PHASE_KINDS:
            raise WeightInputError(f"unknown weight kind {self.kind!r}")
        params = dict(self.params)
        if self.kind == "Induced":
            base = params.get("base")
            if isinstance(base, dict):
                base = WeightFunctional.from_dict(base)
            if not isinstance(base, WeightFunctional) or base.kind not in _CONE_KINDS:
                raise WeightInputError("Induced needs a ConeMap base weight")
            params["base"] = base
            for key in ("alpha", "beta"):
                if params.get(key) is not None:
                    params[key] = to_fraction(params[key])
            if params.get("beta") == 0:
                raise WeightInputError("beta must be nonzero")
        object.__setattr__(self, "params", params)

    # constructors
    @classmethod
    def induced(cls, base: "WeightFunctional", alpha=None, beta=None) -> "WeightFunctional":
        return cls("Induced", {"base": base, "alpha": alpha, "beta": beta})

    @property
    def order(self) -> int:
        """Highest derivative order of the instance polynomials entering the weight."""
        if self.kind == "Induced":
            return self.params["base"].order + 1
        return _ORDERS[self.kind]

    @property
    def on_phase(self) -> bool:
        return self.kind in _PHASE_KINDS

    def _formula(self) -> Callable:
        k, p = self.kind, self.params
        return {
            "RotCurv1": lambda R, inst: _rotcurv1(R, inst),
            "RotCurv2": lambda R, inst: _rotcurv2(R, inst),
            "W1": lambda R, inst: _w1(R, inst),
            "W1Partial": lambda R, inst: _w1_partial(R, inst, p.get("V", [])),
            "W2": lambda R, inst: _w2(R, inst, p.get("form", "literal")),
            "W2K": lambda R, inst: _w2_k(R, inst, int(p.get("k", 0))),
            "W2JK": lambda R, inst: _w2_jk(R, inst, p.get("V", []), int(p.get("m", 0))),
            "W3": lambda R, inst: _w3(R, inst, p.get("ell")),
        }[k]

    def _check_instance(self, inst):
        if self.on_phase and not isinstance(inst, PhaseSystem):
            raise WeightInputError(f"{self.kind} needs a PhaseSystem")
        if not self.on_phase and not isinstance(inst, ConeMap):
            raise WeightInputError(f"{self.kind} needs a ConeMap")

    def symbolic(self, inst) -> MultiPoly:
        self._check_instance(inst)
        if self.kind in ("W3", "Induced"):
            raise WeightInputError(f"{self.kind} involves quotients or powers and has no polynomial form")
        return self._formula()(SymbolicRing(inst.nvars if isinstance(inst, PhaseSystem) else inst.d), inst)

    def _exact_at_origin(self, jet):
        if self.kind == "Induced":
            p = self.params
            return _induce_at(p["base"], p.get("alpha"), p.get("beta"), jet, [0] * jet.d)
        return self._formula()(PointRing(), jet)

    def exact(self, inst, point):
        """Exact value at a rational point."""
        self._check_instance(inst)
        nv = inst.nvars if isinstance(inst, PhaseSystem) else inst.d
        if len(point) != nv:
            raise WeightInputError(f"point has length {len(point)}, expected {nv}")
        if self.kind == "Induced":
            p = self.params
            return _induce_at(p["base"], p.get("alpha"), p.get("beta"), inst, point)
        with truncation(self.order):
            jet = inst.recenter(point)
            return self._formula()(PointRing(), jet)

    def numeric(self, inst, points) -> np.ndarray:
        """Float values at the rows of an (N, nvars) array."""
        self._check_instance(inst)
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "Induced":
            return np.array([float(self.exact(inst, [Fraction(v) for v in row])) for row in pts])
        out = self._formula()(ArrayRing(pts), inst)
        return np.broadcast_to(np.asarray(out, dtype=float), (pts.shape[0],)).copy()

    def evaluate(self, inst, point, exact: bool | None = None):
        """Scalar at one point or array over rows; exact when all coordinates are rational."""
        arr = np.asarray(point, dtype=object)
        if arr.ndim == 2 or isinstance(point, np.ndarray) and point.ndim == 2:
            return self.numeric(inst, np.asarray(point, dtype=float))
        if exact is None:
            exact = all(isinstance(v, Rational) for v in point)
        if exact:
            return self.exact(inst, [to_fraction(v) for v in point])
        return float(self.numeric(inst, np.asarray(point, dtype=float).reshape(1, -1))[0])

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        params = {}
        for key, v in self.params.items():
            if isinstance(v, WeightFunctional):
                params[key] = v.to_dict()
            elif isinstance(v, Fraction):
                params[key] = str(v)
            elif v is not None:
                params[key] = v
        if params:
            out["params"] = params
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "WeightFunctional":
        return cls(data["kind"], dict(data.get("params", {})))


W1 = WeightFunctional("W1")
W2 = WeightFunctional("W2")


# --- module-level convenience API ---------------------------------------------------

def rotcurv1(ps: PhaseSystem, point, exact: bool | None = None):
    return WeightFunctional("RotCurv1").evaluate(ps, point, exact)


def rotcurv1_symbolic(ps: PhaseSystem) -> MultiPoly:
    return WeightFunctional("RotCurv1").symbolic(ps)


def rotcurv2(ps: PhaseSystem, point, exact: bool | None = None):
    return WeightFunctional("RotCurv2").evaluate(ps, point, exact)


def rotcurv2_symbolic(ps: PhaseSystem) -> MultiPoly:
    return WeightFunctional("RotCurv2").symbolic(ps)


def w1(cm: ConeMap, y, exact: bool | None = None):
    return W1.evaluate(cm, y, exact)


def w1_symbolic(cm: ConeMap) -> MultiPoly:
    return W1.symbolic(cm)


def w1_partial(cm: ConeMap, V, y, exact: bool | None = None):
    return WeightFunctional("W1Partial", {"V": [list(v) for v in V]}).evaluate(cm, y, exact)


def w2(cm: ConeMap, y, exact: bool | None = None, form: str = "literal"):
    return WeightFunctional("W2", {"form": form}).evaluate(cm, y, exact)


def w2_symbolic(cm: ConeMap, form: str = "literal") -> MultiPoly:
    return WeightFunctional("W2", {"form": form}).symbolic(cm)


def w2_k(cm: ConeMap, k: int, y, exact: bool | None = None):
    return WeightFunctional("W2K", {"k": k}).evaluate(cm, y, exact)


def w2_jk(cm: ConeMap, V, m: int, y, exact: bool | None = None):
    return WeightFunctional("W2JK", {"V": [list(v) for v in V], "m": m}).evaluate(cm, y, exact)


def w3(cm: ConeMap, y, ell=None, exact: bool | None = None):
    params = {} if ell is None else {"ell": list(ell)}
    return WeightFunctional("W3", params).evaluate(cm, y, exact)


def induce(W: WeightFunctional, cm: ConeMap, y, alpha=None, beta=None, exact: bool | None = None):
    """Induced weight for maps into R^(n+1) built from a weight W for maps into R^n."""
    return WeightFunctional.induced(W, alpha, beta).evaluate(cm, y, exact)


def _covector_eval(cm: ConeMap, mode: str, y, exact: bool | None):
    arr = np.asarray(y, dtype=object)
    if arr.ndim == 2:
        vals = covector(ArrayRing(np.asarray(y, dtype=float)), cm, mode)
        return np.stack([np.broadcast_to(np.asarray(v, float), (arr.shape[0],)) for v in vals], axis=1)
    if exact is None:
        exact = all(isinstance(v, Rational) for v in y)
    if exact:
        with truncation(1):
            jet = cm.recenter(y)
            return [v for v in covector(PointRing(), jet, mode)]
    vals = covector(ArrayRing(np.asarray(y, dtype=float).reshape(1, -1)), cm, mode)
    return np.array([float(np.asarray(v).reshape(-1)[0]) for v in vals])


def d1_apply(cm: ConeMap, y, exact: bool | None = None):
    """D1 Phi at y: the covector with <D1 Phi, z> = det[[0, d phi], [z, d Phi]]."""
    return _covector_eval(cm, "D1", y, exact)


def dop_apply(cm: ConeMap, mode: str, y, exact: bool | None = None):
    """D Phi (mode 'D') or D- Phi (mode 'Dminus') at y."""
    if mode not in ("D", "Dminus"):
        raise WeightInputError(f"mode must be 'D' or 'Dminus', got {mode!r}")
    return _covector_eval(cm, mode, y, exact)


def pairing(u, v):
    return sum((a * b for a, b in zip(u, v)), 0)
