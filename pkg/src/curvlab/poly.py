"""Sparse multivariate polynomials with exact rational coefficients.

A polynomial is a map from exponent tuples to nonzero ``Fraction`` coefficients.
Values are immutable once built; every operation returns a new object.

Two context managers tune arithmetic for a block of code:

* :func:`degree_cap` bounds the total degree of products (default 40).
* :func:`truncation` drops every product term above a given total degree.  It
  is used for exact local jets: if all inputs are exact up to degree K and no
  more than K derivatives are taken, constant terms stay exact.
"""

from __future__ import annotations

import contextlib
import contextvars
import heapq
import itertools
import math
import re
from fractions import Fraction
from numbers import Integral, Rational
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_DEGREE_CAP = 40

_degree_cap: contextvars.ContextVar[int] = contextvars.ContextVar("degree_cap", default=DEFAULT_DEGREE_CAP)
_truncation: contextvars.ContextVar[int | None] = contextvars.ContextVar("truncation", default=None)


class DegreeOverflowError(ArithmeticError):
    """A product would exceed the configured total-degree cap."""


class PolyParseError(ValueError):
    """Malformed polynomial text."""


@contextlib.contextmanager
def degree_cap(cap: int):
    if cap < 0:
        raise ValueError("degree cap must be nonnegative")
    token = _degree_cap.set(int(cap))
    try:
        yield
    finally:
        _degree_cap.reset(token)


@contextlib.contextmanager
def truncation(order: int | None):
    """Truncate all polynomial products to total degree <= order inside the block."""
    if order is not None and order < 0:
        raise ValueError("truncation order must be nonnegative")
    token = _truncation.set(order)
    try:
        yield
    finally:
        _truncation.reset(token)


def current_truncation() -> int | None:
    return _truncation.get()


def to_fraction(c) -> Fraction:
    """Exact conversion of ints, rationals, floats and strings like '3/2'."""
    if isinstance(c, Fraction):
        return c
    if isinstance(c, bool):
        return Fraction(int(c))
    if isinstance(c, Integral):
        return Fraction(int(c))
    if isinstance(c, Rational):
        return Fraction(c.numerator, c.denominator)
    if isinstance(c, (float, np.floating)):
        if not math.isfinite(float(c)):
            raise ValueError(f"non-finite coefficient {c!r}")
        return Fraction(float(c))
    if isinstance(c, str):
        return Fraction(c.strip())
    try:
        # gmpy2.mpq and similar expose numerator/denominator
        return Fraction(int(c.numerator), int(c.denominator))
    except AttributeError:
        raise TypeError(f"cannot convert {type(c).__name__} to an exact rational") from None


def _is_exact(v) -> bool:
    return isinstance(v, (Integral, Rational))


class MultiPoly:
    """Exact sparse polynomial in ``nvars`` variables."""

    __slots__ = ("nvars", "_terms", "_hash")

    def __init__(self, nvars: int, terms: Mapping[Sequence[int], object] | None = None):
        if nvars < 0:
            raise ValueError("nvars must be nonnegative")
        clean: dict[tuple[int, ...], Fraction] = {}
        for exp, c in (terms or {}).items():
            e = tuple(int(a) for a in exp)
            if len(e) != nvars:
                raise ValueError(f"exponent {e} has length {len(e)}, expected {nvars}")
            if any(a < 0 for a in e):
                raise ValueError(f"negative exponent in {e}")
            q = to_fraction(c)
            if q:
                clean[e] = clean.get(e, Fraction(0)) + q
                if not clean[e]:
                    del clean[e]
        self.nvars = nvars
        self._terms = clean
        self._hash = None

    @classmethod
    def _raw(cls, nvars: int, terms: dict) -> "MultiPoly":
        # trusted constructor: keys already tuples of the right length, values nonzero Fractions
        obj = cls.__new__(cls)
        obj.nvars = nvars
        obj._terms = terms
        obj._hash = None
        return obj

    # construction helpers
    @classmethod
    def zero(cls, nvars: int) -> "MultiPoly":
        return cls._raw(nvars, {})

    @classmethod
    def constant(cls, c, nvars: int) -> "MultiPoly":
        q = to_fraction(c)
        return cls._raw(nvars, {(0,) * nvars: q} if q else {})

    @classmethod
    def variable(cls, i: int, nvars: int) -> "MultiPoly":
        if not 0 <= i < nvars:
            raise IndexError(f"variable index {i} out of range for {nvars} variables")
        e = [0] * nvars
        e[i] = 1
        return cls._raw(nvars, {tuple(e): Fraction(1)})

    @classmethod
    def variables(cls, nvars: int) -> list["MultiPoly"]:
        return [cls.variable(i, nvars) for i in range(nvars)]

    @classmethod
    def linear(cls, coeffs: Sequence, const=0) -> "MultiPoly":
        """c_1 x_1 + ... + c_n x_n + const."""
        n = len(coeffs)
        terms = {}
        for i, c in enumerate(coeffs):
            e = [0] * n
            e[i] = 1
            terms[tuple(e)] = c
        terms[(0,) * n] = const
        return cls(n, terms)

    # basic queries
    @property
    def terms(self) -> dict[tuple[int, ...], Fraction]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def __len__(self) -> int:
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def __bool__(self) -> bool:
        return bool(self._terms)

    @property
    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        return max((sum(e) for e in self._terms), default=-1)

    def constant_term(self) -> Fraction:
        return self._terms.get((0,) * self.nvars, Fraction(0))

    def coefficient(self, exp: Sequence[int]) -> Fraction:
        return self._terms.get(tuple(exp), Fraction(0))

    def is_constant(self) -> bool:
        return all(not any(e) for e in self._terms)

    # arithmetic
    def _coerce(self, other) -> "MultiPoly":
        if isinstance(other, MultiPoly):
            if other.nvars != self.nvars:
                raise ValueError(f"variable count mismatch: {self.nvars} vs {other.nvars}")
            return other
        return MultiPoly.constant(other, self.nvars)

    def __add__(self, other):
        if not isinstance(other, MultiPoly) and not _scalar_like(other):
            return NotImplemented
        other = self._coerce(other)
        out = dict(self._terms)
        for e, c in other._terms.items():
            v = out.get(e)
            if v is None:
                out[e] = c
            else:
                v = v + c
                if v:
                    out[e] = v
                else:
                    del out[e]
        return MultiPoly._raw(self.nvars, out)

    __radd__ = __add__

    def __neg__(self):
        return MultiPoly._raw(self.nvars, {e: -c for e, c in self._terms.items()})

    def __pos__(self):
        return self

    def __sub__(self, other):
        if not isinstance(other, MultiPoly) and not _scalar_like(other):
            return NotImplemented
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        if not _scalar_like(other):
            return NotImplemented
        return (-self) + other

    def scale(self, c) -> "MultiPoly":
        q = to_fraction(c)
        if not q:
            return MultiPoly.zero(self.nvars)
        return MultiPoly._raw(self.nvars, {e: v * q for e, v in self._terms.items()})

    def __mul__(self, other):
        if isinstance(other, MultiPoly):
            return self._mul_poly(other)
        if _scalar_like(other):
            return self.scale(other)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, MultiPoly):
            if other.is_constant() and other:
                return self.scale(1 / other.constant_term())
            raise ZeroDivisionError("division by a non-constant polynomial; use exact_div")
        q = to_fraction(other)
        if not q:
            raise ZeroDivisionError("polynomial division by zero")
        return self.scale(1 / q)

    def _mul_poly(self, other: "MultiPoly") -> "MultiPoly":
        if other.nvars != self.nvars:
            raise ValueError(f"variable count mismatch: {self.nvars} vs {other.nvars}")
        if not self._terms or not other._terms:
            return MultiPoly.zero(self.nvars)
        trunc = _truncation.get()
        if trunc is None:
            deg = self.degree + other.degree
            cap = _degree_cap.get()
            if deg > cap:
                raise DegreeOverflowError(f"product degree {deg} exceeds cap {cap}")
            a_items = list(self._terms.items())
            b_items = list(other._terms.items())
            out: dict = {}
            for e1, c1 in a_items:
                for e2, c2 in b_items:
                    e = tuple(x + y for x, y in zip(e1, e2))
                    v = out.get(e)
                    out[e] = c1 * c2 if v is None else v + c1 * c2
        else:
            a_items = [(e, c, sum(e)) for e, c in self._terms.items()]
            b_items = sorted(((e, c, sum(e)) for e, c in other._terms.items()), key=lambda t: t[2])
            out = {}
            for e1, c1, d1 in a_items:
                room = trunc - d1
                if room < 0:
                    continue
                for e2, c2, d2 in b_items:
                    if d2 > room:
                        break
                    e = tuple(x + y for x, y in zip(e1, e2))
                    v = out.get(e)
                    out[e] = c1 * c2 if v is None else v + c1 * c2
        return MultiPoly._raw(self.nvars, {e: c for e, c in out.items() if c})

    def __pow__(self, k: int):
        if not isinstance(k, Integral) or k < 0:
            raise ValueError("only nonnegative integer powers are supported")
        result = MultiPoly.constant(1, self.nvars)
        base = self
        k = int(k)
        while k:
            if k & 1:
                result = result * base
            k >>= 1
            if k:
                base = base * base
        return result

    def __eq__(self, other):
        if isinstance(other, MultiPoly):
            return self.nvars == other.nvars and self._terms == other._terms
        if _scalar_like(other):
            try:
                q = to_fraction(other)
            except (TypeError, ValueError):
                return False
            return self._terms == ({(0,) * self.nvars: q} if q else {})
        return NotImplemented

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.nvars, frozenset(self._terms.items())))
        return self._hash

    # calculus
    def partial(self, i: int) -> "MultiPoly":
        if not 0 <= i < self.nvars:
            raise IndexError(f"variable index {i} out of range for {self.nvars} variables")
        out = {}
        for e, c in self._terms.items():
            a = e[i]
            if a:
                ne = e[:i] + (a - 1,) + e[i + 1:]
                out[ne] = c * a
        return MultiPoly._raw(self.nvars, out)

    def gradient(self) -> list["MultiPoly"]:
        return [self.partial(i) for i in range(self.nvars)]

    def derivative(self, multi_index: Iterable[int]) -> "MultiPoly":
        p = self
        for i in multi_index:
            p = p.partial(i)
        return p

    # evaluation
    def eval(self, point: Sequence):
        """Value at ``point``: exact when every coordinate is rational, else a float."""
        if len(point) != self.nvars:
            raise ValueError(f"point has length {len(point)}, expected {self.nvars}")
        if all(_is_exact(v) for v in point):
            pt = [to_fraction(v) for v in point]
            total = Fraction(0)
            for e, c in self._terms.items():
                t = c
                for v, a in zip(pt, e):
                    if a:
                        t *= v ** a
                total += t
            return total
        pt = [float(v) for v in point]
        parts = []
        for e, c in self._terms.items():
            t = float(c)
            for v, a in zip(pt, e):
                if a:
                    t *= v ** a
            parts.append(t)
        return math.fsum(parts)

    __call__ = eval

    def eval_many(self, points: np.ndarray) -> np.ndarray:
        """Float values at each row of an (N, nvars) array."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(1, -1)
        if pts.shape[1] != self.nvars:
            raise ValueError(f"points have {pts.shape[1]} columns, expected {self.nvars}")
        out = np.zeros(pts.shape[0])
        if not self._terms:
            return out
        cache: dict[tuple[int, int], np.ndarray] = {}
        for e, c in self._terms.items():
            t = np.full(pts.shape[0], float(c))
            for i, a in enumerate(e):
                if a:
                    key = (i, a)
                    pw = cache.get(key)
                    if pw is None:
                        pw = pts[:, i] ** a
                        cache[key] = pw
                    t = t * pw
            out += t
        return out

    # substitution
    def compose(self, polys: Sequence["MultiPoly"]) -> "MultiPoly":
        """p(q_1, ..., q_nvars); all q share one variable count."""
        if len(polys) != self.nvars:
            raise ValueError(f"need {self.nvars} substitutions, got {len(polys)}")
        if self.nvars == 0:
            raise ValueError("cannot infer target variable count for a 0-variable polynomial")
        m = polys[0].nvars
        if any(q.nvars != m for q in polys):
            raise ValueError("substituted polynomials must share a variable count")
        powers: dict[tuple[int, int], MultiPoly] = {}

        def power(i, a):
            key = (i, a)
            if key not in powers:
                powers[key] = polys[i] ** a
            return powers[key]

        result = MultiPoly.zero(m)
        for e, c in self._terms.items():
            t = MultiPoly.constant(c, m)
            for i, a in enumerate(e):
                if a:
                    t = t * power(i, a)
            result = result + t
        return result

    def compose_affine(self, A, b=None) -> "MultiPoly":
        """p(A x + b) with A square of size nvars; entries converted exactly."""
        n = self.nvars
        A = [[to_fraction(v) for v in row] for row in _as_rows(A)]
        if len(A) != n or any(len(r) != n for r in A):
            raise ValueError(f"A must be {n}x{n}")
        b = [Fraction(0)] * n if b is None else [to_fraction(v) for v in b]
        if len(b) != n:
            raise ValueError(f"b must have length {n}")
        subs = [MultiPoly.linear(A[i], b[i]) for i in range(n)]
        return self.compose(subs)

    def shift(self, point: Sequence) -> "MultiPoly":
        """p(y + point), expanded; respects the active truncation."""
        n = self.nvars
        if len(point) != n:
            raise ValueError(f"point has length {len(point)}, expected {n}")
        pt = [to_fraction(v) for v in point]
        trunc = _truncation.get()
        out: dict = {}
        for e, c in self._terms.items():
            # expand prod_i (y_i + p_i)^{a_i} by binomials
            factors = []
            for i, a in enumerate(e):
                factors.append([(j, math.comb(a, j) * pt[i] ** (a - j)) for j in range(a + 1) if pt[i] or j == a])
            for combo in itertools.product(*factors):
                deg = sum(j for j, _ in combo)
                if trunc is not None and deg > trunc:
                    continue
                coef = c
                for _, w in combo:
                    coef *= w
                if coef:
                    ne = tuple(j for j, _ in combo)
                    out[ne] = out.get(ne, Fraction(0)) + coef
        return MultiPoly._raw(n, {k: v for k, v in out.items() if v})

    def truncate(self, order: int) -> "MultiPoly":
        return MultiPoly._raw(self.nvars, {e: c for e, c in self._terms.items() if sum(e) <= order})

    def fix(self, values: Mapping[int, object]) -> "MultiPoly":
        """Substitute constants for some variables and drop them."""
        keep = [i for i in range(self.nvars) if i not in values]
        vals = {i: to_fraction(v) for i, v in values.items()}
        out: dict = {}
        for e, c in self._terms.items():
            coef = c
            for i, v in vals.items():
                if e[i]:
                    coef *= v ** e[i]
            if coef:
                ne = tuple(e[i] for i in keep)
                out[ne] = out.get(ne, Fraction(0)) + coef
        return MultiPoly._raw(len(keep), {k: v for k, v in out.items() if v})

    def embed(self, nvars: int, positions: Sequence[int]) -> "MultiPoly":
        """Re-index variable i as variable positions[i] of a larger ring."""
        if len(positions) != self.nvars:
            raise ValueError("positions must list one target index per variable")
        out = {}
        for e, c in self._terms.items():
            ne = [0] * nvars
            for i, a in enumerate(e):
                ne[positions[i]] += a
            out[tuple(ne)] = c
        return MultiPoly._raw(nvars, out)

    def exact_div(self, other: "MultiPoly") -> "MultiPoly":
        """Quotient of an exact division; raises ValueError if other does not divide self."""
        other = self._coerce(other)
        if other.is_zero():
            raise ZeroDivisionError("division by the zero polynomial")
        lead_e, lead_c = max(other._terms.items(), key=lambda t: _grlex_key(t[0]))
        tail = [(e, c) for e, c in other._terms.items() if e != lead_e]
        rem = dict(self._terms)
        heap = [_heap_key(e) for e in rem]
        heapq.heapify(heap)
        quot: dict = {}
        while heap:
            e = _heap_exp(heapq.heappop(heap))
            c = rem.pop(e, None)
            if c is None:
                continue
            diff = tuple(a - b for a, b in zip(e, lead_e))
            if any(a < 0 for a in diff):
                raise ValueError("polynomial division is not exact")
            q = c / lead_c
            quot[diff] = q
            # every tail term lands strictly below e in graded-lex order
            for e2, c2 in tail:
                ne = tuple(a + b for a, b in zip(diff, e2))
                v = rem.get(ne)
                if v is None:
                    rem[ne] = -q * c2
                    heapq.heappush(heap, _heap_key(ne))
                else:
                    v = v - q * c2
                    if v:
                        rem[ne] = v
                    else:
                        del rem[ne]
        return MultiPoly._raw(self.nvars, quot)

    # text form
    def to_string(self, names: Sequence[str] | None = None) -> str:
        if not self._terms:
            return "0"
        names = list(names) if names is not None else [f"x{i + 1}" for i in range(self.nvars)]
        parts = []
        for e in sorted(self._terms, key=_grlex_key, reverse=True):
            c = self._terms[e]
            mono = " ".join(
                names[i] if a == 1 else f"{names[i]}^{a}" for i, a in enumerate(e) if a
            )
            parts.append(f"{c}" if not mono else f"{c} * {mono}")
        return " + ".join(parts)

    def __str__(self):
        return self.to_string()

    def __repr__(self):
        return f"MultiPoly({self.nvars}, '{self.to_string()}')"

    @classmethod
    def parse(cls, text: str, nvars: int | None = None, names: Sequence[str] | None = None) -> "MultiPoly":
        return parse_poly(text, nvars=nvars, names=names)


def _scalar_like(v) -> bool:
    return isinstance(v, (Integral, Rational, float, np.floating, np.integer))


def _grlex_key(e):
    return (sum(e), e)


def _heap_key(e):
    # min-heap key whose smallest element is the graded-lex largest exponent
    return (-sum(e), tuple(-a for a in e))


def _heap_exp(k):
    return tuple(-a for a in k[1])


def _as_rows(A):
    if isinstance(A, np.ndarray):
        return A.tolist()
    return [list(r) for r in A]


# --- parsing -----------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<pow>\*\*|\^)|(?P<op>[-+*/()]))"
)


def _tokenize(text: str):
    pos = 0
    tokens = []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise PolyParseError(f"unexpected character {text[pos:].lstrip()[:1]!r} at offset {pos}")
        pos = m.end()
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
    return tokens


def parse_poly(text: str, nvars: int | None = None, names: Sequence[str] | None = None) -> MultiPoly:
    """Parse sums/products/powers of rationals and variables.

    Default variable names are ``x1 .. xN``; juxtaposition multiplies, so the
    canonical form ``3/2 * x1^2 x3 + -1 * x2`` round-trips.
    """
    if not isinstance(text, str):
        raise PolyParseError("polynomial text must be a string")
    tokens = _tokenize(text)
    if not tokens:
        raise PolyParseError("empty polynomial text")
    if names is not None:
        index = {nm: i for i, nm in enumerate(names)}
        nv = len(names)
        if nvars is not None and nvars != nv:
            raise PolyParseError("nvars disagrees with the supplied variable names")
    else:
        index = None
        found = [int(v[1:]) for k, v, _ in tokens if k == "name" and re.fullmatch(r"x[1-9]\d*", v)]
        nv = nvars if nvars is not None else max(found, default=0)
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else (None, None, len(text))

    def take():
        nonlocal pos
        tok = peek()
        pos += 1
        return tok

    def var_index(name, at):
        if index is not None:
            if name not in index:
                raise PolyParseError(f"unknown variable {name!r} at offset {at}")
            return index[name]
        m = re.fullmatch(r"x([1-9]\d*)", name)
        if not m:
            raise PolyParseError(f"unknown variable {name!r} at offset {at}; expected x1, x2, ...")
        i = int(m.group(1)) - 1
        if i >= nv:
            raise PolyParseError(f"variable {name!r} exceeds the declared {nv} variables")
        return i

    def expr():
        left = term()
        while peek()[0] == "op" and peek()[1] in "+-":
            op = take()[1]
            right = term()
            left = left + right if op == "+" else left - right
        return left

    def starts_factor(tok):
        kind, val, _ = tok
        return kind in ("num", "name") or (kind == "op" and val == "(")

    def term():
        left = unary()
        while True:
            kind, val, at = peek()
            if kind == "op" and val == "*":
                take()
                left = left * unary()
            elif kind == "op" and val == "/":
                take()
                right = unary()
                if not right.is_constant() or right.is_zero():
                    raise PolyParseError(f"division by a non-constant or zero expression at offset {at}")
                left = left / right.constant_term()
            elif kind is not None and starts_factor(peek()):
                left = left * unary()
            else:
                return left

    def unary():
        kind, val, _ = peek()
        if kind == "op" and val in "+-":
            take()
            inner = unary()
            return -inner if val == "-" else inner
        return power()

    def power():
        base = atom()
        if peek()[0] == "pow":
            take()
            kind, val, at = take()
            if kind != "num" or not val.isdigit():
                raise PolyParseError(f"exponent must be a nonnegative integer at offset {at}")
            base = base ** int(val)
        return base

    def atom():
        kind, val, at = take()
        if kind == "num":
            return MultiPoly.constant(Fraction(val), nv)
        if kind == "name":
            return MultiPoly.variable(var_index(val, at), nv)
        if kind == "op" and val == "(":
            inner = expr()
            k2, v2, a2 = take()
            if k2 != "op" or v2 != ")":
                raise PolyParseError(f"expected ')' at offset {a2}")
            return inner
        raise PolyParseError(f"unexpected token {val!r} at offset {at}")

    result = expr()
    if pos != len(tokens):
        raise PolyParseError(f"trailing input at offset {tokens[pos][2]}")
    return result


# --- matrices and determinants -------------------------------------------------

class PolyMatrix:
    """Rectangular matrix of MultiPoly entries sharing one variable count."""

    __slots__ = ("rows", "nrows", "ncols", "nvars")

    def __init__(self, entries: Sequence[Sequence], nvars: int | None = None):
        rows = [list(r) for r in entries]
        if not rows:
            raise ValueError("empty matrix")
        ncols = len(rows[0])
        if any(len(r) != ncols for r in rows):
            raise ValueError("matrix rows have unequal lengths")
        if nvars is None:
            polys = [e for r in rows for e in r if isinstance(e, MultiPoly)]
            if not polys:
                raise ValueError("cannot infer nvars from a matrix of scalars")
            nvars = polys[0].nvars
        conv = []
        for r in rows:
            cr = []
            for e in r:
                if isinstance(e, MultiPoly):
                    if e.nvars != nvars:
                        raise ValueError("matrix entries have inconsistent variable counts")
                    cr.append(e)
                else:
                    cr.append(MultiPoly.constant(e, nvars))
            conv.append(tuple(cr))
        self.rows = tuple(conv)
        self.nrows = len(conv)
        self.ncols = ncols
        self.nvars = nvars

    def __getitem__(self, idx):
        i, j = idx
        return self.rows[i][j]

    def evaluate(self, point) -> list[list]:
        return [[e.eval(point) for e in r] for r in self.rows]

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty((pts.shape[0], self.nrows, self.ncols))
        for i, r in enumerate(self.rows):
            for j, e in enumerate(r):
                out[:, i, j] = e.eval_many(pts)
        return out

    def det(self) -> MultiPoly:
        return polydet(self)


def polydet(M: PolyMatrix | Sequence[Sequence], nvars: int | None = None) -> MultiPoly:
    """Exact determinant.

    Cofactor expansion below 4x4, fraction-free (Bareiss) elimination from 4x4
    up.  Inside a :func:`truncation` block a division-free expansion over row
    subsets is used instead, since truncated rings have no exact division.
    """
    if not isinstance(M, PolyMatrix):
        M = PolyMatrix(M, nvars)
    if M.nrows != M.ncols:
        raise ValueError(f"determinant of a non-square {M.nrows}x{M.ncols} matrix")
    rows = [list(r) for r in M.rows]
    n = M.nrows
    if _truncation.get() is not None:
        return _det_subsets(rows, M.nvars)
    if n < 4:
        return _det_cofactor(rows, M.nvars)
    return _det_bareiss(rows, M.nvars)


def _det_cofactor(rows, nvars):
    n = len(rows)
    if n == 1:
        return rows[0][0]
    if n == 2:
        return rows[0][0] * rows[1][1] - rows[0][1] * rows[1][0]
    total = MultiPoly.zero(nvars)
    for j in range(n):
        a = rows[0][j]
        if a.is_zero():
            continue
        minor = [r[:j] + r[j + 1:] for r in rows[1:]]
        sub = _det_cofactor(minor, nvars)
        total = total + a * sub if j % 2 == 0 else total - a * sub
    return total


def _det_bareiss(rows, nvars):
    n = len(rows)
    a = [list(r) for r in rows]
    sign = 1
    prev = MultiPoly.constant(1, nvars)
    for k in range(n - 1):
        if a[k][k].is_zero():
            swap = next((i for i in range(k + 1, n) if not a[i][k].is_zero()), None)
            if swap is None:
                return MultiPoly.zero(nvars)
            a[k], a[swap] = a[swap], a[k]
            sign = -sign
        piv = a[k][k]
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                num = piv * a[i][j] - a[i][k] * a[k][j]
                a[i][j] = num if k == 0 else num.exact_div(prev)
            a[i][k] = MultiPoly.zero(nvars)
        prev = piv
    d = a[n - 1][n - 1]
    return d if sign > 0 else -d


def _det_subsets(rows, nvars):
    # Expand along columns left to right; minors indexed by the set of rows used.
    n = len(rows)
    if n == 0:
        return MultiPoly.constant(1, nvars)
    prev = {(): MultiPoly.constant(1, nvars)}
    for col in range(n):
        cur: dict = {}
        for used, val in prev.items():
            if val.is_zero():
                continue
            for r in range(n):
                if r in used:
                    continue
                entry = rows[r][col]
                if entry.is_zero():
                    continue
                # sign: number of used rows with index greater than r
                s = sum(1 for u in used if u > r)
                key = tuple(sorted(used + (r,)))
                term = val * entry
                if s % 2:
                    term = -term
                cur[key] = cur[key] + term if key in cur else term
        prev = cur
        if not prev:
            return MultiPoly.zero(nvars)
    return prev.get(tuple(range(n)), MultiPoly.zero(nvars))


def det_fraction(rows: Sequence[Sequence]) -> Fraction:
    """Exact determinant of a rational matrix by Gaussian elimination."""
    a = [[to_fraction(v) for v in r] for r in rows]
    n = len(a)
    if any(len(r) != n for r in a):
        raise ValueError("determinant of a non-square matrix")
    det = Fraction(1)
    for k in range(n):
        piv = next((i for i in range(k, n) if a[i][k]), None)
        if piv is None:
            return Fraction(0)
        if piv != k:
            a[k], a[piv] = a[piv], a[k]
            det = -det
        p = a[k][k]
        det *= p
        for i in range(k + 1, n):
            f = a[i][k]
            if f:
                f = f / p
                ri, rk = a[i], a[k]
                for j in range(k + 1, n):
                    if rk[j]:
                        ri[j] -= f * rk[j]
    return det


def jacobian(polys: Sequence[MultiPoly], variables: Sequence[int] | None = None) -> list[list[MultiPoly]]:
    """Rows of partial derivatives, one row per polynomial."""
    if not polys:
        return []
    cols = range(polys[0].nvars) if variables is None else variables
    return [[p.partial(j) for j in cols] for p in polys]
