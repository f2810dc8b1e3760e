"""Identity oracles and inequality checkers producing pass/fail reports."""

from __future__ import annotations

import hashlib
import json
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .integrate import (
    IntegralEstimate,
    Region,
    as_function,
    image_measure,
    integrate,
    lp_norm,
    oberlin_scan,
    resolve_threads,
    width_L,
    width_R,
)
from .linalg import complete_square
from .poly import MultiPoly, det_fraction, to_fraction
from .weights import (
    ArrayRing,
    ConeMap,
    PhaseSystem,
    WeightFunctional,
    _w1,
    d1_apply,
    dop_apply,
    induce,
    pairing,
    rotcurv1_symbolic,
    w1,
    w2,
    w3,
)


class VerifyInputError(ValueError):
    """Shape or domain violation in a checker's input."""


class HypothesisError(VerifyInputError):
    """A theorem's hypothesis fails for the requested dimensions or parameters."""


# --- exponents -------------------------------------------------------------------------

@dataclass(frozen=True)
class ExponentSet:
    """Exponents of the specialized sublevel inequalities; all exact rationals.

    p, q are the Lebesgue exponents on f and g; p_prime is the f-exponent of the
    single-weight estimate at the given s (None when s was not supplied).
    """

    d_l: int
    k: int
    m: int
    d_eff: int
    s_bar: Fraction
    alpha: Fraction
    p: Fraction
    q: Fraction
    p_prime: Fraction | None = None
    s: Fraction | None = None

    def invariants(self) -> dict[str, bool]:
        out = {
            "d_eff": self.d_eff == self.d_l - self.k,
            "s_bar": self.s_bar == Fraction((self.d_eff - self.m - 2) * self.d_eff, self.d_eff - self.m),
            "s_bar_alt": self.s_bar == self.d_eff - 2 - Fraction(2 * self.m, self.d_eff - self.m),
            "alpha": self.alpha == 1 / ((self.d_eff - self.m) * (self.s_bar + 1)),
            "q": 1 / self.q == self.s_bar / (self.s_bar + 1),
            "p": 1 / self.p == 1 - self.s_bar / (self.d_eff * (self.s_bar + 1)),
        }
        if self.p_prime is not None:
            out["p_prime"] = 1 / self.p_prime == 1 - Fraction(1, self.d_l) * self.s / (self.s + 1)
        return out

    def to_dict(self) -> dict:
        return {k: (str(v) if isinstance(v, Fraction) else v) for k, v in self.__dict__.items()}


def exponents(d_l: int, k: int = 0, m: int = 0, s=None) -> ExponentSet:
    if d_l < 1 or k < 0 or m < 0:
        raise VerifyInputError("need d_l >= 1 and k, m >= 0")
    d_eff = d_l - k
    if d_eff - m <= 0:
        raise HypothesisError(f"d_eff - m must be positive (d_eff={d_eff}, m={m})")
    s_bar = Fraction((d_eff - m - 2) * d_eff, d_eff - m)
    if s_bar <= 0:
        raise HypothesisError(f"s_bar = {s_bar} must be positive, i.e. d_eff - m > 2")
    alpha = 1 / ((d_eff - m) * (s_bar + 1))
    q = (s_bar + 1) / s_bar
    p = 1 / (1 - s_bar / (d_eff * (s_bar + 1)))
    p_prime = None
    if s is not None:
        s = to_fraction(s)
        if s <= 0:
            raise HypothesisError("s must be positive")
        p_prime = 1 / (1 - Fraction(1, d_l) * s / (s + 1))
    return ExponentSet(d_l, k, m, d_eff, s_bar, alpha, p, q, p_prime, s)


def greenleaf_seeger_exponents(d: int) -> dict[str, Fraction]:
    """Lorentz exponents (source, target) and the power of beta in the fold estimate."""
    if d < 2:
        raise HypothesisError("the fold estimate needs d >= 2")
    return {
        "source": Fraction(d, d - 1),
        "target": Fraction(d * d, d - 1),
        "beta_power": Fraction(-1, 2 * d * d),
    }


def theorem_exponents(which: int, d_l: int) -> dict[str, Fraction]:
    """Weight power, width exponents and norm exponents of the two sharpened inequalities."""
    if which == 1:
        return {
            "weight": Fraction(1, d_l + 1),
            "rho_L": Fraction(d_l, d_l + 1),
            "rho_R": Fraction(1, d_l + 1),
            "phi_R": Fraction(1, d_l + 1),
            "p": Fraction(d_l + 1, d_l),
            "q": Fraction(d_l + 1, d_l),
        }
    if which == 2:
        if d_l <= 2:
            raise HypothesisError("the second inequality needs d_l >= 3 (g-exponent (d_l-1)/(d_l-2))")
        return {
            "weight": Fraction(1, d_l * (d_l - 1)),
            "rho_L": Fraction(d_l - 2, d_l - 1),
            "rho_R": Fraction(1, d_l - 1),
            "phi_R": Fraction(1, d_l - 1),
            "p": Fraction(d_l * (d_l - 1), d_l * d_l - 2 * d_l + 2),
            "q": Fraction(d_l - 1, d_l - 2),
        }
    raise VerifyInputError("which must be 1 or 2")


# --- reports ---------------------------------------------------------------------------

@dataclass
class Factor:
    name: str
    value: float
    exponent: Fraction
    std_error: float = 0.0

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "std_error": self.std_error,
                "exponent": str(self.exponent)}


@dataclass
class InequalityReport:
    name: str
    lhs: IntegralEstimate
    rhs_factors: list[Factor]
    ratio: float
    fingerprint: str
    passed: bool
    seed: int = 0
    ratio_cap: float = math.inf
    applicable: bool = True
    notes: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def rhs(self) -> float:
        return _rhs_product(self.rhs_factors)

    def ratio_std_error(self) -> float:
        """Combined relative error of the ratio by first-order propagation."""
        if not self.lhs.value or not math.isfinite(self.ratio):
            return 0.0
        rel = (self.lhs.std_error / self.lhs.value) ** 2
        for f in self.rhs_factors:
            if f.value:
                rel += (float(f.exponent) * f.std_error / f.value) ** 2
        return abs(self.ratio) * math.sqrt(rel)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "inputs_fingerprint": self.fingerprint,
            "lhs": self.lhs.to_dict(),
            "rhs_factors": [f.to_dict() for f in self.rhs_factors],
            "ratio": self.ratio if math.isfinite(self.ratio) else None,
            "ratio_std_error": self.ratio_std_error(),
            "ratio_cap": self.ratio_cap if math.isfinite(self.ratio_cap) else None,
            "pass": self.passed,
            "applicable": self.applicable,
            "seed": self.seed,
            "notes": list(self.notes),
        }


def _rhs_product(factors: Sequence[Factor]) -> float:
    out = 1.0
    for f in factors:
        out *= f.value ** float(f.exponent) if f.value > 0 else (0.0 if f.exponent > 0 else 1.0)
    return out


def fingerprint(config: Mapping[str, Any]) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _make_report(name, lhs, factors, config, seed, ratio_cap, notes=(), applicable=True) -> InequalityReport:
    rhs = _rhs_product(factors)
    if lhs.value == 0:
        ratio = 0.0
    elif rhs > 0:
        ratio = lhs.value / rhs
    else:
        ratio = math.inf
    passed = bool(applicable and ratio <= ratio_cap)
    return InequalityReport(name, lhs, list(factors), ratio, fingerprint(config), passed, seed, ratio_cap,
                            applicable, list(notes), dict(config))


def load_frozen() -> dict:
    """Reference ratios fixed by oracle runs (package data)."""
    text = resources.files("curvlab").joinpath("data/frozen_ratios.json").read_text()
    return json.loads(text)


# --- exact identities ------------------------------------------------------------------

@dataclass(frozen=True)
class IdentityResult:
    passed: bool
    lhs: Any
    rhs: Any

    def __bool__(self):
        return self.passed


def _detred_shapes(B, A, ells, ys):
    ys = [[to_fraction(v) for v in y] for y in ys]
    d = len(ys)
    if d == 0:
        raise VerifyInputError("need at least one y-vector")
    n = len(ys[0])
    if any(len(y) != n for y in ys):
        raise VerifyInputError("y-vectors must share a length")
    if d < n - 1:
        raise VerifyInputError(f"need d >= n-1, got d={d}, n={n}")
    if len(B) != d or any(len(b) != d - n + 1 for b in B):
        raise VerifyInputError(f"B must be {d} columns of length {d - n + 1}")
    k = len(ells) + 1
    if k <= n:
        raise VerifyInputError(f"need k > n (k={k}, n={n}); A-rows would be empty")
    if len(A) != k - 1 or any(len(a) != k - n for a in A):
        raise VerifyInputError(f"A must be {k - 1} rows of length {k - n}")
    if any(len(l) != n for l in ells):
        raise VerifyInputError(f"each functional must have length {n}")
    B = [[to_fraction(v) for v in b] for b in B]
    A = [[to_fraction(v) for v in a] for a in A]
    ells = [[to_fraction(v) for v in l] for l in ells]
    return B, A, ells, ys, n, d, k


def detred_sign(n: int, d: int, k: int) -> int:
    """Sign relating the two determinants: (-1)^((k-n)(d-n) + d-n+1).

    It differs from (-1)^(k-n) exactly when d - n and k - n are both even.
    """
    return (-1) ** ((k - n) * (d - n) + d - n + 1)


def detred_sides(B, A, ells, ys, sign: str = "corrected") -> tuple[Fraction, Fraction]:
    """Both sides of the determinant reduction for l_1 defined from B and the y-vectors.

    ``sign='corrected'`` uses ``detred_sign``; ``sign='literal'`` uses (-1)^(k-n).
    """
    B, A, ells, ys, n, d, k = _detred_shapes(B, A, ells, ys)
    r = d - n + 1
    ell1 = []
    for j in range(n):
        top = [[Fraction(0)] + [B[c][i] for c in range(d)] for i in range(r)]
        bottom = [[Fraction(int(i == j))] + [ys[c][i] for c in range(d)] for i in range(n)]
        ell1.append(det_fraction(top + bottom))
    lhs_rows = [[Fraction(0)] * (k - n) + ell1]
    lhs_rows += [A[i] + ells[i] for i in range(k - 1)]
    lhs = det_fraction(lhs_rows)
    rhs_rows = [[Fraction(0)] * (k - n) + [B[c][i] for c in range(d)] for i in range(r)]
    rhs_rows += [A[i] + [sum(a * b for a, b in zip(ells[i], ys[c])) for c in range(d)] for i in range(k - 1)]
    if sign not in ("corrected", "literal"):
        raise VerifyInputError("sign must be 'corrected' or 'literal'")
    factor = detred_sign(n, d, k) if sign == "corrected" else (-1) ** (k - n)
    return lhs, factor * det_fraction(rhs_rows)


def check_detred(B, A, ells, ys, sign: str = "corrected") -> IdentityResult:
    lhs, rhs = detred_sides(B, A, ells, ys, sign)
    return IdentityResult(lhs == rhs, lhs, rhs)


def random_detred_instance(rng: np.random.Generator, n: int, d: int, k: int, lo: int = -5, hi: int = 5) -> dict:
    ints = lambda *shape: rng.integers(lo, hi + 1, size=shape).tolist()  # noqa: E731
    return {
        "B": ints(d, d - n + 1),
        "A": ints(k - 1, k - n),
        "ells": ints(k - 1, n),
        "ys": ints(d, n),
    }


# --- Jacobian factorization ---------------------------------------------------------------

@dataclass(frozen=True)
class JacobianReport:
    finite_difference: float
    factored: Any
    cramer: Any
    rel_error: float
    exact_agreement: bool | None
    passed: bool


def _solve_fraction(M: list[list[Fraction]], B: list[list[Fraction]]) -> list[list[Fraction]]:
    n = len(M)
    aug = [list(M[i]) + list(B[i]) for i in range(n)]
    for c in range(n):
        piv = next((i for i in range(c, n) if aug[i][c]), None)
        if piv is None:
            raise VerifyInputError("d_y eta is singular at the point")
        aug[c], aug[piv] = aug[piv], aug[c]
        p = aug[c][c]
        aug[c] = [v / p for v in aug[c]]
        for i in range(n):
            if i != c and aug[i][c]:
                f = aug[i][c]
                aug[i] = [a - f * b for a, b in zip(aug[i], aug[c])]
    return [row[n:] for row in aug]


def _as_rows(rho) -> list[MultiPoly]:
    return [rho] if isinstance(rho, MultiPoly) else list(rho)


def _eval_matrix(polys, pt, exact):
    if exact:
        return [[p.eval(pt) for p in row] for row in polys]
    arr = np.asarray(pt, dtype=float).reshape(1, -1)
    return np.array([[float(p.eval_many(arr)[0]) for p in row] for row in polys])


def check_jacobian_factorization(rhos: Sequence, eta: Sequence[MultiPoly], point: Sequence, n: int,
                                 rtol: float = 1e-6, exact: bool | None = None,
                                 fd_step: float = 1e-5) -> JacobianReport:
    """Compare det of the full Jacobian of (x, y_1..y_m) -> (rho_j(x, y_j), eta(x, y_j)).

    The factored product |Psi_1 ... Psi_m| prod |d_y eta(x, y_i)| is computed from
    the row form (d_x rho - d_y rho (d_y eta)^-1 d_x eta) and from the Cramer form;
    in exact mode the two agree exactly, and either is compared with a central
    finite-difference Jacobian to ``rtol``.
    """
    rho_rows = [_as_rows(r) for r in rhos]
    m = len(rho_rows)
    d = len(eta)
    if m == 0 or d == 0:
        raise VerifyInputError("need at least one rho and one eta component")
    nv = n + d
    if any(p.nvars != nv for r in rho_rows for p in r) or any(p.nvars != nv for p in eta):
        raise VerifyInputError(f"all maps must be polynomials in {nv} variables (x then y)")
    if sum(len(r) for r in rho_rows) != n:
        raise VerifyInputError("rho components must total n rows")
    if len(point) != n + m * d:
        raise VerifyInputError(f"point must have length n + m*d = {n + m * d}")
    if exact is None:
        exact = all(isinstance(v, (int, Fraction)) for v in point)
    pt = [to_fraction(v) for v in point] if exact else [float(v) for v in point]
    x = list(pt[:n])
    ys = [list(pt[n + j * d: n + (j + 1) * d]) for j in range(m)]
    xv, yv = list(range(n)), list(range(n, nv))
    deta_x = [[p.partial(i) for i in xv] for p in eta]
    deta_y = [[p.partial(i) for i in yv] for p in eta]

    psi_rows, cramer_rows, eta_dets = [], [], []
    for r, y in zip(rho_rows, ys):
        at = x + y
        Ey = _eval_matrix(deta_y, at, exact)
        Ex = _eval_matrix(deta_x, at, exact)
        Rx = _eval_matrix([[p.partial(i) for i in xv] for p in r], at, exact)
        Ry = _eval_matrix([[p.partial(i) for i in yv] for p in r], at, exact)
        if exact:
            det_e = det_fraction(Ey)
            if det_e == 0:
                raise VerifyInputError("d_y eta is singular at the point")
            sol = _solve_fraction(Ey, Ex)
            for a in range(len(r)):
                psi_rows.append([Rx[a][j] - sum(Ry[a][t] * sol[t][j] for t in range(d)) for j in range(n)])
                row = []
                for j in range(n):
                    bordered = [[Fraction(0)] + list(Ry[a])] + [[Ex[t][j]] + list(Ey[t]) for t in range(d)]
                    row.append((det_e * Rx[a][j] + det_fraction(bordered)) / det_e)
                cramer_rows.append(row)
        else:
            det_e = float(np.linalg.det(Ey))
            if abs(det_e) < 1e-12 * max(1.0, np.abs(Ey).max() ** d) or np.linalg.cond(Ey) > 1e12:
                raise VerifyInputError("d_y eta is singular at the point")
            psi = Rx - Ry @ np.linalg.solve(Ey, Ex)
            psi_rows.extend(psi.tolist())
            for a in range(len(r)):
                row = []
                for j in range(n):
                    bordered = np.block([[np.zeros((1, 1)), Ry[a][None, :]], [Ex[:, j:j + 1], Ey]])
                    row.append((det_e * Rx[a, j] + np.linalg.det(bordered)) / det_e)
                cramer_rows.append(row)
        eta_dets.append(det_e)

    if exact:
        prod_eta = Fraction(1)
        for v in eta_dets:
            prod_eta *= abs(v)
        factored = abs(det_fraction(psi_rows)) * prod_eta
        cramer = abs(det_fraction(cramer_rows)) * prod_eta
        agree = psi_rows == cramer_rows
    else:
        prod_eta = float(np.prod(np.abs(eta_dets)))
        factored = abs(float(np.linalg.det(np.array(psi_rows)))) * prod_eta
        cramer = abs(float(np.linalg.det(np.array(cramer_rows)))) * prod_eta
        agree = None

    fd = abs(_fd_jacobian_det(rho_rows, eta, [float(v) for v in pt], n, d, fd_step))
    ref = float(factored)
    scale = max(abs(ref), 1e-300)
    rel = abs(fd - ref) / scale
    rel_c = abs(float(cramer) - ref) / scale
    passed = rel <= rtol and (agree if exact else rel_c <= rtol)
    return JacobianReport(fd, factored, cramer, rel, agree, bool(passed))


def _fd_jacobian_det(rho_rows, eta, pt, n, d, h) -> float:
    m = len(rho_rows)

    def F(z):
        x = z[:n]
        out = []
        for j, r in enumerate(rho_rows):
            at = np.concatenate([x, z[n + j * d: n + (j + 1) * d]])[None, :]
            out.extend(float(p.eval_many(at)[0]) for p in r)
        for j in range(m):
            at = np.concatenate([x, z[n + j * d: n + (j + 1) * d]])[None, :]
            out.extend(float(p.eval_many(at)[0]) for p in eta)
        return np.array(out)

    z0 = np.asarray(pt, dtype=float)
    N = z0.size
    J = np.zeros((N, N))
    for i in range(N):
        step = h * max(1.0, abs(z0[i]))
        e = np.zeros(N)
        e[i] = step
        J[:, i] = (F(z0 + e) - F(z0 - e)) / (2 * step)
    return float(np.linalg.det(J))


# --- Bourgain pointwise inequality ---------------------------------------------------------

@dataclass(frozen=True)
class BourgainResult:
    n_points: int
    failures: int
    first_failure: dict | None

    @property
    def passed(self) -> bool:
        return self.failures == 0


def fold_weights(ps: PhaseSystem) -> tuple[WeightFunctional, PhaseSystem]:
    """(RotCurv1, phase with phi := W1) so that RotCurv2 on the result is the fold weight W2."""
    W1sym = rotcurv1_symbolic(ps)
    return WeightFunctional("RotCurv1"), PhaseSystem(ps.d_l, ps.d_r, ps.rho, (W1sym,))


def check_bourgain(ps: PhaseSystem, points, eps, beta, d: int | None = None) -> BourgainResult:
    """chi(|W2| >= beta) <= |W1/eps|^(1/(d+1)) + |W2/beta|^(1/(d(d-1))) chi(|W1| <= eps) at each point.

    ``eps`` and ``beta`` may be scalars or one value per point.
    """
    if ps.d_l != ps.d_r or ps.phi:
        raise VerifyInputError("the fold inequality is stated for d_l = d_r with no cutoff maps")
    d = ps.d_l if d is None else d
    if d < 2:
        raise HypothesisError("need d >= 2 (exponent 1/(d(d-1)))")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (len(pts),))
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (len(pts),))
    if np.any(eps <= 0) or np.any(beta <= 0):
        raise VerifyInputError("eps and beta must be positive")
    rot1, ps2 = fold_weights(ps)
    a1 = np.abs(rot1.numeric(ps, pts))
    a2 = np.abs(WeightFunctional("RotCurv2").numeric(ps2, pts))
    lhs = (a2 >= beta).astype(float)
    rhs = (a1 / eps) ** (1.0 / (d + 1)) + (a2 / beta) ** (1.0 / (d * (d - 1))) * (a1 <= eps)
    bad = np.flatnonzero(lhs > rhs)
    first = None
    if bad.size:
        i = int(bad[0])
        first = {"point": pts[i].tolist(), "eps": float(eps[i]), "beta": float(beta[i]),
                 "W1": float(a1[i]), "W2": float(a2[i])}
    return BourgainResult(len(pts), int(bad.size), first)


# --- theorem checks ------------------------------------------------------------------------

def instance_theorem1() -> tuple[PhaseSystem, Region]:
    """rho = x y on [1, 2]^2."""
    return PhaseSystem(1, 1, "x1*x2"), Region.box([1, 1], [2, 2])


def instance_theorem2() -> tuple[PhaseSystem, Region]:
    """Cubic d_l = d_r = 3 instance: rho = x.y + (x1 y2^2 + x2 y3^2 + x3 y1^2)/2, phi = y1 + y2 + y3."""
    rho = "x1*x4 + x2*x5 + x3*x6 + (x1*x5^2 + x2*x6^2 + x3*x4^2)/2"
    return PhaseSystem(3, 3, rho, ("x4 + x5 + x6",)), Region.box([0.5] * 6, [1.0] * 6)


def _norm_factor(name, f, region: Region, p: Fraction, cols, n_samples, seed) -> Factor:
    """||f||_p over the union of box projections; f is evaluated on the projected coordinates."""
    if f is None:
        vols = region.box_volumes()
        if len(region.boxes) == 1:
            return Factor(name, float(vols[0]) ** (1.0 / float(p)), 1)
        f = 1.0
    est = lp_norm(f, region, float(p), n_samples=n_samples, seed=seed)
    return Factor(name, est.value, 1, est.std_error)


def _theorem_check(which, ps, E, f, g, n_samples, seed, resolution, n_slices, ratio_cap, threads,
                   frozen_key=None) -> InequalityReport:
    ex = theorem_exponents(which, ps.d_l)
    config = {"check": f"theorem{which}", "phase": ps.to_dict(), "region": E.to_dict(),
              "f": str(f), "g": str(g), "n_samples": n_samples, "seed": seed,
              "resolution": resolution, "n_slices": n_slices}
    notes = []
    if frozen_key:
        notes.append(f"instance '{frozen_key}' is a chosen test instance")
    name = f"theorem{which}"
    if E.empty or (isinstance(f, (int, float)) and f == 0) or (isinstance(g, (int, float)) and g == 0) \
            or (isinstance(f, MultiPoly) and f.is_zero()) or (isinstance(g, MultiPoly) and g.is_zero()):
        lhs = IntegralEstimate(0.0, 0.0, 1, "TensorQuadrature")
        return _make_report(name, lhs, [], config, seed, ratio_cap, notes + ["trivial: zero integrand"])

    if which == 1:
        weight = WeightFunctional("RotCurv1")
        inst = ps
    else:
        weight = WeightFunctional("RotCurv2")
        inst = ps
    power = float(ex["weight"])
    fx = as_function(f, list(ps.x_vars))
    gy = as_function(g, list(ps.y_vars))

    def integrand(pts):
        return np.abs(weight.numeric(inst, pts)) ** power * np.abs(fx(pts) * gy(pts))

    lhs = integrate(integrand, E, "auto", n_samples, seed, threads)
    if lhs.value == 0:
        return _make_report(name, lhs, [], config, seed, ratio_cap, notes + ["weight vanishes on E"])
    rho_L = width_L([ps.rho], E, ps.d_l, resolution, n_slices)
    rho_R = width_R([ps.rho], E, ps.d_l, resolution, n_slices)
    factors = [Factor("rho_L", rho_L, ex["rho_L"]), Factor("rho_R", rho_R, ex["rho_R"])]
    if ps.phi:
        factors.append(Factor("phi_R", width_R(list(ps.phi), E, ps.d_l, resolution, n_slices), ex["phi_R"]))
    else:
        notes.append("no cutoff maps: |phi(E)|_R taken as 1")
    Ex = E.project(list(ps.x_vars))
    Ey = E.project(list(ps.y_vars))
    fn = _norm_factor("norm_f", f, Ex, ex["p"], None, n_samples, seed + 1)
    gn = _norm_factor("norm_g", g, Ey, ex["q"], None, n_samples, seed + 2)
    factors += [fn, gn]
    return _make_report(name, lhs, factors, config, seed, ratio_cap, notes)


def _check_dims_theorem(ps: PhaseSystem, which: int):
    if which == 1:
        if ps.d_l > ps.d_r:
            raise HypothesisError("the first inequality needs d_l <= d_r")
        if len(ps.phi) != ps.d_r - ps.d_l:
            raise HypothesisError(f"need d_r - d_l = {ps.d_r - ps.d_l} cutoff maps, got {len(ps.phi)}")
    else:
        if ps.d_l <= 2:
            raise HypothesisError("the second inequality needs d_l >= 3 (g-exponent (d_l-1)/(d_l-2))")
        if ps.d_l > ps.d_r + 1:
            raise HypothesisError("the second inequality needs d_l <= d_r + 1")
        if len(ps.phi) != ps.d_r - ps.d_l + 1:
            raise HypothesisError(f"need d_r - d_l + 1 = {ps.d_r - ps.d_l + 1} cutoff maps, got {len(ps.phi)}")


def check_theorem1(ps: PhaseSystem, E: Region, f=None, g=None, budget: int = 200_000, seed: int = 0,
                   resolution: float = 1e-3, n_slices: int = 9, ratio_cap: float = math.inf,
                   threads: int | None = 1) -> InequalityReport:
    """LHS: integral over E of |W1|^(1/(d_l+1)) |f g|; RHS factors: widths and norms.

    ``f``/``g`` are None (constant 1), numbers, MultiPolys or callables on x (resp. y).
    """
    _check_dims_theorem(ps, 1)
    return _theorem_check(1, ps, E, f, g, budget, seed, resolution, n_slices, ratio_cap, threads)


def check_theorem2(ps: PhaseSystem, E: Region, f=None, g=None, budget: int = 200_000, seed: int = 0,
                   resolution: float = 1e-3, n_slices: int = 5, ratio_cap: float = math.inf,
                   threads: int | None = 1) -> InequalityReport:
    _check_dims_theorem(ps, 2)
    return _theorem_check(2, ps, E, f, g, budget, seed, resolution, n_slices, ratio_cap, threads)


def affine_copy(ps: PhaseSystem, E: Region, A, a, B, b) -> tuple[PhaseSystem, Region]:
    """(rho', E') with rho'(u, v) = rho(A u + a, B v + b) and E' the preimage of E."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    M = np.zeros((ps.nvars, ps.nvars))
    M[: ps.d_l, : ps.d_l] = A
    M[ps.d_l:, ps.d_l:] = B
    c = np.concatenate([np.asarray(a, dtype=float).reshape(-1), np.asarray(b, dtype=float).reshape(-1)])
    Mf = [[Fraction(v) for v in row] for row in M]
    cf = [Fraction(v) for v in c]
    ps2 = PhaseSystem(ps.d_l, ps.d_r, ps.rho.compose_affine(Mf, cf), tuple(p.compose_affine(Mf, cf) for p in ps.phi))
    return ps2, E.affine_preimage(M, c)


# --- Oberlin condition check ---------------------------------------------------------------

_ESTIMATE_TABLE = {
    # kind: (weight power, s, [(phi prefix length offset from d-n, exponent)])
    "W1": lambda n: (Fraction(1), Fraction(n), [(1, Fraction(1))]),
    "W2": lambda n: (Fraction(1, n), Fraction(n - 2), [(2, Fraction(1))]),
    "W3": lambda n: (Fraction(1, (n - 1) * (n - 2)), Fraction(n * (n - 3), n - 1),
                     [(2, Fraction(n - 3, n - 2)), (3, Fraction(1, n - 2))]),
}


def check_oberlin(cm: ConeMap, weight, E: Region, s=None, budget: int = 400, seed: int = 0,
                  resolution: float = 1e-3, ratio_cap: float = math.inf, **scan_kw) -> InequalityReport:
    """Scan sup_Q |Q|^(s/n) integral |w|^power / |Q Phi|^s against the estimate's |phi^(j)(E)| factors.

    ``weight`` is "W1", "W2", "W3" (or the matching WeightFunctional) with the
    estimate's power, s and right-hand side, or a constant (with explicit ``s``,
    no right-hand side).
    """
    n, d = cm.n, cm.d
    kind = weight.kind if isinstance(weight, WeightFunctional) else weight
    config = {"check": "oberlin", "cone": cm.to_dict(), "weight": str(kind), "region": E.to_dict(),
              "budget": budget, "seed": seed, "s": str(s)}
    factors: list[Factor] = []
    notes: list[str] = []
    if isinstance(kind, str):
        if kind not in _ESTIMATE_TABLE:
            raise VerifyInputError(f"weight must be W1, W2, W3 or a constant, got {kind!r}")
        if kind == "W3" and n < 4:
            raise HypothesisError("the third-order estimate needs n >= 4")
        power, s_table, rhs = _ESTIMATE_TABLE[kind](n)
        if s is not None and to_fraction(s) != s_table:
            raise HypothesisError(f"{kind} pairs with s = {s_table}")
        s = s_table
        wf = weight if isinstance(weight, WeightFunctional) else WeightFunctional(kind)
        pw = float(power)

        def wfun(pts):
            return np.abs(wf.numeric(cm, pts)) ** pw

        for offset, expo in rhs:
            j = d - n + offset
            if j < 0 or j > len(cm.phi):
                raise HypothesisError(f"{kind} needs {max(j, 0)} cutoff maps, instance has {len(cm.phi)}")
            if j == 0:
                notes.append("phi^(0)(E) is a subset of R^0; factor taken as 1")
                continue
            val = image_measure(list(cm.phi[:j]), E, resolution)
            factors.append(Factor(f"phi^({j})", val, expo))
        w_eval: Any = wfun
    else:
        if s is None:
            raise VerifyInputError("a constant weight needs an explicit s")
        w_eval = abs(float(weight))
        notes.append("constant weight: no right-hand side")
    if isinstance(w_eval, float) and w_eval == 0:
        lhs = IntegralEstimate(0.0, 0.0, 1, "TensorQuadrature")
        return _make_report("oberlin", lhs, factors, config, seed, ratio_cap, notes + ["zero weight"])
    scan = oberlin_scan(cm, w_eval, float(s), E, budget=budget, seed=seed, **scan_kw)
    method = "TensorQuadrature" if d < 3 else "MonteCarlo"
    lhs = IntegralEstimate(scan.sup, 0.0, max(scan.n_evals, 1), method, scan.clipped_fraction)
    applicable = not scan.divergent
    if scan.divergent:
        notes.append("divergence flagged: the geometric condition fails for this family (not applicable)")
    rep = _make_report("oberlin", lhs, factors, config, seed, ratio_cap, notes, applicable)
    rep.config["worst_Q"] = scan.worst_Q.to_list()
    rep.config["trace"] = scan.trace
    rep.config["divergent"] = scan.divergent
    return rep


# --- random instances ----------------------------------------------------------------------

def random_rational(rng: np.random.Generator, num: int = 9, den: int = 7) -> Fraction:
    return Fraction(int(rng.integers(-num, num + 1)), int(rng.integers(1, den + 1)))


def random_poly(rng: np.random.Generator, nvars: int, degree: int, n_terms: int = 6, coef: int = 4) -> MultiPoly:
    terms = {}
    for _ in range(n_terms):
        deg = int(rng.integers(0, degree + 1))
        exp = [0] * nvars
        for _ in range(deg):
            exp[int(rng.integers(nvars))] += 1
        c = int(rng.integers(-coef, coef + 1)) or 1
        terms[tuple(exp)] = terms.get(tuple(exp), 0) + c
    return MultiPoly(nvars, terms)


def random_affine(rng: np.random.Generator, nvars: int, coef: int = 4) -> MultiPoly:
    return MultiPoly.linear([int(v) for v in rng.integers(-coef, coef + 1, nvars)], int(rng.integers(-coef, coef + 1)))


def random_cone_map(rng: np.random.Generator, d: int, n: int, n_phi: int, degree: int = 3,
                    affine_phi: bool = True) -> ConeMap:
    Phi = tuple(random_poly(rng, d, degree) for _ in range(n))
    phi = tuple(random_affine(rng, d) if affine_phi else random_poly(rng, d, degree) for _ in range(n_phi))
    return ConeMap(d, Phi, phi)


def random_point(rng: np.random.Generator, dim: int) -> list[Fraction]:
    return [random_rational(rng) for _ in range(dim)]


def point_off_first(rng: np.random.Generator, cm: ConeMap, tries: int = 100) -> list[Fraction]:
    """Random rational point with Phi_1(y) != 0, where the induced weight's lift is defined."""
    for _ in range(tries):
        y = random_point(rng, cm.d)
        if cm.Phi[0].eval(y) != 0:
            return y
    raise VerifyInputError("Phi_1 vanishes at every sampled point")


def random_gl_int(rng: np.random.Generator, n: int, coef: int = 3) -> list[list[int]]:
    while True:
        Q = rng.integers(-coef, coef + 1, size=(n, n)).tolist()
        if det_fraction(Q) != 0:
            return Q


# --- identity suite --------------------------------------------------------------------------

def _close(a, b, exact: bool, rtol: float = 1e-9, scale: float = 0.0) -> bool:
    """Exact equality, or |a - b| <= rtol * max(|a|, |b|, scale) in float mode."""
    if exact:
        return a == b
    a, b = float(a), float(b)
    return abs(a - b) <= rtol * max(abs(a), abs(b), scale) or (a == 0 and b == 0)


def _close_vec(u, v, exact: bool, rtol: float = 1e-9) -> bool:
    """Exact equality, or normwise relative error <= rtol in float mode."""
    if exact:
        return all(a == b for a, b in zip(u, v))
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    return bool(np.linalg.norm(u - v) <= rtol * max(np.linalg.norm(u), np.linalg.norm(v)))


class _HadamardRing(ArrayRing):
    """Float ring whose determinants are replaced by the product of row norms."""

    def det(self, rows):
        if not rows:
            return np.ones(self.size)
        stack = np.empty((self.size, len(rows), len(rows)))
        for i, r in enumerate(rows):
            for j, e in enumerate(r):
                stack[:, i, j] = e
        return np.prod(np.linalg.norm(stack, axis=2), axis=1)


def w1_scale(cm: ConeMap, y) -> float:
    """Hadamard bound of the W1 matrix at y: the magnitude float roundoff is measured against."""
    return float(np.asarray(_w1(_HadamardRing(np.array([y], dtype=float)), cm)).reshape(-1)[0])


def _pt(rng, dim, exact):
    p = random_point(rng, dim)
    return p if exact else [float(v) for v in p]


def id_d1_transformation(rng, exact):
    d = int(rng.integers(1, 4))
    n = int(rng.integers(1, d + 2))
    cm = random_cone_map(rng, d, n, d - n + 1, degree=2)
    Q = random_gl_int(rng, n)
    y = _pt(rng, d, exact)
    u = d1_apply(cm, y, exact)
    v = d1_apply(cm.linear_image(Q), y, exact)
    dq = det_fraction(Q)
    lhs = [sum(Q[j][i] * v[j] for j in range(n)) for i in range(n)]  # Q^T D1[Q Phi]
    rhs = [dq * ui for ui in u]
    ok = _close_vec(lhs, rhs, exact)
    return ok, {"cone": cm.to_dict(), "Q": Q, "y": [str(t) for t in y]}


def id_w1_invariance(rng, exact):
    d = int(rng.integers(1, 4))
    n = int(rng.integers(1, d + 2))
    cm = random_cone_map(rng, d, n, d - n + 1, degree=2)
    Q = random_gl_int(rng, n)
    y = _pt(rng, d, exact)
    cq = cm.linear_image(Q)
    lhs = abs(w1(cq, y, exact))
    rhs = abs(det_fraction(Q)) * abs(w1(cm, y, exact))
    scale = 0.0 if exact else max(w1_scale(cq, y), abs(float(det_fraction(Q))) * w1_scale(cm, y))
    return _close(lhs, rhs, exact, scale=scale), {"cone": cm.to_dict(), "Q": Q, "y": [str(t) for t in y]}


def id_w1_reparametrization(rng, exact):
    d = int(rng.integers(1, 4))
    n = int(rng.integers(1, d + 2))
    cm = random_cone_map(rng, d, n, d - n + 1, degree=2)
    A = random_gl_int(rng, d)
    b = [int(v) for v in rng.integers(-2, 3, d)]
    u = _pt(rng, d, exact)
    ca = cm.reparametrize(A, b)
    lhs = abs(w1(ca, u, exact))
    psi = [sum(A[i][j] * u[j] for j in range(d)) + b[i] for i in range(d)]
    rhs = abs(w1(cm, psi, exact)) * abs(det_fraction(A))
    scale = 0.0 if exact else max(w1_scale(ca, u), abs(float(det_fraction(A))) * w1_scale(cm, psi))
    return _close(lhs, rhs, exact, scale=scale), {"cone": cm.to_dict(), "A": A, "b": b, "u": [str(t) for t in u]}


def id_dphi_orthogonality(rng, exact):
    d = int(rng.integers(1, 4))
    n = int(rng.integers(2, d + 3))
    cm = random_cone_map(rng, d, n, d - n + 2, degree=2)
    y = _pt(rng, d, exact)
    D = dop_apply(cm, "D", y, exact)
    Phi_y = [p.eval(y) for p in cm.Phi] if exact else [float(p.eval_many(np.array([y], float))[0]) for p in cm.Phi]
    val = pairing(D, Phi_y)
    scale = max([abs(float(v)) for v in D] + [1.0]) * max([abs(float(v)) for v in Phi_y] + [1.0])
    ok = val == 0 if exact else abs(float(val)) <= 1e-9 * scale
    return ok, {"cone": cm.to_dict(), "y": [str(t) for t in y]}


def id_induction_w2(rng, exact):
    d = int(rng.integers(2, 4))
    n = int(rng.integers(2, min(d + 2, 4) + 1))  # target dimension of Phi
    cm = random_cone_map(rng, d, n, d - n + 2, degree=3)
    y = point_off_first(rng, cm)
    lhs = induce(WeightFunctional("W1"), cm, y, exact=True)
    rhs = abs(w2(cm, y, exact=True))
    return _close(lhs, rhs, True), {"cone": cm.to_dict(), "y": [str(t) for t in y]}


def id_induction_w3(rng, exact):
    d = int(rng.integers(2, 4))
    n = int(rng.integers(3, min(d + 2, 4) + 1))
    cm = random_cone_map(rng, d, n, d - n + 3, degree=3)
    y = point_off_first(rng, cm)
    lhs = induce(WeightFunctional.induced(WeightFunctional("W1")), cm, y, exact=True)
    rhs = abs(w3(cm, y, exact=True))
    return _close(lhs, rhs, True), {"cone": cm.to_dict(), "y": [str(t) for t in y]}


def id_complete_square(rng, exact):
    size = int(rng.integers(2, 7))
    Q = rng.standard_normal((size, size)) + 2 * np.eye(size)
    ok, info = complete_square_check(Q, rng)
    return ok, {"Q": Q.tolist(), **info}


def complete_square_check(Q, rng=None, tol: float = 1e-10) -> tuple[bool, dict]:
    """Reconstruction |Qz|^2 = |Q0(z' - v z_n)|^2 + b^2 z_n^2 and |det Q| = |det Q0| b."""
    Q = np.asarray(Q, dtype=float)
    Q0, v, b = complete_square(Q)
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for _ in range(8):
        z = rng.standard_normal(Q.shape[0])
        lhs = float(np.sum((Q @ z) ** 2))
        rhs = float(np.sum((Q0.entries @ (z[:-1] - v * z[-1])) ** 2) + b * b * z[-1] ** 2)
        worst = max(worst, abs(lhs - rhs) / max(lhs, 1.0))
    det_err = abs(abs(np.linalg.det(Q)) - abs(Q0.det) * b) / max(abs(np.linalg.det(Q)), 1.0)
    return worst <= tol and det_err <= tol, {"recon_error": worst, "det_error": det_err}


def id_detred(rng, exact):
    n = int(rng.integers(1, 5))
    d = int(rng.integers(max(1, n - 1), 5))
    k = int(rng.integers(n + 1, 7))
    inst = random_detred_instance(rng, n, d, k)
    return check_detred(**inst).passed, inst


def id_jacobian_factorization(rng, exact):
    n = int(rng.integers(1, 3))
    d = int(rng.integers(1, 3))
    m = int(rng.integers(1, n + 1))
    sizes = [1] * m
    sizes[0] += n - m
    nv = n + d
    rhos = [[random_poly(rng, nv, 2) for _ in range(s)] for s in sizes]
    y_lin = [MultiPoly.variable(n + i, nv) * int(rng.integers(2, 4)) for i in range(d)]
    eta = [y_lin[i] + random_poly(rng, nv, 2, n_terms=2, coef=1) * Fraction(1, 8) for i in range(d)]
    pt = [Fraction(int(rng.integers(-4, 5)), 8) for _ in range(n + m * d)]
    inst = {"rhos": [[p.to_string() for p in r] for r in rhos], "eta": [p.to_string() for p in eta],
            "point": [str(v) for v in pt], "n": n}
    try:
        rep = check_jacobian_factorization(rhos, eta, pt, n, exact=True)
    except VerifyInputError:
        return True, inst  # singular d_y eta: outside the identity's domain
    return rep.passed, inst


def id_bourgain(rng, exact):
    ps = PhaseSystem(2, 2, random_poly(rng, 4, 3))
    pts = rng.uniform(-1, 1, size=(16, 4))
    eps = 10 ** rng.uniform(-3, 1, 16)
    beta = 10 ** rng.uniform(-3, 1, 16)
    res = check_bourgain(ps, pts, eps, beta)
    return res.passed, {"phase": ps.to_dict(), "first_failure": res.first_failure}


IDENTITIES: dict[str, Callable] = {
    "d1_transformation": id_d1_transformation,
    "w1_linear_invariance": id_w1_invariance,
    "w1_reparametrization": id_w1_reparametrization,
    "dphi_orthogonality": id_dphi_orthogonality,
    "induction_w2": id_induction_w2,
    "induction_w3": id_induction_w3,
    "complete_square": id_complete_square,
    "detred": id_detred,
    "jacobian_factorization": id_jacobian_factorization,
    "bourgain": id_bourgain,
}


@dataclass
class SuiteSummary:
    seed: int
    trials: int
    exact: bool
    counts: dict[str, dict[str, int]]
    failures: list[dict]

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {"seed": self.seed, "trials": self.trials, "exact": self.exact,
                "counts": self.counts, "failures": self.failures, "pass": self.passed}


def identity_suite(seed: int = 0, trials: int = 20, exact: bool = True,
                   identities: Mapping[str, Callable] | None = None,
                   only: Sequence[str] | None = None, threads: int | None = 1) -> SuiteSummary:
    """Run each identity on ``trials`` random instances; failures carry a reproducer.

    Trial t of identity `name` draws from the stream seeded by (seed, crc32(name), t),
    so any single failure can be replayed with ``replay``.
    """
    if trials < 1:
        raise VerifyInputError("trials must be >= 1")
    table = dict(IDENTITIES if identities is None else identities)
    if only:
        unknown = set(only) - set(table)
        if unknown:
            raise VerifyInputError(f"unknown identities: {sorted(unknown)}")
        table = {k: table[k] for k in only}

    def run_one(item):
        name, fn = item
        fails = []
        for t in range(trials):
            ok, inst = fn(_trial_rng(seed, name, t), exact)
            if not ok:
                fails.append({"identity": name, "seed": seed, "trial": t, "exact": exact, "instance": inst})
        return name, fails

    nthreads = resolve_threads(threads)
    if nthreads > 1:
        with ThreadPoolExecutor(nthreads) as pool:
            results = list(pool.map(run_one, table.items()))
    else:
        results = [run_one(item) for item in table.items()]
    counts, failures = {}, []
    for name, fails in results:
        counts[name] = {"passed": trials - len(fails), "failed": len(fails)}
        failures.extend(fails)
    return SuiteSummary(seed, trials, exact, counts, failures)


def _trial_rng(seed: int, name: str, trial: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(name.encode()), int(trial)])


def replay(failure: Mapping, identities: Mapping[str, Callable] | None = None) -> bool:
    """Re-run one reproducer; returns whether it passes now."""
    table = IDENTITIES if identities is None else identities
    fn = table[failure["identity"]]
    ok, _ = fn(_trial_rng(failure["seed"], failure["identity"], failure["trial"]), failure.get("exact", True))
    return bool(ok)
