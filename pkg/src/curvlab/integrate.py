"""Numerical integrals: sublevel functionals, geometric integrals, epsilon-shell averages,
image measures and widths, plus the sup-over-GL(n) scan.

Randomness: every Monte Carlo call splits its work into a fixed set of seeded
sub-streams (independent of the thread count), so results are bit-identical for
a given seed whatever the number of threads.
"""

from __future__ import annotations

import heapq
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .linalg import GLn, build_tv, sample_gl
from .poly import MultiPoly
from .weights import ConeMap, PhaseSystem, WeightFunctional

CHUNK = 1 << 15


class IntegrateInputError(ValueError):
    """Invalid region, tolerance or integration parameter."""


# --- regions ---------------------------------------------------------------------

@dataclass(frozen=True)
class Region:
    """Finite union of axis-aligned boxes, intersected with {p <= 0} for each constraint p."""

    boxes: tuple
    constraints: tuple = ()

    def __post_init__(self):
        boxes = []
        for b in self.boxes:
            lo, hi = (np.asarray(v, dtype=float).reshape(-1) for v in b)
            if lo.shape != hi.shape:
                raise IntegrateInputError("box corners have different lengths")
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise IntegrateInputError("boxes must be bounded")
            if np.any(hi <= lo):
                raise IntegrateInputError(f"degenerate box {lo.tolist()} .. {hi.tolist()}")
            lo.setflags(write=False)
            hi.setflags(write=False)
            boxes.append((lo, hi))
        dims = {lo.size for lo, _ in boxes}
        if len(dims) > 1:
            raise IntegrateInputError("boxes have inconsistent dimensions")
        cons = tuple(self.constraints)
        if boxes and any(not isinstance(p, MultiPoly) or p.nvars != boxes[0][0].size for p in cons):
            raise IntegrateInputError("constraints must be polynomials in the region's variables")
        object.__setattr__(self, "boxes", tuple(boxes))
        object.__setattr__(self, "constraints", cons)

    @classmethod
    def box(cls, lo, hi, constraints=()) -> "Region":
        return cls(((lo, hi),), tuple(constraints))

    @classmethod
    def cube(cls, dim: int, lo: float, hi: float) -> "Region":
        return cls.box([lo] * dim, [hi] * dim)

    @property
    def dim(self) -> int:
        return self.boxes[0][0].size if self.boxes else 0

    @property
    def empty(self) -> bool:
        return not self.boxes

    def box_volumes(self) -> np.ndarray:
        return np.array([float(np.prod(hi - lo)) for lo, hi in self.boxes])

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.min([b[0] for b in self.boxes], axis=0)
        hi = np.max([b[1] for b in self.boxes], axis=0)
        return lo, hi

    def multiplicity(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        count = np.zeros(pts.shape[0], dtype=int)
        for lo, hi in self.boxes:
            count += np.all((pts >= lo) & (pts <= hi), axis=1)
        return count

    def satisfies_constraints(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        ok = np.ones(pts.shape[0], dtype=bool)
        for p in self.constraints:
            ok &= p.eval_many(pts) <= 0
        return ok

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return (self.multiplicity(pts) > 0) & self.satisfies_constraints(pts)

    def project(self, indices: Sequence[int]) -> "Region":
        """Boxes restricted to the given coordinates; constraints are dropped."""
        idx = list(indices)
        seen, boxes = set(), []
        for lo, hi in self.boxes:
            key = (tuple(lo[idx]), tuple(hi[idx]))
            if key not in seen:
                seen.add(key)
                boxes.append((lo[idx], hi[idx]))
        return Region(tuple(boxes))

    def slice(self, fixed: dict[int, float]) -> "Region":
        """The section {z : (z, fixed) in E} in the remaining coordinates."""
        keep = [i for i in range(self.dim) if i not in fixed]
        boxes = []
        for lo, hi in self.boxes:
            if all(lo[i] <= v <= hi[i] for i, v in fixed.items()):
                boxes.append((lo[keep], hi[keep]))
        cons = tuple(p.fix(fixed) for p in self.constraints)
        # constant constraints decide membership outright
        if any(c.is_constant() and c.constant_term() > 0 for c in cons):
            return Region(())
        cons = tuple(c for c in cons if not c.is_constant())
        return Region(tuple(boxes), cons)

    def affine_preimage(self, A, b) -> "Region":
        """{u : A u + b in E} for a single-box region; the box becomes linear constraints."""
        if len(self.boxes) != 1:
            raise IntegrateInputError("affine preimages are supported for single-box regions")
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        lo, hi = self.boxes[0]
        Ainv = np.linalg.inv(A)
        corners = np.array(np.meshgrid(*[[l, h] for l, h in zip(lo, hi)], indexing="ij")).reshape(lo.size, -1).T
        pre = (corners - b) @ Ainv.T
        plo, phi_ = pre.min(axis=0), pre.max(axis=0)
        cons = list(p.compose_affine(A, b) for p in self.constraints)
        if np.count_nonzero(A - np.diag(np.diag(A))):
            for i in range(lo.size):
                row = MultiPoly.linear(A[i].tolist(), b[i])
                cons.append(row - float(hi[i]))
                cons.append(float(lo[i]) - row)
        return Region(((plo, phi_),), tuple(cons))

    def to_dict(self) -> dict:
        return {
            "boxes": [[lo.tolist(), hi.tolist()] for lo, hi in self.boxes],
            "constraints": [p.to_string() for p in self.constraints],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Region":
        from .poly import parse_poly

        boxes = tuple((b[0], b[1]) for b in data["boxes"])
        dim = len(boxes[0][0]) if boxes else 0
        cons = tuple(parse_poly(s, nvars=dim) for s in data.get("constraints", []))
        return cls(boxes, cons)


# --- estimates -------------------------------------------------------------------

@dataclass(frozen=True)
class IntegralEstimate:
    value: float
    std_error: float
    n_samples: int
    method: str
    clipped_fraction: float = 0.0
    divergent: bool = False

    def __post_init__(self):
        if self.std_error < 0 or not self.n_samples > 0:
            raise IntegrateInputError("std_error must be >= 0 and n_samples > 0")

    @property
    def valid(self) -> bool:
        return self.clipped_fraction < 1e-3 and not self.divergent

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "std_error": self.std_error,
            "n_samples": self.n_samples,
            "method": self.method,
            "clipped_fraction": self.clipped_fraction,
        }

    def __float__(self):
        return float(self.value)


def _zero_estimate(n: int, method: str) -> IntegralEstimate:
    return IntegralEstimate(0.0, 0.0, max(int(n), 1), method)


def resolve_threads(threads: int | None) -> int:
    import os

    if threads is None:
        env = os.environ.get("CURVLAB_THREADS")
        threads = int(env) if env and env.isdigit() else 1
    return max(1, int(threads))


def _clip(values: np.ndarray, ceiling: float | None):
    if ceiling is None:
        return values, 0.0
    over = np.abs(values) > ceiling
    if not over.any():
        return values, 0.0
    clipped = np.where(over, np.sign(values) * ceiling, values)
    return clipped, float(np.sum(np.abs(values[over]) - ceiling))


def monte_carlo(
    func: Callable[[np.ndarray], np.ndarray],
    region: Region,
    n_samples: int,
    seed: int = 0,
    threads: int | None = 1,
    ceiling: float | None = None,
) -> IntegralEstimate:
    """Integral of func over the region by box-stratified Monte Carlo.

    Points covered by several boxes are down-weighted by their multiplicity;
    constraint violations contribute 0.
    """
    if n_samples < 2:
        raise IntegrateInputError("Monte Carlo needs at least 2 samples")
    if region.empty:
        return _zero_estimate(n_samples, "MonteCarlo")
    vols = region.box_volumes()
    alloc = np.maximum(2, np.floor(n_samples * vols / vols.sum()).astype(int))
    tasks = []
    for bi, m in enumerate(alloc):
        for ci, start in enumerate(range(0, int(m), CHUNK)):
            tasks.append((bi, ci, min(CHUNK, int(m) - start)))
    root = np.random.SeedSequence(int(seed))

    def run(task):
        bi, ci, m = task
        rng = np.random.default_rng(np.random.SeedSequence(root.entropy, spawn_key=(bi, ci)))
        lo, hi = region.boxes[bi]
        pts = lo + (hi - lo) * rng.random((m, lo.size))
        vals = np.zeros(m)
        inside = region.satisfies_constraints(pts)
        if inside.any():
            mult = region.multiplicity(pts[inside])
            vals[inside] = np.asarray(func(pts[inside]), dtype=float) / mult
        vals, lost = _clip(vals, ceiling)
        return np.sum(vals), np.sum(vals * vals), lost

    nthreads = resolve_threads(threads)
    if nthreads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(nthreads) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]
    total, var, lost_total = 0.0, 0.0, 0.0
    for bi, m in enumerate(alloc):
        rows = np.array([r for t, r in zip(tasks, results) if t[0] == bi])
        s1, s2, lost = rows[:, 0].sum(), rows[:, 1].sum(), rows[:, 2].sum()
        mean = s1 / m
        sample_var = max(s2 / m - mean * mean, 0.0) * m / (m - 1)
        total += vols[bi] * mean
        var += vols[bi] ** 2 * sample_var / m
        lost_total += vols[bi] * lost / m
    frac = lost_total / abs(total) if total else (math.inf if lost_total else 0.0)
    return IntegralEstimate(float(total), float(math.sqrt(var)), int(alloc.sum()), "MonteCarlo", float(frac))


def gl_nodes(region: Region, order: int = 8, cells: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Composite tensor Gauss-Legendre nodes and weights over the region (membership folded into weights)."""
    x, w = np.polynomial.legendre.leggauss(order)
    all_pts, all_w = [], []
    for lo, hi in region.boxes:
        axes, wts = [], []
        for a, b in zip(lo, hi):
            edges = np.linspace(a, b, cells + 1)
            h = np.diff(edges)
            mid = 0.5 * (edges[:-1] + edges[1:])
            axes.append((mid[:, None] + 0.5 * h[:, None] * x[None, :]).ravel())
            wts.append((0.5 * h[:, None] * w[None, :]).ravel())
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        wg = np.meshgrid(*wts, indexing="ij")
        weight = np.prod(np.stack([g.ravel() for g in wg], axis=1), axis=1)
        all_pts.append(pts)
        all_w.append(weight)
    pts = np.concatenate(all_pts)
    weight = np.concatenate(all_w)
    inside = region.satisfies_constraints(pts)
    mult = np.maximum(region.multiplicity(pts), 1)
    return pts[inside], weight[inside] / mult[inside]


def tensor_quadrature(
    func: Callable[[np.ndarray], np.ndarray],
    region: Region,
    order: int = 8,
    cells: int = 16,
    ceiling: float | None = None,
) -> IntegralEstimate:
    """Composite Gauss-Legendre; the error estimate is the gap to the half-resolution rule."""
    if region.empty:
        return _zero_estimate(1, "TensorQuadrature")

    def rule(c):
        pts, wts = gl_nodes(region, order, c)
        if not len(pts):
            return 0.0, 0.0, 1
        vals, _ = _clip(np.asarray(func(pts), dtype=float), ceiling)
        raw = np.asarray(func(pts), dtype=float) if ceiling is not None else vals
        lost = float(np.sum(wts * (np.abs(raw) - np.abs(vals))))
        return float(np.sum(wts * vals)), lost, len(pts)

    fine, lost, n = rule(cells)
    coarse, _, _ = rule(max(1, cells // 2))
    frac = lost / abs(fine) if fine else (math.inf if lost else 0.0)
    return IntegralEstimate(fine, abs(fine - coarse), max(n, 1), "TensorQuadrature", frac)


def integrate(func, region: Region, method: str = "auto", n_samples: int = 200_000, seed: int = 0,
              threads: int | None = 1, ceiling: float | None = None, order: int = 8,
              cells: int = 16) -> IntegralEstimate:
    """Monte Carlo from 3 dimensions up, tensor Gauss-Legendre below (``method='auto'``)."""
    if method == "auto":
        method = "TensorQuadrature" if region.dim < 3 else "MonteCarlo"
    if method == "MonteCarlo":
        return monte_carlo(func, region, n_samples, seed, threads, ceiling)
    if method == "TensorQuadrature":
        return tensor_quadrature(func, region, order, cells, ceiling)
    raise IntegrateInputError(f"unknown integration method {method!r}")


# --- function helpers --------------------------------------------------------------

def as_function(f, columns: Sequence[int] | None = None) -> Callable[[np.ndarray], np.ndarray]:
    """Turn None (constant 1), a number, a MultiPoly or a callable into a vectorized function.

    ``columns`` selects which coordinates of the full point array are passed.
    """
    if f is None:
        return lambda pts: np.ones(len(pts))
    if isinstance(f, (int, float)):
        c = float(f)
        return lambda pts: np.full(len(pts), c)
    sel = (lambda pts: pts) if columns is None else (lambda pts: pts[:, list(columns)])
    if isinstance(f, MultiPoly):
        return lambda pts: f.eval_many(sel(pts))
    if callable(f):
        return lambda pts: np.asarray(f(sel(pts)), dtype=float)
    raise IntegrateInputError(f"unsupported function type {type(f).__name__}")


def _is_zero_function(f) -> bool:
    return (isinstance(f, (int, float)) and f == 0) or (isinstance(f, MultiPoly) and f.is_zero())


# --- sublevel functional -------------------------------------------------------------

def sublevel_eval(ps: PhaseSystem, eps: float, E: Region, f=None, g=None, n_samples: int = 1_000_000,
                  seed: int = 0, threads: int | None = 1) -> IntegralEstimate:
    """Integral over E of chi(|rho| <= eps) f(x) g(y) by Monte Carlo."""
    if not eps > 0:
        raise IntegrateInputError("eps must be positive")
    if not E.empty and E.dim != ps.nvars:
        raise IntegrateInputError(f"region has dimension {E.dim}, phase has {ps.nvars} variables")
    if E.empty or _is_zero_function(f) or _is_zero_function(g):
        return _zero_estimate(n_samples, "MonteCarlo")
    fx = as_function(f, list(ps.x_vars))
    gy = as_function(g, list(ps.y_vars))
    rho = ps.rho

    def integrand(pts):
        return (np.abs(rho.eval_many(pts)) <= eps) * fx(pts) * gy(pts)

    return monte_carlo(integrand, E, n_samples, seed, threads)


# --- geometric integrals ---------------------------------------------------------------

def _weight_values(weight, cm: ConeMap, pts: np.ndarray) -> np.ndarray:
    if weight is None:
        return np.ones(len(pts))
    if isinstance(weight, (int, float)):
        return np.full(len(pts), abs(float(weight)))
    if isinstance(weight, WeightFunctional):
        return np.abs(weight.numeric(cm, pts))
    if isinstance(weight, MultiPoly):
        return np.abs(weight.eval_many(pts))
    if callable(weight):
        return np.abs(np.asarray(weight(pts), dtype=float))
    raise IntegrateInputError(f"unsupported weight type {type(weight).__name__}")


def _phi_values(cm: ConeMap, pts: np.ndarray) -> np.ndarray:
    return np.stack([P.eval_many(pts) for P in cm.Phi], axis=1)


def _geom_integrand(cm, weight, s, Q, regularized, T, alpha):
    Qm = Q.entries if isinstance(Q, GLn) else np.asarray(Q, dtype=float)

    def f(pts):
        vals = _phi_values(cm, pts)
        w = _weight_values(weight, cm, pts)
        if regularized:
            proj = vals @ T.T if T is not None else vals
            return w / (1.0 + np.linalg.norm(proj @ Qm.T, axis=1) ** alpha)
        norm = np.linalg.norm(vals @ Qm.T, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(w == 0, 0.0, w / norm ** s)
        return np.where(np.isnan(out), np.inf, out)

    return f


def geom_integral(cm: ConeMap, weight, s: float, Q, E: Region, regularized: bool = False, V=None,
                  alpha: float | None = None, method: str = "auto", n_samples: int = 200_000,
                  seed: int = 0, threads: int | None = 1, ceiling: float = 1e8, order: int = 8,
                  cells: int = 32, check_divergence: bool = True) -> IntegralEstimate:
    """Integral over E of |w| / |Q Phi|^s, or of |w| / (1 + |Q T_V Phi|^alpha) when regularized.

    The integrand is clipped at ``ceiling`` and the clipped mass reported.  With
    ``check_divergence`` the estimate is repeated at double resolution; growth by
    more than 25% flags the result divergent.
    """
    if not s > 0:
        raise IntegrateInputError("s must be positive")
    if E.empty:
        return _zero_estimate(1, "TensorQuadrature" if method != "MonteCarlo" else "MonteCarlo")
    if E.dim != cm.d:
        raise IntegrateInputError(f"region has dimension {E.dim}, map has {cm.d} variables")
    T = None
    if regularized:
        if alpha is None or not alpha > 0:
            raise IntegrateInputError("regularized form needs alpha > 0")
        if V is not None:
            T = build_tv(V).matrix
    Qn = Q if isinstance(Q, GLn) else GLn(np.asarray(Q, dtype=float))
    target = T.shape[0] if T is not None else cm.n
    if Qn.n != target:
        raise IntegrateInputError(f"Q must be {target}x{target}")
    if weight is not None and not isinstance(weight, WeightFunctional) and _is_zero_function(weight):
        return _zero_estimate(1, "TensorQuadrature")
    f = _geom_integrand(cm, weight, s, Qn, regularized, T, alpha)
    est = integrate(f, E, method, n_samples, seed, threads, ceiling, order, cells)
    if check_divergence and est.value:
        finer = integrate(f, E, method, 2 * n_samples, seed + 1, threads, 4 * ceiling, order, 2 * cells)
        if finer.value > 1.25 * est.value:
            est = IntegralEstimate(est.value, est.std_error, est.n_samples, est.method,
                                   est.clipped_fraction, True)
    return est


# --- Oberlin scan ----------------------------------------------------------------------

@dataclass
class OberlinScan:
    sup: float
    worst_Q: GLn
    trace: list = field(default_factory=list)
    divergent: bool = False
    n_evals: int = 0
    clipped_fraction: float = 0.0

    def to_dict(self) -> dict:
        return {
            "sup": self.sup,
            "worst_Q": self.worst_Q.to_list(),
            "divergent": self.divergent,
            "n_evals": self.n_evals,
            "clipped_fraction": self.clipped_fraction,
            "trace": self.trace,
        }


def _theta_to_q(theta: np.ndarray, n: int) -> np.ndarray:
    logs = np.concatenate([theta[: n - 1], [-np.sum(theta[: n - 1])]])
    U = np.eye(n)
    U[np.triu_indices(n, 1)] = theta[n - 1:]
    return np.exp(logs)[:, None] * U


def _q_to_theta(Q: np.ndarray) -> np.ndarray:
    n = Q.shape[0]
    R = np.linalg.cholesky(Q.T @ Q).T
    dg = np.diag(R)
    U = R / dg[:, None]
    logs = np.log(dg)
    logs -= logs.mean()
    return np.concatenate([logs[: n - 1], U[np.triu_indices(n, 1)]])


def _scan_nodes(cm: ConeMap, weight, E: Region, method: str, order: int, cells: int, n_samples: int,
                seed: int):
    if method == "TensorQuadrature":
        pts, wts = gl_nodes(E, order, cells)
    else:
        rng = np.random.default_rng(seed)
        chunks = []
        for (lo, hi), vol, m in zip(E.boxes, E.box_volumes(), _alloc(E, n_samples)):
            p = lo + (hi - lo) * rng.random((m, lo.size))
            chunks.append((p, np.full(m, vol / m)))
        pts = np.concatenate([c[0] for c in chunks])
        wts = np.concatenate([c[1] for c in chunks])
        keep = E.satisfies_constraints(pts)
        mult = np.maximum(E.multiplicity(pts), 1)
        pts, wts = pts[keep], wts[keep] / mult[keep]
    wv = _weight_values(weight, cm, pts)
    live = wv > 0
    return _phi_values(cm, pts[live]), (wts * wv)[live]


def oberlin_scan(cm: ConeMap, weight, s: float, E: Region, budget: int = 400, seed: int = 0,
                 cond_cap: float = 1e2, n_samples: int = 100_000, order: int = 8, cells: int = 64,
                 ceiling: float = 1e12, growth: float = 1.5) -> OberlinScan:
    """Lower bound for sup_Q |Q|^(s/n) * integral over E of |w| / |Q Phi|^s.

    Half the budget draws random GL(n) elements with condition number at most
    ``cond_cap``; the rest refines the best one by coordinate search over
    log-diagonal and shear parameters (the objective only sees Q^T Q and is
    scale invariant), staying inside the cap.  The winner is re-evaluated on a
    grid of double resolution, which is the reported sup.  It is then pushed
    further along its own squashing direction; growth by ``growth`` at two
    successive steps flags the family divergent.
    """
    if budget < 1:
        raise IntegrateInputError("budget must be positive")
    if not s > 0:
        raise IntegrateInputError("s must be positive")
    n = cm.n
    method = "TensorQuadrature" if cm.d < 3 else "MonteCarlo"
    Pv, ww = _scan_nodes(cm, weight, E, method, order, cells, n_samples, seed)
    if not len(ww):
        return OberlinScan(0.0, GLn(np.eye(n)), [{"stage": "trivial", "sup": 0.0}], False, 0, 0.0)
    counter = {"evals": 0, "clipped": 0.0}

    def objective(Q, P=Pv, w=ww, count=True):
        counter["evals"] += count
        norm = np.linalg.norm(P @ Q.T, axis=1)
        with np.errstate(divide="ignore"):
            vals = w / norm ** s
        over = vals > ceiling
        if over.any():
            counter["clipped"] = max(counter["clipped"], float(np.sum(vals[over] - ceiling)))
            vals = np.where(over, ceiling, vals)
        return abs(np.linalg.det(Q)) ** (s / n) * float(np.sum(vals))

    trace: list = []
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    best_q, best_v = np.eye(n), objective(np.eye(n))
    for _ in range(max(1, budget // 2) - 1):
        Q = sample_gl(n, rng, (0.0, 0.0), cond_cap).entries
        v = objective(Q)
        if v > best_v:
            best_q, best_v = Q, v
    trace.append({"stage": "random", "evals": counter["evals"], "sup": float(best_v)})

    best_theta = _q_to_theta(best_q)
    step = np.full(best_theta.size, 0.5)
    while counter["evals"] < budget and best_theta.size and np.max(step) > 1e-3:
        improved = False
        for i in range(best_theta.size):
            for sign in (1.0, -1.0):
                if counter["evals"] >= budget:
                    break
                cand = best_theta.copy()
                cand[i] += sign * step[i]
                Q = _theta_to_q(cand, n)
                if np.linalg.cond(Q) > cond_cap:
                    continue
                v = objective(Q)
                if v > best_v:
                    best_v, best_theta = v, cand
                    step[i] *= 2.0
                    improved = True
                    break
            else:
                step[i] *= 0.5
        if not improved:
            step *= 0.5
    worst = _theta_to_q(best_theta, n) if best_theta.size else best_q
    trace.append({"stage": "refine", "evals": counter["evals"], "sup": float(best_v)})

    fine_P, fine_w = _scan_nodes(cm, weight, E, method, order, 2 * cells, 2 * n_samples, seed + 1)
    sup = objective(worst, fine_P, fine_w, count=False)
    trace.append({"stage": "verify", "sup": float(sup), "coarse_sup": float(best_v)})

    # push the best squashing direction further with |Q| fixed
    rungs = [best_v]
    for t in (2.0, 4.0):
        v = objective(_theta_to_q(t * best_theta, n), count=False) if best_theta.size else best_v
        rungs.append(v)
        trace.append({"stage": f"squash x{t:g}", "sup": float(v)})
    divergent = bool(rungs[0] > 0 and rungs[1] >= growth * rungs[0] and rungs[2] >= growth * rungs[1])
    frac = counter["clipped"] / best_v if best_v else 0.0
    return OberlinScan(float(sup), GLn(worst), trace, divergent, counter["evals"], frac)


def _alloc(E: Region, n: int) -> list[int]:
    vols = E.box_volumes()
    return [max(2, int(n * v / vols.sum())) for v in vols]


# --- epsilon-shell Radon average ----------------------------------------------------------

def _slice_region_y(ps: PhaseSystem, E: Region, x) -> Region:
    if E.empty:
        return E
    if E.dim == ps.d_r:
        return E
    if E.dim != ps.nvars:
        raise IntegrateInputError(f"region must have dimension {ps.d_r} or {ps.nvars}")
    return E.slice({i: float(v) for i, v in enumerate(x)})


def _sublevel_intervals(coeffs: np.ndarray, lo: float, hi: float, eps: float) -> list[tuple[float, float]]:
    """Pieces of [lo, hi] where |r(t)| <= eps for r with ascending coefficients."""
    c = np.trim_zeros(coeffs[::-1], "f")
    if c.size <= 1:
        val = c[0] if c.size else 0.0
        return [(lo, hi)] if abs(val) <= eps else []
    breaks = [lo, hi]
    for shift in (eps, -eps):
        cc = c.copy()
        cc[-1] -= shift
        for r in np.roots(cc):
            if abs(r.imag) <= 1e-9 * max(1.0, abs(r.real)) and lo < r.real < hi:
                breaks.append(float(r.real))
    breaks.sort()
    out = []
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b - a <= 0:
            continue
        mid = 0.5 * (a + b)
        if abs(np.polyval(c, mid)) <= eps:
            if out and abs(out[-1][1] - a) < 1e-15:
                out[-1] = (out[-1][0], b)
            else:
                out.append((a, b))
    return out


def _sylvester(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Sylvester matrix of two polynomials with descending coefficients."""
    m, n = len(p) - 1, len(q) - 1
    S = np.zeros((m + n, m + n))
    for i in range(n):
        S[i, i:i + m + 1] = p
    for i in range(m):
        S[n + i, i:i + n + 1] = q
    return S


def _section_kinks(C: np.ndarray, s_lo: float, s_hi: float, t_lo: float, t_hi: float, eps: float) -> list[float]:
    """Values of s where the section {t : |r(s, t)| <= eps} changes topology.

    C[i, j] is the coefficient of s^i t^j.  Candidates are tangencies (double
    roots in t of r -/+ eps, from the resultant with the t-derivative) and
    endpoint crossings r(s, t_lo or t_hi) = +/- eps.
    """
    out: list[float] = []
    ds, dt = C.shape[0] - 1, C.shape[1] - 1

    def keep(roots):
        for z in np.atleast_1d(roots):
            if abs(z.imag) <= 1e-7 * max(1.0, abs(z.real)) and s_lo < z.real < s_hi:
                out.append(float(z.real))

    for t0 in (t_lo, t_hi):
        c = C @ (t0 ** np.arange(dt + 1))
        for shift in (eps, -eps):
            cc = c.copy()
            cc[0] -= shift
            cc = np.trim_zeros(cc[::-1], "f")
            if cc.size > 1:
                keep(np.roots(cc))
    if dt >= 2 and ds >= 1:
        deg = (2 * dt - 1) * ds
        u = np.cos(np.pi * (np.arange(deg + 1) + 0.5) / (deg + 1))
        nodes = 0.5 * (s_lo + s_hi) + 0.5 * (s_hi - s_lo) * u
        for shift in (eps, -eps):
            vals = []
            for sv in nodes:
                c = (sv ** np.arange(ds + 1)) @ C
                c[0] -= shift
                p = c[::-1]
                vals.append(np.linalg.det(_sylvester(p, np.polyder(p))))
            vals = np.asarray(vals)
            if not np.any(vals):
                continue
            cheb = np.polynomial.Chebyshev.fit(u, vals / np.max(np.abs(vals)), deg, domain=[-1, 1])
            keep(0.5 * (s_lo + s_hi) + 0.5 * (s_hi - s_lo) * cheb.roots())
    return sorted(set(out))


def _adaptive_1d(f: Callable[[np.ndarray], np.ndarray], a: float, b: float, rel_tol: float, cells: int,
                 order: int = 8, max_intervals: int = 4000, breaks: Sequence[float] = ()) -> float:
    """Globally adaptive composite Gauss-Legendre: bisect the interval with the largest
    gap between its one-panel and two-panel rules until the total gap is below tolerance."""
    xg, wg = np.polynomial.legendre.leggauss(order)

    def rule(lo, hi):
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        return half * float(np.sum(wg * f(mid + half * xg)))

    def panel(lo, hi):
        mid = 0.5 * (lo + hi)
        whole, left, right = rule(lo, hi), rule(lo, mid), rule(mid, hi)
        return (-abs(left + right - whole), lo, hi, left + right)

    edges = np.union1d(np.linspace(a, b, cells + 1), [t for t in breaks if a < t < b])
    edges = edges[np.concatenate([[True], np.diff(edges) > 1e-12 * (b - a)])]
    heap = [panel(lo, hi) for lo, hi in zip(edges[:-1], edges[1:])]
    heapq.heapify(heap)
    err = sum(-p[0] for p in heap)
    total = sum(p[3] for p in heap)
    while len(heap) < max_intervals and err > rel_tol * abs(total):
        e, lo, hi, v = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        left, right = panel(lo, mid), panel(mid, hi)
        heapq.heappush(heap, left)
        heapq.heappush(heap, right)
        err += e - left[0] - right[0]
        total += left[3] + right[3] - v
    return math.fsum(p[3] for p in heap)


def radon_apply(ps: PhaseSystem, g, x, eps: float, E: Region, method: str = "sections",
                order: int = 8, cells: int = 16, rel_tol: float = 1e-6, n_samples: int = 1_000_000,
                seed: int = 0, threads: int | None = 1) -> float:
    """(1 / 2 eps) * integral over y of chi(|rho(x, y)| <= eps) chi_E g(y).

    ``method='sections'`` integrates the last y-coordinate over the exact
    sublevel intervals of the univariate polynomial (Gauss-Legendre on each
    piece) and the remaining coordinates by nested adaptive Gauss-Legendre;
    ``method='mc'`` samples plainly.
    """
    if not eps > 0:
        raise IntegrateInputError("eps must be positive")
    if len(x) != ps.d_l:
        raise IntegrateInputError(f"x has length {len(x)}, expected {ps.d_l}")
    Ey = _slice_region_y(ps, E, x)
    if Ey.empty:
        return 0.0
    fixed = {i: float(v) for i, v in enumerate(x)}
    r = ps.rho.fix(fixed)
    gy = as_function(g)
    if method == "mc":
        est = monte_carlo(lambda pts: (np.abs(r.eval_many(pts)) <= eps) * gy(pts), Ey, n_samples, seed, threads)
        return float(est.value / (2 * eps))
    if method != "sections":
        raise IntegrateInputError(f"unknown method {method!r}")
    dr = ps.d_r
    last = dr - 1
    # group terms of r by the power of the last coordinate
    deg = max((e[last] for e, _ in r.items()), default=0)
    parts = [MultiPoly(dr - 1, {e[:last]: c for e, c in r.items() if e[last] == k}) for k in range(deg + 1)]
    xg, wg = np.polynomial.legendre.leggauss(order)

    def sections(prefix: np.ndarray, lo: float, hi: float) -> np.ndarray:
        if dr > 1:
            coeffs = np.stack([p.eval_many(prefix) for p in parts], axis=1)
        else:
            coeffs = np.array([[float(p.constant_term()) for p in parts]])
        out = np.zeros(len(prefix))
        for k in range(len(prefix)):
            acc = 0.0
            for a, b in _sublevel_intervals(coeffs[k], lo, hi, eps):
                t = 0.5 * (a + b) + 0.5 * (b - a) * xg
                full = np.column_stack([np.repeat(prefix[k:k + 1], order, axis=0), t])
                mask = Ey.satisfies_constraints(full) / np.maximum(Ey.multiplicity(full), 1)
                acc += 0.5 * (b - a) * float(np.sum(wg * gy(full) * mask))
            out[k] = acc
        return out

    def level(j: int, prefix: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        if j == last:
            return sections(prefix, lo[last], hi[last])
        out = np.empty(len(prefix))
        for k in range(len(prefix)):
            base = prefix[k]

            def f(s, base=base):
                pts = np.column_stack([np.repeat(base[None, :], len(s), axis=0), s])
                return level(j + 1, pts, lo, hi)

            breaks: list[float] = []
            if j == last - 1:
                # seed the panels with the points where the innermost section changes shape
                r2 = r.fix({i: float(v) for i, v in enumerate(base)})
                C = np.zeros((r2.degree + 1, r2.degree + 1))
                for e, c in r2.items():
                    C[e[0], e[1]] += float(c)
                breaks = _section_kinks(C, lo[j], hi[j], lo[last], hi[last], eps)
            out[k] = _adaptive_1d(f, lo[j], hi[j], rel_tol, cells, order, breaks=breaks)
        return out

    total = 0.0
    for lo, hi in Ey.boxes:
        total += float(level(0, np.zeros((1, 0)), lo, hi)[0])
    return total / (2 * eps)


def radon_ladder(ps: PhaseSystem, g, x, E: Region, eps_values: Sequence[float], **kw) -> list[dict]:
    """Shell averages along an eps ladder with successive Richardson gaps."""
    out = []
    prev = None
    for eps in eps_values:
        v = radon_apply(ps, g, x, eps, E, **kw)
        out.append({"eps": float(eps), "value": float(v), "gap": None if prev is None else float(abs(v - prev))})
        prev = v
    return out


# --- image measures and widths ----------------------------------------------------------

@dataclass(frozen=True)
class ImageMeasure:
    value: float
    coarse_value: float
    resolution: float
    n_samples: int

    @property
    def agreement(self) -> float:
        """Relative gap between the two resolutions (0 when both vanish)."""
        if not self.value and not self.coarse_value:
            return 0.0
        return abs(self.coarse_value - self.value) / max(abs(self.value), abs(self.coarse_value))

    def __float__(self):
        return float(self.value)


def _lattice(E: Region, n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Regular lattice (corners included) on each box: (points, inside-mask) with shape (m,)*dim."""
    out = []
    for (lo, hi), m in zip(E.boxes, _alloc(E, n)):
        k = lo.size
        per = max(2, int(round(m ** (1.0 / k))) + 1)
        axes = [np.linspace(a, b, per) for a, b in zip(lo, hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        inside = E.satisfies_constraints(grid.reshape(-1, k)).reshape(grid.shape[:-1])
        out.append((grid, inside))
    return out


def _merged_cell_count(lo_idx: np.ndarray, hi_idx: np.ndarray) -> int:
    order = np.argsort(lo_idx, kind="stable")
    lo_idx, hi_idx = lo_idx[order], hi_idx[order]
    # running max of the previous upper ends; a new run starts past it
    prev_hi = np.maximum.accumulate(hi_idx)
    starts = np.concatenate([[True], lo_idx[1:] > prev_hi[:-1] + 1])
    run_id = np.cumsum(starts) - 1
    run_lo = lo_idx[starts]
    run_hi = np.zeros(run_lo.size, dtype=np.int64)
    np.maximum.at(run_hi, run_id, hi_idx)
    return int(np.sum(run_hi - run_lo + 1))


def image_measure(maps: Sequence[MultiPoly], E: Region, resolution: float, n_samples: int = 65_536,
                  seed: int = 0, detailed: bool = False):
    """Lebesgue measure of the image of E under (map_1, ..., map_k) by hit-grid counting.

    E is sampled on a regular lattice.  For a single map the image of each
    lattice edge is an interval, so every cell between neighbouring values is
    marked; for k >= 2 only cells hit by lattice points are.  Counts at
    ``resolution`` and at twice that are both kept; the fine one is the estimate.
    ``seed`` is accepted for interface symmetry (the lattice is deterministic).
    """
    if not maps:
        raise IntegrateInputError("need at least one map")
    if not resolution > 0:
        raise IntegrateInputError("resolution must be positive")
    k = len(maps)
    empty = ImageMeasure(0.0, 0.0, resolution, 1)
    if E.empty:
        return empty if detailed else 0.0
    lattices = _lattice(E, n_samples)
    n_pts = sum(int(g[1].sum()) for g in lattices)
    if not n_pts:
        return empty if detailed else 0.0
    values = []
    for grid, inside in lattices:
        flat = grid.reshape(-1, grid.shape[-1])
        values.append(np.stack([m.eval_many(flat) for m in maps], axis=-1).reshape(inside.shape + (k,)))
    hit = np.concatenate([v[i] for v, (_, i) in zip(values, lattices)])
    if np.ptp(hit, axis=0).max() == 0.0:
        res = ImageMeasure(0.0, 0.0, resolution, n_pts)
        return res if detailed else res.value

    def count(h):
        if k == 1:
            los, his = [], []
            for v, (_, inside) in zip(values, lattices):
                v = v[..., 0]
                for ax in range(v.ndim):
                    a = np.moveaxis(v, ax, 0)
                    ok = np.moveaxis(inside, ax, 0)
                    pair = ok[1:] & ok[:-1]
                    lo_v = np.minimum(a[1:], a[:-1])[pair]
                    hi_v = np.maximum(a[1:], a[:-1])[pair]
                    los.append(np.floor(lo_v / h).astype(np.int64))
                    his.append(np.floor(hi_v / h).astype(np.int64))
                single = np.floor(v[inside] / h).astype(np.int64)
                los.append(single)
                his.append(single)
            return _merged_cell_count(np.concatenate(los), np.concatenate(his)) * h
        cells = np.concatenate([np.floor(v[i] / h).astype(np.int64) for v, (_, i) in zip(values, lattices)])
        return len(np.unique(cells, axis=0)) * h ** k

    res = ImageMeasure(count(resolution), count(2 * resolution), resolution, n_pts)
    return res if detailed else res.value


def _width(maps, E: Region, fixed_idx: Sequence[int], resolution: float, n_slices: int, n_samples: int,
           seed: int) -> float:
    lo, hi = E.bounds()
    grids = [np.linspace(lo[i], hi[i], n_slices) for i in fixed_idx]
    best = 0.0
    for combo in np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, len(fixed_idx)):
        fixed = {i: float(v) for i, v in zip(fixed_idx, combo)}
        sl = E.slice(fixed)
        if sl.empty:
            continue
        smaps = [m.fix(fixed) for m in maps]
        best = max(best, image_measure(smaps, sl, resolution, n_samples, seed))
    return best


def width_L(maps: Sequence[MultiPoly], E: Region, d_l: int, resolution: float = 1e-3, n_slices: int = 9,
            n_samples: int = 8192, seed: int = 0) -> float:
    """ess-sup over y of the image measure of the x-section E^y (sampled on a slice grid)."""
    return _width(maps, E, list(range(d_l, E.dim)), resolution, n_slices, n_samples, seed)


def width_R(maps: Sequence[MultiPoly], E: Region, d_l: int, resolution: float = 1e-3, n_slices: int = 9,
            n_samples: int = 8192, seed: int = 0) -> float:
    """ess-sup over x of the image measure of the y-section E_x (sampled on a slice grid)."""
    return _width(maps, E, list(range(d_l)), resolution, n_slices, n_samples, seed)


def lp_norm(f, region: Region, p: float, method: str = "auto", n_samples: int = 200_000, seed: int = 0,
            threads: int | None = 1) -> IntegralEstimate:
    """||f||_p over a region, via the integration layer (std_error by the delta method)."""
    if not p > 0:
        raise IntegrateInputError("p must be positive")
    if _is_zero_function(f):
        return _zero_estimate(1, "TensorQuadrature")
    fn = as_function(f)
    est = integrate(lambda pts: np.abs(fn(pts)) ** p, region, method, n_samples, seed, threads)
    val = max(est.value, 0.0) ** (1.0 / p)
    err = (val / (p * est.value)) * est.std_error if est.value > 0 else 0.0
    return IntegralEstimate(val, err, est.n_samples, est.method, est.clipped_fraction)
