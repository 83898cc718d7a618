"""Approximations for networks too large to solve exactly, and LP bounds."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import kernels
from .errors import NoConvergence, NotZeroOne, PreconditionError, StateSpaceTooLarge
from .exact import erlang_b
from .model import NetworkSpec, validate

MAX_ITER = 10**4
TOL = 1e-10
EFPA_TOL = 1e-12
KDR_1D_CAP = 10**6
OSCILLATION_PATIENCE = 10
DAMPING = 0.5


@dataclass
class FixedPointResult:
    method: str
    p: np.ndarray  # J (kelly, efpa) or J x R (reduced load)
    P: np.ndarray
    iterations: int
    residual: float
    converged: bool
    multiplicity_note: str = ""
    m_star: np.ndarray | None = None
    damped: bool = False
    notes: list = field(default_factory=list)

    @property
    def B(self) -> np.ndarray:
        return 1.0 - self.P

    def to_dict(self) -> dict:
        d = {
            "method": self.method,
            "p": np.asarray(self.p).tolist(),
            "P": [float(v) for v in self.P],
            "B": [float(v) for v in self.B],
            "iterations": int(self.iterations),
            "residual": float(self.residual),
            "converged": bool(self.converged),
            "damped": bool(self.damped),
            "multiplicity_note": self.multiplicity_note,
        }
        if self.m_star is not None:
            d["m_star"] = [float(v) for v in self.m_star]
        if self.notes:
            d["notes"] = list(self.notes)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass
class LPBound:
    P: np.ndarray
    objective: float
    binding: list
    duals: np.ndarray | None = None
    degenerate: bool = False
    certificate_gap: float = 0.0
    iterations: int = 0
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "P": [float(v) for v in self.P],
            "objective": float(self.objective),
            "binding": list(self.binding),
            "duals": None if self.duals is None else [float(v) for v in self.duals],
            "degenerate": bool(self.degenerate),
            "certificate_gap": float(self.certificate_gap),
            "iterations": int(self.iterations),
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _finite_rows(spec: NetworkSpec) -> np.ndarray:
    return np.isfinite(spec.C)


# --- Kelly's simple approximation --------------------------------------------


def _loads(A, kappa, p):
    """``L_j = sum_r A_jr kappa_r prod_k p_k^{A_kr}`` and the per-class thinning."""
    with np.errstate(divide="ignore"):
        thin = np.prod(np.power(p[:, None], A), axis=0)
    return A @ (kappa * thin), thin


def kelly_simple(spec: NetworkSpec, tol: float = TOL, max_iter: int = MAX_ITER) -> FixedPointResult:
    """Blocking from the most likely occupancy of the scaled network.

    Coordinate sweeps: each ``p_j`` is set to 1 if resource ``j`` is slack with
    ``p_j = 1``, and otherwise solved from ``L_j(p) = C_j`` by Brent's method.
    """
    validate(spec)
    A = spec.A.astype(float)
    kappa = spec.kappa
    C = spec.C
    J = spec.J
    p = np.ones(J)
    finite = _finite_rows(spec)
    change = math.inf
    it = 0
    while it < max_iter:
        it += 1
        change = 0.0
        for j in range(J):
            if not finite[j]:
                continue
            old = p[j]

            def excess(v, j=j):
                q = p.copy()
                q[j] = v
                return _loads(A, kappa, q)[0][j] - C[j]

            if excess(1.0) <= 0.0:
                new = 1.0
            elif C[j] <= 0.0:
                new = 0.0
            else:
                new = brentq(excess, 0.0, 1.0, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=500)
            p[j] = new
            change = max(change, abs(new - old))
        if change <= tol:
            break
    else:
        raise NoConvergence("kelly_simple sweeps did not settle", iterations=it, residual=change)
    L, thin = _loads(A, kappa, p)
    return FixedPointResult("kelly", p.copy(), thin, it, change, True, m_star=L)


# --- reduced load and EFPA -----------------------------------------------------


class _Iteration:
    """Successive substitution that switches to damping after sustained oscillation."""

    def __init__(self, tol, max_iter):
        self.tol = tol
        self.max_iter = max_iter

    def run(self, step, x0, name):
        x = x0
        prev = math.inf
        rises = 0
        damped = False
        for it in range(1, self.max_iter + 1):
            new = step(x)
            if damped:
                new = DAMPING * new + (1.0 - DAMPING) * x
            res = float(np.max(np.abs(new - x))) if x.size else 0.0
            x = new
            if res <= self.tol:
                return x, it, res, damped
            if res > prev:
                rises += 1
                if rises >= OSCILLATION_PATIENCE:
                    damped = True
            prev = res
        raise NoConvergence(f"{name} did not converge in {self.max_iter} iterations", iterations=self.max_iter, residual=res)


def _reduced_load_map(spec: NetworkSpec):
    A = spec.A
    kappa = spec.kappa
    J, R = A.shape
    finite = _finite_rows(spec)
    C = spec.C
    for j in range(J):
        if finite[j] and C[j] > KDR_1D_CAP:
            raise StateSpaceTooLarge(f"C_{j} = {C[j]:g} exceeds the 1-D recursion cap {KDR_1D_CAP}")
    users = [np.nonzero(A[j] > 0)[0] for j in range(J)]

    def step(p):
        out = np.ones_like(p)
        for j in range(J):
            if not finite[j] or len(users[j]) == 0:
                continue
            others = np.delete(p, j, axis=0)
            load = kappa * np.prod(others, axis=0)
            cls = users[j]
            Cj = int(C[j])
            q = kernels.kdr_1d(load[cls], A[j, cls], Cj)
            cdf = np.cumsum(q)
            out[j, cls] = cdf[Cj - A[j, cls]]
        return np.clip(out, 0.0, 1.0)

    return step


def reduced_load(spec: NetworkSpec, tol: float = TOL, max_iter: int = MAX_ITER, check_multiplicity: bool = True) -> FixedPointResult:
    """Knapsack / reduced-load fixed point over the pairs ``p_jr``.

    Iterates from ``p = 1``; with ``check_multiplicity`` a run seeded at
    ``p = 0.5`` is compared and any disagreement is noted.
    """
    validate(spec)
    step = _reduced_load_map(spec)
    it_ = _Iteration(tol, max_iter)
    p0 = np.ones((spec.J, spec.R))
    p, it, res, damped = it_.run(step, p0, "reduced_load")
    P = np.prod(p, axis=0)
    note = ""
    if check_multiplicity:
        try:
            q, *_ = it_.run(step, np.full_like(p0, 0.5), "reduced_load")
            gap = float(np.max(np.abs(q - p))) if q.size else 0.0
            if gap > 1e-6:
                note = f"second seed p=0.5 reached a different fixed point (max |dp| = {gap:.3g})"
        except NoConvergence:
            note = "second seed p=0.5 did not converge"
    return FixedPointResult("reduced_load", p, P, it, res, True, note, m_star=None, damped=damped)


def efpa(spec: NetworkSpec, tol: float = EFPA_TOL, max_iter: int = MAX_ITER) -> FixedPointResult:
    """Erlang fixed point for 0/1 requirement matrices."""
    validate(spec)
    A = spec.A
    if np.any(A > 1):
        raise NotZeroOne("efpa needs every requirement A_jr in {0, 1}")
    kappa = spec.kappa
    C = spec.C
    finite = _finite_rows(spec)
    J = spec.J
    Af = A.astype(float)

    def step(p):
        out = np.ones(J)
        for j in range(J):
            if not finite[j]:
                continue
            others = np.delete(np.power(p[:, None], Af), j, axis=0)
            thin = np.prod(others, axis=0)
            load = float(np.sum(Af[j] * kappa * thin))
            out[j] = 1.0 - erlang_b(load, int(C[j]))
        return out

    p, it, res, damped = _Iteration(tol, max_iter).run(step, np.ones(J), "efpa")
    P = np.prod(np.power(p[:, None], Af), axis=0)
    return FixedPointResult("efpa", p, P, it, res, True, damped=damped)


# --- LP bounds --------------------------------------------------------------------


class Degenerate(Warning):
    """A degenerate pivot occurred; the returned vertex is optimal but may not be unique."""


def _simplex_max(c, G, h, max_pivots=10_000):
    """Maximise ``c x`` subject to ``G x <= h``, ``x >= 0`` with ``h >= 0``.

    Dense tableau, slack starting basis, Bland's rule.  Returns
    ``(x, duals, pivots, degenerate)``.
    """
    m, n = G.shape
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = G
    T[:m, n : n + m] = np.eye(m)
    T[:m, -1] = h
    T[m, :n] = -c
    basis = list(range(n, n + m))
    degenerate = bool(np.any(h <= 1e-12))
    eps = 1e-12
    pivots = 0
    while True:
        enter = next((k for k in range(n + m) if T[m, k] < -eps), None)
        if enter is None:
            break
        col = T[:m, enter]
        rows = [i for i in range(m) if col[i] > eps]
        if not rows:
            raise NoConvergence("LP is unbounded", iterations=pivots)
        ratios = np.array([T[i, -1] / col[i] for i in rows])
        best = ratios.min()
        ties = [rows[i] for i in np.nonzero(ratios <= best + 1e-12)[0]]
        if len(ties) > 1 or best <= 1e-12:
            degenerate = True
        leave = min(ties, key=lambda i: basis[i])
        T[leave] /= T[leave, enter]
        for i in range(m + 1):
            if i != leave and T[i, enter] != 0.0:
                T[i] -= T[i, enter] * T[leave]
        basis[leave] = enter
        pivots += 1
        if pivots > max_pivots:
            raise NoConvergence("simplex exceeded the pivot limit", iterations=pivots)
    x = np.zeros(n + m)
    for i, b in enumerate(basis):
        x[b] = T[i, -1]
    duals = T[m, n : n + m].copy()
    return x[:n], duals, pivots, degenerate


def lp_bound_general(spec: NetworkSpec, weights=None, certify_tol: float = 1e-8) -> LPBound:
    """Upper bound on ``sum_r a_r kappa_r P_r`` over all admission policies.

    Solves ``max sum a_r kappa_r P_r`` s.t. ``sum_r A_jr kappa_r P_r <= C_j``
    and ``0 <= P <= 1``, then certifies optimality by primal/dual feasibility and
    complementary slackness.
    """
    validate(spec)
    a = spec.weights if weights is None else np.asarray(weights, dtype=float)
    kappa = spec.kappa
    R = spec.R
    rows = np.nonzero(_finite_rows(spec))[0]
    active = np.nonzero(kappa > 0)[0]
    notes = []
    if len(active) < R:
        notes.append("classes with kappa_r = 0 carry no load; P_r := 1 by convention")
    if len(rows) + R + len(active) > 200:
        raise PreconditionError("LP too large for the dense simplex (limit 200 variables + constraints)")
    Ak = spec.A[np.ix_(rows, active)] * kappa[active][None, :]
    G = np.vstack([Ak, np.eye(len(active))])
    h = np.concatenate([spec.C[rows], np.ones(len(active))])
    c = a[active] * kappa[active]
    x, y, pivots, degenerate = _simplex_max(c, G, h)
    x = np.clip(x, 0.0, 1.0)
    P = np.ones(R)
    P[active] = x

    slack = h - G @ x
    reduced = G.T @ y - c
    gap = max(
        0.0,
        float(np.max(-slack, initial=0.0)),
        float(np.max(-y, initial=0.0)),
        float(np.max(-reduced, initial=0.0)),
        float(np.max(np.abs(y * slack), initial=0.0)),
        float(np.max(np.abs(x * reduced), initial=0.0)),
    )
    if gap > certify_tol * max(1.0, float(np.max(np.abs(h)))):
        raise NoConvergence(f"LP optimality certificate failed (gap {gap:.3g})", iterations=pivots, residual=gap)
    binding = [f"resource {int(j)}" for j, s in zip(rows, slack[: len(rows)]) if s <= 1e-9 * max(1.0, spec.C[j])]
    binding += [f"P_{int(r)} <= 1" for r, s in zip(active, slack[len(rows) :]) if s <= 1e-9]
    if degenerate:
        notes.append("Degenerate: a degenerate pivot occurred; optimal vertex may not be unique")
    objective = float(np.sum(a * kappa * P))
    duals = np.zeros(spec.J)
    duals[rows] = y[: len(rows)]
    return LPBound(P, objective, binding, duals, degenerate, gap, pivots, notes)


def lp_bound_single(kappa1: float, kappa2: float, C: float, a1: float, a2: float) -> LPBound:
    """Closed-form optimum of the two-class single-link LP (requires ``a1 > a2 > 0``)."""
    if not a1 > a2 > 0:
        raise PreconditionError("lp_bound_single needs a1 > a2 > 0")
    if C <= 0 or kappa1 < 0 or kappa2 < 0:
        raise PreconditionError("need C > 0 and nonnegative loads")
    notes = []
    P1 = 1.0 if kappa1 == 0 else min(1.0, C / kappa1)
    if kappa2 == 0:
        P2 = 1.0
    elif P1 == 1.0:
        P2 = min(1.0, max(0.0, (C - kappa1) / kappa2))
    else:
        P2 = 0.0
    if kappa1 == 0 or kappa2 == 0:
        notes.append("classes with kappa_r = 0 carry no load; P_r := 1 by convention")
    load = kappa1 * P1 + kappa2 * P2
    # optimality conditions: slack link forces P = 1, and P_1 < 1 forces P_2 = 0
    if load < C - 1e-12 and not (P1 == 1.0 and P2 == 1.0):
        raise AssertionError("slack link with P < 1")
    if P1 < 1.0 and P2 != 0.0:
        raise AssertionError("P_1 < 1 with P_2 > 0")
    binding = []
    if load >= C - 1e-12:
        binding.append("resource 0")
    if P1 == 1.0 and kappa1 > 0:
        binding.append("P_0 <= 1")
    if P2 == 1.0 and kappa2 > 0:
        binding.append("P_1 <= 1")
    P = np.array([P1, P2])
    return LPBound(P, a1 * kappa1 * P1 + a2 * kappa2 * P2, binding, notes=notes)


def objective(spec: NetworkSpec, P, weights=None) -> float:
    """``sum_r a_r kappa_r P_r``."""
    a = spec.weights if weights is None else np.asarray(weights, dtype=float)
    return float(np.sum(a * spec.kappa * np.asarray(P, dtype=float)))


__all__ = [
    "Degenerate",
    "FixedPointResult",
    "LPBound",
    "efpa",
    "kelly_simple",
    "lp_bound_general",
    "lp_bound_single",
    "objective",
    "reduced_load",
]
