"""Fluid limits of the scaled network.

Counts are normalised by the scale ``N``, so ``x_r`` lies in
``X = {x >= 0 : A x <= C}`` and evolves by ``dx/dt = nu P(x) - mu x``.  Away
from the boundary of ``X`` the acceptance rates are 0/1 depending on whether a
class is admitted at large free capacity.  On a face where one resource is
saturated, the free capacity of that resource stays O(1) and fluctuates as a
Markov chain on the nonnegative integers; its stationary law gives ``P(x)``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import brentq, least_squares
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve
from scipy.special import logsumexp

from .errors import MethodError, PreconditionError, TruncationFailure
from .model import AdmissionPolicy, NetworkSpec, Uncontrolled, validate

BOUNDARY_REL = 1e-6
TAIL_MASS = 1e-8
M_MAX = 1 << 20
FIXED_POINT_TOL = 1e-8
STATIONARY_TOL = 1e-9
GRID_POINTS = 200


class SearchIncomplete(Warning):
    """The boundary search could not rule out missed roots."""


@dataclass(frozen=True)
class Undetermined:
    """Acceptance rates are not determined where two or more constraints bind."""

    active: tuple

    def __bool__(self):
        return False


@dataclass
class FluidState:
    x: np.ndarray

    def loads(self, spec: NetworkSpec) -> np.ndarray:
        return spec.A @ self.x

    def in_X(self, spec: NetworkSpec, tol: float = 1e-9) -> bool:
        return bool(np.all(self.x >= -tol) and np.all(self.loads(spec) <= spec.C + tol))


@dataclass
class FreeCapacityChain:
    """Free capacity of one saturated resource, a Markov chain on ``{0, 1, ...}``.

    A class-``r`` arrival removes ``sizes[r]`` units at rate ``down[r]`` when the
    level lies in ``[lo[r], hi[r]]``; a departure adds ``sizes[r]`` units at rate
    ``up[r]``.
    """

    sizes: np.ndarray
    up: np.ndarray
    down: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    truncation: int | None = None
    _solved: tuple | None = field(default=None, repr=False)

    @property
    def drift_at_infinity(self) -> float:
        tail = np.isinf(self.hi)
        return float(self.sizes @ self.up - self.sizes[tail] @ self.down[tail])

    @property
    def exists(self) -> bool:
        """Positive recurrence: the free capacity is pushed back from infinity."""
        return self.drift_at_infinity < 0.0

    @property
    def unit_jumps(self) -> bool:
        return bool(np.all(self.sizes[(self.up > 0) | (self.down > 0)] == 1))

    def _top(self) -> int:
        finite = np.concatenate([self.lo, self.hi[np.isfinite(self.hi)]])
        return int(max(finite.max(initial=0.0), 0.0))

    def accept_prob(self) -> np.ndarray:
        """``pi(lo_r <= level <= hi_r)`` for every class."""
        if self._solved is None:
            self._solved = self._solve()
        return self._solved[0]

    def distribution(self) -> np.ndarray:
        """Stationary probabilities up to the largest level computed."""
        if self._solved is None:
            self._solved = self._solve()
        return self._solved[1]

    def _solve(self):
        if not self.exists:
            raise MethodError("free-capacity chain is not positive recurrent")
        if self.unit_jumps:
            return self._birth_death()
        return self._truncated()

    def _down_rate(self, m):
        inside = (m >= self.lo) & (m <= self.hi)
        return float(np.sum(self.down[inside]))

    def _birth_death(self):
        u = float(np.sum(self.up[self.sizes == 1]))
        K = self._top()
        d = np.array([self._down_rate(m) if m > 0 else 0.0 for m in range(K + 1)])
        D = float(np.sum(self.down[np.isinf(self.hi)]))
        probs = np.zeros(K + 1)
        if u == 0.0:
            probs[0] = 1.0
            return self._interval_mass(probs, 0.0), probs
        # the chain cannot step down onto a level with no downward rate above it
        L = int(np.nonzero(d == 0.0)[0].max())
        logp = np.full(K + 1, -np.inf)
        logp[L] = 0.0
        for m in range(L + 1, K + 1):
            logp[m] = logp[m - 1] + math.log(u) - math.log(d[m])
        rho = u / D
        log_tail = logp[K] + math.log(rho) - math.log1p(-rho)
        logZ = logsumexp(np.append(logp[L:], log_tail))
        probs = np.exp(logp - logZ)
        tail_mass = math.exp(log_tail - logZ)
        return self._interval_mass(probs, tail_mass), np.append(probs, tail_mass)

    def _interval_mass(self, probs, tail_mass):
        K = len(probs) - 1
        levels = np.arange(K + 1)
        out = np.empty(len(self.sizes))
        for r in range(len(self.sizes)):
            inside = (levels >= self.lo[r]) & (levels <= self.hi[r])
            out[r] = probs[inside].sum() + (tail_mass if self.hi[r] > K else 0.0)
        return out

    def _solve_truncated(self, M):
        active = np.nonzero((self.up > 0) | (self.down > 0))[0]
        rows, cols, vals = [], [], []
        levels = np.arange(M + 1)
        for r in active:
            a = int(self.sizes[r])
            if self.up[r] > 0:
                src = levels[levels + a <= M]
                rows.append(src)
                cols.append(src + a)
                vals.append(np.full(len(src), self.up[r]))
            if self.down[r] > 0:
                src = levels[(levels >= self.lo[r]) & (levels <= self.hi[r]) & (levels >= a)]
                rows.append(src)
                cols.append(src - a)
                vals.append(np.full(len(src), self.down[r]))
        rate = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(M + 1, M + 1)
        )
        ncomp, label = csgraph.connected_components(rate, directed=True, connection="strong")
        cond = sparse.csr_matrix((np.ones(rate.nnz), (label[rate.nonzero()[0]], label[rate.nonzero()[1]])), shape=(ncomp, ncomp))
        cond.setdiag(0)
        cond.eliminate_zeros()
        closed = np.nonzero(np.diff(cond.indptr) == 0)[0]
        if len(closed) != 1:
            raise MethodError(f"truncated free-capacity chain has {len(closed)} closed classes")
        keep = np.nonzero(label == closed[0])[0]
        sub = rate[keep][:, keep]
        n = len(keep)
        pi = np.zeros(M + 1)
        if n == 1:
            pi[keep] = 1.0
            return pi
        Q = sub - sparse.diags(np.asarray(sub.sum(axis=1)).ravel())
        Mt = Q.T.tolil()
        Mt[0, :] = np.ones(n)
        b = np.zeros(n)
        b[0] = 1.0
        sol = np.maximum(spsolve(Mt.tocsc(), b), 0.0)
        pi[keep] = sol / sol.sum()
        return pi

    def _truncated(self):
        a_max = int(self.sizes.max())
        M = self.truncation or max(64, 2 * (self._top() + a_max))
        prev = None
        while M <= M_MAX:
            pi = self._solve_truncated(M)
            tail = pi[M - a_max + 1 :].sum()
            acc = self._interval_mass(pi, 0.0)
            if tail <= TAIL_MASS and prev is not None and np.max(np.abs(acc - prev)) <= TAIL_MASS:
                self.truncation = M
                return acc, pi
            prev = acc if tail <= TAIL_MASS else None
            M *= 2
        raise TruncationFailure(f"tail mass above {TAIL_MASS} at truncation level {M_MAX}")


class FluidModel:
    """Acceptance rates ``P(x)`` of a fixed spec and policy."""

    def __init__(self, spec: NetworkSpec, policy: AdmissionPolicy | None = None, boundary_rel: float = BOUNDARY_REL):
        validate(spec)
        self.spec = spec
        self.policy = policy or Uncontrolled()
        lo, hi = self.policy.intervals(spec)
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.tail = np.isinf(self.hi)
        self.P_interior = np.all(self.tail, axis=0).astype(float)
        self.eps = boundary_rel * spec.C
        self.A = spec.A.astype(float)
        self.tau = [np.all(np.delete(self.tail, j, axis=0), axis=0).astype(float) for j in range(spec.J)]
        self._unit = [self._unit_face(j) for j in range(spec.J)]

    def _unit_face(self, j):
        """Precomputed birth-death data for a face whose classes all use one unit."""
        spec = self.spec
        used = spec.A[j] > 0
        if np.any(spec.A[j][used] != 1) or not np.isfinite(spec.C[j]):
            return None
        ch = self.chain(j, np.zeros(spec.R))
        K = ch._top()
        d = np.array([ch._down_rate(m) if m > 0 else 0.0 for m in range(K + 1)])
        L = int(np.nonzero(d == 0.0)[0].max())
        with np.errstate(divide="ignore"):
            cum = np.concatenate([[0.0], np.cumsum(np.log(d[L + 1 :]))])
        levels = np.arange(K + 1)
        masks = (levels[None, :] >= ch.lo[:, None]) & (levels[None, :] <= ch.hi[:, None])
        return {
            "used": used,
            "D": float(np.sum(ch.down[np.isinf(ch.hi)])),
            "L": L,
            "K": K,
            "cum": cum,
            "steps": np.arange(K - L + 1, dtype=float),
            "masks": masks[:, L:].astype(float),
            "mask0": masks[:, 0].astype(float),
            "tail_in": (ch.hi > K).astype(float),
        }

    def _unit_accept(self, j, x):
        """Acceptance on face ``j`` via the birth-death closed form, or ``None`` if transient."""
        f = self._unit[j]
        u = float(np.dot(self.spec.mu[f["used"]], np.maximum(x[f["used"]], 0.0)))
        if not u < f["D"]:
            return None
        if u == 0.0:
            return self.tau[j] * f["mask0"]
        logp = f["steps"] * math.log(u) - f["cum"]
        rho = u / f["D"]
        log_tail = logp[-1] + math.log(rho) - math.log1p(-rho)
        top = max(float(logp.max()), log_tail)
        w = np.exp(logp - top)
        wt = math.exp(log_tail - top)
        Z = float(w.sum()) + wt
        mass = (f["masks"] @ w + f["tail_in"] * wt) / Z
        return self.tau[j] * mass

    def active(self, x) -> tuple:
        slack = self.spec.C - self.A @ x
        return tuple(int(j) for j in np.nonzero(slack <= self.eps)[0])

    def chain(self, j: int, x) -> FreeCapacityChain:
        spec = self.spec
        tau = np.all(np.delete(self.tail, j, axis=0), axis=0).astype(float)
        sizes = spec.A[j].astype(float)
        used = sizes > 0
        up = np.where(used, spec.mu * np.maximum(x, 0.0), 0.0)
        down = np.where(used, spec.nu * tau, 0.0)
        return FreeCapacityChain(sizes, up, down, self.lo[j].copy(), self.hi[j].copy())

    def acceptance(self, x):
        """``(P, active, chain)``; ``P`` is :class:`Undetermined` on multi-constraint faces."""
        x = np.asarray(x, dtype=float)
        act = self.active(x)
        if not act:
            return self.P_interior.copy(), act, None
        if len(act) > 1:
            return Undetermined(act), act, None
        j = act[0]
        if self._unit[j] is not None:
            P = self._unit_accept(j, x)
            if P is None:
                return self.P_interior.copy(), act, None
            return np.clip(P, 0.0, 1.0), act, None
        ch = self.chain(j, x)
        if not ch.exists:
            return self.P_interior.copy(), act, ch
        P = self.tau[j] * ch.accept_prob()
        return np.clip(P, 0.0, 1.0), act, ch

    def drift(self, x, P=None):
        if P is None:
            P, _, _ = self.acceptance(x)
            if isinstance(P, Undetermined):
                return P
        return self.spec.nu * P - self.spec.mu * x


def acceptance_rate(spec: NetworkSpec, policy: AdmissionPolicy | None, x):
    """Limiting acceptance probabilities at the fluid point ``x``, or :class:`Undetermined`."""
    return FluidModel(spec, policy).acceptance(x)[0]


# --- trajectories ---------------------------------------------------------------


@dataclass
class FluidTrajectory:
    t: np.ndarray
    x: np.ndarray
    P: np.ndarray
    active: list
    reason: str
    notes: list = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.x[-1]

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO() if fh is None else fh
        R = self.x.shape[1]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x_{r + 1}" for r in range(R)] + [f"P_{r + 1}" for r in range(R)] + ["active_constraints"])
        for t, x, P, act in zip(self.t, self.x, self.P, self.active):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x] + [repr(float(v)) for v in P] + [";".join(str(j + 1) for j in act)])
        return buf.getvalue() if fh is None else ""


def _project(model: FluidModel, x, x_new, eps):
    """Pull a slightly infeasible step back onto ``X``."""
    A, C = model.A, model.spec.C
    viol = A @ x_new - C
    if np.all(viol <= 0.0):
        return np.maximum(x_new, 0.0)
    step = x_new - x
    slack0 = C - A @ x
    rate = A @ step
    # constraints already active at x: remove the normal component instead
    normal = slack0 <= eps
    y = x_new.copy()
    bad = (viol > 0) & ~normal
    if np.any(bad):
        frac = np.min(slack0[bad] / rate[bad])
        y = x + max(frac, 0.0) * step
    for j in np.nonzero((A @ y - C > 0) & normal)[0]:
        a = A[j]
        y = y - a * (a @ y - C[j]) / (a @ a)
    return np.maximum(y, 0.0)


def integrate(
    spec: NetworkSpec,
    policy: AdmissionPolicy | None,
    x0,
    horizon: float,
    step: float | None = None,
    stop_tol: float = STATIONARY_TOL,
    record_every: int = 1,
    model: FluidModel | None = None,
) -> FluidTrajectory:
    """Classical RK4 on ``dx/dt = nu P(x) - mu x`` with boundary projection.

    ``step`` defaults to ``1e-3 / min(mu)``.  Steps whose overshoot of ``X``
    exceeds ``max(h^2, eps_b)`` are retried at half the step size.
    """
    model = model or FluidModel(spec, policy)
    x = np.asarray(x0, dtype=float).copy()
    if not FluidState(x).in_X(spec):
        raise PreconditionError("x0 lies outside the feasible region")
    if horizon <= 0:
        raise PreconditionError("horizon must be positive")
    h0 = step if step is not None else 1e-3 / float(np.min(spec.mu))
    eps = model.eps
    ts, xs, Ps, acts = [], [], [], []

    def record(t, x, P, act):
        ts.append(t)
        xs.append(x.copy())
        Ps.append(np.full(spec.R, np.nan) if isinstance(P, Undetermined) else P.copy())
        acts.append(act)

    t = 0.0
    P, act, _ = model.acceptance(x)
    record(t, x, P, act)
    reason = "horizon"
    notes = []
    k = 0
    while t < horizon - 1e-15:
        if isinstance(P, Undetermined):
            reason = "multi_constraint_boundary"
            break
        k1 = model.drift(x, P)
        if np.max(np.abs(k1)) <= stop_tol:
            reason = "fixed_point"
            break
        h = min(h0, horizon - t)
        while True:
            k2 = model.drift(x + 0.5 * h * k1)
            k3 = None if isinstance(k2, Undetermined) else model.drift(x + 0.5 * h * k2)
            k4 = None if k3 is None or isinstance(k3, Undetermined) else model.drift(x + h * k3)
            if k4 is not None and not isinstance(k4, Undetermined):
                x_new = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
                over = float(np.max(model.A @ x_new - spec.C))
                if over <= max(h * h, float(np.min(eps))):
                    break
            h *= 0.5
            if h < 1e-14:
                reason = "multi_constraint_boundary"
                notes.append(f"step size collapsed at t={t:.6g}")
                break
        if h < 1e-14:
            break
        x = _project(model, x, x_new, eps)
        t += h
        k += 1
        P, act, _ = model.acceptance(x)
        if k % record_every == 0:
            record(t, x, P, act)
    if ts[-1] != t:
        record(t, x, P, act)
    return FluidTrajectory(np.array(ts), np.array(xs), np.array(Ps), acts, reason, notes)


# --- fixed points -----------------------------------------------------------------


@dataclass
class FixedPoint:
    x: np.ndarray
    residual: float
    active: tuple
    kind: str
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "x": [float(v) for v in self.x],
            "residual": float(self.residual),
            "active_constraints": [int(j) for j in self.active],
            "kind": self.kind,
            "notes": list(self.notes),
        }


@dataclass
class FixedPointSearch:
    points: list
    grid_points: int
    search_incomplete: bool
    notes: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)

    def to_dict(self) -> dict:
        return {
            "fixed_points": [p.to_dict() for p in self.points],
            "grid_points": self.grid_points,
            "search_incomplete": self.search_incomplete,
            "notes": list(self.notes),
        }


def _residual(model: FluidModel, x):
    P, act, _ = model.acceptance(x)
    if isinstance(P, Undetermined):
        return math.inf, act
    return float(np.max(np.abs(model.spec.nu * P - model.spec.mu * x))), act


def _face_candidates(model: FluidModel, j: int, grid: int, rng):
    """Roots of the fixed-point equations on the face ``A_j x = C_j``."""
    spec = model.spec
    A = model.A
    C = spec.C[j]
    S = np.nonzero(A[j] > 0)[0]
    rest = np.nonzero(A[j] == 0)[0]
    others = np.delete(model.tail, j, axis=0)
    tau = np.all(others, axis=0).astype(float)
    base = np.zeros(spec.R)
    base[rest] = spec.kappa[rest] * tau[rest]
    incomplete = False

    def point(w):
        # w on the simplex over S: class s carries a share w_s of the capacity
        x = base.copy()
        x[S] = w * C / A[j, S]
        return x

    def mismatch(x):
        ch = model.chain(j, x)
        if not ch.exists:
            return None
        P = tau * ch.accept_prob()
        return spec.kappa[S] * P[S] - x[S]

    found = []
    if len(S) == 1:
        found.append(point(np.ones(1)))
    elif len(S) == 2:
        def g(t):
            m = mismatch(point(np.array([t, 1.0 - t])))
            return np.nan if m is None else m[0]

        ts = np.linspace(0.0, 1.0, grid)
        gs = np.array([g(t) for t in ts])
        for i in range(grid):
            if gs[i] == 0.0:
                found.append(point(np.array([ts[i], 1 - ts[i]])))
        for i in range(grid - 1):
            a, b = gs[i], gs[i + 1]
            if np.isfinite(a) and np.isfinite(b) and a * b < 0:
                t = brentq(g, ts[i], ts[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps)
                found.append(point(np.array([t, 1 - t])))
    else:
        incomplete = True
        k = len(S)

        def resid(z):
            w = np.exp(z - z.max())
            w /= w.sum()
            m = mismatch(point(w))
            return np.full(k, 10.0) if m is None else m

        for _ in range(8 * k):
            z0 = rng.normal(size=k)
            sol = least_squares(resid, z0, xtol=1e-15, ftol=1e-15, gtol=1e-15)
            w = np.exp(sol.x - sol.x.max())
            found.append(point(w / w.sum()))
    return found, incomplete


def fixed_points(
    spec: NetworkSpec,
    policy: AdmissionPolicy | None = None,
    grid: int = GRID_POINTS,
    tol: float = FIXED_POINT_TOL,
    seed: int = 0,
) -> FixedPointSearch:
    """Solutions of ``nu_r P_r(x) = mu_r x_r`` found by the interior candidate
    plus a search on every single-constraint face."""
    model = FluidModel(spec, policy)
    rng = np.random.default_rng(seed)
    points: list[FixedPoint] = []
    notes = []
    incomplete = False

    def add(x, kind, extra=()):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        if not FluidState(x).in_X(spec, tol=1e-9):
            return
        res, act = _residual(model, x)
        if res > tol:
            return
        for p in points:
            if np.max(np.abs(p.x - x)) <= 1e-7:
                return
        points.append(FixedPoint(x, res, act, kind, list(extra)))

    add(spec.kappa * model.P_interior, "interior")
    for j in range(spec.J):
        if not np.isfinite(spec.C[j]):
            continue
        cands, inc = _face_candidates(model, j, grid, rng)
        incomplete |= inc
        for x in cands:
            _, act = _residual(model, x)
            if act == (j,):
                add(x, f"face {j}")

    if isinstance(model.policy, Uncontrolled) and not points:
        from .approx import kelly_simple

        k = kelly_simple(spec)
        x = spec.kappa * k.P
        act = model.active(x)
        if len(act) > 1:
            points.append(
                FixedPoint(x, math.nan, act, "kelly corner", ["several constraints bind; taken from kelly_simple, residual not evaluable"])
            )
    if incomplete:
        notes.append("SearchIncomplete: faces with three or more classes searched by multistart least squares")
    notes.append(f"two-class faces scanned on a {grid}-point grid")
    return FixedPointSearch(points, grid, incomplete, notes)


# --- Lyapunov analysis --------------------------------------------------------------


@dataclass(frozen=True)
class LyapunovValues:
    f: float
    g: float


def lyapunov_f(spec: NetworkSpec, x) -> float:
    x = np.asarray(x, dtype=float)
    nu, mu = spec.nu, spec.mu
    out = 0.0
    for r in range(spec.R):
        if x[r] <= 0.0:
            continue
        if nu[r] == 0.0:
            return -math.inf
        out += x[r] * math.log(nu[r]) - x[r] * math.log(mu[r] * x[r]) + x[r]
    return out


def lyapunov(spec: NetworkSpec, x, model: FluidModel | None = None) -> LyapunovValues:
    """``f(x)`` and its rate of change ``g(x)`` along the uncontrolled fluid flow."""
    model = model or FluidModel(spec, Uncontrolled())
    x = np.asarray(x, dtype=float)
    f = lyapunov_f(spec, x)
    P, _, _ = model.acceptance(x)
    if isinstance(P, Undetermined):
        return LyapunovValues(f, math.nan)
    drift = spec.nu * P - spec.mu * x
    g = 0.0
    for r in range(spec.R):
        if drift[r] == 0.0:
            continue
        if x[r] <= 0.0:
            g = math.inf if spec.nu[r] > 0 else g
            continue
        if spec.nu[r] == 0.0:
            g += math.inf
            continue
        g += (math.log(spec.nu[r]) - math.log(spec.mu[r] * x[r])) * drift[r]
    return LyapunovValues(f, g)


def reservation_limit(spec: NetworkSpec, priorities=None) -> np.ndarray:
    """Acceptance probabilities under complete prioritisation on one resource.

    ``priorities`` lists class indices from highest to lowest priority
    (default: the class order).
    """
    if spec.J != 1:
        raise PreconditionError("reservation_limit needs a single resource")
    order = list(range(spec.R)) if priorities is None else list(priorities)
    if sorted(order) != list(range(spec.R)):
        raise PreconditionError("priorities must be a permutation of the classes")
    load = spec.A[0] * spec.kappa
    C = float(spec.C[0])
    P = np.zeros(spec.R)
    used = 0.0
    for pos, r in enumerate(order):
        if used + load[r] <= C:
            P[r] = 1.0
            used += load[r]
            continue
        P[r] = min(1.0, max(0.0, (C - used) / load[r]))
        break
    return P


__all__ = [
    "FixedPoint",
    "FixedPointSearch",
    "FluidModel",
    "FluidState",
    "FluidTrajectory",
    "FreeCapacityChain",
    "LyapunovValues",
    "SearchIncomplete",
    "Undetermined",
    "acceptance_rate",
    "fixed_points",
    "integrate",
    "lyapunov",
    "lyapunov_f",
    "reservation_limit",
]
