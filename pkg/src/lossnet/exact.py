"""Exact stationary analysis.

Uncontrolled networks have the truncated product-form law over the call-count
space; the KDR recursion gives the law of resource occupancies directly.
Controlled networks on small state spaces are solved by brute force from the
global balance equations.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve
from scipy.special import gammaln, logsumexp

from . import kernels
from .errors import InconsistentRecursion, NotIrreducible, StateSpaceTooLarge
from .model import AdmissionPolicy, NetworkSpec, Uncontrolled, validate

ENUMERATION_CAP = 10**7
KDR_CAP = 10**8
CONTROLLED_CAP = 2 * 10**5


@dataclass
class Distribution:
    """Probability vector over an ordered finite set of integer states.

    ``states`` is K x d.  Distributions over the full occupancy box may be
    stored with ``shape`` only, the states being generated on demand in C order.
    """

    probs: np.ndarray
    _states: np.ndarray | None = None
    shape: tuple | None = None
    kind: str = "n"

    @property
    def states(self) -> np.ndarray:
        if self._states is None:
            grids = np.indices(self.shape).reshape(len(self.shape), -1).T
            self._states = grids.astype(np.int64)
        return self._states

    def __len__(self):
        return len(self.probs)

    def grid(self) -> np.ndarray:
        """Probabilities reshaped onto the occupancy box (box-shaped supports only)."""
        if self.shape is None:
            raise ValueError("distribution is not stored on a box")
        return self.probs.reshape(self.shape)

    def as_dict(self) -> dict:
        return {tuple(int(v) for v in s): float(p) for s, p in zip(self.states, self.probs)}

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["state", "prob"])
        for s, p in zip(self.states, self.probs):
            w.writerow([";".join(str(int(v)) for v in s), repr(float(p))])
        return buf.getvalue() if fh is None else ""


@dataclass
class AcceptanceReport:
    P: np.ndarray
    mean_occupancy: np.ndarray
    method: str = "enumerate"
    notes: list = field(default_factory=list)

    @property
    def B(self) -> np.ndarray:
        return 1.0 - self.P

    def to_dict(self) -> dict:
        return {
            "P": [float(v) for v in self.P],
            "B": [float(v) for v in self.B],
            "mean_occupancy": [float(v) for v in self.mean_occupancy],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


# --- state spaces --------------------------------------------------------------


def _class_bounds(spec: NetworkSpec) -> np.ndarray:
    A, C = spec.A, spec.C
    bounds = []
    for r in range(spec.R):
        used = A[:, r] > 0
        b = np.min(np.floor(C[used] / A[used, r]))
        bounds.append(b)
    return np.array(bounds)


def enumerate_states(spec: NetworkSpec, cap: int = ENUMERATION_CAP) -> np.ndarray:
    """All feasible call-count vectors ``{n >= 0 : A n <= C}`` in lexicographic order."""
    validate(spec)
    bounds = _class_bounds(spec)
    if not np.all(np.isfinite(bounds)):
        raise StateSpaceTooLarge("unbounded resources cannot be enumerated")
    A = spec.A
    states = np.zeros((1, 0), dtype=np.int64)
    remaining = spec.int_capacities()[None, :].copy()
    for r in range(spec.R):
        col = A[:, r]
        used = col > 0
        room = np.min(remaining[:, used] // col[used], axis=1)
        counts = room + 1
        total = int(counts.sum())
        if total > cap:
            raise StateSpaceTooLarge(f"more than {cap} states after class {r}")
        parent = np.repeat(np.arange(len(states)), counts)
        starts = np.repeat(np.cumsum(counts) - counts, counts)
        nr = np.arange(total) - starts
        states = np.column_stack([states[parent], nr])
        remaining = remaining[parent] - nr[:, None] * col[None, :]
    return states


def _encode(states: np.ndarray, radix: np.ndarray) -> np.ndarray:
    code = np.zeros(len(states), dtype=np.int64)
    for d in range(states.shape[1]):
        code = code * radix[d] + states[:, d]
    return code


class _Index:
    """Lookup of integer state vectors in a state table (-1 when absent)."""

    def __init__(self, states: np.ndarray):
        self.radix = states.max(axis=0).astype(np.int64) + 2 if len(states) else np.ones(0, np.int64)
        codes = _encode(states, self.radix)
        self.order = np.argsort(codes)
        self.codes = codes[self.order]

    def find(self, query: np.ndarray) -> np.ndarray:
        ok = np.all((query >= 0) & (query < self.radix - 1), axis=1)
        codes = _encode(np.where(ok[:, None], query, 0), self.radix)
        pos = np.searchsorted(self.codes, codes)
        pos = np.minimum(pos, len(self.codes) - 1)
        hit = ok & (self.codes[pos] == codes)
        return np.where(hit, self.order[pos], -1)


def product_form(spec: NetworkSpec, cap: int = ENUMERATION_CAP) -> Distribution:
    """Stationary law of the uncontrolled network, ``pi(n) ∝ prod kappa^n / n!``."""
    states = enumerate_states(spec, cap)
    kappa = spec.kappa
    with np.errstate(divide="ignore", invalid="ignore"):
        logk = np.log(kappa)
        terms = np.where(states > 0, states * logk[None, :], 0.0) - gammaln(states + 1.0)
    logw = terms.sum(axis=1)
    probs = np.exp(logw - logsumexp(logw))
    return Distribution(probs, states, kind="n")


def check_detailed_balance(spec: NetworkSpec, dist: Distribution) -> float:
    """Largest violation of ``pi(n) n_r mu_r = pi(n - e_r) nu_r`` over the support."""
    states, probs = dist.states, dist.probs
    idx = _Index(states)
    worst = 0.0
    for r in range(spec.R):
        down = states.copy()
        down[:, r] -= 1
        pos = idx.find(down)
        below = np.where(pos >= 0, probs[np.maximum(pos, 0)], 0.0)
        below = np.where(states[:, r] > 0, below, 0.0)
        lhs = probs * states[:, r] * spec.mu[r]
        rhs = below * spec.nu[r]
        # the n_r = 0 equation is vacuous (both sides vanish by convention)
        res = np.where(states[:, r] > 0, np.abs(lhs - rhs), 0.0)
        worst = max(worst, float(res.max(initial=0.0)))
    return worst


def acceptance_exact(spec: NetworkSpec, method: str = "enumerate") -> AcceptanceReport:
    """Acceptance probabilities of the uncontrolled network.

    ``method="enumerate"`` sums the product form over states that can take one
    more call; ``method="kdr"`` sums the KDR occupancy law instead, in which
    case mean occupancies come from Little's law.
    """
    validate(spec)
    if method == "kdr":
        dist = kdr(spec)
        grid = dist.grid()
        P = np.array([_occupancy_mass(grid, spec.int_capacities() - spec.A[:, r]) for r in range(spec.R)])
        return AcceptanceReport(P, spec.kappa * P, method="kdr", notes=["mean occupancy from Little's law"])
    if method != "enumerate":
        raise ValueError(f"unknown method {method!r}")
    dist = product_form(spec)
    m = dist.states @ spec.A.T
    C = spec.int_capacities()
    P = np.array([dist.probs[np.all(m + spec.A[:, r] <= C, axis=1)].sum() for r in range(spec.R)])
    mean = dist.probs @ dist.states
    return AcceptanceReport(np.clip(P, 0.0, 1.0), mean, method="enumerate")


def _occupancy_mass(grid: np.ndarray, upper: np.ndarray) -> float:
    """Mass of the box ``0 <= m <= upper`` (empty when any bound is negative)."""
    if np.any(upper < 0):
        return 0.0
    sl = tuple(slice(0, int(u) + 1) for u in upper)
    return float(grid[sl].sum())


def erlang_b(kappa: float, C: int) -> float:
    """Erlang's loss formula ``E(kappa, C)`` by the overflow-free recurrence."""
    if kappa < 0 or C < 0:
        raise ValueError("kappa and C must be nonnegative")
    e = 1.0
    for c in range(1, int(C) + 1):
        e = kappa * e / (c + kappa * e)
    return e


def kdr(spec: NetworkSpec, cap: int = KDR_CAP, consistency_tol: float = 1e-9) -> Distribution:
    """Occupancy law over the box ``0 <= m <= C`` by the KDR recursion.

    Occupancies that no call mix can produce get probability 0.  Every
    recursion row with ``m_j > 0`` is checked against the row actually used.
    """
    validate(spec)
    if not spec.finite:
        raise StateSpaceTooLarge("unbounded resources")
    C = spec.int_capacities()
    size = float(np.prod(C + 1.0))
    if size > cap:
        raise StateSpaceTooLarge(f"occupancy space has {size:.3g} points (cap {cap})")
    probs, worst = kernels.kdr_nd(spec.kappa, spec.A, C)
    if worst > consistency_tol:
        raise InconsistentRecursion(f"recursion rows disagree by {worst:.3g} (relative)")
    return Distribution(probs, shape=tuple(int(c) + 1 for c in C), kind="m")


def aggregate(spec: NetworkSpec, dist: Distribution) -> np.ndarray:
    """Push a call-count law forward to occupancies on the full box (dense grid)."""
    C = spec.int_capacities()
    grid = np.zeros(tuple(int(c) + 1 for c in C))
    m = dist.states @ spec.A.T
    np.add.at(grid, tuple(m.T), dist.probs)
    return grid


def check_conditional_identity(spec: NetworkSpec, occupancy_law: np.ndarray | None = None) -> float:
    """Largest violation of ``kappa_r pi'(m - A_r) = E(n_r | m) pi'(m)``.

    ``E(n_r | m)`` is computed by brute force from the product form; the
    occupancy law under test defaults to the KDR output.
    """
    pf = product_form(spec)
    if occupancy_law is None:
        occupancy_law = kdr(spec).grid()
    grid = np.asarray(occupancy_law)
    brute = aggregate(spec, pf)
    C = spec.int_capacities()
    m = pf.states @ spec.A.T
    worst = 0.0
    for r in range(spec.R):
        num = np.zeros_like(brute)
        np.add.at(num, tuple(m.T), pf.probs * pf.states[:, r])
        with np.errstate(invalid="ignore", divide="ignore"):
            cond = np.where(brute > 0, num / brute, 0.0)
        rhs = cond * grid
        shifted = np.zeros_like(grid)
        a = spec.A[:, r]
        dst = tuple(slice(int(ar), int(c) + 1) for ar, c in zip(a, C))
        src = tuple(slice(0, int(c) + 1 - int(ar)) for ar, c in zip(a, C))
        shifted[dst] = grid[src]
        worst = max(worst, float(np.max(np.abs(spec.kappa[r] * shifted - rhs))))
    return worst


@dataclass(frozen=True)
class Asymptotics:
    limit: float
    refined: float | None
    free_capacity: float | None

    @property
    def refined_applicable(self) -> bool:
        return self.refined is not None


def single_resource_asymptotics(kappa: float, C: float) -> Asymptotics:
    """Large-capacity approximations to the acceptance probability of one link.

    Always returns ``min(1, C/kappa)``; in overload (``C < kappa``) also the
    second-order correction ``p - p / (kappa (1 - p))`` and the mean free
    capacity ``p / (1 - p)``.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    p = C / kappa
    if p < 1:
        return Asymptotics(p, p - p / (kappa * (1.0 - p)), p / (1.0 - p))
    return Asymptotics(1.0, None, None)


# --- controlled networks ------------------------------------------------------


def _admit_mask(spec, policy, states):
    lo, hi = policy.intervals(spec)
    free = spec.int_capacities()[None, :] - states @ spec.A.T
    masks = []
    for r in range(spec.R):
        ok = np.all((free >= lo[:, r]) & (free <= hi[:, r]), axis=1)
        masks.append(ok)
    return np.array(masks)


@dataclass
class ControlledSolution:
    dist: Distribution
    residual: float
    accept_mask: np.ndarray  # R x K: does state k accept class r

    def acceptance(self, spec: NetworkSpec) -> AcceptanceReport:
        P = self.accept_mask.astype(float) @ self.dist.probs
        mean = self.dist.probs @ self.dist.states
        return AcceptanceReport(np.clip(P, 0.0, 1.0), mean, method="global-balance")


def brute_force_controlled(
    spec: NetworkSpec,
    policy: AdmissionPolicy | None = None,
    cap: int = CONTROLLED_CAP,
    residual_tol: float = 1e-10,
) -> ControlledSolution:
    """Stationary law of the controlled chain by a direct global-balance solve.

    States are restricted to those reachable from the empty network; arrivals
    are gated by the policy and departures occur at rate ``n_r mu_r``.
    """
    policy = policy or Uncontrolled()
    states = enumerate_states(spec, cap)
    if len(states) > cap:
        raise StateSpaceTooLarge(f"{len(states)} states (cap {cap})")
    K = len(states)
    idx = _Index(states)
    accept = _admit_mask(spec, policy, states)
    rows, cols, vals = [], [], []
    for r in range(spec.R):
        up = states.copy()
        up[:, r] += 1
        tgt = idx.find(up)
        ok = accept[r] & (tgt >= 0) & (spec.nu[r] > 0)
        src = np.nonzero(ok)[0]
        rows.append(src)
        cols.append(tgt[src])
        vals.append(np.full(len(src), spec.nu[r]))
        down = states.copy()
        down[:, r] -= 1
        tgt = idx.find(down)
        src = np.nonzero(tgt >= 0)[0]
        rows.append(src)
        cols.append(tgt[src])
        vals.append(states[src, r] * spec.mu[r])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    rate = sparse.csr_matrix((vals, (rows, cols)), shape=(K, K))

    reach = csgraph.breadth_first_order(rate, 0, directed=True, return_predecessors=False)
    reach = np.sort(reach)
    sub = rate[reach][:, reach]
    ncomp, _ = csgraph.connected_components(sub, directed=True, connection="strong")
    if ncomp != 1:
        raise NotIrreducible(
            f"reachable set of {len(reach)} states splits into {ncomp} classes", reachable=states[reach]
        )
    Q = (sub - sparse.diags(np.asarray(sub.sum(axis=1)).ravel())).tocsc()
    n = len(reach)
    if n == 1:
        pi = np.ones(1)
    else:
        M = Q.T.tolil()
        M[0, :] = np.ones(n)
        b = np.zeros(n)
        b[0] = 1.0
        pi = spsolve(M.tocsc(), b)
        pi = np.maximum(pi, 0.0)
        pi /= pi.sum()
    residual = float(np.max(np.abs(Q.T @ pi))) if n > 1 else 0.0
    if residual > residual_tol:
        raise NotIrreducible(f"global balance residual {residual:.3g} exceeds {residual_tol}")
    dist = Distribution(pi, states[reach], kind="n")
    return ControlledSolution(dist, residual, accept[:, reach])


def acceptance_controlled(spec: NetworkSpec, policy: AdmissionPolicy) -> AcceptanceReport:
    return brute_force_controlled(spec, policy).acceptance(spec)


def stationary_mean_from_kdr(spec: NetworkSpec) -> np.ndarray:
    """Mean resource occupancies from the KDR law."""
    grid = kdr(spec).grid()
    out = []
    for j in range(spec.J):
        axis = tuple(k for k in range(spec.J) if k != j)
        marg = grid.sum(axis=axis) if axis else grid
        out.append(float(np.arange(len(marg)) @ marg))
    return np.array(out)


__all__ = [
    "AcceptanceReport",
    "Asymptotics",
    "ControlledSolution",
    "Distribution",
    "acceptance_controlled",
    "acceptance_exact",
    "aggregate",
    "brute_force_controlled",
    "check_conditional_identity",
    "check_detailed_balance",
    "enumerate_states",
    "erlang_b",
    "kdr",
    "product_form",
    "single_resource_asymptotics",
]
