"""Network definitions, occupancy bookkeeping and admission policies.

A network has R call classes and J resources.  Class ``r`` arrives as a
Poisson stream of rate ``nu[r]``, holds for a time of mean ``1/mu[r]`` and
needs ``A[j, r]`` units of resource ``j`` (capacity ``C[j]``).

Admission policies are expressed on *free* capacity ``C - A @ n``.  Every
policy reduces to per-(resource, class) closed intervals ``[lo, hi]`` of
acceptable free capacity, with the feasibility bound ``free >= A[j, r]``
folded into ``lo``; :meth:`AdmissionPolicy.intervals` returns them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DimensionMismatch, ValidationError

INF = math.inf


@dataclass(frozen=True)
class CallClass:
    arrival_rate: float
    service_rate: float = 1.0
    value_weight: float = 1.0

    @property
    def kappa(self) -> float:
        return self.arrival_rate / self.service_rate


def _as_capacity(c):
    if c is None or (isinstance(c, str) and c.lower() in ("inf", "infinity")):
        return INF
    if isinstance(c, float) and math.isinf(c):
        return INF
    if isinstance(c, float) and c.is_integer():
        return int(c)
    return c


@dataclass(frozen=True)
class NetworkSpec:
    """Call classes, capacities and the J x R requirement matrix.

    Capacities are nonnegative integers; ``math.inf`` is accepted as an
    unbounded-resource sentinel, usable by the simulator only.
    """

    classes: tuple[CallClass, ...]
    capacities: tuple
    requirements: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "capacities", tuple(_as_capacity(c) for c in self.capacities))
        object.__setattr__(self, "requirements", tuple(tuple(row) for row in self.requirements))

    @classmethod
    def build(cls, nu, A, C, mu=None, weights=None) -> "NetworkSpec":
        nu = list(np.atleast_1d(np.asarray(nu, dtype=float)))
        R = len(nu)
        mu = [1.0] * R if mu is None else list(np.broadcast_to(np.asarray(mu, dtype=float), (R,)))
        weights = [1.0] * R if weights is None else list(np.broadcast_to(np.asarray(weights, dtype=float), (R,)))
        A = np.atleast_2d(np.asarray(A))
        classes = tuple(
            CallClass(float(n), float(m), float(w)) for n, m, w in zip(nu, mu, weights)
        )
        caps = tuple(c if (isinstance(c, float) and math.isinf(c)) else int(c) for c in np.atleast_1d(C).tolist())
        return cls(classes, caps, tuple(tuple(int(v) for v in row) for row in A.tolist()))

    @property
    def R(self) -> int:
        return len(self.classes)

    @property
    def J(self) -> int:
        return len(self.capacities)

    @cached_property
    def A(self) -> np.ndarray:
        a = np.array(self.requirements, dtype=np.int64).reshape(self.J, self.R)
        a.setflags(write=False)
        return a

    @cached_property
    def C(self) -> np.ndarray:
        c = np.array([float(c) for c in self.capacities])
        c.setflags(write=False)
        return c

    @cached_property
    def nu(self) -> np.ndarray:
        return np.array([c.arrival_rate for c in self.classes], dtype=float)

    @cached_property
    def mu(self) -> np.ndarray:
        return np.array([c.service_rate for c in self.classes], dtype=float)

    @cached_property
    def kappa(self) -> np.ndarray:
        return self.nu / self.mu

    @cached_property
    def weights(self) -> np.ndarray:
        return np.array([c.value_weight for c in self.classes], dtype=float)

    @property
    def finite(self) -> bool:
        return all(not (isinstance(c, float) and math.isinf(c)) for c in self.capacities)

    def int_capacities(self) -> np.ndarray:
        if not self.finite:
            raise ValueError("network has unbounded resources")
        return np.array(self.capacities, dtype=np.int64)

    def scaled(self, N) -> "NetworkSpec":
        """Kelly scaling: arrival rates and capacities multiplied by ``N``."""
        classes = tuple(
            CallClass(c.arrival_rate * N, c.service_rate, c.value_weight) for c in self.classes
        )
        caps = tuple(c if isinstance(c, float) else int(round(c * N)) for c in self.capacities)
        return NetworkSpec(classes, caps, self.requirements)

    def with_rates(self, nu) -> "NetworkSpec":
        classes = tuple(
            CallClass(float(n), c.service_rate, c.value_weight) for n, c in zip(nu, self.classes)
        )
        return NetworkSpec(classes, self.capacities, self.requirements)


def validate(spec: NetworkSpec) -> NetworkSpec:
    """Return ``spec`` unchanged if it is well formed, else raise ValidationError
    listing every violated invariant."""
    issues = []
    R, J = spec.R, spec.J
    if R == 0:
        issues.append(("DimensionMismatch", "network has no call classes"))
    rows = spec.requirements
    if len(rows) != J or any(len(row) != R for row in rows):
        shape = (len(rows), tuple(len(row) for row in rows))
        raise ValidationError(
            issues + [("DimensionMismatch", f"requirements must be {J}x{R}, got {shape}")]
        )
    for r, c in enumerate(spec.classes):
        if not (c.service_rate > 0) or not math.isfinite(c.service_rate):
            issues.append(("NonPositiveServiceRate", f"class {r}: mu={c.service_rate}"))
        if not (c.arrival_rate >= 0) or not math.isfinite(c.arrival_rate):
            issues.append(("NegativeArrivalRate", f"class {r}: nu={c.arrival_rate}"))
        if not (c.value_weight >= 0):
            issues.append(("NegativeWeight", f"class {r}: weight={c.value_weight}"))
    for j, c in enumerate(spec.capacities):
        if isinstance(c, float) and math.isinf(c) and c > 0:
            continue
        if not isinstance(c, (int, np.integer)) or c < 0:
            issues.append(("InvalidCapacity", f"resource {j}: C={c!r}"))
    A = np.array(rows, dtype=float).reshape(J, R) if R and J else np.zeros((J, R))
    if np.any(A < 0) or np.any(A != np.round(A)):
        issues.append(("InvalidRequirement", "requirements must be nonnegative integers"))
    for r in range(R):
        if not np.any(A[:, r] > 0):
            issues.append(("ZeroColumn", f"class {r} uses no resource"))
        for j in range(J):
            c = spec.capacities[j]
            if isinstance(c, (int, np.integer)) and A[j, r] > c:
                issues.append(
                    ("OversizedRequirement", f"A[{j},{r}]={int(A[j, r])} exceeds C[{j}]={c}")
                )
    if issues:
        raise ValidationError(issues)
    return spec


@dataclass(frozen=True)
class ResourceUsage:
    m: np.ndarray
    capacities: np.ndarray

    @property
    def free(self) -> np.ndarray:
        return self.capacities - self.m

    @property
    def feasible(self) -> bool:
        return bool(np.all(self.m >= 0) and np.all(self.m <= self.capacities))


def occupancy(spec: NetworkSpec, n) -> ResourceUsage:
    """Resource usage ``m = A n`` for a vector of calls in progress."""
    n = np.asarray(n)
    if n.shape != (spec.R,):
        raise DimensionMismatch(f"occupancy vector has shape {n.shape}, expected ({spec.R},)")
    return ResourceUsage(spec.A @ n.astype(np.int64), spec.C)


# --- admission policies -------------------------------------------------------


class AdmissionPolicy:
    """Base class; subclasses define :meth:`intervals`."""

    def intervals(self, spec: NetworkSpec) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(lo, hi)``, J x R float arrays bounding acceptable free capacity."""
        raise NotImplementedError

    def tail_accepts(self, spec: NetworkSpec) -> np.ndarray:
        """Boolean J x R: does class r accept all sufficiently large free capacities at j?"""
        _, hi = self.intervals(spec)
        return np.isinf(hi)

    def unrestricted(self, spec: NetworkSpec) -> np.ndarray:
        """Classes accepted whenever all their resources have large free capacity."""
        return np.all(self.tail_accepts(spec), axis=0)

    def to_dict(self) -> dict:
        raise NotImplementedError


def _feasibility_lo(spec: NetworkSpec) -> np.ndarray:
    return spec.A.astype(float)


@dataclass(frozen=True)
class Uncontrolled(AdmissionPolicy):
    def intervals(self, spec):
        lo = _feasibility_lo(spec)
        return lo, np.full_like(lo, INF)

    def to_dict(self):
        return {"type": "uncontrolled"}


@dataclass(frozen=True)
class Reservation(AdmissionPolicy):
    """Accept class r iff ``free_j >= k_r + A_jr`` on every resource it uses."""

    thresholds: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(int(k) for k in self.thresholds))
        if any(k < 0 for k in self.thresholds):
            raise ValidationError([("NegativeThreshold", f"thresholds {self.thresholds}")])

    def intervals(self, spec):
        if len(self.thresholds) != spec.R:
            raise DimensionMismatch(
                f"{len(self.thresholds)} reservation thresholds for {spec.R} classes"
            )
        A = _feasibility_lo(spec)
        k = np.array(self.thresholds, dtype=float)
        lo = np.where(A > 0, A + k[None, :], 0.0)
        return lo, np.full_like(lo, INF)

    def to_dict(self):
        return {"type": "reservation", "thresholds": list(self.thresholds)}


@dataclass(frozen=True)
class IntervalSets(AdmissionPolicy):
    """Per-(resource, class) intervals of acceptable free capacity.

    ``lo`` and ``hi`` are J x R; ``hi`` entries may be ``inf`` (or ``None`` in
    the constructor).  The feasibility bound ``free_j >= A_jr`` is always
    enforced on top of the given intervals.
    """

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(tuple(float(v) for v in row) for row in self.lo)
        hi = tuple(tuple(INF if v is None else float(v) for v in row) for row in self.hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def unconstrained(cls, J, R) -> "IntervalSets":
        return cls([[0.0] * R for _ in range(J)], [[INF] * R for _ in range(J)])

    def intervals(self, spec):
        lo = np.array(self.lo, dtype=float)
        hi = np.array(self.hi, dtype=float)
        if lo.shape != (spec.J, spec.R) or hi.shape != (spec.J, spec.R):
            raise DimensionMismatch(f"interval arrays must be {spec.J}x{spec.R}")
        return np.maximum(lo, _feasibility_lo(spec)), hi

    def to_dict(self):
        return {
            "type": "intervals",
            "lo": [list(row) for row in self.lo],
            "hi": [[None if math.isinf(v) else v for v in row] for row in self.hi],
        }


def admit(policy: AdmissionPolicy, usage: ResourceUsage, r: int, spec: NetworkSpec) -> bool:
    """Would a class-``r`` arrival be accepted at this resource usage?"""
    lo, hi = policy.intervals(spec)
    free = np.asarray(usage.free, dtype=float)
    return bool(np.all(free >= lo[:, r]) and np.all(free <= hi[:, r]))


def hunt_policy(k1: int, k2: int) -> IntervalSets:
    """Acceptance sets of the two-resource, three-class bistable example:
    class 1 only when ``1 <= free_1 <= k1``, class 2 only when ``1 <= free_2 <= k2``,
    class 3 whenever it fits."""
    lo = [[1, 0, 1], [0, 1, 1]]
    hi = [[k1, INF, INF], [INF, k2, INF]]
    return IntervalSets(lo, hi)


def hunt_network(nu, C) -> NetworkSpec:
    return NetworkSpec.build(nu, [[1, 0, 1], [0, 1, 1]], [C, C])


# --- JSON ---------------------------------------------------------------------


def policy_from_dict(d: dict | None) -> AdmissionPolicy:
    if d is None:
        return Uncontrolled()
    kind = d.get("type", "uncontrolled")
    if kind == "uncontrolled":
        return Uncontrolled()
    if kind == "reservation":
        return Reservation(tuple(d["thresholds"]))
    if kind == "intervals":
        return IntervalSets(d["lo"], d["hi"])
    raise ValidationError([("UnknownPolicy", f"policy type {kind!r}")])


def spec_to_dict(spec: NetworkSpec) -> dict:
    return {
        "classes": [
            {"nu": c.arrival_rate, "mu": c.service_rate, "weight": c.value_weight}
            for c in spec.classes
        ],
        "capacities": [None if isinstance(c, float) else c for c in spec.capacities],
        "requirements": [list(row) for row in spec.requirements],
    }


def spec_from_dict(d: dict) -> NetworkSpec:
    try:
        classes = tuple(
            CallClass(float(c["nu"]), float(c.get("mu", 1.0)), float(c.get("weight", 1.0)))
            for c in d["classes"]
        )
        return NetworkSpec(classes, tuple(d["capacities"]), tuple(tuple(r) for r in d["requirements"]))
    except (KeyError, TypeError) as exc:
        raise ValidationError([("MalformedDocument", f"missing or bad field: {exc}")]) from exc


def network_document(spec: NetworkSpec, policy: AdmissionPolicy | None = None) -> dict:
    doc = spec_to_dict(spec)
    doc["policy"] = (policy or Uncontrolled()).to_dict()
    return doc


def load_document(d: dict) -> tuple[NetworkSpec, AdmissionPolicy]:
    spec = validate(spec_from_dict(d))
    return spec, policy_from_dict(d.get("policy"))
