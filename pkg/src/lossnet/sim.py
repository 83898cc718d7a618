"""Discrete-event simulation of loss networks.

Replication ``i`` of an experiment with master seed ``s`` draws from
``PCG64(SeedSequence(s, spawn_key=(i,)))``; all randomness inside a
replication comes from that one generator, so (inputs, seed) fix every output.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import stats

from . import kernels
from .errors import InvalidHorizon, PreconditionError
from .model import AdmissionPolicy, NetworkSpec, Uncontrolled, validate

GENERATOR = "numpy.random.PCG64"
INF_CAP = kernels.INF_CAP


# --- topologies -----------------------------------------------------------------


@dataclass(frozen=True)
class Generic:
    """Fixed single route per class taken from the requirement matrix."""

    spec: NetworkSpec

    def network(self) -> NetworkSpec:
        return self.spec

    def routes(self):
        A = self.spec.A
        routes = []
        for r in range(self.spec.R):
            res = np.nonzero(A[:, r] > 0)[0]
            routes.append([[(int(j), int(A[j, r])) for j in res]])
        return routes


@dataclass(frozen=True)
class FullyConnected:
    """``N`` nodes, one link of capacity ``C`` per node pair, one class per pair.

    Class ``p`` is the ``p``-th pair ``(u, v)``, ``u < v``, in lexicographic order;
    its first route is the direct link, the others are two-link routes via each
    transit node ``w`` in increasing order.
    """

    N: int
    C: int
    nu: float | tuple = 1.0
    mu: float = 1.0

    def __post_init__(self):
        if self.N < 3:
            raise PreconditionError("a fully connected network needs at least 3 nodes")

    @property
    def pairs(self) -> list:
        return list(combinations(range(self.N), 2))

    @property
    def K(self) -> int:
        return self.N * (self.N - 1) // 2

    def link(self, u: int, v: int) -> int:
        if u == v:
            raise ValueError("no link from a node to itself")
        u, v = min(u, v), max(u, v)
        # position of (u, v) in lexicographic pair order
        return u * self.N - u * (u + 1) // 2 + (v - u - 1)

    def transit_nodes(self, u: int, v: int) -> list:
        return [w for w in range(self.N) if w != u and w != v]

    def rates(self) -> np.ndarray:
        nu = np.broadcast_to(np.asarray(self.nu, dtype=float), (self.K,))
        return nu.copy()

    def network(self) -> NetworkSpec:
        A = np.eye(self.K, dtype=int)
        return NetworkSpec.build(self.rates(), A, [self.C] * self.K, mu=[self.mu] * self.K)

    def routes(self):
        out = []
        for u, v in self.pairs:
            rs = [[(self.link(u, v), 1)]]
            for w in self.transit_nodes(u, v):
                rs.append([(self.link(u, w), 1), (self.link(w, v), 1)])
            out.append(rs)
        return out


@dataclass(frozen=True)
class Star:
    """``K`` links of capacity ``C`` at a hub; a size-``r`` call holds one unit on
    each of ``r`` distinct links.  ``profile[r]`` is the rate of size-``r`` calls
    offered to each link, split evenly over the ``C(K, r)`` link subsets."""

    K: int
    C: int
    profile: dict
    mu: float = 1.0

    def classes(self) -> list:
        out = []
        for size in sorted(self.profile):
            size = int(size)
            if not 1 <= size <= self.K:
                raise PreconditionError(f"call size {size} outside 1..{self.K}")
            for subset in combinations(range(self.K), size):
                out.append(subset)
        return out

    def network(self) -> NetworkSpec:
        subsets = self.classes()
        A = np.zeros((self.K, len(subsets)), dtype=int)
        nu = []
        for r, sub in enumerate(subsets):
            A[list(sub), r] = 1
            size = len(sub)
            nu.append(float(self.profile[size]) / math.comb(self.K - 1, size - 1))
        return NetworkSpec.build(nu, A, [self.C] * self.K, mu=[self.mu] * len(subsets))

    def routes(self):
        return Generic(self.network()).routes()


# --- routing and holding -----------------------------------------------------


@dataclass(frozen=True)
class Fixed:
    def to_dict(self):
        return {"type": "fixed"}


@dataclass(frozen=True)
class DAR:
    """Sticky random alternative routing with reservation ``k`` on alternatives."""

    k: int = 0

    def to_dict(self):
        return {"type": "dar", "k": self.k}


@dataclass(frozen=True)
class LBA:
    """Least-busy alternative routing with reservation ``k`` on alternatives."""

    k: int = 0

    def to_dict(self):
        return {"type": "lba", "k": self.k}


def routing_from_dict(d):
    if d is None:
        return Fixed()
    kind = d.get("type", "fixed")
    if kind == "fixed":
        return Fixed()
    if kind == "dar":
        return DAR(int(d.get("k", 0)))
    if kind == "lba":
        return LBA(int(d.get("k", 0)))
    raise PreconditionError(f"unknown routing type {kind!r}")


@dataclass(frozen=True)
class HoldingTimeDist:
    """Holding-time law with mean ``1/mu_r``.

    ``kind`` is ``exponential``, ``deterministic`` or ``hyperexponential``.  The
    two-phase law uses balanced means: phase 1 with probability ``p`` and mean
    ``1/(2 p mu)``, phase 2 with mean ``1/(2 (1-p) mu)``; ``p`` is set directly
    or from the squared coefficient of variation ``scv >= 1``.
    """

    kind: str = "exponential"
    scv: float | None = None
    p: float | None = None

    def __post_init__(self):
        if self.kind not in ("exponential", "deterministic", "hyperexponential"):
            raise PreconditionError(f"unknown holding-time law {self.kind!r}")
        if self.kind == "hyperexponential":
            if self.p is None and self.scv is None:
                raise PreconditionError("hyperexponential needs scv or p")
            p = self.phase_p
            if not 0.0 < p < 1.0:
                raise PreconditionError("phase probability must lie in (0, 1)")

    @classmethod
    def exponential(cls):
        return cls("exponential")

    @classmethod
    def deterministic(cls):
        return cls("deterministic")

    @classmethod
    def hyperexponential(cls, scv=None, p=None):
        return cls("hyperexponential", scv=scv, p=p)

    @property
    def phase_p(self) -> float:
        if self.p is not None:
            return float(self.p)
        c2 = float(self.scv)
        if c2 < 1.0:
            raise PreconditionError("hyperexponential needs scv >= 1")
        return 0.5 * (1.0 + math.sqrt((c2 - 1.0) / (c2 + 1.0)))

    @property
    def code(self) -> int:
        return {"exponential": 0, "deterministic": 1, "hyperexponential": 2}[self.kind]

    def kernel_params(self):
        if self.kind != "hyperexponential":
            return self.code, 0.0, 1.0, 1.0
        p = self.phase_p
        return 2, p, 1.0 / (2.0 * p), 1.0 / (2.0 * (1.0 - p))

    @property
    def squared_cv(self) -> float:
        if self.kind == "exponential":
            return 1.0
        if self.kind == "deterministic":
            return 0.0
        p = self.phase_p
        f1, f2 = 1.0 / (2.0 * p), 1.0 / (2.0 * (1.0 - p))
        return 2.0 * (p * f1 * f1 + (1 - p) * f2 * f2) - 1.0

    def sample(self, mu: float, size: int, rng) -> np.ndarray:
        """Direct vectorised draws (used for checking moments, not by the simulator)."""
        if self.kind == "exponential":
            return rng.exponential(1.0 / mu, size)
        if self.kind == "deterministic":
            return np.full(size, 1.0 / mu)
        _, p, f1, f2 = self.kernel_params()
        ph = rng.random(size) < p
        return rng.exponential(1.0, size) * np.where(ph, f1, f2) / mu

    def to_dict(self):
        d = {"type": self.kind}
        if self.scv is not None:
            d["scv"] = self.scv
        if self.p is not None:
            d["p"] = self.p
        return d


def holding_from_dict(d):
    if d is None:
        return HoldingTimeDist()
    return HoldingTimeDist(d.get("type", "exponential"), scv=d.get("scv"), p=d.get("p"))


# --- route-level decisions (reference implementations) -----------------------


@dataclass(frozen=True)
class RouteDecision:
    kind: str  # direct | via | reject
    via: int | None = None


def dar_route(topology: FullyConnected, free, pair, table: dict, k: int, rng) -> RouteDecision:
    """One DAR decision.  ``free`` holds per-link free capacity and ``table``
    maps each pair to its current preferred transit node (updated on rejection)."""
    u, v = pair
    if free[topology.link(u, v)] >= 1:
        return RouteDecision("direct")
    w = table[(u, v)]
    if free[topology.link(u, w)] >= k + 1 and free[topology.link(w, v)] >= k + 1:
        return RouteDecision("via", w)
    cands = topology.transit_nodes(u, v)
    table[(u, v)] = cands[min(int(rng.random() * len(cands)), len(cands) - 1)]
    return RouteDecision("reject")


def lba_route(topology: FullyConnected, occupancy, pair, k: int) -> RouteDecision:
    """One least-busy-alternative decision from per-link occupancies."""
    u, v = pair
    C = topology.C
    if C - occupancy[topology.link(u, v)] >= 1:
        return RouteDecision("direct")
    best, best_occ = None, None
    for w in topology.transit_nodes(u, v):
        occ = max(occupancy[topology.link(u, w)], occupancy[topology.link(w, v)])
        if best_occ is None or occ < best_occ:
            best, best_occ = w, occ
    if best is not None and C - best_occ >= k + 1:
        return RouteDecision("via", best)
    return RouteDecision("reject")


# --- statistics ---------------------------------------------------------------------


@dataclass
class Histogram:
    bin_lo: np.ndarray
    bin_hi: np.ndarray
    weight: np.ndarray
    statistic: str = ""

    @property
    def mode(self) -> float:
        """Midpoint of the heaviest bin (integer levels ``bin_lo .. bin_hi - 1``)."""
        i = int(np.argmax(self.weight))
        return 0.5 * (self.bin_lo[i] + self.bin_hi[i] - 1)

    @property
    def bin_width(self) -> float:
        return float(self.bin_hi[0] - self.bin_lo[0]) if len(self.bin_lo) else 0.0

    def nonzero_bins(self) -> int:
        return int(np.count_nonzero(self.weight))

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "weight"])
        for a, b, c in zip(self.bin_lo, self.bin_hi, self.weight):
            w.writerow([int(a), int(b), repr(float(c))])
        return buf.getvalue() if fh is None else ""


@dataclass
class SimStats:
    offered: np.ndarray
    accepted: np.ndarray
    accepted_alt: np.ndarray
    mean_occupancy: np.ndarray
    mean_resource_occupancy: np.ndarray
    P: np.ndarray
    P_halfwidth: np.ndarray
    occupancy_halfwidth: np.ndarray
    replications: int
    seeds: list
    warmup: float
    horizon: float
    generator: str = GENERATOR
    backend: str = ""
    P_reps: np.ndarray | None = None
    occupancy_reps: np.ndarray | None = None
    hist: list = field(default_factory=list)
    n_events: int = 0

    @property
    def blocked(self) -> np.ndarray:
        return self.offered - self.accepted

    @property
    def accepted_direct(self) -> np.ndarray:
        return self.accepted - self.accepted_alt

    @property
    def B(self) -> np.ndarray:
        return 1.0 - self.P

    def ci(self, r: int) -> tuple:
        return float(self.P[r] - self.P_halfwidth[r]), float(self.P[r] + self.P_halfwidth[r])

    def covers(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return np.abs(self.P - values) <= self.P_halfwidth

    def littles_law_gap(self, kappa) -> np.ndarray:
        """``|L - kappa P|`` divided by the combined 95% half-width."""
        kappa = np.asarray(kappa, dtype=float)
        diff = np.abs(self.mean_occupancy - kappa * self.P)
        hw = np.sqrt(self.occupancy_halfwidth**2 + (kappa * self.P_halfwidth) ** 2)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(hw > 0, diff / hw, np.where(diff > 0, np.inf, 0.0))

    def to_dict(self) -> dict:
        return {
            "offered": self.offered.tolist(),
            "accepted": self.accepted.tolist(),
            "blocked": self.blocked.tolist(),
            "accepted_direct": self.accepted_direct.tolist(),
            "accepted_alternative": self.accepted_alt.tolist(),
            "mean_occupancy": [float(v) for v in self.mean_occupancy],
            "mean_resource_occupancy": [float(v) for v in self.mean_resource_occupancy],
            "P": [float(v) for v in self.P],
            "P_halfwidth": [float(v) for v in self.P_halfwidth],
            "occupancy_halfwidth": [float(v) for v in self.occupancy_halfwidth],
            "replications": self.replications,
            "seeds": self.seeds,
            "warmup": self.warmup,
            "horizon": self.horizon,
            "generator": self.generator,
            "backend": self.backend,
            "n_events": int(self.n_events),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _halfwidth(samples: np.ndarray, level: float = 0.95) -> np.ndarray:
    n = samples.shape[0]
    if n < 2:
        return np.full(samples.shape[1:], np.nan)
    q = stats.t.ppf(0.5 + level / 2.0, n - 1)
    return q * samples.std(axis=0, ddof=1) / math.sqrt(n)


# --- running ----------------------------------------------------------------------


def _as_topology(target):
    if isinstance(target, NetworkSpec):
        return Generic(target)
    return target


def _seed_sequence(seed, index=None) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if seed is None:
        raise PreconditionError("a seed is required")
    if index is None:
        return np.random.SeedSequence(int(seed))
    return np.random.SeedSequence(int(seed), spawn_key=(int(index),))


def _seed_label(ss: np.random.SeedSequence) -> dict:
    return {"entropy": int(ss.entropy), "spawn_key": [int(v) for v in ss.spawn_key]}


@dataclass(frozen=True)
class HistogramRequest:
    """Which statistic to histogram: ``class`` count, ``resource`` occupancy or
    ``alternative`` (alternatively-routed calls in progress)."""

    statistic: str
    index: int = 0
    sample_dt: float = 0.0

    @property
    def code(self) -> int:
        return {"class": 1, "resource": 2, "alternative": 3}[self.statistic]


def _kernel_inputs(topology, policy, routing):
    spec = topology.network()
    validate(spec)
    routes = topology.routes()
    if not isinstance(topology, FullyConnected) and not isinstance(routing, Fixed):
        raise PreconditionError("DAR and LBA need a fully connected topology")
    route_ptr, route_res, route_amt, cptr = [0], [], [], [0]
    for class_routes in routes:
        for route in class_routes:
            for j, a in route:
                route_res.append(j)
                route_amt.append(a)
            route_ptr.append(len(route_res))
        cptr.append(len(route_ptr) - 1)
    caps = np.array([INF_CAP if not np.isfinite(c) else int(c) for c in spec.C], dtype=np.int64)
    policy = policy or Uncontrolled()
    lo, hi = policy.intervals(spec)
    lo = np.where(np.isfinite(lo), lo, INF_CAP).astype(np.int64)
    hi = np.where(np.isfinite(hi), np.minimum(hi, INF_CAP), INF_CAP).astype(np.int64)
    if isinstance(routing, Fixed):
        mode, reserve = 0, 0
    elif isinstance(routing, DAR):
        mode, reserve = 1, int(routing.k)
        if not isinstance(policy, Uncontrolled):
            raise PreconditionError("DAR applies its own reservation; use the uncontrolled policy")
    else:
        mode, reserve = 2, int(routing.k)
        if not isinstance(policy, Uncontrolled):
            raise PreconditionError("LBA applies its own reservation; use the uncontrolled policy")
    return spec, dict(
        caps=caps,
        route_ptr=np.array(route_ptr, dtype=np.int64),
        route_res=np.array(route_res, dtype=np.int64),
        route_amt=np.array(route_amt, dtype=np.int64),
        cptr=np.array(cptr, dtype=np.int64),
        mode=mode,
        lo=np.ascontiguousarray(lo),
        hi=np.ascontiguousarray(hi),
        reserve=reserve,
    )


def _one(topology, policy, routing, holding, ss, warmup, horizon, initial_state, histogram, backend):
    spec, k = _kernel_inputs(topology, policy, routing)
    rng = np.random.Generator(np.random.PCG64(ss))
    nalt = np.diff(k["cptr"]) - 1
    pref = np.zeros(spec.R, dtype=np.int64)
    if k["mode"] == 1:
        # initial preferred alternatives, drawn before the event loop starts
        u = rng.random(spec.R)
        pref = np.minimum((u * np.maximum(nalt, 1)).astype(np.int64), np.maximum(nalt - 1, 0))
    n0 = np.zeros(spec.R, dtype=np.int64) if initial_state is None else np.asarray(initial_state, dtype=np.int64).copy()
    if n0.shape != (spec.R,) or np.any(n0 < 0):
        raise PreconditionError("initial_state must be a nonnegative vector with one entry per class")
    if np.any(spec.A @ n0 > spec.C):
        raise PreconditionError("initial_state violates capacity")
    hk, hp, f1, f2 = holding.kernel_params()
    if histogram is None:
        hkind, hidx, hsize, sdt = 0, 0, 0, 0.0
    else:
        hkind, hidx, sdt = histogram.code, int(histogram.index), float(histogram.sample_dt)
        if hkind == 1:
            used = spec.A[:, hidx] > 0
            hsize = int(np.min(spec.C[used] // spec.A[used, hidx])) + 1
        elif hkind == 2:
            hsize = int(spec.C[hidx]) + 1
        else:
            hsize = int(np.sum(spec.C[np.isfinite(spec.C)])) + 1
    out = kernels.simulate(
        k["caps"], k["route_ptr"], k["route_res"], k["route_amt"], k["cptr"], k["mode"], k["lo"], k["hi"],
        k["reserve"], pref, spec.nu.copy(), spec.mu.copy(), hk, hp, f1, f2, float(warmup), float(horizon), n0,
        hkind, hidx, hsize, sdt, rng, backend=backend,
    )
    return spec, out


def _summarise(spec, outs, seeds, warmup, horizon, backend):
    span = horizon - warmup
    offered = np.array([o["offered"] for o in outs])
    accepted = np.array([o["accepted"] for o in outs])
    with np.errstate(invalid="ignore", divide="ignore"):
        P_reps = np.where(offered > 0, accepted / np.maximum(offered, 1), 1.0)
    occ = np.array([o["area_n"] for o in outs]) / span
    res_occ = np.array([o["area_m"] for o in outs]) / span
    return SimStats(
        offered=offered.sum(axis=0),
        accepted=accepted.sum(axis=0),
        accepted_alt=np.array([o["accepted_alt"] for o in outs]).sum(axis=0),
        mean_occupancy=occ.mean(axis=0),
        mean_resource_occupancy=res_occ.mean(axis=0),
        P=P_reps.mean(axis=0),
        P_halfwidth=_halfwidth(P_reps),
        occupancy_halfwidth=_halfwidth(occ),
        replications=len(outs),
        seeds=seeds,
        warmup=warmup,
        horizon=horizon,
        backend=backend or kernels.BACKEND,
        P_reps=P_reps,
        occupancy_reps=occ,
        hist=[o["hist"] for o in outs],
        n_events=int(sum(o["n_events"] for o in outs)),
    )


def _check_times(spec, warmup, horizon):
    if warmup is None:
        warmup = 10.0 / float(np.min(spec.mu))
    if warmup < 0 or not horizon > warmup:
        raise InvalidHorizon(f"need horizon > warmup >= 0 (got warmup={warmup}, horizon={horizon})")
    return float(warmup), float(horizon)


def run_replication(
    target,
    policy: AdmissionPolicy | None = None,
    routing=None,
    holding: HoldingTimeDist | None = None,
    seed=None,
    warmup: float | None = None,
    horizon: float = 1000.0,
    initial_state=None,
    histogram: HistogramRequest | None = None,
    backend: str | None = None,
) -> SimStats:
    """One replication; ``seed`` is an integer or a ``SeedSequence``."""
    topology = _as_topology(target)
    spec = topology.network()
    warmup, horizon = _check_times(spec, warmup, horizon)
    ss = _seed_sequence(seed)
    routing = routing or Fixed()
    holding = holding or HoldingTimeDist()
    spec, out = _one(topology, policy, routing, holding, ss, warmup, horizon, initial_state, histogram, backend)
    return _summarise(spec, [out], [_seed_label(ss)], warmup, horizon, backend)


def _worker(args):
    return _one(*args)[1]


def run_experiment(
    target,
    policy: AdmissionPolicy | None = None,
    routing=None,
    holding: HoldingTimeDist | None = None,
    seed=None,
    warmup: float | None = None,
    horizon: float = 1000.0,
    replications: int = 30,
    initial_state=None,
    histogram: HistogramRequest | None = None,
    workers: int = 1,
    backend: str | None = None,
) -> SimStats:
    """Independent replications aggregated in index order, with t-based 95% CIs."""
    if replications < 2:
        raise PreconditionError("an experiment needs at least 2 replications")
    topology = _as_topology(target)
    spec = topology.network()
    warmup, horizon = _check_times(spec, warmup, horizon)
    if seed is None:
        raise PreconditionError("a master seed is required")
    routing = routing or Fixed()
    holding = holding or HoldingTimeDist()
    seqs = [_seed_sequence(seed, i) for i in range(replications)]
    jobs = [(topology, policy, routing, holding, ss, warmup, horizon, initial_state, histogram, backend) for ss in seqs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_worker, jobs))
    else:
        outs = [_worker(j) for j in jobs]
    return _summarise(spec, outs, [_seed_label(ss) for ss in seqs], warmup, horizon, backend)


def occupancy_histogram(stats_or_hist, bin_width: int = 1, replication: int | None = None, statistic: str = "") -> Histogram:
    """Normalised histogram of the recorded statistic.

    Accepts a :class:`SimStats` (summing replications unless one is chosen) or a
    raw per-level weight array.
    """
    if isinstance(stats_or_hist, SimStats):
        hs = stats_or_hist.hist
        if not hs:
            raise PreconditionError("the run recorded no histogram")
        raw = hs[replication] if replication is not None else np.sum(hs, axis=0)
    else:
        raw = np.asarray(stats_or_hist, dtype=float)
    bin_width = int(bin_width)
    if bin_width < 1:
        raise PreconditionError("bin_width must be a positive integer")
    nb = -(-len(raw) // bin_width)
    padded = np.zeros(nb * bin_width)
    padded[: len(raw)] = raw
    w = padded.reshape(nb, bin_width).sum(axis=1)
    total = w.sum()
    if total > 0:
        w = w / total
    lo = np.arange(nb) * bin_width
    return Histogram(lo, lo + bin_width, w, statistic)


__all__ = [
    "DAR",
    "FullyConnected",
    "Fixed",
    "Generic",
    "Histogram",
    "HistogramRequest",
    "HoldingTimeDist",
    "LBA",
    "RouteDecision",
    "SimStats",
    "Star",
    "dar_route",
    "holding_from_dict",
    "lba_route",
    "occupancy_histogram",
    "routing_from_dict",
    "run_experiment",
    "run_replication",
]
