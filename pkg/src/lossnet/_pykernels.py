"""Pure-Python kernels.  ``_kernels.pyx`` mirrors these operation for operation,
so both backends return bitwise-identical results for identical inputs."""
from __future__ import annotations

import heapq
from math import inf, log

import numpy as np

INF_CAP = 1 << 62
RESCALE_AT = 1e250
RESCALE_BY = 1e-250
BLOCK = 4096


class UniformStream:
    """Uniform [0, 1) variates drawn from a numpy Generator in fixed-size blocks."""

    def __init__(self, rng, block=BLOCK):
        self.rng = rng
        self.block = block
        self.buf = rng.random(block)
        self.pos = 0

    def next(self):
        if self.pos == self.block:
            self.buf = self.rng.random(self.block)
            self.pos = 0
        v = float(self.buf[self.pos])
        self.pos += 1
        return v


def kdr_1d(loads, sizes, capacity):
    """Normalised occupancy law of one resource: ``m q(m) = sum_r s_r a_r q(m - s_r)``."""
    C = int(capacity)
    R = len(loads)
    q = [0.0] * (C + 1)
    q[0] = 1.0
    for m in range(1, C + 1):
        acc = 0.0
        for r in range(R):
            s = int(sizes[r])
            if s > 0 and s <= m:
                acc += s * loads[r] * q[m - s]
        v = acc / m
        q[m] = v
        if v > RESCALE_AT:
            for i in range(m + 1):
                q[i] *= RESCALE_BY
    total = 0.0
    for v in q:
        total += v
    return np.array(q) / total


def kdr_nd(kappa, A, caps):
    """Unnormalised-then-normalised KDR recursion over the box ``0 <= m <= caps``.

    Visits occupancies in C order (lexicographic).  Each value comes from the
    row of the first coordinate with ``m_j > 0``; the other rows are evaluated
    as a check.  Returns ``(probs_flat, max_relative_discrepancy)``.
    """
    J, R = A.shape
    A = [[int(v) for v in row] for row in np.asarray(A).tolist()]
    kappa = [float(v) for v in kappa]
    caps = [int(c) for c in caps]
    strides = [0] * J
    s = 1
    for j in range(J - 1, -1, -1):
        strides[j] = s
        s *= caps[j] + 1
    size = s
    offs = [sum(A[j][r] * strides[j] for j in range(J)) for r in range(R)]
    q = [0.0] * size
    q[0] = 1.0
    coord = [0] * J
    worst = 0.0
    for idx in range(1, size):
        j = J - 1
        while True:
            coord[j] += 1
            if coord[j] <= caps[j]:
                break
            coord[j] = 0
            j -= 1
        first = -1
        value = 0.0
        for j in range(J):
            if coord[j] == 0:
                continue
            acc = 0.0
            for r in range(R):
                a = A[j][r]
                if a == 0:
                    continue
                ok = True
                for k in range(J):
                    if coord[k] < A[k][r]:
                        ok = False
                        break
                if ok:
                    acc += a * kappa[r] * q[idx - offs[r]]
            v = acc / coord[j]
            if first < 0:
                first = j
                value = v
            else:
                big = value if value > v else v
                diff = value - v if value > v else v - value
                if diff > 0.0:
                    rel = diff / big if big > 1e-290 else 0.0
                    if rel > worst:
                        worst = rel
        q[idx] = value
        if value > RESCALE_AT:
            for i in range(idx + 1):
                q[i] *= RESCALE_BY
    total = 0.0
    for v in q:
        total += v
    return np.array(q) / total, worst


def simulate(caps, route_ptr, route_res, route_amt, class_route_ptr, mode, lo, hi, reserve,
             pref, nu, mu, hold_kind, hold_p, hold_f1, hold_f2, warmup, horizon, n0,
             hist_kind, hist_index, hist_size, sample_dt, rng):
    """Event-driven loss-network simulation.

    ``mode`` 0: single route per class gated by free-capacity intervals
    ``lo``/``hi`` (J x R).  ``mode`` 1: DAR, ``mode`` 2: least-busy alternative;
    in both the first route of a class is direct and the others alternative,
    admitted only with ``reserve`` spare units on every link.
    """
    J = len(caps)
    R = len(nu)
    caps = [int(c) for c in caps]
    route_ptr = [int(v) for v in route_ptr]
    route_res = [int(v) for v in route_res]
    route_amt = [int(v) for v in route_amt]
    cptr = [int(v) for v in class_route_ptr]
    lo = [[int(v) for v in row] for row in lo]
    hi = [[int(v) for v in row] for row in hi]
    nu = [float(v) for v in nu]
    mu = [float(v) for v in mu]
    us = UniformStream(rng)

    def hold(r):
        if hold_kind == 0:
            return -log(1.0 - us.next()) / mu[r]
        if hold_kind == 1:
            return 1.0 / mu[r]
        ph = us.next()
        e = -log(1.0 - us.next())
        if ph < hold_p:
            return e * hold_f1 / mu[r]
        return e * hold_f2 / mu[r]

    def fits(route, extra):
        for e in range(route_ptr[route], route_ptr[route + 1]):
            if caps[route_res[e]] - m[route_res[e]] < route_amt[e] + extra:
                return False
        return True

    n = [0] * R
    m = [0] * J
    offered = [0] * R
    accepted = [0] * R
    accepted_alt = [0] * R
    area_n = [0.0] * R
    area_m = [0.0] * J
    hist = [0.0] * max(hist_size, 1)
    heap = []
    seq = 0
    alt_active = 0

    cum = [0.0] * R
    total = 0.0
    rlast = 0
    for r in range(R):
        total += nu[r]
        cum[r] = total
        if nu[r] > 0.0:
            rlast = r

    t = 0.0
    for r in range(R):
        ri = cptr[r]
        for _ in range(int(n0[r])):
            heapq.heappush(heap, (t + hold(r), seq, r, ri))
            seq += 1
            n[r] += 1
            for e in range(route_ptr[ri], route_ptr[ri + 1]):
                m[route_res[e]] += route_amt[e]
    for j in range(J):
        if m[j] > caps[j]:
            raise ValueError("initial state violates capacity")

    t_arr = t + (-log(1.0 - us.next()) / total) if total > 0.0 else inf
    n_events = 0
    k_sample = 0
    next_sample = warmup if sample_dt > 0.0 else inf

    while True:
        if heap and heap[0][0] <= t_arr:
            t_next = heap[0][0]
            is_dep = True
        else:
            t_next = t_arr
            is_dep = False
        t_end = t_next if t_next < horizon else horizon
        a = t if t > warmup else warmup
        if hist_kind == 1:
            stat = n[hist_index]
        elif hist_kind == 2:
            stat = m[hist_index]
        else:
            stat = alt_active
        if t_end > a:
            dt = t_end - a
            for r in range(R):
                area_n[r] += n[r] * dt
            for j in range(J):
                area_m[j] += m[j] * dt
            if hist_kind > 0 and sample_dt <= 0.0:
                hist[stat] += dt
        if hist_kind > 0 and sample_dt > 0.0:
            while next_sample < t_next and next_sample <= horizon:
                hist[stat] += 1.0
                k_sample += 1
                next_sample = warmup + k_sample * sample_dt
        if t_next > horizon:
            break
        t = t_next
        n_events += 1

        if is_dep:
            _, _, r, ri = heapq.heappop(heap)
            n[r] -= 1
            for e in range(route_ptr[ri], route_ptr[ri + 1]):
                m[route_res[e]] -= route_amt[e]
            if ri != cptr[r]:
                alt_active -= 1
            continue

        counted = t >= warmup
        target = us.next() * total
        r = 0
        while r < rlast and cum[r] <= target:
            r += 1
        if counted:
            offered[r] += 1
        ri = cptr[r]
        nalt = cptr[r + 1] - ri - 1
        chosen = -1
        if mode == 0:
            ok = True
            for j in range(J):
                f = caps[j] - m[j]
                if f < lo[j][r] or f > hi[j][r]:
                    ok = False
                    break
            if ok:
                chosen = ri
        elif fits(ri, 0):
            chosen = ri
        elif nalt > 0:
            if mode == 1:
                cand = ri + 1 + int(pref[r])
                if fits(cand, reserve):
                    chosen = cand
                else:
                    w = int(us.next() * nalt)
                    if w >= nalt:
                        w = nalt - 1
                    pref[r] = w
            else:
                best = -1
                best_occ = INF_CAP
                for cand in range(ri + 1, ri + 1 + nalt):
                    occ = 0
                    for e in range(route_ptr[cand], route_ptr[cand + 1]):
                        if m[route_res[e]] > occ:
                            occ = m[route_res[e]]
                    if occ < best_occ:
                        best_occ = occ
                        best = cand
                if fits(best, reserve):
                    chosen = best
        if chosen >= 0:
            heapq.heappush(heap, (t + hold(r), seq, r, chosen))
            seq += 1
            n[r] += 1
            for e in range(route_ptr[chosen], route_ptr[chosen + 1]):
                q = route_res[e]
                m[q] += route_amt[e]
                if m[q] > caps[q]:
                    raise RuntimeError(f"capacity violated on resource {q} at t={t}")
            if chosen != ri:
                alt_active += 1
            if counted:
                accepted[r] += 1
                if chosen != ri:
                    accepted_alt[r] += 1
        t_arr = t + (-log(1.0 - us.next()) / total)

    return {
        "offered": np.array(offered, dtype=np.int64),
        "accepted": np.array(accepted, dtype=np.int64),
        "accepted_alt": np.array(accepted_alt, dtype=np.int64),
        "area_n": np.array(area_n),
        "area_m": np.array(area_m),
        "hist": np.array(hist[:hist_size]),
        "n_events": n_events,
    }
