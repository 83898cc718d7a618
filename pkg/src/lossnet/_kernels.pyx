# cython: language_level=3
"""Compiled kernels.  Operation order matches ``_pykernels`` exactly so that
both backends produce bitwise-identical output."""
from libc.math cimport log, INFINITY
from libc.stdlib cimport malloc, realloc, free
from libc.stdint cimport int64_t

import numpy as np

cdef int64_t INF_CAP = (<int64_t>1) << 62
cdef double RESCALE_AT = 1e250
cdef double RESCALE_BY = 1e-250
cdef Py_ssize_t BLOCK = 4096


cdef class _Uniforms:
    cdef object rng
    cdef double[::1] buf
    cdef Py_ssize_t pos
    cdef Py_ssize_t block

    def __init__(self, rng, Py_ssize_t block=BLOCK):
        self.rng = rng
        self.block = block
        self.buf = rng.random(block)
        self.pos = 0

    cdef inline double next(self):
        cdef double v
        if self.pos == self.block:
            self.buf = self.rng.random(self.block)
            self.pos = 0
        v = self.buf[self.pos]
        self.pos += 1
        return v


def kdr_1d(loads, sizes, capacity):
    cdef double[::1] a = np.ascontiguousarray(loads, dtype=np.float64)
    cdef int64_t[::1] s = np.ascontiguousarray(sizes, dtype=np.int64)
    cdef Py_ssize_t C = int(capacity)
    cdef Py_ssize_t R = a.shape[0]
    out = np.zeros(C + 1, dtype=np.float64)
    cdef double[::1] q = out
    cdef Py_ssize_t m, r, i
    cdef int64_t sz
    cdef double acc, v, total
    q[0] = 1.0
    for m in range(1, C + 1):
        acc = 0.0
        for r in range(R):
            sz = s[r]
            if sz > 0 and sz <= m:
                acc += sz * a[r] * q[m - sz]
        v = acc / m
        q[m] = v
        if v > RESCALE_AT:
            for i in range(m + 1):
                q[i] *= RESCALE_BY
    total = 0.0
    for i in range(C + 1):
        total += q[i]
    return out / total


def kdr_nd(kappa, A, caps):
    cdef int64_t[:, ::1] Am = np.ascontiguousarray(A, dtype=np.int64)
    cdef double[::1] kap = np.ascontiguousarray(kappa, dtype=np.float64)
    cdef int64_t[::1] cap = np.ascontiguousarray(caps, dtype=np.int64)
    cdef Py_ssize_t J = Am.shape[0], R = Am.shape[1]
    cdef Py_ssize_t j, r, k, idx, first
    cdef Py_ssize_t size = 1
    strides_a = np.zeros(J, dtype=np.int64)
    cdef int64_t[::1] strides = strides_a
    for j in range(J - 1, -1, -1):
        strides[j] = size
        size *= cap[j] + 1
    offs_a = np.zeros(R, dtype=np.int64)
    cdef int64_t[::1] offs = offs_a
    for r in range(R):
        for j in range(J):
            offs[r] += Am[j, r] * strides[j]
    out = np.zeros(size, dtype=np.float64)
    cdef double[::1] q = out
    coord_a = np.zeros(J, dtype=np.int64)
    cdef int64_t[::1] coord = coord_a
    cdef double worst = 0.0, acc, v, value, big, diff, rel, total
    cdef int64_t a
    cdef bint ok
    cdef Py_ssize_t i
    q[0] = 1.0
    for idx in range(1, size):
        j = J - 1
        while True:
            coord[j] += 1
            if coord[j] <= cap[j]:
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
                a = Am[j, r]
                if a == 0:
                    continue
                ok = True
                for k in range(J):
                    if coord[k] < Am[k, r]:
                        ok = False
                        break
                if ok:
                    acc += a * kap[r] * q[idx - offs[r]]
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
    for i in range(size):
        total += q[i]
    return out / total, worst


# --- event heap ordered by (time, seq) ---------------------------------------

cdef struct Dep:
    double time
    int64_t seq
    int64_t cls
    int64_t route


cdef inline bint _less(Dep* a, Dep* b) nogil:
    return a.time < b.time or (a.time == b.time and a.seq < b.seq)


cdef void _push(Dep* h, Py_ssize_t n, Dep item) nogil:
    cdef Py_ssize_t i = n, p
    h[i] = item
    while i > 0:
        p = (i - 1) >> 1
        if _less(&h[i], &h[p]):
            h[i], h[p] = h[p], h[i]
            i = p
        else:
            break


cdef Dep _pop(Dep* h, Py_ssize_t n) nogil:
    # n is the size before removal
    cdef Dep top = h[0]
    cdef Py_ssize_t i = 0, c, last = n - 1
    h[0] = h[last]
    while True:
        c = 2 * i + 1
        if c >= last:
            break
        if c + 1 < last and _less(&h[c + 1], &h[c]):
            c += 1
        if _less(&h[c], &h[i]):
            h[i], h[c] = h[c], h[i]
            i = c
        else:
            break
    return top


cdef inline double _hold(_Uniforms us, int kind, double mu_r, double p, double f1, double f2):
    cdef double ph, e
    if kind == 0:
        return -log(1.0 - us.next()) / mu_r
    if kind == 1:
        return 1.0 / mu_r
    ph = us.next()
    e = -log(1.0 - us.next())
    if ph < p:
        return e * f1 / mu_r
    return e * f2 / mu_r


cdef inline bint _fits(int64_t route, int64_t extra, int64_t* rp, int64_t* rres,
                       int64_t* ramt, int64_t* caps, int64_t* m):
    cdef int64_t e
    for e in range(rp[route], rp[route + 1]):
        if caps[rres[e]] - m[rres[e]] < ramt[e] + extra:
            return False
    return True


def simulate(caps_in, route_ptr_in, route_res_in, route_amt_in, class_route_ptr_in,
             int mode, lo_in, hi_in, int64_t reserve, pref_in, nu_in, mu_in,
             int hold_kind, double hold_p, double hold_f1, double hold_f2,
             double warmup, double horizon, n0_in,
             int hist_kind, Py_ssize_t hist_index, Py_ssize_t hist_size, double sample_dt, rng):
    cdef int64_t[::1] caps = np.ascontiguousarray(caps_in, dtype=np.int64)
    cdef int64_t[::1] rp = np.ascontiguousarray(route_ptr_in, dtype=np.int64)
    cdef int64_t[::1] rres = np.ascontiguousarray(route_res_in, dtype=np.int64)
    cdef int64_t[::1] ramt = np.ascontiguousarray(route_amt_in, dtype=np.int64)
    cdef int64_t[::1] cptr = np.ascontiguousarray(class_route_ptr_in, dtype=np.int64)
    cdef int64_t[:, ::1] lo = np.ascontiguousarray(lo_in, dtype=np.int64)
    cdef int64_t[:, ::1] hi = np.ascontiguousarray(hi_in, dtype=np.int64)
    cdef int64_t[::1] pref = pref_in
    cdef double[::1] nu = np.ascontiguousarray(nu_in, dtype=np.float64)
    cdef double[::1] mu = np.ascontiguousarray(mu_in, dtype=np.float64)
    cdef int64_t[::1] n0 = np.ascontiguousarray(n0_in, dtype=np.int64)
    cdef Py_ssize_t J = caps.shape[0], R = nu.shape[0]
    cdef _Uniforms us = _Uniforms(rng)

    offered_a = np.zeros(R, dtype=np.int64)
    accepted_a = np.zeros(R, dtype=np.int64)
    accepted_alt_a = np.zeros(R, dtype=np.int64)
    area_n_a = np.zeros(R, dtype=np.float64)
    area_m_a = np.zeros(J, dtype=np.float64)
    hist_a = np.zeros(max(hist_size, 1), dtype=np.float64)
    n_a = np.zeros(R, dtype=np.int64)
    m_a = np.zeros(J, dtype=np.int64)
    cum_a = np.zeros(R, dtype=np.float64)
    cdef int64_t[::1] offered = offered_a
    cdef int64_t[::1] accepted = accepted_a
    cdef int64_t[::1] accepted_alt = accepted_alt_a
    cdef double[::1] area_n = area_n_a
    cdef double[::1] area_m = area_m_a
    cdef double[::1] hist = hist_a
    cdef int64_t[::1] n = n_a
    cdef int64_t[::1] m = m_a
    cdef double[::1] cum = cum_a

    cdef Py_ssize_t cap_heap = 1024, hn = 0
    cdef Dep* heap = <Dep*> malloc(cap_heap * sizeof(Dep))
    cdef Dep item, top
    cdef int64_t seq = 0, alt_active = 0, stat = 0
    cdef double total = 0.0, t = 0.0, t_arr, t_next, t_end, a, dt, target, next_sample
    cdef Py_ssize_t r, j, rlast = 0, ri, nalt, chosen, cand, best, w, q, i
    cdef int64_t e, occ, best_occ, f, k_sample = 0, n_events = 0
    cdef bint is_dep, counted, ok

    if heap == NULL:
        raise MemoryError()
    try:
        for r in range(R):
            total += nu[r]
            cum[r] = total
            if nu[r] > 0.0:
                rlast = r

        for r in range(R):
            ri = cptr[r]
            for i in range(n0[r]):
                if hn == cap_heap:
                    cap_heap *= 2
                    heap = <Dep*> realloc(heap, cap_heap * sizeof(Dep))
                    if heap == NULL:
                        raise MemoryError()
                item.time = t + _hold(us, hold_kind, mu[r], hold_p, hold_f1, hold_f2)
                item.seq = seq
                item.cls = r
                item.route = ri
                _push(heap, hn, item)
                hn += 1
                seq += 1
                n[r] += 1
                for e in range(rp[ri], rp[ri + 1]):
                    m[rres[e]] += ramt[e]
        for j in range(J):
            if m[j] > caps[j]:
                raise ValueError("initial state violates capacity")

        if total > 0.0:
            t_arr = t + (-log(1.0 - us.next()) / total)
        else:
            t_arr = INFINITY
        next_sample = warmup if sample_dt > 0.0 else INFINITY

        while True:
            if hn > 0 and heap[0].time <= t_arr:
                t_next = heap[0].time
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
                top = _pop(heap, hn)
                hn -= 1
                r = top.cls
                ri = top.route
                n[r] -= 1
                for e in range(rp[ri], rp[ri + 1]):
                    m[rres[e]] -= ramt[e]
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
                    if f < lo[j, r] or f > hi[j, r]:
                        ok = False
                        break
                if ok:
                    chosen = ri
            elif _fits(ri, 0, &rp[0], &rres[0], &ramt[0], &caps[0], &m[0]):
                chosen = ri
            elif nalt > 0:
                if mode == 1:
                    cand = ri + 1 + pref[r]
                    if _fits(cand, reserve, &rp[0], &rres[0], &ramt[0], &caps[0], &m[0]):
                        chosen = cand
                    else:
                        w = <Py_ssize_t>(us.next() * nalt)
                        if w >= nalt:
                            w = nalt - 1
                        pref[r] = w
                else:
                    best = -1
                    best_occ = INF_CAP
                    for cand in range(ri + 1, ri + 1 + nalt):
                        occ = 0
                        for e in range(rp[cand], rp[cand + 1]):
                            if m[rres[e]] > occ:
                                occ = m[rres[e]]
                        if occ < best_occ:
                            best_occ = occ
                            best = cand
                    if _fits(best, reserve, &rp[0], &rres[0], &ramt[0], &caps[0], &m[0]):
                        chosen = best
            if chosen >= 0:
                if hn == cap_heap:
                    cap_heap *= 2
                    heap = <Dep*> realloc(heap, cap_heap * sizeof(Dep))
                    if heap == NULL:
                        raise MemoryError()
                item.time = t + _hold(us, hold_kind, mu[r], hold_p, hold_f1, hold_f2)
                item.seq = seq
                item.cls = r
                item.route = chosen
                _push(heap, hn, item)
                hn += 1
                seq += 1
                n[r] += 1
                for e in range(rp[chosen], rp[chosen + 1]):
                    q = rres[e]
                    m[q] += ramt[e]
                    if m[q] > caps[q]:
                        raise RuntimeError(f"capacity violated on resource {q} at t={t}")
                if chosen != ri:
                    alt_active += 1
                if counted:
                    accepted[r] += 1
                    if chosen != ri:
                        accepted_alt[r] += 1
            t_arr = t + (-log(1.0 - us.next()) / total)
    finally:
        free(heap)

    return {
        "offered": offered_a,
        "accepted": accepted_a,
        "accepted_alt": accepted_alt_a,
        "area_n": area_n_a,
        "area_m": area_m_a,
        "hist": hist_a[:hist_size],
        "n_events": int(n_events),
    }
