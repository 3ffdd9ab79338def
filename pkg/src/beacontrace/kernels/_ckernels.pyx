# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Monte Carlo trial kernel; same draw layout as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, log10, cos, pow, hypot, fabs, NAN, M_PI
from libc.stdint cimport uint64_t

cnp.import_array()

cdef uint64_t GAMMA = 0x9E3779B97F4A7C15ULL
cdef uint64_t MIX1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t MIX2 = 0x94D049BB133111EBULL
cdef double INV_2_53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix(uint64_t x) nogil:
    cdef uint64_t z = x + GAMMA
    z = (z ^ (z >> 30)) * MIX1
    z = (z ^ (z >> 27)) * MIX2
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t seed, uint64_t j) nogil:
    return <double>(_mix(seed + j * GAMMA) >> 11) * INV_2_53


def run_batch(seeds, int n_beacons, double width, double height, double rss_1m,
              double eta, double sigma, double min_d, double floor_dbm, int packets,
              beacon_xy=None, receiver_xy=None):
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] s = np.ascontiguousarray(seeds, dtype=np.uint64)
    cdef Py_ssize_t m = s.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] true_out = np.empty(m)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] est_out = np.empty(m)
    cdef int n = n_beacons, k = packets
    cdef cnp.ndarray[cnp.float64_t, ndim=2] bxy = np.zeros((n, 2))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] rxy = np.zeros((2, 2))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] est_d = np.zeros((2, n))
    cdef cnp.ndarray[cnp.int64_t, ndim=2] heard = np.zeros((2, n), dtype=np.int64)
    cdef bint fixed_b = beacon_xy is not None
    cdef bint fixed_r = receiver_xy is not None
    if fixed_b:
        bxy = np.ascontiguousarray(beacon_xy, dtype=np.float64).reshape(n, 2)
    if fixed_r:
        rxy = np.ascontiguousarray(receiver_xy, dtype=np.float64).reshape(2, 2)

    cdef Py_ssize_t t
    cdef int i, r, q
    cdef uint64_t seed, base, p
    cdef double d, mean, x, total, u1, u2, best, diff, ten_eta = 10.0 * eta
    cdef int count
    cdef bint any_common

    with nogil:
        for t in range(m):
            seed = s[t]
            if not fixed_b:
                for i in range(n):
                    bxy[i, 0] = _uniform(seed, 2 * i) * width
                    bxy[i, 1] = _uniform(seed, 2 * i + 1) * height
            if not fixed_r:
                for r in range(2):
                    rxy[r, 0] = _uniform(seed, 2 * n + 2 * r) * width
                    rxy[r, 1] = _uniform(seed, 2 * n + 2 * r + 1) * height
            base = 2 * n + 4
            for r in range(2):
                for i in range(n):
                    d = hypot(rxy[r, 0] - bxy[i, 0], rxy[r, 1] - bxy[i, 1])
                    if d < min_d:
                        d = min_d
                    mean = rss_1m - ten_eta * log10(d)
                    total = 0.0
                    count = 0
                    for q in range(k):
                        if sigma > 0:
                            p = (<uint64_t>(r * n + i) * k + q) * 2
                            u1 = _uniform(seed, base + p)
                            u2 = _uniform(seed, base + p + 1)
                            x = mean + sigma * (sqrt(-2.0 * log(1.0 - u1)) * cos(2.0 * M_PI * u2))
                        else:
                            x = mean
                        if x >= floor_dbm:
                            total += x
                            count += 1
                    heard[r, i] = count
                    if count > 0:
                        x = pow(10.0, (rss_1m - total / count) / ten_eta)
                        est_d[r, i] = x if x > min_d else min_d
            any_common = False
            best = 0.0
            for i in range(n):
                if heard[0, i] > 0 and heard[1, i] > 0:
                    diff = fabs(est_d[0, i] - est_d[1, i])
                    if not any_common or diff > best:
                        best = diff
                    any_common = True
            est_out[t] = best if any_common else NAN
            true_out[t] = hypot(rxy[0, 0] - rxy[1, 0], rxy[0, 1] - rxy[1, 1])
    return true_out, est_out


def mad_rows(d1, d2):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] a = np.ascontiguousarray(d1, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] b = np.ascontiguousarray(d2, dtype=np.float64)
    cdef Py_ssize_t rows = a.shape[0], cols = a.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(rows)
    cdef double best, diff
    cdef bint seen
    with nogil:
        for i in range(rows):
            seen = False
            best = 0.0
            for j in range(cols):
                diff = fabs(a[i, j] - b[i, j])
                if diff != diff:
                    continue
                if not seen or diff > best:
                    best = diff
                seen = True
            out[i] = best if seen else NAN
    return out
