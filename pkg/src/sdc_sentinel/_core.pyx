# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twin of ``_core_py``: float32 MLP inference and bit-flip injection."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from libc.stdint cimport uint32_t, uint64_t, int64_t

cnp.import_array()

BACKEND = "cython"

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t MIX1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t MIX2 = 0x94D049BB133111EBULL
cdef uint64_t KEY_SALT = 0xD1B54A32D192ED03ULL
cdef int MAX_FAULTS_PER_TASK = 64
cdef double INV_2_53 = 1.0 / 9007199254740992.0


cdef inline uint64_t mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * MIX1
    z = (z ^ (z >> 27)) * MIX2
    return z ^ (z >> 31)


cdef inline double uniform(uint64_t key, uint64_t counter) nogil:
    return <double>(mix64(key + (counter + 1) * GOLDEN) >> 11) * INV_2_53


cdef inline int poisson_count(double u, double lam) nogil:
    cdef int k = 0
    cdef double p = exp(-lam)
    cdef double cdf = p
    while u > cdf and k < MAX_FAULTS_PER_TASK:
        k += 1
        p = p * lam / k
        cdf = cdf + p
    return k


cdef int _events(uint64_t key, int k, Py_ssize_t n_sites, int max_bits,
                 int64_t* sites, uint32_t* masks) nogil:
    cdef int pool[32]
    cdef int f, j, r, nbits, tmp
    cdef uint64_t counter = 1
    cdef Py_ssize_t site
    cdef uint32_t mask
    for j in range(32):
        pool[j] = j
    for f in range(k):
        site = <Py_ssize_t>(uniform(key, counter) * n_sites)
        counter += 1
        if site >= n_sites:
            site = n_sites - 1
        nbits = 1 + <int>(uniform(key, counter) * max_bits)
        counter += 1
        if nbits > max_bits:
            nbits = max_bits
        mask = 0
        for j in range(nbits):
            r = j + <int>(uniform(key, counter) * (32 - j))
            counter += 1
            if r > 31:
                r = 31
            tmp = pool[j]
            pool[j] = pool[r]
            pool[r] = tmp
            mask |= (<uint32_t>1) << pool[j]
        sites[f] = site
        masks[f] = mask
    return 0


def draw_faults(costs, eligible, task_ids, seed, double rate, int max_bits, Py_ssize_t n_sites):
    cdef double[::1] cost = np.ascontiguousarray(costs, dtype=np.float64)
    cdef cnp.uint8_t[::1] ok = np.ascontiguousarray(eligible, dtype=np.uint8)
    cdef int64_t[::1] ids = np.ascontiguousarray(task_ids, dtype=np.int64)
    cdef Py_ssize_t n = ids.shape[0]
    counts_arr = np.zeros(n, dtype=np.int32)
    cdef int[::1] counts = counts_arr
    cdef uint64_t base = mix64((<uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)) ^ KEY_SALT)
    cdef Py_ssize_t t, total = 0, pos = 0
    cdef int f
    if max_bits > 32:
        max_bits = 32
    if rate > 0.0:
        with nogil:
            for t in range(n):
                if ok[t]:
                    counts[t] = poisson_count(uniform(mix64(base + <uint64_t>ids[t]), 0),
                                              cost[t] * rate)
                    total += counts[t]
    task_arr = np.empty(total, dtype=np.int64)
    site_arr = np.empty(total, dtype=np.int64)
    mask_arr = np.empty(total, dtype=np.uint32)
    cdef int64_t[::1] tasks = task_arr
    cdef int64_t[::1] sites = site_arr
    cdef uint32_t[::1] masks = mask_arr
    if total:
        with nogil:
            for t in range(n):
                if counts[t] == 0:
                    continue
                _events(mix64(base + <uint64_t>ids[t]), counts[t], n_sites, max_bits,
                        &sites[pos], &masks[pos])
                for f in range(counts[t]):
                    tasks[pos + f] = t
                pos += counts[t]
    return counts_arr, task_arr, site_arr, mask_arr


def inject_faults(float[:, ::1] outputs, costs, eligible, task_ids,
                  seed, double rate, int max_bits):
    counts, tasks, sites, masks = draw_faults(costs, eligible, task_ids, seed, rate, max_bits,
                                              outputs.shape[1])
    cdef uint32_t[:, ::1] bits = np.asarray(outputs).view(np.uint32)
    cdef int64_t[::1] tv = tasks
    cdef int64_t[::1] sv = sites
    cdef uint32_t[::1] mv = masks
    cdef Py_ssize_t i
    with nogil:
        for i in range(tv.shape[0]):
            bits[tv[i], sv[i]] ^= mv[i]
    return counts


cdef void _layer(float[:, ::1] h, float[:, ::1] w, float[::1] b,
                 float[:, ::1] out, bint relu) nogil:
    cdef Py_ssize_t n = h.shape[0]
    cdef Py_ssize_t n_in = w.shape[1]
    cdef Py_ssize_t n_out = w.shape[0]
    cdef Py_ssize_t s, i, j
    cdef float acc
    for s in range(n):
        for j in range(n_out):
            acc = b[j]
            for i in range(n_in):
                acc = acc + h[s, i] * w[j, i]
            if relu and not (acc > 0):
                acc = 0.0
            out[s, j] = acc


def mlp_forward(x, mean, std, clip, weights, biases, relu_after):
    cdef float[:, ::1] xin = np.ascontiguousarray(x, dtype=np.float32)
    cdef float[::1] mu = np.ascontiguousarray(mean, dtype=np.float32)
    cdef float[::1] sd = np.ascontiguousarray(std, dtype=np.float32)
    cdef float c = clip
    cdef Py_ssize_t n = xin.shape[0]
    cdef Py_ssize_t dim = xin.shape[1]
    cdef Py_ssize_t s, i
    cdef float z
    h_arr = np.empty((n, dim), dtype=np.float32)
    cdef float[:, ::1] h = h_arr
    with nogil:
        for s in range(n):
            for i in range(dim):
                z = (xin[s, i] - mu[i]) / sd[i]
                if z != z:
                    z = c
                if z < -c:
                    z = -c
                if z > c:
                    z = c
                h[s, i] = z
    for w, b, relu in zip(weights, biases, relu_after):
        out_arr = np.empty((n, w.shape[0]), dtype=np.float32)
        _layer(h_arr, np.ascontiguousarray(w, dtype=np.float32),
               np.ascontiguousarray(b, dtype=np.float32), out_arr, bool(relu))
        h_arr = out_arr
    return h_arr
