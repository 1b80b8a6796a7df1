# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled simulation kernel; same contract as ``tpmra._pykernel.simulate``."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int8_t, int32_t, int64_t, uint32_t, uint64_t
from libc.stdlib cimport llabs

cnp.import_array()

cdef uint32_t POLY = 0xEDB88320U
cdef uint64_t FNV_OFFSET = 0xCBF29CE484222325ULL
cdef uint64_t FNV_PRIME = 0x100000001B3ULL

BACKEND = "cython"


cdef inline void _eval(const int32_t[:, ::1] w, const int8_t* x, int K, int N, int zero,
                       int64_t* fields, int8_t* hidden, int* out) noexcept nogil:
    cdef int k, j
    cdef int64_t s
    cdef int o = 1
    for k in range(K):
        s = 0
        for j in range(N):
            s += w[k, j] * x[k * N + j]
        fields[k] = s
        if s > 0:
            hidden[k] = 1
        elif s < 0:
            hidden[k] = -1
        else:
            hidden[k] = zero
        o *= hidden[k]
    out[0] = o


cdef inline void _learn(int32_t[:, ::1] w, const int8_t* x, const int8_t* hidden, int o,
                        int K, int N, int L, char* touched) noexcept nogil:
    cdef int k, j
    cdef int32_t v
    for k in range(K):
        if hidden[k] != o:
            continue
        touched[k] = 1
        for j in range(N):
            v = w[k, j] + o * x[k * N + j]
            if v > L:
                v = L
            elif v < -L:
                v = -L
            w[k, j] = v


cdef inline int _rowdiff(const int32_t[:, ::1] a, const int32_t[:, ::1] b, int k, int N) noexcept nogil:
    cdef int j, d = 0
    for j in range(N):
        if a[k, j] != b[k, j]:
            d += 1
    return d


def simulate(cnp.ndarray w_a_arr, cnp.ndarray w_b_arr, seed, int L, int b, int t_min, long long watchdog_max,
             int zero_a=1, int zero_b=1, int stop=0,
             w_e_arr=None, int attack=0, int zero_e=1):
    cdef int32_t[:, ::1] w_a = w_a_arr
    cdef int32_t[:, ::1] w_b = w_b_arr
    cdef int32_t[:, ::1] w_e
    cdef int K = w_a.shape[0]
    cdef int N = w_a.shape[1]
    cdef bint attacking = w_e_arr is not None and attack != 0
    if attacking:
        w_e = w_e_arr
    else:
        w_e = w_a_arr

    cdef uint32_t state = <uint32_t>seed
    cdef uint32_t bit
    cdef int KN = K * N

    cdef cnp.ndarray[int8_t, ndim=1] X_arr = np.empty(b * KN, dtype=np.int8)
    cdef int8_t* X = <int8_t*> X_arr.data
    cdef cnp.ndarray[int64_t, ndim=1] f_arr = np.empty(3 * b * K, dtype=np.int64)
    cdef int64_t* fa = <int64_t*> f_arr.data
    cdef int64_t* fb = fa + b * K
    cdef int64_t* fe = fb + b * K
    cdef cnp.ndarray[int8_t, ndim=1] h_arr = np.empty(4 * b * K, dtype=np.int8)
    cdef int8_t* ha = <int8_t*> h_arr.data
    cdef int8_t* hb = ha + b * K
    cdef int8_t* he = hb + b * K
    cdef int8_t* hflip = he + b * K
    cdef cnp.ndarray[int32_t, ndim=1] o_arr = np.empty(3 * b, dtype=np.int32)
    cdef int* oa = <int*> o_arr.data
    cdef int* ob = oa + b
    cdef int* oe = ob + b
    cdef cnp.ndarray[int32_t, ndim=1] rd_arr = np.zeros(2 * K, dtype=np.int32)
    cdef int* rd_ab = <int*> rd_arr.data
    cdef int* rd_ea = rd_ab + K
    cdef cnp.ndarray[char, ndim=1] t_arr = np.zeros(K, dtype=np.int8)
    cdef char* touched = <char*> t_arr.data

    cdef int i, k, n, kstar, o, o_e
    cdef int64_t best, a
    cdef long long ndiff = 0, ediff = 0
    cdef long long it = 0, packages = 0, oracle = -1, detected = -1, att_sync = -1
    cdef int agree = 0
    cdef bint failed = False, done = False, keys_equal = False
    cdef uint64_t digest = FNV_OFFSET

    for k in range(K):
        rd_ab[k] = _rowdiff(w_a, w_b, k, N)
        ndiff += rd_ab[k]
        if attacking:
            rd_ea[k] = _rowdiff(w_e, w_a, k, N)
            ediff += rd_ea[k]
    if ndiff == 0:
        oracle = 0
    if attacking and ediff == 0:
        att_sync = 0

    if stop == 1 and oracle == 0:
        return oracle, detected, it, packages, failed, att_sync, True, digest, state

    with nogil:
        while not done:
            for n in range(b * KN):
                bit = state & 1
                state >>= 1
                if bit:
                    state ^= POLY
                X[n] = 1 if bit else -1
            for i in range(b):
                _eval(w_a, X + i * KN, K, N, zero_a, fa + i * K, ha + i * K, oa + i)
                _eval(w_b, X + i * KN, K, N, zero_b, fb + i * K, hb + i * K, ob + i)
                if attacking:
                    _eval(w_e, X + i * KN, K, N, zero_e, fe + i * K, he + i * K, oe + i)
            packages += 1
            for i in range(b):
                it += 1
                digest = (digest ^ <uint64_t>(((oa[i] > 0) << 1) | (ob[i] > 0))) * FNV_PRIME
                if oa[i] == ob[i]:
                    agree += 1
                    if agree > t_min:
                        agree = t_min
                    for k in range(K):
                        touched[k] = 0
                    _learn(w_a, X + i * KN, ha + i * K, oa[i], K, N, L, touched)
                    _learn(w_b, X + i * KN, hb + i * K, ob[i], K, N, L, touched)
                    if attacking:
                        o_e = oe[i]
                        if o_e == oa[i]:
                            _learn(w_e, X + i * KN, he + i * K, o_e, K, N, L, touched)
                        elif attack == 2:
                            kstar = 0
                            best = llabs(fe[i * K])
                            for k in range(1, K):
                                a = llabs(fe[i * K + k])
                                if a < best:
                                    best = a
                                    kstar = k
                            o = 1
                            for k in range(K):
                                hflip[k] = he[i * K + k]
                                if k == kstar:
                                    hflip[k] = -hflip[k]
                                o *= hflip[k]
                            _learn(w_e, X + i * KN, hflip, o, K, N, L, touched)
                    for k in range(K):
                        if touched[k]:
                            ndiff -= rd_ab[k]
                            rd_ab[k] = _rowdiff(w_a, w_b, k, N)
                            ndiff += rd_ab[k]
                            if attacking:
                                ediff -= rd_ea[k]
                                rd_ea[k] = _rowdiff(w_e, w_a, k, N)
                                ediff += rd_ea[k]
                else:
                    agree = 0

                if ndiff == 0:
                    if oracle < 0:
                        oracle = it
                else:
                    oracle = -1
                if attacking:
                    if ediff == 0:
                        if att_sync < 0:
                            att_sync = it
                    else:
                        att_sync = -1
                if detected < 0 and agree >= t_min:
                    detected = it
                if stop == 1 and oracle >= 0:
                    keys_equal = True
                    done = True
                    break
            if done:
                break
            if detected >= 0 and stop != 1:
                if detected > it - b:
                    keys_equal = oracle >= 0
                if stop == 0 or oracle >= 0 or it > detected + watchdog_max:
                    break
            elif it > watchdog_max:
                failed = True
                break

    return oracle, detected, it, packages, failed, att_sync, keys_equal, digest, state
