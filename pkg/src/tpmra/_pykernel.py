"""Pure-Python/numpy simulation kernel (fallback for ``_ckernel``).

Runs one bit-package exchange between two parties, optionally with a
passive attacker listening, and mutates the weight arrays in place.
"""

from __future__ import annotations

import numpy as np

from .lfsr import SharedInputGenerator

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF

ATTACK_NONE = 0
ATTACK_NAIVE = 1
ATTACK_FLIPPING = 2

STOP_DETECT = 0
STOP_ORACLE = 1
STOP_BOTH = 2

BACKEND = "python"


def _evaluate_package(w, X, zero_sign):
    fields = np.einsum("kj,bkj->bk", w.astype(np.int64), X.astype(np.int64))
    hidden = np.where(fields > 0, 1, np.where(fields < 0, -1, zero_sign)).astype(np.int8)
    outputs = np.prod(hidden, axis=1, dtype=np.int64)
    return fields, hidden, outputs


def _learn(w, x, hidden, output, L):
    rows = hidden == output
    if rows.any():
        w[rows] = np.clip(w[rows] + output * x[rows], -L, L)


def simulate(w_a, w_b, seed, L, b, t_min, watchdog_max,
             zero_a=1, zero_b=1, stop=STOP_DETECT,
             w_e=None, attack=ATTACK_NONE, zero_e=1):
    """Run until detection, until equal weights, or both (``stop``).

    Returns ``(oracle, detected, iterations, packages, failed, attacker_sync,
    keys_equal, digest, lfsr_state)``.  ``oracle`` is the iteration after
    which A and B hold equal weights (-1 if they do not at the end),
    ``detected`` the iteration at which the agreement counter reached
    ``t_min`` (-1 if never) and ``keys_equal`` whether the weights were equal
    at the end of the package in which detection happened.  With
    ``STOP_BOTH`` the run continues past detection for at most
    ``watchdog_max`` further iterations to locate the oracle time.
    """
    K, N = w_a.shape
    gen = SharedInputGenerator(seed)
    attacking = w_e is not None and attack != ATTACK_NONE

    oracle = 0 if np.array_equal(w_a, w_b) else -1
    att_sync = (0 if np.array_equal(w_e, w_a) else -1) if attacking else -1
    detected = -1
    agree = 0
    it = 0
    packages = 0
    failed = False
    keys_equal = False
    digest = FNV_OFFSET

    if stop == STOP_ORACLE and oracle == 0:
        return oracle, detected, it, packages, failed, att_sync, True, digest, gen.state

    done = False
    while not done:
        X = gen.next_inputs(b, K, N)
        _, ha, oa = _evaluate_package(w_a, X, zero_a)
        _, hb, ob = _evaluate_package(w_b, X, zero_b)
        if attacking:
            fe, he, oe = _evaluate_package(w_e, X, zero_e)
        packages += 1
        for i in range(b):
            it += 1
            o_a = int(oa[i])
            o_b = int(ob[i])
            digest = ((digest ^ (((o_a > 0) << 1) | (o_b > 0))) * FNV_PRIME) & MASK64
            x = X[i]
            if o_a == o_b:
                agree = min(agree + 1, t_min)
                _learn(w_a, x, ha[i], o_a, L)
                _learn(w_b, x, hb[i], o_b, L)
                if attacking:
                    o_e = int(oe[i])
                    if o_e == o_a:
                        _learn(w_e, x, he[i], o_e, L)
                    elif attack == ATTACK_FLIPPING:
                        h = he[i].copy()
                        kstar = int(np.argmin(np.abs(fe[i])))
                        h[kstar] = -h[kstar]
                        _learn(w_e, x, h, int(np.prod(h, dtype=np.int64)), L)
            else:
                agree = 0

            if np.array_equal(w_a, w_b):
                if oracle < 0:
                    oracle = it
            else:
                oracle = -1
            if attacking:
                if np.array_equal(w_e, w_a):
                    if att_sync < 0:
                        att_sync = it
                else:
                    att_sync = -1
            if detected < 0 and agree >= t_min:
                detected = it
            if stop == STOP_ORACLE and oracle >= 0:
                keys_equal = True
                done = True
                break
        if done:
            break
        if detected >= 0 and stop != STOP_ORACLE:
            if detected > it - b:
                keys_equal = oracle >= 0
            if stop == STOP_DETECT or oracle >= 0 or it > detected + watchdog_max:
                break
        elif it > watchdog_max:
            failed = True
            break

    return oracle, detected, it, packages, failed, att_sync, keys_equal, digest, gen.state
