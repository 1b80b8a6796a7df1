"""Compare the compiled and pure-Python simulation kernels.

    python3 benchmarks/bench_kernels.py --trials 200

Both backends run the same trials; the script checks that the results are
bit-identical and prints per-trial times and the speedup.  The frame-level
protocol path (two sessions over a loopback channel) is timed for reference.
"""

import argparse
import time

import numpy as np

from tpmra import kernel, tpm
from tpmra.lfsr import trial_seed
from tpmra.session import run_key_exchange
from tpmra.tpm import Role, TpmParams


def run(backend, params, trials, seed, attack):
    sim = kernel.get_backend(backend).simulate
    results = []
    t0 = time.perf_counter()
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        w_a, w_b, w_e = (tpm.init_weights(rng, params) for _ in range(3))
        out = sim(w_a, w_b, trial_seed(seed, t), params.L, params.b, params.t_min, params.watchdog_max,
                  1, 1, kernel.STOP_BOTH, w_e if attack else None, attack)
        results.append((out, w_a.tobytes(), w_b.tobytes()))
    return time.perf_counter() - t0, results


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--l", type=int, default=3)
    ap.add_argument("--seed", type=lambda s: int(s, 16), default=0x5EED)
    ap.add_argument("--protocol-trials", type=int, default=10)
    args = ap.parse_args(argv)

    params = TpmParams(N=args.n, L=args.l)
    print(f"K={params.K} N={params.N} L={params.L} b={params.b} t_min={params.t_min} trials={args.trials}")
    print(f"backends available: {', '.join(kernel.available_backends())}")
    for label, attack in (("parties only", kernel.ATTACK_NONE), ("with flipping attacker", kernel.ATTACK_FLIPPING)):
        timings = {}
        outputs = {}
        for name in kernel.available_backends():
            timings[name], outputs[name] = run(name, params, args.trials, args.seed, attack)
        print(f"\n{label}")
        for name, secs in timings.items():
            print(f"  {name:>7}: {1e3 * secs / args.trials:8.3f} ms/trial")
        if "cython" in timings:
            same = outputs["python"] == outputs["cython"]
            print(f"  speedup {timings['python'] / timings['cython']:.1f}x, identical results: {same}")

    if args.protocol_trials:
        t0 = time.perf_counter()
        for t in range(args.protocol_trials):
            rng = np.random.default_rng([args.seed, t])
            run_key_exchange(params, params.for_role(Role.B), trial_seed(args.seed, t), rng=rng)
        secs = time.perf_counter() - t0
        print(f"\nframe-level protocol over loopback: {1e3 * secs / args.protocol_trials:8.3f} ms/exchange")


if __name__ == "__main__":
    main()
