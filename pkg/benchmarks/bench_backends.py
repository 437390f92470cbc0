#!/usr/bin/env python3
"""Compare the compiled and pure-numpy scan kernels.

Times the raw recurrence kernels (states only) and the full selective scan
over a spread of sequence lengths, and checks that both backends agree
bitwise. Run from the repository root:

    python3 benchmarks/bench_backends.py
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from casvsr import scan
from casvsr.scan import init_ssm_params, selective_scan_chunked, selective_scan_seq
from casvsr.tensor import Tensor, no_grad


def best_of(fn, repeats: int) -> float:
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--lengths", default="256,1024,4096")
    parser.add_argument("--channels", type=int, default=16)
    parser.add_argument("--state-dim", type=int, default=16)
    parser.add_argument("--chunk", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    backends = scan.available_backends()
    print(f"backends built: {', '.join(sorted(backends))}")
    if len(backends) < 2:
        print("compiled extension missing; build it with `pip install -e .` to compare")

    rng = np.random.Generator(np.random.PCG64(0))
    c, n = args.channels, args.state_dim
    header = f"{'L':>6} {'kernel':>10} " + " ".join(f"{name:>14}" for name in sorted(backends)) + f" {'agree':>6}"
    print(header)
    print("-" * len(header))

    for length in (int(v) for v in args.lengths.split(",")):
        a = rng.uniform(0.05, 0.999, (length, c, n)).astype(np.float32)
        b = rng.standard_normal((length, c, n)).astype(np.float32)
        rows = {
            "seq": {name: best_of(lambda k=k: k.scan_states(a, b), args.repeats) for name, k in backends.items()},
            "chunked": {
                name: best_of(lambda k=k: k.scan_states_chunked(a, b, args.chunk), args.repeats)
                for name, k in backends.items()
            },
        }
        outs_seq = {name: k.scan_states(a, b) for name, k in backends.items()}
        outs_chk = {name: k.scan_states_chunked(a, b, args.chunk) for name, k in backends.items()}
        agree = all(np.array_equal(list(outs_seq.values())[0], v) for v in outs_seq.values()) and all(
            np.array_equal(list(outs_chk.values())[0], v) for v in outs_chk.values()
        )
        for kernel, times in rows.items():
            cells = " ".join(f"{length / times[name]:>11.0f}/s" for name in sorted(backends))
            print(f"{length:>6} {kernel:>10} {cells} {'yes' if agree else 'NO':>6}")

    # end-to-end selective scan through each backend
    print()
    start = scan.backend_name()
    p = init_ssm_params(c, n, rng)
    x = Tensor(rng.standard_normal((4096, c)).astype(np.float32))
    with no_grad():
        for name in sorted(backends):
            scan.set_backend(name)
            t_seq = best_of(lambda: selective_scan_seq(x, p), args.repeats)
            t_chk = best_of(lambda: selective_scan_chunked(x, p, args.chunk), args.repeats)
            print(
                f"selective scan (L=4096, C={c}, N={n}) on {name:>6}: "
                f"seq {4096 / t_seq:>9.0f} tok/s, chunked {4096 / t_chk:>9.0f} tok/s"
            )
    scan.set_backend(start)


if __name__ == "__main__":
    main()
