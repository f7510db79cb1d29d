"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--samples 1400] [--repeat 5]

Prints the best-of-``repeat`` wall time per call for each kernel and backend.
"""
import argparse
import timeit

import numpy as np

from fedmeter import _backend

N_IN, N_HID = 5, 40


def cases(samples, rng):
    p = rng.normal(0, 0.3, (N_IN + 1) * N_HID + N_HID + 1)
    x = rng.uniform(size=(samples, N_IN))
    y = rng.normal(size=samples)
    order = rng.permutation(samples).astype(np.int64)
    anchor = p + rng.normal(0, 0.1, p.shape)
    return {
        "forward_batch": lambda k: k.forward_batch(p, N_IN, N_HID, x),
        "loss_and_grad": lambda k: k.loss_and_grad(p, N_IN, N_HID, x, y),
        "sgd_epoch b=32": lambda k: k.sgd_epoch(p.copy(), N_IN, N_HID, x, y, order, 32, 0.01, 5e-4, anchor),
        "sgd_epoch b=1": lambda k: k.sgd_epoch(p.copy(), N_IN, N_HID, x, y, order, 1, 0.01, 5e-4, anchor),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=1400, help="training rows per call (a 2000-sample community)")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    backends = [("numpy", _backend.fallback)]
    if _backend.compiled:
        backends.insert(0, ("cython", _backend.kernels))
    else:
        print("compiled extension not available; timing the fallback only")

    print(f"{'kernel':16s}" + "".join(f"{name:>14s}" for name, _ in backends) + ("   speedup" if len(backends) > 1 else ""))
    for label, fn in cases(args.samples, np.random.default_rng(0)).items():
        times = []
        for _, kern in backends:
            t = timeit.Timer(lambda: fn(kern))
            n, _ = t.autorange()
            times.append(min(t.repeat(args.repeat, n)) / n)
        row = f"{label:16s}" + "".join(f"{t * 1e3:11.3f} ms" for t in times)
        if len(times) > 1:
            row += f"   {times[1] / times[0]:6.1f}x"
        print(row)


if __name__ == "__main__":
    main()
