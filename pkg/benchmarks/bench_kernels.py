"""Benchmark the compiled kernel lane against the numpy fallback.

Times each hot kernel (softmax, layer-norm, relu, sigmoid, forward and
backward, plus the fused AdamW update) on shapes representative of a
training step and prints the per-call medians plus speedups. Matrix
products are not benchmarked: both lanes delegate them to BLAS.

Run as: python3 benchmarks/bench_kernels.py [--width 128] [--rows 4096]
Lanes are compared in-process; the end-to-end engine lane is still
selected at import via LNLN_KERNELS.
"""

import argparse
import time

import numpy as np

from lnln.diffcore.kernels import available_backends, get_lane


def _median_time(fn, repeats, number):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(number):
            fn()
        times.append((time.perf_counter() - t0) / number)
    return float(np.median(times))


def _cases(rows, width, dtype, rng):
    x = np.ascontiguousarray(rng.standard_normal((rows, width)), dtype=dtype)
    g = np.ascontiguousarray(rng.standard_normal((rows, width)), dtype=dtype)
    flat = np.ascontiguousarray(rng.standard_normal(rows * width), dtype=dtype)
    gflat = np.ascontiguousarray(rng.standard_normal(rows * width), dtype=dtype)

    def softmax_pair(lane):
        y = lane.softmax_fwd(x)
        return (lambda: lane.softmax_fwd(x),
                lambda: lane.softmax_bwd(g, y))

    def layer_norm_pair(lane):
        y, inv = lane.layer_norm_fwd(x, 1e-5)
        return (lambda: lane.layer_norm_fwd(x, 1e-5),
                lambda: lane.layer_norm_bwd(g, y, inv))

    def relu_pair(lane):
        y = lane.relu_fwd(flat)
        return (lambda: lane.relu_fwd(flat),
                lambda: lane.relu_bwd(gflat, y))

    def sigmoid_pair(lane):
        y = lane.sigmoid_fwd(flat)
        return (lambda: lane.sigmoid_fwd(flat),
                lambda: lane.sigmoid_bwd(gflat, y))

    def adamw(lane):
        p = flat.copy()
        m = np.zeros_like(flat)
        v = np.zeros_like(flat)

        def step():
            lane.adamw_step(p, gflat, m, v, 1, 1e-4, 0.9, 0.999, 1e-8, 0.01)

        return (step,)

    return {
        "softmax": softmax_pair,
        "layer_norm": layer_norm_pair,
        "relu": relu_pair,
        "sigmoid": sigmoid_pair,
        "adamw": adamw,
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rows", type=int, default=4096)
    parser.add_argument("--width", type=int, default=128)
    parser.add_argument("--repeats", type=int, default=7)
    parser.add_argument("--number", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    lanes = [get_lane(name) for name in available_backends()]
    if len(lanes) < 2:
        print("compiled lane unavailable; timing the python lane only")
    rng = np.random.default_rng(args.seed)

    header = f"{'kernel':<22}{'dtype':<9}"
    for lane in lanes:
        header += f"{lane.name:>12}"
    if len(lanes) == 2:
        header += f"{'speedup':>9}"
    print(header)
    print("-" * len(header))

    for dtype in (np.float32, np.float64):
        cases = _cases(args.rows, args.width, dtype, rng)
        for name, build in cases.items():
            per_lane = [build(lane) for lane in lanes]
            n_funcs = len(per_lane[0])
            for k in range(n_funcs):
                suffix = ("", "_fwd", "_bwd")[0 if n_funcs == 1 else k + 1]
                row = f"{name + suffix:<22}{np.dtype(dtype).name:<9}"
                times = []
                for funcs in per_lane:
                    t = _median_time(funcs[k], args.repeats, args.number)
                    times.append(t)
                    row += f"{t * 1e6:>10.1f}us"
                if len(times) == 2:
                    row += f"{times[1] / times[0]:>8.2f}x"
                print(row)


if __name__ == "__main__":
    main()
