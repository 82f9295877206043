"""Time the compiled conv1d kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeats N] [--json PATH]

The layer shapes are the three encoder blocks at the default pretext
window (512 samples, batch 128) and the supervised window (3072 samples,
batch 16).
"""

import argparse
import json
import time

import numpy as np

from phaseswap.nn import _conv_py

try:
    from phaseswap.nn import _conv_ext
except ImportError:
    _conv_ext = None

LAYERS = [
    # (batch, in, out, kernel, length)
    (128, 4, 128, 8, 512),
    (128, 128, 256, 5, 512),
    (128, 256, 128, 3, 512),
    (16, 128, 256, 5, 3072),
]


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def layer_inputs(shape, rng):
    b, cin, cout, k, length = shape
    return (rng.normal(size=(b, cin, length)), rng.normal(size=(cout, cin, k)),
            rng.normal(size=cout), rng.normal(size=(b, cout, length)))


def bench_layer(impl, inputs, repeats):
    x, w, bias, g = inputs
    out, xcol = impl.conv1d_forward(x, w, bias)
    fwd = best_of(lambda: impl.conv1d_forward(x, w, bias), repeats)
    bwd = best_of(lambda: impl.conv1d_backward(g, xcol, w, True), repeats)
    return fwd, bwd, out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--json", help="also write results to this file")
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    impls = [("numpy", _conv_py)]
    if _conv_ext is not None:
        impls.append(("cython", _conv_ext))
    else:
        print("compiled extension not built; timing the numpy path only")

    results = []
    print(f"{'layer (B,Cin,Cout,k,L)':<28}{'backend':<9}{'forward s':>11}{'backward s':>12}")
    for shape in LAYERS:
        outputs = {}
        inputs = layer_inputs(shape, rng)
        for name, impl in impls:
            fwd, bwd, outputs[name] = bench_layer(impl, inputs, args.repeats)
            results.append({"layer": shape, "backend": name, "forward": fwd, "backward": bwd})
            print(f"{str(shape):<28}{name:<9}{fwd:>11.3f}{bwd:>12.3f}")
        if len(outputs) == 2:
            diff = np.max(np.abs(outputs["numpy"] - outputs["cython"]))
            scale = np.max(np.abs(outputs["numpy"]))
            print(f"{'':<28}max |numpy - cython| = {diff:.1e} (output scale {scale:.1e})")

    if len(impls) == 2:
        total = {name: sum(r["forward"] + r["backward"] for r in results if r["backend"] == name)
                 for name, _ in impls}
        print(f"total numpy {total['numpy']:.2f}s, cython {total['cython']:.2f}s, "
              f"speedup x{total['numpy'] / total['cython']:.2f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
