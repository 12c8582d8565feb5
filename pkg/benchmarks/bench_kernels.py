"""Time the compiled kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json PATH]

Shapes follow the first stage of the spatial branch at the desk-scale
setting (48 x 48 map, C = 36 split into 3 heads) and the spectral branch's
depth pooling.  Every pair of outputs is also compared, so a fast but wrong
build shows up here as well.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from hsunmix import kernels


def cases(rng):
    q, k, v = (rng.normal(size=(48, 48, 12)).astype(np.float32) for _ in range(3))
    g = rng.normal(size=(48, 48, 12)).astype(np.float32)
    x = rng.normal(size=(48, 48, 36)).astype(np.float32)
    cols = rng.normal(size=(24, 24, 3, 3, 36)).astype(np.float32)
    vol = rng.normal(size=(64, 48 * 48 * 4)).astype(np.float32)

    def swda_bwd(mod, rate):
        _, attn = mod.swda_forward(q, k, v, rate, 3)
        return lambda: mod.swda_backward(q, k, v, attn, g, rate, 3)

    def pool_bwd(mod):
        out, arg = mod.maxpool_depth(vol, 2)
        return lambda: mod.maxpool_depth_backward(out, arg, vol.shape[0])

    return {
        "swda_forward r=1 48x48x12": lambda mod: (lambda: mod.swda_forward(q, k, v, 1, 3)),
        "swda_forward r=3 48x48x12": lambda mod: (lambda: mod.swda_forward(q, k, v, 3, 3)),
        "swda_backward r=2 48x48x12": lambda mod: swda_bwd(mod, 2),
        "im2col 3x3/2 48x48x36": lambda mod: (lambda: mod.im2col(x, 3, 3, (2, 2), (1, 1))),
        "col2im 3x3/2 48x48x36": lambda mod: (lambda: mod.col2im(cols, (48, 48, 36), (2, 2), (1, 1))),
        "maxpool_depth 64x9216": lambda mod: (lambda: mod.maxpool_depth(vol, 2)),
        "maxpool_depth_backward 64x9216": pool_bwd,
    }


def _flat(result):
    parts = result if isinstance(result, tuple) else (result,)
    return [np.asarray(p, dtype=np.float64) for p in parts]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5, help="best of N timings per kernel")
    p.add_argument("--json", help="also write the table as JSON")
    args = p.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels are not built; timing the numpy backend only", file=sys.stderr)
    rows = []
    for name, make in cases(np.random.default_rng(0)).items():
        row = {"kernel": name}
        outputs = {}
        for b in backends:
            fn = make(kernels.get_backend(b))
            outputs[b] = _flat(fn())
            number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
            row[b] = min(timeit.repeat(fn, number=number, repeat=args.repeat)) / number
        if len(outputs) == 2:
            row["max_abs_diff"] = max(float(np.abs(a - c).max()) for a, c in zip(outputs["cython"], outputs["numpy"]))
            row["speedup"] = row["numpy"] / row["cython"]
        rows.append(row)

    header = f"{'kernel':34s} {'numpy ms':>10s}"
    if "cython" in backends:
        header += f" {'cython ms':>10s} {'speedup':>8s} {'max |diff|':>11s}"
    print(header)
    for r in rows:
        line = f"{r['kernel']:34s} {1e3 * r['numpy']:10.3f}"
        if "cython" in r:
            line += f" {1e3 * r['cython']:10.3f} {r['speedup']:7.2f}x {r['max_abs_diff']:11.2e}"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
