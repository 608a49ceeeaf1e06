"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5]

Times the raw kernels and two end-to-end operations (a 3-level DTCWT of a
batch of images and one invariant-layer forward/backward) on every available
backend, and checks that the backends agree.
"""
import argparse
import timeit

import numpy as np

from liwn import kernels
from liwn.dtcwt import dtcwt_forward
from liwn.invariant import init_params, inv_backward, inv_forward
from liwn.tensor import fir_stage


def cases(rng):
    x_last = rng.standard_normal((64 * 3 * 32, 32, 1))
    x_mid = rng.standard_normal((64 * 3, 32, 32))
    stage = fir_stage(32, rng.standard_normal(13))
    imgs = rng.standard_normal((32, 16, 32, 32)).astype(np.float32)
    cols = kernels.im2col(imgs, 3, 1, 1)
    batch = rng.standard_normal((16, 3, 64, 64))
    layer_x = rng.standard_normal((16, 16, 32, 32)).astype(np.float32)
    params = init_params(16, 32, rng, dtype=np.float32)

    def layer_step():
        out, cache = inv_forward(layer_x, params)
        inv_backward(np.ones_like(out), cache, params)

    return {
        "gather_fir last axis, 13 taps": lambda: kernels.gather_fir(x_last, stage.idx, stage.w),
        "gather_fir middle axis, 13 taps": lambda: kernels.gather_fir(x_mid, stage.idx, stage.w),
        "scatter_fir last axis, 13 taps": lambda: kernels.scatter_fir(x_last, stage.idx, stage.w, 32),
        "scatter_fir middle axis, 13 taps": lambda: kernels.scatter_fir(x_mid, stage.idx, stage.w, 32),
        "im2col 32x16x32x32, 3x3": lambda: kernels.im2col(imgs, 3, 1, 1),
        "col2im 32x16x32x32, 3x3": lambda: kernels.col2im(cols, 16, 32, 32, 3, 1, 1),
        "dtcwt J=3, 16x3x64x64": lambda: dtcwt_forward(batch, 3),
        "invariant layer fwd+bwd 16x16x32x32": layer_step,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    timings, outputs = {}, {}
    for b in backends:
        kernels.use_backend(b)
        for name, fn in cases(np.random.default_rng(0)).items():
            outputs[b, name] = fn()
            timings[b, name] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
    names = list(cases(np.random.default_rng(0)))
    header = f"{'case':<40}" + "".join(f"{b + ' ms':>14}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}{'max diff':>12}"
    print(header)
    for name in names:
        line = f"{name:<40}" + "".join(f"{1e3 * timings[b, name]:>14.2f}" for b in backends)
        if len(backends) == 2:
            a, c = outputs["cython", name], outputs["python", name]
            diff = 0.0
            if isinstance(a, np.ndarray):
                diff = float(np.abs(a - c).max())
            elif hasattr(a, "arrays"):
                diff = max(float(np.abs(p - q).max()) for p, q in zip(a.arrays(), c.arrays()))
            line += f"{timings['python', name] / timings['cython', name]:>10.2f}{diff:>12.2e}"
        print(line)
    kernels.use_backend(backends[0])


if __name__ == "__main__":
    main()
