"""Compare the compiled and pure-Python estimator kernels.

    python3 benchmarks/bench_kernels.py [--envs 8] [--horizon 512] [--nstep 16] [--repeat 5]

Prints the best-of-``repeat`` wall time per call for each backend, the speedup,
and checks that both backends agree bit for bit.
"""
import argparse
import sys
import timeit

import numpy as np

from onpolicy import _kernels


def make_inputs(n_env, horizon, seed=0):
    rng = np.random.default_rng(seed)
    shape = (n_env, horizon)
    cut = (rng.random(shape) < 0.01).astype(np.uint8)
    return dict(
        deltas=rng.normal(size=shape), decay=np.full(shape, 0.99 * 0.95),
        rewards=rng.normal(size=shape), values=rng.normal(size=shape),
        next_values=rng.normal(size=shape), discounts=np.full(shape, 0.99), cut=cut)


def cases(x, nstep):
    return {
        "discounted_backward": lambda k: k.discounted_backward(x["deltas"], x["decay"], x["cut"]),
        f"nstep_targets(n={nstep})": lambda k: k.nstep_targets(
            x["rewards"], x["values"], x["next_values"], x["discounts"], x["cut"], nstep),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--envs", type=int, default=8)
    p.add_argument("--horizon", type=int, default=512)
    p.add_argument("--nstep", type=int, default=16)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)

    py, cy = _kernels.python_backend, _kernels.compiled_backend
    if cy is None:
        print("compiled kernels not built; only the Python backend is available")
    x = make_inputs(args.envs, args.horizon)
    print(f"{args.envs} envs x {args.horizon} steps, best of {args.repeat}")
    for name, fn in cases(x, args.nstep).items():
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat))
        line = f"{name:24s} python {t_py * 1e3:9.3f} ms"
        if cy is not None:
            t_cy = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat))
            same = np.array_equal(fn(py), fn(cy))
            line += f"  cython {t_cy * 1e3:8.3f} ms  speedup {t_py / t_cy:7.1f}x  identical={same}"
        print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
