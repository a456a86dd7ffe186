"""Time the jitted kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5]

Both paths are always importable here regardless of TALKIT_USE_NUMBA; the
flag only decides which one the library calls.
"""

import argparse
import time

import numpy as np

from talkit import _accel


def _best(fn, args, repeat):
    fn(*args)  # warm-up, includes jit compile
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def soft_nms_case(n, rng):
    starts = rng.uniform(0, 300, n)
    ends = starts + rng.uniform(0.5, 30, n)
    return (starts, ends, rng.random(n), 0.9, 0.001)


def match_case(n_det, n_videos, rng):
    group = np.sort(rng.integers(0, n_videos, n_det))
    ds = rng.uniform(0, 300, n_det)
    de = ds + rng.uniform(0.5, 30, n_det)
    per = rng.integers(1, 8, n_videos)
    ptr = np.concatenate([[0], np.cumsum(per)]).astype(np.int64)
    gs = rng.uniform(0, 300, ptr[-1])
    ge = gs + rng.uniform(0.5, 30, ptr[-1])
    order = rng.permutation(n_det)
    return (group[order], ds[order], de[order], ptr, gs, ge, 0.5)


def assign_case(t, levels, n_inst, rng):
    centers, strides, lo, hi = [], [], [], []
    for lvl in range(levels):
        s = 2**lvl
        n = t // s
        centers.append(np.arange(n) * float(s))
        strides.append(np.full(n, float(s)))
        lo.append(np.full(n, 0.0 if lvl == 0 else 4.0 * 2 ** (lvl - 1)))
        hi.append(np.full(n, np.inf if lvl == levels - 1 else 4.0 * 2**lvl))
    starts = rng.uniform(0, t - 20, n_inst)
    ends = starts + rng.uniform(1, 60, n_inst)
    cat = np.concatenate
    return (cat(centers), cat(strides), cat(lo), cat(hi), 1.5, starts, ends)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    if not _accel.HAVE_NUMBA:
        print("numba not importable; only the numpy path exists")
        return
    cases = [
        ("soft_nms n=500", _accel.soft_nms_numpy, _accel.soft_nms_numba, soft_nms_case(500, rng)),
        ("soft_nms n=2000", _accel.soft_nms_numpy, _accel.soft_nms_numba, soft_nms_case(2000, rng)),
        ("greedy_match 20k dets", _accel.greedy_match_numpy, _accel.greedy_match_numba, match_case(20_000, 400, rng)),
        ("assign T=1024 L=6 x10", _accel.assign_numpy, _accel.assign_numba, assign_case(1024, 6, 10, rng)),
        ("assign T=2304 L=6 x40", _accel.assign_numpy, _accel.assign_numba, assign_case(2304, 6, 40, rng)),
    ]
    print(f"{'kernel':<26}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, slow, fast, case in cases:
        a, b = slow(*case), fast(*case)
        for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            np.testing.assert_allclose(np.asarray(x, dtype=float), np.asarray(y, dtype=float), rtol=1e-12)
        t_np = _best(slow, case, args.repeat)
        t_nb = _best(fast, case, args.repeat)
        print(f"{name:<26}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
