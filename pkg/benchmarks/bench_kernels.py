"""Time the numba kernels against their pure-numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeats N]

The fallbacks are what ``RNNTLAB_DISABLE_NUMBA=1`` selects at import time.
"""
import argparse
import time

import numpy as np

from rnntlab import _accel
from rnntlab._kernels import alpha_beta_numba, alpha_beta_numpy, edit_distance_numba, edit_distance_numpy


def best_of(fn, args, repeats):
    fn(*args)  # warm-up (JIT compile on the first numba call)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def lattice_case(rng, T, U):
    blank = np.log(rng.uniform(0.05, 0.95, (T, U + 1)))
    emit = np.log(rng.uniform(0.01, 0.5, (T, U)))
    return blank, emit


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=20)
    args = p.parse_args(argv)
    if not _accel.HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    rows = []
    for T, U in ((20, 5), (60, 12), (200, 40)):
        case = lattice_case(rng, T, U)
        a_nb, _ = alpha_beta_numba(*case)
        a_np, _ = alpha_beta_numpy(*case)
        assert np.isclose(a_nb[T, U], a_np[T, U], rtol=1e-12)
        rows.append((f"alpha_beta T={T} U={U}", best_of(alpha_beta_numba, case, args.repeats),
                     best_of(alpha_beta_numpy, case, args.repeats)))
    for n in (10, 50, 200):
        case = (rng.integers(0, 20, n), rng.integers(0, 20, n))
        assert edit_distance_numba(*case) == edit_distance_numpy(*case)
        rows.append((f"edit_distance n={n}", best_of(edit_distance_numba, case, args.repeats),
                     best_of(edit_distance_numpy, case, args.repeats)))
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel'.ljust(width)}  {'numba us':>10}  {'numpy us':>10}  {'speedup':>8}")
    for name, t_nb, t_np in rows:
        print(f"{name.ljust(width)}  {t_nb * 1e6:10.1f}  {t_np * 1e6:10.1f}  {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
