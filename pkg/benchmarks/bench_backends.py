"""Compare the compiled and NumPy kernel lanes: speed and agreement.

Usage: python benchmarks/bench_backends.py [--quick]

Prints particle-step throughput for both lanes across representative
workloads, plus a consistency block verifying that short trajectories agree
to rounding and kill decisions coincide (the lanes share stream addressing
but use different transcendental implementations, so long trajectories
decorrelate at the last ulp; distributional agreement is checked by a
survival-frequency comparison with shared seeds).
"""

import argparse
import time

import numpy as np

from fvqsd import builtin_potential
from fvqsd.backends import get_backend
from fvqsd.sde import _kernel_ids


def bench_fv(backend, n, steps, seed=1):
    p = builtin_potential("double_well_1d", {"epsilon": 0.5})
    pot_id, pp, dom_id, dp = _kernel_ids(p)
    g = np.random.default_rng(seed)
    x = np.ascontiguousarray(g.uniform(-1.4, 1.4, size=(n, 1)))
    epochs = np.zeros(n, dtype=np.uint64)
    sie = np.zeros(n, dtype=np.uint64)
    killed = np.zeros(n, dtype=np.uint8)
    prev = np.zeros_like(x)
    ids = np.arange(n, dtype=np.uint64)
    t0 = time.perf_counter()
    done = 0
    while done < steps:
        done += backend.fv_advance(np.uint64(seed), np.uint64(0), ids, x,
                                   epochs, sie, pot_id, pp, dom_id, dp,
                                   1e-3, 0.5, steps - done, killed, prev)
    dt = time.perf_counter() - t0
    return n * steps / dt


def bench_coupled(backend, n, steps, seed=2):
    p = builtin_potential("double_well_1d", {"epsilon": 0.5})
    pot_id, pp, dom_id, dp = _kernel_ids(p)
    x = np.full((n, 1), -1.0)
    y = np.full((n, 1), 1.0)
    mask = np.zeros(n, dtype=np.uint8)
    epochs = np.zeros(n, dtype=np.uint64)
    sie = np.zeros(n, dtype=np.uint64)
    kx = np.zeros(n, dtype=np.uint8)
    ky = np.zeros(n, dtype=np.uint8)
    px = np.zeros_like(x)
    py = np.zeros_like(y)
    ids = np.arange(n, dtype=np.uint64)
    t0 = time.perf_counter()
    done = 0
    while done < steps:
        done += backend.coupled_advance(np.uint64(seed), np.uint64(0), ids,
                                        x, y, mask, epochs, sie, pot_id, pp,
                                        dom_id, dp, 1e-3, 0.5, 0.0316,
                                        steps - done, kx, ky, px, py)
    dt = time.perf_counter() - t0
    return n * steps / dt


def consistency_block():
    p = builtin_potential("quadratic_1d", {"epsilon": 0.5})
    pot_id, pp, dom_id, dp = _kernel_ids(p)
    g = np.random.default_rng(3)
    n = 64
    x0 = np.ascontiguousarray(g.uniform(-0.8, 0.8, size=(n, 1)))
    out = {}
    for name in ("numpy", "cython"):
        b = get_backend(name)
        x = x0.copy()
        epochs = np.zeros(n, dtype=np.uint64)
        sie = np.zeros(n, dtype=np.uint64)
        killed = np.zeros(n, dtype=np.uint8)
        prev = np.zeros_like(x)
        b.fv_advance(np.uint64(11), np.uint64(0),
                     np.arange(n, dtype=np.uint64), x, epochs, sie,
                     pot_id, pp, dom_id, dp, 1e-3, 0.5, 400, killed, prev)
        out[name] = (x.copy(), killed.copy())
    pos_gap = float(np.max(np.abs(out["numpy"][0] - out["cython"][0])))
    same_kills = bool(np.array_equal(out["numpy"][1], out["cython"][1]))
    print(f"short-horizon position gap : {pos_gap:.3e} (rounding-level)")
    print(f"kill decisions identical   : {same_kills}")

    # distributional check: survival frequency over many paths, same seeds
    freqs = {}
    for name in ("numpy", "cython"):
        b = get_backend(name)
        x = np.full((20_000, 1), 0.3)
        alive = np.ones(20_000, dtype=np.uint8)
        exit_step = np.full(20_000, -1, dtype=np.int64)
        b.paths_advance(np.uint64(17), np.zeros(20_000, dtype=np.uint64),
                        np.arange(20_000, dtype=np.uint64), x, alive,
                        exit_step, pot_id, pp, dom_id, dp, 1e-3, 0.5,
                        0, 1000)
        freqs[name] = alive.mean()
    gap = abs(freqs["numpy"] - freqs["cython"])
    se = np.sqrt(freqs["cython"] * (1 - freqs["cython"]) / 20_000)
    print(f"survival freq numpy/cython : {freqs['numpy']:.4f} / "
          f"{freqs['cython']:.4f} (gap {gap:.4f}, MC se {se:.4f})")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()
    scale = 0.2 if args.quick else 1.0

    lanes = {}
    for name in ("numpy", "cython"):
        try:
            lanes[name] = get_backend(name)
        except Exception as exc:
            print(f"lane {name} unavailable: {exc}")
    print(f"{'workload':<28}" + "".join(f"{n:>14}" for n in lanes)
          + f"{'speedup':>10}")
    workloads = [
        ("fv N=10", lambda b: bench_fv(b, 10, int(20_000 * scale))),
        ("fv N=100", lambda b: bench_fv(b, 100, int(20_000 * scale))),
        ("fv N=1000", lambda b: bench_fv(b, 1000, int(5_000 * scale))),
        ("coupled N=50", lambda b: bench_coupled(b, 50, int(10_000 * scale))),
        ("coupled N=250",
         lambda b: bench_coupled(b, 250, int(4_000 * scale))),
    ]
    for label, fn in workloads:
        rates = {name: fn(b) for name, b in lanes.items()}
        row = f"{label:<28}" + "".join(
            f"{rates[n] / 1e6:>11.1f} M/s" for n in rates)
        if len(rates) == 2:
            row += f"{rates['cython'] / rates['numpy']:>9.1f}x"
        print(row)
    if len(lanes) == 2:
        print()
        consistency_block()


if __name__ == "__main__":
    main()
