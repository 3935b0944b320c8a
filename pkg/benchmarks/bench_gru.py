"""Time the GRU recurrence kernels: compiled extension vs numpy fallback.

    python3 benchmarks/bench_gru.py [--repeat 20]

Shapes follow the network's use: sequence length = feature count, hidden
width = feature count, batch = minibatch size.
"""
import argparse
import timeit

import numpy as np

from dresnet_ids import _gru_py

try:
    from dresnet_ids import _gru_ext
except ImportError:
    _gru_ext = None

SHAPES = [(5, 32, 5), (19, 128, 19), (42, 128, 42), (42, 512, 42)]  # (L, N, H)


def _inputs(L, N, H, seed=0):
    rng = np.random.default_rng(seed)
    xw = rng.normal(size=(L, N, 3 * H))
    u = rng.normal(scale=1 / np.sqrt(H), size=(H, 3 * H))
    h0 = np.zeros((N, H))
    return xw, u, h0


def _time(mod, L, N, H, repeat):
    xw, u, h0 = _inputs(L, N, H)
    hs, zs, rs, hcs = mod.gru_scan(xw, u, h0)
    dhs = np.ones_like(hs)
    fwd = min(timeit.repeat(lambda: mod.gru_scan(xw, u, h0), number=1, repeat=repeat))
    bwd = min(timeit.repeat(lambda: mod.gru_scan_backward(dhs, u, h0, hs, zs, rs, hcs), number=1, repeat=repeat))
    return fwd, bwd


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if _gru_ext is None:
        print("compiled extension not built; timing the fallback only")
    print(f"{'L':>4} {'N':>5} {'H':>4} | {'py fwd ms':>10} {'py bwd ms':>10} | "
          f"{'ext fwd ms':>10} {'ext bwd ms':>10} | {'speedup':>7}")
    for L, N, H in SHAPES:
        pf, pb = _time(_gru_py, L, N, H, args.repeat)
        row = f"{L:>4} {N:>5} {H:>4} | {pf * 1e3:>10.3f} {pb * 1e3:>10.3f} | "
        if _gru_ext is not None:
            ef, eb = _time(_gru_ext, L, N, H, args.repeat)
            row += f"{ef * 1e3:>10.3f} {eb * 1e3:>10.3f} | {(pf + pb) / (ef + eb):>6.1f}x"
        print(row)


if __name__ == "__main__":
    main()
