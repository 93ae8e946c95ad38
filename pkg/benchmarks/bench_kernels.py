"""Time the numba kernels against their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

The first numba call includes JIT compilation (or a cache load); it is timed
separately and excluded from the steady-state numbers.
"""
import argparse
import time

import numpy as np

from ddmodem import _kernels
from ddmodem.channel import ChannelSpec, generate_dataset
from ddmodem.link import QAM16
from ddmodem.modem import equivalent_channels, make_ofdm_modem


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return min(times)


def cases():
    out = []
    for M, Mp, lmax, n in ((32, 8, 6, 1000), (128, 24, 20, 200)):
        spec = ChannelSpec.with_speed_kmh(360, num_subcarriers=M, prefix_len=Mp, num_paths=4, max_delay_grid=lmax)
        ds = generate_dataset(spec, n, 0)
        out.append((f"channel_matrices M={M} n={n}", "channel_matrices", (ds.gains, ds.delays, ds.normalized_dopplers, M, Mp)))
        modem = make_ofdm_modem(M, Mp)
        He = equivalent_channels(modem, ds.matrices())
        out.append((f"subchannel_rates M={M} n={n}", "subchannel_rates", (He, modem.row_energy, 0.01)))
    rng = np.random.default_rng(0)
    tx = rng.integers(0, 16, size=(128, 2000))
    xhat = QAM16.points[tx] + 0.2 * (rng.standard_normal(tx.shape) + 1j * rng.standard_normal(tx.shape))
    out.append(("count_bit_errors 16QAM 256k sym", "count_bit_errors", (xhat, QAM16.points, tx, QAM16.bit_distance)))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _kernels.NUMBA_KERNELS:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"active path: {'numba' if _kernels.USE_NUMBA else 'numpy'}")
    print(f"{'case':<34}{'numpy ms':>10}{'numba ms':>10}{'first ms':>10}{'speedup':>9}")
    for label, key, a in cases():
        np_fn, nb_fn = _kernels.NUMPY_KERNELS[key], _kernels.NUMBA_KERNELS[key]
        t = time.perf_counter()
        nb_fn(*a)
        first = time.perf_counter() - t
        ref, got = np_fn(*a), nb_fn(*a)
        assert np.allclose(ref, got), label
        t_np = best_of(np_fn, a, args.repeat)
        t_nb = best_of(nb_fn, a, args.repeat)
        print(f"{label:<34}{1e3 * t_np:>10.2f}{1e3 * t_nb:>10.2f}{1e3 * first:>10.1f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
