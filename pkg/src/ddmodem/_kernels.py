"""Hot numeric kernels with a numba path and a pure-numpy path.

Set ``DDMODEM_DISABLE_NUMBA=1`` to force the numpy implementations (useful
for debugging, or on platforms without numba). Both paths are always importable
from :data:`NUMPY_KERNELS` and :data:`NUMBA_KERNELS` so they can be
cross-checked and benchmarked against each other.
"""
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

__all__ = [
    "USE_NUMBA",
    "channel_matrices",
    "subchannel_rates",
    "count_bit_errors",
    "NUMPY_KERNELS",
    "NUMBA_KERNELS",
]

_DISABLED = os.environ.get("DDMODEM_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")
USE_NUMBA = numba is not None and not _DISABLED


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------
def _channel_matrices_np(gains, delays, kdopp, M, Mp):
    B, Np = gains.shape
    ML = M + Mp
    H = np.zeros((B, ML, ML), dtype=np.complex128)
    rows = np.arange(ML)
    n = rows - Mp  # canonical sample index -Mp..M-1
    for i in range(Np):
        cols = rows[None, :] - delays[:, i][:, None]
        valid = cols >= 0
        b_idx = np.broadcast_to(np.arange(B)[:, None], cols.shape)[valid]
        r_idx = np.broadcast_to(rows[None, :], cols.shape)[valid]
        phase = np.exp(2j * np.pi * n[None, :] * kdopp[:, i][:, None] / M)
        val = (gains[:, i][:, None] * phase)[valid]
        # repeated delays across paths must accumulate
        np.add.at(H, (b_idx, r_idx, cols[valid]), val)
    return H


def _subchannel_rates_np(He, row_energy, noise_ratio):
    p = np.abs(He) ** 2
    sig = np.diagonal(p, axis1=-2, axis2=-1)
    interf = p.sum(axis=-1) - sig
    den = interf + noise_ratio * row_energy
    with np.errstate(divide="ignore", invalid="ignore"):
        sinr = np.where(den == 0, np.where(sig > 0, np.inf, 0.0), sig / np.where(den == 0, 1.0, den))
    return np.log2(1.0 + sinr)


def _count_bit_errors_np(xhat, points, tx_idx, bit_dist):
    d = np.abs(xhat.reshape(-1)[:, None] - points[None, :]) ** 2
    rx_idx = np.argmin(d, axis=1)
    return int(bit_dist[tx_idx.reshape(-1), rx_idx].sum())


NUMPY_KERNELS = {
    "channel_matrices": _channel_matrices_np,
    "subchannel_rates": _subchannel_rates_np,
    "count_bit_errors": _count_bit_errors_np,
}


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------
def _channel_matrices_loop(gains, delays, kdopp, M, Mp, H):
    # H arrives zeroed from the caller: numpy's calloc-backed zeros beat a memset here
    B, Np = gains.shape
    ML = M + Mp
    for b in range(B):
        for i in range(Np):
            l = delays[b, i]
            g = gains[b, i]
            w = 2.0 * np.pi * kdopp[b, i] / M
            for r in range(l, ML):
                x = w * (r - Mp)
                H[b, r, r - l] += g * complex(np.cos(x), np.sin(x))
    return H


def _subchannel_rates_loop(He, row_energy, noise_ratio):
    B, M, _ = He.shape
    out = np.empty((B, M))
    for b in range(B):
        for m in range(M):
            sig = 0.0
            interf = 0.0
            for k in range(M):
                v = He[b, m, k]
                a = v.real * v.real + v.imag * v.imag
                if k == m:
                    sig = a
                else:
                    interf += a
            den = interf + noise_ratio * row_energy[b, m]
            if den == 0.0:
                out[b, m] = np.inf if sig > 0.0 else 0.0
            else:
                out[b, m] = np.log2(1.0 + sig / den)
    return out


def _count_bit_errors_loop(xhat, points, tx_idx, bit_dist):
    flat = xhat.ravel()
    tx = tx_idx.ravel()
    Q = points.shape[0]
    total = 0
    for i in range(flat.shape[0]):
        best = 0
        dbest = np.inf
        for q in range(Q):
            dr = flat[i].real - points[q].real
            di = flat[i].imag - points[q].imag
            d = dr * dr + di * di
            if d < dbest:
                dbest = d
                best = q
        total += bit_dist[tx[i], best]
    return total


if numba is not None:
    _jit = numba.njit(cache=True, nogil=True)
    _NB = {
        "channel_matrices": _jit(_channel_matrices_loop),
        "subchannel_rates": _jit(_subchannel_rates_loop),
        "count_bit_errors": _jit(_count_bit_errors_loop),
    }
else:  # pragma: no cover
    _NB = {}


def _subchannel_rates_dispatch(He, row_energy, noise_ratio):
    He = np.ascontiguousarray(He, dtype=np.complex128)
    row_energy = np.ascontiguousarray(np.broadcast_to(row_energy, He.shape[:-1]), dtype=np.float64)
    if He.ndim == 2:
        return _NB["subchannel_rates"](He[None], row_energy[None], float(noise_ratio))[0]
    lead = He.shape[:-2]
    M = He.shape[-1]
    out = _NB["subchannel_rates"](
        He.reshape(-1, M, M), row_energy.reshape(-1, M), float(noise_ratio)
    )
    return out.reshape(*lead, M)


def _channel_matrices_dispatch(gains, delays, kdopp, M, Mp):
    gains = np.ascontiguousarray(gains, dtype=np.complex128)
    ML = int(M) + int(Mp)
    H = np.zeros((gains.shape[0], ML, ML), dtype=np.complex128)
    _NB["channel_matrices"](
        gains,
        np.ascontiguousarray(delays, dtype=np.int64),
        np.ascontiguousarray(kdopp, dtype=np.float64),
        int(M),
        int(Mp),
        H,
    )
    return H


def _count_bit_errors_dispatch(xhat, points, tx_idx, bit_dist):
    return int(
        _NB["count_bit_errors"](
            np.ascontiguousarray(xhat, dtype=np.complex128),
            np.ascontiguousarray(points, dtype=np.complex128),
            np.ascontiguousarray(tx_idx, dtype=np.int64),
            np.ascontiguousarray(bit_dist, dtype=np.int64),
        )
    )


NUMBA_KERNELS = (
    {
        "channel_matrices": _channel_matrices_dispatch,
        "subchannel_rates": _subchannel_rates_dispatch,
        "count_bit_errors": _count_bit_errors_dispatch,
    }
    if _NB
    else {}
)

if USE_NUMBA:
    channel_matrices = _channel_matrices_dispatch
    subchannel_rates = _subchannel_rates_dispatch
    count_bit_errors = _count_bit_errors_dispatch
else:
    channel_matrices = _channel_matrices_np
    subchannel_rates = _subchannel_rates_np
    count_bit_errors = _count_bit_errors_np
