"""Monte-Carlo link simulation: mapping, LMMSE equalization, BER and rate curves."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import binomtest

from . import _kernels
from .channel import ChannelRealization, Dataset, build_channel_matrix
from .modem import EquivalentChannel, Modem, SnrSpec, equivalent_channel, equivalent_channels

__all__ = [
    "Alphabet",
    "QPSK",
    "QAM16",
    "get_alphabet",
    "map_symbols",
    "demap_symbols",
    "lmmse_equalize",
    "run_ber_trial",
    "ber_curve",
    "rate_curve",
    "wilson_interval",
    "EvalRecord",
    "EvalReport",
    "CSV_COLUMNS",
    "write_csv",
    "read_csv",
]


@dataclass(frozen=True, eq=False)
class Alphabet:
    """Gray-labelled square constellation with unit average energy.

    ``points[i]`` carries the bit label of integer ``i`` (MSB first).
    """

    name: str
    points: np.ndarray
    bits_per_symbol: int

    @property
    def bit_distance(self) -> np.ndarray:
        q = np.arange(len(self.points))
        x = q[:, None] ^ q[None, :]
        return np.array([[bin(v).count("1") for v in row] for row in x], dtype=np.int64)


def _square_qam(name: str, bits_per_axis: int) -> Alphabet:
    L = 2**bits_per_axis
    levels = np.arange(-(L - 1), L, 2, dtype=float)
    # Gray code g -> amplitude index: binary-reflected Gray decoded position
    gray = np.arange(L) ^ (np.arange(L) >> 1)
    amp_of_label = np.empty(L)
    amp_of_label[gray] = levels
    labels = np.arange(L * L)
    i_lab, q_lab = labels >> bits_per_axis, labels & (L - 1)
    pts = amp_of_label[i_lab] + 1j * amp_of_label[q_lab]
    pts /= np.sqrt(np.mean(np.abs(pts) ** 2))
    return Alphabet(name, pts, 2 * bits_per_axis)


QPSK = _square_qam("QPSK", 1)
QAM16 = _square_qam("16QAM", 2)
_ALPHABETS = {"qpsk": QPSK, "16qam": QAM16, "qam16": QAM16}


def get_alphabet(name: str) -> Alphabet:
    try:
        return _ALPHABETS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown alphabet {name!r}; choose QPSK or 16QAM") from None


def _bits_to_index(bits: np.ndarray, k: int) -> np.ndarray:
    w = 1 << np.arange(k - 1, -1, -1)
    return bits.reshape(*bits.shape[:-1], -1, k) @ w


def map_symbols(bits: np.ndarray, alphabet: Alphabet, M: int | None = None) -> np.ndarray:
    """Map a bit vector (last axis) to symbols, ``bits_per_symbol`` bits each."""
    bits = np.asarray(bits, dtype=np.int64)
    k = alphabet.bits_per_symbol
    if bits.shape[-1] % k or (M is not None and bits.shape[-1] != M * k):
        raise ValueError(f"bit count {bits.shape[-1]} does not fit {M or '?'} symbols of {k} bits")
    return alphabet.points[_bits_to_index(bits, k)]


def demap_symbols(xhat: np.ndarray, alphabet: Alphabet) -> np.ndarray:
    """Minimum-distance hard decision back to bits."""
    xhat = np.asarray(xhat)
    idx = np.argmin(np.abs(xhat[..., None] - alphabet.points) ** 2, axis=-1)
    k = alphabet.bits_per_symbol
    bits = (idx[..., None] >> np.arange(k - 1, -1, -1)) & 1
    return bits.reshape(*xhat.shape[:-1], -1)


def lmmse_equalize(y: np.ndarray, eq: EquivalentChannel, snr: SnrSpec) -> np.ndarray:
    """One-tap LMMSE per sub-channel using only the diagonal of ``H_e``.

    ``y`` may hold several frames as trailing columns.
    """
    d = np.diagonal(eq.matrix)
    den = np.abs(d) ** 2 + snr.noise_ratio * eq.demod_row_energy
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(den > 0, np.conj(d) / np.where(den > 0, den, 1.0), 0.0)
    y = np.asarray(y)
    return (g[:, None] * y) if y.ndim == 2 else g * y


def _frames(modem, H, eq, snr, alphabet, rng, n_frames):
    """Simulate ``n_frames`` frames through the full chain; returns (errors, bits)."""
    M, k = modem.num_subcarriers, alphabet.bits_per_symbol
    tx_idx = rng.integers(0, len(alphabet.points), size=(M, n_frames))
    x = alphabet.points[tx_idx]
    s = modem.mod @ x
    noise = rng.standard_normal(s.shape) + 1j * rng.standard_normal(s.shape)
    r = H @ s + noise * np.sqrt(snr.noise_power / 2.0)
    y = modem.demod @ r
    xhat = lmmse_equalize(y, eq, snr)
    errors = _kernels.count_bit_errors(xhat, alphabet.points, tx_idx, alphabet.bit_distance)
    return errors, M * k * n_frames


def run_ber_trial(
    modem: Modem, realization: ChannelRealization, snr: SnrSpec, alphabet: Alphabet, seed, frames: int = 1
) -> tuple[int, int]:
    """Bits → symbols → Φx → Hs + w → Ψᴴr → LMMSE → hard decision, with perfect CSI."""
    H = build_channel_matrix(realization)
    eq = equivalent_channel(modem, H)
    return _frames(modem, H, eq, snr, alphabet, np.random.default_rng(seed), frames)


def wilson_interval(errors: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    if n <= 0:
        return 0.0, 1.0
    ci = binomtest(int(errors), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class EvalRecord:
    scenario: str
    snr_db: float
    metric: str
    value: float
    ci_low: float
    ci_high: float
    n_bits: int | None = None
    n_errors: int | None = None


CSV_COLUMNS = ["scenario", "snr_db", "metric", "value", "ci_low", "ci_high", "n_bits", "n_errors", "modem_id", "seed"]


@dataclass
class EvalReport:
    modem_id: str
    seed: int
    records: list[EvalRecord] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def extend(self, other: "EvalReport") -> None:
        self.records.extend(other.records)

    def get(self, metric: str, snr_db: float, scenario: str = "base") -> EvalRecord:
        for rec in self.records:
            if rec.metric == metric and rec.scenario == scenario and np.isclose(rec.snr_db, snr_db):
                return rec
        raise KeyError((metric, snr_db, scenario))

    def rows(self) -> list[dict]:
        out = []
        for rec in self.records:
            out.append(
                {
                    "scenario": rec.scenario,
                    "snr_db": f"{rec.snr_db:g}",
                    "metric": rec.metric,
                    "value": f"{rec.value:.10g}",
                    "ci_low": f"{rec.ci_low:.10g}",
                    "ci_high": f"{rec.ci_high:.10g}",
                    "n_bits": "" if rec.n_bits is None else str(rec.n_bits),
                    "n_errors": "" if rec.n_errors is None else str(rec.n_errors),
                    "modem_id": self.modem_id,
                    "seed": str(self.seed),
                }
            )
        return out


def write_csv(reports: Iterable[EvalReport], path, meta: dict | None = None) -> None:
    """Write reports as CSV; ``meta`` goes into one leading ``#`` comment line."""
    with open(path, "w", newline="") as f:
        if meta:
            f.write("# " + " ".join(f"{k}={meta[k]}" for k in sorted(meta)) + "\n")
        w = csv.DictWriter(f, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for rep in reports:
            w.writerows(rep.rows())


def read_csv(path) -> tuple[list[dict], dict]:
    """Rows and the comment-line metadata of a report written by :func:`write_csv`."""
    meta = {}
    with open(path, newline="") as f:
        lines = f.read().splitlines()
    while lines and lines[0].startswith("#"):
        for tok in lines.pop(0)[1:].split():
            k, _, v = tok.partition("=")
            meta[k] = v
    return list(csv.DictReader(lines)), meta


def ber_curve(
    modem: Modem,
    test_set: Dataset,
    snr_list: Sequence[float],
    alphabet: Alphabet,
    trials_per_channel: int,
    seed: int,
    scenario: str = "base",
    min_errors: int = 0,
    max_passes: int = 1,
) -> EvalReport:
    """BER per SNR over every channel of ``test_set``.

    Each channel gets ``trials_per_channel`` frames per pass, with random
    streams keyed by ``(seed, pass, channel)`` and shared across SNRs and
    modems, so two modems evaluated with one seed see identical bits and
    noise. Extra passes run while fewer than ``min_errors`` errors were seen.
    """
    if trials_per_channel < 1:
        raise ValueError("trials_per_channel must be >= 1")
    if len(test_set) == 0:
        raise ValueError("test set is empty")
    snrs = [SnrSpec.from_db(s) for s in snr_list]
    errors = np.zeros(len(snrs), dtype=np.int64)
    bits = np.zeros(len(snrs), dtype=np.int64)
    for p in range(max_passes):
        active = [i for i in range(len(snrs)) if p == 0 or errors[i] < min_errors]
        if not active:
            break
        for c in range(len(test_set)):
            H = test_set.matrices([c])[0]
            eq = equivalent_channel(modem, H)
            for i in active:
                rng = np.random.default_rng([seed, p, c])
                e, b = _frames(modem, H, eq, snrs[i], alphabet, rng, trials_per_channel)
                errors[i] += e
                bits[i] += b
    rep = EvalReport(modem.meta.get("modem_id", modem.fingerprint()), seed)
    for i, s in enumerate(snr_list):
        lo, hi = wilson_interval(errors[i], bits[i])
        rep.records.append(
            EvalRecord(scenario, float(s), f"ber_{alphabet.name.lower()}", errors[i] / bits[i], lo, hi, int(bits[i]), int(errors[i]))
        )
    return rep


def channel_rates(modem: Modem, test_set: Dataset, snr_db: float, chunk: int = 500) -> np.ndarray:
    """Rates of every channel, shape ``(len(test_set), M)``."""
    nr = SnrSpec.from_db(snr_db).noise_ratio
    out = []
    for start in range(0, len(test_set), chunk):
        He = equivalent_channels(modem, test_set.matrices(slice(start, start + chunk)))
        out.append(_kernels.subchannel_rates(He, modem.row_energy, nr))
    return np.concatenate(out)


def rate_curve(
    modem: Modem, test_set: Dataset, snr_list: Sequence[float], scenario: str = "base", seed: int = 0, chunk: int = 500
) -> EvalReport:
    """Mean over channels of the average and of the minimum sub-channel rate per SNR.

    Intervals are normal-approximation 95% intervals over channels.
    """
    if len(test_set) == 0:
        raise ValueError("test set is empty")
    nrs = [SnrSpec.from_db(s).noise_ratio for s in snr_list]
    n = len(test_set)
    avg = np.empty((len(nrs), n))
    mins = np.empty((len(nrs), n))
    for start in range(0, n, chunk):
        He = equivalent_channels(modem, test_set.matrices(slice(start, start + chunk)))
        for i, nr in enumerate(nrs):
            r = _kernels.subchannel_rates(He, modem.row_energy, nr)
            avg[i, start : start + len(r)] = r.mean(-1)
            mins[i, start : start + len(r)] = r.min(-1)
    rep = EvalReport(modem.meta.get("modem_id", modem.fingerprint()), seed)
    for i, s in enumerate(snr_list):
        for metric, per_channel in (("avg_rate", avg[i]), ("min_rate", mins[i])):
            mu = float(per_channel.mean())
            half = 1.959964 * float(per_channel.std(ddof=1)) / np.sqrt(n) if n > 1 else 0.0
            rep.records.append(EvalRecord(scenario, float(s), metric, mu, mu - half, mu + half))
    return rep
