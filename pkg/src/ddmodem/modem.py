"""Matrix-form modems, the CP-OFDM baseline, and sub-channel rate math."""
from __future__ import annotations

import hashlib
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DegenerateInputError, DimensionError, FormatError
from .meta import encode_meta, read_meta

__all__ = [
    "Modem",
    "EquivalentChannel",
    "SnrSpec",
    "make_ofdm_modem",
    "normalize_modem",
    "equivalent_channel",
    "equivalent_channels",
    "subchannel_rates",
    "rate_objective",
    "save_modem",
    "load_modem",
]

ENERGY_TOL = 1e-6


@dataclass
class Modem:
    """Modulation matrix ``mod`` (M_L x M) and demodulation matrix ``demod`` (M x M_L)."""

    mod: np.ndarray
    demod: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mod = np.asarray(self.mod, dtype=np.complex128)
        self.demod = np.asarray(self.demod, dtype=np.complex128)
        ML, M = self.mod.shape
        if self.demod.shape != (M, ML):
            raise DimensionError(f"demod must be {(M, ML)}, got {self.demod.shape}")
        if ML < M:
            raise DimensionError("frame length M_L must be >= M")

    @property
    def num_subcarriers(self) -> int:
        return self.mod.shape[1]

    @property
    def frame_len(self) -> int:
        return self.mod.shape[0]

    @property
    def prefix_len(self) -> int:
        return self.frame_len - self.num_subcarriers

    @property
    def row_energy(self) -> np.ndarray:
        """Per-sub-channel demodulator energy Σ_n |Ψᴴ(m, n)|²."""
        return np.sum(np.abs(self.demod) ** 2, axis=1)

    def energies(self) -> tuple[float, float]:
        return float(np.sum(np.abs(self.mod) ** 2)), float(np.sum(np.abs(self.demod) ** 2))

    def is_normalized(self, tol: float = ENERGY_TOL) -> bool:
        e_mod, e_demod = self.energies()
        return abs(e_mod - self.frame_len) <= tol and abs(e_demod - self.num_subcarriers) <= tol

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.mod).tobytes())
        h.update(np.ascontiguousarray(self.demod).tobytes())
        return h.hexdigest()[:12]


@dataclass
class EquivalentChannel:
    matrix: np.ndarray
    demod_row_energy: np.ndarray


@dataclass(frozen=True)
class SnrSpec:
    """Signal power is fixed to 1; SNR sweeps vary the noise power."""

    noise_power: float
    signal_power: float = 1.0

    @classmethod
    def from_db(cls, snr_db: float) -> "SnrSpec":
        return cls(noise_power=10.0 ** (-snr_db / 10.0))

    @property
    def snr_db(self) -> float:
        return 10.0 * np.log10(self.signal_power / self.noise_power)

    @property
    def noise_ratio(self) -> float:
        return self.noise_power / self.signal_power


def make_ofdm_modem(M: int, Mp: int) -> Modem:
    """CP-OFDM: unitary IDFT plus cyclic prefix, prefix removal plus DFT."""
    if M < 1 or Mp < 0:
        raise ValueError(f"need M >= 1 and Mp >= 0, got M={M}, Mp={Mp}")
    n = np.arange(M)
    F = np.exp(-2j * np.pi * np.outer(n, n) / M) / np.sqrt(M)
    idft = F.conj().T
    mod = np.vstack([idft[M - Mp :], idft]) if Mp else idft
    demod = np.hstack([np.zeros((M, Mp), dtype=np.complex128), F])
    return Modem(mod, demod, {"modem_id": f"ofdm-M{M}-Mp{Mp}"})


def normalize_modem(modem: Modem) -> Modem:
    """Scale ``mod`` to energy M_L and ``demod`` to energy M."""
    n_mod = np.linalg.norm(modem.mod)
    n_demod = np.linalg.norm(modem.demod)
    if n_mod == 0 or n_demod == 0 or not np.isfinite(n_mod * n_demod):
        raise DegenerateInputError("cannot normalize a zero or non-finite modem matrix")
    return Modem(
        modem.mod * (np.sqrt(modem.frame_len) / n_mod),
        modem.demod * (np.sqrt(modem.num_subcarriers) / n_demod),
        dict(modem.meta),
    )


def equivalent_channel(modem: Modem, H: np.ndarray) -> EquivalentChannel:
    H = np.asarray(H)
    ML = modem.frame_len
    if H.shape != (ML, ML):
        raise DimensionError(f"channel matrix must be {(ML, ML)}, got {H.shape}")
    return EquivalentChannel(modem.demod @ H @ modem.mod, modem.row_energy)


def equivalent_channels(modem: Modem, Hs: np.ndarray) -> np.ndarray:
    """Batched ``Ψᴴ H Φ`` for ``Hs`` of shape ``(B, M_L, M_L)``."""
    ML = modem.frame_len
    if Hs.shape[-2:] != (ML, ML):
        raise DimensionError(f"channel matrices must be (..., {ML}, {ML}), got {Hs.shape}")
    return modem.demod @ Hs @ modem.mod


def subchannel_rates(eq: EquivalentChannel, snr: SnrSpec) -> np.ndarray:
    """Per-sub-channel rate log2(1 + SINR_m); a 0/0 ratio counts as rate 0."""
    return _kernels.subchannel_rates(eq.matrix, eq.demod_row_energy, snr.noise_ratio)


def rate_objective(eq: EquivalentChannel, snr: SnrSpec) -> float:
    """``-(Σ_m r_m + M min_m r_m)``, the Phase-I training loss for one channel."""
    r = subchannel_rates(eq, snr)
    return -float(np.sum(r) + r.shape[-1] * np.min(r))


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------
_MAGIC = b"MODM"
_VERSION = 1
_HEADER = struct.Struct("<4sIII")
LOAD_TOL = 1e-4


def modem_to_bytes(modem: Modem) -> bytes:
    M, ML = modem.num_subcarriers, modem.frame_len
    body = (
        _HEADER.pack(_MAGIC, _VERSION, M, ML)
        + np.ascontiguousarray(modem.mod, dtype="<c16").tobytes()
        + np.ascontiguousarray(modem.demod, dtype="<c16").tobytes()
    )
    meta = {k: v for k, v in modem.meta.items() if k != "modem_id"}
    return body + encode_meta(meta)


def save_modem(modem: Modem, path) -> None:
    with open(path, "wb") as f:
        f.write(modem_to_bytes(modem))


def load_modem(path) -> Modem:
    """Read a modem file; off-energy matrices are renormalized with a warning."""
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < _HEADER.size:
        raise FormatError(f"{path}: truncated modem header")
    magic, version, M, ML = _HEADER.unpack_from(buf, 0)
    if magic != _MAGIC:
        raise FormatError(f"{path}: not a modem file (magic {magic!r})")
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported modem version {version}")
    n = M * ML
    need = _HEADER.size + 2 * n * 16
    if len(buf) < need:
        raise FormatError(f"{path}: truncated modem body")
    mod = np.frombuffer(buf, dtype="<c16", count=n, offset=_HEADER.size).reshape(ML, M)
    demod = np.frombuffer(buf, dtype="<c16", count=n, offset=_HEADER.size + n * 16).reshape(M, ML)
    meta = read_meta(buf, need, path)
    modem = Modem(mod.astype(np.complex128), demod.astype(np.complex128), meta)
    if not modem.is_normalized(LOAD_TOL):
        e_mod, e_demod = modem.energies()
        warnings.warn(
            f"{path}: modem energies ({e_mod:.6g}, {e_demod:.6g}) differ from ({ML}, {M}); renormalizing",
            stacklevel=2,
        )
        modem = normalize_modem(modem)
    modem.meta.setdefault("modem_id", modem.fingerprint())
    return modem
