"""Sparse delay-Doppler channels and their sampled matrix form.

Sample vectors of length ``M_L = M + M_p`` are indexed ``n = -M_p, ..., M-1``
(prefix samples first). A path with gain ``h``, integer delay ``l`` and
normalized Doppler ``k`` maps ``s`` to ``h * s(n - l) * exp(j2π n k / M)``;
samples delayed from before the frame start are zero (no cyclic wrap).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import _kernels
from .errors import ConfigError, DimensionError, FormatError
from .meta import read_meta, write_meta

SPEED_OF_LIGHT = 299_792_458.0

__all__ = [
    "SPEED_OF_LIGHT",
    "ChannelSpec",
    "PathComponent",
    "ChannelRealization",
    "Dataset",
    "sample_channel",
    "build_channel_matrix",
    "apply_channel",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
]


@dataclass(frozen=True)
class ChannelSpec:
    """Frame geometry and mobility statistics of a doubly-dispersive channel.

    Speeds are in m/s; use :meth:`with_speed_kmh` for km/h.
    """

    carrier_freq_hz: float = 4e9
    subcarrier_spacing_hz: float = 15e3
    num_subcarriers: int = 128
    prefix_len: int = 24
    ue_speed_mps: float = 100.0
    num_paths: int = 4
    max_delay_grid: int = 20

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if int(self.num_subcarriers) != self.num_subcarriers or self.num_subcarriers < 1:
            raise ConfigError(f"num_subcarriers must be a positive integer, got {self.num_subcarriers}")
        if int(self.prefix_len) != self.prefix_len or self.prefix_len < 0:
            raise ConfigError(f"prefix_len must be a non-negative integer, got {self.prefix_len}")
        if int(self.num_paths) != self.num_paths or self.num_paths < 1:
            raise ConfigError(f"num_paths must be a positive integer, got {self.num_paths}")
        if int(self.max_delay_grid) != self.max_delay_grid or self.max_delay_grid < 0:
            raise ConfigError(f"max_delay_grid must be a non-negative integer, got {self.max_delay_grid}")
        if self.max_delay_grid > self.prefix_len:
            raise ConfigError(
                f"max_delay_grid ({self.max_delay_grid}) exceeds prefix_len ({self.prefix_len}); "
                "the prefix must cover the largest path delay"
            )
        if not self.subcarrier_spacing_hz > 0:
            raise ConfigError("subcarrier_spacing_hz must be positive")
        if not self.carrier_freq_hz > 0:
            raise ConfigError("carrier_freq_hz must be positive")
        if not self.ue_speed_mps >= 0:
            raise ConfigError("ue_speed_mps must be non-negative")

    @classmethod
    def with_speed_kmh(cls, speed_kmh: float, **kw) -> "ChannelSpec":
        return cls(ue_speed_mps=speed_kmh / 3.6, **kw)

    @property
    def frame_len(self) -> int:
        """M_L, samples per frame including the prefix."""
        return self.num_subcarriers + self.prefix_len

    @property
    def frame_duration(self) -> float:
        """T = 1/Δf in seconds (prefix excluded)."""
        return 1.0 / self.subcarrier_spacing_hz

    @property
    def sample_interval(self) -> float:
        return self.frame_duration / self.num_subcarriers

    @property
    def max_doppler_hz(self) -> float:
        return self.ue_speed_mps * self.carrier_freq_hz / SPEED_OF_LIGHT

    def as_dict(self) -> dict:
        return {
            "carrier_freq_hz": float(self.carrier_freq_hz),
            "subcarrier_spacing_hz": float(self.subcarrier_spacing_hz),
            "num_subcarriers": int(self.num_subcarriers),
            "prefix_len": int(self.prefix_len),
            "ue_speed_mps": float(self.ue_speed_mps),
            "num_paths": int(self.num_paths),
            "max_delay_grid": int(self.max_delay_grid),
        }


@dataclass(frozen=True)
class PathComponent:
    gain: complex
    delay_grid: int
    doppler_hz: float
    normalized_doppler: float


@dataclass(frozen=True)
class ChannelRealization:
    paths: tuple[PathComponent, ...]
    spec: ChannelSpec

    @property
    def gains(self) -> np.ndarray:
        return np.array([p.gain for p in self.paths], dtype=np.complex128)

    @property
    def delays(self) -> np.ndarray:
        return np.array([p.delay_grid for p in self.paths], dtype=np.int64)

    @property
    def dopplers_hz(self) -> np.ndarray:
        return np.array([p.doppler_hz for p in self.paths], dtype=np.float64)

    @property
    def normalized_dopplers(self) -> np.ndarray:
        return np.array([p.normalized_doppler for p in self.paths], dtype=np.float64)

    def matrix(self) -> np.ndarray:
        return build_channel_matrix(self)


def _draw_paths(spec: ChannelSpec, rng: np.random.Generator):
    Np = spec.num_paths
    g = (rng.standard_normal(Np) + 1j * rng.standard_normal(Np)) * np.sqrt(0.5 / Np)
    l = rng.integers(0, spec.max_delay_grid, size=Np, endpoint=True)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=Np)
    nu = spec.max_doppler_hz * np.cos(theta)
    return g, l, nu


def sample_channel(spec: ChannelSpec, seed=None) -> ChannelRealization:
    """Draw one realization.

    Gains are CN(0, 1/N_p), delays uniform on {0..l_max} (repeats allowed),
    Dopplers follow the Jakes law ``f_max cos(θ)`` with θ ~ U[0, 2π).
    ``seed`` is anything :func:`numpy.random.default_rng` accepts.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    g, l, nu = _draw_paths(spec, rng)
    T = spec.frame_duration
    paths = tuple(
        PathComponent(complex(g[i]), int(l[i]), float(nu[i]), float(nu[i] * T)) for i in range(len(g))
    )
    return ChannelRealization(paths, spec)


def build_channel_matrix(realization: ChannelRealization) -> np.ndarray:
    """Assemble ``H = Σ h_i Δ^{k_i} Γ_{l_i}`` as an ``M_L x M_L`` complex matrix."""
    spec = realization.spec
    return _kernels.channel_matrices(
        realization.gains[None],
        realization.delays[None],
        realization.normalized_dopplers[None],
        spec.num_subcarriers,
        spec.prefix_len,
    )[0]


def apply_channel(H: np.ndarray, s: np.ndarray, noise_var: float, seed=None) -> np.ndarray:
    """Return ``H s + w`` with ``w ~ CN(0, noise_var I)``.

    ``s`` may carry extra trailing columns (one frame per column).
    """
    if noise_var < 0:
        raise ValueError(f"noise_var must be >= 0, got {noise_var}")
    H = np.asarray(H)
    s = np.asarray(s)
    if H.shape[-1] != s.shape[0]:
        raise DimensionError(f"H is {H.shape}, s has leading dimension {s.shape[0]}")
    r = H @ s
    if noise_var > 0:
        rng = np.random.default_rng(seed)
        w = rng.standard_normal(r.shape) + 1j * rng.standard_normal(r.shape)
        r = r + w * np.sqrt(noise_var / 2.0)
    return r


@dataclass
class Dataset:
    """A batch of realizations stored as path arrays, shape ``(count, N_p)``.

    Matrices are materialized on demand via :meth:`matrices`.
    """

    spec: ChannelSpec
    gains: np.ndarray
    delays: np.ndarray
    dopplers_hz: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=np.complex128)
        self.delays = np.asarray(self.delays, dtype=np.int64)
        self.dopplers_hz = np.asarray(self.dopplers_hz, dtype=np.float64)
        if not (self.gains.shape == self.delays.shape == self.dopplers_hz.shape) or self.gains.ndim != 2:
            raise DimensionError("gains, delays and dopplers must share shape (count, num_paths)")

    def __len__(self) -> int:
        return self.gains.shape[0]

    def __getitem__(self, i: int) -> ChannelRealization:
        T = self.spec.frame_duration
        paths = tuple(
            PathComponent(complex(g), int(l), float(nu), float(nu * T))
            for g, l, nu in zip(self.gains[i], self.delays[i], self.dopplers_hz[i])
        )
        return ChannelRealization(paths, self.spec)

    def __iter__(self) -> Iterator[ChannelRealization]:
        for i in range(len(self)):
            yield self[i]

    @property
    def normalized_dopplers(self) -> np.ndarray:
        return self.dopplers_hz * self.spec.frame_duration

    def subset(self, indices: Sequence[int] | np.ndarray | slice) -> "Dataset":
        # copies, so edits to a subset never leak back
        return Dataset(
            self.spec,
            self.gains[indices].copy(),
            self.delays[indices].copy(),
            self.dopplers_hz[indices].copy(),
            dict(self.meta),
        )

    def matrices(self, indices=None) -> np.ndarray:
        """Channel matrices, shape ``(n, M_L, M_L)``."""
        if indices is None:
            indices = slice(None)
        return _kernels.channel_matrices(
            self.gains[indices],
            self.delays[indices],
            self.normalized_dopplers[indices],
            self.spec.num_subcarriers,
            self.spec.prefix_len,
        )

    def iter_matrices(self, chunk: int = 256) -> Iterator[np.ndarray]:
        for start in range(0, len(self), chunk):
            yield self.matrices(slice(start, start + chunk))


def _seed_key(seed) -> list[int]:
    if seed is None:
        raise ValueError("generate_dataset needs an explicit seed")
    if isinstance(seed, (int, np.integer)):
        return [int(seed)]
    return [int(s) for s in seed]


def generate_dataset(spec: ChannelSpec, count: int, seed) -> Dataset:
    """Draw ``count`` realizations; sample ``i`` uses the stream ``(*seed, i)``.

    The per-sample streams make the result independent of chunking or
    worker partitioning.
    """
    if count <= 0:
        raise ValueError(f"count must be positive, got {count}")
    spec.validate()
    key = _seed_key(seed)
    Np = spec.num_paths
    gains = np.empty((count, Np), dtype=np.complex128)
    delays = np.empty((count, Np), dtype=np.int64)
    nus = np.empty((count, Np), dtype=np.float64)
    for i in range(count):
        gains[i], delays[i], nus[i] = _draw_paths(spec, np.random.default_rng(key + [i]))
    return Dataset(spec, gains, delays, nus, {"seed": key})


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------
_MAGIC = b"DDCH"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIIQ")
_SPEC_FIELDS = struct.Struct("<dddd")  # f_c, Δf, v, l_max
_RECORD = np.dtype([("h_re", "<f8"), ("h_im", "<f8"), ("l", "<u4"), ("nu", "<f8")])


def save_dataset(ds: Dataset, path, meta: dict | None = None) -> None:
    spec = ds.spec
    rec = np.empty(ds.gains.shape, dtype=_RECORD)
    rec["h_re"] = ds.gains.real
    rec["h_im"] = ds.gains.imag
    rec["l"] = ds.delays
    rec["nu"] = ds.dopplers_hz
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, _VERSION, spec.num_subcarriers, spec.prefix_len, spec.num_paths, len(ds)))
        f.write(
            _SPEC_FIELDS.pack(
                spec.carrier_freq_hz, spec.subcarrier_spacing_hz, spec.ue_speed_mps, float(spec.max_delay_grid)
            )
        )
        f.write(rec.tobytes())
        write_meta(f, {**ds.meta, **(meta or {})})


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < _HEADER.size + _SPEC_FIELDS.size:
        raise FormatError(f"{path}: truncated dataset header")
    magic, version, M, Mp, Np, count = _HEADER.unpack_from(buf, 0)
    if magic != _MAGIC:
        raise FormatError(f"{path}: not a channel dataset (magic {magic!r})")
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    fc, df, v, lmax = _SPEC_FIELDS.unpack_from(buf, _HEADER.size)
    off = _HEADER.size + _SPEC_FIELDS.size
    nbytes = count * Np * _RECORD.itemsize
    if len(buf) < off + nbytes:
        raise FormatError(f"{path}: truncated dataset body ({len(buf) - off} of {nbytes} bytes)")
    rec = np.frombuffer(buf, dtype=_RECORD, count=count * Np, offset=off).reshape(count, Np)
    spec = ChannelSpec(fc, df, M, Mp, v, Np, int(lmax))
    meta = read_meta(buf, off + nbytes, path)
    return Dataset(spec, rec["h_re"] + 1j * rec["h_im"], rec["l"].astype(np.int64), rec["nu"].copy(), meta)
