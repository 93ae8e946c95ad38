"""ModNet: channel matrix in, (modulation, demodulation) matrix pair out.

Three densely connected 7x7 conv layers (each followed by batch norm and a
leaky ReLU) read Re/Im of ``H`` as a two-channel image; three FC layers map
the last feature map to the real and imaginary parts of both matrices, which
are then energy-normalized to M_L and M.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ArchMismatchError, DimensionError, FormatError
from .meta import encode_meta, read_meta
from .modem import Modem, normalize_modem

__all__ = [
    "ModNetArch",
    "ModNet",
    "init_modnet",
    "modnet_forward",
    "save_params",
    "load_params",
    "params_to_bytes",
]

LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class ModNetArch:
    num_subcarriers: int
    prefix_len: int
    conv_kernel: int = 7
    conv_channels: tuple[int, ...] = (16, 16, 16)
    fc_widths: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.conv_kernel % 2 != 1:
            raise ValueError("conv_kernel must be odd for same-padding")
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        if self.fc_widths is None:
            w = 4 * self.input_side
            object.__setattr__(self, "fc_widths", (w, w, self.output_count))
        else:
            object.__setattr__(self, "fc_widths", tuple(int(w) for w in self.fc_widths))
        if len(self.fc_widths) != 3 or self.fc_widths[-1] != self.output_count:
            raise ValueError(f"fc_widths must be 3 widths ending in output_count={self.output_count}")

    @property
    def input_side(self) -> int:
        return self.num_subcarriers + self.prefix_len

    @property
    def conv_layers(self) -> int:
        return len(self.conv_channels)

    @property
    def output_count(self) -> int:
        # Re and Im of an M_L x M matrix and an M x M_L matrix
        return 2 * 2 * self.input_side * self.num_subcarriers

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["fc_widths"] = list(self.fc_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModNetArch":
        return cls(
            int(d["num_subcarriers"]),
            int(d["prefix_len"]),
            int(d.get("conv_kernel", 7)),
            tuple(d.get("conv_channels", (16, 16, 16))),
            tuple(d["fc_widths"]) if d.get("fc_widths") else None,
        )


def _normalize(x: torch.Tensor, energy: float) -> torch.Tensor:
    norm = torch.sqrt(torch.sum(x.real**2 + x.imag**2, dim=(-2, -1), keepdim=True))
    return x * (np.sqrt(energy) / norm)


class ModNet(nn.Module):
    def __init__(self, arch: ModNetArch, init_seed: int | None = None):
        super().__init__()
        self.arch = arch
        self.init_seed = init_seed
        side, k = arch.input_side, arch.conv_kernel
        in_ch = 2
        self.convs = nn.ModuleList()
        self.norms = nn.ModuleList()
        for out_ch in arch.conv_channels:
            self.convs.append(nn.Conv2d(in_ch, out_ch, k, padding=k // 2))
            self.norms.append(nn.BatchNorm2d(out_ch))
            in_ch += out_ch
        flat = arch.conv_channels[-1] * side * side
        w1, w2, w3 = arch.fc_widths
        self.fc = nn.ModuleList([nn.Linear(flat, w1), nn.Linear(w1, w2), nn.Linear(w2, w3)])

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Input of every conv layer; entry i is cat(x, out_1, ..., out_i)."""
        inputs = [x]
        feats = x
        for conv, bn in zip(self.convs, self.norms):
            out = F.leaky_relu(bn(conv(feats)), LEAKY_SLOPE)
            feats = torch.cat([feats, out], dim=1)
            inputs.append(feats)
        return inputs

    def forward(self, H: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """``H`` complex ``(B, M_L, M_L)`` -> normalized complex ``(mod, demod)`` batches."""
        side, M = self.arch.input_side, self.arch.num_subcarriers
        if H.shape[-2:] != (side, side):
            raise DimensionError(f"expected channel matrices of side {side}, got {tuple(H.shape)}")
        x = torch.stack([H.real, H.imag], dim=1).to(self.fc[0].weight.dtype)
        feats = self.features(x)[-1]
        z = feats[:, -self.arch.conv_channels[-1] :].flatten(1)
        z = F.leaky_relu(self.fc[0](z), LEAKY_SLOPE)
        z = F.leaky_relu(self.fc[1](z), LEAKY_SLOPE)
        z = self.fc[2](z)
        n = side * M
        mod = z[:, : 2 * n].reshape(-1, 2, side, M)
        demod = z[:, 2 * n :].reshape(-1, 2, M, side)
        mod = _normalize(torch.complex(mod[:, 0], mod[:, 1]), side)
        demod = _normalize(torch.complex(demod[:, 0], demod[:, 1]), M)
        return mod, demod


def init_modnet(arch: ModNetArch, seed: int) -> ModNet:
    """Fan-in scaled uniform init (torch defaults), BN scale 1 and shift 0."""
    gen_state = torch.random.get_rng_state()
    try:
        torch.manual_seed(seed)
        net = ModNet(arch, init_seed=seed)
    finally:
        torch.random.set_rng_state(gen_state)
    return net


def modnet_forward(net: ModNet, H: np.ndarray, training: bool = False) -> Modem:
    """Evaluate one channel matrix and return a 64-bit :class:`Modem`.

    Training mode uses (and updates) batch statistics; a single sample then
    only works for layers whose statistics are defined, so inference mode is
    the normal use.
    """
    was_training = net.training
    net.train(training)
    try:
        with torch.set_grad_enabled(training):
            mod, demod = net(torch.as_tensor(np.asarray(H)[None], dtype=torch.complex64))
    finally:
        net.train(was_training)
    mod = mod[0].detach().cpu().numpy().astype(np.complex128)
    demod = demod[0].detach().cpu().numpy().astype(np.complex128)
    # renormalize in 64-bit
    return normalize_modem(Modem(mod, demod))


# ---------------------------------------------------------------------------
# parameter file format
# ---------------------------------------------------------------------------
_MAGIC = b"MNET"
_VERSION = 1
_U32 = struct.Struct("<I")


def params_to_bytes(net: ModNet, meta: dict | None = None) -> bytes:
    buf = io.BytesIO()
    arch = json.dumps({**net.arch.to_dict(), "init_seed": net.init_seed}, sort_keys=True).encode()
    buf.write(_MAGIC + _U32.pack(_VERSION) + _U32.pack(len(arch)) + arch)
    state = net.state_dict()
    buf.write(_U32.pack(len(state)))
    for name, t in state.items():
        bname = name.encode()
        arr = t.detach().cpu().numpy().astype("<f4")
        buf.write(_U32.pack(len(bname)) + bname + _U32.pack(arr.ndim))
        for d in arr.shape:
            buf.write(_U32.pack(d))
        buf.write(np.ascontiguousarray(arr).tobytes())
    buf.write(encode_meta(meta or {}))
    return buf.getvalue()


def save_params(net: ModNet, path, meta: dict | None = None) -> None:
    with open(path, "wb") as f:
        f.write(params_to_bytes(net, meta))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.path}: truncated parameter file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def load_params(path, expect: ModNetArch | None = None) -> tuple[ModNet, dict]:
    """Load a parameter file; returns ``(net, meta)``.

    With ``expect`` given, any architecture difference raises
    :class:`ArchMismatchError`.
    """
    with open(path, "rb") as f:
        r = _Reader(f.read(), path)
    if r.take(4) != _MAGIC:
        raise FormatError(f"{path}: not a ModNet parameter file")
    if r.u32() != _VERSION:
        raise FormatError(f"{path}: unsupported parameter file version")
    try:
        head = json.loads(r.take(r.u32()))
        arch = ModNetArch.from_dict(head)
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{path}: corrupt architecture header") from exc
    if expect is not None and expect != arch:
        raise ArchMismatchError(f"{path}: file holds {arch}, expected {expect}")
    net = ModNet(arch, init_seed=head.get("init_seed"))
    state = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode()
        shape = tuple(r.u32() for _ in range(r.u32()))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        state[name] = arr
    own = net.state_dict()
    if set(state) != set(own):
        raise FormatError(f"{path}: tensor names do not match the architecture")
    for name, arr in state.items():
        if tuple(own[name].shape) != arr.shape:
            raise ArchMismatchError(f"{path}: tensor {name} has shape {arr.shape}, expected {tuple(own[name].shape)}")
        own[name] = torch.from_numpy(arr.copy()).to(own[name].dtype)
    net.load_state_dict(own)
    meta = read_meta(r.buf, r.pos, path)
    return net, meta
