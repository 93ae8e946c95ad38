"""Tri-Phase training: rate optimization, siamese unification, median distillation."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .channel import Dataset
from .errors import NonFiniteLossError
from .modem import Modem, SnrSpec, normalize_modem
from .network import ModNet, save_params

__all__ = [
    "TrainConfig",
    "EpochRecord",
    "PairedDataset",
    "rates_torch",
    "rate_loss",
    "modem_distance",
    "siamese_loss",
    "train_phase1",
    "pair_dataset",
    "train_phase2",
    "distill_phase3",
    "predict",
    "write_metrics_log",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 500
    batch_size: int = 200
    train_snr_db: float = 20.0
    alpha: float = 0.005
    seed: int = 0
    grad_clip: float = 10.0
    checkpoint_every: int = 0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")

    @property
    def noise_ratio(self) -> float:
        return SnrSpec.from_db(self.train_snr_db).noise_ratio


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    rate_term: float
    distance_term: float
    wall_time: float


# ---------------------------------------------------------------------------
# differentiable objectives (any real/complex torch dtype)
# ---------------------------------------------------------------------------
def rates_torch(mod: torch.Tensor, demod: torch.Tensor, H: torch.Tensor, noise_ratio: float) -> torch.Tensor:
    """Sub-channel rates for batches ``mod (B,M_L,M)``, ``demod (B,M,M_L)``, ``H (B,M_L,M_L)``."""
    He = demod @ H @ mod
    p = He.real**2 + He.imag**2
    sig = torch.diagonal(p, dim1=-2, dim2=-1)
    interf = p.sum(-1) - sig
    row_energy = (demod.real**2 + demod.imag**2).sum(-1)
    den = interf + noise_ratio * row_energy
    # only an all-zero row is masked; NaN must survive to the finiteness check
    dead = den == 0
    safe = torch.where(dead, torch.ones_like(den), den)
    return torch.where(dead, torch.zeros_like(den), torch.log2(1 + sig / safe))


def rate_loss(rates: torch.Tensor) -> torch.Tensor:
    """Per-sample ``-(Σ r + M min r)``; ties in the min send gradient to the lowest index."""
    M = rates.shape[-1]
    idx = torch.argmin(rates.detach(), dim=-1, keepdim=True)
    return -(rates.sum(-1) + M * rates.gather(-1, idx).squeeze(-1))


def modem_distance(mod1, demod1, mod2, demod2) -> torch.Tensor:
    """Per-sample ``‖Φ1-Φ2‖²_F + ‖Ψ1ᴴ-Ψ2ᴴ‖²_F``."""
    d1 = mod1 - mod2
    d2 = demod1 - demod2
    return (d1.real**2 + d1.imag**2).sum((-2, -1)) + (d2.real**2 + d2.imag**2).sum((-2, -1))


def siamese_loss(mod1, demod1, H1, mod2, demod2, H2, noise_ratio: float, alpha: float):
    """Batch-mean loss_2 and its two components ``(loss, rate_term, distance_term)``.

    The rate term is the mean of the two branches' rate losses.
    """
    r1 = rate_loss(rates_torch(mod1, demod1, H1, noise_ratio)).mean()
    r2 = rate_loss(rates_torch(mod2, demod2, H2, noise_ratio)).mean()
    rate_term = 0.5 * (r1 + r2)
    dist_term = modem_distance(mod1, demod1, mod2, demod2).mean()
    return alpha * rate_term + (1 - alpha) * dist_term, rate_term, dist_term


# ---------------------------------------------------------------------------
# loops
# ---------------------------------------------------------------------------
def _to_torch(H: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(H.astype(np.complex64))


def _optimizer(net: ModNet, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(net.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)


def _step(net, opt, loss, cfg, where: dict):
    if not torch.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss {where}")
    opt.zero_grad()
    loss.backward()
    torch.nn.utils.clip_grad_norm_(net.parameters(), cfg.grad_clip)
    opt.step()


def _checkpoint(net, cfg, epoch, checkpoint_dir, phase):
    if checkpoint_dir and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
        path = Path(checkpoint_dir) / f"phase{phase}_epoch{epoch:04d}.mnet"
        path.parent.mkdir(parents=True, exist_ok=True)
        save_params(net, path, {"phase": phase, "epoch": epoch, "seed": cfg.seed})


def train_phase1(
    net: ModNet,
    train_set: Dataset,
    cfg: TrainConfig,
    checkpoint_dir=None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[ModNet, list[EpochRecord]]:
    """Minimize the batch-mean rate loss at ``cfg.train_snr_db``. Updates ``net`` in place."""
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    opt = _optimizer(net, cfg)
    nr = cfg.noise_ratio
    n = len(train_set)
    history = []
    t0 = time.perf_counter()
    net.train()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        tot, count = 0.0, 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            H = _to_torch(train_set.matrices(idx))
            mod, demod = net(H)
            loss = rate_loss(rates_torch(mod, demod, H, nr)).mean()
            _step(net, opt, loss, cfg, {"phase": 1, "epoch": epoch, "batch": b, "rate_term": loss.item()})
            tot += loss.item() * len(idx)
            count += len(idx)
        rec = EpochRecord(epoch, tot / count, tot / count, 0.0, time.perf_counter() - t0)
        history.append(rec)
        log.debug("phase1 epoch %d loss %.4f", epoch, rec.loss)
        if on_epoch:
            on_epoch(rec)
        _checkpoint(net, cfg, epoch, checkpoint_dir, 1)
    net.eval()
    return net, history


@dataclass
class PairedDataset:
    """Index pairs into ``source``; ``first[i] != second[i]`` for all i."""

    source: Dataset
    first: np.ndarray
    second: np.ndarray

    def __len__(self) -> int:
        return len(self.first)

    def __getitem__(self, i):
        return self.source[int(self.first[i])], self.source[int(self.second[i])]


def pair_dataset(train_set: Dataset, seed) -> PairedDataset:
    """Pair every sample with a different one via a uniform random derangement."""
    n = len(train_set)
    if n < 2:
        raise ValueError("pairing needs at least 2 samples")
    rng = np.random.default_rng(seed)
    ident = np.arange(n)
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == ident):
            break
    return PairedDataset(train_set, ident, perm)


def train_phase2(
    net: ModNet,
    pairs: PairedDataset,
    cfg: TrainConfig,
    checkpoint_dir=None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[ModNet, list[EpochRecord]]:
    """Siamese training: both branches are ``net`` itself, evaluated twice per step."""
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng([cfg.seed, 2])
    opt = _optimizer(net, cfg)
    nr = cfg.noise_ratio
    n = len(pairs)
    history = []
    t0 = time.perf_counter()
    net.train()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        sums = np.zeros(3)
        count = 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            H1 = _to_torch(pairs.source.matrices(pairs.first[idx]))
            H2 = _to_torch(pairs.source.matrices(pairs.second[idx]))
            mod1, demod1 = net(H1)
            mod2, demod2 = net(H2)
            loss, rate_term, dist_term = siamese_loss(mod1, demod1, H1, mod2, demod2, H2, nr, cfg.alpha)
            where = {
                "phase": 2,
                "epoch": epoch,
                "batch": b,
                "rate_term": rate_term.item(),
                "distance_term": dist_term.item(),
            }
            _step(net, opt, loss, cfg, where)
            sums += len(idx) * np.array([loss.item(), rate_term.item(), dist_term.item()])
            count += len(idx)
        m = sums / count
        rec = EpochRecord(epoch, m[0], m[1], m[2], time.perf_counter() - t0)
        history.append(rec)
        log.debug("phase2 epoch %d loss %.4f dist %.4f", epoch, rec.loss, rec.distance_term)
        if on_epoch:
            on_epoch(rec)
        _checkpoint(net, cfg, epoch, checkpoint_dir, 2)
    net.eval()
    return net, history


@torch.no_grad()
def predict(net: ModNet, ds: Dataset, chunk: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Inference-mode outputs for every channel of ``ds`` (complex64 arrays)."""
    was_training = net.training
    net.eval()
    mods, demods = [], []
    try:
        for start in range(0, len(ds), chunk):
            mod, demod = net(_to_torch(ds.matrices(slice(start, start + chunk))))
            mods.append(mod.numpy())
            demods.append(demod.numpy())
    finally:
        net.train(was_training)
    return np.concatenate(mods), np.concatenate(demods)


def _median_complex(x: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Element-wise median over axis 0, real and imaginary parts separately."""
    flat = x.reshape(x.shape[0], -1)
    out = np.empty(flat.shape[1], dtype=np.complex128)
    for s in range(0, flat.shape[1], chunk):
        block = flat[:, s : s + chunk]
        out[s : s + chunk] = np.median(block.real.astype(np.float64), axis=0) + 1j * np.median(
            block.imag.astype(np.float64), axis=0
        )
    return out.reshape(x.shape[1:])


def distill_phase3(net: ModNet, validation_set: Dataset) -> Modem:
    """Median of the inference-mode outputs over ``validation_set``, renormalized."""
    if len(validation_set) == 0:
        raise ValueError("validation set is empty")
    mods, demods = predict(net, validation_set)
    return normalize_modem(Modem(_median_complex(mods), _median_complex(demods)))


def write_metrics_log(history: list[EpochRecord], path) -> None:
    cols = list(asdict(history[0]).keys()) if history else list(EpochRecord.__dataclass_fields__)
    with open(path, "w") as f:
        f.write("\t".join(cols) + "\n")
        for rec in history:
            d = asdict(rec)
            f.write("\t".join(f"{d[c]:.10g}" if isinstance(d[c], float) else str(d[c]) for c in cols) + "\n")
