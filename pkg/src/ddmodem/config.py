"""Experiment configuration (INI files) and derived seeds/hashes."""
from __future__ import annotations

import configparser
import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

from .channel import ChannelSpec, Dataset, generate_dataset
from .errors import ConfigError
from .network import ModNetArch
from .training import TrainConfig

__all__ = [
    "DataConfig",
    "EvalConfig",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "BUNDLED_CONFIGS",
    "SPLITS",
]

BUNDLED_CONFIGS = ("paper-default", "desk-scale")
SPLITS = {"train": 0, "val": 1, "test": 2}


@dataclass(frozen=True)
class DataConfig:
    train_count: int = 10_000
    val_count: int = 2_000
    test_count: int = 20_000

    def count(self, split: str) -> int:
        return {"train": self.train_count, "val": self.val_count, "test": self.test_count}[split]


@dataclass(frozen=True)
class EvalConfig:
    snr_db: tuple[float, ...] = (0, 5, 10, 15, 20, 25, 30)
    alphabets: tuple[str, ...] = ("QPSK", "16QAM")
    trials_per_channel: int = 1
    min_errors: int = 400
    max_passes: int = 1
    scenarios: tuple[str, ...] = ("base",)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seed: int
    channel: ChannelSpec
    arch: ModNetArch
    train: TrainConfig
    data: DataConfig = DataConfig()
    eval: EvalConfig = EvalConfig()
    scenario_overrides: dict = field(default_factory=dict)
    source: str = ""

    def model_dict(self) -> dict:
        """Everything that determines datasets, parameters and the distilled modem."""
        return {
            "seed": self.seed,
            "channel": self.channel.as_dict(),
            "arch": self.arch.to_dict(),
            "train": asdict(self.train),
            "data": asdict(self.data),
        }

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.model_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def stamp(self, **extra) -> dict:
        return {"config_hash": self.config_hash, "seed": self.seed, **extra}

    def scenario_spec(self, scenario: str = "base") -> ChannelSpec:
        if scenario == "base":
            return self.channel
        if scenario not in self.scenario_overrides:
            raise ConfigError(f"unknown scenario {scenario!r}")
        return replace(self.channel, **self.scenario_overrides[scenario])

    def split_seed(self, split: str, scenario: str = "base") -> list[int]:
        if split not in SPLITS:
            raise ConfigError(f"unknown split {split!r}")
        key = [self.seed, SPLITS[split]]
        if scenario != "base":
            key.append(zlib.crc32(scenario.encode()))
        return key

    def dataset(self, split: str, scenario: str = "base", count: int | None = None) -> Dataset:
        ds = generate_dataset(
            self.scenario_spec(scenario), count or self.data.count(split), self.split_seed(split, scenario)
        )
        ds.meta.update(self.stamp(split=split, scenario=scenario))
        return ds


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.replace(";", ",").split(",") if x.strip())


def _names(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.replace(";", ",").split(",") if x.strip())


_CHANNEL_KEYS = {
    "carrier_freq_hz": float,
    "subcarrier_spacing_hz": float,
    "num_subcarriers": int,
    "prefix_len": int,
    "num_paths": int,
    "max_delay_grid": int,
}


def _channel_fields(section, partial: bool = False) -> dict:
    out = {}
    for key, conv in _CHANNEL_KEYS.items():
        if key in section:
            out[key] = conv(section[key])
    if "ue_speed_kmh" in section:
        out["ue_speed_mps"] = float(section["ue_speed_kmh"]) / 3.6
    if "ue_speed_mps" in section:
        out["ue_speed_mps"] = float(section["ue_speed_mps"])
    unknown = set(section) - set(_CHANNEL_KEYS) - {"ue_speed_kmh", "ue_speed_mps"}
    if unknown:
        raise ConfigError(f"unknown channel keys: {sorted(unknown)}")
    return out


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
        seed = cp.getint("experiment", "seed", fallback=0)
        name = cp.get("experiment", "name", fallback=Path(source).stem)
        if "channel" not in cp:
            raise ConfigError(f"{source}: missing [channel] section")
        channel = ChannelSpec(**_channel_fields(cp["channel"]))

        a = cp["arch"] if "arch" in cp else {}
        fc_hidden = a.get("fc_hidden", "auto").strip()
        fc_widths = None
        if fc_hidden != "auto":
            w1, w2 = (int(x) for x in _floats(fc_hidden))
            fc_widths = (w1, w2, 4 * channel.frame_len * channel.num_subcarriers)
        arch = ModNetArch(
            channel.num_subcarriers,
            channel.prefix_len,
            int(a.get("conv_kernel", 7)),
            tuple(int(x) for x in _floats(a.get("conv_channels", "16, 16, 16"))),
            fc_widths,
        )

        t = cp["train"] if "train" in cp else {}
        train_kw = {}
        for key, conv in (
            ("lr", float),
            ("beta1", float),
            ("beta2", float),
            ("eps", float),
            ("epochs", int),
            ("batch_size", int),
            ("train_snr_db", float),
            ("alpha", float),
            ("grad_clip", float),
            ("checkpoint_every", int),
        ):
            if key in t:
                train_kw[key] = conv(t[key])
        train = TrainConfig(seed=seed, **train_kw)

        d = cp["data"] if "data" in cp else {}
        data = DataConfig(
            int(d.get("train_count", 10_000)), int(d.get("val_count", 2_000)), int(d.get("test_count", 20_000))
        )
        if train.batch_size > data.train_count:
            raise ConfigError(f"batch_size {train.batch_size} exceeds train_count {data.train_count}")

        e = cp["eval"] if "eval" in cp else {}
        ev = EvalConfig(
            _floats(e.get("snr_db", "0, 5, 10, 15, 20, 25, 30")),
            _names(e.get("alphabets", "QPSK, 16QAM")),
            int(e.get("trials_per_channel", 1)),
            int(e.get("min_errors", 400)),
            int(e.get("max_passes", 1)),
            _names(e.get("scenarios", "base")),
        )
        overrides = {}
        for sec in cp.sections():
            if sec.startswith("scenario."):
                overrides[sec.split(".", 1)[1]] = _channel_fields(cp[sec])
        for sc in ev.scenarios:
            if sc != "base" and sc not in overrides:
                raise ConfigError(f"{source}: scenario {sc!r} listed in [eval] has no [scenario.{sc}] section")
        cfg = ExperimentConfig(name, seed, channel, arch, train, data, ev, overrides, source)
        for sc in overrides:
            cfg.scenario_spec(sc)  # validates l_max <= M_p etc.
        return cfg
    except ConfigError:
        raise
    except (configparser.Error, ValueError, KeyError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path_or_name) -> ExperimentConfig:
    """Load an INI config from a path, or a bundled one by name."""
    p = Path(path_or_name)
    if not p.exists() and str(path_or_name).removesuffix(".cfg") in BUNDLED_CONFIGS:
        name = str(path_or_name).removesuffix(".cfg") + ".cfg"
        text = resources.files("ddmodem.configs").joinpath(name).read_text()
        return parse_config(text, name)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path_or_name}: {exc}") from exc
    return parse_config(text, str(p))
