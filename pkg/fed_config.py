"""Run configuration: the FederationConfig type, run-file parsing and env accessors.

Run files are line-oriented ``key=value`` text (``#`` starts a comment),
read with python-dotenv. See ``run_configs/default_run.cfg`` for every key.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from enum import Enum

from dotenv import dotenv_values, load_dotenv

from bfv import SecurityLevel
from encoder import DIVISION_MODES, SERVER_DIVISION, EncodingConfig
from errors import ConfigError, FedHEError
from model import TrainConfig
from ring import derive_seed
from synthetic_data import SyntheticDatasetSpec

load_dotenv()

_DEFAULT_OUTPUT_DIR = "results"
_DEFAULT_LISTEN_ADDR = "127.0.0.1:8765"


class RunMode(Enum):
    PLAIN = "PLAIN"
    SEC128 = "SEC128"
    SEC192 = "SEC192"

    @property
    def level(self) -> SecurityLevel | None:
        return None if self is RunMode.PLAIN else SecurityLevel[self.value]

    @property
    def encrypted(self) -> bool:
        return self is not RunMode.PLAIN

    @classmethod
    def from_name(cls, name: str) -> "RunMode":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ConfigError(f"unknown mode '{name}', expected one of {[m.value for m in cls]}") from None


@dataclass(frozen=True)
class FederationConfig:
    c: int = 3
    rounds: int = 5
    mode: RunMode = RunMode.SEC128
    seed: int = 0
    key_seed: int | None = None
    partition: tuple | None = None
    frac_bits: int | None = None
    division: str = SERVER_DIVISION
    timeout: float = 60.0
    learning_rate: float = 0.1
    epochs: int = 20
    batch_size: int = 32
    hidden_units: int = 16
    dataset: SyntheticDatasetSpec = field(default_factory=SyntheticDatasetSpec)
    # aggregation of a single client is degenerate; tests may opt in
    allow_single_client: bool = False

    def __post_init__(self):
        if self.c < (1 if self.allow_single_client else 2):
            raise ConfigError(f"need at least 2 clients, got {self.c}")
        if self.rounds < 1:
            raise ConfigError(f"rounds must be at least 1, got {self.rounds}")
        if self.partition is not None and len(self.partition) != self.c:
            raise ConfigError(f"partition lists {len(self.partition)} shares for {self.c} clients")
        if self.division not in DIVISION_MODES:
            raise ConfigError(f"division must be one of {DIVISION_MODES}, got '{self.division}'")
        if self.timeout <= 0:
            raise ConfigError("timeout must be positive")
        if self.frac_bits is not None and self.frac_bits < 1:
            raise ConfigError(f"frac_bits must be positive, got {self.frac_bits}")
        if self.hidden_units < 0:
            raise ConfigError("hidden_units must be non-negative")
        try:
            self.train_config(0)
        except FedHEError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def effective_key_seed(self) -> int:
        return self.key_seed if self.key_seed is not None else derive_seed(self.seed, "dealer")

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.epochs, self.batch_size, seed)

    def encoding(self) -> EncodingConfig | None:
        """Fixed-point encoding for this run; None in PLAIN mode."""
        if not self.mode.encrypted:
            return None
        return EncodingConfig.for_run(self.mode.level.params.ring, self.c, self.division, self.frac_bits)


def _parse_partition(raw: str):
    raw = raw.strip().lower()
    if raw in ("", "equal"):
        return None
    return tuple(float(part) for part in raw.split(","))


_INT_KEYS = {"clients": "c", "rounds": "rounds", "seed": "seed", "key_seed": "key_seed", "frac_bits": "frac_bits",
             "epochs": "epochs", "batch_size": "batch_size", "hidden_units": "hidden_units"}
_FLOAT_KEYS = {"timeout": "timeout", "learning_rate": "learning_rate"}
_DATASET_INT_KEYS = ("train_per_class", "test_per_class", "feature_dim")
_DATASET_FLOAT_KEYS = ("separation",)


def parse_config(values: dict) -> FederationConfig:
    """Build a FederationConfig from already-split key/value strings."""
    kwargs, dataset_kwargs = {}, {}
    for key, raw in values.items():
        key = key.strip().lower()
        raw = "" if raw is None else str(raw).strip()
        try:
            if key in _INT_KEYS:
                kwargs[_INT_KEYS[key]] = int(raw, 0)
            elif key in _FLOAT_KEYS:
                kwargs[_FLOAT_KEYS[key]] = float(raw)
            elif key in _DATASET_INT_KEYS:
                dataset_kwargs[key] = int(raw, 0)
            elif key in _DATASET_FLOAT_KEYS:
                dataset_kwargs[key] = float(raw)
            elif key == "mode":
                kwargs["mode"] = RunMode.from_name(raw)
            elif key == "division":
                kwargs["division"] = raw.lower()
            elif key == "partition":
                kwargs["partition"] = _parse_partition(raw)
            else:
                raise ConfigError(f"unknown config key '{key}'")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for '{key}': {raw!r}") from exc
    try:
        if dataset_kwargs:
            kwargs["dataset"] = SyntheticDatasetSpec(**dataset_kwargs)
        return FederationConfig(**kwargs)
    except ConfigError:
        raise
    except FedHEError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str) -> FederationConfig:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Config file not found at {path}")
    return parse_config(dotenv_values(path))


def get_output_dir() -> str:
    return os.getenv("FEDHE_OUTPUT_DIR", _DEFAULT_OUTPUT_DIR)


def get_listen_addr() -> str:
    return os.getenv("FEDHE_LISTEN_ADDR", _DEFAULT_LISTEN_ADDR)


def split_address(address: str) -> tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigError(f"address must look like host:port, got '{address}'")
    return host or "127.0.0.1", int(port)
