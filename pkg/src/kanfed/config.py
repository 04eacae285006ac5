"""Experiment configuration with a flat dotted-key text format.

Defaults are the full experiment settings (100 rounds, 15 trials per model,
10% participation, SGD lr 0.1 momentum 0.9). The `desk` preset shrinks the
trial count and round count so a complete comparison fits on a CPU.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigurationError
from .federation import FederationConfig
from .models import MODEL_KINDS


@dataclass
class ExperimentConfig:
    models: tuple[str, ...] = ("mlp", "spline_kan", "rbf_kan")
    trials_per_model: int = 15
    master_seed: int = 42
    data_dir: str = "data"
    out_dir: str = "runs"
    n_clients: int = 100
    labels_per_client: int = 2
    fed: FederationConfig = field(default_factory=FederationConfig)

    def __post_init__(self):
        for m in self.models:
            if m not in MODEL_KINDS:
                raise ConfigurationError(f"unknown model kind {m!r}")
        if self.trials_per_model < 1:
            raise ConfigurationError("trials_per_model must be positive")


def desk_preset(cfg: ExperimentConfig) -> ExperimentConfig:
    """CPU-sized preset: 3 trials per model, 30 rounds, everything else as-is."""
    return replace(cfg, trials_per_model=3, fed=replace(cfg.fed, n_rounds=30))


def derive_trial_seed(master_seed: int, model: str, trial_index: int) -> int:
    """Stable per-trial seed; each trial is reproducible on its own."""
    digest = hashlib.sha256(f"{master_seed}/{model}/{trial_index}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def dump_config(cfg: ExperimentConfig) -> str:
    lines = [
        "models = " + ",".join(cfg.models),
        f"trials_per_model = {cfg.trials_per_model}",
        f"master_seed = {cfg.master_seed}",
        f"data_dir = {cfg.data_dir}",
        f"out_dir = {cfg.out_dir}",
        f"n_clients = {cfg.n_clients}",
        f"labels_per_client = {cfg.labels_per_client}",
    ]
    for f in fields(FederationConfig):
        lines.append(f"fed.{f.name} = {getattr(cfg.fed, f.name)!r}")
    return "\n".join(lines) + "\n"


def _coerce(raw: str, typ):
    if typ is int:
        return int(raw)
    if typ is float:
        return float(raw)
    return raw


_FED_TYPES = {
    "n_rounds": int,
    "clients_per_round_fraction": float,
    "local_epochs": int,
    "batch_size": int,
    "lr": float,
    "client_momentum": float,
    "server_momentum": float,
    "server_lr": float,
    "parallel_clients": int,
}


def load_config(text: str) -> ExperimentConfig:
    top: dict = {}
    fed: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip().strip("'\"")
        if key.startswith("fed."):
            name = key[4:]
            if name not in _FED_TYPES:
                raise ConfigurationError(f"config line {lineno}: unknown key {key!r}")
            fed[name] = _coerce(raw, _FED_TYPES[name])
        elif key == "models":
            top["models"] = tuple(m.strip() for m in raw.split(",") if m.strip())
        elif key in ("trials_per_model", "master_seed", "n_clients", "labels_per_client"):
            top[key] = int(raw)
        elif key in ("data_dir", "out_dir"):
            top[key] = raw
        else:
            raise ConfigurationError(f"config line {lineno}: unknown key {key!r}")
    return ExperimentConfig(fed=FederationConfig(**fed), **top)


def load_config_file(path) -> ExperimentConfig:
    return load_config(Path(path).read_text())
