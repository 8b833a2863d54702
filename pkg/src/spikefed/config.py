"""Experiment configuration: a flat key=value file with [section] headers.

The format needs no third-party parser and is easy to diff. Unknown
keys are rejected with their line number; constraint violations name
the constraint. Hyperparameter defaults: N=100 clients, S=10
candidates, P=2 selected, T=12 timesteps, threshold 1.0, reset 0.0,
surrogate sharpness 2.0.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import data as data_mod
from .data import Dataset, ClientPartition
from .network import Conv, Dense, NetworkConfig, TrainConfig
from .selection import STRATEGIES, SelectionConfig
from .federation import FederationConfig

__all__ = ["ConfigError", "ExperimentConfig", "parse_config",
           "build_network_config", "build_datasets", "build_partition"]


class ConfigError(ValueError):
    pass


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _float_list(raw: str) -> tuple[float, ...]:
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(float(v) for v in raw.split(","))


@dataclass
class ExperimentConfig:
    # [dataset]
    dataset_kind: str = ""                  # synth | mnist_idx
    classes: int = 5
    train_per_class: int = 200
    test_per_class: int = 50
    dim: int = 16
    separation: float = 6.0
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    noise_rate: float = 0.0
    # [partition]
    partition_kind: str = "dir"             # dir | dir_full | shards | ci
    alpha: float = 0.3
    n1: int = 300
    n2: int = 100
    # [model]
    layers: str = "dense:100"
    t_steps: int = 12
    u_theta: float = 1.0
    u_reset: float = 0.0
    surrogate_alpha: float = 2.0
    # [federation]
    strategy: str = ""
    n_clients: int = 100
    n_candidates: int = 10
    n_selected: int = 2
    rounds: int = 300
    epochs: int = 5
    lr: float = 0.1
    batch: int = 128
    seed: int = 0
    aggregation: str = "weighted"
    parallel: bool = False
    targets: tuple[float, ...] = ()

    def validate(self) -> None:
        if self.dataset_kind not in ("synth", "mnist_idx"):
            raise ConfigError(
                f"dataset kind must be 'synth' or 'mnist_idx', got "
                f"{self.dataset_kind!r}"
            )
        if self.dataset_kind == "mnist_idx":
            for key in ("train_images", "train_labels", "test_images", "test_labels"):
                if not getattr(self, key):
                    raise ConfigError(f"mnist_idx dataset requires dataset.{key}")
        if self.partition_kind not in ("dir", "dir_full", "shards", "ci"):
            raise ConfigError(f"unknown partition kind {self.partition_kind!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(
                f"strategy must be one of {', '.join(STRATEGIES)}, got "
                f"{self.strategy!r}"
            )
        if self.strategy == "sfedca":
            if self.n_selected > self.n_candidates:
                raise ConfigError("constraint violated: P <= S")
            if self.n_candidates > self.n_clients:
                raise ConfigError("constraint violated: S <= N")
        if self.n_selected > self.n_clients:
            raise ConfigError("constraint violated: P <= N")
        if self.rounds < 1:
            raise ConfigError("constraint violated: rounds >= 1")
        if self.alpha <= 0:
            raise ConfigError("constraint violated: alpha > 0")
        if self.noise_rate < 0:
            raise ConfigError("constraint violated: noise_rate >= 0")
        if not self.u_theta > self.u_reset:
            raise ConfigError("constraint violated: u_theta > u_reset")
        if self.t_steps < 1:
            raise ConfigError("constraint violated: T >= 1")
        if self.epochs < 0 or self.lr < 0 or self.batch < 1:
            raise ConfigError("constraint violated: positive training parameters")

    def selection_config(self) -> SelectionConfig:
        return SelectionConfig(strategy=self.strategy, n_clients=self.n_clients,
                               n_candidates=self.n_candidates,
                               n_selected=self.n_selected, seed=self.seed)

    def federation_config(self) -> FederationConfig:
        return FederationConfig(
            selection=self.selection_config(),
            train=TrainConfig(learning_rate=self.lr, epochs=self.epochs,
                              batch_size=self.batch, seed=self.seed),
            rounds=self.rounds,
            aggregation=self.aggregation,
            parallel=self.parallel,
        )


# (section, key) -> (attribute, converter)
_SCHEMA = {
    ("dataset", "kind"): ("dataset_kind", str),
    ("dataset", "classes"): ("classes", int),
    ("dataset", "train_per_class"): ("train_per_class", int),
    ("dataset", "test_per_class"): ("test_per_class", int),
    ("dataset", "dim"): ("dim", int),
    ("dataset", "separation"): ("separation", float),
    ("dataset", "train_images"): ("train_images", str),
    ("dataset", "train_labels"): ("train_labels", str),
    ("dataset", "test_images"): ("test_images", str),
    ("dataset", "test_labels"): ("test_labels", str),
    ("dataset", "noise_rate"): ("noise_rate", float),
    ("partition", "kind"): ("partition_kind", str),
    ("partition", "alpha"): ("alpha", float),
    ("partition", "n1"): ("n1", int),
    ("partition", "n2"): ("n2", int),
    ("model", "layers"): ("layers", str),
    ("model", "T"): ("t_steps", int),
    ("model", "u_theta"): ("u_theta", float),
    ("model", "u_reset"): ("u_reset", float),
    ("model", "alpha_surrogate"): ("surrogate_alpha", float),
    ("federation", "strategy"): ("strategy", str),
    ("federation", "N"): ("n_clients", int),
    ("federation", "S"): ("n_candidates", int),
    ("federation", "P"): ("n_selected", int),
    ("federation", "rounds"): ("rounds", int),
    ("federation", "epochs"): ("epochs", int),
    ("federation", "lr"): ("lr", float),
    ("federation", "batch"): ("batch", int),
    ("federation", "seed"): ("seed", int),
    ("federation", "aggregation"): ("aggregation", str),
    ("federation", "parallel"): ("parallel", _bool),
    ("federation", "targets"): ("targets", _float_list),
}

_SECTIONS = {section for section, _ in _SCHEMA}


def parse_config(path: str) -> ExperimentConfig:
    """Parse and fully validate an experiment file; defaults applied for
    anything not mentioned."""
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = ExperimentConfig()
    section = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(f"{path}:{lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        if section is None:
            raise ConfigError(f"{path}:{lineno}: key outside any [section]")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            attr, convert = _SCHEMA[(section, key)]
        except KeyError:
            raise ConfigError(
                f"{path}:{lineno}: unknown key {key!r} in section [{section}]"
            ) from None
        try:
            setattr(cfg, attr, convert(value))
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Assembly from a validated config
# ---------------------------------------------------------------------------

def build_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """(train, test); synthetic test sets are balanced by construction."""
    if cfg.dataset_kind == "synth":
        train = data_mod.synth_blobs(cfg.classes, cfg.train_per_class, cfg.dim,
                                     cfg.separation, seed=cfg.seed)
        test = data_mod.synth_blobs(cfg.classes, cfg.test_per_class, cfg.dim,
                                    cfg.separation, seed=cfg.seed + 1)
    else:
        train = data_mod.load_idx(cfg.train_images, cfg.train_labels, "train")
        test = data_mod.load_idx(cfg.test_images, cfg.test_labels, "test")
    if cfg.noise_rate > 0:
        test = data_mod.add_gaussian_noise(test, cfg.noise_rate, seed=cfg.seed + 2)
    return train, test


def build_partition(cfg: ExperimentConfig, train: Dataset) -> ClientPartition:
    seed = cfg.seed + 3
    if cfg.partition_kind == "dir":
        return data_mod.partition_dirichlet(train, cfg.n_clients, cfg.alpha, seed)
    if cfg.partition_kind == "dir_full":
        return data_mod.partition_dirichlet_full(train, cfg.n_clients, cfg.alpha, seed)
    if cfg.partition_kind == "shards":
        return data_mod.partition_shards(train, cfg.n_clients, seed=seed)
    return data_mod.partition_class_imbalanced(train, cfg.n_clients, cfg.n1,
                                               cfg.n2, cfg.alpha, seed)


def build_network_config(layer_spec: str, input_shape: tuple[int, ...],
                         n_classes: int, t_steps: int = 12, u_theta: float = 1.0,
                         u_reset: float = 0.0,
                         surrogate_alpha: float = 2.0) -> NetworkConfig:
    """Build the layer stack from tokens like ``dense:100`` and
    ``conv:4x3`` (4 channels, 3x3 kernel, optional ``xP`` pool factor).
    A dense output layer of width ``n_classes`` is appended."""
    layers: list[Dense | Conv] = []
    shape = tuple(input_shape)
    for token in (t.strip() for t in layer_spec.split(",") if t.strip()):
        kind, _, arg = token.partition(":")
        if kind == "dense":
            width = int(arg)
            layers.append(Dense(int(np.prod(shape)), width))
            shape = (width,)
        elif kind == "conv":
            parts = [int(v) for v in arg.split("x")]
            if len(parts) == 2:
                channels, kernel, pool = parts[0], parts[1], 1
            elif len(parts) == 3:
                channels, kernel, pool = parts
            else:
                raise ConfigError(f"bad conv spec {token!r}; want conv:CxK[xP]")
            if len(shape) != 3:
                raise ConfigError("conv layer requires image-shaped input")
            conv = Conv(shape[0], channels, kernel, shape[1], shape[2], pool=pool)
            layers.append(conv)
            shape = conv.pooled_shape
        else:
            raise ConfigError(f"unknown layer kind {kind!r} in {token!r}")
    layers.append(Dense(int(np.prod(shape)), n_classes))
    return NetworkConfig(layers=tuple(layers), t_steps=t_steps, u_theta=u_theta,
                         u_reset=u_reset, surrogate_alpha=surrogate_alpha)
