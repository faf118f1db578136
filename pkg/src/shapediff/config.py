"""Run configuration: every numeric hyperparameter in one validated place.

Config files are flat key=value text in INI-style sections; unknown sections
or keys are rejected, and every value is range-checked with a field-specific
message.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, fields

from .diffusion import Schedule
from .predictor import PredictorConfig
from .sampler import SamplerConfig
from .shape import ShapeModel


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # [run]
    seed: int = 0
    # [shape]
    shape_points: int = 512
    shape_queries: int = 1024
    shape_knn: int = 20
    shape_layers: int = 4
    shape_hidden_channels: int = 64
    shape_embed_dim: int = 128
    shape_decoder_hidden: int = 256
    shape_decoder_layers: int = 2
    # [diffusion]
    steps: int = 1000
    sigmoid_w1: float = 6.0
    sigmoid_w2: float = 1e-7
    sigmoid_w3: float = 0.01
    cosine_s: float = 0.01
    xi: float = 100.0
    zeta: float = 100.0
    delta: float = 10.0
    # [predictor]
    layers: int = 8
    neighbors: int = 8
    scalar_dim: int = 128
    vector_dim: int = 32
    time_dim: int = 16
    attention_dim: int = 16
    attention_heads: int = 1
    gvp_layers: int = 3
    # [sampler]
    gamma: float = 0.2
    stop_step: int = 300
    sigma_lo: float = 0.2
    sigma_hi: float = 0.8
    guidance_k: int = 2
    pocket_k: int = 8
    guidance_points_per_atom: int = 20
    guidance_variance: float = 0.049
    epsilon_lo: float = 0.0
    epsilon_hi: float = 0.5
    pocket_fallback: float = 2.0
    # [training]
    se_steps: int = 4000
    se_batch: int = 16
    se_lr: float = 1e-3
    se_decay: float = 0.6
    se_min_lr: float = 1e-6
    se_patience: int = 5
    se_eval_interval: int = 2000
    diff_steps: int = 5000
    diff_batch: int = 32
    diff_lr: float = 1e-3
    diff_decay: float = 0.6
    diff_min_lr: float = 1e-5
    diff_patience: int = 10
    diff_eval_interval: int = 2000
    feature_ce_weight: float = 0.0
    # [data]
    train_fraction: float = 0.8
    volume_bins: int = 10
    # [metrics]
    delta_g: float = 0.3

    def schedule(self) -> Schedule:
        return Schedule.default(
            T=self.steps,
            x_params={"w1": self.sigmoid_w1, "w2": self.sigmoid_w2, "w3": self.sigmoid_w3},
            v_params={"s": self.cosine_s},
        )

    def predictor_config(self) -> PredictorConfig:
        return PredictorConfig(
            n_layers=self.layers,
            n_neighbors=self.neighbors,
            scalar_dim=self.scalar_dim,
            vector_dim=self.vector_dim,
            shape_dim=self.shape_embed_dim,
            time_dim=self.time_dim,
            attention_dim=self.attention_dim,
            attention_heads=self.attention_heads,
            gvp_layers=self.gvp_layers,
        )

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(
            gamma=self.gamma,
            stop_step=self.stop_step,
            sigma_range=(self.sigma_lo, self.sigma_hi),
            guidance_k=self.guidance_k,
            pocket_k=self.pocket_k,
            guidance_points_per_atom=self.guidance_points_per_atom,
            guidance_variance=self.guidance_variance,
        )

    def shape_model(self) -> ShapeModel:
        return ShapeModel(
            embed_dim=self.shape_embed_dim,
            hidden_channels=self.shape_hidden_channels,
            n_layers=self.shape_layers,
            knn=self.shape_knn,
            decoder_hidden=self.shape_decoder_hidden,
            decoder_layers=self.shape_decoder_layers,
        )


_SECTIONS: dict[str, tuple[str, ...]] = {
    "run": ("seed",),
    "shape": (
        "shape_points", "shape_queries", "shape_knn", "shape_layers",
        "shape_hidden_channels", "shape_embed_dim", "shape_decoder_hidden",
        "shape_decoder_layers",
    ),
    "diffusion": (
        "steps", "sigmoid_w1", "sigmoid_w2", "sigmoid_w3", "cosine_s",
        "xi", "zeta", "delta",
    ),
    "predictor": (
        "layers", "neighbors", "scalar_dim", "vector_dim", "time_dim",
        "attention_dim", "attention_heads", "gvp_layers",
    ),
    "sampler": (
        "gamma", "stop_step", "sigma_lo", "sigma_hi", "guidance_k", "pocket_k",
        "guidance_points_per_atom", "guidance_variance", "epsilon_lo",
        "epsilon_hi", "pocket_fallback",
    ),
    "training": (
        "se_steps", "se_batch", "se_lr", "se_decay", "se_min_lr", "se_patience",
        "se_eval_interval", "diff_steps", "diff_batch", "diff_lr", "diff_decay",
        "diff_min_lr", "diff_patience", "diff_eval_interval", "feature_ce_weight",
    ),
    "data": ("train_fraction", "volume_bins"),
    "metrics": ("delta_g",),
}

_FIELD_SECTION = {name: section for section, names in _SECTIONS.items() for name in names}

# inclusive numeric bounds; None means unbounded on that side
_RANGES: dict[str, tuple[float | None, float | None]] = {
    "seed": (0, None),
    "shape_points": (8, 100_000),
    "shape_queries": (8, 1_000_000),
    "shape_knn": (1, 512),
    "shape_layers": (2, 16),
    "shape_hidden_channels": (1, 1024),
    "shape_embed_dim": (1, 2048),
    "shape_decoder_hidden": (1, 4096),
    "shape_decoder_layers": (1, 8),
    "steps": (2, 100_000),
    "sigmoid_w1": (0.0, 100.0),
    "sigmoid_w2": (0.0, 1.0),
    "sigmoid_w3": (0.0, 1.0),
    "cosine_s": (1e-6, 1.0),
    "xi": (0.0, 1e6),
    "zeta": (0.0, 1e6),
    "delta": (0.0, 1e6),
    "layers": (2, 64),
    "neighbors": (1, 128),
    "scalar_dim": (1, 4096),
    "vector_dim": (1, 1024),
    "time_dim": (2, 512),
    "attention_dim": (1, 512),
    "attention_heads": (1, 64),
    "gvp_layers": (1, 8),
    "gamma": (1e-9, 100.0),
    "stop_step": (2, None),
    "sigma_lo": (1e-9, 1.0),
    "sigma_hi": (1e-9, 1.0),
    "guidance_k": (1, 1000),
    "pocket_k": (1, 1000),
    "guidance_points_per_atom": (1, 10_000),
    "guidance_variance": (1e-9, 100.0),
    "epsilon_lo": (0.0, 10.0),
    "epsilon_hi": (0.0, 10.0),
    "pocket_fallback": (1e-9, 100.0),
    "se_steps": (0, 10_000_000),
    "se_batch": (1, 4096),
    "se_lr": (1e-9, 10.0),
    "se_decay": (1e-6, 1.0),
    "se_min_lr": (0.0, 10.0),
    "se_patience": (0, 10_000),
    "se_eval_interval": (1, 10_000_000),
    "diff_steps": (0, 10_000_000),
    "diff_batch": (1, 4096),
    "diff_lr": (1e-9, 10.0),
    "diff_decay": (1e-6, 1.0),
    "diff_min_lr": (0.0, 10.0),
    "diff_patience": (0, 10_000),
    "diff_eval_interval": (1, 10_000_000),
    "feature_ce_weight": (0.0, 1e6),
    "train_fraction": (0.01, 0.99),
    "volume_bins": (1, 1000),
    "delta_g": (0.0, 1.0),
}

_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(name: str, raw: str):
    kind = _TYPES[name]
    try:
        if kind == "int":
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind}") from None


def validate(config: RunConfig) -> RunConfig:
    for name, (lo, hi) in _RANGES.items():
        value = getattr(config, name)
        if lo is not None and value < lo:
            raise ConfigError(f"{name}={value} below minimum {lo}")
        if hi is not None and value > hi:
            raise ConfigError(f"{name}={value} above maximum {hi}")
    if config.sigma_lo > config.sigma_hi:
        raise ConfigError(f"sigma_lo={config.sigma_lo} exceeds sigma_hi={config.sigma_hi}")
    if config.epsilon_lo > config.epsilon_hi:
        raise ConfigError(f"epsilon_lo={config.epsilon_lo} exceeds epsilon_hi={config.epsilon_hi}")
    if not config.stop_step < config.steps:
        raise ConfigError(f"stop_step={config.stop_step} must be smaller than steps={config.steps}")
    if config.shape_points <= config.shape_knn:
        raise ConfigError(
            f"shape_points={config.shape_points} must exceed shape_knn={config.shape_knn}"
        )
    if config.scalar_dim % config.attention_heads or config.vector_dim % config.attention_heads:
        raise ConfigError("scalar_dim and vector_dim must divide attention_heads")
    return config


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"cannot parse config: {err}") from None
    values: dict[str, object] = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            values[key] = _parse_value(key, raw)
    return validate(RunConfig(**values))


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return validate(RunConfig())
    try:
        with open(path, encoding="utf-8") as handle:
            return parse_config(handle.read())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None


def dump_config(config: RunConfig) -> str:
    out = io.StringIO()
    for section, names in _SECTIONS.items():
        out.write(f"[{section}]\n")
        for name in names:
            out.write(f"{name} = {getattr(config, name)!r}\n")
        out.write("\n")
    return out.getvalue()
