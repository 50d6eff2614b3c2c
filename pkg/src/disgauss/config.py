"""Configuration dataclasses and JSON round-tripping."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .losses import LossWeights


@dataclass
class ModelConfig:
    image_size: int = 64
    latent_apr: int = 16
    latent_pcd: int = 16
    cond_dim: int = 64
    n_points: int = 1024
    triplane_res: int = 64
    triplane_ch: int = 32
    sh_degree: int = 1
    backbone_ch: int = 128
    fold_hidden: int = 128
    pointnet_feat: int = 32
    decoder_hidden: int = 128
    scale_max: float = 0.2

    @property
    def latent_total(self) -> int:
        return self.latent_apr + self.latent_pcd


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 6e-5
    warmup_epochs: float = 1.0
    seed: int = 0
    data_dir: str = "data"
    out_dir: str = "runs/default"
    emd_points: int = 128          # farthest-point subsample for the train loss
    emd_iters: int = 60
    grad_clip: float = 5.0
    eval_every: int = 0            # 0: only at the end
    views_per_step: int = 4
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


def _to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def _from_dict(data: dict) -> TrainConfig:
    data = dict(data)
    model = ModelConfig(**data.pop("model", {}))
    weights = LossWeights(**data.pop("weights", {}))
    return TrainConfig(model=model, weights=weights, **data)


def save_config(cfg: TrainConfig, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(_to_dict(cfg), f, indent=2)


def load_config(path) -> TrainConfig:
    with open(path) as f:
        return _from_dict(json.load(f))


def config_to_json(cfg: TrainConfig) -> str:
    return json.dumps(_to_dict(cfg))


def config_from_json(s: str) -> TrainConfig:
    return _from_dict(json.loads(s))
