"""Named constant bundles wiring the whole pipeline.

``paper`` carries the full-scale defaults; ``test`` shrinks every knob so
the complete pipeline (including training) runs in minutes on a laptop
CPU. A profile fully determines all constants downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

from strandlang.grammar import Vocabulary
from strandlang.model import ModelConfig, TrainConfig


@dataclass(frozen=True)
class Profile:
    name: str
    strand_length: int
    k_feat: int
    k_geo: int
    n_guide: int
    k_coarse: int
    k_style: int
    k_density: int
    pq_iterations: int
    ema_decay: float
    pool_size: int
    d_model: int
    n_layers: int
    n_heads: int
    context_len: int
    cond_dim: int
    lr: float
    final_lr: float
    weight_decay: float
    default_steps: int
    max_strands_per_region: int
    dtype: str

    def vocabulary(self) -> Vocabulary:
        return Vocabulary(
            k_coarse=self.k_coarse, k_style=self.k_style, k_density=self.k_density
        )

    def model_config(self, seed: int = 0) -> ModelConfig:
        return ModelConfig(
            vocab_size=self.vocabulary().size,
            d_model=self.d_model,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            context_len=self.context_len,
            cond_dim=self.cond_dim,
            seed=seed,
            dtype=self.dtype,
        )

    def train_config(self, steps: int | None = None, seed: int = 0) -> TrainConfig:
        return TrainConfig(
            steps=steps if steps is not None else self.default_steps,
            lr=self.lr,
            final_lr=self.final_lr,
            weight_decay=self.weight_decay,
            seed=seed,
        )


PAPER = Profile(
    name="paper",
    strand_length=64,
    k_feat=8,
    k_geo=4,
    n_guide=512,
    k_coarse=8192,
    k_style=2048,
    k_density=512,
    pq_iterations=50,
    ema_decay=0.99,
    pool_size=10,
    d_model=128,
    n_layers=4,
    n_heads=4,
    context_len=8192,
    cond_dim=64,
    lr=5e-5,
    final_lr=1e-6,
    weight_decay=0.1,
    default_steps=20000,
    max_strands_per_region=512,
    dtype="float32",
)

TEST = Profile(
    name="test",
    strand_length=32,
    k_feat=8,
    k_geo=4,
    n_guide=64,
    k_coarse=64,
    k_style=32,
    k_density=16,
    pq_iterations=50,
    ema_decay=0.9,
    pool_size=10,
    d_model=32,
    n_layers=2,
    n_heads=2,
    context_len=2048,
    cond_dim=8,
    lr=3e-4,
    final_lr=3e-5,
    weight_decay=0.01,
    default_steps=2000,
    max_strands_per_region=32,
    dtype="float32",
)

_PROFILES = {p.name: p for p in (PAPER, TEST)}


def get_profile(name: str) -> Profile:
    try:
        return _PROFILES[name]
    except KeyError:
        raise ValueError(
            f"unknown profile {name!r}; choose from {sorted(_PROFILES)}"
        ) from None
