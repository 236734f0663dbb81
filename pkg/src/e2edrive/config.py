"""Model and training configuration records."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

from .tokenizer import VOCAB_SIZE

IMAGE_SIZE = 64
PATCH_SIZE = 8
N_PATCHES = (IMAGE_SIZE // PATCH_SIZE) ** 2
PATCH_DIM = PATCH_SIZE * PATCH_SIZE * 3
EGO_DIM = 32
EGO_HIDDEN = 64
TRAJ_HIDDEN = 256
HORIZON = 10
TRAJ_DIM = 6 * HORIZON
N_MODALITIES = 5

# Multipliers that turn normalised head outputs into metres, m/s and m/s^2.
NORM_SCALES = {"pos": 50.0, "vel": 20.0, "acc": 5.0}


def _known_fields(cls, data: dict) -> dict:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    return dict(data)


@dataclass
class ModelConfig:
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 512
    vocab: int = VOCAB_SIZE
    max_seq: int = 256
    vision_blocks: int = 2
    lora_rank: int = 4
    lora_alpha: float = 8.0
    lora_enabled: bool = False
    horizon: int = HORIZON
    dt: float = 0.5
    ln_eps: float = 1e-5
    init_std: float = 0.02
    norm_scales: dict = field(default_factory=lambda: dict(NORM_SCALES))

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.horizon != HORIZON or abs(self.horizon * self.dt - 5.0) > 0:
            raise ValueError("trajectory horizon must be 10 steps of 0.5 s")

    @property
    def lora_scale(self) -> float:
        return self.lora_alpha / self.lora_rank

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**_known_fields(cls, data))


def tiny_config(**overrides) -> ModelConfig:
    """The small configuration used for end-to-end gradient checks."""
    base = dict(d_model=8, n_layers=1, n_heads=2, d_ff=16)
    base.update(overrides)
    return ModelConfig(**base)


@dataclass
class TrainConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float = 1.0
    batch_size: int = 8
    steps: int = 1000
    lambda_text: float = 0.5
    seed: int = 0
    mode: str = "full"

    def __post_init__(self):
        self.mode = self.mode.lower()
        if self.mode not in ("full", "lora"):
            raise ValueError(f"mode must be 'full' or 'lora', got {self.mode!r}")
        if self.lambda_text < 0:
            raise ValueError("lambda_text must be non-negative")
        if self.clip <= 0:
            raise ValueError("clip must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**_known_fields(cls, data))
