"""Run configuration: every hyperparameter of the pipeline in one nested record.

The config round-trips losslessly through JSON and rejects unknown keys, so an
emitted config file plus a seed is always enough to re-run a command.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class DataConfig:
    image_size: int = 64
    num_classes: int = 7


@dataclass
class VQConfig:
    """Autoencoder architecture: spatial reduction f, latent width, codebook."""

    reduction: int = 4
    latent_channels: int = 4
    base_channels: int = 64
    codebook_size: int = 256
    commitment_beta: float = 0.25
    revive_after: int = 1000


@dataclass
class StyleConfig:
    """Style encoder: L stride-2 conv layers of width D -> C x (L*D) embedding."""

    num_layers: int = 4
    layer_width: int = 64


@dataclass
class UNetConfig:
    base_channels: int = 64
    channel_mults: list = field(default_factory=lambda: [1, 2, 4])
    attention_resolutions: list = field(default_factory=lambda: [16, 8])
    num_res_blocks: int = 2
    num_heads: int = 1
    mask_mode: str = "additive"  # additive | multiplicative | none
    conv_kernel_size: int = 3


@dataclass
class ScheduleConfig:
    timesteps: int = 1000
    beta_start: float = 1.0e-4
    beta_end: float = 0.02


@dataclass
class TrainLoopConfig:
    lr: float = 2.0e-4
    batch_size: int = 16
    steps: int = 3000
    seed: int = 0
    hflip: bool = False
    log_every: int = 50
    checkpoint_every: int = 1000


@dataclass
class SampleConfig:
    sampler: str = "ddim"  # ddim | ddpm
    steps: int = 50
    guidance_scale: float = 1.2
    eta: float = 0.0
    seed: int = 0


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    vq: VQConfig = field(default_factory=VQConfig)
    style: StyleConfig = field(default_factory=StyleConfig)
    unet: UNetConfig = field(default_factory=UNetConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    vq_train: TrainLoopConfig = field(default_factory=TrainLoopConfig)
    # lr 2.0e-06 and 50% conditioning dropout are the published training defaults.
    diffusion_train: TrainLoopConfig = field(
        default_factory=lambda: TrainLoopConfig(lr=2.0e-06, steps=20000)
    )
    dropout_prob: float = 0.5
    drop_mode: str = "joint"  # joint | style_only
    sample: SampleConfig = field(default_factory=SampleConfig)

    @property
    def latent_size(self) -> int:
        return self.data.image_size // self.vq.reduction

    @property
    def style_width(self) -> int:
        return self.style.num_layers * self.style.layer_width

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, payload: dict) -> "RunConfig":
        return _build(cls, payload, context="config")

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _build(dc_type, payload, context):
    """Construct a dataclass from a dict, rejecting unknown keys."""
    if not isinstance(payload, dict):
        raise ValueError(f"{context}: expected an object, got {type(payload).__name__}")
    fields = {f.name: f for f in dataclasses.fields(dc_type)}
    unknown = sorted(set(payload) - set(fields))
    if unknown:
        raise ValueError(f"{context}: unknown keys {unknown}")
    kwargs = {}
    for name, value in payload.items():
        ftype = fields[name].type
        if isinstance(ftype, str):  # string annotations, e.g. under future imports
            ftype = globals().get(ftype, None)
        if isinstance(ftype, type) and dataclasses.is_dataclass(ftype):
            kwargs[name] = _build(ftype, value, f"{context}.{name}")
        else:
            kwargs[name] = value
    return dc_type(**kwargs)
