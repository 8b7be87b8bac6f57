"""Configuration and report models"""
from __future__ import annotations

import enum
from typing import Any, Dict, List, Optional, Type, TypeVar

import numpy as np
from pydantic import BaseModel, ValidationError, field_validator, model_validator

from app.core.errors import ConfigurationError

ModelT = TypeVar("ModelT", bound=BaseModel)


class LayerKind(str, enum.Enum):
    """Token-mixing layer families covered by the cost calculator"""
    CONV = "conv"
    WTRANS = "wtrans"
    FFC = "ffc"
    GFNET = "gfnet"
    AFNO = "afno"
    AFFNET = "affnet"
    FOURIERSR = "fouriersr"


class LossKind(str, enum.Enum):
    L1 = "l1"
    MSE = "mse"


class PluginInit(str, enum.Enum):
    """Starting point of an inserted FourierSR block"""
    IDENTITY = "identity"  # exact identity map, residual off
    NEAR_IDENTITY = "near_identity"  # residual on, small lower-branch weight
    ZERO_BRANCH = "zero_branch"  # residual on, both branches live with zero fusion weights


def parse_config(model: Type[ModelT], values: Dict[str, Any]) -> ModelT:
    """Validate a flat mapping into `model`, mapping failures to ConfigurationError"""
    try:
        return model.model_validate(values)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first.get("loc", ())) or model.__name__
        raise ConfigurationError(f"{where}: {first.get('msg')}") from e


def _split_ints(value: Any) -> Any:
    if isinstance(value, str):
        value = value.strip()
        if not value:
            return []
        return [int(v) for v in value.split(",") if v.strip()]
    return value


class VerifyConfig(BaseModel):
    """Instance family for the equivalence suite; unset extents are drawn per seed"""
    channels: Optional[int] = None
    rho: Optional[int] = None
    height: Optional[int] = None
    width: Optional[int] = None
    residual: bool = False
    real_filter_mode: bool = False
    use_ctm: bool = True
    use_upper: bool = True
    use_lower: bool = True
    share_filter: bool = False
    channel_choices: List[int] = [2, 4, 8, 16]
    min_extent: int = 4
    max_extent: int = 16
    seed: int = 0

    class Config:
        extra = "forbid"

    @field_validator("channel_choices", mode="before")
    @classmethod
    def parse_choices(cls, v):
        return _split_ints(v)

    @model_validator(mode="after")
    def check_family(self):
        for name in ("channels", "rho", "height", "width"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.channels is not None and self.rho is not None and self.channels % self.rho:
            raise ValueError(f"rho={self.rho} does not divide channels={self.channels}")
        if not 1 <= self.min_extent <= self.max_extent:
            raise ValueError("need 1 <= min_extent <= max_extent")
        if not self.channel_choices or min(self.channel_choices) < 1:
            raise ValueError("channel_choices must be positive")
        return self


class EquivalenceReport(BaseModel):
    max_abs_diff: float
    max_rel_diff: float
    seeds_tested: int
    passed: bool
    tolerance: float
    drop_fft: bool = False
    control_min_rel_diff: Optional[float] = None

    @model_validator(mode="after")
    def check_passed(self):
        if self.passed != (self.max_rel_diff <= self.tolerance):
            raise ValueError("passed must equal max_rel_diff <= tolerance")
        return self

    def csv_row(self) -> str:
        control = "" if self.control_min_rel_diff is None else f"{self.control_min_rel_diff:.6e}"
        return (
            f"{self.seeds_tested},{self.max_abs_diff:.6e},{self.max_rel_diff:.6e},"
            f"{self.tolerance:.1e},{str(self.passed).lower()},{str(self.drop_fft).lower()},{control}"
        )


class SRModelConfig(BaseModel):
    channels: int = 16
    blocks: int = 2
    scale: int = 2
    rho: int = 4
    seed: int = 0
    plugin_positions: List[int] = []
    plugin_init: PluginInit = PluginInit.ZERO_BRANCH

    class Config:
        extra = "forbid"

    @model_validator(mode="before")
    @classmethod
    def expand_random_positions(cls, data):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        positions = data.get("plugin_positions")
        if isinstance(positions, str) and positions.strip().startswith("random:"):
            count = int(positions.split(":", 1)[1])
            blocks = int(data.get("blocks", cls.model_fields["blocks"].default))
            seed = int(data.get("seed", cls.model_fields["seed"].default))
            if not 0 <= count <= blocks:
                raise ValueError(f"cannot draw {count} positions from {blocks} blocks")
            rng = np.random.default_rng(seed)
            data["plugin_positions"] = sorted(int(p) for p in rng.choice(blocks, size=count, replace=False))
        else:
            data["plugin_positions"] = _split_ints(positions) if positions is not None else []
        return data

    @model_validator(mode="after")
    def check_shapes(self):
        if self.channels < 1 or self.blocks < 0 or self.rho < 1:
            raise ValueError("channels and rho must be >= 1, blocks >= 0")
        if self.scale not in (1, 2, 3, 4):
            raise ValueError(f"scale must be one of 1, 2, 3, 4, got {self.scale}")
        if self.channels % self.rho:
            raise ValueError(f"rho={self.rho} does not divide channels={self.channels}")
        if len(set(self.plugin_positions)) != len(self.plugin_positions):
            raise ValueError("plugin positions must be distinct")
        for p in self.plugin_positions:
            if not 0 <= p < self.blocks:
                raise ValueError(f"plugin position {p} outside 0..{self.blocks - 1}")
        return self


class TrainConfig(BaseModel):
    steps: int = 2000
    batch_size: int = 8
    patch_size: int = 32  # LR pixels
    learning_rate: float = 0.02
    momentum: float = 0.9
    loss: LossKind = LossKind.L1
    seed: int = 0
    val_every: int = 100
    dataset_size: int = 16
    val_size: int = 4
    hr_size: int = 96

    class Config:
        extra = "forbid"

    @model_validator(mode="after")
    def check_positive(self):
        for name in ("steps", "batch_size", "val_every", "dataset_size", "val_size", "hr_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.patch_size < 8:
            raise ValueError("patch_size must be >= 8")
        if self.learning_rate < 0 or not 0 <= self.momentum < 1:
            raise ValueError("learning_rate must be >= 0 and momentum in [0, 1)")
        return self


class TrainingHistory(BaseModel):
    steps: List[int] = []
    loss: List[float] = []
    val_psnr: List[Optional[float]] = []
    bicubic_psnr: Optional[float] = None

    def record(self, step: int, loss: float, val_psnr: Optional[float] = None) -> None:
        self.steps.append(step)
        self.loss.append(loss)
        self.val_psnr.append(val_psnr)

    @property
    def last_val_psnr(self) -> Optional[float]:
        for v in reversed(self.val_psnr):
            if v is not None:
                return v
        return None


class ComplexitySpec(BaseModel):
    kind: LayerKind
    C: int
    H: Optional[int] = None
    W: Optional[int] = None
    k: Optional[int] = None
    M: Optional[int] = None
    rho: Optional[int] = None
    scale: int = 1
    hr_height: Optional[int] = None
    hr_width: Optional[int] = None
    ctm: int = 1

    @model_validator(mode="after")
    def derive_lr_extents(self):
        if self.H is None and self.hr_height is not None:
            self.H = self.hr_height // self.scale
        if self.W is None and self.hr_width is not None:
            self.W = self.hr_width // self.scale
        for name in ("C", "H", "W", "k", "M", "rho", "scale"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ValueError(f"{name} must be positive")
        if self.ctm < 0:
            raise ValueError("ctm must be >= 0")
        return self


class CostReport(BaseModel):
    kind: LayerKind
    flops: float  # G
    params: float  # K, closed form
    params_shape_derived: Optional[float] = None  # K, FourierSR only
    formula_text: str

    @model_validator(mode="after")
    def check_non_negative(self):
        if self.flops < 0 or self.params < 0:
            raise ValueError("costs must be non-negative")
        return self
