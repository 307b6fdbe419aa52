from .layers import (
    AvgPool,
    Conv2d,
    GroupNorm,
    Linear,
    Module,
    Param,
    ResBlock,
    Sequential,
    SiLU,
    TimeMLP,
    Upsample,
    sinusoidal_embedding,
)
from .optim import Adam
from .weights import WeightFileError, load_weights, save_weights

__all__ = [
    "Adam",
    "AvgPool",
    "Conv2d",
    "GroupNorm",
    "Linear",
    "Module",
    "Param",
    "ResBlock",
    "Sequential",
    "SiLU",
    "TimeMLP",
    "Upsample",
    "WeightFileError",
    "load_weights",
    "save_weights",
    "sinusoidal_embedding",
]
