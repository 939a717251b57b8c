"""LUPI visible-infrared re-identification workbench."""

from _lupi import (  # noqa: F401
    LupiError,
    augment,
    evaluate,
    generate_synthetic,
    mix_channels,
    mmd,
    random_channel_mix,
    to_grayscale,
    train_and_eval,
    triplet_loss,
)

__all__ = [
    "LupiError",
    "augment",
    "evaluate",
    "generate_synthetic",
    "mix_channels",
    "mmd",
    "random_channel_mix",
    "to_grayscale",
    "train_and_eval",
    "triplet_loss",
]
