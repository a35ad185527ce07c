"""Spatial pooling of convolutional feature maps."""

import torch


def mean_std_pool(maps):
    """Per-channel spatial mean and standard deviation, concatenated.

    ``maps`` is [C, H, W]; the result is [2C]: means first, then stds.
    Standard deviation uses the population (divide-by-HW) convention, so
    a 1x1 map pools to (value, 0) rather than NaN.
    """
    if maps.ndim != 3:
        raise ValueError(f"mean_std_pool expects [C, H, W] maps, got shape {tuple(maps.shape)}")
    flat = maps.reshape(maps.shape[0], -1)
    return torch.cat([flat.mean(dim=1), flat.std(dim=1, correction=0)])
