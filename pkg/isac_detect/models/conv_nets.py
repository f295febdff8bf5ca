import torch.nn as nn
from typing import Dict, Sequence

from ..errors import ConfigError
from .base import HeatmapModel

__all__ = ('HeatmapConvNet', 'MicroConvNet', 'build_model', 'TOY_ARCHITECTURE',
           'MICRO_ARCHITECTURE')

TOY_ARCHITECTURE = {"channels": [6, 16, 32, 32, 1], "strides": [1, 2, 2, 1],
                    "kernel_size": 3}
MICRO_ARCHITECTURE = {"channels": [2, 3, 3, 1], "strides": [1, 2, 1],
                      "kernel_size": 3}


def HeatmapConvNet(channels: Sequence[int] = (6, 16, 32, 32, 1),
                   strides: Sequence[int] = (1, 2, 2, 1), kernel_size: int = 3,
                   zero_head: bool = False) -> HeatmapModel:
    """Stack of `kernel_size` convolutions with ReLU in between, downsampling
    by the given strides; logits are upsampled back to the input size.

    `zero_head` zeroes the last layer's weights so the output is the constant
    sigmoid(bias).
    """
    channels, strides = [int(c) for c in channels], [int(s) for s in strides]
    if len(channels) < 2 or len(strides) != len(channels) - 1:
        raise ConfigError(f"need one stride per layer, got channels={channels}, "
                          f"strides={strides}")
    if channels[-1] != 1:
        raise ConfigError("the last layer must produce a single heatmap channel")
    if kernel_size % 2 != 1:
        raise ConfigError("kernel_size must be odd")

    layers = []
    for i, (c_in, c_out, s) in enumerate(zip(channels[:-1], channels[1:], strides)):
        layers.append(nn.Conv2d(c_in, c_out, kernel_size, stride=s,
                                padding=kernel_size//2))
        if i < len(strides) - 1:
            layers.append(nn.ReLU())
    net = nn.Sequential(*layers)
    if zero_head:
        nn.init.zeros_(net[-1].weight)

    min_size = 1
    for s in strides:
        min_size *= s
    architecture = {"channels": channels, "strides": strides,
                    "kernel_size": kernel_size}
    return HeatmapModel(net, architecture, min_size=min_size)


def MicroConvNet(in_channels: int = 2) -> HeatmapModel:
    "3-layer net for gradient checks on 8x8 inputs"
    return HeatmapConvNet((in_channels, 3, 3, 1), (1, 2, 1))


def build_model(architecture: Dict) -> HeatmapModel:
    try:
        return HeatmapConvNet(architecture["channels"], architecture["strides"],
                              architecture.get("kernel_size", 3))
    except KeyError as e:
        raise ConfigError(f"architecture descriptor lacks {e}") from e
