import torch
from torch import nn
import torch.nn.functional as F
from typing import Dict, Optional

from ..errors import ConfigError

__all__ = ('HeatmapModel',)


class HeatmapModel(nn.Module):
    """Fully convolutional detector mapping feature tensors to heatmaps.

    Arguments:
       net: convolutional trunk producing one logit channel at reduced resolution
       architecture: JSON-compatible descriptor the model was built from
       min_size: smallest accepted spatial input size
    """
    def __init__(self, net: nn.Module, architecture: Dict, min_size: int = 1):
        super().__init__()
        self.net = net
        self.architecture = dict(architecture)
        self.in_channels = int(architecture["channels"][0])
        self.min_size = min_size

    def check_input(self, x: torch.Tensor):
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise ConfigError(f"expected input of shape (N, {self.in_channels}, H, W), "
                              f"got {tuple(x.shape)}")
        if min(x.shape[-2:]) < self.min_size:
            raise ConfigError(f"input size {tuple(x.shape[-2:])} below the "
                              f"minimum of {self.min_size}")

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        "(N, H, W) logits at input resolution"
        self.check_input(x)
        z = self.net(x)
        z = F.interpolate(z, size=x.shape[-2:], mode="bilinear", align_corners=False)
        return z[:, 0]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        "(N, H, W) heatmap in [0, 1]"
        return torch.sigmoid(self.logits(x))

    def loss(self, x: torch.Tensor, target: torch.Tensor,
             logits: Optional[torch.Tensor] = None) -> torch.Tensor:
        "mean pixelwise binary cross-entropy"
        if logits is None:
            logits = self.logits(x)
        return F.binary_cross_entropy_with_logits(logits, target)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())
