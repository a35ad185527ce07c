"""Frozen image backbone and its published input normalization."""

import numpy as np
import torch

from .errors import BackboneError

BACKBONES = ("resnet50",)

# the backbone's published channel statistics; applied without any
# resizing or cropping, frames keep their native resolution
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class FrameEncoder(torch.nn.Module):
    """Backbone trunk up to (and including) the top convolutional stage.

    Forward maps a [B, 3, H, W] image batch to [B, C, H/32, W/32] feature
    maps; weights are frozen and the module stays in eval mode.
    """

    min_input_size = 32  # five stride-2 stages; smaller frames reach 0x0 maps

    def __init__(self, resnet, channels):
        super().__init__()
        self.stem = torch.nn.Sequential(resnet.conv1, resnet.bn1, resnet.relu, resnet.maxpool)
        self.stages = torch.nn.Sequential(resnet.layer1, resnet.layer2, resnet.layer3, resnet.layer4)
        self.channels = channels
        self.requires_grad_(False)
        self.eval()

    def train(self, mode=True):
        # freezing includes batch-norm statistics; ignore train() requests
        return super().train(False)

    def forward(self, x):
        return self.stages(self.stem(x))


def load_backbone(backbone_id="resnet50", pretrained=True) -> FrameEncoder:
    """Build the frozen encoder; failures to obtain weights are environment errors."""
    if backbone_id not in BACKBONES:
        raise BackboneError(
            f"unknown backbone {backbone_id!r}; available: {', '.join(BACKBONES)}"
        )
    import torchvision.models as models

    try:
        weights = models.ResNet50_Weights.IMAGENET1K_V2 if pretrained else None
        net = models.resnet50(weights=weights)
    except Exception as exc:
        raise BackboneError(
            f"could not load backbone {backbone_id!r} "
            f"(pretrained={pretrained}): {exc}"
        ) from exc
    return FrameEncoder(net, channels=2048)


def preprocess(frame):
    """uint8 RGB [H, W, 3] frame -> normalized float tensor [3, H, W]."""
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError(f"expected an RGB frame [H, W, 3], got shape {frame.shape}")
    x = torch.from_numpy(np.ascontiguousarray(frame)).float().permute(2, 0, 1) / 255.0
    mean = torch.tensor(IMAGENET_MEAN).view(3, 1, 1)
    std = torch.tensor(IMAGENET_STD).view(3, 1, 1)
    return (x - mean) / std
