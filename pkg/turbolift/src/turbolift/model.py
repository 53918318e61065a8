"""Multi-scale attention U-Net for single-class segmentation.

Four contraction stages (feature maps double each time), a latent block,
and four expansion stages (features halve).  The raw input is average-
pooled to three reduced scales and injected into contraction stages 2-4;
skip connections into the first three expansion stages pass through
additive attention gates, the last one is a plain concatenation.  Every
expansion stage carries its own sigmoid head, so a forward pass returns
four maps on a halving ladder: full, 1/2, 1/4, 1/8 resolution.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import torch
from torch import nn

from .errors import ConfigurationError, ShapeError


@dataclass(frozen=True)
class ModelSpec:
    """Architecture hyperparameters; hashed into checkpoints."""

    in_channels: int = 1
    base_features: int = 64
    depth: int = 4

    def validate(self) -> "ModelSpec":
        if self.in_channels < 1:
            raise ConfigurationError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.base_features < 1:
            raise ConfigurationError(
                f"base_features must be >= 1, got {self.base_features}"
            )
        if self.depth != 4:
            raise ConfigurationError(
                f"the ladder is fixed at 4 contraction/expansion stages, got {self.depth}"
            )
        return self

    def spec_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _conv_set(cin: int, cout: int) -> nn.Sequential:
    """2 x [Conv3x3 + BatchNorm + per-channel PReLU]."""
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=1, padding=1),
        nn.BatchNorm2d(cout),
        nn.PReLU(cout),
        nn.Conv2d(cout, cout, 3, stride=1, padding=1),
        nn.BatchNorm2d(cout),
        nn.PReLU(cout),
    )


def _gating_signal(channels: int) -> nn.Sequential:
    """1x1 convolutional set that turns a decoder stage into a gating signal."""
    return nn.Sequential(
        nn.Conv2d(channels, channels, 1),
        nn.BatchNorm2d(channels),
        nn.PReLU(channels),
    )


class AttentionGate(nn.Module):
    """Additive attention on a skip connection.

    The skip ``s`` (at 2x the gating resolution) is reduced by a stride-2
    convolution to ``theta``, the gating signal by a 1x1 convolution to
    ``phi``; their rectified sum collapses to a one-channel map ``psi``
    whose sigmoid, upsampled bilinearly back to the skip resolution,
    multiplies the skip before a final 1x1 convolution + normalization.

    The most recent attention map is kept on ``last_map`` for inspection.
    """

    def __init__(self, skip_channels: int, gate_channels: int):
        super().__init__()
        inter = skip_channels
        self.theta = nn.Conv2d(skip_channels, inter, 2, stride=2)
        self.phi = nn.Conv2d(gate_channels, inter, 1)
        self.act = nn.PReLU(inter)
        self.psi = nn.Conv2d(inter, 1, 1)
        self.rescale = nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False)
        self.out = nn.Sequential(
            nn.Conv2d(skip_channels, skip_channels, 1),
            nn.BatchNorm2d(skip_channels),
        )
        self.last_map = None

    def forward(self, skip: torch.Tensor, gate: torch.Tensor) -> torch.Tensor:
        if (
            skip.shape[-2] != 2 * gate.shape[-2]
            or skip.shape[-1] != 2 * gate.shape[-1]
        ):
            raise ShapeError(
                f"skip {tuple(skip.shape[-2:])} must be twice the gating "
                f"resolution {tuple(gate.shape[-2:])}"
            )
        summed = self.act(self.theta(skip) + self.phi(gate))
        attention = self.rescale(torch.sigmoid(self.psi(summed)))
        self.last_map = attention.detach()
        return self.out(skip * attention)


class MultiscaleAttentionUNet(nn.Module):
    """See module docstring; built from a validated :class:`ModelSpec`."""

    def __init__(self, spec: ModelSpec = ModelSpec()):
        super().__init__()
        spec.validate()
        self.spec = spec
        f = spec.base_features
        cin = spec.in_channels

        self.pool = nn.MaxPool2d(2)
        self.scale_pool = nn.AvgPool2d(2)

        self.enc1 = _conv_set(cin, f)
        self.inject2 = nn.Conv2d(cin, 2 * f, 3, stride=1, padding=1)
        self.enc2 = _conv_set(2 * f + f, 2 * f)
        self.inject3 = nn.Conv2d(cin, 4 * f, 3, stride=1, padding=1)
        self.enc3 = _conv_set(4 * f + 2 * f, 4 * f)
        self.inject4 = nn.Conv2d(cin, 8 * f, 3, stride=1, padding=1)
        self.enc4 = _conv_set(8 * f + 4 * f, 8 * f)
        self.latent = _conv_set(8 * f, 16 * f)

        self.gate1 = _gating_signal(16 * f)
        self.attn1 = AttentionGate(8 * f, 16 * f)
        self.up1 = nn.ConvTranspose2d(16 * f, 8 * f, 2, stride=2)
        self.dec1 = _conv_set(16 * f, 8 * f)

        self.gate2 = _gating_signal(8 * f)
        self.attn2 = AttentionGate(4 * f, 8 * f)
        self.up2 = nn.ConvTranspose2d(8 * f, 4 * f, 2, stride=2)
        self.dec2 = _conv_set(8 * f, 4 * f)

        self.gate3 = _gating_signal(4 * f)
        self.attn3 = AttentionGate(2 * f, 4 * f)
        self.up3 = nn.ConvTranspose2d(4 * f, 2 * f, 2, stride=2)
        self.dec3 = _conv_set(4 * f, 2 * f)

        self.up4 = nn.ConvTranspose2d(2 * f, f, 2, stride=2)
        self.dec4 = _conv_set(2 * f, f)

        self.head3 = nn.Conv2d(8 * f, 1, 1)
        self.head2 = nn.Conv2d(4 * f, 1, 1)
        self.head1 = nn.Conv2d(2 * f, 1, 1)
        self.head = nn.Conv2d(f, 1, 1)

    def forward(self, x: torch.Tensor):
        """(B, C, H, W) -> maps at (H, W), (H/2, W/2), (H/4, W/4), (H/8, W/8)."""
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(
                f"expected (B, {self.spec.in_channels}, H, W), got {tuple(x.shape)}"
            )
        h, w = x.shape[-2:]
        if h % 16 or w % 16:
            raise ShapeError(f"H and W must be divisible by 16, got {h}x{w}")

        x1 = self.scale_pool(x)
        x2 = self.scale_pool(x1)
        x3 = self.scale_pool(x2)

        e1 = self.enc1(x)
        e2 = self.enc2(torch.cat([self.inject2(x1), self.pool(e1)], dim=1))
        e3 = self.enc3(torch.cat([self.inject3(x2), self.pool(e2)], dim=1))
        e4 = self.enc4(torch.cat([self.inject4(x3), self.pool(e3)], dim=1))
        latent = self.latent(self.pool(e4))

        d1 = self.dec1(
            torch.cat([self.up1(latent), self.attn1(e4, self.gate1(latent))], dim=1)
        )
        d2 = self.dec2(torch.cat([self.up2(d1), self.attn2(e3, self.gate2(d1))], dim=1))
        d3 = self.dec3(torch.cat([self.up3(d2), self.attn3(e2, self.gate3(d2))], dim=1))
        d4 = self.dec4(torch.cat([self.up4(d3), e1], dim=1))

        return (
            torch.sigmoid(self.head(d4)),
            torch.sigmoid(self.head1(d3)),
            torch.sigmoid(self.head2(d2)),
            torch.sigmoid(self.head3(d1)),
        )


def build_model(spec: ModelSpec = ModelSpec()) -> MultiscaleAttentionUNet:
    """Construct the network; weights use the default uniform fan-in init."""
    return MultiscaleAttentionUNet(spec)
