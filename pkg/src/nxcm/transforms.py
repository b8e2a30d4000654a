"""ConvNeXt analysis/synthesis transforms and hyper-transforms.

Analysis maps an image to a latent with a x16 spatial reduction (four
patchify-downsample stages, each followed by a stack of ConvNeXt blocks);
the hyper pair adds another x4 on top of the latent.  Synthesis mirrors
analysis with transposed-convolution upsampling and a final projection back
to 3 channels.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig
from .errors import ConfigError, ShapeError

LAYERNORM_EPS = 1e-6


class ChannelLayerNorm(nn.Module):
    """LayerNorm over the channel dimension at every spatial position."""

    def __init__(self, channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.channels = channels

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x.permute(0, 2, 3, 1)
        x = F.layer_norm(x, (self.channels,), self.weight, self.bias, LAYERNORM_EPS)
        return x.permute(0, 3, 1, 2)


class ConvNeXtBlock(nn.Module):
    """Residual block: depthwise conv -> LayerNorm -> expand -> GELU -> project.

    The depthwise convolution uses one group per channel; the inverted
    bottleneck expands to ``expansion_ratio`` times the block width before
    projecting back.  With zeroed projection weights the block is exactly
    the identity map.
    """

    def __init__(self, width: int, kernel_size: int = 7, expansion_ratio: int = 4):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ConfigError("ConvNeXt block kernel size must be odd")
        hidden = expansion_ratio * width
        self.dwconv = nn.Conv2d(
            width, width, kernel_size, padding=kernel_size // 2, groups=width
        )
        self.norm = ChannelLayerNorm(width)
        self.expand = nn.Conv2d(width, hidden, kernel_size=1)
        self.project = nn.Conv2d(hidden, width, kernel_size=1)
        self.width = width

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.width:
            raise ConfigError(
                f"ConvNeXt block expects {self.width} channels, got {x.shape[1]}"
            )
        h = self.dwconv(x)
        h = self.norm(h)
        h = self.expand(h)
        h = F.gelu(h)
        h = self.project(h)
        return x + h


class DownsampleBlock(nn.Module):
    """Patchify layer: 2x2 stride-2 non-overlapping conv + LayerNorm."""

    def __init__(self, in_width: int, out_width: int):
        super().__init__()
        self.conv = nn.Conv2d(in_width, out_width, kernel_size=2, stride=2)
        self.norm = ChannelLayerNorm(out_width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        if h % 2 or w % 2:
            raise ShapeError(
                f"downsample requires even spatial dims, got {h}x{w}; pad first"
            )
        return self.norm(self.conv(x))


class UpsampleBlock(nn.Module):
    """Transposed 2x2 stride-2 conv + LayerNorm; doubles spatial dims."""

    def __init__(self, in_width: int, out_width: int):
        super().__init__()
        self.conv = nn.ConvTranspose2d(in_width, out_width, kernel_size=2, stride=2)
        self.norm = ChannelLayerNorm(out_width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.norm(self.conv(x))


def _block_stack(width, depth, cfg: ModelConfig) -> nn.Sequential:
    return nn.Sequential(
        *[
            ConvNeXtBlock(width, cfg.kernel_size, cfg.expansion_ratio)
            for _ in range(depth)
        ]
    )


class AnalysisTransform(nn.Module):
    """Image -> latent, four downsampling stages (x16 total)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        widths = cfg.stage_widths
        stages = []
        in_w = 3
        for i in range(4):
            stages.append(
                nn.ModuleDict(
                    {
                        "down": DownsampleBlock(in_w, widths[i]),
                        "blocks": _block_stack(widths[i], cfg.stage_depths[i], cfg),
                    }
                )
            )
            in_w = widths[i]
        self.stages = nn.ModuleList(stages)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (B, 3, H, W) image tensor, got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        if h % 16 or w % 16:
            raise ShapeError(
                f"analysis requires H, W to be multiples of 16, got {h}x{w}; "
                "pad the image first (pad_to_multiple)"
            )
        for stage in self.stages:
            x = stage["down"](x)
            x = stage["blocks"](x)
        return x


class SynthesisTransform(nn.Module):
    """Latent -> image; mirrors analysis, ending in a projection to 3 channels."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        widths = cfg.stage_widths
        depths = cfg.stage_depths
        stages = []
        for i in (3, 2, 1, 0):
            out_w = widths[i - 1] if i > 0 else 3
            up: nn.Module
            if i > 0:
                up = UpsampleBlock(widths[i], out_w)
            else:
                # Final projection to pixels: plain transposed conv, no norm.
                up = nn.ConvTranspose2d(widths[i], out_w, kernel_size=2, stride=2)
            stages.append(
                nn.ModuleDict(
                    {"blocks": _block_stack(widths[i], depths[i], cfg), "up": up}
                )
            )
        self.stages = nn.ModuleList(stages)
        self.latent_depth = cfg.latent_depth

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        if y.dim() != 4 or y.shape[1] != self.latent_depth:
            raise ConfigError(
                f"synthesis expects {self.latent_depth} latent channels, "
                f"got {tuple(y.shape)}"
            )
        for stage in self.stages:
            y = stage["blocks"](y)
            y = stage["up"](y)
        return y


class HyperAnalysisTransform(nn.Module):
    """Latent -> hyper-latent, two downsampling stages (x4 total)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        widths = cfg.hyper_stage_widths
        depths = cfg.hyper_stage_depths
        stages = []
        in_w = cfg.latent_depth
        for i in range(2):
            stages.append(
                nn.ModuleDict(
                    {
                        "down": DownsampleBlock(in_w, widths[i]),
                        "blocks": _block_stack(widths[i], depths[i], cfg),
                    }
                )
            )
            in_w = widths[i]
        self.stages = nn.ModuleList(stages)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        for stage in self.stages:
            y = stage["down"](y)
            y = stage["blocks"](y)
        return y


class HyperSynthesisTransform(nn.Module):
    """Hyper-latent -> conditioning features for the slice networks.

    Mirrors hyper-analysis and emits ``2 * latent_depth`` channels at the
    latent resolution so both location and scale information reach the
    per-slice parameter networks.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        widths = cfg.hyper_stage_widths
        depths = cfg.hyper_stage_depths
        self.stages = nn.ModuleList(
            [
                nn.ModuleDict(
                    {
                        "blocks": _block_stack(widths[1], depths[1], cfg),
                        "up": UpsampleBlock(widths[1], widths[0]),
                    }
                ),
                nn.ModuleDict(
                    {
                        "blocks": _block_stack(widths[0], depths[0], cfg),
                        "up": UpsampleBlock(widths[0], cfg.hyper_feature_depth),
                    }
                ),
            ]
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        for stage in self.stages:
            z = stage["blocks"](z)
            z = stage["up"](z)
        return z


def pad_to_multiple(x: torch.Tensor, multiple: int = 64) -> torch.Tensor:
    """Replicate-pad on the right/bottom up to the next multiple."""
    h, w = x.shape[-2:]
    pad_h = (-h) % multiple
    pad_w = (-w) % multiple
    if pad_h == 0 and pad_w == 0:
        return x
    return F.pad(x, (0, pad_w, 0, pad_h), mode="replicate")


def crop_spatial(x: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Undo :func:`pad_to_multiple`: keep the top-left ``height`` x ``width``."""
    return x[..., :height, :width]
