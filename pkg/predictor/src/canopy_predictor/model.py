"""Canopy-height prediction network.

Three per-timestamp stem encoders embed the 5-band inputs; the stem
features are concatenated and projected into one spatio-temporal
embedding; an embedding of the three year gaps is broadcast over space
and fused in; a projector and a U-Net encoder-decoder refine the result,
and a head with a nonnegativity rectifier emits the height map.

Fully convolutional: any input size that survives the U-Net's
downsampling (multiples of 2^depth) works, not just 256x256.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from .errors import ShapeError

IN_CHANNELS = 5
NUM_TIMESTAMPS = 3


@dataclass(frozen=True)
class ModelConfig:
    stem_channels: int = 32      # per-timestamp stem output width
    fused_channels: int = 64     # spatio-temporal embedding width
    unet_base: int = 64          # first U-Net stage width
    unet_depth: int = 4          # number of down/up stages
    time_fusion: str = "add"     # "add" or "concat" for the year-gap fusion
    band_mask: tuple[int, ...] = (0, 1, 2, 3, 4)  # input bands kept

    def __post_init__(self):
        if self.time_fusion not in ("add", "concat"):
            raise ValueError(f"time_fusion {self.time_fusion!r} not in (add, concat)")
        if not self.band_mask or any(not 0 <= b < IN_CHANNELS for b in self.band_mask):
            raise ValueError(f"band_mask {self.band_mask} out of range")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["band_mask"] = list(self.band_mask)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["band_mask"] = tuple(d.get("band_mask", (0, 1, 2, 3, 4)))
        return cls(**d)


def _conv_bn_relu(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=1, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class StemEncoder(nn.Module):
    """Two Conv-BN-ReLU blocks (kernel 3, stride 1): spatial size preserved."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.blocks = nn.Sequential(_conv_bn_relu(in_ch, out_ch),
                                    _conv_bn_relu(out_ch, out_ch))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.blocks(x)


class FusionBlock(nn.Module):
    """Concatenate the per-timestamp stem features and project them down."""

    def __init__(self, stem_channels: int, fused_channels: int):
        super().__init__()
        self.project = nn.Conv2d(NUM_TIMESTAMPS * stem_channels, fused_channels,
                                 kernel_size=1)

    def forward(self, stems: list[torch.Tensor]) -> torch.Tensor:
        return self.project(torch.cat(stems, dim=1))


class YearDeltaEmbedding(nn.Module):
    """Two-layer perceptron from the 3 year gaps to the fused width,
    broadcast over the spatial dimensions."""

    def __init__(self, fused_channels: int):
        super().__init__()
        self.mlp = nn.Sequential(
            nn.Linear(NUM_TIMESTAMPS, fused_channels),
            nn.ReLU(inplace=True),
            nn.Linear(fused_channels, fused_channels),
        )

    def forward(self, delta_t: torch.Tensor, height: int, width: int
                ) -> torch.Tensor:
        emb = self.mlp(delta_t)
        return emb[:, :, None, None].expand(-1, -1, height, width)


class UNet(nn.Module):
    """Plain U-Net: double-conv stages, max-pool down, bilinear up with
    skip concatenation."""

    def __init__(self, channels: int, base: int, depth: int):
        super().__init__()
        self.depth = depth
        widths = [base * (2 ** i) for i in range(depth + 1)]
        self.input_stage = nn.Sequential(_conv_bn_relu(channels, base),
                                         _conv_bn_relu(base, base))
        self.down_stages = nn.ModuleList(
            nn.Sequential(_conv_bn_relu(widths[i], widths[i + 1]),
                          _conv_bn_relu(widths[i + 1], widths[i + 1]))
            for i in range(depth))
        self.pool = nn.MaxPool2d(2)
        self.up_stages = nn.ModuleList(
            nn.Sequential(_conv_bn_relu(widths[i + 1] + widths[i], widths[i]),
                          _conv_bn_relu(widths[i], widths[i]))
            for i in reversed(range(depth)))
        self.out_channels = base

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = [self.input_stage(x)]
        for stage in self.down_stages:
            skips.append(stage(self.pool(skips[-1])))
        x = skips.pop()
        for stage in self.up_stages:
            skip = skips.pop()
            x = nn.functional.interpolate(x, size=skip.shape[-2:],
                                          mode="bilinear", align_corners=False)
            x = stage(torch.cat([x, skip], dim=1))
        return x


class PredictionHead(nn.Module):
    """1x1 projection to a single channel, rectified so heights are >= 0."""

    def __init__(self, in_ch: int):
        super().__init__()
        self.project = nn.Conv2d(in_ch, 1, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.relu(self.project(x))


class CanopyHeightNet(nn.Module):
    """stems -> fusion -> year-gap embedding -> projector -> U-Net -> head."""

    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = config
        in_ch = len(config.band_mask)
        self.stems = nn.ModuleList(
            StemEncoder(in_ch, config.stem_channels)
            for _ in range(NUM_TIMESTAMPS))
        self.fusion = FusionBlock(config.stem_channels, config.fused_channels)
        self.year_delta = YearDeltaEmbedding(config.fused_channels)
        projector_in = config.fused_channels * (
            2 if config.time_fusion == "concat" else 1)
        self.projector = _conv_bn_relu(projector_in, config.fused_channels)
        self.unet = UNet(config.fused_channels, config.unet_base,
                         config.unet_depth)
        self.head = PredictionHead(self.unet.out_channels)

    def forward(self, images: torch.Tensor, delta_t: torch.Tensor
                ) -> torch.Tensor:
        """images: (B, 3, 5, H, W) uint8-scaled floats; delta_t: (B, 3) years.
        Returns (B, 1, H, W), nonnegative."""
        if images.dim() != 5 or images.shape[1] != NUM_TIMESTAMPS \
                or images.shape[2] != IN_CHANNELS:
            raise ShapeError(f"expected (B, 3, 5, H, W) inputs, got "
                             f"{tuple(images.shape)}")
        if delta_t.dim() != 2 or delta_t.shape[1] != NUM_TIMESTAMPS:
            raise ShapeError(f"expected (B, 3) year gaps, got "
                             f"{tuple(delta_t.shape)}")
        bands = list(self.config.band_mask)
        stems = [stem(images[:, i, bands]) for i, stem in enumerate(self.stems)]
        fused = self.fusion(stems)
        gaps = self.year_delta(delta_t, fused.shape[-2], fused.shape[-1])
        if self.config.time_fusion == "add":
            mixed = fused + gaps
        else:
            mixed = torch.cat([fused, gaps], dim=1)
        return self.head(self.unet(self.projector(mixed)))
