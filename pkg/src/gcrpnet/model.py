"""GCRPNet: VSS encoder, DS-HGAM skip enhancement, LEVSS decoder, four saliency heads."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from . import functional as F
from .blocks import DSHGAM, LEVSSBlock, VSSBlock
from .nn import Conv2d, ConvNormAct, LayerNorm, Module
from .tensor import Tensor, concat

STAGE_SCALES = (Fraction(1, 2), Fraction(1, 4), Fraction(1, 8), Fraction(1, 16))
MAX_GRAPH_SIDE = 24


@dataclass
class ModelConfig:
    """Architecture hyper-parameters.

    ``input_size`` must be divisible by 16 for the stage pyramid and such that
    every decoder stage is divisible by its LESS2D grid; multiples of 128
    always work, and so do the small 32/64 toy sizes.
    """

    base_channels: int = 32
    enc_depths: tuple[int, ...] = (2, 2, 4, 2)
    dec_depths: tuple[int, ...] = (2, 2, 2, 2)
    d_state: int = 8
    expand: int = 2
    gat_connectivity: int = 8
    rgca_strides: tuple[int, ...] | None = None
    input_size: int = 384
    use_dshgam: bool = True
    use_mcaem: bool = True
    use_less2d: bool = True
    share_scan_params: bool = False
    scan_method: str = "sequential"
    ca_reduction: int = 4
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        self.enc_depths = tuple(int(d) for d in self.enc_depths)
        self.dec_depths = tuple(int(d) for d in self.dec_depths)
        if self.rgca_strides is not None:
            self.rgca_strides = tuple(int(s) for s in self.rgca_strides)
        if self.base_channels < 2 or self.base_channels % 2:
            raise ValueError(f"base_channels must be an even number >= 2, got {self.base_channels}")
        if len(self.enc_depths) != 4 or len(self.dec_depths) != 4:
            raise ValueError("encoder and decoder need four stage depths each")
        if self.input_size % 16:
            raise ValueError(f"input_size must be divisible by 16, got {self.input_size}")
        for scale, grid in zip(STAGE_SCALES, (8, 4, 2, 1)):
            side = int(self.input_size * scale)
            if side % grid:
                raise ValueError(f"input_size {self.input_size}: stage side {side} not divisible by grid {grid}")

    @property
    def channels(self) -> tuple[int, ...]:
        c = self.base_channels
        return (c, 2 * c, 4 * c, 8 * c)

    @property
    def stage_sizes(self) -> tuple[int, ...]:
        return tuple(int(self.input_size * s) for s in STAGE_SCALES)

    @property
    def strides(self) -> tuple[int, ...]:
        """RGCA downsampling stride per level (smallest power of two giving a node grid <= 24 per side)."""
        if self.rgca_strides is not None:
            return self.rgca_strides
        out = []
        for side in self.stage_sizes:
            s = 1
            while side // s > MAX_GRAPH_SIDE and side % (2 * s) == 0:
                s *= 2
            out.append(s)
        return tuple(out)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif v is None:
                v = "auto"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise KeyError(f"unknown model config key {key!r}")
            kwargs[key] = _coerce(known[key], raw)
        return cls(**kwargs)

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        values = {}
        for line in text.splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                k, _, v = line.partition("=")
                values[k.strip()] = v.strip()
        return cls.from_dict(values)

    def digest(self) -> bytes:
        """32-byte fingerprint of everything that shapes the parameter set."""
        return hashlib.sha256(self.to_text().encode()).digest()

    @classmethod
    def micro(cls, **overrides) -> "ModelConfig":
        """Smallest useful config; used by the convergence and gradient checks."""
        base = dict(base_channels=16, enc_depths=(1, 1, 1, 1), dec_depths=(1, 1, 1, 1), d_state=4,
                    input_size=64)
        base.update(overrides)
        return cls(**base)


def _coerce(f: dataclasses.Field, raw):
    if not isinstance(raw, str):
        return raw
    name = f.name
    if name in ("enc_depths", "dec_depths"):
        return tuple(int(x) for x in raw.split(","))
    if name == "rgca_strides":
        return None if raw in ("auto", "None", "") else tuple(int(x) for x in raw.split(","))
    if name.startswith("use_") or name == "share_scan_params":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if name in ("scan_method", "dtype"):
        return raw
    return int(raw)


class SaliencyOutputs(NamedTuple):
    """Sigmoid saliency maps at input resolution; ``p1`` is the final prediction."""

    p1: Tensor
    p2: Tensor
    p3: Tensor
    p4: Tensor


class PatchEmbed(Module):
    """Two stride-1 3x3 conv/norm/SiLU layers: 3 -> C/2 -> C/2."""

    def __init__(self, out_channels: int, rng: np.random.Generator, dtype=np.float32):
        self.conv1 = ConvNormAct(3, out_channels, 3, rng, dtype=dtype)
        self.conv2 = ConvNormAct(out_channels, out_channels, 3, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (N, 3, H, W) images, got {x.shape}")
        return self.conv2(self.conv1(x))


class EncoderStage(Module):
    """2x2 stride-2 conv + channel norm, then stacked VSS blocks."""

    def __init__(self, c_in: int, c_out: int, depth: int, cfg: ModelConfig, rng: np.random.Generator):
        dt = cfg.np_dtype
        self.down = Conv2d(c_in, c_out, 2, rng, stride=2, padding=0, dtype=dt)
        self.norm = LayerNorm(c_out, axis=1, dtype=dt)
        self.blocks = [VSSBlock(c_out, rng, cfg.d_state, cfg.expand, cfg.share_scan_params,
                                cfg.scan_method, dt) for _ in range(depth)]

    def forward(self, x: Tensor) -> Tensor:
        x = F.nchw_to_nhwc(self.norm(self.down(x)))
        for blk in self.blocks:
            x = blk(x)
        return F.nhwc_to_nchw(x)


class DecoderStage(Module):
    """Optional upsample/concat/1x1 fuse, stacked LEVSS blocks, and a saliency head."""

    def __init__(self, level: int, cfg: ModelConfig, rng: np.random.Generator):
        dt = cfg.np_dtype
        ch = cfg.channels
        c = ch[level]
        self.level = level
        self.fuse = Conv2d(c + ch[level + 1], c, 1, rng, dtype=dt) if level < 3 else None
        self.blocks = [LEVSSBlock(c, STAGE_SCALES[level], rng, cfg.d_state, cfg.expand, cfg.use_mcaem,
                                  cfg.use_less2d, cfg.share_scan_params, cfg.scan_method,
                                  cfg.ca_reduction, dt) for _ in range(cfg.dec_depths[level])]
        self.head = Conv2d(c, 1, 1, rng, dtype=dt)

    def forward(self, skip: Tensor, prev: Tensor | None) -> Tensor:
        x = skip
        if self.fuse is not None:
            h, w = skip.shape[2:]
            x = self.fuse(concat([F.resize(prev, h, w, "bilinear"), skip], axis=1))
        x = F.nchw_to_nhwc(x)
        for blk in self.blocks:
            x = blk(x)
        return F.nhwc_to_nchw(x)

    def head_map(self, x: Tensor) -> Tensor:
        """Saliency at this stage's own resolution."""
        return F.sigmoid(self.head(x))

    def predict(self, x: Tensor, size: int) -> Tensor:
        return F.resize(self.head_map(x), size, size, "bilinear")


class GCRPNet(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        dt = cfg.np_dtype
        ch = cfg.channels
        self.patch_embed = PatchEmbed(ch[0] // 2, rng, dt)
        c_in = [ch[0] // 2, ch[0], ch[1], ch[2]]
        self.encoder = [EncoderStage(c_in[i], ch[i], cfg.enc_depths[i], cfg, rng) for i in range(4)]
        self.dshgam = (DSHGAM(ch, cfg.strides, rng, cfg.gat_connectivity, cfg.ca_reduction, dt)
                       if cfg.use_dshgam else None)
        self.decoder = [DecoderStage(i, cfg, rng) for i in range(4)]

    def encode(self, images: Tensor) -> list[Tensor]:
        x = self.patch_embed(images)
        feats = []
        for stage in self.encoder:
            x = stage(x)
            feats.append(x)
        return feats

    def skip_features(self, feats: list[Tensor]) -> list[Tensor]:
        return self.dshgam(feats) if self.dshgam is not None else list(feats)

    def decode_native(self, skips: list[Tensor]) -> SaliencyOutputs:
        """Head maps at stage resolution (1/2, 1/4, 1/8, 1/16 of the input)."""
        preds = [None] * 4
        prev = None
        for level in (3, 2, 1, 0):
            stage = self.decoder[level]
            prev = stage(skips[level], prev)
            preds[level] = stage.head_map(prev)
        return SaliencyOutputs(*preds)

    def decode(self, skips: list[Tensor], size: int) -> SaliencyOutputs:
        return SaliencyOutputs(*(F.resize(p, size, size, "bilinear") for p in self.decode_native(skips)))

    def _check_input(self, images: Tensor) -> int:
        size = images.shape[-1]
        if images.shape[-2] != size or size % 16:
            raise ValueError(f"expected square input divisible by 16, got {images.shape[-2:]}")
        return size

    def multiscale(self, images: Tensor) -> SaliencyOutputs:
        """Like ``forward`` but without the final upsampling of each head."""
        self._check_input(images)
        return self.decode_native(self.skip_features(self.encode(images)))

    def forward(self, images: Tensor) -> SaliencyOutputs:
        size = self._check_input(images)
        return self.decode(self.skip_features(self.encode(images)), size)
