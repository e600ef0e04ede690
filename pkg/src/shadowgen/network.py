"""Two-stage shadow generator: decomposed mask prediction and attentive filling.

Stage one encodes the composite and its masks into a bottleneck map, predicts
the regression from the foreground-object box to the shadow box and a
fixed-size shadow shape, pastes the shape into the decoded box to get a rough
mask and refines it with an upsampling decoder. Stage two encodes the same
input into a full-resolution feature map, attends from the predicted shadow
region to the background shadow pixels to pick a target shadow colour and
scales the composite inside the predicted mask to match it.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import torch
import torch.nn.functional as F
from torch import nn

from .errors import EmptyForeground, SchemaMismatch, ShapeMismatch
from .geometry import boxes_from_masks, decode_boxes, place_inverse_batch

CHECKPOINT_SCHEMA_VERSION = 1
FILL_MODES = ("attention", "linear_nobias", "linear_bias")


@dataclass
class NetworkConfig:
    resolution: int = 256
    width_mult: float = 1.0
    shape_size: int = 32
    attn_dim: int = 32
    fs_channels: int = 32
    # ResNet-34 layout: stem width, four stage widths and block counts
    stem_width: int = 32
    encoder_widths: tuple[int, ...] = (32, 64, 128, 256)
    encoder_blocks: tuple[int, ...] = (3, 4, 6, 3)
    filling_widths: tuple[int, ...] = (16, 32, 64, 128)
    bottleneck: int = 256
    box_widths: tuple[int, ...] = (256, 512, 512)
    shape_widths: tuple[int, ...] = (128, 64, 32, 32)
    refine_widths: tuple[int, ...] = (128, 64, 32, 32)
    refine: bool = True
    fill_mode: str = "attention"
    literal_mean: bool = False
    fallback_scale: float = 0.5
    scale_clip: tuple[float, float] = (0.05, 1.0)
    init_seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                setattr(self, f.name, tuple(v))
        if self.resolution % 16 != 0 or self.resolution <= 0:
            raise ValueError("resolution must be a positive multiple of 16")
        if self.width_mult <= 0 or self.shape_size <= 0 or self.attn_dim <= 0 or self.fs_channels <= 0:
            raise ValueError("sizes must be positive")
        if self.fill_mode not in FILL_MODES:
            raise ValueError(f"fill_mode must be one of {FILL_MODES}")
        if len(self.encoder_widths) != 4 or len(self.encoder_blocks) != 4 or len(self.filling_widths) != 4:
            raise ValueError("encoders have exactly four stages")
        if len(self.refine_widths) != 4:
            raise ValueError("refinement decoder has four up+conv blocks")

    def ch(self, c: int) -> int:
        return max(1, int(round(c * self.width_mult)))

    def to_dict(self) -> dict:
        return asdict(self)


def desk_config(resolution: int = 128, **overrides) -> NetworkConfig:
    """Small configuration used for CPU experiments."""
    kw = dict(resolution=resolution, width_mult=0.25, fs_channels=16, attn_dim=16)
    kw.update(overrides)
    return NetworkConfig(**kw)


# ---------------------------------------------------------------- building blocks

def conv_in_relu(cin: int, cout: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride, 1, bias=False),
        nn.InstanceNorm2d(cout, affine=True),
        nn.ReLU(inplace=True),
    )


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.norm1 = nn.InstanceNorm2d(cout, affine=True)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.norm2 = nn.InstanceNorm2d(cout, affine=True)
        self.down = None
        if stride != 1 or cin != cout:
            self.down = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.InstanceNorm2d(cout, affine=True))

    def forward(self, x):
        idt = x if self.down is None else self.down(x)
        out = F.relu(self.norm1(self.conv1(x)), inplace=True)
        out = self.norm2(self.conv2(out))
        return F.relu(out + idt, inplace=True)


class ResNetEncoder(nn.Module):
    """ResNet-34 style encoder with a two-conv 3x3 stem; returns the four stage outputs.

    Strides are (4, 8, 16, 16): the last stage keeps the 1/16 resolution.
    """

    def __init__(self, in_ch: int, stem: int, widths, blocks):
        super().__init__()
        self.stem = nn.Sequential(conv_in_relu(in_ch, stem, 2), conv_in_relu(stem, stem), nn.MaxPool2d(3, 2, 1))
        stages = []
        cin = stem
        for i, (w, n) in enumerate(zip(widths, blocks)):
            stride = 2 if i in (1, 2) else 1
            layers = [BasicBlock(cin, w, stride)] + [BasicBlock(w, w) for _ in range(n - 1)]
            stages.append(nn.Sequential(*layers))
            cin = w
        self.stages = nn.ModuleList(stages)
        self.out_channels = list(widths)

    def forward(self, x):
        feats = []
        x = self.stem(x)
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class ContextEncoder(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        widths = [cfg.ch(w) for w in cfg.encoder_widths]
        self.backbone = ResNetEncoder(6, cfg.ch(cfg.stem_width), widths, cfg.encoder_blocks)
        self.reduce = nn.Sequential(
            nn.Conv2d(widths[-1], cfg.ch(cfg.bottleneck), 1, bias=False),
            nn.InstanceNorm2d(cfg.ch(cfg.bottleneck), affine=True),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.reduce(self.backbone(x)[-1])


class BoxHead(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        c = cfg.ch(cfg.bottleneck)
        w = [cfg.ch(v) for v in cfg.box_widths]
        self.convs = nn.Sequential(conv_in_relu(c, w[0]), conv_in_relu(w[0], w[1]), conv_in_relu(w[1], w[2]))
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(w[2], 4)
        # start from the identity regression: predicted shadow box = object box
        nn.init.zeros_(self.fc.weight)
        nn.init.zeros_(self.fc.bias)

    def forward(self, fe):
        return self.fc(self.pool(self.convs(fe)).flatten(1))


def tanh_to_unit(t: torch.Tensor) -> torch.Tensor:
    return (t + 1) / 2


class ShapeHead(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.size = cfg.shape_size
        cin = cfg.ch(cfg.bottleneck)
        layers = []
        for w in cfg.shape_widths:
            layers.append(conv_in_relu(cin, cfg.ch(w)))
            cin = cfg.ch(w)
        self.convs = nn.Sequential(*layers)
        self.out = nn.Conv2d(cin, 1, 3, 1, 1)

    def forward(self, fe):
        x = F.interpolate(fe, size=(self.size, self.size), mode="bilinear", align_corners=False)
        return tanh_to_unit(torch.tanh(self.out(self.convs(x))))


class RefineDecoder(nn.Module):
    """Four up+conv blocks; the last one fuses the rough and object masks."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        cin = cfg.ch(cfg.bottleneck)
        w = [cfg.ch(v) for v in cfg.refine_widths]
        blocks = []
        for cout in w[:3]:
            blocks.append(nn.Sequential(conv_in_relu(cin, cout), conv_in_relu(cout, cout)))
            cin = cout
        self.blocks = nn.ModuleList(blocks)
        self.fuse = conv_in_relu(cin + 2, w[3])
        self.out = nn.Conv2d(w[3], 1, 3, 1, 1)

    def decode(self, fe):
        """Upsampled feature map (after the last block's upsample)."""
        x = fe
        for block in self.blocks:
            x = block(F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False))
        return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)

    def forward(self, fe, rough, m_fo):
        ft = self.decode(fe)
        if ft.shape[-2:] != rough.shape[-2:]:
            raise ShapeMismatch(f"decoder output {tuple(ft.shape[-2:])} vs mask {tuple(rough.shape[-2:])}")
        x = self.fuse(torch.cat([ft, rough, m_fo], dim=1))
        return tanh_to_unit(torch.tanh(self.out(x)))


class FillingEncoder(nn.Module):
    """Multi-scale features projected to a common width, upsampled and fused."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        widths = [cfg.ch(w) for w in cfg.filling_widths]
        self.backbone = ResNetEncoder(6, cfg.ch(cfg.stem_width // 2), widths, cfg.encoder_blocks)
        self.proj = nn.ModuleList(nn.Conv2d(w, cfg.fs_channels, 1) for w in widths)
        self.fuse = nn.Conv2d(4 * cfg.fs_channels, cfg.fs_channels, 3, 1, 1)

    def forward(self, x):
        size = x.shape[-2:]
        # 1x1 conv and bilinear upsampling commute; project first to upsample fewer channels
        feats = [
            F.interpolate(p(f), size=size, mode="bilinear", align_corners=False)
            for p, f in zip(self.proj, self.backbone(x))
        ]
        return self.fuse(torch.cat(feats, dim=1))


# ---------------------------------------------------------------- attentive filling

@dataclass
class FillOutputs:
    image: torch.Tensor  # N x 3 x H x W
    attention: torch.Tensor  # N x H x W, zero outside background shadow
    p_bs: torch.Tensor  # N x 3
    p_fs: torch.Tensor  # N x 3
    scale: torch.Tensor  # N x 3
    dark: torch.Tensor  # N x 3 x H x W
    fallback_used: torch.Tensor  # N bool


def attentive_fill(
    fs: torch.Tensor,
    mask: torch.Tensor,
    m_bs: torch.Tensor,
    comp: torch.Tensor,
    phi: nn.Module,
    *,
    literal_mean: bool = False,
    fallback_scale: float = 0.5,
    scale_clip: tuple[float, float] = (0.05, 1.0),
    eps: float = 1e-4,
) -> FillOutputs:
    """Fill the soft ``mask`` region of ``comp`` with an attention-picked shadow colour.

    ``fs`` is N x C x H x W, ``mask`` and ``m_bs`` are N x 1 x H x W, ``comp``
    is N x 3 x H x W and ``phi`` maps C-vectors to the attention space.
    """
    if not (fs.shape[-2:] == mask.shape[-2:] == m_bs.shape[-2:] == comp.shape[-2:]):
        raise ShapeMismatch("features, masks and image must share a resolution")
    weight = mask[:, 0]
    mass = weight.sum(dim=(1, 2))
    if (mass < eps).any():
        raise EmptyForeground(f"predicted shadow mask mass {mass.min().item():.3g} < {eps}")

    f_fs = torch.einsum("nhw,nchw->nc", weight, fs) / mass[:, None]
    q = phi(f_fs)  # N x D
    keys = phi(fs.permute(0, 2, 3, 1))  # N x H x W x D
    logits = torch.einsum("nd,nhwd->nhw", q, keys)

    bs = m_bs[:, 0] > 0.5
    n_bs = bs.sum(dim=(1, 2))
    has_bs = n_bs > 0
    # rows without reference pixels get a dummy all-pixel softmax that is discarded below
    valid = bs | ~has_bs[:, None, None]
    attn = torch.softmax(logits.masked_fill(~valid, float("-inf")).flatten(1), dim=1).view_as(logits)
    attn = attn * has_bs[:, None, None].to(attn.dtype)

    p_bs = torch.einsum("nhw,nchw->nc", attn, comp)
    if literal_mean:
        p_bs = p_bs / n_bs.clamp(min=1)[:, None].to(p_bs.dtype)
    p_fs = torch.einsum("nhw,nchw->nc", weight, comp) / mass[:, None]

    scale = (p_bs / p_fs.clamp(min=eps)).clamp(*scale_clip)
    scale = torch.where(has_bs[:, None], scale, torch.full_like(scale, fallback_scale))
    dark = (scale[:, :, None, None] * comp).clamp(0, 1)
    image = mask * dark + (1 - mask) * comp
    return FillOutputs(image, attn, p_bs, p_fs, scale, dark, ~has_bs)


# ---------------------------------------------------------------- full network

@dataclass
class ForwardOutputs:
    reg: torch.Tensor  # N x 4, predicted box regression
    box: torch.Tensor  # N x 4, decoded shadow box
    obj_box: torch.Tensor  # N x 4, foreground-object box
    shape: torch.Tensor  # N x 1 x S x S
    rough: torch.Tensor  # N x 1 x H x W
    refined: torch.Tensor  # N x 1 x H x W
    fill: FillOutputs = field(repr=False)

    @property
    def image(self) -> torch.Tensor:
        return self.fill.image


class ShadowNet(nn.Module):
    def __init__(self, cfg: NetworkConfig | None = None):
        super().__init__()
        cfg = cfg or NetworkConfig()
        if cfg.fill_mode != "attention":
            raise NotImplementedError(f"fill mode {cfg.fill_mode!r} is documented but not built")
        self.cfg = cfg
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.init_seed)
            self.context_encoder = ContextEncoder(cfg)
            self.box_head = BoxHead(cfg)
            self.shape_head = ShapeHead(cfg)
            self.refiner = RefineDecoder(cfg)
            self.filling_encoder = FillingEncoder(cfg)
            self.phi = nn.Linear(cfg.fs_channels, cfg.attn_dim, bias=False)

    # parameter groups, used for gradient checks and reporting
    def groups(self) -> dict[str, nn.Module]:
        return {
            "context_encoder": self.context_encoder,
            "box_head": self.box_head,
            "shape_head": self.shape_head,
            "refiner": self.refiner,
            "filling_encoder": self.filling_encoder,
            "phi": self.phi,
        }

    def _check(self, *tensors):
        R = self.cfg.resolution
        for t in tensors:
            if t.dim() != 4 or t.shape[-2:] != (R, R):
                raise ShapeMismatch(f"expected N x C x {R} x {R}, got {tuple(t.shape)}")

    @staticmethod
    def stack_inputs(comp, m_fo, m_bo, m_bs) -> torch.Tensor:
        return torch.cat([comp, m_bs, m_bo, m_fo], dim=1)

    def encode_context(self, x):
        return self.context_encoder(x)

    def encode_filling(self, x):
        return self.filling_encoder(x)

    def assemble_rough_mask(self, shape, reg, obj_box, canvas):
        box = decode_boxes(obj_box, reg)
        return box, place_inverse_batch(shape, box, canvas)

    def forward(self, comp, m_fo, m_bo, m_bs, refine: bool | None = None) -> ForwardOutputs:
        self._check(comp, m_fo, m_bo, m_bs)
        refine = self.cfg.refine if refine is None else refine
        x = self.stack_inputs(comp, m_fo, m_bo, m_bs)
        fe = self.encode_context(x)
        reg = self.box_head(fe)
        shape = self.shape_head(fe)
        obj_box = boxes_from_masks(m_fo).to(comp.dtype)
        box, rough = self.assemble_rough_mask(shape, reg, obj_box, comp.shape[-2:])
        refined = self.refiner(fe, rough, m_fo) if refine else rough
        fill = attentive_fill(
            self.encode_filling(x),
            refined,
            m_bs,
            comp,
            self.phi,
            literal_mean=self.cfg.literal_mean,
            fallback_scale=self.cfg.fallback_scale,
            scale_clip=self.cfg.scale_clip,
        )
        return ForwardOutputs(reg, box, obj_box, shape, rough, refined, fill)


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters() if p.requires_grad)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, net: ShadowNet, optimizer=None, step: int = 0, extra: dict | None = None) -> None:
    torch.save(
        {
            "schema_version": CHECKPOINT_SCHEMA_VERSION,
            "network_config": net.cfg.to_dict(),
            "state_dict": net.state_dict(),
            "optimizer": optimizer.state_dict() if optimizer is not None else None,
            "step": step,
            "extra": extra or {},
        },
        path,
    )


def load_checkpoint(path) -> dict:
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(ckpt, dict) or ckpt.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        found = ckpt.get("schema_version") if isinstance(ckpt, dict) else None
        raise SchemaMismatch(f"{path}: checkpoint schema {found} != {CHECKPOINT_SCHEMA_VERSION}")
    return ckpt


def network_from_checkpoint(ckpt: dict, **overrides) -> ShadowNet:
    cfg = NetworkConfig(**{**ckpt["network_config"], **overrides})
    net = ShadowNet(cfg)
    net.load_state_dict(ckpt["state_dict"])
    return net


def attention_entropy(attn: torch.Tensor) -> torch.Tensor:
    """Shannon entropy (nats) of each attention map; zero for empty maps."""
    a = attn.flatten(1)
    return (-(a * torch.log(a.clamp(min=1e-30))).sum(dim=1)).clamp(min=0)


def uniform_entropy(n: int) -> float:
    return math.log(n) if n > 0 else 0.0
