"""Box arithmetic: tight boxes from masks, shadow-box regression, CIoU, crop/place.

Boxes are center-size quadruplets ``(x, y, w, h)`` in pixel units. Pixel ``i``
has its center at coordinate ``i`` and spans ``[i - 0.5, i + 0.5]``, so a box
covering columns ``c0..c1`` has ``x = (c0 + c1) / 2`` and ``w = c1 - c0 + 1``.
A pixel belongs to a box when its center lies in ``[x - w/2, x + w/2)``.

Batched tensor variants (suffix ``_batch``) operate on ``[..., 4]`` box tensors
and ``N x C x H x W`` rasters and are differentiable; the scalar variants wrap
them for single boxes and numpy rasters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DegenerateBox, EmptyMask, OutOfFrame

__all__ = [
    "BBox",
    "BoxRegression",
    "bbox_from_mask",
    "boxes_from_masks",
    "encode_regression",
    "decode_regression",
    "encode_boxes",
    "decode_boxes",
    "ciou_loss",
    "ciou_loss_batch",
    "box_iou_batch",
    "crop_resize",
    "crop_resize_batch",
    "place_inverse",
    "place_inverse_batch",
]


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def validate(self) -> "BBox":
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise DegenerateBox(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise DegenerateBox(f"box has non-positive size: w={self.w}, h={self.h}")
        return self

    @property
    def left(self) -> float:
        return self.x - self.w / 2

    @property
    def top(self) -> float:
        return self.y - self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    def to_list(self) -> list[float]:
        return [float(self.x), float(self.y), float(self.w), float(self.h)]

    def as_tensor(self, dtype=torch.float64) -> torch.Tensor:
        return torch.tensor(self.to_list(), dtype=dtype)

    @classmethod
    def from_seq(cls, seq) -> "BBox":
        x, y, w, h = (float(v) for v in seq)
        return cls(x, y, w, h)


class BoxRegression(NamedTuple):
    r_x: float
    r_y: float
    r_w: float
    r_h: float


def _to_numpy_2d(mask) -> np.ndarray:
    if isinstance(mask, torch.Tensor):
        mask = mask.detach().cpu().numpy()
    mask = np.asarray(mask)
    if mask.ndim == 3 and mask.shape[0] == 1:
        mask = mask[0]
    if mask.ndim != 2:
        raise ValueError(f"expected a 2-D mask, got shape {mask.shape}")
    return mask


def bbox_from_mask(mask, threshold: float = 0.5) -> BBox:
    """Tight center-size box around all pixels strictly above ``threshold``."""
    m = _to_numpy_2d(mask) > threshold
    rows = np.flatnonzero(m.any(axis=1))
    cols = np.flatnonzero(m.any(axis=0))
    if rows.size == 0:
        raise EmptyMask("mask has no pixel above threshold")
    r0, r1 = rows[0], rows[-1]
    c0, c1 = cols[0], cols[-1]
    return BBox((c0 + c1) / 2.0, (r0 + r1) / 2.0, float(c1 - c0 + 1), float(r1 - r0 + 1))


def boxes_from_masks(masks: torch.Tensor, threshold: float = 0.5) -> torch.Tensor:
    """Batched :func:`bbox_from_mask` for ``N x 1 x H x W`` (or ``N x H x W``) masks."""
    if masks.dim() == 4:
        masks = masks[:, 0]
    out = torch.empty(masks.shape[0], 4, dtype=masks.dtype if masks.is_floating_point() else torch.float32,
                      device=masks.device)
    with torch.no_grad():
        fg = masks > threshold
        rows = fg.any(dim=2)
        cols = fg.any(dim=1)
        for n in range(masks.shape[0]):
            r = torch.nonzero(rows[n]).flatten()
            c = torch.nonzero(cols[n]).flatten()
            if r.numel() == 0:
                raise EmptyMask(f"mask {n} of batch has no pixel above threshold")
            r0, r1 = r[0].item(), r[-1].item()
            c0, c1 = c[0].item(), c[-1].item()
            out[n] = torch.tensor([(c0 + c1) / 2.0, (r0 + r1) / 2.0, c1 - c0 + 1.0, r1 - r0 + 1.0])
    return out


def _check_sizes(boxes: torch.Tensor, name: str = "box") -> None:
    if not torch.isfinite(boxes).all():
        raise DegenerateBox(f"{name} contains non-finite values")
    if (boxes[..., 2:] <= 0).any():
        raise DegenerateBox(f"{name} has non-positive width or height")


def encode_boxes(obj: torch.Tensor, shadow: torch.Tensor) -> torch.Tensor:
    """Regression quadruplet taking object boxes to shadow boxes."""
    _check_sizes(obj, "object box")
    _check_sizes(shadow, "shadow box")
    xo, yo, wo, ho = obj.unbind(-1)
    xs, ys, ws, hs = shadow.unbind(-1)
    return torch.stack([(xs - xo) / wo, (ys - yo) / ho, torch.log(ws / wo), torch.log(hs / ho)], dim=-1)


def decode_boxes(obj: torch.Tensor, reg: torch.Tensor, min_size: float = 1.0) -> torch.Tensor:
    """Inverse of :func:`encode_boxes`; widths and heights are floored at ``min_size``."""
    xo, yo, wo, ho = obj.unbind(-1)
    rx, ry, rw, rh = reg.unbind(-1)
    w = torch.clamp(wo * torch.exp(rw), min=min_size)
    h = torch.clamp(ho * torch.exp(rh), min=min_size)
    return torch.stack([xo + rx * wo, yo + ry * ho, w, h], dim=-1)


def encode_regression(B_o: BBox, B_s: BBox) -> BoxRegression:
    B_o.validate()
    B_s.validate()
    return BoxRegression(
        (B_s.x - B_o.x) / B_o.w,
        (B_s.y - B_o.y) / B_o.h,
        math.log(B_s.w / B_o.w),
        math.log(B_s.h / B_o.h),
    )


def decode_regression(B_o: BBox, r: BoxRegression, min_size: float = 1.0) -> BBox:
    r_x, r_y, r_w, r_h = r
    return BBox(
        B_o.x + r_x * B_o.w,
        B_o.y + r_y * B_o.h,
        max(B_o.w * math.exp(r_w), min_size),
        max(B_o.h * math.exp(r_h), min_size),
    )


def _corners(b: torch.Tensor):
    x, y, w, h = b.unbind(-1)
    return x - w / 2, y - h / 2, x + w / 2, y + h / 2


def box_iou_batch(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Elementwise IoU of two ``[..., 4]`` center-size box tensors."""
    ax1, ay1, ax2, ay2 = _corners(a)
    bx1, by1, bx2, by2 = _corners(b)
    iw = (torch.minimum(ax2, bx2) - torch.maximum(ax1, bx1)).clamp(min=0)
    ih = (torch.minimum(ay2, by2) - torch.maximum(ay1, by1)).clamp(min=0)
    inter = iw * ih
    union = a[..., 2] * a[..., 3] + b[..., 2] * b[..., 3] - inter
    return inter / union


def ciou_loss_batch(pred: torch.Tensor, gt: torch.Tensor, eps: float = 1e-9) -> torch.Tensor:
    """Complete-IoU loss per box pair; the trade-off weight alpha is not differentiated."""
    _check_sizes(pred, "predicted box")
    _check_sizes(gt, "target box")
    iou = box_iou_batch(pred, gt)

    px1, py1, px2, py2 = _corners(pred)
    gx1, gy1, gx2, gy2 = _corners(gt)
    cw = torch.maximum(px2, gx2) - torch.minimum(px1, gx1)
    ch = torch.maximum(py2, gy2) - torch.minimum(py1, gy1)
    c2 = cw ** 2 + ch ** 2
    rho2 = (pred[..., 0] - gt[..., 0]) ** 2 + (pred[..., 1] - gt[..., 1]) ** 2

    v = (4 / math.pi ** 2) * (torch.atan(gt[..., 2] / gt[..., 3]) - torch.atan(pred[..., 2] / pred[..., 3])) ** 2
    with torch.no_grad():
        alpha = v / ((1 - iou) + v + eps)
    return 1 - iou + rho2 / c2 + alpha * v


def ciou_loss(B_pred: BBox, B_gt: BBox) -> float:
    B_pred.validate()
    B_gt.validate()
    return float(ciou_loss_batch(B_pred.as_tensor(), B_gt.as_tensor()))


def _pixel_to_grid(coord: torch.Tensor, size: int) -> torch.Tensor:
    # pixel-center coordinate -> grid_sample coordinate (align_corners=False)
    return (2 * coord + 1) / size - 1


def crop_resize_batch(x: torch.Tensor, boxes: torch.Tensor, out_size: int = 32) -> torch.Tensor:
    """Bilinear crop of each box from ``x`` (N x C x H x W) to ``out_size`` x ``out_size``.

    Samples falling outside the raster are zero; samples inside the outer half
    pixel of the raster take the edge value.
    """
    if out_size < 1:
        raise ValueError("out_size must be >= 1")
    n, _, H, W = x.shape
    _check_sizes(boxes)
    bx, by, bw, bh = (t[:, None] for t in boxes.to(x.dtype).unbind(-1))
    lo_x, hi_x = bx - bw / 2, bx + bw / 2
    lo_y, hi_y = by - bh / 2, by + bh / 2
    if ((lo_x >= W - 0.5) | (hi_x <= -0.5) | (lo_y >= H - 0.5) | (hi_y <= -0.5)).any():
        raise OutOfFrame("box does not intersect the raster")

    steps = (torch.arange(out_size, dtype=x.dtype, device=x.device) + 0.5) / out_size
    px = lo_x + steps[None] * bw  # N x S
    py = lo_y + steps[None] * bh
    grid = torch.stack(
        [
            _pixel_to_grid(px, W)[:, None, :].expand(n, out_size, out_size),
            _pixel_to_grid(py, H)[:, :, None].expand(n, out_size, out_size),
        ],
        dim=-1,
    )
    out = F.grid_sample(x, grid, mode="bilinear", padding_mode="border", align_corners=False)
    valid_x = (px >= -0.5) & (px <= W - 0.5)
    valid_y = (py >= -0.5) & (py <= H - 0.5)
    valid = (valid_y[:, :, None] & valid_x[:, None, :]).to(x.dtype)
    return out * valid[:, None]


def place_inverse_batch(patch: torch.Tensor, boxes: torch.Tensor, canvas: tuple[int, int]) -> torch.Tensor:
    """Resize each ``patch`` into its box on an ``H x W`` canvas, zeros elsewhere."""
    H, W = canvas
    n, _, S_h, S_w = patch.shape
    _check_sizes(boxes)
    bx, by, bw, bh = (t[:, None] for t in boxes.to(patch.dtype).unbind(-1))
    lo_x, lo_y = bx - bw / 2, by - bh / 2
    cols = torch.arange(W, dtype=patch.dtype, device=patch.device)[None]
    rows = torch.arange(H, dtype=patch.dtype, device=patch.device)[None]
    gu = 2 * (cols - lo_x) / bw - 1  # N x W
    gv = 2 * (rows - lo_y) / bh - 1  # N x H
    grid = torch.stack([gu[:, None, :].expand(n, H, W), gv[:, :, None].expand(n, H, W)], dim=-1)
    out = F.grid_sample(patch, grid, mode="bilinear", padding_mode="border", align_corners=False)
    inside_x = (cols >= lo_x) & (cols < lo_x + bw)
    inside_y = (rows >= lo_y) & (rows < lo_y + bh)
    inside = (inside_y[:, :, None] & inside_x[:, None, :]).to(patch.dtype)
    return out * inside[:, None]


def _as_nchw(img) -> tuple[torch.Tensor, bool, int]:
    is_np = not isinstance(img, torch.Tensor)
    t = torch.as_tensor(np.asarray(img, dtype=np.float64)) if is_np else img
    ndim = t.dim()
    if ndim == 2:
        t = t[None, None]
    elif ndim == 3:
        t = t[None]
    else:
        raise ValueError(f"expected 2-D or 3-D raster, got shape {tuple(t.shape)}")
    return t, is_np, ndim


def _restore(t: torch.Tensor, is_np: bool, ndim: int):
    t = t[0, 0] if ndim == 2 else t[0]
    return t.numpy() if is_np else t


def crop_resize(img_or_mask, B: BBox, out_size: int = 32):
    """Crop ``B`` from an ``H x W`` (or ``C x H x W``) raster and resize bilinearly."""
    t, is_np, ndim = _as_nchw(img_or_mask)
    B.validate()
    out = crop_resize_batch(t, B.as_tensor(t.dtype)[None], out_size)
    return _restore(out, is_np, ndim)


def place_inverse(patch, B: BBox, canvas: tuple[int, int]):
    """Place ``patch`` resized to ``B`` on a zero canvas of shape ``canvas``."""
    t, is_np, ndim = _as_nchw(patch)
    B.validate()
    out = place_inverse_batch(t, B.as_tensor(t.dtype)[None], canvas)
    return _restore(out, is_np, ndim)
