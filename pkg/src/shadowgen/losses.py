"""Training losses and their unit-weight sum."""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ShapeMismatch
from .geometry import ciou_loss_batch, crop_resize_batch

REC_NORMS = ("full", "region")


@dataclass
class LossBreakdown:
    l_reg: torch.Tensor
    l_shape: torch.Tensor
    l_mask: torch.Tensor
    l_rec: torch.Tensor
    l_total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("l_reg", "l_shape", "l_mask", "l_rec", "l_total")}


def _same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what}: {tuple(a.shape)} vs {tuple(b.shape)}")


def loss_reg(pred_box: torch.Tensor, gt_box: torch.Tensor) -> torch.Tensor:
    """Mean CIoU loss between predicted and target shadow boxes (``[..., 4]``)."""
    return ciou_loss_batch(pred_box, gt_box).mean()


def loss_shape(pred_shape: torch.Tensor, gt_shape: torch.Tensor) -> torch.Tensor:
    _same_shape(pred_shape, gt_shape, "shape masks")
    return (pred_shape - gt_shape).abs().mean()


def loss_mask(pred_mask: torch.Tensor, gt_mask: torch.Tensor) -> torch.Tensor:
    _same_shape(pred_mask, gt_mask, "masks")
    return (pred_mask - gt_mask).abs().mean()


def loss_rec(pred_img: torch.Tensor, gt_img: torch.Tensor, m_fs: torch.Tensor, norm: str = "full") -> torch.Tensor:
    """Shadow-MSE: squared error of both images masked by the target shadow.

    ``norm="full"`` averages over every pixel and channel; ``"region"`` divides
    by the number of masked pixel-channels instead.
    """
    _same_shape(pred_img, gt_img, "images")
    if m_fs.shape[-2:] != pred_img.shape[-2:]:
        raise ShapeMismatch("mask and image resolutions differ")
    sq = ((pred_img * m_fs - gt_img * m_fs) ** 2)
    if norm == "full":
        return sq.mean()
    if norm == "region":
        denom = (m_fs.expand_as(sq)).sum().clamp(min=1.0)
        return sq.sum() / denom
    raise ValueError(f"rec norm must be one of {REC_NORMS}")


def target_shape(m_fs: torch.Tensor, gt_box: torch.Tensor, size: int) -> torch.Tensor:
    """Ground-truth shape mask: the target shadow cropped by its own box."""
    return crop_resize_batch(m_fs, gt_box, size)


def loss_total(l_reg, l_shape, l_mask, l_rec) -> LossBreakdown:
    return LossBreakdown(l_reg, l_shape, l_mask, l_rec, l_reg + l_shape + l_mask + l_rec)


def compute_losses(out, batch: dict, rec_norm: str = "full") -> LossBreakdown:
    """All four losses for a forward pass ``out`` against a training ``batch``."""
    gt_box = batch["B_s"].to(out.box.dtype)
    shape_t = target_shape(batch["m_fs"], gt_box, out.shape.shape[-1])
    return loss_total(
        loss_reg(out.box, gt_box),
        loss_shape(out.shape, shape_t),
        loss_mask(out.refined, batch["m_fs"]),
        loss_rec(out.image, batch["gt"], batch["m_fs"], rec_norm),
    )
