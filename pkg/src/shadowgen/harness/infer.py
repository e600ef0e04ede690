"""Inference on composites, one network pass per inserted foreground object."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image

from ..errors import ShapeMismatch
from ..network import ShadowNet, attention_entropy, uniform_entropy
from ..synthdata import quantize


@dataclass
class PassDiagnostics:
    box: list[float]
    scale: list[float]
    fallback_used: bool
    attention_entropy: float
    uniform_entropy: float
    reference_pixels: int


@dataclass
class InferResult:
    image: np.ndarray  # H x W x 3 after all passes
    masks: list[np.ndarray] = field(default_factory=list)  # refined mask per pass
    diagnostics: list[PassDiagnostics] = field(default_factory=list)


def _as_tensor_img(a: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(np.asarray(a, np.float32).transpose(2, 0, 1)))[None]


def _as_tensor_mask(a: np.ndarray) -> torch.Tensor:
    return torch.from_numpy((np.asarray(a) > 0.5).astype(np.float32))[None, None]


@torch.no_grad()
def infer(net: ShadowNet, comp: np.ndarray, m_fos: Sequence[np.ndarray], m_bo: np.ndarray | None = None,
          m_bs: np.ndarray | None = None, refine: bool | None = None) -> InferResult:
    """Generate shadows for each foreground mask in ``m_fos`` in turn.

    After each pass the generated image becomes the next composite, the
    finished object joins the background objects and its binarized predicted
    shadow joins the background shadows, so later passes can attend to it.
    """
    R = net.cfg.resolution
    comp = np.asarray(comp, np.float32)
    if comp.shape != (R, R, 3):
        raise ShapeMismatch(f"composite is {comp.shape}, network expects {(R, R, 3)}")
    if not m_fos:
        raise ValueError("at least one foreground mask is required")
    zeros = np.zeros((R, R), np.float32)
    m_bo = zeros if m_bo is None else np.asarray(m_bo, np.float32)
    m_bs = zeros if m_bs is None else np.asarray(m_bs, np.float32)
    for m in (m_bo, m_bs, *m_fos):
        if np.asarray(m).shape != (R, R):
            raise ShapeMismatch(f"mask is {np.asarray(m).shape}, network expects {(R, R)}")

    net.eval()
    cur = _as_tensor_img(comp)
    bo, bs = _as_tensor_mask(m_bo), _as_tensor_mask(m_bs)
    result = InferResult(image=comp)
    for m_fo in m_fos:
        fo = _as_tensor_mask(m_fo)
        out = net(cur, fo, bo, bs, refine=refine)
        n_ref = int((bs > 0.5).sum())
        result.masks.append(out.refined[0, 0].numpy().astype(np.float64))
        result.diagnostics.append(PassDiagnostics(
            box=out.box[0].tolist(),
            scale=out.fill.scale[0].tolist(),
            fallback_used=bool(out.fill.fallback_used[0]),
            attention_entropy=float(attention_entropy(out.fill.attention)[0]),
            uniform_entropy=uniform_entropy(n_ref),
            reference_pixels=n_ref,
        ))
        cur = out.image
        bo = torch.clamp(bo + fo, max=1)
        bs = torch.clamp(bs + (out.refined > 0.5).float(), max=1) * (1 - bo)
    result.image = cur[0].permute(1, 2, 0).numpy().astype(np.float64)
    return result


def load_image(path, mode: str) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert(mode), np.float32) / 255
    return arr


def write_infer(out_dir, res: InferResult) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    Image.fromarray(quantize(res.image)).save(out / "image.png")
    for k, m in enumerate(res.masks):
        Image.fromarray(quantize(m)).save(out / f"mask_{k}.png")
    (out / "diagnostics.json").write_text(json.dumps([d.__dict__ for d in res.diagnostics], indent=1))
    return out
