"""Batched prediction, dataset evaluation and report/grid writing."""
from __future__ import annotations

import json
import shutil
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image

from ..geometry import BBox
from ..metrics import MetricsReport, Prediction, evaluate_dataset, format_table
from ..network import ShadowNet
from ..synthdata import ShadowTuple, quantize, read_tuple
from .data import TensorSet, stack_tuples


@torch.no_grad()
def predict(net: ShadowNet, data: TensorSet, batch_size: int = 16, refine: bool | None = None) -> list[Prediction]:
    """Run the network over ``data`` in order; returns one Prediction per tuple."""
    was_training = net.training
    net.eval()
    preds = []
    try:
        for start in range(0, len(data), batch_size):
            b = data.batch(range(start, min(start + batch_size, len(data))))
            out = net(b["comp"], b["m_fo"], b["m_bo"], b["m_bs"], refine=refine)
            for i in range(out.image.shape[0]):
                preds.append(Prediction(
                    image=out.image[i].permute(1, 2, 0).numpy().astype(np.float64),
                    mask=out.refined[i, 0].numpy().astype(np.float64),
                    box=BBox.from_seq(out.box[i].tolist()),
                    rough=out.rough[i, 0].numpy().astype(np.float64),
                ))
    finally:
        net.train(was_training)
    return preds


def evaluate(net: ShadowNet, tuples: Sequence[ShadowTuple], *, refine: bool | None = None, batch_size: int = 16,
             config: dict | None = None, label: str = "") -> tuple[MetricsReport, list[Prediction]]:
    data = stack_tuples(tuples, net.cfg.resolution)
    preds = predict(net, data, batch_size, refine)
    return evaluate_dataset(preds, tuples, config, label), preds


def write_eval(out_dir, report: MetricsReport, preds: Sequence[Prediction], tuples: Sequence[ShadowTuple]) -> Path:
    """Write ``metrics.json`` plus per-tuple prediction PNGs under ``out_dir``."""
    out = Path(out_dir)
    (out / "predictions").mkdir(parents=True, exist_ok=True)
    report.save(out / "metrics.json")
    for p, t in zip(preds, tuples):
        d = out / "predictions" / t.tuple_id
        d.mkdir(exist_ok=True)
        Image.fromarray(quantize(p.image)).save(d / "image.png")
        Image.fromarray(quantize(p.mask)).save(d / "mask.png")
        if p.rough is not None:
            Image.fromarray(quantize(p.rough)).save(d / "rough.png")
    return out


GRID_COLUMNS = ("composite", "rough mask", "refined mask", "generated", "ground truth")


def grid_image(rows: Sequence[Sequence[np.ndarray]], pad: int = 2) -> np.ndarray:
    """Tile equally sized H x W x 3 float images into a padded grid (white gutters)."""
    H, W = rows[0][0].shape[:2]
    n_r, n_c = len(rows), len(rows[0])
    canvas = np.ones((n_r * (H + pad) + pad, n_c * (W + pad) + pad, 3))
    for r, row in enumerate(rows):
        for c, img in enumerate(row):
            y, x = pad + r * (H + pad), pad + c * (W + pad)
            canvas[y:y + H, x:x + W] = img
    return canvas


def _load_rgb(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), np.float64) / 255


def write_report(eval_dirs: Sequence, out_dir, grid_rows: int = 4, title: str = "") -> list[Path]:
    """Combine one or more eval directories into a table, JSON bundle and qualitative grids.

    Grids are written for the first eval directory, ``grid_rows`` tuples per
    image, with the five columns of ``GRID_COLUMNS``.
    """
    if not eval_dirs:
        raise ValueError("report needs at least one eval directory")
    reports = []
    for d in eval_dirs:
        rep = MetricsReport.load(Path(d) / "metrics.json")
        if not rep.rows:
            raise ValueError(f"{d}: empty evaluation")
        reports.append(rep)
    if grid_rows <= 0:
        raise ValueError("grid_rows must be positive")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    table = format_table(reports, title)
    (out / "table.txt").write_text(table + "\n")
    written.append(out / "table.txt")
    (out / "reports.json").write_text(json.dumps([r.to_dict() for r in reports], indent=1))
    written.append(out / "reports.json")
    for i, d in enumerate(eval_dirs):
        shutil.copyfile(Path(d) / "metrics.json", out / f"metrics_{i}.json")
        written.append(out / f"metrics_{i}.json")

    first = Path(eval_dirs[0])
    data_dir = reports[0].config.get("data_dir")
    ids = [r["id"] for r in reports[0].rows]
    rows = []
    for tid in ids:
        pdir = first / "predictions" / tid
        if data_dir is None or not (pdir / "image.png").is_file():
            continue
        t = read_tuple(data_dir, tid)
        mask = _load_rgb(pdir / "mask.png")
        rough = _load_rgb(pdir / "rough.png") if (pdir / "rough.png").is_file() else mask
        rows.append([t.comp.astype(np.float64), rough, mask, _load_rgb(pdir / "image.png"), t.gt.astype(np.float64)])
    for g, start in enumerate(range(0, len(rows), grid_rows)):
        path = out / f"grid_{g:03d}.png"
        Image.fromarray(quantize(grid_image(rows[start:start + grid_rows]))).save(path)
        written.append(path)
    return written
