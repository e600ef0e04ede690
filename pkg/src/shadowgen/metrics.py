"""Image, mask and artifact metrics plus dataset-level aggregation.

Image errors are measured on the 0-255 scale; masks are binarized at 0.5.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateMask, EmptyMask, EmptyRegion, ShapeMismatch
from .geometry import BBox, bbox_from_mask, crop_resize
from .morphology import d_frag, d_hole

METRIC_KEYS = ("rmse", "s_rmse", "psnr", "s_psnr", "ber", "s_ber", "d_hole", "d_frag", "box_iou", "shape_l1")
REPORT_SCHEMA_VERSION = 1

# Reference values for ground-truth foreground shadow masks of the real-image
# benchmark; not reproducible here, kept for report annotations only.
REFERENCE_GT_D_HOLE = 1.076
REFERENCE_GT_D_FRAG = 15.657


def _region(mask) -> np.ndarray:
    return np.asarray(mask) > 0.5


def rmse(pred, gt, region=None) -> float:
    """Root-mean-square error on the 0-255 scale, optionally inside ``region``."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"{pred.shape} vs {gt.shape}")
    sq = ((pred - gt) * 255.0) ** 2
    if region is None:
        return float(np.sqrt(sq.mean()))
    sel = _region(region)
    if not sel.any():
        raise EmptyRegion("region has no pixels")
    return float(np.sqrt(sq[sel].mean()))


def psnr_from_rmse(value: float) -> float:
    return math.inf if value == 0 else 20 * math.log10(255.0 / value)


def psnr(pred, gt, region=None) -> float:
    return psnr_from_rmse(rmse(pred, gt, region))


def _ber(pred, gt, region=None) -> tuple[float, bool]:
    p = _region(pred)
    g = _region(gt)
    if p.shape != g.shape:
        raise ShapeMismatch(f"{p.shape} vs {g.shape}")
    if region is not None:
        sel = _region(region)
        p, g = p[sel], g[sel]
    n_pos = int(g.sum())
    n_neg = int(g.size - n_pos)
    tp = int((p & g).sum())
    tn = int((~p & ~g).sum())
    if region is not None:
        if n_pos == 0:
            raise EmptyRegion("region contains no positive pixels")
        if n_neg == 0:
            return 100.0 * (n_pos - tp) / n_pos, True
    elif n_pos == 0 or n_neg == 0:
        raise DegenerateMask("whole-image BER needs both classes in the target mask")
    return 100.0 * (1 - 0.5 * (tp / n_pos + tn / n_neg)), False


def ber(pred, gt, region=None) -> float:
    """Balanced error rate in percent.

    With ``region`` the count is restricted to that region; when the region
    holds only positives (the shadow-BER case) the result is the miss rate.
    """
    return _ber(pred, gt, region)[0]


def shadow_ber(pred, gt) -> float:
    return _ber(pred, gt, gt)[0]


def box_iou(a: BBox, b: BBox) -> float:
    iw = max(0.0, min(a.left + a.w, b.left + b.w) - max(a.left, b.left))
    ih = max(0.0, min(a.top + a.h, b.top + b.h) - max(a.top, b.top))
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def shape_l1(pred_mask, gt_mask, size: int = 32) -> float:
    """L1 between each mask cropped by its own tight box and resized to ``size``.

    An empty prediction contributes an all-zero crop.
    """
    gt_crop = crop_resize(np.asarray(gt_mask, dtype=np.float64), bbox_from_mask(gt_mask), size)
    try:
        pred_crop = crop_resize(np.asarray(pred_mask, dtype=np.float64), bbox_from_mask(pred_mask), size)
    except EmptyMask:
        pred_crop = np.zeros_like(gt_crop)
    return float(np.abs(pred_crop - gt_crop).mean())


@dataclass
class Prediction:
    """Model outputs for one tuple, as numpy arrays."""

    image: np.ndarray  # H x W x 3
    mask: np.ndarray  # H x W, soft refined mask
    box: BBox
    rough: np.ndarray | None = None


def tuple_metrics(pred: Prediction, tup) -> dict:
    m_fs = tup.m_fs
    value_ber, _ = _ber(pred.mask, m_fs)
    value_sber, fallback = _ber(pred.mask, m_fs, m_fs)
    row = {
        "id": tup.tuple_id,
        "rmse": rmse(pred.image, tup.gt),
        "s_rmse": rmse(pred.image, tup.gt, m_fs),
        "ber": value_ber,
        "s_ber": value_sber,
        "d_hole": d_hole(pred.mask),
        "d_frag": d_frag(pred.mask),
        "box_iou": box_iou(pred.box, BBox.from_seq(tup.meta["B_s"])),
        "shape_l1": shape_l1(pred.mask, m_fs),
        "s_ber_fallback": fallback,
    }
    row["psnr"] = psnr_from_rmse(row["rmse"])
    row["s_psnr"] = psnr_from_rmse(row["s_rmse"])
    return row


def _encode(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def _decode(v):
    if v in ("inf", "-inf", "nan"):
        return float(v)
    return v


REPORT_JSON_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "rows", "aggregate", "counts", "config"],
    "properties": {
        "schema_version": {"const": REPORT_SCHEMA_VERSION},
        "label": {"type": "string"},
        "rows": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", *METRIC_KEYS],
                "properties": {
                    "id": {"type": "string"},
                    **{k: {"anyOf": [{"type": "number"}, {"enum": ["inf", "-inf", "nan"]}]} for k in METRIC_KEYS},
                    "s_ber_fallback": {"type": "boolean"},
                },
            },
        },
        "aggregate": {
            "type": "object",
            "required": list(METRIC_KEYS),
            "additionalProperties": {"anyOf": [{"type": "number"}, {"enum": ["inf", "-inf", "nan"]}]},
        },
        "counts": {
            "type": "object",
            "required": ["tuples"],
            "properties": {"tuples": {"type": "integer", "minimum": 0}},
        },
        "config": {"type": "object"},
    },
}


@dataclass
class MetricsReport:
    rows: list[dict]
    aggregate: dict[str, float]
    counts: dict[str, int]
    config: dict = field(default_factory=dict)
    label: str = ""

    @classmethod
    def from_rows(cls, rows: Sequence[dict], config: Mapping | None = None, label: str = "") -> "MetricsReport":
        if not rows:
            raise ValueError("cannot aggregate an empty set of rows")
        agg = {k: float(np.mean([r[k] for r in rows])) for k in METRIC_KEYS}
        counts = {
            "tuples": len(rows),
            "s_ber_fallback": int(sum(bool(r.get("s_ber_fallback")) for r in rows)),
            "psnr_infinite": int(sum(math.isinf(r["psnr"]) for r in rows)),
        }
        return cls(list(rows), agg, counts, dict(config or {}), label)

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "label": self.label,
            "rows": [{k: _encode(v) for k, v in r.items()} for r in self.rows],
            "aggregate": {k: _encode(v) for k, v in self.aggregate.items()},
            "counts": self.counts,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        if d.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ValueError(f"report schema {d.get('schema_version')} != {REPORT_SCHEMA_VERSION}")
        return cls(
            [{k: _decode(v) for k, v in r.items()} for r in d["rows"]],
            {k: _decode(v) for k, v in d["aggregate"].items()},
            dict(d["counts"]),
            dict(d.get("config", {})),
            d.get("label", ""),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "MetricsReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


TABLE_COLUMNS = (
    ("RMSE", "rmse"), ("S-RMSE", "s_rmse"), ("PSNR", "psnr"), ("S-PSNR", "s_psnr"),
    ("BER", "ber"), ("S-BER", "s_ber"), ("d_hole", "d_hole"), ("d_frag", "d_frag"),
    ("box IoU", "box_iou"), ("shape L1", "shape_l1"),
)


def format_table(reports: Sequence[MetricsReport], title: str = "") -> str:
    """Plain-text table, one row per report, mirroring the cross-dataset results layout."""
    name_w = max([len("Setting")] + [len(r.label) for r in reports])
    head = f"{'Setting':<{name_w}} | " + " | ".join(f"{h:>8}" for h, _ in TABLE_COLUMNS)
    lines = [title] if title else []
    lines += [head, "-" * len(head)]
    for r in reports:
        cells = " | ".join(f"{r.aggregate[k]:>8.3f}" for _, k in TABLE_COLUMNS)
        lines.append(f"{r.label:<{name_w}} | {cells}")
    lines.append(f"(reference ground-truth masks on the real benchmark: d_hole={REFERENCE_GT_D_HOLE}, "
                 f"d_frag={REFERENCE_GT_D_FRAG})")
    return "\n".join(lines)


def evaluate_dataset(model_outputs: Sequence[Prediction], dataset: Sequence, config: Mapping | None = None,
                     label: str = "") -> MetricsReport:
    if len(model_outputs) != len(dataset):
        raise ValueError("one prediction per tuple is required")
    rows = [tuple_metrics(p, t) for p, t in zip(model_outputs, dataset)]
    return MetricsReport.from_rows(rows, config, label)
