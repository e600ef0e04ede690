"""Procedural 2-D scene renderer and shadow-tuple dataset builder.

A scene is a textured ground plane with 1-5 flat objects standing on it and a
single directional light. Each object's shadow is its silhouette translated by
``elongation * height`` along the light direction (plus an optional horizontal
shear proportional to height above the ground line), multiplicatively darkening
ground pixels by ``attenuation``. Soft shadows blur the coverage and then zero
every coverage value whose darkening would not exceed two quantization steps,
so each shadow's effect is confined to its own derived mask.

Rendering follows the usual capture protocol: an empty frame, each object on
its own without and with its shadow, and the full scene. Masks are recovered
from image differences and a composite is formed per foreground object.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .errors import CorruptDataset, EmptyShadow
from .geometry import bbox_from_mask

GENERATOR_VERSION = "1.0"
DATASET_SCHEMA_VERSION = 1
DELTA = 1.0 / 255.0

SHAPE_KINDS = ("rectangle", "ellipse", "triangle", "capsule")

# Each domain fixes the object kinds, the ground/object palettes and the light arc.
DOMAINS = {
    "A": {
        "kinds": ("ellipse", "capsule"),
        "ground": ((0.78, 0.62, 0.42), (0.62, 0.42, 0.26), (0.86, 0.74, 0.52), (0.70, 0.55, 0.40)),
        "objects": ((0.20, 0.45, 0.75), (0.15, 0.60, 0.35), (0.55, 0.25, 0.65), (0.95, 0.95, 0.90)),
        "arc": (-0.75 * math.pi, -0.25 * math.pi),
    },
    "B": {
        "kinds": ("rectangle", "triangle"),
        "ground": ((0.45, 0.58, 0.72), (0.35, 0.50, 0.48), (0.62, 0.70, 0.78), (0.50, 0.55, 0.62)),
        "objects": ((0.90, 0.45, 0.20), (0.85, 0.80, 0.25), (0.75, 0.20, 0.25), (0.10, 0.10, 0.12)),
        "arc": (-0.40 * math.pi, 0.10 * math.pi),
    },
}


# ---------------------------------------------------------------- scene description

@dataclass(frozen=True)
class ObjectSpec:
    kind: str
    anchor: tuple[float, float]  # (x, y) of the ground-contact pixel, bottom centre
    size: tuple[float, float]  # (width, height) in pixels
    color: tuple[float, float, float]
    orientation: float = 0.0  # tilt about the anchor, radians

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if self.size[0] <= 0 or self.size[1] <= 0:
            raise ValueError("object size must be positive")


@dataclass(frozen=True)
class LightSpec:
    angle: float  # direction of the cast shadow in image coordinates (y down)
    elongation: float  # shadow offset as a multiple of object height
    attenuation: float  # multiplicative darkening inside full shadow
    softness: float = 0.0  # gaussian sigma of the shadow edge, pixels
    shear: float = 0.0  # horizontal shift per pixel of height

    def __post_init__(self):
        if self.elongation < 0:
            raise ValueError("elongation must be >= 0")
        if not 0.3 <= self.attenuation <= 0.7:
            raise ValueError("attenuation must lie in [0.3, 0.7]")
        if self.softness < 0:
            raise ValueError("softness must be >= 0")


@dataclass(frozen=True)
class GroundSpec:
    top: tuple[float, float, float]
    bottom: tuple[float, float, float]
    texture_amp: float = 0.0
    texture_freq: float = 4.0
    texture_phase: float = 0.0


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    resolution: int
    domain: str
    ground: GroundSpec
    objects: tuple[ObjectSpec, ...]
    light: LightSpec

    def __post_init__(self):
        if not 1 <= len(self.objects) <= 5:
            raise ValueError("a scene holds 1 to 5 objects")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(
            seed=d["seed"],
            resolution=d["resolution"],
            domain=d["domain"],
            ground=GroundSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in d["ground"].items()}),
            objects=tuple(
                ObjectSpec(o["kind"], tuple(o["anchor"]), tuple(o["size"]), tuple(o["color"]), o["orientation"])
                for o in d["objects"]
            ),
            light=LightSpec(**d["light"]),
        )


@dataclass(frozen=True)
class GeneratorConfig:
    resolution: int = 128
    domain: str = "A"
    min_objects: int = 1
    max_objects: int = 5
    light_arc: tuple[float, float] | None = None  # defaults to the domain arc
    elongation_range: tuple[float, float] = (0.3, 0.8)
    attenuation_range: tuple[float, float] = (0.3, 0.7)
    softness_range: tuple[float, float] = (0.0, 1.5)
    shear_range: tuple[float, float] = (-0.4, 0.4)
    height_range: tuple[float, float] = (0.10, 0.24)  # fraction of resolution
    aspect_range: tuple[float, float] = (0.35, 1.1)  # width / height
    max_tilt: float = 0.15
    # quality filter
    min_shadow_area: int = 30
    frame_margin: int = 1
    max_object_overlap: float = 0.5

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}")
        if not 1 <= self.min_objects <= self.max_objects <= 5:
            raise ValueError("object-count bounds must satisfy 1 <= min <= max <= 5")
        if self.resolution < 16:
            raise ValueError("resolution too small")

    @property
    def arc(self) -> tuple[float, float]:
        return self.light_arc if self.light_arc is not None else DOMAINS[self.domain]["arc"]


# ---------------------------------------------------------------- sampling

def _pick(rng: np.random.Generator, options: Sequence):
    return options[int(rng.integers(len(options)))]


def sample_scene(rng_seed: int, config: GeneratorConfig) -> SceneSpec:
    """Draw a scene deterministically from ``rng_seed``."""
    rng = np.random.default_rng([rng_seed, ord(config.domain)])
    dom = DOMAINS[config.domain]
    R = config.resolution

    g0 = np.array(_pick(rng, dom["ground"]))
    g1 = np.clip(g0 * rng.uniform(0.8, 1.1) + rng.uniform(-0.05, 0.05, 3), 0.05, 0.95)
    ground = GroundSpec(
        top=tuple(float(v) for v in g1),
        bottom=tuple(float(v) for v in g0),
        texture_amp=float(rng.uniform(0.0, 0.04)),
        texture_freq=float(rng.uniform(2.0, 8.0)),
        texture_phase=float(rng.uniform(0, 2 * math.pi)),
    )

    a0, a1 = config.arc
    e0, e1 = config.elongation_range
    light = LightSpec(
        angle=float(rng.uniform(a0, a1)),
        elongation=float(rng.uniform(e0, e1)),
        attenuation=float(rng.uniform(*config.attenuation_range)),
        softness=float(rng.uniform(*config.softness_range)) if rng.random() < 0.7 else 0.0,
        shear=float(rng.uniform(*config.shear_range)),
    )

    n_obj = int(rng.integers(config.min_objects, config.max_objects + 1))
    objects = []
    for _ in range(n_obj):
        for _attempt in range(50):
            kind = _pick(rng, dom["kinds"])
            h = rng.uniform(*config.height_range) * R
            w = h * rng.uniform(*config.aspect_range)
            if kind == "capsule":
                w = min(w, h)
            tilt = rng.uniform(-config.max_tilt, config.max_tilt)
            ax = rng.uniform(0.1 * R, 0.9 * R)
            ay = rng.uniform(0.3 * R, 0.92 * R)
            base = np.array(_pick(rng, dom["objects"]))
            color = np.clip(base + rng.uniform(-0.08, 0.08, 3), 0.0, 1.0)
            obj = ObjectSpec(
                kind,
                (float(round(ax)), float(round(ay))),
                (float(round(w, 1)), float(round(h, 1))),
                tuple(float(v) for v in color),
                float(tilt),
            )
            if _fits(obj, R):
                objects.append(obj)
                break
    if not objects:  # pragma: no cover - fallback keeps the 1..5 invariant
        objects.append(ObjectSpec("rectangle", (R / 2, R * 0.7), (R * 0.1, R * 0.15), (0.2, 0.2, 0.2)))
    return SceneSpec(rng_seed, R, config.domain, ground, tuple(objects), light)


def _fits(obj: ObjectSpec, R: int) -> bool:
    sil = silhouette(obj, R)
    if not sil.any():
        return False
    return not (sil[0].any() or sil[-1].any() or sil[:, 0].any() or sil[:, -1].any())


# ---------------------------------------------------------------- rasterisation

def _pixel_grid(R: int):
    ys, xs = np.mgrid[0:R, 0:R].astype(np.float64)
    return xs, ys


def _inside(kind: str, u: np.ndarray, t: np.ndarray, w: float, h: float) -> np.ndarray:
    """Membership in local coordinates: ``u`` across, ``t`` height above the ground line."""
    hw = w / 2
    if kind == "rectangle":
        return (u >= -hw) & (u < hw) & (t > 0) & (t < h)
    if kind == "ellipse":
        return (u / hw) ** 2 + ((t - h / 2) / (h / 2)) ** 2 <= 1
    if kind == "triangle":
        return (t > 0) & (t < h) & (np.abs(u) <= hw * (1 - t / h))
    if kind == "capsule":
        r = hw
        body = (np.abs(u) < r) & (t > 0) & (t <= h - r)
        cap = u ** 2 + (t - (h - r)) ** 2 <= r ** 2
        return body | cap
    raise ValueError(kind)


def _silhouette_at(obj: ObjectSpec, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    ax, ay = obj.anchor
    dx = xs - ax
    dy = (ay + 0.5) - ys  # height above the ground line (bottom edge of the anchor pixel)
    c, s = math.cos(obj.orientation), math.sin(obj.orientation)
    u = c * dx - s * dy
    t = s * dx + c * dy
    return _inside(obj.kind, u, t, *obj.size)


def silhouette(obj: ObjectSpec, resolution: int) -> np.ndarray:
    xs, ys = _pixel_grid(resolution)
    return _silhouette_at(obj, xs, ys)


def shadow_silhouette(obj: ObjectSpec, light: LightSpec, resolution: int) -> np.ndarray:
    """Hard projected shadow of ``obj`` before occlusion by the object itself."""
    if light.elongation == 0:
        return np.zeros((resolution, resolution), dtype=bool)
    xs, ys = _pixel_grid(resolution)
    height = obj.size[1]
    ox = light.elongation * height * math.cos(light.angle)
    oy = light.elongation * height * math.sin(light.angle)
    # a shadow point q comes from object point p = q - offset - shear * t(p) * x_hat,
    # and the shear leaves the row (hence t) unchanged
    py = ys - oy
    t = (obj.anchor[1] + 0.5) - py
    px = xs - ox - light.shear * t
    return _silhouette_at(obj, px, py)


def render_ground(scene: SceneSpec) -> np.ndarray:
    R = scene.resolution
    g = scene.ground
    frac = (np.arange(R) / max(R - 1, 1))[:, None, None]
    base = np.array(g.top)[None, None] * (1 - frac) + np.array(g.bottom)[None, None] * frac
    xs, ys = _pixel_grid(R)
    f = 2 * math.pi * g.texture_freq / R
    tex = g.texture_amp * np.sin(f * xs + g.texture_phase) * np.cos(0.7 * f * ys)
    return np.clip(base + tex[..., None], 0.0, 1.0)


def _object_pixels(obj: ObjectSpec, sil: np.ndarray, ground: np.ndarray) -> np.ndarray:
    """Shaded object colour with a guaranteed contrast against the ground."""
    R = sil.shape[0]
    _, ys = _pixel_grid(R)
    height = (obj.anchor[1] + 0.5 - ys) / obj.size[1]
    shade = 0.8 + 0.2 * np.clip(height, 0, 1)
    col = np.clip(np.array(obj.color)[None, None] * shade[..., None], 0, 1)
    weak = np.abs(col - ground).max(axis=-1) < 0.08
    if weak.any():
        push = np.where(ground.mean(axis=-1, keepdims=True) > 0.5, -0.2, 0.2)
        col = np.where(weak[..., None], np.clip(ground + push, 0, 1), col)
    return np.where(sil[..., None], col, 0.0)


def _shadow_coverage(obj: ObjectSpec, light: LightSpec, ground: np.ndarray) -> np.ndarray:
    cover = shadow_silhouette(obj, light, ground.shape[0]).astype(np.float64)
    if light.softness > 0 and cover.any():
        cover = np.clip(gaussian_filter(cover, light.softness, mode="constant"), 0, 1)
    darkening = (ground * (1 - light.attenuation)).max(axis=-1) * cover
    cover[darkening < 2 * DELTA] = 0.0
    return cover


@dataclass
class ImageSet:
    empty: np.ndarray
    objects: list[np.ndarray]  # I_o,k
    shadowed: list[np.ndarray]  # I_os,k
    full: np.ndarray  # I_g
    scene: SceneSpec


def render_image_set(scene: SceneSpec) -> ImageSet:
    R = scene.resolution
    ground = render_ground(scene)
    light = scene.light
    sils = [silhouette(o, R) for o in scene.objects]
    pix = [_object_pixels(o, s, ground) for o, s in zip(scene.objects, sils)]
    covers = [_shadow_coverage(o, light, ground) for o in scene.objects]
    shade = [1 - (1 - light.attenuation) * c for c in covers]

    objects, shadowed = [], []
    for sil, p, sh in zip(sils, pix, shade):
        objects.append(np.where(sil[..., None], p, ground))
        shadowed.append(np.where(sil[..., None], p, ground * sh[..., None]))

    full = ground * np.prod(np.stack(shade), axis=0)[..., None]
    # painter's order: objects further up the frame are further away
    for i in sorted(range(len(sils)), key=lambda i: (scene.objects[i].anchor[1], i)):
        full = np.where(sils[i][..., None], pix[i], full)
    return ImageSet(ground, objects, shadowed, full, scene)


def _diff_mask(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (np.abs(a - b).max(axis=-1) > DELTA).astype(np.float32)


def derive_masks(image_set: ImageSet) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Object and shadow masks from image differences, threshold one 8-bit step."""
    obj_masks = [_diff_mask(o, image_set.empty) for o in image_set.objects]
    shadow_masks = [_diff_mask(s, o) for s, o in zip(image_set.shadowed, image_set.objects)]
    return obj_masks, shadow_masks


# ---------------------------------------------------------------- tuples

@dataclass
class ShadowTuple:
    comp: np.ndarray  # I_c, H x W x 3
    m_fo: np.ndarray
    m_fs: np.ndarray
    m_bo: np.ndarray
    m_bs: np.ndarray
    gt: np.ndarray  # I_g
    meta: dict = field(default_factory=dict)

    @property
    def tuple_id(self) -> str:
        return self.meta.get("id", "")

    @property
    def resolution(self) -> int:
        return self.comp.shape[0]


def _union(masks: Iterable[np.ndarray], shape) -> np.ndarray:
    out = np.zeros(shape, dtype=np.float32)
    for m in masks:
        out = np.maximum(out, m)
    return out


def compose_tuple(image_set: ImageSet, masks, k: int) -> ShadowTuple:
    """Build the tuple whose foreground is object ``k`` (1-based)."""
    obj_masks, shadow_masks = masks
    K = len(obj_masks)
    if not 1 <= k <= K:
        raise IndexError(f"k={k} outside 1..{K}")
    i = k - 1
    shape = obj_masks[0].shape
    m_fo, m_fs = obj_masks[i], shadow_masks[i]
    if not m_fs.any():
        raise EmptyShadow(f"object {k} casts no visible shadow")
    m_bo = _union((m for j, m in enumerate(obj_masks) if j != i), shape)
    m_bs = _union((m for j, m in enumerate(shadow_masks) if j != i), shape)
    weight = np.clip(m_bs + m_bo, 0.0, 1.0)[..., None]
    comp = image_set.objects[i] * (1 - weight) + image_set.full * weight

    scene = image_set.scene
    meta = {
        "id": f"{scene.domain}{scene.seed:08d}_{k}",
        "seed": scene.seed,
        "k": k,
        "domain": scene.domain,
        "B_o": bbox_from_mask(m_fo).to_list(),
        "B_s": bbox_from_mask(m_fs).to_list(),
        "light": asdict(scene.light),
        "generator_version": GENERATOR_VERSION,
    }
    return ShadowTuple(comp, m_fo, m_fs, m_bo, m_bs, image_set.full.copy(), meta)


def quality_filter(tup: ShadowTuple, config: GeneratorConfig) -> bool:
    fs = tup.m_fs > 0.5
    area = int(fs.sum())
    if area < config.min_shadow_area:
        return False
    m = config.frame_margin
    if m > 0:
        inner = np.zeros_like(fs)
        inner[m:-m, m:-m] = True
        if (fs & ~inner).any():
            return False
    overlap = int((fs & (tup.m_fo > 0.5)).sum()) / area
    return overlap < config.max_object_overlap


def scene_tuples(scene: SceneSpec, config: GeneratorConfig) -> list[ShadowTuple]:
    """All tuples of one scene that pass the quality filter."""
    image_set = render_image_set(scene)
    masks = derive_masks(image_set)
    out = []
    for k in range(1, len(scene.objects) + 1):
        try:
            tup = compose_tuple(image_set, masks, k)
        except EmptyShadow:
            continue
        if quality_filter(tup, config):
            out.append(tup)
    return out


def generate_tuples(count: int, config: GeneratorConfig, seed: int = 0,
                    max_per_scene: int | None = None) -> list[ShadowTuple]:
    """Deterministically generate ``count`` filtered tuples from consecutive scene seeds."""
    out: list[ShadowTuple] = []
    s = seed
    while len(out) < count:
        tuples = scene_tuples(sample_scene(s, config), config)
        if max_per_scene is not None:
            tuples = tuples[:max_per_scene]
        out.extend(tuples[: count - len(out)])
        s += 1
    return out


# ---------------------------------------------------------------- dataset IO

def quantize(x: np.ndarray) -> np.ndarray:
    return np.round(np.clip(x, 0, 1) * 255).astype(np.uint8)


_MASK_FILES = {"m_fo": "m_fo.png", "m_fs": "m_fs.png", "m_bo": "m_bo.png", "m_bs": "m_bs.png"}
_IMAGE_FILES = {"comp": "comp.png", "gt": "gt.png"}


def write_dataset(tuples: Iterable[ShadowTuple], directory, domain: str | None = None) -> list[str]:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    ids = []
    for tup in tuples:
        tid = tup.tuple_id
        if not tid:
            raise ValueError("tuple has no id")
        d = root / tid
        d.mkdir(exist_ok=True)
        for attr, name in _IMAGE_FILES.items():
            Image.fromarray(quantize(getattr(tup, attr)), mode="RGB").save(d / name)
        for attr, name in _MASK_FILES.items():
            Image.fromarray(np.where(getattr(tup, attr) > 0.5, 255, 0).astype(np.uint8), mode="L").save(d / name)
        (d / "meta.json").write_text(json.dumps(tup.meta, indent=1, sort_keys=True))
        ids.append(tid)
        domain = domain or tup.meta.get("domain")
    manifest = {
        "schema_version": DATASET_SCHEMA_VERSION,
        "generator_version": GENERATOR_VERSION,
        "domain": domain,
        "tuple_ids": sorted(ids),
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return sorted(ids)


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.is_file():
        raise CorruptDataset(f"{directory}: no manifest.json")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptDataset(f"{path}: {exc}") from exc
    if manifest.get("schema_version") != DATASET_SCHEMA_VERSION:
        raise CorruptDataset(
            f"{directory}: schema version {manifest.get('schema_version')} != {DATASET_SCHEMA_VERSION}")
    if not isinstance(manifest.get("tuple_ids"), list):
        raise CorruptDataset(f"{directory}: manifest has no tuple id list")
    return manifest


def _load_png(path: Path, mode: str) -> np.ndarray:
    if not path.is_file():
        raise CorruptDataset(f"missing file {path}")
    with Image.open(path) as im:
        if im.mode != mode:
            raise CorruptDataset(f"{path}: expected mode {mode}, got {im.mode}")
        return np.asarray(im)


def read_tuple(directory, tid: str) -> ShadowTuple:
    d = Path(directory) / tid
    meta_path = d / "meta.json"
    if not meta_path.is_file():
        raise CorruptDataset(f"missing file {meta_path}")
    meta = json.loads(meta_path.read_text())
    arrays = {a: _load_png(d / n, "RGB").astype(np.float32) / 255 for a, n in _IMAGE_FILES.items()}
    arrays.update({a: (_load_png(d / n, "L") > 127).astype(np.float32) for a, n in _MASK_FILES.items()})
    shapes = {v.shape[:2] for v in arrays.values()}
    if len(shapes) != 1:
        raise CorruptDataset(f"{d}: rasters have mismatched sizes {shapes}")
    return ShadowTuple(meta=meta, **arrays)


def read_dataset(directory) -> Iterator[ShadowTuple]:
    """Iterate tuples in lexicographic id order."""
    manifest = read_manifest(directory)
    for tid in sorted(manifest["tuple_ids"]):
        yield read_tuple(directory, tid)
