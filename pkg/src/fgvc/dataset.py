"""Image datasets on disk (PPM + labels.csv) and a seeded synthetic
fine-grained dataset: bird-like figures whose classes differ only in beak
shape and wing opening."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ops
from .errors import EmptyDomainError, IngestionError
from .io import read_ppm, write_ppm
from .rng import Rng

LABELS_FILE = "labels.csv"
SPLITS = ("train", "test")


@dataclass
class LabeledDataset:
    images: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ValueError("label index outside class_names")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def resolution(self) -> int:
        return self.images.shape[1]


# -- synthetic birds ---------------------------------------------------------

BEAK_ASPECTS = (1.0, 4.0)
WING_ANGLES = (0.3, 0.7, 1.1, 1.5)  # radians
ASPECT_JITTER = 0.12
ANGLE_JITTER = 0.06
# geometry in units of size/64 pixels
BIRD_SCALE = 1.25
BODY_SIZE = 1.0
BODY_SHIFT = 9.0  # body centre sits this far behind the pose centre, keeping the beak in frame
WING_R = 11.0
BEAK_THICK = 4.5
# pose jitter
POS_JITTER = 0.03
SCALE_JITTER = 0.05
TILT_JITTER = 0.1
MIRROR_PROB = 0.0


@dataclass(frozen=True)
class Pose:
    cx: float
    cy: float
    scale: float
    facing: int
    tilt: float
    background: tuple
    stripe_freq: tuple
    stripe_phase: float
    body_color: tuple
    noise_key: int


@dataclass(frozen=True)
class PartAttributes:
    beak_aspect: float
    wing_angle: float
    beak_color: tuple = (1.0, 0.55, 0.1)
    wing_color: tuple = (0.92, 0.9, 0.8)


def class_attribute_centers(label: int, n_classes: int, family_shift: float = 0.0):
    """Nominal (beak aspect, wing angle) for a class."""
    n_aspect = len(BEAK_ASPECTS)
    aspect = BEAK_ASPECTS[label % n_aspect]
    angle = WING_ANGLES[(label // n_aspect) % len(WING_ANGLES)]
    if n_classes > n_aspect * len(WING_ANGLES):
        # extra classes interleave between the base levels
        aspect += 0.5 * (label // (n_aspect * len(WING_ANGLES)))
    return aspect + 1.5 * family_shift, angle + 0.5 * family_shift


def sample_pose(rng: Rng, size: int) -> Pose:
    bg = tuple(rng.uniform(0.45, 0.65) for _ in range(3))
    body = tuple(rng.uniform(0.45, 0.7) * c for c in (0.55, 0.4, 0.3))
    return Pose(
        cx=size * (0.5 + POS_JITTER * rng.uniform(-1, 1)),
        cy=size * (0.5 + POS_JITTER * rng.uniform(-1, 1)),
        scale=rng.uniform(1 - SCALE_JITTER, 1 + SCALE_JITTER),
        facing=-1 if rng.uniform_f64() < MIRROR_PROB else 1,
        tilt=rng.uniform(-TILT_JITTER, TILT_JITTER),
        background=bg,
        stripe_freq=(rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0)),
        stripe_phase=rng.uniform(0, 2 * math.pi),
        body_color=body,
        noise_key=rng.next_u64(),
    )


def sample_attributes(rng: Rng, label: int, n_classes: int, family_shift: float = 0.0) -> PartAttributes:
    aspect, angle = class_attribute_centers(label, n_classes, family_shift)
    beak = _shift_hue((1.0, 0.55, 0.1), family_shift)
    wing = _shift_hue((0.92, 0.9, 0.8), family_shift)
    return PartAttributes(
        beak_aspect=aspect * (1.0 + rng.uniform(-ASPECT_JITTER, ASPECT_JITTER)),
        wing_angle=angle + rng.uniform(-ANGLE_JITTER, ANGLE_JITTER),
        beak_color=beak,
        wing_color=wing,
    )


def _shift_hue(rgb, shift: float):
    if shift == 0:
        return rgb
    # rotate channels toward the next one; shift in [0, 1]
    r, g, b = rgb
    t = min(max(shift, 0.0), 1.0)
    return ((1 - t) * r + t * b, (1 - t) * g + t * r, (1 - t) * b + t * g)


def render_bird(size: int, pose: Pose, attrs: PartAttributes) -> np.ndarray:
    """Rasterise one figure. Pixel values lie in [0, 1]."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    # body-aligned coordinates: u forward along the facing direction, v down
    c, s = math.cos(pose.tilt), math.sin(pose.tilt)
    dx, dy = xx - pose.cx, yy - pose.cy
    unit = size / 64.0 * pose.scale * BIRD_SCALE
    u = pose.facing * (c * dx + s * dy) + BODY_SHIFT * unit
    v = -s * dx + c * dy

    fy, fx = pose.stripe_freq
    texture = 0.06 * np.sin(2 * math.pi * (fx * xx + fy * yy) / size + pose.stripe_phase)
    noise = Rng(pose.noise_key).normal_array((size, size, 3), 0.0, 0.02)
    img = np.asarray(pose.background)[None, None, :] + texture[..., None] + noise

    bk = BODY_SIZE * unit
    body_a, body_b = 13.0 * bk, 8.0 * bk
    body = (u / body_a) ** 2 + (v / body_b) ** 2 <= 1.0
    head_u = body_a * 0.95
    head_r = 4.5 * bk
    head = (u - head_u) ** 2 + (v + 3.0 * bk) ** 2 <= head_r ** 2
    img[body | head] = pose.body_color

    # wing: sector anchored near the body centre opening towards the tail
    wing_r = WING_R * unit
    ang = np.arctan2(v + 2.0 * bk, -(u - 2.0 * bk))
    rad = np.hypot(u - 2.0 * bk, v + 2.0 * bk)
    wing = (rad <= wing_r) & (ang >= -attrs.wing_angle) & (ang <= 0.0)
    img[wing] = attrs.wing_color

    thick = BEAK_THICK * unit
    length = attrs.beak_aspect * thick
    bu = u - (head_u + head_r * 0.8)
    bv = v + 3.0 * bk
    beak = (bu >= 0) & (bu <= length) & (np.abs(bv) <= thick / 2)
    img[beak] = attrs.beak_color

    eye = (u - head_u - 1.0 * bk) ** 2 + (v + 4.5 * bk) ** 2 <= (1.1 * bk) ** 2
    img[eye] = 0.05
    return np.clip(img, 0.0, 1.0)


def generate_synthetic(n_classes: int = 8, per_class_train: int = 25, per_class_test: int = 12,
                       size: int = 64, seed: int = 7, family_shift: float = 0.0):
    """Seeded ``(train, test)`` pair of :class:`LabeledDataset`.

    Pose, background and colours vary per image; only the beak aspect ratio
    and the wing opening carry the class. ``family_shift`` moves every class's
    attributes and part colours, giving related but distinct domains.
    """
    if min(n_classes, per_class_train, per_class_test, size) < 1:
        raise ValueError("all sizes must be >= 1")
    root = Rng(seed)
    names = [f"class_{c:02d}" for c in range(n_classes)]
    out = []
    for split_id, (split, per_class) in enumerate(zip(SPLITS, (per_class_train, per_class_test))):
        images, labels = [], []
        for i in range(per_class * n_classes):
            label = i % n_classes
            pose = sample_pose(root.stream(split_id, i, 1), size)
            attrs = sample_attributes(root.stream(split_id, i, 2), label, n_classes, family_shift)
            images.append(render_bird(size, pose, attrs))
            labels.append(label)
        meta = {"seed": seed, "family_shift": family_shift}
        out.append(LabeledDataset(np.stack(images), np.array(labels), names, split, meta))
    return out[0], out[1]


# -- disk format -------------------------------------------------------------


def save_dataset(directory, *datasets: LabeledDataset) -> None:
    """Write PPM images plus ``labels.csv`` (filename,class_name,split)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rows = []
    for ds in datasets:
        for i, (img, label) in enumerate(zip(ds.images, ds.labels)):
            fname = f"{ds.split}_{i:05d}.ppm"
            write_ppm(d / fname, img)
            rows.append((fname, ds.class_names[label], ds.split))
    with open(d / LABELS_FILE, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["filename", "class_name", "split"])
        w.writerows(rows)


def _read_manifest(d: Path):
    path = d / LABELS_FILE
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"filename", "class_name", "split"} <= set(reader.fieldnames):
                raise IngestionError(f"{path}: header must be filename,class_name,split")
            return list(reader)
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc


def load_dataset(directory, split: str | None = "train") -> LabeledDataset:
    """Load one split (or everything with ``split=None``) from a dataset directory.

    Class indices follow first appearance in the manifest across all splits,
    so train and test loaded separately agree on the mapping.
    """
    d = Path(directory)
    rows = _read_manifest(d)
    names: list[str] = []
    index: dict[str, int] = {}
    for r in rows:
        if r["class_name"] not in index:
            index[r["class_name"]] = len(names)
            names.append(r["class_name"])
    chosen = [r for r in rows if split is None or r["split"] == split]
    if not chosen:
        raise EmptyDomainError(f"{d}: no images for split {split!r}")
    images = []
    for r in chosen:
        img = read_ppm(d / r["filename"])
        if images and img.shape != images[0].shape:
            raise IngestionError(f"{d / r['filename']}: size {img.shape[:2]} differs from {images[0].shape[:2]}")
        images.append(img)
    labels = [index[r["class_name"]] for r in chosen]
    return LabeledDataset(np.stack(images), np.array(labels), names, split or "all")


def load_splits(directory) -> tuple[LabeledDataset, LabeledDataset]:
    return load_dataset(directory, "train"), load_dataset(directory, "test")


def downsample(images, side: int = 8) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    n, h, w, c = x.shape
    if h % side == 0 and w % side == 0:
        return x.reshape(n, side, h // side, side, w // side, c).mean(axis=(2, 4))
    return ops.bilinear_resize(x, side, side)


def extract_profile_features(dataset: LabeledDataset, params=None) -> np.ndarray:
    """Per-image feature rows for profile building.

    Pixel mode (``params`` is None or ``"pixel"``): 8x8x3 block-mean thumbnail,
    flattened. Model mode: global-pooled backbone features of ``params``.
    """
    if params is None or (isinstance(params, str) and params == "pixel"):
        return downsample(dataset.images).reshape(len(dataset), -1)
    from .model import pooled_features

    return pooled_features(params, dataset.images)
