"""Desk-scale attention network: backbone, attention head, bilinear attention
pooling, linear classifier, and two-pass (raw + zoomed) inference."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ops
from .errors import IngestionError, InvalidShapeError
from .io import read_tdf, write_tdf
from .rng import Rng

SQRT_EPS = 1e-12
# fixed input gain of the classifier on unit-norm part features
CLASSIFIER_GAIN = 8.0
# pixels in [0, 1] enter the backbone as (x - INPUT_MEAN) / INPUT_STD
INPUT_MEAN = 0.5
INPUT_STD = 0.1
PARAM_NAMES = (
    "conv1_w", "conv1_b",
    "conv2_w", "conv2_b",
    "conv3_w", "conv3_b",
    "attn_w",
    "cls_w", "cls_b",
)
CHECKPOINT_VERSION = 1


@dataclass
class ModelParams:
    tensors: dict[str, np.ndarray]
    n_classes: int
    resolution: int = 64
    n_attention: int = 8
    widths: tuple[int, int, int] = (8, 16, 32)
    seed: int = 0

    @property
    def n_channels(self) -> int:
        return self.widths[2]

    @property
    def feature_size(self) -> int:
        s = self.resolution
        for _ in range(3):
            s = ops.conv_output_size(s, 3, 2, 1)
        return s

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "ModelParams":
        return ModelParams(
            {k: v.copy() for k, v in self.tensors.items()},
            self.n_classes, self.resolution, self.n_attention, self.widths, self.seed,
        )

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        c1, c2, c3 = self.widths
        m, k = self.n_attention, self.n_classes
        return {
            "conv1_w": (3, 3, 3, c1), "conv1_b": (c1,),
            "conv2_w": (3, 3, c1, c2), "conv2_b": (c2,),
            "conv3_w": (3, 3, c2, c3), "conv3_b": (c3,),
            "attn_w": (1, 1, c3, m),
            "cls_w": (m * c3, k), "cls_b": (k,),
        }


def init_params(n_classes: int, resolution: int = 64, n_attention: int = 8,
                widths=(8, 16, 32), seed: int = 0) -> ModelParams:
    """Glorot-uniform weights, zero biases, drawn from a seeded stream."""
    widths = tuple(int(w) for w in widths)
    params = ModelParams({}, int(n_classes), int(resolution), int(n_attention), widths, int(seed))
    rng = Rng(seed).stream(0x1417)
    for name, shape in params.expected_shapes().items():
        if name.endswith("_b"):
            params.tensors[name] = np.zeros(shape)
            continue
        if len(shape) == 4:
            kh, kw, cin, cout = shape
            fan_in, fan_out = kh * kw * cin, kh * kw * cout
        else:
            fan_in, fan_out = shape
        params.tensors[name] = ops.glorot_uniform(rng, shape, fan_in, fan_out)
    return params


@dataclass
class AttentionPack:
    """Forward-pass outputs. Leading batch axis present iff the input was batched."""

    features: np.ndarray
    attention: np.ndarray
    parts: np.ndarray
    logits: np.ndarray


@dataclass
class _Cache:
    x: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    a2: np.ndarray
    z3: np.ndarray
    features: np.ndarray
    g: np.ndarray
    attention: np.ndarray
    raw: np.ndarray
    norm: np.ndarray
    parts: np.ndarray


def _bap_forward(F: np.ndarray, A: np.ndarray):
    n, h, w, c = F.shape
    m = A.shape[3]
    raw = A.reshape(n, h * w, m).transpose(0, 2, 1) @ F.reshape(n, h * w, c) / (h * w)
    s = np.sign(raw) * np.sqrt(np.abs(raw) + SQRT_EPS)
    norm = np.sqrt((s * s).sum(axis=2, keepdims=True))
    safe = np.where(norm > 0, norm, 1.0)
    parts = np.where(norm > 0, s / safe, 0.0)
    return raw, norm, parts


def _bap_backward(dparts, F, A, raw, norm, parts):
    n, h, w, c = F.shape
    m = A.shape[3]
    safe = np.where(norm > 0, norm, 1.0)
    ds = np.where(norm > 0, (dparts - parts * (parts * dparts).sum(axis=2, keepdims=True)) / safe, 0.0)
    draw = np.where(raw != 0, ds * 0.5 / np.sqrt(np.abs(raw) + SQRT_EPS), 0.0) / (h * w)
    dA = (F.reshape(n, h * w, c) @ draw.transpose(0, 2, 1)).reshape(n, h, w, m)
    dF = (A.reshape(n, h * w, m) @ draw).reshape(n, h, w, c)
    return dF, dA


def bilinear_attention_pool(F, A) -> np.ndarray:
    """Part-feature matrix ``(M, C)`` from features ``(H, W, C)`` and maps ``(H, W, M)``.

    Each row is the spatial mean of ``A_k * F``, passed through a signed square
    root and scaled to unit L2 norm (all-zero rows stay zero). Batched inputs
    give ``(N, M, C)``.
    """
    Fb, single = ops._as_batch(F)
    Ab, _ = ops._as_batch(A)
    if Fb.shape[:3] != Ab.shape[:3]:
        raise InvalidShapeError(f"feature maps {Fb.shape} and attention maps {Ab.shape} differ spatially")
    _, _, parts = _bap_forward(Fb, Ab)
    return parts[0] if single else parts


def _check_images(params: ModelParams, x: np.ndarray) -> None:
    s = params.resolution
    if x.shape[1:] != (s, s, 3):
        raise InvalidShapeError(f"expected images of shape ({s}, {s}, 3), got {x.shape[1:]}")


def _forward(params: ModelParams, xb: np.ndarray) -> tuple[AttentionPack, _Cache]:
    t = params.tensors
    z1 = ops.conv2d((xb - INPUT_MEAN) / INPUT_STD, t["conv1_w"], 2, 1) + t["conv1_b"]
    a1 = ops.relu(z1)
    z2 = ops.conv2d(a1, t["conv2_w"], 2, 1) + t["conv2_b"]
    a2 = ops.relu(z2)
    z3 = ops.conv2d(a2, t["conv3_w"], 2, 1) + t["conv3_b"]
    F = ops.relu(z3)
    g = F @ t["attn_w"][0, 0]
    A = ops.relu(g)
    raw, norm, parts = _bap_forward(F, A)
    logits = CLASSIFIER_GAIN * (parts.reshape(len(xb), -1) @ t["cls_w"]) + t["cls_b"]
    pack = AttentionPack(F, A, parts, logits)
    return pack, _Cache(xb, z1, a1, z2, a2, z3, F, g, A, raw, norm, parts)


def forward(params: ModelParams, image) -> AttentionPack:
    """Run the network on one ``(S, S, 3)`` image or a batch ``(N, S, S, 3)``."""
    xb, single = ops._as_batch(image)
    _check_images(params, xb)
    pack, _ = _forward(params, xb)
    if single:
        return AttentionPack(pack.features[0], pack.attention[0], pack.parts[0], pack.logits[0])
    return pack


def forward_with_cache(params: ModelParams, images) -> tuple[AttentionPack, _Cache]:
    xb, _ = ops._as_batch(images)
    _check_images(params, xb)
    return _forward(params, xb)


def backward(params: ModelParams, cache: _Cache, dlogits, dparts=None) -> dict[str, np.ndarray]:
    """Parameter gradients given upstream gradients on logits and (optionally) parts."""
    t = params.tensors
    n = len(cache.x)
    pflat = cache.parts.reshape(n, -1)
    grads = {
        "cls_w": CLASSIFIER_GAIN * (pflat.T @ dlogits),
        "cls_b": dlogits.sum(axis=0),
    }
    dP = CLASSIFIER_GAIN * (dlogits @ t["cls_w"].T).reshape(cache.parts.shape)
    if dparts is not None:
        dP = dP + dparts
    dF, dA = _bap_backward(dP, cache.features, cache.attention, cache.raw, cache.norm, cache.parts)
    dg = ops.relu_backward(dA, cache.g)
    c, m = t["attn_w"].shape[2:]
    grads["attn_w"] = (cache.features.reshape(-1, c).T @ dg.reshape(-1, m))[None, None]
    dF = dF + dg @ t["attn_w"][0, 0].T

    dz3 = ops.relu_backward(dF, cache.z3)
    grads["conv3_b"] = dz3.sum(axis=(0, 1, 2))
    da2, grads["conv3_w"] = ops.conv2d_backward(dz3, cache.a2, t["conv3_w"], 2, 1)
    dz2 = ops.relu_backward(da2, cache.z2)
    grads["conv2_b"] = dz2.sum(axis=(0, 1, 2))
    da1, grads["conv2_w"] = ops.conv2d_backward(dz2, cache.a1, t["conv2_w"], 2, 1)
    dz1 = ops.relu_backward(da1, cache.z1)
    grads["conv1_b"] = dz1.sum(axis=(0, 1, 2))
    _, grads["conv1_w"] = ops.conv2d_backward(dz1, (cache.x - INPUT_MEAN) / INPUT_STD, t["conv1_w"], 2, 1)
    return {name: grads[name] for name in PARAM_NAMES}


def pooled_features(params: ModelParams, images) -> np.ndarray:
    """Global-average-pooled backbone features, ``(N, C)``."""
    xb, _ = ops._as_batch(images)
    return ops.global_avg_pool(forward(params, xb).features)


# -- attention geometry ------------------------------------------------------


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive cell ranges ``[top, bottom] x [left, right]``."""

    top: int
    bottom: int
    left: int
    right: int

    @classmethod
    def full(cls, h: int, w: int) -> "BoundingBox":
        return cls(0, h - 1, 0, w - 1)

    def contains(self, other: "BoundingBox") -> bool:
        return (self.top <= other.top and self.bottom >= other.bottom
                and self.left <= other.left and self.right >= other.right)

    def to_pixels(self, grid_h: int, grid_w: int, out_h: int, out_w: int) -> "BoundingBox":
        """Scale a grid box to an ``out_h x out_w`` raster, rounding outward."""
        top = (self.top * out_h) // grid_h
        bottom = -((-(self.bottom + 1) * out_h) // grid_h) - 1
        left = (self.left * out_w) // grid_w
        right = -((-(self.right + 1) * out_w) // grid_w) - 1
        return BoundingBox(top, bottom, left, right)


def object_map(A) -> np.ndarray:
    """Mean over attention channels, min-max scaled to [0, 1]; a constant map becomes all ones."""
    A = np.asarray(A, dtype=np.float64)
    am = A.mean(axis=-1)
    lo, hi = am.min(), am.max()
    if hi - lo <= 0:
        return np.ones_like(am)
    return (am - lo) / (hi - lo)


def attention_bbox(map01, theta: float) -> BoundingBox:
    """Smallest box holding every cell with ``map01 >= theta``; full extent if none do."""
    m = np.asarray(map01)
    h, w = m.shape
    rows = np.flatnonzero((m >= theta).any(axis=1))
    if rows.size == 0:
        return BoundingBox.full(h, w)
    cols = np.flatnonzero((m >= theta).any(axis=0))
    return BoundingBox(int(rows[0]), int(rows[-1]), int(cols[0]), int(cols[-1]))


def zoom(image, box: BoundingBox, grid_h: int, grid_w: int) -> np.ndarray:
    """Crop ``image`` to a grid-space box and resize back to the image size."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    px = box.to_pixels(grid_h, grid_w, h, w)
    patch = img[px.top : px.bottom + 1, px.left : px.right + 1]
    return ops.bilinear_resize(patch, h, w)


@dataclass
class TwoPassResult:
    p: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    box: BoundingBox | list = field(default_factory=list)


def predict_two_pass_batch(params: ModelParams, images, theta: float = 0.5) -> TwoPassResult:
    """Two-pass prediction for a batch; ``box`` is a list of grid-space boxes."""
    xb, _ = ops._as_batch(images)
    _check_images(params, xb)
    first, _ = _forward(params, xb)
    p1 = ops.softmax(first.logits)
    h, w = first.attention.shape[1:3]
    boxes = [attention_bbox(object_map(a), theta) for a in first.attention]
    zoomed = np.stack([zoom(img, box, h, w) for img, box in zip(xb, boxes)])
    second, _ = _forward(params, zoomed)
    p2 = ops.softmax(second.logits)
    return TwoPassResult(0.5 * (p1 + p2), p1, p2, boxes)


def predict_two_pass(params: ModelParams, image, theta: float = 0.5) -> TwoPassResult:
    """Average of the full-image prediction and the prediction on the zoomed object box."""
    img = np.asarray(image, dtype=np.float64)
    r = predict_two_pass_batch(params, img[None], theta)
    return TwoPassResult(r.p[0], r.p1[0], r.p2[0], r.box[0])


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(directory, params: ModelParams) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "M": params.n_attention,
        "C": params.n_channels,
        "K": params.n_classes,
        "resolution": params.resolution,
        "seed": params.seed,
        "widths": ",".join(str(w) for w in params.widths),
    }
    (d / "manifest.txt").write_text("".join(f"{k}={v}\n" for k, v in manifest.items()))
    for name in PARAM_NAMES:
        write_tdf(d / f"{name}.tdf", params.tensors[name])


def load_checkpoint(directory) -> ModelParams:
    d = Path(directory)
    try:
        lines = (d / "manifest.txt").read_text().splitlines()
    except OSError as exc:
        raise IngestionError(f"cannot read checkpoint manifest in {d}: {exc}") from exc
    meta = dict(line.split("=", 1) for line in lines if "=" in line)
    try:
        if int(meta["version"]) != CHECKPOINT_VERSION:
            raise IngestionError(f"{d}: unsupported checkpoint version {meta['version']}")
        widths = tuple(int(v) for v in meta["widths"].split(","))
        params = ModelParams({}, int(meta["K"]), int(meta["resolution"]), int(meta["M"]),
                             widths, int(meta.get("seed", 0)))
        if int(meta["C"]) != widths[2]:
            raise IngestionError(f"{d}: manifest C={meta['C']} disagrees with widths {widths}")
    except (KeyError, ValueError) as exc:
        raise IngestionError(f"{d}: malformed manifest: {exc}") from exc
    for name, shape in params.expected_shapes().items():
        arr = read_tdf(d / f"{name}.tdf")
        if arr.shape != shape:
            raise IngestionError(f"{d}: {name} has shape {arr.shape}, manifest implies {shape}")
        params.tensors[name] = arr
    return params
