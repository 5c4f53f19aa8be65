"""Three-stream training (raw, attention crop, attention drop) with the
attention regularisation loss, moving-average part centres and SGD with
momentum under a stepwise exponential learning-rate schedule."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import ops
from .augment import AugmentConfig, attention_crop, attention_drop, select_attention_map
from .errors import EmptyDomainError, InvalidInputError, InvalidLabelError, InvalidShapeError
from .model import (PARAM_NAMES, ModelParams, backward, forward_with_cache, init_params,
                    predict_two_pass_batch)
from .rng import Rng

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "lr", "train_loss", "ce_loss", "la_loss", "train_acc",
                  "eval_acc_1pass", "eval_acc_2pass")
BACKBONE_PARAMS = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "conv3_w", "conv3_b")


@dataclass
class TrainConfig:
    epochs: int = 80
    batch_size: int = 12
    base_lr: float = 0.001
    momentum: float = 0.9
    decay: float = 0.8
    decay_every: int = 2
    beta: float = 0.05
    lambda_a: float = 1.0
    seed: int = 0
    resolution: int = 64
    n_attention: int = 8
    widths: tuple = (8, 16, 32)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    use_augment: bool = True
    theta_object: float = 0.5
    freeze_backbone: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.decay_every < 1:
            raise InvalidInputError("epochs, batch_size and decay_every must be >= 1")
        if self.base_lr < 0 or not 0 <= self.momentum < 1 or not 0 < self.decay <= 1:
            raise InvalidInputError("need base_lr >= 0, 0 <= momentum < 1, 0 < decay <= 1")
        if not 0 <= self.beta <= 1 or self.lambda_a < 0:
            raise InvalidInputError("need 0 <= beta <= 1 and lambda_a >= 0")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """``base_lr * decay ** (epoch // decay_every)`` for a zero-based epoch.

    The power is applied as repeated multiplication so that each decay step
    is exactly one rounded product: ``lr_at(e + decay_every) == lr_at(e) * decay``.
    """
    if epoch < 0:
        raise InvalidInputError(f"epoch must be >= 0, got {epoch}")
    lr = cfg.base_lr
    for _ in range(epoch // cfg.decay_every):
        lr *= cfg.decay
    return lr


@dataclass
class CenterBank:
    """Per-class part-feature centres, ``(K, M, C)``, starting at zero."""

    centers: np.ndarray

    @classmethod
    def zeros(cls, n_classes: int, n_attention: int, n_channels: int) -> "CenterBank":
        return cls(np.zeros((n_classes, n_attention, n_channels)))

    def __getitem__(self, y):
        return self.centers[y]


def attention_reg_loss(parts, centers):
    """Squared distance of part features to their centres, and its gradient.

    Centres are constants here; they move only through :func:`update_centers`.
    """
    P = np.asarray(parts, dtype=np.float64)
    c = np.asarray(centers, dtype=np.float64)
    if P.shape != c.shape:
        raise InvalidShapeError(f"parts {P.shape} vs centers {c.shape}")
    diff = P - c
    return float((diff * diff).sum()), 2.0 * diff


def update_centers(bank: CenterBank, y: int, parts, beta: float) -> None:
    """Moving average ``c_y <- c_y + beta * (P - c_y)``, in place.

    Evaluated as ``(1 - beta) * c_y + beta * P`` so that beta = 1 copies P
    bitwise and beta = 0 leaves the centre untouched.
    """
    if not 0 <= y < len(bank.centers):
        raise InvalidLabelError(f"class {y} out of range [0, {len(bank.centers)})")
    bank.centers[y] = (1.0 - beta) * bank.centers[y] + beta * np.asarray(parts, dtype=np.float64)


@dataclass
class TrainState:
    params: ModelParams
    velocity: dict
    centers: CenterBank
    rng: Rng
    epoch: int = 0
    step: int = 0

    @classmethod
    def fresh(cls, params: ModelParams, seed: int) -> "TrainState":
        vel = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        bank = CenterBank.zeros(params.n_classes, params.n_attention, params.n_channels)
        return cls(params, vel, bank, Rng(seed).stream(0x7121))


@dataclass
class StepMetrics:
    loss: float
    ce: float
    la: float
    correct: int
    count: int


def augment_batch(images, attention, rng: Rng, step: int, cfg: AugmentConfig):
    """One crop and one drop image per raw image, each from its own selected map."""
    crops, drops = [], []
    for i, (img, A) in enumerate(zip(images, attention)):
        r = rng.stream(step, i)
        k_crop = select_attention_map(A, r, cfg.selection)
        k_drop = select_attention_map(A, r, cfg.selection)
        crops.append(attention_crop(img, A[..., k_crop], cfg))
        drops.append(attention_drop(img, A[..., k_drop], cfg))
    return np.stack(crops), np.stack(drops)


def loss_and_grads(params: ModelParams, images, labels, centers, cfg: TrainConfig,
                   augment_fn=None):
    """Summed loss over the batch and its parameter gradients.

    ``augment_fn(images, attention) -> (crops, drops)`` builds the extra
    streams from the raw pass; its output is treated as a constant input.
    Without it only the raw stream is trained. Returns
    ``(grads, per_image_loss, ce, la, raw_pack)``.
    """
    labels = np.asarray(labels)
    pack, cache = forward_with_cache(params, images)
    ce_raw, g_raw = ops.softmax_cross_entropy(pack.logits, labels)
    la = np.zeros(len(labels))
    dparts = np.zeros_like(pack.parts)
    for i, y in enumerate(labels):
        la[i], dparts[i] = attention_reg_loss(pack.parts[i], centers[y])
    dparts *= cfg.lambda_a

    if augment_fn is None:
        ce = ce_raw
        grads = backward(params, cache, g_raw, dparts)
    else:
        crops, drops = augment_fn(cache.x, pack.attention)
        crop_pack, crop_cache = forward_with_cache(params, crops)
        drop_pack, drop_cache = forward_with_cache(params, drops)
        ce_crop, g_crop = ops.softmax_cross_entropy(crop_pack.logits, labels)
        ce_drop, g_drop = ops.softmax_cross_entropy(drop_pack.logits, labels)
        ce = (ce_raw + ce_crop + ce_drop) / 3.0
        grads = backward(params, cache, g_raw / 3.0, dparts)
        for c, g in ((crop_cache, g_crop), (drop_cache, g_drop)):
            extra = backward(params, c, g / 3.0)
            for k in grads:
                grads[k] = grads[k] + extra[k]
    loss = ce + cfg.lambda_a * la
    return grads, loss, ce, la, pack


def train_step(state: TrainState, images, labels, cfg: TrainConfig, lr: float) -> StepMetrics:
    """One SGD-momentum update on a batch; gradients are summed over images."""
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    params = state.params
    augment_fn = None
    if cfg.use_augment:
        def augment_fn(x, attention):
            return augment_batch(x, attention, state.rng, state.step, cfg.augment)
    grads, loss, ce, la, pack = loss_and_grads(params, images, labels, state.centers, cfg, augment_fn)

    frozen = BACKBONE_PARAMS if cfg.freeze_backbone else ()
    for name in PARAM_NAMES:
        if name in frozen:
            continue
        v = state.velocity[name]
        v *= cfg.momentum
        v -= lr * grads[name]
        params.tensors[name] += v
    for i, y in enumerate(labels):
        update_centers(state.centers, int(y), pack.parts[i], cfg.beta)
    state.step += 1
    correct = int((pack.logits.argmax(axis=1) == labels).sum())
    return StepMetrics(float(loss.sum()), float(ce.sum()), float(la.sum()), correct, len(labels))


def evaluate(params: ModelParams, dataset, theta: float = 0.5, chunk: int = 64):
    """Top-1 accuracy of single-pass (argmax p1) and two-pass (argmax p) prediction."""
    hits1 = hits2 = 0
    for s in range(0, len(dataset), chunk):
        imgs = dataset.images[s : s + chunk]
        y = dataset.labels[s : s + chunk]
        r = predict_two_pass_batch(params, imgs, theta)
        hits1 += int((r.p1.argmax(axis=1) == y).sum())
        hits2 += int((r.p.argmax(axis=1) == y).sum())
    n = max(len(dataset), 1)
    return hits1 / n, hits2 / n


def train(cfg: TrainConfig, train_set, test_set=None, init: ModelParams | None = None,
          state: TrainState | None = None):
    """Run ``cfg.epochs`` epochs. Returns ``(state, rows)``, one metrics dict per epoch."""
    if len(train_set) == 0:
        raise EmptyDomainError("training set is empty")
    if state is None:
        if init is None:
            init = init_params(train_set.n_classes, cfg.resolution, cfg.n_attention,
                               cfg.widths, cfg.seed)
        state = TrainState.fresh(init, cfg.seed)
    n = len(train_set)
    rows = []
    for _ in range(cfg.epochs):
        epoch = state.epoch
        lr = lr_at(epoch, cfg)
        order = np.array(state.rng.stream(0x5A, epoch).permutation(n))
        tot = StepMetrics(0.0, 0.0, 0.0, 0, 0)
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            m = train_step(state, train_set.images[idx], train_set.labels[idx], cfg, lr)
            tot = StepMetrics(tot.loss + m.loss, tot.ce + m.ce, tot.la + m.la,
                              tot.correct + m.correct, tot.count + m.count)
        acc1 = acc2 = float("nan")
        if test_set is not None and len(test_set):
            acc1, acc2 = evaluate(state.params, test_set, cfg.theta_object)
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": tot.loss / tot.count,
            "ce_loss": tot.ce / tot.count,
            "la_loss": tot.la / tot.count,
            "train_acc": tot.correct / tot.count,
            "eval_acc_1pass": acc1,
            "eval_acc_2pass": acc2,
        }
        rows.append(row)
        log.info("epoch %d lr=%.6g loss=%.4f acc=%.3f eval=%.3f/%.3f", epoch, lr,
                 row["train_loss"], row["train_acc"], acc1, acc2)
        state.epoch += 1
    return state, rows


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow([r["epoch"]] + [repr(float(r[c])) for c in METRIC_COLUMNS[1:]])
    return buf.getvalue()


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
