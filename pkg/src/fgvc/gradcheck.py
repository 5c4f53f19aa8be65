"""Finite-difference verification of every analytic parameter gradient.

The check runs on a tiny seeded model (8x8 input, M=2, C=4, K=3). Central
differences are only meaningful where the loss is smooth, so the evaluation
image is the first candidate from a seeded stream at which every ReLU
pre-activation sits at least ``margin`` away from its kink and every attention
map is alive. Perturbations that still flip an activation are counted in the
report.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .augment import AugmentConfig
from .model import PARAM_NAMES, ModelParams, forward, forward_with_cache, init_params
from .rng import Rng
from .trainer import TrainConfig, augment_batch, loss_and_grads

TINY = {"n_classes": 3, "resolution": 8, "n_attention": 2, "widths": (8, 16, 4)}
DEFAULT_SEED = 0
DEFAULT_EPS = 1e-3
DEFAULT_TOL = 1e-4
REL_FLOOR = 1e-6


@dataclass
class TensorCheck:
    name: str
    size: int
    max_rel_err: float
    max_abs_err: float
    kink_flips: int = 0

    def passed(self, tol: float) -> bool:
        return self.max_rel_err < tol


@dataclass
class GradCheckReport:
    rows: list[TensorCheck]
    eps: float
    tol: float
    seed: int
    candidate: int
    augmented: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed(self.tol) for r in self.rows)

    @property
    def failures(self) -> list[str]:
        return [r.name for r in self.rows if not r.passed(self.tol)]

    @property
    def max_rel_err(self) -> float:
        return max(r.max_rel_err for r in self.rows)

    def lines(self) -> list[str]:
        out = []
        for r in self.rows:
            flag = "ok" if r.passed(self.tol) else "FAIL"
            out.append(f"{r.name:8s} n={r.size:5d} max_rel={r.max_rel_err:.3e} "
                       f"max_abs={r.max_abs_err:.3e} flips={r.kink_flips} {flag}")
        return out


def relative_error(analytic, numeric, floor: float = REL_FLOOR) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def is_smooth_point(params: ModelParams, x, margin: float = 2e-3, min_active: float = 0.05) -> bool:
    """True when no pre-activation is within ``margin`` of zero, every attention
    map has a positive cell, and the live backbone outputs are not tiny (the
    signed square root is strongly curved near zero)."""
    _, c = forward_with_cache(params, x)
    if min(np.abs(z).min() for z in (c.z1, c.z2, c.z3, c.g)) < margin:
        return False
    if not (c.g > 0).any(axis=(1, 2)).all():
        return False
    live = c.z3[c.z3 > 0]
    return live.size > 0 and live.min() >= min_active


def find_check_point(params: ModelParams, seed: int, max_tries: int = 3000):
    """First seeded candidate image satisfying :func:`is_smooth_point`.

    Returns ``(index, image batch of one, rng of that candidate)``.
    """
    s = params.resolution
    for t in range(max_tries):
        r = Rng(seed).stream(0x6C, t)
        x = r.uniform_array((1, s, s, 3))
        if is_smooth_point(params, x):
            return t, x, r
    raise RuntimeError(f"no smooth evaluation point in {max_tries} candidates for seed {seed}")


def _loss(params, x, y, centers, lambda_a, streams):
    """Summed loss with fixed augmented streams, plus the raw activation pattern."""
    pack, c = forward_with_cache(params, x)
    ce, _ = ops.softmax_cross_entropy(pack.logits, y)
    if streams is not None:
        crops, drops = streams
        ce = (ce + ops.softmax_cross_entropy(forward(params, crops).logits, y)[0]
              + ops.softmax_cross_entropy(forward(params, drops).logits, y)[0]) / 3.0
    la = ((pack.parts - centers[y]) ** 2).sum(axis=(1, 2))
    pattern = tuple((z > 0) for z in (c.z1, c.z2, c.z3, c.g))
    return float((ce + lambda_a * la).sum()), pattern


def run_gradcheck(seed: int = DEFAULT_SEED, eps: float = DEFAULT_EPS, tol: float = DEFAULT_TOL,
                  augmented: bool = False, grad_hook=None, resolution: int = 8) -> GradCheckReport:
    """Compare analytic and central-difference gradients for every parameter tensor.

    ``augmented=True`` adds the crop and drop streams, built once from the
    unperturbed model and then held constant. ``grad_hook(grads)`` may alter
    the analytic gradients before comparison (negative-control hook).

    At the default 8x8 input the feature map is 1x1, where the part features
    do not depend on ``attn_w`` at all; a 16x16 input exercises that path.
    """
    params = init_params(seed=seed, **{**TINY, "resolution": resolution})
    t, x, r = find_check_point(params, seed)
    k = params.n_classes
    y = np.array([r.integers(k)])
    centers = r.uniform_array((k, params.n_attention, params.n_channels), 0.0, 0.5)
    cfg = TrainConfig(resolution=params.resolution, n_attention=params.n_attention,
                      widths=params.widths)

    streams = None
    if augmented:
        pack, _ = forward_with_cache(params, x)
        streams = augment_batch(x, pack.attention, r.stream(1), 0, AugmentConfig())
    fn = None if streams is None else (lambda _x, _a: streams)
    grads, *_ = loss_and_grads(params, x, y, centers, cfg, fn)
    if grad_hook is not None:
        grads = grad_hook({k_: v.copy() for k_, v in grads.items()})

    base = _loss(params, x, y, centers, cfg.lambda_a, streams)[1]
    rows = []
    for name in PARAM_NAMES:
        theta = params.tensors[name]
        num = np.zeros_like(theta)
        flips = 0
        for idx in np.ndindex(theta.shape):
            old = theta[idx]
            theta[idx] = old + eps
            lp, pat_p = _loss(params, x, y, centers, cfg.lambda_a, streams)
            theta[idx] = old - eps
            lm, pat_m = _loss(params, x, y, centers, cfg.lambda_a, streams)
            flips += sum(any((a != b).any() for a, b in zip(pat, base)) for pat in (pat_p, pat_m))
            theta[idx] = old
            num[idx] = (lp - lm) / (2 * eps)
        rel = relative_error(grads[name], num)
        rows.append(TensorCheck(name, theta.size, float(rel.max()),
                                float(np.abs(grads[name] - num).max()), flips))
    return GradCheckReport(rows, eps, tol, seed, t, augmented)
