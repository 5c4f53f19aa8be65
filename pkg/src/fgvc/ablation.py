"""Similarity-versus-transfer ablation.

Each source domain pre-trains a model, which is then fine-tuned on the target.
The report pairs every source's domain similarity to the target with the
fine-tuned two-pass accuracy, and summarises the pairing by Spearman rank
correlation.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from xml.sax.saxutils import escape

import numpy as np
from scipy.stats import spearmanr

from .dataset import LabeledDataset, extract_profile_features, generate_synthetic
from .domain import DEFAULT_GAMMA, DomainProfile, build_profile, domain_similarity
from .errors import InvalidInputError
from .trainer import TrainConfig, evaluate, train

REPORT_COLUMNS = ("source", "sim", "emd", "eval_acc_1pass", "eval_acc_2pass")
DEFAULT_FAMILIES = (0.0, 0.33, 0.67, 1.0)


@dataclass
class AblationConfig:
    pretrain_epochs: int = 30
    finetune_epochs: int = 5
    pretrain_augment: bool = False
    finetune_augment: bool = True
    freeze_backbone: bool = False
    gamma: float = DEFAULT_GAMMA
    seed: int = 0

    def __post_init__(self):
        if self.pretrain_epochs < 1 or self.finetune_epochs < 1:
            raise InvalidInputError("pretrain_epochs and finetune_epochs must be >= 1")


@dataclass
class SourceDomain:
    name: str
    profile: DomainProfile
    train_set: LabeledDataset


@dataclass
class RunRow:
    source: str
    sim: float
    emd: float
    eval_acc_1pass: float
    eval_acc_2pass: float


@dataclass
class RunReport:
    rows: list[RunRow]
    config: dict = field(default_factory=dict)

    @property
    def spearman(self) -> float:
        return spearman([r.sim for r in self.rows], [r.eval_acc_2pass for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([r.source] + [repr(float(getattr(r, c))) for c in REPORT_COLUMNS[1:]])
        return buf.getvalue()

    def config_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.config.items())


def spearman(x, y) -> float:
    """Spearman rank correlation (average ranks for ties); nan if either side is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y) or len(x) < 2:
        raise InvalidInputError("need two equal-length sequences of length >= 2")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return float("nan")
    return float(spearmanr(x, y)[0])


def pixel_profile(dataset: LabeledDataset, name: str) -> DomainProfile:
    return build_profile(extract_profile_features(dataset), dataset.labels, name, dataset.class_names)


def transfer(source_train: LabeledDataset, target_train: LabeledDataset, target_test: LabeledDataset,
             cfg: AblationConfig, theta: float = 0.5):
    """Pre-train on the source, fine-tune every layer on the target; returns ``(acc1, acc2)``."""
    if source_train.n_classes != target_train.n_classes:
        raise InvalidInputError("source and target must have the same number of classes")
    pre, _ = train(TrainConfig(epochs=cfg.pretrain_epochs, seed=cfg.seed,
                               resolution=source_train.resolution,
                               use_augment=cfg.pretrain_augment), source_train)
    tuned, _ = train(TrainConfig(epochs=cfg.finetune_epochs, seed=cfg.seed,
                                 resolution=target_train.resolution,
                                 use_augment=cfg.finetune_augment,
                                 freeze_backbone=cfg.freeze_backbone),
                     target_train, init=pre.params)
    return evaluate(tuned.params, target_test, theta)


def run_ablation(target_train: LabeledDataset, target_test: LabeledDataset,
                 sources: list[SourceDomain], cfg: AblationConfig | None = None,
                 target_profile: DomainProfile | None = None) -> RunReport:
    """``target_profile`` defaults to the pixel profile of ``target_train``; pass
    one explicitly when the source profiles use other features."""
    cfg = cfg or AblationConfig()
    if len(sources) < 2:
        raise InvalidInputError(f"need at least 2 source domains, got {len(sources)}")
    target = target_profile or pixel_profile(target_train, "target")
    rows = []
    for src in sources:
        cost, sim = domain_similarity(src.profile, target, cfg.gamma)
        acc1, acc2 = transfer(src.train_set, target_train, target_test, cfg)
        rows.append(RunRow(src.name, sim, cost, acc1, acc2))
    return RunReport(rows, asdict(cfg))


def synthetic_ablation(master_seed: int = 0, families=DEFAULT_FAMILIES, target_per_class: int = 8,
                       source_per_class: int = 25, test_per_class: int = 12,
                       cfg: AblationConfig | None = None) -> RunReport:
    """Target family 0 against sources shifted by each value in ``families``.

    Datasets are drawn from seeds derived from ``master_seed``; the training
    seed is ``master_seed`` too.
    """
    cfg = cfg or AblationConfig(seed=master_seed)
    t_train, t_test = generate_synthetic(per_class_train=target_per_class,
                                         per_class_test=test_per_class, seed=1000 + master_seed)
    sources = []
    for j, shift in enumerate(families):
        s_train, _ = generate_synthetic(per_class_train=source_per_class, per_class_test=1,
                                        seed=2000 + 10 * master_seed + j, family_shift=shift)
        name = f"family_{shift:g}"
        sources.append(SourceDomain(name, pixel_profile(s_train, name), s_train))
    report = run_ablation(t_train, t_test, sources, cfg)
    report.config.update(master_seed=master_seed, families=",".join(f"{f:g}" for f in families))
    return report


def scatter_svg(report: RunReport, width: int = 480, height: int = 360) -> str:
    """Similarity (x) against two-pass accuracy (y), one labelled dot per source."""
    pad = 56
    xs = [r.sim for r in report.rows]
    ys = [r.eval_acc_2pass for r in report.rows]
    x0, x1 = min(xs), max(xs)
    if x1 - x0 < 1e-12:
        x0, x1 = x0 - 0.5e-3, x1 + 0.5e-3

    def px(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def py(v):
        return height - pad - v * (height - 2 * pad)

    rho = report.spearman
    title = f"similarity vs accuracy, Spearman rho = {'nan' if math.isnan(rho) else f'{rho:.3f}'}"
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="24" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 16}" text-anchor="middle" font-size="12">domain similarity</text>',
        f'<text x="16" y="{height / 2}" font-size="12" transform="rotate(-90 16 {height / 2})" '
        f'text-anchor="middle">two-pass accuracy</text>',
    ]
    for v in (0.0, 0.5, 1.0):
        out.append(f'<text x="{pad - 6}" y="{py(v) + 4:.1f}" text-anchor="end" font-size="10">{v:g}</text>')
    for v in (x0, x1):
        out.append(f'<text x="{px(v):.1f}" y="{height - pad + 14}" text-anchor="middle" '
                   f'font-size="10">{v:.4f}</text>')
    for r in report.rows:
        cx, cy = px(r.sim), py(r.eval_acc_2pass)
        out.append(f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="4" fill="steelblue"/>')
        out.append(f'<text x="{cx + 6:.1f}" y="{cy - 6:.1f}" font-size="10">{escape(r.source)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
