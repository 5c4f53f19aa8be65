"""``fgvc`` command line.

Exit codes: 0 success, 1 verification failure, 2 usage or ingestion error.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import ops
from .ablation import (DEFAULT_FAMILIES, AblationConfig, SourceDomain, run_ablation, scatter_svg,
                       synthetic_ablation)
from .augment import AugmentConfig, attention_crop, attention_drop, normalize_map
from .dataset import (LabeledDataset, extract_profile_features, generate_synthetic, load_dataset,
                      save_dataset)
from .domain import (DEFAULT_GAMMA, build_profile, domain_similarity, load_profile, rank_sources,
                     save_profile, top_k_categories)
from .errors import FGVCError, IngestionError
from .gradcheck import DEFAULT_EPS, DEFAULT_TOL, run_gradcheck
from .io import write_pgm, write_ppm
from .model import forward, init_params, load_checkpoint, save_checkpoint
from .rng import Rng
from .trainer import TrainConfig, evaluate, metrics_csv, train

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
ORIGIN_FILE = "origin.txt"

log = logging.getLogger("fgvc")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


class _UsageError(Exception):
    pass


# -- helpers -----------------------------------------------------------------


def _resized(ds: LabeledDataset, resolution: int | None) -> LabeledDataset:
    if resolution is None or resolution == ds.resolution:
        return ds
    imgs = ops.bilinear_resize(ds.images, resolution, resolution)
    return LabeledDataset(imgs, ds.labels, ds.class_names, ds.split, ds.meta)


def _load(path, split, resolution=None) -> LabeledDataset:
    return _resized(load_dataset(path, split), resolution)


def _read_kv(path: Path) -> dict:
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    return dict(line.split("=", 1) for line in lines if "=" in line)


def _write_kv(path: Path, items: dict) -> None:
    path.write_text("".join(f"{k}={v}\n" for k, v in items.items()))


def _features(ds: LabeledDataset, checkpoint):
    if checkpoint is None:
        return extract_profile_features(ds)
    params = load_checkpoint(checkpoint)
    return extract_profile_features(_resized(ds, params.resolution), params)


def _fmt(v: float) -> str:
    return repr(float(v))


# -- subcommands -------------------------------------------------------------


def cmd_synth_gen(a) -> int:
    train_set, test_set = generate_synthetic(a.classes, a.per_class_train, a.per_class_test,
                                             a.size, a.seed, a.family_shift)
    save_dataset(a.out, train_set, test_set)
    print(f"wrote {len(train_set)} train and {len(test_set)} test images to {a.out}")
    return EXIT_OK


def cmd_train(a) -> int:
    train_set = _load(a.data, "train", a.resolution)
    try:
        test_set = _load(a.data, "test", train_set.resolution)
    except FGVCError:
        test_set = None
    cfg = TrainConfig(epochs=a.epochs, batch_size=a.batch, base_lr=a.lr, beta=a.beta,
                      lambda_a=a.lambda_a, seed=a.seed, resolution=train_set.resolution,
                      n_attention=a.m, use_augment=not a.no_augment,
                      freeze_backbone=a.freeze_backbone)
    init = load_checkpoint(a.init) if a.init else None
    state, rows = train(cfg, train_set, test_set, init=init)
    text = metrics_csv(rows)
    if a.out:
        save_checkpoint(a.out, state.params)
        (Path(a.out) / "metrics.csv").write_text(text)
    if a.metrics:
        Path(a.metrics).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_eval(a) -> int:
    params = load_checkpoint(a.checkpoint)
    ds = _load(a.data, a.split, params.resolution)
    if ds.n_classes != params.n_classes:
        raise IngestionError(f"dataset has {ds.n_classes} classes, checkpoint {params.n_classes}")
    acc1, acc2 = evaluate(params, ds, a.theta)
    print("split,n,acc_1pass,acc_2pass")
    print(f"{a.split},{len(ds)},{_fmt(acc1)},{_fmt(acc2)}")
    return EXIT_OK


def cmd_augment_preview(a) -> int:
    if a.checkpoint:
        params = load_checkpoint(a.checkpoint)
    else:
        params = None
    if a.data:
        ds = _load(a.data, a.split, params.resolution if params else None)
    else:
        ds, _ = generate_synthetic(per_class_train=1, per_class_test=1, seed=a.seed)
    if params is None:
        params = init_params(ds.n_classes, ds.resolution, a.m, seed=a.seed)
    cfg = AugmentConfig(a.theta_crop, a.theta_drop)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    n = min(a.n, len(ds))
    s = ds.resolution
    rng = Rng(a.seed).stream(0xA6)
    for i in range(n):
        img = ds.images[i]
        A = forward(params, img).attention
        k = rng.integers(A.shape[-1])
        write_ppm(out / f"{i:03d}_raw.ppm", img)
        write_ppm(out / f"{i:03d}_crop.ppm", attention_crop(img, A[..., k], cfg))
        write_ppm(out / f"{i:03d}_drop.ppm", attention_drop(img, A[..., k], cfg))
        for j in range(A.shape[-1]):
            heat = ops.bilinear_resize(normalize_map(A[..., j])[..., None], s, s)[..., 0]
            write_pgm(out / f"{i:03d}_attn{j}.pgm", heat)
        print(f"{i:03d}: map {k} of {A.shape[-1]}")
    return EXIT_OK


def cmd_similarity(a) -> int:
    cost, sim = domain_similarity(load_profile(a.source), load_profile(a.target), a.gamma)
    print("cost,sim")
    print(f"{_fmt(cost)},{_fmt(sim)}")
    return EXIT_OK


def cmd_rank_sources(a) -> int:
    sources = [load_profile(p) for p in a.source]
    print("source,cost,sim")
    for name, cost, sim in rank_sources(sources, load_profile(a.target), a.gamma):
        print(f"{name},{_fmt(cost)},{_fmt(sim)}")
    return EXIT_OK


def cmd_top_k(a) -> int:
    src = load_profile(a.source)
    for i in top_k_categories(src, load_profile(a.target), a.k, a.gamma):
        print(src.class_names[i])
    return EXIT_OK


def cmd_profile(a) -> int:
    ds = load_dataset(a.data, a.split)
    name = a.name or Path(a.out).name
    prof = build_profile(_features(ds, a.checkpoint), ds.labels, name, ds.class_names)
    save_profile(a.out, prof)
    origin = {"dataset": Path(a.data).resolve(), "split": a.split,
              "features": "checkpoint" if a.checkpoint else "pixel"}
    if a.checkpoint:
        origin["checkpoint"] = Path(a.checkpoint).resolve()
    _write_kv(Path(a.out) / ORIGIN_FILE, origin)
    print(f"profile {name}: {prof.n_classes} classes, dim {prof.dim}")
    return EXIT_OK


def _corrupt(name):
    def hook(grads):
        if name not in grads:
            raise _UsageError(f"--corrupt: unknown tensor {name!r}")
        grads[name] = grads[name] * 1.5 + 1e-3
        return grads
    return hook


def cmd_gradcheck(a) -> int:
    report = run_gradcheck(a.seed, a.eps, a.tol, a.augmented,
                           _corrupt(a.corrupt) if a.corrupt else None, a.resolution)
    print(f"gradcheck seed={a.seed} eps={a.eps:g} tol={a.tol:g} candidate={report.candidate}")
    for line in report.lines():
        print(line)
    if report.passed:
        print(f"PASS max_rel_err={report.max_rel_err:.3e}")
        return EXIT_OK
    print(f"FAIL {','.join(report.failures)}")
    return EXIT_FAIL


def _write_report(out: Path, report, stem: str = "") -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}report.csv").write_text(report.to_csv())
    (out / f"{stem}config.txt").write_text(report.config_text())
    (out / f"{stem}scatter.svg").write_text(scatter_svg(report))


def _rho_text(rho: float) -> str:
    return "nan" if math.isnan(rho) else f"{rho:.6f}"


def cmd_ablation(a) -> int:
    cfg = AblationConfig(a.pretrain_epochs, a.finetune_epochs, freeze_backbone=a.freeze_backbone,
                         gamma=a.gamma, seed=a.seed)
    out = Path(a.out)
    if a.synthetic:
        seeds = a.seeds or [a.seed]
        votes = 0
        for ms in seeds:
            c = replace(cfg, seed=ms)
            report = synthetic_ablation(ms, a.families, cfg=c)
            stem = f"seed{ms}_" if len(seeds) > 1 else ""
            _write_report(out, report, stem)
            sys.stdout.write(report.to_csv())
            rho = report.spearman
            votes += rho >= a.min_rho
            print(f"seed {ms}: spearman={_rho_text(rho)}")
        if len(seeds) > 1:
            print(f"seeds with spearman >= {a.min_rho:g}: {votes}/{len(seeds)}")
        return EXIT_OK
    if not a.target or not a.source:
        raise _UsageError("ablation needs --target and at least two --source, or --synthetic")
    if len(a.source) < 2:
        raise _UsageError(f"ablation needs at least 2 --source profiles, got {len(a.source)}")
    t_train = load_dataset(a.target, "train")
    t_test = load_dataset(a.target, "test")
    sources, modes = [], set()
    for p in a.source:
        prof = load_profile(p)
        origin = _read_kv(Path(p) / ORIGIN_FILE)
        if "dataset" not in origin:
            raise IngestionError(f"{p}/{ORIGIN_FILE} does not name a dataset")
        modes.add(origin.get("checkpoint"))
        sources.append(SourceDomain(prof.name, prof, load_dataset(origin["dataset"], "train")))
    if len(modes) != 1:
        raise IngestionError("source profiles were built from different feature extractors")
    ckpt = modes.pop()
    target_profile = build_profile(_features(t_train, ckpt), t_train.labels, "target",
                                   t_train.class_names)
    report = run_ablation(t_train, t_test, sources, cfg, target_profile)
    _write_report(out, report)
    sys.stdout.write(report.to_csv())
    print(f"spearman={_rho_text(report.spearman)}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def _global(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else 0,
                   help="master seed (default 0)")
    p.add_argument("--threads", type=int, default=d, help="cap BLAS/OpenMP threads")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fgvc", description="Fine-grained attention models and domain similarity.")
    _global(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="<subcommand>", parser_class=_Parser)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        _global(p, suppress=True)
        p.set_defaults(func=fn)
        return p

    p = add("synth-gen", cmd_synth_gen, "write a seeded synthetic dataset (PPM + labels.csv)")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--per-class-train", type=int, default=25)
    p.add_argument("--per-class-test", type=int, default=12)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--family-shift", type=float, default=0.0)

    p = add("train", cmd_train, "train a model; prints the per-epoch metrics CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=12)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--lambda-a", type=float, default=1.0)
    p.add_argument("--m", type=int, default=8, help="number of attention maps")
    p.add_argument("--resolution", type=int, default=None, help="resize images to this side")
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--freeze-backbone", action="store_true")
    p.add_argument("--init", help="checkpoint to start from")
    p.add_argument("--out", help="checkpoint directory")
    p.add_argument("--metrics", help="also write the metrics CSV here")

    p = add("eval", cmd_eval, "one-pass and two-pass accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--theta", type=float, default=0.5)

    p = add("augment-preview", cmd_augment_preview, "write raw/crop/drop PPMs and attention PGMs")
    p.add_argument("--out", required=True)
    p.add_argument("--data")
    p.add_argument("--split", default="train")
    p.add_argument("--checkpoint")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--theta-crop", type=float, default=0.5)
    p.add_argument("--theta-drop", type=float, default=0.5)

    p = add("similarity", cmd_similarity, "EMD cost and similarity of two profiles")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)

    p = add("rank-sources", cmd_rank_sources, "order source profiles by similarity to a target")
    p.add_argument("--source", action="append", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)

    p = add("top-k", cmd_top_k, "source classes nearest to the target")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)

    p = add("profile", cmd_profile, "build a domain profile from a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--name")
    p.add_argument("--checkpoint", help="use pooled backbone features instead of pixels")

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of every parameter gradient")
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--resolution", type=int, default=8)
    p.add_argument("--augmented", action="store_true", help="include the crop and drop streams")
    p.add_argument("--corrupt", metavar="TENSOR", help=argparse.SUPPRESS)

    p = add("ablation", cmd_ablation, "domain similarity against transfer accuracy")
    p.add_argument("--out", required=True)
    p.add_argument("--target", help="target dataset directory")
    p.add_argument("--source", action="append", help="source profile directory (repeatable)")
    p.add_argument("--synthetic", action="store_true", help="generate target and source families")
    p.add_argument("--families", type=float, nargs="+", default=list(DEFAULT_FAMILIES))
    p.add_argument("--seeds", type=int, nargs="+", help="master seeds (synthetic mode)")
    p.add_argument("--min-rho", type=float, default=0.5)
    p.add_argument("--pretrain-epochs", type=int, default=30)
    p.add_argument("--finetune-epochs", type=int, default=5)
    p.add_argument("--freeze-backbone", action="store_true")
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise _UsageError("fgvc: error: a subcommand is required (see fgvc --help)")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(message)s")
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (FGVCError, OSError, ValueError) as exc:
        print(f"fgvc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return exc.code if isinstance(exc.code, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
