"""End-to-end acceptance checks, one test per criterion.

Each test records a single pass/fail line (shown in the terminal summary)
and then asserts the same condition, so a miss turns the suite red.
Criterion 8 is informational and always records PASS once it has run.
"""

import time

import numpy as np
import pytest

from fgvc.augment import crop_box, drop_mask, normalize_map
from fgvc.ablation import synthetic_ablation
from fgvc.dataset import generate_synthetic
from fgvc.domain import DEFAULT_GAMMA, DomainProfile, domain_similarity, similarity
from fgvc.gradcheck import run_gradcheck
from fgvc.model import attention_bbox, init_params, predict_two_pass, predict_two_pass_batch
from fgvc.rng import Rng
from fgvc.trainer import (CenterBank, TrainConfig, attention_reg_loss, evaluate, lr_at,
                          metrics_csv, train, update_centers)
from fgvc.transport import solve_transport
from oracles import bbox_scan, drop_loop, transport_bfs

pytestmark = pytest.mark.acceptance


def dirichlet(r: Rng, n: int) -> np.ndarray:
    w = -np.log1p(-r.uniform_array(n)) + 1e-3
    return w / w.sum()


# -- 1 ---------------------------------------------------------------------------


def test_c01_emd_matches_bfs_enumeration(record):
    r = Rng(2024)
    worst = 0.0
    t0 = time.perf_counter()
    for i in range(200):
        ri = r.stream(i)
        m, n = 2 + ri.integers(3), 2 + ri.integers(3)
        a, b = dirichlet(ri, m), dirichlet(ri, n)
        d = ri.uniform_array((m, n), 0.0, 10.0)
        _, cost = solve_transport(a, b, d)
        worst = max(worst, abs(cost - transport_bfs(a, b, d)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 10.0
    record(1, "EMD equals BFS enumeration", ok,
           f"200 instances, max |diff|={worst:.2e} (tol 1e-9), {elapsed:.2f}s (limit 10s)")
    assert ok


# -- 2 ---------------------------------------------------------------------------


def test_c02_similarity_identities(record):
    self_ok = True
    for seed in range(20):
        r = Rng(seed)
        m = 1 + r.integers(5)
        p = DomainProfile("p", r.uniform_array((m, 4), -2, 2), dirichlet(r, m),
                          [f"c{i}" for i in range(m)])
        self_ok &= domain_similarity(p, p)[1] == 1.0

    mono_ok = True
    for seed in range(20):
        r = Rng(100 + seed)
        s = DomainProfile("s", r.uniform_array((3, 4)), dirichlet(r, 3), list("abc"))
        t = DomainProfile("t", r.uniform_array((2, 4)) + 0.5, dirichlet(r, 2), list("xy"))
        cost = domain_similarity(s, t)[0]
        sims = [similarity(cost, g) for g in (1e-3, 1e-2, 0.1, 1.0)]
        mono_ok &= cost > 0 and all(x > y for x, y in zip(sims, sims[1:]))

    ok = self_ok and mono_ok and DEFAULT_GAMMA == 0.01
    record(2, "similarity identities", ok,
           f"sim(S,S)==1 on 20 profiles: {self_ok}; strictly decreasing in gamma: {mono_ok}; "
           f"default gamma={DEFAULT_GAMMA}")
    assert ok


# -- 3 ---------------------------------------------------------------------------


def test_c03_gradient_suite(record):
    t0 = time.perf_counter()
    rep = run_gradcheck()
    elapsed = time.perf_counter() - t0
    ok = rep.passed and rep.max_rel_err < 1e-4 and rep.eps == 1e-3 and elapsed < 60.0
    record(3, "finite-difference gradient suite", ok,
           f"{len(rep.rows)} tensors, max rel err={rep.max_rel_err:.2e} (tol 1e-4), "
           f"{elapsed:.1f}s (limit 60s)")
    assert ok, rep.lines()


# -- 4 ---------------------------------------------------------------------------


def test_c04_center_loss_identities(record):
    r = Rng(4)
    P = r.uniform_array((2, 4), -1, 1)
    la, g = attention_reg_loss(P, P.copy())
    zero_ok = la == 0.0 and not g.any()

    bank = CenterBank.zeros(3, 2, 4)
    bank.centers[1] = r.uniform_array((2, 4))
    update_centers(bank, 1, P, 1.0)
    bitwise_ok = np.array_equal(bank[1], P)

    worst = 0.0
    for beta in (0.05, 0.3, 0.7):
        bank = CenterBank.zeros(3, 2, 4)
        d0 = np.linalg.norm(bank[2] - P)
        for n in range(1, 31):
            update_centers(bank, 2, P, beta)
            worst = max(worst, abs(np.linalg.norm(bank[2] - P) - (1 - beta) ** n * d0))
    shrink_ok = worst <= 1e-9

    ok = zero_ok and bitwise_ok and shrink_ok
    record(4, "center loss and moving average", ok,
           f"L_A=0/grad=0 at centers: {zero_ok}; beta=1 bitwise: {bitwise_ok}; "
           f"(1-beta)^n shrink max err={worst:.1e} (tol 1e-9)")
    assert ok


# -- 5 ---------------------------------------------------------------------------


def test_c05_two_pass_contract(record):
    params = init_params(4, 32, 3, (6, 8, 5), seed=5)
    images = Rng(5).stream(1).uniform_array((12, 32, 32, 3))
    res = predict_two_pass_batch(params, images)
    avg_ok = np.array_equal(res.p, 0.5 * (res.p1 + res.p2))
    sum_err = float(np.abs(res.p.sum(axis=1) - 1.0).max())
    single = predict_two_pass(params, images[0])
    avg_ok &= np.array_equal(single.p, 0.5 * (single.p1 + single.p2))

    r = Rng(55)
    scan_ok = mono_ok = True
    for i in range(500):
        ri = r.stream(i)
        h, w = 1 + ri.integers(8), 1 + ri.integers(8)
        m = ri.uniform_array((h, w)) ** 3
        theta = ri.uniform(0.05, 0.95)
        box = attention_bbox(m, theta)
        scan_ok &= (box.top, box.bottom, box.left, box.right) == bbox_scan(m, theta)
        hi = theta + ri.uniform(0.0, 1.0 - theta)
        mono_ok &= box.contains(attention_bbox(m, hi)) or attention_bbox(m, hi) == box.full(h, w)

    ok = avg_ok and sum_err <= 1e-9 and scan_ok and mono_ok
    record(5, "two-pass inference contract", ok,
           f"p==0.5(p1+p2) exactly: {avg_ok}; max |sum p - 1|={sum_err:.1e} (tol 1e-9); "
           f"bbox==scan on 500 maps: {scan_ok}; monotone in theta: {mono_ok}")
    assert ok


# -- 6 ---------------------------------------------------------------------------


def test_c06_crop_drop_oracles(record):
    r = Rng(66)
    drop_ok = crop_ok = mono_ok = True
    for i in range(500):
        ri = r.stream(i)
        s = 8 * (1 + ri.integers(3))
        g = 1 + ri.integers(6)
        img = ri.uniform_array((s, s, 3)) + 0.01
        a = ri.uniform_array((g, g)) ** 2
        theta = ri.uniform(0.05, 0.95)

        mask = drop_mask(a, (s, s), theta)
        expect = drop_loop(img, a, theta)
        drop_ok &= np.array_equal(np.where(mask[..., None], 0.0, img), expect)
        drop_ok &= np.array_equal(mask, (expect != img).any(axis=2))

        b = crop_box(a, theta)
        crop_ok &= (b.top, b.bottom, b.left, b.right) == bbox_scan(normalize_map(a), theta)

        hi = theta + ri.uniform(0.0, 1.0 - theta)
        mono_ok &= b.contains(crop_box(a, hi))
        mono_ok &= not (drop_mask(a, (s, s), hi) & ~mask).any()

    ok = drop_ok and crop_ok and mono_ok
    record(6, "attention crop and drop", ok,
           f"500 pairs; drop==per-pixel oracle: {drop_ok}; crop box==scan: {crop_ok}; "
           f"threshold monotone: {mono_ok}")
    assert ok


# -- 7 and 8 ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def desk_data():
    return generate_synthetic(seed=7)


@pytest.fixture(scope="module")
def desk_runs(desk_data):
    tr, te = desk_data
    cfg = TrainConfig(epochs=30, seed=0)
    t0 = time.perf_counter()
    first = train(cfg, tr, te)
    elapsed = time.perf_counter() - t0
    second = train(cfg, tr, te)
    return first, second, elapsed


def test_c07_desk_scale_training(record, desk_data, desk_runs):
    tr, _ = desk_data
    (state, rows), (_, rows2), elapsed = desk_runs
    l0, lf = rows[0]["train_loss"], rows[-1]["train_loss"]
    acc = rows[-1]["train_acc"]
    split_acc = evaluate(state.params, tr)[0]
    same = metrics_csv(rows).encode() == metrics_csv(rows2).encode()
    ok = lf < 0.2 * l0 and acc >= 0.90 and same
    record(7, "desk-scale training", ok,
           f"loss {l0:.4f} -> {lf:.4f} (ratio {lf / l0:.3f}, need < 0.2); "
           f"train acc (last epoch)={acc:.3f} (need >= 0.90), train split re-eval={split_acc:.3f}; "
           f"metrics CSV byte-identical: {same}; {elapsed:.0f}s per run (target 1200s)")
    assert ok


def test_c08_augmentation_ablation_reported(record, desk_data, desk_runs):
    tr, te = desk_data
    (_, rows), _, _ = desk_runs
    _, plain = train(TrainConfig(epochs=30, seed=0, use_augment=False), tr, te)
    aug, base = rows[-1]["eval_acc_2pass"], plain[-1]["eval_acc_2pass"]
    verdict = "augmentation helps" if aug > base else "augmentation does not help at this scale"
    record(8, "augmentation ablation (reported, not gated)", True,
           f"test acc 2-pass: augment={aug:.3f}, no-augment={base:.3f}, "
           f"delta={aug - base:+.3f} ({verdict})")


# -- 9 ---------------------------------------------------------------------------


def test_c09_similarity_tracks_transfer_accuracy(record):
    rhos = [synthetic_ablation(master_seed=s).spearman for s in range(3)]
    votes = sum(rho >= 0.5 for rho in rhos)
    ok = votes >= 2
    record(9, "similarity vs transfer accuracy", ok,
           "spearman per master seed " + ", ".join(f"{s}:{rho:.3f}" for s, rho in enumerate(rhos))
           + f"; {votes}/3 seeds >= 0.5 (majority needed)")
    assert ok


# -- 10 --------------------------------------------------------------------------


def test_c10_lr_schedule(record):
    cfg = TrainConfig()
    got = [lr_at(e, cfg) for e in (0, 2, 4)]
    ok = got == [0.001, 0.0008, 0.00064]
    record(10, "learning-rate schedule", ok, f"lr_at(0,2,4)={got}")
    assert ok
