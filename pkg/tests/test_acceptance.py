"""Acceptance gate: one PASS/FAIL line per criterion, printed even under capture."""

import math
import time

import numpy as np
import pytest

from hierrec import gradcheck
from hierrec.cli import main as cli_main
from hierrec.data import SplitSpec, SynthConfig, generate_synthetic, make_splits, preset
from hierrec.encoding import ProjectionParams
from hierrec.evaluation import evaluate
from hierrec.fusion import info_nce, level_sims
from hierrec.hier import predict, run_head
from hierrec.taxonomy import default_taxonomy
from hierrec.tensorops import Tensor
from hierrec.trainpipe import TrainConfig, run_forward, train

SEEDS = range(5)
TAX = default_taxonomy()


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, detail
    return emit


def _unit(rng, shape):
    x = rng.standard_normal(shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _invariant_failures(ds, params, cfg):
    bad = []
    out = run_forward(ds.embeddings, ds.labels, cfg, params)
    head, n = out.head, ds.n
    if np.abs(head.S_hat_C1.data.sum(axis=1) - 1).max() > 1e-9:
        bad.append("C1 simplex")
    if np.abs(head.S_hat_C2.data.reshape(n, -1).sum(axis=1) - 1).max() > 1e-9:
        bad.append("C2 simplex")
    for s in out.sims:
        if np.abs(s.data).max() > 1 + 1e-12:
            bad.append("similarity bound")
    mask = head.mask
    if not (np.all(mask.sum(axis=(1, 2)) == 3) and np.all((mask.sum(axis=2) > 0).sum(axis=1) == 1)):
        bad.append("mask structure")
    if np.any(head.S_hat_C2_filtered.data[mask == 0] != 0):
        bad.append("filter leak")
    pred = predict(head)
    if not np.array_equal(pred.flat // 3, pred.item) or not np.array_equal(
            pred.item, head.S_hat_C1.data.argmax(axis=1)):
        bad.append("parent coherence")
    for spec in (SplitSpec(seed=ds.meta["synth_config"]["seed"]), SplitSpec("zero-shot"),
                 SplitSpec("few-shot", k=2)):
        sp = make_splits(ds, spec)
        parts = [sp.train, sp.val, sp.test]
        joined = np.concatenate(parts)
        if len(np.unique(joined)) != len(joined) or len(joined) != n:
            bad.append(f"split {spec.mode}")
    return bad


def test_criterion_1_invariants(report):
    t0 = time.perf_counter()
    bad, checked = [], 0
    variants = [TrainConfig(), TrainConfig(no_hier_units=True), TrainConfig(text_only=True)]
    per_item = TrainConfig(c2_softmax="last")
    for seed in range(10):
        ds = generate_synthetic(SynthConfig(n=120, seed=seed), TAX)
        params = ProjectionParams.init(ds.embeddings.dim, seed, sigma=0.3)
        for cfg in variants:
            bad += _invariant_failures(ds, params, cfg)
            checked += 1
        # per-item normalisation: each item's three scores form a simplex
        out = run_forward(ds.embeddings, ds.labels, per_item, params)
        if np.abs(out.head.S_hat_C2.data.sum(axis=2) - 1).max() > 1e-9:
            bad.append("per-item C2 simplex")
    dt = time.perf_counter() - t0
    report(1, "invariant suite", not bad and dt < 10,
           f"{checked} forward passes, failures={sorted(set(bad))}, {dt:.2f}s (limit 10s)")


def test_criterion_2_gradients(report):
    t0 = time.perf_counter()
    results = gradcheck.run(0, 1e-6)
    dt = time.perf_counter() - t0
    worst = max(results, key=lambda r: r[1])
    e2e = [name for name, _ in results if name.startswith("e2e")]
    ok = worst[1] <= 1e-5 and len(e2e) == 3 and dt < 30
    report(2, "gradient suite", ok,
           f"{len(results)} cases, worst {worst[0]} = {worst[1]:.2e} (limit 1e-5), {dt:.2f}s")


def test_criterion_3_identities(report):
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, j, d = 6, 4, 8
        hv, ha, hc1, hc2 = (Tensor(_unit(rng, s)) for s in [(n, d), (n, d), (j, d), (j, 3, d)])
        sims = level_sims(hv, ha, hc1, hc2)
        head = run_head(sims, hc1, hc2, hv)
        worst = max(worst,
                    np.abs(head.s2i.s_prime_c1.data - head.s2i.ms_c2.data * sims.S_V_C1.data).max(),
                    np.abs(head.i2s.s_prime_c2.data
                           - sims.S_VA_C1.data[:, :, None] * sims.S_V_C2.data).max())
    nce_err = max(abs(info_nce(Tensor(np.full((n, n), 0.37))).item() - math.log(n))
                  for n in range(2, 65))
    report(3, "algebraic identities", worst <= 1e-12 and nce_err <= 1e-12,
           f"expansion max err {worst:.1e} over 100 instances, |info_nce - ln n| max {nce_err:.1e}")


def test_criterion_4_convergence(report):
    t0 = time.perf_counter()
    rows = []
    for seed in SEEDS:
        ds = generate_synthetic(SynthConfig(seed=seed), TAX)
        res = train(ds, make_splits(ds, SplitSpec(seed=seed)), TAX, TrainConfig(seed=seed))
        rows.append((res.final["test"]["c1_top1"], res.final["test"]["c2_top1_coherent"]))
    dt = time.perf_counter() - t0
    passing = sum(c1 >= 0.95 and c2 >= 0.85 for c1, c2 in rows)
    report(4, "convergence", passing == 5 and dt < 60,
           f"{passing}/5 seeds, C1 min {min(r[0] for r in rows):.3f}, "
           f"coherent C2 min {min(r[1] for r in rows):.3f}, {dt:.1f}s (limit 60s)")


def test_criterion_5_ablation_direction(report):
    t0 = time.perf_counter()
    pairs = []
    for seed in SEEDS:
        ds = generate_synthetic(preset("hard", seed=seed), TAX)
        splits = make_splits(ds, SplitSpec(seed=seed))
        pairs.append(tuple(
            train(ds, splits, TAX, TrainConfig(seed=seed, no_hier_units=flag)).final["test"]["c2_top1_coherent"]
            for flag in (False, True)))
    dt = time.perf_counter() - t0
    wins = sum(full >= flat for full, flat in pairs)
    report(5, "full >= no_hier_units on hard data", wins >= 4 and dt < 120,
           f"{wins}/5 seeds, pairs={[(round(a, 3), round(b, 3)) for a, b in pairs]}, {dt:.1f}s")


def test_criterion_6_chance(report):
    c1, c2_coh, c2_ind = [], [], []
    for seed in SEEDS:
        ds = generate_synthetic(preset("chance", seed=seed), TAX)
        split = make_splits(ds, SplitSpec(seed=seed)).test
        m = evaluate(ProjectionParams.init(ds.embeddings.dim, seed), ds, split, TAX)
        c1.append(m.c1_top1)
        c2_coh.append(m.c2_top1_coherent)
        c2_ind.append(m.c2_top1_independent)
    means = np.mean(c1), np.mean(c2_coh), np.mean(c2_ind)
    ok = abs(means[0] - 0.25) <= 0.10 and all(abs(m - 1 / 12) <= 0.10 for m in means[1:])
    report(6, "chance calibration", ok,
           f"C1 {means[0]:.3f} (0.25+-0.10), C2 coherent {means[1]:.3f}, "
           f"independent {means[2]:.3f} (0.083+-0.10)")


def test_criterion_7_determinism(report, tmp_path):
    blobs = []
    for name in ("a", "b"):
        assert cli_main(["train", "--out", str(tmp_path / name), "--seed", "11"]) == 0
        blobs.append((tmp_path / name / "metrics.csv").read_bytes())
    report(7, "CLI determinism", blobs[0] == blobs[1],
           f"metrics.csv {len(blobs[0])} bytes, identical={blobs[0] == blobs[1]}")


def test_criterion_8_few_shot(report):
    means, tests = {}, {}
    for k in (1, 2, 4):
        accs = []
        for seed in SEEDS:
            ds = generate_synthetic(SynthConfig(seed=seed), TAX)
            splits = make_splits(ds, SplitSpec("few-shot", k=k, seed=seed))
            tests.setdefault(seed, set()).add(splits.test.tobytes())
            accs.append(train(ds, splits, TAX, TrainConfig(seed=seed)).final["test"]["c2_top1_coherent"])
        means[k] = float(np.mean(accs))
    shared = all(len(v) == 1 for v in tests.values())
    ok = shared and means[1] <= means[2] <= means[4]
    report(8, "few-shot monotone in K", ok,
           f"mean coherent C2 {', '.join(f'K={k}: {v:.4f}' for k, v in means.items())}, "
           f"shared test set={shared}")
