"""Acceptance gate: one PASS/FAIL line per primary criterion.

Run under pytest (lines appear in the terminal summary) or directly with
``python tests/test_acceptance.py``.
"""
from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

sys.path.insert(0, str(Path(__file__).parent))
import oracles  # noqa: E402
from partgroup import cli  # noqa: E402
from partgroup._accel import backend_name  # noqa: E402
from partgroup.edges import binarize_edges, nms_thin  # noqa: E402
from partgroup.metrics import (AP_THRESHOLDS, EdgeEvalConfig, ScoredInstance,  # noqa: E402
                               accumulate_confusion, ap_r, edge_pr, iou_from_confusion,
                               match_edges, new_confusion, ods_ois, score_instances)
from partgroup.partition import (PartitionConfig, build_regions, decode_lines,  # noqa: E402
                                 group_lines, merge_regions, partition)
from partgroup.raster import CIHP  # noqa: E402
from partgroup.synth import SceneConfig, gen_scene, same_partition, write_scene  # noqa: E402

RESULTS: dict[str, str] = {}


def record(ac: str, ok: bool, detail: str) -> None:
    line = f"{ac} {'PASS' if ok else 'FAIL'}: {detail}"
    RESULTS[ac] = line
    print(line, flush=True)
    assert ok, line


def _random_parts(rng, h, w, fg=0.75, k=4):
    return (rng.integers(1, k + 1, (h, w)) * (rng.random((h, w)) < fg)).astype(np.uint8)


# --------------------------------------------------------------------------


def test_ac1_perfect_recovery():
    t0 = time.perf_counter()
    n_scenes = 200
    bad = []
    preds, gts = [], {}
    for seed in range(n_scenes):
        s = gen_scene(SceneConfig(seed=seed))
        res = partition(s.gt_parts, s.gt_edges.astype(np.float32), PartitionConfig())
        if not same_partition(res.instances, s.gt_instances):
            bad.append(seed)
        preds += score_instances(res, image_id=str(seed))
        gts[str(seed)] = s.gt_instances
    ap = ap_r(preds, gts, AP_THRESHOLDS)
    elapsed = time.perf_counter() - t0
    ok = not bad and all(v == 1.0 for v in ap.ap) and elapsed < 30.0
    record("AC1", ok, f"{n_scenes - len(bad)}/{n_scenes} scenes recovered exactly; "
                      f"AP^r at 0.1..0.9 = {[round(v, 6) for v in ap.ap]}; {elapsed:.1f}s (< 30s)")


def test_ac2_bfs_oracle_equivalence():
    rng = np.random.default_rng(2002)
    mismatches = 0
    for _ in range(1000):
        h, w = (int(v) for v in rng.integers(1, 65, 2))
        parts = _random_parts(rng, h, w, fg=float(rng.uniform(0.4, 1.0)))
        edges = rng.random((h, w)) < float(rng.uniform(0, 0.5))
        raw = group_lines(decode_lines(parts, edges))
        ref = oracles.bfs_partition((parts > 0).tolist(), edges.tolist())
        if not oracles.same_up_to_renaming(raw, ref):
            mismatches += 1
    record("AC2", mismatches == 0, f"{mismatches} mismatches over 1000 random grids <= 64x64")


def test_ac3_no_edge_limit():
    rng = np.random.default_rng(3003)
    mismatches = 0
    for i in range(500):
        h, w = (int(v) for v in rng.integers(1, 49, 2))
        parts = _random_parts(rng, h, w, fg=float(rng.uniform(0.3, 0.9)))
        prob = (rng.random((h, w)) * 0.2).astype(np.float32)
        prob[rng.random((h, w)) < 0.1] = np.float32(0.2)  # the boundary value itself
        if i % 5 == 0:
            prob[:] = np.float32(0.2)
        edges = binarize_edges(nms_thin(prob), 0.2)
        raw = group_lines(decode_lines(parts, edges))
        if not oracles.same_up_to_renaming(raw, oracles.four_components(parts > 0)):
            mismatches += 1
    record("AC3", mismatches == 0, f"{mismatches} mismatches over 500 grids with activations <= 0.2")


def test_ac4_metric_oracles():
    rng = np.random.default_rng(4004)
    worst = 0.0
    edge_bad = 0
    for case in range(100):
        # mean IoU
        k = int(rng.integers(2, 7))
        h, w = (int(v) for v in rng.integers(2, 12, 2))
        p = rng.integers(0, k, (h, w)).astype(np.uint8)
        g = rng.integers(0, k, (h, w)).astype(np.uint8)
        _, miou = iou_from_confusion(accumulate_confusion(p, g, new_confusion(k)))
        worst = max(worst, abs(miou - oracles.mean_iou(oracles.confusion(p, g, k))))
        # edge match counts
        pred = rng.random((h, w)) < 0.25
        gt = rng.random((h, w)) < 0.25
        r = float(rng.uniform(0.5, 3.0))
        if match_edges(pred, gt, r) != oracles.greedy_edge_match(pred, gt, r):
            edge_bad += 1
        # region AP
        gts, preds, opreds = {}, [], []
        for img in range(2):
            gi = rng.integers(0, 4, (8, 8)).astype(np.int32)
            pi = rng.integers(0, 4, (8, 8)).astype(np.int32)
            gts[str(img)] = gi
            for iid, pix in oracles.pixel_sets(pi).items():
                sc = float(rng.choice([0.3, 0.6, 0.9]))
                preds.append(ScoredInstance(str(img), iid, np.array(sorted(pix)), sc))
                opreds.append((str(img), sc, len(pix), iid, pix))
        got = ap_r(preds, gts, AP_THRESHOLDS).ap
        exp = oracles.region_ap(opreds, {k_: oracles.pixel_sets(v) for k_, v in gts.items()},
                                AP_THRESHOLDS)
        worst = max(worst, max(abs(a - b) for a, b in zip(got, exp)))

    # perfect-prediction identities on synthetic scenes
    ident = []
    prs, preds, gts = [], [], {}
    acc = new_confusion(CIHP.K)
    for seed in range(10):
        s = gen_scene(SceneConfig(seed=seed))
        acc = accumulate_confusion(s.gt_parts, s.gt_parts, acc)
        prs.append(edge_pr(nms_thin(s.gt_edges.astype(np.float32)), s.gt_edges))
        preds += score_instances(s.gt_instances, image_id=str(seed))
        gts[str(seed)] = s.gt_instances
    ident.append(iou_from_confusion(acc)[1])
    ident += list(ods_ois(prs))
    ident.append(ap_r(preds, gts).ap_vol)
    ok = worst <= 1e-9 and edge_bad == 0 and all(v == 1.0 for v in ident)
    record("AC4", ok, f"max |metric - oracle| = {worst:.2e} (<= 1e-9), edge count mismatches "
                      f"{edge_bad}/100; IoU, ODS, OIS, AP^r_vol on perfect input = {ident}")


def test_ac5_rule_literal_constants():
    cfg = PartitionConfig()
    verdicts = {}
    for area in (30, 31):
        raw = np.zeros((8, 8 + area), np.int32)
        raw[:, :8] = 1
        raw[0, 8:] = 2
        parts = np.where(raw > 0, 1, 0).astype(np.uint8)
        parts[4:, :8] = 2
        parts[0, 8:] = [3 + (i % 2) for i in range(area)]  # two labels
        regions = build_regions(raw, parts)
        merge_regions(regions, raw, parts, cfg)
        verdicts[area] = regions[1].accepted

    def n_instances(value):
        parts = np.ones((8, 20), np.uint8)
        parts[4:] = 2
        prob = np.zeros(parts.shape, np.float32)
        prob[:, 9] = value
        return partition(parts, prob, cfg).n_instances

    at = n_instances(np.float32(0.2))
    above = n_instances(np.nextafter(np.float32(0.2), np.float32(1.0)))
    ok = verdicts == {30: False, 31: True} and at == 1 and above == 2
    record("AC5", ok, f"area 30 accepted={verdicts[30]}, area 31 accepted={verdicts[31]}; "
                      f"edge value 0.2 -> {at} instance(s), next float above -> {above}")


def test_ac6_dropout_monotonicity():
    levels = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    seeds = range(50)
    means = []
    for p in levels:
        preds, gts = [], {}
        for seed in seeds:
            s = gen_scene(SceneConfig(seed=seed, edge_dropout=p))
            res = partition(s.degraded_parts, s.degraded_edge_prob, PartitionConfig())
            preds += score_instances(res, image_id=str(seed))
            gts[str(seed)] = s.gt_instances
        means.append(ap_r(preds, gts, (0.7,)).ap[0])
    rho = spearmanr(levels, means).statistic
    record("AC6", bool(rho < 0), f"AP^r@0.7 by dropout {list(levels)} = "
                                 f"{[round(m, 4) for m in means]}; Spearman rho = {rho:.3f} (< 0)")


def test_ac7_performance(tmp_path):
    s = gen_scene(SceneConfig(height=512, width=512, instances=(4, 10), seed=77,
                              spurious_edge=0.01, edge_dropout=0.05))
    prob = s.degraded_edge_prob
    partition(s.degraded_parts, prob)  # warm caches / jit
    times = []
    for _ in range(7):
        t0 = time.perf_counter()
        partition(s.degraded_parts, prob)
        times.append(time.perf_counter() - t0)
    part_ms = 1000 * float(np.median(times))

    root = tmp_path / "scenes"
    rows = []
    for i in range(200):
        sc = gen_scene(SceneConfig(seed=1000 + i, edge_dropout=0.1, label_flip=0.02))
        name = f"scene_{i:04d}"
        files = write_scene(sc, root / name)
        rows.append(json.dumps({"id": name, **{k: f"{name}/{v}" for k, v in files.items()}}))
    (root / "manifest.jsonl").write_text("\n".join(rows) + "\n")
    t0 = time.perf_counter()
    entries = cli.load_manifest(root / "manifest.jsonl")
    doc, failures = cli.evaluate_entries(entries, "all", CIHP, PartitionConfig(),
                                         EdgeEvalConfig(), AP_THRESHOLDS)
    cli.dumps_report(doc)
    eval_s = time.perf_counter() - t0
    ok = part_ms < 100.0 and eval_s < 60.0 and not failures
    record("AC7", ok, f"512x512 partition median {part_ms:.1f} ms (< 100 ms, {backend_name()} "
                      f"backend, 1 thread); evaluating 200 scenes {eval_s:.1f}s (< 60s)")


if __name__ == "__main__":
    import tempfile

    failed = 0
    for name, fn in sorted((k, v) for k, v in globals().items() if k.startswith("test_ac")):
        try:
            if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as d:
                    fn(Path(d))
            else:
                fn()
        except AssertionError:
            failed += 1
        except Exception as exc:  # report crashes as failures too
            failed += 1
            print(f"{name.split('_')[1].upper()} FAIL: crashed with {exc!r}")
    sys.exit(1 if failed else 0)
