"""End-to-end acceptance checks.

Each criterion prints one ``PASS``/``FAIL`` line; the lines are also repeated
in the terminal summary (see conftest.py).  The overfit runs take several
minutes each on one core and are shared between criteria 6, 7 and 8.
"""
import math
import time

import numpy as np
import pytest

from spgnn import boxes as bx
from spgnn.checkpoint import save_checkpoint
from spgnn.config import desk_config
from spgnn.core import Tensor
from spgnn.detect_head import HEAD_STDS, assign_targets
from spgnn.evaluation import average_precision, evaluate, pr_curve
from spgnn.gradients import CASES, EPS, TOLERANCE, run_suite
from spgnn.graph_conv import max_relative_aggregate
from spgnn.msgcn import MsgcnConfig, pyramid_shapes
from spgnn.patch_graph import knn_graph
from spgnn.sprpn import unpool
from spgnn.superpixel import slic_segment, superpixel_adjacency, superpixel_features
from spgnn.synth import SyntheticSpec, synth_samples
from spgnn.train import evaluate_model, load_model, train

import oracles

RESULTS: list[str] = []

OVERFIT_STEPS = 500
OVERFIT_BUDGET_S = 15 * 60


def report(number: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title}" + (f" ({detail})" if detail else "")
    RESULTS.append(line)
    print(line)
    assert ok, line


# --- 1 ------------------------------------------------------------------------------------------

def test_criterion_1_gradient_suite():
    start = time.perf_counter()
    errs = run_suite(seeds=range(5), eps=EPS)
    elapsed = time.perf_counter() - start
    worst = max(max(v) for v in errs.values())
    ok = len(errs) == len(CASES) and all(len(v) == 5 for v in errs.values()) and worst <= TOLERANCE
    for name, v in errs.items():
        print(f"  {name:24s} {max(v):.3e}")
    report(1, "gradient suite", ok and elapsed <= 300,
           f"{len(errs)} ops x 5 seeds, worst {worst:.2e}, {elapsed:.0f}s")


# --- 2 ------------------------------------------------------------------------------------------

def test_criterion_2_architecture_parity():
    start = time.perf_counter()
    t = pyramid_shapes(MsgcnConfig(), 896, 896)
    elapsed = time.perf_counter() - start
    ok = (t["stages"] == [(80, 224, 224), (160, 112, 112), (400, 56, 56), (640, 28, 28)]
          and list(t["depths"]) == [2, 2, 6, 2]
          and t["recovered"] == (256, 896, 896)
          and [s[1:] for s in t["superpixel_fpn"]] == [s[1:] for s in t["fpn"]]
          and [s[0] for s in t["superpixel_fpn"]] == [s[0] for s in t["fpn"]])
    report(2, "896 px shape parity", ok and elapsed < 1.0, f"{elapsed * 1e3:.1f} ms")


# --- 3 ------------------------------------------------------------------------------------------

def _random_boxes(rng, n, span):
    xy = rng.uniform(0, span, (n, 2))
    return np.concatenate([xy, xy + rng.uniform(2, span / 2, (n, 2))], axis=1)


def test_criterion_3_oracle_equivalence():
    rng = np.random.default_rng(303)
    failures = []
    n_inst = 100
    for t in range(n_inst):
        n = int(rng.integers(2, 257))
        d = int(rng.integers(1, 5))
        k = int(rng.integers(1, min(n, 12) + 1))
        x = rng.integers(0, 3, (n, d)).astype(float) if t % 3 == 0 else rng.standard_normal((n, d))
        nb = knn_graph(x, k)
        if nb.tolist() != oracles.knn(x, k):
            failures.append(f"knn {t}")
        if not np.array_equal(max_relative_aggregate(Tensor(x), nb).data, oracles.max_relative(x, nb)):
            failures.append(f"aggregate {t}")

        m = int(rng.integers(1, 21))
        boxes = _random_boxes(rng, m, 60.0)
        scores = rng.choice([0.2, 0.5, 0.8], m) if t % 2 else rng.uniform(size=m)
        if bx.nms(boxes, scores, 0.5).tolist() != oracles.nms(boxes.tolist(), list(scores), 0.5):
            failures.append(f"nms {t}")

        g = int(rng.integers(1, 6))
        gts = _random_boxes(rng, g, 60.0)
        got = assign_targets(boxes, gts, 0.7, 0.3, stds=HEAD_STDS)
        labels, matched = oracles.assign(boxes.tolist(), gts.tolist(), 0.7, 0.3)
        if got.labels.tolist() != labels or got.matched.tolist() != matched:
            failures.append(f"assign {t}")

        dets, gt = oracles.random_micro_dataset(rng)
        mine, ref = evaluate(dets, gt).to_dict(), oracles.reference_evaluate(dets, gt)
        if any(abs(mine[key] - ref[key]) > 1e-9 for key in ref):
            failures.append(f"evaluate {t}")
    report(3, "oracle equivalence", not failures,
           f"{n_inst} instances x 5 routines" + (f", mismatches {failures[:5]}" if failures else ""))


# --- 4 ------------------------------------------------------------------------------------------

def test_criterion_4_superpixel_suite():
    rng = np.random.default_rng(404)
    problems = []
    for i in range(50):
        h, w = int(rng.integers(24, 72)), int(rng.integers(24, 72))
        img = oracles.random_image(rng, h, w)
        sp = slic_segment(img, int(rng.integers(4, min(80, h * w // 16) + 1)))
        lab = sp.labels
        if lab.shape != (h, w) or lab.min() != 0 or lab.max() != sp.count - 1 or (sp.sizes < 1).any():
            problems.append(f"partition {i}")
        if not all(oracles.is_four_connected(lab == k) for k in range(sp.count)):
            problems.append(f"connectivity {i}")

        feats = superpixel_features(img, sp)
        if not np.array_equal(feats, oracles.superpixel_features(img, lab, sp.count)):
            problems.append(f"features {i}")

        c = rng.uniform(0, 1, (int(rng.integers(1, 40)), 2))
        if np.abs(superpixel_adjacency(c) - oracles.adjacency(c.tolist(), 0.1 * math.pi)).max() > 1e-12:
            problems.append(f"adjacency {i}")

        out = unpool(Tensor(feats), sp).data
        if not np.array_equal(out, feats[lab].transpose(2, 0, 1)):
            problems.append(f"unpool constant {i}")
        back = superpixel_features(out, sp)
        if not np.allclose(back, feats, rtol=1e-12, atol=0):
            problems.append(f"unpool inverse {i}")

    edge = superpixel_adjacency(np.array([[0.0, 0.0], [math.sqrt(0.1 * math.pi), 0.0]]))[0, 1]
    if abs(edge - math.exp(-1)) > 1e-12:
        problems.append("adjacency e^-1")
    report(4, "superpixel suite", not problems, "50 images" + (f", {problems[:5]}" if problems else ""))


# --- 5 ------------------------------------------------------------------------------------------

def test_criterion_5_metric_fixtures():
    iou = bx.iou((0, 0, 2, 2), (1, 1, 3, 3))
    gts = {0: np.array([[0, 0, 10, 10], [50, 50, 60, 60]], float)}
    dets = [(0, np.array([0, 0, 10, 10.]), 0.9), (0, np.array([100, 100, 110, 110.]), 0.8),
            (0, np.array([50, 50, 60, 60.]), 0.7)]
    ap = average_precision(*pr_curve(dets, gts, 0.5))
    gt = {"images": [{"id": 0, "width": 200, "height": 200}, {"id": 1, "width": 200, "height": 200}],
          "annotations": [{"id": 1, "image_id": 0, "category_id": 1, "bbox": [10, 10, 40, 40]},
                          {"id": 2, "image_id": 0, "category_id": 2, "bbox": [60, 20, 120, 110]},
                          {"id": 3, "image_id": 1, "category_id": 1, "bbox": [5, 50, 60, 35]}],
          "categories": [{"id": 1, "name": "a"}, {"id": 2, "name": "b"}]}
    perfect = [{"image_id": a["image_id"], "category_id": a["category_id"], "bbox": a["bbox"], "score": 0.9}
               for a in gt["annotations"]]
    m = evaluate(perfect, gt).mAP
    ok = abs(iou - 1 / 7) <= 1e-12 and abs(ap - 0.83498) <= 1e-5 and m == 1.0
    report(5, "metric fixtures", ok, f"iou {iou:.12f}, AP {ap:.6f}, mAP {m}")


# --- 6, 7, 8: overfit runs ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def overfit_set():
    return synth_samples(SyntheticSpec(seed=0, size=224, n=8))


class _Runs:
    """Lazily trains each variant once per module."""

    def __init__(self, samples, root):
        self.samples, self.root, self.cache = samples, root, {}

    def get(self, name, **overrides):
        if name not in self.cache:
            cfg = desk_config(schedule__max_steps=OVERFIT_STEPS, **overrides)
            start = time.perf_counter()
            res = train(cfg, self.samples, out_dir=self.root / name)
            elapsed = time.perf_counter() - start
            rep = evaluate_model(res.model, self.samples)
            self.cache[name] = (cfg, res, rep, elapsed)
            totals = res.totals()
            print(f"  {name}: AP50 {rep.AP50:.4f}  loss {totals[0]:.4f} -> {totals[-1]:.4f}  {elapsed:.0f}s")
        return self.cache[name]


@pytest.fixture(scope="module")
def runs(overfit_set, tmp_path_factory):
    return _Runs(overfit_set, tmp_path_factory.mktemp("overfit"))


VARIANTS = {
    "concat": {},
    "add": {"fusion__mode": "add"},
    "sprpn_off": {"superpixel__enabled": False},
}


def _overfit_ok(res, rep, elapsed):
    totals = res.totals()
    ratio = totals[0] / totals[-1]
    ok = (len(totals) <= OVERFIT_STEPS and np.isfinite(totals).all() and rep.AP50 >= 0.90 and ratio >= 5.0
          and elapsed <= OVERFIT_BUDGET_S)
    return ok, f"{len(totals)} steps, AP50 {rep.AP50:.3f}, loss ratio {ratio:.1f}, {elapsed:.0f}s"


def test_criterion_6_overfit(runs):
    ok_all, details = True, []
    for name, overrides in VARIANTS.items():
        cfg, res, rep, elapsed = runs.get(name, **overrides)
        ok, detail = _overfit_ok(res, rep, elapsed)
        ok_all &= ok
        details.append(f"{name}: {detail}")
    report(6, "overfit smoke test", ok_all, "; ".join(details))


def test_criterion_7_determinism(runs, overfit_set, tmp_path):
    cfg, first, _, _ = runs.get("concat")
    again = train(desk_config(schedule__max_steps=OVERFIT_STEPS), overfit_set, out_dir=False)
    same_trace = [list(r.values()) for r in first.trace] == [list(r.values()) for r in again.trace]

    save_checkpoint(tmp_path / "m.ckpt", list(first.model.named_parameters()))
    loaded = load_model(cfg, tmp_path / "m.ckpt")
    prep = first.model.prepare(overfit_set[0].pixels)
    a, b = first.model.pyramid(prep), loaded.pyramid(prep)
    same_forward = all(np.array_equal(x.data, y.data) for x, y in zip(a, b))
    same_dets = ([d.to_json(0) for d in first.model.detect(prep)] == [d.to_json(0) for d in loaded.detect(prep)])
    report(7, "determinism", same_trace and same_forward and same_dets,
           f"trace identical {same_trace}, forward identical {same_forward and same_dets}")


def test_criterion_8_k_ablation(runs):
    ok_all, details = True, []
    for k in (6, 9, 12):
        name = "concat" if k == 9 else f"k{k}"
        _, res, rep, elapsed = runs.get(name, **({} if k == 9 else {"model__k": k}))
        ok, detail = _overfit_ok(res, rep, elapsed)
        ok_all &= ok
        details.append(f"K={k}: final loss {res.totals()[-1]:.4f}, {detail}")
    report(8, "K ablation", ok_all, "; ".join(details))


# --- properties of the overfit run that are not numbered criteria ------------------------------

def test_overfit_detections_cover_every_ground_truth(runs, overfit_set):
    _, res, _, _ = runs.get("concat")
    model = res.model
    for s in overfit_set:
        dets = model.detect(model.prepare(s.pixels))
        found = np.array([d.box for d in dets]).reshape(-1, 4)
        for box, cls in zip(s.boxes, s.classes):
            same = found[[d.category == cls for d in dets]] if dets else found
            assert len(same) and bx.iou_matrix(box[None], same).max() >= 0.5


def test_overfit_loss_trend(runs):
    _, res, _, _ = runs.get("concat")
    smooth = np.convolve(res.totals(), np.ones(10) / 10, mode="valid")
    # compare consecutive non-overlapping 10-step windows
    windows = smooth[::10]
    assert (np.diff(windows) <= 0).all(), windows
