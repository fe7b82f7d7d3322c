"""Average precision on a three-detection example, step by step.

    python3 demos/metrics.py
"""
import numpy as np

from spgnn.evaluation import RECALL_POINTS, average_precision, evaluate, pr_curve

gts = {0: np.array([[0, 0, 10, 10], [50, 50, 60, 60]], float)}
dets = [
    (0, np.array([0, 0, 10, 10.]), 0.9),         # hits the first box
    (0, np.array([100, 100, 110, 110.]), 0.8),   # hits nothing
    (0, np.array([50, 50, 60, 60.]), 0.7),       # hits the second box
]
precision, recall = pr_curve(dets, gts, iou_thresh=0.5)
for (_, _, s), p, r in zip(dets, precision, recall):
    print(f"score {s:.1f}: precision {p:.3f} recall {r:.2f}")

# interpolated precision: best precision at any recall >= r, sampled at r = 0, 0.01, ..., 1
envelope = np.maximum.accumulate(precision[::-1])[::-1]
idx = np.searchsorted(recall, RECALL_POINTS, side="left")
sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
print(f"101-point AP by hand {sampled.mean():.5f}, library {average_precision(precision, recall):.5f}")

gt_json = {"images": [{"id": 0, "width": 128, "height": 128}],
           "annotations": [{"id": i + 1, "image_id": 0, "category_id": 1,
                            "bbox": [b[0], b[1], b[2] - b[0], b[3] - b[1]]} for i, b in enumerate(gts[0])],
           "categories": [{"id": 1, "name": "crack"}]}
dets_json = [{"image_id": 0, "category_id": 1, "bbox": [b[0], b[1], b[2] - b[0], b[3] - b[1]], "score": s}
             for _, b, s in dets]
print({k: round(v, 4) for k, v in evaluate(dets_json, gt_json).to_dict().items() if k != "per_class"})
