"""Confusion matrix and the usual land-cover classification scores."""

from __future__ import annotations

import json

import numpy as np

from .errors import DegenerateInputError, InvalidInputError

__all__ = ["REPORT_KEYS", "confusion", "scores", "format_report", "write_report"]

# fixed order of the scalar keys in every report
REPORT_KEYS = ("OA", "AA", "CF1", "kappa", "mIoU")


def confusion(gt, pred, n_classes: int | None = None) -> np.ndarray:
    """C x C counts, rows = ground truth, columns = prediction.

    Classes are 1..C in both maps; pixels whose ground truth is 0 are skipped.
    """
    g = np.asarray(gt)
    p = np.asarray(pred)
    if g.shape != p.shape:
        raise InvalidInputError(f"shape mismatch: {g.shape} vs {p.shape}")
    c = n_classes if n_classes is not None else int(max(g.max(initial=0), p.max(initial=0)))
    lab = g.ravel() > 0
    gi = g.ravel()[lab].astype(np.int64) - 1
    pi = p.ravel()[lab].astype(np.int64) - 1
    if np.any(gi >= c) or np.any(pi < 0) or np.any(pi >= c):
        raise InvalidInputError(f"class indices must lie in 1..{c}")
    return np.bincount(gi * c + pi, minlength=c * c).reshape(c, c)


def scores(cm) -> dict:
    """OA, AA (mean recall), CF1, Cohen's kappa, mIoU and per-class F1/IoU.

    AA averages over classes present in the ground truth; CF1 and mIoU over
    classes present in the ground truth or the prediction.  Per-class entries
    for classes absent from both are NaN.
    """
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total <= 0:
        raise DegenerateInputError("confusion matrix is empty")
    tp = np.diag(cm)
    gt_sum = cm.sum(axis=1)
    pred_sum = cm.sum(axis=0)
    in_gt = gt_sum > 0
    present = in_gt | (pred_sum > 0)

    with np.errstate(divide="ignore", invalid="ignore"):
        recall = np.where(in_gt, tp / gt_sum, 0.0)
        precision = np.where(pred_sum > 0, tp / pred_sum, 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2 * precision * recall / pr, 0.0)
        union = gt_sum + pred_sum - tp
        iou = np.where(union > 0, tp / union, 0.0)

    oa = tp.sum() / total
    p_e = float(np.sum(gt_sum * pred_sum)) / (total * total)
    kappa = (oa - p_e) / (1 - p_e) if p_e < 1 else (1.0 if oa == 1 else 0.0)
    return {
        "OA": float(oa),
        "AA": float(recall[in_gt].mean()),
        "CF1": float(f1[present].mean()),
        "kappa": float(kappa),
        "mIoU": float(iou[present].mean()),
        "per_class_F1": np.where(present, f1, np.nan).tolist(),
        "per_class_IoU": np.where(present, iou, np.nan).tolist(),
    }


def format_report(result: dict) -> str:
    """Flat ``key=value`` lines: the scalar scores, then per-class entries."""
    lines = [f"{k}={result[k]:.10f}" for k in REPORT_KEYS]
    for name in ("per_class_F1", "per_class_IoU"):
        for i, v in enumerate(result[name], start=1):
            lines.append(f"{name}.{i}={v:.10f}")
    return "\n".join(lines) + "\n"


def write_report(result: dict, txt_path, json_path) -> None:
    with open(txt_path, "w") as fh:
        fh.write(format_report(result))
    doc = {k: result[k] for k in REPORT_KEYS}
    doc["per_class_F1"] = [None if np.isnan(v) else v for v in result["per_class_F1"]]
    doc["per_class_IoU"] = [None if np.isnan(v) else v for v in result["per_class_IoU"]]
    with open(json_path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
