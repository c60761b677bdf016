"""CLEAR-MOT evaluation: MOTA, MOTP, identity switches, MT/PT/ML, recall/precision.

Ground truth and hypotheses are anything exposing ``per_frame()`` returning
``{frame: (ids, boxes)}`` (``GroundTruth``, ``TrackerOutput``, ``MotData``),
or such a mapping directly.  Boxes are xywh pixel arrays.

MOTP is reported as the mean ``1 - IoU`` over matched pairs, so lower is
better and a perfect tracker scores 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import BoundingBox, DetectionBatch, as_batch, iou_matrix, solve_assignment

__all__ = [
    "MetricsReport",
    "EmptyGroundTruthError",
    "evaluate",
    "classify_tracks",
    "detection_pr",
    "detection_counts",
    "MT_THRESHOLD",
    "ML_THRESHOLD",
]

MT_THRESHOLD = 0.8
ML_THRESHOLD = 0.2


class EmptyGroundTruthError(ValueError):
    pass


@dataclass
class MetricsReport:
    mota: float
    motp: float
    fp: int
    fn: int
    idsw: int
    gt_total: int
    matches_total: int
    mt: int
    pt: int
    ml: int
    recall: float
    precision: float
    per_track_coverage: dict[int, float] = field(default_factory=dict)

    @property
    def tp(self) -> int:
        return self.matches_total

    def as_row(self) -> dict[str, float]:
        return {
            "mota": self.mota,
            "motp": self.motp,
            "fp": self.fp,
            "fn": self.fn,
            "idsw": self.idsw,
            "gt_total": self.gt_total,
            "matches": self.matches_total,
            "mt": self.mt,
            "pt": self.pt,
            "ml": self.ml,
            "recall": self.recall,
            "precision": self.precision,
        }


def _frames(obj) -> Mapping[int, tuple[np.ndarray, np.ndarray]]:
    if hasattr(obj, "per_frame"):
        return obj.per_frame()
    out = {}
    for frame, value in obj.items():
        if isinstance(value, tuple) and len(value) == 2 and isinstance(value[0], np.ndarray):
            ids, boxes = value
        else:
            ids = np.array([int(v[0]) for v in value], dtype=int)
            boxes = np.array(
                [v[1].as_array() if isinstance(v[1], BoundingBox) else np.asarray(v[1], float) for v in value]
            ).reshape(-1, 4)
        out[int(frame)] = (np.asarray(ids, dtype=int), np.asarray(boxes, dtype=float).reshape(-1, 4))
    return out


_EMPTY = (np.zeros(0, dtype=int), np.zeros((0, 4)))


def evaluate(gt, hyp, iou_gate: float = 0.5) -> MetricsReport:
    """Score tracker output ``hyp`` against ``gt`` with the CLEAR-MOT protocol.

    Per frame: correspondences from the previous frame are kept while their
    IoU stays at or above ``iou_gate``; the remaining objects and hypotheses
    are matched optimally on ``1 - IoU`` among pairs passing the gate.  A
    ground-truth object whose hypothesis id differs from its last matched id
    counts one identity switch.
    """
    if not 0.0 < iou_gate < 1.0:
        raise ValueError("iou_gate must lie in (0, 1)")
    gframes = _frames(gt)
    hframes = _frames(hyp)
    frames = sorted(set(gframes) | set(hframes))

    fp = fn = idsw = matches = gt_total = 0
    dist_sum = 0.0
    last_match: dict[int, int] = {}
    prev_pairs: dict[int, int] = {}
    seen: dict[int, int] = {}
    covered: dict[int, int] = {}

    for f in frames:
        g_ids, g_boxes = gframes.get(f, _EMPTY)
        h_ids, h_boxes = hframes.get(f, _EMPTY)
        ng, nh = len(g_ids), len(h_ids)
        gt_total += ng
        for gid in g_ids.tolist():
            seen[gid] = seen.get(gid, 0) + 1
        if ng == 0:
            fp += nh
            prev_pairs = {}
            continue
        if nh == 0:
            fn += ng
            prev_pairs = {}
            continue

        ious = iou_matrix(g_boxes, h_boxes)
        g_list, h_list = g_ids.tolist(), h_ids.tolist()
        h_index = {h: j for j, h in enumerate(h_list)}
        pairs: list[tuple[int, int]] = []
        g_used = np.zeros(ng, dtype=bool)
        h_used = np.zeros(nh, dtype=bool)

        if prev_pairs:
            for i, gid in enumerate(g_list):
                hid = prev_pairs.get(gid)
                if hid is None:
                    continue
                j = h_index.get(hid)
                if j is not None and not h_used[j] and ious[i, j] >= iou_gate:
                    pairs.append((i, j))
                    g_used[i] = h_used[j] = True

        rows = np.flatnonzero(~g_used)
        cols = np.flatnonzero(~h_used)
        if len(rows) and len(cols):
            sub = ious[np.ix_(rows, cols)]
            allowed = sub >= iou_gate
            if allowed.any():
                res = solve_assignment(1.0 - sub, ~allowed)
                for r, c in res.pairs:
                    pairs.append((int(rows[r]), int(cols[c])))

        cur_pairs: dict[int, int] = {}
        for i, j in pairs:
            gid, hid = g_list[i], h_list[j]
            prev = last_match.get(gid)
            if prev is not None and prev != hid:
                idsw += 1
            last_match[gid] = hid
            cur_pairs[gid] = hid
            covered[gid] = covered.get(gid, 0) + 1
            dist_sum += 1.0 - float(ious[i, j])
        k = len(pairs)
        matches += k
        fn += ng - k
        fp += nh - k
        prev_pairs = cur_pairs

    if gt_total == 0:
        raise EmptyGroundTruthError("empty ground truth")

    coverage = {gid: covered.get(gid, 0) / n for gid, n in sorted(seen.items())}
    mt, pt, ml = classify_tracks(coverage)
    return MetricsReport(
        mota=1.0 - (fp + fn + idsw) / gt_total,
        motp=dist_sum / matches if matches else math.nan,
        fp=fp,
        fn=fn,
        idsw=idsw,
        gt_total=gt_total,
        matches_total=matches,
        mt=len(mt),
        pt=len(pt),
        ml=len(ml),
        recall=matches / (matches + fn),
        precision=matches / (matches + fp) if matches + fp else 0.0,
        per_track_coverage=coverage,
    )


def classify_tracks(per_track_coverage: Mapping[int, float]) -> tuple[list[int], list[int], list[int]]:
    """Split ground-truth ids into mostly tracked, partially tracked and mostly lost.

    MT at coverage >= 0.8, ML below 0.2, PT otherwise (0.2 itself is PT).
    """
    mt, pt, ml = [], [], []
    for gid, cov in per_track_coverage.items():
        if not 0.0 <= cov <= 1.0:
            raise ValueError(f"coverage of track {gid} outside [0, 1]: {cov}")
        if cov >= MT_THRESHOLD:
            mt.append(gid)
        elif cov < ML_THRESHOLD:
            ml.append(gid)
        else:
            pt.append(gid)
    return mt, pt, ml


def _detection_frames(detections) -> Mapping[int, np.ndarray]:
    if isinstance(detections, Mapping):
        items = detections.items()
    else:
        items = ((b.frame, b) for b in detections)
    out = {}
    for frame, dets in items:
        out[int(frame)] = as_batch(int(frame), dets).boxes
    return out


def detection_counts(gt, detections, iou_gate: float = 0.5) -> tuple[int, int, int]:
    """(tp, fp, fn) of raw detections against ground truth, one optimal matching per frame."""
    gframes = _frames(gt)
    dframes = _detection_frames(detections)
    tp = fp = fn = 0
    for f in sorted(set(gframes) | set(dframes)):
        g_boxes = gframes.get(f, _EMPTY)[1]
        d_boxes = dframes.get(f, _EMPTY[1])
        ng, nd = len(g_boxes), len(d_boxes)
        if ng == 0 or nd == 0:
            fn += ng
            fp += nd
            continue
        ious = iou_matrix(g_boxes, d_boxes)
        allowed = ious >= iou_gate
        k = 0
        if allowed.any():
            # rows/cols with a single candidate need no solver
            rs = allowed.sum(axis=1)
            cs = allowed.sum(axis=0)
            if (rs <= 1).all() and (cs <= 1).all():
                k = int(allowed.sum())
            else:
                k = len(solve_assignment(1.0 - ious, ~allowed).pairs)
        tp += k
        fn += ng - k
        fp += nd - k
    return tp, fp, fn


def detection_pr(gt, detections, iou_gate: float = 0.5) -> tuple[float, float]:
    if not 0.0 < iou_gate < 1.0:
        raise ValueError("iou_gate must lie in (0, 1)")
    tp, fp, fn = detection_counts(gt, detections, iou_gate)
    if tp + fn == 0:
        raise EmptyGroundTruthError("empty ground truth")
    return tp / (tp + fn), (tp / (tp + fp) if tp + fp else 0.0)
