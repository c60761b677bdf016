"""Box geometry, detections and the linear-assignment solver.

Boxes are ``(left, top, width, height)`` in continuous pixel coordinates.
The array helpers work on ``(N, 4)`` arrays in the same layout and are what
the tracker and the evaluator use in their inner loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "BoundingBox",
    "Detection",
    "DetectionBatch",
    "AssignmentResult",
    "iou",
    "iou_matrix",
    "solve_assignment",
]


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box width/height must be positive, got w={self.w}, h={self.h}")
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise ValueError("box coordinates must be finite")

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BoundingBox":
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=float)

    def translated(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x + dx, self.y + dy, self.w, self.h)


@dataclass(frozen=True)
class Detection:
    frame: int
    box: BoundingBox
    confidence: float
    embedding: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")
        if self.embedding is not None:
            norm = float(np.linalg.norm(self.embedding))
            if abs(norm - 1.0) > 1e-6:
                raise ValueError(f"embedding must be unit-norm, got norm {norm:.8f}")


class DetectionBatch:
    """All detections of one frame stored column-wise.

    Iterating yields :class:`Detection` objects; the tracker reads the arrays
    directly.
    """

    __slots__ = ("frame", "boxes", "confidences", "embeddings")

    def __init__(
        self,
        frame: int,
        boxes: np.ndarray,
        confidences: np.ndarray,
        embeddings: Optional[np.ndarray] = None,
    ) -> None:
        self.frame = int(frame)
        self.boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
        self.confidences = np.asarray(confidences, dtype=float).reshape(-1)
        if len(self.confidences) != len(self.boxes):
            raise ValueError("boxes and confidences differ in length")
        if embeddings is not None:
            embeddings = np.asarray(embeddings, dtype=float)
            if embeddings.ndim != 2 or len(embeddings) != len(self.boxes):
                raise ValueError("embeddings must be an (N, D) array matching the boxes")
        self.embeddings = embeddings

    @classmethod
    def empty(cls, frame: int, dim: Optional[int] = None) -> "DetectionBatch":
        emb = None if dim is None else np.zeros((0, dim))
        return cls(frame, np.zeros((0, 4)), np.zeros(0), emb)

    @classmethod
    def from_detections(cls, frame: int, detections: Sequence[Detection]) -> "DetectionBatch":
        if not detections:
            return cls.empty(frame)
        boxes = np.array([[d.box.x, d.box.y, d.box.w, d.box.h] for d in detections], dtype=float)
        conf = np.array([d.confidence for d in detections], dtype=float)
        if all(d.embedding is not None for d in detections):
            emb = np.stack([np.asarray(d.embedding, dtype=float) for d in detections])
        else:
            emb = None
        return cls(frame, boxes, conf, emb)

    def __len__(self) -> int:
        return len(self.boxes)

    def __iter__(self) -> Iterator[Detection]:
        for i in range(len(self.boxes)):
            x, y, w, h = self.boxes[i]
            emb = None if self.embeddings is None else self.embeddings[i]
            yield Detection(self.frame, BoundingBox(x, y, w, h), float(self.confidences[i]), emb)

    def __repr__(self) -> str:
        return f"DetectionBatch(frame={self.frame}, n={len(self)})"


def as_batch(frame: int, detections: "DetectionBatch | Iterable[Detection]") -> DetectionBatch:
    if isinstance(detections, DetectionBatch):
        return detections
    return DetectionBatch.from_detections(frame, list(detections))


@dataclass(frozen=True)
class AssignmentResult:
    pairs: list[tuple[int, int]]
    total_cost: float

    def __len__(self) -> int:
        return len(self.pairs)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.w * a.h + b.w * b.h - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between the rows of two ``(N, 4)`` / ``(M, 4)`` xywh arrays."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    ax2 = a[:, 0] + a[:, 2]
    ay2 = a[:, 1] + a[:, 3]
    bx2 = b[:, 0] + b[:, 2]
    by2 = b[:, 1] + b[:, 3]
    iw = np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(a[:, 0][:, None], b[:, 0][None, :])
    ih = np.minimum(ay2[:, None], by2[None, :]) - np.maximum(a[:, 1][:, None], b[:, 1][None, :])
    np.maximum(iw, 0.0, out=iw)
    np.maximum(ih, 0.0, out=ih)
    inter = iw * ih
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    return inter / union


def solve_assignment(cost, forbid=None) -> AssignmentResult:
    """Minimum-cost matching of rows to columns.

    Cells where ``forbid`` is true are never assigned. When forbidden cells make
    a ``min(rows, cols)``-sized matching impossible, the largest feasible
    matching is returned, and among those the cheapest.

    Forbidden cells are replaced by a penalty larger than the spread of any
    feasible assignment, so the solver first minimises the number of
    forbidden pairs it is forced to use; those pairs are then dropped.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if cost.size == 0:
        return AssignmentResult([], 0.0)
    if forbid is None:
        forbid = ~np.isfinite(cost)
    else:
        forbid = np.asarray(forbid, dtype=bool) | ~np.isfinite(cost)
        if forbid.shape != cost.shape:
            raise ValueError("forbid mask must match the cost matrix shape")

    allowed = ~forbid
    if not allowed.any():
        return AssignmentResult([], 0.0)
    work = cost
    if forbid.any():
        vals = cost[allowed]
        lo, hi = float(vals.min()), float(vals.max())
        k = min(cost.shape)
        penalty = (hi - lo + 1.0) * (k + 1) + abs(hi) + abs(lo)
        work = np.where(allowed, cost, penalty)

    rows, cols = linear_sum_assignment(work)
    keep = allowed[rows, cols]
    rows, cols = rows[keep], cols[keep]
    order = np.lexsort((cols, rows))
    pairs = [(int(rows[i]), int(cols[i])) for i in order]
    total = float(sum(cost[r, c] for r, c in pairs))
    return AssignmentResult(pairs, total)
