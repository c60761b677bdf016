"""Tracking-by-detection in the Tracktor style.

Each frame, active tracks are moved by the motion model, then *refined*:
matched one-to-one to detections by IoU, adopting the detection's box and
score.  Tracks that find no detection coast on their prediction with a
decaying score.  Low-score tracks and the weaker track of any heavily
overlapping pair are parked as inactive; an inactive track can be revived
by appearance (ReID) within ``reid_patience`` frames, after which it is
killed for good.  Leftover confident detections start new tracks.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import BoundingBox, Detection, DetectionBatch, as_batch, iou_matrix, solve_assignment
from .motion import GrayImage, Warp, ecc_align

__all__ = [
    "ACTIVE",
    "INACTIVE",
    "KILLED",
    "MOTION_MODELS",
    "Track",
    "TrackerConfig",
    "TrackerOutput",
    "TrackerState",
    "MotionInputsError",
    "NonMonotonicFrameError",
    "DegenerateEmbeddingError",
    "embedding_distance",
    "step",
    "run_sequence",
]

ACTIVE = "active"
INACTIVE = "inactive"
KILLED = "killed"
MOTION_MODELS = ("none", "cva", "cmc", "cva+cmc")
EMBED_BUFFER = 10


class NonMonotonicFrameError(ValueError):
    pass


class MotionInputsError(ValueError):
    pass


class DegenerateEmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class TrackerConfig:
    sigma_active: float = 0.5
    lambda_new: float = 0.6
    lambda_new_iou: float = 0.3
    tau_refine: float = 0.3
    gamma_decay: float = 0.9
    lambda_nms: float = 0.6
    motion: str = "none"
    reid_enabled: bool = True
    reid_patience: int = 30
    tau_reid: float = 0.7

    def __post_init__(self) -> None:
        for name in ("sigma_active", "lambda_new", "lambda_new_iou", "tau_refine", "lambda_nms"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 < self.gamma_decay < 1.0:
            raise ValueError("gamma_decay must lie in (0, 1)")
        if self.motion not in MOTION_MODELS:
            raise ValueError(f"motion must be one of {MOTION_MODELS}, got {self.motion!r}")
        if self.reid_patience < 1:
            raise ValueError("reid_patience must be >= 1")
        if not 0.0 <= self.tau_reid <= 2.0:
            raise ValueError("tau_reid must lie in [0, 2]")

    @property
    def uses_cmc(self) -> bool:
        return "cmc" in self.motion

    @property
    def uses_cva(self) -> bool:
        return "cva" in self.motion


@dataclass
class Track:
    id: int
    boxes: dict[int, np.ndarray] = field(default_factory=dict)
    scores: dict[int, float] = field(default_factory=dict)
    status: str = ACTIVE
    inactive_since: Optional[int] = None
    last_embeddings: deque = field(default_factory=lambda: deque(maxlen=EMBED_BUFFER))
    # motion state in current-frame coordinates
    box: np.ndarray = field(default=None, repr=False)
    prev_box: Optional[np.ndarray] = field(default=None, repr=False)
    score: float = 0.0
    _appearance: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def add_embedding(self, emb: np.ndarray) -> None:
        self.last_embeddings.append(emb)
        self._appearance = None

    def appearance(self) -> Optional[np.ndarray]:
        """Unit mean of the buffered embeddings, or None if there is none."""
        if self._appearance is None and self.last_embeddings:
            mean = np.add.reduce(list(self.last_embeddings))
            norm = math.sqrt(float(mean @ mean))
            if norm >= 1e-12:
                self._appearance = mean / norm
        return self._appearance

    def history(self) -> list[BoundingBox]:
        return [BoundingBox(*map(float, self.boxes[f])) for f in sorted(self.boxes)]


@dataclass
class TrackerOutput:
    """Per-frame tracker results plus the lifecycle event log.

    ``frames[f]`` is ``(ids, boxes, scores)`` with ``boxes`` an ``(n, 4)``
    xywh array; ``events`` holds ``(frame, kind, track_id)`` tuples with kind
    one of ``spawn``, ``park``, ``revive``, ``kill``.
    """

    frames: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=dict)
    events: list[tuple[int, str, int]] = field(default_factory=list)

    def per_frame(self) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        return {f: (ids, boxes) for f, (ids, boxes, _) in self.frames.items()}

    def records(self) -> Iterable[tuple[int, int, BoundingBox, float]]:
        for f in sorted(self.frames):
            ids, boxes, scores = self.frames[f]
            for k in np.argsort(ids, kind="stable"):
                yield f, int(ids[k]), BoundingBox(*map(float, boxes[k])), float(scores[k])

    def track_ids(self) -> list[int]:
        out: set[int] = set()
        for ids, _, _ in self.frames.values():
            out.update(ids.tolist())
        return sorted(out)

    def trajectories(self) -> dict[int, dict[int, np.ndarray]]:
        out: dict[int, dict[int, np.ndarray]] = {}
        for f in sorted(self.frames):
            ids, boxes, _ = self.frames[f]
            for tid, box in zip(ids.tolist(), boxes):
                out.setdefault(tid, {})[f] = box
        return out

    @property
    def n_boxes(self) -> int:
        return sum(len(v[0]) for v in self.frames.values())


@dataclass
class TrackerState:
    config: TrackerConfig
    tracks: dict[int, Track] = field(default_factory=dict)
    active: list[int] = field(default_factory=list)
    inactive: list[int] = field(default_factory=list)
    next_id: int = 1
    last_frame: Optional[int] = None
    output: TrackerOutput = field(default_factory=TrackerOutput)

    @classmethod
    def create(cls, config: Optional[TrackerConfig] = None) -> "TrackerState":
        return cls(config or TrackerConfig())


def embedding_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between two unit appearance vectors, in [0, 2]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.linalg.norm(a) < 1e-12 or np.linalg.norm(b) < 1e-12:
        raise DegenerateEmbeddingError("degenerate embedding")
    cos = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return math.sqrt(max(0.0, 2.0 - 2.0 * min(1.0, cos)))


def _embedding_distances(tracks: np.ndarray, dets: np.ndarray) -> np.ndarray:
    cos = np.clip(tracks @ dets.T, -1.0, 1.0)
    return np.sqrt(np.maximum(0.0, 2.0 - 2.0 * cos))


def _camera_warp(cfg: TrackerConfig, bg_prev, bg_cur, warp: Optional[Warp]) -> Optional[Warp]:
    if warp is not None:
        return warp
    if bg_prev is None or bg_cur is None:
        raise MotionInputsError("motion inputs required")
    w = ecc_align(bg_prev, bg_cur)
    return w.scaled(bg_cur.scale) if bg_cur.scale != 1.0 else w


def _shift_boxes(boxes: np.ndarray, warp: Warp) -> np.ndarray:
    """Move xywh boxes from the previous frame into the current one."""
    fwd = warp.inverse()
    cx = boxes[:, 0] + boxes[:, 2] / 2
    cy = boxes[:, 1] + boxes[:, 3] / 2
    nx, ny = fwd.apply(cx, cy)
    out = boxes.copy()
    out[:, 0] = nx - boxes[:, 2] / 2
    out[:, 1] = ny - boxes[:, 3] / 2
    return out


def step(
    state: TrackerState,
    frame: int,
    detections: "DetectionBatch | Sequence[Detection]",
    bg_prev: Optional[GrayImage] = None,
    bg_cur: Optional[GrayImage] = None,
    warp: Optional[Warp] = None,
) -> TrackerState:
    """Advance ``state`` by one frame, in place, and return it.

    ``warp`` may carry a precomputed camera warp (same convention as
    :func:`~pitchtrack.motion.ecc_align` on ``(bg_prev, bg_cur)``, in image
    pixels) instead of the two backgrounds.
    """
    cfg = state.config
    if state.last_frame is not None and frame <= state.last_frame:
        raise NonMonotonicFrameError(f"non-monotonic frame: {frame} after {state.last_frame}")
    dets = as_batch(frame, detections)
    tracks = state.tracks
    events = state.output.events

    active = [tracks[i] for i in state.active]

    # 1-2. motion
    if cfg.uses_cmc and active:
        cam = _camera_warp(cfg, bg_prev, bg_cur, warp)
        if active and not cam.is_identity:
            cur = _shift_boxes(np.array([t.box for t in active]), cam)
            for t, b in zip(active, cur):
                t.box = b
            with_prev = [t for t in active if t.prev_box is not None]
            if with_prev:
                prev = _shift_boxes(np.array([t.prev_box for t in with_prev]), cam)
                for t, b in zip(with_prev, prev):
                    t.prev_box = b
    if active:
        pred = np.array([t.box for t in active])
        if cfg.uses_cva:
            for k, t in enumerate(active):
                if t.prev_box is not None:
                    d = (t.box[:2] + t.box[2:] / 2) - (t.prev_box[:2] + t.prev_box[2:] / 2)
                    pred[k, :2] = t.box[:2] + d
    else:
        pred = np.zeros((0, 4))

    # 3. refinement
    n_det = len(dets)
    det_used = np.zeros(n_det, dtype=bool)
    refined = np.zeros(len(active), dtype=bool)
    if active and n_det:
        ious = iou_matrix(pred, dets.boxes)
        allowed = ious >= cfg.tau_refine
        if allowed.any():
            for r, c in solve_assignment(1.0 - ious, ~allowed).pairs:
                t = active[r]
                t.prev_box = t.box if cfg.uses_cva else None
                t.box = dets.boxes[c].copy()
                t.score = float(dets.confidences[c])
                if dets.embeddings is not None:
                    t.add_embedding(dets.embeddings[c])
                refined[r] = True
                det_used[c] = True
    for k, t in enumerate(active):
        if not refined[k]:
            t.prev_box = t.box if cfg.uses_cva else None
            t.box = pred[k].copy()
            t.score *= cfg.gamma_decay

    # 4. park weak tracks, then inter-track NMS
    still: list[Track] = []
    for t in active:
        if t.score < cfg.sigma_active:
            _park(t, frame, state, events)
        else:
            still.append(t)
    if len(still) > 1:
        boxes = np.array([t.box for t in still])
        ov = iou_matrix(boxes, boxes)
        np.fill_diagonal(ov, 0.0)
        if (ov > cfg.lambda_nms).any():
            order = sorted(range(len(still)), key=lambda k: (-still[k].score, still[k].id))
            keep: list[int] = []
            for k in order:
                if all(ov[k, j] <= cfg.lambda_nms for j in keep):
                    keep.append(k)
                else:
                    _park(still[k], frame, state, events)
            keep_set = set(keep)
            still = [t for k, t in enumerate(still) if k in keep_set]
    state.active = [t.id for t in still]

    # candidates for revival / spawning: confident, unexplained detections
    cand = np.flatnonzero(~det_used & (dets.confidences >= cfg.lambda_new))
    if len(cand) and still:
        ov = iou_matrix(dets.boxes[cand], np.array([t.box for t in still]))
        cand = cand[ov.max(axis=1) < cfg.lambda_new_iou]

    # 5. re-identification
    if cfg.reid_enabled and len(cand) and state.inactive and dets.embeddings is not None:
        pool = [
            tracks[i]
            for i in state.inactive
            if frame - tracks[i].inactive_since <= cfg.reid_patience
        ]
        pool_app = [(t, t.appearance()) for t in pool]
        pool_app = [(t, a) for t, a in pool_app if a is not None]
        if pool_app:
            tvecs = np.array([a for _, a in pool_app])
            dist = _embedding_distances(tvecs, dets.embeddings[cand])
            allowed = dist <= cfg.tau_reid
            if allowed.any():
                revived = set()
                for r, c in solve_assignment(dist, ~allowed).pairs:
                    t = pool_app[r][0]
                    d = cand[c]
                    t.status = ACTIVE
                    t.inactive_since = None
                    t.box = dets.boxes[d].copy()
                    t.prev_box = None
                    t.score = float(dets.confidences[d])
                    t.add_embedding(dets.embeddings[d])
                    state.inactive.remove(t.id)
                    state.active.append(t.id)
                    events.append((frame, "revive", t.id))
                    revived.add(d)
                cand = np.array([d for d in cand if d not in revived], dtype=int)

    # 6. spawn
    for d in cand.tolist():
        t = Track(id=state.next_id)
        state.next_id += 1
        t.box = dets.boxes[d].copy()
        t.score = float(dets.confidences[d])
        if dets.embeddings is not None:
            t.add_embedding(dets.embeddings[d])
        tracks[t.id] = t
        state.active.append(t.id)
        events.append((frame, "spawn", t.id))

    # 7. expire inactive tracks
    if state.inactive:
        keep_ids = []
        for i in state.inactive:
            t = tracks[i]
            if frame - t.inactive_since > cfg.reid_patience:
                t.status = KILLED
                events.append((frame, "kill", t.id))
            else:
                keep_ids.append(i)
        state.inactive = keep_ids

    # record
    ids = np.array(state.active, dtype=int)
    if len(ids):
        act = [tracks[i] for i in state.active]
        boxes = np.array([t.box for t in act])
        scores = np.array([t.score for t in act])
        for t, b, s in zip(act, boxes, scores):
            t.boxes[frame] = b
            t.scores[frame] = float(s)
    else:
        boxes = np.zeros((0, 4))
        scores = np.zeros(0)
    state.output.frames[frame] = (ids, boxes, scores)
    state.last_frame = frame
    return state


def _park(t: Track, frame: int, state: TrackerState, events: list) -> None:
    t.status = INACTIVE
    t.inactive_since = frame
    t.prev_box = None
    state.inactive.append(t.id)
    events.append((frame, "park", t.id))


def run_sequence(
    gt_backgrounds: Optional[Sequence[GrayImage]],
    detections_per_frame,
    config: Optional[TrackerConfig] = None,
    warps: Optional[Sequence[Warp]] = None,
) -> TrackerOutput:
    """Track a whole sequence.

    ``detections_per_frame`` is a sequence of :class:`DetectionBatch` (or of
    lists of :class:`Detection`, taken as frames ``1..n``) or a mapping from
    frame to detections.  ``warps[k]`` (optional) replaces ECC on the
    background pair ending at the k-th frame.
    """
    config = config or TrackerConfig()
    if isinstance(detections_per_frame, dict):
        items = sorted(detections_per_frame.items())
    else:
        items = []
        for k, d in enumerate(detections_per_frame):
            frame = d.frame if isinstance(d, DetectionBatch) else k + 1
            items.append((frame, d))
    if not items:
        raise ValueError("run_sequence needs a nonempty frame range")
    if config.uses_cmc and gt_backgrounds is None and warps is None:
        raise MotionInputsError("motion inputs required")

    state = TrackerState.create(config)
    for k, (frame, dets) in enumerate(items):
        bg_prev = bg_cur = warp = None
        if config.uses_cmc and k > 0:
            if warps is not None:
                warp = warps[k]
            else:
                bg_prev, bg_cur = gt_backgrounds[k - 1], gt_backgrounds[k]
        step(state, frame, dets, bg_prev, bg_cur, warp)
    return state.output
