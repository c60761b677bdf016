"""Synthetic soccer sequences and detector-output degradation.

A scenario is a flat pitch seen by a panning camera: players move between
waypoints with critically damped dynamics, the camera follows their
centroid, and each frame gets a low-resolution render of the pitch texture
for camera-motion estimation.

Detector behaviour for one (detector model, video quality) pair is a
:class:`QualityProfile`.  Degradation acts on ground-truth boxes, never on
pixels: boxes are dropped, jittered, scored, and mixed with false positives.
"""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates
from scipy.special import expit, ndtr, ndtri

from .core import DetectionBatch, iou_matrix
from .motion import GrayImage, Warp

__all__ = [
    "EMBED_DIM",
    "DETECTOR_MODELS",
    "DATASET_QUALITIES",
    "REFERENCE_DETECTION_TARGETS",
    "REFERENCE_MOTP",
    "ScenarioConfig",
    "GroundTruth",
    "QualityProfile",
    "ProfileGrid",
    "OvercrowdedScenarioError",
    "CalibrationError",
    "generate_scenario",
    "degrade",
    "calibrate_profile",
    "default_profile_grid",
    "loc_sigma_for_motp",
    "measure_profile",
    "base_profile",
]

EMBED_DIM = 16
PLAYER_HEIGHT_M = 1.8
PLAYER_ASPECT = 0.4
FP_CLUTTER_FRACTION = 0.5

DETECTOR_MODELS = ("Original", "Normal", "Q40", "Q50")
DATASET_QUALITIES = ("N", "Q40", "Q50")

# (detector, dataset) -> (recall, precision) of the detector alone.
REFERENCE_DETECTION_TARGETS: dict[tuple[str, str], tuple[float, float]] = {
    ("Original", "N"): (0.246, 0.991),
    ("Normal", "N"): (0.993, 0.982),
    ("Q40", "N"): (0.994, 0.938),
    ("Q50", "N"): (0.993, 0.938),
    ("Original", "Q40"): (0.259, 0.985),
    ("Normal", "Q40"): (0.937, 0.987),
    ("Q40", "Q40"): (0.972, 0.974),
    ("Q50", "Q40"): (0.974, 0.968),
    ("Original", "Q50"): (0.131, 0.945),
    ("Normal", "Q50"): (0.823, 0.975),
    ("Q40", "Q50"): (0.914, 0.974),
    ("Q50", "Q50"): (0.938, 0.974),
}

# (detector, dataset) -> MOTP as mean (1 - IoU) over matches.
REFERENCE_MOTP: dict[tuple[str, str], float] = {
    ("Original", "N"): 0.22, ("Normal", "N"): 0.07, ("Q40", "N"): 0.10, ("Q50", "N"): 0.13,
    ("Original", "Q40"): 0.24, ("Normal", "Q40"): 0.15, ("Q40", "Q40"): 0.13, ("Q50", "Q40"): 0.13,
    ("Original", "Q50"): 0.27, ("Normal", "Q50"): 0.28, ("Q40", "Q50"): 0.18, ("Q50", "Q50"): 0.18,
}


class OvercrowdedScenarioError(ValueError):
    pass


class CalibrationError(ValueError):
    pass


# --------------------------------------------------------------------------
# Scenario generation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    n_tracks: int = 32
    n_frames: int = 462
    fps: int = 30
    pitch_length: float = 105.0
    pitch_width: float = 68.0
    image_width: int = 1920
    image_height: int = 1080
    px_per_meter: float = 20.0
    max_speed: float = 8.0
    team_split: float = 0.5
    occlusion_bias: float = 0.0
    camera_pan_gain: float = 2.0
    bg_scale: float = 24.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_tracks < 1:
            raise ValueError("n_tracks must be >= 1")
        if self.n_frames < 2:
            raise ValueError("n_frames must be >= 2")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.px_per_meter <= 0:
            raise ValueError("px_per_meter must be positive")
        if self.max_speed <= 0:
            raise ValueError("max_speed must be positive")
        if not 0.0 <= self.team_split <= 1.0:
            raise ValueError("team_split must lie in [0, 1]")
        if self.occlusion_bias < 0:
            raise ValueError("occlusion_bias must be >= 0")
        if self.bg_scale <= 0:
            raise ValueError("bg_scale must be positive")

    @property
    def duration(self) -> float:
        return self.n_frames / self.fps

    @property
    def box_size(self) -> tuple[float, float]:
        h = PLAYER_HEIGHT_M * self.px_per_meter
        return PLAYER_ASPECT * h, h


@dataclass
class GroundTruth:
    """Exact ground truth of one simulated sequence.

    Array fields are indexed ``[frame - 1, track_index]``; track ids are
    ``track_index + 1``.
    """

    config: ScenarioConfig
    positions: np.ndarray  # (F, T, 2) metres on the pitch
    boxes: np.ndarray  # (F, T, 4) image pixels, xywh
    visible: np.ndarray  # (F, T) bool
    camera: np.ndarray  # (F, 2) metres, pitch point at the image centre
    camera_warp_per_frame: list[Warp]
    teams: np.ndarray  # (T,) 0 or 1
    true_embeddings: dict[int, np.ndarray]
    team_centers: np.ndarray  # (2, D)
    backgrounds: Optional[list[GrayImage]] = field(default=None, repr=False)

    @property
    def n_frames(self) -> int:
        return self.boxes.shape[0]

    @property
    def ids(self) -> np.ndarray:
        return np.arange(1, self.boxes.shape[1] + 1)

    @property
    def tracks(self) -> list[tuple[int, dict[int, np.ndarray]]]:
        out = []
        for k, tid in enumerate(self.ids):
            frames = np.flatnonzero(self.visible[:, k]) + 1
            if len(frames):
                out.append((int(tid), {int(f): self.boxes[f - 1, k] for f in frames}))
        return out

    def per_frame(self) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        ids = self.ids
        out = {}
        for f in range(self.n_frames):
            vis = self.visible[f]
            out[f + 1] = (ids[vis], self.boxes[f, vis])
        return out

    @property
    def n_visible(self) -> int:
        return int(self.visible.sum())


def _unit_rows(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


def _formation_anchors(n: int, team: int, rng: np.random.Generator, length: float, width: float) -> np.ndarray:
    # one team per half, loosely spread over a grid of lines
    lines = max(1, int(round(math.sqrt(n))))
    per_line = math.ceil(n / lines)
    pts = []
    for i in range(n):
        line, slot = divmod(i, per_line)
        depth = (line + 0.5) / lines
        x = depth * length * 0.45 + 3.0
        y = (slot + 0.5) / per_line * width
        pts.append((x, y))
    pts = np.array(pts) + rng.normal(0.0, 2.0, size=(n, 2))
    if team == 1:
        pts[:, 0] = length - pts[:, 0]
    return pts


def _pitch_texture(cfg: ScenarioConfig, rng: np.random.Generator):
    """World-anchored raster of the pitch at background resolution."""
    res = cfg.px_per_meter / cfg.bg_scale  # raster pixels per metre
    margin = max(cfg.image_width, cfg.image_height) / cfg.px_per_meter
    x0, y0 = -margin, -margin
    nx = int(math.ceil((cfg.pitch_length + 2 * margin) * res)) + 1
    ny = int(math.ceil((cfg.pitch_width + 2 * margin) * res)) + 1
    X = x0 + np.arange(nx) / res
    Y = y0 + np.arange(ny) / res
    XX, YY = np.meshgrid(X, Y)
    tex = 0.45 + 0.08 * np.sin(2 * np.pi * XX / 10.5)
    # pitch markings: touchlines, halfway line, centre circle
    lw = 0.8
    inside = (XX > 0) & (XX < cfg.pitch_length) & (YY > 0) & (YY < cfg.pitch_width)
    lines = np.zeros_like(tex)
    for xv in (0.0, cfg.pitch_length / 2, cfg.pitch_length):
        lines += np.exp(-((XX - xv) ** 2) / (2 * lw**2))
    for yv in (0.0, cfg.pitch_width):
        lines += np.exp(-((YY - yv) ** 2) / (2 * lw**2))
    r = np.hypot(XX - cfg.pitch_length / 2, YY - cfg.pitch_width / 2)
    lines += np.exp(-((r - 9.15) ** 2) / (2 * lw**2))
    tex += 0.3 * np.clip(lines, 0, 1)
    tex = np.where(inside, tex, 0.25 + 0.1 * np.sin(YY / 3.0))
    # wear patches give texture in both directions
    n_blobs = 60
    bx = rng.uniform(x0, x0 + nx / res, n_blobs)
    by = rng.uniform(y0, y0 + ny / res, n_blobs)
    bs = rng.uniform(2.0, 6.0, n_blobs)
    ba = rng.uniform(-0.12, 0.12, n_blobs)
    for i in range(n_blobs):
        tex += ba[i] * np.exp(-((XX - bx[i]) ** 2 + (YY - by[i]) ** 2) / (2 * bs[i] ** 2))
    tex = gaussian_filter(tex, 0.7)
    return np.clip(tex, 0.0, 1.0), (x0, y0, res)


def _render_backgrounds(cfg: ScenarioConfig, camera: np.ndarray, rng: np.random.Generator) -> list[GrayImage]:
    tex, (x0, y0, res) = _pitch_texture(cfg, rng)
    bw = int(round(cfg.image_width / cfg.bg_scale))
    bh = int(round(cfg.image_height / cfg.bg_scale))
    jj, ii = np.meshgrid(np.arange(bw, dtype=float), np.arange(bh, dtype=float))
    out = []
    for cam in camera:
        # background pixel -> image pixel -> metres
        wx = (jj * cfg.bg_scale - cfg.image_width / 2) / cfg.px_per_meter + cam[0]
        wy = (ii * cfg.bg_scale - cfg.image_height / 2) / cfg.px_per_meter + cam[1]
        pix = map_coordinates(tex, [(wy - y0) * res, (wx - x0) * res], order=1, mode="nearest")
        out.append(GrayImage(bw, bh, pix, scale=cfg.bg_scale))
    return out


def generate_scenario(cfg: ScenarioConfig, render_backgrounds: bool = True) -> GroundTruth:
    """Simulate one sequence; a pure function of ``cfg`` (including its seed)."""
    if cfg.n_tracks * 4.0 > cfg.pitch_length * cfg.pitch_width:
        raise OvercrowdedScenarioError("overcrowded scenario")
    rng = np.random.default_rng(cfg.seed)
    T, F = cfg.n_tracks, cfg.n_frames
    dt = 1.0 / cfg.fps
    L, W = cfg.pitch_length, cfg.pitch_width

    n_a = int(round(T * cfg.team_split))
    teams = np.array([0] * n_a + [1] * (T - n_a))
    anchors = np.zeros((T, 2))
    if n_a:
        anchors[:n_a] = _formation_anchors(n_a, 0, rng, L, W)
    if T - n_a:
        anchors[n_a:] = _formation_anchors(T - n_a, 1, rng, L, W)

    # opponents mark each other: partner of i is the nearest unpaired opponent anchor
    partner = np.full(T, -1)
    a_idx, b_idx = np.flatnonzero(teams == 0), list(np.flatnonzero(teams == 1))
    for i in a_idx:
        if not b_idx:
            break
        d = [np.hypot(*(anchors[j] - anchors[i])) for j in b_idx]
        j = b_idx.pop(int(np.argmin(d)))
        partner[i], partner[j] = j, i

    # play focus wanders over the pitch; formations shift towards it
    focus = np.array([L / 2, W / 2])
    focus_target = focus.copy()
    focus_vel = np.zeros(2)
    next_focus = 0

    # kick-off shape: everyone starts compressed around the centre, in view
    pos = np.array([L / 2, W / 2]) + 0.45 * (anchors - np.array([L / 2, W / 2])) + rng.normal(0.0, 1.5, size=(T, 2))
    pos = np.clip(pos, 1.0, [L - 1.0, W - 1.0])
    vel = np.zeros((T, 2))
    waypoint = pos.copy()
    next_wp = rng.integers(0, int(2 * cfg.fps), size=T)
    pull = cfg.occlusion_bias / (1.0 + cfg.occlusion_bias)
    omega = 1.2  # rad/s, critically damped follower
    positions = np.zeros((F, T, 2))

    for f in range(F):
        if f >= next_focus:
            focus_target = np.array([rng.uniform(0.2 * L, 0.8 * L), rng.uniform(0.25 * W, 0.75 * W)])
            next_focus = f + int(rng.uniform(2.0, 5.0) * cfg.fps)
        acc = 0.6**2 * (focus_target - focus) - 2 * 0.6 * focus_vel
        focus_vel = focus_vel + acc * dt
        focus = focus + focus_vel * dt

        due = np.flatnonzero(next_wp <= f)
        for i in due:
            shifted = anchors[i] + 0.5 * (focus - np.array([L / 2, W / 2]))
            waypoint[i] = shifted + rng.normal(0.0, 5.0, size=2)
            next_wp[i] = f + int(rng.uniform(2.0, 5.0) * cfg.fps)
        target = waypoint.copy()
        if pull > 0:
            has = partner >= 0
            target[has] = (1 - pull) * waypoint[has] + pull * pos[partner[has]]
        target = np.clip(target, 0.5, [L - 0.5, W - 0.5])

        acc = omega**2 * (target - pos) - 2 * omega * vel
        vel = vel + acc * dt
        speed = np.linalg.norm(vel, axis=1, keepdims=True)
        vel = np.where(speed > cfg.max_speed, vel * (cfg.max_speed / np.maximum(speed, 1e-12)), vel)
        pos = pos + vel * dt
        positions[f] = pos

    centre = np.array([L / 2, W / 2])
    centroid = positions.mean(axis=1)
    camera = centre + cfg.camera_pan_gain * (centroid - centre)

    bw, bh = cfg.box_size
    cx = (positions[..., 0] - camera[:, None, 0]) * cfg.px_per_meter + cfg.image_width / 2
    cy = (positions[..., 1] - camera[:, None, 1]) * cfg.px_per_meter + cfg.image_height / 2
    boxes = np.stack(
        [cx - bw / 2, cy - bh / 2, np.full_like(cx, bw), np.full_like(cy, bh)], axis=-1
    )
    visible = (
        (boxes[..., 0] >= 0)
        & (boxes[..., 1] >= 0)
        & (boxes[..., 0] + bw <= cfg.image_width)
        & (boxes[..., 1] + bh <= cfg.image_height)
    )

    warps = [Warp.identity()]
    for f in range(1, F):
        d = (camera[f] - camera[f - 1]) * cfg.px_per_meter
        warps.append(Warp("translation", float(d[0]), float(d[1])))

    emb_rng = np.random.default_rng([cfg.seed, 1])
    team_centers = _unit_rows(emb_rng.normal(size=(2, EMBED_DIM)))
    true_emb = _unit_rows(emb_rng.normal(size=(T, EMBED_DIM)))

    backgrounds = None
    if render_backgrounds:
        backgrounds = _render_backgrounds(cfg, camera, np.random.default_rng([cfg.seed, 2]))

    return GroundTruth(
        config=cfg,
        positions=positions,
        boxes=boxes,
        visible=visible,
        camera=camera,
        camera_warp_per_frame=warps,
        teams=teams,
        true_embeddings={i + 1: true_emb[i] for i in range(T)},
        team_centers=team_centers,
        backgrounds=backgrounds,
    )


# --------------------------------------------------------------------------
# Degradation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class QualityProfile:
    """Detector-output surrogate for one (detector model, video quality) pair.

    ``miss_rate`` is the mean drop probability over visible boxes.  The
    ``miss_*`` shape parameters only redistribute misses: which players are
    hard (``miss_track_sigma``), crowding and frame-edge penalties, players
    rarely in view (``miss_periphery_weight``), and the temporal correlation
    of misses (``miss_burst``).  With all of them at
    zero every box is dropped independently with probability ``miss_rate``.

    ``hard_track_fraction`` of the players, those least often in view, get
    their confidence lowered by ``hard_conf_drop``: they are still detected
    but rarely confidently enough to be tracked.
    """

    name: str = "identity"
    miss_rate: float = 0.0
    fp_rate: float = 0.0
    loc_sigma: float = 0.0
    conf_mean: float = 0.9
    conf_sigma: float = 0.0
    fp_conf_mean: float = 0.5
    fp_conf_sigma: float = 0.1
    embed_sigma: float = 0.0
    team_similarity: float = 0.0
    miss_track_sigma: float = 0.0
    miss_occlusion_weight: float = 0.0
    miss_edge_weight: float = 0.0
    miss_periphery_weight: float = 0.0
    miss_burst: float = 0.0
    hard_track_fraction: float = 0.0
    hard_conf_drop: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ValueError("miss_rate must lie in [0, 1]")
        if self.fp_rate < 0:
            raise ValueError("fp_rate must be >= 0")
        if self.loc_sigma < 0:
            raise ValueError("loc_sigma must be >= 0")
        if not 0.0 <= self.team_similarity <= 1.0:
            raise ValueError("team_similarity must lie in [0, 1]")
        if self.conf_sigma < 0 or self.fp_conf_sigma < 0 or self.embed_sigma < 0:
            raise ValueError("noise scales must be >= 0")
        if not 0.0 <= self.miss_burst < 1.0:
            raise ValueError("miss_burst must lie in [0, 1)")
        if not 0.0 <= self.hard_track_fraction <= 1.0:
            raise ValueError("hard_track_fraction must lie in [0, 1]")


ProfileGrid = dict  # (detector_model, dataset_quality) -> QualityProfile


def _miss_features(gt: GroundTruth) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per box: crowding (max IoU with another player), frame-edge proximity, and
    the fraction of the sequence the player spends out of view."""
    F, T = gt.visible.shape
    crowd = np.zeros((F, T))
    for f in range(F):
        vis = np.flatnonzero(gt.visible[f])
        if len(vis) > 1:
            m = iou_matrix(gt.boxes[f, vis], gt.boxes[f, vis])
            np.fill_diagonal(m, 0.0)
            crowd[f, vis] = m.max(axis=1)
    cfg = gt.config
    bw, bh = cfg.box_size
    b = gt.boxes
    gap = np.minimum.reduce(
        [b[..., 0], b[..., 1], cfg.image_width - (b[..., 0] + b[..., 2]), cfg.image_height - (b[..., 1] + b[..., 3])]
    )
    edge = np.clip(1.0 - gap / (3.0 * bw), 0.0, 1.0)
    periphery = np.broadcast_to(1.0 - gt.visible.mean(axis=0), (F, T))
    return crowd, edge, periphery


def _miss_probabilities(gt: GroundTruth, profile: QualityProfile, track_effect: np.ndarray) -> np.ndarray:
    """(F, T) per-box drop probabilities whose mean over visible boxes is ``miss_rate``."""
    vis = gt.visible
    p = np.zeros(vis.shape)
    m = profile.miss_rate
    if m <= 0.0 or not vis.any():
        return p
    if m >= 1.0:
        p[vis] = 1.0
        return p
    shaped = (
        profile.miss_track_sigma
        or profile.miss_occlusion_weight
        or profile.miss_edge_weight
        or profile.miss_periphery_weight
    )
    if not shaped:
        p[vis] = m
        return p
    crowd, edge, periphery = _cached_features(gt)
    score = (
        profile.miss_track_sigma * track_effect[None, :]
        + profile.miss_occlusion_weight * crowd
        + profile.miss_edge_weight * edge
        + profile.miss_periphery_weight * periphery
    )[vis]
    lo, hi = -50.0, 50.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if expit(score + mid).mean() < m:
            lo = mid
        else:
            hi = mid
    p[vis] = expit(score + 0.5 * (lo + hi))
    return p


def _cached_features(gt: GroundTruth):
    cache = getattr(gt, "_miss_feature_cache", None)
    if cache is None:
        cache = _miss_features(gt)
        object.__setattr__(gt, "_miss_feature_cache", cache)
    return cache


def degrade(gt: GroundTruth, profile: QualityProfile, seed: int) -> list[DetectionBatch]:
    """Turn ground truth into per-frame detector output under ``profile``.

    Deterministic given ``seed``.  Returns one :class:`DetectionBatch` per
    frame, frames ``1..n_frames``.
    """
    rng = np.random.default_rng(seed)
    cfg = gt.config
    F, T = gt.visible.shape
    D = gt.team_centers.shape[1]

    # stratified normal scores keep the spread of player difficulty stable across seeds
    track_effect = ndtri((rng.permutation(T) + 0.5) / T)
    p_miss = _miss_probabilities(gt, profile, track_effect)

    # latent AR(1) per track; a box is missed when Phi(z) < p, so the
    # marginal drop rate stays exactly p whatever the burst correlation
    z = np.empty((F, T))
    z[0] = rng.standard_normal(T)
    rho = profile.miss_burst
    innov = rng.standard_normal((F, T)) * math.sqrt(1.0 - rho * rho)
    for f in range(1, F):
        z[f] = rho * z[f - 1] + innov[f]
    kept = gt.visible & (ndtr(z) >= p_miss)

    f_idx, t_idx = np.nonzero(kept)
    n = len(f_idx)
    gtb = gt.boxes[f_idx, t_idx]
    w, h = gtb[:, 2], gtb[:, 3]
    noise = rng.standard_normal((n, 4)) * profile.loc_sigma
    cx = gtb[:, 0] + w / 2 + noise[:, 0] * w
    cy = gtb[:, 1] + h / 2 + noise[:, 1] * h
    nw = np.maximum(w + noise[:, 2] * w, 0.2 * w)
    nh = np.maximum(h + noise[:, 3] * h, 0.2 * h)
    tboxes = np.stack([cx - nw / 2, cy - nh / 2, nw, nh], axis=1)
    conf_mu = np.full(T, profile.conf_mean)
    n_hard = int(round(profile.hard_track_fraction * T))
    if n_hard:
        order = np.lexsort((np.arange(T), gt.visible.mean(axis=0)))
        conf_mu[order[:n_hard]] -= profile.hard_conf_drop
    tconf = np.clip(conf_mu[t_idx] + profile.conf_sigma * rng.standard_normal(n), 0.0, 1.0)

    # false positives
    n_fp = rng.poisson(profile.fp_rate, size=F)
    total_fp = int(n_fp.sum())
    fp_frame = np.repeat(np.arange(F), n_fp)
    bw, bh = cfg.box_size
    scale = rng.uniform(0.8, 1.2, total_fp)
    fw, fh = bw * scale, bh * scale
    fx = rng.uniform(0, cfg.image_width - fw)
    fy = rng.uniform(0, cfg.image_height - fh)
    clutter = rng.random(total_fp) < FP_CLUTTER_FRACTION
    side = np.where(rng.random(total_fp) < 0.5, -1.0, 1.0)
    off_x = side * rng.uniform(0.8, 1.5, total_fp) * fw
    off_y = rng.uniform(-0.3, 0.3, total_fp) * fh
    pick = rng.random(total_fp)
    for k in np.flatnonzero(clutter):
        vis = np.flatnonzero(gt.visible[fp_frame[k]])
        if len(vis) == 0:
            continue
        src = gt.boxes[fp_frame[k], vis[int(pick[k] * len(vis))]]
        fx[k] = src[0] + off_x[k]
        fy[k] = src[1] + off_y[k]
    fx = np.clip(fx, 0, cfg.image_width - fw)
    fy = np.clip(fy, 0, cfg.image_height - fh)
    fboxes = np.stack([fx, fy, fw, fh], axis=1)
    fconf = np.clip(profile.fp_conf_mean + profile.fp_conf_sigma * rng.standard_normal(total_fp), 0.0, 1.0)
    fteam = rng.integers(0, 2, total_fp)

    # appearance lives on its own stream: changing embed_sigma leaves boxes untouched
    erng = np.random.default_rng([seed, 7])
    ts = profile.team_similarity
    noise_scale = profile.embed_sigma / math.sqrt(D)
    emb_true = np.stack([gt.true_embeddings[t + 1] for t in range(T)])
    base = ts * gt.team_centers[gt.teams[t_idx]] + (1 - ts) * emb_true[t_idx]
    temb = _safe_unit(base + noise_scale * erng.standard_normal((n, D)), erng)
    fbase = ts * gt.team_centers[fteam] + (1 - ts) * _safe_unit(erng.standard_normal((total_fp, D)), erng)
    femb = _safe_unit(fbase + noise_scale * erng.standard_normal((total_fp, D)), erng)

    all_frame = np.concatenate([f_idx, fp_frame])
    all_boxes = np.concatenate([tboxes, fboxes])
    all_conf = np.concatenate([tconf, fconf])
    all_emb = np.concatenate([temb, femb])
    shuffle_key = rng.random(len(all_frame))
    order = np.lexsort((shuffle_key, all_frame))
    all_frame, all_boxes, all_conf, all_emb = all_frame[order], all_boxes[order], all_conf[order], all_emb[order]

    bounds = np.searchsorted(all_frame, np.arange(F + 1))
    return [
        DetectionBatch(f + 1, all_boxes[bounds[f]:bounds[f + 1]], all_conf[bounds[f]:bounds[f + 1]], all_emb[bounds[f]:bounds[f + 1]])
        for f in range(F)
    ]


def _safe_unit(v: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    bad = norms[:, 0] < 1e-12
    if bad.any():
        v = v.copy()
        v[bad] = rng.standard_normal((int(bad.sum()), v.shape[1]))
        norms = np.linalg.norm(v, axis=1, keepdims=True)
    return v / norms


# --------------------------------------------------------------------------
# Calibration
# --------------------------------------------------------------------------


def _localisation_stats(loc_sigma: float, box_size: tuple[float, float], gate: float = 0.5, n: int = 20000):
    """(fraction of jittered true boxes with IoU >= gate, mean 1 - IoU over those)."""
    if loc_sigma == 0:
        return 1.0, 0.0
    rng = np.random.default_rng(12345)
    w, h = box_size
    noise = rng.standard_normal((n, 4)) * loc_sigma
    nw = np.maximum(w + noise[:, 2] * w, 0.2 * w)
    nh = np.maximum(h + noise[:, 3] * h, 0.2 * h)
    cx, cy = w / 2 + noise[:, 0] * w, h / 2 + noise[:, 1] * h
    boxes = np.stack([cx - nw / 2, cy - nh / 2, nw, nh], axis=1)
    io = iou_matrix(boxes, np.array([[0.0, 0.0, w, h]]))[:, 0]
    ok = io >= gate
    return float(ok.mean()), float((1 - io[ok]).mean()) if ok.any() else 1.0


@lru_cache(maxsize=None)
def loc_sigma_for_motp(target_motp: float, box_size: tuple[float, float] = (11.52, 28.8)) -> float:
    """Localisation noise whose matched-pair mean (1 - IoU) equals ``target_motp``."""
    if target_motp <= 0:
        return 0.0
    lo, hi = 0.0, 0.5
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if _localisation_stats(mid, box_size)[1] < target_motp:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def measure_profile(gt: GroundTruth, profile: QualityProfile, seeds: Iterable[int], gate: float = 0.5) -> tuple[float, float]:
    """Pooled detection (recall, precision) of ``profile`` over ``seeds``."""
    from .metrics import detection_counts

    tp = fp = fn = 0
    for s in seeds:
        tp_i, fp_i, fn_i = detection_counts(gt, degrade(gt, profile, s), gate)
        tp, fp, fn = tp + tp_i, fp + fp_i, fn + fn_i
    if tp + fn == 0:
        raise CalibrationError("ground truth has no visible boxes")
    return tp / (tp + fn), (tp / (tp + fp) if tp + fp else 0.0)


def calibrate_profile(
    target_recall: float,
    target_precision: float,
    base: QualityProfile,
    gt: GroundTruth,
    gate: float = 0.5,
    verify_seeds: Iterable[int] = range(20),
    tolerance: float = 0.005,
) -> QualityProfile:
    """Set ``miss_rate`` and ``fp_rate`` of ``base`` to hit detection recall/precision.

    Closed form: a kept true detection still fails the IoU gate with
    probability ``1 - q`` under localisation noise, so recall is
    ``(1 - miss_rate) * q`` and each such failure also counts as a false
    positive; the Poisson clutter makes up the rest of the false-positive
    budget.  The result is then checked by simulating ``verify_seeds``
    (pass an empty iterable to skip).
    """
    for name, v in (("recall", target_recall), ("precision", target_precision)):
        if not 0.0 < v <= 1.0:
            raise CalibrationError(f"target {name} must lie in (0, 1], got {v}")
    n_vis = gt.n_visible
    if n_vis == 0:
        raise CalibrationError("ground truth has no visible boxes")

    q, _ = _localisation_stats(base.loc_sigma, gt.config.box_size, gate)
    if target_recall > q + 1e-12:
        raise CalibrationError(
            f"target recall {target_recall:.4f} exceeds the maximum {q:.4f} reachable at loc_sigma={base.loc_sigma}"
        )
    keep = target_recall / q
    tp = target_recall * n_vis
    mislocated = keep * (1 - q) * n_vis
    fp_needed = tp * (1 - target_precision) / target_precision - mislocated
    if fp_needed < -1e-9 * n_vis:
        p_max = tp / (tp + mislocated)
        raise CalibrationError(
            f"target precision {target_precision:.4f} exceeds the maximum {p_max:.4f} reachable at loc_sigma={base.loc_sigma}"
        )
    profile = replace(
        base,
        miss_rate=min(max(1.0 - keep, 0.0), 1.0),
        fp_rate=max(fp_needed, 0.0) / gt.n_frames,
    )

    seeds = list(verify_seeds)
    if seeds:
        recall, precision = measure_profile(gt, profile, seeds, gate)
        if abs(recall - target_recall) > tolerance or abs(precision - target_precision) > tolerance:
            raise CalibrationError(
                f"simulated recall/precision {recall:.4f}/{precision:.4f} missed targets "
                f"{target_recall:.4f}/{target_precision:.4f} by more than {tolerance}"
            )
    return profile


# Degradation shape per dataset quality; every entry worsens N -> Q40 -> Q50.
_DATASET_SHAPE = {
    "N": dict(conf_mean=0.92, conf_sigma=0.05, fp_conf_mean=0.42, embed_sigma=0.15,
              miss_track_sigma=0.75, miss_occlusion_weight=3.0, miss_edge_weight=2.0,
              miss_periphery_weight=2.0, miss_burst=0.85,
              hard_track_fraction=0.03, hard_conf_drop=0.45),
    "Q40": dict(conf_mean=0.88, conf_sigma=0.10, fp_conf_mean=0.50, embed_sigma=0.25,
                miss_track_sigma=0.9, miss_occlusion_weight=4.5, miss_edge_weight=2.5,
                miss_periphery_weight=3.0, miss_burst=0.88,
                hard_track_fraction=0.06, hard_conf_drop=0.45),
    "Q50": dict(conf_mean=0.82, conf_sigma=0.15, fp_conf_mean=0.58, embed_sigma=0.35,
                miss_track_sigma=1.0, miss_occlusion_weight=6.0, miss_edge_weight=3.0,
                miss_periphery_weight=4.0, miss_burst=0.9,
                hard_track_fraction=0.16, hard_conf_drop=0.45),
}
# the untrained detector misses whole players rather than scattered frames
_ORIGINAL_SHAPE = dict(miss_track_sigma=3.5, miss_occlusion_weight=1.0, miss_edge_weight=1.0)
TEAM_SIMILARITY = 0.5


def base_profile(detector: str, dataset: str, box_size: tuple[float, float]) -> QualityProfile:
    shape = dict(_DATASET_SHAPE[dataset])
    if detector == "Original":
        shape.update(_ORIGINAL_SHAPE)
    return QualityProfile(
        name=f"{detector}/{dataset}",
        loc_sigma=loc_sigma_for_motp(REFERENCE_MOTP[(detector, dataset)], box_size),
        team_similarity=TEAM_SIMILARITY,
        **shape,
    )


def default_profile_grid(
    gt: GroundTruth,
    overrides: Optional[dict] = None,
    verify_seeds: Iterable[int] = (),
) -> ProfileGrid:
    """Calibrate all twelve (detector, dataset) cells against ``gt``.

    ``overrides`` maps ``(detector, dataset)`` to a dict of profile fields
    applied before calibration; ``recall``/``precision`` replace the targets
    and an explicit ``miss_rate``/``fp_rate`` is kept as given.  Simulation checks are skipped unless
    ``verify_seeds`` is given.
    """
    verify_seeds = list(verify_seeds)
    grid: ProfileGrid = {}
    for det in DETECTOR_MODELS:
        for ds in DATASET_QUALITIES:
            base = base_profile(det, ds, gt.config.box_size)
            recall, precision = REFERENCE_DETECTION_TARGETS[(det, ds)]
            fields = dict((overrides or {}).get((det, ds), {}))
            recall = fields.pop("recall", recall)
            precision = fields.pop("precision", precision)
            pinned = {k: fields.pop(k) for k in ("miss_rate", "fp_rate") if k in fields}
            base = replace(base, **fields)
            profile = calibrate_profile(recall, precision, base, gt, verify_seeds=verify_seeds)
            grid[(det, ds)] = replace(profile, **pinned) if pinned else profile
    return grid
