"""Detector x ReID x dataset experiment grid.

One grid seed fixes the ground truth, the camera warps and the degraded
detections of every (detector, dataset) cell; all ReID rows of a cell
track the same boxes and differ only in appearance noise, so rows are
paired comparisons.

Work is split into two kinds of job: ECC camera estimation once per seed,
then one job per (seed, dataset, detector) running all ReID rows.  Jobs
are pure functions of their arguments, and results are keyed by cell, so
the output does not depend on completion order or the number of workers.
"""

from __future__ import annotations

import csv
import io as _io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .io import REID_MODELS, RunConfig
from .metrics import MetricsReport, detection_counts, evaluate
from .motion import Warp, ecc_align
from .simulate import (
    DATASET_QUALITIES,
    DETECTOR_MODELS,
    GroundTruth,
    ScenarioConfig,
    degrade,
    default_profile_grid,
    generate_scenario,
)
from .tracker import TrackerConfig, TrackerOutput, run_sequence

__all__ = [
    "CellResult",
    "GridResult",
    "WITHOUT",
    "REID_ROWS",
    "camera_warps",
    "degrade_seed",
    "run_cell",
    "run_grid",
    "check_grid",
]

WITHOUT = "Without"
REID_ROWS = (WITHOUT,) + REID_MODELS
METRIC_FIELDS = ("mota", "motp", "fp", "fn", "idsw", "gt_total", "matches", "mt", "pt", "ml", "recall", "precision")


def degrade_seed(seed: int, dataset: str) -> int:
    # detectors on one dataset share the random stream: paired columns
    return seed * 16 + DATASET_QUALITIES.index(dataset) + 1


def camera_warps(scenario: ScenarioConfig, seed: int, motion: str) -> Optional[list[Warp]]:
    """Frame-to-frame warps estimated by ECC on the rendered backgrounds."""
    if "cmc" not in motion:
        return None
    gt = generate_scenario(replace(scenario, seed=seed))
    bg = gt.backgrounds
    warps = [Warp.identity()]
    for k in range(1, len(bg)):
        w = ecc_align(bg[k - 1], bg[k])
        warps.append(w.scaled(bg[k].scale) if bg[k].scale != 1.0 else w)
    return warps


@dataclass(frozen=True)
class CellResult:
    seed: int
    dataset: str
    detector: str
    reid: str
    report: MetricsReport

    def row(self) -> dict:
        return {"dataset": self.dataset, "reid": self.reid, "detector": self.detector, "seed": self.seed,
                **self.report.as_row()}


def _cell_profiles(gt: GroundTruth, cfg: RunConfig):
    return default_profile_grid(gt, overrides=dict(cfg.profiles))


def run_cell(
    cfg: RunConfig,
    seed: int,
    dataset: str,
    detector: str,
    reid_rows: Sequence[str] = REID_ROWS,
    warps: Optional[Sequence[Warp]] = None,
    keep_output: Optional[str] = None,
) -> tuple[list[CellResult], tuple[int, int, int], Optional[TrackerOutput]]:
    """Track one (seed, dataset, detector) cell under each ReID row.

    Returns the per-row results, the detection-level (tp, fp, fn) and, if
    ``keep_output`` names a row, that row's tracker output.
    """
    motion = cfg.experiment.motion
    gt = generate_scenario(replace(cfg.scenario, seed=seed), render_backgrounds=False)
    profile = _cell_profiles(gt, cfg)[(detector, dataset)]
    dseed = degrade_seed(seed, dataset)
    base_dets = degrade(gt, profile, dseed)
    counts = detection_counts(gt, base_dets)

    by_scale = {1.0: base_dets}
    results = []
    kept = None
    for row in reid_rows:
        if row == WITHOUT:
            dets = base_dets
            tcfg = replace(cfg.tracker, reid_enabled=False, motion=motion)
        else:
            scale = cfg.reid_noise[row]
            if scale not in by_scale:
                by_scale[scale] = degrade(gt, replace(profile, embed_sigma=profile.embed_sigma * scale), dseed)
            dets = by_scale[scale]
            tcfg = replace(cfg.tracker, reid_enabled=True, motion=motion)
        out = run_sequence(None, dets, tcfg, warps=warps)
        results.append(CellResult(seed, dataset, detector, row, evaluate(gt, out)))
        if row == keep_output:
            kept = out
    return results, counts, kept


def _seed_job(args):
    cfg, seed = args
    return seed, camera_warps(cfg.scenario, seed, cfg.experiment.motion)


def _cell_job(args):
    cfg, seed, dataset, detector, warps, trail_row = args
    results, counts, out = run_cell(cfg, seed, dataset, detector, cfg.experiment.reid, warps, trail_row)
    return (seed, dataset, detector), results, counts, out


@dataclass
class GridResult:
    config: RunConfig
    cells: list[CellResult]
    detection: dict[tuple[int, str, str], tuple[int, int, int]]
    trails: dict[int, TrackerOutput]

    def values(self, dataset: str, reid: str, detector: str, metric: str) -> list[float]:
        return [
            float(c.report.as_row()[metric])
            for c in self.cells
            if c.dataset == dataset and c.reid == reid and c.detector == detector
        ]

    def mean(self, dataset: str, reid: str, detector: str, metric: str) -> float:
        v = self.values(dataset, reid, detector, metric)
        return float(np.mean(v)) if v else math.nan

    def detection_pr(self, dataset: str, detector: str) -> tuple[float, float]:
        """Per-seed mean of detector-level recall and precision."""
        rs, ps = [], []
        for (s, ds, det), (tp, fp, fn) in self.detection.items():
            if ds == dataset and det == detector:
                rs.append(tp / (tp + fn) if tp + fn else math.nan)
                ps.append(tp / (tp + fp) if tp + fp else 0.0)
        return float(np.mean(rs)), float(np.mean(ps))


TRAIL_CELL = ("N", "Normal", "Normal")  # dataset, detector, reid row


def run_grid(cfg: RunConfig, jobs: Optional[int] = None, trails: bool = False,
             job_times: Optional[dict] = None) -> GridResult:
    """Run every cell of the grid.

    With ``jobs == 1`` everything runs in this process, and ``job_times``
    (if given) receives the wall time of each job under ``"seed"`` and
    ``"cell"``, in submission order.
    """
    exp = cfg.experiment
    n_jobs = jobs if jobs is not None else exp.jobs
    if n_jobs <= 0:
        n_jobs = os.cpu_count() or 1
    seed_args = [(cfg, s) for s in exp.seeds]

    def cell_args(warps_by_seed):
        out = []
        for s in exp.seeds:
            for ds in exp.datasets:
                for det in exp.detectors:
                    keep = TRAIL_CELL[2] if trails and (ds, det) == TRAIL_CELL[:2] else None
                    out.append((cfg, s, ds, det, warps_by_seed[s], keep))
        return out

    if n_jobs == 1:
        timed = _timed(job_times)
        warps_by_seed = dict(timed("seed", _seed_job, seed_args))
        outputs = timed("cell", _cell_job, cell_args(warps_by_seed))
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            warps_by_seed = dict(pool.map(_seed_job, seed_args))
            outputs = list(pool.map(_cell_job, cell_args(warps_by_seed)))

    cells, detection, trail_out = [], {}, {}
    for key, results, counts, out in outputs:
        cells.extend(results)
        detection[key] = counts
        if out is not None:
            trail_out[key[0]] = out
    order = {name: i for i, name in enumerate(REID_ROWS)}
    cells.sort(key=lambda c: (DATASET_QUALITIES.index(c.dataset), order[c.reid], DETECTOR_MODELS.index(c.detector), c.seed))
    return GridResult(cfg, cells, detection, trail_out)


def _timed(sink: Optional[dict]):
    def run(kind, fn, args):
        out = []
        for a in args:
            t0 = time.perf_counter()
            out.append(fn(a))
            if sink is not None:
                sink.setdefault(kind, []).append(time.perf_counter() - t0)
        return out
    return run


# --------------------------------------------------------------------------
# invariant checks


def check_grid(result: GridResult, tolerance: float = 1.0) -> list[str]:
    """Return the violated ordering/monotonicity checks (empty when all hold).

    * the Original detector column is the strict minimum of every MOTA row;
    * the detector trained on a dataset's quality is that row's maximum,
      within ``tolerance`` MOTA points;
    * each trained detector's MOTA does not rise as the dataset degrades.
    """
    exp = result.config.experiment
    failures = []
    for ds in exp.datasets:
        for row in exp.reid:
            mota = {det: 100 * result.mean(ds, row, det, "mota") for det in exp.detectors}
            if "Original" in mota:
                others = [v for d, v in mota.items() if d != "Original"]
                if others and not mota["Original"] < min(others):
                    failures.append(f"{ds}/{row}: Original column {mota['Original']:.2f} is not the row minimum")
            matched = "Normal" if ds == "N" else ds
            if matched in mota and mota[matched] < max(mota.values()) - tolerance:
                best = max(mota, key=mota.get)
                failures.append(
                    f"{ds}/{row}: matched detector {matched} at {mota[matched]:.2f} trails {best} at {mota[best]:.2f}"
                )
    ordered = [ds for ds in DATASET_QUALITIES if ds in exp.datasets]
    for det in exp.detectors:
        if det == "Original":
            continue
        for row in exp.reid:
            vals = [100 * result.mean(ds, row, det, "mota") for ds in ordered]
            for (a, va), (b, vb) in zip(zip(ordered, vals), zip(ordered[1:], vals[1:])):
                if va < vb:
                    failures.append(f"{det}/{row}: MOTA rises from {a} ({va:.2f}) to {b} ({vb:.2f})")
    return failures


# --------------------------------------------------------------------------
# rendering


def _fmt(v: float, digits: int) -> str:
    return "nan" if math.isnan(v) else f"{v:.{digits}f}"


def _csv_text(rows: Iterable[Sequence]) -> str:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def table_rows(result: GridResult, dataset: str, metric: str) -> list[list[str]]:
    exp = result.config.experiment
    scale, digits = {"mota": (100.0, 1), "motp": (1.0, 2), "mt": (1.0, 1), "pt": (1.0, 1), "ml": (1.0, 1),
                     "idsw": (1.0, 1)}[metric]
    rows = [["reid"] + list(exp.detectors)]
    for row in exp.reid:
        rows.append([row] + [_fmt(scale * result.mean(dataset, row, det, metric), digits) for det in exp.detectors])
    return rows


def mtptml_rows(result: GridResult, dataset: str) -> list[list[str]]:
    exp = result.config.experiment
    rows = [["reid"] + list(exp.detectors)]
    for row in exp.reid:
        cells = []
        for det in exp.detectors:
            cells.append("/".join(_fmt(result.mean(dataset, row, det, m), 1) for m in ("mt", "pt", "ml")))
        rows.append([row] + cells)
    return rows


def detection_rows(result: GridResult, dataset: str) -> list[list[str]]:
    exp = result.config.experiment
    rec, prc = ["Recall"], ["Precision"]
    for det in exp.detectors:
        r, p = result.detection_pr(dataset, det)
        rec.append(_fmt(100 * r, 1))
        prc.append(_fmt(100 * p, 1))
    return [["metric"] + list(exp.detectors), rec, prc]


def render_aligned(title: str, rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = [title]
    for k, r in enumerate(rows):
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def cells_csv(result: GridResult) -> str:
    header = ["dataset", "reid", "detector", "seed"] + list(METRIC_FIELDS)
    rows = [header]
    for c in result.cells:
        r = c.row()
        rows.append([r["dataset"], r["reid"], r["detector"], r["seed"]]
                    + [_fmt(r[m], 6) if isinstance(r[m], float) else r[m] for m in METRIC_FIELDS])
    return _csv_text(rows)


def summary_csv(result: GridResult) -> str:
    exp = result.config.experiment
    metrics = ("mota", "motp", "idsw", "mt", "pt", "ml", "recall", "precision")
    header = ["dataset", "reid", "detector", "n_seeds"]
    for m in metrics:
        header += [f"{m}_mean", f"{m}_std"]
    rows = [header]
    for ds in exp.datasets:
        for row in exp.reid:
            for det in exp.detectors:
                line = [ds, row, det, len(exp.seeds)]
                for m in metrics:
                    v = np.array(result.values(ds, row, det, m))
                    sd = float(v.std(ddof=1)) if len(v) > 1 else 0.0
                    line += [_fmt(float(v.mean()), 6), _fmt(sd, 6)]
                rows.append(line)
    return _csv_text(rows)


def trails_csv(result: GridResult, every: int) -> str:
    rows = [["seed", "frame", "id", "cx", "cy"]]
    for seed in sorted(result.trails):
        out = result.trails[seed]
        for f in sorted(out.frames):
            if (f - 1) % every:
                continue
            ids, boxes, _ = out.frames[f]
            for k in np.argsort(ids, kind="stable"):
                x, y, w, h = boxes[k]
                rows.append([seed, f, int(ids[k]), f"{x + w / 2:.2f}", f"{y + h / 2:.2f}"])
    return _csv_text(rows)


def write_outputs(result: GridResult, out_dir: str, dump_trails: Optional[int] = None) -> list[str]:
    """Write every table as CSV plus ``tables.txt``; return the file names."""
    os.makedirs(out_dir, exist_ok=True)
    exp = result.config.experiment
    files: dict[str, str] = {"cells.csv": cells_csv(result), "summary.csv": summary_csv(result)}
    text = []
    for ds in exp.datasets:
        for metric, title in (("mota", "MOTA"), ("motp", "MOTP"), ("idsw", "IDSW")):
            rows = table_rows(result, ds, metric)
            files[f"{metric}_{ds}.csv"] = _csv_text(rows)
            text.append(render_aligned(f"{title} on dataset {ds}", rows))
        rows = mtptml_rows(result, ds)
        files[f"mtptml_{ds}.csv"] = _csv_text(rows)
        text.append(render_aligned(f"MT/PT/ML on dataset {ds}", rows))
        rows = detection_rows(result, ds)
        files[f"detection_{ds}.csv"] = _csv_text(rows)
        text.append(render_aligned(f"Detector recall/precision on dataset {ds}", rows))
    files["tables.txt"] = "\n".join(text)
    if dump_trails:
        files["trails.csv"] = trails_csv(result, dump_trails)
    for name, content in files.items():
        with open(os.path.join(out_dir, name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(content)
    return sorted(files)
