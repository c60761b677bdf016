"""Command-line entry point: ``pitchtrack generate | track | grid``.

Exit codes: 0 success, 1 usage or input error, 2 a ``--check`` invariant
failed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .experiment import check_grid, degrade_seed, run_grid, write_outputs
from .io import ConfigError, MotFormatError, RunConfig, parse_seeds, read_config, read_mot, save_embeddings, write_mot
from .metrics import EmptyGroundTruthError, evaluate
from .motion import GrayImage
from .simulate import DATASET_QUALITIES, DETECTOR_MODELS, degrade, default_profile_grid, generate_scenario
from .tracker import MOTION_MODELS, MotionInputsError, run_sequence

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CHECK = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits 2 by default
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def det_filename(detector: str, dataset: str) -> str:
    return f"det_{detector}_{dataset}.txt"


def _seeds_arg(text: str) -> tuple[int, ...]:
    try:
        return parse_seeds(text)
    except ConfigError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _load_config(args) -> RunConfig:
    cfg = read_config(args.config)
    exp = cfg.experiment
    if getattr(args, "seeds", None) is not None:
        exp = replace(exp, seeds=args.seeds)
    if getattr(args, "motion", None) is not None:
        exp = replace(exp, motion=args.motion)
    if getattr(args, "jobs", None) is not None:
        exp = replace(exp, jobs=args.jobs)
    tracker = cfg.tracker
    if getattr(args, "no_reid", False):
        tracker = replace(tracker, reid_enabled=False)
        exp = replace(exp, reid=tuple(r for r in exp.reid if r == "Without") or ("Without",))
    return replace(cfg, experiment=exp, tracker=tracker)


# --------------------------------------------------------------------------
# generate


def cmd_generate(cfg: RunConfig, seed: int, out_dir: str) -> list[str]:
    """Write ground truth, the twelve detection files and a manifest for ``seed``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gt = generate_scenario(replace(cfg.scenario, seed=seed))
    grid = default_profile_grid(gt, overrides=dict(cfg.profiles))
    written = ["gt.txt"]
    write_mot(gt, out / "gt.txt")
    for ds in DATASET_QUALITIES:
        for det in DETECTOR_MODELS:
            dets = degrade(gt, grid[(det, ds)], degrade_seed(seed, ds))
            name = det_filename(det, ds)
            write_mot(dets, out / name)
            emb_name = name[:-4] + ".emb.npy"
            save_embeddings(dets, out / emb_name)
            written += [name, emb_name]
    bg = np.stack([b.pixels for b in gt.backgrounds]).astype("<f4")
    np.save(out / "backgrounds.npy", bg, allow_pickle=False)
    written.append("backgrounds.npy")
    manifest = {
        "seed": seed,
        "scenario": asdict(replace(cfg.scenario, seed=seed)),
        "background_scale": gt.backgrounds[0].scale,
        "profiles": {f"{d}/{q}": asdict(p) for (d, q), p in sorted(grid.items())},
        "files": sorted(written + ["manifest.json"]),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return sorted(written + ["manifest.json"])


# --------------------------------------------------------------------------
# track


def _load_backgrounds(path: str) -> list[GrayImage]:
    arr = np.load(path, allow_pickle=False)
    scale = 1.0
    manifest = Path(path).with_name("manifest.json")
    if manifest.exists():
        scale = float(json.loads(manifest.read_text(encoding="utf-8")).get("background_scale", 1.0))
    return [GrayImage.from_array(a.astype(float), scale) for a in arr]


def cmd_track(cfg: RunConfig, det_file: str, out_file: str, gt_file: Optional[str] = None,
              embeddings: Optional[str] = None, backgrounds: Optional[str] = None):
    for p in (det_file, gt_file, embeddings, backgrounds):
        if p is not None and not os.path.exists(p):
            raise UsageError(f"no such file: {p}")
    if embeddings is None:
        guess = det_file[:-4] + ".emb.npy" if det_file.endswith(".txt") else None
        if guess and os.path.exists(guess):
            embeddings = guess
    data = read_mot(det_file, embeddings)
    gt = read_mot(gt_file) if gt_file else None
    n_frames = max(data.max_frame, gt.max_frame if gt else 0)
    if n_frames == 0:
        raise UsageError(f"{det_file} holds no detections")
    bgs = None
    if cfg.tracker.uses_cmc:
        if backgrounds is None:
            raise UsageError("motion inputs required: --backgrounds is needed with cmc motion")
        bgs = _load_backgrounds(backgrounds)
        if len(bgs) < n_frames:
            raise UsageError(f"{backgrounds} has {len(bgs)} frames, need {n_frames}")
    out = run_sequence(bgs, data.detection_batches(n_frames), cfg.tracker)
    write_mot(out, out_file)
    return evaluate(gt, out) if gt is not None else None


# --------------------------------------------------------------------------
# grid


def cmd_grid(cfg: RunConfig, out_dir: str, check: bool = False, dump_trails: Optional[int] = None):
    result = run_grid(cfg, trails=bool(dump_trails))
    files = write_outputs(result, out_dir, dump_trails)
    failures = check_grid(result) if check else []
    return result, files, failures


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pitchtrack", description="Simulated soccer-player tracking under video degradation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="simulate a sequence and write MOT files")
    g.add_argument("--config", help="TOML experiment file")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output directory")

    t = sub.add_parser("track", help="track a MOT detection file")
    t.add_argument("detections", help="MOT detection file (id -1 lines)")
    t.add_argument("--gt", help="ground-truth MOT file; prints metrics when given")
    t.add_argument("--embeddings", help="appearance vectors (.npy), default <det>.emb.npy if present")
    t.add_argument("--backgrounds", help="background frames (.npy) for cmc motion")
    t.add_argument("--config", help="TOML experiment file")
    t.add_argument("--motion", choices=MOTION_MODELS)
    t.add_argument("--no-reid", action="store_true")
    t.add_argument("--out", required=True, help="result MOT file")

    r = sub.add_parser("grid", help="run the detector x ReID x dataset grid")
    r.add_argument("--config", help="TOML experiment file")
    seeds = r.add_mutually_exclusive_group()
    seeds.add_argument("--seeds", type=_seeds_arg, help="seed list, e.g. 0..4 or 1,3,5")
    seeds.add_argument("--seed", type=int)
    r.add_argument("--motion", choices=MOTION_MODELS)
    r.add_argument("--no-reid", action="store_true", help="only the Without row")
    r.add_argument("--jobs", type=int, help="worker processes (0 = all cores)")
    r.add_argument("--check", action="store_true", help="exit 2 if an ordering check fails")
    r.add_argument("--dump-trails", type=int, metavar="K", help="write track centres every K frames")
    r.add_argument("--out", required=True, help="output directory")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:  # usage errors, --help, --version
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    try:
        if args.command == "grid" and args.seed is not None:
            args.seeds = (args.seed,)
        if getattr(args, "dump_trails", None) is not None and args.dump_trails < 1:
            raise UsageError("--dump-trails must be >= 1")
        if getattr(args, "jobs", None) is not None and args.jobs < 0:
            raise UsageError("--jobs must be >= 0")
        cfg = _load_config(args)

        if args.command == "generate":
            files = cmd_generate(cfg, args.seed, args.out)
            print(f"wrote {len(files)} files to {args.out}")
            return EXIT_OK

        if args.command == "track":
            tracker = cfg.tracker
            if args.motion is not None:
                tracker = replace(tracker, motion=args.motion)
            report = cmd_track(replace(cfg, tracker=tracker), args.detections, args.out, args.gt,
                               args.embeddings, args.backgrounds)
            print(f"wrote {args.out}")
            if report is not None:
                for k, v in report.as_row().items():
                    print(f"{k:>10} {v:.4f}" if isinstance(v, float) else f"{k:>10} {v}")
            return EXIT_OK

        result, files, failures = cmd_grid(cfg, args.out, args.check, args.dump_trails)
        with open(os.path.join(args.out, "tables.txt"), encoding="utf-8") as fh:
            sys.stdout.write(fh.read())
        if failures:
            for f in failures:
                print(f"CHECK FAILED: {f}", file=sys.stderr)
            return EXIT_CHECK
        if args.check:
            print("all checks passed")
        return EXIT_OK
    except (UsageError, ConfigError, MotFormatError, MotionInputsError, EmptyGroundTruthError, OSError) as e:
        print(f"pitchtrack: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
