"""MOTChallenge text files and the TOML experiment configuration.

Every MOT line has ten comma-separated fields::

    frame, id, x, y, w, h, conf, a, b, c

``id == -1`` marks a raw detection, anything else a track (or ground-truth)
entry.  Reals are written with two decimals, so ``read_mot(write_mot(x))``
reproduces ``x`` up to that rounding and a second write is byte-identical.
"""

from __future__ import annotations

import dataclasses
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, TextIO, Union

import numpy as np

from .core import DetectionBatch
from .simulate import DATASET_QUALITIES, DETECTOR_MODELS, QualityProfile, ScenarioConfig
from .tracker import MOTION_MODELS, TrackerConfig

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

__all__ = [
    "MotLine",
    "MotData",
    "MotFormatError",
    "ConfigError",
    "ExperimentConfig",
    "RunConfig",
    "REID_MODELS",
    "DEFAULT_REID_NOISE",
    "read_mot",
    "write_mot",
    "format_mot_line",
    "save_embeddings",
    "load_embeddings",
    "read_config",
    "parse_config",
    "parse_seeds",
]

PathLike = Union[str, os.PathLike]

N_FIELDS = 10


class MotFormatError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MotLine:
    frame: int
    id: int
    x: float
    y: float
    w: float
    h: float
    conf: float = 1.0
    a: float = -1.0
    b: float = -1.0
    c: float = -1.0


@dataclass
class MotData:
    """Contents of one MOT file, split into raw detections and track entries."""

    detections: dict[int, DetectionBatch] = field(default_factory=dict)
    tracks: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=dict)

    def per_frame(self) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        return {f: (ids, boxes) for f, (ids, boxes, _) in self.tracks.items()}

    @property
    def frames(self) -> list[int]:
        return sorted(set(self.detections) | set(self.tracks))

    @property
    def max_frame(self) -> int:
        return max(self.frames, default=0)

    def detection_batches(self, n_frames: Optional[int] = None) -> list[DetectionBatch]:
        """Detections for frames ``1..n_frames``, empty batches filling the gaps."""
        n = self.max_frame if n_frames is None else n_frames
        dim = next((b.embeddings.shape[1] for b in self.detections.values() if b.embeddings is not None), None)
        return [self.detections.get(f) or DetectionBatch.empty(f, dim) for f in range(1, n + 1)]

    def lines(self) -> list[MotLine]:
        out = []
        for f in self.frames:
            if f in self.detections:
                b = self.detections[f]
                out.extend(MotLine(f, -1, *map(float, box), float(c)) for box, c in zip(b.boxes, b.confidences))
            if f in self.tracks:
                ids, boxes, scores = self.tracks[f]
                for k in np.argsort(ids, kind="stable"):
                    out.append(MotLine(f, int(ids[k]), *map(float, boxes[k]), float(scores[k])))
        return out


# --------------------------------------------------------------------------
# reading


def _parse_line(text: str, lineno: int) -> MotLine:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != N_FIELDS:
        raise MotFormatError(f"expected {N_FIELDS} fields, got {len(parts)} (line {lineno})")
    try:
        values = [float(p) for p in parts]
    except ValueError:
        bad = next(p for p in parts if not _is_number(p))
        raise MotFormatError(f"non-numeric field {bad!r} (line {lineno})") from None
    if not all(math.isfinite(v) for v in values):
        raise MotFormatError(f"non-finite field (line {lineno})")
    frame, tid = values[0], values[1]
    if frame != int(frame) or tid != int(tid):
        raise MotFormatError(f"frame and id must be integers (line {lineno})")
    if frame < 1:
        raise MotFormatError(f"frame must be >= 1, got {int(frame)} (line {lineno})")
    if tid < -1:
        raise MotFormatError(f"id must be -1 or >= 0, got {int(tid)} (line {lineno})")
    if values[4] <= 0 or values[5] <= 0:
        raise MotFormatError(f"box width and height must be positive (line {lineno})")
    return MotLine(int(frame), int(tid), *values[2:])


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_mot(source: "PathLike | TextIO", embeddings: "PathLike | np.ndarray | None" = None) -> MotData:
    """Parse a MOT file.

    ``embeddings`` optionally supplies one appearance vector per detection
    line, in file order (see :func:`save_embeddings`).
    """
    if hasattr(source, "read"):
        text = source.read()
    else:
        text = Path(source).read_text(encoding="utf-8")

    det_rows: dict[int, list[MotLine]] = {}
    trk_rows: dict[int, list[MotLine]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        rec = _parse_line(raw, lineno)
        (det_rows if rec.id == -1 else trk_rows).setdefault(rec.frame, []).append(rec)

    emb = None
    if embeddings is not None:
        emb = load_embeddings(embeddings) if not isinstance(embeddings, np.ndarray) else embeddings
        n_det = sum(len(v) for v in det_rows.values())
        if len(emb) != n_det:
            raise MotFormatError(f"embedding file has {len(emb)} rows for {n_det} detections")

    data = MotData()
    offset = 0
    # detections are stored frame-major in file order; embeddings follow the same order
    for f in sorted(det_rows):
        rows = det_rows[f]
        boxes = np.array([[r.x, r.y, r.w, r.h] for r in rows])
        conf = np.array([r.conf for r in rows])
        e = None
        if emb is not None:
            e = emb[offset:offset + len(rows)]
            offset += len(rows)
        data.detections[f] = DetectionBatch(f, boxes, conf, e)
    for f in sorted(trk_rows):
        rows = sorted(trk_rows[f], key=lambda r: r.id)
        ids = np.array([r.id for r in rows], dtype=int)
        if len(set(ids.tolist())) != len(ids):
            raise MotFormatError(f"duplicate track id in frame {f}")
        boxes = np.array([[r.x, r.y, r.w, r.h] for r in rows])
        data.tracks[f] = (ids, boxes, np.array([r.conf for r in rows]))
    return data


# --------------------------------------------------------------------------
# writing


def _real(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _trailing(v: float) -> str:
    return "-1" if v == -1 else _real(v)


def format_mot_line(rec: MotLine) -> str:
    return ",".join(
        [str(rec.frame), str(rec.id), _real(rec.x), _real(rec.y), _real(rec.w), _real(rec.h), _real(rec.conf),
         _trailing(rec.a), _trailing(rec.b), _trailing(rec.c)]
    )


def _records(obj) -> list[MotLine]:
    if isinstance(obj, MotData):
        return obj.lines()
    if hasattr(obj, "records"):  # TrackerOutput
        return [MotLine(f, tid, box.x, box.y, box.w, box.h, score) for f, tid, box, score in obj.records()]
    if hasattr(obj, "per_frame"):  # GroundTruth
        out = []
        for f, (ids, boxes) in sorted(obj.per_frame().items()):
            for k in np.argsort(ids, kind="stable"):
                out.append(MotLine(f, int(ids[k]), *map(float, boxes[k]), 1.0))
        return out
    items = list(obj)
    if items and isinstance(items[0], DetectionBatch):
        out = []
        for b in sorted(items, key=lambda b: b.frame):
            out.extend(MotLine(b.frame, -1, *map(float, box), float(c)) for box, c in zip(b.boxes, b.confidences))
        return out
    return sorted(items, key=lambda r: (r.frame, r.id))


def write_mot(obj, dest: "PathLike | TextIO") -> None:
    """Write tracks, ground truth, detections or raw :class:`MotLine` records.

    Lines are ordered by frame, then id; detections of one frame keep their
    order.
    """
    text = "".join(format_mot_line(r) + "\n" for r in _records(obj))
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def save_embeddings(batches: Sequence[DetectionBatch], path: PathLike) -> None:
    """Store detection embeddings in the line order :func:`write_mot` uses."""
    rows = [b.embeddings for b in sorted(batches, key=lambda b: b.frame) if len(b)]
    if any(r is None for r in rows):
        raise ValueError("every non-empty batch needs embeddings")
    arr = np.concatenate(rows) if rows else np.zeros((0, 0))
    # rounded so the file is as stable as the text it accompanies
    np.save(path, np.round(arr, 6).astype("<f8"), allow_pickle=False)


def load_embeddings(path: PathLike) -> np.ndarray:
    arr = np.load(path, allow_pickle=False)
    if arr.ndim != 2:
        raise MotFormatError("embedding file must hold a 2-D array")
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    return arr / np.where(norms > 0, norms, 1.0)


# --------------------------------------------------------------------------
# configuration

REID_MODELS = ("Original", "Normal", "Q40", "Q50")
# appearance-noise multiplier of each ReID model relative to the dataset level
DEFAULT_REID_NOISE = {"Original": 1.3, "Normal": 1.0, "Q40": 0.95, "Q50": 0.9}


@dataclass(frozen=True)
class ExperimentConfig:
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    detectors: tuple[str, ...] = DETECTOR_MODELS
    datasets: tuple[str, ...] = DATASET_QUALITIES
    reid: tuple[str, ...] = ("Without",) + REID_MODELS
    motion: str = "cmc"
    jobs: int = 0

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ConfigError("experiment needs at least one seed")
        for name, allowed in (("detectors", DETECTOR_MODELS), ("datasets", DATASET_QUALITIES),
                              ("reid", ("Without",) + REID_MODELS)):
            bad = [v for v in getattr(self, name) if v not in allowed]
            if bad:
                raise ConfigError(f"unknown {name} entry {bad[0]!r}; expected one of {', '.join(allowed)}")
        if self.motion not in MOTION_MODELS:
            raise ConfigError(f"unknown motion {self.motion!r}; expected one of {', '.join(MOTION_MODELS)}")
        if self.jobs < 0:
            raise ConfigError("jobs must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    profiles: Mapping[tuple[str, str], dict] = field(default_factory=dict)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    reid_noise: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_REID_NOISE))
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)


_PROFILE_EXTRA = {"recall": float, "precision": float}
_SECTIONS = ("scenario", "profiles", "tracker", "reid", "experiment")


def _type_name(tp) -> str:
    return {int: "integer", float: "real", bool: "boolean", str: "string"}.get(tp, str(tp))


def _coerce(key: str, value: Any, tp) -> Any:
    if tp is bool:
        if isinstance(value, bool):
            return value
    elif tp is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif tp is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif tp is str:
        if isinstance(value, str):
            return value
    raise ConfigError(f"expected {_type_name(tp)} for {key}")


def _field_types(cls) -> dict[str, type]:
    hints = {"int": int, "float": float, "bool": bool, "str": str}
    out = {}
    for f in dataclasses.fields(cls):
        name = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
        if name in hints and not f.name.startswith("_"):
            out[f.name] = hints[name]
    return out


def _fill(cls, section: str, table: Mapping[str, Any], exclude: Iterable[str] = ()) -> dict[str, Any]:
    types = {k: v for k, v in _field_types(cls).items() if k not in set(exclude)}
    out = {}
    for key, value in table.items():
        if key not in types:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        out[key] = _coerce(key, value, types[key])
    return out


def parse_seeds(spec: "str | int | Sequence[int]") -> tuple[int, ...]:
    """``"0..4"`` (inclusive), ``"3"``, ``"1,5,9"``, an int or a list."""
    if isinstance(spec, bool):
        raise ConfigError("expected seed list for seeds")
    if isinstance(spec, int):
        return (spec,)
    if isinstance(spec, str):
        s = spec.strip()
        try:
            if ".." in s:
                lo, hi = (int(p) for p in s.split(".."))
                if hi < lo:
                    raise ConfigError(f"empty seed range {s!r}")
                return tuple(range(lo, hi + 1))
            return tuple(int(p) for p in s.split(",") if p.strip())
        except ValueError:
            raise ConfigError(f"bad seed specification {spec!r}") from None
    if all(isinstance(v, int) and not isinstance(v, bool) for v in spec):
        return tuple(spec)
    raise ConfigError("expected seed list for seeds")


def _str_tuple(key: str, value: Any) -> tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ConfigError(f"expected list of strings for {key}")
    return tuple(value)


def parse_config(doc: Mapping[str, Any]) -> RunConfig:
    """Validate a parsed TOML document; see ``configs/example.toml``."""
    try:
        return _parse_config(doc)
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _parse_config(doc: Mapping[str, Any]) -> RunConfig:
    unknown = [k for k in doc if k not in _SECTIONS]
    if unknown:
        raise ConfigError(f"unknown section [{unknown[0]}]")
    for name in _SECTIONS:
        if name in doc and not isinstance(doc[name], dict):
            raise ConfigError(f"[{name}] must be a table")

    scenario = ScenarioConfig(**_fill(ScenarioConfig, "scenario", doc.get("scenario", {})))

    profiles: dict[tuple[str, str], dict] = {}
    for cell, table in doc.get("profiles", {}).items():
        det, _, ds = cell.partition("/")
        if det not in DETECTOR_MODELS or ds not in DATASET_QUALITIES:
            raise ConfigError(f"unknown profile cell {cell!r}; expected '<detector>/<dataset>'")
        if not isinstance(table, dict):
            raise ConfigError(f"[profiles.\"{cell}\"] must be a table")
        extra = {k: table[k] for k in _PROFILE_EXTRA if k in table}
        rest = {k: v for k, v in table.items() if k not in _PROFILE_EXTRA}
        entry = _fill(QualityProfile, f'profiles."{cell}"', rest, exclude=("name",))
        for k, v in extra.items():
            entry[k] = _coerce(k, v, float)
        profiles[(det, ds)] = entry

    tracker = TrackerConfig(**_fill(TrackerConfig, "tracker", doc.get("tracker", {})))

    reid_noise = dict(DEFAULT_REID_NOISE)
    for key, value in doc.get("reid", {}).items():
        if key not in REID_MODELS:
            raise ConfigError(f"unknown key {key!r} in [reid]")
        v = _coerce(key, value, float)
        if v < 0:
            raise ConfigError(f"{key} must be >= 0")
        reid_noise[key] = v

    exp_doc = dict(doc.get("experiment", {}))
    exp: dict[str, Any] = {}
    for key, value in exp_doc.items():
        if key == "seeds":
            exp[key] = parse_seeds(value)
        elif key in ("detectors", "datasets", "reid"):
            exp[key] = _str_tuple(key, value)
        elif key == "motion":
            exp[key] = _coerce(key, value, str)
        elif key == "jobs":
            exp[key] = _coerce(key, value, int)
        else:
            raise ConfigError(f"unknown key {key!r} in [experiment]")
    experiment = ExperimentConfig(**exp)

    return RunConfig(scenario, profiles, tracker, reid_noise, experiment)


def read_config(path: Optional[PathLike]) -> RunConfig:
    """Load a TOML experiment file; ``None`` gives all defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    return parse_config(doc)
