"""Parse per-dataset source annotation files into canonical samples.

Each dataset keeps its native annotation style (field names, token grammar);
the adapters here translate those into Samples without touching token text —
coordinate/token rewriting belongs to standardize. Also hosts the LiDAR
bird's-eye-view rasterizer and JSONL manifest I/O.

Source schemas are documented in docs/source-schemas.md with one fixture each.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .core import (
    CameraId,
    DatasetId,
    MediaKind,
    MediaRef,
    Provenance,
    QAPair,
    QAStyle,
    Sample,
    assert_unique_ids,
    image_ref,
    sample_from_dict,
    sample_from_json,
    sample_to_json,
    validate_sample,
    video_ref,
)
from .errors import SchemaError

_CAMERA_ORDER = {c: i for i, c in enumerate(CameraId)}


# ---------------------------------------------------------------------------
# Record field helpers
# ---------------------------------------------------------------------------

def _req(rec: Mapping[str, Any], key: str, idx: int, kind: type | tuple = str) -> Any:
    if key not in rec:
        raise SchemaError("missing field", record_index=idx, path=key)
    value = rec[key]
    if kind is int and isinstance(value, bool):
        raise SchemaError("expected integer, got bool", record_index=idx, path=key)
    if not isinstance(value, kind):
        raise SchemaError(f"expected {getattr(kind, '__name__', kind)}, got "
                          f"{type(value).__name__}", record_index=idx, path=key)
    return value


def _tags(rec: Mapping[str, Any], idx: int, key: str = "tags") -> frozenset[str]:
    raw = rec.get(key, [])
    if isinstance(raw, str):
        raw = [raw]
    if not isinstance(raw, list) or not all(isinstance(t, str) for t in raw):
        raise SchemaError("tags must be a string or list of strings",
                          record_index=idx, path=key)
    return frozenset(raw)


def _qa_list(entries: Any, idx: int, path: str,
             q_key: str = "question", a_key: str = "answer") -> list[QAPair]:
    if not isinstance(entries, list):
        raise SchemaError("expected a list of QA entries", record_index=idx, path=path)
    out = []
    for k, entry in enumerate(entries):
        if not isinstance(entry, Mapping):
            raise SchemaError("QA entry must be an object",
                              record_index=idx, path=f"{path}[{k}]")
        for key in (q_key, a_key):
            if key not in entry or not isinstance(entry[key], str):
                raise SchemaError(f"missing string field {key!r}",
                                  record_index=idx, path=f"{path}[{k}]")
        out.append(QAPair(entry[q_key], entry[a_key]))
    return out


# ---------------------------------------------------------------------------
# Per-dataset adapters (source record -> Sample)
# ---------------------------------------------------------------------------

def _parse_coda_lm(rec: Mapping[str, Any], idx: int) -> Sample:
    sid = _req(rec, "id", idx)
    img = _req(rec, "image", idx, Mapping)
    media = (image_ref(CameraId.FRONT_ONLY,
                       _req(img, "width", idx, int), _req(img, "height", idx, int),
                       _req(img, "path", idx)),)
    qa = _qa_list(_req(rec, "qa", idx, list), idx, "qa")
    return Sample(f"coda_lm/{sid}", DatasetId.CODA_LM, media, tuple(qa),
                  _tags(rec, idx, "task"))


def _parse_maplm(rec: Mapping[str, Any], idx: int) -> Sample:
    sid = _req(rec, "frame_id", idx)
    media = (image_ref(CameraId.FRONT_ONLY,
                       _req(rec, "width", idx, int), _req(rec, "height", idx, int),
                       _req(rec, "image", idx)),)
    pairs_raw = _req(rec, "qa_pairs", idx, list)
    qa = []
    for k, pair in enumerate(pairs_raw):
        if not (isinstance(pair, list) and len(pair) == 2
                and all(isinstance(x, str) for x in pair)):
            raise SchemaError("qa_pairs entries must be [question, answer]",
                              record_index=idx, path=f"qa_pairs[{k}]")
        qa.append(QAPair(pair[0], pair[1]))
    return Sample(f"maplm/{sid}", DatasetId.MAPLM, media, tuple(qa), _tags(rec, idx))


def _parse_lingoqa(rec: Mapping[str, Any], idx: int) -> Sample:
    sid = _req(rec, "segment_id", idx)
    vid = _req(rec, "video", idx, Mapping)
    media = (video_ref(CameraId.FRONT_ONLY, _req(vid, "frames", idx, int),
                       _req(vid, "width", idx, int), _req(vid, "height", idx, int),
                       _req(vid, "path", idx)),)
    qa = (QAPair(_req(rec, "question", idx), _req(rec, "answer", idx)),)
    return Sample(f"lingoqa/{sid}", DatasetId.LINGOQA, media, qa, _tags(rec, idx))


def _surround_images(images: Mapping[str, Any], width: int, height: int,
                     idx: int, path: str) -> tuple[MediaRef, ...]:
    media = []
    for name, uri in images.items():
        try:
            camera = CameraId(name)
        except ValueError:
            raise SchemaError(f"unknown camera name {name!r}",
                              record_index=idx, path=path) from None
        if not isinstance(uri, str):
            raise SchemaError("image path must be a string",
                              record_index=idx, path=f"{path}.{name}")
        media.append(image_ref(camera, width, height, uri))
    media.sort(key=lambda m: _CAMERA_ORDER[m.camera])
    return tuple(media)


def _parse_drivelm(rec: Mapping[str, Any], idx: int) -> Sample:
    sid = _req(rec, "scene_id", idx)
    width = _req(rec, "width", idx, int)
    height = _req(rec, "height", idx, int)
    media = _surround_images(_req(rec, "images", idx, Mapping), width, height,
                             idx, "images")
    sections = _req(rec, "qa", idx, Mapping)
    qa: list[QAPair] = []
    tags = set()
    for section, entries in sections.items():
        qa.extend(_qa_list(entries, idx, f"qa.{section}", q_key="q", a_key="a"))
        tags.add(section)
    return Sample(f"drivelm/{sid}", DatasetId.DRIVELM, media, tuple(qa),
                  frozenset(tags))


def _parse_omnidrive(rec: Mapping[str, Any], idx: int) -> Sample:
    sid = _req(rec, "token", idx)
    width = _req(rec, "width", idx, int)
    height = _req(rec, "height", idx, int)
    cameras = _req(rec, "cameras", idx, list)
    if len(cameras) != 6 or not all(isinstance(c, str) for c in cameras):
        raise SchemaError("cameras must list six image paths in surround order",
                          record_index=idx, path="cameras")
    from .core import NUSCENES_CAMERAS

    media = tuple(image_ref(cam, width, height, uri)
                  for cam, uri in zip(NUSCENES_CAMERAS, cameras))
    qa = _qa_list(_req(rec, "conversation", idx, list), idx, "conversation")
    return Sample(f"omnidrive/{sid}", DatasetId.OMNIDRIVE, media, tuple(qa),
                  _tags(rec, idx))


def _parse_nuinstruct(rec: Mapping[str, Any], idx: int) -> Sample:
    from .standardize import default_camera_map, map_camera_id

    sid = _req(rec, "sample_id", idx)
    width = _req(rec, "width", idx, int)
    height = _req(rec, "height", idx, int)
    views = _req(rec, "views", idx, Mapping)
    camera_map = default_camera_map(DatasetId.NUINSTRUCT)
    media = []
    for raw_id, uri in views.items():
        try:
            camera = map_camera_id(raw_id, camera_map)
        except Exception:
            raise SchemaError(f"unknown view id {raw_id!r}",
                              record_index=idx, path="views") from None
        if not isinstance(uri, str):
            raise SchemaError("view path must be a string",
                              record_index=idx, path=f"views.{raw_id}")
        media.append(image_ref(camera, width, height, uri))
    media.sort(key=lambda m: _CAMERA_ORDER[m.camera])
    qas_raw = _req(rec, "qas", idx, list)
    qa = []
    tags = set()
    for k, entry in enumerate(qas_raw):
        if not isinstance(entry, Mapping):
            raise SchemaError("QA entry must be an object",
                              record_index=idx, path=f"qas[{k}]")
        for key in ("question", "answer"):
            if not isinstance(entry.get(key), str):
                raise SchemaError(f"missing string field {key!r}",
                                  record_index=idx, path=f"qas[{k}]")
        qa.append(QAPair(entry["question"], entry["answer"]))
        task = entry.get("task")
        if isinstance(task, str):
            tags.add(task)
    return Sample(f"nuinstruct/{sid}", DatasetId.NUINSTRUCT, tuple(media),
                  tuple(qa), frozenset(tags))


def _parse_generic(rec: Mapping[str, Any], idx: int) -> Sample:
    s = sample_from_dict(rec, path=f"record[{idx}]")
    sid = s.id if s.id.startswith("generic/") else f"generic/{s.id}"
    return Sample(sid, DatasetId.GENERIC, s.media, s.qa, s.task_tags)


_ADAPTERS: dict[DatasetId, Callable[[Mapping[str, Any], int], Sample]] = {
    DatasetId.CODA_LM: _parse_coda_lm,
    DatasetId.MAPLM: _parse_maplm,
    DatasetId.DRIVELM: _parse_drivelm,
    DatasetId.LINGOQA: _parse_lingoqa,
    DatasetId.OMNIDRIVE: _parse_omnidrive,
    DatasetId.NUINSTRUCT: _parse_nuinstruct,
    DatasetId.GENERIC: _parse_generic,
}


def parse_source(adapter: DatasetId, payload: bytes | str) -> list[Sample]:
    """Parse one source annotation file (JSON array of records).

    All-or-nothing: any malformed record raises SchemaError and nothing is
    returned.
    """
    if isinstance(payload, bytes):
        payload = payload.decode("utf-8")
    try:
        data = json.loads(payload)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    if not isinstance(data, list):
        raise SchemaError("source payload must be a JSON array")
    parse = _ADAPTERS[adapter]
    samples = []
    for idx, rec in enumerate(data):
        if not isinstance(rec, Mapping):
            raise SchemaError("record must be an object", record_index=idx)
        sample = parse(rec, idx)
        violations = validate_sample(sample)
        if violations:
            v = violations[0]
            raise SchemaError(f"invalid sample ({v.rule}): {v.detail}",
                              record_index=idx, path=v.field)
        samples.append(sample)
    assert_unique_ids(samples)
    return samples


# ---------------------------------------------------------------------------
# LiDAR bird's-eye-view rasterization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LidarPoint:
    x: float
    y: float
    z: float
    intensity: float = 0.0

    def __post_init__(self) -> None:
        for v in (self.x, self.y, self.z, self.intensity):
            if not math.isfinite(v):
                raise ValueError(f"non-finite lidar point component: {v!r}")


@dataclass(frozen=True)
class BevGridConfig:
    x_range: float = 50.0
    y_range: float = 50.0
    cell_size: float = 0.25
    mode: str = "occupancy"  # occupancy | max_intensity

    def __post_init__(self) -> None:
        if self.cell_size <= 0 or self.x_range <= 0 or self.y_range <= 0:
            raise ValueError("ranges and cell_size must be positive")
        if self.mode not in ("occupancy", "max_intensity"):
            raise ValueError(f"unknown BEV mode {self.mode!r}")

    @property
    def dims(self) -> tuple[int, int]:
        """(rows, cols) = (y cells, x cells)."""
        return (math.ceil(2 * self.y_range / self.cell_size),
                math.ceil(2 * self.x_range / self.cell_size))


def project_lidar_bev(points: Sequence[LidarPoint],
                      cfg: BevGridConfig = BevGridConfig(),
                      uri: str = "lidar/bev") -> tuple[np.ndarray, MediaRef]:
    """Rasterize ego-frame points onto a top-down grid.

    Cell (row, col) covers y ∈ [row·s − y_range, (row+1)·s − y_range) and the
    analogous x slab; the ego origin lands in the central cell. Values are in
    [0, 1]: occupancy flags or per-cell max intensity.
    """
    rows, cols = cfg.dims
    raster = np.zeros((rows, cols), dtype=np.float64)
    media = MediaRef(MediaKind.IMAGE, CameraId.LIDAR_BEV, 1, cols, rows, uri)
    if not points:
        return raster, media

    xs = np.array([p.x for p in points])
    ys = np.array([p.y for p in points])
    ix = np.floor((xs + cfg.x_range) / cfg.cell_size).astype(np.int64)
    iy = np.floor((ys + cfg.y_range) / cfg.cell_size).astype(np.int64)
    keep = (ix >= 0) & (ix < cols) & (iy >= 0) & (iy < rows)
    if cfg.mode == "occupancy":
        raster[iy[keep], ix[keep]] = 1.0
    else:
        intensity = np.array([p.intensity for p in points])
        np.maximum.at(raster, (iy[keep], ix[keep]), intensity[keep])
    return raster, media


# ---------------------------------------------------------------------------
# Manifest I/O
# ---------------------------------------------------------------------------

def write_manifest(samples: Iterable[Sample], path: str | Path) -> None:
    """Write samples as JSONL sorted by id; identical inputs (any order)
    produce byte-identical files."""
    ordered = sorted(samples, key=lambda s: s.id)
    assert_unique_ids(ordered)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in ordered:
            fh.write(sample_to_json(s))
            fh.write("\n")


def read_manifest(path: str | Path) -> list[Sample]:
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                raise SchemaError("blank manifest line", line=lineno)
            try:
                samples.append(sample_from_json(line))
            except SchemaError as exc:
                raise SchemaError(exc.reason, record_index=exc.record_index,
                                  path=exc.path, line=lineno) from None
    assert_unique_ids(samples)
    return samples
