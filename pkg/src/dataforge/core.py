"""Domain types shared by all pipeline stages, plus structural validation.

Everything here is an immutable value object; samples can be shared freely
between threads. The canonical on-disk form is JSON Lines with one sample per
line (see ``sample_to_dict`` for the key order).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Mapping

from .errors import SchemaError


class DatasetId(Enum):
    CODA_LM = "coda_lm"
    MAPLM = "maplm"
    DRIVELM = "drivelm"
    LINGOQA = "lingoqa"
    OMNIDRIVE = "omnidrive"
    NUINSTRUCT = "nuinstruct"
    GENERIC = "generic"

    def __str__(self) -> str:
        return self.value


class CameraId(Enum):
    CAM_FRONT = "CAM_FRONT"
    CAM_FRONT_LEFT = "CAM_FRONT_LEFT"
    CAM_FRONT_RIGHT = "CAM_FRONT_RIGHT"
    CAM_BACK = "CAM_BACK"
    CAM_BACK_LEFT = "CAM_BACK_LEFT"
    CAM_BACK_RIGHT = "CAM_BACK_RIGHT"
    FRONT_ONLY = "FRONT_ONLY"
    LIDAR_BEV = "LIDAR_BEV"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, name: str) -> "CameraId":
        try:
            return cls(name)
        except ValueError:
            raise SchemaError(f"unknown camera name {name!r}") from None


# Fixed ordering of the six surround cameras; used wherever answers or media
# must be grouped deterministically by view.
NUSCENES_CAMERAS: tuple[CameraId, ...] = (
    CameraId.CAM_FRONT,
    CameraId.CAM_FRONT_LEFT,
    CameraId.CAM_FRONT_RIGHT,
    CameraId.CAM_BACK,
    CameraId.CAM_BACK_LEFT,
    CameraId.CAM_BACK_RIGHT,
)

CAMERA_RANK: dict[CameraId, int] = {c: i for i, c in enumerate(NUSCENES_CAMERAS)}


class MediaKind(Enum):
    IMAGE = "image"
    VIDEO = "video"

    def __str__(self) -> str:
        return self.value


class QAStyle(Enum):
    OPEN = "open"
    MULTIPLE_CHOICE = "multiple_choice"

    def __str__(self) -> str:
        return self.value


class Provenance(Enum):
    ORIGINAL = "original"
    PARAPHRASE = "paraphrase"
    MC_TRANSFORM = "mc_transform"
    GENERATED_PERCEPTION = "generated_perception"

    def __str__(self) -> str:
        return self.value


def fmt3(value: float) -> str:
    """Render a normalized coordinate with exactly three decimals."""
    return f"{value:.3f}"


@dataclass(frozen=True)
class BBoxPx:
    """Axis-aligned box in pixel units, (x_min, y_min, x_max, y_max)."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class BBoxNorm:
    """Axis-aligned box with coordinates normalized to [0, 100]."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def render(self) -> str:
        return ", ".join(fmt3(v) for v in self.as_tuple())


@dataclass(frozen=True)
class PointPx:
    """Region center in pixel units."""

    x_center: float
    y_center: float

    def as_tuple(self) -> tuple[float, float]:
        return (self.x_center, self.y_center)


@dataclass(frozen=True)
class PointNorm:
    """Region center with coordinates normalized to [0, 100]."""

    x_center: float
    y_center: float

    def as_tuple(self) -> tuple[float, float]:
        return (self.x_center, self.y_center)

    def render(self) -> str:
        return ", ".join(fmt3(v) for v in self.as_tuple())


Geometry = BBoxPx | BBoxNorm | PointPx | PointNorm


@dataclass(frozen=True)
class ObjectRef:
    """A referenced scene object, parsed out of an embedded QA token.

    ``camera`` is None while the source token carries an unresolved raw camera
    id (kept in ``raw_camera``); standardization resolves it. ``source_tag``
    holds the original token text verbatim.
    """

    category: str
    camera: CameraId | None
    geometry: Geometry
    source_tag: str
    raw_camera: str | None = None

    @property
    def is_normalized(self) -> bool:
        return isinstance(self.geometry, (BBoxNorm, PointNorm))


@dataclass(frozen=True)
class MediaRef:
    """Metadata for one visual input; no pixel data is ever loaded."""

    kind: MediaKind
    camera: CameraId
    frame_count: int
    width: int
    height: int
    uri: str

    def __post_init__(self) -> None:
        if self.kind is MediaKind.IMAGE and self.frame_count != 1:
            raise ValueError(f"image media must have frame_count 1, got {self.frame_count}")


def image_ref(camera: CameraId, width: int, height: int, uri: str) -> MediaRef:
    return MediaRef(MediaKind.IMAGE, camera, 1, width, height, uri)


def video_ref(camera: CameraId, frames: int, width: int, height: int, uri: str) -> MediaRef:
    return MediaRef(MediaKind.VIDEO, camera, frames, width, height, uri)


@dataclass(frozen=True)
class QAPair:
    question: str
    answer: str
    style: QAStyle = QAStyle.OPEN
    provenance: Provenance = Provenance.ORIGINAL
    options: tuple[tuple[str, str], ...] | None = None


@dataclass(frozen=True)
class Sample:
    """One training/eval record: media references plus a QA conversation."""

    id: str
    dataset: DatasetId
    media: tuple[MediaRef, ...]
    qa: tuple[QAPair, ...]
    task_tags: frozenset[str] = frozenset()


@dataclass(frozen=True)
class Violation:
    field: str
    rule: str
    detail: str


def validate_sample(sample: Sample) -> list[Violation]:
    """Check every structural invariant; an empty list means the sample is valid.

    Violations are data, not errors: the input is never mutated and malformed
    content never raises.
    """
    from . import tokens  # deferred: tokens depends on the types above

    out: list[Violation] = []

    if not sample.id:
        out.append(Violation("id", "non_empty", "sample id is empty"))
    if not sample.media:
        out.append(Violation("media", "non_empty", "sample carries no media"))

    for i, m in enumerate(sample.media):
        if m.width <= 0 or m.height <= 0:
            out.append(Violation(f"media[{i}]", "positive_dims",
                                 f"width/height must be > 0, got {m.width}x{m.height}"))
        if m.frame_count < 1:
            out.append(Violation(f"media[{i}]", "frame_count",
                                 f"frame_count must be >= 1, got {m.frame_count}"))
        if m.kind is MediaKind.IMAGE and m.frame_count != 1:
            out.append(Violation(f"media[{i}]", "image_single_frame",
                                 f"image media must have frame_count 1, got {m.frame_count}"))

    media_cameras = {m.camera for m in sample.media}
    uniform_dims: tuple[int, int] | None = None
    dims = {(m.width, m.height) for m in sample.media}
    if len(dims) == 1:
        uniform_dims = next(iter(dims))
    media_by_camera: dict[CameraId, MediaRef] = {}
    for m in sample.media:
        media_by_camera.setdefault(m.camera, m)

    for j, qa in enumerate(sample.qa):
        if qa.style is QAStyle.MULTIPLE_CHOICE:
            if not qa.options:
                out.append(Violation(f"qa[{j}].options", "mc_options_present",
                                     "multiple_choice question has no options"))
            else:
                labels = [label for label, _ in qa.options]
                if len(set(labels)) != len(labels):
                    out.append(Violation(f"qa[{j}].options", "mc_labels_unique",
                                         f"duplicate option labels: {labels}"))
                if qa.answer not in labels:
                    out.append(Violation(f"qa[{j}].answer", "mc_answer_is_label",
                                         f"answer {qa.answer!r} is not an option label"))
        for field_name, text in (("question", qa.question), ("answer", qa.answer)):
            for match in tokens.scan_tokens(text):
                where = f"qa[{j}].{field_name}"
                if match.ref is None:
                    out.append(Violation(where, "token_grammar",
                                         f"malformed token {match.text!r}: {match.error}"))
                    continue
                out.extend(_check_object_ref(match.ref, where,
                                             media_cameras, media_by_camera, uniform_dims))

    return out


def _check_object_ref(ref: ObjectRef, where: str,
                      media_cameras: set[CameraId],
                      media_by_camera: Mapping[CameraId, MediaRef],
                      uniform_dims: tuple[int, int] | None) -> list[Violation]:
    out: list[Violation] = []
    geom = ref.geometry

    if ref.camera is not None and ref.camera not in media_cameras:
        out.append(Violation(where, "token_camera_in_media",
                             f"token {ref.source_tag!r} references camera "
                             f"{ref.camera} absent from media"))

    if isinstance(geom, (BBoxNorm, BBoxPx)):
        if geom.x_min > geom.x_max or geom.y_min > geom.y_max:
            out.append(Violation(where, "bbox_ordering",
                                 f"{type(geom).__name__} in {ref.source_tag!r} has "
                                 f"x_min > x_max or y_min > y_max"))
    if isinstance(geom, (BBoxNorm, PointNorm)):
        values = geom.as_tuple()
        if any(v < 0.0 or v > 100.0 for v in values):
            out.append(Violation(where, "norm_range",
                                 f"normalized coordinates outside [0, 100] in {ref.source_tag!r}"))
    else:
        # Pixel geometry is bounds-checked against the owning media when that
        # media can be identified (resolved camera, or uniform dims).
        wh: tuple[int, int] | None = None
        if ref.camera is not None and ref.camera in media_by_camera:
            m = media_by_camera[ref.camera]
            wh = (m.width, m.height)
        elif ref.camera is None:
            wh = uniform_dims
        if wh is not None:
            w, h = wh
            xs = (geom.x_min, geom.x_max) if isinstance(geom, BBoxPx) else (geom.x_center,)
            ys = (geom.y_min, geom.y_max) if isinstance(geom, BBoxPx) else (geom.y_center,)
            if any(x < 0 or x > w for x in xs) or any(y < 0 or y > h for y in ys):
                out.append(Violation(where, "pixel_bounds",
                                     f"pixel geometry in {ref.source_tag!r} exceeds "
                                     f"{w}x{h} image"))
    return out


# ---------------------------------------------------------------------------
# Serialization. Key order is part of the manifest contract and must not
# change: samples round-trip byte-identically through read/write.
# ---------------------------------------------------------------------------

def media_to_dict(m: MediaRef) -> dict[str, Any]:
    return {
        "kind": m.kind.value,
        "camera": m.camera.value,
        "frame_count": m.frame_count,
        "width": m.width,
        "height": m.height,
        "uri": m.uri,
    }


def qa_to_dict(qa: QAPair) -> dict[str, Any]:
    d: dict[str, Any] = {
        "question": qa.question,
        "answer": qa.answer,
        "style": qa.style.value,
        "provenance": qa.provenance.value,
    }
    if qa.options is not None:
        d["options"] = [[label, text] for label, text in qa.options]
    return d


def sample_to_dict(s: Sample) -> dict[str, Any]:
    return {
        "id": s.id,
        "dataset": s.dataset.value,
        "media": [media_to_dict(m) for m in s.media],
        "qa": [qa_to_dict(q) for q in s.qa],
        "task_tags": sorted(s.task_tags),
    }


def sample_to_json(s: Sample) -> str:
    return json.dumps(sample_to_dict(s), ensure_ascii=False)


def _require(d: Mapping[str, Any], key: str, path: str) -> Any:
    if key not in d:
        raise SchemaError(f"missing key {key!r}", path=path)
    return d[key]


def media_from_dict(d: Mapping[str, Any], path: str = "media") -> MediaRef:
    if not isinstance(d, Mapping):
        raise SchemaError("media entry must be an object", path=path)
    try:
        kind = MediaKind(_require(d, "kind", path))
        camera = CameraId(_require(d, "camera", path))
    except ValueError as exc:
        raise SchemaError(str(exc), path=path) from None
    frame_count = _require(d, "frame_count", path)
    width = _require(d, "width", path)
    height = _require(d, "height", path)
    for name, v in (("frame_count", frame_count), ("width", width), ("height", height)):
        if not isinstance(v, int) or isinstance(v, bool):
            raise SchemaError(f"{name} must be an integer, got {v!r}", path=path)
    uri = _require(d, "uri", path)
    if not isinstance(uri, str):
        raise SchemaError("uri must be a string", path=path)
    try:
        return MediaRef(kind, camera, frame_count, width, height, uri)
    except ValueError as exc:
        raise SchemaError(str(exc), path=path) from None


def qa_from_dict(d: Mapping[str, Any], path: str = "qa") -> QAPair:
    if not isinstance(d, Mapping):
        raise SchemaError("qa entry must be an object", path=path)
    question = _require(d, "question", path)
    answer = _require(d, "answer", path)
    if not isinstance(question, str) or not isinstance(answer, str):
        raise SchemaError("question/answer must be strings", path=path)
    try:
        style = QAStyle(d.get("style", "open"))
        provenance = Provenance(d.get("provenance", "original"))
    except ValueError as exc:
        raise SchemaError(str(exc), path=path) from None
    options = None
    if "options" in d and d["options"] is not None:
        raw = d["options"]
        if not isinstance(raw, list):
            raise SchemaError("options must be a list", path=path)
        pairs = []
        for item in raw:
            if not (isinstance(item, (list, tuple)) and len(item) == 2
                    and all(isinstance(x, str) for x in item)):
                raise SchemaError(f"option entries must be [label, text], got {item!r}",
                                  path=path)
            pairs.append((item[0], item[1]))
        options = tuple(pairs)
    return QAPair(question, answer, style, provenance, options)


def sample_from_dict(d: Mapping[str, Any], path: str = "sample") -> Sample:
    if not isinstance(d, Mapping):
        raise SchemaError("sample must be an object", path=path)
    sid = _require(d, "id", path)
    if not isinstance(sid, str):
        raise SchemaError("id must be a string", path=path)
    try:
        dataset = DatasetId(_require(d, "dataset", path))
    except ValueError as exc:
        raise SchemaError(str(exc), path=path) from None
    media_raw = _require(d, "media", path)
    qa_raw = _require(d, "qa", path)
    if not isinstance(media_raw, list) or not isinstance(qa_raw, list):
        raise SchemaError("media and qa must be lists", path=path)
    media = tuple(media_from_dict(m, f"{path}.media[{i}]") for i, m in enumerate(media_raw))
    qa = tuple(qa_from_dict(q, f"{path}.qa[{i}]") for i, q in enumerate(qa_raw))
    tags_raw = d.get("task_tags", [])
    if not isinstance(tags_raw, list) or not all(isinstance(t, str) for t in tags_raw):
        raise SchemaError("task_tags must be a list of strings", path=path)
    return Sample(sid, dataset, media, qa, frozenset(tags_raw))


def sample_from_json(line: str) -> Sample:
    try:
        payload = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}") from None
    return sample_from_dict(payload)


def assert_unique_ids(samples: Iterable[Sample]) -> None:
    seen: set[str] = set()
    for s in samples:
        if s.id in seen:
            raise SchemaError(f"duplicate sample id {s.id!r}")
        seen.add(s.id)
