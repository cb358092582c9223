"""Rule-based evaluation: accuracy, BLEU, MAE, detection AP, center matching.

Everything here is deterministic and offline. The only network-shaped piece
is the judge interface, which builds a grading prompt, hands it to a caller
supplied transport, and parses a "Score: <number>" reply; in offline mode it
reports itself as skipped instead of calling anything.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .core import BBoxNorm, CameraId, DatasetId, PointNorm
from .errors import EmptyInput, ResponseFormatError, SchemaError

# ------------------------------------------------------------------ accuracy

def _normalize_text(s: str) -> str:
    return " ".join(s.split()).casefold()


def accuracy(pairs: Iterable[tuple[str, str]], *, strict: bool = False) -> float:
    """Exact-match ratio; whitespace runs and case are ignored unless strict."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyInput("accuracy needs at least one (predicted, gold) pair")
    if strict:
        hits = sum(1 for p, g in pairs if p == g)
    else:
        hits = sum(1 for p, g in pairs if _normalize_text(p) == _normalize_text(g))
    return hits / len(pairs)


# ---------------------------------------------------------------------- BLEU

def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, references: Sequence[str], max_n: int = 4) -> float:
    """Corpus-standard sentence BLEU on whitespace tokens.

    Uniform weights over n=1..max_n, brevity penalty against the closest
    reference length (ties go to the shorter), and add-one smoothing on the
    n>1 precisions. A candidate sharing no unigram with any reference scores
    exactly 0.
    """
    cand = candidate.split()
    if not cand:
        raise EmptyInput("candidate has no tokens")
    if not references:
        raise EmptyInput("need at least one reference")
    refs = [r.split() for r in references]
    if any(not r for r in refs):
        raise EmptyInput("reference has no tokens")

    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand_counts = _ngrams(cand, n)
        total = sum(cand_counts.values())
        max_ref = Counter()
        for ref in refs:
            for gram, count in _ngrams(ref, n).items():
                if count > max_ref[gram]:
                    max_ref[gram] = count
        clipped = sum(min(count, max_ref[gram])
                      for gram, count in cand_counts.items())
        if n == 1:
            if clipped == 0:
                return 0.0
            precision = clipped / total
        else:
            precision = (clipped + 1) / (total + 1)
        log_sum += math.log(precision) / max_n

    c = len(cand)
    r = min((abs(len(ref) - c), len(ref)) for ref in refs)[1]
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * math.exp(log_sum)


# ----------------------------------------------------------------------- MAE

def mae(pairs: Iterable[tuple[float, float]]) -> float:
    pairs = list(pairs)
    if not pairs:
        raise EmptyInput("mae needs at least one (predicted, gold) pair")
    return sum(abs(p - g) for p, g in pairs) / len(pairs)


# ------------------------------------------------------------------ detection

Box = BBoxNorm  # any object with x_min/y_min/x_max/y_max works


def iou(a, b) -> float:
    ix = max(0.0, min(a.x_max, b.x_max) - max(a.x_min, b.x_min))
    iy = max(0.0, min(a.y_max, b.y_max) - max(a.y_min, b.y_min))
    inter = ix * iy
    if inter == 0.0:
        return 0.0
    area_a = (a.x_max - a.x_min) * (a.y_max - a.y_min)
    area_b = (b.x_max - b.x_min) * (b.y_max - b.y_min)
    return inter / (area_a + area_b - inter)


def average_precision(dets: Sequence[tuple[Box, float]], gts: Sequence[Box],
                      iou_threshold: float = 0.5) -> float | None:
    """All-point interpolated AP with greedy highest-IoU matching.

    Returns None when there is no ground truth (AP undefined; callers report
    the group as skipped).
    """
    for _box, conf in dets:
        if not math.isfinite(conf):
            raise ValueError("confidences must be finite")
    if not gts:
        return None
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][1], i))
    matched = [False] * len(gts)
    tps: list[bool] = []
    for i in order:
        box = dets[i][0]
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gts):
            if matched[j]:
                continue
            v = iou(box, gt)
            if v > best_iou:
                best_iou, best_j = v, j
        if best_j >= 0 and best_iou >= iou_threshold:
            matched[best_j] = True
            tps.append(True)
        else:
            tps.append(False)

    precisions: list[float] = []
    recalls: list[float] = []
    tp_cum = 0
    for k, is_tp in enumerate(tps, start=1):
        tp_cum += is_tp
        precisions.append(tp_cum / k)
        recalls.append(tp_cum / len(gts))

    ap = 0.0
    prev_recall = 0.0
    for k, is_tp in enumerate(tps):
        if is_tp:
            ap += (recalls[k] - prev_recall) * max(precisions[k:])
            prev_recall = recalls[k]
    return ap


def mean_average_precision(
        groups: Mapping[str, tuple[Sequence[tuple[Box, float]], Sequence[Box]]],
        iou_threshold: float = 0.5) -> tuple[float | None, int]:
    """Mean of per-group AP; groups without ground truth are skipped.

    Returns (map or None if every group was skipped, number of scored groups).
    """
    scores = []
    for dets, gts in groups.values():
        ap = average_precision(dets, gts, iou_threshold)
        if ap is not None:
            scores.append(ap)
    if not scores:
        return None, 0
    return sum(scores) / len(scores), len(scores)


# -------------------------------------------------------------- center match

CameraPoint = tuple[PointNorm, CameraId | None]


def default_match_radius(width: int, pixels: float = 16.0) -> float:
    """A pixel radius expressed in normalized (0-100) units for this width."""
    if width <= 0:
        raise ValueError("width must be positive")
    return pixels * 100.0 / width


def center_match_score(preds: Sequence[CameraPoint], gts: Sequence[CameraPoint],
                       radius: float) -> float:
    """Fraction of GT points claimed by a same-camera prediction within radius.

    Matching is greedy nearest-first and each prediction consumes at most one
    GT. With no GT points the score is vacuously 1.0.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if not gts:
        return 1.0
    candidates: list[tuple[float, int, int]] = []
    for i, (pp, pcam) in enumerate(preds):
        for j, (gp, gcam) in enumerate(gts):
            if pcam != gcam:
                continue
            dist = math.hypot(pp.x_center - gp.x_center, pp.y_center - gp.y_center)
            if dist <= radius:
                candidates.append((dist, i, j))
    candidates.sort()
    used_pred: set[int] = set()
    used_gt: set[int] = set()
    for dist, i, j in candidates:
        if i in used_pred or j in used_gt:
            continue
        used_pred.add(i)
        used_gt.add(j)
    return len(used_gt) / len(gts)


# ------------------------------------------------------------------ judging

JUDGE_SYSTEM_TEXT = "You are an impartial grader of driving-scene answers."

JudgeTransport = Callable[[str, str], str]  # (system, user) -> reply text

_SCORE_RE = re.compile(r"Score:\s*(-?\d+(?:\.\d+)?)")


def build_judge_prompt(pred: str, gold: str, rubric: str) -> tuple[str, str]:
    user = (f"{rubric}\n\n"
            f"Reference answer: {gold}\n"
            f"Candidate answer: {pred}\n\n"
            "Reply with 'Score: <number>'.")
    return JUDGE_SYSTEM_TEXT, user


def parse_judge_score(text: str) -> float:
    m = _SCORE_RE.search(text)
    if m is None:
        raise ResponseFormatError(f"no 'Score: <number>' in reply: {text!r}")
    return float(m.group(1))


@dataclass(frozen=True)
class JudgeOutcome:
    status: str  # "scored" | "skipped"
    score: float | None = None


def judge_score(pred: str, gold: str, rubric: str,
                transport: JudgeTransport | None,
                offline: bool = False) -> JudgeOutcome:
    """Forward one grading request; offline (or transport-less) mode skips."""
    if offline or transport is None:
        return JudgeOutcome(status="skipped")
    system, user = build_judge_prompt(pred, gold, rubric)
    return JudgeOutcome(status="scored", score=parse_judge_score(
        transport(system, user)))


# ----------------------------------------------------- records and reports

TASKS = ("classification", "caption", "regression", "detection", "grounding")


@dataclass(frozen=True)
class PredictionRecord:
    sample_id: str
    task: str
    predicted: object
    gold: object


@dataclass(frozen=True)
class MetricReport:
    dataset: DatasetId
    entries: dict[str, tuple[float, int]] = field(default_factory=dict)


def _parse_box(value, path: str) -> BBoxNorm:
    if (not isinstance(value, (list, tuple)) or len(value) != 4
            or not all(isinstance(v, (int, float)) for v in value)):
        raise SchemaError("bbox must be [x_min, y_min, x_max, y_max]", path=path)
    x0, y0, x1, y1 = (float(v) for v in value)
    if not (0.0 <= x0 <= x1 <= 100.0 and 0.0 <= y0 <= y1 <= 100.0):
        raise SchemaError("bbox must be ordered and within 0..100", path=path)
    return BBoxNorm(x0, y0, x1, y1)


def _parse_point(entry, path: str) -> CameraPoint:
    if not isinstance(entry, dict) or "point" not in entry:
        raise SchemaError("expected {point: [x, y], camera?}", path=path)
    pt = entry["point"]
    if (not isinstance(pt, (list, tuple)) or len(pt) != 2
            or not all(isinstance(v, (int, float)) for v in pt)):
        raise SchemaError("point must be [x, y]", path=path)
    x, y = float(pt[0]), float(pt[1])
    if not (0.0 <= x <= 100.0 and 0.0 <= y <= 100.0):
        raise SchemaError("point must be within 0..100", path=path)
    camera = None
    if entry.get("camera") is not None:
        camera = CameraId.parse(entry["camera"])
    return PointNorm(x, y), camera


def record_from_dict(data: dict, *, line: int | None = None) -> PredictionRecord:
    """Parse one predictions-file record, checking shape against its task."""
    for key in ("sample_id", "task", "predicted", "gold"):
        if key not in data:
            raise SchemaError(f"missing key {key!r}", line=line)
    task = data["task"]
    if task not in TASKS:
        raise SchemaError(f"unknown task {task!r}", line=line)
    predicted, gold = data["predicted"], data["gold"]
    if task in ("classification", "caption"):
        if not isinstance(predicted, str) or not isinstance(gold, str):
            raise SchemaError(f"{task} records need string fields", line=line)
    elif task == "regression":
        if not all(isinstance(v, (int, float)) for v in (predicted, gold)):
            raise SchemaError("regression records need numeric fields", line=line)
        predicted, gold = float(predicted), float(gold)
    elif task == "detection":
        if not isinstance(predicted, list) or not isinstance(gold, list):
            raise SchemaError("detection records need list fields", line=line)
        dets = []
        for k, d in enumerate(predicted):
            if not isinstance(d, dict) or "bbox" not in d or "confidence" not in d:
                raise SchemaError("expected {bbox, confidence}",
                                  path=f"predicted[{k}]", line=line)
            conf = d["confidence"]
            if not isinstance(conf, (int, float)) or not math.isfinite(conf):
                raise SchemaError("confidence must be a finite number",
                                  path=f"predicted[{k}]", line=line)
            dets.append((_parse_box(d["bbox"], f"predicted[{k}].bbox"),
                         float(conf)))
        gts = []
        for k, d in enumerate(gold):
            if not isinstance(d, dict) or "bbox" not in d:
                raise SchemaError("expected {bbox}", path=f"gold[{k}]", line=line)
            gts.append(_parse_box(d["bbox"], f"gold[{k}].bbox"))
        predicted, gold = tuple(dets), tuple(gts)
    else:  # grounding
        if not isinstance(predicted, list) or not isinstance(gold, list):
            raise SchemaError("grounding records need list fields", line=line)
        predicted = tuple(_parse_point(e, f"predicted[{k}]")
                          for k, e in enumerate(predicted))
        gold = tuple(_parse_point(e, f"gold[{k}]")
                     for k, e in enumerate(gold))
    return PredictionRecord(sample_id=data["sample_id"], task=task,
                            predicted=predicted, gold=gold)


def evaluate_records(records: Sequence[PredictionRecord], dataset: DatasetId,
                     *, iou_threshold: float = 0.5,
                     match_radius: float = 1.0) -> MetricReport:
    """Score a batch of records into one report, grouped by task.

    Detection and grounding are scored per record and averaged; detection
    records without ground truth are skipped. Aggregation is order-free.
    """
    if not records:
        raise EmptyInput("no prediction records to evaluate")
    by_task: dict[str, list[PredictionRecord]] = {}
    for rec in records:
        by_task.setdefault(rec.task, []).append(rec)

    entries: dict[str, tuple[float, int]] = {}
    if "classification" in by_task:
        recs = by_task["classification"]
        entries["accuracy"] = (
            accuracy((r.predicted, r.gold) for r in recs), len(recs))
    if "caption" in by_task:
        recs = by_task["caption"]
        total = sum(bleu(r.predicted, [r.gold]) for r in recs)
        entries["bleu"] = (total / len(recs), len(recs))
    if "regression" in by_task:
        recs = by_task["regression"]
        entries["mae"] = (mae((r.predicted, r.gold) for r in recs), len(recs))
    if "detection" in by_task:
        scores = []
        for r in by_task["detection"]:
            ap = average_precision(r.predicted, r.gold, iou_threshold)
            if ap is not None:
                scores.append(ap)
        if scores:
            entries["detection_ap"] = (sum(scores) / len(scores), len(scores))
    if "grounding" in by_task:
        recs = by_task["grounding"]
        total = sum(center_match_score(r.predicted, r.gold, match_radius)
                    for r in recs)
        entries["center_match"] = (total / len(recs), len(recs))
    return MetricReport(dataset=dataset, entries=entries)


def report_to_dict(report: MetricReport) -> dict:
    return {
        "dataset": report.dataset.value,
        "entries": {
            name: {"value": value, "n_samples": n}
            for name, (value, n) in sorted(report.entries.items())
        },
    }
