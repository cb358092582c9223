import math
import random
from fractions import Fraction
from itertools import permutations

import pytest

from dataforge.core import BBoxNorm, CameraId, DatasetId, PointNorm
from dataforge.errors import EmptyInput, ResponseFormatError, SchemaError
from dataforge.metrics import (
    JUDGE_SYSTEM_TEXT,
    MetricReport,
    PredictionRecord,
    accuracy,
    average_precision,
    bleu,
    build_judge_prompt,
    center_match_score,
    default_match_radius,
    evaluate_records,
    iou,
    judge_score,
    mae,
    mean_average_precision,
    parse_judge_score,
    record_from_dict,
    report_to_dict,
)

# ----------------------------------------------------------------- accuracy

def test_accuracy_trivial_cases():
    same = [("yes", "yes")] * 5
    assert accuracy(same) == 1.0
    diff = [("yes", "no")] * 5
    assert accuracy(diff) == 0.0


def test_accuracy_three_of_four():
    pairs = [("a", "a"), ("b", "b"), ("c", "c"), ("d", "x")]
    assert accuracy(pairs) == 0.75


def test_accuracy_normalizes_whitespace_and_case():
    pairs = [("  Turn   LEFT ", "turn left")]
    assert accuracy(pairs) == 1.0
    assert accuracy(pairs, strict=True) == 0.0


def test_accuracy_empty_input():
    with pytest.raises(EmptyInput):
        accuracy([])


# --------------------------------------------------------------------- BLEU

def _oracle_bleu(candidate, references, max_n=4):
    """Independent reference BLEU: exact fractions, product-root geometric mean."""
    cand = candidate.split()
    refs = [r.split() for r in references]
    product = Fraction(1)
    for n in range(1, max_n + 1):
        cand_grams = {}
        for i in range(len(cand) - n + 1):
            g = tuple(cand[i:i + n])
            cand_grams[g] = cand_grams.get(g, 0) + 1
        total = sum(cand_grams.values())
        clipped = 0
        for g, count in cand_grams.items():
            best = 0
            for ref in refs:
                seen = 0
                for i in range(len(ref) - n + 1):
                    if tuple(ref[i:i + n]) == g:
                        seen += 1
                best = max(best, seen)
            clipped += min(count, best)
        if n == 1:
            if clipped == 0:
                return 0.0
            product *= Fraction(clipped, total)
        else:
            product *= Fraction(clipped + 1, total + 1)
    geo = float(product) ** (1.0 / max_n)
    c = len(cand)
    closest = sorted(refs, key=lambda ref: (abs(len(ref) - c), len(ref)))[0]
    r = len(closest)
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * geo


def test_bleu_identity_is_exactly_one():
    rng = random.Random(99)
    vocab = ["car", "stop", "red", "lane", "turn", "the", "a", "slow"]
    for _ in range(200):
        text = " ".join(rng.choice(vocab) for _ in range(rng.randrange(1, 12)))
        assert bleu(text, [text]) == 1.0


def test_bleu_disjoint_unigrams_is_zero():
    assert bleu("alpha beta gamma", ["delta epsilon zeta"]) == 0.0


def test_bleu_cat_sentence_hand_value():
    # p1=5/6, p2=(3+1)/(5+1), p3=(1+1)/(4+1), p4=(0+1)/(3+1); BP=1.
    expected = float(Fraction(5, 6) * Fraction(4, 6)
                     * Fraction(2, 5) * Fraction(1, 4)) ** 0.25
    got = bleu("the cat sat on the mat", ["the cat is on the mat"])
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx(
        _oracle_bleu("the cat sat on the mat", ["the cat is on the mat"]),
        abs=1e-9)


def test_bleu_matches_oracle_on_random_pairs():
    rng = random.Random(4242)
    vocab = ["the", "car", "red", "is", "stops", "on", "road", "a", "left"]
    for _ in range(300):
        cand = " ".join(rng.choice(vocab) for _ in range(rng.randrange(1, 10)))
        refs = [" ".join(rng.choice(vocab) for _ in range(rng.randrange(1, 10)))
                for _ in range(rng.randrange(1, 4))]
        assert bleu(cand, refs) == pytest.approx(_oracle_bleu(cand, refs),
                                                 abs=1e-9)


def test_bleu_brevity_penalty_uses_closest_reference():
    # candidate length 4; refs of length 5 and 8 -> r=5 -> BP=exp(1-5/4)
    cand = "a b c d"
    refs = ["a b c d e", "a b c d e f g h"]
    assert bleu(cand, refs) == pytest.approx(_oracle_bleu(cand, refs), abs=1e-9)
    # tie in distance goes to the shorter reference: c=6, refs 4 and 8 -> r=4 -> BP=1
    cand6 = "a b c d e f"
    refs_tie = ["a b c d", "a b c d e f g h"]
    assert bleu(cand6, refs_tie) == pytest.approx(
        _oracle_bleu(cand6, refs_tie), abs=1e-9)


def test_bleu_short_candidate_still_defined():
    # 2 tokens: no 3/4-grams exist; smoothing keeps those factors at 1.
    assert bleu("red car", ["red car"]) == 1.0
    assert 0.0 < bleu("red car", ["red truck"]) < 1.0


def test_bleu_max_n_override():
    got = bleu("a b x", ["a b y"], max_n=1)
    assert got == pytest.approx(_oracle_bleu("a b x", ["a b y"], max_n=1),
                                abs=1e-12)


def test_bleu_empty_inputs():
    with pytest.raises(EmptyInput):
        bleu("", ["ref"])
    with pytest.raises(EmptyInput):
        bleu("   ", ["ref"])
    with pytest.raises(EmptyInput):
        bleu("cand", [])
    with pytest.raises(EmptyInput):
        bleu("cand", ["ok", ""])


def test_bleu_range():
    rng = random.Random(5)
    vocab = ["u", "v", "w", "x"]
    for _ in range(200):
        cand = " ".join(rng.choice(vocab) for _ in range(rng.randrange(1, 8)))
        ref = " ".join(rng.choice(vocab) for _ in range(rng.randrange(1, 8)))
        assert 0.0 <= bleu(cand, [ref]) <= 1.0


# ----------------------------------------------------------------------- MAE

def test_mae_cases():
    assert mae([(1.0, 1.0), (4.0, 4.0)]) == 0.0
    assert mae([(v + 1, v) for v in (3.0, 7.0, 9.0)]) == 1.0
    assert mae([(1, 1), (2, 4), (8, 4)]) == pytest.approx(2.0)
    with pytest.raises(EmptyInput):
        mae([])


# ------------------------------------------------------------------------ AP

def _box(x0, y0, x1, y1):
    return BBoxNorm(x0, y0, x1, y1)


def test_iou_basic():
    a = _box(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, _box(20, 20, 30, 30)) == 0.0
    # half overlap: inter 50, union 150
    assert iou(a, _box(5, 0, 15, 10)) == pytest.approx(50 / 150)


def test_ap_single_perfect_detection():
    gt = _box(10, 10, 20, 20)
    assert average_precision([(gt, 0.9)], [gt]) == 1.0


def test_ap_single_zero_iou_detection():
    assert average_precision([(_box(0, 0, 5, 5), 0.9)],
                             [_box(50, 50, 60, 60)]) == 0.0


def test_ap_three_dets_two_gts_hand_value():
    gt1, gt2 = _box(0, 0, 10, 10), _box(50, 50, 60, 60)
    dets = [(gt1, 0.9),              # TP, precision 1/1, recall 1/2
            (_box(0, 0, 30, 30), 0.8),  # IoU 1/9 -> FP
            (gt2, 0.7)]              # TP, precision 2/3, recall 1
    # AP = 1/2 * 1 + 1/2 * 2/3 = 5/6
    assert average_precision(dets, [gt1, gt2]) == pytest.approx(5 / 6, abs=1e-12)


def _oracle_ap(dets, gts, thr=0.5):
    """Exact-fraction PR integration with a suffix precision envelope."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][1], i))
    matched = [False] * len(gts)
    tps = []
    for i in order:
        best, best_j = 0.0, -1
        for j, gt in enumerate(gts):
            if not matched[j] and iou(dets[i][0], gt) > best:
                best, best_j = iou(dets[i][0], gt), j
        if best_j >= 0 and best >= thr:
            matched[best_j] = True
            tps.append(True)
        else:
            tps.append(False)
    precisions, recalls = [], []
    cum = 0
    for k, tp in enumerate(tps, start=1):
        cum += tp
        precisions.append(Fraction(cum, k))
        recalls.append(Fraction(cum, len(gts)))
    envelope = list(precisions)
    for k in range(len(envelope) - 2, -1, -1):
        envelope[k] = max(envelope[k], envelope[k + 1])
    ap = Fraction(0)
    prev = Fraction(0)
    for k, tp in enumerate(tps):
        if tp:
            ap += (recalls[k] - prev) * envelope[k]
            prev = recalls[k]
    return float(ap)


def _random_detection_case(rng):
    gts = []
    for _ in range(rng.randrange(1, 5)):
        x0, y0 = rng.uniform(0, 80), rng.uniform(0, 80)
        gts.append(_box(x0, y0, x0 + rng.uniform(4, 20), y0 + rng.uniform(4, 20)))
    dets = []
    for _ in range(rng.randrange(0, 7)):
        if gts and rng.random() < 0.6:
            base = rng.choice(gts)
            dx, dy = rng.uniform(-4, 4), rng.uniform(-4, 4)
            box = _box(max(0.0, base.x_min + dx), max(0.0, base.y_min + dy),
                       min(100.0, base.x_max + dx), min(100.0, base.y_max + dy))
        else:
            x0, y0 = rng.uniform(0, 80), rng.uniform(0, 80)
            box = _box(x0, y0, x0 + rng.uniform(2, 20), y0 + rng.uniform(2, 20))
        dets.append((box, rng.random()))
    return dets, gts


def test_ap_matches_bruteforce_oracle():
    rng = random.Random(31337)
    for _ in range(200):
        dets, gts = _random_detection_case(rng)
        assert average_precision(dets, gts) == pytest.approx(
            _oracle_ap(dets, gts), abs=1e-9)


def test_ap_confidence_scale_invariance():
    rng = random.Random(77)
    for _ in range(50):
        dets, gts = _random_detection_case(rng)
        scaled = [(b, c * 3.7) for b, c in dets]
        assert average_precision(dets, gts) == average_precision(scaled, gts)


def test_ap_no_gt_is_skip():
    assert average_precision([(_box(0, 0, 1, 1), 0.5)], []) is None


def test_ap_rejects_nonfinite_confidence():
    with pytest.raises(ValueError):
        average_precision([(_box(0, 0, 1, 1), float("nan"))], [_box(0, 0, 1, 1)])


def test_mean_ap_skips_empty_groups():
    gt = _box(0, 0, 10, 10)
    groups = {
        "car": ([(gt, 0.9)], [gt]),
        "bus": ([(_box(0, 0, 5, 5), 0.9)], []),      # skipped, no GT
        "person": ([(_box(40, 40, 45, 45), 0.8)], [_box(0, 0, 10, 10)]),
    }
    value, n = mean_average_precision(groups)
    assert n == 2
    assert value == pytest.approx((1.0 + 0.0) / 2)
    assert mean_average_precision({"x": ([], [])}) == (None, 0)


def test_ap_range_property():
    rng = random.Random(8)
    for _ in range(100):
        dets, gts = _random_detection_case(rng)
        ap = average_precision(dets, gts)
        assert ap is None or 0.0 <= ap <= 1.0


# ---------------------------------------------------------------- center match

FRONT = CameraId.CAM_FRONT
BACK = CameraId.CAM_BACK


def _pt(x, y, cam=FRONT):
    return (PointNorm(x, y), cam)


def test_center_match_identity():
    gts = [_pt(10, 10), _pt(50, 50, BACK), _pt(90, 20)]
    assert center_match_score(gts, gts, radius=1.0) == 1.0


def test_center_match_wrong_cameras():
    gts = [_pt(10, 10, FRONT), _pt(50, 50, FRONT)]
    preds = [_pt(10, 10, BACK), _pt(50, 50, BACK)]
    assert center_match_score(preds, gts, radius=5.0) == 0.0


def test_center_match_three_of_four_fixture():
    gts = [_pt(10, 10), _pt(20, 20), _pt(30, 30), _pt(90, 90)]
    preds = [_pt(10.2, 10.0), _pt(20.0, 20.3), _pt(30.4, 30.0), _pt(60, 60)]
    score = center_match_score(preds, gts, radius=1.0)
    assert score == 0.75
    assert score == _exhaustive_match_score(preds, gts, 1.0)


def _exhaustive_match_score(preds, gts, radius):
    """Best one-to-one assignment, enumerated exhaustively (small fixtures)."""
    if not gts:
        return 1.0

    def hit(pred, gt):
        (pp, pcam), (gp, gcam) = pred, gt
        return pcam == gcam and math.hypot(pp.x_center - gp.x_center,
                                           pp.y_center - gp.y_center) <= radius

    best = 0
    if len(preds) >= len(gts):
        for perm in permutations(range(len(preds)), len(gts)):
            best = max(best, sum(1 for j, i in enumerate(perm)
                                 if hit(preds[i], gts[j])))
    else:
        for perm in permutations(range(len(gts)), len(preds)):
            best = max(best, sum(1 for i, j in enumerate(perm)
                                 if hit(preds[i], gts[j])))
    return best / len(gts)


def test_center_match_greedy_never_beats_exhaustive():
    rng = random.Random(1212)
    for _ in range(100):
        cams = [FRONT, BACK]
        gts = [_pt(rng.uniform(0, 100), rng.uniform(0, 100), rng.choice(cams))
               for _ in range(rng.randrange(1, 5))]
        preds = [_pt(rng.uniform(0, 100), rng.uniform(0, 100), rng.choice(cams))
                 for _ in range(rng.randrange(0, 5))]
        greedy = center_match_score(preds, gts, radius=20.0)
        assert greedy <= _exhaustive_match_score(preds, gts, 20.0) + 1e-12
        assert 0.0 <= greedy <= 1.0


def test_center_match_each_pred_consumed_once():
    gts = [_pt(10, 10), _pt(10.5, 10)]
    preds = [_pt(10.1, 10)]
    assert center_match_score(preds, gts, radius=2.0) == 0.5


def test_center_match_far_pred_changes_nothing():
    gts = [_pt(10, 10), _pt(20, 20)]
    preds = [_pt(10, 10)]
    base = center_match_score(preds, gts, radius=1.0)
    assert center_match_score(preds + [_pt(99, 99)], gts, radius=1.0) == base


def test_center_match_edge_inputs():
    assert center_match_score([], [], radius=1.0) == 1.0
    assert center_match_score([_pt(1, 1)], [], radius=1.0) == 1.0
    assert center_match_score([], [_pt(1, 1)], radius=1.0) == 0.0
    with pytest.raises(ValueError):
        center_match_score([], [_pt(1, 1)], radius=0.0)


def test_default_match_radius():
    assert default_match_radius(1600) == 1.0
    assert default_match_radius(800) == 2.0
    with pytest.raises(ValueError):
        default_match_radius(0)


def test_center_match_bare_camera_points_match():
    gts = [(PointNorm(10.0, 10.0), None)]
    preds = [(PointNorm(10.2, 10.0), None)]
    assert center_match_score(preds, gts, radius=1.0) == 1.0


# ------------------------------------------------------------------- judging

def test_build_judge_prompt_contents():
    system, user = build_judge_prompt("pred text", "gold text", "Rate 0-100.")
    assert system == JUDGE_SYSTEM_TEXT
    assert user.startswith("Rate 0-100.")
    assert "Reference answer: gold text" in user
    assert "Candidate answer: pred text" in user
    assert "Score: <number>" in user


def test_parse_judge_score():
    assert parse_judge_score("Score: 85") == 85.0
    assert parse_judge_score("Sure!\nScore: 3.5 out of 5") == 3.5
    assert parse_judge_score("Score: -2") == -2.0
    with pytest.raises(ResponseFormatError):
        parse_judge_score("I think this is great")
    with pytest.raises(ResponseFormatError):
        parse_judge_score("Score: N/A")


def test_judge_offline_skips_without_calling():
    def explode(system, user):
        raise AssertionError("transport must not be called offline")

    outcome = judge_score("p", "g", "rubric", explode, offline=True)
    assert outcome.status == "skipped"
    assert outcome.score is None
    assert judge_score("p", "g", "rubric", None).status == "skipped"


def test_judge_scored_path():
    calls = []

    def stub(system, user):
        calls.append((system, user))
        return "Score: 85"

    outcome = judge_score("p", "g", "rubric", stub)
    assert outcome == pytest.approx((85.0,), abs=0) or outcome.score == 85.0
    assert outcome.status == "scored"
    assert len(calls) == 1
    assert calls[0][0] == JUDGE_SYSTEM_TEXT


def test_judge_malformed_reply():
    with pytest.raises(ResponseFormatError):
        judge_score("p", "g", "rubric", lambda s, u: "no score here")


# --------------------------------------------------------- records & reports

def test_record_from_dict_shapes():
    rec = record_from_dict({"sample_id": "a/1", "task": "classification",
                            "predicted": "yes", "gold": "no"})
    assert rec.predicted == "yes"

    rec = record_from_dict({"sample_id": "a/2", "task": "regression",
                            "predicted": 3, "gold": 4.5})
    assert rec.predicted == 3.0 and rec.gold == 4.5

    rec = record_from_dict({
        "sample_id": "a/3", "task": "detection",
        "predicted": [{"bbox": [0, 0, 10, 10], "confidence": 0.9}],
        "gold": [{"bbox": [0, 0, 10, 10]}]})
    assert rec.predicted[0][0] == BBoxNorm(0.0, 0.0, 10.0, 10.0)
    assert rec.predicted[0][1] == 0.9

    rec = record_from_dict({
        "sample_id": "a/4", "task": "grounding",
        "predicted": [{"point": [10, 20], "camera": "CAM_FRONT"}],
        "gold": [{"point": [10, 20]}]})
    assert rec.predicted[0] == (PointNorm(10.0, 20.0), CameraId.CAM_FRONT)
    assert rec.gold[0] == (PointNorm(10.0, 20.0), None)


@pytest.mark.parametrize("bad", [
    {"task": "classification", "predicted": "a", "gold": "b"},  # no sample_id
    {"sample_id": "x", "task": "nonsense", "predicted": "a", "gold": "b"},
    {"sample_id": "x", "task": "classification", "predicted": 3, "gold": "b"},
    {"sample_id": "x", "task": "regression", "predicted": "3", "gold": 4},
    {"sample_id": "x", "task": "detection", "predicted": "no", "gold": []},
    {"sample_id": "x", "task": "detection",
     "predicted": [{"bbox": [0, 0, 10], "confidence": 0.5}], "gold": []},
    {"sample_id": "x", "task": "detection",
     "predicted": [{"bbox": [0, 0, 10, 10]}], "gold": []},
    {"sample_id": "x", "task": "detection",
     "predicted": [{"bbox": [0, 0, 10, 10], "confidence": float("inf")}],
     "gold": []},
    {"sample_id": "x", "task": "detection",
     "predicted": [{"bbox": [50, 0, 10, 10], "confidence": 0.5}], "gold": []},
    {"sample_id": "x", "task": "grounding", "predicted": [{"point": [5]}],
     "gold": []},
    {"sample_id": "x", "task": "grounding",
     "predicted": [{"point": [5, 500]}], "gold": []},
])
def test_record_from_dict_rejects(bad):
    with pytest.raises(SchemaError):
        record_from_dict(bad, line=7)


def test_evaluate_records_mixed_batch():
    records = [
        record_from_dict({"sample_id": "s/1", "task": "classification",
                          "predicted": "Red", "gold": "red"}),
        record_from_dict({"sample_id": "s/2", "task": "classification",
                          "predicted": "green", "gold": "red"}),
        record_from_dict({"sample_id": "s/3", "task": "caption",
                          "predicted": "a car", "gold": "a car"}),
        record_from_dict({"sample_id": "s/4", "task": "regression",
                          "predicted": 5, "gold": 7}),
        record_from_dict({"sample_id": "s/5", "task": "detection",
                          "predicted": [{"bbox": [0, 0, 10, 10],
                                         "confidence": 0.9}],
                          "gold": [{"bbox": [0, 0, 10, 10]}]}),
        record_from_dict({"sample_id": "s/6", "task": "grounding",
                          "predicted": [{"point": [10, 10],
                                         "camera": "CAM_FRONT"}],
                          "gold": [{"point": [10, 10],
                                    "camera": "CAM_FRONT"}]}),
    ]
    report = evaluate_records(records, DatasetId.CODA_LM)
    assert report.entries["accuracy"] == (0.5, 2)
    assert report.entries["bleu"] == (1.0, 1)
    assert report.entries["mae"] == (2.0, 1)
    assert report.entries["detection_ap"] == (1.0, 1)
    assert report.entries["center_match"] == (1.0, 1)


def test_evaluate_records_order_free():
    rng = random.Random(3)
    records = [
        record_from_dict({"sample_id": f"s/{i}", "task": "classification",
                          "predicted": rng.choice(["a", "b"]),
                          "gold": "a"})
        for i in range(20)
    ] + [
        record_from_dict({"sample_id": f"c/{i}", "task": "caption",
                          "predicted": "two cars parked",
                          "gold": "two cars parked near the curb"})
        for i in range(5)
    ]
    base = evaluate_records(records, DatasetId.GENERIC)
    shuffled = records[:]
    rng.shuffle(shuffled)
    assert evaluate_records(shuffled, DatasetId.GENERIC).entries == base.entries


def test_evaluate_records_detection_all_skipped():
    records = [record_from_dict({"sample_id": "s/1", "task": "detection",
                                 "predicted": [], "gold": []})]
    report = evaluate_records(records, DatasetId.GENERIC)
    assert "detection_ap" not in report.entries


def test_evaluate_records_empty():
    with pytest.raises(EmptyInput):
        evaluate_records([], DatasetId.GENERIC)


def test_report_to_dict_shape():
    report = MetricReport(dataset=DatasetId.MAPLM,
                          entries={"accuracy": (0.5, 10), "bleu": (0.25, 4)})
    assert report_to_dict(report) == {
        "dataset": "maplm",
        "entries": {
            "accuracy": {"value": 0.5, "n_samples": 10},
            "bleu": {"value": 0.25, "n_samples": 4},
        },
    }
