"""QA augmentation: paraphrase, multiple-choice transformation, expansion.

Two paraphrase paths share one request format: an HTTP chat rewriter (the
online path) and a deterministic rule-table paraphraser used offline and as
the fallback when the service misbehaves. Expansion derives every random
decision from (global_seed, dataset, sample_id, step), so results do not
depend on worker scheduling.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Callable, Iterable, Sequence

from . import tokens as tok
from .core import DatasetId, Provenance, QAPair, QAStyle, Sample
from .errors import DataforgeError, PoolTooSmall, ResponseFormatError

SYSTEM_TEXT = "You are an English improver."

USER_TEMPLATE = (
    "I have a question and its corresponding answer. I need your assistance "
    "in revising and refining them. Please make some changes to the written "
    "content while preserving the meaning. The question and answer that "
    "require modifications are: {QA}. Please provide the revised question "
    "and answer in the format: Question: <question> Answer: <answer>."
)


@dataclass(frozen=True)
class RewriterRequest:
    system_text: str
    user_text: str

    def __post_init__(self) -> None:
        if self.system_text != SYSTEM_TEXT:
            raise ValueError("rewriter system text is fixed")


# A rewriter takes a request and returns the raw model text.
Rewriter = Callable[[RewriterRequest], str]


def build_rewriter_request(qa: QAPair) -> RewriterRequest:
    payload = f"Question: {qa.question} Answer: {qa.answer}"
    return RewriterRequest(SYSTEM_TEXT, USER_TEMPLATE.replace("{QA}", payload))


def parse_rewriter_response(text: str) -> QAPair:
    """Extract the rewritten pair from 'Question: ... Answer: ...' text."""
    q_marker, a_marker = "Question:", "Answer:"
    q_at = text.find(q_marker)
    if q_at < 0:
        raise ResponseFormatError(f"no {q_marker!r} marker in: {text[:80]!r}")
    a_at = text.find(a_marker, q_at + len(q_marker))
    if a_at < 0:
        raise ResponseFormatError(f"no {a_marker!r} marker after question in: "
                                  f"{text[:80]!r}")
    question = text[q_at + len(q_marker):a_at].strip()
    answer = text[a_at + len(a_marker):].strip()
    if not question or not answer:
        raise ResponseFormatError(f"empty question or answer in: {text[:80]!r}")
    return QAPair(question, answer, QAStyle.OPEN, Provenance.PARAPHRASE)


# ---------------------------------------------------------------------------
# Seeded randomness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeededRng:
    """Derives an independent random stream per (dataset, sample, step) key."""

    global_seed: int = 0

    def stream(self, dataset: DatasetId | str, sample_id: str, step: str) -> random.Random:
        name = dataset.value if isinstance(dataset, DatasetId) else dataset
        key = f"{self.global_seed}\x1f{name}\x1f{sample_id}\x1f{step}"
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return random.Random(int.from_bytes(digest[:8], "big"))


# ---------------------------------------------------------------------------
# Deterministic local paraphraser
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParaphraseRules:
    question_lead_ins: tuple[str, ...]
    answer_lead_ins: tuple[str, ...]
    synonyms: dict[str, tuple[str, ...]]
    synonym_re: re.Pattern
    clause_re: re.Pattern


@lru_cache(maxsize=1)
def load_rules() -> ParaphraseRules:
    raw = json.loads(
        resources.files("dataforge").joinpath("data/paraphrase_rules.json")
        .read_text(encoding="utf-8"))
    synonyms = {e["match"]: tuple(e["alternatives"]) for e in raw["synonyms"]}
    # longest-first so multiword entries win over their prefixes
    words = sorted(synonyms, key=len, reverse=True)
    synonym_re = re.compile(r"\b(" + "|".join(re.escape(w) for w in words) + r")\b")
    markers = "|".join(re.escape(m) for m in raw["movable_clause_markers"])
    clause_re = re.compile(
        rf"^((?:{markers})\b[^,<>\[\]\n]{{0,40}}), (\S.*)$")
    return ParaphraseRules(
        tuple(raw["question_lead_ins"]),
        tuple(raw["answer_lead_ins"]),
        synonyms,
        synonym_re,
        clause_re,
    )


_SENTINEL = "\x00{}\x00"


def _protect_tokens(text: str) -> tuple[str, list[str]]:
    spans = []
    saved = []
    for i, m in enumerate(tok.scan_tokens(text)):
        spans.append((m.start, m.end, _SENTINEL.format(i)))
        saved.append(m.text)
    return tok.replace_spans(text, spans), saved


def _restore_tokens(text: str, saved: list[str]) -> str:
    for i, original in enumerate(saved):
        text = text.replace(_SENTINEL.format(i), original, 1)
    return text


def _rotate_lead_clause(text: str, rng: random.Random, rules: ParaphraseRules) -> str:
    m = rules.clause_re.match(text)
    if not m or rng.random() >= 0.5:
        return text
    clause, rest = m.group(1), m.group(2)
    punct = rest[-1] if rest and rest[-1] in ".?!" else ""
    core = rest[:-1] if punct else rest
    if not core:
        return text
    return (core[0].upper() + core[1:] + " "
            + clause[0].lower() + clause[1:] + punct)


def _apply_synonyms(text: str, rng: random.Random, rules: ParaphraseRules) -> str:
    def swap(m: re.Match) -> str:
        word = m.group(0)
        if rng.random() < 0.5:
            return rng.choice(rules.synonyms[word])
        return word

    return rules.synonym_re.sub(swap, text)


def _lead_in(text: str, rng: random.Random, lead_ins: Sequence[str],
             decapitalize: bool) -> str:
    lead = rng.choice(lead_ins)
    if not lead:
        return text
    if decapitalize and text and text[0].isupper():
        first_word = text.split(None, 1)[0]
        if not (len(first_word) > 1 and first_word.isupper()) and text[0] != "<":
            text = text[0].lower() + text[1:]
    return lead + text


def _transform(text: str, rng: random.Random, lead_ins: Sequence[str],
               rules: ParaphraseRules, decapitalize: bool) -> str:
    if len(text.split()) < 2:
        return text  # single token: nothing safe to vary
    protected, saved = _protect_tokens(text)
    out = _rotate_lead_clause(protected, rng, rules)
    out = _apply_synonyms(out, rng, rules)
    out = _lead_in(out, rng, lead_ins, decapitalize)
    if out == protected:
        # force a visible change: first non-empty lead-in
        out = _lead_in(out, random.Random(1), [lead_ins[1]], decapitalize)
    return _restore_tokens(out, saved)


def local_paraphrase(qa: QAPair, rng: random.Random,
                     rules: ParaphraseRules | None = None) -> QAPair:
    """Deterministic meaning-preserving rewrite driven by the shipped rule
    table; object tokens pass through untouched."""
    rules = rules or load_rules()
    question = _transform(qa.question, rng, rules.question_lead_ins, rules, False)
    answer = _transform(qa.answer, rng, rules.answer_lead_ins, rules, True)
    return QAPair(question, answer, QAStyle.OPEN, Provenance.PARAPHRASE)


# ---------------------------------------------------------------------------
# Multiple-choice transformation
# ---------------------------------------------------------------------------

_MC_LABELS = ("A", "B", "C", "D")


def to_multiple_choice(qa: QAPair, distractor_pool: Sequence[str],
                       rng: random.Random) -> QAPair:
    """Turn an open QA into a 4-option question whose answer field is the
    correct label; the correct text keeps the original answer verbatim."""
    seen = set()
    filtered = []
    for text in distractor_pool:
        if text != qa.answer and text not in seen:
            seen.add(text)
            filtered.append(text)
    if len(filtered) < 3:
        raise PoolTooSmall(
            f"need 3 distinct distractors, pool offers {len(filtered)}")
    distractors = rng.sample(filtered, 3)
    correct_at = rng.randrange(4)
    texts = distractors[:correct_at] + [qa.answer] + distractors[correct_at:]
    options = tuple(zip(_MC_LABELS, texts))
    return QAPair(qa.question, _MC_LABELS[correct_at],
                  QAStyle.MULTIPLE_CHOICE, Provenance.MC_TRANSFORM, options)


# ---------------------------------------------------------------------------
# Dataset expansion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExpansionPolicy:
    dataset: DatasetId
    factor: int
    mc_fraction: float = 0.2

    def __post_init__(self) -> None:
        if self.factor < 1:
            raise ValueError("expansion factor must be >= 1")
        if not 0.0 <= self.mc_fraction <= 1.0:
            raise ValueError("mc_fraction must be in [0, 1]")


# Ratios taken from the shipped stage-4 data recipe; everything else passes
# through unexpanded.
DEFAULT_FACTORS: dict[DatasetId, int] = {
    DatasetId.CODA_LM: 5,
    DatasetId.MAPLM: 2,
}


def default_policy(dataset: DatasetId, mc_fraction: float = 0.2) -> ExpansionPolicy:
    return ExpansionPolicy(dataset, DEFAULT_FACTORS.get(dataset, 1), mc_fraction)


# Distractor pools are capped so conversion cost stays flat as manifests grow.
_POOL_CAP = 64


def _build_pools(samples: Sequence[Sample]) -> dict[str, list[str]]:
    pools: dict[str, list[str]] = {}
    seen: dict[str, set] = {}
    for s in samples:
        for qa in s.qa:
            if qa.style is not QAStyle.OPEN:
                continue
            for tag in sorted(s.task_tags):
                bucket = pools.setdefault(tag, [])
                if len(bucket) >= _POOL_CAP:
                    continue
                marks = seen.setdefault(tag, set())
                if qa.answer not in marks:
                    marks.add(qa.answer)
                    bucket.append(qa.answer)
    return pools


def _pool_for(sample: Sample, pools: dict[str, list[str]]) -> list[str]:
    out: list[str] = []
    seen: set[str] = set()
    for tag in sorted(sample.task_tags):
        for answer in pools.get(tag, ()):
            if answer not in seen:
                seen.add(answer)
                out.append(answer)
    return out


def _paraphrase_qa(qa: QAPair, stream: random.Random,
                   rewriter: Rewriter | None) -> QAPair:
    if rewriter is not None:
        try:
            return parse_rewriter_response(rewriter(build_rewriter_request(qa)))
        except DataforgeError:
            pass  # service failure: fall back to the offline path
    return local_paraphrase(qa, stream)


def expand_sample(sample: Sample, policy: ExpansionPolicy, rng: SeededRng,
                  pool: Sequence[str], rewriter: Rewriter | None = None
                  ) -> list[Sample]:
    """One original plus (factor - 1) derived copies with '#augN' id suffixes."""
    out = [sample]
    for copy_no in range(1, policy.factor):
        new_qa = []
        for j, qa in enumerate(sample.qa):
            if qa.style is not QAStyle.OPEN:
                new_qa.append(qa)
                continue
            stream = rng.stream(sample.dataset, sample.id, f"para/{copy_no}/{j}")
            new = _paraphrase_qa(qa, stream, rewriter)
            mc_stream = rng.stream(sample.dataset, sample.id, f"mc/{copy_no}/{j}")
            if mc_stream.random() < policy.mc_fraction:
                try:
                    new = to_multiple_choice(new, pool, mc_stream)
                except PoolTooSmall:
                    pass  # not enough distinct answers nearby; stay open
            new_qa.append(new)
        out.append(Sample(f"{sample.id}#aug{copy_no}", sample.dataset,
                          sample.media, tuple(new_qa), sample.task_tags))
    return out


def expand_dataset(samples: Sequence[Sample], policy: ExpansionPolicy,
                   rng: SeededRng | None = None,
                   rewriter: Rewriter | None = None,
                   jobs: int = 1) -> list[Sample]:
    """Expand a manifest by policy.factor; originals pass through bit-for-bit.

    Output order is input order with each sample's copies following it; the
    result is identical for any jobs value.
    """
    rng = rng or SeededRng(0)
    pools = _build_pools(samples)

    def one(sample: Sample) -> list[Sample]:
        return expand_sample(sample, policy, rng, _pool_for(sample, pools),
                             rewriter)

    if jobs <= 1 or len(samples) < 2:
        groups: Iterable[list[Sample]] = map(one, samples)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool_exec:
            groups = list(pool_exec.map(one, samples, chunksize=64))
    return [s for group in groups for s in group]
