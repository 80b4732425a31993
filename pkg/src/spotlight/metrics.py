"""Answer scoring: exact match, token F1, ANLS, MCQ accuracy, aggregation.

All text metrics run on the shared answer normalization. ANLS measures edit
distance on lightly normalized strings (case and whitespace folded,
punctuation kept so "85.7" vs "85.07" counts the decimal point); a pair that
is an exact match under full normalization short-circuits to 1.0, which keeps
em=1 implying anls=1.
"""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .answering import UNANSWERABLE_TOKEN, normalize_answer
from .errors import InputError

ANLS_TAU = 0.5


def levenshtein(a: str, b: str) -> int:
    """Edit distance over unicode scalar values, two-row DP."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _norm_join(text: str) -> str:
    return " ".join(normalize_answer(text))


def _anls_string(text: str) -> str:
    s = text.strip()
    if s.lower() == UNANSWERABLE_TOKEN or _norm_join(s) == UNANSWERABLE_TOKEN:
        return UNANSWERABLE_TOKEN
    return " ".join(s.lower().split())


def exact_match(pred: str, golds: Sequence[str]) -> int:
    """1 iff the normalized prediction equals any normalized gold."""
    if not golds:
        raise InputError("exact_match requires at least one gold answer")
    p = _norm_join(pred)
    return int(any(p == _norm_join(g) for g in golds))


def token_f1(pred: str, golds: Sequence[str]) -> float:
    """Best SQuAD-style F1 over golds via multiset token overlap."""
    if not golds:
        raise InputError("token_f1 requires at least one gold answer")
    pred_tokens = normalize_answer(pred)
    best = 0.0
    for gold in golds:
        gold_tokens = normalize_answer(gold)
        if not pred_tokens and not gold_tokens:
            best = max(best, 1.0)
            continue
        if not pred_tokens or not gold_tokens:
            continue
        common = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
        if common == 0:
            continue
        precision = common / len(pred_tokens)
        recall = common / len(gold_tokens)
        best = max(best, 2 * precision * recall / (precision + recall))
    return best


def anls(pred: str, golds: Sequence[str], tau: float = ANLS_TAU) -> float:
    """Best 1 - normalized-Levenshtein over golds, zeroed at the tau threshold."""
    if not golds:
        raise InputError("anls requires at least one gold answer")
    if not (0.0 <= tau <= 1.0):
        raise InputError(f"tau must be in [0, 1], got {tau}")
    p_exact = _norm_join(pred)
    p = _anls_string(pred)
    best = 0.0
    for gold in golds:
        if p_exact == _norm_join(gold):
            return 1.0
        g = _anls_string(gold)
        nl = levenshtein(p, g) / max(len(p), len(g), 1)
        if nl < tau:
            best = max(best, 1.0 - nl)
    return best


_MCQ_PUNCT = {ord(c): " " for c in string.punctuation}


def mcq_accuracy(pred: str, gold_option: str) -> int:
    """1 iff the first standalone A-D token in the prediction matches the label.

    Uses a label-preserving cleanup (lowercase, punctuation split) rather than
    the full answer normalization, which would delete a bare "A" as an article.
    """
    gold = gold_option.strip().lower()
    if len(gold) != 1 or gold not in "abcd":
        raise InputError(f"gold option must be a single A-D label, got {gold_option!r}")
    for token in pred.lower().translate(_MCQ_PUNCT).split():
        if token in ("a", "b", "c", "d"):
            return int(token == gold)
    return 0


@dataclass(frozen=True)
class QuestionScore:
    qid: str
    em: int
    f1: float
    anls: float
    acc: int | None = None

    def __post_init__(self):
        if self.em not in (0, 1):
            raise InputError(f"em must be 0/1, got {self.em}")
        if not (0.0 <= self.f1 <= 1.0 and 0.0 <= self.anls <= 1.0):
            raise InputError("f1 and anls must lie in [0, 1]")
        if self.em == 1 and (self.f1 != 1.0 or self.anls != 1.0):
            raise InputError("em=1 requires f1=1 and anls=1")
        if self.acc is not None and self.acc not in (0, 1):
            raise InputError(f"acc must be 0/1 or None, got {self.acc}")


def score_answer(qid: str, pred: str, golds: Sequence[str], gold_option: str | None = None) -> QuestionScore:
    """Score one prediction against its golds (plus MCQ label when present)."""
    return QuestionScore(
        qid=qid,
        em=exact_match(pred, golds),
        f1=token_f1(pred, golds),
        anls=anls(pred, golds),
        acc=mcq_accuracy(pred, gold_option) if gold_option is not None else None,
    )


_METRICS = ("em", "f1", "anls")


@dataclass(frozen=True)
class AggregateScores:
    """Per-domain and overall metric means; overall is question-weighted."""

    domains: tuple[str, ...]
    per_domain: dict
    overall: dict
    mean_latency_ms: dict

    def to_dict(self) -> dict:
        return {
            "domains": list(self.domains),
            "per_domain": self.per_domain,
            "overall": self.overall,
            "mean_latency_ms": self.mean_latency_ms,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AggregateScores":
        return cls(
            domains=tuple(data["domains"]),
            per_domain=data["per_domain"],
            overall=data["overall"],
            mean_latency_ms=data["mean_latency_ms"],
        )


def _mean_block(scores: Sequence[QuestionScore]) -> dict:
    block: dict = {"count": len(scores)}
    for name in _METRICS:
        block[name] = sum(getattr(s, name) for s in scores) / len(scores)
    with_acc = [s for s in scores if s.acc is not None]
    block["acc"] = sum(s.acc for s in with_acc) / len(with_acc) if with_acc else None
    block["acc_count"] = len(with_acc)
    return block


def aggregate(scores: Sequence[QuestionScore], records: Sequence, latencies: Sequence[dict] | None = None) -> AggregateScores:
    """Fold per-question scores into per-domain and overall means.

    Records supply the domain labels and must align 1:1 with scores. Optional
    per-question stage latencies average into mean_latency_ms.
    """
    if not scores:
        raise InputError("cannot aggregate an empty score list")
    if len(scores) != len(records):
        raise InputError(f"{len(scores)} scores vs {len(records)} records")
    by_domain: dict[str, list[QuestionScore]] = {}
    for score, record in zip(scores, records):
        by_domain.setdefault(record.domain, []).append(score)
    domains = tuple(sorted(by_domain))
    per_domain = {d: _mean_block(by_domain[d]) for d in domains}
    overall = _mean_block(list(scores))
    mean_latency: dict[str, float] = {}
    if latencies:
        stages = sorted({stage for entry in latencies for stage in entry})
        for stage in stages:
            mean_latency[stage] = sum(entry.get(stage, 0.0) for entry in latencies) / len(latencies)
    return AggregateScores(domains=domains, per_domain=per_domain, overall=overall, mean_latency_ms=mean_latency)
