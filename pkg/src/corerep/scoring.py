"""Answer extraction, SQuAD-style normalization, token F1 and integer exact match."""

from __future__ import annotations

import enum
import re
import string
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass

_MARKER = "answer:"
_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)
_DIGITS = re.compile(r"\d+")


class Scorer(str, enum.Enum):
    LOGPROB = "logprob"
    F1 = "f1"


@dataclass(frozen=True)
class ScoredAnswer:
    raw_output: str
    extracted: str
    normalized: str
    f1: float
    exact_match: bool
    matched_gold: str | None = None


def extract_answer(raw_output: str) -> str:
    """Text after the last ``Answer:`` marker (case-insensitive), or the whole output."""
    idx = raw_output.lower().rfind(_MARKER)
    text = raw_output[idx + len(_MARKER) :] if idx >= 0 else raw_output
    text = text.strip()
    while text.endswith("."):
        text = text[:-1].rstrip()
    return text


def normalize_answer(text: str) -> str:
    text = text.lower()
    text = "".join(ch for ch in text if ch not in _PUNCT)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def token_f1(prediction: str, gold: str) -> float:
    pred_tokens = normalize_answer(prediction).split()
    gold_tokens = normalize_answer(gold).split()
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    common = Counter(pred_tokens) & Counter(gold_tokens)
    overlap = sum(common.values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def best_f1(prediction: str, golds: Sequence[str]) -> tuple[float, str | None]:
    """Max F1 over gold aliases, with the alias that achieved it."""
    best, matched = 0.0, None
    for gold in golds:
        score = token_f1(prediction, gold)
        if matched is None or score > best:
            best, matched = score, gold
    return best, matched


def exact_match_int(prediction: str, gold: int) -> bool:
    m = _DIGITS.search(extract_answer(prediction))
    return m is not None and int(m.group()) == gold


def score_qa(raw_output: str, golds: Sequence[str]) -> ScoredAnswer:
    extracted = extract_answer(raw_output)
    normalized = normalize_answer(extracted)
    f1, matched = best_f1(extracted, golds)
    em = any(normalized == normalize_answer(g) for g in golds)
    return ScoredAnswer(raw_output, extracted, normalized, f1, em, matched)


def score_int(raw_output: str, gold: int) -> ScoredAnswer:
    extracted = extract_answer(raw_output)
    em = exact_match_int(raw_output, gold)
    f1 = token_f1(extracted, str(gold))
    if em:
        f1 = 1.0
    return ScoredAnswer(raw_output, extracted, normalize_answer(extracted), f1, em, str(gold))
