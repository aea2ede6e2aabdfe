from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corerep.scoring import (
    best_f1,
    exact_match_int,
    extract_answer,
    normalize_answer,
    score_int,
    score_qa,
    token_f1,
)


@pytest.mark.parametrize(
    "raw,expected",
    [
        ("Answer: 381", "381"),
        ("reasoning... Answer: Paris.", "Paris"),
        ("Paris", "Paris"),
        ("answer: first ANSWER: second..", "second"),
        ("  \n", ""),
    ],
)
def test_extract_answer(raw, expected):
    assert extract_answer(raw) == expected


@pytest.mark.parametrize("text,expected", [("The Cat.", "cat"), ("", ""), ("381", "381"), ("an  apple, a day", "apple day")])
def test_normalize_answer(text, expected):
    assert normalize_answer(text) == expected


def test_token_f1_fixtures():
    assert token_f1("Paris", "Paris") == 1.0
    assert token_f1("dog", "cat") == 0.0
    # precision 1/3, recall 1 -> 2 * (1/3) / (4/3)
    assert token_f1("new york city", "york") == 0.5
    assert token_f1("", "") == 1.0
    assert token_f1("", "x") == 0.0
    assert token_f1("the", "x") == 0.0


def test_exact_match_int():
    assert exact_match_int("Answer: 381", 381)
    assert exact_match_int("The answer is 0381?", 381)
    assert not exact_match_int("no idea", 381)
    assert not exact_match_int("Answer: unknown", 381)


def test_alias_max():
    f1, matched = best_f1("Emma Thomas", ["Thomas", "Emma Thomas"])
    assert f1 == 1.0 and matched == "Emma Thomas"
    scored = score_qa("Answer: Emma Thomas.", ["Thomas", "Emma Thomas"])
    assert scored.exact_match and scored.f1 == 1.0 and scored.matched_gold == "Emma Thomas"


def test_score_int():
    s = score_int("Answer: 381", 381)
    assert s.exact_match and s.f1 == 1.0
    s = score_int("Answer: unknown", 381)
    assert not s.exact_match and s.f1 == 0.0


text = st.text(alphabet=st.characters(codec="utf-8", exclude_categories=("Cs",)), max_size=40)
wordy = st.lists(st.sampled_from(["a", "an", "the", "Paris", "york", "new", "city", "381", "x.", "Cat,", ""]),
                 max_size=6).map(" ".join)


@settings(max_examples=10_000, deadline=None)
@given(st.one_of(text, wordy), st.one_of(text, wordy))
def test_scoring_properties(a, b):
    assert normalize_answer(normalize_answer(a)) == normalize_answer(a)
    assert token_f1(a, b) == token_f1(b, a)
    assert 0.0 <= token_f1(a, b) <= 1.0
    if normalize_answer(a):
        assert token_f1(a, a) == 1.0
    s = score_qa(a, [b])
    if s.exact_match:
        assert s.f1 == 1.0
