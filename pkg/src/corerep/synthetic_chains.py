"""Synthetic chained-list task.

Each sample holds ``L`` lists of ``n`` globally distinct integers in
``[0, 9999]``.  The context states every adjacent pair as a fact
("In the list i, a is positioned immediately before b.") and asks for the
first element of the list containing the last element of list 0.  Facts are
emitted round-robin by position pair, so answering requires walking each chain
right to left against the reading direction.
"""

from __future__ import annotations

import json
import random
import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from corerep.errors import CapacityError, ValidationError

VALUE_RANGE = 10_000

HEADER_MAIN = "All the {L} lists described below contain exactly {n} elements."
HEADER_ALT = "All the {L} lists described in the below contain exactly {n} elements."
FACT_TEMPLATE = "In the list {i}, {a} is positioned immediately before {b}."
QUESTION_TEMPLATE = "Question: What is the first element of the list that contains {q}?"

FACT_RE = re.compile(r"In the list (\d+), (\d+) is positioned immediately before (\d+)\.")
QUESTION_RE = re.compile(r"What is the first element of the list that contains (\d+)\?")

DATASET_KIND = "synthetic_chains"


@dataclass(frozen=True)
class ChainList:
    list_id: int
    elements: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "elements", tuple(self.elements))
        if len(self.elements) < 2:
            raise ValidationError(f"list {self.list_id} needs at least 2 elements")
        if len(set(self.elements)) != len(self.elements):
            raise ValidationError(f"list {self.list_id} repeats an element")
        if any(not 0 <= e < VALUE_RANGE for e in self.elements):
            raise ValidationError(f"list {self.list_id} has an element outside [0, {VALUE_RANGE - 1}]")


@dataclass(frozen=True)
class SyntheticSample:
    sample_id: str
    lists: tuple[ChainList, ...]
    target_list: int
    query_element: int
    oracle_answer: int
    fact_lines: tuple[str, ...]
    question_line: str
    grouped: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "lists", tuple(self.lists))
        object.__setattr__(self, "fact_lines", tuple(self.fact_lines))
        lengths = {len(c.elements) for c in self.lists}
        if len(lengths) != 1:
            raise ValidationError("all lists must have the same length", self.sample_id)
        every = [e for c in self.lists for e in c.elements]
        if len(set(every)) != len(every):
            raise ValidationError("integers are not globally unique", self.sample_id)
        target = self.lists[self.target_list].elements
        if self.query_element != target[-1] or self.oracle_answer != target[0]:
            raise ValidationError("query/answer do not match the target list", self.sample_id)
        if len(self.fact_lines) != len(self.lists) * (len(target) - 1):
            raise ValidationError("wrong number of fact lines", self.sample_id)

    @property
    def num_lists(self) -> int:
        return len(self.lists)

    @property
    def elements_per_list(self) -> int:
        return len(self.lists[0].elements)

    def header_line(self, alt_wording: bool = False) -> str:
        template = HEADER_ALT if alt_wording else HEADER_MAIN
        return template.format(L=self.num_lists, n=self.elements_per_list)

    def information_lines(self, alt_wording: bool = False) -> list[str]:
        return [self.header_line(alt_wording), *self.fact_lines]

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "lists": [{"list_id": c.list_id, "elements": list(c.elements)} for c in self.lists],
            "target_list": self.target_list,
            "query_element": self.query_element,
            "oracle_answer": self.oracle_answer,
            "fact_lines": list(self.fact_lines),
            "question_line": self.question_line,
            "grouped": self.grouped,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SyntheticSample:
        return cls(
            sample_id=data["sample_id"],
            lists=tuple(ChainList(c["list_id"], tuple(c["elements"])) for c in data["lists"]),
            target_list=data["target_list"],
            query_element=data["query_element"],
            oracle_answer=data["oracle_answer"],
            fact_lines=tuple(data["fact_lines"]),
            question_line=data["question_line"],
            grouped=data.get("grouped", False),
        )


def _fact_lines(lists: Sequence[ChainList], grouped: bool) -> list[str]:
    n = len(lists[0].elements)
    if grouped:
        pairs = ((c, j) for c in lists for j in range(n - 1))
    else:
        pairs = ((c, j) for j in range(n - 1) for c in lists)
    return [FACT_TEMPLATE.format(i=c.list_id, a=c.elements[j], b=c.elements[j + 1]) for c, j in pairs]


def make_sample(
    sample_id: str,
    lists: Sequence[Sequence[int]],
    target_list: int = 0,
    grouped: bool = False,
) -> SyntheticSample:
    """Build a sample from explicit list contents."""
    chains = tuple(ChainList(i, tuple(elements)) for i, elements in enumerate(lists))
    target = chains[target_list].elements
    return SyntheticSample(
        sample_id=sample_id,
        lists=chains,
        target_list=target_list,
        query_element=target[-1],
        oracle_answer=target[0],
        fact_lines=tuple(_fact_lines(chains, grouped)),
        question_line=QUESTION_TEMPLATE.format(q=target[-1]),
        grouped=grouped,
    )


def generate_dataset(
    num_samples: int,
    num_lists: int,
    elements_per_list: int,
    seed: int,
    grouped: bool = False,
) -> list[SyntheticSample]:
    if num_lists < 1 or elements_per_list < 2:
        raise ValueError("need at least one list of at least two elements")
    if num_lists * elements_per_list > VALUE_RANGE:
        raise CapacityError(
            f"{num_lists} lists x {elements_per_list} elements cannot be unique within {VALUE_RANGE} values"
        )
    rng = random.Random(seed)
    samples = []
    for idx in range(num_samples):
        values = rng.sample(range(VALUE_RANGE), num_lists * elements_per_list)
        lists = [values[i * elements_per_list : (i + 1) * elements_per_list] for i in range(num_lists)]
        samples.append(make_sample(f"syn-{seed}-{idx:05d}", lists, grouped=grouped))
    return samples


def render_fact_lines(sample: SyntheticSample) -> list[str]:
    return _fact_lines(sample.lists, sample.grouped)


def render_information(sample: SyntheticSample, alt_wording: bool = False) -> str:
    """Header plus fact lines, newline-joined."""
    return "\n".join(sample.information_lines(alt_wording))


def oracle_answer(sample: SyntheticSample) -> int:
    return sample.lists[sample.target_list].elements[0]


def mock_passes_required(sample: SyntheticSample) -> int:
    # Round-robin and grouped renderings both list a chain's facts by increasing
    # position, so a single-register reader resolves one backward hop per pass.
    return sample.elements_per_list - 1


def parse_fact_lines(lines: Iterable[str]) -> list[ChainList]:
    """Reconstruct the lists from rendered fact lines."""
    successor: dict[int, dict[int, int]] = {}
    for line in lines:
        m = FACT_RE.fullmatch(line)
        if m is None:
            raise ValueError(f"not a fact line: {line!r}")
        i, a, b = map(int, m.groups())
        successor.setdefault(i, {})[a] = b
    chains = []
    for i in sorted(successor):
        nxt = successor[i]
        heads = set(nxt) - set(nxt.values())
        (head,) = heads
        elements = [head]
        while elements[-1] in nxt:
            elements.append(nxt[elements[-1]])
        chains.append(ChainList(i, tuple(elements)))
    return chains


def write_dataset(path: str | Path, samples: Sequence[SyntheticSample], params: dict[str, Any]) -> None:
    """Write a JSON Lines dataset; the first line records generation parameters."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"kind": DATASET_KIND, **params}) + "\n")
        for sample in samples:
            fh.write(json.dumps(sample.to_dict()) + "\n")


def read_dataset(path: str | Path) -> tuple[dict[str, Any], list[SyntheticSample]]:
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        return {}, []
    header = json.loads(lines[0])
    if header.get("kind") != DATASET_KIND:
        raise ValueError(f"{path} is not a synthetic chains dataset")
    return header, [SyntheticSample.from_dict(json.loads(line)) for line in lines[1:]]
