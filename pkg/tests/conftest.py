from __future__ import annotations

import itertools
import random
from pathlib import Path

import pytest

from corerep.context_model import ContextSpec, Document, Role
from corerep.model_client import mock_handle
from corerep.synthetic_chains import make_sample

GOLDEN = Path(__file__).parent / "golden"


def supporting_docs(k: int, prefix: str = "d") -> list[Document]:
    return [Document(f"{prefix}{i}", f"supporting fact {i}", Role.SUPPORTING, i) for i in range(1, k + 1)]


def noisy_docs(m: int, prefix: str = "n") -> list[Document]:
    return [Document(f"{prefix}{j}", f"distractor {j}") for j in range(m)]


def random_context(rng: random.Random, k: int, num_noisy: int) -> ContextSpec:
    """Arbitrary layout: supporting docs in a random order, noise anywhere."""
    docs = supporting_docs(k) + noisy_docs(num_noisy)
    rng.shuffle(docs)
    return ContextSpec(tuple(docs))


def contiguous_context(rng: random.Random, k: int, num_noisy: int) -> ContextSpec:
    support = supporting_docs(k)
    rng.shuffle(support)
    noise = noisy_docs(num_noisy)
    cut = rng.randint(0, num_noisy)
    return ContextSpec(tuple(noise[:cut] + support + noise[cut:]))


def brute_force_in_order_set(context: ContextSpec, mapping: tuple[int, ...]) -> bool:
    """Enumerate every k-subset of positions and test it directly."""
    by_hop = {d.hop_index: d.id for d in context.documents if d.is_supporting}
    wanted = [by_hop[i] for i in mapping]
    docs = context.documents
    for combo in itertools.combinations(range(len(docs)), len(wanted)):
        if all(docs[p].is_supporting and docs[p].id == w for p, w in zip(combo, wanted)):
            return True
    return False


@pytest.fixture
def fixed_sample():
    return make_sample("fixed", [[381, 512, 1021], [7123, 34, 6397]])


@pytest.fixture
def mock():
    return mock_handle()


@pytest.fixture
def inception():
    d1 = Document("d1", "Inception is a 2010 film directed by Christopher Nolan.", Role.SUPPORTING, 1, "Inception")
    d2 = Document("d2", "Christopher Nolan is married to Emma Thomas.", Role.SUPPORTING, 2)
    n1 = Document("n1", "Paris is the capital of France.")
    return "Who is the spouse of the director of Inception?", ContextSpec((d2, n1, d1))
