"""Documents, contexts, supporting-document orders and the repetition augmentation.

A context is an ordered sequence of documents, some of which are *supporting*
(on the gold reasoning chain, identified by a 1-based ``hop_index``) and the
rest *noisy*.  An order ``sigma`` is a permutation of ``1..k``; a context
belongs to the order-set of ``sigma`` when its supporting documents can be
read left to right in that order, with any unselected copies treated as noise.

Repeating a context ``k`` times places it in the order-set of every ``sigma``:
pick ``d_sigma(i)`` from the ``i``-th copy.  :func:`extract_order_witness`
constructs exactly that selection and :func:`verify_order_coverage` checks the
claim exhaustively.
"""

from __future__ import annotations

import enum
import itertools
import random
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

from corerep.errors import (
    CardinalityGuard,
    CapabilityError,
    InvalidPermutation,
    InvalidRepetition,
    RoleError,
    ValidationError,
    WitnessUnavailable,
)

if TYPE_CHECKING:
    from corerep.model_client import ModelHandle
    from corerep.scoring import Scorer

MAX_ENUMERABLE_K = 8


class Role(str, enum.Enum):
    SUPPORTING = "supporting"
    NOISY = "noisy"


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    role: Role = Role.NOISY
    hop_index: int | None = None
    title: str | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.role, Role):
            object.__setattr__(self, "role", Role(self.role))
        if not self.text or not self.text.strip():
            raise ValidationError(f"document {self.id!r} has empty text")
        if self.role is Role.SUPPORTING:
            if self.hop_index is None:
                raise ValidationError(f"supporting document {self.id!r} needs a hop_index")
            if isinstance(self.hop_index, bool) or not isinstance(self.hop_index, int) or self.hop_index < 1:
                raise ValidationError(f"document {self.id!r}: hop_index must be a positive integer")
        elif self.hop_index is not None:
            raise ValidationError(f"noisy document {self.id!r} must not carry a hop_index")

    @property
    def is_supporting(self) -> bool:
        return self.role is Role.SUPPORTING

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "title": self.title,
            "text": self.text,
            "role": self.role.value,
            "hop_index": self.hop_index,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Document:
        return cls(
            id=str(data["id"]),
            title=data.get("title"),
            text=data["text"],
            role=Role(data.get("role", "noisy")),
            hop_index=data.get("hop_index"),
        )


@dataclass(frozen=True)
class ContextSpec:
    """Ordered document sequence ``(n_0, d_1, n_1, ..., d_k, n_k)``.

    Repeated copies of the same supporting document (same ``id``) are allowed,
    so ``k`` counts *distinct* supporting documents; their hop indices must be
    exactly ``1..k``.
    """

    documents: tuple[Document, ...]

    def __post_init__(self) -> None:
        docs = tuple(self.documents)
        object.__setattr__(self, "documents", docs)
        by_id: dict[str, Document] = {}
        for doc in docs:
            if not doc.is_supporting:
                continue
            seen = by_id.setdefault(doc.id, doc)
            if seen != doc:
                raise ValidationError(f"conflicting supporting documents share id {doc.id!r}")
        hops = sorted(d.hop_index for d in by_id.values())
        if hops != list(range(1, len(hops) + 1)):
            raise ValidationError(f"supporting hop indices must be exactly 1..{len(hops)}, got {hops}")

    def __len__(self) -> int:
        return len(self.documents)

    @property
    def k(self) -> int:
        return len({d.id for d in self.documents if d.is_supporting})

    def supporting_by_hop(self) -> tuple[Document, ...]:
        """Distinct supporting documents sorted by hop index (``d_1..d_k``)."""
        distinct = {d.id: d for d in self.documents if d.is_supporting}
        return tuple(sorted(distinct.values(), key=lambda d: d.hop_index))

    def to_dict(self) -> dict[str, Any]:
        return {"documents": [d.to_dict() for d in self.documents]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ContextSpec:
        return cls(tuple(Document.from_dict(d) for d in data["documents"]))


@dataclass(frozen=True, order=True)
class OrderPermutation:
    mapping: tuple[int, ...]

    def __post_init__(self) -> None:
        mapping = tuple(self.mapping)
        object.__setattr__(self, "mapping", mapping)
        if sorted(mapping) != list(range(1, len(mapping) + 1)):
            raise InvalidPermutation(f"{mapping} is not a permutation of 1..{len(mapping)}")

    @classmethod
    def identity(cls, k: int) -> OrderPermutation:
        return cls(tuple(range(1, k + 1)))

    @property
    def k(self) -> int:
        return len(self.mapping)

    def inverse(self) -> OrderPermutation:
        inv = [0] * self.k
        for i, target in enumerate(self.mapping, start=1):
            inv[target - 1] = i
        return OrderPermutation(tuple(inv))

    def __str__(self) -> str:
        return "(" + ",".join(map(str, self.mapping)) + ")"

    @classmethod
    def parse(cls, text: str) -> OrderPermutation:
        parts = text.strip().strip("()").replace(" ", "").split(",")
        try:
            return cls(tuple(int(p) for p in parts if p))
        except ValueError as exc:
            raise InvalidPermutation(f"cannot parse permutation {text!r}") from exc


@dataclass(frozen=True)
class OrderWitness:
    """Increasing selection of positions proving order-set membership.

    ``positions`` are 0-based indices into the augmented document sequence;
    ``repetition_of`` holds the 1-based repetition block each one came from.
    """

    positions: tuple[int, ...]
    repetition_of: tuple[int, ...]

    def is_valid_for(self, augmented: ContextSpec, sigma: OrderPermutation) -> bool:
        docs = augmented.documents
        if len(self.positions) != sigma.k or len(self.repetition_of) != sigma.k:
            return False
        if any(b <= a for a, b in zip(self.positions, self.positions[1:])):
            return False
        if any(p < 0 or p >= len(docs) for p in self.positions):
            return False
        picked = [docs[p] for p in self.positions]
        wanted = [augmented.supporting_by_hop()[i - 1].id for i in sigma.mapping]
        return all(d.is_supporting for d in picked) and [d.id for d in picked] == wanted


def apply_order(supporting: Sequence[Document], sigma: OrderPermutation) -> list[Document]:
    """Return ``(d_sigma(1), ..., d_sigma(k))`` where ``d_i = supporting[i-1]``."""
    if len(supporting) != sigma.k:
        raise InvalidPermutation(f"permutation over {sigma.k} items applied to {len(supporting)} documents")
    for doc in supporting:
        if not doc.is_supporting:
            raise RoleError(f"document {doc.id!r} is not a supporting document")
    return [supporting[i - 1] for i in sigma.mapping]


def enumerate_orders(k: int) -> list[OrderPermutation]:
    if not 1 <= k <= MAX_ENUMERABLE_K:
        raise CardinalityGuard(f"k={k} outside the enumerable range 1..{MAX_ENUMERABLE_K}")
    return [OrderPermutation(p) for p in itertools.permutations(range(1, k + 1))]


def build_context(
    supporting: Sequence[Document],
    noisy: Sequence[Document],
    sigma: OrderPermutation,
    interleave_seed: int,
) -> ContextSpec:
    """Lay out supporting documents in ``sigma`` order with noise in the gaps.

    Each noisy document independently lands in one of the ``k + 1`` gap slots,
    drawn from a PRNG seeded with ``interleave_seed``.  The draws do not depend
    on ``sigma``, so the same seed gives the same noise geometry for every order.
    """
    if not supporting:
        raise InvalidPermutation("at least one supporting document is required")
    ordered = apply_order(supporting, sigma)
    for doc in noisy:
        if doc.is_supporting:
            raise RoleError(f"document {doc.id!r} passed as noise is supporting")
    rng = random.Random(interleave_seed)
    slots: list[list[Document]] = [[] for _ in range(len(ordered) + 1)]
    for doc in noisy:
        slots[rng.randrange(len(slots))].append(doc)
    documents: list[Document] = list(slots[0])
    for doc, gap in zip(ordered, slots[1:]):
        documents.append(doc)
        documents.extend(gap)
    return ContextSpec(tuple(documents))


def _first_selection(documents: Sequence[Document], wanted_ids: Sequence[str]) -> list[int] | None:
    # Greedy earliest match is optimal for subsequence containment.
    positions: list[int] = []
    j = 0
    for pos, doc in enumerate(documents):
        if j == len(wanted_ids):
            break
        if doc.is_supporting and doc.id == wanted_ids[j]:
            positions.append(pos)
            j += 1
    return positions if j == len(wanted_ids) else None


def is_in_order_set(context: ContextSpec, sigma: OrderPermutation) -> bool:
    canonical = context.supporting_by_hop()
    if sigma.k != len(canonical):
        raise InvalidPermutation(f"permutation over {sigma.k} items, context has k={len(canonical)}")
    wanted = [canonical[i - 1].id for i in sigma.mapping]
    return _first_selection(context.documents, wanted) is not None


def repeat_context(context: ContextSpec, k_hat: int) -> ContextSpec:
    if isinstance(k_hat, bool) or not isinstance(k_hat, int) or k_hat < 1:
        raise InvalidRepetition(f"repetition count must be a positive integer, got {k_hat!r}")
    return ContextSpec(context.documents * k_hat)


def verify_order_coverage(context: ContextSpec, k_hat: int) -> bool:
    orders = enumerate_orders(context.k)
    augmented = repeat_context(context, k_hat)
    return all(is_in_order_set(augmented, sigma) for sigma in orders)


def extract_order_witness(context: ContextSpec, k_hat: int, sigma: OrderPermutation) -> OrderWitness:
    k = context.k
    if sigma.k != k:
        raise InvalidPermutation(f"permutation over {sigma.k} items, context has k={k}")
    if k_hat < k:
        raise WitnessUnavailable(f"the block-per-hop construction needs k_hat >= k ({k_hat} < {k})")
    block = len(context.documents)
    first_pos: dict[str, int] = {}
    for pos, doc in enumerate(context.documents):
        if doc.is_supporting:
            first_pos.setdefault(doc.id, pos)
    canonical = context.supporting_by_hop()
    positions = tuple(i * block + first_pos[canonical[s - 1].id] for i, s in enumerate(sigma.mapping))
    return OrderWitness(positions=positions, repetition_of=tuple(range(1, k + 1)))


def reorder_supporting(context: ContextSpec, sigma: OrderPermutation) -> ContextSpec:
    """Refill the supporting slots of ``context`` in ``sigma`` order, keeping noise in place."""
    slots = [pos for pos, d in enumerate(context.documents) if d.is_supporting]
    if len(slots) != context.k:
        raise InvalidPermutation("cannot reorder a context that already contains repeated supporting documents")
    ordered = apply_order(context.supporting_by_hop(), sigma)
    docs = list(context.documents)
    for pos, doc in zip(slots, ordered):
        docs[pos] = doc
    return ContextSpec(tuple(docs))


@dataclass(frozen=True)
class OrderEstimate:
    sigma: OrderPermutation
    mean_scores: dict[OrderPermutation, float] = field(compare=False)


def estimate_optimal_order(
    samples: Sequence[tuple[str, ContextSpec, str | Sequence[str]]],
    model: ModelHandle,
    scorer: Scorer,
) -> OrderPermutation:
    """Sample-mean estimate of the model's preferred supporting-document order.

    Every sample's context is rebuilt under each ``sigma`` (noise positions
    fixed) and scored; the order with the highest mean wins, ties going to the
    lexicographically smallest mapping.
    """
    return score_orders(samples, model, scorer).sigma


def score_orders(
    samples: Sequence[tuple[str, ContextSpec, str | Sequence[str]]],
    model: ModelHandle,
    scorer: Scorer,
) -> OrderEstimate:
    from corerep import model_client, prompt_builder
    from corerep.scoring import Scorer, best_f1, extract_answer

    if not samples:
        raise ValueError("at least one sample is required")
    ks = {ctx.k for _, ctx, _ in samples}
    if len(ks) != 1:
        raise ValueError(f"samples must share the same k, got {sorted(ks)}")
    if scorer is Scorer.LOGPROB and model_client.Capability.SCORE_TARGET not in model.capabilities:
        raise CapabilityError(f"model {model.name!r} cannot score targets")

    plan = prompt_builder.PromptPlan(prompt_builder.Template.QA_BASE, k_hat=1)
    means: dict[OrderPermutation, float] = {}
    for sigma in enumerate_orders(ks.pop()):
        total = 0.0
        for question, ctx, answer in samples:
            golds = [answer] if isinstance(answer, str) else list(answer)
            messages = prompt_builder.render_qa_prompt(question, reorder_supporting(ctx, sigma), plan)
            if scorer is Scorer.LOGPROB:
                forced = [*messages, prompt_builder.ChatMessage(prompt_builder.MessageRole.ASSISTANT, "Answer:")]
                total += max(model_client.score_target(model, forced, g) for g in golds)
            else:
                result = model_client.generate(model, messages, max_tokens=32, temperature=0.0)
                total += best_f1(extract_answer(result.text), golds)[0]
        means[sigma] = total / len(samples)

    best = None
    for sigma, score in means.items():
        if best is None or score > means[best]:
            best = sigma
    return OrderEstimate(sigma=best, mean_scores=means)
