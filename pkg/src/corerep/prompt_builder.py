"""Chat prompt rendering for every context-repetition variant.

Layout conventions: blocks are separated by a single blank line, documents
render as ``Document [i] {text}`` (or ``Document [i] (Title: {title}) {text}``)
and numbering restarts at ``[0]`` in every repeated block.  Repetition styles
only touch the repeated blocks, never the original user turn.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import random
import re
from collections.abc import Sequence
from dataclasses import dataclass

from corerep.context_model import ContextSpec, Document
from corerep.errors import ConfigError, EmptyContext
from corerep.synthetic_chains import SyntheticSample, render_information

logger = logging.getLogger(__name__)

QA_INSTRUCTION = "Answer the question based on the given documents. Respond only the answer within a few words after 'Answer:'."
QA_FOLLOWUP = "Now answer the question based on the documents. Respond only the answer within a few words after 'Answer:'."
COT_INSTRUCTION = "Answer the question based on the given documents."
COT_FOLLOWUP = "Now answer the question based on the documents."
COT_SEED = "Let's think step by step."
COT_EXTRACT = "Respond only the answer in a few words after 'Answer:'."
SYNTHETIC_INSTRUCTION = (
    "Answer the question based on the given information. "
    "Respond only the answer without any explanation after 'Answer:'."
)
SYNTHETIC_FOLLOWUP = (
    "Now answer the question based on the documents. "
    "Respond only the answer without any explanation after 'Answer:'."
)
REPEAT_PREAMBLE = "Sure. Before answering the question, I'll reconsider the question and the documents {times}."
USER_ROLE_SEPARATOR = "Look again the input prompt:"
DECOMPOSE_INSTRUCTION = "Decompose the following question into several sub-questions."
ANSWER_SEED = "Answer:"
DECOMPOSE_SEED = "1. "

# Rewriting prompts from the content ablation; the LLM-backed transform loop is not built.
PARAPHRASE_SYSTEM = (
    "You are a professional paraphraser. Your task is to paraphrase the given text based on the below "
    "instructions. Follow the instructions to achieve the desired output.\n\n"
    "- Objective: Rewrite the text more thoroughly, changing both vocabulary and sentence structure while "
    "preserving the original meaning.\n"
    "- Instructions: (MOST IMPORTANT) Use your own style for natural paraphrase\n"
    "Introduce new expressions, alter sentence structure, and rearrange clauses.\n"
    "Use synonyms and change the form of words (e.g., verbs to nouns, or active to passive voice).\n"
    "Retain the original message but express it in a noticeably different way.\n\n"
    "- Example:\n"
    'Original: "The quick brown fox jumps over the lazy dog."\n'
    'Paraphrase: "With swift movements, the brown fox leaps over the dog lying lazily."\n\n'
    "# Format of the paraphrasing task\n"
    "- Original: The original text.\n"
    "- Paraphrase: The paraphrased version of the text based on the above guideline. "
    "Provide the output text immediately."
)
PARAPHRASE_USER = "Paraphrase the original text below.\nOriginal: {text}"
PARAPHRASE_SEED = "Paraphrase:"
SUMMARY_SYSTEM = (
    "Summarize the following text while ensuring that no key information, factual accuracy, or essential "
    "meaning is lost. Follow these guidelines:\n\n"
    "- Maintain Key Details: All critical points, facts, and arguments from the original text must be preserved.\n"
    "- Conciseness: The summary should be significantly shorter than the original text while capturing its "
    "essence.\n"
    "- Clarity and Precision: Use clear, professional language. Avoid vague phrasing.\n"
    "- No Alteration of Meaning: Do not add, alter, or infer information that is not present in the original "
    "text.\n\n"
    "Please follow below pattern of example. Provide the output text immediately.\n\n"
    "- Example:\n"
    "Original Text: The rapid development of artificial intelligence over the last decade has led to significant "
    "breakthroughs in various fields, including healthcare, finance, and transportation. However, these "
    "advancements also raise concerns about data privacy, job displacement, and the ethical use of AI "
    "technologies.\n"
    "Summary: AI advancements in healthcare, finance, and transportation have been substantial, though concerns "
    "about data privacy, job displacement, and ethical issues have emerged."
)
SUMMARY_USER = "Summarize the following text below.\nOriginal Text: {text}"
SUMMARY_SEED = "Summary:"

QA_MAX_K_HAT = 3
_warned_k_hats: set[int] = set()


class MessageRole(str, enum.Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class ChatMessage:
    role: MessageRole
    content: str

    def __post_init__(self) -> None:
        if not isinstance(self.role, MessageRole):
            object.__setattr__(self, "role", MessageRole(self.role))
        if not self.content:
            raise ValueError("chat message content must be non-empty")

    def to_dict(self) -> dict[str, str]:
        return {"role": self.role.value, "content": self.content}


class Template(str, enum.Enum):
    QA_BASE = "qa_base"
    QA_COT = "qa_cot"
    QA_COT_EXTRACT = "qa_cot_extract"
    SYNTHETIC_BASE = "synthetic_base"
    QA_USER_ROLE = "qa_user_role"
    DECOMPOSE = "decompose"


@dataclass(frozen=True)
class RepetitionStyle:
    kind: str = "verbatim"
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("verbatim", "shuffle", "reverse"):
            raise ConfigError(f"unknown repetition style {self.kind!r}")
        if self.kind == "shuffle" and self.seed is None:
            raise ConfigError("shuffle style needs an explicit seed")
        if self.kind != "shuffle" and self.seed is not None:
            raise ConfigError(f"{self.kind} style takes no seed")

    def __str__(self) -> str:
        return f"shuffle:{self.seed}" if self.kind == "shuffle" else self.kind

    @classmethod
    def parse(cls, text: str) -> RepetitionStyle:
        """Parse ``verbatim``, ``reverse`` or ``shuffle:<seed>``."""
        kind, _, seed = text.strip().lower().partition(":")
        if kind == "shuffle":
            if not seed:
                raise ConfigError("shuffle style needs a seed, e.g. shuffle:41")
            return cls("shuffle", int(seed))
        if seed:
            raise ConfigError(f"{kind} style takes no seed")
        return cls(kind)


VERBATIM = RepetitionStyle()
REVERSE = RepetitionStyle("reverse")


def shuffle_style(seed: int) -> RepetitionStyle:
    return RepetitionStyle("shuffle", seed)


@dataclass(frozen=True)
class PromptPlan:
    template: Template
    k_hat: int = 1
    repetition_style: RepetitionStyle = VERBATIM

    def __post_init__(self) -> None:
        object.__setattr__(self, "template", Template(self.template))
        if isinstance(self.k_hat, bool) or not isinstance(self.k_hat, int) or self.k_hat < 1:
            raise ConfigError(f"k_hat must be a positive integer, got {self.k_hat!r}")


def apply_repetition_style(documents: Sequence[Document], style: RepetitionStyle) -> list[Document]:
    docs = list(documents)
    if style.kind == "reverse":
        return docs[::-1]
    if style.kind == "shuffle" and len(docs) >= 2:
        # Redraw until the order changes; all-equal inputs have no non-identity order.
        rng = random.Random(style.seed)
        idx = list(range(len(docs)))
        if len(set(docs)) > 1:
            while [docs[i] for i in idx] == docs:
                rng.shuffle(idx)
        return [docs[i] for i in idx]
    return docs


def _document_line(i: int, doc: Document) -> str:
    if doc.title:
        return f"Document [{i}] (Title: {doc.title}) {doc.text}"
    return f"Document [{i}] {doc.text}"


def qa_block(question: str, documents: Sequence[Document]) -> str:
    lines = [f"Question: {question}", "", "Documents:"]
    lines.extend(_document_line(i, d) for i, d in enumerate(documents))
    return "\n".join(lines)


def _times_more(t: int) -> str:
    return "once more" if t == 1 else f"{t} times more"


def _qa_repeat_turn(question: str, context: ContextSpec, k_hat: int, style: RepetitionStyle) -> str:
    t = k_hat - 1
    repeated = qa_block(question, apply_repetition_style(context.documents, style))
    return "\n\n".join([REPEAT_PREAMBLE.format(times=_times_more(t)), *([repeated] * t)])


def _check_qa(question: str, context: ContextSpec, k_hat: int) -> None:
    if not context.documents:
        raise EmptyContext("context has no documents")
    if not question.strip():
        raise ValueError("question must be non-empty")
    if k_hat > QA_MAX_K_HAT and k_hat not in _warned_k_hats:
        _warned_k_hats.add(k_hat)
        logger.warning("k_hat=%d exceeds the evaluated QA range 1..%d", k_hat, QA_MAX_K_HAT)


def render_qa_prompt(question: str, context: ContextSpec, plan: PromptPlan) -> list[ChatMessage]:
    if plan.template is not Template.QA_BASE:
        raise ConfigError(f"render_qa_prompt needs the qa_base template, got {plan.template.value}")
    _check_qa(question, context, plan.k_hat)
    user = f"{qa_block(question, context.documents)}\n\n{QA_INSTRUCTION}"
    if plan.k_hat == 1:
        return [ChatMessage(MessageRole.USER, user)]
    return [
        ChatMessage(MessageRole.USER, user),
        ChatMessage(MessageRole.ASSISTANT, _qa_repeat_turn(question, context, plan.k_hat, plan.repetition_style)),
        ChatMessage(MessageRole.USER, QA_FOLLOWUP),
        ChatMessage(MessageRole.ASSISTANT, ANSWER_SEED),
    ]


def render_cot_prompts(
    question: str,
    context: ContextSpec,
    k_hat: int,
    cot_response: str | None = None,
    style: RepetitionStyle = VERBATIM,
) -> list[ChatMessage]:
    """Two-phase chain-of-thought prompt.

    Without ``cot_response`` this is the reasoning prompt ending in the
    assistant seed ``Let's think step by step.``; with it, the seed is
    completed by the response and followed by the answer-extraction turn.
    """
    _check_qa(question, context, k_hat)
    messages = [ChatMessage(MessageRole.USER, f"{qa_block(question, context.documents)}\n\n{COT_INSTRUCTION}")]
    if k_hat > 1:
        messages.append(ChatMessage(MessageRole.ASSISTANT, _qa_repeat_turn(question, context, k_hat, style)))
        messages.append(ChatMessage(MessageRole.USER, COT_FOLLOWUP))
    if cot_response is None:
        messages.append(ChatMessage(MessageRole.ASSISTANT, COT_SEED))
        return messages
    messages.append(ChatMessage(MessageRole.ASSISTANT, f"{COT_SEED} {cot_response.strip()}".rstrip()))
    messages.append(ChatMessage(MessageRole.USER, COT_EXTRACT))
    messages.append(ChatMessage(MessageRole.ASSISTANT, ANSWER_SEED))
    return messages


def synthetic_block(sample: SyntheticSample, alt_wording: bool = False) -> str:
    return f"Information:\n{render_information(sample, alt_wording)}\n\n{sample.question_line}"


def render_synthetic_prompt(
    sample: SyntheticSample, k_hat: int, alt_wording: bool = False
) -> list[ChatMessage]:
    if isinstance(k_hat, bool) or not isinstance(k_hat, int) or k_hat < 1:
        raise ConfigError(f"k_hat must be a positive integer, got {k_hat!r}")
    block = synthetic_block(sample, alt_wording)
    user = ChatMessage(MessageRole.USER, f"{block}\n\n{SYNTHETIC_INSTRUCTION}")
    if k_hat == 1:
        return [user]
    t = k_hat - 1
    repeat = "\n\n".join([REPEAT_PREAMBLE.format(times=f"{t} times more"), *([block] * t)])
    return [
        user,
        ChatMessage(MessageRole.ASSISTANT, repeat),
        ChatMessage(MessageRole.USER, SYNTHETIC_FOLLOWUP),
        ChatMessage(MessageRole.ASSISTANT, ANSWER_SEED),
    ]


def render_user_role_prompt(question: str, context: ContextSpec) -> list[ChatMessage]:
    _check_qa(question, context, 2)
    block = f"{qa_block(question, context.documents)}\n\n{QA_INSTRUCTION}"
    return [
        ChatMessage(MessageRole.USER, f"{block}\n\n{USER_ROLE_SEPARATOR}\n\n{block}"),
        ChatMessage(MessageRole.ASSISTANT, ANSWER_SEED),
    ]


def render_decompose_prompt(question: str) -> list[ChatMessage]:
    if not question.strip():
        raise ValueError("question must be non-empty")
    return [
        ChatMessage(MessageRole.USER, f"{DECOMPOSE_INSTRUCTION}\nQuestion: {question}"),
        ChatMessage(MessageRole.ASSISTANT, DECOMPOSE_SEED),
    ]


def render(
    plan: PromptPlan,
    *,
    question: str | None = None,
    context: ContextSpec | None = None,
    sample: SyntheticSample | None = None,
    cot_response: str | None = None,
) -> list[ChatMessage]:
    """Dispatch on ``plan.template``."""
    t = plan.template
    if t is Template.SYNTHETIC_BASE:
        if sample is None:
            raise ConfigError("synthetic_base needs a synthetic sample")
        return render_synthetic_prompt(sample, plan.k_hat)
    if t is Template.DECOMPOSE:
        return render_decompose_prompt(question or "")
    if question is None or context is None:
        raise ConfigError(f"{t.value} needs a question and a context")
    if t is Template.QA_BASE:
        return render_qa_prompt(question, context, plan)
    if t is Template.QA_USER_ROLE:
        return render_user_role_prompt(question, context)
    if t is Template.QA_COT_EXTRACT and cot_response is None:
        raise ConfigError("qa_cot_extract needs a chain-of-thought response")
    return render_cot_prompts(question, context, plan.k_hat, cot_response, plan.repetition_style)


_SECTION = re.compile(r"^### (SYSTEM|USER|ASSISTANT) ###$", re.MULTILINE)


def format_messages(messages: Sequence[ChatMessage]) -> str:
    """Serialize messages as ``### ROLE ###`` sections (golden-file format)."""
    return "".join(f"### {m.role.value.upper()} ###\n{m.content}\n" for m in messages)


def parse_messages(text: str) -> list[ChatMessage]:
    headers = list(_SECTION.finditer(text))
    messages = []
    for i, h in enumerate(headers):
        end = headers[i + 1].start() if i + 1 < len(headers) else len(text)
        body = text[h.end() + 1 : end]
        if body.endswith("\n"):
            body = body[:-1]
        messages.append(ChatMessage(MessageRole(h.group(1).lower()), body))
    return messages


def prompt_hash(messages: Sequence[ChatMessage]) -> str:
    payload = json.dumps([m.to_dict() for m in messages], ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
