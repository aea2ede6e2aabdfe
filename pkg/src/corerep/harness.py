"""Experiment orchestration: ingestion, condition expansion, model calls, scoring, persistence.

Every evaluation produces one :class:`RunRecord` per (sample, condition).  The
condition fully determines the prompt given the sample, so records can be
replayed (:func:`replay_prompt_hash`) and runs resumed by skipping
(sample, condition, model) keys already present in the output file.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import random
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Union

import httpx

from corerep import model_client
from corerep.context_model import (
    ContextSpec,
    Document,
    OrderPermutation,
    Role,
    apply_order,
    build_context,
    enumerate_orders,
)
from corerep.errors import (
    CardinalityGuard,
    ConfigError,
    CoreError,
    DatasetError,
    IngestError,
    ValidationError,
)
from corerep.model_client import Capability, ModelHandle
from corerep.prompt_builder import (
    ChatMessage,
    MessageRole,
    PromptPlan,
    RepetitionStyle,
    Template,
    prompt_hash,
    render,
)
from corerep.scoring import Scorer, score_int, score_qa
from corerep.synthetic_chains import SyntheticSample, generate_dataset

logger = logging.getLogger(__name__)

DEFAULT_OFFSETS = tuple(range(0, 19, 2))
VOLATILE_FIELDS = ("timestamp", "latency_ms")
MAX_TOKENS = {Template.QA_COT: 256}


@dataclass(frozen=True)
class QaSample:
    id: str
    question: str
    answers: tuple[str, ...]
    supporting: tuple[Document, ...]
    noisy: tuple[Document, ...] = ()
    sample_type: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "answers", tuple(self.answers))
        object.__setattr__(self, "supporting", tuple(self.supporting))
        object.__setattr__(self, "noisy", tuple(self.noisy))
        if not self.question.strip():
            raise ValidationError("empty question", self.id)
        if not self.answers:
            raise ValidationError("no gold answers", self.id)
        if not self.supporting:
            raise ValidationError("no supporting documents", self.id)
        if any(not d.is_supporting for d in self.supporting) or any(d.is_supporting for d in self.noisy):
            raise ValidationError("document roles do not match their lists", self.id)
        hops = sorted(d.hop_index for d in self.supporting)
        if hops != list(range(1, len(hops) + 1)):
            raise ValidationError(f"supporting hop indices must be exactly 1..{len(hops)}, got {hops}", self.id)

    @property
    def hop_count(self) -> int:
        return len(self.supporting)

    def supporting_by_hop(self) -> tuple[Document, ...]:
        return tuple(sorted(self.supporting, key=lambda d: d.hop_index))

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "id": self.id,
            "question": self.question,
            "answers": list(self.answers),
            "supporting": [
                {"id": d.id, "title": d.title, "text": d.text, "hop_index": d.hop_index} for d in self.supporting
            ],
            "noisy": [{"id": d.id, "title": d.title, "text": d.text} for d in self.noisy],
        }
        if self.sample_type is not None:
            data["type"] = self.sample_type
        return data


Sample = Union[QaSample, SyntheticSample]


def _sample_id(sample: Sample) -> str:
    return sample.id if isinstance(sample, QaSample) else sample.sample_id


def qa_from_synthetic(sample: SyntheticSample) -> QaSample:
    """Recast a chained-list sample as a multi-hop QA sample.

    The target list's facts are the supporting documents, hop 1 being the fact
    that mentions the queried element and each later hop one link further back.
    Facts of the other lists become noisy documents.
    """
    target = sample.lists[sample.target_list]
    n = len(target.elements)
    facts = {line: idx for idx, line in enumerate(sample.fact_lines)}
    supporting = []
    for hop in range(1, n):
        a, b = target.elements[n - 1 - hop], target.elements[n - hop]
        text = f"In the list {target.list_id}, {a} is positioned immediately before {b}."
        supporting.append(Document(f"{sample.sample_id}:s{hop}", text, Role.SUPPORTING, hop))
    support_text = {d.text for d in supporting}
    noisy = [
        Document(f"{sample.sample_id}:n{facts[line]}", line)
        for line in sample.fact_lines
        if line not in support_text
    ]
    question = sample.question_line.removeprefix("Question: ")
    return QaSample(sample.sample_id, question, (str(sample.oracle_answer),), tuple(supporting), tuple(noisy))


# ---------------------------------------------------------------- ingestion


def _parse_qa_line(data: Any, line_number: int) -> QaSample:
    if not isinstance(data, dict):
        raise IngestError("expected a JSON object", line_number)
    try:
        sample_id = str(data["id"])
        question = data["question"]
        answers = data["answers"]
        supporting_raw = data["supporting"]
        noisy_raw = data.get("noisy", [])
    except KeyError as exc:
        raise IngestError(f"missing field {exc.args[0]!r}", line_number) from exc
    if isinstance(answers, str):
        answers = [answers]
    supporting = []
    for j, d in enumerate(supporting_raw):
        if d.get("hop_index") is None:
            raise ValidationError(f"supporting document {j} has no hop_index", sample_id)
        supporting.append(
            Document(
                str(d.get("id") or f"{sample_id}:s{d['hop_index']}"),
                d["text"],
                Role.SUPPORTING,
                d["hop_index"],
                d.get("title"),
            )
        )
    noisy = [
        Document(str(d.get("id") or f"{sample_id}:n{j}"), d["text"], Role.NOISY, None, d.get("title"))
        for j, d in enumerate(noisy_raw)
    ]
    return QaSample(sample_id, question, tuple(answers), tuple(supporting), tuple(noisy), data.get("type"))


def ingest_qa_dataset(path: str | Path) -> list[QaSample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"invalid JSON ({exc.msg})", line_number) from exc
            try:
                samples.append(_parse_qa_line(data, line_number))
            except ValidationError as exc:
                if exc.sample_id is None:
                    raise ValidationError(str(exc), str(data.get("id"))) from exc
                raise
            except (KeyError, TypeError) as exc:
                raise IngestError(f"malformed sample ({exc})", line_number) from exc
    return samples


def write_qa_dataset(path: str | Path, samples: Iterable[QaSample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(sample.to_dict(), ensure_ascii=False) + "\n")


def load_dataset(path: str | Path) -> list[Sample]:
    """Load either a synthetic chains file (with header line) or a QA JSONL file."""
    from corerep.synthetic_chains import DATASET_KIND, read_dataset

    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    try:
        header = json.loads(first) if first.strip() else {}
    except json.JSONDecodeError as exc:
        raise IngestError(f"invalid JSON ({exc.msg})", 1) from exc
    if isinstance(header, dict) and header.get("kind") == DATASET_KIND:
        return list(read_dataset(path)[1])
    return list(ingest_qa_dataset(path))


# ---------------------------------------------------------------- conditions


def derive_seed(seed: int, *parts: Any) -> int:
    digest = hashlib.sha256(json.dumps([seed, *map(str, parts)]).encode()).hexdigest()
    return int(digest[:16], 16)


@dataclass(frozen=True)
class Condition:
    template: str
    k_hat: int = 1
    repetition_style: str = "verbatim"
    sigma: str | None = None
    offset: int | None = None
    total_slots: int | None = None
    num_noisy: int | None = None
    seed: int = 0

    @property
    def plan(self) -> PromptPlan:
        return PromptPlan(Template(self.template), self.k_hat, RepetitionStyle.parse(self.repetition_style))

    def key(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _select_noise(sample: QaSample, condition: Condition) -> list[Document]:
    if condition.num_noisy is None:
        return list(sample.noisy)
    if condition.num_noisy > len(sample.noisy):
        raise DatasetError(f"sample {sample.id!r} has {len(sample.noisy)} noisy documents, {condition.num_noisy} requested")
    rng = random.Random(derive_seed(condition.seed, sample.id, "noise"))
    picked = sorted(rng.sample(range(len(sample.noisy)), condition.num_noisy))
    return [sample.noisy[i] for i in picked]


def context_for(sample: QaSample, condition: Condition) -> ContextSpec:
    """Rebuild the evaluated context of ``sample`` under ``condition``."""
    k = sample.hop_count
    sigma = OrderPermutation.parse(condition.sigma) if condition.sigma else OrderPermutation.identity(k)
    if condition.offset is not None:
        total = condition.total_slots if condition.total_slots is not None else condition.offset + k
        noisy = list(sample.noisy[: total - k])
        if condition.offset > len(noisy):
            raise DatasetError(
                f"sample {sample.id!r} has {len(sample.noisy)} noisy documents, offset {condition.offset} needs more"
            )
        block = apply_order(sample.supporting_by_hop(), sigma)
        return ContextSpec(tuple(noisy[: condition.offset] + block + noisy[condition.offset :]))
    return build_context(
        sample.supporting_by_hop(), _select_noise(sample, condition), sigma, derive_seed(condition.seed, sample.id)
    )


def messages_for(
    sample: Sample, condition: Condition, cot_response: str | None = None, *, render_only: bool = False
) -> list[ChatMessage]:
    plan = condition.plan
    if plan.template is Template.DECOMPOSE and not render_only:
        raise ConfigError("the decompose template is render-only and cannot be evaluated")
    if isinstance(sample, SyntheticSample):
        if plan.template is not Template.SYNTHETIC_BASE:
            raise ConfigError(f"synthetic samples need the synthetic_base template, got {plan.template.value}")
        return render(plan, sample=sample)
    if plan.template is Template.SYNTHETIC_BASE:
        raise ConfigError("QA samples cannot use the synthetic_base template")
    context = context_for(sample, condition)
    if cot_response is not None:
        plan = replace(plan, template=Template.QA_COT_EXTRACT)
    return render(plan, question=sample.question, context=context, cot_response=cot_response)


def replay_prompt_hash(sample: Sample, condition: Condition | Mapping[str, Any]) -> str:
    if not isinstance(condition, Condition):
        condition = Condition(**condition)
    return prompt_hash(messages_for(sample, condition))


# ---------------------------------------------------------------- records


@dataclass
class RunRecord:
    sample_id: str
    condition: dict[str, Any]
    model_name: str
    prompt_hash: str
    raw_output: str | None = None
    extracted: str | None = None
    f1: float | None = None
    exact_match: bool | None = None
    logprob_score: float | None = None
    matched_gold: str | None = None
    cot_output: str | None = None
    hop_count: int | None = None
    sample_type: str | None = None
    error: str | None = None
    latency_ms: int = 0
    timestamp: str = ""

    def key(self) -> tuple[str, str, str]:
        return (self.sample_id, json.dumps(self.condition, sort_keys=True), self.model_name)

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunRecord:
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})


def read_records(path: str | Path) -> list[RunRecord]:
    path = Path(path)
    if not path.exists():
        return []
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(RunRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, TypeError) as exc:
                raise IngestError(f"unreadable record ({exc})", line_number) from exc
    return records


def strip_volatile(record: RunRecord | Mapping[str, Any]) -> dict[str, Any]:
    data = asdict(record) if isinstance(record, RunRecord) else dict(record)
    for name in VOLATILE_FIELDS:
        data.pop(name, None)
    return data


@dataclass(frozen=True)
class _Job:
    sample: Sample
    condition: Condition

    @property
    def sample_id(self) -> str:
        return _sample_id(self.sample)


def _scoring_messages(messages: list[ChatMessage]) -> list[ChatMessage]:
    if messages[-1].role is MessageRole.ASSISTANT:
        return messages
    return [*messages, ChatMessage(MessageRole.ASSISTANT, "Answer:")]


def _execute(job: _Job, model: ModelHandle, want_logprob: bool) -> RunRecord:
    sample, condition = job.sample, job.condition
    record = RunRecord(
        sample_id=job.sample_id,
        condition=asdict(condition),
        model_name=model.name,
        prompt_hash="",
        hop_count=sample.hop_count if isinstance(sample, QaSample) else sample.elements_per_list - 1,
        sample_type=sample.sample_type if isinstance(sample, QaSample) else "synthetic",
    )
    try:
        messages = messages_for(sample, condition)
        record.prompt_hash = prompt_hash(messages)
        max_tokens = MAX_TOKENS.get(condition.plan.template, 32)
        result = model_client.generate(model, messages, max_tokens=max_tokens, temperature=0.0)
        latency = result.latency_ms
        final_messages = messages
        if condition.plan.template is Template.QA_COT:
            record.cot_output = result.text
            final_messages = messages_for(sample, condition, cot_response=result.text)
            result = model_client.generate(model, final_messages, max_tokens=32, temperature=0.0)
            latency += result.latency_ms
        record.latency_ms = latency
        if isinstance(sample, SyntheticSample):
            scored = score_int(result.text, sample.oracle_answer)
            golds = [str(sample.oracle_answer)]
        else:
            scored = score_qa(result.text, sample.answers)
            golds = list(sample.answers)
        record.raw_output = scored.raw_output
        record.extracted = scored.extracted
        record.f1 = scored.f1
        record.exact_match = scored.exact_match
        record.matched_gold = scored.matched_gold
        if want_logprob and Capability.SCORE_TARGET in model.capabilities:
            scoring = _scoring_messages(final_messages)
            record.logprob_score = max(model_client.score_target(model, scoring, g) for g in golds)
    except (CoreError, httpx.HTTPError, ValueError) as exc:
        record.error = f"{type(exc).__name__}: {exc}"
        logger.warning("sample %s failed: %s", job.sample_id, record.error)
    record.timestamp = datetime.now(timezone.utc).isoformat()
    return record


def _run_jobs(
    jobs: Sequence[_Job],
    model: ModelHandle,
    *,
    concurrency: int = 1,
    out_path: str | Path | None = None,
    want_logprob: bool = False,
) -> list[RunRecord]:
    """Evaluate jobs, skipping keys already in ``out_path``; returns records in job order."""
    existing: dict[tuple[str, str, str], RunRecord] = {}
    if out_path is not None:
        for rec in read_records(out_path):
            existing.setdefault(rec.key(), rec)

    def job_key(job: _Job) -> tuple[str, str, str]:
        return (job.sample_id, json.dumps(asdict(job.condition), sort_keys=True), model.name)

    pending = [job for job in jobs if job_key(job) not in existing]
    fresh: dict[tuple[str, str, str], RunRecord] = {}
    if pending:
        sink = None
        if out_path is not None:
            Path(out_path).parent.mkdir(parents=True, exist_ok=True)
            sink = open(out_path, "a", encoding="utf-8")
        try:
            with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
                # map() yields in submission order: the single writer keeps file order stable.
                for job, record in zip(pending, pool.map(lambda j: _execute(j, model, want_logprob), pending)):
                    fresh[job_key(job)] = record
                    if sink is not None:
                        sink.write(record.to_json() + "\n")
                        sink.flush()
        finally:
            if sink is not None:
                sink.close()
    return [fresh.get(job_key(job)) or existing[job_key(job)] for job in jobs]


# ---------------------------------------------------------------- aggregation


def _record_score(record: RunRecord, metric: str) -> float | None:
    if record.error is not None:
        return None
    if metric == "accuracy":
        return 1.0 if record.exact_match else 0.0
    if metric == "logprob":
        return record.logprob_score
    return record.f1


def _mean(values: Iterable[float | None]) -> float | None:
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


@dataclass
class Summary:
    count: int
    errors: int
    metric: str
    mean: float | None
    by_hop: dict[int, float | None] = field(default_factory=dict)
    by_type: dict[str, float | None] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def summarize(records: Sequence[RunRecord], metric: str) -> Summary:
    by_hop: dict[int, list[float | None]] = defaultdict(list)
    by_type: dict[str, list[float | None]] = defaultdict(list)
    for rec in records:
        score = _record_score(rec, metric)
        if rec.hop_count is not None:
            by_hop[rec.hop_count].append(score)
        if rec.sample_type is not None:
            by_type[rec.sample_type].append(score)
    return Summary(
        count=len(records),
        errors=sum(rec.error is not None for rec in records),
        metric=metric,
        mean=_mean(_record_score(r, metric) for r in records),
        by_hop={h: _mean(v) for h, v in sorted(by_hop.items())},
        by_type={t: _mean(v) for t, v in sorted(by_type.items())},
    )


def _metric_for(dataset: Sequence[Sample]) -> str:
    return "accuracy" if dataset and isinstance(dataset[0], SyntheticSample) else "f1"


def _default_template(dataset: Sequence[Sample]) -> Template:
    return Template.SYNTHETIC_BASE if dataset and isinstance(dataset[0], SyntheticSample) else Template.QA_BASE


# ---------------------------------------------------------------- experiments


def _qa_condition(sample: Sample, plan: PromptPlan, seed: int, sigma: OrderPermutation | None) -> Condition:
    base = Condition(plan.template.value, plan.k_hat, str(plan.repetition_style), seed=seed)
    if isinstance(sample, SyntheticSample):
        return base
    if sigma is None:
        # Uniformly random supporting order per sample: retrieval gives no order guarantee.
        orders = enumerate_orders(sample.hop_count)
        sigma = random.Random(derive_seed(seed, sample.id, "sigma")).choice(orders)
    return replace(base, sigma=str(sigma))


def run_eval(
    dataset: Sequence[Sample],
    model: ModelHandle,
    plan: PromptPlan,
    concurrency: int = 1,
    out_path: str | Path | None = None,
    *,
    seed: int = 0,
    sigma: OrderPermutation | None = None,
) -> Summary:
    """One record per sample under ``plan``; returns mean F1 (QA) or accuracy (synthetic).

    QA contexts place every noisy document at a seeded gap slot; the
    supporting order is ``sigma`` if given, else drawn per sample from the seed.
    """
    if Capability.GENERATE not in model.capabilities:
        raise ConfigError(f"model {model.name!r} cannot generate")
    jobs = [_Job(s, _qa_condition(s, plan, seed, sigma)) for s in dataset]
    records = _run_jobs(jobs, model, concurrency=concurrency, out_path=out_path)
    return summarize(records, _metric_for(dataset))


@dataclass(frozen=True)
class RepetitionPoint:
    step: int
    k_hat: int
    score: float | None
    count: int


def repetition_sweep(
    dataset: Sequence[Sample],
    model: ModelHandle,
    max_repetitions: int,
    *,
    concurrency: int = 1,
    out_path: str | Path | None = None,
    seed: int = 0,
    template: Template | None = None,
    style: RepetitionStyle | None = None,
) -> list[RepetitionPoint]:
    """Score at ``k_hat = 1 .. max_repetitions + 1``; ``step`` counts additional repetitions."""
    if max_repetitions < 0:
        raise ConfigError("max_repetitions must be >= 0")
    template = template or _default_template(dataset)
    curve = []
    for step in range(max_repetitions + 1):
        plan = PromptPlan(template, step + 1, style or RepetitionStyle())
        summary = run_eval(dataset, model, plan, concurrency, out_path, seed=seed)
        curve.append(RepetitionPoint(step, step + 1, summary.mean, summary.count))
    return curve


@dataclass(frozen=True)
class NoiseCell:
    list_count: int
    step: int
    accuracy: float | None
    count: int


def noise_sweep(
    model: ModelHandle,
    list_counts: Sequence[int],
    elements_per_list: int = 3,
    max_repetitions: int | Mapping[int, int] = 10,
    samples_per_cell: int = 100,
    seed: int = 0,
    *,
    concurrency: int = 1,
    out_path: str | Path | None = None,
) -> list[NoiseCell]:
    """Repetition curves for several list counts (fewer lists means less distracting content)."""
    if not list_counts:
        raise ConfigError("list_counts must be non-empty")
    grid: list[NoiseCell] = []
    if samples_per_cell <= 0:
        return grid
    for count in list_counts:
        reps = max_repetitions[count] if isinstance(max_repetitions, Mapping) else max_repetitions
        dataset = generate_dataset(samples_per_cell, count, elements_per_list, seed + count)
        for point in repetition_sweep(dataset, model, reps, concurrency=concurrency, out_path=out_path, seed=seed):
            grid.append(NoiseCell(count, point.step, point.score, point.count))
    return grid


@dataclass(frozen=True)
class PermutationRow:
    k_hat: int
    sigma: str
    score: float | None
    f1: float | None
    accuracy: float | None
    count: int


@dataclass
class PermutationStudy:
    k: int
    scorer: str
    rows: list[PermutationRow]
    per_query: dict[int, dict[str, float | None]]

    def for_k_hat(self, k_hat: int) -> list[PermutationRow]:
        return [r for r in self.rows if r.k_hat == k_hat]

    def spectrum(self, k_hat: int) -> list[PermutationRow]:
        """Rows sorted from the worst order to the best order (stable on sigma)."""
        return sorted(self.for_k_hat(k_hat), key=lambda r: (r.score is None, r.score if r.score is not None else 0.0))

    def best(self, k_hat: int) -> PermutationRow:
        rows = [r for r in self.for_k_hat(k_hat) if r.score is not None]
        return max(rows, key=lambda r: r.score)

    def worst(self, k_hat: int) -> PermutationRow:
        rows = [r for r in self.for_k_hat(k_hat) if r.score is not None]
        return min(rows, key=lambda r: r.score)

    def mean(self, k_hat: int) -> float | None:
        return _mean(r.score for r in self.for_k_hat(k_hat))

    def summary_rows(self) -> list[dict[str, Any]]:
        out = []
        for k_hat in sorted({r.k_hat for r in self.rows}):
            best, worst = self.best(k_hat), self.worst(k_hat)
            out.append({
                "k_hat": k_hat,
                "scorer": self.scorer,
                "best_sigma": best.sigma,
                "best_score": best.score,
                "best_f1": best.f1,
                "worst_sigma": worst.sigma,
                "worst_score": worst.score,
                "worst_f1": worst.f1,
                "mean_score": self.mean(k_hat),
                "mean_f1": _mean(r.f1 for r in self.for_k_hat(k_hat)),
                **{f"per_query_{name}": value for name, value in self.per_query.get(k_hat, {}).items()},
            })
        return out


def permutation_study(
    samples: Sequence[Sample],
    model: ModelHandle,
    num_noisy: int = 0,
    scorer: Scorer = Scorer.LOGPROB,
    *,
    k_hats: Sequence[int] = (1,),
    seed: int = 0,
    concurrency: int = 1,
    out_path: str | Path | None = None,
    max_k: int = 5,
) -> PermutationStudy:
    """Evaluate every supporting-document order of k-hop samples.

    The noisy subset and its gap slots are drawn once per sample from ``seed``
    and shared by every order, so the order is the only varying factor.
    Without target scoring the ordering falls back to F1 and is labelled so.
    """
    qa = [qa_from_synthetic(s) if isinstance(s, SyntheticSample) else s for s in samples]
    hop_counts = {s.hop_count for s in qa}
    if len(hop_counts) > 1:
        raise DatasetError(f"permutation study needs a single hop count, got {sorted(hop_counts)}")
    if not qa:
        return PermutationStudy(0, scorer.value, [], {})
    k = hop_counts.pop()
    if k > max_k:
        raise CardinalityGuard(f"k={k} exceeds the study guard max_k={max_k}")
    if scorer is Scorer.LOGPROB and Capability.SCORE_TARGET not in model.capabilities:
        logger.warning("model %s cannot score targets; ordering by F1 instead", model.name)
        scorer = Scorer.F1
    orders = enumerate_orders(k)
    jobs = [
        _Job(s, Condition(Template.QA_BASE.value, k_hat, sigma=str(sigma), num_noisy=num_noisy, seed=seed))
        for k_hat in k_hats
        for sigma in orders
        for s in qa
    ]
    records = _run_jobs(
        jobs, model, concurrency=concurrency, out_path=out_path, want_logprob=scorer is Scorer.LOGPROB
    )
    metric = "logprob" if scorer is Scorer.LOGPROB else "f1"
    grouped: dict[tuple[int, str], list[RunRecord]] = defaultdict(list)
    for job, rec in zip(jobs, records):
        grouped[(job.condition.k_hat, job.condition.sigma)].append(rec)
    rows = [
        PermutationRow(
            k_hat,
            sigma,
            _mean(_record_score(r, metric) for r in recs),
            _mean(_record_score(r, "f1") for r in recs),
            _mean(_record_score(r, "accuracy") for r in recs),
            len(recs),
        )
        for (k_hat, sigma), recs in grouped.items()
    ]

    per_query: dict[int, dict[str, float | None]] = {}
    for k_hat in k_hats:
        best_f1s, worst_f1s = [], []
        for s in qa:
            mine = [
                r for job, r in zip(jobs, records)
                if job.condition.k_hat == k_hat and job.sample_id == s.id and r.error is None
            ]
            scored = [r for r in mine if _record_score(r, metric) is not None]
            if not scored:
                continue
            # max/min keep the first (lexicographically smallest sigma) on ties.
            best_f1s.append(max(scored, key=lambda r: _record_score(r, metric)).f1)
            worst_f1s.append(min(scored, key=lambda r: _record_score(r, metric)).f1)
        per_query[k_hat] = {"best_f1": _mean(best_f1s), "worst_f1": _mean(worst_f1s)}
    return PermutationStudy(k, scorer.value, rows, per_query)


@dataclass(frozen=True)
class PositionCell:
    offset: int
    k_hat: int
    score: float | None
    count: int
    errors: int


def position_sweep(
    samples: Sequence[Sample],
    model: ModelHandle,
    total_slots: int | None = None,
    offsets: Sequence[int] = DEFAULT_OFFSETS,
    k_hats: Sequence[int] = (1, 2),
    *,
    seed: int = 0,
    block_order: str = "gold",
    concurrency: int = 1,
    out_path: str | Path | None = None,
) -> list[PositionCell]:
    """Slide the concatenated supporting block across ``offsets`` among noisy documents.

    Non-supporting slots are filled with the sample's noisy documents in file
    order; ``total_slots`` defaults to ``max(offsets) + k`` per sample.
    """
    if block_order not in ("gold", "random"):
        raise ConfigError(f"block_order must be 'gold' or 'random', got {block_order!r}")
    qa = [qa_from_synthetic(s) if isinstance(s, SyntheticSample) else s for s in samples]
    if not offsets:
        raise ConfigError("offsets must be non-empty")
    jobs = []
    for s in qa:
        slots = total_slots if total_slots is not None else max(offsets) + s.hop_count
        bad = [o for o in offsets if not 0 <= o <= slots - s.hop_count]
        if bad:
            raise ConfigError(f"offsets {bad} outside [0, {slots - s.hop_count}] for sample {s.id!r}")
        sigma = None
        if block_order == "random":
            sigma = str(random.Random(derive_seed(seed, s.id, "block")).choice(enumerate_orders(s.hop_count)))
        for k_hat in k_hats:
            for offset in offsets:
                cond = Condition(Template.QA_BASE.value, k_hat, sigma=sigma, offset=offset, total_slots=slots, seed=seed)
                jobs.append(_Job(s, cond))
    records = _run_jobs(jobs, model, concurrency=concurrency, out_path=out_path)
    cells: dict[tuple[int, int], list[RunRecord]] = defaultdict(list)
    for job, rec in zip(jobs, records):
        cells[(job.condition.offset, job.condition.k_hat)].append(rec)
    return [
        PositionCell(
            offset,
            k_hat,
            _mean(_record_score(r, "f1") for r in cells[(offset, k_hat)]),
            len(cells[(offset, k_hat)]),
            sum(r.error is not None for r in cells[(offset, k_hat)]),
        )
        for k_hat in k_hats
        for offset in offsets
        if (offset, k_hat) in cells
    ]


# ---------------------------------------------------------------- reporting

GROUP_KEYS = (
    "model_name",
    "template",
    "k_hat",
    "repetition_style",
    "sigma",
    "offset",
    "total_slots",
    "num_noisy",
    "seed",
    "hop_count",
    "sample_type",
)
REPORT_METRICS = ("count", "errors", "mean_f1", "accuracy", "mean_logprob")


def _group_value(record: RunRecord, key: str) -> Any:
    if key in record.condition:
        return record.condition[key]
    return getattr(record, key)


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def report(
    records_path: str | Path,
    group_by: str | Sequence[str],
    csv_path: str | Path | None = None,
) -> tuple[str, str]:
    """Grouped means over a records file.

    CSV columns are the group keys followed by ``count, errors, mean_f1,
    accuracy, mean_logprob``; means skip errored records.  Returns the
    aligned text table and the CSV text (also written to ``csv_path``).
    """
    keys = [group_by] if isinstance(group_by, str) else list(group_by)
    keys = [k.strip() for key in keys for k in key.split(",") if k.strip()]
    unknown = [k for k in keys if k not in GROUP_KEYS]
    if unknown or not keys:
        raise ConfigError(f"unknown group key(s) {unknown}; choose from {', '.join(GROUP_KEYS)}")
    groups: dict[tuple[Any, ...], list[RunRecord]] = defaultdict(list)
    for rec in read_records(records_path):
        groups[tuple(_group_value(rec, k) for k in keys)].append(rec)

    header = [*keys, *REPORT_METRICS]
    rows = []
    for group in sorted(groups, key=lambda g: tuple((v is None, str(type(v)), v if v is not None else 0) for v in g)):
        recs = groups[group]
        rows.append([
            *group,
            len(recs),
            sum(r.error is not None for r in recs),
            _mean(_record_score(r, "f1") for r in recs),
            _mean(_record_score(r, "accuracy") for r in recs),
            _mean(_record_score(r, "logprob") for r in recs),
        ])

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    csv_text = buf.getvalue()
    if csv_path is not None:
        Path(csv_path).write_text(csv_text, encoding="utf-8")

    cells = [header, *[[_fmt(v) for v in row] for row in rows]]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines), csv_text
