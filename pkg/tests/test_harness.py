from __future__ import annotations

import json
from dataclasses import replace

import pytest

from corerep import harness
from corerep.context_model import Document, OrderPermutation, Role, is_in_order_set
from corerep.errors import ConfigError, DatasetError, IngestError, ValidationError
from corerep.harness import (
    Condition,
    QaSample,
    noise_sweep,
    permutation_study,
    position_sweep,
    qa_from_synthetic,
    read_records,
    repetition_sweep,
    replay_prompt_hash,
    report,
    run_eval,
    strip_volatile,
)
from corerep.model_client import Capability, MockConfig, ModelHandle
from corerep.prompt_builder import PromptPlan, Template
from corerep.scoring import Scorer
from corerep.synthetic_chains import generate_dataset

SYN = PromptPlan(Template.SYNTHETIC_BASE)


@pytest.fixture(scope="module")
def chains3():
    return generate_dataset(20, 10, 3, seed=3)


def qa_line(i, **overrides):
    data = {
        "id": f"q{i}",
        "question": f"Question {i}?",
        "answers": [f"answer {i}"],
        "supporting": [
            {"title": "A", "text": f"first fact {i}", "hop_index": 1},
            {"title": "B", "text": f"second fact {i}", "hop_index": 2},
        ],
        "noisy": [{"title": "N", "text": f"noise {i}"}],
        "type": "compositional",
    }
    data.update(overrides)
    return json.dumps(data)


# ---------------------------------------------------------------- samples and ingestion


def test_qa_from_synthetic_matches_chain(fixed_sample):
    qa = qa_from_synthetic(fixed_sample)
    assert qa.hop_count == 2
    assert qa.answers == ("381",)
    assert [d.text for d in qa.supporting_by_hop()] == [
        "In the list 0, 512 is positioned immediately before 1021.",
        "In the list 0, 381 is positioned immediately before 512.",
    ]
    assert len(qa.noisy) == 2 and all(d.role is Role.NOISY for d in qa.noisy)
    assert qa.question == "What is the first element of the list that contains 1021?"


def test_qa_sample_invariants():
    good = QaSample("x", "q?", ("a",), (Document("d", "t", Role.SUPPORTING, 1),))
    assert good.hop_count == 1
    with pytest.raises(ValidationError):
        replace(good, answers=())
    with pytest.raises(ValidationError):
        replace(good, question=" ")
    with pytest.raises(ValidationError):
        replace(good, supporting=(Document("d", "t", Role.SUPPORTING, 2),))
    with pytest.raises(ValidationError):
        replace(good, noisy=(Document("e", "t", Role.SUPPORTING, 2),))


def test_ingest_three_lines(tmp_path):
    path = tmp_path / "qa.jsonl"
    path.write_text("\n".join(qa_line(i) for i in range(3)) + "\n")
    samples = harness.ingest_qa_dataset(path)
    assert [s.id for s in samples] == ["q0", "q1", "q2"]
    assert samples[0].hop_count == 2 and samples[0].sample_type == "compositional"
    assert samples[0].supporting_by_hop()[0].title == "A"


def test_ingest_missing_hop_index_names_sample(tmp_path):
    bad = qa_line(7, supporting=[{"title": "A", "text": "t"}])
    path = tmp_path / "qa.jsonl"
    path.write_text(qa_line(0) + "\n" + bad + "\n")
    with pytest.raises(ValidationError) as info:
        harness.ingest_qa_dataset(path)
    assert info.value.sample_id == "q7"
    assert "q7" in str(info.value)


def test_ingest_bad_hop_range_names_sample(tmp_path):
    bad = qa_line(4, supporting=[{"text": "t", "hop_index": 1}, {"text": "u", "hop_index": 3}])
    path = tmp_path / "qa.jsonl"
    path.write_text(bad + "\n")
    with pytest.raises(ValidationError) as info:
        harness.ingest_qa_dataset(path)
    assert info.value.sample_id == "q4"


@pytest.mark.parametrize("line", ["{not json", "[1, 2]", json.dumps({"id": "z"})])
def test_ingest_malformed_line_number(tmp_path, line):
    path = tmp_path / "qa.jsonl"
    path.write_text(qa_line(0) + "\n\n" + line + "\n")
    with pytest.raises(IngestError) as info:
        harness.ingest_qa_dataset(path)
    assert info.value.line_number == 3


def test_ingest_round_trip(tmp_path, fixed_sample):
    path = tmp_path / "qa.jsonl"
    path.write_text("\n".join(qa_line(i) for i in range(3)) + "\n")
    samples = harness.ingest_qa_dataset(path)
    samples.append(qa_from_synthetic(fixed_sample))
    out = tmp_path / "again.jsonl"
    harness.write_qa_dataset(out, samples)
    assert harness.ingest_qa_dataset(out) == samples


def test_load_dataset_detects_kind(tmp_path, chains3):
    from corerep.synthetic_chains import write_dataset

    syn = tmp_path / "syn.jsonl"
    write_dataset(syn, chains3, {"seed": 3})
    assert harness.load_dataset(syn) == chains3
    qa = tmp_path / "qa.jsonl"
    qa.write_text(qa_line(0) + "\n")
    assert isinstance(harness.load_dataset(qa)[0], QaSample)


# ---------------------------------------------------------------- run_eval


def test_run_eval_mock_synthetic(chains3, mock):
    assert run_eval(chains3, mock, replace(SYN, k_hat=2)).mean == 1.0
    assert run_eval(chains3, mock, SYN).mean == 0.0


def test_run_eval_empty_dataset(mock):
    summary = run_eval([], mock, SYN)
    assert summary.count == 0 and summary.errors == 0 and summary.mean is None


def test_run_eval_summary_by_hop_and_type(tmp_path, mock):
    path = tmp_path / "qa.jsonl"
    path.write_text("\n".join(qa_line(i) for i in range(3)) + "\n")
    samples = harness.ingest_qa_dataset(path)
    # the mock cannot read QA prose: every record carries an error and the run continues
    summary = run_eval(samples, mock, PromptPlan(Template.QA_BASE), out_path=tmp_path / "r.jsonl")
    assert summary.count == 3 and summary.errors == 3 and summary.mean is None
    assert all("MockParseError" in r.error for r in read_records(tmp_path / "r.jsonl"))


def test_run_eval_qa_chain_samples(chains3, mock):
    qa = [qa_from_synthetic(s) for s in chains3]
    gold = OrderPermutation.identity(2)
    summary = run_eval(qa, mock, PromptPlan(Template.QA_BASE), sigma=gold)
    assert summary.metric == "f1" and summary.mean == 1.0 and summary.by_hop == {2: 1.0}
    reverse = OrderPermutation((2, 1))
    assert run_eval(qa, mock, PromptPlan(Template.QA_BASE), sigma=reverse).mean == 0.0
    assert run_eval(qa, mock, PromptPlan(Template.QA_BASE, 2), sigma=reverse).mean == 1.0


def test_run_eval_requires_generate(chains3):
    scorer_only = ModelHandle("s", frozenset({Capability.SCORE_TARGET}), MockConfig())
    with pytest.raises(ConfigError):
        run_eval(chains3, scorer_only, SYN)


def test_default_sigma_is_seeded_per_sample(chains3, mock, tmp_path):
    qa = [qa_from_synthetic(s) for s in chains3]
    run_eval(qa, mock, PromptPlan(Template.QA_BASE), out_path=tmp_path / "a.jsonl", seed=5)
    run_eval(qa, mock, PromptPlan(Template.QA_BASE), out_path=tmp_path / "b.jsonl", seed=5)
    a, b = read_records(tmp_path / "a.jsonl"), read_records(tmp_path / "b.jsonl")
    assert [r.condition["sigma"] for r in a] == [r.condition["sigma"] for r in b]
    assert {r.condition["sigma"] for r in a} == {"(1,2)", "(2,1)"}


def test_cot_records_both_turns(chains3, mock):
    qa = [qa_from_synthetic(s) for s in chains3[:3]]
    cond = Condition(Template.QA_COT.value, 1, sigma="(1,2)")
    rec = harness._execute(harness._Job(qa[0], cond), mock, want_logprob=True)
    assert rec.error is None
    assert rec.cot_output == f"Answer: {qa[0].answers[0]}"
    assert rec.exact_match and rec.logprob_score == 0.0


def test_decompose_not_evaluable(chains3):
    qa = qa_from_synthetic(chains3[0])
    with pytest.raises(ConfigError):
        harness.messages_for(qa, Condition(Template.DECOMPOSE.value))


def test_template_kind_mismatch(chains3):
    with pytest.raises(ConfigError):
        harness.messages_for(chains3[0], Condition(Template.QA_BASE.value))
    with pytest.raises(ConfigError):
        harness.messages_for(qa_from_synthetic(chains3[0]), Condition(Template.SYNTHETIC_BASE.value))


# ---------------------------------------------------------------- records


def test_resume_equals_uninterrupted(tmp_path, chains3, mock):
    plan = replace(SYN, k_hat=2)
    full = tmp_path / "full.jsonl"
    run_eval(chains3, mock, plan, out_path=full)
    part = tmp_path / "part.jsonl"
    run_eval(chains3[:7], mock, plan, out_path=part)
    summary = run_eval(chains3, mock, plan, out_path=part, concurrency=4)
    assert summary.count == len(chains3)
    strip = lambda p: [strip_volatile(r) for r in read_records(p)]  # noqa: E731
    assert strip(part) == strip(full)
    # a third run adds nothing
    run_eval(chains3, mock, plan, out_path=part)
    assert len(read_records(part)) == len(chains3)


def test_resume_key_includes_condition(tmp_path, chains3, mock):
    path = tmp_path / "r.jsonl"
    run_eval(chains3, mock, SYN, out_path=path)
    run_eval(chains3, mock, replace(SYN, k_hat=2), out_path=path)
    assert len(read_records(path)) == 2 * len(chains3)


def test_concurrency_does_not_change_records(tmp_path, chains3, mock):
    qa = [qa_from_synthetic(s) for s in chains3]
    run_eval(qa, mock, PromptPlan(Template.QA_BASE, 2), out_path=tmp_path / "a.jsonl", seed=1)
    run_eval(qa, mock, PromptPlan(Template.QA_BASE, 2), out_path=tmp_path / "b.jsonl", seed=1, concurrency=8)
    a = [strip_volatile(r) for r in read_records(tmp_path / "a.jsonl")]
    b = [strip_volatile(r) for r in read_records(tmp_path / "b.jsonl")]
    assert a == b


def test_prompt_hash_replays(tmp_path, chains3, mock):
    qa = [qa_from_synthetic(s) for s in chains3]
    path = tmp_path / "r.jsonl"
    run_eval(qa, mock, PromptPlan(Template.QA_BASE, 3), out_path=path, seed=9)
    permutation_study(qa[:4], mock, num_noisy=3, k_hats=(1, 2), out_path=path, seed=9)
    by_id = {s.id: s for s in qa}
    records = read_records(path)
    assert len(records) == 20 + 4 * 2 * 2
    for rec in records:
        assert replay_prompt_hash(by_id[rec.sample_id], rec.condition) == rec.prompt_hash


def test_read_records_bad_line(tmp_path):
    path = tmp_path / "r.jsonl"
    path.write_text('{"sample_id": "a"}\n')
    with pytest.raises(IngestError):
        read_records(path)
    assert read_records(tmp_path / "absent.jsonl") == []


def test_derive_seed_stable():
    assert harness.derive_seed(0, "a", "b") == harness.derive_seed(0, "a", "b")
    assert harness.derive_seed(0, "a", "b") != harness.derive_seed(1, "a", "b")
    assert harness.derive_seed(0, "ab") != harness.derive_seed(0, "a", "b")


# ---------------------------------------------------------------- permutation study


def test_permutation_study_k1(mock, fixed_sample):
    from corerep.synthetic_chains import make_sample

    sample = make_sample("k1", [[5, 6], [7, 8]])
    study = permutation_study([sample], mock)
    assert study.k == 1 and len(study.rows) == 1
    assert study.best(1) == study.worst(1)


def test_permutation_study_k2(chains3, mock):
    study = permutation_study(chains3, mock, num_noisy=5)
    assert study.k == 2 and study.scorer == "logprob"
    assert study.best(1).sigma == "(1,2)" and study.best(1).accuracy == 1.0
    assert study.worst(1).sigma == "(2,1)" and study.worst(1).accuracy == 0.0
    assert study.best(1).accuracy >= study.worst(1).accuracy


def test_permutation_study_k5(mock):
    samples = generate_dataset(5, 4, 6, seed=11)
    study = permutation_study(samples, mock, num_noisy=2, k_hats=(1, 5))
    assert study.k == 5
    assert len(study.for_k_hat(1)) == 120 and len({r.sigma for r in study.for_k_hat(1)}) == 120
    assert study.best(1).score > study.worst(1).score
    assert study.best(5).score == study.worst(5).score == 0.0
    spectrum = [r.score for r in study.spectrum(1)]
    assert spectrum == sorted(spectrum)
    rows = study.summary_rows()
    assert [r["k_hat"] for r in rows] == [1, 5]
    assert rows[0]["per_query_best_f1"] == 1.0 and rows[0]["per_query_worst_f1"] == 0.0


def test_permutation_study_shares_noise_across_orders(chains3, mock, tmp_path):
    qa = qa_from_synthetic(chains3[0])
    contexts = []
    for sigma in ("(1,2)", "(2,1)"):
        cond = Condition(Template.QA_BASE.value, sigma=sigma, num_noisy=4, seed=2)
        contexts.append(harness.context_for(qa, cond))
    noise = [[(i, d.id) for i, d in enumerate(c.documents) if not d.is_supporting] for c in contexts]
    assert noise[0] == noise[1] and len(noise[0]) == 4
    assert is_in_order_set(contexts[0], OrderPermutation((1, 2)))


def test_permutation_study_mixed_hops(mock):
    mixed = generate_dataset(2, 3, 3, seed=1) + generate_dataset(2, 3, 4, seed=1)
    with pytest.raises(DatasetError):
        permutation_study(mixed, mock)


def test_permutation_study_too_few_noisy(chains3, mock):
    study = permutation_study(chains3[:2], mock, num_noisy=1000)
    assert all(r.score is None for r in study.rows)


def test_permutation_study_f1_fallback(chains3, caplog):
    gen_only = ModelHandle("gen", frozenset({Capability.GENERATE}), MockConfig())
    study = permutation_study(chains3, gen_only)
    assert study.scorer == "f1"
    assert study.best(1).sigma == "(1,2)" and study.best(1).score == 1.0
    assert "ordering by F1" in caplog.text


# ---------------------------------------------------------------- position sweep


def test_position_sweep_default_grid(chains3, mock):
    cells = position_sweep(chains3[:5], mock)
    assert len(cells) == 20
    assert [c.offset for c in cells[:10]] == list(range(0, 19, 2))
    assert {c.k_hat for c in cells} == {1, 2}
    k2 = [c.score for c in cells if c.k_hat == 2]
    assert k2 == [1.0] * 10  # offset-invariant
    assert all(c.errors == 0 and c.count == 5 for c in cells)


def test_position_sweep_offset0_no_noise_equals_run_eval(chains3, mock, tmp_path):
    qa = [replace(qa_from_synthetic(s), noisy=()) for s in chains3]
    cells = position_sweep(qa, mock, total_slots=2, offsets=[0], k_hats=[1], out_path=tmp_path / "p.jsonl")
    summary = run_eval(
        qa, mock, PromptPlan(Template.QA_BASE), sigma=OrderPermutation.identity(2), out_path=tmp_path / "r.jsonl"
    )
    assert cells[0].score == summary.mean
    p = [r.prompt_hash for r in read_records(tmp_path / "p.jsonl")]
    r = [r.prompt_hash for r in read_records(tmp_path / "r.jsonl")]
    assert p == r


def test_position_sweep_random_block_order(chains3, mock):
    cells = position_sweep(chains3[:8], mock, offsets=[0, 4], k_hats=[2], block_order="random")
    assert [c.score for c in cells] == [1.0, 1.0]


def test_position_sweep_block_placement(chains3):
    qa = qa_from_synthetic(chains3[0])
    ctx = harness.context_for(qa, Condition(Template.QA_BASE.value, offset=6, total_slots=20))
    assert len(ctx.documents) == 20
    assert [i for i, d in enumerate(ctx.documents) if d.is_supporting] == [6, 7]
    assert [d.hop_index for d in ctx.documents[6:8]] == [1, 2]


@pytest.mark.parametrize("kwargs", [{"offsets": [-2]}, {"offsets": [20]}, {"offsets": []}, {"block_order": "x"}])
def test_position_sweep_config_errors(chains3, mock, kwargs):
    with pytest.raises(ConfigError):
        position_sweep(chains3[:2], mock, total_slots=20, **kwargs)


def test_position_sweep_insufficient_noise_is_recorded(mock, fixed_sample):
    cells = position_sweep([fixed_sample], mock, offsets=[0, 10], k_hats=[1])
    assert cells[1].errors == 1 and cells[1].score is None


# ---------------------------------------------------------------- sweeps


def test_repetition_sweep_zero(chains3, mock):
    curve = repetition_sweep(chains3, mock, 0)
    assert len(curve) == 1 and curve[0].step == 0 and curve[0].k_hat == 1


def test_repetition_sweep_n3(chains3, mock):
    assert [p.score for p in repetition_sweep(chains3, mock, 4)] == [0.0, 1.0, 1.0, 1.0, 1.0]


def test_repetition_sweep_n5(mock):
    curve = repetition_sweep(generate_dataset(30, 10, 5, seed=2), mock, 5)
    assert [p.score for p in curve] == [0.0, 0.0, 0.0, 1.0, 1.0, 1.0]


def test_repetition_sweep_negative(chains3, mock):
    with pytest.raises(ConfigError):
        repetition_sweep(chains3, mock, -1)


def test_noise_sweep(mock):
    grid = noise_sweep(mock, [6, 3, 1], max_repetitions={6: 2, 3: 3, 1: 4}, samples_per_cell=10)
    assert sorted({c.list_count for c in grid}) == [1, 3, 6]
    curves = {n: [c.accuracy for c in grid if c.list_count == n] for n in (6, 3, 1)}
    assert curves == {6: [0.0, 1.0, 1.0], 3: [0.0, 1.0, 1.0, 1.0], 1: [0.0, 1.0, 1.0, 1.0, 1.0]}


def test_noise_sweep_empty(mock):
    assert noise_sweep(mock, [6, 3, 1], samples_per_cell=0) == []
    with pytest.raises(ConfigError):
        noise_sweep(mock, [])


# ---------------------------------------------------------------- report


def test_report_by_k_hat(tmp_path, chains3, mock):
    path = tmp_path / "r.jsonl"
    repetition_sweep(chains3, mock, 2, out_path=path)
    table, csv_text = report(path, "k_hat", tmp_path / "out.csv")
    lines = csv_text.splitlines()
    assert lines[0] == "k_hat,count,errors,mean_f1,accuracy,mean_logprob"
    assert lines[1:] == ["1,20,0,0.0000,0.0000,", "2,20,0,1.0000,1.0000,", "3,20,0,1.0000,1.0000,"]
    assert (tmp_path / "out.csv").read_text() == csv_text
    assert len({len(line) for line in table.splitlines()}) == 1


def test_report_by_hop_count(tmp_path, mock):
    path = tmp_path / "r.jsonl"
    for n in (3, 4, 5):
        qa = [qa_from_synthetic(s) for s in generate_dataset(4, 3, n, seed=n)]
        run_eval(qa, mock, PromptPlan(Template.QA_BASE), out_path=path, sigma=OrderPermutation.identity(n - 1))
    _, csv_text = report(path, ["hop_count"])
    assert [line.split(",")[0] for line in csv_text.splitlines()[1:]] == ["2", "3", "4"]


def test_report_empty_and_unknown(tmp_path):
    path = tmp_path / "r.jsonl"
    path.write_text("")
    _, csv_text = report(path, "k_hat,sigma")
    assert csv_text == "k_hat,sigma,count,errors,mean_f1,accuracy,mean_logprob\n"
    with pytest.raises(ConfigError):
        report(path, "colour")
