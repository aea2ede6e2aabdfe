"""Command line entry point: ``corerep <subcommand> [options]``.

Exit codes: 0 success, 1 fatal config/ingest error, 2 some records carry errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from collections.abc import Sequence
from dataclasses import asdict
from pathlib import Path
from typing import Any

from corerep import harness, model_client
from corerep.context_model import OrderPermutation
from corerep.errors import ConfigError, CoreError
from corerep.prompt_builder import PromptPlan, RepetitionStyle, Template, format_messages
from corerep.scoring import Scorer
from corerep.synthetic_chains import generate_dataset, write_dataset

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("corerep")

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _load_config(path: str | None) -> dict[str, Any]:
    if not path:
        return {}
    p = Path(path)
    if p.suffix == ".toml":
        with open(p, "rb") as fh:
            data = tomllib.load(fh)
    else:
        data = json.loads(p.read_text(encoding="utf-8"))
    return {k.replace("-", "_"): v for k, v in data.items()}


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", help="TOML or JSON file with option defaults")
    g.add_argument("--model", default="mock", help="model id, or 'mock' for the chain-reader mock")
    g.add_argument("--endpoint", help="OpenAI-compatible base URL (e.g. http://localhost:8000/v1)")
    g.add_argument("--api-key-env", default="OPENAI_API_KEY", help="environment variable holding the bearer token")
    g.add_argument("--logprobs", action="store_true", help="endpoint returns per-token logprobs")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--concurrency", type=int, default=1)
    g.add_argument("--out", help="records JSONL (appended; existing keys are skipped)")
    g.add_argument("--log-io", help="append every HTTP request/response to this JSONL file")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="corerep", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", parents=[common], help="generate a chained-list dataset")
    p.add_argument("--num-samples", type=int, default=1000)
    p.add_argument("--num-lists", type=int, default=10)
    p.add_argument("--elements-per-list", type=int, default=3)
    p.add_argument("--grouped", action="store_true", help="group facts by list instead of round-robin")

    def plan_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--template", choices=[t.value for t in Template], default=None)
        p.add_argument("--k-hat", type=int, default=1)
        p.add_argument("--rep-style", default="verbatim", help="verbatim | reverse | shuffle:<seed>")

    p = sub.add_parser("run", parents=[common], help="evaluate a dataset under one prompt plan")
    p.add_argument("--dataset", required=True)
    plan_flags(p)
    p.add_argument("--sigma", help="fixed supporting order, e.g. 2,1,3 (default: random per sample)")

    p = sub.add_parser("render", parents=[common], help="print the prompt for one dataset sample")
    p.add_argument("--dataset", required=True)
    p.add_argument("--index", type=int, default=0)
    plan_flags(p)
    p.add_argument("--sigma")

    p = sub.add_parser("permute-study", parents=[common], help="score every supporting-document order")
    p.add_argument("--dataset", required=True)
    p.add_argument("--num-noisy", type=int, default=0)
    p.add_argument("--scorer", choices=[s.value for s in Scorer], default=Scorer.LOGPROB.value)
    p.add_argument("--k-hats", type=_int_list, default=[1])
    p.add_argument("--max-k", type=int, default=5)
    p.add_argument("--csv", help="write the per-order table here")

    p = sub.add_parser("position-sweep", parents=[common], help="shift the supporting block through the context")
    p.add_argument("--dataset", required=True)
    p.add_argument("--total-slots", type=int)
    p.add_argument("--offsets", type=_int_list, default=list(harness.DEFAULT_OFFSETS))
    p.add_argument("--k-hats", type=_int_list, default=[1, 2])
    p.add_argument("--block-order", choices=["gold", "random"], default="gold")
    p.add_argument("--csv")

    p = sub.add_parser("repetition-sweep", parents=[common], help="score at k_hat = 1..max+1")
    p.add_argument("--dataset", required=True)
    p.add_argument("--max-repetitions", type=int, default=10)
    p.add_argument("--template", choices=[t.value for t in Template], default=None)
    p.add_argument("--csv")

    p = sub.add_parser("noise-sweep", parents=[common], help="repetition curves for several list counts")
    p.add_argument("--list-counts", type=_int_list, default=[6, 3, 1])
    p.add_argument("--elements-per-list", type=int, default=3)
    p.add_argument("--max-repetitions", type=int, default=10)
    p.add_argument("--samples-per-cell", type=int, default=100)
    p.add_argument("--csv")

    p = sub.add_parser("report", parents=[common], help="aggregate a records file")
    p.add_argument("--records", required=True)
    p.add_argument("--group-by", required=True, help=f"comma-separated keys: {', '.join(harness.GROUP_KEYS)}")
    p.add_argument("--csv")
    return parser


def _make_model(args: argparse.Namespace) -> model_client.ModelHandle:
    if args.model == "mock":
        return model_client.mock_handle()
    if not args.endpoint:
        raise ConfigError("--endpoint is required for HTTP models")
    return model_client.http_handle(
        args.endpoint,
        args.model,
        api_key_env=args.api_key_env,
        supports_logprobs=args.logprobs,
        log_io=args.log_io,
    )


def _plan(args: argparse.Namespace, dataset: Sequence[harness.Sample]) -> PromptPlan:
    template = Template(args.template) if args.template else harness._default_template(dataset)
    return PromptPlan(template, args.k_hat, RepetitionStyle.parse(args.rep_style))


def _rows_csv(rows: Sequence[dict[str, Any]], path: str | None) -> str:
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    if path:
        Path(path).write_text(buf.getvalue(), encoding="utf-8")
    return buf.getvalue()


def _partial(args: argparse.Namespace) -> int:
    if args.out and any(r.error for r in harness.read_records(args.out)):
        return EXIT_PARTIAL
    return EXIT_OK


def _dispatch(args: argparse.Namespace) -> int:
    cmd = args.command
    if cmd == "gen-synthetic":
        if not args.out:
            raise ConfigError("--out is required for gen-synthetic")
        samples = generate_dataset(args.num_samples, args.num_lists, args.elements_per_list, args.seed, args.grouped)
        params = {
            "num_samples": args.num_samples,
            "num_lists": args.num_lists,
            "elements_per_list": args.elements_per_list,
            "seed": args.seed,
            "grouped": args.grouped,
        }
        write_dataset(args.out, samples, params)
        print(f"wrote {len(samples)} samples to {args.out}")
        return EXIT_OK

    if cmd == "report":
        table, _ = harness.report(args.records, args.group_by, args.csv)
        print(table)
        return EXIT_OK

    model = _make_model(args)
    if cmd == "noise-sweep":
        grid = harness.noise_sweep(
            model, args.list_counts, args.elements_per_list, args.max_repetitions, args.samples_per_cell, args.seed,
            concurrency=args.concurrency, out_path=args.out,
        )
        print(_rows_csv([asdict(c) for c in grid], args.csv), end="")
        return _partial(args)

    dataset = harness.load_dataset(args.dataset)
    if cmd == "render":
        sample = dataset[args.index]
        plan = _plan(args, dataset)
        if isinstance(sample, harness.QaSample):
            cond = harness._qa_condition(
                sample, plan, args.seed, OrderPermutation.parse(args.sigma) if args.sigma else None
            )
        else:
            cond = harness.Condition(plan.template.value, plan.k_hat, str(plan.repetition_style), seed=args.seed)
        print(format_messages(harness.messages_for(sample, cond, render_only=True)), end="")
        return EXIT_OK
    if cmd == "run":
        sigma = OrderPermutation.parse(args.sigma) if args.sigma else None
        summary = harness.run_eval(
            dataset, model, _plan(args, dataset), args.concurrency, args.out, seed=args.seed, sigma=sigma
        )
        print(json.dumps(summary.to_dict(), indent=2))
        return EXIT_PARTIAL if summary.errors else EXIT_OK
    if cmd == "permute-study":
        study = harness.permutation_study(
            dataset, model, args.num_noisy, Scorer(args.scorer), k_hats=args.k_hats, seed=args.seed,
            concurrency=args.concurrency, out_path=args.out, max_k=args.max_k,
        )
        _rows_csv([asdict(r) for r in study.rows], args.csv)
        print(_rows_csv(study.summary_rows(), None), end="")
        return _partial(args)
    if cmd == "position-sweep":
        cells = harness.position_sweep(
            dataset, model, args.total_slots, args.offsets, args.k_hats, seed=args.seed,
            block_order=args.block_order, concurrency=args.concurrency, out_path=args.out,
        )
        print(_rows_csv([asdict(c) for c in cells], args.csv), end="")
        return EXIT_PARTIAL if any(c.errors for c in cells) else _partial(args)
    if cmd == "repetition-sweep":
        curve = harness.repetition_sweep(
            dataset, model, args.max_repetitions, concurrency=args.concurrency, out_path=args.out,
            seed=args.seed, template=Template(args.template) if args.template else None,
        )
        print(_rows_csv([asdict(p) for p in curve], args.csv), end="")
        return _partial(args)
    raise CoreError(f"unknown command {cmd}")


def _apply_config(parser: argparse.ArgumentParser, config: dict[str, Any]) -> None:
    # Config values become defaults, so explicit flags still win and required flags may come from the file.
    for subparser in parser._subparsers._group_actions[0].choices.values():
        for action in subparser._actions:
            if action.dest in config:
                action.default = config[action.dest]
                action.required = False


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    config_path = pre.parse_known_args(argv)[0].config
    if config_path:
        try:
            config = _load_config(config_path)
        except (OSError, ValueError) as exc:
            print(f"error: cannot read config {config_path}: {exc}", file=sys.stderr)
            return EXIT_FATAL
        _apply_config(parser, config)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (CoreError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
