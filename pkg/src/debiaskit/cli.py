"""Command-line surface: one binary, one subcommand per pipeline stage.

Exit codes: 0 on success, 1 on validation/configuration errors, 2 on numeric
failures during training.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import ensemble as ens
from . import models as mdl
from .corpus import load_jsonl
from .errors import NumericError, ValidationError
from .pipeline import (RunConfig, load_run_config, run_config_from_dict,
                       run_fusion, run_generate, run_selection, synth_schema,
                       write_fusion_artifacts, write_selection_artifacts)
from .report import render_table, selection_table
from .selection import SelectionReport, evaluate
from .splits import family_split, write_split
from .synth import bias_label_correlation, generate, planted_feature_families

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are validation errors (exit 1)
        raise ValidationError(message)


def _load_config(args) -> RunConfig:
    if not args.config:
        raise ValidationError("this command needs --config")
    rc = load_run_config(args.config)
    raw = dict(rc.raw)
    if args.seed is not None:
        raw.setdefault("synth", {})
        raw["synth"] = {**raw["synth"], "seed": args.seed}
    if args.seeds is not None:
        if args.seeds < 2:
            raise ValidationError("--seeds must be >= 2")
        raw["seeds"] = list(range(args.seeds))
    return run_config_from_dict(raw)


def _out_dir(args) -> Path:
    out = Path(args.out_dir or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_generate(args) -> None:
    rc = _load_config(args)
    manifest = run_generate(rc, _out_dir(args))
    print(json.dumps(manifest["results"], indent=2))


def _cmd_extract(args) -> None:
    rc = _load_config(args)
    if args.data:
        data = load_jsonl(args.data, synth_schema(rc.synth))
        pools = {"data": data}
    else:
        bundle = generate(rc.synth)
        pools = {"train": bundle.train, "dev_pool": bundle.dev_pool}
    stats: dict = {}
    for pool_name, data in pools.items():
        per_pool = {}
        for fam, specs in planted_feature_families(rc.synth).items():
            for spec in specs:
                try:
                    corr = bias_label_correlation(data, spec)
                except ValidationError:
                    corr = None
                per_pool[spec.name] = corr
        stats[pool_name] = per_pool
    print(json.dumps(stats, indent=2))


def _cmd_split(args) -> None:
    rc = _load_config(args)
    bundle = generate(rc.synth)
    out = _out_dir(args)
    schema = synth_schema(rc.synth)
    for fam, specs in planted_feature_families(rc.synth).items():
        for pool_name, data in (("train", bundle.train), ("dev", bundle.dev_pool)):
            result = family_split(data, specs, name=fam)
            write_split(result, out / f"{fam}_{pool_name}", schema,
                        config_hash=rc.config_hash)
            print(f"{fam}/{pool_name}: bias={len(result.bias_set)} "
                  f"easy={len(result.easy_set)} challenge={len(result.challenge_set)}")


def _candidate_by_name(rc: RunConfig, name: str) -> mdl.ModelSpec:
    for cand in rc.candidates:
        if cand.name == name:
            return cand
    raise ValidationError(
        f"unknown candidate {name!r}; config has {[c.name for c in rc.candidates]}"
    )


def _cmd_train_bias(args) -> None:
    from dataclasses import replace

    rc = _load_config(args)
    bundle = generate(rc.synth)
    out = _out_dir(args)
    families = planted_feature_families(rc.synth)
    fam = args.family or next(iter(families))
    if fam not in families:
        raise ValidationError(f"unknown family {fam!r}; config has {list(families)}")
    bias_train = family_split(bundle.train, families[fam], name=fam).bias_set
    vocab = mdl.build_vocab(bundle.train)
    specs = ([_candidate_by_name(rc, args.candidate)] if args.candidate
             else list(rc.candidates))
    seed = rc.seeds[0]
    for spec in specs:
        model = mdl.train(replace(spec, init_seed=seed), bias_train,
                          replace(rc.train, seed=seed,
                                  loss_adapter=mdl.LossAdapter.PLAIN_CE),
                          vocab=vocab)
        ckpt = out / f"bias_{fam}_{spec.name}.json"
        mdl.save(model, ckpt)
        enc = mdl.encode_dataset(bundle.train, model.spec, model.vocab)
        probs = mdl.predict_proba_batch(model, enc)
        cache = out / f"bias_{fam}_{spec.name}_train_probs.jsonl"
        ens.write_prob_cache(cache, enc.ids, probs)
        print(f"saved {ckpt} and {cache}")


def _cmd_train_main(args) -> None:
    from dataclasses import replace

    rc = _load_config(args)
    bundle = generate(rc.synth)
    out = _out_dir(args)
    adapter = mdl.LossAdapter(args.adapter)
    seed = rc.seeds[0]
    vocab = mdl.build_vocab(bundle.train)
    ctx = None
    if adapter is not mdl.LossAdapter.PLAIN_CE:
        if args.bias_probs:
            sources = [
                ens.BiasSource(name=Path(p).stem,
                               probs=ens.read_prob_cache(p, bundle.train))
                for p in args.bias_probs
            ]
        elif args.bias_checkpoint:
            bias_models = [mdl.load(p) for p in args.bias_checkpoint]
            ctx = ens.context_from_models(bias_models, bundle.train)
            sources = ctx.sources
        else:
            raise ValidationError(
                f"{adapter.value} training needs --bias-checkpoint or --bias-probs"
            )
        ctx = ens.EnsembleContext(sources=sources)
        if adapter is mdl.LossAdapter.DISTILL:
            if args.teacher_probs:
                teacher = ens.read_prob_cache(args.teacher_probs, bundle.train)
            else:
                teacher_model = mdl.train(
                    replace(rc.main_spec, init_seed=seed), bundle.train,
                    replace(rc.train, seed=seed,
                            loss_adapter=mdl.LossAdapter.PLAIN_CE), vocab=vocab)
                enc = mdl.encode_dataset(bundle.train, teacher_model.spec, vocab)
                teacher = mdl.predict_proba_batch(teacher_model, enc)
            labels = [ex.label for ex in bundle.train]
            import numpy as np
            ctx = ens.distill_context(teacher, ctx, np.asarray(labels))
    model = mdl.train(replace(rc.main_spec, init_seed=seed), bundle.train,
                      replace(rc.train, seed=seed, loss_adapter=adapter),
                      ctx, vocab=vocab)
    ckpt = out / f"main_{adapter.value}.json"
    mdl.save(model, ckpt)
    for name, data in (("dev_easy", bundle.dev_easy),
                       ("dev_challenge", bundle.dev_challenge),
                       ("test_challenge", bundle.test_challenge)):
        print(f"{name}: {evaluate(model, data):.4f}")
    print(f"saved {ckpt}")


def _cmd_select(args) -> None:
    rc = _load_config(args)
    outcome = run_selection(rc)
    write_selection_artifacts(rc, outcome, _out_dir(args))
    for fam, report in outcome.reports.items():
        print(render_table(selection_table(
            report, dev_name="dev_easy", challenge_name="dev_challenge",
            title=f"{rc.name}: {fam} (winner: {report.winner})")))


def _cmd_fuse(args) -> None:
    rc = _load_config(args)
    outcome = run_fusion(rc)
    write_fusion_artifacts(rc, outcome, _out_dir(args))
    headers = list(outcome.fused.accuracies)
    print("fused sources:", ", ".join(outcome.fused.source_names))
    for name in headers:
        mean, std = outcome.fused.mean_std(name)
        print(f"  {name}: {100 * mean:.2f} ±{100 * std:.2f}")


def _cmd_evaluate(args) -> None:
    rc = _load_config(args)
    model = mdl.load(args.model)
    data = load_jsonl(args.data, synth_schema(rc.synth))
    print(f"accuracy: {evaluate(model, data):.6f}")


def _cmd_report(args) -> None:
    report = SelectionReport.load(args.report)
    print(render_table(selection_table(report)))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="debiaskit",
                     description="ensemble-based dataset-bias mitigation toolkit")
    parser.add_argument("--config", help="run config JSON path")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the synthetic data seed")
    parser.add_argument("--out-dir", default=None, help="artifact directory")
    parser.add_argument("--seeds", type=int, default=None,
                        help="use seeds 0..N-1 for multi-run aggregation")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", help="write the synthetic datasets")
    sub.add_parser("extract", help="bias feature statistics").add_argument(
        "--data", default=None, help="JSONL file to analyze instead of the pools")
    sub.add_parser("split", help="write per-family bias/easy/challenge splits")

    p = sub.add_parser("train-bias", help="train candidate bias models")
    p.add_argument("--family", default=None)
    p.add_argument("--candidate", default=None)

    p = sub.add_parser("train-main", help="train the main model")
    p.add_argument("--adapter", default="plain_ce",
                   choices=[a.value for a in mdl.LossAdapter])
    p.add_argument("--bias-checkpoint", action="append", default=[])
    p.add_argument("--bias-probs", action="append", default=[],
                   help="bias probability cache JSONL keyed by example id")
    p.add_argument("--teacher-probs", default=None,
                   help="teacher probability cache for distillation")

    sub.add_parser("select", help="run the bias-model capacity search")
    sub.add_parser("fuse", help="fuse per-family winners into one main model")

    p = sub.add_parser("evaluate", help="accuracy of a checkpoint on a JSONL file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)

    p = sub.add_parser("report", help="render a saved selection report")
    p.add_argument("--report", required=True)
    return parser


_HANDLERS = {
    "generate": _cmd_generate,
    "extract": _cmd_extract,
    "split": _cmd_split,
    "train-bias": _cmd_train_bias,
    "train-main": _cmd_train_main,
    "select": _cmd_select,
    "fuse": _cmd_fuse,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _HANDLERS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
