"""Command-line surface: ingest, pretrain, finetune, evaluate, predict, synth.

Every command reads its settings from an optional JSON config file plus
flags (flags win), funnels all randomness through named seeds, and writes
artifacts atomically. Train/eval commands accept --dry-run, which pins the
configured schedule against the published one (paper profile), subsamples
1% of the data, and exercises the full plumbing with two iterations per
stage.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import train as T
from ._fileio import atomic_write_text, directory_lock, sha256_bytes
from .config import RunConfig, load_config, profile_config
from .discretize import FeatureVocabulary, load_manifest
from .errors import FsnidsError
from .evaluate import format_report_table, predict_flows, write_report
from .ingest import (
    concat_datasets,
    filter_benign,
    parse_cidds_csv,
    read_flowset,
    write_flowset,
)
from .pipeline import (
    build_vocabulary,
    run_evaluate,
    run_finetune,
    run_pretrain,
    select_features,
    validate_paper_schedule,
)
from .train import CheckpointManifest, load_checkpoint, save_checkpoint, write_trace

DRY_RUN_FRACTION = 0.01
DRY_RUN_ITERATIONS = 2


def _config_from_args(args) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "deterministic", None) is not None:
        overrides["deterministic"] = args.deterministic
    if args.config:
        if args.profile:
            overrides["profile"] = args.profile
        return load_config(args.config, **overrides)
    return profile_config(args.profile or "desk", **overrides)


def _dataset_id(tokens: np.ndarray, labels: np.ndarray) -> str:
    return sha256_bytes(tokens.tobytes() + labels.tobytes())[:16]


def _load_cache(path, cfg: RunConfig):
    tokens, labels, digest, feature_names = read_flowset(path)
    full_vocab = FeatureVocabulary()
    if digest != full_vocab.digest():
        raise FsnidsError(
            f"cache {path} was written with vocabulary digest {digest}, "
            f"current vocabulary is {full_vocab.digest()}"
        )
    vocab = build_vocabulary(cfg)
    tokens = select_features(tokens, cfg, full_vocab)
    return tokens, labels, vocab


def _subsample(tokens, labels, fraction):
    n = max(1, int(tokens.shape[0] * fraction))
    return tokens[:n], labels[:n]


def _print_summary(name: str, benign: int, malicious: int) -> None:
    width = max(len(name), 12)
    print(f"{'':<{width}}  {name}")
    print(f"{'Benign':<{width}}  {benign}")
    print(f"{'Malicious':<{width}}  {malicious}")
    print(f"{'Total':<{width}}  {benign + malicious}")


def cmd_ingest(args) -> int:
    cfg = _config_from_args(args)
    datasets = [parse_cidds_csv(p, strict=args.strict) for p in args.inputs]
    data = concat_datasets(datasets)
    if args.balance:
        from .ingest import balance_dataset

        data = balance_dataset(data, seed=cfg.seeds()["balance"])
    if args.benign_only:
        data = filter_benign(data)
    vocab = FeatureVocabulary()
    tokens = vocab.discretize_records([r for r, _ in data.records])
    labels = np.asarray([int(y) for _, y in data.records], dtype=np.int64)
    out = Path(args.out)
    with directory_lock(out.parent):
        write_flowset(out, tokens, labels, vocab.digest(), vocab.feature_names)
        vocab.write_manifest(out.with_suffix(out.suffix + ".vocab"))
    benign = int((labels == 0).sum())
    _print_summary(out.name, benign, labels.shape[0] - benign)
    if data.skipped_rows:
        print(f"skipped malformed rows: {data.skipped_rows}")
    if data.unrecognized_labels:
        print(f"unrecognized labels mapped to malicious: {data.unrecognized_labels}")
    return 0


def _write_checkpoint(params, cfg: RunConfig, vocab, path, stages, dry_run: bool) -> None:
    path = Path(path)
    manifest = CheckpointManifest(
        config=params.config,
        vocab_digest=vocab.digest(),
        stages=stages,
        seeds=cfg.seeds() | {"master": cfg.seed, "dry_run": dry_run},
    )
    with directory_lock(path.parent):
        save_checkpoint(params, manifest, path)
        vocab.write_manifest(path.with_suffix(path.suffix + ".vocab"))


def cmd_pretrain(args) -> int:
    cfg = _config_from_args(args)
    tokens, labels, vocab = _load_cache(args.cache, cfg)
    iterations = cfg.stage_mlm
    if args.dry_run:
        if cfg.profile == "paper":
            for line in validate_paper_schedule(cfg):
                print(line)
        tokens, labels = _subsample(tokens, labels, DRY_RUN_FRACTION)
        iterations = min(DRY_RUN_ITERATIONS, iterations)
        print(f"dry run: {tokens.shape[0]} flows, {iterations} iterations")
    result = run_pretrain(cfg, tokens, labels, vocab, iterations=iterations)
    stages = [{"name": T.STAGE_MLM, "iterations": iterations, "lr": cfg.learning_rate}]
    _write_checkpoint(result.params, cfg, vocab, args.out, stages, args.dry_run)
    if args.trace:
        write_trace(args.trace, result.trace)
    print(f"pretrained checkpoint written to {args.out} "
          f"(final loss {result.trace[-1].loss:.4f})")
    return 0


def cmd_finetune(args) -> int:
    cfg = _config_from_args(args)
    tokens, labels, vocab = _load_cache(args.cache, cfg)
    params, manifest = load_checkpoint(args.init, expected_vocab_digest=vocab.digest(),
                                       expected_profile=cfg.feature_profile)
    head_iters, joint_iters = cfg.stage_head, cfg.stage_joint
    if args.dry_run:
        if cfg.profile == "paper":
            for line in validate_paper_schedule(cfg):
                print(line)
        tokens, labels = _subsample(tokens, labels, DRY_RUN_FRACTION)
        head_iters = min(DRY_RUN_ITERATIONS, head_iters)
        joint_iters = min(DRY_RUN_ITERATIONS, joint_iters)
        print(f"dry run: {tokens.shape[0]} flows, {head_iters}+{joint_iters} iterations")
    result = run_finetune(cfg, tokens, labels, vocab, params,
                          head_iterations=head_iters, joint_iterations=joint_iters)
    stages = list(manifest.get("stages", [])) + [
        {"name": T.STAGE_HEAD, "iterations": head_iters, "lr": cfg.learning_rate},
        {"name": T.STAGE_JOINT, "iterations": joint_iters, "lr": cfg.learning_rate},
    ]
    _write_checkpoint(result.params, cfg, vocab, args.out, stages, args.dry_run)
    if args.trace:
        write_trace(args.trace, result.trace)
    print(f"fine-tuned checkpoint written to {args.out} "
          f"(final loss {result.trace[-1].loss:.4f})")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config_from_args(args)
    tokens, labels, vocab = _load_cache(args.cache, cfg)
    params, _ = load_checkpoint(args.checkpoint, expected_vocab_digest=vocab.digest(),
                                expected_profile=cfg.feature_profile)
    if args.dry_run:
        if cfg.profile == "paper":
            for line in validate_paper_schedule(cfg):
                print(line)
        tokens, labels = _subsample(tokens, labels, DRY_RUN_FRACTION)
        print(f"dry run: evaluating {tokens.shape[0]} flows at L={cfg.eval_sequence_length}")
    report, _ = run_evaluate(cfg, tokens, labels, vocab, params,
                             dataset_id=_dataset_id(tokens, labels),
                             checkpoint_id=str(args.checkpoint))
    write_report(args.out, report)
    print(format_report_table([("sequence-model", report)]))
    print(f"report written to {args.out}")
    return 0


def cmd_predict(args) -> int:
    cfg = _config_from_args(args)
    data = parse_cidds_csv(args.input, strict=args.strict)
    manifest_path = args.manifest or str(Path(args.checkpoint).with_suffix(
        Path(args.checkpoint).suffix + ".vocab"))
    full_vocab = load_manifest(manifest_path)
    params, _ = load_checkpoint(args.checkpoint, expected_vocab_digest=full_vocab.digest(),
                                expected_profile=cfg.feature_profile)
    tokens = full_vocab.discretize_records([r for r, _ in data.records])
    tokens = select_features(tokens, cfg, full_vocab)
    vocab = build_vocabulary(cfg)
    preds, probs = predict_flows(params, tokens, vocab,
                                 sequence_length=cfg.eval_sequence_length,
                                 batch_size=cfg.eval_batch_size)
    lines = ["index,prediction,p_benign,p_malicious"]
    for i, (p, pm) in enumerate(zip(preds, probs)):
        label = "malicious" if p == 1 else "benign"
        lines.append(f"{i},{label},{1.0 - pm:.6f},{pm:.6f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
        print(f"{len(preds)} predictions written to {args.out}")
    else:
        print(text, end="")
    return 0


def cmd_synth(args) -> int:
    from .synth import DomainShift, SynthConfig, generate_corpus, shift_domain

    config = SynthConfig(
        total_flows=args.total,
        ambiguous_fraction=args.ambiguous_fraction,
        pattern_weights=(args.burst_weight, args.ambiguous_fraction / 2.0,
                         1.0 - args.burst_weight - args.ambiguous_fraction / 2.0),
        seed=args.seed if args.seed is not None else 0,
    )
    corpus = generate_corpus(config)
    if args.port_offset or args.byte_scale != 1.0:
        corpus = shift_domain(corpus, DomainShift(port_offset=args.port_offset,
                                                  byte_scale=args.byte_scale))
    corpus.write_csv(args.out)
    sidecar = args.sidecar or str(Path(args.out).with_suffix(".truth"))
    corpus.write_sidecar(sidecar)
    benign = int((corpus.labels == 0).sum())
    _print_summary(Path(args.out).name, benign, len(corpus) - benign)
    print(f"sidecar written to {sidecar}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fsnids",
        description="Flow-sequence network intrusion detection toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--profile", choices=["paper", "desk"], help="named profile")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--deterministic", action="store_true", default=None,
                       help="record deterministic mode (default: on)")

    p = sub.add_parser("ingest", help="parse CSVs, discretize, write a FLOWSET cache")
    common(p)
    p.add_argument("inputs", nargs="+", help="CIDDS-format CSV files, in order")
    p.add_argument("--out", required=True, help="cache file to write")
    p.add_argument("--strict", action="store_true", help="abort on malformed rows")
    p.add_argument("--balance", action="store_true",
                   help="down-sample benign flows to the malicious count")
    p.add_argument("--benign-only", action="store_true", help="keep only benign flows")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("pretrain", help="masked-flow pretraining on benign flows")
    common(p)
    p.add_argument("--cache", required=True, help="FLOWSET cache from ingest")
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.add_argument("--trace", help="loss trace file")
    p.add_argument("--dry-run", action="store_true",
                   help="validate schedule and plumbing on a 1%% subsample")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="classifier fine-tuning from a pretrained checkpoint")
    common(p)
    p.add_argument("--cache", required=True)
    p.add_argument("--init", required=True, help="pretrained checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="loss trace file")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="score a labeled cache with a checkpoint")
    common(p)
    p.add_argument("--cache", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="metrics report (JSON)")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="per-flow labels for a CSV")
    common(p)
    p.add_argument("--input", required=True, help="CIDDS-format CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", help="vocabulary manifest (default: <checkpoint>.vocab)")
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    common(p)
    p.add_argument("--out", required=True, help="CSV to write")
    p.add_argument("--sidecar", help="ground-truth file (default: <out>.truth)")
    p.add_argument("--total", type=int, default=100_000)
    p.add_argument("--ambiguous-fraction", type=float, default=0.5)
    p.add_argument("--burst-weight", type=float, default=0.5)
    p.add_argument("--port-offset", type=float, default=0.0)
    p.add_argument("--byte-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FsnidsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
