"""Command-line entry point.

Commands: gen-data, compute-gci, train, eval, ablate, sweep, explain.
Every config-driven command echoes its fully resolved configuration into
the output directory so a run is reproducible from the echo plus seed.

Exit codes: 0 success, 2 config/parse error, 3 I/O error, 4 training did
not converge.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import datagen
from .errors import ConfigError, EncodingError, NotConvergedError, ParseError
from .experiments import (EvalConfig, ExperimentData, mean_by_variant,
                          run_ablation_suite, sweep_lambda, train_and_evaluate)
from .features import FIELD_ORDER
from .labels import GciMap, compute_gci, label_dataset
from .model import ModelConfig, load_checkpoint, predict, save_checkpoint
from .runconfig import RunConfig, echo_config, load_run_config
from .training import append_ledger, offline_metrics, predict_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NOT_CONVERGED = 4


def _model_config(rc: RunConfig, fields) -> ModelConfig:
    m = rc.model
    return ModelConfig(
        fields=fields, embedding_dim=m.embedding_dim, n_experts=m.n_experts,
        expert_hidden=tuple(m.expert_hidden), tower_hidden=tuple(m.tower_hidden),
        ssn_compress=m.ssn_compress, ssn_hidden=tuple(m.ssn_hidden),
    )


def _prepare_out(rc: RunConfig, out_flag: str | None) -> Path:
    paths = rc.paths.resolved(out_flag)
    rc.paths = paths
    out = Path(paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    echo_config(rc, out / "config_resolved.ini")
    return out


def _require(path: str, hint: str) -> str:
    if not Path(path).exists():
        raise FileNotFoundError(f"{path} not found; {hint}")
    return path


def _load_experiment_data(rc: RunConfig, need_truth: bool) -> ExperimentData:
    paths = rc.paths
    train_records, n_domains = datagen.read_log(
        _require(paths.train_log, "run `exitkit gen-data` first"))
    test_records, _ = datagen.read_log(
        _require(paths.test_log, "run `exitkit gen-data` first"))
    if Path(paths.gci_map).exists():
        gci = GciMap.load(paths.gci_map)
    else:
        gci = compute_gci(train_records)
        gci.save(paths.gci_map)
    truth = None
    if Path(paths.ground_truth).exists():
        truth = datagen.GroundTruth.load(paths.ground_truth)
    elif need_truth:
        raise FileNotFoundError(
            f"{paths.ground_truth} not found; exposure proxies need the synthetic ground truth")
    fields = rc.world.fields()
    vocab_needed = max((max(r.user_id for r in train_records) + 1,), default=0)
    if vocab_needed > rc.world.n_users:
        raise ConfigError("log contains user ids outside the configured world; check [world] section")
    return ExperimentData(train_records, test_records, gci, fields, truth)


def _apply_train_overrides(rc: RunConfig, args) -> None:
    overrides = {}
    for name in ("seed", "epochs", "variant"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    for k, flag in (("lambda1", "lambda1"), ("lambda2", "lambda2"), ("lambda3", "lambda3")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[k] = value
    if overrides:
        rc.train = replace(rc.train, **overrides)
        rc.train.validate()


def cmd_gen_data(args) -> int:
    rc = load_run_config(args.config)
    if args.seed is not None:
        rc.world = replace(rc.world, seed=args.seed)
    out = _prepare_out(rc, args.out)
    records, truth = datagen.generate(rc.world)
    train, test = datagen.split(records, rc.train_fraction, seed=rc.world.seed)
    datagen.write_log(rc.paths.train_log, train, rc.world.n_source_domains)
    datagen.write_log(rc.paths.test_log, test, rc.world.n_source_domains)
    truth.save(rc.paths.ground_truth)

    print(f"wrote {rc.paths.train_log}, {rc.paths.test_log}, {rc.paths.ground_truth}")
    header = ["split", "samples", "users", "items", "purchases_target"]
    header += [f"purchases_source_{j + 1}" for j in range(rc.world.n_source_domains)]
    print("\t".join(header))
    for name, part in (("train", train), ("test", test)):
        stats = datagen.log_stats(part, rc.world.n_source_domains)
        print("\t".join([name] + [str(stats[h]) for h in header[1:]]))
    return EXIT_OK


def cmd_compute_gci(args) -> int:
    records, _ = datagen.read_log(_require(args.log, "point --log at an interaction log"))
    gci = compute_gci(records)
    gci.save(args.out)
    print(f"wrote {args.out} ({len(gci.eta)} items, default {gci.default_value})")
    return EXIT_OK


def cmd_train(args) -> int:
    rc = load_run_config(args.config)
    _apply_train_overrides(rc, args)
    out = _prepare_out(rc, args.out)
    data = _load_experiment_data(rc, need_truth=False)
    mc = _model_config(rc, data.fields)
    eval_config = rc.eval if data.truth is not None else None

    report, params, mc_variant = train_and_evaluate(rc.train.variant, data, rc.train, mc, eval_config)
    save_checkpoint(rc.paths.checkpoint, mc_variant, params)

    (out / "metrics.txt").write_text(report.to_text(), encoding="utf-8")
    append_ledger(out / "results.jsonl", report.to_row())
    print(report.to_text(), end="")
    print(f"checkpoint: {rc.paths.checkpoint}")
    if not report.converged:
        print("training not converged: joint loss failed to improve for 3 consecutive epochs",
              file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_eval(args) -> int:
    mc, params = load_checkpoint(_require(args.checkpoint, "train a model first"))
    records, _ = datagen.read_log(_require(args.log, "point --log at a log file"))
    gci = GciMap.load(args.gci) if args.gci else GciMap()
    examples = label_dataset(records, gci, mc.fields)
    pred = predict_dataset(examples, params, mc)
    y_t = np.array([ex.y_t for ex in examples], dtype=np.float64)
    auc_value, logloss_value = offline_metrics(pred, y_t)
    print(f"auc: {auc_value:.6f}")
    print(f"logloss: {logloss_value:.6f}")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        append_ledger(Path(args.out) / "results.jsonl",
                      {"auc": auc_value, "logloss": logloss_value, "log": str(args.log)})
    return EXIT_OK


def cmd_ablate(args) -> int:
    rc = load_run_config(args.config)
    if args.variants:
        variants = tuple(v.strip() for v in args.variants.split(",") if v.strip())
        rc.ablate = replace(rc.ablate, variants=variants)
    if args.seeds:
        rc.ablate = replace(rc.ablate, seeds=tuple(int(s) for s in args.seeds.split(",")))
    out = _prepare_out(rc, args.out)
    data = _load_experiment_data(rc, need_truth=False)
    mc = _model_config(rc, data.fields)
    eval_config = rc.eval if data.truth is not None else None

    reports = run_ablation_suite(list(rc.ablate.variants), data, rc.train, mc,
                                 list(rc.ablate.seeds), eval_config)
    auc_mean = mean_by_variant(reports, "auc")
    logloss_mean = mean_by_variant(reports, "logloss")
    ctcvr_mean = mean_by_variant(reports, "ctcvr_proxy")
    nfr_mean = mean_by_variant(reports, "nfr_proxy")
    converged = {v: all(r.converged for r in reports if r.variant == v)
                 for v in rc.ablate.variants}

    lines = ["variant\tauc\tlogloss\tctcvr_proxy\tnfr_proxy\tconverged\tnote"]
    for v in rc.ablate.variants:
        note = "baseline" if v == "full" else ""
        ctcvr = f"{ctcvr_mean[v]:.6f}" if v in ctcvr_mean else "-"
        nfr = f"{nfr_mean[v]:.6f}" if v in nfr_mean else "-"
        lines.append(f"{v}\t{auc_mean[v]:.6f}\t{logloss_mean[v]:.6f}\t{ctcvr}\t{nfr}"
                     f"\t{str(converged[v]).lower()}\t{note}")
    table = "\n".join(lines) + "\n"
    (out / "ablation.tsv").write_text(table, encoding="utf-8")
    print(table, end="")
    for r in reports:
        append_ledger(out / "results.jsonl", r.to_row())
    return EXIT_OK


def cmd_sweep(args) -> int:
    rc = load_run_config(args.config)
    out = _prepare_out(rc, args.out)
    data = _load_experiment_data(rc, need_truth=False)
    mc = _model_config(rc, data.fields)
    rows = sweep_lambda(rc.sweep.grid(), data, rc.train, mc)
    lines = ["lambda1\tlambda2\tlambda3\tauc\tlogloss\tconverged\tdegenerate"]
    for row in rows:
        lines.append(f"{row['lambda1']}\t{row['lambda2']}\t{row['lambda3']}"
                     f"\t{row['auc']:.6f}\t{row['logloss']:.6f}"
                     f"\t{str(row['converged']).lower()}\t{str(row['degenerate']).lower()}")
    table = "\n".join(lines) + "\n"
    (out / "sweep.tsv").write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


def _read_candidates(path, mc: ModelConfig) -> dict[str, np.ndarray]:
    expected = list(("user_id", "item_id") + tuple(f for f in FIELD_ORDER
                                                   if f not in ("user_id", "item_id")))
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip().split(",")
        if header != expected:
            raise ParseError(f"{path}:1: candidate header must be {','.join(expected)}")
        rows = []
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(expected):
                raise ParseError(f"{path}:{lineno}: expected {len(expected)} columns, got {len(parts)}")
            try:
                rows.append([int(p) for p in parts])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: non-integer feature id in {line!r}") from exc
    if not rows:
        raise ParseError(f"{path}: no candidate rows")
    arr = np.asarray(rows, dtype=np.int64)
    ids = {name: arr[:, k] for k, name in enumerate(expected)}
    vocab = {f.name: f.vocab for f in mc.fields}
    for name, col in ids.items():
        if col.min() < 0 or col.max() >= vocab[name]:
            raise EncodingError(f"candidate feature {name} outside vocab [0, {vocab[name]})")
    return ids


def cmd_explain(args) -> int:
    mc, params = load_checkpoint(_require(args.checkpoint, "train a model first"))
    ids = _read_candidates(_require(args.candidates, "provide a candidate csv"), mc)
    pred = predict(ids, params, mc)
    order = np.argsort(-pred.p_whole_clamped, kind="stable")
    ranks = np.empty_like(order)
    ranks[order] = np.arange(order.size)
    print("item_id\tp_target\tp_source\tp_trans\tp_whole\tp_whole_clamped\texposed")
    for k in range(pred.p_target.size):
        exposed = "Y" if ranks[k] < args.top_k else "N"
        print(f"{ids['item_id'][k]}\t{pred.p_target[k]:.3f}\t{pred.p_source[k]:.3f}"
              f"\t{pred.p_trans[k]:.3f}\t{pred.p_whole[k]:.3f}"
              f"\t{pred.p_whole_clamped[k]:.3f}\t{exposed}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exitkit",
        description="explicit cross-domain interest transfer: data, labels, training, ablations")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic logs and ground truth")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("compute-gci", help="batch-compute group consistency interest")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compute_gci)

    p = sub.add_parser("train", help="train a model and write checkpoint + metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--variant", default=None)
    p.add_argument("--lambda1", type=float, default=None)
    p.add_argument("--lambda2", type=float, default=None)
    p.add_argument("--lambda3", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint against a log")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--log", required=True)
    p.add_argument("--gci", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the ablation suite")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--variants", default=None)
    p.add_argument("--seeds", default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="loss-weight sensitivity sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("explain", help="per-candidate score decomposition")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--top-k", type=int, default=3, dest="top_k")
    p.set_defaults(func=cmd_explain)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, EncodingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NotConvergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
