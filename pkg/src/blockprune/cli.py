"""Command-line entry point.

Subcommands: pretrain, prune, recover, iterate, eval, compare. Each reads a
JSON config, applies flag overrides, writes a resolved-config snapshot plus
its outputs (ITRB checkpoints, JSONL run log, text + JSON reports) to the
output directory, and exits 0 on success. Errors print one line to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import Corpus, VOCAB_SIZE
from .evaluate import evaluate_model, make_probes
from .model import ModelConfig, init_model
from .pipeline import StopCriterion, compare, direct_prune, iterate
from .pruning import CalibrationSet, prune_one
from .recovery import RecoveryConfig, recover
from .training import PretrainConfig, pretrain

DEFAULT_CONFIG = {
    "model": {"n_layers": 8, "d_model": 64, "n_heads": 4,
              "vocab_size": VOCAB_SIZE, "max_seq_len": 128, "seed": 0},
    "pretrain": {"token_budget": 2_000_000, "batch_size": 16, "seq_len": 128,
                 "lr": 1e-3, "seed": 0},
    "pruning": {"calibration_size": 10, "calib_seq_len": 64, "seed": 0},
    "recovery": {"token_budget": 100_000, "batch_size": 8, "grad_accum": 1,
                 "lr": 1e-3, "max_seq_len": 128, "adapter_rank": 8, "seed": 0},
    "stop": {"target_layers": 6, "max_iterations": None},
    "eval": {"context_len": 128, "probe_items": 20, "probe_context_len": 32,
             "probe_continuation_len": 8, "probe_seed": 0},
    "corpus": {"path": "data/corpus.txt", "val_fraction": 0.1},
    "out_dir": "runs/default",
    "seed": 0,
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, prefix="") -> dict:
    out = dict(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key: {prefix}{key}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, prefix=f"{prefix}{key}.")
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return json.loads(json.dumps(DEFAULT_CONFIG))
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config parse error in {path} at line {e.lineno}: {e.msg}")
    return _merge(DEFAULT_CONFIG, raw)


def apply_flags(cfg: dict, args) -> dict:
    if getattr(args, "out", None):
        cfg["out_dir"] = args.out
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
        for section in ("model", "pretrain", "pruning", "recovery"):
            cfg[section]["seed"] = args.seed
    if getattr(args, "target_layers", None) is not None:
        cfg["stop"]["target_layers"] = args.target_layers
    return cfg


def _prepare(cfg: dict):
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
    corpus = Corpus.from_file(cfg["corpus"]["path"],
                              val_fraction=cfg["corpus"]["val_fraction"],
                              split_seed=cfg["seed"])
    return out_dir, corpus


def _calibration(cfg: dict, corpus: Corpus) -> CalibrationSet:
    p = cfg["pruning"]
    return CalibrationSet(
        sequences=corpus.sample_calibration(p["calibration_size"], p["calib_seq_len"],
                                            seed=p["seed"]),
        source=corpus.source, sample_seed=p["seed"])


def _metrics_fn(cfg: dict, corpus: Corpus):
    e = cfg["eval"]
    probes = make_probes(corpus.validation, n_items=e["probe_items"],
                         context_len=e["probe_context_len"],
                         continuation_len=e["probe_continuation_len"],
                         seed=e["probe_seed"])

    def fn(model):
        return evaluate_model(model, corpus.validation, probes,
                              context_len=e["context_len"])
    return fn


def cmd_pretrain(cfg, args):
    out_dir, corpus = _prepare(cfg)
    model = init_model(ModelConfig.from_dict(cfg["model"]))
    trained, log = pretrain(model, corpus.train, PretrainConfig(**cfg["pretrain"]))
    save_checkpoint(trained, out_dir / "teacher.itrb")
    (out_dir / "pretrain_log.json").write_text(json.dumps(log))
    print(f"wrote {out_dir / 'teacher.itrb'}"
          + (f" (final loss {log[-1]['loss']:.4f})" if log else ""))
    return 0


def cmd_prune(cfg, args):
    out_dir, corpus = _prepare(cfg)
    model = load_checkpoint(args.model)
    pruned, report = prune_one(model, _calibration(cfg, corpus))
    save_checkpoint(pruned, out_dir / "pruned.itrb")
    (out_dir / "importance_report.json").write_text(json.dumps(report.to_dict()))
    print(f"dropped block {report.chosen} (origin {model.origin_indices[report.chosen]}); "
          f"wrote {out_dir / 'pruned.itrb'}")
    return 0


def cmd_recover(cfg, args):
    out_dir, corpus = _prepare(cfg)
    teacher = load_checkpoint(args.teacher)
    student = load_checkpoint(args.model)
    recovered, log = recover(teacher, student, corpus.train,
                             RecoveryConfig(**cfg["recovery"]))
    save_checkpoint(recovered, out_dir / "recovered.itrb")
    (out_dir / "recovery_log.json").write_text(json.dumps(log))
    print(f"wrote {out_dir / 'recovered.itrb'}"
          + (f" (loss {log[0]['total']:.5f} -> {log[-1]['total']:.5f})" if log else ""))
    return 0


def cmd_iterate(cfg, args):
    out_dir, corpus = _prepare(cfg)
    model = load_checkpoint(args.model)
    stop = StopCriterion(**cfg["stop"])
    final, logs = iterate(model, _calibration(cfg, corpus), corpus.train,
                          RecoveryConfig(**cfg["recovery"]), stop,
                          metrics_fn=_metrics_fn(cfg, corpus), out_dir=out_dir,
                          recovery_enabled=not args.no_recovery, seed=cfg["seed"])
    save_checkpoint(final, out_dir / "final.itrb")
    dropped = [e.dropped_origin_index for e in logs if e.phase == "prune"]
    print(f"{model.n_layers} -> {final.n_layers} layers; dropped origin indices {dropped}; "
          f"wrote {out_dir / 'final.itrb'}")
    return 0


def cmd_eval(cfg, args):
    out_dir, corpus = _prepare(cfg)
    model = load_checkpoint(args.model)
    suite = _metrics_fn(cfg, corpus)(model)
    report = json.dumps(suite.to_dict(), indent=2, sort_keys=True)
    (out_dir / "eval_report.json").write_text(report)
    print(report)
    return 0


def cmd_compare(cfg, args):
    out_dir, corpus = _prepare(cfg)
    teacher = load_checkpoint(args.model)
    calib = _calibration(cfg, corpus)
    rcfg = RecoveryConfig(**cfg["recovery"])
    stop = StopCriterion(**cfg["stop"])
    if stop.target_layers is None:
        raise ConfigError("compare requires stop.target_layers")
    metrics_fn = _metrics_fn(cfg, corpus)
    n_drops = teacher.n_layers - stop.target_layers

    iterative, _ = iterate(teacher, calib, corpus.train, rcfg, stop,
                           out_dir=out_dir / "iterative", seed=cfg["seed"])
    direct, _ = direct_prune(teacher, calib, n_drops)
    direct, _ = recover(teacher, direct, corpus.train, rcfg)
    save_checkpoint(direct, out_dir / "direct_recovered.itrb")

    report = compare(metrics_fn(direct), metrics_fn(iterative))
    (out_dir / "comparison.json").write_text(json.dumps(report.to_dict(), indent=2))
    (out_dir / "comparison.txt").write_text(report.render() + "\n")
    print(report.render())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blockprune")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {"pretrain": cmd_pretrain, "prune": cmd_prune, "recover": cmd_recover,
                "iterate": cmd_iterate, "eval": cmd_eval, "compare": cmd_compare}
    for name, fn in commands.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--model", default=None)
        p.add_argument("--teacher", default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--target-layers", type=int, dest="target_layers", default=None)
        p.add_argument("--no-recovery", action="store_true", dest="no_recovery")
        p.add_argument("--seed", type=int, default=None)
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = apply_flags(load_config(args.config), args)
        needs_model = args.fn in (cmd_prune, cmd_recover, cmd_iterate, cmd_eval, cmd_compare)
        if needs_model and not args.model:
            raise ConfigError(f"{args.command} requires --model")
        if args.fn is cmd_recover and not args.teacher:
            raise ConfigError("recover requires --teacher")
        return args.fn(cfg, args)
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
