"""Command-line entry point: train / eval / sweep / parse / reward / plot.

Configuration is a JSON object of dotted keys (for example ``reward.alpha``)
matching the training config schema; ``--set key=value`` overrides individual
keys and the ``SCMA_SEED`` environment variable overrides the master seed.
Every run prints a one-line JSON summary to standard output.
"""

import argparse
import dataclasses
import json
import os
import re
import sys

from .grpo import GrpoConfig
from .policy import load_checkpoint
from .reward import GroupEntry, RewardConfig, group_rewards
from .telemetry import export_plots
from .trainer import TrainConfig, evaluate, sweep_alpha, train
from .transcript import (
    CountMismatch,
    FormatFlags,
    ScoreOutOfRange,
    ScoredSegmentation,
    TagParseError,
    Transcript,
    check_lossless,
    format_flags,
    has_answer_envelope,
    parse_tagged,
)


class ConfigError(ValueError):
    """Bad config file, unknown key, or ill-typed override."""


class IoError(OSError):
    """Missing or unreadable input artifact."""


def _schema() -> dict[str, tuple[type, object]]:
    """Dotted config keys with their value types and defaults."""
    base = TrainConfig()
    out = {}
    for f in dataclasses.fields(TrainConfig):
        if f.name in ("grpo", "reward", "out_dir"):
            continue
        out[f.name] = (f.type if isinstance(f.type, type) else type(getattr(base, f.name)), getattr(base, f.name))
    for prefix, sub in (("grpo", base.grpo), ("reward", base.reward)):
        for f in dataclasses.fields(sub):
            out[f"{prefix}.{f.name}"] = (type(getattr(sub, f.name)), getattr(sub, f.name))
    return out


SCHEMA = _schema()


def _coerce(key: str, raw) -> object:
    typ, _ = SCHEMA[key]
    if isinstance(raw, str):
        try:
            if typ is bool:
                if raw.lower() in ("true", "1"):
                    return True
                if raw.lower() in ("false", "0"):
                    return False
                raise ValueError(raw)
            return typ(raw)
        except ValueError:
            raise ConfigError(f"value {raw!r} for key {key!r} is not a valid {typ.__name__}")
    if typ is float and isinstance(raw, int) and not isinstance(raw, bool):
        return float(raw)
    if not isinstance(raw, typ) or (typ is int and isinstance(raw, bool)):
        raise ConfigError(f"value {raw!r} for key {key!r} is not a valid {typ.__name__}")
    return raw


def _flatten(obj: dict, prefix: str = "") -> dict[str, object]:
    flat = {}
    for k, v in obj.items():
        name = f"{prefix}{k}"
        if isinstance(v, dict):
            flat.update(_flatten(v, f"{name}."))
        else:
            flat[name] = v
    return flat


def build_config(config_path: str | None, overrides: list[str], out_dir: str | None = None) -> TrainConfig:
    """Resolve defaults, config file, --set overrides, and SCMA_SEED in order."""
    values = {k: default for k, (_, default) in SCHEMA.items()}

    def apply(key, raw):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw)

    if config_path is not None:
        try:
            with open(config_path) as fh:
                loaded = json.load(fh)
        except OSError as e:
            raise IoError(str(e))
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}")
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, raw in _flatten(loaded).items():
            apply(key, raw)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        apply(key, raw)
    if "SCMA_SEED" in os.environ:
        apply("seed", os.environ["SCMA_SEED"])

    grpo_kw = {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("grpo.")}
    reward_kw = {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("reward.")}
    plain = {k: v for k, v in values.items() if "." not in k}
    try:
        return TrainConfig(
            grpo=GrpoConfig(**grpo_kw),
            reward=RewardConfig(**reward_kw),
            out_dir=out_dir,
            **plain,
        )
    except ValueError as e:
        raise ConfigError(str(e))


def _emit(summary: dict) -> None:
    print(json.dumps(summary))


def _cmd_train(args) -> int:
    cfg = build_config(args.config, args.set, out_dir=args.out)
    result = train(cfg)
    last = result.metrics[-1]
    _emit(
        {
            "command": "train",
            "steps": cfg.steps,
            "final_accuracy": last.accuracy,
            "final_mean_len": last.mean_len,
            "metrics_csv": result.metrics_path,
            "checkpoint": result.checkpoint_path,
        }
    )
    return 0


def _cmd_eval(args) -> int:
    cfg = build_config(args.config, args.set)
    try:
        params = load_checkpoint(args.checkpoint)
    except OSError as e:
        raise IoError(str(e))
    report = evaluate(params, args.n, cfg.seed, cfg.k_min, cfg.k_max)
    _emit(
        {
            "command": "eval",
            "n": args.n,
            "accuracy": report.accuracy,
            "mean_length": report.mean_length,
            "collapse": report.collapse,
        }
    )
    return 0


def _cmd_sweep(args) -> int:
    cfg = build_config(args.config, args.set)
    alphas = [float(a) for a in args.alphas.split(",") if a]
    seeds = [int(s) for s in args.seeds.split(",") if s]
    if len(alphas) < 2 or not seeds:
        raise ConfigError("sweep needs at least two alphas and one seed")
    correlations, lengths, accuracies = [], [], []
    for seed in seeds:
        run_cfg = dataclasses.replace(cfg, seed=seed)
        report = sweep_alpha(run_cfg, alphas)
        correlations.append(report.rank_correlation)
        lengths.append([r.mean_length for r in report.reports])
        accuracies.append([r.accuracy for r in report.reports])
    _emit(
        {
            "command": "sweep",
            "alphas": alphas,
            "seeds": seeds,
            "rank_correlations": correlations,
            "mean_lengths": lengths,
            "accuracies": accuracies,
        }
    )
    return 0


def _cmd_parse(args) -> int:
    text = sys.stdin.read()
    try:
        seg, t = parse_tagged(text)
    except TagParseError as e:
        _emit({"chunks": [], "scores": [], "lossless": 0, "errors": [f"{type(e).__name__}: {e}"]})
        return 0
    _emit(
        {
            "chunks": list(seg.chunk_texts(t)),
            "scores": list(seg.scores),
            "lossless": check_lossless(seg, t),
            "errors": [],
        }
    )
    return 0


_SEG_ONLY_RE = re.compile(r"<seg[0-9]*>(.*?)</seg[0-9]*>", re.S)


def _entry_from_record(record: dict) -> GroupEntry:
    """Build a reward input from a {text, tagged, correct} record.

    Non-lossless or unparseable segmentations keep seg flag 0 (the reward side
    then charges the 4*|y| worst case); malformed scores fall back to all 1s
    with score flag 0.
    """
    tokens = tuple(str(record["text"]).split())
    t = Transcript(tokens)
    correct = int(bool(record["correct"]))
    tagged = str(record.get("tagged", ""))
    seg = None
    score_fallback = False
    try:
        seg, _ = parse_tagged(tagged)
    except (ScoreOutOfRange, CountMismatch):
        # Segment structure may still be usable; retry without the scores.
        chunks = [c.split() for c in _SEG_ONLY_RE.findall(tagged)]
        if chunks and all(chunks):
            spans, pos = [], 0
            for c in chunks:
                spans.append((pos, pos + len(c)))
                pos += len(c)
            seg = ScoredSegmentation(tuple(spans), (1,) * len(chunks))
            score_fallback = True
    except TagParseError:
        seg = None
    if seg is None:
        return GroupEntry(correct, len(tokens), (), (), FormatFlags(int(has_answer_envelope(tokens)), 0, 0))
    flags = format_flags(t, seg)
    if score_fallback:
        flags = FormatFlags(flags.reason_ok, flags.seg_ok, 0)
    return GroupEntry(correct, len(tokens), seg.chunk_lengths(), seg.scores, flags)


def _cmd_reward(args) -> int:
    cfg = build_config(args.config, args.set)
    try:
        with open(args.group) as fh:
            records = [json.loads(line) for line in fh if line.strip()]
    except OSError as e:
        raise IoError(str(e))
    entries = [_entry_from_record(r) for r in records]
    breakdowns = group_rewards(entries, cfg.reward)
    rows = [
        {
            "r_acc": bd.r_acc,
            "weighted_length": bd.weighted_length,
            "normalizer": bd.normalizer,
            "penalty_term": bd.penalty_term,
            "total_shared": bd.total_shared,
            "fmt": list(bd.fmt.as_tuple()),
            "per_role_total": list(bd.per_role_total),
        }
        for bd in breakdowns
    ]
    _emit({"command": "reward", "baseline_mode": cfg.reward.baseline_mode, "records": rows})
    return 0


def _cmd_plot(args) -> int:
    try:
        paths = export_plots(args.metrics, args.out)
    except OSError as e:
        raise IoError(str(e))
    _emit({"command": "plot", "plots": paths})
    return 0


def _config_help() -> str:
    lines = ["config keys (JSON file or --set key=value):"]
    for key, (typ, default) in SCHEMA.items():
        lines.append(f"  {key} ({typ.__name__}, default {default!r})")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scma",
        description="Multi-agent GRPO trainer with importance-weighted length penalties.",
        epilog=_config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file of dotted keys")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
        p.add_argument(
            "--workers",
            type=int,
            default=os.cpu_count() or 1,
            help="worker bound (runs are executed serially)",
        )

    p = sub.add_parser("train", help="run a training loop and write artifacts", epilog=_config_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p)
    p.add_argument("--out", default="runs/train", help="output directory for metrics/checkpoint")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=200, help="number of evaluation questions")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="train across alphas and rank-correlate with length")
    common(p)
    p.add_argument("--alphas", default="0.05,0.1,0.2,0.4", help="comma-separated penalty strengths")
    p.add_argument("--seeds", default="1", help="comma-separated master seeds")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("parse", help="parse tagged text from stdin into chunks/scores JSON")
    p.set_defaults(func=_cmd_parse)

    p = sub.add_parser("reward", help="score a JSONL group of {text, tagged, correct} records")
    common(p)
    p.add_argument("--group", required=True, help="JSONL file, one record per trajectory")
    p.set_defaults(func=_cmd_reward)

    p = sub.add_parser("plot", help="render SVG plots from a metrics CSV")
    p.add_argument("--metrics", required=True, help="metrics CSV written by train")
    p.add_argument("--out", default="runs/plots", help="directory for SVG output")
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, IoError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
