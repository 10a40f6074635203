"""Command-line entry point.

Verbs: ``gen-traces``, ``train``, ``eval``, ``compare`` and ``report``.  Data
goes to files under ``--output-dir``; progress goes to stderr.  Failures
print one JSON object on stderr and exit non-zero.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from collections import defaultdict
from pathlib import Path

from . import nn
from .config import ConfigError, RunConfig, load_config
from .harness import RL_ALGOS, EvalResult, TrainConfig, evaluate, train
from .qoe import QoEBreakdown
from .reports import FORMATS, TRACE_COLUMNS, emit_report, summary_grid
from .traces import LossModel, SyntheticTraceSpec, TraceError, generate_synthetic, load_trace_dir, write_trace_dir

log = logging.getLogger("abr_vtrace")

BASELINE_ALGOS = ("bb", "rb", "bola", "mpc")
ALGOS = tuple(RL_ALGOS) + BASELINE_ALGOS


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _csv_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _common(p: argparse.ArgumentParser, seed=True):
    p.add_argument("--config", type=Path, help="INI config file with [video] [train] [qoe] [traces] [baselines] [eval]")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config key; repeatable")
    p.add_argument("--output-dir", type=Path, default=Path("out"), help="directory for all output files")
    if seed:
        p.add_argument("--seed", type=int, help="seed for synthetic traces and training")


def _trace_flags(p: argparse.ArgumentParser, kinds):
    for kind in kinds:
        p.add_argument(f"--{kind}-dir", type=Path, help=f"directory of *.trace files for the {kind} set "
                       "(default: synthetic profile)")


def _train_flags(p: argparse.ArgumentParser):
    p.add_argument("--epochs", type=int, help="learner updates")
    p.add_argument("--actors", type=int, help="number of actors")
    p.add_argument("--sync-interval", type=int, help="episodes between an actor's parameter refreshes")
    p.add_argument("--threads", type=int, help="run actors on N threads (0 = deterministic lock-step)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="abr-vtrace", description="ABR streaming simulator with V-trace actor-learner training")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-traces", help="write synthetic bandwidth traces")
    _common(g)
    g.add_argument("--n", type=int, help="write a single set of N traces instead of the train/val/test profile")
    g.add_argument("--duration", type=float, help="trace length in seconds")
    g.add_argument("--mean-bandwidth", type=float, help="mean bandwidth in Mbps")
    g.add_argument("--volatility", type=float, help="relative standard deviation of bandwidth")

    t = sub.add_parser("train", help="train an RL policy and write checkpoints")
    _common(t)
    t.add_argument("--algo", choices=sorted(RL_ALGOS), default="alisa", help="alisa (V-trace) or a3c (vanilla)")
    t.add_argument("--qoe", help="QoE variant used as reward: linear, log or hd")
    t.add_argument("--loss", type=float, help="packet loss probability during training")
    _train_flags(t)
    _trace_flags(t, ("train", "val"))

    e = sub.add_parser("eval", help="evaluate one algorithm on the test traces")
    _common(e)
    e.add_argument("--algo", choices=ALGOS, required=True, help="algorithm to evaluate")
    e.add_argument("--checkpoint", type=Path, help="actor checkpoint (required for alisa/a3c)")
    e.add_argument("--qoe", help="QoE variant: linear, log or hd")
    e.add_argument("--loss", type=float, help="packet loss probability")
    _trace_flags(e, ("test",))

    c = sub.add_parser("compare", help="algorithms x (loss, QoE variant) summary grid")
    _common(c)
    c.add_argument("--algos", type=_csv_list, default=list(ALGOS), help="comma-separated algorithms")
    c.add_argument("--loss", type=_float_list, help="comma-separated loss probabilities")
    c.add_argument("--qoe", type=_csv_list, help="comma-separated QoE variants")
    c.add_argument("--checkpoint", action="append", default=[], metavar="ALGO=PATH",
                   help="use a trained checkpoint instead of training; repeatable")
    _train_flags(c)
    _trace_flags(c, ("train", "val", "test"))

    r = sub.add_parser("report", help="turn per-trace result CSVs into csv/cdf/components files")
    _common(r, seed=False)
    r.add_argument("inputs", nargs="+", type=Path, help="per-trace CSV files written by eval or compare")
    r.add_argument("--format", choices=FORMATS + ("all",), default="all", help="report to emit")
    return parser


def _configure(args) -> RunConfig:
    cfg = load_config(args.config, args.overrides)
    seed = getattr(args, "seed", None)
    if seed is not None:
        cfg.set("train", "seed", seed)
        cfg.set("traces", "seed", seed)
    for flag, key in (("epochs", "epochs"), ("actors", "actors"), ("sync_interval", "sync_interval"),
                      ("threads", "threads")):
        value = getattr(args, flag, None)
        if value is not None:
            cfg.set("train", key, value)
    if isinstance(getattr(args, "qoe", None), str):
        cfg.set("qoe", "variant", args.qoe)
    threads = int(cfg.get("train", "threads"))
    if threads > 0 and getattr(args, "actors", None) is None:
        cfg.set("train", "actors", threads)
    for kind in ("train", "val", "test"):
        d = getattr(args, f"{kind}_dir", None)
        if d is not None:
            cfg.set("traces", f"{kind}_dir", d)
    return cfg


def _trace_sets(cfg: RunConfig):
    synthetic = cfg.profile().trace_sets(int(cfg.get("traces", "seed")))
    out = []
    for kind, fallback in zip(("train", "val", "test"), synthetic):
        d = cfg.get("traces", f"{kind}_dir").strip()
        out.append(load_trace_dir(d) if d else fallback)
    return out


def _train_config(cfg: RunConfig, qoe_variant=None, loss=0.0, checkpoint_dir=None) -> TrainConfig:
    tr, va, _ = _trace_sets(cfg)
    return TrainConfig(cfg.hyperparams(), tr, va, cfg.qoe(qoe_variant), cfg.video(), LossModel(loss),
                       int(cfg.get("train", "seed")), int(cfg.get("train", "val_interval")),
                       checkpoint_dir, int(cfg.get("train", "threads")) > 0)


def cmd_gen_traces(args, cfg: RunConfig) -> None:
    prof = cfg.profile()
    duration = args.duration if args.duration is not None else prof.duration
    mean = args.mean_bandwidth if args.mean_bandwidth is not None else prof.mean_bandwidth
    vol = args.volatility if args.volatility is not None else prof.volatility
    seed = int(cfg.get("traces", "seed"))
    if args.n is not None:
        traces = generate_synthetic(SyntheticTraceSpec(args.n, duration, mean, vol, seed))
        paths = write_trace_dir(traces, args.output_dir)
        log.info("wrote %d traces to %s", len(paths), args.output_dir)
        return
    prof = dataclasses.replace(prof, duration=duration, mean_bandwidth=mean, volatility=vol)
    for kind, traces in zip(("train", "val", "test"), prof.trace_sets(seed)):
        write_trace_dir(traces, args.output_dir / kind)
        log.info("wrote %d %s traces to %s", len(traces), kind, args.output_dir / kind)


def cmd_train(args, cfg: RunConfig) -> None:
    loss = args.loss if args.loss is not None else 0.0
    tcfg = _train_config(cfg, loss=loss, checkpoint_dir=args.output_dir)
    report = train(tcfg, RL_ALGOS[args.algo])
    log.info("%s: best validation QoE %.3f at epoch %d", args.algo, report.best_val_qoe, report.best_epoch)


def _policy_for(algo: str, checkpoint, cfg: RunConfig):
    if algo in BASELINE_ALGOS:
        return algo
    if checkpoint is None:
        raise UsageError(f"--checkpoint is required to evaluate {algo}")
    nets, _ = nn.load_checkpoint(checkpoint)
    if "actor" not in nets:
        raise ValueError(f"{checkpoint}: checkpoint has no actor network")
    return nets["actor"]


def _evaluate(algo, policy, traces, cfg: RunConfig, variant, loss) -> EvalResult:
    res = evaluate(policy, traces, cfg.qoe(variant), LossModel(loss), cfg.video(), cfg.baselines())
    res.algorithm = algo
    return res


def cmd_eval(args, cfg: RunConfig) -> None:
    _, _, test = _trace_sets(cfg)
    loss = args.loss if args.loss is not None else cfg.losses()[0]
    res = _evaluate(args.algo, _policy_for(args.algo, args.checkpoint, cfg), test, cfg, None, loss)
    path = emit_report([res], "csv", args.output_dir / f"eval_{args.algo}.csv")
    log.info("%s: mean QoE %.3f, median %.3f over %d traces -> %s", args.algo, res.mean, res.median,
             len(res.totals), path)


def cmd_compare(args, cfg: RunConfig) -> None:
    unknown = [a for a in args.algos if a not in ALGOS]
    if unknown or not args.algos:
        raise UsageError(f"unknown algorithms {unknown}; choose from {list(ALGOS)}")
    losses = args.loss if args.loss else list(cfg.losses())
    variants = args.qoe if args.qoe else list(cfg.qoe_variants())
    for v in variants:
        cfg.qoe(v)
    given = {}
    for item in args.checkpoint:
        algo, sep, path = item.partition("=")
        if not sep or algo not in RL_ALGOS:
            raise UsageError(f"--checkpoint expects ALGO=PATH with ALGO in {sorted(RL_ALGOS)}, got {item!r}")
        given[algo] = Path(path)
    _, _, test = _trace_sets(cfg)
    out = args.output_dir
    cells, results = {}, defaultdict(list)
    for variant in variants:
        for algo in args.algos:
            if algo in RL_ALGOS and algo not in given:
                # One model per reward definition, trained without loss.
                ckpt_dir = out / "models" / f"{algo}_{variant}"
                log.info("training %s on the %s reward", algo, variant)
                report = train(_train_config(cfg, variant, checkpoint_dir=ckpt_dir), RL_ALGOS[algo])
                policy = report.best_theta
            else:
                policy = _policy_for(algo, given.get(algo), cfg)
            for loss in losses:
                res = _evaluate(algo, policy, test, cfg, variant, loss)
                cells[(algo, variant, loss)] = res.mean
                results[(variant, loss)].append(res)
                log.info("%s %s loss=%g: mean QoE %.3f", algo, variant, loss, res.mean)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.csv").write_text(summary_grid(cells, args.algos, losses, variants), encoding="utf-8")
    for variant in variants:
        (out / f"summary_{variant}.csv").write_text(summary_grid(cells, args.algos, losses, [variant]),
                                                     encoding="utf-8")
    for (variant, loss), res in results.items():
        emit_report(res, "csv", out / f"traces_{variant}_loss{loss:g}.csv")


def _read_results(paths) -> list[EvalResult]:
    grouped: dict[str, EvalResult] = {}
    for path in paths:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or set(TRACE_COLUMNS) - set(reader.fieldnames):
                raise ValueError(f"{path}: not a per-trace result file (need columns {TRACE_COLUMNS})")
            for row in reader:
                res = grouped.setdefault(row["algorithm"], EvalResult(row["algorithm"], [], []))
                res.trace_ids.append(row["trace_id"])
                res.breakdowns.append(QoEBreakdown(float(row["total"]), float(row["quality_sum"]),
                                                   float(row["rebuffer_penalty_sum"]),
                                                   float(row["smoothness_penalty_sum"])))
    return list(grouped.values())


def cmd_report(args, cfg: RunConfig) -> None:
    results = _read_results(args.inputs)
    formats = FORMATS if args.format == "all" else (args.format,)
    for fmt in formats:
        path = emit_report(results, fmt, args.output_dir / f"report_{fmt}.csv")
        log.info("wrote %s", path)


COMMANDS = {
    "gen-traces": cmd_gen_traces,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "report": cmd_report,
}


def _setup_logging() -> None:
    level = os.environ.get("ABR_VTRACE_LOG", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        cfg = _configure(args)
        COMMANDS[args.verb](args, cfg)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    except ConfigError as exc:
        return _fail("config", str(exc), 3)
    except (OSError, TraceError) as exc:
        return _fail("io", str(exc), 4)
    except (ValueError, FloatingPointError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
