"""Command-line entry point: analyze, generate, simulate, compare.

Every artifact is staged in memory and only written (temp file + rename)
once the whole command has succeeded, so a failure leaves nothing behind.
Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
import tempfile
from dataclasses import fields
from pathlib import Path

from . import metrics
from .engine import SimConfig, WorkloadSpec, run, run_sweep
from .groups import GroupConfig
from .routing import ProtocolConfig
from .trace import (AccordionParams, TraceError, compute_trace_stats, generate_accordion_trace,
                    parse_contact_trace, serialize_trace)

log = logging.getLogger("hymad")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class Artifacts:
    """Files to publish under one directory, committed in a single go."""

    def __init__(self, root):
        self.root = Path(root)
        self.files: dict[str, str] = {}

    def add(self, rel: str, text: str):
        self.files[rel] = text

    def add_json(self, rel: str, obj):
        self.add(rel, json.dumps(obj, sort_keys=True, indent=1) + "\n")

    def commit(self) -> list[Path]:
        written = []
        for rel in sorted(self.files):
            dest = self.root / rel
            dest.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=dest.parent, prefix=".tmp-")
            try:
                with os.fdopen(fd, "w", newline="") as fh:
                    fh.write(self.files[rel])
                os.replace(tmp, dest)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
            written.append(dest)
        return written


# --------------------------------------------------------------------------
# argument parsing


def _simulation_flags(p: argparse.ArgumentParser, protocol: bool = True):
    p.add_argument("--trace", required=True, metavar="PATH", help="contact trace CSV")
    if protocol:
        p.add_argument("--protocol", default="hymad", choices=["hymad", "spray_wait", "epidemic"],
                       help="routing protocol")
    p.add_argument("--copies", type=int, default=10, metavar="N", help="copy budget L")
    p.add_argument("--dmax", type=int, default=2, metavar="N", help="group diameter bound")
    p.add_argument("--split-policy", default="fair", choices=["fair", "paper-literal"],
                   help="share of copies sprayed to an adjacent group")
    p.add_argument("--pairs-per-step", type=int, default=60, metavar="N",
                   help="node pairs drawn at every sampling step")
    p.add_argument("--window", type=int, default=2000, metavar="SECS",
                   help="messages are created during [0, SECS)")
    p.add_argument("--runs", type=int, default=10, metavar="N")
    p.add_argument("--seed", type=int, default=0, metavar="N", help="master seed")
    p.add_argument("--period", type=int, default=15, metavar="SECS", help="sampling period")
    p.add_argument("--out", default="out", metavar="DIR", help="artifact directory")
    p.add_argument("--dump-groups", action="store_true", help="write per-step group views (HYMAD)")
    p.add_argument("--event-log", action="store_true", help="write transfer/delivery CSV per run")
    p.add_argument("--jobs", type=int, default=1, metavar="N", help="worker processes")
    p.add_argument("--config", metavar="INI", help="key = value file under [hymad]; flags win")


ACCORDION_HELP = {
    "node_count": "number of nodes",
    "social_group_size": "nodes per social group (assigned round-robin)",
    "phase_length": "steps per contracted/expanded phase",
    "n_steps": "number of sampling steps",
    "p_intra": "per-step link probability inside a social group",
    "p_inter_contracted": "per-step link probability across groups while contracted",
    "p_inter_expanded": "per-step link probability across groups while expanded",
    "seed": "generator seed",
    "sample_period": "seconds between samples",
}


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="hymad", formatter_class=fmt,
                                     description="Trace-driven DTN routing simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", formatter_class=fmt, help="trace statistics")
    a.add_argument("--trace", required=True, metavar="PATH", help="contact trace CSV")
    a.add_argument("--period", type=int, default=15, metavar="SECS", help="sampling period")
    a.add_argument("--out", default="out", metavar="DIR", help="artifact directory")

    g = sub.add_parser("generate", formatter_class=fmt, help="synthetic accordion trace")
    for f in fields(AccordionParams):
        g.add_argument("--" + f.name.replace("_", "-"), type=type(f.default), default=f.default,
                       help=ACCORDION_HELP[f.name])
    g.add_argument("--out", default="out", metavar="DIR", help="directory for the trace file")

    s = sub.add_parser("simulate", formatter_class=fmt, help="seeded runs of one protocol")
    _simulation_flags(s)
    c = sub.add_parser("compare", formatter_class=fmt, help="all three protocols on the same seeds")
    _simulation_flags(c, protocol=False)
    parser.subcommands = {"analyze": a, "generate": g, "simulate": s, "compare": c}
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> tuple[argparse.Namespace, list[str]]:
    """Load ``--config`` values as subcommand defaults, then parse for real.

    Returns the namespace plus every problem found in the config file, so
    they can be reported together with flag range errors.
    """
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in parser.subcommands), None)
    if not known.config or command is None:
        return parser.parse_args(argv), []
    path = known.config
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}") from e
    except configparser.Error as e:
        raise UsageError(f"bad config {path}: {e}") from e
    if not cp.has_section("hymad"):
        raise UsageError(f"config {path} has no [hymad] section")
    sub = parser.subcommands[command]
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    defaults, errors = {}, []
    for key, raw in cp.items("hymad"):
        dest = key.replace("-", "_")
        act = actions.get(dest)
        if act is None:
            errors.append(f"unknown config key {key!r} for {command}")
            continue
        try:
            if isinstance(act, argparse._StoreTrueAction):
                defaults[dest] = cp.getboolean("hymad", key)
            else:
                val = act.type(raw) if act.type else raw
                if act.choices and val not in act.choices:
                    raise ValueError(f"must be one of {list(act.choices)}")
                defaults[dest] = val
        except ValueError as e:
            errors.append(f"config {key} = {raw!r}: {e}")
    sub.set_defaults(**defaults)
    for a in sub._actions:
        if a.dest in defaults:
            a.required = False
    return parser.parse_args(argv), errors


def _validate(args) -> list[str]:
    errs = []
    for name, lo in (("copies", 1), ("dmax", 1), ("pairs_per_step", 1), ("runs", 1),
                     ("period", 1), ("jobs", 1), ("window", 0)):
        v = getattr(args, name, None)
        if v is not None and v < lo:
            errs.append(f"--{name.replace('_', '-')} must be >= {lo} (got {v})")
    return errs


def _load_trace(path: str, period: int):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"trace file not found: {path}")
    try:
        with open(p) as fh:
            return parse_contact_trace(fh, sample_period=period)
    except TraceError as e:
        raise UsageError(f"{path}: {e}") from e


def sim_config(args, protocol: str) -> SimConfig:
    pcfg = ProtocolConfig(protocol=protocol, copies=args.copies,
                          split_policy=args.split_policy.replace("-", "_"),
                          d_max=args.dmax, seed=args.seed)
    return SimConfig(
        protocol=pcfg,
        groups=GroupConfig(d_max=args.dmax),
        workload=WorkloadSpec(pairs_per_step=args.pairs_per_step, window=(0, args.window)),
        runs=args.runs,
        master_seed=args.seed,
    )


def run_tag(protocol: str, args) -> str:
    policy = args.split_policy.replace("-", "_")
    return f"{protocol}_L{args.copies}_d{args.dmax}_{policy}_r{args.runs}"


# --------------------------------------------------------------------------
# commands


def cmd_analyze(args) -> int:
    trace = _load_trace(args.trace, args.period)
    st = compute_trace_stats(trace)
    out = Artifacts(args.out)
    stem = Path(args.trace).stem
    scal = st.scalars()
    scal.update(node_count=trace.node_count, duration=trace.duration,
                sample_period=trace.sample_period)
    out.add_json(f"{stem}_stats.json", scal)
    out.add(f"{stem}_degree.csv", metrics.write_csv(["t", "mean_degree"], zip(st.times, st.degree_series)))
    out.add(f"{stem}_components.csv", metrics.write_csv(
        ["t", "cc_count", "cc_count_nonisolated"],
        zip(st.times, st.cc_count_series, st.cc_count_nonisolated_series)))
    out.commit()
    print(f"{args.trace}: {trace.node_count} nodes, {len(trace.events)} contacts, "
          f"{trace.n_steps} steps of {trace.sample_period} s")
    print(f"  mean degree        {scal['mean_degree']:.2f} (range {scal['min_degree']:.2f} .. {scal['max_degree']:.2f})")
    print(f"  components         up to {scal['max_cc_count']} ({scal['max_cc_count_nonisolated']} non-isolated)")
    print(f"  link lifetime      {st.mean_link_lifetime:.1f} s")
    print(f"  path lifetime      {st.mean_path_lifetime:.1f} s")
    print(f"  unique contacts    {st.mean_unique_contacts:.2f} per node")
    return EXIT_OK


def cmd_generate(args) -> int:
    kw = {f.name: getattr(args, f.name) for f in fields(AccordionParams)}
    try:
        params = AccordionParams(**kw)
    except ValueError as e:
        raise UsageError(str(e)) from e
    trace = generate_accordion_trace(params)
    name = f"accordion_n{params.node_count}_g{params.social_group_size}_s{params.seed}.csv"
    out = Artifacts(args.out)
    out.add(name, serialize_trace(trace))
    path, = out.commit()
    print(f"wrote {path} ({len(trace.events)} contacts, {trace.n_steps} steps)")
    return EXIT_OK


def _event_rows(protocol: str, rows: list):
    def observer(t, proto, view, outcome):
        for tr in outcome.transfers:
            rows.append((t, protocol, tr.msg_id, "transfer", tr.src, tr.dst, tr.copies))
        for mid, when in outcome.deliveries:
            msg = proto.ledgers[mid].message
            rows.append((when, protocol, mid, "deliver", "", msg.dst, ""))
    return observer


def _simulate_protocol(trace, args, protocol: str, out: Artifacts, prefix: str):
    cfg = sim_config(args, protocol)
    try:
        if cfg.workload.window[1] > trace.duration:
            raise TraceError(f"--window {args.window} exceeds trace duration {trace.duration}")
    except TraceError as e:
        raise UsageError(str(e)) from e
    tag = run_tag(protocol, args)
    detailed = args.event_log or (args.dump_groups and protocol == "hymad")
    if detailed:
        results = []
        for i in range(cfg.runs):
            rows: list = []
            obs = _event_rows(protocol, rows) if args.event_log else None
            r = run(trace, cfg, i, observer=obs, keep_views=args.dump_groups and protocol == "hymad")
            if args.event_log:
                out.add(f"{prefix}{tag}/events_run{i:03d}.csv", metrics.write_csv(
                    ["t", "protocol", "msg_id", "event", "from", "to", "copies"], rows))
            if args.dump_groups and protocol == "hymad":
                out.add_json(f"{prefix}{tag}/groups_run{i:03d}.json", [v.to_json() for v in r.views])
            results.append(r)
    else:
        results = run_sweep(trace, cfg, jobs=args.jobs)
    for r in results:
        out.add(f"{prefix}{tag}/run_{r.run_index:03d}.json", r.dumps() + "\n")
    summary = metrics.summarize(results)
    cdf = metrics.delivery_cdf(results)
    out.add(f"{prefix}{tag}_cdf.csv", metrics.cdf_csv(cdf))
    doc = {"tag": tag, "config": cfg.to_dict(), "summary": summary.to_json(),
           "runs": [f"{tag}/run_{r.run_index:03d}.json" for r in results]}
    if protocol == "hymad":
        series = metrics.group_stability(results[0].group_assignments, trace.snapshots)
        out.add(f"{prefix}{tag}_stability.csv", metrics.stability_csv(series))
        doc["stability_mean"] = dict(zip(("link_changes", "membership_changes"), series.mean()))
    out.add_json(f"{prefix}{tag}_summary.json", doc)
    return results, summary, cdf


def _fmt_summary(name: str, s: metrics.Summary) -> str:
    mean = "n/a" if s.mean_delay is None else f"{s.mean_delay:7.1f} s"
    return f"  {name:<11} ratio {s.ratio:.4f}  mean delay {mean}  ({s.delivered}/{s.injected})"


def cmd_simulate(args) -> int:
    trace = _load_trace(args.trace, args.period)
    out = Artifacts(args.out)
    _, summary, _ = _simulate_protocol(trace, args, args.protocol, out, "")
    out.commit()
    print(f"{args.runs} runs on {args.trace}")
    print(_fmt_summary(args.protocol, summary))
    return EXIT_OK


def cmd_compare(args) -> int:
    trace = _load_trace(args.trace, args.period)
    out = Artifacts(args.out)
    summaries, cdfs = {}, {}
    for name in ("epidemic", "hymad", "spray_wait"):
        _, summaries[name], cdfs[name] = _simulate_protocol(trace, args, name, out, "")
    tag = "compare_" + run_tag("all", args).split("_", 1)[1]
    out.add(f"{tag}_cdf.csv", metrics.merged_cdf_csv(cdfs))
    by_delay = sorted((n for n in summaries if summaries[n].mean_delay is not None),
                      key=lambda n: summaries[n].mean_delay)
    by_ratio = sorted(summaries, key=lambda n: -summaries[n].ratio)
    out.add_json(f"{tag}_report.json", {
        "summaries": {n: s.to_json() for n, s in summaries.items()},
        "rank_by_mean_delay": by_delay,
        "rank_by_ratio": by_ratio,
    })
    out.commit()
    print(f"compare on {args.trace}, L={args.copies}, dmax={args.dmax}, {args.runs} runs")
    for n in by_delay + [n for n in summaries if n not in by_delay]:
        print(_fmt_summary(n, summaries[n]))
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "generate": cmd_generate,
            "simulate": cmd_simulate, "compare": cmd_compare}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args, errs = _apply_config(parser, argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    except UsageError as e:
        print(f"hymad: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    errs += _validate(args)
    if errs:
        for e in errs:
            print(f"hymad: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"hymad: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # anything else is a runtime failure
        log.debug("failure", exc_info=True)
        print(f"hymad: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
