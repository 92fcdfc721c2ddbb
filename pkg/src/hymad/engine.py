"""Discrete-time orchestration of one or many simulation runs.

Each step: snapshot -> group rounds (HYMAD only) -> inject the messages
created one period earlier -> protocol step -> record. Every run draws its
randomness from independent sub-streams of the master seed, so changing one
knob (say, the workload) never perturbs another (say, the group activation
order).
"""
from __future__ import annotations

import json
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from .groups import GroupConfig, GroupView, run_group_rounds
from .routing import Message, ProtocolConfig, StepOutcome, make_protocol
from .trace import ContactTrace, TraceError

PURPOSES = {"workload": 0, "order": 1, "custody": 2, "protocol": 3}


def derive_seed(master_seed: int, run_index: int, purpose: str) -> int:
    ss = np.random.SeedSequence(master_seed, spawn_key=(run_index, PURPOSES[purpose]))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class WorkloadSpec:
    pairs_per_step: int = 60
    window: tuple[int, int] = (0, 2000)
    bidirectional: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.pairs_per_step < 1:
            raise ValueError("pairs_per_step must be >= 1")
        lo, hi = self.window
        if lo < 0 or hi < lo:
            raise ValueError(f"bad injection window {self.window}")


@dataclass(frozen=True)
class SimConfig:
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    groups: GroupConfig | None = None
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    runs: int = 10
    master_seed: int = 0

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.groups is None:
            object.__setattr__(self, "groups", GroupConfig(d_max=self.protocol.d_max))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["workload"]["window"] = list(self.workload.window)
        return d


@dataclass
class MessageRecord:
    id: int
    src: int
    dst: int
    t_created: int
    delivered_at: int | None = None

    @property
    def delay(self) -> int | None:
        return None if self.delivered_at is None else self.delivered_at - self.t_created


@dataclass
class RunResult:
    protocol: str
    run_index: int
    seed: int
    sample_period: int
    records: list[MessageRecord]
    config: dict = field(default_factory=dict)
    # per step: group id of every node (HYMAD only)
    group_assignments: list[list[int]] | None = None
    times: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "protocol": self.protocol,
            "run_index": self.run_index,
            "seed": self.seed,
            "sample_period": self.sample_period,
            "config": self.config,
            "records": [[r.id, r.src, r.dst, r.t_created, r.delivered_at] for r in self.records],
            "times": self.times,
            "group_assignments": self.group_assignments,
        }

    @classmethod
    def from_json(cls, d: dict) -> "RunResult":
        return cls(
            protocol=d["protocol"],
            run_index=d["run_index"],
            seed=d["seed"],
            sample_period=d["sample_period"],
            records=[MessageRecord(*r) for r in d["records"]],
            config=d.get("config", {}),
            group_assignments=d.get("group_assignments"),
            times=d.get("times", []),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))


def generate_workload(spec: WorkloadSpec, trace: ContactTrace, seed: int | None = None) -> list[Message]:
    """Random source/destination pairs at every sampling step of the window.

    With ``bidirectional`` the pairs are distinct unordered pairs and each
    one yields a message in both directions; otherwise distinct ordered
    pairs. The draw is capped at the number of pairs available.
    """
    n = trace.node_count
    if n < 2:
        raise TraceError("workload needs at least two nodes")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    lo, hi = spec.window
    if spec.bidirectional:
        iu, ju = np.triu_indices(n, k=1)
    else:
        iu, ju = np.nonzero(~np.eye(n, dtype=bool))
    total = len(iu)
    k = min(spec.pairs_per_step, total)
    out: list[Message] = []
    for t in trace.times():
        if not lo <= t < hi:
            continue
        picks = rng.choice(total, size=k, replace=False)
        for i in picks.tolist():
            a, b = int(iu[i]), int(ju[i])
            out.append(Message(len(out), a, b, t))
            if spec.bidirectional:
                out.append(Message(len(out), b, a, t))
    return out


def group_schedule(trace: ContactTrace, gcfg: GroupConfig) -> list[GroupView]:
    """Per-step group views with no message custody, memoised on the trace.

    Membership never depends on what the nodes carry, so runs that differ
    only in protocol parameters can share one schedule.
    """
    cache = trace.__dict__.setdefault("_group_cache", {})
    if gcfg not in cache:
        views, prev = [], None
        for snap in trace.snapshots:
            v = run_group_rounds(snap, prev, {}, gcfg)
            prev = v.states
            views.append(GroupView(v.t, v.assignment, v.distances, v.borders, {}))
        cache[gcfg] = views
    return cache[gcfg]


StepObserver = Callable[[int, object, GroupView | None, StepOutcome], None]


def run(trace: ContactTrace, cfg: SimConfig, run_index: int = 0,
        observer: StepObserver | None = None, keep_views: bool = False) -> RunResult:
    """Execute one seeded run over the whole trace.

    ``observer(t, protocol, view, outcome)`` is called after every step.
    With ``keep_views`` the group rounds are rerun with live buffers (so the
    views carry custodians) and attached to the result as ``result.views``;
    otherwise HYMAD reads the shared schedule from ``group_schedule``.
    """
    p = trace.sample_period
    if cfg.workload.window[1] > trace.duration:
        raise TraceError(f"injection window {cfg.workload.window} exceeds trace duration {trace.duration}")
    if cfg.workload.window[0] % p:
        raise TraceError("injection window must start on a sampling instant")
    msgs = generate_workload(cfg.workload, trace, derive_seed(cfg.master_seed, run_index, "workload"))
    by_time: dict[int, list[Message]] = {}
    for m in msgs:
        by_time.setdefault(m.t_created, []).append(m)
    records = {m.id: MessageRecord(m.id, m.src, m.dst, m.t_created) for m in msgs}

    pcfg = replace(cfg.protocol, seed=derive_seed(cfg.master_seed, run_index, "protocol"))
    proto = make_protocol(pcfg, random.Random(pcfg.seed),
                          random.Random(derive_seed(cfg.master_seed, run_index, "custody")))
    gcfg = replace(cfg.groups, order_seed=derive_seed(cfg.master_seed, run_index, "order"))

    prev = None
    assignments: list[list[int]] | None = [] if proto.uses_groups else None
    views: list[GroupView] = []
    schedule = group_schedule(trace, gcfg) if proto.uses_groups and not keep_views else None
    for k, snap in enumerate(trace.snapshots):
        t = snap.t
        view = None
        if schedule is not None:
            view = schedule[k]
            assignments.append([view.assignment[u] for u in range(trace.node_count)])
        elif proto.uses_groups:
            view = run_group_rounds(snap, prev, proto.buffers(), gcfg)
            prev = view.states
            assignments.append([view.assignment[u] for u in range(trace.node_count)])
            if keep_views:
                views.append(view)
        for m in by_time.get(t - p, ()):
            proto.inject(m)
        outcome = proto.step(snap, view)
        for mid, when in outcome.deliveries:
            if records[mid].delivered_at is None:
                records[mid].delivered_at = when
        if observer is not None:
            observer(t, proto, view, outcome)

    result = RunResult(
        protocol=pcfg.protocol,
        run_index=run_index,
        seed=cfg.master_seed,
        sample_period=p,
        records=[records[i] for i in sorted(records)],
        config=cfg.to_dict(),
        group_assignments=assignments,
        times=list(trace.times()),
    )
    if keep_views:
        result.views = views  # type: ignore[attr-defined]
    return result


def _run_job(args):
    trace, cfg, i = args
    return run(trace, cfg, i)


def run_sweep(trace: ContactTrace, cfg: SimConfig, jobs: int = 1,
              run_indices: Iterable[int] | None = None) -> list[RunResult]:
    """All ``cfg.runs`` runs, optionally in worker processes, ordered by run index."""
    indices = list(range(cfg.runs) if run_indices is None else run_indices)
    if jobs <= 1 or len(indices) <= 1:
        results = [run(trace, cfg, i) for i in indices]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_job, [(trace, cfg, i) for i in indices]))
    return sorted(results, key=lambda r: r.run_index)
