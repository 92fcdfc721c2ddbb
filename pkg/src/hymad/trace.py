"""Contact traces: parsing, sampling, synthetic generation and graph statistics.

A trace is a list of half-open contact intervals ``[t_start, t_end)`` between
node pairs. Topology is only ever observed at multiples of the sampling
period; nothing is interpolated between samples.
"""
from __future__ import annotations

import io
import math
import re
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence, TextIO

import numpy as np

DEFAULT_PERIOD = 15
CSV_HEADER = "node_a,node_b,t_start,t_end"

Edge = tuple[int, int]


class TraceError(ValueError):
    """Raised for malformed or inconsistent trace input."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class ContactEvent:
    node_a: int
    node_b: int
    t_start: int
    t_end: int

    def __post_init__(self):
        if self.node_a == self.node_b:
            raise TraceError(f"self-contact on node {self.node_a}")
        if self.t_start >= self.t_end:
            raise TraceError(f"empty interval [{self.t_start}, {self.t_end})")
        if self.node_a > self.node_b:
            a, b = self.node_b, self.node_a
            object.__setattr__(self, "node_a", a)
            object.__setattr__(self, "node_b", b)

    def sort_key(self):
        return (self.t_start, self.node_a, self.node_b, self.t_end)

    @property
    def pair(self) -> Edge:
        return (self.node_a, self.node_b)

    def covers(self, t: int) -> bool:
        return self.t_start <= t < self.t_end


@dataclass(frozen=True)
class TopologySnapshot:
    """Undirected adjacency at one sampling instant."""

    t: int
    node_count: int
    edges: frozenset[Edge]

    @cached_property
    def adj(self) -> tuple[tuple[int, ...], ...]:
        nbrs: list[list[int]] = [[] for _ in range(self.node_count)]
        for u, v in self.edges:
            nbrs[u].append(v)
            nbrs[v].append(u)
        return tuple(tuple(sorted(n)) for n in nbrs)

    def neighbors(self, u: int) -> tuple[int, ...]:
        return self.adj[u]

    def has_edge(self, u: int, v: int) -> bool:
        return (min(u, v), max(u, v)) in self.edges

    def degree(self, u: int) -> int:
        return len(self.adj[u])

    @cached_property
    def components(self) -> list[list[int]]:
        return connected_components(self)

    @cached_property
    def component_masks(self) -> list[int]:
        return [sum(1 << u for u in comp) for comp in self.components]


@dataclass(frozen=True)
class ContactTrace:
    node_count: int
    events: tuple[ContactEvent, ...]
    duration: int
    sample_period: int = DEFAULT_PERIOD
    labels: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.sample_period <= 0:
            raise TraceError("sample_period must be positive")
        for ev in self.events:
            if not (0 <= ev.node_a < self.node_count and 0 <= ev.node_b < self.node_count):
                raise TraceError(f"node id out of range in {ev}")
            if ev.t_start < 0 or ev.t_end > self.duration:
                raise TraceError(f"event {ev} outside [0, {self.duration}]")
        if list(self.events) != sorted(self.events, key=ContactEvent.sort_key):
            raise TraceError("events must be sorted by t_start")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(str(i) for i in range(self.node_count)))

    @property
    def n_steps(self) -> int:
        return math.ceil(self.duration / self.sample_period)

    def times(self) -> range:
        """Sampling instants ``0, p, 2p, ...`` strictly before the horizon."""
        return range(0, self.n_steps * self.sample_period, self.sample_period)

    @cached_property
    def snapshots(self) -> tuple[TopologySnapshot, ...]:
        p = self.sample_period
        per_step: list[set[Edge]] = [set() for _ in range(self.n_steps)]
        for ev in self.events:
            first = -(-ev.t_start // p)
            last = -(-ev.t_end // p)  # exclusive
            for k in range(first, min(last, self.n_steps)):
                per_step[k].add(ev.pair)
        return tuple(
            TopologySnapshot(k * p, self.node_count, frozenset(es)) for k, es in enumerate(per_step)
        )


def snapshot(trace: ContactTrace, t: int) -> TopologySnapshot:
    """Topology at instant ``t``: an edge is present iff some event covers ``t``."""
    if not 0 <= t <= trace.duration:
        raise TraceError(f"t={t} outside [0, {trace.duration}]")
    if t % trace.sample_period == 0 and t // trace.sample_period < trace.n_steps:
        return trace.snapshots[t // trace.sample_period]
    edges = frozenset(ev.pair for ev in trace.events if ev.covers(t))
    return TopologySnapshot(t, trace.node_count, edges)


# --------------------------------------------------------------------------
# CSV format


_META = re.compile(r"^#\s*(\w+)\s*=\s*(\S+)\s*$")


def _label_key(label: str):
    # natural order: "n2" < "n10", digit runs compare numerically
    return [(0, int(tok), "") if tok.isdigit() else (1, 0, tok)
            for tok in re.split(r"(\d+)", label) if tok]


def parse_contact_trace(text: str | TextIO, sample_period: int | None = None) -> ContactTrace:
    """Parse the canonical CSV trace format.

    Optional leading ``# key=value`` lines may declare ``node_count``,
    ``duration`` and ``sample_period``. Labels are compacted to dense ids in
    natural order; when they already are ``0..node_count-1`` they are kept.
    """
    stream = io.StringIO(text) if isinstance(text, str) else text
    meta: dict[str, int] = {}
    rows: list[tuple[int, str, str, int, int]] = []
    seen_header = False
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _META.match(line)
            if m and m.group(1) in ("node_count", "duration", "sample_period"):
                try:
                    meta[m.group(1)] = int(m.group(2))
                except ValueError:
                    raise TraceError(f"bad metadata value {m.group(2)!r}", lineno) from None
            continue
        if not seen_header:
            if line.replace(" ", "") != CSV_HEADER:
                raise TraceError(f"expected header {CSV_HEADER!r}", lineno)
            seen_header = True
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 4 or not all(parts):
            raise TraceError(f"expected 4 fields, got {line!r}", lineno)
        try:
            t0, t1 = int(parts[2]), int(parts[3])
        except ValueError:
            raise TraceError(f"non-integer time in {line!r}", lineno) from None
        if parts[0] == parts[1]:
            raise TraceError(f"self-contact on node {parts[0]}", lineno)
        if t0 >= t1:
            raise TraceError(f"t_start >= t_end in {line!r}", lineno)
        if t0 < 0:
            raise TraceError(f"negative time in {line!r}", lineno)
        rows.append((lineno, parts[0], parts[1], t0, t1))
    if not seen_header:
        raise TraceError("missing header")

    labels = sorted({r[1] for r in rows} | {r[2] for r in rows}, key=_label_key)
    declared = meta.get("node_count")
    if declared is not None and all(l.isdigit() and int(l) < declared for l in labels):
        index = {str(i): i for i in range(declared)}
        names = tuple(str(i) for i in range(declared))
    else:
        if declared is not None and declared < len(labels):
            raise TraceError(f"node_count={declared} but {len(labels)} distinct labels")
        index = {l: i for i, l in enumerate(labels)}
        names = tuple(labels)

    period = sample_period or meta.get("sample_period", DEFAULT_PERIOD)
    events = sorted((ContactEvent(index[a], index[b], t0, t1) for _, a, b, t0, t1 in rows),
                    key=ContactEvent.sort_key)
    latest = max((ev.t_end for ev in events), default=0)
    duration = meta.get("duration", -(-latest // period) * period)
    if duration < latest:
        raise TraceError(f"duration={duration} precedes last event end {latest}")
    return ContactTrace(len(names), tuple(events), duration, period, names)


def serialize_trace(trace: ContactTrace) -> str:
    out = [
        f"# node_count={trace.node_count}",
        f"# duration={trace.duration}",
        f"# sample_period={trace.sample_period}",
        CSV_HEADER,
    ]
    lab = trace.labels
    for ev in trace.events:
        out.append(f"{lab[ev.node_a]},{lab[ev.node_b]},{ev.t_start},{ev.t_end}")
    return "\n".join(out) + "\n"


def events_from_steps(step_edges: Sequence[Iterable[Edge]], period: int) -> list[ContactEvent]:
    """Merge per-step link sets into maximal contact intervals."""
    open_since: dict[Edge, int] = {}
    events: list[ContactEvent] = []
    for k, edges in enumerate([*step_edges, ()]):
        now = {(min(u, v), max(u, v)) for u, v in edges}
        for pair in list(open_since):
            if pair not in now:
                events.append(ContactEvent(*pair, open_since.pop(pair) * period, k * period))
        for pair in now:
            open_since.setdefault(pair, k)
    events.sort(key=ContactEvent.sort_key)
    return events


def trace_from_steps(node_count: int, step_edges: Sequence[Iterable[Edge]],
                     period: int = DEFAULT_PERIOD) -> ContactTrace:
    events = events_from_steps(step_edges, period)
    return ContactTrace(node_count, tuple(events), len(step_edges) * period, period)


# --------------------------------------------------------------------------
# graph utilities


def connected_components(snap: TopologySnapshot, node_count: int | None = None) -> list[list[int]]:
    """Components ordered by smallest member; isolated nodes are singletons."""
    n = snap.node_count if node_count is None else node_count
    adj = snap.adj
    seen = [False] * n
    comps = []
    for s in range(n):
        if seen[s]:
            continue
        seen[s] = True
        comp = [s]
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in adj[u] if u < len(adj) else ():
                if not seen[v]:
                    seen[v] = True
                    comp.append(v)
                    queue.append(v)
        comps.append(sorted(comp))
    return comps


def bfs_distances(adj: Sequence[Sequence[int]], source: int, allowed=None) -> dict[int, int]:
    """Hop distances from ``source``, optionally restricted to ``allowed`` nodes."""
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in dist and (allowed is None or v in allowed):
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def bfs_parents(adj: Sequence[Sequence[int]], source: int) -> dict[int, int]:
    """BFS tree visiting neighbors in ascending id order (canonical shortest paths)."""
    parent = {source: source}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in parent:
                parent[v] = u
                queue.append(v)
    return parent


# --------------------------------------------------------------------------
# statistics


@dataclass
class TraceStats:
    times: list[int]
    degree_series: list[float]
    cc_count_series: list[int]
    cc_count_nonisolated_series: list[int]
    mean_link_lifetime: float
    mean_path_lifetime: float
    mean_unique_contacts: float

    @property
    def mean_degree(self) -> float:
        return float(np.mean(self.degree_series)) if self.degree_series else 0.0

    def scalars(self) -> dict:
        deg = self.degree_series
        return {
            "steps": len(self.times),
            "mean_degree": self.mean_degree,
            "min_degree": min(deg, default=0.0),
            "max_degree": max(deg, default=0.0),
            "max_cc_count": max(self.cc_count_series, default=0),
            "max_cc_count_nonisolated": max(self.cc_count_nonisolated_series, default=0),
            "mean_link_lifetime": self.mean_link_lifetime,
            "mean_path_lifetime": self.mean_path_lifetime,
            "mean_unique_contacts": self.mean_unique_contacts,
        }


def _up_runs(snaps: Sequence[TopologySnapshot]) -> dict[Edge, list[int]]:
    """For each edge, the number of consecutive steps it stays up starting at each step."""
    n = len(snaps)
    runs: dict[Edge, list[int]] = {}
    for e in set().union(*(s.edges for s in snaps)) if snaps else ():
        r = [0] * (n + 1)
        for k in range(n - 1, -1, -1):
            if e in snaps[k].edges:
                r[k] = r[k + 1] + 1
        runs[e] = r
    return runs


def compute_trace_stats(trace: ContactTrace) -> TraceStats:
    """Per-step degree and component series plus link and path lifetimes.

    Link lifetime is the mean length of maximal runs of sampled up-steps.
    Path lifetime is, for every (ordered pair, step) connected at that step,
    how many consecutive steps starting there the canonical BFS shortest path
    stays intact. Both are reported in seconds.
    """
    if trace.duration % trace.sample_period:
        raise TraceError("sample_period must divide duration")
    snaps = trace.snapshots
    p = trace.sample_period
    n = trace.node_count
    times = [s.t for s in snaps]
    degree = [2 * len(s.edges) / n if n else 0.0 for s in snaps]
    cc_all = [len(s.components) for s in snaps]
    cc_big = [sum(1 for c in s.components if len(c) > 1) for s in snaps]

    runs = _up_runs(snaps)
    lifetimes = []
    for r in runs.values():
        for k in range(len(snaps)):
            if r[k] and (k == 0 or not r[k - 1]):
                lifetimes.append(r[k] * p)
    link_life = float(np.mean(lifetimes)) if lifetimes else 0.0

    total = 0
    count = 0
    for k, s in enumerate(snaps):
        if not s.edges:
            continue
        for u in range(n):
            if not s.adj[u]:
                continue
            parent = bfs_parents(s.adj, u)
            # memoised min run along the tree path to each node
            life = {u: len(snaps) - k}
            for v in parent:  # BFS order: parents precede children
                if v == u:
                    continue
                w = parent[v]
                life[v] = min(life[w], runs[(min(v, w), max(v, w))][k])
                total += life[v]
                count += 1
    path_life = total * p / count if count else 0.0

    peers: list[set[int]] = [set() for _ in range(n)]
    for ev in trace.events:
        peers[ev.node_a].add(ev.node_b)
        peers[ev.node_b].add(ev.node_a)
    unique = float(np.mean([len(x) for x in peers])) if n else 0.0
    return TraceStats(times, degree, cc_all, cc_big, link_life, path_life, unique)


# --------------------------------------------------------------------------
# synthetic accordion traces


@dataclass(frozen=True)
class AccordionParams:
    """Social groups whose inter-group contact rate alternates between phases.

    Phases start contracted (dense inter-group links) and flip every
    ``phase_length`` steps.
    """

    node_count: int = 62
    social_group_size: int = 4
    phase_length: int = 20
    n_steps: int = 200
    p_intra: float = 0.9
    p_inter_contracted: float = 0.02
    p_inter_expanded: float = 0.002
    seed: int = 0
    sample_period: int = DEFAULT_PERIOD

    def __post_init__(self):
        for name in ("p_intra", "p_inter_contracted", "p_inter_expanded"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} is not a probability")
        if self.p_inter_expanded > self.p_inter_contracted:
            raise ValueError("p_inter_expanded must not exceed p_inter_contracted")
        if self.social_group_size < 1 or self.node_count < 1:
            raise ValueError("node_count and social_group_size must be >= 1")
        if self.phase_length < 1 or self.n_steps < 1:
            raise ValueError("phase_length and n_steps must be >= 1")

    def contracted(self, step: int) -> bool:
        return (step // self.phase_length) % 2 == 0

    def social_group(self, node: int) -> int:
        return node % self.n_groups

    @property
    def n_groups(self) -> int:
        return math.ceil(self.node_count / self.social_group_size)


def generate_accordion_trace(params: AccordionParams) -> ContactTrace:
    rng = np.random.default_rng(params.seed)
    n = params.node_count
    iu, ju = np.triu_indices(n, k=1)
    groups = np.arange(n) % params.n_groups
    intra = groups[iu] == groups[ju]
    steps = []
    for k in range(params.n_steps):
        p_inter = params.p_inter_contracted if params.contracted(k) else params.p_inter_expanded
        prob = np.where(intra, params.p_intra, p_inter)
        up = rng.random(len(iu)) < prob
        steps.append(list(zip(iu[up].tolist(), ju[up].tolist())))
    return trace_from_steps(n, steps, params.sample_period)

