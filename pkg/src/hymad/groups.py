"""Diameter-constrained group service.

Nodes run synchronous rounds of broadcasts. Within a round every node speaks
once, in a seeded order, and its current neighbours merge the vector
immediately. A vector lists, for every member the sender knows of, the hop
count, the member's message ids, its border bit and its seniority stamp.

Membership rules:

* a free node joins the first group whose vector it can absorb with every
  member within ``d_max`` hops; a free node that speaks before hearing
  anyone founds a group of its own;
* a member only merges vectors carrying its own group label and never
  migrates to another group during a view;
* when a member sees another member further than ``d_max`` away, the junior
  of the two gives way: the receiver reverts to a singleton if the far member
  is senior, otherwise the far entry is dropped.

After the last round a settle pass prunes entries for members that are no
longer reachable through same-group links, evicts the most junior node of any
pair still violating the diameter bound, and labels each group with its
smallest member id.
"""
from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .trace import TopologySnapshot, bfs_distances

FREE = "free"
MEMBER = "member"

Stamp = tuple  # (t, round, position, rank, node); smaller is more senior
EMPTY: frozenset = frozenset()


@dataclass(frozen=True)
class GroupConfig:
    d_max: int = 2
    rounds: int | None = None
    order_seed: int = 0

    def __post_init__(self):
        if self.d_max < 1:
            raise ValueError("d_max must be >= 1")
        if self.rounds is None:
            object.__setattr__(self, "rounds", self.d_max + 2)
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")


@dataclass(frozen=True)
class BroadcastEntry:
    member: int
    hops: int
    messages: frozenset = EMPTY
    border: bool = False
    since: Stamp | None = None
    via: int | None = None  # sender's next hop towards the member


@dataclass(frozen=True)
class GroupBroadcast:
    sender: int
    group_id: int
    entries: tuple[BroadcastEntry, ...]

    def vector(self) -> dict[int, int]:
        return {e.member: e.hops for e in self.entries}


@dataclass
class TableEntry:
    hops: int
    messages: frozenset = EMPTY
    border: bool = False
    since: Stamp | None = None
    via: int | None = None


@dataclass
class NodeGroupState:
    self_id: int
    label: int
    table: dict[int, TableEntry]
    status: str = FREE
    since: Stamp | None = None
    banned: frozenset = EMPTY  # labels this node was excluded from during the current view
    heard: dict[int, GroupBroadcast] = field(default_factory=dict)
    neighbor_labels: dict[int, int] = field(default_factory=dict)

    @classmethod
    def singleton(cls, node: int, messages=EMPTY) -> "NodeGroupState":
        return cls(node, node, {node: TableEntry(0, frozenset(messages))})

    @property
    def group_id(self) -> int:
        return min(self.table)

    @property
    def messages(self) -> frozenset:
        return self.table[self.self_id].messages

    @property
    def is_free(self) -> bool:
        return self.status == FREE

    @property
    def border(self) -> bool:
        return any(lab != self.label for lab in self.neighbor_labels.values())

    def vector(self) -> dict[int, int]:
        return {m: e.hops for m, e in self.table.items()}

    def broadcast(self) -> GroupBroadcast:
        own = self.table[self.self_id]
        own.border = self.border
        own.since = self.since
        entries = tuple(
            BroadcastEntry(m, e.hops, e.messages, e.border, e.since, e.via)
            for m, e in sorted(self.table.items(), key=lambda kv: (kv[1].hops, kv[0]))
        )
        return GroupBroadcast(self.self_id, self.label, entries)


@dataclass
class GroupView:
    t: int
    assignment: dict[int, int]
    distances: dict[int, dict[int, int]]
    borders: frozenset[int]
    group_messages: dict[int, dict[object, int]]
    states: dict[int, NodeGroupState] = field(repr=False, default_factory=dict)

    @property
    def groups(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for node in sorted(self.assignment):
            out.setdefault(self.assignment[node], []).append(node)
        return out

    def members(self, gid: int) -> list[int]:
        return self.groups[gid]

    def border_count(self, gid: int) -> int:
        return sum(1 for u in self.borders if self.assignment[u] == gid)

    def to_json(self) -> dict:
        groups = []
        for gid, members in self.groups.items():
            groups.append({
                "group_id": gid,
                "members": members,
                "borders": sorted(u for u in members if u in self.borders),
                "messages": {str(m): c for m, c in sorted(self.group_messages.get(gid, {}).items(),
                                                          key=lambda kv: str(kv[0]))},
            })
        return {"t": self.t, "groups": groups}


# --------------------------------------------------------------------------
# merging


def _tabulate(state: NodeGroupState, vectors, d_max: int, label: int):
    """Entry-wise minimum over stored vectors.

    Entries routed back through the receiver (split horizon) and entries for
    neighbours heard announcing another label are ignored. Returns the new
    table and the seniority stamps of members found beyond ``d_max``.
    """
    me = state.self_id
    seen = state.neighbor_labels
    best: dict[int, tuple[int, int, BroadcastEntry]] = {}
    for bc in vectors:
        for e in bc.entries:
            m = e.member
            if m == me or e.via == me or seen.get(m, label) != label:
                continue
            h = e.hops + 1
            if m not in best or h < best[m][0]:
                best[m] = (h, bc.sender, e)
    table = {me: state.table[me]}
    too_far = []
    for m, (h, via, e) in best.items():
        if h > d_max:
            too_far.append(e.since)
        else:
            table[m] = TableEntry(h, e.messages, e.border, e.since, via)
    return table, too_far


def _senior(a: Stamp | None, b: Stamp | None) -> bool:
    """True if stamp ``a`` is strictly older than ``b``."""
    if a is None:
        return False
    return b is None or a < b


def _revert(state: NodeGroupState):
    me = state.self_id
    state.banned = state.banned | {state.label}
    state.table = {me: state.table[me]}
    state.heard = {}
    state.label = me
    state.status = FREE
    state.since = None


def _recompute(state: NodeGroupState, d_max: int, decide: bool):
    table, too_far = _tabulate(state, state.heard.values(), d_max, state.label)
    if decide and any(_senior(s, state.since) for s in too_far):
        _revert(state)
    else:
        state.table = table


def _merge_inplace(state: NodeGroupState, incoming: GroupBroadcast, d_max: int,
                   now: Stamp, decide: bool = True):
    s = incoming.sender
    state.neighbor_labels[s] = incoming.group_id
    if state.status == MEMBER:
        if incoming.group_id == state.label:
            state.heard[s] = incoming
            _recompute(state, d_max, decide)
        elif state.heard.pop(s, None) is not None:
            _recompute(state, d_max, decide)
        return
    # free: join the first broadcast whose members all fit within d_max
    if incoming.group_id in state.banned:
        return
    table, too_far = _tabulate(state, (incoming,), d_max, incoming.group_id)
    if too_far:
        return
    state.status = MEMBER
    state.label = incoming.group_id
    state.since = (*now, 1, state.self_id)
    state.heard = {s: incoming}
    state.table = table


def merge_broadcast(state: NodeGroupState, incoming: GroupBroadcast, d_max: int,
                    link_present: bool = True, now: Stamp = (0, 0, 0),
                    decide: bool = True) -> NodeGroupState:
    """Return the receiver's state after absorbing one neighbour broadcast.

    ``now`` is the ``(t, round, position)`` of the sender's turn and dates the
    receiver's membership if it joins. With ``decide`` false, members beyond
    ``d_max`` are only dropped; the receiver never reverts on partial
    information.
    """
    assert link_present, "only neighbours receive broadcasts"
    new = copy.copy(state)
    new.table = dict(state.table)
    new.heard = dict(state.heard)
    new.neighbor_labels = dict(state.neighbor_labels)
    _merge_inplace(new, incoming, d_max, now, decide)
    return new


# --------------------------------------------------------------------------
# partition helpers


def compute_borders(assignment: Mapping[int, int], snap: TopologySnapshot) -> frozenset[int]:
    """Nodes with at least one neighbour assigned to a different group."""
    out = set()
    for u, v in snap.edges:
        if assignment[u] != assignment[v]:
            out.add(u)
            out.add(v)
    return frozenset(out)


def group_diameter_oracle(members, snap: TopologySnapshot) -> float:
    """Exact diameter of the member-induced subgraph; ``inf`` if disconnected."""
    members = set(members)
    if not members:
        raise ValueError("members must be nonempty")
    worst = 0
    for u in members:
        dist = bfs_distances(snap.adj, u, members)
        if len(dist) < len(members):
            return float("inf")
        worst = max(worst, max(dist.values()))
    return worst


def _induced_components(nodes: set[int], adj) -> list[set[int]]:
    left = set(nodes)
    comps = []
    while left:
        s = min(left)
        comp = set(bfs_distances(adj, s, left))
        left -= comp
        comps.append(comp)
    return comps


def _eccentricity_ok(members: set[int], adj, d_max: int) -> bool:
    for u in members:
        dist = bfs_distances(adj, u, members)
        if len(dist) < len(members) or max(dist.values()) > d_max:
            return False
    return True


def _settle(states: dict[int, NodeGroupState], snap: TopologySnapshot, d_max: int) -> list[set[int]]:
    """Prune, enforce the diameter bound, absorb free nodes; return the groups.

    Members only keep co-members reachable through same-label links. Within
    such a component, the most junior node of any pair further than ``d_max``
    apart is evicted until the bound holds. Finally each node left alone joins
    the first adjacent group (by smallest member) it fits in, which is what
    further rounds with complete vectors would converge to.
    """
    adj = snap.adj
    by_label: dict[int, set[int]] = {}
    for u, st in states.items():
        if st.status == MEMBER and len(st.table) > 1:
            by_label.setdefault(st.label, set()).add(u)
    pending = deque()
    for label in sorted(by_label):
        pending.extend(_induced_components(by_label[label], adj))
    groups: list[set[int]] = []
    while pending:
        comp = pending.popleft()
        if len(comp) == 1:
            continue
        dist = {u: bfs_distances(adj, u, comp) for u in comp}
        bad = {u for u in comp if max(dist[u].values()) > d_max}
        if not bad:
            groups.append(comp)
            continue
        evict = max(bad, key=lambda u: (states[u].since or (float("inf"),), u))
        pending.extend(_induced_components(comp - {evict}, adj))

    owner: dict[int, set[int]] = {}
    for g in groups:
        for u in g:
            owner[u] = g
    for u in range(snap.node_count):
        owner.setdefault(u, {u})
    changed = True
    while changed:
        changed = False
        for u in range(snap.node_count):
            if len(owner[u]) > 1:
                continue
            options = sorted({id(owner[w]): owner[w] for w in adj[u]}.values(), key=min)
            for g in options:
                if _eccentricity_ok(g | {u}, adj, d_max):
                    if len(g) == 1:
                        (w,) = g
                        states[w].since = states[w].since or (snap.t, 1 << 30, 0, 0, w)
                    g.add(u)
                    owner[u] = g
                    states[u].since = (snap.t, 1 << 30, 0, 1, u)
                    changed = True
                    break
    unique = {id(g): g for g in owner.values()}
    return sorted(unique.values(), key=min)


# --------------------------------------------------------------------------
# rounds


def _initial_states(snap: TopologySnapshot, prev: Mapping[int, NodeGroupState] | None,
                    buffers: Mapping[int, frozenset], d_max: int) -> dict[int, NodeGroupState]:
    """Warm start: members keep their label and their neighbours' last vectors.

    Vectors from neighbours whose link vanished are forgotten; a member with
    no remaining same-label neighbour starts free.
    """
    prev = prev or {}
    last = {u: p.broadcast() for u, p in prev.items() if p.status == MEMBER and len(p.table) > 1}
    states = {}
    for u in range(snap.node_count):
        st = NodeGroupState.singleton(u, buffers.get(u, EMPTY))
        if u in last:
            label = prev[u].label
            st.heard = {w: last[w] for w in snap.adj[u] if w in last and last[w].group_id == label}
            if st.heard:
                st.label = label
                st.status = MEMBER
                st.since = prev[u].since
                st.table, _ = _tabulate(st, st.heard.values(), d_max, label)
        states[u] = st
    return states


def run_group_rounds(snap: TopologySnapshot, prev: Mapping[int, NodeGroupState] | None,
                     buffers: Mapping[int, frozenset], cfg: GroupConfig,
                     order: Sequence[int] | None = None,
                     observer: Callable[[int, GroupBroadcast, dict], None] | None = None) -> GroupView:
    """Run ``cfg.rounds`` broadcast rounds on one snapshot and extract the view.

    ``order`` fixes the activation order of every round; by default each
    round draws a fresh permutation seeded by ``(cfg.order_seed, snap.t)``.
    ``observer(round, broadcast, states)`` is called after each broadcast has
    been merged by the sender's neighbours.

    A member only reverts once it has heard every current neighbour during
    this step, so exclusion is never decided on a half-refreshed table.
    """
    n = snap.node_count
    d_max = cfg.d_max
    adj = snap.adj
    states = _initial_states(snap, prev, buffers, d_max)
    missing = [set(adj[u]) for u in range(n)]
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.order_seed, snap.t])))
    for r in range(cfg.rounds):
        seq = list(order) if order is not None else rng.permutation(n).tolist()
        for pos, u in enumerate(seq):
            st = states[u]
            if st.status == FREE:
                # nobody to join yet: found a group of one
                st.status = MEMBER
                st.label = u
                st.since = (snap.t, r, pos, 0, u)
            bc = st.broadcast()
            now = (snap.t, r, pos)
            for v in adj[u]:
                missing[v].discard(u)
                _merge_inplace(states[v], bc, d_max, now, not missing[v])
            if observer is not None:
                observer(r, bc, states)
        for st in states.values():
            if st.status == MEMBER and len(st.table) == 1:
                st.status = FREE
                st.label = st.self_id
                st.since = None
                st.heard = {}

    groups = _settle(states, snap, d_max)
    return _build_view(snap, states, groups, buffers)


def _build_view(snap, states, groups, buffers) -> GroupView:
    adj = snap.adj
    assignment: dict[int, int] = {}
    for g in groups:
        gid = min(g)
        for u in g:
            assignment[u] = gid
    borders = compute_borders(assignment, snap)
    final: dict[int, NodeGroupState] = {}
    distances: dict[int, dict[int, int]] = {}
    group_messages: dict[int, dict[object, int]] = {}
    for g in groups:
        gid = min(g)
        single = len(g) == 1
        custody: dict[object, int] = {}
        for u in sorted(g):
            for m in buffers.get(u, EMPTY):
                custody.setdefault(m, u)
        if custody:
            group_messages[gid] = custody
        for u in g:
            distances[u] = dict(sorted(bfs_distances(adj, u, g).items()))
        for u in g:
            old = states[u]
            inner = [w for w in adj[u] if w in g]
            table = {}
            for m, h in distances[u].items():
                via = u if m == u else min(w for w in inner if distances[w][m] == h - 1)
                table[m] = TableEntry(h, frozenset(buffers.get(m, EMPTY)), m in borders,
                                      None if single else states[m].since, via)
            final[u] = NodeGroupState(
                u, gid, table,
                status=FREE if single else MEMBER,
                since=None if single else old.since,
                neighbor_labels={w: assignment[w] for w in adj[u]},
            )
    return GroupView(snap.t, dict(sorted(assignment.items())), distances, borders,
                     group_messages, final)


def views_equal(a: GroupView, b: GroupView) -> bool:
    return (a.assignment == b.assignment and a.distances == b.distances
            and a.borders == b.borders and a.group_messages == b.group_messages)


__all__ = [
    "GroupConfig", "BroadcastEntry", "GroupBroadcast", "TableEntry", "NodeGroupState",
    "GroupView", "merge_broadcast", "compute_borders", "group_diameter_oracle",
    "run_group_rounds", "views_equal",
]
