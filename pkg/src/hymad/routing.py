"""Routing protocols advanced one topology step at a time.

Three protocols share the same shape: messages are injected into per-message
copy ledgers, and ``step`` moves copies over the current snapshot and records
deliveries. Copies may cascade across a whole connected component within one
step; link capacity is not modelled.
"""
from __future__ import annotations

import logging
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

from .groups import GroupView
from .trace import ContactTrace, TopologySnapshot

log = logging.getLogger(__name__)

PROTOCOLS = ("hymad", "spray_wait", "epidemic")
SPLIT_POLICIES = ("fair", "paper_literal")


@dataclass(frozen=True)
class Message:
    id: int
    src: int
    dst: int
    t_created: int
    copies: int = 1

    def __post_init__(self):
        if self.src == self.dst:
            raise ValueError(f"message {self.id}: src == dst")
        if self.copies < 1:
            raise ValueError(f"message {self.id}: copy budget must be >= 1")


class CopyLedger:
    """Where the copies of one message currently are."""

    __slots__ = ("message", "copies", "delivered_at")

    def __init__(self, message: Message, copies: dict[int, int] | None = None):
        self.message = message
        self.copies = {message.src: message.copies} if copies is None else copies
        self.delivered_at: int | None = None

    @property
    def total(self) -> int:
        return sum(self.copies.values())

    @property
    def holders(self) -> list[int]:
        return sorted(u for u, c in self.copies.items() if c > 0)

    def move(self, src: int, dst: int, n: int):
        have = self.copies.get(src, 0)
        if n < 1 or n > have:
            raise ValueError(f"cannot move {n} copies of {self.message.id} from {src} holding {have}")
        if have == n:
            del self.copies[src]
        else:
            self.copies[src] = have - n
        self.copies[dst] = self.copies.get(dst, 0) + n

    def deliver(self, t: int):
        if self.delivered_at is None:
            self.delivered_at = t


class EpidemicLedger(CopyLedger):
    """Holder set as a node bitmask; every holder has one unbudgeted copy."""

    __slots__ = ("mask",)

    def __init__(self, message: Message):
        self.message = message
        self.mask = 1 << message.src
        self.delivered_at = None

    @property
    def copies(self) -> dict[int, int]:  # type: ignore[override]
        m, out, u = self.mask, {}, 0
        while m:
            if m & 1:
                out[u] = 1
            m >>= 1
            u += 1
        return out


class Transfer(NamedTuple):
    msg_id: int
    src: int
    dst: int
    copies: int


@dataclass
class StepOutcome:
    t: int = 0
    transfers: list[Transfer] = field(default_factory=list)
    deliveries: list[tuple[int, int]] = field(default_factory=list)


@dataclass(frozen=True)
class ProtocolConfig:
    protocol: str = "hymad"
    copies: int = 10
    split_policy: str = "fair"
    d_max: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}; choose from {PROTOCOLS}")
        if self.split_policy not in SPLIT_POLICIES:
            raise ValueError(f"unknown split policy {self.split_policy!r}")
        if self.copies < 1:
            raise ValueError("copies must be >= 1")
        if self.d_max < 1:
            raise ValueError("d_max must be >= 1")


def copies_to_transfer(n_c: int, n_b: int, policy: str = "fair") -> int:
    """Copies a border node requests for one adjacent group.

    ``paper_literal`` evaluates ``min(1, n_c // n_b)`` as written, which never
    grants more than one copy; ``fair`` uses ``max(1, n_c // n_b)``. Callers
    still cap the grant so the sending group keeps a copy.
    """
    assert n_c >= 2 and n_b >= 1, (n_c, n_b)
    share = n_c // n_b
    if policy == "paper_literal":
        return min(1, share)
    if policy == "fair":
        return max(1, share)
    raise ValueError(f"unknown split policy {policy!r}")


# --------------------------------------------------------------------------
# HYMAD


def _group_links(view: GroupView, snap: TopologySnapshot, rng: random.Random):
    """Per group: ordered ``(adjacent group, border node, peer)`` with one entry per adjacent group."""
    assign = view.assignment
    members: dict[int, list[int]] = {}
    for u in sorted(assign):
        members.setdefault(assign[u], []).append(u)
    borders = sorted(view.borders)
    rng.shuffle(borders)
    links: dict[int, list[tuple[int, int, int]]] = {g: [] for g in members}
    seen: dict[int, set[int]] = {g: set() for g in members}
    n_b = {g: 0 for g in members}
    for u in borders:
        g = assign[u]
        n_b[g] += 1
        for v in snap.adj[u]:
            h = assign[v]
            if h != g and h not in seen[g]:
                seen[g].add(h)
                links[g].append((h, u, v))
    return members, links, n_b


def _take(ledger: CopyLedger, holders: list[int], n: int, dst: int, out: StepOutcome):
    """Move ``n`` copies to ``dst``, drawing from the largest holders first."""
    for u in sorted(holders, key=lambda x: (-ledger.copies.get(x, 0), x)):
        if n == 0:
            break
        k = min(n, ledger.copies.get(u, 0))
        if k and u != dst:
            ledger.move(u, dst, k)
            out.transfers.append(Transfer(ledger.message.id, u, dst, k))
        n -= k


def hymad_step(ledgers: Mapping[int, CopyLedger], view: GroupView, snap: TopologySnapshot,
               rng: random.Random, policy: str = "fair",
               custody_rng: random.Random | None = None) -> StepOutcome:
    """Group-level Spray-and-Wait over one snapshot.

    For every undelivered message, groups holding copies are processed as a
    work queue. For each adjacent group (at most once per pair and message):
    hand one copy over if the destination lives there; otherwise, if the
    group holds two or more copies and the neighbour none, spray a share of
    them to a random member of the neighbour. Any copy inside the
    destination's group is delivered within the step.

    ``rng`` fixes the border processing order; ``custody_rng`` (default
    ``rng``) picks receiving custodians.
    """
    t = snap.t
    out = StepOutcome(t)
    custody_rng = rng if custody_rng is None else custody_rng
    assign = view.assignment
    members, links, n_b = _group_links(view, snap, rng)
    for mid in sorted(ledgers):
        ledger = ledgers[mid]
        if ledger.delivered_at is not None:
            continue
        msg = ledger.message
        dstg = assign[msg.dst]
        held: dict[int, list[int]] = {}
        for u in ledger.copies:
            held.setdefault(assign[u], []).append(u)
        counts = {g: sum(ledger.copies[u] for u in us) for g, us in held.items()}
        if dstg in counts:
            _take(ledger, held[dstg], 0 if msg.dst in ledger.copies else 1, msg.dst, out)
            ledger.deliver(t)
            out.deliveries.append((mid, t))
            continue
        queue = deque(sorted(counts))
        acted: set[tuple[int, int]] = set()
        done = False
        while queue and not done:
            g = queue.popleft()
            for h, u, v in links[g]:
                n_c = counts.get(g, 0)
                if n_c == 0:
                    break
                if (g, h) in acted:
                    continue
                if h == dstg:
                    acted.add((g, h))
                    _take(ledger, held[g], 1, msg.dst, out)
                    ledger.deliver(t)
                    out.deliveries.append((mid, t))
                    done = True
                    break
                if n_c >= 2 and not counts.get(h):
                    acted.add((g, h))
                    want = copies_to_transfer(n_c, n_b[g], policy)
                    k = min(want, n_c - 1)
                    if k < want:
                        log.debug("t=%s msg=%s: grant capped %d -> %d to keep a copy", t, mid, want, k)
                    if k < 1:
                        continue
                    custodian = custody_rng.choice(members[h])
                    _take(ledger, held[g], k, custodian, out)
                    held[g] = [x for x in held[g] if x in ledger.copies]
                    held[h] = [custodian]
                    counts[g] = n_c - k
                    counts[h] = k
                    queue.append(h)
    return out


# --------------------------------------------------------------------------
# Spray-and-Wait, node level


def spray_wait_step(ledgers: Mapping[int, CopyLedger], snap: TopologySnapshot,
                    rng: random.Random) -> StepOutcome:
    """Adapted Spray-and-Wait: a holder of ``n > 1`` copies splits them evenly
    between itself and its copyless neighbours; single copies wait for the
    destination to become a neighbour."""
    t = snap.t
    out = StepOutcome(t)
    adj = snap.adj
    rank = list(range(snap.node_count))
    rng.shuffle(rank)
    order_adj = [sorted(nb, key=rank.__getitem__) for nb in adj]
    for mid in sorted(ledgers):
        ledger = ledgers[mid]
        if ledger.delivered_at is not None:
            continue
        copies = ledger.copies
        dst = ledger.message.dst
        queue = deque(sorted((u for u, c in copies.items() if c > 1), key=rank.__getitem__))
        while queue:
            u = queue.popleft()
            n = copies.get(u, 0)
            if n <= 1:
                continue
            free = [w for w in order_adj[u] if w not in copies]
            if not free:
                continue
            share = n // (len(free) + 1)
            if share >= 1:
                grants = [(w, share) for w in free]
            else:
                grants = [(w, 1) for w in free[: n - 1]]
            for w, k in grants:
                ledger.move(u, w, k)
                out.transfers.append(Transfer(mid, u, w, k))
                if k > 1:
                    queue.append(w)
        if dst in copies:
            ledger.deliver(t)
            out.deliveries.append((mid, t))
            continue
        for u in sorted(copies, key=rank.__getitem__):
            if dst in adj[u]:
                ledger.move(u, dst, 1)
                out.transfers.append(Transfer(mid, u, dst, 1))
                ledger.deliver(t)
                out.deliveries.append((mid, t))
                break
    return out


# --------------------------------------------------------------------------
# Epidemic


def epidemic_step(ledgers: Mapping[int, EpidemicLedger], snap: TopologySnapshot) -> StepOutcome:
    """Flood every undelivered message across the components touching its holders."""
    t = snap.t
    out = StepOutcome(t)
    masks = snap.component_masks
    comp_of = [0] * snap.node_count
    for i, comp in enumerate(snap.components):
        for u in comp:
            comp_of[u] = i
    for mid in sorted(ledgers):
        ledger = ledgers[mid]
        if ledger.delivered_at is not None:
            continue
        left, reach = ledger.mask, 0
        while left:
            low = left & -left
            c = masks[comp_of[low.bit_length() - 1]]
            reach |= c
            left &= ~c
        ledger.mask = reach
        if reach >> ledger.message.dst & 1:
            ledger.deliver(t)
            out.deliveries.append((mid, t))
    return out


def epidemic_oracle(trace: ContactTrace, msg: Message) -> int | None:
    """Earliest delivery time over the time-expanded snapshot sequence."""
    p = trace.sample_period
    holders = {msg.src}
    for k in range(msg.t_created // p + 1, trace.n_steps):
        snap = trace.snapshots[k]
        frontier = list(holders)
        while frontier:
            u = frontier.pop()
            for a, b in snap.edges:
                if a == u and b not in holders:
                    holders.add(b)
                    frontier.append(b)
                elif b == u and a not in holders:
                    holders.add(a)
                    frontier.append(a)
        if msg.dst in holders:
            return snap.t
    return None


# --------------------------------------------------------------------------
# protocol objects used by the engine


class Protocol:
    """Owns the ledgers of one run; ``pending`` holds the undelivered ones."""

    name = ""
    uses_groups = False

    def __init__(self, cfg: ProtocolConfig, rng: random.Random,
                 custody_rng: random.Random | None = None):
        self.cfg = cfg
        self.rng = rng
        self.custody_rng = custody_rng or rng
        self.ledgers: dict[int, CopyLedger] = {}
        self.pending: dict[int, CopyLedger] = {}

    def new_ledger(self, msg: Message) -> CopyLedger:
        return CopyLedger(Message(msg.id, msg.src, msg.dst, msg.t_created, self.cfg.copies))

    def inject(self, msg: Message):
        ledger = self.new_ledger(msg)
        self.ledgers[msg.id] = ledger
        self.pending[msg.id] = ledger

    def buffers(self) -> dict[int, frozenset]:
        """Message ids advertised by each node (delivered messages are dropped)."""
        held: dict[int, set] = {}
        for mid, ledger in self.pending.items():
            for u in ledger.copies:
                held.setdefault(u, set()).add(mid)
        return {u: frozenset(s) for u, s in held.items()}

    def step(self, snap: TopologySnapshot, view: GroupView | None = None) -> StepOutcome:
        out = self._step(snap, view)
        for mid, _ in out.deliveries:
            self.pending.pop(mid, None)
        return out

    def _step(self, snap, view):
        raise NotImplementedError


class Hymad(Protocol):
    name = "hymad"
    uses_groups = True

    def _step(self, snap, view):
        if view is None:
            raise ValueError("HYMAD needs the group view of this step")
        return hymad_step(self.pending, view, snap, self.rng, self.cfg.split_policy, self.custody_rng)


class SprayAndWait(Protocol):
    name = "spray_wait"

    def _step(self, snap, view):
        return spray_wait_step(self.pending, snap, self.rng)


class Epidemic(Protocol):
    name = "epidemic"

    def new_ledger(self, msg):
        return EpidemicLedger(msg)

    def _step(self, snap, view):
        return epidemic_step(self.pending, snap)


def make_protocol(cfg: ProtocolConfig, rng: random.Random,
                  custody_rng: random.Random | None = None) -> Protocol:
    cls = {"hymad": Hymad, "spray_wait": SprayAndWait, "epidemic": Epidemic}[cfg.protocol]
    return cls(cfg, rng, custody_rng)
