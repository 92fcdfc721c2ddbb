"""Evaluation artifacts derived from run results."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .engine import RunResult
from .trace import TopologySnapshot


@dataclass(frozen=True)
class DeliveryCDF:
    points: tuple[tuple[int, float], ...]
    sample_period: int

    @property
    def ratio(self) -> float:
        return self.points[-1][1] if self.points else 0.0

    def at(self, delay: float) -> float:
        """Cumulative delivery probability for delays up to ``delay``."""
        best = 0.0
        for d, p in self.points:
            if d > delay:
                break
            best = p
        return best


@dataclass(frozen=True)
class Summary:
    injected: int
    delivered: int
    ratio: float
    mean_delay: float | None
    p50: float | None
    p90: float | None
    p99: float | None

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class StabilitySeries:
    times: tuple[int, ...]
    link_changes: tuple[float, ...]
    membership_changes: tuple[float, ...]

    def mean(self) -> tuple[float, float]:
        return float(np.mean(self.link_changes)), float(np.mean(self.membership_changes))


def _pooled_delays(results: Sequence[RunResult]) -> tuple[list[int], int]:
    if not results:
        raise ValueError("no run results")
    periods = {r.sample_period for r in results}
    if len(periods) != 1:
        raise ValueError(f"results mix sample periods {sorted(periods)}")
    delays, n = [], 0
    for r in results:
        n += len(r.records)
        delays.extend(rec.delay for rec in r.records if rec.delay is not None)
    return delays, n


def delivery_cdf(results: Sequence[RunResult], horizon: int | None = None) -> DeliveryCDF:
    """Pooled CDF of delivery delay; undelivered messages stay in the denominator.

    Points sit at every multiple of the sample period from one period up
    to the largest observed delay (or ``horizon`` if larger).
    """
    delays, n = _pooled_delays(results)
    p = results[0].sample_period
    top = max(delays, default=p)
    if horizon is not None:
        top = max(top, horizon)
    grid = np.arange(p, top + p, p)
    if n == 0:
        return DeliveryCDF(tuple((int(d), 0.0) for d in grid), p)
    counts = np.searchsorted(np.sort(np.asarray(delays, dtype=np.int64)), grid, side="right")
    return DeliveryCDF(tuple((int(d), float(c) / n) for d, c in zip(grid, counts)), p)


def summarize(results: Sequence[RunResult]) -> Summary:
    delays, n = _pooled_delays(results)
    if not delays:
        return Summary(n, 0, 0.0, None, None, None, None)
    arr = np.asarray(delays, dtype=float)
    p50, p90, p99 = (float(x) for x in np.percentile(arr, [50, 90, 99]))
    return Summary(n, len(delays), len(delays) / n if n else 0.0, float(arr.mean()), p50, p90, p99)


def group_stability(assignments: Sequence, snaps: Sequence[TopologySnapshot]) -> StabilitySeries:
    """Per-step churn seen from each node's own group, averaged over nodes.

    ``assignments[k]`` maps node -> group id at step ``k`` (a ``GroupView``
    works too). For each step after the first, a node counts the members
    that joined or left its group, and the snapshot links among its current
    co-members that appeared or vanished.
    """
    if len(assignments) != len(snaps):
        raise ValueError("assignments and snapshots are not aligned")
    if len(snaps) < 2:
        raise ValueError("stability needs at least two steps")
    groups = [_member_sets(a) for a in assignments]
    times, links, members = [], [], []
    for k in range(1, len(snaps)):
        prev_g, cur_g = groups[k - 1], groups[k]
        flips = snaps[k - 1].edges ^ snaps[k].edges
        n = len(cur_g)
        lc = mc = 0
        for u in range(n):
            now = cur_g[u]
            mc += len(now ^ prev_g[u])
            lc += sum(1 for a, b in flips if a in now and b in now)
        times.append(snaps[k].t)
        links.append(lc / n)
        members.append(mc / n)
    return StabilitySeries(tuple(times), tuple(links), tuple(members))


def _member_sets(assign) -> list[frozenset]:
    if hasattr(assign, "assignment"):
        assign = assign.assignment
    if isinstance(assign, dict):
        assign = [assign[u] for u in range(len(assign))]
    by_gid: dict[int, set] = {}
    for u, g in enumerate(assign):
        by_gid.setdefault(g, set()).add(u)
    frozen = {g: frozenset(s) for g, s in by_gid.items()}
    return [frozen[g] for g in assign]


# --------------------------------------------------------------------------
# writers, all returning text so callers control where and how it lands


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(round(x, 10)) if math.isfinite(x) else str(x)
    return str(x)


def write_csv(header: Iterable[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(header))
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def cdf_csv(cdf: DeliveryCDF) -> str:
    return write_csv(["delay_s", "probability"], cdf.points)


def merged_cdf_csv(cdfs: dict[str, DeliveryCDF]) -> str:
    """One delay column plus one probability column per protocol."""
    names = list(cdfs)
    delays = sorted({d for c in cdfs.values() for d, _ in c.points})
    rows = [[d] + [cdfs[k].at(d) for k in names] for d in delays]
    return write_csv(["delay_s"] + names, rows)


def stability_csv(series: StabilitySeries) -> str:
    return write_csv(["t", "link_changes", "membership_changes"],
                     zip(series.times, series.link_changes, series.membership_changes))
