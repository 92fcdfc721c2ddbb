import itertools
import random

import pytest
from hypothesis import settings

from hymad.trace import AccordionParams, TopologySnapshot, generate_accordion_trace, trace_from_steps

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_snapshot(rng: random.Random, n: int, p: float, t: int = 0) -> TopologySnapshot:
    edges = frozenset((a, b) for a, b in itertools.combinations(range(n), 2) if rng.random() < p)
    return TopologySnapshot(t, n, edges)


def snap_from_edges(n, edges, t=0) -> TopologySnapshot:
    return TopologySnapshot(t, n, frozenset(tuple(sorted(e)) for e in edges))


def floyd_warshall(nodes, edges):
    """All-pairs hop distances restricted to ``nodes``; inf where unreachable."""
    nodes = sorted(nodes)
    inf = float("inf")
    d = {(u, v): (0 if u == v else inf) for u in nodes for v in nodes}
    for a, b in edges:
        if (a, b) in d:
            d[a, b] = d[b, a] = 1
    for k in nodes:
        for i in nodes:
            for j in nodes:
                if d[i, k] + d[k, j] < d[i, j]:
                    d[i, j] = d[i, k] + d[k, j]
    return d


def random_trace(rng: random.Random, n: int = 10, steps: int = 20, p: float = 0.15, period: int = 15):
    step_edges = [[(a, b) for a, b in itertools.combinations(range(n), 2) if rng.random() < p]
                  for _ in range(steps)]
    return trace_from_steps(n, step_edges, period)


@pytest.fixture(scope="session")
def accordion():
    return generate_accordion_trace(AccordionParams(seed=3))
