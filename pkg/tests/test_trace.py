import itertools
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hymad.trace import (AccordionParams, ContactEvent, ContactTrace, TopologySnapshot, TraceError,
                         bfs_distances, compute_trace_stats, connected_components,
                         generate_accordion_trace, parse_contact_trace, serialize_trace, snapshot,
                         trace_from_steps)

from conftest import random_snapshot, snap_from_edges

HEADER = "node_a,node_b,t_start,t_end\n"


# parsing ----------------------------------------------------------------

def test_header_only_is_empty_trace():
    tr = parse_contact_trace(HEADER)
    assert tr.node_count == 0 and tr.events == ()


def test_single_event_half_open():
    tr = parse_contact_trace(HEADER + "0,1,0,30\n")
    assert len(tr.events) == 1
    assert snapshot(tr, 15).edges == {(0, 1)}
    assert snapshot(tr, 30).edges == frozenset()


def test_events_canonicalized_and_sorted():
    tr = parse_contact_trace(HEADER + "3,1,30,45\n2,0,0,15\n")
    assert [(e.node_a, e.node_b, e.t_start) for e in tr.events] == [(0, 2, 0), (1, 3, 30)]


def test_labels_compacted_in_natural_order():
    tr = parse_contact_trace(HEADER + "n10,n2,0,15\nn2,n3,0,15\n")
    assert tr.labels == ("n2", "n3", "n10")
    assert tr.node_count == 3
    assert {e.pair for e in tr.events} == {(0, 2), (0, 1)}


def test_declared_node_count_keeps_isolated_nodes():
    tr = parse_contact_trace("# node_count=62\n" + HEADER + "0,61,0,15\n")
    assert tr.node_count == 62
    assert tr.events[0].pair == (0, 61)


@pytest.mark.parametrize("body, line", [
    ("0,1,30,30\n", 2),   # t_start >= t_end
    ("1,1,0,15\n", 2),    # self-contact
    ("0,1,zero,15\n", 2),
    ("0,1,15\n", 2),
    ("0,1,0,15\n0,1\n", 3),
])
def test_malformed_lines_report_line_number(body, line):
    with pytest.raises(TraceError) as ei:
        parse_contact_trace(HEADER + body)
    assert ei.value.line == line
    assert f"line {line}" in str(ei.value)


def test_missing_header_rejected():
    with pytest.raises(TraceError):
        parse_contact_trace("0,1,0,15\n")


def test_contact_event_invariants():
    with pytest.raises(ValueError):
        ContactEvent(1, 1, 0, 15)
    with pytest.raises(ValueError):
        ContactEvent(0, 1, 15, 15)
    assert ContactEvent(5, 2, 0, 15).pair == (2, 5)


# snapshots --------------------------------------------------------------

def test_snapshot_before_events_is_empty():
    tr = parse_contact_trace(HEADER + "0,1,30,60\n")
    assert snapshot(tr, 0).edges == frozenset()


def test_snapshot_overlapping_events():
    tr = parse_contact_trace(HEADER + "0,1,0,30\n1,2,15,45\n")
    assert snapshot(tr, 0).edges == {(0, 1)}
    assert snapshot(tr, 15).edges == {(0, 1), (1, 2)}
    assert snapshot(tr, 30).edges == {(1, 2)}


def test_snapshot_out_of_range():
    tr = parse_contact_trace(HEADER + "0,1,0,30\n")
    with pytest.raises(TraceError):
        snapshot(tr, tr.duration + 15)
    with pytest.raises(TraceError):
        snapshot(tr, -15)


def test_snapshots_only_at_period_multiples():
    tr = parse_contact_trace(HEADER + "0,1,5,20\n")
    # up during [5,20): only the sample at 15 sees it
    assert [s.t for s in tr.snapshots] == [0, 15]
    assert [bool(s.edges) for s in tr.snapshots] == [False, True]


# components -------------------------------------------------------------

def test_components_of_empty_graph():
    assert connected_components(snap_from_edges(3, [])) == [[0], [1], [2]]


def test_components_path_plus_isolated():
    assert connected_components(snap_from_edges(4, [(0, 1), (1, 2)])) == [[0, 1, 2], [3]]


def _closure_components(n, edges):
    reach = [[i == j for j in range(n)] for i in range(n)]
    for a, b in edges:
        reach[a][b] = reach[b][a] = True
    for k in range(n):
        for i in range(n):
            if reach[i][k]:
                for j in range(n):
                    if reach[k][j]:
                        reach[i][j] = True
    return sorted({tuple(j for j in range(n) if reach[i][j]) for i in range(n)})


@given(st.integers(1, 30), st.floats(0, 0.3), st.integers(0, 10**6))
def test_components_match_transitive_closure(n, p, seed):
    snap = random_snapshot(random.Random(seed), n, p)
    comps = connected_components(snap)
    assert [tuple(c) for c in comps] == _closure_components(n, snap.edges)
    assert sum(len(c) for c in comps) == n


@given(st.integers(2, 20), st.floats(0, 0.4), st.integers(0, 10**6))
def test_bfs_matches_floyd_warshall(n, p, seed):
    from conftest import floyd_warshall
    snap = random_snapshot(random.Random(seed), n, p)
    fw = floyd_warshall(range(n), snap.edges)
    for s in range(n):
        d = bfs_distances(snap.adj, s)
        for v in range(n):
            assert d.get(v, float("inf")) == fw[s, v]


# round trip -------------------------------------------------------------

@st.composite
def step_traces(draw):
    n = draw(st.integers(2, 8))
    pairs = list(itertools.combinations(range(n), 2))
    steps = draw(st.lists(st.sets(st.sampled_from(pairs)), min_size=1, max_size=12))
    return trace_from_steps(n, steps, 15)


@given(step_traces())
def test_parse_serialize_round_trip(tr):
    back = parse_contact_trace(serialize_trace(tr))
    assert back == tr
    assert serialize_trace(back) == serialize_trace(tr)


@given(step_traces())
def test_snapshot_edges_come_from_events(tr):
    pairs = {e.pair for e in tr.events}
    for s in tr.snapshots:
        assert s.edges <= pairs
        for u, v in s.edges:
            assert u < v and u in s.adj[v] and v in s.adj[u]


# statistics -------------------------------------------------------------

def test_single_event_link_lifetime():
    tr = parse_contact_trace(HEADER + "0,1,0,30\n")
    assert compute_trace_stats(tr).mean_link_lifetime == 30


def test_toggling_link_hand_enumerated():
    # up, down, up, down, up: three 1-step intervals
    tr = trace_from_steps(2, [[(0, 1)], [], [(0, 1)], [], [(0, 1)]], 15)
    st_ = compute_trace_stats(tr)
    assert st_.mean_link_lifetime == 15
    # every connected (pair, step) has its path alive for exactly one step
    assert st_.mean_path_lifetime == 15
    assert st_.degree_series == [1.0, 0.0, 1.0, 0.0, 1.0]
    assert st_.cc_count_series == [1, 2, 1, 2, 1]
    assert st_.cc_count_nonisolated_series == [1, 0, 1, 0, 1]
    assert st_.mean_unique_contacts == 1


def test_constant_topology_lifetimes():
    steps = 6
    tr = trace_from_steps(3, [[(0, 1), (1, 2)]] * steps, 15)
    s = compute_trace_stats(tr)
    assert s.mean_link_lifetime == tr.duration
    # each step k has the path alive for the remaining steps - k
    expected = np.mean([(steps - k) * 15 for k in range(steps)])
    assert s.mean_path_lifetime == pytest.approx(expected)


def test_path_lifetime_uses_min_link_on_canonical_path():
    # 0-1 up for 3 steps, 1-2 up for 1 step: path 0->2 survives 1 step
    tr = trace_from_steps(3, [[(0, 1), (1, 2)], [(0, 1)], [(0, 1)]], 15)
    s = compute_trace_stats(tr)
    # step 0: pairs (0,1),(1,0): 3 steps; (1,2),(2,1),(0,2),(2,0): 1 step
    # step 1: (0,1),(1,0): 2 steps; step 2: 1 step each
    lives = [3, 3, 1, 1, 1, 1, 2, 2, 1, 1]
    assert s.mean_path_lifetime == pytest.approx(15 * sum(lives) / len(lives))


@given(step_traces())
def test_stats_non_negative_and_ordered(tr):
    s = compute_trace_stats(tr)
    assert all(x >= 0 for x in s.degree_series)
    assert all(b <= a for a, b in zip(s.cc_count_series, s.cc_count_nonisolated_series))
    assert s.mean_link_lifetime >= 0 and s.mean_path_lifetime >= 0 and s.mean_unique_contacts >= 0


# accordion --------------------------------------------------------------

def test_accordion_cliques_only():
    p = AccordionParams(node_count=20, social_group_size=4, n_steps=10, p_intra=1.0,
                        p_inter_contracted=0.0, p_inter_expanded=0.0)
    tr = generate_accordion_trace(p)
    for s in tr.snapshots:
        comps = connected_components(s)
        assert len(comps) == p.n_groups
        for c in comps:
            assert len({p.social_group(u) for u in c}) == 1
            assert len(s.edges & set(itertools.combinations(c, 2))) == len(c) * (len(c) - 1) // 2


def test_accordion_contracted_phase_connected():
    p = AccordionParams(node_count=20, n_steps=40, p_intra=1.0, p_inter_contracted=1.0,
                        p_inter_expanded=0.0)
    tr = generate_accordion_trace(p)
    for k, s in enumerate(tr.snapshots):
        if p.contracted(k):
            assert len(connected_components(s)) == 1


def test_accordion_phases_alternate(accordion):
    p = AccordionParams(seed=3)
    cc = compute_trace_stats(accordion).cc_count_series
    con = [c for k, c in enumerate(cc) if p.contracted(k)]
    exp = [c for k, c in enumerate(cc) if not p.contracted(k)]
    assert np.mean(con) < np.mean(exp)


def test_accordion_deterministic():
    a = generate_accordion_trace(AccordionParams(node_count=12, n_steps=15, seed=9))
    b = generate_accordion_trace(AccordionParams(node_count=12, n_steps=15, seed=9))
    assert a == b


@pytest.mark.parametrize("kw", [dict(p_intra=1.5), dict(p_inter_contracted=-0.1),
                                dict(p_inter_contracted=0.01, p_inter_expanded=0.2),
                                dict(social_group_size=0)])
def test_accordion_rejects_bad_params(kw):
    with pytest.raises(ValueError):
        AccordionParams(**kw)


def test_trace_validates_node_range():
    with pytest.raises(TraceError):
        ContactTrace(2, (ContactEvent(0, 2, 0, 15),), 15)
