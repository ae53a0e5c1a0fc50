#!/usr/bin/env python3
"""
Grid model tests: feeder parsing, partitioning, aggregation, comm graph
"""
import io
import os
import sys
from fractions import Fraction

import numpy as np
import pytest

# Add lib to path
sys.path.insert(0, os.path.dirname(__file__))

from lib.errors import DisconnectedGraphError, FeederDataError
from lib.grid_model import (
    GENERATOR_NODES, TIE_LINKS, aggregate, build_agents, build_grid,
    build_test_feeder, derive_comm_graph, describe_topology, export_partition,
    is_connected, partition_grid, read_dataset_file, read_feeder_file,
)
from lib.types import GeneratorParams, Node, Partition, edge_key

SHIPPED_SEED = 49
SHIPPED_PAIRS = ((54, 94), (151, 300))


@pytest.fixture(scope='module')
def feeder():
    return build_test_feeder()


def path_grid(n, generators=()):
    """Nodes 1..n on a line; `generators` maps node -> GeneratorParams"""
    gens = dict(generators)
    nodes = {i: Node(i, 1.0, gens.get(i)) for i in range(1, n + 1)}
    return build_grid(nodes, [(i, i + 1) for i in range(1, n)])


def ring_grid(n):
    nodes = {i: Node(i, 1.0) for i in range(1, n + 1)}
    return build_grid(nodes, [(i, i % n + 1) for i in range(1, n + 1)])


def random_grid(rng):
    """Random tree on 1..n plus a few chords, 10 <= n <= 60"""
    n = int(rng.integers(10, 61))
    edges = {(int(rng.integers(1, i)), i) for i in range(2, n + 1)}
    for _ in range(int(rng.integers(0, n // 4 + 1))):
        a, b = (int(x) for x in rng.choice(np.arange(1, n + 1), size=2, replace=False))
        edges.add(edge_key(a, b))
    return build_grid({i: Node(i, 1.0) for i in range(1, n + 1)}, edges)


def clusters_connected(grid, partition):
    return all(
        is_connected([e for e in grid.edges if e[0] in set(m) and e[1] in set(m)], m)
        for m in partition.members()
    )


def survives_without(grid, partition, pairs):
    """Cluster graph stays connected with the links between separated clusters down"""
    a = partition.assignment
    down = {edge_key(a[x], a[y]) for x, y in pairs}
    links = {edge_key(a[x], a[y]) for x, y in grid.edges if a[x] != a[y]}
    return is_connected(links - down, range(partition.cluster_count))


# =========================================================================
# FEEDER
# =========================================================================

def test_feeder_has_123_nodes_and_five_generators(feeder):
    assert len(feeder.nodes) == 123
    assert feeder.generator_nodes == sorted(GENERATOR_NODES)
    assert 144 in feeder.nodes
    for a, b in TIE_LINKS:
        assert edge_key(a, b) in feeder.edges


def test_feeder_is_connected_and_feasible(feeder):
    assert is_connected(feeder.edges, feeder.node_ids)
    capacity = sum(feeder.nodes[n].generator.p_max for n in feeder.generator_nodes)
    assert 0 < feeder.total_load < capacity


def test_feeder_excludes_transformer_records(feeder):
    assert 610 not in feeder.nodes
    assert 150 not in feeder.nodes


def test_feeder_file_rejects_unknown_kind(tmp_path):
    path = tmp_path / 'feeder.txt'
    path.write_text("1 2\n2 3 cable\n")
    with pytest.raises(FeederDataError, match=':2'):
        read_feeder_file(path)


def test_feeder_file_defaults_to_line(tmp_path):
    path = tmp_path / 'feeder.txt'
    path.write_text("# comment\n1 2\n2 3 switch  # trailing\n")
    assert read_feeder_file(path) == [(1, 2, 'line'), (2, 3, 'switch')]


def test_dataset_parses_generators_and_rejects_duplicates(tmp_path):
    path = tmp_path / 'data.txt'
    path.write_text("1 0.5 0.01 5 0 10\n2 0.25\n")
    nodes = read_dataset_file(path)
    assert nodes[1].generator == GeneratorParams(c1=0.01, c2=5, p_min=0, p_max=10)
    assert nodes[2].generator is None

    path.write_text("1 0.5\n1 0.7\n")
    with pytest.raises(FeederDataError, match='duplicate'):
        read_dataset_file(path)


def test_dataset_rejects_bad_rows(tmp_path):
    path = tmp_path / 'data.txt'
    path.write_text("1 0.5 0.01 5\n")
    with pytest.raises(FeederDataError, match='columns'):
        read_dataset_file(path)
    path.write_text("1 -0.5\n")
    with pytest.raises(FeederDataError):
        read_dataset_file(path)
    path.write_text("1 0.5 0 5 0 10\n")
    with pytest.raises(FeederDataError, match='c1'):
        read_dataset_file(path)


def test_build_grid_validates_edges():
    nodes = {1: Node(1, 1.0), 2: Node(2, 1.0)}
    with pytest.raises(FeederDataError, match='unknown node'):
        build_grid(nodes, [(1, 3)])
    with pytest.raises(FeederDataError, match='self-loop'):
        build_grid(nodes, [(1, 1)])
    with pytest.raises(DisconnectedGraphError):
        build_grid({**nodes, 3: Node(3, 1.0)}, [(1, 2)])


# =========================================================================
# PARTITION
# =========================================================================

@pytest.mark.parametrize('k', [1, 2, 3, 6, 12, 24, 48, 123])
def test_partition_total_connected_nonempty(feeder, k):
    partition = partition_grid(feeder, k, SHIPPED_SEED)
    assert partition.cluster_count == k
    assert set(partition.assignment) == set(feeder.nodes)
    assert all(size >= 1 for size in partition.sizes())
    assert clusters_connected(feeder, partition)


@pytest.mark.parametrize('k', [6, 12, 24, 48, 123])
def test_partition_sizes_respect_widening(feeder, k):
    partition = partition_grid(feeder, k, SHIPPED_SEED)
    n = len(feeder.nodes)
    lower = max(1, n // k - partition.widening)
    upper = -(-n // k) + partition.widening
    assert all(lower <= size <= upper for size in partition.sizes())


@pytest.mark.parametrize('k,low,high', [(6, 18, 23), (12, 8, 13), (24, 4, 7), (48, 2, 3), (123, 1, 1)])
def test_partition_sizes_on_shipped_feeder(feeder, k, low, high):
    sizes = partition_grid(feeder, k, SHIPPED_SEED).sizes()
    assert low <= min(sizes) and max(sizes) <= high


def test_partition_is_deterministic(feeder):
    first = partition_grid(feeder, 12, 7)
    second = partition_grid(feeder, 12, 7)
    assert first.assignment == second.assignment


def test_partition_trivial_levels():
    grid = path_grid(5)
    single = partition_grid(grid, 1)
    assert single.sizes() == [5]
    full = partition_grid(grid, 5)
    assert full.sizes() == [1] * 5


def test_partition_path_is_exactly_balanced():
    grid = path_grid(12)
    partition = partition_grid(grid, 4)
    assert partition.sizes() == [3, 3, 3, 3]
    assert partition.widening == 0
    # clusters labelled by smallest member
    assert partition.assignment[1] == 0 and partition.assignment[12] == 3


def test_partition_rejects_bad_k():
    grid = path_grid(3)
    with pytest.raises(ValueError):
        partition_grid(grid, 0)
    with pytest.raises(ValueError):
        partition_grid(grid, 4)


def test_partition_type_rejects_unused_cluster():
    with pytest.raises(ValueError):
        Partition(3, {1: 0, 2: 1, 3: 1})


def test_average_cluster_size_is_exact(feeder):
    assert partition_grid(feeder, 24, SHIPPED_SEED).average_cluster_size() == Fraction(123, 24)


def test_export_partition_format():
    partition = partition_grid(path_grid(4), 2)
    out = io.StringIO()
    export_partition(partition, out)
    lines = out.getvalue().splitlines()
    assert lines[0].startswith('# K=2 seed=0')
    assert lines[1:] == ['1 0', '2 0', '3 1', '4 1']


def test_separation_reruns_search_when_pair_is_absorbed():
    grid = ring_grid(6)
    assert partition_grid(grid, 3).assignment == {1: 0, 2: 0, 3: 1, 4: 1, 5: 2, 6: 2}
    partition = partition_grid(grid, 3, separate=[(4, 3)])
    assert partition.assignment == {1: 0, 2: 1, 3: 1, 4: 2, 5: 2, 6: 0}
    assert partition.separated == ((3, 4),)
    assert partition.widening == 0
    assert survives_without(grid, partition, [(3, 4)])


def test_separation_keeps_partition_that_already_splits_pair():
    grid = ring_grid(6)
    partition = partition_grid(grid, 3, separate=[(2, 3)])
    assert partition.assignment == partition_grid(grid, 3).assignment
    assert partition.separated == ()


def test_separation_that_would_island_falls_back():
    # on a path the separated edge is the only link between the two sides
    grid = path_grid(6)
    partition = partition_grid(grid, 2, separate=[(2, 3)])
    assert partition.sizes() == [3, 3]
    assert partition.assignment[2] == partition.assignment[3]
    assert partition.separated == ()


def test_separation_ignored_for_single_cluster_and_bad_pairs():
    grid = ring_grid(6)
    assert partition_grid(grid, 1, separate=[(3, 4)]).sizes() == [6]
    assert partition_grid(grid, 3, separate=[(1, 99), (2, 2)]).separated == ()


def test_random_graphs_partition_properties():
    rng = np.random.default_rng(5)
    for index in range(30):
        grid = random_grid(rng)
        n = len(grid.nodes)
        k = int(rng.integers(1, n + 1))
        pairs = []
        if index % 3 == 0:
            pairs = [sorted(grid.edges)[int(rng.integers(len(grid.edges)))]]
        partition = partition_grid(grid, k, int(rng.integers(0, 1000)), pairs)

        assert partition.cluster_count == k
        assert set(partition.assignment) == set(grid.nodes)
        assert clusters_connected(grid, partition)
        lower = max(1, n // k - partition.widening)
        upper = -(-n // k) + partition.widening
        assert all(lower <= size <= upper for size in partition.sizes())
        if partition.separated:
            for a, b in partition.separated:
                assert partition.assignment[a] != partition.assignment[b]
            assert survives_without(grid, partition, partition.separated)



# =========================================================================
# AGGREGATION + COMM GRAPH
# =========================================================================

def test_aggregate_sums_loads_and_collects_units():
    gen = GeneratorParams(c1=0.1, c2=1.0, p_max=10)
    grid = path_grid(4, {3: gen})
    partition = Partition(2, {1: 0, 2: 0, 3: 1, 4: 1})
    agents = aggregate(grid, partition)
    assert [a.load for a in agents] == [2.0, 2.0]
    assert agents[0].units == ()
    assert agents[0].host == 1
    assert agents[1].units == (gen,)
    assert agents[1].unit_nodes == (3,)
    assert agents[1].host == 3


def test_aggregate_requires_full_cover():
    grid = path_grid(3)
    with pytest.raises(ValueError):
        aggregate(grid, Partition(1, {1: 0, 2: 0}))


def test_comm_graph_follows_boundary_edges():
    grid = path_grid(6)
    partition = Partition(3, {1: 0, 2: 0, 3: 1, 4: 1, 5: 2, 6: 2})
    agents = aggregate(grid, partition)
    comm = derive_comm_graph(grid, agents, partition)
    assert comm.edges == frozenset({(0, 1), (1, 2)})
    assert comm.neighbors == {0: (1,), 1: (0, 2), 2: (1,)}
    assert comm.max_degree == 2


def test_full_granularity_comm_graph_equals_grid(feeder):
    partition, agents, comm = build_agents(feeder, 123, SHIPPED_SEED)
    relabelled = {
        edge_key(partition.assignment[a], partition.assignment[b]) for a, b in feeder.edges
    }
    assert comm.edges == frozenset(relabelled)
    assert is_connected(comm.edges, comm.agent_ids)


@pytest.mark.parametrize('k,widening', [(6, 3), (12, 2), (24, 1), (48, 0)])
def test_tie_links_cross_cluster_boundaries(feeder, k, widening):
    partition = partition_grid(feeder, k, SHIPPED_SEED, SHIPPED_PAIRS)
    for a, b in SHIPPED_PAIRS:
        assert partition.assignment[a] != partition.assignment[b]
    assert partition.separated == SHIPPED_PAIRS
    assert partition.widening == widening
    assert clusters_connected(feeder, partition)
    assert survives_without(feeder, partition, SHIPPED_PAIRS)


@pytest.mark.parametrize('k', [6, 12, 24, 48])
def test_unconstrained_partition_absorbs_some_tie_link(feeder, k):
    partition = partition_grid(feeder, k, SHIPPED_SEED)
    assert any(partition.assignment[a] == partition.assignment[b] for a, b in SHIPPED_PAIRS)
    assert partition.separated == ()


def test_full_granularity_needs_no_forced_separation(feeder):
    partition = partition_grid(feeder, 123, SHIPPED_SEED, SHIPPED_PAIRS)
    assert partition.separated == ()
    assert partition.sizes() == [1] * 123


def test_describe_topology_marks_generation(feeder):
    _, agents, comm = build_agents(feeder, 6, SHIPPED_SEED)
    rows = describe_topology(comm)
    assert len(rows) == 6
    assert sum(row['members'] for row in rows) == 123
    owners = {row['agent_id'] for row in rows if row['has_generation']}
    assert owners == {a.id for a in agents if a.units}
    for row in rows:
        if row['has_generation']:
            assert feeder.nodes[row['host']].generator is not None
