"""
Grid Model - feeder construction, partitioning into superagents, communication graph

Flow:
1. build_test_feeder(feeder_path, dataset_path) -> Grid (transformers dropped, tie links added)
2. partition_grid(grid, k, seed, separate) -> Partition (connected, balanced, nested across levels,
   scheduled link pairs kept in different clusters when possible)
3. aggregate(grid, partition) -> SuperAgent list
4. derive_comm_graph(grid, agents, partition) -> CommGraph
"""
import logging
from collections import deque
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, TextIO, Tuple

import networkx as nx

from .errors import DisconnectedGraphError, FeederDataError
from .types import CommGraph, Edge, GeneratorParams, Grid, Node, Partition, SuperAgent, edge_key

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent.parent / 'data'
DEFAULT_FEEDER = DATA_DIR / 'ieee123_feeder.txt'
DEFAULT_DATASET = DATA_DIR / 'ieee123_dataset.txt'

# Normally-open switches replaced by physical + communication connections
TIE_LINKS: Tuple[Edge, ...] = ((13, 152), (18, 135), (54, 94), (60, 160), (97, 197), (151, 300))
GENERATOR_NODES: Tuple[int, ...] = (1, 35, 60, 76, 144)

EDGE_KINDS = ('line', 'switch', 'transformer', 'substation')

# Separation search: widenings tried above the unconstrained one, global roots tried at the requested level
SEPARATION_SLACK = 4
SEPARATION_ROOTS = 16


# =========================================================================
# FILE PARSING
# =========================================================================

def _data_lines(stream: TextIO) -> Iterable[Tuple[int, List[str]]]:
    for lineno, raw in enumerate(stream, start=1):
        text = raw.split('#', 1)[0].strip()
        if text:
            yield lineno, text.split()


def _parse_int(token: str, where: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise FeederDataError(f"{where}: expected integer node id, got '{token}'")


def _parse_float(token: str, where: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise FeederDataError(f"{where}: expected number, got '{token}'")


def read_feeder_file(path: Path) -> List[Tuple[int, int, str]]:
    """
    Parse `<node_a> <node_b> [kind]` records (kind defaults to `line`)
    """
    records = []
    with open(path) as stream:
        for lineno, fields in _data_lines(stream):
            where = f"{path}:{lineno}"
            if len(fields) not in (2, 3):
                raise FeederDataError(f"{where}: expected '<node_a> <node_b> [kind]'")
            kind = fields[2] if len(fields) == 3 else 'line'
            if kind not in EDGE_KINDS:
                raise FeederDataError(f"{where}: unknown record kind '{kind}'")
            records.append((_parse_int(fields[0], where), _parse_int(fields[1], where), kind))
    return records


def read_dataset_file(path: Path) -> Dict[int, Node]:
    """
    Parse `node_id load_MW [c1 c2 p_min p_max]` rows
    """
    nodes: Dict[int, Node] = {}
    with open(path) as stream:
        for lineno, fields in _data_lines(stream):
            where = f"{path}:{lineno}"
            if len(fields) not in (2, 6):
                raise FeederDataError(f"{where}: expected 2 or 6 columns, got {len(fields)}")
            node_id = _parse_int(fields[0], where)
            if node_id in nodes:
                raise FeederDataError(f"{where}: duplicate row for node {node_id}")
            values = [_parse_float(token, where) for token in fields[1:]]
            generator = None
            if len(values) == 5:
                c1, c2, p_min, p_max = values[1:]
                try:
                    generator = GeneratorParams(c1=c1, c2=c2, p_min=p_min, p_max=p_max)
                except ValueError as e:
                    raise FeederDataError(f"{where}: {e}")
            try:
                nodes[node_id] = Node(id=node_id, load=values[0], generator=generator)
            except ValueError as e:
                raise FeederDataError(f"{where}: {e}")
    return nodes


# =========================================================================
# GRID CONSTRUCTION
# =========================================================================

def build_grid(nodes: Dict[int, Node], edges: Iterable[Edge]) -> Grid:
    """
    Validate referential integrity and connectivity, return the Grid
    """
    edge_set = set()
    for a, b in edges:
        if a == b:
            raise FeederDataError(f"self-loop on node {a}")
        for endpoint in (a, b):
            if endpoint not in nodes:
                raise FeederDataError(f"edge ({a}, {b}) references unknown node {endpoint}")
        edge_set.add(edge_key(a, b))

    grid = Grid(nodes=dict(nodes), edges=frozenset(edge_set))
    if not is_connected(grid.edges, grid.node_ids):
        raise DisconnectedGraphError(f"grid with {len(grid.nodes)} nodes is not connected")
    return grid


def build_test_feeder(
    feeder_path: Path = DEFAULT_FEEDER,
    dataset_path: Path = DEFAULT_DATASET,
    tie_links: Sequence[Edge] = TIE_LINKS,
) -> Grid:
    """
    Modified IEEE 123-node feeder: line records only, plus the tie links
    """
    nodes = read_dataset_file(Path(dataset_path))
    records = read_feeder_file(Path(feeder_path))

    edges = [(a, b) for a, b, kind in records if kind == 'line']
    skipped = len(records) - len(edges)
    edges.extend(tie_links)

    grid = build_grid(nodes, edges)
    logger.info(
        f"🔌 Feeder built: {len(grid.nodes)} nodes, {len(grid.edges)} edges "
        f"({skipped} switch/transformer records dropped, {len(tie_links)} tie links), "
        f"generators at {grid.generator_nodes}"
    )
    return grid


def is_connected(edges: Iterable[Edge], vertices: Iterable[int]) -> bool:
    """True iff one component spans all vertices; empty vertex set counts as connected"""
    graph = nx.Graph()
    graph.add_nodes_from(vertices)
    if graph.number_of_nodes() == 0:
        return True
    graph.add_edges_from(
        (a, b) for a, b in edges if a in graph and b in graph
    )
    return nx.is_connected(graph)


# =========================================================================
# PARTITIONING
# =========================================================================

def _smallest_prime_factor(k: int) -> int:
    d = 2
    while d * d <= k:
        if k % d == 0:
            return d
        d += 1
    return k


def _bfs_tree(
    adjacency: Dict[int, List[int]], members: set, root: int, skipped: FrozenSet[Edge] = frozenset()
) -> Tuple[List[int], Dict[int, List[int]]]:
    order = [root]
    children: Dict[int, List[int]] = {root: []}
    queue = deque([root])
    while queue:
        node = queue.popleft()
        for neighbor in adjacency[node]:
            if neighbor in members and neighbor not in children and edge_key(node, neighbor) not in skipped:
                children[neighbor] = []
                children[node].append(neighbor)
                order.append(neighbor)
                queue.append(neighbor)
    return order, children


def _pair_masks(members: set, pairs: Sequence[Edge]) -> Tuple[Dict[int, int], List[int]]:
    """Node flag bits (2i for the first end of pair i, 2i+1 for the second) and per-pair conflict masks"""
    flags: Dict[int, int] = {}
    conflicts = []
    for a, b in pairs:
        if a not in members or b not in members:
            continue
        i = len(conflicts)
        flags[a] = flags.get(a, 0) | (1 << (2 * i))
        flags[b] = flags.get(b, 0) | (1 << (2 * i + 1))
        conflicts.append(3 << (2 * i))
    return flags, conflicts


def _split_tree(
    adjacency: Dict[int, List[int]],
    members: Sequence[int],
    root: int,
    parts: int,
    lower: int,
    upper: int,
    pairs: Sequence[Edge] = (),
    skipped: FrozenSet[Edge] = frozenset(),
) -> Optional[Dict[int, int]]:
    """
    Cut the BFS spanning tree of `members` into `parts` connected pieces with
    sizes in [lower, upper]; None when no such cut exists.

    Tree DP over states (pending, completed, flags): `pending` is the size of
    the piece still open at a node, `completed` the number of pieces already
    closed below it, `flags` the pair ends inside the open piece. A merge that
    would hold both ends of a pair is rejected. Edges in `skipped` stay out of
    the spanning tree.
    """
    member_set = set(members)
    order, children = _bfs_tree(adjacency, member_set, root, skipped)
    if len(order) != len(member_set) and skipped:
        # a skipped bridge; the pair masks still force the cut
        order, children = _bfs_tree(adjacency, member_set, root)
    if len(order) != len(member_set):
        return None
    flags, conflicts = _pair_masks(member_set, pairs)

    states: Dict[int, List[Tuple[int, int, int]]] = {}
    steps: Dict[int, List[Dict[Tuple[int, int, int], Tuple[int, int, int, int, int, int, bool]]]] = {}
    for node in reversed(order):
        current = [(1, 0, flags.get(node, 0))]
        node_steps = []
        for child in children[node]:
            combined: Dict[Tuple[int, int, int], Tuple[int, int, int, int, int, int, bool]] = {}
            for pending, done, mask in current:
                for child_pending, child_done, child_mask in states[child]:
                    merged = (pending + child_pending, done + child_done, mask | child_mask)
                    if (
                        merged[0] <= upper and merged[1] < parts and merged not in combined
                        and not any((merged[2] & c) == c for c in conflicts)
                    ):
                        combined[merged] = (pending, done, mask, child_pending, child_done, child_mask, False)
                    cut = (pending, done + child_done + 1, mask)
                    if child_pending >= lower and cut[1] < parts and cut not in combined:
                        combined[cut] = (pending, done, mask, child_pending, child_done, child_mask, True)
            node_steps.append(combined)
            current = sorted(combined)
        states[node] = current
        steps[node] = node_steps

    final = next(
        (s for s in states[root] if s[1] == parts - 1 and lower <= s[0] <= upper),
        None,
    )
    if final is None:
        return None

    labels: Dict[int, int] = {}
    next_label = 1
    stack = [(root, final, 0)]
    while stack:
        node, state, label = stack.pop()
        labels[node] = label
        for index in range(len(children[node]) - 1, -1, -1):
            pending, done, mask, child_pending, child_done, child_mask, is_cut = steps[node][index][state]
            child_label = label
            if is_cut:
                child_label = next_label
                next_label += 1
            stack.append((children[node][index], (child_pending, child_done, child_mask), child_label))
            state = (pending, done, mask)
    return labels


def _relabel(assignment: Dict[int, int], node_ids: Sequence[int]) -> Dict[int, int]:
    """Cluster ids in order of each cluster's smallest node id"""
    mapping: Dict[int, int] = {}
    for nid in node_ids:
        mapping.setdefault(assignment[nid], len(mapping))
    return {nid: mapping[assignment[nid]] for nid in node_ids}


def _survives_separation(grid: Grid, assignment: Dict[int, int], pairs: Sequence[Edge]) -> bool:
    """True iff the cluster graph stays connected once every separated pair's cluster link is down"""
    down = {edge_key(assignment[a], assignment[b]) for a, b in pairs}
    links = {
        edge_key(assignment[a], assignment[b]) for a, b in grid.edges
        if assignment[a] != assignment[b]
    }
    return is_connected(links - down, set(assignment.values()))


class _LevelSearch:
    """
    Nested-then-global search over the levels k, k/p, k/p/q, ... (p, q smallest prime factors)

    Unconstrained: every level opens the window from widening 0 and splits
    from one seeded root. Constrained (`pairs` given): every level keeps the
    pairs in different clusters, starts at the unconstrained widening
    (`floors`) and gives up SEPARATION_SLACK steps later; the requested level
    also has to survive losing the separated links, trying up to
    SEPARATION_ROOTS global roots in seeded order.
    """

    def __init__(
        self, grid: Grid, seed: int,
        pairs: Sequence[Edge] = (), floors: Optional[Dict[int, int]] = None,
    ):
        self.grid = grid
        self.seed = seed
        self.n = len(grid.nodes)
        self.adjacency = grid.adjacency()
        self.node_ids = grid.node_ids
        self.pairs = tuple(sorted(pairs))
        self.skipped = frozenset(pair for pair in self.pairs if pair in grid.edges)
        self.floors = floors
        self.memo: Dict[int, Optional[Partition]] = {}

    @property
    def constrained(self) -> bool:
        return bool(self.pairs)

    def level(self, count: int, target: bool = False) -> Optional[Partition]:
        if count in self.memo:
            return self.memo[count]
        if count == 1:
            result = None if self.constrained else Partition(1, {nid: 0 for nid in self.node_ids}, seed=self.seed)
        elif count == self.n:
            result = Partition(self.n, {nid: i for i, nid in enumerate(self.node_ids)}, seed=self.seed)
        else:
            result = self._balanced_level(count, target)
        self.memo[count] = result
        return result

    def _balanced_level(self, count: int, target: bool) -> Optional[Partition]:
        n = self.n
        prime = _smallest_prime_factor(count)
        base = self.level(count // prime)
        if self.constrained:
            first = self.floors.get(count, 0)
            widenings = range(first, first + SEPARATION_SLACK + 1)
        else:
            widenings = range(n + 1)
        check = target and self.constrained
        roots = min(SEPARATION_ROOTS, n) if check else 1

        for widening in widenings:
            lower = max(1, n // count - widening)
            upper = -(-n // count) + widening

            assignment = self._refine(base, prime, lower, upper) if base is not None else None
            if assignment is not None and check and not _survives_separation(self.grid, assignment, self.pairs):
                assignment = None
            nested = assignment is not None
            for offset in range(roots):
                if assignment is not None:
                    break
                root = self.node_ids[(self.seed + offset) % n]
                candidate = _split_tree(
                    self.adjacency, self.node_ids, root, count, lower, upper, self.pairs, self.skipped
                )
                if candidate is not None and (not check or _survives_separation(self.grid, candidate, self.pairs)):
                    assignment = candidate
            if assignment is not None:
                partition = Partition(
                    count, _relabel(assignment, self.node_ids),
                    seed=self.seed, widening=widening, nested=nested, separated=self.pairs,
                )
                sizes = partition.sizes()
                logger.info(
                    f"🧩 Partition K={count}: sizes {min(sizes)}-{max(sizes)}, "
                    f"widening {widening}, {'nested' if nested else 'global'}"
                    + (f", {len(self.pairs)} pairs kept apart" if self.constrained else "")
                )
                return partition
        return None

    def _refine(self, base: Partition, prime: int, lower: int, upper: int) -> Optional[Dict[int, int]]:
        assignment: Dict[int, int] = {}
        offset = 0
        for members in base.members():
            labels = _split_tree(
                self.adjacency, members, members[self.seed % len(members)], prime, lower, upper,
                self.pairs, self.skipped,
            )
            if labels is None:
                return None
            for nid in members:
                assignment[nid] = offset + labels[nid]
            offset += prime
        return assignment


def partition_grid(grid: Grid, k: int, seed: int = 0, separate: Iterable[Edge] = ()) -> Partition:
    """
    Split the grid into k connected clusters, as balanced as the topology allows

    Sizes lie in [N//k - w, ceil(N/k) + w] for the smallest widening w found.
    Each level first tries to refine the partition for k/p (p the smallest prime
    factor of k) cluster by cluster, then falls back to a global split at the
    same widening. Deterministic for a fixed (grid, k, seed, separate).

    `separate` lists node pairs (scheduled link failures) that should land in
    different clusters. The unconstrained partition is kept when it already
    splits every pair; otherwise the search reruns with the pairs kept apart,
    their physical edges left out of the spanning trees, and a cluster graph
    that stays connected without the separated links. When no such partition
    turns up (k = 1, or too little room) the unconstrained one is returned and
    the absorbed pairs stay inside clusters.
    """
    n = len(grid.nodes)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}] (got {k})")
    if not is_connected(grid.edges, grid.node_ids):
        raise DisconnectedGraphError("cannot partition a disconnected grid")

    pairs = set()
    for a, b in separate:
        if a == b or a not in grid.nodes or b not in grid.nodes:
            logger.debug(f"Ignoring separation request {a}-{b}")
            continue
        pairs.add(edge_key(a, b))

    unconstrained = _LevelSearch(grid, seed)
    plain = unconstrained.level(k)
    if plain is None:
        raise DisconnectedGraphError(f"no connected {k}-way partition found")
    absorbed = sorted(pair for pair in pairs if plain.assignment[pair[0]] == plain.assignment[pair[1]])
    if not absorbed or k == 1:
        return plain

    floors = {count: p.widening for count, p in unconstrained.memo.items() if p is not None}
    forced = _LevelSearch(grid, seed, pairs, floors).level(k, target=True)
    if forced is None:
        logger.warning(
            f"⚠️  K={k}: cannot keep {absorbed} in different clusters, "
            f"using the unconstrained partition"
        )
        return plain
    return forced


def export_partition(partition: Partition, stream: TextIO) -> None:
    """Write `node_id cluster_id` rows in node-id order"""
    stream.write(f"# K={partition.cluster_count} seed={partition.seed} widening={partition.widening}\n")
    for nid in sorted(partition.assignment):
        stream.write(f"{nid} {partition.assignment[nid]}\n")


# =========================================================================
# SUPERAGENTS + COMMUNICATION GRAPH
# =========================================================================

def aggregate(grid: Grid, partition: Partition) -> List[SuperAgent]:
    """
    One SuperAgent per cluster, ordered by cluster id
    """
    missing = set(grid.nodes) - set(partition.assignment)
    if missing:
        raise ValueError(f"partition does not cover nodes {sorted(missing)[:5]}")

    agents = []
    for cluster_id, members in enumerate(partition.members()):
        units = []
        unit_nodes = []
        load = 0.0
        for nid in members:
            node = grid.nodes[nid]
            load += node.load
            if node.generator is not None:
                units.append(node.generator)
                unit_nodes.append(nid)
        host = unit_nodes[0] if unit_nodes else members[0]
        agents.append(SuperAgent(
            id=cluster_id,
            members=tuple(members),
            load=load,
            units=tuple(units),
            unit_nodes=tuple(unit_nodes),
            host=host,
        ))
    return agents


def derive_comm_graph(grid: Grid, agents: Sequence[SuperAgent], partition: Partition) -> CommGraph:
    """
    Agents talk iff a physical edge crosses their cluster boundary
    """
    edges = set()
    for a, b in grid.edges:
        cluster_a = partition.assignment[a]
        cluster_b = partition.assignment[b]
        if cluster_a != cluster_b:
            edges.add(edge_key(cluster_a, cluster_b))

    neighbors: Dict[int, List[int]] = {agent.id: [] for agent in agents}
    for a, b in edges:
        neighbors[a].append(b)
        neighbors[b].append(a)

    return CommGraph(
        agents=tuple(agents),
        edges=frozenset(edges),
        neighbors={agent_id: tuple(sorted(adj)) for agent_id, adj in neighbors.items()},
    )


def describe_topology(comm: CommGraph) -> List[dict]:
    """Per-superagent rows: host node, size, load, generation, neighbors"""
    return [
        {
            'agent_id': agent.id,
            'host': agent.host,
            'members': len(agent.members),
            'load': agent.load,
            'has_generation': agent.has_generation,
            'neighbors': list(comm.neighbors[agent.id]),
        }
        for agent in comm.agents
    ]


def build_agents(
    grid: Grid, k: int, seed: int = 0, separate: Iterable[Edge] = ()
) -> Tuple[Partition, List[SuperAgent], CommGraph]:
    """Partition + aggregate + comm graph in one call"""
    partition = partition_grid(grid, k, seed, separate)
    agents = aggregate(grid, partition)
    comm = derive_comm_graph(grid, agents, partition)
    return partition, agents, comm
