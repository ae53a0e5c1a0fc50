"""
Core types for the energy aggregation simulator
"""
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, FrozenSet, List, Optional, Tuple

import networkx as nx
import numpy as np

Edge = Tuple[int, int]
UnitKey = Tuple[int, int]  # (agent_id, unit index within the agent)


def edge_key(a: int, b: int) -> Edge:
    """Unordered pair in canonical (low, high) form"""
    return (a, b) if a <= b else (b, a)


class UnitStatus(str, Enum):
    FREE = "FREE"
    AT_MAX = "AT_MAX"
    AT_MIN = "AT_MIN"


class GainSchedule(str, Enum):
    CONSTANT = "constant"
    DECAYING = "decaying"


class RunOutcome(str, Enum):
    CONVERGED = "CONVERGED"
    CAP_HIT = "CAP_HIT"


class Arm(str, Enum):
    NO_DISRUPTION = "no_disruption"
    WITH_DISRUPTION = "with_disruption"


# =========================================================================
# GRID
# =========================================================================

@dataclass(frozen=True)
class GeneratorParams:
    """
    Quadratic cost curve c1*P^2 + c2*P with output limits
    """
    c1: float
    c2: float
    p_max: float
    p_min: float = 0.0

    def __post_init__(self):
        if not self.c1 > 0:
            raise ValueError(f"c1 must be positive (got {self.c1})")
        if self.c2 < 0:
            raise ValueError(f"c2 must be non-negative (got {self.c2})")
        if not 0 <= self.p_min <= self.p_max:
            raise ValueError(f"need 0 <= p_min <= p_max (got {self.p_min}, {self.p_max})")

    def marginal_cost(self, output: float) -> float:
        return 2 * self.c1 * output + self.c2

    def response(self, price: float) -> float:
        """Cost-minimizing output at a given price, clamped to limits"""
        return min(max((price - self.c2) / (2 * self.c1), self.p_min), self.p_max)


@dataclass(frozen=True)
class Node:
    id: int
    load: float
    generator: Optional[GeneratorParams] = None

    def __post_init__(self):
        if self.load < 0:
            raise ValueError(f"node {self.id}: load must be non-negative (got {self.load})")


@dataclass
class Grid:
    """
    Physical network: nodes keyed by feeder id, undirected edges as (low, high) pairs

    Node ids are opaque labels (sparse, non-contiguous).
    """
    nodes: Dict[int, Node]
    edges: FrozenSet[Edge]

    def __post_init__(self):
        self.nodes = {nid: self.nodes[nid] for nid in sorted(self.nodes)}
        for a, b in self.edges:
            if a == b:
                raise ValueError(f"self-loop on node {a}")
            if a > b:
                raise ValueError(f"edge ({a}, {b}) not in canonical order")
            if a not in self.nodes or b not in self.nodes:
                raise ValueError(f"edge ({a}, {b}) references an unknown node")

    @property
    def node_ids(self) -> List[int]:
        return list(self.nodes)

    @property
    def generator_nodes(self) -> List[int]:
        return [nid for nid, node in self.nodes.items() if node.generator is not None]

    @property
    def total_load(self) -> float:
        return sum(node.load for node in self.nodes.values())

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(self.nodes)
        graph.add_edges_from(sorted(self.edges))
        return graph

    def adjacency(self) -> Dict[int, List[int]]:
        """Neighbor lists in ascending id order"""
        neighbors: Dict[int, List[int]] = {nid: [] for nid in self.nodes}
        for a, b in self.edges:
            neighbors[a].append(b)
            neighbors[b].append(a)
        return {nid: sorted(adj) for nid, adj in neighbors.items()}


@dataclass(frozen=True)
class Partition:
    """
    Assignment of every node to one of K clusters (0..K-1)

    `widening` is how far the size window [N//K - w, ceil(N/K) + w] had to be
    opened to find connected clusters; `nested` tells whether the clusters
    refine the partition of the next coarser level. `separated` lists the
    node pairs the search was forced to put in different clusters; empty when
    the unconstrained partition already split them or nothing was requested.
    """
    cluster_count: int
    assignment: Dict[int, int]
    seed: int = 0
    widening: int = 0
    nested: bool = False
    separated: Tuple[Edge, ...] = ()

    def __post_init__(self):
        if self.cluster_count < 1:
            raise ValueError("cluster_count must be >= 1")
        used = set(self.assignment.values())
        if used != set(range(self.cluster_count)):
            raise ValueError(f"assignment must use every cluster id 0..{self.cluster_count - 1}")

    def members(self) -> List[List[int]]:
        clusters: List[List[int]] = [[] for _ in range(self.cluster_count)]
        for nid in sorted(self.assignment):
            clusters[self.assignment[nid]].append(nid)
        return clusters

    def sizes(self) -> List[int]:
        return [len(members) for members in self.members()]

    def average_cluster_size(self) -> Fraction:
        return Fraction(len(self.assignment), self.cluster_count)


@dataclass(frozen=True)
class SuperAgent:
    """
    Cluster of nodes operated as one agent

    `units` and `unit_nodes` follow member order, so the i-th unit is hosted by
    `unit_nodes[i]`.
    """
    id: int
    members: Tuple[int, ...]
    load: float
    units: Tuple[GeneratorParams, ...] = ()
    unit_nodes: Tuple[int, ...] = ()
    host: int = -1

    @property
    def has_generation(self) -> bool:
        return len(self.units) > 0

    @property
    def capacity(self) -> float:
        return sum(unit.p_max for unit in self.units)


@dataclass(frozen=True)
class CommGraph:
    agents: Tuple[SuperAgent, ...]
    edges: FrozenSet[Edge]
    neighbors: Dict[int, Tuple[int, ...]]

    @property
    def agent_ids(self) -> List[int]:
        return [agent.id for agent in self.agents]

    @property
    def max_degree(self) -> int:
        return max((len(adj) for adj in self.neighbors.values()), default=0)

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(self.agent_ids)
        graph.add_edges_from(sorted(self.edges))
        return graph


# =========================================================================
# DISPATCH
# =========================================================================

@dataclass(frozen=True)
class Dispatch:
    """
    Centralized optimum (market-clearing price, outputs, binding sets, cost)
    """
    lambda_star: float
    outputs: Dict[int, float]
    unit_outputs: Dict[UnitKey, float]
    binding_max: FrozenSet[UnitKey]
    binding_min: FrozenSet[UnitKey]
    cost: float

    def __post_init__(self):
        if self.binding_max & self.binding_min:
            raise ValueError("binding sets must be disjoint")

    @property
    def total_output(self) -> float:
        return sum(self.unit_outputs.values())


# =========================================================================
# CONSENSUS ENGINE
# =========================================================================

@dataclass(frozen=True)
class GainOverride:
    alpha: Optional[float] = None
    beta: Optional[float] = None


@dataclass(frozen=True)
class Hyperparams:
    """
    Consensus (beta) and innovations (alpha) gains

    With the decaying schedule the round-t gains are alpha0/(1+t)**alpha_decay
    and beta0/(1+t)**beta_decay.
    """
    alpha0: float
    beta0: float
    schedule: GainSchedule = GainSchedule.CONSTANT
    alpha_decay: float = 0.0
    beta_decay: float = 0.0
    per_agent: Dict[int, GainOverride] = field(default_factory=dict)

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise ValueError(f"alpha0 must be positive (got {self.alpha0})")
        if not self.beta0 > 0:
            raise ValueError(f"beta0 must be positive (got {self.beta0})")
        if self.alpha_decay < 0 or self.beta_decay < 0:
            raise ValueError("decay exponents must be non-negative")

    def gains(self, t: int, agent_ids: List[int]) -> Tuple[np.ndarray, np.ndarray]:
        """Per-agent (alpha, beta) arrays for round t"""
        alpha = np.array(
            [self._base(agent_id, 'alpha') for agent_id in agent_ids], dtype=float
        )
        beta = np.array(
            [self._base(agent_id, 'beta') for agent_id in agent_ids], dtype=float
        )
        if self.schedule == GainSchedule.DECAYING:
            alpha = alpha / (1.0 + t) ** self.alpha_decay
            beta = beta / (1.0 + t) ** self.beta_decay
        return alpha, beta

    def _base(self, agent_id: int, name: str) -> float:
        override = self.per_agent.get(agent_id)
        value = getattr(override, name) if override else None
        return value if value is not None else getattr(self, f"{name}0")


@dataclass(frozen=True)
class ConvergenceSpec:
    epsilon: float
    max_iterations: int

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive (got {self.epsilon})")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1 (got {self.max_iterations})")


@dataclass(frozen=True)
class AgentState:
    """
    One agent's view: price copy, output (with unit breakdown) and neighbor cache
    """
    agent_id: int
    lam: float
    output: float
    unit_outputs: Tuple[float, ...]
    cache: Dict[int, float]


@dataclass(frozen=True)
class EngineState:
    """
    Full iteration state, arrays indexed by agent position in `comm.agents`

    `cache[s]` holds the last price received over directed slot s, i.e. from
    agent `slot_dst[s]` as seen by agent `slot_src[s]` (see ConsensusEngine).
    """
    iteration: int
    lambdas: np.ndarray
    outputs: np.ndarray
    unit_outputs: np.ndarray
    cache: np.ndarray
    live_edges: FrozenSet[Edge]


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    lambdas: Tuple[float, ...]
    outputs: Tuple[float, ...]
    rel: float
    max_abs_error: float
    converged: bool


@dataclass
class RunTrace:
    """
    Per-iteration record of one run plus its outcome
    """
    agent_ids: List[int]
    rows: List[TraceRow] = field(default_factory=list)
    outcome: Optional[RunOutcome] = None
    iterations: int = 0
    metadata: Dict[str, object] = field(default_factory=dict)
    final_state: Optional[EngineState] = None

    @property
    def converged(self) -> bool:
        return self.outcome == RunOutcome.CONVERGED

    @property
    def converged_at(self) -> Optional[int]:
        return self.iterations if self.converged else None

    @property
    def cap_hit(self) -> bool:
        return self.outcome == RunOutcome.CAP_HIT


# =========================================================================
# DISRUPTION
# =========================================================================

@dataclass(frozen=True)
class DisruptionEvent:
    """
    Outage of one communication edge, dead for start <= t < end
    """
    edge: Edge
    start: int
    end: int

    def __post_init__(self):
        if not 1 <= self.start < self.end:
            raise ValueError(f"need 1 <= start < end (got {self.start}, {self.end})")
        object.__setattr__(self, 'edge', edge_key(*self.edge))

    def is_active(self, t: int) -> bool:
        return self.start <= t < self.end


@dataclass(frozen=True)
class LinkSchedule:
    """
    Timed edge outages; overlapping or touching events on one edge are merged
    """
    events: Tuple[DisruptionEvent, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'events', _merge_events(self.events))

    @property
    def edges(self) -> FrozenSet[Edge]:
        return frozenset(event.edge for event in self.events)

    def dead_edges(self, t: int) -> FrozenSet[Edge]:
        return frozenset(event.edge for event in self.events if event.is_active(t))

    def is_empty(self) -> bool:
        return not self.events


def _merge_events(events) -> Tuple[DisruptionEvent, ...]:
    merged: List[DisruptionEvent] = []
    for event in sorted(events, key=lambda e: (e.edge, e.start, e.end)):
        last = merged[-1] if merged else None
        if last is not None and last.edge == event.edge and event.start <= last.end:
            merged[-1] = DisruptionEvent(last.edge, last.start, max(last.end, event.end))
        else:
            merged.append(event)
    return tuple(merged)


@dataclass(frozen=True)
class OutageWindow:
    start: int
    end: int
    dead_edges: FrozenSet[Edge]
    islanded: bool


@dataclass(frozen=True)
class ScheduleReport:
    windows: Tuple[OutageWindow, ...]
    unknown_edges: Tuple[Edge, ...] = ()
    vacuous: Tuple[Edge, ...] = ()

    @property
    def islanding(self) -> bool:
        return any(window.islanded for window in self.windows)


# =========================================================================
# EXPERIMENTS
# =========================================================================

@dataclass(frozen=True)
class SweepRecord:
    k: int
    iters_no_disruption: int
    iters_with_disruption: int
    avg_affected_nodes: Fraction
    outcome_flags: Tuple[str, ...] = ()

    @property
    def disruption_penalty(self) -> int:
        return self.iters_with_disruption - self.iters_no_disruption


@dataclass
class SweepSummary:
    records: List[SweepRecord] = field(default_factory=list)
    metadata: Dict[str, object] = field(default_factory=dict)
