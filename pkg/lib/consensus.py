"""
Consensus + Innovations Engine - synchronous price-consensus rounds

Round t -> t+1:
1. delivery: every live comm edge refreshes both endpoint caches with lambda^t
   (dead edges keep the last value received, so the consensus term goes stale)
2. update: lambda_i' = lambda_i - beta * sum_j (lambda_i - cache_i[j]) - alpha * (P_i - L_i)
3. response: P_i' = sum of clamped unit outputs at lambda_i'

All updates read the pre-round snapshot. Convergence is checked on the state
before each round: max_i |lambda_i - lambda*| <= epsilon.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dispatch import objective, rel_metric
from .disruption import live_edges as scheduled_live_edges
from .types import (
    AgentState, CommGraph, ConvergenceSpec, Dispatch, Edge, EngineState,
    Hyperparams, LinkSchedule, RunOutcome, RunTrace, SuperAgent, TraceRow,
    edge_key,
)

logger = logging.getLogger(__name__)

# Default gain factors: alpha0 = ALPHA_FACTOR * min(2 c1), beta0 = BETA_FACTOR / d_max
ALPHA_FACTOR = 0.05
BETA_FACTOR = 0.4


def local_response(agent: SuperAgent, lam: float) -> Tuple[float, Tuple[float, ...]]:
    """
    Agent output at price lam, plus the per-unit breakdown

    Load-only agents return (0.0, ()).
    """
    units = tuple(unit.response(lam) for unit in agent.units)
    total = 0.0
    for p in units:
        total += p
    return total, units


def default_hyperparams(agents: Sequence[SuperAgent], comm: CommGraph) -> Hyperparams:
    two_c1 = [2 * unit.c1 for agent in agents for unit in agent.units]
    if not two_c1:
        raise ValueError("cannot derive alpha0 without generating units")
    degree = comm.max_degree
    return Hyperparams(
        alpha0=ALPHA_FACTOR * min(two_c1),
        beta0=BETA_FACTOR / degree if degree else BETA_FACTOR,
    )


class ConsensusEngine:
    """
    Runs the distributed price iteration over one communication graph

    Agent arrays follow `comm.agents` order. Neighbor values live in directed
    slots: slot s carries the price of agent slot_dst[s] as cached by agent
    slot_src[s]; each agent's slots are laid out in ascending neighbor id, which
    fixes the summation order of the consensus term.
    """

    def __init__(self, comm: CommGraph):
        self.comm = comm
        self.agents: Tuple[SuperAgent, ...] = comm.agents
        self.agent_ids: List[int] = comm.agent_ids
        self.position: Dict[int, int] = {agent_id: i for i, agent_id in enumerate(self.agent_ids)}

        for a, b in comm.edges:
            if a not in self.position or b not in self.position:
                raise ValueError(f"comm edge ({a}, {b}) references an unknown agent")

        self.loads = np.array([agent.load for agent in self.agents], dtype=float)

        # Units flattened in agent order
        owner, c1, c2, p_min, p_max = [], [], [], [], []
        for i, agent in enumerate(self.agents):
            for unit in agent.units:
                owner.append(i)
                c1.append(unit.c1)
                c2.append(unit.c2)
                p_min.append(unit.p_min)
                p_max.append(unit.p_max)
        self.unit_owner = np.array(owner, dtype=int)
        self.c1 = np.array(c1, dtype=float)
        self.c2 = np.array(c2, dtype=float)
        self.p_min = np.array(p_min, dtype=float)
        self.p_max = np.array(p_max, dtype=float)

        # Directed neighbor slots
        src, dst, edges = [], [], []
        for i, agent_id in enumerate(self.agent_ids):
            for neighbor in comm.neighbors.get(agent_id, ()):
                src.append(i)
                dst.append(self.position[neighbor])
                edges.append(edge_key(agent_id, neighbor))
        self.slot_src = np.array(src, dtype=int)
        self.slot_dst = np.array(dst, dtype=int)
        self.slot_edge: List[Edge] = edges

    # =========================================================================
    # LOCAL COMPUTATION
    # =========================================================================

    def respond(self, lambdas: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Per-unit clamped outputs and per-agent totals (unit order preserved)"""
        unit_outputs = np.clip(
            (lambdas[self.unit_owner] - self.c2) / (2 * self.c1), self.p_min, self.p_max
        )
        outputs = np.zeros(len(self.agents))
        np.add.at(outputs, self.unit_owner, unit_outputs)
        return outputs, unit_outputs

    def init_state(self, initial_lambda: float = 0.0) -> EngineState:
        """
        t = 0: every agent at initial_lambda, caches seeded with the neighbors' lambda^0
        """
        lambdas = np.full(len(self.agents), float(initial_lambda))
        outputs, unit_outputs = self.respond(lambdas)
        return EngineState(
            iteration=0,
            lambdas=lambdas,
            outputs=outputs,
            unit_outputs=unit_outputs,
            cache=lambdas[self.slot_dst].copy(),
            live_edges=frozenset(self.comm.edges),
        )

    # =========================================================================
    # ROUND
    # =========================================================================

    def step(self, state: EngineState, hyper: Hyperparams, live_edges) -> EngineState:
        """
        One synchronous round computed entirely from `state`
        """
        live = frozenset(live_edges)
        unknown = live - self.comm.edges
        if unknown:
            raise ValueError(f"live edges not in the comm graph: {sorted(unknown)[:5]}")

        live_slot = np.array([edge in live for edge in self.slot_edge], dtype=bool)
        lambdas = state.lambdas
        cache = np.where(live_slot, lambdas[self.slot_dst], state.cache)

        disagreement = np.zeros(len(self.agents))
        np.add.at(disagreement, self.slot_src, lambdas[self.slot_src] - cache)

        alpha, beta = hyper.gains(state.iteration + 1, self.agent_ids)
        updated = lambdas - beta * disagreement - alpha * (state.outputs - self.loads)
        outputs, unit_outputs = self.respond(updated)

        return EngineState(
            iteration=state.iteration + 1,
            lambdas=updated,
            outputs=outputs,
            unit_outputs=unit_outputs,
            cache=cache,
            live_edges=live,
        )

    def check_convergence(self, state: EngineState, reference: Dispatch, spec: ConvergenceSpec) -> bool:
        return bool(np.all(np.abs(state.lambdas - reference.lambda_star) <= spec.epsilon))

    # =========================================================================
    # INSPECTION
    # =========================================================================

    def unit_output_map(self, state: EngineState) -> Dict[Tuple[int, int], float]:
        keys = []
        for agent in self.agents:
            keys.extend((agent.id, index) for index in range(len(agent.units)))
        return {key: float(p) for key, p in zip(keys, state.unit_outputs)}

    def agent_states(self, state: EngineState) -> List[AgentState]:
        """Per-agent view of an EngineState"""
        caches: List[Dict[int, float]] = [{} for _ in self.agents]
        for s, (i, j) in enumerate(zip(self.slot_src, self.slot_dst)):
            caches[i][self.agent_ids[j]] = float(state.cache[s])
        views = []
        for i, agent in enumerate(self.agents):
            views.append(AgentState(
                agent_id=agent.id,
                lam=float(state.lambdas[i]),
                output=float(state.outputs[i]),
                unit_outputs=tuple(float(p) for p in state.unit_outputs[self.unit_owner == i]),
                cache=caches[i],
            ))
        return views

    def rel(self, state: EngineState, reference: Dispatch) -> float:
        return rel_metric(objective(self.agents, self.unit_output_map(state)), reference.cost)

    def _trace_row(self, state: EngineState, reference: Dispatch, converged: bool) -> TraceRow:
        return TraceRow(
            iteration=state.iteration,
            lambdas=tuple(float(x) for x in state.lambdas),
            outputs=tuple(float(x) for x in state.outputs),
            rel=self.rel(state, reference),
            max_abs_error=float(np.max(np.abs(state.lambdas - reference.lambda_star))),
            converged=converged,
        )

    # =========================================================================
    # RUN
    # =========================================================================

    def run(
        self,
        hyper: Hyperparams,
        spec: ConvergenceSpec,
        schedule: LinkSchedule,
        reference: Dispatch,
        initial_lambda: float = 0.0,
        trace_every: int = 1,
        metadata: Optional[dict] = None,
    ) -> RunTrace:
        """
        Iterate until every price is within epsilon of lambda* or the cap is reached

        Rows are recorded every `trace_every` iterations; the final iteration is
        always recorded.
        """
        if trace_every < 1:
            raise ValueError(f"trace_every must be >= 1 (got {trace_every})")

        trace = RunTrace(agent_ids=list(self.agent_ids), metadata=dict(metadata or {}))
        state = self.init_state(initial_lambda)

        while True:
            converged = self.check_convergence(state, reference, spec)
            final = converged or state.iteration >= spec.max_iterations
            if final or state.iteration % trace_every == 0:
                trace.rows.append(self._trace_row(state, reference, converged))
            if final:
                break
            live = scheduled_live_edges(schedule, self.comm, state.iteration)
            state = self.step(state, hyper, live)

        trace.iterations = state.iteration
        trace.final_state = state
        label = trace.metadata.get('label', f"K={len(self.agents)}")
        if converged:
            trace.outcome = RunOutcome.CONVERGED
            logger.info(f"✅ {label}: converged at iteration {state.iteration}")
        else:
            trace.outcome = RunOutcome.CAP_HIT
            logger.warning(
                f"⚠️  {label}: hit the cap of {spec.max_iterations} iterations "
                f"(max |lambda - lambda*| = {trace.rows[-1].max_abs_error:.6f})"
            )
        return trace
