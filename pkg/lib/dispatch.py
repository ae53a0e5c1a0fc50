"""
Dispatch Oracle - centralized economic dispatch for quadratic costs

solve_centralized() runs the clamp-and-release active-set loop over individual
units: with F the non-binding units, the clearing price is

    lambda* = (D - sum_{at max} p_max - sum_{at min} p_min + sum_F c2/(2 c1)) / sum_F 1/(2 c1)

and every free unit produces (lambda* - c2) / (2 c1).
brute_force_solve() is an independent lambda-iteration (bisection) reference.
"""
import json
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InfeasibleDispatchError
from .types import Dispatch, SuperAgent, UnitKey, UnitStatus

logger = logging.getLogger(__name__)

# Relative slack when comparing total load with the capacity bounds
BOUNDARY_TOL = 1e-12


class _Units:
    """Flattened unit arrays in agent order, then member order"""

    def __init__(self, agents: Sequence[SuperAgent]):
        self.keys: List[UnitKey] = []
        self.nodes: List[int] = []
        c1, c2, p_min, p_max = [], [], [], []
        for agent in agents:
            for index, (unit, node) in enumerate(zip(agent.units, agent.unit_nodes or [None] * len(agent.units))):
                self.keys.append((agent.id, index))
                self.nodes.append(node)
                c1.append(unit.c1)
                c2.append(unit.c2)
                p_min.append(unit.p_min)
                p_max.append(unit.p_max)
        self.c1 = np.array(c1, dtype=float)
        self.c2 = np.array(c2, dtype=float)
        self.p_min = np.array(p_min, dtype=float)
        self.p_max = np.array(p_max, dtype=float)

    def __len__(self) -> int:
        return len(self.keys)

    def response(self, lam: float) -> np.ndarray:
        return np.clip((lam - self.c2) / (2 * self.c1), self.p_min, self.p_max)


def _check_feasible(units: _Units, demand: float) -> None:
    if len(units) == 0:
        raise InfeasibleDispatchError("no generating units")
    low = float(units.p_min.sum())
    high = float(units.p_max.sum())
    slack = BOUNDARY_TOL * max(1.0, abs(demand))
    if demand < low - slack or demand > high + slack:
        raise InfeasibleDispatchError(
            f"total load {demand:.6f} MW outside capacity range [{low:.6f}, {high:.6f}] MW"
        )


def _price_for(units: _Units, status: np.ndarray, demand: float) -> Optional[float]:
    """Market-clearing price over the free units; None when none is free"""
    free = status == 0
    if not free.any():
        return None
    residual = demand - units.p_max[status == 1].sum() - units.p_min[status == -1].sum()
    inv = 1.0 / (2 * units.c1[free])
    return float((residual + (units.c2[free] * inv).sum()) / inv.sum())


def _reclassify(units: _Units, status: np.ndarray, lam: float) -> np.ndarray:
    """Clamp violating free units, release binding units whose sign condition fails"""
    updated = status.copy()
    ideal = (lam - units.c2) / (2 * units.c1)
    free = status == 0
    updated[free & (ideal > units.p_max)] = 1
    updated[free & (ideal < units.p_min)] = -1
    at_max = status == 1
    updated[at_max & (2 * units.c1 * units.p_max + units.c2 > lam)] = 0
    at_min = status == -1
    updated[at_min & (2 * units.c1 * units.p_min + units.c2 < lam)] = 0
    return updated


def _bracket_status(units: _Units, demand: float) -> Tuple[np.ndarray, float]:
    """
    Exact active set by scanning the breakpoints of total response(lambda)

    Used when the clamp-and-release loop revisits an active set.
    """
    breakpoints = np.unique(np.concatenate([
        2 * units.c1 * units.p_min + units.c2,
        2 * units.c1 * units.p_max + units.c2,
    ]))
    totals = np.array([units.response(b).sum() for b in breakpoints])
    index = int(np.searchsorted(totals, demand))
    if index == 0:
        lam = float(breakpoints[0])
    elif index == len(breakpoints):
        lam = float(breakpoints[-1])
    else:
        lo, hi = breakpoints[index - 1], breakpoints[index]
        t_lo, t_hi = totals[index - 1], totals[index]
        lam = float(lo + (hi - lo) * (demand - t_lo) / (t_hi - t_lo))
    ideal = (lam - units.c2) / (2 * units.c1)
    status = np.where(ideal > units.p_max, 1, np.where(ideal < units.p_min, -1, 0))
    price = _price_for(units, status, demand)
    return status, lam if price is None else price


def _build_dispatch(
    agents: Sequence[SuperAgent], units: _Units, status: np.ndarray, lam: float
) -> Dispatch:
    outputs = np.where(
        status == 1, units.p_max,
        np.where(status == -1, units.p_min, (lam - units.c2) / (2 * units.c1)),
    )
    outputs = np.clip(outputs, units.p_min, units.p_max)
    unit_outputs = {key: float(p) for key, p in zip(units.keys, outputs)}
    per_agent = {agent.id: 0.0 for agent in agents}
    for (agent_id, _), p in unit_outputs.items():
        per_agent[agent_id] += p
    return Dispatch(
        lambda_star=float(lam),
        outputs=per_agent,
        unit_outputs=unit_outputs,
        binding_max=frozenset(key for key, s in zip(units.keys, status) if s == 1),
        binding_min=frozenset(key for key, s in zip(units.keys, status) if s == -1),
        cost=objective(agents, unit_outputs),
    )


def solve_centralized(agents: Sequence[SuperAgent]) -> Dispatch:
    """
    Active-set solution of min sum(c1 P^2 + c2 P) s.t. sum P = sum L, p_min <= P <= p_max

    Units exactly at a bound count as non-binding.
    """
    units = _Units(agents)
    demand = sum(agent.load for agent in agents)
    _check_feasible(units, demand)

    slack = BOUNDARY_TOL * max(1.0, abs(demand))
    if abs(demand - units.p_max.sum()) <= slack:
        status = np.ones(len(units), dtype=int)
        lam = float((2 * units.c1 * units.p_max + units.c2).max())
        return _build_dispatch(agents, units, status, lam)
    if abs(demand - units.p_min.sum()) <= slack:
        status = -np.ones(len(units), dtype=int)
        lam = float((2 * units.c1 * units.p_min + units.c2).min())
        return _build_dispatch(agents, units, status, lam)

    status = np.zeros(len(units), dtype=int)
    seen = {status.tobytes()}
    lam = _price_for(units, status, demand)
    for pass_no in range(2 * len(units)):
        updated = _reclassify(units, status, lam)
        if np.array_equal(updated, status):
            break
        if updated.tobytes() in seen or not (updated == 0).any():
            logger.debug(f"Active-set loop revisited a set at pass {pass_no}, using breakpoint scan")
            status, lam = _bracket_status(units, demand)
            break
        seen.add(updated.tobytes())
        status = updated
        lam = _price_for(units, status, demand)
        logger.debug(
            f"Active-set pass {pass_no}: lambda={lam:.8f}, "
            f"at_max={int((status == 1).sum())}, at_min={int((status == -1).sum())}"
        )
    else:
        status, lam = _bracket_status(units, demand)

    dispatch = _build_dispatch(agents, units, status, lam)
    logger.debug(
        f"Oracle: lambda*={dispatch.lambda_star:.6f}, f*={dispatch.cost:.6f}, "
        f"binding max/min={len(dispatch.binding_max)}/{len(dispatch.binding_min)}"
    )
    return dispatch


def objective(agents: Sequence[SuperAgent], outputs: Dict[UnitKey, float]) -> float:
    """
    Total production cost, summed in agent then unit order
    """
    cost = 0.0
    for agent in agents:
        for index, unit in enumerate(agent.units):
            key = (agent.id, index)
            if key not in outputs:
                raise KeyError(f"missing output for unit {key}")
            p = outputs[key]
            cost += unit.c1 * p * p + unit.c2 * p
    return cost


def rel_metric(f: float, f_star: float) -> float:
    """Relative objective error |f - f*| / f*"""
    if f_star <= 0:
        raise ValueError(f"reference cost must be positive (got {f_star})")
    return abs(f - f_star) / f_star


def brute_force_solve(agents: Sequence[SuperAgent], step: float = 1e-9, max_rounds: int = 400) -> Dispatch:
    """
    Lambda iteration by bisection, independent of the active-set formulas
    """
    units = _Units(agents)
    demand = sum(agent.load for agent in agents)
    _check_feasible(units, demand)

    lam_low = float(min(units.c2.min(), (2 * units.c1 * units.p_min + units.c2).min()))
    lam_high = float((2 * units.c1 * units.p_max + units.c2).max())
    lam = lam_high
    total = units.response(lam).sum()
    rounds = 0
    while abs(total - demand) >= step and rounds < max_rounds:
        lam = (lam_low + lam_high) / 2
        total = units.response(lam).sum()
        if total > demand:
            lam_high = lam
        else:
            lam_low = lam
        rounds += 1

    outputs = units.response(lam)
    status = np.where(outputs >= units.p_max, 1, np.where(outputs <= units.p_min, -1, 0))
    # a unit pinned at p_min == p_max is reported at max
    unit_outputs = {key: float(p) for key, p in zip(units.keys, outputs)}
    per_agent = {agent.id: 0.0 for agent in agents}
    for (agent_id, _), p in unit_outputs.items():
        per_agent[agent_id] += p
    return Dispatch(
        lambda_star=float(lam),
        outputs=per_agent,
        unit_outputs=unit_outputs,
        binding_max=frozenset(key for key, s in zip(units.keys, status) if s == 1),
        binding_min=frozenset(key for key, s in zip(units.keys, status) if s == -1),
        cost=objective(agents, unit_outputs),
    )


def unit_status(dispatch: Dispatch, key: UnitKey) -> UnitStatus:
    if key in dispatch.binding_max:
        return UnitStatus.AT_MAX
    if key in dispatch.binding_min:
        return UnitStatus.AT_MIN
    return UnitStatus.FREE


def dispatch_to_dict(dispatch: Dispatch, agents: Sequence[SuperAgent]) -> dict:
    """
    Fixed field order: lambda_star, outputs, binding_max, binding_min, cost
    """
    outputs = []
    for agent in agents:
        units = []
        for index, _ in enumerate(agent.units):
            key = (agent.id, index)
            units.append({
                'unit': index,
                'node': agent.unit_nodes[index] if agent.unit_nodes else None,
                'output': dispatch.unit_outputs[key],
                'status': unit_status(dispatch, key).value,
            })
        outputs.append({
            'agent_id': agent.id,
            'output': dispatch.outputs[agent.id],
            'units': units,
        })
    return {
        'lambda_star': dispatch.lambda_star,
        'outputs': outputs,
        'binding_max': [list(key) for key in sorted(dispatch.binding_max)],
        'binding_min': [list(key) for key in sorted(dispatch.binding_min)],
        'cost': dispatch.cost,
    }


def dispatch_to_json(dispatch: Dispatch, agents: Sequence[SuperAgent]) -> str:
    return json.dumps(dispatch_to_dict(dispatch, agents), indent=2)
