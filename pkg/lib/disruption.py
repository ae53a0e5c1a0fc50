"""
Link Disruption - timed comm-edge outages and islanding checks

Events are half-open: an edge is dead for start <= t < end and live again at t = end.
Scenario files name physical node pairs; resolve_schedule() maps each pair to
the comm edge between the clusters holding the two nodes.
"""
import logging
from typing import Iterable, List, Optional, Sequence, Tuple

from .errors import IslandingError
from .grid_model import is_connected
from .types import (
    CommGraph, DisruptionEvent, Edge, LinkSchedule, OutageWindow, Partition,
    ScheduleReport, edge_key,
)

logger = logging.getLogger(__name__)

NodeEvent = Tuple[Tuple[int, int], int, int]  # ((node_a, node_b), start, end)


def resolve_schedule(
    node_events: Iterable[NodeEvent], partition: Partition
) -> Tuple[LinkSchedule, Tuple[Edge, ...], Tuple[Edge, ...]]:
    """
    Map node-pair events onto agent edges

    Returns (schedule, vacuous node pairs, unknown node pairs). A pair inside one
    cluster is vacuous; a pair naming an unknown node is unknown. Pairs across
    non-adjacent clusters stay in the schedule and show up as unknown edges in
    validate_schedule().
    """
    events: List[DisruptionEvent] = []
    vacuous: List[Edge] = []
    unknown: List[Edge] = []
    for (a, b), start, end in node_events:
        pair = edge_key(a, b)
        if a not in partition.assignment or b not in partition.assignment:
            unknown.append(pair)
            continue
        cluster_a = partition.assignment[a]
        cluster_b = partition.assignment[b]
        if cluster_a == cluster_b:
            vacuous.append(pair)
            logger.warning(
                f"⚠️  K={partition.cluster_count}: nodes {a}-{b} share cluster {cluster_a}, "
                f"disruption event is vacuous"
            )
            continue
        events.append(DisruptionEvent(edge_key(cluster_a, cluster_b), start, end))
    return LinkSchedule(tuple(events)), tuple(vacuous), tuple(unknown)


def live_edges(schedule: LinkSchedule, comm: CommGraph, t: int) -> frozenset:
    """Comm edges not dead at round t"""
    if schedule.is_empty():
        return comm.edges
    return comm.edges - schedule.dead_edges(t)


def outage_windows(schedule: LinkSchedule) -> List[Tuple[int, int, frozenset]]:
    """Maximal [start, end) intervals over which the dead-edge set is constant and non-empty"""
    bounds = sorted({event.start for event in schedule.events} | {event.end for event in schedule.events})
    windows: List[Tuple[int, int, frozenset]] = []
    for start, end in zip(bounds, bounds[1:]):
        dead = schedule.dead_edges(start)
        if not dead:
            continue
        if windows and windows[-1][1] == start and windows[-1][2] == dead:
            windows[-1] = (windows[-1][0], end, dead)
        else:
            windows.append((start, end, dead))
    return windows


def validate_schedule(
    schedule: LinkSchedule, comm: CommGraph, vacuous: Sequence[Edge] = ()
) -> ScheduleReport:
    """
    Islanding per outage window and events naming edges the comm graph lacks
    """
    unknown = tuple(sorted(edge for edge in schedule.edges if edge not in comm.edges))
    agent_ids = comm.agent_ids

    windows = []
    for start, end, dead in outage_windows(schedule):
        remaining = comm.edges - dead
        islanded = not is_connected(remaining, agent_ids)
        logger.debug(
            f"Window [{start}, {end}): {len(dead)} dead edges, "
            f"{'islanded' if islanded else 'connected'}"
        )
        windows.append(OutageWindow(start=start, end=end, dead_edges=dead, islanded=islanded))

    return ScheduleReport(windows=tuple(windows), unknown_edges=unknown, vacuous=tuple(vacuous))


def enforce_no_islanding(report: ScheduleReport, allow_islanding: bool = False, label: Optional[str] = None) -> None:
    """Raise IslandingError for an islanding schedule unless explicitly allowed"""
    if not report.islanding:
        return
    islanded = [window for window in report.windows if window.islanded]
    where = ", ".join(f"[{w.start}, {w.end})" for w in islanded)
    prefix = f"{label}: " if label else ""
    if allow_islanding:
        logger.warning(f"⚠️  {prefix}schedule islands the comm graph during {where} (allowed)")
        return
    raise IslandingError(f"{prefix}schedule islands the comm graph during {where}")
