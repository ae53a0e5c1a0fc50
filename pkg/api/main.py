"""
Grid Consensus HTTP API

FastAPI service exposing the simulator library

Endpoints:
- GET  /                       health
- GET  /api/grid/summary       feeder statistics
- GET  /api/grid/partition     superagents, hosts and comm links for one K
- GET  /api/grid/dispatch      centralized optimum for one K
- POST /api/grid/simulate      one consensus run (optional link schedule)
"""
import logging
import os
import sys
from functools import lru_cache
from typing import Dict, List, Optional

# Add parent dir to path for lib imports
sys.path.insert(0, os.path.dirname(os.path.dirname(__file__)))

from fastapi import FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, ConfigDict, Field

from lib.config import EventConfig
from lib.consensus import ConsensusEngine, default_hyperparams
from lib.dispatch import dispatch_to_dict, solve_centralized
from lib.disruption import enforce_no_islanding, resolve_schedule, validate_schedule
from lib.errors import (
    ConfigError, DisconnectedGraphError, InfeasibleDispatchError, IslandingError,
)
from lib.grid_model import (
    DEFAULT_DATASET, DEFAULT_FEEDER, TIE_LINKS, build_agents, build_test_feeder,
    describe_topology,
)
from lib.types import ConvergenceSpec, Grid, Hyperparams

# Environment
FEEDER_PATH = os.environ.get('GRIDSIM_FEEDER', str(DEFAULT_FEEDER))
DATASET_PATH = os.environ.get('GRIDSIM_DATASET', str(DEFAULT_DATASET))

logging.basicConfig(
    level=os.environ.get('GRIDSIM_LOG_LEVEL', 'INFO').upper(),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

# FastAPI app
app = FastAPI(
    title="Grid Consensus API",
    description="Distributed energy aggregation over configurable agent granularities",
    version="1.0.0"
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@lru_cache(maxsize=1)
def get_grid() -> Grid:
    """Feeder built once per process"""
    return build_test_feeder(FEEDER_PATH, DATASET_PATH)


def _http_error(e: Exception) -> HTTPException:
    """Map simulator failures onto HTTP status codes"""
    if isinstance(e, IslandingError):
        status = 409
    elif isinstance(e, (InfeasibleDispatchError, DisconnectedGraphError)):
        status = 422
    else:
        status = 400
    code = getattr(e, 'code', ConfigError.code)
    message = getattr(e, 'message', str(e))
    return HTTPException(status_code=status, detail={'code': code, 'message': message})


# Request/response models
class SimulateRequest(BaseModel):
    model_config = ConfigDict(extra='forbid')

    k: int = Field(ge=1)
    seed: int = Field(default=0, ge=0)
    epsilon: float = Field(default=0.005, gt=0)
    max_iterations: int = Field(default=1000, ge=1)
    alpha: Optional[float] = Field(default=None, gt=0)
    beta: Optional[float] = Field(default=None, gt=0)
    initial_lambda: float = 0.0
    schedule: List[EventConfig] = Field(default_factory=list)
    allow_islanding: bool = False
    separate_scheduled_links: bool = True


class SimulateResponse(BaseModel):
    k: int
    outcome: str
    iterations: int
    lambda_star: float
    final_lambdas: Dict[int, float]
    final_rel: float
    vacuous_events: List[List[int]]


# ===========================================================================
# ENDPOINTS
# ===========================================================================

@app.get("/")
def root():
    """Health check"""
    return {"status": "ok", "service": "grid-consensus-api", "version": "1.0.0"}


@app.get("/api/grid/summary")
def get_summary():
    """Feeder size, generation and tie links"""
    grid = get_grid()
    capacity = sum(node.generator.p_max for node in grid.nodes.values() if node.generator)
    return {
        "nodes": len(grid.nodes),
        "edges": len(grid.edges),
        "generators": grid.generator_nodes,
        "total_load": grid.total_load,
        "total_capacity": capacity,
        "tie_links": [list(link) for link in TIE_LINKS],
    }


@app.get("/api/grid/partition")
def get_partition(k: int = Query(..., ge=1), seed: int = Query(0, ge=0)):
    """
    Superagents for granularity K: host node, size, load, generation, neighbors
    """
    try:
        partition, _, comm = build_agents(get_grid(), k, seed)
    except (ValueError, ConfigError, DisconnectedGraphError) as e:
        raise _http_error(e)
    return {
        "k": k,
        "seed": seed,
        "widening": partition.widening,
        "nested": partition.nested,
        "sizes": partition.sizes(),
        "comm_edges": [list(edge) for edge in sorted(comm.edges)],
        "agents": describe_topology(comm),
        "assignment": {str(nid): cluster for nid, cluster in partition.assignment.items()},
    }


@app.get("/api/grid/dispatch")
def get_dispatch(k: int = Query(..., ge=1), seed: int = Query(0, ge=0)):
    """Centralized optimum (lambda*, outputs, binding sets, cost)"""
    try:
        _, agents, _ = build_agents(get_grid(), k, seed)
        dispatch = solve_centralized(agents)
    except (ValueError, ConfigError, InfeasibleDispatchError, DisconnectedGraphError) as e:
        raise _http_error(e)
    return dispatch_to_dict(dispatch, agents)


@app.post("/api/grid/simulate", response_model=SimulateResponse)
def simulate(request: SimulateRequest):
    """
    One consensus run at granularity K

    Gains default to the engine defaults for the resulting comm graph.
    """
    logger.info(f"🚀 Simulate K={request.k} seed={request.seed} ({len(request.schedule)} events)")
    try:
        grid = get_grid()
        node_events = [(tuple(e.nodes), e.start, e.end) for e in request.schedule]
        separate = [pair for pair, _, _ in node_events] if request.separate_scheduled_links else []
        partition, agents, comm = build_agents(grid, request.k, request.seed, separate)
        reference = solve_centralized(agents)

        schedule, vacuous, unknown_nodes = resolve_schedule(node_events, partition)
        if unknown_nodes:
            raise ConfigError(f"schedule names unknown nodes {list(unknown_nodes)}")
        report = validate_schedule(schedule, comm, vacuous)
        if report.unknown_edges:
            raise ConfigError(f"schedule pairs map to agents without a comm edge {list(report.unknown_edges)}")
        enforce_no_islanding(report, request.allow_islanding, label=f"K={request.k}")

        defaults = default_hyperparams(agents, comm)
        hyper = Hyperparams(
            alpha0=request.alpha or defaults.alpha0,
            beta0=request.beta or defaults.beta0,
        )
        spec = ConvergenceSpec(epsilon=request.epsilon, max_iterations=request.max_iterations)
        engine = ConsensusEngine(comm)
        trace = engine.run(
            hyper, spec, schedule, reference,
            initial_lambda=request.initial_lambda,
            trace_every=request.max_iterations,
        )
    except (ValueError, ConfigError, InfeasibleDispatchError, DisconnectedGraphError, IslandingError) as e:
        raise _http_error(e)

    final = trace.rows[-1]
    return SimulateResponse(
        k=request.k,
        outcome=trace.outcome.value,
        iterations=trace.iterations,
        lambda_star=reference.lambda_star,
        final_lambdas={agent_id: lam for agent_id, lam in zip(trace.agent_ids, final.lambdas)},
        final_rel=final.rel,
        vacuous_events=[list(pair) for pair in vacuous],
    )


# Run with: uvicorn api.main:app --reload --port 8000
if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8000)
