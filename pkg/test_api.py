#!/usr/bin/env python3
"""
HTTP API tests - route functions called directly
"""
import os
import sys

import pytest
from fastapi import HTTPException
from pydantic import ValidationError

# Add lib to path
sys.path.insert(0, os.path.dirname(__file__))

from api.main import (
    SimulateRequest, _http_error, app, get_dispatch, get_grid, get_partition,
    get_summary, root, simulate,
)
from lib.errors import ConfigError, InfeasibleDispatchError, IslandingError
from lib.grid_model import build_agents

SHIPPED_GAINS = {'alpha': 1e-5, 'beta': 0.2}
SHIPPED_SCHEDULE = [
    {'nodes': [54, 94], 'start': 20, 'end': 400},
    {'nodes': [151, 300], 'start': 20, 'end': 400},
]


def test_routes_registered():
    paths = {route.path for route in app.routes}
    for path in ('/', '/api/grid/summary', '/api/grid/partition', '/api/grid/dispatch', '/api/grid/simulate'):
        assert path in paths


def test_health():
    assert root()['status'] == 'ok'


def test_summary():
    summary = get_summary()
    assert summary['nodes'] == 123
    assert summary['generators'] == [1, 35, 60, 76, 144]
    assert summary['total_capacity'] > summary['total_load']


def test_partition_endpoint():
    payload = get_partition(k=6, seed=49)
    assert payload['k'] == 6
    assert sum(payload['sizes']) == 123
    assert len(payload['agents']) == 6
    assert len(payload['assignment']) == 123


def test_partition_rejects_bad_k():
    with pytest.raises(HTTPException) as info:
        get_partition(k=500, seed=0)
    assert info.value.status_code == 400


def test_dispatch_endpoint():
    payload = get_dispatch(k=12, seed=49)
    assert list(payload)[0] == 'lambda_star'
    assert payload['lambda_star'] == pytest.approx(0.013608, abs=5e-6)
    assert len(payload['outputs']) == 12


def test_simulate_converges():
    response = simulate(SimulateRequest(k=6, seed=49, **SHIPPED_GAINS))
    assert response.outcome == 'CONVERGED'
    assert response.iterations <= 1000
    assert all(abs(lam - response.lambda_star) <= 0.005 for lam in response.final_lambdas.values())


def test_simulate_disruption_slows_convergence():
    calm = simulate(SimulateRequest(k=6, seed=49, **SHIPPED_GAINS))
    disrupted = simulate(SimulateRequest(k=6, seed=49, schedule=SHIPPED_SCHEDULE, **SHIPPED_GAINS))
    assert disrupted.outcome == 'CONVERGED'
    assert disrupted.iterations > calm.iterations
    assert disrupted.vacuous_events == []


def test_simulate_without_separation_reports_absorbed_pair():
    request = SimulateRequest(
        k=6, seed=49, schedule=SHIPPED_SCHEDULE, separate_scheduled_links=False, **SHIPPED_GAINS
    )
    response = simulate(request)
    assert response.outcome == 'CONVERGED'
    assert response.vacuous_events == [[54, 94]]



def test_simulate_islanding_conflict():
    partition, _, _ = build_agents(get_grid(), 2, 0)
    a, b = next(
        (a, b) for a, b in sorted(get_grid().edges)
        if partition.assignment[a] != partition.assignment[b]
    )
    request = SimulateRequest(k=2, seed=0, schedule=[{'nodes': [a, b], 'start': 1, 'end': 10}])
    with pytest.raises(HTTPException) as info:
        simulate(request)
    assert info.value.status_code == 409
    assert info.value.detail['code'] == 'SCHEDULE_ISLANDING'


def test_simulate_request_is_strict():
    with pytest.raises(ValidationError):
        SimulateRequest(k=6, gamma=1.0)
    with pytest.raises(ValidationError):
        SimulateRequest(k=0)


def test_error_mapping():
    assert _http_error(ConfigError('x')).status_code == 400
    assert _http_error(ValueError('x')).status_code == 400
    assert _http_error(InfeasibleDispatchError('x')).status_code == 422
    assert _http_error(IslandingError('x')).status_code == 409
    assert _http_error(InfeasibleDispatchError('x')).detail == {'code': 'DISPATCH_INFEASIBLE', 'message': 'x'}
