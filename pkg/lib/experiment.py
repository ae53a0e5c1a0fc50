"""
Experiment Harness - granularity sweeps with and without link disruption

For every K: partition, aggregate, derive the comm graph, solve the oracle,
run the engine once per arm, then write traces and a summary.

Outputs (under output_dir):
- trace_K{K}_{arm}.csv   one row per agent per recorded iteration
- summary.csv / summary.json
"""
import csv
import io
import json
import logging
from decimal import Decimal
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .config import ScenarioConfig, scenario_hash
from .consensus import ConsensusEngine, default_hyperparams
from .dispatch import solve_centralized
from .disruption import enforce_no_islanding, resolve_schedule, validate_schedule
from .errors import ConfigError, DisconnectedGraphError
from .grid_model import build_agents, build_test_feeder, is_connected
from .types import (
    Arm, ConvergenceSpec, Grid, LinkSchedule, Partition, RunTrace, SweepRecord,
    SweepSummary,
)

logger = logging.getLogger(__name__)

TRACE_HEADER = ('iteration', 'agent_id', 'lambda', 'P', 'abs_lambda_err', 'REL', 'converged')
SUMMARY_COLUMNS = ('K', 'iters_no_disruption', 'iters_with_disruption', 'avg_affected_nodes', 'outcome_flags')
SUMMARY_FORMATS = ('csv', 'json')


# =========================================================================
# METRICS
# =========================================================================

def affected_nodes_metric(partition: Partition, grid: Grid) -> Fraction:
    """Average nodes per superagent, N / K exactly"""
    return Fraction(len(grid.nodes), partition.cluster_count)


def render_fraction(value: Fraction, places: int = 6) -> str:
    """Exact decimal when the fraction terminates, rounded to `places` otherwise"""
    denominator = value.denominator
    for factor in (2, 5):
        while denominator % factor == 0:
            denominator //= factor
    exact = Decimal(value.numerator) / Decimal(value.denominator)
    if denominator == 1:
        text = format(exact.normalize(), 'f')
        return text if '.' in text else f"{text}.0"
    return format(round(exact, places), 'f')


# =========================================================================
# OUTPUT
# =========================================================================

def _metadata_lines(metadata: Dict[str, object]) -> List[str]:
    return [f"# {key}={_render(value)}\n" for key, value in metadata.items()]


def _render(value) -> str:
    if isinstance(value, (dict, list, tuple)):
        return json.dumps(value, sort_keys=True, separators=(',', ':'))
    return str(value)


def write_trace(trace: RunTrace, path: Path, lambda_star: float) -> Path:
    """Long-format trace CSV preceded by `# key=value` metadata lines"""
    buffer = io.StringIO()
    buffer.writelines(_metadata_lines(trace.metadata))
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(TRACE_HEADER)
    for row in trace.rows:
        for agent_id, lam, output in zip(trace.agent_ids, row.lambdas, row.outputs):
            writer.writerow([
                row.iteration, agent_id, repr(lam), repr(output),
                repr(abs(lam - lambda_star)), repr(row.rel), int(row.converged),
            ])
    path = Path(path)
    path.write_text(buffer.getvalue())
    return path


def summary_rows(summary: SweepSummary) -> List[Dict[str, object]]:
    return [
        {
            'K': record.k,
            'iters_no_disruption': record.iters_no_disruption,
            'iters_with_disruption': record.iters_with_disruption,
            'avg_affected_nodes': render_fraction(record.avg_affected_nodes),
            'outcome_flags': ';'.join(record.outcome_flags),
        }
        for record in summary.records
    ]


def emit_summary(summary: SweepSummary, fmt: str, path: Path) -> Path:
    """
    Write the summary in a fixed column order

    csv: `#` metadata lines, header, one row per K.
    json: {"metadata": ..., "records": [...]} with fixed keys per record.
    """
    if fmt not in SUMMARY_FORMATS:
        raise ValueError(f"unknown summary format {fmt!r}")
    rows = summary_rows(summary)
    if fmt == 'csv':
        buffer = io.StringIO()
        buffer.writelines(_metadata_lines(summary.metadata))
        writer = csv.DictWriter(buffer, fieldnames=SUMMARY_COLUMNS, lineterminator='\n')
        writer.writeheader()
        writer.writerows(rows)
        text = buffer.getvalue()
    else:
        text = json.dumps({'metadata': summary.metadata, 'records': rows}, indent=2) + '\n'
    path = Path(path)
    path.write_text(text)
    return path


def format_summary_table(summary: SweepSummary) -> str:
    """Console table: iterations per arm, disruption penalty and nodes per agent"""
    lines = [
        "=" * 72,
        f"{'K':>5} {'No Disruption':>14} {'With Disruption':>16} {'Penalty':>8} {'Nodes/Agent':>12}  Flags",
        "-" * 72,
    ]
    for record in summary.records:
        lines.append(
            f"{record.k:>5} {record.iters_no_disruption:>14} {record.iters_with_disruption:>16} "
            f"{record.disruption_penalty:>8} {render_fraction(record.avg_affected_nodes):>12}  "
            f"{','.join(record.outcome_flags) or '-'}"
        )
    lines.append("=" * 72)
    return "\n".join(lines)


# =========================================================================
# SWEEP
# =========================================================================

def _base_metadata(config: ScenarioConfig) -> Dict[str, object]:
    return {
        'scenario': config.name,
        'scenario_hash': scenario_hash(config),
        'seed': config.seed,
        'epsilon': config.epsilon,
        'initial_lambda': config.initial_lambda,
        'gain_schedule': config.hyper.schedule.value,
        'alpha_decay': config.hyper.alpha_decay,
        'beta_decay': config.hyper.beta_decay,
        'schedule': [
            {'nodes': list(event.nodes), 'start': event.start, 'end': event.end}
            for event in config.schedule
        ],
    }


def run_granularity(
    config: ScenarioConfig,
    grid: Grid,
    k: int,
    allow_islanding: bool = False,
    trace_every: Optional[int] = None,
) -> Tuple[SweepRecord, Dict[Arm, RunTrace], float]:
    """
    Both arms for one K; returns (record, traces by arm, lambda*)
    """
    if k > len(grid.nodes):
        raise ConfigError(f"K={k} exceeds the {len(grid.nodes)} grid nodes")

    partition, agents, comm = build_agents(grid, k, config.seed, config.separated_pairs())
    if not is_connected(comm.edges, comm.agent_ids):
        raise DisconnectedGraphError(f"K={k}: communication graph is not connected")

    reference = solve_centralized(agents)
    logger.info(
        f"💡 K={k}: lambda*={reference.lambda_star:.6f}, f*={reference.cost:.6f}, "
        f"{len(reference.binding_max)} at max, {len(reference.binding_min)} at min"
    )

    schedule, vacuous, unknown_nodes = resolve_schedule(config.node_events(), partition)
    if unknown_nodes:
        raise ConfigError(f"K={k}: schedule names unknown nodes {list(unknown_nodes)}")
    report = validate_schedule(schedule, comm, vacuous)
    if report.unknown_edges:
        raise ConfigError(
            f"K={k}: schedule pairs map to agents without a comm edge {list(report.unknown_edges)}"
        )
    enforce_no_islanding(report, allow_islanding, label=f"K={k}")

    defaults = default_hyperparams(agents, comm)
    hyper = config.hyperparams_for(k, defaults.alpha0, defaults.beta0)
    absent = sorted(set(hyper.per_agent) - set(comm.agent_ids))
    if absent:
        logger.warning(f"⚠️  K={k}: gain overrides name absent agents {absent}")

    spec = ConvergenceSpec(epsilon=config.epsilon, max_iterations=config.max_iterations[k])
    every = trace_every or config.trace_every
    engine = ConsensusEngine(comm)

    metadata = _base_metadata(config)
    metadata.update({
        'K': k,
        'max_iterations': spec.max_iterations,
        'alpha': hyper.alpha0,
        'beta': hyper.beta0,
        'partition_widening': partition.widening,
        'separated_links': ';'.join(f"{a}-{b}" for a, b in partition.separated) or 'none',
        'lambda_star': reference.lambda_star,
        'f_star': reference.cost,
        'trace_every': every,
    })

    traces: Dict[Arm, RunTrace] = {}
    for arm, arm_schedule in ((Arm.NO_DISRUPTION, LinkSchedule()), (Arm.WITH_DISRUPTION, schedule)):
        traces[arm] = engine.run(
            hyper, spec, arm_schedule, reference,
            initial_lambda=config.initial_lambda,
            trace_every=every,
            metadata={**metadata, 'arm': arm.value, 'label': f"K={k} {arm.value}"},
        )

    flags: List[str] = []
    for arm in (Arm.NO_DISRUPTION, Arm.WITH_DISRUPTION):
        if traces[arm].cap_hit:
            flags.append(f"cap_hit:{arm.value}")
    if config.schedule and schedule.is_empty():
        flags.append('schedule_vacuous')
    elif vacuous:
        # some events absorbed inside clusters, the rest still disrupt
        flags.extend(f"schedule_vacuous:{a}-{b}" for a, b in sorted(set(vacuous)))
    if report.islanding and allow_islanding:
        flags.append('islanding_allowed')

    record = SweepRecord(
        k=k,
        iters_no_disruption=traces[Arm.NO_DISRUPTION].iterations,
        iters_with_disruption=traces[Arm.WITH_DISRUPTION].iterations,
        avg_affected_nodes=affected_nodes_metric(partition, grid),
        outcome_flags=tuple(flags),
    )
    return record, traces, reference.lambda_star


def run_sweep(
    config: ScenarioConfig,
    output_dir: Optional[Path] = None,
    allow_islanding: bool = False,
    trace_every: Optional[int] = None,
    formats: Sequence[str] = SUMMARY_FORMATS,
) -> SweepSummary:
    """
    Full sweep over config.granularities; traces and summary files land in output_dir
    """
    out = Path(output_dir) if output_dir is not None else config.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)

    grid = build_test_feeder(config.feeder, config.dataset)
    summary = SweepSummary(metadata=_base_metadata(config))
    summary.metadata['max_iterations'] = {str(k): config.max_iterations[k] for k in config.granularities}
    summary.metadata['allow_islanding'] = allow_islanding

    for k in config.granularities:
        logger.info(f"🔄 K={k}: running both arms")
        record, traces, lambda_star = run_granularity(config, grid, k, allow_islanding, trace_every)
        for arm, trace in traces.items():
            path = write_trace(trace, out / f"trace_K{k}_{arm.value}.csv", lambda_star)
            logger.info(f"📝 Wrote {path}")
        summary.records.append(record)

    for fmt in formats:
        path = emit_summary(summary, fmt, out / f"summary.{fmt}")
        logger.info(f"📝 Wrote {path}")
    return summary
