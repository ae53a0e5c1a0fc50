#!/usr/bin/env python3
"""
Grid Consensus Simulator - command-line entry point

Usage:
    python run_simulation.py simulate scenarios/ieee123_sweep.scenario [--output-dir DIR] [--allow-islanding]
    python run_simulation.py solve data/ieee123_dataset.txt [--k K] [--seed S]
    python run_simulation.py partition data/ieee123_feeder.txt --k 6 --seed 49
    python run_simulation.py topology data/ieee123_feeder.txt --k 6 --seed 49
    python run_simulation.py validate scenarios/ieee123_sweep.scenario

Exit codes: 0 success (cap-hit runs included), 2 config error,
3 infeasible dispatch or disconnected graph, 4 islanding schedule, 1 unexpected.
"""
import argparse
import json
import logging
import os
import sys

# Add lib to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from lib.config import load_scenario, scenario_hash
from lib.dispatch import dispatch_to_json, solve_centralized
from lib.disruption import enforce_no_islanding, resolve_schedule, validate_schedule
from lib.errors import ConfigError, SimulatorError
from lib.experiment import format_summary_table, run_sweep
from lib.grid_model import (
    DEFAULT_DATASET, DEFAULT_FEEDER, build_agents, build_test_feeder,
    describe_topology, export_partition, partition_grid,
)

logger = logging.getLogger('run_simulation')


def setup_logging(verbose: bool = False) -> None:
    level = logging.DEBUG if verbose else os.environ.get('GRIDSIM_LOG_LEVEL', 'INFO').upper()
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )


def banner(title: str) -> None:
    print("\n" + "=" * 72)
    print(title)
    print("=" * 72)


# =========================================================================
# COMMANDS
# =========================================================================

def cmd_simulate(args) -> int:
    config = load_scenario(args.scenario)
    output_dir = config.resolved_output_dir(args.output_dir)
    formats = ('csv', 'json') if args.format == 'both' else (args.format,)

    banner(f"GRANULARITY SWEEP: {config.name}")
    print(f"   Scenario hash: {scenario_hash(config)}")
    print(f"   Granularities: {config.granularities}")
    print(f"   Output: {output_dir}")

    summary = run_sweep(
        config,
        output_dir=output_dir,
        allow_islanding=args.allow_islanding,
        trace_every=args.trace_every,
        formats=formats,
    )

    print("\n📊 ITERATIONS UNTIL CONVERGENCE")
    print(format_summary_table(summary))
    capped = [record.k for record in summary.records if any(f.startswith('cap_hit') for f in record.outcome_flags)]
    if capped:
        print(f"\n⚠️  Cap reached for K={capped}")
    print(f"\n✅ Results written to {output_dir}")
    return 0


def _grid_from_args(args):
    feeder = getattr(args, 'feeder', None) or os.environ.get('GRIDSIM_FEEDER') or DEFAULT_FEEDER
    dataset = getattr(args, 'dataset', None) or os.environ.get('GRIDSIM_DATASET') or DEFAULT_DATASET
    for label, path in (('feeder', feeder), ('dataset', dataset)):
        if not os.path.isfile(path):
            raise ConfigError(f"{label} file not found: {path}")
    return build_test_feeder(feeder, dataset)


def cmd_solve(args) -> int:
    grid = _grid_from_args(args)
    k = args.k or len(grid.nodes)
    _, agents, _ = build_agents(grid, k, args.seed)
    dispatch = solve_centralized(agents)
    print(dispatch_to_json(dispatch, agents))
    return 0


def cmd_partition(args) -> int:
    grid = _grid_from_args(args)
    partition = partition_grid(grid, args.k, args.seed)
    if args.output:
        with open(args.output, 'w') as stream:
            export_partition(partition, stream)
        logger.info(f"📝 Wrote {args.output}")
    else:
        export_partition(partition, sys.stdout)
    return 0


def cmd_topology(args) -> int:
    grid = _grid_from_args(args)
    partition, _, comm = build_agents(grid, args.k, args.seed)
    print(json.dumps({
        'k': args.k,
        'seed': args.seed,
        'widening': partition.widening,
        'comm_edges': [list(edge) for edge in sorted(comm.edges)],
        'agents': describe_topology(comm),
    }, indent=2))
    return 0


def cmd_validate(args) -> int:
    config = load_scenario(args.scenario)
    grid = build_test_feeder(config.feeder, config.dataset)

    banner(f"VALIDATE: {config.name} ({scenario_hash(config)})")
    for k in config.granularities:
        if k > len(grid.nodes):
            raise ConfigError(f"K={k} exceeds the {len(grid.nodes)} grid nodes")
        partition, agents, comm = build_agents(grid, k, config.seed, config.separated_pairs())
        schedule, vacuous, unknown_nodes = resolve_schedule(config.node_events(), partition)
        if unknown_nodes:
            raise ConfigError(f"K={k}: schedule names unknown nodes {list(unknown_nodes)}")
        report = validate_schedule(schedule, comm, vacuous)
        if report.unknown_edges:
            raise ConfigError(f"K={k}: schedule pairs map to agents without a comm edge {list(report.unknown_edges)}")
        sizes = partition.sizes()
        print(
            f"   K={k:>3}: sizes {min(sizes)}-{max(sizes)}, {len(comm.edges)} comm edges, "
            f"{len(schedule.edges)} disrupted, {len(vacuous)} vacuous, "
            f"{'🔴 ISLANDING' if report.islanding else '🟢 connected'}"
        )
        enforce_no_islanding(report, args.allow_islanding, label=f"K={k}")
    print("\n✅ Scenario is valid")
    return 0


# =========================================================================
# MAIN
# =========================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Distributed energy aggregation simulator')
    parser.add_argument('--verbose', action='store_true', help='DEBUG logging')
    sub = parser.add_subparsers(dest='command', required=True)

    simulate = sub.add_parser('simulate', help='Run the full granularity sweep')
    simulate.add_argument('scenario', help='Scenario JSON file')
    simulate.add_argument('--output-dir', help='Directory for traces and summary')
    simulate.add_argument('--trace-every', type=int, help='Record every n-th iteration (default 1)')
    simulate.add_argument('--allow-islanding', action='store_true', help='Run schedules that island the comm graph')
    simulate.add_argument('--format', choices=('csv', 'json', 'both'), default='both', help='Summary format')
    simulate.set_defaults(handler=cmd_simulate)

    solve = sub.add_parser('solve', help='Centralized dispatch only, prints JSON')
    solve.add_argument('dataset', help='Loads/generators file')
    solve.add_argument('--feeder', help='Topology file (default: committed feeder)')
    solve.add_argument('--k', type=int, help='Number of superagents (default: one per node)')
    solve.add_argument('--seed', type=int, default=0, help='Partition seed')
    solve.set_defaults(handler=cmd_solve)

    for name, handler, text in (
        ('partition', cmd_partition, 'Export the node -> cluster assignment'),
        ('topology', cmd_topology, 'Export superagent hosts and comm links as JSON'),
    ):
        command = sub.add_parser(name, help=text)
        command.add_argument('feeder', help='Topology file')
        command.add_argument('--k', type=int, required=True, help='Number of superagents')
        command.add_argument('--seed', type=int, default=0, help='Partition seed')
        command.add_argument('--dataset', help='Loads/generators file (default: committed dataset)')
        if name == 'partition':
            command.add_argument('--output', help='Write to file instead of stdout')
        command.set_defaults(handler=handler)

    validate = sub.add_parser('validate', help='Schema and islanding checks, no runs')
    validate.add_argument('scenario', help='Scenario JSON file')
    validate.add_argument('--allow-islanding', action='store_true', help='Report islanding without failing')
    validate.set_defaults(handler=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)

    if getattr(args, 'trace_every', None) is not None and args.trace_every < 1:
        print(f"❌ CONFIG_INVALID: --trace-every must be >= 1 (got {args.trace_every})")
        return ConfigError.exit_code

    try:
        return args.handler(args)
    except SimulatorError as e:
        print(f"❌ {e.code}: {e.message}")
        return e.exit_code
    except ValueError as e:
        print(f"❌ {ConfigError.code}: {e}")
        return ConfigError.exit_code
    except Exception:
        logger.exception("Unexpected failure")
        return 1


if __name__ == '__main__':
    sys.exit(main())
