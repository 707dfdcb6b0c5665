"""
Command line: feasibility checks, simulations, forge runs and bundle rechecks.

    lbforge check    --graph config/graphs/diamond.graph --f 1
    lbforge simulate --scenario config/scenarios/complete4_extreme.conf
    lbforge forge    --graph config/graphs/complete3.graph --victim naive --out runs/c3
    lbforge recheck  runs/c3

Exit codes: 0 success (feasible / conditions hold / violation exhibited /
verdict reproduced), 1 negative result, 2 input or configuration error.
Command output goes to stdout, logs to stderr.
"""

import argparse
import contextlib
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, ContextManager, Dict, List, Optional, Sequence

from monitoring import (
    ErrorSeverity,
    create_example_env_file,
    run_with_monitoring,
    setup_monitoring_from_env,
)

from .bundle import recheck_bundle, write_bundle
from .conditions import check_conditions
from .errors import ConstructionInapplicable, LbforgeError, ScenarioError
from .forge import VerdictKind, run_forge
from .graph_core import Graph, check_feasibility, load_graph, vertex_connectivity
from .protocols import STRATEGIES, VICTIMS, build_victims, byzantine_behavior
from .scenario import ScenarioConfig, build_scenario, load_scenario
from .sim_engine import (
    StartMode,
    Topology,
    check_trace_wellformed,
    run,
    write_trace,
)
from .wire import display_value

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_INPUT_ERROR = 0, 1, 2
TRACE_FILE = "trace.jsonl"

# flag name -> ScenarioConfig field
_OVERRIDES = (
    "graph",
    "f",
    "epsilon",
    "lower",
    "upper",
    "inputs",
    "faults",
    "strategy",
    "victim",
    "rounds",
    "seed",
    "max_steps",
    "out",
    "theorem",
    "mirror_auto",
)


@dataclass
class CommandResult:
    code: int
    lines: List[str] = field(default_factory=list)


@dataclass(frozen=True)
class RunSettings:
    max_steps: int
    max_delay: int


def _fmt(nodes) -> str:
    return "[" + ", ".join(str(u) for u in sorted(nodes)) + "]"


# Commands


def cmd_check(graph: Graph, f: int, source: str = "") -> CommandResult:
    report = check_feasibility(graph, f)
    lines = [
        f"graph: {source or 'inline'}",
        f"n = {report.n}, f = {report.f}, kappa = {report.kappa}",
        f"node count n >= 3f+1 ({report.n} >= {3 * f + 1}): "
        + ("ok" if report.enough_nodes else "FAILED"),
        f"connectivity kappa >= 2f+1 ({report.kappa} >= {2 * f + 1}): "
        + ("ok" if report.enough_connectivity else "FAILED"),
    ]
    if report.three_partition is not None:
        p = report.three_partition
        lines.append(f"three-partition witness: A={_fmt(p.a)} B={_fmt(p.b)} C={_fmt(p.c)}")
    if report.cut_partition is not None:
        p = report.cut_partition
        lines.append(
            f"cut witness: {_fmt(p.c1 | p.c2)} separates A={_fmt(p.a)} from B={_fmt(p.b)}"
            f" (C1={_fmt(p.c1)} C2={_fmt(p.c2)})"
        )
    lines += [f"note: {note}" for note in report.notes]
    lines.append("verdict: " + ("feasible" if report.feasible else "infeasible"))
    return CommandResult(EXIT_OK if report.feasible else EXIT_FAILED, lines)


def _require_graph(scenario: ScenarioConfig) -> Graph:
    if scenario.graph is None:
        raise ScenarioError("no graph given (use --graph or a scenario file)")
    return load_graph(scenario.graph)


def cmd_simulate(scenario: ScenarioConfig, settings: RunSettings) -> CommandResult:
    g = _require_graph(scenario)
    cfg = scenario.protocol_config(g.n)
    scenario.check_faults(g.n)
    inputs = scenario.resolve_inputs(g.n)
    victims = build_victims(scenario.victim, cfg, g, scenario.rounds)

    faulty = frozenset(scenario.faults)
    behaviors, modes = {}, {}
    for u in g.node_ids:
        if u in faulty:
            behaviors[u], modes[u] = byzantine_behavior(
                scenario.strategy, cfg, g, u, scenario.seed
            )
        else:
            behaviors[u], modes[u] = victims[u](), StartMode.normal()

    topology = Topology.from_graph(g)
    trace = run(
        topology, behaviors, inputs, modes, scenario.seed, settings.max_steps, settings.max_delay
    )
    nonfaulty = [u for u in g.node_ids if u not in faulty]
    report = check_conditions(trace, nonfaulty, inputs, cfg)
    violations = check_trace_wellformed(trace, topology)

    lines = [
        f"victim: {scenario.victim}, faulty {_fmt(faulty)} ({scenario.strategy}),"
        f" seed {scenario.seed}",
        f"run: {trace.outcome.value} after {len(trace.events)} events",
    ]
    if scenario.out is not None:
        path = Path(scenario.out) / TRACE_FILE
        path.parent.mkdir(parents=True, exist_ok=True)
        write_trace(trace, path)
        lines.append(f"trace: {path}")
    decided = ", ".join(
        f"{u}->{display_value(v)}" for u, v in sorted(report.decisions.items())
    )
    lines.append(f"outputs: [{decided}]")
    lines += report.summary_lines()
    for v in violations:
        lines.append(f"trace check: {v.kind}: {v.message}")
    ok = report.ok and not violations
    failed = report.failed() or ["trace check"]
    lines.append("result: " + ("all conditions hold" if ok else "FAILED " + ", ".join(failed)))
    return CommandResult(EXIT_OK if ok else EXIT_FAILED, lines)


def pick_theorem(g: Graph, f: int) -> int:
    if g.n <= 3 * f:
        return 1
    if vertex_connectivity(g) <= 2 * f:
        return 2
    raise ConstructionInapplicable(
        f"n = {g.n} >= 3f+1 and connectivity >= 2f+1: neither construction applies"
    )


def _noop_timer(name: str) -> ContextManager:
    return contextlib.nullcontext()


def cmd_forge(
    scenario: ScenarioConfig,
    settings: RunSettings,
    timer: Callable[[str], ContextManager] = _noop_timer,
) -> CommandResult:
    g = _require_graph(scenario)
    theorem = scenario.theorem or pick_theorem(g, scenario.f)
    cfg = scenario.protocol_config(g.n)
    # the node-count construction runs on the completion of G
    victim_graph = g.completed() if theorem == 1 else g
    victims = build_victims(scenario.victim, cfg, victim_graph, scenario.rounds)

    with timer(f"forge.theorem{theorem}"):
        report = run_forge(
            theorem,
            g,
            scenario.f,
            cfg,
            victims,
            scenario.seed,
            settings.max_steps,
            max_delay=settings.max_delay,
            mirror_auto=scenario.mirror_auto,
            victim_name=scenario.victim,
            timer=timer,
        )
    lines = [f"victim: {scenario.victim}, seed {scenario.seed}"]
    lines += report.summary_lines()
    if scenario.out is not None:
        with timer("forge.write_bundle"):
            out = write_bundle(report, scenario.out)
        lines.append(f"bundle: {out}")
    survived = report.verdict.kind is VerdictKind.VICTIM_SURVIVED
    return CommandResult(EXIT_FAILED if survived else EXIT_OK, lines)


def cmd_recheck(path: Path) -> CommandResult:
    result = recheck_bundle(path)
    lines = [f"bundle: {path}", f"verdict: {result.verdict.kind.value}"]
    lines += [f"issue: {issue}" for issue in result.issues]
    lines.append("result: " + ("reproduced" if result.ok else "MISMATCH"))
    return CommandResult(EXIT_OK if result.ok else EXIT_FAILED, lines)


# Seed sweeps


def parse_seed_range(text: str) -> List[int]:
    start, sep, end = text.partition("..")
    try:
        if not sep:
            return [int(text)]
        first, last = int(start), int(end)
    except ValueError:
        raise ScenarioError(f"--seeds expects 'a..b', got {text!r}")
    if last < first:
        raise ScenarioError(f"empty seed range {text!r}")
    return list(range(first, last + 1))


def _run_seed(command: str, scenario: ScenarioConfig, settings: RunSettings) -> CommandResult:
    try:
        if command == "simulate":
            return cmd_simulate(scenario, settings)
        return cmd_forge(scenario, settings)
    except LbforgeError as e:
        return CommandResult(EXIT_INPUT_ERROR, [f"error: {e}"])


def run_sweep(
    command: str,
    scenario: ScenarioConfig,
    seeds: Sequence[int],
    settings: RunSettings,
    workers: int = 1,
) -> CommandResult:
    """Run one command per seed; succeeds only when every seed does."""
    jobs = []
    for seed in seeds:
        overrides: Dict[str, Any] = {"seed": seed}
        if scenario.out is not None:
            overrides["out"] = Path(scenario.out) / f"seed-{seed}"
        jobs.append(build_scenario(scenario, overrides))

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(_run_seed, [command] * len(jobs), jobs, [settings] * len(jobs))
            )
    else:
        results = [_run_seed(command, job, settings) for job in jobs]

    lines: List[str] = []
    for seed, result in zip(seeds, results):
        lines.append(f"== seed {seed}: exit {result.code}")
        lines += [f"   {line}" for line in result.lines]
    failed = [seed for seed, r in zip(seeds, results) if r.code != EXIT_OK]
    lines.append(f"sweep: {len(seeds) - len(failed)}/{len(seeds)} seeds passed")
    if failed:
        lines.append(f"failed seeds: {failed}")
    worst = max(r.code for r in results)
    return CommandResult(worst, lines)


# Argument parsing


def _add_scenario_flags(parser: argparse.ArgumentParser, forge: bool = False) -> None:
    parser.add_argument("--scenario", type=Path, help="Scenario file (key = value lines)")
    parser.add_argument("--graph", type=Path, help="Graph file")
    parser.add_argument("--f", type=int, help="Maximum number of faulty nodes")
    parser.add_argument("--epsilon", help="Agreement tolerance (decimal)")
    parser.add_argument("--lower", help="Lower input bound L (decimal)")
    parser.add_argument("--upper", help="Upper input bound U (decimal)")
    parser.add_argument(
        "--inputs",
        help="unanimous-L, unanimous-U, split, or a comma list with one value per node",
    )
    parser.add_argument("--victim", choices=VICTIMS, help="Algorithm under test")
    parser.add_argument("--rounds", type=int, help="Round count for the naive victims")
    parser.add_argument("--seed", type=int, help="Schedule seed")
    parser.add_argument("--seeds", help="Seed sweep a..b (overrides --seed)")
    parser.add_argument("--max-steps", type=int, help="Event budget per execution")
    parser.add_argument("--out", type=Path, help="Output directory")
    if forge:
        parser.add_argument("--theorem", type=int, choices=(1, 2), help="Construction to run")
        parser.add_argument(
            "--mirror-auto",
            action=argparse.BooleanOptionalAction,
            default=None,
            help="Take the mirrored branch when B decides U in E1 (default on)",
        )
    else:
        parser.add_argument("--faults", help="Comma list of faulty node ids")
        parser.add_argument("--strategy", choices=STRATEGIES, help="Byzantine strategy")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lbforge",
        description=(
            "Local-broadcast approximate consensus: simulate, check and forge counterexamples."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    check = sub.add_parser("check", help="Check n >= 3f+1 and connectivity >= 2f+1")
    check.add_argument("--scenario", type=Path, help="Scenario file (key = value lines)")
    check.add_argument("--graph", type=Path, help="Graph file")
    check.add_argument("--f", type=int, help="Maximum number of faulty nodes")

    simulate = sub.add_parser("simulate", help="Run a protocol and check the three conditions")
    _add_scenario_flags(simulate)

    forge = sub.add_parser("forge", help="Run an impossibility construction against a victim")
    _add_scenario_flags(forge, forge=True)

    recheck = sub.add_parser("recheck", help="Re-derive a report bundle's verdict from its traces")
    recheck.add_argument("bundle", type=Path, help="Report bundle directory")

    init_env = sub.add_parser("init-env", help="Write an example .env file with every option")
    init_env.add_argument(
        "path", type=Path, nargs="?", default=Path(".env.example"), help="Target file"
    )
    return parser


def scenario_from_args(args: argparse.Namespace) -> ScenarioConfig:
    base = load_scenario(args.scenario) if getattr(args, "scenario", None) else None
    overrides = {name: getattr(args, name, None) for name in _OVERRIDES}
    return build_scenario(base, overrides)


def _settings(scenario: ScenarioConfig, config) -> RunSettings:
    max_steps = scenario.max_steps
    if "max_steps" not in scenario.model_fields_set:
        max_steps = config.default_max_steps
    return RunSettings(max_steps=max_steps, max_delay=config.max_link_delay)


def _dispatch(args: argparse.Namespace, config, forge_logger) -> CommandResult:
    if args.command == "recheck":
        return cmd_recheck(args.bundle)
    if args.command == "init-env":
        return CommandResult(EXIT_OK, [f"wrote {create_example_env_file(str(args.path))}"])

    scenario = scenario_from_args(args)
    if args.command == "check":
        g = _require_graph(scenario)
        return cmd_check(g, scenario.f, str(scenario.graph))

    settings = _settings(scenario, config)
    if getattr(args, "seeds", None):
        seeds = parse_seed_range(args.seeds)
        with forge_logger.time_operation(f"{args.command}.sweep"):
            return run_sweep(args.command, scenario, seeds, settings, config.sweep_workers)
    if args.command == "simulate":
        with forge_logger.time_operation("simulate"):
            return cmd_simulate(scenario, settings)
    return cmd_forge(scenario, settings, timer=forge_logger.time_operation)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_INPUT_ERROR

    config, forge_logger, error_handler = setup_monitoring_from_env(f"cli.{args.command}")
    result, error = run_with_monitoring(
        _dispatch,
        args.command,
        error_handler,
        severity=ErrorSeverity.MEDIUM,
        catch=(LbforgeError, OSError),
        args=args,
        config=config,
        forge_logger=forge_logger,
    )
    if error is not None:
        print(f"error: {error.message}", file=sys.stderr)
        logger.debug("Error summary: %s", error_handler.get_error_summary())
        return error.exit_code

    for line in result.lines:
        print(line)
    stats = forge_logger.get_operation_stats()
    for name, stat in sorted(stats.items()):
        logger.debug("%s: %d call(s), %.3fs total", name, stat["count"], stat["total_time"])
    return result.code


if __name__ == "__main__":
    sys.exit(main())
