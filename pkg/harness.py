"""
Experiment Harness - λ_sum sweeps comparing simulation against the estimator

A config names a topology, the source/destination roles, the flows and a list
of λ_sum points. Every (λ_sum, seed) cell builds the scenario, optionally runs
the broadcast engine over the full horizon, and prices every (source,
destination) pair with the analytical estimate. emit_report() turns the
result into CSV files, per-pair plot data and a manifest.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from analysis import (
    all_pair_routes, approximate_delay, find_bottlenecks, network_is_stable, same_message_exemption,
)
from coding import write_packet_trace
from config.defaults import (
    DEFAULT_EDGE_PROBABILITY, DEFAULT_HORIZON, DEFAULT_K, DEFAULT_OUTPUT_DIR,
    DEFAULT_WEIGHT_MEAN, DEFAULT_WEIGHT_STDDEV, MIN_PROBE_HORIZON, PAYLOAD_SIZE,
    QUEUE_SAMPLE_EVERY, WARMUP_FRACTION,
)
from engine import (
    ArrivalPolicy, NoDeliveries, SimulationRecord, measure_average_delay,
    measure_decode_delay, measure_queue_growth, run, write_deliveries_csv, write_queues_csv,
)
from topology import (
    Network, assign_roles, generate_random_network, load_edge_list, special_case_network,
)
from traffic import FlowSpec, build_flows, scale_flows, validate_flows
from version import BUILD_TAG

Cell = Tuple[float, int]

TOPOLOGY_KINDS = ("random", "file", "special_case")
FLOW_MODES = ("distinct", "single")


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


class ExperimentError(RuntimeError):
    """A grid cell failed; the message names the (λ_sum, seed) cell."""


# ============================================================
# CONFIGURATION
# ============================================================

@dataclass
class ExperimentConfig:
    name: str = "experiment"
    # {"kind": "random", "num_nodes", "edge_probability", "weight_mean", "weight_stddev"}
    # {"kind": "file", "path"} | {"kind": "special_case"}
    topology: Dict[str, Any] = field(default_factory=lambda: {"kind": "special_case"})
    num_sources: int = 3
    num_destinations: int = 3
    flow_mode: str = "distinct"
    # explicit flows: [{"sources": [...], "destinations": [...], "k": 4, "weights": {...}}]
    flows: List[Dict[str, Any]] = field(default_factory=list)
    k: int = DEFAULT_K
    payload_size: int = PAYLOAD_SIZE
    sweep: List[float] = field(default_factory=list)
    seeds: List[int] = field(default_factory=lambda: [1])
    horizon: int = DEFAULT_HORIZON
    warmup_fraction: float = WARMUP_FRACTION
    arrival_policy: str = ArrivalPolicy.DROP.value
    queue_sample_every: int = QUEUE_SAMPLE_EVERY
    workers: int = 1
    write_traces: bool = False
    output_dir: str = DEFAULT_OUTPUT_DIR

    def validate(self) -> None:
        kind = self.topology.get("kind")
        if kind not in TOPOLOGY_KINDS:
            raise ConfigError(f"topology.kind must be one of {TOPOLOGY_KINDS} (got {kind!r})")
        if kind == "file" and not self.topology.get("path"):
            raise ConfigError("topology.kind 'file' needs a 'path'")
        if self.flow_mode not in FLOW_MODES:
            raise ConfigError(f"flow_mode must be one of {FLOW_MODES} (got {self.flow_mode!r})")
        try:
            ArrivalPolicy(self.arrival_policy)
        except ValueError:
            raise ConfigError(f"arrival_policy must be 'drop' or 'defer' (got {self.arrival_policy!r})") from None
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1 slot")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError("warmup_fraction must lie in [0, 1)")
        if not self.seeds:
            raise ConfigError("At least one seed is required")
        if self.k < 1 or self.payload_size < 1:
            raise ConfigError("k and payload_size must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if kind != "special_case" and not self.flows and (self.num_sources < 1 or self.num_destinations < 1):
            raise ConfigError("num_sources and num_destinations must be positive")
        for value in self.sweep:
            if value <= 0:
                raise ConfigError(f"Sweep point {value} must be positive")
            per_source = value / self._source_count()
            if per_source > 1.0:
                raise ConfigError(f"λ_sum {value} gives each source rate {per_source:.3f} > 1")

    def _source_count(self) -> int:
        if self.flows:
            return sum(len(f.get("sources", ())) for f in self.flows) or 1
        if self.topology.get("kind") == "special_case":
            return 3
        return max(self.num_sources, 1)


def load_config(path, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """
    Read a JSON experiment file; `overrides` (from the command line) win over
    file values. Output directory and queue subsampling fall back to the
    RNCSIM_OUTPUT_DIR / RNCSIM_QUEUE_SAMPLE_EVERY environment variables.
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")

    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")

    data.setdefault("name", path.stem)
    if "output_dir" not in data:
        data["output_dir"] = os.getenv("RNCSIM_OUTPUT_DIR", DEFAULT_OUTPUT_DIR)
    if "queue_sample_every" not in data and os.getenv("RNCSIM_QUEUE_SAMPLE_EVERY"):
        try:
            data["queue_sample_every"] = int(os.environ["RNCSIM_QUEUE_SAMPLE_EVERY"])
        except ValueError:
            raise ConfigError("RNCSIM_QUEUE_SAMPLE_EVERY must be an integer") from None

    try:
        config = ExperimentConfig(**data)
    except TypeError as e:
        raise ConfigError(f"{path}: {e}") from e
    config = apply_overrides(config, overrides or {})
    config.validate()
    return config


def apply_overrides(config: ExperimentConfig, overrides: Dict[str, Any]) -> ExperimentConfig:
    """Command-line overrides; None values are ignored."""
    changes: Dict[str, Any] = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "seed":
            changes["seeds"] = [int(value)]
        elif key == "out":
            changes["output_dir"] = str(value)
        elif key == "topology_file":
            changes["topology"] = {"kind": "file", "path": str(value)}
        elif key in ("arrival_policy", "horizon", "workers", "write_traces"):
            changes[key] = value
        else:
            raise ConfigError(f"Unknown override '{key}'")
    return replace(config, **changes)


# ============================================================
# RESULTS
# ============================================================

@dataclass
class SweepRow:
    """One (λ_sum, seed, pair) cell: simulation next to the estimate."""
    lambda_sum: float
    seed: int
    message_id: int
    source: int
    destination: int
    simulated_delay: float        # nan when nothing was delivered (or not simulated)
    deliveries: int
    decode_delay: Optional[float]
    propagation: int
    queuing_bound: float
    detour_propagation: Optional[int]
    detour_queuing: Optional[float]
    estimate: float               # combined branch
    stable: bool


@dataclass
class ProbeRow:
    lambda_sum: float
    seed: int
    node: int
    probe: float


@dataclass
class SweepResult:
    config: ExperimentConfig
    rows: List[SweepRow] = field(default_factory=list)
    probes: List[ProbeRow] = field(default_factory=list)
    records: Dict[Cell, SimulationRecord] = field(default_factory=dict)

    @property
    def pairs(self) -> List[Tuple[int, int, int]]:
        return sorted({(r.message_id, r.source, r.destination) for r in self.rows})


@dataclass
class CellOutcome:
    lambda_sum: float
    seed: int
    rows: List[SweepRow]
    probes: List[ProbeRow]
    record: Optional[SimulationRecord]


# ============================================================
# SCENARIO CONSTRUCTION
# ============================================================

def build_network(config: ExperimentConfig, seed: int) -> Network:
    """The topology depends on the seed only, so every λ_sum point of a seed shares it."""
    topo = config.topology
    kind = topo["kind"]
    if kind == "special_case":
        network, _ = special_case_network(k=config.k)
        return network
    if kind == "file":
        return load_edge_list(topo["path"])
    return generate_random_network(
        num_nodes=int(topo.get("num_nodes", 30)),
        edge_probability=float(topo.get("edge_probability", DEFAULT_EDGE_PROBABILITY)),
        weight_mean=float(topo.get("weight_mean", DEFAULT_WEIGHT_MEAN)),
        weight_stddev=float(topo.get("weight_stddev", DEFAULT_WEIGHT_STDDEV)),
        rng_seed=seed,
    )


def build_scenario_flows(config: ExperimentConfig, network: Network, lambda_sum: float) -> List[FlowSpec]:
    if config.flows:
        weights: Dict[int, Dict[int, float]] = {}
        for index, entry in enumerate(config.flows):
            given = {int(s): float(w) for s, w in entry.get("weights", {}).items()}
            weights[index] = {int(s): given.get(int(s), 1.0) for s in entry["sources"]}
        total = sum(sum(w.values()) for w in weights.values())
        if total <= 0:
            raise ConfigError("Explicit flows carry no rate weight")
        flows = [
            FlowSpec(
                message_id=int(entry.get("message_id", index + 1)),
                sources=tuple(weights[index]),
                destinations=tuple(int(d) for d in entry["destinations"]),
                k=int(entry.get("k", config.k)),
                rates={s: w / total for s, w in weights[index].items()},
            )
            for index, entry in enumerate(config.flows)
        ]
        flows = scale_flows(flows, lambda_sum)
    elif config.topology["kind"] == "special_case":
        per_source = lambda_sum / 3
        _, flows = special_case_network(rate=per_source, k=config.k)
        if config.flow_mode == "single":
            flows = [FlowSpec(message_id=1, sources=(0, 1, 2), destinations=(6, 7, 8),
                              k=config.k, rates={s: per_source for s in (0, 1, 2)})]
    else:
        roles = assign_roles(network, config.num_sources, config.num_destinations)
        flows = build_flows(roles, lambda_sum, k=config.k, mode=config.flow_mode)
    validate_flows(flows, network.num_nodes)
    return flows


# ============================================================
# ONE GRID CELL
# ============================================================

def run_cell(config: ExperimentConfig, lambda_sum: float, seed: int,
             simulate: bool = True) -> CellOutcome:
    """Build, simulate and estimate one (λ_sum, seed) cell."""
    try:
        network = build_network(config, seed)
        flows = build_scenario_flows(config, network, lambda_sum)
        exemption = same_message_exemption(flows)
        bottlenecks = find_bottlenecks(network, all_pair_routes(network, flows).values(), flows)
        stable = network_is_stable(bottlenecks)

        record = None
        if simulate:
            record = run(network, flows, max_slots=config.horizon, rng_seed=seed,
                         policy=ArrivalPolicy(config.arrival_policy),
                         payload_size=config.payload_size,
                         stop_when_decoded=False,
                         keep_generated=config.write_traces)

        rows = []
        for flow in flows:
            for source, destination in flow.pairs():
                estimate = approximate_delay(network, flows, (source, destination),
                                             exempt=exemption[flow.message_id])
                simulated, delivered, decode_delay = math.nan, 0, None
                if record is not None:
                    delivered = sum(1 for d in record.deliveries
                                    if d.origin == source and d.destination == destination)
                    try:
                        simulated = measure_average_delay(record, [source], destination,
                                                          config.warmup_fraction)
                    except NoDeliveries:
                        pass
                    try:
                        decode_delay = measure_decode_delay(record, flow.message_id, destination)
                    except NoDeliveries:
                        pass
                rows.append(SweepRow(
                    lambda_sum=lambda_sum,
                    seed=seed,
                    message_id=flow.message_id,
                    source=source,
                    destination=destination,
                    simulated_delay=simulated,
                    deliveries=delivered,
                    decode_delay=decode_delay,
                    propagation=estimate.propagation,
                    queuing_bound=estimate.queuing_bound,
                    detour_propagation=estimate.detour.propagation if estimate.detour else None,
                    detour_queuing=estimate.detour.queuing if estimate.detour else None,
                    estimate=estimate.combined,
                    stable=stable,
                ))

        probes = []
        if record is not None and record.slots_run >= MIN_PROBE_HORIZON:
            probes = [ProbeRow(lambda_sum, seed, node, measure_queue_growth(record, node))
                      for node in network.nodes]
    except (ValueError, RuntimeError, LookupError, OSError) as e:
        raise ExperimentError(f"Cell λ_sum={lambda_sum:g}, seed={seed} failed: {e}") from e

    return CellOutcome(lambda_sum, seed, rows, probes, record)


def _run_cell_job(args: Tuple[ExperimentConfig, float, int, bool]) -> CellOutcome:
    return run_cell(*args)


# ============================================================
# SWEEP
# ============================================================

def run_experiment(config: ExperimentConfig, simulate: bool = True,
                   verbose: bool = True) -> SweepResult:
    """
    Run every (λ_sum, seed) cell in grid order.

    With workers > 1 the cells run in a process pool; results are still
    collected in grid order so the report is identical to a sequential run.
    """
    result = SweepResult(config=config)
    cells = [(lam, seed) for lam in config.sweep for seed in config.seeds]
    if not cells:
        _say(verbose, "⚠️ Empty sweep; nothing to run")
        return result

    _say(verbose, f"🔧 {config.name}: {len(config.sweep)} λ_sum points × {len(config.seeds)} seeds, "
                  f"horizon {config.horizon} slots, policy {config.arrival_policy}")
    jobs = [(config, lam, seed, simulate) for lam, seed in cells]

    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(_run_cell_job, jobs))
    else:
        outcomes = []
        for job in jobs:
            _say(verbose, f"🔬 λ_sum={job[1]:g} seed={job[2]}")
            outcomes.append(_run_cell_job(job))

    for outcome in outcomes:
        result.rows.extend(outcome.rows)
        result.probes.extend(outcome.probes)
        if outcome.record is not None:
            result.records[(outcome.lambda_sum, outcome.seed)] = outcome.record
        for row in outcome.rows:
            if simulate and row.deliveries == 0:
                _say(verbose, f"⚠️ No deliveries for ({row.source}, {row.destination}) "
                              f"at λ_sum={row.lambda_sum:g} seed={row.seed}")

    _say(verbose, f"📊 {len(result.rows)} rows over {len(result.pairs)} pairs")
    return result


# ============================================================
# REPORT
# ============================================================

SWEEP_HEADER = ["lambda_sum", "seed", "message_id", "source", "destination",
                "simulated_delay", "estimate", "deliveries", "decode_delay"]
ESTIMATE_HEADER = ["lambda_sum", "seed", "message_id", "source", "destination", "propagation",
                   "queuing_bound", "detour_propagation", "detour_queuing", "combined", "stable"]
PROBE_HEADER = ["lambda_sum", "seed", "node", "probe"]


def format_value(value) -> str:
    """CSV cell text: '' for None, 'inf' / 'nan' literals, fixed 4-decimal floats."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.4f}"


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([format_value(v) for v in row])
    except OSError as e:
        raise ExperimentError(f"Cannot write {path}: {e}") from e


def run_directory(outdir, lambda_sum: float, seed: int) -> Path:
    return Path(outdir) / "runs" / f"lambda_{lambda_sum:.3f}_seed_{seed}"


def plot_series(result: SweepResult) -> Dict[Tuple[int, int], List[Tuple[float, float, float]]]:
    """Per pair: (λ_sum, seed-mean simulated delay, seed-mean estimate), sorted by λ_sum."""
    grouped: Dict[Tuple[int, int], Dict[float, Tuple[List[float], List[float]]]] = {}
    for row in result.rows:
        sims, ests = grouped.setdefault((row.source, row.destination), {}).setdefault(
            row.lambda_sum, ([], []))
        sims.append(row.simulated_delay)
        ests.append(row.estimate)
    series = {}
    for pair, points in sorted(grouped.items()):
        series[pair] = [
            (lam, _mean(sims), _mean(ests)) for lam, (sims, ests) in sorted(points.items())
        ]
    return series


def _mean(values: List[float]) -> float:
    finite = [v for v in values if not math.isnan(v)]
    if not finite:
        return math.nan
    if any(math.isinf(v) for v in finite):
        return math.inf
    return float(np.mean(finite))


def emit_report(result: SweepResult, outdir=None, verbose: bool = True) -> Path:
    """
    Write sweep.csv, estimates.csv, probes.csv, per-run CSVs (plus
    packets.bin when traces are enabled), one plot-data file per pair and
    manifest.json. An empty result still gets headers and a manifest.
    """
    config = result.config
    outdir = Path(outdir or config.output_dir)

    _write_csv(outdir / "sweep.csv", SWEEP_HEADER, [
        (r.lambda_sum, r.seed, r.message_id, r.source, r.destination,
         r.simulated_delay, r.estimate, r.deliveries, r.decode_delay)
        for r in result.rows
    ])
    _write_csv(outdir / "estimates.csv", ESTIMATE_HEADER, [
        (r.lambda_sum, r.seed, r.message_id, r.source, r.destination, r.propagation,
         r.queuing_bound, r.detour_propagation, r.detour_queuing, r.estimate, r.stable)
        for r in result.rows
    ])
    _write_csv(outdir / "probes.csv", PROBE_HEADER, [
        (p.lambda_sum, p.seed, p.node, p.probe) for p in result.probes
    ])

    for (lam, seed), record in sorted(result.records.items()):
        run_dir = run_directory(outdir, lam, seed)
        try:
            write_deliveries_csv(record, run_dir / "deliveries.csv")
            write_queues_csv(record, run_dir / "queues.csv", every=config.queue_sample_every)
            if config.write_traces:
                write_packet_trace(run_dir / "packets.bin", record.generated)
        except OSError as e:
            raise ExperimentError(f"Cannot write run files under {run_dir}: {e}") from e

    for (source, destination), points in plot_series(result).items():
        path = outdir / "plots" / f"delay_{source}_{destination}.dat"
        lines = [f"# ({source}, {destination}) mean delay in slots",
                 "# lambda_sum simulated estimate"]
        lines.extend(f"{format_value(lam)} {format_value(sim)} {format_value(est)}"
                     for lam, sim, est in points)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        except OSError as e:
            raise ExperimentError(f"Cannot write {path}: {e}") from e

    manifest = {
        "build": BUILD_TAG,
        "config": config.name,
        "sweep": list(config.sweep),
        "seeds": list(config.seeds),
        "pairs": len(result.pairs),
        "rows": len(result.rows),
        "horizon": config.horizon,
        "arrival_policy": config.arrival_policy,
    }
    try:
        with open(outdir / "manifest.json", "w", encoding="utf-8") as handle:
            json.dump(manifest, handle, indent=2)
            handle.write("\n")
    except OSError as e:
        raise ExperimentError(f"Cannot write {outdir / 'manifest.json'}: {e}") from e

    _say(verbose, f"✅ Report written to {outdir}")
    return outdir


def _say(verbose: bool, message: str) -> None:
    if verbose:
        print(message)
