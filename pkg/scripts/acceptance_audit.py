#!/usr/bin/env python3
"""
Acceptance Audit Script
Runs the long end-to-end checks (full sweeps, 10^6-slot queue oracles) that
are too slow for the unit tests. Prints one ✅/❌ line per criterion and exits
non-zero when any of them fails.
"""

import math
import sys
import tempfile
import time
from pathlib import Path

import networkx as nx
import numpy as np

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from analysis import (
    approximate_delay, batch_queue_wait, markov_chain_mean_wait, same_message_exemption,
    simulate_isolated_queue,
)
from coding import DecoderState, SourceMessage, encode
from engine import (
    ArrivalPolicy, BroadcastEngine, measure_decode_delay, measure_queue_growth, run,
)
from harness import emit_report, load_config, run_experiment
from topology import Network, generate_random_network, special_case_network
from traffic import FlowSpec

EXPERIMENTS = Path(__file__).parent.parent / "config" / "experiments"


def audit_propagation_oracle():
    """First arrival at every node of an idle network equals the Dijkstra distance."""
    rng = np.random.default_rng(100)
    started = time.perf_counter()
    for trial in range(100):
        n = int(rng.integers(10, 51))
        network = generate_random_network(n, min(1.0, 4.0 / n), 2.0, 1.0, rng_seed=trial)
        origin = int(rng.integers(n))
        packet_rng = np.random.default_rng(trial)
        packet = encode(SourceMessage.random(1, 1, 4, packet_rng), packet_rng, origin=origin)
        engine = BroadcastEngine(network, record_node_arrivals=True)
        engine.inject(origin, packet)
        record = engine.run_until_idle(10_000)
        distances = nx.single_source_dijkstra_path_length(network.graph, origin)
        for node in network.nodes:
            if record.node_arrivals[node].get(packet.key) != distances[node]:
                return False, f"trial {trial}: node {node} off its shortest-path delay"
    elapsed = time.perf_counter() - started
    return elapsed < 10, f"100 networks in {elapsed:.1f}s"


def audit_coding_round_trip():
    rng = np.random.default_rng(1)
    started = time.perf_counter()
    for message_id in range(1000):
        k = int(rng.integers(1, 17))
        message = SourceMessage.random(message_id, k, int(rng.integers(1, 257)), rng)
        state = DecoderState(message_id, k)
        while not state.decodable:
            packet = encode(message, rng)
            if state.absorb(packet):
                rank = state.rank
                if state.absorb(packet) or state.rank != rank:
                    return False, f"message {message_id}: duplicate raised the rank"
        if state.decode() != list(message.packets):
            return False, f"message {message_id}: decoded bytes differ"
    elapsed = time.perf_counter() - started
    return elapsed < 5, f"1000 messages in {elapsed:.1f}s"


def audit_multi_source_decoding():
    """One message from three sources at λ_m = 1.5 still decodes near the propagation delay."""
    network, _ = special_case_network()
    flow = FlowSpec(1, (0, 1, 2), (6, 7, 8), k=1, rates={0: 0.5, 1: 0.5, 2: 0.5})
    exempt = same_message_exemption([flow])[1]
    worst = 0.0
    for seed in range(20):
        record = run(network, [flow], max_slots=1000, rng_seed=seed)
        for source, destination in zip(flow.sources, flow.destinations):
            limit = 3 * approximate_delay(network, [flow], (source, destination), exempt=exempt).combined
            delay = measure_decode_delay(record, 1, destination)
            worst = max(worst, delay / limit)
            if delay >= limit:
                return False, f"seed {seed}: decode delay {delay:.0f} at {destination} >= {limit:.0f}"
    return True, f"worst decode delay at {worst:.2f} of the 3x bound"


def audit_stability_probe():
    network = Network(5, [(0, 1, 1), (0, 2, 1), (0, 3, 1), (0, 4, 1)])
    probes = {}
    for lambda_sum in (0.9, 1.5):
        rate = lambda_sum / 3
        flow = FlowSpec(1, (1, 2, 3), (4,), k=4, rates={1: rate, 2: rate, 3: rate})
        record = run(network, [flow], max_slots=50_000, rng_seed=3, policy=ArrivalPolicy.DEFER,
                     payload_size=1, stop_when_decoded=False)
        probes[lambda_sum] = measure_queue_growth(record, 0)
    passed = probes[0.9] < 0.02 and 0.4 <= probes[1.5] <= 0.6
    return passed, f"probe {probes[0.9]:.4f} at rate 0.9, {probes[1.5]:.3f} at rate 1.5"


def audit_lower_bound(result):
    cells = [r for r in result.rows if not math.isnan(r.simulated_delay)]
    if not cells:
        return False, "no simulated cells"
    below = sum(1 for r in cells if r.estimate <= r.simulated_delay + 0.5)
    share = below / len(cells)

    inversions = 0
    series = {}
    for row in result.rows:
        series.setdefault((row.seed, row.source, row.destination), []).append(
            (row.lambda_sum, row.simulated_delay))
    for points in series.values():
        delays = [d for _, d in sorted(points) if not math.isnan(d)]
        bad = sum(1 for a, b in zip(delays, delays[1:]) if b < a)
        inversions = max(inversions, bad)
    passed = share >= 0.95 and inversions <= 1
    return passed, f"estimate below simulation at {share:.0%} of cells, worst series has {inversions} inversions"


def audit_special_case(result):
    by_cell = {(r.lambda_sum, r.source, r.destination): r for r in result.rows}
    high = max(r.lambda_sum for r in result.rows)
    problems = []
    for source, destination, detour in ((0, 6, 4), (2, 8, 4)):
        for (lam, s, d), row in by_cell.items():
            if (s, d) == (source, destination) and not row.simulated_delay < 2 * detour + 2:
                problems.append(f"({s},{d}) at {lam:g}: {row.simulated_delay:.1f}")
    s2 = by_cell[(high, 1, 7)].simulated_delay
    if not s2 > 10 * 2:
        problems.append(f"(1,7) at {high:g} only {s2:.1f}")
    s1 = by_cell[(high, 0, 6)]
    if not abs(s1.estimate - s1.simulated_delay) <= 2:
        problems.append(f"(0,6) detour estimate {s1.estimate:.1f} vs simulated {s1.simulated_delay:.1f}")
    return not problems, "; ".join(problems) or f"two phases visible up to λ_sum={high:g}"


def audit_queue_oracle():
    rng = np.random.default_rng(2025)
    worst_gap = 0.0
    for case in range(50):
        flows = int(rng.integers(2, 6))
        total = float(rng.uniform(0.1, 0.95))
        rates = list(rng.dirichlet(np.ones(flows)) * total)
        bound = batch_queue_wait(rates)
        exact = markov_chain_mean_wait(rates, truncation=1500)
        simulated = simulate_isolated_queue(rates, slots=1_000_000, seed=case)
        # the closed form is exact, so the simulated mean only differs by sampling noise
        if bound > simulated * 1.05 + 0.01:
            return False, f"case {case}: bound {bound:.3f} above simulated {simulated:.3f}"
        gap = abs(bound - exact) / exact if exact else 0.0
        worst_gap = max(worst_gap, gap)
        if gap > 0.05:
            return False, f"case {case}: bound {bound:.3f} vs Markov chain {exact:.3f}"
    return True, f"worst Markov-chain gap {worst_gap:.2%}"


def audit_determinism():
    config = load_config(EXPERIMENTS / "golden.json")
    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        emit_report(run_experiment(config, verbose=False), a, verbose=False)
        emit_report(run_experiment(config, verbose=False), b, verbose=False)
        names = sorted(p.relative_to(a) for p in Path(a).rglob("*.csv"))
        for name in names:
            if (Path(a) / name).read_bytes() != (Path(b) / name).read_bytes():
                return False, f"{name} differs"
    return True, f"{len(names)} CSV files identical"


def main():
    print("=" * 70)
    print("RNCSIM ACCEPTANCE AUDIT")
    print("=" * 70)

    print("🔬 Running the 30-node sweep...")
    started = time.perf_counter()
    random30 = run_experiment(load_config(EXPERIMENTS / "random30.json"), verbose=False)
    sweep_seconds = time.perf_counter() - started
    print("🔬 Running the special-case sweep...")
    special = run_experiment(load_config(EXPERIMENTS / "special_case.json"), verbose=False)

    checks = [
        ("1. Propagation oracle", audit_propagation_oracle),
        ("2. Coding round-trip", audit_coding_round_trip),
        ("3. Multi-source decodability", audit_multi_source_decoding),
        ("4. Stability probe", audit_stability_probe),
        ("5. Lower-bound property", lambda: audit_lower_bound(random30)),
        ("6. Special-case two phases", lambda: audit_special_case(special)),
        ("7. Queuing-bound oracle", audit_queue_oracle),
        ("8. Determinism", audit_determinism),
    ]

    failures = 0
    for title, check in checks:
        try:
            passed, detail = check()
        except Exception as e:
            passed, detail = False, f"{type(e).__name__}: {e}"
        failures += not passed
        print(f"{'✅' if passed else '❌'} {title:32s} {detail}")

    print(f"\n📊 30-node sweep took {sweep_seconds:.0f}s")
    print("=" * 70)
    print(f"{len(checks) - failures}/{len(checks)} criteria passed")
    return 1 if failures else 0


if __name__ == '__main__':
    sys.exit(main())
