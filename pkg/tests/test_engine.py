import sys
import tempfile
import unittest
from collections import Counter
from pathlib import Path

import networkx as nx
import numpy as np

sys.path.insert(0, str(Path(__file__).parent.parent))

from coding import SourceMessage, encode
from engine import (
    ArrivalPolicy, BroadcastEngine, Delivery, InsufficientHorizon, NoDeliveries,
    SimulationRecord, measure_average_delay, measure_decode_delay, measure_queue_growth,
    observed_routes, run, step, write_deliveries_csv, write_queues_csv,
)
from topology import Network, generate_random_network, special_case_network
from traffic import ArrivalProcess, FlowSpec


def one_packet(origin, seed=0):
    rng = np.random.default_rng(seed)
    return encode(SourceMessage.random(1, 1, 4, rng), rng, origin=origin)


def distinct_packets(origin, count, seed):
    rng = np.random.default_rng(seed)
    message = SourceMessage.random(origin + 1, 4, 4, rng)
    return [encode(message, rng, origin=origin, packet_id=i) for i in range(count)]


def star(leaf_rate, slots):
    """Three same-message leaves feeding relay 0, destination 4 behind it."""
    network = Network(5, [(0, 1, 1), (0, 2, 1), (0, 3, 1), (0, 4, 1)])
    flow = FlowSpec(1, (1, 2, 3), (4,), k=4, rates={1: leaf_rate, 2: leaf_rate, 3: leaf_rate})
    return run(network, [flow], max_slots=slots, rng_seed=3, policy=ArrivalPolicy.DEFER,
               payload_size=1, stop_when_decoded=False)


class PropagationTests(unittest.TestCase):
    def test_first_arrival_equals_dijkstra_distance(self):
        rng = np.random.default_rng(100)
        for trial in range(100):
            n = int(rng.integers(10, 51))
            network = generate_random_network(n, min(1.0, 4.0 / n), 2.0, 1.0, rng_seed=trial)
            origin = int(rng.integers(n))
            packet = one_packet(origin, seed=trial)

            engine = BroadcastEngine(network, record_node_arrivals=True)
            engine.inject(origin, packet)
            record = engine.run_until_idle(10_000)

            distances = nx.single_source_dijkstra_path_length(network.graph, origin)
            for node in network.nodes:
                self.assertEqual(record.node_arrivals[node][packet.key], distances[node],
                                 f"trial {trial}, node {node}")

    def test_line_forwards_once_per_link(self):
        network = Network(3, [(0, 1, 1), (1, 2, 1)])
        engine = BroadcastEngine(network)
        engine.inject(0, one_packet(0))
        record = engine.run_until_idle(50)
        self.assertEqual(dict(record.link_sends), {(0, 1): 1, (1, 2): 1})

    def test_triangle_never_sends_back(self):
        network = Network(3, [(0, 1, 1), (0, 2, 1), (1, 2, 1)])
        engine = BroadcastEngine(network)
        engine.inject(0, one_packet(0))
        record = engine.run_until_idle(50)
        self.assertEqual(dict(record.link_sends), {(0, 1): 1, (0, 2): 1, (1, 2): 1, (2, 1): 1})
        self.assertEqual(record.duplicates, 2)
        self.assertTrue(engine.idle)

    def test_step_advances_one_slot(self):
        network = Network(2, [(0, 1, 3)])
        engine = BroadcastEngine(network, record_node_arrivals=True)
        packet = one_packet(0)
        engine.inject(0, packet)
        for _ in range(3):
            step(engine)
        self.assertNotIn(packet.key, engine.record.node_arrivals[1])
        step(engine)
        self.assertEqual(engine.record.node_arrivals[1][packet.key], 3)


class TrafficRunTests(unittest.TestCase):
    def test_zero_rate_produces_nothing(self):
        network, flows = special_case_network(rate=0.0)
        record = run(network, flows, max_slots=1000, rng_seed=1, stop_when_decoded=False)
        self.assertEqual(record.deliveries, [])
        self.assertEqual(int(record.queue_lengths.sum()), 0)
        self.assertEqual(record.slots_run, 1000)
        self.assertEqual(measure_queue_growth(record, 4), 0.0)

    def test_unit_rate_source_decodes_at_shortest_path_delay(self):
        for seed in range(10):
            network = generate_random_network(20, 0.2, 2.0, 1.0, rng_seed=seed)
            flow = FlowSpec(1, (0,), (17, 18, 19), k=1, rates={0: 1.0})
            record = run(network, [flow], max_slots=1000, rng_seed=seed)
            distances = nx.single_source_dijkstra_path_length(network.graph, 0)
            for destination in flow.destinations:
                self.assertEqual(measure_decode_delay(record, 1, destination), distances[destination])

    def test_max_slots_must_be_positive(self):
        network, flows = special_case_network()
        with self.assertRaises(ValueError):
            run(network, flows, max_slots=0, rng_seed=1)

    def test_same_seed_same_record(self):
        network, flows = special_case_network(rate=0.2, k=2)
        a = run(network, flows, max_slots=3000, rng_seed=5, stop_when_decoded=False)
        b = run(network, flows, max_slots=3000, rng_seed=5, stop_when_decoded=False)
        self.assertEqual(a.deliveries, b.deliveries)
        self.assertEqual(a.decodes, b.decodes)
        self.assertTrue(np.array_equal(a.queue_lengths, b.queue_lengths))
        self.assertEqual(a.link_sends, b.link_sends)

    def test_sources_never_relay_their_own_message(self):
        network, _ = special_case_network()
        flow = FlowSpec(1, (0, 1, 2), (6, 7, 8), k=2, rates={0: 0.3, 1: 0.3, 2: 0.3})
        record = run(network, [flow], max_slots=2000, rng_seed=2, stop_when_decoded=False)
        self.assertTrue(record.deliveries)
        for delivery in record.deliveries:
            self.assertFalse(set(delivery.trace[1:]) & {0, 1, 2})

    def test_stops_once_every_destination_decoded(self):
        network, flows = special_case_network(rate=0.3, k=2)
        record = run(network, flows, max_slots=20_000, rng_seed=8)
        self.assertEqual(len(record.decodes), 3)
        self.assertLess(record.slots_run, 20_000)
        self.assertEqual(record.slots_run, max(e.decoded_slot for e in record.decodes.values()) + 1)


class MultiSourceDecodeTests(unittest.TestCase):
    """One message from all three sources at λ_m = 1.5: destinations still decode fast."""

    def _decode_delays(self, k, seed):
        network, _ = special_case_network()
        flow = FlowSpec(1, (0, 1, 2), (6, 7, 8), k=k, rates={0: 0.5, 1: 0.5, 2: 0.5})
        record = run(network, [flow], max_slots=500, rng_seed=seed)
        return [measure_decode_delay(record, 1, d) for d in (6, 7, 8)]

    def test_single_packet_message(self):
        for seed in range(20):
            for delay in self._decode_delays(1, seed):
                self.assertLessEqual(delay, 6)

    def test_three_packet_message(self):
        for seed in range(20):
            for delay in self._decode_delays(3, seed):
                self.assertLessEqual(delay, 30)


class QueueGrowthTests(unittest.TestCase):
    def test_overloaded_relay_grows_linearly(self):
        record = star(0.5, 20_000)
        self.assertGreaterEqual(measure_queue_growth(record, 0), 0.4)
        self.assertLessEqual(measure_queue_growth(record, 0), 0.6)

    def test_loaded_but_stable_relay(self):
        record = star(0.3, 20_000)
        self.assertLess(measure_queue_growth(record, 0), 0.02)

    def test_single_source_next_to_destination(self):
        network = Network(2, [(0, 1, 1)])
        flow = FlowSpec(1, (0,), (1,), k=1, rates={0: 0.5})
        record = run(network, [flow], max_slots=5000, rng_seed=1, stop_when_decoded=False)
        self.assertLess(measure_queue_growth(record, 0), 0.01)
        self.assertLess(measure_queue_growth(record, 1), 0.01)

    def test_short_record_is_rejected(self):
        record = SimulationRecord(num_nodes=1, arrival_policy=ArrivalPolicy.DROP,
                                  queue_lengths=np.zeros((500, 1), dtype=np.int32), slots_run=500)
        with self.assertRaises(InsufficientHorizon):
            measure_queue_growth(record, 0)

    def test_growth_of_known_series(self):
        series = (np.arange(2000) // 2).astype(np.int32).reshape(-1, 1)
        record = SimulationRecord(num_nodes=1, arrival_policy=ArrivalPolicy.DROP,
                                  queue_lengths=series, slots_run=2000)
        self.assertAlmostEqual(measure_queue_growth(record, 0), 0.5, delta=0.01)


class BottleneckBehaviourTests(unittest.TestCase):
    def test_three_messages_overload_shared_relay(self):
        network, flows = special_case_network(rate=0.5, k=4)
        record = run(network, flows, max_slots=5000, rng_seed=4, policy=ArrivalPolicy.DEFER,
                     payload_size=1, stop_when_decoded=False)
        self.assertGreater(measure_queue_growth(record, 4), 0.1)
        self.assertGreater(measure_average_delay(record, [1], 7), 20)

    def test_first_copies_follow_the_shortest_path(self):
        network, flows = special_case_network(rate=0.1, k=4)
        record = run(network, flows[:1], max_slots=2000, rng_seed=6, stop_when_decoded=False)
        routes = observed_routes(record, 0, 6)
        self.assertEqual(routes.most_common(1)[0][0], (0, 4, 6))

    def test_detour_pair_stays_bounded_past_the_overloaded_relay(self):
        network, flows = special_case_network(rate=0.5, k=4)
        record = run(network, flows, max_slots=50_000, rng_seed=1, payload_size=1,
                     stop_when_decoded=False)
        self.assertLess(measure_average_delay(record, [0], 6), 10)

    def test_deferred_copies_of_known_packets_cost_no_admission(self):
        network, flows = special_case_network(rate=0.2, k=4)
        record = run(network, flows, max_slots=20_000, rng_seed=1, policy=ArrivalPolicy.DEFER,
                     payload_size=1, stop_when_decoded=False)
        for node in (3, 4, 5, 6, 8):
            self.assertLess(measure_queue_growth(record, node), 0.02, f"node {node}")
        self.assertLess(measure_average_delay(record, [0], 6), 10)


class QueueDisciplineTests(unittest.TestCase):
    """Seeded floods of many packets from two origins over random networks."""

    def _flooded_engine(self, seed, policy):
        network = generate_random_network(15, 0.3, 2.0, 1.0, rng_seed=seed)
        engine = BroadcastEngine(network, policy=policy)
        injected = {0: distinct_packets(0, 25, seed), 14: distinct_packets(14, 25, seed + 100)}
        for origin, packets in injected.items():
            for packet in packets:
                engine.inject(origin, packet)
        return engine, {origin: len(packets) for origin, packets in injected.items()}

    def test_one_admission_one_departure_in_fifo_order(self):
        for policy in (ArrivalPolicy.DROP, ArrivalPolicy.DEFER):
            for seed in range(5):
                engine, _ = self._flooded_engine(seed, policy)
                while not engine.idle and engine.slot < 5000:
                    before = [[p.key for p in s.queue] for s in engine.nodes]
                    known = [len(s.last_received_from) for s in engine.nodes]
                    engine.step()
                    for state in engine.nodes:
                        admitted = list(state.last_received_from)[known[state.node]:]
                        self.assertLessEqual(len(admitted), 1)
                        expected = before[state.node] + admitted
                        self.assertEqual([p.key for p in state.queue], expected[1:],
                                         f"{policy}, seed {seed}, node {state.node}")
                self.assertTrue(engine.idle)

    def test_queue_length_counts_the_deferred_backlog(self):
        engine, _ = self._flooded_engine(3, ArrivalPolicy.DEFER)
        while not engine.idle and engine.slot < 5000:
            engine.step()
            row = engine.record.queue_lengths[engine.slot - 1]
            for state in engine.nodes:
                self.assertEqual(row[state.node], len(state.queue) + len(state.backlog))

    def test_no_copy_goes_back_to_the_node_it_came_from(self):
        for seed in range(10):
            engine, injected = self._flooded_engine(seed, ArrivalPolicy.DROP)
            record = engine.run_until_idle(5000)
            self.assertTrue(engine.idle)
            for state in engine.nodes:
                departed = injected.get(state.node, 0) + len(state.last_received_from)
                senders = Counter(state.last_received_from.values())
                for neighbor, _ in engine.network.neighbors(state.node):
                    self.assertEqual(record.link_sends[(state.node, neighbor)],
                                     departed - senders[neighbor],
                                     f"seed {seed}, link {state.node}->{neighbor}")

    def test_queue_matrix_grows_past_its_reservation(self):
        network, flows = special_case_network(rate=0.3, k=4)
        engine = BroadcastEngine(network, flows, arrivals=ArrivalProcess(flows, seed=1, payload_size=1))
        record = engine.run(2000, stop_when_decoded=False)
        self.assertEqual(record.slots_run, 2000)
        self.assertGreaterEqual(record.queue_lengths.shape[0], 2000)
        self.assertGreaterEqual(measure_queue_growth(record, 4), 0.0)

        stepped = BroadcastEngine(network, flows, arrivals=ArrivalProcess(flows, seed=1, payload_size=1))
        for _ in range(1500):
            stepped.step()
        self.assertTrue(np.array_equal(stepped.record.queue_lengths[:1500],
                                       record.queue_lengths[:1500]))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "queues.csv"
            write_queues_csv(stepped.record, path, every=500)
            self.assertEqual(len(path.read_text(encoding="utf-8").splitlines()), 1 + 3 * 9)


class MeasurementTests(unittest.TestCase):
    def setUp(self):
        self.record = SimulationRecord(num_nodes=3, arrival_policy=ArrivalPolicy.DROP, slots_run=100)
        self.record.deliveries = [
            Delivery(0, 1, 0, 2, created_slot=1, arrived_slot=3, trace=(0, 1, 2)),
            Delivery(1, 1, 0, 2, created_slot=50, arrived_slot=54, trace=(0, 1, 2)),
            Delivery(2, 1, 0, 1, created_slot=60, arrived_slot=61, trace=(0, 1)),
        ]

    def test_average_delay(self):
        self.assertAlmostEqual(measure_average_delay(self.record, [0], 2), 3.0)
        self.assertAlmostEqual(measure_average_delay(self.record, [0], 1), 1.0)
        self.assertAlmostEqual(measure_average_delay(self.record, [0], 2, warmup_fraction=0.1), 4.0)

    def test_no_deliveries(self):
        with self.assertRaises(NoDeliveries):
            measure_average_delay(self.record, [5], 2)
        with self.assertRaises(NoDeliveries):
            measure_decode_delay(self.record, 1, 2)

    def test_csv_exports(self):
        with tempfile.TemporaryDirectory() as tmp:
            deliveries = Path(tmp) / "deliveries.csv"
            write_deliveries_csv(self.record, deliveries)
            lines = deliveries.read_text(encoding="utf-8").splitlines()
            self.assertEqual(lines[0], "packet_id,message_id,origin,destination,"
                                       "created_slot,arrived_slot,decoded_slot,hops")
            self.assertEqual(lines[1], "0,1,0,2,1,3,,0-1-2")

            self.record.queue_lengths = np.zeros((100, 3), dtype=np.int32)
            queues = Path(tmp) / "queues.csv"
            write_queues_csv(self.record, queues, every=50)
            lines = queues.read_text(encoding="utf-8").splitlines()
            self.assertEqual(lines[0], "slot,node,queue_len")
            self.assertEqual(len(lines), 1 + 2 * 3)


if __name__ == '__main__':
    unittest.main()
