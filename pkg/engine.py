"""
Broadcast Engine - Slotted simulator for fastest-only broadcast with discards

Every slot runs three phases in order:
  1. ARRIVALS      sources inject freshly coded packets into their queues
  2. RECEPTION     each node admits at most one arriving packet; unseen
                   packets are queued, known ones are discarded
  3. TRANSMISSION  each busy node dequeues one packet (FIFO) and broadcasts it
                   on every link except the one the packet arrived on

A packet admitted in slot t can leave in slot t, so on an idle network the
first copy of a packet reaches every node after exactly its shortest-path
delay.
"""

from __future__ import annotations

import csv
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Deque, Dict, Iterable, List, NamedTuple, Optional, Set, Tuple

import numpy as np

from coding import CodedPacket, DecoderState
from config.defaults import MIN_PROBE_HORIZON, PAYLOAD_SIZE, QUEUE_SAMPLE_EVERY
from topology import Network
from traffic import ArrivalProcess, FlowSpec, validate_flows

PacketKey = Tuple[int, bytes]


class NoDeliveries(LookupError):
    """No packet of the requested pair reached its destination."""


class InsufficientHorizon(ValueError):
    """The record is too short for a queue-growth probe."""


class ArrivalPolicy(Enum):
    """What happens to the extra packets when several arrive in one slot"""
    DROP = "drop"    # only the lowest sender id gets through
    DEFER = "defer"  # the rest wait in the receiver's input backlog


class InFlight(NamedTuple):
    """A packet travelling on one link."""
    packet: CodedPacket
    sender: int
    receiver: int
    arrival_slot: int


@dataclass
class NodeState:
    """Queue, duplicate filter and decoders of one node."""
    node: int
    queue: Deque[CodedPacket] = field(default_factory=deque)
    seen: Set[PacketKey] = field(default_factory=set)
    last_received_from: Dict[PacketKey, int] = field(default_factory=dict)
    decoders: Dict[int, DecoderState] = field(default_factory=dict)
    backlog: Deque[InFlight] = field(default_factory=deque)
    service_rate: int = 1

    @property
    def queue_length(self) -> int:
        """Q_n(t): packets waiting for service plus packets waiting at the port."""
        return len(self.queue) + len(self.backlog)


@dataclass
class Delivery:
    """First arrival of one packet at one of its message's destinations."""
    packet_id: int
    message_id: int
    origin: int
    destination: int
    created_slot: int
    arrived_slot: int
    trace: Tuple[int, ...]

    @property
    def delay(self) -> int:
        return self.arrived_slot - self.created_slot


@dataclass
class DecodeEvent:
    message_id: int
    destination: int
    start_slot: int
    decoded_slot: int

    @property
    def delay(self) -> int:
        return self.decoded_slot - self.start_slot


@dataclass
class SimulationRecord:
    """Everything a run produced."""
    num_nodes: int
    arrival_policy: ArrivalPolicy
    deliveries: List[Delivery] = field(default_factory=list)
    decodes: Dict[Tuple[int, int], DecodeEvent] = field(default_factory=dict)
    queue_lengths: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.int32))
    slots_run: int = 0
    node_arrivals: Optional[Dict[int, Dict[PacketKey, int]]] = None
    link_sends: Counter = field(default_factory=Counter)
    dropped: int = 0
    duplicates: int = 0
    generated: List[CodedPacket] = field(default_factory=list)

    def queue_series(self, node: int) -> np.ndarray:
        return self.queue_lengths[:self.slots_run, node]


class BroadcastEngine:
    """
    Runs fastest-only broadcast over one network.

    Sources of a message never re-admit that message's packets: relaying is
    done by the nodes outside S_m.
    """

    def __init__(self, network: Network, flows: Iterable[FlowSpec] = (),
                 arrivals: Optional[ArrivalProcess] = None,
                 policy: ArrivalPolicy = ArrivalPolicy.DROP,
                 max_slots: int = 0,
                 record_node_arrivals: bool = False,
                 keep_generated: bool = False):
        self.network = network
        self.flows = list(flows)
        validate_flows(self.flows, network.num_nodes)
        self.arrivals = arrivals
        self.policy = ArrivalPolicy(policy)
        self.keep_generated = keep_generated
        self.slot = 0

        self.nodes: List[NodeState] = [NodeState(node=n) for n in network.nodes]
        self._in_flight: Dict[int, List[InFlight]] = defaultdict(list)

        self._flow_of: Dict[int, FlowSpec] = {f.message_id: f for f in self.flows}
        self._sources_of: Dict[int, Set[int]] = {f.message_id: set(f.sources) for f in self.flows}
        self._destinations_of: Dict[int, Set[int]] = {f.message_id: set(f.destinations) for f in self.flows}
        for flow in self.flows:
            for d in flow.destinations:
                self.nodes[d].decoders[flow.message_id] = DecoderState(flow.message_id, flow.k)
        self.pending: Set[Tuple[int, int]] = {
            (f.message_id, d) for f in self.flows for d in f.destinations
        }

        self.record = SimulationRecord(
            num_nodes=network.num_nodes,
            arrival_policy=self.policy,
            queue_lengths=np.zeros((max(max_slots, 0), network.num_nodes), dtype=np.int32),
            node_arrivals={n: {} for n in network.nodes} if record_node_arrivals else None,
        )

    # ------------------------------------------------------------------
    # Packet entry points
    # ------------------------------------------------------------------
    def inject(self, node: int, packet: CodedPacket) -> None:
        """Place a locally generated packet at the tail of a node's queue."""
        state = self.nodes[node]
        if packet.key in state.seen:
            return
        state.seen.add(packet.key)
        state.queue.append(packet)
        if self.record.node_arrivals is not None:
            self.record.node_arrivals[node].setdefault(packet.key, self.slot)
        if self.keep_generated:
            self.record.generated.append(packet)

    def _admit(self, flight: InFlight) -> None:
        packet, sender, node = flight.packet, flight.sender, flight.receiver
        state = self.nodes[node]
        key = packet.key
        if key in state.seen:
            self.record.duplicates += 1
            return
        state.seen.add(key)
        if node in self._sources_of.get(packet.message_id, ()):
            return

        state.last_received_from[key] = sender
        copy = packet.extended(node)
        state.queue.append(copy)
        if self.record.node_arrivals is not None:
            self.record.node_arrivals[node][key] = self.slot

        if node in self._destinations_of.get(packet.message_id, ()):
            self.record.deliveries.append(Delivery(
                packet_id=packet.packet_id,
                message_id=packet.message_id,
                origin=packet.origin,
                destination=node,
                created_slot=packet.created_slot,
                arrived_slot=self.slot,
                trace=copy.trace,
            ))
            decoder = state.decoders[packet.message_id]
            if not decoder.decodable and decoder.absorb(packet) and decoder.decodable:
                self.record.decodes[(packet.message_id, node)] = DecodeEvent(
                    message_id=packet.message_id, destination=node,
                    start_slot=0, decoded_slot=self.slot,
                )
                self.pending.discard((packet.message_id, node))

    # ------------------------------------------------------------------
    # One slot
    # ------------------------------------------------------------------
    def step(self) -> None:
        slot = self.slot

        if self.arrivals is not None:
            for source, packet in self.arrivals.sample_arrivals(slot):
                self.inject(source, packet)

        by_receiver: Dict[int, List[InFlight]] = defaultdict(list)
        for flight in self._in_flight.pop(slot, ()):
            by_receiver[flight.receiver].append(flight)
        for state in self.nodes:
            incoming = by_receiver.get(state.node)
            if incoming:
                incoming.sort(key=lambda f: f.sender)
            if self.policy is ArrivalPolicy.DEFER:
                if incoming:
                    state.backlog.extend(incoming)
                # known copies leave the backlog without using the port
                while state.backlog and self._discardable(state, state.backlog[0].packet):
                    self._admit(state.backlog.popleft())
                if state.backlog:
                    self._admit(state.backlog.popleft())
            elif incoming:
                self._admit(incoming[0])
                self.record.dropped += len(incoming) - 1

        for state in self.nodes:
            if not state.queue:
                continue
            packet = state.queue.popleft()
            came_from = state.last_received_from.get(packet.key)
            for neighbor, weight in self.network.neighbors(state.node):
                if neighbor == came_from:
                    continue
                self._in_flight[slot + weight].append(
                    InFlight(packet, state.node, neighbor, slot + weight)
                )
                self.record.link_sends[(state.node, neighbor)] += 1

        self._reserve_slots(slot + 1)
        self.record.queue_lengths[slot] = [s.queue_length for s in self.nodes]
        self.slot += 1
        self.record.slots_run = self.slot

    def _discardable(self, state: NodeState, packet: CodedPacket) -> bool:
        return (packet.key in state.seen
                or state.node in self._sources_of.get(packet.message_id, ()))

    def _reserve_slots(self, slots: int) -> None:
        """Grow the Q_n(t) matrix to hold at least `slots` rows."""
        have = len(self.record.queue_lengths)
        if slots <= have:
            return
        extra = np.zeros((max(slots - have, have), self.network.num_nodes), dtype=np.int32)
        self.record.queue_lengths = np.vstack([self.record.queue_lengths, extra])

    @property
    def idle(self) -> bool:
        return not self._in_flight and all(not s.queue and not s.backlog for s in self.nodes)

    def run_until_idle(self, max_slots: int) -> SimulationRecord:
        """Step until no packet is queued or in flight (single-packet experiments)."""
        while self.slot < max_slots:
            self.step()
            if self.idle:
                break
        return self.record

    def run(self, max_slots: int, stop_when_decoded: bool = True) -> SimulationRecord:
        self._reserve_slots(max_slots)
        while self.slot < max_slots:
            if stop_when_decoded and self.flows and not self.pending:
                break
            self.step()
        return self.record


def step(engine: BroadcastEngine) -> BroadcastEngine:
    engine.step()
    return engine


def run(network: Network, flows: List[FlowSpec], max_slots: int, rng_seed: int,
        policy: ArrivalPolicy = ArrivalPolicy.DROP,
        payload_size: int = PAYLOAD_SIZE,
        stop_when_decoded: bool = True,
        keep_generated: bool = False) -> SimulationRecord:
    """Simulate the given flows for at most max_slots slots."""
    if max_slots < 1:
        raise ValueError("max_slots must be at least 1")
    arrivals = ArrivalProcess(flows, seed=rng_seed, payload_size=payload_size)
    engine = BroadcastEngine(network, flows, arrivals=arrivals, policy=policy,
                             max_slots=max_slots, keep_generated=keep_generated)
    return engine.run(max_slots, stop_when_decoded=stop_when_decoded)


# ============================================================
# MEASUREMENTS
# ============================================================

def measure_average_delay(record: SimulationRecord, sources: Iterable[int], destination: int,
                          warmup_fraction: float = 0.0) -> float:
    """Mean first-arrival delay of packets from `sources` at `destination`."""
    sources = set(sources)
    cutoff = warmup_fraction * record.slots_run
    delays = [
        d.delay for d in record.deliveries
        if d.destination == destination and d.origin in sources and d.created_slot >= cutoff
    ]
    if not delays:
        raise NoDeliveries(f"No deliveries from {sorted(sources)} to {destination}")
    return float(np.mean(delays))


def measure_decode_delay(record: SimulationRecord, message_id: int, destination: int) -> float:
    event = record.decodes.get((message_id, destination))
    if event is None:
        raise NoDeliveries(f"Message {message_id} never decoded at {destination}")
    return float(event.delay)


def measure_queue_growth(record: SimulationRecord, node: int) -> float:
    """
    Tail average of Q_n(t)/t over the final 10% of slots.

    Close to 0 for a stable node; close to (arrival rate - 1) for an
    overloaded one.
    """
    if record.slots_run < MIN_PROBE_HORIZON:
        raise InsufficientHorizon(
            f"Need at least {MIN_PROBE_HORIZON} slots for a growth probe, have {record.slots_run}"
        )
    series = record.queue_series(node).astype(float)
    start = record.slots_run - max(1, record.slots_run // 10)
    t = np.arange(start, record.slots_run) + 1
    return float(np.mean(series[start:] / t))


def observed_routes(record: SimulationRecord, source: int, destination: int) -> Counter:
    """How often each hop sequence carried the first copy from source to destination."""
    return Counter(
        d.trace for d in record.deliveries if d.origin == source and d.destination == destination
    )


# ============================================================
# CSV EXPORT
# ============================================================

def write_deliveries_csv(record: SimulationRecord, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["packet_id", "message_id", "origin", "destination",
                         "created_slot", "arrived_slot", "decoded_slot", "hops"])
        for d in record.deliveries:
            event = record.decodes.get((d.message_id, d.destination))
            writer.writerow([
                d.packet_id, d.message_id, d.origin, d.destination, d.created_slot,
                d.arrived_slot, event.decoded_slot if event else "",
                "-".join(str(n) for n in d.trace),
            ])


def write_queues_csv(record: SimulationRecord, path, every: int = QUEUE_SAMPLE_EVERY) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    every = max(1, int(every))
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["slot", "node", "queue_len"])
        for slot in range(0, record.slots_run, every):
            for node in range(record.num_nodes):
                writer.writerow([slot, node, int(record.queue_lengths[slot, node])])
