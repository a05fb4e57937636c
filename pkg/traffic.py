"""
Traffic - Flow specifications and per-slot Bernoulli source arrivals
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from coding import CodedPacket, SourceMessage, encode
from config.defaults import DEFAULT_K, PAYLOAD_SIZE
from topology import InvalidParameter, RoleAssignment


@dataclass(frozen=True)
class FlowSpec:
    """
    One message m: its sources S_m, destinations D_m, division count K_m and
    the per-source generation rate lambda_s.
    """
    message_id: int
    sources: Tuple[int, ...]
    destinations: Tuple[int, ...]
    k: int = DEFAULT_K
    rates: Dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "destinations", tuple(self.destinations))
        if not self.sources:
            raise InvalidParameter(f"Message {self.message_id} has no sources")
        if not self.destinations:
            raise InvalidParameter(f"Message {self.message_id} has no destinations")
        if set(self.sources) & set(self.destinations):
            raise InvalidParameter(f"Message {self.message_id}: a node is both source and destination")
        if self.k < 1:
            raise InvalidParameter(f"Message {self.message_id}: K must be at least 1")
        if set(self.rates) != set(self.sources):
            raise InvalidParameter(f"Message {self.message_id}: need exactly one rate per source")
        for source, rate in self.rates.items():
            if not 0.0 <= rate <= 1.0:
                raise InvalidParameter(
                    f"Message {self.message_id}: rate {rate} of source {source} outside [0, 1]"
                )

    def rate(self, source: int) -> float:
        return self.rates[source]

    def pairs(self) -> List[Tuple[int, int]]:
        return [(s, d) for s in self.sources for d in self.destinations]

    def __hash__(self):
        return hash((self.message_id, self.sources, self.destinations, self.k))


def message_rate(flow: FlowSpec) -> float:
    """lambda_m: sum of the per-source rates (may exceed 1)."""
    return sum(flow.rates[s] for s in flow.sources)


def validate_flows(flows: Sequence[FlowSpec], num_nodes: Optional[int] = None) -> None:
    """Flows must use distinct message ids and pairwise disjoint node sets."""
    seen_ids = set()
    used_sources: Dict[int, int] = {}
    used_destinations: Dict[int, int] = {}
    for flow in flows:
        if flow.message_id in seen_ids:
            raise InvalidParameter(f"Duplicate message id {flow.message_id}")
        seen_ids.add(flow.message_id)
        for node in flow.sources + flow.destinations:
            if num_nodes is not None and not 0 <= node < num_nodes:
                raise InvalidParameter(f"Message {flow.message_id} references unknown node {node}")
        for source in flow.sources:
            if source in used_sources:
                raise InvalidParameter(
                    f"Source {source} shared by messages {used_sources[source]} and {flow.message_id}"
                )
            used_sources[source] = flow.message_id
        for destination in flow.destinations:
            if destination in used_destinations:
                raise InvalidParameter(
                    f"Destination {destination} shared by messages "
                    f"{used_destinations[destination]} and {flow.message_id}"
                )
            used_destinations[destination] = flow.message_id
    overlap = set(used_sources) & set(used_destinations)
    if overlap:
        raise InvalidParameter(f"Nodes {sorted(overlap)} are both sources and destinations")


def build_flows(roles: RoleAssignment, lambda_sum: float, k: int = DEFAULT_K,
                mode: str = "distinct",
                weights: Optional[Dict[int, float]] = None) -> List[FlowSpec]:
    """
    Turn a role assignment into flows carrying a total rate of lambda_sum.

    mode="distinct": one message per source; destinations are dealt out
    round-robin so source i serves destination i (and i + |S|, ...).
    mode="single": one message from every source to every destination.

    lambda_sum is split equally across sources unless relative `weights`
    (source -> weight) are given.
    """
    sources = list(roles.sources)
    if weights:
        missing = set(sources) - set(weights)
        if missing:
            raise InvalidParameter(f"No rate weight for sources {sorted(missing)}")
        total = sum(weights[s] for s in sources)
        rates = {s: lambda_sum * weights[s] / total for s in sources}
    else:
        rates = {s: lambda_sum / len(sources) for s in sources}

    if mode == "single":
        return [FlowSpec(message_id=1, sources=tuple(sources), destinations=roles.destinations,
                         k=k, rates=rates)]
    if mode != "distinct":
        raise InvalidParameter(f"Unknown flow mode '{mode}'")
    if len(roles.destinations) < len(sources):
        raise InvalidParameter("Distinct messages need at least one destination per source")

    assigned: Dict[int, List[int]] = {s: [] for s in sources}
    for index, destination in enumerate(roles.destinations):
        assigned[sources[index % len(sources)]].append(destination)
    return [
        FlowSpec(message_id=i + 1, sources=(s,), destinations=tuple(assigned[s]), k=k,
                 rates={s: rates[s]})
        for i, s in enumerate(sources)
    ]


def scale_flows(flows: Iterable[FlowSpec], lambda_sum: float) -> List[FlowSpec]:
    """Rescale every per-source rate so that all rates add up to lambda_sum."""
    flows = list(flows)
    total = sum(message_rate(f) for f in flows)
    if total <= 0:
        raise InvalidParameter("Cannot rescale flows that carry no traffic")
    factor = lambda_sum / total
    return [
        FlowSpec(message_id=f.message_id, sources=f.sources, destinations=f.destinations, k=f.k,
                 rates={s: r * factor for s, r in f.rates.items()})
        for f in flows
    ]


class ArrivalProcess:
    """
    Independent Bernoulli(lambda_s) packet generation at every source.

    Each source draws from its own generator spawned from one SeedSequence,
    both for the arrival coin and for the coefficient vector, so a run is
    reproducible from the seed alone.
    """

    def __init__(self, flows: Sequence[FlowSpec], seed: int, payload_size: int = PAYLOAD_SIZE):
        validate_flows(flows)
        self.flows = list(flows)
        root = np.random.SeedSequence(seed)
        message_seed, source_seed = root.spawn(2)

        message_rng = np.random.default_rng(message_seed)
        self.messages: Dict[int, SourceMessage] = {
            flow.message_id: SourceMessage.random(flow.message_id, flow.k, payload_size, message_rng)
            for flow in sorted(self.flows, key=lambda f: f.message_id)
        }

        self._sources: List[Tuple[int, float, SourceMessage]] = sorted(
            (s, flow.rate(s), self.messages[flow.message_id])
            for flow in self.flows for s in flow.sources
        )
        generators = source_seed.spawn(len(self._sources))
        self._rngs = [np.random.default_rng(g) for g in generators]
        self._next_packet_id = 0
        self.emitted: Dict[int, int] = {s: 0 for s, _, _ in self._sources}

    @property
    def sources(self) -> List[int]:
        return [s for s, _, _ in self._sources]

    def sample_arrivals(self, slot: int) -> List[Tuple[int, CodedPacket]]:
        """New packets for this slot, in ascending source order."""
        arrivals = []
        for (source, rate, message), rng in zip(self._sources, self._rngs):
            if rng.random() >= rate:
                continue
            packet = encode(message, rng, origin=source, created_slot=slot,
                            packet_id=self._next_packet_id)
            self._next_packet_id += 1
            self.emitted[source] += 1
            arrivals.append((source, packet))
        return arrivals


def sample_arrivals(process: ArrivalProcess, slot: int) -> List[Tuple[int, CodedPacket]]:
    return process.sample_arrivals(slot)
