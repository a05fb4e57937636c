"""
Delay Analysis - Analytical estimate of per-pair broadcast delay

The dynamic broadcast routes are replaced by fixed Dijkstra routes. Queuing
is priced only at bottlenecks (nodes where routes of different messages first
converge), each treated as a unit-service discrete-time queue fed by
independent Bernoulli flows. Pairs that can avoid every bottleneck also get a
detour estimate, and the smaller of the two branches is reported.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from topology import Network
from traffic import FlowSpec

Pair = Tuple[int, int]


class Unreachable(LookupError):
    """No path connects the requested pair."""


@dataclass(frozen=True)
class Route:
    """A loop-free path v^0..v^|R| and its propagation delay in slots."""
    pair: Pair
    hops: Tuple[int, ...]
    propagation_delay: int

    @property
    def relays(self) -> Tuple[int, ...]:
        """Intermediate hops (excludes both endpoints)."""
        return self.hops[1:-1]


@dataclass(frozen=True)
class BottleneckReport:
    node: int
    crossing_flows: Tuple[Tuple[int, int, int], ...]  # (message id, source, destination)
    aggregate_rate: float
    component_rates: Tuple[float, ...]  # one Bernoulli rate per crossing source


@dataclass(frozen=True)
class DetourEstimate:
    route: Route
    propagation: int
    queuing: float


@dataclass(frozen=True)
class DelayEstimate:
    pair: Pair
    propagation: int
    queuing_bound: float
    detour: Optional[DetourEstimate]
    combined: float


# ============================================================
# ROUTES
# ============================================================

def dijkstra_route(network: Network, source: int, destination: int) -> Route:
    """
    Minimum-weight path; among equal-weight paths the lexicographically
    smallest hop sequence wins.
    """
    # heap entries (distance, hop sequence): equal distances pop in path order
    heap: List[Tuple[int, Tuple[int, ...]]] = [(0, (source,))]
    settled = set()
    while heap:
        distance, path = heapq.heappop(heap)
        node = path[-1]
        if node in settled:
            continue
        settled.add(node)
        if node == destination:
            return Route(pair=(source, destination), hops=path, propagation_delay=distance)
        for neighbor, weight in network.neighbors(node):
            if neighbor not in settled:
                heapq.heappush(heap, (distance + weight, path + (neighbor,)))
    raise Unreachable(f"No path from {source} to {destination}")


def all_pair_routes(network: Network, flows: Iterable[FlowSpec]) -> Dict[Pair, Route]:
    return {
        (s, d): dijkstra_route(network, s, d)
        for flow in flows for s, d in flow.pairs()
    }


# ============================================================
# BOTTLENECKS
# ============================================================

def find_bottlenecks(network: Network, routes: Iterable[Route],
                     flows: Sequence[FlowSpec]) -> List[BottleneckReport]:
    """
    Nodes where routes of at least two different messages meet, arriving
    from different predecessors.

    Routes of the same message count as one merged flow, so a message with
    several sources never forms a bottleneck with itself. Where two messages
    share a run of consecutive nodes only the first one is reported, since
    the later ones see the already-serialised output of the first.
    """
    message_of: Dict[int, FlowSpec] = {}
    for flow in flows:
        for source in flow.sources:
            message_of[source] = flow

    crossings: Dict[int, List[Tuple[int, int, int, int]]] = {}
    for route in routes:
        source, destination = route.pair
        flow = message_of.get(source)
        if flow is None:
            continue
        for position in range(1, len(route.hops)):
            node = route.hops[position]
            crossings.setdefault(node, []).append(
                (flow.message_id, source, destination, route.hops[position - 1])
            )

    reports = []
    for node in sorted(crossings):
        entries = crossings[node]
        if len({message for message, _, _, _ in entries}) < 2:
            continue
        converging = any(
            a[0] != b[0] and a[3] != b[3]
            for i, a in enumerate(entries) for b in entries[i + 1:]
        )
        if not converging:
            continue

        crossing_sources = sorted({source for _, source, _, _ in entries})
        rates = tuple(message_of[s].rate(s) for s in crossing_sources)
        reports.append(BottleneckReport(
            node=node,
            crossing_flows=tuple(sorted({(m, s, d) for m, s, d, _ in entries})),
            aggregate_rate=sum(rates),
            component_rates=rates,
        ))
    return reports


def network_is_stable(bottlenecks: Iterable[BottleneckReport]) -> bool:
    """A network is stable when every bottleneck is loaded below its unit service rate."""
    return all(b.aggregate_rate < 1.0 for b in bottlenecks)


# ============================================================
# QUEUING
# ============================================================

def batch_queue_wait(rates: Sequence[float]) -> float:
    """
    Mean wait of a unit-service slotted queue fed by independent Bernoulli flows.

    With A the number of arrivals per slot and lam = E[A],
    E[W] = E[A(A-1)] / (2 lam (1 - lam)). Infinite when lam >= 1.
    """
    lam = float(sum(rates))
    if lam <= 0.0:
        return 0.0
    if lam >= 1.0:
        return math.inf
    pair_moment = lam * lam - sum(r * r for r in rates)  # E[A(A-1)] = 2 * sum_{i<j} r_i r_j
    return pair_moment / (2.0 * lam * (1.0 - lam))


def queuing_bound(bottleneck: BottleneckReport) -> float:
    return batch_queue_wait(bottleneck.component_rates)


def batch_distribution(rates: Sequence[float]) -> np.ndarray:
    """P(A = a) for a = 0..len(rates): Poisson-binomial by convolution."""
    distribution = np.array([1.0])
    for r in rates:
        distribution = np.convolve(distribution, [1.0 - r, r])
    return distribution


def markov_chain_mean_wait(rates: Sequence[float], truncation: int = 2000) -> float:
    """
    Exact mean wait from the stationary law of the leftover-work chain
    V' = max(V + A - 1, 0), truncated at `truncation` states.
    """
    lam = float(sum(rates))
    if lam <= 0.0:
        return 0.0
    if lam >= 1.0:
        return math.inf
    batch = batch_distribution(rates)
    size = truncation
    transition = np.zeros((size, size))
    for v in range(size):
        for a, p in enumerate(batch):
            nxt = min(max(v + a - 1, 0), size - 1)
            transition[v, nxt] += p

    # stationary vector: solve pi (P - I) = 0 with sum(pi) = 1
    system = transition.T - np.eye(size)
    system[-1, :] = 1.0
    rhs = np.zeros(size)
    rhs[-1] = 1.0
    stationary = np.linalg.solve(system, rhs)

    leftover = float(np.dot(stationary, np.arange(size)))
    counts = np.arange(len(batch))
    batch_mates = float(np.dot(batch, counts * (counts - 1))) / (2.0 * lam)
    return leftover + batch_mates


def simulate_isolated_queue(rates: Sequence[float], slots: int, seed: int = 0) -> float:
    """Brute-force mean wait of the same queue, packets served FIFO within a slot."""
    rng = np.random.default_rng(seed)
    arrivals = (rng.random((slots, len(rates))) < np.asarray(rates)).sum(axis=1)
    leftover = 0
    total_wait = 0
    total_packets = 0
    for a in arrivals.tolist():
        if a:
            total_wait += a * leftover + a * (a - 1) // 2
            total_packets += a
        leftover = max(leftover + a - 1, 0)
    return total_wait / total_packets if total_packets else 0.0


# ============================================================
# DETOURS
# ============================================================

def detect_detour(network: Network, pair: Pair,
                  bottlenecks: Iterable[BottleneckReport]) -> Optional[Route]:
    """
    Shortest path after deleting every bottleneck node, or None.

    The pair's own endpoints are never deleted; arrival at the destination
    is logged on admission, before any wait in its queue.
    """
    source, destination = pair
    removed = {b.node for b in bottlenecks} - {source, destination}
    try:
        return dijkstra_route(network.without_nodes(removed), source, destination)
    except Unreachable:
        return None


def detour_queuing(route: Route, own_rate: float,
                   cross_rates: Optional[Dict[int, Sequence[float]]] = None) -> float:
    """
    Tandem of unit-service queues along the detour's relays.

    Each relay is priced with the batch formula over the pair's own rate
    plus whatever other traffic is known to cross it.
    """
    cross_rates = cross_rates or {}
    return sum(
        batch_queue_wait([own_rate, *cross_rates.get(node, ())]) for node in route.relays
    )


# ============================================================
# COMPOSITE ESTIMATE
# ============================================================

def approximate_delay(network: Network, flows: Sequence[FlowSpec], pair: Pair,
                      exempt: bool = False) -> DelayEstimate:
    """
    Propagation + queuing at the bottleneck relays of the Dijkstra route, or the detour
    branch when it is smaller. `exempt` zeroes every queuing term (all
    traffic belongs to one coded message).
    """
    source, destination = pair
    route = dijkstra_route(network, source, destination)
    routes = all_pair_routes(network, flows)
    routes.setdefault(pair, route)
    bottlenecks = find_bottlenecks(network, routes.values(), flows)

    on_route = [b for b in bottlenecks if b.node in route.relays]
    queuing = 0.0 if exempt else sum(queuing_bound(b) for b in on_route)
    primary = route.propagation_delay + queuing

    own_flow = next((f for f in flows if source in f.sources), None)
    own_rate = own_flow.rate(source) if own_flow else 0.0

    detour = None
    detour_route = detect_detour(network, pair, bottlenecks)
    if detour_route is not None:
        if exempt:
            detour_queue = 0.0
        else:
            cross = _cross_rates(flows, routes, detour_route.relays, own_flow)
            detour_queue = detour_queuing(detour_route, own_rate, cross)
        detour = DetourEstimate(route=detour_route,
                                propagation=detour_route.propagation_delay,
                                queuing=detour_queue)

    combined = primary if detour is None else min(primary, detour.propagation + detour.queuing)
    return DelayEstimate(pair=pair, propagation=route.propagation_delay,
                         queuing_bound=queuing, detour=detour, combined=combined)


def _cross_rates(flows: Sequence[FlowSpec], routes: Dict[Pair, Route], relays: Sequence[int],
                 own_flow: Optional[FlowSpec]) -> Dict[int, List[float]]:
    """Per relay: one rate for each other-message source whose route relays through it."""
    cross: Dict[int, List[float]] = {}
    for node in relays:
        sources = sorted({p[0] for p, r in routes.items() if node in r.relays})
        rates = [f.rate(s) for s in sources for f in flows
                 if s in f.sources and f is not own_flow]
        if rates:
            cross[node] = rates
    return cross


def same_message_exemption(flows: Sequence[FlowSpec], coding_enabled: bool = True) -> Dict[int, bool]:
    """
    Per message: True iff it is the only message in the network and coding
    is on, in which case destination delay does not depend on queues.
    """
    only_one = len(flows) == 1
    return {f.message_id: only_one and coding_enabled for f in flows}
