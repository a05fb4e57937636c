"""
Topology - Slotted multi-hop network graphs
Weighted undirected graphs whose link weights are integer slot delays,
plus the generators used by the experiments (random Gaussian-weighted
graphs and the fixed three-pair detour example).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Tuple

import networkx as nx
import numpy as np

from config.defaults import DEFAULT_K, MAX_TOPOLOGY_RETRIES

NodeId = int
Link = Tuple[NodeId, NodeId, int]


class InvalidParameter(ValueError):
    """Raised when a generator or role assignment gets out-of-range input."""


class ConnectivityFailure(RuntimeError):
    """Raised when no connected graph was sampled within max_retries attempts."""


class TopologyFormatError(ValueError):
    """Raised for malformed edge-list files."""


class Network:
    """
    Immutable weighted undirected graph.

    Nodes are the dense integers 0..V-1. Every link weight is an integer
    number of slots, at least 1. Adjacency lists are sorted by neighbor id
    so that everything iterating over them is deterministic.
    """

    def __init__(self, num_nodes: int, links: Iterable[Link]):
        if num_nodes < 1:
            raise InvalidParameter("A network needs at least one node")

        graph = nx.Graph()
        graph.add_nodes_from(range(num_nodes))
        for u, v, w in links:
            u, v, w = int(u), int(v), int(w)
            if u == v:
                raise InvalidParameter(f"Self-loop on node {u}")
            if not (0 <= u < num_nodes and 0 <= v < num_nodes):
                raise InvalidParameter(f"Link ({u}, {v}) references an unknown node")
            if w < 1:
                raise InvalidParameter(f"Link ({u}, {v}) has weight {w}; minimum is 1 slot")
            if graph.has_edge(u, v) and graph.edges[u, v]["weight"] != w:
                raise InvalidParameter(f"Link ({u}, {v}) listed twice with different weights")
            graph.add_edge(u, v, weight=w)

        self._graph = nx.freeze(graph)
        self._adjacency: Dict[NodeId, Tuple[Tuple[NodeId, int], ...]] = {
            node: tuple(sorted((nbr, data["weight"]) for nbr, data in graph.adj[node].items()))
            for node in range(num_nodes)
        }

    # ------------------------------------------------------------------
    # Queries
    # ------------------------------------------------------------------
    @property
    def graph(self) -> nx.Graph:
        """Frozen networkx view (read-only)."""
        return self._graph

    @property
    def num_nodes(self) -> int:
        return self._graph.number_of_nodes()

    @property
    def nodes(self) -> range:
        return range(self.num_nodes)

    @property
    def links(self) -> List[Link]:
        """Undirected links as (u, v, w) with u < v, sorted."""
        return sorted(
            (min(u, v), max(u, v), data["weight"]) for u, v, data in self._graph.edges(data=True)
        )

    def neighbors(self, node: NodeId) -> Tuple[Tuple[NodeId, int], ...]:
        """Sorted (neighbor, weight) pairs of a node."""
        return self._adjacency[node]

    def weight(self, u: NodeId, v: NodeId) -> int:
        return self._graph.edges[u, v]["weight"]

    def has_link(self, u: NodeId, v: NodeId) -> bool:
        return self._graph.has_edge(u, v)

    def is_connected(self) -> bool:
        return self.num_nodes > 0 and nx.is_connected(self._graph)

    def without_nodes(self, removed: Iterable[NodeId]) -> "Network":
        """
        Residual network with the given nodes isolated.

        Node ids are kept (removed nodes simply lose every incident link) so
        routes found on the residual graph are valid on the original one.
        """
        removed = set(removed)
        kept = [(u, v, w) for u, v, w in self.links if u not in removed and v not in removed]
        return Network(self.num_nodes, kept)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Network):
            return NotImplemented
        return self.num_nodes == other.num_nodes and self.links == other.links

    def __repr__(self) -> str:
        return f"Network(V={self.num_nodes}, E={len(self.links)})"


@dataclass(frozen=True)
class RoleAssignment:
    """Source set S and destination set D."""
    sources: Tuple[NodeId, ...]
    destinations: Tuple[NodeId, ...]

    def __post_init__(self):
        if not self.sources or not self.destinations:
            raise InvalidParameter("Both the source and destination sets must be non-empty")
        overlap = set(self.sources) & set(self.destinations)
        if overlap:
            raise InvalidParameter(f"Sources and destinations overlap on {sorted(overlap)}")


# ============================================================
# GENERATORS
# ============================================================

def generate_random_network(num_nodes: int, edge_probability: float,
                            weight_mean: float, weight_stddev: float,
                            rng_seed: int,
                            max_retries: int = MAX_TOPOLOGY_RETRIES) -> Network:
    """
    Sample a connected G(n, p) graph with Gaussian slot weights.

    Weights are rounded to the nearest integer and clamped below at 1.
    Disconnected samples are discarded and redrawn from the same seeded
    stream, so a seed always maps to the same network.
    """
    if num_nodes < 2:
        raise InvalidParameter(f"num_nodes must be at least 2 (got {num_nodes})")
    if not 0.0 < edge_probability <= 1.0:
        raise InvalidParameter(f"edge_probability must lie in (0, 1] (got {edge_probability})")
    if weight_mean < 1:
        raise InvalidParameter(f"weight_mean must be at least 1 (got {weight_mean})")
    if weight_stddev < 0:
        raise InvalidParameter(f"weight_stddev must be non-negative (got {weight_stddev})")

    rng = np.random.default_rng(rng_seed)
    for _ in range(max_retries):
        graph = nx.gnp_random_graph(num_nodes, edge_probability, seed=int(rng.integers(2**32)))
        if not nx.is_connected(graph):
            continue
        edges = sorted((min(u, v), max(u, v)) for u, v in graph.edges())
        samples = rng.normal(weight_mean, weight_stddev, size=len(edges))
        weights = np.maximum(1, np.rint(samples)).astype(int)
        return Network(num_nodes, [(u, v, int(w)) for (u, v), w in zip(edges, weights)])

    raise ConnectivityFailure(
        f"No connected graph with {num_nodes} nodes at p={edge_probability} "
        f"after {max_retries} attempts"
    )


# Fixed example: three pairs whose shortest paths all cross n2.
SPECIAL_CASE_LABELS: Dict[NodeId, str] = {
    0: "s1", 1: "s2", 2: "s3",
    3: "n1", 4: "n2", 5: "n3",
    6: "d1", 7: "d2", 8: "d3",
}

_SPECIAL_CASE_LINKS: List[Link] = [
    # shortest paths s_i -> n2 -> d_i, 2 slots each
    (0, 4, 1), (1, 4, 1), (2, 4, 1),
    (4, 6, 1), (4, 7, 1), (4, 8, 1),
    # detours for (s1, d1) via n1 and (s3, d3) via n3, 4 slots each
    (0, 3, 2), (3, 6, 2),
    (2, 5, 2), (5, 8, 2),
]


def special_case_network(rate: float = 0.5, k: int = DEFAULT_K):
    """
    Build the three-pair bottleneck example.

    Returns (network, flows): one distinct message per pair (s_i, d_i),
    every source sending at `rate`.
    """
    from traffic import FlowSpec

    network = Network(len(SPECIAL_CASE_LABELS), _SPECIAL_CASE_LINKS)
    flows = [
        FlowSpec(message_id=i + 1, sources=(source,), destinations=(destination,),
                 k=k, rates={source: rate})
        for i, (source, destination) in enumerate([(0, 6), (1, 7), (2, 8)])
    ]
    return network, flows


def assign_roles(network: Network, num_sources: int, num_destinations: int) -> RoleAssignment:
    """Smallest ids become sources, largest ids become destinations."""
    if num_sources < 1 or num_destinations < 1:
        raise InvalidParameter("Need at least one source and one destination")
    if num_sources + num_destinations > network.num_nodes:
        raise InvalidParameter(
            f"{num_sources} sources + {num_destinations} destinations would overlap "
            f"in a {network.num_nodes}-node network"
        )
    n = network.num_nodes
    return RoleAssignment(
        sources=tuple(range(num_sources)),
        destinations=tuple(range(n - num_destinations, n)),
    )


# ============================================================
# EDGE-LIST FILES
# ============================================================

def save_edge_list(network: Network, path) -> None:
    """Write 'V E' then one 'u v w' line per undirected link."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    links = network.links
    lines = [f"{network.num_nodes} {len(links)}"]
    lines.extend(f"{u} {v} {w}" for u, v, w in links)
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def load_edge_list(path) -> Network:
    """Parse an edge-list file written by save_edge_list (or by hand)."""
    path = Path(path)
    try:
        raw_lines = path.read_text(encoding="ascii").splitlines()
    except OSError as e:
        raise TopologyFormatError(f"Cannot read topology file {path}: {e}") from e

    lines = [(number, line.split()) for number, line in enumerate(raw_lines, start=1) if line.strip()]
    if not lines:
        raise TopologyFormatError(f"{path}: empty topology file")

    header_number, header = lines[0]
    try:
        num_nodes, num_links = (int(x) for x in header)
    except ValueError:
        raise TopologyFormatError(f"{path}:{header_number}: expected 'V E' header") from None

    links: List[Link] = []
    for number, fields in lines[1:]:
        if len(fields) != 3:
            raise TopologyFormatError(f"{path}:{number}: expected 'u v w'")
        try:
            links.append((int(fields[0]), int(fields[1]), int(fields[2])))
        except ValueError:
            raise TopologyFormatError(f"{path}:{number}: non-integer field") from None

    if len(links) != num_links:
        raise TopologyFormatError(f"{path}: header promises {num_links} links, found {len(links)}")
    try:
        return Network(num_nodes, links)
    except InvalidParameter as e:
        raise TopologyFormatError(f"{path}: {e}") from e
