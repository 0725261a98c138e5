"""Undirected communication graphs, their companion symmetric digraphs, and
random link activation.

Every undirected edge {i, j} is represented by the two opposing arcs (i, j)
and (j, i).  Arcs are ordered deterministically: all edges in input order as
(i, j), then all reversals (j, i) in the same order, so arc q and arc q + E
are mirror images.  All matrix objects derived from the graph are kept in
block-index form (tail/head arrays); dense renders exist for verification at
small sizes only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DisconnectedGraph, GenerationFailed, InvalidEdge

__all__ = [
    "GraphTopology",
    "IncidenceSet",
    "ActivationModel",
    "ActivationDraw",
    "build_topology",
    "incidence_matrices",
    "activation_model",
    "activation_statistics",
    "sample_activation",
    "random_geometric_graph",
    "arc_weighted_pull",
    "signless_weighted_apply",
    "signed_weighted_apply",
    "topology_to_json",
    "topology_from_json",
]


@dataclass(frozen=True)
class GraphTopology:
    """Connected undirected graph plus its companion symmetric digraph.

    ``arcs`` lists all 2E ordered pairs: edges in input order first, then all
    reversals in the same order.  ``tails``/``heads`` are the arc endpoints as
    index arrays, so arc ``q`` runs from ``tails[q]`` to ``heads[q]`` and its
    mirror is arc ``reverse_arc[q]``.
    """

    node_count: int
    edges: tuple[tuple[int, int], ...]
    arcs: tuple[tuple[int, int], ...]
    arc_index: dict[tuple[int, int], int]
    neighbor_sets: tuple[frozenset[int], ...]
    tails: np.ndarray = field(repr=False)
    heads: np.ndarray = field(repr=False)
    reverse_arc: np.ndarray = field(repr=False)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @property
    def arc_count(self) -> int:
        return len(self.arcs)

    def degrees(self) -> np.ndarray:
        return np.array([len(s) for s in self.neighbor_sets], dtype=int)


def _check_connected(n: int, edges: list[tuple[int, int]]) -> bool:
    """Union-find connectivity over the edge list."""
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
    return all(find(k) == find(0) for k in range(n))


def build_topology(node_count: int, edge_list) -> GraphTopology:
    """Validate an edge list and build the companion symmetric digraph.

    Raises
    ------
    InvalidEdge
        On self-loops, duplicate edges, or out-of-range node indices.
    DisconnectedGraph
        If the undirected graph is not connected.  A single node with no
        edges counts as connected.
    """
    if node_count < 1:
        raise InvalidEdge(f"node_count must be positive, got {node_count}")
    edges: list[tuple[int, int]] = []
    seen: set[frozenset[int]] = set()
    for pair in edge_list:
        i, j = int(pair[0]), int(pair[1])
        if i == j:
            raise InvalidEdge(f"self-loop at node {i}")
        if not (0 <= i < node_count and 0 <= j < node_count):
            raise InvalidEdge(f"edge ({i},{j}) out of range for N={node_count}")
        key = frozenset((i, j))
        if key in seen:
            raise InvalidEdge(f"duplicate edge ({i},{j})")
        seen.add(key)
        edges.append((i, j))
    if not _check_connected(node_count, edges):
        raise DisconnectedGraph(
            f"graph with {node_count} nodes and {len(edges)} edges is not connected"
        )

    arcs = [(i, j) for i, j in edges] + [(j, i) for i, j in edges]
    arc_index = {arc: q for q, arc in enumerate(arcs)}
    neighbors: list[set[int]] = [set() for _ in range(node_count)]
    for i, j in edges:
        neighbors[i].add(j)
        neighbors[j].add(i)

    e = len(edges)
    tails = np.array([a[0] for a in arcs], dtype=np.intp)
    heads = np.array([a[1] for a in arcs], dtype=np.intp)
    reverse = np.concatenate([np.arange(e) + e, np.arange(e)]).astype(np.intp)
    return GraphTopology(
        node_count=node_count,
        edges=tuple(edges),
        arcs=tuple(arcs),
        arc_index=arc_index,
        neighbor_sets=tuple(frozenset(s) for s in neighbors),
        tails=tails,
        heads=heads,
        reverse_arc=reverse,
    )


@dataclass(frozen=True)
class IncidenceSet:
    """Arc-node incidence structure for block size ``block_size``.

    The constraint matrices live implicitly in ``topology.tails`` and
    ``topology.heads``; the dense renders below materialize them for
    verification and are quadratic in the problem size, so call them only on
    small instances.
    """

    topology: GraphTopology
    block_size: int

    def _block_rows(self, cols: np.ndarray) -> np.ndarray:
        n, m = self.topology.node_count, self.block_size
        out = np.zeros((self.topology.arc_count * m, n * m))
        for q, c in enumerate(cols):
            out[q * m:(q + 1) * m, c * m:(c + 1) * m] = np.eye(m)
        return out

    def a1_dense(self) -> np.ndarray:
        """Tail incidence: block (q, i) is the identity for arc q = (i, j)."""
        return self._block_rows(self.topology.tails)

    def a2_dense(self) -> np.ndarray:
        """Head incidence: block (q, j) is the identity for arc q = (i, j)."""
        return self._block_rows(self.topology.heads)

    def a_dense(self) -> np.ndarray:
        return np.vstack([self.a1_dense(), self.a2_dense()])

    def b_dense(self) -> np.ndarray:
        eye = np.eye(self.topology.arc_count * self.block_size)
        return np.vstack([-eye, -eye])

    def m_plus_dense(self) -> np.ndarray:
        return self.a1_dense().T + self.a2_dense().T

    def m_minus_dense(self) -> np.ndarray:
        return self.a1_dense().T - self.a2_dense().T

    def m_plus_t(self, x: np.ndarray) -> np.ndarray:
        """Apply the transpose of the signless incidence sum: arc q gets
        ``x[tail] + x[head]``.  Input (N, M), output (2E, M)."""
        return x[self.topology.tails] + x[self.topology.heads]

    def constraint_gap(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Stacked consensus violation ``Ax + Bz`` as a (4E, M) array."""
        return np.vstack([x[self.topology.tails] - z, x[self.topology.heads] - z])

    def constraint_residual(self, x: np.ndarray, z: np.ndarray) -> float:
        """Euclidean norm of ``Ax + Bz``."""
        return float(np.linalg.norm(self.constraint_gap(x, z)))


def incidence_matrices(topology: GraphTopology, block_size: int = 1) -> IncidenceSet:
    if block_size < 1:
        raise InvalidEdge(f"block size must be positive, got {block_size}")
    return IncidenceSet(topology=topology, block_size=block_size)


def _symmetrized(topology: GraphTopology, rho_arc: np.ndarray) -> np.ndarray:
    """Per-arc symmetrized penalties: (rho_q + rho_mirror(q)) / 2."""
    return 0.5 * (rho_arc + rho_arc[topology.reverse_arc])


def arc_weighted_pull(topology: GraphTopology, rho_arc: np.ndarray,
                      z: np.ndarray) -> np.ndarray:
    """Per-node sum of penalty-weighted link variables over both arc
    directions: node i gets sum_j (rho_ji z_ji + rho_ij z_ij)."""
    out = np.zeros((topology.node_count,) + z.shape[1:])
    vals = rho_arc[:, None] * z if z.ndim > 1 else rho_arc * z
    np.add.at(out, topology.tails, vals)
    np.add.at(out, topology.heads, vals)
    return out


def signless_weighted_apply(topology: GraphTopology, rho_arc: np.ndarray,
                            x: np.ndarray) -> np.ndarray:
    """Neighbor-sum form of the weighted signless Laplacian: node i gets
    sum_j (rho_ij + rho_ji) (x_i + x_j)."""
    rho_hat = _symmetrized(topology, rho_arc)
    out = np.zeros_like(x, dtype=float)
    vals = 2.0 * rho_hat[:, None] * (x[topology.tails] + x[topology.heads]) \
        if x.ndim > 1 else 2.0 * rho_hat * (x[topology.tails] + x[topology.heads])
    np.add.at(out, topology.tails, vals)
    return out


def signed_weighted_apply(topology: GraphTopology, rho_arc: np.ndarray,
                          x: np.ndarray) -> np.ndarray:
    """Neighbor-sum form of the weighted signed Laplacian: node i gets
    sum_j (rho_ij + rho_ji) (x_i - x_j)."""
    rho_hat = _symmetrized(topology, rho_arc)
    out = np.zeros_like(x, dtype=float)
    vals = 2.0 * rho_hat[:, None] * (x[topology.tails] - x[topology.heads]) \
        if x.ndim > 1 else 2.0 * rho_hat * (x[topology.tails] - x[topology.heads])
    np.add.at(out, topology.tails, vals)
    return out


@dataclass(frozen=True)
class ActivationModel:
    """Independent per-edge activation probabilities.

    ``link_probs`` holds one probability per undirected edge (shared by both
    arcs).  A node is active in a round iff at least one incident edge is,
    hence ``node_probs[i] = 1 - prod_j (1 - p_ij)``.
    """

    topology: GraphTopology
    link_probs: np.ndarray
    node_probs: np.ndarray

    def psi(self) -> np.ndarray:
        """Diagonal of the node activation matrix."""
        return self.node_probs.copy()

    def phi(self) -> np.ndarray:
        """Diagonal of the arc activation matrix (both arcs of an edge share
        the edge probability)."""
        return np.concatenate([self.link_probs, self.link_probs])


def activation_model(topology: GraphTopology, link_probs) -> ActivationModel:
    """Build an activation model from a scalar, per-edge array, or mapping
    keyed by edge (either orientation)."""
    e = topology.edge_count
    if np.isscalar(link_probs):
        p = np.full(e, float(link_probs))
    elif isinstance(link_probs, dict):
        p = np.empty(e)
        for k, (i, j) in enumerate(topology.edges):
            if (i, j) in link_probs:
                p[k] = link_probs[(i, j)]
            elif (j, i) in link_probs:
                p[k] = link_probs[(j, i)]
            else:
                raise InvalidEdge(f"no activation probability for edge ({i},{j})")
    else:
        p = np.asarray(link_probs, dtype=float)
        if p.shape != (e,):
            raise InvalidEdge(f"expected {e} edge probabilities, got shape {p.shape}")
    if np.any(p <= 0.0) or np.any(p > 1.0):
        raise InvalidEdge("activation probabilities must lie in (0, 1]")

    fail = np.ones(topology.node_count)
    for k, (i, j) in enumerate(topology.edges):
        fail[i] *= 1.0 - p[k]
        fail[j] *= 1.0 - p[k]
    alpha = 1.0 - fail
    return ActivationModel(topology=topology, link_probs=p, node_probs=alpha)


def activation_statistics(model: ActivationModel) -> tuple[np.ndarray, np.ndarray]:
    """Diagonals of the node (Psi) and arc (Phi) activation matrices."""
    return model.psi(), model.phi()


@dataclass(frozen=True)
class ActivationDraw:
    """One round of random link activation, closed under arc reversal."""

    active_edges: np.ndarray
    active_arcs: np.ndarray
    active_nodes: np.ndarray

    @property
    def edge_count(self) -> int:
        return int(np.count_nonzero(self.active_edges))

    @property
    def node_count(self) -> int:
        return int(np.count_nonzero(self.active_nodes))


def full_draw(topology: GraphTopology) -> ActivationDraw:
    """The deterministic all-active draw (static graphs use this)."""
    return ActivationDraw(
        active_edges=np.ones(topology.edge_count, dtype=bool),
        active_arcs=np.ones(topology.arc_count, dtype=bool),
        active_nodes=np.ones(topology.node_count, dtype=bool),
    )


def sample_activation(model: ActivationModel, rng: np.random.Generator) -> ActivationDraw:
    """Draw one round: each edge active independently with its probability,
    both arcs included, nodes active iff incident to an active arc."""
    topo = model.topology
    edges_on = rng.random(topo.edge_count) < model.link_probs
    arcs_on = np.concatenate([edges_on, edges_on])
    nodes_on = np.zeros(topo.node_count, dtype=bool)
    nodes_on[topo.tails[arcs_on]] = True
    nodes_on[topo.heads[arcs_on]] = True
    return ActivationDraw(active_edges=edges_on, active_arcs=arcs_on,
                          active_nodes=nodes_on)


def random_geometric_graph(node_count: int, radius: float,
                           rng: np.random.Generator,
                           max_retries: int = 1000) -> GraphTopology:
    """Uniform points in the unit square, edges below the given distance,
    resampled until connected.

    Raises GenerationFailed when the retry budget runs out.
    """
    if node_count < 1:
        raise InvalidEdge(f"node_count must be positive, got {node_count}")
    if not (0.0 < radius <= np.sqrt(2.0)):
        raise InvalidEdge(f"radius must be in (0, sqrt(2)], got {radius}")
    for _ in range(max_retries):
        points = rng.random((node_count, 2))
        diff = points[:, None, :] - points[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=2))
        edges = [(i, j) for i in range(node_count) for j in range(i + 1, node_count)
                 if dist[i, j] <= radius]
        if _check_connected(node_count, edges):
            return build_topology(node_count, edges)
    raise GenerationFailed(
        f"no connected geometric graph with N={node_count}, radius={radius} "
        f"after {max_retries} draws"
    )


def topology_to_json(topology: GraphTopology,
                     model: ActivationModel | None = None) -> str:
    """Serialize as {"n": N, "edges": [[i,j],...], "p": {"i-j": p}}; arc order
    is reconstructible from edge order."""
    doc: dict = {"n": topology.node_count,
                 "edges": [[i, j] for i, j in topology.edges]}
    if model is not None:
        doc["p"] = {f"{i}-{j}": float(p)
                    for (i, j), p in zip(topology.edges, model.link_probs)}
    return json.dumps(doc)


def topology_from_json(text: str) -> tuple[GraphTopology, ActivationModel | None]:
    doc = json.loads(text)
    topo = build_topology(int(doc["n"]), [tuple(e) for e in doc["edges"]])
    model = None
    if "p" in doc:
        probs = {}
        for key, p in doc["p"].items():
            i, j = key.split("-")
            probs[(int(i), int(j))] = float(p)
        model = activation_model(topo, probs)
    return topo, model
