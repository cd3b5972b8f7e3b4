"""Network topologies, shortest-path machinery, and node features.

Networks are immutable after construction: the adjacency matrix is
write-locked and all derived structure (leaves, branches, neighbor lists)
is precomputed. Generators are pure functions of (name, seed).
"""

from __future__ import annotations

import collections
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError

LAYERS = ("core", "edge", "aggregation", "access", "subnet")

# Branch size tables for the layered tree templates. Only the node totals
# and branch counts are externally constrained; the split into
# edge/aggregation/access/subnet nodes is the published template below.
_TREE_BRANCH_SIZES = {
    "tree30": (8, 7, 7, 7),
    "tree40": (7, 7, 7, 6, 6, 6),
    "tree50": (13, 12, 12, 12),
    "tree70": (9, 9, 9, 9, 9, 8, 8, 8),
    "tree90": (23, 22, 22, 22),
}

TREE_TOPOLOGIES = tuple(sorted(_TREE_BRANCH_SIZES))
TOPOLOGIES = TREE_TOPOLOGIES + ("forest72", "optical54")


@dataclass(frozen=True)
class Network:
    """Static network topology with layer labels and a fixed entry node.

    Derived structure is computed once in ``__post_init__`` and exposed as
    plain attributes: ``adjacency`` (write-locked bool matrix), ``neighbors``
    (sorted tuples), ``degree``, ``leaf_set`` (degree-1 nodes) and
    ``branch_of`` (per-node branch index, -1 for core nodes).
    """

    name: str
    node_count: int
    edges: tuple[tuple[int, int], ...]
    entry_node: int
    node_layer: tuple[str, ...]

    def __post_init__(self):
        n = self.node_count
        if n < 2:
            raise ValueError("network needs at least 2 nodes")
        if not (0 <= self.entry_node < n):
            raise ValueError(f"entry node {self.entry_node} out of range")
        if len(self.node_layer) != n:
            raise ValueError("node_layer length must equal node_count")
        for layer in self.node_layer:
            if layer not in LAYERS:
                raise ValueError(f"unknown layer label {layer!r}")
        adj = np.zeros((n, n), dtype=bool)
        for i, j in self.edges:
            if i == j or not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"bad edge ({i}, {j})")
            adj[i, j] = adj[j, i] = True
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        neighbors = tuple(tuple(np.flatnonzero(adj[v]).tolist()) for v in range(n))
        object.__setattr__(self, "neighbors", neighbors)
        degree = adj.sum(axis=1)
        degree.setflags(write=False)
        object.__setattr__(self, "degree", degree)
        object.__setattr__(
            self, "leaf_set", frozenset(int(v) for v in np.flatnonzero(degree == 1))
        )
        if not _connected(neighbors):
            raise ValueError("network must be connected")
        object.__setattr__(self, "branch_of", _branch_labels(self))

    @property
    def branch_count(self) -> int:
        return max(self.branch_of) + 1 if self.node_count else 0

    @classmethod
    def from_edges(cls, edges, entry_node=0, node_layer=None, name="custom"):
        """Build a network from an edge list; layers default to 'subnet'."""
        edges = tuple(sorted((min(i, j), max(i, j)) for i, j in edges))
        n = max(max(e) for e in edges) + 1
        if node_layer is None:
            node_layer = ("subnet",) * n
        return cls(
            name=name,
            node_count=n,
            edges=edges,
            entry_node=entry_node,
            node_layer=tuple(node_layer),
        )

    def to_json(self) -> dict:
        return {
            "edges": [[int(i), int(j)] for i, j in self.edges],
            "entry": int(self.entry_node),
            "layers": list(self.node_layer),
            "nodes": int(self.node_count),
        }

    @classmethod
    def from_json(cls, obj: dict, name: str = "custom") -> "Network":
        return cls(
            name=name,
            node_count=int(obj["nodes"]),
            edges=tuple(sorted((min(i, j), max(i, j)) for i, j in obj["edges"])),
            entry_node=int(obj["entry"]),
            node_layer=tuple(obj["layers"]),
        )


@dataclass(frozen=True)
class CostMatrix:
    """All-pairs shortest-path hop counts plus the graph diameter."""

    dist: np.ndarray
    diameter: int

    def __post_init__(self):
        self.dist.setflags(write=False)


@dataclass(frozen=True)
class HvnPlacement:
    """The episode's three high-value nodes and, once known, the true target."""

    hvns: tuple[int, int, int]
    target_index: int | None = None

    @property
    def target_node(self) -> int:
        if self.target_index is None:
            raise ValueError("target_index is not set")
        return self.hvns[self.target_index]

    def with_target(self, index: int) -> "HvnPlacement":
        if not 0 <= index < 3:
            raise ValueError("target_index must be 0, 1 or 2")
        return replace(self, target_index=index)


def _connected(neighbors) -> bool:
    n = len(neighbors)
    seen = [False] * n
    seen[0] = True
    queue = collections.deque([0])
    count = 1
    while queue:
        v = queue.popleft()
        for w in neighbors[v]:
            if not seen[w]:
                seen[w] = True
                count += 1
                queue.append(w)
    return count == n


def _branch_labels(net: Network) -> tuple[int, ...]:
    """Label each node with the branch (core-free component) it belongs to.

    Core-layer nodes get -1. Branches are numbered by their smallest node id,
    which for the generated templates matches construction order.
    """
    core = {v for v in range(net.node_count) if net.node_layer[v] == "core"}
    label = [-1] * net.node_count
    comp_roots = []
    for start in range(net.node_count):
        if start in core or label[start] != -1:
            continue
        comp_roots.append(start)
        idx = len(comp_roots) - 1
        queue = collections.deque([start])
        label[start] = idx
        while queue:
            v = queue.popleft()
            for w in net.neighbors[v]:
                if w not in core and label[w] == -1:
                    label[w] = idx
                    queue.append(w)
    return tuple(label)


def _build_layered(name, core_edges, n_core, branch_sizes, branch_core):
    """Assemble a layered network: core nodes first, then one branch at a time."""
    edges = list(core_edges)
    layers = ["core"] * n_core
    nid = n_core
    for b, size in enumerate(branch_sizes):
        if size < 4:
            raise ValueError("branch template needs at least 4 nodes")
        edge_node = nid
        nid += 1
        layers.append("edge")
        edges.append((branch_core[b], edge_node))
        agg = nid
        nid += 1
        layers.append("aggregation")
        edges.append((edge_node, agg))
        remainder = size - 2
        n_access = max(1, remainder // 3)
        access = []
        for _ in range(n_access):
            a = nid
            nid += 1
            layers.append("access")
            edges.append((agg, a))
            access.append(a)
        for k in range(remainder - n_access):
            leaf = nid
            nid += 1
            layers.append("subnet")
            edges.append((access[k % n_access], leaf))
    net = Network(
        name=name,
        node_count=nid,
        edges=tuple(sorted(edges)),
        entry_node=0,
        node_layer=tuple(layers),
    )
    # Entry is the lowest-numbered leaf, i.e. the first subnet node of the
    # first branch; it stays fixed across episodes of this network.
    entry = min(net.leaf_set)
    return replace(net, entry_node=entry)


def generate_tree_network(name: str, seed: int = 0) -> Network:
    """Generate one of the five layered tree topologies.

    The structure is a fixed template per topology id; the seed parameter is
    accepted for interface uniformity and does not alter the template.
    """
    key = name.lower()
    if key not in _TREE_BRANCH_SIZES:
        raise ConfigError(
            f"unknown tree topology {name!r}; expected one of {', '.join(TREE_TOPOLOGIES)}"
        )
    sizes = _TREE_BRANCH_SIZES[key]
    return _build_layered(key, [], 1, sizes, [0] * len(sizes))


def generate_network(name: str, seed: int = 0) -> Network:
    """Generate any known topology (the five trees plus the two fixed extras)."""
    key = name.lower()
    if key in _TREE_BRANCH_SIZES:
        return generate_tree_network(key, seed)
    if key == "forest72":
        # Four backbone core nodes, two branches hanging off each.
        sizes = (9, 9, 9, 9, 8, 8, 8, 8)
        core_edges = [(0, 1), (1, 2), (2, 3)]
        return _build_layered(key, core_edges, 4, sizes, [b % 4 for b in range(8)])
    if key == "optical54":
        # Four fully meshed core servers with ten small branches.
        sizes = (5,) * 10
        core_edges = [(i, j) for i in range(4) for j in range(i + 1, 4)]
        return _build_layered(key, core_edges, 4, sizes, [b % 4 for b in range(10)])
    raise ConfigError(
        f"unknown topology {name!r}; expected one of {', '.join(TOPOLOGIES)}"
    )


def all_pairs_shortest_paths(net: Network) -> CostMatrix:
    """Hop-count shortest paths via BFS from every node.

    Raises if the graph is disconnected (infinite entries would break the
    unit-bounded transport metric).
    """
    n = net.node_count
    dist = np.full((n, n), -1, dtype=np.int64)
    for s in range(n):
        row = dist[s]
        row[s] = 0
        queue = collections.deque([s])
        while queue:
            v = queue.popleft()
            dv = row[v]
            for w in net.neighbors[v]:
                if row[w] < 0:
                    row[w] = dv + 1
                    queue.append(w)
    if (dist < 0).any():
        raise ValueError("graph is disconnected; shortest paths are not finite")
    return CostMatrix(dist=dist, diameter=int(dist.max()))


def shortest_path(net: Network, source: int, target: int,
                  blocked: frozenset[int] | None = None) -> list[int] | None:
    """One shortest path from source to target, avoiding blocked nodes.

    BFS expands neighbors in ascending id order, so ties break toward the
    lexicographically smallest path. Returns None if target is unreachable.
    """
    if blocked is None:
        blocked = frozenset()
    if source in blocked or target in blocked:
        return None
    parent = {source: None}
    queue = collections.deque([source])
    while queue:
        v = queue.popleft()
        if v == target:
            path = []
            while v is not None:
                path.append(v)
                v = parent[v]
            return path[::-1]
        for w in net.neighbors[v]:
            if w not in parent and w not in blocked:
                parent[w] = v
                queue.append(w)
    return None


def place_high_value_nodes(net: Network, rng_seed: int,
                           exclude=()) -> HvnPlacement:
    """Sample three distinct high-value leaves, uniformly, excluding the
    entry (and any extra footholds of the multi-entry variant)."""
    eligible = sorted(net.leaf_set - {net.entry_node} - set(exclude))
    if len(eligible) < 3:
        raise ValueError(
            f"need at least 3 non-entry leaves, found {len(eligible)}"
        )
    rng = np.random.default_rng(rng_seed)
    picks = rng.choice(len(eligible), size=3, replace=False)
    return HvnPlacement(hvns=tuple(int(eligible[i]) for i in picks))


def entry_candidates(net: Network, count: int) -> tuple[int, ...]:
    """Entry nodes for the multi-entry game variant: the default entry plus
    the first leaf of each subsequent branch."""
    if count < 1:
        raise ValueError("count must be >= 1")
    picks = [net.entry_node]
    home_branch = net.branch_of[net.entry_node]
    by_branch: dict[int, int] = {}
    for v in sorted(net.leaf_set):
        b = net.branch_of[v]
        if v != net.entry_node and b != home_branch and b not in by_branch:
            by_branch[b] = v
    for b in sorted(by_branch):
        if len(picks) == count:
            break
        if by_branch[b] not in picks:
            picks.append(by_branch[b])
    if len(picks) < count:
        raise ValueError(f"cannot pick {count} entry nodes on {net.name}")
    return tuple(picks)


def node_remoteness(net: Network, cm: CostMatrix, placement: HvnPlacement) -> np.ndarray:
    """Per-node distance to the nearer of the entry and the targeted HVN."""
    target = placement.target_node
    return np.minimum(cm.dist[net.entry_node], cm.dist[target]).astype(float)


def entry_remoteness(net: Network, cm: CostMatrix) -> np.ndarray:
    """Per-node distance to the entry node only (the single-anchor variant)."""
    return cm.dist[net.entry_node].astype(float)


def network_to_json_str(net: Network) -> str:
    return json.dumps(net.to_json(), sort_keys=True, separators=(",", ":")) + "\n"


def save_network(net: Network, path: str | Path) -> None:
    Path(path).write_text(network_to_json_str(net), encoding="utf-8")


def load_network(path: str | Path, name: str | None = None) -> Network:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    return Network.from_json(obj, name=name or Path(path).stem)
