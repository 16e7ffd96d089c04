"""Static hypergraph topology: incidence and degree algebra, clique expansion, file I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp


class HypergraphFormatError(ValueError):
    """Raised when a hypergraph file or edge list is malformed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class Hypergraph:
    """Undirected weighted hypergraph over dense node ids ``0..n-1``.

    Edges are stored as sorted tuples; duplicate hyperedges are allowed and
    keep independent weights. Instances are immutable.
    """

    n: int
    edges: tuple[tuple[int, ...], ...]
    weights: np.ndarray = field(repr=False)
    labels: tuple[str, ...] | None = field(default=None, repr=False)

    def __init__(
        self,
        n: int,
        edges: Sequence[Sequence[int]],
        weights: Sequence[float] | None = None,
        labels: Sequence[str] | None = None,
    ):
        n = int(n)
        if n < 1:
            raise HypergraphFormatError(f"node count must be >= 1, got {n}")
        canon = []
        for i, e in enumerate(edges):
            members = sorted({int(v) for v in e})
            if len(members) < 2:
                raise HypergraphFormatError(f"hyperedge {i} has fewer than 2 distinct nodes")
            if members[0] < 0 or members[-1] >= n:
                raise HypergraphFormatError(f"hyperedge {i} has node id out of range [0, {n})")
            canon.append(tuple(members))
        if weights is None:
            w = np.ones(len(canon))
        else:
            w = np.asarray(weights, dtype=float).reshape(-1)
        if w.shape[0] != len(canon):
            raise HypergraphFormatError(
                f"{w.shape[0]} weights given for {len(canon)} hyperedges"
            )
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise HypergraphFormatError("hyperedge weights must be finite and non-negative")
        w = w.copy()
        w.setflags(write=False)
        if labels is not None:
            labels = tuple(str(x) for x in labels)
            if len(labels) != n:
                raise HypergraphFormatError("label table length differs from node count")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "edges", tuple(canon))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "labels", labels)

    @property
    def m(self) -> int:
        return len(self.edges)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Hypergraph):
            return NotImplemented
        return (
            self.n == other.n
            and self.edges == other.edges
            and np.array_equal(self.weights, other.weights)
        )

    def __hash__(self) -> int:
        return hash((self.n, self.edges, self.weights.tobytes()))

    def incidence(self) -> "IncidenceView":
        cached = self.__dict__.get("_incidence")
        if cached is None:
            cached = build_incidence(self)
            object.__setattr__(self, "_incidence", cached)
        return cached


@dataclass(frozen=True)
class IncidenceView:
    """The n x m 0/1 incidence matrix in both orientations.

    ``node_edges[v]`` lists the hyperedges containing ``v`` and
    ``edge_nodes[e]`` the members of ``e``, both ascending. ``node_idx`` and
    ``edge_idx`` are the flat (v, e) entry coordinates in edge-major order.
    """

    n: int
    m: int
    node_edges: tuple[tuple[int, ...], ...]
    edge_nodes: tuple[tuple[int, ...], ...]
    node_idx: np.ndarray
    edge_idx: np.ndarray

    def dense(self) -> np.ndarray:
        H = np.zeros((self.n, self.m))
        H[self.node_idx, self.edge_idx] = 1.0
        return H

    def sparse(self) -> sp.csr_matrix:
        data = np.ones(self.node_idx.shape[0])
        return sp.csr_matrix((data, (self.node_idx, self.edge_idx)), shape=(self.n, self.m))


@dataclass(frozen=True)
class DegreeVectors:
    node_deg: np.ndarray
    edge_deg: np.ndarray


def build_incidence(g: Hypergraph) -> IncidenceView:
    node_edges: list[list[int]] = [[] for _ in range(g.n)]
    node_idx, edge_idx = [], []
    for e, members in enumerate(g.edges):
        for v in members:
            node_edges[v].append(e)
            node_idx.append(v)
            edge_idx.append(e)
    ni = np.asarray(node_idx, dtype=np.int64)
    ei = np.asarray(edge_idx, dtype=np.int64)
    ni.setflags(write=False)
    ei.setflags(write=False)
    return IncidenceView(
        n=g.n,
        m=g.m,
        node_edges=tuple(tuple(x) for x in node_edges),
        edge_nodes=g.edges,
        node_idx=ni,
        edge_idx=ei,
    )


def degrees(g: Hypergraph) -> DegreeVectors:
    inc = g.incidence()
    node_deg = np.zeros(g.n)
    np.add.at(node_deg, inc.node_idx, g.weights[inc.edge_idx])
    edge_deg = np.array([len(e) for e in g.edges], dtype=float)
    return DegreeVectors(node_deg=node_deg, edge_deg=edge_deg)


def clique_expansion(g: Hypergraph) -> list[tuple[int, int]]:
    """Sorted, deduplicated list of pairs ``(u, v)``, ``u < v``, that share a hyperedge."""
    pairs = set()
    for e in g.edges:
        pairs.update(combinations(e, 2))
    return sorted(pairs)


def clique_hypergraph(g: Hypergraph) -> Hypergraph:
    """The clique expansion re-embedded as a hypergraph of size-2 edges (unit weights)."""
    return Hypergraph(g.n, clique_expansion(g), labels=g.labels)


def adjacency(g: Hypergraph) -> sp.csr_matrix:
    """Symmetric 0/1 adjacency of the clique expansion."""
    pairs = clique_expansion(g)
    if not pairs:
        return sp.csr_matrix((g.n, g.n))
    u, v = np.array(pairs).T
    rows = np.concatenate([u, v])
    cols = np.concatenate([v, u])
    return sp.csr_matrix((np.ones(rows.shape[0]), (rows, cols)), shape=(g.n, g.n))


def restrict(g: Hypergraph, keep: Sequence[int]) -> tuple[Hypergraph | None, np.ndarray]:
    """Sub-hypergraph induced on ``keep``.

    Each edge is intersected with ``keep``; intersections smaller than two
    nodes are dropped, weights carry over, and nodes are re-indexed densely
    in ascending original order. Returns the sub-hypergraph (``None`` when
    ``keep`` is empty) and the array mapping new ids to original ids.
    """
    mapping = np.asarray(sorted(set(int(v) for v in keep)), dtype=np.int64)
    if mapping.size == 0:
        return None, mapping
    index = {int(v): i for i, v in enumerate(mapping)}
    edges, weights = [], []
    for e, w in zip(g.edges, g.weights):
        sub = [index[v] for v in e if v in index]
        if len(sub) >= 2:
            edges.append(sub)
            weights.append(w)
    return Hypergraph(mapping.size, edges, weights), mapping


# --- file I/O -------------------------------------------------------------


def _parse_text(text: str) -> Hypergraph:
    header = None
    edges, weights = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if header is None:
            if len(tokens) != 2:
                raise HypergraphFormatError("header must be 'n m'", lineno)
            try:
                header = (int(tokens[0]), int(tokens[1]))
            except ValueError:
                raise HypergraphFormatError("header must be two integers", lineno) from None
            if header[0] < 1 or header[1] < 0:
                raise HypergraphFormatError("invalid header counts", lineno)
            continue
        w = 1.0
        if tokens[0].startswith("w="):
            try:
                w = float(tokens[0][2:])
            except ValueError:
                raise HypergraphFormatError(f"bad weight token {tokens[0]!r}", lineno) from None
            tokens = tokens[1:]
        try:
            members = [int(t) for t in tokens]
        except ValueError:
            raise HypergraphFormatError("node ids must be integers", lineno) from None
        n = header[0]
        if any(v < 0 or v >= n for v in members):
            raise HypergraphFormatError(f"node id out of range [0, {n})", lineno)
        if len(set(members)) < 2:
            raise HypergraphFormatError("hyperedge of size < 2", lineno)
        if w < 0 or not np.isfinite(w):
            raise HypergraphFormatError("negative weight", lineno)
        edges.append(members)
        weights.append(w)
    if header is None:
        raise HypergraphFormatError("empty file", 1)
    if len(edges) != header[1]:
        raise HypergraphFormatError(f"header declares {header[1]} edges, found {len(edges)}")
    return Hypergraph(header[0], edges, weights)


def _parse_json(obj: dict) -> Hypergraph:
    try:
        n = obj["n"]
        edges = obj["edges"]
    except (KeyError, TypeError):
        raise HypergraphFormatError("JSON hypergraph needs 'n' and 'edges'") from None
    return Hypergraph(n, edges, obj.get("weights"), obj.get("labels"))


def load_hypergraph(path: str | Path) -> Hypergraph:
    text = Path(path).read_text()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise HypergraphFormatError(f"invalid JSON: {exc.msg}", exc.lineno) from None
        return _parse_json(obj)
    return _parse_text(text)


def save_hypergraph(g: Hypergraph, path: str | Path) -> None:
    path = Path(path)
    if path.suffix == ".json":
        obj = {"n": g.n, "edges": [list(e) for e in g.edges], "weights": g.weights.tolist()}
        if g.labels is not None:
            obj["labels"] = list(g.labels)
        path.write_text(json.dumps(obj))
        return
    lines = [f"{g.n} {g.m}"]
    for e, w in zip(g.edges, g.weights):
        ids = " ".join(map(str, e))
        lines.append(ids if w == 1.0 else f"w={float(w)!r} {ids}")
    path.write_text("\n".join(lines) + "\n")


def from_labeled_edges(edges: Sequence[Sequence[str]], weights=None) -> Hypergraph:
    """Converter hook for external datasets keyed by string node labels.

    Labels are assigned dense ids in order of first appearance; the id
    table is kept on the returned hypergraph.
    """
    table: dict[str, int] = {}
    dense = []
    for e in edges:
        dense.append([table.setdefault(str(x), len(table)) for x in e])
    labels = sorted(table, key=table.get)
    return Hypergraph(len(labels), dense, weights, labels)
