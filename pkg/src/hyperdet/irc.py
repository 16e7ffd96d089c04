"""Interactive relationship construction: state hyperedges and raw node features.

Node features are ``state | time | positional``, where the positional block
holds Laplacian eigenvectors of the sub-hypergraph induced on spreaders.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .diffusion import Snapshot
from .hypergraph import Hypergraph, degrees, restrict


class EigensolverError(RuntimeError):
    def __init__(self, message: str, matrix: np.ndarray):
        super().__init__(message)
        self.matrix = matrix


@dataclass(frozen=True)
class AugmentedIncidence:
    """Incidence entries of ``H | H_ig | H_sp`` (or just ``H`` when dynamic columns are off).

    ``node_idx``/``edge_idx`` are the coordinates of the non-zero entries.
    Column ``m`` is the ignorant hyperedge and column ``m + 1`` the spreader
    hyperedge; either may be empty.
    """

    n: int
    m: int
    node_idx: np.ndarray
    edge_idx: np.ndarray
    weights: np.ndarray
    dynamic: bool = True

    @property
    def num_edges(self) -> int:
        return self.m + 2 if self.dynamic else self.m

    def dense(self) -> np.ndarray:
        H = np.zeros((self.n, self.num_edges))
        H[self.node_idx, self.edge_idx] = 1.0
        return H


def augment_incidence(g: Hypergraph, snapshot: Snapshot, dynamic: bool = True) -> AugmentedIncidence:
    inc = g.incidence()
    node_idx = [np.asarray(inc.node_idx)]
    edge_idx = [np.asarray(inc.edge_idx)]
    weights = [np.asarray(g.weights, dtype=float)]
    if dynamic:
        spreading = np.asarray(snapshot.states) == 1
        ignorant = np.flatnonzero(~spreading)
        spreaders = np.flatnonzero(spreading)
        node_idx += [ignorant, spreaders]
        edge_idx += [np.full(ignorant.size, g.m), np.full(spreaders.size, g.m + 1)]
        weights.append(np.ones(2))
    ni = np.concatenate(node_idx).astype(np.int64)
    ei = np.concatenate(edge_idx).astype(np.int64)
    order = np.lexsort((ni, ei))
    return AugmentedIncidence(
        n=g.n,
        m=g.m,
        node_idx=ni[order],
        edge_idx=ei[order],
        weights=np.concatenate(weights),
        dynamic=dynamic,
    )


def state_feature(snapshot: Snapshot) -> np.ndarray:
    return np.where(np.asarray(snapshot.states) == 1, 1.0, -1.0)


def time_feature(snapshot: Snapshot) -> np.ndarray:
    spreading = np.asarray(snapshot.states) == 1
    return np.where(spreading, np.asarray(snapshot.timestamps, dtype=float), -1.0)


def infected_subhypergraph(g: Hypergraph, snapshot: Snapshot) -> tuple[Hypergraph | None, np.ndarray]:
    """Base hyperedges restricted to spreaders, plus the new-id -> node-id map."""
    return restrict(g, np.flatnonzero(np.asarray(snapshot.states) == 1))


def hypergraph_laplacian(g: Hypergraph) -> np.ndarray:
    """Symmetric normalized Laplacian ``I - Dv^-1/2 H W De^-1 H^T Dv^-1/2``.

    Nodes with zero weighted degree get an identity row/column; callers
    drop them before decomposition (see :func:`positional_encoding`).
    """
    H = g.incidence().dense()
    deg = degrees(g)
    dv = deg.node_deg
    inv_sqrt = np.zeros_like(dv)
    nz = dv > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(dv[nz])
    scaled = H * (g.weights / deg.edge_deg)[None, :] if g.m else H
    A = inv_sqrt[:, None] * (scaled @ H.T) * inv_sqrt[None, :]
    L = np.eye(g.n) - A
    return 0.5 * (L + L.T)


def _sign_fix(vec: np.ndarray) -> np.ndarray:
    mag = np.abs(vec)
    i = int(np.argmax(mag >= mag.max() - 1e-12))  # first index among near-max magnitudes
    return -vec if vec[i] < 0 else vec


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    selected: np.ndarray


def decompose(L: np.ndarray) -> SpectralDecomposition:
    """Eigendecomposition with deterministic ordering and sign convention."""
    try:
        vals, vecs = scipy.linalg.eigh(L)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigensolverError(f"eigendecomposition failed: {exc}\n{np.array2string(L)}", L) from exc
    vecs = np.column_stack([_sign_fix(vecs[:, j]) for j in range(vecs.shape[1])]) if vals.size else vecs
    keys = np.round(vals, 10)
    order = sorted(range(vals.size), key=lambda j: (keys[j], tuple(vecs[:, j])))
    order = np.asarray(order, dtype=np.int64)
    return SpectralDecomposition(vals[order], vecs[:, order], order)


def positional_encoding(g: Hypergraph, snapshot: Snapshot, k: int = 8) -> np.ndarray:
    """n x k block: eigenvectors 1..k of the infected sub-hypergraph Laplacian.

    Non-spreader rows are -1. Spreaders outside every restricted hyperedge
    get zero rows, and missing eigenvectors are zero-padded on the right.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    out = np.full((g.n, k), -1.0)
    sub, mapping = infected_subhypergraph(g, snapshot)
    if sub is None:
        return out
    out[mapping] = 0.0
    if sub.m == 0:
        return out
    dv = degrees(sub).node_deg
    keep = np.flatnonzero(dv > 0)
    if keep.size < 2:
        return out
    core, core_map = restrict(sub, keep)
    dec = decompose(hypergraph_laplacian(core))
    cols = dec.eigenvectors[:, 1 : k + 1]
    rows = mapping[core_map]
    out[rows, : cols.shape[1]] = cols
    return out


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    k: int

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def to_csv(self, path: str | Path) -> None:
        header = ["state", "time"] + [f"pe_{i}" for i in range(self.k)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in self.values:
                w.writerow([repr(float(x)) for x in row])


def assemble_features(x_state: np.ndarray, x_time: np.ndarray, x_pos: np.ndarray) -> FeatureMatrix:
    x_state = np.asarray(x_state, dtype=float).reshape(-1, 1)
    x_time = np.asarray(x_time, dtype=float).reshape(-1, 1)
    x_pos = np.asarray(x_pos, dtype=float)
    if x_pos.ndim != 2 or not (x_state.shape[0] == x_time.shape[0] == x_pos.shape[0]):
        raise ValueError(
            f"row mismatch: state {x_state.shape}, time {x_time.shape}, positional {x_pos.shape}"
        )
    return FeatureMatrix(np.hstack([x_state, x_time, x_pos]), x_pos.shape[1])


def build_features(g: Hypergraph, snapshot: Snapshot, k: int = 8) -> FeatureMatrix:
    return assemble_features(
        state_feature(snapshot), time_feature(snapshot), positional_encoding(g, snapshot, k)
    )


def mask_incomplete(features: FeatureMatrix, rate: float, rng: np.random.Generator) -> FeatureMatrix:
    """Zero the full feature row of ``floor(rate * n)`` uniformly chosen nodes."""
    if not 0 <= rate < 1:
        raise ValueError("rate must lie in [0, 1)")
    n = features.values.shape[0]
    count = int(np.floor(rate * n + 1e-9))
    if count == 0:
        return features
    values = features.values.copy()
    values[rng.choice(n, size=count, replace=False)] = 0.0
    return FeatureMatrix(values, features.k)
