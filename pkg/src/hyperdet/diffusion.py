"""Rumor propagation on hypergraphs with hyperedge group pressure.

Each step is synchronous. An ignorant node receives one pairwise attempt
from every eligible spreader that shares a hyperedge with it (success
probability is the spreader's own rate ``p_u``) and one group attempt per
incident hyperedge (``group_coeff * infected_fraction(e)``). All attempts
are independent Bernoulli trials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from .hypergraph import Hypergraph, adjacency

MODELS = ("IC", "SI", "SIS", "SIR")

IGNORANT, SPREADER, RECOVERED = 0, 1, 2


@dataclass(frozen=True)
class PropagationConfig:
    model: str = "IC"
    source_fraction: float = 0.05
    prob_low: float = 0.0
    prob_high: float = 0.5
    group_coeff: float = 0.3
    recovery_prob: float = 0.1
    delta: float = 0.30
    max_steps: int = 1000
    normalize_time: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if not 0 < self.source_fraction < 1:
            raise ValueError("source_fraction must lie in (0, 1)")
        if not 0 <= self.prob_low <= self.prob_high <= 1:
            raise ValueError("need 0 <= prob_low <= prob_high <= 1")
        if not 0 <= self.group_coeff <= 1:
            raise ValueError("group_coeff must lie in [0, 1]")
        if not 0 <= self.recovery_prob <= 1:
            raise ValueError("recovery_prob must lie in [0, 1]")
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class CascadeState:
    states: np.ndarray
    first_infect: np.ndarray
    sources: np.ndarray
    probs: np.ndarray
    step: int = 0
    # IC: nodes infected in the previous step, i.e. the ones still allowed a pairwise attempt
    fresh: np.ndarray = field(default=None)

    def copy(self) -> "CascadeState":
        return CascadeState(
            self.states.copy(),
            self.first_infect.copy(),
            self.sources.copy(),
            self.probs.copy(),
            self.step,
            None if self.fresh is None else self.fresh.copy(),
        )

    @property
    def spreaders(self) -> np.ndarray:
        return self.states == SPREADER


@dataclass
class Snapshot:
    """One observed cascade: binary spreader states and visible timestamps."""

    states: np.ndarray
    timestamps: np.ndarray
    sources: np.ndarray
    meta: dict

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def labels(self) -> np.ndarray:
        y = np.zeros(self.n, dtype=np.int64)
        y[self.sources] = 1
        return y

    def to_json(self) -> dict:
        return {
            "states": [int(x) for x in self.states],
            "timestamps": [float(x) for x in self.timestamps],
            "sources": [int(x) for x in self.sources],
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Snapshot":
        return cls(
            states=np.asarray(obj["states"], dtype=np.int64),
            timestamps=np.asarray(obj["timestamps"], dtype=float),
            sources=np.asarray(obj["sources"], dtype=np.int64),
            meta=dict(obj["meta"]),
        )


class _Topology:
    """Precomputed neighbor and membership arrays for vectorized steps."""

    def __init__(self, g: Hypergraph):
        A = adjacency(g).tocsr()
        A.sort_indices()
        self.n = g.n
        self.nbr_ptr = A.indptr
        self.nbr_idx = A.indices
        inc = g.incidence()
        self.inc_node = np.asarray(inc.node_idx)
        self.inc_edge = np.asarray(inc.edge_idx)
        self.edge_size = np.array([len(e) for e in g.edges], dtype=float)
        self.m = g.m


def _topology(g: Hypergraph) -> _Topology:
    topo = g.__dict__.get("_topology")
    if topo is None:
        topo = _Topology(g)
        object.__setattr__(g, "_topology", topo)
    return topo


def num_sources(n: int, fraction: float) -> int:
    return min(n, max(1, math.ceil(fraction * n - 1e-9)))


def sample_sources(g: Hypergraph, cfg: PropagationConfig, rng: np.random.Generator) -> np.ndarray:
    k = num_sources(g.n, cfg.source_fraction)
    return np.sort(rng.choice(g.n, size=k, replace=False))


def group_pressure_prob(infected_in_edge: float, edge_size: float, coeff: float = 0.3) -> float:
    return coeff * infected_in_edge / edge_size


def init_state(
    g: Hypergraph,
    cfg: PropagationConfig,
    rng: np.random.Generator,
    sources=None,
    probs=None,
) -> CascadeState:
    if probs is None:
        probs = rng.uniform(cfg.prob_low, cfg.prob_high, size=g.n)
    if sources is None:
        sources = sample_sources(g, cfg, rng)
    sources = np.asarray(sources, dtype=np.int64)
    states = np.full(g.n, IGNORANT, dtype=np.int8)
    states[sources] = SPREADER
    first = np.full(g.n, -1, dtype=np.int64)
    first[sources] = 0
    fresh = np.zeros(g.n, dtype=bool)
    fresh[sources] = True
    return CascadeState(states, first, sources, np.asarray(probs, dtype=float), 0, fresh)


def step(
    state: CascadeState, g: Hypergraph, cfg: PropagationConfig, rng: np.random.Generator
) -> CascadeState:
    """Advance one synchronous round; the input state is left untouched."""
    topo = _topology(g)
    new = state.copy()
    spreading = state.states == SPREADER
    ignorant = state.states == IGNORANT

    # Pairwise channel: one attempt per (eligible spreader, ignorant neighbor) pair.
    eligible = spreading & state.fresh if cfg.model == "IC" else spreading
    src_of_entry = np.repeat(np.arange(topo.n), np.diff(topo.nbr_ptr))
    u_pair = rng.random(topo.nbr_idx.shape[0])
    hit_pair = eligible[src_of_entry] & (u_pair < state.probs[src_of_entry])
    infected = np.zeros(topo.n, dtype=bool)
    infected[topo.nbr_idx[hit_pair]] = True

    # Group channel: one attempt per (node, incident hyperedge), driven by occupancy.
    if topo.m:
        occupied = np.bincount(
            topo.inc_edge, weights=spreading[topo.inc_node].astype(float), minlength=topo.m
        )
        p_group = cfg.group_coeff * occupied / topo.edge_size
        u_group = rng.random(topo.inc_node.shape[0])
        hit_group = u_group < p_group[topo.inc_edge]
        infected[topo.inc_node[hit_group]] = True

    infected &= ignorant
    t = state.step + 1
    new.states[infected] = SPREADER
    never = new.first_infect < 0
    new.first_infect[infected & never] = t

    if cfg.model in ("SIS", "SIR"):
        u_rec = rng.random(topo.n)
        recover = spreading & (u_rec < cfg.recovery_prob)
        new.states[recover] = IGNORANT if cfg.model == "SIS" else RECOVERED

    new.fresh = infected
    new.step = t
    return new


def can_change(state: CascadeState, g: Hypergraph, cfg: PropagationConfig) -> bool:
    """Whether any transition in the next step has non-zero probability."""
    spreading = state.spreaders
    if not spreading.any():
        return False
    if cfg.model in ("SIS", "SIR") and cfg.recovery_prob > 0:
        return True
    topo = _topology(g)
    ignorant = state.states == IGNORANT
    eligible = spreading & state.fresh if cfg.model == "IC" else spreading
    eligible = eligible & (state.probs > 0)
    src = np.repeat(np.arange(topo.n), np.diff(topo.nbr_ptr))
    if (eligible[src] & ignorant[topo.nbr_idx]).any():
        return True
    if cfg.group_coeff > 0 and topo.m:
        occupied = np.bincount(topo.inc_edge, weights=spreading[topo.inc_node], minlength=topo.m)
        if (ignorant[topo.inc_node] & (occupied[topo.inc_edge] > 0)).any():
            return True
    return False


def trajectory(
    g: Hypergraph, cfg: PropagationConfig, rng: np.random.Generator, state: CascadeState
) -> Iterator[CascadeState]:
    """Yield successive states until max_steps or no transition remains possible."""
    yield state
    while state.step < cfg.max_steps and can_change(state, g, cfg):
        state = step(state, g, cfg, rng)
        yield state


def make_snapshot(state: CascadeState, cfg: PropagationConfig, seed: int, died_out: bool) -> Snapshot:
    spreading = state.spreaders
    ts = np.full(state.states.shape[0], -1.0)
    raw = state.first_infect[spreading].astype(float)
    if cfg.normalize_time:
        ts[spreading] = raw / state.step if state.step > 0 else 0.0
    else:
        ts[spreading] = raw
    meta = {
        "seed": int(seed),
        "model": cfg.model,
        "delta": float(cfg.delta),
        "step": int(state.step),
        "diedOut": bool(died_out),
        "spreaderFraction": float(spreading.mean()),
    }
    return Snapshot(spreading.astype(np.int64), ts, np.asarray(state.sources, dtype=np.int64), meta)


def run_until_fraction(
    g: Hypergraph,
    cfg: PropagationConfig,
    seed: int | None = None,
    probs=None,
    sources=None,
) -> Snapshot:
    """Simulate until at least ``ceil(delta * n)`` nodes are spreaders.

    A cascade that stops changing (or hits ``max_steps``) first is returned
    with ``meta['diedOut'] = True`` and its terminal state.
    """
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    target = math.ceil(cfg.delta * g.n - 1e-9)
    state = init_state(g, cfg, rng, sources=sources, probs=probs)
    last = state
    for state in trajectory(g, cfg, rng, state):
        last = state
        if int(state.spreaders.sum()) >= target:
            return make_snapshot(state, cfg, seed, died_out=False)
    return make_snapshot(last, cfg, seed, died_out=True)


def derive_seed(*parts: int) -> int:
    """Stable 63-bit seed from integer parts (master seed, cascade index, retry...)."""
    ss = np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass
class CascadeDataset:
    train: list[Snapshot]
    test: list[Snapshot]
    meta: dict = field(default_factory=dict)


def split_count(count: int, ratio: tuple[int, int] = (8, 2)) -> int:
    """Training-set size; rounding goes toward the training side, test keeps >= 1."""
    a, b = ratio
    n_train = math.ceil(count * a / (a + b) - 1e-9)
    return min(max(n_train, 1), count - 1)


def generate_dataset(
    g: Hypergraph,
    cfg: PropagationConfig,
    count: int,
    ratio: tuple[int, int] = (8, 2),
    max_retries: int = 10,
) -> CascadeDataset:
    if count < 5:
        raise ValueError("count must be >= 5")
    cfg.validate()
    snaps = []
    retried = 0
    for i in range(count):
        for attempt in range(max_retries + 1):
            seed = derive_seed(cfg.seed, i, attempt)
            snap = run_until_fraction(g, cfg, seed)
            if not snap.meta["diedOut"]:
                break
            retried += 1
        snap.meta["index"] = i
        snap.meta["attempts"] = attempt + 1
        snaps.append(snap)
    n_train = split_count(count, ratio)
    meta = {
        "count": count,
        "train": n_train,
        "test": count - n_train,
        "masterSeed": int(cfg.seed),
        "retries": retried,
        "diedOut": sum(s.meta["diedOut"] for s in snaps),
    }
    return CascadeDataset(snaps[:n_train], snaps[n_train:], meta)


def random_hypergraph(
    n: int, m: int, size_law=(2, 5), seed: int = 0
) -> Hypergraph:
    """Random hypergraph with uniformly chosen members; connectivity is not guaranteed.

    ``size_law`` is either an ``(lo, hi)`` inclusive range sampled uniformly,
    an int for constant size, or a callable ``rng -> int``.
    """
    if n < 4 or m < 1:
        raise ValueError("need n >= 4 and m >= 1")
    rng = np.random.default_rng(seed)
    if isinstance(size_law, int):
        draw = lambda: size_law  # noqa: E731
    elif callable(size_law):
        draw = lambda: int(size_law(rng))  # noqa: E731
    else:
        lo, hi = size_law
        draw = lambda: int(rng.integers(lo, hi + 1))  # noqa: E731
    edges = []
    for _ in range(m):
        s = draw()
        if s > n:
            raise ValueError(f"hyperedge size {s} exceeds node count {n}")
        if s < 2:
            raise ValueError("hyperedge size must be >= 2")
        edges.append(rng.choice(n, size=s, replace=False))
    return Hypergraph(n, edges)


def with_model(cfg: PropagationConfig, **changes) -> PropagationConfig:
    return replace(cfg, **changes)
