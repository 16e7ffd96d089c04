import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import chi2_contingency

from hyperdet.diffusion import (
    IGNORANT,
    RECOVERED,
    SPREADER,
    PropagationConfig,
    Snapshot,
    can_change,
    derive_seed,
    generate_dataset,
    group_pressure_prob,
    init_state,
    num_sources,
    random_hypergraph,
    run_until_fraction,
    sample_sources,
    split_count,
    step,
    trajectory,
)
from hyperdet.hypergraph import Hypergraph


def pairwise_ic_final_size(n, neighbors, probs, source, rng):
    """Plain pairwise heterogeneous IC: each newly infected node gets one try per neighbor."""
    infected = {source}
    frontier = [source]
    while frontier:
        nxt = []
        for u in frontier:
            for v in neighbors[u]:
                if v not in infected and rng.random() < probs[u]:
                    infected.add(v)
                    nxt.append(v)
        # a node reached by two spreaders in the same round enters once
        frontier = sorted(set(nxt))
    return len(infected)


class TestSources:
    def test_five_percent(self):
        g = random_hypergraph(100, 50, seed=0)
        s = sample_sources(g, PropagationConfig(), np.random.default_rng(0))
        assert len(s) == 5 == len(set(s.tolist()))

    def test_ceiling(self):
        assert num_sources(10, 0.05) == 1
        assert num_sources(200, 0.05) == 10
        assert num_sources(21, 0.05) == 2

    def test_deterministic(self):
        g = random_hypergraph(100, 50, seed=0)
        a = sample_sources(g, PropagationConfig(), np.random.default_rng(4))
        b = sample_sources(g, PropagationConfig(), np.random.default_rng(4))
        np.testing.assert_array_equal(a, b)


class TestGroupPressure:
    def test_half_infected(self):
        assert group_pressure_prob(2, 4, 0.3) == pytest.approx(0.15, abs=1e-15)

    def test_none_infected(self):
        assert group_pressure_prob(0, 4, 0.3) == 0.0

    def test_fully_infected(self):
        assert group_pressure_prob(5, 5, 0.3) == pytest.approx(0.3, abs=1e-15)


class TestStep:
    def test_two_node_monte_carlo(self):
        # exact: 1 - (1 - 0.5)(1 - 0.3 * 1/2) = 0.575
        expected = 1 - (1 - 0.5) * (1 - 0.15)
        g = Hypergraph(2, [[0, 1]])
        cfg = PropagationConfig(group_coeff=0.3)
        rng = np.random.default_rng(2024)
        s0 = init_state(g, cfg, rng, sources=[0], probs=[0.5, 0.0])
        hits = sum(step(s0, g, cfg, rng).states[1] == SPREADER for _ in range(10_000))
        assert abs(hits / 10_000 - expected) <= 0.015

    def test_no_spreaders_unchanged(self):
        g = random_hypergraph(20, 10, seed=1)
        cfg = PropagationConfig()
        s0 = init_state(g, cfg, np.random.default_rng(0), sources=[])
        s1 = step(s0, g, cfg, np.random.default_rng(1))
        np.testing.assert_array_equal(s0.states, s1.states)
        np.testing.assert_array_equal(s0.first_infect, s1.first_infect)
        assert not can_change(s0, g, cfg)

    def test_saturated_si(self):
        g = random_hypergraph(12, 8, seed=1)
        cfg = PropagationConfig(model="SI")
        s0 = init_state(g, cfg, np.random.default_rng(0), sources=np.arange(12))
        s1 = step(s0, g, cfg, np.random.default_rng(1))
        np.testing.assert_array_equal(s1.states, s0.states)
        np.testing.assert_array_equal(s1.first_infect, s0.first_infect)
        assert s1.step == 1

    def test_input_not_mutated(self):
        g = random_hypergraph(30, 20, seed=3)
        cfg = PropagationConfig(model="SI")
        s0 = init_state(g, cfg, np.random.default_rng(0))
        before = s0.states.copy()
        step(s0, g, cfg, np.random.default_rng(1))
        np.testing.assert_array_equal(s0.states, before)

    def test_ic_single_chance(self):
        # without group pressure, a spreader that failed once never retries
        g = Hypergraph(2, [[0, 1]])
        cfg = PropagationConfig(group_coeff=0.0)
        rng = np.random.default_rng(0)
        for _ in range(200):
            s = init_state(g, cfg, rng, sources=[0], probs=[0.5, 0.5])
            s = step(s, g, cfg, rng)
            if s.states[1] == IGNORANT:
                assert not can_change(s, g, cfg)
                assert step(s, g, cfg, rng).states[1] == IGNORANT

    def test_ic_group_pressure_persists(self):
        # the group channel keeps firing after the pairwise chance is spent
        g = Hypergraph(2, [[0, 1]])
        cfg = PropagationConfig(group_coeff=0.3)
        s = init_state(g, cfg, np.random.default_rng(0), sources=[0], probs=[0.0, 0.0])
        s.fresh[:] = False
        assert can_change(s, g, cfg)

    def test_si_retries(self):
        g = Hypergraph(2, [[0, 1]])
        cfg = PropagationConfig(model="SI", group_coeff=0.0, delta=1.0, max_steps=500)
        snap = run_until_fraction(g, cfg, seed=5, sources=[0], probs=[0.5, 0.5])
        cfg_ic = PropagationConfig(model="IC", group_coeff=0.0, delta=1.0)
        assert snap.meta["diedOut"] is False
        # IC dies with probability 1/2 on this instance; SI never does
        died = [run_until_fraction(g, cfg_ic, seed=s, sources=[0], probs=[0.5, 0.5]).meta["diedOut"] for s in range(400)]
        assert 0.4 < np.mean(died) < 0.6

    def test_sir_recovered_stay_out(self):
        g = random_hypergraph(40, 40, seed=2)
        cfg = PropagationConfig(model="SIR", recovery_prob=0.5, max_steps=60)
        rng = np.random.default_rng(7)
        prev = None
        for s in trajectory(g, cfg, rng, init_state(g, cfg, rng)):
            if prev is not None:
                was_rec = prev.states == RECOVERED
                assert np.all(s.states[was_rec] == RECOVERED)
            prev = s
        assert (prev.states == RECOVERED).any()

    def test_sis_returns_to_ignorant(self):
        g = random_hypergraph(40, 40, seed=2)
        cfg = PropagationConfig(model="SIS", recovery_prob=0.5, max_steps=40)
        rng = np.random.default_rng(7)
        seen_reinfection = False
        states = list(trajectory(g, cfg, rng, init_state(g, cfg, rng)))
        assert all(not (s.states == RECOVERED).any() for s in states)
        for a, b in zip(states, states[1:]):
            back = (a.states == SPREADER) & (b.states == IGNORANT)
            if back.any():
                seen_reinfection = True
        assert seen_reinfection


@given(st.integers(0, 2**32 - 1), st.sampled_from(["IC", "SI"]))
def test_monotone_spreaders_property(seed, model):
    g = random_hypergraph(30, 25, seed=seed % 1000)
    cfg = PropagationConfig(model=model, max_steps=50)
    rng = np.random.default_rng(seed)
    s0 = init_state(g, cfg, rng)
    assert np.all(s0.first_infect[s0.sources] == 0)
    prev = s0
    for s in trajectory(g, cfg, rng, s0):
        assert np.all(s.spreaders[prev.spreaders])
        set_before = prev.first_infect >= 0
        np.testing.assert_array_equal(s.first_infect[set_before], prev.first_infect[set_before])
        newly = s.spreaders & ~prev.spreaders
        assert np.all(s.first_infect[newly] == s.step)
        prev = s


class TestSnapshot:
    def test_capture_threshold(self):
        g = random_hypergraph(10, 12, seed=0)
        snap = run_until_fraction(g, PropagationConfig(delta=0.3, prob_high=0.9), seed=3)
        assert snap.meta["diedOut"] or snap.states.sum() >= 3

    def test_no_spread_dies_out(self):
        g = random_hypergraph(40, 30, seed=0)
        cfg = PropagationConfig(prob_low=0.0, prob_high=0.0, group_coeff=0.0)
        snap = run_until_fraction(g, cfg, seed=1)
        assert snap.meta["diedOut"] is True
        np.testing.assert_array_equal(np.flatnonzero(snap.states), np.sort(snap.sources))
        assert snap.meta["spreaderFraction"] == pytest.approx(2 / 40)

    @given(st.integers(0, 10_000))
    def test_delta_monotone(self, seed):
        g = random_hypergraph(60, 50, seed=4)
        a = run_until_fraction(g, PropagationConfig(delta=0.1), seed=seed)
        b = run_until_fraction(g, PropagationConfig(delta=0.3), seed=seed)
        assert a.meta["step"] <= b.meta["step"]

    def test_timestamps(self):
        g = random_hypergraph(100, 80, seed=0)
        snap = run_until_fraction(g, PropagationConfig(), seed=11)
        spread = snap.states == 1
        assert np.all(snap.timestamps[~spread] == -1)
        ts = snap.timestamps[spread]
        assert ts.min() >= 0 and ts.max() <= 1
        assert np.all(snap.timestamps[snap.sources] == 0.0)
        if snap.meta["step"] > 0 and not snap.meta["diedOut"]:
            assert ts.max() == 1.0

    def test_raw_timestamps_switch(self):
        g = random_hypergraph(100, 80, seed=0)
        snap = run_until_fraction(g, PropagationConfig(normalize_time=False), seed=11)
        ts = snap.timestamps[snap.states == 1]
        assert ts.max() == snap.meta["step"]

    def test_recovered_sources_hidden(self):
        g = random_hypergraph(80, 80, seed=1)
        cfg = PropagationConfig(model="SIR", recovery_prob=0.6, delta=0.3)
        hidden = 0
        for seed in range(30):
            snap = run_until_fraction(g, cfg, seed=seed)
            off = snap.states[snap.sources] == 0
            assert np.all(snap.timestamps[snap.sources][off] == -1)
            hidden += int(off.sum())
        assert hidden > 0

    def test_json_round_trip(self):
        g = random_hypergraph(50, 40, seed=0)
        snap = run_until_fraction(g, PropagationConfig(), seed=2)
        back = Snapshot.from_json(snap.to_json())
        np.testing.assert_array_equal(back.states, snap.states)
        np.testing.assert_array_equal(back.timestamps, snap.timestamps)
        np.testing.assert_array_equal(back.sources, snap.sources)
        assert back.meta == snap.meta
        assert set(snap.meta) >= {"seed", "model", "delta", "step", "diedOut"}

    def test_replay_identical(self):
        g = random_hypergraph(80, 60, seed=0)
        a = run_until_fraction(g, PropagationConfig(model="SIS"), seed=99)
        b = run_until_fraction(g, PropagationConfig(model="SIS"), seed=99)
        assert a.to_json() == b.to_json()


class TestDataset:
    def test_split_sizes(self):
        assert split_count(100) == 80
        assert split_count(5) == 4
        g = random_hypergraph(60, 50, seed=0)
        ds = generate_dataset(g, PropagationConfig(seed=1), 100)
        assert (len(ds.train), len(ds.test)) == (80, 20)
        ds5 = generate_dataset(g, PropagationConfig(seed=1), 5)
        assert (len(ds5.train), len(ds5.test)) == (4, 1)

    def test_deterministic(self):
        g = random_hypergraph(60, 50, seed=0)
        a = generate_dataset(g, PropagationConfig(seed=8), 10)
        b = generate_dataset(g, PropagationConfig(seed=8), 10)
        assert [s.to_json() for s in a.train + a.test] == [s.to_json() for s in b.train + b.test]
        c = generate_dataset(g, PropagationConfig(seed=9), 10)
        assert [s.to_json() for s in a.train] != [s.to_json() for s in c.train]

    def test_retry_then_flag(self):
        g = random_hypergraph(40, 30, seed=0)
        cfg = PropagationConfig(prob_high=0.0, group_coeff=0.0, seed=3)
        ds = generate_dataset(g, cfg, 5, max_retries=2)
        assert all(s.meta["diedOut"] and s.meta["attempts"] == 3 for s in ds.train + ds.test)
        assert ds.meta["diedOut"] == 5 and ds.meta["retries"] == 15

    def test_rejects_small_count(self):
        with pytest.raises(ValueError):
            generate_dataset(random_hypergraph(10, 5, seed=0), PropagationConfig(), 4)

    def test_derive_seed_stable(self):
        assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
        assert derive_seed(1, 2, 3) != derive_seed(1, 2, 4)
        assert 0 <= derive_seed(7, 0) < 2**63


class TestRandomHypergraph:
    def test_pairwise(self):
        g = random_hypergraph(10, 5, size_law=2, seed=0)
        assert g.m == 5 and all(len(e) == 2 for e in g.edges)

    def test_seeded(self):
        assert random_hypergraph(30, 20, seed=5) == random_hypergraph(30, 20, seed=5)

    def test_size_too_large(self):
        with pytest.raises(ValueError):
            random_hypergraph(4, 3, size_law=5, seed=0)
        with pytest.raises(ValueError):
            random_hypergraph(3, 3, size_law=4, seed=0)

    def test_default_sizes(self):
        g = random_hypergraph(200, 300, seed=0)
        sizes = {len(e) for e in g.edges}
        assert sizes == {2, 3, 4, 5}


def test_pairwise_reduction_chi_square():
    """Group coefficient 0 on a 2-uniform hypergraph reduces to pairwise IC."""
    g = random_hypergraph(20, 30, size_law=2, seed=21)
    neighbors = [[] for _ in range(g.n)]
    for u, v in g.edges:
        neighbors[u].append(v)
        neighbors[v].append(u)
    cfg = PropagationConfig(group_coeff=0.0, delta=1.0)
    trials = 5000
    ours = np.zeros(g.n + 1, dtype=int)
    ref = np.zeros(g.n + 1, dtype=int)
    ref_rng = np.random.default_rng(777)
    for t in range(trials):
        snap = run_until_fraction(g, cfg, seed=derive_seed(5, t))
        ours[snap.states.sum()] += 1
        probs = ref_rng.uniform(0.0, 0.5, size=g.n)
        ref[pairwise_ic_final_size(g.n, neighbors, probs, int(ref_rng.integers(g.n)), ref_rng)] += 1
    table = np.vstack([ours, ref])
    table = table[:, table.sum(axis=0) > 0]
    # merge sparse bins left to right so every expected count is at least 5
    merged, acc = [], np.zeros(2, dtype=int)
    for col in table.T:
        acc = acc + col
        if acc.sum() >= 20:
            merged.append(acc)
            acc = np.zeros(2, dtype=int)
    if acc.sum():
        merged[-1] = merged[-1] + acc
    _, p, _, _ = chi2_contingency(np.array(merged).T)
    assert p > 0.01
