import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hyperdet.diffusion import PropagationConfig, Snapshot, random_hypergraph, run_until_fraction
from hyperdet.hypergraph import Hypergraph, degrees
from hyperdet.irc import (
    EigensolverError,
    assemble_features,
    augment_incidence,
    build_features,
    decompose,
    hypergraph_laplacian,
    infected_subhypergraph,
    mask_incomplete,
    positional_encoding,
    state_feature,
    time_feature,
)

from conftest import hypergraphs

R2 = np.sqrt(0.5)


def snap(states, timestamps=None, sources=()):
    states = np.asarray(states, dtype=np.int64)
    if timestamps is None:
        timestamps = np.where(states == 1, 0.0, -1.0)
    return Snapshot(states, np.asarray(timestamps, dtype=float), np.asarray(sources, dtype=np.int64), {})


class TestAugmentedIncidence:
    def test_readoff(self):
        g = Hypergraph(3, [[0, 1], [1, 2]])
        H = augment_incidence(g, snap([1, 0, 0])).dense()
        assert H.shape == (3, 4)
        np.testing.assert_array_equal(H[:, 3], [1, 0, 0])
        np.testing.assert_array_equal(H[:, 2], [0, 1, 1])
        np.testing.assert_array_equal(H[:, :2], g.incidence().dense())

    def test_all_spreaders(self):
        g = Hypergraph(3, [[0, 1], [1, 2]])
        H = augment_incidence(g, snap([1, 1, 1])).dense()
        assert H.shape == (3, 4)
        assert H[:, 2].sum() == 0

    def test_no_spreaders(self):
        g = Hypergraph(3, [[0, 1], [1, 2]])
        H = augment_incidence(g, snap([0, 0, 0])).dense()
        assert H[:, 3].sum() == 0

    def test_static_only(self):
        g = Hypergraph(3, [[0, 1], [1, 2]])
        inc = augment_incidence(g, snap([1, 0, 0]), dynamic=False)
        assert inc.num_edges == 2 and inc.dense().shape == (3, 2)

    @given(hypergraphs(), st.data())
    def test_state_columns_partition(self, g, data):
        states = data.draw(st.lists(st.integers(0, 1), min_size=g.n, max_size=g.n))
        inc = augment_incidence(g, snap(states))
        H = inc.dense()
        np.testing.assert_array_equal(H[:, g.m] + H[:, g.m + 1], np.ones(g.n))
        np.testing.assert_array_equal(H[:, : g.m], g.incidence().dense())
        assert np.all(np.diff(inc.edge_idx) >= 0)
        assert inc.weights.shape == (g.m + 2,) and np.all(inc.weights[-2:] == 1)


class TestStateAndTime:
    def test_state(self):
        np.testing.assert_array_equal(state_feature(snap([1, 0, 0])), [1, -1, -1])

    def test_time(self):
        s = snap([1, 1, 0], [0.0, 1.0, -1.0])
        np.testing.assert_array_equal(time_feature(s), [0.0, 1.0, -1.0])

    def test_sir_recovered_looks_ignorant(self):
        g = random_hypergraph(80, 80, seed=1)
        cfg = PropagationConfig(model="SIR", recovery_prob=0.6)
        for seed in range(20):
            s = run_until_fraction(g, cfg, seed=seed)
            hidden = s.sources[s.states[s.sources] == 0]
            if hidden.size:
                assert np.all(state_feature(s)[hidden] == -1)
                assert np.all(time_feature(s)[hidden] == -1)
                return
        pytest.fail("no recovered source found")


class TestInfectedSubhypergraph:
    def test_restriction(self):
        g = Hypergraph(3, [[0, 1, 2]])
        sub, mapping = infected_subhypergraph(g, snap([1, 1, 0]))
        assert sub.edges == ((0, 1),)
        np.testing.assert_array_equal(mapping, [0, 1])

    def test_drop_small(self):
        g = Hypergraph(2, [[0, 1]])
        sub, _ = infected_subhypergraph(g, snap([1, 0]))
        assert sub.m == 0

    def test_weights_kept(self):
        g = Hypergraph(4, [[0, 1, 3], [1, 2]], [2.0, 5.0])
        sub, mapping = infected_subhypergraph(g, snap([1, 1, 0, 1]))
        np.testing.assert_array_equal(sub.weights, [2.0])
        np.testing.assert_array_equal(mapping, [0, 1, 3])


class TestLaplacian:
    def test_single_edge(self):
        L = hypergraph_laplacian(Hypergraph(2, [[0, 1]]))
        np.testing.assert_allclose(L, [[0.5, -0.5], [-0.5, 0.5]], atol=1e-15)
        vals = decompose(L).eigenvalues
        np.testing.assert_allclose(vals, [0.0, 1.0], atol=1e-10)

    def test_hand_computed_three_nodes(self):
        # edges {0,1,2} and {1,2}; Dv = (1,2,2), De = (3,2)
        g = Hypergraph(3, [[0, 1, 2], [1, 2]])
        H = np.array([[1, 0], [1, 1], [1, 1]], float)
        dv = np.array([1, 2, 2.0])
        A = np.diag(dv**-0.5) @ H @ np.diag([1 / 3, 1 / 2]) @ H.T @ np.diag(dv**-0.5)
        np.testing.assert_allclose(hypergraph_laplacian(g), np.eye(3) - A, atol=1e-15)

    @given(hypergraphs(max_n=40, max_m=50, weighted=True))
    def test_spectrum_property(self, g):
        keep = degrees(g).node_deg > 0
        if keep.sum() < 1:
            return
        from hyperdet.hypergraph import restrict

        core, _ = restrict(g, np.flatnonzero(keep))
        if core is None or core.m == 0 or np.any(degrees(core).node_deg == 0):
            return
        L = hypergraph_laplacian(core)
        assert np.max(np.abs(L - L.T)) <= 1e-12
        dec = decompose(L)
        assert dec.eigenvalues.min() >= -1e-8
        assert dec.eigenvalues.max() <= 1 + 1e-8
        Psi = dec.eigenvectors
        assert np.max(np.abs(Psi @ np.diag(dec.eigenvalues) @ Psi.T - L)) <= 1e-8
        assert np.max(np.abs(Psi.T @ Psi - np.eye(core.n))) <= 1e-8
        assert np.all(np.diff(dec.eigenvalues) >= -1e-10)

    def test_trivial_eigenvector_connected(self):
        g = Hypergraph(5, [[0, 1, 2], [2, 3], [3, 4, 0]], [1.0, 2.0, 0.5])
        dec = decompose(hypergraph_laplacian(g))
        assert dec.eigenvalues[1] > 1e-8
        dv = degrees(g).node_deg
        target = np.sqrt(dv) / np.linalg.norm(np.sqrt(dv))
        assert abs(abs(dec.eigenvectors[:, 0] @ target) - 1) <= 1e-6

    def test_eigensolver_failure(self):
        bad = np.full((3, 3), np.nan)
        with pytest.raises(EigensolverError) as err:
            decompose(bad)
        assert err.value.matrix.shape == (3, 3)


class TestPositionalEncoding:
    def test_single_edge_sign(self):
        g = Hypergraph(2, [[0, 1]])
        pe = positional_encoding(g, snap([1, 1]), k=1)
        np.testing.assert_allclose(pe[:, 0], [R2, -R2], atol=1e-12)

    def test_zero_padding(self):
        g = Hypergraph(2, [[0, 1]])
        pe = positional_encoding(g, snap([1, 1]), k=4)
        assert np.all(pe[:, 1:] == 0)

    def test_ignorant_rows(self):
        g = Hypergraph(4, [[0, 1], [1, 2, 3]])
        pe = positional_encoding(g, snap([1, 1, 0, 0]), k=3)
        assert np.all(pe[2:] == -1)

    def test_isolated_spreader_zero(self):
        g = Hypergraph(4, [[0, 1], [2, 3]])
        pe = positional_encoding(g, snap([1, 1, 1, 0]), k=2)
        assert np.all(pe[2] == 0)
        np.testing.assert_allclose(pe[0], [R2, 0.0], atol=1e-12)

    def test_no_surviving_edges(self):
        g = Hypergraph(4, [[0, 1], [2, 3]])
        pe = positional_encoding(g, snap([1, 0, 1, 0]), k=2)
        np.testing.assert_array_equal(pe, [[0, 0], [-1, -1], [0, 0], [-1, -1]])

    def test_disconnected_deterministic(self):
        g = Hypergraph(6, [[0, 1, 2], [3, 4, 5]])
        s = snap([1] * 6)
        a = positional_encoding(g, s, k=4)
        b = positional_encoding(g, s, k=4)
        assert a.tobytes() == b.tobytes()

    @given(st.integers(0, 500))
    def test_pure_function(self, seed):
        g = random_hypergraph(60, 50, seed=seed)
        s = run_until_fraction(g, PropagationConfig(), seed=seed)
        a = positional_encoding(g, s, 8)
        b = positional_encoding(g, s, 8)
        assert a.tobytes() == b.tobytes()
        assert np.all(a[s.states == 0] == -1)
        assert np.all(np.abs(a[s.states == 1]) <= 1 + 1e-12)

    def test_k_validation(self):
        with pytest.raises(ValueError):
            positional_encoding(Hypergraph(2, [[0, 1]]), snap([1, 1]), k=0)


class TestFeatures:
    def test_width(self):
        g = random_hypergraph(40, 30, seed=0)
        s = run_until_fraction(g, PropagationConfig(), seed=1)
        assert build_features(g, s, 8).width == 10

    def test_rows(self):
        g = Hypergraph(3, [[0, 1], [1, 2]])
        s = snap([1, 1, 0], [0.0, 1.0, -1.0], sources=[0])
        X = build_features(g, s, k=1).values
        np.testing.assert_allclose(X[0], [1.0, 0.0, R2], atol=1e-12)
        np.testing.assert_array_equal(X[2], [-1, -1, -1])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            assemble_features(np.ones(3), np.ones(3), np.ones((2, 4)))

    def test_csv(self, tmp_path):
        g = Hypergraph(3, [[0, 1], [1, 2]])
        fm = build_features(g, snap([1, 1, 0]), k=2)
        fm.to_csv(tmp_path / "x.csv")
        rows = list(csv.reader(open(tmp_path / "x.csv")))
        assert rows[0] == ["state", "time", "pe_0", "pe_1"]
        np.testing.assert_array_equal(np.array(rows[1:], float), fm.values)


class TestMask:
    def test_identity(self):
        fm = assemble_features(np.ones(10), np.zeros(10), np.ones((10, 2)))
        out = mask_incomplete(fm, 0.0, np.random.default_rng(0))
        np.testing.assert_array_equal(out.values, fm.values)

    def test_quarter(self):
        fm = assemble_features(np.ones(100), np.zeros(100) + 0.5, np.ones((100, 3)))
        out = mask_incomplete(fm, 0.25, np.random.default_rng(0))
        assert int(np.all(out.values == 0, axis=1).sum()) == 25
        assert np.all(fm.values != 0)

    def test_seeded(self):
        fm = assemble_features(np.ones(50), np.zeros(50) + 0.5, np.ones((50, 3)))
        a = mask_incomplete(fm, 0.2, np.random.default_rng(3)).values
        b = mask_incomplete(fm, 0.2, np.random.default_rng(3)).values
        np.testing.assert_array_equal(a, b)

    def test_bad_rate(self):
        fm = assemble_features(np.ones(5), np.zeros(5), np.ones((5, 1)))
        with pytest.raises(ValueError):
            mask_incomplete(fm, 1.0, np.random.default_rng(0))
