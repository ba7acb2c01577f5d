import numpy as np
import pytest

from densemulticut.core import AlphaSign, ContractionState, FeatureMatrix
from densemulticut.errors import ArgumentError, StateError
from densemulticut.knn import (
    INF,
    CandidateQueue,
    NNGraph,
    best_arc,
    build_nn_graph,
    contraction_bound,
    exhaustive_update,
    incremental_update,
    topk_batch,
    topk_exact,
)

from conftest import make_instance


def state_from(rows, alpha=None, sign=AlphaSign.OFF):
    fm = FeatureMatrix(np.asarray(rows, dtype=np.float32))
    if alpha is not None:
        fm = fm.with_affinity(alpha, sign)
    return ContractionState(fm)


def brute_topk(state, q, k, exclude=()):
    """Slow reference ranking over alive nodes, same tie rule."""
    items = []
    for v in state.alive_ids():
        v = int(v)
        if v == q or v in exclude:
            continue
        items.append((v, state.sim(q, v)))
    items.sort(key=lambda t: (-t[1], t[0]))
    return items[:k]


class TestTopkExact:
    def test_three_node_example(self):
        state = state_from([[1, 0], [0.8, 0.6], [0, 1]])
        got = topk_exact(state, 0, 1)
        assert [t for t, _ in got] == [1]
        assert got[0][1] == pytest.approx(0.8, abs=1e-7)

    def test_k_at_least_n_returns_all_sorted(self):
        state = state_from([[1, 0], [0.8, 0.6], [0, 1], [-1, 0]])
        got = topk_exact(state, 0, 10)
        assert [t for t, _ in got] == [1, 2, 3]
        sims = [s for _, s in got]
        assert sims == sorted(sims, reverse=True)

    def test_duplicate_features_tie_break_by_id(self):
        state = state_from([[1, 0], [0.5, 0], [0.5, 0]])
        got = topk_exact(state, 0, 2)
        assert [t for t, _ in got] == [1, 2]

    def test_dead_query_rejected(self):
        state = state_from([[1, 0], [0, 1], [1, 1]])
        state.contract(0, 1)
        with pytest.raises(StateError):
            topk_exact(state, 0, 1)

    def test_bad_k(self):
        state = state_from([[1, 0], [0, 1]])
        with pytest.raises(ArgumentError):
            topk_exact(state, 0, 0)

    def test_exclude_set(self):
        state = state_from([[1, 0], [0.9, 0], [0.5, 0]])
        got = topk_exact(state, 0, 1, exclude={1})
        assert [t for t, _ in got] == [2]

    @pytest.mark.parametrize("sign", [AlphaSign.OFF, AlphaSign.MINUS, AlphaSign.PLUS])
    def test_matches_brute_force(self, sign):
        rng = np.random.default_rng(0)
        for trial in range(10):
            n = int(rng.integers(3, 40))
            alpha = None if sign is AlphaSign.OFF else 0.4
            fm = make_instance(n, 5, seed=200 + trial, alpha=alpha, sign=sign)
            state = ContractionState(fm)
            k = int(rng.integers(1, 6))
            q = int(rng.integers(0, n))
            got = topk_exact(state, q, k)
            want = brute_topk(state, q, k)
            assert [t for t, _ in got] == [t for t, _ in want]
            for (_, a), (_, b) in zip(got, want):
                assert a == pytest.approx(b, rel=1e-12, abs=1e-15)

    def test_batch_matches_single(self):
        fm = make_instance(50, 6, seed=5, alpha=0.4, sign=AlphaSign.MINUS)
        state = ContractionState(fm)
        queries = np.arange(50)
        batch = topk_batch(state, queries, 4)
        for q in range(50):
            single = topk_exact(state, q, 4)
            assert [t for t, _ in batch[q]] == [t for t, _ in single]

    def test_thread_count_does_not_change_results(self):
        fm = make_instance(1500, 8, seed=6)
        state = ContractionState(fm)
        queries = np.arange(1500)
        a = topk_batch(state, queries, 3, threads=1)
        b = topk_batch(state, queries, 3, threads=4)
        assert a == b


class TestBuildGraph:
    def test_two_nodes_point_at_each_other(self):
        state = state_from([[1, 0], [0.5, 0.5]])
        graph, queue = build_nn_graph(state, 1)
        assert graph.targets(0) == [1]
        assert graph.targets(1) == [0]
        assert len(queue) == 2

    def test_transpose_invariant(self):
        fm = make_instance(30, 4, seed=1)
        state = ContractionState(fm)
        graph, _ = build_nn_graph(state, 3)
        graph.validate(state)

    def test_arcs_dominate_non_neighbours(self):
        fm = make_instance(10, 4, seed=2)
        state = ContractionState(fm)
        graph, _ = build_nn_graph(state, 3)
        for i in range(10):
            arc_targets = set(graph.targets(i))
            worst = graph.min_sim(i)
            for v in range(10):
                if v != i and v not in arc_targets:
                    assert state.sim(i, v) <= worst + 1e-12


class TestContractionBound:
    def _three_plus_state(self):
        # i=(1,0), j=(0,1), p=(0.8,0.6): 1-NN of i and of j are both p
        return state_from([[1, 0], [0, 1], [0.8, 0.6]])

    def test_hand_value(self):
        state = self._three_plus_state()
        graph, _ = build_nn_graph(state, 1)
        assert graph.targets(0) == [2]
        assert graph.targets(1) == [2]
        b = contraction_bound(graph, 0, 1)
        assert b == pytest.approx(1.4, abs=1e-7)

    def test_bound_dominates_outside_node(self):
        state = state_from([[1, 0], [0, 1], [0.8, 0.6], [-1, 0]])
        graph, _ = build_nn_graph(state, 1)
        b = contraction_bound(graph, 0, 1)
        m = state.contract(0, 1)
        assert state.sim(m, 3) <= b + 1e-12

    def test_empty_list_gives_sentinel(self):
        graph = NNGraph(2)
        graph.set_arcs(0, [], from_full=True)
        graph.set_arcs(1, [(0, 0.5)], from_full=True)
        assert contraction_bound(graph, 0, 1) == INF

    def test_short_non_exhaustive_list_gives_sentinel(self):
        graph = NNGraph(3)
        graph.set_arcs(0, [(2, 0.5)], from_full=False)
        graph.set_arcs(1, [(2, 0.4), (3, 0.1), (4, 0.05)], from_full=True)
        assert contraction_bound(graph, 0, 1) == INF

    def test_short_exhaustive_list_is_usable(self):
        graph = NNGraph(3)
        graph.set_arcs(0, [(2, 0.5)], from_full=True)
        graph.set_arcs(1, [(2, 0.4), (3, 0.1), (4, 0.05)], from_full=True)
        assert contraction_bound(graph, 0, 1) == pytest.approx(0.55)

    def test_randomized_bound_and_skip_search(self, rng):
        """Merged-node similarities to nodes outside the parents' lists never
        exceed the bound; when k candidates pass, the filtered list equals
        exact search."""
        events = 0
        violations = 0
        for trial in range(40):
            n = int(rng.integers(10, 60))
            fm = make_instance(n, 6, seed=300 + trial, alpha=0.4, sign=AlphaSign.MINUS)
            state = ContractionState(fm)
            k = int(rng.integers(1, 6))
            while state.n_alive > max(3, k + 1):
                ids = state.alive_ids()
                i, j = (int(x) for x in rng.choice(ids, size=2, replace=False))
                graph = NNGraph(k)
                for u in (i, j):
                    graph.set_arcs(u, topk_exact(state, u, k), from_full=True)
                union = {t for t, _ in graph.arcs(i)} | {t for t, _ in graph.arcs(j)}
                b = contraction_bound(graph, i, j)
                m = state.contract(i, j)
                events += 1
                passing = []
                for v in state.alive_ids():
                    v = int(v)
                    if v == m:
                        continue
                    s = state.sim(m, v)
                    if v not in union:
                        if s > b + 1e-9:
                            violations += 1
                    elif s >= b:
                        passing.append((v, s))
                if len(passing) >= k:
                    passing.sort(key=lambda t: (-t[1], t[0]))
                    chosen = {t for t, _ in passing[:k]}
                    exact = topk_exact(state, m, k)
                    kth = exact[k - 1][1]
                    exact_set = {t for t, s in exact}
                    # sets agree up to exact ties at the k-th similarity
                    for t in chosen ^ exact_set:
                        assert state.sim(m, t) == pytest.approx(kth, rel=1e-12)
        assert events >= 200
        assert violations == 0


class TestBestArc:
    def test_empty(self):
        state = state_from([[1, 0], [0, 1]])
        graph = NNGraph(1)
        queue = CandidateQueue()
        assert best_arc(graph, queue, state) is None

    def test_picks_max(self):
        state = state_from([[1, 0], [0.9, 0.1], [0.5, 0.5]])
        graph, queue = build_nn_graph(state, 1)
        got = best_arc(graph, queue, state)
        assert got is not None
        i, j, s = got
        assert (i, j) == (0, 1)

    def test_zero_similarity_is_returned(self):
        state = state_from([[1, 0], [0, 1]])
        graph, queue = build_nn_graph(state, 1)
        got = best_arc(graph, queue, state)
        assert got is not None
        assert got[2] == 0.0

    def test_negative_top_returns_none_and_is_repeatable(self):
        state = state_from([[1, 0], [-1, 0]])
        graph, queue = build_nn_graph(state, 1)
        assert best_arc(graph, queue, state) is None
        assert best_arc(graph, queue, state) is None

    def test_stale_entries_skipped(self):
        fm = make_instance(12, 3, seed=8)
        state = ContractionState(fm)
        graph, queue = build_nn_graph(state, 2)
        got = best_arc(graph, queue, state)
        assert got is not None
        i, j, _ = got
        m = state.contract(i, j)
        new_arcs, _ = incremental_update(graph, state, i, j, m, lazy=False)
        queue.push_many(graph, new_arcs)
        nxt = best_arc(graph, queue, state)
        if nxt is not None:
            a, b, s = nxt
            assert state.alive[a] and state.alive[b]
            assert s == pytest.approx(state.sim(a, b), rel=1e-9, abs=1e-12)


class TestIncrementalUpdate:
    def test_merged_node_arc_via_bound_no_search(self):
        # merging the orthogonal pair; their shared neighbour passes the
        # bound check so the merged node needs no exhaustive search (the
        # fourth node keeps everyone else's lists intact)
        state = state_from([[1, 0], [0, 1], [0.8, 0.6], [0.75, 0.55]])
        graph, queue = build_nn_graph(state, 1)
        assert graph.targets(0) == [2]
        assert graph.targets(1) == [2]
        assert contraction_bound(graph, 0, 1) == pytest.approx(1.4, abs=1e-7)
        m = state.contract(0, 1)
        new_arcs, searches = incremental_update(graph, state, 0, 1, m, lazy=False)
        assert searches == 0
        assert graph.targets(m) == [2]
        got = dict((u, (v, s)) for u, v, s in new_arcs)[m]
        assert got[0] == 2
        assert got[1] == pytest.approx(1.4, abs=1e-7)

    def test_pointing_node_gets_cheap_arc(self):
        # q points at i and r; the merged node is at least as similar as r,
        # so the arc (q, m) is added without any exhaustive search
        state = state_from(
            [
                [1.0, 0.0],  # q -> {i, r}
                [0.9, 0.1],  # i
                [0.5, 0.0],  # r
                [0.2, 0.9],  # j
            ]
        )
        graph, _ = build_nn_graph(state, 2)
        assert set(graph.targets(0)) == {1, 2}
        m = state.contract(1, 3)
        new_arcs, searches = incremental_update(graph, state, 1, 3, m, lazy=False)
        assert (0, m) in [(u, v) for u, v, _ in new_arcs]
        assert searches == 0

    def test_lazy_leaves_merged_node_isolated(self):
        # antipodal parents: nothing passes the bound, lazy mode leaves the
        # merged node без outgoing arcs
        state = state_from([[1, 0], [-1, 0.05], [0.9, 0.3], [-0.9, -0.2]])
        graph, _ = build_nn_graph(state, 1)
        m = state.contract(0, 1)
        new_arcs, searches = incremental_update(graph, state, 0, 1, m, lazy=True)
        assert searches == 0
        assert graph.targets(m) == []

    def test_lazy_node_with_all_arcs_dead_keeps_none(self):
        state = state_from([[1, 0], [0.99, 0.1], [0.98, -0.1], [0, 1]])
        graph, _ = build_nn_graph(state, 2)
        assert set(graph.targets(3)) <= {0, 1, 2}
        m = state.contract(1, 2)
        incremental_update(graph, state, 1, 2, m, lazy=True)
        for t in graph.targets(3):
            assert state.alive[t]

    def test_nonlazy_researches_when_check_fails(self):
        # q pointed only at i; merged node drifts away from q so the check
        # fails and q must be re-searched exhaustively
        state = state_from(
            [
                [1.0, 0.0],    # q
                [0.8, 0.6],    # i
                [-0.5, 0.86],  # j pulls m away from q
                [0.7, 0.7],
            ]
        )
        graph, _ = build_nn_graph(state, 1)
        assert graph.targets(0) == [1]
        m = state.contract(1, 2)
        new_arcs, searches = incremental_update(graph, state, 1, 2, m, lazy=False)
        assert searches >= 1
        assert graph.targets(0) != []
        graph.validate(state)

    def test_state_error_for_unregistered_merge(self):
        state = state_from([[1, 0], [0, 1], [1, 1]])
        graph, _ = build_nn_graph(state, 1)
        with pytest.raises(StateError):
            incremental_update(graph, state, 0, 1, 99, lazy=False)

    @pytest.mark.parametrize("lazy", [False, True])
    def test_invariants_along_random_merge_sequences(self, lazy, rng):
        for trial in range(8):
            fm = make_instance(40, 5, seed=400 + trial, alpha=0.4, sign=AlphaSign.MINUS)
            state = ContractionState(fm)
            graph, queue = build_nn_graph(state, 3)
            while state.n_alive > 2:
                ids = state.alive_ids()
                i, j = (int(x) for x in rng.choice(ids, size=2, replace=False))
                m = state.contract(i, j)
                new_arcs, _ = incremental_update(graph, state, i, j, m, lazy=lazy)
                queue.push_many(graph, new_arcs)
                graph.validate(state)


class TestExhaustiveUpdate:
    def test_affected_nodes_get_fresh_exact_lists(self):
        fm = make_instance(25, 4, seed=9)
        state = ContractionState(fm)
        graph, queue = build_nn_graph(state, 1)
        got = best_arc(graph, queue, state)
        assert got is not None
        i, j, _ = got
        m = state.contract(i, j)
        new_arcs, searches = exhaustive_update(graph, state, i, j, m)
        queue.push_many(graph, new_arcs)
        graph.validate(state)
        assert searches >= 1
        assert graph.targets(m) == [t for t, _ in topk_exact(state, m, 1)]
        # the maximum arc similarity equals the true maximum over alive pairs
        best_cached = max(
            s for u in state.alive_ids() for _, s in graph.arcs(int(u))
        )
        true_max = max(
            state.sim(int(a), int(b))
            for a in state.alive_ids()
            for b in state.alive_ids()
            if a < b
        )
        assert best_cached == pytest.approx(true_max, rel=1e-9, abs=1e-12)
