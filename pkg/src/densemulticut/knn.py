"""Directed k-NN graph over alive solver nodes and its contraction updates.

The graph holds, per alive node, up to ``k`` outgoing arcs with cached
similarities plus the exact reverse-adjacency index. A max-priority queue
with lazy stale-entry deletion serves the best-arc queries of the
contraction loop. After contracting an arc the graph is repaired either by
exhaustive re-search of every affected node or incrementally: the merged
node's neighbours are filtered from the union of its parents' neighbour
lists via an upper bound on similarities to all other nodes, and nodes that
pointed at a parent get a single cheap membership check instead of a full
search whenever possible.
"""

from __future__ import annotations

import heapq
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .core import ContractionState
from .errors import ArgumentError

INF = float("inf")

# Fixed query block size for batched searches. Work is split along block
# boundaries regardless of thread count so results never depend on it.
_BLOCK = 512


def _ranked(ids: np.ndarray, sims: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Top-k of (ids, sims) sorted by descending sim, ties by smaller id."""
    if ids.size > k:
        keep = np.argpartition(-sims, k - 1)[:k]
        ids, sims = ids[keep], sims[keep]
    order = np.lexsort((ids, -sims))
    return [(int(ids[t]), float(sims[t])) for t in order]


def topk_exact(
    state: ContractionState,
    query: int,
    k: int,
    exclude: frozenset[int] | set[int] = frozenset(),
) -> list[tuple[int, float]]:
    """The k alive nodes most similar to ``query``, descending.

    Returns fewer than ``k`` entries when fewer candidates exist. Ties break
    toward the smaller node id.
    """
    if k < 1:
        raise ArgumentError("k must be at least 1")
    state.check_alive(query)
    alive = state.alive_ids()
    keep = alive != query
    if exclude:
        keep &= ~np.isin(alive, list(exclude))
    cand = alive[keep]
    if cand.size == 0:
        return []
    sims = state.db[cand] @ state.qr[query]
    return _ranked(cand, sims, k)


def topk_batch(
    state: ContractionState,
    queries: np.ndarray,
    k: int,
    threads: int = 1,
) -> list[list[tuple[int, float]]]:
    """Exact top-k for many query nodes at once via blocked matrix products."""
    queries = np.asarray(queries, dtype=np.int64)
    alive = state.alive_ids()
    db_alive = state.db[alive]
    pos = {int(q): idx for idx, q in enumerate(alive)}
    results: list[list[tuple[int, float]]] = [[] for _ in range(queries.size)]

    def run_block(start: int) -> None:
        stop = min(start + _BLOCK, queries.size)
        block = queries[start:stop]
        sims = state.qr[block] @ db_alive.T
        for row, q in enumerate(block):
            s = sims[row]
            self_pos = pos.get(int(q))
            if self_pos is not None:
                s = s.copy()
                s[self_pos] = -INF
                cand, cs = alive[alive != q], np.delete(s, self_pos)
            else:
                cand, cs = alive, s
            results[start + row] = _ranked(cand, cs, k)

    starts = range(0, queries.size, _BLOCK)
    if threads > 1 and queries.size > _BLOCK:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_block, starts))
    else:
        for s in starts:
            run_block(s)
    return results


class NNGraph:
    """Directed NN arc set with cached similarities and reverse index.

    ``full_list`` records whether a node's current arc list was produced by
    an exhaustive search; the contraction bound falls back to a +inf
    sentinel for short lists of other provenance.
    """

    def __init__(self, k: int) -> None:
        if k < 1:
            raise ArgumentError("k must be at least 1")
        self.k = k
        self.out: dict[int, list[tuple[int, float]]] = {}
        self.in_index: dict[int, set[int]] = {}
        self.full_list: dict[int, bool] = {}
        self.stamp: dict[int, int] = {}

    def arcs(self, u: int) -> list[tuple[int, float]]:
        return self.out.get(u, [])

    def targets(self, u: int) -> list[int]:
        return [t for t, _ in self.out.get(u, [])]

    def min_sim(self, u: int) -> float:
        arcs = self.out.get(u)
        if not arcs:
            return INF
        return min(s for _, s in arcs)

    def n_arcs(self) -> int:
        return sum(len(a) for a in self.out.values())

    def set_arcs(
        self, u: int, arcs: list[tuple[int, float]], *, from_full: bool
    ) -> None:
        """Replace u's outgoing arcs wholesale (bumps the validity stamp)."""
        for t, _ in self.out.get(u, []):
            self.in_index.get(t, set()).discard(u)
        self.out[u] = list(arcs)
        for t, _ in arcs:
            self.in_index.setdefault(t, set()).add(u)
        self.full_list[u] = from_full
        self.stamp[u] = self.stamp.get(u, -1) + 1

    def add_arc(self, u: int, v: int, sim: float) -> None:
        """Append one arc without invalidating u's existing queue entries."""
        self.out.setdefault(u, []).append((v, sim))
        self.in_index.setdefault(v, set()).add(u)

    def drop_node(self, x: int) -> None:
        """Remove x's outgoing arcs and every arc pointing at x."""
        for t, _ in self.out.pop(x, []):
            self.in_index.get(t, set()).discard(x)
        for src in self.in_index.pop(x, set()):
            arcs = self.out.get(src)
            if arcs:
                self.out[src] = [(t, s) for t, s in arcs if t != x]
        self.full_list.pop(x, None)
        self.stamp.pop(x, None)

    def validate(self, state: ContractionState, tol: float = 1e-9) -> None:
        """Assert structural invariants (tests only; O(arcs) plus recompute)."""
        transpose: dict[int, set[int]] = {}
        for u, arcs in self.out.items():
            assert state.alive[u], f"dead source {u} still has arcs"
            seen = set()
            for t, s in arcs:
                assert t != u, "self arc"
                assert state.alive[t], f"arc to dead node {t}"
                assert t not in seen, "duplicate arc"
                seen.add(t)
                true = state.sim(u, t)
                assert abs(s - true) <= tol * max(1.0, abs(true)), (
                    f"cached sim {s} vs {true}"
                )
                transpose.setdefault(t, set()).add(u)
        for t, srcs in transpose.items():
            assert self.in_index.get(t, set()) == srcs
        for t, srcs in self.in_index.items():
            assert transpose.get(t, set()) == srcs


class CandidateQueue:
    """Max-priority queue over arcs with per-node validity stamps.

    Entries are tuples ``(-sim, lo, hi, src, dst, stamp)`` so equal
    similarities break toward the lexicographically smallest node pair.
    Stale entries (dead endpoint or reassigned source list) are dropped
    lazily on pop.
    """

    def __init__(self) -> None:
        self._heap: list[tuple[float, int, int, int, int, int]] = []

    def __len__(self) -> int:
        return len(self._heap)

    def push(self, graph: NNGraph, u: int, v: int, sim: float) -> None:
        lo, hi = (u, v) if u < v else (v, u)
        heapq.heappush(
            self._heap, (-sim, lo, hi, u, v, graph.stamp.get(u, -1))
        )

    def push_many(self, graph: NNGraph, arcs) -> None:
        for u, v, sim in arcs:
            self.push(graph, u, v, sim)


def best_arc(
    graph: NNGraph, queue: CandidateQueue, state: ContractionState
) -> tuple[int, int, float] | None:
    """Highest-similarity valid arc with similarity >= 0, or ``None``.

    Pops stale entries; the winning pair is returned as (min id, max id).
    """
    heap = queue._heap
    while heap:
        entry = heapq.heappop(heap)
        negsim, lo, hi, u, v, stamp = entry
        if not (state.alive[u] and state.alive[v]):
            continue
        if graph.stamp.get(u, -1) != stamp:
            continue
        if -negsim < 0.0:
            heapq.heappush(heap, entry)
            return None
        return lo, hi, -negsim
    return None


def build_nn_graph(
    state: ContractionState, k: int, threads: int = 1
) -> tuple[NNGraph, CandidateQueue]:
    """Exact NN graph over all alive nodes plus a fully populated queue."""
    graph = NNGraph(k)
    queue = CandidateQueue()
    alive = state.alive_ids()
    if alive.size < 2:
        for u in alive:
            graph.set_arcs(int(u), [], from_full=True)
        return graph, queue
    per_node = topk_batch(state, alive, k, threads=threads)
    for q, arcs in zip(alive, per_node):
        graph.set_arcs(int(q), arcs, from_full=True)
        for t, s in arcs:
            queue.push(graph, int(q), t, s)
    return graph, queue


def contraction_bound(graph: NNGraph, i: int, j: int) -> float:
    """Upper bound on the similarity between the merge of (i, j) and any
    node outside the union of their neighbour lists.

    Uses the smallest cached similarity of each endpoint's list. Lists that
    are shorter than k and were not produced by exhaustive search cannot
    certify the bound, so the +inf sentinel is returned.
    """
    total = 0.0
    for u in (i, j):
        arcs = graph.arcs(u)
        if not arcs:
            return INF
        if len(arcs) < graph.k and not graph.full_list.get(u, False):
            return INF
        total += min(s for _, s in arcs)
    return total


def incremental_update(
    graph: NNGraph,
    state: ContractionState,
    i: int,
    j: int,
    m: int,
    *,
    lazy: bool,
) -> tuple[list[tuple[int, int, float]], int]:
    """Repair the NN graph after contracting (i, j) into ``m``.

    The merged node's arcs come from its parents' combined neighbour lists
    filtered by the contraction bound; an empty result triggers an
    exhaustive search unless ``lazy``. Nodes that listed i or j keep their
    surviving arcs and receive an arc to ``m`` when it provably belongs in
    their list; otherwise they are re-searched (or, when ``lazy``, left
    with whatever survived). Returns (new arcs to enqueue, number of
    exhaustive searches performed).
    """
    state.check_alive(m)
    nin = (graph.in_index.get(i, set()) | graph.in_index.get(j, set())) - {i, j}
    union_targets = {t for t, _ in graph.arcs(i)} | {t for t, _ in graph.arcs(j)}
    bound = contraction_bound(graph, i, j)
    graph.drop_node(i)
    graph.drop_node(j)

    new_arcs: list[tuple[int, int, float]] = []
    searches = 0

    cand = np.array(sorted(t for t in union_targets if state.alive[t]), dtype=np.int64)
    merged_arcs: list[tuple[int, float]] = []
    if cand.size:
        sims = state.sims_to(m, cand)
        passing = cand[sims >= bound]
        if passing.size:
            merged_arcs = _ranked(passing, sims[sims >= bound], graph.k)
    if not merged_arcs and not lazy:
        merged_arcs = topk_exact(state, m, graph.k)
        searches += 1
        graph.set_arcs(m, merged_arcs, from_full=True)
    else:
        graph.set_arcs(m, merged_arcs, from_full=False)
    new_arcs.extend((m, t, s) for t, s in merged_arcs)

    pending: list[int] = []
    if nin:
        q_ids = np.array(sorted(nin), dtype=np.int64)
        sims_qm = state.db[m] @ state.qr[q_ids].T if q_ids.size else np.zeros(0)
        for q, s_qm in zip(q_ids, sims_qm):
            q = int(q)
            surviving = graph.arcs(q)
            if surviving and s_qm >= min(s for _, s in surviving):
                graph.add_arc(q, m, float(s_qm))
                new_arcs.append((q, m, float(s_qm)))
            elif not lazy:
                pending.append(q)
    if pending:
        per_node = topk_batch(state, np.array(pending, dtype=np.int64), graph.k)
        searches += len(pending)
        for q, arcs in zip(pending, per_node):
            graph.set_arcs(q, arcs, from_full=True)
            new_arcs.extend((q, t, s) for t, s in arcs)
    return new_arcs, searches


def exhaustive_update(
    graph: NNGraph,
    state: ContractionState,
    i: int,
    j: int,
    m: int,
    threads: int = 1,
) -> tuple[list[tuple[int, int, float]], int]:
    """Post-contraction repair by exhaustive re-search of the merged node
    and of every node that listed i or j."""
    state.check_alive(m)
    nin = (graph.in_index.get(i, set()) | graph.in_index.get(j, set())) - {i, j}
    graph.drop_node(i)
    graph.drop_node(j)
    queries = np.array([m] + sorted(nin), dtype=np.int64)
    per_node = topk_batch(state, queries, graph.k, threads=threads)
    new_arcs: list[tuple[int, int, float]] = []
    for q, arcs in zip(queries, per_node):
        graph.set_arcs(int(q), arcs, from_full=True)
        new_arcs.extend((int(q), t, s) for t, s in arcs)
    return new_arcs, len(queries)
