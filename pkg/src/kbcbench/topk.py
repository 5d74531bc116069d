"""Exact top-K retrieval over large filtered candidate streams.

Candidates are (score, candidate-id) pairs; for entity-pair scans the id of
pair (i, j) is i * |E| + j. Ordering is always descending score with ties
broken by ascending id, which makes results independent of how the
candidate space is tiled or partitioned across workers. Scores must be
finite (a contract on the scorer, not checked here).
"""

from __future__ import annotations

import heapq
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, NamedTuple

import numpy as np


class TopKAccumulator:
    """Bounded accumulator of the best K (score, id) pairs.

    Internally a min-heap keyed so the root is the current worst entry
    under the descending-score / ascending-id order; new candidates are
    compared against that threshold before insertion.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._heap: list[tuple[float, int]] = []  # (score, -id)

    def __len__(self) -> int:
        return len(self._heap)

    @property
    def threshold(self) -> float:
        """Score of the current K-th entry; -inf while not yet full."""
        if len(self._heap) < self.capacity:
            return -np.inf
        return self._heap[0][0]

    def offer(self, score: float, candidate_id: int) -> None:
        if len(self._heap) < self.capacity:
            heapq.heappush(self._heap, (score, -candidate_id))
            return
        worst_score, worst_neg_id = self._heap[0]
        if score > worst_score or (score == worst_score and -candidate_id > worst_neg_id):
            heapq.heapreplace(self._heap, (score, -candidate_id))

    def offer_arrays(self, scores: np.ndarray, ids: np.ndarray) -> None:
        """Offer a block of candidates, preselecting at most K of them.

        Selection uses a partition (introselect) per block; entries tied at
        the K-th score are resolved by ascending id so the block result is
        exactly what a full sort would keep.
        """
        k = self.capacity
        if len(scores) > k:
            kth = np.partition(scores, len(scores) - k)[len(scores) - k]
            above = scores > kth
            n_above = int(np.count_nonzero(above))
            eq_ids = np.sort(ids[scores == kth])[: k - n_above]
            scores = np.concatenate([scores[above], np.full(len(eq_ids), kth)])
            ids = np.concatenate([ids[above], eq_ids])
        for s, cid in zip(scores.tolist(), ids.tolist()):
            self.offer(s, cid)

    def entries(self) -> list[tuple[float, int]]:
        return [(score, -neg_id) for score, neg_id in self._heap]

    def finalize(self) -> list[tuple[float, int]]:
        """Entries sorted by descending score, ascending id."""
        return sorted(self.entries(), key=lambda e: (-e[0], e[1]))


def topk_select(items: Iterable[tuple[float, int]], k: int) -> list[tuple[float, int]]:
    """Top-K of a (score, id) stream; identical to sorting the whole stream
    by (-score, id) and truncating."""
    acc = TopKAccumulator(k)
    for score, cid in items:
        acc.offer(score, cid)
    return acc.finalize()


def merge(a: TopKAccumulator, b: TopKAccumulator) -> TopKAccumulator:
    """Combine two accumulators; equals a single accumulator fed both
    streams, so the operation is associative and commutative."""
    if a.capacity != b.capacity:
        raise ValueError(f"capacity mismatch: {a.capacity} != {b.capacity}")
    out = TopKAccumulator(a.capacity)
    for score, cid in a.entries():
        out.offer(score, cid)
    for score, cid in b.entries():
        out.offer(score, cid)
    return out


class ScanEntry(NamedTuple):
    score: float
    subject: int
    object: int


class ScanResult(NamedTuple):
    top: list[ScanEntry]
    n_candidates: int


def scan_relation(
    scorer,
    kb,
    relation: int,
    k: int,
    *,
    filter_splits: Iterable[str] = ("train", "valid"),
    constraints=None,
    block_size: int = 1024,
    workers: int = 1,
) -> ScanResult:
    """Exact top-K over all admissible entity pairs of one relation.

    Streams square tiles of the |E| x |E| score matrix, drops pairs observed
    in ``filter_splits`` and pairs violating ``constraints``, and keeps the
    best K under the global tie rule. The output does not depend on
    ``block_size`` or ``workers``: tile entries are sliced from full score
    rows, and partial results merge under a total order.
    """
    n = scorer.n_entities
    excluded = kb.pairs(relation, filter_splits) if filter_splits else set()
    excl_lists: dict[int, list[int]] = {}
    for i, j in excluded:
        excl_lists.setdefault(i, []).append(j)
    excluded_by_row = {i: np.asarray(sorted(js)) for i, js in excl_lists.items()}

    subj_mask = constraints.subject_mask(relation) if constraints is not None else None
    obj_mask = constraints.object_mask(relation) if constraints is not None else None

    row_chunks = [np.arange(lo, min(lo + block_size, n)) for lo in range(0, n, block_size)]
    col_chunks = [np.arange(lo, min(lo + block_size, n)) for lo in range(0, n, block_size)]

    def scan_rows(rows: np.ndarray) -> tuple[TopKAccumulator, int]:
        acc = TopKAccumulator(k)
        considered = 0
        if subj_mask is not None:
            rows = rows[subj_mask[rows]]
        for cols in col_chunks:
            if len(rows) == 0:
                break
            block = scorer.score_block(relation, rows, cols)
            keep = np.ones((len(rows), len(cols)), dtype=bool)
            if obj_mask is not None:
                keep &= obj_mask[cols][None, :]
            lo, hi = cols[0], cols[-1]
            for a, i in enumerate(rows):
                excl = excluded_by_row.get(int(i))
                if excl is not None:
                    in_range = excl[(excl >= lo) & (excl <= hi)]
                    keep[a, in_range - lo] = False
            considered += int(np.count_nonzero(keep))
            ids = rows[:, None] * n + cols[None, :]
            acc.offer_arrays(block[keep], ids[keep])
        return acc, considered

    if workers > 1 and len(row_chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(scan_rows, row_chunks))
    else:
        results = [scan_rows(rows) for rows in row_chunks]

    total = TopKAccumulator(k)
    n_candidates = 0
    for acc, considered in results:  # fixed merge order; the tie rule makes any order equivalent
        total = merge(total, acc)
        n_candidates += considered
    top = [ScanEntry(score, cid // n, cid % n) for score, cid in total.finalize()]
    return ScanResult(top, n_candidates)
