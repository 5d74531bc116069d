"""Evaluation protocols: triple classification, entity ranking, and
entity-pair ranking, plus type filtering and closure-based analysis of the
underestimation caused by unobserved true triples.

Entity ranking (ER) ranks answers to (?, k, j) and (i, k, ?) per test
triple, discarding candidates observed in train or valid (never the true
answer itself) and reporting filtered MRR and Hits@K micro-averaged over
all questions.

Entity-pair ranking (PR) asks (?, k, ?) once per relation: every entity
pair is a candidate, train/valid pairs are filtered, and all test triples
of the relation count as relevant simultaneously. Reported are per-relation
average precision and hit rate at K, aggregated with weights
min(K, |T_k|) / sum_k' min(K, |T_k'|).

Ranks and top-K lists everywhere break ties by ascending candidate id, and
aggregates accumulate in ascending relation order, so results are
bit-reproducible at any worker count.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .exceptions import SamplerExhaustedError
from .kb import KnowledgeBase, Triple, load_triples
from .scorers import Scorer, TableScorer  # re-exported: the protocol's scoring interface
from .topk import scan_relation

__all__ = [
    "Scorer",
    "TableScorer",
    "QuestionRank",
    "ERResult",
    "er_evaluate",
    "TCThresholds",
    "TCResult",
    "tc_learn_thresholds",
    "tc_evaluate",
    "ap_at_k",
    "TopPair",
    "PRRelationResult",
    "PRResult",
    "pr_evaluate",
    "pr_evaluate_rules",
    "CurvePoint",
    "metric_curves",
    "apply_type_filter",
    "ClosureCounts",
    "closure_analysis",
]


class QuestionRank(NamedTuple):
    relation: int
    question: str  # "subject" or "object"
    rank: int


@dataclass
class ERResult:
    mrr: float
    hits: dict[int, float]
    ranks: list[QuestionRank]
    candidates_considered: dict[int, int]

    @property
    def n_questions(self) -> int:
        return len(self.ranks)


def _filtered_rank(scores: np.ndarray, filtered: set[int], true_id: int) -> int:
    """1 + number of unfiltered candidates ranked ahead of the true one,
    counting equal scores with a smaller id as ahead."""
    s_true = scores[true_id]
    if filtered:
        keep = np.ones(len(scores), dtype=bool)
        keep[list(filtered)] = False
        kept_scores = scores[keep]
        kept_ids = np.flatnonzero(keep)
    else:
        kept_scores = scores
        kept_ids = np.arange(len(scores))
    higher = int(np.count_nonzero(kept_scores > s_true))
    ties_ahead = int(np.count_nonzero((kept_scores == s_true) & (kept_ids < true_id)))
    return 1 + higher + ties_ahead


def er_evaluate(
    scorer: Scorer,
    kb: KnowledgeBase,
    ks: Sequence[int] = (1, 3, 10),
    split: str = "test",
    relations: Sequence[int] | None = None,
    also_filter_test: bool = False,
    workers: int = 1,
) -> ERResult:
    """Filtered entity-ranking evaluation over the given split.

    ``also_filter_test`` additionally discards candidates from other test
    triples; the default follows the train/valid-only convention. The
    per-relation ``candidates_considered`` tally counts the scored cells of
    both questions, the true cell once, i.e. 2|E|-1 per evaluated triple.
    Questions are independent, so ``workers`` only changes wall time.
    """
    triples = kb.split(split)
    if relations is not None:
        wanted = set(relations)
        triples = tuple(t for t in triples if t.relation in wanted)

    include_test = also_filter_test and split == "test"

    def evaluate_triple(t: Triple) -> tuple[QuestionRank, QuestionRank, int]:
        row = scorer.score_row(t.subject, t.relation)
        filt_o = kb.filtered_objects(t.subject, t.relation, include_test=include_test) - {t.object}
        object_rank = QuestionRank(t.relation, "object", _filtered_rank(row, filt_o, t.object))

        col = scorer.score_col(t.relation, t.object)
        filt_s = kb.filtered_subjects(t.relation, t.object, include_test=include_test) - {t.subject}
        subject_rank = QuestionRank(t.relation, "subject", _filtered_rank(col, filt_s, t.subject))
        return object_rank, subject_rank, len(row) + len(col) - 1

    if workers > 1 and len(triples) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            evaluated = list(pool.map(evaluate_triple, triples))
    else:
        evaluated = [evaluate_triple(t) for t in triples]

    ranks: list[QuestionRank] = []
    candidates: dict[int, int] = {}
    for t, (object_rank, subject_rank, considered) in zip(triples, evaluated):
        ranks.append(object_rank)
        ranks.append(subject_rank)
        candidates[t.relation] = candidates.get(t.relation, 0) + considered

    if not ranks:
        return ERResult(0.0, {k: 0.0 for k in ks}, [], {})
    inv = [1.0 / qr.rank for qr in ranks]
    mrr = float(np.mean(inv))
    hits = {k: float(np.mean([qr.rank <= k for qr in ranks])) for k in ks}
    return ERResult(mrr, hits, ranks, candidates)


@dataclass
class TCThresholds:
    """Per-relation decision thresholds learned on validation data, plus the
    global-median fallback for relations without validation triples."""

    per_relation: dict[int, float]
    default: float


@dataclass
class TCRelationResult:
    relation: int
    threshold: float
    accuracy: float
    n_examples: int
    fallback_threshold: bool


@dataclass
class TCResult:
    accuracy: float
    per_relation: list[TCRelationResult]


def _tc_pseudo_negative(kb: KnowledgeBase, triple: Triple, rng: np.random.Generator) -> Triple:
    """Replace subject or object with another entity seen in that slot in
    training."""
    for _ in range(1000):
        if rng.integers(2) == 0:
            pool = kb.train_subject_pool
            if len(pool) == 0:
                continue
            ent = int(pool[rng.integers(len(pool))])
            if ent != triple.subject:
                return Triple(ent, triple.relation, triple.object)
        else:
            pool = kb.train_object_pool
            if len(pool) == 0:
                continue
            ent = int(pool[rng.integers(len(pool))])
            if ent != triple.object:
                return Triple(triple.subject, triple.relation, ent)
    raise SamplerExhaustedError(f"no pseudo-negative found for {triple}")


def _best_threshold(pos: Sequence[float], neg: Sequence[float]) -> float:
    """Threshold maximizing accuracy of the s > sigma rule; the midpoint of
    the best score interval, lowest such interval on ties."""
    values = sorted(set(pos) | set(neg))
    candidates = [values[0] - 1.0]
    candidates += [(a + b) / 2.0 for a, b in zip(values, values[1:])]
    candidates += [values[-1] + 1.0]
    n = len(pos) + len(neg)
    best_sigma = candidates[0]
    best_acc = -1.0
    for sigma in candidates:
        acc = (sum(1 for s in pos if s > sigma) + sum(1 for s in neg if s <= sigma)) / n
        if acc > best_acc:
            best_acc, best_sigma = acc, sigma
    return best_sigma


def tc_learn_thresholds(scorer: Scorer, kb: KnowledgeBase, rng: np.random.Generator) -> TCThresholds:
    """Learn a per-relation threshold on validation positives versus
    generated pseudo-negatives."""
    per_relation: dict[int, float] = {}
    all_scores: list[float] = []
    for rel in sorted(kb.by_relation_valid):
        positives = kb.by_relation_valid[rel]
        pos_scores = [scorer.score(*t) for t in positives]
        neg_scores = [scorer.score(*_tc_pseudo_negative(kb, t, rng)) for t in positives]
        all_scores.extend(pos_scores)
        all_scores.extend(neg_scores)
        per_relation[rel] = _best_threshold(pos_scores, neg_scores)
    default = float(np.median(all_scores)) if all_scores else 0.0
    return TCThresholds(per_relation, default)


def tc_evaluate(
    scorer: Scorer,
    kb: KnowledgeBase,
    thresholds: TCThresholds,
    rng: np.random.Generator,
) -> TCResult:
    """Classify test positives and generated pseudo-negatives with the
    s > sigma_k rule and report accuracy."""
    per_relation: list[TCRelationResult] = []
    correct = 0
    total = 0
    for rel in sorted(kb.by_relation_test):
        positives = kb.by_relation_test[rel]
        fallback = rel not in thresholds.per_relation
        sigma = thresholds.per_relation.get(rel, thresholds.default)
        rel_correct = 0
        for t in positives:
            rel_correct += int(scorer.score(*t) > sigma)
            neg = _tc_pseudo_negative(kb, t, rng)
            rel_correct += int(scorer.score(*neg) <= sigma)
        n = 2 * len(positives)
        per_relation.append(TCRelationResult(rel, sigma, rel_correct / n, n, fallback))
        correct += rel_correct
        total += n
    return TCResult(correct / total if total else 0.0, per_relation)


def ap_at_k(relevance: Sequence[bool], n_relevant: int, k: int) -> float:
    """Average precision of a relevance-marked top list, truncated at k and
    normalized by min(k, n_relevant) so a perfect prefix scores 1."""
    if n_relevant == 0:
        return 0.0
    acc = 0.0
    found = 0
    for r, rel in enumerate(relevance[:k], start=1):
        if rel:
            found += 1
            acc += found / r
    return acc / min(k, n_relevant)


def _relation_metrics(relevance: Sequence[bool], n_relevant: int, k: int) -> tuple[float, float]:
    ap = ap_at_k(relevance, n_relevant, k)
    hits = sum(relevance[:k]) / min(k, n_relevant) if n_relevant else 0.0
    return ap, hits


class TopPair(NamedTuple):
    score: float
    subject: int
    object: int
    relevant: bool


@dataclass
class PRRelationResult:
    relation: int
    n_test: int
    ap: float
    hits: float
    weight: float
    top: list[TopPair]
    n_candidates: int


@dataclass
class PRResult:
    k: int
    map_at_k: float
    hits_at_k: float
    per_relation: list[PRRelationResult]


def _aggregate_pr(
    stats: list[tuple[int, int, float, float, list[TopPair], int]], k: int
) -> PRResult:
    """Weight per-relation metrics by min(k, n_test) in ascending relation
    order. ``stats`` rows are (relation, n_test, ap, hits, top, candidates)."""
    denom = sum(min(k, n_test) for _, n_test, _, _, _, _ in stats)
    per_relation: list[PRRelationResult] = []
    map_at_k = 0.0
    hits_at_k = 0.0
    for relation, n_test, ap, hits, top, n_candidates in stats:
        weight = min(k, n_test) / denom if denom else 0.0
        map_at_k += ap * weight
        hits_at_k += hits * weight
        per_relation.append(PRRelationResult(relation, n_test, ap, hits, weight, top, n_candidates))
    return PRResult(k, map_at_k, hits_at_k, per_relation)


def _pr_filter_splits(split: str) -> tuple[str, ...]:
    # the evaluated split itself is never filtered out of the candidates
    return ("train", "valid") if split == "test" else ("train",)


def pr_evaluate(
    scorer: Scorer,
    kb: KnowledgeBase,
    k: int = 100,
    constraints=None,
    split: str = "test",
    relations: Sequence[int] | None = None,
    block_size: int = 1024,
    workers: int = 1,
) -> PRResult:
    """Entity-pair ranking over every relation with triples in ``split``.

    Candidate pairs come from an exact blockwise top-K scan; passing
    ``constraints`` additionally drops type-inconsistent pairs.
    """
    by_rel = kb.by_relation(split)
    rel_list = sorted(by_rel) if relations is None else sorted(set(relations) & set(by_rel))
    stats = []
    for rel in rel_list:
        scan = scan_relation(
            scorer,
            kb,
            rel,
            k,
            filter_splits=_pr_filter_splits(split),
            constraints=constraints,
            block_size=block_size,
            workers=workers,
        )
        relevant_pairs = kb.pairs(rel, (split,))
        top = [
            TopPair(e.score, e.subject, e.object, (e.subject, e.object) in relevant_pairs)
            for e in scan.top
        ]
        n_test = len(relevant_pairs)
        ap, hits = _relation_metrics([p.relevant for p in top], n_test, k)
        stats.append((rel, n_test, ap, hits, top, scan.n_candidates))
    return _aggregate_pr(stats, k)


def pr_evaluate_rules(
    rule_model,
    kb: KnowledgeBase,
    k: int = 100,
    split: str = "test",
    relations: Sequence[int] | None = None,
) -> PRResult:
    """Entity-pair ranking for the rule baseline, generating candidates by
    forward chaining instead of scanning all pairs."""
    by_rel = kb.by_relation(split)
    rel_list = sorted(by_rel) if relations is None else sorted(set(relations) & set(by_rel))
    stats = []
    for rel in rel_list:
        exclude = kb.pairs(rel, _pr_filter_splits(split))
        predicted = rule_model.predict_pairs(rel, k, exclude=exclude)
        relevant_pairs = kb.pairs(rel, (split,))
        top = [TopPair(score, i, j, (i, j) in relevant_pairs) for score, i, j in predicted]
        n_test = len(relevant_pairs)
        ap, hits = _relation_metrics([p.relevant for p in top], n_test, k)
        stats.append((rel, n_test, ap, hits, top, len(predicted)))
    return _aggregate_pr(stats, k)


class CurvePoint(NamedTuple):
    k: int
    hits_at_k: float
    map_at_k: float


def metric_curves(
    scorer: Scorer,
    kb: KnowledgeBase,
    k_grid: Sequence[int],
    constraints=None,
    split: str = "test",
    block_size: int = 1024,
    workers: int = 1,
    use_rules: bool = False,
) -> list[CurvePoint]:
    """Hits@K and MAP@K over a grid of K values from one scan at max(K).

    Smaller-K metrics reuse the same top lists (top-K is a prefix of
    top-max(K)); weights are recomputed per K, so each grid point matches a
    direct evaluation at that K exactly.
    """
    k_grid = list(k_grid)
    if not k_grid or any(b <= a for a, b in zip(k_grid, k_grid[1:])) or k_grid[0] < 1:
        raise ValueError(f"k_grid must be ascending positive integers, got {k_grid}")
    k_max = k_grid[-1]
    if use_rules:
        full = pr_evaluate_rules(scorer, kb, k_max, split=split)
    else:
        full = pr_evaluate(
            scorer, kb, k_max, constraints=constraints, split=split,
            block_size=block_size, workers=workers,
        )
    points = []
    for k in k_grid:
        stats = []
        for rel in full.per_relation:
            marks = [p.relevant for p in rel.top]
            ap, hits = _relation_metrics(marks, rel.n_test, k)
            stats.append((rel.relation, rel.n_test, ap, hits, rel.top[:k], rel.n_candidates))
        agg = _aggregate_pr(stats, k)
        points.append(CurvePoint(k, agg.hits_at_k, agg.map_at_k))
    return points


def apply_type_filter(constraints, relation: int, subject: int, object: int) -> bool:
    """True when the pair satisfies the relation's domain/range constraint
    (always true for unconstrained relations)."""
    return constraints.admissible(relation, subject, object)


@dataclass
class ClosureCounts:
    test_hits: int
    implied_true_hits: int
    closure_source: str


def _transitive_closure(pairs: set[tuple[int, int]]) -> set[tuple[int, int]]:
    adjacency: dict[int, set[int]] = {}
    for a, b in pairs:
        adjacency.setdefault(a, set()).add(b)
    closed: set[tuple[int, int]] = set()
    for start in adjacency:
        seen: set[int] = set()
        stack = list(adjacency[start])
        while stack:
            node = stack.pop()
            if node in seen:
                continue
            seen.add(node)
            stack.extend(adjacency.get(node, ()))
        closed.update((start, node) for node in seen)
    return closed


def closure_analysis(
    kb: KnowledgeBase,
    relation: int,
    top_pairs: Iterable[tuple[int, int]],
    symmetric: bool = False,
    transitive: bool = False,
    external_path: str | Path | None = None,
) -> ClosureCounts:
    """Count top-K entries that are test triples, and those that are test
    triples or unobserved triples implied by the declared closure
    properties of the relation.

    The closure is built over the relation's pairs in all three splits,
    plus an optional external triple file (matched by relation name; its
    extra entities may act as bridges but only pairs of known entities are
    counted).
    """
    known = set(kb.pairs(relation, ("train", "valid", "test")))
    source = "splits"
    if external_path is not None:
        ext_vocab = kb.vocab.copy()
        ext_triples, _ = load_triples(external_path, ext_vocab, mode="extend")
        known |= {(t.subject, t.object) for t in ext_triples if t.relation == relation}
        source = "splits+external"

    closed = set(known)
    if symmetric:
        closed |= {(b, a) for a, b in closed}
    if transitive:
        closed = _transitive_closure(closed)
        if symmetric:
            closed |= {(b, a) for a, b in closed}

    test_pairs = kb.pairs(relation, ("test",))
    observed = kb.pairs(relation, ("train", "valid", "test"))
    test_hits = 0
    implied = 0
    for pair in top_pairs:
        if pair in test_pairs:
            test_hits += 1
            implied += 1
        elif pair not in observed and pair in closed:
            implied += 1
    return ClosureCounts(test_hits, implied, source)
