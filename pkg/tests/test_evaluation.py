import numpy as np
import pytest

import synthkb
from kbcbench.evaluation import (
    ClosureCounts,
    TableScorer,
    ap_at_k,
    closure_analysis,
    apply_type_filter,
    er_evaluate,
    metric_curves,
    pr_evaluate,
    pr_evaluate_rules,
    tc_evaluate,
    tc_learn_thresholds,
)
from kbcbench.evaluation import _best_threshold
from kbcbench.kb import Triple, TypeConstraints, Vocab, build_kb
from kbcbench.models import init_params
from kbcbench.rules import mine_rules


def brute_force_er_ranks(scorer, kb, also_filter_test=False):
    """Per-question sort oracle: rank of the true entity in the filtered,
    fully sorted candidate list."""
    n = scorer.n_entities
    ranks = []
    for t in kb.test:
        row = [(float(scorer.score(t.subject, t.relation, o)), o) for o in range(n)]
        filt = kb.filtered_objects(t.subject, t.relation, include_test=also_filter_test) - {t.object}
        kept = sorted((x for x in row if x[1] not in filt), key=lambda e: (-e[0], e[1]))
        ranks.append(("object", [cid for _, cid in kept].index(t.object) + 1))
        col = [(float(scorer.score(s, t.relation, t.object)), s) for s in range(n)]
        filt_s = kb.filtered_subjects(t.relation, t.object, include_test=also_filter_test) - {t.subject}
        kept = sorted((x for x in col if x[1] not in filt_s), key=lambda e: (-e[0], e[1]))
        ranks.append(("subject", [cid for _, cid in kept].index(t.subject) + 1))
    return ranks


def brute_force_pr(scorer, kb, k):
    """Materialize and fully sort all |E|^2 scores per test relation, then
    apply the weighted metric formulas."""
    n = scorer.n_entities
    stats = []
    for rel in sorted(kb.by_relation_test):
        excluded = kb.pairs(rel, ("train", "valid"))
        items = []
        for i in range(n):
            for j in range(n):
                if (i, j) not in excluded:
                    items.append((float(scorer.score(i, rel, j)), i * n + j))
        items.sort(key=lambda e: (-e[0], e[1]))
        top = items[:k]
        relevant = kb.pairs(rel, ("test",))
        marks = [(cid // n, cid % n) in relevant for _, cid in top]
        n_test = len(relevant)
        acc = 0.0
        found = 0
        for r, mark in enumerate(marks[:k], start=1):
            if mark:
                found += 1
                acc += found / r
        ap = acc / min(k, n_test)
        hits = sum(marks[:k]) / min(k, n_test)
        stats.append((rel, n_test, ap, hits))
    denom = sum(min(k, n_test) for _, n_test, _, _ in stats)
    map_at_k = 0.0
    hits_at_k = 0.0
    for rel, n_test, ap, hits in stats:
        weight = min(k, n_test) / denom if denom else 0.0
        map_at_k += ap * weight
        hits_at_k += hits * weight
    return map_at_k, hits_at_k, stats


class TestEntityRanking:
    def test_hand_ranked_table(self, tiny_kb, tiny_table_scorer):
        result = er_evaluate(tiny_table_scorer, tiny_kb, ks=(1, 3, 10))
        by_question = {qr.question: qr.rank for qr in result.ranks}
        assert by_question == {"object": 1, "subject": 2}
        assert result.mrr == 0.75
        assert result.hits[1] == 0.5
        assert result.hits[3] == 1.0

    def test_perfect_scorer_gives_mrr_one(self, tiny_kb):
        table = {(0, 0, 2): 5.0}
        scorer = TableScorer(3, 1, table)
        assert er_evaluate(scorer, tiny_kb).mrr == 1.0

    def test_candidate_count_tiny(self, tiny_kb, tiny_table_scorer):
        result = er_evaluate(tiny_table_scorer, tiny_kb)
        assert result.candidates_considered == {0: 5}  # 1 test triple * (2*3 - 1)

    def test_matches_per_question_sort_oracle(self, rng):
        for trial in range(25):
            kb, table = synthkb.random_table_kb(rng)
            scorer = TableScorer(kb.n_entities, kb.n_relations, table)
            result = er_evaluate(scorer, kb)
            got = [(qr.question, qr.rank) for qr in result.ranks]
            assert got == brute_force_er_ranks(scorer, kb)

    def test_also_filter_test_variant(self, rng):
        kb, table = synthkb.random_table_kb(rng)
        scorer = TableScorer(kb.n_entities, kb.n_relations, table)
        result = er_evaluate(scorer, kb, also_filter_test=True)
        want = brute_force_er_ranks(scorer, kb, also_filter_test=True)
        assert [qr.rank for qr in result.ranks] == [r for _, r in want]

    def test_filtering_excludes_observed_candidates(self, tiny_kb):
        # train triple (a,k,b) outranks everything unless filtered
        table = {(0, 0, 1): 9.0, (0, 0, 2): 1.0}
        scorer = TableScorer(3, 1, table)
        result = er_evaluate(scorer, tiny_kb)
        object_rank = next(qr.rank for qr in result.ranks if qr.question == "object")
        assert object_rank == 1

    def test_valid_split_mode(self, rng):
        kb = synthkb.inverse_pattern_kb(rng, n_entities=30, n_base=25, n_sym=12)
        model = init_params("distmult", 4, kb.n_entities, kb.n_relations, seed=0)
        result = er_evaluate(model, kb, split="valid")
        assert result.n_questions == 2 * len(kb.valid)
        assert 0.0 < result.mrr <= 1.0

    def test_worker_count_does_not_change_results(self, rng):
        kb = synthkb.inverse_pattern_kb(rng, n_entities=30, n_base=25, n_sym=12)
        model = init_params("complex", 4, kb.n_entities, kb.n_relations, seed=0)
        sequential = er_evaluate(model, kb)
        threaded = er_evaluate(model, kb, workers=4)
        assert sequential.ranks == threaded.ranks
        assert sequential.mrr == threaded.mrr


class TestTripleClassification:
    def test_threshold_hand_sweep(self):
        assert _best_threshold([0.8, 0.6], [0.3, 0.5]) == pytest.approx(0.55)

    def make_split_kb(self, rng):
        return synthkb.inverse_pattern_kb(rng, n_entities=40, n_base=30, n_sym=15)

    def test_perfectly_separating_scorer(self, rng):
        kb = self.make_split_kb(rng)
        table = {tuple(t): 1.0 for t in kb.observed}
        scorer = TableScorer(kb.n_entities, kb.n_relations, table, default=-1.0)
        thresholds = tc_learn_thresholds(scorer, kb, rng)
        result = tc_evaluate(scorer, kb, thresholds, rng)
        assert result.accuracy == 1.0

    def test_constant_scorer_accuracy_half(self, rng):
        kb = self.make_split_kb(rng)
        scorer = TableScorer(kb.n_entities, kb.n_relations, {}, default=0.3)
        thresholds = tc_learn_thresholds(scorer, kb, rng)
        result = tc_evaluate(scorer, kb, thresholds, rng)
        assert result.accuracy == 0.5

    def test_missing_validation_relation_flagged(self, rng):
        vocab = Vocab()
        for name in "abcd":
            vocab.add_entity(name)
        vocab.add_relation("seen")
        vocab.add_relation("unseen")
        kb = build_kb(
            [Triple(0, 0, 1), Triple(2, 0, 3), Triple(0, 1, 2), Triple(1, 1, 3)],
            [Triple(0, 0, 2)],
            [Triple(1, 0, 3), Triple(2, 1, 1)],
            vocab,
        )
        scorer = TableScorer(4, 2, {}, default=0.0)
        thresholds = tc_learn_thresholds(scorer, kb, rng)
        assert 1 not in thresholds.per_relation
        result = tc_evaluate(scorer, kb, thresholds, rng)
        flagged = {r.relation: r.fallback_threshold for r in result.per_relation}
        assert flagged == {0: False, 1: True}


class TestPairRanking:
    def test_ap_rank_two(self):
        assert ap_at_k([False, True], 1, 10) == 0.5

    def test_weighted_hits_hand_example(self):
        # relation 1: |T|=3 with 2 hits in top-2; relation 2: |T|=1, no hit
        vocab = Vocab()
        for i in range(6):
            vocab.add_entity(f"e{i}")
        vocab.add_relation("r1")
        vocab.add_relation("r2")
        test = [Triple(0, 0, 1), Triple(2, 0, 3), Triple(4, 0, 5), Triple(0, 1, 1)]
        kb = build_kb([], [], test, vocab)
        # r2's test pair scores below everything so it cannot enter the top-2
        table = {(0, 0, 1): 9.0, (2, 0, 3): 8.0, (0, 1, 1): -1.0}
        scorer = TableScorer(6, 2, table, default=0.0)
        result = pr_evaluate(scorer, kb, k=2)
        assert [r.hits for r in result.per_relation] == [1.0, 0.0]
        assert [r.weight for r in result.per_relation] == [2 / 3, 1 / 3]
        assert result.hits_at_k == pytest.approx(2 / 3)

    def test_perfect_scorer_reaches_one(self, rng):
        kb = synthkb.inverse_pattern_kb(rng, n_entities=24, n_base=20, n_sym=10)
        table = {tuple(t): 2.0 for t in kb.test}
        scorer = TableScorer(kb.n_entities, kb.n_relations, table, default=0.0)
        result = pr_evaluate(scorer, kb, k=100)
        assert result.map_at_k == 1.0
        assert result.hits_at_k == 1.0

    def test_matches_brute_force_oracle(self, rng):
        for trial in range(25):
            kb, table = synthkb.random_table_kb(rng)
            scorer = TableScorer(kb.n_entities, kb.n_relations, table)
            k = int(rng.integers(1, 15))
            result = pr_evaluate(scorer, kb, k=k)
            map_o, hits_o, stats = brute_force_pr(scorer, kb, k)
            assert result.map_at_k == map_o
            assert result.hits_at_k == hits_o
            assert [(r.relation, r.n_test, r.ap, r.hits) for r in result.per_relation] == stats

    def test_weights_sum_to_one(self, rng):
        kb, table = synthkb.random_table_kb(rng)
        scorer = TableScorer(kb.n_entities, kb.n_relations, table)
        result = pr_evaluate(scorer, kb, k=5)
        assert sum(r.weight for r in result.per_relation) == pytest.approx(1.0)

    def test_no_observed_pair_in_top_lists(self, rng):
        kb = synthkb.inverse_pattern_kb(rng, n_entities=30, n_base=25, n_sym=12)
        model = init_params("complex", 4, kb.n_entities, kb.n_relations, seed=1)
        result = pr_evaluate(model, kb, k=200)
        for rel in result.per_relation:
            excluded = kb.pairs(rel.relation, ("train", "valid"))
            assert all((p.subject, p.object) not in excluded for p in rel.top)

    def test_prefix_property_of_hit_counts(self, rng):
        kb, table = synthkb.random_table_kb(rng)
        scorer = TableScorer(kb.n_entities, kb.n_relations, table)
        big = pr_evaluate(scorer, kb, k=20)
        for rel in big.per_relation:
            marks = [p.relevant for p in rel.top]
            counts = [sum(marks[:k]) for k in range(1, len(marks) + 1)]
            assert counts == sorted(counts)

    def test_rules_path_agrees_with_metric_formulas(self, rng):
        kb = synthkb.inverse_pattern_kb(rng, n_entities=40, n_base=30, n_sym=15)
        model = mine_rules(kb, max_len=2, sample_size=500, min_support=2, rng=rng)
        result = pr_evaluate_rules(model, kb, k=30)
        assert 0.0 <= result.map_at_k <= 1.0
        for rel in result.per_relation:
            assert (rel.ap, rel.hits) == pytest.approx(
                (_relation_ap_hits(rel, 30)), rel=1e-12
            )


def _relation_ap_hits(rel, k):
    marks = [p.relevant for p in rel.top]
    return ap_at_k(marks, rel.n_test, k), (sum(marks[:k]) / min(k, rel.n_test) if rel.n_test else 0.0)


class TestTypeFilter:
    def test_unconstrained_always_admissible(self):
        tc = TypeConstraints(2, [set(), set()], {}, {})
        assert apply_type_filter(tc, 0, 0, 1)

    def test_missing_domain_type_inadmissible(self):
        tc = TypeConstraints(2, [{"person"}, {"city"}], {0: "person"}, {0: "city"})
        assert apply_type_filter(tc, 0, 0, 1)
        assert not apply_type_filter(tc, 0, 1, 0)

    def test_augmented_test_triples_admissible_and_metrics_monotone(self, rng):
        kb = synthkb.inverse_pattern_kb(rng, n_entities=40, n_base=30, n_sym=15)
        constraints = synthkb.disjoint_type_constraints(kb)
        for t in kb.test:
            assert apply_type_filter(constraints, t.relation, t.subject, t.object)
        model = init_params("distmult", 6, kb.n_entities, kb.n_relations, seed=2)
        plain = pr_evaluate(model, kb, k=50)
        filtered = pr_evaluate(model, kb, k=50, constraints=constraints)
        for u, f in zip(plain.per_relation, filtered.per_relation):
            assert f.ap >= u.ap
            assert f.hits >= u.hits


class TestCurves:
    def test_single_point_matches_pr_evaluate(self, rng):
        kb, table = synthkb.random_table_kb(rng)
        scorer = TableScorer(kb.n_entities, kb.n_relations, table)
        (point,) = metric_curves(scorer, kb, [7])
        direct = pr_evaluate(scorer, kb, k=7)
        assert point.hits_at_k == direct.hits_at_k
        assert point.map_at_k == direct.map_at_k

    def test_grid_matches_pointwise_evaluations(self, rng):
        kb, table = synthkb.random_table_kb(rng)
        scorer = TableScorer(kb.n_entities, kb.n_relations, table)
        grid = [1, 3, 10, 25]
        points = metric_curves(scorer, kb, grid)
        for point in points:
            direct = pr_evaluate(scorer, kb, k=point.k)
            assert point.hits_at_k == direct.hits_at_k
            assert point.map_at_k == direct.map_at_k

    def test_rejects_unsorted_grid(self, rng, tiny_kb, tiny_table_scorer):
        with pytest.raises(ValueError):
            metric_curves(tiny_table_scorer, tiny_kb, [10, 5])


class TestProtocolContrast:
    def test_distmult_mirror_pairs_share_scores_in_top_k(self, rng):
        kb = synthkb.inverse_pattern_kb(rng, n_entities=30, n_base=25, n_sym=12)
        model = init_params("distmult", 5, kb.n_entities, kb.n_relations, seed=4)
        from kbcbench.topk import scan_relation

        rel = kb.vocab.relation_id("inv")
        result = scan_relation(model, kb, rel, 40, filter_splits=())
        block = model.score_block(rel, np.arange(kb.n_entities), np.arange(kb.n_entities))
        for entry in result.top:
            assert block[entry.object, entry.subject] == entry.score

    def test_high_scored_nonsense_hurts_pr_but_not_er(self, tiny_kb):
        # the test triple (a,k,c) tops the clean pair ranking; the polluting
        # pair (b,k,b) shares no question row or column with it
        clean = TableScorer(3, 1, {(0, 0, 0): 0.1, (0, 0, 1): 0.9, (0, 0, 2): 0.5})
        dirty = TableScorer(3, 1, {**clean.table, (1, 0, 1): 99.0})

        clean_er = er_evaluate(clean, tiny_kb)
        dirty_er = er_evaluate(dirty, tiny_kb)
        assert clean_er.mrr == dirty_er.mrr
        assert clean_er.hits == dirty_er.hits

        k = 1  # |T_k| = 1
        clean_pr = pr_evaluate(clean, tiny_kb, k=k)
        dirty_pr = pr_evaluate(dirty, tiny_kb, k=k)
        assert clean_pr.hits_at_k == 1.0
        assert dirty_pr.hits_at_k < clean_pr.hits_at_k


class TestClosureAnalysis:
    def test_symmetric_closure_counts(self):
        vocab = Vocab()
        for name in "abc":
            vocab.add_entity(name)
        vocab.add_relation("k")
        kb = build_kb([Triple(0, 0, 1)], [], [Triple(1, 0, 2)], vocab)
        # top list: (b,a) unobserved but implied by symmetry; (c,b) not implied
        counts = closure_analysis(kb, 0, [(1, 0), (1, 2), (2, 1)], symmetric=True)
        assert counts == ClosureCounts(test_hits=1, implied_true_hits=3, closure_source="splits")
        no_props = closure_analysis(kb, 0, [(1, 0), (1, 2), (2, 1)])
        assert no_props.implied_true_hits == no_props.test_hits == 1

    def test_transitive_closure_adds_two_hop(self):
        vocab = Vocab()
        for name in "abc":
            vocab.add_entity(name)
        vocab.add_relation("k")
        kb = build_kb([Triple(0, 0, 1), Triple(1, 0, 2)], [], [Triple(0, 0, 0)], vocab)
        counts = closure_analysis(kb, 0, [(0, 2)], transitive=True)
        assert counts.implied_true_hits == 1
        assert counts.test_hits == 0

    def test_external_file_bridges(self, tmp_path):
        vocab = Vocab()
        for name in "ab":
            vocab.add_entity(name)
        vocab.add_relation("k")
        kb = build_kb([Triple(0, 0, 1)], [], [Triple(1, 0, 0)], vocab)
        ext = tmp_path / "ext.txt"
        ext.write_text("b\tk\tz\nz\tk\ta\n", encoding="utf-8")
        counts = closure_analysis(kb, 0, [(0, 0)], transitive=True, external_path=ext)
        # a -> b -> z -> a closes (a, a) through the external entity z
        assert counts.implied_true_hits == 1
        assert counts.closure_source == "splits+external"

    def test_hand_enumerated_ten_entity_symmetric_relation(self, rng):
        vocab = Vocab()
        for i in range(10):
            vocab.add_entity(f"e{i}")
        vocab.add_relation("s")
        forward = [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9), (1, 2)]
        train = [Triple(a, 0, b) for a, b in forward]
        test = [Triple(1, 0, 0), Triple(3, 0, 2)]
        kb = build_kb(train, [], test, vocab)
        top = [(1, 0), (3, 2), (5, 4), (7, 6), (9, 8), (2, 1), (0, 2)]
        counts = closure_analysis(kb, 0, top, symmetric=True)
        # mirrors of train pairs are implied-true; (0,2) is not implied
        assert counts.test_hits == 2
        assert counts.implied_true_hits == 6
