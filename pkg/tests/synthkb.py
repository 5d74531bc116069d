"""Synthetic knowledge bases with controlled regularities, used across the
test suite.

The standard KB has three relations over two disjoint entity halves:

* ``base``: random pairs from the left half to the right half, all in train
* ``inv``:  exactly the mirrored pairs of ``base``, split across
            train/valid/test, so the inverse rule generates the test split
* ``sym``:  a symmetric relation within the left half; most pairs have both
            orientations in train, the rest keep one orientation in train
            and hide the mirror in valid or test
"""

from __future__ import annotations

import numpy as np

from kbcbench.kb import KnowledgeBase, Triple, TypeConstraints, Vocab, build_kb


def random_table_kb(rng: np.random.Generator, max_entities: int = 30, max_relations: int = 4):
    """Random tiny KB plus a random score table covering every triple."""
    n_ent = int(rng.integers(3, max_entities + 1))
    n_rel = int(rng.integers(1, max_relations + 1))
    vocab = Vocab()
    for i in range(n_ent):
        vocab.add_entity(f"e{i}")
    for r in range(n_rel):
        vocab.add_relation(f"r{r}")

    all_triples = [Triple(i, k, j) for k in range(n_rel) for i in range(n_ent) for j in range(n_ent)]
    n_total = len(all_triples)
    chosen = rng.choice(n_total, size=min(n_total, int(rng.integers(4, 40))), replace=False)
    observed = [all_triples[int(c)] for c in chosen]
    rng.shuffle(observed)
    n = len(observed)
    train = observed[: max(1, n // 2)]
    valid = observed[max(1, n // 2) : max(2, (3 * n) // 4)]
    test = observed[max(2, (3 * n) // 4) :]
    if not test:
        test = [train.pop()] if len(train) > 1 else [Triple(0, 0, 0)]
    kb = build_kb(train, valid, test, vocab)

    scores = rng.standard_normal(n_ent * n_rel * n_ent)
    table = {t: float(s) for t, s in zip(all_triples, scores)}
    return kb, table


def inverse_pattern_kb(
    rng: np.random.Generator,
    n_entities: int = 300,
    n_base: int = 400,
    n_sym: int = 200,
    inv_train_frac: float = 0.7,
    inv_valid_frac: float = 0.15,
) -> KnowledgeBase:
    """Build the base/inv/sym KB described in the module docstring."""
    half = n_entities // 2
    left = np.arange(half)
    right = np.arange(half, n_entities)
    vocab = Vocab()
    for i in range(n_entities):
        vocab.add_entity(f"e{i}")
    rel_base = vocab.add_relation("base")
    rel_inv = vocab.add_relation("inv")
    rel_sym = vocab.add_relation("sym")

    base_pairs: set[tuple[int, int]] = set()
    while len(base_pairs) < n_base:
        a = int(left[rng.integers(half)])
        b = int(right[rng.integers(n_entities - half)])
        base_pairs.add((a, b))
    base_list = sorted(base_pairs)
    rng.shuffle(base_list)

    train = [Triple(a, rel_base, b) for a, b in base_list]
    n_train_inv = int(inv_train_frac * len(base_list))
    n_valid_inv = int(inv_valid_frac * len(base_list))
    valid: list[Triple] = []
    test: list[Triple] = []
    for idx, (a, b) in enumerate(base_list):
        mirror = Triple(b, rel_inv, a)
        if idx < n_train_inv:
            train.append(mirror)
        elif idx < n_train_inv + n_valid_inv:
            valid.append(mirror)
        else:
            test.append(mirror)

    sym_pairs: set[tuple[int, int]] = set()
    while len(sym_pairs) < n_sym:
        u = int(left[rng.integers(half)])
        w = int(left[rng.integers(half)])
        if u != w and (w, u) not in sym_pairs:
            sym_pairs.add((u, w))
    sym_list = sorted(sym_pairs)
    rng.shuffle(sym_list)
    for idx, (u, w) in enumerate(sym_list):
        train.append(Triple(u, rel_sym, w))
        frac = idx / len(sym_list)
        if frac < 0.65:
            train.append(Triple(w, rel_sym, u))
        elif frac < 0.85:
            test.append(Triple(w, rel_sym, u))
        else:
            valid.append(Triple(w, rel_sym, u))

    return build_kb(train, valid, test, vocab)


def disjoint_type_constraints(kb: KnowledgeBase) -> TypeConstraints:
    """Domain/range constraints for the inverse-pattern KB: one type per
    entity half, distinct labels per relation side, augmented over all
    splits (so the filter is sound by construction)."""
    half = kb.n_entities // 2
    entity_types: list[set[str]] = [
        {"left" if i < half else "right"} for i in range(kb.n_entities)
    ]
    vocab = kb.vocab
    domain = {
        vocab.relation_id("base"): "left",
        vocab.relation_id("inv"): "right",
        vocab.relation_id("sym"): "sym_d",
    }
    range_ = {
        vocab.relation_id("base"): "right",
        vocab.relation_id("inv"): "left",
        vocab.relation_id("sym"): "sym_r",
    }
    constraints = TypeConstraints(kb.n_entities, entity_types, domain, range_)
    for t in kb.train + kb.valid + kb.test:
        if t.relation in constraints.constrained:
            entity_types[t.subject].add(domain[t.relation])
            entity_types[t.object].add(range_[t.relation])
    return constraints
