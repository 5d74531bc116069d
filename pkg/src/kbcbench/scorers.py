"""Scoring interface shared by embedding models, the rule baseline, and the
lookup-table scorer used in tests and protocol debugging."""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np


@runtime_checkable
class Scorer(Protocol):
    """Deterministic triple scoring over dense entity/relation ids."""

    n_entities: int

    def score(self, subject: int, relation: int, object: int) -> float: ...

    def score_row(self, subject: int, relation: int) -> np.ndarray:
        """Scores of (subject, relation, o) for every entity o."""
        ...

    def score_col(self, relation: int, object: int) -> np.ndarray:
        """Scores of (s, relation, object) for every entity s."""
        ...

    def score_block(self, relation: int, subjects: np.ndarray, objects: np.ndarray) -> np.ndarray:
        """Dense score sub-matrix; entry (a, b) scores (subjects[a], relation,
        objects[b])."""
        ...


def block_from_rows(scorer, relation: int, subjects, objects) -> np.ndarray:
    """Assemble a score block one full row at a time.

    Each entry comes from the same score_row call regardless of how the
    candidate space is tiled, which is what makes top-K scans invariant to
    block size.
    """
    objects = np.asarray(objects)
    rows = [scorer.score_row(int(i), relation)[objects] for i in subjects]
    if not rows:
        return np.empty((0, len(objects)), dtype=np.float64)
    return np.stack(rows)


class TableScorer:
    """Scores looked up from an explicit triple table; unlisted triples get
    ``default``. Intended for tiny hand-built evaluation cases."""

    def __init__(self, n_entities: int, n_relations: int, table: dict, default: float = 0.0):
        self.n_entities = n_entities
        self.n_relations = n_relations
        self.default = float(default)
        self.table = {tuple(key): float(v) for key, v in table.items()}

    def score(self, subject: int, relation: int, object: int) -> float:
        return self.table.get((subject, relation, object), self.default)

    def score_row(self, subject: int, relation: int) -> np.ndarray:
        return np.array(
            [self.score(subject, relation, o) for o in range(self.n_entities)], dtype=np.float64
        )

    def score_col(self, relation: int, object: int) -> np.ndarray:
        return np.array(
            [self.score(s, relation, object) for s in range(self.n_entities)], dtype=np.float64
        )

    def score_block(self, relation: int, subjects, objects) -> np.ndarray:
        return block_from_rows(self, relation, subjects, objects)
