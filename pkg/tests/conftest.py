import numpy as np
import pytest

from kbcbench.kb import Triple, Vocab, build_kb
from kbcbench.scorers import TableScorer


@pytest.fixture
def tiny_kb():
    """E={a,b,c}, one relation k, train={(a,k,b)}, test={(a,k,c)}."""
    vocab = Vocab()
    for name in "abc":
        vocab.add_entity(name)
    vocab.add_relation("k")
    return build_kb([Triple(0, 0, 1)], [], [Triple(0, 0, 2)], vocab)


@pytest.fixture
def tiny_table_scorer(tiny_kb):
    table = {
        (0, 0, 0): 0.1,
        (0, 0, 1): 0.9,
        (0, 0, 2): 0.5,
        (1, 0, 2): 0.7,
        (2, 0, 2): 0.2,
    }
    return TableScorer(tiny_kb.n_entities, tiny_kb.n_relations, table)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
