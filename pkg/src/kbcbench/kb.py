"""Knowledge-base loading, indexing, and type constraints.

Triples are (subject, relation, object) over dense integer ids assigned in
first-appearance order, so identical input files always produce identical
indices. File formats (UTF-8, tab-separated, no header):

* triples:              ``subject<TAB>relation<TAB>object``
* entity types:         ``entity<TAB>type1,type2,...``
* relation constraints: ``relation<TAB>domain<TAB>range`` ("-" = missing)
"""

from __future__ import annotations

import logging
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Literal, NamedTuple

import numpy as np

from .exceptions import ConstraintFileError, TripleFormatError, VocabularyError

log = logging.getLogger(__name__)

VocabMode = Literal["build", "extend", "frozen"]


class Triple(NamedTuple):
    subject: int
    relation: int
    object: int


class Vocab:
    """Bijective maps between names and dense indices for entities and
    relations. Indices are stable for a fixed insertion order."""

    def __init__(self) -> None:
        self.entities: list[str] = []
        self.relations: list[str] = []
        self._entity_ids: dict[str, int] = {}
        self._relation_ids: dict[str, int] = {}

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def add_entity(self, name: str) -> int:
        idx = self._entity_ids.get(name)
        if idx is None:
            idx = len(self.entities)
            self.entities.append(name)
            self._entity_ids[name] = idx
        return idx

    def add_relation(self, name: str) -> int:
        idx = self._relation_ids.get(name)
        if idx is None:
            idx = len(self.relations)
            self.relations.append(name)
            self._relation_ids[name] = idx
        return idx

    def entity_id(self, name: str) -> int:
        try:
            return self._entity_ids[name]
        except KeyError:
            raise VocabularyError(f"unknown entity: {name!r}") from None

    def relation_id(self, name: str) -> int:
        try:
            return self._relation_ids[name]
        except KeyError:
            raise VocabularyError(f"unknown relation: {name!r}") from None

    def entity_name(self, idx: int) -> str:
        return self.entities[idx]

    def relation_name(self, idx: int) -> str:
        return self.relations[idx]

    def copy(self) -> "Vocab":
        out = Vocab()
        out.entities = list(self.entities)
        out.relations = list(self.relations)
        out._entity_ids = dict(self._entity_ids)
        out._relation_ids = dict(self._relation_ids)
        return out


def load_triples(
    path: str | Path,
    vocab: Vocab | None = None,
    mode: VocabMode = "build",
) -> tuple[list[Triple], Vocab]:
    """Read a triple TSV file into dense-index triples.

    ``build`` starts a fresh vocabulary, ``extend`` adds unseen names to the
    given one, ``frozen`` rejects unseen names. Duplicate triples within the
    file are dropped with a warning. Returns (triples, vocab).
    """
    if mode == "build":
        vocab = Vocab()
    elif vocab is None:
        raise ValueError(f"mode {mode!r} requires an existing vocab")

    triples: list[Triple] = []
    seen: set[Triple] = set()
    n_dup = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n\r")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise TripleFormatError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}"
                )
            s_name, r_name, o_name = fields
            if mode == "frozen":
                t = Triple(vocab.entity_id(s_name), vocab.relation_id(r_name), vocab.entity_id(o_name))
            else:
                t = Triple(vocab.add_entity(s_name), vocab.add_relation(r_name), vocab.add_entity(o_name))
            if t in seen:
                n_dup += 1
                continue
            seen.add(t)
            triples.append(t)
    if n_dup:
        log.warning("%s: dropped %d duplicate triple(s)", path, n_dup)
    return triples, vocab


def write_triples(path: str | Path, triples: Iterable[Triple], vocab: Vocab) -> None:
    """Write triples back to the TSV format accepted by :func:`load_triples`."""
    with open(path, "w", encoding="utf-8") as fh:
        for t in triples:
            fh.write(
                f"{vocab.entity_name(t.subject)}\t"
                f"{vocab.relation_name(t.relation)}\t"
                f"{vocab.entity_name(t.object)}\n"
            )


class KnowledgeBase:
    """Split triple sets plus the membership indexes used by training and
    evaluation. Immutable after construction; safe for concurrent reads."""

    def __init__(
        self,
        vocab: Vocab,
        train: list[Triple],
        valid: list[Triple],
        test: list[Triple],
    ) -> None:
        self.vocab = vocab
        self.train = tuple(train)
        self.valid = tuple(valid)
        self.test = tuple(test)
        self.train_set = frozenset(self.train)
        self.valid_set = frozenset(self.valid)
        self.test_set = frozenset(self.test)
        self.observed = self.train_set | self.valid_set | self.test_set

        self.by_relation_test: dict[int, tuple[Triple, ...]] = self._by_relation(self.test)
        self.by_relation_valid: dict[int, tuple[Triple, ...]] = self._by_relation(self.valid)

        # (subject, relation) -> object set and (relation, object) -> subject
        # set over train+valid; these drive filtered candidate lists.
        self._tv_objects: dict[tuple[int, int], set[int]] = defaultdict(set)
        self._tv_subjects: dict[tuple[int, int], set[int]] = defaultdict(set)
        self._test_objects: dict[tuple[int, int], set[int]] = defaultdict(set)
        self._test_subjects: dict[tuple[int, int], set[int]] = defaultdict(set)
        for t in self.train + self.valid:
            self._tv_objects[(t.subject, t.relation)].add(t.object)
            self._tv_subjects[(t.relation, t.object)].add(t.subject)
        for t in self.test:
            self._test_objects[(t.subject, t.relation)].add(t.object)
            self._test_subjects[(t.relation, t.object)].add(t.subject)

        self._pairs: dict[str, dict[int, set[tuple[int, int]]]] = {
            "train": defaultdict(set),
            "valid": defaultdict(set),
            "test": defaultdict(set),
        }
        for name, split in (("train", self.train), ("valid", self.valid), ("test", self.test)):
            by_rel = self._pairs[name]
            for t in split:
                by_rel[t.relation].add((t.subject, t.object))

        subj_pool = sorted({t.subject for t in self.train})
        obj_pool = sorted({t.object for t in self.train})
        self.train_subject_pool = np.asarray(subj_pool, dtype=np.int64)
        self.train_object_pool = np.asarray(obj_pool, dtype=np.int64)

    @property
    def n_entities(self) -> int:
        return self.vocab.n_entities

    @property
    def n_relations(self) -> int:
        return self.vocab.n_relations

    @staticmethod
    def _by_relation(split: tuple[Triple, ...]) -> dict[int, tuple[Triple, ...]]:
        grouped: dict[int, list[Triple]] = defaultdict(list)
        for t in split:
            grouped[t.relation].append(t)
        return {rel: tuple(ts) for rel, ts in grouped.items()}

    def split(self, name: str) -> tuple[Triple, ...]:
        return {"train": self.train, "valid": self.valid, "test": self.test}[name]

    def by_relation(self, name: str) -> dict[int, tuple[Triple, ...]]:
        if name == "test":
            return self.by_relation_test
        if name == "valid":
            return self.by_relation_valid
        return self._by_relation(self.train)

    def pairs(self, relation: int, splits: Iterable[str] = ("train", "valid")) -> set[tuple[int, int]]:
        """Entity pairs of ``relation`` across the given splits."""
        out: set[tuple[int, int]] = set()
        for name in splits:
            out |= self._pairs[name].get(relation, set())
        return out

    def filtered_objects(self, subject: int, relation: int, include_test: bool = False) -> set[int]:
        """Objects o with (subject, relation, o) observed in train or valid
        (plus test when requested); used to filter ranking candidates."""
        out = self._tv_objects.get((subject, relation), set())
        if include_test:
            out = out | self._test_objects.get((subject, relation), set())
        return out

    def filtered_subjects(self, relation: int, object: int, include_test: bool = False) -> set[int]:
        out = self._tv_subjects.get((relation, object), set())
        if include_test:
            out = out | self._test_subjects.get((relation, object), set())
        return out


def build_kb(
    train: list[Triple],
    valid: list[Triple],
    test: list[Triple],
    vocab: Vocab,
) -> KnowledgeBase:
    """Assemble a KnowledgeBase, dropping cross-split duplicates with
    precedence train > valid > test so the splits are pairwise disjoint."""
    n_ent, n_rel = vocab.n_entities, vocab.n_relations
    for split in (train, valid, test):
        for t in split:
            if not (0 <= t.subject < n_ent and 0 <= t.object < n_ent and 0 <= t.relation < n_rel):
                raise ValueError(f"triple {t} out of range for |E|={n_ent}, |R|={n_rel}")

    kept_train = list(dict.fromkeys(train))
    train_set = set(kept_train)
    kept_valid = []
    for t in dict.fromkeys(valid):
        if t in train_set:
            log.warning("valid triple %s already in train; dropped from valid", t)
        else:
            kept_valid.append(t)
    earlier = train_set | set(kept_valid)
    kept_test = []
    for t in dict.fromkeys(test):
        if t in earlier:
            log.warning("test triple %s already in an earlier split; dropped from test", t)
        else:
            kept_test.append(t)
    return KnowledgeBase(vocab, kept_train, kept_valid, kept_test)


def dataset_stats(kb: KnowledgeBase) -> dict[str, int]:
    return {
        "n_entities": kb.n_entities,
        "n_relations": kb.n_relations,
        "n_train": len(kb.train),
        "n_valid": len(kb.valid),
        "n_test": len(kb.test),
    }


class TypeConstraints:
    """Entity type sets plus per-relation domain/range types.

    A relation is *constrained* when both domain and range are present;
    only constrained relations participate in type filtering.
    """

    def __init__(
        self,
        n_entities: int,
        entity_types: list[set[str]],
        domain: dict[int, str],
        range_: dict[int, str],
    ) -> None:
        self.n_entities = n_entities
        self.entity_types = entity_types
        self.relation_domain = domain
        self.relation_range = range_
        self.constrained = frozenset(k for k in domain if k in range_)
        self._subject_masks: dict[int, np.ndarray] = {}
        self._object_masks: dict[int, np.ndarray] = {}

    def admissible(self, relation: int, subject: int, object: int) -> bool:
        if relation not in self.constrained:
            return True
        return (
            self.relation_domain[relation] in self.entity_types[subject]
            and self.relation_range[relation] in self.entity_types[object]
        )

    def subject_mask(self, relation: int) -> np.ndarray | None:
        """Boolean admissibility mask over all entities as subjects, or None
        when the relation is unconstrained."""
        if relation not in self.constrained:
            return None
        if relation not in self._subject_masks:
            dom = self.relation_domain[relation]
            self._subject_masks[relation] = np.fromiter(
                (dom in ts for ts in self.entity_types), dtype=bool, count=self.n_entities
            )
        return self._subject_masks[relation]

    def object_mask(self, relation: int) -> np.ndarray | None:
        if relation not in self.constrained:
            return None
        if relation not in self._object_masks:
            rng_t = self.relation_range[relation]
            self._object_masks[relation] = np.fromiter(
                (rng_t in ts for ts in self.entity_types), dtype=bool, count=self.n_entities
            )
        return self._object_masks[relation]


def load_type_constraints(
    entity_types_path: str | Path,
    relation_constraints_path: str | Path,
    kb: KnowledgeBase,
    augment: bool = True,
) -> TypeConstraints:
    """Load entity-type and relation domain/range files.

    With ``augment`` (the default), the domain (range) type of every
    constrained relation is added to the type set of every subject (object)
    appearing with it in any split, so the filter can never reject a split
    triple of a constrained relation.
    """
    vocab = kb.vocab
    entity_types: list[set[str]] = [set() for _ in range(vocab.n_entities)]
    with open(entity_types_path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n\r")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ConstraintFileError(
                    f"{entity_types_path}:{lineno}: expected 2 fields, got {len(fields)}"
                )
            name, type_list = fields
            try:
                ent = vocab.entity_id(name)
            except VocabularyError as exc:
                raise ConstraintFileError(f"{entity_types_path}:{lineno}: {exc}") from None
            entity_types[ent].update(t for t in type_list.split(",") if t)

    domain: dict[int, str] = {}
    range_: dict[int, str] = {}
    with open(relation_constraints_path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n\r")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ConstraintFileError(
                    f"{relation_constraints_path}:{lineno}: expected 3 fields, got {len(fields)}"
                )
            name, dom, rng_t = fields
            try:
                rel = vocab.relation_id(name)
            except VocabularyError as exc:
                raise ConstraintFileError(f"{relation_constraints_path}:{lineno}: {exc}") from None
            if dom != "-":
                domain[rel] = dom
            if rng_t != "-":
                range_[rel] = rng_t

    constraints = TypeConstraints(vocab.n_entities, entity_types, domain, range_)
    if augment:
        for t in kb.train + kb.valid + kb.test:
            if t.relation in constraints.constrained:
                entity_types[t.subject].add(domain[t.relation])
                entity_types[t.object].add(range_[t.relation])
    return constraints
