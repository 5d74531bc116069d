"""Path-rule and constant-rule baseline.

A path rule predicts head(x, y) from a chain of one to three body atoms,
each traversed forward or inverse, e.g.::

    head <- r1 , r2^-1 : confidence support body_count

A constant rule predicts a fixed entity in one slot of the head relation::

    head(object=name) : confidence support body_count

Confidence is the fraction of body groundings whose head triple is in the
training split, estimated from up to ``sample_size`` groundings drawn
uniformly (exactly, via path-count weighting) or enumerated exhaustively
when there are at most ``sample_size`` of them. Scoring aggregates firing
rules by maximum confidence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import KbcError
from .kb import KnowledgeBase, Triple, Vocab
from .scorers import block_from_rows
from .topk import topk_select

log = logging.getLogger(__name__)

Atom = tuple[int, bool]  # (relation, inverse?)


@dataclass(frozen=True)
class PathRule:
    head: int
    body: tuple[Atom, ...]
    confidence: float
    support: int
    body_count: int


@dataclass(frozen=True)
class ConstantRule:
    head: int
    slot: str  # "subject" or "object"
    constant: int
    confidence: float
    support: int
    body_count: int


Rule = PathRule | ConstantRule


class TrainGraph:
    """Adjacency over the training split, per (relation, direction) atom."""

    def __init__(self, kb: KnowledgeBase):
        succ: dict[Atom, dict[int, list[int]]] = {}
        for t in kb.train:
            succ.setdefault((t.relation, False), {}).setdefault(t.subject, []).append(t.object)
            succ.setdefault((t.relation, True), {}).setdefault(t.object, []).append(t.subject)
        self.succ: dict[Atom, dict[int, tuple[int, ...]]] = {
            atom: {v: tuple(sorted(set(ws))) for v, ws in adj.items()} for atom, adj in succ.items()
        }
        self.sources: dict[Atom, tuple[int, ...]] = {
            atom: tuple(sorted(adj)) for atom, adj in self.succ.items()
        }
        self.targets: dict[Atom, frozenset[int]] = {
            atom: frozenset(w for ws in adj.values() for w in ws) for atom, adj in self.succ.items()
        }

    def successors(self, atom: Atom, node: int) -> tuple[int, ...]:
        return self.succ.get(atom, {}).get(node, ())

    def atoms(self) -> list[Atom]:
        return sorted(self.succ)


def _grounding_weights(graph: TrainGraph, body: Sequence[Atom]) -> list[dict[int, int]]:
    """weights[l][v] = number of body paths from v through atoms l..end."""
    depth = len(body)
    weights: list[dict[int, int]] = [dict() for _ in range(depth)]
    for level in range(depth - 1, -1, -1):
        atom = body[level]
        here = weights[level]
        for v in graph.sources.get(atom, ()):
            if level + 1 == depth:
                total = len(graph.successors(atom, v))
            else:
                nxt = weights[level + 1]
                total = sum(nxt.get(w, 0) for w in graph.successors(atom, v))
            if total:
                here[v] = total
    return weights


def sample_groundings(
    graph: TrainGraph,
    body: Sequence[Atom],
    sample_size: int,
    rng: np.random.Generator,
) -> tuple[list[tuple[int, int]], int]:
    """(endpoint pairs, total grounding count) for one body.

    Enumerates every grounding when the total is at most ``sample_size``;
    otherwise draws that many independent uniform samples by walking the
    body with successor choices weighted by completion counts.
    """
    weights = _grounding_weights(graph, body)
    starts = sorted(weights[0])
    total = sum(weights[0][v] for v in starts)
    if total == 0:
        return [], 0
    depth = len(body)
    if total <= sample_size:
        endpoints: list[tuple[int, int]] = []

        def walk(level: int, start: int, node: int) -> None:
            if level == depth:
                endpoints.append((start, node))
                return
            for w in graph.successors(body[level], node):
                if level + 1 == depth or weights[level + 1].get(w, 0) > 0:
                    walk(level + 1, start, w)

        for x in starts:
            walk(0, x, x)
        return endpoints, total

    start_w = np.asarray([weights[0][v] for v in starts], dtype=np.float64)
    start_p = start_w / start_w.sum()
    samples: list[tuple[int, int]] = []
    for _ in range(sample_size):
        node = starts[int(rng.choice(len(starts), p=start_p))]
        start = node
        for level in range(depth):
            nxt = [
                w
                for w in graph.successors(body[level], node)
                if level + 1 == depth or weights[level + 1].get(w, 0) > 0
            ]
            if level + 1 == depth:
                node = nxt[int(rng.integers(len(nxt)))]
            else:
                ws = np.asarray([weights[level + 1][w] for w in nxt], dtype=np.float64)
                node = nxt[int(rng.choice(len(nxt), p=ws / ws.sum()))]
        samples.append((start, node))
    return samples, total


def _candidate_bodies(graph: TrainGraph, max_len: int) -> list[tuple[Atom, ...]]:
    """Bodies whose consecutive atoms share at least one joining entity."""
    atoms = graph.atoms()
    bodies: list[tuple[Atom, ...]] = [(a,) for a in atoms]
    if max_len >= 2:
        for a in atoms:
            for b in atoms:
                if graph.targets[a] & set(graph.sources[b]):
                    bodies.append((a, b))
    if max_len >= 3:
        two_hop = [body for body in bodies if len(body) == 2]
        for a, b in two_hop:
            for c in atoms:
                if graph.targets[b] & set(graph.sources[c]):
                    bodies.append((a, b, c))
    return bodies


class RuleModel:
    """Mined rules grouped by head relation, scoring by max confidence of
    the firing rules; implements the shared scoring interface."""

    def __init__(self, n_entities: int, n_relations: int, rules: Iterable[Rule], graph: TrainGraph):
        self.n_entities = n_entities
        self.n_relations = n_relations
        self.graph = graph
        self.rules: list[Rule] = sorted(rules, key=_rule_sort_key)
        self.rules_by_head: dict[int, list[Rule]] = {}
        for rule in self.rules:
            self.rules_by_head.setdefault(rule.head, []).append(rule)

    def _fires(self, rule: Rule, subject: int, object: int) -> bool:
        if isinstance(rule, ConstantRule):
            return (rule.slot == "subject" and subject == rule.constant) or (
                rule.slot == "object" and object == rule.constant
            )
        frontier = {subject}
        for atom in rule.body:
            frontier = {w for v in frontier for w in self.graph.successors(atom, v)}
            if not frontier:
                return False
        return object in frontier

    def score(self, subject: int, relation: int, object: int) -> float:
        best = 0.0
        for rule in self.rules_by_head.get(relation, ()):
            if rule.confidence > best and self._fires(rule, subject, object):
                best = rule.confidence
        return best

    def score_row(self, subject: int, relation: int) -> np.ndarray:
        row = np.zeros(self.n_entities)
        for rule in self.rules_by_head.get(relation, ()):
            if isinstance(rule, ConstantRule):
                if rule.slot == "object":
                    row[rule.constant] = max(row[rule.constant], rule.confidence)
                elif subject == rule.constant:
                    np.maximum(row, rule.confidence, out=row)
                continue
            frontier = {subject}
            for atom in rule.body:
                frontier = {w for v in frontier for w in self.graph.successors(atom, v)}
                if not frontier:
                    break
            if frontier:
                idx = np.fromiter(frontier, dtype=np.int64)
                row[idx] = np.maximum(row[idx], rule.confidence)
        return row

    def score_col(self, relation: int, object: int) -> np.ndarray:
        col = np.zeros(self.n_entities)
        for rule in self.rules_by_head.get(relation, ()):
            if isinstance(rule, ConstantRule):
                if rule.slot == "subject":
                    col[rule.constant] = max(col[rule.constant], rule.confidence)
                elif object == rule.constant:
                    np.maximum(col, rule.confidence, out=col)
                continue
            frontier = {object}
            for rel, inv in reversed(rule.body):
                frontier = {w for v in frontier for w in self.graph.successors((rel, not inv), v)}
                if not frontier:
                    break
            if frontier:
                idx = np.fromiter(frontier, dtype=np.int64)
                col[idx] = np.maximum(col[idx], rule.confidence)
        return col

    def score_block(self, relation: int, subjects, objects) -> np.ndarray:
        return block_from_rows(self, relation, subjects, objects)

    def predict_pairs(
        self,
        relation: int,
        k: int,
        exclude: set[tuple[int, int]] | None = None,
    ) -> list[tuple[float, int, int]]:
        """Top-K candidate pairs generated by forward-chaining rule bodies
        over the training graph (no full pair scan), deduplicated by max
        confidence and ordered under the global tie rule."""
        exclude = exclude or set()
        best: dict[tuple[int, int], float] = {}

        def consider(pair: tuple[int, int], confidence: float) -> None:
            if pair in exclude:
                return
            prev = best.get(pair)
            if prev is None or confidence > prev:
                best[pair] = confidence

        head_pairs_fwd = self.graph.succ.get((relation, False), {})
        head_pairs_inv = self.graph.succ.get((relation, True), {})
        for rule in self.rules_by_head.get(relation, ()):
            if isinstance(rule, ConstantRule):
                if rule.slot == "object":
                    for x in head_pairs_fwd:
                        consider((x, rule.constant), rule.confidence)
                else:
                    for y in head_pairs_inv:
                        consider((rule.constant, y), rule.confidence)
                continue
            for x in self.graph.sources.get(rule.body[0], ()):
                frontier = {x}
                for atom in rule.body:
                    frontier = {w for v in frontier for w in self.graph.successors(atom, v)}
                    if not frontier:
                        break
                for y in frontier:
                    consider((x, y), rule.confidence)

        items = [(conf, i * self.n_entities + j) for (i, j), conf in best.items()]
        return [
            (score, cid // self.n_entities, cid % self.n_entities)
            for score, cid in topk_select(items, k)
        ]


def _rule_sort_key(rule: Rule):
    if isinstance(rule, PathRule):
        return (rule.head, -rule.confidence, 0, tuple((r, int(inv)) for r, inv in rule.body), -1, "")
    return (rule.head, -rule.confidence, 1, (), rule.constant, rule.slot)


def mine_rules(
    kb: KnowledgeBase,
    max_len: int = 2,
    sample_size: int = 1000,
    min_support: int = 2,
    rng: np.random.Generator | None = None,
) -> RuleModel:
    """Mine path rules up to ``max_len`` body atoms plus constant rules.

    Candidate bodies are chains of co-occurring atoms; one grounding sample
    per body is shared across all head relations. Rules with support below
    ``min_support`` are dropped. The trivial implication of a relation by
    itself is excluded.
    """
    if max_len not in (2, 3):
        raise KbcError(f"max_len must be 2 or 3, got {max_len}")
    rng = rng if rng is not None else np.random.default_rng(0)
    graph = TrainGraph(kb)
    train_by_rel = kb.by_relation("train")
    heads = sorted(train_by_rel)
    rules: list[Rule] = []

    for body in _candidate_bodies(graph, max_len):
        endpoints, total = sample_groundings(graph, body, sample_size, rng)
        if not endpoints:
            continue
        for head in heads:
            if body == ((head, False),):
                continue  # k(x,y) <- k(x,y) is vacuously perfect
            support = sum(1 for x, y in endpoints if Triple(x, head, y) in kb.train_set)
            if support >= min_support:
                rules.append(PathRule(head, tuple(body), support / len(endpoints), support, len(endpoints)))

    for head in heads:
        triples = train_by_rel[head]
        n_head = len(triples)
        for slot, pick in (("subject", lambda t: t.subject), ("object", lambda t: t.object)):
            freq: dict[int, int] = {}
            for t in triples:
                freq[pick(t)] = freq.get(pick(t), 0) + 1
            for constant, count in sorted(freq.items()):
                if count >= min_support:
                    rules.append(ConstantRule(head, slot, constant, count / n_head, count, n_head))

    log.info("mined %d rules (max_len=%d, sample_size=%d)", len(rules), max_len, sample_size)
    return RuleModel(kb.n_entities, kb.n_relations, rules, graph)


def rule_score(model: RuleModel, subject: int, relation: int, object: int) -> float:
    return model.score(subject, relation, object)


def rule_predict_pairs(
    model: RuleModel, kb: KnowledgeBase, relation: int, k: int
) -> list[tuple[float, int, int]]:
    """Top-K predictions for one relation with train and valid pairs
    filtered out."""
    return model.predict_pairs(relation, k, exclude=kb.pairs(relation, ("train", "valid")))


def save_rules(path: str | Path, model: RuleModel, vocab: Vocab) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rule in model.rules:
            head = vocab.relation_name(rule.head)
            stats = f"{rule.confidence:.6f} {rule.support} {rule.body_count}"
            if isinstance(rule, PathRule):
                body = " , ".join(
                    vocab.relation_name(rel) + ("^-1" if inv else "") for rel, inv in rule.body
                )
                fh.write(f"{head} <- {body} : {stats}\n")
            else:
                fh.write(f"{head}({rule.slot}={vocab.entity_name(rule.constant)}) : {stats}\n")


def load_rules(path: str | Path, kb: KnowledgeBase) -> RuleModel:
    vocab = kb.vocab
    rules: list[Rule] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                lhs, stats = line.rsplit(" : ", 1)
                conf_s, support_s, count_s = stats.split()
                support, body_count = int(support_s), int(count_s)
                # the integer counts are exact; the printed confidence is not
                confidence = support / body_count if body_count > 0 else float(conf_s)
                if " <- " in lhs:
                    head_s, body_s = lhs.split(" <- ", 1)
                    body = []
                    for atom_s in body_s.split(" , "):
                        inv = atom_s.endswith("^-1")
                        name = atom_s[:-3] if inv else atom_s
                        body.append((vocab.relation_id(name), inv))
                    rules.append(
                        PathRule(vocab.relation_id(head_s), tuple(body), confidence, support, body_count)
                    )
                else:
                    head_s, rest = lhs.split("(", 1)
                    slot, const_s = rest.rstrip(")").split("=", 1)
                    rules.append(
                        ConstantRule(
                            vocab.relation_id(head_s),
                            slot,
                            vocab.entity_id(const_s),
                            confidence,
                            support,
                            body_count,
                        )
                    )
            except (ValueError, KeyError) as exc:
                raise KbcError(f"{path}:{lineno}: malformed rule line: {exc}") from None
    return RuleModel(kb.n_entities, kb.n_relations, rules, TrainGraph(kb))
