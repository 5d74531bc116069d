"""Negative sampling, losses, AdaGrad updates, the epoch loop, and grid
search over the standard hyperparameter space.

Training is deterministic for a fixed config and seed: triples are
shuffled per epoch from one seeded generator, negatives are drawn from the
same stream, and updates run sequentially by default. An optional
multi-threaded mode applies unsynchronized sparse updates and is therefore
not deterministic; it must be requested explicitly.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .exceptions import ConfigurationError, SamplerExhaustedError, TrainingDivergedError
from .kb import KnowledgeBase, Triple
from .models import EmbeddingModel, init_params

log = logging.getLogger(__name__)

STRATEGIES = ("perturb1", "perturb2", "perturb1r")
LOSSES = ("bce", "margin")
MAX_SAMPLE_ATTEMPTS = 1000

GradientDict = dict[tuple[str, int], np.ndarray]


@dataclass(frozen=True)
class TrainConfig:
    dim: int
    lr: float
    l2: float = 0.0
    margin: float = 1.0
    strategy: str = "perturb1"
    negatives: int = 6
    max_epochs: int = 500
    eval_every: int = 50
    seed: int = 0
    loss: str = "bce"

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        if self.l2 < 0 or self.margin < 0:
            raise ConfigurationError("l2 and margin must be >= 0")
        if self.negatives < 1:
            raise ConfigurationError("negatives_per_positive must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown strategy {self.strategy!r}")
        if self.loss not in LOSSES:
            raise ConfigurationError(f"unknown loss {self.loss!r}")

    def validate_for(self, kind: str) -> None:
        # the translation model only produces negative scores, which the
        # logistic loss cannot separate in a principled way
        if kind == "transe" and self.loss != "margin":
            raise ConfigurationError("transe must train with the margin ranking loss")


class AdaGradState:
    """Per-parameter accumulated squared gradients, entrywise nondecreasing."""

    def __init__(self, model: EmbeddingModel, epsilon: float = 1e-8):
        self.entity = np.zeros_like(model.entity_emb)
        self.relation = np.zeros_like(model.relation_emb)
        self.epsilon = epsilon

    def slot(self, name: str) -> np.ndarray:
        return self.entity if name == "entity" else self.relation


def sample_negatives(
    kb: KnowledgeBase,
    triple: Triple,
    strategy: str,
    n: int,
    rng: np.random.Generator,
) -> list[Triple]:
    """Draw n pseudo-negative triples for one positive.

    perturb1 replaces the subject or the object (result unobserved in
    train), perturb2 draws unobserved entity pairs under the same relation,
    perturb1r replaces subject, relation, or object without checking the
    training set at all.
    """
    n_ent = kb.n_entities
    n_rel = kb.n_relations
    if n_ent < 2:
        raise SamplerExhaustedError("need at least 2 entities to sample negatives")
    out: list[Triple] = []
    for _ in range(n):
        for attempt in range(MAX_SAMPLE_ATTEMPTS):
            if strategy == "perturb1":
                if rng.integers(2) == 0:
                    cand = Triple(int(rng.integers(n_ent)), triple.relation, triple.object)
                    changed = cand.subject != triple.subject
                else:
                    cand = Triple(triple.subject, triple.relation, int(rng.integers(n_ent)))
                    changed = cand.object != triple.object
                if changed and cand not in kb.train_set:
                    break
            elif strategy == "perturb2":
                cand = Triple(int(rng.integers(n_ent)), triple.relation, int(rng.integers(n_ent)))
                if cand not in kb.train_set:
                    break
            else:  # perturb1r
                slot = int(rng.integers(3))
                if slot == 0:
                    cand = Triple(int(rng.integers(n_ent)), triple.relation, triple.object)
                    changed = cand.subject != triple.subject
                elif slot == 1:
                    cand = Triple(triple.subject, int(rng.integers(n_rel)), triple.object)
                    changed = cand.relation != triple.relation
                else:
                    cand = Triple(triple.subject, triple.relation, int(rng.integers(n_ent)))
                    changed = cand.object != triple.object
                if changed:
                    break
        else:
            raise SamplerExhaustedError(
                f"no admissible {strategy} sample for {triple} in {MAX_SAMPLE_ATTEMPTS} attempts"
            )
        out.append(cand)
    return out


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    z = np.exp(x)
    return z / (1.0 + z)


def _softplus(x: float) -> float:
    # log(1 + e^x), stable for large |x|
    return float(np.logaddexp(0.0, x))


def _accumulate(grads: GradientDict, key: tuple[str, int], value: np.ndarray) -> None:
    existing = grads.get(key)
    if existing is None:
        grads[key] = value
    else:
        existing += value


def loss_and_grads(
    model: EmbeddingModel,
    positive: Triple,
    negatives: Sequence[Triple],
    loss: str = "bce",
    margin: float = 1.0,
    l2: float = 0.0,
) -> tuple[float, GradientDict]:
    """Loss of one positive-plus-negatives group and its gradients with
    respect to the parameter rows the group touches.

    bce: -log sigmoid(s_pos) - sum log(1 - sigmoid(s_neg));
    margin: sum max(0, margin - s_pos + s_neg). An l2 penalty over the
    touched rows (each counted once) is added when l2 > 0.
    """
    grads: GradientDict = {}

    def add_score_grads(g, triple: Triple, coef: float) -> None:
        _accumulate(grads, ("entity", triple.subject), coef * g.subject)
        _accumulate(grads, ("relation", triple.relation), coef * g.relation)
        _accumulate(grads, ("entity", triple.object), coef * g.object)

    s_pos, g_pos = model.score_and_gradients(*positive)
    total = 0.0
    if loss == "bce":
        total += _softplus(-s_pos)
        add_score_grads(g_pos, positive, _sigmoid(s_pos) - 1.0)
        for neg in negatives:
            s_neg, g_neg = model.score_and_gradients(*neg)
            total += _softplus(s_neg)
            add_score_grads(g_neg, neg, _sigmoid(s_neg))
    elif loss == "margin":
        for neg in negatives:
            s_neg, g_neg = model.score_and_gradients(*neg)
            slack = margin - s_pos + s_neg
            if slack > 0.0:
                total += slack
                add_score_grads(g_pos, positive, -1.0)
                add_score_grads(g_neg, neg, 1.0)
    else:
        raise ConfigurationError(f"unknown loss {loss!r}")

    if l2 > 0.0:
        touched = {("entity", t.subject) for t in (positive, *negatives)}
        touched |= {("entity", t.object) for t in (positive, *negatives)}
        touched |= {("relation", t.relation) for t in (positive, *negatives)}
        for key in sorted(touched):
            slot, idx = key
            row = model.entity_emb[idx] if slot == "entity" else model.relation_emb[idx]
            total += l2 * float(np.sum(row * row))
            _accumulate(grads, key, 2.0 * l2 * row)
    return total, grads


def adagrad_step(
    model: EmbeddingModel,
    grads: GradientDict,
    state: AdaGradState,
    lr: float,
) -> None:
    """Sparse AdaGrad update: G += g^2, theta -= lr * g / (sqrt(G) + eps),
    applied only to the parameter rows present in ``grads``."""
    eps = state.epsilon
    for (slot, idx), g in grads.items():
        acc = state.slot(slot)[idx]
        acc += g * g
        target = model.entity_emb if slot == "entity" else model.relation_emb
        target[idx] -= lr * g / (np.sqrt(acc) + eps)


@dataclass
class TrainResult:
    model: EmbeddingModel
    log: list[dict]
    best_metric: float | None


def train(
    kb: KnowledgeBase,
    config: TrainConfig,
    kind: str,
    validation_metric: str = "mrr_er",
    tuning_relations: Iterable[int] | None = None,
    *,
    norm: str = "l1",
    parallel_workers: int = 1,
    model: EmbeddingModel | None = None,
) -> TrainResult:
    """Run the epoch loop and return the best checkpoint by the validation
    metric (the final parameters when no evaluation ever ran).

    ``validation_metric`` is ``mrr_er`` (filtered MRR over validation
    questions) or ``map100_pr`` (MAP@100 over validation pairs), optionally
    restricted to ``tuning_relations``. ``parallel_workers > 1`` enables the
    nondeterministic unsynchronized update mode.
    """
    config.validate_for(kind)
    if model is None:
        model = init_params(kind, config.dim, kb.n_entities, kb.n_relations, config.seed, norm=norm)
    state = AdaGradState(model)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    evaluate = _validation_evaluator(validation_metric, kb, tuning_relations)

    triples = list(kb.train)
    best_metric: float | None = None
    best_model = None
    train_log: list[dict] = []

    def step(triple: Triple) -> float:
        negatives = sample_negatives(kb, triple, config.strategy, config.negatives, rng)
        value, grads = loss_and_grads(
            model, triple, negatives, loss=config.loss, margin=config.margin, l2=config.l2
        )
        adagrad_step(model, grads, state, config.lr)
        return value

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(triples))
        if parallel_workers > 1:
            # unsynchronized sparse updates; fast but not reproducible
            shards = [[triples[i] for i in order[w::parallel_workers]] for w in range(parallel_workers)]
            with ThreadPoolExecutor(max_workers=parallel_workers) as pool:
                losses = [v for shard in pool.map(lambda s: [step(t) for t in s], shards) for v in shard]
        else:
            losses = [step(triples[i]) for i in order]
        epoch_loss = float(np.mean(losses)) if losses else 0.0
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(f"non-finite loss {epoch_loss} at epoch {epoch}")

        entry: dict = {"epoch": epoch, "loss": epoch_loss, "metric": None}
        if epoch % config.eval_every == 0 or epoch == config.max_epochs:
            metric = evaluate(model)
            entry["metric"] = metric
            if best_metric is None or metric > best_metric:
                best_metric = metric
                best_model = model.copy()
        train_log.append(entry)

    return TrainResult(best_model if best_model is not None else model, train_log, best_metric)


def _validation_evaluator(
    name: str, kb: KnowledgeBase, tuning_relations: Iterable[int] | None
) -> Callable[[EmbeddingModel], float]:
    relations = None if tuning_relations is None else sorted(tuning_relations)
    if name == "mrr_er":
        from .evaluation import er_evaluate

        def run(model: EmbeddingModel) -> float:
            return er_evaluate(model, kb, ks=(10,), split="valid", relations=relations).mrr

    elif name == "map100_pr":
        from .evaluation import pr_evaluate

        def run(model: EmbeddingModel) -> float:
            return pr_evaluate(model, kb, k=100, split="valid", relations=relations).map_at_k

    else:
        raise ConfigurationError(f"unknown validation metric {name!r}")
    return run


def top_relations_by_frequency(kb: KnowledgeBase, count: int) -> list[int]:
    """Most frequent training relations, for restricted hyperparameter
    tuning on skewed datasets."""
    freq: dict[int, int] = {}
    for t in kb.train:
        freq[t.relation] = freq.get(t.relation, 0) + 1
    ranked = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))
    return [rel for rel, _ in ranked[:count]]


@dataclass(frozen=True)
class GridSpace:
    """Cartesian hyperparameter grid; cells enumerate in the field order
    below, which also defines the tie-breaking order."""

    dims: tuple[int, ...] = (100, 150, 200)
    l2s: tuple[float, ...] = (0.1, 0.01, 0.001)
    lrs: tuple[float, ...] = (0.01, 0.1)
    strategies: tuple[str, ...] = STRATEGIES
    margins: tuple[float, ...] = (1.0,)
    negatives: int = 6
    max_epochs: int = 500
    eval_every: int = 50

    def cells(self, kind: str, seed: int) -> list[TrainConfig]:
        loss = "margin" if kind == "transe" else "bce"
        configs = []
        for dim, l2, lr, strategy, margin in itertools.product(
            self.dims, self.l2s, self.lrs, self.strategies, self.margins
        ):
            configs.append(
                TrainConfig(
                    dim=dim,
                    lr=lr,
                    l2=l2,
                    margin=margin,
                    strategy=strategy,
                    negatives=self.negatives,
                    max_epochs=self.max_epochs,
                    eval_every=self.eval_every,
                    seed=seed,
                    loss=loss,
                )
            )
        return configs


def default_space(kind: str) -> GridSpace:
    """The standard search space: d in {100,150,200}, l2 in
    {0.1,0.01,0.001}, lr in {0.01,0.1}, all three sampling strategies, 500
    epochs; the margin model swaps the l2 axis for margins {0.5,1,2,3,4}
    and trains 1800 epochs."""
    if kind == "transe":
        return GridSpace(l2s=(0.0,), margins=(0.5, 1.0, 2.0, 3.0, 4.0), max_epochs=1800)
    return GridSpace()


@dataclass
class GridCellResult:
    config: TrainConfig
    metric: float | None
    error: str | None = None


def grid_search(
    kb: KnowledgeBase,
    kind: str,
    space: GridSpace,
    validation_metric: str = "mrr_er",
    tuning_relations: Iterable[int] | None = None,
    seed: int = 0,
    norm: str = "l1",
) -> tuple[TrainConfig, list[GridCellResult]]:
    """Train every cell and return (best config, per-cell results). Ties
    keep the earliest cell in enumeration order; failed cells are recorded
    and skipped."""
    cells = space.cells(kind, seed)
    if not cells:
        raise ConfigurationError("empty grid")
    results: list[GridCellResult] = []
    best: tuple[float, TrainConfig] | None = None
    for config in cells:
        try:
            outcome = train(kb, config, kind, validation_metric, tuning_relations, norm=norm)
        except (SamplerExhaustedError, TrainingDivergedError, ConfigurationError) as exc:
            log.warning("grid cell %s failed: %s", config, exc)
            results.append(GridCellResult(config, None, error=str(exc)))
            continue
        metric = outcome.best_metric if outcome.best_metric is not None else -np.inf
        results.append(GridCellResult(config, metric))
        if best is None or metric > best[0]:
            best = (metric, config)
    if best is None:
        raise TrainingDivergedError("every grid cell failed")
    return best[1], results
