"""Command-line driver for reproducible dataset/train/evaluate runs.

Every run writes its artifacts plus a ``manifest.json`` recording the
resolved configuration, dataset checksums, phase timings, and the paths of
everything written. Exit codes: 0 success, 1 runtime error from a module,
2 configuration/usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .evaluation import (
    closure_analysis,
    er_evaluate,
    metric_curves,
    pr_evaluate,
    pr_evaluate_rules,
    tc_evaluate,
    tc_learn_thresholds,
)
from .exceptions import KbcError
from .kb import build_kb, dataset_stats, load_triples, load_type_constraints
from .models import load_checkpoint, save_checkpoint
from .report import (
    er_report,
    pr_report,
    render_curve_figure,
    render_relation_bars,
    tc_report,
    write_curve_csv,
    write_report_json,
    write_report_tsv,
)
from .rules import load_rules, mine_rules, save_rules
from .scorers import TableScorer
from .topk import scan_relation
from .training import (
    GridSpace,
    TrainConfig,
    default_space,
    grid_search,
    top_relations_by_frequency,
    train,
)

log = logging.getLogger(__name__)

EMBEDDING_MODELS = {
    "rescal": ("rescal", None),
    "transe-l1": ("transe", "l1"),
    "transe-l2": ("transe", "l2"),
    "distmult": ("distmult", None),
    "complex": ("complex", None),
    "analogy": ("analogy", None),
}
MODEL_CHOICES = sorted(EMBEDDING_MODELS) + ["rules", "table"]


class UsageError(Exception):
    pass


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset-dir", required=True, help="directory with train.txt/valid.txt/test.txt")
    parser.add_argument("--seed", type=int, required=True, help="run seed (mandatory, no wall-clock default)")
    parser.add_argument("--out", required=True, help="output directory for artifacts")
    parser.add_argument("--workers", type=int, default=1)


def _add_scorer_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", required=True, choices=MODEL_CHOICES)
    parser.add_argument("--checkpoint", help="parameter checkpoint (embedding models)")
    parser.add_argument("--rules-file", help="rule file (--model rules)")
    parser.add_argument("--scores", help="score table TSV (--model table)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kbcbench", description=__doc__)
    parser.add_argument("--version", action="version", version=f"kbcbench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one embedding model")
    _add_common(p_train)
    p_train.add_argument("--model", required=True, choices=sorted(EMBEDDING_MODELS))
    p_train.add_argument("--dim", type=int, default=100)
    p_train.add_argument("--lr", type=float, default=0.1)
    p_train.add_argument("--l2", type=float, default=0.0)
    p_train.add_argument("--margin", type=float, default=1.0)
    p_train.add_argument("--sampling", choices=["perturb1", "perturb2", "perturb1r"], default="perturb1")
    p_train.add_argument("--negatives", type=int, default=6)
    p_train.add_argument("--epochs", type=int, default=500)
    p_train.add_argument("--eval-every", type=int, default=50)
    p_train.add_argument("--validation-metric", choices=["mrr-er", "map100-pr"], default="mrr-er")
    p_train.add_argument("--tuning-top", type=int, help="restrict validation to the N most frequent relations")

    p_eval = sub.add_parser("eval", help="evaluate a scorer under one protocol")
    _add_common(p_eval)
    _add_scorer_flags(p_eval)
    p_eval.add_argument("--protocol", required=True, choices=["er", "tc", "pr"])
    p_eval.add_argument("--k", type=int, default=100)
    p_eval.add_argument("--types", help="entity-type TSV (optional type filtering)")
    p_eval.add_argument("--relation-constraints", help="relation domain/range TSV")
    p_eval.add_argument("--block-size", type=int, default=1024)

    p_grid = sub.add_parser("grid", help="exhaustive grid search")
    _add_common(p_grid)
    p_grid.add_argument("--model", required=True, choices=sorted(EMBEDDING_MODELS))
    p_grid.add_argument("--dims", help="comma list overriding the default grid")
    p_grid.add_argument("--l2s", help="comma list")
    p_grid.add_argument("--lrs", help="comma list")
    p_grid.add_argument("--samplings", help="comma list of sampling strategies")
    p_grid.add_argument("--margins", help="comma list (margin loss only)")
    p_grid.add_argument("--negatives", type=int, default=6)
    p_grid.add_argument("--epochs", type=int)
    p_grid.add_argument("--eval-every", type=int, default=50)
    p_grid.add_argument("--validation-metric", choices=["mrr-er", "map100-pr"], default="mrr-er")
    p_grid.add_argument("--tuning-top", type=int)

    p_rules = sub.add_parser("rules", help="mine the rule baseline")
    _add_common(p_rules)
    p_rules.add_argument("--max-len", type=int, default=2, choices=[2, 3])
    p_rules.add_argument("--sample-size", type=int, default=1000)
    p_rules.add_argument("--min-support", type=int, default=2)

    p_curves = sub.add_parser("curves", help="Hits@K / MAP@K over a K grid")
    _add_common(p_curves)
    _add_scorer_flags(p_curves)
    p_curves.add_argument("--k-grid", required=True, help="ascending comma list of K values")
    p_curves.add_argument("--types")
    p_curves.add_argument("--relation-constraints")
    p_curves.add_argument("--block-size", type=int, default=1024)

    p_tf = sub.add_parser("typefilter-eval", help="pair ranking with type filtering")
    _add_common(p_tf)
    _add_scorer_flags(p_tf)
    p_tf.add_argument("--k", type=int, default=100)
    p_tf.add_argument("--types", required=True)
    p_tf.add_argument("--relation-constraints", required=True)
    p_tf.add_argument("--block-size", type=int, default=1024)

    p_cl = sub.add_parser("closure", help="closure-based analysis of one relation's top-K")
    _add_common(p_cl)
    _add_scorer_flags(p_cl)
    p_cl.add_argument("--relation", required=True, help="relation name")
    p_cl.add_argument("--properties", default="", help="comma list from {symmetric,transitive}")
    p_cl.add_argument("--external-kb", help="extra triple file for the closure")
    p_cl.add_argument("--k", type=int, default=100)
    p_cl.add_argument("--block-size", type=int, default=1024)

    return parser


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Collects timings and artifact paths for the manifest."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.out_dir = Path(args.out)
        self.timings: dict[str, float] = {}
        self.artifacts: list[str] = []
        self.checksums: dict[str, str] = {}
        self._phase_start: float | None = None
        self._phase_name: str | None = None

    def phase(self, name: str):
        run = self

        class _Phase:
            def __enter__(self):
                run._phase_start = time.perf_counter()
                run._phase_name = name

            def __exit__(self, *exc):
                run.timings[name] = run.timings.get(name, 0.0) + time.perf_counter() - run._phase_start

        return _Phase()

    def artifact(self, name: str) -> Path:
        path = self.out_dir / name
        self.artifacts.append(str(path))
        return path

    def write_manifest(self) -> None:
        manifest = {
            "command": self.args.command,
            "config": {k: v for k, v in sorted(vars(self.args).items()) if k != "command"},
            "version": __version__,
            "dataset_checksums": self.checksums,
            "timings_sec": {k: round(v, 6) for k, v in self.timings.items()},
            "artifacts": list(self.artifacts),
        }
        path = self.out_dir / "manifest.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")


def _load_dataset(run: Run):
    dataset_dir = Path(run.args.dataset_dir)
    paths = {name: dataset_dir / f"{name}.txt" for name in ("train", "valid", "test")}
    for name, path in paths.items():
        if not path.is_file():
            raise UsageError(f"missing dataset file: {path}")
        run.checksums[path.name] = _sha256(path)
    with run.phase("load"):
        train_t, vocab = load_triples(paths["train"], mode="build")
        valid_t, vocab = load_triples(paths["valid"], vocab, mode="extend")
        test_t, vocab = load_triples(paths["test"], vocab, mode="extend")
        kb = build_kb(train_t, valid_t, test_t, vocab)
    return kb


def _load_constraints(run: Run, kb):
    args = run.args
    types = getattr(args, "types", None)
    rel_constraints = getattr(args, "relation_constraints", None)
    if types is None and rel_constraints is None:
        return None
    if types is None or rel_constraints is None:
        raise UsageError("--types and --relation-constraints must be given together")
    for path in (types, rel_constraints):
        if not Path(path).is_file():
            raise UsageError(f"missing constraint file: {path}")
        run.checksums[Path(path).name] = _sha256(Path(path))
    return load_type_constraints(types, rel_constraints, kb)


def _load_table_scorer(path: str, kb) -> TableScorer:
    table = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n\r")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise KbcError(f"{path}:{lineno}: expected 4 tab-separated fields")
            s, r, o, value = fields
            table[(kb.vocab.entity_id(s), kb.vocab.relation_id(r), kb.vocab.entity_id(o))] = float(value)
    return TableScorer(kb.n_entities, kb.n_relations, table)


def _resolve_scorer(run: Run, kb):
    args = run.args
    if args.model == "table":
        if not args.scores:
            raise UsageError("--model table requires --scores")
        if not Path(args.scores).is_file():
            raise UsageError(f"missing scores file: {args.scores}")
        return _load_table_scorer(args.scores, kb)
    if args.model == "rules":
        if not args.rules_file:
            raise UsageError("--model rules requires --rules-file")
        if not Path(args.rules_file).is_file():
            raise UsageError(f"missing rules file: {args.rules_file}")
        return load_rules(args.rules_file, kb)
    if not args.checkpoint:
        raise UsageError(f"--model {args.model} requires --checkpoint")
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"missing checkpoint: {args.checkpoint}")
    model = load_checkpoint(args.checkpoint)
    expected_kind = EMBEDDING_MODELS[args.model][0]
    if model.kind != expected_kind:
        raise UsageError(f"checkpoint holds a {model.kind} model, but --model is {args.model}")
    return model


def _dataset_name(args) -> str:
    return Path(args.dataset_dir).name or "dataset"


def _config_echo(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "command" and v is not None}


def _tuning_relations(args, kb):
    top = getattr(args, "tuning_top", None)
    return top_relations_by_frequency(kb, top) if top else None


def cmd_train(run: Run) -> None:
    args = run.args
    kb = _load_dataset(run)
    kind, norm = EMBEDDING_MODELS[args.model]
    config = TrainConfig(
        dim=args.dim,
        lr=args.lr,
        l2=args.l2,
        margin=args.margin,
        strategy=args.sampling,
        negatives=args.negatives,
        max_epochs=args.epochs,
        eval_every=args.eval_every,
        seed=args.seed,
        loss="margin" if kind == "transe" else "bce",
    )
    metric_name = {"mrr-er": "mrr_er", "map100-pr": "map100_pr"}[args.validation_metric]
    with run.phase("train"):
        result = train(
            kb, config, kind, metric_name, _tuning_relations(args, kb), norm=norm or "l1",
            parallel_workers=args.workers,
        )
    with run.phase("report"):
        save_checkpoint(result.model, run.artifact("checkpoint.kbc"))
        with open(run.artifact("train_log.jsonl"), "w", encoding="utf-8") as fh:
            for entry in result.log:
                fh.write(json.dumps(entry) + "\n")
        summary = {
            "stats": dataset_stats(kb),
            "best_metric": result.best_metric,
            "config": _config_echo(args),
        }
        write_report_json(summary, run.artifact("train_summary.json"))


def _run_pr(run: Run, kb, scorer, constraints) -> None:
    args = run.args
    with run.phase("evaluate"):
        if args.model == "rules":
            result = pr_evaluate_rules(scorer, kb, args.k)
        else:
            result = pr_evaluate(
                scorer, kb, args.k, constraints=constraints,
                block_size=args.block_size, workers=args.workers,
            )
    with run.phase("report"):
        report = pr_report(result, _config_echo(args), vocab=kb.vocab)
        write_report_json(report, run.artifact("metrics.json"))
        write_report_tsv(report, run.artifact("metrics.tsv"), args.model, _dataset_name(args))
        render_relation_bars(
            result, run.artifact("per_relation.png"), vocab=kb.vocab,
            title=f"{args.model} on {_dataset_name(args)} (pair ranking, K={args.k})",
        )


def cmd_eval(run: Run) -> None:
    args = run.args
    kb = _load_dataset(run)
    constraints = _load_constraints(run, kb)
    scorer = _resolve_scorer(run, kb)
    if args.protocol == "pr":
        _run_pr(run, kb, scorer, constraints)
        return
    if args.protocol == "er":
        with run.phase("evaluate"):
            ks = tuple(sorted({1, 3, 10, args.k}))
            result = er_evaluate(scorer, kb, ks=ks, workers=args.workers)
        with run.phase("report"):
            report = er_report(result, _config_echo(args), vocab=kb.vocab)
            write_report_json(report, run.artifact("metrics.json"))
            write_report_tsv(report, run.artifact("metrics.tsv"), args.model, _dataset_name(args))
        return
    with run.phase("evaluate"):
        rng = np.random.default_rng(args.seed)
        thresholds = tc_learn_thresholds(scorer, kb, rng)
        result = tc_evaluate(scorer, kb, thresholds, rng)
    with run.phase("report"):
        report = tc_report(result, _config_echo(args), vocab=kb.vocab)
        write_report_json(report, run.artifact("metrics.json"))
        write_report_tsv(report, run.artifact("metrics.tsv"), args.model, _dataset_name(args))


def cmd_grid(run: Run) -> None:
    args = run.args
    kb = _load_dataset(run)
    kind, norm = EMBEDDING_MODELS[args.model]
    space = default_space(kind)
    overrides: dict = {}
    if args.dims:
        overrides["dims"] = tuple(int(v) for v in args.dims.split(","))
    if args.l2s:
        overrides["l2s"] = tuple(float(v) for v in args.l2s.split(","))
    if args.lrs:
        overrides["lrs"] = tuple(float(v) for v in args.lrs.split(","))
    if args.samplings:
        overrides["strategies"] = tuple(args.samplings.split(","))
    if args.margins:
        overrides["margins"] = tuple(float(v) for v in args.margins.split(","))
    if args.epochs:
        overrides["max_epochs"] = args.epochs
    overrides["negatives"] = args.negatives
    overrides["eval_every"] = args.eval_every
    space = GridSpace(**{**space.__dict__, **overrides})
    metric_name = {"mrr-er": "mrr_er", "map100-pr": "map100_pr"}[args.validation_metric]
    with run.phase("grid"):
        best, cells = grid_search(
            kb, kind, space, metric_name, _tuning_relations(args, kb),
            seed=args.seed, norm=norm or "l1",
        )
    with run.phase("report"):
        rows = [
            {"config": cell.config.__dict__, "metric": cell.metric, "error": cell.error}
            for cell in cells
        ]
        with open(run.artifact("grid.json"), "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
            fh.write("\n")
        write_report_json({"best_config": best.__dict__}, run.artifact("best_config.json"))


def cmd_rules(run: Run) -> None:
    args = run.args
    kb = _load_dataset(run)
    with run.phase("mine"):
        model = mine_rules(
            kb, max_len=args.max_len, sample_size=args.sample_size,
            min_support=args.min_support, rng=np.random.default_rng(args.seed),
        )
    with run.phase("report"):
        save_rules(run.artifact("rules.txt"), model, kb.vocab)
        summary = {"n_rules": len(model.rules), "config": _config_echo(args)}
        write_report_json(summary, run.artifact("rules_summary.json"))


def cmd_curves(run: Run) -> None:
    args = run.args
    kb = _load_dataset(run)
    constraints = _load_constraints(run, kb)
    scorer = _resolve_scorer(run, kb)
    try:
        k_grid = [int(v) for v in args.k_grid.split(",")]
    except ValueError:
        raise UsageError(f"--k-grid must be a comma list of integers, got {args.k_grid!r}")
    if not k_grid or k_grid[0] < 1 or any(b <= a for a, b in zip(k_grid, k_grid[1:])):
        raise UsageError(f"--k-grid must be ascending positive integers, got {args.k_grid!r}")
    with run.phase("evaluate"):
        points = metric_curves(
            scorer, kb, k_grid, constraints=constraints,
            block_size=args.block_size, workers=args.workers,
            use_rules=args.model == "rules",
        )
    with run.phase("report"):
        write_curve_csv(points, run.artifact("curve.csv"))
        render_curve_figure(
            points, run.artifact("curve.png"),
            title=f"{args.model} on {_dataset_name(args)}",
        )


def cmd_typefilter_eval(run: Run) -> None:
    args = run.args
    kb = _load_dataset(run)
    constraints = _load_constraints(run, kb)
    scorer = _resolve_scorer(run, kb)
    _run_pr(run, kb, scorer, constraints)


def cmd_closure(run: Run) -> None:
    args = run.args
    kb = _load_dataset(run)
    scorer = _resolve_scorer(run, kb)
    try:
        relation = kb.vocab.relation_id(args.relation)
    except KbcError:
        raise UsageError(f"unknown relation name: {args.relation!r}")
    properties = {p for p in args.properties.split(",") if p}
    unknown = properties - {"symmetric", "transitive"}
    if unknown:
        raise UsageError(f"unknown closure properties: {sorted(unknown)}")
    if args.external_kb and not Path(args.external_kb).is_file():
        raise UsageError(f"missing external KB file: {args.external_kb}")
    with run.phase("evaluate"):
        if args.model == "rules":
            top = scorer.predict_pairs(relation, args.k, exclude=kb.pairs(relation, ("train", "valid")))
            pairs = [(i, j) for _, i, j in top]
        else:
            scan = scan_relation(
                scorer, kb, relation, args.k,
                block_size=args.block_size, workers=args.workers,
            )
            pairs = [(e.subject, e.object) for e in scan.top]
        counts = closure_analysis(
            kb, relation, pairs,
            symmetric="symmetric" in properties,
            transitive="transitive" in properties,
            external_path=args.external_kb,
        )
    with run.phase("report"):
        write_report_json(
            {
                "relation": args.relation,
                "k": args.k,
                "properties": sorted(properties),
                "test_hits": counts.test_hits,
                "implied_true_hits": counts.implied_true_hits,
                "closure_source": counts.closure_source,
                "config": _config_echo(args),
            },
            run.artifact("closure.json"),
        )


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "grid": cmd_grid,
    "rules": cmd_rules,
    "curves": cmd_curves,
    "typefilter-eval": cmd_typefilter_eval,
    "closure": cmd_closure,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    run = Run(args)
    try:
        if not Path(args.dataset_dir).is_dir():
            raise UsageError(f"dataset directory not found: {args.dataset_dir}")
        run.out_dir.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](run)
        run.write_manifest()
    except UsageError as exc:
        print(f"kbcbench: error: {exc}", file=sys.stderr)
        return 2
    except KbcError as exc:
        print(f"kbcbench: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
