import json

import pytest

import synthkb
from kbcbench.evaluation import CurvePoint, pr_evaluate
from kbcbench.report import (
    pr_report,
    read_report_tsv,
    render_curve_figure,
    render_relation_bars,
    write_curve_csv,
    write_report_json,
    write_report_tsv,
)
from kbcbench.scorers import TableScorer


@pytest.fixture
def pr_result(rng):
    kb, table = synthkb.random_table_kb(rng)
    scorer = TableScorer(kb.n_entities, kb.n_relations, table)
    return pr_evaluate(scorer, kb, k=10)


def test_empty_per_relation_list_is_valid_json(tmp_path):
    from kbcbench.evaluation import PRResult

    report = pr_report(PRResult(5, 0.0, 0.0, []), {"seed": 1})
    path = tmp_path / "m.json"
    write_report_json(report, path)
    parsed = json.loads(path.read_text())
    assert parsed["per_relation"] == []


def test_serialization_deterministic(tmp_path, pr_result):
    report = pr_report(pr_result, {"seed": 1})
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    write_report_json(report, a)
    write_report_json(report, b)
    assert a.read_bytes() == b.read_bytes()


def test_tsv_four_decimal_places_and_parse_back(tmp_path, pr_result):
    report = pr_report(pr_result, {"seed": 1})
    path = tmp_path / "m.tsv"
    write_report_tsv(report, path, "distmult", "toy")
    line = path.read_text().splitlines()[1]
    model, dataset, protocol, *values = line.split("\t")
    assert (model, dataset, protocol) == ("distmult", "toy", "pr")
    for v in values:
        whole, frac = v.split(".")
        assert len(frac) == 4
    parsed = read_report_tsv(path)
    for name, value in report["metrics"].items():
        assert parsed[name] == pytest.approx(value, abs=5e-5)


def test_curve_csv_format(tmp_path):
    points = [CurvePoint(10, 0.5, 0.25), CurvePoint(100, 0.75, 0.5)]
    path = tmp_path / "c.csv"
    write_curve_csv(points, path)
    assert path.read_text() == "K,hits_at_k,map_at_k\n10,0.5000,0.2500\n100,0.7500,0.5000\n"


def test_figures_rendered(tmp_path, pr_result):
    curve_path = tmp_path / "c.png"
    render_curve_figure([CurvePoint(1, 0.1, 0.05), CurvePoint(100, 0.9, 0.6)], curve_path, title="t")
    assert curve_path.stat().st_size > 0
    bars_path = tmp_path / "b.png"
    render_relation_bars(pr_result, bars_path, title="t")
    assert bars_path.stat().st_size > 0
