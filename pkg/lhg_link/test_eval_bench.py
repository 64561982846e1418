import numpy
import pytest

from lhg_link.common import ContractError
from lhg_link.eval_bench import (
    ProbeSplit,
    ablation_table,
    build_queries,
    majority_baseline,
    map_metric,
    ndcg_metric,
    node_type_probe,
    rank_of_true,
    stratified_probe_split,
)
from lhg_link.graph_store import build_graph, split_links

CANDIDATES = numpy.arange(10)


def test_rank_of_true_extremes():
    scores = -numpy.arange(10, dtype=float)
    assert rank_of_true(CANDIDATES, scores) == 1
    assert rank_of_true(CANDIDATES, scores[::-1]) == 10


def test_ties_go_to_the_smaller_id():
    candidates = numpy.array([3, 7, 1])
    assert rank_of_true(candidates, [0.5, 0.5, 0.1]) == 1
    assert rank_of_true(numpy.array([7, 3, 1]), [0.5, 0.5, 0.1]) == 2


def test_non_finite_score_is_rejected():
    with pytest.raises(ContractError):
        rank_of_true(CANDIDATES, [numpy.nan] + [0.0] * 9)


def test_metric_closed_forms():
    assert map_metric([1, 1, 1]) == 1.0
    assert ndcg_metric([1, 1]) == 1.0
    assert map_metric([2]) == pytest.approx(0.5)
    assert ndcg_metric([2]) == pytest.approx(1.0 / numpy.log2(3.0))
    assert map_metric([1, 10]) == pytest.approx(0.55)
    with pytest.raises(ContractError):
        map_metric([])


def _sparse_graph():
    edges = [(i, (i + 1) % 20) for i in range(20)] + [(0, 10), (5, 15)]
    return build_graph(20, numpy.array(edges))


def test_queries_have_ten_distinct_candidates():
    g = _sparse_graph()
    split = split_links(g, (0.8, 0.1, 0.1), seed=1)
    queries = build_queries(split, seed=2)
    assert len(queries) == split.test_edges.shape[0]
    for q in queries:
        assert len(set(q.candidates.tolist())) == 10
        assert q.anchor < q.true
        assert all(not g.has_edge(q.anchor, c) for c in q.negatives)
    assert build_queries(split, seed=2) == queries


def test_queries_need_enough_negatives():
    star = build_graph(9, numpy.array([(0, leaf) for leaf in range(1, 9)]))
    split = split_links(star, (0.5, 0.0, 0.5), seed=0)
    with pytest.raises(ContractError, match="Anchor 0"):
        build_queries(split, seed=0)
    with pytest.raises(ContractError):
        build_queries(split, seed=0, which="val")


def test_probe_on_separable_embeddings():
    rng = numpy.random.default_rng(0)
    labels = numpy.array(["author"] * 20 + ["paper"] * 20, dtype=object)
    H = rng.normal(size=(40, 4)) + numpy.where(labels == "author", 3.0, -3.0)[:, None]
    S = rng.normal(size=(40, 2))
    result = node_type_probe(H, S, labels, stratified_probe_split(labels, seed=1))
    assert result.accuracy == 1.0
    assert result.macro_f == 1.0


def test_majority_baseline_on_imbalanced_labels():
    labels = numpy.array(["a"] * 78 + ["b"] * 22, dtype=object)
    everything = numpy.arange(100)
    result = majority_baseline(labels, ProbeSplit(train_nodes=everything, test_nodes=everything))
    assert result.accuracy == pytest.approx(0.78)
    # F1 of the majority class is 2 * 0.78 / 1.78, the other class scores 0
    assert result.macro_f == pytest.approx(0.78 / 1.78)
    assert result.macro_f == pytest.approx(0.438, abs=1e-3)


def test_stratified_split_is_disjoint_and_proportional():
    labels = numpy.array(["x"] * 10 + ["y"] * 5 + [None] * 3, dtype=object)
    split = stratified_probe_split(labels, seed=4)
    assert not set(split.train_nodes) & set(split.test_nodes)
    assert sorted(labels[split.train_nodes].tolist()) == ["x"] * 6 + ["y"] * 3
    assert set(split.test_nodes) | set(split.train_nodes) == set(range(15))


def test_missing_training_class_is_an_error():
    labels = numpy.array(["x", "x", "y"], dtype=object)
    with pytest.raises(ContractError):
        node_type_probe(numpy.eye(3), numpy.eye(3), labels, ProbeSplit(numpy.array([0, 1]), numpy.array([2])))


def test_ablation_table_summarises_seeds():
    reports = [
        {"variant": "full", "seed": 0, "map": 0.5, "ndcg": 0.6},
        {"variant": "full", "seed": 1, "map": 0.7, "ndcg": 0.8},
        {"variant": "neither", "seed": 0, "map": 0.4, "ndcg": 0.5},
    ]
    table = ablation_table(reports)
    assert table.loc["full", "map"] == "0.6000 ± 0.1000"
    assert table.loc["full", "seeds"] == 2
    assert table.loc["neither", "map_mean"] == pytest.approx(0.4)
