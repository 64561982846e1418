import math

import numpy
import pytest
from scipy import stats

from lhg_link.common import ConfigurationError
from lhg_link.graph_store import build_graph
from lhg_link.path_sampler import (
    TRUNCATE_ALL_PREFIXES,
    Path,
    build_context_set,
    decay_weight,
    load_path_cache,
    sample_context_sets,
    sample_walks,
    self_loop,
    truncate,
)


def test_walks_on_a_path_graph_are_forced():
    g = build_graph(3, numpy.array([(0, 1), (1, 2)]))
    walks = sample_walks(g, 1, 20, 1, numpy.random.default_rng(0))
    assert len(walks) == 20
    assert all(list(w) in ([1, 0], [1, 2]) for w in walks)


def test_isolated_node_only_has_the_self_loop():
    g = build_graph(3, numpy.array([(0, 1)]))
    assert sample_walks(g, 2, 5, 3, numpy.random.default_rng(0)) == []
    ctx = build_context_set(g, 2, 5, 3, numpy.random.default_rng(0))
    assert ctx.paths == (self_loop(2),)


def test_truncate_keeps_a_prefix():
    path = truncate([1, 0, 2], numpy.random.default_rng(0))
    assert path.nodes == (1, 0, 2)[: path.length + 1]
    assert 1 <= path.length <= 2
    single = truncate([4, 5], numpy.random.default_rng(0))
    assert single.nodes == (4, 5) and single.length == 1


def test_truncated_lengths_are_uniform():
    rng = numpy.random.default_rng(1)
    lengths = [truncate([0, 1, 0, 1, 0], rng).length for _ in range(10000)]
    counts = numpy.bincount(lengths, minlength=5)[1:]
    assert stats.chisquare(counts).pvalue > 0.01


def test_single_neighbour_context_set():
    g = build_graph(2, numpy.array([(0, 1)]))
    ctx = build_context_set(g, 0, 3, 1, numpy.random.default_rng(0))
    assert ctx.paths[0].is_self_loop
    assert [p.nodes for p in ctx.paths[1:]] == [(0, 1)] * 3
    assert [p.terminal for p in ctx.paths[1:]] == [1, 1, 1]


def test_context_sets_are_walk_valid(toy_graph):
    for ctx in sample_context_sets(toy_graph, 5, 3, seed=2):
        assert len(ctx.paths) == 6
        assert sum(p.is_self_loop for p in ctx.paths) == 1
        for p in ctx.paths[1:]:
            assert p.start == ctx.target
            assert 1 <= p.length <= 3 and len(p.nodes) == p.length + 1
            for u, v in zip(p.nodes, p.nodes[1:]):
                assert toy_graph.has_edge(u, v)


def test_context_sets_ignore_worker_count(toy_graph):
    single = sample_context_sets(toy_graph, 5, 3, seed=9, workers=1)
    pooled = sample_context_sets(toy_graph, 5, 3, seed=9, workers=3)
    assert [c.paths for c in single] == [c.paths for c in pooled]


def test_all_prefixes_mode(toy_graph):
    ctx = sample_context_sets(toy_graph, 4, 3, seed=0, truncation=TRUNCATE_ALL_PREFIXES)[0]
    assert len(ctx.paths) == 1 + 4 * 3


def test_decay_weights():
    assert decay_weight(self_loop(0), 0.1) == 1.0
    assert decay_weight(Path(nodes=(0, 1, 2), length=2), 0.1) == pytest.approx(math.exp(-0.2))
    weights = [decay_weight(Path(nodes=tuple(range(n + 1)), length=n), 0.3) for n in range(1, 5)]
    assert all(a > b for a, b in zip(weights, weights[1:]))
    with pytest.raises(ConfigurationError):
        decay_weight(self_loop(0), 0.0)


def test_path_cache_reloads_the_same_paths(toy_graph, tmp_path):
    from lhg_link.path_sampler import save_path_cache

    context_sets = sample_context_sets(toy_graph, 5, 3, seed=4)
    save_path_cache(context_sets, tmp_path, 4, 5, 3)
    reloaded = load_path_cache(tmp_path, 4, 5, 3)
    assert [c.paths for c in reloaded] == [c.paths for c in context_sets]
    assert load_path_cache(tmp_path, 5, 5, 3) is None
