import numpy
import pytest

from lhg_link.graph_store import build_graph

TOY_EDGES = [(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (4, 5), (1, 5)]


@pytest.fixture
def toy_graph():
    """6 nodes, 7 edges, 5-dimensional Gaussian features."""
    features = numpy.random.default_rng(11).normal(size=(6, 5))
    return build_graph(6, numpy.array(TOY_EDGES), features=features)


@pytest.fixture
def ring_graph():
    """12-node ring, 6-dimensional Gaussian features; every node keeps 9 non-neighbours."""
    edges = [(i, (i + 1) % 12) for i in range(12)]
    features = numpy.random.default_rng(5).normal(size=(12, 6))
    return build_graph(12, numpy.array(edges), features=features)
