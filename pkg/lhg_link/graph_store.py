"""
Loading, splitting and sampling of latent heterogeneous graphs.

Typical preparation steps::

    1. Read a `head<TAB>tail` edge list, optionally with node features and
       node type labels (labels are only ever read by the node type probe).
       Use::

        -> load_edge_list()

    2. Optionally cut a breadth-first subgraph for desk-scale experiments.
       Use::

        -> bfs_subgraph()

    3. Split the links into train/val/test and rebuild the training graph
       from the training links only. Use::

        -> split_links()

    4. Draw (anchor, positive, negative) training triplets. Use::

        -> sample_triplets()

"""
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, FrozenSet, List, NamedTuple, Optional, Sequence, Tuple

import numpy
import pandas

from lhg_link.common import (
    ConfigurationError,
    ContractError,
    GraphParseError,
    ID_MAP_FILE_NAME,
    MANIFEST_FILE_NAME,
    SPLIT_FILE_NAMES,
    derive_rng,
    iter_data_lines,
    read_json,
    write_json,
)

logger = logging.getLogger(__name__)

MAX_NEGATIVE_REJECTIONS = 100


@dataclass(frozen=True, eq=False)
class Graph:
    """
    Immutable undirected graph over dense node ids [0, node_count).

    `edges` holds each undirected edge once as (u, v) with u < v, sorted.
    `probe_labels` is kept out of every model code path; only the node type
    probe in eval_bench reads it.

    """

    node_count: int
    edges: numpy.ndarray
    adjacency: Tuple[numpy.ndarray, ...]
    features: Optional[numpy.ndarray] = None
    node_ids: Tuple[str, ...] = ()
    edge_provenance: Optional[Tuple[str, ...]] = field(default=None, repr=False)
    probe_labels: Optional[numpy.ndarray] = field(default=None, repr=False)

    @property
    def edge_count(self) -> int:
        return int(self.edges.shape[0])

    @cached_property
    def edge_keys(self) -> FrozenSet[int]:
        n = self.node_count
        return frozenset(int(u) * n + int(v) for u, v in self.edges)

    @cached_property
    def degrees(self) -> numpy.ndarray:
        return numpy.array([len(neighbours) for neighbours in self.adjacency], dtype=numpy.int64)

    def has_edge(self, u: int, v: int) -> bool:
        if u > v:
            u, v = v, u
        return u * self.node_count + v in self.edge_keys

    @cached_property
    def csr(self) -> Tuple[numpy.ndarray, numpy.ndarray]:
        """(offsets, neighbours) view of the adjacency for vectorised walks."""
        offsets = numpy.zeros(self.node_count + 1, dtype=numpy.int64)
        offsets[1:] = numpy.cumsum(self.degrees)
        if self.node_count == 0:
            return offsets, numpy.zeros(0, dtype=numpy.int64)
        return offsets, numpy.concatenate(self.adjacency).astype(numpy.int64)

    def neighbours(self, v: int) -> numpy.ndarray:
        return self.adjacency[v]


class LinkSplit(NamedTuple):
    train_edges: numpy.ndarray
    val_edges: numpy.ndarray
    test_edges: numpy.ndarray
    train_graph: Graph
    full_graph: Graph
    ratios: Tuple[float, float, float]
    seed: int


class Triplet(NamedTuple):
    a: int
    b: int
    c: int


def _canonical_edges(edges: numpy.ndarray, node_count: int) -> Tuple[numpy.ndarray, numpy.ndarray]:
    """Returns (unique canonical edges, index of first occurrence in the input)."""
    edges = numpy.asarray(edges, dtype=numpy.int64).reshape(-1, 2)
    if edges.shape[0] == 0:
        return numpy.zeros((0, 2), dtype=numpy.int64), numpy.zeros(0, dtype=numpy.int64)
    low = numpy.minimum(edges[:, 0], edges[:, 1])
    high = numpy.maximum(edges[:, 0], edges[:, 1])
    keep = low != high
    keys = low * max(node_count, 1) + high
    keys = numpy.where(keep, keys, -1)
    unique_keys, first_index = numpy.unique(keys, return_index=True)
    valid = unique_keys >= 0
    first_index = first_index[valid]
    canonical = numpy.stack([low[first_index], high[first_index]], axis=1)
    return canonical, first_index


def build_graph(
    node_count: int,
    edges: numpy.ndarray,
    features: Optional[numpy.ndarray] = None,
    node_ids: Optional[Sequence[str]] = None,
    edge_provenance: Optional[Sequence[str]] = None,
    probe_labels: Optional[numpy.ndarray] = None,
) -> Graph:
    """
    Symmetrises, deduplicates and drops self-loops, then builds sorted
    adjacency arrays. Provenance strings follow the first occurrence of each
    edge.

    """
    edges = numpy.asarray(edges, dtype=numpy.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= node_count):
        raise ContractError(f"Edge endpoint outside [0, {node_count}).")
    self_loops = int(numpy.sum(edges[:, 0] == edges[:, 1])) if edges.size else 0
    if self_loops:
        logger.info("Dropped %d self-loop edge(s) from the input.", self_loops)
    canonical, first_index = _canonical_edges(edges, node_count)

    heads = numpy.concatenate([canonical[:, 0], canonical[:, 1]])
    tails = numpy.concatenate([canonical[:, 1], canonical[:, 0]])
    order = numpy.lexsort((tails, heads))
    heads, tails = heads[order], tails[order]
    boundaries = numpy.searchsorted(heads, numpy.arange(node_count + 1))
    adjacency = tuple(
        tails[boundaries[v] : boundaries[v + 1]].copy() for v in range(node_count)
    )

    provenance = None
    if edge_provenance is not None:
        provenance = tuple(edge_provenance[i] for i in first_index)
    if features is not None:
        features = numpy.asarray(features, dtype=numpy.float64)
        if features.shape[0] != node_count:
            raise ContractError(
                f"Feature matrix has {features.shape[0]} rows for {node_count} nodes."
            )
    if node_ids is None:
        node_ids = [str(i) for i in range(node_count)]
    return Graph(
        node_count=int(node_count),
        edges=canonical,
        adjacency=adjacency,
        features=features,
        node_ids=tuple(node_ids),
        edge_provenance=provenance,
        probe_labels=probe_labels,
    )


def load_features(feature_path: Path) -> numpy.ndarray:
    """
    Reads a node feature matrix, row i belonging to node i.

    `.npy` files are loaded directly. Text files start with a header line
    `<rows> <cols>` followed by one whitespace separated row per node.

    """
    if feature_path.suffix == ".npy":
        return numpy.asarray(numpy.load(str(feature_path)), dtype=numpy.float64)
    with open(str(feature_path), "r", encoding="utf-8") as f:
        header = f.readline().split()
    if len(header) != 2:
        raise GraphParseError(feature_path, 1, "header must declare '<rows> <cols>'")
    try:
        rows, cols = int(header[0]), int(header[1])
    except ValueError:
        raise GraphParseError(feature_path, 1, "header must declare '<rows> <cols>'")
    if rows == 0:
        return numpy.zeros((0, cols), dtype=numpy.float64)
    df = pandas.read_csv(
        str(feature_path), sep=r"\s+", header=None, skiprows=1, dtype=numpy.float64
    )
    if df.shape != (rows, cols):
        raise GraphParseError(
            feature_path, 1, f"header declares {rows}x{cols} but file holds {df.shape[0]}x{df.shape[1]}"
        )
    return df.to_numpy(dtype=numpy.float64)


def load_labels(label_path: Path, id_lookup: Dict[str, int], node_count: int) -> numpy.ndarray:
    """
    Reads `node_id<TAB>type_label` lines. Nodes without a line get None.

    """
    labels = numpy.full(node_count, None, dtype=object)
    for line_number, line in iter_data_lines(label_path):
        parts = line.split("\t")
        if len(parts) < 2:
            raise GraphParseError(label_path, line_number, "expected 'node_id<TAB>type_label'")
        node = id_lookup.get(parts[0].strip())
        if node is None:
            logger.warning("Label for unknown node %s ignored (%s:%d).", parts[0], label_path, line_number)
            continue
        labels[node] = parts[1].strip()
    return labels


def _sorted_ids(raw_ids: Sequence[str]) -> List[str]:
    distinct = set(raw_ids)
    if all(x.lstrip("-").isdigit() and str(int(x)) == x for x in distinct):
        return [str(x) for x in sorted(int(x) for x in distinct)]
    return sorted(distinct)


def load_edge_list(
    path: Path,
    feature_path: Optional[Path] = None,
    label_path: Optional[Path] = None,
    id_map_path: Optional[Path] = None,
) -> Graph:
    """
    Loads a `head<TAB>tail[<TAB>edge_type]` file into a Graph.

    Without features, node ids may be arbitrary strings; they are mapped to
    a dense range in sorted order (numeric order when every id is an
    integer). When the ids are not already 0..n-1 the mapping is written to
    `id_map_path` if one is given.

    With features, node i is row i of the feature matrix and every id in the
    edge file must be an integer row index.

    The optional third column is kept as provenance only.

    """
    raw_heads: List[str] = []
    raw_tails: List[str] = []
    raw_types: List[str] = []
    has_types = False
    for line_number, line in iter_data_lines(path):
        parts = line.split("\t")
        if len(parts) < 2 or parts[0].strip() == "" or parts[1].strip() == "":
            raise GraphParseError(path, line_number, f"expected 'head<TAB>tail', got {line!r}")
        raw_heads.append(parts[0].strip())
        raw_tails.append(parts[1].strip())
        if len(parts) > 2:
            has_types = True
            raw_types.append(parts[2].strip())
        else:
            raw_types.append("")

    features = None
    if feature_path is not None:
        features = load_features(feature_path)
        node_count = features.shape[0]
        node_ids = [str(i) for i in range(node_count)]
        id_lookup = {node_id: i for i, node_id in enumerate(node_ids)}
        for line_number, (head, tail) in enumerate(zip(raw_heads, raw_tails), start=1):
            if head not in id_lookup or tail not in id_lookup:
                raise GraphParseError(
                    path, line_number, f"node id outside the {node_count} feature rows: {head}, {tail}"
                )
    else:
        node_ids = _sorted_ids(raw_heads + raw_tails)
        node_count = len(node_ids)
        id_lookup = {node_id: i for i, node_id in enumerate(node_ids)}
        identity = all(node_id == str(i) for i, node_id in enumerate(node_ids))
        if not identity:
            logger.info("Remapped %d node ids to a dense range.", node_count)
            if id_map_path is not None:
                save_id_map(node_ids, id_map_path)

    edges = numpy.array(
        [[id_lookup[h], id_lookup[t]] for h, t in zip(raw_heads, raw_tails)],
        dtype=numpy.int64,
    ).reshape(-1, 2)
    labels = None
    if label_path is not None:
        labels = load_labels(label_path, id_lookup, node_count)
    return build_graph(
        node_count=node_count,
        edges=edges,
        features=features,
        node_ids=node_ids,
        edge_provenance=raw_types if has_types else None,
        probe_labels=labels,
    )


def save_id_map(node_ids: Sequence[str], dst_path: Path):
    dst_path.parent.mkdir(parents=True, exist_ok=True)
    with open(str(dst_path), "w", encoding="utf-8") as f_out:
        for dense_id, node_id in enumerate(node_ids):
            f_out.write(f"{dense_id}\t{node_id}\n")


def _sort_edges(edges: numpy.ndarray) -> numpy.ndarray:
    if edges.shape[0] == 0:
        return edges.reshape(0, 2)
    order = numpy.lexsort((edges[:, 1], edges[:, 0]))
    return edges[order]


def _rebuild(g: Graph, edges: numpy.ndarray) -> Graph:
    return build_graph(
        node_count=g.node_count,
        edges=edges,
        features=g.features,
        node_ids=g.node_ids,
        probe_labels=g.probe_labels,
    )


def split_links(
    g: Graph,
    ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> LinkSplit:
    """
    Random train/val/test partition of the links. Split sizes are
    floor(ratio * |E|) for train and val; test takes the remainder. The
    training graph is rebuilt from the training links only.

    """
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ConfigurationError(f"ratios must be three non-negative fractions, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError(f"ratios must sum to 1, got {ratios} (sum {sum(ratios)})")

    m = g.edge_count
    permutation = derive_rng(seed, "split").permutation(m)
    n_train = min(m, int(math.floor(ratios[0] * m + 1e-9)))
    n_val = min(m - n_train, int(math.floor(ratios[1] * m + 1e-9)))
    train_edges = _sort_edges(g.edges[permutation[:n_train]])
    val_edges = _sort_edges(g.edges[permutation[n_train : n_train + n_val]])
    test_edges = _sort_edges(g.edges[permutation[n_train + n_val :]])
    return LinkSplit(
        train_edges=train_edges,
        val_edges=val_edges,
        test_edges=test_edges,
        train_graph=_rebuild(g, train_edges),
        full_graph=g,
        ratios=tuple(float(r) for r in ratios),
        seed=int(seed),
    )


def check_split_is_partition(split: LinkSplit):
    n = split.full_graph.node_count
    parts = [
        set((split.train_edges[:, 0] * n + split.train_edges[:, 1]).tolist()),
        set((split.val_edges[:, 0] * n + split.val_edges[:, 1]).tolist()),
        set((split.test_edges[:, 0] * n + split.test_edges[:, 1]).tolist()),
    ]
    assert len(parts[0] & parts[1]) == 0
    assert len(parts[0] & parts[2]) == 0
    assert len(parts[1] & parts[2]) == 0
    assert sum(len(p) for p in parts) == split.full_graph.edge_count


def _draw_negative(full_graph: Graph, a: int, rng: numpy.random.Generator) -> int:
    n = full_graph.node_count
    for _ in range(MAX_NEGATIVE_REJECTIONS):
        c = int(rng.integers(0, n))
        if c != a and not full_graph.has_edge(a, c):
            return c
    logger.warning(
        "No negative found for anchor %d after %d draws; accepting any node other than the anchor.",
        a,
        MAX_NEGATIVE_REJECTIONS,
    )
    c = int(rng.integers(0, n - 1))
    return c + 1 if c >= a else c


def sample_triplets(
    split: LinkSplit,
    batch_size: int,
    rng: numpy.random.Generator,
) -> List[Triplet]:
    """
    Draws `batch_size` triplets. (a, b) is a uniformly drawn training edge in
    a random orientation; c is uniform over all nodes, redrawn while c == a or
    (a, c) is an edge of the FULL graph.

    """
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")
    m = split.train_edges.shape[0]
    if m == 0:
        raise ContractError("Cannot sample triplets: the training split has no edges.")
    if split.full_graph.node_count < 2:
        raise ContractError("Cannot sample triplets from a graph with fewer than 2 nodes.")

    edge_index = rng.integers(0, m, size=batch_size)
    flip = rng.integers(0, 2, size=batch_size)
    triplets = []
    for i, f in zip(edge_index, flip):
        u, v = split.train_edges[i]
        a, b = (int(v), int(u)) if f else (int(u), int(v))
        c = _draw_negative(split.full_graph, a, rng)
        triplets.append(Triplet(a=a, b=b, c=c))
    return triplets


def triplets_to_array(triplets: Sequence[Triplet]) -> numpy.ndarray:
    return numpy.array([[t.a, t.b, t.c] for t in triplets], dtype=numpy.int64).reshape(-1, 3)


def bfs_subgraph(g: Graph, target_nodes: int, seed: int = 0) -> Graph:
    """
    Breadth-first sample of `target_nodes` nodes starting at a seeded random
    node, restarting from a fresh random node whenever a component runs out.
    The induced subgraph is re-densified in ascending original order.

    """
    if target_nodes >= g.node_count:
        return g
    rng = derive_rng(seed, "bfs")
    visited = numpy.zeros(g.node_count, dtype=bool)
    selected: List[int] = []
    queue: deque = deque()
    while len(selected) < target_nodes:
        if not queue:
            unvisited = numpy.flatnonzero(~visited)
            start = int(unvisited[rng.integers(0, unvisited.shape[0])])
            visited[start] = True
            queue.append(start)
        v = queue.popleft()
        selected.append(v)
        for u in g.adjacency[v]:
            if not visited[u]:
                visited[u] = True
                queue.append(int(u))

    nodes = numpy.sort(numpy.array(selected, dtype=numpy.int64))
    new_index = numpy.full(g.node_count, -1, dtype=numpy.int64)
    new_index[nodes] = numpy.arange(nodes.shape[0])
    mask = (new_index[g.edges[:, 0]] >= 0) & (new_index[g.edges[:, 1]] >= 0)
    edges = new_index[g.edges[mask]]
    return build_graph(
        node_count=int(nodes.shape[0]),
        edges=edges,
        features=None if g.features is None else g.features[nodes],
        node_ids=[g.node_ids[i] for i in nodes],
        probe_labels=None if g.probe_labels is None else g.probe_labels[nodes],
    )


def graph_statistics(g: Graph, split: Optional[LinkSplit] = None, name: str = "graph") -> pandas.DataFrame:
    row = {
        "Nodes": g.node_count,
        "Edges": g.edge_count,
        "Features": 0 if g.features is None else int(g.features.shape[1]),
    }
    if split is not None:
        row["Train"] = int(split.train_edges.shape[0])
        row["Val"] = int(split.val_edges.shape[0])
        row["Test"] = int(split.test_edges.shape[0])
    return pandas.DataFrame({name: row}).transpose()


def _write_edges(edges: numpy.ndarray, node_ids: Sequence[str], dst_path: Path):
    with open(str(dst_path), "w", encoding="utf-8") as f_out:
        for u, v in edges:
            f_out.write(f"{node_ids[u]}\t{node_ids[v]}\n")


def save_split(split: LinkSplit, dst_dir: Path, extra: Optional[Dict] = None) -> Dict:
    """
    Writes the three split files in original ids, the id map and a manifest.
    Output is byte-identical for the same graph, ratios and seed.

    """
    dst_dir.mkdir(parents=True, exist_ok=True)
    g = split.full_graph
    for name, edges in (
        ("train", split.train_edges),
        ("val", split.val_edges),
        ("test", split.test_edges),
    ):
        _write_edges(edges, g.node_ids, dst_dir / SPLIT_FILE_NAMES[name])
    save_id_map(g.node_ids, dst_dir / ID_MAP_FILE_NAME)
    manifest = {
        "ratios": list(split.ratios),
        "seed": split.seed,
        "nodes": g.node_count,
        "edges": g.edge_count,
        "train": int(split.train_edges.shape[0]),
        "val": int(split.val_edges.shape[0]),
        "test": int(split.test_edges.shape[0]),
    }
    if extra:
        manifest.update(extra)
    write_json(manifest, dst_dir / MANIFEST_FILE_NAME)
    return manifest


def _read_edges(src_path: Path, id_lookup: Dict[str, int]) -> numpy.ndarray:
    rows = []
    for line_number, line in iter_data_lines(src_path):
        parts = line.split("\t")
        try:
            rows.append([id_lookup[parts[0]], id_lookup[parts[1]]])
        except (IndexError, KeyError):
            raise GraphParseError(src_path, line_number, "edge refers to an unknown node id")
    return _sort_edges(numpy.array(rows, dtype=numpy.int64).reshape(-1, 2))


def load_split(src_dir: Path, g: Graph) -> LinkSplit:
    manifest = read_json(src_dir / MANIFEST_FILE_NAME)
    id_lookup = {node_id: i for i, node_id in enumerate(g.node_ids)}
    train_edges = _read_edges(src_dir / SPLIT_FILE_NAMES["train"], id_lookup)
    val_edges = _read_edges(src_dir / SPLIT_FILE_NAMES["val"], id_lookup)
    test_edges = _read_edges(src_dir / SPLIT_FILE_NAMES["test"], id_lookup)
    return LinkSplit(
        train_edges=train_edges,
        val_edges=val_edges,
        test_edges=test_edges,
        train_graph=_rebuild(g, train_edges),
        full_graph=g,
        ratios=tuple(manifest["ratios"]),
        seed=int(manifest["seed"]),
    )
