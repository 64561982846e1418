"""
TransE baselines, with and without K-means pseudo types.

Pseudo types: nodes are clustered into K groups and the type of a pair
(x, y) is type(x) * K + type(y). TransE then learns one translation per
pair type (a single one when K = 1) and scores d(x, y) = ||h_x + r - h_y||
with the same hinge loss as the main model.

"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy
from scipy.spatial.distance import cdist

from lhg_link import diff_engine as de
from lhg_link.common import ConfigurationError, GraphParseError, derive_rng, iter_data_lines
from lhg_link.eval_bench import EvalQuery, rank_queries, ranking_metrics
from lhg_link.graph_store import Graph, LinkSplit, sample_triplets, triplets_to_array
from lhg_link.link_model import distance, score_values
from lhg_link.trainer import OptimizerState, TrainConfig, optimizer_step

logger = logging.getLogger(__name__)

KMEANS_MAX_ITERATIONS = 100
KMEANS_TOLERANCE = 1e-6


class PseudoTypes(NamedTuple):
    k: int
    node_type: numpy.ndarray

    def pair_type(self, x, y) -> numpy.ndarray:
        """Cartesian-product type id of (x, y); vectorised over arrays."""
        return self.node_type[x] * self.k + self.node_type[y]

    def edge_types(self, edges: numpy.ndarray) -> numpy.ndarray:
        return self.pair_type(edges[:, 0], edges[:, 1])


def single_type(node_count: int) -> PseudoTypes:
    return PseudoTypes(k=1, node_type=numpy.zeros(node_count, dtype=numpy.int64))


def baseline_name(k: int) -> str:
    return "TransE" if k == 1 else f"TransE-{k}"


class KMeansResult(NamedTuple):
    pseudo_types: PseudoTypes
    centroids: numpy.ndarray
    inertia: List[float]


def _kmeans_plus_plus(X: numpy.ndarray, k: int, rng: numpy.random.Generator) -> numpy.ndarray:
    centroids = [X[int(rng.integers(0, X.shape[0]))]]
    closest = cdist(X, numpy.array(centroids), "sqeuclidean").min(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            index = int(rng.choice(X.shape[0], p=closest / total))
        else:
            index = int(rng.integers(0, X.shape[0]))
        centroids.append(X[index])
        closest = numpy.minimum(closest, cdist(X, X[index : index + 1], "sqeuclidean")[:, 0])
    return numpy.array(centroids, dtype=numpy.float64)


def kmeans(
    X: numpy.ndarray,
    k: int,
    seed: int,
    max_iterations: int = KMEANS_MAX_ITERATIONS,
    tolerance: float = KMEANS_TOLERANCE,
) -> KMeansResult:
    """
    Lloyd's algorithm from k-means++ seeds. Stops after `max_iterations` or
    once no centroid moves by more than `tolerance`. An empty cluster is
    reseeded at the point farthest from its current centroid.

    """
    X = numpy.asarray(X, dtype=numpy.float64)
    if k < 1:
        raise ConfigurationError(f"K must be >= 1, got {k}")
    if k > X.shape[0]:
        raise ConfigurationError(f"K={k} exceeds the {X.shape[0]} points to cluster")
    rng = derive_rng(seed, "kmeans")
    centroids = _kmeans_plus_plus(X, k, rng)
    inertia: List[float] = []
    assignment = numpy.zeros(X.shape[0], dtype=numpy.int64)
    for iteration in range(max_iterations):
        distances = cdist(X, centroids, "sqeuclidean")
        assignment = numpy.argmin(distances, axis=1)
        point_cost = distances[numpy.arange(X.shape[0]), assignment]
        inertia.append(float(point_cost.sum()))
        updated = centroids.copy()
        for cluster in range(k):
            members = assignment == cluster
            if numpy.any(members):
                updated[cluster] = X[members].mean(axis=0)
            else:
                farthest = int(numpy.argmax(point_cost))
                logger.warning(
                    "Cluster %d is empty at iteration %d; reseeding at point %d.", cluster, iteration, farthest
                )
                updated[cluster] = X[farthest]
                point_cost[farthest] = 0.0
        shift = float(numpy.max(numpy.linalg.norm(updated - centroids, axis=1)))
        centroids = updated
        if shift < tolerance:
            break
    distances = cdist(X, centroids, "sqeuclidean")
    assignment = numpy.argmin(distances, axis=1)
    return KMeansResult(
        pseudo_types=PseudoTypes(k=k, node_type=assignment.astype(numpy.int64)),
        centroids=centroids,
        inertia=inertia,
    )


def save_pseudo_types(pseudo_types: PseudoTypes, node_ids: Sequence[str], dst_path: Path):
    dst_path.parent.mkdir(parents=True, exist_ok=True)
    with open(str(dst_path), "w", encoding="utf-8") as f_out:
        for node_id, cluster in zip(node_ids, pseudo_types.node_type):
            f_out.write(f"{node_id}\t{int(cluster)}\n")


def load_pseudo_types(src_path: Path, node_ids: Sequence[str], k: Optional[int] = None) -> PseudoTypes:
    """`k` defaults to the largest cluster id + 1; pass it when trailing clusters may be empty."""
    id_lookup = {node_id: i for i, node_id in enumerate(node_ids)}
    node_type = numpy.full(len(node_ids), -1, dtype=numpy.int64)
    for line_number, line in iter_data_lines(src_path):
        parts = line.split("\t")
        if len(parts) != 2 or parts[0] not in id_lookup:
            raise GraphParseError(src_path, line_number, "expected 'node_id<TAB>cluster_id' for a known node")
        try:
            node_type[id_lookup[parts[0]]] = int(parts[1])
        except ValueError:
            raise GraphParseError(src_path, line_number, f"cluster id is not an integer: {parts[1]}")
    if numpy.any(node_type < 0):
        raise ConfigurationError(f"{str(src_path)} does not cover every node")
    if k is None:
        k = int(node_type.max()) + 1
    elif node_type.max() >= k:
        raise ConfigurationError(f"{str(src_path)} has cluster ids beyond K={k}")
    return PseudoTypes(k=k, node_type=node_type)


@dataclass(frozen=True)
class TransEConfig:
    dim: int = 200
    margin: float = 0.2
    learning_rate: float = 0.005
    epochs: int = 100
    batch_size: int = 256
    steps_per_epoch: int = 0
    optimizer: str = "adam"
    seed: int = 0

    @classmethod
    def from_train_config(cls, config: TrainConfig) -> "TransEConfig":
        return cls(
            dim=config.transe_dim,
            margin=config.transe_margin,
            learning_rate=config.transe_learning_rate,
            epochs=config.transe_epochs,
            batch_size=config.transe_batch_size,
            steps_per_epoch=config.steps_per_epoch,
            optimizer=config.optimizer,
            seed=config.seed,
        )


@dataclass
class TransEParams:
    entity: numpy.ndarray
    relation: numpy.ndarray
    pseudo_types: PseudoTypes
    seen_relations: numpy.ndarray
    losses: List[float] = field(default_factory=list)


def _normalize_rows(x: numpy.ndarray) -> numpy.ndarray:
    norms = numpy.linalg.norm(x, axis=1, keepdims=True)
    return numpy.where(norms > 0, x / numpy.where(norms > 0, norms, 1.0), 0.0)


def init_transe_params(
    node_count: int, pseudo_types: PseudoTypes, train_edges: numpy.ndarray, dim: int, rng
) -> TransEParams:
    """
    Uniform(+-6/sqrt(dim)) entities and relations, rows normalised. Pair
    types that no training edge realises (in either orientation) start at
    zero and stay frozen.

    """
    bound = 6.0 / math.sqrt(dim)
    relation_count = pseudo_types.k * pseudo_types.k
    entity = _normalize_rows(rng.uniform(-bound, bound, size=(node_count, dim)))
    relation = _normalize_rows(rng.uniform(-bound, bound, size=(relation_count, dim)))
    seen = numpy.zeros(relation_count, dtype=bool)
    if train_edges.shape[0]:
        seen[pseudo_types.pair_type(train_edges[:, 0], train_edges[:, 1])] = True
        seen[pseudo_types.pair_type(train_edges[:, 1], train_edges[:, 0])] = True
    relation[~seen] = 0.0
    return TransEParams(entity=entity, relation=relation, pseudo_types=pseudo_types, seen_relations=seen)


def transe_train(split: LinkSplit, pseudo_types: Optional[PseudoTypes], config: TransEConfig) -> TransEParams:
    """Margin loss over sampled triplets; entity rows are renormalised after every step."""
    g = split.train_graph
    if pseudo_types is None:
        pseudo_types = single_type(g.node_count)
    rng = derive_rng(config.seed, "transe")
    params = init_transe_params(g.node_count, pseudo_types, split.train_edges, config.dim, rng)
    frozen = {"relation": ~params.seen_relations[:, None]}
    state = OptimizerState(kind=config.optimizer)
    entity_rows = numpy.arange(g.node_count, dtype=numpy.int64)
    relation_rows = numpy.arange(params.relation.shape[0], dtype=numpy.int64)
    steps = config.steps_per_epoch or int(math.ceil(split.train_edges.shape[0] / config.batch_size))
    batch_id = 0
    for epoch in range(1, config.epochs + 1):
        epoch_losses = []
        for _ in range(steps):
            batch_id += 1
            arr = triplets_to_array(sample_triplets(split, config.batch_size, rng))
            tape = de.Tape()
            entity = tape.leaf(params.entity, name="entity")
            relation = tape.leaf(params.relation, name="relation")
            h_a, h_b, h_c = (de.gather(entity, entity_rows, arr[:, i]) for i in range(3))
            r_ab = de.gather(relation, relation_rows, pseudo_types.pair_type(arr[:, 0], arr[:, 1]))
            r_ac = de.gather(relation, relation_rows, pseudo_types.pair_type(arr[:, 0], arr[:, 2]))
            hinge = de.max_with_zero(
                de.add(de.subtract(distance(h_a, h_b, r_ab), distance(h_a, h_c, r_ac)), config.margin)
            )
            loss = de.scale(de.total(hinge), 1.0 / arr.shape[0])
            grads = tape.backward(loss)
            updated = optimizer_step(
                {"entity": params.entity, "relation": params.relation},
                grads,
                state,
                config.learning_rate,
                frozen,
                batch_id,
            )
            params.entity = _normalize_rows(updated["entity"])
            params.relation = updated["relation"]
            epoch_losses.append(loss.item())
        params.losses.append(float(numpy.mean(epoch_losses)))
        logger.debug("%s epoch %d loss %.6f", baseline_name(pseudo_types.k), epoch, params.losses[-1])
    return params


def transe_scores(queries: Sequence[EvalQuery], params: TransEParams) -> numpy.ndarray:
    """Scores with the relation of the candidate pair's pseudo type (zero if never trained)."""
    anchors = numpy.array([q.anchor for q in queries], dtype=numpy.int64)
    candidates = numpy.stack([q.candidates for q in queries])
    relation = params.relation[params.pseudo_types.pair_type(anchors[:, None], candidates)]
    return score_values(params.entity[anchors][:, None, :], params.entity[candidates], relation)


def evaluate_transe(queries: Sequence[EvalQuery], params: TransEParams, workers: int = 1) -> Dict[str, float]:
    return ranking_metrics(rank_queries(queries, transe_scores(queries, params), workers))


def pseudo_types_for(split: LinkSplit, k: int, config: TransEConfig) -> PseudoTypes:
    """
    K clusters of the node features, or of TransE-1 entity embeddings when
    the graph has no features.

    """
    g: Graph = split.train_graph
    if k == 1:
        return single_type(g.node_count)
    if g.features is not None:
        X = g.features
    else:
        logger.info("No node features; clustering TransE entity embeddings instead.")
        X = transe_train(split, None, config).entity
    return kmeans(X, k, config.seed).pseudo_types
