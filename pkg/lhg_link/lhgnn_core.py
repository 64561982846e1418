"""
The LHGNN layer and the stacked model.

Per layer l and target v::

    S^l        = LeakyReLU(H^{l-1} W_s^T + b_s)                 node semantics
    s_p        = mean of S^l over the nodes of path p            path semantics
    gamma_p    = LeakyReLU(W_gamma s_p + b_gamma)
    beta_p     = LeakyReLU(W_beta  s_p + b_beta)
    m_p        = (gamma_p + 1) * h^{l-1}_u + beta_p              personalised context
    c_v        = mean over P_v of e^{-decay L(p)} m_p            self-loop: h^{l-1}_v, weight 1
    h^l_v      = normalize(LeakyReLU(W_h c_v + b_h))

A mini-batch only evaluates the nodes its targets reach through their paths
(see receptive_nodes); all gathers and poolings are constant sparse operators.

"""
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy
from scipy import sparse

from lhg_link import diff_engine as de
from lhg_link.common import CHECKPOINT_FORMAT_VERSION, ConfigurationError, ContractError, DimensionError
from lhg_link.diff_engine import Tape, Tensor
from lhg_link.link_model import LinkEncoderParams, init_link_params
from lhg_link.path_sampler import ContextSet
from lhg_link.path_sampler import Path as GraphPath

FILM_FIELDS = ("W_gamma", "b_gamma", "W_beta", "b_beta")


@dataclass
class LayerParams:
    """Arrays (or their tape leaves) of one layer."""

    W_s: object
    b_s: object
    W_gamma: object
    b_gamma: object
    W_beta: object
    b_beta: object
    W_h: object
    b_h: object


@dataclass
class ModelParams:
    layers: List[LayerParams]
    link: LinkEncoderParams
    entity: Optional[object] = None

    def as_dict(self) -> Dict[str, object]:
        params: Dict[str, object] = {}
        if self.entity is not None:
            params["entity"] = self.entity
        for i, layer in enumerate(self.layers, start=1):
            for f in fields(LayerParams):
                params[f"layer{i}.{f.name}"] = getattr(layer, f.name)
        for f in fields(LinkEncoderParams):
            params[f"link.{f.name}"] = getattr(self.link, f.name)
        return params

    @classmethod
    def from_dict(cls, params: Dict[str, object]) -> "ModelParams":
        num_layers = len({name.split(".")[0] for name in params if name.startswith("layer")})
        layers = [
            LayerParams(**{f.name: params[f"layer{i}.{f.name}"] for f in fields(LayerParams)})
            for i in range(1, num_layers + 1)
        ]
        link = LinkEncoderParams(**{f.name: params[f"link.{f.name}"] for f in fields(LinkEncoderParams)})
        return cls(layers=layers, link=link, entity=params.get("entity"))

    def on_tape(self, tape: Tape, requires_grad: bool = True) -> "ModelParams":
        return ModelParams.from_dict(
            {
                name: tape.leaf(values, requires_grad=requires_grad, name=name)
                for name, values in self.as_dict().items()
            }
        )

    def copy(self) -> "ModelParams":
        return ModelParams.from_dict({name: numpy.array(v, copy=True) for name, v in self.as_dict().items()})


def film_param_names(params: ModelParams) -> List[str]:
    return [f"layer{i}.{name}" for i in range(1, len(params.layers) + 1) for name in FILM_FIELDS]


def glorot(rng: numpy.random.Generator, fan_out: int, fan_in: int) -> numpy.ndarray:
    limit = numpy.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_model_params(
    input_dim: int,
    hidden_dims: Sequence[int],
    semantic_dims: Sequence[int],
    rng: numpy.random.Generator,
    entity_count: Optional[int] = None,
) -> ModelParams:
    """
    Glorot-uniform matrices, zero biases. With `entity_count`, a learnable
    (entity_count x input_dim) input table is added for featureless graphs.

    """
    if len(hidden_dims) == 0 or len(hidden_dims) != len(semantic_dims):
        raise ConfigurationError(
            f"HIDDEN_DIMS and SEMANTIC_DIMS need one entry per layer, got {hidden_dims} / {semantic_dims}"
        )
    entity = None
    if entity_count is not None:
        limit = numpy.sqrt(3.0 / input_dim)
        entity = rng.uniform(-limit, limit, size=(entity_count, input_dim))
    layers = []
    d_prev = input_dim
    for d_h, d_s in zip(hidden_dims, semantic_dims):
        layers.append(
            LayerParams(
                W_s=glorot(rng, d_s, d_prev),
                b_s=numpy.zeros(d_s),
                W_gamma=glorot(rng, d_prev, d_s),
                b_gamma=numpy.zeros(d_prev),
                W_beta=glorot(rng, d_prev, d_s),
                b_beta=numpy.zeros(d_prev),
                W_h=glorot(rng, d_h, d_prev),
                b_h=numpy.zeros(d_h),
            )
        )
        d_prev = d_h
    link = init_link_params(hidden_dims[-1], semantic_dims[-1], rng)
    return ModelParams(layers=layers, link=link, entity=entity)


def count_parameters(params: ModelParams) -> int:
    return int(sum(numpy.asarray(v).size for v in params.as_dict().values()))


class FilmOutput(NamedTuple):
    message: Tensor
    gamma: Tensor
    beta: Tensor


class LayerState(NamedTuple):
    nodes: numpy.ndarray
    H: Tensor
    S: Tensor
    path_semantics: Optional[Tensor]
    gamma: Optional[Tensor]
    beta: Optional[Tensor]


class ForwardResult(NamedTuple):
    nodes: numpy.ndarray
    H: Tensor
    S: Tensor
    gammas: List[Tensor]
    betas: List[Tensor]
    states: List[LayerState]


def semantic_encode(H_prev: Tensor, params: LayerParams, slope: float = de.DEFAULT_LEAKY_SLOPE) -> Tensor:
    if H_prev.values.ndim != 2 or H_prev.shape[1] != params.W_s.shape[1]:
        raise DimensionError(
            f"semantic_encode: embeddings {H_prev.shape} do not match W_s {params.W_s.shape}"
        )
    return de.leaky_relu(de.add(de.matmul(H_prev, de.transpose(params.W_s)), params.b_s), slope)


def path_encode(p: GraphPath, S: Tensor, nodes: Optional[numpy.ndarray] = None) -> Tensor:
    """
    Mean of the semantic embeddings of every node on p, as a (1, d_s) row.
    Single-path form; layer_forward uses the path_mean operator of plan_layer.

    """
    if nodes is None:
        nodes = numpy.arange(S.shape[0])
    positions = de.row_positions(nodes, numpy.asarray(p.nodes, dtype=numpy.int64))
    operator = sparse.csr_matrix(
        (numpy.full(positions.shape[0], 1.0 / positions.shape[0]), (numpy.zeros_like(positions), positions)),
        shape=(1, nodes.shape[0]),
    )
    return de.sparse_matmul(operator, S)


def film_modulate(
    h_u_prev: Tensor,
    s_p: Tensor,
    params: LayerParams,
    slope: float = de.DEFAULT_LEAKY_SLOPE,
) -> FilmOutput:
    """Row-wise (gamma + 1) * h_u + beta with gamma, beta generated from s_p."""
    gamma = de.leaky_relu(de.add(de.matmul(s_p, de.transpose(params.W_gamma)), params.b_gamma), slope)
    beta = de.leaky_relu(de.add(de.matmul(s_p, de.transpose(params.W_beta)), params.b_beta), slope)
    message = de.add(de.hadamard(de.add(gamma, 1.0), h_u_prev), beta)
    return FilmOutput(message=message, gamma=gamma, beta=beta)


def aggregate_contexts(ctx: ContextSet, messages: Tensor, decay: float) -> Tensor:
    """
    Decay-weighted mean of the messages of ctx.paths (row i <-> paths[i];
    row 0 is the self-loop message). Divides by the full path count.
    Single-target form of the context_weights and self_weights operators
    built by plan_layer.

    """
    if messages.shape[0] != len(ctx.paths):
        raise DimensionError(
            f"aggregate_contexts: {messages.shape[0]} messages for {len(ctx.paths)} paths"
        )
    weights = ctx.weights(decay) / len(ctx.paths)
    return de.sparse_matmul(sparse.csr_matrix(weights.reshape(1, -1)), messages)


class LayerPlan(NamedTuple):
    targets: numpy.ndarray
    prev_nodes: numpy.ndarray
    path_count: int
    path_mean: sparse.csr_matrix
    terminal_gather: sparse.csr_matrix
    context_weights: sparse.csr_matrix
    self_weights: sparse.csr_matrix
    target_gather: sparse.csr_matrix


def plan_layer(
    targets: numpy.ndarray,
    prev_nodes: numpy.ndarray,
    context_sets: Sequence[ContextSet],
    decay: float,
) -> LayerPlan:
    """Sparse operators for one layer over `targets`, reading rows `prev_nodes`."""
    if not decay > 0:
        raise ConfigurationError(f"DECAY must be > 0, got {decay}")
    packs = [context_sets[v].packed for v in targets]
    counts = numpy.array([p[0].shape[0] for p in packs], dtype=numpy.int64)
    empty = numpy.zeros(0, dtype=numpy.int64)
    terminals = numpy.concatenate([p[0] for p in packs]) if packs else empty
    lengths = numpy.concatenate([p[1] for p in packs]) if packs else empty
    sizes = numpy.concatenate([p[2] for p in packs]) if packs else empty
    flat = numpy.concatenate([p[3] for p in packs]) if packs else empty

    n_targets, n_prev, n_paths = targets.shape[0], prev_nodes.shape[0], terminals.shape[0]
    path_of_entry = numpy.repeat(numpy.arange(n_paths), sizes)
    path_mean = sparse.csr_matrix(
        ((1.0 / sizes)[path_of_entry], (path_of_entry, de.row_positions(prev_nodes, flat))),
        shape=(n_paths, n_prev),
    )
    terminal_gather = sparse.csr_matrix(
        (numpy.ones(n_paths), (numpy.arange(n_paths), de.row_positions(prev_nodes, terminals))),
        shape=(n_paths, n_prev),
    )
    denominators = (counts + 1).astype(numpy.float64)
    owner = numpy.repeat(numpy.arange(n_targets), counts)
    context_weights = sparse.csr_matrix(
        (numpy.exp(-decay * lengths) / denominators[owner], (owner, numpy.arange(n_paths))),
        shape=(n_targets, n_paths),
    )
    target_positions = de.row_positions(prev_nodes, targets)
    self_weights = sparse.csr_matrix(
        (1.0 / denominators, (numpy.arange(n_targets), target_positions)),
        shape=(n_targets, n_prev),
    )
    target_gather = sparse.csr_matrix(
        (numpy.ones(n_targets), (numpy.arange(n_targets), target_positions)),
        shape=(n_targets, n_prev),
    )
    return LayerPlan(
        targets=targets,
        prev_nodes=prev_nodes,
        path_count=int(n_paths),
        path_mean=path_mean,
        terminal_gather=terminal_gather,
        context_weights=context_weights,
        self_weights=self_weights,
        target_gather=target_gather,
    )


def layer_forward(
    H_prev: Tensor,
    context_sets: Sequence[ContextSet],
    params: LayerParams,
    decay: float,
    slope: float = de.DEFAULT_LEAKY_SLOPE,
    targets: Optional[numpy.ndarray] = None,
    prev_nodes: Optional[numpy.ndarray] = None,
    personalize: bool = True,
    plan: Optional[LayerPlan] = None,
) -> LayerState:
    """
    One LHGNN layer. Rows of H_prev belong to the sorted ids `prev_nodes`
    (all nodes when omitted); the layer is evaluated for `targets` (all
    nodes when omitted). With personalize=False every message is the plain
    context embedding.

    """
    if plan is None:
        all_nodes = numpy.arange(len(context_sets), dtype=numpy.int64)
        plan = plan_layer(
            all_nodes if targets is None else numpy.asarray(targets, dtype=numpy.int64),
            all_nodes if prev_nodes is None else numpy.asarray(prev_nodes, dtype=numpy.int64),
            context_sets,
            decay,
        )
    if H_prev.shape[0] != plan.prev_nodes.shape[0]:
        raise DimensionError(
            f"layer_forward: {H_prev.shape[0]} embedding rows for {plan.prev_nodes.shape[0]} nodes"
        )

    S_prev = semantic_encode(H_prev, params, slope)
    context = de.sparse_matmul(plan.self_weights, H_prev)
    s_p = gamma = beta = None
    if plan.path_count > 0:
        s_p = de.sparse_matmul(plan.path_mean, S_prev)
        h_u = de.sparse_matmul(plan.terminal_gather, H_prev)
        if personalize:
            film = film_modulate(h_u, s_p, params, slope)
            messages, gamma, beta = film.message, film.gamma, film.beta
        else:
            messages = h_u
        context = de.add(context, de.sparse_matmul(plan.context_weights, messages))

    h = de.leaky_relu(de.add(de.matmul(context, de.transpose(params.W_h)), params.b_h), slope)
    return LayerState(
        nodes=plan.targets,
        H=de.l2_normalize(h),
        S=de.sparse_matmul(plan.target_gather, S_prev),
        path_semantics=s_p,
        gamma=gamma,
        beta=beta,
    )


def receptive_nodes(
    targets: numpy.ndarray,
    context_sets: Sequence[ContextSet],
    num_layers: int,
) -> List[numpy.ndarray]:
    """
    Sorted node sets per layer: entry num_layers holds the targets, entry
    l - 1 adds every node on the paths of entry l. Entry 0 is what the
    input layer must provide.

    """
    needed: List[numpy.ndarray] = [numpy.zeros(0, dtype=numpy.int64)] * (num_layers + 1)
    needed[num_layers] = numpy.unique(numpy.asarray(targets, dtype=numpy.int64))
    for layer in range(num_layers, 0, -1):
        current = needed[layer]
        path_nodes = [context_sets[v].packed[3] for v in current]
        needed[layer - 1] = numpy.unique(numpy.concatenate([current] + path_nodes))
    return needed


def input_embeddings(
    features: Optional[numpy.ndarray],
    entity: Optional[Tensor],
    nodes: numpy.ndarray,
    tape: Tape,
) -> Tensor:
    """H^0 rows for `nodes`: fixed node features, or rows of the learnable entity table."""
    if features is not None:
        return tape.constant(features[nodes])
    if entity is None:
        raise ContractError("A featureless graph needs a learnable entity table.")
    if nodes.shape[0] == entity.shape[0] and numpy.array_equal(nodes, numpy.arange(entity.shape[0])):
        return entity
    return de.sparse_matmul(de.gather_operator(numpy.arange(entity.shape[0]), nodes), entity)


def forward(
    features: Optional[numpy.ndarray],
    context_sets: Sequence[ContextSet],
    params: ModelParams,
    decay: float,
    slope: float = de.DEFAULT_LEAKY_SLOPE,
    targets: Optional[numpy.ndarray] = None,
    personalize: bool = True,
    tape: Optional[Tape] = None,
) -> ForwardResult:
    """
    Stacks len(params.layers) layers. `params` must already live on a tape
    (ModelParams.on_tape). Without `targets` every node is evaluated.

    """
    num_layers = len(params.layers)
    if num_layers < 1:
        raise ConfigurationError("The model needs at least one layer.")
    if tape is None:
        tape = params.layers[0].W_s.tape
    if targets is None:
        targets = numpy.arange(len(context_sets), dtype=numpy.int64)
    needed = receptive_nodes(targets, context_sets, num_layers)

    H = input_embeddings(features, params.entity, needed[0], tape)
    states = []
    for layer in range(1, num_layers + 1):
        plan = plan_layer(needed[layer], needed[layer - 1], context_sets, decay)
        state = layer_forward(
            H,
            context_sets,
            params.layers[layer - 1],
            decay,
            slope,
            personalize=personalize,
            plan=plan,
        )
        states.append(state)
        H = state.H
    last = states[-1]
    return ForwardResult(
        nodes=last.nodes,
        H=last.H,
        S=last.S,
        gammas=[s.gamma for s in states if s.gamma is not None],
        betas=[s.beta for s in states if s.beta is not None],
        states=states,
    )


def embed_all(
    features: Optional[numpy.ndarray],
    context_sets: Sequence[ContextSet],
    params: ModelParams,
    decay: float,
    slope: float = de.DEFAULT_LEAKY_SLOPE,
    personalize: bool = True,
) -> Tuple[numpy.ndarray, numpy.ndarray]:
    """Final (H, S) arrays for every node, outside of any training tape."""
    tape = Tape()
    result = forward(
        features,
        context_sets,
        params.on_tape(tape, requires_grad=False),
        decay,
        slope,
        personalize=personalize,
        tape=tape,
    )
    return result.H.values, result.S.values


def save_checkpoint(params: ModelParams, dst_path: Path, meta: Dict):
    """Versioned `.npz` payload: every parameter array plus a JSON header."""
    header = dict(meta)
    header["format_version"] = CHECKPOINT_FORMAT_VERSION
    dst_path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {name: numpy.asarray(v) for name, v in params.as_dict().items()}
    with open(str(dst_path), "wb") as f_out:
        numpy.savez(f_out, __header__=numpy.array(json.dumps(header, sort_keys=True)), **arrays)


def load_checkpoint(src_path: Path) -> Tuple[ModelParams, Dict]:
    with numpy.load(str(src_path), allow_pickle=False) as data:
        header = json.loads(str(data["__header__"]))
        arrays = {name: data[name].copy() for name in data.files if name != "__header__"}
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ContractError(
            f"Unsupported checkpoint format {header.get('format_version')} in {str(src_path)}"
        )
    return ModelParams.from_dict(arrays), header
