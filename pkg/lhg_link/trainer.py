"""
Training loop for the LHGNN link predictor.

Steps:
    1. Sample a batch of triplets from the training links.
    2. Forward only the nodes the batch reaches through its paths.
    3. Loss = hinge task loss + FILM_WEIGHT * FiLM norm regulariser.
    4. One optimiser step (Adam or plain gradient descent).
    5. After every epoch, score the validation queries; keep the best
       parameters and stop after PATIENCE epochs without improvement.

"""
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy
import pandas

from lhg_link import diff_engine as de
from lhg_link.common import (
    BEST_CHECKPOINT_NAME,
    ConfigurationError,
    ContractError,
    DivergenceError,
    derive_rng,
    fingerprint,
    write_json,
)
from lhg_link.eval_bench import build_queries, evaluate_model
from lhg_link.graph_store import Graph, LinkSplit, sample_triplets, split_links, triplets_to_array
from lhg_link.lhgnn_core import (
    ModelParams,
    count_parameters,
    film_param_names,
    forward,
    init_model_params,
    save_checkpoint,
)
from lhg_link.link_model import LossConfig, film_reg, task_loss, total_loss
from lhg_link.path_sampler import TRUNCATE_SAMPLE, TRUNCATION_MODES, ContextSet, sample_context_sets

logger = logging.getLogger(__name__)

VARIANT_FULL = "full"
VARIANT_NO_LINK_ENCODER = "no_link_encoder"
VARIANT_NO_PERSONALIZATION = "no_personalization"
VARIANT_NEITHER = "neither"
VARIANTS = (VARIANT_FULL, VARIANT_NO_LINK_ENCODER, VARIANT_NO_PERSONALIZATION, VARIANT_NEITHER)
OPTIMIZERS = ("adam", "sgd")
REPORT_FILE_NAME = "train_report.json"
LOSS_CURVE_FILE_NAME = "loss_curve.png"
LINEAR_SCALING_SLACK = 1.5

# Not part of the model fingerprint.
_RUNTIME_FIELDS = ("workers",)


@dataclass
class TrainConfig:
    num_layers: int = 2
    hidden_dims: List[int] = field(default_factory=lambda: [32, 32])
    semantic_dims: List[int] = field(default_factory=lambda: [10, 10])
    num_paths: int = 50
    max_path_length: int = 4
    decay: float = 0.1
    leaky_slope: float = de.DEFAULT_LEAKY_SLOPE
    entity_dim: int = 200
    truncation: str = TRUNCATE_SAMPLE
    margin: float = 0.2
    film_weight: float = 1e-4
    batch_size: int = 256
    learning_rate: float = 0.005
    optimizer: str = "adam"
    max_epochs: int = 100
    steps_per_epoch: int = 0
    patience: int = 5
    seed: int = 0
    resample_paths: bool = False
    workers: int = 1
    variant: str = VARIANT_FULL
    transe_dim: int = 200
    transe_margin: float = 0.2
    transe_learning_rate: float = 0.005
    transe_epochs: int = 100
    transe_batch_size: int = 256

    @classmethod
    def from_items(cls, items: Mapping[str, object]) -> "TrainConfig":
        """Builds a config from a flat mapping, ignoring keys that are not config fields."""
        names = {f.name for f in fields(cls)}
        config = cls(**{k: v for k, v in items.items() if k in names and v is not None})
        config.broadcast_dims()
        return config

    def broadcast_dims(self):
        """A single HIDDEN_DIMS / SEMANTIC_DIMS entry applies to every layer."""
        if len(self.hidden_dims) == 1:
            self.hidden_dims = list(self.hidden_dims) * self.num_layers
        if len(self.semantic_dims) == 1:
            self.semantic_dims = list(self.semantic_dims) * self.num_layers

    @property
    def personalize(self) -> bool:
        return self.variant in (VARIANT_FULL, VARIANT_NO_LINK_ENCODER)

    @property
    def use_link_encoder(self) -> bool:
        return self.variant in (VARIANT_FULL, VARIANT_NO_PERSONALIZATION)

    @property
    def loss(self) -> LossConfig:
        return LossConfig(margin=self.margin, film_weight=self.film_weight)

    def validate(self):
        if self.num_layers < 1:
            raise ConfigurationError(f"NUM_LAYERS must be >= 1, got {self.num_layers}")
        if len(self.hidden_dims) != self.num_layers or len(self.semantic_dims) != self.num_layers:
            raise ConfigurationError(
                f"HIDDEN_DIMS {self.hidden_dims} and SEMANTIC_DIMS {self.semantic_dims} "
                f"need {self.num_layers} entries"
            )
        if min(self.hidden_dims) < 1 or min(self.semantic_dims) < 1:
            raise ConfigurationError("HIDDEN_DIMS and SEMANTIC_DIMS must be positive")
        positives = {
            "NUM_PATHS": self.num_paths + 1,
            "MAX_PATH_LENGTH": self.max_path_length,
            "DECAY": self.decay,
            "ENTITY_DIM": self.entity_dim,
            "BATCH_SIZE": self.batch_size,
            "LEARNING_RATE": self.learning_rate,
            "MAX_EPOCHS": self.max_epochs,
            "WORKERS": self.workers,
            "TRANSE DIM": self.transe_dim,
            "TRANSE MARGIN": self.transe_margin,
            "TRANSE LEARNING_RATE": self.transe_learning_rate,
            "TRANSE BATCH_SIZE": self.transe_batch_size,
        }
        for key, value in positives.items():
            if not value > 0:
                raise ConfigurationError(f"{key} must be > 0, got {value}")
        if self.steps_per_epoch < 0 or self.patience < 0 or self.transe_epochs < 0:
            raise ConfigurationError("STEPS_PER_EPOCH, PATIENCE and TRANSE EPOCHS must be >= 0")
        if self.truncation not in TRUNCATION_MODES:
            raise ConfigurationError(f"TRUNCATION must be one of {TRUNCATION_MODES}, got {self.truncation}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"OPTIMIZER must be one of {OPTIMIZERS}, got {self.optimizer}")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant}")
        self.loss.validate()

    def as_dict(self) -> Dict:
        return asdict(self)

    def fingerprint(self) -> str:
        payload = {k: v for k, v in self.as_dict().items() if k not in _RUNTIME_FIELDS}
        return fingerprint(payload)


@dataclass
class OptimizerState:
    kind: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: Dict[str, numpy.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, numpy.ndarray] = field(default_factory=dict)


def _norms_summary(params: Mapping[str, numpy.ndarray]) -> str:
    return ", ".join(f"{name}={numpy.linalg.norm(v):.4g}" for name, v in params.items())


def optimizer_step(
    params: Mapping[str, numpy.ndarray],
    grads: Mapping[str, numpy.ndarray],
    state: OptimizerState,
    learning_rate: float,
    frozen: Optional[Mapping[str, numpy.ndarray]] = None,
    batch_id: Optional[int] = None,
) -> Dict[str, numpy.ndarray]:
    """
    Returns updated copies of `params`. `frozen` maps a parameter name to a
    boolean mask (broadcastable to the parameter) of entries that must not
    move; frozen entries also keep zero optimiser moments.

    """
    for name, grad in grads.items():
        if not numpy.all(numpy.isfinite(grad)):
            raise DivergenceError(
                f"Non-finite gradient for {name} at batch {batch_id} "
                f"(learning rate {learning_rate}); parameter norms: {_norms_summary(params)}"
            )
    frozen = frozen or {}
    state.step += 1
    updated = {}
    for name, values in params.items():
        grad = grads.get(name)
        if grad is None:
            updated[name] = values
            continue
        mask = frozen.get(name)
        if mask is not None:
            grad = numpy.where(mask, 0.0, grad)
        if state.kind == "sgd":
            step = learning_rate * grad
        else:
            m = state.first_moment.get(name, numpy.zeros_like(values))
            v = state.second_moment.get(name, numpy.zeros_like(values))
            m = state.beta1 * m + (1.0 - state.beta1) * grad
            v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
            state.first_moment[name], state.second_moment[name] = m, v
            m_hat = m / (1.0 - state.beta1 ** state.step)
            v_hat = v / (1.0 - state.beta2 ** state.step)
            step = learning_rate * m_hat / (numpy.sqrt(v_hat) + state.epsilon)
        if mask is not None:
            step = numpy.where(mask, 0.0, step)
        updated[name] = values - step
    return updated


@dataclass
class TrainReport:
    dataset: str
    variant: str
    seed: int
    fingerprint: str
    parameter_count: int
    losses: List[float] = field(default_factory=list)
    val_map: List[float] = field(default_factory=list)
    val_ndcg: List[float] = field(default_factory=list)
    epoch_seconds: List[float] = field(default_factory=list)
    train_seconds: List[float] = field(default_factory=list)
    step_losses: List[float] = field(default_factory=list)
    gamma_norms: List[float] = field(default_factory=list)
    beta_norms: List[float] = field(default_factory=list)
    convergence_epoch: int = 0
    best_val_map: float = 0.0
    best_checkpoint: Optional[str] = None
    stopped_early: bool = False

    def as_dict(self) -> Dict:
        return asdict(self)

    def save(self, dst_path: Path):
        write_json(self.as_dict(), dst_path)


class TrainResult(NamedTuple):
    report: TrainReport
    params: ModelParams
    context_sets: List[ContextSet]


def film_frozen_masks(params: ModelParams) -> Dict[str, numpy.ndarray]:
    return {name: numpy.array(True) for name in film_param_names(params)}


def _batch_mean_norm(tensors: Sequence[de.Tensor]) -> float:
    rows = [numpy.linalg.norm(t.values, axis=1) for t in tensors if t.shape[0] > 0]
    if not rows:
        return 0.0
    return float(numpy.mean(numpy.concatenate(rows)))


def context_sets_for(config: TrainConfig, g: Graph, epoch: int = 1) -> List[ContextSet]:
    """Path sets over the training graph; epoch > 1 draws a fresh set when RESAMPLE_PATHS is on."""
    subsystem = "paths" if epoch <= 1 else f"paths-epoch{epoch}"
    return sample_context_sets(
        g,
        config.num_paths,
        config.max_path_length,
        config.seed,
        workers=config.workers,
        truncation=config.truncation,
        subsystem=subsystem,
    )


def init_params_for(config: TrainConfig, g: Graph) -> ModelParams:
    rng = derive_rng(config.seed, "init")
    if g.features is not None:
        return init_model_params(g.features.shape[1], config.hidden_dims, config.semantic_dims, rng)
    return init_model_params(
        config.entity_dim, config.hidden_dims, config.semantic_dims, rng, entity_count=g.node_count
    )


def train_step(
    params: ModelParams,
    triplets: numpy.ndarray,
    features: Optional[numpy.ndarray],
    context_sets: Sequence[ContextSet],
    config: TrainConfig,
) -> Tuple[float, Dict[str, numpy.ndarray], float, float]:
    """Forward plus backward for one batch: (loss, gradients, mean ||gamma||, mean ||beta||)."""
    tape = de.Tape()
    on_tape = params.on_tape(tape)
    result = forward(
        features,
        context_sets,
        on_tape,
        config.decay,
        config.leaky_slope,
        targets=numpy.unique(triplets.reshape(-1)),
        personalize=config.personalize,
        tape=tape,
    )
    task = task_loss(
        triplets,
        result.H,
        result.S,
        on_tape.link,
        config.margin,
        nodes=result.nodes,
        use_link_encoder=config.use_link_encoder,
    )
    loss = total_loss(task, film_reg(result.gammas, result.betas), config.film_weight)
    grads = tape.backward(loss)
    return loss.item(), grads, _batch_mean_norm(result.gammas), _batch_mean_norm(result.betas)


def train(
    config: TrainConfig,
    split: LinkSplit,
    context_sets: Optional[List[ContextSet]] = None,
    output_dir: Optional[Path] = None,
    dataset: str = "graph",
    verbose: bool = True,
) -> TrainResult:
    """
    Trains on split.train_graph only. Validation ranks the held-out
    validation links with the current parameters after every epoch; the
    returned parameters (and the saved checkpoint) are those of the best
    validation MAP. Without validation links all `max_epochs` epochs run and
    the last parameters are returned.

    """
    config.validate()
    if split.train_edges.shape[0] == 0:
        raise ContractError("Cannot train: the training split has no edges.")
    g = split.train_graph
    if context_sets is None:
        context_sets = context_sets_for(config, g)
    params = init_params_for(config, g)
    queries = build_queries(split, config.seed, which="val") if split.val_edges.shape[0] else []
    frozen = None if config.personalize else film_frozen_masks(params)
    state = OptimizerState(kind=config.optimizer)
    rng = derive_rng(config.seed, "triplets")
    steps = config.steps_per_epoch or int(math.ceil(split.train_edges.shape[0] / config.batch_size))

    report = TrainReport(
        dataset=dataset,
        variant=config.variant,
        seed=config.seed,
        fingerprint=config.fingerprint(),
        parameter_count=count_parameters(params),
    )
    checkpoint_path = None if output_dir is None else output_dir / BEST_CHECKPOINT_NAME
    best_params = params.copy()
    best_map = -math.inf
    bad_epochs = 0
    batch_id = 0
    for epoch in range(1, config.max_epochs + 1):
        epoch_start = time.perf_counter()
        if config.resample_paths and epoch > 1:
            context_sets = context_sets_for(config, g, epoch)
        epoch_losses = []
        for _ in range(steps):
            batch_id += 1
            triplets = triplets_to_array(sample_triplets(split, config.batch_size, rng))
            loss, grads, gamma_norm, beta_norm = train_step(params, triplets, g.features, context_sets, config)
            if not math.isfinite(loss):
                raise DivergenceError(
                    f"Non-finite loss at batch {batch_id} (learning rate {config.learning_rate}); "
                    f"parameter norms: {_norms_summary(params.as_dict())}"
                )
            params = ModelParams.from_dict(
                optimizer_step(params.as_dict(), grads, state, config.learning_rate, frozen, batch_id)
            )
            epoch_losses.append(loss)
            report.step_losses.append(loss)
            report.gamma_norms.append(gamma_norm)
            report.beta_norms.append(beta_norm)
        train_secs = time.perf_counter() - epoch_start

        if queries:
            metrics = evaluate_model(
                params,
                g.features,
                context_sets,
                queries,
                config.decay,
                config.leaky_slope,
                personalize=config.personalize,
                use_link_encoder=config.use_link_encoder,
                workers=config.workers,
            )
        else:
            metrics = {"map": 0.0, "ndcg": 0.0}
        secs = time.perf_counter() - epoch_start
        mean_loss = float(numpy.mean(epoch_losses))
        report.losses.append(mean_loss)
        report.val_map.append(metrics["map"])
        report.val_ndcg.append(metrics["ndcg"])
        report.epoch_seconds.append(secs)
        report.train_seconds.append(train_secs)
        if verbose:
            print(f"epoch {epoch} loss {mean_loss:.6f} val_map {metrics['map']:.6f} secs {secs:.3f}")

        if not queries:
            # nothing to select on: run every epoch and keep the latest parameters
            best_params = params.copy()
            report.convergence_epoch = epoch
            if checkpoint_path is not None:
                save_checkpoint(best_params, checkpoint_path, checkpoint_meta(config, epoch))
                report.best_checkpoint = str(checkpoint_path)
        elif metrics["map"] > best_map:
            best_map = metrics["map"]
            best_params = params.copy()
            report.convergence_epoch = epoch
            report.best_val_map = float(best_map)
            bad_epochs = 0
            if checkpoint_path is not None:
                save_checkpoint(best_params, checkpoint_path, checkpoint_meta(config, epoch))
                report.best_checkpoint = str(checkpoint_path)
        else:
            bad_epochs += 1
            if bad_epochs > config.patience:
                logger.info("No validation improvement for %d epochs; stopping at epoch %d.", bad_epochs, epoch)
                report.stopped_early = True
                break

    if output_dir is not None:
        from lhg_link.visualise import plot_loss_curve

        report.save(output_dir / REPORT_FILE_NAME)
        plot_loss_curve(report, output_dir / LOSS_CURVE_FILE_NAME)
    return TrainResult(report=report, params=best_params, context_sets=context_sets)


def checkpoint_meta(config: TrainConfig, epoch: int) -> Dict:
    return {
        "fingerprint": config.fingerprint(),
        "seed": config.seed,
        "variant": config.variant,
        "epoch": epoch,
        "config": config.as_dict(),
    }


def measure_scaling(
    graphs: Sequence[Tuple[str, Graph]],
    config: TrainConfig,
    epochs: int = 1,
) -> pandas.DataFrame:
    """
    Trains each graph for `epochs` epochs and tabulates the mean training
    seconds per epoch. `time_ratio` compares each row with the previous one
    and `within_linear_band` checks it against LINEAR_SCALING_SLACK times the
    node-count ratio. Graphs without edges are reported with zero time.

    """
    rows = []
    previous = None
    previous_nodes = None
    run_config = replace(config, max_epochs=epochs, patience=epochs)
    for name, g in graphs:
        split = split_links(g, seed=config.seed)
        start = time.perf_counter()
        if split.train_edges.shape[0] == 0:
            per_epoch, epochs_run = 0.0, 0
        else:
            result = train(run_config, split, dataset=name, verbose=False)
            per_epoch = float(numpy.mean(result.report.train_seconds))
            epochs_run = len(result.report.losses)
        total = time.perf_counter() - start
        ratio = None if not previous or not previous_nodes else per_epoch / previous
        within = None
        if ratio is not None:
            within = bool(ratio <= LINEAR_SCALING_SLACK * g.node_count / previous_nodes)
            if not within:
                logger.warning(
                    "%s: per-epoch time grew %.2fx for %.2fx the nodes.", name, ratio, g.node_count / previous_nodes
                )
        rows.append(
            {
                "graph": name,
                "nodes": g.node_count,
                "edges": g.edge_count,
                "secs_per_epoch": round(per_epoch, 4),
                "epochs": epochs_run,
                "total_secs": round(total, 4),
                "time_ratio": None if ratio is None else round(ratio, 3),
                "within_linear_band": within,
            }
        )
        previous = per_epoch
        previous_nodes = g.node_count
    return pandas.DataFrame(rows)
