"""
Pairwise link encoder, translational scoring and the training losses.

    s_ab     = tanh(W s_b + U s_a + b)
    d(x, y)  = || h_x + s_xy - h_y ||
    score    = -d

"""
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy

from lhg_link import diff_engine as de
from lhg_link.common import ConfigurationError, ContractError
from lhg_link.diff_engine import Tensor
from lhg_link.graph_store import Triplet, triplets_to_array


@dataclass
class LinkEncoderParams:
    """W, U: (d_h x d_s); b: d_h. Arrays or their tape leaves."""

    W: object
    U: object
    b: object


@dataclass(frozen=True)
class LossConfig:
    margin: float = 0.2
    film_weight: float = 1e-4

    def validate(self):
        if not self.margin > 0:
            raise ConfigurationError(f"MARGIN must be > 0, got {self.margin}")
        if not self.film_weight >= 0:
            raise ConfigurationError(f"FILM_WEIGHT must be >= 0, got {self.film_weight}")


def init_link_params(hidden_dim: int, semantic_dim: int, rng: numpy.random.Generator) -> LinkEncoderParams:
    limit = numpy.sqrt(6.0 / (hidden_dim + semantic_dim))
    return LinkEncoderParams(
        W=rng.uniform(-limit, limit, size=(hidden_dim, semantic_dim)),
        U=rng.uniform(-limit, limit, size=(hidden_dim, semantic_dim)),
        b=numpy.zeros(hidden_dim),
    )


def encode_link(s_a: Tensor, s_b: Tensor, params: LinkEncoderParams) -> Tensor:
    """Row-wise s_ab for aligned rows of s_a and s_b; not symmetric in (a, b)."""
    return de.tanh(
        de.add(
            de.add(de.matmul(s_b, de.transpose(params.W)), de.matmul(s_a, de.transpose(params.U))),
            params.b,
        )
    )


def distance(h_x: Tensor, h_y: Tensor, s_xy: Optional[Tensor] = None) -> Tensor:
    """Row-wise translational distance, shape (m, 1). s_xy=None means a zero translation."""
    translated = h_x if s_xy is None else de.add(h_x, s_xy)
    return de.l2_norm(de.subtract(translated, h_y))


def score(h_x: Tensor, h_y: Tensor, s_xy: Optional[Tensor] = None) -> Tensor:
    """Taped score; evaluation ranks with score_values, training differentiates distance."""
    return de.scale(distance(h_x, h_y, s_xy), -1.0)


def encode_link_values(
    s_a: numpy.ndarray,
    s_b: numpy.ndarray,
    W: numpy.ndarray,
    U: numpy.ndarray,
    b: numpy.ndarray,
) -> numpy.ndarray:
    return numpy.tanh(s_b @ W.T + s_a @ U.T + b)


def score_values(h_x: numpy.ndarray, h_y: numpy.ndarray, s_xy: Optional[numpy.ndarray] = None) -> numpy.ndarray:
    """Scores over the last axis, for evaluation outside any tape."""
    translated = h_x if s_xy is None else h_x + s_xy
    return -numpy.linalg.norm(translated - h_y, axis=-1)


def task_loss(
    triplets: Union[Sequence[Triplet], numpy.ndarray],
    H: Tensor,
    S: Tensor,
    params: LinkEncoderParams,
    margin: float,
    nodes: Optional[numpy.ndarray] = None,
    use_link_encoder: bool = True,
) -> Tensor:
    """
    Mean over triplets of max(d(a, b) - d(a, c) + margin, 0). Rows of H and
    S belong to the sorted ids `nodes` (node id == row when omitted). The
    negative pair (a, c) goes through the same link encoder.

    """
    arr = triplets if isinstance(triplets, numpy.ndarray) else triplets_to_array(triplets)
    if arr.shape[0] == 0:
        raise ContractError("task_loss needs at least one triplet.")
    if nodes is None:
        nodes = numpy.arange(H.shape[0], dtype=numpy.int64)
    h_a, h_b, h_c = (de.gather(H, nodes, arr[:, i]) for i in range(3))
    s_ab = s_ac = None
    if use_link_encoder:
        s_a, s_b, s_c = (de.gather(S, nodes, arr[:, i]) for i in range(3))
        s_ab = encode_link(s_a, s_b, params)
        s_ac = encode_link(s_a, s_c, params)
    hinge = de.max_with_zero(
        de.add(de.subtract(distance(h_a, h_b, s_ab), distance(h_a, h_c, s_ac)), float(margin))
    )
    return de.scale(de.total(hinge), 1.0 / arr.shape[0])


def film_reg(gammas: Sequence[Tensor], betas: Sequence[Tensor]) -> Union[Tensor, float]:
    """Sum of ||gamma_p|| + ||beta_p|| over every path realized in the batch."""
    terms = [de.total(de.l2_norm(v)) for v in list(gammas) + list(betas)]
    if not terms:
        return 0.0
    result = terms[0]
    for term in terms[1:]:
        result = de.add(result, term)
    return result


def total_loss(task: Tensor, film: Union[Tensor, float], film_weight: float) -> Tensor:
    if not film_weight >= 0:
        raise ConfigurationError(f"FILM_WEIGHT must be >= 0, got {film_weight}")
    if isinstance(film, Tensor):
        return de.add(task, de.scale(film, film_weight))
    return de.add(task, float(film) * film_weight)
