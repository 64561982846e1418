"""
Dense reverse-mode differentiation over numpy float64 arrays.

Each forward op appends one node to a Tape together with a closure mapping
the output gradient to parent gradients. Creation order is a topological
order, so backward is a single reversed sweep. A tape may be swept once.

Only the ops the model needs are provided. Constant sparse operators
(scipy.sparse) enter through `sparse_matmul`; row gathers, path mean pooling
and context aggregation are all written that way.

"""
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy
from scipy import sparse

from lhg_link.common import ConfigurationError, ContractError, DimensionError

DEFAULT_LEAKY_SLOPE = 0.01
RELATIVE_ERROR_FLOOR = 1e-6

BackwardFn = Callable[[numpy.ndarray], Tuple[Optional[numpy.ndarray], ...]]


class Tensor:
    __slots__ = ("values", "requires_grad", "node_id", "tape", "name")

    def __init__(self, values: numpy.ndarray, requires_grad: bool, node_id: int, tape: "Tape", name: Optional[str]):
        self.values = values
        self.requires_grad = requires_grad
        self.node_id = node_id
        self.tape = tape
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, name={self.name})"


class Tape:
    def __init__(self):
        self._nodes: List[Tensor] = []
        self._parents: List[Tuple[Tensor, ...]] = []
        self._backward_fns: List[Optional[BackwardFn]] = []
        self._swept = False

    def __len__(self):
        return len(self._nodes)

    def _append(self, values, parents, backward_fn, requires_grad, name=None) -> Tensor:
        if self._swept:
            raise ContractError("Tape was already swept by backward(); run a new forward pass.")
        tensor = Tensor(values, requires_grad, len(self._nodes), self, name)
        self._nodes.append(tensor)
        self._parents.append(parents)
        self._backward_fns.append(backward_fn)
        return tensor

    def leaf(self, values, requires_grad: bool = True, name: Optional[str] = None) -> Tensor:
        values = numpy.array(values, dtype=numpy.float64)
        return self._append(values, (), None, requires_grad, name)

    def constant(self, values) -> Tensor:
        return self.leaf(values, requires_grad=False)

    def record(self, values: numpy.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
        requires_grad = any(p.requires_grad for p in parents)
        return self._append(values, tuple(parents), backward_fn if requires_grad else None, requires_grad)

    def backward(self, loss: Tensor) -> Dict[str, numpy.ndarray]:
        """
        Gradients of a scalar `loss` for every requires_grad leaf, keyed by
        leaf name (unnamed leaves get `leaf<id>`). Leaves the loss does not
        depend on get zero gradients.

        """
        if loss.tape is not self:
            raise ContractError("Loss tensor belongs to another tape.")
        if loss.values.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}.")
        if self._swept:
            raise ContractError("backward() was already called on this tape; run a new forward pass.")
        self._swept = True

        grads: Dict[int, numpy.ndarray] = {loss.node_id: numpy.ones_like(loss.values)}
        for node_id in range(loss.node_id, -1, -1):
            grad = grads.get(node_id)
            fn = self._backward_fns[node_id]
            if grad is None or fn is None:
                continue
            parent_grads = fn(grad)
            for parent, parent_grad in zip(self._parents[node_id], parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if parent.node_id in grads:
                    grads[parent.node_id] = grads[parent.node_id] + parent_grad
                else:
                    grads[parent.node_id] = parent_grad
            if self._parents[node_id]:
                del grads[node_id]

        result = {}
        for node, parents in zip(self._nodes, self._parents):
            if parents or not node.requires_grad:
                continue
            key = node.name if node.name is not None else f"leaf{node.node_id}"
            grad = grads.get(node.node_id)
            result[key] = numpy.zeros_like(node.values) if grad is None else grad.reshape(node.values.shape)
        return result


def backward(loss: Tensor) -> Dict[str, numpy.ndarray]:
    return loss.tape.backward(loss)


Operand = Union[Tensor, numpy.ndarray, float, int]


def _lift(x: Operand, tape: Tape) -> Tensor:
    if isinstance(x, Tensor):
        if x.tape is not tape:
            raise ContractError("Operands belong to different tapes.")
        return x
    return tape.constant(x)


def _tape_of(*operands: Operand) -> Tape:
    for x in operands:
        if isinstance(x, Tensor):
            return x.tape
    raise ContractError("At least one operand must be a Tensor.")


def matmul(a: Tensor, b: Operand) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.values, b.values

    def _backward(g):
        return g @ bv.T, av.T @ g

    return tape.record(av @ bv, (a, b), _backward)


def sparse_matmul(operator: sparse.spmatrix, x: Tensor) -> Tensor:
    """Constant sparse operator applied on the left: operator @ x."""
    if x.values.ndim != 2 or operator.shape[1] != x.shape[0]:
        raise DimensionError(f"sparse_matmul: incompatible shapes {operator.shape} and {x.shape}")
    operator = sparse.csr_matrix(operator)
    transposed = operator.T.tocsr()

    def _backward(g):
        return (numpy.asarray(transposed @ g),)

    return x.tape.record(numpy.asarray(operator @ x.values), (x,), _backward)


def row_positions(row_ids: numpy.ndarray, ids: numpy.ndarray) -> numpy.ndarray:
    """Positions of `ids` inside the sorted id array `row_ids`."""
    ids = numpy.asarray(ids, dtype=numpy.int64)
    positions = numpy.searchsorted(row_ids, ids)
    if ids.size and (positions.max() >= row_ids.shape[0] or numpy.any(row_ids[positions] != ids)):
        raise ContractError("Node missing from the evaluated rows.")
    return positions


def gather_operator(row_ids: numpy.ndarray, ids: numpy.ndarray) -> sparse.csr_matrix:
    """0/1 matrix selecting the rows of `ids` out of rows labelled by sorted `row_ids`."""
    positions = row_positions(row_ids, ids)
    return sparse.csr_matrix(
        (numpy.ones(positions.shape[0]), (numpy.arange(positions.shape[0]), positions)),
        shape=(positions.shape[0], row_ids.shape[0]),
    )


def gather(x: Tensor, row_ids: numpy.ndarray, ids: numpy.ndarray) -> Tensor:
    return sparse_matmul(gather_operator(row_ids, ids), x)


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got shape {a.shape}")

    def _backward(g):
        return (g.T,)

    return a.tape.record(a.values.T.copy(), (a,), _backward)


def _broadcast_rule(op: str, a: Tensor, b: Tensor) -> str:
    if a.shape == b.shape:
        return "same"
    if b.values.ndim == 0:
        return "scalar"
    if a.values.ndim == 2 and b.values.ndim == 1 and b.shape[0] == a.shape[1]:
        return "row"
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(rule: str, g: numpy.ndarray) -> numpy.ndarray:
    if rule == "same":
        return g
    if rule == "row":
        return g.sum(axis=0)
    return numpy.asarray(g.sum())


def add(a: Tensor, b: Operand) -> Tensor:
    """a + b where b has a's shape, is a row vector added to every row, or a scalar."""
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    rule = _broadcast_rule("add", a, b)

    def _backward(g):
        return g, _reduce_to(rule, g)

    return tape.record(a.values + b.values, (a, b), _backward)


def subtract(a: Tensor, b: Operand) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    rule = _broadcast_rule("subtract", a, b)

    def _backward(g):
        return g, -_reduce_to(rule, g)

    return tape.record(a.values - b.values, (a, b), _backward)


def hadamard(a: Tensor, b: Operand) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.shape != b.shape:
        raise DimensionError(f"hadamard: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.values, b.values

    def _backward(g):
        return g * bv, g * av

    return tape.record(av * bv, (a, b), _backward)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)

    def _backward(g):
        return (g * factor,)

    return a.tape.record(a.values * factor, (a,), _backward)


def leaky_relu(a: Tensor, slope: float = DEFAULT_LEAKY_SLOPE) -> Tensor:
    positive = a.values > 0
    local = numpy.where(positive, 1.0, slope)

    def _backward(g):
        return (g * local,)

    return a.tape.record(numpy.where(positive, a.values, slope * a.values), (a,), _backward)


def tanh(a: Tensor) -> Tensor:
    out = numpy.tanh(a.values)

    def _backward(g):
        return (g * (1.0 - out * out),)

    return a.tape.record(out, (a,), _backward)


def max_with_zero(a: Tensor) -> Tensor:
    """Hinge; the subgradient at 0 is 0."""
    positive = a.values > 0

    def _backward(g):
        return (g * positive,)

    return a.tape.record(numpy.where(positive, a.values, 0.0), (a,), _backward)


def mean_rows(a: Tensor) -> Tensor:
    """Mean over rows: (m, d) -> (1, d)."""
    if a.values.ndim != 2 or a.shape[0] == 0:
        raise DimensionError(f"mean_rows: expected a non-empty matrix, got shape {a.shape}")
    m = a.shape[0]

    def _backward(g):
        return (numpy.repeat(g / m, m, axis=0),)

    return a.tape.record(a.values.mean(axis=0, keepdims=True), (a,), _backward)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise DimensionError("concat_rows: nothing to concatenate")
    tape = _tape_of(*parts)
    parts = [_lift(p, tape) for p in parts]
    widths = {p.shape[1] for p in parts if p.values.ndim == 2}
    if len(widths) != 1 or any(p.values.ndim != 2 for p in parts):
        raise DimensionError(f"concat_rows: incompatible shapes {[p.shape for p in parts]}")
    bounds = numpy.cumsum([0] + [p.shape[0] for p in parts])

    def _backward(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return tape.record(numpy.vstack([p.values for p in parts]), tuple(parts), _backward)


def _as_rows(values: numpy.ndarray) -> numpy.ndarray:
    return values.reshape(1, -1) if values.ndim == 1 else values


def l2_norm(a: Tensor) -> Tensor:
    """
    Row-wise Euclidean norm: (m, d) -> (m, 1); a vector gives (1, 1).
    The gradient at a zero row is taken to be zero.

    """
    rows = _as_rows(a.values)
    norms = numpy.sqrt(numpy.sum(rows * rows, axis=1, keepdims=True))
    safe = numpy.where(norms > 0, norms, 1.0)
    direction = numpy.where(norms > 0, rows / safe, 0.0)
    shape = a.shape

    def _backward(g):
        return ((g * direction).reshape(shape),)

    return a.tape.record(norms, (a,), _backward)


def l2_normalize(a: Tensor) -> Tensor:
    """Row-wise x / ||x||; zero rows stay zero with zero gradient."""
    rows = _as_rows(a.values)
    norms = numpy.sqrt(numpy.sum(rows * rows, axis=1, keepdims=True))
    safe = numpy.where(norms > 0, norms, 1.0)
    out = numpy.where(norms > 0, rows / safe, 0.0)
    shape = a.shape

    def _backward(g):
        g = _as_rows(g)
        projected = g - out * numpy.sum(g * out, axis=1, keepdims=True)
        return (numpy.where(norms > 0, projected / safe, 0.0).reshape(shape),)

    return a.tape.record(out.reshape(shape), (a,), _backward)


def total(a: Tensor) -> Tensor:
    """Sum of every entry, as a 0-d tensor."""
    shape = a.shape

    def _backward(g):
        return (numpy.full(shape, float(g)),)

    return a.tape.record(numpy.asarray(a.values.sum()), (a,), _backward)


def grad_check(
    f: Callable[[Dict[str, Tensor]], Tensor],
    params: Dict[str, numpy.ndarray],
    eps: float = 1e-5,
) -> float:
    """
    Worst relative error between reverse-mode gradients of `f` and central
    finite differences, taken over every coordinate of every parameter.

    Relative error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-6).

    """
    if not 1e-7 <= eps <= 1e-3:
        raise ConfigurationError(f"eps must lie in [1e-7, 1e-3], got {eps}")

    def _evaluate(values: Dict[str, numpy.ndarray], requires_grad: bool):
        tape = Tape()
        leaves = {name: tape.leaf(v, requires_grad=requires_grad, name=name) for name, v in values.items()}
        return f(leaves)

    base = {name: numpy.array(v, dtype=numpy.float64) for name, v in params.items()}
    loss = _evaluate(base, True)
    if not numpy.all(numpy.isfinite(loss.values)):
        raise ContractError("grad_check: loss is not finite at the base point")
    analytic = backward(loss)

    worst = 0.0
    for name, values in base.items():
        for index in numpy.ndindex(*values.shape):
            original = values[index]
            values[index] = original + eps
            plus = _evaluate(base, False).item()
            values[index] = original - eps
            minus = _evaluate(base, False).item()
            values[index] = original
            numeric = (plus - minus) / (2.0 * eps)
            exact = float(analytic[name][index])
            if not (numpy.isfinite(numeric) and numpy.isfinite(exact)):
                raise ContractError(
                    f"grad_check: non-finite value at {name}{list(index)} "
                    f"(analytic={exact}, numeric={numeric})"
                )
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), RELATIVE_ERROR_FLOOR)
            worst = max(worst, error)
    return worst
