"""
Dense tensors with tape-based reverse-mode autodiff, plus Adam.

Everything is float64. A Tensor wraps a read-only numpy array; primitives
produce new tensors and, while a ComputationTape is active and any input
requires grad, append a record to it. ``backward`` walks one tape in reverse
exactly once and accumulates gradients into the leaf tensors.

Shape rules per primitive:
    matmul        a[..., n, k] @ b[..., k, m] -> [..., n, m], leading dims broadcast
    add/sub/mul   numpy broadcasting
    concat        equal shapes except along ``axis``
    reshape       same number of elements
    relu, leaky_relu, sigmoid, tanh, exp, abs
                  elementwise, shape preserved
    row_softmax   softmax over the last axis; ``mask`` broadcastable to the input,
                  False entries get weight exactly 0
    sum, mean     reduce over ``axis`` (all axes when None)
"""

import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from gsmt_errors import ConfigError, ContractError, DimensionError, NumericError, TapeIntegrityError

logger = logging.getLogger("gsmt.numerics")

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


class Tensor:
    """Immutable float64 array with an optional gradient buffer"""

    def __init__(self, data: Any, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite value in tensor of shape {arr.shape}")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._record: Optional["TapeRecord"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)


def as_tensor(value: ArrayLike) -> Tensor:
    """Wrap a constant; tensors pass through unchanged"""
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class TapeRecord:
    """One primitive application with what its adjoint needs"""

    op_kind: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    saved: Dict[str, Any]
    attrs: Dict[str, Any]
    tape: "ComputationTape"
    index: int


class ComputationTape:
    """Ordered record of primitive applications, used as a context manager.

    Records are appended in execution order, so inputs always precede the
    operations that consume them. A tape is consumed by one ``backward`` call;
    a second call raises TapeIntegrityError.
    """

    _local = threading.local()

    def __init__(self):
        self.records: List[TapeRecord] = []
        self.consumed = False

    def __enter__(self) -> "ComputationTape":
        self._stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = self._stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self) -> int:
        return len(self.records)

    @classmethod
    def _stack(cls) -> List["ComputationTape"]:
        if not hasattr(cls._local, "stack"):
            cls._local.stack = []
        return cls._local.stack

    @classmethod
    def active(cls) -> Optional["ComputationTape"]:
        stack = cls._stack()
        return stack[-1] if stack else None

    def record(self, op_kind: str, inputs: Tuple[Tensor, ...], output: Tensor, saved: Dict, attrs: Dict):
        if self.consumed:
            raise TapeIntegrityError("cannot record on a tape that was already used for backward")
        rec = TapeRecord(op_kind, inputs, output, saved, attrs, self, len(self.records))
        self.records.append(rec)
        output._record = rec

    def reset(self):
        self.records.clear()
        self.consumed = False


# ---------------------------------------------------------------------------
# primitive kernels: forward(datas, attrs) -> (out, saved)
#                    backward(g, datas, out, saved, attrs) -> [grad per input]
# ---------------------------------------------------------------------------


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    g = grad
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_check(op_kind: str, shapes: Sequence[Tuple[int, ...]]):
    try:
        np.broadcast_shapes(*shapes)
    except ValueError:
        raise DimensionError(f"{op_kind}: shapes {list(shapes)} do not broadcast") from None


def _matmul_fwd(datas, attrs):
    a, b = datas
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul: needs at least 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dims mismatch {a.shape} @ {b.shape}")
    _broadcast_check("matmul", [a.shape[:-2], b.shape[:-2]])
    return np.matmul(a, b), {}


def _matmul_bwd(g, datas, out, saved, attrs):
    a, b = datas
    ga = np.matmul(g, np.swapaxes(b, -1, -2))
    gb = np.matmul(np.swapaxes(a, -1, -2), g)
    return [_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)]


def _add_fwd(datas, attrs):
    _broadcast_check("add", [d.shape for d in datas])
    return datas[0] + datas[1], {}


def _add_bwd(g, datas, out, saved, attrs):
    return [_unbroadcast(g, datas[0].shape), _unbroadcast(g, datas[1].shape)]


def _sub_fwd(datas, attrs):
    _broadcast_check("sub", [d.shape for d in datas])
    return datas[0] - datas[1], {}


def _sub_bwd(g, datas, out, saved, attrs):
    return [_unbroadcast(g, datas[0].shape), _unbroadcast(-g, datas[1].shape)]


def _mul_fwd(datas, attrs):
    _broadcast_check("mul", [d.shape for d in datas])
    return datas[0] * datas[1], {}


def _mul_bwd(g, datas, out, saved, attrs):
    a, b = datas
    return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]


def _concat_fwd(datas, attrs):
    axis = attrs.get("axis", -1)
    ndim = datas[0].ndim
    ax = axis % ndim if ndim else 0
    for d in datas[1:]:
        if d.ndim != ndim or any(s != t for i, (s, t) in enumerate(zip(d.shape, datas[0].shape)) if i != ax):
            raise DimensionError(f"concat: shapes {[x.shape for x in datas]} differ off axis {axis}")
    return np.concatenate(datas, axis=ax), {"sizes": [d.shape[ax] for d in datas], "axis": ax}


def _concat_bwd(g, datas, out, saved, attrs):
    bounds = np.cumsum(saved["sizes"])[:-1]
    return list(np.split(g, bounds, axis=saved["axis"]))


def _reshape_fwd(datas, attrs):
    (x,) = datas
    shape = tuple(attrs["shape"])
    try:
        return x.reshape(shape), {}
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {x.shape} into {shape}") from None


def _reshape_bwd(g, datas, out, saved, attrs):
    return [g.reshape(datas[0].shape)]


def _relu_fwd(datas, attrs):
    (x,) = datas
    return np.where(x > 0, x, 0.0), {}


def _relu_bwd(g, datas, out, saved, attrs):
    return [g * (datas[0] > 0)]


def _leaky_relu_fwd(datas, attrs):
    (x,) = datas
    slope = attrs.get("slope", 0.2)
    return np.where(x > 0, x, slope * x), {}


def _leaky_relu_bwd(g, datas, out, saved, attrs):
    slope = attrs.get("slope", 0.2)
    return [g * np.where(datas[0] > 0, 1.0, slope)]


def _sigmoid_fwd(datas, attrs):
    (x,) = datas
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out, {}


def _sigmoid_bwd(g, datas, out, saved, attrs):
    return [g * out * (1.0 - out)]


def _tanh_fwd(datas, attrs):
    return np.tanh(datas[0]), {}


def _tanh_bwd(g, datas, out, saved, attrs):
    return [g * (1.0 - out * out)]


def _exp_fwd(datas, attrs):
    return np.exp(datas[0]), {}


def _exp_bwd(g, datas, out, saved, attrs):
    return [g * out]


def _abs_fwd(datas, attrs):
    return np.abs(datas[0]), {}


def _abs_bwd(g, datas, out, saved, attrs):
    return [g * np.sign(datas[0])]


def _softmax_fwd(datas, attrs):
    (x,) = datas
    mask = attrs.get("mask")
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        _broadcast_check("row_softmax", [x.shape, mask.shape])
        mask = np.broadcast_to(mask, x.shape)
    if x.ndim == 0 or not np.all(mask.any(axis=-1)):
        raise ContractError("row_softmax: a row has no unmasked entry")
    row_max = np.max(np.where(mask, x, -np.inf), axis=-1, keepdims=True)
    e = np.where(mask, np.exp(np.where(mask, x, row_max) - row_max), 0.0)
    return e / e.sum(axis=-1, keepdims=True), {}


def _softmax_bwd(g, datas, out, saved, attrs):
    inner = np.sum(g * out, axis=-1, keepdims=True)
    return [out * (g - inner)]


def _sum_fwd(datas, attrs):
    return np.sum(datas[0], axis=attrs.get("axis"), keepdims=attrs.get("keepdims", False)), {}


def _expand_reduced(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        for a in sorted(ax % len(shape) for ax in axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def _sum_bwd(g, datas, out, saved, attrs):
    x = datas[0]
    return [np.array(_expand_reduced(g, x.shape, attrs.get("axis"), attrs.get("keepdims", False)))]


def _mean_fwd(datas, attrs):
    x = datas[0]
    axis = attrs.get("axis")
    if x.size == 0:
        raise ContractError("mean: empty tensor")
    out = np.mean(x, axis=axis, keepdims=attrs.get("keepdims", False))
    return out, {"count": x.size // max(1, np.size(out))}


def _mean_bwd(g, datas, out, saved, attrs):
    x = datas[0]
    grad = _expand_reduced(g, x.shape, attrs.get("axis"), attrs.get("keepdims", False))
    return [np.array(grad) / saved["count"]]


@dataclass(frozen=True)
class Primitive:
    forward: Callable
    backward: Callable
    arity: int


_PRIMITIVES: Dict[str, Primitive] = {
    "matmul": Primitive(_matmul_fwd, _matmul_bwd, 2),
    "add": Primitive(_add_fwd, _add_bwd, 2),
    "sub": Primitive(_sub_fwd, _sub_bwd, 2),
    "mul": Primitive(_mul_fwd, _mul_bwd, 2),
    "concat": Primitive(_concat_fwd, _concat_bwd, -1),
    "reshape": Primitive(_reshape_fwd, _reshape_bwd, 1),
    "relu": Primitive(_relu_fwd, _relu_bwd, 1),
    "leaky_relu": Primitive(_leaky_relu_fwd, _leaky_relu_bwd, 1),
    "sigmoid": Primitive(_sigmoid_fwd, _sigmoid_bwd, 1),
    "tanh": Primitive(_tanh_fwd, _tanh_bwd, 1),
    "exp": Primitive(_exp_fwd, _exp_bwd, 1),
    "abs": Primitive(_abs_fwd, _abs_bwd, 1),
    "row_softmax": Primitive(_softmax_fwd, _softmax_bwd, 1),
    "sum": Primitive(_sum_fwd, _sum_bwd, 1),
    "mean": Primitive(_mean_fwd, _mean_bwd, 1),
}

PRIMITIVE_KINDS = tuple(sorted(_PRIMITIVES))


def primitive_forward(op_kind: str, inputs: Sequence[ArrayLike], **attrs) -> Tensor:
    """Apply a primitive and record it on the active tape when needed.

    Raises:
        ContractError: unknown primitive or wrong input count
        DimensionError: shapes violate the primitive's rule
        NumericError: the result is not finite
    """
    prim = _PRIMITIVES.get(op_kind)
    if prim is None:
        raise ContractError(f"unknown primitive: {op_kind}")
    tensors = tuple(as_tensor(t) for t in inputs)
    if prim.arity >= 0 and len(tensors) != prim.arity:
        raise ContractError(f"{op_kind}: expects {prim.arity} inputs, got {len(tensors)}")
    if not tensors:
        raise ContractError(f"{op_kind}: no inputs")

    with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
        out_data, saved = prim.forward([t.data for t in tensors], attrs)
    try:
        out = Tensor(out_data)
    except NumericError:
        raise NumericError(f"{op_kind}: produced a non-finite value") from None

    tape = ComputationTape.active()
    if tape is not None and any(t.requires_grad for t in tensors):
        out.requires_grad = True
        tape.record(op_kind, tensors, out, saved, attrs)
    return out


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return primitive_forward("matmul", [a, b])


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    return primitive_forward("add", [a, b])


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    return primitive_forward("sub", [a, b])


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return primitive_forward("mul", [a, b])


def concat(tensors: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    return primitive_forward("concat", list(tensors), axis=axis)


def reshape(x: ArrayLike, shape: Sequence[int]) -> Tensor:
    return primitive_forward("reshape", [x], shape=tuple(shape))


def relu(x: ArrayLike) -> Tensor:
    return primitive_forward("relu", [x])


def leaky_relu(x: ArrayLike, slope: float = 0.2) -> Tensor:
    return primitive_forward("leaky_relu", [x], slope=slope)


def sigmoid(x: ArrayLike) -> Tensor:
    return primitive_forward("sigmoid", [x])


def tanh(x: ArrayLike) -> Tensor:
    return primitive_forward("tanh", [x])


def exp(x: ArrayLike) -> Tensor:
    return primitive_forward("exp", [x])


def absolute(x: ArrayLike) -> Tensor:
    return primitive_forward("abs", [x])


def row_softmax(x: ArrayLike, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over the last axis; masked entries are excluded and get exactly 0"""
    return primitive_forward("row_softmax", [x], mask=mask)


def reduce_sum(x: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    return primitive_forward("sum", [x], axis=axis, keepdims=keepdims)


def reduce_mean(x: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    return primitive_forward("mean", [x], axis=axis, keepdims=keepdims)


def mae_loss(pred: ArrayLike, target: ArrayLike) -> Tensor:
    """mean(|pred - target|)"""
    return reduce_mean(absolute(sub(pred, target)))


def backward(loss: Tensor, tape: ComputationTape) -> Dict[Tensor, np.ndarray]:
    """Reverse pass over ``tape`` from a scalar ``loss``.

    Gradients accumulate additively across fan-out and into each leaf's
    ``grad`` buffer. Returns a mapping leaf tensor -> dLoss/dLeaf.

    Raises:
        ContractError: loss is not scalar
        TapeIntegrityError: loss or one of its inputs was not recorded on this
            tape, or the tape was already consumed
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, shape is {loss.shape}")
    if tape.consumed:
        raise TapeIntegrityError("tape already consumed by a previous backward call")
    rec = loss._record
    if rec is None or rec.tape is not tape:
        raise TapeIntegrityError("loss was not produced on this tape (detached tensor)")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: Dict[int, Tensor] = {}

    for record in reversed(tape.records[: rec.index + 1]):
        g = grads.pop(id(record.output), None)
        if g is None:
            continue
        prim = _PRIMITIVES[record.op_kind]
        input_grads = prim.backward(g, [t.data for t in record.inputs], record.output.data, record.saved, record.attrs)
        for tensor, gi in zip(record.inputs, input_grads):
            if gi is None or not tensor.requires_grad:
                continue
            if tensor._record is None:
                leaves[id(tensor)] = tensor
            elif tensor._record.tape is not tape:
                raise TapeIntegrityError(f"{record.op_kind}: input was recorded on a different tape")
            key = id(tensor)
            grads[key] = grads[key] + gi if key in grads else np.array(gi, dtype=np.float64)

    tape.consumed = True
    result: Dict[Tensor, np.ndarray] = {}
    for key, leaf in leaves.items():
        g = grads.get(key, np.zeros_like(leaf.data))
        leaf.grad = g if leaf.grad is None else leaf.grad + g
        result[leaf] = g
    return result


def gradient_check(
    function: Callable[[Any], Tensor],
    point: Union[np.ndarray, Dict[str, np.ndarray]],
    step: float = 1e-6,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``function`` receives a Tensor (or a dict of named Tensors when ``point``
    is a dict) and returns a scalar Tensor. The error per coordinate is
    |g_ad - g_fd| / max(1, |g_fd|). With ``max_coords`` only a seeded random
    subset of coordinates is differenced.
    """
    if step <= 0:
        raise ContractError(f"gradient_check: step must be > 0, got {step}")
    named = dict(point) if isinstance(point, dict) else {"x": np.asarray(point, dtype=np.float64)}
    named = {k: np.array(v, dtype=np.float64) for k, v in named.items()}

    def call(arrays: Dict[str, np.ndarray], requires_grad: bool):
        tensors = {k: Tensor(v, requires_grad=requires_grad) for k, v in arrays.items()}
        arg = tensors if isinstance(point, dict) else tensors["x"]
        return tensors, function(arg)

    with ComputationTape() as tape:
        leaves, out = call(named, True)
    if out.size != 1:
        raise ContractError("gradient_check: function must be scalar-valued")
    if out.requires_grad:
        backward(out, tape)
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}

    coords = [(k, idx) for k, v in named.items() for idx in np.ndindex(v.shape)]
    if max_coords is not None and len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(picked)]

    worst = 0.0
    for key, idx in coords:
        values = []
        for sign in (1.0, -1.0):
            shifted = {k: v.copy() for k, v in named.items()}
            shifted[key][idx] += sign * step
            _, f = call(shifted, False)
            val = f.item()
            if not np.isfinite(val):
                raise NumericError(f"gradient_check: non-finite evaluation at {key}{idx}")
            values.append(val)
        g_fd = (values[0] - values[1]) / (2.0 * step)
        g_ad = float(analytic[key][idx])
        worst = max(worst, abs(g_ad - g_fd) / max(1.0, abs(g_fd)))
    logger.debug(f"gradient_check over {len(coords)} coordinates: max rel error {worst:.3e}")
    return worst


@dataclass
class AdamState:
    """Adam moments, step counter and hyperparameters"""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, params: Dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        zeros = {k: np.zeros_like(np.asarray(p, dtype=np.float64)) for k, p in params.items()}
        return cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps, t=0, m=zeros, v={k: z.copy() for k, z in zeros.items()})

    def validate(self):
        if self.eps <= 0:
            raise ConfigError(f"adam eps must be > 0, got {self.eps}")
        if self.lr <= 0:
            raise ConfigError(f"adam lr must be > 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}")


def adam_step(
    params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are not mutated."""
    state.validate()
    if set(params) != set(grads) or set(params) != set(state.m) or set(params) != set(state.v):
        raise ContractError("adam_step: params, grads and state must share parameter names")

    t = state.t + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_params: Dict[str, np.ndarray] = {}
    new_m: Dict[str, np.ndarray] = {}
    new_v: Dict[str, np.ndarray] = {}
    for name in sorted(params):
        p = np.asarray(params[name], dtype=np.float64)
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape or state.m[name].shape != p.shape or state.v[name].shape != p.shape:
            raise ContractError(f"adam_step: shape mismatch for {name}: param {p.shape}, grad {g.shape}")
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_params[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name] = m
        new_v[name] = v

    return new_params, AdamState(state.lr, state.beta1, state.beta2, state.eps, t, new_m, new_v)
