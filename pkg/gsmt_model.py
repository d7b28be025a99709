"""
GSMT predictor: graph attention encoder feeding a seq2seq recurrent network.

Node tensors are shaped ``[..., N, d]`` with optional leading batch dims;
rows are nodes and weights multiply from the right (``x @ W``). Each input
frame passes through the attention stack with the window's normalized fused
graph, the encoder cell runs over the per-frame embeddings node by node with
shared weights, and the decoder emits L_out (lat, lon) frames
autoregressively through a linear head.
"""

import logging
import math
from dataclasses import dataclass, field, fields, is_dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from gsmt_errors import ConfigError, ContractError, DimensionError, NumericError, TrainingError
from gsmt_graphs import GraphConfig, batch_gamma
from gsmt_ingest import DatasetSplit, WindowSample
from gsmt_numerics import (
    AdamState,
    ComputationTape,
    Tensor,
    adam_step,
    add,
    as_tensor,
    backward,
    concat,
    leaky_relu,
    mae_loss,
    matmul,
    mul,
    relu,
    reshape,
    row_softmax,
    sigmoid,
    sub,
    tanh,
)

logger = logging.getLogger("gsmt.model")

CELL_KINDS = ("lstm", "gru")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class ModelConfig:
    hidden_width: int = 32
    gat_layers: int = 3
    L_in: int = 10
    L_out: int = 5
    leaky_relu_slope: float = 0.2
    teacher_forcing_ratio: float = 0.5
    cell_kind: str = "lstm"
    seed: int = 42

    def validate(self):
        for name in ("hidden_width", "gat_layers", "L_in", "L_out"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.teacher_forcing_ratio <= 1.0:
            raise ConfigError(f"model.teacher_forcing_ratio must be in [0, 1], got {self.teacher_forcing_ratio}")
        if self.leaky_relu_slope < 0:
            raise ConfigError(f"model.leaky_relu_slope must be >= 0, got {self.leaky_relu_slope}")
        if self.cell_kind not in CELL_KINDS:
            raise ConfigError(f"model.cell_kind must be one of {CELL_KINDS}, got {self.cell_kind!r}")


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 20
    seed: int = 42

    def validate(self):
        if self.epochs < 0:
            raise ConfigError(f"train.epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ConfigError(f"train.patience must be >= 1, got {self.patience}")
        AdamState(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps).validate()


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

Leaf = Union[np.ndarray, Tensor]


@dataclass
class GatLayerParams:
    """Attention MLP over (u_i, u_j, gamma_ij) and the residual update network"""

    attn_wa: Leaf
    attn_wb: Leaf
    attn_wg: Leaf
    attn_b: Leaf
    attn_wo: Leaf
    attn_bo: Leaf
    w1: Leaf
    b1: Leaf
    w2: Leaf
    b2: Leaf


@dataclass
class GatStack:
    proj_w: Leaf
    proj_b: Leaf
    layers: List[GatLayerParams] = field(default_factory=list)


@dataclass
class LstmCellParams:
    w_i: Leaf
    u_i: Leaf
    b_i: Leaf
    w_f: Leaf
    u_f: Leaf
    b_f: Leaf
    w_o: Leaf
    u_o: Leaf
    b_o: Leaf
    w_c: Leaf
    u_c: Leaf
    b_c: Leaf


@dataclass
class GruCellParams:
    w_z: Leaf
    u_z: Leaf
    b_z: Leaf
    w_r: Leaf
    u_r: Leaf
    b_r: Leaf
    w_h: Leaf
    u_h: Leaf
    b_h: Leaf


CellParams = Union[LstmCellParams, GruCellParams]


@dataclass
class Seq2SeqParams:
    encoder: CellParams
    decoder: CellParams
    din_w: Leaf
    din_b: Leaf
    w_y: Leaf
    b_y: Leaf


@dataclass
class ModelParams:
    gat: GatStack
    seq2seq: Seq2SeqParams

    def flatten(self) -> Dict[str, Leaf]:
        """Dotted name -> leaf, e.g. ``gat.layers.0.w1``"""
        out: Dict[str, Leaf] = {}

        def collect(name: str, value: Leaf) -> Leaf:
            out[name] = value
            return value

        _walk(self, "", collect)
        return out

    def map(self, fn: Callable[[str, Leaf], Leaf]) -> "ModelParams":
        return _walk(self, "", fn)

    def with_values(self, values: Dict[str, Any]) -> "ModelParams":
        expected = set(self.flatten())
        if set(values) != expected:
            missing = sorted(expected - set(values))
            extra = sorted(set(values) - expected)
            raise ContractError(f"parameter names differ: missing {missing}, unexpected {extra}")
        return self.map(lambda name, _: values[name])

    def numpy(self) -> Dict[str, np.ndarray]:
        return {k: (v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)) for k, v in self.flatten().items()}


def _walk(obj: Any, prefix: str, fn: Callable[[str, Leaf], Leaf]) -> Any:
    kwargs = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        name = f"{prefix}{f.name}"
        if is_dataclass(value):
            kwargs[f.name] = _walk(value, name + ".", fn)
        elif isinstance(value, list):
            kwargs[f.name] = [_walk(item, f"{name}.{i}.", fn) for i, item in enumerate(value)]
        else:
            kwargs[f.name] = fn(name, value)
    return type(obj)(**kwargs)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape: Tuple[int, ...]) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _init_cell(rng: np.random.Generator, kind: str, d_in: int, h: int) -> CellParams:
    if kind == "lstm":
        gates = {}
        for g in ("i", "f", "o", "c"):
            gates[f"w_{g}"] = _glorot(rng, d_in, h, (d_in, h))
            gates[f"u_{g}"] = _glorot(rng, h, h, (h, h))
            gates[f"b_{g}"] = np.ones(h) if g == "f" else np.zeros(h)
        return LstmCellParams(**gates)
    gates = {}
    for g in ("z", "r", "h"):
        gates[f"w_{g}"] = _glorot(rng, d_in, h, (d_in, h))
        gates[f"u_{g}"] = _glorot(rng, h, h, (h, h))
        gates[f"b_{g}"] = np.zeros(h)
    return GruCellParams(**gates)


def init_params(config: ModelConfig) -> ModelParams:
    """Glorot-uniform weights, zero biases, forget-gate bias 1; seeded"""
    config.validate()
    rng = np.random.default_rng(config.seed)
    h = config.hidden_width
    layers = []
    for _ in range(config.gat_layers):
        layers.append(
            GatLayerParams(
                attn_wa=_glorot(rng, h, h, (h, h)),
                attn_wb=_glorot(rng, h, h, (h, h)),
                attn_wg=_glorot(rng, 1, h, (h,)),
                attn_b=np.zeros(h),
                attn_wo=_glorot(rng, h, 1, (h, 1)),
                attn_bo=np.zeros(1),
                w1=_glorot(rng, h, h, (h, h)),
                b1=np.zeros(h),
                w2=_glorot(rng, h, h, (h, h)),
                b2=np.zeros(h),
            )
        )
    gat = GatStack(proj_w=_glorot(rng, 3, h, (3, h)), proj_b=np.zeros(h), layers=layers)
    seq2seq = Seq2SeqParams(
        encoder=_init_cell(rng, config.cell_kind, h, h),
        decoder=_init_cell(rng, config.cell_kind, h, h),
        din_w=_glorot(rng, 3, h, (3, h)),
        din_b=np.zeros(h),
        w_y=_glorot(rng, h, 2, (h, 2)),
        b_y=np.zeros(2),
    )
    return ModelParams(gat, seq2seq)


def params_from_arrays(arrays: Dict[str, np.ndarray], config: ModelConfig) -> ModelParams:
    """Rebuild structured parameters from a flat name -> array mapping"""
    template = init_params(config)
    shapes = {k: v.shape for k, v in template.flatten().items()}
    for name, arr in arrays.items():
        if name in shapes and np.shape(arr) != shapes[name]:
            raise DimensionError(f"parameter {name} has shape {np.shape(arr)}, expected {shapes[name]}")
    return template.with_values({k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()})


def as_tensors(params: ModelParams, requires_grad: bool = False) -> ModelParams:
    return params.map(lambda _, v: Tensor(v, requires_grad=requires_grad))


# ---------------------------------------------------------------------------
# graph attention
# ---------------------------------------------------------------------------


def _width(x: Tensor) -> int:
    return int(x.shape[-1])


def gat_scores(U_prev: Tensor, gamma: np.ndarray, layer: GatLayerParams, slope: float = 0.2) -> Tensor:
    """e_ij = wo . leaky_relu(Wa u_i + Wb u_j + wg gamma_ij + b) + bo for every ordered pair"""
    U_prev = as_tensor(U_prev)
    gamma = np.asarray(gamma, dtype=np.float64)
    d = _width(U_prev)
    wa = as_tensor(layer.attn_wa)
    if wa.shape[0] != d:
        raise DimensionError(f"gat_scores: features have width {d}, attention expects {wa.shape[0]}")
    n = int(U_prev.shape[-2])
    if gamma.shape[-2:] != (n, n):
        raise DimensionError(f"gat_scores: gamma shape {gamma.shape} does not match {n} nodes")
    a = int(wa.shape[1])
    lead = U_prev.shape[:-2]
    src = reshape(matmul(U_prev, wa), lead + (n, 1, a))
    dst = reshape(matmul(U_prev, layer.attn_wb), lead + (1, n, a))
    edge = mul(gamma[..., None], layer.attn_wg)
    hidden = leaky_relu(add(add(add(src, dst), edge), layer.attn_b), slope)
    scores = matmul(hidden, layer.attn_wo)
    return add(reshape(scores, scores.shape[:-1]), layer.attn_bo)


def gat_weights(E: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over unmasked neighbours; masked entries are exactly 0"""
    return row_softmax(E, mask=mask)


def gat_aggregate(alpha: Tensor, U_prev: Tensor) -> Tensor:
    """v_i = sum_j alpha_ij u_j"""
    alpha, U_prev = as_tensor(alpha), as_tensor(U_prev)
    if alpha.shape[-1] != U_prev.shape[-2]:
        raise DimensionError(f"gat_aggregate: alpha {alpha.shape} vs features {U_prev.shape}")
    return matmul(alpha, U_prev)


def gat_update(U_prev: Tensor, V: Tensor, layer: GatLayerParams) -> Tensor:
    """u_i = u_i_prev + relu(relu(v_i W1 + b1) W2 + b2)"""
    U_prev, V = as_tensor(U_prev), as_tensor(V)
    w2 = as_tensor(layer.w2)
    if U_prev.shape != V.shape or w2.shape[1] != _width(U_prev):
        raise DimensionError(f"gat_update: residual needs equal widths, got {U_prev.shape}, {V.shape}, W2 {w2.shape}")
    inner = relu(add(matmul(V, layer.w1), layer.b1))
    return add(U_prev, relu(add(matmul(inner, w2), layer.b2)))


def gat_layer(U_prev: Tensor, gamma: np.ndarray, layer: GatLayerParams, slope: float = 0.2) -> Tensor:
    E = gat_scores(U_prev, gamma, layer, slope)
    alpha = gat_weights(E, np.asarray(gamma) > 0)
    return gat_update(U_prev, gat_aggregate(alpha, U_prev), layer)


def gat_forward(frame: Union[np.ndarray, Tensor], gamma: np.ndarray, stack: GatStack, slope: float = 0.2) -> Tensor:
    """Input projection, then each attention layer in order"""
    frame = as_tensor(frame)
    if _width(frame) != as_tensor(stack.proj_w).shape[0]:
        raise DimensionError(f"gat_forward: frame width {_width(frame)} vs projection {as_tensor(stack.proj_w).shape}")
    U = add(matmul(frame, stack.proj_w), stack.proj_b)
    for layer in stack.layers:
        U = gat_layer(U, gamma, layer, slope)
    return U


# ---------------------------------------------------------------------------
# recurrent cells
# ---------------------------------------------------------------------------


def _gate(x: Tensor, h: Tensor, w: Leaf, u: Leaf, b: Leaf) -> Tensor:
    return add(add(matmul(x, w), matmul(h, u)), b)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, p: LstmCellParams) -> Tuple[Tensor, Tensor]:
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    if _width(x) != as_tensor(p.w_i).shape[0] or _width(h) != as_tensor(p.u_i).shape[0]:
        raise DimensionError(f"lstm_cell: input {x.shape} / state {h.shape} do not match gate weights")
    i = sigmoid(_gate(x, h, p.w_i, p.u_i, p.b_i))
    f = sigmoid(_gate(x, h, p.w_f, p.u_f, p.b_f))
    o = sigmoid(_gate(x, h, p.w_o, p.u_o, p.b_o))
    g = tanh(_gate(x, h, p.w_c, p.u_c, p.b_c))
    c_next = add(mul(f, c), mul(i, g))
    return mul(o, tanh(c_next)), c_next


def gru_cell(x: Tensor, h: Tensor, p: GruCellParams) -> Tensor:
    x, h = as_tensor(x), as_tensor(h)
    if _width(x) != as_tensor(p.w_z).shape[0] or _width(h) != as_tensor(p.u_z).shape[0]:
        raise DimensionError(f"gru_cell: input {x.shape} / state {h.shape} do not match gate weights")
    z = sigmoid(_gate(x, h, p.w_z, p.u_z, p.b_z))
    r = sigmoid(_gate(x, h, p.w_r, p.u_r, p.b_r))
    candidate = tanh(add(add(matmul(x, p.w_h), matmul(mul(r, h), p.u_h)), p.b_h))
    return add(mul(sub(1.0, z), h), mul(z, candidate))


def _step(x: Tensor, h: Tensor, c: Optional[Tensor], cell: CellParams) -> Tuple[Tensor, Optional[Tensor]]:
    if isinstance(cell, LstmCellParams):
        return lstm_cell(x, h, c, cell)
    return gru_cell(x, h, cell), None


def encode(embeddings: Sequence[Tensor], cell: CellParams) -> Tuple[Tensor, Optional[Tensor]]:
    """Run the encoder cell over per-frame embeddings; returns final (h, c)"""
    if not embeddings:
        raise ContractError("encode: empty embedding sequence")
    first = as_tensor(embeddings[0])
    width = int(as_tensor(cell.w_i if isinstance(cell, LstmCellParams) else cell.w_z).shape[1])
    h = Tensor(np.zeros(first.shape[:-1] + (width,)))
    c = Tensor(np.zeros(h.shape)) if isinstance(cell, LstmCellParams) else None
    for x in embeddings:
        h, c = _step(as_tensor(x), h, c, cell)
    return h, c


def decode(
    h: Tensor,
    c: Optional[Tensor],
    L_out: int,
    params: Seq2SeqParams,
    last_frame: np.ndarray,
    targets: Optional[np.ndarray] = None,
    teacher_forcing_ratio: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> List[Tensor]:
    """Autoregressive decoder; returns L_out tensors of shape [..., N, 2].

    The first input is the last observed (lat, lon, speed) frame. Later inputs
    are the previous prediction with the last observed speed, or the target
    frame when teacher forcing fires for that step.
    """
    if L_out < 1:
        raise ContractError(f"decode: L_out must be >= 1, got {L_out}")
    last_frame = np.asarray(last_frame, dtype=np.float64)
    speed = last_frame[..., 2:3]
    forcing = targets is not None and teacher_forcing_ratio > 0
    if forcing and rng is None:
        raise ContractError("decode: teacher forcing needs an rng")

    x_in: Union[np.ndarray, Tensor] = last_frame
    outputs: List[Tensor] = []
    for t in range(L_out):
        x = add(matmul(x_in, params.din_w), params.din_b)
        h, c = _step(x, h, c, params.decoder)
        y = add(matmul(h, params.w_y), params.b_y)
        outputs.append(y)
        if forcing and rng.random() < teacher_forcing_ratio:
            x_in = np.concatenate([targets[..., t, :, :], speed], axis=-1)
        else:
            x_in = concat([y, speed], axis=-1)
    return outputs


def forward(
    inputs: np.ndarray,
    gamma: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
    targets: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Predict normalized (lat, lon) frames.

    ``inputs`` is L_in x N x 3 or B x L_in x N x 3 (normalized), ``gamma`` the
    matching N x N or B x N x N normalized fused graph. Output is
    L_out x N x 2 or B x L_out x N x 2. Teacher forcing applies only when
    ``targets`` and ``rng`` are given.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    single = inputs.ndim == 3
    if single:
        inputs, gamma = inputs[None], np.asarray(gamma)[None]
        targets = None if targets is None else np.asarray(targets)[None]
    if inputs.ndim != 4 or inputs.shape[-1] != 3:
        raise DimensionError(f"forward: inputs must be [B x] L_in x N x 3, got {inputs.shape}")
    if inputs.shape[1] != config.L_in:
        raise DimensionError(f"forward: got {inputs.shape[1]} input frames, model.L_in is {config.L_in}")

    embeddings = [gat_forward(inputs[:, t], gamma, params.gat, config.leaky_relu_slope) for t in range(config.L_in)]
    h, c = encode(embeddings, params.seq2seq.encoder)
    ratio = config.teacher_forcing_ratio if rng is not None else 0.0
    steps = decode(h, c, config.L_out, params.seq2seq, inputs[:, -1], targets, ratio, rng)

    b, n = inputs.shape[0], inputs.shape[2]
    out = concat([reshape(y, (b, 1, n, 2)) for y in steps], axis=1)
    return reshape(out, (config.L_out, n, 2)) if single else out


# ---------------------------------------------------------------------------
# batching, inference and training
# ---------------------------------------------------------------------------


@dataclass
class WindowBatch:
    inputs: np.ndarray
    gammas: np.ndarray
    targets: np.ndarray
    raw: np.ndarray

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    @classmethod
    def from_windows(cls, windows: Sequence[WindowSample], graph_config: GraphConfig) -> "WindowBatch":
        if not windows:
            raise ContractError("cannot batch an empty window list")
        raw = np.stack([w.input_raw for w in windows])
        return cls(
            inputs=np.stack([w.input_frames for w in windows]),
            gammas=batch_gamma(raw, graph_config),
            targets=np.stack([w.target_frames for w in windows]),
            raw=raw,
        )

    def take(self, idx: np.ndarray) -> "WindowBatch":
        return WindowBatch(self.inputs[idx], self.gammas[idx], self.targets[idx], self.raw[idx])


def predict(params: ModelParams, batch: WindowBatch, config: ModelConfig, batch_size: int = 256) -> np.ndarray:
    """Inference without teacher forcing; B x L_out x N x 2 normalized"""
    chunks = []
    for start in range(0, len(batch), batch_size):
        sl = slice(start, start + batch_size)
        chunks.append(forward(batch.inputs[sl], batch.gammas[sl], params, config).numpy())
    return np.concatenate(chunks, axis=0)


@dataclass
class TrainState:
    """Everything needed to continue training where it stopped"""

    params: Dict[str, np.ndarray]
    adam: AdamState
    best_params: Dict[str, np.ndarray]
    epochs_done: int = 0
    best_val: float = math.inf
    bad_epochs: int = 0
    history: List[Dict[str, Any]] = field(default_factory=list)


def initial_state(model_config: ModelConfig, train_config: TrainConfig) -> TrainState:
    arrays = init_params(model_config).numpy()
    adam = AdamState.create(arrays, lr=train_config.lr, beta1=train_config.beta1, beta2=train_config.beta2, eps=train_config.eps)
    return TrainState(params=arrays, adam=adam, best_params=dict(arrays))


def _batch_loss_and_grads(
    arrays: Dict[str, np.ndarray], template: ModelParams, batch: WindowBatch, config: ModelConfig, rng: np.random.Generator
) -> Tuple[float, Dict[str, np.ndarray]]:
    with ComputationTape() as tape:
        leaves = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
        params = template.with_values(leaves)
        pred = forward(batch.inputs, batch.gammas, params, config, targets=batch.targets, rng=rng)
        loss = mae_loss(pred, batch.targets)
    backward(loss, tape)
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}
    return loss.item(), grads


def train(
    split: DatasetSplit,
    model_config: ModelConfig,
    train_config: TrainConfig,
    graph_config: GraphConfig,
    state: Optional[TrainState] = None,
) -> TrainState:
    """Minimize MAE with Adam, keeping the best-validation parameters.

    ``train_config.epochs`` is the total epoch budget, so a resumed ``state``
    only runs the remainder. Shuffling and teacher forcing are keyed on
    (seed, epoch[, batch]) so a resumed run follows the uninterrupted one.

    Raises:
        TrainingError: empty partitions, or a non-finite loss (carries epoch)
    """
    model_config.validate()
    train_config.validate()
    state = state or initial_state(model_config, train_config)
    if train_config.epochs == 0 or state.epochs_done >= train_config.epochs:
        return state
    if not split.train or not split.validation:
        raise TrainingError(
            f"training needs non-empty train and validation sets (got {len(split.train)} / {len(split.validation)} windows)"
        )

    train_batch = WindowBatch.from_windows(split.train, graph_config)
    val_batch = WindowBatch.from_windows(split.validation, graph_config)
    template = init_params(model_config)
    n = len(train_batch)
    trace = [h["train_mae"] for h in state.history]

    while state.epochs_done < train_config.epochs and state.bad_epochs < train_config.patience:
        epoch = state.epochs_done + 1
        order = np.random.default_rng([train_config.seed, epoch]).permutation(n)
        arrays, adam = state.params, state.adam
        total = 0.0
        try:
            for b, start in enumerate(range(0, n, train_config.batch_size)):
                idx = order[start : start + train_config.batch_size]
                rng = np.random.default_rng([train_config.seed, epoch, b])
                loss, grads = _batch_loss_and_grads(arrays, template, train_batch.take(idx), model_config, rng)
                arrays, adam = adam_step(arrays, grads, adam)
                total += loss * len(idx)
                logger.debug(f"epoch {epoch} batch {b}: loss {loss:.6f}")
            val_pred = predict(template.with_values(arrays), val_batch, model_config)
        except NumericError as e:
            raise TrainingError(f"training diverged at epoch {epoch}: {e}", epoch=epoch, loss_trace=trace) from None

        train_mae = total / n
        val_mae = float(np.mean(np.abs(val_pred - val_batch.targets)))
        if not (math.isfinite(train_mae) and math.isfinite(val_mae)):
            raise TrainingError(
                f"training diverged at epoch {epoch}: loss is not finite", epoch=epoch, loss_trace=trace + [train_mae]
            )
        trace.append(train_mae)

        state.params, state.adam, state.epochs_done = arrays, adam, epoch
        if val_mae < state.best_val:
            state.best_val, state.best_params, state.bad_epochs = val_mae, dict(arrays), 0
        else:
            state.bad_epochs += 1
        state.history.append({"epoch": epoch, "train_mae": train_mae, "val_mae": val_mae})
        logger.info(f"Epoch {epoch}: train MAE {train_mae:.6f}, validation MAE {val_mae:.6f}")

    if state.bad_epochs >= train_config.patience:
        logger.info(f"Early stop after {state.epochs_done} epochs (best validation MAE {state.best_val:.6f})")
    return state
