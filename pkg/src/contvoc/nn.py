"""Small convolutional networks in numpy: ultrasound frame -> vocoder parameters.

Layout is channels-first (batch, channels, height, width). Convolutions are
3x3, stride 1, zero "same" padding, run as compiled direct loops; pooling is 2x2 with stride 2. Training uses float32,
while gradient checks run the same code in float64.
"""

from __future__ import annotations

import copy
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InsufficientDataError, NumericalError, ShapeError, SpecError, UnsupportedError
from ._conv import (
    conv_wide_backward,
    conv_wide_forward,
    maxpool2_backward,
    maxpool2_forward,
    maxpool_backward,
    maxpool_forward,
)
from .io import _read_bytes, atomic_open
from .mgc import repair_lsp
from .synth import BaselineVocoderParams, ContinuousVocoderParams
from .tracks import (
    DEFAULT_SAMPLE_RATE,
    BaselinePitchTrack,
    ContinuousPitchTrack,
    FrameGrid,
    MgcConfig,
    MgcLspTrack,
    MvfTrack,
    UltrasoundSequence,
)

CONV, MAXPOOL, DENSE, RELU, SIGMOID = 1, 2, 3, 4, 5


@dataclass(frozen=True)
class Task:
    name: str
    code: int
    output_dim: int
    head: str  # "linear" or "sigmoid"
    log_domain: bool = False
    voiced_only: bool = False


TASKS = {
    "vuv": Task("vuv", 1, 1, "sigmoid"),
    "f0": Task("f0", 2, 1, "linear", log_domain=True, voiced_only=True),
    "contf0": Task("contf0", 3, 1, "linear", log_domain=True),
    "mvf": Task("mvf", 4, 1, "linear", log_domain=True),
    "mgc": Task("mgc", 5, 25, "linear"),
}
_TASK_BY_CODE = {t.code: t for t in TASKS.values()}


def get_task(name: str) -> Task:
    try:
        return TASKS[name]
    except KeyError:
        raise SpecError(f"unknown task {name!r}; expected one of {sorted(TASKS)}") from None


@dataclass(frozen=True)
class NetworkSpec:
    input_height: int = 64
    input_width: int = 128
    conv_filters: tuple = (16, 8)
    kernel: int = 3
    pool: int = 2
    dense_units: tuple = (1000, 1000)
    output_dim: int = 1
    head: str = "linear"

    def __post_init__(self):
        if self.head not in ("linear", "sigmoid"):
            raise SpecError(f"head must be 'linear' or 'sigmoid', got {self.head!r}")
        if self.kernel % 2 != 1 or self.kernel < 1:
            raise SpecError("kernel size must be odd for same padding")
        if self.pool < 1 or self.output_dim < 1 or not self.conv_filters:
            raise SpecError("pool, output_dim and conv_filters must be positive")
        if any(f < 1 for f in self.conv_filters) or any(u < 1 for u in self.dense_units):
            raise SpecError("layer widths must be positive")
        scale = self.pool ** len(self.conv_filters)
        if self.input_height % scale or self.input_width % scale:
            raise SpecError(f"input {self.input_height}x{self.input_width} is not divisible by {scale}")

    @classmethod
    def for_task(cls, task: str | Task, **kw) -> "NetworkSpec":
        t = get_task(task) if isinstance(task, str) else task
        return cls(output_dim=t.output_dim, head=t.head, **kw)

    @property
    def flatten_dim(self) -> int:
        scale = self.pool ** len(self.conv_filters)
        return (self.input_height // scale) * (self.input_width // scale) * self.conv_filters[-1]

    def param_shapes(self) -> list[tuple]:
        """Weight and bias shape of every parameterized layer, in order."""
        shapes = []
        channels = 1
        for f in self.conv_filters:
            shapes += [(f, channels, self.kernel, self.kernel), (f,)]
            channels = f
        width = self.flatten_dim
        for u in (*self.dense_units, self.output_dim):
            shapes += [(width, u), (u,)]
            width = u
        return shapes

    def param_count(self) -> int:
        return sum(math.prod(s) for s in self.param_shapes())

    def layers(self) -> list[int]:
        kinds = []
        for _ in self.conv_filters:
            kinds += [CONV, RELU, MAXPOOL]
        for _ in self.dense_units:
            kinds += [DENSE, RELU]
        kinds.append(DENSE)
        if self.head == "sigmoid":
            kinds.append(SIGMOID)
        return kinds


@dataclass
class NetworkModel:
    """Weights plus the target normalization learned with them."""

    spec: NetworkSpec
    params: list
    task: str | None = None
    target_mean: np.ndarray | None = None
    target_std: np.ndarray | None = None

    def __post_init__(self):
        shapes = self.spec.param_shapes()
        if len(self.params) != len(shapes):
            raise SpecError(f"expected {len(shapes)} parameter arrays, got {len(self.params)}")
        for p, s in zip(self.params, shapes):
            if tuple(p.shape) != s:
                raise SpecError(f"parameter shape {p.shape} does not match spec {s}")
        d = self.spec.output_dim
        if self.target_mean is None:
            self.target_mean = np.zeros(d)
        if self.target_std is None:
            self.target_std = np.ones(d)
        self.target_mean = np.asarray(self.target_mean, dtype=np.float64).reshape(d)
        self.target_std = np.asarray(self.target_std, dtype=np.float64).reshape(d)

    @property
    def dtype(self):
        return self.params[0].dtype

    def astype(self, dtype) -> "NetworkModel":
        out = copy.deepcopy(self)
        out.params = [p.astype(dtype) for p in self.params]
        return out

    def denormalize(self, outputs: np.ndarray) -> np.ndarray:
        return np.asarray(outputs, dtype=np.float64) * self.target_std + self.target_mean


def build_network(spec: NetworkSpec, seed: int = 0, dtype=np.float32) -> NetworkModel:
    """He-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = []
    for shape in spec.param_shapes():
        if len(shape) == 1:
            params.append(np.zeros(shape, dtype=dtype))
            continue
        fan_in = math.prod(shape[1:]) if len(shape) == 4 else shape[0]
        limit = math.sqrt(6.0 / fan_in)
        params.append(rng.uniform(-limit, limit, size=shape).astype(dtype))
    return NetworkModel(spec, params)


# --- layer kernels ------------------------------------------------------------


def conv_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    """Same-padded stride-1 convolution of ``x`` (B, C, H, W); returns ``(out, cache)``."""
    b, c, h, w = x.shape
    p = weight.shape[2] // 2
    wp = w + 2 * p
    xflat = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))).reshape(b, c, -1)
    wide = conv_wide_forward(xflat, weight, bias, h, wp)
    out = np.ascontiguousarray(wide.reshape(b, -1, h, wp)[..., :w])
    return out, xflat


def conv_backward(dout: np.ndarray, xflat: np.ndarray, weight: np.ndarray, need_dx: bool = True):
    b, f, h, w = dout.shape
    c = xflat.shape[1]
    p = weight.shape[2] // 2
    wp = w + 2 * p
    gwide = np.zeros((b, f, h, wp), dtype=dout.dtype)
    gwide[..., :w] = dout
    dxflat, dw = conv_wide_backward(xflat, weight, gwide.reshape(b, f, -1), wp, need_dx)
    dx = dxflat.reshape(b, c, h + 2 * p, wp)[:, :, p:p + h, p:p + w] if need_dx else None
    return dx, dw, dout.sum(axis=(0, 2, 3))


def pool_forward(x: np.ndarray, s: int):
    """Non-overlapping ``s x s`` max pooling; ties go to the first tap in row order."""
    x = np.ascontiguousarray(x)
    return maxpool2_forward(x) if s == 2 else maxpool_forward(x, s)


def pool_backward(dout: np.ndarray, arg: np.ndarray, x_shape, s: int) -> np.ndarray:
    dout = np.ascontiguousarray(dout)
    if s == 2 and x_shape[2] == 2 * dout.shape[2] and x_shape[3] == 2 * dout.shape[3]:
        return maxpool2_backward(dout, arg)
    return maxpool_backward(dout, arg, x_shape[2], x_shape[3], s)


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


# --- forward / backward ---------------------------------------------------------


def prepare_batch(spec: NetworkSpec, batch, dtype=np.float32) -> np.ndarray:
    """Shape ``(B, H, W)`` images to ``(B, 1, H, W)``; uint8 is scaled to [0, 1]."""
    x = np.asarray(batch)
    if x.ndim == 2:
        x = x[None]
    if x.ndim == 4 and x.shape[-1] == 1:
        x = x[..., 0]
    if x.ndim != 3 or x.shape[1:] != (spec.input_height, spec.input_width):
        raise ShapeError(f"expected frames of {spec.input_height}x{spec.input_width}, got shape {x.shape}")
    if x.dtype == np.uint8:
        x = x.astype(dtype) / np.asarray(255.0, dtype=dtype)
    else:
        x = x.astype(dtype)
    if not np.all(np.isfinite(x)):
        raise NumericalError("input batch contains non-finite values")
    return x[:, None]


def _forward(m: NetworkModel, x: np.ndarray, keep: bool):
    caches = []
    params = iter(m.params)
    spec = m.spec
    for kind in spec.layers():
        if kind == CONV:
            w, b = next(params), next(params)
            x, xflat = conv_forward(x, w, b)
            caches.append((kind, (xflat, w)) if keep else None)
        elif kind == RELU:
            mask = x > 0
            x = x * mask
            caches.append((kind, mask) if keep else None)
        elif kind == MAXPOOL:
            shape = x.shape
            x, arg = pool_forward(x, spec.pool)
            caches.append((kind, (arg, shape)) if keep else None)
        elif kind == DENSE:
            w, b = next(params), next(params)
            shape = x.shape
            if x.ndim > 2:
                x = x.reshape(x.shape[0], -1)
            inp = x
            x = x @ w + b
            caches.append((kind, (inp, shape, w)) if keep else None)
        elif kind == SIGMOID:
            caches.append(None)
    return x, caches


def forward(m: NetworkModel, batch) -> np.ndarray:
    """Network outputs, shape ``(B, output_dim)``; a sigmoid head is applied."""
    z, _ = _forward(m, prepare_batch(m.spec, batch, m.dtype), keep=False)
    return _sigmoid(z) if m.spec.head == "sigmoid" else z


def predict_logits(m: NetworkModel, batch) -> np.ndarray:
    z, _ = _forward(m, prepare_batch(m.spec, batch, m.dtype), keep=False)
    return z


def _loss(z: np.ndarray, t: np.ndarray, kind: str):
    n = z.size
    if kind == "mse":
        diff = z - t
        return float(np.mean(diff * diff, dtype=np.float64)), (2.0 / n) * diff
    if kind == "xent":
        # binary cross-entropy on logits: softplus(z) - t z
        loss = np.logaddexp(0.0, z) - t * z
        return float(np.mean(loss, dtype=np.float64)), (_sigmoid(z) - t) / n
    raise SpecError(f"unknown loss {kind!r}")


def default_loss(spec: NetworkSpec) -> str:
    return "xent" if spec.head == "sigmoid" else "mse"


def loss_and_gradients(m: NetworkModel, batch, targets, loss: str | None = None):
    """Mean loss over the batch and its gradient for every parameter array.

    ``loss`` is ``"mse"`` (linear head) or ``"xent"`` (binary cross-entropy
    through the sigmoid head); the default follows the head.
    """
    loss = loss or default_loss(m.spec)
    x = prepare_batch(m.spec, batch, m.dtype)
    t = np.asarray(targets, dtype=m.dtype).reshape(x.shape[0], -1)
    if t.shape[1] != m.spec.output_dim:
        raise ShapeError(f"targets have {t.shape[1]} columns; network emits {m.spec.output_dim}")
    if not np.all(np.isfinite(t)):
        raise NumericalError("targets contain non-finite values")
    if loss == "xent" and np.any((t != 0) & (t != 1)):
        raise ShapeError("cross-entropy targets must be 0 or 1")
    z, caches = _forward(m, x, keep=True)
    value, d = _loss(z, t, loss)
    if not math.isfinite(value):
        raise NumericalError("loss is not finite")
    grads = [None] * len(m.params)
    slot = len(m.params)
    for i in range(len(caches) - 1, -1, -1):
        entry = caches[i]
        if entry is None:
            continue  # sigmoid: already folded into the loss gradient
        kind, cache = entry
        if kind == DENSE:
            inp, shape, w = cache
            slot -= 2
            grads[slot], grads[slot + 1] = inp.T @ d, d.sum(axis=0)
            d = (d @ w.T).reshape(shape)
        elif kind == RELU:
            d = d * cache
        elif kind == MAXPOOL:
            arg, shape = cache
            d = pool_backward(d, arg, shape, m.spec.pool)
        elif kind == CONV:
            xflat, w = cache
            slot -= 2
            d, grads[slot], grads[slot + 1] = conv_backward(d, xflat, w, need_dx=slot > 0)
    return value, grads


# --- data ---------------------------------------------------------------------


@dataclass
class FramePairDataset:
    """Frame-aligned (image, target) pairs with utterance labels.

    ``targets`` are raw values (log Hz for the pitch and MVF tasks).
    Normalization statistics are attached by :meth:`fit_statistics` from the
    training utterances only.
    """

    inputs: np.ndarray
    targets: np.ndarray
    utterances: np.ndarray
    voiced_mask: np.ndarray | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.targets.ndim == 1:
            self.targets = self.targets[:, None]
        self.utterances = np.asarray(self.utterances)
        n = self.inputs.shape[0]
        if self.inputs.ndim != 3:
            raise ShapeError(f"inputs must be (frames, height, width), got {self.inputs.shape}")
        if self.targets.shape[0] != n or self.utterances.shape[0] != n:
            raise ShapeError("inputs, targets and utterance labels must align frame by frame")
        if self.voiced_mask is not None:
            self.voiced_mask = np.asarray(self.voiced_mask, dtype=bool).reshape(-1)
            if self.voiced_mask.size != n:
                raise ShapeError("voiced_mask must have one flag per frame")

    def __len__(self):
        return self.inputs.shape[0]

    def select(self, ids, voiced_only: bool = False) -> np.ndarray:
        idx = np.isin(self.utterances, list(ids))
        if voiced_only and self.voiced_mask is not None:
            idx &= self.voiced_mask
        return np.flatnonzero(idx)

    def fit_statistics(self, train_ids, voiced_only: bool = False, classification: bool = False):
        d = self.targets.shape[1]
        if classification:
            self.mean, self.std = np.zeros(d), np.ones(d)
            return self
        idx = self.select(train_ids, voiced_only)
        if idx.size == 0:
            raise InsufficientDataError("no training frames to fit normalization statistics")
        t = self.targets[idx]
        self.mean = t.mean(axis=0)
        std = t.std(axis=0)
        self.std = np.where(std > 1e-8, std, 1.0)
        return self

    def normalized_targets(self, idx) -> np.ndarray:
        return (self.targets[idx] - self.mean) / self.std


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 100
    patience: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    loss: str | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise SpecError("max_epochs, patience and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise SpecError("learning_rate must be positive")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int = 0

    @property
    def epochs_run(self) -> int:
        return len(self.records)

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss"]
        lines += [f"{r.epoch},{r.train_loss:.9g},{r.val_loss:.9g}" for r in self.records]
        return "\n".join(lines) + "\n"


def evaluate_loss(m: NetworkModel, data: FramePairDataset, idx, loss: str, batch_size: int = 256) -> float:
    total = 0.0
    for start in range(0, idx.size, batch_size):
        sel = idx[start:start + batch_size]
        z = predict_logits(m, data.inputs[sel])
        value, _ = _loss(z, data.normalized_targets(sel).astype(z.dtype), loss)
        total += value * sel.size
    return total / idx.size


def train(m: NetworkModel, data: FramePairDataset, split, cfg: TrainConfig = TrainConfig(),
          voiced_only: bool = False, log=None):
    """Mini-batch Adam with early stopping on validation loss.

    Training stops after ``max_epochs`` or once ``patience`` epochs pass
    without a new best validation loss; the best snapshot is returned.
    With ``voiced_only`` both training and validation use voiced frames only.
    """
    loss = cfg.loss or default_loss(m.spec)
    classification = loss == "xent"
    if data.mean is None or data.std is None:
        data.fit_statistics(split.train, voiced_only, classification)
    tr = data.select(split.train, voiced_only)
    va = data.select(split.validation, voiced_only)
    if tr.size == 0 or va.size == 0:
        what = "voiced " if voiced_only else ""
        raise InsufficientDataError(f"empty {what}training or validation subset")

    model = copy.deepcopy(m)
    model.target_mean, model.target_std = data.mean.copy(), data.std.copy()
    rng = np.random.default_rng(cfg.seed)
    moments = [(np.zeros_like(p), np.zeros_like(p)) for p in model.params]
    step = 0
    best = copy.deepcopy(model)
    best_val = math.inf
    history = TrainHistory()
    for epoch in range(1, cfg.max_epochs + 1):
        order = tr[rng.permutation(tr.size)]
        running = 0.0
        for start in range(0, order.size, cfg.batch_size):
            sel = order[start:start + cfg.batch_size]
            value, grads = loss_and_gradients(model, data.inputs[sel], data.normalized_targets(sel), loss)
            running += value * sel.size
            step += 1
            c1 = 1 - cfg.beta1 ** step
            c2 = 1 - cfg.beta2 ** step
            for p, g, (mo, ve) in zip(model.params, grads, moments):
                mo *= cfg.beta1
                mo += (1 - cfg.beta1) * g
                ve *= cfg.beta2
                ve += (1 - cfg.beta2) * g * g
                p -= (cfg.learning_rate * (mo / c1) / (np.sqrt(ve / c2) + cfg.eps)).astype(p.dtype)
        val = evaluate_loss(model, data, va, loss)
        history.records.append(EpochRecord(epoch, running / order.size, val))
        if log is not None:
            log(f"epoch {epoch}: train {running / order.size:.5f} val {val:.5f}")
        if not math.isfinite(val):
            raise NumericalError(f"validation loss diverged at epoch {epoch}")
        if val < best_val:
            best_val, best, history.best_epoch = val, copy.deepcopy(model), epoch
        elif epoch - history.best_epoch >= cfg.patience:
            break
    best.task = m.task
    return best, history


# --- persistence --------------------------------------------------------------

NNM_MAGIC = b"CVNN"
NNM_VERSION = 1
_SHAPE_FIELDS = {CONV: 4, MAXPOOL: 2, DENSE: 2, RELU: 0, SIGMOID: 0}
_TRAILER = struct.Struct("<4sHHHH")


def _layer_records(m: NetworkModel):
    params = iter(m.params)
    for kind in m.spec.layers():
        if kind == CONV or kind == DENSE:
            w, b = next(params), next(params)
            yield kind, w.shape, (w, b)
        elif kind == MAXPOOL:
            yield kind, (m.spec.pool, m.spec.pool), ()
        else:
            yield kind, (), ()


def model_bytes(m: NetworkModel) -> bytes:
    """``.nnm`` encoding: layers, then a trailer with input size, task and target statistics."""
    layers = list(_layer_records(m))
    parts = [struct.pack("<4sHH", NNM_MAGIC, NNM_VERSION, len(layers))]
    for kind, shape, arrays in layers:
        parts.append(struct.pack("<B", kind))
        parts.append(struct.pack(f"<{len(shape)}I", *shape))
        for a in arrays:
            parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    task = TASKS.get(m.task).code if m.task in TASKS else 0
    d = m.spec.output_dim
    parts.append(_TRAILER.pack(b"NORM", m.spec.input_height, m.spec.input_width, task, d))
    parts.append(np.asarray(m.target_mean, dtype="<f4").tobytes())
    parts.append(np.asarray(m.target_std, dtype="<f4").tobytes())
    return b"".join(parts)


def save_model(m: NetworkModel, path) -> None:
    data = model_bytes(m)
    with atomic_open(path) as fh:
        fh.write(data)


def load_model(path) -> NetworkModel:
    data = _read_bytes(path)
    try:
        return _parse_model(data)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated model file") from exc


def _parse_model(data: bytes) -> NetworkModel:
    magic, version, count = struct.unpack_from("<4sHH", data)
    if magic != NNM_MAGIC:
        raise FormatError(f"bad model magic {magic!r}")
    if version != NNM_VERSION:
        raise UnsupportedError(f"unsupported model version {version}")
    off = 8
    kinds, params, convs, dense_out, pool = [], [], [], [], 2
    for _ in range(count):
        (kind,) = struct.unpack_from("<B", data, off)
        off += 1
        if kind not in _SHAPE_FIELDS:
            raise FormatError(f"unknown layer kind {kind}")
        nf = _SHAPE_FIELDS[kind]
        shape = struct.unpack_from(f"<{nf}I", data, off)
        off += 4 * nf
        kinds.append(kind)
        if kind in (CONV, DENSE):
            bias_len = shape[0] if kind == CONV else shape[1]
            for s in (shape, (bias_len,)):
                n = math.prod(s)
                if off + 4 * n > len(data):
                    raise FormatError("model file truncated inside a weight block")
                params.append(np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(s).astype(np.float32))
                off += 4 * n
            (convs if kind == CONV else dense_out).append(shape[0] if kind == CONV else shape[1])
        elif kind == MAXPOOL:
            pool = shape[0]
    tag, height, width, task_code, d = _TRAILER.unpack_from(data, off)
    off += _TRAILER.size
    if tag != b"NORM":
        raise FormatError("model file lacks its normalization trailer")
    stats = np.frombuffer(data, dtype="<f4", count=2 * d, offset=off).astype(np.float64)
    if off + 8 * d != len(data):
        raise FormatError("trailing bytes after the model")
    spec = NetworkSpec(height, width, tuple(convs), params[0].shape[2], pool, tuple(dense_out[:-1]),
                       dense_out[-1], "sigmoid" if kinds[-1] == SIGMOID else "linear")
    if spec.layers() != kinds:
        raise FormatError("layer sequence does not match the supported architecture")
    task = _TASK_BY_CODE[task_code].name if task_code in _TASK_BY_CODE else None
    return NetworkModel(spec, params, task, stats[:d], stats[d:])


# --- gradient verification ----------------------------------------------------


def _loss_and_pattern(m: NetworkModel, x: np.ndarray, t: np.ndarray, loss: str):
    """Loss plus a fingerprint of every ReLU mask and pooling choice."""
    z, caches = _forward(m, x, keep=True)
    value, _ = _loss(z, t, loss)
    pattern = [c[1] if c[0] == RELU else c[1][0] for c in caches if c is not None and c[0] in (RELU, MAXPOOL)]
    return value, pattern


def _same_pattern(a, b) -> bool:
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def gradient_check(m: NetworkModel, batch, targets, loss: str | None = None, h: float = 1e-4,
                   entries_per_block: int = 12, seed: int = 0, floor: float = 1e-7) -> list[float]:
    """Max relative error of analytic vs central-difference gradients per block.

    The model is promoted to float64. In each block the largest-gradient
    entry plus random entries are probed until ``entries_per_block`` have
    been compared; relative error is ``|a - n| / max(|a|, |n|, floor)``.

    A probe whose +-h step flips a ReLU or changes a pooling winner straddles
    a kink where the loss is not differentiable; the central difference is
    meaningless there, so that probe is replaced by another entry.
    """
    loss = loss or default_loss(m.spec)
    m64 = m.astype(np.float64)
    x = prepare_batch(m64.spec, np.asarray(batch, dtype=np.float64), np.float64)
    t = np.asarray(targets, dtype=np.float64).reshape(x.shape[0], -1)
    _, grads = loss_and_gradients(m64, batch, targets, loss)
    _, base = _loss_and_pattern(m64, x, t, loss)
    rng = np.random.default_rng(seed)
    worst = []
    for p, g in zip(m64.params, grads):
        flat_p, flat_g = p.reshape(-1), g.reshape(-1)
        order = [int(np.argmax(np.abs(flat_g)))] + rng.permutation(flat_p.size).tolist()
        err, done = 0.0, set()
        for i in order:
            if len(done) >= min(entries_per_block, flat_p.size):
                break
            if i in done:
                continue
            keep = flat_p[i]
            flat_p[i] = keep + h
            up, pat_up = _loss_and_pattern(m64, x, t, loss)
            flat_p[i] = keep - h
            down, pat_down = _loss_and_pattern(m64, x, t, loss)
            flat_p[i] = keep
            if not (_same_pattern(pat_up, base) and _same_pattern(pat_down, base)):
                continue
            done.add(i)
            num = (up - down) / (2 * h)
            err = max(err, abs(num - flat_g[i]) / max(abs(num), abs(flat_g[i]), floor))
        if not done:
            raise NumericalError("every probed entry straddles a kink; use a smaller step")
        worst.append(err)
    return worst


# --- decoding predictions into tracks ------------------------------------------

CONTF0_LIMITS = (40.0, 800.0)


def _outputs(m: NetworkModel, uti: UltrasoundSequence, batch_size: int = 256) -> np.ndarray:
    if (uti.height, uti.width) != (m.spec.input_height, m.spec.input_width):
        raise ShapeError(f"model expects {m.spec.input_height}x{m.spec.input_width} frames, "
                         f"sequence has {uti.height}x{uti.width}")
    chunks = [forward(m, uti.frames[s:s + batch_size]) for s in range(0, len(uti), batch_size)]
    out = np.concatenate(chunks) if chunks else np.zeros((0, m.spec.output_dim))
    # a diverged network must still decode to valid tracks: non-finite -> training mean
    return np.nan_to_num(out.astype(np.float64), nan=0.0, posinf=0.0, neginf=0.0)


def decode_log_hz(m: NetworkModel, outputs: np.ndarray, lo: float, hi: float) -> np.ndarray:
    raw = m.denormalize(outputs)[:, 0]
    # exp(log(lo)) can land one ulp outside the range; clip again in Hz
    return np.clip(np.exp(np.clip(raw, math.log(lo), math.log(hi))), lo, hi)


def decode_mgc(m: NetworkModel, outputs: np.ndarray, grid: FrameGrid, cfg: MgcConfig | None = None):
    """Gain plus LSPs, with every LSP vector repaired to strict order; returns ``(track, repairs)``."""
    raw = m.denormalize(outputs)
    order = raw.shape[1] - 1
    cfg = cfg or MgcConfig(order=order)
    if cfg.order != order:
        raise ShapeError(f"model emits {order} LSPs; configuration expects {cfg.order}")
    lsp = np.empty((raw.shape[0], order))
    repairs = 0
    for i, row in enumerate(raw):
        lsp[i], changed = repair_lsp(row[1:])
        repairs += bool(changed)
    return MgcLspTrack(raw[:, 0], lsp, grid, cfg), repairs


def predict_tracks(models: dict, uti: UltrasoundSequence, sample_rate: int = DEFAULT_SAMPLE_RATE,
                   mvf_floor: float = 300.0, mgc_config: MgcConfig | None = None):
    """Run the networks over every frame and decode valid vocoder tracks.

    ``models`` holds either ``contf0``, ``mvf`` and ``mgc`` (continuous
    vocoder) or ``vuv``, ``f0`` and ``mgc`` (baseline). Log-domain outputs
    are de-normalized with the statistics stored in each model, exponentiated
    and clamped: ContF0 and F0 to [40, 800] Hz, MVF to [mvf_floor, Nyquist].
    V/UV is the sigmoid output thresholded at 0.5.
    """
    keys = set(models)
    grid = FrameGrid.from_rate(sample_rate, uti.fps, len(uti))
    nyquist = sample_rate / 2
    if keys == {"contf0", "mvf", "mgc"}:
        contf0 = decode_log_hz(models["contf0"], _outputs(models["contf0"], uti), *CONTF0_LIMITS)
        mvf = decode_log_hz(models["mvf"], _outputs(models["mvf"], uti), mvf_floor, nyquist)
        mgc, repairs = decode_mgc(models["mgc"], _outputs(models["mgc"], uti), grid, mgc_config)
        return ContinuousVocoderParams(ContinuousPitchTrack(contf0, grid), MvfTrack(mvf, grid), mgc, repairs)
    if keys == {"vuv", "f0", "mgc"}:
        voiced = _outputs(models["vuv"], uti)[:, 0] > 0.5
        f0 = decode_log_hz(models["f0"], _outputs(models["f0"], uti), *CONTF0_LIMITS)
        mgc, repairs = decode_mgc(models["mgc"], _outputs(models["mgc"], uti), grid, mgc_config)
        pitch = BaselinePitchTrack(voiced, np.where(voiced, f0, np.nan), grid)
        return BaselineVocoderParams(pitch, mgc, repairs)
    raise SpecError(f"need models {{contf0, mvf, mgc}} or {{vuv, f0, mgc}}, got {sorted(keys)}")
