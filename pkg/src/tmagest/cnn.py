"""From-scratch convolutional classifier for activation maps.

Architecture: two valid (unpadded) 3x3 convolution layers, each followed by
ReLU and 2x2 max pooling, then two fully connected ReLU layers and a softmax
output. For the default 44x80 maps with 8 and 16 filters the shapes run::

    44x80 -> conv 42x78x8 -> pool 21x39x8 -> conv 19x37x16 -> pool 9x18x16
          -> flatten 2592 -> fc 100 -> fc 20 -> softmax over classes

Everything is plain numpy in 64-bit: convolutions are im2col + GEMM,
activations are stored channels-last, and max pooling routes gradients to the
first maximum of each window. Training is plain SGD over seeded shuffled
mini-batches; identical seeds give bit-identical models. Gradients are exact,
which the finite-difference tests rely on.
"""

from __future__ import annotations

import hashlib
import zlib
from dataclasses import dataclass

import numpy as np

from .config import SessionConfig
from .errors import StructuralError, TrainingError, UsageError
from .onset import ThresholdCalibration
from .tma import NormalizationBounds, TmaMap, channels_for_rows, normalize_array

PARAM_ORDER = (
    "conv1_w", "conv1_b", "conv2_w", "conv2_b",
    "fc1_w", "fc1_b", "fc2_w", "fc2_b", "out_w", "out_b",
)


def derive_rng(seed: int, stream: str) -> np.random.Generator:
    """Child generator for one named consumer of the master seed."""
    return np.random.default_rng([seed, zlib.crc32(stream.encode("utf-8"))])


@dataclass(frozen=True)
class CnnArchitecture:
    """Layer sizing; all downstream shapes derive from these fields."""

    input_rows: int
    input_cols: int
    conv1_filters: int
    conv2_filters: int
    num_classes: int
    kernel: int = 3
    fc1_units: int = 100
    fc2_units: int = 20

    def __post_init__(self):
        if self.kernel != 3:
            raise StructuralError("only 3x3 kernels are supported")
        h, w = self.pool2_shape
        if h < 1 or w < 1:
            raise StructuralError(
                f"input {self.input_rows}x{self.input_cols} too small for "
                "two conv+pool stages"
            )
        for name in ("conv1_filters", "conv2_filters", "num_classes",
                     "fc1_units", "fc2_units"):
            if getattr(self, name) < 1:
                raise StructuralError(f"{name} must be >= 1")

    @property
    def conv1_shape(self) -> tuple[int, int]:
        return self.input_rows - 2, self.input_cols - 2

    @property
    def pool1_shape(self) -> tuple[int, int]:
        h, w = self.conv1_shape
        return h // 2, w // 2

    @property
    def conv2_shape(self) -> tuple[int, int]:
        h, w = self.pool1_shape
        return h - 2, w - 2

    @property
    def pool2_shape(self) -> tuple[int, int]:
        h, w = self.conv2_shape
        return h // 2, w // 2

    @property
    def flat_size(self) -> int:
        h, w = self.pool2_shape
        return h * w * self.conv2_filters

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {
            "conv1_w": (self.conv1_filters, 1, 3, 3),
            "conv1_b": (self.conv1_filters,),
            "conv2_w": (self.conv2_filters, self.conv1_filters, 3, 3),
            "conv2_b": (self.conv2_filters,),
            "fc1_w": (self.flat_size, self.fc1_units),
            "fc1_b": (self.fc1_units,),
            "fc2_w": (self.fc1_units, self.fc2_units),
            "fc2_b": (self.fc2_units,),
            "out_w": (self.fc2_units, self.num_classes),
            "out_b": (self.num_classes,),
        }


@dataclass
class TrainingMetadata:
    seed: int
    epochs: int
    learning_rate: float
    batch_size: int
    final_loss: float


@dataclass
class CnnModel:
    """Weights plus everything inference needs alongside them.

    ``config`` is the session configuration the model was trained under;
    carrying it makes a model file self-sufficient for streaming (the
    envelope filter, map geometry, and threshold all reconstruct from it).
    """

    architecture: CnnArchitecture
    params: dict[str, np.ndarray]
    bounds: NormalizationBounds | None = None
    labels: tuple[str, ...] | None = None
    calibration: ThresholdCalibration | None = None
    metadata: TrainingMetadata | None = None
    config: SessionConfig | None = None

    def __post_init__(self):
        shapes = self.architecture.param_shapes()
        missing = set(shapes) - set(self.params)
        if missing:
            raise StructuralError(f"model is missing parameters: {sorted(missing)}")
        for name, shape in shapes.items():
            got = self.params[name].shape
            if got != shape:
                raise StructuralError(
                    f"parameter {name} has shape {got}, expected {shape}"
                )
        if self.labels is not None:
            self.labels = tuple(self.labels)
            if len(self.labels) != self.architecture.num_classes:
                raise StructuralError(
                    f"{len(self.labels)} labels for "
                    f"{self.architecture.num_classes} classes"
                )

    def require_ready(self) -> None:
        if self.bounds is None or self.labels is None:
            raise UsageError(
                "model has no normalization bounds / label table; train or "
                "load a complete model before predicting"
            )


@dataclass
class TrainingExample:
    """One normalized activation map with its gesture label."""

    map: TmaMap
    label: str


def initial_params(arch: CnnArchitecture, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """He-uniform weights (limit sqrt(6 / fan_in)), zero biases."""
    params: dict[str, np.ndarray] = {}
    for name, shape in arch.param_shapes().items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape)
            continue
        fan_in = int(np.prod(shape[1:])) if name.startswith("conv") else shape[0]
        limit = np.sqrt(6.0 / fan_in)
        params[name] = rng.uniform(-limit, limit, size=shape)
    return params


def zero_params(arch: CnnArchitecture) -> dict[str, np.ndarray]:
    return {name: np.zeros(shape) for name, shape in arch.param_shapes().items()}


# ---------------------------------------------------------------------------
# layer primitives (channels-last activations)
# ---------------------------------------------------------------------------
# Patch matrices are built by nine shifted block copies rather than a strided
# 6-D gather, and GEMM operands are laid out so BLAS sees plain or transposed
# contiguous matrices; on the 44x80 maps this path is memory-bound, so every
# avoided pass over an activation-sized array counts.

def _im2col_single(x: np.ndarray) -> np.ndarray:
    """(B, H, W) single-channel input -> (9, B*(H-2)*(W-2)) patch matrix."""
    b, h, w = x.shape
    ho, wo = h - 2, w - 2
    col_t = np.empty((9, b, ho, wo))
    for di in range(3):
        for dj in range(3):
            col_t[di * 3 + dj] = x[:, di:di + ho, dj:dj + wo]
    return col_t.reshape(9, -1)


def _im2col_multi(x: np.ndarray) -> np.ndarray:
    """(B, H, W, C) -> (B*(H-2)*(W-2), 9*C) patches, offset-major order."""
    b, h, w, c = x.shape
    ho, wo = h - 2, w - 2
    col = np.empty((b, ho, wo, 9, c))
    for di in range(3):
        for dj in range(3):
            col[:, :, :, di * 3 + dj, :] = x[:, di:di + ho, dj:dj + wo, :]
    return col.reshape(b * ho * wo, 9 * c)


def _kernel_matrix(w: np.ndarray) -> np.ndarray:
    """(F, C, 3, 3) weights -> (F, 9*C) rows matching _im2col_multi order."""
    return np.ascontiguousarray(w.transpose(0, 2, 3, 1)).reshape(w.shape[0], -1)


def _kernel_unmatrix(wm: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    f, c = shape[0], shape[1]
    return np.ascontiguousarray(wm.reshape(f, 3, 3, c).transpose(0, 3, 1, 2))


def _pool_forward(x):
    ho, wo = x.shape[1] // 2, x.shape[2] // 2
    t = x[:, :ho * 2, :wo * 2, :]
    return np.maximum(np.maximum(t[:, 0::2, 0::2], t[:, 0::2, 1::2]),
                      np.maximum(t[:, 1::2, 0::2], t[:, 1::2, 1::2]))


def _pool_backward(x, pooled, g):
    # Routes each window's gradient to its first maximum (row-major order);
    # rows/cols beyond the even extent were never pooled and get zero.
    b, h, w, c = x.shape
    ho, wo = pooled.shape[1], pooled.shape[2]
    blocks = x[:, :ho * 2, :wo * 2, :].reshape(b, ho, 2, wo, 2, c)
    hit = blocks == pooled[:, :, None, :, None, :]
    # first-wins in window order (0,0), (0,1), (1,0), (1,1)
    hit[:, :, 0, :, 1, :] &= ~hit[:, :, 0, :, 0, :]
    taken = hit[:, :, 0, :, 0, :] | hit[:, :, 0, :, 1, :]
    hit[:, :, 1, :, 0, :] &= ~taken
    hit[:, :, 1, :, 1, :] &= ~(taken | hit[:, :, 1, :, 0, :])
    dx_blocks = hit * g[:, :, None, :, None, :]
    if 2 * ho == h and 2 * wo == w:
        return dx_blocks.reshape(x.shape)
    dx = np.zeros_like(x)
    dx[:, :ho * 2, :wo * 2, :] = dx_blocks.reshape(b, ho * 2, wo * 2, c)
    return dx


def _forward_batch(params, arch: CnnArchitecture, x: np.ndarray):
    """Forward pass on a (B, rows, cols) batch; returns probs and the cache.

    ReLU is applied in place on the convolution outputs; the backward pass
    recovers the masks from the activations (post-ReLU a > 0 iff pre > 0).
    """
    bsz = x.shape[0]
    f1, f2 = params["conv1_w"].shape[0], params["conv2_w"].shape[0]
    h1, w1 = arch.conv1_shape
    h2, w2 = arch.conv2_shape

    col1 = _im2col_single(x)                       # (9, B*h1*w1)
    a1 = col1.T @ params["conv1_w"].reshape(f1, 9).T
    a1 += params["conv1_b"]
    a1 = a1.reshape(bsz, h1, w1, f1)
    np.maximum(a1, 0.0, out=a1)
    p1 = _pool_forward(a1)

    col2 = _im2col_multi(p1)                       # (B*h2*w2, 9*f1)
    k2 = _kernel_matrix(params["conv2_w"])
    a2 = col2 @ k2.T
    a2 += params["conv2_b"]
    a2 = a2.reshape(bsz, h2, w2, f2)
    np.maximum(a2, 0.0, out=a2)
    p2 = _pool_forward(a2)

    flat = p2.reshape(bsz, -1)
    a3 = flat @ params["fc1_w"] + params["fc1_b"]
    np.maximum(a3, 0.0, out=a3)
    a4 = a3 @ params["fc2_w"] + params["fc2_b"]
    np.maximum(a4, 0.0, out=a4)
    logits = a4 @ params["out_w"] + params["out_b"]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    probs = np.exp(log_probs)
    cache = dict(col1=col1, a1=a1, p1=p1, col2=col2, k2=k2, a2=a2, p2=p2,
                 flat=flat, a3=a3, a4=a4, log_probs=log_probs, probs=probs)
    return probs, cache


def _backward_batch(params, arch: CnnArchitecture, cache, y_idx: np.ndarray):
    """Exact gradients of the mean cross-entropy w.r.t. every parameter."""
    probs = cache["probs"]
    bsz = probs.shape[0]
    f1, f2 = params["conv1_w"].shape[0], params["conv2_w"].shape[0]
    h2p, w2p = arch.pool1_shape
    dlogits = probs.copy()
    dlogits[np.arange(bsz), y_idx] -= 1.0
    dlogits /= bsz

    grads: dict[str, np.ndarray] = {}
    grads["out_w"] = cache["a4"].T @ dlogits
    grads["out_b"] = dlogits.sum(axis=0)
    da4 = dlogits @ params["out_w"].T
    da4 *= cache["a4"] > 0.0
    grads["fc2_w"] = cache["a3"].T @ da4
    grads["fc2_b"] = da4.sum(axis=0)
    da3 = da4 @ params["fc2_w"].T
    da3 *= cache["a3"] > 0.0
    grads["fc1_w"] = cache["flat"].T @ da3
    grads["fc1_b"] = da3.sum(axis=0)
    dflat = da3 @ params["fc1_w"].T

    dp2 = dflat.reshape(cache["p2"].shape)
    da2 = _pool_backward(cache["a2"], cache["p2"], dp2)
    da2 *= cache["a2"] > 0.0
    dy2 = da2.reshape(-1, f2)                       # (B*h2*w2, f2)
    grads["conv2_w"] = _kernel_unmatrix(dy2.T @ cache["col2"],
                                        params["conv2_w"].shape)
    grads["conv2_b"] = dy2.sum(axis=0)
    # input gradient of conv2 as nine shifted rank-f2 updates
    h2, w2 = arch.conv2_shape
    k2_blocks = cache["k2"].reshape(f2, 9, f1)
    dp1 = np.zeros((bsz, h2p, w2p, f1))
    for di in range(3):
        for dj in range(3):
            contrib = dy2 @ k2_blocks[:, di * 3 + dj, :]
            dp1[:, di:di + h2, dj:dj + w2, :] += contrib.reshape(bsz, h2, w2, f1)

    da1 = _pool_backward(cache["a1"], cache["p1"], dp1)
    da1 *= cache["a1"] > 0.0
    dy1 = da1.reshape(-1, f1)                       # (B*h1*w1, f1)
    grads["conv1_w"] = (dy1.T @ cache["col1"].T).reshape(f1, 1, 3, 3)
    grads["conv1_b"] = dy1.sum(axis=0)
    return grads


def batch_loss_and_gradients(params, arch: CnnArchitecture,
                             x: np.ndarray, y_idx: np.ndarray):
    """Mean cross-entropy and its gradients for a (B, rows, cols) batch."""
    probs, cache = _forward_batch(params, arch, x)
    loss = float(-cache["log_probs"][np.arange(x.shape[0]), y_idx].mean())
    return loss, _backward_batch(params, arch, cache, y_idx)


# ---------------------------------------------------------------------------
# public surface
# ---------------------------------------------------------------------------

def _map_data(m) -> np.ndarray:
    return m.data if isinstance(m, TmaMap) else np.asarray(m, dtype=np.float64)


def forward(model: CnnModel, normalized_map) -> np.ndarray:
    """Class probabilities (sum to 1) for one already-normalized map."""
    data = _map_data(normalized_map)
    arch = model.architecture
    if data.shape != (arch.input_rows, arch.input_cols):
        raise StructuralError(
            f"map shape {data.shape} does not match architecture "
            f"({arch.input_rows}, {arch.input_cols})"
        )
    probs, _ = _forward_batch(model.params, arch, data[None, :, :])
    return probs[0]


def loss_and_gradients(model: CnnModel, batch: list[TrainingExample]):
    """Mean cross-entropy over a batch of examples plus exact gradients.

    Raises:
        TrainingError: On an empty batch or a label missing from the model's
            label table.
    """
    if not batch:
        raise TrainingError("batch is empty")
    if model.labels is None:
        raise TrainingError("model has no label table")
    index = {label: i for i, label in enumerate(model.labels)}
    try:
        y_idx = np.array([index[ex.label] for ex in batch])
    except KeyError as exc:
        raise TrainingError(f"label {exc} is not in the model's label table") from exc
    x = np.stack([_map_data(ex.map) for ex in batch])
    return batch_loss_and_gradients(model.params, model.architecture, x, y_idx)


def _canonical_order(x: np.ndarray, y_idx: np.ndarray) -> np.ndarray:
    """Content-derived ordering so training ignores dataset order."""
    digests = [hashlib.sha256(x[i].tobytes()).digest() for i in range(x.shape[0])]
    return np.array(sorted(range(x.shape[0]),
                           key=lambda i: (int(y_idx[i]), digests[i])))


def train(dataset: list[TrainingExample], config: SessionConfig,
          bounds: NormalizationBounds | None = None,
          calibration: ThresholdCalibration | None = None,
          log_epoch=None) -> CnnModel:
    """Train a classifier with plain SGD on normalized example maps.

    The dataset is first put into a content-derived canonical order, so any
    permutation of the same examples trains the identical model for a given
    seed. Weight init and epoch shuffles come from dedicated child streams of
    the master seed.

    Args:
        dataset: Normalized examples covering every configured gesture.
        config: Pipeline configuration (filters, lr, epochs, batch, seed).
        bounds: Normalization bounds to embed in the model.
        calibration: Onset calibration to embed in the model.
        log_epoch: Optional callback ``(epoch, mean_loss)`` per epoch.

    Raises:
        TrainingError: On an empty dataset or a configured gesture with no
            examples.
    """
    if not dataset:
        raise TrainingError("training dataset is empty")
    labels = config.gestures
    index = {label: i for i, label in enumerate(labels)}
    try:
        y_idx = np.array([index[ex.label] for ex in dataset])
    except KeyError as exc:
        raise TrainingError(f"label {exc} is not a configured gesture") from exc
    present = set(int(v) for v in np.unique(y_idx))
    missing = [labels[i] for i in range(len(labels)) if i not in present]
    if missing:
        raise TrainingError(f"no training examples for gestures: {missing}")

    sample = _map_data(dataset[0].map)
    arch = CnnArchitecture(
        input_rows=sample.shape[0],
        input_cols=sample.shape[1],
        conv1_filters=config.conv1_filters,
        conv2_filters=config.conv2_filters,
        num_classes=len(labels),
    )
    x = np.stack([_map_data(ex.map) for ex in dataset])
    order = _canonical_order(x, y_idx)
    x, y_idx = x[order], y_idx[order]

    params = initial_params(arch, derive_rng(config.seed, "init"))
    shuffle_rng = derive_rng(config.seed, "shuffle")
    n = x.shape[0]
    final_loss = float("nan")
    for epoch in range(config.epochs):
        perm = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            loss, grads = batch_loss_and_gradients(params, arch, x[idx], y_idx[idx])
            for name in PARAM_ORDER:
                params[name] -= config.learning_rate * grads[name]
            total += loss * idx.size
        final_loss = total / n
        if log_epoch is not None:
            log_epoch(epoch, final_loss)

    return CnnModel(
        architecture=arch,
        params=params,
        bounds=bounds,
        labels=labels,
        calibration=calibration,
        metadata=TrainingMetadata(
            seed=config.seed,
            epochs=config.epochs,
            learning_rate=config.learning_rate,
            batch_size=config.batch_size,
            final_loss=final_loss,
        ),
        config=config,
    )


def predict(model: CnnModel, raw_map) -> tuple[str, float]:
    """Classify one unnormalized map.

    Applies the model's stored bounds (clamping values outside the training
    range), runs the forward pass, and returns the argmax label with its
    probability. Ties resolve to the lowest class index.

    Raises:
        UsageError: If the model lacks bounds or a label table.
    """
    model.require_ready()
    data = _map_data(raw_map)
    channels = channels_for_rows(data.shape[0])
    normalized = normalize_array(data, model.bounds, channels)
    probs = forward(model, normalized)
    best = int(np.argmax(probs))
    return model.labels[best], float(probs[best])
