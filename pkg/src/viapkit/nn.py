"""Fixed-architecture CNN with hand-written reverse-mode gradients.

Everything runs on float64 numpy arrays in NHWC layout. The network shape is
frozen: conv 3x3 (C->8, zero-padded) -> relu -> maxpool 2x2 -> conv 3x3
(8->16) -> relu -> maxpool 2x2 -> dense(K). Keeping the architecture fixed
lets the backward pass stay small enough to verify against finite
differences coordinate by coordinate.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

CONV1_CHANNELS = 8
CONV2_CHANNELS = 16
KERNEL = 3

PARAM_FIELDS = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "dense_w", "dense_b")

PARAMS_MAGIC = b"VIAPNET1"


def require_finite(name: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")


def as_f64(arr) -> np.ndarray:
    """Coerce to a C-contiguous float64 array."""
    return np.ascontiguousarray(arr, dtype=np.float64)


# ---------------------------------------------------------------------------
# Layer primitives
# ---------------------------------------------------------------------------

def _patches(x: np.ndarray) -> np.ndarray:
    """3x3 zero-padded patch matrix of an NHWC batch: (B, H, W, 9*C).

    Patch columns are ordered (row, col, channel) to match a reshaped
    (3, 3, C, out) kernel.
    """
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(padded, (KERNEL, KERNEL), axis=(1, 2))
    b, h, w = x.shape[0], x.shape[1], x.shape[2]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(b, h, w, -1)


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stride-1, zero-padded ("same") 3x3 convolution. w is (3, 3, Cin, Cout)."""
    cols = _patches(x)
    out = cols @ w.reshape(-1, w.shape[-1])
    out += b
    return out


def conv2d_input_grad(dy: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Gradient of conv2d w.r.t. its input: correlate dy with the flipped kernel."""
    w_flip = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
    cols = _patches(dy)
    return cols @ w_flip.reshape(-1, w_flip.shape[-1])


def conv2d_param_grad(x: np.ndarray, dy: np.ndarray, cout: int) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of conv2d w.r.t. kernel and bias."""
    cols = _patches(x)
    dw = np.tensordot(cols, dy, axes=([0, 1, 2], [0, 1, 2]))
    dw = dw.reshape(KERNEL, KERNEL, x.shape[-1], cout)
    db = dy.sum(axis=(0, 1, 2))
    return dw, db


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def maxpool2(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 max pooling with stride 2; trailing odd row/col is dropped.

    Returns (pooled, idx) where idx holds the argmax position (0..3, first
    maximum wins ties) inside each window, as needed to route gradients back.
    """
    b, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    win = (
        x[:, : h2 * 2, : w2 * 2, :]
        .reshape(b, h2, 2, w2, 2, c)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(b, h2, w2, c, 4)
    )
    idx = win.argmax(axis=4)
    out = np.take_along_axis(win, idx[..., None], axis=4)[..., 0]
    return out, idx


def maxpool2_input_grad(dy: np.ndarray, idx: np.ndarray, x_shape: tuple) -> np.ndarray:
    b, h, w, c = x_shape
    h2, w2 = h // 2, w // 2
    dwin = np.zeros((b, h2, w2, c, 4), dtype=np.float64)
    np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=4)
    dx = np.zeros(x_shape, dtype=np.float64)
    dx[:, : h2 * 2, : w2 * 2, :] = (
        dwin.reshape(b, h2, w2, c, 2, 2)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(b, h2 * 2, w2 * 2, c)
    )
    return dx


def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Affine map on flattened features: (B, F) @ (F, K) + (K,)."""
    return x @ w + b


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, numerically stable."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch plus the softmax probabilities."""
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    s = e.sum(axis=1, keepdims=True)
    probs = e / s
    lse = (m + np.log(s))[:, 0]
    per_example = lse - logits[np.arange(logits.shape[0]), labels]
    return float(per_example.mean()), probs


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelParams:
    """All weights of the classifier plus its input/output dimensions.

    Arrays are copied on construction and frozen read-only, so params can be
    shared across threads.
    """

    height: int
    width: int
    channels: int
    classes: int
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    dense_w: np.ndarray
    dense_b: np.ndarray

    def __post_init__(self):
        if self.height < 4 or self.width < 4:
            raise ValueError("input height/width must be at least 4 (two pooling stages)")
        expected = {
            "conv1_w": (KERNEL, KERNEL, self.channels, CONV1_CHANNELS),
            "conv1_b": (CONV1_CHANNELS,),
            "conv2_w": (KERNEL, KERNEL, CONV1_CHANNELS, CONV2_CHANNELS),
            "conv2_b": (CONV2_CHANNELS,),
            "dense_w": (self.feature_size, self.classes),
            "dense_b": (self.classes,),
        }
        for name, shape in expected.items():
            arr = as_f64(getattr(self, name))
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            require_finite(name, arr)
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def feature_size(self) -> int:
        return (self.height // 4) * (self.width // 4) * CONV2_CHANNELS

    def replace_weights(self, **arrays) -> "ModelParams":
        """New ModelParams with some weight arrays swapped out."""
        kw = {f: getattr(self, f) for f in PARAM_FIELDS}
        kw.update(arrays)
        return ModelParams(self.height, self.width, self.channels, self.classes, **kw)


@dataclass(frozen=True)
class ParamGrads:
    """Loss gradients, field-for-field congruent with ModelParams weights."""

    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    dense_w: np.ndarray
    dense_b: np.ndarray


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

@dataclass
class Graph:
    """Recorded intermediates of one forward pass, consumed by backward().

    Valid only for the batch it was recorded from; replaying the same batch
    reproduces every stored array bit for bit.
    """

    params: ModelParams
    x: np.ndarray
    z1: np.ndarray
    i1: np.ndarray
    p1: np.ndarray
    z2: np.ndarray
    i2: np.ndarray
    p2: np.ndarray
    logits: np.ndarray

    def backward(
        self, dlogits: np.ndarray, need_input: bool = True, need_params: bool = False
    ) -> tuple[np.ndarray | None, ParamGrads | None]:
        """Backpropagate dlogits; returns (input grad, param grads)."""
        if dlogits.shape != self.logits.shape:
            raise ValueError("dlogits shape does not match the recorded forward pass")
        p = self.params
        b = self.x.shape[0]
        flat = self.p2.reshape(b, -1)

        dflat = dlogits @ p.dense_w.T
        dp2 = dflat.reshape(self.p2.shape)
        da2 = maxpool2_input_grad(dp2, self.i2, self.z2.shape)
        dz2 = da2 * (self.z2 > 0.0)
        dp1 = conv2d_input_grad(dz2, p.conv2_w)
        da1 = maxpool2_input_grad(dp1, self.i1, self.z1.shape)
        dz1 = da1 * (self.z1 > 0.0)

        dx = conv2d_input_grad(dz1, p.conv1_w) if need_input else None

        grads = None
        if need_params:
            dw2, db2 = conv2d_param_grad(self.p1, dz2, CONV2_CHANNELS)
            dw1, db1 = conv2d_param_grad(self.x, dz1, CONV1_CHANNELS)
            grads = ParamGrads(
                conv1_w=dw1,
                conv1_b=db1,
                conv2_w=dw2,
                conv2_b=db2,
                dense_w=flat.T @ dlogits,
                dense_b=dlogits.sum(axis=0),
            )
        return dx, grads


def _check_batch(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    batch = as_f64(batch)
    if batch.ndim != 4:
        raise ValueError(f"batch must be 4-D (B, H, W, C); got shape {batch.shape}")
    if batch.shape[1:] != (params.height, params.width, params.channels):
        raise ValueError(
            f"batch shape {batch.shape[1:]} does not match the architecture "
            f"({params.height}, {params.width}, {params.channels})"
        )
    if batch.shape[0] < 1:
        raise ValueError("batch must contain at least one example")
    require_finite("batch", batch)
    return batch


def forward_graph(params: ModelParams, batch: np.ndarray) -> Graph:
    """Run the network and record every intermediate needed by backward."""
    x = _check_batch(params, batch)
    z1 = conv2d(x, params.conv1_w, params.conv1_b)
    p1, i1 = maxpool2(relu(z1))
    z2 = conv2d(p1, params.conv2_w, params.conv2_b)
    p2, i2 = maxpool2(relu(z2))
    logits = dense(p2.reshape(x.shape[0], -1), params.dense_w, params.dense_b)
    require_finite("logits", logits)
    return Graph(params=params, x=x, z1=z1, i1=i1, p1=p1, z2=z2, i2=i2, p2=p2, logits=logits)


def forward(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Class logits for a batch, shape (B, K)."""
    return forward_graph(params, batch).logits


def _check_labels(labels, batch_size: int, classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (batch_size,):
        raise ValueError(f"labels must have shape ({batch_size},); got {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= classes:
        raise ValueError(f"labels must lie in [0, {classes})")
    return labels


def loss_and_input_grad(
    params: ModelParams, batch: np.ndarray, labels
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the pixels."""
    graph = forward_graph(params, batch)
    labels = _check_labels(labels, graph.x.shape[0], params.classes)
    loss, probs = softmax_cross_entropy(graph.logits, labels)
    dlogits = probs.copy()
    dlogits[np.arange(len(labels)), labels] -= 1.0
    dlogits /= len(labels)
    grad, _ = graph.backward(dlogits, need_input=True, need_params=False)
    require_finite("input gradient", grad)
    return loss, grad


def loss_and_param_grad(
    params: ModelParams, batch: np.ndarray, labels
) -> tuple[float, ParamGrads]:
    """Mean cross-entropy and its gradients w.r.t. every weight tensor."""
    graph = forward_graph(params, batch)
    labels = _check_labels(labels, graph.x.shape[0], params.classes)
    loss, probs = softmax_cross_entropy(graph.logits, labels)
    dlogits = probs.copy()
    dlogits[np.arange(len(labels)), labels] -= 1.0
    dlogits /= len(labels)
    _, grads = graph.backward(dlogits, need_input=False, need_params=True)
    for f in fields(grads):
        require_finite(f.name, getattr(grads, f.name))
    return loss, grads


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _write_record(fh, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def save_params(params: ModelParams, path) -> None:
    """Write weights as magic + (name length, name, rank, extents, f64 payload)."""
    arch = np.array(
        [params.height, params.width, params.channels, params.classes], dtype=np.float64
    )
    with open(path, "wb") as fh:
        fh.write(PARAMS_MAGIC)
        _write_record(fh, "arch", arch)
        for name in PARAM_FIELDS:
            _write_record(fh, name, getattr(params, name))


def _read_record(buf: bytes, pos: int) -> tuple[str, np.ndarray, int]:
    (name_len,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    name = buf[pos : pos + name_len].decode("utf-8")
    pos += name_len
    (rank,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    shape = struct.unpack_from(f"<{rank}I", buf, pos)
    pos += 4 * rank
    count = int(np.prod(shape)) if rank else 1
    arr = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape)
    pos += 8 * count
    return name, arr, pos


def load_params(path) -> ModelParams:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[: len(PARAMS_MAGIC)] != PARAMS_MAGIC:
        raise ValueError(f"{path}: bad magic, not a weights file")
    pos = len(PARAMS_MAGIC)
    records: dict[str, np.ndarray] = {}
    while pos < len(buf):
        name, arr, pos = _read_record(buf, pos)
        records[name] = arr
    try:
        arch = records.pop("arch")
        h, w, c, k = (int(v) for v in arch)
        return ModelParams(h, w, c, k, **{name: records[name] for name in PARAM_FIELDS})
    except KeyError as exc:
        raise ValueError(f"{path}: missing record {exc}") from exc
