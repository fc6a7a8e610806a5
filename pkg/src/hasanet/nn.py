"""BLSTM + multi-head self-attention network with exact analytic gradients.

Shapes follow a row-per-frame convention: a sequence is a ``(T, features)``
array and dense layers compute ``x @ W + b``. The LSTM weights are stacked in
gate order input, forget, cell, output.

The architecture is a shared trunk (bidirectional LSTM, then a ReLU dense
layer) feeding one branch per task. Each branch applies multi-head
self-attention, a one-unit sigmoid dense layer giving frame scores, and a
global average over frames giving the utterance score.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np
from scipy.special import expit

from .dsp import Spectrogram
from .hearing import Audiogram
from .io import atomic_write_bytes

TASKS = ("quality", "intelligibility")
CHECKPOINT_MAGIC = b"HPRM"
CHECKPOINT_VERSION = 1


class NumericalBlowup(ArithmeticError):
    pass


class TraceConsumed(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 263
    hidden: int = 100
    dense: int = 128
    heads: int = 4
    tasks: tuple[str, ...] = TASKS

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if self.dense % self.heads:
            raise ValueError(f"dense width {self.dense} not divisible by {self.heads} heads")
        if not self.tasks or any(t not in TASKS for t in self.tasks):
            raise ValueError(f"tasks must be a non-empty subset of {TASKS}")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        d, h, m = self.input_dim, self.hidden, self.dense
        shapes = {}
        for direction in ("fwd", "bwd"):
            shapes[f"blstm.{direction}.W"] = (4 * h, d)
            shapes[f"blstm.{direction}.U"] = (4 * h, h)
            shapes[f"blstm.{direction}.b"] = (4 * h,)
        shapes["dense.W"] = (2 * h, m)
        shapes["dense.b"] = (m,)
        for task in self.tasks:
            for name in ("Wq", "Wk", "Wv", "Wo"):
                shapes[f"{task}.attn.{name}"] = (m, m)
            shapes[f"{task}.head.w"] = (m,)
            shapes[f"{task}.head.b"] = (1,)
        return shapes

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": self.hidden,
            "dense": self.dense,
            "heads": self.heads,
            "tasks": list(self.tasks),
        }


def branch_parameter_count(config: ModelConfig) -> int:
    m = config.dense
    return 4 * m * m + m + 1


def parameter_count(config: ModelConfig) -> int:
    """Closed-form number of trainable scalars."""
    d, h, m = config.input_dim, config.hidden, config.dense
    blstm = 2 * 4 * h * (d + h + 1)
    shared = 2 * h * m + m
    return blstm + shared + len(config.tasks) * branch_parameter_count(config)


class ModelParams:
    """Named weight tensors for one model, validated against a :class:`ModelConfig`."""

    def __init__(self, config: ModelConfig, tensors: Mapping[str, np.ndarray]):
        self.config = config
        expected = config.shapes()
        if set(tensors) != set(expected):
            missing = sorted(set(expected) - set(tensors))
            extra = sorted(set(tensors) - set(expected))
            raise ValueError(f"parameter names mismatch: missing {missing}, unexpected {extra}")
        self.tensors = {}
        for name, shape in expected.items():
            arr = np.asarray(tensors[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name}: shape {arr.shape} != expected {shape}")
            self.tensors[name] = arr

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator | int = 0) -> "ModelParams":
        """Random initialisation.

        LSTM weights are uniform in +-1/sqrt(hidden) with forget-gate bias 1;
        dense and attention weights use Glorot-uniform; other biases are 0.
        """
        rng = np.random.default_rng(rng)
        h = config.hidden
        tensors = {}
        for name, shape in config.shapes().items():
            if name.startswith("blstm."):
                if name.endswith(".b"):
                    b = np.zeros(shape)
                    b[h : 2 * h] = 1.0
                    tensors[name] = b
                else:
                    bound = 1.0 / np.sqrt(h)
                    tensors[name] = rng.uniform(-bound, bound, size=shape)
            elif name.endswith(".b"):
                tensors[name] = np.zeros(shape)
            else:
                fan_in, fan_out = (shape[0], shape[1]) if len(shape) == 2 else (shape[0], 1)
                bound = np.sqrt(6.0 / (fan_in + fan_out))
                tensors[name] = rng.uniform(-bound, bound, size=shape)
        return cls(config, tensors)

    @classmethod
    def zeros(cls, config: ModelConfig) -> "ModelParams":
        return cls(config, {n: np.zeros(s) for n, s in config.shapes().items()})

    def zeros_like(self) -> "ModelParams":
        return ModelParams.zeros(self.config)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {n: a.copy() for n, a in self.tensors.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if np.shape(value) != self.tensors[name].shape:
            raise ValueError(f"{name}: shape mismatch")
        self.tensors[name] = np.asarray(value, dtype=np.float64)

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def size(self) -> int:
        return sum(a.size for a in self.tensors.values())

    def scaled(self, factor: float) -> "ModelParams":
        return ModelParams(self.config, {n: a * factor for n, a in self.tensors.items()})

    def add_(self, other: "ModelParams", scale: float = 1.0) -> "ModelParams":
        for n, a in other.items():
            self.tensors[n] += scale * a
        return self

    def allclose(self, other: "ModelParams", **kw) -> bool:
        return all(np.allclose(a, other[n], **kw) for n, a in self.items())


# -- input features -----------------------------------------------------------


def concat_inputs(spec: Spectrogram, audiogram: Audiogram, log_compress: bool = False) -> np.ndarray:
    """Per-frame ``[257 magnitudes, 6 thresholds / 100]``.

    ``log_compress`` applies ``log1p`` to the magnitudes (off by default).
    """
    mags = np.log1p(spec.frames) if log_compress else spec.frames
    hl = np.broadcast_to(audiogram.levels / 100.0, (mags.shape[0], len(audiogram.levels)))
    return np.hstack([mags, hl])


# -- traces ---------------------------------------------------------------------


class _Trace:
    _consumed = False

    def consume(self) -> None:
        if self._consumed:
            raise TraceConsumed("forward trace already consumed by a backward pass")
        self._consumed = True


@dataclass
class LSTMTrace(_Trace):
    x: np.ndarray
    h: np.ndarray  # (T + 1, H), h[0] = 0
    c: np.ndarray  # (T + 1, H)
    gates: np.ndarray  # (T, 4H) post-activation i, f, g, o


@dataclass
class BLSTMTrace(_Trace):
    fwd: LSTMTrace
    bwd: LSTMTrace


@dataclass
class AttentionTrace(_Trace):
    x: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    weights: np.ndarray  # (heads, T, T)
    concat: np.ndarray
    heads: int


@dataclass
class BranchTrace(_Trace):
    attention: AttentionTrace
    y: np.ndarray
    scores: np.ndarray


@dataclass
class ModelTrace(_Trace):
    blstm: BLSTMTrace
    blstm_out: np.ndarray
    dense_pre: np.ndarray
    shared: np.ndarray
    branches: dict[str, BranchTrace] = field(default_factory=dict)


@dataclass
class ModelOutput:
    frame_scores: dict[str, np.ndarray]
    utterance_scores: dict[str, float]
    attention_weights: dict[str, np.ndarray]
    trace: ModelTrace


# -- layers -----------------------------------------------------------------------


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalBlowup(f"numerical blowup in {where}")


def lstm_forward(x: np.ndarray, W: np.ndarray, U: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, LSTMTrace]:
    """Single-direction LSTM over the rows of ``x``; returns ``(T, H)`` hidden states."""
    T = x.shape[0]
    H = U.shape[1]
    zx = x @ W.T + b
    h = np.zeros((T + 1, H))
    c = np.zeros((T + 1, H))
    gates = np.empty((T, 4 * H))
    for t in range(T):
        z = zx[t] + U @ h[t]
        i = expit(z[:H])
        f = expit(z[H : 2 * H])
        g = np.tanh(z[2 * H : 3 * H])
        o = expit(z[3 * H :])
        c[t + 1] = f * c[t] + i * g
        h[t + 1] = o * np.tanh(c[t + 1])
        gates[t, :H], gates[t, H : 2 * H], gates[t, 2 * H : 3 * H], gates[t, 3 * H :] = i, f, g, o
    return h[1:], LSTMTrace(x=x, h=h, c=c, gates=gates)


def lstm_backward(dh_out: np.ndarray, trace: LSTMTrace, U: np.ndarray, W: np.ndarray):
    """Backpropagation through time; returns ``(dx, dW, dU, db)``."""
    trace.consume()
    T, H = dh_out.shape
    dz = np.empty((T, 4 * H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        gt = trace.gates[t]
        i, f, g, o = gt[:H], gt[H : 2 * H], gt[2 * H : 3 * H], gt[3 * H :]
        dh = dh_out[t] + dh_next
        tc = np.tanh(trace.c[t + 1])
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz[t, :H] = dc * g * i * (1.0 - i)
        dz[t, H : 2 * H] = dc * trace.c[t] * f * (1.0 - f)
        dz[t, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
        dz[t, 3 * H :] = dh * tc * o * (1.0 - o)
        dh_next = U.T @ dz[t]
        dc_next = dc * f
    dU = dz.T @ trace.h[:-1]
    dW = dz.T @ trace.x
    db = dz.sum(axis=0)
    dx = dz @ W
    return dx, dW, dU, db


def blstm_forward(x: np.ndarray, params: ModelParams) -> tuple[np.ndarray, BLSTMTrace]:
    """Run the LSTM forward and backward in time; concatenate hidden states per frame."""
    cfg = params.config
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ValueError(f"expected input of shape (T, {cfg.input_dim}), got {x.shape}")
    if x.shape[0] < 1:
        raise ValueError("empty sequence")
    hf, tf = lstm_forward(x, params["blstm.fwd.W"], params["blstm.fwd.U"], params["blstm.fwd.b"])
    hb, tb = lstm_forward(x[::-1], params["blstm.bwd.W"], params["blstm.bwd.U"], params["blstm.bwd.b"])
    out = np.hstack([hf, hb[::-1]])
    _check_finite(out, "blstm")
    return out, BLSTMTrace(tf, tb)


def blstm_backward(dout: np.ndarray, trace: BLSTMTrace, params: ModelParams, grads: ModelParams) -> np.ndarray:
    trace.consume()
    H = params.config.hidden
    dx = np.zeros_like(trace.fwd.x)
    for direction, sub, dh in (("fwd", trace.fwd, dout[:, :H]), ("bwd", trace.bwd, dout[::-1, H:])):
        U, W = params[f"blstm.{direction}.U"], params[f"blstm.{direction}.W"]
        ddx, dW, dU, db = lstm_backward(dh, sub, U, W)
        dx += ddx if direction == "fwd" else ddx[::-1]
        grads.tensors[f"blstm.{direction}.W"] += dW
        grads.tensors[f"blstm.{direction}.U"] += dU
        grads.tensors[f"blstm.{direction}.b"] += db
    return dx


def softmax_rows(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def multihead_self_attention(
    x: np.ndarray, params: ModelParams, task: str, heads: int | None = None
) -> tuple[np.ndarray, np.ndarray, AttentionTrace]:
    """Scaled dot-product self-attention over frames.

    Returns the ``(T, dense)`` output, the ``(heads, T, T)`` row-stochastic
    attention weights and a trace for the backward pass.
    """
    heads = heads or params.config.heads
    T, m = x.shape
    if m % heads:
        raise ValueError(f"width {m} not divisible by {heads} heads")
    dh = m // heads
    q = x @ params[f"{task}.attn.Wq"]
    k = x @ params[f"{task}.attn.Wk"]
    v = x @ params[f"{task}.attn.Wv"]
    qh = q.reshape(T, heads, dh).transpose(1, 0, 2)
    kh = k.reshape(T, heads, dh).transpose(1, 0, 2)
    vh = v.reshape(T, heads, dh).transpose(1, 0, 2)
    weights = softmax_rows(qh @ kh.transpose(0, 2, 1) / np.sqrt(dh))
    concat = (weights @ vh).transpose(1, 0, 2).reshape(T, m)
    out = concat @ params[f"{task}.attn.Wo"]
    return out, weights, AttentionTrace(x, q, k, v, weights, concat, heads)


def attention_backward(
    dout: np.ndarray, trace: AttentionTrace, params: ModelParams, grads: ModelParams, task: str
) -> np.ndarray:
    trace.consume()
    T, m = trace.x.shape
    heads = trace.heads
    dh = m // heads
    Wq, Wk, Wv, Wo = (params[f"{task}.attn.{n}"] for n in ("Wq", "Wk", "Wv", "Wo"))
    grads.tensors[f"{task}.attn.Wo"] += trace.concat.T @ dout
    dconcat = (dout @ Wo.T).reshape(T, heads, dh).transpose(1, 0, 2)
    A = trace.weights
    qh = trace.q.reshape(T, heads, dh).transpose(1, 0, 2)
    kh = trace.k.reshape(T, heads, dh).transpose(1, 0, 2)
    vh = trace.v.reshape(T, heads, dh).transpose(1, 0, 2)
    dA = dconcat @ vh.transpose(0, 2, 1)
    dvh = A.transpose(0, 2, 1) @ dconcat
    dS = A * (dA - np.sum(dA * A, axis=-1, keepdims=True)) / np.sqrt(dh)
    dqh = dS @ kh
    dkh = dS.transpose(0, 2, 1) @ qh

    def merge(a):
        return a.transpose(1, 0, 2).reshape(T, m)

    dq, dk, dv = merge(dqh), merge(dkh), merge(dvh)
    grads.tensors[f"{task}.attn.Wq"] += trace.x.T @ dq
    grads.tensors[f"{task}.attn.Wk"] += trace.x.T @ dk
    grads.tensors[f"{task}.attn.Wv"] += trace.x.T @ dv
    return dq @ Wq.T + dk @ Wk.T + dv @ Wv.T


def frame_head(x: np.ndarray, params: ModelParams, task: str) -> np.ndarray:
    """Per-frame ``sigmoid(x_t . w + b)``."""
    return expit(x @ params[f"{task}.head.w"] + params[f"{task}.head.b"][0])


def global_average_pool(frame_scores: np.ndarray) -> float:
    frame_scores = np.asarray(frame_scores, dtype=np.float64)
    if frame_scores.size < 1:
        raise ValueError("cannot pool an empty sequence")
    return float(np.mean(frame_scores))


# -- full model ---------------------------------------------------------------------


def model_forward(x: np.ndarray, params: ModelParams) -> ModelOutput:
    """Shared trunk then one attention / frame-score / pooling branch per task."""
    cfg = params.config
    blstm_out, blstm_trace = blstm_forward(x, params)
    pre = blstm_out @ params["dense.W"] + params["dense.b"]
    shared = np.maximum(pre, 0.0)
    trace = ModelTrace(blstm=blstm_trace, blstm_out=blstm_out, dense_pre=pre, shared=shared)
    frames, utterance, weights = {}, {}, {}
    for task in cfg.tasks:
        y, w, att_trace = multihead_self_attention(shared, params, task, cfg.heads)
        scores = frame_head(y, params, task)
        _check_finite(scores, f"{task} branch")
        trace.branches[task] = BranchTrace(att_trace, y, scores)
        frames[task] = scores
        utterance[task] = global_average_pool(scores)
        weights[task] = w
    return ModelOutput(frames, utterance, weights, trace)


def model_backward(
    trace: ModelTrace, loss_grads: Mapping[str, tuple[float, np.ndarray]], params: ModelParams
) -> ModelParams:
    """Exact gradients of a scalar loss with respect to every parameter.

    ``loss_grads[task]`` is ``(dL/d utterance_score, dL/d frame_scores)``;
    tasks absent from the mapping contribute nothing.
    """
    trace.consume()
    grads = params.zeros_like()
    dshared = np.zeros_like(trace.shared)
    for task, branch in trace.branches.items():
        branch.consume()
        if task not in loss_grads:
            continue
        d_utt, d_frames = loss_grads[task]
        s = branch.scores
        ds = np.asarray(d_frames, dtype=np.float64) + d_utt / s.shape[0]
        dlogit = ds * s * (1.0 - s)
        grads.tensors[f"{task}.head.w"] += branch.y.T @ dlogit
        grads.tensors[f"{task}.head.b"] += dlogit.sum()
        dy = np.outer(dlogit, params[f"{task}.head.w"])
        dshared += attention_backward(dy, branch.attention, params, grads, task)
    dpre = dshared * (trace.dense_pre > 0)
    grads.tensors["dense.W"] += trace.blstm_out.T @ dpre
    grads.tensors["dense.b"] += dpre.sum(axis=0)
    blstm_backward(dpre @ params["dense.W"].T, trace.blstm, params, grads)
    return grads


def predict(x: np.ndarray, params: ModelParams) -> dict[str, float]:
    """Utterance scores for every task the model has."""
    return model_forward(x, params).utterance_scores


# -- checkpoints -----------------------------------------------------------------------


def params_to_bytes(params: ModelParams) -> bytes:
    """Binary checkpoint: magic, version, JSON config, then named float32 tensors."""
    cfg = json.dumps(params.config.to_dict(), sort_keys=True).encode()
    out = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(cfg)), cfg]
    out.append(struct.pack("<I", len(params.tensors)))
    for name, arr in params.items():
        key = name.encode()
        out.append(struct.pack("<H", len(key)) + key)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def params_from_bytes(blob: bytes) -> ModelParams:
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a parameter checkpoint (bad magic)")
    pos = 4
    version, cfg_len = struct.unpack_from("<II", blob, pos)
    pos += 8
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    config = ModelConfig(**json.loads(blob[pos : pos + cfg_len]))
    pos += cfg_len
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (klen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + klen].decode()
        pos += klen
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        if pos + 4 * n > len(blob):
            raise ValueError(f"truncated checkpoint while reading {name}")
        tensors[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 4 * n
    if pos != len(blob):
        raise ValueError("trailing bytes in checkpoint")
    return ModelParams(config, tensors)


def save_params(path: str | Path, params: ModelParams) -> None:
    atomic_write_bytes(path, params_to_bytes(params))


def load_params(path: str | Path) -> ModelParams:
    return params_from_bytes(Path(path).read_bytes())
