"""Per-timestep intention classifier: embedding, LSTM or GRU cell, logits.

Shapes follow the batch-major convention: features ``(N, T, D)``, hidden
states ``(N, H)``, logits ``(N, T, C)``.  Weight matrices are stored as
``(out, in)`` and applied as ``x @ W.T``.

LSTM parameters stack the four gate blocks row-wise in the order
``[i, o, f, g]``::

    i, o, f = sigmoid(W x + U h + b)      g = tanh(W x + U h + b)
    c_t = i * g + f * c_{t-1}             h_t = o * tanh(c_t)

GRU parameters stack ``[z, r, h]`` and carry no biases::

    z, r = sigmoid(W x + U s)             h = tanh(W x + U (s * r))
    s_t = (1 - z) * h + z * s_{t-1}

The GRU state itself feeds the output projection.
"""

from __future__ import annotations

import json
import math
import os
import struct
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import DataError, FormatError, ShapeError

CELLS = ("lstm", "gru")
MODEL_MAGIC = b"SEERNET1"
MODEL_VERSION = 1


@dataclass(frozen=True)
class RnnConfig:
    cell: str = "lstm"
    input_dim: int = 3
    embed_dim: int = 32
    hidden_dim: int = 128
    num_classes: int = 5
    T: int = 12
    embed_layers: int = 1
    learning_rate: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 30
    clip_norm: float = 5.0
    forget_bias: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.cell not in CELLS:
            raise ShapeError(f"cell must be one of {CELLS}, got {self.cell!r}")
        for name in ("input_dim", "embed_dim", "hidden_dim", "num_classes", "embed_layers",
                     "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ShapeError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ShapeError("epochs must be >= 0")
        if self.T < 1:
            raise ShapeError("T must be >= 1")
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))

    @property
    def feature_variant(self) -> str:
        return {2: "A2", 3: "A3"}.get(self.input_dim, f"D{self.input_dim}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RnnConfig:
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def param_shapes(cfg: RnnConfig) -> dict[str, tuple]:
    """Parameter names and shapes in their fixed serialization order."""
    shapes = {"W_e": (cfg.embed_dim, cfg.input_dim), "b_e": (cfg.embed_dim,)}
    for k in range(1, cfg.embed_layers):
        shapes[f"W_e{k}"] = (cfg.embed_dim, cfg.embed_dim)
        shapes[f"b_e{k}"] = (cfg.embed_dim,)
    h = cfg.hidden_dim
    if cfg.cell == "lstm":
        shapes.update(W=(4 * h, cfg.embed_dim), U=(4 * h, h), b=(4 * h,))
    else:
        shapes.update(W=(3 * h, cfg.embed_dim), U=(3 * h, h))
    shapes.update(W_y=(cfg.num_classes, h), b_y=(cfg.num_classes,))
    return shapes


def _glorot(rng, shape):
    fan_out, fan_in = shape
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


@dataclass(eq=False)
class RnnModel:
    config: RnnConfig
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = param_shapes(self.config)
        if set(self.params) != set(shapes):
            raise ShapeError(f"parameter names {sorted(self.params)} != {sorted(shapes)}")
        for name, shape in shapes.items():
            arr = np.asarray(self.params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {arr.shape}")
            self.params[name] = np.ascontiguousarray(arr)
        self.params = {name: self.params[name] for name in shapes}

    @classmethod
    def initialize(cls, config: RnnConfig, seed: int | None = None) -> RnnModel:
        """Glorot-uniform matrices, zero biases, forget-gate bias set for LSTM.

        Stacked gate matrices are initialized per gate block.
        """
        rng = np.random.default_rng(config.seed if seed is None else seed)
        h = config.hidden_dim
        params = {}
        for name, shape in param_shapes(config).items():
            if len(shape) == 1:
                params[name] = np.zeros(shape)
            elif name in ("W", "U"):
                blocks = shape[0] // h
                params[name] = np.vstack([_glorot(rng, (h, shape[1])) for _ in range(blocks)])
            else:
                params[name] = _glorot(rng, shape)
        if config.cell == "lstm":
            params["b"][2 * h:3 * h] = config.forget_bias
        return cls(config, params)

    @classmethod
    def zeros(cls, config: RnnConfig) -> RnnModel:
        return cls(config, {n: np.zeros(s) for n, s in param_shapes(config).items()})

    def copy(self) -> RnnModel:
        return RnnModel(self.config, {k: v.copy() for k, v in self.params.items()})

    @property
    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    def equals(self, other: RnnModel) -> bool:
        return (self.config == other.config and self.params.keys() == other.params.keys()
                and all(self.params[k].tobytes() == other.params[k].tobytes() for k in self.params))


@dataclass
class CellState:
    """LSTM carries ``(h, c)``; the GRU state ``s`` lives in ``h`` with ``c`` unused."""

    h: np.ndarray
    c: np.ndarray | None = None

    @property
    def s(self) -> np.ndarray:
        return self.h

    @classmethod
    def zeros(cls, config: RnnConfig, batch: int = 1) -> CellState:
        shape = (batch, config.hidden_dim)
        return cls(np.zeros(shape), np.zeros(shape) if config.cell == "lstm" else None)


# -- single-step operations ------------------------------------------------------

def _as_batch(x, dim, what) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"{what}: expected trailing dimension {dim}, got shape {np.shape(x)}")
    return x, single


def embed(x, model: RnnModel) -> np.ndarray:
    """``relu(W_e x + b_e)`` (repeated for extra embedding layers)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (model.config.input_dim,):
        raise ShapeError(f"feature dimension {x.shape[-1:]} != input_dim {model.config.input_dim}")
    p = model.params
    out = np.maximum(x @ p["W_e"].T + p["b_e"], 0.0)
    for k in range(1, model.config.embed_layers):
        out = np.maximum(out @ p[f"W_e{k}"].T + p[f"b_e{k}"], 0.0)
    return out


def lstm_step(x_emb, prev: CellState, model: RnnModel) -> CellState:
    cfg = model.config
    x, single = _as_batch(x_emb, cfg.embed_dim, "embedded input")
    h_prev, _ = _as_batch(prev.h, cfg.hidden_dim, "hidden state")
    c_prev, _ = _as_batch(prev.c, cfg.hidden_dim, "memory cell")
    p = model.params
    a = np.ascontiguousarray(x @ p["W"].T + h_prev @ p["U"].T + p["b"])
    _, c, _, h = kernels.lstm_forward(a, np.ascontiguousarray(c_prev))
    return CellState(h[0], c[0]) if single else CellState(h, c)


def _gru_parts(x, s_prev, p, hd):
    a_z = np.ascontiguousarray(x @ p["W"][:hd].T + s_prev @ p["U"][:hd].T)
    a_r = np.ascontiguousarray(x @ p["W"][hd:2 * hd].T + s_prev @ p["U"][hd:2 * hd].T)
    z, r = kernels.sigmoid(a_z), kernels.sigmoid(a_r)
    sr = s_prev * r
    a_h = np.ascontiguousarray(x @ p["W"][2 * hd:].T + sr @ p["U"][2 * hd:].T)
    cand, s = kernels.gru_forward(a_h, np.ascontiguousarray(z), np.ascontiguousarray(s_prev))
    return z, r, sr, cand, s


def gru_step(x_emb, prev: CellState, model: RnnModel) -> CellState:
    cfg = model.config
    x, single = _as_batch(x_emb, cfg.embed_dim, "embedded input")
    s_prev, _ = _as_batch(prev.h, cfg.hidden_dim, "state")
    *_, s = _gru_parts(x, s_prev, model.params, cfg.hidden_dim)
    return CellState(s[0]) if single else CellState(s)


# -- sequences ---------------------------------------------------------------------

def _check_sequence(x, model: RnnModel) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != model.config.input_dim:
        raise ShapeError(f"features must be (N, T, {model.config.input_dim}), got {np.shape(x)}")
    return x, single


def _forward_cached(x: np.ndarray, model: RnnModel):
    cfg, p = model.config, model.params
    n, t_len, _ = x.shape
    hd = cfg.hidden_dim
    pre_e, emb = [], x
    layers = [("W_e", "b_e")] + [(f"W_e{k}", f"b_e{k}") for k in range(1, cfg.embed_layers)]
    for w, b in layers:
        pre = emb @ p[w].T + p[b]
        pre_e.append((emb, pre))
        emb = np.maximum(pre, 0.0)
    hs = np.zeros((n, t_len + 1, hd))
    steps = []
    if cfg.cell == "lstm":
        c = np.zeros((n, hd))
        wx = emb @ p["W"].T + p["b"]
        for t in range(t_len):
            a = np.ascontiguousarray(wx[:, t] + hs[:, t] @ p["U"].T)
            gates, c_new, tanh_c, h = kernels.lstm_forward(a, c)
            steps.append((gates, c, tanh_c))
            c = c_new
            hs[:, t + 1] = h
    else:
        for t in range(t_len):
            s_prev = np.ascontiguousarray(hs[:, t])
            z, r, sr, cand, s = _gru_parts(emb[:, t], s_prev, p, hd)
            steps.append((z, r, sr, cand, s_prev))
            hs[:, t + 1] = s
    logits = hs[:, 1:] @ p["W_y"].T + p["b_y"]
    return logits, (pre_e, emb, hs, steps)


def forward(x, model: RnnModel) -> np.ndarray:
    """Per-timestep logits from zero initial state; ``(T, D)`` or ``(N, T, D)`` input."""
    x, single = _check_sequence(x, model)
    logits, _ = _forward_cached(x, model)
    return logits[0] if single else logits


def softmax(logits) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def _check_labels(labels, logits) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != logits.shape[:-1]:
        raise ShapeError(f"labels shape {labels.shape} != logits shape {logits.shape[:-1]}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[-1]):
        raise DataError(f"labels must lie in [0, {logits.shape[-1]})")
    return labels.astype(np.int64)


def loss(logits, labels) -> float:
    """Mean per-timestep softmax cross-entropy."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(labels, logits)
    lp = log_softmax(logits)
    picked = np.take_along_axis(lp, labels[..., None], axis=-1)
    return float(-np.mean(picked))


def predict(x, model: RnnModel) -> np.ndarray:
    return np.argmax(forward(x, model), axis=-1)


def loss_and_grads(x, labels, model: RnnModel) -> tuple[float, dict]:
    """Loss and exact BPTT gradients for every parameter."""
    x, single = _check_sequence(x, model)
    labels = np.asarray(labels)
    if single:
        labels = labels[None]
    cfg, p = model.config, model.params
    logits, (pre_e, emb, hs, steps) = _forward_cached(x, model)
    labels = _check_labels(labels, logits)
    n, t_len, _ = x.shape
    hd = cfg.hidden_dim
    value = loss(logits, labels)

    dlogits = softmax(logits)
    np.put_along_axis(dlogits, labels[..., None],
                      np.take_along_axis(dlogits, labels[..., None], axis=-1) - 1.0, axis=-1)
    dlogits /= n * t_len
    g = {name: np.zeros_like(v) for name, v in p.items()}
    g["W_y"] = np.einsum("ntc,nth->ch", dlogits, hs[:, 1:])
    g["b_y"] = dlogits.sum(axis=(0, 1))
    dh_out = dlogits @ p["W_y"]
    demb = np.zeros_like(emb)

    if cfg.cell == "lstm":
        dh_next = np.zeros((n, hd))
        dc_next = np.zeros((n, hd))
        for t in reversed(range(t_len)):
            gates, c_prev, tanh_c = steps[t]
            dh = np.ascontiguousarray(dh_out[:, t] + dh_next)
            da, dc_next = kernels.lstm_backward(gates, c_prev, tanh_c, dh, dc_next)
            g["W"] += da.T @ emb[:, t]
            g["U"] += da.T @ hs[:, t]
            g["b"] += da.sum(axis=0)
            demb[:, t] = da @ p["W"]
            dh_next = da @ p["U"]
    else:
        ds_next = np.zeros((n, hd))
        w_zr, u_zr = p["W"][:2 * hd], p["U"][:2 * hd]
        w_h, u_h = p["W"][2 * hd:], p["U"][2 * hd:]
        for t in reversed(range(t_len)):
            z, r, sr, cand, s_prev = steps[t]
            ds = np.ascontiguousarray(dh_out[:, t] + ds_next)
            da_h, da_z, ds_prev = kernels.gru_backward(cand, z, s_prev, ds)
            dsr = da_h @ u_h
            ds_prev = ds_prev + dsr * r
            da_r = dsr * s_prev * r * (1.0 - r)
            da_zr = np.hstack([da_z, da_r])
            g["W"][:2 * hd] += da_zr.T @ emb[:, t]
            g["W"][2 * hd:] += da_h.T @ emb[:, t]
            g["U"][:2 * hd] += da_zr.T @ s_prev
            g["U"][2 * hd:] += da_h.T @ sr
            demb[:, t] = da_zr @ w_zr + da_h @ w_h
            ds_next = ds_prev + da_zr @ u_zr

    layers = [("W_e", "b_e")] + [(f"W_e{k}", f"b_e{k}") for k in range(1, cfg.embed_layers)]
    dout = demb
    for (w, b), (inp, pre) in zip(reversed(layers), reversed(pre_e)):
        dpre = dout * (pre > 0.0)
        g[w] = np.einsum("nte,ntd->ed", dpre, inp)
        g[b] = dpre.sum(axis=(0, 1))
        dout = dpre @ p[w]
    return value, g


def backward(x, labels, model: RnnModel) -> dict:
    return loss_and_grads(x, labels, model)[1]


# -- persistence ---------------------------------------------------------------------

def save_model(model: RnnModel, path, metadata: dict | None = None) -> None:
    """SEERNET1: magic, u32 version, u32 header length, JSON header, float64 LE
    parameters in ``param_shapes`` order, trailing u32 CRC32 of everything before it."""
    header = {"config": model.config.to_dict(),
              "params": [[k, list(v.shape)] for k, v in model.params.items()],
              "metadata": metadata or {}}
    blob = json.dumps(header, sort_keys=True).encode()
    body = b"".join([MODEL_MAGIC, struct.pack("<II", MODEL_VERSION, len(blob)), blob]
                    + [v.astype("<f8").tobytes() for v in model.params.values()])
    tmp = f"{path}.partial"
    with open(tmp, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body)))
    os.replace(tmp, path)


def load_model(path, with_metadata: bool = False):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MODEL_MAGIC) or data[:len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise FormatError("not a SEERNET1 model file (bad magic)", 0)
    if len(data) < 20:
        raise FormatError("truncated model header", len(data))
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}", 8)
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise FormatError("model checksum mismatch (truncated or corrupt)", len(data) - 4)
    try:
        header = json.loads(data[16:16 + hlen].decode())
        config = RnnConfig.from_dict(header["config"])
    except (ValueError, KeyError, TypeError, ShapeError) as exc:
        raise FormatError(f"unreadable model header: {exc}", 16) from exc
    offset = 16 + hlen
    params = {}
    for name, shape in header["params"]:
        count = int(np.prod(shape))
        if offset + 8 * count > len(data) - 4:
            raise FormatError(f"truncated parameter {name}", offset)
        params[name] = np.frombuffer(data, "<f8", count, offset).reshape(shape).copy()
        offset += 8 * count
    if offset != len(data) - 4:
        raise FormatError("trailing bytes after parameters", offset)
    try:
        model = RnnModel(config, params)
    except ShapeError as exc:
        raise FormatError(str(exc), 16) from exc
    return (model, header.get("metadata", {})) if with_metadata else model
