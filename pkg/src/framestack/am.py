"""Acoustic model: unidirectional multi-layer LSTM + FC + softmax.

Plain numpy, float64 throughout. Forward runs one frame at a time over a
StreamState so decoding can consume super frames as they arrive; backward
is full BPTT of the frame-level cross-entropy loss.

Gate layout in the fused pre-activation vector is [input, forget,
candidate, output]; the candidate uses tanh, gates use sigmoid, and the
cell output is squashed with tanh (standard LSTM). The FC layer is linear
and feeds the softmax output layer directly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MODEL_MAGIC = b"SDAM"
MODEL_VERSION = 1


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_dim: int
    fc_dim: int
    num_states: int
    num_layers: int = 2

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "fc_dim", "num_states",
                     "num_layers"):
            if getattr(self, name) < 1:
                raise ModelError(f"{name} must be >= 1")


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes in serialization order."""
    shapes: dict[str, tuple[int, ...]] = {}
    in_dim = cfg.input_dim
    for layer in range(cfg.num_layers):
        h = cfg.hidden_dim
        shapes[f"lstm{layer}.wx"] = (4 * h, in_dim)
        shapes[f"lstm{layer}.wh"] = (4 * h, h)
        shapes[f"lstm{layer}.b"] = (4 * h,)
        in_dim = h
    shapes["fc.w"] = (cfg.fc_dim, cfg.hidden_dim)
    shapes["fc.b"] = (cfg.fc_dim,)
    shapes["out.w"] = (cfg.num_states, cfg.fc_dim)
    shapes["out.b"] = (cfg.num_states,)
    return shapes


@dataclass
class ModelParams:
    config: ModelConfig
    arrays: dict[str, np.ndarray]

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int, scale: float = 0.05
             ) -> "ModelParams":
        """Uniform [-scale, scale] init, reproducible by seed."""
        rng = np.random.default_rng(seed)
        arrays = {name: rng.uniform(-scale, scale, size=shape)
                  for name, shape in param_shapes(cfg).items()}
        return cls(cfg, arrays)

    @classmethod
    def zeros(cls, cfg: ModelConfig) -> "ModelParams":
        return cls(cfg, {name: np.zeros(shape)
                         for name, shape in param_shapes(cfg).items()})

    def copy(self) -> "ModelParams":
        return ModelParams(self.config,
                           {k: v.copy() for k, v in self.arrays.items()})

    def zeros_like(self) -> "ModelParams":
        return ModelParams.zeros(self.config)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def names(self):
        return param_shapes(self.config).keys()

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.arrays[n].ravel() for n in self.names()])

    def from_vector(self, vec: np.ndarray) -> "ModelParams":
        out, pos = {}, 0
        for name, shape in param_shapes(self.config).items():
            size = int(np.prod(shape))
            out[name] = vec[pos:pos + size].reshape(shape).copy()
            pos += size
        return ModelParams(self.config, out)

    def allclose(self, other: "ModelParams", atol: float = 0.0) -> bool:
        return all(np.allclose(self.arrays[n], other.arrays[n], rtol=0.0,
                               atol=atol) for n in self.names())


@dataclass
class StreamState:
    h: list[np.ndarray] = field(default_factory=list)
    c: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def fresh(cls, cfg: ModelConfig) -> "StreamState":
        return cls(h=[np.zeros(cfg.hidden_dim) for _ in range(cfg.num_layers)],
                   c=[np.zeros(cfg.hidden_dim) for _ in range(cfg.num_layers)])

    def reset(self):
        for arr in self.h + self.c:
            arr[:] = 0.0


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _softmax(logits):
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def forward_step(params: ModelParams, state: StreamState, x: np.ndarray
                 ) -> np.ndarray:
    """Advance the stream by one frame; returns the posterior (K,)."""
    cfg = params.config
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (cfg.input_dim,):
        raise ModelError(f"input shape {x.shape} != ({cfg.input_dim},)")
    h = cfg.hidden_dim
    inp = x
    for layer in range(cfg.num_layers):
        z = (params[f"lstm{layer}.wx"] @ inp
             + params[f"lstm{layer}.wh"] @ state.h[layer]
             + params[f"lstm{layer}.b"])
        i = _sigmoid(z[:h])
        f = _sigmoid(z[h:2 * h])
        g = np.tanh(z[2 * h:3 * h])
        o = _sigmoid(z[3 * h:])
        c = f * state.c[layer] + i * g
        hv = o * np.tanh(c)
        state.c[layer] = c
        state.h[layer] = hv
        inp = hv
    a = params["fc.w"] @ inp + params["fc.b"]
    logits = params["out.w"] @ a + params["out.b"]
    post = _softmax(logits)
    if not np.all(np.isfinite(post)):
        raise ModelError("non-finite activations (divergence)")
    return post


def forward_sequence(params: ModelParams, inputs: np.ndarray) -> np.ndarray:
    """Posteriors (T, K) from a fresh state; equal to a forward_step loop."""
    inputs = np.asarray(inputs, dtype=np.float64)
    state = StreamState.fresh(params.config)
    return np.array([forward_step(params, state, x) for x in inputs]
                    ).reshape(len(inputs), params.config.num_states)


def backward(params: ModelParams, inputs: np.ndarray, labels: np.ndarray,
             out: ModelParams | None = None) -> tuple[ModelParams, float]:
    """Cross-entropy loss over one utterance and its full gradient.

    Returns (gradients shaped like params, total CE loss). Loss is the sum
    over frames of -log p(label_t | x_t). When `out` is given, gradients
    are accumulated into it instead of a fresh container.

    The sequence is processed layer-major with the input-weight products
    batched into matmuls; numerically this matches the step-wise forward
    up to floating-point reassociation.
    """
    cfg = params.config
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    t_len = len(inputs)
    if len(labels) != t_len:
        raise ModelError("labels length != inputs length")
    if t_len and (labels.min() < 0 or labels.max() >= cfg.num_states):
        raise ModelError("label out of range")
    h = cfg.hidden_dim

    # forward with caches, one layer at a time over the whole sequence
    layer_in: list[np.ndarray] = []
    hs, cs, gate_cache = [], [], []
    seq = inputs
    for layer in range(cfg.num_layers):
        layer_in.append(seq)
        zx = seq @ params[f"lstm{layer}.wx"].T + params[f"lstm{layer}.b"]
        wh = params[f"lstm{layer}.wh"]
        h_seq = np.zeros((t_len + 1, h))
        c_seq = np.zeros((t_len + 1, h))
        gates = np.zeros((t_len, 4 * h))
        for t in range(t_len):
            z = zx[t] + wh @ h_seq[t]
            i = _sigmoid(z[:h])
            f = _sigmoid(z[h:2 * h])
            g = np.tanh(z[2 * h:3 * h])
            o = _sigmoid(z[3 * h:])
            c = f * c_seq[t] + i * g
            gates[t, :h] = i
            gates[t, h:2 * h] = f
            gates[t, 2 * h:3 * h] = g
            gates[t, 3 * h:] = o
            c_seq[t + 1] = c
            h_seq[t + 1] = o * np.tanh(c)
        hs.append(h_seq)
        cs.append(c_seq)
        gate_cache.append(gates)
        seq = h_seq[1:]
    acts = seq @ params["fc.w"].T + params["fc.b"]
    logits = acts @ params["out.w"].T + params["out.b"]
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    posts = e / e.sum(axis=1, keepdims=True)
    loss = float(-np.log(np.maximum(posts[np.arange(t_len), labels], 1e-300)
                         ).sum())

    grads = params.zeros_like() if out is None else out
    dlogits = posts
    dlogits[np.arange(t_len), labels] -= 1.0
    grads.arrays["out.w"] += dlogits.T @ acts
    grads.arrays["out.b"] += dlogits.sum(axis=0)
    dacts = dlogits @ params["out.w"]
    grads.arrays["fc.w"] += dacts.T @ seq
    grads.arrays["fc.b"] += dacts.sum(axis=0)
    dh_above = dacts @ params["fc.w"]  # (T, h) into the top LSTM layer

    for layer in range(cfg.num_layers - 1, -1, -1):
        wx = params[f"lstm{layer}.wx"]
        wh = params[f"lstm{layer}.wh"]
        gates = gate_cache[layer]
        c_seq = cs[layer]
        dz_seq = np.zeros((t_len, 4 * h))
        dh_next = np.zeros(h)
        dc_next = np.zeros(h)
        for t in range(t_len - 1, -1, -1):
            i = gates[t, :h]
            f = gates[t, h:2 * h]
            g = gates[t, 2 * h:3 * h]
            o = gates[t, 3 * h:]
            tanh_c = np.tanh(c_seq[t + 1])
            dh = dh_above[t] + dh_next
            do = dh * tanh_c
            dc = dc_next + dh * o * (1.0 - tanh_c ** 2)
            dz = dz_seq[t]
            dz[:h] = dc * g * i * (1 - i)
            dz[h:2 * h] = dc * c_seq[t] * f * (1 - f)
            dz[2 * h:3 * h] = dc * i * (1 - g ** 2)
            dz[3 * h:] = do * o * (1 - o)
            dc_next = dc * f
            dh_next = wh.T @ dz
        grads.arrays[f"lstm{layer}.wx"] += dz_seq.T @ layer_in[layer]
        grads.arrays[f"lstm{layer}.wh"] += dz_seq.T @ hs[layer][:-1]
        grads.arrays[f"lstm{layer}.b"] += dz_seq.sum(axis=0)
        dh_above = dz_seq @ wx
    return grads, loss


def save_model(params: ModelParams, path):
    """Binary model file: magic, version, config u32s, f64 arrays."""
    cfg = params.config
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<6I", MODEL_VERSION, cfg.input_dim,
                            cfg.hidden_dim, cfg.num_layers, cfg.fc_dim,
                            cfg.num_states))
        for name in params.names():
            f.write(np.ascontiguousarray(params[name],
                                         dtype="<f8").tobytes())


def load_model(path) -> ModelParams:
    with open(path, "rb") as f:
        if f.read(4) != MODEL_MAGIC:
            raise ModelError(f"{path}: not a model file")
        version, in_dim, hid, layers, fc_dim, k = struct.unpack(
            "<6I", f.read(24))
        if version != MODEL_VERSION:
            raise ModelError(f"unsupported model version {version}")
        cfg = ModelConfig(input_dim=in_dim, hidden_dim=hid, fc_dim=fc_dim,
                          num_states=k, num_layers=layers)
        arrays = {}
        for name, shape in param_shapes(cfg).items():
            size = int(np.prod(shape))
            buf = f.read(8 * size)
            if len(buf) != 8 * size:
                raise ModelError(f"{path}: truncated model file")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return ModelParams(cfg, arrays)
