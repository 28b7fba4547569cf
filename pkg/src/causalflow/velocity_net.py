"""Conditional velocity field for the outcome flow, plus model-file I/O.

The net maps (y, t, x, a) to a scalar velocity. The outcome is embedded,
modulated by feature-wise scale/shift computed from the conditioning vector
c = concat(x, a, enc(t)), passed through two gated residual blocks, and
projected to one head per treatment arm. The same layer recipe runs on two
backends: plain numpy for inference and the numkit tape for training, so
both paths produce identical numbers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import numkit as nk
from .errors import ConfigError, ContractError, DimensionError
from .numkit import sigmoid_kernel
from .scm_data import Scaler

MODEL_FORMAT_VERSION = 1
_T_TOL = 1e-9


@dataclass(frozen=True)
class NetConfig:
    """Architecture settings; hidden_dim=None resolves to d_x + 1."""

    d_x: int
    hidden_dim: int | None = None
    n_res_blocks: int = 2
    time_encoding: str = "scalar-append"  # or "sinusoidal"
    time_frequencies: int = 4
    init_seed: int = 0

    def __post_init__(self):
        if self.d_x <= 0:
            raise ContractError("d_x must be positive")
        if self.n_res_blocks != 2:
            raise ContractError("n_res_blocks is fixed at 2")
        if self.time_encoding not in ("scalar-append", "sinusoidal"):
            raise ContractError(f"unknown time_encoding {self.time_encoding!r}")
        if self.time_encoding == "sinusoidal" and self.time_frequencies < 1:
            raise ContractError("time_frequencies must be at least 1")
        if self.hidden_dim is not None and self.hidden_dim < 1:
            raise ContractError("hidden_dim must be at least 1")

    @property
    def hidden(self) -> int:
        return self.hidden_dim if self.hidden_dim is not None else self.d_x + 1

    @property
    def t_dim(self) -> int:
        return 1 if self.time_encoding == "scalar-append" else 2 * self.time_frequencies

    @property
    def cond_dim(self) -> int:
        return self.d_x + 1 + self.t_dim

    def to_dict(self) -> dict:
        return {"d_x": self.d_x, "hidden_dim": self.hidden_dim,
                "n_res_blocks": self.n_res_blocks, "time_encoding": self.time_encoding,
                "time_frequencies": self.time_frequencies, "init_seed": self.init_seed}

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**d)


def layer_shapes(cfg: NetConfig) -> list[tuple[str, tuple[int, int], bool]]:
    """Ordered (name, shape, is_bias) for every tensor; also the init draw order."""
    h, c = cfg.hidden, cfg.cond_dim
    shapes = [
        ("embed_w", (1, h), False), ("embed_b", (1, h), True),
        ("film_scale_w", (c, h), False), ("film_scale_b", (1, h), True),
        ("film_shift_w", (c, h), False), ("film_shift_b", (1, h), True),
    ]
    for i in range(cfg.n_res_blocks):
        for part in ("gate", "value"):
            shapes += [
                (f"block{i}_{part}_w1c", (c, h), False),
                (f"block{i}_{part}_w1h", (h, h), False),
                (f"block{i}_{part}_b1", (1, h), True),
                (f"block{i}_{part}_w2", (h, h), False),
                (f"block{i}_{part}_b2", (1, h), True),
            ]
    shapes += [("proj_w", (h, 2), False), ("proj_b", (1, 2), True)]
    return shapes


def param_count(cfg: NetConfig) -> int:
    return sum(r * c for _, (r, c), _ in layer_shapes(cfg))


@dataclass
class VelocityNet:
    """Config plus named parameter tensors."""

    cfg: NetConfig
    params: dict[str, np.ndarray]

    def copy(self) -> "VelocityNet":
        return VelocityNet(self.cfg, {k: v.copy() for k, v in self.params.items()})


def init(cfg: NetConfig) -> VelocityNet:
    """Seeded uniform(-sqrt(6/(fan_in+fan_out))) weights, zero biases."""
    rng = np.random.default_rng(cfg.init_seed)
    params = {}
    for name, (rows, cols), is_bias in layer_shapes(cfg):
        if is_bias:
            params[name] = np.zeros((rows, cols))
        else:
            limit = np.sqrt(6.0 / (rows + cols))
            params[name] = rng.uniform(-limit, limit, size=(rows, cols))
    return VelocityNet(cfg, params)


def encode_time(ts: np.ndarray, cfg: NetConfig) -> np.ndarray:
    ts = np.asarray(ts, dtype=np.float64)
    if cfg.time_encoding == "scalar-append":
        return ts.reshape(-1, 1)
    cols = []
    for j in range(cfg.time_frequencies):
        freq = (2.0 ** j) * np.pi
        cols += [np.sin(freq * ts), np.cos(freq * ts)]
    return np.stack(cols, axis=1)


def cond_features(x: np.ndarray, a: np.ndarray, ts: np.ndarray, cfg: NetConfig) -> np.ndarray:
    return np.concatenate([x, a.reshape(-1, 1).astype(np.float64),
                           encode_time(ts, cfg)], axis=1)


class _NumpyOps:
    matmul = staticmethod(lambda a, b: a @ b)
    add = staticmethod(lambda a, b: a + b)
    badd = staticmethod(lambda m, bias: m + bias)
    mul = staticmethod(lambda a, b: a * b)
    tanh = staticmethod(np.tanh)
    sigmoid = staticmethod(sigmoid_kernel)

    @staticmethod
    def halve(v):
        return v * 0.5


class TapeOps:
    """numkit-backed twin of the numpy ops; used by the training loss."""

    matmul = staticmethod(nk.matmul)
    add = staticmethod(nk.add)
    badd = staticmethod(nk.badd)
    mul = staticmethod(nk.mul)
    tanh = staticmethod(nk.tanh)
    sigmoid = staticmethod(nk.sigmoid)

    def __init__(self, tape: nk.Tape):
        self.tape = tape

    def halve(self, v):
        return nk.mul(v, self.tape.const(np.full(v.shape, 0.5)))


def core_forward(ops, p, y_col, c, cfg: NetConfig):
    """Both-arm output (n, 2); p maps names to backend values."""
    h = ops.badd(ops.matmul(y_col, p["embed_w"]), p["embed_b"])
    scale = ops.badd(ops.matmul(c, p["film_scale_w"]), p["film_scale_b"])
    shift = ops.badd(ops.matmul(c, p["film_shift_w"]), p["film_shift_b"])
    h = ops.add(ops.mul(scale, h), shift)
    for i in range(cfg.n_res_blocks):
        pre_g = ops.tanh(ops.badd(
            ops.add(ops.matmul(c, p[f"block{i}_gate_w1c"]),
                    ops.matmul(h, p[f"block{i}_gate_w1h"])),
            p[f"block{i}_gate_b1"]))
        g = ops.sigmoid(ops.badd(ops.matmul(pre_g, p[f"block{i}_gate_w2"]),
                                 p[f"block{i}_gate_b2"]))
        pre_v = ops.tanh(ops.badd(
            ops.add(ops.matmul(c, p[f"block{i}_value_w1c"]),
                    ops.matmul(h, p[f"block{i}_value_w1h"])),
            p[f"block{i}_value_b1"]))
        v = ops.badd(ops.matmul(pre_v, p[f"block{i}_value_w2"]),
                     p[f"block{i}_value_b2"])
        h = ops.halve(ops.add(h, ops.mul(g, v)))
    return ops.badd(ops.matmul(h, p["proj_w"]), p["proj_b"])


def _check_inputs(net: VelocityNet, ys, ts, x, a):
    ys = np.asarray(ys, dtype=np.float64).reshape(-1)
    n = ys.shape[0]
    ts = np.broadcast_to(np.asarray(ts, dtype=np.float64), (n,))
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = np.broadcast_to(x, (n, x.shape[0]))
    if x.shape != (n, net.cfg.d_x):
        raise DimensionError(
            f"forward: x has shape {x.shape}, expected ({n}, {net.cfg.d_x})")
    a = np.broadcast_to(np.asarray(a), (n,))
    if n and not np.all(np.isin(a, (0, 1))):
        raise ContractError("treatment must be 0 or 1")
    if n and (ts.min() < -_T_TOL or ts.max() > 1.0 + _T_TOL):
        raise ContractError(f"t outside [0, 1]: range [{ts.min()}, {ts.max()}]")
    return ys, np.clip(ts, 0.0, 1.0), x, a.astype(np.int64)


def forward_batch(net: VelocityNet, ys, ts, x, a) -> np.ndarray:
    """Velocity of the selected arm for each row."""
    ys, ts, x, a = _check_inputs(net, ys, ts, x, a)
    if ys.shape[0] == 0:
        return np.zeros(0)
    c = cond_features(x, a, ts, net.cfg)
    out = core_forward(_NumpyOps, net.params, ys.reshape(-1, 1), c, net.cfg)
    return np.where(a == 1, out[:, 1], out[:, 0])


def forward(net: VelocityNet, y: float, t: float, x, a: int) -> float:
    return float(forward_batch(net, [y], t, np.atleast_2d(x), a)[0])


@dataclass
class FlowModel:
    """Trained bundle: velocity net, the scaler its data used, run metadata."""

    net: VelocityNet
    scaler: Scaler
    train_meta: dict = field(default_factory=dict)

    @property
    def cfg(self) -> NetConfig:
        return self.net.cfg


def save_model(model: FlowModel, path) -> None:
    """Versioned JSON document; decimal values round-trip exactly."""
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "net_config": model.cfg.to_dict(),
        "params": {
            name: {"shape": list(t.shape), "data": t.reshape(-1).tolist()}
            for name, t in model.net.params.items()
        },
        "scaler": model.scaler.to_dict(),
        "train_meta": model.train_meta,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_model(path) -> FlowModel:
    """Inverse of save_model; validates version, tensor presence, and shapes."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not a valid model file: {exc}") from None
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported format_version {version!r}")
    cfg = NetConfig.from_dict(doc["net_config"])
    params = {}
    for name, (rows, cols), _ in layer_shapes(cfg):
        entry = doc["params"].get(name)
        if entry is None:
            raise ConfigError(f"{path}: missing parameter tensor {name!r}")
        if tuple(entry["shape"]) != (rows, cols):
            raise ConfigError(
                f"{path}: tensor {name!r} has shape {entry['shape']}, expected {(rows, cols)}")
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != rows * cols:
            raise ConfigError(f"{path}: tensor {name!r} has {data.size} values, "
                              f"expected {rows * cols}")
        params[name] = data.reshape(rows, cols)
    scaler = Scaler.from_dict(doc["scaler"]) if doc.get("scaler") else Scaler.identity(cfg.d_x)
    return FlowModel(VelocityNet(cfg, params), scaler, doc.get("train_meta", {}))
