"""Flow-matching training of the velocity net.

Each iteration resamples a minibatch with replacement, draws one base-noise
value and one time per row, pushes the straight-line interpolation between
outcome and noise through the net on a tape, and regresses the selected
head onto the difference (noise - outcome) with Adam updates.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import numkit as nk
from .errors import ContractError, FitError, TrainingError
from .scm_data import CausalDataset, PropensityModel, fit_propensity
from .velocity_net import NetConfig, TapeOps, VelocityNet, cond_features, core_forward, init


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 200
    max_iters: int = 1000
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    ipw: bool = False
    seed: int = 0
    loss_log_every: int = 1

    def __post_init__(self):
        if self.batch_size < 1 or self.max_iters < 1 or self.loss_log_every < 1:
            raise ContractError("batch_size, max_iters, loss_log_every must be positive")
        if self.lr < 0:
            raise ContractError("lr must be non-negative")

    def to_dict(self) -> dict:
        return {"batch_size": self.batch_size, "max_iters": self.max_iters, "lr": self.lr,
                "adam_beta1": self.adam_beta1, "adam_beta2": self.adam_beta2,
                "adam_eps": self.adam_eps, "ipw": self.ipw, "seed": self.seed,
                "loss_log_every": self.loss_log_every}


@dataclass
class TrainReport:
    loss_history: list[tuple[int, float]]
    final_loss: float
    iters_run: int
    wall_time_s: float


def interpolant(y0, y1, t):
    """Straight line from data (t=0) to noise (t=1)."""
    y0, y1, t = (np.asarray(v, dtype=np.float64) for v in (y0, y1, t))
    return (1.0 - t) * y0 + t * y1


def reference_velocity(y0, y1):
    """Time derivative of the straight-line path; constant in t."""
    return np.asarray(y1, dtype=np.float64) - np.asarray(y0, dtype=np.float64)


def ipw_weights(ds: CausalDataset, pmodel: PropensityModel) -> np.ndarray:
    """Inverse-propensity row weights a/w(x) + (1-a)/(1-w(x))."""
    w = pmodel.predict(ds.x)
    return ds.a / w + (1 - ds.a) / (1.0 - w)


def cfm_loss(net: VelocityNet, y0, x, a, y1, ts, weights=None) -> tuple[float, nk.Tape]:
    """Weighted mean squared velocity residual on one batch, with its tape.

    Noise y1 and times ts are drawn by the caller so the loss itself is a
    pure deterministic function of its arguments.
    """
    y0 = np.asarray(y0, dtype=np.float64).reshape(-1)
    n = y0.shape[0]
    if n == 0:
        raise ContractError("cfm_loss: empty batch")
    y1 = np.asarray(y1, dtype=np.float64).reshape(-1)
    ts = np.asarray(ts, dtype=np.float64).reshape(-1)
    a = np.asarray(a).reshape(-1)
    x = np.asarray(x, dtype=np.float64)
    if not (y1.shape == ts.shape == a.shape == (n,)) or x.shape != (n, net.cfg.d_x):
        raise ContractError("cfm_loss: batch arrays disagree on length")
    if ts.min() < 0.0 or ts.max() > 1.0:
        raise ContractError("cfm_loss: times outside [0, 1]")
    if weights is None:
        weights = np.ones(n)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if weights.shape != (n,) or np.any(weights < 0):
        raise ContractError("cfm_loss: weights must be non-negative, one per row")

    phi = interpolant(y0, y1, ts).reshape(-1, 1)
    target = reference_velocity(y0, y1)
    c = cond_features(x, a.astype(np.int64), ts, net.cfg)
    rows = np.arange(n)
    mask = np.zeros((n, 2))
    mask[rows, a] = 1.0
    neg_target_m = np.zeros((n, 2))
    neg_target_m[rows, a] = -target
    # mean over the (n,2) masked matrix halves every term; the 2x in the
    # weight mask restores a per-row mean of w_i * residual_i^2
    weight_m = np.repeat(2.0 * weights.reshape(-1, 1), 2, axis=1)

    def build(p, consts):
        c_ref, phi_ref, mask_ref, neg_t_ref, w_ref = consts
        ops = TapeOps(c_ref.tape)
        out = core_forward(ops, p, phi_ref, c_ref, net.cfg)
        resid = nk.add(nk.mul(out, mask_ref), neg_t_ref)
        return nk.mean(nk.mul(nk.square(resid), w_ref))

    return nk.tape_forward(build, net.params, [c, phi, mask, neg_target_m, weight_m])


@dataclass
class _AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def _adam_step(params: dict, grads: dict, state: _AdamState, cfg: TrainConfig) -> None:
    if state.t == 0:
        state.m = {k: np.zeros_like(p) for k, p in params.items()}
        state.v = {k: np.zeros_like(p) for k, p in params.items()}
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        p -= cfg.lr * (state.m[name] / c1) / (np.sqrt(state.v[name] / c2) + cfg.adam_eps)


def train(ds: CausalDataset, net_cfg: NetConfig, train_cfg: TrainConfig
          ) -> tuple[VelocityNet, TrainReport]:
    """Fit the velocity net on a (standardized) dataset.

    Returns the trained net and a report whose loss history holds the
    pre-update loss at iteration 1 and every loss_log_every-th iteration.
    """
    if ds.d_x != net_cfg.d_x:
        raise ContractError(f"data has d_x={ds.d_x}, net expects {net_cfg.d_x}")
    if len(np.unique(ds.a)) < 2:
        raise FitError("training data must contain both treatment arms")

    row_weights = None
    if train_cfg.ipw:
        row_weights = ipw_weights(ds, fit_propensity(ds))

    net = init(net_cfg)
    state = _AdamState()
    rng = np.random.default_rng(train_cfg.seed)
    history: list[tuple[int, float]] = []
    started = time.perf_counter()
    for it in range(1, train_cfg.max_iters + 1):
        idx = rng.integers(0, ds.n, size=train_cfg.batch_size)
        y1 = rng.standard_normal(train_cfg.batch_size)
        ts = rng.random(train_cfg.batch_size)
        w = None if row_weights is None else row_weights[idx]
        loss, tape = cfm_loss(net, ds.y[idx], ds.x[idx], ds.a[idx], y1, ts, w)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at iteration {it}")
        grads = nk.tape_backward(tape)
        _adam_step(net.params, grads, state, train_cfg)
        if it == 1 or it % train_cfg.loss_log_every == 0:
            history.append((it, loss))
    report = TrainReport(history, history[-1][1], train_cfg.max_iters,
                         time.perf_counter() - started)
    return net, report
