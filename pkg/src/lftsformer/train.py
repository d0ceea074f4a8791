"""Gradient-centralized Adam, the adaptive robust loss, the training loop and metrics."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor

log = logging.getLogger(__name__)


class NonFiniteGradient(FloatingPointError):
    pass


# gradient centralization and the optimizer

def gc(grad: np.ndarray) -> np.ndarray:
    """Remove the fan-in mean from each output column of a weight gradient.

    Weights here are stored (..., d_in, d_out) and applied as ``x @ W``, so every
    axis but the last is fan-in. Vectors and scalars pass through unchanged.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.ndim < 2:
        return grad
    axes = tuple(range(grad.ndim - 1))
    return grad - grad.mean(axis=axes, keepdims=True)


@dataclass(frozen=True)
class GcAdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    gc_enabled: bool = True
    clip_norm: float | None = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be > 0")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def gc_adam_step(params, grads, state: AdamState, cfg: GcAdamConfig) -> float:
    """One update in place. Returns the global gradient norm after centralization.

    Order: centralize (if enabled), clip to ``clip_norm`` by global norm, then the
    bias-corrected Adam step. A missing gradient counts as zero.
    """
    gs = []
    for p, g in zip(params, grads):
        g = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise T.ShapeError(f"gradient {g.shape} does not match parameter {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {p.name or 'parameter'} {p.data.shape}")
        if cfg.gc_enabled and g.ndim >= 2:
            g = gc(g)
            assert np.allclose(g.mean(axis=tuple(range(g.ndim - 1))), 0.0, atol=1e-12 * (1 + np.abs(g).max()))
        gs.append(g)
    norm = math.sqrt(sum(float((g * g).sum()) for g in gs))
    if cfg.clip_norm is not None and norm > cfg.clip_norm:
        gs = [g * (cfg.clip_norm / norm) for g in gs]
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1, c2 = 1 - b1 ** state.t, 1 - b2 ** state.t
    for p, g, m, v in zip(params, gs, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return norm


class GcAdam:
    def __init__(self, params, cfg: GcAdamConfig):
        self.params = list(params)
        self.cfg = cfg
        self.state = AdamState.zeros(self.params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> float:
        return gc_adam_step(self.params, [p.grad for p in self.params], self.state, self.cfg)


# adaptive robust loss

BETA_MIN, BETA_MAX = -8.0, 2.0
SINGULAR_DELTA = 1e-4


def beta_from_raw(raw):
    """Smooth increasing map of the real line onto (BETA_MIN, BETA_MAX)."""
    span = BETA_MAX - BETA_MIN
    if isinstance(raw, Tensor):
        return T.sigmoid(raw * -1.0) * span + BETA_MIN
    return BETA_MIN + span / (1.0 + math.exp(raw))


def raw_from_beta(beta: float) -> float:
    if not BETA_MIN < beta < BETA_MAX:
        raise ValueError(f"beta must lie in ({BETA_MIN}, {BETA_MAX})")
    frac = (beta - BETA_MIN) / (BETA_MAX - BETA_MIN)
    return math.log((1 - frac) / frac)


def robust_loss(z, beta: float, c: float = 1.0, delta: float = SINGULAR_DELTA) -> np.ndarray:
    """Elementwise ``|b-2|/b * (((z/c)^2/|b-2| + 1)^(b/2) - 1)``.

    Within ``delta`` of b=2 and b=0 the limits ``(z/c)^2/2`` and
    ``ln((z/c)^2/2 + 1)`` are used; ``b=-inf`` gives ``1 - exp(-(z/c)^2/2)``.
    """
    if not c > 0:
        raise ValueError("c must be > 0")
    x = (np.asarray(z, dtype=np.float64) / c) ** 2
    if beta == -math.inf:
        return -np.expm1(-0.5 * x)
    if abs(beta - 2.0) < delta:
        return 0.5 * x
    if abs(beta) < delta:
        return np.log1p(0.5 * x)
    a = abs(beta - 2.0)
    return a / beta * np.expm1(0.5 * beta * np.log1p(x / a))


def robust_loss_limit(z, c: float = 1.0) -> np.ndarray:
    return robust_loss(z, -math.inf, c)


@dataclass
class AdaptiveLossState:
    """Learnable robustness: ``beta = beta_from_raw(beta_raw)``, fixed scale ``c``."""
    beta_raw: Parameter = field(default_factory=lambda: Parameter(np.array(raw_from_beta(1.0)), name="beta_raw"))
    c: float = 1.0
    penalty: float = 0.01
    delta: float = SINGULAR_DELTA

    def beta(self) -> float:
        return float(beta_from_raw(float(self.beta_raw.data)))


def adaptive_loss(z: Tensor, state: AdaptiveLossState) -> Tensor:
    """Mean robust loss of the residuals ``z`` minus ``penalty * beta``; differentiable in z and beta_raw."""
    z = T.as_tensor(z)
    beta_t = beta_from_raw(state.beta_raw)
    beta = float(beta_t.data)
    x = (z * (1.0 / state.c)) ** 2.0
    if abs(beta - 2.0) < state.delta:
        per = x * 0.5
    elif abs(beta) < state.delta:
        per = T.log1p(x * 0.5)
    else:
        a = beta_t * -1.0 + 2.0            # beta < 2 always under the map
        per = a / beta_t * T.expm1(beta_t * 0.5 * T.log1p(x / a))
    return T.mean(per) - beta_t * state.penalty


def mse_loss(z: Tensor) -> Tensor:
    return T.mean(T.as_tensor(z) ** 2.0)


# metrics

@dataclass(frozen=True)
class Metrics:
    mae: float
    mse: float
    rmse: float
    r2: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def metrics(q_true, q_pred) -> Metrics:
    """MAE, MSE, RMSE and R^2; R^2 is None when ``q_true`` is constant."""
    t = np.asarray(q_true, dtype=np.float64).ravel()
    p = np.asarray(q_pred, dtype=np.float64).ravel()
    if t.shape != p.shape or t.size == 0:
        raise ValueError(f"metrics need equal nonzero lengths, got {t.size} and {p.size}")
    err = t - p
    mse = float(np.mean(err ** 2))
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    r2 = None
    if ss_tot > 0:
        r2 = 1.0 - float(np.sum(err ** 2)) / ss_tot
    else:
        log.warning("constant target: R^2 undefined")
    return Metrics(float(np.mean(np.abs(err))), mse, math.sqrt(mse), r2)


def persistence_forecast(series: np.ndarray, starts: np.ndarray, seq_len: int, pred_len: int) -> np.ndarray:
    """Per-step persistence: the forecast for time t is the observed value at t - 1."""
    series = np.asarray(series, dtype=np.float64)
    rows = np.asarray(starts)[:, None] + seq_len + np.arange(pred_len)[None, :]
    return series[rows - 1]


# training loop

class EarlyStopping:
    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.epoch = 0
        self.bad = 0

    def update(self, val_loss: float) -> bool:
        """Record one epoch; True means stop now."""
        self.epoch += 1
        if val_loss < self.best:
            self.best, self.best_epoch, self.bad = val_loss, self.epoch, 0
        else:
            self.bad += 1
        return self.bad >= self.patience


@dataclass
class TrainConfig:
    epochs: int = 200
    patience: int = 10
    batch_size: int = 32
    steps_per_epoch: int | None = None   # None: one pass over the training windows
    loss: str = "adaptive"               # or "mse"
    beta_init: float = 1.0
    beta_penalty: float = 0.01
    c: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.loss not in ("adaptive", "mse"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    beta: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""
    wall_time: float = 0.0
    metrics: dict | None = None

    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch - 1] if self.best_epoch else math.inf

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def write_csv(self, path) -> None:
        lines = ["epoch,train_loss,val_loss,beta"]
        for i, (a, b, c) in enumerate(zip(self.train_loss, self.val_loss, self.beta), 1):
            lines.append(f"{i},{a!r},{b!r},{c!r}")
        Path(path).write_text("\n".join(lines) + "\n")


def _batch(ds, idx):
    return ds.inputs[idx], ds.time_marks[idx], ds.target_marks[idx], ds.targets[idx]


def predict(model, ds, batch_size: int = 64) -> np.ndarray:
    """Forecasts (N, L_y) for every window, in evaluation mode."""
    was = model.training
    model.eval()
    out = []
    try:
        with T.no_grad():
            for lo in range(0, len(ds), batch_size):
                idx = np.arange(lo, min(lo + batch_size, len(ds)))
                x, mk, tm, _ = _batch(ds, idx)
                out.append(model.forecast(x, mk, tm).data[..., 0])
    finally:
        model.train(was)
    return np.concatenate(out, axis=0) if out else np.zeros((0, model.cfg.pred_len))


def validation_loss(model, ds, batch_size: int = 64) -> float:
    """Mean squared error on the standardized target; comparable across loss choices."""
    return float(np.mean((predict(model, ds, batch_size) - ds.targets) ** 2))


def train_loop(model, train_ds, val_ds, opt_cfg: GcAdamConfig, cfg: TrainConfig,
               loss_state: AdaptiveLossState | None = None, on_epoch=None) -> TrainReport:
    """Seeded mini-batch training with early stopping; the best epoch's weights are restored."""
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise ValueError("training and validation sets must be nonempty")
    started = time.perf_counter()
    if cfg.loss == "adaptive" and loss_state is None:
        loss_state = AdaptiveLossState(Parameter(np.array(raw_from_beta(cfg.beta_init)), name="beta_raw"),
                                       c=cfg.c, penalty=cfg.beta_penalty)
    params = model.parameters() + ([loss_state.beta_raw] if cfg.loss == "adaptive" else [])
    opt = GcAdam(params, opt_cfg)
    order_rng, drop_rng = T.make_rng(cfg.seed), T.make_rng(cfg.seed + 1_000_003)
    stopper = EarlyStopping(cfg.patience)
    report = TrainReport()
    best_state = None
    n = len(train_ds)
    per_epoch = math.ceil(n / cfg.batch_size)
    if cfg.steps_per_epoch is not None:
        per_epoch = min(per_epoch, cfg.steps_per_epoch)
    model.train()
    for epoch in range(1, cfg.epochs + 1):
        perm = order_rng.permutation(n)
        losses = []
        try:
            for s in range(per_epoch):
                idx = np.sort(perm[s * cfg.batch_size:(s + 1) * cfg.batch_size])
                if len(idx) == 0:
                    break
                x, mk, tm, y = _batch(train_ds, idx)
                opt.zero_grad()
                z = model.forecast(x, mk, tm, rng=drop_rng)[..., 0] - y
                loss = adaptive_loss(z, loss_state) if cfg.loss == "adaptive" else mse_loss(z)
                if not np.isfinite(loss.data):
                    raise NonFiniteGradient(f"non-finite loss at epoch {epoch}, step {s + 1}")
                T.backward(loss)
                opt.step()
                losses.append(loss.item())
        except NonFiniteGradient as exc:
            log.error("training diverged: %s", exc)
            report.stop_reason = "diverged"
            break
        val = validation_loss(model, val_ds, max(64, cfg.batch_size))
        report.train_loss.append(float(np.mean(losses)))
        report.val_loss.append(val)
        report.beta.append(loss_state.beta() if cfg.loss == "adaptive" else 2.0)
        stop = stopper.update(val)
        if stopper.best_epoch == epoch:
            best_state = (model.state_dict(), None if loss_state is None else loss_state.beta_raw.data.copy())
        log.info("epoch %d: train %.5f val %.5f beta %.3f", epoch, report.train_loss[-1], val, report.beta[-1])
        if on_epoch is not None:
            on_epoch(epoch, report)
        if stop:
            report.stop_reason = "patience"
            break
    else:
        report.stop_reason = "epochs"
    if best_state is not None:
        model.load_state_dict(best_state[0])
        if best_state[1] is not None:
            loss_state.beta_raw.data = best_state[1]
    report.best_epoch = stopper.best_epoch
    report.wall_time = time.perf_counter() - started
    model.eval()
    return report
