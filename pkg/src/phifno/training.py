"""Masked H1 loss, the relative error E1, ADAM, a plateau scheduler and the epoch loop."""
import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import fno
from . import tensor as T

LOG_COLUMNS = ("epoch", "train_loss", "val_loss", "val_E1_mean", "lr", "is_best")
LOSS_MODES = ("full_h1", "semi_h1")


class NonFiniteLoss(FloatingPointError):
    pass


# -------------------------------------------------------------------- the loss


def fd_gradients(u, spacing):
    """Centered differences along both grid axes; border rows/columns are zero.

    ``spacing`` is ``(dx, dy)`` or a single float for both axes.
    """
    u = np.asarray(u, dtype=float)
    if min(u.shape[-2:]) < 3:
        raise ValueError("centered differences need at least 3 nodes per axis")
    dx, dy = (spacing, spacing) if np.isscalar(spacing) else spacing
    return T.central_diff(u, -2, dx).data, T.central_diff(u, -1, dy).data


def grid_spacing(shape):
    nx, ny = shape[-2:]
    return 1.0 / (nx - 1), 1.0 / (ny - 1)


def loss(u_true, u_pred, S0, S1, mode="full_h1"):
    """Batch mean of the masked squared H1 (or H1 semi-norm) discrepancy.

    ``u_true`` and ``u_pred`` are ``(b, 1, nx, ny)``; ``u_pred`` may be a
    tensor. ``S0``/``S1`` are ``(b, nx, ny)`` masks. Pixel sums are unweighted.
    """
    if mode not in LOSS_MODES:
        raise ValueError(f"unknown loss mode {mode!r}")
    u_true = np.asarray(u_true, dtype=float)
    if u_true.shape[0] == 0:
        raise ValueError("empty batch")
    dx, dy = grid_spacing(u_true.shape)
    diff = T.sub(u_pred, u_true)
    grad_terms = T.add(
        T.masked_sq_norm(T.central_diff(diff, -2, dx), S1),
        T.masked_sq_norm(T.central_diff(diff, -1, dy), S1),
    )
    per_sample = grad_terms if mode == "semi_h1" else T.add(T.masked_sq_norm(diff, S0), grad_terms)
    return T.mean(per_sample)


def metric_E1(u_true, u_pred, S0):
    """Relative discrete L2 error on ``S0``."""
    u_true = np.asarray(u_true, dtype=float)
    u_pred = np.asarray(u_pred, dtype=float)
    S0 = np.asarray(S0, dtype=bool)
    den = np.sum(u_true[S0] ** 2)
    if not S0.any() or den == 0:
        raise ValueError("E1 is undefined: reference vanishes on S0")
    return float(np.sqrt(np.sum((u_true[S0] - u_pred[S0]) ** 2) / den))


# ------------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    t: int
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(0, np.zeros(n), np.zeros(n))


def adam_step(theta, grad, state, lr, beta1=0.9, beta2=0.999, eps=1e-7, weight_decay=0.0):
    """One ADAM update with the decoupled ``weight_decay * theta`` term.

    Returns the new parameter vector; ``state`` is updated in place.
    """
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteLoss("non-finite gradient")
    if grad.shape != state.m.shape or np.shape(theta) != grad.shape:
        raise ValueError("parameter, gradient and moment vectors must align")
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad**2
    m_hat = state.m / (1.0 - beta1**state.t)
    v_hat = state.v / (1.0 - beta2**state.t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps) - weight_decay * theta


@dataclass
class PlateauScheduler:
    """Multiply the rate by ``factor`` after ``patience`` epochs without improvement.

    An epoch improves when its loss is below ``best * (1 - threshold)``.
    """

    lr: float
    factor: float = 0.5
    patience: int = 40
    min_lr: float = 1e-6
    threshold: float = 1e-4
    best: float = math.inf
    bad_epochs: int = 0

    def __post_init__(self):
        if not 0 < self.factor < 1:
            raise ValueError("factor must lie in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")

    def step(self, val_loss):
        if val_loss < self.best * (1.0 - self.threshold):
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr


# --------------------------------------------------------------- training data


@dataclass(eq=False)
class Batchable:
    """Arrays needed for training: inputs, target and masks for ``n`` samples."""

    f: np.ndarray
    phi: np.ndarray
    g: np.ndarray
    w: np.ndarray
    S0: np.ndarray
    S1: np.ndarray

    def __len__(self):
        return len(self.f)

    @property
    def u(self):
        return self.phi * self.w + self.g

    def inputs(self, idx=slice(None)):
        return fno.stack_inputs(self.f[idx], self.phi[idx], self.g[idx])

    def target(self, predict_u, idx=slice(None)):
        if predict_u:
            return self.phi[idx] * self.w[idx] + self.g[idx]
        return self.w[idx]


def to_batchable(dataset):
    from .mesh import masks_from_levelset

    masks = [masks_from_levelset(p) for p in dataset.phi]
    return Batchable(
        dataset.f,
        dataset.phi,
        dataset.g,
        dataset.w,
        np.stack([m.S0 for m in masks]),
        np.stack([m.S1 for m in masks]),
    )


def stats_for(data, predict_u):
    return fno.compute_channel_stats(data.inputs(), data.target(predict_u), data.S0)


def predict_u_tensor(params, data, idx, Xs=None):
    """Tracked ``u`` prediction ``(b, 1, nx, ny)`` for the samples ``idx``."""
    if Xs is None:
        Xs = fno.standardize(data.inputs(idx), params.stats)
    out = fno.unstandardize(fno.forward_standardized(params, Xs), params.stats)
    if params.hyper.predict_u:
        return out
    return T.add(T.mul(out, data.phi[idx][:, None]), data.g[idx][:, None])


def batch_loss(params, data, idx, mode):
    u_pred = predict_u_tensor(params, data, idx)
    return loss(data.u[idx][:, None], u_pred, data.S0[idx], data.S1[idx], mode)


def predict_u(params, data, idx=slice(None), chunk=64):
    n = len(data.f[idx])
    ids = np.arange(len(data))[idx]
    out = np.empty((n,) + data.f.shape[1:])
    with T.no_grad():
        for s in range(0, n, chunk):
            sel = ids[s : s + chunk]
            out[s : s + chunk] = predict_u_tensor(params, data, sel).data[:, 0]
    return out


def dataset_loss(params, data, mode, idx=None, chunk=64):
    """Mean per-sample loss over ``idx`` (all samples by default), without recording."""
    ids = np.arange(len(data)) if idx is None else np.asarray(idx)
    total = 0.0
    with T.no_grad():
        for s in range(0, len(ids), chunk):
            sel = ids[s : s + chunk]
            total += float(batch_loss(params, data, sel, mode).data) * len(sel)
    return total / len(ids)


def e1_values(params, data, idx=None):
    ids = np.arange(len(data)) if idx is None else np.asarray(idx)
    u_pred = predict_u(params, data, ids)
    u_true = data.u[ids]
    return np.array([metric_E1(u_true[k], u_pred[k], data.S0[ids[k]]) for k in range(len(ids))])


# ---------------------------------------------------------------- the loop


@dataclass
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 32
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    l2_lambda: float = 0.0
    weight_decay: float = 0.0
    loss_mode: str = "full_h1"
    factor: float = 0.5
    patience: int = 40
    min_lr: float = 1e-6
    threshold: float = 1e-4
    train_subset: int = 300
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_E1_mean: float
    lr: float
    is_best: bool


@dataclass(eq=False)
class TrainState:
    """Everything needed to continue a run exactly where it stopped."""

    params: fno.FnoParams
    best: fno.FnoParams
    adam: AdamState
    scheduler: PlateauScheduler
    epoch: int = 0
    initial_val_loss: float = math.nan
    log: list = field(default_factory=list)

    @property
    def best_val_loss(self):
        return min((r.val_loss for r in self.log), default=self.initial_val_loss)

    @property
    def best_epoch(self):
        best = [r.epoch for r in self.log if r.is_best]
        return best[-1] if best else 0


def partition(n, batch_size, rng):
    """Shuffle ``range(n)`` into disjoint batches; the last one may be short."""
    perm = rng.permutation(n)
    return [perm[s : s + batch_size] for s in range(0, n, batch_size)]


def init_state(train_data, hyper, cfg, val_data):
    rng = np.random.default_rng([cfg.seed, 0])
    stats = stats_for(train_data, hyper.predict_u)
    params = fno.init_params(hyper, rng, stats)
    sched = PlateauScheduler(cfg.lr, cfg.factor, cfg.patience, cfg.min_lr, cfg.threshold)
    state = TrainState(params, params.copy(), AdamState.zeros(fno.param_count(hyper)), sched)
    state.initial_val_loss = dataset_loss(params, val_data, cfg.loss_mode)
    return state


def train_epoch(state, data, cfg):
    params = state.params
    rng = np.random.default_rng([cfg.seed, 1, state.epoch + 1])
    for idx in partition(len(data), cfg.batch_size, rng):
        params.zero_grad()
        with T.Tape() as tape:
            L = batch_loss(params, data, idx, cfg.loss_mode)
            if cfg.l2_lambda:
                reg = T.Tensor(0.0)
                for t in params.leaves():
                    reg = T.add(reg, T.sum_squares(t))
                L = T.add(L, T.mul(reg, cfg.l2_lambda / (2 * cfg.batch_size)))
        if not np.isfinite(L.data):
            raise NonFiniteLoss(f"non-finite loss at epoch {state.epoch + 1}")
        T.backward(L, tape, params.leaves())
        theta = adam_step(
            params.to_blob(),
            params.grad_blob(),
            state.adam,
            state.scheduler.lr,
            cfg.beta1,
            cfg.beta2,
            cfg.eps,
            cfg.weight_decay,
        )
        params.set_blob(theta)
    params.zero_grad()


def train(train_data, val_data, hyper, cfg, state=None, on_epoch=None):
    """Run (or continue) training; returns the final :class:`TrainState`.

    ``state.best`` holds the parameters with the lowest validation loss seen.
    ``on_epoch(state)`` is called after every epoch.
    """
    if len(train_data) == 0 or len(val_data) == 0:
        raise ValueError("training and validation sets must be nonempty")
    if cfg.batch_size > len(train_data):
        raise ValueError("batch_size exceeds the training set")
    if state is None:
        state = init_state(train_data, hyper, cfg, val_data)
    subset_rng = np.random.default_rng([cfg.seed, 2])
    n_sub = min(cfg.train_subset, len(train_data))
    subset = np.sort(subset_rng.choice(len(train_data), n_sub, replace=False))

    while state.epoch < cfg.epochs:
        train_epoch(state, train_data, cfg)
        state.epoch += 1
        lr_used = state.scheduler.lr
        val_loss = dataset_loss(state.params, val_data, cfg.loss_mode)
        if not np.isfinite(val_loss):
            raise NonFiniteLoss(f"non-finite validation loss at epoch {state.epoch}")
        train_loss = dataset_loss(state.params, train_data, cfg.loss_mode, subset)
        val_e1 = float(np.mean(e1_values(state.params, val_data)))
        is_best = not state.log or val_loss < min(r.val_loss for r in state.log)
        if is_best:
            state.best = state.params.copy()
        state.log.append(EpochRecord(state.epoch, train_loss, val_loss, val_e1, lr_used, bool(is_best)))
        state.scheduler.step(val_loss)
        if on_epoch is not None:
            on_epoch(state)
    return state


# ---------------------------------------------------------------- evaluation


def summarize(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("nothing to summarize")
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {
        "n": int(v.size),
        "mean": float(v.mean()),
        "median": float(med),
        "q1": float(q1),
        "q3": float(q3),
        "min": float(v.min()),
        "max": float(v.max()),
    }


def evaluate(params, data, idx=None):
    """Per-sample E1 of the surrogate and its summary."""
    values = e1_values(params, data, idx)
    return values, summarize(values)


# ---------------------------------------------------------------- persistence


def write_log(log, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for r in log:
            writer.writerow(
                [r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_E1_mean), repr(r.lr), int(r.is_best)]
            )


def read_log(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        EpochRecord(
            int(r["epoch"]),
            float(r["train_loss"]),
            float(r["val_loss"]),
            float(r["val_E1_mean"]),
            float(r["lr"]),
            bool(int(r["is_best"])),
        )
        for r in rows
    ]


def save_state(state, path):
    """Resume file: npz with both parameter blobs, moments and loop counters."""
    sched = asdict(state.scheduler)
    meta = {
        "epoch": state.epoch,
        "adam_t": state.adam.t,
        "scheduler": sched,
        "initial_val_loss": state.initial_val_loss,
        "hyperparams": state.params.hyper.to_dict(),
        "stats": state.params.stats.to_dict(),
        "log": [asdict(r) for r in state.log],
    }
    with open(path, "wb") as fh:
        np.savez(
            fh,
            params=state.params.to_blob(),
            best=state.best.to_blob(),
            m=state.adam.m,
            v=state.adam.v,
            meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
        )


def load_state(path):
    with np.load(path) as z:
        meta = json.loads(z["meta"].tobytes().decode())
        hyper = fno.FnoHyperparams(**meta["hyperparams"])
        stats = fno.ChannelStats.from_dict(meta["stats"])
        params = fno.init_params(hyper, np.random.default_rng(0), stats)
        params.set_blob(z["params"])
        best = params.copy()
        best.set_blob(z["best"])
        adam = AdamState(meta["adam_t"], z["m"].copy(), z["v"].copy())
    state = TrainState(params, best, adam, PlateauScheduler(**meta["scheduler"]), meta["epoch"])
    state.initial_val_loss = meta["initial_val_loss"]
    state.log = [EpochRecord(**r) for r in meta["log"]]
    return state
