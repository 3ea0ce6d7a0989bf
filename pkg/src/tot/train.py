"""Offline training, the online forecast-then-adapt protocol, and checkpoints."""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .binio import FormatError, pack_arrays, pack_blob, seal, unpack_arrays, unpack_blob, unseal
from .diffnum import AdamHyper, AdamState, NonFiniteError, ParamStore, adam_step, clip_by_global_norm, value_and_grad
from .model import ModelConfig, TotModel, encode, forecast
from .objective import LossBreakdown, LossWeights, total_loss, window_loss, window_terms
from .synthgen import Dataset

CKPT_MAGIC = b"TOTC"
CKPT_VERSION = 1


class TrainingError(RuntimeError):
    """Training hit a non-finite loss or an otherwise unusable state."""


class CheckpointError(FormatError):
    """Checkpoint file is corrupt or of an unsupported version."""


class CheckpointMismatchError(ValueError):
    """Checkpoint does not fit the model configuration it is loaded against."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    grad_clip: float | None = 5.0
    online_steps_per_arrival: int = 1
    sparsity_steps: int = 8
    kl_warmup_steps: int = 0
    weights: LossWeights = LossWeights()

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.online_steps_per_arrival < 0:
            raise ValueError("online_steps_per_arrival must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive when set")
        if self.sparsity_steps < 1:
            raise ValueError("sparsity_steps must be >= 1")
        if self.kl_warmup_steps < 0:
            raise ValueError("kl_warmup_steps must be >= 0")

    def weights_at(self, step: int) -> LossWeights:
        """Loss weights in force at an optimizer step (beta ramps up linearly)."""
        if self.kl_warmup_steps == 0 or step >= self.kl_warmup_steps:
            return self.weights
        return replace(self.weights, beta=self.weights.beta * step / self.kl_warmup_steps)

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("weights"), dict):
            d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


@dataclass
class TrainState:
    """Everything needed to continue a run exactly where it stopped."""
    model: TotModel
    adam: AdamState
    rng: np.random.Generator
    step: int = 0
    epoch: int = 0
    batch_in_epoch: int = 0
    history: list = field(default_factory=list)
    epoch_acc: list = field(default_factory=list)  # per-batch breakdowns of the running epoch

    @classmethod
    def fresh(cls, model: TotModel, cfg: TrainConfig) -> "TrainState":
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7077]))
        return cls(model.copy(), AdamState.zeros(model.params), rng)


# ---------------------------------------------------------------- single update

def gradient_step(state: TrainState, windows: np.ndarray, cfg: TrainConfig) -> LossBreakdown:
    """One Adam update on a batch of windows; advances state in place."""
    model = state.model
    c = model.config
    B = windows.shape[0]
    noise = state.rng.standard_normal((B, c.T, c.n))
    f = c.first_decoded
    span = c.t_in - f
    k = min(cfg.sparsity_steps, B * span)
    flat = state.rng.choice(B * span, size=k, replace=False)
    idx = np.stack([flat // span, f + flat % span], axis=1)
    weights = cfg.weights_at(state.step)
    try:
        _, grads, (terms,) = value_and_grad(window_loss, model.params, model, windows, noise, weights, idx)
    except NonFiniteError:
        terms = window_terms(model, windows, noise, idx)
    br = total_loss(terms, weights)
    try:
        br.check_finite()
    except NonFiniteError as e:
        raise TrainingError(f"step {state.step}: {e}") from None
    grads, _ = clip_by_global_norm(grads, cfg.grad_clip)
    hyper = AdamHyper(lr=cfg.learning_rate)
    params, state.adam = adam_step(model.params, grads, state.adam, hyper)
    if not np.all(np.isfinite(params.flat())):
        raise TrainingError(f"step {state.step}: parameters became non-finite")
    state.model = model.with_params(params)
    state.step += 1
    return br


def evaluate_windows(model: TotModel, windows: np.ndarray, weights: LossWeights, seed: int = 0) -> LossBreakdown:
    """Loss breakdown with a fixed noise draw, no update."""
    c = model.config
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((windows.shape[0], c.T, c.n))
    return total_loss(window_terms(model, windows, noise), weights)


# ---------------------------------------------------------------- offline

def make_windows(x: np.ndarray, T: int, stride: int = 1) -> np.ndarray:
    """All length-T windows of x (as a read-only strided view)."""
    if x.shape[0] < T:
        raise ValueError(f"series of length {x.shape[0]} is shorter than window {T}")
    v = np.lib.stride_tricks.sliding_window_view(x, T, axis=0)  # (N, n, T)
    return np.swapaxes(v, 1, 2)[::stride]


def train_offline(dataset: Dataset | np.ndarray, model: TotModel | None, cfg: TrainConfig,
                  state: TrainState | None = None, max_steps: int | None = None,
                  on_epoch=None) -> TrainState:
    """Adam on shuffled sliding windows of the training range.

    Pass a `state` to resume; `max_steps` stops early (for checkpointing) and
    the returned state can be handed back to continue bitwise identically.
    The per-epoch history holds mean LossBreakdown dicts.
    """
    x = dataset if isinstance(dataset, np.ndarray) else dataset.x[dataset.train_range.start:dataset.train_range.stop]
    if state is None:
        state = TrainState.fresh(model, cfg)
    c = state.model.config
    if x.shape[1] != c.n:
        raise ValueError(f"data has n={x.shape[1]} but the model expects n={c.n}")
    windows = make_windows(x, c.T)
    N = windows.shape[0]
    n_batches = -(-N // cfg.batch_size)
    done = 0
    while state.epoch < cfg.epochs:
        order = np.random.default_rng([cfg.seed, state.epoch]).permutation(N)
        while state.batch_in_epoch < n_batches:
            if max_steps is not None and done >= max_steps:
                return state
            b = state.batch_in_epoch
            sel = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            br = gradient_step(state, np.ascontiguousarray(windows[sel]), cfg)
            state.epoch_acc.append(br.to_dict())
            state.batch_in_epoch += 1
            done += 1
        acc = state.epoch_acc
        summary = {k: float(np.mean([a[k] for a in acc])) for k in acc[0]} if acc else {}
        state.history.append(summary)
        state.epoch_acc = []
        if on_epoch is not None:
            on_epoch(state.epoch, summary)
        state.epoch += 1
        state.batch_in_epoch = 0
    return state


# ---------------------------------------------------------------- online

@dataclass
class OnlineResult:
    rows: list[dict]
    forecasts: dict[int, np.ndarray]
    state: TrainState

    @property
    def mse(self) -> float:
        return float(np.mean([r["mse"] for r in self.rows])) if self.rows else float("nan")

    @property
    def mae(self) -> float:
        return float(np.mean([r["mae"] for r in self.rows])) if self.rows else float("nan")


def predict(model: TotModel, x_hist: np.ndarray) -> np.ndarray:
    """Point forecast from posterior means (no sampling)."""
    c = model.config
    enc = encode(model, x_hist)
    return forecast(model, enc.mean[..., c.t_in:, :], x_hist)


def online_run(stream: Dataset | np.ndarray, model: TotModel, cfg: TrainConfig,
               state: TrainState | None = None) -> OnlineResult:
    """Forecast-then-adapt over a stream.

    At arrival t the forecast for t+1..t+h is issued from x[t-t_in+1..t];
    then the forecast issued at t-h (whose targets have now all arrived) is
    scored, and K gradient steps are taken on the window ending at t.  The
    first scored arrival is t_in - 1 + h, so there are len(stream) - (t_in - 1 + h) rows.
    """
    x = stream if isinstance(stream, np.ndarray) else stream.x
    if state is None:
        state = TrainState.fresh(model, cfg)
    c = state.model.config
    if x.shape[1] != c.n:
        raise ValueError(f"stream has n={x.shape[1]} but the model expects n={c.n}")
    K = cfg.online_steps_per_arrival
    h, warmup = c.horizon, c.t_in - 1 + c.horizon
    forecasts: dict[int, np.ndarray] = {}
    rows = []
    sse = sae = 0.0
    count = 0
    for t in range(c.t_in - 1, x.shape[0]):
        forecasts[t] = predict(state.model, x[t - c.t_in + 1:t + 1])
        if t < warmup:
            continue
        issued = t - h
        err = forecasts.pop(issued) - x[issued + 1:t + 1]
        mse, mae = float(np.mean(err * err)), float(np.mean(np.abs(err)))
        sse += mse
        sae += mae
        count += 1
        row = {"step": t, "mse": mse, "mae": mae, "cum_mse": sse / count, "cum_mae": sae / count}
        window = x[t - c.T + 1:t + 1][None]
        br = None
        for _ in range(K):
            br = gradient_step(state, window, cfg)
        for k in (*LossBreakdown.TERMS, "total"):
            row[k] = getattr(br, k) if br is not None else float("nan")
        rows.append(row)
    return OnlineResult(rows, forecasts, state)


ONLINE_COLUMNS = ("step", "mse", "mae", "cum_mse", "cum_mae", *LossBreakdown.TERMS, "total")


def write_rows_csv(rows: list[dict], path, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(k, "")) for k in columns])


def _fmt(v):
    if isinstance(v, float):
        return "" if np.isnan(v) else repr(v)
    return v


# ---------------------------------------------------------------- checkpoints

_CKPT_HEADER = struct.Struct("<4sI")


def encode_checkpoint(state: TrainState, train_cfg: TrainConfig | None = None) -> bytes:
    meta = {
        "model_config": state.model.config.to_dict(),
        "train_config": None if train_cfg is None else train_cfg.to_dict(),
        "step": state.step, "epoch": state.epoch, "batch_in_epoch": state.batch_in_epoch,
        "adam_step": state.adam.step, "history": state.history,
        "epoch_acc": state.epoch_acc,
    }
    rng_state = state.rng.bit_generator.state
    body = (_CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION)
            + pack_blob(json.dumps(meta, sort_keys=True).encode())
            + pack_arrays(state.model.params)
            + pack_arrays(state.adam.m) + pack_arrays(state.adam.v)
            + pack_blob(json.dumps(rng_state, sort_keys=True).encode()))
    return seal(body)


def decode_checkpoint(buf: bytes, expected: ModelConfig | None = None) -> tuple[TrainState, TrainConfig | None]:
    try:
        body = unseal(buf, CKPT_MAGIC, _CKPT_HEADER.size)
    except FormatError as e:
        raise CheckpointError(f"checkpoint: {e}") from None
    _, version = _CKPT_HEADER.unpack_from(body, 0)
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {CKPT_VERSION})")
    try:
        meta_raw, pos = unpack_blob(body, _CKPT_HEADER.size)
        params, pos = unpack_arrays(body, pos)
        m, pos = unpack_arrays(body, pos)
        v, pos = unpack_arrays(body, pos)
        rng_raw, pos = unpack_blob(body, pos)
    except FormatError as e:
        raise CheckpointError(f"checkpoint: {e}") from None
    if pos != len(body):
        raise CheckpointError("checkpoint has trailing bytes")
    meta = json.loads(meta_raw)
    mcfg = ModelConfig.from_dict(meta["model_config"])
    if expected is not None and mcfg != expected:
        raise CheckpointMismatchError(f"checkpoint model config {mcfg} does not match {expected}")
    model = TotModel.init(mcfg)
    ps = ParamStore(params)
    model.params.assert_same_layout(ps)
    model = model.with_params(ps)
    rng = np.random.default_rng()
    rng.bit_generator.state = json.loads(rng_raw)
    adam = AdamState(meta["adam_step"], ParamStore(m), ParamStore(v))
    state = TrainState(model, adam, rng, meta["step"], meta["epoch"], meta["batch_in_epoch"],
                       meta["history"], meta["epoch_acc"])
    tcfg = None if meta["train_config"] is None else TrainConfig.from_dict(meta["train_config"])
    return state, tcfg


def save_checkpoint(path, state: TrainState, train_cfg: TrainConfig | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(state, train_cfg))


def load_checkpoint(path, expected: ModelConfig | None = None) -> tuple[TrainState, TrainConfig | None]:
    return decode_checkpoint(Path(path).read_bytes(), expected)
