"""Direct training of spiking networks: T-step forward, MSE on the voted
time-averaged output, BPTT, optional spike regularization, ANN mode."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .layers import Module, RunContext
from .numeric import AdamState, NonFiniteError, adam_step
from .spikeledger import SpikeLedger

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class DivergenceError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    timesteps: int = 8
    epochs: int = 600
    batch_size: int = 96
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    cutout: int = 16  # 0 disables cutout
    crop_flip: bool = True
    spike_reg: float = 0.0
    mode: str = "snn"  # snn | ann
    seed: int = 0

    def __post_init__(self):
        if self.timesteps < 1:
            raise ValueError("timesteps must be >= 1")
        if self.spike_reg < 0:
            raise ValueError("spike_reg must be >= 0")
        if self.mode not in ("snn", "ann"):
            raise ValueError("mode must be 'snn' or 'ann'")
        if self.mode == "ann":
            self.timesteps = 1

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        base = dict(timesteps=4, epochs=50, batch_size=64)
        base.update(overrides)
        return cls(**base)


@dataclass
class ForwardResult:
    output: np.ndarray  # (N, classes): voted scores averaged over time
    per_step: np.ndarray  # (T, N, classes)
    ledger: SpikeLedger | None
    ctx: RunContext


def new_ledger(net: Module, timesteps: int) -> SpikeLedger:
    ledger = SpikeLedger(timesteps)
    for sid, k in net.spiking_sites():
        ledger.register(sid, k)
    return ledger


def forward_T(net: Module, images: np.ndarray, timesteps: int, training: bool = False,
              ledger: SpikeLedger | None = None, spike_reg: float = 0.0) -> ForwardResult:
    """Present ``images`` (N, C, H, W) as a constant input current for ``timesteps`` steps.

    Membrane states start at V_reset for every call; no state carries over
    between batches.
    """
    if images.ndim != 4:
        raise ValueError(f"expected a (N, C, H, W) batch, got shape {images.shape}")
    x = np.asarray(images, dtype=getattr(net, "dtype", images.dtype))[None]
    ctx = RunContext(timesteps=timesteps, training=training, ledger=ledger)
    per_step = net.forward(x, ctx)
    if per_step.shape[0] == 1 and timesteps > 1:
        per_step = np.broadcast_to(per_step, (timesteps,) + per_step.shape[1:])
    if ledger is not None:
        ledger.add_samples(images.shape[0])
    if spike_reg:
        if ledger is None:
            raise ValueError("spike regularization needs a ledger")
        ctx.spike_reg_grad = spike_reg / (ledger.census * timesteps * images.shape[0])
    return ForwardResult(per_step.mean(axis=0), per_step, ledger, ctx)


def one_hot(labels: np.ndarray, classes: int, dtype=np.float32) -> np.ndarray:
    out = np.zeros((len(labels), classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


def mse_loss(o: np.ndarray, y: np.ndarray) -> float:
    """Mean over classes (and over samples, for a batch) of ``(o - y)^2``."""
    if o.shape != y.shape:
        raise ValueError(f"output {o.shape} and target {y.shape} differ")
    return float(np.mean(np.square(o - y, dtype=np.float64)))


def mse_grad(o: np.ndarray, y: np.ndarray) -> np.ndarray:
    return 2.0 * (o - y) / o.size


def spike_reg_term(ledger: SpikeLedger, spike_reg: float, timesteps: int | None = None) -> float:
    """``spike_reg * spikes / (K * T)`` per sample, K = every registered spiking site."""
    if spike_reg == 0:
        return 0.0
    t = timesteps or ledger.timesteps
    return spike_reg * ledger.total_spikes() / (ledger.census * t * max(ledger.samples, 1))


def backward_T(net: Module, result: ForwardResult, y: np.ndarray) -> dict[str, np.ndarray]:
    """BPTT of the MSE loss (plus spike regularization, if enabled at forward time).

    Gradients are left on the modules and also returned as a name -> array map.
    """
    go = mse_grad(result.output, y).astype(result.per_step.dtype)
    steps = result.per_step.shape[0]
    g = np.broadcast_to(go / steps, result.per_step.shape).copy()
    net.zero_grad()
    net.backward(g, result.ctx)
    return dict(net.named_grads())


def accuracy(o: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(o, axis=1) == labels))


def _batches(n: int, batch_size: int, rng: np.random.Generator | None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def evaluate(net: Module, dataset, timesteps: int, batch_size: int = 256) -> tuple[float, SpikeLedger]:
    """Eval-mode accuracy and a spike ledger over the whole dataset."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    ledger = new_ledger(net, timesteps)
    correct = 0
    for idx in _batches(len(dataset), batch_size, None):
        res = forward_T(net, dataset.images[idx], timesteps, training=False, ledger=ledger)
        correct += int(np.sum(np.argmax(res.output, axis=1) == dataset.labels[idx]))
    return correct / len(dataset), ledger


def train_step(net: Module, images, labels, cfg: TrainConfig, opt: AdamState, classes: int):
    """One optimizer step on one mini-batch; returns ``(loss, correct, spikes)``."""
    ledger = new_ledger(net, cfg.timesteps)
    try:
        res = forward_T(net, images, cfg.timesteps, training=True, ledger=ledger, spike_reg=cfg.spike_reg)
        y = one_hot(labels, classes, dtype=res.output.dtype)
        loss = mse_loss(res.output, y) + spike_reg_term(ledger, cfg.spike_reg, cfg.timesteps)
        if not math.isfinite(loss):
            raise DivergenceError(f"loss became {loss}")
        grads = backward_T(net, res, y)
        adam_step(dict(net.named_parameters()), grads, opt)
    except NonFiniteError as exc:
        raise DivergenceError(str(exc)) from exc
    correct = int(np.sum(np.argmax(res.output, axis=1) == labels))
    return loss, correct, ledger.total_spikes()


def make_optimizer(cfg: TrainConfig) -> AdamState:
    return AdamState(lr=cfg.lr, betas=tuple(cfg.betas))


def train(net: Module, train_set, cfg: TrainConfig, val_set=None, augment_fn=None, on_epoch=None) -> list[dict]:
    """Train ``net`` in place; returns the per-epoch history.

    ``augment_fn(images, rng)`` is applied to every training batch. All
    randomness (shuffling, augmentation) derives from ``cfg.seed``.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(cfg)
    classes = net.plan.macro.num_classes
    history = []
    for epoch in range(1, cfg.epochs + 1):
        total_loss, correct, spikes, seen = 0.0, 0, 0.0, 0
        for idx in _batches(len(train_set), cfg.batch_size, rng):
            images = train_set.images[idx]
            if augment_fn is not None:
                images = augment_fn(images, rng)
            loss, c, s = train_step(net, images, train_set.labels[idx], cfg, opt, classes)
            total_loss += loss * len(idx)
            correct += c
            spikes += s
            seen += len(idx)
        row = {
            "epoch": epoch,
            "loss": total_loss / seen,
            "train_acc": correct / seen,
            "val_acc": float("nan"),
            "total_spikes": spikes / seen,
        }
        if val_set is not None and len(val_set):
            row["val_acc"], _ = evaluate(net, val_set, cfg.timesteps)
        log.info("epoch %d loss %.4f train_acc %.3f val_acc %.3f spikes/sample %.0f",
                 epoch, row["loss"], row["train_acc"], row["val_acc"], row["total_spikes"])
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return history


HISTORY_COLUMNS = ("epoch", "loss", "train_acc", "val_acc", "total_spikes")


def write_history(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in history:
            writer.writerow({k: repr(float(row[k])) if k != "epoch" else row[k] for k in HISTORY_COLUMNS})


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(net: Module, path, meta: dict | None = None, rng: np.random.Generator | None = None) -> None:
    """Write all parameters and buffers (BN running stats) to an ``.npz`` file."""
    arrays = {f"param/{k}": v for k, v in net.named_parameters()}
    arrays.update({f"buffer/{k}": v for k, v in net.named_buffers()})
    info = {"version": CHECKPOINT_VERSION, **(meta or {})}
    if rng is not None:
        info["rng_state"] = rng.bit_generator.state
    arrays["__meta__"] = np.frombuffer(json.dumps(info, sort_keys=True, default=str).encode(), dtype=np.uint8)
    write_npz(path, arrays)


def write_npz(path, arrays: dict[str, np.ndarray]) -> None:
    """Like ``np.savez`` but byte-reproducible: fixed zip timestamps, sorted keys."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for key in sorted(arrays):
            info = zipfile.ZipInfo(key + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[key]), allow_pickle=False)
            zf.writestr(info, buf.getvalue())


def load_checkpoint(net: Module, path) -> dict:
    """Copy a checkpoint into ``net`` in place; returns its metadata."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        for prefix, items in (("param", net.named_parameters()), ("buffer", net.named_buffers())):
            for k, v in items:
                key = f"{prefix}/{k}"
                if key not in data:
                    raise KeyError(f"checkpoint lacks {key}")
                np.copyto(v, data[key])
    return meta
