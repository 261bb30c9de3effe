"""Training loop: combined L1 + L2 loss, Adam, checkpoints, evaluation.

The protocol is deliberately plain: shuffle with a seeded generator each
epoch, roll the model out over each mini-batch, take the loss on the
predicted frames only, backpropagate, and apply one bias-corrected Adam
update. Checkpoints capture parameters, optimizer moments, the epoch
counter, and a digest of the resolved configuration, so resuming reproduces
the uninterrupted run bit for bit.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .architecture import ArchitectureConfig, LayerSpec, Model, SequenceSpec
from .configio import format_kv, parse_kv
from .datasets import SequenceDataset, derive_seed
from .errors import ConfigError, DataIOError, FormatError, NumericsError, UsageError
from .metrics import MetricReport, contingency, csi, hss, psnr, ssim
from .tensor import Tape, Tensor, abs_, add, backward, hadamard, scale, sub, sum_all
from .tensorfile import read_tensor, write_tensor

__all__ = [
    "TrainConfig",
    "AdamState",
    "loss_l1l2",
    "adam_step",
    "train",
    "TrainResult",
    "evaluate",
    "CopyLastBaseline",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT = "mslstm-checkpoint-1"


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and loop hyperparameters."""

    lr: float = 3e-4
    batch: int = 4
    epochs: int = 1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dtype: str = "float64"

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.batch < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


def loss_l1l2(preds, targets) -> Tensor:
    """Mean absolute error plus mean squared error over all elements."""
    if len(preds) != len(targets):
        raise UsageError(f"{len(preds)} predictions vs {len(targets)} targets")
    if not preds:
        raise UsageError("loss needs at least one frame")
    total = None
    count = 0
    for p, t in zip(preds, targets):
        e = sub(p, t)
        frame = add(sum_all(abs_(e)), sum_all(hadamard(e, e)))
        total = frame if total is None else add(total, frame)
        count += e.data.size
    return scale(total, 1.0 / count)


@dataclass
class AdamState:
    """First and second moment accumulators plus the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, named_params) -> "AdamState":
        return cls(
            m={name: np.zeros_like(t.data) for name, t in named_params},
            v={name: np.zeros_like(t.data) for name, t in named_params},
        )


def adam_step(
    params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState, cfg: TrainConfig
) -> dict[str, Tensor]:
    """One bias-corrected Adam update; mutates ``state``, returns new tensors."""
    state.t += 1
    corr1 = 1.0 - cfg.beta1**state.t
    corr2 = 1.0 - cfg.beta2**state.t
    out: dict[str, Tensor] = {}
    for name, p in params.items():
        g = grads[name]
        m = state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * (g * g)
        update = cfg.lr * (m / corr1) / (np.sqrt(v / corr2) + cfg.eps)
        out[name] = Tensor._wrap(p.data - update)
    return out


@dataclass
class TrainResult:
    model: Model
    adam: AdamState
    history: list[dict]
    checkpoint_dir: Path | None = None


def _batch_frames(block: np.ndarray, dtype) -> list[Tensor]:
    # block is (b, T, c, h, w); one contiguous tensor per time step
    return [
        Tensor._wrap(np.ascontiguousarray(block[:, t], dtype=dtype))
        for t in range(block.shape[1])
    ]


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng(derive_seed(seed, 1_000_000_007 + epoch)).permutation(n)


def _guard_finite(loss_value: float, model: Model, epoch: int, step: int) -> None:
    if np.isfinite(loss_value):
        return
    raise NumericsError(f"non-finite loss {loss_value} at epoch {epoch} step {step}")


def train(
    arch: ArchitectureConfig,
    data: SequenceDataset,
    seq: SequenceSpec,
    cfg: TrainConfig,
    out_dir=None,
    resume=None,
    log=None,
) -> TrainResult:
    """Optimize a model on ``data`` and return it with its epoch history.

    ``out_dir`` makes every epoch write a checkpoint directory; ``resume``
    points at such a directory and continues the run it captured, which is
    bitwise identical to never having stopped.
    """
    sequences = data.sequences
    if sequences.shape[1] != seq.total:
        raise UsageError(
            f"dataset has {sequences.shape[1]} frames per sequence, "
            f"but the sequence spec needs m+n = {seq.total}"
        )
    dtype = cfg.np_dtype
    if resume is not None:
        model, adam, loaded_cfg, loaded_seq, start_epoch = load_checkpoint(resume)
        if loaded_cfg != cfg or loaded_seq != seq:
            raise ConfigError("resume checkpoint was written with a different configuration")
        if _arch_manifest(model.config) != _arch_manifest(arch):
            raise ConfigError("resume checkpoint was written for a different architecture")
    else:
        model = Model(arch, seed=cfg.seed, dtype=dtype)
        adam = AdamState.init(model.named_parameters())
        start_epoch = 0

    history: list[dict] = []
    n_seq = sequences.shape[0]
    ckpt_dir = Path(out_dir) if out_dir is not None else None
    for epoch in range(start_epoch, cfg.epochs):
        started = time.perf_counter()
        order = _epoch_order(cfg.seed, epoch, n_seq)
        losses = []
        for step, lo in enumerate(range(0, n_seq, cfg.batch)):
            idx = order[lo : lo + cfg.batch]
            frames = _batch_frames(sequences[idx], dtype)
            with Tape() as tape:
                preds = model.rollout(frames[: seq.m], seq.n)
                loss = loss_l1l2(preds, frames[seq.m :])
            backward(tape, loss)
            loss_value = loss.item()
            _guard_finite(loss_value, model, epoch, step)
            params = dict(model.named_parameters())
            grads = {name: tape.grad(t) for name, t in params.items()}
            updated = adam_step(params, grads, adam, cfg)
            for name, tensor in updated.items():
                if not np.isfinite(tensor.data).all():
                    raise NumericsError(
                        f"parameter {name} became non-finite at epoch {epoch} step {step}"
                    )
                model.set_parameter(name, tensor)
            losses.append(loss_value)
        entry = {
            "epoch": epoch,
            "mean_loss": float(np.mean(losses)) if losses else float("nan"),
            "seconds": time.perf_counter() - started,
        }
        history.append(entry)
        if ckpt_dir is not None:
            save_checkpoint(ckpt_dir, model, adam, cfg, seq, epoch + 1)
        if log is not None:
            log(entry)
    return TrainResult(model=model, adam=adam, history=history, checkpoint_dir=ckpt_dir)


# ---------------------------------------------------------------------------
# checkpoints


def _arch_manifest(config: ArchitectureConfig) -> dict[str, str]:
    layers = "|".join(f"{s.cell}:{s.hidden}:{s.scale}" for s in config.layers)
    skips = ",".join(f"{a}-{b}" for a, b in config.skips)
    return {
        "preset": config.preset_name or "custom",
        "layers": layers,
        "skips": skips,
        "input_channels": str(config.input_channels),
        "kernel_small": str(config.kernel_small),
        "kernel_large": str(config.kernel_large),
    }


def _arch_from_manifest(kv: dict[str, str]) -> ArchitectureConfig:
    layers = []
    for part in kv["layers"].split("|"):
        cell, hidden, scl = part.split(":")
        layers.append(LayerSpec(cell, int(hidden), int(scl)))
    skips = tuple(
        tuple(int(x) for x in pair.split("-")) for pair in kv["skips"].split(",") if pair
    )
    preset_name = kv.get("preset", "custom")
    return ArchitectureConfig(
        layers=tuple(layers),
        skips=skips,  # type: ignore[arg-type]
        input_channels=int(kv["input_channels"]),
        kernel_small=int(kv["kernel_small"]),
        kernel_large=int(kv["kernel_large"]),
        preset_name="" if preset_name == "custom" else preset_name,
    )


def _config_manifest(cfg: TrainConfig, seq: SequenceSpec) -> dict[str, str]:
    return {
        "lr": repr(cfg.lr),
        "batch": str(cfg.batch),
        "epochs": str(cfg.epochs),
        "seed": str(cfg.seed),
        "beta1": repr(cfg.beta1),
        "beta2": repr(cfg.beta2),
        "eps": repr(cfg.eps),
        "dtype": cfg.dtype,
        "m": str(seq.m),
        "n": str(seq.n),
    }


def _digest(entries: dict[str, str]) -> str:
    canon = "".join(f"{k}={v}\n" for k, v in sorted(entries.items()))
    return hashlib.sha256(canon.encode()).hexdigest()


def save_checkpoint(
    out_dir, model: Model, adam: AdamState, cfg: TrainConfig, seq: SequenceSpec, epoch: int
) -> Path:
    """Write manifest plus one tensor file per parameter and moment."""
    out = Path(out_dir)
    try:
        (out / "params").mkdir(parents=True, exist_ok=True)
        (out / "adam").mkdir(exist_ok=True)
    except OSError as exc:
        raise DataIOError(f"cannot create checkpoint directory {out}: {exc}") from exc
    config_entries = {**_arch_manifest(model.config), **_config_manifest(cfg, seq)}
    manifest = {
        "format": CHECKPOINT_FORMAT,
        **config_entries,
        "digest": _digest(config_entries),
        "epoch": str(epoch),
        "adam_t": str(adam.t),
    }
    for name, tensor in model.named_parameters():
        write_tensor(out / "params" / f"{name}.mslt", tensor.data)
        write_tensor(out / "adam" / f"m.{name}.mslt", adam.m[name])
        write_tensor(out / "adam" / f"v.{name}.mslt", adam.v[name])
    (out / "manifest.txt").write_text(format_kv(manifest), encoding="utf-8")
    return out


def load_checkpoint(path):
    """Rebuild (model, adam, train config, sequence spec, epoch)."""
    root = Path(path)
    manifest_path = root / "manifest.txt"
    if not manifest_path.is_file():
        raise DataIOError(f"{root} does not contain a checkpoint manifest")
    kv = parse_kv(manifest_path.read_text(encoding="utf-8"))
    if kv.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{root}: unknown checkpoint format {kv.get('format')!r}")
    config_entries = {
        k: v for k, v in kv.items() if k not in ("format", "digest", "epoch", "adam_t")
    }
    if _digest(config_entries) != kv.get("digest"):
        raise FormatError(f"{root}: manifest digest mismatch, checkpoint edited or corrupt")
    arch = _arch_from_manifest(kv)
    cfg = TrainConfig(
        lr=float(kv["lr"]),
        batch=int(kv["batch"]),
        epochs=int(kv["epochs"]),
        seed=int(kv["seed"]),
        beta1=float(kv["beta1"]),
        beta2=float(kv["beta2"]),
        eps=float(kv["eps"]),
        dtype=kv["dtype"],
    )
    seq = SequenceSpec(int(kv["m"]), int(kv["n"]))
    model = Model(arch, seed=cfg.seed, dtype=cfg.np_dtype)
    adam = AdamState(m={}, v={}, t=int(kv["adam_t"]))
    for name, tensor in model.named_parameters():
        loaded = read_tensor(root / "params" / f"{name}.mslt")
        if loaded.shape != tensor.data.shape:
            raise FormatError(f"{root}: parameter {name} has shape {loaded.shape}")
        model.set_parameter(name, Tensor._wrap(np.ascontiguousarray(loaded)))
        adam.m[name] = read_tensor(root / "adam" / f"m.{name}.mslt")
        adam.v[name] = read_tensor(root / "adam" / f"v.{name}.mslt")
    return model, adam, cfg, seq, int(kv["epoch"])


# ---------------------------------------------------------------------------
# evaluation


class CopyLastBaseline:
    """Persistence forecast: every prediction repeats the last input frame."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)

    def rollout(self, frames, n):
        return [frames[-1]] * n


def _frame_ssim(pred: np.ndarray, target: np.ndarray) -> float:
    # channel-mean SSIM; datasets here are single-channel
    vals = [ssim(pred[c], target[c]) for c in range(pred.shape[0])]
    return float(np.mean(vals))


def evaluate(
    model,
    data: SequenceDataset,
    seq: SequenceSpec,
    thresholds: tuple[float, ...] = (),
    eval_batch: int = 16,
) -> MetricReport:
    """Roll the model over every test sequence and aggregate metrics.

    Predictions are clamped to [0, 1] before scoring. MSE and MAE use the
    sum-over-pixels convention; SSIM and PSNR are averaged per frame over
    sequences; skill scores aggregate one contingency table per frame (and
    one overall) across all sequences.
    """
    sequences = data.sequences
    if sequences.shape[1] < seq.total:
        raise UsageError(
            f"dataset has {sequences.shape[1]} frames per sequence, needs {seq.total}"
        )
    dtype = getattr(model, "dtype", np.float64)
    n_seq = sequences.shape[0]
    preds_all = np.empty((n_seq,) + (seq.n,) + sequences.shape[2:], dtype=np.float64)
    for lo in range(0, n_seq, eval_batch):
        block = sequences[lo : lo + eval_batch]
        frames = _batch_frames(block[:, : seq.m], dtype)
        preds = model.rollout(frames, seq.n)
        for j, p in enumerate(preds):
            preds_all[lo : lo + block.shape[0], j] = p.data
    np.clip(preds_all, 0.0, 1.0, out=preds_all)
    targets = sequences[:, seq.m : seq.total].astype(np.float64)

    frames_rows = []
    tables_overall = {tau: None for tau in thresholds}
    for j in range(seq.n):
        diff = preds_all[:, j] - targets[:, j]
        row = {
            "mse": float(np.mean((diff * diff).sum(axis=(1, 2, 3)))),
            "mae": float(np.mean(np.abs(diff).sum(axis=(1, 2, 3)))),
            "ssim": float(
                np.mean([_frame_ssim(preds_all[i, j], targets[i, j]) for i in range(n_seq)])
            ),
            "psnr": float(np.mean([psnr(preds_all[i, j], targets[i, j]) for i in range(n_seq)])),
        }
        for tau in thresholds:
            table = contingency(preds_all[:, j], targets[:, j], tau)
            tables_overall[tau] = table if tables_overall[tau] is None else tables_overall[tau] + table
            row[f"csi_{tau:g}"] = csi(table)
            row[f"hss_{tau:g}"] = hss(table)
        frames_rows.append(row)

    overall = {
        "mse": float(np.mean([r["mse"] for r in frames_rows])),
        "mae": float(np.mean([r["mae"] for r in frames_rows])),
        "ssim": float(np.mean([r["ssim"] for r in frames_rows])),
        "psnr": float(np.mean([r["psnr"] for r in frames_rows])),
    }
    for tau in thresholds:
        overall[f"csi_{tau:g}"] = csi(tables_overall[tau])
        overall[f"hss_{tau:g}"] = hss(tables_overall[tau])
    return MetricReport(frames=frames_rows, overall=overall, thresholds=tuple(thresholds))
