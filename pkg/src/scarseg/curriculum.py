"""Difficulty-staged trainer: cumulative stage datasets, stage-dependent
batch sizes and Dice weights, Adam updates, and loss-spike re-selection.

Stage t trains on every sample with difficulty <= t-1, plus the samples
flagged at the end of stage t-1 duplicated (multiplier - 1) extra times in
the epoch ordering. A sample is flagged when its end-of-stage hybrid loss
strictly exceeds the nearest-rank p_spike percentile over the stage
dataset; flags live for exactly one following stage.

Everything is deterministic given the config seed: parameter init, epoch
shuffles and the train/test split each use a dedicated stream id, and
parameters are snapped to the float32 grid after every update so the
stored checkpoint is the exact training state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .losses import LossConfig, hybrid_loss
from .numcore import AdamState, PrngStream, adam_step, percentile_nearest_rank
from .phantom import Dataset
from .segnet import DECAY_MASK, ModelParams, backward_batch, forward_batch, init_params

# stream-id scheme: plain sample ids are reserved for the phantom generator
STREAM_INIT = 1 << 32
STREAM_SPLIT = 2 << 32


def shuffle_stream_id(stage: int, epoch: int) -> int:
    return (3 << 32) | (stage << 16) | epoch


@dataclass(frozen=True)
class StagePlan:
    index: int  # 1-based
    difficulties: frozenset
    epochs: int
    batch_size: int
    w_fg: float
    w_bg: float
    oversample: int = 1  # total multiplicity of flagged samples


@dataclass(frozen=True)
class TrainConfig:
    stages: int = 3
    seed: int = 0
    lr: float = 1e-4
    weight_decay: float = 1e-9
    epochs: tuple = (50, 50, 50)
    batch_sizes: tuple = (32, 4, 4)
    w_fg: tuple = (0.6, 0.75, 0.8)
    w_bg: tuple = (0.4, 0.25, 0.2)
    alpha: float = 0.25
    beta: float = 0.5
    gamma: float = 2.0
    eps: float = 1e-6
    p_spike: float = 90.0
    spike_multiplier: int = 2

    def __post_init__(self):
        if self.stages < 1:
            raise ValueError("need at least one stage")
        for name in ("epochs", "batch_sizes", "w_fg", "w_bg"):
            if len(getattr(self, name)) != self.stages:
                raise ValueError(f"{name} must have one entry per stage ({self.stages})")
        if any(e < 1 for e in self.epochs) or any(b < 1 for b in self.batch_sizes):
            raise ValueError("epochs and batch sizes must be >= 1")
        if not 1e-14 <= self.weight_decay <= 1e-9:
            raise ValueError(
                f"weight decay {self.weight_decay} outside the supported range [1e-14, 1e-9]"
            )
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")
        if not 0.0 < self.p_spike <= 100.0:
            raise ValueError("p_spike must be in (0, 100]")
        if self.spike_multiplier < 1:
            raise ValueError("spike multiplier must be >= 1")
        for t in range(self.stages):
            self.stage_loss_config(t + 1)  # validates alpha/beta/gamma/eps/weights

    def stage_loss_config(self, stage: int) -> LossConfig:
        return LossConfig(
            w_fg=self.w_fg[stage - 1],
            w_bg=self.w_bg[stage - 1],
            eps=self.eps,
            alpha=self.alpha,
            gamma=self.gamma,
            beta=self.beta,
        )


@dataclass
class TrainRecord:
    epoch_losses: list = field(default_factory=list)  # (stage, epoch, mean loss)
    stage_sample_losses: dict = field(default_factory=dict)  # stage -> {id: loss}
    flagged: dict = field(default_factory=dict)  # stage -> sorted ids
    plans: list = field(default_factory=list)
    final_params: ModelParams | None = None


def partition_by_difficulty(ds: Dataset) -> dict:
    """Disjoint, exhaustive, order-preserving split into difficulty classes."""
    out = {0: [], 1: [], 2: []}
    for s in ds.samples:
        if s.difficulty not in out:
            raise ValueError(f"sample {s.sample_id} has difficulty {s.difficulty}, not in 0..2")
        out[s.difficulty].append(s)
    return {d: Dataset(members) for d, members in out.items()}


def stage_datasets(partition: dict, n_stages: int) -> list:
    """Cumulative stage datasets: D_t holds every sample with d <= t-1."""
    levels = sorted(partition)
    if n_stages != len(levels):
        raise ValueError(
            f"stage count {n_stages} does not match the {len(levels)} difficulty levels"
        )
    stages = []
    for t in range(1, n_stages + 1):
        members = []
        for d in levels[:t]:
            members.extend(partition[d].samples)
        members.sort(key=lambda s: s.sample_id)
        stages.append(Dataset(members))
    return stages


def flag_spike_samples(per_sample_losses: dict, p_spike: float) -> set:
    """Ids whose loss strictly exceeds the nearest-rank p_spike percentile."""
    if not per_sample_losses:
        raise ValueError("no per-sample losses to flag from")
    threshold = percentile_nearest_rank(list(per_sample_losses.values()), p_spike)
    return {sid for sid, loss in per_sample_losses.items() if loss > threshold}


class _Prepared:
    """Float64 views of a sample, built once per training run."""

    __slots__ = ("sample_id", "x", "scar", "myo")

    def __init__(self, sample):
        self.sample_id = sample.sample_id
        img = sample.image.astype(np.float64)
        myo = (sample.myo > 0).astype(np.float64)
        self.x = np.ascontiguousarray(np.stack([img, myo]))
        self.scar = (sample.scar > 0).astype(np.float64)
        self.myo = myo


def _snap_to_f32(params: ModelParams) -> None:
    # keeps parameters on the float32 grid so checkpoints capture the exact state
    for t in params.tensors:
        np.copyto(t, t.astype(np.float32))


def _batches(order, size):
    for start in range(0, len(order), size):
        yield order[start : start + size]


def _run_stage(params, adam, plan: StagePlan, pool, loss_cfg, seed, record,
               progress=None, batch_hook=None):
    for epoch in range(1, plan.epochs + 1):
        order = list(range(len(pool)))
        PrngStream(seed, shuffle_stream_id(plan.index, epoch)).shuffle(order)
        loss_sum = 0.0
        for chunk in _batches(order, plan.batch_size):
            batch = [pool[k] for k in chunk]
            if batch_hook is not None:
                batch_hook(plan.index, epoch, [p.sample_id for p in batch])
            x = np.stack([p.x for p in batch])
            yhat, trace = forward_batch(params, x)
            dtotal = np.empty_like(yhat)
            for b, p in enumerate(batch):
                breakdown, grad = hybrid_loss(p.scar, yhat[b, 0], p.myo, loss_cfg)
                dtotal[b, 0] = grad / len(batch)
                loss_sum += breakdown.total
            grads = backward_batch(params, trace, dtotal)
            adam_step(params.tensors, grads, adam, DECAY_MASK)
            _snap_to_f32(params)
        mean_loss = loss_sum / len(pool)
        record.epoch_losses.append((plan.index, epoch, mean_loss))
        if progress is not None:
            progress(plan.index, epoch, mean_loss)


def per_sample_losses(params, samples, loss_cfg, batch_size=32) -> dict:
    """Hybrid loss of each sample under the current parameters."""
    prepared = [s if isinstance(s, _Prepared) else _Prepared(s) for s in samples]
    out = {}
    for chunk in _batches(prepared, batch_size):
        x = np.stack([p.x for p in chunk])
        yhat, _ = forward_batch(params, x)
        for b, p in enumerate(chunk):
            breakdown, _ = hybrid_loss(p.scar, yhat[b, 0], p.myo, loss_cfg)
            out[p.sample_id] = breakdown.total
    return out


def train(train_ds: Dataset, cfg: TrainConfig, progress=None, batch_hook=None):
    """Staged curriculum run; returns (final params, TrainRecord)."""
    if not train_ds.samples:
        raise ValueError("empty training set")
    stages = stage_datasets(partition_by_difficulty(train_ds), cfg.stages)
    prepared = {s.sample_id: _Prepared(s) for s in train_ds.samples}

    params = init_params(PrngStream(cfg.seed, STREAM_INIT))
    _snap_to_f32(params)
    adam = AdamState.for_params(params.tensors, lr=cfg.lr, weight_decay=cfg.weight_decay)
    record = TrainRecord()

    flagged_prev: list = []
    for t in range(1, cfg.stages + 1):
        plan = StagePlan(
            index=t,
            difficulties=frozenset(range(t)),
            epochs=cfg.epochs[t - 1],
            batch_size=cfg.batch_sizes[t - 1],
            w_fg=cfg.w_fg[t - 1],
            w_bg=cfg.w_bg[t - 1],
            oversample=cfg.spike_multiplier,
        )
        record.plans.append(plan)
        loss_cfg = cfg.stage_loss_config(t)
        pool = [prepared[s.sample_id] for s in stages[t - 1].samples]
        for sid in flagged_prev:
            pool.extend([prepared[sid]] * (plan.oversample - 1))
        _run_stage(params, adam, plan, pool, loss_cfg, cfg.seed, record, progress, batch_hook)

        stage_losses = per_sample_losses(
            params, [prepared[s.sample_id] for s in stages[t - 1].samples], loss_cfg
        )
        record.stage_sample_losses[t] = stage_losses
        record.flagged[t] = sorted(flag_spike_samples(stage_losses, cfg.p_spike))
        flagged_prev = record.flagged[t]

    record.final_params = params
    return params, record


def train_baseline(train_ds: Dataset, cfg: TrainConfig, progress=None, batch_hook=None):
    """Ablation control: one stage over the full set, same total epochs,
    stage-1 batch size, final-stage Dice weights, no spike flags."""
    if not train_ds.samples:
        raise ValueError("empty training set")
    prepared = [_Prepared(s) for s in train_ds.samples]

    params = init_params(PrngStream(cfg.seed, STREAM_INIT))
    _snap_to_f32(params)
    adam = AdamState.for_params(params.tensors, lr=cfg.lr, weight_decay=cfg.weight_decay)
    record = TrainRecord()

    plan = StagePlan(
        index=1,
        difficulties=frozenset((0, 1, 2)),
        epochs=sum(cfg.epochs),
        batch_size=cfg.batch_sizes[0],
        w_fg=cfg.w_fg[-1],
        w_bg=cfg.w_bg[-1],
        oversample=1,
    )
    record.plans.append(plan)
    loss_cfg = cfg.stage_loss_config(cfg.stages)
    _run_stage(params, adam, plan, prepared, loss_cfg, cfg.seed, record, progress, batch_hook)

    record.final_params = params
    return params, record


EPOCH_LOSS_NAME = "epoch_loss.csv"
FLAGS_NAME = "flags.csv"


def write_train_record(record: TrainRecord, directory) -> None:
    directory = Path(directory)
    lines = ["stage,epoch,mean_loss"]
    for stage, epoch, loss in record.epoch_losses:
        lines.append(f"{stage},{epoch},{loss!r}")
    (directory / EPOCH_LOSS_NAME).write_text("\n".join(lines) + "\n")

    lines = ["stage,sample_id,loss"]
    for stage in sorted(record.flagged):
        for sid in record.flagged[stage]:
            lines.append(f"{stage},{sid},{record.stage_sample_losses[stage][sid]!r}")
    (directory / FLAGS_NAME).write_text("\n".join(lines) + "\n")
