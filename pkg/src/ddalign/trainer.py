"""The training loop: paired mini-batches, pseudo-label filtering, momentum SGD.

Each epoch reshuffles the labeled source set; the unlabeled target set is
drawn from an independently seeded shuffled cycle so both sides always supply
a batch. Per step the loop resolves the schedule scalars, runs the forward
pass, derives the conditional-term weight from the current source loss, takes
one momentum-SGD step with L2 decay on the weight matrices, and appends a
history record. Two runs with the same config, seed, and data produce
bit-identical parameter trajectories.
"""

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NumericsError, ValidationError
from .kernels import KernelConfig
from .net import (
    ModelParams,
    backward,
    breakdown_from,
    compute_losses,
    confidence_mask,
    init_params,
    pseudo_label_scores,
    zeros_like_params,
)
from .schedules import (
    ScheduleConfig,
    alpha_at,
    beta_of,
    confidence_threshold,
    learning_rate,
)

EXTRACTOR_FIELDS = ("W1", "b1", "W2", "b2")
CLASSIFIER_FIELDS = ("Wc", "bc")
BIAS_FIELDS = ("b1", "b2", "bc")


@dataclass(frozen=True)
class AblationFlags:
    use_mmd: bool = True
    use_cmmd: bool = True
    dynamic_weights: bool = True
    confidence_filter: bool = True


# incremental variants from bare classifier to the full method
VARIANTS = {
    "EXP1": AblationFlags(False, False, False, False),
    "EXP2": AblationFlags(True, False, False, False),
    "EXP3": AblationFlags(False, True, False, False),
    "EXP4": AblationFlags(True, True, False, False),
    "EXP5": AblationFlags(True, True, True, False),
    "EXP6": AblationFlags(True, True, True, True),
}


@dataclass
class TrainConfig:
    batch_size: int = 128
    epochs: int = 100
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 3
    n_classes: int = 3
    hidden1: int = 64
    hidden2: int = 64
    kernel: KernelConfig = field(default_factory=KernelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    flags: AblationFlags = field(default_factory=AblationFlags)

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValidationError("batch_size must be >= 2")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ValidationError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be >= 0")
        if self.n_classes < 1:
            raise ValidationError("n_classes must be >= 1")
        if self.schedule.total_epochs != self.epochs:
            self.schedule = replace(self.schedule, total_epochs=self.epochs)


@dataclass
class OptimizerState:
    """Velocity buffers matching the parameter shapes."""

    velocity: ModelParams

    @classmethod
    def zero(cls, params: ModelParams) -> "OptimizerState":
        return cls(velocity=zeros_like_params(params))


@dataclass
class PseudoLabelSet:
    """Target-batch rows with predicted class and max-softmax confidence."""

    indices: np.ndarray
    labels: np.ndarray
    confidences: np.ndarray

    def __len__(self) -> int:
        return self.indices.shape[0]


@dataclass
class StepRecord:
    step: int
    epoch: int
    l_ds: float
    l_mmd: float
    l_cmmd: float
    alpha: float
    beta: float
    tau: float
    lr: float                # extractor-group rate; classifier uses the same anneal
    n_pseudo_retained: int


@dataclass
class TrainResult:
    params: ModelParams
    history: list[StepRecord]


def generate_pseudo_labels(tgt_x: np.ndarray, params: ModelParams) -> PseudoLabelSet:
    """Unfiltered predictions for a target batch (deterministic, no dropout)."""
    labels, conf = pseudo_label_scores(tgt_x, params)
    return PseudoLabelSet(
        indices=np.arange(labels.shape[0], dtype=np.int64),
        labels=labels,
        confidences=conf,
    )


def filter_pseudo_labels(pset: PseudoLabelSet, tau: float) -> PseudoLabelSet:
    """Retain entries whose confidence clears tau; tau = 1 keeps only saturated rows."""
    keep = confidence_mask(pset.confidences, tau)
    return PseudoLabelSet(
        indices=pset.indices[keep],
        labels=pset.labels[keep],
        confidences=pset.confidences[keep],
    )


def sgd_step(
    params: ModelParams,
    grads: ModelParams,
    opt: OptimizerState,
    lr_extractor: float,
    lr_classifier: float,
    momentum: float,
    weight_decay: float,
) -> tuple[ModelParams, OptimizerState]:
    """v <- momentum v + (grad + wd * param); param <- param - lr v.

    Decay applies to weight matrices only, never biases; the extractor and
    classifier groups carry their own learning rates.
    """
    new_params = {}
    new_velocity = {}
    for name in ("W1", "b1", "W2", "b2", "Wc", "bc"):
        p = getattr(params, name)
        g = getattr(grads, name)
        if not np.isfinite(g).all():
            raise NumericsError(f"non-finite gradient for {name}")
        v = getattr(opt.velocity, name)
        if weight_decay > 0 and name not in BIAS_FIELDS:
            g = g + weight_decay * p
        v = momentum * v + g
        lr = lr_extractor if name in EXTRACTOR_FIELDS else lr_classifier
        new_params[name] = p - lr * v
        new_velocity[name] = v
    return ModelParams(**new_params), OptimizerState(ModelParams(**new_velocity))


class _TargetCycle:
    """Endless stream of target indices from an independently seeded shuffle."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self.buffer = np.empty(0, dtype=np.int64)

    def take(self, k: int) -> np.ndarray:
        while self.buffer.shape[0] < k:
            self.buffer = np.concatenate([self.buffer, self.rng.permutation(self.n)])
        out, self.buffer = self.buffer[:k], self.buffer[k:]
        return out


def train(
    src_x: np.ndarray,
    src_y: np.ndarray,
    tgt_x: np.ndarray,
    cfg: TrainConfig,
) -> TrainResult:
    """Full training run; returns final parameters and the per-step history."""
    src_x = np.asarray(src_x, dtype=np.float64)
    src_y = np.asarray(src_y, dtype=np.int64)
    tgt_x = np.asarray(tgt_x, dtype=np.float64)
    if src_x.ndim != 2 or src_x.shape[0] == 0:
        raise ValidationError("source set must be a non-empty [n, d] matrix")
    if src_y.shape != (src_x.shape[0],):
        raise ValidationError("source labels must match source rows")
    if tgt_x.ndim != 2 or tgt_x.shape[0] == 0:
        raise ValidationError("target set must be a non-empty [m, d] matrix")
    if tgt_x.shape[1] != src_x.shape[1]:
        raise ValidationError("source and target feature dimensions differ")
    if src_y.min() < 0 or src_y.max() >= cfg.n_classes:
        raise ValidationError(
            f"labels span [{src_y.min()}, {src_y.max()}], config says {cfg.n_classes} classes"
        )

    init_rng, shuffle_rng, target_rng, dropout_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(4)
    )
    params = init_params(src_x.shape[1], cfg.hidden1, cfg.hidden2, cfg.n_classes, init_rng)
    opt = OptimizerState.zero(params)
    targets = _TargetCycle(tgt_x.shape[0], target_rng)
    flags = cfg.flags
    sched = cfg.schedule

    history: list[StepRecord] = []
    step = 0
    for epoch in range(cfg.epochs):
        alpha = alpha_at(epoch, sched) if flags.dynamic_weights else 1.0
        tau = confidence_threshold(epoch, sched) if flags.confidence_filter else 0.0
        lr_ext = learning_rate(epoch, sched, sched.lr_extractor)
        lr_cls = learning_rate(epoch, sched, sched.lr_classifier)
        order = shuffle_rng.permutation(src_x.shape[0])
        for start in range(0, order.shape[0], cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            tgt_batch = tgt_x[targets.take(batch.shape[0])]
            trace = compute_losses(
                src_x[batch], src_y[batch], tgt_batch, params, tau, cfg.kernel,
                dropout_rng, train=True,
                use_mmd=flags.use_mmd, use_cmmd=flags.use_cmmd,
                confidence_filter=flags.confidence_filter,
            )
            beta = beta_of(trace.l_ds, sched) if flags.dynamic_weights else 1.0
            breakdown = breakdown_from(trace, alpha, beta)
            if not np.isfinite(breakdown.total):
                raise NumericsError(f"non-finite loss at step {step}")
            grads = backward(trace, params, alpha, beta)
            params, opt = sgd_step(
                params, grads, opt, lr_ext, lr_cls, cfg.momentum, cfg.weight_decay
            )
            history.append(StepRecord(
                step=step, epoch=epoch,
                l_ds=breakdown.l_ds, l_mmd=breakdown.l_mmd, l_cmmd=breakdown.l_cmmd,
                alpha=alpha, beta=beta, tau=tau, lr=lr_ext,
                n_pseudo_retained=int(trace.kept_idx.size),
            ))
            step += 1
    return TrainResult(params=params, history=history)


HISTORY_COLUMNS = (
    "step", "epoch", "l_ds", "l_mmd", "l_cmmd",
    "alpha", "beta", "tau", "lr", "n_pseudo_retained",
)


def save_history(history: list[StepRecord], path) -> None:
    """Per-step trace as CSV with one row per optimizer step."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_COLUMNS)
        for rec in history:
            writer.writerow([
                rec.step, rec.epoch,
                f"{rec.l_ds:.12g}", f"{rec.l_mmd:.12g}", f"{rec.l_cmmd:.12g}",
                f"{rec.alpha:.12g}", f"{rec.beta:.12g}", f"{rec.tau:.12g}",
                f"{rec.lr:.12g}", rec.n_pseudo_retained,
            ])
