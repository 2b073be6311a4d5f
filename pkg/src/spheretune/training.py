"""Deterministic SGD training loop for prompt states.

Plain SGD (no momentum) with cosine learning-rate decay; batches come
from seeded shuffled epochs over the support set, keeping the final
partial batch. Every source of randomness derives from the config seed
through named substreams, so identical configs give bit-identical runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .anchors import AnchorSet
from .errors import InvalidSpec, NonFiniteLoss, OutOfRange
from .losses import LossParts, LossWeights, PromptState, TempSchedule, _evaluate, tau_at
from .manifold import EmbeddingMatrix
from .rng import stream


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run."""

    total_steps: int
    lr0: float = 0.003
    batch_size: int = 4
    weights: LossWeights = field(default_factory=LossWeights)
    temp: TempSchedule | None = None
    seed: int = 0
    tau_cls: float = 0.01
    eps: float = 1e-12
    grad_clip: float | None = None

    def __post_init__(self):
        if self.total_steps < 1:
            raise InvalidSpec(f"total_steps must be >= 1, got {self.total_steps}")
        if not (np.isfinite(self.lr0) and self.lr0 > 0.0):
            raise InvalidSpec(f"lr0 must be finite and > 0, got {self.lr0!r}")
        if self.batch_size < 1:
            raise InvalidSpec(f"batch_size must be >= 1, got {self.batch_size}")
        if not (np.isfinite(self.tau_cls) and self.tau_cls > 0.0):
            raise InvalidSpec(f"tau_cls must be finite and > 0, got {self.tau_cls!r}")
        if self.grad_clip is not None and self.grad_clip <= 0.0:
            raise InvalidSpec(f"grad_clip must be positive when set, got {self.grad_clip!r}")

    def schedule(self) -> TempSchedule:
        """Temperature schedule, defaulting to (tau0=1, tau_max=10) over T."""
        if self.temp is not None:
            return self.temp
        return TempSchedule(total_steps=self.total_steps)


def lr_at(cfg: TrainConfig, t: int | float) -> float:
    """Cosine-decayed learning rate: lr0 at t=0 down to 0 at t=T."""
    if t < 0 or t > cfg.total_steps:
        raise OutOfRange(f"t={t} outside [0, {cfg.total_steps}]")
    return float(0.5 * cfg.lr0 * (1.0 + np.cos(np.pi * t / cfg.total_steps)))


@dataclass(frozen=True)
class StepRecord:
    step: int
    lr: float
    tau: float
    loss: float
    parts: LossParts
    batch_accuracy: float


@dataclass
class TrainReport:
    steps: list[StepRecord]
    final_state: PromptState

    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.steps])


def _batch_indices(n: int, batch_size: int, total_steps: int, rng: np.random.Generator):
    """Yield total_steps batches from shuffled epochs, last partial kept."""
    produced = 0
    while produced < total_steps:
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            yield order[lo : lo + batch_size]
            produced += 1
            if produced >= total_steps:
                return


def train(
    images: EmbeddingMatrix,
    labels: np.ndarray,
    anchors: AnchorSet,
    cfg: TrainConfig,
    state: PromptState | None = None,
) -> TrainReport:
    """Run T SGD steps of the composite loss against a labeled support set.

    The prompt state starts at the anchors (offsets zero, alpha one)
    unless an explicit ``state`` is given. Raises
    :class:`NonFiniteLoss` with the step index if the loss diverges.
    """
    if not images.normalized:
        raise InvalidSpec("training images must be row-normalized")
    if images.dims != anchors.dims:
        raise InvalidSpec(f"images d={images.dims} but anchors d={anchors.dims}")
    labels = np.asarray(labels)
    if labels.shape != (images.rows,):
        raise InvalidSpec(f"labels shape {labels.shape} != ({images.rows},)")
    if labels.size and (labels.min() < 0 or labels.max() >= anchors.classes):
        raise InvalidSpec(f"labels must lie in [0, {anchors.classes})")
    labels = labels.astype(np.intp)

    sched = cfg.schedule()
    if sched.total_steps != cfg.total_steps:
        sched = replace(sched, total_steps=cfg.total_steps)
    state = PromptState.from_anchors(anchors) if state is None else state.copy()
    shuffle_rng = stream(cfg.seed, "shuffle")
    batches = _batch_indices(images.rows, cfg.batch_size, cfg.total_steps, shuffle_rng)

    records: list[StepRecord] = []
    data = images.data
    for t, batch in enumerate(batches):
        lr = lr_at(cfg, t)
        tau = tau_at(sched, t)
        value, parts, grads, predicted = _evaluate(
            state, anchors, data[batch], labels[batch], cfg.weights, tau, cfg.tau_cls
        )
        if not np.isfinite(value):
            raise NonFiniteLoss(step=t, value=value)
        batch_acc = float(np.mean(predicted == labels[batch]))

        gp, go, ga = grads.prompts, grads.offsets, grads.log_alpha
        if cfg.grad_clip is not None:
            norm = float(np.sqrt(np.sum(gp * gp) + np.sum(go * go) + ga * ga))
            if norm > cfg.grad_clip:
                scale = cfg.grad_clip / norm
                gp, go, ga = gp * scale, go * scale, ga * scale
        state.prompts -= lr * gp
        state.offsets -= lr * go
        state.log_alpha -= lr * ga

        records.append(
            StepRecord(step=t, lr=lr, tau=tau, loss=value, parts=parts, batch_accuracy=batch_acc)
        )
    return TrainReport(steps=records, final_state=state)
