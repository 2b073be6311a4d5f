"""Cosine classification, K-shot episodes, and base/novel generalization.

An episode samples K labeled support vectors per class, trains a prompt
state on them, and scores accuracy on a held-out split; results are
aggregated as mean +- std over repeated support draws. Support and
evaluation indices are sampled from per-trial substreams and are always
disjoint.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .anchors import AnchorSet
from .errors import DimMismatch, InsufficientSamples, InvalidSpec, ValidationError
from .losses import PromptState, _normalize_with_norms
from .manifold import EmbeddingMatrix
from .rng import stream
from .training import TrainConfig, train


@dataclass(frozen=True)
class EpisodeSpec:
    """K-shot episode protocol parameters."""

    shots: int
    trials: int = 3
    eval_split_fraction: float = 0.5
    seed: int = 0
    classes: int | None = None  # optional cross-check against the data

    def __post_init__(self):
        if self.shots < 1:
            raise InvalidSpec(f"shots must be >= 1, got {self.shots}")
        if self.trials < 1:
            raise InvalidSpec(f"trials must be >= 1, got {self.trials}")
        if not (0.0 < self.eval_split_fraction <= 1.0):
            raise InvalidSpec(
                f"eval_split_fraction must lie in (0, 1], got {self.eval_split_fraction!r}"
            )


@dataclass(frozen=True)
class EvalResult:
    """Aggregated episode accuracy and confusion statistics."""

    accuracy_mean: float
    accuracy_std: float
    per_trial: tuple[float, ...]
    per_class_accuracy: np.ndarray
    confusion: np.ndarray  # rows true, cols predicted, summed over trials
    shots: int
    trials: int


@dataclass(frozen=True)
class BaseNovelResult:
    base_accuracy: float
    novel_accuracy: float
    harmonic_mean: float
    base_std: float
    novel_std: float


def predict(
    images: EmbeddingMatrix,
    prompts: PromptState | np.ndarray,
    tau_cls: float = 0.01,
) -> tuple[np.ndarray, np.ndarray]:
    """Classify images against prompt rows by scaled cosine + softmax.

    Returns (labels, probabilities); ties break to the lowest class
    index. The argmax is invariant to tau_cls, which only reshapes the
    returned probabilities.
    """
    if not images.normalized:
        raise ValidationError("predict requires normalized images")
    if tau_cls <= 0.0 or not np.isfinite(tau_cls):
        raise ValidationError(f"tau_cls must be finite and > 0, got {tau_cls!r}")
    rows = prompts.prompts if isinstance(prompts, PromptState) else np.asarray(prompts, dtype=np.float64)
    pn, _ = _normalize_with_norms(rows)
    if pn.shape[1] != images.dims:
        raise DimMismatch(f"prompts d={pn.shape[1]} vs images d={images.dims}")
    logits = (images.data @ pn.T) / tau_cls
    shifted = logits - logits.max(axis=1, keepdims=True)
    expv = np.exp(shifted)
    probs = expv / expv.sum(axis=1, keepdims=True)
    return np.argmax(logits, axis=1), probs


def accuracy_from_confusion(confusion: np.ndarray) -> float:
    """Trace over total count; the definition used everywhere here."""
    total = confusion.sum()
    return float(np.trace(confusion) / total) if total else 0.0


def _class_indices(labels: np.ndarray, classes: int) -> list[np.ndarray]:
    return [np.flatnonzero(labels == c) for c in range(classes)]


def _split_episode(
    per_class: list[np.ndarray],
    shots: int,
    fraction: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint (support, eval) index sets: K per class, then a fraction
    of what remains."""
    support, evaluation = [], []
    for c, idx in enumerate(per_class):
        if idx.size < shots + 1:
            raise InsufficientSamples(c, have=int(idx.size), need=shots + 1)
        perm = rng.permutation(idx)
        support.append(perm[:shots])
        rest = perm[shots:]
        n_eval = max(1, int(round(rest.size * fraction)))
        evaluation.append(rest[:n_eval])
    return np.concatenate(support), np.concatenate(evaluation)


def run_episodes(
    images: EmbeddingMatrix,
    labels: np.ndarray,
    anchors: AnchorSet,
    spec: EpisodeSpec,
    cfg: TrainConfig,
) -> EvalResult:
    """Train-and-evaluate over ``spec.trials`` independent support draws."""
    labels = np.asarray(labels).astype(np.intp)
    classes = anchors.classes
    if spec.classes is not None and spec.classes != classes:
        raise InvalidSpec(f"spec says {spec.classes} classes, anchors have {classes}")
    if labels.min() < 0 or labels.max() >= classes:
        raise InvalidSpec(f"labels must lie in [0, {classes})")
    per_class = _class_indices(labels, classes)

    accs = []
    confusion = np.zeros((classes, classes), dtype=np.int64)
    for trial in range(spec.trials):
        rng = stream(spec.seed, "support", trial)
        sup_idx, eval_idx = _split_episode(per_class, spec.shots, spec.eval_split_fraction, rng)
        assert not np.intersect1d(sup_idx, eval_idx).size, "support/eval sets overlap"

        trial_cfg = replace(cfg, seed=cfg.seed + trial)
        support = EmbeddingMatrix(images.data[sup_idx], normalized=True)
        report = train(support, labels[sup_idx], anchors, trial_cfg)

        held_out = EmbeddingMatrix(images.data[eval_idx], normalized=True)
        pred, _ = predict(held_out, report.final_state, cfg.tau_cls)
        truth = labels[eval_idx]
        trial_conf = np.zeros_like(confusion)
        np.add.at(trial_conf, (truth, pred), 1)
        confusion += trial_conf
        accs.append(accuracy_from_confusion(trial_conf))

    accs_arr = np.array(accs)
    row_totals = confusion.sum(axis=1)
    per_class_acc = np.divide(
        np.diag(confusion), row_totals,
        out=np.zeros(classes, dtype=np.float64), where=row_totals > 0,
    )
    return EvalResult(
        accuracy_mean=float(accs_arr.mean()),
        accuracy_std=float(accs_arr.std(ddof=1)) if spec.trials > 1 else 0.0,
        per_trial=tuple(float(a) for a in accs_arr),
        per_class_accuracy=per_class_acc,
        confusion=confusion,
        shots=spec.shots,
        trials=spec.trials,
    )


def harmonic_mean(a: float, b: float) -> float:
    return 2.0 * a * b / (a + b) if (a + b) > 0.0 else 0.0


def base_to_novel(
    images: EmbeddingMatrix,
    labels: np.ndarray,
    anchors: AnchorSet,
    base_classes: Sequence[int],
    novel_classes: Sequence[int],
    spec: EpisodeSpec,
    cfg: TrainConfig,
) -> BaseNovelResult:
    """Train prompts on base classes only; score novel classes zero-shot.

    Novel classes are classified against their untouched fused anchors
    (offset zero), the closest thing to a zero-shot prompt this artifact
    has; base and novel samples are each scored within their own label
    space, and the harmonic mean summarizes the trade-off.
    """
    base = list(base_classes)
    novel = list(novel_classes)
    if set(base) & set(novel):
        raise InvalidSpec("base and novel class sets must be disjoint")
    if not base or not novel:
        raise InvalidSpec("base and novel class sets must both be nonempty")
    if max(base + novel) >= anchors.classes or min(base + novel) < 0:
        raise InvalidSpec("class index outside the anchor set")

    labels = np.asarray(labels).astype(np.intp)
    base_anchors = anchors.subset(base)
    base_map = {c: i for i, c in enumerate(base)}
    novel_map = {c: i for i, c in enumerate(novel)}

    base_mask = np.isin(labels, base)
    novel_mask = np.isin(labels, novel)
    base_labels = np.array([base_map[c] for c in labels[base_mask]], dtype=np.intp)
    novel_labels = np.array([novel_map[c] for c in labels[novel_mask]], dtype=np.intp)
    base_images = EmbeddingMatrix(images.data[base_mask], normalized=True)
    novel_images = EmbeddingMatrix(images.data[novel_mask], normalized=True)

    per_class = _class_indices(base_labels, len(base))
    base_accs, novel_accs = [], []
    novel_prompts = anchors.anchors[novel]
    for trial in range(spec.trials):
        rng = stream(spec.seed, "support", trial)
        sup_idx, eval_idx = _split_episode(per_class, spec.shots, spec.eval_split_fraction, rng)
        trial_cfg = replace(cfg, seed=cfg.seed + trial)
        support = EmbeddingMatrix(base_images.data[sup_idx], normalized=True)
        report = train(support, base_labels[sup_idx], base_anchors, trial_cfg)

        held_out = EmbeddingMatrix(base_images.data[eval_idx], normalized=True)
        pred, _ = predict(held_out, report.final_state, cfg.tau_cls)
        base_accs.append(float(np.mean(pred == base_labels[eval_idx])))

        pred_novel, _ = predict(novel_images, novel_prompts, cfg.tau_cls)
        novel_accs.append(float(np.mean(pred_novel == novel_labels)))

    base_arr, novel_arr = np.array(base_accs), np.array(novel_accs)
    return BaseNovelResult(
        base_accuracy=float(base_arr.mean()),
        novel_accuracy=float(novel_arr.mean()),
        harmonic_mean=harmonic_mean(float(base_arr.mean()), float(novel_arr.mean())),
        base_std=float(base_arr.std(ddof=1)) if spec.trials > 1 else 0.0,
        novel_std=float(novel_arr.std(ddof=1)) if spec.trials > 1 else 0.0,
    )
