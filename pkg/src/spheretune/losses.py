"""Training objectives on the sphere and their analytic gradients.

Three terms drive prompt optimization:

* anchor loss     -- mean squared chord distance between each normalized
                     prompt and its dynamic target (anchor displaced by a
                     learnable offset, renormalized);
* contrastive     -- row-wise softmax cross-entropy over the temperature-
                     scaled prompt/anchor cosine matrix, annealed by a
                     cosine temperature schedule;
* symmetric CE    -- forward cross-entropy on image logits plus a reverse
                     term that charges probability mass placed on wrong
                     classes.

Prompts are stored unconstrained and normalized inside every loss, so no
retraction machinery is needed; the chain rule then routes every gradient
through the normalization Jacobian (I - v v^T)/||x|| for v = x/||x||,
which keeps prompt gradients tangential. The global offset scale is
stored as log(alpha) to keep alpha positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .anchors import AnchorSet
from .errors import (
    DegeneratePrompt,
    DegenerateTarget,
    DimMismatch,
    LabelOutOfRange,
    OutOfRange,
    ValidationError,
)

#: Minimum vector norm we are willing to normalize.
DEGENERATE_NORM = 1e-10

#: Default epsilon inside the reverse cross-entropy log.
SCE_EPS = 1e-8


@dataclass
class PromptState:
    """Trainable per-class parameters: prompts, target offsets, log scale.

    ``prompts`` rows are free vectors in R^d (normalized inside the
    losses); ``offsets`` displace the anchors; ``log_alpha`` is the log
    of the global offset scale, kept in log space so alpha > 0 always.
    """

    prompts: np.ndarray
    offsets: np.ndarray
    log_alpha: float = 0.0

    def __post_init__(self):
        self.prompts = np.array(self.prompts, dtype=np.float64)
        self.offsets = np.array(self.offsets, dtype=np.float64)
        if self.prompts.ndim != 2 or self.prompts.shape != self.offsets.shape:
            raise ValidationError(
                f"prompts {self.prompts.shape} and offsets {self.offsets.shape} must be equal C x d"
            )
        if not (np.all(np.isfinite(self.prompts)) and np.all(np.isfinite(self.offsets))):
            raise ValidationError("prompt state contains non-finite entries")
        if not np.isfinite(self.log_alpha):
            raise ValidationError("log_alpha must be finite")

    @property
    def classes(self) -> int:
        return self.prompts.shape[0]

    @property
    def dims(self) -> int:
        return self.prompts.shape[1]

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha))

    @classmethod
    def from_anchors(cls, anchors: AnchorSet) -> "PromptState":
        """Start training exactly at the fused anchors: zero offsets, alpha 1."""
        return cls(
            prompts=anchors.anchors.copy(),
            offsets=np.zeros_like(anchors.anchors),
            log_alpha=0.0,
        )

    def normalized_prompts(self) -> np.ndarray:
        pn, _ = _normalize_with_norms(self.prompts)
        return pn

    def copy(self) -> "PromptState":
        return PromptState(self.prompts.copy(), self.offsets.copy(), self.log_alpha)


@dataclass(frozen=True)
class LossWeights:
    """Balancing weights for the composite objective.

    ``reverse_ce_weight`` scales the reverse term of the symmetric CE so
    ablations can fall back to plain cross-entropy (weight 0).
    """

    lambda_anchor: float = 1.0
    lambda_contrast: float = 1.0
    sce_eps: float = SCE_EPS
    reverse_ce_weight: float = 1.0

    def __post_init__(self):
        for name in ("lambda_anchor", "lambda_contrast", "reverse_ce_weight"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0.0:
                raise ValidationError(f"{name} must be finite and >= 0, got {v!r}")
        if not (np.isfinite(self.sce_eps) and self.sce_eps > 0.0):
            raise ValidationError(f"sce_eps must be finite and > 0, got {self.sce_eps!r}")


@dataclass(frozen=True)
class TempSchedule:
    """Cosine temperature annealing from tau0 (t=0) to tau_max (t=T)."""

    tau0: float = 1.0
    tau_max: float = 10.0
    total_steps: int = 1

    def __post_init__(self):
        if not (np.isfinite(self.tau0) and self.tau0 > 0.0):
            raise ValidationError(f"tau0 must be finite and > 0, got {self.tau0!r}")
        if not (np.isfinite(self.tau_max) and self.tau_max > 0.0):
            raise ValidationError(f"tau_max must be finite and > 0, got {self.tau_max!r}")
        if self.total_steps < 1:
            raise ValidationError(f"total_steps must be >= 1, got {self.total_steps}")


class LossParts(NamedTuple):
    anchor: float
    contrast: float
    cross_entropy: float


@dataclass(frozen=True)
class PromptGradients:
    """Gradients of the composite loss for every trainable entry."""

    prompts: np.ndarray
    offsets: np.ndarray
    log_alpha: float


def _normalize_with_norms(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms < DEGENERATE_NORM):
        i = int(np.argmin(norms))
        raise DegeneratePrompt(f"row {i} has norm {norms[i]!r}, cannot normalize")
    return rows / norms[:, None], norms


def tau_at(sched: TempSchedule, t: int | float) -> float:
    """Annealed temperature tau(t) = tau_max + (tau0 - tau_max)(1 + cos(pi t/T))/2.

    Defined only on 0 <= t <= T; out-of-range steps raise rather than
    clamp, so callers own any clamping policy explicitly.
    """
    if t < 0 or t > sched.total_steps:
        raise OutOfRange(f"t={t} outside [0, {sched.total_steps}]")
    return float(
        sched.tau_max
        + 0.5 * (sched.tau0 - sched.tau_max) * (1.0 + np.cos(np.pi * t / sched.total_steps))
    )


def dynamic_targets(anchors: AnchorSet, state: PromptState) -> np.ndarray:
    """Per-class targets: normalize(u_c + alpha * offset_c)."""
    if state.dims != anchors.dims or state.classes != anchors.classes:
        raise DimMismatch(
            f"state is {state.classes}x{state.dims}, anchors {anchors.classes}x{anchors.dims}"
        )
    resultants = anchors.anchors + state.alpha * state.offsets
    norms = np.linalg.norm(resultants, axis=1)
    if np.any(norms < DEGENERATE_NORM):
        i = int(np.argmin(norms))
        raise DegenerateTarget(f"target {i} has norm {norms[i]!r}")
    return resultants / norms[:, None]


def anchor_loss(state: PromptState, anchors: AnchorSet) -> float:
    """Mean squared distance between normalized prompts and dynamic targets.

    Equals (1/C) sum_c ||p_c - t_c||^2 for unit p_c, t_c, hence lies in
    [0, 4] with 0 iff every prompt points at its target.
    """
    pn, _ = _normalize_with_norms(state.prompts)
    targets = dynamic_targets(anchors, state)
    return float(np.mean(np.sum((pn - targets) ** 2, axis=1)))


def spherical_contrastive_loss(state: PromptState, anchors: AnchorSet, tau: float) -> float:
    """Softmax cross-entropy over the scaled prompt/anchor cosine matrix.

    S[i, j] = tau * <p_i, u_j> with p rows normalized; the loss averages
    -log softmax(S)[i, i] over classes, computed with a row-max shift.
    """
    if tau <= 0.0 or not np.isfinite(tau):
        raise ValidationError(f"tau must be finite and > 0, got {tau!r}")
    if state.dims != anchors.dims or state.classes != anchors.classes:
        raise DimMismatch("prompt state and anchors disagree on shape")
    pn, _ = _normalize_with_norms(state.prompts)
    s = tau * (pn @ anchors.anchors.T)
    shifted = s - s.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(lse - np.diag(shifted)))


def _check_labels(labels: np.ndarray, classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValidationError(f"labels must be 1-d, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise LabelOutOfRange(f"labels must lie in [0, {classes}), got range "
                              f"[{labels.min()}, {labels.max()}]")
    return labels.astype(np.intp)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def symmetric_ce_loss(
    logits: np.ndarray,
    labels: np.ndarray,
    eps: float = SCE_EPS,
    reverse_weight: float = 1.0,
) -> float:
    """Forward cross-entropy plus the reverse term against one-hot targets.

    With p the row softmax and q one-hot on the label,

        loss = -(1/B) sum_b [ log p_{b,y} + w * sum_c p_{b,c} log(q_{b,c} + eps) ].

    The reverse term is bounded below by -log(1 + eps), so the loss can
    dip a hair under zero at confidently correct predictions; that floor
    is intentional, not a bug. ``reverse_weight`` = 0 recovers plain CE.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ValidationError(f"logits must be B x C, got shape {logits.shape}")
    if not (np.isfinite(eps) and eps > 0.0):
        raise ValidationError(f"eps must be finite and > 0, got {eps!r}")
    b, c = logits.shape
    labels = _check_labels(labels, c)
    if labels.size != b:
        raise ValidationError(f"{b} logit rows but {labels.size} labels")
    logp = _log_softmax(logits)
    forward = -float(np.mean(logp[np.arange(b), labels]))
    p = np.exp(logp)
    p_correct = p[np.arange(b), labels]
    reverse = -float(np.mean(p_correct * np.log1p(eps) + (1.0 - p_correct) * np.log(eps)))
    return forward + reverse_weight * reverse


def image_logits(images: np.ndarray, state: PromptState, tau_cls: float) -> np.ndarray:
    """Classification logits: cosine(images, normalized prompts) / tau_cls."""
    if tau_cls <= 0.0 or not np.isfinite(tau_cls):
        raise ValidationError(f"tau_cls must be finite and > 0, got {tau_cls!r}")
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 2 or images.shape[1] != state.dims:
        raise DimMismatch(f"images {images.shape} vs prompt dims {state.dims}")
    return (images @ state.normalized_prompts().T) / tau_cls


def total_loss(
    state: PromptState,
    anchors: AnchorSet,
    logits: np.ndarray,
    labels: np.ndarray,
    weights: LossWeights,
    tau: float,
) -> tuple[float, LossParts]:
    """Weighted sum of the three objectives, with the parts for logging."""
    parts = LossParts(
        anchor=anchor_loss(state, anchors),
        contrast=spherical_contrastive_loss(state, anchors, tau),
        cross_entropy=symmetric_ce_loss(
            logits, labels, eps=weights.sce_eps, reverse_weight=weights.reverse_ce_weight
        ),
    )
    value = (
        weights.lambda_anchor * parts.anchor
        + weights.lambda_contrast * parts.contrast
        + parts.cross_entropy
    )
    return float(value), parts


def total_gradients(
    state: PromptState,
    anchors: AnchorSet,
    images: np.ndarray | None,
    labels: np.ndarray | None,
    weights: LossWeights,
    tau: float,
    tau_cls: float = 0.01,
) -> PromptGradients:
    """Analytic gradients of the composite loss.

    ``images`` may be None to drop the cross-entropy term (pure anchor /
    contrastive phases, used in tests). Logits inside the CE term are
    cosine(images, normalized prompts) / tau_cls.
    """
    _, _, grads, _ = _evaluate(state, anchors, images, labels, weights, tau, tau_cls)
    return grads


def _evaluate(
    state: PromptState,
    anchors: AnchorSet,
    images: np.ndarray | None,
    labels: np.ndarray | None,
    weights: LossWeights,
    tau: float,
    tau_cls: float,
) -> tuple[float, LossParts, PromptGradients, np.ndarray | None]:
    """Shared loss + gradient evaluation (single normalization pass).

    Returns (total, parts, gradients, predicted batch labels or None).
    Gradient terms with zero weight are skipped entirely so that e.g. a
    CE-only configuration computes exactly the CE gradient.
    """
    c, d = state.classes, state.dims
    if anchors.classes != c or anchors.dims != d:
        raise DimMismatch("prompt state and anchors disagree on shape")
    pn, pnorms = _normalize_with_norms(state.prompts)
    alpha = state.alpha

    grad_pn = np.zeros_like(pn)  # d(loss)/d(normalized prompts), pre-Jacobian
    grad_offsets = np.zeros_like(state.offsets)
    grad_alpha = 0.0

    # anchor term
    targets = dynamic_targets(anchors, state)
    part_anchor = float(np.mean(np.sum((pn - targets) ** 2, axis=1)))
    if weights.lambda_anchor != 0.0:
        coeff = weights.lambda_anchor * (-2.0 / c)
        grad_pn += coeff * targets
        # route through the target normalization: r_c = u_c + alpha * delta_c
        resultants = anchors.anchors + alpha * state.offsets
        rnorms = np.linalg.norm(resultants, axis=1)
        proj = pn - targets * np.sum(targets * pn, axis=1, keepdims=True)
        grad_r = coeff * proj / rnorms[:, None]
        grad_offsets += alpha * grad_r
        grad_alpha += float(np.sum(grad_r * state.offsets))

    # contrastive term
    s = tau * (pn @ anchors.anchors.T)
    shifted = s - s.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    softmax_s = exps / exps.sum(axis=1, keepdims=True)
    part_contrast = float(np.mean(np.log(exps.sum(axis=1)) - np.diag(shifted)))
    if weights.lambda_contrast != 0.0:
        ds = (softmax_s - np.eye(c)) / c
        grad_pn += weights.lambda_contrast * tau * (ds @ anchors.anchors)

    # symmetric cross-entropy term
    predicted = None
    part_ce = 0.0
    if images is not None:
        if tau_cls <= 0.0 or not np.isfinite(tau_cls):
            raise ValidationError(f"tau_cls must be finite and > 0, got {tau_cls!r}")
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 2 or images.shape[1] != d:
            raise DimMismatch(f"images {images.shape} vs prompt dims {d}")
        if labels is None:
            raise ValidationError("images were given without labels")
        labels = _check_labels(labels, c)
        b = images.shape[0]
        if labels.size != b:
            raise ValidationError(f"{b} images but {labels.size} labels")
        logits = (images @ pn.T) / tau_cls
        logp = _log_softmax(logits)
        p = np.exp(logp)
        rows = np.arange(b)
        predicted = np.argmax(logits, axis=1)

        p_correct = p[rows, labels]
        log_eps = float(np.log(weights.sce_eps))
        log1p_eps = float(np.log1p(weights.sce_eps))
        part_ce = -float(np.mean(logp[rows, labels]))
        part_ce += -weights.reverse_ce_weight * float(
            np.mean(p_correct * log1p_eps + (1.0 - p_correct) * log_eps)
        )

        onehot = np.zeros_like(p)
        onehot[rows, labels] = 1.0
        grad_logits = (p - onehot) / b
        if weights.reverse_ce_weight != 0.0:
            # reverse term: -sum_c p_c m_c with m_c = log(q_c + eps) constant
            m = np.full_like(p, log_eps)
            m[rows, labels] = log1p_eps
            mbar = np.sum(p * m, axis=1, keepdims=True)
            grad_logits += weights.reverse_ce_weight * (-(p * (m - mbar)) / b)
        grad_pn += (grad_logits.T @ images) / tau_cls

    # one normalization Jacobian for everything that flowed through pn:
    # d(loss)/dP_c = (g - <g, p_c> p_c) / ||P_c||
    radial = np.sum(grad_pn * pn, axis=1, keepdims=True)
    grad_prompts = (grad_pn - radial * pn) / pnorms[:, None]

    parts = LossParts(anchor=part_anchor, contrast=part_contrast, cross_entropy=part_ce)
    value = (
        weights.lambda_anchor * part_anchor
        + weights.lambda_contrast * part_contrast
        + part_ce
    )
    grads = PromptGradients(
        prompts=grad_prompts,
        offsets=grad_offsets,
        log_alpha=grad_alpha * alpha,
    )
    return float(value), parts, grads, predicted
