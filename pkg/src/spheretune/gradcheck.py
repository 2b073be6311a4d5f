"""Finite-difference verification of the analytic gradients.

The oracle side evaluates the composite loss through the public
per-term functions only (never the fused gradient path) and
differentiates it by central differences; the analytic side is
:func:`spheretune.losses.total_gradients`. Relative error uses a small
absolute floor so coordinates whose true gradient is zero do not divide
by noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .anchors import AnchorSet
from .losses import (
    LossWeights,
    PromptState,
    anchor_loss,
    image_logits,
    spherical_contrastive_loss,
    symmetric_ce_loss,
    total_gradients,
)
from .rng import stream
from .vmf import VmfParams
from .manifold import UnitVector

#: Denominator floor for per-coordinate relative error. Central
#: differences at h=1e-5 carry ~|loss| * eps/h ~ 1e-10-scale absolute
#: noise, so coordinates below this floor are effectively compared
#: absolutely at the oracle's own noise level.
REL_FLOOR = 1e-5

#: Pass threshold on the max per-coordinate relative error.
TOLERANCE = 1e-4

PARTS = ("anchor", "contrast", "sce", "total")


def composite_loss_value(
    state: PromptState,
    anchors: AnchorSet,
    images: np.ndarray | None,
    labels: np.ndarray | None,
    weights: LossWeights,
    tau: float,
    tau_cls: float,
) -> float:
    """Loss through the public per-term API (the FD oracle's function)."""
    value = 0.0
    if weights.lambda_anchor != 0.0:
        value += weights.lambda_anchor * anchor_loss(state, anchors)
    if weights.lambda_contrast != 0.0:
        value += weights.lambda_contrast * spherical_contrastive_loss(state, anchors, tau)
    if images is not None:
        logits = image_logits(images, state, tau_cls)
        value += symmetric_ce_loss(
            logits, labels, eps=weights.sce_eps, reverse_weight=weights.reverse_ce_weight
        )
    return value


def _flatten(state: PromptState) -> np.ndarray:
    return np.concatenate([state.prompts.ravel(), state.offsets.ravel(), [state.log_alpha]])


def _unflatten(x: np.ndarray, classes: int, dims: int) -> PromptState:
    n = classes * dims
    return PromptState(
        prompts=x[:n].reshape(classes, dims),
        offsets=x[n : 2 * n].reshape(classes, dims),
        log_alpha=float(x[2 * n]),
    )


def central_differences(f, x0: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, coordinate-wise."""
    grad = np.empty_like(x0)
    for j in range(x0.size):
        xp = x0.copy()
        xp[j] = x0[j] + h
        fp = f(xp)
        xp[j] = x0[j] - h
        fm = f(xp)
        grad[j] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, fd: np.ndarray, floor: float = REL_FLOOR) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), floor)
    return float(np.max(np.abs(analytic - fd) / denom))


@dataclass(frozen=True)
class GradCheckInstance:
    dims: int
    classes: int
    batch: int
    errors: dict  # part name -> max relative error

    @property
    def worst(self) -> float:
        return max(self.errors.values())


@dataclass(frozen=True)
class GradCheckReport:
    instances: tuple[GradCheckInstance, ...]
    tolerance: float = TOLERANCE

    @property
    def worst_by_part(self) -> dict:
        out: dict[str, float] = {}
        for inst in self.instances:
            for part, err in inst.errors.items():
                out[part] = max(out.get(part, 0.0), err)
        return out

    @property
    def worst(self) -> float:
        return max(inst.worst for inst in self.instances)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance


def _random_problem(rng: np.random.Generator, dims: int, classes: int, batch: int):
    anchor_rows = rng.standard_normal((classes, dims))
    anchor_rows /= np.linalg.norm(anchor_rows, axis=1, keepdims=True)
    fields = tuple(
        VmfParams(mu=UnitVector(anchor_rows[c]), kappa=float(rng.uniform(1.0, 50.0)))
        for c in range(classes)
    )
    clip_dir = rng.standard_normal(dims)
    clip_dir /= np.linalg.norm(clip_dir)
    anchors = AnchorSet(
        clip_field=VmfParams(mu=UnitVector(clip_dir), kappa=1.0),
        class_fields=fields,
        anchors=anchor_rows,
    )
    state = PromptState(
        prompts=rng.standard_normal((classes, dims)),
        offsets=0.3 * rng.standard_normal((classes, dims)),
        log_alpha=float(0.2 * rng.standard_normal()),
    )
    images = rng.standard_normal((batch, dims))
    images /= np.linalg.norm(images, axis=1, keepdims=True)
    labels = rng.integers(0, classes, size=batch)
    return anchors, state, images, labels


def check_instance(
    dims: int,
    classes: int,
    batch: int,
    seed: int,
    h: float = 1e-5,
) -> GradCheckInstance:
    """Compare analytic vs FD gradients for one random problem."""
    rng = stream(seed, "gradcheck-instance")
    anchors, state, images, labels = _random_problem(rng, dims, classes, batch)
    tau = float(rng.uniform(0.5, 3.0))
    tau_cls = float(rng.uniform(0.05, 0.5))

    part_setups = {
        "anchor": (LossWeights(lambda_anchor=1.0, lambda_contrast=0.0), None, None),
        "contrast": (LossWeights(lambda_anchor=0.0, lambda_contrast=1.0), None, None),
        "sce": (LossWeights(lambda_anchor=0.0, lambda_contrast=0.0), images, labels),
        "total": (LossWeights(lambda_anchor=0.7, lambda_contrast=1.3), images, labels),
    }
    x0 = _flatten(state)
    errors = {}
    for part, (weights, imgs, labs) in part_setups.items():
        analytic = total_gradients(state, anchors, imgs, labs, weights, tau, tau_cls)
        flat_analytic = np.concatenate(
            [analytic.prompts.ravel(), analytic.offsets.ravel(), [analytic.log_alpha]]
        )

        def f(x, _w=weights, _i=imgs, _l=labs):
            return composite_loss_value(
                _unflatten(x, classes, dims), anchors, _i, _l, _w, tau, tau_cls
            )

        fd = central_differences(f, x0, h=h)
        errors[part] = max_relative_error(flat_analytic, fd)
    return GradCheckInstance(dims=dims, classes=classes, batch=batch, errors=errors)


def run_gradcheck(
    instances: int = 50,
    seed: int = 0,
    max_dims: int = 64,
    max_classes: int = 10,
    max_batch: int = 8,
    h: float = 1e-5,
) -> GradCheckReport:
    """Randomized sweep of problem shapes; all four parts per instance."""
    rng = stream(seed, "gradcheck-shapes")
    out = []
    for i in range(instances):
        dims = int(rng.integers(4, max_dims + 1))
        classes = int(rng.integers(2, max_classes + 1))
        batch = int(rng.integers(2, max_batch + 1))
        out.append(check_instance(dims, classes, batch, seed=seed * 1000003 + i, h=h))
    return GradCheckReport(instances=tuple(out))
