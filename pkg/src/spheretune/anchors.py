"""Directional field estimation and fusion into per-class anchors.

Two populations of unit embeddings get a vMF fit each: the whole
vocabulary (one global field) and each class's prompt set (one field per
class). Fusion scales each mean direction by its concentration and
normalizes the sum,

    u_c = (kappa_glob * mu_glob + kappa_c * mu_c) / ||...||,

so the sharper field dominates the blend while the result stays on the
sphere. The anchors are fixed targets for training; all adaptivity lives
in the learnable offsets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateFusion, DimMismatch, InvalidSpec
from .manifold import EmbeddingMatrix
from .vmf import ESTIMATE_EPS, VmfParams, estimate_vmf


@dataclass(frozen=True)
class AnchorSet:
    """Per-class fused anchors plus the fields they came from."""

    clip_field: VmfParams
    class_fields: tuple[VmfParams, ...]
    anchors: np.ndarray  # C x d, unit rows

    def __post_init__(self):
        anchors = np.asarray(self.anchors, dtype=np.float64)
        if anchors.ndim != 2 or anchors.shape[0] != len(self.class_fields):
            raise InvalidSpec("anchor row count must equal the number of class fields")
        norms = np.linalg.norm(anchors, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise InvalidSpec("anchor rows must be unit length")
        anchors = anchors.copy()
        anchors.flags.writeable = False
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "class_fields", tuple(self.class_fields))

    @property
    def classes(self) -> int:
        return self.anchors.shape[0]

    @property
    def dims(self) -> int:
        return self.anchors.shape[1]

    def anchor_matrix(self) -> EmbeddingMatrix:
        return EmbeddingMatrix(self.anchors, normalized=True)

    def subset(self, indices: Sequence[int]) -> "AnchorSet":
        """Restrict to the given class indices (order preserved)."""
        idx = list(indices)
        return AnchorSet(
            clip_field=self.clip_field,
            class_fields=tuple(self.class_fields[i] for i in idx),
            anchors=self.anchors[idx],
        )


def build_clip_field(vocab: EmbeddingMatrix, eps: float = ESTIMATE_EPS) -> VmfParams:
    """Fit the global field to a vocabulary embedding population."""
    return estimate_vmf(vocab, eps=eps, label="vocabulary")


def build_class_fields(
    prompts_per_class: Sequence[EmbeddingMatrix], eps: float = ESTIMATE_EPS
) -> list[VmfParams]:
    """Fit one field per class to its prompt embeddings, independently."""
    if len(prompts_per_class) == 0:
        raise InvalidSpec("need at least one class of prompt embeddings")
    dims = prompts_per_class[0].dims
    fields = []
    for c, m in enumerate(prompts_per_class):
        if m.dims != dims:
            raise DimMismatch(f"class {c} has d={m.dims}, class 0 has d={dims}")
        fields.append(estimate_vmf(m, eps=eps, label=f"class_{c}"))
    return fields


def fuse_anchors(
    clip: VmfParams,
    class_fields: Sequence[VmfParams],
    kappa_cap: float | None = None,
) -> AnchorSet:
    """Blend the global field into each class field, weighted by kappa.

    ``kappa_cap``, when given, clamps both concentrations before mixing;
    by default they are used exactly as estimated (the normalization
    makes only their ratio matter). Raises :class:`DegenerateFusion` on
    exact cancellation, which signals contradictory fields rather than a
    recoverable numerical event.
    """
    if len(class_fields) == 0:
        raise InvalidSpec("need at least one class field to fuse")
    d = clip.dims
    for c, f in enumerate(class_fields):
        if f.dims != d:
            raise DimMismatch(f"class field {c} has d={f.dims}, global field d={d}")

    def capped(kappa: float) -> float:
        return min(kappa, kappa_cap) if kappa_cap is not None else kappa

    global_part = capped(clip.kappa) * clip.mu.coords
    rows = np.empty((len(class_fields), d))
    for c, f in enumerate(class_fields):
        resultant = global_part + capped(f.kappa) * f.mu.coords
        norm = float(np.linalg.norm(resultant))
        if norm < 1e-10:
            raise DegenerateFusion(f"class {c}: field directions cancel (norm {norm!r})")
        rows[c] = resultant / norm
    return AnchorSet(clip_field=clip, class_fields=tuple(class_fields), anchors=rows)
