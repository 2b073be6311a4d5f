"""Synthetic directional worlds with controllable misalignment.

A world consists of a broad vocabulary population, per-class prompt
populations whose mean directions are rotated away from the true class
direction by a configurable bias angle, and image populations whose
cluster means are rotated by a separate gap angle. Both rotations use
independent random tangent directions, so "text is biased" and "images
sit elsewhere on the sphere" become two measurable dials.

Class directions are built on a seeded orthonormal frame blended toward
its centroid so that every pair meets at exactly the requested angle;
this construction needs d >= C.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .anchors import AnchorSet, build_class_fields, build_clip_field, fuse_anchors
from .errors import InvalidSpec
from .losses import LossWeights
from .manifold import EmbeddingMatrix, UnitVector
from .rng import stream
from .training import TrainConfig
from .evaluation import EpisodeSpec, EvalResult, run_episodes
from .vmf import VmfParams, sample_vmf


@dataclass(frozen=True)
class WorldSpec:
    """Dials of a synthetic world; angles in degrees, all in [0, 90]."""

    dims: int = 32
    classes: int = 5
    kappa_vocab: float = 5.0
    kappa_prompts: float = 120.0
    kappa_images: float = 40.0
    inter_class_angle: float = 60.0
    llm_bias_angle: float = 0.0
    modality_gap_angle: float = 0.0
    vocab_size: int = 2000
    prompts_per_class: int = 50
    images_per_class: int = 80
    seed: int = 0

    def __post_init__(self):
        if self.dims < 2 or self.classes < 1:
            raise InvalidSpec(f"need d >= 2 and C >= 1, got d={self.dims}, C={self.classes}")
        if self.dims < self.classes:
            raise InvalidSpec(
                f"frame construction needs d >= C, got d={self.dims}, C={self.classes}"
            )
        for name in ("inter_class_angle", "llm_bias_angle", "modality_gap_angle"):
            v = getattr(self, name)
            if not (0.0 <= v <= 90.0):
                raise InvalidSpec(f"{name} must lie in [0, 90] degrees, got {v!r}")
        for name in ("vocab_size", "prompts_per_class", "images_per_class"):
            if getattr(self, name) < 1:
                raise InvalidSpec(f"{name} must be >= 1")
        for name in ("kappa_vocab", "kappa_prompts", "kappa_images"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0.0:
                raise InvalidSpec(f"{name} must be finite and >= 0, got {v!r}")


@dataclass(frozen=True)
class World:
    """Generated populations plus the ground-truth directions behind them."""

    spec: WorldSpec
    vocab: EmbeddingMatrix
    prompts_per_class: tuple[EmbeddingMatrix, ...]
    images: EmbeddingMatrix
    labels: np.ndarray
    class_directions: np.ndarray   # true class axes, C x d
    prompt_directions: np.ndarray  # biased prompt-field means, C x d
    image_directions: np.ndarray   # offset image-cluster means, C x d

    def anchor_set(self, eps: float = 1e-8) -> AnchorSet:
        """Estimate fields from the generated populations and fuse them."""
        clip_field = build_clip_field(self.vocab, eps=eps)
        class_fields = build_class_fields(list(self.prompts_per_class), eps=eps)
        return fuse_anchors(clip_field, class_fields)


def _equiangular_directions(rng: np.random.Generator, d: int, classes: int, angle_deg: float) -> np.ndarray:
    """C unit rows with every pairwise angle equal to ``angle_deg``."""
    gauss = rng.standard_normal((d, classes))
    q, r = np.linalg.qr(gauss)
    q *= np.sign(np.diag(r))  # sign-fix so the frame is a deterministic function of gauss
    frame = q.T  # C x d orthonormal rows
    if classes == 1:
        return frame
    centroid = frame.sum(axis=0) / np.sqrt(classes)
    # blend frame rows toward the centroid: pairwise cosine becomes
    # cos^2(beta) - sin^2(beta)/(C-1); solve for the requested angle
    target = np.cos(np.radians(angle_deg))
    cos2 = ((classes - 1) * target + 1.0) / classes
    cosb, sinb = np.sqrt(cos2), np.sqrt(1.0 - cos2)
    tangent = (frame - centroid / np.sqrt(classes)) / np.sqrt(1.0 - 1.0 / classes)
    return cosb * centroid + sinb * tangent


def _rotate_toward_random_tangent(
    rng: np.random.Generator, direction: np.ndarray, angle_deg: float
) -> np.ndarray:
    """Rotate a unit vector by ``angle_deg`` along a random tangent.

    The tangent is drawn even for a zero angle so that worlds differing
    only in an angle dial share all remaining randomness.
    """
    g = rng.standard_normal(direction.size)
    g -= (g @ direction) * direction
    tangent = g / np.linalg.norm(g)
    rad = np.radians(angle_deg)
    return np.cos(rad) * direction + np.sin(rad) * tangent


def generate_world(spec: WorldSpec) -> World:
    """Sample a full world deterministically from ``spec.seed``."""
    d, c = spec.dims, spec.classes
    class_dirs = _equiangular_directions(stream(spec.seed, "frame"), d, c, spec.inter_class_angle)

    prompt_dirs = np.empty_like(class_dirs)
    image_dirs = np.empty_like(class_dirs)
    for i in range(c):
        prompt_dirs[i] = _rotate_toward_random_tangent(
            stream(spec.seed, "bias-tangent", i), class_dirs[i], spec.llm_bias_angle
        )
        image_dirs[i] = _rotate_toward_random_tangent(
            stream(spec.seed, "gap-tangent", i), class_dirs[i], spec.modality_gap_angle
        )

    centroid = class_dirs.mean(axis=0)
    centroid /= np.linalg.norm(centroid)
    vocab = sample_vmf(
        VmfParams(mu=UnitVector(centroid), kappa=spec.kappa_vocab),
        spec.vocab_size,
        stream(spec.seed, "vocab"),
    )
    prompts = tuple(
        sample_vmf(
            VmfParams(mu=UnitVector(prompt_dirs[i]), kappa=spec.kappa_prompts),
            spec.prompts_per_class,
            stream(spec.seed, "prompts", i),
        )
        for i in range(c)
    )
    image_blocks = [
        sample_vmf(
            VmfParams(mu=UnitVector(image_dirs[i]), kappa=spec.kappa_images),
            spec.images_per_class,
            stream(spec.seed, "images", i),
        ).data
        for i in range(c)
    ]
    images = EmbeddingMatrix(np.vstack(image_blocks), normalized=True)
    labels = np.repeat(np.arange(c, dtype=np.intp), spec.images_per_class)

    return World(
        spec=spec,
        vocab=vocab,
        prompts_per_class=prompts,
        images=images,
        labels=labels,
        class_directions=class_dirs,
        prompt_directions=prompt_dirs,
        image_directions=image_dirs,
    )


#: Ablation rows in table order: (use symmetric CE, use anchor term, use
#: contrastive term). Row one is the plain cross-entropy baseline.
ABLATION_ROWS: tuple[tuple[bool, bool, bool], ...] = (
    (False, False, False),
    (False, True, False),
    (False, True, True),
    (True, False, False),
    (True, True, False),
    (True, True, True),
)

ABLATION_ROW_NAMES = (
    "ce",
    "ce+anchor",
    "ce+anchor+contrast",
    "sce",
    "sce+anchor",
    "sce+anchor+contrast",
)


@dataclass(frozen=True)
class AblationTable:
    """Accuracy per loss configuration (rows) and shot count (columns)."""

    shots: tuple[int, ...]
    rows: tuple[tuple[bool, bool, bool], ...]
    row_names: tuple[str, ...]
    results: tuple[tuple[EvalResult, ...], ...]  # rows x shots

    def accuracy(self) -> np.ndarray:
        return np.array([[r.accuracy_mean for r in row] for row in self.results])


def ablation_config(cfg: TrainConfig, row: tuple[bool, bool, bool]) -> TrainConfig:
    """Specialize a config to one ablation row by zeroing absent terms."""
    use_sce, use_anchor, use_contrast = row
    weights = replace(
        cfg.weights,
        lambda_anchor=cfg.weights.lambda_anchor if use_anchor else 0.0,
        lambda_contrast=cfg.weights.lambda_contrast if use_contrast else 0.0,
        reverse_ce_weight=cfg.weights.reverse_ce_weight if use_sce else 0.0,
    )
    return replace(cfg, weights=weights)


def ablation_suite(
    spec: WorldSpec,
    cfg: TrainConfig,
    shots: tuple[int, ...] = (1, 4, 16),
    trials: int = 1,
    episode_seed: int | None = None,
) -> AblationTable:
    """Run the six loss configurations over a shared world and supports.

    Every row sees identical support draws (the episode seed does not
    depend on the row), so the table isolates the loss configuration.
    """
    world = generate_world(spec)
    anchors = world.anchor_set()
    seed = spec.seed if episode_seed is None else episode_seed
    results = []
    for row in ABLATION_ROWS:
        row_cfg = ablation_config(cfg, row)
        row_results = []
        for k in shots:
            espec = EpisodeSpec(shots=k, trials=trials, seed=seed)
            row_results.append(run_episodes(world.images, world.labels, anchors, espec, row_cfg))
        results.append(tuple(row_results))
    return AblationTable(
        shots=tuple(shots),
        rows=ABLATION_ROWS,
        row_names=ABLATION_ROW_NAMES,
        results=tuple(results),
    )
