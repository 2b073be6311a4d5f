"""Directional-data primitives on the unit hypersphere.

Everything downstream (field estimation, anchor fusion, the losses)
operates on unit vectors in R^d or on row-stacked matrices of them.
These types validate the geometry once, at construction, so the numeric
code can assume it.

All arithmetic is float64 regardless of on-disk storage (files hold
float32); concentration estimation near R -> 1 is too ill-conditioned
for single precision. Row reductions rely on numpy's pairwise summation,
which is a fixed, deterministic reduction order for a given shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMean, DimMismatch, NonFiniteInput, ValidationError

#: Default clamp for near-zero norms in normalization (artifact plumbing).
NORM_EPS = 1e-12

#: Construction tolerance for "this vector/row is unit length".
UNIT_ATOL = 1e-6


def _as_f64(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


@dataclass(frozen=True)
class UnitVector:
    """A point on S^{d-1}: an L2-normalized direction in R^d, d >= 2."""

    coords: np.ndarray

    def __post_init__(self):
        coords = _as_f64(self.coords)
        if coords.ndim != 1 or coords.size < 2:
            raise ValidationError(f"UnitVector needs a 1-d vector with d >= 2, got shape {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise NonFiniteInput("UnitVector coordinates contain NaN/Inf")
        norm = float(np.linalg.norm(coords))
        if abs(norm - 1.0) > UNIT_ATOL:
            raise ValidationError(f"UnitVector norm {norm!r} deviates from 1 by more than {UNIT_ATOL}")
        coords = coords.copy()
        coords.flags.writeable = False
        object.__setattr__(self, "coords", coords)

    @property
    def dims(self) -> int:
        return self.coords.size

    @staticmethod
    def from_raw(vec, eps: float = NORM_EPS) -> "UnitVector":
        """Normalize an arbitrary nonzero vector onto the sphere."""
        vec = _as_f64(vec)
        if not np.all(np.isfinite(vec)):
            raise NonFiniteInput("cannot normalize a non-finite vector")
        norm = float(np.linalg.norm(vec))
        if norm < eps:
            raise ValidationError("cannot normalize a (near-)zero vector")
        return UnitVector(vec / norm)


@dataclass(frozen=True)
class EmbeddingMatrix:
    """N x d row-stacked embeddings, optionally guaranteed row-normalized.

    Invariants: N >= 1, d >= 2, all entries finite. When ``normalized``
    is set, every row has unit L2 norm within ``UNIT_ATOL`` -- except rows
    that are exactly zero, which :func:`normalize_rows` may produce when
    clamping degenerate input rows (it reports their indices).
    """

    data: np.ndarray
    normalized: bool = False
    #: Construction-time unit tolerance; file readers loosen this for f32.
    atol: float = field(default=UNIT_ATOL, repr=False, compare=False)

    def __post_init__(self):
        data = _as_f64(self.data)
        if data.ndim != 2:
            raise ValidationError(f"EmbeddingMatrix needs a 2-d array, got shape {data.shape}")
        n, d = data.shape
        if n < 1 or d < 2:
            raise ValidationError(f"EmbeddingMatrix needs N >= 1 and d >= 2, got {n}x{d}")
        if not np.all(np.isfinite(data)):
            raise NonFiniteInput("EmbeddingMatrix contains NaN/Inf entries")
        if self.normalized:
            norms = np.linalg.norm(data, axis=1)
            bad = (np.abs(norms - 1.0) > self.atol) & (norms != 0.0)
            if np.any(bad):
                i = int(np.argmax(bad))
                raise ValidationError(
                    f"row {i} has norm {norms[i]!r}, not unit within {self.atol}"
                )
        data = data.copy()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> int:
        return self.data.shape[1]

    def row(self, i: int) -> UnitVector:
        return UnitVector(self.data[i])


def normalize_rows(m: EmbeddingMatrix, eps: float = NORM_EPS) -> tuple[EmbeddingMatrix, np.ndarray]:
    """Project every row of ``m`` onto the unit sphere.

    Each output row is ``row / max(||row||, eps)``, so rows with norm
    below ``eps`` are clamped rather than divided by zero; a zero row
    stays zero. Returns the normalized matrix (flag set) together with
    the indices of clamped, degenerate rows.
    """
    norms = np.linalg.norm(m.data, axis=1)
    degenerate = np.flatnonzero(norms < eps)
    out = m.data / np.maximum(norms, eps)[:, None]
    return EmbeddingMatrix(out, normalized=True), degenerate


def cosine_matrix(a: EmbeddingMatrix, b: EmbeddingMatrix) -> np.ndarray:
    """Pairwise cosine similarities: out[i, j] = <a_i, b_j>.

    Both inputs must be row-normalized and share d; entries then lie in
    [-1, 1] up to rounding.
    """
    if a.dims != b.dims:
        raise DimMismatch(f"cosine_matrix: {a.dims} vs {b.dims}")
    if not (a.normalized and b.normalized):
        raise ValidationError("cosine_matrix requires normalized inputs")
    return a.data @ b.data.T


def mean_resultant(m: EmbeddingMatrix) -> tuple[UnitVector, float]:
    """Mean direction and resultant length of a normalized sample.

    Computes the row mean w, its norm R = ||w|| in [0, 1], and the unit
    direction w/R. Raises :class:`DegenerateMean` when R < 1e-10, i.e.
    the sample is perfectly balanced (antipodal cancellation) and has no
    meaningful mean direction.
    """
    if not m.normalized:
        raise ValidationError("mean_resultant requires a normalized matrix")
    wbar = m.data.mean(axis=0)
    r = float(np.linalg.norm(wbar))
    if r < 1e-10:
        raise DegenerateMean(f"resultant length {r!r} below 1e-10")
    return UnitVector(wbar / r), min(r, 1.0)
