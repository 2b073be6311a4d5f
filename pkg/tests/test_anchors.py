import numpy as np
import pytest

from spheretune.anchors import AnchorSet, build_class_fields, build_clip_field, fuse_anchors
from spheretune.errors import DegenerateFusion, DegenerateMean, DimMismatch, InvalidSpec
from spheretune.manifold import EmbeddingMatrix, UnitVector
from spheretune.vmf import VmfParams, sample_vmf

from conftest import random_orthogonal, random_unit_rows


def unit(v) -> UnitVector:
    v = np.asarray(v, dtype=np.float64)
    return UnitVector(v / np.linalg.norm(v))


def params(direction, kappa) -> VmfParams:
    return VmfParams(mu=unit(direction), kappa=kappa)


class TestBuildClipField:
    def test_recovers_generating_direction(self):
        mu = np.zeros(32)
        mu[0] = 1.0
        vocab = sample_vmf(params(mu, 20.0), 10_000, seed=13)
        field = build_clip_field(vocab)
        assert float(field.mu.coords @ mu) > 0.99

    def test_antipodal_vocab_is_degenerate(self):
        vocab = EmbeddingMatrix(np.array([[1.0, 0.0], [-1.0, 0.0]]), normalized=True)
        with pytest.raises(DegenerateMean):
            build_clip_field(vocab)

    def test_single_row_vocab_saturates(self):
        row = np.zeros(8)
        row[3] = 1.0
        field = build_clip_field(EmbeddingMatrix(row[None, :], normalized=True), eps=1e-8)
        np.testing.assert_array_equal(field.mu.coords, row)
        np.testing.assert_allclose(field.kappa, 7.0 / 1e-8, rtol=1e-9)


class TestBuildClassFields:
    def test_separated_modes_stay_separated(self, rng):
        # two prompt populations generated 90 degrees apart
        d = 16
        mu_a, mu_b = np.eye(d)[0], np.eye(d)[1]
        prompts = [
            sample_vmf(params(mu_a, 200.0), 50, seed=1),
            sample_vmf(params(mu_b, 200.0), 50, seed=2),
        ]
        fields = build_class_fields(prompts)
        assert len(fields) == 2
        cross = float(fields[0].mu.coords @ fields[1].mu.coords)
        assert cross < 0.9

    def test_identical_prompts_saturate(self):
        row = np.zeros(6)
        row[0] = 1.0
        m = EmbeddingMatrix(np.stack([row] * 4), normalized=True)
        fields = build_class_fields([m], eps=1e-8)
        np.testing.assert_allclose(fields[0].kappa, 5.0 / 1e-8, rtol=1e-9)

    def test_empty_class_list_rejected(self):
        with pytest.raises(InvalidSpec):
            build_class_fields([])

    def test_dim_mismatch_across_classes(self, rng):
        a = EmbeddingMatrix(random_unit_rows(rng, 3, 4), normalized=True)
        b = EmbeddingMatrix(random_unit_rows(rng, 3, 5), normalized=True)
        with pytest.raises(DimMismatch):
            build_class_fields([a, b])


class TestFuseAnchors:
    def test_zero_global_kappa_keeps_class_direction(self, rng):
        d = 8
        clip = params(np.eye(d)[0], 0.0)
        rows = random_unit_rows(rng, 3, d)
        fields = [params(r, 5.0) for r in rows]
        fused = fuse_anchors(clip, fields)
        np.testing.assert_allclose(fused.anchors, rows, atol=1e-12)

    def test_equal_kappas_bisect(self):
        clip = params([1.0, 0.0], 2.0)
        fused = fuse_anchors(clip, [params([0.0, 1.0], 2.0)])
        np.testing.assert_allclose(fused.anchors[0], np.full(2, np.sqrt(0.5)), atol=1e-12)

    def test_opposing_directions_resolve_by_weight(self):
        clip = params([1.0, 0.0], 3.0)
        fused = fuse_anchors(clip, [params([-1.0, 0.0], 1.0)])
        np.testing.assert_allclose(fused.anchors[0], [1.0, 0.0], atol=1e-12)

    def test_exact_cancellation_raises(self):
        clip = params([1.0, 0.0], 2.0)
        with pytest.raises(DegenerateFusion):
            fuse_anchors(clip, [params([-1.0, 0.0], 2.0)])

    def test_anchor_on_geodesic_arc(self, rng):
        # fused anchor must be a nonnegative combination of both directions
        d = 6
        for _ in range(20):
            a, b = random_unit_rows(rng, 2, d)
            clip = params(a, float(rng.uniform(0.1, 10.0)))
            field = params(b, float(rng.uniform(0.1, 10.0)))
            u = fuse_anchors(clip, [field]).anchors[0]
            basis = np.stack([a, b]).T
            coeffs, *_ = np.linalg.lstsq(basis, u, rcond=None)
            np.testing.assert_allclose(basis @ coeffs, u, atol=1e-9)
            assert coeffs.min() >= -1e-9

    def test_class_field_dominates_as_ratio_grows(self):
        clip = params([1.0, 0.0, 0.0], 1.0)
        target = np.array([0.0, 1.0, 0.0])
        cosines = []
        for ratio in (0.5, 1.0, 2.0, 8.0, 64.0, 512.0):
            fused = fuse_anchors(clip, [params(target, ratio)])
            cosines.append(float(fused.anchors[0] @ target))
        assert np.all(np.diff(cosines) > 0.0)
        assert cosines[-1] > 0.999

    def test_rotation_equivariance(self, rng):
        d = 10
        clip_dir, class_dir = random_unit_rows(rng, 2, d)
        fused = fuse_anchors(params(clip_dir, 3.0), [params(class_dir, 1.5)])
        q = random_orthogonal(rng, d)
        fused_rot = fuse_anchors(params(q @ clip_dir, 3.0), [params(q @ class_dir, 1.5)])
        np.testing.assert_allclose(fused_rot.anchors, fused.anchors @ q.T, atol=1e-9)

    def test_kappa_cap_limits_weighting(self):
        clip = params([1.0, 0.0], 1000.0)
        fused = fuse_anchors(clip, [params([0.0, 1.0], 1.0)], kappa_cap=1.0)
        np.testing.assert_allclose(fused.anchors[0], np.full(2, np.sqrt(0.5)), atol=1e-12)

    def test_dim_mismatch(self):
        clip = params([1.0, 0.0], 1.0)
        with pytest.raises(DimMismatch):
            fuse_anchors(clip, [params([1.0, 0.0, 0.0], 1.0)])


class TestAnchorSet:
    def test_subset_preserves_rows(self, rng):
        d = 5
        rows = random_unit_rows(rng, 4, d)
        fields = tuple(params(r, 2.0) for r in rows)
        anchors = AnchorSet(clip_field=params(np.eye(d)[0], 1.0), class_fields=fields, anchors=rows)
        sub = anchors.subset([2, 0])
        np.testing.assert_array_equal(sub.anchors, rows[[2, 0]])
        assert sub.class_fields == (fields[2], fields[0])

    def test_row_count_must_match_fields(self, rng):
        rows = random_unit_rows(rng, 3, 4)
        with pytest.raises(InvalidSpec):
            AnchorSet(
                clip_field=params(np.eye(4)[0], 1.0),
                class_fields=(params(rows[0], 1.0),),
                anchors=rows,
            )
