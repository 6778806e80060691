"""Closed-form and robust similarity registration."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nocs_forge.core import SimilarityPose, random_rotation
from nocs_forge.registration import (
    CorrespondenceSet,
    DegenerateConfigurationError,
    RobustConfig,
    interval_vote,
    ransac_umeyama_oracle,
    residuals,
    robust_register,
    synthetic_harness,
    umeyama,
)

HARNESS_CFG = RobustConfig(noise_bound=0.02)


def rot_err_deg(a, b) -> float:
    return float(np.degrees(np.arccos(np.clip((np.trace(a.T @ b) - 1) / 2, -1, 1))))


def pose_errors(est: SimilarityPose, gt: SimilarityPose) -> tuple[float, float, float]:
    """(degrees, relative scale error, meters)."""
    return (
        rot_err_deg(est.rotation, gt.rotation),
        abs(est.scale - gt.scale) / gt.scale,
        float(np.linalg.norm(est.translation - gt.translation)),
    )


def clean(n=60, seed=0, scale=0.3):
    rng = np.random.default_rng(seed)
    q = rng.uniform(-0.5, 0.5, (n, 3))
    pose = SimilarityPose(random_rotation(rng), rng.normal(size=3), scale)
    return CorrespondenceSet(q, pose.transform(q)), pose


def assert_pose_close(a: SimilarityPose, b: SimilarityPose, atol: float):
    np.testing.assert_allclose(a.rotation, b.rotation, atol=atol)
    np.testing.assert_allclose(a.translation, b.translation, atol=atol)
    assert abs(a.scale - b.scale) <= atol * max(1.0, b.scale)


# ── closed form ──────────────────────────────────────────────────────────

class TestUmeyama:
    def test_identity(self, rng):
        q = rng.normal(size=(20, 3))
        assert_pose_close(umeyama(CorrespondenceSet(q, q)), SimilarityPose.identity(), 1e-12)

    def test_exact_model(self, rng):
        r0, t0 = random_rotation(rng), rng.normal(size=3)
        q = rng.normal(size=(10, 3))
        est = umeyama(CorrespondenceSet(q, 2.0 * q @ r0.T + t0))
        assert_pose_close(est, SimilarityPose(r0, t0, 2.0), 1e-9)

    def test_gaussian_noise_bound(self):
        rng = np.random.default_rng(3)
        pose = SimilarityPose(random_rotation(rng), rng.normal(size=3), 0.25)
        q = rng.uniform(-0.5, 0.5, (1000, 3))
        est = umeyama(CorrespondenceSet(q, pose.transform(q) + 0.01 * rng.standard_normal((1000, 3))))
        r, s, _ = pose_errors(est, pose)
        assert r <= 1.0 and s <= 0.01

    def test_weights_ignore_zeroed_points(self, rng):
        corr, pose = clean(30)
        p = corr.p.copy()
        p[:5] += 3.0
        w = np.ones(30)
        w[:5] = 0.0
        assert_pose_close(umeyama(CorrespondenceSet(corr.q, p), w), pose, 1e-9)

    def test_never_returns_reflection(self, rng):
        q = rng.normal(size=(10, 3))
        est = umeyama(CorrespondenceSet(q, q * np.array([1.0, 1.0, -1.0])))
        assert np.linalg.det(est.rotation) == pytest.approx(1.0)

    @pytest.mark.parametrize("q", [np.zeros((5, 3)), np.outer(np.arange(5.0), [1.0, 2.0, 3.0]), np.eye(3)[:2]])
    def test_degenerate(self, q):
        with pytest.raises(DegenerateConfigurationError):
            umeyama(CorrespondenceSet(q, q))

    def test_input_validation(self):
        with pytest.raises(ValueError):
            CorrespondenceSet(np.zeros((4, 3)), np.zeros((5, 3)))
        with pytest.raises(ValueError):
            CorrespondenceSet(np.full((4, 3), np.nan), np.zeros((4, 3)))


class TestIntervalVote:
    def test_densest_overlap(self):
        members = interval_vote(np.array([0.0, 0.1, 0.15, 5.0, 5.05]), np.full(5, 0.1))
        np.testing.assert_array_equal(members, [True, True, True, False, False])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_members_share_a_point(self, seed):
        r = np.random.default_rng(seed)
        c = r.normal(size=30)
        rad = r.uniform(0.05, 0.5, 30)
        members = interval_vote(c, rad)
        assert members.any()
        assert (c[members] - rad[members]).max() <= (c[members] + rad[members]).min() + 1e-12
        # no point is covered by more intervals
        grid = np.linspace(c.min() - 1, c.max() + 1, 2001)
        depth = ((grid[:, None] >= c - rad) & (grid[:, None] <= c + rad)).sum(axis=1)
        assert depth.max() <= members.sum()


# ── robust registration ──────────────────────────────────────────────────

class TestRobust:
    def test_clean_matches_umeyama(self):
        corr, _ = clean()
        res = robust_register(corr)
        assert_pose_close(res.pose, umeyama(corr), 1e-6)
        assert res.confidence == 1.0 and not res.low_confidence

    def test_harness_accuracy(self):
        corr, gt, truth = synthetic_harness()
        assert len(corr) == 500 and (~truth).sum() == 300
        res = robust_register(corr, HARNESS_CFG)
        r, s, t = pose_errors(res.pose, gt)
        assert r <= 2.0 and s <= 0.01 and t <= 0.01
        assert 0.35 <= res.confidence <= 0.45

    def test_oracle_agreement(self):
        corr, gt, _ = synthetic_harness()
        ours = robust_register(corr, HARNESS_CFG)
        oracle = ransac_umeyama_oracle(corr, HARNESS_CFG)
        r, s, t = pose_errors(oracle.pose, gt)
        assert r <= 2.0 and s <= 0.01 and t <= 0.01
        r, s, t = pose_errors(ours.pose, oracle.pose)
        assert r <= 2.0 and s <= 0.02 and t <= 0.02

    def test_default_bound(self):
        corr, gt, _ = synthetic_harness(outlier_fraction=0.3, seed=2)
        res = robust_register(corr)
        assert res.noise_bound == pytest.approx(max(0.005, 0.02 * res.pose.scale), rel=0.05)
        assert pose_errors(res.pose, gt)[0] <= 2.0

    def test_confidence_is_inlier_ratio(self):
        corr, _, _ = synthetic_harness(seed=4)
        res = robust_register(corr, HARNESS_CFG)
        inl = np.linalg.norm(corr.p - res.pose.transform(corr.q), axis=1) <= res.noise_bound
        np.testing.assert_array_equal(res.inlier_mask, inl)
        assert res.confidence == inl.sum() / len(corr)

    def test_inliers_track_truth(self):
        corr, _, truth = synthetic_harness(seed=5)
        res = robust_register(corr, HARNESS_CFG)
        recall = (res.inlier_mask & truth).sum() / truth.sum()
        assert recall >= 0.95

    def test_reproducible(self):
        corr, _, _ = synthetic_harness(seed=6)
        a, b = robust_register(corr, HARNESS_CFG), robust_register(corr, HARNESS_CFG)
        np.testing.assert_array_equal(a.pose.matrix(), b.pose.matrix())
        a, b = ransac_umeyama_oracle(corr, HARNESS_CFG), ransac_umeyama_oracle(corr, HARNESS_CFG)
        np.testing.assert_array_equal(a.pose.matrix(), b.pose.matrix())

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_equivariance(self, seed):
        corr, _ = clean(seed=seed)
        rng = np.random.default_rng(100 + seed)
        extra = SimilarityPose(random_rotation(rng), rng.normal(size=3), float(rng.uniform(0.5, 2.0)))
        base = robust_register(corr)
        moved = robust_register(CorrespondenceSet(corr.q, extra.transform(corr.p)))
        assert_pose_close(moved.pose, extra.compose(base.pose), 1e-9)
        assert moved.confidence == base.confidence

    def test_monotonic_degradation(self):
        medians = []
        for frac in (0.0, 0.2, 0.4, 0.6):
            errs = []
            for seed in range(7):
                corr, gt, _ = synthetic_harness(outlier_fraction=frac, seed=seed)
                errs.append(pose_errors(robust_register(corr, HARNESS_CFG).pose, gt)[0])
            medians.append(np.median(errs))
        assert all(a <= b for a, b in zip(medians, medians[1:])), medians

    def test_too_few_inliers_flagged(self, rng):
        q = rng.uniform(-0.5, 0.5, (40, 3))
        p = rng.uniform(-5, 5, (40, 3))
        res = robust_register(CorrespondenceSet(q, p), RobustConfig(noise_bound=1e-4))
        assert res.low_confidence
        assert res.confidence <= 3 / 40

    def test_subsampling_cap(self):
        corr, gt, _ = synthetic_harness(n=3000, outlier_fraction=0.5, seed=8)
        res = robust_register(corr, RobustConfig(noise_bound=0.02, max_correspondences=500))
        assert res.inlier_mask.shape == (3000,)
        assert pose_errors(res.pose, gt)[0] <= 2.0

    def test_needs_three(self):
        with pytest.raises(ValueError):
            robust_register(CorrespondenceSet(np.zeros((2, 3)), np.zeros((2, 3))))
        with pytest.raises(ValueError):
            ransac_umeyama_oracle(clean()[0], RobustConfig())

    def test_residuals(self):
        corr, pose = clean()
        np.testing.assert_allclose(residuals(pose, corr), 0.0, atol=1e-12)
