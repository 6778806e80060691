"""PCA reduction, nearest-neighbor resizing, the stub extractor and TNSR files."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nocs_forge import tnsr
from nocs_forge.features import STUB_CHANNELS, fit_pca, project, reconstruct, resize_nn, stub_extractor


def _eig_oracle(x, m):
    """Top-m covariance eigenpairs by a dense symmetric eigensolver."""
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (len(x) - 1)
    w, v = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1][:m]
    return w[order], v[:, order].T


def _recon_error(model, x):
    return float(np.sum((reconstruct(model, project(model, x)) - x) ** 2))


def _oracle_recon_error(x, m):
    _, v = _eig_oracle(x, m)
    xc = x - x.mean(axis=0)
    return float(np.sum((xc - xc @ v.T @ v) ** 2))


def _cosine(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


# ── PCA ──────────────────────────────────────────────────────────────────

class TestPca:
    def test_default_dimension(self, rng):
        assert fit_pca([rng.normal(size=(10, 10, 16))]).n_components == 6

    def test_exact_plane(self, rng):
        basis = rng.normal(size=(2, 5))
        x = rng.normal(size=(200, 2)) @ basis + rng.normal(size=5)
        model = fit_pca([x], 2)
        assert _recon_error(model, x) <= 1e-9

    def test_components_orthonormal_and_sorted(self, rng):
        model = fit_pca([rng.normal(size=(300, 8)) * np.arange(1, 9)], 5)
        assert np.abs(model.components @ model.components.T - np.eye(5)).max() <= 1e-6
        assert np.all(np.diff(model.explained_variance) <= 0)

    def test_sign_convention(self, rng):
        model = fit_pca([rng.normal(size=(100, 6))], 4)
        for row in model.components:
            assert row[np.argmax(np.abs(row))] > 0

    @pytest.mark.parametrize("m", range(1, 9))
    def test_matches_eigensolver(self, m):
        x = np.random.default_rng(42).normal(size=(100, 8)) * np.linspace(0.5, 3.0, 8)
        model = fit_pca([x], m)
        w, _ = _eig_oracle(x, m)
        np.testing.assert_allclose(model.explained_variance, w, rtol=1e-8)
        assert _recon_error(model, x) == pytest.approx(_oracle_recon_error(x, m), rel=1e-8, abs=1e-8)
        # captured energy equals the summed top variances
        z = project(model, x)
        assert np.sum(z**2) / (len(x) - 1) == pytest.approx(w.sum(), rel=1e-8)

    def test_error_non_increasing_in_m(self, rng):
        x = rng.normal(size=(150, 7))
        errs = [_recon_error(fit_pca([x], m), x) for m in range(1, 8)]
        assert all(a >= b - 1e-9 for a, b in zip(errs, errs[1:]))

    def test_pixel_order_invariance(self, rng):
        x = rng.normal(size=(120, 6))
        perm = rng.permutation(120)
        a, b = fit_pca([x], 3), fit_pca([x[perm]], 3)
        np.testing.assert_allclose(project(a, x), project(b, x), atol=1e-10)

    def test_accepts_several_maps(self, rng):
        maps = [rng.normal(size=(4, 5, 6)), rng.normal(size=(3, 3, 6))]
        pooled = np.concatenate([m.reshape(-1, 6) for m in maps])
        np.testing.assert_allclose(fit_pca(maps, 3).components, fit_pca([pooled], 3).components, atol=1e-12)

    def test_project_mean_is_zero(self, rng):
        model = fit_pca([rng.normal(size=(50, 4))], 2)
        np.testing.assert_allclose(project(model, model.mean), 0.0, atol=1e-15)

    def test_truncation(self, rng):
        model = fit_pca([rng.normal(size=(50, 6))], 6)
        t = model.truncated(3)
        assert t.n_components == 3
        np.testing.assert_array_equal(t.components, model.components[:3])

    def test_dict_roundtrip(self, rng):
        model = fit_pca([rng.normal(size=(50, 6))], 3)
        back = type(model).from_dict(model.to_dict())
        np.testing.assert_array_equal(back.components, model.components)

    def test_errors(self, rng):
        with pytest.raises(ValueError):
            fit_pca([rng.normal(size=(50, 4))], 5)
        with pytest.raises(ValueError):
            fit_pca([], 2)
        with pytest.raises(ValueError):
            fit_pca([rng.normal(size=(2, 4))], 3)
        model = fit_pca([rng.normal(size=(50, 4))], 2)
        with pytest.raises(ValueError):
            project(model, np.zeros((3, 5)))


# ── resizing ─────────────────────────────────────────────────────────────

class TestResizeNN:
    def test_same_size_identity(self, rng):
        f = rng.normal(size=(5, 7, 3))
        np.testing.assert_array_equal(resize_nn(f, 5, 7), f)

    def test_upsample_replicates_blocks(self):
        f = np.arange(4.0).reshape(2, 2, 1)
        out = resize_nn(f, 4, 4)[..., 0]
        np.testing.assert_array_equal(out, np.kron(f[..., 0], np.ones((2, 2))))

    def test_down_then_up_constant(self):
        f = np.full((9, 9, 2), 3.5)
        np.testing.assert_array_equal(resize_nn(resize_nn(f, 4, 3), 9, 9), f)

    def test_invalid_size(self):
        with pytest.raises(ValueError):
            resize_nn(np.zeros((2, 2, 1)), 0, 2)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 30), st.integers(1, 30))
    def test_values_come_from_source(self, h, w, oh, ow):
        f = np.arange(h * w, dtype=np.float64).reshape(h, w, 1)
        out = resize_nn(f, oh, ow)
        assert out.shape == (oh, ow, 1)
        assert set(np.unique(out)) <= set(f.ravel())


# ── stub extractor ───────────────────────────────────────────────────────

class TestStubExtractor:
    def test_shape_and_range(self, rng):
        out = stub_extractor(rng.uniform(size=(10, 12, 3)))
        assert out.shape == (10, 12, STUB_CHANNELS)
        assert np.all(np.abs(out) <= 1.0)

    def test_constant_image_constant_features(self):
        out = stub_extractor(np.full((8, 8, 3), 0.4))
        np.testing.assert_array_equal(out, np.broadcast_to(out[0, 0], out.shape))

    def test_deterministic(self, pair_views):
        a = stub_extractor(pair_views[0].rgb)
        b = stub_extractor(pair_views[0].rgb.copy())
        np.testing.assert_array_equal(a, b)

    def test_category_similarity(self, pair_views):
        # the two toy instances of the same category look more alike than across categories
        from nocs_forge.datagen.generate import generate_views

        extra = generate_views(["cylinder", "cone"], instances=1, subdivisions=0, seed=11)

        def mean_feat(views, cat):
            feats = [stub_extractor(v.rgb)[v.mask] for v in views if v.category == cat]
            return np.concatenate(feats).mean(axis=0)

        cyl_a, cone_a = mean_feat(pair_views, 1), mean_feat(pair_views, 2)
        cyl_b, cone_b = mean_feat(extra, 1), mean_feat(extra, 2)
        same = min(_cosine(cyl_a, cyl_b), _cosine(cone_a, cone_b))
        cross = max(_cosine(cyl_a, cone_b), _cosine(cone_a, cyl_b))
        assert same > cross


# ── TNSR files ───────────────────────────────────────────────────────────

class TestTnsr:
    @pytest.mark.parametrize("dtype", [np.float32, np.uint8])
    def test_roundtrip(self, tmp_path, rng, dtype):
        a = (rng.uniform(size=(3, 4, 5)) * 200).astype(dtype)
        tnsr.save(tmp_path / "a.tnsr", a)
        back = tnsr.load(tmp_path / "a.tnsr")
        assert back.dtype == a.dtype
        np.testing.assert_array_equal(back, a)

    def test_header_layout(self):
        data = tnsr.encode(np.zeros((2, 3), dtype=np.float32))
        assert data[:4] == b"TNSR"
        assert data[4:8] == bytes([1, 0, 0, 2])
        assert data[8:16] == bytes([2, 0, 0, 0, 3, 0, 0, 0])
        assert len(data) == 16 + 24

    def test_bool_and_float64_are_converted(self):
        assert tnsr.decode(tnsr.encode(np.array([True, False]))).dtype == np.uint8
        assert tnsr.decode(tnsr.encode(np.array([1.5]))).dtype == np.float32

    @pytest.mark.parametrize(
        "blob",
        [b"XXXX\x01\x00\x00\x00", b"TNSR\x02\x00\x00\x00", b"TNSR\x01\x00\x07\x00", b"TNSR\x01\x00\x00\x01\x02\x00\x00\x00"],
    )
    def test_malformed(self, blob):
        with pytest.raises(tnsr.TnsrError):
            tnsr.decode(blob)

    def test_unsupported_dtype(self):
        with pytest.raises(tnsr.TnsrError):
            tnsr.encode(np.zeros(2, dtype=np.int32))
