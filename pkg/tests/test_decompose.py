import numpy as np
import pytest

from foresteyes.decompose import (
    PcaComposite,
    fit_pca,
    load_pca_model,
    pca_composite,
    save_pca_model,
)
from foresteyes.errors import ValidationError

from conftest import make_stack


def jacobi_eigh(matrix, sweeps=100, tol=1e-14):
    """Cyclic Jacobi eigensolver; independent of the production eigh path."""
    a = np.array(matrix, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < tol:
                    continue
                theta = 0.5 * np.arctan2(2.0 * a[p, q], a[q, q] - a[p, p])
                c, s = np.cos(theta), np.sin(theta)
                rot = np.eye(n)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                v = v @ rot
    return np.diag(a), v


def brute_force_pca(stack, n_components):
    """Covariance assembled by explicit loops, diagonalized by Jacobi."""
    X = stack.pixel_matrix()
    mean = X.mean(axis=0)
    centered = X - mean
    n, b = centered.shape
    cov = np.zeros((b, b))
    for i in range(b):
        for j in range(b):
            cov[i, j] = float(centered[:, i] @ centered[:, j]) / (n - 1)
    evals, evecs = jacobi_eigh(cov)
    order = np.argsort(evals)[::-1][:n_components]
    return evals[order], evecs[:, order].T


class TestFit:
    def test_orthonormal_components_match_oracle(self, random_stack):
        model = fit_pca(random_stack, n_components=3)
        gram = model.components_ @ model.components_.T
        assert np.allclose(gram, np.eye(3), atol=1e-6)
        assert (np.diff(model.explained_variance_) <= 1e-12).all()
        oracle_vals, oracle_vecs = brute_force_pca(random_stack, 3)
        assert np.allclose(model.explained_variance_, oracle_vals, atol=1e-6)
        for k in range(3):
            dot = abs(float(model.components_[k] @ oracle_vecs[k]))
            assert dot == pytest.approx(1.0, abs=1e-6)

    def test_identical_planes_rank_one(self, rng):
        plane = rng.uniform(size=(8, 8)).astype(np.float32)
        stack = make_stack(np.stack([plane] * 7))
        model = fit_pca(stack, n_components=3)
        assert model.explained_variance_[0] > 0
        assert model.explained_variance_[1] == pytest.approx(0.0, abs=1e-9)
        assert model.explained_variance_[2] == pytest.approx(0.0, abs=1e-9)
        first = np.abs(model.components_[0])
        assert np.allclose(first, 1.0 / np.sqrt(7.0), atol=1e-9)

    def test_collinear_two_band(self):
        bands = np.array(
            [[[0.0, 1.0, 2.0]], [[0.0, 1.0, 2.0]]], dtype=np.float32
        )
        model = fit_pca(make_stack(bands), n_components=2)
        assert np.allclose(np.abs(model.components_[0]), 1.0 / np.sqrt(2.0), atol=1e-9)
        assert model.explained_variance_[1] == pytest.approx(0.0, abs=1e-12)

    def test_variance_sum_equals_total(self, random_stack):
        model = fit_pca(random_stack, n_components=7)
        total = random_stack.pixel_matrix().var(axis=0, ddof=1).sum()
        assert np.sum(model.explained_variance_) == pytest.approx(total, rel=1e-6)

    def test_uncorrelated_projections(self, random_stack):
        model = fit_pca(random_stack, n_components=3)
        scores = model.project(random_stack).reshape(3, -1)
        cov = np.cov(scores, ddof=1)
        off = cov - np.diag(np.diag(cov))
        assert np.abs(off).max() <= 1e-6

    def test_preconditions(self, random_stack):
        with pytest.raises(ValidationError, match="exceeds band count"):
            fit_pca(random_stack, n_components=8)
        constant = make_stack(np.zeros((3, 4, 4), dtype=np.float32))
        with pytest.raises(ValidationError, match="distinct pixel vectors"):
            fit_pca(constant, n_components=2)

    def test_sign_convention_deterministic(self, random_stack):
        a = fit_pca(random_stack, 3)
        b = fit_pca(random_stack, 3)
        assert np.array_equal(a.components_, b.components_)
        for k in range(3):
            peak = np.argmax(np.abs(a.components_[k]))
            assert a.components_[k, peak] > 0


class TestComposite:
    def test_mean_pixel_projects_to_zero(self, random_stack):
        model = fit_pca(random_stack, 3)
        mean_scores = (random_stack.pixel_matrix().mean(axis=0) - model.mean_)
        assert np.allclose(mean_scores @ model.components_.T, 0.0, atol=1e-9)

    def test_rank_one_gives_constant_minor_bands(self, rng):
        plane = rng.uniform(size=(8, 8)).astype(np.float32)
        stack = make_stack(np.stack([plane] * 7))
        out = pca_composite(stack, fit_pca(stack, 3))
        assert out.n_bands == 3
        assert np.ptp(out.bands[1]) == pytest.approx(0.0, abs=1e-4)
        assert np.ptp(out.bands[2]) == pytest.approx(0.0, abs=1e-4)

    def test_scaling_range_and_metadata(self, random_stack):
        out = pca_composite(random_stack, fit_pca(random_stack, 3))
        assert out.bands.min() >= 0.0 and out.bands.max() <= 255.0
        assert out.pixel_size == random_stack.pixel_size
        assert out.origin == random_stack.origin
        assert out.crs == random_stack.crs

    def test_reconstruction_error_improves_with_components(self, random_stack):
        X = random_stack.pixel_matrix()
        errors = []
        for k in (2, 3):
            model = fit_pca(random_stack, k)
            centered = X - model.mean_
            scores = centered @ model.components_.T
            recon = scores @ model.components_
            errors.append(float(((centered - recon) ** 2).sum()))
        assert errors[1] <= errors[0]

    def test_band_count_mismatch(self, random_stack, rng):
        model = fit_pca(random_stack, 3)
        other = make_stack(rng.uniform(size=(3, 4, 4)))
        with pytest.raises(ValidationError, match="fitted on"):
            model.transform(other)

    def test_model_json_round_trip(self, tmp_path, random_stack):
        model = fit_pca(random_stack, 3)
        save_pca_model(model, tmp_path / "model.json")
        loaded = load_pca_model(tmp_path / "model.json")
        assert np.array_equal(loaded.components_, model.components_)
        assert np.array_equal(loaded.mean_, model.mean_)
        first = pca_composite(random_stack, model)
        second = pca_composite(random_stack, loaded)
        assert np.array_equal(first.bands, second.bands)

    def test_estimator_params(self):
        assert PcaComposite(n_components=5).get_params() == {"n_components": 5}
