"""Principal component analysis of a multiband stack into a pseudo-RGB composite.

The per-pixel band vectors are mean-centered (no variance standardization)
and decomposed through the band-by-band covariance matrix; with at most a
handful of bands the symmetric eigenproblem is cheap and numerically
adequate. Component signs are fixed so the largest-magnitude coefficient
is positive, which makes output reproducible across linear-algebra
backends.
"""

from __future__ import annotations

import json

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import ValidationError
from .raster import BandStack


class PcaComposite(BaseEstimator, TransformerMixin):
    """Project a band stack onto its principal components.

    Parameters
    ----------
    n_components : int
        Number of components to retain (default 3, one per output band).

    Attributes
    ----------
    mean_ : ndarray, shape (n_bands,)
        Per-band mean of the training pixels.
    components_ : ndarray, shape (n_components, n_bands)
        Orthonormal basis vectors, ordered by decreasing variance.
    explained_variance_ : ndarray, shape (n_components,)
        Sample variance captured by each component, non-increasing.
    """

    def __init__(self, n_components: int = 3):
        self.n_components = n_components

    def fit(self, stack: BandStack, y=None):
        n_components = int(self.n_components)
        if n_components < 1:
            raise ValidationError(f"n_components must be >= 1, got {n_components}")
        if n_components > stack.n_bands:
            raise ValidationError(
                f"n_components {n_components} exceeds band count {stack.n_bands}"
            )
        X = stack.pixel_matrix()
        if X.shape[0] < 2:
            raise ValidationError("covariance needs at least 2 pixels")
        distinct = np.unique(X, axis=0).shape[0]
        if distinct < n_components:
            raise ValidationError(
                f"stack has only {distinct} distinct pixel vectors, "
                f"need at least {n_components}"
            )
        mean = X.mean(axis=0)
        cov = np.cov(X - mean, rowvar=False, ddof=1)
        cov = np.atleast_2d(cov)
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1][:n_components]
        components = evecs[:, order].T.copy()
        variances = np.maximum(evals[order], 0.0)
        for k in range(components.shape[0]):
            peak = np.argmax(np.abs(components[k]))
            if components[k, peak] < 0:
                components[k] = -components[k]
        self.n_bands_ = stack.n_bands
        self.mean_ = mean
        self.components_ = components
        self.explained_variance_ = variances
        return self

    def project(self, stack: BandStack) -> np.ndarray:
        """Raw centered projections, shape (n_components, height, width)."""
        self._check_fitted(stack)
        X = stack.pixel_matrix() - self.mean_
        scores = X @ self.components_.T
        return scores.T.reshape(self.components_.shape[0], stack.height, stack.width)

    def transform(self, stack: BandStack) -> BandStack:
        """Component composite: each projection min-max scaled to [0, 255].

        A zero-variance projection maps to 0. Geographic metadata is copied
        from the input.
        """
        scores = self.project(stack)
        scaled = np.zeros_like(scores, dtype=np.float32)
        spans = [float(np.ptp(scores[k])) for k in range(scores.shape[0])]
        # spans at floating-point noise level count as constant projections
        tol = 1e-9 * max(max(spans), 1.0)
        for k in range(scores.shape[0]):
            if spans[k] > tol:
                lo = float(scores[k].min())
                scaled[k] = (scores[k] - lo) / spans[k] * 255.0
        return BandStack(
            bands=scaled,
            band_names=tuple(f"pc{k + 1}" for k in range(scores.shape[0])),
            pixel_size=stack.pixel_size,
            origin=stack.origin,
            crs=stack.crs,
            nodata=None,
        )

    def _check_fitted(self, stack: BandStack) -> None:
        if not hasattr(self, "components_"):
            raise ValidationError("PcaComposite is not fitted")
        if stack.n_bands != self.n_bands_:
            raise ValidationError(
                f"stack has {stack.n_bands} bands, model was fitted on {self.n_bands_}"
            )

    def to_dict(self) -> dict:
        return {
            "n_components": int(self.components_.shape[0]),
            "n_bands": int(self.n_bands_),
            "mean": self.mean_.tolist(),
            "components": self.components_.tolist(),
            "explained_variance": self.explained_variance_.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "PcaComposite":
        model = cls(n_components=payload["n_components"])
        model.n_bands_ = int(payload["n_bands"])
        model.mean_ = np.asarray(payload["mean"], dtype=np.float64)
        model.components_ = np.asarray(payload["components"], dtype=np.float64)
        model.explained_variance_ = np.asarray(
            payload["explained_variance"], dtype=np.float64
        )
        return model


def fit_pca(stack: BandStack, n_components: int = 3) -> PcaComposite:
    """Fit a PCA model on a stack's pixel vectors."""
    return PcaComposite(n_components=n_components).fit(stack)


def pca_composite(stack: BandStack, model: PcaComposite) -> BandStack:
    """Render the component composite of ``stack`` under a fitted model."""
    return model.transform(stack)


def save_pca_model(model: PcaComposite, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_pca_model(path) -> PcaComposite:
    with open(path, "r", encoding="utf-8") as fh:
        return PcaComposite.from_dict(json.load(fh))
