"""Target distributions: unnormalized log-densities and their gradients.

Every target accepts either a single point of shape ``(d,)`` or a batch of
points of shape ``(..., d)``; the log-density then has shape ``(...)`` and
the gradient the same shape as the input. Batching is what lets many
independent chains advance in lockstep.
"""

from __future__ import annotations

import csv
import io
from abc import ABC, abstractmethod
from pathlib import Path

import numpy as np
import scipy.linalg as sla
from scipy.special import expit


class DimensionError(ValueError):
    """Raised when a point does not have the target's dimension."""


class DataFormatError(ValueError):
    """Raised by the data loaders on malformed input files."""


class TargetDistribution(ABC):
    """Unnormalized density ``pi`` on ``R^d`` known through ``log pi`` and its gradient."""

    dim: int

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.dim:
            raise DimensionError(
                f"expected points with trailing dimension {self.dim}, got shape {x.shape}"
            )
        return x

    def log_density(self, x):
        """Log-density up to an additive constant."""
        return self._log_density(self._check(x))

    def grad_log_density(self, x):
        """Exact gradient of :meth:`log_density`."""
        return self._grad_log_density(self._check(x))

    def value_and_grad(self, x):
        """Log-density and gradient from one (possibly shared) evaluation."""
        x = self._check(x)
        return self._log_density(x), self._grad_log_density(x)

    @abstractmethod
    def _log_density(self, x): ...

    @abstractmethod
    def _grad_log_density(self, x): ...

    def sample_exact(self, n, rng):
        """Independent draws from the target, where available."""
        raise NotImplementedError(f"{type(self).__name__} has no exact sampler")


def log_density(target: TargetDistribution, x):
    return target.log_density(x)


def grad_log_density(target: TargetDistribution, x):
    return target.grad_log_density(x)


class GaussianTarget(TargetDistribution):
    """Centred Gaussian with precision matrix ``P``: ``log pi(x) = -x.Px/2``."""

    def __init__(self, precision):
        P = np.array(precision, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("precision must be a square matrix")
        if not np.allclose(P, P.T, rtol=0.0, atol=1e-12):
            raise ValueError("precision must be symmetric")
        P = 0.5 * (P + P.T)
        try:
            self._chol = np.linalg.cholesky(P)
        except np.linalg.LinAlgError as err:
            raise ValueError("precision must be positive definite") from err
        self.precision = P
        self.dim = P.shape[0]
        self.precision.setflags(write=False)

    @property
    def covariance(self):
        return np.linalg.inv(self.precision)

    def _log_density(self, x):
        return -0.5 * np.einsum("...i,ij,...j->...", x, self.precision, x)

    def _grad_log_density(self, x):
        return -x @ self.precision

    def sample_exact(self, n, rng):
        # x = L^{-T} z has covariance (L L^T)^{-1} = P^{-1}
        z = rng.standard_normal((n, self.dim))
        return sla.solve_triangular(self._chol, z.T, lower=True, trans="T").T


class WarpedGaussianTarget(TargetDistribution):
    """Banana-shaped density ``exp(-x1^2/100 - (x2 + b x1^2 - 100 b)^2)``."""

    dim = 2

    def __init__(self, b=0.05):
        if not b > 0:
            raise ValueError("warp parameter b must be positive")
        self.b = float(b)

    def _shifted(self, x):
        return x[..., 1] + self.b * x[..., 0] ** 2 - 100.0 * self.b

    def _log_density(self, x):
        return -x[..., 0] ** 2 / 100.0 - self._shifted(x) ** 2

    def _grad_log_density(self, x):
        s = self._shifted(x)
        g = np.empty_like(x)
        g[..., 0] = -x[..., 0] / 50.0 - 4.0 * self.b * x[..., 0] * s
        g[..., 1] = -2.0 * s
        return g

    def sample_exact(self, n, rng):
        x1 = rng.normal(0.0, np.sqrt(50.0), size=n)
        x2 = 100.0 * self.b - self.b * x1**2 + rng.normal(0.0, np.sqrt(0.5), size=n)
        return np.stack([x1, x2], axis=-1)

    def second_moment(self):
        """Closed-form ``E|x|^2``: 50 from x1, plus ``1/2 + 2 b^2 50^2 + (50 b)^2`` from x2.

        ``x2 = 100b - b x1^2 + e`` with ``x1 ~ N(0, 50)``, ``e ~ N(0, 1/2)``, so
        ``E x2 = 50 b`` and ``Var x2 = 1/2 + b^2 Var(x1^2) = 1/2 + 2 b^2 50^2``.
        """
        b = self.b
        return 50.0 + 0.5 + 2.0 * b**2 * 50.0**2 + (50.0 * b) ** 2


class LogisticRegressionTarget(TargetDistribution):
    """Posterior of a Bayesian logistic regression with a centred Gaussian prior.

    Responses are coded in ``{0, 1}`` so the log-likelihood per row is
    ``y_i t.x_i - log(1 + exp(t.x_i))``.
    """

    def __init__(self, design, response, prior_precision=None):
        X = np.array(design, dtype=float)
        y = np.array(response, dtype=float).ravel()
        if X.ndim != 2:
            raise ValueError("design must be a 2-d array")
        if X.shape[0] != y.shape[0]:
            raise ValueError("design and response have different numbers of rows")
        if not np.all(np.isfinite(X)):
            raise ValueError("design contains non-finite entries")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("responses must be 0 or 1")
        self.design, self.response = X, y
        self.dim = X.shape[1]
        if prior_precision is None:
            prior_precision = np.eye(self.dim) / 100.0
        Q = np.atleast_2d(np.array(prior_precision, dtype=float))
        if Q.shape != (self.dim, self.dim):
            raise ValueError("prior precision has the wrong shape")
        self.prior_precision = 0.5 * (Q + Q.T)
        self._Xty = X.T @ y
        for arr in (self.design, self.response, self.prior_precision):
            arr.setflags(write=False)

    def _log_density(self, x):
        eta = x @ self.design.T
        # log(1 + e^eta) without overflow
        softplus = np.logaddexp(0.0, eta)
        loglik = x @ self._Xty - softplus.sum(axis=-1)
        prior = -0.5 * np.einsum("...i,ij,...j->...", x, self.prior_precision, x)
        return loglik + prior

    def _grad_log_density(self, x):
        p = expit(x @ self.design.T)
        return self._Xty - p @ self.design - x @ self.prior_precision


def exponential_covariance(n, sigma2, corr_scale):
    """Covariance of an ``n x n`` lattice field with kernel ``s2 exp(-dist / (n b))``.

    Cells are enumerated row-major; ``dist`` is the Euclidean distance between
    cell indices, so ``dist / n`` is the distance in the unit square.
    """
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    coords = np.stack([ii.ravel(), jj.ravel()], axis=-1).astype(float)
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    return sigma2 * np.exp(-dist / (n * corr_scale))


class LogGaussianCoxTarget(TargetDistribution):
    """Posterior of latent log-intensities of a lattice log-Gaussian Cox process.

    ``log pi(y) = sum_ij [x_ij y_ij - m exp(y_ij)] - (y - mu)^T S^{-1} (y - mu) / 2``
    with ``m = 1/n^2`` the cell area and ``S`` the exponential covariance.

    The default hyperparameters (``sigma2 = 1.91``, ``corr_scale = 1/33``,
    ``mean = log(126) - sigma2/2``) are those of the pine-sapling analyses this
    model is usually paired with. Construction factorizes the ``n^2 x n^2``
    covariance, which costs ``O(n^6)``; ``n = 64`` takes minutes and several GB.
    """

    def __init__(self, counts, sigma2=1.91, corr_scale=1.0 / 33.0, mean=None):
        counts = np.array(counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError("counts must be a square n x n array")
        if np.any(counts < 0) or not np.all(np.equal(np.mod(counts, 1), 0)):
            raise ValueError("counts must be nonnegative integers")
        n = counts.shape[0]
        self.grid_side = n
        self.dim = n * n
        self.counts = counts.astype(float)
        self.total_count = int(counts.sum())
        self.sigma2 = float(sigma2)
        self.corr_scale = float(corr_scale)
        self.mean = float(np.log(126.0) - self.sigma2 / 2.0 if mean is None else mean)
        self.cell_area = 1.0 / self.dim
        cov = exponential_covariance(n, self.sigma2, self.corr_scale)
        try:
            self.prior_chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as err:
            raise ValueError("prior covariance is not positive definite") from err
        eye = np.eye(self.dim)
        linv = sla.solve_triangular(self.prior_chol, eye, lower=True)
        self.prior_precision = linv.T @ linv
        self._x = self.counts.ravel()
        for arr in (self.counts, self.prior_chol, self.prior_precision):
            arr.setflags(write=False)

    def poisson_term(self, y):
        y = self._check(y)
        return y @ self._x - self.cell_area * np.exp(y).sum(axis=-1)

    def prior_term(self, y):
        r = self._check(y) - self.mean
        return -0.5 * np.einsum("...i,ij,...j->...", r, self.prior_precision, r)

    def _log_density(self, y):
        return self.poisson_term(y) + self.prior_term(y)

    def _grad_log_density(self, y):
        return self._x - self.cell_area * np.exp(y) - (y - self.mean) @ self.prior_precision

    def sample_prior(self, n, rng):
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self.prior_chol.T


# --------------------------------------------------------------------------
# Data ingestion


def _read_text(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise DataFormatError(f"{path}: file is empty")
    return text


def _is_number(tok):
    try:
        float(tok)
    except ValueError:
        return False
    return True


def load_pima(path, *, expected_rows=768):
    """Read the Pima diabetes CSV into a standardized design and 0/1 response.

    The file has 8 numeric covariates followed by a binary outcome column; a
    header row is detected and skipped. Covariates are standardized to zero
    mean and unit variance and an intercept column is prepended, giving a
    ``(768, 9)`` design.
    """
    rows = list(csv.reader(io.StringIO(_read_text(path))))
    rows = [r for r in rows if any(tok.strip() for tok in r)]
    if rows and not all(_is_number(tok) for tok in rows[0]):
        rows = rows[1:]
    data = []
    for lineno, row in enumerate(rows, start=1):
        if len(row) != 9:
            raise DataFormatError(f"row {lineno}: expected 9 columns, found {len(row)}")
        try:
            data.append([float(tok) for tok in row])
        except ValueError as err:
            raise DataFormatError(f"row {lineno}: non-numeric value ({err})") from None
    data = np.array(data)
    if expected_rows is not None and data.shape[0] != expected_rows:
        raise DataFormatError(f"expected {expected_rows} data rows, found {data.shape[0]}")
    y = data[:, 8]
    bad = np.flatnonzero((y != 0) & (y != 1))
    if bad.size:
        raise DataFormatError(f"row {bad[0] + 1}: outcome must be 0 or 1")
    return standardize_design(data[:, :8]), y


def standardize_design(covariates):
    Z = np.asarray(covariates, dtype=float)
    sd = Z.std(axis=0)
    sd[sd == 0] = 1.0
    Z = (Z - Z.mean(axis=0)) / sd
    return np.column_stack([np.ones(Z.shape[0]), Z])


# Approximate correlation matrix of the eight Pima covariates (pregnancies,
# glucose, blood pressure, skin fold, insulin, BMI, pedigree, age) and
# logistic coefficients on the standardized scale, intercept first.
_PIMA_CORR = np.array(
    [
        [1.00, 0.13, 0.14, -0.08, -0.07, 0.02, -0.03, 0.54],
        [0.13, 1.00, 0.15, 0.06, 0.33, 0.22, 0.14, 0.26],
        [0.14, 0.15, 1.00, 0.21, 0.09, 0.28, 0.04, 0.24],
        [-0.08, 0.06, 0.21, 1.00, 0.44, 0.39, 0.18, -0.11],
        [-0.07, 0.33, 0.09, 0.44, 1.00, 0.20, 0.19, -0.04],
        [0.02, 0.22, 0.28, 0.39, 0.20, 1.00, 0.14, 0.04],
        [-0.03, 0.14, 0.04, 0.18, 0.19, 0.14, 1.00, 0.03],
        [0.54, 0.26, 0.24, -0.11, -0.04, 0.04, 0.03, 1.00],
    ]
)
_PIMA_COEF = np.array([-0.87, 0.41, 1.13, -0.26, 0.01, -0.14, 0.71, 0.31, 0.18])


def synthetic_pima(seed=0, m=768, n_covariates=8):
    """Synthetic stand-in for the Pima data with the same shape and coding.

    With the default 8 covariates they are Gaussian with roughly the Pima
    correlation structure and the responses follow a logistic model with
    coefficients close to a fit of the real data, so the posterior has a
    comparable size, location and conditioning. Other sizes draw
    independent covariates and random coefficients.
    """
    rng = np.random.default_rng(seed)
    if n_covariates == 8:
        corr, coef = _PIMA_CORR, _PIMA_COEF
    else:
        corr = np.eye(n_covariates)
        coef = np.concatenate([[-0.8], rng.normal(0.0, 0.6, size=n_covariates)])
    raw = rng.standard_normal((m, n_covariates)) @ np.linalg.cholesky(corr).T
    X = standardize_design(raw)
    y = (rng.random(m) < expit(X @ coef)).astype(float)
    return X, y


def load_points(path):
    """Read ``(x, y)`` coordinates, one point per line, comma or whitespace separated."""
    pts = []
    lines = _read_text(path).splitlines()
    for lineno, line in enumerate(lines, start=1):
        toks = line.replace(",", " ").split()
        if not toks:
            continue
        if lineno == 1 and not all(_is_number(t) for t in toks):
            continue
        if len(toks) != 2:
            raise DataFormatError(f"line {lineno}: expected 2 coordinates, found {len(toks)}")
        try:
            px, py = float(toks[0]), float(toks[1])
        except ValueError:
            raise DataFormatError(f"line {lineno}: non-numeric coordinate") from None
        if not (0.0 <= px <= 1.0 and 0.0 <= py <= 1.0):
            raise DataFormatError(f"line {lineno}: coordinates must lie in [0, 1]^2")
        pts.append((px, py))
    if not pts:
        raise DataFormatError("no points found")
    return np.array(pts)


def bin_points(points, n):
    """Counts on an ``n x n`` grid; cell ``(i, j)`` holds ``floor(n x) = i, floor(n y) = j``."""
    idx = np.clip(np.floor(np.asarray(points) * n).astype(int), 0, n - 1)
    counts = np.zeros((n, n), dtype=int)
    np.add.at(counts, (idx[:, 0], idx[:, 1]), 1)
    return counts


def synthetic_pine_points(seed=0, n_points=126):
    """Clustered point pattern on the unit square standing in for the sapling data."""
    rng = np.random.default_rng(seed)
    n_parents = 12
    parents = rng.random((n_parents, 2))
    which = rng.integers(0, n_parents, size=n_points)
    pts = parents[which] + rng.normal(0.0, 0.06, size=(n_points, 2))
    # reflect into the unit square
    pts = np.abs(pts)
    pts = np.where(pts > 1.0, 2.0 - pts, pts)
    return np.clip(pts, 0.0, 1.0)
