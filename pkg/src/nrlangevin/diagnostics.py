"""Estimators over chain output and reference values for them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ObservableSeries:
    """Values ``f(X_k)`` of one observable along one chain."""

    values: np.ndarray
    dt: float = 1.0
    budget: object = None
    flagged: bool = field(default=False, init=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size < 2:
            raise ValueError("a series needs at least 2 values")
        if not np.all(np.isfinite(v)):
            raise ValueError("series contains non-finite values")
        self.values = v

    @property
    def n(self):
        return self.values.size


def _as_series(s, dt=1.0):
    return s if isinstance(s, ObservableSeries) else ObservableSeries(s, dt)


def ergodic_average(s):
    return float(np.mean(_as_series(s).values))


def autocovariance(x):
    """Biased (divide by N) sample autocovariances at all lags, via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def integrated_autocorrelation(x):
    """``1 + 2 sum_k rho_k`` by Geyer's initial monotone positive sequence.

    Autocovariances are paired as ``Gamma_m = c_{2m} + c_{2m+1}``; the sum stops
    at the first non-positive pair and the pairs are made non-increasing.
    Returns ``nan`` for a constant series.
    """
    c = autocovariance(x)
    if c[0] <= 0:
        return np.nan
    n_pairs = c.size // 2
    gam = c[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    stop = np.flatnonzero(gam <= 0)
    m = stop[0] if stop.size else n_pairs
    gam = np.minimum.accumulate(gam[:m])
    # sum_{k>=-inf} c_k = -c_0 + 2 sum_m Gamma_m
    return float((-c[0] + 2.0 * gam.sum()) / c[0])


def ess(s, min_length=100):
    """Effective sample size ``N / tau`` with ``tau`` from :func:`integrated_autocorrelation`.

    Clipped to ``[1, N]``. A constant series returns ``N`` and sets
    ``s.flagged`` when ``s`` is an :class:`ObservableSeries`.
    """
    series = _as_series(s)
    if series.n < min_length:
        raise ValueError(f"ESS needs at least {min_length} values, got {series.n}")
    v = series.values
    if np.ptp(v) == 0:
        series.flagged = True
        return float(series.n)
    tau = integrated_autocorrelation(v)
    return float(np.clip(series.n / tau, 1.0, series.n))


def batch_means_variance(s, n_batches=50, dt=None):
    """``dt N Var(mean)`` estimated from non-overlapping batch means.

    Uses ``dt * b * var(batch means, ddof=1)`` with batch length ``b``; trailing
    values that do not fill a batch are dropped. The estimator is biased by
    ``O(1/b)`` through the autocorrelation tails cut at batch boundaries.
    """
    series = _as_series(s, 1.0 if dt is None else dt)
    dt = series.dt if dt is None else dt
    n = series.n
    if n_batches < 10 or n_batches > n // 10:
        raise ValueError(f"n_batches must lie in [10, N/10] = [10, {n // 10}]")
    b = n // n_batches
    means = series.values[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return float(dt * b * np.var(means, ddof=1))


def confidence_interval(s, n_batches=50, dt=None, z=1.96):
    """Normal interval ``mean +- z sqrt(sigma^2 / T)`` with batch-means ``sigma^2``."""
    series = _as_series(s, 1.0 if dt is None else dt)
    dt = series.dt if dt is None else dt
    m = ergodic_average(series)
    var = batch_means_variance(series, n_batches, dt)
    half = z * np.sqrt(var / (series.n * dt))
    return m - half, m + half


def mse_over_replicas(results, f_ref, index=0):
    """``(mse, bias^2, variance)`` of replica ergodic averages against ``f_ref``.

    ``results`` holds :class:`~nrlangevin.splitting.ChainResult` objects or plain
    estimates. Invalid chains are excluded. ``variance`` is the biased (divide
    by R) spread, so ``mse = bias^2 + variance`` holds exactly up to rounding.
    """
    est = []
    for r in results:
        if hasattr(r, "ergodic_average"):
            if not r.valid:
                continue
            est.append(r.ergodic_average()[index])
        else:
            est.append(float(r))
    est = np.asarray(est, dtype=float)
    if est.size < 2:
        raise ValueError("need at least 2 valid replicas")
    err = est - f_ref
    mse = float(np.mean(err**2))
    bias2 = float(np.mean(err) ** 2)
    return mse, bias2, mse - bias2


class QuadratureError(ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""


def _gl_rule(order):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def _tensor_integrate(fun, box, nodes, weights):
    (a0, b0), (a1, b1) = box
    h0, h1 = 0.5 * (b0 - a0), 0.5 * (b1 - a1)
    x0 = a0 + h0 * (nodes + 1.0)
    x1 = a1 + h1 * (nodes + 1.0)
    X0, X1 = np.meshgrid(x0, x1, indexing="ij")
    vals = fun(np.stack([X0, X1], axis=-1))
    W = np.outer(weights, weights) * h0 * h1
    return np.tensordot(W, vals, axes=([0, 1], [0, 1]))


def adaptive_integrate_2d(fun, box, tol=1e-10, order=12, max_cells=200000):
    """Adaptive tensor Gauss-Legendre quadrature of a vector-valued ``fun`` over ``box``.

    Each cell is compared against the sum over its four children; cells whose
    difference exceeds their share of ``tol`` (by area) are bisected.

    Returns:
        (integral, estimated absolute error), both arrays of ``fun``'s output shape.
    """
    nodes, weights = _gl_rule(order)
    (a0, b0), (a1, b1) = box
    area = (b0 - a0) * (b1 - a1)
    stack = [((a0, b0), (a1, b1))]
    total = 0.0
    err = 0.0
    cells = 0
    while stack:
        cell = stack.pop()
        cells += 1
        if cells > max_cells:
            raise QuadratureError(f"cell limit reached; achieved error {np.max(err):.3e}")
        (c0, d0), (c1, d1) = cell
        coarse = _tensor_integrate(fun, cell, nodes, weights)
        m0, m1 = 0.5 * (c0 + d0), 0.5 * (c1 + d1)
        kids = [((c0, m0), (c1, m1)), ((m0, d0), (c1, m1)), ((c0, m0), (m1, d1)), ((m0, d0), (m1, d1))]
        fine = sum(_tensor_integrate(fun, k, nodes, weights) for k in kids)
        diff = np.max(np.abs(fine - coarse))
        share = tol * (d0 - c0) * (d1 - c1) / area
        if diff <= share or (d0 - c0) < 1e-9 * (b0 - a0):
            total = total + fine
            err = err + diff
        else:
            stack.extend(kids)
    return total, err


def quadrature_reference(target, f, box=((-60.0, 60.0), (-190.0, 15.0)), tol=1e-6):
    """``E_pi[f]`` for a 2D target by adaptive quadrature of ``f pi / int pi`` over ``box``.

    The density is shifted by its largest value on a coarse grid before
    exponentiation so normalizing constants of any size are safe.

    Raises:
        QuadratureError: the error estimate of the ratio exceeds ``tol``.
    """
    if target.dim != 2:
        raise ValueError("quadrature_reference needs a 2D target")
    g0 = np.linspace(box[0][0], box[0][1], 201)
    g1 = np.linspace(box[1][0], box[1][1], 201)
    G = np.stack(np.meshgrid(g0, g1, indexing="ij"), axis=-1)
    shift = float(np.max(target.log_density(G)))

    def integrand(x):
        w = np.exp(target.log_density(x) - shift)
        fx = np.broadcast_to(np.asarray(f(x), dtype=float), w.shape)
        return np.stack([w, fx * w], axis=-1)

    # relative accuracy on the normalizer, absolute on the ratio
    (z, fz), (ez, efz) = _split(*adaptive_integrate_2d(integrand, box, tol=1e-3 * tol))
    ratio = fz / z
    ratio_err = (efz + abs(ratio) * ez) / z
    if ratio_err > tol:
        raise QuadratureError(f"quadrature error {ratio_err:.3e} exceeds tol {tol:.1e}")
    return float(ratio)


def _split(total, err):
    return (total[0], total[1]), (float(err), float(err))
