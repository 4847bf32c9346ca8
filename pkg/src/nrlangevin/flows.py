"""Divergence-free nonreversible vector fields and the skew matrices behind them.

All three flow kinds have the form ``gamma(x) = beta * w(x) * J grad log pi(x)``
with a scalar weight ``w`` that depends on ``x`` only through ``pi(x)``, which
is what makes ``div(pi gamma) = 0`` for any skew-symmetric ``J``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .targets import DimensionError, GaussianTarget, TargetDistribution

FLOW_KINDS = ("log_grad", "power", "compact")


def make_rotation_2d():
    """The planar rotation generator ``[[0, 1], [-1, 0]]``."""
    return np.array([[0.0, 1.0], [-1.0, 0.0]])


def make_permutation_skew(d, seed):
    """Skew matrix linking consecutive entries of a random permutation.

    With ``s`` a uniformly random permutation of ``0..d-1``, entries
    ``J[s[i], s[i+1]] = 1`` and ``J[s[i+1], s[i]] = -1`` for ``i < d-1``; all
    other entries are zero.
    """
    if d < 2:
        raise ValueError("need d >= 2 for a nonzero skew matrix")
    perm = np.random.default_rng(seed).permutation(d)
    J = np.zeros((d, d))
    J[perm[:-1], perm[1:]] = 1.0
    J[perm[1:], perm[:-1]] = -1.0
    return J


def skew_from(M):
    """``(M - M^T) / 2``, skew-symmetric to the last bit."""
    M = np.asarray(M, dtype=float)
    return 0.5 * (M - M.T)


def smoothstep(t):
    """``6t^5 - 15t^4 + 10t^3`` clamped to [0, 1]; C^2 at both ends."""
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (t * (6.0 * t - 15.0) + 10.0)


def bump(u, lo, hi):
    """C^2 bump in ``u`` supported on ``(lo, hi)``, peaking at 1 in the middle."""
    t = (np.asarray(u, dtype=float) - lo) / (hi - lo)
    return np.where(t < 0.5, smoothstep(2.0 * t), smoothstep(2.0 - 2.0 * t))


@dataclass(frozen=True)
class NonreversibleFlow:
    """Vector field ``gamma`` preserving ``pi``.

    Kinds:
        ``log_grad``: ``beta J grad log pi(x)``.
        ``power``: ``beta J grad pi^alpha(x) = beta alpha pi(x)^alpha J grad log pi(x)``.
        ``compact``: ``beta Psi(pi(x)) J grad log pi(x)`` with ``Psi`` a bump on
        ``(lo, hi)``.

    ``pi`` in the last two kinds is the unnormalized density rescaled by
    ``exp(-log_ref)``, so ``pi(x) = exp(log pi(x) - log_ref)``. The rescaling
    only multiplies ``gamma`` by a constant (absorbed into ``beta``) for the
    power kind and keeps ``pi^alpha`` from overflowing; for the compact kind
    it fixes the units of the bump window.
    """

    target: TargetDistribution
    J: np.ndarray
    beta: float = 1.0
    kind: str = "log_grad"
    alpha: float = 1.0
    bump: tuple = (0.0, 1.0)
    log_ref: float = 0.0
    _Jt: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in FLOW_KINDS:
            raise ValueError(f"unknown flow kind {self.kind!r}; expected one of {FLOW_KINDS}")
        J = np.array(self.J, dtype=float)
        if J.shape != (self.target.dim, self.target.dim):
            raise DimensionError(f"J has shape {J.shape}, target dimension is {self.target.dim}")
        if not np.array_equal(J, -J.T):
            raise ValueError("J must be skew-symmetric")
        J.setflags(write=False)
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "_Jt", J.T.copy())
        if self.kind == "compact" and not self.bump[0] < self.bump[1]:
            raise ValueError("compact flow window needs lo < hi")

    @classmethod
    def referenced_at(cls, target, J, x0, **kwargs):
        """Build a flow whose density scale is set by ``log pi(x0)``."""
        return cls(target, J, log_ref=float(target.log_density(x0)), **kwargs)

    @property
    def dim(self):
        return self.target.dim

    @property
    def is_null(self):
        return self.beta == 0.0

    @property
    def cost(self):
        """(density, gradient) evaluations per call of :meth:`evaluate`."""
        return (0, 1) if self.kind == "log_grad" else (1, 1)

    def weight(self, logp):
        if self.kind == "log_grad":
            return np.ones_like(logp)
        if self.kind == "power":
            return self.alpha * np.exp(self.alpha * (logp - self.log_ref))
        return bump(np.exp(logp - self.log_ref), *self.bump)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionError(f"expected trailing dimension {self.dim}, got {x.shape}")
        if self.is_null:
            return np.zeros_like(x)
        if self.kind == "log_grad":
            g = self.target.grad_log_density(x)
            return self.beta * (g @ self._Jt)
        logp, g = self.target.value_and_grad(x)
        w = self.weight(logp)
        return (self.beta * w)[..., None] * (g @ self._Jt)

    def linear_matrix(self):
        """``G`` with ``gamma(x) = G x`` when the flow is linear, else ``None``."""
        if self.kind == "log_grad" and isinstance(self.target, GaussianTarget):
            return -self.beta * self.J @ self.target.precision
        return None

    def with_beta(self, beta):
        return NonreversibleFlow(
            self.target, self.J, beta, self.kind, self.alpha, self.bump, self.log_ref
        )


@dataclass(frozen=True)
class LinearFlow:
    """Linear vector field ``gamma(z) = beta G z``, e.g. ``G = J A`` for OU drifts."""

    G: np.ndarray
    beta: float = 1.0
    cost = (0, 0)

    def __post_init__(self):
        G = np.array(self.G, dtype=float)
        G.setflags(write=False)
        object.__setattr__(self, "G", G)

    @classmethod
    def from_drift(cls, A, J, beta=1.0):
        return cls(np.asarray(J, dtype=float) @ np.asarray(A, dtype=float), beta)

    @property
    def dim(self):
        return self.G.shape[0]

    @cached_property
    def is_null(self):
        return self.beta == 0.0 or not np.any(self.G)

    def evaluate(self, x):
        return np.asarray(x, dtype=float) @ (self.beta * self.G).T

    def linear_matrix(self):
        return self.beta * self.G

    def with_beta(self, beta):
        return LinearFlow(self.G, beta)


def evaluate(flow, x):
    return flow.evaluate(x)


def check_divergence_free(flow: NonreversibleFlow, points, h=1e-4):
    """Largest ``|div(pi gamma)| / pi`` over ``points`` by central differences.

    Densities are taken relative to ``pi`` at each point, so the residual is
    insensitive to the size of the normalizing constant.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if flow.is_null:
        return 0.0
    target = flow.target
    d = target.dim
    worst = 0.0
    eye = np.eye(d) * h
    for x in pts:
        l0 = target.log_density(x)
        xp, xm = x + eye, x - eye
        wp = np.exp(target.log_density(xp) - l0)
        wm = np.exp(target.log_density(xm) - l0)
        gp = flow.evaluate(xp)[np.arange(d), np.arange(d)]
        gm = flow.evaluate(xm)[np.arange(d), np.arange(d)]
        div = np.sum(wp * gp - wm * gm) / (2.0 * h)
        worst = max(worst, abs(div))
    return worst
