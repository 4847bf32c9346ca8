"""Reversible one-step kernels that leave the target invariant.

The Metropolized kernels (``mala``, ``rwmh``, ``mala_barker``) work for any
:class:`~nrlangevin.targets.TargetDistribution`. ``exact_ou`` and
``theta_half`` are specials for linear drifts ``-A x``: the first samples the
Ornstein-Uhlenbeck transition exactly, the second is the implicit midpoint
rule, which keeps the Gaussian invariant law of a linear SDE exactly.

States are cached as :class:`ChainState` so a Metropolized step costs one
log-density and (for the Langevin proposals) one gradient evaluation, both
at the proposal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

KINDS = ("mala", "rwmh", "mala_barker", "exact_ou", "theta_half")
METROPOLIZED = ("mala", "rwmh", "mala_barker")
NOISE_CONVENTIONS = ("unit_diffusion", "sqrt2_diffusion")


class ProposalError(FloatingPointError):
    """A kernel produced a non-finite proposal."""


@dataclass
class ChainState:
    """Position plus cached ``log pi`` and gradient there (batched or not)."""

    x: np.ndarray
    logp: np.ndarray | None = None
    grad: np.ndarray | None = None


@dataclass
class KernelStepRecord:
    proposal: np.ndarray
    accepted: np.ndarray
    log_accept_ratio: np.ndarray
    n_density_evals: int
    n_grad_evals: int


@dataclass
class ReversibleKernel:
    """A pi-invariant one-step kernel.

    Args:
        kind: one of ``mala``, ``rwmh``, ``mala_barker``, ``exact_ou``,
            ``theta_half``.
        target: required for the Metropolized kinds.
        A: drift matrix of ``dX = -A X dt + noise`` for the linear kinds.
        noise: ``unit_diffusion`` (``dW``) or ``sqrt2_diffusion``
            (``sqrt(2) dW``, the Langevin convention).
    """

    kind: str
    target: object = None
    A: np.ndarray | None = None
    noise: str = "unit_diffusion"
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {KINDS}")
        if self.noise not in NOISE_CONVENTIONS:
            raise ValueError(f"unknown noise convention {self.noise!r}")
        if self.kind in METROPOLIZED:
            if self.target is None:
                raise ValueError(f"{self.kind} needs a target")
        else:
            if self.A is None:
                raise ValueError(f"{self.kind} needs a drift matrix A")
            A = np.atleast_2d(np.array(self.A, dtype=float))
            if A.shape[0] != A.shape[1]:
                raise ValueError("A must be square")
            if np.any(np.linalg.eigvals(A).real <= 0):
                raise ValueError("-A must be stable (eigenvalues of A need positive real part)")
            self.A = A

    @property
    def dim(self):
        return self.target.dim if self.A is None else self.A.shape[0]

    @property
    def needs_grad(self):
        return self.kind in ("mala", "mala_barker")

    @property
    def cost(self):
        """(density, gradient) evaluations per step."""
        if self.kind in ("mala", "mala_barker"):
            return 1, 1
        if self.kind == "rwmh":
            return 1, 0
        return 0, 0

    @property
    def diffusion(self):
        return 1.0 if self.noise == "unit_diffusion" else 2.0

    # ------------------------------------------------------------------
    # linear kinds

    def ou_transition(self, dt):
        """``(exp(-A dt), C_dt)`` with ``C_dt = int_0^dt e^{-As} D e^{-A^T s} ds``."""
        key = ("ou", dt)
        if key not in self._cache:
            A, D = self.A, self.diffusion
            d = A.shape[0]
            if np.array_equal(A, A[0, 0] * np.eye(d)):
                a = A[0, 0]
                R = np.exp(-a * dt) * np.eye(d)
                C = D * (-np.expm1(-2.0 * a * dt)) / (2.0 * a) * np.eye(d)
            else:
                # Van Loan: exp([[A, D I], [0, -A^T]] dt) = [[., G], [0, H]] with
                # H = exp(-A^T dt) and C_dt = H^T G.
                blk = np.zeros((2 * d, 2 * d))
                blk[:d, :d] = A
                blk[:d, d:] = D * np.eye(d)
                blk[d:, d:] = -A.T
                E = sla.expm(blk * dt)
                R = E[d:, d:].T
                C = R @ E[:d, d:]
                C = 0.5 * (C + C.T)
            self._cache[key] = (R, C, np.linalg.cholesky(C))
        return self._cache[key]

    def theta_matrices(self, dt):
        """``(M, N)`` with one theta=1/2 step ``x -> M x + N xi``."""
        key = ("theta", dt)
        if key not in self._cache:
            d = self.A.shape[0]
            eye = np.eye(d)
            plus = eye + 0.5 * dt * self.A
            M = np.linalg.solve(plus, eye - 0.5 * dt * self.A)
            N = np.linalg.solve(plus, np.sqrt(self.diffusion * dt) * eye)
            self._cache[key] = (M, N)
        return self._cache[key]

    # ------------------------------------------------------------------

    def init_state(self, x):
        """Evaluate what the kernel needs at ``x``; returns the state and its cost."""
        x = np.array(x, dtype=float)
        if self.kind not in METROPOLIZED:
            return ChainState(x), (0, 0)
        if self.needs_grad:
            logp, grad = self.target.value_and_grad(x)
            return ChainState(x, logp, grad), (1, 1)
        return ChainState(x, self.target.log_density(x)), (1, 0)

    def log_proposal_density(self, y, x, grad_x, dt):
        """Log of the proposal density ``q(y | x)`` up to a constant shared by all pairs."""
        mean = x + dt * grad_x if grad_x is not None else x
        return -np.sum((y - mean) ** 2, axis=-1) / (4.0 * dt)

    def advance(self, state: ChainState, dt, xi, log_u):
        """One step driven by given noise ``xi`` (standard normal) and ``log_u``.

        Returns the new state and the step record. Rows whose proposal is not
        finite are rejected and reported through ``record.proposal``.
        """
        x = state.x
        if self.kind == "exact_ou":
            R, _, chol = self.ou_transition(dt)
            y = x @ R.T + xi @ chol.T
            return self._always(y)
        if self.kind == "theta_half":
            M, N = self.theta_matrices(dt)
            y = x @ M.T + xi @ N.T
            return self._always(y)

        if self.kind == "rwmh":
            y = x + np.sqrt(2.0 * dt) * xi
        else:
            y = x + dt * state.grad + np.sqrt(2.0 * dt) * xi
        finite = np.all(np.isfinite(y), axis=-1)
        y_safe = np.where(finite[..., None], y, x)
        if self.needs_grad:
            logp_y, grad_y = self.target.value_and_grad(y_safe)
            log_r = (
                logp_y
                - state.logp
                + self.log_proposal_density(x, y_safe, grad_y, dt)
                - self.log_proposal_density(y_safe, x, state.grad, dt)
            )
        else:
            logp_y, grad_y = self.target.log_density(y_safe), None
            log_r = logp_y - state.logp
        if self.kind == "mala_barker":
            log_a = -np.logaddexp(0.0, -log_r)
        else:
            log_a = np.minimum(0.0, log_r)
        accept = (log_u < log_a) & finite
        acc_v = accept[..., None]
        new = ChainState(
            np.where(acc_v, y_safe, x),
            np.where(accept, logp_y, state.logp),
            None if grad_y is None else np.where(acc_v, grad_y, state.grad),
        )
        dens, grads = self.cost
        return new, KernelStepRecord(y, accept, log_r, dens, grads)

    def _always(self, y):
        if not np.all(np.isfinite(y)):
            raise ProposalError("linear kernel produced a non-finite state")
        acc = np.ones(y.shape[:-1], dtype=bool)
        return ChainState(y), KernelStepRecord(y, acc, np.zeros(y.shape[:-1]), 0, 0)


def kernel_step(k: ReversibleKernel, x, dt, rng, state: ChainState | None = None):
    """Draw one transition of ``k`` from ``x``.

    ``state`` may carry the cached log-density and gradient at ``x``; when
    omitted they are recomputed (and not counted in the record).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    if state is None:
        state, _ = k.init_state(x)
    xi = rng.standard_normal(x.shape)
    log_u = np.log(rng.random(x.shape[:-1]))
    new, rec = k.advance(state, dt, xi, log_u)
    if not np.all(np.isfinite(rec.proposal)):
        raise ProposalError(f"{k.kind} proposal is not finite")
    return new.x, rec


def detailed_balance_residual(k: ReversibleKernel, x, y, dt):
    """``|log[pi(x) q(y|x) a(x,y)] - log[pi(y) q(x|y) a(y,x)]|`` for a Metropolized kernel."""
    if k.kind not in METROPOLIZED:
        raise ValueError("detailed balance residual needs a Metropolized kernel")
    t = k.target
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    lx, ly = t.log_density(x), t.log_density(y)
    if k.kind == "rwmh":
        qxy = qyx = 0.0
    else:
        gx, gy = t.grad_log_density(x), t.grad_log_density(y)
        qxy = k.log_proposal_density(y, x, gx, dt)  # q(y | x)
        qyx = k.log_proposal_density(x, y, gy, dt)  # q(x | y)
    log_r_xy = (ly + qyx) - (lx + qxy)
    log_r_yx = (lx + qxy) - (ly + qyx)
    if k.kind == "mala_barker":
        la_xy = -np.logaddexp(0.0, -log_r_xy)
        la_yx = -np.logaddexp(0.0, -log_r_yx)
    else:
        la_xy = np.minimum(0.0, log_r_xy)
        la_yx = np.minimum(0.0, log_r_yx)
    return np.abs((lx + qxy + la_xy) - (ly + qyx + la_yx))
