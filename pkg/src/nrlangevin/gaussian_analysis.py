"""Exact bias and variance analysis of splitting schemes for linear SDEs.

The model is the unit-diffusion linear SDE

    dX = -(I - beta J) A X dt + dW,

split into a reversible part ``dX = -A X dt + dW`` (solved exactly, or by the
theta = 1/2 rule) and the linear flow ``dz/dt = beta J A z`` (integrated by a
degree-``p`` Taylor polynomial). One step of either composition is an affine
Gaussian recursion ``X' = B X + f`` with ``E[f f^T] = L``; everything below is
derived from ``(B, L)`` by dense linear algebra.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .kernels import ReversibleKernel
from .ode import taylor_polynomial

REVERSIBLE_MODES = ("exact", "theta_half")
ORDERINGS = ("nonreversible_first", "reversible_first")


class UnstableSchemeError(ArithmeticError):
    """The one-step matrix has spectral radius >= 1."""


class InadmissibleStepError(ArithmeticError):
    """The step is too large for a principal matrix logarithm of ``B`` to exist."""


def _sym(X):
    return 0.5 * (X + X.T)


def solve_lyapunov_continuous(A, Q):
    """Solve ``A X + X A^T = Q``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    lam = np.linalg.eigvals(A)
    gap = np.min(np.abs(lam[:, None] + lam[None, :]))
    if gap < 1e-12 * max(1.0, np.abs(lam).max()):
        raise np.linalg.LinAlgError("A and -A^T share an eigenvalue; Lyapunov equation is singular")
    X = sla.solve_continuous_lyapunov(A, Q)
    return _sym(X) if np.allclose(Q, Q.T) else X


def solve_stein(B, C):
    """Solve the Stein equation ``B X B^T - X = C``."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    lam = np.linalg.eigvals(B)
    gap = np.min(np.abs(1.0 - lam[:, None] * lam[None, :]))
    if gap < 1e-13:
        raise np.linalg.LinAlgError("an eigenvalue product of B equals 1; Stein equation is singular")
    X = sla.solve_discrete_lyapunov(B, -C)
    return _sym(X) if np.allclose(C, C.T) else X


@dataclass(frozen=True)
class LinearModel:
    A: np.ndarray
    J: np.ndarray
    beta: float
    dt: float
    p: int = 1
    reversible_mode: str = "exact"
    ordering: str = "nonreversible_first"

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        J = np.atleast_2d(np.array(self.J, dtype=float))
        if A.shape != J.shape or A.shape[0] != A.shape[1]:
            raise ValueError("A and J must be square matrices of the same size")
        if not np.allclose(J, -J.T, rtol=0, atol=0):
            raise ValueError("J must be skew-symmetric")
        if np.any(np.linalg.eigvals(A).real <= 0):
            raise ValueError("-A must be stable")
        if self.reversible_mode not in REVERSIBLE_MODES:
            raise ValueError(f"reversible_mode must be one of {REVERSIBLE_MODES}")
        if self.ordering not in ORDERINGS:
            raise ValueError(f"ordering must be one of {ORDERINGS}")
        if not self.dt > 0 or self.p < 1:
            raise ValueError("need dt > 0 and p >= 1")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "J", J)

    @classmethod
    def isotropic(cls, alpha, beta, dt, p=1, d=2, **kwargs):
        """``A = alpha I`` with the planar rotation ``J`` (d = 2) or a chain-skew ``J``."""
        if d == 2:
            J = np.array([[0.0, 1.0], [-1.0, 0.0]])
        else:
            J = np.diag(np.ones(d - 1), 1) - np.diag(np.ones(d - 1), -1)
        return cls(alpha * np.eye(d), J, beta, dt, p, **kwargs)

    @property
    def dim(self):
        return self.A.shape[0]

    @property
    def flow_matrix(self):
        """``G = beta J A`` of the nonreversible flow ``dz/dt = G z``."""
        return self.beta * self.J @ self.A

    @property
    def continuous_drift(self):
        """``A_c`` with ``dX = -A_c X dt + dW`` the unsplit SDE."""
        return (np.eye(self.dim) - self.beta * self.J) @ self.A

    def stationary_covariance(self):
        """``Sigma_inf`` solving ``A S + S A^T = I``."""
        return solve_lyapunov_continuous(self.A, np.eye(self.dim))

    def flow_map(self):
        return taylor_polynomial(self.dt * self.flow_matrix, self.p)

    def reversible_map(self):
        """``(R, S)``: one reversible step is ``z -> R z + N(0, S)``."""
        k = ReversibleKernel(
            "exact_ou" if self.reversible_mode == "exact" else "theta_half", A=self.A
        )
        if self.reversible_mode == "exact":
            R, S, _ = k.ou_transition(self.dt)
            return R, S
        M, N = k.theta_matrices(self.dt)
        return M, N @ N.T


@dataclass(frozen=True)
class OneStepAffine:
    B: np.ndarray
    L: np.ndarray


@dataclass(frozen=True)
class ModifiedSDE:
    """``dX = B_tilde X dt + Sigma_tilde^{1/2} dW``, matched exactly at step times."""

    B_tilde: np.ndarray
    Sigma_tilde: np.ndarray

    def stationary_covariance(self):
        """``K`` solving ``B_tilde K + K B_tilde^T = -Sigma_tilde``."""
        return solve_lyapunov_continuous(self.B_tilde, -self.Sigma_tilde)


def one_step_matrices(model: LinearModel) -> OneStepAffine:
    T = model.flow_map()
    R, S = model.reversible_map()
    if model.ordering == "nonreversible_first":
        return OneStepAffine(R @ T, S)
    return OneStepAffine(T @ R, _sym(T @ S @ T.T))


def spectral_radius(B):
    return float(np.max(np.abs(np.linalg.eigvals(B))))


def numerical_invariant_covariance(affine: OneStepAffine):
    """Stationary covariance ``K = B K B^T + L`` of the recursion."""
    if spectral_radius(affine.B) >= 1.0:
        raise UnstableSchemeError("unstable scheme: spectral radius of B is >= 1")
    return solve_stein(affine.B, -affine.L)


def _exp_tail(X, p, max_terms=200):
    """``exp(X) - sum_{k<=p} X^k/k!`` summed from the tail, without cancellation."""
    term = np.linalg.matrix_power(X, p)
    for k in range(1, p + 1):
        term = term / k
    out = np.zeros_like(X)
    for k in range(p + 1, p + 1 + max_terms):
        term = term @ X / k
        out = out + term
        if np.abs(term).max() <= 1e-18 * np.abs(out).max():
            break
    return out


def invariant_covariance_error(model: LinearModel):
    """``K - Sigma_inf`` computed without forming the difference of two O(1) matrices.

    Both reversible solvers keep ``N(0, Sigma_inf)`` exactly and so does the exact
    flow ``exp(dt G)`` when ``G Sigma_inf`` is skew. Writing the Taylor map as
    ``T = F - E`` with ``F = exp(dt G)``, the stationarity defect of
    ``Sigma_inf`` involves only the small remainder ``E``, and ``D = K - Sigma_inf``
    solves ``B D B^T - D = -defect``. This keeps full relative accuracy when
    the bias is far below machine precision relative to ``Sigma_inf``, which
    the high-order convergence study needs.
    """
    S_inf = model.stationary_covariance()
    G = model.dt * model.flow_matrix
    GS = G @ S_inf
    if not np.allclose(GS, -GS.T, rtol=0, atol=1e-13 * max(1.0, np.abs(GS).max())):
        # flow does not preserve Sigma_inf; fall back to the direct difference
        return numerical_invariant_covariance(one_step_matrices(model)) - S_inf
    T = taylor_polynomial(G, model.p)
    E = _exp_tail(G, model.p)
    F = T + E
    flow_defect = -E @ S_inf @ F.T - F @ S_inf @ E.T + E @ S_inf @ E.T
    R, _ = model.reversible_map()
    if model.ordering == "nonreversible_first":
        defect, B = R @ flow_defect @ R.T, R @ T
    else:
        defect, B = flow_defect, T @ R
    if spectral_radius(B) >= 1.0:
        raise UnstableSchemeError("unstable scheme: spectral radius of B is >= 1")
    return solve_stein(B, -_sym(defect))


def principal_logm(B):
    """Real principal matrix logarithm; errors if an eigenvalue lies on ``(-inf, 0]``."""
    lam = np.linalg.eigvals(B)
    tol = 1e-12 * max(1.0, np.abs(lam).max())
    if np.any((np.abs(lam.imag) <= tol) & (lam.real <= 0)):
        raise InadmissibleStepError(
            "B has an eigenvalue on the closed negative real axis; dt too large"
        )
    X = sla.logm(B)
    if np.iscomplexobj(X):
        if np.abs(X.imag).max() > 1e-10 * max(1.0, np.abs(X).max()):
            raise InadmissibleStepError("matrix logarithm is not real")
        X = X.real
    return X


def modified_coefficients(affine: OneStepAffine, dt):
    """Coefficients of the SDE that the recursion solves exactly in law at step times.

    ``B_tilde = log(B) / dt`` and ``Sigma_tilde`` is the diffusion whose
    accumulated noise over one step equals ``L``.
    """
    B, L = affine.B, affine.L
    Bt = principal_logm(B) / dt
    back = sla.expm(dt * Bt)
    if np.linalg.norm(back - B) > 1e-10 * np.linalg.norm(B):
        raise InadmissibleStepError("matrix logarithm round trip failed")
    # L = int_0^dt e^{s Bt} St e^{s Bt^T} ds, solved in vec form; unlike the
    # Stein form this stays well posed as B approaches the identity
    d = B.shape[0]
    K = np.kron(Bt, np.eye(d)) + np.kron(np.eye(d), Bt)
    big = np.zeros((2 * d * d, 2 * d * d))
    big[: d * d, : d * d] = K
    big[: d * d, d * d :] = np.eye(d * d)
    integral = sla.expm(dt * big)[: d * d, d * d :]
    St = np.linalg.solve(integral, L.reshape(-1)).reshape(d, d)
    return ModifiedSDE(Bt, _sym(St))


def _sqrtm_spd(S):
    w, V = np.linalg.eigh(_sym(S))
    if np.any(w <= 0):
        raise np.linalg.LinAlgError("diffusion matrix must be positive definite")
    return (V * np.sqrt(w)) @ V.T, (V / np.sqrt(w)) @ V.T


def asymptotic_variance_quadratic(A, Sigma, M, Lvec=None, form="green_kubo"):
    """Asymptotic variance of time averages of ``f(x) = x.Mx + Lvec.x`` under ``dX = -A X dt + sigma dW``.

    ``Sigma = sigma sigma^T``. With ``Pi`` solving ``A^T Pi + Pi A = M`` and
    ``S`` solving ``A S + S A^T = Sigma``:

    ``form="green_kubo"`` (default) returns ``lim_T T Var[(1/T) int_0^T f]``,

        4 Tr[S Pi S M] + 2 Lvec.A^{-1} S Lvec,

    i.e. twice the integrated autocovariance of ``f``. This is the quantity
    batch means estimate from a simulated chain.

    ``form="trace"`` evaluates the unweighted expression

        2 Tr[Pi Sigma^{1/2} M Sigma^{1/2}] + 2 L_S.A^{-1} S A^{-T} L_S,
        L_S = sqrt(2) Sigma^{-1/2} Lvec,

    which omits the stationary covariance from the quadratic term. It agrees
    with the Green-Kubo value only up to an ``A``-dependent factor (``2 alpha^2``
    for ``A = alpha I``, unit diffusion) and is kept for comparison with
    expansions derived from it.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    M = _sym(np.atleast_2d(np.asarray(M, dtype=float)))
    d = A.shape[0]
    Lvec = np.zeros(d) if Lvec is None else np.asarray(Lvec, dtype=float)
    if np.any(np.linalg.eigvals(A).real <= 0):
        raise UnstableSchemeError("-A must be stable")
    Pi = solve_lyapunov_continuous(A.T, M)
    S = solve_lyapunov_continuous(A, Sigma)
    Ainv = np.linalg.inv(A)
    if form == "green_kubo":
        quad = 4.0 * np.trace(S @ Pi @ S @ M)
        lin = 2.0 * Lvec @ Ainv @ S @ Lvec
    elif form == "trace":
        half, half_inv = _sqrtm_spd(Sigma)
        quad = 2.0 * np.trace(Pi @ half @ M @ half)
        Ls = np.sqrt(2.0) * half_inv @ Lvec
        lin = 2.0 * Ls @ Ainv @ S @ Ainv.T @ Ls
    else:
        raise ValueError(f"unknown form {form!r}")
    return float(quad + lin)


def numerical_asymptotic_variance(model: LinearModel, M, Lvec=None, form="green_kubo"):
    """Asymptotic variance of the splitting chain via its exact modified SDE."""
    mod = modified_coefficients(one_step_matrices(model), model.dt)
    return asymptotic_variance_quadratic(-mod.B_tilde, mod.Sigma_tilde, M, Lvec, form=form)


def discrete_asymptotic_variance(affine: OneStepAffine, dt, M, Lvec=None):
    """``dt * lim_N N Var[(1/N) sum_k f(X_k)]`` of the recursion, summed exactly.

    Independent of the modified-equation route: the autocovariances
    ``Cov(f(X_0), f(X_k))`` of the stationary Gaussian chain are summed in
    closed form through one more Stein equation.
    """
    B, L = affine.B, affine.L
    d = B.shape[0]
    M = _sym(np.atleast_2d(np.asarray(M, dtype=float)))
    Lvec = np.zeros(d) if Lvec is None else np.asarray(Lvec, dtype=float)
    K = numerical_invariant_covariance(affine)
    # W = sum_{k>=0} (B^T)^k M B^k
    W = solve_stein(B.T, -M)
    quad = 2.0 * np.trace(M @ K @ M @ K) + 4.0 * np.trace(M @ K @ (W - M) @ K)
    resolvent = np.linalg.inv(np.eye(d) - B)
    lin = Lvec @ K @ Lvec + 2.0 * Lvec @ (resolvent - np.eye(d)) @ K @ Lvec
    return float(dt * (quad + lin))


def mse_model(bias, asym_var, T):
    """``bias^2 + asym_var / T``."""
    if not T > 0:
        raise ValueError("T must be positive")
    return bias**2 + asym_var / T
