"""One-step integrators for the deterministic flow ``dx/dt = gamma(x)``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

METHODS = ("euler", "rk4", "taylor_p")


class FlowBlowUpError(FloatingPointError):
    """The flow integrator produced a non-finite state.

    Usually a sign that ``beta * dt`` is too large for the stiffness of the
    flow.
    """


@dataclass(frozen=True)
class FlowIntegrator:
    method: str = "rk4"
    p: int = 4
    substeps: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown integrator {self.method!r}; expected one of {METHODS}")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.method == "taylor_p" and self.p < 1:
            raise ValueError("taylor order p must be >= 1")

    @property
    def order(self):
        return {"euler": 1, "rk4": 4}.get(self.method, self.p)

    @property
    def stages(self):
        """Vector-field evaluations per substep."""
        return {"euler": 1, "rk4": 4}.get(self.method, 0)

    def evaluations(self):
        """Vector-field evaluations per call of :func:`flow_step`."""
        return self.stages * self.substeps


def taylor_polynomial(X, p):
    """``sum_{k=0}^p X^k / k!`` by Horner's rule."""
    X = np.asarray(X, dtype=float)
    eye = np.eye(X.shape[0])
    out = eye.copy()
    for k in range(p, 0, -1):
        out = eye + (X @ out) / k
    return out


def taylor_step_linear(G, p, x, dt):
    """Apply the degree-``p`` truncated exponential of ``dt G`` to ``x``."""
    if p < 1:
        raise ValueError("p must be >= 1")
    T = taylor_polynomial(dt * np.asarray(G, dtype=float), p)
    return np.asarray(x, dtype=float) @ T.T


_TAYLOR_CACHE: dict = {}


def _taylor_map(G, h, p, substeps):
    # chains call this every step with the same matrix; keep a few recent maps
    key = (G.tobytes(), G.shape, h, p, substeps)
    T = _TAYLOR_CACHE.get(key)
    if T is None:
        T = np.linalg.matrix_power(taylor_polynomial(h * G, p), substeps)
        if len(_TAYLOR_CACHE) > 64:
            _TAYLOR_CACHE.clear()
        _TAYLOR_CACHE[key] = T
    return T


def _rk4(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def flow_step(integ: FlowIntegrator, flow, x, dt, check_finite=True):
    """Advance ``x`` by time ``dt`` along ``flow`` using ``integ.substeps`` substeps.

    With ``check_finite=False`` non-finite rows are returned as they are, so a
    batch of chains can retire only the rows that blew up.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    if flow.is_null:
        return x.copy()
    h = dt / integ.substeps
    if integ.method == "taylor_p":
        G = flow.linear_matrix()
        if G is None:
            raise ValueError("taylor_p integration needs a linear flow")
        y = x @ _taylor_map(G, h, integ.p, integ.substeps).T
    else:
        y = x
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(integ.substeps):
                if integ.method == "euler":
                    y = y + h * flow.evaluate(y)
                else:
                    y = _rk4(flow.evaluate, y, h)
    if check_finite and not np.all(np.isfinite(y)):
        raise FlowBlowUpError(f"{integ.method} flow step with dt={dt} left the finite range")
    return y


def order_of_accuracy(integ: FlowIntegrator, flow, x0, dts, reference_substeps=64):
    """Empirical local order: slope of log one-step error against log dt.

    The reference solution is RK4 with ``reference_substeps`` substeps (or the
    matrix exponential for linear flows integrated by ``taylor_p``, where the
    heavily-substepped RK4 would itself limit the measurable order).

    Returns:
        (slope, errors). ``slope`` is ``None`` when the error at the largest
        step is already below 1e-13, i.e. the measurement is saturated.
    """
    dts = np.asarray(dts, dtype=float)
    if dts.size < 4 or np.any(np.diff(dts) >= 0):
        raise ValueError("dts must be a decreasing sequence of at least 4 steps")
    x0 = np.asarray(x0, dtype=float)
    ref_integ = FlowIntegrator("rk4", substeps=reference_substeps)
    errors = []
    for dt in dts:
        y = flow_step(integ, flow, x0, dt)
        if integ.method == "taylor_p":
            ref = x0 @ expm(dt * flow.linear_matrix()).T
        else:
            ref = flow_step(ref_integ, flow, x0, dt)
        errors.append(np.linalg.norm(y - ref))
    errors = np.array(errors)
    if errors[0] < 1e-13:
        return None, errors
    slope = np.polyfit(np.log(dts), np.log(errors), 1)[0]
    return float(slope), errors


# Half-length of the stability interval on the imaginary axis.
IMAGINARY_STABILITY = {"euler": 0.0, "rk4": 2.0 * np.sqrt(2.0)}


def flow_jacobian(flow, x, h=1e-6):
    """Jacobian of the vector field at ``x`` by central differences."""
    x = np.asarray(x, dtype=float)
    d = x.size
    E = h * np.eye(d)
    return ((flow.evaluate(x + E) - flow.evaluate(x - E)) / (2.0 * h)).T


def stiffness(flow, x, dt):
    """``dt`` times the spectral radius of the flow Jacobian at ``x``.

    For ``gamma = beta J grad log pi`` with a log-concave target the Jacobian
    ``beta J Hess log pi`` has purely imaginary eigenvalues, so an explicit
    integrator is linearly stable near ``x`` only while this number stays
    inside its imaginary stability interval (``2 sqrt 2`` for RK4; explicit
    Euler has none).
    """
    if flow.is_null:
        return 0.0
    G = flow_jacobian(flow, x)
    return float(dt * np.max(np.abs(np.linalg.eigvals(G))))
