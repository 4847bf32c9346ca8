"""Lie-Trotter composition of a reversible kernel and a nonreversible flow.

One step is ``Theta o Phi`` (flow first, the default) or ``Phi o Theta``
(kernel first). Chains are run in batches: ``R`` independent chains advance
in lockstep as rows of an ``(R, d)`` array, each driven by its own random
streams, so a batch reproduces single-chain runs bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .kernels import METROPOLIZED, ChainState, KernelStepRecord, ReversibleKernel
from .ode import FlowIntegrator, flow_step

ORDERINGS = ("nonreversible_first", "reversible_first")


@dataclass(frozen=True)
class SplittingConfig:
    """Sampler definition.

    Args:
        dt: step size shared by kernel and flow.
        kernel: the pi-invariant reversible step.
        flow: a ``NonreversibleFlow`` or ``LinearFlow``; ``None`` means no flow.
        beta: flow strength. When given it overrides the flow's own ``beta``.
        integrator: ODE scheme for the flow.
        ordering: ``nonreversible_first`` (flow, then kernel) or
            ``reversible_first``.
    """

    dt: float
    kernel: ReversibleKernel
    flow: object = None
    beta: float | None = None
    integrator: FlowIntegrator = field(default_factory=FlowIntegrator)
    ordering: str = "nonreversible_first"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.ordering not in ORDERINGS:
            raise ValueError(f"ordering must be one of {ORDERINGS}")
        if self.flow is not None and self.beta is not None:
            object.__setattr__(self, "flow", self.flow.with_beta(self.beta))
        if self.flow is not None:
            object.__setattr__(self, "beta", float(self.flow.beta))
        else:
            object.__setattr__(self, "beta", 0.0)

    @property
    def has_flow(self):
        return self.flow is not None and not self.flow.is_null

    @property
    def flow_cost(self):
        """(density, gradient) evaluations of one flow step."""
        if not self.has_flow or self.integrator.method == "taylor_p":
            return 0, 0
        n = self.integrator.evaluations()
        dens, grad = self.flow.cost
        return n * dens, n * grad

    @property
    def step_cost(self):
        """(density, gradient) evaluations of one composed step.

        A Metropolized kernel needs ``log pi`` (and the gradient, for Langevin
        proposals) at the point it starts from. The flow moves the chain to a
        point where neither is known, so with an active flow each step pays
        one extra evaluation there on top of the kernel's own.
        """
        kd, kg = self.kernel.cost
        fd, fg = self.flow_cost
        if self.has_flow and self.kernel.kind in METROPOLIZED:
            rd, rg = 1, int(self.kernel.needs_grad)
        else:
            rd = rg = 0
        return kd + fd + rd, kg + fg + rg

    def with_beta(self, beta):
        return replace(self, beta=beta)


@dataclass
class Budget:
    density: int = 0
    gradient: int = 0
    init_density: int = 0
    init_gradient: int = 0


@dataclass
class ChainResult:
    """Output of one chain.

    ``sums`` and ``sumsq`` hold per-observable first and second moments of the
    values ``f(X_k)``, ``k = 0..n_steps-1`` (after ``burn_in``). ``trace`` keeps
    those values and ``samples`` the states when storage was requested.
    """

    seed: int
    dt: float
    n_steps: int
    sums: np.ndarray
    sumsq: np.ndarray
    n_recorded: int
    accepted_count: int
    budget: Budget
    valid: bool = True
    trace: np.ndarray | None = None
    samples: np.ndarray | None = None
    final: np.ndarray | None = None

    def ergodic_average(self):
        return self.sums / self.n_recorded

    @property
    def acceptance_rate(self):
        return self.accepted_count / max(self.n_steps, 1)

    @property
    def time(self):
        """Trajectory length ``T = N dt``."""
        return self.n_recorded * self.dt


def recommend_beta(epsilon, dt, r):
    """Largest flow strength suggested by the bias/step-size heuristic.

    With ``beta ~ dt^-kappa`` the bias of an order-``r`` flow integrator scales
    like ``dt^(r - kappa (r + 1))``; asking it to stay below ``epsilon`` gives
    ``kappa = -(1/(r+1)) log(epsilon)/log(dt) + r/(r+1)``. This is a heuristic,
    not a guarantee.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not 0 < dt < 1:
        raise ValueError("recommend_beta needs 0 < dt < 1 (log dt must be negative)")
    kappa = -np.log(epsilon) / ((r + 1) * np.log(dt)) + r / (r + 1)
    return float(dt ** (-kappa))


def steps_for_budget(cfg: SplittingConfig, budget):
    """Largest ``n`` whose density-evaluation cost ``n * step_cost`` fits in ``budget``."""
    dens, _ = cfg.step_cost
    if dens == 0:
        raise ValueError("sampler uses no density evaluations; budget is not defined")
    n = int(budget) // dens
    if n < 1:
        raise ValueError(f"budget {budget} is smaller than one step ({dens} evaluations)")
    return n


class _Streams:
    """Per-chain normal and uniform generators, drawn in blocks."""

    def __init__(self, seeds, d, block=256):
        self.gens = []
        for s in seeds:
            n_ss, u_ss = np.random.SeedSequence(int(s)).spawn(2)
            self.gens.append((np.random.default_rng(n_ss), np.random.default_rng(u_ss)))
        self.d, self.block = d, block
        self._pos = block

    def next(self):
        if self._pos == self.block:
            b = self.block
            self._xi = np.stack([g.standard_normal((b, self.d)) for g, _ in self.gens], axis=1)
            self._u = np.stack([u.random(b) for _, u in self.gens], axis=1)
            self._pos = 0
        i = self._pos
        self._pos += 1
        return self._xi[i], self._u[i]


def _evaluate_state(kernel, x):
    if kernel.kind not in METROPOLIZED:
        return ChainState(x)
    with np.errstate(over="ignore", invalid="ignore"):
        if kernel.needs_grad:
            logp, grad = kernel.target.value_and_grad(x)
            return ChainState(x, logp, grad)
        return ChainState(x, kernel.target.log_density(x))


def _state_ok(state):
    ok = np.all(np.isfinite(state.x), axis=-1)
    if state.logp is not None:
        ok &= np.isfinite(state.logp)
    if state.grad is not None:
        ok &= np.all(np.isfinite(state.grad), axis=-1)
    return ok


def _composed_step(cfg: SplittingConfig, state: ChainState, xi, u):
    """One batched step; returns the new state and the kernel record."""
    k = cfg.kernel
    log_u = np.log(u)
    if not cfg.has_flow:
        return k.advance(state, cfg.dt, xi, log_u)
    if cfg.ordering == "nonreversible_first":
        z = flow_step(cfg.integrator, cfg.flow, state.x, cfg.dt, check_finite=False)
        return k.advance(_evaluate_state(k, z), cfg.dt, xi, log_u)
    new, rec = k.advance(state, cfg.dt, xi, log_u)
    z = flow_step(cfg.integrator, cfg.flow, new.x, cfg.dt, check_finite=False)
    return _evaluate_state(k, z), rec


def lie_trotter_step(cfg: SplittingConfig, x, rng, state: ChainState | None = None):
    """One composed step from ``x`` using generator ``rng``.

    Returns ``(y, record)`` where the record's evaluation counts cover the
    whole composition (flow stages plus kernel).

    Raises:
        FlowBlowUpError: the flow left the finite range.
    """
    from .ode import FlowBlowUpError

    x = np.asarray(x, dtype=float)
    if state is None:
        state = _evaluate_state(cfg.kernel, x)
    xi = rng.standard_normal(x.shape)
    u = rng.random(x.shape[:-1])
    new, rec = _composed_step(cfg, state, xi, u)
    if not np.all(np.isfinite(new.x)):
        raise FlowBlowUpError(f"splitting step with dt={cfg.dt}, beta={cfg.beta} blew up")
    dens, grad = cfg.step_cost
    return new.x, KernelStepRecord(rec.proposal, rec.accepted, rec.log_accept_ratio, dens, grad)


def run_ensemble(
    cfg: SplittingConfig,
    x0,
    n_steps,
    observables=(),
    seeds=(0,),
    *,
    burn_in=0,
    store_trace=False,
    store_samples=False,
    block=256,
):
    """Run ``len(seeds)`` independent chains of ``n_steps`` steps.

    Args:
        x0: start, shape ``(d,)`` (shared) or ``(R, d)``.
        observables: functions mapping a batch ``(R, d)`` to ``(R,)``.
        seeds: one integer per chain; chain ``i`` depends only on ``seeds[i]``
            and ``x0[i]``.
        burn_in: leading observations left out of the accumulators (the
            estimator itself has none; this exists for the experiment harness).

    Returns:
        list of :class:`ChainResult`. A chain that blows up is frozen at its
        last finite state, its counters stop, and it is flagged ``valid=False``.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    seeds = [int(s) for s in np.atleast_1d(seeds)]
    R = len(seeds)
    k = cfg.kernel
    d = k.dim
    x0 = np.asarray(x0, dtype=float)
    x = np.broadcast_to(x0, (R, d)).copy()
    obs = list(observables)
    n_obs = len(obs)
    streams = _Streams(seeds, d, block)

    state = _evaluate_state(k, x)
    init_cost = (1, int(k.needs_grad)) if k.kind in METROPOLIZED else (0, 0)
    alive = _state_ok(state)
    if not np.all(alive):
        raise ValueError("log-density or gradient is not finite at the initial point")

    all_alive = True
    sums = np.zeros((R, n_obs))
    sumsq = np.zeros((R, n_obs))
    steps_done = np.zeros(R, dtype=np.int64)
    recorded = np.zeros(R, dtype=np.int64)
    accepted = np.zeros(R, dtype=np.int64)
    trace = np.empty((n_steps, R, n_obs)) if store_trace else None
    samples = np.empty((n_steps, R, d)) if store_samples else None

    for n in range(n_steps):
        # observables at X_n, n = 0..N-1
        if n_obs:
            vals = np.empty((R, n_obs))
            for j, f in enumerate(obs):
                vals[:, j] = f(state.x)
            if trace is not None:
                trace[n] = vals
            if n >= burn_in:
                if all_alive:
                    sums += vals
                    sumsq += vals * vals
                else:
                    live = alive[:, None]
                    with np.errstate(over="ignore", invalid="ignore"):
                        sums += np.where(live, vals, 0.0)
                        sumsq += np.where(live, vals * vals, 0.0)
                recorded += alive
        elif n >= burn_in:
            recorded += alive
        if samples is not None:
            samples[n] = state.x

        xi, u = streams.next()
        with np.errstate(over="ignore", invalid="ignore"):
            new, rec = _composed_step(cfg, state, xi, u)
        ok = _state_ok(new) & alive
        accepted += rec.accepted & ok
        steps_done += ok
        alive = ok
        all_alive = bool(ok.all())
        if all_alive:
            state = new
        else:
            keep = ok[:, None]
            state = ChainState(
                np.where(keep, new.x, state.x),
                None if new.logp is None else np.where(ok, new.logp, state.logp),
                None if new.grad is None else np.where(keep, new.grad, state.grad),
            )

    dens, grad = cfg.step_cost
    results = []
    for i, s in enumerate(seeds):
        ns = int(steps_done[i])
        results.append(
            ChainResult(
                seed=s,
                dt=cfg.dt,
                n_steps=ns,
                sums=sums[i].copy(),
                sumsq=sumsq[i].copy(),
                n_recorded=int(recorded[i]),
                accepted_count=int(accepted[i]),
                budget=Budget(dens * ns, grad * ns, *init_cost),
                valid=bool(alive[i]),
                trace=None if trace is None else trace[:, i].copy(),
                samples=None if samples is None else samples[:, i].copy(),
                final=state.x[i].copy(),
            )
        )
    return results


def run_chain(cfg: SplittingConfig, x0, n_steps, observables=(), seed=0, **kwargs):
    """Single-chain :func:`run_ensemble`; ``observables`` take a batch of one point."""
    return run_ensemble(cfg, np.asarray(x0, dtype=float), n_steps, observables, [seed], **kwargs)[0]
