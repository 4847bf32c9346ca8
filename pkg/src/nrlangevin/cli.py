"""Command-line harness: ``nrlangevin <subcommand> --config <file>``.

Subcommands
    gaussian_analysis   exact bias/variance tables for the linear Gaussian model
    experiment          sampler sweeps (warped, logistic, cox, sample)
    ingest              validate a data file and write the parsed dataset

Every table is an RFC 4180 CSV whose rows carry the SHA-256 of the resolved
configuration; ``config.json`` next to it holds that configuration and
``summary.json`` repeats it together with the headline numbers.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import sys
import warnings
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
from scipy.optimize import minimize

from . import __version__
from .diagnostics import QuadratureError, confidence_interval, ess, mse_over_replicas, quadrature_reference
from .flows import NonreversibleFlow, make_permutation_skew, make_rotation_2d
from .gaussian_analysis import (
    InadmissibleStepError,
    LinearModel,
    UnstableSchemeError,
    invariant_covariance_error,
    mse_model,
    numerical_asymptotic_variance,
    numerical_invariant_covariance,
    one_step_matrices,
)
from .kernels import ReversibleKernel
from .ode import IMAGINARY_STABILITY, FlowBlowUpError, FlowIntegrator, stiffness
from .splitting import SplittingConfig, recommend_beta, run_ensemble, steps_for_budget
from .targets import (
    DataFormatError,
    LogGaussianCoxTarget,
    LogisticRegressionTarget,
    WarpedGaussianTarget,
    bin_points,
    load_pima,
    load_points,
    synthetic_pima,
    synthetic_pine_points,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# Seeds of replica r at grid point g are base + SEED_STRIDE * g + r.
SEED_STRIDE = 10_000

_COMMON = {
    "seed": 0,
    "replicas": 20,
    "budget": 3500,
    "sampler": {
        "kernels": ["mala"],
        "integrator": "rk4",
        "substeps": 1,
        "ordering": "nonreversible_first",
        "flow_kind": "log_grad",
    },
    "output": {"trajectories": False, "per_point_files": False},
}

DEFAULTS = {
    "gaussian_analysis": {
        "sweep": {"dt": list(np.round(np.logspace(-2, 0, 9), 6)), "beta": [0.0, 1.0, 2.0, 4.0, 8.0]},
        "gaussian": {
            "alpha": 1.0,
            "p": [1, 2],
            "modes": ["exact", "theta_half"],
            "orderings": ["nonreversible_first", "reversible_first"],
            "horizon": 1000.0,
        },
    },
    "warped": {
        "replicas": 200,
        "sweep": {"dt": [0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 0.8], "beta": [0.0, 5.0, 10.0, 25.0, 50.0]},
        "start": "stationary",
    },
    "sample": {
        "replicas": 1,
        "budget": 3200,
        "sweep": {"pairs": [[0.1, 0.0], [0.1, 25.0]]},
        "start": [15.0, 2.0],
        "output": {"trajectories": True},
    },
    "logistic": {
        "sweep": {"dt": [0.002, 0.003, 0.005, 0.007, 0.01], "beta": [0.0, 1.0, 2.0, 3.0, 5.0]},
        "data": {"kind": "pima", "path": None},
        "start": "laplace",
        "j_seeds": [0],
        "reference": {"budget": 1_000_000, "dt": 0.01, "chains": 20},
    },
    "cox": {
        "replicas": 5,
        "sweep": {"dt": [0.01, 0.02, 0.04, 0.07, 0.1], "beta_rule": "recommend"},
        "data": {"kind": "pine", "path": None, "expected_points": None},
        "start": "warmup",
        "warmup_steps": 4000,
        "grid_side": 16,
        "allow_large_grid": False,
        "j_seeds": list(range(10)),
    },
}


class ConfigError(ValueError):
    """The configuration file is unreadable or violates the schema."""


class NumericalFailure(ArithmeticError):
    """An experiment produced no usable result."""


# --------------------------------------------------------------------------
# configuration


def _schema():
    text = resources.files("nrlangevin").joinpath("schema/config.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _merge(base, over):
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def resolve_config(raw, seed=None):
    """Validate ``raw`` against the schema and fill in per-experiment defaults."""
    try:
        jsonschema.validate(raw, _schema())
    except jsonschema.ValidationError as err:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {err.message}") from None
    cfg = _merge(_merge(_COMMON, DEFAULTS[raw["experiment"]]), raw)
    if seed is not None:
        cfg["seed"] = int(seed)
    sweep = cfg.get("sweep", {})
    if "pairs" not in sweep and "dt" not in sweep:
        raise ConfigError("sweep needs either 'pairs' or 'dt'")
    if cfg["experiment"] == "cox" and cfg["grid_side"] > 16 and not cfg["allow_large_grid"]:
        raise ConfigError("grid_side > 16 needs allow_large_grid: true (the covariance factorization is O(n^6))")
    return cfg


def load_config(path, seed=None):
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from None
    return resolve_config(raw, seed)


def config_digest(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def sweep_points(cfg, dt_to_beta=None):
    """``(dt, beta)`` grid points in a fixed order."""
    sweep = cfg["sweep"]
    if "pairs" in sweep:
        return [(float(a), float(b)) for a, b in sweep["pairs"]]
    if sweep.get("beta_rule") == "recommend":
        rule = dt_to_beta or (lambda dt: recommend_beta(dt, dt, 4))
        return [(float(dt), float(rule(dt))) for dt in sweep["dt"]]
    return [(float(dt), float(b)) for b in sweep.get("beta", [0.0]) for dt in sweep["dt"]]


def replica_seeds(base, point_index, replicas):
    start = int(base) + SEED_STRIDE * int(point_index)
    return list(range(start, start + int(replicas)))


# --------------------------------------------------------------------------
# output


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, rows, digest):
    """Write dict rows as CSV (CRLF line ends) with a trailing config digest column."""
    if not rows:
        raise NumericalFailure("experiment produced no rows")
    header = list(rows[0]) + ["config_sha256"]
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in header[:-1]] + [digest])


def write_json(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o).__name__)


# --------------------------------------------------------------------------
# Gaussian analysis


def gaussian_rows(cfg):
    g = cfg["gaussian"]
    alpha = float(g["alpha"])
    M = np.diag([1.0, 0.0])  # observable x_1^2
    rows = []
    for mode in g["modes"]:
        for ordering in g["orderings"]:
            for p in g["p"]:
                for dt, beta in sweep_points(cfg):
                    row = {"alpha": alpha, "beta": beta, "dt": dt, "p": p, "mode": mode, "ordering": ordering}
                    m = LinearModel.isotropic(alpha, beta, dt, p, reversible_mode=mode, ordering=ordering)
                    try:
                        D = invariant_covariance_error(m)
                        K = numerical_invariant_covariance(one_step_matrices(m))
                        var = numerical_asymptotic_variance(m, M)
                        row.update(
                            bias_norm=float(np.linalg.norm(D, 2)),
                            K11=float(K[0, 0]),
                            asym_var=var,
                            mse=mse_model(D[0, 0], var, g["horizon"]),
                            flag="",
                        )
                    except (UnstableSchemeError, InadmissibleStepError, np.linalg.LinAlgError) as err:
                        row.update(bias_norm=np.nan, K11=np.nan, asym_var=np.nan, mse=np.nan, flag=type(err).__name__)
                    rows.append(row)
    return rows


# --------------------------------------------------------------------------
# sampler harness shared by the experiments


def make_config(cfg, kernel, flow, dt, beta):
    s = cfg["sampler"]
    return SplittingConfig(
        dt,
        kernel,
        flow,
        beta=beta,
        integrator=FlowIntegrator(s["integrator"], substeps=s["substeps"]),
        ordering=s["ordering"],
    )


def warped_point(cfg, kind, dt, beta, seeds, x0, target=None, f_ref=69.25):
    """MSE of the ``|x|^2`` estimate over replicas at one grid point."""
    w = target or WarpedGaussianTarget(0.05)
    k = ReversibleKernel(kind, w)
    flow = NonreversibleFlow(w, make_rotation_2d(), 1.0, kind=cfg["sampler"]["flow_kind"])
    sc = make_config(cfg, k, flow, dt, beta)
    n = steps_for_budget(sc, cfg["budget"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = run_ensemble(sc, x0, n, [lambda x: (x**2).sum(axis=-1)], seeds=seeds)
    n_valid = sum(r.valid for r in res)
    row = {
        "kernel": kind,
        "dt": dt,
        "beta": beta,
        "n_steps": n,
        "density_evals": res[0].budget.density if n_valid == len(res) else max(r.budget.density for r in res),
        "gradient_evals": max(r.budget.gradient for r in res),
        "n_valid": n_valid,
        "acceptance": float(np.mean([r.acceptance_rate for r in res])),
    }
    if n_valid >= 2:
        mse, b2, var = mse_over_replicas(res, f_ref)
    else:
        mse = b2 = var = np.nan
    row.update(mse=mse, bias2=b2, variance=var)
    return row


def warped_rows(cfg):
    w = WarpedGaussianTarget(0.05)
    f_ref = quadrature_reference(w, lambda x: (x**2).sum(axis=-1))
    rows = []
    for kind in cfg["sampler"]["kernels"]:
        for g, (dt, beta) in enumerate(sweep_points(cfg)):
            seeds = replica_seeds(cfg["seed"], g, cfg["replicas"])
            x0 = _warped_start(cfg, w, seeds)
            row = warped_point(cfg, kind, dt, beta, seeds, x0, w, f_ref)
            row["f_ref"] = f_ref
            rows.append(row)
    return rows


def _warped_start(cfg, w, seeds):
    if cfg["start"] == "stationary":
        return w.sample_exact(len(seeds), np.random.default_rng(seeds[0] + 7919))
    if isinstance(cfg["start"], list):
        x0 = np.asarray(cfg["start"], dtype=float)
        if x0.shape != (2,):
            raise ConfigError("start must have 2 coordinates for the warped target")
        return x0
    raise ConfigError(f"start {cfg['start']!r} is not available for the warped target")


def sample_trajectories(cfg):
    """Single trajectories on the warped target, one per grid point and kernel."""
    w = WarpedGaussianTarget(0.05)
    out = {}
    for kind in cfg["sampler"]["kernels"]:
        for g, (dt, beta) in enumerate(sweep_points(cfg)):
            seeds = replica_seeds(cfg["seed"], g, cfg["replicas"])
            k = ReversibleKernel(kind, w)
            flow = NonreversibleFlow(w, make_rotation_2d(), 1.0, kind=cfg["sampler"]["flow_kind"])
            sc = make_config(cfg, k, flow, dt, beta)
            n = steps_for_budget(sc, cfg["budget"])
            res = run_ensemble(sc, _warped_start(cfg, w, seeds), n, seeds=seeds, store_samples=True)
            out[(kind, dt, beta)] = res
    return out


# logistic regression


def logistic_target(cfg):
    data = cfg["data"]
    if data.get("path"):
        X, y = load_pima(data["path"])
    else:
        X, y = synthetic_pima(0)
    return LogisticRegressionTarget(X, y)


def laplace_approximation(target):
    """Posterior mode and inverse Hessian there."""
    opt = minimize(
        lambda th: -float(target.log_density(th)),
        np.zeros(target.dim),
        jac=lambda th: -target.grad_log_density(th),
        method="BFGS",
        options={"gtol": 1e-10},
    )
    mode = opt.x
    X = target.design
    p = 1.0 / (1.0 + np.exp(-X @ mode))
    H = X.T @ (X * (p * (1 - p))[:, None]) + target.prior_precision
    return mode, np.linalg.inv(H)


def laplace_starts(target, n, seed):
    mode, cov = laplace_approximation(target)
    z = np.random.default_rng(seed).standard_normal((n, target.dim))
    return mode + z @ np.linalg.cholesky(cov).T


def coefficient_observables(d):
    return [(lambda i: (lambda x: x[..., i]))(i) for i in range(d)]


def logistic_reference(target, dt, budget, chains, seed, x0):
    """Posterior means from a MALA run using ``budget`` density evaluations in total."""
    k = ReversibleKernel("mala", target)
    sc = SplittingConfig(dt, k)
    n = steps_for_budget(sc, budget) // chains
    res = run_ensemble(sc, x0, n, coefficient_observables(target.dim), seeds=range(seed, seed + chains), burn_in=n // 10)
    if not all(r.valid for r in res):
        raise NumericalFailure("reference run blew up")
    return np.mean([r.ergodic_average() for r in res], axis=0)


def flow_stiffness(flow, x, dt, beta):
    return stiffness(flow.with_beta(beta), x, dt)


def logistic_point(cfg, target, flow, dt, beta, seeds, x0, ref=None, n_batches=25):
    """Per-coefficient means, ESS and (if ``ref`` is given) CI coverage at one grid point."""
    k = ReversibleKernel("mala", target)
    sc = make_config(cfg, k, flow, dt, beta)
    n = steps_for_budget(sc, cfg["budget"])
    d = target.dim
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = run_ensemble(sc, x0, n, coefficient_observables(d), seeds=seeds, store_trace=True)
    valid = [r for r in res if r.valid]
    out = {"dt": dt, "beta": beta, "n_steps": n, "n_valid": len(valid), "acceptance": float(np.mean([r.acceptance_rate for r in res]))}
    if not valid:
        return out
    E = np.array([[ess(r.trace[:, i]) for i in range(d)] for r in valid])
    means = np.array([r.ergodic_average() for r in valid])
    out["ess"] = E.mean(axis=0)
    out["median_ess"] = float(np.median(out["ess"]))
    out["mean"] = means.mean(axis=0)
    out["between_sd"] = means.std(axis=0, ddof=1) if len(valid) > 1 else np.full(d, np.nan)
    if ref is not None:
        cover = np.zeros(d)
        for r in valid:
            for i in range(d):
                lo, hi = confidence_interval(r.trace[:, i], n_batches, dt)
                cover[i] += lo <= ref[i] <= hi
        out["coverage"] = cover / len(valid)
    return out


def logistic_rows(cfg):
    target = logistic_target(cfg)
    mode, _ = laplace_approximation(target)
    x0 = laplace_starts(target, cfg["replicas"], cfg["seed"] + 1)
    ref = None
    if cfg.get("reference"):
        r = cfg["reference"]
        ref = logistic_reference(target, r["dt"], r["budget"], r["chains"], cfg["seed"] + 5_000_000, laplace_starts(target, r["chains"], cfg["seed"] + 2))
    rows = []
    limit = IMAGINARY_STABILITY[cfg["sampler"]["integrator"]]
    for js in cfg["j_seeds"]:
        flow = NonreversibleFlow(target, make_permutation_skew(target.dim, js), 1.0, kind=cfg["sampler"]["flow_kind"])
        for g, (dt, beta) in enumerate(sweep_points(cfg)):
            s = flow_stiffness(flow, mode, dt, beta)
            pt = logistic_point(cfg, target, flow, dt, beta, replica_seeds(cfg["seed"], g, cfg["replicas"]), x0, ref)
            for i in range(target.dim):
                rows.append(
                    {
                        "j_seed": js,
                        "dt": dt,
                        "beta": beta,
                        "stiffness": s,
                        "stiff": bool(beta != 0 and s > limit),
                        "coefficient": i,
                        "mean": pt["mean"][i] if "mean" in pt else np.nan,
                        "between_sd": pt["between_sd"][i] if "mean" in pt else np.nan,
                        "reference": np.nan if ref is None else ref[i],
                        "coverage": pt["coverage"][i] if "coverage" in pt else np.nan,
                        "ess": pt["ess"][i] if "ess" in pt else np.nan,
                        "n_valid": pt["n_valid"],
                        "acceptance": pt["acceptance"],
                    }
                )
    return rows


# log-Gaussian Cox process


def cox_target(cfg):
    data = cfg["data"]
    if data.get("path"):
        pts = load_points(data["path"])
        if data.get("expected_points") and len(pts) != data["expected_points"]:
            raise DataFormatError(f"expected {data['expected_points']} points, found {len(pts)}")
    else:
        pts = synthetic_pine_points(0)
    n = cfg["grid_side"]
    if n > 16:
        warnings.warn(f"building a {n}x{n} Cox target factorizes a {n * n}-square covariance; this is slow", stacklevel=2)
    return LogGaussianCoxTarget(bin_points(pts, n))


def cox_warmup(target, n, steps, seed, dt=0.01):
    """Approximately stationary starts from a MALA run begun at the prior mean."""
    x = np.full((n, target.dim), target.mean)
    if steps == 0:
        return x
    res = run_ensemble(SplittingConfig(dt, ReversibleKernel("mala", target)), x, steps, seeds=range(seed, seed + n))
    return np.array([r.final for r in res])


def cox_point(cfg, target, flow, dt, beta, seeds, x0):
    """Per-cell ESS averaged over replicas; ``None`` if any chain blew up."""
    k = ReversibleKernel("mala", target)
    sc = make_config(cfg, k, flow, dt, beta)
    n = steps_for_budget(sc, cfg["budget"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = run_ensemble(sc, x0, n, seeds=seeds, store_samples=True)
    n_valid = sum(r.valid for r in res)
    if n_valid < len(res):
        return None, n_valid, res
    E = np.array([[ess(r.samples[:, i]) for i in range(target.dim)] for r in res]).mean(axis=0)
    return E, n_valid, res


def cox_rows(cfg):
    target = cox_target(cfg)
    R = cfg["replicas"]
    x0 = cox_warmup(target, R, cfg["warmup_steps"], cfg["seed"] + 9_000_000)
    rows = []
    points = sweep_points(cfg)
    for g, (dt, _) in enumerate(points):
        E, nv, _ = cox_point(cfg, target, None, dt, 0.0, replica_seeds(cfg["seed"], g, R), x0)
        rows.append(_cox_row(None, dt, 0.0, E, nv, R))
    for js in cfg["j_seeds"]:
        flow = NonreversibleFlow(target, make_permutation_skew(target.dim, js), 1.0, kind=cfg["sampler"]["flow_kind"])
        for g, (dt, beta) in enumerate(points):
            E, nv, _ = cox_point(cfg, target, flow, dt, beta, replica_seeds(cfg["seed"], g, R), x0)
            rows.append(_cox_row(js, dt, beta, E, nv, R))
    return rows


def _cox_row(js, dt, beta, E, nv, R):
    return {
        "j_seed": "none" if js is None else js,
        "dt": dt,
        "beta": beta,
        "n_valid": nv,
        "replicas": R,
        "median_cell_ess": np.nan if E is None else float(np.median(E)),
        "min_cell_ess": np.nan if E is None else float(np.min(E)),
        "max_cell_ess": np.nan if E is None else float(np.max(E)),
    }


# --------------------------------------------------------------------------
# commands


def _finish(out, cfg, name, rows, summary):
    digest = config_digest(cfg)
    write_table(out / f"{name}.csv", rows, digest)
    write_json(out / "config.json", {"config": cfg, "config_sha256": digest, "version": __version__})
    write_json(out / "summary.json", {"config": cfg, "config_sha256": digest, "summary": summary})


def cmd_gaussian_analysis(cfg, out):
    rows = gaussian_rows(cfg)
    flagged = sum(bool(r["flag"]) for r in rows)
    if flagged == len(rows):
        raise NumericalFailure("every grid point was flagged")
    _finish(out, cfg, "gaussian_analysis", rows, {"rows": len(rows), "flagged": flagged})


def cmd_experiment(cfg, out):
    exp = cfg["experiment"]
    if exp == "gaussian_analysis":
        return cmd_gaussian_analysis(cfg, out)
    if exp == "warped":
        rows = warped_rows(cfg)
        ok = [r for r in rows if r["n_valid"] == cfg["replicas"]]
        summary = {}
        for kind in cfg["sampler"]["kernels"]:
            mine = [r for r in ok if r["kernel"] == kind]
            base = [r for r in mine if r["beta"] == 0]
            if mine:
                best = min(mine, key=lambda r: r["mse"])
                summary[kind] = {"best": best, "best_beta0": min(base, key=lambda r: r["mse"]) if base else None}
        _finish(out, cfg, "warped", rows, summary)
    elif exp == "sample":
        runs = sample_trajectories(cfg)
        digest = config_digest(cfg)
        rows = []
        for (kind, dt, beta), res in runs.items():
            for r in res:
                rows.append({"kernel": kind, "dt": dt, "beta": beta, "seed": r.seed, "n_steps": r.n_steps, "density_evals": r.budget.density, "acceptance": r.acceptance_rate, "valid": r.valid})
                if cfg["output"]["trajectories"]:
                    traj = [{"step": i, "x1": s[0], "x2": s[1]} for i, s in enumerate(r.samples[: r.n_steps + 1])]
                    write_table(out / f"trajectory_{kind}_dt{dt}_beta{beta}_seed{r.seed}.csv", traj, digest)
        _finish(out, cfg, "sample", rows, {"runs": len(rows)})
    elif exp == "logistic":
        rows = logistic_rows(cfg)
        _finish(out, cfg, "logistic", rows, {"rows": len(rows)})
    elif exp == "cox":
        rows = cox_rows(cfg)
        _finish(out, cfg, "cox", rows, {"rows": len(rows), "blown_up_points": sum(r["n_valid"] < r["replicas"] for r in rows)})
    if cfg["output"].get("per_point_files") and exp in ("warped", "logistic", "cox"):
        digest = config_digest(cfg)
        groups = {}
        for r in rows:
            groups.setdefault((r.get("kernel", "mala"), r.get("j_seed", ""), r["dt"], r["beta"]), []).append(r)
        for (kind, js, dt, beta), grp in groups.items():
            write_table(out / "points" / f"{exp}_{kind}_J{js}_dt{dt}_beta{beta}.csv", grp, digest)


def cmd_ingest(kind, path, out):
    """Parse and validate a data file; write the parsed arrays as CSV."""
    out.mkdir(parents=True, exist_ok=True)
    if kind == "pima":
        X, y = load_pima(path)
        if X.shape != (768, 9):
            raise DataFormatError(f"design has shape {X.shape}, expected (768, 9)")
        rows = [dict({f"x{j}": X[i, j] for j in range(9)}, y=y[i]) for i in range(X.shape[0])]
        write_table(out / "pima_design.csv", rows, "ingest")
        return {"kind": kind, "rows": X.shape[0], "columns": X.shape[1]}
    pts = load_points(path)
    info = {"kind": kind, "points": len(pts)}
    for n in (16, 64):
        counts = bin_points(pts, n)
        if counts.sum() != len(pts):
            raise DataFormatError("binned counts do not add up to the number of points")
        rows = [{"i": i, "j": j, "count": counts[i, j]} for i in range(n) for j in range(n)]
        write_table(out / f"pine_counts_{n}.csv", rows, "ingest")
        info[f"total_{n}"] = int(counts.sum())
    return info


_EXPECTED_FORMAT = (
    "Expected a Pima CSV with 8 covariate columns and a 0/1 outcome (768 rows), "
    "or a points file with one 'x y' pair in [0, 1]^2 per line."
)


def build_parser():
    p = argparse.ArgumentParser(prog="nrlangevin", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("gaussian_analysis", "experiment"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON configuration file")
        s.add_argument("--out", default="results", help="output directory")
        s.add_argument("--threads", type=int, default=1, help="accepted for compatibility; chains are vectorized in one process")
        s.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    s = sub.add_parser("ingest")
    s.add_argument("kind", choices=("pima", "pine"))
    s.add_argument("path")
    s.add_argument("--out", default="data")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "ingest":
            info = cmd_ingest(args.kind, args.path, Path(args.out))
            print(json.dumps(info, sort_keys=True))
            return EXIT_OK
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args.config, args.seed)
        out = Path(args.out)
        if args.command == "gaussian_analysis":
            if cfg["experiment"] != "gaussian_analysis":
                raise ConfigError("gaussian_analysis needs experiment: gaussian_analysis")
            cmd_gaussian_analysis(cfg, out)
        else:
            cmd_experiment(cfg, out)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as err:
        print(f"data error: file not found: {err.filename or err}. {_EXPECTED_FORMAT}", file=sys.stderr)
        return EXIT_DATA
    except DataFormatError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalFailure, UnstableSchemeError, InadmissibleStepError, QuadratureError, FlowBlowUpError, np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
