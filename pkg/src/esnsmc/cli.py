"""Command-line interface: simulate, fit, compare, marginal effects.

One command is one process; every random quantity derives from the
single config seed, so reruns are byte-identical.  Output JSON is
written with a fixed key order.  Exit codes: 0 success, 2 configuration
error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from importlib import resources

import numpy as np
from scipy.stats import invwishart

from . import esn, esnsm, model_select, models, priors, smc
from .errors import (
    ConfigError,
    DataError,
    EsnError,
    NumericalError,
    ParameterDomainError,
)
from .summaries import summarize_particles

_MODELS = ("esn-p1", "esn-p2", "gaussian", "esnsm")

_KNOWN_KEYS = {
    "model", "seed", "n", "params", "input", "output", "particles", "mh_steps",
    "ess_threshold_fraction", "bisect_epsilon", "acceptance_band", "scale_init",
    "init", "pilot_iterations", "eta1_inflation", "hyper", "truth",
    "dump_particles", "outcome_terms", "select_terms", "gaussian_errors",
    "covariates", "particle_dump", "covariate_index", "me_output_csv",
}


def load_config(path: str, overrides: dict) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key, val in overrides.items():
        if val is not None:
            cfg[key] = val
    if cfg.get("model") not in _MODELS:
        raise ConfigError(f"config must set model to one of {_MODELS}")
    return cfg


def _require_seed(cfg: dict) -> int:
    if "seed" not in cfg:
        raise ConfigError("a seed is required")
    return int(cfg["seed"])


def _build_hyper(cfg: dict, d: int):
    h1, h2 = priors.default_hyper(d)
    over = cfg.get("hyper", {})
    if not isinstance(over, dict):
        raise ConfigError("hyper must be an object")
    for key, val in over.items():
        if hasattr(h1, key):
            cur = getattr(h1, key)
            setattr(h1, key, np.asarray(val, float) if isinstance(cur, np.ndarray) else float(val))
        elif hasattr(h2, key):
            cur = getattr(h2, key)
            setattr(h2, key, np.asarray(val, float) if isinstance(cur, np.ndarray) else float(val))
        else:
            raise ConfigError(f"unknown hyperparameter {key!r}")
    try:
        h1.__post_init__()
        h2.__post_init__()
    except ValueError as exc:
        raise ConfigError(f"invalid hyperparameters: {exc}") from exc
    return h1, h2


def _params_from_config(cfg: dict):
    model = cfg["model"]
    p = cfg.get("params")
    if not isinstance(p, dict):
        raise ConfigError("simulate needs a params object")
    try:
        if model == "esn-p1":
            return esn.EsnParamsP1(p["xi"], p["sigma"], p["alpha"], p["lambda"])
        if model == "esn-p2":
            return esn.EsnParamsP2(p["xi"], p["omega"], p["d"], p["c"])
        if model == "gaussian":
            return esn.EsnParamsP1(p["xi"], p["sigma"], np.zeros_like(np.atleast_1d(p["xi"])), 0.0)
        return esnsm.EsnsmParams(
            p["B"], p["beta2"], p["sigma1"], p["sigma12"], p["alpha"], p["lambda"]
        )
    except KeyError as exc:
        raise ConfigError(f"params block is missing {exc}") from exc
    except (ParameterDomainError, ValueError) as exc:
        raise ConfigError(f"invalid parameter values: {exc}") from exc


# ---------------------------------------------------------------- CSV I/O


def write_iid_csv(path: str, data: np.ndarray) -> None:
    data = np.atleast_2d(data)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"y{j + 1}" for j in range(data.shape[1])])
        for row in data:
            writer.writerow([repr(float(v)) for v in row])


def read_iid_csv(path: str) -> np.ndarray:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if not all(h.startswith("y") for h in header):
                raise DataError(f"unexpected IID data header: {header}")
            rows = [[float(v) for v in row] for row in reader if row]
    except FileNotFoundError as exc:
        raise DataError(f"dataset not found: {path}") from exc
    except ValueError as exc:
        raise DataError(f"malformed dataset: {exc}") from exc
    if not rows:
        raise DataError("dataset is empty")
    return np.asarray(rows)


def write_esnsm_csv(path: str, data: esnsm.EsnsmData) -> None:
    k = data.x.shape[1]
    d = data.y.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [f"x{j + 1}" for j in range(k)] + ["s"] + [f"y{j + 1}" for j in range(d)]
        )
        for i in range(data.n):
            yvals = [
                "" if not math.isfinite(v) else repr(float(v)) for v in data.y[i]
            ]
            writer.writerow([repr(float(v)) for v in data.x[i]] + [int(data.s[i])] + yvals)


def read_esnsm_csv(path: str) -> esnsm.EsnsmData:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            xs = [h for h in header if h.startswith("x")]
            ys = [h for h in header if h.startswith("y")]
            if "s" not in header or not xs or not ys:
                raise DataError(f"unexpected selection-data header: {header}")
            s_col = header.index("s")
            rows = [row for row in reader if row]
            x = np.array([[float(v) for v in row[: len(xs)]] for row in rows])
            s = np.array([int(row[s_col]) for row in rows])
            y = np.array(
                [
                    [float(v) if v != "" else np.nan for v in row[s_col + 1 :]]
                    for row in rows
                ]
            )
    except FileNotFoundError as exc:
        raise DataError(f"dataset not found: {path}") from exc
    except ValueError as exc:
        raise DataError(f"malformed dataset: {exc}") from exc
    return esnsm.EsnsmData(x, s, y)


def _write_particles_csv(path: str, theta: np.ndarray, names: list[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in theta:
            writer.writerow([repr(float(v)) for v in row])


def _read_particles_csv(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            names = next(reader)
            theta = np.array([[float(v) for v in row] for row in reader if row])
    except FileNotFoundError as exc:
        raise DataError(f"particle dump not found: {path}") from exc
    except ValueError as exc:
        raise DataError(f"malformed particle dump: {exc}") from exc
    return names, theta


def _emit(cfg: dict, payload: dict) -> None:
    text = json.dumps(payload, indent=2)
    out = cfg.get("output")
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _stage_log(result: smc.SmcResult) -> list[dict]:
    """Stage records for the emitted JSON; wall-clock timings are dropped so
    identical seeds produce identical bytes."""
    out = []
    for rec in result.diagnostics:
        d = rec.as_dict()
        d.pop("wall_time_ms")
        out.append(d)
    return out


def _smc_config(cfg: dict, seed: int) -> smc.SmcConfig:
    band = cfg.get("acceptance_band", (0.2, 0.6))
    return smc.SmcConfig(
        n_particles=int(cfg.get("particles", 10_000)),
        ess_threshold_fraction=float(cfg.get("ess_threshold_fraction", 0.5)),
        mh_steps=int(cfg.get("mh_steps", 3)),
        bisect_epsilon=float(cfg.get("bisect_epsilon", 1e-4)),
        scale_init=cfg.get("scale_init"),
        acceptance_band=(float(band[0]), float(band[1])),
        seed=seed,
    )


# ---------------------------------------------------------------- commands


def cmd_simulate(cfg: dict) -> None:
    seed = _require_seed(cfg)
    n = int(cfg.get("n", 1000))
    out = cfg.get("output")
    if not out:
        raise ConfigError("simulate needs an output path")
    rng = np.random.default_rng(seed)
    params = _params_from_config(cfg)
    if cfg["model"] == "esnsm":
        cov = cfg.get("covariates", {})
        spec = esnsm.CovariateSpec(
            n_covariates=int(cov.get("n_covariates", 2)),
            variance=float(cov.get("variance", 2.0)),
            intercept=bool(cov.get("intercept", True)),
        )
        data = esnsm.simulate(params, n, spec, rng)
        write_esnsm_csv(out, data)
    else:
        draws = esn.sample(params, n, rng)
        write_iid_csv(out, draws)


def _gaussian_exact_fit(cfg: dict, data: np.ndarray, seed: int) -> dict:
    """Conjugate path: summaries from the exact posterior, no sampler."""
    d = data.shape[1]
    h1, _ = _build_hyper(cfg, d)
    n = data.shape[0]
    zbar = data.mean(axis=0)
    centred = data - zbar
    kappa_n = h1.kappa + n
    nu_n = h1.nu + n
    xi_n = (h1.kappa * h1.xi0 + n * zbar) / kappa_n
    v_n = h1.V + centred.T @ centred + (h1.kappa * n / kappa_n) * np.outer(
        zbar - h1.xi0, zbar - h1.xi0
    )
    rng = np.random.default_rng(seed)
    n_draws = 100_000
    sig = invwishart.rvs(df=nu_n, scale=v_n, size=n_draws, random_state=rng)
    sig = sig.reshape(n_draws, d, d)
    z = rng.standard_normal((n_draws, d))
    chols = np.linalg.cholesky(sig / kappa_n)
    xi_draws = xi_n + np.einsum("nij,nj->ni", chols, z)
    tril = np.tril_indices(d)
    theta = np.column_stack([xi_draws, sig[:, tril[0], tril[1]]])
    names = (
        ["xi", "sigma2"]
        if d == 1
        else [f"xi{i + 1}" for i in range(d)]
        + [f"sigma{i + 1}{j + 1}" for i, j in zip(*tril)]
    )
    return {
        "parameters": summarize_particles(theta, names),
        "log_evidence": model_select.gaussian_log_evidence(data, h1),
        "stages": [],
        "theta": theta,
        "names": names,
    }


def _run_smc_fit(cfg: dict, seed: int):
    model = cfg["model"]
    if model == "esnsm":
        data = read_esnsm_csv(cfg["input"])
        k1 = data.x.shape[1]
        outcome_terms = cfg.get("outcome_terms", list(range(k1)))
        select_terms = cfg.get("select_terms", list(range(k1)))
        hyper = esnsm.EsnsmHyper.defaults(data.y.shape[1], len(outcome_terms), len(select_terms), data.n)
        target = esnsm.make_esnsm_target(
            data, hyper, outcome_terms, select_terms,
            gaussian_errors=bool(cfg.get("gaussian_errors", False)),
        )
        init = cfg.get("init", "pilot")
    else:
        data = read_iid_csv(cfg["input"])
        h1, h2 = _build_hyper(cfg, data.shape[1])
        target = models.make_iid_esn_target(
            data, h1 if model == "esn-p1" else h2,
            "p1" if model == "esn-p1" else "p2",
        )
        init = cfg.get("init", "laplace")

    inflation = float(cfg.get("eta1_inflation", 4.0))
    pilot_iters = int(cfg.get("pilot_iterations", 10_000))
    init_ss = np.random.SeedSequence([seed, 0xE7A1])
    if init == "laplace":
        try:
            target.eta1 = smc.laplace_init(target, target.default_start, inflate=inflation)
        except EsnError:
            # standard fallback when the posterior resists maximisation
            target.eta1 = smc.pilot_mh_init(
                target, pilot_iters, np.random.default_rng(init_ss), inflate=inflation
            )
    elif init == "pilot":
        target.eta1 = smc.pilot_mh_init(
            target, pilot_iters, np.random.default_rng(init_ss), inflate=inflation
        )
    else:
        raise ConfigError(f"unknown init {init!r}")
    result = smc.run(target, _smc_config(cfg, seed))
    n_obs = data.n if model == "esnsm" else data.shape[0]
    return target, result, n_obs


def _apply_truth(cfg: dict, parameters: dict) -> None:
    truth = cfg.get("truth")
    if not truth:
        return
    for name, true_val in truth.items():
        if name in parameters and true_val != 0:
            est = parameters[name]["mean"]
            parameters[name]["pct_deviation"] = 100.0 * (est - true_val) / true_val


def cmd_fit(cfg: dict) -> None:
    seed = _require_seed(cfg)
    if "input" not in cfg:
        raise ConfigError("fit needs an input dataset")
    model = cfg["model"]
    if model == "gaussian":
        data = read_iid_csv(cfg["input"])
        exact = _gaussian_exact_fit(cfg, data, seed)
        parameters = exact["parameters"]
        _apply_truth(cfg, parameters)
        payload = {
            "model": model,
            "seed": seed,
            "n_observations": int(data.shape[0]),
            "log_evidence": exact["log_evidence"],
            "parameters": parameters,
            "stages": exact["stages"],
        }
        if cfg.get("dump_particles"):
            _write_particles_csv(cfg["dump_particles"], exact["theta"], exact["names"])
        _emit(cfg, payload)
        return

    target, result, n_obs = _run_smc_fit(cfg, seed)
    theta = result.constrained_particles(target)
    parameters = summarize_particles(theta, target.param_names)
    if cfg["model"] == "esnsm":
        names = target.param_names
        ratio = theta[:, names.index("sigma12")] / np.sqrt(theta[:, names.index("sigma1")])
        parameters["rho"] = summarize_particles(ratio[:, None], ["rho"])["rho"]
    _apply_truth(cfg, parameters)
    payload = {
        "model": cfg["model"],
        "seed": seed,
        "n_observations": n_obs,
        "log_evidence": result.log_evidence,
        "parameters": parameters,
        "stages": _stage_log(result),
    }
    if cfg.get("dump_particles"):
        _write_particles_csv(cfg["dump_particles"], theta, target.param_names)
    _emit(cfg, payload)


def cmd_compare(cfg: dict) -> None:
    seed = _require_seed(cfg)
    if cfg["model"] == "gaussian":
        raise ConfigError("compare needs an alternative model (esn-p1 or esn-p2)")
    if cfg["model"] == "esnsm":
        raise ConfigError("compare supports the IID models only")
    if "input" not in cfg:
        raise ConfigError("compare needs an input dataset")
    data = read_iid_csv(cfg["input"])
    h1, _ = _build_hyper(cfg, data.shape[1])
    target, result, n_obs = _run_smc_fit(cfg, seed)
    log_m0 = model_select.gaussian_log_evidence(data, h1)
    comp = model_select.classify_bayes_factor(result.log_evidence, log_m0)
    payload = {
        "model1": cfg["model"],
        "model0": "gaussian",
        "seed": seed,
        "n_observations": n_obs,
        "log_m1": comp.log_m1,
        "log_m0": comp.log_m0,
        "log10_bayes_factor": comp.log10_bayes_factor,
        "category": comp.category,
        "stages": _stage_log(result),
    }
    _emit(cfg, payload)


def _params_from_dump(names: list[str], theta_mean: np.ndarray, k1: int) -> esnsm.EsnsmParams:
    vals = dict(zip(names, theta_mean))
    b_full = np.zeros((1, k1))
    b2_full = np.zeros(k1)
    for name, v in vals.items():
        if name.startswith("beta1_"):
            b_full[0, int(name.split("_")[1])] = v
        elif name.startswith("beta2_"):
            b2_full[int(name.split("_")[1])] = v
    alpha = [vals.get("alpha1", 0.0), vals.get("alpha2", 0.0)]
    return esnsm.EsnsmParams(
        b_full, b2_full, [[vals["sigma1"]]], [vals["sigma12"]],
        alpha, vals.get("lambda", 0.0),
    )


def cmd_marginal_effects(cfg: dict) -> None:
    seed = _require_seed(cfg)
    if cfg["model"] != "esnsm":
        raise ConfigError("marginal effects require the selection model")
    if "input" not in cfg or "particle_dump" not in cfg:
        raise ConfigError("marginal effects need input data and a fitted particle dump")
    data = read_esnsm_csv(cfg["input"])
    names, theta = _read_particles_csv(cfg["particle_dump"])
    params = _params_from_dump(names, theta.mean(axis=0), data.x.shape[1])
    k = int(cfg.get("covariate_index", data.x.shape[1] - 1))
    if not 0 <= k < data.x.shape[1]:
        raise ConfigError("covariate_index out of range")
    effects = np.array(
        [esnsm.marginal_effect(params, data.x[i], k) for i in range(data.n)]
    )
    me_csv = cfg.get("me_output_csv")
    if me_csv:
        with open(me_csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "marginal_effect"])
            for i, v in enumerate(effects):
                writer.writerow([i, repr(float(v))])
    payload = {
        "model": "esnsm",
        "seed": seed,
        "covariate_index": k,
        "n_individuals": int(data.n),
        "average_marginal_effect": float(effects.mean()),
    }
    _emit(cfg, payload)


def load_schema(name: str) -> dict:
    with resources.files("esnsmc.schemas").joinpath(name).open("r") as fh:
        return json.load(fh)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="esn-smc",
        description="Extended skew-normal estimation via tempered sequential Monte Carlo",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "fit", "compare", "me"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--particles", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--truth", default=None, help="JSON file with true parameter values")
    args = parser.parse_args(argv)

    try:
        overrides = {"seed": args.seed, "particles": args.particles, "output": args.out}
        cfg = load_config(args.config, overrides)
        if args.truth:
            with open(args.truth, "r", encoding="utf-8") as fh:
                cfg["truth"] = json.load(fh)
        if args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "fit":
            cmd_fit(cfg)
        elif args.command == "compare":
            cmd_compare(cfg)
        else:
            cmd_marginal_effects(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, EsnError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
