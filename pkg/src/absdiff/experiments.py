"""Experiment driver and command line.

Scenarios sweep desk-scale specs (S <= 4, d <= 3) and emit one CSV per
scenario in the fixed metrics schema, plus a manifest recording the exact
configuration.  Re-running a scenario with the same seed reproduces every
byte except the wallclock column.
"""

from __future__ import annotations

import dataclasses
import json
import os
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import click
import numpy as np

from . import __version__
from .bound_verifier import default_manifest, render_table, reports_to_json, run_all_checks
from .divergence_metrics import (
    MetricsRecord,
    counts_to_dist,
    kl,
    score_entropy,
    tv,
    write_csv,
)
from .forward_process import marginal
from .reverse_samplers import (
    InitDist,
    Schedule,
    UniformizationConfig,
    exact_law,
    interval_intensities,
    make_schedule,
    tau_leaping_run,
    uniformization_run,
)
from .score_oracle import (
    ExactAnalyticScore,
    clipped_score,
    compute_gamma,
    perturbed_score,
)
from .state_space import (
    ModelSpec,
    dirichlet_q0,
    encode,
    maskfree_uniform_q0,
    point_q0,
    product_q0,
    spec_digest,
    uniform_q0,
)


@dataclass
class ExperimentConfig:
    """One scenario sweep: spec family, axes, trial budget, output paths."""

    scenario: str
    S: int = 3
    mask: int | None = None
    q0_base: object = "uniform"  # per-dim recipe: name string or length-S list
    d_list: tuple[int, ...] = (1, 2, 3)
    T_list: tuple[float, ...] = (8.0,)
    c_list: tuple[float, ...] = (0.2, 0.1, 0.05, 0.025)
    delta_list: tuple[float, ...] = (1e-3,)
    eta_list: tuple[float, ...] = (0.0,)
    rule: str = "auto"  # geometric when delta > 0, constant when delta == 0
    trials: int = 10_000
    seed: int = 0
    exact_law_mode: bool = True
    jobs: int = 1
    out: str = "results"
    kappa_lambda: float = 1.25
    lambda_mode: str = "analytic"
    clip_kappa: float = 1.0

    def resolve_spec(self, d: int) -> ModelSpec:
        S = self.S
        mask = S - 1 if self.mask is None else self.mask
        base = self.q0_base
        if isinstance(base, str):
            if base == "uniform":
                q0 = uniform_q0(S, d)
            elif base == "maskfree":
                q0 = maskfree_uniform_q0(S, d, mask)
            elif base.startswith("point:"):
                tok = int(base.split(":", 1)[1])
                q0 = point_q0(S, d, encode([tok] * d, ModelSpec(S, d, mask, uniform_q0(S, d))))
            elif base.startswith("dirichlet:"):
                seed_s, alpha_s = base.split(":", 1)[1].split(",")
                q0 = dirichlet_q0(S, d, int(seed_s) + d, float(alpha_s))
            else:
                raise ValueError(f"unknown q0 family {base!r}")
        else:
            q0 = product_q0([list(base)] * d)
        return ModelSpec(S=S, d=d, mask=mask, q0=q0)

    def rule_for(self, delta: float) -> str:
        if self.rule != "auto":
            return self.rule
        return "geometric" if delta > 0 else "constant"


def config_from_dict(data: dict) -> ExperimentConfig:
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    data = dict(data)
    for key in ("d_list", "T_list", "c_list", "delta_list", "eta_list"):
        if key in data:
            data[key] = tuple(data[key])
    return ExperimentConfig(**data)


def fit_slope(x, y) -> float:
    """Least-squares slope of y against x (both already transformed)."""
    return float(np.polyfit(np.asarray(x, float), np.asarray(y, float), 1)[0])


def _version_string() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"absdiff {__version__} ({out.stdout.strip()})"
    except OSError:
        pass
    return f"absdiff {__version__}"


def _write_manifest(cfg: ExperimentConfig, path: str) -> None:
    payload = {
        "version": _version_string(),
        "config": dataclasses.asdict(cfg),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, default=str)
        fh.write("\n")


def _trial_rng(seed: int, cell: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, cell, trial]))


def _eps_score_sum(spec: ModelSpec, schedule: Schedule, shat) -> float:
    """Left-endpoint aggregate of the score-entropy loss over the grid."""
    grid = schedule.grid
    total = 0.0
    for k in range(schedule.n_steps):
        total += (grid[k + 1] - grid[k]) * score_entropy(
            spec, schedule.T - grid[k], shat
        )
    return total


def _score_for(spec: ModelSpec, eta: float, seed: int, clip: bool,
               delta: float, kappa: float):
    score = ExactAnalyticScore(spec)
    if eta > 0:
        score = perturbed_score(score, eta, seed)
    if clip:
        gamma = compute_gamma(spec) if delta == 0 else None
        if gamma is not None and not (0 < gamma < np.inf):
            gamma = None
        score = clipped_score(score, kappa, gamma=gamma)
    return score


# -- scenario runners --------------------------------------------------------

def run_forward_convergence(cfg: ExperimentConfig) -> list[MetricsRecord]:
    """Exact initialization gap KL(q_T, p_init) over (d, T); no sampling."""
    records = []
    for d in cfg.d_list:
        spec = cfg.resolve_spec(d)
        digest = spec_digest(spec)
        for T in cfg.T_list:
            t0 = time.perf_counter()
            qT = marginal(spec, T)
            pinit = InitDist.for_horizon(spec, T).dense()
            records.append(
                MetricsRecord(
                    spec_hash=digest, sampler="forward", S=spec.S, d=d,
                    T=float(T), delta=0.0, N=0, seed=cfg.seed,
                    kl=kl(qT, pinit), tv=tv(qT, pinit), score_entropy_sum=0.0,
                    steps=0, wallclock_s=time.perf_counter() - t0,
                )
            )
    return records


def _tau_trial_chunk(args) -> np.ndarray:
    spec, score, schedule, seed, cell, lo, hi = args
    counts = np.zeros(spec.n_states)
    for trial in range(lo, hi):
        state = tau_leaping_run(spec, score, schedule, _trial_rng(seed, cell, trial))
        counts[encode(state, spec)] += 1
    return counts


def _mc_counts(runner, cfg: ExperimentConfig, args_base, cell: int, n_states: int):
    """Run trials (optionally across processes) and merge histograms."""
    trials = cfg.trials
    if cfg.jobs <= 1:
        return runner(args_base + (0, trials))
    chunk = max(1, trials // (cfg.jobs * 4))
    bounds = [(lo, min(lo + chunk, trials)) for lo in range(0, trials, chunk)]
    with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        parts = list(pool.map(runner, [args_base + b for b in bounds]))
    out = parts[0]
    for part in parts[1:]:
        out = out + part
    return out


def run_tau_sweep(cfg: ExperimentConfig) -> list[MetricsRecord]:
    """Poisson-leap convergence over (d, delta, step scale, estimator error).

    Every cell reports the exact evolved law when within the enumeration
    budget; Monte Carlo rows with smoothed empirical KL are added when
    exact-law mode is off.
    """
    records = []
    cell = 0
    for d in cfg.d_list:
        spec = cfg.resolve_spec(d)
        digest = spec_digest(spec)
        for delta in cfg.delta_list:
            target = marginal(spec, delta) if delta > 0 else spec.q0
            for T in cfg.T_list:
                for c in cfg.c_list:
                    schedule = make_schedule(T, delta, cfg.rule_for(delta), c)
                    for eta in cfg.eta_list:
                        cell += 1
                        score = _score_for(spec, eta, cfg.seed, False, delta, cfg.clip_kappa)
                        eps_score = _eps_score_sum(spec, schedule, score)
                        if cfg.exact_law_mode:
                            t0 = time.perf_counter()
                            law = exact_law(spec, score, schedule, "tau-leaping")
                            records.append(
                                MetricsRecord(
                                    spec_hash=digest, sampler="tau[exact]",
                                    S=spec.S, d=d, T=float(T), delta=float(delta),
                                    N=schedule.n_steps, seed=cfg.seed,
                                    kl=kl(target, law), tv=tv(target, law),
                                    score_entropy_sum=eps_score,
                                    steps=schedule.n_steps,
                                    wallclock_s=time.perf_counter() - t0,
                                )
                            )
                        else:
                            t0 = time.perf_counter()
                            counts = _mc_counts(
                                _tau_trial_chunk, cfg,
                                (spec, score, schedule, cfg.seed, cell), cell,
                                spec.n_states,
                            )
                            smoothed = counts_to_dist(counts, spec, alpha=1.0 / cfg.trials)
                            raw = counts_to_dist(counts, spec, alpha=0.0)
                            records.append(
                                MetricsRecord(
                                    spec_hash=digest, sampler="tau[mc]",
                                    S=spec.S, d=d, T=float(T), delta=float(delta),
                                    N=schedule.n_steps, seed=cfg.seed,
                                    kl=kl(target, smoothed), tv=tv(target, raw),
                                    score_entropy_sum=eps_score,
                                    steps=schedule.n_steps,
                                    wallclock_s=time.perf_counter() - t0,
                                )
                            )
    return records


def _unif_trial_chunk(args) -> np.ndarray:
    spec, score, schedule, ucfg, lambdas, seed, cell, lo, hi = args
    out = np.zeros(spec.n_states + 1)
    for trial in range(lo, hi):
        state, events = uniformization_run(
            spec, score, schedule, ucfg, _trial_rng(seed, cell, trial),
            lambdas=lambdas,
        )
        out[encode(state, spec)] += 1
        out[-1] += events
    return out


def run_uniformization_sweep(cfg: ExperimentConfig) -> list[MetricsRecord]:
    """Thinned-clock sampler: realized step counts plus divergence per cell.

    Step counts always come from Monte Carlo (they are the measurement);
    the divergence uses the integrated exact law when exact-law mode is on,
    and the smoothed empirical law otherwise.
    """
    records = []
    ucfg = UniformizationConfig(lambda_mode=cfg.lambda_mode, kappa=cfg.kappa_lambda)
    cell = 0
    for d in cfg.d_list:
        spec = cfg.resolve_spec(d)
        digest = spec_digest(spec)
        for delta in cfg.delta_list:
            target = marginal(spec, delta) if delta > 0 else spec.q0
            for T in cfg.T_list:
                for c in cfg.c_list:
                    # the thinned-clock analysis takes uniform intervals
                    rule = "constant" if cfg.rule == "auto" else cfg.rule
                    schedule = make_schedule(T, delta, rule, c)
                    for eta in cfg.eta_list:
                        cell += 1
                        score = _score_for(spec, eta, cfg.seed, True, delta, cfg.clip_kappa)
                        lambdas = interval_intensities(spec, score, schedule, ucfg)
                        t0 = time.perf_counter()
                        merged = _mc_counts(
                            _unif_trial_chunk, cfg,
                            (spec, score, schedule, ucfg, lambdas, cfg.seed, cell),
                            cell, spec.n_states,
                        )
                        counts, total_events = merged[:-1], merged[-1]
                        mean_steps = float(total_events / cfg.trials)
                        eps_score = _eps_score_sum(spec, schedule, score)
                        if cfg.exact_law_mode:
                            law = exact_law(spec, score, schedule, "uniformization")
                            kl_val = kl(target, law)
                            tv_val = tv(target, law)
                            tag = "unif[exact]"
                        else:
                            law = counts_to_dist(counts, spec, alpha=1.0 / cfg.trials)
                            kl_val = kl(target, law)
                            tv_val = tv(target, counts_to_dist(counts, spec, 0.0))
                            tag = "unif[mc]"
                        records.append(
                            MetricsRecord(
                                spec_hash=digest, sampler=tag, S=spec.S, d=d,
                                T=float(T), delta=float(delta),
                                N=schedule.n_steps, seed=cfg.seed,
                                kl=kl_val, tv=tv_val,
                                score_entropy_sum=eps_score, steps=mean_steps,
                                wallclock_s=time.perf_counter() - t0,
                            )
                        )
    return records


def run_bounds(out_dir: str) -> int:
    """Run the full bound-check manifest; nonzero on exact-check failure."""
    reports = run_all_checks(default_manifest())
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "bounds.json"), "w") as fh:
        fh.write(reports_to_json(reports))
        fh.write("\n")
    click.echo(render_table(reports))
    return 1 if any(not r.passed for r in reports) else 0


# -- default scenario configs -------------------------------------------------

DEFAULT_CONFIGS: dict[str, ExperimentConfig] = {
    "forward": ExperimentConfig(
        scenario="forward", S=3, q0_base="point:0", d_list=(1, 2),
        T_list=tuple(np.linspace(2.0, 12.0, 11)),
    ),
    "tau": ExperimentConfig(
        scenario="tau", S=3, q0_base=[0.5, 0.3, 0.2], d_list=(1, 2, 3),
        T_list=(8.0,), c_list=(0.4, 0.2, 0.1, 0.05, 0.025),
        delta_list=(1e-3,), eta_list=(0.0,),
    ),
    "unif": ExperimentConfig(
        scenario="unif", S=2, q0_base="uniform", d_list=(1, 2),
        T_list=(10.0,), c_list=(0.1,), delta_list=(1e-3,), trials=10_000,
    ),
}


def _load_cfg(scenario: str, config_path: str | None, **overrides) -> ExperimentConfig:
    if config_path:
        with open(config_path) as fh:
            cfg = config_from_dict(json.load(fh))
        if cfg.scenario != scenario:
            cfg = dataclasses.replace(cfg, scenario=scenario)
    else:
        cfg = DEFAULT_CONFIGS[scenario]
    clean = {k: v for k, v in overrides.items() if v is not None}
    return dataclasses.replace(cfg, **clean)


_RUNNERS = {
    "forward": run_forward_convergence,
    "tau": run_tau_sweep,
    "unif": run_uniformization_sweep,
}


def run_scenario(cfg: ExperimentConfig) -> str:
    os.makedirs(cfg.out, exist_ok=True)
    records = _RUNNERS[cfg.scenario](cfg)
    csv_path = os.path.join(cfg.out, f"{cfg.scenario}.csv")
    write_csv(csv_path, records)
    _write_manifest(cfg, os.path.join(cfg.out, f"{cfg.scenario}_manifest.json"))
    return csv_path


# -- CLI ----------------------------------------------------------------------

_shared_options = [
    click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                 help="JSON ExperimentConfig; CLI flags override fields."),
    click.option("--out", default=None, help="Output directory."),
    click.option("--seed", type=int, default=None, help="Root seed."),
    click.option("--trials", type=int, default=None, help="Trials per sweep cell."),
    click.option("--exact-law/--monte-carlo", "exact_law_mode", default=None,
                 help="Exact evolved law vs smoothed empirical estimates."),
    click.option("--jobs", type=int, default=None, help="Worker processes for trials."),
]


def _with_shared(fn):
    for opt in reversed(_shared_options):
        fn = opt(fn)
    return fn


@click.group()
def main() -> None:
    """Convergence experiments for absorbing discrete diffusion."""


_SCENARIO_HELP = {
    "forward": "Exact initialization-gap decay over (d, T).",
    "tau": "Poisson-leap sampler convergence sweep.",
    "unif": "Thinned-clock sampler accuracy and step counts.",
}


def _scenario_command(name: str):
    @main.command(name=name, help=_SCENARIO_HELP[name])
    @_with_shared
    def _cmd(config_path, out, seed, trials, exact_law_mode, jobs):
        cfg = _load_cfg(name, config_path, out=out, seed=seed, trials=trials,
                        exact_law_mode=exact_law_mode, jobs=jobs)
        path = run_scenario(cfg)
        click.echo(f"wrote {path}")

    _cmd.__name__ = name
    return _cmd


for _name in ("forward", "tau", "unif"):
    _scenario_command(_name)


@main.command(name="bounds", help="Run every envelope check; nonzero exit on failure.")
@click.option("--out", default="results")
def _bounds_cmd(out):
    sys.exit(run_bounds(out))


@main.command(name="all", help="All scenarios plus the bound checks.")
@_with_shared
def _all_cmd(config_path, out, seed, trials, exact_law_mode, jobs):
    for name in ("forward", "tau", "unif"):
        cfg = _load_cfg(name, config_path, out=out, seed=seed, trials=trials,
                        exact_law_mode=exact_law_mode, jobs=jobs)
        click.echo(f"wrote {run_scenario(cfg)}")
    code = run_bounds(out or "results")
    if code:
        sys.exit(code)


if __name__ == "__main__":
    main()
