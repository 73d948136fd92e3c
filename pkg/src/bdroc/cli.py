"""Command-line entry point: config loading, experiment subcommands, artifacts.

Subcommands: discretize | solve | episodic | experiment | oracle.
Every run writes its CSV outputs plus a manifest JSON recording the config,
seed, content hash of each emitted file and wall-clock time.  Exit codes:
0 success, 1 config error, 2 solver non-convergence, 3 internal failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import lp as lpmod
from .bocp import BocpConfig, floor_pool, run as bocp_run, warm_start_filter
from .dist import DirichletPosterior, Pmf, credible_box, posterior_update_batch
from .episodic import (
    MethodKind,
    comparison_experiment,
    consistency_experiment,
    credibility_check,
    method_box,
    qsr_experiment,
    run_episodic,
    stability_experiment,
)
from .model import (
    DemandSpec,
    InventoryParams,
    build_inventory,
    contaminate,
    discretize_demand,
    discretize_exponential,
)
from .risk import risk_spec
from .seeding import substream
from .value import Cut, CutPool, extract_grid_policy, value_iteration_oracle

__all__ = ["RunConfig", "ConfigError", "load_config", "default_config_text", "main"]

SCHEMA_LINE = "# schema=1"


class ConfigError(ValueError):
    """Malformed or unknown configuration entry."""


@dataclass
class ModelSection:
    c: float = 1.0
    b: float = 10.0
    h: float = 2.0
    gamma: float = 0.95
    rate_mean: float = 10.0
    trunc: float = 50.0
    n_bins: int = 20
    state_lo: float = -50.0
    state_hi: float = 60.0
    action_max: float = 70.0
    grid_m: int = 201


@dataclass
class MethodSection:
    kind: str = "bayes_droc"
    alpha: float = 0.2
    c0: float = 0.1
    prior_tau: float = 2.0


@dataclass
class SolverSection:
    epsilon: float = 0.5
    k_max: int = 2000
    n_grid: int = 201
    restart_period: int = 1
    prune: bool = True
    oracle_tol: float = 0.05


@dataclass
class ExperimentSection:
    kind: str = "comparison"
    episodes: int = 60
    replications: int = 20
    rollouts: int = 500
    horizon: int = 120
    eval_every: int = 5
    n_obs: int = 100
    eps_grid: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3)
    qsr_reps: int = 200
    qsr_obs: int = 200
    qsr_mix_mean: float = 40.0
    contamination_eps: float = 0.3
    huber_mix_mean: float = 30.0
    mc_draws: int = 2000
    s0: float = 0.0
    seed: int = 0
    semidev_direction: str = "above_mean"


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    method: MethodSection = field(default_factory=MethodSection)
    solver: SolverSection = field(default_factory=SolverSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    out_dir: str = "out"

    def inventory_params(self) -> InventoryParams:
        m = self.model
        return InventoryParams(c=m.c, b=m.b, h=m.h, gamma=m.gamma, rate_mean=m.rate_mean,
                               trunc=m.trunc, n_bins=m.n_bins, state_lo=m.state_lo,
                               state_hi=m.state_hi, action_max=m.action_max)

    def method_kind(self) -> MethodKind:
        mk = self.method
        if mk.kind == "bayes_droc":
            return MethodKind.bayes_droc(mk.alpha)
        if mk.kind == "bayes_soc":
            return MethodKind.bayes_soc()
        if mk.kind == "drsc":
            return MethodKind.drsc(mk.c0)
        raise ConfigError(f"unknown method kind {mk.kind!r}")

    def bocp_config(self, seed: int) -> BocpConfig:
        s = self.solver
        return BocpConfig(epsilon=s.epsilon, k_max=s.k_max, n_grid=s.n_grid,
                          restart_period=s.restart_period, seed=seed,
                          prune_dominated=s.prune)

    def prior(self, n_bins: int) -> DirichletPosterior:
        return DirichletPosterior(np.full(n_bins, self.method.prior_tau))


_SECTIONS = {"model": ModelSection, "method": MethodSection,
             "solver": SolverSection, "experiment": ExperimentSection,
             "output": None}


def _parse_value(raw: str, kind, line_no: int, key: str):
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw.strip()
        if kind == tuple[float, ...]:
            return tuple(float(tok) for tok in raw.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"line {line_no}: bad value for {key!r}: {raw.strip()!r}") from exc
    raise ConfigError(f"line {line_no}: unsupported type for {key!r}")


def load_config(path: str | Path) -> RunConfig:
    """Parse the flat sectioned key=value config with line-anchored errors."""
    cfg = RunConfig()
    section = None
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in _SECTIONS:
                raise ConfigError(f"line {line_no}: unknown section [{name}]")
            section = name
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected key = value, got {raw.strip()!r}")
        if section is None:
            raise ConfigError(f"line {line_no}: key outside any [section]")
        key, _, raw_val = line.partition("=")
        key = key.strip()
        if section == "output":
            if key != "dir":
                raise ConfigError(f"line {line_no}: unknown key {key!r} in [output]")
            cfg.out_dir = raw_val.strip()
            continue
        target = getattr(cfg, section)
        spec_fields = {f.name: f.type for f in fields(target)}
        if key not in spec_fields:
            raise ConfigError(f"line {line_no}: unknown key {key!r} in [{section}]")
        declared = type(getattr(target, key)) if not isinstance(getattr(target, key), tuple) \
            else tuple[float, ...]
        setattr(target, key, _parse_value(raw_val, declared, line_no, key))
    return cfg


def default_config_text() -> str:
    cfg = RunConfig()
    lines = []
    for section in ("model", "method", "solver", "experiment"):
        lines.append(f"[{section}]")
        for f in fields(getattr(cfg, section)):
            val = getattr(getattr(cfg, section), f.name)
            if isinstance(val, tuple):
                val = ",".join(f"{v:g}" for v in val)
            lines.append(f"{f.name} = {val}")
        lines.append("")
    lines.append("[output]")
    lines.append(f"dir = {cfg.out_dir}")
    return "\n".join(lines) + "\n"


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w") as fh:
        fh.write(SCHEMA_LINE + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def _manifest(out: Path, command: str, cfg: RunConfig, seed: int,
              outputs: list[Path], t0: float) -> None:
    entries = {}
    for p in outputs:
        entries[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
    doc = {
        "schema": 1,
        "command": command,
        "seed": seed,
        "config": {
            "model": vars(cfg.model),
            "method": vars(cfg.method),
            "solver": vars(cfg.solver),
            "experiment": {k: (list(v) if isinstance(v, tuple) else v)
                           for k, v in vars(cfg.experiment).items()},
            "output": {"dir": cfg.out_dir},
        },
        "outputs": entries,
        "wall_clock_s": round(time.time() - t0, 3),
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _pool_to_json(pool: CutPool) -> dict:
    return {"floor": pool.floor,
            "cuts": [{"anchor": c.anchor.tolist(), "intercept": c.intercept,
                      "slope": c.slope.tolist()} for c in pool.cuts]}


def _pool_from_json(doc: dict) -> CutPool:
    cuts = tuple(Cut(anchor=np.asarray(c["anchor"]), intercept=float(c["intercept"]),
                     slope=np.asarray(c["slope"])) for c in doc["cuts"])
    return CutPool(floor=float(doc["floor"]), cuts=cuts)


def _build(cfg: RunConfig):
    params = cfg.inventory_params()
    support, pmf = discretize_exponential(params)
    model = build_inventory(params, support, pmf)
    return params, support, pmf, model


def _simulated_posterior(cfg: RunConfig, pmf: Pmf, seed: int) -> DirichletPosterior:
    prior = cfg.prior(cfg.model.n_bins)
    n = cfg.experiment.n_obs
    if n == 0:
        return prior
    rng = substream(seed, "data")
    cdf = np.cumsum(pmf.probs)
    obs = np.minimum(np.searchsorted(cdf, rng.random(n)), len(pmf) - 1)
    return posterior_update_batch(prior, obs)


def cmd_discretize(cfg: RunConfig, seed: int, out: Path) -> int:
    t0 = time.time()
    _, support, pmf, _ = _build(cfg)
    xs = support.scalars()
    rows = [[j + 1, xs[j], pmf.probs[j]] for j in range(len(pmf))]
    path = out / "support.csv"
    _write_csv(path, ["j", "xi", "p"], rows)
    _manifest(out, "discretize", cfg, seed, [path], t0)
    return 0


def cmd_solve(cfg: RunConfig, seed: int, out: Path, warm: str | None,
              data: str | None, dump_lp: str | None) -> int:
    t0 = time.time()
    _, support, pmf, model = _build(cfg)
    prior = cfg.prior(cfg.model.n_bins)
    if data is not None:
        obs = np.loadtxt(data, dtype=int, ndmin=1)
        post = posterior_update_batch(prior, obs)
    else:
        post = _simulated_posterior(cfg, pmf, seed)
    box = method_box(cfg.method_kind(), post, prior)
    spec = risk_spec(box)
    pool0 = None
    if warm is not None:
        prev = _pool_from_json(json.loads(Path(warm).read_text()))
        pool0 = warm_start_filter(model, spec, prev)
    bcfg = cfg.bocp_config(seed)
    pool, state = bocp_run(model, spec, bcfg, initial_pool=pool0,
                           s0=cfg.experiment.s0, rng=substream(seed, "bocp"))
    hist_path = out / "bocp_history.csv"
    _write_csv(hist_path, ["k", "residual", "cuts", "master_obj", "trial_state"],
               [[r.k, r.residual, r.n_cuts, r.master_obj, r.trial_state]
                for r in state.history])
    pool_path = out / "pool.json"
    pool_path.write_text(json.dumps(_pool_to_json(pool), indent=1) + "\n")
    outputs = [hist_path, pool_path]
    if dump_lp is not None:
        from .value import build_master_lp

        prog, _ = build_master_lp(model, spec, pool, np.atleast_1d(cfg.experiment.s0))
        dump_path = Path(dump_lp)
        dump_path.write_text(lpmod.format_lp(prog) + "\n")
        if dump_path.parent == out:
            outputs.append(dump_path)
    _manifest(out, "solve", cfg, seed, outputs, t0)
    return 0 if state.converged else 2


def cmd_episodic(cfg: RunConfig, seed: int, out: Path) -> int:
    t0 = time.time()
    _, support, pmf, model = _build(cfg)
    prior = cfg.prior(cfg.model.n_bins)
    result = run_episodic(model, cfg.method_kind(), pmf, prior,
                          cfg.experiment.episodes, cfg.bocp_config(seed),
                          substream(seed, "episodic"), s0=cfg.experiment.s0,
                          keep_pools=False)
    rows = [[r.episode, r.state, r.action, r.observed, r.lam, r.upsilon,
             r.iterations, r.residual, int(r.converged), r.warm_pool_size,
             r.n_cuts, r.value_at_state] for r in result.records]
    path = out / "episodes.csv"
    _write_csv(path, ["episode", "state", "action", "observed_idx", "lambda",
                      "upsilon", "iterations", "residual", "converged",
                      "warm_pool", "cuts", "value_at_state"], rows)
    _manifest(out, "episodic", cfg, seed, [path], t0)
    return 0


def cmd_oracle(cfg: RunConfig, seed: int, out: Path) -> int:
    """Grid fixed point under the true discretized pmf (degenerate box)."""
    t0 = time.time()
    _, support, pmf, model = _build(cfg)
    from .dist import BoxAmbiguity

    spec = risk_spec(BoxAmbiguity(pmf, np.zeros(len(pmf)), alpha=1.0))
    grid = np.linspace(cfg.model.state_lo, cfg.model.state_hi, cfg.model.grid_m)
    gv = value_iteration_oracle(model, spec, grid, tol=cfg.solver.oracle_tol)
    path = out / "value.csv"
    _write_csv(path, ["s", "v"], [[s, v] for s, v in zip(gv.grid, gv.values)])
    _manifest(out, "oracle", cfg, seed, [path], t0)
    return 0


def _experiment_qsr(cfg: RunConfig, seed: int, out: Path) -> list[Path]:
    params, support, pmf, model = _build(cfg)
    ex = cfg.experiment
    base = DemandSpec.exponential(cfg.model.rate_mean)
    shifted = {}
    for eps in ex.eps_grid:
        spec_eps = contaminate(base, "huber_mixture", eps, mix_mean=ex.qsr_mix_mean)
        _, pmf_eps = discretize_demand(spec_eps, cfg.model.trunc, cfg.model.n_bins)
        shifted[eps] = pmf_eps
    grid = np.linspace(cfg.model.state_lo, cfg.model.state_hi, cfg.model.grid_m)
    rows = qsr_experiment(model, cfg.prior(cfg.model.n_bins), pmf, shifted,
                          ex.qsr_obs, ex.qsr_reps, ex.s0, cfg.method.alpha, grid,
                          substream(seed, "qsr"), tol=cfg.solver.oracle_tol)
    path = out / "qsr.csv"
    _write_csv(path, ["eps", "dk_input", "dk_laws"],
               [[r["eps"], r["dk_input"], r["dk_laws"]] for r in rows])
    return [path]


def _experiment_comparison(cfg: RunConfig, seed: int, out: Path) -> list[Path]:
    params, support, pmf, model = _build(cfg)
    ex = cfg.experiment
    base = DemandSpec.exponential(cfg.model.rate_mean)
    eps = ex.contamination_eps
    scenarios = {"clean": pmf}
    for kind, tag in (("huber_mixture", f"huber_{eps:g}"), ("scale_shift", f"scale_{eps:g}")):
        spec_c = contaminate(base, kind, eps, mix_mean=ex.huber_mix_mean)
        _, pmf_c = discretize_demand(spec_c, cfg.model.trunc, cfg.model.n_bins)
        scenarios[tag] = pmf_c
    methods = [MethodKind.bayes_droc(cfg.method.alpha), MethodKind.bayes_soc(),
               MethodKind.drsc(cfg.method.c0)]
    rows = comparison_experiment(model, methods, scenarios, pmf,
                                 cfg.prior(cfg.model.n_bins), ex.episodes,
                                 ex.replications, cfg.bocp_config(seed),
                                 substream(seed, "comparison"),
                                 rollout_horizon=ex.horizon, n_rollouts=ex.rollouts,
                                 s0=ex.s0, eval_every=ex.eval_every,
                                 semidev_direction=ex.semidev_direction)
    path = out / "comparison.csv"
    _write_csv(path, ["method", "scenario", "episode", "replication",
                      "mean", "cvar95", "semidev"],
               [[r["method"], r["scenario"], r["episode"], r["replication"],
                 r["mean"], r["cvar95"], r["semidev"]] for r in rows])
    return [path]


def _experiment_stability(cfg: RunConfig, seed: int, out: Path) -> list[Path]:
    params, support, pmf, model = _build(cfg)
    ex = cfg.experiment
    rng = substream(seed, "stability")
    cdf = np.cumsum(pmf.probs)
    clean = np.minimum(np.searchsorted(cdf, rng.random(ex.n_obs)), len(pmf) - 1)
    grid = np.linspace(cfg.model.state_lo, cfg.model.state_hi, cfg.model.grid_m)
    prior = cfg.prior(cfg.model.n_bins)
    rows = []
    v0 = None
    for trial in range(ex.replications):
        perturbed = clean.copy()
        flip = int(rng.integers(ex.n_obs))
        perturbed[flip] = int(rng.integers(len(pmf)))
        lhs, rhs = stability_experiment(model, clean, perturbed, cfg.method.alpha,
                                        prior, grid, tol=cfg.solver.oracle_tol)
        rows.append([trial, lhs, rhs])
    path = out / "stability.csv"
    _write_csv(path, ["trial", "lhs", "rhs"], rows)
    return [path]


def _experiment_credibility(cfg: RunConfig, seed: int, out: Path) -> list[Path]:
    params, support, pmf, model = _build(cfg)
    ex = cfg.experiment
    post = _simulated_posterior(cfg, pmf, seed)
    box = credible_box(post, cfg.method.alpha)
    spec = risk_spec(box)
    bcfg = cfg.bocp_config(seed)
    pool, state = bocp_run(model, spec, bcfg, s0=ex.s0, rng=substream(seed, "bocp"))
    grid = bcfg.grid(model)
    policy = extract_grid_policy(model, spec, pool, grid)
    res = credibility_check(model, post, cfg.method.alpha, pool, policy, grid,
                            ex.mc_draws, substream(seed, "draws"),
                            eps_slack=cfg.solver.epsilon + cfg.solver.oracle_tol)
    path = out / "credibility.csv"
    _write_csv(path, ["n_obs", "alpha", "draws", "value_coverage", "box_coverage"],
               [[ex.n_obs, cfg.method.alpha, ex.mc_draws, res.coverage, res.box_coverage]])
    return [path]


def _experiment_consistency(cfg: RunConfig, seed: int, out: Path) -> list[Path]:
    from .dist import BoxAmbiguity
    from .model import base_stock_truth
    from .value import stationary_weights

    params, support, pmf, model = _build(cfg)
    ex = cfg.experiment
    grid = np.linspace(cfg.model.state_lo, cfg.model.state_hi, cfg.model.grid_m)
    spec_true = risk_spec(BoxAmbiguity(pmf, np.zeros(len(pmf)), alpha=1.0))
    v_star = value_iteration_oracle(model, spec_true, grid, tol=cfg.solver.oracle_tol)
    _, s_star = base_stock_truth(params)
    base_stock = lambda s: np.maximum(s_star - np.asarray(s), 0.0)
    weights = stationary_weights(model, pmf, base_stock, grid, burn_in=500,
                                 n_steps=20000, rng=substream(seed, "weights"))
    gaps = consistency_experiment(model, pmf, cfg.prior(cfg.model.n_bins),
                                  cfg.method.alpha, ex.episodes, ex.replications,
                                  grid, weights, v_star, substream(seed, "chains"),
                                  tol=cfg.solver.oracle_tol)
    rows = [[ep, float(gaps[:, ep].mean()),
             float(gaps[:, ep].std(ddof=1) / np.sqrt(gaps.shape[0]))]
            for ep in range(gaps.shape[1])]
    path = out / "consistency.csv"
    _write_csv(path, ["episode", "gap_mean", "gap_se"], rows)
    return [path]


def cmd_experiment(cfg: RunConfig, seed: int, out: Path) -> int:
    t0 = time.time()
    kind = cfg.experiment.kind
    runners = {"qsr": _experiment_qsr, "comparison": _experiment_comparison,
               "stability": _experiment_stability, "credibility": _experiment_credibility,
               "consistency": _experiment_consistency}
    if kind not in runners:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    outputs = runners[kind](cfg, seed, out)
    _manifest(out, f"experiment:{kind}", cfg, seed, outputs, t0)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="bdroc", description=__doc__)
    parser.add_argument("command",
                        choices=["discretize", "solve", "episodic", "experiment", "oracle"])
    parser.add_argument("--config", type=str, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", type=str, default=None)
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap; outputs are identical for any value")
    parser.add_argument("--warm", type=str, default=None, help="pool.json to warm-start from")
    parser.add_argument("--data", type=str, default=None, help="observation index file")
    parser.add_argument("--dump-lp", type=str, default=None,
                        help="write the final master LP as fixed-width text")
    parser.add_argument("--print-config", action="store_true")
    args = parser.parse_args(argv)

    if args.print_config:
        sys.stdout.write(default_config_text())
        return 0
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        seed = args.seed if args.seed is not None else cfg.experiment.seed
        out = Path(args.out if args.out is not None else cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "discretize":
            return cmd_discretize(cfg, seed, out)
        if args.command == "solve":
            return cmd_solve(cfg, seed, out, args.warm, args.data, args.dump_lp)
        if args.command == "episodic":
            return cmd_episodic(cfg, seed, out)
        if args.command == "oracle":
            return cmd_oracle(cfg, seed, out)
        return cmd_experiment(cfg, seed, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (lpmod.LpError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
