"""Episodic outer loop, baseline controllers and the experiment batteries.

One episode is one decision step: build the method's ambiguity set from the
current belief, warm-start and run the cutting-plane solver, execute the
greedy action at the physical state, observe the disturbance, update the
posterior.  The disturbance stream is exogenous, so two methods driven by
the same seed see identical data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .bocp import (
    BocpConfig,
    _prune,
    bootstrap_floor,
    floor_pool,
    master_solve,
    run as bocp_run,
    warm_start_filter,
)
from .dist import (
    BoxAmbiguity,
    DirichletPosterior,
    Pmf,
    credible_box,
    posterior_mean,
    posterior_update,
    sample_pmf,
)
from .model import ScenarioModel
from .risk import risk_spec
from .value import (
    CutPool,
    GridValue,
    envelope_values,
    extract_grid_policy,
    metrics,
    policy_eval_fixed_point,
    rollout,
    value_iteration_oracle,
)

__all__ = [
    "MethodKind",
    "EpisodeRecord",
    "EpisodicResult",
    "method_box",
    "run_episodic",
    "integrated_gap",
    "CredibilityResult",
    "credibility_check",
    "stability_experiment",
    "qsr_experiment",
    "consistency_experiment",
    "comparison_experiment",
]


@dataclass(frozen=True)
class MethodKind:
    """Controller family: robust (credible box), risk-neutral, or DRSC ball."""

    kind: str
    alpha: float = 0.2
    c0: float = 0.1

    _KINDS = ("bayes_droc", "bayes_soc", "drsc")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown method kind {self.kind!r}")

    @classmethod
    def bayes_droc(cls, alpha: float = 0.2) -> "MethodKind":
        return cls("bayes_droc", alpha=alpha)

    @classmethod
    def bayes_soc(cls) -> "MethodKind":
        return cls("bayes_soc")

    @classmethod
    def drsc(cls, c0: float = 0.1) -> "MethodKind":
        return cls("drsc", c0=c0)

    @property
    def label(self) -> str:
        if self.kind == "bayes_droc":
            return f"bayes_droc(alpha={self.alpha:g})"
        if self.kind == "drsc":
            return f"drsc(c0={self.c0:g})"
        return self.kind


@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    tau: np.ndarray
    center: np.ndarray
    radius: np.ndarray
    lam: float
    upsilon: float
    iterations: int
    residual: float
    converged: bool
    warm_pool_size: int
    n_cuts: int
    state: float
    action: float
    observed: int
    value_at_state: float


@dataclass
class EpisodicResult:
    records: list[EpisodeRecord]
    pools: list[CutPool]
    specs: list
    posterior: DirichletPosterior


def method_box(
    method: MethodKind, post: DirichletPosterior, prior: DirichletPosterior
) -> BoxAmbiguity:
    """Ambiguity set of the given method at the current belief state."""
    if method.kind == "bayes_droc":
        return credible_box(post, method.alpha)
    if method.kind == "bayes_soc":
        return credible_box(post, 1.0)
    # DRSC: L-inf ball of radius c0/sqrt(t) around the empirical distribution
    t = post.count
    if t == 0:
        j = post.size
        center = Pmf(np.full(j, 1.0 / j))
        return BoxAmbiguity(center, np.ones(j), alpha=0.5)
    counts = post.tau - prior.tau
    center = Pmf(counts / t)
    radius = np.full(post.size, method.c0 / np.sqrt(t))
    return BoxAmbiguity(center, radius, alpha=0.5)


def run_episodic(
    model: ScenarioModel,
    method: MethodKind,
    true_pmf: Pmf,
    prior: DirichletPosterior,
    n_episodes: int,
    config: BocpConfig,
    rng: np.random.Generator,
    s0: float = 0.0,
    keep_pools: bool = True,
    warm_prune_band: float = 25.0,
    bootstrap_cold: bool = True,
) -> EpisodicResult:
    """Run the episodic loop: solve, act, observe, update, warm-start.

    The observation stream is drawn from its own child generator before any
    per-episode streams, so methods sharing a seed see identical data.  The
    first episode starts from a certified constant sub-solution (a flat cut
    verified by the warm-start validity LP); later episodes filter and
    band-prune the previous pool, keeping a thin ladder of nearly-active
    cuts that can survive the next filtering round.
    """
    if n_episodes < 1:
        raise ValueError("need at least one episode")
    obs_rng = rng.spawn(1)[0]
    episode_rngs = rng.spawn(n_episodes)
    obs_cdf = np.cumsum(true_pmf.probs)
    observations = np.minimum(np.searchsorted(obs_cdf, obs_rng.random(n_episodes)),
                              len(true_pmf) - 1)
    grid = config.grid(model)

    post = prior
    state = float(s0)
    pool = floor_pool(model)
    records: list[EpisodeRecord] = []
    pools: list[CutPool] = []
    specs = []
    for n in range(n_episodes):
        box = method_box(method, post, prior)
        spec = risk_spec(box)
        if n == 0:
            warm = bootstrap_floor(model, spec, grid) if bootstrap_cold \
                else floor_pool(model)
        else:
            warm = _prune(warm_start_filter(model, spec, pool), grid,
                          band=warm_prune_band)
        warm_size = len(warm)
        pool, bstate = bocp_run(model, spec, config, initial_pool=warm,
                                s0=state, rng=episode_rngs[n])
        master = master_solve(model, spec, pool, [state])
        action = float(master.a_bar[0])
        obs = int(observations[n])
        value_here = float(envelope_values(pool, np.array([state]))[0])
        records.append(EpisodeRecord(
            episode=n, tau=post.tau.copy(), center=box.center.probs.copy(),
            radius=box.radius.copy(), lam=spec.lam, upsilon=spec.upsilon,
            iterations=bstate.k, residual=bstate.last_residual,
            converged=bstate.converged, warm_pool_size=warm_size,
            n_cuts=len(pool), state=state, action=action, observed=obs,
            value_at_state=value_here))
        if keep_pools:
            pools.append(pool)
            specs.append(spec)
        nxt = model.transition(obs, np.array([state]), np.array([action]))
        state = float(model.clip_state(nxt)[0])
        post = posterior_update(post, obs)
    return EpisodicResult(records=records, pools=pools, specs=specs, posterior=post)


def integrated_gap(v_hat, v_star: GridValue, weights: np.ndarray) -> float:
    """Weighted absolute gap sum_s w(s) |V_hat(s) - V*(s)| on V*'s grid."""
    weights = np.asarray(weights, dtype=float)
    if weights.shape != v_star.grid.shape:
        raise ValueError("weights must match the grid")
    if isinstance(v_hat, GridValue):
        if v_hat.grid.shape != v_star.grid.shape or np.any(v_hat.grid != v_star.grid):
            raise ValueError("grids must coincide")
        vals = v_hat.values
    elif isinstance(v_hat, CutPool):
        vals = envelope_values(v_hat, v_star.grid)
    else:
        raise TypeError("v_hat must be a CutPool or GridValue")
    return float(weights @ np.abs(vals - v_star.values))


class CredibilityResult(NamedTuple):
    coverage: float          # fraction of draws with V_hat >= V^policy on the grid
    box_coverage: float      # fraction of draws inside the ambiguity box


def credibility_check(
    model: ScenarioModel,
    posterior: DirichletPosterior,
    alpha: float,
    pool: CutPool,
    policy,
    grid: np.ndarray,
    n_draws: int,
    rng: np.random.Generator,
    eps_slack: float = 0.0,
    policy_tol: float = 1e-2,
) -> CredibilityResult:
    """Monte Carlo posterior credibility of the robust value bound.

    Draws pmfs from the posterior, evaluates the executed policy under each,
    and counts the draws where the robust envelope plus slack dominates the
    policy value at every grid point.
    """
    grid = np.asarray(grid, dtype=float)
    env = envelope_values(pool, grid)
    box = credible_box(posterior, alpha)
    hits = 0
    box_hits = 0
    warm = None
    for _ in range(n_draws):
        pmf = sample_pmf(posterior, rng)
        gv = policy_eval_fixed_point(model, pmf, policy, grid, tol=policy_tol, v0=warm)
        warm = gv.values
        if np.all(env + eps_slack >= gv.values - policy_tol):
            hits += 1
        if box.contains(pmf):
            box_hits += 1
    return CredibilityResult(hits / n_draws, box_hits / n_draws)


def stability_experiment(
    model: ScenarioModel,
    clean_obs: np.ndarray,
    perturbed_obs: np.ndarray,
    alpha: float,
    prior: DirichletPosterior,
    grid: np.ndarray,
    tol: float = 0.05,
    v0_clean: np.ndarray | None = None,
) -> tuple[float, float]:
    """Observed value deviation vs the theoretical box-perturbation bound.

    Returns (lhs, rhs): lhs is the sup-norm gap of the two grid fixed points,
    rhs the bound J * C / (1-gamma)^2 * (|center gap|_inf + |radius gap|_inf).
    """
    clean_obs = np.asarray(clean_obs, dtype=int)
    perturbed_obs = np.asarray(perturbed_obs, dtype=int)
    if clean_obs.size != perturbed_obs.size:
        raise ValueError("datasets must have equal length")
    from .dist import posterior_update_batch

    post_c = posterior_update_batch(prior, clean_obs)
    post_p = posterior_update_batch(prior, perturbed_obs)
    box_c = credible_box(post_c, alpha)
    box_p = credible_box(post_p, alpha)
    spec_c = risk_spec(box_c)
    spec_p = risk_spec(box_p)
    grid = np.asarray(grid, dtype=float)
    v_c = value_iteration_oracle(model, spec_c, grid, tol=tol, v0=v0_clean)
    v_p = value_iteration_oracle(model, spec_p, grid, tol=tol, v0=v_c.values)
    lhs = float(np.abs(v_c.values - v_p.values).max())
    d_center = float(np.abs(box_c.center.probs - box_p.center.probs).max())
    d_radius = float(np.abs(box_c.radius - box_p.radius).max())
    gamma = model.gamma
    rhs = (model.n_scenarios * model.cost_bound / (1.0 - gamma) ** 2
           * (d_center + d_radius))
    return lhs, rhs


def qsr_experiment(
    model: ScenarioModel,
    prior: DirichletPosterior,
    pmf_clean: Pmf,
    pmf_shift_by_eps: dict[float, Pmf],
    n_obs: int,
    n_rep: int,
    s0: float,
    alpha: float,
    grid: np.ndarray,
    rng: np.random.Generator,
    tol: float = 0.05,
) -> list[dict[str, float]]:
    """Statistical-robustness table: estimator-law distance vs input distance.

    For each shift level, draws n_rep clean and n_rep shifted datasets, solves
    the robust value at s0 for every dataset (grid fixed point, warm-started
    within a bucket) and reports the empirical Kantorovich distance between
    the two estimator samples next to the input-distribution distance.
    """
    from .dist import kantorovich_1d, kantorovich_1d_pmf, posterior_update_batch

    grid = np.asarray(grid, dtype=float)
    points = model.support.scalars()
    s0_arr = np.array([float(s0)])

    def estimator_sample(pmf: Pmf, sample_rng: np.random.Generator) -> np.ndarray:
        cdf = np.cumsum(pmf.probs)
        out = np.empty(n_rep)
        warm = None
        for r in range(n_rep):
            obs = np.minimum(np.searchsorted(cdf, sample_rng.random(n_obs)), len(pmf) - 1)
            post = posterior_update_batch(prior, obs)
            spec = risk_spec(credible_box(post, alpha))
            gv = value_iteration_oracle(model, spec, grid, tol=tol, v0=warm)
            warm = gv.values
            out[r] = float(np.interp(s0_arr, gv.grid, gv.values)[0])
        return out

    rows = []
    for eps in sorted(pmf_shift_by_eps):
        pmf_shift = pmf_shift_by_eps[eps]
        clean_vals = estimator_sample(pmf_clean, rng.spawn(1)[0])
        shift_vals = estimator_sample(pmf_shift, rng.spawn(1)[0])
        rows.append({
            "eps": float(eps),
            "dk_input": kantorovich_1d_pmf(points, pmf_clean, pmf_shift),
            "dk_laws": kantorovich_1d(np.sort(clean_vals), np.sort(shift_vals)),
        })
    return rows


def consistency_experiment(
    model: ScenarioModel,
    true_pmf: Pmf,
    prior: DirichletPosterior,
    alpha: float,
    n_episodes: int,
    n_seeds: int,
    grid: np.ndarray,
    weights: np.ndarray,
    v_star: GridValue,
    rng: np.random.Generator,
    tol: float = 0.05,
) -> np.ndarray:
    """Integrated gap of the per-episode robust value functions vs the truth.

    Observations are exogenous, so each seed is a posterior chain; the
    episode value function is the grid fixed point under that episode's
    credible box, warm-started along the chain.  Returns the (n_seeds,
    n_episodes) gap array.
    """
    grid = np.asarray(grid, dtype=float)
    gaps = np.empty((n_seeds, n_episodes))
    cdf = np.cumsum(true_pmf.probs)
    seed_rngs = rng.spawn(n_seeds)
    for s, srng in enumerate(seed_rngs):
        obs = np.minimum(np.searchsorted(cdf, srng.random(n_episodes)), len(true_pmf) - 1)
        post = prior
        warm = None
        for n in range(n_episodes):
            spec = risk_spec(credible_box(post, alpha))
            gv = value_iteration_oracle(model, spec, grid, tol=tol, v0=warm)
            warm = gv.values
            gaps[s, n] = integrated_gap(gv, v_star, weights)
            post = posterior_update(post, int(obs[n]))
    return gaps


def comparison_experiment(
    model: ScenarioModel,
    methods: list[MethodKind],
    scenarios: dict[str, Pmf],
    train_pmf: Pmf,
    prior: DirichletPosterior,
    n_episodes: int,
    replications: int,
    config: BocpConfig,
    rng: np.random.Generator,
    rollout_horizon: int = 120,
    n_rollouts: int = 500,
    s0: float = 0.0,
    eval_every: int = 5,
    semidev_direction: str = "above_mean",
    solver: str = "oracle",
    oracle_tol: float = 0.05,
) -> list[dict]:
    """Out-of-sample method comparison: train on clean data, test per scenario.

    Training data are shared across methods within a replication (the
    disturbance stream is exogenous); each evaluated episode's greedy policy
    is rolled out under every scenario pmf.  With solver="oracle" the episode
    value functions are warm-started grid fixed points (fast, fully
    converged); solver="bocp" runs the full cutting-plane episodic loop.
    Returns one row per (method, scenario, episode, replication).
    """
    grid = config.grid(model)
    eval_episodes = sorted(set(range(0, n_episodes, eval_every)) | {n_episodes - 1})
    rows: list[dict] = []
    cdf = np.cumsum(train_pmf.probs)
    rep_rngs = rng.spawn(replications)
    for rep, rep_rng in enumerate(rep_rngs):
        data_rng, run_rng, eval_rng = rep_rng.spawn(3)
        observations = np.minimum(np.searchsorted(cdf, data_rng.random(n_episodes)),
                                  len(train_pmf) - 1)
        rollout_seeds = {(ep, name): eval_rng.spawn(1)[0].bit_generator.seed_seq
                         for ep in eval_episodes for name in sorted(scenarios)}
        for method in methods:
            if solver == "oracle":
                policies = _oracle_policies(model, method, prior, observations,
                                            eval_episodes, grid, oracle_tol)
            else:
                result = run_episodic(model, method, train_pmf, prior, n_episodes,
                                      config, _clone(run_rng), s0=s0, keep_pools=True)
                policies = {ep: extract_grid_policy(model, result.specs[ep],
                                                    result.pools[ep], grid)
                            for ep in eval_episodes}
            for ep in eval_episodes:
                for scen_name, scen_pmf in scenarios.items():
                    ro_rng = np.random.Generator(
                        np.random.Philox(rollout_seeds[(ep, scen_name)]))
                    samples = rollout(model, scen_pmf, policies[ep], s0,
                                      rollout_horizon, n_rollouts, ro_rng)
                    m = metrics(samples, semidev_direction=semidev_direction)
                    rows.append({"method": method.label, "scenario": scen_name,
                                 "episode": ep, "replication": rep, **m})
    return rows


def _clone(gen: np.random.Generator) -> np.random.Generator:
    """Fresh generator with the same state (methods must see identical draws)."""
    out = np.random.Generator(type(gen.bit_generator)(seed=0))
    out.bit_generator.state = gen.bit_generator.state
    return out


def _oracle_policies(model, method, prior, observations, eval_episodes, grid, tol):
    """Greedy policies of the episode fixed points along a posterior chain."""
    from .dist import posterior_update_batch

    policies = {}
    warm = None
    for ep in eval_episodes:
        post = posterior_update_batch(prior, observations[:ep])
        spec = risk_spec(method_box(method, post, prior))
        gv = value_iteration_oracle(model, spec, grid, tol=tol, v0=warm)
        warm = gv.values
        policies[ep] = extract_grid_policy(model, spec, gv, grid)
    return policies
