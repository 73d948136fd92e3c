"""Bellman-operator cutting-plane solver with episodic warm starts.

Each iteration solves the epigraph master LP at a trial state, turns the
optimal value and dual multipliers into a supporting cut of the Bellman
image of the current envelope, and stops once the sup-norm Bellman residual
on a fixed state grid falls below (1 - gamma) * epsilon.  Across episodes,
cuts are re-certified against the updated risk parameters by a per-cut
validity LP before being reused.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lp as lpmod
from .model import ScenarioModel
from .risk import RiskSpec
from .value import (
    Cut,
    CutPool,
    bellman_sweep,
    build_master_lp,
    envelope_eval,
    envelope_lines_1d,
    envelope_values_from_lines,
    envelope_values,
)

__all__ = [
    "BocpConfig",
    "BocpState",
    "IterationRecord",
    "MasterOut",
    "master_solve",
    "generate_cut",
    "residual",
    "run",
    "warm_start_filter",
    "floor_pool",
    "bootstrap_floor",
]

_THETA_TOL = 1e-6
_WARM_TOL = 1e-9


@dataclass(frozen=True)
class BocpConfig:
    epsilon: float = 0.5
    k_max: int = 2000
    n_grid: int = 201
    restart_period: int = 10
    seed: int = 0
    prune_dominated: bool = False

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.k_max < 1 or self.restart_period < 1 or self.n_grid < 2:
            raise ValueError("k_max, restart_period and n_grid must be positive")

    def grid(self, model: ScenarioModel) -> np.ndarray:
        return np.linspace(model.state_lo[0], model.state_hi[0], self.n_grid)


@dataclass(frozen=True)
class IterationRecord:
    k: int
    residual: float
    n_cuts: int
    master_obj: float
    trial_state: float


@dataclass
class BocpState:
    pool: CutPool
    k: int
    trial_state: np.ndarray
    last_residual: float
    converged: bool
    history: list[IterationRecord] = field(default_factory=list)
    envelopes: list[np.ndarray] = field(default_factory=list)  # per-iteration grid values


@dataclass(frozen=True)
class MasterOut:
    a_bar: np.ndarray
    zeta_bar: float
    y_bar: np.ndarray
    obj: float
    duals_a: np.ndarray


def floor_pool(model: ScenarioModel) -> CutPool:
    """Cold-start pool: only the constant floor -C/(1-gamma)."""
    return CutPool(floor=model.value_floor)


def _neighbor_segments(breaks: np.ndarray, n_seg: int, x: float, width: int = 1) -> np.ndarray:
    seg = int(np.searchsorted(breaks, x))
    return np.arange(max(0, seg - width), min(n_seg, seg + width + 1))


def master_solve(
    model: ScenarioModel, spec: RiskSpec, pool: CutPool, s_bar: np.ndarray,
    a_guess: float | None = None,
) -> MasterOut:
    """Solve the epigraph master LP at s_bar and pull the y-row duals.

    For scalar states the cut rows are generated lazily: start from the
    envelope segments around the successors of an action guess (a direct
    minimization when none is supplied), then add any segment the LP solution
    violates and re-solve.  The result is the exact full-LP optimum (omitted
    rows are slack, their duals zero).
    """
    s_bar = np.atleast_1d(np.asarray(s_bar, dtype=float))
    if model.state_dim != 1:
        prog, meta = build_master_lp(model, spec, pool, s_bar)
        sol = lpmod.solve(prog)
        if sol.status != "optimal":
            raise lpmod.LpError(f"master LP returned {sol.status}")
        return MasterOut(sol.x[: meta.n_actions].copy(), float(sol.x[meta.idx_zeta]),
                         sol.x[meta.idx_y].copy(), float(sol.obj),
                         sol.duals[meta.y_rows].copy())

    breaks, offs, slopes = envelope_lines_1d(pool)
    n_seg = offs.size
    if a_guess is None:
        _, guessed = bellman_sweep(model, spec, pool, s_bar, n_coarse=8, action_tol=1e-6)
        a_guess = float(guessed[0])
    j = model.n_scenarios
    a_vec = np.atleast_1d(a_guess)
    # scenarios with zero objective weight leave vv_j slack; skip their checks
    w_low = spec.lam * (spec.center if spec.degenerate else spec.p_low)
    w_band = np.zeros(j) if spec.degenerate else spec.p_band
    relevant = (w_low > 0) | (w_band > 0)
    active = []
    for sc in range(j):
        x_star = float(model.transition(sc, s_bar, a_vec)[0])
        active.append(_neighbor_segments(breaks, n_seg, x_star))

    for rounds in range(9):
        if rounds == 8:
            active = None  # exact fallback: every non-dominated segment
        prog, meta = build_master_lp(model, spec, pool, s_bar, active_lines=active)
        sol = lpmod.solve(prog)
        if sol.status != "optimal":
            raise lpmod.LpError(
                f"master LP at state {s_bar} returned {sol.status}; "
                "the epigraph construction should always be feasible and bounded")
        a_bar = sol.x[: meta.n_actions]
        vv = sol.x[meta.idx_vv]
        clean = True
        if active is not None:
            width = 2 ** rounds
            for sc in range(j):
                if not relevant[sc]:
                    continue
                x_hat = float(model.transition(sc, s_bar, a_bar)[0])
                seg = int(np.searchsorted(breaks, x_hat))
                env_val = offs[seg] + slopes[seg] * x_hat
                if vv[sc] < env_val - 1e-9:
                    active[sc] = np.union1d(active[sc],
                                            _neighbor_segments(breaks, n_seg, x_hat, width))
                    clean = False
        if clean:
            return MasterOut(a_bar.copy(), float(sol.x[meta.idx_zeta]),
                             sol.x[meta.idx_y].copy(), float(sol.obj),
                             sol.duals[meta.y_rows].copy())
    raise lpmod.LpError("master row generation did not settle")


def _active_cost_gradient(model: ScenarioModel, j: int, s: np.ndarray, a: np.ndarray) -> np.ndarray:
    """State gradient of the max-attaining cost piece (lowest index on ties)."""
    best_val, best = -np.inf, None
    for piece in model.cost_pieces[j]:
        val = float(piece.alpha_s @ s + piece.alpha_a @ a + piece.beta)
        if val > best_val + 1e-15:
            best_val, best = val, piece
    return best.alpha_s


def generate_cut(
    model: ScenarioModel,
    spec: RiskSpec,
    pool: CutPool,
    s_bar: np.ndarray,
    master: MasterOut,
) -> Cut:
    """Supporting cut of the Bellman image of the envelope, anchored at s_bar.

    The intercept re-evaluates the mean-CVaR objective at the master optimum
    with exact envelope values; the slope mixes stage-cost state gradients
    with the active cuts' slopes at the successors, weighted by
    lambda p_low + (1-lambda)/(1-upsilon) p_band theta with theta recovered
    from the y-row duals.
    """
    s_bar = np.atleast_1d(np.asarray(s_bar, dtype=float))
    a_bar = master.a_bar
    j = model.n_scenarios
    gamma = model.gamma
    lam, ups = spec.lam, spec.upsilon
    w_low = lam * (spec.center if spec.degenerate else spec.p_low)

    h = np.empty(j)
    grads = np.empty((j, model.state_dim))
    for sc in range(j):
        succ = model.transition(sc, s_bar, a_bar)
        v_succ, active = envelope_eval(pool, succ)
        d = np.zeros(model.state_dim) if active < 0 else pool.cuts[active].slope
        h[sc] = model.stage_cost(sc, s_bar, a_bar) + gamma * v_succ
        grads[sc] = _active_cost_gradient(model, sc, s_bar, a_bar) + gamma * (model.a_mats[sc].T @ d)

    if spec.degenerate:
        theta = np.zeros(j)
        intercept = float(w_low @ h)
    else:
        denom = (1.0 - lam) * spec.p_band
        theta = np.zeros(j)
        ok = denom > 1e-300
        theta[ok] = (1.0 - ups) * master.duals_a[ok] / denom[ok]
        if np.any(theta < -_THETA_TOL) or np.any(theta > 1.0 + _THETA_TOL):
            raise lpmod.LpError(
                f"dual recovery out of range: theta in [{theta.min():.3e}, {theta.max():.3e}]")
        theta = np.clip(theta, 0.0, 1.0)
        zeta = master.zeta_bar
        intercept = (float(w_low @ h) + (1.0 - lam) * zeta
                     + (1.0 - lam) / (1.0 - ups)
                     * float(spec.p_band @ np.maximum(h - zeta, 0.0)))

    weights = w_low if spec.degenerate else w_low + (1.0 - lam) / (1.0 - ups) * spec.p_band * theta
    slope = weights @ grads
    return Cut(anchor=s_bar, intercept=intercept, slope=slope)


def _residual_sweep(model, spec, pool, grid) -> tuple[float, np.ndarray, np.ndarray]:
    # small coarse scan suffices: the action objective is convex
    image, actions = bellman_sweep(model, spec, pool, grid, n_coarse=8, action_tol=1e-5)
    env = envelope_values_from_lines(envelope_lines_1d(pool), grid)
    return float((image - env).max()), actions, env


def residual(model: ScenarioModel, spec: RiskSpec, pool: CutPool, grid: np.ndarray) -> float:
    """Sup over the grid of (Bellman image - envelope); one-sided up to 1e-8."""
    return _residual_sweep(model, spec, pool, np.asarray(grid, dtype=float))[0]


def _record(state: BocpState, keep: bool, env: np.ndarray) -> None:
    if keep:
        state.envelopes.append(env.copy())


def _prune(pool: CutPool, grid: np.ndarray, band: float = 0.0) -> CutPool:
    """Drop cuts that stay below the envelope at every grid point.

    With band = 0 only grid-dominated cuts go; a positive band keeps a ladder
    of nearly-active cuts, which is what survives the next episode's validity
    filter after the ambiguity set shrinks.
    """
    if not pool.cuts:
        return pool
    env = envelope_values(pool, grid)
    keep = []
    for cut in pool.cuts:
        vals = cut.intercept + (grid - cut.anchor[0]) * cut.slope[0]
        if np.any(vals >= env - band - 1e-9):
            keep.append(cut)
    return CutPool(pool.floor, tuple(keep))


def bootstrap_floor(
    model: ScenarioModel,
    spec: RiskSpec,
    grid: np.ndarray,
    max_steps: int = 400,
    rel_tol: float = 1e-4,
) -> CutPool:
    """Certified constant warm-start pool for a cold episode.

    Iterates the constant recursion c <- min_s (Bellman image of c)(s), which
    climbs monotonically from -C/(1-gamma) toward the flat sub-solution
    ceiling; the final level (with a safety backoff) is certified by the same
    per-cut validity LP the episodic warm start uses, so the returned pool is
    a warm-start-filtered valid lower bound.
    """
    grid = np.asarray(grid, dtype=float)
    c = model.value_floor
    for _ in range(max_steps):
        image, _ = bellman_sweep(model, spec, lambda x: np.full(np.shape(x), c), grid,
                                 n_coarse=8, action_tol=1e-5)
        new_c = float(image.min())
        if new_c - c <= rel_tol * (1.0 + abs(new_c)):
            c = new_c
            break
        c = new_c
    # the recursion used grid minima; correct by the exact validity deficit,
    # which is affine in a downward shift with slope (1 - gamma)
    cut = Cut(anchor=np.zeros(model.state_dim), intercept=c,
              slope=np.zeros(model.state_dim))
    prog, const = _cut_validity_lp(model, spec, model.value_floor, cut)
    sol = lpmod.solve(prog)
    if sol.status != "optimal":
        return floor_pool(model)
    deficit = float(sol.obj) + const
    if deficit < 0.0:
        c += deficit / (1.0 - model.gamma)
    cut = Cut(anchor=np.zeros(model.state_dim), intercept=c - 1e-7,
              slope=np.zeros(model.state_dim))
    candidate = CutPool(model.value_floor, (cut,))
    return warm_start_filter(model, spec, candidate)


def run(
    model: ScenarioModel,
    spec: RiskSpec,
    config: BocpConfig,
    initial_pool: CutPool | None = None,
    s0: float | None = None,
    rng: np.random.Generator | None = None,
    record_envelopes: bool = False,
) -> tuple[CutPool, BocpState]:
    """Full cutting-plane loop: master, cut, residual check, next trial state.

    Trial states follow sampled one-step transitions under the reference pmf
    (the box center), with a uniform grid restart every `restart_period`-th
    iteration so that cuts keep being generated across the whole box.
    """
    grid = config.grid(model)
    pool = initial_pool if initial_pool is not None else floor_pool(model)
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    ref_cdf = np.cumsum(spec.center)
    s_bar = np.atleast_1d(float(s0) if s0 is not None
                          else 0.5 * (model.state_lo[0] + model.state_hi[0]))
    state = BocpState(pool=pool, k=0, trial_state=s_bar, last_residual=np.inf, converged=False)
    target = (1.0 - model.gamma) * config.epsilon
    sweep_actions = None
    for k in range(config.k_max):
        # seed the master's row generation with the latest sweep's action
        guess = None
        if sweep_actions is not None:
            guess = float(sweep_actions[int(np.argmin(np.abs(grid - s_bar[0])))])
        master = master_solve(model, spec, pool, s_bar, a_guess=guess)
        cut = generate_cut(model, spec, pool, s_bar, master)
        pool = pool.with_cut(cut)
        if config.prune_dominated:
            pool = _prune(pool, grid)
        delta, sweep_actions, env = _residual_sweep(model, spec, pool, grid)
        _record(state, record_envelopes, env)
        state.history.append(IterationRecord(
            k=k, residual=delta, n_cuts=len(pool), master_obj=master.obj,
            trial_state=float(s_bar[0])))
        state.pool = pool
        state.k = k + 1
        state.last_residual = delta
        if delta <= target:
            state.converged = True
            break
        if (k + 1) % config.restart_period == 0:
            s_bar = np.atleast_1d(float(rng.choice(grid)))
        else:
            j = min(int(np.searchsorted(ref_cdf, rng.random())), model.n_scenarios - 1)
            nxt = model.transition(j, s_bar, master.a_bar)
            s_bar = model.clip_state(nxt)
        state.trial_state = s_bar
    return pool, state


def _cut_validity_lp(
    model: ScenarioModel, spec: RiskSpec, floor: float, cut: Cut
) -> tuple[lpmod.LinearProgram, float]:
    """LP whose optimum is min_s (Bellman image of the single cut - cut)(s).

    Variables (s, a, zeta, y, cc); the cut's value at the affine successor is
    substituted directly, so no epigraph variables for it are needed.
    Returns the program and the constant to add to its optimal value.
    """
    j = model.n_scenarios
    m, n = model.state_dim, model.action_dim
    gamma = model.gamma
    lam, ups = spec.lam, spec.upsilon
    w_low = lam * (spec.center if spec.degenerate else spec.p_low)
    w_band = np.zeros(j) if spec.degenerate else (1.0 - lam) / (1.0 - ups) * spec.p_band

    idx_s = np.arange(m)
    idx_a = m + np.arange(n)
    idx_zeta = m + n
    idx_y = m + n + 1 + np.arange(j)
    idx_cc = m + n + 1 + j + np.arange(j)
    n_vars = m + n + 1 + 2 * j

    # ell(successor_j) = (q A^j) s + (q B^j) a + const_j
    q, v = cut.slope, cut.intercept
    s_coef = np.array([q @ model.a_mats[sc] for sc in range(j)])
    a_coef = np.array([q @ model.b_mats[sc] for sc in range(j)])
    consts = np.array([v + float(q @ (model.b_vecs[sc] - cut.anchor)) for sc in range(j)])

    c = np.zeros(n_vars)
    obj_const = 0.0
    c[idx_cc] = w_low
    c[idx_zeta] = 0.0 if spec.degenerate else 1.0 - lam
    c[idx_y] = w_band
    for sc in range(j):
        c[idx_s] += w_low[sc] * gamma * s_coef[sc]
        c[idx_a] += w_low[sc] * gamma * a_coef[sc]
        obj_const += w_low[sc] * gamma * consts[sc]
    # subtract ell(s) = v + q (s - anchor)
    c[idx_s] -= q
    obj_const -= v - float(q @ cut.anchor)

    rows = []
    rhs = []
    cc_lo = np.empty(j)
    ell_lo = np.empty(j)
    box_lo = np.concatenate([model.state_lo, model.action_lo])
    box_hi = np.concatenate([model.state_hi, model.action_hi])
    for sc in range(j):
        best = -np.inf
        for piece in model.cost_pieces[sc]:
            row = np.zeros(n_vars)
            row[idx_s] = piece.alpha_s
            row[idx_a] = piece.alpha_a
            row[idx_cc[sc]] = -1.0
            rows.append(row)
            rhs.append(-piece.beta)
            coef = np.concatenate([piece.alpha_s, piece.alpha_a])
            best = max(best, piece.beta + float(
                np.sum(np.where(coef >= 0, coef * box_lo, coef * box_hi))))
        cc_lo[sc] = best
        coef = np.concatenate([s_coef[sc], a_coef[sc]])
        ell_lo[sc] = consts[sc] + float(
            np.sum(np.where(coef >= 0, coef * box_lo, coef * box_hi)))
        row = np.zeros(n_vars)
        row[idx_cc[sc]] = 1.0
        row[idx_s] = gamma * s_coef[sc]
        row[idx_a] = gamma * a_coef[sc]
        row[idx_zeta] = -1.0
        row[idx_y[sc]] = -1.0
        rows.append(row)
        rhs.append(-gamma * consts[sc])

    lower = np.full(n_vars, -np.inf)
    upper = np.full(n_vars, np.inf)
    lower[idx_s], upper[idx_s] = model.state_lo, model.state_hi
    lower[idx_a], upper[idx_a] = model.action_lo, model.action_hi
    lower[idx_y] = 0.0
    lower[idx_cc] = cc_lo
    lower[idx_zeta] = float(np.min(cc_lo + gamma * np.minimum(ell_lo, floor))) - 1.0

    prog = lpmod.LinearProgram(c=c, a_mat=np.vstack(rows), senses=("<=",) * len(rows),
                               rhs=np.asarray(rhs), lower=lower, upper=upper)
    return prog, obj_const


def warm_start_filter(model: ScenarioModel, spec_next: RiskSpec, pool: CutPool) -> CutPool:
    """Keep the cuts that remain sub-solutions of the next episode's operator.

    A cut survives when min_s (L_next(ell) - ell)(s) >= -1e-9, checked by an
    exact LP; the constant floor always passes.  Cuts whose LP fails are
    dropped conservatively.
    """
    kept = []
    for cut in pool.cuts:
        try:
            prog, const = _cut_validity_lp(model, spec_next, pool.floor, cut)
            sol = lpmod.solve(prog)
            if sol.status == "optimal" and sol.obj + const >= -_WARM_TOL:
                kept.append(cut)
        except lpmod.LpError:
            continue
    return CutPool(pool.floor, tuple(kept))
