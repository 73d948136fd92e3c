"""Value-function representations and Bellman-operator machinery.

Two interchangeable representations are used: piecewise-affine lower
envelopes built from cut pools (the cutting-plane solver's object) and
dense grids with linear interpolation (the brute-force oracle's object).
Grid interpolants extrapolate linearly with the edge slopes so that both
representations are globally defined convex functions and the action
minimization stays convex; simulated trajectories, by contrast, are always
projected back into the state box.

The epigraph LP for a cut-pool Bellman step is built here and shared with
the cutting-plane solver, which extracts dual multipliers from it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lp as lpmod
from .dist import Pmf
from .model import ScenarioModel
from .risk import RiskSpec, rho_batch

__all__ = [
    "Cut",
    "CutPool",
    "GridValue",
    "MasterMeta",
    "envelope_eval",
    "envelope_values",
    "envelope_lines_1d",
    "grid_eval",
    "build_master_lp",
    "bellman_apply",
    "bellman_sweep",
    "value_iteration_oracle",
    "policy_eval_fixed_point",
    "extract_grid_policy",
    "rollout",
    "metrics",
    "truncation_horizon",
    "stationary_weights",
]


@dataclass(frozen=True)
class Cut:
    """Affine minorant v + q @ (s - anchor)."""

    anchor: np.ndarray
    intercept: float
    slope: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.anchor, dtype=float))
        q = np.atleast_1d(np.asarray(self.slope, dtype=float))
        if a.shape != q.shape:
            raise ValueError("anchor and slope must have equal dimension")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(q))
                and np.isfinite(self.intercept)):
            raise ValueError("cut entries must be finite")
        object.__setattr__(self, "anchor", a)
        object.__setattr__(self, "slope", q)

    def __call__(self, s: np.ndarray) -> float:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        return self.intercept + float(self.slope @ (s - self.anchor))


@dataclass(frozen=True)
class CutPool:
    """Lower envelope max(floor, max_eta cut_eta); cuts in insertion order."""

    floor: float
    cuts: tuple[Cut, ...] = ()

    def with_cut(self, cut: Cut) -> "CutPool":
        return CutPool(self.floor, self.cuts + (cut,))

    def __len__(self) -> int:
        return len(self.cuts)


@dataclass(frozen=True)
class GridValue:
    """Values sampled on a strictly increasing 1-D state grid."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if g.ndim != 1 or g.size < 2:
            raise ValueError("grid needs at least two points")
        if np.any(np.diff(g) <= 0):
            raise ValueError("grid must be strictly increasing")
        if v.shape != g.shape:
            raise ValueError("values must match the grid")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)


def _cut_columns_1d(pool: CutPool) -> tuple[np.ndarray, np.ndarray]:
    """Memoized (offsets, slopes) arrays of a scalar-state pool's cuts."""
    cached = pool.__dict__.get("_cols_1d")
    if cached is not None:
        return cached
    offs = np.array([c.intercept - float(c.slope[0]) * float(c.anchor[0]) for c in pool.cuts])
    slopes = np.array([float(c.slope[0]) for c in pool.cuts])
    cols = (offs, slopes)
    object.__setattr__(pool, "_cols_1d", cols)
    return cols


def envelope_eval(pool: CutPool, s: np.ndarray) -> tuple[float, int]:
    """Envelope value and active cut index at one state.

    Index -1 denotes the floor; among ties the lowest cut index wins, with
    the floor keeping ties against cuts.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if not pool.cuts:
        return pool.floor, -1
    if s.size == 1:
        offs, slopes = _cut_columns_1d(pool)
        vals = offs + slopes * float(s[0])
        idx = int(np.argmax(vals))
        if vals[idx] > pool.floor:
            return float(vals[idx]), idx
        return pool.floor, -1
    best_val, best_idx = pool.floor, -1
    for idx, cut in enumerate(pool.cuts):
        val = cut(s)
        if val > best_val:
            best_val, best_idx = val, idx
    return best_val, best_idx


def envelope_values(pool: CutPool, states: np.ndarray) -> np.ndarray:
    """Vectorized envelope values at an array of scalar states."""
    x = np.asarray(states, dtype=float)
    if not pool.cuts:
        return np.full(x.shape, pool.floor)
    offs, slopes = _cut_columns_1d(pool)
    vals = x[..., None] * slopes + offs
    return np.maximum(vals.max(axis=-1), pool.floor)


def envelope_lines_1d(pool: CutPool) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Non-dominated lines (offsets, slopes) of a 1-D envelope and breakpoints.

    Returns (breaks, offs, slopes): segment i is active on
    [breaks[i-1], breaks[i]] with value offs[i] + slopes[i] * x.  The floor is
    included as a slope-0 line, so the result represents the envelope exactly.
    Memoized per pool instance (pools are immutable).
    """
    cached = pool.__dict__.get("_lines_1d")
    if cached is not None:
        return cached
    offs = [pool.floor]
    slopes = [0.0]
    for c in pool.cuts:
        if c.anchor.size != 1:
            raise ValueError("1-D reduction requires scalar-state cuts")
        slopes.append(float(c.slope[0]))
        offs.append(c.intercept - float(c.slope[0]) * float(c.anchor[0]))
    order = np.lexsort((np.asarray(offs), np.asarray(slopes)))
    slopes_s = np.asarray(slopes)[order]
    offs_s = np.asarray(offs)[order]
    # keep the highest offset among equal slopes, then hull-sweep
    keep_q: list[float] = []
    keep_b: list[float] = []
    for q, b in zip(slopes_s, offs_s):
        if keep_q and q == keep_q[-1]:
            keep_b[-1] = b  # sorted ascending, so b is the larger offset
            continue
        keep_q.append(q)
        keep_b.append(b)
    hull_q: list[float] = []
    hull_b: list[float] = []
    hull_x: list[float] = [-np.inf]  # hull_x[i]: left breakpoint of hull line i
    for q, b in zip(keep_q, keep_b):
        while hull_q:
            x_cross = (hull_b[-1] - b) / (q - hull_q[-1])
            if x_cross <= hull_x[-1]:
                hull_q.pop()
                hull_b.pop()
                hull_x.pop()
                continue
            hull_q.append(q)
            hull_b.append(b)
            hull_x.append(x_cross)
            break
        if not hull_q:
            hull_q.append(q)
            hull_b.append(b)
    breaks = np.asarray(hull_x[1:])
    lines = (breaks, np.asarray(hull_b), np.asarray(hull_q))
    object.__setattr__(pool, "_lines_1d", lines)
    return lines


def envelope_values_from_lines(lines, x: np.ndarray) -> np.ndarray:
    breaks, offs, slopes = lines
    idx = np.searchsorted(breaks, x)
    return offs[idx] + slopes[idx] * x


def grid_eval(gv: GridValue, x: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation with linear edge extrapolation."""
    x = np.asarray(x, dtype=float)
    g, v = gv.grid, gv.values
    idx = np.clip(np.searchsorted(g, x), 1, g.size - 1)
    x0, x1 = g[idx - 1], g[idx]
    w = (x - x0) / (x1 - x0)
    return v[idx - 1] * (1.0 - w) + v[idx] * w


@dataclass(frozen=True)
class _CostTables:
    """Padded per-scenario affine piece arrays for vectorized cost evaluation."""

    alpha_s: np.ndarray  # (J, P)
    alpha_a: np.ndarray  # (J, P)
    beta: np.ndarray     # (J, P)


def _cost_tables(model: ScenarioModel) -> _CostTables:
    if model.state_dim != 1 or model.action_dim != 1:
        raise ValueError("vectorized evaluation supports scalar state and action")
    j = model.n_scenarios
    p = max(len(pieces) for pieces in model.cost_pieces)
    al_s = np.empty((j, p))
    al_a = np.empty((j, p))
    be = np.empty((j, p))
    for i, pieces in enumerate(model.cost_pieces):
        padded = list(pieces) + [pieces[0]] * (p - len(pieces))
        al_s[i] = [float(pc.alpha_s[0]) for pc in padded]
        al_a[i] = [float(pc.alpha_a[0]) for pc in padded]
        be[i] = [pc.beta for pc in padded]
    return _CostTables(al_s, al_a, be)


def _stage_cost_batch(tables: _CostTables, s: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Stage costs, shape (K, J), for state/action vectors of shape (K,)."""
    s_col = s[:, None]
    a_col = a[:, None]
    out = tables.alpha_s[None, :, 0] * s_col + tables.alpha_a[None, :, 0] * a_col + tables.beta[None, :, 0]
    for p in range(1, tables.beta.shape[1]):
        np.maximum(out,
                   tables.alpha_s[None, :, p] * s_col + tables.alpha_a[None, :, p] * a_col
                   + tables.beta[None, :, p],
                   out=out)
    return out


@dataclass(frozen=True)
class MasterMeta:
    """Column/row bookkeeping of the epigraph master LP."""

    n_actions: int
    idx_zeta: int
    idx_y: np.ndarray
    idx_cc: np.ndarray
    idx_vv: np.ndarray
    y_rows: np.ndarray
    successors_const: np.ndarray  # A^j s_bar + b^j per scenario, shape (J, m)


def build_master_lp(
    model: ScenarioModel,
    spec: RiskSpec,
    pool: CutPool,
    s_bar: np.ndarray,
    active_lines: list[np.ndarray] | None = None,
) -> tuple[lpmod.LinearProgram, MasterMeta]:
    """Epigraph LP of the one-step mean-CVaR problem at state s_bar.

    Variables are (a, zeta, y, cc, vv): cc_j majorizes the stage-cost pieces,
    vv_j majorizes the cut envelope at the affine successor, y_j the positive
    part cc_j + gamma vv_j - zeta.  For scalar states, cut rows are reduced to
    the lines of the envelope that are non-dominated on each scenario's
    reachable successor interval, which leaves the optimum and duals intact;
    `active_lines` (per-scenario indices into the envelope's line list)
    restricts them further for delayed row generation.
    """
    s_bar = np.atleast_1d(np.asarray(s_bar, dtype=float))
    j = model.n_scenarios
    n = model.action_dim
    m = model.state_dim
    gamma = model.gamma

    idx_zeta = n
    idx_y = n + 1 + np.arange(j)
    idx_cc = n + 1 + j + np.arange(j)
    idx_vv = n + 1 + 2 * j + np.arange(j)
    n_vars = n + 1 + 3 * j

    lam, ups = spec.lam, spec.upsilon
    w_low = lam * (spec.center if spec.degenerate else spec.p_low)
    w_band = np.zeros(j) if spec.degenerate else (1.0 - lam) / (1.0 - ups) * spec.p_band

    c = np.zeros(n_vars)
    c[:n] = 0.0
    c[idx_zeta] = 1.0 - lam if not spec.degenerate else 0.0
    c[idx_y] = w_band
    c[idx_cc] = w_low
    c[idx_vv] = gamma * w_low

    rows: list[np.ndarray] = []
    rhs: list[float] = []
    succ_const = np.empty((j, m))
    cc_lo = np.empty(j)

    lines = envelope_lines_1d(pool) if m == 1 else None

    for sc in range(j):
        succ_const[sc] = model.a_mats[sc] @ s_bar + model.b_vecs[sc]
        # stage-cost epigraph rows: alpha_a @ a - cc_j <= -(alpha_s @ s_bar + beta)
        piece_lo = -np.inf
        for piece in model.cost_pieces[sc]:
            row = np.zeros(n_vars)
            row[:n] = piece.alpha_a
            row[idx_cc[sc]] = -1.0
            rows.append(row)
            rhs.append(-(float(piece.alpha_s @ s_bar) + piece.beta))
            const = float(piece.alpha_s @ s_bar) + piece.beta
            lo_val = const + float(np.sum(np.where(piece.alpha_a >= 0,
                                                   piece.alpha_a * model.action_lo,
                                                   piece.alpha_a * model.action_hi)))
            piece_lo = max(piece_lo, lo_val)
        cc_lo[sc] = piece_lo

        # cut envelope rows at the affine successor
        if m == 1:
            b_col = model.b_mats[sc][0]
            x0 = float(succ_const[sc][0])
            breaks, offs, slopes = lines
            if active_lines is not None:
                segs = active_lines[sc]
            else:
                ends = [x0 + float(b_col @ model.action_lo), x0 + float(b_col @ model.action_hi)]
                seg_lo = int(np.searchsorted(breaks, min(ends)))
                seg_hi = int(np.searchsorted(breaks, max(ends)))
                segs = range(seg_lo, seg_hi + 1)
            for seg in segs:
                row = np.zeros(n_vars)
                row[:n] = slopes[seg] * b_col
                row[idx_vv[sc]] = -1.0
                rows.append(row)
                rhs.append(-(offs[seg] + slopes[seg] * x0))
        else:
            row = np.zeros(n_vars)
            row[idx_vv[sc]] = -1.0
            rows.append(row)
            rhs.append(-pool.floor)
            for cut in pool.cuts:
                row = np.zeros(n_vars)
                row[:n] = cut.slope @ model.b_mats[sc]
                row[idx_vv[sc]] = -1.0
                rows.append(row)
                rhs.append(-(cut.intercept + float(cut.slope @ (succ_const[sc] - cut.anchor))))

    y_rows = []
    for sc in range(j):
        row = np.zeros(n_vars)
        row[idx_cc[sc]] = 1.0
        row[idx_vv[sc]] = gamma
        row[idx_zeta] = -1.0
        row[idx_y[sc]] = -1.0
        y_rows.append(len(rows))
        rows.append(row)
        rhs.append(0.0)

    lower = np.full(n_vars, -np.inf)
    upper = np.full(n_vars, np.inf)
    lower[:n] = model.action_lo
    upper[:n] = model.action_hi
    lower[idx_y] = 0.0
    lower[idx_cc] = cc_lo
    lower[idx_vv] = pool.floor
    zeta_lo = float(np.min(cc_lo + gamma * pool.floor)) - 1.0
    lower[idx_zeta] = zeta_lo

    prog = lpmod.LinearProgram(
        c=c,
        a_mat=np.vstack(rows),
        senses=("<=",) * len(rows),
        rhs=np.asarray(rhs),
        lower=lower,
        upper=upper,
    )
    meta = MasterMeta(
        n_actions=n,
        idx_zeta=idx_zeta,
        idx_y=idx_y,
        idx_cc=idx_cc,
        idx_vv=idx_vv,
        y_rows=np.asarray(y_rows, dtype=int),
        successors_const=succ_const,
    )
    return prog, meta


def _value_batch_fn(v):
    """Batch evaluator x -> V(x) for either representation."""
    if isinstance(v, GridValue):
        return lambda x: grid_eval(v, x)
    if isinstance(v, CutPool):
        lines = envelope_lines_1d(v)
        return lambda x: envelope_values_from_lines(lines, x)
    if callable(v):
        return v
    raise TypeError(f"unsupported value representation {type(v)!r}")


def bellman_sweep(
    model: ScenarioModel,
    spec: RiskSpec,
    v,
    states: np.ndarray,
    n_coarse: int = 64,
    action_tol: float = 1e-8,
) -> tuple[np.ndarray, np.ndarray]:
    """Apply the mean-CVaR Bellman operator at many states at once.

    Coarse action scan followed by vectorized golden-section refinement; the
    objective is convex in the action (convex costs, affine successor, convex
    value function, monotone convex risk), so this is exact to the bracket
    tolerance.  Returns (values, minimizing actions).
    """
    states = np.atleast_1d(np.asarray(states, dtype=float))
    tables = _cost_tables(model)
    value_at = _value_batch_fn(v)
    a_mat = model.a_mats[:, 0, 0]
    b_mat = model.b_mats[:, 0, 0]
    b_vec = model.b_vecs[:, 0]
    gamma = model.gamma
    a_lo, a_hi = float(model.action_lo[0]), float(model.action_hi[0])

    def objective(a: np.ndarray) -> np.ndarray:
        cost = _stage_cost_batch(tables, states, a)
        x = a_mat[None, :] * states[:, None] + b_mat[None, :] * a[:, None] + b_vec[None, :]
        h = cost + gamma * value_at(x)
        return rho_batch(spec, h)

    grid_a = np.linspace(a_lo, a_hi, n_coarse)
    best_val = np.full(states.shape, np.inf)
    best_a = np.full(states.shape, a_lo)
    for a in grid_a:
        vals = objective(np.full(states.shape, a))
        better = vals < best_val
        best_val = np.where(better, vals, best_val)
        best_a = np.where(better, a, best_a)

    step = (a_hi - a_lo) / (n_coarse - 1)
    lo = np.maximum(a_lo, best_a - step)
    hi = np.minimum(a_hi, best_a + step)
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)
    f1 = objective(x1)
    f2 = objective(x2)
    span = 2.0 * step
    n_iter = max(0, int(np.ceil(np.log(max(action_tol, 1e-15) / max(span, action_tol))
                                / np.log(invphi))))
    for _ in range(n_iter):
        shrink_right = f1 < f2  # minimum lies in [lo, x2]
        hi = np.where(shrink_right, x2, hi)
        lo = np.where(shrink_right, lo, x1)
        new_x1 = hi - invphi * (hi - lo)
        new_x2 = lo + invphi * (hi - lo)
        x_eval = np.where(shrink_right, new_x1, new_x2)
        f_eval = objective(x_eval)
        # reuse: old x1 becomes the right probe, or old x2 the left probe
        x1, x2, f1, f2 = (
            np.where(shrink_right, new_x1, x2),
            np.where(shrink_right, x1, new_x2),
            np.where(shrink_right, f_eval, f2),
            np.where(shrink_right, f1, f_eval),
        )
    mid = 0.5 * (lo + hi)
    f_mid = objective(mid)
    improve = f_mid < best_val
    return np.where(improve, f_mid, best_val), np.where(improve, mid, best_a)


def bellman_apply(
    model: ScenarioModel, spec: RiskSpec, v, s: np.ndarray
) -> tuple[float, np.ndarray]:
    """One Bellman-operator application at a single state.

    Cut pools go through the epigraph LP; grid values (and callables) through
    the interpolated action scan with golden-section refinement.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if isinstance(v, CutPool):
        prog, meta = build_master_lp(model, spec, v, s)
        sol = lpmod.solve(prog)
        if sol.status != "optimal":
            raise lpmod.LpError(f"master LP returned status {sol.status}")
        return float(sol.obj), sol.x[: meta.n_actions].copy()
    vals, acts = bellman_sweep(model, spec, v, s)
    return float(vals[0]), np.atleast_1d(acts[0])


def value_iteration_oracle(
    model: ScenarioModel,
    spec: RiskSpec,
    grid: np.ndarray,
    tol: float = 1e-2,
    max_iters: int = 5000,
    v0: np.ndarray | None = None,
    inner_evals: int = 80,
) -> GridValue:
    """Fixed point of the Bellman operator on a state grid, to sup-error tol.

    Iterates V <- LV with the vectorized sweep until the sup-change of a full
    sweep falls below tol * (1 - gamma) / (2 * gamma), which bounds the
    distance to the fixed point by tol on the grid.  Between full sweeps the
    greedy actions are held fixed for `inner_evals` cheap evaluation sweeps
    (modified policy iteration); the stopping rule is still measured on full
    sweeps, so the advertised tolerance is unaffected.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    grid = np.asarray(grid, dtype=float)
    tables = _cost_tables(model)
    gamma = model.gamma
    threshold = tol * (1.0 - gamma) / (2.0 * gamma)
    values = np.zeros_like(grid) if v0 is None else np.asarray(v0, dtype=float).copy()
    growth_streak = 0
    last_change = np.inf
    for _ in range(max_iters):
        new_vals, actions = bellman_sweep(model, spec, GridValue(grid, values), grid)
        change = float(np.abs(new_vals - values).max())
        values = new_vals
        if change <= threshold:
            return GridValue(grid, values)
        growth_streak = growth_streak + 1 if change > last_change * (1 + 1e-9) else 0
        if growth_streak >= 5:
            raise RuntimeError(f"value iteration diverging, sup-change {change:.3e}")
        last_change = change
        if inner_evals:
            cost = _stage_cost_batch(tables, grid, actions)
            x = (model.a_mats[None, :, 0, 0] * grid[:, None]
                 + model.b_mats[None, :, 0, 0] * actions[:, None]
                 + model.b_vecs[None, :, 0])
            idx = np.clip(np.searchsorted(grid, x), 1, grid.size - 1)
            x0, x1 = grid[idx - 1], grid[idx]
            w = (x - x0) / (x1 - x0)
            inner_prev = change
            for _ in range(inner_evals):
                v_succ = values[idx - 1] * (1.0 - w) + values[idx] * w
                inner_new = rho_batch(spec, cost + gamma * v_succ)
                inner_change = float(np.abs(inner_new - values).max())
                values = inner_new
                if inner_change <= 0.25 * threshold or inner_change > 2.0 * inner_prev:
                    break
                inner_prev = inner_change
    raise RuntimeError(f"value iteration did not reach tol={tol} in {max_iters} "
                       f"iterations; last sup-change {last_change:.3e}")


def policy_eval_fixed_point(
    model: ScenarioModel,
    pmf: Pmf,
    policy,
    grid: np.ndarray,
    tol: float = 1e-2,
    max_iters: int = 20000,
    v0: np.ndarray | None = None,
) -> GridValue:
    """Fixed point of the policy-evaluation operator under a fixed pmf."""
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    grid = np.asarray(grid, dtype=float)
    tables = _cost_tables(model)
    gamma = model.gamma
    probs = pmf.probs
    actions = np.clip(np.atleast_1d(np.asarray(policy(grid), dtype=float)),
                      model.action_lo[0], model.action_hi[0])
    cost = _stage_cost_batch(tables, grid, actions)  # (M, J)
    x = (model.a_mats[None, :, 0, 0] * grid[:, None]
         + model.b_mats[None, :, 0, 0] * actions[:, None]
         + model.b_vecs[None, :, 0])
    idx = np.clip(np.searchsorted(grid, x), 1, grid.size - 1)
    x0, x1 = grid[idx - 1], grid[idx]
    w = (x - x0) / (x1 - x0)
    threshold = tol * (1.0 - gamma) / (2.0 * gamma)
    values = np.zeros_like(grid) if v0 is None else np.asarray(v0, dtype=float).copy()
    for _ in range(max_iters):
        v_succ = values[idx - 1] * (1.0 - w) + values[idx] * w
        new_vals = (cost + gamma * v_succ) @ probs
        change = float(np.abs(new_vals - values).max())
        values = new_vals
        if change <= threshold:
            return GridValue(grid, values)
    raise RuntimeError(f"policy evaluation did not reach tol={tol} in {max_iters} iterations")


def extract_grid_policy(model: ScenarioModel, spec: RiskSpec, v, grid: np.ndarray):
    """Greedy policy on a grid, interpolated between grid points."""
    grid = np.asarray(grid, dtype=float)
    _, actions = bellman_sweep(model, spec, v, grid)
    gv = GridValue(grid, actions)

    def policy(s: np.ndarray) -> np.ndarray:
        a = grid_eval(gv, np.asarray(s, dtype=float))
        return np.clip(a, model.action_lo[0], model.action_hi[0])

    return policy


def truncation_horizon(gamma: float, cost_bound: float, eps: float) -> int:
    """Smallest T with discounted tail below eps: T >= log(eps(1-g)/C)/log g."""
    t = np.log(eps * (1.0 - gamma) / cost_bound) / np.log(gamma)
    return int(np.ceil(t))


def rollout(
    model: ScenarioModel,
    pmf_true: Pmf,
    policy,
    s0: float,
    horizon: int,
    n_paths: int,
    rng: np.random.Generator,
    record_traces: bool = False,
):
    """Discounted-cost samples of a policy over truncated simulated paths.

    Disturbance indices are drawn i.i.d. from pmf_true; successor states are
    projected into the state box.  Returns the (n_paths,) cost array, plus a
    trace dict of (n_paths, horizon) arrays when record_traces is set.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    tables = _cost_tables(model)
    a_mat = model.a_mats[:, 0, 0]
    b_mat = model.b_mats[:, 0, 0]
    b_vec = model.b_vecs[:, 0]
    xi = model.support.scalars()
    cdf = np.cumsum(pmf_true.probs)
    states = np.full(n_paths, float(s0))
    total = np.zeros(n_paths)
    disc = 1.0
    traces = {k: np.empty((n_paths, horizon)) for k in ("s", "a", "xi", "cost")} \
        if record_traces else None
    for t in range(horizon):
        actions = np.clip(np.atleast_1d(np.asarray(policy(states), dtype=float)),
                          model.action_lo[0], model.action_hi[0])
        draws = np.minimum(np.searchsorted(cdf, rng.random(n_paths)), xi.size - 1)
        vals = (tables.alpha_s[draws] * states[:, None]
                + tables.alpha_a[draws] * actions[:, None]
                + tables.beta[draws])
        cost = vals.max(axis=-1)
        total += disc * cost
        if record_traces:
            traces["s"][:, t] = states
            traces["a"][:, t] = actions
            traces["xi"][:, t] = xi[draws]
            traces["cost"][:, t] = cost
        states = a_mat[draws] * states + b_mat[draws] * actions + b_vec[draws]
        states = np.clip(states, model.state_lo[0], model.state_hi[0])
        disc *= model.gamma
    if record_traces:
        return total, traces
    return total


def metrics(samples: np.ndarray, semidev_direction: str = "above_mean") -> dict[str, float]:
    """Mean, empirical CVaR at 0.95 and downside semi-deviation of cost samples.

    The CVaR uses fractional weight on the boundary order statistic (exact
    discrete CVaR of the empirical law).  Costs are losses, so the default
    semi-deviation direction is E[(X - mean)^+]; the alternative
    E[(mean - X)^+] sits behind `semidev_direction="below_mean"`.
    """
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two samples")
    from .risk import cvar_discrete

    mean = float(x.mean())
    uniform = np.full(x.size, 1.0 / x.size)
    cvar95 = cvar_discrete(uniform, x, 0.95)
    if semidev_direction == "above_mean":
        semidev = float(np.maximum(x - mean, 0.0).mean())
    elif semidev_direction == "below_mean":
        semidev = float(np.maximum(mean - x, 0.0).mean())
    else:
        raise ValueError(f"unknown semidev direction {semidev_direction!r}")
    return {"mean": mean, "cvar95": cvar95, "semidev": semidev}


def stationary_weights(
    model: ScenarioModel,
    pmf_true: Pmf,
    policy,
    grid: np.ndarray,
    burn_in: int,
    n_steps: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Occupation weights of the controlled chain on the grid cells."""
    grid = np.asarray(grid, dtype=float)
    if n_steps < grid.size:
        raise ValueError("need at least one step per grid cell")
    a_mat = model.a_mats[:, 0, 0]
    b_mat = model.b_mats[:, 0, 0]
    b_vec = model.b_vecs[:, 0]
    cdf = np.cumsum(pmf_true.probs)
    s = float(grid[grid.size // 2])
    visits = np.zeros(grid.size)
    mids = 0.5 * (grid[:-1] + grid[1:])
    for t in range(burn_in + n_steps):
        a = float(np.clip(np.atleast_1d(policy(np.array([s])))[0],
                          model.action_lo[0], model.action_hi[0]))
        j = min(int(np.searchsorted(cdf, rng.random())), len(cdf) - 1)
        s = float(np.clip(a_mat[j] * s + b_mat[j] * a + b_vec[j],
                          model.state_lo[0], model.state_hi[0]))
        if t >= burn_in:
            visits[int(np.digitize(s, mids))] += 1.0
    return visits / visits.sum()
