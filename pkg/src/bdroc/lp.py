"""Dense linear-program solver with primal solution and dual multipliers.

Sized for cutting-plane master problems: tens of variables, a few hundred
rows.  Convention:

    min  c @ x
    s.t. row i:  g_i @ x <= rhs_i   (sense "<=")  or  g_i @ x == rhs_i ("==")
         lower <= x <= upper        (+-inf allowed per entry)

Duals `mu` satisfy stationarity  c + G.T @ mu = r  with mu >= 0 on "<=" rows
and free sign on "==" rows; `r` are the reduced costs (>= 0 at a lower bound,
<= 0 at an upper bound, ~0 for interior variables).

Internally the problem is put in standard form (shift/flip/split of bounded,
flipped and free variables; equalities as two inequalities with shared dual
recovery) and solved by a dense two-phase simplex.  Pricing is most-negative
by default and switches to Bland's rule after a degenerate streak, which
guarantees termination; both rules break ties by lowest index, so the solve
is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["LinearProgram", "LpSolution", "KktReport", "LpError", "solve", "verify_kkt", "format_lp"]

FEAS_TOL = 1e-9
PIVOT_TOL = 1e-11
RESIDUAL_BUDGET = 1e-8
_BLAND_AFTER = 24  # degenerate pivots before switching to Bland pricing


class LpError(RuntimeError):
    """Numerical failure inside the simplex kernel."""


@dataclass(frozen=True)
class LinearProgram:
    c: np.ndarray
    a_mat: np.ndarray
    senses: tuple[str, ...]
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        a = np.atleast_2d(np.asarray(self.a_mat, dtype=float))
        rhs = np.atleast_1d(np.asarray(self.rhs, dtype=float))
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if c.ndim != 1 or c.size < 1:
            raise ValueError("objective must be a nonempty vector")
        if a.shape != (rhs.size, c.size):
            raise ValueError(f"constraint matrix shape {a.shape} does not match "
                             f"{rhs.size} rows x {c.size} variables")
        if lo.shape != c.shape or hi.shape != c.shape:
            raise ValueError("bounds must match the variable count")
        if len(self.senses) != rhs.size:
            raise ValueError("one sense per row required")
        for s in self.senses:
            if s not in ("<=", "=="):
                raise ValueError(f"unknown row sense {s!r}")
        for arr in (c, a, rhs):
            if not np.all(np.isfinite(arr)):
                raise ValueError("objective, matrix and rhs entries must be finite")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("bounds must not be NaN")
        if np.any(lo > hi):
            raise ValueError("lower bound above upper bound")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "a_mat", a)
        object.__setattr__(self, "rhs", rhs)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.rhs.size


@dataclass(frozen=True)
class LpSolution:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None = None
    obj: float | None = None
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    iterations: int = 0


@dataclass(frozen=True)
class KktReport:
    primal_residual: float
    dual_residual: float
    complementarity: float
    duality_gap: float

    @property
    def max_residual(self) -> float:
        return max(self.primal_residual, self.dual_residual,
                   self.complementarity, self.duality_gap)


def _simplex(tableau, basis, costs, allowed, max_iter):
    """Dense simplex on T = [B^-1 A | B^-1 b]; mutates tableau/basis in place.

    Returns "optimal" or "unbounded".  Entering rule is most-negative reduced
    cost until a degenerate streak, then Bland's lowest-index rule; the ratio
    test always breaks ties on the lowest basis variable index.  Reduced
    costs are maintained incrementally and refreshed periodically.
    """
    ncols = tableau.shape[1] - 1
    degenerate_streak = 0
    red = costs - costs[basis] @ tableau[:, :ncols]
    for it in range(max_iter):
        if it % 128 == 127:
            red = costs - costs[basis] @ tableau[:, :ncols]
        candidates = np.flatnonzero((red < -FEAS_TOL) & allowed)
        if candidates.size == 0:
            return "optimal", it
        if degenerate_streak >= _BLAND_AFTER:
            enter = int(candidates[0])  # Bland: lowest eligible index
        else:
            enter = int(candidates[np.argmin(red[candidates])])
        col = tableau[:, enter].copy()
        pos = np.flatnonzero(col > PIVOT_TOL)
        if pos.size == 0:
            return "unbounded", it
        ratios = tableau[pos, -1] / col[pos]
        best = ratios.min()
        ties = pos[np.flatnonzero(ratios <= best + PIVOT_TOL)]
        leave_row = int(ties[np.argmin(basis[ties])])
        degenerate_streak = degenerate_streak + 1 if best <= FEAS_TOL else 0
        piv = col[leave_row]
        piv_row = tableau[leave_row] / piv
        tableau -= np.outer(col, piv_row)
        tableau[leave_row] = piv_row
        red -= red[enter] * piv_row[:ncols]
        basis[leave_row] = enter
        tableau[:, enter] = 0.0
        tableau[leave_row, enter] = 1.0
        red[enter] = 0.0
    raise LpError(f"simplex iteration cap {max_iter} exceeded "
                  f"(m={tableau.shape[0]}, n={ncols}); possible numerical cycling")


def solve(lp: LinearProgram) -> LpSolution:
    """Two-phase dense simplex; returns primal, duals and reduced costs."""
    n = lp.n_vars

    # variable substitutions to z >= 0:
    #   both/lower finite: x = lo + z   (upper finite adds a bound row)
    #   upper finite only: x = hi - z
    #   free:              x = z+ - z-
    lo_fin = np.isfinite(lp.lower)
    hi_fin = np.isfinite(lp.upper)
    pos_col = np.empty(n, dtype=int)
    neg_col = np.full(n, -1, dtype=int)
    shift = np.zeros(n)
    sign = np.ones(n)
    col_count = 0
    bound_cols: list[int] = []
    bound_caps: list[float] = []
    for j in range(n):
        pos_col[j] = col_count
        if lo_fin[j]:
            shift[j] = lp.lower[j]
            if hi_fin[j]:
                bound_cols.append(col_count)
                bound_caps.append(lp.upper[j] - lp.lower[j])
            col_count += 1
        elif hi_fin[j]:
            shift[j] = lp.upper[j]
            sign[j] = -1.0
            col_count += 1
        else:
            neg_col[j] = col_count + 1
            col_count += 2
    # substitution matrix: x = shift + sub @ z
    sub = np.zeros((n, col_count))
    sub[np.arange(n), pos_col] = sign
    has_neg = neg_col >= 0
    sub[np.flatnonzero(has_neg), neg_col[has_neg]] = -1.0

    # rows: equalities become a <=/>= pair sharing dual recovery
    eq = np.asarray([s == "==" for s in lp.senses])
    n_struct_rows = lp.n_rows + int(eq.sum())
    g_all = np.empty((n_struct_rows, n))
    b_all = np.empty(n_struct_rows)
    row_origin = np.empty(n_struct_rows, dtype=int)
    row_sign = np.empty(n_struct_rows)
    r = 0
    for i in range(lp.n_rows):
        g_all[r] = lp.a_mat[i]
        b_all[r] = lp.rhs[i]
        row_origin[r], row_sign[r] = i, 1.0
        r += 1
        if eq[i]:
            g_all[r] = -lp.a_mat[i]
            b_all[r] = -lp.rhs[i]
            row_origin[r], row_sign[r] = i, -1.0
            r += 1

    m = n_struct_rows + len(bound_cols)
    amat = np.zeros((m, col_count))
    rhs = np.empty(m)
    amat[:n_struct_rows] = g_all @ sub
    rhs[:n_struct_rows] = b_all - g_all @ shift
    if bound_cols:
        amat[n_struct_rows + np.arange(len(bound_cols)), bound_cols] = 1.0
        rhs[n_struct_rows:] = bound_caps

    # all internal rows are <=, so one artificial column x0 (coefficient -1 in
    # every row) reaches feasibility in a single pivot on the most-violated row
    n_real = col_count + m
    full = np.hstack([amat, np.eye(m), -np.ones((m, 1))])
    ncols = n_real + 1
    tableau = np.hstack([full, rhs[:, None]])
    basis = col_count + np.arange(m)

    max_iter = 2000 + 60 * (m + ncols)

    if rhs.min() < 0.0:
        r0 = int(np.argmin(rhs))
        piv_col = n_real  # x0 enters on the most violated row
        tableau[r0] /= tableau[r0, piv_col]
        other = np.arange(m) != r0
        tableau[other] -= np.outer(tableau[other, piv_col], tableau[r0])
        basis[r0] = piv_col
        tableau[:, piv_col] = 0.0
        tableau[r0, piv_col] = 1.0
        costs1 = np.zeros(ncols)
        costs1[n_real] = 1.0
        allowed = np.ones(ncols, dtype=bool)
        status, _ = _simplex(tableau, basis, costs1, allowed, max_iter)
        phase1_obj = costs1[basis] @ tableau[:, -1]
        if status != "optimal" or phase1_obj > 1e-7:
            return LpSolution(status="infeasible")
        if n_real in basis:
            # x0 basic at zero: pivot it out on any usable entry
            r = int(np.flatnonzero(basis == n_real)[0])
            cand = np.flatnonzero(np.abs(tableau[r, :n_real]) > 1e-9)
            if cand.size:
                enter = int(cand[0])
                piv = tableau[r, enter]
                tableau[r] /= piv
                other = np.arange(m) != r
                tableau[other] -= np.outer(tableau[other, enter], tableau[r])
                basis[r] = enter
                tableau[:, enter] = 0.0
                tableau[r, enter] = 1.0

    costs2 = np.zeros(ncols)
    costs2[:col_count] = lp.c @ sub
    allowed = np.ones(ncols, dtype=bool)
    allowed[n_real:] = False
    status, iters = _simplex(tableau, basis, costs2, allowed, max_iter)
    if status == "unbounded":
        return LpSolution(status="unbounded", iterations=iters)

    z = np.zeros(ncols)
    z[basis] = tableau[:, -1]
    x = shift + sub @ z[:col_count]

    red_full = costs2 - costs2[basis] @ tableau[:, :ncols]
    # dual of each <=-row equals the reduced cost of its slack
    mu_rows = red_full[col_count:col_count + n_struct_rows]
    duals = np.zeros(lp.n_rows)
    np.add.at(duals, row_origin, row_sign * mu_rows)
    reduced = lp.c + lp.a_mat.T @ duals

    return LpSolution(
        status="optimal",
        x=x,
        obj=float(lp.c @ x),
        duals=duals,
        reduced_costs=reduced,
        iterations=iters,
    )


def verify_kkt(lp: LinearProgram, sol: LpSolution) -> KktReport:
    """Recompute feasibility, dual-sign, complementarity and gap residuals."""
    if sol.status != "optimal":
        raise ValueError("KKT verification requires an optimal solution")
    x, mu = sol.x, sol.duals
    ax = lp.a_mat @ x
    viol = []
    for i, sense in enumerate(lp.senses):
        gap = ax[i] - lp.rhs[i]
        viol.append(abs(gap) if sense == "==" else max(0.0, gap))
    lo_viol = np.where(np.isfinite(lp.lower), np.maximum(0.0, lp.lower - x), 0.0)
    hi_viol = np.where(np.isfinite(lp.upper), np.maximum(0.0, x - lp.upper), 0.0)
    primal = max(max(viol, default=0.0), float(lo_viol.max()), float(hi_viol.max()))

    r = lp.c + lp.a_mat.T @ mu
    dual = 0.0
    for i, sense in enumerate(lp.senses):
        if sense == "<=":
            dual = max(dual, -float(mu[i]))
    for j in range(lp.n_vars):
        lo_f, hi_f = np.isfinite(lp.lower[j]), np.isfinite(lp.upper[j])
        if not lo_f:
            dual = max(dual, float(r[j]))  # no lower bound: r_j <= 0 required
        if not hi_f:
            dual = max(dual, -float(r[j]))  # no upper bound: r_j >= 0 required

    comp = 0.0
    for i, sense in enumerate(lp.senses):
        if sense == "<=":
            comp = max(comp, abs(float(mu[i]) * (lp.rhs[i] - ax[i])))
    for j in range(lp.n_vars):
        rj = float(r[j])
        if rj > 0.0 and np.isfinite(lp.lower[j]):
            comp = max(comp, rj * abs(x[j] - lp.lower[j]))
        if rj < 0.0 and np.isfinite(lp.upper[j]):
            comp = max(comp, -rj * abs(lp.upper[j] - x[j]))

    # Lagrangian dual value; meaningful whenever dual_residual is small
    dual_obj = -float(mu @ lp.rhs)
    lo_fin = np.where(np.isfinite(lp.lower), lp.lower, 0.0)
    hi_fin = np.where(np.isfinite(lp.upper), lp.upper, 0.0)
    dual_obj += float(np.sum(np.where(r > 0, r * lo_fin, r * hi_fin)))
    gap = abs(sol.obj - dual_obj) / (1.0 + abs(sol.obj))
    return KktReport(primal, dual, comp, gap)


def format_lp(lp: LinearProgram) -> str:
    """Fixed-width text dump of the LP for desk debugging."""
    width = 12
    names = [f"x{j}" for j in range(lp.n_vars)]
    lines = ["minimize"]
    lines.append("".join(f"{nm:>{width}}" for nm in names))
    lines.append("".join(f"{v:>{width}.5g}" for v in lp.c))
    lines.append("subject to")
    for i in range(lp.n_rows):
        row = "".join(f"{v:>{width}.5g}" for v in lp.a_mat[i])
        lines.append(f"{row} {lp.senses[i]:>3} {lp.rhs[i]:>{width}.5g}")
    lines.append("bounds")
    for j in range(lp.n_vars):
        lines.append(f"{names[j]:>6}: [{lp.lower[j]:.5g}, {lp.upper[j]:.5g}]")
    return "\n".join(lines)
