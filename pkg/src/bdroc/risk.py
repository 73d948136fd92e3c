"""Worst-case expectation over a box ambiguity set and its mean-CVaR form.

The maximum of E_P[h] over {P in simplex : lower <= P <= upper} has a
closed-form greedy solution, and equals
lambda * E_{P_low}[h] + (1 - lambda) * CVaR^upsilon_{P_band}[h]
with lambda = sum(lower), upsilon = (U - 1)/(U - L) and the two renormalized
measures induced by the bounds.  Everything here is sort-based floating point;
no LP is involved (the LP solver is reserved for the cutting-plane master).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dist import BoxAmbiguity, Pmf

__all__ = [
    "RiskSpec",
    "risk_spec",
    "worst_case_expectation_greedy",
    "cvar_discrete",
    "cvar_threshold",
    "rho",
    "rho_batch",
    "cvar_subgradient_weights",
]

_DEGENERATE_TOL = 1e-14


@dataclass(frozen=True)
class RiskSpec:
    """Parameters (lambda, upsilon, P_low, P_band) of the mean-CVaR evaluator.

    degenerate marks the radius-0 branch (pure expectation under the center);
    lambda_zero marks the clipped corner case sum(lower) = 0 (pure CVaR).
    """

    lam: float
    upsilon: float
    p_low: np.ndarray
    p_band: np.ndarray
    center: np.ndarray
    degenerate: bool = False
    lambda_zero: bool = False

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if not self.degenerate and self.lam >= 1.0:
            raise ValueError("non-degenerate spec requires lambda < 1")
        if not self.degenerate and not 0.0 <= self.upsilon < 1.0:
            raise ValueError("upsilon must lie in [0, 1)")
        for name in ("p_low", "p_band", "center"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def size(self) -> int:
        return self.center.size


def risk_spec(box: BoxAmbiguity) -> RiskSpec:
    """Derive the mean-CVaR parameters from a box ambiguity set."""
    lower, upper, center = box.lower, box.upper, box.center.probs
    if np.any(lower > upper + 1e-15):
        raise ValueError("box has lower bound above upper bound")
    big_l = float(lower.sum())
    big_u = float(upper.sum())
    if big_l > 1.0 + 1e-12 or big_u < 1.0 - 1e-12:
        raise ValueError("box does not intersect the simplex")
    j = lower.size
    if big_u - big_l < _DEGENERATE_TOL:
        # radius zero: the set is the singleton {center}
        return RiskSpec(1.0, 0.0, center, np.full(j, 1.0 / j), center, degenerate=True)
    band = (upper - lower) / (big_u - big_l)
    upsilon = (big_u - 1.0) / (big_u - big_l)
    if big_l < _DEGENERATE_TOL:
        # fully clipped lower bounds: the functional is pure CVaR
        return RiskSpec(0.0, upsilon, np.zeros(j), band, center, lambda_zero=True)
    return RiskSpec(big_l, upsilon, lower / big_l, band, center)


def worst_case_expectation_greedy(box: BoxAmbiguity, h: np.ndarray) -> tuple[float, Pmf]:
    """Maximize E_P[h] over the box by the closed-form greedy rule.

    Mass starts at the lower bounds and the slack 1 - sum(lower) is poured
    into coordinates by decreasing h (ties by ascending index) up to each cap.
    Returns the optimal value and an optimal vertex.
    """
    h = np.asarray(h, dtype=float)
    lower, upper = box.lower, box.upper
    if h.shape != lower.shape:
        raise ValueError("h must match the support length")
    big_l = lower.sum()
    if big_l > 1.0 + 1e-12 or upper.sum() < 1.0 - 1e-12:
        raise ValueError("box does not intersect the simplex")
    p = lower.copy()
    slack = 1.0 - big_l
    # stable sort on -h keeps ascending original index among ties
    for idx in np.argsort(-h, kind="stable"):
        if slack <= 0.0:
            break
        add = min(upper[idx] - lower[idx], slack)
        p[idx] += add
        slack -= add
    return float(p @ h), Pmf(p)


def _tail_stats(p: np.ndarray, h: np.ndarray, level: float) -> tuple[float, float]:
    """(cvar, threshold) of the discrete tail average at `level`.

    The threshold is the smallest minimizer of the Rockafellar-Uryasev
    objective d + E[(h-d)^+]/(1-level), i.e. the smallest atom value v
    with P(h > v) <= 1 - level.
    """
    beta = 1.0 - level
    order = np.argsort(-h, kind="stable")
    hs = h[order]
    ps = p[order]
    cum = np.cumsum(ps)
    # atom where the cumulative tail mass reaches beta; fractional weight there
    k = int(np.searchsorted(cum, beta - 1e-15))
    k = min(k, hs.size - 1)
    weights = ps[: k + 1].copy()
    weights[k] = beta - (cum[k] - ps[k])
    cvar = float(weights @ hs[: k + 1]) / beta
    run_starts = np.flatnonzero(np.concatenate(([True], hs[1:] != hs[:-1])))
    strict_above = np.where(run_starts > 0, cum[run_starts - 1], 0.0)
    eligible = np.flatnonzero(strict_above <= beta + 1e-15)
    zeta = float(hs[run_starts[eligible[-1]]])
    return cvar, zeta


def cvar_discrete(p: Pmf | np.ndarray, h: np.ndarray, level: float) -> float:
    """CVaR at `level` of the discrete payoff h under pmf p (costs: upper tail)."""
    if level >= 1.0:
        raise ValueError("CVaR level must be below 1")
    if level < 0.0:
        raise ValueError("CVaR level must be nonnegative")
    probs = p.probs if isinstance(p, Pmf) else np.asarray(p, dtype=float)
    h = np.asarray(h, dtype=float)
    if probs.shape != h.shape:
        raise ValueError("pmf and payoff must have equal length")
    if level == 0.0:
        return float(probs @ h)
    return _tail_stats(probs, h, level)[0]


def cvar_threshold(p: Pmf | np.ndarray, h: np.ndarray, level: float) -> float:
    """Smallest optimal CVaR threshold (left endpoint of the minimizer set)."""
    probs = p.probs if isinstance(p, Pmf) else np.asarray(p, dtype=float)
    h = np.asarray(h, dtype=float)
    if level == 0.0:
        return float(h.min())
    return _tail_stats(probs, h, level)[1]


def rho(spec: RiskSpec, h: np.ndarray) -> float:
    """Evaluate lambda * E_{p_low}[h] + (1 - lambda) * CVaR^upsilon_{p_band}[h]."""
    h = np.asarray(h, dtype=float)
    if spec.degenerate:
        return float(spec.center @ h)
    value = 0.0
    if spec.lam > 0.0:
        value += spec.lam * float(spec.p_low @ h)
    value += (1.0 - spec.lam) * cvar_discrete(spec.p_band, h, spec.upsilon)
    return value


def rho_batch(spec: RiskSpec, h: np.ndarray) -> np.ndarray:
    """Vectorized `rho` along the last axis of h (shape (..., J))."""
    h = np.asarray(h, dtype=float)
    if spec.degenerate:
        return h @ spec.center
    out = np.zeros(h.shape[:-1])
    if spec.lam > 0.0:
        out += spec.lam * (h @ spec.p_low)
    beta = 1.0 - spec.upsilon
    order = np.argsort(-h, axis=-1, kind="stable")
    hs = np.take_along_axis(h, order, axis=-1)
    ps = np.broadcast_to(spec.p_band, h.shape)
    ps = np.take_along_axis(ps, order, axis=-1)
    cum = np.cumsum(ps, axis=-1)
    inside = np.minimum(cum, beta)
    weights = np.diff(np.concatenate([np.zeros((*h.shape[:-1], 1)), inside], axis=-1), axis=-1)
    cvar = (weights * hs).sum(axis=-1) / beta
    out += (1.0 - spec.lam) * cvar
    return out


def cvar_subgradient_weights(spec: RiskSpec, h: np.ndarray, zeta_star: float) -> np.ndarray:
    """Subgradient selector theta for the positive-part terms at threshold zeta*.

    theta_j = 1 above the threshold, 0 below, and fractional on the tie set
    (filled in ascending index order) so that sum p_band_j theta_j = 1 - upsilon.
    The tie set is detected with a relative tolerance since thresholds often
    come from an LP solve.
    """
    h = np.asarray(h, dtype=float)
    p = spec.p_band
    theta = np.zeros_like(p)
    tol = 1e-9 * (1.0 + abs(zeta_star))
    above = h > zeta_star + tol
    ties = np.abs(h - zeta_star) <= tol
    theta[above] = 1.0
    target = (1.0 - spec.upsilon) - float(p[above].sum())
    if target < -1e-9:
        raise RuntimeError("zeta* is not an optimal CVaR threshold for this payoff")
    remaining = max(0.0, target)
    for idx in np.flatnonzero(ties):
        if remaining <= 0.0:
            break
        take = min(p[idx], remaining)
        if p[idx] > 0.0:
            theta[idx] = take / p[idx]
        remaining -= take
    if remaining > 1e-9:
        raise RuntimeError("no feasible subgradient weights at the given threshold")
    return theta
