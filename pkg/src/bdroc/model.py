"""Scenario-based control problem structure and the inventory instance.

A ScenarioModel carries per-scenario affine transitions A^j s + B^j a + b^j
and convex piecewise-linear stage costs (max-of-affine pieces) over compact
box state/action sets.  The inventory instance discretizes a truncated
exponential demand onto a uniform grid and provides the closed-form
base-stock ground truth for validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dist import Pmf, Support

__all__ = [
    "CostPiece",
    "ScenarioModel",
    "InventoryParams",
    "DemandSpec",
    "discretize_exponential",
    "discretize_demand",
    "build_inventory",
    "base_stock_truth",
    "true_value_closed_form",
    "true_value_closed_form_pmf",
    "contaminate",
]


@dataclass(frozen=True)
class CostPiece:
    """One affine piece alpha_s @ s + alpha_a @ a + beta of a stage cost."""

    alpha_s: np.ndarray
    alpha_a: np.ndarray
    beta: float

    def __post_init__(self):
        object.__setattr__(self, "alpha_s", np.atleast_1d(np.asarray(self.alpha_s, dtype=float)))
        object.__setattr__(self, "alpha_a", np.atleast_1d(np.asarray(self.alpha_a, dtype=float)))


def _interval_extrema(coef: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> tuple[float, float]:
    """Exact (min, max) of coef @ x over the box [lo, hi]; equals a vertex scan."""
    low = float(np.sum(np.where(coef >= 0, coef * lo, coef * hi)))
    high = float(np.sum(np.where(coef >= 0, coef * hi, coef * lo)))
    return low, high


@dataclass(frozen=True)
class ScenarioModel:
    """Affine-transition SOC problem on compact boxes with PWL convex costs."""

    support: Support
    a_mats: np.ndarray        # (J, m, m)
    b_mats: np.ndarray        # (J, m, n)
    b_vecs: np.ndarray        # (J, m)
    cost_pieces: tuple[tuple[CostPiece, ...], ...]  # per scenario
    state_lo: np.ndarray
    state_hi: np.ndarray
    action_lo: np.ndarray
    action_hi: np.ndarray
    gamma: float

    def __post_init__(self):
        for name in ("a_mats", "b_mats", "b_vecs", "state_lo", "state_hi",
                     "action_lo", "action_hi"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        j = self.support.size
        m = self.state_lo.size
        n = self.action_lo.size
        if self.a_mats.shape != (j, m, m) or self.b_mats.shape != (j, m, n):
            raise ValueError("transition matrices do not match (J, m, n)")
        if self.b_vecs.shape != (j, m):
            raise ValueError("transition offsets do not match (J, m)")
        if len(self.cost_pieces) != j:
            raise ValueError("one cost-piece family per scenario required")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("discount factor must lie in (0, 1)")
        if np.any(self.state_lo >= self.state_hi) or np.any(self.action_lo >= self.action_hi):
            raise ValueError("state and action boxes must be nondegenerate")
        if not (np.all(np.isfinite(self.state_lo)) and np.all(np.isfinite(self.state_hi))
                and np.all(np.isfinite(self.action_lo)) and np.all(np.isfinite(self.action_hi))):
            raise ValueError("state and action boxes must be bounded")
        # cost bound from per-piece extrema over the box (vertex values for affine)
        bound = 0.0
        for pieces in self.cost_pieces:
            for piece in pieces:
                coef = np.concatenate([piece.alpha_s, piece.alpha_a])
                lo = np.concatenate([self.state_lo, self.action_lo])
                hi = np.concatenate([self.state_hi, self.action_hi])
                pmin, pmax = _interval_extrema(coef, lo, hi)
                bound = max(bound, abs(pmin + piece.beta), abs(pmax + piece.beta))
        object.__setattr__(self, "cost_bound", bound)

    cost_bound: float = field(init=False)  # C-bar, |cost| <= cost_bound on the boxes

    @property
    def n_scenarios(self) -> int:
        return self.support.size

    @property
    def state_dim(self) -> int:
        return self.state_lo.size

    @property
    def action_dim(self) -> int:
        return self.action_lo.size

    @property
    def value_floor(self) -> float:
        """Global lower bound -C/(1-gamma) on any discounted value."""
        return -self.cost_bound / (1.0 - self.gamma)

    def stage_cost(self, j: int, s: np.ndarray, a: np.ndarray) -> float:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        a = np.atleast_1d(np.asarray(a, dtype=float))
        return max(float(p.alpha_s @ s + p.alpha_a @ a + p.beta) for p in self.cost_pieces[j])

    def transition(self, j: int, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        a = np.atleast_1d(np.asarray(a, dtype=float))
        return self.a_mats[j] @ s + self.b_mats[j] @ a + self.b_vecs[j]

    def clip_state(self, s: np.ndarray) -> np.ndarray:
        """Project a state onto the box; applied to simulated trajectories."""
        return np.clip(s, self.state_lo, self.state_hi)


@dataclass(frozen=True)
class InventoryParams:
    """Single-product inventory instance parameters."""

    c: float = 1.0          # ordering cost per unit
    b: float = 10.0         # backorder penalty per unit
    h: float = 2.0          # holding cost per unit
    gamma: float = 0.95
    rate_mean: float = 10.0  # exponential demand mean
    trunc: float = 50.0      # demand truncation level U
    n_bins: int = 50         # grid size J
    state_lo: float = -50.0
    state_hi: float = 60.0
    action_max: float = 70.0

    def __post_init__(self):
        if not self.b > self.c > 0.0:
            raise ValueError("inventory costs must satisfy b > c > 0")
        if self.h <= 0.0:
            raise ValueError("holding cost must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("discount factor must lie in (0, 1)")
        if self.trunc <= 0.0 or self.n_bins < 2:
            raise ValueError("need positive truncation and at least two bins")


@dataclass(frozen=True)
class DemandSpec:
    """Continuous demand law: mixture of exponentials sum_i w_i Exp(mean_i)."""

    means: tuple[float, ...]
    weights: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if len(self.means) != len(self.weights):
            raise ValueError("means and weights must have equal length")
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1")
        if any(m <= 0 for m in self.means):
            raise ValueError("exponential means must be positive")

    @classmethod
    def exponential(cls, mean: float) -> "DemandSpec":
        return cls((mean,), (1.0,))

    def cdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for w, m in zip(self.weights, self.means):
            out = out + w * (1.0 - np.exp(-np.maximum(x, 0.0) / m))
        return out

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        comp = rng.choice(len(self.means), size=size, p=np.asarray(self.weights))
        draws = rng.exponential(1.0, size=size)
        return draws * np.asarray(self.means)[comp]


def discretize_demand(spec: DemandSpec, trunc: float, n_bins: int) -> tuple[Support, Pmf]:
    """Bin a demand law onto n_bins equal-width cells of [0, trunc].

    Grid points are cell midpoints (j - 1/2) * trunc / n_bins; probabilities
    are CDF increments renormalized by the truncated mass.
    """
    if trunc <= 0 or n_bins < 2:
        raise ValueError("need positive truncation and at least two bins")
    edges = np.linspace(0.0, trunc, n_bins + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    cdf = spec.cdf(edges)
    probs = np.diff(cdf) / cdf[-1]
    return Support(mids[:, None]), Pmf(probs)


def discretize_exponential(params: InventoryParams) -> tuple[Support, Pmf]:
    """Truncated-exponential demand grid for the inventory instance."""
    return discretize_demand(DemandSpec.exponential(params.rate_mean),
                             params.trunc, params.n_bins)


def build_inventory(params: InventoryParams, support: Support, pmf_true: Pmf) -> ScenarioModel:
    """Inventory ScenarioModel: s' = s + a - xi, cost c*a + psi(s + a, xi).

    psi(y, d) = b*[d - y]^+ + h*[y - d]^+ is the max of its two affine
    branches, so each scenario cost is the max of two pieces.
    """
    if support.dim != 1:
        raise ValueError("inventory instance requires scalar demand")
    j = support.size
    if len(pmf_true) != j:
        raise ValueError("pmf length must match the support")
    xi = support.scalars()
    c, b, h = params.c, params.b, params.h
    pieces = tuple(
        (
            CostPiece(alpha_s=[-b], alpha_a=[c - b], beta=b * x),   # backorder branch
            CostPiece(alpha_s=[h], alpha_a=[c + h], beta=-h * x),   # holding branch
        )
        for x in xi
    )
    return ScenarioModel(
        support=support,
        a_mats=np.ones((j, 1, 1)),
        b_mats=np.ones((j, 1, 1)),
        b_vecs=-xi[:, None],
        cost_pieces=pieces,
        state_lo=[params.state_lo],
        state_hi=[params.state_hi],
        action_lo=[0.0],
        action_hi=[params.action_max],
        gamma=params.gamma,
    )


def base_stock_truth(params: InventoryParams) -> tuple[float, float]:
    """Critical ratio kappa and base-stock level s* of the continuous model."""
    kappa = (params.b - (1.0 - params.gamma) * params.c) / (params.b + params.h)
    s_star = -params.rate_mean * math.log(1.0 - kappa)
    return kappa, s_star


def _psi(y: float, d: np.ndarray, b: float, h: float) -> np.ndarray:
    return b * np.maximum(d - y, 0.0) + h * np.maximum(y - d, 0.0)


def true_value_closed_form(
    params: InventoryParams,
    s: float,
    mc_samples: int = 100_000,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Monte Carlo evaluation of the closed-form optimal value at s <= s*.

    V*(s) = -c s + (1-gamma)^{-1} E[gamma c xi + (1-gamma) c s* + psi(s*, xi)]
    under the untruncated exponential demand.  Returns (value, standard error).
    """
    kappa, s_star = base_stock_truth(params)
    if s > s_star:
        raise ValueError(f"closed form is valid for s <= s* = {s_star:.4f}")
    rng = rng if rng is not None else np.random.default_rng(0)
    xi = rng.exponential(params.rate_mean, size=mc_samples)
    inner = (params.gamma * params.c * xi
             + (1.0 - params.gamma) * params.c * s_star
             + _psi(s_star, xi, params.b, params.h))
    scale = 1.0 / (1.0 - params.gamma)
    value = -params.c * s + scale * float(inner.mean())
    stderr = scale * float(inner.std(ddof=1)) / math.sqrt(mc_samples)
    return value, stderr


def true_value_closed_form_pmf(
    params: InventoryParams, support: Support, pmf: Pmf, s: float
) -> float:
    """Closed-form value with the expectation taken under a discrete demand pmf."""
    kappa, _ = base_stock_truth(params)
    xi = support.scalars()
    # base stock of the DISCRETE law: smallest grid point with CDF >= kappa
    cdf = np.cumsum(pmf.probs)
    s_star = float(xi[int(np.searchsorted(cdf, kappa))])
    if s > s_star:
        raise ValueError(f"closed form is valid for s <= discrete s* = {s_star:.4f}")
    inner = (params.gamma * params.c * xi
             + (1.0 - params.gamma) * params.c * s_star
             + _psi(s_star, xi, params.b, params.h))
    return -params.c * s + float(pmf.probs @ inner) / (1.0 - params.gamma)


def contaminate(base: DemandSpec, kind: str, eps: float, mix_mean: float = 30.0) -> DemandSpec:
    """Contaminated demand law: Huber mixture with Exp(mix_mean) or scale shift."""
    if not 0.0 <= eps < 1.0:
        raise ValueError("contamination level must lie in [0, 1)")
    if eps == 0.0:
        return base
    if kind == "huber_mixture":
        weights = tuple(w * (1.0 - eps) for w in base.weights) + (eps,)
        return DemandSpec(base.means + (mix_mean,), weights)
    if kind == "scale_shift":
        return DemandSpec(tuple(m * (1.0 + eps) for m in base.means), base.weights)
    raise ValueError(f"unknown contamination kind {kind!r}")
