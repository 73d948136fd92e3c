"""Finite-support distributions, Dirichlet posterior learning and box ambiguity sets.

The belief state is a Dirichlet parameter vector over a fixed finite support.
From it we build box-shaped ambiguity sets (a credible box around the posterior
mode) whose lower/upper bounds feed the mean-CVaR reformulation in `risk`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

__all__ = [
    "Support",
    "Pmf",
    "DirichletPosterior",
    "BoxAmbiguity",
    "ModeDecomposition",
    "posterior_update",
    "posterior_update_batch",
    "posterior_mode",
    "posterior_mean",
    "mode_decomposition",
    "credible_box",
    "normal_quantile",
    "sample_pmf",
    "l1_distance",
    "linf_distance",
    "tv_distance",
    "kantorovich_1d",
    "kantorovich_1d_pmf",
    "hausdorff_lower_bound",
]

_SIMPLEX_TOL = 1e-12


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Support:
    """Ordered finite support {xi^1, ..., xi^J} of column vectors in R^k."""

    points: np.ndarray  # shape (J, k)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.ndim != 2:
            raise ValueError("support points must form a (J, k) array")
        if pts.shape[0] < 2:
            raise ValueError("support needs at least two points")
        object.__setattr__(self, "points", _freeze(pts))
        diff = pts[:, None, :] - pts[None, :, :]
        dists = np.linalg.norm(diff, axis=-1)
        off = dists[~np.eye(len(pts), dtype=bool)]
        d_min = float(off.min())
        d_max = float(off.max())
        if d_min <= 0.0:
            raise ValueError("support points must be pairwise distinct")
        object.__setattr__(self, "d_min", d_min)
        object.__setattr__(self, "d_max", d_max)

    d_min: float = field(init=False)  # smallest pairwise distance
    d_max: float = field(init=False)  # diameter

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def scalars(self) -> np.ndarray:
        """1-D view of the points; only valid for k = 1."""
        if self.dim != 1:
            raise ValueError("scalar view requires 1-D support")
        return self.points[:, 0]


@dataclass(frozen=True)
class Pmf:
    """Probability vector over a fixed support of size J."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("pmf must be a nonempty vector")
        if np.any(p < -_SIMPLEX_TOL) or np.any(p > 1.0 + _SIMPLEX_TOL):
            raise ValueError("pmf entries must lie in [0, 1]")
        if abs(float(p.sum()) - 1.0) > 1e-12:
            raise ValueError(f"pmf entries must sum to 1, got {p.sum()!r}")
        object.__setattr__(self, "probs", _freeze(p))

    def __len__(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class DirichletPosterior:
    """Dirichlet belief over the unknown pmf: parameters tau and absorbed count."""

    tau: np.ndarray
    count: int = 0

    def __post_init__(self):
        t = np.asarray(self.tau, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("tau must be a vector of length >= 2")
        if np.any(t <= 1.0):
            raise ValueError("every Dirichlet parameter must exceed 1")
        if self.count < 0:
            raise ValueError("count must be nonnegative")
        object.__setattr__(self, "tau", _freeze(t))

    @property
    def size(self) -> int:
        return self.tau.size


@dataclass(frozen=True)
class BoxAmbiguity:
    """Box ambiguity set {P in simplex : lower <= P <= upper}.

    `center` is the reference distribution, `radius` the per-coordinate
    tolerance; `lower`/`upper` default to the [0, 1]-clipped center +- radius.
    alpha = 1 denotes the degenerate singleton case (radius 0).  General
    (asymmetric) boxes come from `from_bounds`, where lower/upper are
    authoritative and the stored center is some feasible distribution.
    """

    center: Pmf
    radius: np.ndarray
    alpha: float
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        r = np.asarray(self.radius, dtype=float)
        c = self.center.probs
        if r.shape != c.shape:
            raise ValueError("radius and center must have equal length")
        if np.any(r < 0.0):
            raise ValueError("radius must be nonnegative")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")
        object.__setattr__(self, "radius", _freeze(r))
        lo = np.maximum(0.0, c - r) if self.lower is None \
            else np.asarray(self.lower, dtype=float)
        hi = np.minimum(1.0, c + r) if self.upper is None \
            else np.asarray(self.upper, dtype=float)
        if np.any(lo > c + _SIMPLEX_TOL) or np.any(c > hi + _SIMPLEX_TOL):
            raise ValueError("center must lie inside the box")
        if np.any(lo < -_SIMPLEX_TOL) or np.any(hi > 1.0 + _SIMPLEX_TOL):
            raise ValueError("bounds must lie in [0, 1]")
        object.__setattr__(self, "lower", _freeze(lo))
        object.__setattr__(self, "upper", _freeze(hi))

    @classmethod
    def from_bounds(cls, lower: np.ndarray, upper: np.ndarray,
                    alpha: float = 0.5) -> "BoxAmbiguity":
        """Box with explicit bounds; a feasible center is filled greedily."""
        lo = np.asarray(lower, dtype=float)
        hi = np.asarray(upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("bounds must be equal-length vectors")
        if np.any(lo > hi):
            raise ValueError("lower bound above upper bound")
        if lo.sum() > 1.0 + _SIMPLEX_TOL or hi.sum() < 1.0 - _SIMPLEX_TOL:
            raise ValueError("box does not intersect the simplex")
        center = lo.copy()
        slack = 1.0 - center.sum()
        for j in range(center.size):
            add = min(hi[j] - lo[j], slack)
            center[j] += add
            slack -= add
            if slack <= 0.0:
                break
        return cls(Pmf(center), 0.5 * (hi - lo), alpha, lower=lo, upper=hi)

    @property
    def size(self) -> int:
        return len(self.center)

    def contains(self, pmf: Pmf, tol: float = 1e-12) -> bool:
        p = pmf.probs
        return bool(np.all(p >= self.lower - tol) and np.all(p <= self.upper + tol))


class ModeDecomposition(NamedTuple):
    omega: float
    prior_ref: Pmf
    empirical: Pmf
    degenerate: bool


def posterior_update(post: DirichletPosterior, obs: int) -> DirichletPosterior:
    """Absorb one observation of support index `obs` (0-based)."""
    if not 0 <= obs < post.size:
        raise ValueError(f"observation index {obs} out of range [0, {post.size})")
    tau = post.tau.copy()
    tau[obs] += 1.0
    return DirichletPosterior(tau, post.count + 1)


def posterior_update_batch(post: DirichletPosterior, obs: np.ndarray) -> DirichletPosterior:
    """Absorb a batch of observation indices; equals repeated single updates."""
    obs = np.asarray(obs, dtype=int)
    if obs.size and (obs.min() < 0 or obs.max() >= post.size):
        raise ValueError("observation index out of range")
    counts = np.bincount(obs, minlength=post.size).astype(float)
    return DirichletPosterior(post.tau + counts, post.count + obs.size)


def posterior_mode(post: DirichletPosterior) -> Pmf:
    """Dirichlet mode (tau_j - 1) / (sum tau - J); requires every tau_j > 1."""
    t = post.tau
    return Pmf((t - 1.0) / (t.sum() - t.size))


def posterior_mean(post: DirichletPosterior) -> Pmf:
    """Dirichlet mean tau_j / sum(tau)."""
    t = post.tau
    return Pmf(t / t.sum())


def mode_decomposition(post: DirichletPosterior, prior: DirichletPosterior) -> ModeDecomposition:
    """Split the posterior mode into its prior-mode and empirical components.

    Returns (omega, prior_mode, empirical) with
    mode(post) = omega * prior_mode + (1 - omega) * empirical.  With no
    absorbed data the empirical part is undefined; omega = 1 is returned with
    the prior mode standing in and the result flagged degenerate.
    """
    t0, tn = prior.tau, post.tau
    if t0.shape != tn.shape:
        raise ValueError("prior and posterior must share a support")
    counts = tn - t0
    if np.any(counts < -1e-9):
        raise ValueError("posterior parameters must dominate the prior's")
    n = counts.sum()
    prior_ref = posterior_mode(prior)
    if n < 0.5:
        return ModeDecomposition(1.0, prior_ref, prior_ref, True)
    omega = (t0.sum() - t0.size) / (tn.sum() - tn.size)
    empirical = Pmf(counts / n)
    return ModeDecomposition(float(omega), prior_ref, empirical, False)


# Peter Acklam's rational approximation to the inverse normal CDF; regions
# split at plow/phigh.  One Halley step against erfc lands well below 1e-9.
_ACKLAM_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
             1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_ACKLAM_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
             6.680131188771972e+01, -1.328068155288572e+01)
_ACKLAM_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
             -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_ACKLAM_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
             3.754408661907416e+00)


def _phi(x: float) -> float:
    """Standard normal CDF via erfc (accurate in both tails)."""
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF, |Phi(z) - p| <= 1e-9 over (0, 1)."""
    if not 0.0 < p < 1.0:
        raise ValueError("quantile level must lie strictly between 0 and 1")
    a, b, c, d = _ACKLAM_A, _ACKLAM_B, _ACKLAM_C, _ACKLAM_D
    plow, phigh = 0.02425, 1.0 - 0.02425
    if p < plow:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    elif p <= phigh:
        q = p - 0.5
        r = q * q
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    # one Halley refinement
    e = _phi(x) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def credible_box(post: DirichletPosterior, alpha: float) -> BoxAmbiguity:
    """Bonferroni-corrected credible box around the posterior mode.

    Per-coordinate radius z_{1-alpha'/2} * sqrt(p(1-p) / (sum tau - J)) with
    alpha' = alpha / J.  alpha = 1 collapses to the singleton at the posterior
    mean (the risk-neutral degenerate case).
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    if alpha == 1.0:
        return BoxAmbiguity(posterior_mean(post), np.zeros(post.size), 1.0)
    center = posterior_mode(post)
    j = post.size
    z = normal_quantile(1.0 - 0.5 * alpha / j)
    denom = post.tau.sum() - j
    p = center.probs
    radius = z * np.sqrt(p * (1.0 - p) / denom)
    return BoxAmbiguity(center, radius, float(alpha))


def sample_pmf(post: DirichletPosterior, rng: np.random.Generator) -> Pmf:
    """One Dirichlet(tau) draw via normalized gamma variates."""
    g = rng.gamma(shape=post.tau)
    return Pmf(g / g.sum())


def _check_pair(p: Pmf, q: Pmf) -> tuple[np.ndarray, np.ndarray]:
    if len(p) != len(q):
        raise ValueError("pmfs must share a support length")
    return p.probs, q.probs


def l1_distance(p: Pmf, q: Pmf) -> float:
    a, b = _check_pair(p, q)
    return float(np.abs(a - b).sum())


def linf_distance(p: Pmf, q: Pmf) -> float:
    a, b = _check_pair(p, q)
    return float(np.abs(a - b).max())


def tv_distance(p: Pmf, q: Pmf) -> float:
    return 0.5 * l1_distance(p, q)


def kantorovich_1d(samples_a: np.ndarray, samples_b: np.ndarray) -> float:
    """Empirical 1-Wasserstein distance between equal-size scalar samples.

    Average absolute difference of order statistics.
    """
    a = np.sort(np.asarray(samples_a, dtype=float))
    b = np.sort(np.asarray(samples_b, dtype=float))
    if a.size != b.size:
        raise ValueError("sample counts must match")
    if a.size == 0:
        raise ValueError("need at least one sample")
    return float(np.abs(a - b).mean())


def kantorovich_1d_pmf(points: np.ndarray, p: Pmf, q: Pmf) -> float:
    """1-Wasserstein distance of two pmfs on a common increasing 1-D grid."""
    x = np.asarray(points, dtype=float)
    a, b = _check_pair(p, q)
    if x.ndim != 1 or x.size != a.size:
        raise ValueError("grid and pmfs must have equal length")
    cdf_gap = np.abs(np.cumsum(a - b))[:-1]
    return float(np.sum(cdf_gap * np.diff(x)))


def hausdorff_lower_bound(
    a: BoxAmbiguity,
    b: BoxAmbiguity,
    probes: int = 64,
    rng: np.random.Generator | None = None,
) -> float:
    """Certified lower bound on the Hausdorff distance (sup-norm) of two boxes.

    Probes the support-function identity with all +-e_j directions plus random
    L1-unit directions; each support function is the exact worst-case linear
    functional over box-intersect-simplex from the greedy solver.
    """
    from .risk import worst_case_expectation_greedy  # late import, avoids cycle

    if a.size != b.size:
        raise ValueError("boxes must share a support length")
    j = a.size
    dirs = [np.zeros(j) for _ in range(2 * j)]
    for i in range(j):
        dirs[2 * i][i] = 1.0
        dirs[2 * i + 1][i] = -1.0
    if probes > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        raw = rng.standard_normal((probes, j))
        raw /= np.abs(raw).sum(axis=1, keepdims=True)
        dirs.extend(raw)
    best = 0.0
    for y in dirs:
        sa, _ = worst_case_expectation_greedy(a, y)
        sb, _ = worst_case_expectation_greedy(b, y)
        best = max(best, abs(sa - sb))
    return best
