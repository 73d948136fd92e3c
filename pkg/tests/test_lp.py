"""Dense simplex solver: examples, duals, KKT residuals, fuzz."""

import itertools

import numpy as np
import pytest

from bdroc.dist import BoxAmbiguity
from bdroc.lp import LinearProgram, LpError, format_lp, solve, verify_kkt
from bdroc.risk import cvar_subgradient_weights, risk_spec, rho


def test_one_variable_bound():
    # min x s.t. x >= 3 (written -x <= -3): x* = 3, constraint dual 1
    lp = LinearProgram(c=[1.0], a_mat=[[-1.0]], senses=("<=",), rhs=[-3.0],
                       lower=[-np.inf], upper=[np.inf])
    sol = solve(lp)
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(3.0, abs=1e-12)
    assert sol.duals[0] == pytest.approx(1.0, abs=1e-12)
    assert verify_kkt(lp, sol).max_residual <= 1e-8


def test_coupling_constraint_dual():
    # min -x-y s.t. x+y <= 1, x,y in [0,1]: obj -1, coupling dual 1
    lp = LinearProgram(c=[-1.0, -1.0], a_mat=[[1.0, 1.0]], senses=("<=",), rhs=[1.0],
                       lower=[0.0, 0.0], upper=[1.0, 1.0])
    sol = solve(lp)
    assert sol.obj == pytest.approx(-1.0, abs=1e-12)
    assert sol.duals[0] == pytest.approx(1.0, abs=1e-12)
    assert verify_kkt(lp, sol).max_residual <= 1e-8


def test_epigraph_lp_reproduces_rho_and_theta():
    # rho epigraph LP for the worked box and payoff (1,2,3); duals give theta
    box = BoxAmbiguity.from_bounds([0.1, 0.2, 0.3], [0.5, 0.6, 0.7])
    spec = risk_spec(box)
    h = np.array([1.0, 2.0, 3.0])
    w_band = (1 - spec.lam) / (1 - spec.upsilon) * spec.p_band
    # variables (zeta, y1..y3): min (1-lam) zeta + sum w_band y, y_j >= h_j - zeta
    c = np.concatenate([[1 - spec.lam], w_band])
    rows = []
    rhs = []
    for j in range(3):
        row = np.zeros(4)
        row[0] = -1.0
        row[1 + j] = -1.0
        rows.append(row)
        rhs.append(-h[j])
    lp = LinearProgram(c=c, a_mat=np.array(rows), senses=("<=",) * 3, rhs=np.array(rhs),
                       lower=np.array([-10.0, 0, 0, 0]), upper=np.full(4, np.inf))
    sol = solve(lp)
    const = spec.lam * float(spec.p_low @ h)
    assert const + sol.obj == pytest.approx(2.6, abs=1e-9)
    assert const + sol.obj == pytest.approx(rho(spec, h), abs=1e-9)
    theta_lp = (1 - spec.upsilon) * sol.duals / ((1 - spec.lam) * spec.p_band)
    zeta = sol.x[0]
    theta_cf = cvar_subgradient_weights(spec, h, zeta)
    assert np.allclose(theta_lp, theta_cf, atol=1e-8)


def test_infeasible_and_unbounded():
    lp = LinearProgram(c=[1.0], a_mat=[[1.0]], senses=("<=",), rhs=[-1.0],
                       lower=[0.0], upper=[np.inf])
    assert solve(lp).status == "infeasible"
    lp2 = LinearProgram(c=[-1.0], a_mat=np.zeros((1, 1)), senses=("<=",), rhs=[1.0],
                        lower=[0.0], upper=[np.inf])
    assert solve(lp2).status == "unbounded"


def test_determinism():
    rng = np.random.default_rng(0)
    c = rng.normal(size=5)
    a = rng.normal(size=(7, 5))
    b = rng.normal(size=7) + 2
    lp = LinearProgram(c=c, a_mat=a, senses=("<=",) * 7, rhs=b,
                       lower=np.full(5, -2.0), upper=np.full(5, 2.0))
    s1, s2 = solve(lp), solve(lp)
    assert np.array_equal(s1.x, s2.x)
    assert s1.obj == s2.obj
    assert np.array_equal(s1.duals, s2.duals)


def test_verify_kkt_reports_perturbations():
    lp = LinearProgram(c=[-1.0, -1.0], a_mat=[[1.0, 1.0]], senses=("<=",), rhs=[1.0],
                       lower=[0.0, 0.0], upper=[1.0, 1.0])
    sol = solve(lp)
    # perturbed primal off the active face
    bad_x = sol.x + np.array([1e-3, 0.0])
    from dataclasses import replace

    perturbed = replace(sol, x=bad_x)
    rep = verify_kkt(lp, perturbed)
    assert rep.primal_residual == pytest.approx(1e-3, abs=1e-9)
    # zeroed dual on the active constraint breaks stationarity/gap
    zeroed = replace(sol, duals=np.zeros(1))
    rep = verify_kkt(lp, zeroed)
    assert rep.max_residual > 1e-3


def test_malformed_inputs():
    with pytest.raises(ValueError):
        LinearProgram(c=[1.0, np.nan], a_mat=[[1.0, 1.0]], senses=("<=",), rhs=[1.0],
                      lower=[0.0, 0.0], upper=[1.0, 1.0])
    with pytest.raises(ValueError):
        LinearProgram(c=[1.0], a_mat=[[1.0, 2.0]], senses=("<=",), rhs=[1.0],
                      lower=[0.0], upper=[1.0])
    with pytest.raises(ValueError):
        LinearProgram(c=[1.0], a_mat=[[1.0]], senses=("<",), rhs=[1.0],
                      lower=[0.0], upper=[1.0])


def _enumerate_optimum(c, a, b, senses, lo, hi):
    """Brute force: intersect all n-subsets of active constraints/bounds."""
    n = len(c)
    rows = [(a[i], b[i]) for i in range(len(b))]
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        if np.isfinite(lo[j]):
            rows.append((e.copy(), lo[j]))
        if np.isfinite(hi[j]):
            rows.append((e.copy(), hi[j]))
    best = None
    for combo in itertools.combinations(range(len(rows)), n):
        g = np.array([rows[i][0] for i in combo])
        r = np.array([rows[i][1] for i in combo])
        try:
            x = np.linalg.solve(g, r)
        except np.linalg.LinAlgError:
            continue
        ok = np.all(a @ x <= b + 1e-9)
        for i, s in enumerate(senses):
            if s == "==" and abs(a[i] @ x - b[i]) > 1e-9:
                ok = False
        ok = ok and np.all(x >= lo - 1e-9) and np.all(x <= hi + 1e-9)
        if ok and (best is None or c @ x < best):
            best = float(c @ x)
    return best


def test_against_vertex_enumeration():
    rng = np.random.default_rng(1)
    done = 0
    while done < 120:
        n = int(rng.integers(2, 5))
        m = int(rng.integers(1, 7))
        c = rng.normal(size=n)
        a = rng.normal(size=(m, n))
        b = rng.normal(size=m) + 1.0
        lo = -1.0 - rng.random(n)
        hi = 1.0 + rng.random(n)
        senses = tuple("==" if rng.random() < 0.2 else "<=" for _ in range(m))
        lp = LinearProgram(c=c, a_mat=a, senses=senses, rhs=b, lower=lo, upper=hi)
        sol = solve(lp)
        ref = _enumerate_optimum(c, a, b, senses, lo, hi)
        if ref is None:
            assert sol.status == "infeasible"
        else:
            assert sol.status == "optimal"
            assert sol.obj == pytest.approx(ref, abs=1e-8)
        done += 1


def test_random_fuzz_duality_and_kkt():
    # known-feasible construction: pick x0 in the box, set rhs >= A x0
    rng = np.random.default_rng(2)
    for _ in range(500):
        n = int(rng.integers(1, 7))
        m = int(rng.integers(1, 9))
        c = rng.normal(size=n)
        a = rng.normal(size=(m, n))
        lo = -1.0 - rng.random(n) * 2
        hi = 1.0 + rng.random(n) * 2
        x0 = lo + (hi - lo) * rng.random(n)
        b = a @ x0 + rng.random(m)
        lp = LinearProgram(c=c, a_mat=a, senses=("<=",) * m, rhs=b, lower=lo, upper=hi)
        sol = solve(lp)
        assert sol.status == "optimal"
        rep = verify_kkt(lp, sol)
        assert rep.primal_residual <= 1e-8
        assert rep.dual_residual <= 1e-8
        assert rep.complementarity <= 1e-8 * (1 + abs(sol.obj))
        assert rep.duality_gap <= 1e-8


def test_format_lp_dump():
    lp = LinearProgram(c=[1.0, -2.0], a_mat=[[1.0, 1.0]], senses=("<=",), rhs=[1.0],
                       lower=[0.0, 0.0], upper=[1.0, np.inf])
    text = format_lp(lp)
    assert "minimize" in text and "subject to" in text and "bounds" in text
    assert "x0" in text and "x1" in text
