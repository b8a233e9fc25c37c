import itertools
import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from twohop._ib import SolverConfig, grid_search_part, minimize_part
from twohop.errors import DomainError, ShapeError
from twohop.prob import Kernel, TwoHopSource, theta_n
from twohop.single_letter import (AuxCoupling, CardBounds, Q1Coupling, RegionPoint,
                                  TradeoffWeights, certify_in, certify_out, gamma_objective,
                                  objective_r, perturb_gamma, perturbation_constants,
                                  region_point, solve_r, solve_r_gamma, solve_r_tilde)

# frozen outputs, each confirmed against the symmetric-channel oracle below
R_DSBS = -0.4309100704109941          # w = (0.5, 1, 0.5)
R_TILDE_DSBS = -0.3629188137876543    # (b1, b2, c, d) = (0.3, 0.3, 1, 0.5)
R_GAMMA_DSBS = -0.6539637920949942    # w = (0.5, 1, 0.5), gamma = 4, theta = theta_16


def _h(p):
    return 0.0 if p in (0.0, 1.0) else -p * math.log(p) - (1 - p) * math.log(1 - p)


def symmetric_part(lam, kappa, p=0.1):
    """min over BSC(q) test channels of lam I(U;S) - kappa I(U;T) for a BSC(p) pair.

    For doubly symmetric binary pairs the optimum is a symmetric channel, so this
    scalar search is an independent oracle.
    """
    def f(q):
        return lam * (math.log(2) - _h(q)) - kappa * (math.log(2) - _h(q * (1 - p) + p * (1 - q)))
    r = minimize_scalar(f, bounds=(0, 0.5), method="bounded", options={"xatol": 1e-12})
    return min(r.fun, f(0.0), f(0.5))


def product_source():
    return TwoHopSource.from_arrays(np.outer([0.3, 0.7], [0.4, 0.6]),
                                    np.array([[0.25, 0.75], [0.25, 0.75]]))


@pytest.fixture(scope="module")
def dsbs():
    return TwoHopSource.dsbs(0.1, 0.1)


def test_objective_examples(dsbs):
    const = AuxCoupling.constant(dsbs)
    assert objective_r(dsbs, const, (1, 2, 3)) == pytest.approx(0.0, abs=1e-15)
    ident = AuxCoupling.identity(dsbs)
    assert objective_r(dsbs, ident, (0, 0, 0)) == pytest.approx(-dsbs.mi_xy(), abs=1e-14)
    src = product_source()
    rng = np.random.default_rng(0)
    for _ in range(5):
        aux = AuxCoupling.from_arrays(src, rng.dirichlet(np.ones(3), size=2),
                                      rng.dirichlet(np.ones(3), size=2))
        assert objective_r(src, aux, (0.7, 1.3, 0.2)) >= -1e-12


def test_objective_relabel_invariance(dsbs):
    rng = np.random.default_rng(1)
    wu, wv = rng.dirichlet(np.ones(3), size=2), rng.dirichlet(np.ones(3), size=2)
    aux = AuxCoupling.from_arrays(dsbs, wu, wv)
    perm = AuxCoupling.from_arrays(dsbs, wu[:, [2, 0, 1]], wv[:, [1, 2, 0]])
    w = (0.4, 1.1, 0.3)
    assert objective_r(dsbs, aux, w) == pytest.approx(objective_r(dsbs, perm, w), abs=1e-15)


def test_objective_card_bounds(dsbs):
    aux = AuxCoupling.from_arrays(dsbs, np.full((2, 5), 0.2), np.full((2, 2), 0.5))
    with pytest.raises(ShapeError):
        objective_r(dsbs, aux, (1, 1, 1), CardBounds(3, 3))


def test_solve_r_dsbs_value(dsbs):
    oracle = symmetric_part(0.5, 2.0) + symmetric_part(0.5, 1.0)
    assert oracle == pytest.approx(R_DSBS, abs=1e-9)
    sol = solve_r(dsbs, (0.5, 1, 0.5))
    assert sol.value == pytest.approx(R_DSBS, abs=1e-9)
    assert objective_r(dsbs, sol.aux, (0.5, 1, 0.5)) == pytest.approx(sol.value, abs=1e-12)
    assert sol.converged


def test_solve_r_grid_oracle(dsbs):
    # the grid is coarse, so it can only be above the solver by its resolution
    gu, _, _ = grid_search_part(dsbs.pxy, 0.5, 2.0, 3, 0.02, 0.002, 2_000_000)
    gv, _, _ = grid_search_part(dsbs.pyz, 0.5, 1.0, 3, 0.02, 0.002, 2_000_000)
    assert R_DSBS <= gu + gv + 1e-12
    assert gu + gv - R_DSBS < 1e-3


def test_solve_r_tilde_dsbs_value(dsbs):
    oracle = 2 * symmetric_part(0.3, 1.0) + symmetric_part(0.5, 1.0)
    assert oracle == pytest.approx(R_TILDE_DSBS, abs=1e-9)
    assert solve_r_tilde(dsbs, (0.3, 0.3, 1, 0.5)).value == pytest.approx(R_TILDE_DSBS, abs=1e-9)


def test_independent_source_collapses():
    src = product_source()
    for w in [(0, 0, 0), (0.5, 2, 0), (1, 1, 1)]:
        assert abs(solve_r(src, w).value) <= 1e-9
    assert abs(solve_r_tilde(src, (0, 0, 2, 0)).value) <= 1e-9
    assert abs(solve_r_gamma(src, (0.5, 1, 0.5), 3.0, 0.2, random_starts=2).value) <= 1e-9


def test_independent_xy_keeps_v_part(dsbs):
    """Only P_XY is a product here; the receiver still sees Y-Z dependence."""
    src = TwoHopSource.from_arrays(np.full((2, 2), 0.25), dsbs.w_zy)
    sol = solve_r(src, (0, 1, 0))
    assert abs(sol.u_part.value) < 1e-12
    assert sol.value == pytest.approx(-src.mi_yz(), abs=1e-9)


def test_data_processing_and_corner():
    rng = np.random.default_rng(5)
    for _ in range(5):
        src = TwoHopSource.random(rng, (2, 3, 2))
        assert solve_r(src, (2.0, 1.0, 1.0)).value == pytest.approx(0.0, abs=1e-9)
        c = float(rng.uniform(0.2, 2))
        ref = -(1 + c) * src.mi_xy() - c * src.mi_yz()
        assert solve_r(src, (0, c, 0)).value == pytest.approx(ref, abs=1e-7)
        assert solve_r_tilde(src, (1.0, 1.0, 1.0, 1.0)).value == pytest.approx(0.0, abs=1e-9)


def test_solve_r_monotone_in_weights():
    src = TwoHopSource.random(np.random.default_rng(6), (2, 2, 2))
    grid = (0.0, 0.5, 1.0, 2.0)
    val = {w: solve_r(src, w).value for w in itertools.product(grid, repeat=3)}
    for (b, c, d), v in val.items():
        assert v <= 1e-9
        for k, step in enumerate(grid[:-1]):
            nxt = grid[k + 1]
            if b == step:
                assert val[(nxt, c, d)] >= v - 1e-6
            if d == step:
                assert val[(b, c, nxt)] >= v - 1e-6
            if c == step:
                assert val[(b, nxt, d)] <= v + 1e-6


def test_solve_r_below_probed_couplings(dsbs):
    rng = np.random.default_rng(7)
    w = (0.5, 1, 0.5)
    for _ in range(50):
        aux = AuxCoupling.from_arrays(dsbs, rng.dirichlet(np.ones(3), size=2),
                                      rng.dirichlet(np.ones(3), size=2))
        assert R_DSBS <= objective_r(dsbs, aux, w) + 1e-12


def test_minimize_part_deterministic(dsbs):
    cfg = SolverConfig(restarts=8, seed=3)
    a = minimize_part(dsbs.pxy, 0.5, 2.0, 3, cfg)
    b = minimize_part(dsbs.pxy, 0.5, 2.0, 3, cfg)
    assert a.value == b.value and np.array_equal(a.kernel, b.kernel)


def test_certify_in_examples(dsbs):
    assert certify_in(dsbs, RegionPoint(0, 0, 0, 0)) is not None
    extreme = RegionPoint(math.log(2), math.log(2), dsbs.mi_xy(), dsbs.mi_xy() + dsbs.mi_yz())
    wit = certify_in(dsbs, extreme)
    assert wit is not None
    pt = region_point(dsbs, wit)
    assert pt.E2 >= extreme.E2 - 1e-9
    assert certify_in(dsbs, RegionPoint(0.1, 0.1, dsbs.mi_xy() + 0.01, 0)) is None


def test_certify_in_dsbs_frontier(dsbs):
    # largest E1 at R1 = 0.2 from the symmetric-channel oracle: I(U;X) = 0.2 fixes q
    from scipy.optimize import brentq
    q = brentq(lambda q: math.log(2) - _h(q) - 0.2, 1e-9, 0.5 - 1e-12)
    e1 = math.log(2) - _h(q * 0.9 + 0.1 * (1 - q))
    wit = certify_in(dsbs, RegionPoint(0.2, 0.2, e1 - 1e-6, 2 * e1 - 1e-6))
    assert wit is not None
    assert e1 == pytest.approx(0.124463, abs=1e-6)
    assert certify_in(dsbs, RegionPoint(0.2, 0.2, e1 + 1e-3, 0)) is None


def test_certify_out_examples(dsbs):
    hit = certify_out(dsbs, RegionPoint(10, 10, 0.45, 0))
    assert hit is not None
    assert -0.45 + hit.b * 10 - hit.c * 0 + hit.d * 10 < solve_r(dsbs, hit).value
    assert certify_out(dsbs, RegionPoint(0.3, 0.2, 0, 0)) is None
    wit = certify_in(dsbs, RegionPoint(0.2, 0.2, 0.1, 0.2))
    assert certify_out(dsbs, region_point(dsbs, wit)) is None


def test_certify_out_b_scan_misses(dsbs):
    """With c = d = 0 only b = 0 separates (10, 10, 0.45, 0)."""
    grid = [(float(b), 0.0, 0.0) for b in (1, 2, 4, 8, 16, 32, 64)]
    assert certify_out(dsbs, RegionPoint(10, 10, 0.45, 0), grid) is None
    assert certify_out(dsbs, RegionPoint(10, 10, 0.45, 0), [(0.0, 0.0, 0.0)]) is not None


# ---------------------------------------------------------------------------
# band-constrained objective


def test_solve_r_gamma_dsbs_value(dsbs):
    th = theta_n(dsbs, 16, 0.2, 0.2)
    sol = solve_r_gamma(dsbs, (0.5, 1, 0.5), 4.0, th)
    assert sol.value == pytest.approx(R_GAMMA_DSBS, abs=1e-6)
    assert sol.coupling.band_violations(dsbs) == []
    assert gamma_objective(dsbs, sol.coupling, (0.5, 1, 0.5), 4.0)["value"] == pytest.approx(sol.value)
    # the band-constrained minimum never exceeds the unconstrained one
    assert sol.value <= R_DSBS + 1e-12


@pytest.mark.slow
def test_solve_r_gamma_limit_trend(dsbs):
    vals = [solve_r_gamma(dsbs, (0.5, 1, 0.5), g, 0.0).value for g in (1.0, 10.0, 100.0)]
    assert vals[0] <= vals[1] + 1e-9 <= vals[2] + 2e-9
    assert vals[2] <= R_DSBS + 1e-9
    assert R_DSBS - vals[2] < 0.02


def test_solve_r_gamma_domain(dsbs):
    with pytest.raises(DomainError):
        solve_r_gamma(dsbs, (1, 1, 1), 1.0, -0.1)
    with pytest.raises(DomainError):
        solve_r_gamma(dsbs, (1, 1, 1), -1.0, 0.1)


def _q1(src, rng, theta):
    nx, ny, _ = src.sizes
    r = rng.dirichlet(np.ones(nx * ny)).reshape(nx, ny)
    dev = np.abs(r.sum(axis=0) - src.py)
    lam = rng.uniform() * min(1.0, float(np.min(theta * src.py / np.maximum(dev, 1e-300))))
    return Q1Coupling.from_arrays(src, (1 - lam) * src.pxy + lam * r,
                                  rng.dirichlet(np.ones(3), size=nx * ny),
                                  rng.dirichlet(np.ones(3), size=ny), theta)


def test_perturbation_dsbs_random(dsbs):
    rng = np.random.default_rng(11)
    for _ in range(200):
        rep = perturb_gamma(dsbs, _q1(dsbs, rng, 0.05), 4.0)
        assert rep.ok, rep.ledger.table()
        assert rep.p_v[-1] == pytest.approx(0.05 / 1.05, abs=1e-15)
        assert len(rep.perturbed.v_given_y.to_alphabet) == 4
        assert rep.perturbed.v_given_y.to_alphabet[-1] == "v*"


def test_perturbation_trivial_case(dsbs):
    aux = AuxCoupling.from_arrays(dsbs, np.array([[0.8, 0.2], [0.3, 0.7]]), np.ones((2, 1)))
    rep = perturb_gamma(dsbs, Q1Coupling.from_aux(dsbs, aux, 0.1), 4.0)
    assert rep.ok
    joint = rep.perturbed.joint(dsbs)
    assert np.allclose(joint.marginal("Y").mass, dsbs.py, atol=1e-15)
    assert np.allclose(rep.p_y_given_v[-1], dsbs.py, atol=1e-15)


def test_perturbation_band_violation(dsbs):
    q = np.array([[0.7, 0.1], [0.1, 0.1]])
    q1 = Q1Coupling.from_arrays(dsbs, q, np.full((4, 2), 0.5), np.full((2, 2), 0.5), 0.1)
    with pytest.raises(DomainError, match="y = 0"):
        perturb_gamma(dsbs, q1, 4.0)


def test_perturbation_constants(dsbs):
    a_prime, a = perturbation_constants(dsbs, (1.0, 2.0, 3.0))
    assert a_prime == pytest.approx(1.0 * math.log(2) + 3.0 * math.log(2))
    assert a == pytest.approx(a_prime + 3.0 * math.log(2) + 2.0 * math.log(2))


def test_aux_json_roundtrip(dsbs):
    aux = AuxCoupling.from_arrays(dsbs, np.array([[0.8, 0.2], [0.3, 0.7]]), np.eye(2))
    back = AuxCoupling.from_json(dsbs, aux.to_json())
    assert np.array_equal(back.u_given_x.rows, aux.u_given_x.rows)
    assert isinstance(back.v_given_y, Kernel)


def test_weights_validation():
    with pytest.raises(DomainError):
        TradeoffWeights(-1, 0, 0)
