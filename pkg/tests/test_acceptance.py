"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in the
terminal summary under "acceptance criteria".
"""
import itertools
import math
import time

import numpy as np
import pytest

from conftest import record
from twohop import oracle
from twohop.code_model import exact_errors, mc_errors
from twohop.converse import chosen_t, rhc_step, semigroup_apply
from twohop.prob import TwoHopSource, theta_n
from twohop.schemes import build_quantize_bin, default_partition, timeshare_report
from twohop.single_letter import (AuxCoupling, Q1Coupling, TradeoffWeights, joint_minimize,
                                  perturb_gamma, solve_r, solve_r_gamma)

pytestmark = pytest.mark.acceptance

GRID = (0.0, 0.5, 1.0, 2.0)
WEIGHTS = [TradeoffWeights(*t) for t in itertools.product(GRID, repeat=3)]


def _sizes(rng, binary=False):
    if binary:
        return (2, 2, 2)
    return tuple(int(v) for v in rng.integers(2, 4, size=3))


def test_c01_independence_collapse():
    """P_XY = P_X P_Y with a random channel P_Z|Y."""
    t0 = time.time()
    rng = np.random.default_rng(101)
    worst, worst_u = 0.0, 0.0
    for _ in range(20):
        src = TwoHopSource.random(rng, _sizes(rng), independent_xy=True)
        for w in WEIGHTS:
            sol = solve_r(src, w)
            worst = max(worst, abs(sol.value))
            worst_u = max(worst_u, abs(sol.u_part.value))
    ok = worst <= 1e-6
    # the V-part keeps -c I(V;Z) when Z depends on Y, so only the U-part must vanish
    record("criterion 1 (independence collapse)", ok,
           f"max |R| = {worst:.3e}, max |U-part| = {worst_u:.3e} over 20 sources x 64 weights "
           f"({time.time() - t0:.1f}s)")
    assert ok


def test_c01_companion_fully_independent():
    """Companion check: with Z also independent of Y every weight gives 0."""
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(20):
        sz = _sizes(rng)
        pxy = np.outer(rng.dirichlet(np.ones(sz[0])), rng.dirichlet(np.ones(sz[1])))
        w_zy = np.tile(rng.dirichlet(np.ones(sz[2])), (sz[1], 1))
        src = TwoHopSource.from_arrays(pxy, w_zy)
        for w in WEIGHTS:
            worst = max(worst, abs(solve_r(src, w).value))
    record("criterion 1 companion (X, Y, Z independent)", worst <= 1e-6, f"max |R| = {worst:.3e}")
    assert worst <= 1e-6


def test_c02_data_processing_zeros():
    t0 = time.time()
    rng = np.random.default_rng(202)
    lo, hi, count = 0.0, -math.inf, 0
    for _ in range(20):
        src = TwoHopSource.random(rng, (2, 2, 2))
        for w in WEIGHTS:
            if w.b >= 1 + w.c and w.d >= w.c:
                v = solve_r(src, w).value
                lo, hi, count = min(lo, v), max(hi, v), count + 1
    ok = lo >= -1e-6 and hi <= 0
    record("criterion 2 (data-processing zeros)", ok,
           f"{count} solves, values in [{lo:.3e}, {hi:.3e}] ({time.time() - t0:.1f}s)")
    assert ok


def test_c03_closed_form_corner():
    t0 = time.time()
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(10):
        src = TwoHopSource.random(rng, (2, 2, 2))
        for c in (0.5, 1.0, 2.0):
            ref = -(1 + c) * src.mi_xy() - c * src.mi_yz()
            worst = max(worst, abs(solve_r(src, (0.0, c, 0.0)).value - ref))
    ok = worst <= 1e-4
    record("criterion 3 (closed-form corner)", ok,
           f"max error {worst:.3e} ({time.time() - t0:.1f}s)")
    assert ok


def test_c04_separability():
    t0 = time.time()
    rng = np.random.default_rng(404)
    worst = 0.0
    for _ in range(50):
        src = TwoHopSource.random(rng, _sizes(rng))
        w = TradeoffWeights(*rng.choice(GRID, size=3))
        sol = solve_r(src, w)
        joint, _ = joint_minimize(src, w)
        worst = max(worst, abs(joint - (sol.u_part.value + sol.v_part.value)))
    ok = worst <= 1e-6
    record("criterion 4 (separability)", ok,
           f"max |joint - parts| = {worst:.3e} ({time.time() - t0:.1f}s)")
    assert ok


# ---------------------------------------------------------------------------
# criteria 5 and 6 share one audit run per (n, gamma)

EPS = 0.2
W111 = TradeoffWeights(1.0, 1.0, 1.0)


def _code_set(src, n):
    if n == 1:
        return oracle.all_codes(src.sizes, 1, 2, 2)
    return oracle.frontier_codes(src, n, 2, 2, EPS, EPS)


@pytest.fixture(scope="module")
def audit_runs():
    src = TwoHopSource.dsbs(0.1, 0.1)
    runs = {}
    for n in (1, 2):
        th = theta_n(src, n, EPS, EPS)
        for gamma in sorted({1.0, math.sqrt(n)}):
            t0 = time.time()
            r_hat = solve_r_gamma(src, W111, gamma, th).value
            s = oracle.audit_codes(_code_set(src, n), src, EPS, EPS, W111, gamma, r_hat=r_hat)
            runs[(n, gamma)] = (s, r_hat, time.time() - t0)
    return runs


@pytest.mark.slow
def test_c05_exhaustive_converse_audit(audit_runs):
    parts, ok = [], True
    for (n, gamma), (s, _, dt) in audit_runs.items():
        ok &= s.fails == 0 and s.feasible > 0
        parts.append(f"n={n} gamma={gamma:.3f}: {s.feasible}/{s.codes_checked} feasible, "
                     f"{s.fails} failing ({dt:.0f}s)")
    record("criterion 5 (exhaustive converse audit)", ok, "; ".join(parts))
    assert ok


@pytest.mark.slow
def test_c06_single_letter_gap(audit_runs):
    parts, ok = [], True
    for (n, gamma), (s, r_hat, _) in audit_runs.items():
        g = np.array(s.gaps)
        bad = int((g < -1e-3).sum())
        inconclusive = int(((g < 0) & (g >= -1e-3)).sum())
        ok &= bad == 0 and inconclusive <= 0.05 * len(g)
        parts.append(f"n={n} gamma={gamma:.3f}: min gap {g.min():.4f}, "
                     f"{inconclusive} inconclusive, {bad} below -1e-3")
    record("criterion 6 (single-letter gap)", ok, "; ".join(parts))
    assert ok


# ---------------------------------------------------------------------------


def test_c07_reverse_hypercontractivity():
    t0 = time.time()
    rng = np.random.default_rng(707)
    worst_step, worst_t1, worst_dom = math.inf, 0.0, math.inf
    for _ in range(1000):
        sz = (2, int(rng.integers(2, 4)), int(rng.integers(2, 4)))
        src = TwoHopSource.random(rng, sz)
        n = int(rng.integers(1, 7 if sz[2] == 2 else 6))
        e1, e2 = rng.uniform(0, 0.9, size=2)
        if e1 + e2 >= 0.95:
            e1, e2 = e1 / 2, e2 / 2
        t, _, _ = chosen_t(src, n, e1, e2)
        y = rng.integers(0, sz[1], n)
        g = rng.random(sz[2] ** n) < rng.uniform(0.05, 0.95)
        if not g.any():
            g[rng.integers(g.size)] = True
        lhs, rhs = rhc_step(src, y, g.astype(float), t)
        worst_step = min(worst_step, lhs - rhs)
        one = semigroup_apply("T", src, t, np.ones(g.size), y=y, n=n)
        worst_t1 = max(worst_t1, float(np.abs(one - 1).max()))
        lam = semigroup_apply("Lambda", src, t, g.astype(float), n=n)
        tt = semigroup_apply("T", src, t, g.astype(float), y=y, n=n)
        worst_dom = min(worst_dom, float((lam - tt).min()))
    ok = worst_step >= -1e-9 and worst_t1 <= 1e-12 and worst_dom >= -1e-12
    record("criterion 7 (reverse hypercontractivity)", ok,
           f"min step margin {worst_step:.3e}, max |T1-1| {worst_t1:.1e}, "
           f"min (Lambda-T) {worst_dom:.3e} ({time.time() - t0:.1f}s)")
    assert ok


def _random_q1(rng, src):
    nx, ny, _ = src.sizes
    theta = float(rng.uniform(0.02, 1.0))
    r = rng.dirichlet(np.ones(nx * ny)).reshape(nx, ny)
    dev = np.abs(r.sum(axis=0) - src.py)
    lam_max = min(1.0, float(np.min(theta * src.py / np.maximum(dev, 1e-300))))
    lam = rng.uniform(0, 1) * lam_max
    qxy = (1 - lam) * src.pxy + lam * r
    wu = rng.dirichlet(np.full(int(rng.integers(2, 5)), 0.5), size=nx * ny)
    wv = rng.dirichlet(np.full(int(rng.integers(2, 5)), 0.5), size=ny)
    return Q1Coupling.from_arrays(src, qxy, wu, wv, theta)


def test_c08_perturbation_identities():
    t0 = time.time()
    rng = np.random.default_rng(808)
    fails, y_dev, premise_skips = 0, 0.0, 0
    for _ in range(1000):
        src = TwoHopSource.random(rng, _sizes(rng))
        q1 = _random_q1(rng, src)
        gamma = float(rng.choice([1.0, 4.0, 16.0, 100.0]))
        w = tuple(rng.choice(GRID, size=3))
        rep = perturb_gamma(src, q1, gamma, w=w)
        y_dev = max(y_dev, rep.ledger["Y-marginal preserved"].lhs)
        fails += len(rep.ledger.failures())
        premise_skips += rep.ledger.counts()["premise-failed"]
    ok = fails == 0 and y_dev <= 1e-12
    record("criterion 8 (perturbation identities)", ok,
           f"{fails} failing entries, max |P~_Y - P_Y| {y_dev:.1e}, "
           f"{premise_skips} premise-failed entries ({time.time() - t0:.1f}s)")
    assert ok


def test_c09_achievability_trend():
    t0 = time.time()
    src = TwoHopSource.dsbs(0.1, 0.1)
    aux = AuxCoupling.identity(src)
    ns = list(range(4, 13))
    profs = [exact_errors(build_quantize_bin(src, aux, n, 0.1, seed=0), src) for n in ns]
    e1 = np.array([-math.log(p.beta2) / n for p, n in zip(profs, ns)])
    e2 = np.array([-math.log(p.eta2) / n for p, n in zip(profs, ns)])
    b1 = np.array([p.beta1 for p in profs])
    h1 = np.array([p.eta1 for p in profs])
    i_xy, i_yz = src.mi_xy(), src.mi_yz()
    checks = {
        "exp_beta2 nondecreasing": bool(np.all(np.diff(e1) >= -1e-12)),
        "exp_beta2 <= I(X;Y)+0.05": bool(np.all(e1 <= i_xy + 0.05)),
        "exp_eta2 <= I(X;Y)+I(Y;Z)+0.05": bool(np.all(e2 <= i_xy + i_yz + 0.05)),
        "beta1 nonincreasing": bool(np.all(np.diff(b1) <= 1e-12)),
        "eta1 nonincreasing": bool(np.all(np.diff(h1) <= 1e-12)),
    }
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    record("criterion 9 (achievability trend)", ok,
           f"failed: {failed or 'none'}; exp_beta2 {np.round(e1, 3).tolist()}; "
           f"beta1 {np.round(b1, 3).tolist()} ({time.time() - t0:.1f}s)")
    assert ok


def test_c10_timeshare():
    t0 = time.time()
    src = TwoHopSource.dsbs(0.1, 0.1)
    n, eps = 8, 0.6
    comp = build_quantize_bin(src, AuxCoupling.identity(src), n, 0.8, seed=0)
    mask = default_partition(src, n, eps, eps)
    rep = timeshare_report(src, comp, comp, mask, n, eps, eps)
    prof = exact_errors(rep.code, src)
    ok = rep.ledger.ok
    record("criterion 10 (time-share construction)", ok,
           f"beta1 {prof.beta1:.4f}, eta1 {prof.eta1:.4f}, "
           f"{len(rep.ledger.failures())} failing entries ({time.time() - t0:.1f}s)")
    assert ok


def test_c11_monte_carlo_consistency():
    t0 = time.time()
    src = TwoHopSource.dsbs(0.1, 0.1)
    code = build_quantize_bin(src, AuxCoupling.identity(src), 6, 0.1, seed=0)
    exact = exact_errors(code, src).values()
    hits = np.zeros(4, dtype=int)
    for seed in range(100):
        prof = mc_errors(code, src, 100_000, seed=seed)
        for k, (lo, hi) in enumerate(prof.ci):
            hits[k] += lo <= exact[k] <= hi
    ok = bool(np.all(hits >= 93))
    record("criterion 11 (Monte Carlo consistency)", ok,
           f"CI coverage (beta1, beta2, eta1, eta2) = {hits.tolist()} / 100 "
           f"({time.time() - t0:.1f}s)")
    assert ok

