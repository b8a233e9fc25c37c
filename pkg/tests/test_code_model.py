import itertools
import json
import math

import numpy as np
import pytest

from twohop.code_model import (H0, H1, ErrorProfile, TwoHopCode, exact_errors, induced_laws,
                               mc_errors, profile_row, profiles_csv, seq_digits, seq_index,
                               weighted_lhs, wilson_interval)
from twohop.errors import BudgetError, DomainError, ShapeError
from twohop.prob import TwoHopSource


def copy_source(w=None):
    w = np.array([[0.9, 0.1], [0.2, 0.8]]) if w is None else w
    return TwoHopSource.from_arrays(np.eye(2) / 2, w)


def brute_errors(code, src):
    """Direct sum over every (x^n, y^n, z^n) triple."""
    nx, ny, nz = src.sizes
    n = code.n
    out = np.zeros(4)
    for xs in itertools.product(range(nx), repeat=n):
        for ys in itertools.product(range(ny), repeat=n):
            for zs in itertools.product(range(nz), repeat=n):
                p0 = math.prod(src.pxy[x, y] * src.w_zy[y, z] for x, y, z in zip(xs, ys, zs))
                p1 = math.prod(src.px[x] * src.py[y] * src.pz[z] for x, y, z in zip(xs, ys, zs))
                xi = seq_index(np.array(xs), nx)
                yi = seq_index(np.array(ys), ny)
                zi = seq_index(np.array(zs), nz)
                m1 = code.f1[xi]
                m2 = code.f2[m1, yi]
                d1, d2 = code.g1[m1, yi], code.g2[m2, zi]
                out += [p0 * d1, p1 * (1 - d1), p0 * d2, p1 * (1 - d2)]
    return out


def threshold_code(n):
    """Relay forwards whether x^n and y^n agree in most places; the receiver checks z^n."""
    nb = 2 ** n
    x = seq_digits(np.arange(nb), 2, n)
    f1 = (x.sum(axis=1) * 2 > n).astype(int)
    y = seq_digits(np.arange(nb), 2, n)
    ones_y = y.sum(axis=1)
    g1 = np.array([(ones_y * 2 > n) != m for m in (0, 1)], dtype=int)
    f2 = 1 - g1
    g2 = np.array([(ones_y * 2 > n).astype(int) for _ in (0, 1)])
    g2[0] = 1
    return TwoHopCode(n, 2, 2, f1, f2, g1, g2)


def test_seq_index_roundtrip():
    idx = np.arange(27)
    d = seq_digits(idx, 3, 3)
    assert d[5].tolist() == [0, 1, 2]
    assert np.array_equal(seq_index(d, 3), idx)


def test_copy_source_identity_relay():
    src = copy_source()
    code = TwoHopCode(1, 2, 1, [0, 1], [[0, 0], [0, 0]], [[0, 1], [1, 0]], [[0, 0]])
    p = exact_errors(code, src)
    assert p.beta1 == pytest.approx(0.0, abs=1e-15)
    assert p.beta2 == pytest.approx(0.5, abs=1e-15)


def test_constant_codes():
    src = TwoHopSource.dsbs(0.1, 0.2)
    acc = exact_errors(TwoHopCode.trivial(src.sizes, 3, H0, H0), src)
    assert acc.values() == pytest.approx((0.0, 1.0, 0.0, 1.0), abs=1e-14)
    rej = exact_errors(TwoHopCode.trivial(src.sizes, 3, H1, H1), src)
    assert rej.values() == pytest.approx((1.0, 0.0, 1.0, 0.0), abs=1e-14)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_exact_matches_brute_force(n):
    src = TwoHopSource.dsbs(0.1, 0.15)
    code = threshold_code(n)
    assert exact_errors(code, src).values() == pytest.approx(tuple(brute_errors(code, src)), abs=1e-14)


def test_exact_matches_brute_force_random_tables():
    rng = np.random.default_rng(4)
    src = TwoHopSource.random(rng, (2, 3, 2))
    for _ in range(5):
        n, N1, N2 = 2, 3, 2
        code = TwoHopCode(n, N1, N2, rng.integers(0, N1, 4), rng.integers(0, N2, (N1, 9)),
                          rng.integers(0, 2, (N1, 9)), rng.integers(0, 2, (N2, 4)))
        assert exact_errors(code, src).values() == pytest.approx(tuple(brute_errors(code, src)), abs=1e-14)


def test_h1_laws_factorize():
    src = TwoHopSource.dsbs(0.1, 0.2)
    laws = induced_laws(threshold_code(3), src)
    for j in (laws.h1_m1y.mass, laws.h1_m2z.mass):
        assert np.allclose(j, np.outer(j.sum(axis=1), j.sum(axis=0)), atol=1e-15)
        assert j.sum() == pytest.approx(1.0, abs=1e-14)


def test_dsbs_threshold_code_against_monte_carlo():
    src = TwoHopSource.dsbs(0.1, 0.1)
    code = threshold_code(2)
    exact = exact_errors(code, src)
    mc = mc_errors(code, src, 200_000, seed=1)
    for e, m in zip(exact.values(), mc.values()):
        sd = math.sqrt(max(e * (1 - e), 1e-12) / 200_000)
        assert abs(e - m) <= 3 * sd + 1e-12


def test_relabel_invariance():
    rng = np.random.default_rng(8)
    src = TwoHopSource.random(rng, (2, 2, 2))
    code = TwoHopCode(2, 3, 2, rng.integers(0, 3, 4), rng.integers(0, 2, (3, 4)),
                      rng.integers(0, 2, (3, 4)), rng.integers(0, 2, (2, 4)))
    p = exact_errors(code, src)
    q = exact_errors(code.relabel_m1([2, 0, 1]), src)
    assert p.values() == pytest.approx(q.values(), abs=1e-15)


def test_code_validation():
    with pytest.raises(ShapeError):
        TwoHopCode(1, 2, 1, [0, 2], [[0, 0], [0, 0]], [[0, 0], [0, 0]], [[0, 0]])
    with pytest.raises(ShapeError):
        TwoHopCode(1, 2, 1, [0, 1], [[0, 0], [0, 0]], [[0, 2], [0, 0]], [[0, 0]])
    with pytest.raises(ShapeError):
        TwoHopCode(1, 2, 1, [0, 1], [[0, 0]], [[0, 0]], [[0, 0]])
    with pytest.raises(DomainError):
        TwoHopCode(0, 1, 1, [0], [[0]], [[0]], [[0]])
    code = TwoHopCode.trivial((2, 2, 2), 1)
    with pytest.raises(ShapeError):
        exact_errors(code, TwoHopSource.random(np.random.default_rng(0), (3, 2, 2)))


def test_budget_guard():
    src = TwoHopSource.dsbs(0.1, 0.1)
    with pytest.raises(BudgetError):
        exact_errors(TwoHopCode.trivial(src.sizes, 6), src, budget=100)


def test_json_roundtrip(tmp_path):
    code = threshold_code(2)
    path = tmp_path / "c.json"
    path.write_text(code.dumps())
    back = TwoHopCode.load(path)
    for name in ("f1", "f2", "g1", "g2"):
        assert np.array_equal(getattr(back, name), getattr(code, name))
    doc = json.loads(code.dumps())
    del doc["g2"]
    with pytest.raises(ShapeError):
        TwoHopCode.from_json(doc)


def test_weighted_lhs():
    p = ErrorProfile(0.1, 0.25, 0.1, 0.5)
    assert weighted_lhs(p, 4, 2, (1, 2, 0.5)) == pytest.approx(
        math.log(0.25) + math.log(4) + 2 * math.log(0.5) + 0.5 * math.log(2))
    assert weighted_lhs(ErrorProfile(0.1, 0.0, 0.1, 0.5), 1, 1, (0, 1, 0)) == -math.inf
    # eta2 = 0 only matters when c > 0
    assert weighted_lhs(ErrorProfile(0.1, 0.5, 0.1, 0.0), 1, 1, (0, 0, 0)) == pytest.approx(math.log(0.5))
    assert weighted_lhs(ErrorProfile(0.1, 0.5, 0.1, 0.0), 1, 1, (0, 1, 0)) == -math.inf


def test_profile_validation():
    with pytest.raises(DomainError):
        ErrorProfile(1.5, 0, 0, 0)
    with pytest.raises(DomainError):
        ErrorProfile(0, 0, 0, 0, mode="exact", ci=((0, 1),) * 4)


def test_wilson_interval():
    lo, hi = wilson_interval(50, 100)
    assert lo == pytest.approx(0.4038, abs=1e-4) and hi == pytest.approx(0.5962, abs=1e-4)
    lo, hi = wilson_interval(0, 100)
    assert lo == pytest.approx(0.0, abs=1e-15) and hi == pytest.approx(0.0370, abs=1e-4)
    assert wilson_interval(0, 0) == (0.0, 1.0)


def test_monte_carlo_determinism():
    src = TwoHopSource.dsbs(0.1, 0.1)
    code = threshold_code(3)
    a = mc_errors(code, src, 150_000, seed=7, threads=1)
    b = mc_errors(code, src, 150_000, seed=7, threads=4)
    assert a == b
    c = mc_errors(code, src, 150_000, seed=8)
    assert a.values() != c.values()
    with pytest.raises(DomainError):
        mc_errors(code, src, 0)


def test_csv_rows():
    src = TwoHopSource.dsbs(0.1, 0.1)
    code = threshold_code(2)
    text = profiles_csv([profile_row(code, exact_errors(code, src)),
                         profile_row(code, mc_errors(code, src, 1000, seed=3))])
    lines = text.split("\n")
    assert lines[0].startswith("n,N1,N2,beta1")
    assert lines[1].split(",")[7] == "exact"
    assert lines[2].split(",")[7] == "monte_carlo" and lines[2].endswith(",3")
