"""Brute force at tiny blocklengths: optimal deterministic tests for every encoder pair."""
from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .code_model import H0, H1, TwoHopCode, induced_laws
from .converse import PremiseError, audit
from .errors import BudgetError, DomainError
from .prob import TwoHopSource

ENCODER_GUARD = 10 ** 8
EXACT_SUBSET_CELLS = 16
TIE_CAP = 12


# ---------------------------------------------------------------------------
# Neyman-Pearson frontiers


@dataclass(frozen=True)
class Frontier:
    """Pareto-optimal deterministic tests: ``points[i] = (type I, type II)``.

    ``accept[i]`` is the acceptance region over the cells, in the shape of the
    decoder table.
    """

    points: np.ndarray
    accept: np.ndarray

    def __len__(self):
        return len(self.points)

    def best_under(self, eps: float) -> int | None:
        """Index of the smallest type-II error among tests with type-I error ``<= eps``."""
        ok = np.flatnonzero(self.points[:, 0] <= eps + 1e-12)
        if len(ok) == 0:
            return None
        return int(ok[np.argmin(self.points[ok, 1])])

    def decoder(self, i: int) -> np.ndarray:
        return np.where(self.accept[i], H0, H1).astype(np.int8)


def _pareto(points: np.ndarray) -> np.ndarray:
    """Indices of the Pareto-minimal rows, sorted by the first coordinate."""
    order = np.lexsort((points[:, 1], points[:, 0]))
    keep = []
    best = math.inf
    for i in order:
        if points[i, 1] < best - 1e-15:
            keep.append(i)
            best = points[i, 1]
    return np.array(keep, dtype=np.int64)


def _subset_masks(k: int) -> np.ndarray:
    return ((np.arange(1 << k)[:, None] >> np.arange(k)[None, :]) & 1).astype(bool)


def decision_frontier(p0: np.ndarray, p1: np.ndarray) -> Frontier:
    """Exact Pareto set of ``(p0(reject), p1(accept))`` over deterministic acceptance regions.

    Cells with zero H0 mass are always rejected and cells with zero H1 mass are
    always accepted; this never hurts either error. Up to
    ``EXACT_SUBSET_CELLS`` remaining cells every subset is enumerated; beyond that
    the likelihood-ratio sweep with every inclusion pattern inside tied groups.
    """
    shape = p0.shape
    a, b = p0.ravel(), p1.ravel()
    base = (b <= 0)
    free = np.flatnonzero((a > 0) & (b > 0))
    if len(free) <= EXACT_SUBSET_CELLS:
        masks = _subset_masks(len(free))
    else:
        masks = _lrt_masks(a[free], b[free])
    acc = np.broadcast_to(base, (len(masks), a.size)).copy()
    acc[:, free] = masks
    pts = np.stack([(~acc * a).sum(axis=1), (acc * b).sum(axis=1)], axis=1)
    keep = _pareto(pts)
    return Frontier(pts[keep], acc[keep].reshape((len(keep),) + shape))


def _lrt_masks(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    lr = a / b
    order = np.argsort(-lr, kind="stable")
    groups: list[list[int]] = []
    for i in order:
        if groups and math.isclose(lr[groups[-1][0]], lr[i], rel_tol=1e-12):
            groups[-1].append(int(i))
        else:
            groups.append([int(i)])
    out = [np.zeros(len(a), dtype=bool)]
    prefix = np.zeros(len(a), dtype=bool)
    for g in groups:
        if len(g) > TIE_CAP:
            warnings.warn(f"{len(g)} tied cells; only all/none variants enumerated", stacklevel=3)
            variants = np.array([[False] * len(g), [True] * len(g)])
        else:
            variants = _subset_masks(len(g))
        for v in variants:
            m = prefix.copy()
            m[g] = v
            out.append(m)
        prefix[g] = True
    return np.unique(np.array(out), axis=0)


@dataclass(frozen=True)
class Frontiers:
    relay: Frontier
    receiver: Frontier


def np_frontier(f1, f2, source: TwoHopSource, n: int, N1: int | None = None,
                N2: int | None = None) -> Frontiers:
    """Optimal relay and receiver tests for the encoder pair ``(f1, f2)``.

    The relay decision does not change ``M2``, so the two tests are found separately.
    """
    f1 = np.asarray(f1, dtype=np.int64)
    f2 = np.asarray(f2, dtype=np.int64)
    N1 = N1 or int(f2.shape[0])
    N2 = N2 or int(f2.max()) + 1
    nx, ny, nz = source.sizes
    probe = TwoHopCode(n, N1, N2, f1, f2, np.zeros((N1, ny ** n), np.int8),
                       np.zeros((N2, nz ** n), np.int8))
    laws = induced_laws(probe, source)
    return Frontiers(decision_frontier(laws.h0_m1y.mass, laws.h1_m1y.mass),
                     decision_frontier(laws.h0_m2z.mass, laws.h1_m2z.mass))


# ---------------------------------------------------------------------------
# encoder enumeration


def restricted_growth(length: int, k: int):
    """Sequences over ``[k]`` whose first occurrences appear in increasing order."""
    seq = [0] * length

    def rec(i, used):
        if i == length:
            yield tuple(seq)
            return
        for lab in range(min(used + 1, k)):
            seq[i] = lab
            yield from rec(i + 1, max(used, lab + 1))

    yield from rec(0, 0)


def canonical_encoders(sizes, n: int, N1: int, N2: int):
    """Encoder pairs up to relabelling of both message sets.

    ``f1`` is in restricted-growth form; the rows of ``f2`` for messages that
    ``f1`` never sends are fixed to 0 and the used rows, read row-major, are in
    restricted-growth form over ``[N2]``.
    """
    nx, ny, _ = sizes
    n_x, n_y = nx ** n, ny ** n
    for f1 in restricted_growth(n_x, N1):
        used = max(f1) + 1
        for flat in restricted_growth(used * n_y, N2):
            f2 = np.zeros((N1, n_y), dtype=np.int64)
            f2[:used] = np.array(flat).reshape(used, n_y)
            yield np.array(f1, dtype=np.int64), f2


def encoder_count(sizes, n: int, N1: int, N2: int) -> int:
    """Raw number of encoder pairs ``N1^{|X|^n} N2^{N1 |Y|^n}``."""
    nx, ny, _ = sizes
    return N1 ** (nx ** n) * N2 ** (N1 * ny ** n)


def all_codes(sizes, n: int, N1: int, N2: int):
    """Every (n, N1, N2) code with the given alphabets, in a fixed order."""
    nx, ny, nz = sizes
    n_x, n_y, n_z = nx ** n, ny ** n, nz ** n
    for f1 in itertools.product(range(N1), repeat=n_x):
        for f2 in itertools.product(range(N2), repeat=N1 * n_y):
            for g1 in itertools.product((0, 1), repeat=N1 * n_y):
                for g2 in itertools.product((0, 1), repeat=N2 * n_z):
                    yield TwoHopCode(n, N1, N2, np.array(f1), np.array(f2).reshape(N1, n_y),
                                     np.array(g1).reshape(N1, n_y), np.array(g2).reshape(N2, n_z))


def frontier_codes(source: TwoHopSource, n: int, N1: int, N2: int, eps1: float, eps2: float):
    """Canonical encoders combined with every frontier decoder pair meeting the type-I limits."""
    for f1, f2 in canonical_encoders(source.sizes, n, N1, N2):
        fr = np_frontier(f1, f2, source, n, N1, N2)
        rel = np.flatnonzero(fr.relay.points[:, 0] <= eps1 + 1e-12)
        rec = np.flatnonzero(fr.receiver.points[:, 0] <= eps2 + 1e-12)
        for i in rel:
            for j in rec:
                yield TwoHopCode(n, N1, N2, f1, f2, fr.relay.decoder(i), fr.receiver.decoder(j))


# ---------------------------------------------------------------------------
# exhaustive search


@dataclass
class AuditSummary:
    codes_checked: int = 0
    feasible: int = 0
    passes: int = 0
    fails: int = 0
    vacuous: int = 0
    premise_failed: int = 0
    refused: dict = field(default_factory=dict)
    failed_entries: list = field(default_factory=list)
    gaps: list = field(default_factory=list)

    def add(self, other: "AuditSummary") -> None:
        for k in ("codes_checked", "feasible", "passes", "fails", "vacuous", "premise_failed"):
            setattr(self, k, getattr(self, k) + getattr(other, k))
        for k, v in other.refused.items():
            self.refused[k] = self.refused.get(k, 0) + v
        self.failed_entries.extend(other.failed_entries)
        self.gaps.extend(other.gaps)

    def to_json(self) -> dict:
        return {"codes_checked": self.codes_checked, "feasible": self.feasible,
                "passes": self.passes, "fails": self.fails, "vacuous": self.vacuous,
                "premise_failed": self.premise_failed, "refused": dict(self.refused)}


def audit_codes(codes, source: TwoHopSource, eps1: float, eps2: float, w, gamma: float,
                keep_failures: int = 20, r_hat: float | None = None) -> AuditSummary:
    """Run the converse ledger on each code; infeasible codes are counted as refused.

    With ``r_hat`` the gap ``R^(n) - n r_hat`` of every feasible code is collected.
    """
    s = AuditSummary()
    for code in codes:
        s.codes_checked += 1
        try:
            a = audit(code, source, eps1, eps2, w, gamma)
        except PremiseError as e:
            s.refused[e.premise] = s.refused.get(e.premise, 0) + 1
            continue
        s.feasible += 1
        if r_hat is not None:
            s.gaps.append(a.r_n - code.n * r_hat)
        c = a.ledger.counts()
        s.vacuous += c["vacuous"]
        s.premise_failed += c["premise-failed"]
        if c["fail"]:
            s.fails += 1
            if len(s.failed_entries) < keep_failures:
                s.failed_entries.append((code.to_json(), [e.to_json() for e in a.ledger.failures()]))
        else:
            s.passes += 1
    return s


@dataclass(frozen=True)
class OracleResult:
    best_lhs: float
    best_code: TwoHopCode | None
    encoder_pairs: int
    summary: AuditSummary
    sampled: bool = False


def _weights(w):
    return w.as_tuple() if hasattr(w, "as_tuple") else tuple(float(v) for v in w)


def _best_for_pair(f1, f2, source, n, N1, N2, eps1, eps2, w):
    b, c, d = w
    fr = np_frontier(f1, f2, source, n, N1, N2)
    i = fr.relay.best_under(eps1)
    j = fr.receiver.best_under(eps2)
    if i is None or j is None:
        return math.inf, None
    beta2 = fr.relay.points[i, 1]
    eta2 = fr.receiver.points[j, 1]
    if beta2 <= 0 or (c > 0 and eta2 <= 0):
        lhs = -math.inf
    else:
        lhs = math.log(beta2) + b * math.log(N1) + d * math.log(N2)
        if c > 0:
            lhs += c * math.log(eta2)
    code = TwoHopCode(n, N1, N2, f1, f2, fr.relay.decoder(i), fr.receiver.decoder(j))
    return lhs, code


def exhaustive_search(source: TwoHopSource, n: int, N1: int, N2: int, eps1: float, eps2: float,
                      w, gamma: float | None = None, audit_mode: str = "best",
                      threads: int = 1, guard: int = ENCODER_GUARD) -> OracleResult:
    """Smallest weighted left-hand side over all codes meeting the type-I limits.

    ``audit_mode``: ``"none"``, ``"best"`` (the chosen decoders of every encoder
    pair) or ``"frontier"`` (every feasible frontier decoder pair).
    """
    w = _weights(w)
    if eps1 + eps2 >= 1:
        raise DomainError("the converse audit needs eps1 + eps2 < 1")
    raw = encoder_count(source.sizes, n, N1, N2)
    if raw > guard:
        raise BudgetError(f"{raw} encoder pairs exceed the guard {guard}; use sample_search")
    gamma = math.sqrt(n) if gamma is None else gamma
    pairs = list(canonical_encoders(source.sizes, n, N1, N2))

    def work(pair):
        lhs, code = _best_for_pair(*pair, source, n, N1, N2, eps1, eps2, w)
        s = AuditSummary()
        if audit_mode == "best" and code is not None:
            s = audit_codes([code], source, eps1, eps2, w, gamma)
        elif audit_mode == "frontier":
            s = _frontier_audit(pair, source, n, N1, N2, eps1, eps2, w, gamma)
        return lhs, code, s

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, pairs))
    else:
        results = [work(p) for p in pairs]
    best, best_code = math.inf, None
    summary = AuditSummary()
    for lhs, code, s in results:
        summary.add(s)
        if lhs < best:
            best, best_code = lhs, code
    return OracleResult(best, best_code, len(pairs), summary)


def _frontier_audit(pair, source, n, N1, N2, eps1, eps2, w, gamma) -> AuditSummary:
    f1, f2 = pair
    fr = np_frontier(f1, f2, source, n, N1, N2)
    rel = np.flatnonzero(fr.relay.points[:, 0] <= eps1 + 1e-12)
    rec = np.flatnonzero(fr.receiver.points[:, 0] <= eps2 + 1e-12)
    codes = (TwoHopCode(n, N1, N2, f1, f2, fr.relay.decoder(i), fr.receiver.decoder(j))
             for i in rel for j in rec)
    return audit_codes(codes, source, eps1, eps2, w, gamma)


def sample_search(source: TwoHopSource, n: int, N1: int, N2: int, eps1: float, eps2: float, w,
                  n_samples: int, seed: int = 0, gamma: float | None = None) -> OracleResult:
    """Uniformly random encoder pairs with optimal decoders; the sample size is reported."""
    w = _weights(w)
    rng = np.random.default_rng(seed)
    nx, ny, _ = source.sizes
    gamma = math.sqrt(n) if gamma is None else gamma
    best, best_code = math.inf, None
    summary = AuditSummary()
    for _ in range(n_samples):
        f1 = rng.integers(0, N1, nx ** n)
        f2 = rng.integers(0, N2, (N1, ny ** n))
        lhs, code = _best_for_pair(f1, f2, source, n, N1, N2, eps1, eps2, w)
        if code is not None:
            summary.add(audit_codes([code], source, eps1, eps2, w, gamma))
        if lhs < best:
            best, best_code = lhs, code
    return OracleResult(best, best_code, n_samples, summary, sampled=True)
