"""Achievable codes: random quantize-and-test codes and the two-code time share."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels
from . import ledger as lg
from .code_model import EXACT_BUDGET, H0, H1, ErrorProfile, TwoHopCode, exact_errors, weighted_lhs
from .errors import BudgetError, DomainError
from .prob import TwoHopSource, mi_matrix, sequence_mass
from .single_letter import AuxCoupling

_ROW_CHUNK = 1 << 22
CODEBOOK_BUDGET = 1 << 22


def _log_ratio(joint: np.ndarray) -> np.ndarray:
    """``log(p(a,b) / (p(a) p(b)))`` with ``-inf`` where the joint vanishes."""
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(joint) - np.log(pa) - np.log(pb)
    out[joint <= 0] = -np.inf
    return out


def _codebook(rng: np.random.Generator, p: np.ndarray, rate: float, n: int) -> np.ndarray:
    """Draw ``ceil(exp(n rate))`` i.i.d. codewords and keep the first copy of each."""
    size = max(1, math.ceil(math.exp(n * rate)))
    if size > CODEBOOK_BUDGET:
        raise BudgetError(f"codebook of {size} words exceeds CODEBOOK_BUDGET = {CODEBOOK_BUDGET}")
    draws = rng.choice(len(p), size=(size, n), p=p)
    _, first = np.unique(draws, axis=0, return_index=True)
    return draws[np.sort(first)]


@dataclass(frozen=True)
class QuantizeBinCode:
    code: TwoHopCode
    u_codebook: np.ndarray
    v_codebook: np.ndarray
    relay_bit: bool


def build_quantize_bin(source: TwoHopSource, aux: AuxCoupling, n: int, rate_margins=0.1,
                       seed: int = 0, detail: bool = False):
    """Random codebooks ``u^n ~ P_U^n`` and ``v^n ~ P_V^n`` with likelihood-ratio tests.

    The encoders pick the codeword with the largest summed information density.
    A decoder accepts H0 when the average density with its side sequence exceeds
    the single-letter mutual information minus half the margin; the receiver also
    requires the relay's accept bit when the relay test is not constant.
    """
    aux.validate(source)
    if n < 1:
        raise DomainError("n must be at least 1")
    m1, m2 = (rate_margins, rate_margins) if np.ndim(rate_margins) == 0 else rate_margins
    if m1 <= 0 or m2 <= 0:
        warnings.warn("nonpositive rate margin: encoding failures are not controlled", stacklevel=2)
    rng = np.random.default_rng(seed)
    nx, ny, nz = source.sizes
    if max(nx, ny, nz) ** n > EXACT_BUDGET:
        raise BudgetError(f"{max(nx, ny, nz)}^{n} sequences exceed EXACT_BUDGET = {EXACT_BUDGET}")
    wu, wv = aux.u_given_x.rows, aux.v_given_y.rows
    p_xu = source.px[:, None] * wu
    p_uy = wu.T @ source.pxy
    p_yv = source.py[:, None] * wv
    p_vz = wv.T @ source.pyz
    i_ux, i_uy, i_vy, i_vz = (mi_matrix(a) for a in (p_xu, p_uy, p_yv, p_vz))

    rate_u = 0.0 if i_ux < 1e-12 else i_ux + m1
    rate_v = 0.0 if i_vy < 1e-12 else i_vy + m2
    cb_u = _codebook(rng, p_xu.sum(axis=0), rate_u, n)
    cb_v = _codebook(rng, p_yv.sum(axis=0), rate_v, n)
    n_u, n_v = len(cb_u), len(cb_v)

    f1, _ = kernels.best_codeword(cb_u, _log_ratio(p_xu).T, n)
    v_of_y, _ = kernels.best_codeword(cb_v, _log_ratio(p_yv).T, n)

    thr_uy = i_uy - m1 / 2
    lut_uy = _log_ratio(p_uy)
    n_y = ny ** n
    g1 = np.empty((n_u, n_y), dtype=np.int8)
    step = max(1, _ROW_CHUNK // n_y)
    for s in range(0, n_u, step):
        sc = kernels.pair_scores(cb_u[s:s + step], lut_uy, n)
        g1[s:s + step] = np.where(sc / n > thr_uy, H0, H1)
    relay_bit = bool(g1.min() != g1.max())

    thr_vz = i_vz - m2 / 2
    accept_vz = np.where(kernels.pair_scores(cb_v, _log_ratio(p_vz), n) / n > thr_vz, H0, H1)
    if relay_bit:
        f2 = g1.astype(np.int64) * n_v + v_of_y[None, :]
        g2 = np.vstack([accept_vz, np.full_like(accept_vz, H1)])
        n2 = 2 * n_v
    else:
        f2 = np.broadcast_to(v_of_y, (n_u, n_y)).copy()
        g2 = accept_vz
        n2 = n_v
    code = TwoHopCode(n, n_u, n2, f1, f2, g1, g2)
    if detail:
        return QuantizeBinCode(code, cb_u, cb_v, relay_bit)
    return code


# ---------------------------------------------------------------------------
# time sharing


def default_partition(source: TwoHopSource, n: int, eps1: float, eps2: float) -> np.ndarray:
    """Boolean mask of X1 over x^n.

    Sequences are ordered by mass (descending, ties by index) and cut where the
    smaller of the two slacks ``P(X1) - (1 - eps1)`` and ``P(X2) - (1 - eps2)`` is
    largest.
    """
    px = sequence_mass(source.px, n)
    order = np.argsort(-px, kind="stable")
    prefix = np.concatenate([[0.0], np.cumsum(px[order])])
    slack = np.minimum(prefix - (1 - eps1), (1 - prefix) - (1 - eps2))
    k = int(np.argmax(slack))
    if slack[k] <= 0:
        raise DomainError(f"no cut gives P(X1) > {1 - eps1} and P(X2) > {1 - eps2}; "
                          f"best cut has P(X1) = {prefix[k]:.6g}, P(X2) = {1 - prefix[k]:.6g}")
    mask = np.zeros(len(px), dtype=bool)
    mask[order[:k]] = True
    return mask


@dataclass(frozen=True)
class TimeshareReport:
    code: TwoHopCode
    p_x1: float
    p_x2: float
    ledger: lg.Ledger


def build_timeshare(code_relay_only: TwoHopCode, code_receiver_only: TwoHopCode, x_partition,
                    n: int, eps1: float | None = None, eps2: float | None = None,
                    source: TwoHopSource | None = None) -> TwoHopCode:
    """Route ``x^n`` in X1 to the relay-only code and the rest to the receiver-only code.

    The routing bit is the high part of both messages. On X1 the relay decodes
    with the first code and the receiver declares H1; on X2 the relay declares H1
    and both hops run the second code.
    """
    a, b = code_relay_only, code_receiver_only
    if a.n != n or b.n != n:
        raise DomainError("component codes must have blocklength n")
    if a.sizes != b.sizes:
        raise DomainError("component codes use different alphabets")
    mask = np.asarray(x_partition, dtype=bool)
    nx, ny, nz = a.sizes
    if mask.shape != (nx ** n,):
        raise DomainError("partition mask must have one entry per x^n")
    if source is not None and eps1 is not None and eps2 is not None:
        px = sequence_mass(source.px, n)
        p1, p2 = float(px[mask].sum()), float(px[~mask].sum())
        if not (p1 > 1 - eps1 and p2 > 1 - eps2):
            raise DomainError(f"partition masses P(X1) = {p1:.6g}, P(X2) = {p2:.6g} violate "
                              f"P(X1) > {1 - eps1:.6g}, P(X2) > {1 - eps2:.6g}")
    k1 = max(a.N1, b.N1)
    k2 = b.N2
    n_y = ny ** n
    f1 = np.where(mask, a.f1, k1 + b.f1)
    f2 = np.zeros((2 * k1, n_y), dtype=np.int64)
    g1 = np.full((2 * k1, n_y), H1, dtype=np.int8)
    g1[: a.N1] = a.g1
    f2[k1: k1 + b.N1] = k2 + b.f2
    g2 = np.full((2 * k2, nz ** n), H1, dtype=np.int8)
    g2[k2:] = b.g2
    return TwoHopCode(n, 2 * k1, 2 * k2, f1, f2, g1, g2)


def timeshare_report(source: TwoHopSource, code_relay_only: TwoHopCode,
                     code_receiver_only: TwoHopCode, x_partition, n: int, eps1: float,
                     eps2: float) -> TimeshareReport:
    """Build the composite code and check the case-split inequalities exactly."""
    code = build_timeshare(code_relay_only, code_receiver_only, x_partition, n, eps1, eps2, source)
    mask = np.asarray(x_partition, dtype=bool)
    px = sequence_mass(source.px, n)
    p1, p2 = float(px[mask].sum()), float(px[~mask].sum())
    ea = exact_errors(code_relay_only, source)
    eb = exact_errors(code_receiver_only, source)
    ec = exact_errors(code, source)
    led = lg.Ledger()
    led.add(lg.ge("1 - beta1 >= P(X1) - beta1'", 1 - ec.beta1, p1 - ea.beta1))
    led.add(lg.le("eta1 <= 1 - P(X2) + eta1''", ec.eta1, 1 - p2 + eb.eta1))
    led.add(lg.le("beta2 <= beta2'", ec.beta2, ea.beta2))
    led.add(lg.le("eta2 <= eta2''", ec.eta2, eb.eta2))
    led.add(lg.le("beta1 <= eps1", ec.beta1, eps1))
    led.add(lg.le("eta1 <= eps2", ec.eta1, eps2))
    return TimeshareReport(code, p1, p2, led)


# ---------------------------------------------------------------------------
# exponent scans


SCAN_HEADER = ["n", "exp_beta2", "exp_eta2", "beta1", "eta1", "lhs_per_n", "flag"]


def exponent_scan(scheme_builder: Callable[[int], TwoHopCode], source: TwoHopSource, n_list,
                  w=None) -> list[dict]:
    """Rows ``(n, -log beta2 / n, -log eta2 / n, beta1, eta1)`` from exact evaluation."""
    rows = []
    for n in n_list:
        code = scheme_builder(n)
        prof: ErrorProfile = exact_errors(code, source)
        flags = []
        e1 = math.inf if prof.beta2 == 0 else -math.log(prof.beta2) / n
        e2 = math.inf if prof.eta2 == 0 else -math.log(prof.eta2) / n
        if prof.beta2 == 0:
            flags.append("beta2=0")
        if prof.eta2 == 0:
            flags.append("eta2=0")
        lhs = weighted_lhs(prof, code.N1, code.N2, w) / n if w is not None else math.nan
        rows.append({"n": n, "exp_beta2": e1, "exp_eta2": e2, "beta1": prof.beta1,
                     "eta1": prof.eta1, "lhs_per_n": lhs, "flag": ";".join(flags),
                     "N1": code.N1, "N2": code.N2, "profile": prof})
    return rows
