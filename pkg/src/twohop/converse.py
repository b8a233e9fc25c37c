"""Step-by-step numerical execution of the strong-converse argument on a concrete code.

Every multi-letter quantity is computed exactly from enumerated laws and every
explicit inequality of the argument is recorded in a :class:`~twohop.ledger.Ledger`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from . import ledger as lg
from .code_model import (EXACT_BUDGET, H0, TwoHopCode, apply_kernel_power, exact_errors, seq_digits)
from .errors import BudgetError, DomainError
from .prob import (TwoHopSource, _check_eps, entropy_array, kl_array, log_tau_ratio, mi_matrix,
                   sequence_joint, sequence_mass, source_constants)


class PremiseError(DomainError):
    """The code or blocklength does not meet a premise of the argument."""

    def __init__(self, premise: str, detail: str):
        super().__init__(f"premise violated: {premise} ({detail})")
        self.premise = premise
        self.detail = detail


# ---------------------------------------------------------------------------
# acceptance regions


@dataclass(frozen=True)
class AcceptanceSets:
    """Bitmaps over enumerated tuples; ``D_Z`` is omitted when it would be large."""

    D_Y: np.ndarray
    G: np.ndarray
    D_Z: np.ndarray | None


def acceptance_sets(code: TwoHopCode, max_cells: int = 1 << 22) -> AcceptanceSets:
    nx, ny, nz = code.sizes
    n = code.n
    m1 = code.f1[:, None]
    ys = np.arange(ny ** n)[None, :]
    d_y = code.g1[m1, ys] == H0
    g = code.g2 == H0
    d_z = None
    if (nx * ny * nz) ** n <= max_cells:
        m2 = code.f2[m1, ys]
        d_z = g[m2]
    return AcceptanceSets(d_y, g, d_z)


# ---------------------------------------------------------------------------
# truncation


@dataclass
class TruncationArtifacts:
    n: int
    eps1: float
    eps2: float
    tau: float
    theta: float
    B: np.ndarray
    D_Y: np.ndarray
    T: np.ndarray
    C: np.ndarray
    mass: float
    p_xy: np.ndarray
    p_tilde_xy: np.ndarray
    g_prob: np.ndarray
    beta1: float
    eta1: float
    ledger: lg.Ledger = field(default_factory=lg.Ledger)
    mass_ok: bool = True

    @property
    def L(self) -> float:
        """``log(2 / (1 - eps1 - eps2))``."""
        return math.log(2 / (1 - self.eps1 - self.eps2))

    def truncated_z_given_y(self, source: TwoHopSource, y_index: int) -> np.ndarray:
        """The Z-conditional of the truncated law is the true product channel."""
        ny = source.sizes[1]
        dig = seq_digits(np.array([y_index]), ny, self.n)[0]
        out = source.w_zy[dig[0]]
        for k in range(1, self.n):
            out = np.multiply.outer(out, source.w_zy[dig[k]]).ravel()
        return out


def typical_set(source: TwoHopSource, n: int, theta: float, slack: float = 1e-12) -> np.ndarray:
    """``y^n`` whose type is within ``theta * P_Y(y)`` of ``P_Y(y)`` for every ``y``."""
    ny = source.sizes[1]
    dig = seq_digits(np.arange(ny ** n), ny, n)
    counts = np.stack([(dig == s).sum(axis=1) for s in range(ny)], axis=1) / n
    py = source.py
    return np.all(np.abs(counts - py[None, :]) <= theta * py[None, :] + slack, axis=1)


def _accept_prob(code: TwoHopCode, source: TwoHopSource) -> np.ndarray:
    """``P^n_{Z|Y}(G(m2) | y^n)`` for every (m2, y^n)."""
    h = (code.g2 == H0).astype(float)
    return apply_kernel_power(h, source.w_zy.T, code.n)


def build_truncation(code: TwoHopCode, source: TwoHopSource, n: int, eps1: float, eps2: float,
                     budget: int = EXACT_BUDGET) -> TruncationArtifacts:
    _check_eps(eps1, eps2)
    code.check_source(source)
    if code.n != n:
        raise DomainError(f"code blocklength {code.n} differs from n = {n}")
    nx, ny, nz = source.sizes
    if (nx * ny) ** n > budget or code.N2 * max(ny, nz) ** n > budget:
        raise BudgetError("truncation needs exact enumeration beyond the cell budget")
    prof = exact_errors(code, source, budget=budget)
    if prof.beta1 > eps1 + 1e-12:
        raise PremiseError("beta1 <= eps1", f"beta1 = {prof.beta1:.6g} > {eps1}")
    if prof.eta1 > eps2 + 1e-12:
        raise PremiseError("eta1 <= eps2", f"eta1 = {prof.eta1:.6g} > {eps2}")

    const = source_constants(source, n, eps1, eps2)
    tau = (1 - eps1 - eps2) / (1 + 3 * eps2 - eps1)
    p_xy = sequence_joint(source.pxy, n)
    sets = acceptance_sets(code)
    g_prob = _accept_prob(code, source)
    m2 = code.f2[code.f1[:, None], np.arange(ny ** n)[None, :]]
    pg = g_prob[m2, np.arange(ny ** n)[None, :]]
    B = pg >= tau
    T = typical_set(source, n, const.theta)
    C = B & sets.D_Y & T[None, :]
    mass = float(p_xy[C].sum())
    if mass <= 0:
        raise PremiseError("P(C_n) > 0", "the good set has zero probability")
    p_tilde = np.where(C, p_xy, 0.0) / mass

    led = lg.Ledger()
    gap = 1 - eps1 - eps2
    L = math.log(2 / gap)
    p_b = float(p_xy[B].sum())
    p_t = float(sequence_mass(source.py, n)[T].sum())
    led.add(lg.ge("P(B) >= (3 - 3 eps2 + eps1)/4", p_b, (3 - 3 * eps2 + eps1) / 4))
    typ_ok = p_t >= 1 - gap / 4 - 1e-15
    led.add(lg.ge("P_Y(T) >= 1 - (1-eps1-eps2)/4", p_t, 1 - gap / 4,
                  note="asymptotic premise; checked, not assumed"))
    union = 1 - (1 - p_b) - float(p_xy[~sets.D_Y].sum()) - (1 - p_t)
    led.add(lg.ge("P(C) >= union bound", mass, union))
    led.add(lg.ge("P(C) >= (1-eps1-eps2)/2", mass, gap / 2, premise=typ_ok))
    mass_ok = mass >= gap / 2
    kl = kl_array(p_tilde, p_xy)
    led.add(lg.eq("D(trunc||P) = -log P(C)", kl, -math.log(mass), 1e-12))
    led.add(lg.le("D(trunc||P) <= log 2/(1-eps1-eps2)", kl, L, premise=mass_ok))
    led.add(lg.flag("C = B & D_Y & T", bool(np.array_equal(C, B & sets.D_Y & T[None, :]))))
    led.add(lg.flag("support(trunc) in C", bool(np.all(C[p_tilde > 0]))))

    # dominance of the truncated marginals
    ptx, pty = p_tilde.sum(axis=1), p_tilde.sum(axis=0)
    px_n, py_n = p_xy.sum(axis=1), p_xy.sum(axis=0)
    ptz = apply_kernel_power(pty[None, :], source.w_zy, n)[0]
    pz_n = sequence_mass(source.pz, n)
    for name, pt, pr in (("X", ptx, px_n), ("Y", pty, py_n), ("Z", ptz, pz_n)):
        margin = 2 * pr / gap - pt
        i = int(np.argmin(margin))
        led.add(lg.le(f"P_{name}~ <= 2 P_{name}^n/(1-eps1-eps2)", pt[i], 2 * pr[i] / gap,
                      premise=mass_ok))
    return TruncationArtifacts(n=n, eps1=eps1, eps2=eps2, tau=tau, theta=const.theta, B=B,
                               D_Y=sets.D_Y, T=T, C=C, mass=mass, p_xy=p_xy, p_tilde_xy=p_tilde,
                               g_prob=g_prob, beta1=prof.beta1, eta1=prof.eta1, ledger=led,
                               mass_ok=mass_ok)


# ---------------------------------------------------------------------------
# laws of the truncated messages


@dataclass(frozen=True)
class MessageLaws:
    m1y: np.ndarray
    m2y: np.ndarray
    m2z: np.ndarray
    p_m1: np.ndarray
    p_m2_bar: np.ndarray
    p_m2_bar_tilde: np.ndarray
    p_z: np.ndarray
    beta2: float
    eta2: float


def _push_f2(code: TwoHopCode, m1y: np.ndarray) -> np.ndarray:
    out = np.zeros((code.N2, m1y.shape[1]))
    np.add.at(out, (code.f2, np.broadcast_to(np.arange(m1y.shape[1]), m1y.shape)), m1y)
    return out


def message_laws(code: TwoHopCode, source: TwoHopSource, art: TruncationArtifacts) -> MessageLaws:
    n = code.n
    m1y = kernels.scatter_rows(code.f1, art.p_tilde_xy, code.N1)
    m2y = _push_f2(code, m1y)
    m2z = apply_kernel_power(m2y, source.w_zy, n)
    px_n = art.p_xy.sum(axis=1)
    py_n = art.p_xy.sum(axis=0)
    p_m1 = kernels.scatter_rows(code.f1, px_n[:, None], code.N1)[:, 0]
    p_m2_bar = _push_f2(code, np.outer(p_m1, py_n)).sum(axis=1)
    p_m2_bar_t = _push_f2(code, np.outer(m1y.sum(axis=1), m1y.sum(axis=0))).sum(axis=1)
    accept1 = (code.g1 == H0)
    beta2 = float((np.outer(p_m1, py_n) * accept1).sum())
    p_z = sequence_mass(source.pz, n)
    accept2 = (code.g2 == H0)
    eta2 = float((p_m2_bar @ accept2.astype(float) @ p_z))
    return MessageLaws(m1y, m2y, m2z, p_m1, p_m2_bar, p_m2_bar_t, p_z, beta2, eta2)


def _neg_log(p: float) -> float:
    return math.inf if p <= 0 else -math.log(p)


# ---------------------------------------------------------------------------
# relay hop


def relay_chain(code: TwoHopCode, source: TwoHopSource, art: TruncationArtifacts, eps1: float,
                eps2: float, laws: MessageLaws | None = None) -> lg.Ledger:
    laws = laws or message_laws(code, source, art)
    led = lg.Ledger()
    accept = code.g1 == H0
    vac = laws.beta2 <= 0
    mass_a = float(laws.m1y[accept].sum())
    led.add(lg.eq("trunc mass on A_Y = 1", mass_a, 1.0, 1e-12))
    ref = np.outer(laws.p_m1, art.p_xy.sum(axis=0))
    d_ref = kl_array(laws.m1y, ref)
    lhs = _neg_log(laws.beta2)
    # binary divergence of the acceptance event under both laws
    pa = min(max(mass_a, 0.0), 1.0)
    if pa > 1 - 1e-12:
        pa = 1.0  # rounding only; the mass itself is checked above
    if vac:
        db = math.inf
    else:
        db = pa * math.log(pa / laws.beta2) if pa > 0 else 0.0
        if pa < 1:
            db += (1 - pa) * math.log((1 - pa) / (1 - laws.beta2)) if laws.beta2 < 1 else math.inf
    led.add(lg.le("D_b(accept) <= D(P_M1~Y~||P_M1 P_Y^n)", db, d_ref, vacuous=vac))
    led.add(lg.le("-log beta2 <= D(P_M1~Y~||P_M1 P_Y^n)", lhs, d_ref, vacuous=vac))
    gap = 1 - eps1 - eps2
    p_m1t = laws.m1y.sum(axis=1)
    margin = 2 * laws.p_m1 / gap - p_m1t
    i = int(np.argmin(margin))
    led.add(lg.le("P_M1~ <= 2 P_M1/(1-eps1-eps2)", p_m1t[i], 2 * laws.p_m1[i] / gap,
                  premise=art.mass_ok))
    i_m1y = mi_matrix(laws.m1y)
    led.add(lg.le("-log beta2 <= I(M1~;Y~) + 2 log 2/(1-eps1-eps2)", lhs, i_m1y + 2 * art.L,
                  premise=art.mass_ok, vacuous=vac))
    return led


# ---------------------------------------------------------------------------
# the two smoothing operators


def _axis_kernels(kind: str, source: TwoHopSource, t: float, n: int, y=None) -> list[np.ndarray]:
    """Per-coordinate matrices ``K`` with ``(K h)(z) = sum_z' K[z, z'] h(z')``."""
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    nz = source.sizes[2]
    e = math.exp(-t)
    eye = np.eye(nz)
    if kind in ("Lambda", "Λ", "L"):
        k = e * eye + source.alpha * (1 - e) * np.broadcast_to(source.pz, (nz, nz))
        return [k] * n
    if kind in ("T",):
        if y is None:
            raise DomainError("the T operator needs a conditioning sequence y^n")
        y = np.asarray(y, dtype=np.int64)
        if y.shape != (n,):
            raise DomainError("y^n must have length n")
        return [e * eye + (1 - e) * np.broadcast_to(source.w_zy[yi], (nz, nz)) for yi in y]
    raise DomainError(f"unknown operator kind {kind!r}")


def semigroup_apply(kind: str, source: TwoHopSource, t: float, h: np.ndarray, y=None,
                    n: int | None = None) -> np.ndarray:
    """Apply ``Lambda_{alpha,t}`` or ``T_{y^n,t}`` to functions over Z^n.

    ``h`` may be a single function (1-D) or a stack of them (2-D, one per row).
    """
    h = np.asarray(h, dtype=float)
    single = h.ndim == 1
    hs = h[None, :] if single else h
    nz = source.sizes[2]
    if n is None:
        n = int(round(math.log(hs.shape[1]) / math.log(nz))) if nz > 1 else 1
    if nz ** n != hs.shape[1]:
        raise DomainError("function length is not |Z|^n")
    ks = _axis_kernels(kind, source, t, n, y)
    a = hs.reshape((hs.shape[0],) + (nz,) * n)
    for i, k in enumerate(ks):
        a = np.moveaxis(np.tensordot(a, k, axes=([1 + i], [1])), -1, 1 + i)
    out = a.reshape(hs.shape[0], -1)
    return out[0] if single else out


def chosen_t(source: TwoHopSource, n: int, eps1: float, eps2: float) -> tuple[float, float, bool]:
    """``(t, slack, alpha_is_one)``; the slack replaces Psi in the assembled bound."""
    alpha = source.alpha
    lt = log_tau_ratio(eps1, eps2)
    if alpha <= 1 + 1e-12:
        t = 1 / math.sqrt(n)
        return t, lt / t, True
    t = math.sqrt(lt / (n * (alpha - 1)))
    return t, (alpha - 1) * n * t + lt / t, False


def _expect_log(weights: np.ndarray, values: np.ndarray) -> float:
    """``sum w log v`` restricted to ``w > 0``; ``-inf`` if some such ``v`` is zero."""
    pos = weights > 0
    v = values[pos]
    if np.any(v <= 0):
        return -math.inf
    return float((weights[pos] * np.log(v)).sum())


def rhc_step(source: TwoHopSource, y, h: np.ndarray, t: float) -> tuple[float, float]:
    """``(E_{P_{Z|y}}[log T h], (1 + 1/t) log P_{Z|y}(G))`` for one sequence ``y^n``."""
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    pz_y = source.w_zy[y[0]]
    for k in range(1, n):
        pz_y = np.multiply.outer(pz_y, source.w_zy[y[k]]).ravel()
    th = semigroup_apply("T", source, t, h, y=y, n=n)
    pg = float(pz_y @ h)
    rhs = -math.inf if pg <= 0 else (1 + 1 / t) * math.log(pg)
    return _expect_log(pz_y, th), rhs


# ---------------------------------------------------------------------------
# receiver hop


def receiver_chain(code: TwoHopCode, source: TwoHopSource, art: TruncationArtifacts, eps1: float,
                   eps2: float, w=None, laws: MessageLaws | None = None) -> lg.Ledger:
    laws = laws or message_laws(code, source, art)
    n = code.n
    nx, ny, nz = source.sizes
    led = lg.Ledger()
    t, slack, one = chosen_t(source, n, eps1, eps2)
    alpha = source.alpha
    vac = laws.eta2 <= 0
    h = (code.g2 == H0).astype(float)
    lam_h = semigroup_apply("Lambda", source, t, h, n=n)
    led.add(lg.flag("alpha = 1 branch: t = 1/sqrt(n)" if one else "alpha > 1 branch", True,
                    note="slack (alpha-1) n t + log(1/tau)/t replaces Psi" if one else ""))

    # (P_Z^n Pbar_M2)(Lambda h) against exp((alpha-1) n t) eta2
    pz_lam = lam_h @ laws.p_z
    pz_h = h @ laws.p_z
    factor = (math.exp(-t) + alpha * (1 - math.exp(-t))) ** n
    dev = float(np.abs(pz_lam - factor * pz_h).max()) if len(pz_h) else 0.0
    led.add(lg.eq("P_Z^n(Lambda h) = (e^-t + alpha(1-e^-t))^n P_Z^n(h)", dev, 0.0, 1e-12))
    led.add(lg.le("(e^-t + alpha(1-e^-t))^n <= exp((alpha-1) n t)", factor,
                  math.exp((alpha - 1) * n * t)))
    avg_lam = float(laws.p_m2_bar @ pz_lam)
    led.add(lg.le("(P_Z^n Pbar_M2)(Lambda h) <= exp((alpha-1)nt) eta2", avg_lam,
                  math.exp((alpha - 1) * n * t) * laws.eta2))

    # variational lower bound on D(P_Z~M2~ || P_Z^n Pbar_M2)
    ref = np.outer(laws.p_m2_bar, laws.p_z)
    d_ref = kl_array(laws.m2z, ref)
    e_log_lam = _expect_log(laws.m2z, lam_h)
    var_rhs = e_log_lam - (math.log(avg_lam) if avg_lam > 0 else -math.inf)
    led.add(lg.ge("D(P_Z~M2~||P_Z^n Pbar_M2) >= variational bound", d_ref, var_rhs, vacuous=vac))

    # per-y^n comparison and reverse hypercontractivity on the support of (Y~, M2~)
    ys = seq_digits(np.arange(ny ** n), ny, n)
    worst_cmp = math.inf
    worst_rhc = math.inf
    e_log_t = 0.0
    rhs_avg = 0.0
    for yi in np.flatnonzero(laws.m2y.sum(axis=0) > 0):
        m2s = np.flatnonzero(laws.m2y[:, yi] > 0)
        th = semigroup_apply("T", source, t, h[m2s], y=ys[yi], n=n)
        worst_cmp = min(worst_cmp, float((lam_h[m2s] - th).min()))
        pz_y = art.truncated_z_given_y(source, yi)
        for r, m in enumerate(m2s):
            lhs_m = _expect_log(pz_y, th[r])
            pg = float(pz_y @ h[m])
            rhs_m = (1 + 1 / t) * math.log(pg) if pg > 0 else -math.inf
            worst_rhc = min(worst_rhc, lhs_m - rhs_m if math.isfinite(rhs_m) else math.inf)
            wgt = laws.m2y[m, yi]
            e_log_t += wgt * lhs_m
            rhs_avg += wgt * rhs_m
    led.add(lg.ge("Lambda h >= T_y h pointwise (min over support)", worst_cmp, 0.0))
    led.add(lg.ge("E log T_y h >= (1+1/t) log P(G|y) (min over support)", worst_rhc, 0.0))
    led.add(lg.ge("E~ log Lambda h >= E~ log T h", e_log_lam, e_log_t))
    led.add(lg.ge("E~ log T h >= (1+1/t) E~ log P(G|y)", e_log_t, rhs_avg))
    log_tau = math.log(art.tau)
    led.add(lg.ge("(1+1/t) E~ log P(G|y) >= (1+1/t) log tau", rhs_avg, (1 + 1 / t) * log_tau))

    lhs = _neg_log(laws.eta2)
    led.add(lg.le("-log eta2 <= D(P_Z~M2~||P_Z^n Pbar_M2) + Psi - log tau", lhs,
                  d_ref + slack - log_tau, vacuous=vac))

    # change of reference measure
    gap = 1 - eps1 - eps2
    margin = 4 * laws.p_m2_bar / gap ** 2 - laws.p_m2_bar_tilde
    i = int(np.argmin(margin))
    led.add(lg.le("Pbar_M2~ <= 4 Pbar_M2/(1-eps1-eps2)^2", laws.p_m2_bar_tilde[i],
                  4 * laws.p_m2_bar[i] / gap ** 2, premise=art.mass_ok))
    p_zt = laws.m2z.sum(axis=0)
    d_z = kl_array(laws.m2z, np.outer(laws.p_m2_bar_tilde, p_zt))
    led.add(lg.le("D(P_Z~M2~||P_Z^n Pbar_M2) <= D(P_Z~M2~||P_Z~ Pbar_M2~) + 3 log 2/(1-eps1-eps2)",
                  d_ref, d_z + 3 * art.L, premise=art.mass_ok, vacuous=vac))
    led.add(lg.le("-log eta2 <= D(P_Z~M2~||P_Z~ Pbar_M2~) + Psi - log tau + 3 log 2/(1-eps1-eps2)",
                  lhs, d_z + slack - log_tau + 3 * art.L, premise=art.mass_ok, vacuous=vac))
    return led


# ---------------------------------------------------------------------------
# multi-letter objective


@dataclass(frozen=True)
class MultiletterResult:
    value: float
    terms: dict
    ledger: lg.Ledger


def _weights(w):
    return w.as_tuple() if hasattr(w, "as_tuple") else tuple(float(v) for v in w)


def multiletter_r(code: TwoHopCode, source: TwoHopSource, art: TruncationArtifacts, w, gamma: float,
                  laws: MessageLaws | None = None) -> MultiletterResult:
    b, c, d = _weights(w)
    laws = laws or message_laws(code, source, art)
    n = code.n
    led = lg.Ledger()
    pt = art.p_tilde_xy
    n_x, n_y = pt.shape

    # I(M1~; X~Y~) and I(M1~; Y~ | X~) from the (X^n Y^n, M1) law
    if code.N1 * n_x * n_y <= 1 << 24:
        full = np.zeros((n_x, n_y, code.N1))
        full[np.arange(n_x), :, code.f1] = pt
        i_m1_xy = mi_matrix(full.reshape(n_x * n_y, code.N1))
        i_m1_x = mi_matrix(full.sum(axis=1))
    else:
        p_m1t = laws.m1y.sum(axis=1)
        i_m1_xy = entropy_array(p_m1t)
        i_m1_x = entropy_array(p_m1t)
    i_markov = max(i_m1_xy - i_m1_x, 0.0)
    i_m1y = mi_matrix(laws.m1y)
    i_m2y = mi_matrix(laws.m2y)
    i_m2z = mi_matrix(laws.m2z)
    p_zt = laws.m2z.sum(axis=0)
    d_z = kl_array(laws.m2z, np.outer(laws.p_m2_bar_tilde, p_zt))
    d_m2 = kl_array(laws.m2z.sum(axis=1), laws.p_m2_bar_tilde)
    d_trunc = max(-math.log(art.mass), 0.0)  # mass can round above 1
    h_m1 = entropy_array(laws.m1y.sum(axis=1))
    h_m2 = entropy_array(laws.m2y.sum(axis=1))

    led.add(lg.ge("log N1 >= H(M1~)", math.log(code.N1), h_m1))
    led.add(lg.ge("H(M1~) >= I(M1~;X~Y~)", h_m1, i_m1_xy))
    led.add(lg.ge("log N2 >= H(M2~)", math.log(code.N2), h_m2))
    led.add(lg.ge("H(M2~) >= I(M2~;Y~)", h_m2, i_m2y))
    led.add(lg.eq("I(M1~;Y~|X~) = 0", i_markov, 0.0, 1e-12))
    led.add(lg.eq("D_Z = I(M2~;Z~) + D(P_M2~||Pbar_M2~)", d_z, i_m2z + d_m2, 1e-10))
    led.add(lg.le("D(P_M2~||Pbar_M2~) <= I(M1~;Y~)", d_m2, i_m1y))
    led.add(lg.le("D_Z <= I(M2~;Z~) + I(M1~;Y~)", d_z, i_m2z + i_m1y))

    value = (-i_m1y + b * i_m1_xy - c * d_z + d * i_m2y + gamma * i_markov
             + (b + d + gamma) * d_trunc)
    terms = {"I_M1_Y": i_m1y, "I_M1_XY": i_m1_xy, "D_Z": d_z, "I_M2_Y": i_m2y,
             "I_M1_Y_given_X": i_markov, "D_trunc": d_trunc, "I_M2_Z": i_m2z, "D_M2": d_m2}

    # the assembled precursor inequality
    eps1, eps2 = art.eps1, art.eps2
    t, slack, one = chosen_t(source, n, eps1, eps2)
    log_tau = math.log(art.tau)
    vac = laws.beta2 <= 0 or (c > 0 and laws.eta2 <= 0)
    if vac:
        lhs = -math.inf
    else:
        lhs = math.log(laws.beta2) + b * math.log(code.N1) + d * math.log(code.N2) + c * slack
        if c > 0:
            lhs += c * math.log(laws.eta2)
    L = art.L
    led.add(lg.ge("precursor (general c): lhs >= R^(n) + c log tau - (b+d+gamma+2+3c) L", lhs,
                  value + c * log_tau - (b + d + gamma + 2 + 3 * c) * L,
                  premise=art.mass_ok, vacuous=vac))
    led.add(lg.ge("precursor: lhs >= R^(n) + log tau + (b+d+gamma+5) log((1-eps1-eps2)/2)", lhs,
                  value + log_tau - (b + d + gamma + 5) * L,
                  premise=bool(art.mass_ok and c <= 1), vacuous=vac,
                  note="" if c <= 1 else "constant only derivable for c <= 1"))
    return MultiletterResult(value, terms, led)


# ---------------------------------------------------------------------------
# single-letterisation gap


def lemma2_gap(code: TwoHopCode, source: TwoHopSource, art: TruncationArtifacts, w, gamma: float,
               r_hat: float | None = None, solver_cfg=None) -> float:
    """``R^(n) - n * R_hat`` with ``R_hat`` the numerical minimum over the band set."""
    if r_hat is None:
        from .single_letter import solve_r_gamma
        r_hat = solve_r_gamma(source, _weights(w), gamma, art.theta, solver_cfg=solver_cfg).value
    r_n = multiletter_r(code, source, art, w, gamma).value
    return r_n - code.n * r_hat


def classify_gap(gap: float, tol: float = 1e-3) -> str:
    # rounding in the multi-letter terms is of order 1e-16
    if gap >= -lg.PASS_TOL:
        return "pass"
    return "inconclusive" if gap >= -tol else "fail"


# ---------------------------------------------------------------------------
# full audit


@dataclass(frozen=True)
class Audit:
    artifacts: TruncationArtifacts
    ledger: lg.Ledger
    r_n: float
    terms: dict


def audit(code: TwoHopCode, source: TwoHopSource, eps1: float, eps2: float, w, gamma: float,
          budget: int = EXACT_BUDGET) -> Audit:
    """Truncation, both hops and the multi-letter objective in one ledger."""
    art = build_truncation(code, source, code.n, eps1, eps2, budget)
    laws = message_laws(code, source, art)
    led = lg.Ledger()
    led.extend(art.ledger)
    led.extend(relay_chain(code, source, art, eps1, eps2, laws))
    led.extend(receiver_chain(code, source, art, eps1, eps2, w, laws))
    ml = multiletter_r(code, source, art, w, gamma, laws)
    led.extend(ml.ledger)
    return Audit(art, led, ml.value, ml.terms)
