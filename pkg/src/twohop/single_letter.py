"""Single-letter weighted objectives, region certificates and the perturbation report."""
from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import ledger as lg
from ._ib import (PartResult, SolverConfig, batch_terms, deterministic_kernels, max_relevance,
                  minimize_part)
from .errors import ConvergenceWarning, DomainError, ShapeError
from .prob import (JointPmf, Kernel, TwoHopSource, attach, conditional_mutual_information,
                   entropy_array, kl_array, mi_matrix, mutual_information)

__all__ = [
    "AuxCoupling", "TradeoffWeights", "TildeWeights", "RegionPoint", "Q1Coupling", "CardBounds",
    "SolverConfig", "PartResult", "RegionSolution", "TildeSolution", "GammaSolution",
    "PerturbationReport", "objective_r", "objective_r_tilde", "region_point", "solve_r",
    "solve_r_tilde", "joint_minimize", "certify_in", "certify_out", "default_weight_grid",
    "gamma_objective", "solve_r_gamma", "perturb_gamma", "perturbation_constants",
]


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class TradeoffWeights:
    b: float
    c: float
    d: float

    def __post_init__(self):
        for k in ("b", "c", "d"):
            v = float(getattr(self, k))
            if not (v >= 0 and math.isfinite(v)):
                raise DomainError(f"weight {k} must be finite and nonnegative, got {v}")
            object.__setattr__(self, k, v)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.b, self.c, self.d)


@dataclass(frozen=True)
class TildeWeights:
    b1: float
    b2: float
    c: float
    d: float

    def __post_init__(self):
        for k in ("b1", "b2", "c", "d"):
            v = float(getattr(self, k))
            if not (v >= 0 and math.isfinite(v)):
                raise DomainError(f"weight {k} must be finite and nonnegative, got {v}")
            object.__setattr__(self, k, v)


@dataclass(frozen=True)
class RegionPoint:
    R1: float
    R2: float
    E1: float
    E2: float

    def __post_init__(self):
        for k in ("R1", "R2", "E1", "E2"):
            v = float(getattr(self, k))
            if not v >= 0:
                raise DomainError(f"{k} must be nonnegative, got {v}")
            object.__setattr__(self, k, v)

    def weighted(self, w: TradeoffWeights) -> float:
        """``-E1 + b R1 - c E2 + d R2``."""
        return -self.E1 + w.b * self.R1 - w.c * self.E2 + w.d * self.R2


@dataclass(frozen=True)
class CardBounds:
    u: int | None = None
    v: int | None = None

    def resolve(self, source: TwoHopSource, u_default: int | None = None) -> tuple[int, int]:
        nx, ny, _ = source.sizes
        u = self.u if self.u is not None else (u_default if u_default is not None else nx + 1)
        v = self.v if self.v is not None else ny + 1
        if u < 1 or v < 1:
            raise DomainError("cardinality bounds must be positive")
        return int(u), int(v)


def _bounds(card_bounds) -> CardBounds:
    if card_bounds is None:
        return CardBounds()
    if isinstance(card_bounds, CardBounds):
        return card_bounds
    u, v = card_bounds
    return CardBounds(u, v)


@dataclass(frozen=True)
class AuxCoupling:
    """Test channels ``U | X`` and ``V | Y``; the Markov chains hold by construction."""

    u_given_x: Kernel
    v_given_y: Kernel

    def validate(self, source: TwoHopSource, card_bounds=None) -> None:
        if self.u_given_x.from_alphabet != source.x_alphabet:
            raise ShapeError("U kernel input alphabet differs from X")
        if self.v_given_y.from_alphabet != source.y_alphabet:
            raise ShapeError("V kernel input alphabet differs from Y")
        if card_bounds is not None:
            cu, cv = _bounds(card_bounds).resolve(source)
            if len(self.u_given_x.to_alphabet) > cu:
                raise ShapeError(f"|U| = {len(self.u_given_x.to_alphabet)} exceeds bound {cu}")
            if len(self.v_given_y.to_alphabet) > cv:
                raise ShapeError(f"|V| = {len(self.v_given_y.to_alphabet)} exceeds bound {cv}")

    def joint(self, source: TwoHopSource) -> JointPmf:
        self.validate(source)
        j = attach(source.joint(), "X", self.u_given_x, "U")
        return attach(j, "Y", self.v_given_y, "V")

    @classmethod
    def constant(cls, source: TwoHopSource) -> "AuxCoupling":
        return cls(Kernel.constant(source.x_alphabet), Kernel.constant(source.y_alphabet))

    @classmethod
    def identity(cls, source: TwoHopSource) -> "AuxCoupling":
        return cls(Kernel.identity(source.x_alphabet), Kernel.identity(source.y_alphabet))

    @classmethod
    def from_arrays(cls, source: TwoHopSource, wu, wv) -> "AuxCoupling":
        wu, wv = np.asarray(wu, float), np.asarray(wv, float)
        return cls(Kernel(source.x_alphabet, tuple(range(wu.shape[1])), wu),
                   Kernel(source.y_alphabet, tuple(range(wv.shape[1])), wv))

    def to_json(self) -> dict:
        return {"U": list(self.u_given_x.to_alphabet), "V": list(self.v_given_y.to_alphabet),
                "P_U_given_X": self.u_given_x.rows.tolist(),
                "P_V_given_Y": self.v_given_y.rows.tolist()}

    @classmethod
    def from_json(cls, source: TwoHopSource, doc: dict | str) -> "AuxCoupling":
        if isinstance(doc, str):
            doc = json.loads(doc)
        return cls(Kernel(source.x_alphabet, tuple(doc["U"]), np.asarray(doc["P_U_given_X"], float)),
                   Kernel(source.y_alphabet, tuple(doc["V"]), np.asarray(doc["P_V_given_Y"], float)))


@dataclass(frozen=True)
class Q1Coupling:
    """A law ``Q_XY Q_{U|XY} P_{Z|Y} Q_{V|Y}``; ``U`` may depend on ``Y`` directly."""

    q_xy: JointPmf
    u_given_xy: Kernel
    v_given_y: Kernel
    theta: float

    def __post_init__(self):
        if self.q_xy.axes != ("X", "Y"):
            raise ShapeError("q_xy must have axes ('X','Y')")
        pairs = tuple(itertools.product(self.q_xy.alphabet("X"), self.q_xy.alphabet("Y")))
        if self.u_given_xy.from_alphabet != pairs:
            raise ShapeError("U kernel must be indexed by (x, y) pairs in row-major order")
        if self.v_given_y.from_alphabet != self.q_xy.alphabet("Y"):
            raise ShapeError("V kernel input alphabet differs from Y")
        if not self.theta >= 0:
            raise DomainError(f"band parameter theta must be nonnegative, got {self.theta}")

    @property
    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.q_xy.mass, self.u_given_xy.rows, self.v_given_y.rows

    def band_violations(self, source: TwoHopSource, tol: float = 1e-12) -> list:
        qy = self.q_xy.mass.sum(axis=0)
        py = source.py
        bad = np.abs(qy - py) > self.theta * py + tol
        return [source.y_alphabet[i] for i in np.flatnonzero(bad)]

    def check_band(self, source: TwoHopSource, tol: float = 1e-12) -> None:
        if self.q_xy.alphabet("X") != source.x_alphabet or self.q_xy.alphabet("Y") != source.y_alphabet:
            raise ShapeError("coupling alphabets differ from the source")
        bad = self.band_violations(source, tol)
        if bad:
            raise DomainError(f"Q_Y leaves the band |Q_Y - P_Y| <= theta P_Y at y = {bad[0]!r}")

    def joint(self, source: TwoHopSource) -> JointPmf:
        j = attach(self.q_xy, "Y", source.p_z_given_y, "Z")
        j = attach(j, ("X", "Y"), self.u_given_xy, "U")
        return attach(j, "Y", self.v_given_y, "V")

    @classmethod
    def from_arrays(cls, source: TwoHopSource, qxy, wu, wv, theta: float) -> "Q1Coupling":
        qxy, wu, wv = (np.asarray(a, float) for a in (qxy, wu, wv))
        pairs = tuple(itertools.product(source.x_alphabet, source.y_alphabet))
        return cls(JointPmf(("X", "Y"), (source.x_alphabet, source.y_alphabet), qxy),
                   Kernel(pairs, tuple(range(wu.shape[1])), wu),
                   Kernel(source.y_alphabet, tuple(range(wv.shape[1])), wv), float(theta))

    @classmethod
    def from_aux(cls, source: TwoHopSource, aux: AuxCoupling, theta: float) -> "Q1Coupling":
        """``Q = P`` with ``U`` drawn from ``X`` only."""
        wu = np.repeat(aux.u_given_x.rows, len(source.y_alphabet), axis=0)
        return cls.from_arrays(source, source.pxy, wu, aux.v_given_y.rows, theta)

    def to_json(self) -> dict:
        return {"theta": self.theta, "Q_XY": self.q_xy.mass.tolist(),
                "U": list(self.u_given_xy.to_alphabet), "V": list(self.v_given_y.to_alphabet),
                "Q_U_given_XY": self.u_given_xy.rows.tolist(),
                "Q_V_given_Y": self.v_given_y.rows.tolist()}


# ---------------------------------------------------------------------------
# objectives


def _check_weights(w) -> TradeoffWeights:
    if isinstance(w, TradeoffWeights):
        return w
    return TradeoffWeights(*w)


def objective_r(source: TwoHopSource, aux: AuxCoupling, w, card_bounds=None) -> float:
    """``-I(U;Y) + b I(U;X) - c (I(U;Y) + I(V;Z)) + d I(V;Y)`` under the induced law."""
    w = _check_weights(w)
    aux.validate(source, card_bounds if card_bounds is not None else CardBounds())
    j = aux.joint(source)
    i_uy = mutual_information(j, "U", "Y")
    i_ux = mutual_information(j, "U", "X")
    i_vz = mutual_information(j, "V", "Z")
    i_vy = mutual_information(j, "V", "Y")
    return -i_uy + w.b * i_ux - w.c * (i_uy + i_vz) + w.d * i_vy


def region_point(source: TwoHopSource, aux: AuxCoupling) -> RegionPoint:
    """Corner ``(I(U;X), I(V;Y), I(U;Y), I(U;Y) + I(V;Z))`` of the region of ``aux``."""
    j = aux.joint(source)
    i_uy = mutual_information(j, "U", "Y")
    return RegionPoint(mutual_information(j, "U", "X"), mutual_information(j, "V", "Y"),
                       i_uy, i_uy + mutual_information(j, "V", "Z"))


def objective_r_tilde(source: TwoHopSource, u1: Kernel, u2: Kernel, v: Kernel, w4) -> float:
    """``b1 I(U1;X) - I(U1;Y) + b2 I(U2;X) - c I(U2;Y) + d I(V;Y) - c I(V;Z)``."""
    w4 = w4 if isinstance(w4, TildeWeights) else TildeWeights(*w4)
    pxy, pyz = source.pxy, source.pyz

    def terms(p_st, k):
        a, b = batch_terms(p_st, k.rows[None])
        return float(a[0]), float(b[0])

    a1, t1 = terms(pxy, u1)
    a2, t2 = terms(pxy, u2)
    av, tv = terms(pyz, v)
    return w4.b1 * a1 - t1 + w4.b2 * a2 - w4.c * t2 + w4.d * av - w4.c * tv


# ---------------------------------------------------------------------------
# solvers for the separable objectives


@dataclass(frozen=True)
class RegionSolution:
    value: float
    aux: AuxCoupling
    u_part: PartResult
    v_part: PartResult
    converged: bool

    @property
    def point(self) -> tuple[float, float, float, float]:
        u, v = self.u_part, self.v_part
        return (u.rate, v.rate, u.relevance, u.relevance + v.relevance)


@dataclass(frozen=True)
class TildeSolution:
    value: float
    u1: Kernel
    u2: Kernel
    v: Kernel
    parts: tuple[PartResult, PartResult, PartResult]
    converged: bool


def _warn_if(converged: bool, what: str) -> None:
    if not converged:
        warnings.warn(f"{what}: fixed-point iteration hit the iteration cap; "
                      "returning the best candidate found", ConvergenceWarning, stacklevel=3)


def solve_r(source: TwoHopSource, w, card_bounds=None, solver_cfg: SolverConfig | None = None
            ) -> RegionSolution:
    """Minimum of the weighted objective, solved as a U-part plus a V-part."""
    w = _check_weights(w)
    cfg = solver_cfg or SolverConfig()
    cu, cv = _bounds(card_bounds).resolve(source)
    up = minimize_part(source.pxy, w.b, 1.0 + w.c, cu, cfg)
    vp = minimize_part(source.pyz, w.d, w.c, cv, cfg)
    aux = AuxCoupling.from_arrays(source, up.kernel, vp.kernel)
    ok = up.converged and vp.converged
    _warn_if(ok, "solve_r")
    return RegionSolution(min(up.value + vp.value, 0.0), aux, up, vp, ok)


def solve_r_tilde(source: TwoHopSource, w4, card_bounds=None,
                  solver_cfg: SolverConfig | None = None) -> TildeSolution:
    w4 = w4 if isinstance(w4, TildeWeights) else TildeWeights(*w4)
    cfg = solver_cfg or SolverConfig()
    cu, cv = _bounds(card_bounds).resolve(source)
    p1 = minimize_part(source.pxy, w4.b1, 1.0, cu, cfg)
    p2 = minimize_part(source.pxy, w4.b2, w4.c, cu, cfg)
    pv = minimize_part(source.pyz, w4.d, w4.c, cv, cfg)
    lab_u, lab_v = tuple(range(cu)), tuple(range(cv))
    ok = p1.converged and p2.converged and pv.converged
    _warn_if(ok, "solve_r_tilde")
    return TildeSolution(min(p1.value + p2.value + pv.value, 0.0),
                         Kernel(source.x_alphabet, lab_u, p1.kernel),
                         Kernel(source.x_alphabet, lab_u, p2.kernel),
                         Kernel(source.y_alphabet, lab_v, pv.kernel), (p1, p2, pv), ok)


def _softmax_rows(theta: np.ndarray) -> np.ndarray:
    t = theta - theta.max(axis=-1, keepdims=True)
    e = np.exp(t)
    return e / e.sum(axis=-1, keepdims=True)


def _joint_marginals(source: TwoHopSource, wu: np.ndarray, wv: np.ndarray):
    full = np.einsum("xy,yz,xu,yv->xyzuv", source.pxy, source.w_zy, wu, wv)
    return (full.sum(axis=(1, 2, 4)), full.sum(axis=(0, 2, 4)).T,
            full.sum(axis=(0, 2, 3)), full.sum(axis=(0, 1, 3)))


def _joint_value(source: TwoHopSource, wu: np.ndarray, wv: np.ndarray, w: TradeoffWeights) -> float:
    """Objective from the full five-variable array, without using the separation."""
    p_xu, p_uy, p_yv, p_zv = _joint_marginals(source, wu, wv)
    i_ux, i_uy, i_vy, i_vz = (mi_matrix(a) for a in (p_xu, p_uy, p_yv, p_zv))
    return -i_uy + w.b * i_ux - w.c * (i_uy + i_vz) + w.d * i_vy


def _density(p: np.ndarray) -> np.ndarray:
    """Information density ``log p(a,b)/(p(a)p(b))``, zero off the support."""
    pa = p.sum(axis=1, keepdims=True)
    pb = p.sum(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.log(p) - np.log(pa) - np.log(pb)
    return np.where(p > 0, d, 0.0)


def _joint_value_grad(source: TwoHopSource, wu: np.ndarray, wv: np.ndarray, w: TradeoffWeights):
    """Value and gradients in the two kernels, chained through the joint marginals."""
    p_xu, p_uy, p_yv, p_zv = _joint_marginals(source, wu, wv)
    i_ux, i_uy, i_vy, i_vz = (mi_matrix(a) for a in (p_xu, p_uy, p_yv, p_zv))
    val = -i_uy + w.b * i_ux - w.c * (i_uy + i_vz) + w.d * i_vy
    # p_xu = P_X * W_U, p_uy = W_U^T P_XY, p_yv = P_Y * W_V, p_zv = P_ZY W_V
    gu = w.b * source.px[:, None] * _density(p_xu) - (1 + w.c) * source.pxy @ _density(p_uy).T
    gv = w.d * source.py[:, None] * _density(p_yv) - w.c * source.pyz @ _density(p_zv)
    return val, gu, gv


def joint_minimize(source: TwoHopSource, w, card_bounds=None, solver_cfg: SolverConfig | None = None,
                   warm: AuxCoupling | None = None, random_starts: int = 8) -> tuple[float, AuxCoupling]:
    """Minimise over both kernels at once with quasi-Newton steps on softmax logits.

    Starts: the warm coupling (if given), the best deterministic pair and random draws.
    """
    w = _check_weights(w)
    cfg = solver_cfg or SolverConfig()
    cu, cv = _bounds(card_bounds).resolve(source)
    nx, ny, _ = source.sizes
    rng = np.random.default_rng(cfg.seed)

    du = deterministic_kernels(nx, cu)
    dv = deterministic_kernels(ny, cv)
    a, t = batch_terms(source.pxy, du)
    iu = int(np.argmin(w.b * a - (1 + w.c) * t))
    a, t = batch_terms(source.pyz, dv)
    iv = int(np.argmin(w.d * a - w.c * t))
    starts = []
    if warm is not None:
        wu0 = np.zeros((nx, cu))
        wv0 = np.zeros((ny, cv))
        wu0[:, : warm.u_given_x.rows.shape[1]] = warm.u_given_x.rows
        wv0[:, : warm.v_given_y.rows.shape[1]] = warm.v_given_y.rows
        starts.append((wu0, wv0))
    starts.append((du[iu], dv[iv]))
    for _ in range(random_starts):
        starts.append((rng.dirichlet(np.ones(cu), size=nx), rng.dirichlet(np.ones(cv), size=ny)))

    nu = nx * cu

    def unpack(z):
        return _softmax_rows(z[:nu].reshape(nx, cu)), _softmax_rows(z[nu:].reshape(ny, cv))

    def fun(z):
        wu, wv = unpack(z)
        val, gu, gv = _joint_value_grad(source, wu, wv, w)
        # softmax chain rule, row by row
        zu = wu * (gu - (wu * gu).sum(axis=1, keepdims=True))
        zv = wv * (gv - (wv * gv).sum(axis=1, keepdims=True))
        return val, np.concatenate([zu.ravel(), zv.ravel()])

    best_val, best = math.inf, None
    for wu0, wv0 in starts:
        v0 = _joint_value(source, wu0, wv0, w)
        if v0 < best_val:
            best_val, best = v0, (wu0, wv0)
        z0 = np.concatenate([np.log(np.maximum(wu0, 1e-12)).ravel(),
                             np.log(np.maximum(wv0, 1e-12)).ravel()])
        res = minimize(fun, z0, jac=True, method="L-BFGS-B",
                       options={"maxiter": 5000, "ftol": 1e-16, "gtol": 1e-12})
        wu, wv = unpack(res.x)
        v = _joint_value(source, wu, wv, w)
        if v < best_val:
            best_val, best = v, (wu, wv)
    return float(best_val), AuxCoupling.from_arrays(source, *best)


# ---------------------------------------------------------------------------
# region certificates


def certify_in(source: TwoHopSource, pt: RegionPoint, card_bounds=None,
               solver_cfg: SolverConfig | None = None, tol: float = 1e-9) -> AuxCoupling | None:
    """Search for a coupling whose region contains ``pt``; ``None`` means none was found."""
    cfg = solver_cfg or SolverConfig()
    cu, cv = _bounds(card_bounds).resolve(source)
    nx, ny, _ = source.sizes

    def best_part(p_st, rate, card, n_in):
        h_s = entropy_array(p_st.sum(axis=1))
        if rate >= h_s - tol and card >= n_in:
            k = np.zeros((n_in, card))
            k[np.arange(n_in), np.arange(n_in)] = 1.0
            a, t = batch_terms(p_st, k[None])
            return k, float(a[0]), float(t[0])
        r = max_relevance(p_st, rate, card, cfg)
        return r.kernel, r.rate, r.relevance

    ku, ru, tu = best_part(source.pxy, pt.R1, cu, nx)
    kv, rv, tv = best_part(source.pyz, pt.R2, cv, ny)
    if (ru <= pt.R1 + tol and rv <= pt.R2 + tol and pt.E1 <= tu + tol and pt.E2 <= tu + tv + tol):
        return AuxCoupling.from_arrays(source, ku, kv)
    return None


def default_weight_grid() -> list[float]:
    return [0.0] + [2.0 ** k for k in range(-3, 7)]


def certify_out(source: TwoHopSource, pt: RegionPoint, weight_grid=None, card_bounds=None,
                solver_cfg: SolverConfig | None = None, tol: float = 1e-6
                ) -> TradeoffWeights | None:
    """First weight on the grid whose half-space excludes ``pt``, or ``None``.

    ``weight_grid`` is either a list of values used for each of b, c, d or an
    explicit iterable of (b, c, d) triples.
    """
    cfg = solver_cfg or SolverConfig()
    cu, cv = _bounds(card_bounds).resolve(source)
    grid = default_weight_grid() if weight_grid is None else list(weight_grid)
    if grid and np.ndim(grid[0]) == 0:
        triples = list(itertools.product(grid, repeat=3))
    else:
        triples = [tuple(t) for t in grid]
    for t in triples:
        if not all(math.isfinite(float(x)) for x in t):
            raise DomainError("weight grid must be finite")
    u_cache: dict = {}
    v_cache: dict = {}
    for b, c, d in triples:
        w = TradeoffWeights(b, c, d)
        if (w.b, w.c) not in u_cache:
            u_cache[(w.b, w.c)] = minimize_part(source.pxy, w.b, 1 + w.c, cu, cfg).value
        if (w.d, w.c) not in v_cache:
            v_cache[(w.d, w.c)] = minimize_part(source.pyz, w.d, w.c, cv, cfg).value
        r = min(u_cache[(w.b, w.c)] + v_cache[(w.d, w.c)], 0.0)
        if pt.weighted(w) < r - tol:
            return w
    return None


# ---------------------------------------------------------------------------
# the constrained variant over the band set


@dataclass(frozen=True)
class GammaSolution:
    value: float
    coupling: Q1Coupling
    terms: dict
    starts: int


def _gamma_terms(source: TwoHopSource, qxy, wu, wv, w: TradeoffWeights, gamma: float) -> dict:
    nx, ny, _ = source.sizes
    q_xyu = qxy[:, :, None] * wu.reshape(nx, ny, -1)
    i_ux = mi_matrix(q_xyu.sum(axis=1))
    i_uy = mi_matrix(q_xyu.sum(axis=0))
    i_uxy = mi_matrix(q_xyu.reshape(nx * ny, -1))
    i_uy_x = max(i_uxy - i_ux, 0.0)
    qy = qxy.sum(axis=0)
    q_yv = qy[:, None] * wv
    i_vy = mi_matrix(q_yv)
    i_vz = mi_matrix(source.w_zy.T @ q_yv)
    d_xy = kl_array(qxy, source.pxy)
    d_y = kl_array(qy, source.py)
    r = -i_uy + w.b * i_ux - w.c * (i_uy + i_vz) + w.d * i_vy
    delta = (w.b + gamma) * d_xy + w.d * d_y + gamma * i_uy_x
    return {"I_UX": i_ux, "I_UY": i_uy, "I_UY_given_X": i_uy_x, "I_VY": i_vy, "I_VZ": i_vz,
            "D_XY": d_xy, "D_Y": d_y, "R": r, "Delta": delta, "value": r + delta}


def gamma_objective(source: TwoHopSource, q1: Q1Coupling, w, gamma: float) -> dict:
    """All terms of ``R(Q) + (b+gamma) D(Q_XY||P_XY) + d D(Q_Y||P_Y) + gamma I(U;Y|X)``."""
    w = _check_weights(w)
    return _gamma_terms(source, *q1.arrays, w, float(gamma))


def solve_r_gamma(source: TwoHopSource, w, gamma: float, theta: float, card_bounds=None,
                  solver_cfg: SolverConfig | None = None, random_starts: int = 8,
                  q_grid_step: float | None = None) -> GammaSolution:
    """Numerical minimum over the band set; the returned value is attained by the coupling.

    Sequential quadratic programming on softmax parameters with the band as
    smooth inequality constraints. Starts at ``Q = P`` with the unconstrained
    minimiser, at the constant coupling and at random kernels.
    """
    w = _check_weights(w)
    if not gamma >= 0:
        raise DomainError(f"gamma must be nonnegative, got {gamma}")
    if not theta >= 0:
        raise DomainError(f"band parameter theta must be nonnegative, got {theta}")
    cfg = solver_cfg or SolverConfig()
    nx, ny, _ = source.sizes
    cu, cv = _bounds(card_bounds).resolve(source, u_default=nx * ny + 1)
    rng = np.random.default_rng(cfg.seed)
    pxy, py = source.pxy, source.py
    supp = pxy.ravel() > 0
    n_q = int(supp.sum())
    nu = nx * ny * cu

    def unpack(z):
        q = np.zeros(nx * ny)
        q[supp] = _softmax_rows(z[:n_q])
        wu = _softmax_rows(z[n_q: n_q + nu].reshape(nx * ny, cu))
        wv = _softmax_rows(z[n_q + nu:].reshape(ny, cv))
        return q.reshape(nx, ny), wu, wv

    def pack(q, wu, wv):
        return np.concatenate([np.log(np.maximum(q.ravel()[supp], 1e-300)),
                               np.log(np.maximum(wu, 1e-12)).ravel(),
                               np.log(np.maximum(wv, 1e-12)).ravel()])

    def value(q, wu, wv):
        return _gamma_terms(source, q, wu, wv, w, gamma)["value"]

    def fun(z):
        return value(*unpack(z))

    def band(z):
        qy = unpack(z)[0].sum(axis=0)
        return np.concatenate([theta * py - (qy - py), theta * py + (qy - py)])

    def in_band(q):
        return bool(np.all(np.abs(q.sum(axis=0) - py) <= theta * py + 1e-12))

    def repair(q):
        if in_band(q):
            return q
        # mixing toward P shrinks |Q_Y - P_Y| linearly
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if in_band((1 - mid) * q + mid * pxy):
                hi = mid
            else:
                lo = mid
        return (1 - hi) * q + hi * pxy

    def pad(k, card):
        out = np.zeros((k.shape[0], card))
        out[:, : k.shape[1]] = k
        return out

    base = solve_r(source, w, CardBounds(min(cu, nx + 1), cv), cfg)
    starts = [(pxy, np.repeat(pad(base.aux.u_given_x.rows, cu), ny, axis=0), base.aux.v_given_y.rows)]
    const_u = np.zeros((nx * ny, cu))
    const_u[:, 0] = 1.0
    const_v = np.zeros((ny, cv))
    const_v[:, 0] = 1.0
    starts.append((pxy, const_u, const_v))
    for _ in range(random_starts):
        q = pxy
        if theta > 0:
            mix = rng.dirichlet(np.ones(nx * ny)).reshape(nx, ny) * supp.reshape(nx, ny)
            mix /= mix.sum()
            q = repair(0.5 * pxy + 0.5 * mix)
        starts.append((q, rng.dirichlet(np.ones(cu), size=nx * ny), rng.dirichlet(np.ones(cv), size=ny)))
    if q_grid_step is not None and nx * ny <= 4:
        k = int(round(1 / q_grid_step))
        scored = []
        for comp in itertools.product(range(k + 1), repeat=nx * ny - 1):
            if sum(comp) > k:
                continue
            q = np.array(list(comp) + [k - sum(comp)], float).reshape(nx, ny) / k
            if np.any(q.ravel()[~supp] > 0) or not in_band(q):
                continue
            scored.append((value(q, *starts[0][1:]), q))
        scored.sort(key=lambda s: s[0])
        starts.extend((q, starts[0][1], starts[0][2]) for _, q in scored[:4])

    vacuous_band = bool(np.all(theta * py >= np.maximum(py, 1 - py)))
    if vacuous_band:
        cons = []
    elif theta == 0:
        # two opposing inequalities degenerate; the total is fixed by the softmax
        cons = [{"type": "eq", "fun": lambda z: unpack(z)[0].sum(axis=0)[:-1] - py[:-1]}]
    else:
        cons = [{"type": "ineq", "fun": band}]
    best_val, best = math.inf, None
    for q0, wu0, wv0 in starts:
        v0 = value(q0, wu0, wv0)
        if v0 < best_val:
            best_val, best = v0, (q0, wu0, wv0)
        z0 = pack(q0, wu0, wv0)
        if cons:
            res = minimize(fun, z0, method="SLSQP", constraints=cons,
                           options={"maxiter": 500, "ftol": 1e-13})
        else:
            res = minimize(fun, z0, method="L-BFGS-B", options={"maxiter": 1000, "ftol": 1e-15})
        q, wu, wv = unpack(res.x)
        q = repair(q)
        v = value(q, wu, wv)
        if v < best_val:
            best_val, best = v, (q, wu, wv)
    q1 = Q1Coupling.from_arrays(source, *best, theta)
    return GammaSolution(float(best_val), q1, gamma_objective(source, q1, w, gamma), len(starts))


# ---------------------------------------------------------------------------
# perturbation toward the product-consistent Y marginal


@dataclass(frozen=True)
class PerturbationReport:
    gamma: float
    theta: float
    a_prime: float
    a: float
    perturbed: AuxCoupling
    p_v: np.ndarray
    p_y_given_v: np.ndarray
    p_z_given_v: np.ndarray
    ledger: lg.Ledger = field(default_factory=lg.Ledger)
    r_q: float = 0.0
    r_perturbed: float = 0.0

    @property
    def ok(self) -> bool:
        return self.ledger.ok


def perturbation_constants(source: TwoHopSource, w) -> tuple[float, float]:
    """``(a', a)`` with ``a' = b log|X| + d log|Y|`` and ``a = a' + (c+1) log|Y| + c log|Z|``."""
    w = _check_weights(w)
    nx, ny, nz = source.sizes
    a_prime = w.b * math.log(nx) + w.d * math.log(ny)
    return a_prime, a_prime + (w.c + 1) * math.log(ny) + w.c * math.log(nz)


def _cont_bound(delta: float, m: int) -> float:
    return 0.0 if delta <= 0 else delta * math.log(m / delta)


def perturb_gamma(source: TwoHopSource, q1: Q1Coupling, gamma: float, theta: float | None = None,
                  w=(1.0, 1.0, 1.0)) -> PerturbationReport:
    """Move ``Q_Y`` back to ``P_Y`` with an extra ``V`` symbol of mass ``theta/(1+theta)``.

    The result keeps ``Q_{U|X}`` and replaces ``V`` by a kernel ``Y -> V ∪ {v*}``;
    every inequality used to compare the two couplings is recorded in the ledger.
    """
    w = _check_weights(w)
    theta = q1.theta if theta is None else float(theta)
    if not theta >= 0:
        raise DomainError(f"band parameter theta must be nonnegative, got {theta}")
    if gamma <= 0:
        raise DomainError("gamma must be positive")
    q1 = Q1Coupling(q1.q_xy, q1.u_given_xy, q1.v_given_y, theta)
    q1.check_band(source)
    nx, ny, nz = source.sizes
    qxy, wu_xy, wv = q1.arrays
    py, pz, w_zy = source.py, source.pz, source.w_zy
    qy = qxy.sum(axis=0)
    qz = qy @ w_zy
    q_yv = qy[:, None] * wv
    qv = q_yv.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        q_y_given_v = np.where(qv[None, :] > 0, q_yv / qv[None, :], 0.0).T
    if theta > 0:
        star = (1 + theta) / theta * py - qy / theta
    else:
        star = py.copy()
    p_v = np.concatenate([qv / (1 + theta), [theta / (1 + theta)]])
    p_y_given_v = np.vstack([q_y_given_v, star])
    p_yv = p_v[None, :] * p_y_given_v.T
    p_y = p_yv.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        v_given_y = np.where(p_y[:, None] > 0, p_yv / p_y[:, None], 1.0 / p_yv.shape[1])
    v_given_y = np.clip(v_given_y, 0.0, None)
    v_given_y /= v_given_y.sum(axis=1, keepdims=True)
    p_z_given_v = p_y_given_v @ w_zy

    # Q_{U|X} from Q_XYU
    q_xyu = qxy[:, :, None] * wu_xy.reshape(nx, ny, -1)
    q_xu = q_xyu.sum(axis=1)
    qx = qxy.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        u_given_x = np.where(qx[:, None] > 0, q_xu / qx[:, None], 1.0 / q_xu.shape[1])

    v_labels = tuple(q1.v_given_y.to_alphabet) + ("v*",)
    perturbed = AuxCoupling(Kernel(source.x_alphabet, q1.u_given_xy.to_alphabet, u_given_x),
                            Kernel(source.y_alphabet, v_labels, v_given_y))

    led = lg.Ledger()
    led.add(lg.eq("Y-marginal preserved", float(np.abs(p_y - py).max()), 0.0, 1e-12))
    led.add(lg.flag("v* row is a pmf",
                    bool(np.all(star >= -1e-12) and abs(star.sum() - 1) <= 1e-12)))
    led.add(lg.eq("v* mass", p_v[-1], theta / (1 + theta), 1e-15))
    live = qv > 0
    dev = float(np.abs(p_z_given_v[:-1][live] - (q_y_given_v @ w_zy)[live]).max()) if live.any() else 0.0
    led.add(lg.eq("Z|V identity off v*", dev, 0.0, 1e-12))
    star_z = (1 + theta) / theta * pz - qz / theta if theta > 0 else pz
    led.add(lg.eq("Z|V identity at v*", float(np.abs(p_z_given_v[-1] - star_z).max()), 0.0, 1e-12))

    pert_joint = np.einsum("xy,yz,xu,yv->xyzuv", source.pxy, w_zy, u_given_x, v_given_y)
    ip_vy = mi_matrix(pert_joint.sum(axis=(0, 2, 3)))
    ip_vz = mi_matrix(pert_joint.sum(axis=(0, 1, 3)))
    ip_ux = mi_matrix(pert_joint.sum(axis=(1, 2, 4)))
    ip_uy = mi_matrix(pert_joint.sum(axis=(0, 2, 4)).T)
    terms = _gamma_terms(source, qxy, wu_xy, wv, w, gamma)
    iq_vy, iq_vz, d_y = terms["I_VY"], terms["I_VZ"], terms["D_Y"]
    a_prime, a = perturbation_constants(source, w)
    log_mu = math.log(source.mu)

    # D(Q_XYU || P_XY Q_{U|X}) = D(Q_XY || P_XY) + I_Q(U;Y|X)
    ref = source.pxy[:, :, None] * u_given_x[:, None, :]
    d_xyu = kl_array(q_xyu, ref)
    led.add(lg.eq("chain rule D(Q_XYU||P_XY Q_U|X)", d_xyu, terms["D_XY"] + terms["I_UY_given_X"], 1e-10))
    led.add(lg.le("gamma D(Q_XYU||P_XYU) <= Delta", gamma * d_xyu, terms["Delta"]))
    premise_a = d_xyu <= a / gamma + 1e-12
    led.add(lg.le("D(Q_Y||P_Y) <= D(Q_XYU||P_XYU)", d_y, d_xyu))
    led.add(lg.le("I_P(V~;Y) mixture bound", ip_vy,
                  (iq_vy + d_y) / (1 + theta) + theta / (1 + theta) * log_mu))
    led.add(lg.ge("I_Q(V;Y) >= I_P(V~;Y) - a/gamma - theta log mu", iq_vy,
                  ip_vy - a / gamma - theta * log_mu, premise=premise_a))
    led.add(lg.le("I_Q(V;Z) <= (1+theta) I_P(V~;Z)", iq_vz, (1 + theta) * ip_vz))
    led.add(lg.le("(1+theta) I_P(V~;Z) <= I_P(V~;Z) + theta log|Z|", (1 + theta) * ip_vz,
                  ip_vz + theta * math.log(nz)))

    # Pinsker in nats and uniform continuity of entropy on U x X
    p_ux = source.px[:, None] * u_given_x
    l1 = float(np.abs(q_xu - p_ux).sum())
    d_ux = kl_array(q_xu, p_ux)
    led.add(lg.le("Pinsker ||Q_UX-P_UX|| <= sqrt(2 D_UX)", l1, math.sqrt(2 * d_ux)))
    led.add(lg.le("data processing D_UX <= D_XYU", d_ux, d_xyu))
    delta = math.sqrt(2 * a / gamma)
    led.add(lg.le("||Q_UX-P_UX|| <= sqrt(2a/gamma)", l1, delta, premise=premise_a))
    m = q_xu.size
    gap_h = abs(entropy_array(q_xu) - entropy_array(p_ux))
    led.add(lg.le("entropy continuity at measured distance", gap_h, _cont_bound(l1, m),
                  premise=l1 <= 0.5))
    led.add(lg.le("entropy continuity at sqrt(2a/gamma)", gap_h, _cont_bound(delta, m),
                  premise=bool(premise_a and delta <= 0.5)))

    r_pert = -ip_uy + w.b * ip_ux - w.c * (ip_uy + ip_vz) + w.d * ip_vy
    return PerturbationReport(gamma=float(gamma), theta=theta, a_prime=a_prime, a=a,
                              perturbed=perturbed, p_v=p_v, p_y_given_v=p_y_given_v,
                              p_z_given_v=p_z_given_v, ledger=led, r_q=terms["R"],
                              r_perturbed=r_pert)
