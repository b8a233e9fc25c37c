"""Minimisation of ``lam * I(U;S) - kappa * I(U;T)`` over kernels ``S -> U``.

``T`` is fixed by a joint law ``p_st``; ``U - S - T`` holds by construction.
Every sub-objective of the weighted region functionals has this form.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .prob import xlogy_ratio

_LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class SolverConfig:
    restarts: int = 64
    damping: float = 0.5
    tol: float = 1e-10
    max_iter: int = 10_000
    seed: int = 0
    polish: bool = True
    polish_top: int = 4
    grid: bool = False
    grid_step: float = 0.02
    refine_step: float = 0.002
    grid_budget: int = 2_000_000


@dataclass(frozen=True)
class PartResult:
    value: float
    kernel: np.ndarray
    rate: float
    relevance: float
    converged: bool
    iterations: int
    origin: str


def batch_terms(p_st: np.ndarray, W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(I(U;S), I(U;T))`` for a stack of kernels ``W`` of shape (R, |S|, |U|)."""
    p_s = p_st.sum(axis=1)
    p_t = p_st.sum(axis=0)
    p_su = p_s[None, :, None] * W
    p_u = p_su.sum(axis=1)
    i_us = xlogy_ratio(p_su, p_s[None, :, None] * p_u[:, None, :]).sum(axis=(1, 2))
    p_tu = np.einsum("st,rsu->rtu", p_st, W)
    i_ut = xlogy_ratio(p_tu, p_t[None, :, None] * p_u[:, None, :]).sum(axis=(1, 2))
    return np.maximum(i_us, 0.0), np.maximum(i_ut, 0.0)


def part_value(p_st, W, lam, kappa) -> float:
    i_us, i_ut = batch_terms(np.asarray(p_st, float), np.asarray(W, float)[None])
    return float(lam * i_us[0] - kappa * i_ut[0])


def deterministic_kernels(n_in: int, card: int, limit: int = 50_000) -> np.ndarray:
    """All maps ``[n_in] -> [card]`` up to output relabelling, as 0/1 kernels."""
    out = []
    labels = [0] * n_in

    def rec(i: int, used: int):
        if len(out) >= limit:
            return
        if i == n_in:
            out.append(list(labels))
            return
        for lab in range(min(used + 1, card)):
            labels[i] = lab
            rec(i + 1, max(used, lab + 1))

    rec(0, 0)
    maps = np.array(out, dtype=np.int64)
    W = np.zeros((len(maps), n_in, card))
    W[np.arange(len(maps))[:, None], np.arange(n_in)[None, :], maps] = 1.0
    return W


def _fixed_point(p_st, W, lam, kappa, cfg: SolverConfig):
    """Damped self-consistent updates ``W(u|s) ~ p(u) exp(-(kappa/lam) D(p(t|s)||p(t|u)))``."""
    beta = kappa / lam
    p_s = p_st.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p_t_s = np.where(p_s[:, None] > 0, p_st / p_s[:, None], 1.0 / p_st.shape[1])
    neg_h = (xlogy_ratio(p_t_s, np.ones_like(p_t_s))).sum(axis=1)
    i_us, i_ut = batch_terms(p_st, W)
    f = lam * i_us - kappa * i_ut
    done = np.zeros(len(W), dtype=bool)
    it = 0
    for it in range(1, cfg.max_iter + 1):
        active = ~done
        Wa = W[active]
        p_u = np.einsum("s,rsu->ru", p_s, Wa)
        p_tu = np.einsum("st,rsu->rtu", p_st, Wa)
        with np.errstate(invalid="ignore", divide="ignore"):
            p_t_u = p_tu / p_u[:, None, :]
        p_t_u = np.nan_to_num(p_t_u, nan=0.0)
        log_ptu = np.log(np.maximum(p_t_u, _LOG_FLOOR))
        D = neg_h[None, :, None] - np.einsum("st,rtu->rsu", p_t_s, log_ptu)
        with np.errstate(divide="ignore"):
            logits = np.log(p_u)[:, None, :] - beta * D
        logits -= logits.max(axis=2, keepdims=True)
        new = np.exp(logits)
        new /= new.sum(axis=2, keepdims=True)
        Wa = (1 - cfg.damping) * Wa + cfg.damping * new
        W[active] = Wa
        a_us, a_ut = batch_terms(p_st, Wa)
        fa = lam * a_us - kappa * a_ut
        conv = np.abs(fa - f[active]) < cfg.tol
        f[active] = fa
        idx = np.flatnonzero(active)
        done[idx[conv]] = True
        if done.all():
            break
    return W, f, done, it


def _polish(p_st, W0, lam, kappa):
    """L-BFGS on softmax logits of a single kernel, analytic gradient."""
    p_s = p_st.sum(axis=1)
    p_t = p_st.sum(axis=0)
    shape = W0.shape

    def fun(theta):
        th = theta.reshape(shape)
        th = th - th.max(axis=1, keepdims=True)
        W = np.exp(th)
        W /= W.sum(axis=1, keepdims=True)
        p_u = p_s @ W
        p_tu = p_st.T @ W
        i_us, i_ut = batch_terms(p_st, W[None])
        val = lam * i_us[0] - kappa * i_ut[0]
        log_ratio_s = np.log(np.maximum(W, _LOG_FLOOR)) - np.log(np.maximum(p_u, _LOG_FLOOR))[None, :]
        log_ratio_t = (np.log(np.maximum(p_tu, _LOG_FLOOR))
                       - np.log(np.maximum(p_u, _LOG_FLOOR))[None, :]
                       - np.log(np.maximum(p_t, _LOG_FLOOR))[:, None])
        g = lam * p_s[:, None] * log_ratio_s - kappa * (p_st @ log_ratio_t)
        gt = W * (g - (W * g).sum(axis=1, keepdims=True))
        return val, gt.ravel()

    theta0 = np.log(np.maximum(W0, 1e-12)).ravel()
    res = minimize(fun, theta0, jac=True, method="L-BFGS-B",
                   options={"maxiter": 2000, "ftol": 1e-15, "gtol": 1e-12})
    th = res.x.reshape(shape)
    th = th - th.max(axis=1, keepdims=True)
    W = np.exp(th)
    W /= W.sum(axis=1, keepdims=True)
    return W


def _simplex_grid(dim: int, k: int) -> np.ndarray:
    """All points of the (dim-1)-simplex with coordinates in multiples of 1/k."""
    pts = []
    for bars in itertools.combinations(range(k + dim - 1), dim - 1):
        prev = -1
        comp = []
        for b in bars:
            comp.append(b - prev - 1)
            prev = b
        comp.append(k + dim - 2 - prev)
        pts.append(comp)
    return np.array(pts, dtype=float) / k


def _eval_rows(p_st, rows_per_s, lam, kappa, chunk=200_000):
    """Minimise over the product of per-row candidate sets; returns (value, W)."""
    sizes = [len(r) for r in rows_per_s]
    total = int(np.prod(sizes))
    best_val, best_W = math.inf, None
    for start in range(0, total, chunk):
        flat = np.arange(start, min(total, start + chunk))
        idx = np.unravel_index(flat, sizes)
        W = np.stack([rows_per_s[s][idx[s]] for s in range(len(sizes))], axis=1)
        i_us, i_ut = batch_terms(p_st, W)
        f = lam * i_us - kappa * i_ut
        j = int(np.argmin(f))
        if f[j] < best_val:
            best_val, best_W = float(f[j]), W[j].copy()
    return best_val, best_W


def grid_search_part(p_st, lam, kappa, card, step=0.02, refine_step=0.002, budget=2_000_000):
    """Exhaustive simplex-grid search with local refinement.

    The step is coarsened until ``(#grid points per row) ** |S|`` fits the budget.
    """
    p_st = np.asarray(p_st, float)
    n_s = p_st.shape[0]
    candidates = [step, 0.025, 0.04, 0.05, 0.1, 0.125, 0.2, 0.25, 0.5, 1.0]
    for st in sorted({c for c in candidates if c >= step}):
        k = int(round(1 / st))
        pts = _simplex_grid(card, k)
        if len(pts) ** n_s <= budget:
            break
    value, W = _eval_rows(p_st, [pts] * n_s, lam, kappa)
    coarse = 1.0 / k
    # cyclic local refinement of one row at a time
    fine = int(round(coarse / refine_step))
    offsets = np.arange(-fine, fine + 1) * refine_step
    improved = True
    sweeps = 0
    while improved and sweeps < 50:
        improved = False
        sweeps += 1
        for s in range(n_s):
            base = W[s]
            grids = np.meshgrid(*([offsets] * (card - 1)), indexing="ij")
            local = np.stack([g.ravel() for g in grids], axis=1) + base[None, : card - 1]
            last = 1.0 - local.sum(axis=1, keepdims=True)
            local = np.concatenate([local, last], axis=1)
            ok = np.all(local >= -1e-12, axis=1)
            local = np.clip(local[ok], 0.0, 1.0)
            rows = [W[r][None] if r != s else local for r in range(n_s)]
            v, Wn = _eval_rows(p_st, rows, lam, kappa)
            if v < value - 1e-15:
                value, W = v, Wn
                improved = True
    return value, W, 1.0 / k


def minimize_part(p_st, lam: float, kappa: float, card: int, cfg: SolverConfig | None = None,
                  rng: np.random.Generator | None = None) -> PartResult:
    cfg = cfg or SolverConfig()
    p_st = np.asarray(p_st, float)
    if lam < 0 or kappa < 0:
        raise ValueError("weights must be nonnegative")
    n_s = p_st.shape[0]
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)

    # candidates are compared in a fixed order; strict improvement replaces the incumbent
    det = deterministic_kernels(n_s, card)
    d_us, d_ut = batch_terms(p_st, det)
    d_f = lam * d_us - kappa * d_ut
    j = int(np.argmin(d_f))
    best = (float(d_f[j]), det[j], "deterministic")
    converged, iterations = True, 0

    if lam > 0 and cfg.restarts > 0:
        W0 = rng.dirichlet(np.ones(card), size=(cfg.restarts, n_s))
        W, f, done, iterations = _fixed_point(p_st, W0, lam, kappa, cfg)
        order = np.argsort(f, kind="stable")
        if f[order[0]] < best[0]:
            best = (float(f[order[0]]), W[order[0]], "fixed-point")
        converged = bool(done[order[0]])
        if cfg.polish:
            starts = [W[i] for i in order[: cfg.polish_top]] + [det[j]]
            for W0p in starts:
                Wp = _polish(p_st, W0p, lam, kappa)
                v = part_value(p_st, Wp, lam, kappa)
                if v < best[0]:
                    best = (v, Wp, "polish")
    if cfg.grid:
        v, Wg, _ = grid_search_part(p_st, lam, kappa, card, cfg.grid_step, cfg.refine_step, cfg.grid_budget)
        if v < best[0]:
            best = (v, Wg, "grid")

    value, Wb, origin = best
    i_us, i_ut = batch_terms(p_st, Wb[None])
    return PartResult(value=float(value), kernel=np.array(Wb), rate=float(i_us[0]),
                      relevance=float(i_ut[0]), converged=converged, iterations=int(iterations),
                      origin=origin)


def max_relevance(p_st, rate: float, card: int, cfg: SolverConfig | None = None,
                  beta_max: float = 1e4, bisections: int = 40) -> PartResult:
    """Largest ``I(U;T)`` found subject to ``I(U;S) <= rate``.

    Traces the tradeoff curve by bisection on the slope parameter of
    ``I(U;S) - beta * I(U;T)``; larger beta never decreases the attained rate.
    """
    cfg = cfg or SolverConfig()
    p_st = np.asarray(p_st, float)
    det = deterministic_kernels(p_st.shape[0], card)
    d_us, d_ut = batch_terms(p_st, det)
    feasible = d_us <= rate + 1e-12
    j = int(np.argmax(np.where(feasible, d_ut, -np.inf)))
    best = PartResult(0.0, det[j], float(d_us[j]), float(d_ut[j]), True, 0, "deterministic")

    def solve(beta):
        return minimize_part(p_st, 1.0, beta, card, cfg)

    def take(res):
        nonlocal best
        if res.rate <= rate + 1e-12 and res.relevance > best.relevance:
            best = res

    lo, hi = 1.0, beta_max
    r_hi = solve(hi)
    take(r_hi)
    if r_hi.rate <= rate:
        return best
    for _ in range(bisections):
        mid = math.sqrt(lo * hi)
        r = solve(mid)
        take(r)
        if r.rate <= rate:
            lo = mid
        else:
            hi = mid
    return best
