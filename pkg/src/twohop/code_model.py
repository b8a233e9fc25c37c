"""Deterministic two-hop codes and their four error probabilities."""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import BudgetError, DomainError, ShapeError
from .prob import JointPmf, TwoHopSource, sequence_mass

EXACT_BUDGET = 1 << 26
H0, H1 = 0, 1
_CHUNK = 1 << 22
MC_BLOCK = 1 << 16


# ---------------------------------------------------------------------------
# sequences


def seq_index(digits: np.ndarray, base: int) -> np.ndarray:
    """Row-major index of each row of ``digits`` (first coordinate most significant)."""
    digits = np.asarray(digits, dtype=np.int64)
    out = np.zeros(digits.shape[:-1], dtype=np.int64)
    for k in range(digits.shape[-1]):
        out = out * base + digits[..., k]
    return out


def seq_digits(index, base: int, n: int) -> np.ndarray:
    """Inverse of :func:`seq_index`; shape ``index.shape + (n,)``."""
    index = np.asarray(index, dtype=np.int64)
    out = np.empty(index.shape + (n,), dtype=np.int64)
    rest = index.copy()
    for k in range(n - 1, -1, -1):
        out[..., k] = rest % base
        rest //= base
    return out


def _int_root(m: int, n: int) -> int:
    r = int(round(m ** (1.0 / n)))
    for cand in (r - 1, r, r + 1):
        if cand >= 1 and cand ** n == m:
            return cand
    raise ShapeError(f"table length {m} is not an n-th power for n={n}")


def apply_kernel_power(m: np.ndarray, w: np.ndarray, n: int) -> np.ndarray:
    """Right-multiply each row of ``m`` (over A^n) by the n-fold kernel ``w`` (A -> B)."""
    rows = m.shape[0]
    na, nb = w.shape
    a = m.reshape((rows,) + (na,) * n)
    for i in range(n):
        a = np.moveaxis(np.tensordot(a, w, axes=([1 + i], [0])), -1, 1 + i)
    return a.reshape(rows, nb ** n)


# ---------------------------------------------------------------------------
# codes


@dataclass(frozen=True)
class TwoHopCode:
    """Tables of an (n, N1, N2) code; decisions use 0 = H0 (accept), 1 = H1."""

    n: int
    N1: int
    N2: int
    f1: np.ndarray
    f2: np.ndarray
    g1: np.ndarray
    g2: np.ndarray

    def __post_init__(self):
        if self.n < 1 or self.N1 < 1 or self.N2 < 1:
            raise DomainError("n, N1, N2 must be positive")
        f1 = np.asarray(self.f1, dtype=np.int64)
        f2 = np.asarray(self.f2, dtype=np.int64)
        g1 = np.asarray(self.g1, dtype=np.int8)
        g2 = np.asarray(self.g2, dtype=np.int8)
        if f1.ndim != 1 or f2.ndim != 2 or g1.ndim != 2 or g2.ndim != 2:
            raise ShapeError("f1 must be 1-D and f2, g1, g2 2-D tables")
        if f2.shape[0] != self.N1 or g1.shape[0] != self.N1 or g2.shape[0] != self.N2:
            raise ShapeError("table row counts must match N1 (f2, g1) and N2 (g2)")
        if f2.shape != g1.shape:
            raise ShapeError("f2 and g1 must both be indexed by (m1, y^n)")
        for t, hi, name in ((f1, self.N1, "f1"), (f2, self.N2, "f2")):
            if t.size and (t.min() < 0 or t.max() >= hi):
                raise ShapeError(f"{name} has an index outside [0, {hi})")
        for t, name in ((g1, "g1"), (g2, "g2")):
            if t.size and not np.all((t == 0) | (t == 1)):
                raise ShapeError(f"{name} entries must be 0 (H0) or 1 (H1)")
        sizes = (_int_root(f1.size, self.n), _int_root(f2.shape[1], self.n), _int_root(g2.shape[1], self.n))
        for name, arr in (("f1", f1), ("f2", f2), ("g1", g1), ("g2", g2)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "_sizes", sizes)

    @property
    def sizes(self) -> tuple[int, int, int]:
        return self._sizes

    def check_source(self, source: TwoHopSource) -> None:
        if self.sizes != source.sizes:
            raise ShapeError(f"code alphabets {self.sizes} do not match source {source.sizes}")

    def relabel_m1(self, perm) -> "TwoHopCode":
        """Rename message ``m`` to ``perm[m]`` consistently in f1, f2 and g1."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.argsort(perm)
        return TwoHopCode(self.n, self.N1, self.N2, perm[self.f1], self.f2[inv], self.g1[inv], self.g2)

    def to_json(self) -> dict:
        return {"n": self.n, "N1": self.N1, "N2": self.N2, "f1": self.f1.tolist(),
                "f2": self.f2.tolist(), "g1": self.g1.tolist(), "g2": self.g2.tolist()}

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def from_json(cls, doc: dict | str) -> "TwoHopCode":
        if isinstance(doc, str):
            doc = json.loads(doc)
        try:
            return cls(int(doc["n"]), int(doc["N1"]), int(doc["N2"]), np.asarray(doc["f1"]),
                       np.asarray(doc["f2"]), np.asarray(doc["g1"]), np.asarray(doc["g2"]))
        except KeyError as e:
            raise ShapeError(f"code file is missing field {e.args[0]!r}") from None

    @classmethod
    def load(cls, path) -> "TwoHopCode":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    @classmethod
    def trivial(cls, sizes, n: int, g1: int = H0, g2: int = H0) -> "TwoHopCode":
        """``N1 = N2 = 1`` code with constant decisions."""
        nx, ny, nz = sizes
        return cls(n, 1, 1, np.zeros(nx ** n, np.int64), np.zeros((1, ny ** n), np.int64),
                   np.full((1, ny ** n), g1), np.full((1, nz ** n), g2))


# ---------------------------------------------------------------------------
# exact laws


@dataclass(frozen=True)
class InducedLaw:
    h0_m1y: JointPmf
    h1_m1y: JointPmf
    h0_m2z: JointPmf
    h1_m2z: JointPmf


def _check_budget(code: TwoHopCode, source: TwoHopSource, budget: int) -> None:
    code.check_source(source)
    nx, ny, nz = source.sizes
    cells = max((nx * ny) ** code.n, code.N1 * ny ** code.n, code.N2 * max(ny, nz) ** code.n)
    if cells > budget:
        raise BudgetError(f"exact evaluation needs {cells} cells (budget {budget}); "
                          "use Monte Carlo mode instead")


def sequence_joint_rows(pxy: np.ndarray, n: int, start: int, stop: int) -> np.ndarray:
    """Rows ``start:stop`` of the n-fold product of ``pxy`` over (X^n, Y^n)."""
    nx = pxy.shape[0]
    dig = seq_digits(np.arange(start, stop), nx, n)
    out = pxy[dig[:, 0]]
    for k in range(1, n):
        out = (out[:, :, None] * pxy[dig[:, k]][:, None, :]).reshape(stop - start, -1)
    return out


def m1y_mass(code: TwoHopCode, source: TwoHopSource, budget: int = EXACT_BUDGET) -> np.ndarray:
    """``P(M1 = m, Y^n = y)`` under H0, accumulated over blocks of x^n in index order."""
    _check_budget(code, source, budget)
    nx, ny, _ = source.sizes
    n = code.n
    n_x, n_y = nx ** n, ny ** n
    step = max(1, _CHUNK // n_y)
    out = np.zeros((code.N1, n_y))
    for start in range(0, n_x, step):
        stop = min(n_x, start + step)
        rows = sequence_joint_rows(source.pxy, n, start, stop)
        out += kernels.scatter_rows(code.f1[start:stop], rows, code.N1)
    return out


def _m2_of(code: TwoHopCode, m1y: np.ndarray) -> np.ndarray:
    """Push a law over (M1, Y^n) through f2 to a law over (M2, Y^n)."""
    n_y = m1y.shape[1]
    out = np.zeros((code.N2, n_y))
    cols = np.broadcast_to(np.arange(n_y), m1y.shape)
    np.add.at(out, (code.f2, cols), m1y)
    return out


def induced_laws(code: TwoHopCode, source: TwoHopSource, budget: int = EXACT_BUDGET) -> InducedLaw:
    n = code.n
    nx, ny, nz = source.sizes
    h0 = m1y_mass(code, source, budget)
    p_m1 = kernels.scatter_rows(code.f1, sequence_mass(source.px, n)[:, None], code.N1)[:, 0]
    py_n = sequence_mass(source.py, n)
    pz_n = sequence_mass(source.pz, n)
    h1 = np.outer(p_m1, py_n)
    h0_m2z = apply_kernel_power(_m2_of(code, h0), source.w_zy, n)
    p_m2 = _m2_of(code, h1).sum(axis=1)
    h1_m2z = np.outer(p_m2, pz_n)
    m1, m2 = tuple(range(code.N1)), tuple(range(code.N2))
    ys, zs = tuple(range(ny ** n)), tuple(range(nz ** n))
    return InducedLaw(JointPmf(("M1", "Yn"), (m1, ys), h0), JointPmf(("M1", "Yn"), (m1, ys), h1),
                      JointPmf(("M2", "Zn"), (m2, zs), h0_m2z), JointPmf(("M2", "Zn"), (m2, zs), h1_m2z))


# ---------------------------------------------------------------------------
# error profiles


@dataclass(frozen=True)
class ErrorProfile:
    beta1: float
    beta2: float
    eta1: float
    eta2: float
    mode: str = "exact"
    ci: tuple | None = None
    samples: int | None = None
    seed: int | None = None

    def __post_init__(self):
        for k in ("beta1", "beta2", "eta1", "eta2"):
            v = float(getattr(self, k))
            if not (-1e-12 <= v <= 1 + 1e-12):
                raise DomainError(f"{k} = {v} is not a probability")
            object.__setattr__(self, k, min(max(v, 0.0), 1.0))
        if self.mode not in ("exact", "monte_carlo"):
            raise DomainError(f"unknown mode {self.mode!r}")
        if self.mode == "exact" and self.ci is not None:
            raise DomainError("exact profiles carry no confidence intervals")

    def values(self) -> tuple[float, float, float, float]:
        return (self.beta1, self.beta2, self.eta1, self.eta2)

    def half_widths(self) -> tuple | None:
        if self.ci is None:
            return None
        return tuple((hi - lo) / 2 for lo, hi in self.ci)


def exact_errors(code: TwoHopCode, source: TwoHopSource, laws: InducedLaw | None = None,
                 budget: int = EXACT_BUDGET) -> ErrorProfile:
    laws = laws or induced_laws(code, source, budget)
    g1, g2 = code.g1.astype(float), code.g2.astype(float)
    beta1 = float((laws.h0_m1y.mass * g1).sum())
    beta2 = float((laws.h1_m1y.mass * (1 - g1)).sum())
    eta1 = float((laws.h0_m2z.mass * g2).sum())
    eta2 = float((laws.h1_m2z.mass * (1 - g2)).sum())
    return ErrorProfile(beta1, beta2, eta1, eta2)


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n <= 0:
        return (0.0, 1.0)
    p = k / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return (max(0.0, centre - half), min(1.0, centre + half))


def _sample_seq(rng, cdf, size, n):
    return np.searchsorted(cdf, rng.random((size, n)), side="right").clip(max=len(cdf) - 1)


def _mc_block(code: TwoHopCode, source: TwoHopSource, size: int, seed_seq) -> np.ndarray:
    """Error counts ``[beta1, beta2, eta1, eta2]`` for one block of samples."""
    rng = np.random.default_rng(seed_seq)
    nx, ny, nz = source.sizes
    n = code.n
    # H0: (X, Y) pairs, then Z through the channel
    pair = _sample_seq(rng, np.cumsum(source.pxy.ravel()), size, n)
    x0, y0 = pair // ny, pair % ny
    wcdf = np.cumsum(source.w_zy, axis=1)
    u = rng.random((size, n))
    z0 = (u[..., None] >= wcdf[y0]).sum(axis=-1).clip(max=nz - 1)
    # H1: independent coordinates
    x1 = _sample_seq(rng, np.cumsum(source.px), size, n)
    y1 = _sample_seq(rng, np.cumsum(source.py), size, n)
    z1 = _sample_seq(rng, np.cumsum(source.pz), size, n)
    out = np.zeros(4, dtype=np.int64)
    for h, (x, y, z) in enumerate(((x0, y0, z0), (x1, y1, z1))):
        xi, yi, zi = seq_index(x, nx), seq_index(y, ny), seq_index(z, nz)
        m1 = code.f1[xi]
        m2 = code.f2[m1, yi]
        d1 = code.g1[m1, yi]
        d2 = code.g2[m2, zi]
        if h == 0:
            out[0], out[2] = int(d1.sum()), int(d2.sum())
        else:
            out[1], out[3] = int((d1 == 0).sum()), int((d2 == 0).sum())
    return out


def mc_errors(code: TwoHopCode, source: TwoHopSource, n_samples: int, seed: int = 0,
              threads: int = 1, block: int = MC_BLOCK) -> ErrorProfile:
    """Frequency estimates with Wilson 95% intervals.

    Samples are split into fixed-size blocks; block ``k`` draws from the child
    seed sequence with spawn key ``(k,)``, so results do not depend on ``threads``.
    """
    if n_samples < 1:
        raise DomainError("n_samples must be at least 1")
    code.check_source(source)
    sizes = [block] * (n_samples // block)
    if n_samples % block:
        sizes.append(n_samples % block)
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = list(zip(sizes, children))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda j: _mc_block(code, source, *j), jobs))
    else:
        parts = [_mc_block(code, source, *j) for j in jobs]
    counts = np.sum(parts, axis=0)
    est = counts / n_samples
    ci = tuple(wilson_interval(int(k), n_samples) for k in counts)
    return ErrorProfile(*est, mode="monte_carlo", ci=ci, samples=n_samples, seed=seed)


def weighted_lhs(profile: ErrorProfile, N1: int, N2: int, w) -> float:
    """``log beta2 + b log N1 + c log eta2 + d log N2``; ``-inf`` when a needed error is zero."""
    b, c, d = w.as_tuple() if hasattr(w, "as_tuple") else tuple(w)
    if profile.beta2 <= 0:
        return -math.inf
    val = math.log(profile.beta2) + b * math.log(N1) + d * math.log(N2)
    if c > 0:
        if profile.eta2 <= 0:
            return -math.inf
        val += c * math.log(profile.eta2)
    return val


CSV_HEADER = ["n", "N1", "N2", "beta1", "beta2", "eta1", "eta2", "mode", "ci1", "ci2", "ci3", "ci4", "seed"]


def profile_row(code: TwoHopCode, profile: ErrorProfile) -> list:
    hw = profile.half_widths() or ("",) * 4
    seed = "" if profile.seed is None else profile.seed
    return [code.n, code.N1, code.N2, *(repr(v) for v in profile.values()), profile.mode,
            *(repr(h) if h != "" else "" for h in hw), seed]


def profiles_csv(rows: list[list]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_HEADER)
    wr.writerows(rows)
    return buf.getvalue()
