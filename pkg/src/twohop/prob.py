"""Finite-alphabet probability calculus.

All information quantities are in nats. Zero-mass cells are skipped, so
``0 log 0 = 0`` and ``p log(p/0) = inf`` for ``p > 0``.
"""
from __future__ import annotations

import json
import math
import string
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, ShapeError

SUM_TOL = 1e-12
JSON_TOL = 1e-9


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def _check_mass(mass: np.ndarray, tol: float = SUM_TOL) -> None:
    if not np.all(np.isfinite(mass)):
        raise DomainError("probability masses must be finite")
    if np.any(mass < 0):
        raise DomainError("probability masses must be nonnegative")
    if abs(mass.sum() - 1.0) > tol:
        raise DomainError(f"masses sum to {mass.sum()!r}, not 1")


def _check_labels(alphabet: Sequence) -> tuple:
    labels = tuple(alphabet)
    if len(set(labels)) != len(labels):
        raise ShapeError(f"alphabet labels are not unique: {labels}")
    if not labels:
        raise ShapeError("empty alphabet")
    return labels


@dataclass(frozen=True)
class FinitePmf:
    alphabet: tuple
    mass: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alphabet", _check_labels(self.alphabet))
        mass = _frozen(self.mass)
        if mass.shape != (len(self.alphabet),):
            raise ShapeError(f"mass shape {mass.shape} does not match alphabet size {len(self.alphabet)}")
        _check_mass(mass)
        object.__setattr__(self, "mass", mass)

    @classmethod
    def uniform(cls, alphabet: Sequence) -> "FinitePmf":
        k = len(alphabet)
        return cls(tuple(alphabet), np.full(k, 1.0 / k))

    def __len__(self):
        return len(self.alphabet)

    def __getitem__(self, symbol) -> float:
        return float(self.mass[self.alphabet.index(symbol)])

    def as_joint(self, name: str = "A") -> "JointPmf":
        return JointPmf((name,), (self.alphabet,), self.mass)


@dataclass(frozen=True)
class JointPmf:
    """Probability mass over the product of named alphabets.

    ``mass`` has one array axis per entry of ``axes``, in the same order.
    """

    axes: tuple[str, ...]
    alphabets: tuple[tuple, ...]
    mass: np.ndarray

    def __post_init__(self):
        axes = tuple(self.axes)
        if len(set(axes)) != len(axes):
            raise ShapeError(f"duplicate axis names: {axes}")
        alphabets = tuple(_check_labels(a) for a in self.alphabets)
        if len(alphabets) != len(axes):
            raise ShapeError("one alphabet per axis required")
        mass = _frozen(self.mass)
        if mass.shape != tuple(len(a) for a in alphabets):
            raise ShapeError(f"mass shape {mass.shape} does not match alphabets")
        _check_mass(mass)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "alphabets", alphabets)
        object.__setattr__(self, "mass", mass)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.mass.shape

    def axis_index(self, name: str) -> int:
        try:
            return self.axes.index(name)
        except ValueError:
            raise ShapeError(f"no axis {name!r} in {self.axes}") from None

    def alphabet(self, name: str) -> tuple:
        return self.alphabets[self.axis_index(name)]

    def marginal(self, *names: str) -> "JointPmf":
        names = _flatten_names(names)
        idx = [self.axis_index(n) for n in names]
        if len(set(idx)) != len(idx):
            raise ShapeError(f"repeated axes in {names}")
        drop = tuple(i for i in range(len(self.axes)) if i not in idx)
        m = self.mass.sum(axis=drop) if drop else self.mass
        # reorder the kept axes to the requested order
        kept = [i for i in range(len(self.axes)) if i in idx]
        m = np.transpose(m, [kept.index(i) for i in idx])
        return JointPmf(tuple(names), tuple(self.alphabets[i] for i in idx), m)

    def to_pmf(self) -> FinitePmf:
        if len(self.axes) != 1:
            raise ShapeError("to_pmf needs a single-axis JointPmf")
        return FinitePmf(self.alphabets[0], self.mass)

    def matrix(self, rows: Sequence[str] | str, cols: Sequence[str] | str) -> np.ndarray:
        """Mass of the (rows, cols) marginal flattened to a 2-D array."""
        rows, cols = _flatten_names([rows]), _flatten_names([cols])
        m = self.marginal(*rows, *cols).mass
        nr = int(np.prod(m.shape[: len(rows)]))
        return m.reshape(nr, -1)

    def conditional(self, given: Sequence[str] | str, symbol) -> "JointPmf":
        """Law of the remaining axes given ``given`` takes value ``symbol``."""
        given = _flatten_names([given])
        if len(given) == 1 and not isinstance(symbol, tuple):
            symbol = (symbol,)
        idx = [self.axis_index(g) for g in given]
        sl = [slice(None)] * len(self.axes)
        for i, s in zip(idx, symbol):
            sl[i] = self.alphabets[i].index(s)
        m = self.mass[tuple(sl)]
        tot = m.sum()
        if tot <= 0:
            raise DomainError(f"conditioning event {dict(zip(given, symbol))} has zero mass")
        rest = [i for i in range(len(self.axes)) if i not in idx]
        return JointPmf(tuple(self.axes[i] for i in rest), tuple(self.alphabets[i] for i in rest), m / tot)

    def relabel(self, **renames: str) -> "JointPmf":
        return JointPmf(tuple(renames.get(a, a) for a in self.axes), self.alphabets, self.mass)


@dataclass(frozen=True)
class Kernel:
    """Conditional law: ``rows[i]`` is the distribution given ``from_alphabet[i]``."""

    from_alphabet: tuple
    to_alphabet: tuple
    rows: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "from_alphabet", _check_labels(self.from_alphabet))
        object.__setattr__(self, "to_alphabet", _check_labels(self.to_alphabet))
        rows = _frozen(self.rows)
        if rows.shape != (len(self.from_alphabet), len(self.to_alphabet)):
            raise ShapeError(f"kernel rows shape {rows.shape} does not match alphabets")
        for r in rows:
            _check_mass(r)
        object.__setattr__(self, "rows", rows)

    def row(self, symbol) -> FinitePmf:
        return FinitePmf(self.to_alphabet, self.rows[self.from_alphabet.index(symbol)])

    @classmethod
    def identity(cls, alphabet: Sequence) -> "Kernel":
        return cls(tuple(alphabet), tuple(alphabet), np.eye(len(alphabet)))

    @classmethod
    def constant(cls, from_alphabet: Sequence, to_alphabet: Sequence = (0,)) -> "Kernel":
        rows = np.zeros((len(from_alphabet), len(to_alphabet)))
        rows[:, 0] = 1.0
        return cls(tuple(from_alphabet), tuple(to_alphabet), rows)

    def permute_outputs(self, perm: Sequence[int]) -> "Kernel":
        perm = list(perm)
        return Kernel(self.from_alphabet, tuple(self.to_alphabet[p] for p in perm), self.rows[:, perm])


def _flatten_names(names) -> tuple[str, ...]:
    out: list[str] = []
    for n in names:
        if isinstance(n, str):
            out.append(n)
        else:
            out.extend(_flatten_names(n))
    return tuple(out)


# ---------------------------------------------------------------------------
# scalar information measures on raw arrays (used in the solvers' inner loops)


def xlogy_ratio(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Elementwise ``p log(p/q)`` with ``0 log(0/q) = 0`` and ``p log(p/0) = inf``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    out = np.zeros(np.broadcast(p, q).shape)
    p, q = np.broadcast_arrays(p, q)
    pos = p > 0
    with np.errstate(divide="ignore"):
        out[pos] = p[pos] * (np.log(p[pos]) - np.log(q[pos]))
    return out


def entropy_array(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=float).ravel()
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def kl_array(p: np.ndarray, q: np.ndarray) -> float:
    return float(xlogy_ratio(p, q).sum())


def mi_matrix(pab: np.ndarray) -> float:
    """I(A;B) for a 2-D joint mass array."""
    pab = np.asarray(pab, dtype=float)
    pa = pab.sum(axis=1, keepdims=True)
    pb = pab.sum(axis=0, keepdims=True)
    return max(kl_array(pab, pa * pb), 0.0)


# ---------------------------------------------------------------------------
# public operations


def _mass_and_alphabets(p):
    if isinstance(p, FinitePmf):
        return p.mass, (p.alphabet,), None
    if isinstance(p, JointPmf):
        return p.mass, p.alphabets, p.axes
    raise TypeError(f"expected FinitePmf or JointPmf, got {type(p).__name__}")


def kl_divergence(p: FinitePmf | JointPmf, q: FinitePmf | JointPmf) -> float:
    """D(p || q) in nats; ``inf`` when p is not absolutely continuous w.r.t. q."""
    pm, pa, pax = _mass_and_alphabets(p)
    qm, qa, qax = _mass_and_alphabets(q)
    if pa != qa or (pax is not None and qax is not None and pax != qax):
        raise ShapeError("kl_divergence needs identical axes and alphabets")
    return max(kl_array(pm, qm), 0.0)


def binary_divergence(p: float, q: float) -> float:
    if not (0.0 <= p <= 1.0 and 0.0 <= q <= 1.0):
        raise DomainError(f"binary_divergence arguments must lie in [0,1], got {p}, {q}")
    return max(kl_array(np.array([p, 1.0 - p]), np.array([q, 1.0 - q])), 0.0)


def binary_entropy(p: float) -> float:
    return entropy_array(np.array([p, 1.0 - p]))


def entropy(p: FinitePmf | JointPmf, *names: str) -> float:
    if names:
        if not isinstance(p, JointPmf):
            raise TypeError("axis names only apply to JointPmf")
        p = p.marginal(*names)
    return entropy_array(_mass_and_alphabets(p)[0])


def _axis_groups(j: JointPmf, *groups) -> list[tuple[str, ...]]:
    gs = [_flatten_names([g]) for g in groups]
    seen: set[str] = set()
    for g in gs:
        if not g:
            raise ShapeError("empty axis group")
        for a in g:
            j.axis_index(a)
            if a in seen:
                raise ShapeError(f"axis {a!r} appears in more than one group")
            seen.add(a)
    return gs


def mutual_information(j: JointPmf, a, b) -> float:
    a, b = _axis_groups(j, a, b)
    return mi_matrix(j.matrix(a, b))


def conditional_mutual_information(j: JointPmf, a, b, c) -> float:
    """I(A;B|C) = sum_c P(c) I(A;B|C=c)."""
    a, b, c = _axis_groups(j, a, b, c)
    m = j.marginal(*c, *a, *b).mass
    nc = int(np.prod(m.shape[: len(c)]))
    na = int(np.prod(m.shape[len(c): len(c) + len(a)]))
    m = m.reshape(nc, na, -1)
    pc = m.sum(axis=(1, 2))
    pac = m.sum(axis=2, keepdims=True)
    pbc = m.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        ref = pac * pbc / pc[:, None, None]
    ref = np.where(pc[:, None, None] > 0, ref, 0.0)
    return max(kl_array(m, ref), 0.0)


def product(*parts: tuple[str, FinitePmf] | JointPmf) -> JointPmf:
    """Independent product of pmfs; ``(name, FinitePmf)`` pairs or JointPmfs."""
    axes: list[str] = []
    alphabets: list[tuple] = []
    mass = np.ones(())
    for part in parts:
        if isinstance(part, JointPmf):
            axes.extend(part.axes)
            alphabets.extend(part.alphabets)
            m = part.mass
        else:
            name, pmf = part
            axes.append(name)
            alphabets.append(pmf.alphabet)
            m = pmf.mass
        mass = np.multiply.outer(mass, m)
    return JointPmf(tuple(axes), tuple(alphabets), mass)


def iid_power(p: FinitePmf, n: int, name: str = "A") -> JointPmf:
    if n < 1:
        raise DomainError("n must be at least 1")
    return product(*[(f"{name}{i + 1}", p) for i in range(n)])


def sequence_mass(p: np.ndarray, n: int) -> np.ndarray:
    """Mass of every length-n sequence, row-major (first coordinate most significant)."""
    p = np.asarray(p, dtype=float)
    out = p
    for _ in range(n - 1):
        out = np.multiply.outer(out, p)
    return out.reshape(-1) if n > 1 else out.copy()


def sequence_joint(pab: np.ndarray, n: int) -> np.ndarray:
    """n-fold product of a 2-D joint, flattened to (|A|^n, |B|^n) row-major."""
    pab = np.asarray(pab, dtype=float)
    out = pab
    for _ in range(n - 1):
        out = np.einsum("ab,cd->acbd", out, pab).reshape(out.shape[0] * pab.shape[0], -1)
    return out.copy()


def attach(j: JointPmf, on: str | Sequence[str], kernel: Kernel, new_axis: str) -> JointPmf:
    """Joint law of ``j`` extended by ``new_axis ~ kernel(. | on)``."""
    on = _flatten_names([on])
    idx = [j.axis_index(a) for a in on]
    if new_axis in j.axes:
        raise ShapeError(f"axis {new_axis!r} already present")
    from_shape = tuple(j.shape[i] for i in idx)
    if kernel.rows.shape[0] != int(np.prod(from_shape)):
        raise ShapeError("kernel input alphabet does not match conditioning axes")
    if len(on) == 1 and kernel.from_alphabet != j.alphabets[idx[0]]:
        raise ShapeError("kernel input alphabet labels do not match")
    rows = kernel.rows.reshape(*from_shape, -1)
    letters = string.ascii_letters
    jl = letters[: len(j.axes)]
    new = letters[len(j.axes)]
    kl = "".join(jl[i] for i in idx) + new
    mass = np.einsum(f"{jl},{kl}->{jl}{new}", j.mass, rows)
    return JointPmf(j.axes + (new_axis,), j.alphabets + (kernel.to_alphabet,), mass)


def conditional_kernel(j: JointPmf, given: str, target: str) -> Kernel:
    """Kernel ``given -> target`` induced by ``j``; zero-mass rows become uniform."""
    m = j.matrix(given, target)
    tot = m.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        rows = np.where(tot > 0, m / tot, 1.0 / m.shape[1])
    return Kernel(j.alphabet(given), j.alphabet(target), rows)


# ---------------------------------------------------------------------------
# the two-hop source


@dataclass(frozen=True)
class TwoHopSource:
    """H0 law P_XY P_{Z|Y}; H1 law P_X P_Y P_Z."""

    p_xy: JointPmf
    p_z_given_y: Kernel
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.p_xy.axes != ("X", "Y"):
            raise ShapeError(f"p_xy must have axes ('X','Y'), got {self.p_xy.axes}")
        if self.p_z_given_y.from_alphabet != self.p_xy.alphabet("Y"):
            raise ShapeError("P_Z|Y input alphabet must equal the Y alphabet of P_XY")

    # alphabets ---------------------------------------------------------
    @property
    def x_alphabet(self) -> tuple:
        return self.p_xy.alphabets[0]

    @property
    def y_alphabet(self) -> tuple:
        return self.p_xy.alphabets[1]

    @property
    def z_alphabet(self) -> tuple:
        return self.p_z_given_y.to_alphabet

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.x_alphabet), len(self.y_alphabet), len(self.z_alphabet)

    # raw arrays ---------------------------------------------------------
    @property
    def pxy(self) -> np.ndarray:
        return self.p_xy.mass

    @property
    def w_zy(self) -> np.ndarray:
        """P_{Z|Y} rows, shape (|Y|, |Z|)."""
        return self.p_z_given_y.rows

    @property
    def px(self) -> np.ndarray:
        return self.pxy.sum(axis=1)

    @property
    def py(self) -> np.ndarray:
        return self.pxy.sum(axis=0)

    @property
    def pz(self) -> np.ndarray:
        return self.py @ self.w_zy

    @property
    def pyz(self) -> np.ndarray:
        return self.py[:, None] * self.w_zy

    def joint(self) -> JointPmf:
        return attach(self.p_xy, "Y", self.p_z_given_y, "Z")

    # derived constants --------------------------------------------------
    @property
    def alpha(self) -> float:
        py, pz = self.py, self.pz
        rows = self.w_zy[py > 0][:, pz > 0]
        return float(np.max(rows / pz[pz > 0]))

    @property
    def mu(self) -> float:
        py = self.py
        return float(1.0 / py[py > 0].min())

    def mi_xy(self) -> float:
        return mi_matrix(self.pxy)

    def mi_yz(self) -> float:
        return mi_matrix(self.pyz)

    # construction helpers -----------------------------------------------
    @classmethod
    def from_arrays(cls, pxy, pz_given_y, x=None, y=None, z=None) -> "TwoHopSource":
        pxy = np.asarray(pxy, dtype=float)
        w = np.asarray(pz_given_y, dtype=float)
        x = tuple(range(pxy.shape[0])) if x is None else tuple(x)
        y = tuple(range(pxy.shape[1])) if y is None else tuple(y)
        z = tuple(range(w.shape[1])) if z is None else tuple(z)
        return cls(JointPmf(("X", "Y"), (x, y), pxy), Kernel(y, z, w))

    @classmethod
    def dsbs(cls, p_xy: float = 0.1, p_yz: float = 0.1) -> "TwoHopSource":
        """X uniform bit, Y = X through BSC(p_xy), Z = Y through BSC(p_yz)."""
        pxy = 0.5 * np.array([[1 - p_xy, p_xy], [p_xy, 1 - p_xy]])
        w = np.array([[1 - p_yz, p_yz], [p_yz, 1 - p_yz]])
        return cls.from_arrays(pxy, w)

    @classmethod
    def random(cls, rng: np.random.Generator, sizes=(2, 2, 2), independent_xy: bool = False,
               concentration: float = 1.0) -> "TwoHopSource":
        nx, ny, nz = sizes
        if independent_xy:
            px = rng.dirichlet(np.full(nx, concentration))
            py = rng.dirichlet(np.full(ny, concentration))
            pxy = np.outer(px, py)
        else:
            pxy = rng.dirichlet(np.full(nx * ny, concentration)).reshape(nx, ny)
        w = rng.dirichlet(np.full(nz, concentration), size=ny)
        return cls.from_arrays(pxy, w)

    # JSON -------------------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "X": list(self.x_alphabet),
            "Y": list(self.y_alphabet),
            "Z": list(self.z_alphabet),
            "P_XY": self.pxy.tolist(),
            "P_Z_given_Y": self.w_zy.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict | str) -> "TwoHopSource":
        if isinstance(doc, str):
            doc = json.loads(doc)
        try:
            x, y, z = list(doc["X"]), list(doc["Y"]), list(doc["Z"])
            pxy = np.asarray(doc["P_XY"], dtype=float)
            w = np.asarray(doc["P_Z_given_Y"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"malformed source JSON: {exc}") from exc
        if pxy.shape != (len(x), len(y)) or w.shape != (len(y), len(z)):
            raise ShapeError("P_XY / P_Z_given_Y shapes do not match the alphabets")
        if np.any(pxy < 0) or np.any(w < 0):
            raise DomainError("negative probability in source JSON")
        if abs(pxy.sum() - 1) > JSON_TOL:
            raise DomainError(f"P_XY sums to {pxy.sum()!r}")
        bad = np.abs(w.sum(axis=1) - 1) > JSON_TOL
        if bad.any():
            raise DomainError(f"P_Z_given_Y rows {np.flatnonzero(bad).tolist()} do not sum to 1")
        pxy = pxy / pxy.sum()
        w = w / w.sum(axis=1, keepdims=True)
        return cls.from_arrays(pxy, w, x, y, z)

    @classmethod
    def load(cls, path) -> "TwoHopSource":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DomainError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_json(doc)


@dataclass(frozen=True)
class SourceConstants:
    alpha: float
    mu: float
    theta: float
    psi: float
    alpha_is_one: bool
    """When set, Psi is reported as 0 and the receiver chain uses t = 1/sqrt(n)."""


def log_tau_ratio(eps1: float, eps2: float) -> float:
    """log((1+3 eps2 - eps1)/(1 - eps1 - eps2)), the B_n threshold in log form (positive)."""
    _check_eps(eps1, eps2)
    return math.log((1 + 3 * eps2 - eps1) / (1 - eps1 - eps2))


def _check_eps(eps1: float, eps2: float) -> None:
    if not (0 <= eps1 < 1 and 0 <= eps2 < 1):
        raise DomainError(f"eps1, eps2 must lie in [0,1), got {eps1}, {eps2}")
    if eps1 + eps2 >= 1:
        raise DomainError(f"eps1 + eps2 = {eps1 + eps2} must be < 1")


def theta_n(source: TwoHopSource, n: int, eps1: float, eps2: float) -> float:
    _check_eps(eps1, eps2)
    if n < 1:
        raise DomainError("n must be at least 1")
    ny = source.sizes[1]
    return math.sqrt(3 * source.mu / n * math.log(8 * ny / (1 - eps1 - eps2)))


def source_constants(source: TwoHopSource, n: int, eps1: float, eps2: float) -> SourceConstants:
    alpha, mu = source.alpha, source.mu
    theta = theta_n(source, n, eps1, eps2)
    one = alpha <= 1 + 1e-12
    psi = 0.0 if one else 2 * math.sqrt(n * (alpha - 1) * log_tau_ratio(eps1, eps2))
    return SourceConstants(alpha=alpha, mu=mu, theta=theta, psi=psi, alpha_is_one=one)

