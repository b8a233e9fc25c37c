"""Margin ledgers for numerically checked inequalities."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

PASS_TOL = 1e-9

PASS = "pass"
FAIL = "fail"
VACUOUS = "vacuous"
PREMISE_FAILED = "premise-failed"
STATUSES = (PASS, FAIL, VACUOUS, PREMISE_FAILED)


@dataclass(frozen=True)
class Entry:
    """One checked inequality ``lhs <= rhs`` (or an identity, with ``kind='eq'``)."""

    name: str
    lhs: float
    rhs: float
    margin: float
    status: str
    note: str = ""

    def to_json(self) -> dict:
        d = asdict(self)
        for k in ("lhs", "rhs", "margin"):
            v = d[k]
            if isinstance(v, float) and not math.isfinite(v):
                d[k] = repr(v)
        return d


def _status(margin: float, premise: bool, vacuous: bool) -> str:
    if vacuous:
        return VACUOUS
    if not premise:
        return PREMISE_FAILED
    return PASS if margin >= -PASS_TOL else FAIL


def le(name: str, lhs: float, rhs: float, *, premise: bool = True, vacuous: bool = False,
       note: str = "") -> Entry:
    """Record ``lhs <= rhs``; margin is ``rhs - lhs``."""
    lhs, rhs = float(lhs), float(rhs)
    if math.isinf(lhs) and math.isinf(rhs) and (lhs > 0) == (rhs > 0):
        margin = 0.0
    else:
        margin = rhs - lhs
    if math.isnan(margin):
        vacuous = True
    return Entry(name, lhs, rhs, margin, _status(margin, premise, vacuous), note)


def ge(name: str, lhs: float, rhs: float, **kw) -> Entry:
    """Record ``lhs >= rhs``; margin is ``lhs - rhs``."""
    e = le(name, rhs, lhs, **kw)
    return Entry(e.name, float(lhs), float(rhs), e.margin, e.status, e.note)


def eq(name: str, lhs: float, rhs: float, tol: float, *, premise: bool = True,
       vacuous: bool = False, note: str = "") -> Entry:
    """Record ``|lhs - rhs| <= tol``; margin is ``tol - |lhs - rhs|``."""
    lhs, rhs = float(lhs), float(rhs)
    margin = tol - abs(lhs - rhs)
    if math.isnan(margin):
        vacuous = True
    return Entry(name, lhs, rhs, margin, _status(margin, premise, vacuous), note)


def flag(name: str, ok: bool, *, premise: bool = True, note: str = "") -> Entry:
    """Record a boolean check as margin 0 (pass) or -1 (fail)."""
    margin = 0.0 if ok else -1.0
    return Entry(name, float(ok), 1.0, margin, _status(margin, premise, False), note)


@dataclass
class Ledger:
    entries: list[Entry] = field(default_factory=list)

    def add(self, *entries: Entry) -> None:
        self.entries.extend(entries)

    def extend(self, other: "Ledger | list[Entry]") -> None:
        self.entries.extend(other.entries if isinstance(other, Ledger) else other)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, name: str) -> Entry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def counts(self) -> dict[str, int]:
        out = {s: 0 for s in STATUSES}
        for e in self.entries:
            out[e.status] += 1
        return out

    @property
    def ok(self) -> bool:
        return not any(e.status == FAIL for e in self.entries)

    def failures(self) -> list[Entry]:
        return [e for e in self.entries if e.status == FAIL]

    def to_json(self) -> list[dict]:
        return [e.to_json() for e in self.entries]

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    def table(self) -> str:
        width = max([len(e.name) for e in self.entries] + [4])
        lines = [f"{'name':<{width}}  {'lhs':>14}  {'rhs':>14}  {'margin':>12}  status"]
        for e in self.entries:
            lines.append(f"{e.name:<{width}}  {e.lhs:>14.6g}  {e.rhs:>14.6g}  {e.margin:>12.4g}  {e.status}")
        return "\n".join(lines)
