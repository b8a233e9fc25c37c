"""Command-line entry point: ``twohop region | verify | simulate | oracle``."""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import os
import sys
import warnings

from .code_model import TwoHopCode, exact_errors, mc_errors
from .converse import PremiseError, audit
from .errors import BudgetError, ConvergenceWarning, DomainError, TwoHopError
from .prob import TwoHopSource
from .single_letter import AuxCoupling, CardBounds, TradeoffWeights, solve_r

EXIT_OK, EXIT_INPUT, EXIT_VERIFY, EXIT_BUDGET = 0, 2, 3, 4
DEFAULT_GRID = (0.0, 0.5, 1.0, 2.0)
QUANTIZE_MARGIN = 0.1
TIMESHARE_MARGIN = 0.8


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _weights(text: str) -> TradeoffWeights:
    vals = _floats(text)
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("weights take three values b,c,d")
    return TradeoffWeights(*vals)


def _cards(text: str) -> CardBounds:
    vals = [int(v) for v in text.split(",")]
    if len(vals) != 2:
        raise argparse.ArgumentTypeError("--cards takes two values u,v")
    return CardBounds(*vals)


def _n_list(text: str) -> list[int]:
    """``4..12``, ``4,6,8`` or a mix of both."""
    out = []
    for part in text.split(","):
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        elif part.strip():
            out.append(int(part))
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError(f"bad n list {text!r}")
    return out


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("TWOHOP_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise DomainError(f"TWOHOP_THREADS must be an integer, got {env!r}") from None


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(header, rows, out) -> None:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([_fmt(v) for v in r])
    _emit(buf.getvalue(), out)


def _emit(text: str, out) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


def _dump_json(doc, out) -> None:
    _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", out)


def _check_eps(eps1: float, eps2: float) -> None:
    if not (0 <= eps1 < 1 and 0 <= eps2 < 1):
        raise DomainError("eps1 and eps2 must lie in [0, 1)")
    if math.isclose(eps1 + eps2, 1.0, abs_tol=1e-12):
        raise DomainError("eps1 + eps2 = 1 is excluded")


# ---------------------------------------------------------------------------
# region


def cmd_region(args) -> int:
    source = TwoHopSource.load(args.source)
    if args.weights is not None:
        triples = [args.weights]
    else:
        grid = args.grid or list(DEFAULT_GRID)
        triples = [TradeoffWeights(*t) for t in itertools.product(grid, repeat=3)]
    rows = []
    for k, w in enumerate(triples):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            sol = solve_r(source, w, args.cards)
        converged = sol.converged and not any(issubclass(c.category, ConvergenceWarning)
                                              for c in caught)
        if not converged:
            print(f"warning: solver did not converge at weights {w.as_tuple()}", file=sys.stderr)
        rows.append([w.b, w.c, w.d, sol.value, int(converged)])
        if args.witness_dir:
            os.makedirs(args.witness_dir, exist_ok=True)
            path = os.path.join(args.witness_dir, f"witness_{k:04d}.json")
            doc = {"weights": list(w.as_tuple()), "value": sol.value, "aux": sol.aux.to_json()}
            _dump_json(doc, path)
    _write_csv(["b", "c", "d", "R_value", "converged"], rows, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    from . import oracle

    source = TwoHopSource.load(args.source)
    _check_eps(args.eps1, args.eps2)
    w = args.weights
    if args.enumerate:
        n = args.n
        gamma = math.sqrt(n) if args.gamma is None else args.gamma
        if args.audit == "all":
            codes = oracle.all_codes(source.sizes, n, args.N1, args.N2)
        else:
            codes = oracle.frontier_codes(source, n, args.N1, args.N2, args.eps1, args.eps2)
        summary = oracle.audit_codes(codes, source, args.eps1, args.eps2, w, gamma)
        doc = summary.to_json()
        doc["failed_examples"] = summary.failed_entries
        _dump_json(doc, args.out)
        return EXIT_VERIFY if summary.fails else EXIT_OK
    if not args.code:
        raise DomainError("verify needs --code or --enumerate")
    code = TwoHopCode.load(args.code)
    code.check_source(source)
    gamma = math.sqrt(code.n) if args.gamma is None else args.gamma
    try:
        a = audit(code, source, args.eps1, args.eps2, w, gamma)
    except PremiseError as exc:
        raise DomainError(f"code does not meet the converse premise: {exc}") from exc
    if args.table:
        _emit(a.ledger.table() + "\n", args.out)
    else:
        _emit(a.ledger.dumps() + "\n", args.out)
    return EXIT_VERIFY if a.ledger.failures() else EXIT_OK


# ---------------------------------------------------------------------------
# simulate


SIM_HEADER = ["n", "N1", "N2", "beta1", "beta2", "eta1", "eta2", "exp_beta2", "exp_eta2", "mode",
              "flag"]


def _sim_row(n, code, prof):
    e1 = "" if prof.beta2 <= 0 else -math.log(prof.beta2) / n
    e2 = "" if prof.eta2 <= 0 else -math.log(prof.eta2) / n
    flags = [f for f, z in (("beta2=0", prof.beta2 <= 0), ("eta2=0", prof.eta2 <= 0)) if z]
    return [n, code.N1, code.N2, *prof.values(), e1, e2, prof.mode, ";".join(flags)]


def cmd_simulate(args) -> int:
    from .schemes import build_quantize_bin, build_timeshare, default_partition

    source = TwoHopSource.load(args.source)
    aux = AuxCoupling.from_json(source, _read(args.aux)) if args.aux else AuxCoupling.identity(source)
    if args.scheme == "timeshare":
        if args.eps1 + args.eps2 <= 1:
            raise DomainError("time sharing needs eps1 + eps2 > 1")
        if not (args.eps1 < 1 and args.eps2 < 1):
            raise DomainError("eps1 and eps2 must be below 1")
    margin = args.margin
    if margin is None:
        margin = TIMESHARE_MARGIN if args.scheme == "timeshare" else QUANTIZE_MARGIN
    threads = _threads(args)
    rows = []
    for n in args.n_list:
        if args.scheme == "quantize":
            code = build_quantize_bin(source, aux, n, margin, seed=args.seed)
        else:
            comp = build_quantize_bin(source, aux, n, margin, seed=args.seed)
            mask = default_partition(source, n, args.eps1, args.eps2)
            code = build_timeshare(comp, comp, mask, n, args.eps1, args.eps2, source)
        if args.mc:
            prof = mc_errors(code, source, args.mc, seed=args.seed, threads=threads)
        else:
            prof = exact_errors(code, source)
        rows.append(_sim_row(n, code, prof))
    _write_csv(SIM_HEADER, rows, args.out)
    return EXIT_OK


def _read(path):
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise DomainError(f"{path}: invalid JSON ({exc})") from exc


# ---------------------------------------------------------------------------
# oracle


def cmd_oracle(args) -> int:
    from . import oracle

    source = TwoHopSource.load(args.source)
    _check_eps(args.eps1, args.eps2)
    if args.sample:
        res = oracle.sample_search(source, args.n, args.N1, args.N2, args.eps1, args.eps2,
                                   args.weights, args.sample, seed=args.seed, gamma=args.gamma)
    else:
        res = oracle.exhaustive_search(source, args.n, args.N1, args.N2, args.eps1, args.eps2,
                                       args.weights, gamma=args.gamma, audit_mode=args.audit,
                                       threads=_threads(args))
    doc = {"best_weighted_lhs": res.best_lhs if math.isfinite(res.best_lhs) else str(res.best_lhs),
           "encoder_pairs": res.encoder_pairs, "sampled": res.sampled,
           "summary": res.summary.to_json()}
    if args.code_out and res.best_code is not None:
        _emit(res.best_code.dumps() + "\n", args.code_out)
    if args.frontier_csv and res.best_code is not None:
        fr = oracle.np_frontier(res.best_code.f1, res.best_code.f2, source, args.n,
                                args.N1, args.N2)
        rows = [["relay", *p] for p in fr.relay.points.tolist()]
        rows += [["receiver", *p] for p in fr.receiver.points.tolist()]
        _write_csv(["hop", "type1", "type2"], rows, args.frontier_csv)
    _dump_json(doc, args.out)
    return EXIT_VERIFY if res.summary.fails else EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twohop", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("source", help="source JSON (X, Y, Z, P_XY, P_Z_given_Y)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $TWOHOP_THREADS or 1)")
    common.add_argument("--out", default=None, help="output file (default stdout)")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("region", parents=[common], help="weighted objective over a weight grid")
    r.add_argument("--weights", type=_weights, default=None, help="single triple b,c,d")
    r.add_argument("--grid", type=_floats, default=None,
                   help="values used for each of b, c, d (default 0,0.5,1,2)")
    r.add_argument("--cards", type=_cards, default=None, help="auxiliary alphabet sizes u,v")
    r.add_argument("--witness-dir", default=None)
    r.set_defaults(func=cmd_region)

    def tests(q):
        q.add_argument("--eps1", type=float, required=True)
        q.add_argument("--eps2", type=float, required=True)
        q.add_argument("--weights", type=_weights, default=TradeoffWeights(1.0, 1.0, 1.0))
        q.add_argument("--gamma", type=float, default=None, help="default sqrt(n)")

    v = sub.add_parser("verify", parents=[common], help="converse ledger for a code")
    v.add_argument("--code", default=None)
    v.add_argument("--enumerate", action="store_true", help="audit an enumerated code set")
    v.add_argument("--n", type=int, default=1)
    v.add_argument("--N1", type=int, default=2)
    v.add_argument("--N2", type=int, default=2)
    v.add_argument("--audit", choices=("all", "frontier"), default="all")
    v.add_argument("--table", action="store_true")
    tests(v)
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("simulate", parents=[common], help="exponent scan of a scheme")
    s.add_argument("--scheme", choices=("quantize", "timeshare"), default="quantize")
    s.add_argument("--n-list", type=_n_list, default=_n_list("1..6"))
    s.add_argument("--aux", default=None, help="auxiliary coupling JSON (default U=X, V=Y)")
    s.add_argument("--margin", type=float, default=None)
    s.add_argument("--eps1", type=float, default=0.6)
    s.add_argument("--eps2", type=float, default=0.6)
    s.add_argument("--mc", type=int, default=0, help="Monte Carlo samples instead of exact")
    s.set_defaults(func=cmd_simulate)

    o = sub.add_parser("oracle", parents=[common], help="exhaustive search at tiny n")
    o.add_argument("--n", type=int, default=1)
    o.add_argument("--N1", type=int, default=2)
    o.add_argument("--N2", type=int, default=2)
    o.add_argument("--audit", choices=("none", "best", "frontier"), default="best")
    o.add_argument("--sample", type=int, default=0, help="random encoder pairs instead")
    o.add_argument("--code-out", default=None)
    o.add_argument("--frontier-csv", default=None)
    tests(o)
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except BudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except MemoryError:
        print("error: out of memory; reduce n or the alphabet sizes", file=sys.stderr)
        return EXIT_BUDGET
    except (TwoHopError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
