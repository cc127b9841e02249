"""Command-line front end: weight classification, conditions, norm estimates and scenarios.

Exit codes: 0 ok, 1 verdict mismatch, 2 usage error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import math
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conditions import ConditionRequest, carleson_identity_residual
from .numerics import NonConvergenceError, RadialGrid, dumps_json
from .operator import (
    Constant,
    MuckenhouptTest,
    RandomSteps,
    apply_T,
    estimate_strong_norm,
    estimate_weak_norm,
    strong_upper_factor,
)
from .weights import (
    PowerLog,
    RadialWeight,
    WeightError,
    WeightTriple,
    classify_dcheck,
    classify_dhat,
    classify_regular,
    load_weight,
    make_counterexample_nu,
    make_log_example_triple,
)

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_LEVELS = 40
EPS_VALUES = (0.5, 1.0, 2.0)
DCHECK_K = (2.0, 4.0, 8.0)


@dataclass
class Scenario:
    name: str
    triple: WeightTriple
    p: float
    q: float | None = None
    expected: dict = field(default_factory=dict)
    seed: int = 0
    anchor: str = ""


def _one() -> RadialWeight:
    return PowerLog(0.0, 0.0)


def builtin_scenarios() -> dict[str, Scenario]:
    one = _one()
    constants = WeightTriple(one, one, one)
    log_triple = make_log_example_triple(2.0)
    nu_c = make_counterexample_nu(one, 2.0)
    weird = WeightTriple(PowerLog(0.0, -2.0), one, one)
    out = [
        Scenario(
            "power-basic", constants, 2.0,
            expected={"Dp": "Bounded", "Mp": "Bounded", "Np": "Bounded", "CarlesonRatio": "Bounded",
                      **{f"MpEps({e:g})": "Bounded" for e in EPS_VALUES}},
            anchor="unweighted averaging is bounded on L^2",
        ),
        Scenario(
            "power-p1-log-divergence", constants, 1.0,
            expected={"Dp": "DivergesLog", "CarlesonRatio": "DivergesLog"},
            anchor="the Carleson condition fails logarithmically at p = 1 for constant weights",
        ),
        Scenario(
            "weak-not-strong", log_triple, 2.0,
            expected={"Np": "Bounded", "Mp": "Diverges",
                      **{f"MpEps({e:g})": "Bounded" for e in EPS_VALUES}},
            anchor="log-example triple: weak-type bounded, strong-type unbounded",
        ),
        Scenario(
            "analytic-not-weak", WeightTriple(one, nu_c, nu_c), 2.0,
            expected={"Dp": "Bounded", "CarlesonRatio": "Bounded", "Np": "Infinite", "Mp": "Infinite",
                      **{f"MpEps({e:g})": "Infinite" for e in EPS_VALUES}},
            anchor="counterexample pair: bounded on analytic functions, not weak-type bounded",
        ),
        Scenario(
            "co7-qgtp", constants, 2.0, q=4.0,
            expected={"NecessarySecond": "DivergesPower(2)", "NecessaryFirst": "DivergesPower(2)"},
            anchor="no bounded map from A^p_nu to L^q_nu when q > p",
        ),
        Scenario(
            "weird-conjunction", weird, 2.0,
            expected={"omega.Dhat": "Member", "nu.Dhat": "Member", "nu.Dcheck(K=2)": "Member",
                      "Mp": "Bounded", "Dp": "Bounded", "Np": "Bounded"},
            anchor="for omega doubling and nu in D: strong = analytic-strong and weak",
        ),
    ]
    return {s.name: s for s in out}


def list_builtins() -> list[dict]:
    return [
        {"name": s.name, "p": s.p, "q": s.q, "anchor": s.anchor, "expected": s.expected}
        for s in builtin_scenarios().values()
    ]


# ---------------------------------------------------------------------------
# verdict matching
# ---------------------------------------------------------------------------


_POWER = re.compile(r"DivergesPower\(([-+0-9.eE]+)\)")
POWER_RTOL = 0.1


def verdict_matches(expected: str, verdict) -> bool:
    """``expected`` is a verdict kind, ``Diverges`` (any finite growth) or ``DivergesPower(beta)``."""
    kind = getattr(verdict, "kind", verdict)
    m = _POWER.fullmatch(expected)
    if m:
        beta = getattr(verdict, "exponent", None)
        return kind == "DivergesPower" and beta is not None and abs(beta - float(m.group(1))) <= POWER_RTOL * abs(float(m.group(1)))
    if expected == "Diverges":
        return kind.startswith("Diverges")
    return kind == expected


# ---------------------------------------------------------------------------
# scenario runs
# ---------------------------------------------------------------------------


def classify_all(w: RadialWeight, grid: RadialGrid, ks=DCHECK_K) -> dict:
    out = {"Dhat": classify_dhat(w, grid).as_dict()}
    for K in ks:
        out[f"Dcheck(K={K:g})"] = classify_dcheck(w, K, grid).as_dict()
    out["Regular"] = classify_regular(w, grid).as_dict()
    return out


def _condition_requests(s: Scenario, grid: RadialGrid) -> dict[str, ConditionRequest]:
    reqs = {}
    if s.p > 0:
        reqs["Dp"] = ConditionRequest("Dp", s.triple, s.p, grid)
        reqs["CarlesonRatio"] = ConditionRequest("CarlesonRatio", s.triple, s.p, grid)
    if s.p > 1:
        reqs["Mp"] = ConditionRequest("Mp", s.triple, s.p, grid)
        reqs["Np"] = ConditionRequest("Np", s.triple, s.p, grid)
        for e in EPS_VALUES:
            reqs[f"MpEps({e:g})"] = ConditionRequest("MpEps", s.triple, s.p, grid, eps=e)
    if s.q is not None:
        reqs["NecessaryFirst"] = ConditionRequest("NecessaryFirst", s.triple, s.p, grid, q=s.q)
        reqs["NecessarySecond"] = ConditionRequest("NecessarySecond", s.triple, s.p, grid, q=s.q)
    return reqs


def _weak_rt_grid(levels: int):
    r = 1.0 - 2.0 ** -np.arange(1, levels + 1, 2, dtype=float)
    return [(float(t), float(rr)) for rr in r for t in [0.0, *r[r < rr]]]


def run_scenario(s: Scenario, out_dir: Path | str | None = None, levels: int = DEFAULT_LEVELS) -> tuple[int, dict]:
    """Run every applicable evaluator, compare with expectations and write reports."""
    grid = RadialGrid(levels=levels)
    report: dict = {"schema": 1, "scenario": s.name, "p": s.p, "q": s.q, "seed": s.seed,
                    "triple": s.triple.config(), "anchor": s.anchor}
    verdicts: dict = {}
    cls = {}
    for role in ("omega", "nu", "eta"):
        w = getattr(s.triple, role)
        cls[role] = classify_all(w, RadialGrid(levels=levels, points_per_level=2), ks=(2.0,))
        for test, rep in cls[role].items():
            verdicts[f"{role}.{test}"] = rep["verdict"]
    report["classification"] = cls
    profiles = {}
    for key, req in _condition_requests(s, grid).items():
        profiles[key] = req.run()
        verdicts[key] = profiles[key].verdict
    report["conditions"] = {k: pr.summary() for k, pr in profiles.items()}
    if s.p > 1:
        report["norms"] = _norm_report(s, profiles, levels)
    mismatches = {}
    for key, exp in s.expected.items():
        got = verdicts.get(key)
        if got is None or not verdict_matches(exp, got):
            mismatches[key] = {"expected": exp, "got": str(got)}
    report["verdicts"] = {k: str(v) for k, v in verdicts.items()}
    report["mismatches"] = mismatches
    report["status"] = "ok" if not mismatches else "mismatch"
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{s.name}.json").write_text(dumps_json(report) + "\n")
        for key, pr in profiles.items():
            (out / f"{s.name}_{_slug(key)}.csv").write_text(pr.to_csv())
    return (EXIT_OK if not mismatches else EXIT_MISMATCH), report


def _slug(key: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", key).strip("_")


def _norm_report(s: Scenario, profiles: dict, levels: int) -> dict:
    out = {}
    strong = estimate_strong_norm(s.triple, s.p, [MuckenhouptTest(RadialGrid(min(levels, 30), 4)),
                                                  RandomSteps(s.seed, 10)])
    out["strong"] = strong.as_dict()
    mp = profiles.get("Mp")
    if mp is not None and mp.verdict.bounded:
        bracket = strong_upper_factor(s.p) * mp.verdict.sup_estimate
        out["strong_bracket"] = {"upper": bracket, "within": strong.value <= bracket * (1 + 1e-3)}
    weak = estimate_weak_norm(s.triple, s.p, _weak_rt_grid(min(levels, 24)))
    out["weak"] = weak.as_dict()
    return out


def run_builtins(names, out_dir=None, levels=DEFAULT_LEVELS, workers: int = 1, seed: int = 0):
    cat = builtin_scenarios()
    chosen = [cat[n] for n in names]
    for s in chosen:
        s.seed = seed
    with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
        results = list(ex.map(lambda s: run_scenario(s, out_dir, levels), chosen))
    return results


# ---------------------------------------------------------------------------
# verify: quick identity checks
# ---------------------------------------------------------------------------


def verify(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    weights = [PowerLog(0, 0), PowerLog(1, 0), PowerLog(0.5, -3), PowerLog(-1, -2), PowerLog(2, 2)]
    worst_fixed = 0.0
    for w in weights:
        for _ in range(10):
            z = rng.uniform(0.01, 0.999) * np.exp(1j * rng.uniform(0, 2 * math.pi))
            worst_fixed = max(worst_fixed, abs(apply_T(w, Constant(1.0), z) - 1.0))
    worst_fubini = 0.0
    for _ in range(10):
        w = weights[int(rng.integers(len(weights)))]
        nu = weights[int(rng.integers(len(weights)))]
        p = float(rng.choice([0.5, 1.0, 2.0, 3.0]))
        a = float(rng.choice([0.0, 0.5, 0.9, 1 - 2.0 ** -20]))
        worst_fubini = max(worst_fubini, carleson_identity_residual(w, nu, p, a))
    return {"constants_fixed_point": worst_fixed, "fubini_residual": worst_fubini,
            "ok": worst_fixed < 1e-9 and worst_fubini < 1e-6}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _triple(args) -> WeightTriple:
    omega = load_weight(args.weight)
    nu = load_weight(args.nu) if args.nu else omega
    eta = load_weight(args.eta) if args.eta else nu
    return WeightTriple(omega, nu, eta)


def _add_common(p: argparse.ArgumentParser, triple: bool = True):
    p.add_argument("--weight", required=True, help="inline spec like powerlog:a=1,b=0 or a config path")
    if triple:
        p.add_argument("--nu", help="weight nu (defaults to --weight)")
        p.add_argument("--eta", help="weight eta (defaults to nu)")
    p.add_argument("--levels", type=int, default=DEFAULT_LEVELS)
    p.add_argument("--out", help="output directory for JSON and CSV files")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="avg", description="Radial averaging operator toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("classify", help="doubling classes of a weight")
    _add_common(c, triple=False)

    c = sub.add_parser("condition", help="evaluate a weight condition profile")
    _add_common(c)
    c.add_argument("--which", required=True, choices=["Mp", "Dp", "Np", "MpEps", "CarlesonRatio",
                                                      "NecessaryFirst", "NecessarySecond"])
    c.add_argument("--p", type=float, required=True)
    c.add_argument("--q", type=float)
    c.add_argument("--eps", type=float)

    c = sub.add_parser("norm", help="empirical lower bounds for operator norms")
    _add_common(c)
    c.add_argument("--p", type=float, required=True)
    c.add_argument("--kind", choices=["strong", "weak"], default="strong")
    c.add_argument("--seed", type=int, default=0)

    c = sub.add_parser("verify", help="identity checks on random inputs")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")

    c = sub.add_parser("scenario", help="run built-in scenarios")
    c.add_argument("names", nargs="*", help="scenario names, or 'all'")
    c.add_argument("--list", action="store_true", help="print the catalogue")
    c.add_argument("--levels", type=int, default=DEFAULT_LEVELS)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--workers", type=int, default=1)
    c.add_argument("--out")
    return ap


def _emit(text: str, out: str | None, name: str):
    print(text)
    if out:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        (d / name).write_text(text + "\n")


def _dispatch(args) -> int:
    if args.command == "classify":
        w = load_weight(args.weight)
        rep = {"schema": 1, "weight": w.config(), **classify_all(w, RadialGrid(levels=args.levels))}
        _emit(dumps_json(rep), args.out, "classify.json")
        return EXIT_OK
    if args.command == "condition":
        req = ConditionRequest(args.which, _triple(args), args.p, RadialGrid(levels=args.levels),
                               eps=args.eps, q=args.q)
        prof = req.run()
        _emit(req.report_json(prof), args.out, f"{_slug(args.which)}.json")
        if args.out:
            (Path(args.out) / f"{_slug(args.which)}.csv").write_text(prof.to_csv())
        return EXIT_OK
    if args.command == "norm":
        tr = _triple(args)
        if args.kind == "strong":
            est = estimate_strong_norm(tr, args.p, [MuckenhouptTest(RadialGrid(min(args.levels, 30), 4)),
                                                    RandomSteps(args.seed, 20)])
        else:
            est = estimate_weak_norm(tr, args.p, _weak_rt_grid(min(args.levels, 24)))
        _emit(dumps_json({"schema": 1, **est.as_dict()}), args.out, f"norm_{args.kind}.json")
        return EXIT_OK
    if args.command == "verify":
        rep = verify(args.seed)
        _emit(dumps_json({"schema": 1, **rep}), args.out, "verify.json")
        return EXIT_OK if rep["ok"] else EXIT_MISMATCH
    if args.command == "scenario":
        cat = builtin_scenarios()
        if args.list or not args.names:
            print(dumps_json({"schema": 1, "builtins": list_builtins()}))
            return EXIT_OK
        names = list(cat) if args.names == ["all"] else args.names
        unknown = [n for n in names if n not in cat]
        if unknown:
            print(f"unknown scenario(s): {', '.join(unknown)}", file=sys.stderr)
            return EXIT_USAGE
        status = EXIT_OK
        for code, rep in run_builtins(names, args.out, args.levels, args.workers, args.seed):
            line = f"{rep['scenario']}: {rep['status']}"
            if rep["mismatches"]:
                line += " " + dumps_json(rep["mismatches"]).replace("\n", " ")
            print(line)
            status = max(status, code)
        return status
    return EXIT_USAGE


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    try:
        return _dispatch(args)
    except (NonConvergenceError, FloatingPointError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (WeightError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
