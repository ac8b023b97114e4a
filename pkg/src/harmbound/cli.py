"""Command-line entry point.

Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
unreadable or invalid input files and unwritable outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .ahe import estimate
from .core import ConfigurationError, DataError, Interval, ObservationTable, Policy
from .estimands import Estimand, EstimandKind, ate_spec, build_spec, cvar_ite_bounds, project_feasible
from .learners import REGRESSORS
from .nuisance import ETA_MODES, PROPENSITY_MODES, LearnerConfig
from .oracle import DgpSpec, oracle_agreement, replicate, sample, write_replication_csv

EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _learner_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("learners")
    g.add_argument("--config", type=Path, help="JSON learner config; flags below override it")
    g.add_argument("--propensity", choices=PROPENSITY_MODES)
    g.add_argument("--outcome", choices=REGRESSORS)
    g.add_argument("--effect", choices=REGRESSORS, help="regressor for doubly robust pseudo-outcomes")
    g.add_argument("--eta", choices=ETA_MODES, dest="eta_mode")
    g.add_argument("--folds", type=int, default=5)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="harmbound", description="Sharp bounds on the fraction negatively affected by a treatment.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    est = sub.add_parser("estimate", help="cross-fitted estimate and CI for one bound")
    est.add_argument("--data", type=Path, required=True)
    est.add_argument("--estimand", required=True, choices=[k.value for k in EstimandKind])
    est.add_argument("--pi0", help="constant0 | constant1 | threshold:<column>")
    est.add_argument("--pi1", help="constant0 | constant1 | threshold:<column>")
    est.add_argument("--alpha", type=float, help="CVaR level for cvar-ite")
    est.add_argument("--ci", type=float, default=0.95)
    est.add_argument("--shuffle", action="store_true", help="permute rows (seeded) before fold assignment")
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--out", type=Path)
    _learner_flags(est)

    cv = sub.add_parser("cvar", help="bounds on the CVaR of the individual effect")
    cv.add_argument("--data", type=Path, required=True)
    cv.add_argument("--alpha", type=float, required=True)
    cv.add_argument("--ci", type=float, default=0.95)
    cv.add_argument("--shuffle", action="store_true")
    cv.add_argument("--seed", type=int, default=0)
    cv.add_argument("--out", type=Path)
    _learner_flags(cv)

    sim = sub.add_parser("simulate", help="draw a synthetic data set")
    sim.add_argument("--beta", type=float, required=True)
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", type=Path, required=True)

    rep = sub.add_parser("replicate", help="RMSE and coverage over repeated synthetic draws")
    rep.add_argument("--beta", type=float, default=3.0)
    rep.add_argument("--ns", required=True, help="comma-separated sample sizes")
    rep.add_argument("--reps", type=int, default=100)
    rep.add_argument("--estimands", default="fna-lower,fna-upper")
    rep.add_argument("--ci", type=float, default=0.95)
    rep.add_argument("--mc-draws", type=int, default=1_000_000)
    rep.add_argument("--seed", type=int, default=0)
    rep.add_argument("--out", type=Path)
    _learner_flags(rep)

    orc = sub.add_parser("oracle-bounds", help="closed-form versus brute-force sharp bounds")
    orc.add_argument("--instances", type=int, default=200)
    orc.add_argument("--atoms", type=int, default=5)
    orc.add_argument("--grid", type=float, default=1e-4)
    orc.add_argument("--seed", type=int, default=0)
    orc.add_argument("--out", type=Path)
    return p


def _learner_config(args) -> LearnerConfig:
    base = LearnerConfig.from_file(args.config).to_dict() if args.config else {}
    for key in ("propensity", "outcome", "effect", "eta_mode"):
        val = getattr(args, key)
        if val is not None:
            base[key] = val
    if getattr(args, "seed", None) is not None:
        base["seed"] = args.seed
    return LearnerConfig.from_dict(base)


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
        return
    try:
        out.write_text(text if text.endswith("\n") else text + "\n")
    except OSError as exc:
        raise DataError(f"cannot write {out}: {exc}") from None


def _summary(line: str, out: Path | None) -> None:
    print(line, file=sys.stderr if out is None else sys.stdout)


def _load(path: Path) -> ObservationTable:
    try:
        return ObservationTable.from_csv(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


def _policy(text: str | None) -> Policy | None:
    return None if text is None else Policy.parse(text)


def cvar_report(data, alpha, cfg, k, ci_level, shuffle_seed) -> dict:
    """Estimate both FNA bounds and the ATE, then map them to CVaR bounds."""
    lower = estimate(data, build_spec("fna-lower"), cfg, k, ci_level, shuffle_seed)
    upper = estimate(data, build_spec("fna-upper"), cfg, k, ci_level, shuffle_seed)
    ate = estimate(data, ate_spec(), cfg, k, ci_level, shuffle_seed)
    fna, ate_val = project_feasible(Interval(lower.point, max(lower.point, upper.point)), ate.point)
    bounds = cvar_ite_bounds(fna, ate_val, alpha)
    return {
        "estimand": "cvar-ite",
        "alpha": alpha,
        "interval": bounds.as_list(),
        "fna": fna.as_list(),
        "ate": ate_val,
        "components": {"fna-lower": lower.to_dict(), "fna-upper": upper.to_dict(), "ate": ate.to_dict()},
        "seed": cfg.seed,
    }


def cmd_estimate(args) -> int:
    cfg = _learner_config(args)
    data = _load(args.data)
    shuffle = args.seed if args.shuffle else None
    if args.estimand == EstimandKind.CVAR_ITE.value:
        if args.alpha is None:
            raise ConfigurationError("cvar-ite needs --alpha")
        return _run_cvar(data, args.alpha, cfg, args, shuffle)
    est = Estimand.parse(args.estimand, _policy(args.pi0), _policy(args.pi1), args.alpha)
    spec = build_spec(est)
    report = estimate(data, spec, cfg, args.folds, args.ci, shuffle)
    _emit(report.to_json(), args.out)
    _summary(report.summary(), args.out)
    return 0


def _run_cvar(data, alpha, cfg, args, shuffle) -> int:
    if not 0 < alpha < 1:
        raise ConfigurationError("--alpha must lie in (0, 1)")
    doc = cvar_report(data, alpha, cfg, args.folds, args.ci, shuffle)
    _emit(json.dumps(doc, indent=2), args.out)
    lo, hi = doc["interval"]
    _summary(f"cvar-ite (alpha={alpha:g}): [{lo:.4f}, {hi:.4f}]", args.out)
    return 0


def cmd_cvar(args) -> int:
    cfg = _learner_config(args)
    data = _load(args.data)
    return _run_cvar(data, args.alpha, cfg, args, args.seed if args.shuffle else None)


def cmd_simulate(args) -> int:
    if args.n < 1 or args.beta < 0:
        raise ConfigurationError("need --n >= 1 and --beta >= 0")
    table = sample(DgpSpec(args.beta, seed=args.seed), args.n)
    try:
        table.to_csv(args.out)
    except OSError as exc:
        raise DataError(f"cannot write {args.out}: {exc}") from None
    print(f"wrote {table.n} rows to {args.out}")
    return 0


def cmd_replicate(args) -> int:
    try:
        ns = [int(v) for v in args.ns.split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"bad --ns {args.ns!r}") from None
    estimands = [Estimand.parse(v.strip()) for v in args.estimands.split(",") if v.strip()]
    if not ns or not estimands:
        raise ConfigurationError("--ns and --estimands must be nonempty")
    cfg = _learner_config(args)
    rows = replicate(
        DgpSpec(args.beta, seed=args.seed), estimands, ns, args.reps, cfg,
        k=args.folds, ci_level=args.ci, seed=args.seed, mc_draws=args.mc_draws,
    )
    if args.out is None:
        write_replication_csv(rows, "/dev/stdout")
    else:
        try:
            write_replication_csv(rows, args.out)
        except OSError as exc:
            raise DataError(f"cannot write {args.out}: {exc}") from None
        for r in rows:
            print(f"n={r.n} {r.estimand} {r.estimator}: rmse={r.rmse:.4f} coverage={r.coverage:.2f}")
    return 0


def cmd_oracle_bounds(args) -> int:
    if args.instances < 1 or args.atoms < 1:
        raise ConfigurationError("--instances and --atoms must be positive")
    doc = oracle_agreement(args.instances, args.atoms, args.grid, args.seed)
    _emit(json.dumps(doc, indent=2), args.out)
    _summary(
        f"max discrepancy {doc['max_discrepancy']:.3g} over {doc['instances']} instances (grid {doc['grid']:g})",
        args.out,
    )
    return 0


COMMANDS = {
    "estimate": cmd_estimate,
    "cvar": cmd_cvar,
    "simulate": cmd_simulate,
    "replicate": cmd_replicate,
    "oracle-bounds": cmd_oracle_bounds,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"harmbound: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"harmbound: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
