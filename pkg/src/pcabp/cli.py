"""
Command-line interface. Every subcommand reads a model file, writes CSV (or
RLE) files under ``--out`` and is reproducible from its flags and seed.
"""

import argparse
import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from . import config
from .analysis import PROXIES, duality_check, estimate_pc, estimate_qc, fit_decay, sweep
from .bp_engine import bernoulli_initial, run_bp
from .correspondence import (
    bp_to_ca,
    ca_to_bp,
    make_pair,
    verify_equivalence,
)
from .errors import DegenerateFitError, DomainError, UnknownClassificationError, WorkbenchError
from .geometry import (
    classify,
    half_space_normal,
    is_eroder_geometric_1d,
    is_eroder_simulation,
    stable_interior_check,
    stable_set_2d,
    unstable_set_2d,
)
from .model_io import Model, load_model, save_model, write_csv, write_trajectory
from .pca_engine import Boundary, Box, Configuration, simulate
from .sharpness_audit import (
    EXHAUSTIVE,
    MONTE_CARLO,
    osss_inequality_check,
    pivotal_difference_check,
    russo_check,
)
from .rates import RatesMeasure, Weight, dirac
from .upset_algebra import Neighborhood, UpFamily, empty_family

logger = logging.getLogger(__name__)
console_logger = config.console_logger

# Exit status for workbench errors (bad model, capacity, domain)
EXIT_ERROR = 2
# Exit status when a check ran but failed
EXIT_FAILED = 1


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _site_text(site: Sequence[int]) -> str:
    return " ".join(str(v) for v in site)


def _meta(args: argparse.Namespace, model: Model, **extra) -> Dict[str, object]:
    meta = {"command": args.command, "model_sha256": model.digest, "seed": args.seed}
    meta.update(extra)
    return meta


def _ca_rule(measure: RatesMeasure, command: str) -> Tuple[Neighborhood, UpFamily, Weight]:
    """(nbhd, U, p) for a deterministic CA U run with death rate 1 - p."""
    alive = [f for f in measure.families if not f.is_empty]
    if len(alive) > 1:
        raise DomainError(f"{command} needs a deterministic CA, optionally with death")
    nbhd = measure.neighborhood
    U = alive[0] if alive else empty_family(nbhd)
    return nbhd, U, 1 - measure.empty_weight


# === Subcommands ===

def cmd_simulate(args: argparse.Namespace, model: Model) -> int:
    out = Path(args.out)
    if model.family is not None:
        X = model.family
        window = Box.centered(X.dimension, args.width // 2)
        initial = bernoulli_initial(window, args.q, args.seed)
        history = run_bp(initial, X, args.T)
        rows = [(t, int(history[t].sum()), float(history[t].mean())) for t in range(args.T + 1)]
        path = write_csv(out / "bp_run.csv", "bp_run", ["t", "infected", "fraction"], rows,
                         _meta(args, model, q=args.q, width=args.width))
        console_logger.info(f"💾 BP run written to {path}")
        return 0

    measure = model.require_measure()
    nbhd = measure.neighborhood
    window = Box.centered(nbhd.d, args.width // 2)
    boundary = Boundary(args.boundary)
    if args.initial == "ones":
        initial = Configuration.filled(nbhd, window, True, boundary)
    elif args.initial == "zeros":
        initial = Configuration.filled(nbhd, window, False, boundary)
    else:
        initial = Configuration.from_sites(nbhd, window, [(0,) * nbhd.d + (-1,)], boundary)
    trajectory = simulate(measure, initial, args.T, args.seed)
    rle = write_trajectory(out / "trajectory.rle", trajectory, model)
    rows = [(t, float(trajectory.states[t].mean())) for t in range(args.T + 1)]
    path = write_csv(out / "density.csv", "density", ["t", "density"], rows,
                     _meta(args, model, width=args.width, boundary=args.boundary, initial=args.initial))
    console_logger.info(f"💾 Trajectory written to {rle}, densities to {path}")
    return 0


def cmd_sweep(args: argparse.Namespace, model: Model) -> int:
    target = model.family if model.family is not None else model.curve()
    result = sweep(target, args.grid, args.horizons, args.replicas, args.seed,
                   exhaustive=args.exhaustive)
    out = Path(args.out)
    rows = [(r.parameter, r.horizon, r.estimate, r.stderr, r.replicas, r.seed) for r in result.rows]
    path = write_csv(out / "sweep.csv", f"sweep.{result.kind}",
                     ["parameter", "horizon", "estimate", "stderr", "replicas", "seed"], rows,
                     _meta(args, model, kind=result.kind, exhaustive=args.exhaustive))
    console_logger.info(f"💾 {len(rows)} sweep rows written to {path}")
    if args.fit:
        fits = []
        for parameter in sorted({r.parameter for r in result.rows}):
            try:
                fit = fit_decay(result.curve(parameter), t_min=args.fit_from)
            except DegenerateFitError as e:
                logger.warning(f"no fit at {parameter}: {e}")
                fits.append((parameter, "", "", "", "", "", str(e)))
                continue
            fits.append((parameter, fit.c, fit.C, fit.t_min, fit.t_max, fit.r_squared,
                         "" if fit.decaying else "not decaying"))
        write_csv(out / "decay.csv", "decay",
                  ["parameter", "c", "C", "t_min", "t_max", "r_squared", "note"], fits,
                  _meta(args, model))
    return 0


def _write_bracket(args: argparse.Namespace, model: Model, name: str, estimate) -> Path:
    out = Path(args.out)
    write_csv(out / f"{name}_evaluations.csv", f"{name}.evaluations",
              ["parameter", "proxy", "stderr"], estimate.evaluations, _meta(args, model))
    row = (estimate.lower, estimate.upper, estimate.lower_proxy, estimate.upper_proxy,
           estimate.horizon, estimate.threshold, estimate.replicas, estimate.note)
    return write_csv(out / f"{name}.csv", name,
                     ["lower", "upper", "lower_proxy", "upper_proxy", "horizon", "threshold",
                      "replicas", "note"], [row], _meta(args, model, proxy=estimate.proxy))


def cmd_estimate_pc(args: argparse.Namespace, model: Model) -> int:
    estimate = estimate_pc(model.curve(), args.T, args.width, args.replicas, args.tolerance,
                           args.seed, args.threshold, proxy=args.proxy)
    path = _write_bracket(args, model, "pc", estimate)
    console_logger.info(f"💾 p_c bracket written to {path}")
    return 0


def cmd_estimate_qc(args: argparse.Namespace, model: Model) -> int:
    rule = None
    if model.family is not None:
        X = model.family
    else:
        rule = _ca_rule(model.require_measure(), "estimate-qc")
        X = ca_to_bp(rule[0], rule[1])
    estimate = estimate_qc(X, args.T, None, args.replicas, args.tolerance, args.seed, args.threshold,
                           proxy=args.proxy)
    path = _write_bracket(args, model, "qc", estimate)
    console_logger.info(f"💾 q_c bracket written to {path}")
    if args.duality and rule is not None:
        report = duality_check(rule[0], rule[1], args.T, args.width, args.replicas,
                               args.tolerance, args.seed, proxy=args.proxy)
        return 0 if report.passed else EXIT_FAILED
    return 0


def cmd_correspond(args: argparse.Namespace, model: Model) -> int:
    out = Path(args.out)
    if model.family is not None:
        nbhd, U = bp_to_ca(model.family)
        path = save_model(Model(f"{model.name}_ca", measure=dirac(U)), out / "ca.yaml")
        console_logger.info(f"🔁 {model.family} -> CA on {nbhd}: {U}; written to {path}")
        return 0
    measure = model.require_measure()
    nbhd = measure.neighborhood
    duals = [ca_to_bp(nbhd, f) for f in measure.families]
    rows = [(str(w), str(f), str(X)) for (f, w), X in zip(measure.atoms, duals)]
    write_csv(out / "correspond.csv", "correspond", ["weight", "up_family", "update_family"], rows,
              _meta(args, model))
    alive = [X for f, X in zip(measure.families, duals) if not f.is_empty]
    if len(alive) == 1:
        path = save_model(Model(f"{model.name}_bp", family=alive[0]), out / "dual.yaml")
        console_logger.info(f"🔁 dual update family {alive[0]} written to {path}")
    return 0


def cmd_classify(args: argparse.Namespace, model: Model) -> int:
    rows = []
    if model.family is not None:
        X = model.family
    else:
        nbhd, U, _ = _ca_rule(model.require_measure(), "classify")
        X = ca_to_bp(nbhd, U)
        verdicts = is_eroder_simulation(nbhd, U, args.T, [[(0,) * nbhd.d]])
        rows.append(("eroder_simulation", verdicts[0].status))
        if nbhd.d == 1:
            try:
                rows.append(("eroder_geometric", is_eroder_geometric_1d(nbhd, U)))
            except UnknownClassificationError as e:
                rows.append(("eroder_geometric", f"Unknown: {e}"))
    rows.append(("update_family", str(X)))
    try:
        verdict = classify(X, steps=args.steps)
        rows.append(("classification", str(verdict)))
    except UnknownClassificationError as e:
        rows.append(("classification", f"Unknown: {e}"))
    if X.dimension == 2:
        rows.append(("unstable_arcs", str(unstable_set_2d(X))))
        rows.append(("stable_arcs", str(stable_set_2d(X))))
        report = stable_interior_check(X)
        rows.append(("stable_interior_closure", report.closure_of_interior))
        if report.opposite_pair:
            rows.append(("opposite_stable_pair", " / ".join(_site_text(u) for u in report.opposite_pair)))
    certificate = half_space_normal(X)
    if certificate.contained:
        rows.append(("half_space_normal", _site_text(certificate.normal)))
    else:
        witness = "; ".join(f"{w}*({_site_text(s)})" for s, w in certificate.witness.items())
        rows.append(("half_space_normal", f"none, zero combination {witness}"))
    path = write_csv(Path(args.out) / "classify.csv", "classify", ["key", "value"], rows,
                     _meta(args, model))
    for key, value in rows:
        console_logger.info(f"🧭 {key}: {value}")
    logger.debug(f"classification written to {path}")
    return 0


def cmd_audit(args: argparse.Namespace, model: Model) -> int:
    measure = model.require_measure()
    at_p = model.curve().at(args.p)
    out = Path(args.out)
    russo = russo_check(measure, args.n, args.p, args.mode, args.replicas, args.seed)
    variance = osss_inequality_check(at_p, args.n, args.mode, args.replicas, args.seed)
    rows = [("russo_lhs", float(russo.lhs)), ("russo_rhs", float(russo.rhs)),
            ("russo_pivotal_sum", float(russo.pivotal_sum)), ("russo_gap", russo.gap),
            ("theta", float(variance.theta)), ("variance", float(variance.variance)),
            ("variance_bound", float(variance.bound)),
            ("revealment_bound", float(variance.revealment_bound)),
            ("variance_passed", variance.passed), ("revealment_passed", variance.revealment_passed)]
    passed = russo.passed and variance.passed and variance.revealment_passed
    if args.mode == EXHAUSTIVE:
        pairs = pivotal_difference_check(at_p, args.n)
        rows += [("pivotal_pairs", pairs.pairs), ("pivotal_violations", pairs.violations),
                 ("monotone_violations", pairs.monotone_violations)]
        passed = passed and pairs.passed
    meta = _meta(args, model, n=args.n, p=args.p, mode=args.mode)
    write_csv(out / "audit.csv", "audit", ["quantity", "value"], rows, meta)
    sites = [(_site_text(site), float(d), float(variance.pivotal[site]))
             for site, d in variance.delta.items()]
    write_csv(out / "revealment.csv", "revealment", ["site", "delta", "pivotal"], sites, meta)
    for key, value in rows:
        console_logger.info(f"   {key}: {value}")
    console_logger.info(f"{'✅' if passed else '❌'} audit n={args.n} p={args.p} ({args.mode})")
    return 0 if passed else EXIT_FAILED


def cmd_verify(args: argparse.Namespace, model: Model) -> int:
    nbhd, U, p = _ca_rule(model.require_measure(), "verify")
    pair = make_pair(nbhd, U, p)
    window = Box.centered(nbhd.d, args.width // 2)
    report = verify_equivalence(pair, window, args.T, args.seed, samples=args.samples,
                                exhaustive=args.exhaustive)
    row = (report.samples, report.cells, report.bound_cells, len(report.mismatches),
           report.summary())
    write_csv(Path(args.out) / "verify.csv", "verify",
              ["samples", "cells", "bound_cells", "mismatches", "summary"], [row],
              _meta(args, model, T=args.T, width=args.width, exhaustive=args.exhaustive))
    console_logger.info(f"{'✅' if report.passed else '❌'} {report.summary()}")
    return 0 if report.passed else EXIT_FAILED


COMMANDS: Dict[str, Callable[[argparse.Namespace, Model], int]] = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "estimate-pc": cmd_estimate_pc,
    "estimate-qc": cmd_estimate_qc,
    "correspond": cmd_correspond,
    "classify": cmd_classify,
    "audit": cmd_audit,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    horizon = int(config.get_setting('default_horizon', 256))
    width = int(config.get_setting('default_width', 512))
    replicas = int(config.get_setting('default_replicas', 10000))

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", required=True, help="Model file (YAML)")
    common.add_argument("--seed", type=int, default=0, help="Random seed (default: 0)")
    common.add_argument("--out", default=".", help="Output directory (default: current directory)")
    common.add_argument("--verbose", action="store_true", default=False,
                        help="Log debug messages to the console")
    common.add_argument("--config", default=None, help="Settings file overriding the defaults")

    parser = argparse.ArgumentParser(prog="pcabp", description="Attractive PCA and bootstrap percolation workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="Run one trajectory")
    p.add_argument("--T", type=int, default=64, help="Number of updates (default: 64)")
    p.add_argument("--width", type=int, default=64, help="Window width (default: 64)")
    p.add_argument("--initial", choices=["ones", "zeros", "origin"], default="ones")
    p.add_argument("--boundary", choices=[b.value for b in Boundary], default=Boundary.ALL_ZERO.value)
    p.add_argument("--q", type=float, default=0.1, help="Initial infection density for BP models")

    p = sub.add_parser("sweep", parents=[common], help="theta_n(p) or healthy-origin curves on a grid")
    p.add_argument("--grid", type=_floats, required=True, help="Comma-separated parameters")
    p.add_argument("--horizons", type=_ints, required=True, help="Comma-separated horizons")
    p.add_argument("--replicas", type=int, default=replicas)
    p.add_argument("--exhaustive", action="store_true", default=False)
    p.add_argument("--fit", action="store_true", default=False, help="Fit exponential decay per parameter")
    p.add_argument("--fit-from", type=int, default=1,
                   help="First horizon used by the decay fit (default: 1)")

    for name, help_text in (("estimate-pc", "Bracket p_c on the death curve"),
                            ("estimate-qc", "Bracket q_c of an update family")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--T", type=int, default=horizon, help=f"Proxy horizon (default: {horizon})")
        p.add_argument("--width", type=int, default=width, help=f"Window width (default: {width})")
        p.add_argument("--replicas", type=int, default=replicas)
        p.add_argument("--tolerance", type=float, default=0.005)
        p.add_argument("--threshold", type=float, default=None)
        p.add_argument("--proxy", choices=PROXIES, default=None,
                       help="Finite-size proxy (default: critical_proxy setting)")
    p.add_argument("--duality", action="store_true", default=False,
                   help="Also compare with 1 - p_c of the CA model")

    sub.add_parser("correspond", parents=[common], help="Dual BP family (or CA) of a model")

    p = sub.add_parser("classify", parents=[common], help="Direction geometry of an update family")
    p.add_argument("--T", type=int, default=64, help="Eroder simulation horizon (default: 64)")
    p.add_argument("--steps", type=int, default=20, help="Seed growth steps for D >= 3 (default: 20)")

    p = sub.add_parser("audit", parents=[common], help="Pivotal-sum and variance inequality checks")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--p", type=str, default="1/2", help="Parameter on the death curve (default: 1/2)")
    p.add_argument("--mode", choices=[EXHAUSTIVE, MONTE_CARLO], default=EXHAUSTIVE)
    p.add_argument("--replicas", type=int, default=replicas)

    p = sub.add_parser("verify", parents=[common], help="PCA against the closure of its dual BP")
    p.add_argument("--T", type=int, default=2)
    p.add_argument("--width", type=int, default=7)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--exhaustive", action="store_true", default=False)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point for the command line"""
    parser = build_parser()
    args = parser.parse_args(argv)
    config.configure_logging(args.verbose)
    if args.config:
        config.reload_settings(args.config)

    console_logger.info(f"🧮 pcabp {args.command}")
    console_logger.info(f"   📄 Model: {args.model}")
    console_logger.info(f"   🎲 Seed: {args.seed}")
    console_logger.info(f"   📝 Log: {config.LOG_FILE}")
    try:
        model = load_model(args.model)
        status = COMMANDS[args.command](args, model)
    except WorkbenchError as e:
        logger.error(f"{args.command} failed: {e}")
        console_logger.error(f"❌ {type(e).__name__}: {e}")
        return EXIT_ERROR
    return status
