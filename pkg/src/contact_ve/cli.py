"""``contact-ve`` command line: simulate, fit, correct, bias-surface, reproduce."""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import __version__, bias, cox, reproduce
from .output import now, write_csv, write_manifest
from .replicates import default_threads, run_replicates, summarize
from .simulate import SurvivalDataset, TrialConfig, simulate_trial
from .window import WindowDistribution

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_TOLERANCE = 4

SIMULATE_COLUMNS = ("replicate", "theta_hat", "se", "ve_star_hat", "v_hat", "converged", "se_v", "sar_ve", "error")


class ConfigError(Exception):
    pass


def parse_grid(text: str) -> list[float]:
    """``0.05,0.1,0.15`` or ``start:stop:step`` (stop inclusive)."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"range must be start:stop:step, got {text!r}")
        start, stop, step = (float(x) for x in parts)
        if step <= 0 or stop < start:
            raise ConfigError(f"bad range {text!r}")
        n = int(math.floor((stop - start) / step + 1e-9))
        return [round(start + i * step, 12) for i in range(n + 1)]
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad grid {text!r}: {exc}") from None


def parse_window(text: str) -> WindowDistribution:
    try:
        return WindowDistribution.parse(text)
    except (ValueError, OSError) as exc:
        raise ConfigError(str(exc)) from None


def _params(p, window, R) -> bias.BiasParams:
    try:
        return bias.BiasParams(p=p, window=window, R=R)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------- simulate

SIM_FLAGS = {
    "n_per_arm": ("--n-per-arm", int, 5000),
    "m": ("--m", float, 0.01),
    "p": ("--p", float, 0.1),
    "v": ("--v", float, 0.6),
    "horizon": ("--horizon", int, 180),
    "seed": ("--seed", int, 42),
    "replicates": ("--replicates", int, 500),
}


def _load_config_file(path) -> dict:
    doc = json.loads(Path(path).read_text())
    # accept a run manifest in place of a bare config
    if "resolved_config" in doc:
        doc = doc["resolved_config"]
    return doc


def resolve_simulate_config(args) -> tuple[TrialConfig, dict]:
    base = {}
    if args.config:
        base = _load_config_file(args.config)
    extras = {k: base.pop(k) for k in ("r_trunc", "tie_method") if k in base}
    for name, (_, _, default) in SIM_FLAGS.items():
        given = getattr(args, name)
        if given is not None:
            base[name] = given
        base.setdefault(name, default)
    if args.window is not None:
        base["window"] = parse_window(args.window)
    base.setdefault("window", WindowDistribution.geometric(1.0 / 3.0))
    if args.entry_while_exposed is not None:
        base["entry_while_exposed"] = args.entry_while_exposed
    r_trunc = args.r_trunc if args.r_trunc is not None else extras.get("r_trunc", bias.DEFAULT_R)
    tie_method = args.tie_method or extras.get("tie_method", "efron")
    try:
        config = TrialConfig.from_dict(base, base_dir=Path(args.config).parent if args.config else None)
    except (ValueError, TypeError, KeyError, OSError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    return config, {"r_trunc": r_trunc, "tie_method": tie_method}


def cmd_simulate(args) -> int:
    started = now()
    config, extra = resolve_simulate_config(args)
    params = _params(config.p, config.window, extra["r_trunc"])
    threads = args.threads or default_threads()
    results = run_replicates(config, params, extra["tie_method"], threads)
    if args.save_datasets:
        out_dir = Path(args.save_datasets)
        out_dir.mkdir(parents=True, exist_ok=True)
        for i in range(config.replicates):
            simulate_trial(config, i).to_csv(out_dir / f"replicate_{i:05d}.csv")
    summary = summarize(results)
    rows = [[getattr(r, c) for c in SIMULATE_COLUMNS] for r in results]
    # summary rows; the converged column carries the number of usable replicates
    for stat in ("mean", "sd"):
        stats = [summary[f"{stat}_{c}"] for c in SIMULATE_COLUMNS[1:5]]
        rows.append([stat, *stats, summary["n_ok"], summary[f"{stat}_se_v"], summary[f"{stat}_sar_ve"], ""])
    write_csv(args.out, SIMULATE_COLUMNS, rows)
    resolved = config.to_dict() | extra
    write_manifest(args.out, "simulate", resolved, config.seed, started, {"summary": summary})
    print(json.dumps(summary))
    failed = [r for r in results if r.error]
    for r in failed:
        print(f"replicate {r.replicate}: {r.error}", file=sys.stderr)
    return EXIT_OK


# --------------------------------------------------------------------- fit

def cmd_fit(args) -> int:
    for path in args.datasets:
        try:
            data = SurvivalDataset.from_csv(path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        fit = cox.fit(data, tie_method=args.tie_method)
        print(json.dumps(fit.to_dict()))
    return EXIT_OK


# ----------------------------------------------------------------- correct

def resolve_cox_estimate(args) -> tuple[float, float]:
    """Return (theta_hat, se) from the correct-command flags."""
    if args.theta_hat is not None and args.ve_star is not None:
        raise ConfigError("give either --theta-hat or --ve-star, not both")
    if args.theta_hat is not None:
        theta = args.theta_hat
    elif args.ve_star is not None:
        if args.ve_star >= 1:
            raise ConfigError("--ve-star must be < 1")
        theta = math.log(1.0 - args.ve_star)
    else:
        raise ConfigError("need --ve-star or --theta-hat")
    has_ci = args.ci_lower is not None or args.ci_upper is not None
    if has_ci and args.se is not None:
        raise ConfigError("give either --se or --ci-lower/--ci-upper, not both")
    if has_ci:
        if args.ci_lower is None or args.ci_upper is None:
            raise ConfigError("--ci-lower and --ci-upper go together")
        ve_star = 1.0 - math.exp(theta)
        if not args.ci_lower <= ve_star <= args.ci_upper:
            raise ConfigError(f"CI ({args.ci_lower}, {args.ci_upper}) does not contain the estimate {ve_star}")
        try:
            se = bias.se_from_ci(args.ci_lower, args.ci_upper, args.level)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    elif args.se is not None:
        if args.se < 0:
            raise ConfigError("--se must be >= 0")
        se = args.se
    else:
        raise ConfigError("need --se or --ci-lower/--ci-upper")
    return theta, se


def cmd_correct(args) -> int:
    started = now()
    theta, se = resolve_cox_estimate(args)
    window = parse_window(args.window)
    p_values = parse_grid(args.p_grid) if args.p_grid else [args.p]
    results = []
    for p in p_values:
        params = _params(p, window, args.r_trunc)
        res = bias.correct_estimate(params, theta, se, args.level)
        results.append(res.to_dict())
        print(json.dumps(res.to_dict()))
    if args.out:
        Path(args.out).write_text(json.dumps(results, indent=2) + "\n")
        resolved = {"theta_hat": theta, "se": se, "p": p_values, "window": window.to_dict(), "r_trunc": args.r_trunc, "level": args.level}
        write_manifest(args.out, "correct", resolved, None, started)
    return EXIT_OK


# ------------------------------------------------------------ bias-surface

SURFACE_COLUMNS = ("p", "v", "v_star", "ratio", "v_star_over_v")


def cmd_bias_surface(args) -> int:
    started = now()
    window = parse_window(args.window)
    p_values = parse_grid(args.p_grid)
    v_values = parse_grid(args.v_grid)
    if any(not 0 < v < 1 for v in v_values):
        raise ConfigError("v grid must lie in (0, 1)")
    for p in p_values:
        _params(p, window, args.r_trunc)
    rows = reproduce.surface(p_values, v_values, window, args.r_trunc)
    write_csv(args.out, SURFACE_COLUMNS, ([r[c] for c in SURFACE_COLUMNS] for r in rows))
    resolved = {"p": p_values, "v": args.v_grid, "window": window.to_dict(), "r_trunc": args.r_trunc}
    write_manifest(args.out, "bias-surface", resolved, None, started)
    return EXIT_OK


# --------------------------------------------------------------- reproduce

TABLE1_COLUMNS = ("p", "v_hat_pct", "ci_lower_pct", "ci_upper_pct", "expected_v_hat_pct",
                  "expected_ci_lower_pct", "expected_ci_upper_pct", "max_abs_diff_pct")
FIG4_COLUMNS = ("v", "p", "replicates", "n_ok", "mean_ve_star_hat", "sd_ve_star_hat", "mean_v_hat",
                "sd_v_hat", "mean_se_v", "mean_sar_ve", "predicted_v_star")


def cmd_reproduce(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    replicates = args.replicates or (100 if args.fast else 500)
    tol = reproduce.FIG4_TOL_FAST if args.fast else reproduce.FIG4_TOL
    threads = args.threads or default_threads()
    checks = []

    started = now()
    rows = reproduce.table1()
    write_csv(out / "table1.csv", TABLE1_COLUMNS, ([r[c] for c in TABLE1_COLUMNS] for r in rows))
    write_manifest(out / "table1.csv", "reproduce", {"artifact": "table1", "window": reproduce.WINDOW.to_dict(), "r_trunc": reproduce.R_TRUNC}, args.seed, started)
    checks += reproduce.check_table1(rows)

    started = now()
    rows = reproduce.surface()
    write_csv(out / "fig7_surface.csv", SURFACE_COLUMNS, ([r[c] for c in SURFACE_COLUMNS] for r in rows))
    write_manifest(out / "fig7_surface.csv", "reproduce", {"artifact": "fig7_surface", "p": list(reproduce.FIG7_P), "v": "0.05:0.95:0.005", "window": reproduce.WINDOW.to_dict(), "r_trunc": reproduce.R_TRUNC}, args.seed, started)
    checks += reproduce.check_surface(rows)

    if not args.skip_simulation:
        started = now()
        rows = reproduce.fig4_summary(replicates, args.seed, threads)
        write_csv(out / "fig4_summary.csv", FIG4_COLUMNS, ([r[c] for c in FIG4_COLUMNS] for r in rows))
        resolved = {"artifact": "fig4_summary", "v": list(reproduce.FIG4_V), "p": list(reproduce.FIG4_P),
                    "n_per_arm": reproduce.FIG4_N_PER_ARM, "m": reproduce.FIG4_M, "horizon": reproduce.FIG4_HORIZON,
                    "window": reproduce.WINDOW.to_dict(), "r_trunc": reproduce.R_TRUNC, "replicates": replicates,
                    "tolerance": tol, "tie_method": "efron"}
        write_manifest(out / "fig4_summary.csv", "reproduce", resolved, args.seed, started)
        checks += reproduce.check_fig4(rows, tol)

    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_TOLERANCE if failed else EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="contact-ve", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate trials, fit Cox, correct each replicate")
    for name, (flag, typ, default) in SIM_FLAGS.items():
        s.add_argument(flag, dest=name, type=typ, default=None, help=f"default {default}")
    s.add_argument("--window", default=None, help="geometric:<q> or empirical:<pmf.csv> (default geometric:1/3)")
    s.add_argument("--r-trunc", type=int, default=None, help=f"truncation horizon R (default {bias.DEFAULT_R})")
    s.add_argument("--tie-method", choices=("efron", "breslow"), default=None)
    s.add_argument("--entry-while-exposed", dest="entry_while_exposed", action=argparse.BooleanOptionalAction, default=None)
    s.add_argument("--config", help="JSON config or run manifest; flags given explicitly take precedence")
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("--save-datasets", metavar="DIR", help="also write each replicate's dataset CSV")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit the Cox model to dataset CSVs; one JSON line per file")
    f.add_argument("datasets", nargs="+")
    f.add_argument("--tie-method", choices=("efron", "breslow"), default="efron")
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("correct", help="correct a reported Cox-based VE and its CI")
    c.add_argument("--ve-star", type=float)
    c.add_argument("--theta-hat", type=float)
    c.add_argument("--se", type=float)
    c.add_argument("--ci-lower", type=float)
    c.add_argument("--ci-upper", type=float)
    c.add_argument("--p", type=float, default=0.1)
    c.add_argument("--p-grid")
    c.add_argument("--window", default="geometric:0.3333333333333333")
    c.add_argument("--r-trunc", type=int, default=bias.DEFAULT_R)
    c.add_argument("--level", type=float, default=0.95)
    c.add_argument("--out", help="also write the results as a JSON array with a manifest")
    c.set_defaults(func=cmd_correct)

    b = sub.add_parser("bias-surface", help="tabulate v* and v*/v over a (p, v) grid")
    b.add_argument("--p-grid", default="0.05,0.1,0.15")
    b.add_argument("--v-grid", default="0.05:0.95:0.005")
    b.add_argument("--window", default="geometric:0.3333333333333333")
    b.add_argument("--r-trunc", type=int, default=bias.DEFAULT_R)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bias_surface)

    r = sub.add_parser("reproduce", help="regenerate and check the reference tables and surfaces")
    r.add_argument("--out-dir", default="reproduction")
    r.add_argument("--seed", type=int, default=2025)
    r.add_argument("--fast", action="store_true", help="100 replicates, tolerance 0.03")
    r.add_argument("--replicates", type=int, default=None)
    r.add_argument("--threads", type=int, default=None)
    r.add_argument("--skip-simulation", action="store_true", help="analytic artifacts only")
    r.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (cox.CoxFitError, bias.BiasModelError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
