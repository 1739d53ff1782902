"""``winprob`` command line: analyze, truth, simulate, power.

Exit codes: 0 success, 1 usage or validation error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import warnings
from dataclasses import asdict, replace

import numpy as np

from . import __version__, bayes
from . import simulation as sim
from .comparators import fwr_test, logrank_test, pairwise_tally, rmst_difference, tied_event_pairs
from .estimands import TIE_POLICIES, net_benefit, win_odds
from .files import (PRESETS, ConfigError, DataError, StudyConfig, atomic_write, load_config,
                    preset, read_dataset, write_dataset)
from .quadrature import QuadratureError
from .survival import ArmData, km_estimate

logger = logging.getLogger("winprob")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
REPORT_SCHEMA = "winprob.report/1"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _window(text):
    try:
        lo, hi = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo,hi but got {text!r}")
    if not 0 < lo < hi:
        raise argparse.ArgumentTypeError("window needs 0 < lo < hi")
    return (lo, hi)


def _methods(text):
    ms = tuple(m.strip().lower() for m in text.split(",") if m.strip())
    bad = set(ms) - set(sim.METHODS)
    if bad or not ms:
        raise argparse.ArgumentTypeError(f"methods must be a subset of {','.join(sim.METHODS)}")
    return ms


def _mcmc_args(p, iters_default):
    p.add_argument("--chains", type=int, default=None, help="MCMC chains (default 3)")
    p.add_argument("--iters", type=int, default=None,
                   help=f"iterations per chain including burn-in (default {iters_default})")
    p.add_argument("--burnin", type=int, default=None, help="burn-in per chain (default half)")


def _mcmc_config(args, base: bayes.McmcConfig, seed, cfg=None):
    chains = args.chains or (cfg.chains if cfg and cfg.chains else base.chains)
    iters = args.iters or (cfg.iterations if cfg and cfg.iterations else base.iterations)
    if args.burnin is not None:
        burn = args.burnin
    elif cfg and cfg.burn_in is not None:
        burn = cfg.burn_in
    elif args.iters or (cfg and cfg.iterations):
        burn = None
    else:
        burn = base.burn_in
    try:
        return bayes.McmcConfig(chains=chains, iterations=iters, burn_in=burn, seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc))


def build_parser():
    p = _Parser(prog="winprob", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="Bayesian WP/RWP analysis plus comparators for one dataset")
    a.add_argument("input", help="CSV with columns time,status,arm")
    a.add_argument("--tau", type=float, default=None,
                   help="restriction time (default: last observed event time)")
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--seed", type=int, default=bayes.McmcConfig.seed)
    a.add_argument("--methods", type=_methods, default=sim.METHODS)
    a.add_argument("--out", help="write the JSON report here")
    a.add_argument("--format", choices=("text", "json"), default="text", help="stdout format")
    a.add_argument("--ties", choices=TIE_POLICIES, default="error",
                   help="exact cross-arm event-time ties: fail (error) or score them 0.5 (half)")
    _mcmc_args(a, bayes.McmcConfig.iterations)

    t = sub.add_parser("truth", help="true estimand table for a scenario set")
    _scenario_source(t)
    t.add_argument("--tau", type=float, default=12.0)
    t.add_argument("--window", type=_window, default=sim.WINDOW_SHORT)
    t.add_argument("--out", help="CSV path (default stdout)")

    s = sub.add_parser("simulate", help="draw one dataset from a scenario")
    _scenario_source(s)
    s.add_argument("--scenario", help="section name when the config holds several")
    s.add_argument("--n", type=int, required=True, help="subjects per arm")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--window", type=_window, default=None,
                   help="censoring window lo,hi (overrides the config)")
    s.add_argument("--no-censoring", action="store_true")
    s.add_argument("--out", required=True)

    w = sub.add_parser("power", help="Monte Carlo operating characteristics")
    _scenario_source(w)
    w.add_argument("--sizes", help="total sample sizes, comma separated")
    w.add_argument("--replicates", type=int, default=None)
    w.add_argument("--seed", type=int, default=None)
    w.add_argument("--tau", type=float, default=None,
                   help="restriction time (default: lower end of the censoring window)")
    w.add_argument("--alpha", type=float, default=None)
    w.add_argument("--methods", type=_methods, default=None)
    w.add_argument("--window", type=_window, default=None)
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("--out", required=True, help="output directory for metrics.csv and power.csv")
    _mcmc_args(w, bayes.DESK_MCMC.iterations)
    return p


def _scenario_source(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--config", help="INI scenario/study config")
    g.add_argument("--preset", choices=PRESETS, help="built-in scenario set")
    g.add_argument("--family", choices=sim.FAMILIES, help="single scenario by family")
    p.add_argument("--level", type=int, choices=(0, 1, 2),
                   help="effect level for --family (0 = largest)")
    p.add_argument("--hr", type=float)
    p.add_argument("--psi", type=float)
    p.add_argument("--zeta", type=float)


def _load_scenarios(args, window=None):
    if args.config:
        cfg = load_config(args.config)
        if window is not None:
            cfg.scenarios = [s.with_window(window) for s in cfg.scenarios]
        return cfg
    if args.family:
        ramp = args.psi if args.psi is not None else args.zeta
        try:
            spec = sim.scenario(args.family, args.level, hr=args.hr, ramp=ramp,
                                window=window or sim.WINDOW_SHORT)
        except ValueError as exc:
            raise ConfigError(str(exc))
        return StudyConfig([spec], [spec.key], [[]])
    return preset(args.preset or "standard", window or sim.WINDOW_SHORT)


# -- commands -----------------------------------------------------------------

def _arm_summary(arm):
    # Reverse Kaplan-Meier median follow-up.
    rev = km_estimate(ArmData(arm.time, ~arm.event)) if (~arm.event).any() else None
    if rev is None:
        fu = float(np.median(arm.time))
    else:
        below = rev.time[rev.survival <= 0.5]
        fu = float(below[0]) if below.size else float("nan")
    return {"n": len(arm), "events": arm.n_events, "median_follow_up": fu,
            "max_time": float(arm.time.max())}


def cmd_analyze(args):
    ds = read_dataset(args.input)
    for label, arm in (("active", ds.active), ("control", ds.control)):
        if arm.n_events == 0:
            raise DataError(f"{label} arm has no events")
        if len(arm) < 2:
            raise DataError(f"{label} arm needs at least 2 records")
    tied = tied_event_pairs(ds)
    if tied and args.ties == "error":
        raise DataError(f"{tied} active x control pair(s) have events at exactly the same time; "
                        "the win function is undefined for them (use --ties half to score them 0.5)")
    pooled = ds.pooled()
    tau_rule = "user"
    tau = args.tau
    if tau is None:
        tau = float(pooled.time[pooled.event].max())
        tau_rule = "last observed event time"
    if not tau > 0:
        raise UsageError("--tau must be > 0")
    cfg = _mcmc_config(args, bayes.McmcConfig(), args.seed)
    prior = bayes.PriorConfig()

    report = {
        "schema": REPORT_SCHEMA,
        "input": os.path.abspath(args.input),
        "dataset": {"active": _arm_summary(ds.active), "control": _arm_summary(ds.control)},
        "tau": tau, "tau_rule": tau_rule, "alpha": args.alpha,
        "estimands": {}, "decisions": {}, "comparators": {},
    }
    tally = pairwise_tally(ds)
    report["pairwise"] = {"wins": tally.wins, "losses": tally.losses,
                          "indeterminate": tally.ties - tied, "tied_events": tied,
                          "tie_policy": args.ties,
                          "wp_among_decided_pairs": (tally.wins + 0.5 * tied) / max(tally.wins + tally.losses + tied, 1)}
    with open(args.input, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()

    diagnostics = {}
    if "wp" in args.methods or "rwp" in args.methods:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            draws = bayes.sample_posterior(ds, prior, cfg)
        for w in caught:
            logger.warning("%s", w.message)
        diagnostics = {"rhat": draws.rhat, "acceptance": draws.acceptance,
                       "warnings": [str(w.message) for w in caught]}
        for m, t in (("wp", None), ("rwp", tau)):
            if m not in args.methods:
                continue
            s = bayes.summarize(bayes.transform_draws(draws, tau=t), tau=t)
            key = s.kind
            report["estimands"][key] = {**s.to_dict(), "net_benefit": net_benefit(s.mean),
                                        "win_odds": win_odds(s.mean) if s.mean < 1 else None}
            report["decisions"][key] = bayes.decide(s, args.alpha)
    if "logrank" in args.methods:
        r = logrank_test(ds)
        report["comparators"]["logrank"] = r.to_dict()
        report["decisions"]["logrank"] = _freq_decision(r, args.alpha, r.estimate < 0)
    if "rmst" in args.methods:
        r = rmst_difference(ds, tau)
        report["comparators"]["rmst"] = r.to_dict()
        report["decisions"]["rmst"] = _freq_decision(r, args.alpha, r.estimate > 0)
    if "fwr" in args.methods:
        r = fwr_test(ds, seed=args.seed)
        report["comparators"]["fwr"] = r.to_dict()
        report["decisions"]["fwr"] = _freq_decision(r, args.alpha, r.estimate > 1)

    report["provenance"] = {
        "software": f"winprob {__version__}",
        "input_sha256": digest,
        "seed": cfg.seed,
        "sampler": {**asdict(cfg), "n_burn": cfg.n_burn, "n_keep": cfg.n_keep,
                    "algorithm": "random-walk Metropolis on (log shape, log scale), "
                                 "observed-information proposal, scale adapted during burn-in"},
        "prior": prior.describe(),
        "diagnostics": diagnostics,
        "command": _rerun_command(args, tau),
    }
    text = json.dumps(_jsonable(report), indent=2, allow_nan=False)
    if args.out:
        atomic_write(args.out, text + "\n")
    sys.stdout.write(text + "\n" if args.format == "json" else _render_report(report))
    return EXIT_OK


def _freq_decision(result, alpha, favours_active):
    if not result.p_value < alpha:
        return bayes.INCONCLUSIVE
    return bayes.SUPERIOR if favours_active else bayes.INFERIOR


def _rerun_command(args, tau):
    parts = ["winprob", "analyze", args.input, "--tau", repr(tau), "--seed", str(args.seed), "--ties", args.ties,
             "--alpha", repr(args.alpha), "--methods", ",".join(args.methods)]
    for flag, v in (("--chains", args.chains), ("--iters", args.iters), ("--burnin", args.burnin)):
        if v is not None:
            parts += [flag, str(v)]
    return " ".join(parts)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _render_report(rep):
    out = io.StringIO()
    w = out.write
    w(f"winprob analysis of {rep['input']}\n")
    for arm in ("active", "control"):
        d = rep["dataset"][arm]
        w(f"  {arm:8s} n={d['n']:<6d} events={d['events']:<6d} "
          f"median follow-up={d['median_follow_up']:.2f}\n")
    w(f"  tau = {rep['tau']:.4g} ({rep['tau_rule']})\n\n")
    for key, s in rep["estimands"].items():
        w(f"{key:4s} mean {s['mean']:.4f}  95% CrI ({s['lo']:.4f}, {s['hi']:.4f})  "
          f"Pr(>0.5) {s['prob_gt_half']:.4f}  -> {rep['decisions'][key]}\n")
    for key, r in rep["comparators"].items():
        ci = f"  95% CI ({r['ci'][0]:.4g}, {r['ci'][1]:.4g})" if r.get("ci") else ""
        w(f"{key:8s} estimate {r['estimate']:.4g}  p = {r['p_value']:.4g}{ci}  -> "
          f"{rep['decisions'][key]}\n")
    w(f"\nre-run: {rep['provenance']['command']}\n")
    return out.getvalue()


TRUTH_HEADER = ("scenario", "effect", "WP", "WP_tau", "HR", "dRMST", "dMST", "dmu")


def truth_table(scenarios, tau):
    rows = []
    for s in scenarios:
        t = sim.true_estimands(s, tau)
        rows.append((s.label, s.effect, *t.as_row()))
    return rows


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def cmd_truth(args):
    if not args.tau > 0:
        raise UsageError("--tau must be > 0")
    cfg = _load_scenarios(args, args.window)
    text = _csv_text(TRUTH_HEADER, truth_table(cfg.scenarios, args.tau))
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(args):
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    cfg = _load_scenarios(args, args.window)
    if args.scenario:
        spec = cfg.get(args.scenario)
    elif len(cfg.scenarios) == 1:
        spec = cfg.scenarios[0]
    else:
        raise UsageError(f"config holds {len(cfg.scenarios)} scenarios; pick one with --scenario "
                         f"({', '.join(cfg.names)})")
    if args.no_censoring:
        spec = spec.with_window(None)
    write_dataset(sim.generate_dataset(spec, args.n, args.seed), args.out)
    return EXIT_OK


def cmd_power(args):
    cfg = _load_scenarios(args, args.window)
    replicates = args.replicates
    if replicates is None:
        replicates = cfg.replicates if cfg.replicates is not None else 200
    if replicates < 1:
        raise UsageError("--replicates must be >= 1")
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    seed = args.seed if args.seed is not None else (cfg.seed or 1)
    tau = args.tau if args.tau is not None else cfg.tau
    alpha = args.alpha if args.alpha is not None else (cfg.alpha or 0.05)
    methods = args.methods or cfg.methods or sim.METHODS
    cli_sizes = [int(x) for x in args.sizes.split(",")] if args.sizes else None
    cells = []
    for spec, sizes in zip(cfg.scenarios, cfg.sizes):
        sizes = cli_sizes or sizes
        if not sizes:
            raise UsageError(f"no sample sizes for scenario {spec.key}; use --sizes or a config")
        cells += [sim.StudyCell(spec, n) for n in sizes]
    mcmc = _mcmc_config(args, bayes.DESK_MCMC, 0, cfg)

    def progress(cell, r):
        if (r + 1) % 50 == 0:
            logger.info("%s: %d/%d replicates", cell.key, r + 1, replicates)

    metrics = sim.run_study(cells, replicates, seed, methods, tau, alpha, mcmc,
                            workers=args.workers, progress=progress)
    if metrics.total_failures:
        logger.error("%d replicate(s) failed; no output written", metrics.total_failures)
        return EXIT_NUMERIC
    os.makedirs(args.out, exist_ok=True)
    atomic_write(os.path.join(args.out, "metrics.csv"),
                 _csv_text(("scenario", "effect", "N", "method", "metric", "value"), metrics.rows))
    atomic_write(os.path.join(args.out, "power.csv"),
                 _csv_text(("scenario", "effect", "N", "method", "rejection_rate"), metrics.power_rows()))
    run_info = {"seed": seed, "replicates": replicates, "tau": tau, "alpha": alpha,
                "methods": list(methods), "mcmc": asdict(replace(mcmc, seed=None)),
                "prior": bayes.PriorConfig().describe(), "failures": metrics.failures,
                "software": f"winprob {__version__}"}
    atomic_write(os.path.join(args.out, "run.json"), json.dumps(_jsonable(run_info), indent=2) + "\n")
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "truth": cmd_truth, "simulate": cmd_simulate, "power": cmd_power}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"winprob: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"winprob: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (QuadratureError, FloatingPointError) as exc:
        print(f"winprob: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
