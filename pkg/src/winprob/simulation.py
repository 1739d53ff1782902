"""Scenario definitions, data generation, true estimands and the Monte Carlo runner."""

from __future__ import annotations

import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from . import bayes
from .comparators import fwr_test, logrank_test, rmst_difference
from .estimands import rwp, wp
from .quadrature import integrate_adaptive
from .survival import ArmData, Dataset, EarlyEffect, Exponential, LateEffect

__all__ = [
    "CONTROL_MEDIAN", "EFFECT_WPS", "HAZARD_RATIOS", "EARLY_RAMPS", "LATE_RAMPS",
    "WINDOW_SHORT", "WINDOW_LONG", "METHODS",
    "ScenarioSpec", "scenario", "calibrate_effect", "standard_grid", "generate_dataset", "true_estimands",
    "TrueEstimands", "StudyCell", "StudyMetrics", "run_replicate", "run_study", "aggregate",
    "replicate_seed",
]

logger = logging.getLogger(__name__)

CONTROL_MEDIAN = 9.0
WINDOW_SHORT = (12.0, 21.0)
WINDOW_LONG = (36.0, 45.0)

# Effect levels, largest first. The early/late ramps are solved (root-finding
# on the quadrature WP) so that the win probability hits the target exactly.
HAZARD_RATIOS = (0.65, 0.8, 0.9)
EFFECT_WPS = (0.606, 0.556, 0.526)
EARLY_RAMPS = (0.010141011719043214, 0.05086735523460337, 0.14020720659971664)
LATE_RAMPS = (-0.09649055395783353, -0.034438418910167086, -0.015364950634297497)

FAMILIES = ("PH", "Early", "Late", "Null")
METHODS = ("wp", "rwp", "logrank", "rmst", "fwr")


@dataclass(frozen=True)
class ScenarioSpec:
    label: str
    effect: str
    control: object
    active: object
    window: Optional[Tuple[float, float]] = WINDOW_SHORT

    def __post_init__(self):
        if self.window is not None:
            lo, hi = self.window
            if not 0 < lo < hi:
                raise ValueError(f"censoring window must satisfy 0 < lo < hi, got {self.window}")

    @property
    def key(self):
        return f"{self.label}/{self.effect}"

    def with_window(self, window):
        return replace(self, window=window)


def scenario(family, level=None, *, hr=None, ramp=None, window=WINDOW_SHORT,
             control_median=CONTROL_MEDIAN, effect=None):
    """Build a scenario from a family name and either a grid level (0, 1, 2)
    or an explicit parameter (``hr`` for PH, ``ramp`` for Early/Late)."""
    if family not in FAMILIES:
        raise ValueError(f"unknown scenario family {family!r}; expected one of {FAMILIES}")
    control = Exponential.from_median(control_median)
    lam = control.rate
    if family == "Null":
        return ScenarioSpec("Null", effect or "-", control, control, window)
    if level is not None:
        if not 0 <= level < 3:
            raise ValueError("grid level must be 0, 1 or 2")
        hr = HAZARD_RATIOS[level] if family == "PH" else hr
        ramp = {"Early": EARLY_RAMPS, "Late": LATE_RAMPS}.get(family, (None,) * 3)[level]
        effect = effect or f"wp{EFFECT_WPS[level]:.3f}"
    if family == "PH":
        if hr is None:
            raise ValueError("PH scenario needs hr")
        active = Exponential(hr * lam)
        effect = effect or f"hr{hr:g}"
    elif family == "Early":
        if ramp is None:
            raise ValueError("Early scenario needs ramp (psi)")
        active = EarlyEffect(lam, ramp)
        effect = effect or f"psi{ramp:g}"
    else:
        if ramp is None:
            raise ValueError("Late scenario needs ramp (zeta)")
        active = LateEffect(lam, ramp)
        effect = effect or f"zeta{ramp:g}"
    return ScenarioSpec(family, effect, control, active, window)


def calibrate_effect(family, target_wp, control_median=CONTROL_MEDIAN):
    """Effect parameter giving the requested win probability.

    PH has the closed form ``HR = 1/WP - 1``; the early and late ramps are
    found by root-finding on the quadrature WP.
    """
    if not 0.5 < target_wp < 1:
        raise ValueError("target WP must lie in (0.5, 1)")
    if family == "PH":
        return 1.0 / target_wp - 1.0
    control = Exponential.from_median(control_median)
    if family == "Early":
        # WP approaches 1/1.6 as the ramp goes to zero.
        if target_wp >= 1 / 1.6:
            raise ValueError("early-effect WP must be below 0.625")
        lo, hi, make = 1e-6, 50.0, lambda x: EarlyEffect(control.rate, x)
    elif family == "Late":
        if target_wp >= 2 / 3:
            raise ValueError("late-effect WP must be below 2/3")
        lo, hi, make = -50.0, -1e-6, lambda x: LateEffect(control.rate, x)
    else:
        raise ValueError(f"cannot calibrate family {family!r}")
    return brentq(lambda x: wp(make(x), control, tol=1e-12).value - target_wp, lo, hi, xtol=1e-14)


def standard_grid(window=WINDOW_SHORT) -> List[ScenarioSpec]:
    """The nine effect rows (PH, Early, Late x three levels) and the null."""
    rows = [scenario(f, k, window=window) for f in ("PH", "Early", "Late") for k in range(3)]
    rows.append(scenario("Null", window=window))
    return rows


def _uniform_open(rng, n):
    u = rng.random(n)
    return np.where(u > 0, u, np.finfo(float).tiny)


def generate_dataset(spec: ScenarioSpec, n_per_arm: int, seed) -> Dataset:
    """Draw a 1:1 two-arm dataset with uniform administrative censoring."""
    if n_per_arm < 1:
        raise ValueError("n_per_arm must be >= 1")
    rng = np.random.default_rng(seed)
    arms = []
    for dist in (spec.active, spec.control):
        t = dist.quantile(_uniform_open(rng, n_per_arm))
        if spec.window is None:
            arms.append(ArmData(t, np.ones(n_per_arm, bool)))
            continue
        c = rng.uniform(spec.window[0], spec.window[1], n_per_arm)
        arms.append(ArmData(np.minimum(t, c), t <= c))
    return Dataset(arms[0], arms[1])


@dataclass(frozen=True)
class TrueEstimands:
    wp: float
    rwp: float
    hr: float
    d_rmst: float
    d_median: float
    d_mean: float
    tau: float

    def as_row(self):
        return [self.wp, self.rwp, self.hr, self.d_rmst, self.d_median, self.d_mean]


def _mean_survival(dist):
    # E[Y] = int_0^1 Q(q) dq on the survival-quantile scale.
    pts = [dist.survival(k) for k in dist.knots]
    return integrate_adaptive(dist.quantile, 0.0, 1.0, breakpoints=pts)


def true_estimands(spec: ScenarioSpec, tau) -> TrueEstimands:
    if not tau > 0:
        raise ValueError("tau must be > 0")
    a, c = spec.active, spec.control
    knots = sorted(set(a.knots) | set(c.knots))
    d_rmst = integrate_adaptive(lambda t: a.survival(t) - c.survival(t), 0.0, tau, breakpoints=knots)
    return TrueEstimands(
        wp=wp(a, c).value,
        rwp=rwp(a, c, tau).value,
        hr=a.cumulative_hazard(tau) / c.cumulative_hazard(tau),
        d_rmst=d_rmst,
        d_median=a.median() - c.median(),
        d_mean=_mean_survival(a) - _mean_survival(c),
        tau=float(tau),
    )


# -- study runner -------------------------------------------------------------

@dataclass(frozen=True)
class StudyCell:
    spec: ScenarioSpec
    n_total: int

    def __post_init__(self):
        if self.n_total < 2:
            raise ValueError("total sample size must be >= 2")

    @property
    def n_per_arm(self):
        return self.n_total // 2

    @property
    def key(self):
        return f"{self.spec.key}/{self.spec.window}/N={self.n_total}"


def replicate_seed(master_seed, cell: StudyCell, r) -> np.random.SeedSequence:
    """Replicate ``r`` of ``cell`` gets its own stream, independent of run order."""
    return np.random.SeedSequence(int(master_seed), spawn_key=(zlib.crc32(cell.key.encode()), int(r)))


@dataclass
class _Settings:
    methods: Tuple[str, ...]
    tau: Optional[float]
    alpha: float
    mcmc: bayes.McmcConfig
    prior: bayes.PriorConfig


def run_replicate(cell: StudyCell, r, master_seed, methods=METHODS, tau=None, alpha=0.05,
                  mcmc=bayes.DESK_MCMC, prior=bayes.PriorConfig()):
    """One simulated trial. Returns ``{method: (reject, estimate, lo, hi)}``."""
    data_ss, mcmc_ss = replicate_seed(master_seed, cell, r).spawn(2)
    ds = generate_dataset(cell.spec, cell.n_per_arm, data_ss)
    tau = _study_tau(cell.spec, tau)
    out = {}
    if "wp" in methods or "rwp" in methods:
        cfg = replace(mcmc, seed=int(mcmc_ss.generate_state(1, np.uint64)[0]))
        draws = bayes.sample_posterior(ds, prior, cfg)
        for m, t in (("wp", None), ("rwp", tau)):
            if m in methods:
                s = bayes.summarize(bayes.transform_draws(draws, tau=t), tau=t)
                out[m] = (bayes.decide(s, alpha) != bayes.INCONCLUSIVE, s.mean, s.lo, s.hi)
    if "logrank" in methods:
        res = logrank_test(ds)
        out["logrank"] = (res.p_value < alpha, math.nan, math.nan, math.nan)
    if "rmst" in methods:
        res = rmst_difference(ds, tau)
        out["rmst"] = (res.p_value < alpha, res.estimate, res.ci[0], res.ci[1])
    if "fwr" in methods:
        res = fwr_test(ds)
        lo, hi = res.ci if res.ci else (math.nan, math.nan)
        out["fwr"] = (res.p_value < alpha, res.estimate, lo, hi)
    return out


def _study_tau(spec: ScenarioSpec, tau):
    if tau is not None:
        return float(tau)
    if spec.window is None:
        raise ValueError("tau must be given when there is no censoring window")
    return float(spec.window[0])


@dataclass
class StudyMetrics:
    """Long-format metric rows plus per-cell failure counts."""

    rows: List[Tuple[str, str, int, str, str, float]] = field(default_factory=list)
    failures: Dict[str, int] = field(default_factory=dict)

    def value(self, scenario_label, effect, n_total, method, metric):
        for row in self.rows:
            if row[:5] == (scenario_label, effect, n_total, method, metric):
                return row[5]
        raise KeyError((scenario_label, effect, n_total, method, metric))

    def rejection_rate(self, cell: StudyCell, method):
        return self.value(cell.spec.label, cell.spec.effect, cell.n_total, method, "rejection_rate")

    def power_rows(self):
        return [r[:4] + (r[5],) for r in self.rows if r[4] == "rejection_rate"]

    @property
    def total_failures(self):
        return sum(self.failures.values())


def _truth_for(method, truth: TrueEstimands):
    return {"wp": truth.wp, "rwp": truth.rwp, "rmst": truth.d_rmst}.get(method)


def aggregate(cell: StudyCell, results, methods, tau, failures=0) -> StudyMetrics:
    """Reduce per-replicate results into metric rows.

    ``results`` maps replicate index to the output of :func:`run_replicate`;
    replicates are reduced in index order so the outcome does not depend on
    the order they were computed in.
    """
    spec = cell.spec
    metrics = StudyMetrics(failures={cell.key: failures})
    truth = true_estimands(spec, _study_tau(spec, tau))
    ordered = [results[r] for r in sorted(results)]
    base = (spec.label, spec.effect, cell.n_total)
    for m in methods:
        recs = [res[m] for res in ordered if m in res]
        if not recs:
            continue
        arr = np.array([[float(x) for x in rec] for rec in recs])
        metrics.rows.append(base + (m, "rejection_rate", float(arr[:, 0].mean())))
        metrics.rows.append(base + (m, "replicates", float(len(recs))))
        target = _truth_for(m, truth)
        if target is None:
            continue
        est, lo, hi = arr[:, 1], arr[:, 2], arr[:, 3]
        err = est - target
        metrics.rows.append(base + (m, "truth", float(target)))
        if target != 0:
            metrics.rows.append(base + (m, "relative_bias", float(np.mean(err / target))))
        else:
            metrics.rows.append(base + (m, "absolute_bias", float(np.mean(err))))
        metrics.rows.append(base + (m, "rmse", float(np.sqrt(np.mean(err**2)))))
        metrics.rows.append(base + (m, "coverage_pct", float(100 * np.mean((lo <= target) & (target <= hi)))))
        metrics.rows.append(base + (m, "ci_width", float(np.mean(hi - lo))))
    return metrics


def _replicate_job(args):
    cell, r, master_seed, settings = args
    try:
        return r, run_replicate(cell, r, master_seed, settings.methods, settings.tau,
                                settings.alpha, settings.mcmc, settings.prior), None
    except Exception as exc:  # noqa: BLE001 - a failed replicate is counted, not fatal
        return r, None, f"{type(exc).__name__}: {exc}"


def run_study(cells: Sequence[StudyCell], replicates: int, master_seed: int, methods=METHODS,
              tau=None, alpha=0.05, mcmc=bayes.DESK_MCMC, prior=bayes.PriorConfig(),
              workers: int = 1, progress=None) -> StudyMetrics:
    """Run ``replicates`` simulated trials for every cell and aggregate."""
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
    settings = _Settings(tuple(methods), tau, alpha, mcmc, prior)
    out = StudyMetrics()
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        for cell in cells:
            jobs = [(cell, r, master_seed, settings) for r in range(replicates)]
            mapped = pool.map(_replicate_job, jobs, chunksize=8) if pool else map(_replicate_job, jobs)
            results, failures = {}, 0
            for r, res, err in mapped:
                if err is not None:
                    failures += 1
                    logger.warning("replicate %d of %s failed: %s", r, cell.key, err)
                else:
                    results[r] = res
                if progress:
                    progress(cell, r)
            cell_metrics = aggregate(cell, results, methods, tau, failures)
            out.rows.extend(cell_metrics.rows)
            out.failures.update(cell_metrics.failures)
    finally:
        if pool:
            pool.shutdown()
    return out
