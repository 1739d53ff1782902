"""Bayesian two-arm Weibull model and posterior win-probability summaries.

The model factorises over arms, so each arm is sampled on its own RNG
stream: changing one arm's data never perturbs the other arm's draws.

Sampling is random-walk Metropolis on ``(log shape, log scale)``. The
proposal covariance starts at the inverse observed information at the
maximum-likelihood point, since shape and scale are strongly correlated
and coordinate-wise steps mix poorly. During burn-in the proposal scale is
tuned towards the target acceptance rate and the covariance is re-estimated
from the chain. Both are frozen once burn-in ends.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterator, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .estimands import EstimandValue
from .quadrature import DEFAULT_TOL, QuadratureError, integrate_adaptive_batch
from .survival import ArmData, Dataset, WeibullParams, as_arm

__all__ = [
    "PriorConfig", "McmcConfig", "PosteriorDraw", "PosteriorDraws", "EstimandSummary",
    "log_likelihood", "sample_posterior", "transform_draws", "summarize", "decide",
    "DESK_MCMC", "RHAT_WARN",
]

logger = logging.getLogger(__name__)

RHAT_WARN = 1.05


@dataclass(frozen=True)
class PriorConfig:
    """Gamma prior on the shape, log-normal prior on the scale.

    The log-normal's second argument is a precision (1/variance of
    ``log scale``).
    """

    shape_gamma_shape: float = 1e-4
    shape_gamma_rate: float = 1e-4
    scale_lognormal_mean: float = 1.0005
    scale_lognormal_precision: float = 1e-4

    def __post_init__(self):
        if not (self.shape_gamma_shape > 0 and self.shape_gamma_rate > 0
                and self.scale_lognormal_precision > 0):
            raise ValueError(f"prior hyperparameters must be positive: {self}")

    def describe(self):
        return {
            "shape": f"Gamma(shape={self.shape_gamma_shape:g}, rate={self.shape_gamma_rate:g})",
            "scale": (f"LogNormal(meanlog={self.scale_lognormal_mean:g}, "
                      f"precision={self.scale_lognormal_precision:g})"),
            **asdict(self),
        }


@dataclass(frozen=True)
class McmcConfig:
    chains: int = 3
    iterations: int = 5000
    burn_in: Optional[int] = None  # None -> half of each chain
    seed: int = 20240101
    target_accept: float = 0.3
    adapt_window: int = 50

    def __post_init__(self):
        if self.chains < 1 or self.iterations < 1:
            raise ValueError("chains and iterations must be positive")
        if self.burn_in is not None and not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")

    @property
    def n_burn(self):
        return self.iterations // 2 if self.burn_in is None else self.burn_in

    @property
    def n_keep(self):
        return self.iterations - self.n_burn


# 3 chains x 1000 retained draws; used by the simulation harness.
DESK_MCMC = McmcConfig(chains=3, iterations=2000, burn_in=1000)


@dataclass(frozen=True)
class PosteriorDraw:
    shape_a: float
    scale_a: float
    shape_c: float
    scale_c: float

    @property
    def active(self):
        return WeibullParams(self.shape_a, self.scale_a)

    @property
    def control(self):
        return WeibullParams(self.shape_c, self.scale_c)


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    """Retained draws, chain-major, plus per-parameter split R-hat."""

    shape_a: np.ndarray
    scale_a: np.ndarray
    shape_c: np.ndarray
    scale_c: np.ndarray
    chains: int
    rhat: Dict[str, float] = field(default_factory=dict)
    acceptance: Dict[str, float] = field(default_factory=dict)

    def __len__(self):
        return self.shape_a.size

    def __getitem__(self, j):
        return PosteriorDraw(float(self.shape_a[j]), float(self.scale_a[j]),
                             float(self.shape_c[j]), float(self.scale_c[j]))

    def __iter__(self) -> Iterator[PosteriorDraw]:
        return (self[j] for j in range(len(self)))

    def as_array(self):
        return np.column_stack([self.shape_a, self.scale_a, self.shape_c, self.scale_c])

    @classmethod
    def from_draws(cls, draws):
        arr = np.array([[d.shape_a, d.scale_a, d.shape_c, d.scale_c] for d in draws], dtype=float).reshape(-1, 4)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], chains=1)


def log_likelihood(params: WeibullParams, records) -> float:
    """Right-censored Weibull log-likelihood of one arm."""
    arm = as_arm(records)
    nu, lam = params.shape, params.scale
    if not (nu > 0 and lam > 0):
        return -np.inf
    logt = np.log(arm.time)
    ev = arm.event
    return float(ev.sum() * (np.log(nu) + np.log(lam)) + (nu - 1.0) * logt[ev].sum()
                 - lam * np.exp(nu * logt).sum())


class _ArmPosterior:
    """Log posterior on (log shape, log scale), vectorised over chains."""

    def __init__(self, arm: ArmData, prior: PriorConfig):
        self.logt = np.log(arm.time)
        self.d = float(arm.event.sum())
        self.sum_log_event = float(self.logt[arm.event].sum())
        self.prior = prior

    def __call__(self, x):
        phi, eta = x[..., 0], x[..., 1]
        nu = np.exp(phi)
        with np.errstate(over="ignore"):
            a = np.exp(nu[..., None] * self.logt).sum(axis=-1)
            ll = self.d * (phi + eta) + (nu - 1.0) * self.sum_log_event - np.exp(eta) * a
        p = self.prior
        lp = (p.shape_gamma_shape * phi - p.shape_gamma_rate * nu
              - 0.5 * p.scale_lognormal_precision * (eta - p.scale_lognormal_mean) ** 2)
        out = ll + lp
        return np.where(np.isfinite(out), out, -np.inf)

    def mode_and_covariance(self):
        """Likelihood maximum and inverse observed information in (log shape, log scale).

        The scale is profiled out (``scale = d / sum t**shape``), leaving a
        one-dimensional search over the shape started from the exponential
        fit (shape 1).
        """
        d, logt, sle = self.d, self.logt, self.sum_log_event

        def neg_profile(phi):
            nu = np.exp(phi)
            a = np.exp(nu * logt).sum()
            return -(d * phi + d * np.log(d / a) + (nu - 1.0) * sle - d)

        res = minimize_scalar(neg_profile, bracket=(-0.5, 0.5), tol=1e-10)
        phi = float(np.clip(res.x, -6.0, 6.0))
        nu = np.exp(phi)
        w = np.exp(nu * logt)
        a, b, c = w.sum(), (w * logt).sum(), (w * logt**2).sum()
        lam = d / a
        h_ee = lam * a
        h_pe = lam * nu * b
        h_pp = -nu * sle + lam * nu * b + lam * nu**2 * c
        info = np.array([[h_pp, h_pe], [h_pe, h_ee]])
        try:
            cov = np.linalg.inv(info)
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            cov = np.diag([0.1, 0.1])
        return np.array([phi, np.log(lam)]), cov


def _split_rhat(chains):
    """Split R-hat for an array of shape (n_chains, n_draws)."""
    m, n = chains.shape
    half = n // 2
    if half < 2:
        return float("nan")
    split = np.concatenate([chains[:, :half], chains[:, n - half:]], axis=0)
    means = split.mean(axis=1)
    w = split.var(axis=1, ddof=1).mean()
    b = half * means.var(ddof=1)
    if w == 0:
        return 1.0 if b == 0 else float("inf")
    var_plus = (half - 1) / half * w + b / half
    return float(np.sqrt(var_plus / w))


def _run_arm(arm: ArmData, prior: PriorConfig, cfg: McmcConfig, rng: np.random.Generator):
    target = _ArmPosterior(arm, prior)
    mode, cov = target.mode_and_covariance()
    chol = np.linalg.cholesky(cov)
    n_ch = cfg.chains
    # Over-dispersed starts around the mode.
    x = mode + 2.0 * rng.standard_normal((n_ch, 2)) @ chol.T
    lp = target(x)
    log_scale = np.log(2.38 / np.sqrt(2.0))
    n_burn, n_keep = cfg.n_burn, cfg.n_keep
    burn_trace = np.empty((n_burn, n_ch, 2))
    kept = np.empty((n_ch, n_keep, 2))
    window_acc = 0
    accepted_after = 0

    for it in range(cfg.iterations):
        z = rng.standard_normal((n_ch, 2))
        log_u = np.log(rng.random(n_ch))
        prop = x + np.exp(log_scale) * z @ chol.T
        lp_prop = target(prop)
        acc = log_u < lp_prop - lp
        x = np.where(acc[:, None], prop, x)
        lp = np.where(acc, lp_prop, lp)
        if it < n_burn:
            burn_trace[it] = x
            window_acc += int(acc.sum())
            if (it + 1) % cfg.adapt_window == 0:
                rate = window_acc / (cfg.adapt_window * n_ch)
                log_scale += 2.0 * (rate - cfg.target_accept)
                window_acc = 0
                start = (it + 1) // 4
                if it + 1 >= n_burn // 2 and it + 1 - start >= 100:
                    emp = np.cov(burn_trace[start:it + 1].reshape(-1, 2), rowvar=False)
                    try:
                        chol = np.linalg.cholesky(emp + 1e-12 * np.eye(2))
                    except np.linalg.LinAlgError:
                        pass
        else:
            kept[:, it - n_burn] = x
            accepted_after += int(acc.sum())

    accept_rate = accepted_after / max(n_keep * n_ch, 1)
    return kept, accept_rate


def _check_arm(arm: ArmData, label: str):
    if len(arm) < 2:
        raise ValueError(f"{label} arm needs at least 2 records, got {len(arm)}")
    if arm.n_events == 0:
        raise ValueError(f"{label} arm has no events; the Weibull scale is not identified")


def sample_posterior(dataset: Dataset, prior: PriorConfig = PriorConfig(),
                     cfg: McmcConfig = McmcConfig()) -> PosteriorDraws:
    """Draw from the joint posterior of both arms' Weibull parameters.

    Deterministic given ``cfg.seed``. Split R-hat is computed per parameter
    and a warning is issued when any exceeds ``RHAT_WARN``.
    """
    if not isinstance(dataset, Dataset):
        dataset = Dataset.from_records(dataset)
    _check_arm(dataset.active, "active")
    _check_arm(dataset.control, "control")
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    out, rhat, acceptance = {}, {}, {}
    for arm, label, ss in ((dataset.active, "a", seeds[0]), (dataset.control, "c", seeds[1])):
        kept, rate = _run_arm(arm, prior, cfg, np.random.default_rng(ss))
        acceptance[label] = rate
        for k, name in enumerate(("shape", "scale")):
            trace = np.exp(kept[:, :, k])
            key = f"{name}_{label}"
            out[key] = trace.reshape(-1)
            rhat[key] = _split_rhat(kept[:, :, k])
    bad = {k: v for k, v in rhat.items() if not v <= RHAT_WARN}
    if bad and cfg.chains > 1:
        warnings.warn(f"split R-hat above {RHAT_WARN}: {bad}", RuntimeWarning, stacklevel=2)
    return PosteriorDraws(out["shape_a"], out["scale_a"], out["shape_c"], out["scale_c"],
                          chains=cfg.chains, rhat=rhat, acceptance=acceptance)


def transform_draws(draws, tau=None, tol=DEFAULT_TOL) -> np.ndarray:
    """Map each posterior draw to its WP (``tau=None``) or RWP value.

    All draws are integrated together on the control quantile scale:
    ``S_a(Q_c(q)) = exp(-scale_a * (-log(q) / scale_c) ** (shape_a / shape_c))``.
    """
    if not isinstance(draws, PosteriorDraws):
        draws = PosteriorDraws.from_draws(list(draws))
    if len(draws) == 0:
        raise ValueError("no draws to transform")
    nu_a, lam_a = draws.shape_a, draws.scale_a
    nu_c, lam_c = draws.shape_c, draws.scale_c
    ratio = nu_a / nu_c

    def integrand(q, owner):
        x = -np.log(q) / lam_c[owner, None]
        return np.exp(-lam_a[owner, None] * x ** ratio[owner, None])

    if tau is None:
        lo = np.zeros(len(draws))
        tail = np.zeros(len(draws))
    else:
        if not tau > 0:
            raise ValueError("tau must be > 0")
        s_a_tau = np.exp(-lam_a * tau**nu_a)
        lo = np.exp(-lam_c * tau**nu_c)
        tail = 0.5 * s_a_tau * lo

    values = tail.copy()
    live = np.flatnonzero(lo < 1.0)
    if live.size:
        def sub(q, owner):
            return integrand(q, live[owner])
        try:
            values[live] += integrate_adaptive_batch(sub, lo[live], 1.0, tol=tol)
        except QuadratureError as exc:
            bad = [int(live[m]) for m in exc.members]
            raise QuadratureError(f"{exc} (draw indices {bad[:10]})", bad) from exc
    return np.clip(values, 0.0, 1.0)


@dataclass(frozen=True)
class EstimandSummary:
    kind: str
    tau: Optional[float]
    mean: float
    lo: float
    hi: float
    prob_gt_half: float
    n_draws: int
    level: float = 0.95

    def as_value(self):
        return EstimandValue(self.mean, self.tau)

    def to_dict(self):
        return asdict(self)


def summarize(values, level=0.95, tau=None) -> EstimandSummary:
    """Posterior mean, equal-tailed interval and ``Pr(value > 0.5)``."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("cannot summarise an empty sample")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    lo, hi = np.quantile(v, [(1 - level) / 2, 1 - (1 - level) / 2])
    return EstimandSummary(
        kind="WP" if tau is None else "RWP",
        tau=None if tau is None else float(tau),
        mean=float(v.mean()),
        lo=float(lo),
        hi=float(hi),
        prob_gt_half=float(np.count_nonzero(v > 0.5)) / v.size,
        n_draws=int(v.size),
        level=level,
    )


SUPERIOR, INFERIOR, INCONCLUSIVE = "superior", "inferior", "inconclusive"


def decide(summary: EstimandSummary, alpha=0.05) -> str:
    """Two-sided posterior-probability rule."""
    p = summary.prob_gt_half
    if p > 1 - alpha / 2:
        return SUPERIOR
    if p < alpha / 2:
        return INFERIOR
    return INCONCLUSIVE
