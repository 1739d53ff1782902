"""Frequentist comparators: log-rank test, RMST difference, win ratio."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import stats

from .survival import ArmData, Dataset, km_estimate

__all__ = [
    "TestResult", "PairwiseTally", "logrank_test", "rmst_difference", "fwr_test",
    "pairwise_tally", "effective_tau",
]

Z975 = stats.norm.ppf(0.975)


@dataclass(frozen=True)
class PairwiseTally:
    wins: int
    losses: int
    ties: int

    @property
    def total(self):
        return self.wins + self.losses + self.ties


@dataclass(frozen=True)
class TestResult:
    method: str
    estimate: float
    statistic: float
    p_value: float
    ci: Optional[Tuple[float, float]] = None
    details: dict = field(default_factory=dict)

    def significant(self, alpha=0.05):
        return self.p_value < alpha

    def to_dict(self):
        d = asdict(self)
        d["ci"] = None if self.ci is None else list(self.ci)
        return d


def _as_dataset(dataset):
    return dataset if isinstance(dataset, Dataset) else Dataset.from_records(dataset)


def logrank_test(dataset) -> TestResult:
    """Mantel log-rank test; the estimate is observed minus expected active events."""
    ds = _as_dataset(dataset)
    pooled = ds.pooled()
    if pooled.n_events == 0:
        raise ValueError("log-rank test needs at least one event")
    is_a = np.concatenate([np.ones(len(ds.active), bool), np.zeros(len(ds.control), bool)])
    order = np.argsort(pooled.time, kind="stable")
    t, e, a = pooled.time[order], pooled.event[order], is_a[order]
    uniq, first = np.unique(t, return_index=True)
    n = t.size - first
    n_a = np.cumsum(a[::-1])[::-1][first]
    d = np.add.reduceat(e.astype(int), first)
    d_a = np.add.reduceat((e & a).astype(int), first)
    m = d > 0
    n, n_a, d, d_a = n[m], n_a[m], d[m], d_a[m]
    expected = d * n_a / n
    with np.errstate(divide="ignore", invalid="ignore"):
        var = np.where(n > 1, d * (n_a / n) * (1 - n_a / n) * (n - d) / (n - 1), 0.0)
    o_minus_e = float(np.sum(d_a - expected))
    v = float(np.sum(var))
    stat = o_minus_e**2 / v if v > 0 else 0.0
    p = float(stats.chi2.sf(stat, 1)) if v > 0 else 1.0
    return TestResult("logrank", o_minus_e, stat, p,
                      details={"observed_active": int(d_a.sum()),
                               "expected_active": float(expected.sum()), "variance": v})


def effective_tau(dataset, tau_requested):
    """``min(tau_requested, smallest per-arm largest observed time)``."""
    ds = _as_dataset(dataset)
    return float(min(tau_requested, ds.active.time.max(), ds.control.time.max()))


def _rmst_arm(arm: ArmData, tau):
    km = km_estimate(arm)
    area = km.area(tau)
    inside = km.time < tau
    t, s = km.time[inside], km.survival[inside]
    n, d = km.at_risk[inside], km.events[inside]
    # Area under the curve from each event time to tau.
    edges = np.append(t, tau)
    pieces = s * np.diff(edges)
    tail_area = np.cumsum(pieces[::-1])[::-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(n > d, d / (n * (n - d)), 0.0)
    var = float(np.sum(tail_area**2 * w))
    return area, var


def rmst_difference(dataset, tau_requested) -> TestResult:
    """Difference (active - control) in restricted mean survival time."""
    ds = _as_dataset(dataset)
    tau = effective_tau(ds, tau_requested)
    if not tau > 0:
        raise ValueError("effective tau must be > 0")
    rm_a, v_a = _rmst_arm(ds.active, tau)
    rm_c, v_c = _rmst_arm(ds.control, tau)
    diff = rm_a - rm_c
    se = float(np.sqrt(v_a + v_c))
    if se > 0:
        z = diff / se
        p = float(2 * stats.norm.sf(abs(z)))
    else:
        z, p = 0.0, 1.0 if diff == 0 else 0.0
    return TestResult("rmst", diff, z, p, (diff - Z975 * se, diff + Z975 * se),
                      details={"tau": tau, "tau_requested": float(tau_requested),
                               "rmst_active": rm_a, "rmst_control": rm_c, "se": se})


def _pair_counts(ds: Dataset):
    """Per-subject win/loss counts for the active arm.

    Active subject i beats control j when j's event is observed and i is
    still under observation after it (a censoring at the same instant counts
    as later). i loses under the mirror-image rule.
    """
    a, c = ds.active, ds.control
    c_ev = np.sort(c.time[c.event])
    c_all = np.sort(c.time)
    a_ev = np.sort(a.time[a.event])
    a_all = np.sort(a.time)

    # Row sums (per active subject).
    row_win = np.where(a.event,
                       np.searchsorted(c_ev, a.time, side="left"),
                       np.searchsorted(c_ev, a.time, side="right"))
    c_cens = np.sort(c.time[~c.event])
    row_loss = np.where(a.event,
                        c.time.size - np.searchsorted(c_all, a.time, side="right")
                        + np.searchsorted(c_cens, a.time, side="right")
                        - np.searchsorted(c_cens, a.time, side="left"),
                        0)
    # Column sums (per control subject).
    a_cens = np.sort(a.time[~a.event])
    col_win = np.where(c.event,
                       a.time.size - np.searchsorted(a_all, c.time, side="right")
                       + np.searchsorted(a_cens, c.time, side="right")
                       - np.searchsorted(a_cens, c.time, side="left"),
                       0)
    col_loss = np.where(c.event,
                        np.searchsorted(a_ev, c.time, side="left"),
                        np.searchsorted(a_ev, c.time, side="right"))
    return row_win, row_loss, col_win, col_loss


def pairwise_tally(dataset) -> PairwiseTally:
    ds = _as_dataset(dataset)
    row_win, row_loss, _, _ = _pair_counts(ds)
    wins, losses = int(row_win.sum()), int(row_loss.sum())
    return PairwiseTally(wins, losses, len(ds.active) * len(ds.control) - wins - losses)


def tied_event_pairs(dataset) -> int:
    """Active x control pairs whose events occurred at exactly the same time."""
    ds = _as_dataset(dataset)
    c_ev = np.sort(ds.control.time[ds.control.event])
    a_ev = ds.active.time[ds.active.event]
    return int(np.sum(np.searchsorted(c_ev, a_ev, side="right") - np.searchsorted(c_ev, a_ev, side="left")))


def _log_wr_variance(row_win, row_loss, col_win, col_loss, n_a, n_c):
    """Delta-method variance of log(W/L) from two-sample U-statistic theory."""
    w = row_win.sum() / (n_a * n_c)
    l = row_loss.sum() / (n_a * n_c)
    rows = np.column_stack([row_win / n_c, row_loss / n_c])
    cols = np.column_stack([col_win / n_a, col_loss / n_a])
    cov = np.cov(rows, rowvar=False) / n_a + np.cov(cols, rowvar=False) / n_c
    grad = np.array([1.0 / w, -1.0 / l])
    return float(grad @ cov @ grad)


def fwr_test(dataset, n_boot=1000, seed=0) -> TestResult:
    """Win ratio of active over control across all active x control pairs.

    Inference uses a normal approximation to ``log(wins/losses)``; when one
    side of the tally is empty the log ratio is infinite and a seeded
    bootstrap supplies the interval and p-value instead.
    """
    ds = _as_dataset(dataset)
    n_a, n_c = len(ds.active), len(ds.control)
    if n_a == 0 or n_c == 0:
        raise ValueError("both arms must be non-empty")
    row_win, row_loss, col_win, col_loss = _pair_counts(ds)
    tally = PairwiseTally(int(row_win.sum()), int(row_loss.sum()),
                          n_a * n_c - int(row_win.sum()) - int(row_loss.sum()))
    details = {"wins": tally.wins, "losses": tally.losses, "ties": tally.ties}

    if tally.wins == 0 and tally.losses == 0:
        return TestResult("fwr", float("nan"), 0.0, 1.0, None,
                          details={**details, "variance_method": "undefined"})
    if tally.wins > 0 and tally.losses > 0 and n_a > 1 and n_c > 1:
        est = tally.wins / tally.losses
        var = _log_wr_variance(row_win, row_loss, col_win, col_loss, n_a, n_c)
        if var > 0:
            se = np.sqrt(var)
            z = np.log(est) / se
            p = float(2 * stats.norm.sf(abs(z)))
            ci = (float(np.exp(np.log(est) - Z975 * se)), float(np.exp(np.log(est) + Z975 * se)))
            return TestResult("fwr", est, float(z), p, ci,
                              details={**details, "variance_method": "u-statistic", "se_log": float(se)})
    return _fwr_bootstrap(ds, tally, details, n_boot, seed)


def _fwr_bootstrap(ds, tally, details, n_boot, seed):
    rng = np.random.default_rng(seed)
    n_a, n_c = len(ds.active), len(ds.control)
    log_wr = np.empty(n_boot)
    for b in range(n_boot):
        ia = rng.integers(0, n_a, n_a)
        ic = rng.integers(0, n_c, n_c)
        boot = Dataset(ArmData(ds.active.time[ia], ds.active.event[ia]),
                       ArmData(ds.control.time[ic], ds.control.event[ic]))
        t = pairwise_tally(boot)
        with np.errstate(divide="ignore"):
            log_wr[b] = np.log(t.wins) - np.log(t.losses) if (t.wins or t.losses) else np.nan
    log_wr = log_wr[~np.isnan(log_wr)]
    if tally.losses == 0:
        est = float("inf")
    else:
        est = tally.wins / tally.losses
    if log_wr.size == 0:
        p, ci = 1.0, None
    else:
        p = float(min(1.0, 2 * min(np.mean(log_wr <= 0), np.mean(log_wr >= 0))))
        lo, hi = np.exp(np.quantile(log_wr, [0.025, 0.975], method="inverted_cdf"))
        ci = (float(lo), float(hi))
    stat = float(np.sign(np.log(est)) * np.inf) if est in (0.0, float("inf")) else float(np.log(est))
    return TestResult("fwr", est, stat, p, ci,
                      details={**details, "variance_method": f"bootstrap({n_boot}, seed={seed})"})
