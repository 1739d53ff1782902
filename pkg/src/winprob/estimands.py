"""Win functions and the (restricted) win-probability estimands.

Both estimands are evaluated on the control arm's survival-quantile scale:
substituting ``q = S_c(t)`` turns ``int_0^inf S_a(t) f_c(t) dt`` into
``int_0^1 S_a(Q_c(q)) dq``, a finite-range integral with no upper-limit
truncation. The restricted version integrates ``q`` over ``[S_c(tau), 1]``
and adds half the probability that both subjects outlive ``tau``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .quadrature import DEFAULT_TOL, integrate_adaptive

__all__ = [
    "WIN", "TIE", "LOSS", "TieError", "EstimandValue",
    "win_function", "win_function_restricted", "wp", "rwp",
    "net_benefit", "win_odds", "wp_from_hr_under_ph", "empirical_wp", "TIE_POLICIES",
]

WIN, TIE, LOSS = 1.0, 0.5, 0.0


class TieError(ValueError):
    """Exact tie in outcomes for which the win function defines no value."""


@dataclass(frozen=True)
class EstimandValue:
    value: float
    tau: Optional[float] = None

    @property
    def kind(self):
        return "WP" if self.tau is None else "RWP"

    def __float__(self):
        return float(self.value)

    def same_estimand(self, other: "EstimandValue"):
        return self.tau == other.tau


TIE_POLICIES = ("error", "half")


def _check_policy(ties):
    if ties not in TIE_POLICIES:
        raise ValueError(f"ties must be one of {TIE_POLICIES}, got {ties!r}")


def win_function(y_a, y_c, ties="error"):
    """1 if ``y_a`` outlives ``y_c``, 0 if not. An exact tie raises unless
    ``ties="half"``, which scores it 0.5."""
    _check_policy(ties)
    if y_a == y_c:
        if ties == "half":
            return TIE
        raise TieError(f"exact tie at {y_a}; continuous outcomes cannot tie")
    return WIN if y_a > y_c else LOSS


def win_function_restricted(y_a, y_c, tau, ties="error"):
    _check_policy(ties)
    if not tau > 0:
        raise ValueError("tau must be > 0")
    if y_a > tau and y_c > tau:
        return TIE
    if y_a == y_c:
        if ties == "half":
            return TIE
        raise TieError(f"exact tie at {y_a} <= tau={tau}")
    return WIN if y_a > y_c else LOSS


def _quantile_integrand(dist_a, dist_c):
    def f(q):
        return dist_a.survival(dist_c.quantile(q))
    return f


def _breakpoints(dist_a, dist_c):
    # Knots of either arm, mapped to the control survival scale.
    pts = []
    for k in tuple(dist_a.knots) + tuple(dist_c.knots):
        pts.append(dist_c.survival(k))
    return pts


def wp(dist_a, dist_c, tol=DEFAULT_TOL) -> EstimandValue:
    """``Pr(Y_a > Y_c)`` for independent continuous event times."""
    value = integrate_adaptive(_quantile_integrand(dist_a, dist_c), 0.0, 1.0, tol=tol,
                               breakpoints=_breakpoints(dist_a, dist_c))
    return EstimandValue(min(max(value, 0.0), 1.0))


def rwp(dist_a, dist_c, tau, tol=DEFAULT_TOL) -> EstimandValue:
    """Win probability when pairs with both times beyond ``tau`` tie."""
    if not tau > 0:
        raise ValueError("tau must be > 0")
    s_c_tau = dist_c.survival(tau)
    both_beyond = 0.5 * dist_a.survival(tau) * s_c_tau
    if s_c_tau >= 1.0:
        return EstimandValue(both_beyond, tau)
    head = integrate_adaptive(_quantile_integrand(dist_a, dist_c), s_c_tau, 1.0, tol=tol,
                              breakpoints=_breakpoints(dist_a, dist_c))
    return EstimandValue(min(max(head + both_beyond, 0.0), 1.0), float(tau))


def net_benefit(wp_value):
    return 2.0 * float(wp_value) - 1.0


def win_odds(wp_value):
    wp_value = float(wp_value)
    if wp_value >= 1.0:
        raise ValueError("win odds are unbounded at WP = 1")
    return wp_value / (1.0 - wp_value)


def wp_from_hr_under_ph(hr):
    if not hr > 0:
        raise ValueError("hazard ratio must be > 0")
    return 1.0 / (1.0 + hr)


def empirical_wp(times_a, times_c, tau=None, events_a=None, events_c=None, ties="error"):
    """Average win-function score over all active x control pairs.

    Inputs must be fully observed event times; passing event flags with any
    censoring raises. Without ``tau`` this equals the Mann-Whitney U
    statistic divided by ``n_a * n_c``. Exact ties raise :class:`TieError`
    unless ``ties="half"``. Computed by sorting, so 10**6 x 10**6
    pair sets are cheap.
    """
    _check_policy(ties)
    for ev in (events_a, events_c):
        if ev is not None and not np.all(np.asarray(ev, dtype=bool)):
            raise ValueError("empirical_wp needs uncensored samples")
    a = np.sort(np.asarray(times_a, dtype=float))
    c = np.sort(np.asarray(times_c, dtype=float))
    if a.size == 0 or c.size == 0:
        raise ValueError("both samples must be non-empty")
    n_pairs = a.size * c.size

    if tau is None:
        lt = np.searchsorted(c, a, side="left")
        le = np.searchsorted(c, a, side="right")
        if ties == "error" and np.any(le != lt):
            raise TieError("exact ties between arms; the win function is undefined")
        return float(lt.sum() + 0.5 * (le - lt).sum()) / n_pairs

    if not tau > 0:
        raise ValueError("tau must be > 0")
    # Wins: y_a > y_c with y_c <= tau. Ties: both beyond tau.
    c_in = c[c <= tau]
    lt = np.searchsorted(c_in, a, side="left")
    le = np.searchsorted(c_in, a, side="right")
    a_in = a <= tau
    tied = np.where(a_in, le - lt, 0)
    if ties == "error" and np.any(tied):
        raise TieError("exact ties at or below tau; the restricted win function is undefined")
    wins = float(lt.sum()) + 0.5 * float(tied.sum())
    ties = float(np.count_nonzero(a > tau)) * float(np.count_nonzero(c > tau))
    return (wins + 0.5 * ties) / n_pairs
