"""Event-time distributions, right-censored data containers and Kaplan-Meier.

Every distribution exposes the same small surface (``hazard``,
``cumulative_hazard``, ``survival``, ``pdf`` and ``quantile``), vectorised
over numpy arrays. ``quantile(u)`` is the survival quantile: the time ``t``
with ``S(t) = u``, which is how event times are drawn by inversion.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

__all__ = [
    "WeibullParams", "Exponential", "EarlyEffect", "LateEffect", "HazardSpec",
    "SurvivalRecord", "ArmData", "Dataset", "KMCurve",
    "weibull_pdf", "weibull_survival", "hazard", "cumulative_hazard",
    "survival", "sample_event_time", "km_estimate", "as_arm",
]

ACTIVE = "active"
CONTROL = "control"

# Ratio of active to control hazard at the start (early effect) and at the
# end (late effect) of the log-linear segment.
EARLY_START_RATIO = 0.6
LATE_END_RATIO = 0.5


def _positive_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise ValueError("time must be > 0")
    return t


def _nonneg_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(~(t >= 0)):
        raise ValueError("time must be >= 0")
    return t


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


class _Distribution:
    """Shared derived quantities; subclasses supply hazard, cumulative hazard
    and the inverse of the cumulative hazard."""

    knots: tuple = ()

    def survival(self, t):
        t = _nonneg_time(t)
        return _out(np.exp(-self._cumhaz(t)))

    def cumulative_hazard(self, t):
        return _out(self._cumhaz(_nonneg_time(t)))

    def hazard(self, t):
        return _out(self._hazard(_positive_time(t)))

    def pdf(self, t):
        t = _positive_time(t)
        return _out(self._hazard(t) * np.exp(-self._cumhaz(t)))

    def quantile(self, u):
        """Time at which survival equals ``u`` (0 < u < 1)."""
        u = np.asarray(u, dtype=float)
        if np.any(~((u > 0) & (u < 1))):
            raise ValueError("u must lie in (0, 1)")
        return _out(self._inv_cumhaz(-np.log(u)))

    def median(self):
        return self.quantile(0.5)


@dataclass(frozen=True)
class WeibullParams(_Distribution):
    """Weibull with ``S(t) = exp(-scale * t**shape)``."""

    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError(f"Weibull parameters must be positive, got {self}")

    def _hazard(self, t):
        return self.shape * self.scale * t ** (self.shape - 1.0)

    def _cumhaz(self, t):
        return self.scale * t**self.shape

    def _inv_cumhaz(self, x):
        return (x / self.scale) ** (1.0 / self.shape)


@dataclass(frozen=True)
class Exponential(_Distribution):
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")

    @classmethod
    def from_median(cls, median):
        return cls(np.log(2.0) / median)

    def _hazard(self, t):
        return np.full_like(t, self.rate, dtype=float)

    def _cumhaz(self, t):
        return self.rate * t

    def _inv_cumhaz(self, x):
        return x / self.rate


@dataclass(frozen=True)
class EarlyEffect(_Distribution):
    """Hazard ``0.6*rate*exp(ramp*t)`` rising until it meets ``rate``, then flat."""

    rate: float
    ramp: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        if not self.ramp > 0:
            raise ValueError(f"early-effect ramp must be > 0, got {self.ramp}")

    @property
    def knot(self):
        return -np.log(EARLY_START_RATIO) / self.ramp

    @property
    def knots(self):
        return (self.knot,)

    def _hazard(self, t):
        # Exponent is capped at the knot, so exp() never overflows.
        seg = np.minimum(t, self.knot)
        return np.where(t <= self.knot, EARLY_START_RATIO * self.rate * np.exp(self.ramp * seg), self.rate)

    def _cumhaz(self, t):
        seg = np.minimum(t, self.knot)
        return (EARLY_START_RATIO * self.rate * np.expm1(self.ramp * seg) / self.ramp
                + self.rate * np.maximum(t - self.knot, 0.0))

    def _inv_cumhaz(self, x):
        at_knot = (1.0 - EARLY_START_RATIO) * self.rate / self.ramp
        first = np.log1p(np.minimum(x, at_knot) * self.ramp / (EARLY_START_RATIO * self.rate)) / self.ramp
        return np.where(x <= at_knot, first, self.knot + (x - at_knot) / self.rate)


@dataclass(frozen=True)
class LateEffect(_Distribution):
    """Hazard ``rate*exp(ramp*t)`` (ramp < 0) falling until half of ``rate``, then flat."""

    rate: float
    ramp: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        if not self.ramp < 0:
            raise ValueError(f"late-effect ramp must be < 0, got {self.ramp}")

    @property
    def knot(self):
        return np.log(LATE_END_RATIO) / self.ramp

    @property
    def knots(self):
        return (self.knot,)

    def _hazard(self, t):
        seg = np.minimum(t, self.knot)
        return np.where(t <= self.knot, self.rate * np.exp(self.ramp * seg), LATE_END_RATIO * self.rate)

    def _cumhaz(self, t):
        seg = np.minimum(t, self.knot)
        return (self.rate * np.expm1(self.ramp * seg) / self.ramp
                + LATE_END_RATIO * self.rate * np.maximum(t - self.knot, 0.0))

    def _inv_cumhaz(self, x):
        at_knot = (LATE_END_RATIO - 1.0) * self.rate / self.ramp
        first = np.log1p(np.minimum(x, at_knot) * self.ramp / self.rate) / self.ramp
        return np.where(x <= at_knot, first, self.knot + (x - at_knot) / (LATE_END_RATIO * self.rate))


HazardSpec = Union[WeibullParams, Exponential, EarlyEffect, LateEffect]


def weibull_pdf(p: WeibullParams, t):
    return p.pdf(t)


def weibull_survival(p: WeibullParams, t):
    return p.survival(t)


def hazard(spec: HazardSpec, t):
    return spec.hazard(t)


def cumulative_hazard(spec: HazardSpec, t):
    return spec.cumulative_hazard(t)


def survival(spec: HazardSpec, t):
    return spec.survival(t)


def sample_event_time(spec: HazardSpec, u):
    """Invert the survival function: the ``t`` solving ``H(t) = -log(u)``."""
    return spec.quantile(u)


# -- data ---------------------------------------------------------------------

@dataclass(frozen=True)
class SurvivalRecord:
    time: float
    event: bool
    arm: str

    def __post_init__(self):
        if not self.time > 0:
            raise ValueError(f"time must be > 0, got {self.time}")
        if self.arm not in (ACTIVE, CONTROL):
            raise ValueError(f"arm must be {ACTIVE!r} or {CONTROL!r}, got {self.arm!r}")


@dataclass(frozen=True, eq=False)
class ArmData:
    """Observed times and event flags for one arm."""

    time: np.ndarray
    event: np.ndarray

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float).reshape(-1)
        event = np.asarray(self.event, dtype=bool).reshape(-1)
        if time.shape != event.shape:
            raise ValueError("time and event must have the same length")
        if np.any(~(time > 0)):
            raise ValueError("all times must be > 0")
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)

    def __len__(self):
        return self.time.size

    def __eq__(self, other):
        return (isinstance(other, ArmData) and np.array_equal(self.time, other.time)
                and np.array_equal(self.event, other.event))

    @property
    def n_events(self):
        return int(self.event.sum())

    def records(self, arm):
        return [SurvivalRecord(float(t), bool(e), arm) for t, e in zip(self.time, self.event)]


@dataclass(frozen=True)
class Dataset:
    active: ArmData
    control: ArmData

    @classmethod
    def from_records(cls, records: Sequence[SurvivalRecord]):
        arms = {}
        for arm in (ACTIVE, CONTROL):
            rows = [r for r in records if r.arm == arm]
            arms[arm] = ArmData([r.time for r in rows], [r.event for r in rows])
        return cls(arms[ACTIVE], arms[CONTROL])

    def records(self):
        return self.active.records(ACTIVE) + self.control.records(CONTROL)

    def swapped(self):
        return Dataset(self.control, self.active)

    def pooled(self):
        return ArmData(np.concatenate([self.active.time, self.control.time]),
                       np.concatenate([self.active.event, self.control.event]))


def as_arm(data) -> ArmData:
    """Accept an :class:`ArmData` or a sequence of one arm's records."""
    if isinstance(data, ArmData):
        return data
    data = list(data)
    return ArmData([r.time for r in data], [r.event for r in data])


# -- Kaplan-Meier -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KMCurve:
    time: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray
    variance: np.ndarray

    def __call__(self, t):
        """Right-continuous step-function value at ``t``."""
        idx = np.searchsorted(self.time, np.asarray(t, dtype=float), side="right")
        s = np.concatenate([[1.0], self.survival])
        return _out(s[idx])

    def area(self, tau):
        """Area under the step function on ``[0, tau]``."""
        edges = np.concatenate([[0.0], self.time[self.time < tau], [tau]])
        heights = np.concatenate([[1.0], self.survival[self.time < tau]])
        return float(np.sum(heights * np.diff(edges)))


def km_estimate(records) -> KMCurve:
    """Product-limit estimate with Greenwood variance.

    At tied times, events are taken to precede censorings, so a subject
    censored at an event time still counts in that event's risk set.
    """
    arm = as_arm(records)
    if len(arm) == 0:
        raise ValueError("Kaplan-Meier needs at least one record")
    order = np.argsort(arm.time, kind="stable")
    t, e = arm.time[order], arm.event[order]
    uniq, first = np.unique(t, return_index=True)
    n_at = t.size - first
    d = np.add.reduceat(e.astype(int), first)
    keep = d > 0
    uniq, n_at, d = uniq[keep], n_at[keep], d[keep]
    surv = np.cumprod(1.0 - d / n_at)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(n_at > d, d / (n_at * (n_at - d)), np.inf)
    cum = np.cumsum(terms)
    with np.errstate(invalid="ignore"):
        var = np.where(surv > 0, surv**2 * cum, 0.0)
    return KMCurve(uniq, surv, n_at, d, var)
