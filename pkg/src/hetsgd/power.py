"""Computation power profiles and the work they produce.

A worker with power v(t) >= 0 finishes one stochastic gradient each time
its accumulated work V(t) = integral of v over [0, t] grows by one unit.
Infinite times are represented by ``math.inf``: IEEE infinity already
saturates under addition and max, so it doubles as the sentinel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

INFINITY = math.inf
SNAP_TOL = 1e-9
LEVEL_TOL = 1e-12
HORIZON = 1e12


def snap(w: float) -> float:
    """Round ``w`` to the nearest integer when it is within SNAP_TOL (relative) of it."""
    if not math.isfinite(w):
        return w
    r = round(w)
    if abs(w - r) <= SNAP_TOL * max(1.0, abs(w)):
        return float(r)
    return w


def snapped_floor(w: float) -> float:
    w = snap(w)
    return math.floor(w) if math.isfinite(w) else w


def snapped_ceil(w: float) -> int:
    """Ceiling that ignores floating noise, e.g. 24 / 0.01 -> 2400."""
    return int(math.ceil(snap(w)))


def _scalar_or_array(t, out):
    return float(out) if np.ndim(t) == 0 else out


def _bisect_increasing(fun, y: float, lo: float, hi: float) -> float:
    """Smallest t in [lo, hi] with fun(t) >= y for a nondecreasing fun."""
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if fun(mid) >= y:
            hi = mid
        else:
            lo = mid
    return hi


# -- trends for ScaledTrend ------------------------------------------------


@dataclass(frozen=True)
class SineOffset:
    """g(t) = offset + amplitude * sin(t)."""

    offset: float = 1.01
    amplitude: float = 1.0

    def __post_init__(self):
        if self.offset <= 0 or self.amplitude < 0 or self.amplitude > self.offset:
            raise ValueError("SineOffset needs 0 <= amplitude <= offset and offset > 0")

    def rate(self, t):
        return self.offset + self.amplitude * np.sin(t)

    def integral(self, t):
        return self.offset * t - self.amplitude * np.cos(t) + self.amplitude

    def total(self) -> float:
        return INFINITY

    def inverse(self, y: float) -> float:
        if y <= 0:
            return 0.0
        if math.isinf(y):
            return INFINITY
        # offset*t <= G(t) <= offset*t + 2*amplitude
        lo = max(0.0, (y - 2 * self.amplitude) / self.offset)
        hi = y / self.offset
        return _bisect_increasing(self.integral, y, lo, hi)


@dataclass(frozen=True)
class PolyGrowth:
    """g(t) = (1 + t) ** exponent."""

    exponent: float = 1.0

    def rate(self, t):
        return (1.0 + np.asarray(t, dtype=float)) ** self.exponent

    def integral(self, t):
        e1 = self.exponent + 1.0
        t = np.asarray(t, dtype=float)
        if e1 == 0:
            return np.log1p(t)
        return ((1.0 + t) ** e1 - 1.0) / e1

    def total(self) -> float:
        e1 = self.exponent + 1.0
        return INFINITY if e1 >= 0 else -1.0 / e1

    def inverse(self, y: float) -> float:
        if y <= 0:
            return 0.0
        e1 = self.exponent + 1.0
        if e1 == 0:
            return math.expm1(y) if y < 700 else INFINITY
        base = 1.0 + e1 * y
        if base <= 0:
            return INFINITY  # integral is bounded when exponent < -1
        return base ** (1.0 / e1) - 1.0


@dataclass(frozen=True)
class PiecewiseTrend:
    breakpoints: tuple
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "_pc", PiecewiseConstant(self.breakpoints, self.values))

    def rate(self, t):
        return self._pc.power_at(t)

    def integral(self, t):
        return self._pc.cumulative(t)

    def total(self) -> float:
        return self._pc.cumulative(INFINITY)

    def inverse(self, y: float) -> float:
        return self._pc.inverse_level(y)


Trend = Union[SineOffset, PolyGrowth, PiecewiseTrend]


# -- profiles ---------------------------------------------------------------


class _Profile:
    """Shared interface: power_at, cumulative V(t) and inverse_level."""

    def power_at(self, t):
        raise NotImplementedError

    def cumulative(self, t):
        raise NotImplementedError

    def inverse_level(self, level: float) -> float:
        """min{t >= 0 : V(t) >= level}, INFINITY if never reached."""
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(_Profile):
    v: float

    def __post_init__(self):
        if not self.v >= 0:
            raise ValueError("power must be nonnegative")

    def power_at(self, t):
        return _scalar_or_array(t, np.full(np.shape(t), float(self.v)))

    def cumulative(self, t):
        if np.ndim(t) == 0 and math.isinf(t):
            return INFINITY if self.v > 0 else 0.0
        return _scalar_or_array(t, self.v * np.asarray(t, dtype=float))

    def inverse_level(self, level):
        if level <= 0:
            return 0.0
        if self.v == 0:
            return INFINITY
        return level / self.v


@dataclass(frozen=True)
class ScaledTrend(_Profile):
    """v(t) = v * g(t) for a shared trend g."""

    v: float
    trend: Trend = field(default_factory=SineOffset)

    def __post_init__(self):
        if not self.v >= 0:
            raise ValueError("power must be nonnegative")

    def power_at(self, t):
        return _scalar_or_array(t, self.v * np.asarray(self.trend.rate(t), dtype=float))

    def cumulative(self, t):
        if np.ndim(t) == 0 and math.isinf(t):
            if self.v == 0:
                return 0.0
            return self.v * self.trend.total()
        return _scalar_or_array(t, self.v * np.asarray(self.trend.integral(t), dtype=float))

    def inverse_level(self, level):
        if level <= 0:
            return 0.0
        if self.v == 0:
            return INFINITY
        return self.trend.inverse(level / self.v)


@dataclass(frozen=True)
class PeriodicOutage(_Profile):
    """Power v on [k*period, k*period + active_len] for k = 0, 1, ...; zero otherwise."""

    v: float
    period: float
    active_len: float = 1.0

    def __post_init__(self):
        if not self.v >= 0:
            raise ValueError("power must be nonnegative")
        if not (self.period > 0 and 0 <= self.active_len <= self.period):
            raise ValueError("need period > 0 and 0 <= active_len <= period")

    def power_at(self, t):
        t = np.asarray(t, dtype=float)
        phase = t - np.floor(t / self.period) * self.period
        return _scalar_or_array(t, np.where(phase <= self.active_len, float(self.v), 0.0))

    def cumulative(self, t):
        if np.ndim(t) == 0 and math.isinf(t):
            return INFINITY if self.v * self.active_len > 0 else 0.0
        t = np.asarray(t, dtype=float)
        m = np.floor(t / self.period)
        out = self.v * (m * self.active_len + np.minimum(t - m * self.period, self.active_len))
        return _scalar_or_array(t, out)

    def inverse_level(self, level):
        if level <= 0:
            return 0.0
        per_period = self.v * self.active_len
        if per_period == 0:
            return INFINITY
        q = level / per_period
        full = round(q)
        if abs(q - full) > LEVEL_TOL * max(1.0, q):
            full = math.floor(q)
        elif full >= 1:
            # reached exactly at the end of an active window
            return (full - 1) * self.period + self.active_len
        rem = level - full * per_period
        return full * self.period + min(rem / self.v, self.active_len)


@dataclass(frozen=True)
class PiecewiseConstant(_Profile):
    """Right-continuous steps: values[j] on [breakpoints[j], breakpoints[j+1])."""

    breakpoints: tuple
    values: tuple

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if b.ndim != 1 or b.shape != v.shape or len(b) == 0:
            raise ValueError("breakpoints and values must be equal-length 1-d sequences")
        if b[0] != 0 or np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must start at 0 and strictly increase")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("powers must be finite and nonnegative")
        cum = np.concatenate([[0.0], np.cumsum(v[:-1] * np.diff(b))])
        object.__setattr__(self, "breakpoints", tuple(b.tolist()))
        object.__setattr__(self, "values", tuple(v.tolist()))
        object.__setattr__(self, "_b", b)
        object.__setattr__(self, "_v", v)
        object.__setattr__(self, "_cum", cum)

    def _segment(self, t):
        return np.searchsorted(self._b, t, side="right") - 1

    def power_at(self, t):
        j = self._segment(np.asarray(t, dtype=float))
        return _scalar_or_array(t, self._v[j])

    def cumulative(self, t):
        if np.ndim(t) == 0 and math.isinf(t):
            return INFINITY if self._v[-1] > 0 else float(self._cum[-1])
        t = np.asarray(t, dtype=float)
        j = self._segment(t)
        return _scalar_or_array(t, self._cum[j] + self._v[j] * (t - self._b[j]))

    def inverse_level(self, level):
        if level <= 0:
            return 0.0
        tol = LEVEL_TOL * max(1.0, abs(level))
        k = int(np.searchsorted(self._cum, level - tol, side="left"))
        if k >= len(self._cum):
            if self._v[-1] == 0:
                return INFINITY
            return float(self._b[-1] + (level - self._cum[-1]) / self._v[-1])
        j = k - 1  # the root lies in segment j, which has positive power
        t = self._b[j] + (level - self._cum[j]) / self._v[j]
        return float(min(t, self._b[k]))


@dataclass(frozen=True)
class Trace(PiecewiseConstant):
    """Sampled power, held between samples with left-continuous steps.

    Sample j applies on (t_j, t_{j+1}]; the first sample also covers t = 0 and
    the last one holds forever.  V is integrated exactly.
    """

    def __init__(self, sample_times, sample_powers):
        super().__init__(tuple(sample_times), tuple(sample_powers))

    @property
    def sample_times(self):
        return self.breakpoints

    @property
    def sample_powers(self):
        return self.values

    def power_at(self, t):
        t = np.asarray(t, dtype=float)
        j = np.maximum(np.searchsorted(self._b, t, side="left") - 1, 0)
        return _scalar_or_array(t, self._v[j])


PowerProfile = Union[Constant, ScaledTrend, PeriodicOutage, PiecewiseConstant, Trace]


def random_outage_trace(rng: np.random.Generator, v: float, mean_up: float,
                        mean_down: float, horizon: float) -> Trace:
    """Alternate exponential up/down periods until ``horizon``; the worker stays up afterwards."""
    times, powers = [0.0], [float(v)]
    t, up = 0.0, True
    while t < horizon:
        t += rng.exponential(mean_up if up else mean_down)
        up = not up
        times.append(t)
        powers.append(float(v) if up else 0.0)
    if powers[-1] == 0.0:
        times.append(times[-1] + rng.exponential(mean_down))
        powers.append(float(v))
    return Trace(times, powers)


# -- module level API ------------------------------------------------------


def _check_time(t):
    if np.any(np.asarray(t) < 0):
        raise ValueError("time must be nonnegative")


def power_at(profile: PowerProfile, t):
    _check_time(t)
    return profile.power_at(t)


def work(profile: PowerProfile, t0: float, t1: float) -> float:
    """Work done on [t0, t1]; INFINITY when t1 is infinite and power does not die out."""
    _check_time(t0)
    if t1 < t0:
        raise ValueError("work requires t0 <= t1")
    if t1 == t0:
        return 0.0
    return profile.cumulative(t1) - profile.cumulative(t0)


def grad_count(profile: PowerProfile, t0: float, t1: float) -> float:
    """Number of gradients one worker completes on [t0, t1] if it never idles."""
    return snapped_floor(work(profile, t0, t1))


def inverse_work(profile: PowerProfile, S: float, base: float = 0.0) -> float:
    """Leftmost t >= base with V(t) - V(base) >= S; INFINITY if never."""
    if S < 0:
        raise ValueError("work amount must be nonnegative")
    if S == 0:
        return float(base)
    if math.isinf(S) or math.isinf(base):
        return INFINITY
    t = profile.inverse_level(profile.cumulative(base) + S)
    if t > HORIZON:
        return INFINITY
    return max(float(base), float(t))


def completion_time(profile: PowerProfile, start: float) -> float:
    """Time at which a gradient started at ``start`` finishes."""
    return inverse_work(profile, 1.0, start)


def validate_profiles(profiles: Sequence[PowerProfile]) -> None:
    if len(profiles) == 0:
        raise ValueError("at least one worker is required")
