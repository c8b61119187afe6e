"""Exposure-imbalance bias of the Cox-based VE and its correction.

The Cox hazard ratio does not condition on exposure. Vaccinated subjects
survive longer inside an infectious window, so conditional on still being
uninfected they are more likely to be exposed at any given time. The
relative exposure probability

    ratio(v) = sum_s (1 - p(1-v))^s P(I > s) / sum_s (1 - p)^s P(I > s)

(sums over s = 0..R) links the per-contact VE ``v`` to the Cox-based VE

    v* = 1 - (1 - v) * ratio(v).

Truncating at R < horizon can only shrink the ratio, so the corrected
estimate obtained by inverting this map errs downward.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from statistics import NormalDist

import numpy as np

from .window import WindowDistribution

DEFAULT_R = 10
BISECT_TOL = 1e-12
MONOTONE_GRID_STEP = 1e-3
FD_STEP = 1e-6
FD_CHECK_STEP = 1e-7
FD_CHECK_RTOL = 1e-4
MIN_DERIVATIVE = 1e-8
NEGATIVE_BRACKET = -0.5


class BiasModelError(ArithmeticError):
    pass


class OutOfRange(BiasModelError, ValueError):
    pass


class NotMonotone(BiasModelError):
    pass


class DegenerateDerivative(BiasModelError):
    pass


@dataclass(frozen=True)
class BiasParams:
    p: float
    window: WindowDistribution
    R: int = DEFAULT_R
    t_full: int | None = None

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"p must lie in (0, 1), got {self.p}")
        if self.R < 1:
            raise ValueError("R must be >= 1")
        if self.t_full is not None and not self.R < self.t_full:
            raise ValueError("t_full must exceed R")

    @property
    def truncation_tail(self) -> float:
        return self.window.tail_mass_beyond(self.R)

    def to_dict(self) -> dict:
        return {"p": self.p, "R": self.R, "window": self.window.to_dict()}


@lru_cache(maxsize=256)
def _weights(window: WindowDistribution, upper: int) -> np.ndarray:
    w = np.asarray(window.tail(np.arange(upper + 1)), dtype=float)
    w.setflags(write=False)
    return w


def exposure_ratio(params: BiasParams, v, untruncated: bool = False):
    """Vaccine-to-placebo ratio of exposure probabilities among the uninfected.

    Sums run to ``params.R``, or to ``params.t_full`` when ``untruncated``.
    ``v`` may be a scalar or an array.
    """
    upper = params.R
    if untruncated:
        if params.t_full is None:
            raise ValueError("untruncated ratio needs t_full")
        upper = params.t_full
    w = _weights(params.window, upper)
    s = np.arange(upper + 1, dtype=float)
    v_arr = np.asarray(v, dtype=float)
    base = 1.0 - params.p * (1.0 - v_arr[..., None])
    num = (base**s * w).sum(axis=-1)
    den = ((1.0 - params.p) ** s * w).sum()
    out = num / den
    return float(out) if np.ndim(out) == 0 else out


def forward_map(params: BiasParams, v, untruncated: bool = False):
    """Cox-based VE ``v*`` implied by per-contact VE ``v``."""
    v_arr = np.asarray(v, dtype=float)
    out = 1.0 - (1.0 - v_arr) * exposure_ratio(params, v_arr, untruncated=untruncated)
    return float(out) if np.ndim(out) == 0 else out


def log_hazard_ratio(params: BiasParams, v: float) -> float:
    """``beta(v) = log((1 - v) * ratio(v))``, the Cox log HR implied by ``v``."""
    return math.log((1.0 - v) * exposure_ratio(params, v))


@lru_cache(maxsize=1024)
def _assert_monotone(params: BiasParams, lo: float) -> None:
    n = max(int(math.ceil((1.0 - lo) / MONOTONE_GRID_STEP)), 2)
    grid = np.linspace(lo, 1.0, n + 1)
    vals = forward_map(params, grid)
    bad = np.flatnonzero(np.diff(vals) <= 0)
    if bad.size:
        i = bad[0]
        raise NotMonotone(
            f"forward map not increasing on [{grid[i]:.6g}, {grid[i + 1]:.6g}] "
            f"({vals[i]!r} -> {vals[i + 1]!r}) for {params}"
        )


def _lower_bracket(params: BiasParams, v_star: float) -> float:
    if v_star >= 0:
        return max(0.0, v_star)
    # below v = 1 - 1/p the vaccinated per-contact risk would exceed 1
    floor = 1.0 - 1.0 / params.p
    lo = NEGATIVE_BRACKET
    while forward_map(params, lo) > v_star:
        if lo == floor:
            raise OutOfRange(
                f"v_star={v_star} is below the range of the forward map for p={params.p} "
                f"(minimum {forward_map(params, floor):.6g})"
            )
        lo = max(2 * lo, floor)
    return lo


def invert_map(params: BiasParams, v_star: float) -> float:
    """Per-contact VE ``v`` with ``forward_map(params, v) == v_star``, by bisection.

    Negative ``v_star`` (noisy null-effect estimates) is handled by extending
    the bracket below zero.
    """
    v_star = float(v_star)
    if not math.isfinite(v_star):
        raise OutOfRange(f"v_star must be finite, got {v_star}")
    if v_star >= 1.0:
        raise OutOfRange(f"v_star must be < 1, got {v_star}")
    lo = _lower_bracket(params, v_star)
    hi = 1.0
    _assert_monotone(params, min(lo, 0.0))
    if forward_map(params, lo) == v_star:
        return lo
    while hi - lo > BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if forward_map(params, mid) < v_star:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def dbeta_dv(params: BiasParams, v: float, h: float = FD_STEP) -> float:
    hi = min(v + h, 1.0 - 1e-15)
    lo = v - h
    return (log_hazard_ratio(params, hi) - log_hazard_ratio(params, lo)) / (hi - lo)


def delta_se_from(params: BiasParams, v_hat: float, se_beta: float) -> float:
    """Delta-method SE of ``v_hat`` given the SE of the Cox log hazard ratio.

    ``v = g(beta)`` with ``g`` the inverse of ``log_hazard_ratio``, so
    ``SE(v) = SE(beta) / |dbeta/dv|``.
    """
    d = dbeta_dv(params, v_hat, FD_STEP)
    if abs(d) < MIN_DERIVATIVE:
        raise DegenerateDerivative(f"|dbeta/dv| = {abs(d):.3g} at v={v_hat}")
    d_check = dbeta_dv(params, v_hat, FD_CHECK_STEP)
    if abs(d - d_check) > FD_CHECK_RTOL * abs(d):
        raise DegenerateDerivative(
            f"finite differences disagree at v={v_hat}: {d!r} (h={FD_STEP}) vs {d_check!r} (h={FD_CHECK_STEP})"
        )
    return se_beta / abs(d)


def delta_se(params: BiasParams, fit) -> float:
    """Delta-method SE for the corrected VE of a converged Cox fit."""
    if not getattr(fit, "converged", True):
        raise BiasModelError("fit did not converge")
    v_hat = invert_map(params, 1.0 - math.exp(fit.theta_hat))
    return delta_se_from(params, v_hat, fit.se)


def z_quantile(level: float) -> float:
    """Two-sided standard-normal critical value for a ``level`` interval."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    return NormalDist().inv_cdf(0.5 + level / 2.0)


@dataclass(frozen=True)
class CorrectionResult:
    v_hat: float
    se_v: float
    ci_lower: float
    ci_upper: float
    v_star_input: float
    ratio_at_solution: float
    truncation_tail: float
    p: float
    R: int
    window: dict
    level: float = 0.95
    negative_input: bool = False

    def to_dict(self) -> dict:
        return {
            "v_hat": self.v_hat,
            "se_v": self.se_v,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "v_star_input": self.v_star_input,
            "ratio_at_solution": self.ratio_at_solution,
            "truncation_tail": self.truncation_tail,
            "p": self.p,
            "R": self.R,
            "window": self.window,
            "level": self.level,
            "negative_input": self.negative_input,
        }


def correct_estimate(params: BiasParams, theta_hat: float, se_beta: float, level: float = 0.95) -> CorrectionResult:
    """Corrected VE and the Wald-inverted CI from a Cox log HR and its SE.

    ``v0`` is accepted when ``|theta_hat - beta(v0)| < z * se_beta``. Since
    ``beta`` decreases in ``v0`` the accepted set is an interval whose ends
    are the preimages of ``theta_hat -/+ z * se_beta``.
    """
    if se_beta < 0 or not math.isfinite(se_beta):
        raise ValueError(f"se must be a nonnegative number, got {se_beta}")
    z = z_quantile(level)
    v_star = 1.0 - math.exp(theta_hat)
    v_hat = invert_map(params, v_star)
    if se_beta == 0:
        lower = upper = v_hat
        se_v = 0.0
    else:
        lower = invert_map(params, 1.0 - math.exp(theta_hat + z * se_beta))
        upper = invert_map(params, 1.0 - math.exp(theta_hat - z * se_beta))
        se_v = delta_se_from(params, v_hat, se_beta)
    return CorrectionResult(
        v_hat=v_hat,
        se_v=se_v,
        ci_lower=lower,
        ci_upper=upper,
        v_star_input=v_star,
        ratio_at_solution=exposure_ratio(params, v_hat),
        truncation_tail=params.truncation_tail,
        p=params.p,
        R=params.R,
        window=params.window.to_dict(),
        level=level,
        negative_input=v_star < 0,
    )


def invert_ci(params: BiasParams, fit, level: float = 0.95) -> CorrectionResult:
    """:func:`correct_estimate` applied to a :class:`~contact_ve.cox.CoxFit`."""
    if not getattr(fit, "converged", True):
        raise BiasModelError("fit did not converge")
    return correct_estimate(params, fit.theta_hat, fit.se, level)


def se_from_ci(ci_lower_star: float, ci_upper_star: float, level: float = 0.95) -> float:
    """Recover SE(beta) from a reported Wald CI on the Cox-based VE scale."""
    if not ci_lower_star < ci_upper_star < 1.0:
        raise ValueError("need ci_lower < ci_upper < 1")
    z = z_quantile(level)
    return (math.log(1.0 - ci_lower_star) - math.log(1.0 - ci_upper_star)) / (2.0 * z)
