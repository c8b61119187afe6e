"""Cox partial likelihood for a single binary treatment indicator.

With one 0/1 covariate the data reduce to, at each distinct event time,
the risk-set sizes ``(n0, n1)`` and event counts ``(d0, d1)`` per arm, so
fitting a 10,000-subject trial costs a few hundred vector operations.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

SCORE_TOL = 1e-10
STEP_TOL = 1e-12
MAX_ITER = 100
LL_SLACK = 1e-13


class CoxFitError(RuntimeError):
    pass


class NoEvents(CoxFitError):
    pass


class MonotoneLikelihood(CoxFitError):
    """All events fall in one arm; the MLE of the log hazard ratio diverges."""


class NonConvergence(CoxFitError):
    def __init__(self, msg, theta, score, iterations):
        super().__init__(f"{msg} (theta={theta:.6g}, score={score:.3g}, iterations={iterations})")
        self.theta = theta
        self.score = score
        self.iterations = iterations


@dataclass(frozen=True)
class CoxFit:
    theta_hat: float
    se: float
    n_events: int
    tie_method: str = "efron"
    iterations: int = 0
    converged: bool = True

    @property
    def ve_star_hat(self) -> float:
        return 1.0 - math.exp(self.theta_hat)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ve_star_hat"] = self.ve_star_hat
        return {k: d[k] for k in ("theta_hat", "se", "ve_star_hat", "n_events", "tie_method", "converged", "iterations")}


@dataclass(frozen=True)
class RiskTable:
    """Per distinct event time: risk-set sizes and event counts by arm."""

    n0: np.ndarray
    n1: np.ndarray
    d0: np.ndarray
    d1: np.ndarray

    @classmethod
    def from_arrays(cls, time, status, arm) -> RiskTable:
        time = np.asarray(time)
        status = np.asarray(status).astype(bool)
        arm = np.asarray(arm).astype(bool)
        if not (time.shape == status.shape == arm.shape):
            raise ValueError("time, status and arm must have the same length")
        event_times = np.unique(time[status])
        # subjects at risk at t: time >= t
        t0 = np.sort(time[~arm])
        t1 = np.sort(time[arm])
        n0 = len(t0) - np.searchsorted(t0, event_times, side="left")
        n1 = len(t1) - np.searchsorted(t1, event_times, side="left")
        idx = np.searchsorted(event_times, time[status])
        d1 = np.bincount(idx[arm[status]], minlength=len(event_times))
        d0 = np.bincount(idx[~arm[status]], minlength=len(event_times))
        return cls(n0=n0.astype(float), n1=n1.astype(float), d0=d0.astype(float), d1=d1.astype(float))


class PartialLikelihood:
    """Log partial likelihood, score and information in the log hazard ratio."""

    def __init__(self, table: RiskTable, tie_method: str = "efron"):
        if tie_method not in ("efron", "breslow"):
            raise ValueError(f"unknown tie method {tie_method!r}")
        self.table = table
        self.tie_method = tie_method
        d = (table.d0 + table.d1).astype(np.int64)
        # one row per (event time, l) with l = 0 .. d-1
        self._row = np.repeat(np.arange(len(d)), d)
        offsets = np.repeat(np.cumsum(d) - d, d)
        l = np.arange(d.sum()) - offsets
        if tie_method == "efron":
            self._frac = l / np.repeat(d, d)
        else:
            self._frac = np.zeros(d.sum())
        self.sum_d1 = float(table.d1.sum())

    def _terms(self, theta):
        t = self.table
        a = math.exp(theta)
        r, f = self._row, self._frac
        denom = (t.n0[r] + t.n1[r] * a) - f * (t.d0[r] + t.d1[r] * a)
        ddenom = a * (t.n1[r] - f * t.d1[r])
        return denom, ddenom

    def score_limits(self) -> tuple[float, float]:
        """Score as theta -> -inf and theta -> +inf.

        The score decreases in theta, so a finite maximizer exists only when
        the first limit is positive and the second negative.
        """
        t, r, f = self.table, self._row, self._frac
        # each term's weight tends to 0 or 1 depending on which arm empties the denominator
        w_lo = (t.n0[r] - f * t.d0[r]) <= 0
        w_hi = (t.n1[r] - f * t.d1[r]) > 0
        return self.sum_d1 - float(w_lo.sum()), self.sum_d1 - float(w_hi.sum())

    def loglik(self, theta: float) -> float:
        denom, _ = self._terms(theta)
        return self.sum_d1 * theta - float(np.log(denom).sum())

    def score_info(self, theta: float) -> tuple[float, float]:
        denom, ddenom = self._terms(theta)
        w = ddenom / denom
        return self.sum_d1 - float(w.sum()), float((w * (1.0 - w)).sum())


def fit_arrays(time, status, arm, tie_method: str = "efron") -> CoxFit:
    status = np.asarray(status).astype(bool)
    arm = np.asarray(arm).astype(bool)
    n_events = int(status.sum())
    if n_events == 0:
        raise NoEvents("no events in the data")
    ev1 = int((status & arm).sum())
    if ev1 == 0 or ev1 == n_events:
        raise MonotoneLikelihood(
            f"all {n_events} events are in arm {1 if ev1 else 0}; the log hazard ratio diverges"
        )
    pl = PartialLikelihood(RiskTable.from_arrays(time, status, arm), tie_method)
    s_lo, s_hi = pl.score_limits()
    if s_lo <= 0 or s_hi >= 0:
        direction = "-inf" if s_lo <= 0 else "+inf"
        raise MonotoneLikelihood(f"the partial likelihood increases toward theta = {direction}; no finite maximizer")

    theta = 0.0
    ll = pl.loglik(theta)
    score, info = pl.score_info(theta)
    for it in range(1, MAX_ITER + 1):
        if info <= 0:
            raise NonConvergence("non-positive information", theta, score, it)
        step = score / info
        new = theta + step
        new_ll = pl.loglik(new)
        # step halving; the slack keeps rounding noise at the optimum from
        # shrinking a good Newton step
        halvings = 0
        while new_ll < ll - LL_SLACK * (1.0 + abs(ll)) and halvings < 60:
            step /= 2
            new = theta + step
            new_ll = pl.loglik(new)
            halvings += 1
        theta, ll = new, new_ll
        score, info = pl.score_info(theta)
        # convergence is judged on the next full Newton step, not the halved one
        if abs(score) < SCORE_TOL or (info > 0 and abs(score / info) < STEP_TOL):
            return CoxFit(
                theta_hat=theta,
                se=math.sqrt(1.0 / info),
                n_events=n_events,
                tie_method=tie_method,
                iterations=it,
                converged=True,
            )
    raise NonConvergence("iteration cap reached", theta, score, MAX_ITER)


def fit(dataset, tie_method: str = "efron") -> CoxFit:
    """Fit the treatment log hazard ratio of a :class:`SurvivalDataset`."""
    return fit_arrays(dataset.time, dataset.status, dataset.arm, tie_method=tie_method)
