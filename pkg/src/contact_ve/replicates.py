"""Simulate, fit and correct many replicates; summarize the results."""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from functools import partial

import numpy as np

from . import bias, cox
from .simulate import TrialConfig, UndefinedEstimate, sar_ve_estimate, simulate_trial

THREADS_ENV = "CONTACT_VE_THREADS"


@dataclass(frozen=True)
class ReplicateResult:
    replicate: int
    theta_hat: float
    se: float
    ve_star_hat: float
    v_hat: float
    se_v: float
    sar_ve: float
    converged: bool
    error: str = ""


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        n = int(env)
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be >= 1")
        return n
    return os.cpu_count() or 1


def analyze_replicate(config: TrialConfig, params: bias.BiasParams, index: int, tie_method: str = "efron") -> ReplicateResult:
    data = simulate_trial(config, index)
    try:
        sar = sar_ve_estimate(data)
    except UndefinedEstimate:
        sar = math.nan
    try:
        fit = cox.fit(data, tie_method=tie_method)
    except cox.CoxFitError as exc:
        nan = math.nan
        return ReplicateResult(index, nan, nan, nan, nan, nan, sar, False, f"{type(exc).__name__}: {exc}")
    try:
        v_hat = bias.invert_map(params, fit.ve_star_hat)
        se_v = bias.delta_se_from(params, v_hat, fit.se)
        err = ""
    except bias.BiasModelError as exc:
        v_hat = se_v = math.nan
        err = f"{type(exc).__name__}: {exc}"
    return ReplicateResult(index, fit.theta_hat, fit.se, fit.ve_star_hat, v_hat, se_v, sar, fit.converged, err)


def run_replicates(config: TrialConfig, params: bias.BiasParams, tie_method: str = "efron", threads: int | None = None, start: int = 0) -> list[ReplicateResult]:
    """Results for replicates ``start .. start + config.replicates - 1``, in index order.

    Each replicate owns its RNG stream, so the output does not depend on
    ``threads``.
    """
    indices = range(start, start + config.replicates)
    work = partial(analyze_replicate, config, params, tie_method=tie_method)
    threads = default_threads() if threads is None else threads
    if threads <= 1 or config.replicates == 1:
        return [work(i) for i in indices]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(work, indices, chunksize=max(1, config.replicates // (4 * threads))))


def summarize(results: list[ReplicateResult]) -> dict:
    out = {"replicates": len(results)}
    ok = [r for r in results if r.converged and not r.error]
    out["n_ok"] = len(ok)
    for name in ("theta_hat", "se", "ve_star_hat", "v_hat", "se_v", "sar_ve"):
        x = np.array([getattr(r, name) for r in ok], dtype=float)
        x = x[np.isfinite(x)]
        out[f"mean_{name}"] = float(x.mean()) if x.size else math.nan
        out[f"sd_{name}"] = float(x.std(ddof=1)) if x.size > 1 else math.nan
    return out


def as_dict(r: ReplicateResult) -> dict:
    return asdict(r)
