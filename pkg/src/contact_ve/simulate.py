"""Discrete-time vaccine trial simulator under the infectious-window model.

Each subject, on each day while uninfected, starts a new infectious window
with probability ``m``. A window entered on day ``t`` with length ``I``
exposes the subject on days ``t .. t+I-1``; every active window gives one
independent infection chance per day, ``p`` for placebo and ``p*(1-v)``
for vaccinated subjects. The first success ends follow-up.

Because every window's infection draws are independent of every other
window, the first infecting day of a window is ``start + K - 1`` with
``K ~ Geometric(p_arm)`` (kept only if ``K <= I``), and the subject's
infection day is the minimum over its windows. That lets a whole trial be
drawn in a handful of vectorized passes instead of a day-by-day loop.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .window import WindowDistribution

DATASET_COLUMNS = ("subject_id", "arm", "time", "status", "exposure_days", "exposure_events")


@dataclass(frozen=True)
class TrialConfig:
    n_per_arm: int
    m: float
    p: float
    v: float
    horizon: int
    window: WindowDistribution
    seed: int = 0
    replicates: int = 1
    entry_while_exposed: bool = True

    def __post_init__(self):
        if self.n_per_arm < 1:
            raise ValueError("n_per_arm must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not 0.0 < self.m < 1.0:
            raise ValueError(f"m must lie in (0, 1), got {self.m}")
        # p = 0 is accepted as a boundary case (no infections ever)
        if not 0.0 <= self.p < 1.0:
            raise ValueError(f"p must lie in [0, 1), got {self.p}")
        if not 0.0 < self.v < 1.0:
            raise ValueError(f"v must lie in (0, 1), got {self.v}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["window"] = self.window.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> TrialConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        d = dict(d)
        window = d.pop("window")
        if not isinstance(window, WindowDistribution):
            window = WindowDistribution.from_dict(window, base_dir=base_dir)
        return cls(window=window, **d)

    @classmethod
    def from_json(cls, path) -> TrialConfig:
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base_dir=path.parent)

    def with_(self, **changes) -> TrialConfig:
        return replace(self, **changes)


class SubjectRecord(NamedTuple):
    subject_id: int
    arm: int
    time: int
    status: int
    exposure_days: int
    exposure_events: int


@dataclass
class SurvivalDataset:
    """Column-oriented per-subject trial outcome.

    ``time`` is the infection day (``status == 1``) or the horizon
    (censored). ``exposure_days`` counts days with at least one active
    window up to exit; ``exposure_events`` counts active windows per day,
    i.e. individual infection chances.
    """

    subject_id: np.ndarray
    arm: np.ndarray
    time: np.ndarray
    status: np.ndarray
    exposure_days: np.ndarray
    exposure_events: np.ndarray
    config: TrialConfig | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.subject_id)

    def records(self) -> Iterator[SubjectRecord]:
        cols = [getattr(self, c) for c in DATASET_COLUMNS]
        for row in zip(*cols):
            yield SubjectRecord(*(int(x) for x in row))

    def infections(self, arm: int) -> int:
        return int(self.status[self.arm == arm].sum())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(DATASET_COLUMNS)
            w.writerows(self.records())

    @classmethod
    def from_csv(cls, path) -> SurvivalDataset:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = np.array([[int(x) for x in row] for row in reader], dtype=np.int64).reshape(-1, len(header))
        missing = {"arm", "time", "status"} - set(header)
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        col = {name: rows[:, i] for i, name in enumerate(header)}
        n = rows.shape[0]
        zeros = np.zeros(n, dtype=np.int64)
        return cls(
            subject_id=col.get("subject_id", np.arange(n)),
            arm=col["arm"],
            time=col["time"],
            status=col["status"],
            exposure_days=col.get("exposure_days", zeros),
            exposure_events=col.get("exposure_events", zeros),
        )


def replicate_rng(seed: int, replicate_index: int) -> np.random.Generator:
    """Independent Philox stream for one replicate.

    The replicate index goes into the seed sequence's spawn key, so streams
    for different replicates never share key material regardless of the
    order or thread they are drawn on.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(replicate_index,))
    return np.random.Generator(np.random.Philox(ss))


def _drop_entries_while_exposed(subj, start, length):
    # Entries arrive sorted by (subject, day); keep one only if every
    # previously kept window of the same subject has already closed.
    keep = np.ones(len(subj), dtype=bool)
    prev_subj, open_until = -1, 0
    for i, (s, d, n) in enumerate(zip(subj.tolist(), start.tolist(), length.tolist())):
        if s != prev_subj:
            prev_subj, open_until = s, 0
        if d <= open_until:
            keep[i] = False
        else:
            open_until = d + n - 1
    return keep


def simulate_trial(config: TrialConfig, replicate_index: int = 0) -> SurvivalDataset:
    """Draw one trial; deterministic in ``(config.seed, replicate_index)``."""
    if replicate_index < 0:
        raise ValueError("replicate_index must be >= 0")
    rng = replicate_rng(config.seed, replicate_index)
    n, horizon = config.n_per_arm, config.horizon
    n_total = 2 * n
    arm = np.repeat(np.array([0, 1], dtype=np.int64), n)

    entered = rng.random((n_total, horizon)) < config.m
    subj, start = np.nonzero(entered)
    start = start + 1  # days are 1-based
    length = np.asarray(config.window.sample(rng, len(subj)), dtype=np.int64)
    u = rng.random(len(subj))

    if not config.entry_while_exposed and len(subj):
        keep = _drop_entries_while_exposed(subj, start, length)
        subj, start, length, u = subj[keep], start[keep], length[keep], u[keep]

    p_arm = np.where(arm[subj] == 1, config.p * (1.0 - config.v), config.p)
    with np.errstate(divide="ignore"):
        # inverse-cdf geometric on {1, 2, ...}; p_arm == 0 gives inf
        k = np.floor(np.log1p(-u) / np.log1p(-p_arm)) + 1.0
    infect_day = np.where(k <= length, start + k - 1.0, np.inf)

    first = np.full(n_total, np.inf)
    np.minimum.at(first, subj, infect_day)
    status = (first <= horizon).astype(np.int64)
    time = np.where(status == 1, first, horizon).astype(np.int64)

    # exposure coverage, clipped to each subject's exit day
    end = np.minimum(start + length - 1, time[subj])
    live = start <= end
    diff = np.zeros((n_total, horizon + 2), dtype=np.int32)
    np.add.at(diff, (subj[live], start[live]), 1)
    np.add.at(diff, (subj[live], end[live] + 1), -1)
    active = np.cumsum(diff, axis=1)[:, 1 : horizon + 1]

    return SurvivalDataset(
        subject_id=np.arange(n_total, dtype=np.int64),
        arm=arm,
        time=time,
        status=status,
        exposure_days=(active > 0).sum(axis=1).astype(np.int64),
        exposure_events=active.sum(axis=1).astype(np.int64),
        config=config,
    )


class UndefinedEstimate(ValueError):
    pass


def sar_ve_estimate(dataset: SurvivalDataset) -> float:
    """Exposure-conditioned VE: one minus the ratio of per-contact attack rates."""
    vacc = dataset.arm == 1
    plac = ~vacc
    events_v = int(dataset.exposure_events[vacc].sum())
    events_p = int(dataset.exposure_events[plac].sum())
    inf_v = int(dataset.status[vacc].sum())
    inf_p = int(dataset.status[plac].sum())
    return sar_ve_from_counts(inf_v, events_v, inf_p, events_p)


def sar_ve_from_counts(inf_vacc, contacts_vacc, inf_plac, contacts_plac) -> float:
    if contacts_vacc <= 0 or contacts_plac <= 0:
        raise UndefinedEstimate("an arm has no exposure events")
    if inf_plac <= 0:
        raise UndefinedEstimate("no placebo infections")
    return 1.0 - (inf_vacc / contacts_vacc) / (inf_plac / contacts_plac)
