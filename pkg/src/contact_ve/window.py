"""Infectious-window length distributions.

A window length ``I`` takes values in the positive integers. The bias
formulas only ever consume its tail ``P(I > s)``; the simulator also needs
to draw lengths.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PMF_TOLERANCE = 1e-12


@dataclass(frozen=True)
class WindowDistribution:
    """Geometric (support 1, 2, ...; mean 1/q) or empirical pmf on 1..S_max.

    Use :meth:`geometric` or :meth:`empirical` rather than the constructor.
    """

    kind: str
    q: float | None = None
    pmf: tuple[float, ...] = ()
    source: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind == "geometric":
            if self.q is None or not 0.0 < self.q < 1.0:
                raise ValueError(f"geometric q must lie in (0, 1), got {self.q}")
        elif self.kind == "empirical":
            pmf = np.asarray(self.pmf, dtype=float)
            if pmf.size == 0:
                raise ValueError("empirical pmf is empty")
            if np.any(pmf < 0):
                raise ValueError("empirical pmf has negative entries")
            if abs(math.fsum(self.pmf) - 1.0) > PMF_TOLERANCE:
                raise ValueError(f"empirical pmf sums to {math.fsum(self.pmf)!r}, not 1")
        else:
            raise ValueError(f"unknown window kind {self.kind!r}")

    @classmethod
    def geometric(cls, q: float) -> WindowDistribution:
        return cls(kind="geometric", q=float(q))

    @classmethod
    def empirical(cls, pmf, source: str | None = None) -> WindowDistribution:
        """``pmf[k-1]`` is ``P(I = k)``."""
        return cls(kind="empirical", pmf=tuple(float(x) for x in pmf), source=source)

    @classmethod
    def from_csv(cls, path) -> WindowDistribution:
        """Read a ``k,prob`` CSV; k must run 1, 2, ... without gaps."""
        path = Path(path)
        ks, probs = [], []
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["k", "prob"]:
                raise ValueError(f"{path}: expected header 'k,prob'")
            for row in reader:
                ks.append(int(row["k"]))
                probs.append(float(row["prob"]))
        if ks != list(range(1, len(ks) + 1)):
            raise ValueError(f"{path}: k must be strictly increasing from 1 without gaps")
        return cls.empirical(probs, source=str(path.resolve()))

    @property
    def mean(self) -> float:
        if self.kind == "geometric":
            return 1.0 / self.q
        return float(np.dot(np.arange(1, len(self.pmf) + 1), self.pmf))

    def tail(self, s):
        """P(I > s) for integer ``s >= 0``; accepts scalars or arrays."""
        s_arr = np.asarray(s)
        if np.any(s_arr < 0):
            raise ValueError("tail is defined for s >= 0")
        if self.kind == "geometric":
            out = (1.0 - self.q) ** s_arr.astype(float)
        else:
            # cdf[k] = P(I <= k), with cdf[0] = 0
            cdf = np.concatenate(([0.0], np.cumsum(self.pmf)))
            idx = np.minimum(s_arr.astype(int), len(self.pmf))
            out = np.clip(1.0 - cdf[idx], 0.0, 1.0)
            out = np.where(idx >= len(self.pmf), 0.0, out)
        return float(out) if np.ndim(out) == 0 else out

    def tail_mass_beyond(self, R: int) -> float:
        """Truncation error scale P(I > R) of the R-term approximation."""
        if R < 1:
            raise ValueError("R must be >= 1")
        return self.tail(R)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "geometric":
            return rng.geometric(self.q, size=size)
        support = np.arange(1, len(self.pmf) + 1)
        return rng.choice(support, size=size, p=np.asarray(self.pmf))

    def to_dict(self) -> dict:
        if self.kind == "geometric":
            return {"kind": "geometric", "q": self.q}
        if self.source is not None:
            return {"kind": "empirical", "path": self.source}
        return {"kind": "empirical", "pmf": list(self.pmf)}

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> WindowDistribution:
        kind = d.get("kind")
        if kind == "geometric":
            return cls.geometric(d["q"])
        if kind == "empirical":
            if "pmf" in d:
                return cls.empirical(d["pmf"])
            path = Path(d["path"])
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            return cls.from_csv(path)
        raise ValueError(f"unknown window kind {kind!r}")

    @classmethod
    def parse(cls, spec: str) -> WindowDistribution:
        """Parse the ``geometric:<q>`` / ``empirical:<path>`` flag grammar."""
        kind, sep, arg = spec.partition(":")
        if not sep:
            raise ValueError(f"window must look like 'geometric:<q>' or 'empirical:<path>', got {spec!r}")
        if kind == "geometric":
            return cls.geometric(float(arg))
        if kind == "empirical":
            return cls.from_csv(arg)
        raise ValueError(f"unknown window kind {kind!r}")

    def __str__(self):
        if self.kind == "geometric":
            return f"geometric:{self.q:g}"
        return f"empirical:{self.source or f'<{len(self.pmf)}-point pmf>'}"


def tail(dist: WindowDistribution, s):
    return dist.tail(s)


def tail_mass_beyond(dist: WindowDistribution, R: int) -> float:
    return dist.tail_mass_beyond(R)
