"""Posterior summaries: mean, HPD interval, ESS, MCSE, time-normalised ESS."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .exceptions import ConstantSeriesError


def _as_series(series, min_len: int) -> np.ndarray:
    x = np.asarray(series, dtype=float).reshape(-1)
    if x.size < min_len:
        raise ValueError(f"need at least {min_len} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    return x


def autocorrelation(x: np.ndarray, lag: int) -> float:
    x = x - x.mean()
    n = x.size
    c0 = np.dot(x, x) / n
    return float(np.dot(x[: n - lag], x[lag:]) / n / c0)


def ess(series) -> float:
    """Effective sample size N / (1 + 2 sum rho_k), summing lags until the
    first negative autocorrelation; clamped to N."""
    x = _as_series(series, 10)
    n = x.size
    xc = x - x.mean()
    c0 = np.dot(xc, xc) / n
    if c0 <= 0 or np.ptp(x) == 0:
        raise ConstantSeriesError("ESS undefined for a constant series")
    total = 0.0
    for lag in range(1, n):
        rho = np.dot(xc[: n - lag], xc[lag:]) / n / c0
        if rho < 0:
            break
        total += rho
    return float(min(n, n / (1.0 + 2.0 * total)))


def hpd(series, level: float = 0.95) -> tuple[float, float]:
    """Shortest interval spanning ceil(level * N) order statistics."""
    x = np.sort(_as_series(series, 20))
    n = x.size
    k = int(math.ceil(level * n))
    k = min(max(k, 1), n)
    widths = x[k - 1:] - x[: n - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


def mcse(series) -> float:
    """Batch-means Monte Carlo standard error with floor(sqrt(N)) batches."""
    x = _as_series(series, 100)
    n_batches = int(math.isqrt(x.size))
    size = x.size // n_batches
    means = x[: n_batches * size].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


@dataclass
class ParamSummary:
    name: str
    mean: float
    hpd_lower: float
    hpd_upper: float
    ess: float
    mcse: float


@dataclass
class SummaryTable:
    rows: list
    wall_seconds: float
    n_samples: int

    @property
    def min_ess_per_second(self) -> float:
        if not self.wall_seconds or self.wall_seconds <= 0:
            return float("nan")
        return min(r.ess for r in self.rows) / self.wall_seconds

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["parameter", "mean", "hpd_lower", "hpd_upper", "ess", "mcse"])
        for r in self.rows:
            w.writerow([r.name] + [f"{v:.10g}" for v in (r.mean, r.hpd_lower, r.hpd_upper, r.ess, r.mcse)])
        w.writerow(["wall_seconds", f"{self.wall_seconds:.10g}", "", "", "", ""])
        w.writerow(["min_ess_per_second", f"{self.min_ess_per_second:.10g}", "", "", "", ""])
        return buf.getvalue()

    def to_text(self) -> str:
        header = f"{'':>16} {'Mean':>10} {'95%HPD':>22} {'ESS':>10} {'MCSE':>10}"
        lines = [header]
        for r in self.rows:
            interval = f"({r.hpd_lower:.4g}, {r.hpd_upper:.4g})"
            lines.append(f"{r.name:>16} {r.mean:>10.4g} {interval:>22} {r.ess:>10.2f} {r.mcse:>10.2g}")
        lines.append(f"{'Time(second)':>16} {self.wall_seconds:>10.2f}")
        lines.append(f"{'minESS/Time':>16} {self.min_ess_per_second:>10.2f}")
        return "\n".join(lines) + "\n"


def summarize(samples, wall_seconds: float = 0.0, names: Optional[Sequence[str]] = None,
              level: float = 0.95) -> SummaryTable:
    """Per-parameter summaries of the full chain (no burn-in, no thinning).

    ``samples`` may be an (N, p) array or a :class:`~iavm.samplers.Chain`.
    """
    if hasattr(samples, "samples"):
        wall_seconds = samples.wall_seconds if not wall_seconds else wall_seconds
        names = names or getattr(samples, "names", None)
        samples = samples.samples
    S = np.asarray(samples, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    if S.shape[0] == 0:
        raise ValueError("empty chain")
    names = list(names) if names is not None else [f"theta_{k + 1}" for k in range(S.shape[1])]
    rows = []
    for k in range(S.shape[1]):
        col = S[:, k]
        try:
            e = ess(col)
        except ConstantSeriesError as exc:
            raise ConstantSeriesError(f"{names[k]}: {exc}") from None
        lo, hi = hpd(col, level)
        rows.append(ParamSummary(names[k], float(col.mean()), lo, hi, e, mcse(col)))
    return SummaryTable(rows, float(wall_seconds), S.shape[0])
