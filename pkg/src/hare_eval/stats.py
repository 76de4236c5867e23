"""Correlation and regression statistics for validating metric outputs
against expert ratings."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import norm as _norm
from scipy.stats import rankdata
from scipy.stats import t as _t


class StatsError(ValueError):
    """Raised on degenerate or misaligned series."""


@dataclass(frozen=True)
class CorrelationResult:
    coefficient: float
    p_value: float
    n: int


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    intercept: float
    r2: float
    rmse: float


@dataclass(frozen=True)
class PairedSamples:
    """Metric and expert values aligned by report id."""

    ids: tuple[str, ...]
    metric: tuple[float, ...]
    expert: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.ids) == len(self.metric) == len(self.expert)):
            raise StatsError("paired series must have equal lengths")


def normalize(values: Sequence[float], max_value: float) -> list[float]:
    """Elementwise division onto [0, 1]."""
    if max_value <= 0:
        raise StatsError("max_value must be positive")
    out = []
    for v in values:
        if not (0.0 <= v <= max_value):
            raise StatsError(f"value {v} outside [0, {max_value}]")
        out.append(v / max_value)
    return out


def filter_zero_expert(pairs: PairedSamples) -> tuple[PairedSamples, int]:
    """Drop pairs with a raw expert score of 0; returns (kept, n_removed)."""
    keep = [i for i, e in enumerate(pairs.expert) if e != 0]
    kept = PairedSamples(
        ids=tuple(pairs.ids[i] for i in keep),
        metric=tuple(pairs.metric[i] for i in keep),
        expert=tuple(pairs.expert[i] for i in keep),
    )
    return kept, len(pairs.expert) - len(keep)


def _check_series(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise StatsError("series must be 1-d and equal length")
    if len(x) < 3:
        raise StatsError(f"need n >= 3, got {len(x)}")
    return x, y


def pearson(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    """Sample Pearson r with a two-sided t-test p-value (n-2 dof)."""
    x, y = _check_series(x, y)
    n = len(x)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise StatsError("degenerate series: zero variance")
    r = float(np.clip(np.dot(dx, dy) / math.sqrt(sxx * syy), -1.0, 1.0))
    if abs(r) == 1.0:
        p = 0.0
    else:
        t_stat = r * math.sqrt((n - 2) / (1.0 - r * r))
        p = float(2.0 * _t.sf(abs(t_stat), n - 2))
    return CorrelationResult(coefficient=r, p_value=min(p, 1.0), n=n)


def spearman(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    """Pearson correlation of average ranks (ties get mean rank)."""
    x, y = _check_series(x, y)
    try:
        return pearson(rankdata(x), rankdata(y))
    except StatsError:
        raise StatsError("degenerate series: all values tied")


def kendall_tau_b(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    """Tau-b with tie corrections in both series; two-sided p-value from
    the normal approximation with tie-adjusted variance."""
    x, y = _check_series(x, y)
    n = len(x)
    concordant = discordant = 0
    for i in range(n):
        for j in range(i + 1, n):
            s = (x[i] - x[j]) * (y[i] - y[j])
            if s > 0:
                concordant += 1
            elif s < 0:
                discordant += 1
    n0 = n * (n - 1) // 2
    xt = Counter(x.tolist()).values()
    yt = Counter(y.tolist()).values()
    n1 = sum(t * (t - 1) // 2 for t in xt)
    n2 = sum(u * (u - 1) // 2 for u in yt)
    if n0 == n1 or n0 == n2:
        raise StatsError("degenerate series: all values tied")
    tau = (concordant - discordant) / math.sqrt((n0 - n1) * (n0 - n2))
    tau = float(np.clip(tau, -1.0, 1.0))

    v0 = n * (n - 1) * (2 * n + 5)
    vt = sum(t * (t - 1) * (2 * t + 5) for t in xt)
    vu = sum(u * (u - 1) * (2 * u + 5) for u in yt)
    v1 = sum(t * (t - 1) for t in xt) * sum(u * (u - 1) for u in yt) / (2.0 * n * (n - 1))
    v2 = (
        sum(t * (t - 1) * (t - 2) for t in xt)
        * sum(u * (u - 1) * (u - 2) for u in yt)
        / (9.0 * n * (n - 1) * (n - 2))
    )
    var = (v0 - vt - vu) / 18.0 + v1 + v2
    if var <= 0:
        p = 0.0
    else:
        z = (concordant - discordant) / math.sqrt(var)
        p = float(2.0 * _norm.sf(abs(z)))
    return CorrelationResult(coefficient=tau, p_value=min(p, 1.0), n=n)


def ols_simple(x: Sequence[float], y: Sequence[float]) -> RegressionResult:
    """Least-squares fit y = slope*x + intercept; in-sample R^2 and
    RMSE with divisor n."""
    x, y = _check_series(x, y)
    n = len(x)
    dx = x - x.mean()
    sxx = float(np.dot(dx, dx))
    if sxx == 0.0:
        raise StatsError("degenerate series: zero variance in x")
    slope = float(np.dot(dx, y - y.mean()) / sxx)
    intercept = float(y.mean() - slope * x.mean())
    residuals = y - (slope * x + intercept)
    sse = float(np.dot(residuals, residuals))
    sst = float(np.dot(y - y.mean(), y - y.mean()))
    r2 = 0.0 if sst == 0.0 else 1.0 - sse / sst
    return RegressionResult(slope=slope, intercept=intercept, r2=r2, rmse=math.sqrt(sse / n))


@dataclass(frozen=True)
class MetricRow:
    name: str
    pearson: CorrelationResult
    spearman: CorrelationResult
    kendall: CorrelationResult
    regression: RegressionResult


def align_by_id(metric_values: Mapping[str, float], expert_values: Mapping[str, float]) -> tuple[list, list, list]:
    """Intersection-free alignment: both maps must cover the same ids."""
    missing = sorted(set(expert_values) - set(metric_values))
    extra = sorted(set(metric_values) - set(expert_values))
    if missing or extra:
        raise StatsError(
            f"misaligned report ids: missing from metric {missing[:10]}, "
            f"missing from expert {extra[:10]}"
        )
    ids = sorted(metric_values)
    return ids, [metric_values[i] for i in ids], [expert_values[i] for i in ids]


def compare_metrics(table: Mapping[str, Sequence[float]], expert: Sequence[float]) -> list[MetricRow]:
    """Per-metric correlation and regression rows, sorted ascending by
    Pearson r. Series must be pre-aligned and normalized."""
    expert = list(expert)
    for name, values in table.items():
        if len(values) != len(expert):
            raise StatsError(f"metric {name!r}: {len(values)} values for {len(expert)} expert scores")
    rows = [
        MetricRow(
            name=name,
            pearson=pearson(values, expert),
            spearman=spearman(values, expert),
            kendall=kendall_tau_b(values, expert),
            regression=ols_simple(values, expert),
        )
        for name, values in table.items()
    ]
    rows.sort(key=lambda row: (row.pearson.coefficient, row.name))
    return rows


def format_table(rows: Sequence[MetricRow]) -> str:
    """Aligned plain-text rendering of comparison rows."""
    header = ("metric", "n", "r", "r_p", "rho", "rho_p", "tau", "tau_p", "r2", "rmse")
    body = [
        (
            row.name,
            str(row.pearson.n),
            f"{row.pearson.coefficient:.4f}",
            f"{row.pearson.p_value:.3g}",
            f"{row.spearman.coefficient:.4f}",
            f"{row.spearman.p_value:.3g}",
            f"{row.kendall.coefficient:.4f}",
            f"{row.kendall.p_value:.3g}",
            f"{row.regression.r2:.4f}",
            f"{row.regression.rmse:.4f}",
        )
        for row in rows
    ]
    widths = [max(len(header[k]), *(len(r[k]) for r in body)) if body else len(header[k]) for k in range(len(header))]
    lines = []
    for cells in [header, *body]:
        lines.append("  ".join(cell.ljust(widths[k]) for k, cell in enumerate(cells)).rstrip())
    return "\n".join(lines) + "\n"
