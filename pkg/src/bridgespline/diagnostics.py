"""Posterior comparison and fit-quality metrics.

Two-sample Kolmogorov-Smirnov tests certify that the variational and MCMC
backends agree parameter by parameter; credible bands and mean-absolute error
score fitted curves against simulation truth; timing tables record the
wall-clock comparison between backends.

Pure functions over immutable arrays; per-parameter work may run in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .advi import PosteriorSamples

__all__ = [
    "ks_two_sample",
    "kolmogorov_sf",
    "credible_band",
    "curve_mae",
    "ComparisonReport",
    "compare_posteriors",
    "timing_report",
]


def kolmogorov_sf(t: float, terms: int = 100) -> float:
    """Survival function of the asymptotic Kolmogorov distribution.

    2 * sum_{i>=1} (-1)^(i-1) exp(-2 i^2 t^2); 1 at t <= 0 (the series is an
    asymptotic tail bound and saturates there).
    """
    if t <= 0.05:
        return 1.0
    i = np.arange(1, terms + 1)
    val = 2.0 * np.sum((-1.0) ** (i - 1) * np.exp(-2.0 * i**2 * t**2))
    return float(min(max(val, 0.0), 1.0))


def ks_two_sample(a, b):
    """Two-sample KS statistic and asymptotic p-value.

    D is the supremum gap between the two empirical CDFs; the p-value uses the
    Kolmogorov limit with effective size n_a n_b / (n_a + n_b) (appropriate for
    the >= 1e3 posterior sample sizes this is applied to, not for tiny samples).
    """
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    n_eff = a.size * b.size / (a.size + b.size)
    return d, kolmogorov_sf(np.sqrt(n_eff) * d)


def credible_band(samples: PosteriorSamples, x0, xs, level: float = 0.95):
    """Pointwise mean and central credible band of the fitted mean curve.

    ``x0``/``xs`` are design blocks evaluated on the prediction grid, in the
    same column order as the posterior draws.  Quantiles interpolate linearly
    between order statistics; level 0 collapses the band to the median.
    """
    if not 0.0 <= level < 1.0:
        raise ValueError("level must lie in [0, 1)")
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        x0 = x0[:, None]
    mats = ([x0] if x0.shape[1] else []) + [np.asarray(x, dtype=float) for x in xs]
    x_full = np.hstack(mats) if mats else np.zeros((x0.shape[0], 0))
    p = x_full.shape[1]
    coef = samples.draws[:, :p]
    curves = x_full @ coef.T  # (grid, draws)
    mean = curves.mean(axis=1)
    tail = 0.5 * (1.0 - level)
    lower = np.quantile(curves, tail, axis=1)
    upper = np.quantile(curves, 1.0 - tail, axis=1)
    return mean, lower, upper


def curve_mae(estimate, truth) -> float:
    """Mean absolute error between curves on a shared grid."""
    estimate = np.asarray(estimate, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if estimate.shape != truth.shape:
        raise ValueError("estimate and truth grids differ in length")
    return float(np.mean(np.abs(estimate - truth)))


@dataclass
class ComparisonReport:
    """Per-parameter KS comparison of two posterior sample sets."""

    names: list
    ks_stat: np.ndarray
    p_value: np.ndarray
    reject_fraction: float
    level: float = 0.05
    mae: float | None = None
    coverage: float | None = None
    seconds: dict | None = None

    def to_dict(self) -> dict:
        out = {
            "level": self.level,
            "reject_fraction": self.reject_fraction,
            "parameters": [
                {"name": n, "ks_stat": float(d), "p_value": float(p)}
                for n, d, p in zip(self.names, self.ks_stat, self.p_value)
            ],
            "p_value_method": "asymptotic-kolmogorov",
        }
        if self.mae is not None:
            out["mae"] = self.mae
        if self.coverage is not None:
            out["coverage"] = self.coverage
        if self.seconds is not None:
            out["seconds"] = self.seconds
        return out


def compare_posteriors(
    a: PosteriorSamples, b: PosteriorSamples, level: float = 0.05
) -> ComparisonReport:
    """KS test per parameter plus the fraction rejected at ``level``."""
    if a.names != b.names:
        raise ValueError("posterior sample sets have different parameter sets")
    stats = np.empty(len(a.names))
    pvals = np.empty(len(a.names))
    for i in range(len(a.names)):
        stats[i], pvals[i] = ks_two_sample(a.draws[:, i], b.draws[:, i])
    return ComparisonReport(
        names=list(a.names),
        ks_stat=stats,
        p_value=pvals,
        reject_fraction=float(np.mean(pvals < level)),
        level=level,
    )


def timing_report(runs: list) -> str:
    """CSV table of wall-clock seconds per size and backend.

    ``runs`` holds dicts with keys n, mcmc_seconds, advi_seconds (missing
    values print empty).  An empty list yields a header-only table.
    """
    lines = ["n,mcmc_seconds,advi_seconds"]
    for row in runs:
        mc = row.get("mcmc_seconds")
        ad = row.get("advi_seconds")
        lines.append(
            f"{row['n']},"
            f"{'' if mc is None else f'{mc:.3f}'},"
            f"{'' if ad is None else f'{ad:.3f}'}"
        )
    return "\n".join(lines) + "\n"
