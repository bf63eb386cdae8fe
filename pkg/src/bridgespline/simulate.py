"""Synthetic data generators used by the verification harness.

Three families: a fixed spline-coefficient curve observed with unit-variance
noise on a regular grid (with 100 replicas sharing one truth), size-scaled
versions of the same law for timing studies, and additive squared-exponential
Gaussian-process covariate effects.

All generators are deterministic given (spec, seed); replicas use seeds
derived with SeedSequence.spawn so they can be produced in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSpec, bspline_spec_from_grid, build_design

__all__ = [
    "Scenario1Spec",
    "Scenario1Data",
    "GPSpec",
    "Scenario3Data",
    "scenario1_basis",
    "simulate_scenario1",
    "simulate_scaled",
    "simulate_gp_effect",
    "simulate_scenario3",
]

# 1-based inclusive coefficient ranges with (mean, spread); the remaining
# indices {11..15} u {26..30} are structural zeros
COEF_BLOCKS = (((1, 10), 5.0, 2.0), ((16, 25), 10.0, 2.0), ((31, 34), 4.0, 0.25))
ZERO_BLOCKS = ((11, 15), (26, 30))


@dataclass
class Scenario1Spec:
    """Replicated small-sample design: one true curve, many noisy copies."""

    n: int = 100
    replicas: int = 100
    sigma2: float = 1.0
    knot_lo: float = -0.066
    knot_hi: float = 1.066
    knot_spacing: float = 0.033
    degree: int = 3
    target_k: int = 34
    coef_blocks: tuple = COEF_BLOCKS
    zero_blocks: tuple = ZERO_BLOCKS
    spread_is_sd: bool = True        # False reads the spread as a variance
    round_coefficients: bool = True  # truncate the drawn coefficients to integers
    seed: int = 0


@dataclass
class Scenario1Data:
    y: np.ndarray          # (replicas, n)
    x: np.ndarray          # (n,)
    beta_true: np.ndarray  # (K,)
    curve: np.ndarray      # (n,) true mean
    basis: BasisSpec


@dataclass
class GPSpec:
    """Squared-exponential kernel exp(-(z - z')^2 / tau) with diagonal jitter."""

    tau: float = 1.0
    jitter: float = 1e-8

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.jitter < 0:
            raise ValueError("jitter must be nonnegative")


@dataclass
class Scenario3Data:
    y: np.ndarray
    x: np.ndarray          # (n, 2)
    f1: np.ndarray
    f2: np.ndarray
    intercept: float
    noise: np.ndarray


def scenario1_basis(spec: Scenario1Spec | None = None) -> BasisSpec:
    """Cubic B-spline layout on the scenario grid, extended one knot per side.

    The extension makes exactly ``target_k`` basis functions and places the
    last basis function's support just beyond the data range, so its design
    column is zero except for the final grid point.
    """
    spec = spec or Scenario1Spec()
    return bspline_spec_from_grid(
        spec.knot_lo, spec.knot_hi, spec.knot_spacing,
        degree=spec.degree, pad_left=1, pad_right=1, target_k=spec.target_k,
    )


def draw_true_beta(spec: Scenario1Spec, rng: np.random.Generator) -> np.ndarray:
    beta = np.zeros(spec.target_k)
    for (lo, hi), mean, spread in spec.coef_blocks:
        sd = spread if spec.spread_is_sd else np.sqrt(spread)
        vals = rng.normal(mean, sd, hi - lo + 1)
        beta[lo - 1 : hi] = np.rint(vals) if spec.round_coefficients else vals
    return beta


def simulate_scenario1(spec: Scenario1Spec | None = None) -> Scenario1Data:
    """Shared true coefficients, replicated Gaussian observations on a grid."""
    spec = spec or Scenario1Spec()
    children = np.random.SeedSequence(spec.seed).spawn(spec.replicas + 1)
    beta = draw_true_beta(spec, np.random.default_rng(children[0]))
    x = np.linspace(0.0, 1.0, spec.n)
    design = build_design(x, scenario1_basis(spec))
    curve = design.values @ beta
    sd = np.sqrt(spec.sigma2)
    y = np.empty((spec.replicas, spec.n))
    for r in range(spec.replicas):
        y[r] = curve + sd * np.random.default_rng(children[r + 1]).standard_normal(spec.n)
    return Scenario1Data(y, x, beta, curve, design.spec)


def simulate_scaled(
    n: int,
    spec: Scenario1Spec | None = None,
    max_design_bytes: int = 4 * 1024**3,
) -> Scenario1Data:
    """Scenario-1 generative law at an arbitrary sample size (single replica).

    Refuses up front if the dense n x K design would exceed
    ``max_design_bytes``.
    """
    spec = spec or Scenario1Spec()
    needed = 8 * n * spec.target_k
    if needed > max_design_bytes:
        raise MemoryError(
            f"design matrix would need {needed / 1024**3:.1f} GiB "
            f"(limit {max_design_bytes / 1024**3:.1f} GiB)"
        )
    sized = Scenario1Spec(**{**spec.__dict__, "n": int(n), "replicas": 1})
    return simulate_scenario1(sized)


def simulate_gp_effect(x, gp: GPSpec, rng: np.random.Generator) -> np.ndarray:
    """One draw from the mean-zero GP with squared-exponential covariance."""
    x = np.asarray(x, dtype=float).ravel()
    diff = x[:, None] - x[None, :]
    cov = np.exp(-(diff**2) / gp.tau)
    cov[np.diag_indices_from(cov)] += gp.jitter
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"covariance factorization failed at jitter={gp.jitter:g}; "
            f"try jitter around {max(gp.jitter * 100, 1e-10):g} "
            "(near-duplicate inputs make the kernel matrix singular)"
        ) from exc
    return chol @ rng.standard_normal(x.size)


def simulate_scenario3(
    n: int = 1000,
    tau1: float = 1.0,
    tau2: float = 2.0,
    sigma2: float = 1.0,
    intercept: float = 1.0,
    jitter: float = 1e-8,
    seed: int = 0,
) -> Scenario3Data:
    """Two uniform covariates with additive GP effects plus Gaussian noise."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(n, 2))
    f1 = simulate_gp_effect(x[:, 0], GPSpec(tau=tau1, jitter=jitter), rng)
    f2 = simulate_gp_effect(x[:, 1], GPSpec(tau=tau2, jitter=jitter), rng)
    noise = np.sqrt(sigma2) * rng.standard_normal(n) if sigma2 > 0 else np.zeros(n)
    y = intercept + f1 + f2 + noise
    return Scenario3Data(y, x, f1, f2, intercept, noise)
