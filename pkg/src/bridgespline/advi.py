"""Full-rank Gaussian variational inference on the unconstrained parameter space.

The variational family is N(m, L L^T) over the transformed vector xi; draws
are mapped back through the inverse link functions, so every posterior sample
satisfies the positivity/interval constraints by construction.  Gradients of
the objective are reparameterized Monte Carlo estimates with the minibatch
likelihood rescaled by n/|batch|; the Gaussian entropy gradient is added
analytically (exact and zero-variance) rather than estimated.

A fitted state is immutable and safe to share across threads; the Monte Carlo
terms inside one gradient evaluation are computed as one dense matrix kernel
and reduced in a fixed order, so results are reproducible given a seed.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from . import model as mdl
from .model import ModelSpec

__all__ = [
    "VariationalState",
    "FitConfig",
    "PosteriorSamples",
    "AdamState",
    "gaussian_entropy",
    "BatchScheduler",
    "elbo_gradient",
    "adam_step",
    "sgd_step",
    "initial_state",
    "fit",
    "sample_posterior",
]


@dataclass
class VariationalState:
    """Mean m and lower-triangular scale L of the Gaussian family.

    The diagonal of L is stored in log space (``log_diag``) so the optimizer
    is unconstrained and the family never degenerates; ``lower`` holds the
    strictly-lower-triangular entries.
    """

    m: np.ndarray
    log_diag: np.ndarray
    lower: np.ndarray

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float).ravel()
        self.log_diag = np.asarray(self.log_diag, dtype=float).ravel()
        self.lower = np.asarray(self.lower, dtype=float)
        d = self.m.size
        if self.log_diag.size != d or self.lower.shape != (d, d):
            raise ValueError("inconsistent variational state shapes")

    @property
    def dim(self) -> int:
        return self.m.size

    @property
    def scale_tril(self) -> np.ndarray:
        L = np.tril(self.lower, -1)
        L[np.diag_indices(self.dim)] = np.exp(self.log_diag)
        return L

    @classmethod
    def identity(cls, d: int, scale: float = 0.1) -> "VariationalState":
        return cls(np.zeros(d), np.full(d, np.log(scale)), np.zeros((d, d)))

    def copy(self) -> "VariationalState":
        return VariationalState(self.m.copy(), self.log_diag.copy(), self.lower.copy())


@dataclass
class FitConfig:
    """Settings for the stochastic gradient loop."""

    learning_rate: float = 0.01
    batch_size: int | None = None  # None -> full data
    mc_samples: int = 100
    iterations: int = 5000
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_decay: float = 1.0  # geometric per-iteration step-size factor
    seed: int | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")


@dataclass
class PosteriorSamples:
    """Draws in constrained space, one column per model parameter."""

    draws: np.ndarray
    names: list
    source: str

    def __post_init__(self):
        self.draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
        if self.draws.shape[1] != len(self.names):
            raise ValueError("draws and names are misaligned")

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.names.index(name)]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]


def gaussian_entropy(L) -> float:
    """Entropy of N(m, L L^T): (d/2)(log 2pi + 1) + sum_i log L_ii."""
    if isinstance(L, VariationalState):
        d = L.dim
        logdiag = L.log_diag
    else:
        L = np.asarray(L, dtype=float)
        d = L.shape[0]
        logdiag = np.log(np.diag(L))
    return float(0.5 * d * (np.log(2.0 * np.pi) + 1.0) + np.sum(logdiag))


class BatchScheduler:
    """Epoch-wise permutation batching.

    Indexes are randomly permuted at the start of each epoch and consumed in
    consecutive blocks, so every observation appears exactly once per epoch.
    A remainder block smaller than the batch size is used as-is (the gradient
    rescale factor n/|batch| keeps the estimate unbiased).
    """

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        if batch_size > n and n > 0:
            raise ValueError("batch size cannot exceed the number of observations")
        self.n = n
        self.batch_size = batch_size if n > 0 else 0
        self.rng = rng
        self._perm = np.empty(0, dtype=np.intp)
        self._pos = 0

    def next_batch(self) -> np.ndarray:
        if self.n == 0:
            return np.empty(0, dtype=np.intp)
        if self._pos >= self._perm.size:
            self._perm = self.rng.permutation(self.n)
            self._pos = 0
        out = self._perm[self._pos : self._pos + self.batch_size]
        self._pos += out.size
        return out


# --- flat parameter packing for the optimizers -----------------------------

def _pack(state: VariationalState, tril_idx) -> np.ndarray:
    return np.concatenate([state.m, state.log_diag, state.lower[tril_idx]])

def _unpack(flat: np.ndarray, d: int, tril_idx) -> VariationalState:
    lower = np.zeros((d, d))
    lower[tril_idx] = flat[2 * d :]
    return VariationalState(flat[:d], flat[d : 2 * d], lower)


def elbo_gradient(
    state: VariationalState,
    y_batch,
    x0_batch,
    xs_batch,
    n_total: int,
    spec: ModelSpec,
    mc_samples: int,
    rng: np.random.Generator | None = None,
    eps: np.ndarray | None = None,
):
    """Monte Carlo gradient of the ELBO wrt (m, log diag L, strict lower L).

    Returns ``(grad_m, grad_logdiag, grad_lower, elbo_estimate)``.  ``eps``
    overrides the standard-normal draws (for common-random-number checks).
    The likelihood term is rescaled by n_total/|batch|; with a full batch the
    factor is 1 and the estimator coincides with the full-data one.
    """
    d = state.dim
    if eps is None:
        eps = rng.standard_normal((d, mc_samples))
    else:
        eps = np.asarray(eps, dtype=float)
        if eps.shape[0] != d:
            raise ValueError("eps has the wrong leading dimension")
        mc_samples = eps.shape[1]
    L = state.scale_tril
    xi = state.m[:, None] + L @ eps

    nb = np.asarray(y_batch).size
    rescale = (n_total / nb) if nb > 0 else 0.0
    vals, g = mdl.logdensity_and_grad(xi, y_batch, x0_batch, xs_batch, spec, rescale)

    grad_m = g.mean(axis=1)
    gl = (g @ eps.T) / mc_samples
    grad_lower = np.tril(gl, -1)
    # d/d(log L_ii): chain through L_ii = exp(.), plus the exact entropy term
    grad_logdiag = np.diag(gl) * np.exp(state.log_diag) + 1.0
    elbo = float(vals.mean()) + gaussian_entropy(state)
    return grad_m, grad_logdiag, grad_lower, elbo


@dataclass
class AdamState:
    m1: np.ndarray
    m2: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(psi: np.ndarray, grad: np.ndarray, st: AdamState, config: FitConfig):
    """One Adam ascent step with bias correction; returns (psi', state')."""
    t = st.t + 1
    m1 = config.adam_beta1 * st.m1 + (1.0 - config.adam_beta1) * grad
    m2 = config.adam_beta2 * st.m2 + (1.0 - config.adam_beta2) * grad**2
    m1_hat = m1 / (1.0 - config.adam_beta1**t)
    m2_hat = m2 / (1.0 - config.adam_beta2**t)
    psi_new = psi + config.learning_rate * m1_hat / (np.sqrt(m2_hat) + config.adam_eps)
    return psi_new, AdamState(m1, m2, t)


def sgd_step(psi: np.ndarray, grad: np.ndarray, config: FitConfig) -> np.ndarray:
    """Plain gradient ascent: psi + lr * grad."""
    return psi + config.learning_rate * grad


def initial_state(spec: ModelSpec, y, scale: float = 0.1) -> VariationalState:
    """Start from ridge-regularized least squares.

    Coefficients solve (X'X + eps I) b = X'y with eps at 1% of the mean
    squared column norm: large enough to pin coefficients of near-zero design
    columns (an unpenalized start can place them absurdly far from the prior
    mass, and first-order updates take forever to walk back).  The precision
    starts at 1/residual-variance, alpha at alpha_max/2, and each lambda at
    its conditional-posterior mean given that start, which keeps the initial
    shrinkage penalty on the same scale as the data instead of orders of
    magnitude off.  L starts at ``scale`` times the identity.
    """
    y = np.asarray(y, dtype=float).ravel()
    lay = spec.layout
    x_full = np.hstack([spec.x0] + list(spec.xs)) if lay.p_coef else np.zeros((y.size, 0))
    p = x_full.shape[1]
    if p and y.size:
        xtx = x_full.T @ x_full
        ridge = max(1e-2 * np.trace(xtx) / p, 1e-8)
        coef = np.linalg.solve(xtx + ridge * np.eye(p), x_full.T @ y)
        resid = y - x_full @ coef
        var = float(np.var(resid)) if y.size > 1 else 1.0
    else:
        coef = np.zeros(p)
        var = 1.0
    phi0 = float(spec.fix_phi) if spec.fix_phi is not None \
        else 1.0 / min(max(var, 1e-6), 1e6)
    alpha0 = spec.fix_alpha if spec.fix_alpha is not None \
        else np.full(spec.n_blocks, spec.alpha_max / 2.0)
    betas = [coef[sl] for sl in lay.beta_slices]
    if spec.fix_lambda is not None:
        lam0 = spec.fix_lambda
    else:
        lam0 = np.empty(spec.n_blocks)
        for j, b in enumerate(betas):
            s = float(np.sum(np.abs(b) ** alpha0[j]))
            lam0[j] = (spec.a_lambda + b.size / alpha0[j]) / (
                spec.b_lambda + phi0 ** (alpha0[j] / 2.0) * s
            )
    theta = mdl.ParamVector(coef[: lay.k0], betas, phi0, lam0, alpha0)
    m = mdl.to_unconstrained(theta, spec)
    return VariationalState(m, np.full(lay.dim, np.log(scale)), np.zeros((lay.dim, lay.dim)))


def fit(y, spec: ModelSpec, config: FitConfig, init: VariationalState | None = None):
    """Run the stochastic gradient loop; returns (state, trace).

    ``trace`` has one row per iteration: (iteration, noisy ELBO estimate,
    gradient norm, elapsed seconds).  If the state goes non-finite the loop
    aborts with the last finite state and a warning.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    rng = np.random.default_rng(config.seed)
    state = init.copy() if init is not None else initial_state(spec, y)
    d = state.dim
    tril_idx = np.tril_indices(d, -1)

    batch = config.batch_size if config.batch_size is not None else n
    scheduler = BatchScheduler(n, batch, rng)
    psi = _pack(state, tril_idx)
    adam = AdamState.zeros(psi.size)
    trace = np.full((config.iterations, 4), np.nan)
    start = time.perf_counter()
    last_finite = psi.copy()

    for it in range(config.iterations):
        idx = scheduler.next_batch()
        yb = y[idx]
        x0b = spec.x0[idx] if spec.k0 else np.zeros((idx.size, 0))
        xsb = [x[idx] for x in spec.xs]
        st = _unpack(psi, d, tril_idx)
        gm, gld, glo, elbo = elbo_gradient(
            st, yb, x0b, xsb, n, spec, config.mc_samples, rng=rng
        )
        grad = np.concatenate([gm, gld, glo[tril_idx]])
        gnorm = float(np.linalg.norm(grad))
        trace[it] = (it, elbo, gnorm, time.perf_counter() - start)
        if not np.all(np.isfinite(grad)) or not np.isfinite(elbo):
            warnings.warn(
                f"non-finite ELBO gradient at iteration {it}; "
                "stopping with the last finite state"
            )
            psi = last_finite
            trace = trace[: it + 1]
            break
        last_finite = psi
        step_cfg = config if config.lr_decay == 1.0 else replace(
            config, learning_rate=config.learning_rate * config.lr_decay**it
        )
        if config.optimizer == "adam":
            psi, adam = adam_step(psi, grad, adam, step_cfg)
        else:
            psi = sgd_step(psi, grad, step_cfg)
        if not np.all(np.isfinite(psi)):
            warnings.warn(
                f"variational state diverged at iteration {it}; "
                "stopping with the last finite state"
            )
            psi = last_finite
            trace = trace[: it + 1]
            break

    return _unpack(psi, d, tril_idx), trace


def sample_posterior(
    state: VariationalState,
    n_draws: int,
    rng: np.random.Generator,
    spec: ModelSpec,
    eps: np.ndarray | None = None,
) -> PosteriorSamples:
    """Draw xi ~ N(m, LL^T) and map through the inverse transform."""
    d = state.dim
    if eps is None:
        eps = rng.standard_normal((d, n_draws))
    else:
        eps = np.asarray(eps, dtype=float).reshape(d, -1)
        n_draws = eps.shape[1]
    xi = state.m[:, None] + state.scale_tril @ eps
    return _xi_to_samples(xi, spec, "advi")


def _xi_to_samples(xi: np.ndarray, spec: ModelSpec, source: str) -> PosteriorSamples:
    lay = spec.layout
    s = xi.shape[1]
    out = np.empty((s, lay.n_params))
    out[:, : lay.p_coef] = xi[: lay.p_coef].T
    col = lay.p_coef
    if lay.idx_phi is not None:
        out[:, col] = np.exp(xi[lay.idx_phi])
    else:
        out[:, col] = spec.fix_phi
    col += 1
    dd = spec.n_blocks
    if lay.idx_lam is not None:
        out[:, col : col + dd] = np.exp(xi[lay.idx_lam]).T
    else:
        out[:, col : col + dd] = spec.fix_lambda
    col += dd
    if lay.idx_alpha is not None:
        out[:, col : col + dd] = spec.alpha_max * expit(xi[lay.idx_alpha]).T
    else:
        out[:, col : col + dd] = spec.fix_alpha
    col += dd
    samples = PosteriorSamples(out, lay.names(), source)
    _assert_constraints(samples, spec)
    return samples


def _assert_constraints(samples: PosteriorSamples, spec: ModelSpec):
    lay = spec.layout
    dd = spec.n_blocks
    phi = samples.draws[:, lay.p_coef]
    lam = samples.draws[:, lay.p_coef + 1 : lay.p_coef + 1 + dd]
    alpha = samples.draws[:, lay.p_coef + 1 + dd : lay.p_coef + 1 + 2 * dd]
    if not (np.all(phi > 0) and np.all(lam > 0)):
        raise AssertionError("posterior draws violate positivity constraints")
    if not (np.all(alpha > 0) and np.all(alpha < spec.alpha_max)):
        raise AssertionError("posterior draws violate the alpha interval constraint")
