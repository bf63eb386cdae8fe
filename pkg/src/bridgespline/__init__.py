"""Semi-parametric Bayesian bridge regression with B-spline bases.

Two inference backends over the same hierarchical model: full-rank Gaussian
variational inference on a transformed parameter space (minibatch stochastic
gradients) and a Gibbs/Metropolis-Hastings sampler with gamma-uniform
augmentation, plus the simulation and diagnostic harness used to verify that
they agree.
"""

from .advi import (
    FitConfig,
    PosteriorSamples,
    VariationalState,
    elbo_gradient,
    fit,
    gaussian_entropy,
    sample_posterior,
)
from .basis import (
    BasisSpec,
    DesignMatrix,
    bspline_row,
    bspline_spec_from_grid,
    build_design,
    fourier_row,
    uniform_knots,
)
from .diagnostics import (
    ComparisonReport,
    compare_posteriors,
    credible_band,
    curve_mae,
    ks_two_sample,
    timing_report,
)
from .mcmc import (
    ChainOutput,
    McmcState,
    run_chain,
    sample_truncated_exponential,
    sample_truncated_gamma,
    sample_truncated_normal,
)
from .model import (
    ModelSpec,
    ParamVector,
    gg_logpdf,
    grad_logjoint_unconstrained,
    log_jacobian,
    log_joint,
    log_likelihood,
    log_prior,
    to_constrained,
    to_unconstrained,
)
from .simulate import (
    GPSpec,
    Scenario1Spec,
    simulate_gp_effect,
    simulate_scaled,
    simulate_scenario1,
    simulate_scenario3,
)

__version__ = "0.1.0"
