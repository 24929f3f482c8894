"""Hierarchical Bayesian sampling for linear inverse problems with Krylov proposals."""

from .diagnostics import (
    ChainStats,
    DegenerateChainError,
    autocorrelation,
    credible_interval,
    ess,
    geweke,
    remove_burnin,
    summarize,
)
from .krylov import (
    ConvergenceWarning,
    GenGKState,
    LanczosConfig,
    LanczosInfo,
    gengk_bidiagonalize,
    gengk_solution,
    lanczos_sqrt_apply,
    lowrank_sqrt_factors,
    precond_inv_sqrt_apply,
    projected_tikhonov_solve,
)
from .operators import (
    CovarianceOperator,
    DenseOperator,
    KroneckerOperator,
    LinearOperator,
    MaternSpec,
    matern_covariance,
    subsampled_covariance,
)
from .posterior import HierarchicalModel, HyperParams, conditional_moments_dense
from .problems import (
    TestProblem,
    add_noise,
    estimate_delta0,
    estimate_lambda0,
    laplacian_preconditioner,
    make_dynamic_problem,
    make_tomography_problem,
)
from .samplers import (
    Chain,
    SamplerConfig,
    block_gibbs,
    gengk_factors,
    mh_gibbs_gengk,
    mh_gibbs_precond,
    mh_gibbs_svd,
    rsvd_proposal_factors,
    tsvd_proposal_factors,
)

__version__ = "0.1.0"
