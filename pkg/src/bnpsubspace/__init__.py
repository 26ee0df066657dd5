"""Bayesian nonparametric density estimation and classification near an affine subspace."""

__version__ = "0.1.0"

from .errors import (InfeasibleConstraintError, InvalidDimensionError,
                     InvalidInitialStateError, InvariantViolationError,
                     MisconfiguredModelError, NonUniqueMinimizerError,
                     SubspaceError)
from .geometry import (AffineSubspace, MomentSummary, estimate_subspace_L1,
                       estimate_subspace_L2, principal_angles,
                       principal_dimension, principal_subspace, project_point,
                       residual)
from .manifold import (BmfParams, bmf_log_density_unnorm, sample_bmf_gibbs,
                       sample_uniform_stiefel,
                       sample_uniform_stiefel_orthogonal_to)
from .model import (MixtureAtoms, ModelParams, PriorConfig,
                    class_conditional_probs, classify_posterior_predictive,
                    log_density, regression_conditional_logdensity,
                    validate_consistency_prior)
from .sampler import ChainSettings, PosteriorDraws, init_state, run_chain
from .experiments import (Dataset, StudyConfig, gen_htf, gen_subspace_mixture,
                          kl_type_distance, misclassification_rate,
                          run_classification_study, run_density_study)
