"""Association structure learning for multivariate categorical response regression."""

from .basis import (BasisSet, CoefficientBlocks, basis_matrix, beta_from_theta, build_basis,
                    helmert_complement, random_complement, theta_from_beta)
from .interpret import (IndependenceReport, SupportPattern, build_report, check_hierarchy,
                        conditional_independence_statements, joint_independence_partition,
                        verify_conditional_factorization, verify_factorization)
from .layout import ResponseLayout, build_layout, inv_vec_J, vec_J
from .likelihood import (Dataset, Family, cross_entropy, grad, lipschitz_bound, loss,
                         mult_loss, pois_loss, predict_prob_matrix, predict_probs)
from .metrics import hellinger, mean_hellinger, misclassification
from .penalty import (GroupStructure, PenaltyMode, default_weights, omega, prox_group,
                      prox_overlap)
from .simulate import SimConfig, gen_predictors, gen_scheme_beta, sample_responses
from .solver import (FitResult, PathSpec, SolverConfig, fit, fit_path, kkt_residual,
                     lambda_max)
from .study import run_study, sep_mult_baseline

__version__ = "0.1.0"
