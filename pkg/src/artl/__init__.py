"""Outlier-robust MLP regression with a trimmed loss and an integrated
derivative-variation penalty, trained by stochastic gradient-supergradient
descent."""

from .autodiff import Tape, TapeOverflowError, grad_scalar
from .data import (Dataset, SyntheticSpec, load_benchmark, make_synthetic,
                   make_test_set, split_and_contaminate, true_function)
from .evaluate import (FitResult, TrainSpec, breakdown_stress, correlations,
                       fit, linear_huber, nn_huber, nn_ransac, nn_tukey, pmse,
                       robust_validation_score)
from .hovr import HovrSpec, basis_model_hov, diagonal_weights, mc_hovr_grad, quad_hovr
from .jets import CrossJet, Jet1, Jet2, hovr_term_grad, input_derivative
from .losses import (AugmentedState, TrimSpec, artl_value, h_from_fraction,
                     huber_loss, inner_min_xi, trimmed_loss, tukey_loss,
                     v_h_subgradient, v_h_value)
from .model import DomainBox, MlpArchitecture, ParamVector, forward, init, predict
from .optimizer import (DivergenceError, Schedule, SgsdReport,
                        criticality_estimate, run_adam_artl, run_sgsd,
                        sample_stopping_index, sgsd_step, stopping_probabilities)

__version__ = "0.1.0"
