"""Black-box spectral-submanifold reduced-order models."""

from .model import (SecondOrderModel, ForcingSpec, FirstOrderSystem,
                    lift_to_first_order, validate_nonlinearity)
from .spectral import MasterSubspace, solve_master_subspace, binormalize
from .indexing import CoefficientTable, enumerate_degree, pairs_summing_to, triples_summing_to
from .composition import (CompositionEngine, split_even, split_odd,
                          eval_complex_quadratic, eval_complex_cubic)
from .manifold import (ParameterizationStyle, compute_ssm, detect_resonances,
                       solve_homological, compute_Cm, invariance_residual,
                       residual_decay_slope)
from .forced import ForcedCorrection, solve_leading_nonautonomous, evaluate_tv_state
from .analysis import (ReducedOde, FrcPoint, Observable, StepControl,
                       backbone_curve, frc_continuation, integrate_rom,
                       lift_to_physical, chart_validity_radius, make_corr_provider)
from .tensors import ExplicitTensors, compose_tensor_at, make_tensor_composer
from . import models

__version__ = "0.1.0"

__all__ = [
    "SecondOrderModel", "ForcingSpec", "FirstOrderSystem", "lift_to_first_order",
    "validate_nonlinearity", "MasterSubspace", "solve_master_subspace", "binormalize",
    "CoefficientTable", "enumerate_degree", "pairs_summing_to", "triples_summing_to",
    "CompositionEngine", "split_even", "split_odd", "eval_complex_quadratic",
    "eval_complex_cubic", "ParameterizationStyle", "compute_ssm", "detect_resonances",
    "solve_homological", "compute_Cm", "invariance_residual", "residual_decay_slope",
    "ForcedCorrection", "solve_leading_nonautonomous", "evaluate_tv_state",
    "ReducedOde", "FrcPoint", "Observable", "StepControl", "backbone_curve",
    "frc_continuation", "integrate_rom", "lift_to_physical", "chart_validity_radius",
    "make_corr_provider", "ExplicitTensors", "compose_tensor_at", "make_tensor_composer",
    "models",
]
