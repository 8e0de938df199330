"""Tensor type, differentiable primitives and the gradient oracle."""

from Costformer.tensor_core.functional import (
    Sampled,
    apply_layer_norm,
    bilinear_sample,
    conv2d,
    gelu,
    layer_norm,
    linear,
    linear_stack,
    mlp_gelu,
    smooth_l1,
    softmax,
)
from Costformer.tensor_core.gradcheck import (
    GradCheckReport,
    check_gradient,
    check_parameter_gradients,
    finite_diff_grad,
)
from Costformer.tensor_core.nn import LayerNormParams, LinearParams, Module
from Costformer.tensor_core.tensor import (
    Parameter,
    Tensor,
    concat,
    stack,
    where,
)

__all__ = [
    "GradCheckReport",
    "LayerNormParams",
    "LinearParams",
    "Module",
    "Parameter",
    "Sampled",
    "Tensor",
    "apply_layer_norm",
    "bilinear_sample",
    "check_gradient",
    "check_parameter_gradients",
    "concat",
    "conv2d",
    "finite_diff_grad",
    "gelu",
    "layer_norm",
    "linear",
    "linear_stack",
    "mlp_gelu",
    "smooth_l1",
    "softmax",
    "stack",
    "where",
]
