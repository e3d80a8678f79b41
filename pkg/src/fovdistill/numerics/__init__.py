from .functional import LOG_EPS, cross_entropy, entropy, kl_divergence, softmax_temp
from .gradcheck import grad_check, grad_check_params
from .params import Adam, ParamStore
from .serialize import read_tensor, tensor_from_bytes, tensor_to_bytes, write_tensor
from .tensor import (
    Tensor,
    add,
    as_tensor,
    concat,
    conv2d,
    box_sum,
    correlate2d,
    div,
    exp,
    grad_enabled,
    grid_sample,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    spatial_mean,
    sqrt,
    sub,
    sum,
    transpose,
)
