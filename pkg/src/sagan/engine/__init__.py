from .functional import (
    gather_rows,
    gradient_norm_penalty,
    input_gradient,
    kl_standard_normal,
    mse,
    one_hot,
    softmax_cross_entropy,
)
from .gradcheck import GradientPairs, finite_diff_check, gradient_pairs
from .nn import MLP, Linear
from .optim import Adam, AdamState, adam_step
from .tensor import (
    ContractError,
    DimensionError,
    NumericError,
    Tape,
    Tensor,
    absolute,
    add,
    backward,
    broadcast_to,
    concat,
    div,
    exp,
    leaky_relu,
    log,
    matmul,
    maximum,
    mul,
    no_record,
    precision,
    reduce_mean,
    reduce_sum,
    row_l2_norm,
    scale,
    sigmoid,
    slice_axis,
    sub,
    transpose,
)
