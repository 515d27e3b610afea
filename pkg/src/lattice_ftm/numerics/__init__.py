"""Dense float64 kernels with reverse-mode gradients."""

from .init import init_glorot
from .gradcheck import GradCheckError, GradCheckReport, grad_check, grad_check_report
from .ops import (
    BatchNormState,
    add,
    batch_norm,
    bce_loss,
    layer_norm,
    masked_mean_pool,
    masked_row_softmax,
    matmul,
    mul,
    relu,
    reshape,
    sigmoid,
    total,
    transpose,
)
from .tensor import Parameter, Tensor, as_tensor, no_grad

