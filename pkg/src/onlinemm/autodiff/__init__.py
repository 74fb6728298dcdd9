from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import finite_diff_check, numeric_grad
from .optim import Adam, AdamState, adam_step
from .tensor import (
    BatchNormState,
    Tensor,
    add,
    as_tensor,
    backward,
    batch_norm,
    clip_max,
    concat,
    exp,
    gather,
    grad_enabled,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    spmm,
    sub,
    tabs,
    tanh,
    tsum,
)
