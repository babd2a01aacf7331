"""
Minimal reverse-mode differentiation core.
"""

from app.core.diffmath.tensor import (
    LOGIT_EPS,
    DTensor,
    Tape,
    absolute,
    active_tape,
    add,
    apply_op,
    as_tensor,
    broadcast_to,
    concat,
    debug_checks,
    div,
    exp,
    get_default_dtype,
    getitem,
    log,
    log_sigmoid,
    logit,
    matmul,
    mul,
    no_record,
    power,
    precision,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    scale,
    set_debug,
    set_default_dtype,
    sigmoid,
    stack,
    sub,
    swapaxes,
    transpose,
)
from app.core.diffmath.functional import (
    bilinear_sample,
    conv2d,
    layer_norm,
    log_softmax,
    normalize,
    sinusoidal_encoding,
    softmax,
)
from app.core.diffmath.nn import MLP, Conv2d, LayerNorm, Linear, Module, Parameter
from app.core.diffmath.optim import AdamW, clip_grad_norm, step_decay_lr
from app.core.diffmath.gradcheck import grad_check
from app.core.diffmath.checkpoint import load_checkpoint, read_manifest, save_checkpoint
