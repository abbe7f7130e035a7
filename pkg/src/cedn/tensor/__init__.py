from .ops import (
    SwitchMap,
    conv2d_backward,
    conv2d_forward,
    dropout,
    dropout_backward,
    maxpool2x2_backward,
    maxpool2x2_forward,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
    unpool2x2,
    unpool2x2_backward,
)
from .optim import Adam, AdamState, adam_step
from .io import load_tensors, save_tensors
