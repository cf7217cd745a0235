"""Label-smoothing losses, partial-convolution padding and calibration analysis on a small numpy autodiff."""

from .autodiff import Tensor, backward, grad_check, no_grad, softmax
from .losses import SmoothingConfig, batch_loss, ce_loss, lsce_loss, norm_lsce_loss, smooth_targets

__all__ = [
    "Tensor", "backward", "grad_check", "no_grad", "softmax",
    "SmoothingConfig", "batch_loss", "ce_loss", "lsce_loss", "norm_lsce_loss", "smooth_targets",
]
