"""oncode: tumor volume dynamics prediction.

A conditioned neural ODE whose per-experiment embedding fuses a
heterogeneous drug/disease/gene graph encoder with a recurrent encoder
of early tumor volume measurements; shipped with an empirical TGI
baseline, mRECIST response evaluation, and a synthetic cohort generator.
"""

__version__ = "0.1.0"

from .tensor import Tensor, autodiff_eval, gradient_check, softmax  # noqa: F401
from .nn import (  # noqa: F401
    AdamState,
    MLPParams,
    adam_step,
    bce_loss,
    gaussian_kl_loss,
    init_mlp,
    mlp_forward,
    mse_loss,
)
