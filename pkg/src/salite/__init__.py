"""SaLite: lightweight salient-object detection with global/local pixel attention.

The package is self-contained: a small reverse-mode autodiff engine drives a
modified SqueezeNet encoder, ReNet-based multi-scale global attention, dilated
local attention, a five-stage decoder, the combined patch-wise loss, training,
and F-measure/MAE evaluation. See README.md for the CLI walkthrough.
"""

from .tensor import Tensor, backward, no_grad
from . import ops
from .gradcheck import grad_check

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "no_grad", "ops", "grad_check", "__version__"]
