"""idlenet: convolutional block engineering toolkit.

Depthwise-separable block zoo (bottleneck, inverted residual, shuffle and
idle variants), hybrid network composition from config files, an analytic
MAdds/parameter cost model verified against an instrumented execution oracle,
receptive-field analysis, and gradient-checked kernels for toy-scale training.
"""

from .backend import BACKEND, available_backends, get_num_threads, set_num_threads
from .tensor import ExecContext, Tensor4

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "available_backends", "get_num_threads", "set_num_threads",
    "ExecContext", "Tensor4", "__version__",
]
