from .gradcheck import finite_difference_check, numeric_grad
from .nn import init_linear, init_mlp, layer_names, linear, mlp_forward
from .params import OptimizerConfig, ParamStore, adamw_step, value_and_grad
from .tensor import Tensor, as_tensor, concat

__all__ = [
    "OptimizerConfig",
    "ParamStore",
    "Tensor",
    "adamw_step",
    "as_tensor",
    "concat",
    "finite_difference_check",
    "init_linear",
    "init_mlp",
    "layer_names",
    "linear",
    "mlp_forward",
    "numeric_grad",
    "value_and_grad",
]
