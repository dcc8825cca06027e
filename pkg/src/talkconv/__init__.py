"""Time-aware large-kernel (TaLK) convolutions in numpy, with baselines,
finite-difference checks, desk-scale training and a benchmark driver."""

from .baselines import BenchCore, OutOfMemory, attention_core, dynamic_conv_core, talk_oracle
from .scan import blelloch_phases, sat_build_parallel, sat_build_sequential, sat_suffix_sum
from .talk_kernel import (ConfigError, TaLKConfig, talk_backward, talk_forward,
                          talk_forward_causal)
from .tensor_core import (FormatError, RangeError, ShapeError, make_rng, tensor_load,
                          tensor_new, tensor_rand_uniform, tensor_save)

__all__ = [
    "BenchCore", "OutOfMemory", "attention_core", "dynamic_conv_core", "talk_oracle",
    "blelloch_phases", "sat_build_parallel", "sat_build_sequential", "sat_suffix_sum",
    "ConfigError", "TaLKConfig", "talk_backward", "talk_forward", "talk_forward_causal",
    "FormatError", "RangeError", "ShapeError", "make_rng", "tensor_load", "tensor_new",
    "tensor_rand_uniform", "tensor_save",
]
