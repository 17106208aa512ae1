"""Transaction-level GPU memory simulator and emulations of two tiled convolution kernels."""

__version__ = "0.1.0"

from .config import TUNED_CONFIGS, GeneralConfig, SpecialConfig, Violation, choose_pad
from .costmodel import (CostReport, SearchBounds, enumerate_configs, enumerate_special_configs,
                        predict_general, predict_special, predicted_traffic, validate_config)
from .errors import (CapacityError, ConfigError, ConvSimError, ModelViolation, TensorFormatError,
                     WrongKernelError)
from .kernel_general import run_general
from .kernel_special import run_special, run_special_unmatched
from .memsim import (KEPLER, MemModel, MemSim, Metrics, Space, WarpAccess, bandwidth_factor,
                     cm_request, gm_transactions, sm_cycles)
from .tensors import (FilterBank, Image, OutputMap, decode_tensor, encode_tensor, gen_problem,
                      gen_tensor, naive_convolve, read_tensor, write_tensor)
