from gdfq.quant.calibrate import METHODS, calibrate_clip_range
from gdfq.quant.kernels import BACKEND
from gdfq.quant.quantizer import (
    ActivationRange,
    QuantizedDense,
    QuantParams,
    compute_quant_params,
    dequantize_values,
    fake_quant,
    minmax_params,
    quantize_values,
    update_activation_range,
)

__all__ = [
    "BACKEND",
    "METHODS",
    "ActivationRange",
    "QuantParams",
    "QuantizedDense",
    "calibrate_clip_range",
    "compute_quant_params",
    "dequantize_values",
    "fake_quant",
    "minmax_params",
    "quantize_values",
    "update_activation_range",
]
