"""Learned transform coding for intra prediction-residual blocks.

Fixed-DCT (or convolutional) analysis/synthesis transforms with trained
per-coefficient quantization gains, forward-adaptive scale-hyperprior
entropy models, multi-rate operation from one parameter set, a bit-exact
range coder, and an R-D evaluation harness (PSNR/SSIM/BD-rate).
"""

from .blockio import BlockDataset, ResidualBlock, load_blocks, split, synth_residuals, write_blocks
from .codec import decode, encode
from .entropy import (
    FactorizedDensity,
    dither,
    quantize,
    quantize_scale,
    rate_conditional,
    rate_factorized,
)
from .estimator import ResidualCodec, check_blocks
from .metrics import RDCurve, bd_rate, emit_report, mse, psnr, rd_sweep, ssim
from .modelio import load_model, model_hash, save_model
from .multirate import GainTable, gains_for_lambda, rd_at_lambda
from .training import Checkpoint, TrainConfig, calibrate_model, evaluate_validation, rd_loss, sample_lambda, train
from .transforms import (
    ModelParams,
    analysis,
    dct2,
    forward_with_tape,
    gdn,
    hyper_analysis,
    hyper_synthesis,
    idct2,
    igdn,
    linear_model,
    nonlinear_model,
    synthesis,
)

__version__ = "0.1.0"

__all__ = [
    "BlockDataset",
    "Checkpoint",
    "FactorizedDensity",
    "GainTable",
    "ModelParams",
    "RDCurve",
    "ResidualBlock",
    "ResidualCodec",
    "TrainConfig",
    "analysis",
    "bd_rate",
    "calibrate_model",
    "check_blocks",
    "dct2",
    "decode",
    "dither",
    "emit_report",
    "encode",
    "evaluate_validation",
    "forward_with_tape",
    "gains_for_lambda",
    "gdn",
    "hyper_analysis",
    "hyper_synthesis",
    "idct2",
    "igdn",
    "linear_model",
    "load_blocks",
    "load_model",
    "model_hash",
    "mse",
    "nonlinear_model",
    "psnr",
    "quantize",
    "quantize_scale",
    "rate_conditional",
    "rate_factorized",
    "rd_at_lambda",
    "rd_loss",
    "rd_sweep",
    "sample_lambda",
    "save_model",
    "split",
    "ssim",
    "synth_residuals",
    "synthesis",
    "train",
    "write_blocks",
]
