"""Gain-table management: one model, every point on the R-D curve.

Gains live in the log domain, one row per grid lambda. Intermediate rates
interpolate log-gains linearly in log2(lambda) between the bracketing
rows; no extrapolation beyond the trained grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import codec, transforms
from .transforms import ModelParams


@dataclass
class GainTable:
    """Per-lambda analysis/synthesis log-gain vectors for each layer."""

    grid: np.ndarray
    analysis: list
    synthesis: list

    @classmethod
    def from_model(cls, model: ModelParams):
        ana_lens, _ = model.gain_layers()
        return cls(
            model.lambda_grid.copy(),
            [model.params[f"gain.analysis.l{i}"] for i in range(len(ana_lens))],
            [model.params[f"gain.synthesis.l{i}"] for i in range(len(ana_lens))],
        )


def gains_for_lambda(model: ModelParams, lam: float):
    """(analysis, synthesis) log-gain vectors per layer at lam.

    Exact stored rows on grid points, log2-lambda-linear interpolation of
    log-gains in between; raises LambdaRangeError outside the grid.
    """
    return transforms.log_gains_at(model, lam)


def rd_at_lambda(model: ModelParams, dataset, lam: float):
    """(bits per pixel, MSE) from a real coding pass at lam.

    Rate counts the produced file bits (sections plus per-block framing);
    distortion compares decoded-side reconstructions to the input.
    """
    result = codec.encode(model, dataset, lam)
    n_pixels = len(dataset) * dataset.block_size**2
    bpp = float(result.file_bits.sum()) / n_pixels
    mse = float(np.mean((dataset.data.astype(np.float64) - result.recon) ** 2))
    return bpp, mse
