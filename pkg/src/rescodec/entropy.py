"""Probability models, quantization, and rate estimation.

The hyper latent (and the main latent of factorized-only models) is
modeled by a learned non-parametric density: a per-dimension monotone CDF
built from four positive-weight layers with tanh-bounded gates, so
c(-inf)=0 and c(+inf)=1 hold by construction. The main latent of
hyperprior models is modeled as a zero-mean Gaussian whose per-coefficient
scales come from the hyper-synthesis transform.

Continuous rates here drive training and validation; build_*_cdf_table()
discretizes the same models into 16-bit frequency tables for the actual
range coder.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import rangecoder
from .autodiff import Tape, Var
from .rangecoder import TOTAL_FREQ, CdfTable

PROB_FLOOR = 1e-9
SCALE_MIN = 1e-3
SCALE_MAX = 256.0
SCALE_LEVELS = 64
FACTORIZED_TAIL_MASS = 1e-5
FACTORIZED_MAX_SUPPORT = 8191
_LOG2 = np.log(2.0)


def dither(y, rng) -> np.ndarray:
    """Train-time quantization proxy: y + u, u ~ Uniform(-1/2, 1/2) iid."""
    y = np.asarray(y)
    return y + rng.uniform(-0.5, 0.5, size=y.shape).astype(y.dtype)


def quantize(y) -> np.ndarray:
    """Element-wise round half away from zero."""
    y = np.asarray(y)
    return np.copysign(np.floor(np.abs(y) + 0.5), y)


# ---------------------------------------------------------------------------
# Learned factorized density
# ---------------------------------------------------------------------------


def _softplus_inv(v):
    return np.log(np.expm1(v))


def factorized_init(n_dims, scales=None) -> dict:
    """Parameter stack whose CDF starts as a standard logistic per dim.

    The positive layer matrices multiply out to exactly the identity, with
    deliberately unequal rows/columns so hidden units do not stay
    permutation-degenerate under training. scales, when given, divides the
    input so dim d starts as logistic(v / scales[d]).
    """
    s1 = np.array([0.8, 1.0, 1.25])
    t = np.array([1.25, 1.0, 0.8])
    u = np.array([0.9, 1.0, 1.0 / 0.9])
    h0 = np.tile(s1[:, None], (n_dims, 1, 1))
    if scales is not None:
        scales = np.asarray(scales, dtype=float).reshape(n_dims, 1, 1)
        h0 = h0 / scales
    h1 = np.tile(t[:, None] / (3.0 * s1[None, :]), (n_dims, 1, 1))
    h2 = np.tile(u[:, None] / (3.0 * t[None, :]), (n_dims, 1, 1))
    h3 = np.tile(1.0 / (3.0 * u[None, :]), (n_dims, 1, 1))
    params = {}
    for k, h in enumerate((h0, h1, h2, h3)):
        params[f"h{k}"] = _softplus_inv(h)
        params[f"b{k}"] = np.zeros(h.shape[:2])
        params[f"a{k}"] = np.zeros(h.shape[:2])
    return params


def _density_cdf_graph(pvars, prefix, v):
    """c(v) for v (N, D) -> (N, D); strictly increasing in v by construction."""
    n, d = v.value.shape if isinstance(v, Var) else np.asarray(v).shape
    h = ad.reshape(v, (n, d, 1))
    for k in range(4):
        w = ad.softplus(pvars[f"{prefix}.h{k}"])
        u = ad.add(ad.dim_matmul(w, h), pvars[f"{prefix}.b{k}"])
        h = ad.add(u, ad.mul(ad.tanh(pvars[f"{prefix}.a{k}"]), ad.tanh(u)))
    return ad.reshape(ad.sigmoid(h), (n, d))


def _bits_from_probs(p):
    return ad.mul(ad.vsum(ad.log(ad.floor_at(p, PROB_FLOOR)), axis=1), -1.0 / _LOG2)


def rate_factorized_graph(pvars, prefix, v) -> Var:
    """Bits per row of v (N, D) under the factorized density named by prefix."""
    hi = _density_cdf_graph(pvars, prefix, ad.add(v, 0.5))
    lo = _density_cdf_graph(pvars, prefix, ad.add(v, -0.5))
    return _bits_from_probs(ad.sub(hi, lo))


def rate_conditional_graph(v, phi) -> Var:
    """Bits per row of v (N, M) under zero-mean Gaussians with scales phi."""
    return _bits_from_probs(ad.gauss_bin_prob(v, phi))


class FactorizedDensity:
    """Frozen view of one factorized density (parameter dict, no prefix)."""

    def __init__(self, params: dict):
        self.params = params
        self.n_dims = params["h0"].shape[0]

    @classmethod
    def from_model(cls, model_params: dict, prefix: str):
        sel = {}
        for k in range(4):
            for part in ("h", "b", "a"):
                sel[f"{part}{k}"] = np.asarray(
                    model_params[f"{prefix}.{part}{k}"], dtype=np.float64
                )
        return cls(sel)

    def cdf(self, v) -> np.ndarray:
        """c(v), v (..., D) evaluated per dimension."""
        v = np.asarray(v, dtype=np.float64)
        squeeze = v.ndim == 1
        rows = v.reshape(-1, self.n_dims)
        tape = Tape(record=False)
        pv = {f"d.{k}": tape.var(a) for k, a in self.params.items()}
        out = _density_cdf_graph(pv, "d", tape.var(rows)).value
        return out[0] if squeeze else out.reshape(v.shape)

    def bin_probs(self, v) -> np.ndarray:
        return self.cdf(np.asarray(v) + 0.5) - self.cdf(np.asarray(v) - 0.5)


def rate_factorized(z_hat, density: FactorizedDensity):
    """-sum_i log2 max(c(z_i + 1/2) - c(z_i - 1/2), floor), in bits."""
    z_hat = np.asarray(z_hat, dtype=np.float64)
    squeeze = z_hat.ndim == 1
    p = density.bin_probs(z_hat.reshape(-1, density.n_dims))
    bits = -np.log2(np.maximum(p, PROB_FLOOR)).sum(axis=1)
    return float(bits[0]) if squeeze else bits


def gaussian_bin_probs(v, phi) -> np.ndarray:
    """Unit-bin probabilities of a zero-mean Gaussian, full tail precision."""
    v = np.asarray(v, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    tape = Tape(record=False)
    return ad.gauss_bin_prob(tape.var(v), phi).value


def rate_conditional(y_hat, phi):
    """Conditional Gaussian rate in bits; shapes of y_hat and phi must match."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    if y_hat.shape != phi.shape:
        raise ValueError(f"shape mismatch: {y_hat.shape} vs {phi.shape}")
    squeeze = y_hat.ndim == 1
    p = gaussian_bin_probs(y_hat, phi).reshape(1 if squeeze else y_hat.shape[0], -1)
    bits = -np.log2(np.maximum(p, PROB_FLOOR)).sum(axis=1)
    return float(bits[0]) if squeeze else bits


# ---------------------------------------------------------------------------
# Scale grid and coder tables
# ---------------------------------------------------------------------------

_scale_grid = None


def scale_grid() -> np.ndarray:
    """Log-spaced 64-entry grid over [SCALE_MIN, SCALE_MAX]."""
    global _scale_grid
    if _scale_grid is None:
        _scale_grid = np.exp(
            np.linspace(np.log(SCALE_MIN), np.log(SCALE_MAX), SCALE_LEVELS)
        )
    return _scale_grid


def quantize_scale(phi):
    """Nearest grid point in the log domain -> (index, representative).

    Scales above SCALE_MAX clamp to the top entry; encoder and decoder
    rebuild identical coder tables from the index alone.
    """
    grid = scale_grid()
    phi_arr = np.asarray(phi, dtype=np.float64)
    if np.any(phi_arr < SCALE_MIN):
        raise ValueError(f"scale below SCALE_MIN {SCALE_MIN}")
    step = np.log(SCALE_MAX / SCALE_MIN) / (SCALE_LEVELS - 1)
    idx = np.rint((np.log(phi_arr) - np.log(SCALE_MIN)) / step).astype(np.int64)
    idx = np.clip(idx, 0, SCALE_LEVELS - 1)
    rep = grid[idx]
    if phi_arr.ndim == 0:
        return int(idx), float(rep)
    return idx, rep


def _freqs_from_probs(probs) -> np.ndarray:
    """Deterministic 16-bit frequencies: every bin >= 1, total exact."""
    p = np.maximum(np.asarray(probs, dtype=np.float64), 0.0)
    p = p / p.sum()
    n = len(p)
    f = np.maximum(1, np.floor(p * (TOTAL_FREQ - n)).astype(np.int64))
    f[int(np.argmax(f))] += TOTAL_FREQ - int(f.sum())
    return f


_gauss_table_cache = {}


def build_gaussian_cdf_table(scale) -> CdfTable:
    """Coder table for a zero-mean Gaussian at the given scale.

    Support [-T, T] with T = min(255, ceil(6 scale)); the trailing escape
    symbol covers outliers.
    """
    scale = float(scale)
    if scale < SCALE_MIN:
        raise ValueError(f"scale must be >= {SCALE_MIN}")
    cached = _gauss_table_cache.get(scale)
    if cached is not None:
        return cached
    t = int(min(255, np.ceil(6.0 * scale)))
    k = np.arange(-t, t + 1)
    probs = gaussian_bin_probs(k.astype(np.float64), np.full(2 * t + 1, scale))
    tail = max(1.0 - probs.sum(), 0.0)
    table = CdfTable(-t, _freqs_from_probs(np.append(probs, tail)), has_escape=True)
    _gauss_table_cache[scale] = table
    return table


def gaussian_tables_for_indices(indices) -> list:
    grid = scale_grid()
    return [build_gaussian_cdf_table(grid[i]) for i in np.asarray(indices).ravel()]


def build_factorized_cdf_tables(density: FactorizedDensity) -> list:
    """One coder table per dimension of a frozen factorized density.

    Support per dim is the smallest [-T, T] catching all but
    FACTORIZED_TAIL_MASS of the CDF (capped); escape covers the rest.
    """
    d = density.n_dims
    cap = FACTORIZED_MAX_SUPPORT
    # Grow the evaluation window until the tail mass condition holds
    # everywhere (or the cap is reached); most trained densities are narrow.
    t_max = 8
    while True:
        edges = np.arange(-t_max - 0.5, t_max + 1.5)
        c = density.cdf(np.repeat(edges[:, None], d, axis=1))
        coverage = c[-1] - c[0]
        if np.all(coverage >= 1.0 - FACTORIZED_TAIL_MASS) or t_max >= cap:
            break
        t_max = min(t_max * 4, cap)
    tables = []
    for dim in range(d):
        col = c[:, dim]
        # smallest T with c(T+1/2) - c(-T-1/2) >= 1 - tail
        sym_cov = col[t_max + 1 :] - col[t_max::-1]
        hit = np.nonzero(sym_cov >= 1.0 - FACTORIZED_TAIL_MASS)[0]
        t = int(hit[0]) if len(hit) else t_max
        t = max(t, 1)
        lo_i = t_max - t
        probs = np.diff(col[lo_i : lo_i + 2 * t + 2])
        assert len(probs) == 2 * t + 1
        tail = max(1.0 - probs.sum(), 0.0)
        tables.append(CdfTable(-t, _freqs_from_probs(np.append(probs, tail)), True))
    return tables


# Re-exported coder surface: the entropy module owns the coding contract.
Bitstream = rangecoder.Bitstream
range_encode = rangecoder.range_encode
range_decode = rangecoder.range_decode
RangeEncoder = rangecoder.RangeEncoder
RangeDecoder = rangecoder.RangeDecoder
uniform_table = rangecoder.uniform_table
