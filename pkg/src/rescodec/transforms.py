"""Analysis/synthesis transforms and their trainable parameter container.

Two transform families share one interface:

  linear_dct    -- fixed orthonormal 2D DCT with learned per-coefficient
                   multiplicative gains (log domain, one gain pair per
                   rate point); the gains act as (de)quantization matrices.
  nonlinear_ae  -- convolutional autoencoder with generalized divisive
                   normalization after every layer and per-channel gains.

Either family can carry a hyperprior: MLP hyper-transforms producing a
per-coefficient scale field for conditional entropy coding, plus a learned
factorized density for the side channel. Models without a hyperprior use
the factorized density directly on the main latent.

forward_with_tape() runs the dithered training pass on an autodiff tape;
the same graph code with record=False provides all test-time evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from . import entropy
from .autodiff import Tape, Var
from .errors import LambdaRangeError, ModelStructureError

SCALE_MIN = 1e-3


# ---------------------------------------------------------------------------
# Fixed orthonormal DCT
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal type-II DCT matrix (rows are basis functions)."""
    if n < 2:
        raise ValueError("transform size must be at least 2")
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    c = np.sqrt(2.0 / n) * np.cos(np.pi * k * (2 * x + 1) / (2 * n))
    c[0] = 1.0 / np.sqrt(n)
    return c


def dct2(block: np.ndarray) -> np.ndarray:
    """Separable orthonormal 2D DCT of a B x B block (or a batch of them)."""
    block = np.asarray(block)
    c = dct_matrix(block.shape[-1]).astype(block.dtype)
    return c @ block @ c.T


def idct2(coeffs: np.ndarray) -> np.ndarray:
    """Exact inverse of dct2."""
    coeffs = np.asarray(coeffs)
    c = dct_matrix(coeffs.shape[-1]).astype(coeffs.dtype)
    return c.T @ coeffs @ c


# ---------------------------------------------------------------------------
# Generalized divisive normalization
# ---------------------------------------------------------------------------


def _gdn_denominator(x, beta, gamma):
    if np.any(beta <= 0):
        raise ValueError("gdn beta must be strictly positive")
    if np.any(gamma < 0):
        raise ValueError("gdn gamma must be nonnegative")
    if x.ndim <= 1:
        pooled = gamma @ (x * x)
        return np.sqrt(beta + pooled)
    pooled = np.einsum("ij,njhw->nihw", gamma, x * x, optimize=True)
    return np.sqrt(beta[None, :, None, None] + pooled)


def _as_nchw(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 3:
        return x[None], True
    return x, False


def gdn(x, beta, gamma):
    """y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2), i over channels.

    x may be a plain channel vector (C,) or conv activations (C,H,W) /
    (N,C,H,W).
    """
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1:
        return x / _gdn_denominator(x, beta, gamma)
    xn, squeeze = _as_nchw(x)
    out = xn / _gdn_denominator(xn, beta, gamma)
    return out[0] if squeeze else out


def igdn(x, beta, gamma):
    """One-step multiplicative inverse: y_i = x_i * sqrt(beta_i + sum_j gamma_ij x_j^2)."""
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1:
        return x * _gdn_denominator(x, beta, gamma)
    xn, squeeze = _as_nchw(x)
    out = xn * _gdn_denominator(xn, beta, gamma)
    return out[0] if squeeze else out


# ---------------------------------------------------------------------------
# Model parameters
# ---------------------------------------------------------------------------

KIND_LINEAR = "linear_dct"
KIND_NONLINEAR = "nonlinear_ae"


@dataclass
class ModelParams:
    """All trainable state of one model plus its architecture constants."""

    kind: str
    hyperprior: bool
    block_size: int
    lambda_grid: np.ndarray
    hyper_widths: tuple = (256, 128, 64)
    ae_channels: tuple = ()
    ae_kernels: tuple = ()
    ae_strides: tuple = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lambda_grid = np.asarray(self.lambda_grid, dtype=np.float64)
        if self.lambda_grid.ndim != 1 or len(self.lambda_grid) == 0:
            raise ValueError("lambda_grid must be a non-empty 1-D array")
        if np.any(self.lambda_grid <= 0) or np.any(np.diff(self.lambda_grid) <= 0):
            raise ValueError("lambda_grid must be positive and strictly increasing")

    # -- geometry ----------------------------------------------------------

    def ae_spatial_sizes(self):
        sizes = [self.block_size]
        for s in self.ae_strides:
            sizes.append(-(-sizes[-1] // s))
        return sizes

    def latent_shape(self):
        if self.kind == KIND_LINEAR:
            return (self.block_size * self.block_size,)
        hw = self.ae_spatial_sizes()[-1]
        return (self.ae_channels[-1], hw, hw)

    def main_dim(self):
        return int(np.prod(self.latent_shape()))

    def gain_layers(self):
        """(analysis gain lengths, synthesis gain lengths) per layer."""
        if self.kind == KIND_LINEAR:
            m = self.main_dim()
            return [m], [m]
        ana = list(self.ae_channels)
        syn = list(reversed(ana))
        return ana, syn

    def n_lambdas(self):
        return len(self.lambda_grid)

    # -- bookkeeping ---------------------------------------------------------

    def copy(self):
        return ModelParams(
            self.kind,
            self.hyperprior,
            self.block_size,
            self.lambda_grid.copy(),
            self.hyper_widths,
            self.ae_channels,
            self.ae_kernels,
            self.ae_strides,
            {k: v.copy() for k, v in self.params.items()},
        )

    def param_count(self):
        return int(sum(v.size for v in self.params.values()))

    def lambda_index(self, lam):
        idx = np.nonzero(self.lambda_grid == lam)[0]
        return int(idx[0]) if len(idx) else None

    def check_lambda(self, lam):
        if not (self.lambda_grid[0] <= lam <= self.lambda_grid[-1]):
            raise LambdaRangeError(
                f"lambda {lam} outside trained range "
                f"[{self.lambda_grid[0]}, {self.lambda_grid[-1]}]"
            )


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _init_mlp(rng, params, prefix, in_dim, layer_dims):
    d = in_dim
    for i, o in enumerate(layer_dims):
        params[f"{prefix}.w{i}"] = _glorot(rng, d, o, (d, o))
        params[f"{prefix}.b{i}"] = np.zeros(o)
        d = o


def _init_gains(block_size, lambda_grid, lengths, sign):
    """Rate-heuristic starting gains: uniform step matched to each lambda."""
    m = block_size * block_size
    rows = []
    for lam in lambda_grid:
        logg = 0.5 * np.log(np.log(2.0) * lam / (6.0 * m))
        rows.append(np.full(sum(lengths), sign * logg))
    table = np.stack(rows)
    out = {}
    off = 0
    for i, ln in enumerate(lengths):
        out[i] = table[:, off : off + ln].copy()
        off += ln
    return out


def linear_model(
    block_size,
    lambda_grid,
    hyperprior=True,
    hyper_widths=(256, 128, 64),
    seed=0,
) -> ModelParams:
    """Fixed-DCT model with learned per-coefficient gains."""
    model = ModelParams(
        KIND_LINEAR,
        hyperprior,
        block_size,
        np.asarray(lambda_grid, dtype=np.float64),
        tuple(hyper_widths),
    )
    rng = np.random.Generator(np.random.PCG64(seed))
    m = model.main_dim()
    p = model.params
    for idx, arr in _init_gains(block_size, model.lambda_grid, [m], +1).items():
        p[f"gain.analysis.l{idx}"] = arr
    for idx, arr in _init_gains(block_size, model.lambda_grid, [m], -1).items():
        p[f"gain.synthesis.l{idx}"] = arr
    _attach_entropy_params(model, rng)
    return model


def nonlinear_model(
    block_size,
    lambda_grid,
    hyperprior=False,
    ae_channels=(256, 128, 64, 64),
    ae_kernels=(5, 5, 3, 3),
    ae_strides=(2, 2, 1, 1),
    hyper_widths=(256, 128, 64),
    seed=0,
) -> ModelParams:
    """Conv GDN autoencoder model."""
    model = ModelParams(
        KIND_NONLINEAR,
        hyperprior,
        block_size,
        np.asarray(lambda_grid, dtype=np.float64),
        tuple(hyper_widths),
        tuple(ae_channels),
        tuple(ae_kernels),
        tuple(ae_strides),
    )
    rng = np.random.Generator(np.random.PCG64(seed))
    p = model.params
    chans = [1] + list(ae_channels)
    for i, (cin, cout, k) in enumerate(zip(chans[:-1], chans[1:], ae_kernels)):
        p[f"ae.analysis.c{i}.w"] = _glorot(rng, cin * k * k, cout * k * k, (cout, cin, k, k))
        p[f"ae.analysis.c{i}.b"] = np.zeros(cout)
        p[f"ae.analysis.n{i}.beta"] = np.full(cout, _softplus_inv(1.0))
        p[f"ae.analysis.n{i}.gamma"] = _gdn_gamma_init(cout)
    syn_chans = list(reversed(list(ae_channels))) + [1]
    syn_kernels = tuple(reversed(ae_kernels))
    for i, (cin, cout, k) in enumerate(zip(syn_chans[:-1], syn_chans[1:], syn_kernels)):
        p[f"ae.synthesis.n{i}.beta"] = np.full(cin, _softplus_inv(1.0))
        p[f"ae.synthesis.n{i}.gamma"] = _gdn_gamma_init(cin)
        p[f"ae.synthesis.t{i}.w"] = _glorot(rng, cin * k * k, cout * k * k, (cin, cout, k, k))
        p[f"ae.synthesis.t{i}.b"] = np.zeros(cout)
    ana_lens, syn_lens = model.gain_layers()
    for idx in range(len(ana_lens)):
        p[f"gain.analysis.l{idx}"] = np.zeros((model.n_lambdas(), ana_lens[idx]))
        p[f"gain.synthesis.l{idx}"] = np.zeros((model.n_lambdas(), syn_lens[idx]))
    _attach_entropy_params(model, rng)
    return model


def _softplus_inv(v):
    return float(np.log(np.expm1(v)))


def _gdn_gamma_init(c):
    g = np.full((c, c), 0.03)
    np.fill_diagonal(g, np.sqrt(0.1))
    return g


def _attach_entropy_params(model, rng):
    p = model.params
    m = model.main_dim()
    if model.hyperprior:
        w1, w2, w3 = model.hyper_widths
        _init_mlp(rng, p, "hyper.analysis", m, [w1, w2, w3])
        _init_mlp(rng, p, "hyper.synthesis", w3, [w1, w2, m])
        for k, v in entropy.factorized_init(w3).items():
            p[f"prior.z.{k}"] = v
    else:
        density_dims = m if model.kind == KIND_LINEAR else model.ae_channels[-1]
        for k, v in entropy.factorized_init(density_dims).items():
            p[f"prior.y.{k}"] = v


# ---------------------------------------------------------------------------
# Gain selection / interpolation
# ---------------------------------------------------------------------------


def flops_per_pixel(model: ModelParams) -> float:
    """Rough informational count of inference FLOPs per pixel (2 per MAC).

    Covers transforms, gains, and hyper-MLPs; entropy coding work is
    excluded. Not an optimization target, just reporting.
    """
    b = model.block_size
    pixels = b * b
    m = model.main_dim()
    total = 0.0
    if model.kind == KIND_LINEAR:
        total += 2 * 2 * b * b * b * 2  # separable DCT + inverse, two matmuls each
        total += 2 * m  # analysis + synthesis gains
    else:
        sizes = model.ae_spatial_sizes()
        chans = [1] + list(model.ae_channels)
        for i, k in enumerate(model.ae_kernels):
            macs = sizes[i + 1] ** 2 * chans[i + 1] * chans[i] * k * k
            gdn_macs = sizes[i + 1] ** 2 * chans[i + 1] * chans[i + 1]
            total += 2 * 2 * (macs + gdn_macs)  # analysis + mirrored synthesis
        total += 2 * 2 * sum(
            s * s * c for s, c in zip(sizes[1:], model.ae_channels)
        )  # per-layer gains, both sides
    if model.hyperprior:
        w1, w2, w3 = model.hyper_widths
        total += 2 * (m * w1 + w1 * w2 + w2 * w3)  # hyper-analysis
        total += 2 * (w3 * w1 + w1 * w2 + w2 * m)  # hyper-synthesis
    return total / pixels


def interp_gain_slots(model: ModelParams, lam: float):
    """Rows of the gain table contributing at lam, with interpolation weights.

    Returns [(row_index, weight), ...]: one entry when lam sits on the grid,
    otherwise the two bracketing rows weighted linearly in log2(lambda).
    No extrapolation.
    """
    model.check_lambda(lam)
    grid = model.lambda_grid
    exact = model.lambda_index(lam)
    if exact is not None:
        return [(exact, 1.0)]
    hi = int(np.searchsorted(grid, lam))
    lo = hi - 1
    t = float(
        (np.log2(lam) - np.log2(grid[lo])) / (np.log2(grid[hi]) - np.log2(grid[lo]))
    )
    return [(lo, 1.0 - t), (hi, t)]


def log_gains_at(model: ModelParams, lam: float):
    """(analysis, synthesis) log-gain vectors per layer at lam."""
    slots = interp_gain_slots(model, lam)
    ana_lens, _ = model.gain_layers()
    ana, syn = [], []
    for i in range(len(ana_lens)):
        a = sum(w * model.params[f"gain.analysis.l{i}"][r] for r, w in slots)
        s = sum(w * model.params[f"gain.synthesis.l{i}"][r] for r, w in slots)
        ana.append(a)
        syn.append(s)
    return ana, syn


# ---------------------------------------------------------------------------
# Forward graph
# ---------------------------------------------------------------------------


def make_param_vars(model: ModelParams, tape: Tape, lam: float, dtype=None):
    """Lift parameters onto the tape. Gain tables contribute only the rows
    that lam touches; slot names carry the row index as 'name@row'."""
    pvars = {}
    for name, arr in model.params.items():
        if name.startswith("gain."):
            continue
        pvars[name] = tape.var(arr.astype(dtype) if dtype else arr)
    for r, _w in interp_gain_slots(model, lam):
        ana_lens, _ = model.gain_layers()
        for i in range(len(ana_lens)):
            for side in ("analysis", "synthesis"):
                name = f"gain.{side}.l{i}"
                arr = model.params[name][r]
                pvars[f"{name}@{r}"] = tape.var(arr.astype(dtype) if dtype else arr)
    return pvars


def _gain_vec(pvars, model, lam, side, layer):
    slots = interp_gain_slots(model, lam)
    if len(slots) == 1:
        return pvars[f"gain.{side}.l{layer}@{slots[0][0]}"]
    (r0, w0), (r1, w1) = slots
    return ad.add(
        ad.mul(pvars[f"gain.{side}.l{layer}@{r0}"], w0),
        ad.mul(pvars[f"gain.{side}.l{layer}@{r1}"], w1),
    )


def _mlp(pvars, prefix, h, n_layers=3):
    for i in range(n_layers):
        h = ad.add(ad.matmul(h, pvars[f"{prefix}.w{i}"]), pvars[f"{prefix}.b{i}"])
        if i < n_layers - 1:
            h = ad.relu(h)
    return h


def _gdn_graph(x, beta_raw, gamma_raw, inverse=False):
    beta = ad.add(ad.softplus(beta_raw), 1e-6)
    gamma = ad.square(gamma_raw)
    c = beta.value.shape[0]
    pooled = ad.channel_matmul(gamma, ad.square(x))
    den = ad.sqrt(ad.add(pooled, ad.reshape(beta, (1, c, 1, 1))))
    return ad.mul(x, den) if inverse else ad.div(x, den)


@dataclass
class ForwardState:
    """Everything the training step needs from one recorded forward pass."""

    tape: Tape
    pvars: dict
    x: np.ndarray
    x_hat: Var
    y: Var
    y_coded: Var
    rate_main: Var
    rate_hyper: Var | None
    z_coded: Var | None
    scale_field: Var | None
    lam: float


def _analysis_graph(model, pvars, xv, lam):
    if model.kind == KIND_LINEAR:
        coeffs = ad.transform_2d(xv, dct_matrix(model.block_size).astype(xv.value.dtype))
        flat = ad.reshape(coeffs, (xv.value.shape[0], model.main_dim()))
        return ad.mul(flat, ad.exp(_gain_vec(pvars, model, lam, "analysis", 0)))
    h = ad.reshape(xv, (xv.value.shape[0], 1, model.block_size, model.block_size))
    for i in range(len(model.ae_channels)):
        h = ad.conv2d(
            h,
            pvars[f"ae.analysis.c{i}.w"],
            pvars[f"ae.analysis.c{i}.b"],
            model.ae_strides[i],
        )
        h = _gdn_graph(h, pvars[f"ae.analysis.n{i}.beta"], pvars[f"ae.analysis.n{i}.gamma"])
        g = ad.exp(_gain_vec(pvars, model, lam, "analysis", i))
        h = ad.mul(h, ad.reshape(g, (1, model.ae_channels[i], 1, 1)))
    return h


def _synthesis_graph(model, pvars, v, lam):
    n = v.value.shape[0]
    b = model.block_size
    if model.kind == KIND_LINEAR:
        scaled = ad.mul(v, ad.exp(_gain_vec(pvars, model, lam, "synthesis", 0)))
        coeffs = ad.reshape(scaled, (n, b, b))
        return ad.transform_2d(coeffs, dct_matrix(b).astype(v.value.dtype), inverse=True)
    sizes = model.ae_spatial_sizes()
    syn_chans = list(reversed(list(model.ae_channels))) + [1]
    syn_kernels = tuple(reversed(model.ae_kernels))
    syn_strides = tuple(reversed(model.ae_strides))
    target_hw = list(reversed(sizes[:-1]))
    h = v
    for i in range(len(syn_kernels)):
        g = ad.exp(_gain_vec(pvars, model, lam, "synthesis", i))
        h = ad.mul(h, ad.reshape(g, (1, syn_chans[i], 1, 1)))
        h = _gdn_graph(
            h,
            pvars[f"ae.synthesis.n{i}.beta"],
            pvars[f"ae.synthesis.n{i}.gamma"],
            inverse=True,
        )
        h = ad.conv2d_transpose(
            h,
            pvars[f"ae.synthesis.t{i}.w"],
            pvars[f"ae.synthesis.t{i}.b"],
            syn_strides[i],
            (target_hw[i], target_hw[i]),
        )
    return ad.reshape(h, (n, b, b))


def _rate_main_graph(model, pvars, v, phi):
    n = v.value.shape[0]
    if model.hyperprior:
        flat = ad.reshape(v, (n, model.main_dim()))
        return entropy.rate_conditional_graph(flat, phi)
    if model.kind == KIND_LINEAR:
        return entropy.rate_factorized_graph(pvars, "prior.y", ad.reshape(v, (n, model.main_dim())))
    c, hh, ww = model.latent_shape()
    samples = ad.transpose(ad.reshape(v, (n, c, hh * ww)), (0, 2, 1))
    samples = ad.reshape(samples, (n * hh * ww, c))
    rate = entropy.rate_factorized_graph(pvars, "prior.y", samples)
    return ad.vsum(ad.reshape(rate, (n, hh * ww)), axis=1)


def build_forward(model, pvars, x, lam, rng=None, dither=True, tape=None):
    """Assemble the full coding graph on the tape backing pvars.

    dither=True draws the training-time uniform noise from rng (main latent
    first, then hyper latent); dither=False applies hard quantization and
    is only valid on a non-recording tape.
    """
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None]
    tape = tape if tape is not None else next(iter(pvars.values())).tape
    if not dither and tape.record:
        raise ValueError("hard quantization is not differentiable; use dither")
    xv = tape.var(x)
    y = _analysis_graph(model, pvars, xv, lam)
    if dither:
        u = rng.uniform(-0.5, 0.5, size=y.value.shape).astype(y.value.dtype)
        v = ad.add(y, u)
    else:
        v = tape.var(entropy.quantize(y.value))
    n = x.shape[0]
    rate_hyper = None
    z_coded = None
    phi = None
    if model.hyperprior:
        yflat = ad.reshape(y, (n, model.main_dim()))
        z = _mlp(pvars, "hyper.analysis", ad.absolute(yflat))
        if dither:
            uz = rng.uniform(-0.5, 0.5, size=z.value.shape).astype(z.value.dtype)
            z_coded = ad.add(z, uz)
        else:
            z_coded = tape.var(entropy.quantize(z.value))
        rate_hyper = entropy.rate_factorized_graph(pvars, "prior.z", z_coded)
        phi = ad.floor_at(ad.exp(_mlp(pvars, "hyper.synthesis", z_coded)), SCALE_MIN)
    rate_main = _rate_main_graph(model, pvars, v, phi)
    x_hat = _synthesis_graph(model, pvars, v, lam)
    return ForwardState(
        tape=tape,
        pvars=pvars,
        x=x,
        x_hat=x_hat,
        y=y,
        y_coded=v,
        rate_main=rate_main,
        rate_hyper=rate_hyper,
        z_coded=z_coded,
        scale_field=phi,
        lam=lam,
    )


def forward_with_tape(model: ModelParams, x, lam: float, rng, dither=True) -> ForwardState:
    """Recorded training-time pass: dithered quantization, rates in bits."""
    tape = Tape(record=True)
    pvars = make_param_vars(model, tape, lam)
    return build_forward(model, pvars, x, lam, rng=rng, dither=dither, tape=tape)


def backward(state: ForwardState, loss: Var) -> dict:
    """Gradients of a scalar loss Var w.r.t. every parameter slot."""
    grads = state.tape.backward(loss)
    out = {}
    for name, var in state.pvars.items():
        g = grads.get(var.idx)
        out[name] = g if g is not None else np.zeros_like(var.value)
    return out


# ---------------------------------------------------------------------------
# Test-time single-op entry points; these reuse the graph kernels with a
# non-recording tape so encoder and decoder share one code path exactly.
# ---------------------------------------------------------------------------


def _silent_pvars(model, tape, lam, dtype):
    return make_param_vars(model, tape, lam, dtype=dtype)


def analysis(model: ModelParams, x, lam: float) -> np.ndarray:
    """y = g_a(x, lam). Returns (N, B^2) for linear, (N, C, h, w) for conv."""
    model.check_lambda(lam)
    x = np.asarray(x)
    squeeze = x.ndim == 2
    tape = Tape(record=False)
    pvars = _silent_pvars(model, tape, lam, x.dtype if x.dtype.kind == "f" else None)
    out = _analysis_graph(model, pvars, tape.var(x[None] if squeeze else x), lam).value
    return out[0] if squeeze else out


def synthesis(model: ModelParams, y_hat, lam: float) -> np.ndarray:
    """x_hat = g_s(y_hat, lam)."""
    model.check_lambda(lam)
    y_hat = np.asarray(y_hat)
    expect = model.latent_shape()
    squeeze = y_hat.ndim == len(expect)
    if squeeze:
        y_hat = y_hat[None]
    if y_hat.shape[1:] != expect:
        raise ValueError(f"latent shape {y_hat.shape[1:]} does not match {expect}")
    tape = Tape(record=False)
    pvars = _silent_pvars(model, tape, lam, y_hat.dtype if y_hat.dtype.kind == "f" else None)
    out = _synthesis_graph(model, pvars, tape.var(y_hat), lam).value
    return out[0] if squeeze else out


def hyper_analysis(model: ModelParams, y) -> np.ndarray:
    """z = h_a(|y|); magnitude front end makes z sign-invariant."""
    if not model.hyperprior:
        raise ModelStructureError("model has no hyperprior")
    y = np.asarray(y)
    squeeze = y.ndim == 1
    flat = y.reshape(1 if squeeze else y.shape[0], model.main_dim())
    tape = Tape(record=False)
    pvars = _silent_pvars(model, tape, model.lambda_grid[0], flat.dtype)
    out = _mlp(pvars, "hyper.analysis", ad.absolute(tape.var(flat))).value
    return out[0] if squeeze else out


def hyper_synthesis(model: ModelParams, z_hat) -> np.ndarray:
    """Scale field Phi = exp(h_s(z_hat)), floored at SCALE_MIN."""
    if not model.hyperprior:
        raise ModelStructureError("model has no hyperprior")
    z_hat = np.asarray(z_hat)
    squeeze = z_hat.ndim == 1
    if squeeze:
        z_hat = z_hat[None]
    if z_hat.shape[1] != model.hyper_widths[-1]:
        raise ValueError(
            f"hyper latent length {z_hat.shape[1]} != {model.hyper_widths[-1]}"
        )
    tape = Tape(record=False)
    pvars = _silent_pvars(model, tape, model.lambda_grid[0], z_hat.dtype)
    out = ad.floor_at(
        ad.exp(_mlp(pvars, "hyper.synthesis", tape.var(z_hat))), SCALE_MIN
    ).value
    return out[0] if squeeze else out
