"""Stochastic rate-distortion training: Adam, lambda scheduling, checkpoints.

The objective per block is  R(y) + R(z) + lambda * MSE(x, x_hat)  with rates
in bits per block and MSE per coefficient. Training runs on dithered
quantization; validation and model selection use hard quantization.

Every random stream is derived from (seed, purpose, epoch, batch), so a
(config, seed, data) triple reproduces the best checkpoint bit for bit.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import transforms
from .autodiff import Tape
from .errors import DivergenceError
from .transforms import ModelParams, ForwardState

DEFAULT_LAMBDA_GRID = 2.0 ** np.arange(4, 18)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-7

_SHUFFLE_TAG = 101
_LAMBDA_TAG = 202
_DITHER_TAG = 303


@dataclass
class TrainConfig:
    epochs: int
    learning_rate: float
    lambda_grid: np.ndarray = field(default_factory=lambda: DEFAULT_LAMBDA_GRID.copy())
    batch_size: int = 512
    multi_rate: bool = False
    seed: int = 0
    checkpoint_dir: str | None = None

    def __post_init__(self):
        self.lambda_grid = np.asarray(self.lambda_grid, dtype=np.float64)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if np.any(self.lambda_grid <= 0) or np.any(np.diff(self.lambda_grid) <= 0):
            raise ValueError("lambda_grid must be positive and strictly increasing")
        if not self.multi_rate and len(self.lambda_grid) != 1:
            raise ValueError("non-multi-rate training fixes exactly one lambda")


def rd_loss(x, x_hat, rate_main, rate_hyper, lam):
    """rate_main + rate_hyper + lam * MSE, per block (bits + weighted MSE)."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError("block shapes differ")
    axes = tuple(range(x.ndim - 2, x.ndim))
    mse = np.mean((x - x_hat) ** 2, axis=axes)
    return rate_main + rate_hyper + lam * mse


def lambda_schedule_probs(epoch, total_epochs, grid_size):
    """P(i) ~ exp(0.4 i (N - n) / N): high-lambda points dominate early and
    the draw anneals toward uniform by the final epoch."""
    if not 0 <= epoch <= total_epochs:
        raise ValueError("epoch must lie in [0, total_epochs]")
    frac = (total_epochs - epoch) / total_epochs if total_epochs > 0 else 0.0
    w = np.exp(0.4 * np.arange(grid_size) * frac)
    return w / w.sum()


def sample_lambda(epoch, total_epochs, grid, rng):
    grid = np.asarray(grid)
    p = lambda_schedule_probs(epoch, total_epochs, len(grid))
    return float(grid[rng.choice(len(grid), p=p)])


@dataclass
class AdamState:
    """Per-slot first/second moments; gain-table rows are separate slots so
    a multi-rate step touches only the sampled row plus shared weights."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """Standard bias-corrected Adam update, applied in place."""
    for slot, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in {slot}")
        t = state.t.get(slot, 0) + 1
        m = state.m.get(slot)
        if m is None:
            m = np.zeros_like(g)
            state.m[slot] = m
            state.v[slot] = np.zeros_like(g)
        v = state.v[slot]
        m *= ADAM_BETA1
        m += (1 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1 - ADAM_BETA2) * (g * g)
        state.t[slot] = t
        mhat = m / (1 - ADAM_BETA1**t)
        vhat = v / (1 - ADAM_BETA2**t)
        params[slot] -= lr * mhat / (np.sqrt(vhat) + ADAM_EPS)


def _slot_views(model: ModelParams, slots):
    """Writable array views addressed by forward-pass slot names."""
    out = {}
    for slot in slots:
        if "@" in slot:
            name, row = slot.split("@")
            out[slot] = model.params[name][int(row)]
        else:
            out[slot] = model.params[slot]
    return out


def _loss_graph(state: ForwardState):
    n = state.x.shape[0]
    diff = ad.sub(state.x_hat, state.x)
    mse = ad.vmean(ad.reshape(ad.square(diff), (n, -1)), axis=1)
    per_block = ad.add(state.rate_main, ad.mul(mse, state.lam))
    if state.rate_hyper is not None:
        per_block = ad.add(per_block, state.rate_hyper)
    return ad.vmean(per_block)


def _rng(seed, tag, *rest):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, tag) + rest)))


@dataclass
class Checkpoint:
    epoch: int
    model: ModelParams
    train_loss: float
    val_losses: dict

    def total_val_loss(self):
        return float(sum(self.val_losses.values()))

    def save(self, directory, stem="best"):
        from . import modelio

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        modelio.save_model(self.model, directory / f"{stem}.rcmp")
        sidecar = {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_losses": {repr(k): v for k, v in self.val_losses.items()},
        }
        (directory / f"{stem}.json").write_text(json.dumps(sidecar, indent=2))


def evaluate_validation(model: ModelParams, dataset, lambda_set, chunk=1024) -> dict:
    """Deterministic per-lambda objective: hard quantization, analytic rates."""
    data = dataset.data if hasattr(dataset, "data") else np.asarray(dataset)
    data = data.astype(np.float64)
    out = {}
    for lam in np.asarray(lambda_set, dtype=np.float64):
        lam = float(lam)
        total = 0.0
        for start in range(0, len(data), chunk):
            xb = data[start : start + chunk]
            tape = Tape(record=False)
            pvars = transforms.make_param_vars(model, tape, lam)
            st = transforms.build_forward(model, pvars, xb, lam, dither=False, tape=tape)
            rate = st.rate_main.value + (
                st.rate_hyper.value if st.rate_hyper is not None else 0.0
            )
            mse = np.mean((st.x_hat.value - xb) ** 2, axis=(1, 2))
            total += float(np.sum(rate + lam * mse))
        out[lam] = total / len(data)
    return out


def calibrate_model(model: ModelParams, blocks, lam=None) -> ModelParams:
    """Data-dependent initialization, in place; deterministic given blocks.

    Matches the entropy models to the latent statistics at (by default) the
    middle grid lambda: unit-variance input to the hyper-analysis MLP,
    scale-field output near the latent standard deviations, and factorized
    densities starting as logistics at the observed per-dimension scales.
    Without this the learned densities start orders of magnitude too
    narrow and gradients die in the probability floor.
    """
    from . import entropy

    blocks = np.asarray(blocks, dtype=np.float64)
    if lam is None:
        lam = float(model.lambda_grid[len(model.lambda_grid) // 2])
    y = transforms.analysis(model, blocks, lam)
    yflat = y.reshape(len(blocks), -1)
    sd_flat = yflat.std(axis=0) + 1e-6
    p = model.params
    if model.hyperprior:
        a = np.abs(yflat)
        h0 = a @ p["hyper.analysis.w0"]
        scale = float(h0.std()) + 1e-6
        p["hyper.analysis.w0"] /= scale
        z = transforms.hyper_analysis(model, yflat)
        for k, v in entropy.factorized_init(z.shape[1], scales=z.std(axis=0) + 1e-3).items():
            p[f"prior.z.{k}"] = v
        raw = np.log(transforms.hyper_synthesis(model, z))
        p["hyper.synthesis.b2"] += np.log(sd_flat) - raw.mean(axis=0)
    else:
        if model.kind == transforms.KIND_LINEAR:
            sd = sd_flat
        else:
            c = model.latent_shape()[0]
            sd = y.reshape(len(blocks), c, -1).std(axis=(0, 2)) + 1e-6
        for k, v in entropy.factorized_init(len(sd), scales=sd).items():
            p[f"prior.y.{k}"] = v
    return model


def train(config: TrainConfig, model: ModelParams, train_ds, val_ds) -> Checkpoint:
    """Optimize the R-D objective; returns the minimum-validation checkpoint.

    Multi-rate runs sample a grid lambda per batch and update that lambda's
    gain rows plus all shared parameters. On divergence the last good
    checkpoint is returned with a diagnostic on stderr.
    """
    if not np.array_equal(config.lambda_grid, model.lambda_grid):
        raise ValueError("config lambda_grid must match the model's grid")
    data = train_ds.data.astype(np.float64)
    n = len(data)
    grid = config.lambda_grid
    state = AdamState()
    history = []

    def snapshot(epoch, train_loss):
        val = evaluate_validation(model, val_ds, grid)
        return Checkpoint(epoch, model.copy(), train_loss, val)

    best = snapshot(0, float("nan"))
    history.append(
        {"epoch": 0, "train_loss": None, "val_loss": best.total_val_loss()}
    )
    for epoch in range(config.epochs):
        order = _rng(config.seed, _SHUFFLE_TAG, epoch).permutation(n)
        batch_losses = []
        try:
            for bi, start in enumerate(range(0, n, config.batch_size)):
                xb = data[order[start : start + config.batch_size]]
                if config.multi_rate:
                    lam = sample_lambda(
                        epoch, config.epochs, grid, _rng(config.seed, _LAMBDA_TAG, epoch, bi)
                    )
                else:
                    lam = float(grid[0])
                fwd = transforms.forward_with_tape(
                    model, xb, lam, _rng(config.seed, _DITHER_TAG, epoch, bi)
                )
                loss = _loss_graph(fwd)
                if not np.isfinite(loss.value):
                    raise DivergenceError(f"loss {loss.value} at epoch {epoch}")
                grads = transforms.backward(fwd, loss)
                adam_step(_slot_views(model, grads), grads, state, config.learning_rate)
                batch_losses.append(float(loss.value))
        except DivergenceError as e:
            print(f"training diverged ({e}); keeping epoch {best.epoch}", file=sys.stderr)
            break
        cand = snapshot(epoch + 1, float(np.mean(batch_losses)))
        history.append(
            {
                "epoch": epoch + 1,
                "train_loss": cand.train_loss,
                "val_loss": cand.total_val_loss(),
            }
        )
        if cand.total_val_loss() <= best.total_val_loss() or not np.isfinite(
            best.total_val_loss()
        ):
            best = cand
    if config.checkpoint_dir:
        best.save(config.checkpoint_dir)
        Path(config.checkpoint_dir, "history.json").write_text(json.dumps(history, indent=2))
    return best


def parse_config_file(path) -> dict:
    """key=value training config; '#' starts a comment. Values are parsed as
    int, float, bool, comma list, or string, in that order."""
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line: {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = _parse_value(value)
    return out


def _parse_value(value):
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    if "," in value:
        return [_parse_value(v.strip()) for v in value.split(",")]
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            continue
    return value
