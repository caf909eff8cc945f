"""scikit-learn style facade over the training and coding pipeline.

ResidualCodec duck-types the estimator protocol (fit / transform /
predict / get_params / set_params) without importing scikit-learn, so it
drops into sklearn pipelines and grid searches while the functional
modules stay dependency-light.
"""

from __future__ import annotations

import inspect

import numpy as np

from . import codec, training, transforms
from .blockio import BlockDataset
from .entropy import quantize
from .training import TrainConfig


def check_blocks(X, block_size=None):
    """Coerce X to a float (n, B, B) array and validate it.

    Accepts a BlockDataset or any array-like of square blocks.
    """
    if isinstance(X, BlockDataset):
        data = X.data
    else:
        data = np.asarray(X, dtype=np.float64)
        if data.ndim == 2:
            data = data[None]
    if data.ndim != 3 or data.shape[1] != data.shape[2]:
        raise ValueError(f"expected blocks of shape (n, B, B), got {data.shape}")
    if len(data) == 0:
        raise ValueError("need at least one block")
    if not np.all(np.isfinite(data)):
        raise ValueError("blocks must be finite")
    b = data.shape[1]
    if b & (b - 1) or b < 2:
        raise ValueError(f"block size must be a power of two >= 2, got {b}")
    if block_size is not None and b != block_size:
        raise ValueError(f"blocks are {b}x{b}, estimator is configured for {block_size}")
    return data


class ResidualCodec:
    """Learned residual-block codec with an estimator interface.

    fit() trains the transform and entropy model on blocks of shape
    (n, block_size, block_size); transform()/predict() return codec
    reconstructions; encode()/decode() produce and consume real
    bitstreams. All randomness derives from `seed`.
    """

    def __init__(
        self,
        kind="linear_dct",
        hyperprior=True,
        multi_rate=True,
        block_size=32,
        lambda_grid=None,
        hyper_widths=(256, 128, 64),
        ae_channels=(256, 128, 64, 64),
        epochs=100,
        batch_size=512,
        learning_rate=1e-3,
        validation_fraction=0.1,
        seed=0,
    ):
        self.kind = kind
        self.hyperprior = hyperprior
        self.multi_rate = multi_rate
        self.block_size = block_size
        self.lambda_grid = lambda_grid
        self.hyper_widths = hyper_widths
        self.ae_channels = ae_channels
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.validation_fraction = validation_fraction
        self.seed = seed

    # -- sklearn protocol ---------------------------------------------------

    @classmethod
    def _param_names(cls):
        return [p for p in inspect.signature(cls.__init__).parameters if p != "self"]

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ValueError(f"unknown parameter {key!r} for ResidualCodec")
            setattr(self, key, value)
        return self

    def __sklearn_tags__(self):
        # Only ever called by scikit-learn itself, so the import is safe
        # here while the package keeps no sklearn dependency.
        from sklearn.utils import InputTags, Tags, TargetTags, TransformerTags

        return Tags(
            estimator_type="transformer",
            target_tags=TargetTags(required=False),
            transformer_tags=TransformerTags(),
            classifier_tags=None,
            regressor_tags=None,
            no_validation=True,
            non_deterministic=False,
            requires_fit=True,
            input_tags=InputTags(allow_nan=False),
        )

    # -- fitting ---------------------------------------------------------------

    def _grid(self):
        if self.lambda_grid is not None:
            return np.asarray(self.lambda_grid, dtype=np.float64)
        if self.multi_rate:
            return training.DEFAULT_LAMBDA_GRID.copy()
        return np.array([2.0**10])

    def fit(self, X, y=None):
        data = check_blocks(X, self.block_size)
        grid = self._grid()
        if self.kind == transforms.KIND_LINEAR:
            model = transforms.linear_model(
                self.block_size,
                grid,
                hyperprior=self.hyperprior,
                hyper_widths=tuple(self.hyper_widths),
                seed=self.seed,
            )
        elif self.kind == transforms.KIND_NONLINEAR:
            model = transforms.nonlinear_model(
                self.block_size,
                grid,
                hyperprior=self.hyperprior,
                ae_channels=tuple(self.ae_channels),
                hyper_widths=tuple(self.hyper_widths),
                seed=self.seed,
            )
        else:
            raise ValueError(f"unknown kind {self.kind!r}")
        dataset = BlockDataset(data.astype(np.float32), self.block_size, provenance="synthetic")
        from .blockio import split

        train_ds, val_ds = split(dataset, 1.0 - self.validation_fraction, seed=self.seed)
        training.calibrate_model(model, train_ds.data[: self.batch_size])
        config = TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            lambda_grid=grid,
            batch_size=min(self.batch_size, len(train_ds)),
            multi_rate=self.multi_rate,
            seed=self.seed,
        )
        self.checkpoint_ = training.train(config, model, train_ds, val_ds)
        self.model_ = self.checkpoint_.model
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("this ResidualCodec instance is not fitted yet")

    def _default_lambda(self):
        grid = self.model_.lambda_grid
        return float(grid[len(grid) // 2])

    # -- coding -----------------------------------------------------------------

    def transform(self, X, lam=None):
        """Reconstructions after quantization in the latent domain."""
        self._check_fitted()
        data = check_blocks(X, self.model_.block_size).astype(np.float32)
        lam = self._default_lambda() if lam is None else float(lam)
        y = transforms.analysis(self.model_, data, lam)
        return transforms.synthesis(self.model_, quantize(y).astype(np.float32), lam)

    def predict(self, X, lam=None):
        return self.transform(X, lam=lam)

    def encode(self, X, lam=None) -> bytes:
        self._check_fitted()
        data = check_blocks(X, self.model_.block_size)
        dataset = BlockDataset(data.astype(np.float32), self.model_.block_size)
        lam = self._default_lambda() if lam is None else float(lam)
        return codec.encode(self.model_, dataset, lam).data

    def decode(self, data: bytes):
        self._check_fitted()
        return codec.decode(self.model_, data).dataset.data

    def score(self, X, y=None):
        """Negative R-D objective at the middle grid lambda (higher is better)."""
        self._check_fitted()
        data = check_blocks(X, self.model_.block_size)
        dataset = BlockDataset(data.astype(np.float32), self.model_.block_size)
        lam = self._default_lambda()
        losses = training.evaluate_validation(self.model_, dataset, [lam])
        return -losses[lam]
