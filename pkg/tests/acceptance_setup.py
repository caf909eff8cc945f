"""Shared support for the acceptance suite: the desk-scale benchmark
configuration and a disk cache of its trained models.

Training all thirteen models takes on the order of an hour, so each model
is cached under tests/_acceptance_cache keyed by its own configuration
fingerprint; delete files (or the directory) to force retraining.
"""

from __future__ import annotations

import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from rescodec import blockio, modelio, training, transforms

DATA_SEED = 0
N_TRAIN = 8192
N_VAL = 1024
BLOCK_SIZE = 16
RHO = 0.9
SIGMA = 8.0
LAMBDA_GRID = 2.0 ** np.arange(4, 10)

SINGLE_EPOCHS = 120
SINGLE_LR = 2e-3
MR_EPOCHS = 360
MR_LR = 1e-3
TRAIN_SEED = 0

CACHE_DIR = Path(__file__).parent / "_acceptance_cache"


def _data_blob():
    return [DATA_SEED, N_TRAIN, N_VAL, BLOCK_SIZE, RHO, SIGMA, blockio.ACTIVITY_SPREAD]


def _fingerprint(extra) -> str:
    blob = json.dumps([_data_blob(), extra], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def benchmark_datasets():
    total = N_TRAIN + N_VAL
    data = blockio.synth_residuals(DATA_SEED, total, BLOCK_SIZE, RHO, SIGMA)
    return blockio.split(data, N_TRAIN / total, seed=DATA_SEED)


def _model_recipes():
    recipes = {}
    for i, lam in enumerate(LAMBDA_GRID):
        for tag, hyper in (("hyper", True), ("fact", False)):
            recipes[f"{tag}-l{i}"] = {
                "grid": [float(lam)],
                "hyper": hyper,
                "epochs": SINGLE_EPOCHS,
                "lr": SINGLE_LR,
                "multi_rate": False,
                "seed": TRAIN_SEED,
            }
    recipes["mr"] = {
        "grid": LAMBDA_GRID.tolist(),
        "hyper": True,
        "epochs": MR_EPOCHS,
        "lr": MR_LR,
        "multi_rate": True,
        "seed": TRAIN_SEED,
    }
    return recipes


def _train_one(recipe, train_ds, val_ds):
    grid = np.asarray(recipe["grid"], dtype=np.float64)
    model = transforms.linear_model(
        BLOCK_SIZE, grid, hyperprior=recipe["hyper"], seed=recipe["seed"]
    )
    training.calibrate_model(model, train_ds.data[:512])
    cfg = training.TrainConfig(
        epochs=recipe["epochs"],
        learning_rate=recipe["lr"],
        lambda_grid=grid,
        batch_size=512,
        multi_rate=recipe["multi_rate"],
        seed=recipe["seed"],
    )
    return training.train(cfg, model, train_ds, val_ds)


def build_suite(log=None):
    """Train (or load from cache) every benchmark model.

    Returns (models: dict name -> ModelParams, meta: dict, train_ds, val_ds).
    """
    if log is None:
        def log(msg):
            print(msg, file=sys.stderr, flush=True)

    train_ds, val_ds = benchmark_datasets()
    CACHE_DIR.mkdir(exist_ok=True)
    models, meta = {}, {}
    for name, recipe in _model_recipes().items():
        stem = CACHE_DIR / f"{name}-{_fingerprint(recipe)}"
        rcmp = stem.with_suffix(".rcmp")
        sidecar = stem.with_suffix(".json")
        if rcmp.exists() and sidecar.exists():
            models[name] = modelio.load_model(rcmp)
            meta[name] = json.loads(sidecar.read_text())
            continue
        t0 = time.time()
        ck = _train_one(recipe, train_ds, val_ds)
        elapsed = round(time.time() - t0, 1)
        models[name] = ck.model
        meta[name] = {
            "recipe": recipe,
            "epoch": ck.epoch,
            "val_loss": ck.total_val_loss(),
            "train_seconds": elapsed,
        }
        modelio.save_model(ck.model, rcmp)
        sidecar.write_text(json.dumps(meta[name], indent=2))
        log(f"{name}: best epoch {ck.epoch}, val {ck.total_val_loss():.3f}, {elapsed}s")
    return models, meta, train_ds, val_ds


if __name__ == "__main__":
    build_suite()
