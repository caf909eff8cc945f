"""Residual-block datasets: RESB file I/O, synthetic generation, splits.

RESB layout (little endian):
    magic 'RESB' | u16 version=1 | u16 block_size | u32 count |
    u8 bitdepth | 3 reserved zero bytes |
    count * block_size^2 float32 values in raster order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import MalformedHeaderError, SizeMismatchError, TruncatedStreamError

RESB_MAGIC = b"RESB"
RESB_VERSION = 1
_HEADER = struct.Struct("<4sHHIB3s")

# Spread of the per-block log-normal amplitude drawn by synth_residuals.
# Residual data is bursty: flat blocks next to textured ones. The amplitude
# term reproduces that activity variation while keeping the dataset-level
# marginal standard deviation exactly at sigma (E[s^2] = 1).
ACTIVITY_SPREAD = 0.75


@dataclass
class ResidualBlock:
    """One B x B pixel-difference block."""

    data: np.ndarray
    block_id: int
    source_tag: str = ""


@dataclass
class BlockDataset:
    """Ordered collection of equally sized residual blocks.

    Values are held as a single (count, B, B) float32 array; `blocks`
    yields per-block views for code that wants them one at a time.
    """

    data: np.ndarray
    block_size: int
    provenance: str = "file"
    source_tag: str = ""
    bitdepth: int = 8
    block_ids: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[1:] != (self.block_size, self.block_size):
            raise ValueError("data must have shape (count, B, B)")
        if len(self.data) == 0:
            raise ValueError("dataset must contain at least one block")
        b = self.block_size
        if b <= 0 or (b & (b - 1)) != 0:
            raise ValueError(f"block_size must be a positive power of two, got {b}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("residual values must be finite")
        if self.block_ids is None:
            self.block_ids = np.arange(len(self.data))

    def __len__(self):
        return len(self.data)

    @property
    def blocks(self):
        return [
            ResidualBlock(self.data[i], int(self.block_ids[i]), self.source_tag)
            for i in range(len(self.data))
        ]

    def peak(self):
        """Signal peak for distortion metrics: full signed residual swing."""
        return 2.0 * (2**self.bitdepth - 1)


def write_blocks(dataset: BlockDataset, path) -> None:
    """Serialize a dataset to RESB; load_blocks returns it bit-exactly."""
    header = _HEADER.pack(
        RESB_MAGIC,
        RESB_VERSION,
        dataset.block_size,
        len(dataset),
        dataset.bitdepth,
        b"\x00\x00\x00",
    )
    payload = np.ascontiguousarray(dataset.data, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def load_blocks(path, block_size: int | None = None) -> BlockDataset:
    """Read a RESB file; values come back exactly as stored.

    block_size, when given, is validated against the file header.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise MalformedHeaderError(f"{path}: file shorter than RESB header")
    magic, version, bsize, count, bitdepth, _ = _HEADER.unpack_from(raw)
    if magic != RESB_MAGIC:
        raise MalformedHeaderError(f"{path}: bad magic {magic!r}")
    if version != RESB_VERSION:
        raise MalformedHeaderError(f"{path}: unsupported RESB version {version}")
    if bsize <= 0 or (bsize & (bsize - 1)) != 0:
        raise MalformedHeaderError(f"{path}: block_size {bsize} is not a power of two")
    if block_size is not None and block_size != bsize:
        raise SizeMismatchError(
            f"{path}: header declares block_size {bsize}, expected {block_size}"
        )
    expected = count * bsize * bsize * 4
    got = len(raw) - _HEADER.size
    if got < expected:
        raise TruncatedStreamError(f"{path}: payload holds {got} bytes, need {expected}")
    if got != expected:
        raise SizeMismatchError(
            f"{path}: payload holds {got} bytes, header implies {expected}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(count, bsize, bsize)
    return BlockDataset(data.copy(), bsize, provenance="file", bitdepth=bitdepth)


def synth_residuals(seed: int, count: int, block_size: int, rho: float, sigma: float) -> BlockDataset:
    """Generate residual-like blocks: separable AR(1) Gaussian fields.

    Each block is a zero-mean Gaussian field with horizontal/vertical
    lag-1 correlation rho, modulated by a per-block log-normal amplitude
    (spread ACTIVITY_SPREAD, unit mean square) so block activity varies
    the way real prediction residuals do. The dataset-level marginal
    standard deviation is sigma. Deterministic in seed.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.standard_normal((count, block_size, block_size))
    amp = np.exp(ACTIVITY_SPREAD * rng.standard_normal(count) - ACTIVITY_SPREAD**2)
    if rho > 0.0:
        c = np.sqrt(1.0 - rho * rho)
        for j in range(1, block_size):
            x[:, j, :] = rho * x[:, j - 1, :] + c * x[:, j, :]
        for j in range(1, block_size):
            x[:, :, j] = rho * x[:, :, j - 1] + c * x[:, :, j]
    data = (sigma * amp[:, None, None] * x).astype(np.float32)
    return BlockDataset(
        data, block_size, provenance="synthetic", source_tag=f"ar1-seed{seed}"
    )


def split(dataset: BlockDataset, train_fraction: float, seed: int):
    """Disjoint, exhaustive (train, validation) partition, deterministic in seed.

    |train| = round(train_fraction * N). Raises if either side would come
    out empty, since a silently empty split poisons training.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    n = len(dataset)
    n_train = int(np.floor(train_fraction * n + 0.5))
    if n_train == 0 or n_train == n:
        raise ValueError(
            f"split of {n} blocks at fraction {train_fraction} leaves an empty side"
        )
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = rng.permutation(n)
    parts = []
    for idx in (np.sort(perm[:n_train]), np.sort(perm[n_train:])):
        parts.append(
            BlockDataset(
                dataset.data[idx],
                dataset.block_size,
                provenance=dataset.provenance,
                source_tag=dataset.source_tag,
                bitdepth=dataset.bitdepth,
                block_ids=dataset.block_ids[idx],
            )
        )
    return parts[0], parts[1]
