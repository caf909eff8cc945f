"""RCMP model files.

Layout (little endian):
    magic 'RCMP' | u16 version=1 | u8 kind | u8 hyperprior | u16 block_size |
    u16 n_lambda | u16 n_arrays | u16 n_hyper_widths | u8 n_ae_layers |
    3 reserved zero bytes | 32-byte SHA-256 of the parameter payload |
    hyper widths (u16 each) | per AE layer: u16 channels, u8 kernel, u8 stride |
    lambda grid (f64 each) |
    payload: per parameter array, sorted by name:
        u16 name length | name utf-8 | u8 ndim | u32 dims | float32 data.

Parameters are stored as float32 in a fixed lexicographic order; the
payload hash in the header is what bitstreams record for model pairing.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .errors import HashMismatchError, MalformedHeaderError, TruncatedStreamError
from .transforms import KIND_LINEAR, KIND_NONLINEAR, ModelParams

RCMP_MAGIC = b"RCMP"
RCMP_VERSION = 1
_HEADER = struct.Struct("<4sHBBHHHHB3s32s")
_KINDS = {KIND_LINEAR: 0, KIND_NONLINEAR: 1}
_KIND_NAMES = {v: k for k, v in _KINDS.items()}


def _payload_bytes(model: ModelParams) -> bytes:
    chunks = []
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name], dtype="<f4")
        encoded = name.encode()
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def model_hash(model: ModelParams) -> bytes:
    """SHA-256 of the canonical float32 parameter payload."""
    return hashlib.sha256(_payload_bytes(model)).digest()


def save_model(model: ModelParams, path) -> None:
    payload = _payload_bytes(model)
    header = _HEADER.pack(
        RCMP_MAGIC,
        RCMP_VERSION,
        _KINDS[model.kind],
        int(model.hyperprior),
        model.block_size,
        model.n_lambdas(),
        len(model.params),
        len(model.hyper_widths),
        len(model.ae_channels),
        b"\x00\x00\x00",
        hashlib.sha256(payload).digest(),
    )
    with open(path, "wb") as f:
        f.write(header)
        for w in model.hyper_widths:
            f.write(struct.pack("<H", w))
        for c, k, s in zip(model.ae_channels, model.ae_kernels, model.ae_strides):
            f.write(struct.pack("<HBB", c, k, s))
        f.write(np.asarray(model.lambda_grid, dtype="<f8").tobytes())
        f.write(payload)


def load_model(path) -> ModelParams:
    """Read an RCMP file; parameters come back as float64 copies of the
    stored float32 values (inference re-casts to float32 as needed)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise MalformedHeaderError(f"{path}: shorter than RCMP header")
    (
        magic,
        version,
        kind_code,
        hyper,
        block_size,
        n_lambda,
        n_arrays,
        n_widths,
        n_ae,
        _,
        digest,
    ) = _HEADER.unpack_from(raw)
    if magic != RCMP_MAGIC:
        raise MalformedHeaderError(f"{path}: bad magic {magic!r}")
    if version != RCMP_VERSION:
        raise MalformedHeaderError(f"{path}: unsupported version {version}")
    if kind_code not in _KIND_NAMES:
        raise MalformedHeaderError(f"{path}: unknown model kind {kind_code}")
    off = _HEADER.size
    try:
        widths = struct.unpack_from(f"<{n_widths}H", raw, off)
        off += 2 * n_widths
        channels, kernels, strides = [], [], []
        for _ in range(n_ae):
            c, k, s = struct.unpack_from("<HBB", raw, off)
            off += 4
            channels.append(c)
            kernels.append(k)
            strides.append(s)
        grid = np.frombuffer(raw, dtype="<f8", count=n_lambda, offset=off).copy()
        off += 8 * n_lambda
    except struct.error as e:
        raise TruncatedStreamError(f"{path}: truncated header section: {e}") from None
    payload = raw[off:]
    if hashlib.sha256(payload).digest() != digest:
        raise HashMismatchError(f"{path}: payload hash mismatch")
    params = {}
    pos = 0
    for _ in range(n_arrays):
        try:
            (name_len,) = struct.unpack_from("<H", payload, pos)
            pos += 2
            name = payload[pos : pos + name_len].decode()
            pos += name_len
            (ndim,) = struct.unpack_from("<B", payload, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", payload, pos)
            pos += 4 * ndim
            count = int(np.prod(dims)) if ndim else 1
            arr = np.frombuffer(payload, dtype="<f4", count=count, offset=pos)
            pos += 4 * count
        except (struct.error, ValueError) as e:
            raise TruncatedStreamError(f"{path}: truncated payload: {e}") from None
        if arr.size != count:
            raise TruncatedStreamError(f"{path}: array {name} truncated")
        params[name] = arr.reshape(dims).astype(np.float64)
    return ModelParams(
        _KIND_NAMES[kind_code],
        bool(hyper),
        block_size,
        grid,
        tuple(widths),
        tuple(channels),
        tuple(kernels),
        tuple(strides),
        params,
    )
