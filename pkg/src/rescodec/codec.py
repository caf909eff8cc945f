"""End-to-end block coding against a frozen model (RCBS bitstream files).

File layout (little endian):
    magic 'RCBS' | u16 version=1 | 32-byte model hash | f64 lambda |
    u32 block count | u16 block_size | u16 bitdepth |
    per block: u16 hyper-section bit length | u32 main-section bit length |
               ceil((hyper+main)/8) payload bytes (sections bit-contiguous).

Inference runs in float32 with one fixed operation order. The encoder
derives its reference reconstruction from the decoded-side quantities
(integer latents, grid-quantized scales), so decoder output is bit-exactly
the encoder's reconstruction by construction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import entropy, modelio, transforms
from .blockio import BlockDataset
from .entropy import FactorizedDensity
from .errors import (
    HashMismatchError,
    MalformedHeaderError,
    SizeMismatchError,
    TruncatedStreamError,
)
from .rangecoder import Bitstream, RangeDecoder, RangeEncoder, pack_bits

RCBS_MAGIC = b"RCBS"
RCBS_VERSION = 1
_HEADER = struct.Struct("<4sH32sdIHH")
_BLOCK_HEAD = struct.Struct("<HI")
FRAMING_BITS = 8 * _BLOCK_HEAD.size


@dataclass
class EncodeResult:
    data: bytes
    lam: float
    recon: np.ndarray
    section_bits: np.ndarray
    file_bits: np.ndarray
    analytic_bits: np.ndarray

    @property
    def total_section_bits(self):
        return int(self.section_bits.sum())

    @property
    def total_analytic_bits(self):
        return float(self.analytic_bits.sum())


@dataclass
class DecodeResult:
    dataset: BlockDataset
    lam: float


def _main_latents(model, x32, lam):
    y = transforms.analysis(model, x32, lam)
    return y, entropy.quantize(y)


def _gauss_table_lookup():
    grid = entropy.scale_grid()
    cache = {}

    def get(idx):
        t = cache.get(idx)
        if t is None:
            t = entropy.build_gaussian_cdf_table(grid[idx])
            cache[idx] = t
        return t

    return get


def _factorized_main_layout(model, tables):
    """Per-flat-coefficient table list for factorized-main models."""
    if model.kind == transforms.KIND_LINEAR:
        return tables
    c, hh, ww = model.latent_shape()
    return [tables[pos // (hh * ww)] for pos in range(c * hh * ww)]


def _factorized_main_rate(model, y_hat, density):
    n = len(y_hat)
    if model.kind == transforms.KIND_LINEAR:
        return entropy.rate_factorized(y_hat.reshape(n, -1), density)
    c, hh, ww = model.latent_shape()
    rows = y_hat.reshape(n, c, hh * ww).transpose(0, 2, 1).reshape(n * hh * ww, c)
    return entropy.rate_factorized(rows, density).reshape(n, hh * ww).sum(axis=1)


def encode(model: transforms.ModelParams, dataset: BlockDataset, lam: float, path=None) -> EncodeResult:
    """Encode every block of the dataset at lam; deterministic byte output."""
    model.check_lambda(lam)
    if dataset.block_size != model.block_size:
        raise SizeMismatchError(
            f"dataset blocks are {dataset.block_size}, model expects {model.block_size}"
        )
    lam = float(lam)
    x32 = dataset.data.astype(np.float32)
    n = len(x32)
    m = model.main_dim()
    y, y_hat = _main_latents(model, x32, lam)
    y_hat_flat = y_hat.reshape(n, m)
    y_hat_int = y_hat_flat.astype(np.int64)

    if model.hyperprior:
        z = transforms.hyper_analysis(model, y.reshape(n, m))
        z_hat = entropy.quantize(z)
        z_int = z_hat.astype(np.int64)
        phi = transforms.hyper_synthesis(model, z_hat.astype(np.float32))
        scale_idx, scale_rep = entropy.quantize_scale(phi.astype(np.float64))
        z_density = FactorizedDensity.from_model(model.params, "prior.z")
        z_tables = entropy.build_factorized_cdf_tables(z_density)
        analytic = entropy.rate_conditional(y_hat_flat, scale_rep) + entropy.rate_factorized(
            z_int, z_density
        )
        gauss = _gauss_table_lookup()
    else:
        y_density = FactorizedDensity.from_model(model.params, "prior.y")
        y_tables = _factorized_main_layout(
            model, entropy.build_factorized_cdf_tables(y_density)
        )
        analytic = _factorized_main_rate(model, y_hat, y_density)

    chunks = []
    section_bits = np.zeros(n, dtype=np.int64)
    file_bits = np.zeros(n, dtype=np.int64)
    for i in range(n):
        if model.hyperprior:
            enc_h = RangeEncoder()
            for v, t in zip(z_int[i].tolist(), z_tables):
                t.encode_value(enc_h, v)
            hyper_bits = enc_h.finish_bits()
            enc_m = RangeEncoder()
            row_idx = scale_idx[i]
            for j, v in enumerate(y_hat_int[i].tolist()):
                gauss(int(row_idx[j])).encode_value(enc_m, v)
            main_bits = enc_m.finish_bits()
        else:
            hyper_bits = []
            enc_m = RangeEncoder()
            for v, t in zip(y_hat_int[i].tolist(), y_tables):
                t.encode_value(enc_m, v)
            main_bits = enc_m.finish_bits()
        payload = pack_bits(hyper_bits + main_bits)
        chunks.append(_BLOCK_HEAD.pack(len(hyper_bits), len(main_bits)))
        chunks.append(payload.data)
        section_bits[i] = len(hyper_bits) + len(main_bits)
        file_bits[i] = FRAMING_BITS + 8 * len(payload.data)

    recon = transforms.synthesis(model, y_hat.astype(np.float32), lam)
    header = _HEADER.pack(
        RCBS_MAGIC,
        RCBS_VERSION,
        modelio.model_hash(model),
        lam,
        n,
        model.block_size,
        dataset.bitdepth,
    )
    data = header + b"".join(chunks)
    if path is not None:
        with open(path, "wb") as f:
            f.write(data)
    return EncodeResult(data, lam, recon, section_bits, file_bits, np.asarray(analytic))


def decode(model: transforms.ModelParams, source) -> DecodeResult:
    """Decode an RCBS file or byte string produced with the same model."""
    if isinstance(source, (bytes, bytearray)):
        raw = bytes(source)
    else:
        with open(source, "rb") as f:
            raw = f.read()
    if len(raw) < _HEADER.size:
        raise MalformedHeaderError("bitstream shorter than RCBS header")
    magic, version, digest, lam, count, block_size, bitdepth = _HEADER.unpack_from(raw)
    if magic != RCBS_MAGIC:
        raise MalformedHeaderError(f"bad magic {magic!r}")
    if version != RCBS_VERSION:
        raise MalformedHeaderError(f"unsupported RCBS version {version}")
    if digest != modelio.model_hash(model):
        raise HashMismatchError("bitstream was written with a different model")
    if block_size != model.block_size:
        raise SizeMismatchError(
            f"bitstream blocks are {block_size}, model expects {model.block_size}"
        )
    m = model.main_dim()
    if model.hyperprior:
        z_density = FactorizedDensity.from_model(model.params, "prior.z")
        z_tables = entropy.build_factorized_cdf_tables(z_density)
        gauss = _gauss_table_lookup()
        n_z = model.hyper_widths[-1]
    else:
        y_density = FactorizedDensity.from_model(model.params, "prior.y")
        y_tables = _factorized_main_layout(
            model, entropy.build_factorized_cdf_tables(y_density)
        )

    pos = _HEADER.size
    sections = []
    for _ in range(count):
        if pos + _BLOCK_HEAD.size > len(raw):
            raise TruncatedStreamError("bitstream ends inside a block header")
        hbits, mbits = _BLOCK_HEAD.unpack_from(raw, pos)
        pos += _BLOCK_HEAD.size
        nbytes = (hbits + mbits + 7) // 8
        if pos + nbytes > len(raw):
            raise TruncatedStreamError("bitstream ends inside a block payload")
        sections.append((hbits, mbits, raw[pos : pos + nbytes]))
        pos += nbytes
    if pos != len(raw):
        raise SizeMismatchError(f"{len(raw) - pos} trailing bytes after last block")

    y_hat = np.zeros((count, m), dtype=np.int64)
    if model.hyperprior:
        z_hat = np.zeros((count, n_z), dtype=np.int64)
        for i, (hbits, mbits, payload) in enumerate(sections):
            stream = Bitstream(payload, hbits + mbits)
            dec = RangeDecoder(stream, 0, hbits)
            z_hat[i] = [t.decode_value(dec) for t in z_tables]
        phi = transforms.hyper_synthesis(model, z_hat.astype(np.float32))
        scale_idx, _rep = entropy.quantize_scale(phi.astype(np.float64))
        for i, (hbits, mbits, payload) in enumerate(sections):
            stream = Bitstream(payload, hbits + mbits)
            dec = RangeDecoder(stream, hbits, mbits)
            row_idx = scale_idx[i]
            y_hat[i] = [gauss(int(row_idx[j])).decode_value(dec) for j in range(m)]
    else:
        for i, (hbits, mbits, payload) in enumerate(sections):
            stream = Bitstream(payload, hbits + mbits)
            dec = RangeDecoder(stream, hbits, mbits)
            y_hat[i] = [t.decode_value(dec) for t in y_tables]

    latents = y_hat.astype(np.float32).reshape((count,) + model.latent_shape())
    recon = transforms.synthesis(model, latents, lam)
    dataset = BlockDataset(
        recon,
        model.block_size,
        provenance="file",
        source_tag="decoded",
        bitdepth=bitdepth,
    )
    return DecodeResult(dataset, lam)
