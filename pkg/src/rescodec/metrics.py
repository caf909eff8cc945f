"""Distortion metrics, R-D curves, Bjontegaard delta rate, and reports.

BD-rate uses the classic variant: cubic polynomial fit of log10(rate) as a
function of quality per curve, integrated over the common quality range.
SSIM uses the standard 11x11 Gaussian window (sigma 1.5, K1=0.01, K2=0.03)
over valid window positions; for signed residual blocks the dynamic range
convention is peak = 2 * (2^bitdepth - 1), recorded in every report.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import codec

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

QUALITY_METRICS = ("psnr", "ssim", "neg_mse")


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("blocks must share a shape")
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak) -> float:
    """10 log10(peak^2 / mse); +inf for identical inputs."""
    m = mse(a, b)
    if m == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / m))


def _ssim_window():
    half = SSIM_WINDOW // 2
    g = np.exp(-((np.arange(SSIM_WINDOW) - half) ** 2) / (2.0 * SSIM_SIGMA**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b, peak) -> float:
    """Mean local SSIM over valid 11x11 Gaussian windows."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("blocks must share a shape")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"blocks must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    w = _ssim_window()
    win = (SSIM_WINDOW, SSIM_WINDOW)

    def filt(img):
        v = np.lib.stride_tricks.sliding_window_view(img, win)
        return np.tensordot(v, w, axes=([2, 3], [0, 1]))

    mu1, mu2 = filt(a), filt(b)
    s11 = filt(a * a) - mu1 * mu1
    s22 = filt(b * b) - mu2 * mu2
    s12 = filt(a * b) - mu1 * mu2
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    num = (2 * mu1 * mu2 + c1) * (2 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# R-D curves
# ---------------------------------------------------------------------------


@dataclass
class RDCurve:
    """Rate (bits per pixel) vs quality points, sorted by rate."""

    rates: np.ndarray
    qualities: np.ndarray
    metric: str
    label: str = ""
    lambdas: np.ndarray | None = None
    notes: list = field(default_factory=list)

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=np.float64)
        self.qualities = np.asarray(self.qualities, dtype=np.float64)
        if self.metric not in QUALITY_METRICS:
            raise ValueError(f"unknown quality metric {self.metric!r}")
        if self.rates.shape != self.qualities.shape or self.rates.ndim != 1:
            raise ValueError("rates and qualities must be matching 1-D arrays")
        if not (np.all(np.isfinite(self.rates)) and np.all(np.isfinite(self.qualities))):
            raise ValueError("R-D points must be finite")
        if self.lambdas is not None:
            self.lambdas = np.asarray(self.lambdas, dtype=np.float64)
        order = np.argsort(self.rates, kind="stable")
        if not np.array_equal(order, np.arange(len(order))):
            self.rates = self.rates[order]
            self.qualities = self.qualities[order]
            if self.lambdas is not None:
                self.lambdas = self.lambdas[order]

    def __len__(self):
        return len(self.rates)


def rd_sweep(model, dataset, lambdas, metric="psnr", peak=None, label=None) -> RDCurve:
    """Code the dataset at each lambda with the real range coder.

    Rate is mean file bits per pixel; quality is PSNR of the aggregate MSE,
    mean per-block SSIM, or negated mean MSE.
    """
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if peak is None:
        peak = dataset.peak()
    rates, quals = [], []
    x = dataset.data.astype(np.float64)
    n_pixels = x.size
    for lam in lambdas:
        res = codec.encode(model, dataset, float(lam))
        rates.append(res.file_bits.sum() / n_pixels)
        err = res.recon.astype(np.float64) - x
        if metric == "psnr":
            quals.append(10.0 * np.log10(peak * peak / np.mean(err**2)))
        elif metric == "ssim":
            quals.append(np.mean([ssim(a, b, peak) for a, b in zip(x, res.recon)]))
        elif metric == "neg_mse":
            quals.append(-np.mean(err**2))
        else:
            raise ValueError(f"unknown quality metric {metric!r}")
    if label is None:
        label = f"{model.kind}-{'hyper' if model.hyperprior else 'factorized'}"
    curve = RDCurve(rates, quals, metric, label, lambdas)
    by_lam = np.argsort(lambdas)
    if np.any(np.diff(np.asarray(rates)[by_lam]) <= 0):
        msg = f"{label}: rate not strictly increasing across lambda"
        curve.notes.append(msg)
        warnings.warn(msg)
    return curve


def _check_bd_input(curve: RDCurve, name):
    if len(curve) < 4:
        raise ValueError(f"{name} curve needs at least 4 points for BD-rate")
    if np.any(np.diff(curve.rates) <= 0):
        raise ValueError(f"{name} curve rates must be strictly increasing")
    if np.any(np.diff(curve.qualities) <= 0):
        raise ValueError(f"{name} curve quality must increase with rate")


def bd_rate(reference: RDCurve, test: RDCurve) -> float:
    """Average percent rate difference of test vs reference over the common
    quality interval; negative means the test curve saves rate."""
    _check_bd_input(reference, "reference")
    _check_bd_input(test, "test")
    lo = max(reference.qualities.min(), test.qualities.min())
    hi = min(reference.qualities.max(), test.qualities.max())
    if hi <= lo:
        raise ValueError("curves share no quality range")
    p_ref = np.polyfit(reference.qualities, np.log10(reference.rates), 3)
    p_test = np.polyfit(test.qualities, np.log10(test.rates), 3)
    int_ref = np.polyint(p_ref)
    int_test = np.polyint(p_test)
    avg = (
        (np.polyval(int_test, hi) - np.polyval(int_test, lo))
        - (np.polyval(int_ref, hi) - np.polyval(int_ref, lo))
    ) / (hi - lo)
    return float((10.0**avg - 1.0) * 100.0)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def write_curve_csv(curve: RDCurve, path) -> None:
    lines = ["label,lambda,rate_bpp,quality"]
    lams = curve.lambdas if curve.lambdas is not None else [float("nan")] * len(curve)
    for lam, r, q in zip(lams, curve.rates, curve.qualities):
        lines.append(f"{curve.label},{float(lam)!r},{float(r)!r},{float(q)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_curve_csv(path, metric="psnr") -> RDCurve:
    lines = Path(path).read_text().strip().splitlines()
    if not lines or lines[0] != "label,lambda,rate_bpp,quality":
        raise ValueError(f"{path}: not an R-D curve CSV")
    label, lams, rates, quals = "", [], [], []
    for line in lines[1:]:
        label, lam, rate, qual = line.split(",")
        lams.append(float(lam))
        rates.append(float(rate))
        quals.append(float(qual))
    return RDCurve(rates, quals, metric, label, lams)


_SVG_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _svg_plot(curves, metric):
    width, height, margin = 640, 440, 60
    rates = np.concatenate([c.rates for c in curves])
    quals = np.concatenate([c.qualities for c in curves])
    rlo, rhi = rates.min(), rates.max()
    qlo, qhi = quals.min(), quals.max()
    rspan = (rhi - rlo) or 1.0
    qspan = (qhi - qlo) or 1.0

    def sx(r):
        return margin + (r - rlo) / rspan * (width - 2 * margin)

    def sy(q):
        return height - margin - (q - qlo) / qspan * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
        'stroke="black"/>',
        f'<text x="{width / 2:.0f}" y="{height - 16}" text-anchor="middle" '
        'font-size="14">rate (bits per pixel)</text>',
        f'<text x="18" y="{height / 2:.0f}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 18 {height / 2:.0f})">{metric}</text>',
    ]
    for t in np.linspace(rlo, rhi, 5):
        parts.append(
            f'<text x="{sx(t):.1f}" y="{height - margin + 18}" text-anchor="middle" '
            f'font-size="11">{t:.3g}</text>'
        )
    for t in np.linspace(qlo, qhi, 5):
        parts.append(
            f'<text x="{margin - 6}" y="{sy(t):.1f}" text-anchor="end" '
            f'font-size="11">{t:.4g}</text>'
        )
    for ci, c in enumerate(curves):
        color = _SVG_COLORS[ci % len(_SVG_COLORS)]
        pts = " ".join(f"{sx(r):.2f},{sy(q):.2f}" for r, q in zip(c.rates, c.qualities))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for r, q in zip(c.rates, c.qualities):
            parts.append(f'<circle cx="{sx(r):.2f}" cy="{sy(q):.2f}" r="3" fill="{color}"/>')
        parts.append(
            f'<text x="{width - margin - 4}" y="{margin + 16 * ci + 4}" text-anchor="end" '
            f'font-size="12" fill="{color}">{c.label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def emit_report(curves, out_dir) -> dict:
    """Write one CSV per curve plus a combined SVG plot and metadata.

    Returns a dict of written paths keyed by artifact name.
    """
    curves = list(curves)
    if not curves:
        raise ValueError("emit_report needs at least one curve")
    metrics_seen = {c.metric for c in curves}
    if len(metrics_seen) != 1:
        raise ValueError("all curves in one report must share a quality metric")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    for c in curves:
        safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in c.label) or "curve"
        path = out_dir / f"{safe}.csv"
        write_curve_csv(c, path)
        written[c.label] = path
    svg_path = out_dir / "report.svg"
    svg_path.write_text(_svg_plot(curves, curves[0].metric))
    written["svg"] = svg_path
    meta = {
        "quality_metric": curves[0].metric,
        "bd_rate_variant": "cubic polynomial fit of log10(rate) vs quality",
        "ssim_window": SSIM_WINDOW,
        "ssim_sigma": SSIM_SIGMA,
        "ssim_k1": SSIM_K1,
        "ssim_k2": SSIM_K2,
        "peak_convention": "2 * (2^bitdepth - 1) for signed residuals",
        "notes": sum((c.notes for c in curves), []),
    }
    meta_path = out_dir / "report.json"
    meta_path.write_text(json.dumps(meta, indent=2))
    written["metadata"] = meta_path
    return written
