"""Shared test oracles: reference SSIM and the model-wide gradient check."""

import numpy as np

from rescodec import training, transforms
from rescodec.metrics import SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW


def ssim_reference(a, b, peak):
    """Direct windowed SSIM: explicit loops, no vectorized filtering."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    half = SSIM_WINDOW // 2
    g = np.array(
        [np.exp(-((i - half) ** 2) / (2.0 * SSIM_SIGMA**2)) for i in range(SSIM_WINDOW)]
    )
    g = g / g.sum()
    w = np.array([[g[i] * g[j] for j in range(SSIM_WINDOW)] for i in range(SSIM_WINDOW)])
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    h, wd = a.shape
    values = []
    for r in range(h - SSIM_WINDOW + 1):
        for c in range(wd - SSIM_WINDOW + 1):
            pa = a[r : r + SSIM_WINDOW, c : c + SSIM_WINDOW]
            pb = b[r : r + SSIM_WINDOW, c : c + SSIM_WINDOW]
            mu1 = float(np.sum(w * pa))
            mu2 = float(np.sum(w * pb))
            s11 = float(np.sum(w * pa * pa)) - mu1 * mu1
            s22 = float(np.sum(w * pb * pb)) - mu2 * mu2
            s12 = float(np.sum(w * pa * pb)) - mu1 * mu2
            values.append(
                ((2 * mu1 * mu2 + c1) * (2 * s12 + c2))
                / ((mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2))
            )
    return float(np.mean(values))


def model_loss(model, x, lam, dither_seed, record=False):
    """Full training objective with a fixed dither realization."""
    from rescodec.autodiff import Tape

    rng = np.random.Generator(np.random.PCG64(dither_seed))
    if record:
        fwd = transforms.forward_with_tape(model, x, lam, rng)
        return fwd, training._loss_graph(fwd)
    tape = Tape(record=False)
    pvars = transforms.make_param_vars(model, tape, lam)
    fwd = transforms.build_forward(model, pvars, x, lam, rng=rng, dither=True, tape=tape)
    return training._loss_graph(fwd).value


def gradcheck_model(model, x, lam, dither_seed, rel_tol=1e-4, h_rel=1e-4, denom_floor=1e-4):
    """Compare every parameter gradient against central finite differences.

    Relative error uses max(|fd|, |ad|, floor) in the denominator. The
    floor holds near-zero gradients to an absolute standard set by the
    central-difference roundoff noise, which scales like eps * |loss| / h;
    the 1e5 safety factor keeps it many orders below real gradient
    magnitudes while staying above the accumulated-rounding scatter.
    Returns (failure tuples, number of scalars checked).
    """
    fwd, loss = model_loss(model, x, lam, dither_seed, record=True)
    grads = transforms.backward(fwd, loss)
    failures = []
    checked = 0
    eps = float(np.finfo(np.float64).eps)
    loss_scale = max(1.0, abs(float(loss.value)))
    for slot, g in grads.items():
        name, _, row = slot.partition("@")
        arr = model.params[name] if not row else model.params[name][int(row)]
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = arr[idx]
            h = h_rel * max(1.0, abs(orig))
            arr[idx] = orig + h
            lp = model_loss(model, x, lam, dither_seed)
            arr[idx] = orig - h
            lm = model_loss(model, x, lam, dither_seed)
            arr[idx] = orig
            fd = (lp - lm) / (2.0 * h)
            adg = g[idx]
            floor = max(denom_floor, 1e5 * eps * loss_scale / (2.0 * h))
            rel = abs(fd - adg) / max(abs(fd), abs(adg), floor)
            checked += 1
            if rel > rel_tol:
                failures.append((slot, idx, float(fd), float(adg), float(rel)))
            it.iternext()
    return failures, checked
