import numpy as np
import pytest

from rescodec import metrics
from rescodec.metrics import RDCurve, bd_rate, emit_report, mse, psnr, read_curve_csv, ssim

from helpers import ssim_reference


# -- mse / psnr -----------------------------------------------------------------


def test_mse_basics():
    a = np.random.default_rng(0).standard_normal((16, 16))
    assert mse(a, a) == 0.0
    assert abs(mse(a, a + 1.0) - 1.0) < 1e-12
    with pytest.raises(ValueError):
        mse(a, a[:8])


def test_psnr_closed_form():
    a = np.zeros((8, 8))
    b = np.ones((8, 8))
    assert abs(psnr(a, b, 255.0) - 48.1308) < 1e-3


def test_psnr_infinite_for_identical():
    a = np.ones((8, 8))
    assert psnr(a, a, 255.0) == float("inf")


def test_psnr_decreasing_in_mse():
    a = np.zeros((8, 8))
    values = [psnr(a, np.full((8, 8), s), 100.0) for s in (0.5, 1.0, 2.0, 4.0)]
    assert all(x > y for x, y in zip(values, values[1:]))


# -- ssim ------------------------------------------------------------------------


def test_ssim_identity_and_bounds():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((16, 16)) * 30
    assert abs(ssim(a, a, 510.0) - 1.0) < 1e-12
    for _ in range(10):
        x = rng.standard_normal((16, 16)) * 50
        y = rng.standard_normal((16, 16)) * 50
        assert -1.0 <= ssim(x, y, 510.0) <= 1.0


def test_ssim_negated_structure_is_negative():
    """Sign-flipping a locally zero-mean signal flips the structure term."""
    rng = np.random.default_rng(2)
    i, j = np.indices((16, 16))
    checker = np.where((i + j) % 2 == 0, 1.0, -1.0)
    a = checker * (60.0 + 30.0 * np.abs(rng.standard_normal((16, 16))))
    assert ssim(a, -a, 510.0) < 0.0


def test_ssim_rejects_small_blocks():
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)), 510.0)


def test_ssim_matches_reference_implementation():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a = rng.standard_normal((16, 16)) * 40
        b = a + rng.standard_normal((16, 16)) * 10
        assert abs(ssim(a, b, 510.0) - ssim_reference(a, b, 510.0)) < 1e-9


# -- RDCurve ----------------------------------------------------------------------


def test_curve_sorts_by_rate():
    c = RDCurve([3.0, 1.0, 2.0], [30.0, 10.0, 20.0], "psnr", "x", [64, 16, 32])
    np.testing.assert_array_equal(c.rates, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(c.qualities, [10.0, 20.0, 30.0])
    np.testing.assert_array_equal(c.lambdas, [16, 32, 64])


def test_curve_validates():
    with pytest.raises(ValueError):
        RDCurve([1.0, np.inf], [1.0, 2.0], "psnr")
    with pytest.raises(ValueError):
        RDCurve([1.0, 2.0], [1.0, 2.0], "vmaf")


def _curve(rates, quals, label="c"):
    return RDCurve(rates, quals, "psnr", label)


def test_bd_rate_identity_is_zero():
    c = _curve([0.5, 1.0, 2.0, 4.0], [30.0, 35.0, 40.0, 45.0])
    assert bd_rate(c, c) == 0.0


def test_bd_rate_uniform_scaling_law():
    ref = _curve([0.5, 1.0, 2.0, 4.0, 8.0], [30.0, 34.0, 39.0, 45.0, 52.0])
    for s in (0.9, 0.75, 1.1):
        test = _curve(ref.rates * s, ref.qualities)
        assert abs(bd_rate(ref, test) - (s - 1.0) * 100.0) < 1e-6


def test_bd_rate_antisymmetric_sign():
    a = _curve([0.5, 1.0, 2.0, 4.0], [30.0, 35.0, 40.0, 45.0])
    b = _curve([0.45, 0.85, 1.9, 3.7], [30.5, 35.5, 40.5, 45.6])
    fwd, rev = bd_rate(a, b), bd_rate(b, a)
    assert (fwd < 0) != (rev < 0)


def test_bd_rate_against_dense_integration_oracle():
    """Numeric oracle: trapezoidal integration of the fitted cubics at 1e4
    sample points over the common quality interval."""
    ref = _curve([0.31, 0.72, 1.53, 3.14], [31.2, 35.9, 40.1, 44.7])
    test = _curve([0.27, 0.61, 1.38, 2.95], [31.0, 36.3, 40.8, 45.2])
    got = bd_rate(ref, test)

    pr = np.polyfit(ref.qualities, np.log10(ref.rates), 3)
    pt = np.polyfit(test.qualities, np.log10(test.rates), 3)
    lo = max(ref.qualities.min(), test.qualities.min())
    hi = min(ref.qualities.max(), test.qualities.max())
    q = np.linspace(lo, hi, 10_000)
    avg = np.trapezoid(np.polyval(pt, q) - np.polyval(pr, q), q) / (hi - lo)
    want = (10.0**avg - 1.0) * 100.0
    assert abs(got - want) < 1e-6


def test_bd_rate_requires_four_points_and_overlap():
    short = _curve([1.0, 2.0, 3.0], [30.0, 35.0, 40.0])
    full = _curve([1.0, 2.0, 3.0, 4.0], [30.0, 35.0, 40.0, 44.0])
    high = _curve([1.0, 2.0, 3.0, 4.0], [50.0, 55.0, 60.0, 64.0])
    with pytest.raises(ValueError):
        bd_rate(short, full)
    with pytest.raises(ValueError):
        bd_rate(full, high)


# -- reports -----------------------------------------------------------------------


def test_emit_report_and_csv_roundtrip(tmp_path):
    c1 = RDCurve([0.5, 1.0, 2.0, 4.0], [30.0, 35.0, 40.0, 45.0], "psnr", "dct-hyper", [16, 32, 64, 128])
    c2 = RDCurve([0.6, 1.2, 2.3, 4.4], [30.0, 35.0, 40.0, 45.0], "psnr", "dct-factorized", [16, 32, 64, 128])
    written = emit_report([c1, c2], tmp_path / "report")
    csv_path = written["dct-hyper"]
    back = read_curve_csv(csv_path)
    np.testing.assert_array_equal(back.rates, c1.rates)
    np.testing.assert_array_equal(back.qualities, c1.qualities)
    np.testing.assert_array_equal(back.lambdas, c1.lambdas)
    assert back.label == "dct-hyper"
    svg = written["svg"].read_text()
    assert svg.startswith("<svg") and "psnr" in svg and "rate (bits per pixel)" in svg
    assert written["metadata"].exists()


def test_emit_report_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        emit_report([], tmp_path)


def test_read_curve_rejects_foreign_csv(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_curve_csv(p)


# -- rd_sweep -----------------------------------------------------------------


def test_rd_sweep_full_default_grid():
    """Sweeping the stock 14-lambda grid yields one point per lambda and is
    deterministic; an untrained model may earn a monotonicity note."""
    import warnings

    from rescodec import blockio, training, transforms

    grid = 2.0 ** np.arange(4, 18)
    model = transforms.linear_model(8, grid, hyperprior=False, seed=0)
    data = blockio.synth_residuals(seed=9, count=8, block_size=8, rho=0.7, sigma=8.0)
    training.calibrate_model(model, data.data)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        c1 = metrics.rd_sweep(model, data, grid, metric="psnr")
        c2 = metrics.rd_sweep(model, data, grid, metric="psnr")
    assert len(c1) >= 14
    np.testing.assert_array_equal(c1.rates, c2.rates)
    np.testing.assert_array_equal(c1.qualities, c2.qualities)
    assert c1.label == "linear_dct-factorized"
    assert np.all(np.diff(c1.rates) > 0) or c1.notes
