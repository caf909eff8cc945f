import numpy as np
import pytest

from rescodec import blockio, metrics, modelio
from rescodec.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_gen_data(tmp_path, capsys):
    out = tmp_path / "d.resb"
    code, _, err = run(
        capsys,
        "--seed", 1, "gen-data", "--count", 100, "--block-size", 16,
        "--rho", 0.9, "--sigma", 8, "--out", out,
    )
    assert code == 0
    ds = blockio.load_blocks(out)
    assert len(ds) == 100 and ds.block_size == 16
    assert "100" in err


def test_threads_flag_accepted(tmp_path, capsys):
    out = tmp_path / "t.resb"
    code, _, _ = run(
        capsys, "--threads", 2, "gen-data", "--count", 4, "--block-size", 8,
        "--rho", 0.5, "--sigma", 1, "--out", out,
    )
    assert code == 0 and out.exists()


def test_gen_data_is_seeded(tmp_path, capsys):
    a, b, c = tmp_path / "a.resb", tmp_path / "b.resb", tmp_path / "c.resb"
    base = ["gen-data", "--count", 5, "--block-size", 8, "--rho", 0.5, "--sigma", 2]
    assert run(capsys, "--seed", 3, *base[:0], *base, "--out", a)[0] == 0
    assert run(capsys, "--seed", 3, *base, "--out", b)[0] == 0
    assert run(capsys, "--seed", 4, *base, "--out", c)[0] == 0
    assert a.read_bytes() == b.read_bytes() != c.read_bytes()


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-data -> train -> encode -> decode -> eval, entirely via the CLI."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "train.resb"
    cfg = root / "train.cfg"
    ckdir = root / "ck"
    assert main([
        "--seed", "1", "gen-data", "--count", "192", "--block-size", "8",
        "--rho", "0.8", "--sigma", "8", "--out", str(data),
    ]) == 0
    cfg.write_text(
        "kind = linear_dct\n"
        "hyperprior = true\n"
        "multi_rate = false\n"
        "lambda_grid = 64\n"
        "hyper_widths = 16, 8, 4\n"
        "epochs = 3\n"
        "learning_rate = 1e-3\n"
        "batch_size = 64\n"
        "train_fraction = 0.85\n"
    )
    code = main([
        "train", "--config", str(cfg), "--data", str(data), "--out", str(ckdir),
    ])
    assert code == 0
    return root, data, ckdir / "best.rcmp"


def test_train_writes_checkpoint(pipeline):
    _, _, model_path = pipeline
    model = modelio.load_model(model_path)
    assert model.block_size == 8
    assert model_path.with_suffix(".json").exists()


def test_encode_decode_cycle(pipeline, capsys):
    root, data, model_path = pipeline
    bitstream = root / "d.rcbs"
    recon = root / "dhat.resb"
    code, _, err = run(
        capsys, "encode", "--model", model_path, "--lambda", 64,
        "--in", data, "--out", bitstream,
    )
    assert code == 0 and "bpp" in err
    code, _, _ = run(
        capsys, "decode", "--model", model_path, "--in", bitstream, "--out", recon,
    )
    assert code == 0
    out = blockio.load_blocks(recon)
    src = blockio.load_blocks(data)
    assert len(out) == len(src)
    assert np.mean((out.data - src.data) ** 2) < np.mean(src.data**2)


def test_decode_with_wrong_model_exits_4(pipeline, tmp_path, capsys):
    root, data, model_path = pipeline
    from rescodec import transforms

    other = transforms.linear_model(8, np.array([64.0]), hyper_widths=(16, 8, 4), seed=9)
    other_path = tmp_path / "other.rcmp"
    modelio.save_model(other, other_path)
    bitstream = root / "d.rcbs"
    code, _, _ = run(capsys, "decode", "--model", other_path, "--in", bitstream, "--out", tmp_path / "x.resb")
    assert code == 4


def test_encode_lambda_out_of_range_exits_5(pipeline, tmp_path, capsys):
    root, data, model_path = pipeline
    code, _, _ = run(
        capsys, "encode", "--model", model_path, "--lambda", 1e9,
        "--in", data, "--out", tmp_path / "x.rcbs",
    )
    assert code == 5


def test_missing_file_exits_3(pipeline, tmp_path, capsys):
    _, _, model_path = pipeline
    bad = tmp_path / "junk.resb"
    bad.write_bytes(b"JUNK" + bytes(20))
    code, _, _ = run(capsys, "encode", "--model", model_path, "--lambda", 64, "--in", bad, "--out", tmp_path / "x.rcbs")
    assert code == 3


def test_eval_and_bdrate_and_report(pipeline, tmp_path, capsys):
    root, data, model_path = pipeline
    rep = tmp_path / "rep"
    code, out, _ = run(
        capsys, "eval", "--model", model_path, "--data", data,
        "--lambdas", "64", "--label", "demo", "--out", rep,
    )
    assert code == 0
    assert (rep / "demo.csv").exists() and (rep / "report.svg").exists()
    assert out.startswith("demo,")

    # identical curves -> BD-rate 0
    c = metrics.RDCurve([0.5, 1.0, 2.0, 4.0], [30.0, 35.0, 40.0, 45.0], "psnr", "a", [1, 2, 3, 4])
    pa = tmp_path / "a.csv"
    metrics.write_curve_csv(c, pa)
    code, out, _ = run(capsys, "bdrate", "--ref", pa, "--test", pa)
    assert code == 0
    assert float(out.strip()) == 0.0

    code, _, _ = run(capsys, "report", "--curves", pa, pa, "--out", tmp_path / "rep2")
    assert code == 0
    assert (tmp_path / "rep2" / "report.svg").exists()
