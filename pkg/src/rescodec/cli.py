"""Command line entry point: gen-data, train, encode, decode, eval, bdrate,
report.

Machine-readable results go to stdout or files; progress and diagnostics to
stderr. Every error class exits with its own code (usage errors exit 2 via
argparse).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import blockio, codec, metrics, modelio, training, transforms
from .errors import RescodecError


def _log(msg):
    print(msg, file=sys.stderr)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="rescodec",
        description="Learned transform coding toolkit for prediction-residual blocks.",
    )
    parser.add_argument("--seed", type=int, default=0, help="global random seed (default 0)")
    parser.add_argument(
        "--threads",
        type=int,
        default=1,
        help="cap numeric thread pools (default 1 for reproducible timing)",
    )
    # The same flags are accepted after the subcommand; SUPPRESS keeps the
    # subparser from clobbering values parsed at the top level.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="generate synthetic AR(1) residual blocks")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--block-size", type=int, required=True)
    g.add_argument("--rho", type=float, required=True)
    g.add_argument("--sigma", type=float, required=True)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", parents=[common], help="train a model on a RESB dataset")
    t.add_argument("--config", required=True, help="key=value config file")
    t.add_argument("--data", required=True, help="training RESB file")
    t.add_argument("--val", help="validation RESB file (default: split from --data)")
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--epochs", type=int, help="override config epochs")
    t.add_argument("--learning-rate", type=float, help="override config learning_rate")
    t.add_argument("--batch-size", type=int, help="override config batch_size")

    e = sub.add_parser("encode", parents=[common], help="encode a RESB dataset to a RCBS bitstream")
    e.add_argument("--model", required=True)
    e.add_argument("--lambda", dest="lam", type=float, required=True)
    e.add_argument("--in", dest="inp", required=True)
    e.add_argument("--out", required=True)

    d = sub.add_parser("decode", parents=[common], help="decode a RCBS bitstream to reconstructions")
    d.add_argument("--model", required=True)
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--out", required=True)

    v = sub.add_parser("eval", parents=[common], help="R-D sweep of a model over a dataset")
    v.add_argument("--model", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--lambdas", help="comma list; default: the model's grid")
    v.add_argument("--metric", choices=metrics.QUALITY_METRICS, default="psnr")
    v.add_argument("--label", help="curve label (default derived from the model)")
    v.add_argument("--out", required=True, help="report directory (CSV + SVG)")

    b = sub.add_parser("bdrate", parents=[common], help="Bjontegaard delta rate between two curve CSVs")
    b.add_argument("--ref", required=True)
    b.add_argument("--test", required=True)

    r = sub.add_parser("report", parents=[common], help="combined plot from several curve CSVs")
    r.add_argument("--curves", nargs="+", required=True)
    r.add_argument("--metric", choices=metrics.QUALITY_METRICS, default="psnr")
    r.add_argument("--out", required=True)
    return parser


def _cmd_gen_data(args):
    ds = blockio.synth_residuals(args.seed, args.count, args.block_size, args.rho, args.sigma)
    blockio.write_blocks(ds, args.out)
    _log(f"wrote {len(ds)} {args.block_size}x{args.block_size} blocks to {args.out}")
    return 0


def _train_config_from(args):
    raw = training.parse_config_file(args.config)
    overrides = {
        "epochs": args.epochs,
        "learning_rate": args.learning_rate,
        "batch_size": args.batch_size,
    }
    for key, value in overrides.items():
        if value is not None:
            raw[key] = value
    raw.setdefault("seed", args.seed)
    return raw


def _cmd_train(args):
    raw = _train_config_from(args)
    data = blockio.load_blocks(args.data)
    if args.val:
        train_ds, val_ds = data, blockio.load_blocks(args.val)
    else:
        fraction = float(raw.pop("train_fraction", 0.9))
        train_ds, val_ds = blockio.split(data, fraction, seed=int(raw["seed"]))
    grid = raw.pop("lambda_grid", None)
    if grid is None:
        grid = training.DEFAULT_LAMBDA_GRID
    grid = np.atleast_1d(np.asarray(grid, dtype=np.float64))
    kind = raw.pop("kind", transforms.KIND_LINEAR)
    hyperprior = bool(raw.pop("hyperprior", True))
    hyper_widths = tuple(raw.pop("hyper_widths", (256, 128, 64)))
    seed = int(raw.pop("seed"))
    if kind == transforms.KIND_LINEAR:
        model = transforms.linear_model(
            train_ds.block_size, grid, hyperprior=hyperprior, hyper_widths=hyper_widths, seed=seed
        )
    elif kind == transforms.KIND_NONLINEAR:
        ae_channels = tuple(raw.pop("ae_channels", (256, 128, 64, 64)))
        model = transforms.nonlinear_model(
            train_ds.block_size,
            grid,
            hyperprior=hyperprior,
            ae_channels=ae_channels,
            hyper_widths=hyper_widths,
            seed=seed,
        )
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    config = training.TrainConfig(
        epochs=int(raw.pop("epochs")),
        learning_rate=float(raw.pop("learning_rate")),
        lambda_grid=grid,
        batch_size=int(raw.pop("batch_size", 512)),
        multi_rate=bool(raw.pop("multi_rate", len(grid) > 1)),
        seed=seed,
        checkpoint_dir=args.out,
    )
    if raw:
        raise ValueError(f"unknown config keys: {sorted(raw)}")
    training.calibrate_model(model, train_ds.data[: config.batch_size])
    _log(
        f"training {kind} ({'hyper' if hyperprior else 'factorized'}) for "
        f"{config.epochs} epochs on {len(train_ds)} blocks"
    )
    ck = training.train(config, model, train_ds, val_ds)
    _log(f"best epoch {ck.epoch}, validation loss {ck.total_val_loss():.4f}")
    print(str(Path(args.out) / "best.rcmp"))
    return 0


def _cmd_encode(args):
    model = modelio.load_model(args.model)
    data = blockio.load_blocks(args.inp)
    result = codec.encode(model, data, args.lam, path=args.out)
    bpp = result.file_bits.sum() / (len(data) * data.block_size**2)
    _log(f"encoded {len(data)} blocks at lambda={args.lam:g}: {bpp:.4f} bpp")
    return 0


def _cmd_decode(args):
    model = modelio.load_model(args.model)
    result = codec.decode(model, args.inp)
    blockio.write_blocks(result.dataset, args.out)
    _log(f"decoded {len(result.dataset)} blocks (lambda={result.lam:g}) to {args.out}")
    return 0


def _cmd_eval(args):
    model = modelio.load_model(args.model)
    data = blockio.load_blocks(args.data)
    if args.lambdas:
        lambdas = [float(s) for s in args.lambdas.split(",")]
    else:
        lambdas = model.lambda_grid.tolist()
    curve = metrics.rd_sweep(model, data, lambdas, metric=args.metric, label=args.label)
    written = metrics.emit_report([curve], args.out)
    for lam, r, q in zip(curve.lambdas, curve.rates, curve.qualities):
        print(f"{curve.label},{float(lam)!r},{float(r)!r},{float(q)!r}")
    _log(f"model inference cost ~{transforms.flops_per_pixel(model):.0f} FLOPs/pixel (informational)")
    _log(f"report written to {written['svg']}")
    return 0


def _cmd_bdrate(args):
    ref = metrics.read_curve_csv(args.ref)
    test = metrics.read_curve_csv(args.test)
    print(f"{metrics.bd_rate(ref, test):.6g}")
    return 0


def _cmd_report(args):
    curves = [metrics.read_curve_csv(p, metric=args.metric) for p in args.curves]
    written = metrics.emit_report(curves, args.out)
    _log(f"report written to {written['svg']}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "encode": _cmd_encode,
    "decode": _cmd_decode,
    "eval": _cmd_eval,
    "bdrate": _cmd_bdrate,
    "report": _cmd_report,
}


def dispatch(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return _COMMANDS[args.command](args)
    with threadpool_limits(limits=max(1, args.threads)):
        return _COMMANDS[args.command](args)


def main(argv=None) -> int:
    try:
        return dispatch(argv)
    except RescodecError as e:
        _log(f"error: {e}")
        return e.exit_code
    except OSError as e:
        _log(f"i/o error: {e}")
        return 7
    except ValueError as e:
        _log(f"error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
