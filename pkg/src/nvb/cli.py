"""Command-line entry point: ``python -m nvb <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import dataset as dsm
from . import harness, mlp, search
from .dataset import GenerationConfig
from .mlp import TrainConfig

DEFAULT_SEED = 20240


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _range(values: Sequence[float]):
    if len(values) == 1:
        return float(values[0])
    if len(values) == 2:
        return (float(values[0]), float(values[1]))
    raise UsageError("expected one value or a lo hi pair")


# --- parser -----------------------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="master RNG seed (count; default %(default)s)")
    p.add_argument("--config", type=Path, help="JSON file of flag values; explicit flags win")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (count; default $NVB_JOBS or all cores)")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    return p


def _model_flags(p: argparse.ArgumentParser) -> None:
    spec = harness.ModelSpec()
    p.add_argument("--epochs", type=int, default=spec.train.max_epochs, help="max training epochs (count, <= 100)")
    p.add_argument("--lr", type=float, default=spec.train.learning_rate, help="Adam learning rate")
    p.add_argument("--batch-size", type=int, default=spec.train.batch_size, help="minibatch size (count)")
    p.add_argument("--dropout", type=float, default=spec.train.dropout_rate, help="dropout rate in [0, 1)")
    p.add_argument("--weight-decay", type=float, default=spec.train.weight_decay, help="decoupled weight decay")
    p.add_argument("--layers", type=int, default=spec.hidden_layers, help="hidden layers (count)")
    p.add_argument("--hidden", type=int, default=spec.hidden_width, help="neurons per hidden layer (count)")


def _gen_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, default=1000, help="samples (count)")
    p.add_argument("--points", type=int, default=600, help="frequency points across the window (count)")
    p.add_argument(
        "--width-mhz", "--width", dest="width_mhz", type=float, nargs="+", default=[10.0],
        help="Lorentzian FWHM in MHz; one value or a lo hi range",
    )
    p.add_argument(
        "--snr-range", "--snr", dest="snr_range", type=float, nargs="+", default=[2.5, 10.0],
        help="contrast / noise sigma (ratio); one value or a lo hi range",
    )
    p.add_argument("--margin-mhz", type=float, default=30.0, help="keep resonances this far inside the window (MHz)")
    p.add_argument("--non-overlap", action="store_true", help="reject fields whose resonances sit closer than 2 widths")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    root = _Parser(prog="nvb", description="NV-center ODMR synthesis, raster fitting and MLP sweeps.")
    sub = root.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common], help="synthesize a dataset file")
    _gen_flags(g)
    g.add_argument(
        "--split", type=float, nargs=3, metavar=("TRAIN", "VALID", "TEST"), default=None,
        help="label samples train/valid/test in these proportions",
    )
    g.add_argument("--out", type=Path, required=True, help="output .nvds path")

    t = sub.add_parser("train", parents=[common], help="train one network")
    t.add_argument("--data", type=Path, required=True, help="training dataset (.nvds)")
    t.add_argument("--valid", type=Path, help="validation dataset; default: the file's valid split or its last 20%%")
    t.add_argument("--subsample", type=int, default=1, help="keep every k-th point (count)")
    _model_flags(t)
    t.add_argument("--out", type=Path, help="model path (.nvml)")

    pr = sub.add_parser("predict", parents=[common], help="predict resonance frequencies (MHz)")
    pr.add_argument("--model", type=Path, required=True, help="model path (.nvml)")
    pr.add_argument("--data", type=Path, required=True, help="dataset (.nvds)")
    pr.add_argument("--subsample", type=int, default=1, help="keep every k-th point (count)")
    pr.add_argument("--interpolate", action="store_true", help="interpolate subsampled spectra back to the full grid")
    pr.add_argument("--out", type=Path, required=True, help="CSV of predicted frequencies (MHz)")

    r = sub.add_parser("raster", parents=[common], help="Lorentzian raster-fit baseline")
    r.add_argument("--data", type=Path, required=True, help="dataset (.nvds)")
    r.add_argument("--subsample", type=int, default=1, help="keep every k-th point (count)")
    r.add_argument("--interpolate", action="store_true", help="interpolate subsampled spectra back to the full grid")
    r.add_argument("--out", type=Path, required=True, help="CSV with columns mae, P, normalized_error (MHz)")

    s = sub.add_parser("search", parents=[common], help="random search with successive halving")
    s.add_argument("--data", type=Path, required=True, help="training dataset (.nvds)")
    s.add_argument("--valid", type=Path, help="validation dataset (.nvds)")
    s.add_argument("--subsample", type=int, default=1, help="keep every k-th point (count)")
    s.add_argument("--trials", type=int, default=16, help="sampled configurations (count)")
    s.add_argument("--reduction", type=int, default=3, help="halving factor r (count)")
    s.add_argument("--min-epochs", type=int, default=1, help="first rung (epochs)")
    s.add_argument("--epochs", type=int, default=mlp.MAX_EPOCHS, help="last rung (epochs, <= 100)")
    s.add_argument("--out", type=Path, required=True, help="JSON-lines search report")
    s.add_argument("--model-out", type=Path, help="save the winning model here (.nvml)")

    w = sub.add_parser("sweep", parents=[common], help="subsampling sweep: networks vs raster")
    w.add_argument("--data", type=Path, help="dataset with train/valid/test split labels")
    w.add_argument("--train", type=Path, help="training dataset (.nvds)")
    w.add_argument("--valid", type=Path, help="validation dataset (.nvds)")
    w.add_argument("--test", type=Path, help="test dataset (.nvds)")
    w.add_argument("--scheme", choices=harness.SCHEMES, default="per-subsampling", help="network scheme")
    w.add_argument(
        "--point-counts", type=int, nargs="+", default=list(harness.DEFAULT_POINT_COUNTS),
        help="point counts to evaluate (counts)",
    )
    w.add_argument("--no-raster", action="store_true", help="skip the Lorentzian baseline")
    _model_flags(w)
    w.add_argument("--out", type=Path, required=True, help="output CSV path")

    y = sub.add_parser("study", parents=[common], help="dataset-size, robustness or surrogate study")
    y.add_argument("kind", choices=("size", "robustness", "surrogate"), help="which study to run")
    _gen_flags(y)
    y.add_argument("--sizes", type=int, nargs="+", default=[1000, 10000], help="training sizes (counts)")
    y.add_argument("--valid-n", type=int, default=2000, help="validation samples (count)")
    y.add_argument("--test-n", type=int, default=2000, help="in-distribution test samples (count)")
    y.add_argument("--arms", nargs="+", default=sorted(harness.TRAIN_ARMS), help="robustness training arms")
    y.add_argument(
        "--point-counts", type=int, nargs="+", default=list(harness.DEFAULT_POINT_COUNTS),
        help="point counts for the robustness matrix (counts)",
    )
    _model_flags(y)
    y.add_argument("--out", type=Path, required=True, help="output CSV path")
    return root


def _apply_config(parser: argparse.ArgumentParser, argv: List[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    try:
        overrides = json.loads(args.config.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.config}: not valid JSON ({exc})")
    known = set(vars(args))
    bad = sorted(set(k.replace("-", "_") for k in overrides) - known)
    if bad:
        raise UsageError(f"unknown config key(s): {', '.join(bad)}")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    # string values pass through each flag's type conversion
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in overrides.items()})
    # re-parse so explicit flags override file values
    return parser.parse_args(argv)


# --- helpers -----------------------------------------------------------------------


def _gen_config(a, n=None, seed=None) -> GenerationConfig:
    return GenerationConfig(
        n_samples=n if n is not None else a.n,
        n_points=a.points,
        width_mhz=_range(a.width_mhz),
        snr=_range(a.snr_range),
        margin_mhz=a.margin_mhz,
        non_overlap_filter=a.non_overlap,
        seed=a.seed if seed is None else seed,
    )


def _model_spec(a) -> harness.ModelSpec:
    cfg = TrainConfig(a.lr, a.batch_size, a.dropout, a.weight_decay, a.epochs, a.seed)
    return harness.ModelSpec(a.layers, a.hidden, cfg)


def _jobs(a) -> int:
    return a.jobs if a.jobs else harness.default_jobs()


def _train_valid(a):
    ds = dsm.load(a.data)
    if a.valid is not None:
        return ds.part(dsm.TRAIN) if np.any(ds.split == dsm.VALID) else ds, dsm.load(a.valid)
    if np.any(ds.split == dsm.VALID):
        return ds.part(dsm.TRAIN), ds.part(dsm.VALID)
    labels = dsm.split_labels(len(ds), (0.8, 0.2, 0.0))
    return ds.subset(np.flatnonzero(labels == dsm.TRAIN)), ds.subset(np.flatnonzero(labels == dsm.VALID))


def _resample(ds, step: int, interpolate: bool):
    if interpolate:
        return harness.interpolated_test(ds, step)
    return dsm.subsample_dataset(ds, step)


# --- subcommands -------------------------------------------------------------------


def cmd_generate(a) -> str:
    split = tuple(a.split) if a.split else None
    ds = dsm.generate_dataset(_gen_config(a), split_fractions=split)
    dsm.save(ds, a.out)
    return f"wrote {len(ds)} samples x {ds.n_points} points to {a.out}"


def cmd_train(a) -> str:
    tr, va = (dsm.subsample_dataset(d, a.subsample) for d in _train_valid(a))
    spec = _model_spec(a)
    net = harness.train_network(tr, va, spec)
    if a.out:
        mlp.save_model(
            net.model, a.out, net.spec.train, net.record,
            extra={"norm": asdict(net.bounds), "subsample_step": a.subsample, "grid_mhz": tr.grid.tolist()},
        )
    return f"best validation MAE {net.record.best_valid_mae_mhz!r} MHz at epoch {net.record.best_epoch}"


def _load_net(path: Path) -> harness.TrainedNet:
    model = mlp.load_model(path)
    side = mlp.load_sidecar(path)
    if not side.get("norm"):
        raise ValueError(f"{path}: sidecar lacks normalization bounds")
    bounds = dsm.NormBounds(**side["norm"])
    return harness.TrainedNet(model, bounds, mlp.TrainRecord(**side["train_record"]), harness.ModelSpec())


def cmd_predict(a) -> str:
    net = _load_net(a.model)
    ds = _resample(dsm.load(a.data), a.subsample, a.interpolate)
    pred = net.predict_mhz(ds)
    header = [f"f{j}_mhz" for j in range(pred.shape[1])]
    harness.write_csv(a.out, header, pred.tolist())
    err = float(np.mean(np.abs(pred - ds.truth)))
    return f"wrote {len(pred)} predictions to {a.out}; MAE {err!r} MHz"


def cmd_raster(a) -> str:
    ds = _resample(dsm.load(a.data), a.subsample, a.interpolate)
    rep = harness.raster_report(ds, _jobs(a))
    harness.write_csv(a.out, ["mae", "P", "normalized_error"], [[rep.mae_mhz, rep.success_probability, rep.normalized_error_mhz]])
    return f"{a.out}: mae {rep.mae_mhz!r} MHz, P {rep.success_probability!r}"


def cmd_search(a) -> str:
    tr, va = (dsm.subsample_dataset(d, a.subsample) for d in _train_valid(a))
    bounds = dsm.compute_bounds(tr, use_split=None)
    res = search.run_asha(
        a.trials, a.reduction, a.min_epochs, a.epochs,
        (bounds.inputs(tr.values), bounds.targets(tr.truth)),
        (bounds.inputs(va.values), bounds.targets(va.truth)),
        seed=a.seed,
        target_span_mhz=bounds.f_max - bounds.f_min,
    )
    res.write_report(a.out)
    if a.model_out:
        mlp.save_model(res.model, a.model_out, res.best.config, None, extra={"norm": asdict(bounds), "subsample_step": a.subsample})
    return f"best validation MAE {res.best.valid_mae_mhz!r} MHz (trial {res.best.index}); report {a.out}"


def cmd_sweep(a) -> str:
    if a.data is not None:
        splits = harness.Splits.from_container(dsm.load(a.data))
    elif a.train and a.valid and a.test:
        splits = harness.Splits.load(a.train, a.valid, a.test)
    else:
        raise UsageError("sweep needs --data or all of --train --valid --test")
    spec = harness.SweepSpec(tuple(a.point_counts), a.scheme, a.seed, not a.no_raster, _jobs(a))
    if a.scheme == "per-subsampling":
        report, _ = harness.sweep_per_subsampling(spec, splits, _model_spec(a))
    else:
        report, _ = harness.sweep_interpolated(spec, splits, _model_spec(a))
    report.to_csv(a.out)
    harness.write_meta(report, a.out.with_suffix(".json"))
    harness.write_column_readme(a.out.parent)
    return f"wrote {a.out}"


def cmd_study(a) -> str:
    spec = _model_spec(a)
    base = _gen_config(a, seed=a.seed)
    valid = dsm.generate_dataset(replace(base, n_samples=a.valid_n, seed=a.seed + 1))
    if a.kind == "size":
        nets = harness.dataset_size_study(a.sizes, base, valid, spec, seed=a.seed)
        harness.size_curves_csv(nets, a.out)
        best = {n: net.record.best_valid_mae_mhz for n, net in nets.items()}
        summary = ", ".join(f"{n}: {v:.3f}" for n, v in best.items())
        msg = f"best validation MAE by size (MHz) {summary}"
    elif a.kind == "robustness":
        nets = {}
        for arm in a.arms:
            cfg = harness.arm_config(arm, base)
            tr = dsm.generate_dataset(cfg)
            va = dsm.generate_dataset(replace(cfg, n_samples=a.valid_n, seed=a.seed + 1))
            nets[arm] = harness.train_network(tr, va, spec)
        cells = harness.robustness_matrix(nets, harness.robustness_test_sets(base), a.point_counts)
        harness.robustness_csv(cells, a.out)
        msg = f"wrote {len(cells)} robustness cells"
    else:
        test = dsm.generate_dataset(replace(base, n_samples=a.test_n, seed=a.seed + 2))
        res = harness.surrogate_study(harness.Splits(dsm.generate_dataset(base), valid, test), spec)
        harness.surrogate_csv(res, a.out)
        msg = "surrogate MAE (MHz) " + ", ".join(f"{m}/{t}: {v:.3f}" for (m, t), v in res.mae.items())
    harness.write_column_readme(a.out.parent)
    return f"{msg}; wrote {a.out}"


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "predict": cmd_predict,
    "raster": cmd_raster,
    "search": cmd_search,
    "sweep": cmd_sweep,
    "study": cmd_study,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if not exc.code else 1
    except FileNotFoundError as exc:
        print(f"error: missing file {exc.filename}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        print(COMMANDS[args.command](args))
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: missing file {exc.filename}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())
