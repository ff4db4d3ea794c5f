"""Dataset-size curves, width/SNR robustness matrix and the surrogate arm."""

import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from nvb import dataset as dsm
from nvb import harness
from nvb.dataset import GenerationConfig
from nvb.harness import ModelSpec, Splits

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--data", type=Path, default=Path("data"), help="directory from make_datasets.py")
p.add_argument("--out", type=Path, default=Path("results"))
p.add_argument("--seed", type=int, default=0)
p.add_argument("--sizes", type=int, nargs="+", default=[1000, 10000])
p.add_argument("--with-100k", action="store_true", help="also train on 100k generated samples (slow)")
p.add_argument("--only", choices=("size", "robustness", "surrogate"))
p.add_argument("--epochs", type=int, default=ModelSpec().train.max_epochs)
args = p.parse_args()

splits = Splits.load(*(args.data / f"{n}.nvds" for n in ("train", "valid", "test")))
base = splits.train.config or GenerationConfig()
spec = ModelSpec()
spec = replace(spec, train=replace(spec.train, max_epochs=args.epochs))

if args.only in (None, "size"):
    sizes = list(args.sizes) + ([100_000] if args.with_100k else [])
    nets = harness.dataset_size_study(sizes, replace(base, seed=101), splits.valid, spec, train=splits.train, seed=args.seed)
    harness.size_curves_csv(nets, args.out / "dataset_size.csv")
    for n, net in nets.items():
        print(f"size {n:6d}: best validation MAE {net.record.best_valid_mae_mhz:.3f} MHz at epoch {net.record.best_epoch}")

if args.only in (None, "robustness"):
    nets = {}
    for j, arm in enumerate(sorted(harness.TRAIN_ARMS)):
        cfg = harness.arm_config(arm, base)
        tr = dsm.generate_dataset(replace(cfg, n_samples=len(splits.train), seed=71 + 2 * j))
        va = dsm.generate_dataset(replace(cfg, n_samples=len(splits.valid), seed=72 + 2 * j))
        nets[arm] = harness.train_network(tr, va, spec, harness.cell_seed(args.seed, tr.n_points))
        print(f"trained {arm}")
    cells = harness.robustness_matrix(nets, harness.robustness_test_sets(base))
    harness.robustness_csv(cells, args.out / "robustness.csv")
    for arm, factor in (("fixed-width", "width"), ("width-range", "width"), ("fixed-snr", "snr"), ("snr-range", "snr")):
        spreads = [harness.spread(cells, arm, factor, c) for c in harness.DEFAULT_POINT_COUNTS]
        print(f"{arm:12s} {factor} spread (MHz): " + " ".join(f"{s:.2f}" for s in spreads))

if args.only in (None, "surrogate"):
    small = Splits(splits.train.subset(np.arange(1000)), splits.valid, splits.test)
    res = harness.surrogate_study(small, spec)
    harness.surrogate_csv(res, args.out / "surrogate.csv")
    for (model, test_set), mae in res.mae.items():
        print(f"{model:15s} {test_set:16s} {mae:.3f} MHz")

harness.write_column_readme(args.out)
