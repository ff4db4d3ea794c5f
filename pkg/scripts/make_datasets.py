"""Generate the desk-scale train/valid/test files used by the other scripts."""

import argparse
from dataclasses import replace
from pathlib import Path

from nvb import dataset as dsm
from nvb.dataset import GenerationConfig

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--out", type=Path, default=Path("data"))
p.add_argument("--n-train", type=int, default=10_000)
p.add_argument("--n-valid", type=int, default=2_000)
p.add_argument("--n-test", type=int, default=2_000)
p.add_argument("--width-mhz", type=float, default=10.0)
p.add_argument("--snr", type=float, nargs=2, default=(2.5, 10.0))
args = p.parse_args()

args.out.mkdir(parents=True, exist_ok=True)
base = GenerationConfig(width_mhz=args.width_mhz, snr=tuple(args.snr))
for name, n, seed in (("train", args.n_train, 11), ("valid", args.n_valid, 12), ("test", args.n_test, 13)):
    path = dsm.save(dsm.generate_dataset(replace(base, n_samples=n, seed=seed)), args.out / f"{name}.nvds")
    print(f"{path}: {n} samples")
