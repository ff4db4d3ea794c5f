"""Subsampling sweep with both network schemes next to the raster baseline.

Writes sweep_per_subsampling.csv and sweep_interpolated.csv (plus JSON
sidecars with timings and trend flags) into --out.
"""

import argparse
import time
from dataclasses import replace
from pathlib import Path

from nvb import harness
from nvb.harness import ModelSpec, Splits, SweepSpec

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--data", type=Path, default=Path("data"), help="directory from make_datasets.py")
p.add_argument("--out", type=Path, default=Path("results"))
p.add_argument("--seed", type=int, default=0)
p.add_argument("--jobs", type=int, default=None)
p.add_argument("--epochs", type=int, default=ModelSpec().train.max_epochs)
args = p.parse_args()

splits = Splits.load(*(args.data / f"{n}.nvds" for n in ("train", "valid", "test")))
spec = ModelSpec()
spec = replace(spec, train=replace(spec.train, max_epochs=args.epochs))
jobs = args.jobs or harness.default_jobs()

t0 = time.perf_counter()
per, nets = harness.sweep_per_subsampling(SweepSpec(seed=args.seed, jobs=jobs), splits, spec)
per.to_csv(args.out / "sweep_per_subsampling.csv")
harness.write_meta(per, args.out / "sweep_per_subsampling.json")
print(f"per-subsampling sweep: {time.perf_counter() - t0:.0f} s")

t0 = time.perf_counter()
interp, _ = harness.sweep_interpolated(SweepSpec(scheme="interpolate-to-full", seed=args.seed, jobs=jobs), splits, spec, net=nets.get(600))
interp.to_csv(args.out / "sweep_interpolated.csv")
harness.write_meta(interp, args.out / "sweep_interpolated.json")
harness.write_column_readme(args.out)
print(f"interpolated sweep: {time.perf_counter() - t0:.0f} s")

for a, b in zip(per.rows, interp.rows):
    print(
        f"{a.n_points:4d} pts  ML {a.ml_mae_mhz:7.3f} / interp {b.ml_mae_mhz:7.3f} MHz   "
        f"raster {a.raster_normalized_error_mhz:10.3f} / interp {b.raster_normalized_error_mhz:10.3f} MHz"
    )
