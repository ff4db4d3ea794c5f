"""Desk-scale experiment sweeps: per-subsampling networks, one interpolating
network, the raster baseline, dataset-size curves, robustness matrices and a
surrogate domain-shift arm. Every experiment writes one CSV."""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import dataset as dsm
from . import mlp, raster
from .dataset import DatasetContainer, GenerationConfig, NormBounds
from .mlp import Architecture, MlpModel, TrainConfig, TrainRecord

DEFAULT_POINT_COUNTS = (600, 300, 200, 150, 120, 100, 86, 75, 67, 60)
SCHEMES = ("per-subsampling", "interpolate-to-full")
ROBUSTNESS_WIDTHS = (6.0, 10.0, 15.0)
ROBUSTNESS_SNRS = (2.5, 4.0, 10.0)
TRAIN_ARMS = {
    "fixed-width": {"width_mhz": 10.0},
    "width-range": {"width_mhz": (5.0, 16.0)},
    "fixed-snr": {"snr": 4.0},
    "snr-range": {"snr": (2.5, 10.0)},
}
SURROGATE_WIDTH_JITTER = 0.2
SURROGATE_TILT = 0.01


@dataclass(frozen=True)
class ModelSpec:
    """Architecture (minus input size) plus optimizer settings for one network."""

    hidden_layers: int = 4
    hidden_width: int = 256
    train: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=1e-4, batch_size=4, max_epochs=100))

    def architecture(self, input_dim: int) -> Architecture:
        return Architecture(input_dim, self.hidden_layers, self.hidden_width)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ModelSpec":
        return cls(d["hidden_layers"], d["hidden_width"], TrainConfig(**d["train"]))


@dataclass
class SweepSpec:
    point_counts: Tuple[int, ...] = DEFAULT_POINT_COUNTS
    scheme: str = "per-subsampling"
    seed: int = 0
    run_raster: bool = True
    jobs: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        self.point_counts = tuple(int(c) for c in self.point_counts)


@dataclass
class Splits:
    train: DatasetContainer
    valid: DatasetContainer
    test: DatasetContainer

    @classmethod
    def load(cls, train, valid, test) -> "Splits":
        return cls(dsm.load(train), dsm.load(valid), dsm.load(test))

    @classmethod
    def from_container(cls, ds: DatasetContainer) -> "Splits":
        return cls(ds.part(dsm.TRAIN), ds.part(dsm.VALID), ds.part(dsm.TEST))


@dataclass
class TrainedNet:
    model: MlpModel
    bounds: NormBounds
    record: TrainRecord
    spec: ModelSpec

    def predict_mhz(self, ds: DatasetContainer) -> np.ndarray:
        return self.bounds.targets_inverse(self.model.predict(self.bounds.inputs(ds.values)))

    def per_sample_mae(self, ds: DatasetContainer) -> np.ndarray:
        return np.mean(np.abs(self.predict_mhz(ds) - ds.truth), axis=1)


@dataclass
class EvalRow:
    n_points: int
    step: int
    ml_mae_mhz: float = math.nan
    ml_std_mhz: float = math.nan
    raster_mae_mhz: float = math.nan
    raster_success_p: float = math.nan
    raster_normalized_error_mhz: float = math.nan
    raster_sensitivity: float = math.nan
    best_epoch: int = -1
    best_valid_mae_mhz: float = math.nan
    status: str = "ok"


@dataclass
class EvalReport:
    scheme: str
    rows: List[EvalRow]
    meta: dict = field(default_factory=dict)

    def row(self, n_points: int) -> EvalRow:
        for r in self.rows:
            if r.n_points == n_points:
                return r
        raise KeyError(n_points)

    def to_csv(self, path) -> Path:
        header = ["scheme"] + list(EvalRow.__dataclass_fields__)
        return write_csv(path, header, [[self.scheme] + list(asdict(r).values()) for r in self.rows])

    def trend_flags(self) -> Dict[str, bool]:
        """Statistical trend checks; reported, never asserted."""
        counts = [r.n_points for r in self.rows]
        flags = {}
        if counts:
            hi, lo = self.row(max(counts)), self.row(min(counts))
            flags["raster_normalized_error_grows_when_subsampled"] = bool(
                _gt(lo.raster_normalized_error_mhz, hi.raster_normalized_error_mhz)
            )
            flags["ml_beats_raster_at_every_count"] = all(
                _gt(r.raster_normalized_error_mhz, r.ml_mae_mhz) for r in self.rows
            )
        return flags


def _gt(a: float, b: float) -> bool:
    if math.isnan(b):
        return False
    return math.isnan(a) or a > b


# --- csv ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def read_csv(path) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


COLUMN_DOCS = {
    "scheme": "per-subsampling (one network per point count) or interpolate-to-full (one 600-point network)",
    "n_points": "frequency points kept after subsampling",
    "step": "subsampling step (every step-th point)",
    "ml_mae_mhz": "network MAE over 8 resonances and test samples, MHz",
    "ml_std_mhz": "standard deviation of per-sample network MAE, MHz",
    "raster_mae_mhz": "confidence-weighted Lorentzian-fit MAE over successful fits, MHz",
    "raster_success_p": "fraction of test samples fitted successfully",
    "raster_normalized_error_mhz": "raster_mae_mhz / sqrt(raster_success_p), MHz",
    "raster_sensitivity": "normalized error * sqrt(n_points / P) / gamma with T = n_points (proxy units)",
    "best_epoch": "epoch (0-based) of the best validation MAE",
    "best_valid_mae_mhz": "best validation MAE during training, MHz",
    "status": "ok, or the reason a cell failed (e.g. diverged)",
    "size": "training samples",
    "epoch": "0-based epoch",
    "train_loss": "mean squared error on normalized targets",
    "valid_mae_mhz": "validation MAE after the epoch, MHz",
    "model": "training arm (fixed-width, width-range, fixed-snr, snr-range, synthetic-only, mixed)",
    "factor": "varied test condition: width or snr",
    "value": "test condition value (MHz for width, ratio for snr)",
    "mae_mhz": "network MAE on the test set, MHz",
    "test_set": "in-distribution or surrogate (width-jittered, tilted; synthetic stand-in for real data)",
}


def write_column_readme(out_dir) -> Path:
    lines = ["# Result tables", "", "All errors are in MHz. Columns:", ""]
    lines += [f"- `{k}`: {v}" for k, v in COLUMN_DOCS.items()]
    path = Path(out_dir) / "README.md"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


# --- training / evaluation -----------------------------------------------------------


def cell_seed(seed: int, n_points: int) -> int:
    """Training seed for a sweep cell; shared by both schemes at equal point counts."""
    return int(np.random.SeedSequence([seed, n_points]).generate_state(1)[0])


def train_network(train: DatasetContainer, valid: DatasetContainer, spec: ModelSpec, seed: Optional[int] = None) -> TrainedNet:
    """Normalize with training-set bounds, train and return the best-on-validation network."""
    cfg = spec.train if seed is None else replace(spec.train, seed=seed)
    bounds = dsm.compute_bounds(train, use_split=None)
    model = mlp.init_model(spec.architecture(train.n_points), seed=cfg.seed)
    span = bounds.f_max - bounds.f_min
    best, record = mlp.train(
        model,
        (bounds.inputs(train.values), bounds.targets(train.truth)),
        (bounds.inputs(valid.values), bounds.targets(valid.truth)),
        cfg,
        target_span_mhz=span,
    )
    return TrainedNet(best, bounds, record, replace(spec, train=cfg))


def _raster_chunk(ds: DatasetContainer) -> list:
    return [raster.fit_lorentzians(ds.sample(i)) for i in range(len(ds))]


def raster_report(ds: DatasetContainer, jobs: int = 1) -> raster.BatchFitReport:
    """batch_fit over a dataset, optionally split across worker processes."""
    if jobs <= 1 or len(ds) < 2 * jobs:
        results = _raster_chunk(ds)
    else:
        chunks = [ds.subset(idx) for idx in np.array_split(np.arange(len(ds)), jobs)]
        with ProcessPoolExecutor(jobs) as pool:
            results = [r for part in pool.map(_raster_chunk, chunks) for r in part]
    return raster.summarize_fits(results, ds.truth)


def _fill_raster(row: EvalRow, ds: DatasetContainer, jobs: int) -> None:
    rep = raster_report(ds, jobs)
    row.raster_mae_mhz = rep.mae_mhz
    row.raster_success_p = rep.success_probability
    row.raster_normalized_error_mhz = rep.normalized_error_mhz
    if rep.success_probability > 0:
        row.raster_sensitivity = float(raster.normalized_sensitivity(rep.mae_mhz, row.n_points, rep.success_probability))


def _fill_ml(row: EvalRow, net: TrainedNet, test: DatasetContainer) -> None:
    err = net.per_sample_mae(test)
    row.ml_mae_mhz = float(err.mean())
    row.ml_std_mhz = float(err.std())
    row.best_epoch = int(net.record.best_epoch)
    row.best_valid_mae_mhz = float(net.record.best_valid_mae_mhz)


def _subsampled_cell(args) -> Tuple[EvalRow, Optional[TrainedNet], float]:
    splits, n_points, step, model_spec, seed, run_raster = args
    row = EvalRow(n_points, step)
    t0 = time.perf_counter()
    tr, va, te = (dsm.subsample_dataset(d, step) for d in (splits.train, splits.valid, splits.test))
    net = None
    try:
        net = train_network(tr, va, model_spec, cell_seed(seed, n_points))
        _fill_ml(row, net, te)
    except mlp.TrainingDiverged as exc:
        row.status = f"diverged: {exc}"
    if run_raster:
        _fill_raster(row, te, 1)
    return row, net, time.perf_counter() - t0


def _map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


def sweep_per_subsampling(
    spec: SweepSpec, splits: Splits, model_spec: ModelSpec = ModelSpec()
) -> Tuple[EvalReport, Dict[int, TrainedNet]]:
    """Train and test a fresh network at every point count; raster on the same test samples."""
    steps = dsm.steps_for_counts(splits.train.n_points, spec.point_counts)
    cells = [(splits, c, s, model_spec, spec.seed, spec.run_raster) for c, s in zip(spec.point_counts, steps)]
    outputs = _map(_subsampled_cell, cells, spec.jobs)
    rows = [o[0] for o in outputs]
    nets = {o[0].n_points: o[1] for o in outputs if o[1] is not None}
    meta = {"seconds": {r.n_points: o[2] for r, o in zip(rows, outputs)}, "model_spec": model_spec.to_json()}
    return EvalReport("per-subsampling", rows, meta), nets


def interpolated_test(test: DatasetContainer, step: int) -> DatasetContainer:
    """Subsample then linearly interpolate back onto the full grid."""
    return dsm.interpolate_dataset(dsm.subsample_dataset(test, step), test.grid, extrapolate="hold")


def _interpolated_cell(args) -> Tuple[EvalRow, float]:
    net, test, n_points, step, run_raster = args
    t0 = time.perf_counter()
    row = EvalRow(n_points, step)
    te = interpolated_test(test, step)
    if net is not None:
        _fill_ml(row, net, te)
    else:
        row.status = "diverged"
    if run_raster:
        _fill_raster(row, te, 1)
    return row, time.perf_counter() - t0


def sweep_interpolated(
    spec: SweepSpec, splits: Splits, model_spec: ModelSpec = ModelSpec(), net: Optional[TrainedNet] = None
) -> Tuple[EvalReport, Optional[TrainedNet]]:
    """One full-resolution network; subsampled test spectra are interpolated back to it.

    The network is trained with the same cell seed as the full-resolution
    per-subsampling cell, so both schemes agree exactly at full resolution.
    Pass ``net`` to reuse an already trained full-resolution network.
    """
    n_full = splits.train.n_points
    if net is None:
        try:
            net = train_network(splits.train, splits.valid, model_spec, cell_seed(spec.seed, n_full))
        except mlp.TrainingDiverged:
            net = None
    steps = dsm.steps_for_counts(n_full, spec.point_counts)
    cells = [(net, splits.test, c, s, spec.run_raster) for c, s in zip(spec.point_counts, steps)]
    outputs = _map(_interpolated_cell, cells, spec.jobs)
    rows = [o[0] for o in outputs]
    meta = {"seconds": {r.n_points: o[1] for r, o in zip(rows, outputs)}, "model_spec": model_spec.to_json()}
    return EvalReport("interpolate-to-full", rows, meta), net


# --- dataset size ------------------------------------------------------------------


def dataset_size_study(
    sizes: Sequence[int],
    gen_config: GenerationConfig,
    valid: DatasetContainer,
    model_spec: ModelSpec = ModelSpec(),
    train: Optional[DatasetContainer] = None,
    seed: int = 0,
) -> Dict[int, TrainedNet]:
    """One full-resolution network per training-set size, identical spec and seed.

    Sizes up to ``len(train)`` use prefixes of ``train``; larger sizes are
    generated from ``gen_config``.
    """
    nets = {}
    for n in sizes:
        if train is not None and n <= len(train):
            tr = train.subset(np.arange(n))
        else:
            tr = dsm.generate_dataset(replace(gen_config, n_samples=n))
        nets[n] = train_network(tr, valid, model_spec, cell_seed(seed, valid.n_points))
    return nets


def size_curves_csv(nets: Mapping[int, TrainedNet], path) -> Path:
    rows = []
    for size, net in nets.items():
        rec = net.record
        for e, (loss, v) in enumerate(zip(rec.train_loss, rec.valid_mae_mhz)):
            rows.append([size, e, float(loss), float(v)])
    return write_csv(path, ["size", "epoch", "train_loss", "valid_mae_mhz"], rows)


# --- robustness --------------------------------------------------------------------


def arm_config(arm: str, base: GenerationConfig) -> GenerationConfig:
    if arm not in TRAIN_ARMS:
        raise ValueError(f"unknown training arm {arm!r}; choose from {sorted(TRAIN_ARMS)}")
    return replace(base, **TRAIN_ARMS[arm])


def robustness_test_sets(
    base: GenerationConfig,
    widths: Sequence[float] = ROBUSTNESS_WIDTHS,
    snrs: Sequence[float] = ROBUSTNESS_SNRS,
    n_samples: int = 100,
    seed: int = 500,
) -> Dict[Tuple[str, float], DatasetContainer]:
    """100-sample test sets varying one factor; the other keeps ``base``'s setting.

    All sets of one factor share a seed, so they hold the same fields and
    noise draws and differ only in the varied factor.
    """
    sets = {}
    for w in widths:
        sets[("width", float(w))] = dsm.generate_dataset(replace(base, n_samples=n_samples, width_mhz=float(w), seed=seed))
    for s in snrs:
        sets[("snr", float(s))] = dsm.generate_dataset(replace(base, n_samples=n_samples, snr=float(s), seed=seed + 1))
    return sets


@dataclass
class RobustnessCell:
    model: str
    factor: str
    value: float
    n_points: int
    mae_mhz: float


def robustness_matrix(
    nets: Mapping[str, TrainedNet],
    test_sets: Mapping[Tuple[str, float], DatasetContainer],
    point_counts: Sequence[int] = DEFAULT_POINT_COUNTS,
) -> List[RobustnessCell]:
    """MAE of every (model, test condition, point count) under the interpolation scheme."""
    cells = []
    for name, net in nets.items():
        for (factor, value), ds in test_sets.items():
            steps = dsm.steps_for_counts(ds.n_points, point_counts)
            for c, s in zip(point_counts, steps):
                err = net.per_sample_mae(interpolated_test(ds, s))
                cells.append(RobustnessCell(name, factor, value, c, float(err.mean())))
    return cells


def robustness_csv(cells: Sequence[RobustnessCell], path) -> Path:
    return write_csv(path, list(RobustnessCell.__dataclass_fields__), [list(asdict(c).values()) for c in cells])


def spread(cells: Sequence[RobustnessCell], model: str, factor: str, n_points: int) -> float:
    """max - min MAE across the test values of one factor."""
    vals = [c.mae_mhz for c in cells if c.model == model and c.factor == factor and c.n_points == n_points]
    if not vals:
        raise KeyError((model, factor, n_points))
    return max(vals) - min(vals)


def in_distribution_advantage(cells: Sequence[RobustnessCell], model: str, counts: Sequence[int]) -> float:
    """Mean over point counts of (mean MAE at widths 6 and 15) - (MAE at width 10)."""
    gaps = []
    for c in counts:
        by_w = {x.value: x.mae_mhz for x in cells if x.model == model and x.factor == "width" and x.n_points == c}
        gaps.append(0.5 * (by_w[6.0] + by_w[15.0]) - by_w[10.0])
    return float(np.mean(gaps))


# --- surrogate domain shift ----------------------------------------------------------


def domain_shift_surrogate(gen_config: GenerationConfig) -> DatasetContainer:
    """Pseudo-real spectra: each resonance's width jittered by up to 20% around
    the nominal width, plus a linear baseline tilt of at most 1% of the contrast.

    This is a synthetic stand-in for measured data and is labelled as such.
    """
    cfg = replace(
        gen_config,
        width_mhz=gen_config.mean_width,
        width_jitter=SURROGATE_WIDTH_JITTER,
        max_tilt_fraction=SURROGATE_TILT,
    )
    ds = dsm.generate_dataset(cfg)
    ds.meta["surrogate"] = True
    return ds


@dataclass
class SurrogateResult:
    synthetic_only: TrainedNet
    mixed: TrainedNet
    mae: Dict[Tuple[str, str], float]

    def rows(self) -> List[list]:
        return [[m, t, v] for (m, t), v in self.mae.items()]


def surrogate_study(
    synthetic: Splits,
    model_spec: ModelSpec = ModelSpec(),
    n_mix: int = 50,
    n_mix_valid: int = 46,
    n_test: int = 200,
    seed: int = 900,
) -> SurrogateResult:
    """Synthetic-only training vs synthetic plus ``n_mix`` surrogate samples.

    Both arms share the architecture, optimizer settings and seed; the mixed
    arm also validates on ``n_mix_valid`` surrogate samples. Both are tested
    on the in-distribution test set and on a separate surrogate test set.
    """
    base = synthetic.train.config or GenerationConfig()
    sur = domain_shift_surrogate(replace(base, n_samples=n_mix + n_mix_valid + n_test, seed=seed))
    sur_train = sur.subset(np.arange(n_mix))
    sur_valid = sur.subset(np.arange(n_mix, n_mix + n_mix_valid))
    sur_test = sur.subset(np.arange(n_mix + n_mix_valid, len(sur)))
    s = cell_seed(seed, synthetic.train.n_points)
    only = train_network(synthetic.train, synthetic.valid, model_spec, s)
    mixed = train_network(
        dsm.concat([synthetic.train, sur_train]), dsm.concat([synthetic.valid, sur_valid]), model_spec, s
    )
    mae = {}
    for name, net in (("synthetic-only", only), ("mixed", mixed)):
        mae[(name, "in-distribution")] = float(net.per_sample_mae(synthetic.test).mean())
        mae[(name, "surrogate")] = float(net.per_sample_mae(sur_test).mean())
    return SurrogateResult(only, mixed, mae)


def surrogate_csv(result: SurrogateResult, path) -> Path:
    return write_csv(path, ["model", "test_set", "mae_mhz"], result.rows())


def default_jobs() -> int:
    env = os.environ.get("NVB_JOBS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def write_meta(report: EvalReport, path) -> Path:
    path = Path(path)
    meta = dict(report.meta)
    meta["trend_flags"] = report.trend_flags()
    path.write_text(json.dumps(meta, indent=1, default=str))
    return path
