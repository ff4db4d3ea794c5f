"""Synthetic spectrum datasets: generation, resampling, normalization, storage.

On disk a dataset is a little-endian binary container plus a JSON manifest
next to it (same stem, ``.json``)::

    magic "NVDS" | version u32 | n_samples u32 | n_points u32 | window f64 x2
    then per sample: values f32 x n_points | truth f64 x8 | width f64 x8
                     | snr f64 | seed u64
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .physics import (
    DEFAULT_CONSTANTS,
    DEFAULT_CONTRAST,
    DEFAULT_POINTS,
    DEFAULT_WINDOW,
    N_RESONANCES,
    LineshapeParams,
    PhysicsConstants,
    ResonanceSet,
    SpectrumSample,
    default_grid,
    resonance_frequencies,
    sample_field,
    synth_spectrum,
)

MAGIC = b"NVDS"
VERSION = 1
_HEADER = struct.Struct("<4sIII2d")

TRAIN, VALID, TEST = 0, 1, 2
SPLIT_NAMES = {TRAIN: "train", VALID: "valid", TEST: "test"}


class FormatError(ValueError):
    """Malformed dataset or checkpoint file."""


class DegenerateBoundsError(ValueError):
    pass


class InfeasibleFilterError(RuntimeError):
    pass


Spec = Union[float, Tuple[float, float]]


@dataclass
class GenerationConfig:
    n_samples: int = 1000
    n_points: int = DEFAULT_POINTS
    width_mhz: Spec = 10.0  # fixed value or (lo, hi) uniform range
    snr: Spec = (2.5, 10.0)
    window: Tuple[float, float] = DEFAULT_WINDOW
    margin_mhz: float = 30.0
    contrast: float = DEFAULT_CONTRAST
    non_overlap_filter: bool = False
    min_separation_mhz: Optional[float] = None  # None -> 2x mean width
    seed: int = 0
    # surrogate-only knobs; zero for ordinary synthetic data
    width_jitter: float = 0.0
    max_tilt_fraction: float = 0.0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.n_points < 1:
            raise ValueError("n_points must be >= 1")
        for name in ("width_mhz", "snr"):
            value = getattr(self, name)
            if isinstance(value, (list, tuple)):
                lo, hi = map(float, value)
                if lo > hi or lo <= 0:
                    raise ValueError(f"{name} range must satisfy 0 < lo <= hi")
                setattr(self, name, (lo, hi))
            elif not float(value) > 0:
                raise ValueError(f"{name} must be positive")
        self.window = tuple(map(float, self.window))

    @property
    def mean_width(self) -> float:
        w = self.width_mhz
        return float(np.mean(w)) if isinstance(w, tuple) else float(w)

    @property
    def separation_threshold(self) -> float:
        if self.min_separation_mhz is not None:
            if self.min_separation_mhz <= 0:
                raise ValueError("min_separation_mhz must be positive")
            return float(self.min_separation_mhz)
        return 2.0 * self.mean_width

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "GenerationConfig":
        d = dict(d)
        for k in ("width_mhz", "snr", "window"):
            if isinstance(d.get(k), list):
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True)
class NormBounds:
    input_min: float
    input_max: float
    f_min: float
    f_max: float

    def __post_init__(self):
        vals = [self.input_min, self.input_max, self.f_min, self.f_max]
        if not np.all(np.isfinite(vals)):
            raise DegenerateBoundsError("normalization bounds must be finite")
        if not self.input_max > self.input_min:
            raise DegenerateBoundsError("constant input channel: input_max == input_min")
        if not self.f_max > self.f_min:
            raise DegenerateBoundsError("frequency window has zero span")

    def inputs(self, x):
        return (np.asarray(x, dtype=float) - self.input_min) / (self.input_max - self.input_min)

    def targets(self, f):
        return (np.asarray(f, dtype=float) - self.f_min) / (self.f_max - self.f_min)

    def targets_inverse(self, y):
        return np.asarray(y, dtype=float) * (self.f_max - self.f_min) + self.f_min

    def inputs_inverse(self, x):
        return np.asarray(x, dtype=float) * (self.input_max - self.input_min) + self.input_min


@dataclass
class DatasetContainer:
    """Spectra on a shared uniform grid, stored column-wise.

    ``values`` are float32 so that a save/load cycle is exact.
    """

    values: np.ndarray  # (N, n_points) float32
    truth: np.ndarray  # (N, 8) MHz
    width: np.ndarray  # (N, 8) MHz
    snr: np.ndarray  # (N,)
    seeds: np.ndarray  # (N,) uint64
    grid: np.ndarray  # (n_points,) MHz
    window: Tuple[float, float]
    split: np.ndarray = None  # (N,) int8 of TRAIN/VALID/TEST
    norm: Optional[NormBounds] = None
    config: Optional[GenerationConfig] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        n, p = self.values.shape
        self.truth = np.asarray(self.truth, dtype=np.float64).reshape(n, N_RESONANCES)
        self.width = np.asarray(self.width, dtype=np.float64).reshape(n, N_RESONANCES)
        self.snr = np.asarray(self.snr, dtype=np.float64).reshape(n)
        self.seeds = np.asarray(self.seeds, dtype=np.uint64).reshape(n)
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.shape != (p,):
            raise ValueError("grid length must equal number of points")
        self.window = tuple(map(float, self.window))
        if self.split is None:
            self.split = np.zeros(n, dtype=np.int8)
        self.split = np.asarray(self.split, dtype=np.int8).reshape(n)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def n_points(self) -> int:
        return self.values.shape[1]

    def sample(self, i: int) -> SpectrumSample:
        shape = LineshapeParams(self.width[i], self._contrast(), float(self.snr[i]))
        truth = ResonanceSet(self.truth[i], np.full(4, np.nan))
        return SpectrumSample(self.grid, self.values[i].astype(np.float64), truth, shape, int(self.seeds[i]))

    def _contrast(self) -> float:
        return self.config.contrast if self.config is not None else DEFAULT_CONTRAST

    def subset(self, index) -> "DatasetContainer":
        index = np.asarray(index)
        return replace(
            self,
            values=self.values[index],
            truth=self.truth[index],
            width=self.width[index],
            snr=self.snr[index],
            seeds=self.seeds[index],
            split=self.split[index],
            meta=dict(self.meta),
        )

    def part(self, which: int) -> "DatasetContainer":
        return self.subset(np.flatnonzero(self.split == which))

    def with_values(self, values: np.ndarray, grid: np.ndarray, **meta) -> "DatasetContainer":
        return replace(self, values=values, grid=grid, meta={**self.meta, **meta})


def concat(parts: Sequence[DatasetContainer]) -> DatasetContainer:
    first = parts[0]
    for p in parts[1:]:
        if p.n_points != first.n_points or p.window != first.window:
            raise ValueError("datasets must share grid length and window")
    return replace(
        first,
        values=np.concatenate([p.values for p in parts]),
        truth=np.concatenate([p.truth for p in parts]),
        width=np.concatenate([p.width for p in parts]),
        snr=np.concatenate([p.snr for p in parts]),
        seeds=np.concatenate([p.seeds for p in parts]),
        split=np.concatenate([p.split for p in parts]),
        meta=dict(first.meta),
    )


# --- generation -------------------------------------------------------------


def sample_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1, np.uint64)[0])


def _draw(rng: np.random.Generator, spec: Spec) -> float:
    if isinstance(spec, tuple):
        return float(rng.uniform(*spec))
    return float(spec)


def min_gap(freqs: np.ndarray) -> np.ndarray:
    """Smallest gap between sorted centers, along the last axis."""
    return np.min(np.diff(np.sort(freqs, axis=-1), axis=-1), axis=-1)


def _probe_filter(config: GenerationConfig, consts: PhysicsConstants, n_probe: int = 2000) -> None:
    rng = np.random.default_rng([config.seed, 0xF117E2])
    threshold = config.separation_threshold
    accepted = 0
    for _ in range(n_probe):
        f = resonance_frequencies(sample_field(rng, config.window, config.margin_mhz, consts), consts)
        accepted += min_gap(f.frequencies_mhz) > threshold
    if accepted / n_probe < 1e-3:
        raise InfeasibleFilterError(
            f"separation > {threshold} MHz accepted {accepted}/{n_probe} probe fields"
        )


def generate_one(config: GenerationConfig, seed: int, consts: PhysicsConstants = DEFAULT_CONSTANTS):
    """Draw a single sample; returns (values, truth, widths, snr)."""
    rng = np.random.default_rng(seed)
    grid = default_grid(config.window, config.n_points)
    threshold = config.separation_threshold if config.non_overlap_filter else None
    while True:
        truth = resonance_frequencies(sample_field(rng, config.window, config.margin_mhz, consts), consts)
        if threshold is None or min_gap(truth.frequencies_mhz) > threshold:
            break
    base_width = _draw(rng, config.width_mhz)
    widths = np.full(N_RESONANCES, base_width)
    if config.width_jitter:
        widths = base_width * (1.0 + rng.uniform(-config.width_jitter, config.width_jitter, N_RESONANCES))
    snr = _draw(rng, config.snr)
    tilt = 0.0
    if config.max_tilt_fraction:
        tilt = rng.uniform(-1.0, 1.0) * config.max_tilt_fraction * config.contrast
    noise_seed = int(rng.integers(0, 2**63))
    shape = LineshapeParams(widths, config.contrast, snr)
    s = synth_spectrum(truth, grid, shape, noise_seed, tilt=tilt)
    return s.values, truth.frequencies_mhz, widths, snr


def generate_dataset(
    config: GenerationConfig,
    consts: PhysicsConstants = DEFAULT_CONSTANTS,
    split_fractions: Optional[Tuple[float, float, float]] = None,
) -> DatasetContainer:
    """Generate ``config.n_samples`` spectra; deterministic given ``config.seed``.

    Sample ``i`` uses its own seed derived from (seed, i), so any sample can be
    regenerated on its own.
    """
    if config.non_overlap_filter:
        _probe_filter(config, consts)
    n = config.n_samples
    values = np.empty((n, config.n_points), dtype=np.float32)
    truth = np.empty((n, N_RESONANCES))
    width = np.empty((n, N_RESONANCES))
    snr = np.empty(n)
    seeds = np.empty(n, dtype=np.uint64)
    for i in range(n):
        seeds[i] = sample_seed(config.seed, i)
        values[i], truth[i], width[i], snr[i] = generate_one(config, int(seeds[i]), consts)
    ds = DatasetContainer(
        values, truth, width, snr, seeds, default_grid(config.window, config.n_points), config.window,
        config=config,
    )
    if split_fractions is not None:
        ds.split = split_labels(n, split_fractions)
    return ds


def split_labels(n: int, fractions: Tuple[float, float, float]) -> np.ndarray:
    """Contiguous train/valid/test blocks in proportion to ``fractions``."""
    f = np.asarray(fractions, dtype=float)
    counts = np.floor(f / f.sum() * n).astype(int)
    counts[0] += n - counts.sum()
    return np.repeat(np.array([TRAIN, VALID, TEST], dtype=np.int8), counts)


# --- resampling ---------------------------------------------------------------


def subsample(sample: SpectrumSample, step: int) -> SpectrumSample:
    """Keep indices 0, step, 2*step, ..."""
    n = sample.n_points
    if step < 1:
        raise ValueError("step must be >= 1")
    if step > 1 and step > n - 1:
        raise ValueError(f"step {step} too large for {n} points")
    return replace(sample, grid_mhz=sample.grid_mhz[::step], values=sample.values[::step])


def interpolate_linear(sample: SpectrumSample, target_grid, extrapolate: str = "error") -> SpectrumSample:
    """Piecewise-linear resampling onto ``target_grid``.

    Target points outside the source grid raise unless ``extrapolate="hold"``,
    which repeats the edge value.
    """
    target = np.asarray(target_grid, dtype=float)
    return replace(
        sample,
        grid_mhz=target,
        values=_interp(sample.grid_mhz, sample.values, target, extrapolate),
    )


def _interp(src_grid, src_values, target, extrapolate="error"):
    src_grid = np.asarray(src_grid, dtype=float)
    tol = 1e-9 * max(abs(src_grid[0]), abs(src_grid[-1]), 1.0)
    if extrapolate == "error":
        if target[0] < src_grid[0] - tol or target[-1] > src_grid[-1] + tol:
            raise ValueError(
                f"target grid [{target[0]}, {target[-1]}] needs extrapolation "
                f"beyond [{src_grid[0]}, {src_grid[-1]}]"
            )
    elif extrapolate != "hold":
        raise ValueError(f"unknown extrapolate mode {extrapolate!r}")
    src_values = np.asarray(src_values)
    if src_values.ndim == 1:
        return np.interp(target, src_grid, src_values)
    return _interp_rows(src_grid, src_values, target)


def _interp_rows(src_grid, rows, target):
    # vectorised np.interp over a stack of rows sharing one source grid
    idx = np.clip(np.searchsorted(src_grid, target, side="right") - 1, 0, src_grid.size - 2)
    x0, x1 = src_grid[idx], src_grid[idx + 1]
    t = np.clip((target - x0) / (x1 - x0), 0.0, 1.0)
    rows = rows.astype(np.float64)
    return rows[:, idx] * (1.0 - t) + rows[:, idx + 1] * t


def subsample_dataset(ds: DatasetContainer, step: int) -> DatasetContainer:
    if step < 1 or (step > 1 and step > ds.n_points - 1):
        raise ValueError(f"step {step} invalid for {ds.n_points} points")
    return ds.with_values(ds.values[:, ::step], ds.grid[::step], subsample_step=step)


def interpolate_dataset(ds: DatasetContainer, target_grid, extrapolate: str = "hold") -> DatasetContainer:
    target = np.asarray(target_grid, dtype=float)
    values = _interp(ds.grid, ds.values, target, extrapolate).astype(np.float32)
    return ds.with_values(values, target, interpolated=True)


def steps_for_counts(n_full: int, counts: Sequence[int]) -> list:
    """Map point counts to subsampling steps; ceil(n_full/step) must equal count."""
    steps = []
    for c in counts:
        step = int(np.ceil(n_full / c)) if c > 0 else 0
        candidates = [s for s in range(max(1, step - 1), step + 2) if -(-n_full // s) == c]
        if not candidates:
            raise ValueError(f"{c} points is not reachable by subsampling {n_full} points")
        steps.append(candidates[0])
    return steps


# --- normalization ------------------------------------------------------------


def compute_bounds(ds: DatasetContainer, use_split: Optional[int] = TRAIN) -> NormBounds:
    """Input min/max over the chosen split (all samples if ``use_split`` is None)."""
    vals = ds.values if use_split is None else ds.values[ds.split == use_split]
    if vals.size == 0:
        vals = ds.values
    return NormBounds(float(vals.min()), float(vals.max()), *ds.window)


def normalize(ds: DatasetContainer, bounds: Optional[NormBounds] = None):
    """Return (inputs in [0,1] for the bounds' data, targets in [0,1], bounds)."""
    if bounds is None:
        bounds = compute_bounds(ds)
    return bounds.inputs(ds.values), bounds.targets(ds.truth), bounds


def denormalize(values, bounds: NormBounds):
    """Map normalized targets back to MHz."""
    return bounds.targets_inverse(values)


# --- persistence --------------------------------------------------------------


def _record_dtype(n_points: int) -> np.dtype:
    return np.dtype(
        [
            ("values", "<f4", (n_points,)),
            ("truth", "<f8", (N_RESONANCES,)),
            ("width", "<f8", (N_RESONANCES,)),
            ("snr", "<f8"),
            ("seed", "<u8"),
        ]
    )


def file_size(n_samples: int, n_points: int) -> int:
    return _HEADER.size + n_samples * _record_dtype(n_points).itemsize


def manifest_path(path) -> Path:
    return Path(path).with_suffix(".json")


def save(ds: DatasetContainer, path) -> Path:
    path = Path(path)
    rec = np.empty(len(ds), dtype=_record_dtype(ds.n_points))
    rec["values"] = ds.values
    rec["truth"] = ds.truth
    rec["width"] = ds.width
    rec["snr"] = ds.snr
    rec["seed"] = ds.seeds
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(ds), ds.n_points, *ds.window))
        fh.write(rec.tobytes())
    manifest = {
        "config": ds.config.to_json() if ds.config is not None else None,
        "split": ds.split.tolist(),
        "grid_mhz": ds.grid.tolist(),
        "norm": asdict(ds.norm) if ds.norm is not None else None,
        "meta": ds.meta,
    }
    manifest_path(path).write_text(json.dumps(manifest, indent=1))
    return path


def load(path) -> DatasetContainer:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header at offset {len(data)} (need {_HEADER.size} bytes)")
    magic, version, n, p, w0, w1 = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: version {version} at offset 4, expected {VERSION}")
    dtype = _record_dtype(p)
    expected = _HEADER.size + n * dtype.itemsize
    if len(data) != expected:
        raise FormatError(
            f"{path}: truncated payload, {len(data)} bytes but header implies {expected} "
            f"(offset {min(len(data), expected)})"
        )
    rec = np.frombuffer(data, dtype=dtype, count=n, offset=_HEADER.size)

    manifest = {}
    mpath = manifest_path(path)
    if mpath.exists():
        manifest = json.loads(mpath.read_text())
    config = GenerationConfig.from_json(manifest["config"]) if manifest.get("config") else None
    if "grid_mhz" in manifest:
        grid = np.asarray(manifest["grid_mhz"], dtype=np.float64)
    else:
        grid = default_grid((w0, w1), p)
    split = np.asarray(manifest["split"], dtype=np.int8) if "split" in manifest else None
    norm = NormBounds(**manifest["norm"]) if manifest.get("norm") else None
    return DatasetContainer(
        rec["values"].copy(),
        rec["truth"].copy(),
        rec["width"].copy(),
        rec["snr"].copy(),
        rec["seed"].copy(),
        grid,
        (w0, w1),
        split=split,
        norm=norm,
        config=config,
        meta=manifest.get("meta", {}),
    )
