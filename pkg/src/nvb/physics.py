"""Zeeman-only NV ground-state model and synthetic ESR spectra.

Resonances are D +/- gamma*|B . n_i| for the four <111> axes n_i. Transverse
mixing, strain and hyperfine structure are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

N_RESONANCES = 8
DEFAULT_WINDOW = (2570.0, 3170.0)
DEFAULT_POINTS = 600
DEFAULT_CONTRAST = 0.02


@dataclass(frozen=True)
class PhysicsConstants:
    zero_field_splitting_mhz: float = 2870.0
    gyromagnetic_ratio_mhz_per_gauss: float = 2.8025

    def __post_init__(self):
        if not self.zero_field_splitting_mhz > 0:
            raise ValueError("zero_field_splitting_mhz must be positive")
        if not self.gyromagnetic_ratio_mhz_per_gauss > 0:
            raise ValueError("gyromagnetic_ratio_mhz_per_gauss must be positive")


DEFAULT_CONSTANTS = PhysicsConstants()


@dataclass(frozen=True)
class FieldVector:
    """Magnetic field in Gauss."""

    bx: float
    by: float
    bz: float

    def __post_init__(self):
        if not np.all(np.isfinite([self.bx, self.by, self.bz])):
            raise ValueError("field components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.bx, self.by, self.bz], dtype=float)

    @property
    def magnitude(self) -> float:
        return float(np.linalg.norm(self.as_array()))

    def __neg__(self) -> "FieldVector":
        return FieldVector(-self.bx, -self.by, -self.bz)


@dataclass(frozen=True)
class ResonanceSet:
    frequencies_mhz: np.ndarray
    per_orientation_projection_gauss: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frequencies_mhz, dtype=float)
        if f.shape != (N_RESONANCES,):
            raise ValueError(f"expected {N_RESONANCES} frequencies, got shape {f.shape}")
        if np.any(np.diff(f) < 0):
            raise ValueError("frequencies must be sorted ascending")
        object.__setattr__(self, "frequencies_mhz", f)
        object.__setattr__(
            self,
            "per_orientation_projection_gauss",
            np.asarray(self.per_orientation_projection_gauss, dtype=float),
        )


@dataclass(frozen=True)
class LineshapeParams:
    """Per-resonance Lorentzian FWHM and dip depth plus the noise level.

    ``snr`` is dip depth over the Gaussian noise standard deviation; ``inf``
    turns the noise off.
    """

    width_mhz: np.ndarray = field(default_factory=lambda: np.full(N_RESONANCES, 10.0))
    contrast: np.ndarray = field(default_factory=lambda: np.full(N_RESONANCES, DEFAULT_CONTRAST))
    snr: float = 10.0
    baseline: float = 1.0

    def __post_init__(self):
        w = np.broadcast_to(np.asarray(self.width_mhz, dtype=float), (N_RESONANCES,)).copy()
        c = np.broadcast_to(np.asarray(self.contrast, dtype=float), (N_RESONANCES,)).copy()
        if np.any(w <= 0):
            raise ValueError("widths must be positive")
        if np.any((c <= 0) | (c >= 1)):
            raise ValueError("contrast must lie in (0, 1)")
        if not self.snr > 0:
            raise ValueError("snr must be positive")
        object.__setattr__(self, "width_mhz", w)
        object.__setattr__(self, "contrast", c)

    @property
    def noise_sigma(self) -> float:
        # A single sigma for the whole trace, referenced to the mean dip depth.
        return float(np.mean(self.contrast) / self.snr)


@dataclass(frozen=True)
class SpectrumSample:
    grid_mhz: np.ndarray
    values: np.ndarray
    truth: ResonanceSet
    shape: Optional[LineshapeParams] = None
    seed: int = 0

    def __post_init__(self):
        grid = np.asarray(self.grid_mhz, dtype=float)
        values = np.asarray(self.values)
        if grid.ndim != 1 or grid.shape != values.shape:
            raise ValueError("grid and values must be 1-D arrays of equal length")
        check_uniform_grid(grid)
        object.__setattr__(self, "grid_mhz", grid)
        object.__setattr__(self, "values", values)

    @property
    def n_points(self) -> int:
        return self.grid_mhz.size


def check_uniform_grid(grid: np.ndarray, rtol: float = 1e-9) -> None:
    if grid.size == 0:
        raise ValueError("empty frequency grid")
    if grid.size == 1:
        return
    steps = np.diff(grid)
    if np.any(steps <= 0):
        raise ValueError("grid must be strictly increasing")
    if np.max(np.abs(steps - steps[0])) > rtol * max(abs(grid[0]), abs(grid[-1])):
        raise ValueError("grid must be uniformly spaced")


def default_grid(window: Sequence[float] = DEFAULT_WINDOW, n_points: int = DEFAULT_POINTS) -> np.ndarray:
    """``n_points`` frequencies starting at ``window[0]`` with spacing span/n_points."""
    f_min, f_max = window
    return f_min + np.arange(n_points) * ((f_max - f_min) / n_points)


_AXES = np.array(
    [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
) / np.sqrt(3.0)


def nv_orientations() -> np.ndarray:
    """The four <111> NV axes as rows of a (4, 3) array."""
    return _AXES.copy()


def project_field(field: FieldVector, orientation) -> float:
    """|B . n| in Gauss."""
    n = np.asarray(orientation, dtype=float)
    if n.shape != (3,) or abs(np.linalg.norm(n) - 1.0) > 1e-9:
        raise ValueError("orientation must be a 3-vector of unit length")
    return float(abs(np.dot(field.as_array(), n)))


def resonance_frequencies(
    field: FieldVector, consts: PhysicsConstants = DEFAULT_CONSTANTS
) -> ResonanceSet:
    proj = np.abs(_AXES @ field.as_array())
    shift = consts.gyromagnetic_ratio_mhz_per_gauss * proj
    d = consts.zero_field_splitting_mhz
    freqs = np.sort(np.concatenate([d - shift, d + shift]))
    return ResonanceSet(freqs, proj)


def lorentzian_dips(grid: np.ndarray, centers, widths, contrasts, baseline: float = 1.0) -> np.ndarray:
    """baseline - sum_j c_j (w_j/2)^2 / ((f - f_j)^2 + (w_j/2)^2)."""
    grid = np.asarray(grid, dtype=float)
    hw2 = (np.asarray(widths, dtype=float) / 2.0) ** 2
    d = grid[:, None] - np.asarray(centers, dtype=float)[None, :]
    return baseline - (np.asarray(contrasts, dtype=float) * hw2 / (d * d + hw2)).sum(axis=1)


def synth_spectrum(
    truth: ResonanceSet,
    grid,
    shape: LineshapeParams,
    rng_seed: int,
    tilt: float = 0.0,
) -> SpectrumSample:
    """Noisy Lorentzian ESR trace for ``truth`` on ``grid``.

    ``tilt`` adds a linear baseline slope, given as the total rise across the
    grid in fluorescence units. It is zero for ordinary synthetic data.
    """
    grid = np.asarray(grid, dtype=float)
    check_uniform_grid(grid)
    values = lorentzian_dips(grid, truth.frequencies_mhz, shape.width_mhz, shape.contrast, shape.baseline)
    if tilt:
        values = values + tilt * (grid - grid[0]) / max(grid[-1] - grid[0], 1e-300) - tilt / 2.0
    if np.isfinite(shape.snr):
        rng = np.random.default_rng(rng_seed)
        values = values + rng.normal(0.0, shape.noise_sigma, size=grid.size)
    return SpectrumSample(grid, values, truth, shape, int(rng_seed))


def max_field_gauss(window, margin_mhz: float, consts: PhysicsConstants = DEFAULT_CONSTANTS) -> float:
    f_min, f_max = window
    d = consts.zero_field_splitting_mhz
    if not f_min < d < f_max:
        raise ValueError("window must contain the zero-field splitting")
    if margin_mhz < 0:
        raise ValueError("margin must be non-negative")
    b_max = (min(f_max - d, d - f_min) - margin_mhz) / consts.gyromagnetic_ratio_mhz_per_gauss
    if b_max <= 0:
        raise ValueError(f"window {tuple(window)} too narrow for margin {margin_mhz} MHz")
    return b_max


def sample_field(
    rng: np.random.Generator,
    window=DEFAULT_WINDOW,
    margin_mhz: float = 30.0,
    consts: PhysicsConstants = DEFAULT_CONSTANTS,
) -> FieldVector:
    """Isotropic direction, magnitude uniform on (0, B_max].

    B_max keeps every resonance at least ``margin_mhz`` inside the window.
    """
    b_max = max_field_gauss(window, margin_mhz, consts)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    magnitude = b_max * (1.0 - rng.random())
    bx, by, bz = magnitude * direction
    return FieldVector(float(bx), float(by), float(bz))
