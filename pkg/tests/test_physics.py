import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvb.physics import (
    DEFAULT_CONSTANTS,
    FieldVector,
    LineshapeParams,
    default_grid,
    lorentzian_dips,
    nv_orientations,
    project_field,
    resonance_frequencies,
    sample_field,
    synth_spectrum,
)

D = 2870.0
GAMMA = 2.8025

components = st.floats(min_value=-200, max_value=200, allow_nan=False)
fields = st.builds(FieldVector, components, components, components)


def brute_force_resonances(b, d=D, gamma=GAMMA):
    axes = [(1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)]
    out = []
    for ax in axes:
        par = abs(b[0] * ax[0] + b[1] * ax[1] + b[2] * ax[2]) / math.sqrt(3)
        out += [d - gamma * par, d + gamma * par]
    return sorted(out)


def test_orientations():
    axes = nv_orientations()
    assert axes.shape == (4, 3)
    np.testing.assert_allclose(axes[0], [0.57735, 0.57735, 0.57735], atol=1e-5)
    np.testing.assert_allclose(np.linalg.norm(axes, axis=1), 1.0, atol=1e-15)
    gram = axes @ axes.T
    off = gram[~np.eye(4, dtype=bool)]
    np.testing.assert_allclose(off, -1.0 / 3.0, atol=1e-12)


def test_project_field_examples():
    n111 = np.ones(3) / np.sqrt(3)
    assert project_field(FieldVector(0, 0, 100), n111) == pytest.approx(100 / np.sqrt(3), abs=1e-9)
    assert project_field(FieldVector(0, 0, 0), n111) == 0.0
    b = FieldVector(*(30 * n111))
    assert project_field(b, np.array([1, -1, -1]) / np.sqrt(3)) == pytest.approx(10.0, abs=1e-12)


def test_project_field_rejects_non_unit():
    with pytest.raises(ValueError):
        project_field(FieldVector(1, 2, 3), [1.0, 1.0, 0.0])


def test_zero_field_is_degenerate():
    np.testing.assert_array_equal(resonance_frequencies(FieldVector(0, 0, 0)).frequencies_mhz, np.full(8, D))


def test_field_along_axis():
    b = FieldVector(*(30 * np.ones(3) / np.sqrt(3)))
    res = resonance_frequencies(b)
    expected = [2785.925] + [2841.975] * 3 + [2898.025] * 3 + [2954.075]
    np.testing.assert_allclose(res.frequencies_mhz, expected, atol=1e-9)
    np.testing.assert_allclose(sorted(res.per_orientation_projection_gauss), [10, 10, 10, 30], atol=1e-12)


@given(fields)
def test_matches_brute_force(b):
    got = resonance_frequencies(b).frequencies_mhz
    np.testing.assert_allclose(got, brute_force_resonances((b.bx, b.by, b.bz)), atol=1e-9, rtol=0)


@given(fields)
def test_symmetric_about_zero_field_splitting(b):
    shifts = resonance_frequencies(b).frequencies_mhz - D
    np.testing.assert_allclose(np.sort(shifts), np.sort(-shifts), atol=1e-9)


@given(fields)
def test_sign_flip_invariance(b):
    n = nv_orientations()
    for axis in n:
        assert project_field(b, axis) == pytest.approx(project_field(-b, axis), abs=1e-12)
    np.testing.assert_allclose(
        resonance_frequencies(-b).frequencies_mhz, resonance_frequencies(b).frequencies_mhz, atol=1e-12
    )


@given(fields)
def test_lattice_symmetries(b):
    ref = resonance_frequencies(b).frequencies_mhz
    # flipping two axes, or permuting axes, maps the <111> set onto itself up to sign
    for comps in [(-b.bx, -b.by, b.bz), (b.bx, -b.by, -b.bz), (b.by, b.bz, b.bx), (b.by, b.bx, b.bz)]:
        np.testing.assert_allclose(resonance_frequencies(FieldVector(*comps)).frequencies_mhz, ref, atol=1e-9)


@given(fields)
def test_sorted(b):
    assert np.all(np.diff(resonance_frequencies(b).frequencies_mhz) >= 0)


def _isolated(center=2870.0):
    # one resonance in the middle, the rest parked far outside the grid
    freqs = np.array([-1e6] * 4 + [center] + [1e6] * 3)
    from nvb.physics import ResonanceSet

    return ResonanceSet(freqs, np.zeros(4))


def test_peak_depth_noise_free():
    grid = 2800.0 + 5.0 * np.arange(29)
    shape = LineshapeParams(width_mhz=10.0, contrast=0.02, snr=np.inf)
    s = synth_spectrum(_isolated(), grid, shape, 0)
    at = {f: v for f, v in zip(grid, s.values)}
    assert at[2870.0] == pytest.approx(1.0 - 0.02, abs=1e-4)
    assert 1.0 - at[2865.0] == pytest.approx(0.01, abs=1e-4)
    assert 1.0 - at[2875.0] == pytest.approx(0.01, abs=1e-4)


def test_synth_deterministic():
    truth = resonance_frequencies(FieldVector(10, 20, 30))
    grid = default_grid()
    shape = LineshapeParams(snr=4.0)
    a = synth_spectrum(truth, grid, shape, 123)
    b = synth_spectrum(truth, grid, shape, 123)
    assert a.values.tobytes() == b.values.tobytes()
    c = synth_spectrum(truth, grid, shape, 124)
    assert not np.array_equal(a.values, c.values)


def test_synth_rejects_empty_grid():
    truth = resonance_frequencies(FieldVector(0, 0, 0))
    with pytest.raises(ValueError):
        synth_spectrum(truth, np.array([]), LineshapeParams(), 0)


def test_noise_statistics():
    truth = resonance_frequencies(FieldVector(10, 20, 30))
    grid = 2570.0 + np.arange(20000) * 0.03
    shape = LineshapeParams(contrast=0.02, snr=4.0)
    clean = lorentzian_dips(grid, truth.frequencies_mhz, shape.width_mhz, shape.contrast)
    noise_free = synth_spectrum(truth, grid, LineshapeParams(contrast=0.02, snr=np.inf), 0)
    assert np.mean(noise_free.values - clean) == 0.0
    resid = synth_spectrum(truth, grid, shape, 9).values - clean
    assert np.std(resid, ddof=1) == pytest.approx(0.02 / 4.0, rel=0.05)


def test_sample_field_stays_in_window():
    rng = np.random.default_rng(0)
    lo, hi = np.inf, -np.inf
    for _ in range(10_000):
        f = resonance_frequencies(sample_field(rng, (2570, 3170), 30.0)).frequencies_mhz
        lo, hi = min(lo, f[0]), max(hi, f[-1])
    assert lo >= 2600.0 and hi <= 3140.0


def test_sample_field_errors_and_determinism():
    with pytest.raises(ValueError):
        sample_field(np.random.default_rng(0), (2570, 3170), 300.0)
    with pytest.raises(ValueError):
        sample_field(np.random.default_rng(0), (2900, 3170), 10.0)
    a = sample_field(np.random.default_rng(5))
    b = sample_field(np.random.default_rng(5))
    assert a == b


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_sample_field_magnitude_bound(seed):
    b = sample_field(np.random.default_rng(seed))
    b_max = (300.0 - 30.0) / DEFAULT_CONSTANTS.gyromagnetic_ratio_mhz_per_gauss
    assert 0 < b.magnitude <= b_max + 1e-9
