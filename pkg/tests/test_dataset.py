import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvb import dataset as dsm
from nvb.dataset import (
    DegenerateBoundsError,
    FormatError,
    GenerationConfig,
    InfeasibleFilterError,
    NormBounds,
    compute_bounds,
    generate_dataset,
    interpolate_linear,
    load,
    save,
    subsample,
)
from nvb.physics import default_grid


@pytest.fixture(scope="module")
def small():
    return generate_dataset(GenerationConfig(n_samples=100, snr=(2.5, 10.0), seed=7), split_fractions=(0.8, 0.1, 0.1))


def test_generate_shapes(small):
    assert len(small) == 100
    assert small.values.shape == (100, 600)
    assert np.all(np.diff(small.truth, axis=1) >= 0)
    assert np.all((small.snr >= 2.5) & (small.snr <= 10))
    np.testing.assert_array_equal(small.grid, default_grid())
    assert np.bincount(small.split).tolist() == [80, 10, 10]


def test_generate_deterministic(tmp_path):
    cfg = GenerationConfig(n_samples=1, seed=3)
    a = save(generate_dataset(cfg), tmp_path / "a.nvds").read_bytes()
    b = save(generate_dataset(cfg), tmp_path / "b.nvds").read_bytes()
    assert a == b


def test_samples_regenerate_individually(small):
    cfg = small.config
    values, truth, *_ = dsm.generate_one(cfg, int(small.seeds[42]))
    np.testing.assert_array_equal(values.astype(np.float32), small.values[42])
    np.testing.assert_array_equal(truth, small.truth[42])


def test_non_overlap_filter():
    ds = generate_dataset(GenerationConfig(n_samples=200, non_overlap_filter=True, seed=1))
    # exhaustive pairwise scan, independent of the sorted-gap helper
    for row in ds.truth:
        gaps = [abs(a - b) for a, b in itertools.combinations(row, 2)]
        assert min(gaps) > 20.0


def test_infeasible_filter():
    cfg = GenerationConfig(n_samples=5, non_overlap_filter=True, min_separation_mhz=200.0)
    with pytest.raises(InfeasibleFilterError):
        generate_dataset(cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        GenerationConfig(n_samples=0)
    with pytest.raises(ValueError):
        GenerationConfig(width_mhz=(16.0, 5.0))


# --- resampling -------------------------------------------------------------


def test_subsample(small):
    s = small.sample(0)
    half = subsample(s, 2)
    assert half.n_points == 300
    assert half.grid_mhz[1] - half.grid_mhz[0] == pytest.approx(2 * (s.grid_mhz[1] - s.grid_mhz[0]))
    assert subsample(s, 1).values.tobytes() == s.values.tobytes()
    tenth = subsample(s, 10)
    assert tenth.n_points == 60
    np.testing.assert_array_equal(tenth.grid_mhz, s.grid_mhz[[10 * i for i in range(60)]])
    np.testing.assert_array_equal(tenth.truth.frequencies_mhz, s.truth.frequencies_mhz)
    with pytest.raises(ValueError):
        subsample(s, 600)
    with pytest.raises(ValueError):
        subsample(s, 0)


def test_point_count_ladder():
    counts = [600, 300, 200, 150, 120, 100, 86, 75, 67, 60]
    assert dsm.steps_for_counts(600, counts) == list(range(1, 11))
    with pytest.raises(ValueError):
        dsm.steps_for_counts(600, [250])


@given(st.integers(1, 6), st.integers(1, 6))
def test_subsample_composes(a, b):
    s = generate_dataset(GenerationConfig(n_samples=1, n_points=240, seed=2)).sample(0)
    lhs = subsample(s, a * b)
    rhs = subsample(subsample(s, a), b)
    np.testing.assert_array_equal(lhs.values, rhs.values)
    np.testing.assert_array_equal(lhs.grid_mhz, rhs.grid_mhz)


def test_interpolation_hits_knots(small):
    s = small.sample(3)
    back = interpolate_linear(subsample(s, 2), s.grid_mhz, extrapolate="hold")
    np.testing.assert_array_equal(back.values[::2], s.values[::2])
    assert interpolate_linear(subsample(s, 1), s.grid_mhz).values.tobytes() == s.values.tobytes()


def test_interpolation_linear_and_constant(small):
    s = small.sample(0)
    ramp = s.__class__(s.grid_mhz, 0.5 + 1e-3 * (s.grid_mhz - 2570), s.truth)
    sub = subsample(ramp, 3)
    target = s.grid_mhz[: 3 * (sub.n_points - 1) + 1]
    np.testing.assert_allclose(interpolate_linear(sub, target).values, ramp.values[: target.size], atol=1e-12)
    const = s.__class__(s.grid_mhz, np.full(600, 0.97), s.truth)
    out = interpolate_linear(subsample(const, 7), s.grid_mhz, extrapolate="hold").values
    np.testing.assert_array_equal(out, 0.97)


def test_interpolation_refuses_extrapolation(small):
    s = small.sample(0)
    with pytest.raises(ValueError):
        interpolate_linear(subsample(s, 2), s.grid_mhz)


def test_dataset_interpolation_matches_per_sample(small):
    sub = dsm.subsample_dataset(small, 4)
    full = dsm.interpolate_dataset(sub, small.grid)
    ref = interpolate_linear(sub.sample(5), small.grid, extrapolate="hold").values
    np.testing.assert_allclose(full.values[5], ref.astype(np.float32), rtol=0, atol=1e-7)


# --- normalization ------------------------------------------------------------


def test_normalize_targets(small):
    b = compute_bounds(small)
    assert b.targets(2570.0) == 0.0 and b.targets(3170.0) == 1.0
    assert b.targets(2870.0) == 0.5
    x, y, _ = dsm.normalize(small, b)
    train = small.split == dsm.TRAIN
    assert x[train].min() == 0.0 and x[train].max() == 1.0
    np.testing.assert_allclose(dsm.denormalize(y, b), small.truth, rtol=1e-12, atol=0)
    np.testing.assert_allclose(b.inputs_inverse(x), small.values, rtol=1e-12)


def test_bounds_from_training_split_only(small):
    b = compute_bounds(small)
    train_vals = small.values[small.split == dsm.TRAIN]
    assert b.input_min == float(train_vals.min())
    assert b.input_max == float(train_vals.max())


def test_degenerate_bounds():
    with pytest.raises(DegenerateBoundsError):
        NormBounds(1.0, 1.0, 2570.0, 3170.0)


# --- persistence --------------------------------------------------------------


def test_round_trip(tmp_path, small):
    path = save(small, tmp_path / "d.nvds")
    assert path.stat().st_size == dsm.file_size(100, 600)
    back = load(path)
    for name in ("values", "truth", "width", "snr", "seeds", "grid", "split"):
        assert getattr(back, name).tobytes() == getattr(small, name).tobytes(), name
    assert back.config == small.config
    assert back.window == small.window


def test_round_trip_subsampled(tmp_path, small):
    sub = dsm.subsample_dataset(small, 7)
    back = load(save(sub, tmp_path / "s.nvds"))
    assert back.grid.tobytes() == sub.grid.tobytes()
    assert back.meta["subsample_step"] == 7


def test_bad_magic(tmp_path, small):
    path = save(small.subset([0]), tmp_path / "d.nvds")
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="NVDS"):
        load(path)


def test_empty_and_truncated(tmp_path, small):
    empty = tmp_path / "e.nvds"
    empty.write_bytes(b"")
    with pytest.raises(FormatError, match="truncated header"):
        load(empty)
    path = save(small.subset([0, 1]), tmp_path / "t.nvds")
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(FormatError, match="truncated payload"):
        load(path)


def test_version_mismatch(tmp_path, small):
    path = save(small.subset([0]), tmp_path / "v.nvds")
    raw = bytearray(path.read_bytes())
    raw[4:8] = (2).to_bytes(4, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        load(path)


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 20), st.integers(16, 64))
def test_file_size_law(n, p):
    import tempfile
    from pathlib import Path

    ds = generate_dataset(GenerationConfig(n_samples=n, n_points=p, seed=n))
    with tempfile.TemporaryDirectory() as d:
        path = save(ds, Path(d) / "x.nvds")
        assert path.stat().st_size == 32 + n * (4 * p + 8 * 8 + 8 * 8 + 8 + 8)
