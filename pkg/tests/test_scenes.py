import math

import numpy as np
import pytest

from irgnm4pi import grid, scenes
from irgnm4pi.grid import Field
from conftest import make_model


@pytest.mark.parametrize("dims,spacing", [((32, 32), (50.0, 50.0)), ((12, 12, 8), (60.0, 60.0, 60.0))])
def test_filaments_are_thin_unit_peak_curves(dims, spacing):
    f = scenes.filament_object(dims, spacing, n_filaments=3, thickness_nm=40.0, seed=2)
    assert f.shape == dims
    assert 0.0 <= f.min() and f.max() <= 1.0
    assert f.max() > 0.9
    assert np.mean(f == 0) > 0.3
    assert np.array_equal(f, scenes.filament_object(dims, spacing, 3, 40.0, seed=2))
    assert not np.array_equal(f, scenes.filament_object(dims, spacing, 3, 40.0, seed=3))


def test_block_object_fraction():
    b = scenes.block_object((20, 10), (1.0, 1.0), fraction=0.4, value=2.5)
    assert set(np.unique(b)) == {0.0, 2.5}
    assert np.count_nonzero(b) == 8 * 4
    with pytest.raises(ValueError):
        scenes.block_object((4, 4), (1.0, 1.0), fraction=0.0)


def test_sine_arctan_phase_range_and_shape():
    dims, h = (40, 60), (50.0, 50.0)
    phi = scenes.sine_arctan_phase(dims, h)
    assert phi.shape == dims
    assert -1.9 - 1e-9 <= phi.min() and phi.max() <= 2.9 + 1e-9
    # lateral sine is odd about the centre; shift is the mean
    assert np.isclose(phi.mean(), 0.5, atol=1e-12)


def test_phase_lies_outside_low_degree_polynomials():
    _, box, model = make_model((16, 16), (50.0, 50.0), degrees=[3, 3])
    phi = scenes.sine_arctan_phase(box.extended_dims, box.voxel_spacing)
    fit = model.phase_field(model.fit_phase(phi))
    assert np.sqrt(np.mean((fit - phi) ** 2)) > 1e-2


def test_simulate_zero_peak_gives_zero_data():
    _, box, model = make_model((8, 8), (50.0, 50.0))
    f = scenes.block_object(box.object_dims, box.voxel_spacing)
    sim = scenes.simulate(model, f, np.zeros(box.extended_dims), 0.0, seed=1)
    assert np.all(sim.noisy == 0) and np.all(sim.exact == 0)
    assert sim.scale == 0.0 and math.isnan(sim.relative_noise)


def test_simulate_scales_to_peak_and_samples_counts():
    _, box, model = make_model((16, 16), (50.0, 50.0))
    f = scenes.filament_object(box.object_dims, box.voxel_spacing, seed=0)
    phi = scenes.sine_arctan_phase(box.extended_dims, box.voxel_spacing)
    sim = scenes.simulate(model, f, phi, 100.0, seed=4)
    assert np.isclose(sim.exact.max(), 100.0)
    assert np.all(sim.noisy == np.round(sim.noisy)) and sim.noisy.min() >= 0
    assert 0 < sim.relative_noise < 1
    assert np.allclose(sim.object, f * sim.scale)
    assert np.array_equal(sim.noisy, scenes.simulate(model, f, phi, 100.0, seed=4).noisy)
    with pytest.raises(ValueError):
        scenes.simulate(model, f, phi, -1.0, seed=0)


def test_zero_phase_exact_data_is_confocal_convolution():
    _, box, model = make_model((12, 12), (50.0, 50.0))
    f = scenes.filament_object(box.object_dims, box.voxel_spacing, seed=5)
    sim = scenes.simulate(model, f, np.zeros(box.extended_dims), 50.0, seed=0)
    conv = grid.convolve(Field(model.kernels.psf(0.0), box.voxel_spacing),
                         Field(sim.object, box.voxel_spacing)).values.real
    assert np.allclose(sim.exact, conv, atol=1e-12 * np.abs(conv).max())
