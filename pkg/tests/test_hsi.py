import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from supertoken.errors import InvalidInputError
from supertoken.hsi import (FeatureMap, HsiCube, LabelMap, PcaFeatureProvider, pca_feature_provider,
                            pixel_coords, sample_at, spectral_derivative)
from supertoken.synthetic import region_cube


def test_constant_cube_has_zero_derivative():
    d = spectral_derivative(HsiCube(np.full((3, 2, 4), 5.0)))
    assert d.values.shape == (3, 2, 3)
    np.testing.assert_array_equal(d.values, 0.0)


def test_derivative_of_powers_of_two():
    d = spectral_derivative(HsiCube(np.array([[[1.0, 2.0, 4.0, 8.0]]])))
    np.testing.assert_array_equal(d.values[0, 0], [1.0, 2.0, 4.0])


def test_derivative_matches_loop(rng):
    v = rng.normal(size=(4, 4, 8))
    np.testing.assert_array_equal(spectral_derivative(HsiCube(v)).values, oracles.derivative(v))


def test_cube_validation():
    with pytest.raises(InvalidInputError):
        HsiCube(np.zeros((2, 2, 1)))
    with pytest.raises(InvalidInputError):
        HsiCube(np.zeros((2, 2)))
    with pytest.raises(InvalidInputError):
        HsiCube(np.array([[[0.0, np.nan]]]))
    with pytest.raises(InvalidInputError):
        LabelMap(np.array([[0, 3]]), 2)


def test_cube_is_read_only():
    cube = HsiCube(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        cube.values[0, 0, 0] = 1.0


def test_identical_spectra_give_constant_features():
    cube = HsiCube(np.tile([0.2, 0.5, 0.1, 0.9], (5, 4, 1)))
    f = pca_feature_provider(cube, 2)
    assert f.channels == 2
    np.testing.assert_allclose(f.flat().var(axis=0), 0.0, atol=1e-24)


def test_two_cluster_cube_maps_to_two_values():
    lab = np.where(np.arange(6)[None, :] < 3, 1, 2).repeat(4, axis=0)
    spectra = np.array([[0.1, 0.4, 0.2], [0.7, 0.3, 0.9]])
    f = pca_feature_provider(region_cube(lab, spectra), 1, smoothing_radius=0).values[..., 0]
    # hand computation: the single principal axis is the unit difference vector,
    # and each half sits at +-|diff|/2 from the mean
    diff = spectra[1] - spectra[0]
    half = np.linalg.norm(diff) / 2
    sign = np.sign(diff[np.argmax(np.abs(diff))])
    np.testing.assert_allclose(f[lab == 1], -sign * half, atol=1e-12)
    np.testing.assert_allclose(f[lab == 2], sign * half, atol=1e-12)


def test_full_rank_projection_preserves_distances(rng):
    cube = HsiCube(rng.normal(size=(5, 6, 4)))
    f = pca_feature_provider(cube, 4, smoothing_radius=0).flat()
    x = cube.flat()
    dx = np.linalg.norm(x[:, None] - x[None], axis=-1)
    df = np.linalg.norm(f[:, None] - f[None], axis=-1)
    np.testing.assert_allclose(df, dx, atol=1e-6)


def test_feature_provider_rejects_too_many_channels():
    with pytest.raises(InvalidInputError):
        PcaFeatureProvider(5)(HsiCube(np.zeros((2, 2, 4))))


def test_feature_provider_is_deterministic(rng):
    cube = HsiCube(rng.normal(size=(6, 6, 5)))
    a = pca_feature_provider(cube, 3)
    b = pca_feature_provider(cube, 3)
    np.testing.assert_array_equal(a.values, b.values)


def test_sample_first_pixel(rng):
    cube = HsiCube(rng.normal(size=(3, 4, 5)))
    np.testing.assert_array_equal(sample_at([(0, 0)], cube)[0], cube.values[0, 0])


def test_sample_all_pixels_is_reshape(rng):
    cube = HsiCube(rng.normal(size=(3, 4, 5)))
    np.testing.assert_array_equal(sample_at(pixel_coords(3, 4), cube), cube.values.reshape(12, 5))


def test_sample_random_coords(rng):
    cube = HsiCube(rng.normal(size=(5, 7, 3)))
    coords = np.array([[4, 6], [0, 3], [2, 2]])
    out = sample_at(coords, cube)
    for i, (r, c) in enumerate(coords):
        for b in range(3):
            assert out[i, b] == cube.values[r, c, b]


@pytest.mark.parametrize("coords", [[(3, 0)], [(0, -1)], [(0, 4)]])
def test_sample_out_of_bounds(coords):
    with pytest.raises(InvalidInputError):
        sample_at(coords, FeatureMap(np.zeros((3, 4, 1))))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(2, 6)),
              elements=st.floats(-1e3, 1e3)))
def test_derivative_telescopes(values):
    # summing the derivative recovers last band minus first band
    d = spectral_derivative(HsiCube(values)).values
    np.testing.assert_allclose(d.sum(axis=2), values[..., -1] - values[..., 0], atol=1e-9)
