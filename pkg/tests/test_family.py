import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parot import family as F
from parot.errors import DimensionError, InvalidMeasureError


def test_grid_measure_validation():
    F.GridMeasure([0.25, 0.75])
    with pytest.raises(InvalidMeasureError):
        F.GridMeasure([0.5, 0.6])
    with pytest.raises(InvalidMeasureError):
        F.GridMeasure([-0.1, 1.1])
    m = F.GridMeasure.from_weights([1.0, 3.0])
    np.testing.assert_allclose(m.weights, [0.25, 0.75])
    with pytest.raises(ValueError):
        m.weights[0] = 1.0


def test_alpha_validation_and_distance():
    a = F.Alpha([1.0, 0.0], [0.5, 0.5])
    b = F.Alpha([0.0, 1.0], [0.5, 0.5])
    assert a.distance(b) == 1.0
    assert a == F.Alpha([1.0, 0.0], [0.5, 0.5])
    with pytest.raises(InvalidMeasureError):
        F.Alpha([0.7, 0.7], [1.0])


def test_blend_at_corners_returns_members():
    fam = F.gaussian_family(20, 20)
    for k in range(2):
        for l in range(2):
            mu, nu = F.blend(fam, F.Alpha(np.eye(2)[k], np.eye(2)[l]))
            np.testing.assert_allclose(mu.weights, fam.mus[k].weights, atol=1e-15)
            np.testing.assert_allclose(nu.weights, fam.nus[l].weights, atol=1e-15)


def test_blend_dimension_mismatch():
    fam = F.gaussian_family(10, 10)
    with pytest.raises(DimensionError):
        F.blend(fam, F.Alpha([1.0], [1.0]))


def test_training_grid_sizes():
    assert len(F.training_grid(2, 2, 2)) == 4
    assert len(F.training_grid(2, 2, 20)) == 400
    assert len(F.training_grid(1, 2, 3)) == 3
    # simplex lattice of K=3 with 3 points per edge has 6 points
    assert len(F.training_grid(3, 2, 3)) == 6 * 3


@pytest.mark.parametrize("kx,ky,res", [(2, 2, 2), (2, 2, 5), (3, 2, 4), (1, 3, 3)])
def test_training_grid_contains_extreme_points(kx, ky, res):
    keys = {a.key() for a in F.training_grid(kx, ky, res)}
    assert all(c.key() in keys for c in F.extreme_points(kx, ky))


def test_benchmark_grid():
    x = F.benchmark_grid(4)
    np.testing.assert_allclose(x, [-0.5, 0.0, 0.5, 1.0])


def test_gaussian_family_means():
    fam = F.gaussian_family(200, 200)
    x = fam.support_x[:, 0]
    m0 = fam.mus[0].weights @ x
    m1 = fam.mus[1].weights @ x
    assert m0 < 0 < m1


def test_csv_round_trip(tmp_path):
    fam = F.gaussian_family(12, 9)
    F.save_family_csv(fam, tmp_path / "mu.csv", tmp_path / "nu.csv")
    back = F.load_family_csv(tmp_path / "mu.csv", tmp_path / "nu.csv")
    np.testing.assert_array_equal(back.mu_matrix, fam.mu_matrix)
    np.testing.assert_array_equal(back.nu_matrix, fam.nu_matrix)
    np.testing.assert_array_equal(back.support_y, fam.support_y)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), kx=st.integers(1, 4), ky=st.integers(1, 4))
def test_blend_is_a_probability_vector(seed, kx, ky):
    rng = np.random.default_rng(seed)
    fam = F.MeasureFamily([rng.random(7) for _ in range(kx)], [rng.random(5) for _ in range(ky)],
                          np.arange(7.0), np.arange(5.0))
    a = F.random_alpha(rng, kx, ky)
    mu, nu = F.blend(fam, a)
    assert abs(mu.weights.sum() - 1) <= 1e-12 and mu.weights.min() >= 0
    assert abs(nu.weights.sum() - 1) <= 1e-12 and nu.weights.min() >= 0
