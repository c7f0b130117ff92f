import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parot import family as F
from parot import hf, reduction as rd
from parot.reconstruct import IndexMap, map_from_plan, map_from_reduced, row_aggregates


def brute_map(plan):
    out = []
    for i, row in enumerate(plan):
        s = sum(row)
        if s == 0:
            out.append(min(i + 1, plan.shape[1]))
        else:
            out.append(int(np.floor(sum(m * (j + 1) for j, m in enumerate(row)) / s + 1e-9)))
    return np.array(out)


def test_identity_plan():
    w = np.array([0.2, 0.3, 0.5])
    np.testing.assert_array_equal(map_from_plan(np.diag(w)).targets, [1, 2, 3])


def test_single_row():
    assert map_from_plan(np.array([[0.0, 1.0]])).targets.tolist() == [2]


def test_zero_rows_map_to_identity_clamped():
    plan = np.zeros((4, 2))
    plan[0, 1] = 1.0
    np.testing.assert_array_equal(map_from_plan(plan).targets, [2, 2, 2, 2])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_random_plan_matches_formula(seed):
    rng = np.random.default_rng(seed)
    plan = rng.random((5, 7)) * (rng.random((5, 7)) < 0.5)
    T = map_from_plan(plan).targets
    np.testing.assert_array_equal(T, brute_map(plan))
    assert T.min() >= 1 and T.max() <= 7


def test_monotone_map_in_one_d():
    fam = F.gaussian_family(50, 50)
    C = hf.quadratic_cost(fam.support_x, fam.support_y)
    T = map_from_plan(hf.solve_lp(C, fam.mus[0], fam.nus[1]).plan).targets
    assert np.all(np.diff(T) >= 0)


def test_reduced_map_matches_snapshot_plans():
    fam = F.gaussian_family(20, 20)
    C = hf.quadratic_cost(fam.support_x, fam.support_y)
    model = rd.build_offline(fam, F.training_grid(2, 2, 3))
    plans = [hf.solve_lp(C, *F.blend(fam, a)).plan for a in model.snapshot_alphas]
    for r in range(model.R):
        e = np.zeros(model.R)
        e[r] = 1.0
        assert map_from_reduced(model, e) == map_from_plan(plans[r])
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = rng.random(model.R) * (rng.random(model.R) < 0.5)
        if not p.any():
            continue
        dense = sum(pr * P for pr, P in zip(p, plans))
        assert map_from_reduced(model, p) == map_from_plan(dense)


def test_reduced_map_single_snapshot():
    fam = F.MeasureFamily([[0.5, 0.5]], [[0.25, 0.75]], np.array([0.0, 1.0]), np.array([0.0, 1.0]))
    model = rd.build_offline(fam, F.extreme_points(1, 1))
    C = hf.quadratic_cost(fam.support_x, fam.support_y)
    assert map_from_reduced(model, np.ones(1)) == map_from_plan(hf.solve_lp(C, *F.blend(fam, model.snapshot_alphas[0])).plan)


def test_reduced_map_rejects_bad_p(models):
    with pytest.raises(ValueError):
        map_from_reduced(models[4], -np.ones(4))
    with pytest.raises(ValueError):
        map_from_reduced(models[4], np.ones(3))


def test_multi_dimensional_targets():
    plan = np.zeros((1, 8))
    plan[0, 0b011] = 0.5  # coords (1, 2, 2) in 1-based grid
    plan[0, 0b111] = 0.5  # coords (2, 2, 2)
    # per coordinate: floor(1.5)=1, 2, 2 -> flat 0b011 -> 1-based 4
    assert map_from_plan(plan, (2, 2, 2)).targets.tolist() == [4]
    numer, denom = row_aggregates(plan, (2, 2, 2))
    assert numer.shape == (3, 1) and denom.tolist() == [1.0]


def test_csv_round_trip(tmp_path):
    m = IndexMap(np.array([3, 1, 2]))
    m.to_csv(tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text() == "source_index,target_index\n1,3\n2,1\n3,2\n"
    assert IndexMap.from_csv(tmp_path / "m.csv") == m
