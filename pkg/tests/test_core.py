import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nilmcast.core import (
    DeviceProfile,
    PowerSeries,
    StateChangesMatrix,
    densify,
    load_profiles,
    reconstruct,
    save_profiles,
)
from nilmcast.errors import DimensionError

from conftest import brute_reconstruct, random_discrete_triplets, random_profiles


def test_power_series_validation():
    with pytest.raises(DimensionError):
        PowerSeries(np.zeros((5, 5)))
    with pytest.raises(ValueError):
        PowerSeries(np.zeros((1, 6)))
    with pytest.raises(ValueError):
        PowerSeries(np.full((3, 6), np.nan))
    s = PowerSeries(np.arange(18.0).reshape(3, 6), 100)
    assert s.T == 3
    assert s.sample(1).p.tolist() == [6, 7, 8, 9, 10, 11]
    np.testing.assert_array_equal(s.total_active(), [3, 21, 39])


def test_profile_stable_state_rules():
    dyn = np.zeros((6, 6))
    dyn[:3] = [7, 7, 7, 1, 1, 1]
    dyn[3] = [3, 3, 3, 0, 0, 0]
    prof = DeviceProfile(0, dyn)
    np.testing.assert_array_equal(prof.stable_state, [3, 3, 3, 0, 0, 0])
    with pytest.raises(ValueError):
        DeviceProfile(0, dyn, stable_state=[7, 7, 7, 1, 1, 1])
    zero = DeviceProfile(1, np.zeros((4, 6)))
    np.testing.assert_array_equal(zero.stable_state, np.zeros(6))


def test_profile_json_round_trip(tmp_path, toy_profile):
    other = DeviceProfile(1, np.ones((3, 6)) * 0.1 + 1.0 / 3.0, [1, 2, 3, 4, 5, 6])
    save_profiles([toy_profile, other], tmp_path / "p.json")
    back = load_profiles(tmp_path / "p.json")
    assert [p.id for p in back] == [0, 1]
    np.testing.assert_array_equal(back[1].dynamic, other.dynamic)
    np.testing.assert_array_equal(back[0].stable_state, toy_profile.stable_state)


def test_reconstruct_empty_matrix_gives_epsilon():
    c = np.array([1.0, 2, 3, 4, 5, 6])
    prof = DeviceProfile(0, np.ones((3, 6)))
    out = reconstruct(StateChangesMatrix.empty(10, 1), [prof], c)
    np.testing.assert_array_equal(out.values, np.tile(c, (10, 1)))


def test_single_activation_hand_summed(toy_profile):
    # ON at 0, OFF at d=5: samples 1..5 carry l(1..5); afterwards p - p = 0
    S = StateChangesMatrix.from_triplets(9, 1, [(0, 0, 1), (5, 0, -1)])
    out = reconstruct(S, [toy_profile], np.zeros(6)).values
    expected = np.zeros((9, 6))
    expected[1:6] = toy_profile.dynamic
    np.testing.assert_array_equal(out, expected)


def test_off_after_dynamic_holds_stable_state(toy_profile):
    S = StateChangesMatrix.from_triplets(12, 1, [(0, 0, 1), (8, 0, -1)])
    out = reconstruct(S, [toy_profile], np.zeros(6)).values
    np.testing.assert_array_equal(out[6:9], np.tile(toy_profile.stable_state, (3, 1)))
    np.testing.assert_array_equal(out[9:], 0)


def test_off_during_dynamic_truncates(toy_profile):
    S = StateChangesMatrix.from_triplets(8, 1, [(1, 0, 1), (3, 0, -1)])
    out = reconstruct(S, [toy_profile], np.zeros(6)).values
    expected = np.zeros((8, 6))
    expected[2:4] = toy_profile.dynamic[:2]
    np.testing.assert_array_equal(out, expected)


def test_unpaired_on_runs_to_end(toy_profile):
    S = StateChangesMatrix.from_triplets(10, 1, [(2, 0, 1)])
    out = reconstruct(S, [toy_profile], np.zeros(6)).values
    np.testing.assert_array_equal(out[3:8], toy_profile.dynamic)
    np.testing.assert_array_equal(out[8:], np.tile(toy_profile.stable_state, (2, 1)))


def test_literal_sum_matches_when_off_follows_dynamic(toy_profile):
    # ON term keeps the stable state to T, the OFF term subtracts it after t_off
    T, t_on, t_off = 20, 3, 11
    p = toy_profile.stable_state
    literal = np.zeros((T, 6))
    for t in range(T):
        k = t - t_on
        if 1 <= k <= toy_profile.duration:
            literal[t] += toy_profile.dynamic[k - 1]
        elif k > toy_profile.duration:
            literal[t] += p
        if t > t_off:
            literal[t] -= p
    S = StateChangesMatrix.from_triplets(T, 1, [(t_on, 0, 1), (t_off, 0, -1)])
    np.testing.assert_array_equal(reconstruct(S, [toy_profile], np.zeros(6)).values, literal)


def test_reconstruct_errors(toy_profile):
    S = StateChangesMatrix.empty(5, 2)
    with pytest.raises(DimensionError):
        reconstruct(S, [toy_profile], np.zeros(6))
    with pytest.raises(ValueError):
        reconstruct(StateChangesMatrix.empty(5, 1), [toy_profile], np.zeros(6), T=-1)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_reconstruct_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    T, M = int(rng.integers(2, 25)), int(rng.integers(1, 4))
    profs = random_profiles(rng, M)
    rows = random_discrete_triplets(rng, T, M)
    eps = rng.integers(0, 5, size=6).astype(float)
    S = StateChangesMatrix.from_triplets(T, M, rows)
    np.testing.assert_array_equal(reconstruct(S, profs, eps).values, brute_reconstruct(T, rows, profs, eps))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_superposition_on_disjoint_columns(seed):
    rng = np.random.default_rng(seed)
    T, Ma, Mb = int(rng.integers(2, 30)), int(rng.integers(1, 3)), int(rng.integers(1, 3))
    profs = random_profiles(rng, Ma + Mb)
    rows_a = random_discrete_triplets(rng, T, Ma)
    rows_b = [(t, i + Ma, v) for t, i, v in random_discrete_triplets(rng, T, Mb)]
    eps = rng.integers(0, 50, size=(T, 6)).astype(float)
    M = Ma + Mb
    both = reconstruct(StateChangesMatrix.from_triplets(T, M, rows_a + rows_b), profs, eps).values
    a = reconstruct(StateChangesMatrix.from_triplets(T, M, rows_a), profs, eps).values
    b = reconstruct(StateChangesMatrix.from_triplets(T, M, rows_b), profs, eps).values
    np.testing.assert_array_equal(both, a + b - eps)


def test_two_overlapping_devices_superpose(toy_profile):
    other = DeviceProfile(1, np.full((3, 6), 10.0))
    T = 15
    rows0 = [(1, 0, 1), (9, 0, -1)]
    rows1 = [(3, 1, 1), (12, 1, -1)]
    eps = np.zeros(6)
    both = reconstruct(StateChangesMatrix.from_triplets(T, 2, rows0 + rows1), [toy_profile, other], eps).values
    expect = brute_reconstruct(T, rows0, [toy_profile, other], eps) + brute_reconstruct(T, rows1, [toy_profile, other], eps)
    np.testing.assert_array_equal(both, expect)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_probabilistic_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    T, M = int(rng.integers(2, 20)), int(rng.integers(1, 3))
    profs = random_profiles(rng, M, integer=False)
    dense = np.where(rng.random((T, M)) < 0.2, rng.uniform(-1, 1, (T, M)), 0.0)
    S = StateChangesMatrix.from_dense(dense, probabilistic=True)
    got = reconstruct(S, profs, np.ones(6)).values
    np.testing.assert_allclose(got, brute_reconstruct(T, S.triplets(), profs, np.ones(6), probabilistic=True), rtol=1e-12, atol=1e-9)


def test_probabilistic_small_entries_give_epsilon(toy_profile):
    dense = np.zeros((10, 1))
    dense[[1, 4, 7], 0] = [0.1, -0.1, 0.05]
    S = StateChangesMatrix.from_dense(dense, probabilistic=True)
    eps = np.arange(6.0)
    np.testing.assert_array_equal(reconstruct(S, [toy_profile], eps).values, np.tile(eps, (10, 1)))


def test_probabilistic_entry_scales_linearly(toy_profile):
    dense = np.zeros((8, 1))
    dense[0, 0] = 0.5
    S = StateChangesMatrix.from_dense(dense, probabilistic=True)
    out = reconstruct(S, [toy_profile], np.zeros(6)).values
    np.testing.assert_array_equal(out[1:6], 0.5 * toy_profile.dynamic)


def test_discrete_validation():
    with pytest.raises(ValueError):
        StateChangesMatrix.from_triplets(5, 1, [(0, 0, 1), (2, 0, 1)])
    with pytest.raises(ValueError):
        StateChangesMatrix.from_triplets(5, 1, [(1, 0, -1)])
    with pytest.raises(ValueError):
        StateChangesMatrix.from_triplets(5, 1, [(1, 0, 0.5)])
    with pytest.raises(DimensionError):
        StateChangesMatrix.from_triplets(5, 1, [(5, 0, 1)])
    with pytest.raises(ValueError):
        StateChangesMatrix.from_triplets(5, 2, [(1, 0, 1), (1, 0, 1)])


def test_densify_examples():
    np.testing.assert_array_equal(densify(StateChangesMatrix.empty(3, 2)), np.zeros((3, 2)))
    d = densify(StateChangesMatrix.from_triplets(3, 2, [(1, 0, 1)]))
    expected = np.zeros((3, 2))
    expected[1, 0] = 1
    np.testing.assert_array_equal(d, expected)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), probabilistic=st.booleans())
def test_sparse_dense_round_trip(seed, probabilistic):
    rng = np.random.default_rng(seed)
    T, M = int(rng.integers(1, 40)), int(rng.integers(1, 5))
    if probabilistic:
        dense = np.where(rng.random((T, M)) < 0.3, rng.uniform(-1, 1, (T, M)), 0.0)
    else:
        dense = densify(StateChangesMatrix.from_triplets(T, M, random_discrete_triplets(rng, T, M, 0.3)))
    S = StateChangesMatrix.from_dense(dense, probabilistic)
    back = StateChangesMatrix.from_dense(densify(S), probabilistic)
    assert back.equals(S)
    np.testing.assert_array_equal(densify(S), dense)


def test_state_changes_csv_round_trip(tmp_path):
    S = StateChangesMatrix.from_triplets(10, 3, [(1, 0, 1), (2, 2, 1), (7, 0, -1)])
    S.to_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[:2] == ["t,device,value", "1,0,1"]
    assert StateChangesMatrix.from_csv(tmp_path / "s.csv", 10, 3).equals(S)
    P = StateChangesMatrix.from_dense(np.array([[0.0, 0.25], [-0.5, 0.0]]), probabilistic=True)
    P.to_csv(tmp_path / "p.csv")
    assert StateChangesMatrix.from_csv(tmp_path / "p.csv", 2, 2, probabilistic=True).equals(P)
