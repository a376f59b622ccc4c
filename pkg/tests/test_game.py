import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ambusim import game
from ambusim.des import SimulationResult
from ambusim.game import (EquilibriumCell, EquilibriumMap, PayoffTensor,
                          all_profiles, build_payoff_tensor, detect_overcrowded,
                          equilibrium_map, find_pure_nash, flip, hash_seed,
                          optimal_profile)
from ambusim.scenario import (ArrivalProfile, HospitalSpec, Scenario,
                              ServiceModel, TravelModel)


def _tensor_from_array(util):
    """Build a PayoffTensor from an array indexed by (a_1..a_k, player)."""
    k = util.ndim - 1
    t = PayoffTensor(k=k, replications=1)
    for profile in all_profiles(k):
        idx = tuple(0 if a == "A" else 1 for a in profile)
        t.utilities[profile] = util[idx].astype(float)
    return t


def _oracle_nash(util):
    """Independent exhaustive-deviation check on the raw payoff array."""
    k = util.ndim - 1
    out = []
    for idx in itertools.product((0, 1), repeat=k):
        ok = True
        for player in range(k):
            dev = list(idx)
            dev[player] = 1 - dev[player]
            if util[tuple(dev)][player] > util[idx][player]:
                ok = False
                break
        if ok:
            out.append("".join("A" if a == 0 else "R" for a in idx))
    return sorted(out)


def test_all_profiles_lexicographic():
    assert all_profiles(1) == ["A", "R"]
    assert all_profiles(2) == ["AA", "AR", "RA", "RR"]
    assert len(all_profiles(4)) == 16


def test_flip():
    assert flip("AAR", 0) == "RAR"
    assert flip("AAR", 2) == "AAA"


def test_nash_on_known_games():
    # prisoner's dilemma payoffs: R (defect) dominates, RR unique NE
    util = np.array([[[3, 3], [0, 5]],
                     [[5, 0], [1, 1]]], dtype=float)
    assert find_pure_nash(_tensor_from_array(util)) == ["RR"]
    # pure coordination: both symmetric profiles are equilibria
    util = np.array([[[2, 2], [0, 0]],
                     [[0, 0], [2, 2]]], dtype=float)
    assert find_pure_nash(_tensor_from_array(util)) == ["AA", "RR"]
    # constant payoffs: every profile is a weak NE
    util = np.zeros((2, 2, 2, 3))
    assert find_pure_nash(_tensor_from_array(util)) == all_profiles(3)


def test_nash_matches_oracle_on_random_tensors():
    rng = np.random.default_rng(0)
    for _ in range(200):
        util = rng.normal(size=(2, 2, 2, 3))
        assert sorted(find_pure_nash(_tensor_from_array(util))) == _oracle_nash(util)


@settings(max_examples=150, deadline=None)
@given(st.integers(min_value=0, max_value=10 ** 9), st.integers(min_value=2, max_value=4))
def test_nash_matches_oracle_property(seed, k):
    util = np.random.default_rng(seed).integers(-5, 6, size=(2,) * k + (k,)).astype(float)
    assert sorted(find_pure_nash(_tensor_from_array(util))) == _oracle_nash(util)


def test_nash_invariant_under_positive_affine_transform():
    rng = np.random.default_rng(1)
    util = rng.normal(size=(2, 2, 3))
    base = find_pure_nash(_tensor_from_array(util))
    scaled = util * 7.5 + 123.0
    assert find_pure_nash(_tensor_from_array(scaled)) == base


def test_nash_invariant_under_player_relabeling():
    rng = np.random.default_rng(2)
    util = rng.normal(size=(2, 2, 2, 3))
    base = find_pure_nash(_tensor_from_array(util))
    # swap players 0 and 2 consistently in both the profile axes and payoffs
    perm = (2, 1, 0)
    swapped = util.transpose(2, 1, 0, 3)[..., list(perm)]
    relabeled = find_pure_nash(_tensor_from_array(swapped))
    expected = sorted("".join(p[j] for j in perm) for p in base)
    assert sorted(relabeled) == expected


def test_invalid_tensor_reports_inconsistent():
    t = _tensor_from_array(np.zeros((2, 2, 2)))
    t.invalid.add("AA")
    assert not t.consistent
    assert find_pure_nash(t) is None


def test_hash_seed_stable_and_distinct():
    assert hash_seed(1, 2, 3) == hash_seed(1, 2, 3)
    seen = {hash_seed(5, i) for i in range(100)}
    assert len(seen) == 100
    assert hash_seed(5, 1) != hash_seed(6, 1)


def _fake_result(quarters):
    return SimulationResult(hospitals=[], total_arrivals=0, redirects=0,
                            forced_assignments=0, served=0, in_system_at_end=0,
                            in_transit_at_end=0, queue_quarters=quarters,
                            t_global=None, t_global_weighted=None)


def test_detect_overcrowded():
    growing = [_fake_result([1.0 + 5 * q + 0.2 * r for q in range(4)]) for r in range(3)]
    flat = [_fake_result([2.0, 2.1, 1.9, 2.05]) for _ in range(3)]
    empty = [_fake_result([0.0, 0.0, 0.0, 0.0]) for _ in range(3)]
    assert detect_overcrowded(growing)
    assert not detect_overcrowded(flat)
    assert not detect_overcrowded(empty)


def _tiny_scenario(rate=1.0, horizon=150.0):
    svc = ServiceModel(kind="exponential", rate=1.0)
    return Scenario(
        hospitals=(HospitalSpec(id=0, location=2.0, servers=2, queue_buffer=0, service=svc),
                   HospitalSpec(id=1, location=8.0, servers=1, queue_buffer=0, service=svc)),
        arrivals=ArrivalProfile(base_rate=rate),
        travel=TravelModel(kind="line", velocity_kmh=40.0, length=10.0),
        horizon=horizon)


def test_build_payoff_tensor_uses_common_random_numbers():
    sc = _tiny_scenario()
    t1 = build_payoff_tensor(sc, replications=2, seed=4)
    t2 = build_payoff_tensor(sc, replications=2, seed=4)
    assert set(t1.utilities) == set(all_profiles(2))
    for p in all_profiles(2):
        assert np.array_equal(t1.utilities[p], t2.utilities[p])


def test_payoff_tensor_independent_of_jobs():
    sc = _tiny_scenario()
    serial = build_payoff_tensor(sc, replications=2, seed=4, jobs=1)
    parallel = build_payoff_tensor(sc, replications=2, seed=4, jobs=2)
    for p in all_profiles(2):
        assert np.array_equal(serial.utilities[p], parallel.utilities[p])


def test_equilibrium_map_cells_and_dominant():
    sc = _tiny_scenario(horizon=120.0)
    eq = equilibrium_map(sc, [0.3, 5.0], [1.0], replications=1, batches=3, seed=0)
    assert set(eq.cells) == {(0.3, 1.0), (5.0, 1.0)}
    low = eq.cells[(0.3, 1.0)]
    assert not low.inconsistent
    assert all(0 <= v <= 1 for v in low.occurrence.values())
    assert eq.dominant(0.3, 1.0) is not None
    with pytest.raises(ValueError):
        equilibrium_map(sc, [], [1.0])


def test_dominant_tie_breaks_lexicographically():
    cell = EquilibriumCell(1.0, 1.0, {"RR": 0.5, "AA": 0.5, "AR": 0.2}, False)
    eq = EquilibriumMap(lambdas=[1.0], mus=[1.0], cells={(1.0, 1.0): cell})
    assert eq.dominant(1.0, 1.0) == "AA"
    incon = EquilibriumCell(1.0, 1.0, {}, True)
    eq2 = EquilibriumMap(lambdas=[1.0], mus=[1.0], cells={(1.0, 1.0): incon})
    assert eq2.dominant(1.0, 1.0) is None


def test_optimal_profile_low_load_prefers_accept():
    sc = _tiny_scenario(rate=0.4, horizon=1200.0)
    assert optimal_profile(sc, replications=6, seed=2) == "AA"


def test_write_map_format(tmp_path):
    sc = _tiny_scenario(horizon=100.0)
    eq = equilibrium_map(sc, [0.3], [1.0], replications=1, batches=2, seed=0)
    path = tmp_path / "map.csv"
    game.write_map(eq, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "lambda,mu,profile,occurrence,inconsistent"
    assert len(lines) >= 2
