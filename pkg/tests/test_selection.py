import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from growthnas.genome import SkeletonSpec
from growthnas.selection import (
    Individual,
    PotentialEstimate,
    crowding_distance,
    dominates,
    environmental_select,
    nondominated_sort,
)
from growthnas.space import OpSet, random_network

OPS = OpSet.named("conv5")


def make_pop(points, seed=0):
    rng = np.random.default_rng(seed)
    pop, seen = [], set()
    for acc, size in points:
        while True:
            ind = Individual(random_network(SkeletonSpec(2), OPS, rng))
            if ind.id not in seen:
                break
        seen.add(ind.id)
        ind.potential = PotentialEstimate(acc, size)
        pop.append(ind)
    return pop


def brute_force_fronts(pop):
    remaining = list(range(len(pop)))
    fronts = []
    while remaining:
        front = [i for i in remaining if not any(dominates(pop[j], pop[i]) for j in remaining if j != i)]
        fronts.append(sorted(front))
        remaining = [i for i in remaining if i not in front]
    return fronts


def test_dominance_examples():
    a, b, c = PotentialEstimate(0.9, 3e6), PotentialEstimate(0.7, 4e6), PotentialEstimate(0.8, 2e6)
    assert dominates(a, b)
    assert not dominates(a, c) and not dominates(c, a)
    assert not dominates(a, a)


def test_unevaluated_rejected():
    ind = Individual(random_network(SkeletonSpec(1), OPS, np.random.default_rng(0)))
    with pytest.raises(ValueError):
        dominates(ind, ind)


def test_potential_validation():
    with pytest.raises(ValueError):
        PotentialEstimate(1.2, 10)
    with pytest.raises(ValueError):
        PotentialEstimate(0.5, 0)


def test_sort_example():
    pop = make_pop([(0.9, 3e6), (0.8, 2e6), (0.7, 4e6)])
    fronts = nondominated_sort(pop)
    assert [[pop.index(i) for i in f] for f in fronts] == [[0, 1], [2]]
    assert [i.front for i in pop] == [0, 0, 1]


def test_single_individual():
    pop = make_pop([(0.5, 10)])
    assert nondominated_sort(pop) == [pop]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.integers(1, 20)), min_size=1, max_size=64))
def test_sort_matches_brute_force(points):
    # coarse grid forces plenty of ties
    pop = make_pop([(a / 20, float(s)) for a, s in points])
    fronts = nondominated_sort(pop)
    got = [sorted(pop.index(i) for i in f) for f in fronts]
    assert got == brute_force_fronts(pop)


def test_crowding_boundaries_infinite():
    pop = make_pop([(0.1, 1), (0.5, 5), (0.9, 9), (0.6, 6)])
    d = crowding_distance(pop)
    assert d[pop[0].id] == np.inf and d[pop[2].id] == np.inf
    assert np.isfinite(d[pop[1].id]) and np.isfinite(d[pop[3].id])


def _random_points(rng, n):
    return list(zip(rng.uniform(0, 1, n).round(3), rng.uniform(1, 100, n).round(1)))


def test_select_identity_when_small():
    pop = make_pop([(0.5, 1), (0.6, 2)])
    assert environmental_select(pop, 2) == pop
    assert environmental_select(pop, 5) == pop


@pytest.mark.parametrize("protection", [True, False])
def test_select_size_and_front_prefix(protection):
    rng = np.random.default_rng(1)
    for trial in range(100):
        pop = make_pop(_random_points(rng, 20), seed=trial)
        chosen = environmental_select(pop, 10, protection)
        assert len(chosen) == 10 == len({i.id for i in chosen})
        worst = max(i.front for i in chosen)
        assert all(i in chosen for i in pop if i.front < worst)


def test_protection_keeps_extremes():
    rng = np.random.default_rng(2)
    for trial in range(100):
        pop = make_pop(_random_points(rng, 20), seed=trial)
        best = max(pop, key=lambda i: (i.potential.exp_acc, -i.potential.exp_size))
        fronts = nondominated_sort(pop)
        smallest = min(fronts[0], key=lambda i: i.potential.exp_size)
        chosen = environmental_select(pop, 10, protection=True)
        assert best in chosen
        assert smallest in chosen


def test_protection_prefers_accuracy_within_partial_front():
    # one big front: protection should keep the top half by accuracy
    pts = [(i / 20, float(i + 1)) for i in range(20)]
    pop = make_pop(pts)
    chosen = environmental_select(pop, 10, protection=True)
    top = sorted(pop, key=lambda i: -i.potential.exp_acc)[:5]
    assert all(i in chosen for i in top)
