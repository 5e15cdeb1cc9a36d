import numpy as np
import pytest

from growthnas.genome import HIDDEN, SkeletonSpec, canonical_hash
from growthnas.selection import Individual
from growthnas.space import OpSet, random_network
from growthnas.variation import (
    VariationParams,
    crossover,
    generate_offspring,
    mutate_connection,
    mutate_operation,
)

SK = SkeletonSpec(3)


def _pair(rng, opset, b=2):
    return random_network(SK, opset, rng, b=b), random_network(SK, opset, rng, b=b)


def test_crossover_identical_parents(conv5, rng):
    p, _ = _pair(rng, conv5)
    assert crossover(p, p, 2, 0.5, rng) == (p, p)


def test_crossover_rate_zero(conv5, rng):
    p1, p2 = _pair(rng, conv5)
    assert crossover(p1, p2, 2, 0.0, rng) == (p1, p2)


def test_crossover_rate_one_swaps_latest_block(conv5, rng):
    for _ in range(1000):
        p1, p2 = _pair(rng, conv5)
        c1, c2 = crossover(p1, p2, 2, 1.0, rng)
        assert c1.blocks[1] == p2.blocks[1] and c2.blocks[1] == p1.blocks[1]
        assert canonical_hash(c1.prefix(1)) == canonical_hash(p1.prefix(1))
        assert canonical_hash(c2.prefix(1)) == canonical_hash(p2.prefix(1))


def test_crossover_rows_come_from_a_parent(conv5, rng):
    for _ in range(200):
        p1, p2 = _pair(rng, conv5)
        c1, c2 = crossover(p1, p2, 2, 0.5, rng)
        for node in HIDDEN:
            r1, r2 = c1.blocks[1].matrix[node], c2.blocks[1].matrix[node]
            a, b = p1.blocks[1].matrix[node], p2.blocks[1].matrix[node]
            assert ((r1 == a).all() and (r2 == b).all()) or ((r1 == b).all() and (r2 == a).all())


def test_crossover_unequal_lengths(conv5, rng):
    a = random_network(SK, conv5, rng, b=1)
    b = random_network(SK, conv5, rng, b=2)
    with pytest.raises(ValueError):
        crossover(a, b, 2, 0.5, rng)


def test_mutate_connection_diff(conv5, rng):
    for _ in range(1000):
        n = random_network(SK, conv5, rng, b=2)
        m = mutate_connection(n, 2, rng)
        assert m.prefix(1) == n.prefix(1)
        diff = np.argwhere(m.blocks[1].matrix != n.blocks[1].matrix)
        assert len(diff) == 2
        assert diff[0][0] == diff[1][0]  # same node
        row_old = n.blocks[1].matrix[diff[0][0]]
        row_new = m.blocks[1].matrix[diff[0][0]]
        assert sorted(row_old[row_old > 0]) == sorted(row_new[row_new > 0])  # op carried over
        assert np.count_nonzero(row_new) == 2


def test_mutate_operation_diff(conv5, rng):
    for _ in range(1000):
        n = random_network(SK, conv5, rng, b=2)
        m = mutate_operation(n, 2, conv5.K, rng)
        a, b = n.blocks[1].matrix, m.blocks[1].matrix
        diff = np.argwhere(a != b)
        assert len(diff) == 1
        i, j = diff[0]
        assert a[i, j] and b[i, j] and a[i, j] != b[i, j]
        assert ((a > 0) == (b > 0)).all()
        assert m.prefix(1) == n.prefix(1)


def test_mutate_operation_k1_identity(rng):
    k1 = OpSet.named("conv5", 1)
    n = random_network(SK, k1, rng, b=2)
    assert mutate_operation(n, 2, 1, rng) is n


def test_mutation_wrong_stage(conv5, rng):
    n = random_network(SK, conv5, rng, b=2)
    with pytest.raises(ValueError):
        mutate_connection(n, 3, rng)


def _pop(rng, opset, n=10, b=2):
    return [Individual(random_network(SK, opset, rng, b=b)) for _ in range(n)]


def test_offspring_no_variation_are_copies(conv5, rng):
    pop = _pop(rng, conv5)
    kids = generate_offspring(pop, 2, conv5.K, VariationParams(0.0, 0.0, 3), rng)
    ids = {i.id for i in pop}
    assert len(kids) == len(pop)
    assert all(k.id in ids for k in kids)


def test_offspring_valid_and_growing_only(conv5, rng):
    pop = _pop(rng, conv5)
    prefixes = {i.genome.prefix(1) for i in pop}
    kids = generate_offspring(pop, 2, conv5.K, VariationParams(), rng)
    for k in kids:
        assert len(k.genome) == 2
        k.genome.validate(conv5.K)
        assert k.genome.prefix(1) in prefixes


def test_offspring_scope_all_touches_earlier_blocks(conv5, rng):
    pop = _pop(rng, conv5, b=3)
    prefixes = {i.genome.prefix(2) for i in pop}
    changed = 0
    for _ in range(10):
        kids = generate_offspring(pop, 3, conv5.K, VariationParams(), rng, scope="all")
        changed += sum(k.genome.prefix(2) not in prefixes for k in kids)
    assert changed > 0


def test_duplicate_rate_baseline(conv5):
    dup, total = 0, 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        pop = _pop(rng, conv5)
        kids = generate_offspring(pop, 2, conv5.K, VariationParams(0.9, 0.2, 3), rng)
        seen = {i.id for i in pop}
        for k in kids:
            dup += k.id in seen
            seen.add(k.id)
            total += 1
    assert dup / total < 0.05
