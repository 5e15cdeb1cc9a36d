import itertools
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from growthnas.evaluators import enumerate_blocks
from growthnas.genome import HIDDEN, BlockGenome, NetworkGenome, SkeletonSpec, validate_matrix
from growthnas.space import (
    OpSet,
    SpaceStats,
    Widths,
    complete_network,
    count_block_genomes,
    param_count,
    random_block,
    random_network,
    reduction_ratio,
    space_stats,
)


def _brute_force_blocks(K):
    """Every 7x7 matrix satisfying the invariants, found by scanning hidden rows independently."""
    rows = {}
    for node in HIDDEN:
        valid = []
        for row in itertools.product(range(K + 1), repeat=node):
            if sum(1 for c in row if c) == 2:
                valid.append(row)
        rows[node] = valid
    return np.prod([len(v) for v in rows.values()])


def test_count_k1_matches_enumeration():
    assert count_block_genomes(1) == 180
    assert _brute_force_blocks(1) == 180
    blocks = enumerate_blocks(OpSet.named("conv5", 1))
    assert len(blocks) == 180 == len(set(blocks))
    for b in blocks:
        validate_matrix(b.matrix, 1)


def test_count_k4_formula_and_enumeration():
    assert count_block_genomes(OpSet.named("conv5", 4)) == 11_796_480 == 180 * 4**8
    assert _brute_force_blocks(4) == 11_796_480


def test_count_k2_enumeration_is_exhaustive_and_distinct():
    blocks = enumerate_blocks(OpSet.named("conv5", 2))
    assert len(set(blocks)) == count_block_genomes(2) == 180 * 256


def test_count_rejects_empty_op_set():
    with pytest.raises(ValueError):
        count_block_genomes(0)


def test_sampled_injection_estimate_k4():
    # capture-recapture style check: the collision rate of uniform samples
    # matches what a space of 180 * 4**8 blocks predicts
    rng = np.random.default_rng(3)
    opset = OpSet.named("conv5", 4)
    n = 20_000
    seen = Counter(random_block(opset, rng) for _ in range(n))
    pairs = sum(c * (c - 1) // 2 for c in seen.values())
    expected = n * (n - 1) / 2 / count_block_genomes(opset)
    assert abs(pairs - expected) < 6 * np.sqrt(expected) + 3


def test_random_block_k1_all_ops_one_and_uniform():
    opset = OpSet.named("conv5", 1)
    rng = np.random.default_rng(0)
    n = 100_000
    counts = Counter(random_block(opset, rng).codes for _ in range(n))
    assert all(max(c) == 1 for c in counts)
    assert len(counts) == 180
    chi2, p = stats.chisquare(list(counts.values()))
    assert p > 0.01


def test_random_block_deterministic(conv5):
    a = random_block(conv5, np.random.default_rng(9))
    b = random_block(conv5, np.random.default_rng(9))
    assert a == b


def test_complete_network_preserves_prefix(conv5, rng):
    sk = SkeletonSpec(3)
    full = random_network(sk, conv5, rng)
    assert complete_network(full, conv5, rng) == full
    for _ in range(1000):
        b = int(rng.integers(0, 3))
        partial = random_network(sk, conv5, rng, b=b)
        done = complete_network(partial, conv5, rng)
        assert done.complete
        assert done.blocks[:b] == partial.blocks


def test_complete_network_respects_allowed(conv5, rng):
    sk = SkeletonSpec(3)
    only = random_block(conv5, rng)
    allowed = [None, (only,), None]
    for _ in range(50):
        n = complete_network(NetworkGenome((), sk), conv5, rng, allowed)
        assert n.blocks[1] == only
    with pytest.raises(ValueError):
        complete_network(NetworkGenome((), sk), conv5, rng, [None, (), None])


def test_reduction_ratio_examples():
    s = SpaceStats((180, 180, 180))
    assert reduction_ratio(s, 10, 1).ratio == Fraction(1, 18)
    s8 = SpaceStats((100,) * 8)
    r = reduction_ratio(s8, 10, 2)
    assert r.ratio == Fraction(1, 100) and not r.clamped


def test_reduction_ratio_no_reduction_and_clamp():
    s = SpaceStats((10, 10, 10))
    assert reduction_ratio(s, 10, 2).ratio == 1
    r = reduction_ratio(s, 25, 1)
    assert r.ratio == 1 and r.clamped


def test_reduction_ratio_per_block_counts():
    s = SpaceStats((180, 180, 180))
    assert reduction_ratio(s, [10, 4], 2).ratio == Fraction(40, 180 * 180)
    with pytest.raises(ValueError):
        reduction_ratio(s, [10], 2)
    with pytest.raises(ValueError):
        reduction_ratio(s, 10, 0)


def test_space_stats_pruned_total(conv5):
    st = space_stats(conv5, SkeletonSpec(3), [7, None, None])
    c = count_block_genomes(conv5)
    assert st.total == c**3
    assert st.pruned_total == 7 * c * c
    assert st.reduction_ratio == Fraction(7, c)


def _zero_identity_network(sk, op):
    m = np.zeros((7, 7), dtype=np.int64)
    m[2:6, 0] = op
    m[2:6, 1] = op
    return NetworkGenome((BlockGenome.from_matrix(m),) * sk.B, sk)


def test_param_count_fixed_parts_only(conv5):
    sk = SkeletonSpec(3)
    w = Widths()
    n = _zero_identity_network(sk, 2)
    fixed = w.stem_params()
    for p in w.plan(sk):
        fixed += sum(cin * p.width + p.width for cin in p.in_widths) + 4 * p.width**2 + p.width
    last = w.plan(sk)[-1].width
    fixed += last * w.n_classes + w.n_classes
    assert param_count(n, w, conv5) == fixed
    assert param_count(_zero_identity_network(sk, 1), w, conv5) == fixed
    assert param_count(_zero_identity_network(sk, 5), w, conv5) == fixed


def test_param_count_one_conv3x3_edge(conv5):
    sk = SkeletonSpec(3)
    w = Widths()
    base = _zero_identity_network(sk, 2)
    for k, plan in enumerate(w.plan(sk)):
        m = base.blocks[k].matrix.copy()
        m[3, 0] = 3
        bigger = base.replace_block(k, BlockGenome.from_matrix(m))
        width = plan.width
        assert param_count(bigger, w, conv5) - param_count(base, w, conv5) == 9 * width**2 + width


def test_plan_widths_double_at_reductions():
    plans = Widths(base=8).plan(SkeletonSpec(3))
    assert [p.width for p in plans] == [8, 16, 32]
    assert [p.res for p in plans] == [8, 4, 2]
    assert plans[2].strides == (4, 2)  # input 0 comes from block 0 at full resolution
    assert plans[1].strides == (2, 2)


def test_opset_truncation_and_lookup():
    s = OpSet.named("vec4", 2)
    assert s.K == 2 and s.names == ["zero", "identity"]
    with pytest.raises(ValueError):
        OpSet.named("conv5", 6)
    with pytest.raises(ValueError):
        OpSet.named("nope")
    with pytest.raises(KeyError):
        s[3]
