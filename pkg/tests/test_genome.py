import numpy as np
import pydot
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import minimal_matrix
from growthnas.genome import (
    BlockGenome,
    GenomeError,
    NetworkGenome,
    SkeletonSpec,
    canonical_hash,
    decode,
    dumps_genome,
    encode,
    export_dot,
    loads_genome,
    validate_matrix,
)
from growthnas.space import OpSet, random_block, random_network


def test_encode_minimal_block_positions():
    v = encode(BlockGenome.from_matrix(minimal_matrix()))
    assert v.shape == (49,)
    assert set(np.flatnonzero(v)) == {14, 15, 21, 22, 28, 29, 35, 36}
    assert (v[np.flatnonzero(v)] == 1).all()


def test_encode_is_row_major():
    m = minimal_matrix(2)
    m[5] = 0
    m[5, 2], m[5, 4] = 3, 4
    v = encode(BlockGenome.from_matrix(m))
    for i in range(7):
        for j in range(7):
            assert v[7 * i + j] == m[i, j]


def test_three_edges_in_row_rejected():
    m = minimal_matrix()
    m[3, 2] = 1
    with pytest.raises(GenomeError, match="hidden node 3"):
        BlockGenome.from_matrix(m)


def test_all_zero_vector_rejected():
    with pytest.raises(GenomeError):
        decode(np.zeros(49, dtype=int))


def test_upper_triangle_entry_rejected():
    v = encode(BlockGenome.from_matrix(minimal_matrix())).copy()
    v[7 * 2 + 3] = 1
    with pytest.raises(GenomeError, match="topological"):
        decode(v)


@pytest.mark.parametrize("row, col", [(1, 0), (6, 3), (6, 5)])
def test_source_and_output_rows_must_be_empty(row, col):
    m = minimal_matrix()
    m[row, col] = 1
    with pytest.raises(GenomeError, match=f"row {row}"):
        validate_matrix(m)


def test_wrong_length_and_op_bound():
    with pytest.raises(GenomeError, match="length"):
        decode([1] * 48)
    with pytest.raises(GenomeError, match="op-set size"):
        decode(encode(BlockGenome.from_matrix(minimal_matrix(4))), n_ops=3)
    with pytest.raises(GenomeError, match="integers"):
        decode(np.full(49, 0.5))


def test_negative_code_rejected():
    m = minimal_matrix()
    m[2, 0] = -1
    with pytest.raises(GenomeError):
        validate_matrix(m)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_round_trip(seed, k):
    g = random_block(OpSet.named("conv5", k), np.random.default_rng(seed))
    assert decode(encode(g)) == g
    v = encode(g)
    assert (encode(decode(v)) == v).all()


def test_matrix_view_is_read_only():
    g = BlockGenome.from_matrix(minimal_matrix())
    with pytest.raises(ValueError):
        g.matrix[2, 0] = 3


def test_skeleton_reduction_positions():
    assert SkeletonSpec(3).reduction_positions == {1, 2}
    assert SkeletonSpec(8).reduction_positions == {2, 5}
    assert SkeletonSpec(1).reduction_positions == {0}
    with pytest.raises(GenomeError):
        SkeletonSpec(0)


def test_network_length_bound_and_tags(conv5, rng):
    sk = SkeletonSpec(3)
    n = random_network(sk, conv5, rng, b=2)
    assert n.reduction_tags == (False, True)
    with pytest.raises(GenomeError):
        NetworkGenome(n.blocks + n.blocks, sk)


def test_hash_stable_and_layout_independent(conv5, rng):
    n = random_network(SkeletonSpec(3), conv5, rng)
    copy = NetworkGenome(tuple(BlockGenome(tuple(b.codes)) for b in n.blocks), n.skeleton)
    assert canonical_hash(n) == canonical_hash(copy)
    again = loads_genome(dumps_genome(n), n.skeleton)
    assert canonical_hash(again) == canonical_hash(n)
    assert len(canonical_hash(n)) == 16


def test_hash_pinned_value():
    n = NetworkGenome((BlockGenome.from_matrix(minimal_matrix()),), SkeletonSpec(1))
    assert canonical_hash(n) == "9252823ab0158d92"
    longer = NetworkGenome(n.blocks, SkeletonSpec(2))
    assert canonical_hash(longer) != canonical_hash(n)


def test_no_collisions_for_single_op_changes(conv5):
    rng = np.random.default_rng(0)
    seen = {}
    for _ in range(10_000):
        n = random_network(SkeletonSpec(2), conv5, rng)
        m = n.blocks[1].matrix.copy()
        dst, src = np.argwhere(m)[rng.integers(8)]
        m[dst, src] = m[dst, src] % 5 + 1
        other = n.replace_block(1, BlockGenome.from_matrix(m))
        assert canonical_hash(n) != canonical_hash(other)
        seen[canonical_hash(n)] = n
    # distinct genomes never share a digest
    assert len(seen) == len({g for g in seen.values()})


def test_loads_genome_reports_line():
    text = "# header\n" + " ".join(["0"] * 49) + "\n"
    with pytest.raises(GenomeError, match="line 2"):
        loads_genome(text, SkeletonSpec(1))


def _parse_dot(text):
    graphs = pydot.graph_from_dot_data(text)
    assert graphs and len(graphs) == 1
    return graphs[0]


def _all_edges(g):
    edges = list(g.get_edges())
    for sub in g.get_subgraphs():
        edges += _all_edges(sub)
    return edges


def _all_nodes(g):
    nodes = [n for n in g.get_nodes() if n.get_name() not in ("node", "edge", "graph")]
    for sub in g.get_subgraphs():
        nodes += _all_nodes(sub)
    return nodes


def test_dot_single_block(conv5, rng):
    n = random_network(SkeletonSpec(1), conv5, rng)
    g = _parse_dot(export_dot(n, conv5.names))
    assert len(g.get_subgraphs()) == 1
    assert len(_all_nodes(g)) == 7
    labeled = [e for e in _all_edges(g) if e.get_label()]
    assert len(labeled) == 8
    assert {e.get_label().strip('"') for e in labeled} <= set(conv5.names)


def test_dot_eight_blocks(conv5, rng):
    n = random_network(SkeletonSpec(8), conv5, rng)
    g = _parse_dot(export_dot(n))
    assert len(g.get_subgraphs()) == 8
    inter = [e for e in g.get_edges()]
    # one edge from the previous block for k >= 1, one from two back for k >= 2
    assert len(inter) == 7 + 6
    assert len(_all_nodes(g)) == 56
