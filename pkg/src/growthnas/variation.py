"""Genetic operators restricted to the newest (growing) block."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .genome import HIDDEN, BlockGenome, NetworkGenome, canonical_hash
from .selection import Individual


UNIFORM_SWAP = 0.5


@dataclass(frozen=True)
class VariationParams:
    crossover_rate: float = 0.9
    mutation_rate: float = 0.2
    retries: int = 3


def _target(n: NetworkGenome, b: int, block: int | None) -> int:
    if len(n) != b:
        raise ValueError(f"genome has {len(n)} blocks, stage is {b}")
    k = b - 1 if block is None else block
    if not 0 <= k < b:
        raise ValueError(f"block index {k} outside 0..{b - 1}")
    return k


def crossover(
    p1: NetworkGenome,
    p2: NetworkGenome,
    b: int,
    rate: float,
    rng: np.random.Generator,
    block: int | None = None,
) -> tuple[NetworkGenome, NetworkGenome]:
    """Swap whole hidden-node rows of the growing block with probability ``rate`` each.

    Rows carry both the connections and the ops of a node, so children are
    valid without repair.
    """
    if len(p1) != len(p2):
        raise ValueError(f"parents differ in length ({len(p1)} vs {len(p2)})")
    k = _target(p1, b, block)
    m1 = p1.blocks[k].matrix.copy()
    m2 = p2.blocks[k].matrix.copy()
    swap = rng.random(len(HIDDEN)) < rate
    for node, s in zip(HIDDEN, swap):
        if s:
            m1[node], m2[node] = m2[node].copy(), m1[node].copy()
    return (
        p1.replace_block(k, BlockGenome.from_matrix(m1)),
        p2.replace_block(k, BlockGenome.from_matrix(m2)),
    )


def mutate_connection(n: NetworkGenome, b: int, rng: np.random.Generator, block: int | None = None) -> NetworkGenome:
    """Re-source one incoming edge of a random hidden node, keeping its op."""
    k = _target(n, b, block)
    m = n.blocks[k].matrix.copy()
    # node 2 can only read from {0, 1}, which it already uses
    candidates = [node for node in HIDDEN if node > 2]
    if not candidates:
        return n
    node = int(rng.choice(candidates))
    srcs = np.flatnonzero(m[node])
    old = int(srcs[rng.integers(2)])
    keep = int(srcs[0] if srcs[1] == old else srcs[1])
    free = [s for s in range(node) if s not in (old, keep)]
    new = int(free[rng.integers(len(free))])
    m[node, new] = m[node, old]
    m[node, old] = 0
    return n.replace_block(k, BlockGenome.from_matrix(m))


def mutate_operation(
    n: NetworkGenome, b: int, K: int, rng: np.random.Generator, block: int | None = None
) -> NetworkGenome:
    """Give one random edge of the growing block a different op code."""
    k = _target(n, b, block)
    if K <= 1:
        return n
    m = n.blocks[k].matrix.copy()
    edges = np.argwhere(m)
    dst, src = edges[rng.integers(len(edges))]
    current = int(m[dst, src])
    others = [c for c in range(1, K + 1) if c != current]
    m[dst, src] = others[rng.integers(len(others))]
    return n.replace_block(k, BlockGenome.from_matrix(m))


def _make_child(parents: list[NetworkGenome], b: int, K: int, params: VariationParams, rng, scope: str) -> NetworkGenome:
    if len(parents) >= 2:
        i, j = rng.choice(len(parents), size=2, replace=False)
    else:
        i = j = 0
    child = parents[i]
    # scope "all" varies every block at once (flat baseline); "growing" only the newest
    blocks = range(b) if scope == "all" else [b - 1]
    if rng.random() < params.crossover_rate:
        a, other = parents[i], parents[j]
        for k in blocks:
            a, other = crossover(a, other, b, UNIFORM_SWAP, rng, block=k)
        child = (a, other)[int(rng.integers(2))]
    target = None if scope != "all" else int(rng.integers(b))
    if rng.random() < params.mutation_rate:
        child = mutate_connection(child, b, rng, block=target)
    if rng.random() < params.mutation_rate:
        child = mutate_operation(child, b, K, rng, block=target)
    return child


def generate_offspring(
    pop: list[Individual],
    b: int,
    K: int,
    params: VariationParams,
    rng: np.random.Generator,
    scope: str = "growing",
) -> list[Individual]:
    """Produce ``len(pop)`` children; duplicates are redrawn up to ``params.retries`` times."""
    if not pop:
        raise ValueError("cannot breed an empty population")
    parents = [ind.genome for ind in pop]
    seen = {ind.id for ind in pop}
    out: list[Individual] = []
    while len(out) < len(pop):
        for _ in range(params.retries + 1):
            child = _make_child(parents, b, K, params, rng, scope)
            h = canonical_hash(child)
            if h not in seen:
                break
        seen.add(h)
        out.append(Individual(child))
    return out
