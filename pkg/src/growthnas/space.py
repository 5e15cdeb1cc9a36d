"""Operation sets, samplers and exact search-space arithmetic."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from .genome import HIDDEN, N_NODES, BlockGenome, NetworkGenome, SkeletonSpec

TOPOLOGIES_PER_BLOCK = math.prod(math.comb(i, 2) for i in HIDDEN)  # 180
EDGES_PER_BLOCK = 2 * len(HIDDEN)


@dataclass(frozen=True)
class OpSpec:
    code: int
    name: str
    kind: str  # zero | identity | conv | dense | pool
    kernel: int = 0
    activation: str | None = None

    @property
    def parametric(self) -> bool:
        return self.kind in ("conv", "dense")

    def param_shapes(self, width: int) -> dict[str, tuple[int, ...]]:
        if self.kind == "conv":
            return {"w": (self.kernel, self.kernel, width, width), "b": (width,)}
        if self.kind == "dense":
            return {"w": (width, width), "b": (width,)}
        return {}

    def n_params(self, width: int) -> int:
        return sum(math.prod(s) for s in self.param_shapes(width).values())


_CONV5 = (
    OpSpec(1, "zero", "zero"),
    OpSpec(2, "identity", "identity"),
    OpSpec(3, "conv3x3_relu", "conv", 3, "relu"),
    OpSpec(4, "conv1x1_relu", "conv", 1, "relu"),
    OpSpec(5, "avgpool3x3", "pool", 3),
)
_VEC4 = (
    OpSpec(1, "zero", "zero"),
    OpSpec(2, "identity", "identity"),
    OpSpec(3, "dense_relu", "dense", 0, "relu"),
    OpSpec(4, "dense_tanh", "dense", 0, "tanh"),
)
_REGISTRY = {"conv5": ("conv", _CONV5), "vec4": ("vector", _VEC4)}


@dataclass(frozen=True)
class OpSet:
    name: str
    mode: str  # conv | vector
    ops: tuple[OpSpec, ...]

    def __post_init__(self):
        if [op.code for op in self.ops] != list(range(1, len(self.ops) + 1)):
            raise ValueError("op codes must be contiguous from 1")

    @classmethod
    def named(cls, name: str, n_ops: int | None = None) -> "OpSet":
        """Look up ``conv5``/``vec4``; ``n_ops`` keeps only the first K ops."""
        try:
            mode, ops = _REGISTRY[name]
        except KeyError:
            raise ValueError(f"unknown op set {name!r}; choose from {sorted(_REGISTRY)}") from None
        if n_ops is not None and n_ops > 0:
            if n_ops > len(ops):
                raise ValueError(f"op set {name} has only {len(ops)} ops")
            ops = ops[:n_ops]
        return cls(name, mode, ops)

    @property
    def K(self) -> int:
        return len(self.ops)

    def __getitem__(self, code: int) -> OpSpec:
        if not 1 <= code <= len(self.ops):
            raise KeyError(f"op code {code} outside 1..{len(self.ops)}")
        return self.ops[code - 1]

    @property
    def names(self) -> list[str]:
        return [op.name for op in self.ops]


# --------------------------------------------------------------------------
# sampling


def random_block(opset: OpSet, rng: np.random.Generator) -> BlockGenome:
    if opset.K < 1:
        raise ValueError("empty op set")
    m = np.zeros((N_NODES, N_NODES), dtype=np.int64)
    for node in HIDDEN:
        srcs = rng.choice(node, size=2, replace=False)
        ops = rng.integers(1, opset.K + 1, size=2)
        m[node, srcs] = ops
    return BlockGenome.from_matrix(m)


def complete_network(
    partial: NetworkGenome,
    opset: OpSet,
    rng: np.random.Generator,
    allowed: Sequence[Sequence[BlockGenome] | None] | None = None,
) -> NetworkGenome:
    """Fill the free tail of ``partial`` with random blocks.

    ``allowed`` optionally restricts position ``k`` to a list of block
    genomes, which are then drawn uniformly instead of from the full space.
    """
    blocks = list(partial.blocks)
    for k in range(len(blocks), partial.skeleton.B):
        choices = allowed[k] if allowed is not None else None
        if choices is None:
            blocks.append(random_block(opset, rng))
        else:
            if len(choices) == 0:
                raise ValueError(f"block {k} has an empty allowed set")
            blocks.append(choices[int(rng.integers(len(choices)))])
    return NetworkGenome(tuple(blocks), partial.skeleton)


def random_network(skeleton: SkeletonSpec, opset: OpSet, rng: np.random.Generator, b: int | None = None) -> NetworkGenome:
    b = skeleton.B if b is None else b
    return NetworkGenome(tuple(random_block(opset, rng) for _ in range(b)), skeleton)


# --------------------------------------------------------------------------
# counting


def count_block_genomes(opset: OpSet | int) -> int:
    K = opset if isinstance(opset, int) else opset.K
    if K < 1:
        raise ValueError("op set must contain at least one op")
    return TOPOLOGIES_PER_BLOCK * K**EDGES_PER_BLOCK


class Reduction(NamedTuple):
    ratio: Fraction
    clamped: bool


@dataclass(frozen=True)
class SpaceStats:
    per_block_count: tuple[int, ...]
    restricted: tuple[int | None, ...] = ()
    total: int = field(init=False)
    pruned_total: int = field(init=False)

    def __post_init__(self):
        restricted = self.restricted or (None,) * len(self.per_block_count)
        if len(restricted) != len(self.per_block_count):
            raise ValueError("restricted sizes must match block count")
        object.__setattr__(self, "restricted", tuple(restricted))
        object.__setattr__(self, "total", math.prod(self.per_block_count))
        object.__setattr__(
            self,
            "pruned_total",
            math.prod(c if r is None else min(r, c) for c, r in zip(self.per_block_count, restricted)),
        )

    @property
    def reduction_ratio(self) -> Fraction:
        return Fraction(self.pruned_total, self.total)


def space_stats(opset: OpSet, skeleton: SkeletonSpec, restricted: Sequence[int | None] | None = None) -> SpaceStats:
    c = count_block_genomes(opset)
    return SpaceStats((c,) * skeleton.B, tuple(restricted) if restricted is not None else ())


def reduction_ratio(stats: SpaceStats, p_num: int | Sequence[int], i: int) -> Reduction:
    """Fraction of the shared space left after restricting the first ``i`` blocks.

    ``p_num`` is either the elite count used for every pruned block or one
    survivor count per pruned block. A count above ``C_j`` is clamped.
    """
    C = stats.per_block_count
    if not 1 <= i <= len(C):
        raise ValueError(f"pruned prefix length {i} outside 1..{len(C)}")
    counts = [p_num] * i if isinstance(p_num, int) else list(p_num)
    if len(counts) != i:
        raise ValueError("need one survivor count per pruned block")
    if any(p < 1 for p in counts):
        raise ValueError("survivor counts must be >= 1")
    clamped = any(p > c for p, c in zip(counts, C))
    num = math.prod(min(p, c) for p, c in zip(counts, C)) * math.prod(C[i:])
    return Reduction(Fraction(num, math.prod(C)), clamped)


# --------------------------------------------------------------------------
# realized architecture


@dataclass(frozen=True)
class BlockPlan:
    width: int
    in_widths: tuple[int, int]  # (node 0 source, node 1 source)
    strides: tuple[int, int]
    res: int  # spatial side (1 in vector mode)


@dataclass(frozen=True)
class Widths:
    """Architecture sizing shared by param counting and the supernet."""

    base: int = 8
    in_channels: int = 3
    input_hw: int = 8
    n_classes: int = 4
    mode: str = "conv"

    @property
    def input_dim(self) -> int:
        return self.in_channels * self.input_hw * self.input_hw

    def plan(self, skeleton: SkeletonSpec) -> list[BlockPlan]:
        if self.mode == "vector":
            return [BlockPlan(self.base, (self.base, self.base), (1, 1), 1) for _ in range(skeleton.B)]
        # (width, res) of the stem and every block output
        outs = [(self.base, self.input_hw)]
        plans = []
        for k in range(skeleton.B):
            w1, r1 = outs[-1]
            w0, r0 = outs[-2] if len(outs) >= 2 else outs[-1]
            width, res = w1, r1
            if skeleton.is_reduction(k):
                width, res = 2 * w1, r1 // 2
            if res < 1 or r0 % res or r1 % res:
                raise ValueError(f"input side {self.input_hw} too small for {skeleton.B} blocks")
            plans.append(BlockPlan(width, (w0, w1), (r0 // res, r1 // res), res))
            outs.append((width, res))
        return plans

    def stem_params(self) -> int:
        if self.mode == "vector":
            return self.input_dim * self.base + self.base
        return 9 * self.in_channels * self.base + self.base


def param_count(n: NetworkGenome, widths: Widths, opset: OpSet) -> int:
    """Exact parameter count of a complete network's realized path."""
    if not n.complete:
        raise ValueError("param_count needs a complete network")
    plans = widths.plan(n.skeleton)
    total = widths.stem_params()
    for block, p in zip(n.blocks, plans):
        w = p.width
        total += sum(cin * w + w for cin in p.in_widths)  # source preprocessors
        total += 4 * w * w + w  # output projection
        for _, _, op in block.edges():
            total += opset[op].n_params(w)
    total += plans[-1].width * widths.n_classes + widths.n_classes
    return total
