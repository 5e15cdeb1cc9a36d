"""Block and network genomes.

A block is a 7-node DAG stored as a lower-triangular matrix of op codes:
``matrix[dst][src]`` holds the operation on edge ``src -> dst`` (0 = no edge).
Nodes 0 and 1 are the block inputs, nodes 2..5 are hidden nodes with exactly
two incoming edges each, and node 6 is the output, which implicitly
aggregates every hidden node (its row is always empty).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

N_NODES = 7
N_INPUTS = 2
HIDDEN = (2, 3, 4, 5)
OUTPUT = 6
VECTOR_LEN = N_NODES * N_NODES


class GenomeError(ValueError):
    """Raised when a genome violates a structural invariant."""


def validate_matrix(matrix, n_ops: int | None = None) -> None:
    """Raise :class:`GenomeError` naming the first violated invariant."""
    m = np.asarray(matrix)
    if m.shape != (N_NODES, N_NODES):
        raise GenomeError(f"block matrix must be {N_NODES}x{N_NODES}, got {m.shape}")
    if (m < 0).any():
        raise GenomeError("op codes must be non-negative")
    if n_ops is not None and (m > n_ops).any():
        raise GenomeError(f"op code exceeds op-set size {n_ops}")
    if np.triu(m).any():
        i, j = np.argwhere(np.triu(m))[0]
        raise GenomeError(f"edge {j}->{i} breaks topological order (column >= row)")
    for row in (0, 1, OUTPUT):
        if m[row].any():
            raise GenomeError(f"row {row} must be empty")
    for row in HIDDEN:
        n = int(np.count_nonzero(m[row]))
        if n != 2:
            raise GenomeError(f"hidden node {row} has {n} incoming edges, expected 2")


@dataclass(frozen=True)
class BlockGenome:
    """One block's op-coded adjacency matrix, flattened row-major."""

    codes: tuple[int, ...]

    def __post_init__(self):
        if len(self.codes) != VECTOR_LEN:
            raise GenomeError(f"block vector must have length {VECTOR_LEN}, got {len(self.codes)}")
        validate_matrix(np.asarray(self.codes, dtype=np.int64).reshape(N_NODES, N_NODES))

    @classmethod
    def from_matrix(cls, matrix) -> "BlockGenome":
        m = np.asarray(matrix, dtype=np.int64)
        if m.shape != (N_NODES, N_NODES):
            raise GenomeError(f"block matrix must be {N_NODES}x{N_NODES}, got {m.shape}")
        return cls(tuple(int(c) for c in m.reshape(-1)))

    @property
    def matrix(self) -> np.ndarray:
        m = np.asarray(self.codes, dtype=np.int64).reshape(N_NODES, N_NODES)
        m.flags.writeable = False
        return m

    def edges(self) -> list[tuple[int, int, int]]:
        """``(dst, src, op)`` triples in row-major order."""
        out = []
        for dst in HIDDEN:
            base = dst * N_NODES
            for src in range(dst):
                op = self.codes[base + src]
                if op:
                    out.append((dst, src, op))
        return out

    def sources(self, dst: int) -> tuple[int, int]:
        base = dst * N_NODES
        s = [src for src in range(dst) if self.codes[base + src]]
        return s[0], s[1]

    def max_op(self) -> int:
        return max(self.codes)


@dataclass(frozen=True)
class SkeletonSpec:
    """Fixed outer structure: ``B`` blocks, reductions at the 1/3 and 2/3 marks."""

    B: int
    nodes_per_block: int = N_NODES

    def __post_init__(self):
        if self.B < 1:
            raise GenomeError("skeleton needs at least one block")
        if self.nodes_per_block != N_NODES:
            raise GenomeError("only 7-node blocks are supported")

    @property
    def reduction_positions(self) -> frozenset[int]:
        return frozenset({self.B // 3, (2 * self.B) // 3})

    def is_reduction(self, k: int) -> bool:
        return k in self.reduction_positions


@dataclass(frozen=True)
class NetworkGenome:
    blocks: tuple[BlockGenome, ...]
    skeleton: SkeletonSpec

    def __post_init__(self):
        if len(self.blocks) > self.skeleton.B:
            raise GenomeError(f"{len(self.blocks)} blocks exceed skeleton size {self.skeleton.B}")

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def complete(self) -> bool:
        return len(self.blocks) == self.skeleton.B

    @property
    def reduction_tags(self) -> tuple[bool, ...]:
        return tuple(self.skeleton.is_reduction(k) for k in range(len(self.blocks)))

    def replace_block(self, k: int, block: BlockGenome) -> "NetworkGenome":
        blocks = list(self.blocks)
        blocks[k] = block
        return NetworkGenome(tuple(blocks), self.skeleton)

    def append(self, block: BlockGenome) -> "NetworkGenome":
        return NetworkGenome(self.blocks + (block,), self.skeleton)

    def prefix(self, b: int) -> "NetworkGenome":
        return NetworkGenome(self.blocks[:b], self.skeleton)

    def validate(self, n_ops: int | None = None) -> None:
        for block in self.blocks:
            validate_matrix(block.matrix, n_ops)


def encode(g: BlockGenome) -> np.ndarray:
    """Row-major flattening of the block matrix (length 49)."""
    validate_matrix(g.matrix)
    return np.asarray(g.codes, dtype=np.int64)


def decode(v: Sequence[int] | np.ndarray, n_ops: int | None = None) -> BlockGenome:
    arr = np.asarray(v)
    if arr.ndim != 1 or arr.shape[0] != VECTOR_LEN:
        raise GenomeError(f"block vector must have length {VECTOR_LEN}, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise GenomeError("block vector must hold integers")
        arr = arr.astype(np.int64)
    validate_matrix(arr.reshape(N_NODES, N_NODES), n_ops)
    return BlockGenome(tuple(int(c) for c in arr))


def canonical_hash(n: NetworkGenome) -> str:
    """Stable 64-bit digest as 16 hex chars; no per-process salting."""
    h = hashlib.blake2b(digest_size=8, person=b"gevo-net")
    h.update(n.skeleton.B.to_bytes(4, "little"))
    h.update(len(n.blocks).to_bytes(4, "little"))
    for block in n.blocks:
        h.update(bytes(block.codes))
    return h.hexdigest()


def dumps_genome(n: NetworkGenome) -> str:
    return "".join(" ".join(str(c) for c in block.codes) + "\n" for block in n.blocks)


def loads_genome(text: str, skeleton: SkeletonSpec, n_ops: int | None = None) -> NetworkGenome:
    blocks = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            values = [int(tok) for tok in line.split()]
        except ValueError as exc:
            raise GenomeError(f"line {lineno}: {exc}") from None
        try:
            blocks.append(decode(values, n_ops))
        except GenomeError as exc:
            raise GenomeError(f"line {lineno}: {exc}") from None
    return NetworkGenome(tuple(blocks), skeleton)


def export_dot(n: NetworkGenome, op_names: Iterable[str] | None = None) -> str:
    """Render the network as a Graphviz digraph, one cluster per block.

    Edges inside a block carry the op name; the implicit hidden-to-output
    aggregation is drawn dashed and unlabeled.
    """
    names = list(op_names) if op_names is not None else None

    def label(op: int) -> str:
        if names is not None and 1 <= op <= len(names):
            return names[op - 1]
        return f"op{op}"

    lines = ["digraph network {", "  rankdir=LR;", "  node [shape=circle];"]
    for k, block in enumerate(n.blocks):
        kind = "reduction" if n.skeleton.is_reduction(k) else "normal"
        lines.append(f"  subgraph cluster_{k} {{")
        lines.append(f'    label="block {k} ({kind})";')
        for node in range(N_NODES):
            lines.append(f'    b{k}_n{node} [label="{node}"];')
        for dst, src, op in block.edges():
            lines.append(f'    b{k}_n{src} -> b{k}_n{dst} [label="{label(op)}"];')
        for h in HIDDEN:
            lines.append(f"    b{k}_n{h} -> b{k}_n{OUTPUT} [style=dashed];")
        lines.append("  }")
    for k in range(1, len(n.blocks)):
        lines.append(f"  b{k - 1}_n{OUTPUT} -> b{k}_n1 [style=bold];")
        if k >= 2:
            lines.append(f"  b{k - 2}_n{OUTPUT} -> b{k}_n0 [style=bold];")
    lines.append("}")
    return "\n".join(lines) + "\n"
