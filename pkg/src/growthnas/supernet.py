"""Weight-sharing supernet over the block space.

Parameters live in one :class:`ParamStore` keyed by (block, dest, src, op,
role). A block position is either free (any block genome) or restricted to
the block genomes an elite population used there; restricting a position
drops the edge parameters no allowed genome can reach and leaves every other
parameter untouched.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import network as net
from . import numkernel as nk
from .data import Dataset, iter_batches
from .genome import HIDDEN, BlockGenome, NetworkGenome, SkeletonSpec, canonical_hash, decode
from .numkernel import ParamKey, ParamStore
from .selection import Individual
from .space import OpSet, Reduction, SpaceStats, Widths, complete_network, reduction_ratio, space_stats

MAGIC = b"GEVO"
FORMAT_VERSION = 1


class PrunedPathError(ValueError):
    """A genome uses structure that pruning removed from the supernet."""


class CheckpointError(ValueError):
    pass


@dataclass
class Schedule:
    """Cosine-annealed SGD settings with a step counter spanning every training call."""

    lr_max: float = 0.025
    momentum: float = 0.9
    weight_decay: float = 3e-4
    total_steps: int = 1
    step: int = 0
    grad_clip: float = 5.0  # 0 disables

    def next_lr(self) -> float:
        lr = nk.cosine_lr(self.step, self.total_steps, self.lr_max)
        self.step += 1
        return lr


@dataclass
class TrainReport:
    epoch_losses: list[float]
    steps: int
    touched: set = field(default_factory=set, repr=False)


@dataclass
class PruneReport:
    restricted_sizes: list[int]
    dropped_keys: int
    stats: SpaceStats
    reduction: Reduction


class SuperNet:
    def __init__(self, skeleton: SkeletonSpec, opset: OpSet, widths: Widths, seed: int = 0):
        self.skeleton = skeleton
        self.opset = opset
        self.widths = widths
        self.seed = seed
        self.store = ParamStore(seed)
        self.prune_state: list[tuple[BlockGenome, ...] | None] = [None] * skeleton.B

    # -- structure -------------------------------------------------------

    def _all_keys(self) -> dict[ParamKey, tuple[int, ...]]:
        sk, w = self.skeleton, self.widths
        plans = w.plan(sk)
        keys = net.stem_keys(w)
        for k in range(sk.B):
            keys.update(net.block_fixed_keys(k, sk, w))
            for dst in HIDDEN:
                for src in range(dst):
                    for op in self.opset.ops:
                        keys.update(net.edge_keys(k, dst, src, op.code, self.opset, plans[k].width))
        keys.update(net.classifier_keys(sk, w))
        return keys

    def allowed(self) -> list[tuple[BlockGenome, ...] | None]:
        return list(self.prune_state)

    def check_allowed(self, genome: NetworkGenome) -> None:
        for k, block in enumerate(genome.blocks):
            allowed = self.prune_state[k]
            if allowed is not None and block not in allowed:
                raise PrunedPathError(f"block {k} of genome {canonical_hash(genome)} was pruned from the supernet")

    def stats(self) -> SpaceStats:
        return space_stats(self.opset, self.skeleton, [None if a is None else len(a) for a in self.prune_state])

    def digest(self) -> str:
        return self.store.digest()

    # -- sampling --------------------------------------------------------

    def sample_path(self, pop: list[Individual] | list[NetworkGenome] | None, b: int, rng: np.random.Generator) -> NetworkGenome:
        """Uniform path (warm-up, ``pop=None``) or a population prefix plus a random tail."""
        for k, a in enumerate(self.prune_state):
            if a is not None and len(a) == 0:
                raise PrunedPathError(f"block {k} has an empty allowed set")
        if pop is None:
            partial = NetworkGenome((), self.skeleton)
        else:
            member = pop[int(rng.integers(len(pop)))]
            genome = member.genome if isinstance(member, Individual) else member
            partial = genome.prefix(b)
        return complete_network(partial, self.opset, rng, self.prune_state)

    # -- training / evaluation -------------------------------------------

    def train_step(self, genome: NetworkGenome, x: np.ndarray, y: np.ndarray, sched: Schedule) -> tuple[float, set]:
        logits, tape = net.forward(genome, self.store, x, self.widths, self.opset)
        loss, glogits = nk.softmax_cross_entropy(logits, y)
        grads = net.backward(tape, glogits, self.widths, self.opset)
        nk.clip_grad_norm(grads, sched.grad_clip)
        nk.sgd_step(self.store, grads, sched.next_lr(), sched.momentum, sched.weight_decay)
        return loss, set(grads)


def init_supernet(skeleton: SkeletonSpec, opset: OpSet, widths: Widths, seed: int = 0) -> SuperNet:
    s = SuperNet(skeleton, opset, widths, seed)
    for key, shape in s._all_keys().items():
        s.store.ensure(key, shape)
    return s


def sample_path(s: SuperNet, pop, b: int, rng: np.random.Generator) -> NetworkGenome:
    return s.sample_path(pop, b, rng)


def train_supernet(
    s: SuperNet,
    data: Dataset,
    epochs: int,
    sched: Schedule,
    rng: np.random.Generator,
    pop=None,
    b: int | None = None,
    batch_size: int = 64,
    track_keys: bool = False,
) -> TrainReport:
    """Single-path training: one sampled path per mini-batch.

    ``pop=None`` samples uniformly (warm-up / one-shot); otherwise each path
    is a population member's first ``b`` blocks plus a random completion.
    """
    if epochs < 1:
        raise ValueError("need at least one epoch")
    if len(data) == 0:
        raise ValueError("empty training data")
    losses = []
    steps = 0
    touched: set = set()
    for _ in range(epochs):
        total = 0.0
        nb = 0
        for x, y in iter_batches(data, batch_size, rng):
            genome = s.sample_path(pop, b if b is not None else 0, rng)
            loss, keys = s.train_step(genome, x, y, sched)
            if track_keys:
                touched |= keys
            total += loss
            nb += 1
            steps += 1
        losses.append(total / nb)
    return TrainReport(losses, steps, touched)


def evaluate_path(
    s: SuperNet, genome: NetworkGenome, val: Dataset, n_batches: int | None = None, batch_size: int = 512, start: int = 0
) -> float:
    """Forward-only accuracy over ``n_batches`` validation batches (all when ``None``)."""
    if not genome.complete:
        raise ValueError("evaluate_path needs a complete genome")
    s.check_allowed(genome)
    correct = 0
    seen = 0
    for x, y in iter_batches(val, batch_size, start=start, n_batches=n_batches):
        pred = net.predict(genome, s.store, x, s.widths, s.opset)
        correct += int((pred == y).sum())
        seen += len(y)
    return correct / seen


def prune(s: SuperNet, pop: list[Individual] | list[NetworkGenome]) -> PruneReport:
    """Restrict every position the population covers to the blocks it uses there."""
    genomes = [m.genome if isinstance(m, Individual) else m for m in pop]
    if not genomes:
        raise ValueError("cannot prune with an empty population")
    b = len(genomes[0])
    if any(len(g) != b for g in genomes):
        raise ValueError("population genomes differ in length")
    plans = s.widths.plan(s.skeleton)
    dropped = 0
    for k in range(b):
        allowed = tuple(sorted({g.blocks[k] for g in genomes}, key=lambda blk: blk.codes))
        s.prune_state[k] = allowed
        keep = set()
        for blk in allowed:
            keep.update(net.block_edge_keys(k, blk, s.opset, plans[k].width))
        doomed = [key for key in s.store.keys() if key.block == k and key.role.startswith("edge.") and key not in keep]
        s.store.drop(doomed)
        dropped += len(doomed)
    sizes = [len(s.prune_state[k]) for k in range(b)]
    stats = s.stats()
    return PruneReport(sizes, dropped, stats, reduction_ratio(stats, sizes, b))


# --------------------------------------------------------------------------
# binary snapshot


def _header(s: SuperNet) -> dict:
    return {
        "B": s.skeleton.B,
        "opset": s.opset.name,
        "K": s.opset.K,
        "widths": [s.widths.base, s.widths.in_channels, s.widths.input_hw, s.widths.n_classes, s.widths.mode],
        "seed": s.seed,
        "prune_state": [None if a is None else [list(blk.codes) for blk in a] for a in s.prune_state],
    }


def dump_supernet(s: SuperNet) -> bytes:
    """``GEVO`` + version + JSON header, then key-sorted little-endian float32 records."""
    buf = io.BytesIO()
    head = json.dumps(_header(s), sort_keys=True).encode()
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", FORMAT_VERSION, len(head)))
    buf.write(head)
    keys = sorted(s.store.keys())
    buf.write(struct.pack("<I", len(keys)))
    for key in keys:
        p = s.store.params[key]
        m = s.store.momentum[key]
        role = key.role.encode()
        buf.write(struct.pack("<iiiiB", key.block, key.dest, key.src, key.op, len(role)))
        buf.write(role)
        buf.write(struct.pack("<B", p.ndim))
        buf.write(struct.pack(f"<{p.ndim}I", *p.shape))
        buf.write(p.astype("<f4").tobytes())
        buf.write(m.astype("<f4").tobytes())
    return buf.getvalue()


def load_supernet(blob: bytes) -> SuperNet:
    view = memoryview(blob)
    if bytes(view[:4]) != MAGIC:
        raise CheckpointError("not a supernet snapshot (bad magic)")
    version, hlen = struct.unpack_from("<HI", view, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"snapshot format {version} unsupported (expected {FORMAT_VERSION})")
    off = 10
    head = json.loads(bytes(view[off : off + hlen]))
    off += hlen
    base, in_ch, hw, n_classes, mode = head["widths"]
    s = SuperNet(
        SkeletonSpec(head["B"]),
        OpSet.named(head["opset"], head["K"]),
        Widths(base, in_ch, hw, n_classes, mode),
        head["seed"],
    )
    s.prune_state = [None if a is None else tuple(decode(c) for c in a) for a in head["prune_state"]]
    (n,) = struct.unpack_from("<I", view, off)
    off += 4
    for _ in range(n):
        block, dest, src, op, rlen = struct.unpack_from("<iiiiB", view, off)
        off += 17
        role = bytes(view[off : off + rlen]).decode()
        off += rlen
        (ndim,) = struct.unpack_from("<B", view, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", view, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        p = np.frombuffer(view, dtype="<f4", count=size, offset=off).reshape(shape).astype(np.float32)
        off += 4 * size
        m = np.frombuffer(view, dtype="<f4", count=size, offset=off).reshape(shape).astype(np.float32)
        off += 4 * size
        key = ParamKey(block, dest, src, op, role)
        s.store.params[key] = p
        s.store.momentum[key] = m
    if off != len(blob):
        raise CheckpointError("trailing bytes after snapshot records")
    return s


def save_supernet(s: SuperNet, path: str | Path) -> None:
    Path(path).write_bytes(dump_supernet(s))


def restore_supernet(path: str | Path) -> SuperNet:
    return load_supernet(Path(path).read_bytes())
