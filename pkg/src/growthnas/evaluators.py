"""Fitness evaluators sharing one contract: ``assess(partial, b, M, rng) -> PotentialEstimate``.

* shared weights: mean supernet accuracy over random completions
* surrogate: closed-form landscape with a planted, seed-derived optimum
* scratch: train the standalone network from fresh parameters
"""

from __future__ import annotations

import itertools
import math
from typing import Protocol

import numpy as np

from . import network as net
from . import numkernel as nk
from .data import Dataset, iter_batches
from .genome import HIDDEN, N_NODES, BlockGenome, NetworkGenome, SkeletonSpec
from .numkernel import ParamStore
from .selection import PotentialEstimate
from .space import OpSet, Widths, complete_network, param_count, random_network
from .supernet import SuperNet, evaluate_path

# flat indices of the 14 entries a hidden row may use
FREE_POSITIONS = np.array([dst * N_NODES + src for dst in HIDDEN for src in range(dst)])


class Evaluator(Protocol):
    def assess(self, partial: NetworkGenome, b: int, M: int, rng: np.random.Generator) -> PotentialEstimate: ...


def _completions(partial: NetworkGenome, M: int, opset: OpSet, rng, allowed=None) -> list[NetworkGenome]:
    if partial.complete:
        return [partial]
    return [complete_network(partial, opset, rng, allowed) for _ in range(M)]


# --------------------------------------------------------------------------
# shared weights


class SharedWeightEvaluator:
    def __init__(self, supernet: SuperNet, val: Dataset, n_batches: int | None = 1, batch_size: int = 512):
        self.supernet = supernet
        self.val = val
        self.n_batches = n_batches
        self.batch_size = batch_size

    def assess(self, partial: NetworkGenome, b: int, M: int, rng: np.random.Generator) -> PotentialEstimate:
        s = self.supernet
        n_total = -(-len(self.val) // self.batch_size)
        accs, sizes = [], []
        for genome in _completions(partial, M, s.opset, rng, s.prune_state):
            start = int(rng.integers(n_total)) if self.n_batches is not None else 0
            accs.append(evaluate_path(s, genome, self.val, self.n_batches, self.batch_size, start))
            sizes.append(param_count(genome, s.widths, s.opset))
        return PotentialEstimate(float(np.mean(accs)), float(np.mean(sizes)), len(accs))


def assess_shared_weight(
    supernet: SuperNet,
    partial: NetworkGenome,
    b: int,
    M: int,
    val: Dataset,
    n_batches: int | None,
    rng: np.random.Generator,
    batch_size: int = 512,
) -> PotentialEstimate:
    return SharedWeightEvaluator(supernet, val, n_batches, batch_size).assess(partial, b, M, rng)


# --------------------------------------------------------------------------
# surrogate


def match_fraction(codes, target_codes) -> float:
    """Share of the 14 free entries equal to the target's (works on raw arrays)."""
    a = np.asarray(codes).reshape(-1)[FREE_POSITIONS]
    t = np.asarray(target_codes).reshape(-1)[FREE_POSITIONS]
    return float(np.mean(a == t))


def surrogate_from_matches(matches) -> float:
    """``0.2 + 0.6 * mean(m) + 0.2 * mean(m_k * m_{k+1})``; one block uses ``m_0`` for the pair term."""
    m = np.asarray(matches, dtype=np.float64)
    pair = float(np.mean(m[:-1] * m[1:])) if len(m) > 1 else float(m[0])
    return 0.2 + 0.6 * float(np.mean(m)) + 0.2 * pair


class SurrogateEvaluator:
    """Deterministic pseudo-accuracy peaking at a hidden target genome."""

    def __init__(self, skeleton: SkeletonSpec, opset: OpSet, widths: Widths, seed: int = 0):
        self.skeleton = skeleton
        self.opset = opset
        self.widths = widths
        self.seed = seed
        self.target = random_network(skeleton, opset, np.random.default_rng(seed))

    def score(self, genome: NetworkGenome) -> float:
        if not genome.complete:
            raise ValueError("surrogate score needs a complete genome")
        return surrogate_from_matches(
            [match_fraction(g.codes, t.codes) for g, t in zip(genome.blocks, self.target.blocks)]
        )

    def assess(self, partial: NetworkGenome, b: int, M: int, rng: np.random.Generator) -> PotentialEstimate:
        scores, sizes = [], []
        for genome in _completions(partial, M, self.opset, rng):
            scores.append(self.score(genome))
            sizes.append(param_count(genome, self.widths, self.opset))
        return PotentialEstimate(min(1.0, float(np.mean(scores))), float(np.mean(sizes)), len(scores))


def assess_surrogate(
    partial: NetworkGenome, b: int, M: int, seed: int, rng: np.random.Generator, opset: OpSet, widths: Widths
) -> PotentialEstimate:
    return SurrogateEvaluator(partial.skeleton, opset, widths, seed).assess(partial, b, M, rng)


def enumerate_blocks(opset: OpSet) -> list[BlockGenome]:
    """Every valid block for ``opset`` (180 * K**8 of them), in a fixed order."""
    node_topos = [list(itertools.combinations(range(node), 2)) for node in HIDDEN]
    op_pairs = list(itertools.product(range(1, opset.K + 1), repeat=2))
    rows = []
    for node, topos in zip(HIDDEN, node_topos):
        choices = []
        for (s0, s1), (o0, o1) in itertools.product(topos, op_pairs):
            row = [0] * N_NODES
            row[s0], row[s1] = o0, o1
            choices.append((node, row))
        rows.append(choices)
    out = []
    for combo in itertools.product(*rows):
        m = [[0] * N_NODES for _ in range(N_NODES)]
        for node, row in combo:
            m[node] = row
        out.append(BlockGenome(tuple(c for r in m for c in r)))
    return out


def brute_force_landscape(ev: SurrogateEvaluator, blocks: list[BlockGenome] | None = None) -> np.ndarray:
    """Surrogate score of every network, shape ``(n_blocks,) * B``."""
    blocks = enumerate_blocks(ev.opset) if blocks is None else blocks
    codes = np.array([blk.codes for blk in blocks])[:, FREE_POSITIONS]
    per_block = []
    for t in ev.target.blocks:
        per_block.append(np.mean(codes == np.asarray(t.codes)[FREE_POSITIONS], axis=1))
    B = len(per_block)
    grids = np.meshgrid(*per_block, indexing="ij", sparse=True)
    mean = sum(grids) / B
    pair = sum(grids[k] * grids[k + 1] for k in range(B - 1)) / (B - 1) if B > 1 else grids[0]
    return 0.2 + 0.6 * mean + 0.2 * pair


def top_fraction_threshold(scores: np.ndarray, fraction: float = 0.01) -> float:
    """Smallest score that still ranks within the best ``fraction`` of the landscape."""
    flat = np.sort(scores.reshape(-1))[::-1]
    k = max(1, int(math.floor(fraction * flat.size)))
    return float(flat[k - 1])


# --------------------------------------------------------------------------
# scratch training


def train_standalone(
    genome: NetworkGenome,
    train: Dataset,
    opset: OpSet,
    widths: Widths,
    epochs: int,
    seed: int,
    batch_size: int = 64,
    lr: float = 0.05,
    momentum: float = 0.9,
    weight_decay: float = 3e-4,
    grad_clip: float = 5.0,
) -> ParamStore:
    store = ParamStore(seed)
    for key, shape in net.path_keys(genome, widths, opset).items():
        store.ensure(key, shape)
    rng = np.random.default_rng(seed)
    total = epochs * -(-len(train) // batch_size)
    step = 0
    for _ in range(epochs):
        for x, y in iter_batches(train, batch_size, rng):
            logits, tape = net.forward(genome, store, x, widths, opset)
            _, glogits = nk.softmax_cross_entropy(logits, y)
            grads = net.backward(tape, glogits, widths, opset)
            nk.clip_grad_norm(grads, grad_clip)
            nk.sgd_step(store, grads, nk.cosine_lr(step, total, lr), momentum, weight_decay)
            step += 1
    return store


def accuracy(genome: NetworkGenome, store: ParamStore, data: Dataset, opset: OpSet, widths: Widths, batch_size: int = 512) -> float:
    correct = 0
    for x, y in iter_batches(data, batch_size):
        correct += int((net.predict(genome, store, x, widths, opset) == y).sum())
    return correct / len(data)


def assess_scratch(
    genome: NetworkGenome,
    train: Dataset,
    val: Dataset,
    epochs: int,
    seed: int,
    opset: OpSet,
    widths: Widths,
    **train_kw,
) -> PotentialEstimate:
    """Fresh key-seeded parameters, SGD + cosine, then full-validation accuracy."""
    if not genome.complete:
        raise ValueError("scratch training needs a complete genome")
    store = train_standalone(genome, train, opset, widths, epochs, seed, **train_kw)
    acc = accuracy(genome, store, val, opset, widths)
    return PotentialEstimate(acc, float(param_count(genome, widths, opset)), 1)


class ScratchEvaluator:
    def __init__(self, train: Dataset, val: Dataset, opset: OpSet, widths: Widths, epochs: int, seed: int = 0, **train_kw):
        self.train = train
        self.val = val
        self.opset = opset
        self.widths = widths
        self.epochs = epochs
        self.seed = seed
        self.train_kw = train_kw

    def assess(self, partial: NetworkGenome, b: int, M: int, rng: np.random.Generator) -> PotentialEstimate:
        ests = [
            assess_scratch(g, self.train, self.val, self.epochs, self.seed, self.opset, self.widths, **self.train_kw)
            for g in _completions(partial, M, self.opset, rng)
        ]
        return PotentialEstimate(
            float(np.mean([e.exp_acc for e in ests])), float(np.mean([e.exp_size for e in ests])), len(ests)
        )
