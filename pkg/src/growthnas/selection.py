"""Two-objective environmental selection: maximize accuracy, minimize size."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .genome import NetworkGenome, canonical_hash


@dataclass(frozen=True)
class PotentialEstimate:
    exp_acc: float
    exp_size: float
    n_samples: int = 1

    def __post_init__(self):
        if not 0.0 <= self.exp_acc <= 1.0:
            raise ValueError(f"expected accuracy {self.exp_acc} outside [0, 1]")
        if not self.exp_size > 0:
            raise ValueError(f"expected size must be positive, got {self.exp_size}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


@dataclass
class Individual:
    genome: NetworkGenome
    potential: PotentialEstimate | None = None
    front: int = -1
    id: str = field(init=False)

    def __post_init__(self):
        self.id = canonical_hash(self.genome)

    def require(self) -> PotentialEstimate:
        if self.potential is None:
            raise ValueError(f"individual {self.id} has not been evaluated")
        return self.potential


def dominates(a: PotentialEstimate | Individual, b: PotentialEstimate | Individual) -> bool:
    if isinstance(a, Individual):
        a = a.require()
    if isinstance(b, Individual):
        b = b.require()
    if a is None or b is None:
        raise ValueError("dominance needs evaluated individuals")
    no_worse = a.exp_acc >= b.exp_acc and a.exp_size <= b.exp_size
    better = a.exp_acc > b.exp_acc or a.exp_size < b.exp_size
    return no_worse and better


def nondominated_sort(pop: list[Individual]) -> list[list[Individual]]:
    """Fast nondominated sorting; also writes each individual's ``front``."""
    n = len(pop)
    pots = [ind.require() for ind in pop]
    dominated_by = [[] for _ in range(n)]
    counts = [0] * n
    for p in range(n):
        for q in range(p + 1, n):
            if dominates(pots[p], pots[q]):
                dominated_by[p].append(q)
                counts[q] += 1
            elif dominates(pots[q], pots[p]):
                dominated_by[q].append(p)
                counts[p] += 1
    current = [p for p in range(n) if counts[p] == 0]
    fronts = []
    rank = 0
    while current:
        nxt = []
        for p in current:
            pop[p].front = rank
            for q in dominated_by[p]:
                counts[q] -= 1
                if counts[q] == 0:
                    nxt.append(q)
        fronts.append([pop[p] for p in sorted(current)])
        current = nxt
        rank += 1
    return fronts


def crowding_distance(front: list[Individual]) -> dict[str, float]:
    dist = {ind.id: 0.0 for ind in front}
    if len(front) <= 2:
        return {k: math.inf for k in dist}
    for obj in (lambda i: i.potential.exp_acc, lambda i: i.potential.exp_size):
        ordered = sorted(front, key=lambda i: (obj(i), i.id))
        lo, hi = obj(ordered[0]), obj(ordered[-1])
        dist[ordered[0].id] = dist[ordered[-1].id] = math.inf
        if hi == lo:
            continue
        for prev, cur, nxt in zip(ordered, ordered[1:], ordered[2:]):
            dist[cur.id] += (obj(nxt) - obj(prev)) / (hi - lo)
    return dist


def environmental_select(pop: list[Individual], p_num: int, protection: bool = True) -> list[Individual]:
    """Keep ``p_num`` individuals: whole fronts first, crowding fill for the last one.

    With ``protection`` the best ``p_num // 2`` individuals by accuracy alone
    are moved ahead of the crowding order inside the partially admitted
    front, right after its boundary points.
    """
    if len(pop) <= p_num:
        nondominated_sort(pop)
        return list(pop)
    fronts = nondominated_sort(pop)
    by_acc = sorted(pop, key=lambda i: (-i.potential.exp_acc, i.id))
    protected = {i.id for i in by_acc[: p_num // 2]} if protection else set()
    chosen: list[Individual] = []
    for front in fronts:
        room = p_num - len(chosen)
        if len(front) <= room:
            chosen.extend(front)
            if len(chosen) == p_num:
                break
            continue
        dist = crowding_distance(front)
        ranked = sorted(
            front,
            key=lambda i: (
                dist[i.id] != math.inf,
                i.id not in protected,
                -dist[i.id],
                -i.potential.exp_acc,
                i.id,
            ),
        )
        chosen.extend(ranked[:room])
        break
    return chosen
