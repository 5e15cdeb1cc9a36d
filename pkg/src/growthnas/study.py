"""Ranking-fidelity study: pruned supernet vs plain one-shot supernet.

For each seed a growth search yields a pruned supernet and a final
population. A second supernet with the same initialization receives the same
number of uniform single-path training steps and is never pruned. Both rank
the same N genomes; Kendall's tau against scratch-trained accuracy measures
how faithful each ranking is.
"""

from __future__ import annotations

import copy
import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .config import Config
from .data import Dataset
from .engine import Search, build_data
from .evaluators import assess_scratch
from .genome import NetworkGenome, canonical_hash
from .space import complete_network
from .supernet import Schedule, evaluate_path, init_supernet, train_supernet

log = logging.getLogger(__name__)

STUDY_FIELDS = ["seed", "variant", "genome_id", "shared_acc", "scratch_acc", "tau"]


def kendall_tau(a, b) -> float:
    """Tie-corrected Kendall tau-b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("rankings must be 1-d and of equal length")
    if len(a) < 2:
        raise ValueError("need at least two items")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise ValueError("tau is undefined when one ranking is entirely tied")
    return float(stats.kendalltau(a, b, variant="b").statistic)


@dataclass
class SeedResult:
    seed: int
    genomes: list[NetworkGenome]
    scratch: list[float]
    shared: dict[str, list[float]]
    tau: dict[str, float]
    train_steps: dict[str, int]


@dataclass
class StudyReport:
    results: list[SeedResult] = field(default_factory=list)

    def wins(self) -> int:
        return sum(r.tau["pruned"] >= r.tau["oneshot"] for r in self.results)

    def mean_tau(self, variant: str) -> float:
        return float(np.mean([r.tau[variant] for r in self.results]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, STUDY_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in self.results:
            for variant in ("pruned", "oneshot"):
                w.writerow({"seed": r.seed, "variant": variant, "genome_id": "", "shared_acc": "", "scratch_acc": "", "tau": repr(r.tau[variant])})
            for i, g in enumerate(r.genomes):
                for variant in ("pruned", "oneshot"):
                    w.writerow(
                        {
                            "seed": r.seed,
                            "variant": variant,
                            "genome_id": canonical_hash(g),
                            "shared_acc": repr(r.shared[variant][i]),
                            "scratch_acc": repr(r.scratch[i]),
                            "tau": "",
                        }
                    )
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"seed {r.seed}: tau_pruned={r.tau['pruned']:.3f} tau_oneshot={r.tau['oneshot']:.3f}" for r in self.results]
        lines.append(
            f"pruned >= one-shot in {self.wins()}/{len(self.results)} seeds; "
            f"mean tau_pruned={self.mean_tau('pruned'):.3f} mean tau_oneshot={self.mean_tau('oneshot'):.3f}"
        )
        return "\n".join(lines)


def _study_genomes(search: Search, n: int, rng: np.random.Generator) -> list[NetworkGenome]:
    """Final population, then random fills drawn from the pruned space, ordered by id."""
    seen: dict[str, NetworkGenome] = {}
    for ind in search.state.population:
        seen.setdefault(ind.id, ind.genome)
    empty = NetworkGenome((), search.skeleton)
    attempts = 0
    while len(seen) < n:
        g = complete_network(empty, search.opset, rng, search.supernet.prune_state)
        seen.setdefault(canonical_hash(g), g)
        attempts += 1
        if attempts > 1000 * n:
            raise RuntimeError("pruned space too small to fill the study")
    return [seen[k] for k in sorted(seen)][:n]


def run_seed(cfg: Config, seed: int, train: Dataset, val: Dataset) -> SeedResult:
    cfg = copy.deepcopy(cfg)
    cfg.search.seed = seed
    cfg.search.evaluator = "shared"
    cfg.search.strategy = "growth"

    search = Search(cfg, train, val)
    search.run()
    pruned = search.supernet
    steps_pruned = search.state.train_steps

    s = cfg.search
    oneshot = init_supernet(search.skeleton, search.opset, search.widths, seed)
    sched = Schedule(
        cfg.train.lr, cfg.train.momentum, cfg.train.weight_decay, search.sched.total_steps, grad_clip=cfg.train.grad_clip
    )
    rep = train_supernet(
        oneshot, train, s.E_w + s.B * s.G * s.E_s, sched, np.random.default_rng(seed + 7919), batch_size=cfg.train.batch_size
    )
    if rep.steps != steps_pruned:
        raise RuntimeError(f"unequal training budgets: {steps_pruned} vs {rep.steps}")

    genomes = _study_genomes(search, cfg.study.N, np.random.default_rng(seed + 104729))
    scratch, shared = [], {"pruned": [], "oneshot": []}
    for g in genomes:
        est = assess_scratch(
            g,
            train,
            val,
            cfg.study.scratch_epochs,
            seed,
            search.opset,
            search.widths,
            batch_size=cfg.train.batch_size,
            lr=cfg.train.lr,
            momentum=cfg.train.momentum,
            weight_decay=cfg.train.weight_decay,
            grad_clip=cfg.train.grad_clip,
        )
        scratch.append(est.exp_acc)
        shared["pruned"].append(evaluate_path(pruned, g, val, None, cfg.eval.batch_size))
        shared["oneshot"].append(evaluate_path(oneshot, g, val, None, cfg.eval.batch_size))
    tau = {}
    for variant, accs in shared.items():
        try:
            tau[variant] = kendall_tau(accs, scratch)
        except ValueError:
            tau[variant] = math.nan
    log.info("seed %d tau pruned %.3f oneshot %.3f", seed, tau["pruned"], tau["oneshot"])
    return SeedResult(seed, genomes, scratch, shared, tau, {"pruned": steps_pruned, "oneshot": rep.steps})


def rank_study(cfg: Config, train: Dataset | None = None, val: Dataset | None = None) -> StudyReport:
    if train is None or val is None:
        train, val = build_data(cfg)
    report = StudyReport()
    for seed in cfg.study_seeds:
        report.results.append(run_seed(cfg, seed, train, val))
    return report
