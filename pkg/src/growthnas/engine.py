"""Growth-based evolutionary search loop with checkpoint/resume.

The loop runs warm-up, then one stage per block. Stage ``b`` starts by
restricting the supernet to the previous stage's elite blocks and appending
a random block to every individual, then runs ``G`` generations of
offspring -> interval training -> evaluation -> selection in which only the
newest block varies. ``strategy = flat`` instead evolves complete networks
for ``B * G`` generations with every block open to variation.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config, ConfigError, loads_config
from .data import Dataset, gen_synthetic, load_cifar10_binary, split
from .evaluators import ScratchEvaluator, SharedWeightEvaluator, SurrogateEvaluator
from .genome import NetworkGenome, SkeletonSpec, canonical_hash, decode
from .selection import Individual, PotentialEstimate, environmental_select, nondominated_sort
from .space import OpSet, Widths, random_block, reduction_ratio, space_stats
from .supernet import (
    Schedule,
    SuperNet,
    dump_supernet,
    init_supernet,
    load_supernet,
    prune,
    train_supernet,
)
from .variation import VariationParams, generate_offspring

log = logging.getLogger(__name__)

CKPT_MAGIC = b"GEVOCKPT"
CKPT_VERSION = 1
LOG_FIELDS = ["stage", "generation", "id", "exp_acc", "exp_size", "front", "n_samples"]


class IntegrityError(ValueError):
    """Checkpoint is corrupted, from another format version, or from another config."""


def build_data(cfg: Config) -> tuple[Dataset, Dataset]:
    d = cfg.data
    if d.source == "synthetic":
        ds = gen_synthetic(d.classes, d.n, cfg.shape, d.noise, d.seed, d.kind)
    elif d.source == "cifar10":
        paths = [p.strip() for p in d.cifar_paths.split(",") if p.strip()]
        if not paths:
            raise ConfigError("data.cifar_paths is empty")
        ds = load_cifar10_binary(paths)
    else:
        raise ConfigError(f"unknown data source {d.source!r}")
    return split(ds, d.split, d.seed)


def build_space(cfg: Config, data: Dataset | None = None) -> tuple[SkeletonSpec, OpSet, Widths]:
    opset = OpSet.named(cfg.space.opset, cfg.space.n_ops or None)
    if data is not None:
        shape, classes = data.sample_shape, data.n_classes
    else:
        shape, classes = cfg.shape, cfg.data.classes
    if opset.mode == "vector":
        widths = Widths(cfg.supernet.width, int(np.prod(shape)), 1, classes, "vector")
    else:
        widths = Widths(cfg.supernet.width, shape[-1], shape[0], classes, "conv")
    return SkeletonSpec(cfg.search.B), opset, widths


def grow_population(pop: list[Individual], opset: OpSet, rng: np.random.Generator) -> list[Individual]:
    """Append one random block to every individual; potentials are dropped."""
    return [Individual(ind.genome.append(random_block(opset, rng))) for ind in pop]


@dataclass
class SearchState:
    phase: str = "warmup"  # warmup | evolve | done
    stage: int = 0
    generation: int = 0
    population: list[Individual] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)
    stages: list[dict] = field(default_factory=list)
    train_steps: int = 0


@dataclass
class FinalReport:
    config_digest: str
    pareto: list[dict]
    population: list[dict]
    stages: list[dict]
    space: dict
    train_steps: int

    def to_dict(self) -> dict:
        return {
            "config_digest": self.config_digest,
            "pareto": self.pareto,
            "population": self.population,
            "stages": self.stages,
            "space": self.space,
            "train_steps": self.train_steps,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _ind_record(ind: Individual) -> dict:
    p = ind.potential
    return {
        "id": ind.id,
        "blocks": [list(b.codes) for b in ind.genome.blocks],
        "exp_acc": None if p is None else p.exp_acc,
        "exp_size": None if p is None else p.exp_size,
        "n_samples": None if p is None else p.n_samples,
        "front": ind.front,
    }


def _ind_from_record(rec: dict, skeleton: SkeletonSpec) -> Individual:
    genome = NetworkGenome(tuple(decode(c) for c in rec["blocks"]), skeleton)
    ind = Individual(genome)
    if rec["exp_acc"] is not None:
        ind.potential = PotentialEstimate(rec["exp_acc"], rec["exp_size"], rec["n_samples"])
    ind.front = rec["front"]
    return ind


class Search:
    def __init__(self, cfg: Config, train: Dataset, val: Dataset, out_dir: str | Path | None = None):
        self.cfg = cfg.validate()
        self.train = train
        self.val = val
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.skeleton, self.opset, self.widths = build_space(cfg, train)
        self.rng = np.random.default_rng(cfg.search.seed)
        self.vparams = VariationParams(cfg.variation.crossover_rate, cfg.variation.mutation_rate, cfg.variation.retries)
        self.state = SearchState()
        s = cfg.search
        steps_per_epoch = -(-len(train) // cfg.train.batch_size)
        self.sched = Schedule(
            cfg.train.lr,
            cfg.train.momentum,
            cfg.train.weight_decay,
            max(1, (s.E_w + s.B * s.G * s.E_s) * steps_per_epoch),
            grad_clip=cfg.train.grad_clip,
        )
        self.supernet: SuperNet | None = None
        if s.evaluator == "shared":
            self.supernet = init_supernet(self.skeleton, self.opset, self.widths, s.seed)
        self.evaluator = self._make_evaluator()

    # -- setup -------------------------------------------------------------

    def _make_evaluator(self):
        cfg = self.cfg
        kind = cfg.search.evaluator
        n_batches = cfg.eval.n_batches or None
        if kind == "shared":
            return SharedWeightEvaluator(self.supernet, self.val, n_batches, cfg.eval.batch_size)
        if kind == "surrogate":
            return SurrogateEvaluator(self.skeleton, self.opset, self.widths, cfg.surrogate.seed)
        return ScratchEvaluator(
            self.train,
            self.val,
            self.opset,
            self.widths,
            cfg.study.scratch_epochs,
            cfg.search.seed,
            batch_size=cfg.train.batch_size,
            lr=cfg.train.lr,
            momentum=cfg.train.momentum,
            weight_decay=cfg.train.weight_decay,
            grad_clip=cfg.train.grad_clip,
        )

    @property
    def flat(self) -> bool:
        return self.cfg.search.strategy == "flat"

    @property
    def n_generations(self) -> int:
        s = self.cfg.search
        return s.B * s.G if self.flat else s.G

    # -- phases ------------------------------------------------------------

    def _random_population(self, b: int) -> list[Individual]:
        pop, seen = [], set()
        while len(pop) < self.cfg.search.P_num:
            genome = NetworkGenome(tuple(random_block(self.opset, self.rng) for _ in range(b)), self.skeleton)
            h = canonical_hash(genome)
            if h in seen:
                continue
            seen.add(h)
            pop.append(Individual(genome))
        return pop

    def _train(self, epochs: int, pop, b: int) -> None:
        if self.supernet is None or epochs < 1:
            return
        rep = train_supernet(
            self.supernet, self.train, epochs, self.sched, self.rng, pop=pop, b=b, batch_size=self.cfg.train.batch_size
        )
        self.state.train_steps += rep.steps
        log.info("trained %d epochs (stage %d), loss %.4f", epochs, b, rep.epoch_losses[-1])

    def _warmup(self) -> None:
        st = self.state
        self._train(self.cfg.search.E_w, None, 0)
        b = self.skeleton.B if self.flat else 1
        st.population = self._random_population(b)
        st.phase, st.stage, st.generation = "evolve", b, 0

    def _begin_stage(self, b: int) -> None:
        st = self.state
        genomes = [ind.genome for ind in st.population]
        if self.supernet is not None:
            report = prune(self.supernet, genomes)
            sizes, ratio = report.restricted_sizes, report.reduction.ratio
        else:
            sizes = [len({g.blocks[k] for g in genomes}) for k in range(b - 1)]
            stats = space_stats(self.opset, self.skeleton, sizes + [None] * (self.skeleton.B - len(sizes)))
            ratio = reduction_ratio(stats, sizes, b - 1).ratio
        st.stages.append({"stage": b, "restricted_sizes": sizes, "reduction_ratio": f"{ratio.numerator}/{ratio.denominator}"})
        st.population = grow_population(st.population, self.opset, self.rng)
        st.stage, st.generation = b, 0

    def _generation(self) -> None:
        st = self.state
        cfg = self.cfg
        b = st.stage
        offspring = generate_offspring(
            st.population, b, self.opset.K, self.vparams, self.rng, scope="all" if self.flat else "growing"
        )
        union = st.population + offspring
        self._train(cfg.search.E_s, union, b)
        for ind in union:
            ind.potential = self.evaluator.assess(ind.genome, b, cfg.search.M, self.rng)
        st.population = environmental_select(union, cfg.search.P_num, cfg.selection.protection)
        for ind in st.population:
            p = ind.potential
            st.history.append(
                {
                    "stage": b,
                    "generation": st.generation,
                    "id": ind.id,
                    "exp_acc": p.exp_acc,
                    "exp_size": p.exp_size,
                    "front": ind.front,
                    "n_samples": p.n_samples,
                }
            )
        st.generation += 1
        best = max(ind.potential.exp_acc for ind in st.population)
        log.info("stage %d gen %d best exp_acc %.4f", b, st.generation, best)

    def advance(self) -> bool:
        """Run one unit of work (warm-up, a stage transition or a generation). False when done."""
        st = self.state
        if st.phase == "done":
            return False
        if st.phase == "warmup":
            self._warmup()
        elif st.generation < self.n_generations:
            self._generation()
        elif st.stage < self.skeleton.B:
            self._begin_stage(st.stage + 1)
        else:
            st.phase = "done"
        if self.out_dir is not None:
            self.checkpoint(self.out_dir / "checkpoint.bin")
        return st.phase != "done"

    def run(self, max_units: int | None = None) -> FinalReport | None:
        """Advance to completion (or for ``max_units`` units) and write logs."""
        units = 0
        try:
            while self.advance():
                units += 1
                if max_units is not None and units >= max_units:
                    return None
        except Exception:
            if self.out_dir is not None:
                self.checkpoint(self.out_dir / "checkpoint.bin")
            raise
        report = self.final_report()
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            (self.out_dir / "report.json").write_text(report.dumps())
            (self.out_dir / "generations.csv").write_text(self.history_csv())
        return report

    # -- reporting ---------------------------------------------------------

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, LOG_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in self.state.history:
            w.writerow({**row, "exp_acc": repr(row["exp_acc"]), "exp_size": repr(row["exp_size"])})
        return buf.getvalue()

    def final_report(self) -> FinalReport:
        pop = self.state.population
        final = pop
        if self.supernet is not None:
            # full validation set, no fresh completions needed: genomes are complete
            ev = SharedWeightEvaluator(self.supernet, self.val, self.cfg.eval.final_n_batches or None, self.cfg.eval.batch_size)
            rng = np.random.default_rng(self.cfg.search.seed)
            final = []
            for ind in pop:
                fresh = Individual(ind.genome)
                fresh.potential = ev.assess(ind.genome, len(ind.genome), 1, rng)
                final.append(fresh)
        fronts = nondominated_sort(final)
        stats = space_stats(self.opset, self.skeleton)
        pruned = self.supernet.stats() if self.supernet is not None else stats
        return FinalReport(
            self.cfg.digest(),
            [_ind_record(i) for i in sorted(fronts[0], key=lambda i: (-i.potential.exp_acc, i.id))],
            [_ind_record(i) for i in sorted(final, key=lambda i: (i.front, -i.potential.exp_acc, i.id))],
            list(self.state.stages),
            {
                "per_block_count": [str(c) for c in stats.per_block_count],
                "total": str(stats.total),
                "pruned_total": str(pruned.pruned_total),
            },
            self.state.train_steps,
        )

    # -- checkpoint --------------------------------------------------------

    def _state_json(self) -> bytes:
        st = self.state
        doc = {
            "config_digest": self.cfg.digest(),
            "config": self.cfg.dumps(),
            "phase": st.phase,
            "stage": st.stage,
            "generation": st.generation,
            "population": [_ind_record(i) for i in st.population],
            "history": st.history,
            "stages": st.stages,
            "train_steps": st.train_steps,
            "sched_step": self.sched.step,
            "rng": self.rng.bit_generator.state,
        }
        return json.dumps(doc, sort_keys=True).encode()

    def checkpoint(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        body = io.BytesIO()
        body.write(CKPT_MAGIC)
        state = self._state_json()
        net_blob = dump_supernet(self.supernet) if self.supernet is not None else b""
        body.write(struct.pack("<HQQ", CKPT_VERSION, len(state), len(net_blob)))
        body.write(state)
        body.write(net_blob)
        data = body.getvalue()
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(data + hashlib.sha256(data).digest())
        tmp.replace(path)

    @classmethod
    def resume(
        cls, path: str | Path, cfg: Config | None = None, train: Dataset | None = None, val: Dataset | None = None, out_dir=None
    ) -> "Search":
        """Rebuild a search from a checkpoint; ``cfg=None`` uses the config stored in it."""
        doc, net_blob = read_checkpoint(path)
        if cfg is None:
            cfg = loads_config(doc["config"])
        if doc["config_digest"] != cfg.digest():
            raise IntegrityError(f"{path}: checkpoint was written under a different config")
        if train is None or val is None:
            train, val = build_data(cfg)
        search = cls(cfg, train, val, out_dir)
        if net_blob:
            search.supernet = load_supernet(net_blob)
            search.evaluator = search._make_evaluator()
        st = search.state
        st.phase, st.stage, st.generation = doc["phase"], doc["stage"], doc["generation"]
        st.population = [_ind_from_record(r, search.skeleton) for r in doc["population"]]
        st.history = doc["history"]
        st.stages = doc["stages"]
        st.train_steps = doc["train_steps"]
        search.sched.step = doc["sched_step"]
        search.rng.bit_generator.state = doc["rng"]
        return search


def read_checkpoint(path: str | Path) -> tuple[dict, bytes]:
    """Verify a checkpoint file and return its state document and supernet blob."""
    raw = Path(path).read_bytes()
    head = len(CKPT_MAGIC) + struct.calcsize("<HQQ")
    if len(raw) < head + 32 or raw[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise IntegrityError(f"{path}: not a search checkpoint")
    data, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(data).digest() != digest:
        raise IntegrityError(f"{path}: checksum mismatch, file is corrupted")
    version, n_state, n_net = struct.unpack_from("<HQQ", data, len(CKPT_MAGIC))
    if version != CKPT_VERSION:
        raise IntegrityError(f"{path}: checkpoint version {version}, expected {CKPT_VERSION}")
    if head + n_state + n_net != len(data):
        raise IntegrityError(f"{path}: section lengths do not match the file size")
    doc = json.loads(data[head : head + n_state])
    return doc, data[head + n_state :]


def run_search(cfg: Config, train: Dataset | None = None, val: Dataset | None = None, out_dir=None) -> FinalReport:
    if train is None or val is None:
        train, val = build_data(cfg)
    return Search(cfg, train, val, out_dir).run()
