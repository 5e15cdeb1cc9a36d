import csv
import io
import json

import numpy as np
import pytest

from growthnas.config import Config
from growthnas.engine import LOG_FIELDS, IntegrityError, Search, build_data, read_checkpoint, run_search
from growthnas.genome import canonical_hash


def small_cfg(**over) -> Config:
    cfg = Config()
    for k, v in {
        "search.B": 2,
        "search.G": 2,
        "search.P_num": 4,
        "search.E_w": 1,
        "search.E_s": 1,
        "search.M": 2,
        "supernet.width": 4,
        "data.n": 96,
        "data.classes": 2,
        "train.batch_size": 32,
        "eval.batch_size": 32,
        **over,
    }.items():
        cfg.set(k, v)
    return cfg


def surrogate_cfg(**over) -> Config:
    return small_cfg(**{"search.evaluator": "surrogate", "search.E_w": 0, "search.P_num": 8, "search.G": 5, **over})


def test_population_invariants():
    cfg = small_cfg()
    s = Search(cfg, *build_data(cfg))
    s.advance()  # warm-up
    st = s.state
    assert st.stage == 1 and len(st.population) == 4
    assert all(len(i.genome) == 1 for i in st.population)
    while s.advance():
        pop = s.state.population
        assert len(pop) == cfg.search.P_num
        assert len({i.id for i in pop}) == len(pop)
        assert all(len(i.genome) == s.state.stage for i in pop)
    assert all(i.genome.complete for i in s.state.population)


def test_growth_keeps_prefixes():
    cfg = surrogate_cfg()
    s = Search(cfg, *build_data(cfg))
    while s.state.stage < 2 or s.state.phase == "warmup":
        s.advance()
        if s.state.stage == 1 and s.state.generation == cfg.search.G:
            before = {i.genome.blocks for i in s.state.population}
    after = {i.genome.blocks[:1] for i in s.state.population}
    assert after == before
    assert s.state.stages[0]["stage"] == 2


def test_best_monotone_at_full_depth():
    for seed in range(3):
        cfg = surrogate_cfg(**{"search.seed": seed, "search.G": 8})
        s = Search(cfg, *build_data(cfg))
        s.run()
        best = {}
        for row in s.state.history:
            if row["stage"] == 2:
                key = row["generation"]
                best[key] = max(best.get(key, 0.0), row["exp_acc"])
        seq = [best[g] for g in sorted(best)]
        assert seq == sorted(seq)


def test_flat_strategy_evolves_whole_networks():
    cfg = surrogate_cfg(**{"search.strategy": "flat"})
    s = Search(cfg, *build_data(cfg))
    s.advance()
    assert s.state.stage == 2 and all(len(i.genome) == 2 for i in s.state.population)
    s.run()
    gens = {r["generation"] for r in s.state.history}
    assert gens == set(range(cfg.search.B * cfg.search.G))


def test_single_block_is_flat():
    cfg = surrogate_cfg(**{"search.B": 1})
    rep = run_search(cfg)
    assert rep.stages == [] and all(len(p["blocks"]) == 1 for p in rep.population)


def test_reports_deterministic():
    cfg = small_cfg()
    a = run_search(cfg)
    b = run_search(cfg)
    assert a.digest() == b.digest()
    assert run_search(small_cfg(**{"search.seed": 1})).digest() != a.digest()


def test_resume_reproduces_trajectory(tmp_path):
    cfg = small_cfg()
    train, val = build_data(cfg)
    ref = Search(cfg, train, val)
    full = ref.run()
    for cut in (1, 3, 4):
        out = tmp_path / f"cut{cut}"
        part = Search(cfg, train, val, out)
        assert part.run(max_units=cut) is None
        resumed = Search.resume(out / "checkpoint.bin", out_dir=out)
        rep = resumed.run()
        assert rep.digest() == full.digest()
        assert resumed.state.history == ref.state.history
        assert resumed.supernet.digest() == ref.supernet.digest()


def test_corrupted_checkpoint_rejected(tmp_path):
    cfg = small_cfg()
    s = Search(cfg, *build_data(cfg), tmp_path)
    s.run(max_units=2)
    path = tmp_path / "checkpoint.bin"
    raw = bytearray(path.read_bytes())
    doc, blob = read_checkpoint(path)
    assert doc["generation"] == 1 and blob
    raw[40] ^= 0xFF
    bad = tmp_path / "bad.bin"
    bad.write_bytes(bytes(raw))
    with pytest.raises(IntegrityError):
        Search.resume(bad)
    bad.write_bytes(b"NOTACKPT" + bytes(raw[8:]))
    with pytest.raises(IntegrityError):
        read_checkpoint(bad)
    bad.write_bytes(bytes(raw[:-10]))
    with pytest.raises(IntegrityError):
        read_checkpoint(bad)


def test_config_mismatch_refused(tmp_path):
    cfg = small_cfg()
    Search(cfg, *build_data(cfg), tmp_path).run(max_units=1)
    other = small_cfg(**{"search.G": 3})
    with pytest.raises(IntegrityError, match="config"):
        Search.resume(tmp_path / "checkpoint.bin", cfg=other)


def test_history_csv_and_report(tmp_path):
    cfg = surrogate_cfg()
    s = Search(cfg, *build_data(cfg), tmp_path)
    rep = s.run()
    rows = list(csv.DictReader(io.StringIO((tmp_path / "generations.csv").read_text())))
    assert list(rows[0]) == LOG_FIELDS
    assert len(rows) == cfg.search.B * cfg.search.G * cfg.search.P_num
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc == json.loads(rep.dumps())
    assert doc["config_digest"] == cfg.digest()
    pareto_ids = {p["id"] for p in doc["pareto"]}
    assert pareto_ids <= {p["id"] for p in doc["population"]}
    ratio = doc["stages"][0]["reduction_ratio"]
    num, den = map(int, ratio.split("/"))
    assert 0 < num / den < 1


def test_warmup_budget_counts_steps():
    cfg = small_cfg()
    s = Search(cfg, *build_data(cfg))
    s.advance()
    assert s.state.train_steps == cfg.search.E_w * -(-len(s.train) // cfg.train.batch_size)
    s.run()
    assert s.sched.step == s.state.train_steps == s.sched.total_steps


def test_population_ids_are_canonical():
    cfg = surrogate_cfg()
    s = Search(cfg, *build_data(cfg))
    s.run()
    for ind in s.state.population:
        assert ind.id == canonical_hash(ind.genome)
    assert np.all([0 <= r["exp_acc"] <= 1 for r in s.state.history])
