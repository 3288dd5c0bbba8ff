import json
from collections import Counter

import numpy as np
import pytest

from onpolicy.config import ChoiceConfig
from onpolicy.errors import ConfigError, UsageError
from onpolicy.study import (PRESETS, ChoiceSpace, load_records, load_space, preset, read_lines,
                            run_study, sample_assignment, sample_config, space_from_dict,
                            space_to_dict)

BINARY = {"choices": [{"name": "normadv", "values": [False, True]}]}
TINY_BASE = {"numenvs": 2, "stepsize": 64, "batchsize": 32, "numepochsperstep": 1}


def test_binary_uniformity():
    space = space_from_dict(BINARY)
    rng = np.random.default_rng(0)
    freq = np.mean([sample_assignment(space, rng)["normadv"] for _ in range(10_000)])
    assert abs(freq - 0.5) < 0.02


def test_conditionality():
    space = preset("losses")
    rng = np.random.default_rng(1)
    seen = set()
    for _ in range(300):
        cfg = sample_config(space, rng)
        seen.add(cfg.policyloss)
        if cfg.policyloss != "PPO":
            assert cfg.ppoepsilon is None
        else:
            assert cfg.ppoepsilon in (0.1, 0.2, 0.3, 0.5)
        if cfg.policyloss != "AWR":
            assert cfg.awrbeta is None and cfg.awrw is None
    assert len(seen) == 6


def test_ppoepsilon_marginal():
    space = preset("losses")
    rng = np.random.default_rng(2)
    n = 100_000
    counts = Counter(sample_assignment(space, rng).get("ppoepsilon") for _ in range(n))
    p = (1 / 6) * (1 / 4)
    se = np.sqrt(p * (1 - p) / n)
    for v in (0.1, 0.2, 0.3, 0.5):
        assert abs(counts[v] / n - p) < 4 * se


def test_losses_preset_lists():
    space = preset("losses")
    node = {n.name: n for n in space.nodes}
    assert node["numepochsperstep"].values == [1, 3, 10]
    assert sorted(node["policyloss"].values) == sorted(["PG", "V-Trace", "PPO", "AWR", "V-MPO",
                                                        "RPA"])
    assert node["adamlr"].values == [3e-5, 1e-4, 3e-4, 1e-3, 3e-3]
    sub = {n.name: n.values for n in node["policyloss"].sub["AWR"]}
    assert sub["awrw"] == [1.1, 1.2, 1.3, 1.5]
    assert [n.values for n in node["policyloss"].sub["PPO"]] == [[0.1, 0.2, 0.3, 0.5]]


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_load_and_sample(name):
    space = preset(name, desk=True)
    rng = np.random.default_rng(0)
    valid = 0
    for _ in range(50):
        try:
            cfg = sample_config(space, rng)
        except ConfigError:
            continue
        valid += 1
        assert cfg.numenvs in (8, 64, 128, 256) or name == "setup"
    assert valid > 0


def test_space_round_trip(tmp_path):
    space = preset("advantages")
    d = space_to_dict(space)
    p = tmp_path / "space.json"
    p.write_text(json.dumps(d))
    again = load_space(p)
    assert space_to_dict(again) == d
    rng1, rng2 = np.random.default_rng(4), np.random.default_rng(4)
    for _ in range(20):
        assert sample_assignment(space, rng1) == sample_assignment(again, rng2)


def test_space_errors(tmp_path):
    with pytest.raises(ConfigError):
        space_from_dict({"nodes": []})
    with pytest.raises(ConfigError):
        space_from_dict({"choices": [{"name": "bogus", "values": [1]}]})
    with pytest.raises(ConfigError):
        space_from_dict({"choices": [{"name": "normadv", "values": []}]})
    with pytest.raises(ConfigError):
        space_from_dict({"choices": [{"name": "policyloss", "values": ["PG"],
                                      "sub": {"PPO": [{"name": "ppoepsilon", "values": [0.1]}]}}]})
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_space(p)
    with pytest.raises(ConfigError):
        preset("nonexistent")


def _tiny_space():
    return space_from_dict({"name": "t", "base": TINY_BASE,
                            "choices": [{"name": "policyloss", "values": ["PG", "PPO"]}]})


def test_run_study_records_and_median(tmp_path):
    path = tmp_path / "r.jsonl"
    recs = run_study(_tiny_space(), 1, 3, 128, path, eval_every=64, eval_episodes=2)
    assert len(recs) == 1 and len(recs[0].scores) == 3
    assert recs[0].median_score == float(np.median(recs[0].scores))
    assert len(read_lines(path)) == 3


def test_run_study_deterministic(tmp_path):
    a = run_study(_tiny_space(), 3, 1, 64, tmp_path / "a.jsonl", study_seed=9,
                  eval_every=64, eval_episodes=2)
    b = run_study(_tiny_space(), 3, 1, 64, tmp_path / "b.jsonl", study_seed=9,
                  eval_every=64, eval_episodes=2)
    assert [r.config for r in a] == [r.config for r in b]
    assert [r.scores for r in a] == [r.scores for r in b]


def test_run_study_resume(tmp_path):
    path = tmp_path / "r.jsonl"
    run_study(_tiny_space(), 2, 2, 64, path, eval_every=64, eval_episodes=2)
    lines = path.read_text().splitlines()
    # simulate a kill: drop the last record and leave a torn line
    path.write_text("\n".join(lines[:-1]) + "\n" + lines[-1][:20])
    calls = []
    run_study(_tiny_space(), 2, 2, 64, path, eval_every=64, eval_episodes=2,
              progress=calls.append)
    assert len(calls) == 1
    keys = [(d["config_index"], d["seed_index"]) for d in read_lines(path)]
    assert sorted(keys) == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_parallel_matches_serial(tmp_path):
    a = run_study(_tiny_space(), 2, 2, 64, tmp_path / "a.jsonl", eval_every=64, eval_episodes=2)
    b = run_study(_tiny_space(), 2, 2, 64, tmp_path / "b.jsonl", eval_every=64, eval_episodes=2,
                  workers=2)
    assert [r.scores for r in a] == [r.scores for r in b]


def test_invalid_configs_recorded_as_failed(tmp_path):
    space = space_from_dict({"base": TINY_BASE, "choices": [
        {"name": "initialstd", "values": [0.1]}, {"name": "minstd", "values": [0.1]}]})
    recs = run_study(space, 1, 2, 64, tmp_path / "r.jsonl", eval_every=64, eval_episodes=2)
    assert recs == []
    lines = read_lines(tmp_path / "r.jsonl")
    assert len(lines) == 2 and all(d["failed"] and d["score"] is None for d in lines)


def test_run_study_usage(tmp_path):
    with pytest.raises(UsageError):
        run_study(_tiny_space(), 0, 1, 64, tmp_path / "r.jsonl")


def test_load_records_filters_env(tmp_path):
    path = tmp_path / "r.jsonl"
    cfg = ChoiceConfig().active_dict()
    lines = [dict(study_seed=0, config_index=0, seed_index=s, env=e, config=cfg,
                  config_hash="h", score=float(s), failed=False) for s in range(3)
             for e in ("A", "B")]
    path.write_text("\n".join(json.dumps(d) for d in lines) + "\n")
    assert len(load_records(path)) == 2
    recs = load_records(path, env="A")
    assert len(recs) == 1 and recs[0].scores == [0.0, 1.0, 2.0] and recs[0].median_score == 1.0
