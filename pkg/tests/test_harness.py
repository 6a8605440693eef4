import csv
import io
import logging
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from lotad import cli
from lotad.envs import builtin_path
from lotad.harness import (
    ConfigError,
    ExperimentConfig,
    env_overrides,
    evaluate,
    read_config_file,
    replay,
    run,
    svg_line_chart,
    sweep_k,
    validate_decompositions,
)
from lotad.decomp import GenerationConstraints, parse_constraints
from lotad.rm import load_rm, parse_rm


def quick(tmp_path, **kw):
    args = dict(episodes=30, seeds=[0], output=str(tmp_path / "out")) | kw
    return ExperimentConfig(**args)


# configuration

def test_builtin_paths_filled():
    c = ExperimentConfig(env="repairs")
    assert c.map == builtin_path("repairs", "map")
    assert c.rm == builtin_path("repairs", "rm")
    c.validate()


def test_config_file_include_and_overrides(tmp_path):
    (tmp_path / "base.cfg").write_text("episodes = 50\nk: 3\nseeds = 1, 2\n")
    (tmp_path / "run.cfg").write_text("include: base.cfg\n# comment\nk = 5\noutput = o\n")
    assert read_config_file(tmp_path / "run.cfg") == {
        "episodes": "50", "k": "5", "seeds": "1, 2", "output": "o"}
    c = ExperimentConfig.from_file(tmp_path / "run.cfg",
                                   environ={"LOTAD_CFG_EPISODES": "7", "OTHER": "x"},
                                   overrides={"alpha": "0.5"})
    assert (c.episodes, c.k, c.seeds, c.alpha) == (7, 5, [1, 2], 0.5)
    assert c.output == str(tmp_path / "o")


def test_env_overrides():
    assert env_overrides({"LOTAD_CFG_MODE": "monolithic", "PATH": "/bin"}) == {"mode": "monolithic"}


def test_coercion_errors_all_reported():
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_mapping({"episodes": "many", "condition_on_overall": "perhaps",
                                       "nonsense": "1"})
    assert len(exc.value.errors) == 3


def test_validate_lists_every_problem(tmp_path):
    c = ExperimentConfig(mode="solo", k=0, alpha=2.0, gamma=1.0, seeds=[], epsilon=3.0,
                         rm=str(tmp_path / "missing.rm"))
    with pytest.raises(ConfigError) as exc:
        c.validate()
    text = " ".join(exc.value.errors)
    for word in ("mode", "k must", "alpha", "gamma", "seeds", "epsilon", "file not found"):
        assert word in text
    assert len(exc.value.errors) >= 7


def test_unknown_env_needs_files():
    with pytest.raises(ConfigError, match="not built in"):
        ExperimentConfig(env="mystery").validate()


def test_required_forbidden_overlap_is_config_error(tmp_path):
    cons = tmp_path / "c.constraints"
    cons.write_text("required 1: Y_B\nforbidden 1: Y_B\n")
    with pytest.raises(ConfigError, match="required and forbidden"):
        ExperimentConfig(constraints=str(cons)).load()


def test_map_overrides_applied():
    spec, _, cons = ExperimentConfig(slip_prob=0.0, max_steps=7, gamma=0.5, k=3).load()
    assert (spec.slip_prob, spec.max_steps, spec.gamma, cons.k) == (0.0, 7, 0.5, 3)


def test_to_text_round_trip(tmp_path):
    c = ExperimentConfig(seeds=[3, 4], gamma=0.9, condition_on_overall=False,
                         output=str(tmp_path / "o"))
    (tmp_path / "c.cfg").write_text(c.to_text())
    back = ExperimentConfig.from_file(tmp_path / "c.cfg", environ={})
    assert back == c


# runs

def test_empty_run(tmp_path):
    s = run(quick(tmp_path, seeds=[1], episodes=0))
    assert s.seeds == [1]
    assert s.mean_curve().size == 0
    assert "seed 1" in s.table()
    assert (tmp_path / "out" / "summary.txt").exists()


def test_run_outputs_are_byte_identical(tmp_path):
    a = run(quick(tmp_path, output=str(tmp_path / "a"), seeds=[0, 1]))
    b = run(quick(tmp_path, output=str(tmp_path / "b"), seeds=[0, 1]))
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    assert "seed_0_timing.csv" not in files
    for name in files:
        if name == "config.txt":
            continue   # records the output path
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    assert np.array_equal(a.curves(), b.curves())


def test_parallel_workers_match_serial(tmp_path):
    a = run(quick(tmp_path, output=str(tmp_path / "a"), seeds=[0, 1]))
    b = run(quick(tmp_path, output=str(tmp_path / "b"), seeds=[0, 1], workers=2))
    assert np.array_equal(a.curves(), b.curves())
    assert (tmp_path / "a" / "seed_1.csv").read_bytes() == (tmp_path / "b" / "seed_1.csv").read_bytes()


def test_timing_file_optional(tmp_path):
    run(quick(tmp_path, timing=True, episodes=3))
    lines = (tmp_path / "out" / "seed_0_timing.csv").read_text().splitlines()
    assert lines[0] == "episode,wall_ms" and len(lines) == 4


def test_monolithic_csv_rewards_identical(tmp_path):
    run(quick(tmp_path, mode="monolithic", episodes=200, epsilon=0.5))
    rows = list(csv.DictReader(open(tmp_path / "out" / "seed_0.csv")))
    assert len(rows) == 200
    assert all(r["sub_reward_1"] == r["sub_reward_2"] for r in rows)


def test_aggregate_and_svg(tmp_path):
    run(quick(tmp_path, seeds=[0, 1], episodes=10))
    agg = (tmp_path / "out" / "aggregate.csv").read_text().splitlines()
    assert agg[0].startswith("episode,best_mean")
    assert len(agg) == 11
    root = ET.fromstring((tmp_path / "out" / "curve.svg").read_text())
    assert root.tag.endswith("svg")


def test_svg_escapes_and_parses():
    svg = svg_line_chart({"a<b": ([1, 2, 3], [0.1, 0.5, 0.2])}, title="x & y")
    ET.fromstring(svg)
    ET.fromstring(svg_line_chart({}))


def test_sweep_k_nested(tmp_path):
    summaries = sweep_k(quick(tmp_path, episodes=5), [1, 3, 10])
    keys = [s.results[0].candidate_keys for s in summaries]
    assert [len(k) for k in keys] == [1, 3, 10]
    assert keys[0] == keys[1][:1] and keys[1] == keys[2][:3]
    table = (tmp_path / "out" / "sweep_k.csv").read_text().splitlines()
    assert len(table) == 4
    assert (tmp_path / "out" / "k_3" / "seed_0.csv").exists()
    ET.fromstring((tmp_path / "out" / "sweep_k.svg").read_text())


def test_sweep_k_rejects_bad_k(tmp_path):
    with pytest.raises(ConfigError):
        sweep_k(quick(tmp_path), [0])


def test_large_k_truncates_with_warning(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        s = run(quick(tmp_path, k=500, episodes=2), write=False)
    assert s.results[0].n_candidates < 500
    assert "valid decompositions exist" in caplog.text


# validation report

def test_validate_four_buttons():
    rm = load_rm(builtin_path("four_buttons", "rm"))
    buf = io.StringIO()
    reports = validate_decompositions(rm, GenerationConstraints(2), out=buf)
    assert len(reports) == 10
    assert all(r.valid and r.brute_force for r in reports)
    assert buf.getvalue().count("valid: yes") == 10


def test_validate_warns_when_unsatisfiable(caplog):
    rm = parse_rm("states: u-1 u0 u*\ninitial: u-1\ngoals: u*\nalphabet: a\ntrans: u-1 a u0\n")
    buf = io.StringIO()
    with caplog.at_level(logging.WARNING):
        validate_decompositions(rm, GenerationConstraints(1), out=buf)
    assert "task unsatisfiable by any trace" in caplog.text
    assert "task unsatisfiable by any trace" in buf.getvalue()


def test_validate_repairs_constraints():
    rm = load_rm(builtin_path("repairs", "rm"))
    cons = parse_constraints(open(builtin_path("repairs", "constraints")).read(), 3)
    reports = validate_decompositions(rm, cons)
    assert reports and all(r.valid for r in reports)


# frozen policies

def test_evaluate_and_replay(tmp_path):
    cfg = quick(tmp_path, episodes=50)
    run(cfg)
    policy = tmp_path / "out" / "seed_0_policy.npz"
    r = evaluate(cfg, policy, episodes=5, seed=1)
    assert r.episodes == 5 and 0.0 <= r.completion_rate <= 1.0
    assert evaluate(cfg, policy, episodes=5, seed=1) == r
    lines = replay(cfg, policy, seed=2, decomposition=1)
    assert lines[0].startswith("decomposition 1:")
    assert lines[-1].startswith("episode ")


def test_evaluate_rejects_mismatched_policy(tmp_path):
    cfg = quick(tmp_path, episodes=2)
    run(cfg)
    other = ExperimentConfig(env="coop_buttons")
    with pytest.raises(Exception):
        evaluate(other, tmp_path / "out" / "seed_0_policy.npz", episodes=1)


# command line

def test_cli_train(tmp_path, capsys):
    out = tmp_path / "cli"
    code = cli.main(["train", "--episodes", "3", "--seeds", "0", "--output", str(out)])
    assert code == 0
    assert "mean tail completion" in capsys.readouterr().out
    assert (out / "seed_0.csv").exists()


def test_cli_config_error(tmp_path, capsys):
    code = cli.main(["train", "--mode", "solo", "--k", "0", "--output", str(tmp_path)])
    assert code == 2
    err = capsys.readouterr().err
    assert err.count("config error") == 2


def test_cli_missing_config_file(tmp_path):
    assert cli.main(["validate", "--config", str(tmp_path / "nope.cfg")]) == 2


def test_cli_no_decomposition(tmp_path):
    cons = tmp_path / "c.constraints"
    cons.write_text("forbidden *: Y_B\n")
    assert cli.main(["validate", "--constraints", str(cons)]) == 3


def test_cli_validate_and_sweep(tmp_path, capsys):
    assert cli.main(["validate"]) == 0
    assert "10 candidate(s)" in capsys.readouterr().out
    assert cli.main(["sweep-k", "--k-values", "1,2", "--episodes", "2", "--seeds", "0",
                     "--output", str(tmp_path / "s")]) == 0
    assert cli.main(["sweep-k", "--k-values", "one", "--output", str(tmp_path / "s")]) == 2


def test_cli_eval_and_replay(tmp_path, capsys):
    out = tmp_path / "cli"
    cli.main(["train", "--episodes", "3", "--seeds", "0", "--output", str(out)])
    policy = str(out / "seed_0_policy.npz")
    assert cli.main(["eval", "--policy", policy, "--n", "2"]) == 0
    assert cli.main(["replay", "--policy", policy, "--max-steps", "5"]) == 0
    assert "episode" in capsys.readouterr().out
