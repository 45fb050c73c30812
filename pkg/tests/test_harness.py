"""Experiment harness: config validation, fingerprints, grid runs, reruns."""

import json
import sys
import textwrap

import pytest

from cdkit import (
    CdSample,
    ConfigurationError,
    Greedy,
    Sample,
    UsageError,
    arithmetic_vocabulary,
    build_resources,
    build_scorers,
    cell_seed,
    load_config,
    parse_config,
    run_experiment,
    strategy_for,
)
from cdkit.decoding import CdGreedy


def base_config(**overrides):
    config = {
        "schema_version": 1,
        "seed": 5,
        "output": "res.jsonl",
        "dataset": {"generator": "arithmetic", "size": 3, "seed": 10, "shots": 2},
        "scorers": {
            "expert": {
                "kind": "ngram", "order": 3, "smoothing_k": 0.001,
                "train": {"generator": "arithmetic", "size": 80, "seed": 10},
            },
            "amateur": {
                "kind": "ngram", "order": 1, "smoothing_k": 0.5,
                "train": {"generator": "arithmetic", "size": 80, "seed": 10, "corruption": 0.9},
            },
        },
        "grid": {"methods": ["greedy", "cd_greedy"], "betas": [0.5], "ks": [1, 2]},
        "decode": {"max_new_tokens": 10, "temperature": 0.7},
    }
    config.update(overrides)
    return config


def write_config(tmp_path, config, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(config))
    return path


class TestParseConfig:
    def test_minimal_valid(self):
        config = parse_config(base_config())
        assert config.seed == 5
        assert config.dataset.size == 3 and config.dataset.shots == 2
        assert config.methods == ("greedy", "cd_greedy")
        assert config.betas == (0.5,) and config.ks == (1, 2)
        assert config.cd.alpha == 0.1 and config.cd.beta == 0.5

    def test_defaults(self):
        raw = base_config()
        del raw["decode"]
        del raw["dataset"]["shots"]
        config = parse_config(raw)
        assert config.max_new_tokens == 12
        assert config.temperature == 0.7
        assert config.dataset.shots == 8
        assert config.dataset.shot_seed == raw["dataset"]["seed"] + 1
        assert config.pattern.kind == "last-number"

    def test_unknown_root_key(self):
        with pytest.raises(ConfigurationError, match=r"config.*toppings"):
            parse_config(base_config(toppings=1))

    def test_unknown_nested_key(self):
        raw = base_config()
        raw["dataset"]["corruption"] = 0.5  # eval sets are always clean
        with pytest.raises(ConfigurationError, match=r"config\.dataset"):
            parse_config(raw)

    def test_alpha_out_of_range_names_the_field(self):
        raw = base_config(cd={"alpha": 1.5})
        with pytest.raises(ConfigurationError, match="alpha"):
            parse_config(raw)

    def test_missing_required_key(self):
        raw = base_config()
        del raw["scorers"]
        with pytest.raises(ConfigurationError, match=r"config\.scorers"):
            parse_config(raw)

    def test_needs_amateur_or_negative_prefix(self):
        raw = base_config()
        del raw["scorers"]["amateur"]
        with pytest.raises(ConfigurationError, match="amateur"):
            parse_config(raw)
        raw["scorers"]["negative_prefix"] = "0 - 0 = 1\n"
        config = parse_config(raw)
        assert config.amateur_spec is None
        assert config.negative_prefix == "0 - 0 = 1\n"

    def test_grid_validation(self):
        raw = base_config(grid={"methods": ["beam"], "betas": [0.5], "ks": [1]})
        with pytest.raises(ConfigurationError, match=r"methods\[0\]"):
            parse_config(raw)
        raw = base_config(grid={"methods": ["greedy"], "betas": [-1.0], "ks": [1]})
        with pytest.raises(ConfigurationError, match=r"betas\[0\]"):
            parse_config(raw)
        raw = base_config(grid={"methods": ["greedy"], "betas": [0.5], "ks": [0]})
        with pytest.raises(ConfigurationError, match=r"ks\[0\]"):
            parse_config(raw)
        raw = base_config(grid={"methods": [], "betas": [0.5], "ks": [1]})
        with pytest.raises(ConfigurationError, match="methods"):
            parse_config(raw)

    def test_schema_version_checked(self):
        with pytest.raises(ConfigurationError, match="schema_version"):
            parse_config(base_config(schema_version=2))

    def test_type_errors_carry_paths(self):
        with pytest.raises(ConfigurationError, match=r"config\.seed"):
            parse_config(base_config(seed="five"))
        raw = base_config()
        raw["scorers"]["expert"]["order"] = "three"
        with pytest.raises(ConfigurationError, match=r"config\.scorers\.expert\.order"):
            parse_config(raw)

    def test_unknown_scorer_kind(self):
        raw = base_config()
        raw["scorers"]["expert"] = {"kind": "transformer"}
        with pytest.raises(ConfigurationError, match="kind"):
            parse_config(raw)

    def test_load_config_resolves_output_relative_to_file(self, tmp_path):
        path = write_config(tmp_path, base_config())
        config = load_config(path)
        assert config.output == str(tmp_path / "res.jsonl")
        # the fingerprint, though, is computed over the raw value
        assert config.resolved["output"] == "res.jsonl"


class TestFingerprint:
    def test_stable_across_parses_and_key_order(self):
        a = parse_config(base_config())
        shuffled = dict(reversed(list(base_config().items())))
        b = parse_config(shuffled)
        assert a.fingerprint == b.fingerprint

    def test_implicit_defaults_hash_like_explicit(self):
        raw = base_config()
        implicit = parse_config(raw)
        raw["dataset"]["shot_seed"] = raw["dataset"]["seed"] + 1
        explicit = parse_config(raw)
        assert implicit.fingerprint == explicit.fingerprint

    @pytest.mark.parametrize("mutate", [
        lambda c: c.update(seed=6),
        lambda c: c.update(output="other.jsonl"),
        lambda c: c["dataset"].update(size=4),
        lambda c: c["grid"].update(ks=[1, 2, 3]),
        lambda c: c["scorers"]["amateur"]["train"].update(corruption=0.8),
        lambda c: c.update(cd={"alpha": 0.2}),
    ])
    def test_any_field_change_changes_fingerprint(self, mutate):
        base = parse_config(base_config())
        changed = base_config()
        mutate(changed)
        assert parse_config(changed).fingerprint != base.fingerprint


class TestCellSeed:
    def test_deterministic_and_distinct(self):
        seeds = {
            cell_seed(5, method, beta, k)
            for method in ("greedy", "sample", "cd_sample")
            for beta in (0.0, 0.25, 0.5)
            for k in (1, 5, 10)
        }
        assert len(seeds) == 27
        assert all(0 <= s < 2 ** 64 for s in seeds)
        assert cell_seed(5, "sample", 0.5, 1) == cell_seed(5, "sample", 0.5, 1)

    def test_integer_and_float_betas_agree(self):
        assert cell_seed(5, "cd_sample", 0, 1) == cell_seed(5, "cd_sample", 0.0, 1)

    def test_master_seed_matters(self):
        assert cell_seed(5, "sample", 0.5, 1) != cell_seed(6, "sample", 0.5, 1)


class TestStrategyFor:
    def test_mapping(self):
        config = parse_config(base_config())
        assert isinstance(strategy_for(config, "greedy", 0.5), Greedy)
        sample = strategy_for(config, "sample", 0.5)
        assert isinstance(sample, Sample) and sample.temperature == 0.7
        mask_only = strategy_for(config, "mask_only", 0.75)
        assert isinstance(mask_only, CdSample) and mask_only.cfg.beta == 0.0
        assert mask_only.remask
        cd_greedy = strategy_for(config, "cd_greedy", 0.75)
        assert isinstance(cd_greedy, CdGreedy) and cd_greedy.cfg.beta == 0.75
        cd_sample = strategy_for(config, "cd_sample", 0.25)
        assert isinstance(cd_sample, CdSample) and cd_sample.cfg.beta == 0.25


class TestResources:
    def test_prompts_and_stop_tokens(self):
        config = parse_config(base_config())
        resources = build_resources(config)
        vocab = arithmetic_vocabulary()
        assert len(resources.prompts) == 3 and len(resources.golds) == 3
        for prompt, problem in zip(resources.prompts, resources.problems):
            text = vocab.decode(prompt.ids)
            lines = text.split("\n")
            assert len(lines) == 3  # 2 shots + stem
            assert lines[-1] == problem.expression
            assert problem.expression not in lines[:-1]
        assert vocab.token_to_id("\n") in resources.stop
        assert vocab.eos_id in resources.stop

    def test_negative_prefix_wraps_expert_when_no_amateur(self):
        raw = base_config()
        del raw["scorers"]["amateur"]
        raw["scorers"]["negative_prefix"] = "1 - 1 = 3\n"
        _, expert, amateur = build_scorers(parse_config(raw))
        assert amateur is not expert
        assert amateur.descriptor.kind == "prefix-wrapped"


def rows_by_key(rows):
    return {(r["method"], r["beta"], r["k"], r["metric"]): r["value"] for r in rows}


class TestRunExperiment:
    def test_grid_rows_in_order(self, tmp_path):
        path = write_config(tmp_path, base_config())
        rows = run_experiment(path)
        assert len(rows) == 2 * 1 * 2 * 3  # methods x betas x ks x metrics
        keys = [(r["method"], r["k"], r["metric"]) for r in rows]
        expected = [
            (method, k, metric)
            for method in ("greedy", "cd_greedy")
            for k in (1, 2)
            for metric in ("accuracy", "parseable_fraction", "mean_chars")
        ]
        assert keys == expected
        for row in rows:
            assert row["status"] == "ok" and row["error"] is None
            assert row["schema_version"] == 1
            assert isinstance(row["value"], float)
            assert row["rerun"] == 0
        written = (tmp_path / "res.jsonl").read_text().splitlines()
        assert len(written) == len(rows)

    def test_rerun_appends_identical_values(self, tmp_path):
        path = write_config(tmp_path, base_config())
        first = run_experiment(path)
        second = run_experiment(path)
        assert {r["rerun"] for r in first} == {0}
        assert {r["rerun"] for r in second} == {1}
        assert rows_by_key(first) == rows_by_key(second)
        lines = (tmp_path / "res.jsonl").read_text().splitlines()
        assert len(lines) == len(first) + len(second)
        # append-only: the first run's rows are still the first lines
        for line, row in zip(lines, first):
            assert json.loads(line)["value"] == row["value"]

    def test_jobs_do_not_change_values(self, tmp_path):
        path = write_config(tmp_path, base_config())
        serial = run_experiment(path, jobs=1, output=tmp_path / "serial.jsonl")
        threaded = run_experiment(path, jobs=4, output=tmp_path / "threaded.jsonl")
        assert rows_by_key(serial) == rows_by_key(threaded)
        assert serial[0]["fingerprint"] == threaded[0]["fingerprint"]

    def test_beta_zero_cd_matches_greedy(self, tmp_path):
        raw = base_config(grid={"methods": ["greedy", "cd_greedy"], "betas": [0.0], "ks": [1]})
        path = write_config(tmp_path, raw)
        values = rows_by_key(run_experiment(path))
        for metric in ("accuracy", "parseable_fraction", "mean_chars"):
            assert values[("greedy", 0.0, 1, metric)] == values[("cd_greedy", 0.0, 1, metric)]

    def test_adapter_death_fails_only_its_cells(self, tmp_path):
        adapter = tmp_path / "dying_adapter.py"
        adapter.write_text(textwrap.dedent("""\
            import sys
            print("VOCAB 17 arithmetic-char-v1", flush=True)
            sys.stdin.readline()
            sys.exit(1)
        """))
        raw = base_config(grid={"methods": ["greedy", "cd_greedy"], "betas": [0.5], "ks": [1]})
        raw["scorers"]["amateur"] = {
            "kind": "external",
            "command": f"{sys.executable} {adapter}",
            "parameter_count": 1.5,
        }
        path = write_config(tmp_path, raw)
        rows = run_experiment(path)
        by_method = {}
        for row in rows:
            by_method.setdefault(row["method"], []).append(row)
        assert all(r["status"] == "ok" for r in by_method["greedy"])
        assert all(r["status"] == "failed" for r in by_method["cd_greedy"])
        assert all(r["value"] is None for r in by_method["cd_greedy"])
        assert any("adapter" in (r["error"] or "") for r in by_method["cd_greedy"])

    def test_requires_output_path(self, tmp_path):
        raw = base_config()
        del raw["output"]
        path = write_config(tmp_path, raw)
        with pytest.raises(UsageError, match="output"):
            run_experiment(path)

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(UsageError):
            run_experiment(tmp_path / "nope.json")

    def test_jobs_validation(self, tmp_path):
        path = write_config(tmp_path, base_config())
        with pytest.raises(UsageError):
            run_experiment(path, jobs=0)
