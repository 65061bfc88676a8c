from __future__ import annotations

import json
import logging
import shutil
import subprocess

import jsonschema
import pytest
from hypothesis import given, strategies as st

from xchain import cli
from xchain.harness import (
    ScenarioFileError,
    bundled_scenarios,
    canonical_json,
    configure_logging,
    load_scenario,
    load_scenario_obj,
    read_scenario_text,
    run_seeds,
    scenario_digest,
    validate_record,
)


def raw(name="fig4_ac3wn"):
    return json.loads(read_scenario_text(name))


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestScenarioFiles:
    @pytest.mark.parametrize("name", bundled_scenarios())
    def test_bundled_scenarios_load(self, name):
        loaded = load_scenario(name)
        assert loaded.digest == scenario_digest(loaded.raw)

    def test_unknown_key_is_named(self):
        obj = raw()
        obj["bogus"] = 1
        with pytest.raises(ScenarioFileError) as info:
            load_scenario_obj(obj)
        assert info.value.key == "bogus"

    def test_missing_key_is_named(self):
        obj = raw()
        del obj["delta_ticks"]
        with pytest.raises(ScenarioFileError) as info:
            load_scenario_obj(obj)
        assert info.value.key == "delta_ticks"

    def test_nested_unknown_key(self):
        obj = raw()
        obj["chains"][0]["colour"] = "red"
        with pytest.raises(ScenarioFileError) as info:
            load_scenario_obj(obj)
        assert info.value.key == "chains/0/colour"

    def test_seeds_and_range_are_exclusive(self):
        obj = raw()
        obj["seeds"], obj["seed_range"] = [1], [0, 2]
        with pytest.raises(ScenarioFileError):
            load_scenario_obj(obj)

    def test_semantic_errors_surface(self):
        obj = raw()
        obj["delta_ticks"] = 2
        with pytest.raises(ScenarioFileError, match="delta"):
            load_scenario_obj(obj)
        obj = raw("cyclic_ac3wn")
        obj["witness_chain"] = "nowhere"
        with pytest.raises(ScenarioFileError):
            load_scenario_obj(obj)

    def test_fraction_fork_probability(self):
        obj = raw("fork_safety_eps010")
        obj["chains"][0]["fork_probability"] = "1/10"
        assert load_scenario_obj(obj).scenario.chains[0].fork_probability == pytest.approx(0.1)

    def test_file_path(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps(raw()))
        assert load_scenario(p).digest == load_scenario("fig4_ac3wn").digest

    @given(st.dictionaries(st.text(min_size=1, max_size=5), st.integers(), max_size=4))
    def test_digest_ignores_key_order(self, d):
        flipped = dict(reversed(list(d.items())))
        assert scenario_digest(d) == scenario_digest(flipped)


class TestRecords:
    def test_records_validate(self):
        loaded = load_scenario("fig4_ac3wn")
        for rec in run_seeds(loaded, [0, 1]):
            validate_record(json.loads(rec.line()))

    def test_bad_record_rejected(self):
        rec = json.loads(run_seeds(load_scenario("fig4_ac3tw"), [0])[0].line())
        rec["outcome"]["witness_state"] = "maybe"
        with pytest.raises(jsonschema.ValidationError):
            validate_record(rec)

    def test_parallel_keeps_seed_order(self):
        loaded = load_scenario("fork_safety_eps030")
        seeds = [9, 3, 7, 1, 5]
        serial = [r.line() for r in run_seeds(loaded, seeds)]
        parallel = [r.line() for r in run_seeds(loaded, seeds, jobs=2)]
        assert parallel == serial
        assert [json.loads(x)["seed"] for x in serial] == seeds

    def test_timing_only_on_request(self):
        loaded = load_scenario("fig4_ac3tw")
        assert "wall_time_ms" not in run_seeds(loaded, [0])[0].to_json()
        assert "wall_time_ms" in run_seeds(loaded, [0], timing=True)[0].to_json()


class TestRunCommand:
    def test_safe_run(self, capsys):
        code, out, _ = run_cli(capsys, "run", "fig4_ac3wn")
        rec = json.loads(out)
        assert code == 0
        assert rec["outcome"]["verdict"]["kind"] == "AllRedeemed"
        assert rec["outcome"]["latency"] == 4

    def test_replay_is_byte_identical(self, capsys):
        first = run_cli(capsys, "run", "fork_safety_eps030", "--seed", "17")
        second = run_cli(capsys, "run", "fork_safety_eps030", "--seed", "17")
        assert first == second

    def test_violation_exits_one(self, capsys):
        code, out, _ = run_cli(capsys, "run", "fig4_baseline_crash")
        assert code == 1
        assert json.loads(out)["outcome"]["verdict"]["kind"] == "AtomicityViolated"

    def test_stuck_policy(self, tmp_path, capsys):
        obj = raw()
        obj["horizon_ticks"] = 10
        p = tmp_path / "short.json"
        p.write_text(json.dumps(obj))
        assert run_cli(capsys, "run", str(p))[0] == 1
        assert run_cli(capsys, "run", str(p), "--allow-stuck")[0] == 0

    def test_inapplicable_baseline(self, capsys):
        code, _, err = run_cli(capsys, "run", "cyclic_baseline")
        assert code == 2 and "cyclic_all_leaders" in err

    @pytest.mark.parametrize("argv", [
        ["run", "no_such_scenario"], ["run"], ["frobnicate"], ["analyze", "latency", "--diam", "1..3"],
    ])
    def test_usage_errors(self, capsys, argv):
        assert run_cli(capsys, *argv)[0] == 2

    def test_schema_error_names_key(self, tmp_path, capsys):
        obj = raw()
        obj["bogus"] = True
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(obj))
        code, _, err = run_cli(capsys, "run", str(p))
        assert code == 2 and "'bogus'" in err

    def test_summary(self, capsys):
        _, _, err = run_cli(capsys, "run", "fig4_ac3wn", "--summary")
        assert "1 runs: AllRedeemed=1" in err


class TestOtherCommands:
    def test_interleave(self, capsys):
        code, out, _ = run_cli(capsys, "interleave", "interleave_2edge_ac3wn")
        rep = json.loads(out)
        assert code == 0 and rep["schedules"] == 104
        assert rep["scenario"] == load_scenario("interleave_2edge_ac3wn").digest

    def test_interleave_baseline_reports_violation(self, capsys):
        code, out, _ = run_cli(capsys, "interleave", "interleave_2edge_baseline")
        assert code == 0 and json.loads(out)["violations"] == 1

    def test_interleave_bound(self, capsys):
        assert run_cli(capsys, "interleave", "interleave_2edge_ac3wn", "--max-schedules", "10")[0] == 2

    def test_analyze_latency(self, capsys):
        _, out, _ = run_cli(capsys, "analyze", "latency", "--diam", "2..4")
        assert out.splitlines()[1:] == ["2,4,4", "3,6,4", "4,8,4"]

    def test_analyze_fees(self, capsys):
        _, out, _ = run_cli(capsys, "analyze", "fees", "--n", "1", "4")
        rows = [json.loads(x) for x in out.splitlines()]
        assert [r["overhead"] for r in rows] == [1, "1/4"]

    def test_analyze_throughput(self, capsys):
        assert run_cli(capsys, "analyze", "throughput", "--chains", "btc,eth")[1].strip() == "7"
        assert run_cli(capsys, "analyze", "throughput", "--chains", "eth", "--witness", "eth")[1].strip() == "25"
        assert run_cli(capsys, "analyze", "throughput", "--chains", "doge")[0] == 2

    def test_analyze_depth(self, capsys):
        code, out, _ = run_cli(capsys, "analyze", "depth", "--va", "1000000", "--ch", "300000", "--dh", "6")
        assert code == 0 and out.strip() == "21"

    def test_export_chain(self, capsys):
        code, out, _ = run_cli(capsys, "export-chain", "fig4_ac3wn", "witness")
        tree = json.loads(out)
        assert code == 0 and tree["height"] == max(b["height"] for b in tree["blocks"])
        assert run_cli(capsys, "export-chain", "fig4_ac3wn", "dogecoin")[0] == 2

    @pytest.mark.skipif(shutil.which("xchain") is None, reason="console script not installed")
    def test_console_script(self):
        proc = subprocess.run(["xchain", "analyze", "depth", "--va", "10", "--ch", "1", "--dh", "1"],
                              capture_output=True, text=True, check=False)
        assert proc.returncode == 0 and proc.stdout.strip() == "11"


class TestLogging:
    @pytest.mark.parametrize("value,level", [("info", logging.INFO), ("trace", logging.DEBUG)])
    def test_env_levels(self, value, level):
        configure_logging({"XCHAIN_LOG": value})
        assert logging.getLogger("xchain").level == level
        configure_logging({})
        assert logging.getLogger("xchain").level > logging.CRITICAL

    def test_canonical_json(self):
        assert canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'
