import csv
import json
import time
from pathlib import Path

import pytest

from vechfl.cli import EXIT_COMPARE, main
from vechfl.config import SCHEDULERS, ConfigError, config_to_dict
from vechfl.harness import (COLUMNS, EXIT_CAP, EXIT_CONFIG, InstanceMismatch, compare, config_from_doc,
                            expand_schedulers, load_report)
from vechfl.instances import default_config

GOLDEN = Path(__file__).parent / "golden"
SMALL = {"generator": {"n_vehicles": 8, "seed": 3}}


def write_json(path, doc):
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


def run_cli(tmp_path, name, *extra, config=SMALL):
    cfg = write_json(tmp_path / f"{name}.json", config)
    out = tmp_path / name
    code = main(["run", "--config", cfg, "--out", str(out), *extra])
    return code, out


@pytest.fixture(scope="module")
def heart_runs(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("runs")
    a = run_cli(tmp, "a", "--scheduler", "heart", "--seed", "7")
    b = run_cli(tmp, "b", "--scheduler", "heart", "--seed", "7")
    return a, b


def run_is_byte_identical(dir_a, dir_b):
    names = sorted(p.name for p in Path(dir_a).iterdir())
    if names != sorted(p.name for p in Path(dir_b).iterdir()):
        return False
    return all((Path(dir_a) / n).read_bytes() == (Path(dir_b) / n).read_bytes() for n in names)


def test_golden_headers(heart_runs):
    (_, out), _ = heart_runs
    for name in COLUMNS:
        got = (out / name).read_text(encoding="utf-8").splitlines()[0] + "\n"
        assert got == (GOLDEN / f"{name}.header").read_text(encoding="utf-8"), name


def test_rows_carry_provenance(heart_runs):
    (code, out), _ = heart_runs
    assert code == 0
    doc = json.loads((out / "run.json").read_text())
    for name in COLUMNS:
        with open(out / name, newline="") as fh:
            for row in csv.DictReader(fh):
                assert row["schema_version"] == "1"
                assert row["config_hash"] == doc["config_hash"]
                assert row["seed"] == "7"


def test_same_seed_is_byte_identical(heart_runs):
    (_, a), (_, b) = heart_runs
    assert run_is_byte_identical(a, b)


def test_scheduler_all_one_row_each(tmp_path):
    code, out = run_cli(tmp_path, "all", "--scheduler", "all", config={"generator": {"n_vehicles": 6, "seed": 1}})
    assert code == 0
    with open(out / "makespan.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["scheduler"] for r in rows] == list(SCHEDULERS)


def test_compare_self_is_zero_delta(heart_runs):
    (_, a), _ = heart_runs
    rows = compare([a, a])
    assert rows
    for r in rows:
        assert r["mean_delta"] == 0.0 and r["median_delta"] == 0.0
        assert r["win_rate"] == 0.5


def test_compare_needs_two_reports(heart_runs, capsys):
    (_, a), _ = heart_runs
    with pytest.raises(ValueError):
        compare([a])
    assert main(["compare", str(a)]) == EXIT_COMPARE


def test_compare_rejects_other_instances(heart_runs, tmp_path):
    (_, a), _ = heart_runs
    _, other = run_cli(tmp_path, "other", "--scheduler", "heart", "--seed", "8")
    with pytest.raises(InstanceMismatch):
        compare([a, other])


def test_compare_pairs_single_scheduler_reports(heart_runs, tmp_path):
    (_, a), _ = heart_runs
    _, tsso = run_cli(tmp_path, "tsso", "--scheduler", "tsso", "--seed", "7")
    rows = compare([a, tsso])
    ref = load_report(a)
    oth = load_report(tsso)
    (ka,), (kb,) = ref, oth
    tt = [r for r in rows if r["metric"] == "time_to_target"][0]
    assert tt["pairs"] == 1
    assert tt["mean_delta"] == pytest.approx(oth[kb]["time_to_target"] - ref[ka]["time_to_target"])


def test_bad_config_exit_code(tmp_path, capsys):
    bad = write_json(tmp_path / "bad.json", {"generator": {"n_vehicles": 5, "colour": "red"}})
    assert main(["run", "--config", bad, "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["run", "--out", str(tmp_path / "x"), "--scheduler", "nope"]) == EXIT_CONFIG
    assert main(["run", "--out", str(tmp_path / "x"), "--seed", "-1"]) == EXIT_CONFIG
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    assert main(["run", "--config", str(broken), "--out", str(tmp_path / "x")]) == EXIT_CONFIG


def test_iteration_cap_exit_code_keeps_outputs(tmp_path):
    doc = {"generator": {"n_vehicles": 6, "sim": {"stop_rule": "target", "max_rounds": 1}}}
    code, out = run_cli(tmp_path, "cap", "--scheduler", "tsso", config=doc)
    assert code == EXIT_CAP
    assert (out / "run.json").exists() and (out / "makespan.csv").exists()
    assert json.loads((out / "run.json").read_text())["exit_code"] == EXIT_CAP


def test_generator_and_full_config_agree():
    cfg = config_from_doc({"generator": {"n_vehicles": 6, "seed": 2}})
    assert cfg == default_config(2, n_vehicles=6)
    full = config_from_doc(json.loads(json.dumps(config_to_dict(cfg))))
    assert full == cfg
    assert config_from_doc({"generator": {}}, seed=4, n_tasks=9).seed == 4
    with pytest.raises(ConfigError):
        config_from_doc(config_to_dict(cfg), n_vehicles=7)
    with pytest.raises(ConfigError):
        config_from_doc({"generator": {"n_vehicles": -1}})


def test_expand_schedulers():
    assert expand_schedulers("all") == list(SCHEDULERS)
    assert expand_schedulers("tsso, heart") == ["tsso", "heart"]
    with pytest.raises(ConfigError):
        expand_schedulers("heart,bogus")


def test_events_file(tmp_path):
    code, out = run_cli(tmp_path, "ev", "--scheduler", "tsgd", "--events",
                        config={"generator": {"n_vehicles": 5, "sim": {"stop_rule": "target", "max_rounds": 2}}})
    lines = (out / "events.jsonl").read_text().splitlines()
    assert lines and all(json.loads(x)["scheduler"] == "tsgd" for x in lines)


@pytest.mark.slow
def test_default_config_under_a_minute(tmp_path):
    start = time.perf_counter()
    code = main(["run", "--out", str(tmp_path / "d"), "--scheduler", "heart"])
    assert code in (0, EXIT_CAP)
    assert time.perf_counter() - start < 60
