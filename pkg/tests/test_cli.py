"""End-to-end CLI behavior over the staged workspace."""
import json
import shutil

import pytest

from adxmeter.cli import main

STAGE_FILES = {
    "parse": ["log.jsonl", "matrix.jsonl", "matrix.csv", "skips.jsonl", "meta.json"],
    "intersect": ["pages.txt", "meta.json"],
    "classify": ["corpus.jsonl", "clusters.jsonl", "silhouette.csv", "meta.json"],
    "persona": ["personas.jsonl", "schedule.jsonl", "meta.json"],
    "run": ["visits.jsonl", "observations.jsonl", "transcript.jsonl",
            "sim_events.jsonl", "fixtures.json", "run_meta.json"],
    "identify": ["labels.jsonl", "meta.json"],
    "score": ["scores.csv", "scores_detail.jsonl", "shares.jsonl", "meta.json"],
    "report": ["scores.csv", "shares.csv", "index.json"],
}


def _read_json(path):
    return json.loads(path.read_text(encoding="utf-8"))


def test_simulate_builds_every_stage(demo_run):
    ws = demo_run["workspace"]
    for stage, files in STAGE_FILES.items():
        for name in files + ["manifest.json"]:
            assert (ws / stage / name).exists(), f"{stage}/{name}"
    run_meta = _read_json(ws / "run" / "run_meta.json")
    assert run_meta["horizon_days"] == 10
    assert run_meta["platforms"] == ["google", "baidu"]
    assert run_meta["reader_jar"] == "jar-reader"


def test_classify_recovers_planted_categories(demo_run):
    meta = _read_json(demo_run["workspace"] / "classify" / "meta.json")
    assert meta["k"] == 6
    assert sorted(meta["labels"].values()) == sorted(
        ["金融", "教育", "体育", "计算/技术", "旅游", "新闻"]
    )
    # single-exchange groups (shop/cars/fun/entech) fall out at intersect
    assert meta["documents"] == 54
    assert meta["dropped_language"] == []


def test_scores_csv_shape(demo_run):
    lines = (demo_run["workspace"] / "score" / "scores.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "persona,platform,day,ttk,bailp"
    body = [line.split(",") for line in lines[1:]]
    assert len(body) == 2 * 2 * 10  # personas x platforms x days
    for persona, platform, day, ttk_cell, bailp_cell in body:
        assert persona in ("金融", "blank")
        assert platform in ("google", "baidu")
        assert 1 <= int(day) <= 10
        if persona == "blank":
            assert ttk_cell == ""  # no training set, no ttk
        else:
            assert 0.0 <= float(ttk_cell) <= 1.0
        assert 0.0 <= float(bailp_cell) <= 1.0


def test_identify_resolves_every_observation(demo_run):
    meta = _read_json(demo_run["workspace"] / "identify" / "meta.json")
    assert set(meta["methods"]) <= {"TITLE", "PRODUCT_DETAIL", "IMAGE"}
    assert sum(meta["methods"].values()) == meta["labels"]


def test_rerun_skips_unchanged_stages(demo_run, capsys):
    ws = demo_run["workspace"]
    before = (ws / "score" / "scores.csv").read_bytes()
    assert main(["simulate", "-w", str(ws)]) == 0
    out = capsys.readouterr().out
    assert out.count("up to date") == 8
    assert "scores:" in out
    assert (ws / "score" / "scores.csv").read_bytes() == before


def test_fresh_workspace_reproduces_bytes(demo_run, tmp_path):
    ws = tmp_path / "ws2"
    assert main(["simulate", "-w", str(ws)]) == 0
    for rel in ("score/scores.csv", "score/scores_detail.jsonl", "report/index.json"):
        a = (demo_run["workspace"] / rel).read_bytes()
        b = (ws / rel).read_bytes()
        assert a == b, rel


def test_force_rebuilds_to_identical_output(demo_run, tmp_path, capsys):
    ws = tmp_path / "ws3"
    shutil.copytree(demo_run["workspace"], ws)
    before = (ws / "score" / "scores.csv").read_bytes()
    assert main(["score", "-w", str(ws), "--force"]) == 0
    assert "built" in capsys.readouterr().out
    assert (ws / "score" / "scores.csv").read_bytes() == before


def test_score_cumulative_rebuilds_on_param_change(demo_run, tmp_path):
    ws = tmp_path / "ws4"
    shutil.copytree(demo_run["workspace"], ws)
    assert main(["score", "-w", str(ws), "--cumulative"]) == 0
    meta = _read_json(ws / "score" / "meta.json")
    assert meta["cumulative"] is True
    lines = (ws / "score" / "scores.csv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 1 + 40


def test_usage_errors_exit_1(capsys):
    assert main([]) == 1
    assert main(["nosuch-command"]) == 1
    assert main(["parse", "--mode", "sim"]) == 1  # sim without --scenario
    assert main(["parse", "--mode", "live", "--scenario", "x.json"]) == 1
    assert main(["parse"]) == 1  # live without --log
    err = capsys.readouterr().err
    assert "usage error" in err


def test_missing_stage_inputs_exit_2(tmp_path, capsys):
    assert main(["score", "-w", str(tmp_path / "empty")]) == 2
    err = capsys.readouterr().err
    assert "input error" in err and "persona" in err


def test_intersect_unknown_platform_exit_2(tmp_path, demo_scenario, capsys):
    ws = str(tmp_path / "ws")
    assert main(["parse", "-w", ws, "--mode", "sim", "--scenario", str(demo_scenario)]) == 0
    assert main(["intersect", "-w", ws, "--platforms", "google", "nosuch"]) == 2
    assert "nosuch" in capsys.readouterr().err


def test_failed_stage_leaves_no_partial_directory(tmp_path, demo_scenario, capsys):
    ws = tmp_path / "ws"
    args = ["-w", str(ws), "--mode", "sim", "--scenario", str(demo_scenario)]
    assert main(["parse"] + args) == 0
    assert main(["intersect", "-w", str(ws), "--platforms", "google", "baidu"]) == 0
    # an impossible language threshold drops every page -> stage failure
    assert main(["classify"] + args + ["--min-cjk-ratio", "1.5"]) == 3
    assert "stage failed" in capsys.readouterr().err
    assert not (ws / "classify").exists()
    assert not list(ws.glob(".classify.building"))
    # and the stage can be built afterwards with sane parameters
    assert main(["classify"] + args) == 0
    assert (ws / "classify" / "clusters.jsonl").exists()


def test_granular_pipeline_matches_simulate(tmp_path, demo_run, demo_scenario):
    ws = str(tmp_path / "ws")
    args = ["-w", ws, "--mode", "sim", "--scenario", str(demo_scenario)]
    assert main(["parse"] + args) == 0
    assert main(["intersect", "-w", ws, "--platforms", "google", "baidu"]) == 0
    assert main(["classify"] + args) == 0
    assert main(["persona"] + args) == 0
    assert main(["run"] + args) == 0
    assert main(["identify"] + args) == 0
    assert main(["score", "-w", ws]) == 0
    assert main(["report", "-w", ws]) == 0
    a = (demo_run["workspace"] / "score" / "scores.csv").read_bytes()
    b = (tmp_path / "ws" / "score" / "scores.csv").read_bytes()
    assert a == b


def test_help_exits_via_argparse():
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
