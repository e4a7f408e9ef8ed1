from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from mecd.cli import EXIT_INVALID, EXIT_OK, main
from mecd.dataio import write_dataset_file
from mecd.memory import MemoryPolicy
from mecd.synthetic import generate_stream, orthogonal_class_specs

from conftest import tiny_stream


@pytest.fixture(scope="module")
def synth_dataset(tmp_path_factory):
    specs = orthogonal_class_specs(
        ["bolt", "gear", "washer"],
        dimension=8,
        n_train=6,
        n_test_normal=5,
        n_test_anomalous=5,
        grid=(3, 4),
    )
    path = tmp_path_factory.mktemp("data") / "synth.mecd"
    write_dataset_file(generate_stream(specs, seed=21), path)
    return path


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "engine.ini"
    path.write_text(
        "[router]\n"
        "num_experts = 3\n"
        "[memory]\n"
        "per_class_budget = 40\n"
        "per_expert_budget = 240\n"
        "[run]\n"
        "seed = 7\n"
    )
    return path


def test_validate_ok(synth_dataset, capsys):
    assert main(["validate", str(synth_dataset)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "dimension: 8" in out
    for name in ("bolt", "gear", "washer"):
        assert name in out
    assert "ok" in out


def test_validate_truncated(synth_dataset, tmp_path, capsys):
    broken = tmp_path / "broken.mecd"
    broken.write_bytes(synth_dataset.read_bytes()[:-9])
    assert main(["validate", str(broken)]) == EXIT_INVALID
    assert "truncated payload at byte" in capsys.readouterr().err


def test_validate_anomalous_train_label(tmp_path, capsys):
    stream = tiny_stream()
    path = tmp_path / "bad.mecd"
    write_dataset_file(stream, path)
    data = bytearray(path.read_bytes())
    name_len = len(stream.classes[0].name.encode())
    id_len = len(stream.classes[0].train[0].image_id.encode())
    data[16 + 4 + name_len + 8 + 4 + id_len] = 1
    path.write_bytes(bytes(data))
    assert main(["validate", str(path)]) == EXIT_INVALID
    err = capsys.readouterr().err
    assert "alpha" in err and "train" in err


def test_validate_missing_file(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "absent.mecd")]) == EXIT_INVALID


def run_dir_files(out):
    return {p.name for p in out.iterdir()}


def test_run_writes_all_artifacts(synth_dataset, config_file, tmp_path, capsys):
    out = tmp_path / "run1"
    assert (
        main(["run", str(synth_dataset), "--config", str(config_file), "--out", str(out)])
        == EXIT_OK
    )
    files = run_dir_files(out)
    for required in (
        "manifest.json",
        "ledger.csv",
        "assignments.csv",
        "expert_evolution.csv",
        "report.json",
        "experts",
        "per_class_final_auroc.png",
        "expert_auroc_evolution.png",
        "expert_forgetting_evolution.png",
    ):
        assert required in files, required

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["router"]["num_experts"] == 3
    assert manifest["config"]["run"]["seed"] == 7
    assert manifest["engine_version"]

    report = json.loads((out / "report.json").read_text())
    assert set(report["assignments"]) == {"bolt", "gear", "washer"}
    assert report["mean_final_auroc"] is not None
    assert "forgetting" in report and "per_class" in report["forgetting"]
    assert len(report["experts"]) == 3

    with open(out / "ledger.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6  # 1 + 2 + 3 introduced classes
    assert {r["class_name"] for r in rows} == {"bolt", "gear", "washer"}

    state = run_dir_files(out / "experts")
    assert "experts.json" in state
    assert any(name.endswith(".mecb") for name in state)


def test_rerun_is_byte_identical(synth_dataset, config_file, tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        assert (
            main(
                [
                    "run", str(synth_dataset),
                    "--config", str(config_file),
                    "--out", str(out),
                    "--no-figures",
                ]
            )
            == EXIT_OK
        )
    assert (out1 / "ledger.csv").read_bytes() == (out2 / "ledger.csv").read_bytes()
    assert (out1 / "assignments.csv").read_bytes() == (out2 / "assignments.csv").read_bytes()


def test_run_sweep_writes_tables_and_figures(synth_dataset, config_file, tmp_path):
    out = tmp_path / "sweep"
    assert (
        main(
            [
                "run", str(synth_dataset),
                "--config", str(config_file),
                "--out", str(out),
                "--sweep", "1..3",
            ]
        )
        == EXIT_OK
    )
    with open(out / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["num_experts"]) for r in rows] == [1, 2, 3]
    with open(out / "class_auroc_by_experts.csv") as fh:
        heat = list(csv.DictReader(fh))
    assert len(heat) == 9
    files = run_dir_files(out)
    for figure in ("auroc_vs_experts.png", "forgetting_vs_experts.png", "class_auroc_heatmap.png"):
        assert figure in files
    report = json.loads((out / "report.json").read_text())
    assert len(report["sweep"]) == 3


def test_run_flag_overrides(synth_dataset, tmp_path):
    out = tmp_path / "flags"
    assert (
        main(
            [
                "run", str(synth_dataset),
                "--out", str(out),
                "--experts", "2",
                "--seed", "99",
                "--retention", "accumulate",
                "--theta", "0.5",
                "--no-figures",
            ]
        )
        == EXIT_OK
    )
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["router"]["num_experts"] == 2
    assert manifest["config"]["router"]["similarity_threshold"] == 0.5
    assert manifest["config"]["memory"]["retention_mode"] == "accumulate"
    assert manifest["config"]["run"]["seed"] == 99


def test_bad_sweep_spec(synth_dataset, tmp_path, capsys):
    code = main(
        ["run", str(synth_dataset), "--out", str(tmp_path / "x"), "--sweep", "3"]
    )
    assert code != EXIT_OK


@pytest.fixture(scope="module")
def finished_run(synth_dataset, config_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "main"
    assert (
        main(["run", str(synth_dataset), "--config", str(config_file), "--out", str(out)])
        == EXIT_OK
    )
    return out


def test_score_known_class(finished_run, synth_dataset, tmp_path, capsys):
    target = tmp_path / "scores.csv"
    code = main(
        [
            "score",
            "--state", str(finished_run / "experts"),
            "--dataset", str(synth_dataset),
            "--class", "gear",
            "--out", str(target),
        ]
    )
    assert code == EXIT_OK
    with open(target) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 10
    assert {r["label"] for r in rows} == {"normal", "anomalous"}
    out = capsys.readouterr().out
    assert out.startswith("auroc: ")


def test_score_matches_final_ledger_auroc(finished_run, synth_dataset, capsys):
    with open(finished_run / "ledger.csv") as fh:
        rows = list(csv.DictReader(fh))
    final_step = max(int(r["step"]) for r in rows)
    ledger_auroc = {
        r["class_name"]: float(r["auroc"])
        for r in rows
        if int(r["step"]) == final_step and r["auroc"]
    }
    for name, expected in ledger_auroc.items():
        code = main(
            [
                "score",
                "--state", str(finished_run / "experts"),
                "--dataset", str(synth_dataset),
                "--class", name,
            ]
        )
        assert code == EXIT_OK
        out = capsys.readouterr().out
        reported = float(out.splitlines()[-1].split("auroc: ")[1])
        assert reported == expected


def test_score_unknown_class_lists_known(finished_run, synth_dataset, capsys):
    code = main(
        [
            "score",
            "--state", str(finished_run / "experts"),
            "--dataset", str(synth_dataset),
            "--class", "sprocket",
        ]
    )
    assert code == EXIT_INVALID
    err = capsys.readouterr().err
    assert "sprocket" in err
    for name in ("bolt", "gear", "washer"):
        assert name in err


def test_score_dimension_mismatch(finished_run, tmp_path, capsys):
    other = tmp_path / "other.mecd"
    write_dataset_file(tiny_stream(dimension=5), other)
    code = main(
        [
            "score",
            "--state", str(finished_run / "experts"),
            "--dataset", str(other),
            "--class", "alpha",
        ]
    )
    assert code == EXIT_INVALID
    assert "dimension" in capsys.readouterr().err


def test_score_train_split_of_fully_retained_class(synth_dataset, tmp_path, capsys):
    # Budget exceeds the class's patch count, so every train patch is in the
    # bank and the just-learned class scores exactly zero on its train split.
    out = tmp_path / "fresh"
    config = tmp_path / "big.ini"
    config.write_text(
        "[router]\nnum_experts = 3\n"
        "[memory]\nper_class_budget = 100\nper_expert_budget = 600\n"
    )
    assert (
        main(
            [
                "run", str(synth_dataset),
                "--config", str(config),
                "--out", str(out),
                "--no-figures",
            ]
        )
        == EXIT_OK
    )
    report = json.loads((out / "report.json").read_text())
    last_class = report["class_order"][-1]
    target = tmp_path / "train_scores.csv"
    code = main(
        [
            "score",
            "--state", str(out / "experts"),
            "--dataset", str(synth_dataset),
            "--class", last_class,
            "--split", "train",
            "--out", str(target),
        ]
    )
    assert code == EXIT_OK
    with open(target) as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(float(r["score"]) == 0.0 for r in rows)


def test_report_regenerates_figures_from_csvs(finished_run, tmp_path, capsys):
    figs = tmp_path / "figs"
    assert main(["report", str(finished_run), "--out", str(figs)]) == EXIT_OK
    names = {p.name for p in figs.iterdir()}
    assert "per_class_final_auroc.png" in names
    assert all((figs / n).stat().st_size > 0 for n in names)


def test_report_on_empty_dir(tmp_path, capsys):
    empty = tmp_path / "nothing"
    empty.mkdir()
    assert main(["report", str(empty)]) == EXIT_INVALID
