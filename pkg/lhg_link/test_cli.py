import json

import numpy
import pytest

from lhg_link.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, build_parser, build_run_config, main, resolve_settings

TINY = [
    "--num-paths", "3",
    "--max-path-length", "2",
    "--hidden-dims", "4",
    "--semantic-dims", "2",
    "--batch-size", "8",
    "--max-epochs", "1",
    "--steps-per-epoch", "2",
]


@pytest.fixture
def ring_files(tmp_path, monkeypatch):
    monkeypatch.delenv("LHG_OUTPUT_DIR", raising=False)
    monkeypatch.delenv("LHG_WORKERS", raising=False)
    edges = tmp_path / "ring.tsv"
    edges.write_text("".join(f"{i}\t{(i + 1) % 12}\n" for i in range(12)), encoding="utf-8")
    features = tmp_path / "features.npy"
    numpy.save(str(features), numpy.random.default_rng(0).normal(size=(12, 3)))
    return ["--edges", str(edges), "--features", str(features), "--output-dir", str(tmp_path / "out")]


def test_malformed_ratios_are_a_usage_error(ring_files):
    assert main(["prepare"] + ring_files + ["--ratios", "0.8,0.2"]) == EXIT_USAGE
    assert main(["prepare"] + ring_files + ["--ratios", "a,b,c"]) == EXIT_USAGE


def test_unknown_flag_is_a_usage_error():
    assert main(["train", "--no-such-flag"]) == EXIT_USAGE


def test_missing_edge_file_is_a_usage_error(tmp_path, monkeypatch):
    monkeypatch.delenv("LHG_OUTPUT_DIR", raising=False)
    assert main(["prepare", "--edges", str(tmp_path / "absent.tsv"), "--output-dir", str(tmp_path)]) == EXIT_USAGE


def test_prepare_is_reproducible(ring_files, tmp_path):
    assert main(["prepare"] + ring_files + TINY + ["--seed", "7"]) == EXIT_OK
    manifest = (tmp_path / "out" / "split" / "manifest.json").read_bytes()
    test_edges = (tmp_path / "out" / "split" / "test.tsv").read_bytes()
    assert main(["prepare"] + ring_files + TINY + ["--seed", "7"]) == EXIT_OK
    assert (tmp_path / "out" / "split" / "manifest.json").read_bytes() == manifest
    assert (tmp_path / "out" / "split" / "test.tsv").read_bytes() == test_edges
    written = json.loads(manifest)
    assert written["seed"] == 7
    assert len(written["fingerprint"]) == 64


def test_train_then_eval(ring_files, tmp_path):
    assert main(["prepare"] + ring_files + TINY) == EXIT_OK
    assert main(["train"] + ring_files + TINY) == EXIT_OK
    assert (tmp_path / "out" / "best.ckpt").exists()
    assert main(["eval"] + ring_files + TINY) == EXIT_OK
    metrics = json.loads((tmp_path / "out" / "metrics_test.json").read_text(encoding="utf-8"))
    assert 0.1 <= metrics["map"] <= 1.0
    assert metrics["split"] == "test"


def test_eval_refuses_a_checkpoint_from_another_config(ring_files):
    assert main(["train"] + ring_files + TINY) == EXIT_OK
    assert main(["eval"] + ring_files + TINY + ["--seed", "5"]) == EXIT_FAILURE


def test_settings_precedence(tmp_path, monkeypatch):
    ini = tmp_path / "config.ini"
    ini.write_text("[TRAIN]\nSEED = 3\nWORKERS = 2\n\n[DATASET]\nOUTPUT_DIR = from_ini\n", encoding="utf-8")
    monkeypatch.setenv("LHG_OUTPUT_DIR", "from_env")
    monkeypatch.delenv("LHG_WORKERS", raising=False)
    args = build_parser().parse_args(["train", "--config", str(ini), "--workers", "4"])
    items = resolve_settings(args)
    assert items["seed"] == 3
    assert items["workers"] == 4
    assert items["output_dir"] == "from_env"


def test_probe_reports_the_majority_baseline(ring_files, tmp_path):
    labels = tmp_path / "labels.tsv"
    labels.write_text("".join(f"{i}\t{'even' if i % 2 == 0 else 'odd'}\n" for i in range(12)), encoding="utf-8")
    assert main(["probe"] + ring_files + TINY) == EXIT_USAGE
    assert main(["prepare"] + ring_files + TINY + ["--labels", str(labels)]) == EXIT_OK
    assert main(["train"] + ring_files + TINY + ["--labels", str(labels)]) == EXIT_OK
    assert main(["probe"] + ring_files + TINY + ["--labels", str(labels)]) == EXIT_OK
    report = json.loads((tmp_path / "out" / "probe.json").read_text(encoding="utf-8"))
    assert report["majority_baseline"]["variant"] == "majority_class"
    assert 0.0 <= report["probe"]["accuracy"] <= 1.0


def test_baseline_writes_one_report_per_k(ring_files, tmp_path):
    assert main(["prepare"] + ring_files + TINY) == EXIT_OK
    transe = ["--transe-dim", "4", "--transe-epochs", "2", "--pseudo-k", "1,2"]
    assert main(["baseline", "transe"] + ring_files + TINY + transe) == EXIT_OK
    assert (tmp_path / "out" / "TransE.json").exists()
    assert (tmp_path / "out" / "TransE-2.json").exists()
    assert (tmp_path / "out" / "pseudo_types_k2.tsv").exists()


def test_ablate_single_variant(ring_files, tmp_path):
    assert main(["ablate"] + ring_files + TINY + ["--variant", "no_personalization", "--seeds", "0,1"]) == EXIT_OK
    reports = json.loads((tmp_path / "out" / "ablation.json").read_text(encoding="utf-8"))["reports"]
    assert [r["seed"] for r in reports] == [0, 1]
    assert {r["variant"] for r in reports} == {"no_personalization"}


def test_baseline_reuses_an_existing_pseudo_type_file(ring_files, tmp_path):
    assert main(["prepare"] + ring_files + TINY) == EXIT_OK
    types_path = tmp_path / "out" / "pseudo_types_k2.tsv"
    types_path.parent.mkdir(parents=True, exist_ok=True)
    fixed = "".join(f"{i}\t1\n" for i in range(12))
    types_path.write_text(fixed, encoding="utf-8")
    transe = ["--transe-dim", "4", "--transe-epochs", "1", "--pseudo-k", "2"]
    assert main(["baseline", "transe"] + ring_files + TINY + transe) == EXIT_OK
    assert types_path.read_text(encoding="utf-8") == fixed
    assert main(["baseline", "transe"] + ring_files + TINY + transe + ["--recluster"]) == EXIT_OK
    assert types_path.read_text(encoding="utf-8") != fixed


def test_split_ratios_come_from_the_config_file(tmp_path, monkeypatch):
    monkeypatch.delenv("LHG_OUTPUT_DIR", raising=False)
    monkeypatch.delenv("LHG_WORKERS", raising=False)
    ini = tmp_path / "config.ini"
    ini.write_text("[DATASET]\nRATIOS = 0.6,0.2,0.2\n", encoding="utf-8")
    parser = build_parser()
    assert build_run_config(parser.parse_args(["prepare", "--config", str(ini)])).ratios == (0.6, 0.2, 0.2)
    flagged = parser.parse_args(["prepare", "--config", str(ini), "--ratios", "0.7,0.2,0.1"])
    assert build_run_config(flagged).ratios == (0.7, 0.2, 0.1)
    assert build_run_config(parser.parse_args(["prepare"])).ratios == (0.8, 0.1, 0.1)
