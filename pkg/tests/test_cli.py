import json
import shutil

import pytest

from multigran.cli import main
from multigran.store import file_sha256

STAGES = ("generate", "train-baseline", "build-buckets", "train-mgt",
          "evaluate", "probe", "report")

SMOKE_CONFIG = """\
# desk-scale smoke configuration: defaults keep L=5 and k=10
dialogs = 200
valid_dialogs = 40
test_dialogs = 40
epochs = 5
emb_dim = 8
hidden = 12
vocab_size = 400
probe_epochs = 4
finetune_epochs = 1
bootstrap_iterations = 200
"""


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("smoke")
    config = root / "run.cfg"
    config.write_text(SMOKE_CONFIG)
    run_dir = root / "run"
    for stage in STAGES:
        code = main([stage, "--run-dir", str(run_dir), "--config", str(config), "--seed", "5"])
        assert code == 0, stage
    return run_dir, config


def test_full_pipeline_emits_all_reports(finished_run):
    run_dir, _ = finished_run
    for rel in ("reports/retrieval.txt", "reports/granularity.txt", "reports/transfer.txt",
                "reports/qualitative.txt", "reports/summary.json"):
        assert (run_dir / rel).exists(), rel
    retrieval = json.loads((run_dir / "eval/retrieval.json").read_text())
    assert set(retrieval["systems"]) == {"baseline", "vanilla", "mgt"}
    assert set(retrieval["significance"]) == {"mgt_vs_baseline", "mgt_vs_vanilla",
                                              "vanilla_vs_baseline"}
    probes = json.loads((run_dir / "probes/probe_results.json").read_text())
    levels = {r["level"] for r in probes["granularity"]["results"]}
    assert levels == {1, 2, 3, 4, 5}
    assert set(probes["transfer"]) == {"baseline", "vanilla_concat", "mgt_concat"}
    assert "baseline" in probes["finetune"] and "random_init" in probes["finetune"]


def test_report_tables_are_shaped(finished_run):
    run_dir, _ = finished_run
    retrieval = (run_dir / "reports/retrieval.txt").read_text()
    for label in ("dual-encoder", "vanilla-ensemble (5)", "mgt-ensemble (5)"):
        assert label in retrieval
    assert "paired bootstrap" in retrieval
    granularity = (run_dir / "reports/granularity.txt").read_text()
    assert "highest granularity" in granularity and "highest abstraction" in granularity
    assert "spearman" in granularity
    transfer = (run_dir / "reports/transfer.txt").read_text()
    assert "fine-tuned" in transfer
    qualitative = (run_dir / "reports/qualitative.txt").read_text()
    assert "ground truth" in qualitative and "level 5" in qualitative


def test_rerunning_completed_stages_is_noop(finished_run):
    run_dir, config = finished_run
    watched = ["manifest.json", "eval/retrieval.json", "reports/retrieval.txt",
               "checkpoints/baseline/epoch_001.ckpt"]
    before = {rel: file_sha256(run_dir / rel) for rel in watched}
    for stage in STAGES:
        assert main([stage, "--run-dir", str(run_dir), "--config", str(config),
                     "--seed", "5"]) == 0
    after = {rel: file_sha256(run_dir / rel) for rel in watched}
    assert before == after


def test_manifest_records_all_artifacts(finished_run):
    run_dir, _ = finished_run
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["seed"] == 5
    for stage in ("generate", "train_baseline", "build_buckets", "train_mgt",
                  "evaluate", "probe", "report"):
        entry = manifest["stages"][stage]
        for rel, digest in entry["artifacts"].items():
            assert (run_dir / rel).exists(), rel
            assert file_sha256(run_dir / rel) == digest, rel


def test_config_drift_rejected(finished_run):
    run_dir, config = finished_run
    code = main(["evaluate", "--run-dir", str(run_dir), "--config", str(config),
                 "--seed", "6"])
    assert code == 5


def test_tampering_detected(finished_run, tmp_path):
    run_dir, config = finished_run
    copy = tmp_path / "copy"
    shutil.copytree(run_dir, copy)
    ckpt = copy / "checkpoints/baseline/epoch_001.ckpt"
    blob = bytearray(ckpt.read_bytes())
    blob[-1] ^= 0xFF
    ckpt.write_bytes(bytes(blob))
    manifest = json.loads((copy / "manifest.json").read_text())
    del manifest["stages"]["report"]
    (copy / "manifest.json").write_text(json.dumps(manifest))
    code = main(["report", "--run-dir", str(copy), "--config", str(config), "--seed", "5"])
    assert code == 4


def test_stage_order_error_names_missing_stage(tmp_path, capsys):
    config = tmp_path / "run.cfg"
    config.write_text(SMOKE_CONFIG)
    run_dir = tmp_path / "fresh"
    assert main(["generate", "--run-dir", str(run_dir), "--config", str(config)]) == 0
    code = main(["train-mgt", "--run-dir", str(run_dir), "--config", str(config)])
    assert code == 3
    err = capsys.readouterr().err
    assert "train_baseline" in err


def test_configuration_error_exit_code(tmp_path):
    config = tmp_path / "bad.cfg"
    config.write_text("no_such_key = 3\n")
    assert main(["generate", "--run-dir", str(tmp_path / "r"), "--config", str(config)]) == 2


def test_candidates_and_granularities_flags(tmp_path):
    run_dir = tmp_path / "flags"
    config = tmp_path / "run.cfg"
    config.write_text(SMOKE_CONFIG)
    assert main(["generate", "--run-dir", str(run_dir), "--config", str(config),
                 "--candidates", "6", "--granularities", "3"]) == 0
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["config"]["k"] == 6
    assert manifest["config"]["granularities"] == 3
    split = (run_dir / "data/valid.jsonl").read_text().splitlines()
    assert len(json.loads(split[0])["candidates"]) == 6
