import io
import json

import pandas as pd
import pytest

from app_config import load_config
from commands.pipeline import mining_passes
from concept_miner import main
from dataset import load_dataset
from utils import load_json
from xaimetrics import validate_report_dict

ARTIFACTS = ["centers.json", "book.json", "head.json", "report.json", "report.csv"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "planted.pfd"
    assert main(["gen", "--classes", "5", "--parts", "4", "--dim", "32", "--per-class", "40",
                 "--concepts", "2", "--noise", "0.02", "--seed", "0", "-o", str(data)]) == 0
    assert main(["pipeline", "--data", str(data), "--seed", "0", "-o", str(root / "run")]) == 0
    return root


def run_table(argv, capsys):
    capsys.readouterr()
    assert main(argv) == 0
    return pd.read_csv(io.StringIO(capsys.readouterr().out))


class TestGen:
    def test_writes_dataset_and_truth(self, tmp_path):
        out = tmp_path / "ds.pfd"
        assert main(["gen", "--classes", "3", "--parts", "2", "--dim", "16", "--per-class", "20",
                     "--seed", "7", "-o", str(out)]) == 0
        assert load_dataset(out).n_samples == 60
        truth = load_json(tmp_path / "ds.pfd.truth.json")
        assert len(truth["assignment"]) == 60

    def test_same_flags_same_bytes(self, tmp_path):
        argv = ["gen", "--classes", "2", "--parts", "2", "--dim", "8", "--per-class", "10", "--seed", "1"]
        assert main(argv + ["-o", str(tmp_path / "a.pfd")]) == 0
        assert main(argv + ["-o", str(tmp_path / "b.pfd")]) == 0
        assert (tmp_path / "a.pfd").read_bytes() == (tmp_path / "b.pfd").read_bytes()

    def test_csv_format(self, tmp_path):
        out = tmp_path / "ds.csv"
        assert main(["gen", "--classes", "2", "--parts", "1", "--dim", "4", "--per-class", "5",
                     "--format", "csv", "-o", str(out)]) == 0
        assert load_dataset(out).n_samples == 10

    def test_missing_output_is_usage_error(self):
        assert main(["gen", "--classes", "2"]) == 2

    def test_bad_flag_is_usage_error(self):
        assert main(["gen", "--classes", "two", "-o", "x.pfd"]) == 2

    def test_zero_classes_is_usage_error(self, tmp_path):
        assert main(["gen", "--classes", "0", "-o", str(tmp_path / "x.pfd")]) == 2
        assert not (tmp_path / "x.pfd").exists()

    def test_unknown_command(self):
        assert main(["cluster"]) == 2


class TestPipeline:
    def test_report(self, workspace):
        report = load_json(workspace / "run" / "report.json")
        assert validate_report_dict(report) == []
        assert report["accuracy"]["full"] >= 95.0
        assert report["consistency_intra"] > report["consistency_inter"]
        assert report["mining_passes"] == 6
        assert report["stability"] is not None
        assert set(report["accuracy"]) == {"full", "prototypical", "nonprototypical"}
        assert "prototypical" in report["faithfulness_by_block"]

    def test_artifacts_share_the_config_hash(self, workspace):
        run = workspace / "run"
        report = load_json(run / "report.json")
        for name in ("centers.json", "book.json", "head.json"):
            assert load_json(run / name)["config_hash"] == report["config_hash"]

    def test_rerun_is_byte_identical(self, workspace):
        assert main(["pipeline", "--data", str(workspace / "planted.pfd"), "--seed", "0",
                     "-o", str(workspace / "again")]) == 0
        for name in ARTIFACTS:
            assert (workspace / "run" / name).read_bytes() == (workspace / "again" / name).read_bytes()

    def test_long_interval_mines_once(self, workspace):
        out = workspace / "once"
        assert main(["pipeline", "--data", str(workspace / "planted.pfd"), "--set", "remine_interval=100",
                     "--set", "metrics.stability_folds=0", "-o", str(out)]) == 0
        report = load_json(out / "report.json")
        assert report["mining_passes"] == 1
        assert report["stability"] is None

    def test_pass_count(self):
        cfg = load_config(None)
        assert mining_passes(cfg) == 6
        cfg.head_epochs = 7
        assert mining_passes(cfg) == 2
        cfg.head_epochs = 0
        assert mining_passes(cfg) == 1

    def test_missing_data_is_runtime_error(self, tmp_path):
        assert main(["pipeline", "--data", str(tmp_path / "nope.pfd"), "-o", str(tmp_path / "out")]) == 1

    @pytest.mark.parametrize("override", ["nowhere.lam=1", "head.nothing=1", "head.lam=-1", "lam"])
    def test_bad_override_is_usage_error(self, workspace, tmp_path, override):
        assert main(["pipeline", "--data", str(workspace / "planted.pfd"), "--set", override,
                     "-o", str(tmp_path / "out")]) == 2

    def test_unreadable_config_is_usage_error(self, workspace, tmp_path):
        assert main(["pipeline", "--data", str(workspace / "planted.pfd"), "--config", str(tmp_path / "missing.yaml"),
                     "-o", str(tmp_path / "out")]) == 2

    def test_config_file(self, workspace, tmp_path):
        config = tmp_path / "run.yaml"
        config.write_text("head_epochs: 5\nmetrics:\n  stability_folds: 0\n")
        assert main(["pipeline", "--data", str(workspace / "planted.pfd"), "--config", str(config),
                     "-o", str(tmp_path / "out")]) == 0
        assert load_json(tmp_path / "out" / "report.json")["config"]["head_epochs"] == 5


class TestEval:
    def test_eval_on_pipeline_outputs(self, workspace, tmp_path):
        run = workspace / "run"
        out = tmp_path / "report.json"
        assert main(["eval", "--data", str(workspace / "planted.pfd"), "--book", str(run / "book.json"),
                     "--head", str(run / "head.json"), "--csv", str(tmp_path / "report.csv"),
                     "-o", str(out)]) == 0
        report = load_json(out)
        assert validate_report_dict(report) == []
        assert report["accuracy"] == load_json(run / "report.json")["accuracy"]
        assert len(pd.read_csv(tmp_path / "report.csv")) == 1

    def test_hash_mismatch_needs_force(self, workspace, tmp_path):
        run = workspace / "run"
        data = str(workspace / "planted.pfd")
        head = tmp_path / "other.pcmh"
        assert main(["train", "--data", data, "--book", str(run / "book.json"),
                     "--set", "head.lam=0.01", "-o", str(head)]) == 0
        argv = ["eval", "--data", data, "--book", str(run / "book.json"), "--head", str(head),
                "--set", "metrics.stability_folds=0", "-o", str(tmp_path / "r.json")]
        assert main(argv) == 1
        assert main(argv + ["--force"]) == 0

    def test_concept_count_mismatch(self, workspace, tmp_path):
        run = workspace / "run"
        data = str(workspace / "planted.pfd")
        coarse = tmp_path / "coarse.json"
        assert main(["mine", "--data", data, "--set", "mining.eps=10", "-o", str(coarse)]) == 0
        assert len(json.loads(coarse.read_text())["entries"]) < len(load_json(run / "book.json")["entries"])
        argv = ["eval", "--data", data, "--book", str(coarse), "--head", str(run / "head.json"),
                "--force", "-o", str(tmp_path / "r.json")]
        assert main(argv) == 1


class TestStepwise:
    def test_mine_train_eval_with_binary_artifacts(self, workspace, tmp_path):
        data = str(workspace / "planted.pfd")
        book, head, centers = tmp_path / "book.pcmb", tmp_path / "head.pcmh", tmp_path / "centers.pcmc"
        assert main(["mine", "--data", data, "--centers", str(centers), "-o", str(book)]) == 0
        assert centers.exists()
        assert main(["train", "--data", data, "--book", str(book), "-o", str(head)]) == 0
        assert main(["eval", "--data", data, "--book", str(book), "--head", str(head),
                     "--set", "metrics.stability_folds=0", "-o", str(tmp_path / "r.json")]) == 0

    def test_merge_threshold_zero_keeps_concepts(self, workspace, capsys):
        table = run_table(["merge", "--data", str(workspace / "planted.pfd"),
                           "--book", str(workspace / "run" / "book.json"),
                           "--levels", "1", "--thresholds", "0"], capsys)
        assert len(table) == 1
        assert table.loc[0, "d_c"] == table.loc[0, "d_c_before"]

    def test_merge_table_and_chart(self, workspace, tmp_path):
        out = tmp_path / "merge.csv"
        chart = tmp_path / "merge.html"
        assert main(["merge", "--data", str(workspace / "planted.pfd"),
                     "--book", str(workspace / "run" / "book.json"),
                     "--thresholds", "0,50", "--chart", str(chart), "-o", str(out)]) == 0
        table = pd.read_csv(out)
        assert list(table.columns) == ["level", "threshold_pct", "d_c_before", "d_c", "accuracy", "F3"]
        assert len(table) == 6
        assert chart.exists()

    def test_occlude_rows(self, workspace, tmp_path):
        run = workspace / "run"
        out = tmp_path / "occlusion.csv"
        assert main(["occlude", "--data", str(workspace / "planted.pfd"), "--book", str(run / "book.json"),
                     "--head", str(run / "head.json"), "--fractions", "0.1,0.2,0.3",
                     "--chart", str(tmp_path / "occlusion.html"), "-o", str(out)]) == 0
        curve = pd.read_csv(out)
        assert curve["fraction"].tolist() == [0.0, 0.1, 0.2, 0.3]

    def test_export_cavs(self, workspace, capsys):
        table = run_table(["export", "--data", str(workspace / "planted.pfd"),
                           "--book", str(workspace / "run" / "book.json")], capsys)
        assert len(table) == 200
        assert table.columns[-1] == "label"

    def test_part_ablation(self, workspace, capsys):
        table = run_table(["ablate", "--data", str(workspace / "planted.pfd"), "--parts", "1,4"], capsys)
        assert table["parts"].tolist() == [1, 4]
        assert list(table.columns) == ["parts", "d_c", "accuracy", "F1", "F2", "F3", "F4", "F5"]

    def test_ablation_rejects_too_many_parts(self, workspace):
        assert main(["ablate", "--data", str(workspace / "planted.pfd"), "--parts", "9"]) == 1
