import json

import numpy as np
import pytest

from framestack.cli import main


def write_json(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A tiny end-to-end workspace: corpus, graph, one trained model."""
    root = tmp_path_factory.mktemp("cli")
    gen_cfg = write_json(root / "gen.json", {
        "num_words": 4, "states_per_word": 2, "feature_dim": 4,
        "num_utterances": 40, "min_words": 2, "max_words": 4,
        "mean_separation": 3.0, "seed": 11,
    })
    assert main(["gen-data", "--config", gen_cfg,
                 "--out-dir", str(root)]) == 0
    train_cfg = write_json(root / "train.json", {
        "epochs": 2, "learning_rate": 0.1, "hidden_dim": 8, "fc_dim": 6,
        "seed": 3,
    })
    assert main(["train", "--config", train_cfg,
                 "--train-corpus", str(root / "train.sdco"),
                 "--model-out", str(root / "model.sdam"),
                 "--log-out", str(root / "train_log.csv")]) == 0
    assert main(["build-graph", "--train-corpus", str(root / "train.sdco"),
                 "--graph-out", str(root / "graph.sdgr")]) == 0
    return root


class TestGenData:
    def test_outputs_exist(self, workspace):
        for name in ("train.sdco", "test.sdco", "gen_config.json"):
            assert (workspace / name).exists()

    def test_regeneration_byte_identical(self, workspace, tmp_path):
        cfg = write_json(tmp_path / "gen.json",
                         json.loads((workspace / "gen_config.json")
                                    .read_text()))
        assert main(["gen-data", "--config", cfg,
                     "--out-dir", str(tmp_path)]) == 0
        for name in ("train.sdco", "test.sdco"):
            assert (tmp_path / name).read_bytes() == \
                (workspace / name).read_bytes()

    def test_seed_flag_overrides_config(self, workspace, tmp_path):
        cfg = write_json(tmp_path / "gen.json",
                         json.loads((workspace / "gen_config.json")
                                    .read_text()))
        assert main(["--seed", "99", "gen-data", "--config", cfg,
                     "--out-dir", str(tmp_path)]) == 0
        assert (tmp_path / "train.sdco").read_bytes() != \
            (workspace / "train.sdco").read_bytes()


class TestTrain:
    def test_model_and_priors_written(self, workspace):
        assert (workspace / "model.sdam").exists()
        priors = json.loads((workspace / "model.sdam.priors.json")
                            .read_text())
        vals = np.array(priors["priors"])
        assert priors["fs"] == 1
        assert vals.sum() == pytest.approx(1.0)
        assert np.all(vals > 0)

    def test_log_has_epoch_rows(self, workspace):
        lines = (workspace / "train_log.csv").read_text().splitlines()
        assert lines[0].startswith("epoch,")
        assert len(lines) == 3  # header + 2 epochs


class TestDecode:
    def test_decode_writes_hyps(self, workspace, capsys):
        hyp = workspace / "hyps.tsv"
        rc = main(["decode", "--test-corpus", str(workspace / "test.sdco"),
                   "--model", str(workspace / "model.sdam"),
                   "--graph", str(workspace / "graph.sdgr"),
                   "--hyp-out", str(hyp)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "error_rate=" in out and "rtf=" in out
        lines = hyp.read_text().splitlines()
        assert len(lines) == 8  # 20% of 40 utterances
        assert all(len(line.split("\t")) == 5 for line in lines)

    def test_stacked_decode_needs_matching_model(self, workspace):
        rc = main(["decode", "--test-corpus", str(workspace / "test.sdco"),
                   "--model", str(workspace / "model.sdam"),
                   "--graph", str(workspace / "graph.sdgr"),
                   "--fs", "3", "--fr", "3"])
        assert rc == 2


class TestSweep:
    def test_tables_and_figures(self, workspace, tmp_path):
        cfg = write_json(tmp_path / "sweep.json", {
            "train_corpus": str(workspace / "train.sdco"),
            "test_corpus": str(workspace / "test.sdco"),
            "pairs": [[1, 1], [2, 2]],
            "reps": 1,
            "train": {"epochs": 1, "learning_rate": 0.1,
                      "hidden_dim": 8, "fc_dim": 6, "seed": 3},
        })
        out = tmp_path / "sweep_out"
        assert main(["sweep", "--config", cfg, "--out-dir", str(out)]) == 0
        for name in ("sweep.csv", "sweep.md", "sweep_error_rate.png",
                     "sweep_rtf.png"):
            assert (out / name).exists()
        rows = (out / "sweep.csv").read_text().splitlines()
        assert len(rows) == 3

    def test_empty_pairs_is_usage_error(self, workspace, tmp_path):
        cfg = write_json(tmp_path / "sweep.json", {
            "train_corpus": str(workspace / "train.sdco"),
            "test_corpus": str(workspace / "test.sdco"),
            "pairs": [],
        })
        assert main(["sweep", "--config", cfg,
                     "--out-dir", str(tmp_path)]) == 1


class TestBenchRtf:
    def test_prints_median(self, workspace, capsys):
        rc = main(["bench-rtf",
                   "--test-corpus", str(workspace / "test.sdco"),
                   "--model", str(workspace / "model.sdam"),
                   "--graph", str(workspace / "graph.sdgr"),
                   "--reps", "1"])
        assert rc == 0
        assert "median_rtf=" in capsys.readouterr().out


class TestExitCodes:
    def test_missing_config_usage_error(self, tmp_path):
        assert main(["gen-data", "--config", str(tmp_path / "nope.json"),
                     "--out-dir", str(tmp_path)]) == 1

    def test_bad_flag_usage_error(self):
        assert main(["decode", "--no-such-flag"]) == 1

    def test_missing_corpus_runtime_failure(self, workspace, tmp_path):
        assert main(["build-graph",
                     "--train-corpus", str(tmp_path / "missing.sdco"),
                     "--graph-out", str(tmp_path / "g.sdgr")]) == 2
