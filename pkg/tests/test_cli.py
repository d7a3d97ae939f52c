"""CLI tests driving main() in-process against tmp_path outputs."""

import csv
import json

import numpy as np
import pytest

from helpers import tiny_scenario

from tofg.cli import main
from tofg.fileio import to_plain
from tofg.nn import ParamStore
from tofg.scene import gen_synthetic, scenario_to_dict

SMALL_MODEL = {
    "embed_dim": 8,
    "n_gat_layers": 1,
    "n_head": 2,
    "horizon": 3,
    "history": 2,
    "mlp_hidden": 8,
    "seed": 0,
}
SMALL_TRAIN = {"epochs": 2, "batch_size": 1, "lr": 1e-3}


def write_tiny(path, n_frames=6):
    doc = to_plain(scenario_to_dict(tiny_scenario(n_frames=n_frames)))
    path.write_text(json.dumps(doc))
    return path


def write_straight(path, seed=3):
    doc = to_plain(scenario_to_dict(gen_synthetic("straight", seed)))
    path.write_text(json.dumps(doc))
    return path


def write_config(path, doc):
    path.write_text(json.dumps(doc))
    return path


def read_csv_rows(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def manifest_sans_timings(path):
    doc = json.loads(path.read_text())
    doc.pop("timings")
    return doc


class TestGenScenarios:
    def test_writes_files_and_manifest(self, tmp_path, capsys):
        out = tmp_path / "scenes"
        code = main(
            ["gen-scenarios", "--kind", "straight", "--count", "2", "--seed", "5",
             "--out", str(out)]
        )
        assert code == 0
        names = sorted(p.name for p in out.iterdir())
        assert names == ["manifest.json", "straight-5.json", "straight-6.json"]
        doc = json.loads((out / "straight-5.json").read_text())
        assert doc == to_plain(scenario_to_dict(gen_synthetic("straight", 5)))
        manifest = json.loads((out / "manifest.json").read_text())
        assert set(manifest) == {
            "command", "args", "config", "inputs", "outputs", "timings",
        }
        assert manifest["command"] == "gen-scenarios"
        assert manifest["args"] == {"kind": "straight", "count": 2, "seed": 5}
        assert len(manifest["outputs"]) == 2
        assert "wrote 2 scenario files" in capsys.readouterr().out

    def test_count_defaults_to_one(self, tmp_path):
        out = tmp_path / "one"
        assert main(["gen-scenarios", "--kind", "curve", "--out", str(out)]) == 0
        assert sorted(p.name for p in out.iterdir()) == ["curve-0.json", "manifest.json"]

    def test_rerun_byte_identical_except_timing(self, tmp_path):
        out = tmp_path / "scenes"
        argv = ["gen-scenarios", "--kind", "overtake", "--seed", "2", "--out", str(out)]
        assert main(argv) == 0
        first = (out / "overtake-2.json").read_bytes()
        first_manifest = manifest_sans_timings(out / "manifest.json")
        assert main(argv) == 0
        assert (out / "overtake-2.json").read_bytes() == first
        assert manifest_sans_timings(out / "manifest.json") == first_manifest

    def test_bad_kind_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["gen-scenarios", "--kind", "zigzag", "--out", str(tmp_path / "x")])
        assert exc.value.code == 2


class TestBuildGraph:
    def test_writes_graph_and_manifest(self, tmp_path):
        scn = write_tiny(tmp_path / "tiny.json")
        out = tmp_path / "graph.json"
        code = main(["build-graph", str(scn), "--frames", "0:2", "--out", str(out)])
        assert code == 0
        graph = json.loads(out.read_text())
        assert [f["frame"] for f in graph["frames"]] == [0, 1]
        manifest = json.loads((tmp_path / "graph.json.manifest.json").read_text())
        assert manifest["command"] == "build-graph"
        assert manifest["extra"]["counts"]["nodes_per_frame"] == 10
        assert manifest["extra"]["counts"]["frames"] == 2
        assert str(scn) in manifest["inputs"]

    def test_single_frame_spec(self, tmp_path):
        scn = write_tiny(tmp_path / "tiny.json")
        out = tmp_path / "graph.json"
        assert main(["build-graph", str(scn), "--frames", "3", "--out", str(out)]) == 0
        graph = json.loads(out.read_text())
        assert [f["frame"] for f in graph["frames"]] == [3]

    def test_default_frames_cover_log(self, tmp_path):
        scn = write_tiny(tmp_path / "tiny.json")
        out = tmp_path / "graph.json"
        assert main(["build-graph", str(scn), "--out", str(out)]) == 0
        graph = json.loads(out.read_text())
        assert [f["frame"] for f in graph["frames"]] == list(range(6))

    def test_rerun_byte_identical(self, tmp_path):
        scn = write_tiny(tmp_path / "tiny.json")
        out = tmp_path / "graph.json"
        argv = ["build-graph", str(scn), "--frames", "0:2", "--out", str(out)]
        assert main(argv) == 0
        first = out.read_bytes()
        first_manifest = manifest_sans_timings(tmp_path / "graph.json.manifest.json")
        assert main(argv) == 0
        assert out.read_bytes() == first
        assert manifest_sans_timings(tmp_path / "graph.json.manifest.json") == first_manifest

    def test_bad_frame_spec_is_usage_error(self, tmp_path):
        scn = write_tiny(tmp_path / "tiny.json")
        with pytest.raises(SystemExit) as exc:
            main(["build-graph", str(scn), "--frames", "8:3", "--out", str(tmp_path / "g.json")])
        assert exc.value.code == 2


class TestTrain:
    def test_writes_checkpoint_and_loss_curve(self, tmp_path):
        scn = write_tiny(tmp_path / "tiny.json")
        cfg = write_config(
            tmp_path / "cfg.json", {"model": SMALL_MODEL, "train": SMALL_TRAIN}
        )
        out = tmp_path / "run"
        code = main(["train", str(scn), "--config", str(cfg), "--out", str(out)])
        assert code == 0
        store = ParamStore.from_dict(json.loads((out / "checkpoint.json").read_text()))
        assert store.names()
        header, rows = read_csv_rows(out / "loss.csv")
        assert header == ["epoch", "loss"]
        assert [int(r[0]) for r in rows] == [0, 1]
        assert all(np.isfinite(float(r[1])) for r in rows)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["extra"] == {"n_samples": 1, "epochs": 2}
        assert str(scn) in manifest["inputs"]

    def test_corpus_directory_skips_manifest(self, tmp_path):
        corpus = tmp_path / "corpus"
        corpus.mkdir()
        write_tiny(corpus / "a.json")
        write_tiny(corpus / "b.json")
        (corpus / "manifest.json").write_text("{}")
        cfg = write_config(
            tmp_path / "cfg.json",
            {"model": SMALL_MODEL, "train": {**SMALL_TRAIN, "epochs": 1}},
        )
        out = tmp_path / "run"
        assert main(["train", str(corpus), "--config", str(cfg), "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["extra"]["n_samples"] == 2

    def test_seed_flag_controls_parameters(self, tmp_path):
        scn = write_tiny(tmp_path / "tiny.json")
        cfg = write_config(
            tmp_path / "cfg.json",
            {"model": SMALL_MODEL, "train": {**SMALL_TRAIN, "epochs": 1}},
        )

        def checkpoint_for(seed, name):
            out = tmp_path / name
            code = main(
                ["train", str(scn), "--config", str(cfg), "--seed", str(seed),
                 "--out", str(out)]
            )
            assert code == 0
            return (out / "checkpoint.json").read_bytes()

        a1 = checkpoint_for(1, "s1")
        a2 = checkpoint_for(1, "s1_again")
        b = checkpoint_for(2, "s2")
        assert a1 == a2
        assert a1 != b

    def test_divergence_exits_numeric(self, tmp_path, capsys):
        scn = write_tiny(tmp_path / "tiny.json")
        cfg = write_config(
            tmp_path / "cfg.json",
            {"model": SMALL_MODEL,
             "train": {"epochs": 2, "batch_size": 1, "lr": 1e200}},
        )
        code = main(["train", str(scn), "--config", str(cfg), "--out", str(tmp_path / "run")])
        assert code == 5
        assert "diverged" in capsys.readouterr().err


class TestPredictAndAttention:
    def test_fresh_params_prediction_doc(self, tmp_path):
        scn = write_tiny(tmp_path / "tiny.json")
        cfg = write_config(tmp_path / "cfg.json", {"model": SMALL_MODEL})
        out = tmp_path / "pred.json"
        code = main(
            ["predict", str(scn), "--frames", "1:3", "--config", str(cfg),
             "--out", str(out)]
        )
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["scenario_id"] == "tiny"
        assert doc["frames"] == [1, 2]
        assert doc["horizon"] == 3
        assert doc["waypoints"] == [[1.0, 0.1]] * 3
        assert doc["waypoints_ego"] == [[0.0, 0.0]] * 3
        assert (tmp_path / "pred.json.manifest.json").exists()

    def test_checkpoint_changes_prediction(self, tmp_path):
        scn = write_tiny(tmp_path / "tiny.json")
        cfg = write_config(
            tmp_path / "cfg.json", {"model": SMALL_MODEL, "train": SMALL_TRAIN}
        )
        run = tmp_path / "run"
        assert main(["train", str(scn), "--config", str(cfg), "--out", str(run)]) == 0
        out = tmp_path / "pred.json"
        code = main(
            ["predict", str(scn), "--frames", "1:3", "--config", str(cfg),
             "--checkpoint", str(run / "checkpoint.json"), "--out", str(out)]
        )
        assert code == 0
        doc = json.loads(out.read_text())
        assert np.abs(np.asarray(doc["waypoints"]) - [1.0, 0.1]).max() > 0

    def test_attention_csv(self, tmp_path):
        scn = write_tiny(tmp_path / "tiny.json")
        cfg = write_config(tmp_path / "cfg.json", {"model": SMALL_MODEL})
        out = tmp_path / "att.csv"
        code = main(
            ["export-attention", str(scn), "--frames", "1:3", "--config", str(cfg),
             "--out", str(out)]
        )
        assert code == 0
        header, rows = read_csv_rows(out)
        assert header == ["node_id", "frame", "x", "y", "head0", "head1", "mean"]
        assert len(rows) == 10
        values = np.asarray(rows, dtype=float)
        for col in (4, 5, 6):
            np.testing.assert_allclose(values[:, col].sum(), 1.0, atol=1e-9)
        manifest = json.loads((tmp_path / "att.csv.manifest.json").read_text())
        assert manifest["extra"] == {"n_rows": 10, "n_heads": 2}

    def test_missing_scenario_is_io_error(self, tmp_path, capsys):
        code = main(
            ["predict", str(tmp_path / "absent.json"), "--out", str(tmp_path / "p.json")]
        )
        assert code == 4
        assert "error:" in capsys.readouterr().err

    def test_malformed_json_is_validation_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        code = main(["predict", str(bad), "--out", str(tmp_path / "p.json")])
        assert code == 3
        assert "malformed JSON" in capsys.readouterr().err

    def test_unknown_config_section_is_validation_error(self, tmp_path, capsys):
        scn = write_tiny(tmp_path / "tiny.json")
        cfg = write_config(tmp_path / "cfg.json", {"optimizer": {}})
        code = main(
            ["predict", str(scn), "--config", str(cfg), "--out", str(tmp_path / "p.json")]
        )
        assert code == 3
        assert "unknown sections" in capsys.readouterr().err


class TestSimulate:
    def test_single_scenario_outputs(self, tmp_path, capsys):
        scn = write_straight(tmp_path / "straight-3.json", seed=3)
        cfg = write_config(tmp_path / "cfg.json", {"sim": {"duration": 5.0}})
        out = tmp_path / "sim"
        code = main(
            ["simulate", str(scn), "--planner", "oracle", "--config", str(cfg),
             "--out", str(out)]
        )
        assert code == 0
        trace = json.loads((out / "trace_straight-3.json").read_text())
        assert trace["frames"] == list(range(4, 15))
        assert trace["events"] == []
        header, rows = read_csv_rows(out / "report.csv")
        assert header[0] == "scenario_id"
        assert "m_l2_mean" in header
        assert [r[0] for r in rows] == ["straight-3", "mean"]
        assert float(rows[0][header.index("m_l2_mean")]) == 0.0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["extra"]["planner"] == "oracle"
        assert manifest["extra"]["events"] == []
        assert "simulated 1 scenario(s)" in capsys.readouterr().out

    def test_batch_with_jobs(self, tmp_path):
        a = write_straight(tmp_path / "a.json", seed=0)
        b = write_straight(tmp_path / "b.json", seed=1)
        cfg = write_config(tmp_path / "cfg.json", {"sim": {"duration": 5.0}})
        out = tmp_path / "sim"
        code = main(
            ["simulate", str(a), str(b), "--planner", "oracle", "--jobs", "2",
             "--config", str(cfg), "--out", str(out)]
        )
        assert code == 0
        header, rows = read_csv_rows(out / "report.csv")
        assert [r[0] for r in rows] == ["straight-0", "straight-1", "mean"]
        assert not (out / "trace_straight-0.json").exists()

    def test_batch_failure_is_soft(self, tmp_path, capsys):
        good = write_straight(tmp_path / "good.json", seed=0)
        short = write_tiny(tmp_path / "short.json", n_frames=3)
        cfg = write_config(tmp_path / "cfg.json", {"sim": {"duration": 5.0}})
        out = tmp_path / "sim"
        code = main(
            ["simulate", str(good), str(short), "--planner", "oracle",
             "--config", str(cfg), "--out", str(out)]
        )
        assert code == 0
        header, rows = read_csv_rows(out / "report.csv")
        assert [r[0] for r in rows] == ["straight-0", "mean"]
        assert "failed:" in capsys.readouterr().err
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["extra"]["failures"][0]["scenario_id"] == "tiny"

    def test_all_failures_exit_validation(self, tmp_path):
        a = write_tiny(tmp_path / "a.json", n_frames=3)
        b = write_tiny(tmp_path / "b.json", n_frames=3)
        cfg = write_config(tmp_path / "cfg.json", {"sim": {"duration": 5.0}})
        code = main(
            ["simulate", str(a), str(b), "--planner", "oracle",
             "--config", str(cfg), "--out", str(tmp_path / "sim")]
        )
        assert code == 3

    def test_rerun_byte_identical(self, tmp_path):
        scn = write_straight(tmp_path / "straight-1.json", seed=1)
        cfg = write_config(tmp_path / "cfg.json", {"sim": {"duration": 5.0}})
        out = tmp_path / "sim"
        argv = ["simulate", str(scn), "--planner", "oracle", "--config", str(cfg),
                "--out", str(out)]
        assert main(argv) == 0
        trace = (out / "trace_straight-1.json").read_bytes()
        report = (out / "report.csv").read_bytes()
        assert main(argv) == 0
        assert (out / "trace_straight-1.json").read_bytes() == trace
        assert (out / "report.csv").read_bytes() == report


class TestUsage:
    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_missing_out_flag(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["gen-scenarios", "--kind", "straight"])
        assert exc.value.code == 2

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert "tofg" in capsys.readouterr().out
