import json

import pytest

from splatfield.cli import main
from splatfield.io import load_scene


@pytest.fixture(scope="module")
def bundle_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle")
    rc = main([
        "synth", "--out", str(out), "--seed", "7", "--gaussians", "40",
        "--classes", "4", "--size", "24", "--levels", "1", "--L", "8",
        "--K", "2", "--D", "8", "--cameras", "3",
    ])
    assert rc == 0
    return out


class TestSynth:
    def test_default_flags_produce_loadable_scene(self, tmp_path):
        rc = main([
            "synth", "--out", str(tmp_path / "s"), "--gaussians", "30",
            "--classes", "4", "--size", "16", "--levels", "1", "--L", "8",
            "--K", "2", "--D", "8", "--no-targets",
        ])
        assert rc == 0
        scene = load_scene(tmp_path / "s" / "scene.lsv2")
        assert scene.num_gaussians == 30

    def test_same_seed_identical_files(self, tmp_path):
        args = [
            "synth", "--seed", "7", "--gaussians", "24", "--classes", "3",
            "--size", "16", "--levels", "1", "--L", "8", "--K", "2", "--D", "8",
            "--no-targets",
        ]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        a = (tmp_path / "a" / "scene.lsv2").read_bytes()
        b = (tmp_path / "b" / "scene.lsv2").read_bytes()
        assert a == b
        qa = (tmp_path / "a" / "queries.json").read_bytes()
        qb = (tmp_path / "b" / "queries.json").read_bytes()
        assert qa == qb

    def test_zero_classes_usage_error(self, tmp_path):
        rc = main(["synth", "--out", str(tmp_path / "x"), "--classes", "0"])
        assert rc != 0


class TestTrain:
    def test_iters_zero_checkpoint_unchanged(self, bundle_dir, tmp_path):
        rc = main([
            "train", "--scene", str(bundle_dir / "scene.lsv2"),
            "--targets", str(bundle_dir), "--out", str(tmp_path / "t"),
            "--iters", "0",
        ])
        assert rc == 0
        original = (bundle_dir / "scene.lsv2").read_bytes()
        trained = (tmp_path / "t" / "scene.lsv2").read_bytes()
        assert original == trained
        loss_lines = (tmp_path / "t" / "loss.csv").read_text().strip().split("\n")
        assert loss_lines == ["iter,loss,grad_norm"]

    def test_loss_csv_has_iters_rows(self, bundle_dir, tmp_path):
        rc = main([
            "train", "--scene", str(bundle_dir / "scene.lsv2"),
            "--targets", str(bundle_dir), "--out", str(tmp_path / "t2"),
            "--iters", "8",
        ])
        assert rc == 0
        lines = (tmp_path / "t2" / "loss.csv").read_text().strip().split("\n")
        assert len(lines) == 9  # header + 8 rows

    def test_missing_targets_usage_error(self, bundle_dir, tmp_path):
        rc = main([
            "train", "--scene", str(bundle_dir / "scene.lsv2"),
            "--targets", str(tmp_path / "nope"), "--out", str(tmp_path / "t3"),
            "--iters", "1",
        ])
        assert rc != 0


class TestQuery:
    def test_list_queries(self, bundle_dir, capsys):
        rc = main([
            "query", "--scene", str(bundle_dir / "scene.lsv2"),
            "--queries", str(bundle_dir / "queries.json"), "--list-queries",
        ])
        assert rc == 0
        out = capsys.readouterr().out.strip().split("\n")
        assert out == [f"class{c}" for c in range(4)]

    def test_unknown_query_lists_names(self, bundle_dir, capsys):
        rc = main([
            "query", "--scene", str(bundle_dir / "scene.lsv2"),
            "--queries", str(bundle_dir / "queries.json"), "--query", "banana",
        ])
        assert rc != 0
        err = capsys.readouterr().err
        assert "class0" in err

    def test_result_json_structure_and_iou(self, bundle_dir, tmp_path, capsys):
        rc = main([
            "query", "--scene", str(bundle_dir / "scene.lsv2"),
            "--queries", str(bundle_dir / "queries.json"),
            "--query", "class0",
            "--cameras", str(bundle_dir / "cameras.json"), "--camera-index", "0",
            "--window", "3",
            "--out", str(tmp_path / "result.json"),
            "--overlay", str(tmp_path / "overlay.png"),
        ])
        assert rc == 0
        record = json.loads((tmp_path / "result.json").read_text())
        assert set(record) >= {
            "query", "level", "point", "mask_rle", "score_stats", "timings_ms",
            "settings",
        }
        assert set(record["timings_ms"]) == {"render_ms", "decode_ms", "post_ms"}
        assert record["query"] == "class0"
        # synthetic scene with ground-truth coefficients: high-IoU mask
        assert record["iou_vs_gt"] >= 0.9
        assert (tmp_path / "overlay.png").read_bytes()[:8].startswith(b"\x89PNG")


class TestBenchCommand:
    def test_default_plan_emits_records(self, tmp_path, capsys):
        rc = main([
            "bench", "--out", str(tmp_path / "b"), "--gaussians", "30",
            "--classes", "4", "--size", "16", "--D", "8",
            "--l-sweep", "8,16", "--k-sweep", "2", "--reps", "5",
            "--warmup", "1", "--no-speedup-cells",
        ])
        assert rc == 0
        csv = (tmp_path / "b" / "bench.csv").read_text()
        rows = [l for l in csv.strip().split("\n") if not l.startswith("#")]
        assert len(rows) == 5  # schema + 4 cells
        assert (tmp_path / "b" / "bench.svg").read_text().startswith("<svg")

    def test_forced_oom_cell_not_fatal(self, tmp_path):
        rc = main([
            "bench", "--out", str(tmp_path / "o"), "--gaussians", "20",
            "--classes", "4", "--size", "16", "--D", "8",
            "--l-sweep", "8", "--k-sweep", "2", "--reps", "5", "--warmup", "0",
            "--no-speedup-cells", "--memory-cap", "64",
        ])
        assert rc == 0
        assert "OOM" in (tmp_path / "o" / "bench.csv").read_text()
