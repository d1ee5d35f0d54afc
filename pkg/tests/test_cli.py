import json

import numpy as np
import pytest

from meshcurate.cli import main
from meshcurate.labels import QualityScore, read_manifest, serialize_record

from glb_fixtures import CUBE_FACES, CUBE_VERTICES, build_mesh_glb, cube_glb
from test_labels import make_human_record


def write_cube(path, scale=1.0, offset=(0.0, 0.0, 0.0)):
    vertices = (CUBE_VERTICES * np.asarray(scale, dtype=np.float32)).astype(np.float32)
    vertices = vertices + np.asarray(offset, dtype=np.float32)
    path.write_bytes(build_mesh_glb([(vertices, CUBE_FACES, None)]))


@pytest.fixture
def manifest_path(tmp_path):
    records = []
    for i in range(20):
        records.append(
            make_human_record(
                object_id=f"obj-{i:02d}",
                score=QualityScore(i % 4),
                tags=make_human_record().tags.__class__(
                    is_scene=(i % 5 == 0),
                    is_transparent=(i % 7 == 0),
                    is_single_color=(i % 3 == 0),
                ),
            )
        )
    path = tmp_path / "manifest.jsonl"
    path.write_text("\n".join(serialize_record(r) for r in records) + "\n")
    return path


class TestUsageErrors:
    def test_unknown_subcommand_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_missing_required_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["filter", "--manifest", "x.jsonl"])
        assert exc.value.code == 2

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0


class TestFilterCommand:
    def test_training_set_spec_filters_and_summarizes(self, tmp_path, manifest_path, capsys):
        spec = tmp_path / "trainB.toml"
        spec.write_text(
            'min_score = "high"\n\n[require_tags]\nis_single_color = false\n'
            "is_scene = false\nis_transparent = false\n"
        )
        out = tmp_path / "filtered.jsonl"
        code = main(
            ["filter", "--manifest", str(manifest_path), "--spec", str(spec), "--out", str(out)]
        )
        assert code == 0
        captured = capsys.readouterr().out
        assert "kept" in captured
        assert "1 (Yes)" in captured  # distribution table printed

        kept = list(read_manifest(out.read_text().splitlines()))
        assert kept
        for record in kept:
            assert record.score >= QualityScore.HIGH
            assert not record.tags.is_scene
            assert not record.tags.is_single_color
            assert not record.tags.is_transparent

    def test_malformed_line_skipped_with_warning(self, tmp_path, manifest_path, capsys):
        broken = tmp_path / "broken.jsonl"
        broken.write_text(manifest_path.read_text() + "this is not json\n")
        spec = tmp_path / "all.toml"
        spec.write_text("")
        out = tmp_path / "out.jsonl"
        code = main(["filter", "--manifest", str(broken), "--spec", str(spec), "--out", str(out)])
        assert code == 0
        assert "malformed line" in capsys.readouterr().err

    def test_strict_mode_aborts(self, tmp_path, manifest_path):
        broken = tmp_path / "broken.jsonl"
        broken.write_text("junk\n" + manifest_path.read_text())
        spec = tmp_path / "all.toml"
        spec.write_text("")
        out = tmp_path / "out.jsonl"
        code = main(
            ["filter", "--manifest", str(broken), "--spec", str(spec), "--out", str(out), "--strict"]
        )
        assert code == 1


class TestStatsCommand:
    def test_stats_outputs(self, tmp_path, manifest_path, capsys):
        json_out = tmp_path / "dist.json"
        fig_out = tmp_path / "dist.png"
        code = main(
            ["stats", "--manifest", str(manifest_path), "--json", str(json_out), "--fig", str(fig_out)]
        )
        assert code == 0
        assert "0 (No)" in capsys.readouterr().out
        payload = json.loads(json_out.read_text())
        assert payload["n"] == 20
        assert fig_out.stat().st_size > 0


class TestRenderCommand:
    def test_render_writes_views_and_is_reproducible(self, tmp_path):
        glb = tmp_path / "cube.glb"
        glb.write_bytes(cube_glb())
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        argv = ["render", "--glb", str(glb), "--views", "3", "--seed", "5", "--res", "32x32"]
        assert main(argv + ["--out", str(out_a)]) == 0
        assert main(argv + ["--out", str(out_b)]) == 0
        for name in ("view_000.png", "view_001.png", "view_002.png"):
            assert (out_a / "cube" / name).read_bytes() == (out_b / "cube" / name).read_bytes()
        poses = json.loads((out_a / "cube" / "poses.json").read_text())
        assert len(poses["poses"]) == 3

    def test_missing_glb_exits_1(self, tmp_path, capsys):
        code = main(["render", "--glb", str(tmp_path / "ghost.glb"), "--out", str(tmp_path)])
        assert code == 1
        assert "ghost.glb" in capsys.readouterr().err


class TestChamferCommand:
    def test_comparison_csv_and_json(self, tmp_path, capsys):
        for sub in ("ref", "a", "b"):
            (tmp_path / sub).mkdir()
        for name in ("owl", "lamp"):
            write_cube(tmp_path / "ref" / f"{name}.glb")
            write_cube(tmp_path / "a" / f"{name}.glb")  # exact copy
            # Anisotropic stretch: survives the per-cloud normalization.
            write_cube(tmp_path / "b" / f"{name}.glb", scale=(2.5, 1.0, 1.0))
        out_csv = tmp_path / "cmp.csv"
        out_json = tmp_path / "cmp.json"
        fig = tmp_path / "cmp.png"
        code = main(
            [
                "chamfer",
                "--ref", str(tmp_path / "ref"),
                "--a", str(tmp_path / "a"),
                "--b", str(tmp_path / "b"),
                "--points", "500",
                "--seed", "7",
                "--out", str(out_csv),
                "--json", str(out_json),
                "--fig", str(fig),
            ]
        )
        assert code == 0
        lines = out_csv.read_text().splitlines()
        assert lines[0] == "object_name,cd_a,cd_b,winner"
        assert lines[-1].startswith("# aggregate")
        payload = json.loads(out_json.read_text())
        # A is the reference geometry; B is stretched, so A wins every row.
        assert payload["aggregate"]["a_wins"] == 2
        assert fig.stat().st_size > 0

    def test_name_mismatch_exits_1(self, tmp_path, capsys):
        for sub in ("ref", "a", "b"):
            (tmp_path / sub).mkdir()
        write_cube(tmp_path / "ref" / "owl.glb")
        write_cube(tmp_path / "a" / "lamp.glb")
        write_cube(tmp_path / "b" / "owl.glb")
        code = main(
            ["chamfer", "--ref", str(tmp_path / "ref"), "--a", str(tmp_path / "a"), "--b", str(tmp_path / "b")]
        )
        assert code == 1
        assert "mismatch" in capsys.readouterr().err


class TestTrainPredictEval:
    @pytest.fixture
    def labeled_dir(self, tmp_path):
        from meshcurate.labels import MANIFEST_TAG_ORDER, BinaryTagSet

        glb_dir = tmp_path / "meshes"
        glb_dir.mkdir()
        records = []
        for i in range(8):
            object_id = f"obj-{i}"
            write_cube(glb_dir / f"{object_id}.glb", scale=1.0 + 0.1 * i)
            tags = BinaryTagSet(**{t: bool((i + k) % 2) for k, t in enumerate(MANIFEST_TAG_ORDER)})
            records.append(
                make_human_record(object_id=object_id, score=QualityScore(i % 4), tags=tags)
            )
        manifest = tmp_path / "labels.jsonl"
        manifest.write_text("\n".join(serialize_record(r) for r in records) + "\n")
        return glb_dir, manifest

    def test_train_predict_eval_pipeline(self, tmp_path, labeled_dir, capsys):
        glb_dir, manifest = labeled_dir
        config = tmp_path / "train.toml"
        config.write_text(
            "n_views = 2\nepochs = 1\nbatch_size = 4\nlearning_rate = 0.01\nseed = 3\n"
            "rnn_hidden = 8\nattention_dim = 8\nmetadata_dim = 4\n\n"
            '[backbone]\nkind = "tiny_scratch"\nfeature_dim = 8\n'
        )
        ckpt = tmp_path / "model.bin"
        fig = tmp_path / "loss.png"
        code = main(
            [
                "train",
                "--manifest", str(manifest),
                "--glb-dir", str(glb_dir),
                "--config", str(config),
                "--out", str(ckpt),
                "--res", "16x16",
                "--fig", str(fig),
            ]
        )
        assert code == 0, capsys.readouterr().err
        assert ckpt.is_file()
        assert fig.stat().st_size > 0

        preds = tmp_path / "preds.jsonl"
        code = main(
            [
                "predict",
                "--model", str(ckpt),
                "--glb-dir", str(glb_dir),
                "--out", str(preds),
                "--res", "16x16",
                "--seed", "3",
                "--timestamp", "2026-01-01T00:00:00Z",
            ]
        )
        assert code == 0, capsys.readouterr().err
        records = list(read_manifest(preds.read_text().splitlines()))
        assert len(records) == 8
        assert all(r.source == "model" for r in records)

        # Reproducibility: identical argv -> byte-identical output.
        preds2 = tmp_path / "preds2.jsonl"
        main(
            [
                "predict",
                "--model", str(ckpt),
                "--glb-dir", str(glb_dir),
                "--out", str(preds2),
                "--res", "16x16",
                "--seed", "3",
                "--timestamp", "2026-01-01T00:00:00Z",
            ]
        )
        assert preds.read_bytes() == preds2.read_bytes()

        report_json = tmp_path / "report.json"
        code = main(
            [
                "eval",
                "--model", str(ckpt),
                "--manifest", str(manifest),
                "--glb-dir", str(glb_dir),
                "--res", "16x16",
                "--json", str(report_json),
            ]
        )
        assert code == 0, capsys.readouterr().err
        payload = json.loads(report_json.read_text())
        assert payload["n_samples"] == 8

    def test_predict_missing_model_names_path(self, tmp_path, capsys):
        code = main(["predict", "--model", str(tmp_path / "nope.bin"), "--glb", str(tmp_path / "x.glb")])
        assert code == 1
        assert "nope.bin" in capsys.readouterr().err
