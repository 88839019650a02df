import json

import numpy as np
import pytest

from texdiff.cli import main
from texdiff.imgio import ImageIOError, load_image, save_image
from texdiff.rtfio import read_rtf


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("scenes")
    assert main(["synth", "--seed", "3", "--n", "2", "--size", "32", "--out", str(out)]) == 0
    return out


class TestImageIO:
    def test_rgb8_scaling(self, tmp_path):
        img = np.zeros((3, 4, 4))
        img[:, 0, 0] = 1.0
        path = tmp_path / "x.png"
        save_image(path, img)
        loaded = load_image(path, kind="rgb8")
        assert loaded[0, 0, 0] == 1.0
        assert loaded[0, 1, 1] == 0.0

    def test_depth16_scaling(self, tmp_path):
        img = np.zeros((1, 4, 4))
        path = tmp_path / "d.png"
        save_image(path, img, bit16=True)
        loaded = load_image(path, kind="depth16")
        assert loaded.min() == 0.0 and loaded.max() == 0.0

    def test_quantized_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = np.round(rng.uniform(size=(3, 8, 8)) * 255) / 255
        path = tmp_path / "q.png"
        save_image(path, img)
        np.testing.assert_allclose(load_image(path, kind="rgb8"), img, atol=1e-12)

    def test_missing_file(self):
        with pytest.raises(ImageIOError, match="no such file"):
            load_image("/nonexistent/zz.png")


class TestCLI:
    def test_extract_then_diffuse(self, scene_dir, tmp_path):
        tex = tmp_path / "t.rtf"
        rc = main(["extract", "--alpha", "0.3", "--size", "12x12",
                   "--in", str(scene_dir / "scene_000_rgb.png"), "--out", str(tex)])
        assert rc == 0
        assert read_rtf(tex).shape == (3, 12, 12)
        enh = tmp_path / "e.rtf"
        rc = main(["diffuse", "--depth", str(scene_dir / "scene_000_depth.png"),
                   "--texture", str(tex), "--steps", "auto", "--out", str(enh),
                   "--trace", str(tmp_path / "trace")])
        assert rc == 0
        assert read_rtf(enh).shape == (24, 12, 12)
        assert len(list((tmp_path / "trace").glob("*.rtf"))) == 5

    def test_ssim_command(self, scene_dir, tmp_path, capsys):
        tex = tmp_path / "t.rtf"
        main(["extract", "--in", str(scene_dir / "scene_000_rgb.png"), "--out", str(tex)])
        rc = main(["ssim", "--a", str(tex), "--b", str(tex)])
        out = capsys.readouterr().out
        assert rc == 0
        fields = dict(line.split("=", 1) for line in out.strip().splitlines())
        assert float(fields["ssim"]) == 1.0
        assert float(fields["sc_loss"]) == 0.0

    def test_pipeline_report_deterministic(self, scene_dir, tmp_path):
        reports = []
        for run in ("r1", "r2"):
            out_dir = tmp_path / run
            out_dir.mkdir()
            rc = main(["pipeline",
                       "--rgb", str(scene_dir / "scene_000_rgb.png"),
                       "--depth", str(scene_dir / "scene_000_depth.png"),
                       "--gt", str(scene_dir / "scene_000_mask.png"),
                       "--seed", "5",
                       "--out", str(out_dir / "pred.png"),
                       "--report", str(out_dir / "report.json")])
            assert rc == 0
            report = json.loads((out_dir / "report.json").read_text())
            report.pop("timing_s")
            reports.append(json.dumps(report, sort_keys=True))
            for name in ("texture.rtf", "enhanced.rtf", "params.rtfz", "pred.png"):
                assert (out_dir / name).exists() or name == "pred.png"
            assert (out_dir / "pred.png").exists()
        assert reports[0] == reports[1]

    def test_pipeline_degenerate_constant_inputs(self, tmp_path):
        gray = np.full((3, 32, 32), 0.5)
        depth = np.full((1, 32, 32), 0.5)
        save_image(tmp_path / "gray.png", gray)
        save_image(tmp_path / "depth.png", depth)
        rc = main(["pipeline", "--rgb", str(tmp_path / "gray.png"),
                   "--depth", str(tmp_path / "depth.png"),
                   "--out", str(tmp_path / "pred.png"),
                   "--report", str(tmp_path / "report.json")])
        assert rc == 0
        pred = load_image(tmp_path / "pred.png", kind="depth8")
        assert np.isfinite(pred).all()
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["schema"] == 1

    def test_eval_command(self, scene_dir, tmp_path, capsys):
        pred_dir = tmp_path / "pred"
        gt_dir = tmp_path / "gt"
        pred_dir.mkdir()
        gt_dir.mkdir()
        for i in range(2):
            mask = load_image(scene_dir / f"scene_{i:03d}_mask.png", kind="depth8")
            save_image(pred_dir / f"{i}.png", mask)
            save_image(gt_dir / f"{i}.png", mask)
        rc = main(["eval", "--pred", str(pred_dir), "--gt", str(gt_dir),
                   "--metrics", "mae,fbeta"])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        agg = json.loads(lines[-1])["aggregate"]
        assert agg["mae"] == 0.0
        assert agg["fbeta"] == 1.0

    def test_gradcheck_command(self, capsys):
        assert main(["gradcheck", "--op", "bce", "--seed", "2"]) == 0
        assert "[pass]" in capsys.readouterr().out

    def test_train_toy_command(self, tmp_path, capsys):
        rc = main(["train-toy", "--n-scenes", "2", "--size", "32", "--steps", "4",
                   "--out", str(tmp_path / "run")])
        assert rc == 0
        csv = (tmp_path / "run" / "losses.csv").read_text().splitlines()
        assert csv[0] == "step,l_sc,l_seg,l_total"
        assert len(csv) == 5
        assert (tmp_path / "run" / "params.rtfz").exists()

    def test_sweep_command(self, tmp_path, capsys):
        rc = main(["sweep", "--parameter", "lambda", "--values", "0,0.02",
                   "--n-scenes", "1", "--size", "32", "--out", str(tmp_path / "rows.json")])
        assert rc == 0
        rows = json.loads((tmp_path / "rows.json").read_text())
        assert [r["value"] for r in rows] == [0.0, 0.02]
        assert all(r["status"] == "ok" for r in rows)

    def test_error_exits_nonzero_with_one_line(self, capsys):
        rc = main(["extract", "--in", "/does/not/exist.png", "--out", "/tmp/x.rtf"])
        assert rc == 1
        err = capsys.readouterr().err.strip()
        assert err.startswith("error:") and "\n" not in err

    def test_config_file_drives_pipeline(self, scene_dir, tmp_path):
        cfg = tmp_path / "cfg.toml"
        cfg.write_text('alpha = 0.4\nkernel = 5\nlambda = 0.01\nseed = 9\n')
        rc = main(["pipeline", "--config", str(cfg),
                   "--rgb", str(scene_dir / "scene_001_rgb.png"),
                   "--depth", str(scene_dir / "scene_001_depth.png"),
                   "--out", str(tmp_path / "p.png"),
                   "--report", str(tmp_path / "r.json")])
        assert rc == 0
        report = json.loads((tmp_path / "r.json").read_text())
        assert report["config"]["alpha"] == 0.4
        assert report["config"]["kernel"] == 5
        assert report["config"]["seed"] == 9
