"""Config validation, simulation, training and evaluation through the
operational surface, including determinism and exit codes."""

import csv

import numpy as np
import pytest
import yaml

from equimage import images
from equimage.checkpoint import load_checkpoint
from equimage.cli import main
from equimage.config import ConfigError, load_config
from equimage.dataset import (
    generate_scene,
    load_manifest,
    simulate_dataset,
    write_demo_corpus,
)
from equimage.evalrun import evaluate
from equimage.models import ReconNet
from equimage.train import init_model, train


def write_yaml(path, payload):
    path.write_text(yaml.safe_dump(payload))
    return path


def base_inpaint_config(tmp_path, **overrides):
    cfg = {
        "task": "inpainting",
        "seed": 5,
        "output_dir": str(tmp_path / "run"),
        "dataset": {
            "source_dir": str(tmp_path / "src"),
            "tile_size": 32,
            "channels": 3,
            "train_fraction": 0.67,
            "keep_reference": True,
        },
        "operator": {"mask_fraction": 0.7, "noise": {"kind": "none"}},
        "model": {"hidden_channels": 4, "blocks": 1},
        "loss": {"preset": "mc", "group": {"kind": "pan_tilt", "alpha": 0.1}},
        "optimizer": {"epochs": 2, "decay": 0.99},
        "eval": {"metrics": ["psnr", "ssim"]},
    }
    cfg.update(overrides)
    return cfg


def base_pan_config(tmp_path, **overrides):
    cfg = {
        "task": "pansharpening",
        "seed": 5,
        "output_dir": str(tmp_path / "run"),
        "dataset": {
            "source_dir": str(tmp_path / "src"),
            "tile_size": 48,
            "channels": 4,
            "train_fraction": 0.75,
            "keep_reference": True,
        },
        "operator": {"factor": 4, "mtf_sigma": 2.0, "kernel_size": 17,
                     "noise": {"kind": "none"}},
        "model": {"hidden_channels": 4, "blocks": 1, "highpass_size": 7},
        "loss": {"preset": "mc+tv", "group": {"kind": "pan_tilt", "alpha": 0.1}},
        "optimizer": {"epochs": 1, "decay": 0.99},
        "eval": {},
    }
    cfg.update(overrides)
    return cfg


class TestConfig:
    def test_valid_config_loads(self, tmp_path):
        path = write_yaml(tmp_path / "c.yaml", base_inpaint_config(tmp_path))
        cfg = load_config(path)
        assert cfg.task == "inpainting" and cfg.seed == 5

    def test_unknown_key_rejected(self, tmp_path):
        raw = base_inpaint_config(tmp_path)
        raw["dataset"]["tile_sz"] = 32
        path = write_yaml(tmp_path / "c.yaml", raw)
        with pytest.raises(ConfigError):
            load_config(path)

    def test_bad_preset_rejected(self, tmp_path):
        raw = base_inpaint_config(tmp_path)
        raw["loss"]["preset"] = "adversarial"
        with pytest.raises(ConfigError):
            load_config(write_yaml(tmp_path / "c.yaml", raw))

    def test_tv_for_inpainting_rejected(self, tmp_path):
        raw = base_inpaint_config(tmp_path)
        raw["loss"]["preset"] = "mc+tv"
        with pytest.raises(ConfigError):
            load_config(write_yaml(tmp_path / "c.yaml", raw))

    def test_factor_must_divide_tile(self, tmp_path):
        raw = base_pan_config(tmp_path)
        raw["dataset"]["tile_size"] = 50
        with pytest.raises(ConfigError):
            load_config(write_yaml(tmp_path / "c.yaml", raw))

    def test_sure_requires_noise(self, tmp_path):
        raw = base_inpaint_config(tmp_path)
        raw["loss"]["preset"] = "sure+ei"
        with pytest.raises(ConfigError):
            load_config(write_yaml(tmp_path / "c.yaml", raw))

    def test_degrees_to_radians(self, tmp_path):
        raw = base_inpaint_config(tmp_path)
        raw["loss"]["group"] = {"kind": "pan_tilt", "alpha": 1.0, "pan_tilt_deg": 18.0}
        cfg = load_config(write_yaml(tmp_path / "c.yaml", raw))
        spec = cfg.group_spec()
        assert abs(spec.pan_tilt_max - np.radians(18.0)) < 1e-12

    def test_validate_exit_codes(self, tmp_path, capsys):
        good = write_yaml(tmp_path / "good.yaml", base_inpaint_config(tmp_path))
        assert main(["validate", "--config", str(good)]) == 0
        bad = tmp_path / "bad.yaml"
        bad.write_text("task: teleportation\n")
        assert main(["validate", "--config", str(bad)]) == 2
        assert main(["validate", "--config", str(tmp_path / "missing.yaml")]) == 2


class TestSimulate:
    def test_inpainting_outputs(self, tmp_path):
        write_demo_corpus(tmp_path / "src", count=6, size=40, channels=3, seed=1)
        cfg = load_config(write_yaml(tmp_path / "c.yaml", base_inpaint_config(tmp_path)))
        manifest = simulate_dataset(cfg)
        assert len(manifest.tiles) == 6
        assert len(manifest.split("train")) == 4
        assert len(manifest.split("test")) == 2
        kept = []
        for tile in manifest.tiles:
            mask = images.load_mask_png(manifest.path(tile, "mask"))
            assert mask.shape == (32, 32)
            kept.append(mask.mean())
        assert abs(np.mean(kept) - 0.3) < 0.03

    def test_split_disjoint_and_ids_unique(self, tmp_path):
        write_demo_corpus(tmp_path / "src", count=6, size=40, channels=3, seed=1)
        cfg = load_config(write_yaml(tmp_path / "c.yaml", base_inpaint_config(tmp_path)))
        manifest = simulate_dataset(cfg)
        train_ids = {t.tile_id for t in manifest.split("train")}
        test_ids = {t.tile_id for t in manifest.split("test")}
        assert not (train_ids & test_ids)
        assert len(train_ids | test_ids) == len(manifest.tiles)

    def test_pansharpening_shapes(self, tmp_path):
        write_demo_corpus(tmp_path / "src", count=4, size=48, channels=4, seed=2)
        cfg = load_config(write_yaml(tmp_path / "c.yaml", base_pan_config(tmp_path)))
        manifest = simulate_dataset(cfg)
        tile = manifest.tiles[0]
        ms = images.load_tiff(manifest.path(tile, "ms"))
        pan = images.load_tiff(manifest.path(tile, "pan"))
        assert ms.shape == (4, 12, 12)
        assert pan.shape == (1, 48, 48)

    def test_rerun_byte_identical(self, tmp_path):
        write_demo_corpus(tmp_path / "src", count=4, size=40, channels=3, seed=3)
        cfg = load_config(write_yaml(tmp_path / "c.yaml", base_inpaint_config(tmp_path)))
        manifest = simulate_dataset(cfg)
        blobs1 = {
            p.name: p.read_bytes() for p in sorted(manifest.root.iterdir())
        }
        simulate_dataset(cfg)
        blobs2 = {
            p.name: p.read_bytes() for p in sorted(manifest.root.iterdir())
        }
        assert blobs1 == blobs2

    def test_scene_generator_properties(self, rng):
        scene = generate_scene(rng, 48, 4)
        assert scene.shape == (4, 48, 48)
        assert scene.min() >= 0.0 and scene.max() <= 1.0
        assert scene.std() > 0.05  # has actual structure


class TestTrain:
    def test_zero_epochs_checkpoint_equals_init(self, tmp_path):
        write_demo_corpus(tmp_path / "src", count=4, size=40, channels=3, seed=4)
        raw = base_inpaint_config(tmp_path)
        raw["optimizer"]["epochs"] = 0
        cfg = load_config(write_yaml(tmp_path / "c.yaml", raw))
        simulate_dataset(cfg)
        result = train(cfg)
        loaded = load_checkpoint(result.final_checkpoint)
        init = init_model(cfg).params
        for name in init:
            np.testing.assert_array_equal(loaded[name], init[name])

    def test_mc_loss_trends_down(self, tmp_path):
        write_demo_corpus(tmp_path / "src", count=5, size=40, channels=3, seed=5)
        raw = base_inpaint_config(tmp_path)
        raw["optimizer"]["epochs"] = 30
        cfg = load_config(write_yaml(tmp_path / "c.yaml", raw))
        simulate_dataset(cfg)
        result = train(cfg)
        with result.log_path.open() as fh:
            rows = list(csv.DictReader(fh))
        losses = np.array([float(r["mc"]) for r in rows])
        smooth = np.convolve(losses, np.ones(5) / 5, mode="valid")
        assert smooth[-1] < smooth[0]

    def test_log_has_per_term_columns(self, tmp_path):
        write_demo_corpus(tmp_path / "src", count=4, size=40, channels=3, seed=6)
        raw = base_inpaint_config(tmp_path)
        raw["loss"]["preset"] = "mc+ei"
        cfg = load_config(write_yaml(tmp_path / "c.yaml", raw))
        simulate_dataset(cfg)
        result = train(cfg)
        header = result.log_path.read_text().splitlines()[0].split(",")
        assert {"epoch", "lr", "mc", "ei", "total"} <= set(header)

    @pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
    def test_numeric_failure_exit_code(self, tmp_path):
        write_demo_corpus(tmp_path / "src", count=4, size=40, channels=3, seed=7)
        raw = base_inpaint_config(tmp_path)
        raw["optimizer"]["lr"] = 1e30
        raw["optimizer"]["epochs"] = 8
        path = write_yaml(tmp_path / "c.yaml", raw)
        cfg = load_config(path)
        simulate_dataset(cfg)
        assert main(["train", "--config", str(path)]) == 3


class TestEvaluate:
    def test_zero_weight_model_is_linear_baseline(self, tmp_path):
        from equimage.autodiff import upsample_bilinear_array
        from equimage.checkpoint import save_checkpoint
        from equimage.dataset import load_tile_measurement

        write_demo_corpus(tmp_path / "src", count=4, size=48, channels=4, seed=8)
        cfg = load_config(write_yaml(tmp_path / "c.yaml", base_pan_config(tmp_path)))
        manifest = simulate_dataset(cfg)
        zero = init_model(cfg).zeroed()
        ckpt = tmp_path / "zero.ckpt"
        save_checkpoint(ckpt, zero.params)
        evaluate(cfg, ckpt, manifest)
        tile = manifest.split("test")[0]
        y_ms, _ = load_tile_measurement(manifest, tile, "pansharpening")
        recon = images.load_image(
            tmp_path / "run" / "reconstructions" / f"{tile.tile_id}.png"
        )
        upsampled = np.clip(upsample_bilinear_array(y_ms, 4), 0, 1)[:3]
        assert np.abs(recon - upsampled).max() < 1.0 / 255.0 + 1e-9

    def test_metrics_csv_layout(self, tmp_path):
        write_demo_corpus(tmp_path / "src", count=5, size=40, channels=3, seed=9)
        cfg = load_config(write_yaml(tmp_path / "c.yaml", base_inpaint_config(tmp_path)))
        simulate_dataset(cfg)
        result = train(cfg)
        csv_path = evaluate(cfg, result.final_checkpoint)
        with csv_path.open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["tile_id", "psnr", "ssim", "ergas", "qnr", "d_lambda", "d_s"]
        assert rows[-1][0] == "mean"
        n_test = len(load_manifest(tmp_path / "run" / "data" / "manifest.json").split("test"))
        assert len(rows) == 1 + n_test + 1
        assert rows[1][3] == ""  # no ergas for inpainting

    def test_checkpoint_model_mismatch_rejected(self, tmp_path):
        from equimage.checkpoint import save_checkpoint

        write_demo_corpus(tmp_path / "src", count=4, size=40, channels=3, seed=10)
        cfg = load_config(write_yaml(tmp_path / "c.yaml", base_inpaint_config(tmp_path)))
        simulate_dataset(cfg)
        bad = tmp_path / "bad.ckpt"
        save_checkpoint(bad, {"w": np.zeros((1, 1), dtype=np.float32)})
        with pytest.raises(ValueError):
            evaluate(cfg, bad)


class TestDeterminism:
    def test_full_pipeline_byte_identical(self, tmp_path):
        write_demo_corpus(tmp_path / "src", count=4, size=40, channels=3, seed=11)

        def run(out_name):
            raw = base_inpaint_config(tmp_path)
            raw["output_dir"] = str(tmp_path / out_name)
            raw["loss"]["preset"] = "mc+ei"
            raw["optimizer"]["epochs"] = 2
            cfg = load_config(write_yaml(tmp_path / f"{out_name}.yaml", raw))
            simulate_dataset(cfg)
            result = train(cfg)
            csv_path = evaluate(cfg, result.final_checkpoint)
            return (csv_path.read_bytes(), result.log_path.read_bytes(),
                    result.final_checkpoint.read_bytes())

        assert run("run_a") == run("run_b")


class TestReport:
    def test_aggregate_sorting_and_empty_cells(self, tmp_path):
        run1 = tmp_path / "ei_run"
        run2 = tmp_path / "mc_run"
        for run_dir, qnr_val in ((run1, "0.91000000"), (run2, "0.73000000")):
            run_dir.mkdir()
            (run_dir / "metrics.csv").write_text(
                "tile_id,psnr,ssim,ergas,qnr,d_lambda,d_s\n"
                f"tile_0000,20.0,0.5,1.0,{qnr_val},0.1,0.1\n"
                f"mean,20.0,0.5,,{qnr_val},0.1,0.1\n"
            )
        out = tmp_path / "rep" / "report.csv"
        assert main(["report", str(run2), str(run1), "--out", str(tmp_path / "rep")]) == 0
        with out.open() as fh:
            rows = list(csv.reader(fh))
        assert rows[1][0] == "ei_run"  # sorted by qnr descending
        assert rows[1][3] == ""        # missing ergas stays empty

    def test_single_run(self, tmp_path):
        run1 = tmp_path / "solo"
        run1.mkdir()
        (run1 / "metrics.csv").write_text(
            "tile_id,psnr,ssim,ergas,qnr,d_lambda,d_s\nmean,10.0,0.4,,,,\n"
        )
        assert main(["report", str(run1), "--out", str(tmp_path / "rep")]) == 0
        rows = (tmp_path / "rep" / "report.csv").read_text().splitlines()
        assert len(rows) == 2

    def test_missing_metrics_file_is_config_error(self, tmp_path):
        empty = tmp_path / "empty_run"
        empty.mkdir()
        assert main(["report", str(empty), "--out", str(tmp_path / "rep")]) == 2


class TestPreview:
    def test_grid_written_and_deterministic(self, tmp_path, rng):
        from equimage.preview import preview_grid

        img = generate_scene(rng, 32, 3)
        g1 = preview_grid(img, seed=4)
        g2 = preview_grid(img, seed=4)
        np.testing.assert_array_equal(g1, g2)

    def test_identity_tile_first(self, rng):
        from equimage.preview import preview_grid

        img = generate_scene(rng, 32, 3)
        grid = preview_grid(img, seed=0)
        np.testing.assert_allclose(grid[:, :32, :32], img, atol=1e-12)

    def test_cli_preview(self, tmp_path, rng):
        img = generate_scene(rng, 32, 3)
        images.save_tiff(tmp_path / "img.tiff", img)
        code = main([
            "preview-transforms", "--image", str(tmp_path / "img.tiff"),
            "--out", str(tmp_path / "prev"), "--seed", "3",
        ])
        assert code == 0
        assert (tmp_path / "prev" / "transforms.png").is_file()
