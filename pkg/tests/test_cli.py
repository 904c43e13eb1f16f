import json

import numpy as np
import pytest

from ebmrec import formats
from ebmrec.cli import main
from ebmrec.energy import init_params
from ebmrec.numerics import RandomStream


@pytest.fixture
def tiny_config(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(
        "[experiment]\nseed = 5\n\n"
        "[data]\nheight = 16\nwidth = 16\ncount = 6\n\n"
        "[model]\nwidths = 6,8\nblocks = 1,1\n\n"
        "[train]\niterations = 2\nbatch_size = 2\nlangevin_steps = 2\nbuffer_capacity = 50\n\n"
        "[sample]\nlevels = 2\nsteps = 2\n\n"
        "[mask]\npattern = random2d\nr = 2.0\ncenter_fraction = 0.05\n"
    )
    return p


def run(*argv):
    return main([str(a) for a in argv])


class TestPhantomCommand:
    def test_writes_files_and_manifest(self, tiny_config, tmp_path):
        out = tmp_path / "ph"
        assert run("phantom", "--config", tiny_config, "--out", out) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["images"]) == 6
        for entry in manifest["images"]:
            assert (out / entry["file"]).exists()
        splits = [e["split"] for e in manifest["images"]]
        assert splits.count("train") == 5 and splits.count("test") == 1

    def test_rerun_byte_identical(self, tiny_config, tmp_path):
        out1, out2 = tmp_path / "p1", tmp_path / "p2"
        run("phantom", "--config", tiny_config, "--out", out1)
        run("phantom", "--config", tiny_config, "--out", out2)
        for f in sorted(out1.iterdir()):
            assert f.read_bytes() == (out2 / f.name).read_bytes(), f.name

    def test_corrupt_output_dir_fails_without_partial_outputs(self, tiny_config, tmp_path, capsys):
        out = tmp_path / "blocked"
        out.write_text("a file where the output directory should go")
        code = run("phantom", "--config", tiny_config, "--out", out)
        assert code != 0
        assert "error:" in capsys.readouterr().err
        # the blocking file is untouched and no outputs appeared anywhere
        assert out.read_text().startswith("a file")
        assert sorted(p.name for p in tmp_path.iterdir()) == ["blocked", "tiny.ini"]


class TestMaskCommand:
    def test_full_mask_file(self, tiny_config, tmp_path, capsys):
        out = tmp_path / "full.mask"
        assert run("mask", "--config", tiny_config, "--set", "mask.r=1", "--out", out) == 0
        mask = formats.load_mask(out)
        assert mask.keep.all()
        assert "kept fraction" in capsys.readouterr().out

    def test_roundtrip_and_fraction_report(self, tiny_config, tmp_path, capsys):
        out = tmp_path / "m.mask"
        assert run("mask", "--config", tiny_config, "--R", "2", "--out", out) == 0
        mask = formats.load_mask(out)
        assert abs(mask.kept_fraction - 0.5) <= 0.075
        assert "0.5" in capsys.readouterr().out


class TestTrainCommand:
    def test_zero_iterations_checkpoint_is_initialization(self, tiny_config, tmp_path):
        out = tmp_path / "tr"
        assert run(
            "train", "--config", tiny_config, "--set", "train.iterations=0", "--out", out
        ) == 0
        params, extras = formats.load_checkpoint(out / "checkpoint.ebmw")
        assert int(extras["iteration"][0]) == 0
        from ebmrec.config import ExperimentConfig

        cfg = ExperimentConfig.load(tiny_config)
        want = init_params(cfg.architecture(), RandomStream(5, stream=2).child(0))
        for k in want.tensors:
            np.testing.assert_array_equal(params.tensors[k], want.tensors[k])

    def test_identical_seed_identical_checkpoint(self, tiny_config, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run("train", "--config", tiny_config, "--out", a)
        run("train", "--config", tiny_config, "--out", b)
        assert (a / "checkpoint.ebmw").read_bytes() == (b / "checkpoint.ebmw").read_bytes()

    def test_resume_continues_iteration_counter(self, tiny_config, tmp_path):
        out = tmp_path / "tr"
        run("train", "--config", tiny_config, "--out", out)
        assert run(
            "train",
            "--config",
            tiny_config,
            "--out",
            out,
            "--resume",
            out / "checkpoint.ebmw",
        ) == 0
        _, extras = formats.load_checkpoint(out / "checkpoint.ebmw")
        assert int(extras["iteration"][0]) == 4
        log = (out / "train_log.csv").read_text().strip().splitlines()
        assert len(log) == 1 + 4  # header + both runs
        assert log[1].startswith("0,") and log[-1].startswith("3,")

    def test_trains_from_manifest(self, tiny_config, tmp_path):
        ph = tmp_path / "ph"
        run("phantom", "--config", tiny_config, "--out", ph)
        out = tmp_path / "tr"
        assert run(
            "train",
            "--config",
            tiny_config,
            "--set",
            f"data.manifest={ph / 'manifest.json'}",
            "--out",
            out,
        ) == 0
        assert (out / "checkpoint.ebmw").exists()


@pytest.fixture
def trained(tiny_config, tmp_path):
    ph = tmp_path / "ph"
    tr = tmp_path / "tr"
    mask = tmp_path / "m.mask"
    run("phantom", "--config", tiny_config, "--out", ph)
    run("train", "--config", tiny_config, "--out", tr)
    run("mask", "--config", tiny_config, "--out", mask)
    return {
        "config": tiny_config,
        "image": ph / "phantom_0005.cimg",
        "checkpoint": tr / "checkpoint.ebmw",
        "mask": mask,
    }


class TestReconCommand:
    def test_full_mask_hard_dc_hits_cap(self, trained, tmp_path):
        full = tmp_path / "full.mask"
        run("mask", "--config", trained["config"], "--set", "mask.r=1", "--out", full)
        out = tmp_path / "rc"
        assert run(
            "recon",
            "--config",
            trained["config"],
            "--checkpoint",
            trained["checkpoint"],
            "--image",
            trained["image"],
            "--mask",
            full,
            "--lam",
            "0",
            "--out",
            out,
        ) == 0
        rows = (out / "metrics.csv").read_text().strip().splitlines()
        assert rows[0] == "image_id,mask,R,psnr_db,ssim"
        recon_row = rows[1].split(",")
        assert recon_row[0] == "recon"
        assert float(recon_row[3]) == 99.0

    def test_both_inits_run(self, trained, tmp_path):
        for init in ("zero_filled", "uniform_noise"):
            out = tmp_path / f"rc_{init}"
            assert run(
                "recon",
                "--config",
                trained["config"],
                "--checkpoint",
                trained["checkpoint"],
                "--image",
                trained["image"],
                "--mask",
                trained["mask"],
                "--init",
                init,
                "--out",
                out,
            ) == 0
            assert (out / "metrics.csv").exists()

    def test_outputs_and_png_headers(self, trained, tmp_path):
        import io

        from PIL import Image

        out = tmp_path / "rc"
        run(
            "recon",
            "--config",
            trained["config"],
            "--checkpoint",
            trained["checkpoint"],
            "--image",
            trained["image"],
            "--mask",
            trained["mask"],
            "--out",
            out,
        )
        for name in ("recon.cimg", "zero_filled.cimg", "trace.csv", "metrics.csv",
                     "magnitude.png", "error.png", "report.json", "config.echo.ini"):
            assert (out / name).exists(), name
        pil = Image.open(io.BytesIO((out / "error.png").read_bytes()))
        assert pil.text["error_scale"] == "5"
        trace = (out / "trace.csv").read_text().strip().splitlines()
        assert trace[0] == "iter,psnr_db"
        assert len(trace) == 1 + 2 * 2  # levels * steps

    def test_rerun_byte_identical_outputs(self, trained, tmp_path):
        outs = [tmp_path / "r1", tmp_path / "r2"]
        for out in outs:
            run(
                "recon",
                "--config",
                trained["config"],
                "--checkpoint",
                trained["checkpoint"],
                "--image",
                trained["image"],
                "--mask",
                trained["mask"],
                "--out",
                out,
            )
        for name in ("recon.cimg", "zero_filled.cimg", "trace.csv", "metrics.csv",
                     "magnitude.png", "error.png", "config.echo.ini"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name

    def test_missing_checkpoint_fails(self, trained, tmp_path, capsys):
        code = run(
            "recon",
            "--config",
            trained["config"],
            "--checkpoint",
            tmp_path / "nope.ebmw",
            "--image",
            trained["image"],
            "--mask",
            trained["mask"],
            "--out",
            tmp_path / "rc",
        )
        assert code != 0
        assert "nope.ebmw" in capsys.readouterr().err


class TestEvalCommand:
    def test_identical_files(self, trained, tmp_path, capsys):
        assert run("eval", trained["image"], trained["image"]) == 0
        out = capsys.readouterr().out
        row = out.strip().splitlines()[1].split(",")
        assert float(row[3]) == 99.0
        assert float(row[4]) == 1.0

    def test_missing_file_reports_path(self, trained, tmp_path, capsys):
        missing = tmp_path / "missing.cimg"
        assert run("eval", missing, trained["image"]) != 0
        assert "missing.cimg" in capsys.readouterr().err

    def test_manifest_batch_mode(self, trained, tmp_path, capsys):
        ph = tmp_path / "ph"
        results = tmp_path / "results"
        results.mkdir()
        manifest = json.loads((ph / "manifest.json").read_text())
        test_entries = [e for e in manifest["images"] if e["split"] == "test"]
        for e in test_entries:
            img = formats.load_image(ph / e["file"])
            stem = e["file"].rsplit(".", 1)[0]
            formats.save_image(results / f"{stem}_recon.cimg", img)
        csv_out = tmp_path / "batch.csv"
        assert run(
            "eval",
            "--manifest",
            ph / "manifest.json",
            "--results",
            results,
            "--out",
            csv_out,
        ) == 0
        rows = csv_out.read_text().strip().splitlines()
        assert len(rows) == 1 + len(test_entries)


class TestSampleCommand:
    def test_writes_samples(self, trained, tmp_path):
        out = tmp_path / "sm"
        assert run(
            "sample",
            "--config",
            trained["config"],
            "--checkpoint",
            trained["checkpoint"],
            "--count",
            "2",
            "--out",
            out,
        ) == 0
        assert (out / "sample_000.cimg").exists()
        assert (out / "sample_001.cimg").exists()
        assert (out / "sample_000.png").exists()

    def test_deterministic(self, trained, tmp_path):
        outs = [tmp_path / "s1", tmp_path / "s2"]
        for out in outs:
            run(
                "sample",
                "--config",
                trained["config"],
                "--checkpoint",
                trained["checkpoint"],
                "--count",
                "1",
                "--out",
                out,
            )
        assert (outs[0] / "sample_000.cimg").read_bytes() == (outs[1] / "sample_000.cimg").read_bytes()
