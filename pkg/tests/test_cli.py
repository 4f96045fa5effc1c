import pytest

from support import TINY_CONFIG, config_text, write_images
from trifuse.core.checkpoint import load_checkpoint
from trifuse.main import main
from trifuse.services.imaging import load_image, read_manifest

LEVELS = ("light", "moderate", "dense")


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.conf"
    path.write_text(config_text(TINY_CONFIG), encoding="utf-8")
    return str(path)


@pytest.fixture
def dataset(tmp_path, image_dir, config_file):
    out = tmp_path / "ds"
    assert main(["synth", "--input", str(image_dir), "--out", str(out), "--config", config_file]) == 0
    return out


@pytest.fixture
def checkpoint(tmp_path, dataset, config_file):
    path = tmp_path / "model.trif"
    argv = ["train", "--manifest", str(dataset / "manifest.json"), "--config", config_file,
            "--out", str(path), "--iters", "0"]
    assert main(argv) == 0
    return path


def test_synth_writes_every_level_and_a_manifest(dataset):
    for level in LEVELS:
        assert len(list((dataset / level).glob("*.png"))) == 10
    assert len(list((dataset / "high").glob("*.png"))) == 10
    manifest = read_manifest(dataset / "manifest.json")
    assert len(manifest.entries) == 30


def test_synth_is_reproducible(tmp_path, image_dir, dataset, config_file):
    again = tmp_path / "again"
    assert main(["synth", "--input", str(image_dir), "--out", str(again), "--config", config_file]) == 0
    for level in LEVELS:
        for path in sorted((dataset / level).iterdir()):
            assert path.read_bytes() == (again / level / path.name).read_bytes()
    assert (dataset / "manifest.json").read_bytes() == (again / "manifest.json").read_bytes()


def test_synth_single_level_with_stats(tmp_path, image_dir, capsys):
    out = tmp_path / "one"
    stats = tmp_path / "stats.csv"
    assert main(["synth", "--input", str(image_dir), "--out", str(out), "--level", "dense",
                 "--stats", str(stats)]) == 0
    assert not (out / "light").exists()
    lines = stats.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "level,psnr,ssim,ms_ssim,mse,mae"
    assert lines[1].startswith("dense,")
    assert "dense," in capsys.readouterr().out


def test_synth_missing_input_is_a_usage_error(tmp_path):
    assert main(["synth", "--input", str(tmp_path / "nowhere"), "--out", str(tmp_path / "ds")]) == 2


def test_train_with_zero_iterations(checkpoint):
    config, state = load_checkpoint(checkpoint)
    assert config.iters == 0
    assert config.base_channels == TINY_CONFIG["base_channels"]
    assert state


def test_train_prints_log_lines(tmp_path, dataset, config_file, capsys):
    argv = ["train", "--manifest", str(dataset / "manifest.json"), "--config", config_file,
            "--out", str(tmp_path / "m.trif"), "--iters", "2"]
    assert main(argv) == 0
    assert capsys.readouterr().out.splitlines()[0].startswith("iter 1 loss ")
    assert (tmp_path / "m.csv").is_file()


def test_enhance_file_and_directory(tmp_path, dataset, checkpoint):
    target = tmp_path / "one.png"
    argv = ["enhance", "--ckpt", str(checkpoint), "--input", str(dataset / "dense" / "img00.png"),
            "--output", str(target)]
    assert main(argv) == 0
    assert load_image(target).shape == (64, 64, 3)

    out_dir = tmp_path / "enhanced"
    argv = ["enhance", "--ckpt", str(checkpoint), "--input", str(dataset / "moderate"),
            "--output", str(out_dir), "--steps", "2", "--variant", "no_esm"]
    assert main(argv) == 0
    assert sorted(p.name for p in out_dir.iterdir()) == [f"img{i:02d}.png" for i in range(10)]


def test_enhance_is_reproducible(tmp_path, dataset, checkpoint):
    outputs = []
    for name in ("a", "b"):
        out_dir = tmp_path / name
        argv = ["enhance", "--ckpt", str(checkpoint), "--input", str(dataset / "dense"),
                "--output", str(out_dir), "--seed", "11"]
        assert main(argv) == 0
        outputs.append(out_dir)
    for path in sorted(outputs[0].iterdir()):
        assert path.read_bytes() == (outputs[1] / path.name).read_bytes()


def test_enhance_rejects_bad_output_suffix(tmp_path, dataset, checkpoint):
    argv = ["enhance", "--ckpt", str(checkpoint), "--input", str(dataset / "dense" / "img00.png"),
            "--output", str(tmp_path / "one.jpg")]
    assert main(argv) == 2


def test_eval_of_identical_directories(tmp_path, image_dir, capsys):
    out = tmp_path / "metrics.csv"
    assert main(["eval", "--pred", str(image_dir), "--ref", str(image_dir), "--out", str(out)]) == 0
    printed = capsys.readouterr().out.splitlines()
    assert printed[0] == "image,psnr,ssim,ms_ssim,mse,mae"
    assert printed[1].startswith("MEAN,100.000000,1.000000,1.000000,0.000000,0.000000")
    lines = out.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 12
    assert lines[-1] == printed[1]


def test_eval_name_mismatch(tmp_path, image_dir, dataset):
    (image_dir / "img00.png").rename(image_dir / "other.png")
    assert main(["eval", "--pred", str(image_dir), "--ref", str(dataset / "high")]) == 2


def test_eval_csv_is_reproducible(tmp_path, image_dir, dataset):
    first, second = tmp_path / "first.csv", tmp_path / "second.csv"
    for out in (first, second):
        assert main(["eval", "--pred", str(image_dir), "--ref", str(dataset / "high"), "--out", str(out)]) == 0
    assert first.read_bytes() == second.read_bytes()


def test_eval_size_mismatch_is_a_usage_error(tmp_path, image_dir):
    write_images(tmp_path / "small", 10, size=48)
    assert main(["eval", "--pred", str(image_dir), "--ref", str(tmp_path / "small")]) == 2


def test_fit_niqe_then_reference_free_eval(tmp_path, image_dir, config_file, capsys):
    model = tmp_path / "niqe.trif"
    assert main(["fit-niqe", "--input", str(image_dir), "--out", str(model), "--config", config_file]) == 0
    assert model.is_file()
    capsys.readouterr()
    assert main(["eval", "--pred", str(image_dir), "--niqe-model", str(model)]) == 0
    printed = capsys.readouterr().out.splitlines()
    assert printed[0] == "image,brisque,niqe"
    assert printed[1].startswith("MEAN,")


def test_fit_niqe_needs_ten_images(tmp_path, image_dir):
    (image_dir / "img09.png").unlink()
    assert main(["fit-niqe", "--input", str(image_dir), "--out", str(tmp_path / "n.trif")]) == 2


def test_ablate_unknown_axis(tmp_path, dataset, config_file):
    argv = ["ablate", "--manifest", str(dataset / "manifest.json"), "--config", config_file,
            "--axis", "width", "--out", str(tmp_path / "abl"), "--iters", "1"]
    assert main(argv) == 2


def test_unknown_config_key(tmp_path, image_dir):
    bad = tmp_path / "bad.conf"
    bad.write_text("learning_rat = 0.1\n", encoding="utf-8")
    assert main(["synth", "--input", str(image_dir), "--out", str(tmp_path / "ds"), "--config", str(bad)]) == 2


@pytest.mark.parametrize("command", ["synth", "train", "enhance", "eval", "ablate", "fit-niqe"])
def test_help(command, capsys):
    assert main([command, "--help"]) == 0
    assert "usage:" in capsys.readouterr().out


def test_missing_required_flag():
    assert main(["train"]) == 2
