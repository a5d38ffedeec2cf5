import json

import numpy as np
import pytest

from helpers import TOY, jitter
from pptfuse.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, channel_to_u8, main
from pptfuse.config import RunConfig, save_config
from pptfuse.data import synthetic_ir_visible_pair, synthetic_scene
from pptfuse.fusion import FusionStrategy
from pptfuse.imageio import denormalize, load_image, normalize, save_image
from pptfuse.model import PptModel, save_model
from pptfuse.tensor import Tensor


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    rng = np.random.default_rng(0)
    for i in range(3):
        save_image(synthetic_scene(rng, 40, 48), d / f"img{i}.png")
    return d


@pytest.fixture(scope="module")
def model_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "toy.pptm"
    save_model(jitter(PptModel(TOY, seed=1), 0.05), path)
    return path


@pytest.fixture
def toy_config(tmp_path, corpus):
    cfg = RunConfig(size=32, patch=8, channels=8, blocks=1, heads=1, lr=1e-3, epochs=2, corpus=str(corpus))
    save_config(cfg, tmp_path / "toy.txt")
    return tmp_path / "toy.txt"


class TestTrain:
    def test_writes_artifacts_deterministically(self, tmp_path, toy_config):
        for run in ("r1", "r2"):
            assert main(["train", "--config", str(toy_config), "--out", str(tmp_path / run), "--seed", "4"]) == EXIT_OK
        lines = (tmp_path / "r1" / "loss.csv").read_text().splitlines()
        assert lines[0] == "step,epoch,loss" and len(lines) == 7
        assert (tmp_path / "r1" / "loss.csv").read_bytes() == (tmp_path / "r2" / "loss.csv").read_bytes()
        assert (tmp_path / "r1" / "model.pptm").read_bytes() == (tmp_path / "r2" / "model.pptm").read_bytes()
        snap = (tmp_path / "r1" / "config.txt").read_text()
        assert "seed = 4" in snap and "size = 32" in snap

    def test_snapshot_reproduces_run(self, tmp_path, toy_config):
        assert main(["train", "--config", str(toy_config), "--out", str(tmp_path / "a")]) == EXIT_OK
        assert main(["train", "--config", str(tmp_path / "a" / "config.txt"), "--out", str(tmp_path / "b")]) == EXIT_OK
        assert (tmp_path / "a" / "loss.csv").read_bytes() == (tmp_path / "b" / "loss.csv").read_bytes()

    def test_missing_corpus(self, tmp_path, toy_config):
        assert main(["train", "--config", str(toy_config), "--corpus", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "o")]) == EXIT_IO

    def test_unknown_config_key(self, tmp_path):
        (tmp_path / "bad.txt").write_text("colour = red\n")
        assert main(["train", "--config", str(tmp_path / "bad.txt"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


class TestFuse:
    @pytest.mark.parametrize("strategy", ["average", "max", "softmax"])
    def test_strategies(self, tmp_path, model_file, strategy):
        ir, vis = synthetic_ir_visible_pair(np.random.default_rng(1), 32, 32)
        save_image(ir, tmp_path / "a.png")
        save_image(vis, tmp_path / "b.pgm")
        out = tmp_path / "f.png"
        assert main(["fuse", "--model", str(model_file), "--a", str(tmp_path / "a.png"),
                     "--b", str(tmp_path / "b.pgm"), "--strategy", strategy, "--out", str(out)]) == EXIT_OK
        assert load_image(out).shape == (32, 32)

    def test_identical_inputs_give_reconstruction(self, tmp_path, model_file):
        from pptfuse.model import load_model
        img = synthetic_scene(np.random.default_rng(2), 32, 32)
        save_image(img, tmp_path / "a.png")
        assert main(["fuse", "--model", str(model_file), "--a", str(tmp_path / "a.png"),
                     "--b", str(tmp_path / "a.png"), "--out", str(tmp_path / "f.png")]) == EXIT_OK
        rec = denormalize(load_model(model_file).reconstruct(Tensor(normalize(img))).data)
        np.testing.assert_array_equal(load_image(tmp_path / "f.png"), rec)

    def test_arbitrary_extent(self, tmp_path, model_file):
        rng = np.random.default_rng(3)
        save_image(synthetic_scene(rng, 45, 70), tmp_path / "a.png")
        save_image(synthetic_scene(rng, 45, 70), tmp_path / "b.png")
        assert main(["fuse", "--model", str(model_file), "--a", str(tmp_path / "a.png"),
                     "--b", str(tmp_path / "b.png"), "--out", str(tmp_path / "f.png")]) == EXIT_OK
        assert load_image(tmp_path / "f.png").shape == (45, 70)

    def test_extent_mismatch(self, tmp_path, model_file):
        save_image(np.zeros((32, 32), np.uint8), tmp_path / "a.png")
        save_image(np.zeros((32, 40), np.uint8), tmp_path / "b.png")
        assert main(["fuse", "--model", str(model_file), "--a", str(tmp_path / "a.png"),
                     "--b", str(tmp_path / "b.png"), "--out", str(tmp_path / "f.png")]) == EXIT_CONFIG

    def test_corrupt_model(self, tmp_path):
        (tmp_path / "m.pptm").write_bytes(b"garbage")
        save_image(np.zeros((32, 32), np.uint8), tmp_path / "a.png")
        assert main(["fuse", "--model", str(tmp_path / "m.pptm"), "--a", str(tmp_path / "a.png"),
                     "--b", str(tmp_path / "a.png"), "--out", str(tmp_path / "f.png")]) == EXIT_IO


class TestEval:
    def test_identical_triple(self, tmp_path):
        img = synthetic_scene(np.random.default_rng(4), 32, 32)
        save_image(img, tmp_path / "x.png")
        p = str(tmp_path / "x.png")
        assert main(["eval", "--fused", p, "--a", p, "--b", p, "--report", str(tmp_path / "r.json")]) == EXIT_OK
        row = json.loads((tmp_path / "r.json").read_text())[0]
        assert row["ssim"] == pytest.approx(1.0) and row["cc"] == pytest.approx(1.0) and row["scd"] == 0.0

    def test_directory_mode_adds_mean(self, tmp_path):
        rng = np.random.default_rng(5)
        for sub in ("f", "a", "b"):
            (tmp_path / sub).mkdir()
        for name in ("p1.png", "p2.png"):
            for sub in ("f", "a", "b"):
                save_image(synthetic_scene(rng, 32, 32), tmp_path / sub / name)
        assert main(["eval", "--fused", str(tmp_path / "f"), "--a", str(tmp_path / "a"), "--b", str(tmp_path / "b"),
                     "--report", str(tmp_path / "r.csv")]) == EXIT_OK
        rows = (tmp_path / "r.csv").read_text().splitlines()
        assert [r.split(",")[0] for r in rows] == ["name", "p1.png", "p2.png", "mean"]


class TestFeatures:
    def test_one_file_per_channel(self, tmp_path, model_file):
        save_image(synthetic_scene(np.random.default_rng(6), 32, 32), tmp_path / "x.png")
        out = tmp_path / "feat"
        assert main(["features", "--model", str(model_file), "--image", str(tmp_path / "x.png"),
                     "--level", "1", "--out-dir", str(out)]) == EXIT_OK
        files = sorted(p.name for p in out.iterdir())
        assert files == [f"level1_ch{c:02d}.png" for c in range(TOY.channels)]

    def test_level_out_of_range(self, tmp_path, model_file):
        save_image(np.zeros((32, 32), np.uint8), tmp_path / "x.png")
        assert main(["features", "--model", str(model_file), "--image", str(tmp_path / "x.png"),
                     "--level", str(TOY.depth + 1), "--out-dir", str(tmp_path / "o")]) == EXIT_CONFIG

    def test_channel_stretch(self):
        out = channel_to_u8(np.array([[-2.0, 0.0], [1.0, 6.0]]))
        assert out.min() == 0 and out.max() == 255
        assert (channel_to_u8(np.full((3, 3), 0.4)) == 128).all()


def test_help_lists_exit_codes(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    assert "PPT_THREADS" in capsys.readouterr().out


def test_strategy_flag_choices(tmp_path, model_file, capsys):
    assert {s.value for s in FusionStrategy} == {"average", "max", "softmax"}
    with pytest.raises(SystemExit):
        main(["fuse", "--model", str(model_file), "--a", "x", "--b", "y", "--strategy", "median", "--out", "z"])
    assert "invalid choice" in capsys.readouterr().err
