import json

import numpy as np
import pytest

from cfedic import __version__
from cfedic.cli import main, merged_config, build_parser, read_config, ConfigError


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "translation", "--out", str(out), "--seed", "3"]) == 0
    return out


def test_synth_writes_pair_and_truth(synth_dir, tmp_path):
    truth = json.loads((synth_dir / "truth.json").read_text())
    assert truth["deformation"] == {"kind": "translation", "tx": 0.05, "ty": 0.0}
    assert truth["seed"] == 3 and truth["image_size"] == [240, 240]
    assert main(["synth", "translation", "--out", str(tmp_path), "--seed", "3"]) == 0
    for name in ("ref.png", "def.png", "truth.json"):
        assert (tmp_path / name).read_bytes() == (synth_dir / name).read_bytes()


def test_synth_example_sidecars(tmp_path):
    assert main(["synth", "example2", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "truth.json").read_text())["deformation"]["w"] == 0.2


def test_run_end_to_end(synth_dir, tmp_path, capsys):
    out = tmp_path / "run"
    code = main(
        ["run", str(synth_dir / "ref.png"), str(synth_dir / "def.png"), "--out", str(out),
         "--truth", str(synth_dir / "truth.json"), "--element", "q4", "--h", "20"]
    )
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["version"] == __version__
    assert manifest["config"]["element"] == "q4" and manifest["config"]["element_size"] == 20
    assert manifest["zoi"] == {"x0": 19, "y0": 19, "width": 200, "height": 200}
    assert set(manifest["timings"]) >= {"assembly", "solve", "total"}
    assert manifest["relative_residual"] <= 1e-5
    assert len(manifest["inputs"]) == 2 and all(len(h) == 64 for h in manifest["inputs"].values())
    for name in manifest["outputs"]:
        assert (out / name).exists()
    assert "displacement_u.png" in manifest["outputs"]
    assert manifest["metrics"]["rmse_u"] < 0.01
    header = (out / "displacement.csv").read_text().splitlines()[0]
    assert header == "x,y,component,value"

    assert main(["metrics", str(out), "--truth", str(synth_dir / "truth.json"), "--out", str(tmp_path / "m")]) == 0
    report = json.loads((tmp_path / "m" / "metrics.json").read_text())
    assert report["errors"]["rmse_u"] == pytest.approx(manifest["metrics"]["rmse_u"])
    assert (tmp_path / "m" / "metrics.md").read_text().startswith("| Method")


def test_identical_images_give_zero(synth_dir, tmp_path):
    ref = str(synth_dir / "ref.png")
    assert main(["run", ref, ref, "--out", str(tmp_path), "--h", "40", "--no-png", "--zoi", "19,19,200,200"]) == 0
    from cfedic.dic import load_solution

    assert np.max(np.abs(load_solution(tmp_path / "solution.npz").U)) < 1e-8


def test_missing_file_is_io_error(tmp_path, capsys):
    code = main(["run", str(tmp_path / "nope.png"), str(tmp_path / "nope.png"), "--out", str(tmp_path)])
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["kind"] == "io"


def test_bad_inputs_have_distinct_codes(synth_dir, tmp_path, capsys):
    ref = str(synth_dir / "ref.png")
    assert main(["run", ref, ref, "--out", str(tmp_path), "--zoi", "0,0,250,250"]) == 4
    assert main(["run", ref, ref, "--out", str(tmp_path), "--zoi", "1,2,3"]) == 3
    (tmp_path / "junk.png").write_text("junk")
    assert main(["run", str(tmp_path / "junk.png"), ref, "--out", str(tmp_path)]) == 2
    blank = tmp_path / "blank.png"
    from cfedic.grayscale import save_image

    save_image(blank, np.full((100, 100), 0.5))
    assert main(["run", str(blank), str(blank), "--out", str(tmp_path), "--h", "20", "--element", "q4"]) == 5


def test_config_file_and_precedence(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("schema = 1\n[dic]\nelement = 'q8'\nelement_size = 10\ndilation = 6.0\n[zoi]\nx0 = 1\ny0 = 2\nwidth = 40\nheight = 30\n")
    args = build_parser().parse_args(["mesh", "--out", str(tmp_path), "--config", str(cfg), "--h", "5"])
    config, zoi, _ = merged_config(args)
    assert config.element == "q8" and config.element_size == 5 and config.dilation == 6.0
    assert (zoi.x0, zoi.width) == (1, 40)
    assert main(["mesh", "--out", str(tmp_path / "m"), "--config", str(cfg)]) == 0
    assert (tmp_path / "m" / "nodes.csv").exists()


@pytest.mark.parametrize(
    "body,match",
    [
        ("schema = 1\n[dic]\ndilaton = 3\n", "unknown key"),
        ("schema = 2\n", "schema"),
        ("[dic]\n", "schema"),
        ("schema = 1\n[solver]\ntol = 1\n", "unknown table"),
        ("schema = 1\n[dic\n", "c.toml"),
    ],
)
def test_config_errors(tmp_path, body, match):
    cfg = tmp_path / "c.toml"
    cfg.write_text(body)
    with pytest.raises(ConfigError, match=match):
        read_config(cfg)


def test_invalid_parameter_is_config_error(synth_dir, tmp_path):
    ref = str(synth_dir / "ref.png")
    assert main(["run", ref, ref, "--out", str(tmp_path), "--a", "-1"]) == 3


def test_shapes_curves(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["shapes", "--p", "2", "--s", "2", "--a", "2", "--out", str(out), "--samples", "101"]) == 0
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    header = out.read_text().splitlines()[0].split(",")
    assert len(header) == 7 and data.shape == (101, 7)
    assert data[0, 0] == -5 and data[-1, 0] == 5
    inside = np.abs(data[:, 0]) <= 1
    np.testing.assert_allclose(data[inside, 1:].sum(1), 1, atol=1e-12)
    assert main(["shapes", "--s", "1", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()[0].split(",")) == 5
    assert main(["shapes", "--element", "q4", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "xi,N[-1],N[1]"
