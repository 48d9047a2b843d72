import json
import os

import numpy as np
import pytest

from conftest import sphere_points
from pointup.cli import main
from pointup.cloud_io import read_point_cloud, write_xyz

TRAIN_CONFIG = """# desk-scale run
epochs = 2
num_pairs = 4
batch_size = 4
ratio = 2
kernel = random
use_discriminator = false
channels = 8
neighbors = 6
seed = 0
augment_jitter = 0.002
"""

CUBE_OFF = """OFF
8 6 0
0 0 0
1 0 0
1 1 0
0 1 0
0 0 1
1 0 1
1 1 1
0 1 1
4 0 1 2 3
4 4 5 6 7
4 0 1 5 4
4 1 2 6 5
4 2 3 7 6
4 3 0 4 7
"""


@pytest.fixture
def workspace(tmp_path):
    cloud_path = tmp_path / "sphere.xyz"
    write_xyz(cloud_path, sphere_points(64, seed=0))
    config_path = tmp_path / "train.cfg"
    config_path.write_text(TRAIN_CONFIG)
    mesh_path = tmp_path / "cube.off"
    mesh_path.write_text(CUBE_OFF)
    return tmp_path, cloud_path, config_path, mesh_path


def test_train_writes_artifacts(workspace):
    tmp_path, cloud_path, config_path, _ = workspace
    out_dir = tmp_path / "run"
    code = main(["train", "--input", str(cloud_path), "--config",
                 str(config_path), "--out", str(out_dir)])
    assert code == 0
    assert (out_dir / "generator.ckpt").exists()
    assert (out_dir / "manifest.json").exists()
    log_lines = (out_dir / "train_log.txt").read_text().splitlines()
    assert len(log_lines) == 2
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["command"] == "train"
    assert str(cloud_path) in manifest["inputs"]
    assert manifest["config"]["epochs"] == 2


def test_train_missing_input_exits_2(workspace):
    tmp_path, _, config_path, _ = workspace
    code = main(["train", "--input", str(tmp_path / "nope.xyz"),
                 "--config", str(config_path), "--out", str(tmp_path / "o")])
    assert code == 2


def test_train_bad_config_exits_3(workspace, capsys):
    tmp_path, cloud_path, _, _ = workspace
    bad = tmp_path / "bad.cfg"
    bad.write_text("warp_speed = 9\n")
    code = main(["train", "--input", str(cloud_path), "--config", str(bad),
                 "--out", str(tmp_path / "o")])
    assert code == 3
    assert "warp_speed" in capsys.readouterr().err

    bad.write_text("epochs = soon\n")
    code = main(["train", "--input", str(cloud_path), "--config", str(bad),
                 "--out", str(tmp_path / "o")])
    assert code == 3
    assert "epochs" in capsys.readouterr().err


def test_train_deterministic_checkpoints(workspace):
    tmp_path, cloud_path, config_path, _ = workspace
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--input", str(cloud_path), "--config",
                 str(config_path), "--out", str(out_a)]) == 0
    assert main(["train", "--input", str(cloud_path), "--config",
                 str(config_path), "--out", str(out_b)]) == 0
    assert (out_a / "generator.ckpt").read_bytes() == \
        (out_b / "generator.ckpt").read_bytes()


def test_upsample_round_trip(workspace):
    tmp_path, cloud_path, config_path, _ = workspace
    out_dir = tmp_path / "run"
    main(["train", "--input", str(cloud_path), "--config", str(config_path),
          "--out", str(out_dir)])
    out_xyz = tmp_path / "up.xyz"
    code = main(["upsample", "--input", str(cloud_path), "--checkpoint",
                 str(out_dir / "generator.ckpt"), "--out", str(out_xyz)])
    assert code == 0
    cloud = read_point_cloud(out_xyz)
    assert len(cloud) == 128
    assert os.path.exists(f"{out_xyz}.manifest.json")

    out_ply = tmp_path / "up.ply"
    assert main(["upsample", "--input", str(cloud_path), "--checkpoint",
                 str(out_dir / "generator.ckpt"), "--out", str(out_ply)]) == 0
    assert len(read_point_cloud(out_ply)) == 128


def test_upsample_ratio_mismatch_rejected(workspace):
    tmp_path, cloud_path, config_path, _ = workspace
    out_dir = tmp_path / "run"
    main(["train", "--input", str(cloud_path), "--config", str(config_path),
          "--out", str(out_dir)])
    code = main(["upsample", "--input", str(cloud_path), "--checkpoint",
                 str(out_dir / "generator.ckpt"), "--ratio", "8",
                 "--out", str(tmp_path / "x.xyz")])
    assert code == 2


def test_eval_against_cloud(workspace, tmp_path):
    _, cloud_path, _, _ = workspace
    gen_path = tmp_path / "gen.xyz"
    write_xyz(gen_path, sphere_points(96, seed=1))
    out_csv = tmp_path / "metrics.csv"
    code = main(["eval", "--generated", str(gen_path), "--reference",
                 str(cloud_path), "--out", str(out_csv)])
    assert code == 0
    rows = out_csv.read_text().splitlines()
    assert rows[0].startswith("name,cd,hd,p2f_mean,p2f_std,uni_")
    assert len(rows) == 2
    cells = rows[1].split(",")
    assert float(cells[1]) > 0  # cd
    assert cells[3] == ""       # no mesh -> empty p2f


def test_eval_against_mesh(workspace, tmp_path):
    _, _, _, mesh_path = workspace
    gen_path = tmp_path / "gen.xyz"
    write_xyz(gen_path, sphere_points(80, seed=2) * 0.4 + 0.5)
    out_csv = tmp_path / "metrics_mesh.csv"
    code = main(["eval", "--generated", str(gen_path), "--reference",
                 str(mesh_path), "--out", str(out_csv),
                 "--reference-samples", "500"])
    assert code == 0
    cells = out_csv.read_text().splitlines()[1].split(",")
    assert cells[3] != ""  # p2f present with a mesh reference


def test_sample_mesh_command(workspace, tmp_path):
    _, _, _, mesh_path = workspace
    out_path = tmp_path / "surface.xyz"
    code = main(["sample-mesh", "--input", str(mesh_path), "--count", "200",
                 "--mode", "poisson", "--seed", "3", "--out", str(out_path)])
    assert code == 0
    assert len(read_point_cloud(out_path)) == 200


def test_train_from_mesh_input(workspace):
    tmp_path, _, config_path, mesh_path = workspace
    cfg = tmp_path / "mesh.cfg"
    cfg.write_text(TRAIN_CONFIG + "mesh_sample_count = 64\nmesh_sample_mode = uniform\n")
    out_dir = tmp_path / "mesh_run"
    code = main(["train", "--input", str(mesh_path), "--config", str(cfg),
                 "--out", str(out_dir)])
    assert code == 0
    assert (out_dir / "generator.ckpt").exists()


def test_gradcheck_command_quick():
    assert main(["gradcheck", "--scope", "end2end"]) == 0


def test_ablation_command(workspace, tmp_path):
    _, cloud_path, config_path, _ = workspace
    ref_path = tmp_path / "ref.xyz"
    write_xyz(ref_path, sphere_points(128, seed=4))
    out_csv = tmp_path / "ablation.csv"
    code = main(["ablation", "--input", str(cloud_path), "--config",
                 str(config_path), "--epochs", "1",
                 "--variants", "full,no_uniform_loss",
                 "--reference", str(ref_path), "--out", str(out_csv)])
    assert code == 0
    rows = out_csv.read_text().splitlines()
    assert len(rows) == 3
    assert rows[1].split(",")[0] == "full"
    assert rows[2].split(",")[0] == "no_uniform_loss"


def test_cli_flag_overrides_config(workspace):
    tmp_path, cloud_path, config_path, _ = workspace
    out_dir = tmp_path / "override"
    code = main(["train", "--input", str(cloud_path), "--config",
                 str(config_path), "--out", str(out_dir), "--epochs", "1"])
    assert code == 0
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["config"]["epochs"] == 1
    assert len((out_dir / "train_log.txt").read_text().splitlines()) == 1
