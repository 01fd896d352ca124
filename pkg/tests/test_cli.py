import math

import numpy as np
import pytest

from poleloc.cli import main
from poleloc.extraction import write_cloud
from poleloc.geometry import Pose2, inverse
from poleloc.polemap import load_map, save_map
from poleloc.synth import column_cloud

from conftest import make_map

WORLD_ARGS = [
    "--world.extent", "80,80", "--world.pole_count", "60",
    "--obs.sensor_range", "20", "--queries.count", "8", "--queries.margin", "10",
]


def test_extract_single_column(tmp_path):
    cloud = column_cloud([(5.1, 5.1)], [0.4], [3.0], ground=(3, 3, 7, 7))
    write_cloud(tmp_path / "c.csv", cloud)
    assert main(["extract", str(tmp_path / "c.csv"), "-o", str(tmp_path / "m.csv")]) == 0
    m = load_map(tmp_path / "m.csv")
    assert len(m) == 1
    assert math.dist(m.poles[0].center, (5.1, 5.1)) < 0.2


def test_extract_binary_cloud(tmp_path):
    cloud = column_cloud([(5.1, 5.1), (9.3, 2.7)], [0.4, 0.4], [3.0, 3.0])
    write_cloud(tmp_path / "c.bin", cloud, binary=True)
    assert main(["extract", str(tmp_path / "c.bin"), "-o", str(tmp_path / "m.csv")]) == 0
    assert len(load_map(tmp_path / "m.csv")) == 2


def test_extract_empty_cloud(tmp_path):
    (tmp_path / "c.csv").write_text("x,y,z\n")
    assert main(["extract", str(tmp_path / "c.csv"), "-o", str(tmp_path / "m.csv")]) == 0
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert len(lines) == 1 and lines[0].startswith("id,x,y,width,class")


def test_extract_malformed_cloud(tmp_path, capsys):
    (tmp_path / "c.csv").write_text("x,y,z\n1,2,3\n1,oops,3\n")
    assert main(["extract", str(tmp_path / "c.csv"), "-o", str(tmp_path / "m.csv")]) != 0
    err = capsys.readouterr().err
    assert "3" in err and "error" in err


def desc_map(path, n=12, seed=0):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0, 50, (n, 2))
    d = np.vstack([rng.normal(c, 0.05, (n // 2, 4)) for c in (0.0, 3.0)])
    save_map(make_map(xy, descriptors=d), path)


def test_cluster_k1(tmp_path):
    desc_map(tmp_path / "m.csv")
    out, model = tmp_path / "c.csv", tmp_path / "model.csv"
    assert main(["cluster", str(tmp_path / "m.csv"), "-o", str(out), "--model", str(model), "--k", "1"]) == 0
    assert load_map(out).classes().tolist() == [0] * 12


def test_cluster_two_blobs_and_rerun_identical(tmp_path):
    desc_map(tmp_path / "m.csv")
    args = ["cluster", str(tmp_path / "m.csv"), "--k", "2", "--seed", "3"]
    assert main(args + ["-o", str(tmp_path / "a.csv"), "--model", str(tmp_path / "ma.csv")]) == 0
    assert main(args + ["-o", str(tmp_path / "b.csv"), "--model", str(tmp_path / "mb.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "ma.csv").read_bytes() == (tmp_path / "mb.csv").read_bytes()
    cls = load_map(tmp_path / "a.csv").classes()
    assert len(set(cls[:6])) == 1 and len(set(cls[6:])) == 1 and cls[0] != cls[6]


def test_cluster_k_too_large(tmp_path, capsys):
    desc_map(tmp_path / "m.csv")
    rc = main(["cluster", str(tmp_path / "m.csv"), "-o", str(tmp_path / "c.csv"),
               "--model", str(tmp_path / "x.csv"), "--k", "13"])
    assert rc != 0 and "k=13" in capsys.readouterr().err


def test_build_table(tmp_path):
    save_map(make_map([(0, 0), (3, 4), (100, 0)]), tmp_path / "m.csv")
    assert main(["build-table", str(tmp_path / "m.csv"), "-o", str(tmp_path / "t.csv")]) == 0
    rows = (tmp_path / "t.csv").read_text().splitlines()
    assert rows[0] == "bin,id_i,id_j,distance"
    assert sorted(r.split(",")[1:3] for r in rows[1:]) == [["0", "1"], ["1", "0"]]


GXY = np.array([[0, 0], [7, 1], [3, 9], [12, 6], [5, 4], [20, 15]], dtype=float)


def test_localize_self_match(tmp_path, capsys):
    save_map(make_map(GXY), tmp_path / "g.csv")
    rc = main(["localize", str(tmp_path / "g.csv"), str(tmp_path / "g.csv"), "--mode", "baseline"])
    assert rc == 0
    tx, ty, th, score = capsys.readouterr().out.strip().split(",")
    assert abs(float(tx)) < 1e-9 and abs(float(ty)) < 1e-9 and abs(float(th)) < 1e-9
    assert int(score) == len(GXY)


def test_localize_known_transform(tmp_path, capsys):
    T = Pose2(4.0, -3.0, 2.0)
    cls = [0, 1, 2, 0, 1, 2]
    save_map(make_map(GXY, classes=cls), tmp_path / "g.csv")
    save_map(make_map(inverse(T).apply_points(GXY[:5]), frame="local", classes=cls[:5]), tmp_path / "l.csv")
    assert main(["localize", str(tmp_path / "l.csv"), str(tmp_path / "g.csv")]) == 0
    tx, ty, th, score = (float(v) for v in capsys.readouterr().out.strip().split(","))
    assert Pose2(tx, ty, th).is_close(T, 1e-9) and score == 10


def test_localize_no_hypothesis(tmp_path, capsys):
    save_map(make_map([(0, 0), (5, 0)]), tmp_path / "g.csv")
    save_map(make_map([(0, 0), (30, 0)], frame="local"), tmp_path / "l.csv")
    rc = main(["localize", str(tmp_path / "l.csv"), str(tmp_path / "g.csv"), "--mode", "baseline"])
    assert rc != 0 and "error" in capsys.readouterr().err


def test_synth_writes_files(tmp_path):
    out = tmp_path / "s"
    assert main(["synth", "-o", str(out), *WORLD_ARGS]) == 0
    assert len(load_map(out / "global.csv")) == 60
    queries = (out / "queries.csv").read_text().splitlines()
    assert len(queries) == 9
    first = queries[1].split(",")[-1]
    assert (out / first).exists()


def test_eval_zero_noise_is_perfect(tmp_path, capsys):
    assert main(["eval", "-o", str(tmp_path / "e"), *WORLD_ARGS]) == 0
    out = capsys.readouterr().out
    assert "baseline.1m.accuracy: 100.00" in out
    assert "class_gated.1m.accuracy: 100.00" in out
    assert (tmp_path / "e" / "table.csv").read_text().startswith("dataset,ours_5m,baseline_5m")


def test_eval_repeatable(tmp_path):
    noisy = WORLD_ARGS + ["--obs.noise_sigma", "0.3", "--obs.dropout", "0.3", "--obs.distractors", "5"]
    assert main(["eval", "-o", str(tmp_path / "a"), *noisy, "--seed", "2"]) == 0
    assert main(["eval", "-o", str(tmp_path / "b"), *noisy, "--seed", "2"]) == 0
    for name in ("trajectory.csv", "report.txt", "table.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_eval_config_file_and_missing_key(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# experiment\nworld.extent = 80,80\nworld.pole_count = 60\nqueries.count = 4\n")
    rc = main(["eval", "-o", str(tmp_path / "e"), "--config", str(cfg)])
    assert rc != 0 and "obs.sensor_range" in capsys.readouterr().err
    rc = main(["eval", "-o", str(tmp_path / "e"), "--config", str(cfg), "--obs.sensor_range", "20"])
    assert rc == 0


def test_bad_config_value(tmp_path, capsys):
    rc = main(["eval", "-o", str(tmp_path / "e"), *WORLD_ARGS, "--world.pole_count", "many"])
    assert rc != 0 and "world.pole_count" in capsys.readouterr().err
