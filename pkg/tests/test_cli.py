import csv

import numpy as np
import pytest

from dtsae.cli import main
from dtsae.model import DirectEstimateSet
from dtsae.spatial import grid_adjacency, read_design_csv, write_adjacency


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def workspace(tmp_path):
    adj = grid_adjacency(5, 5)
    write_adjacency(tmp_path / "adj.txt", adj)
    g = np.random.default_rng(0)
    ds = DirectEstimateSet(g.normal(size=25), g.uniform(0.2, 1.0, 25), adj.area_ids)
    ds.to_csv(tmp_path / "data.csv")
    return tmp_path, ds


def test_thin(workspace):
    tmp, ds = workspace
    assert main(["thin", str(tmp / "data.csv"), "--epsilon", "0.3", "--repeats", "2",
                 "--out", str(tmp / "t.csv")]) == 0
    rows = _rows(tmp / "t.csv")
    assert len(rows) == 2 * 2 * ds.m
    r0 = [r for r in rows if r["repeat"] == "0"]
    train = np.array([float(r["value"]) for r in r0 if r["component"] == "train"])
    test = np.array([float(r["value"]) for r in r0 if r["component"] == "test"])
    assert np.allclose(train + test, ds.y, atol=1e-14)
    assert main(["thin", str(tmp / "data.csv"), "--folds", "4", "--out", str(tmp / "f.csv")]) == 0
    assert {r["component"] for r in _rows(tmp / "f.csv")} == {"fold_1", "fold_2", "fold_3", "fold_4"}


def test_basis_and_validate(workspace):
    tmp, ds = workspace
    assert main(["basis", "--adjacency", str(tmp / "adj.txt"), "--p", "3",
                 "--areas", str(tmp / "data.csv"), "--out", str(tmp / "x3.csv")]) == 0
    ids, X, names = read_design_csv(tmp / "x3.csv")
    assert X.shape == (25, 4) and names[0] == "intercept"
    gibbs = ["--iterations", "200", "--burn-in", "50"]
    for method in ("dt-mse", "dt-nll", "esim", "dic", "waic"):
        out = tmp / method
        code = main(["validate", str(tmp / "data.csv"), "--method", method, "--repeats", "2",
                     "--esim-iters", "2", "--adjacency", str(tmp / "adj.txt"), "--p-grid", "1,2",
                     "--design", str(tmp / "x3.csv"), "--out-dir", str(out)] + gibbs)
        assert code == 0
        summary = _rows(out / "summary.csv")
        assert [r["model_id"] for r in summary] == ["p1", "p2", "x3"]
        assert sum(int(r["selected"]) for r in summary) == 1
        assert _rows(out / "repeats.csv")


def test_analytics(workspace, tmp_path):
    tmp, ds = workspace
    assert main(["analytics", "--sigma2", "1.0", "--d-file", str(tmp / "data.csv"),
                 "--eps-grid", "0.1:0.9:0.2", "--out", str(tmp / "a.csv")]) == 0
    rows = _rows(tmp / "a.csv")
    assert [float(r["epsilon"]) for r in rows] == pytest.approx([0.1, 0.3, 0.5, 0.7, 0.9])
    main(["basis", "--adjacency", str(tmp / "adj.txt"), "--p", "2", "--areas",
          str(tmp / "data.csv"), "--out", str(tmp / "x.csv")])
    assert main(["analytics", "--sigma2", "1.0", "--d-file", str(tmp / "data.csv"), "--mode",
                 "estimated", "--design-file", str(tmp / "x.csv"), "--out", str(tmp / "e.csv")]) == 0
    assert len(_rows(tmp / "e.csv")) == 99


def test_simulate(tmp_path):
    (tmp_path / "c.ini").write_text(
        "[population]\ngrid = 4x4\nunits_per_area = 200\nsignal_rank = 3\n"
    )
    assert main(["simulate", "--design", "equal", "--target", "20", "--samples", "2",
                 "--config", str(tmp_path / "c.ini"), "--out-dir", str(tmp_path / "s")]) == 0
    ds = DirectEstimateSet.from_csv(tmp_path / "s" / "sample_000.csv")
    assert ds.m == 16
    assert (tmp_path / "s" / "sample_001.csv").exists()
    assert len(_rows(tmp_path / "s" / "truth.csv")) == 16


def test_run_is_reproducible(tmp_path):
    (tmp_path / "c.ini").write_text(
        "[experiment]\nseed = 2\nsamples = 2\np_grid = 1, 2\n"
        "[population]\ngrid = 5x5\nunits_per_area = 100:200\nsignal_rank = 3\n"
        "[designs]\nlist = equal:20\n[methods]\nlist = dt-mse, dic\n"
        "[dt]\nrepeats = 2\n[gibbs]\niterations = 200\nburn_in = 50\n"
    )
    for name in ("a", "b"):
        assert main(["run", "--config", str(tmp_path / "c.ini"), "--out-dir", str(tmp_path / name)]) == 0
    for f in ("scores.csv", "selections.csv", "metrics.csv", "oracle.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_errors_exit_nonzero(tmp_path, capsys):
    (tmp_path / "bad.csv").write_text("area_id,y,d\na,1.0,-1.0\n")
    assert main(["thin", str(tmp_path / "bad.csv")]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["thin"])
