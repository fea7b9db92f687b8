import csv
import json

import numpy as np
import pytest

from rdpkit.cli import SCHEMA, main, parse_args, read_config_file
from rdpkit.exceptions import ConfigError


def read_rows(path):
    lines = path.read_text().splitlines()
    assert lines[0] == SCHEMA
    return list(csv.DictReader(lines[1:]))


def test_estimate_writes_csv_and_json(tmp_path):
    out = tmp_path / "est.csv"
    argv = ["estimate", "--n", "30", "--t", "4", "--k1", "5", "--k2", "1", "--runs", "4", "--seed", "7", "--output", str(out)]
    assert main(argv) == 0
    rows = read_rows(out)
    assert list(rows[0]) == ["run", "estimate", "exact", "error"]
    assert len(rows) == 4
    doc = json.loads(out.with_suffix(".json").read_text())
    assert doc["command"] == "estimate" and "temperature" in doc["metadata"]
    assert doc["metadata"]["tape_scalars"]["exact"] > doc["metadata"]["tape_scalars"]["randomized"]


def test_estimate_byte_identical(tmp_path):
    argv = ["estimate", "--n", "20", "--t", "3", "--k1", "3", "--k2", "2", "--runs", "3"]
    main(argv + ["--output", str(tmp_path / "a.csv")])
    main(argv + ["--output", str(tmp_path / "b.csv")])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_k_exceeds_n(capsys):
    assert main(["estimate", "--n", "500", "--k1", "600", "--k2", "0"]) == 2
    assert "K exceeds N" in capsys.readouterr().err


def test_guard_limit_exit_code(capsys):
    assert main(["estimate", "--model", "tree", "--n", "400", "--t", "2", "--k1", "3", "--runs", "1"]) == 3


def test_bench_rows(tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--n", "20", "--t", "3", "--runs", "3", "--output", str(out)]) == 0
    rows = read_rows(out)
    methods = [r["method"] for r in rows]
    assert methods.count("exact") == 3
    assert methods.count("topk") == 9 and methods.count("rdp") == 9
    for r in rows:
        if r["method"] == "topk":
            assert float(r["bias"]) <= 0


def test_bench_tree(tmp_path):
    out = tmp_path / "tree.csv"
    assert main(["bench", "--model", "tree", "--n", "10", "--t", "3", "--runs", "2", "--profiles", "dense", "--output", str(out)]) == 0
    assert len(read_rows(out)) == 7


@pytest.mark.parametrize("quantity", ["logz", "entropy", "soft"])
def test_gradcheck(quantity, capsys):
    assert main(["gradcheck", "--quantity", quantity]) == 0
    assert "max relative error" in capsys.readouterr().out


def test_gradcheck_tree():
    assert main(["gradcheck", "--model", "tree", "--n", "3", "--t", "3", "--k1", "1", "--k2", "1"]) == 0


def test_simulate(tmp_path, capsys):
    out = tmp_path / "deep" / "inst.npz"
    assert main(["simulate", "--n", "6", "--t", "3", "--profile", "dense", "--output", str(out)]) == 0
    data = np.load(out)
    assert data["pairwise"].shape == (2, 6, 6)
    assert json.loads(capsys.readouterr().out)["profile"] == "dense"


def test_train_creates_output_dir(tmp_path):
    out = tmp_path / "missing" / "dir"
    argv = ["train", "--n", "6", "--t", "3", "--symbols", "4", "--dim", "2", "--sequences", "4", "--steps", "2", "--output-dir", str(out)]
    assert main(argv) == 0
    assert (out / "loss_rdp.csv").exists() and (out / "loss_topk.csv").exists()
    assert len(read_rows(out / "loss_rdp.csv")) == 3


def test_train_autoencoder(tmp_path):
    argv = ["train", "--demo", "autoencoder", "--n", "6", "--t", "3", "--symbols", "4", "--dim", "2"]
    argv += ["--sequences", "4", "--steps", "2", "--k-fraction", "0.2", "--output-dir", str(tmp_path)]
    assert main(argv) == 0
    hist = read_rows(tmp_path / "posterior_topk.csv")
    assert sum(int(r["count"]) for r in hist) == 12
    assert (tmp_path / "elbo_rdp.csv").exists()


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# sweep\nn = 40\nk1 = 7\nprofile = dense\n")
    args = parse_args(["estimate", "--config", str(cfg), "--k1", "3"])
    assert args.n == 40 and args.k1 == 3 and args.profile == "dense"


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense\n")
    with pytest.raises(ConfigError):
        read_config_file(bad)
    bad.write_text("bogus = 1\n")
    assert main(["estimate", "--config", str(bad)]) == 2
    assert main(["estimate", "--config", str(tmp_path / "absent.cfg")]) == 2


def test_tree_entropy_rejected():
    assert main(["estimate", "--model", "tree", "--quantity", "entropy", "--n", "5", "--t", "2", "--k1", "1"]) == 2
