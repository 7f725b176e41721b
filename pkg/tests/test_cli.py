import csv
import io
import subprocess
import sys

import numpy as np
import pytest

from relgraph.dataio import write_array
from relgraph.engine.cli import main


def run(*argv):
    out = io.StringIO()
    status = main(list(argv), stdout=out)
    return status, out.getvalue()


def rows(text):
    return list(csv.reader(io.StringIO(text)))


@pytest.fixture(scope="module")
def trained(tmp_path_factory, synthetic_dir):
    root = tmp_path_factory.mktemp("cli")
    config = root / "run.cfg"
    config.write_text(f"manifest = {synthetic_dir / 'manifest.csv'}\nepochs = 1\nsteps_per_epoch = 3\n")
    status, text = run("train", "--config", str(config), "--out", str(root / "out"))
    assert status == 0, text
    return root, config, text


def test_synth_writes_dataset(tmp_path):
    (tmp_path / "spec.txt").write_text("num_identities = 2\nimages_per_modality = 3\n")
    status, text = run("synth", "--spec", str(tmp_path / "spec.txt"), "--out", str(tmp_path / "d"))
    assert status == 0
    table = rows(text)
    assert table[0] == ["split", "modality", "images"]
    assert ["train", "vis", "4"] in table
    assert (tmp_path / "d" / "manifest.csv").exists() and (tmp_path / "d" / "spec.txt").exists()


def test_train_outputs(trained):
    root, _, text = trained
    out = root / "out"
    for name in ("trace.csv", "config.txt", "checkpoint.rgck", "eval_v2i.csv", "eval_i2v.csv"):
        assert (out / name).exists(), name
    trace = rows((out / "trace.csv").read_text())
    assert trace[0] == ["step", "lr", "L_id", "L_tc", "L_cc", "L_local", "L_total"] and len(trace) == 4
    assert rows(text)[0] == ["direction", "mode", "rank1", "mAP"]


@pytest.mark.parametrize("direction", ["v2i", "i2v"])
@pytest.mark.parametrize("mode", ["global", "global+local"])
def test_evaluate(trained, tmp_path, direction, mode):
    root, config, _ = trained
    status, text = run("evaluate", "--config", str(config), "--checkpoint", str(root / "out" / "checkpoint.rgck"),
                       "--direction", direction, "--mode", mode, "--out", str(tmp_path / "r.csv"))
    assert status == 0
    table = rows(text)
    assert table[0] == ["rank", "cmc"] and table[-1][0] == "mAP"
    assert len(table) == 1 + 32 + 1
    assert (tmp_path / "r.csv").read_text() == text


def test_evaluate_global_matches_training_report(trained):
    root, config, _ = trained
    _, text = run("evaluate", "--config", str(config), "--checkpoint", str(root / "out" / "checkpoint.rgck"))
    assert text == (root / "out" / "eval_v2i.csv").read_text()


def test_export_embeddings(trained, synthetic_dir, tmp_path):
    root, _, _ = trained
    status, _ = run("export-embeddings", "--checkpoint", str(root / "out" / "checkpoint.rgck"),
                    "--manifest", str(synthetic_dir / "manifest.csv"), "--out", str(tmp_path / "e.csv"))
    assert status == 0
    table = rows((tmp_path / "e.csv").read_text())
    assert len(table) == 1 + 384 and len(table[0]) == 5 + 32
    assert np.all(np.isfinite(np.array([r[5:] for r in table[1:]], dtype=float)))


def test_align(tmp_path):
    r = np.random.default_rng(0)
    write_array(tmp_path / "v.rgt", r.standard_normal((3, 4)).astype(np.float32))
    write_array(tmp_path / "i.rgt", r.standard_normal((3, 4)).astype(np.float32))
    status, text = run("align", "--vis", str(tmp_path / "v.rgt"), "--ir", str(tmp_path / "i.rgt"))
    assert status == 0
    table = rows(text)
    assert [t[0] for t in table] == ["raw"] * 3 + ["normalized"] * 3 + ["dp"] * 3 + ["path", "distance"]
    assert table[-2][1] == "0:0" and table[-2][-1] == "2:2"
    assert float(table[-1][1]) == float(table[8][-1])


def test_gradcheck_single_seed():
    status, text = run("gradcheck", "--seed", "1")
    assert status == 0
    table = rows(text)
    assert table[0] == ["case", "seed", "max_rel_error", "passed"]
    assert all(t[3] == "1" for t in table[1:])


@pytest.mark.parametrize("argv", [
    ["evaluate", "--config", "missing.cfg", "--checkpoint", "missing.rgck"],
    ["align", "--vis", "missing.rgt", "--ir", "missing.rgt"],
    ["export-embeddings", "--checkpoint", "missing.rgck", "--manifest", "missing.csv"],
])
def test_errors_exit_nonzero(argv, capsys):
    status, text = run(*argv)
    assert status == 1 and text == ""
    assert "error" in capsys.readouterr().err


def test_bad_config_exits_nonzero(tmp_path, capsys):
    (tmp_path / "c.cfg").write_text("no_such_key = 1\n")
    status, _ = run("train", "--config", str(tmp_path / "c.cfg"), "--out", str(tmp_path / "o"))
    assert status == 1
    assert "unknown key" in capsys.readouterr().err


def test_usage_error_exits_nonzero():
    with pytest.raises(SystemExit) as info:
        main(["evaluate"])
    assert info.value.code != 0


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "relgraph", "align", "--vis", "nope", "--ir", "nope"],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and "error" in proc.stderr
