import json

import numpy as np
import pytest

from attnwnet.cli import main
from attnwnet.volume import PhantomSpec, Ellipsoid, load_labels, load_volume

CONFIG = """
seed = 1
clusters = [1]

[network]
depth = 1
base_channels = 2
K = 2

[affinity]
sigma_I = 0.1
radius = 2

[crf]
iterations = 2
truncation_radius = 2

[optimizer]
lr = 0.01
epochs = 2

[data]
train_dir = "phantoms"
out_dir = "run"
"""


@pytest.fixture
def workdir(tmp_path):
    spec = PhantomSpec((8, 8, 8), 0.2, (Ellipsoid((4, 4, 4), (2, 3, 2), 0.9, 1),), 0.01, 5)
    doc = {"phantoms": [dict(spec.to_dict(), name="a"), dict(spec.to_dict(), name="b", seed=6)]}
    (tmp_path / "spec.json").write_text(json.dumps(doc))
    (tmp_path / "config.toml").write_text(CONFIG)
    return tmp_path


def test_full_cli_flow(workdir, capsys):
    w = workdir
    assert main(["phantom-gen", "--spec", str(w / "spec.json"), "--out-dir", str(w / "phantoms")]) == 0
    assert (w / "phantoms" / "a.vol3").exists() and (w / "phantoms" / "b.lbl3").exists()
    assert main(["train", "--config", str(w / "config.toml")]) == 0
    ckpt = w / "run" / "model.ckpt"
    assert ckpt.exists()
    assert main(["segment", "--ckpt", str(ckpt), "--in", str(w / "phantoms" / "a.vol3"),
                 "--out-dir", str(w / "seg")]) == 0
    assert sorted(p.name for p in (w / "seg").iterdir()) == [
        "input.vol3", "labels.lbl3", "prob_00.vol3", "prob_01.vol3"]
    assert main(["refine", "--config", str(w / "config.toml"), "--in", str(w / "seg")]) == 0
    refined = load_labels(w / "seg" / "refined_labels.lbl3")
    assert refined.dims == (8, 8, 8)
    assert load_volume(w / "seg" / "refined_prob_01.vol3").dims == (8, 8, 8)
    capsys.readouterr()
    assert main(["evaluate", "--pred", str(w / "seg" / "refined_labels.lbl3"),
                 "--truth", str(w / "phantoms" / "a.lbl3"), "--clusters", "0,1",
                 "--report", str(w / "metrics.csv")]) == 0
    agg = json.loads(capsys.readouterr().out)
    assert agg["mean_iou"] == pytest.approx(np.mean(load_labels(w / "phantoms" / "a.lbl3").labels > 0))
    assert (w / "metrics.json").exists()


def test_error_is_one_line(workdir, capsys):
    assert main(["segment", "--ckpt", str(workdir / "nope.ckpt"), "--in", str(workdir / "x.vol3"),
                 "--out-dir", str(workdir / "o")]) == 1
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and err.startswith("error: FileNotFoundError: ")


def test_bad_config_key(workdir, capsys):
    (workdir / "bad.toml").write_text("[network]\ndpeth = 2\n")
    assert main(["train", "--config", str(workdir / "bad.toml")]) == 1
    assert capsys.readouterr().err.startswith("error: ConfigError: unknown key(s) in [network]: dpeth")


def test_bad_clusters_flag(workdir):
    with pytest.raises(SystemExit) as e:
        main(["evaluate", "--pred", "a", "--truth", "b", "--clusters", "x,y", "--report", "r"])
    assert e.value.code == 2
