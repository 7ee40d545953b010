import subprocess
import sys

import pytest

from reconfnet.checkpoint import load_checkpoint
from reconfnet.cli import main, parse_config_text, build_configs, UsageError

SMALL_CFG = """\
# small model used by the CLI tests
M = 2
m = 5
tau = 3
A = 12
frame_h = 12
frame_w = 16
c1 = 2
c2 = 2
c3 = 2
k1 = 3,3,2
k2 = 2,2,2
k3 = 2,2
pool1 = 2,2
pool2 = 1,1
fc_hidden = 6
max_iterations = 2
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "small.cfg").write_text(SMALL_CFG)
    assert main(["synth", str(d / "data"), "--config", str(d / "small.cfg"), "--classes", "2",
                 "--per-class", "4", "--subjects", "4", "--folds", "4", "--seed", "3"]) == 0
    return d


def _train(d, name, *extra):
    out = d / f"{name}.ckpt"
    rc = main(["train", str(d / "data" / "manifest.csv"), "-o", str(out), "--config",
               str(d / "small.cfg"), "--seed", "1", "--log", str(d / f"{name}.log"), *extra])
    assert rc == 0
    return out


def test_config_text_parsing():
    assert parse_config_text("a = 1\n\n# c\nb=2,3  # tail\n") == {"a": "1", "b": "2,3"}
    with pytest.raises(UsageError):
        parse_config_text("nonsense")
    model, train = build_configs({}, {"M": "2", "k3": "2x3", "learning_rate": "0.01"})
    assert model.M == 2 and model.k3 == (2, 3) and train.learning_rate == 0.01


def test_usage_errors(workdir, capsys):
    assert main([]) == 1
    assert main(["bogus"]) == 1
    assert main(["train", str(workdir / "data" / "manifest.csv"), "-o", "x",
                 "--set", "not_a_key=3"]) == 1
    assert "not_a_key" in capsys.readouterr().err
    assert main(["train", str(workdir / "data" / "manifest.csv"), "-o", "x",
                 "--set", "learning_rate=abc"]) == 1


def test_data_errors(workdir, tmp_path):
    assert main(["infer", str(tmp_path / "missing.ckpt"), str(workdir / "data" / "manifest.csv")]) == 2
    ckpt = _train(workdir, "trunc")
    raw = ckpt.read_bytes()
    ckpt.write_bytes(raw[:len(raw) // 2])
    assert main(["infer", str(ckpt), str(workdir / "data" / "manifest.csv")]) == 2


def test_train_and_infer_deterministic_across_threads(workdir):
    a = _train(workdir, "t1", "--threads", "1")
    b = _train(workdir, "t2", "--threads", "2")
    assert a.read_bytes() == b.read_bytes()
    log_a = [l.rsplit(",", 1)[0] for l in (workdir / "t1.log").read_text().splitlines()]
    log_b = [l.rsplit(",", 1)[0] for l in (workdir / "t2.log").read_text().splitlines()]
    assert log_a == log_b   # wall time column aside
    assert log_a[0] == "iter,phase,J,data_term,reg_term"
    outs = []
    for threads in ("1", "3"):
        out = workdir / f"infer{threads}.csv"
        assert main(["infer", str(a), str(workdir / "data" / "manifest.csv"), "-o", str(out),
                     "--threads", threads]) == 0
        outs.append(out.read_text())
    assert outs[0] == outs[1]
    lines = outs[0].splitlines()
    assert lines[0] == "path,predicted_label,probability,s1,t1,s2,t2"
    assert len(lines) == 9 and all(len(l.split(",")) == 7 for l in lines)


def test_single_segmentation_equals_fixed_even(workdir, tmp_path):
    # A = M * tau leaves exactly one valid segmentation
    cfg = tmp_path / "tight.cfg"
    cfg.write_text(SMALL_CFG.replace("A = 12", "A = 6"))
    assert main(["synth", str(tmp_path / "d"), "--config", str(cfg), "--classes", "2",
                 "--per-class", "2", "--seed", "0"]) == 0
    outs = []
    for mode in ("lsbp", "fixed_even"):
        out = tmp_path / f"{mode}.ckpt"
        assert main(["train", str(tmp_path / "d" / "manifest.csv"), "-o", str(out),
                     "--config", str(cfg), "--mode", mode, "--seed", "4"]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_pretrain_then_train_with_init(workdir):
    d = workdir
    assert main(["synth", str(d / "gray"), "--config", str(d / "small.cfg"), "--classes", "2",
                 "--per-class", "2", "--gray", "--seed", "5"]) == 0
    assert main(["pretrain", str(d / "gray" / "manifest.csv"), "-o", str(d / "pre.ckpt"),
                 "--config", str(d / "small.cfg")]) == 0
    _, gray = load_checkpoint(d / "pre.ckpt")
    assert gray.channels == 1
    out = _train(d, "init", "--init-from", str(d / "pre.ckpt"))
    _, cfg = load_checkpoint(out)
    assert cfg.channels == 2
    # a two-channel manifest cannot be pretrained
    assert main(["pretrain", str(d / "data" / "manifest.csv"), "-o", str(d / "x.ckpt"),
                 "--config", str(d / "small.cfg")]) == 2


def test_eval_reports_mean_of_folds(workdir):
    out = workdir / "eval.csv"
    assert main(["eval", str(workdir / "data" / "manifest.csv"), "--config",
                 str(workdir / "small.cfg"), "--set", "max_iterations=1", "--mode", "fixed_even",
                 "-o", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "class,accuracy"
    folds = [float(l.split(",")[1]) for l in lines if l.startswith("fold")]
    mean = [float(l.split(",")[1]) for l in lines if l.startswith("mean")]
    assert len(folds) == 4
    assert mean[0] == pytest.approx(sum(folds) / 4, abs=1e-9)
    matrix = lines[lines.index("") + 1:]
    assert matrix[0] == "true\\pred,class1,class2"
    rows = matrix[1:]
    assert sum(int(v) for r in rows for v in r.split(",")[1:]) == 8


def test_eval_needs_folds(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(SMALL_CFG)
    assert main(["synth", str(tmp_path / "d"), "--config", str(cfg), "--per-class", "1",
                 "--classes", "2"]) == 0
    assert main(["eval", str(tmp_path / "d" / "manifest.csv"), "--config", str(cfg)]) == 2


def test_gradcheck_repeatable(capsys):
    assert main(["gradcheck", "--seed", "7"]) == 0
    first = capsys.readouterr().out
    assert main(["gradcheck", "--seed", "7"]) == 0
    second = capsys.readouterr().out
    assert first == second and first.startswith("max_relative_error,")
    assert float(first.split(",")[1]) <= 1e-4


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "reconfnet", "--help"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and "gradcheck" in r.stdout
