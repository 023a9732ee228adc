"""Command-line interface, run configuration and experiment drivers."""

import csv
import json

import numpy as np
import pytest

from jointembed import config as C
from jointembed.cli import main
from jointembed.data import read_dataset
from jointembed.errors import ConfigConflict, ParseError, ValidationError
from jointembed.experiments import check_sweep_axis, summarize, sweep_svg
from jointembed.model import load_checkpoint
from jointembed.trainer import ABLATION_VARIANTS

FAST = ["--config", "demo", "--epochs", "8", "--warmup-epochs", "2", "--decay", "6:1e-4"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def demo_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    plain, attr = root / "plain.csv", root / "attr.csv"
    assert main(["synth", "--config", "demo", "--output-dir", str(root), "--out", str(plain)]) == 0
    assert main(["synth", "--config", "demo", "--M", "2", "--output-dir", str(root), "--out", str(attr)]) == 0
    return plain, attr


# --- configuration -----------------------------------------------------------


def test_bundled_configs_load():
    assert C.bundled("benchmark") == C.RunConfig()
    attr = C.bundled("benchmark_attr")
    assert attr.uses_attributes and attr.M > 0
    assert C.bundled("demo").n_train_identities < C.RunConfig().n_train_identities
    with pytest.raises(ValidationError):
        C.bundled("nope")


def test_config_round_trip(tmp_path):
    cfg = C.RunConfig(hidden_dims=(32, 16), decay=((30, 1e-4),), gamma=0.7, attr_s=12.0)
    C.save(cfg, tmp_path / "c.json")
    assert C.load(tmp_path / "c.json") == cfg


def test_config_rejects_unknown_keys_and_bad_json(tmp_path):
    with pytest.raises(ValidationError):
        C.from_dict({"gama": 0.5})
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "gamma": 0.5,\n  oops\n}\n')
    with pytest.raises(ParseError) as err:
        C.load(bad)
    assert err.value.line == 3
    with pytest.raises(ValidationError):
        C.RunConfig(loss_variant="AMXX")


@pytest.mark.parametrize(
    "name, text, value",
    [("decay", "36:1e-4,52:1e-5", ((36, 1e-4), (52, 1e-5))), ("hidden_dims", "64,32", (64, 32)),
     ("batch_norm_output", "false", False), ("attr_s", "none", None), ("epochs", "12", 12),
     ("gamma", "0.5", 0.5), ("loss_variant", "BH", "BH")],
)
def test_parse_value(name, text, value):
    assert C.parse_value(name, text) == value


def test_parse_value_errors():
    for name, text in [("epochs", "1.5"), ("batch_norm_output", "maybe"), ("decay", "36")]:
        with pytest.raises(ValidationError):
            C.parse_value(name, text)


def test_preset_applies_to_loss_config():
    assert C.RunConfig(preset="duke").loss_config().gamma == 0.5
    with pytest.raises(ConfigConflict):
        C.RunConfig(preset="msmt", loss_variant="AM0BH_Attr").loss_config()


# --- experiment helpers --------------------------------------------------------


def test_sweep_axis_rules():
    check_sweep_axis("gamma", C.RunConfig())
    check_sweep_axis("Q", C.RunConfig(loss_variant="AM0BH_Attr"))
    for axis, variant in [("Q", "AM0BH"), ("lambda", "BH"), ("gamma", "AM0"), ("depth", "AM0BH")]:
        with pytest.raises(ValidationError):
            check_sweep_axis(axis, C.RunConfig(loss_variant=variant))


def test_summarize_population_std():
    class R:
        def __init__(self, r1, m):
            self.cmc, self.map = np.array([r1] * 10), m

        def rank(self, k):
            return float(self.cmc[k - 1])

    stats = summarize([R(0.5, 0.2), R(1.0, 0.4)])
    assert stats["Rank-1"] == (0.75, 0.25)
    assert stats["mAP"][0] == pytest.approx(0.3) and stats["mAP"][1] == pytest.approx(0.1)


def test_sweep_svg_is_wellformed():
    import xml.etree.ElementTree as ET

    root = ET.fromstring(sweep_svg([(4, 0.8, 0.6), (16, 0.85, 0.65), (64, 0.82, 0.61)], "Q"))
    assert root.tag.endswith("svg")


# --- command line ------------------------------------------------------------


def test_synth_writes_dataset(demo_data, capsys):
    ds = read_dataset(demo_data[0])
    ds.validate()
    assert ds.M == 0 and read_dataset(demo_data[1]).M == 2


def test_train_eval_round_trip(demo_data, tmp_path, capsys):
    out = tmp_path / "train"
    assert main(["train", *FAST, "--dataset", str(demo_data[0]), "--output-dir", str(out)]) == 0
    log = rows(out / "metrics.csv")
    assert log[0][:3] == ["epoch", "step", "lr"] and {int(r[0]) for r in log[1:]} == set(range(8))
    params, model_cfg, meta = load_checkpoint(out / "checkpoint.npz")
    assert meta["loss_variant"] == "AM0BH" and model_cfg.embed_dim == 8
    ev = tmp_path / "eval"
    assert main(["eval", "--config", "demo", "--checkpoint", str(out / "checkpoint.npz"),
                 "--dataset", str(demo_data[0]), "--output-dir", str(ev)]) == 0
    assert (ev / "eval.md").read_text().startswith("|")
    assert rows(ev / "eval.csv")[0][0] == "metric"


def test_config_echo_reproduces_run(demo_data, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", *FAST, "--gamma", "0.6", "--dataset", str(demo_data[0]), "--output-dir", str(a)]) == 0
    echoed = json.loads((a / "config.json").read_text())
    assert echoed["gamma"] == 0.6 and echoed["epochs"] == 8
    assert main(["train", "--config", str(a / "config.json"), "--dataset", str(demo_data[0]),
                 "--output-dir", str(b)]) == 0
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()


def test_train_is_bitwise_reproducible(demo_data, tmp_path):
    for name in ("x", "y"):
        assert main(["train", *FAST, "--dataset", str(demo_data[0]), "--output-dir", str(tmp_path / name)]) == 0
    assert (tmp_path / "x" / "metrics.csv").read_bytes() == (tmp_path / "y" / "metrics.csv").read_bytes()


def test_preset_flag_is_echoed(demo_data, tmp_path):
    out = tmp_path / "p"
    assert main(["train", *FAST, "--preset", "duke", "--dataset", str(demo_data[0]), "--output-dir", str(out)]) == 0
    assert json.loads((out / "config.json").read_text())["preset"] == "duke"


def test_attribute_variant_needs_attribute_dataset(demo_data, tmp_path, capsys):
    args = ["train", *FAST, "--loss-variant", "AM0BH_Attr", "--output-dir", str(tmp_path)]
    assert main(args + ["--dataset", str(demo_data[0])]) == 1
    assert "attribute" in capsys.readouterr().err
    assert main(args + ["--dataset", str(demo_data[1]), "--Q", "2"]) == 0
    assert "attribute accuracy" in capsys.readouterr().out
    ev = tmp_path / "ev"
    assert main(["eval", "--checkpoint", str(tmp_path / "checkpoint.npz"), "--dataset", str(demo_data[1]),
                 "--output-dir", str(ev)]) == 0
    assert "Attribute accuracy" in (ev / "eval.md").read_text()


@pytest.mark.parametrize(
    "argv",
    [
        ["train", "--config", "demo"],  # missing --dataset
        ["train", "--config", "demo", "--dataset", "no/such/file.csv"],
        ["eval", "--checkpoint", "missing.npz", "--dataset", "x.csv"],
        ["train", "--config", "missing.json", "--dataset", "x.csv"],
        ["train", "--config", "demo", "--epochs", "many", "--dataset", "x.csv"],
        ["gradcheck", "--only", "no_such_loss"],
        ["frobnicate"],
    ],
)
def test_invalid_input_exits_1(argv, tmp_path, capsys):
    assert main(argv + ["--output-dir", str(tmp_path)] if argv[0] != "frobnicate" else argv) == 1


def test_gradcheck_cli(tmp_path, capsys):
    args = ["gradcheck", "--trials", "3", "--only", "am_softmax,batch_hard_hinge", "--output-dir", str(tmp_path)]
    assert main(args) == 0
    assert "PASS" in (tmp_path / "gradcheck.txt").read_text()
    assert main(args + ["--corrupt", "am_softmax"]) != 0
    assert "FAIL" in (tmp_path / "gradcheck.txt").read_text()


def test_ablate_cli(demo_data, tmp_path, capsys):
    assert main(["ablate", *FAST, "--repeats", "2", "--dataset", str(demo_data[0]), "--output-dir", str(tmp_path)]) == 0
    table = rows(tmp_path / "ablation.csv")
    assert [r[0] for r in table[1:]] == list(ABLATION_VARIANTS)
    assert table[0][:3] == ["variant", "Rank-1_mean", "Rank-1_std"]
    assert len(rows(tmp_path / "ablation_runs.csv")) == 1 + 2 * len(ABLATION_VARIANTS)
    assert (tmp_path / "ablation.md").read_text().count("\n") == 2 + len(ABLATION_VARIANTS)


def test_sweep_cli(demo_data, tmp_path, capsys):
    args = ["sweep", *FAST, "--loss-variant", "AM0BH_Attr", "--embed-dim", "136", "--dataset", str(demo_data[1]),
            "--output-dir", str(tmp_path)]
    assert main(args + ["--axis", "Q", "--values", "4,16,64", "--svg"]) == 0
    table = rows(tmp_path / "sweep_Q.csv")
    assert [r[0] for r in table[1:]] == ["4", "16", "64"]
    assert (tmp_path / "sweep_Q.svg").exists()
    assert main(args + ["--axis", "depth", "--values", "1"]) == 1
    assert main(args + ["--axis", "Q", "--values", "four"]) == 1


def test_output_root_env(demo_data, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("JOINTEMBED_OUTPUT_ROOT", str(tmp_path))
    assert main(["gradcheck", "--trials", "1", "--only", "softmax_ce"]) == 0
    assert (tmp_path / "gradcheck" / "gradcheck.txt").exists()
    assert (tmp_path / "gradcheck" / "config.json").exists()
