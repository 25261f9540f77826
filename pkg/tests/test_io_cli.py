import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from finray import io, cli
from finray import workspace as ws
from finray.errors import ConfigError, IoFailure
from finray.slipnet import SlipDataset
from finray.tactile import TactileFrame, generate_trace, TraceSpec


def run(argv, capsys=None):
    code = cli.dispatch([str(a) for a in argv])
    out = capsys.readouterr() if capsys else None
    return code, out


# ----------------------------------------------------------------- config

def test_default_config_loads_and_matches_defaults():
    cfg = io.load_config()
    assert cfg == io.config_from_dict(io.ToolConfig().to_dict())
    assert len(cfg.digest()) == 64


@pytest.mark.parametrize("doc, where", [
    ({"linkage": {"crank_link": "long"}}, "linkage/crank_link"),
    ({"train": {"epochs": 0}}, "train/epochs"),
    ({"plant": {"friction": 1.0}}, "plant"),
    ({"nonsense": 1}, "<root>"),
])
def test_schema_violations_name_the_path(doc, where):
    with pytest.raises(ConfigError, match=f"at {where}"):
        io.config_from_dict(doc)


def test_semantic_violation_is_config_error():
    with pytest.raises(ConfigError):
        io.config_from_dict({"train": {"learning_rate": 1.0, "epochs": 1, "hidden": [4], "l2_penalty": -1.0}})


def test_env_fallback(tmp_path, monkeypatch):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"plant": {"drop_distance": 9.0}}))
    monkeypatch.setenv(io.CONFIG_ENV, str(p))
    assert io.load_config().plant.drop_distance == 9.0
    assert io.load_config(io.default_config_path()).plant.drop_distance == 14.0


def test_bad_json_and_missing_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{")
    with pytest.raises(ConfigError):
        io.load_config(p)
    with pytest.raises(IoFailure):
        io.load_config(tmp_path / "absent.json")


# ---------------------------------------------------------------- formats

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(finite, st.integers(-10 ** 12, 10 ** 12)), max_size=30))
def test_csv_round_trip(rows):
    header, back = io.parse_csv(io.format_csv(["a", "b"], rows))
    assert header == ["a", "b"]
    assert [(float(a), int(b)) for a, b in back] == rows


@settings(max_examples=30, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 8), st.just(48)), elements=st.floats(0, 1e6)),
       st.booleans())
def test_trace_round_trip(tmp_path_factory, x, labelled):
    t = np.arange(len(x)) * 0.01
    frames = [TactileFrame(ti, xi) for ti, xi in zip(t, x)]
    labels = np.arange(len(x)) % 2 if labelled else None
    p = tmp_path_factory.mktemp("tr") / "t.csv"
    io.write_trace(p, frames, labels)
    back, lab = io.read_trace(p)
    assert all(a.equals(b) for a, b in zip(frames, back)) and len(back) == len(frames)
    if labelled:
        assert lab.tolist() == labels.tolist()
    else:
        assert lab is None


def test_dataset_round_trip(tmp_path, slip_data):
    tr = slip_data[0]
    small = SlipDataset(tr.features[:50], tr.labels[:50], "train", tr.timestamps[:50])
    p = io.write_dataset(tmp_path / "d.csv", small)
    back = io.read_dataset(p)
    assert back.features.tobytes() == small.features.tobytes()
    assert back.labels.tolist() == small.labels.tolist()


def test_generated_trace_round_trip(tmp_path):
    fr = generate_trace(TraceSpec())
    back, _ = io.read_trace(io.write_trace(tmp_path / "t.csv", fr))
    assert all(a.equals(b) for a, b in zip(fr, back))


def test_unlabelled_file_is_not_a_dataset(tmp_path):
    p = io.write_trace(tmp_path / "t.csv", generate_trace(TraceSpec())[:5])
    with pytest.raises(IoFailure):
        io.read_dataset(p)


def test_wrong_header_rejected(tmp_path):
    p = io.write_csv(tmp_path / "x.csv", ["a"], [[1.0]])
    with pytest.raises(IoFailure):
        io.read_trace(p)


# ---------------------------------------------------------------- heatmap

def _grid(values):
    return ws.DensityGrid((0.0, 0.0), 1.0, np.asarray(values, float), 1.0)


def test_uniform_grid_is_mid_value(tmp_path):
    pgm, side = io.emit_heatmap(_grid(np.full((4, 5), 0.3)), tmp_path / "u.pgm")
    px = io.read_pgm(pgm)
    assert px.shape == (4, 5) and np.all(px == 32768)
    meta = json.loads(side.read_text())
    assert meta["min"] == meta["max"] == 0.3 and meta["cell_size"] == 1.0


def test_single_hot_cell(tmp_path):
    v = np.zeros((6, 7))
    v[1, 2] = 5.0
    px = io.read_pgm(io.emit_heatmap(_grid(v), tmp_path / "h.pgm")[0])
    assert np.count_nonzero(px == 65535) == 1
    assert px[6 - 1 - 1, 2] == 65535          # first image row is the largest y
    assert np.count_nonzero(px) == 1


def test_empty_grid_rejected():
    with pytest.raises(ValueError):
        io.heatmap_pixels(np.zeros((0, 3)))


def test_unwritable_heatmap(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(IoFailure):
        io.emit_heatmap(_grid(np.ones((2, 2))), blocker / "sub" / "h.pgm")


def test_band_60_80_brightest_pixels_connected(tmp_path, ws_pooled):
    dmap = ws.dexterity_map(ws_pooled, (60, 80))
    pgm, side = io.emit_heatmap(dmap.grid, tmp_path / "d.pgm")
    px = io.read_pgm(pgm)
    meta = json.loads(side.read_text())
    cut = (dmap.threshold - meta["min"]) / (meta["max"] - meta["min"]) * 65535
    _, n = ndimage.label(px >= np.ceil(cut))
    assert n == 1


# ---------------------------------------------------------------- manifest

def test_manifest_records_digests(tmp_path):
    a = io.write_text(tmp_path / "a.txt", "hello\n")
    m = io.write_manifest(tmp_path / "manifest.json", ["finray", "x"], io.ToolConfig(), 3, [a])
    d = json.loads((tmp_path / "manifest.json").read_text())
    assert d["outputs"] == {"a.txt": "5891b5b522d5df086d0ff0b110fbd9d21bb4fc7163af34d08286a2e846f6be03"}
    assert d["seed"] == 3 and d == m.to_dict()
    assert d["config_hash"] == io.ToolConfig().digest()


# -------------------------------------------------------------------- cli

def test_help_exits_zero(capsys):
    code, out = run(["--help"], capsys)
    assert code == 0 and "fit-linkage" in out.out


def test_console_script_help():
    r = subprocess.run([sys.executable, "-m", "finray.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "usage" in r.stdout


def test_missing_required_flag_is_usage_error(capsys, tmp_path):
    code, out = run(["train", "--out", tmp_path / "m.json"], capsys)
    assert code == 2 and "--data" in out.err


def test_unknown_command_is_usage_error(capsys):
    assert run(["dance"], capsys)[0] == 2


def test_missing_input_is_domain_error(capsys, tmp_path):
    code, out = run(["calibrate", "--trace", tmp_path / "nope.csv", "--out", tmp_path / "m.json"], capsys)
    assert code == 1 and out.err.startswith("IoFailure")


def test_bad_config_fails_before_work(capsys, tmp_path):
    bad = tmp_path / "c.json"
    bad.write_text(json.dumps({"linkage": {"crank_link": -1}}))
    out = tmp_path / "fit.csv"
    code, res = run(["fit-linkage", "--config", bad, "--out", out], capsys)
    assert code == 1 and res.err.startswith("ConfigError")
    assert not out.exists()


def test_gcn_bench_needs_model(capsys, tmp_path):
    code, out = run(["bench", "--controller", "gcn", "--out", tmp_path / "b.csv"], capsys)
    assert code == 2 and "--model" in out.err


def test_workspace_twice_same_digests(tmp_path, capsys):
    digests = []
    for name in ("a", "b"):
        d = tmp_path / name
        assert run(["workspace", "--mode", 2, "-n", 1000, "--seed", 7, "--out-dir", d], capsys)[0] == 0
        digests.append(json.loads((d / "manifest.json").read_text())["outputs"])
    assert digests[0] == digests[1]
    assert set(digests[0]) == {"samples.csv", "histogram.csv", "density.pgm", "density.pgm.json", "summary.json"}


def test_workspace_summary(tmp_path, capsys):
    run(["workspace", "--mode", "trigonal", "-n", 2000, "--seed", 1, "--out-dir", tmp_path], capsys)
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["mode"] == 2 and s["n_valid"] + s["n_degenerate"] == s["n_drawn"] == 2000
    assert s["region_count"] >= 1


def test_trace_calibrate_pipeline(tmp_path, capsys):
    tr, m = tmp_path / "t.csv", tmp_path / "m.json"
    assert run(["gen-trace", "--seed", 0, "--out", tr], capsys)[0] == 0
    code, out = run(["calibrate", "--trace", tr, "--out", m], capsys)
    assert code == 0
    assert json.loads(out.out)["f_min"] == pytest.approx(1.202894835915634, abs=1e-12)


def test_train_accepts_train_config_via_config(tmp_path, capsys, slip_data):
    d = tmp_path / "data"
    d.mkdir()
    tr = slip_data[0]
    io.write_dataset(d / "train.csv", SlipDataset(tr.features[:100], tr.labels[:100], "train"))
    tc = tmp_path / "tc.json"
    tc.write_text(json.dumps({"epochs": 3, "learning_rate": 0.5}))
    code, out = run(["train", "--data", d, "--config", tc, "--out", tmp_path / "m.json"], capsys)
    assert code == 0 and json.loads(out.out)["epochs"] == 3
    code, out = run(["eval", "--model", tmp_path / "m.json", "--data", d / "train.csv"], capsys)
    assert code == 0 and json.loads(out.out)["n"] == 100


def test_windowed_dataset_round_trip(tmp_path):
    from finray.slipnet import generate_dataset

    tr, _ = generate_dataset(TraceSpec(), 40, 10, seed=3, window=3)
    p = io.write_dataset(tmp_path / "w.csv", tr)
    header = p.read_text().splitlines()[0].split(",")
    assert len(header) == 1 + 3 * 48 + 1 and header[49] == "lag1_a0t0"
    back = io.read_dataset(p)
    assert back.features.tobytes() == tr.features.tobytes() and back.window == 3
    assert back.timestamps.tobytes() == tr.timestamps.tobytes()


def test_cli_windowed_pipeline(tmp_path, capsys):
    d = tmp_path / "data"
    assert run(["gen-data", "--train", 120, "--test", 40, "--window", 2, "--out-dir", d], capsys)[0] == 0
    tc = tmp_path / "tc.json"
    tc.write_text(json.dumps({"epochs": 5}))
    code, _ = run(["train", "--data", d, "--train-config", tc, "--out", tmp_path / "m.json"], capsys)
    assert code == 0
    assert json.loads((tmp_path / "m.json").read_text())["dims"][0] == 2
    code, out = run(["eval", "--model", tmp_path / "m.json", "--data", d / "test.csv"], capsys)
    assert code == 0 and json.loads(out.out)["n"] == 40
