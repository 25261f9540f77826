"""Acceptance suite. Each test prints one PASS/FAIL line with its runtime.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline; the
session summary repeats them either way. Every check computes its own inputs
so the reported runtime covers the whole criterion.
"""

import json
import time

import numpy as np

from finray import cli, compliance, control, kinematics, slipnet, tactile, workspace
from finray.tactile import TactileFrame

from _report import record
from _specs import recovery_errors


def test_criterion_01_graph_topology():
    t0 = time.perf_counter()
    g = slipnet.build_graph(TactileFrame(0, np.zeros((3, 16))))
    e = g.edges
    arr = e // 16
    same = arr[:, 0] == arr[:, 1]
    per_array = [(int(np.sum(same & (arr[:, 0] == a))), int(np.sum(~same & (arr[:, 0] == a)))) for a in range(3)]
    ok = g.node_count == 48 and g.edge_count == 348 and per_array == [(84, 32)] * 3
    assert record(1, "graph topology", ok, time.perf_counter() - t0, 1,
                  f"{g.node_count} nodes, {g.edge_count} edges, (intra, inter) per array {per_array[0]}")


def test_criterion_02_gradient_check():
    t0 = time.perf_counter()
    errs = []
    for s in range(20):
        p = slipnet.init_params(seed=s, zero_readout=False)
        g = slipnet.build_graph(np.random.default_rng(s).uniform(0, 1, 48))
        errs.append(slipnet.grad_check(p, g, s % 2, 1e-5))
    worst = max(errs)
    assert record(2, "GCN gradient check", worst < 1e-5, time.perf_counter() - t0, 30,
                  f"max relative error {worst:.2e} over 20 seeds (< 1e-5)")


def test_criterion_03_classifier_accuracy():
    t0 = time.perf_counter()
    train, test = slipnet.generate_dataset(tactile.TraceSpec(), 2100, 700, seed=0)
    params = slipnet.train(train, slipnet.TrainConfig())["params"]
    acc = slipnet.evaluate(params, test)["accuracy"]
    assert record(3, "slip classifier accuracy", acc >= 0.95, time.perf_counter() - t0, 300,
                  f"test accuracy {acc:.4f} on 700 frames (>= 0.95)")


def test_criterion_04_linkage_linearity():
    t0 = time.perf_counter()
    r2 = kinematics.fit_linear_map(kinematics.LinkageGeometry(), 200)["r_squared"]
    assert record(4, "linkage linearity", r2 >= 0.98, time.perf_counter() - t0, 1,
                  f"R^2 {r2:.5f} (>= 0.98)")


def test_criterion_05_workspace_concentration():
    t0 = time.perf_counter()
    geo = kinematics.LinkageGeometry()
    r = np.concatenate([workspace.sample_workspace(geo, m, 100_000, seed=0).radius for m in (2, 3)])
    inside = np.mean((r >= 20) & (r <= 80))
    low, high = np.mean(r < 10), np.mean(r > 125)
    ok = inside >= 0.80 and low < 0.01 and high < 0.01
    assert record(5, "workspace concentration", ok, time.perf_counter() - t0, 60,
                  f"in [20, 80] mm {inside:.4f}, below 10 mm {low:.4f}, above 125 mm {high:.4f}")


def test_criterion_06_dexterity_topology():
    # The 80-100 mm band is a known deviation for the default geometry; the
    # failure is reported here as it stands, see the decisions ledger.
    t0 = time.perf_counter()
    geo = kinematics.LinkageGeometry()
    pooled = workspace.WorkspaceSampleSet.concat(
        [workspace.sample_workspace(geo, m, 100_000, seed=0) for m in (2, 3)])
    mid = workspace.dexterity_map(pooled, (60, 80)).region_count
    far = workspace.dexterity_map(pooled, (80, 100)).region_count
    detail = f"60-80 mm: {mid} region (want 1); 80-100 mm: {far} region(s) (want 2)"
    if far != 2:
        detail += "; deviation: no low-density gap forms in the 80-100 mm band with this geometry"
    assert record(6, "dexterity topology", mid == 1 and far == 2, time.perf_counter() - t0, 120, detail)


def test_criterion_07_compliance_ordering():
    t0 = time.perf_counter()
    m = compliance.FinRayModel()
    res = {s: compliance.solve_equilibrium(m, compliance.place_object(m, s, 15.0), m.nominal_actuation)
           for s in ("circle", "square", "rectangle")}
    d = {s: r.max_deformation for s, r in res.items()}
    f = {s: r.total_contact_force for s, r in res.items()}
    ok = all(d["circle"] < d[s] and f["circle"] < f[s] for s in ("square", "rectangle"))
    detail = ", ".join(f"{s} {d[s]:.2f} mm / {f[s]:.2f} N" for s in res)
    assert record(7, "compliance ordering", ok, time.perf_counter() - t0, 60, detail)


def test_criterion_08_controller_trend():
    t0 = time.perf_counter()
    train, _ = slipnet.generate_dataset(tactile.TraceSpec(), 2100, 700, seed=0)
    params = slipnet.train(train, slipnet.TrainConfig())["params"]
    ctls = {"threshold": control.ThresholdController(
                tactile.calibrate_threshold(tactile.generate_trace(tactile.TraceSpec()))),
            "gcn": control.GcnController(params)}
    n = 50
    runs = {k: [control.run_episode(control.Scenario.cap_removal(), c, None, s, keep_frames=False)
                for s in range(n)] for k, c in ctls.items()}
    force = {k: float(np.mean([r.mean_contact_force for r in v])) for k, v in runs.items()}
    succ = {k: float(np.mean([r.success for r in v])) for k, v in runs.items()}
    p = succ["threshold"]
    margin = 3 * np.sqrt(max(p * (1 - p), 1 / n) / n)
    ok = force["gcn"] <= force["threshold"] and succ["gcn"] >= p - margin
    detail = (f"{n} episodes: force gcn {force['gcn']:.2f} N vs threshold {force['threshold']:.2f} N; "
              f"success gcn {succ['gcn']:.2f} vs threshold {p:.2f} (3 sigma margin {margin:.3f})")
    assert record(8, "controller trend", ok, time.perf_counter() - t0, 300, detail)


def test_criterion_09_calibration_recovery():
    t0 = time.perf_counter()
    errs = recovery_errors(100)
    assert record(9, "threshold calibration recovery", errs.max() < 0.05, time.perf_counter() - t0, 60,
                  f"max relative error {errs.max():.4f} over 100 specs (< 0.05)")


def _outputs(argv, out_dir, manifest):
    code = cli.dispatch([str(a) for a in argv])
    if code != 0:
        return {"exit": code}
    return json.loads((out_dir / manifest).read_text())["outputs"]


def test_criterion_10_determinism(tmp_path, capsys):
    t0 = time.perf_counter()
    setup = tmp_path / "setup"
    setup.mkdir()
    (setup / "catalog.csv").write_text(control.format_catalog(control.default_catalog()[:3]))
    (setup / "tc.json").write_text(json.dumps({"epochs": 20, "seed": 3}))
    assert cli.dispatch(["gen-data", "--train", "300", "--test", "100", "--seed", "1",
                         "--out-dir", str(setup / "data")]) == 0
    assert cli.dispatch(["train", "--data", str(setup / "data"), "--train-config", str(setup / "tc.json"),
                         "--out", str(setup / "model.json")]) == 0

    model, cat = setup / "model.json", setup / "catalog.csv"
    commands = {
        "workspace": (["workspace", "--mode", 2, "-n", 5000, "--seed", 7, "--out-dir", "{d}"], "manifest.json"),
        "gen-trace": (["gen-trace", "--seed", 4, "--out", "{d}/t.csv"], "t.csv.manifest.json"),
        "gen-data": (["gen-data", "--train", 200, "--test", 50, "--seed", 2, "--out-dir", "{d}"], "manifest.json"),
        "train": (["train", "--data", setup / "data", "--train-config", setup / "tc.json", "--out", "{d}/m.json"],
                  "m.json.manifest.json"),
        "bench": (["bench", "--catalog", cat, "--model", model, "--episodes", 2, "--seed", 5,
                   "--out", "{d}/b.csv"], "b.csv.manifest.json"),
        "scenario": (["scenario", "cap-removal", "--model", model, "--seed", 6, "--out", "{d}/s.json"],
                     "s.json.manifest.json"),
    }
    bad = []
    for name, (argv, manifest) in commands.items():
        seen = []
        for run, threads in (("a", 1), ("b", 1), ("c", 4)):
            d = tmp_path / name / run
            d.mkdir(parents=True)
            args = [str(a).replace("{d}", str(d)) for a in argv] + ["--threads", str(threads)]
            seen.append(_outputs(args, d, manifest))
        if not (seen[0] == seen[1] == seen[2]) or "exit" in seen[0]:
            bad.append(name)
    capsys.readouterr()
    detail = f"{len(commands)} seeded subcommands, 2 runs at --threads 1 plus 1 at --threads 4"
    detail += f"; differing: {', '.join(bad)}" if bad else "; all output digests identical"
    assert record(10, "determinism", not bad, time.perf_counter() - t0, 120, detail)
