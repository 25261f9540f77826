"""Command-line entry point: ``finray <subcommand> ...``.

Every command writes a manifest (``manifest.json`` in an output directory,
or ``<out>.manifest.json`` next to an output file) with the command line,
config hash, seed, version and SHA-256 digests of the files written.

Exit codes: 0 success, 1 domain error (error class name on stderr), 2 usage.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import compliance, control, io, kinematics, slipnet, tactile, workspace
from .errors import FinrayError


def _band(text: str) -> tuple:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected lo,hi in mm") from None
    return lo, hi


def _modes(text: str) -> tuple:
    try:
        return tuple(int(kinematics.Mode.parse(v)) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected modes such as 1,2,3") from None


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="tool config JSON (falls back to $FINRAY_CONFIG, then defaults)")
    common.add_argument("--threads", type=_positive_int, default=1, help="worker threads (results do not depend on it)")

    p = argparse.ArgumentParser(prog="finray", description="Fin Ray gripper simulation and analysis toolkit.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("fit-linkage", parents=[common], help="sweep actuator travel and fit theta(y)")
    s.add_argument("--samples", type=int, default=200)
    s.add_argument("--out", required=True)

    s = sub.add_parser("compliance", parents=[common], help="finger deformation and force along an actuation ramp")
    s.add_argument("--shape", required=True, choices=["sphere", "cube", "cylinder", "circle", "square", "rectangle"])
    s.add_argument("--actuation", type=float, required=True, help="final base bend, rad")
    s.add_argument("--steps", type=_positive_int, default=10)
    s.add_argument("--radius", type=float, default=20.0, help="object characteristic radius, mm")
    s.add_argument("--out", required=True)

    s = sub.add_parser("workspace", parents=[common], help="Monte Carlo workspace and dexterity map")
    s.add_argument("--mode", required=True, type=lambda v: int(kinematics.Mode.parse(v)))
    s.add_argument("-n", type=_positive_int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--band", type=_band, default=(60.0, 80.0))
    s.add_argument("--quantile", type=float, default=0.5)
    s.add_argument("--cell-size", type=float, default=2.0)
    s.add_argument("--out-dir", required=True)

    s = sub.add_parser("gen-trace", parents=[common], help="synthetic tactile grip trace")
    s.add_argument("--spec", help="TraceSpec JSON (default: config trace section)")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)

    s = sub.add_parser("calibrate", parents=[common], help="noise floor and f_min from a trace")
    s.add_argument("--trace", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("gen-data", parents=[common], help="labelled train/test frames for the classifier")
    s.add_argument("--spec")
    s.add_argument("--train", type=_positive_int, default=2100)
    s.add_argument("--test", type=_positive_int, default=700)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--window", type=_positive_int, help="filtered frames per node feature (default: config train.window)")
    s.add_argument("--out-dir", required=True)

    s = sub.add_parser("train", parents=[common], help="train the graph classifier")
    s.add_argument("--data", required=True, help="directory holding train.csv")
    s.add_argument("--train-config", dest="train_config", help="TrainConfig JSON")
    s.add_argument("--out", required=True)

    s = sub.add_parser("eval", parents=[common], help="accuracy and confusion matrix")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True, help="labelled CSV")
    s.add_argument("--out")

    s = sub.add_parser("bench", parents=[common], help="controller benchmark over an object catalog")
    s.add_argument("--catalog")
    s.add_argument("--controller", choices=["threshold", "gcn", "both"], default="both")
    s.add_argument("--model", help="classifier JSON (needed for gcn)")
    s.add_argument("--threshold-model", help="calibrated threshold JSON (default: calibrate the config trace)")
    s.add_argument("--episodes", type=_positive_int, default=10)
    s.add_argument("--modes", type=_modes, default=(1, 2, 3))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("scenario", parents=[common], help="run one seeded episode")
    s.add_argument("kind", choices=[k.value for k in control.ScenarioKind])
    s.add_argument("--controller", choices=["threshold", "gcn"], default="gcn")
    s.add_argument("--model")
    s.add_argument("--threshold-model")
    s.add_argument("--object", help="catalog object name (pick-hold)")
    s.add_argument("--mode", type=lambda v: int(kinematics.Mode.parse(v)))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    return p


# the train subcommand documents --config as its training config; accept
# both a TrainConfig object and a full tool config there
def _train_config(args, cfg: io.ToolConfig) -> slipnet.TrainConfig:
    if args.train_config:
        return slipnet.TrainConfig.from_dict(io.read_json(args.train_config))
    return cfg.train


def _load_config(args) -> io.ToolConfig:
    if args.command == "train" and args.config:
        d = io.read_json(args.config)
        if set(d) <= set(slipnet.TrainConfig.__dataclass_fields__):
            args.train_config = args.config
            return io.load_config(None)
    return io.load_config(args.config)


def _manifest_for(out: Path) -> Path:
    return out / "manifest.json" if out.is_dir() else Path(str(out) + ".manifest.json")


def _finish(argv, cfg, seed, outputs, target: Path):
    io.write_manifest(_manifest_for(target), argv, cfg, seed, outputs)


def _trace_spec(args, cfg) -> tactile.TraceSpec:
    spec = tactile.TraceSpec.from_dict(io.read_json(args.spec)) if args.spec else cfg.trace
    if getattr(args, "seed", None) is not None and args.command == "gen-trace":
        spec = replace(spec, seed=args.seed)
    return spec


def _threshold(args, cfg) -> tactile.SlipThresholdModel:
    if args.threshold_model:
        return tactile.SlipThresholdModel.from_dict(io.read_json(args.threshold_model))
    return tactile.calibrate_threshold(tactile.generate_trace(cfg.trace))


def _controllers(args, cfg, which) -> dict:
    out = {}
    if which in ("threshold", "both"):
        out["threshold"] = control.ThresholdController(_threshold(args, cfg))
    if which in ("gcn", "both"):
        params = slipnet.GcnParams.from_dict(io.read_json(args.model))
        out["gcn"] = control.GcnController(params)
    return out


def cmd_fit_linkage(args, cfg, argv):
    fit = kinematics.fit_linear_map(cfg.linkage, args.samples)
    out = io.write_csv(args.out, ["y_mm", "theta_rad"], zip(fit["y"], fit["theta"]))
    _finish(argv, cfg, None, [out], out)
    print(json.dumps({k: fit[k] for k in ("slope", "intercept", "r_squared")}))


def cmd_compliance(args, cfg, argv):
    model = cfg.finray
    obj = compliance.place_object(model, args.shape, args.radius)
    schedule = np.linspace(args.actuation / args.steps, args.actuation, args.steps)
    results = compliance.contact_force_profile(model, obj, schedule)
    rows = [(i, a, r.max_deformation, r.total_contact_force, r.contact_point_count)
            for i, (a, r) in enumerate(zip(schedule, results))]
    out = io.write_csv(args.out, ["step", "actuation_rad", "deformation_mm", "force_N", "contact_points"], rows)
    _finish(argv, cfg, None, [out], out)


def cmd_workspace(args, cfg, argv):
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    samples = workspace.sample_workspace(cfg.linkage, args.mode, args.n, args.seed, threads=args.threads)
    pts = samples.contact_points
    if pts.shape[1] < 3:
        pts = np.concatenate([pts, np.full((len(samples), 3 - pts.shape[1], 3), np.nan)], axis=1)
    header = [f"{c}{i}" for i in (1, 2, 3) for c in "xyz"] + ["radius"]
    rows = np.column_stack([pts.reshape(len(samples), 9), samples.radius]).tolist()
    f_samples = io.write_csv(d / "samples.csv", header, rows)
    hist = workspace.radius_histogram(samples)
    edges = hist.bin_edges
    f_hist = io.write_csv(d / "histogram.csv", ["bin_lo_mm", "bin_hi_mm", "count"],
                          [(edges[i], edges[i + 1], int(c)) for i, c in enumerate(hist.counts)])
    summary = {"mode": args.mode, "n_drawn": samples.n_drawn, "n_valid": len(samples),
               "n_degenerate": samples.n_degenerate, "band": list(args.band),
               "support": list(workspace.histogram_support(hist)),
               "fraction_20_80": float(np.mean((samples.radius >= 20) & (samples.radius <= 80))),
               "fraction_outside_10_125": float(np.mean((samples.radius < 10) | (samples.radius > 125)))}
    outputs = [f_samples, f_hist]
    try:
        dmap = workspace.dexterity_map(samples, args.band, args.quantile, cell_size=args.cell_size)
        tr = workspace.translation_range(samples, args.band, args.quantile, cell_size=args.cell_size)
        pgm, side = io.emit_heatmap(dmap.grid, d / "density.pgm")
        outputs += [pgm, side]
        summary |= {"region_count": dmap.region_count, "delta_x_max": tr["delta_x_max"],
                    "band_samples": dmap.n_points}
    except workspace.EmptyBand:
        summary |= {"region_count": 0, "delta_x_max": 0.0, "band_samples": 0}
    outputs.append(io.write_json(d / "summary.json", summary))
    _finish(argv, cfg, args.seed, outputs, d)


def cmd_gen_trace(args, cfg, argv):
    spec = _trace_spec(args, cfg)
    out = io.write_trace(args.out, tactile.generate_trace(spec))
    _finish(argv, cfg, spec.seed, [out], out)


def cmd_calibrate(args, cfg, argv):
    frames, _ = io.read_trace(args.trace)
    model = tactile.calibrate_threshold(frames)
    out = io.write_json(args.out, model.to_dict())
    _finish(argv, cfg, None, [out], out)
    print(json.dumps(model.to_dict()))


def cmd_gen_data(args, cfg, argv):
    spec = _trace_spec(args, cfg)
    window = args.window or cfg.train.window
    train, test = slipnet.generate_dataset(spec, args.train, args.test, args.seed, window=window)
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    outs = [io.write_dataset(d / "train.csv", train), io.write_dataset(d / "test.csv", test)]
    _finish(argv, cfg, args.seed, outs, d)


def cmd_train(args, cfg, argv):
    tc = _train_config(args, cfg)
    data = io.read_dataset(Path(args.data) / "train.csv", "train")
    if data.window != tc.window:
        tc = replace(tc, window=data.window)   # the data decides the input width
    result = slipnet.train(data, tc)
    out = io.write_json(args.out, result["params"].to_dict())
    hist = io.write_csv(str(args.out) + ".loss.csv", ["epoch", "loss"], enumerate(result["loss_history"]))
    _finish(argv, cfg, tc.seed, [out, hist], Path(args.out))
    print(json.dumps({"epochs": len(result["loss_history"]), "final_loss": result["loss_history"][-1]}))


def cmd_eval(args, cfg, argv):
    params = slipnet.GcnParams.from_dict(io.read_json(args.model))
    data = io.read_dataset(args.data, "test")
    if len(data) == 0:
        raise FinrayErrorUsage("dataset is empty")
    ev = slipnet.evaluate(params, data)
    report = {"accuracy": ev["accuracy"], "confusion": ev["confusion"].tolist(), "n": len(data)}
    if args.out:
        out = io.write_json(args.out, report)
        _finish(argv, cfg, None, [out], out)
    print(json.dumps(report))


def cmd_bench(args, cfg, argv, parser):
    if args.controller in ("gcn", "both") and not args.model:
        parser.error("--model is required for the gcn controller")
    catalog_path = args.catalog or cfg.catalog
    objects = (control.parse_catalog(Path(catalog_path).read_text()) if catalog_path
               else control.default_catalog())
    ctls = _controllers(args, cfg, args.controller)
    feas = control.compute_feasibility(cfg.linkage, threads=args.threads)
    sc = control.Scenario.from_dict({**cfg.scenario, "kind": "pick-hold"})
    rows = control.run_benchmark(objects, ctls, args.episodes, args.seed, args.modes, sc, feas,
                                 cfg.plant, threads=args.threads)
    out = io.write_text(args.out, control.format_benchmark(rows))
    _finish(argv, cfg, args.seed, [out], out)
    print(json.dumps({name: control.overall_success(rows, name) for name in ctls}))


def cmd_scenario(args, cfg, argv, parser):
    if args.controller == "gcn" and not args.model:
        parser.error("--model is required for the gcn controller")
    ctl = _controllers(args, cfg, args.controller)[args.controller]
    kw = {k: v for k, v in cfg.scenario.items() if k != "kind"}
    if args.mode is not None:
        kw["mode"] = args.mode
    kind = control.ScenarioKind(args.kind)
    sc = (control.Scenario.cap_removal(**kw) if kind is control.ScenarioKind.CAP_REMOVAL
          else control.Scenario.pick_hold(**kw))
    obj = None
    if args.object:
        found = [o for o in control.default_catalog() if o.name == args.object]
        if not found:
            parser.error(f"--object: unknown object {args.object!r}")
        obj = found[0]
    feas = control.compute_feasibility(cfg.linkage, threads=args.threads)
    res = control.run_episode(sc, ctl, obj, args.seed, cfg.plant, feas)
    report = res.summary() | {"controller": args.controller, "scenario": sc.to_dict(),
                              "grip_commands": [float(g) for g in res.grips]}
    out = io.write_json(args.out, report)
    _finish(argv, cfg, args.seed, [out], out)


class FinrayErrorUsage(FinrayError, ValueError):
    """Domain-level input problem detected by the CLI."""


COMMANDS = {
    "fit-linkage": cmd_fit_linkage,
    "compliance": cmd_compliance,
    "workspace": cmd_workspace,
    "gen-trace": cmd_gen_trace,
    "calibrate": cmd_calibrate,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "scenario": cmd_scenario,
}


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if not hasattr(args, "train_config"):
        args.train_config = None
    try:
        cfg = _load_config(args)
        fn = COMMANDS[args.command]
        if fn in (cmd_bench, cmd_scenario):
            fn(args, cfg, ["finray", *argv], parser)
        else:
            fn(args, cfg, ["finray", *argv])
    except SystemExit as e:
        return int(e.code or 0)
    except FinrayError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    return dispatch(sys.argv[1:] if argv is None else list(argv))


if __name__ == "__main__":
    sys.exit(main())
