"""Command-line front end tying the pipeline together.

Commands: ``cluster``, ``profile``, ``simulate``, ``train``, ``report``.
All runs are driven by one JSON configuration file plus a few overriding
flags, and are deterministic: rerunning a command with the same config
and inputs reproduces its outputs byte for byte.

Exit codes: 0 success, 1 input or configuration error, 2 numerical
non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import clustering, config, profiles
from .controller import ShutdownPolicy, detect_event, train
from .controller import RewardConfig
from .errors import NonConvergenceError, WindfleetError
from .farmsim import (
    alarm_timestamp_grid,
    count_emergency_stops,
    label_grid,
    load_event_log,
    save_event_log,
    save_wind_traces,
    simulate,
)
from .errors import ConfigurationError
from .scada import TurbineId, normalize, parse_scada, window_average

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NONCONVERGENCE = 2


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def _load_config(args) -> config.RunConfig:
    cfg = config.load(args.config) if args.config else config.RunConfig()
    if args.seed is not None:
        cfg.override_seed(args.seed)
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def _out_dir(cfg: config.RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _feature_points(cfg: config.RunConfig, scada_csv: str):
    """Parse, window and normalize the per-turbine operating points."""
    result = parse_scada(scada_csv, cfg.layout)
    if not result.records:
        raise ConfigurationError(f"{scada_csv}: no data rows")
    features = window_average(result.records, cfg.window.seconds)
    per_turbine: dict[TurbineId, list] = {}
    for fv in sorted(features, key=lambda f: (f.turbine, f.window_start)):
        per_turbine.setdefault(fv.turbine, []).append(fv)
    points = {}
    for tid, fvs in per_turbine.items():
        if cfg.window.index >= len(fvs):
            continue
        fv = fvs[cfg.window.index]
        points[tid] = np.array(
            [
                normalize(fv.power_mean, *cfg.power_bounds),
                normalize(fv.rotor_mean, *cfg.rotor_bounds),
            ]
        )
    if not points:
        raise ConfigurationError(
            f"{scada_csv}: no turbine has a full window at index {cfg.window.index}"
        )
    return result, points


def cmd_cluster(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    parse_result, points = _feature_points(cfg, args.scada_csv)

    order = sorted(points)
    X = np.array([points[t] for t in order])
    model = clustering.fit_dpgmm(
        X,
        truncation=cfg.clustering.truncation,
        tol=cfg.clustering.tol,
        max_iter=cfg.clustering.max_iter,
        seed=cfg.clustering.seed,
    )
    assignment = clustering.assign(model, points)
    effective = model.effective_components()

    final_labels = dict(assignment.labels)
    subdocs = {}
    if cfg.clustering.subcluster:
        next_label = model.truncation
        for zone in effective:
            members = [t for t in order if assignment.labels[t] == zone]
            if len(members) < 4:
                continue
            submodel = clustering.subcluster(
                points,
                assignment,
                zone,
                truncation=cfg.clustering.truncation,
                tol=cfg.clustering.tol,
                seed=cfg.clustering.seed,
                max_iter=cfg.clustering.max_iter,
            )
            subassignment = clustering.assign(submodel, {t: points[t] for t in members})
            if not clustering.should_adopt_split(submodel, subassignment, points):
                continue
            label_map = {}
            for sub in submodel.effective_components():
                if not label_map:
                    label_map[sub] = zone
                else:
                    label_map[sub] = next_label
                    next_label += 1
            for t in members:
                sub = subassignment.labels[t]
                final_labels[t] = label_map.get(sub, zone)
            subdocs[str(zone)] = {
                "model": json.loads(submodel.to_json()),
                "label_map": {str(k): v for k, v in label_map.items()},
            }

    zones_doc = {
        "model": json.loads(model.to_json()),
        "effective_components": effective,
        "subclusters": subdocs,
    }
    (out / "zones.json").write_text(json.dumps(zones_doc, indent=2), encoding="utf-8")

    with open(out / "assignment.csv", "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        k = model.truncation
        writer.writerow(
            ["turbine", "row", "col", "label", "parent_label", "power_mean_norm", "rotor_mean_norm"]
            + [f"resp_{i}" for i in range(k)]
        )
        for tid in order:
            resp = assignment.responsibilities[tid]
            writer.writerow(
                [
                    str(tid),
                    tid.row,
                    tid.column,
                    final_labels[tid],
                    assignment.labels[tid],
                    _fmt(points[tid][0]),
                    _fmt(points[tid][1]),
                ]
                + [_fmt(v) for v in resp]
            )

    print(
        f"clustered {len(order)} turbines ({parse_result.dropped_rows} rows dropped): "
        f"{len(effective)} effective components, converged={model.converged}"
    )
    if not model.converged:
        print(
            f"warning: fit stopped after {model.iterations_run} iterations with "
            f"ELBO delta {model.final_elbo_delta:.3e} (tol {cfg.clustering.tol:.1e})",
            file=sys.stderr,
        )
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def _read_assignment(path: str) -> dict:
    labels = {}
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or "turbine" not in reader.fieldnames:
            raise ConfigurationError(f"{path}: not an assignment file")
        for row in reader:
            labels[TurbineId.parse(row["turbine"])] = int(row["label"])
    if not labels:
        raise ConfigurationError(f"{path}: no assignments")
    return labels


def cmd_profile(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    parse_result = parse_scada(args.scada_csv, cfg.layout)
    if not parse_result.records:
        raise ConfigurationError(f"{args.scada_csv}: no data rows")
    labels = _read_assignment(args.assignment_csv)
    assignment = clustering.ZoneAssignment(labels=labels, responsibilities={})

    zone_profiles = profiles.build_profiles(
        parse_result.records,
        assignment,
        bin_count=cfg.profiling.bin_count,
        power_bounds=cfg.power_bounds,
    )
    report = profiles.normality_report(
        parse_result.records, assignment, seed=cfg.clustering.seed
    )

    with open(out / "profiles.csv", "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["zone", "bin_lo", "bin_hi", "ldd_count", "lrd_count"])
        for prof in zone_profiles:
            edges = prof.ldd.bin_edges
            for i in range(len(edges) - 1):
                writer.writerow(
                    [
                        prof.zone,
                        _fmt(edges[i]),
                        _fmt(edges[i + 1]),
                        _fmt(prof.ldd.counts[i]),
                        _fmt(prof.lrd.counts[i]),
                    ]
                )

    overlaps = {}
    for i, a in enumerate(zone_profiles):
        for b in zone_profiles[i + 1 :]:
            overlaps[f"{a.zone}-{b.zone}"] = profiles.overlap_coefficient(a.ldd, b.ldd)
    stats_doc = {
        "zones": [
            {
                "zone": p.zone,
                "power_mean": p.power_mean,
                "power_std": p.power_std,
                "rotor_mean": p.rotor_mean,
                "rotor_std": p.rotor_std,
                "seconds": p.ldd.total,
                "window": {"start": p.window[0], "length": p.window[1]},
            }
            for p in zone_profiles
        ],
        "wind_context": {
            "speed": zone_profiles[0].wind_context.speed,
            "direction": zone_profiles[0].wind_context.direction,
        },
        "ldd_overlap": overlaps,
    }
    (out / "profiles.json").write_text(json.dumps(stats_doc, indent=2), encoding="utf-8")

    normality_doc = {
        str(zone): {
            param: {
                "W": res.statistic,
                "p": res.p_value,
                "passed": res.passed,
            }
            for param, res in params.items()
        }
        for zone, params in report.items()
    }
    (out / "normality.json").write_text(json.dumps(normality_doc, indent=2), encoding="utf-8")
    print(f"profiled {len(zone_profiles)} zones over {len(parse_result.records)} records")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    policy = None
    if args.policy:
        policy = ShutdownPolicy.from_json(Path(args.policy).read_text(encoding="utf-8"))
    result = simulate(
        cfg.layout, cfg.scenario, policy=policy, seed=cfg.seed, rule=cfg.detection
    )
    save_event_log(result.log, out / "events.csv")
    save_wind_traces(result.traces, out / "wind.csv")
    stops = count_emergency_stops(result.log, cfg.layout)
    print(
        f"simulated {cfg.scenario.horizon}s: {len(result.log.alarms)} alarms, "
        f"{sum(stops.values())} emergency stops"
        + (f", detection at t={result.t_detect}" if result.t_detect is not None else "")
    )
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    for penalty in cfg.reward.penalties:
        reward_cfg = RewardConfig(penalty=penalty, horizon=cfg.reward.horizon)
        result = train(cfg.layout, cfg.scenario, reward_cfg, cfg.training, rule=cfg.detection)
        if not np.isfinite(result.returns).all():
            raise NonConvergenceError(f"training produced non-finite returns for P={penalty:g}")
        metadata = {
            "seed": cfg.training.seed,
            "iterations": cfg.training.iterations,
            "penalty": penalty,
            "final_mean_return": result.final_mean_return,
            "converged": result.converged,
            "detect_failures": result.detect_failures,
        }
        (out / f"policy_P{penalty:g}.json").write_text(
            result.policy.to_json(metadata), encoding="utf-8"
        )
        with open(out / f"curve_P{penalty:g}.csv", "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["iteration", "return", "sigma"])
            for i, (ret, sigma) in enumerate(zip(result.returns, result.sigmas)):
                writer.writerow([i, _fmt(ret), _fmt(sigma)])
        print(
            f"P={penalty:g}: final mean return {result.final_mean_return:.1f}, "
            f"converged={result.converged}"
        )
    return EXIT_OK


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc


def cmd_report(args) -> int:
    cfg = _load_config(args)
    artifacts = Path(args.artifacts) if args.artifacts else Path(cfg.out_dir)
    out = _out_dir(cfg)
    sections = []
    emitted = []

    zones_path = artifacts / "zones.json"
    assignment_path = artifacts / "assignment.csv"
    if zones_path.exists() and assignment_path.exists():
        zones_doc = _read_json(zones_path)
        labels = _read_assignment(assignment_path)
        weights = [c["weight"] for c in zones_doc["model"]["components"]]
        effective = zones_doc["effective_components"]
        sections.append(
            "## Operational zones\n\n"
            f"- turbines assigned: {len(labels)}\n"
            f"- effective components: {len(effective)} of {len(weights)} "
            f"(weights {', '.join(f'{w:.3f}' for w in weights)})\n"
            f"- converged: {zones_doc['model']['diagnostics']['converged']}\n"
        )
        scatter_rows = []
        with open(assignment_path, "r", encoding="utf-8", newline="") as handle:
            for row in csv.DictReader(handle):
                scatter_rows.append(
                    (row["turbine"], row["power_mean_norm"], row["rotor_mean_norm"], row["label"])
                )
        with open(out / "zone_scatter.csv", "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["turbine", "power_mean_norm", "rotor_mean_norm", "label"])
            writer.writerows(scatter_rows)
        emitted.append("zone_scatter.csv")

        grid = label_grid(labels, cfg.layout)
        smoothed = clustering.smooth_labels(grid)
        with open(out / "farm_grid.csv", "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["row", "col", "label", "smoothed_label"])
            for r in range(cfg.layout.rows):
                for c in range(cfg.layout.columns):
                    writer.writerow([r + 1, c + 1, grid[r, c], smoothed[r, c]])
        emitted.append("farm_grid.csv")

    profiles_path = artifacts / "profiles.csv"
    stats_path = artifacts / "profiles.json"
    if profiles_path.exists():
        (out / "ldd_lrd.csv").write_text(
            profiles_path.read_text(encoding="utf-8"), encoding="utf-8"
        )
        emitted.append("ldd_lrd.csv")
        lines = ["## Load profiles\n"]
        if stats_path.exists():
            stats = _read_json(stats_path)
            for zone in stats["zones"]:
                lines.append(
                    f"- zone {zone['zone']}: power {zone['power_mean']:.3f} "
                    f"(std {zone['power_std']:.3f}), rotor {zone['rotor_mean']:.2f} rpm "
                    f"(std {zone['rotor_std']:.2f}), {zone['seconds']:.0f} s"
                )
            wind = stats["wind_context"]
            lines.append(
                f"- wind context: {wind['speed']:.1f} m/s at {wind['direction']:.1f} deg"
            )
            if stats["ldd_overlap"]:
                worst = max(stats["ldd_overlap"].items(), key=lambda kv: kv[1])
                lines.append(f"- highest LDD overlap: zones {worst[0]} at {worst[1]:.3f}")
        sections.append("\n".join(lines) + "\n")

    normality_path = artifacts / "normality.json"
    if normality_path.exists():
        normality = _read_json(normality_path)
        lines = ["## Normality\n"]
        for zone in sorted(normality, key=int):
            for param, res in normality[zone].items():
                verdict = "pass" if res["passed"] else "fail"
                lines.append(f"- zone {zone} {param}: W={res['W']:.4f} p={res['p']:.4f} {verdict}")
        sections.append("\n".join(lines) + "\n")

    events_path = artifacts / "events.csv"
    if events_path.exists():
        event_log = load_event_log(events_path)
        stops = count_emergency_stops(event_log, cfg.layout)
        t_detect = detect_event(event_log.alarms, cfg.detection)
        planned = sum(1 for _, _, kind in event_log.shutdowns if kind == "planned")
        sections.append(
            "## Storm events\n\n"
            f"- alarms: {len(event_log.alarms)}\n"
            f"- emergency stops: {sum(stops.values())} "
            f"(per row {', '.join(str(stops[r]) for r in sorted(stops))})\n"
            f"- planned shutdowns: {planned}\n"
            f"- detection time: {t_detect if t_detect is not None else 'never'}\n"
        )
        grid = alarm_timestamp_grid(event_log, cfg.layout)
        with open(out / "alarm_grid.csv", "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["row", "col", "first_alarm"])
            for r in range(cfg.layout.rows):
                for c in range(cfg.layout.columns):
                    value = grid[r, c]
                    writer.writerow([r + 1, c + 1, "" if math.isnan(value) else int(value)])
        emitted.append("alarm_grid.csv")

    policy_paths = sorted(artifacts.glob("policy_P*.json"))
    if policy_paths:
        lines = ["## Learned policies\n"]
        delay_rows = []
        for path in policy_paths:
            doc = _read_json(path)
            policy = ShutdownPolicy.from_json(json.dumps(doc))
            penalty = doc.get("metadata", {}).get("penalty", "?")
            cum = policy.cumulative_delays()
            lines.append(
                f"- {path.name}: P={penalty}, cumulative shutdown at "
                f"{', '.join(f'{cum[r]:.0f}s' for r in sorted(cum))}"
            )
            for row in sorted(policy.theta):
                delay_rows.append((penalty, row, policy.theta[row], cum[row]))
        with open(out / "learned_delays.csv", "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["penalty", "row", "mean_delay", "cumulative"])
            for penalty, row, theta, cum_v in delay_rows:
                writer.writerow([penalty, row, _fmt(theta), _fmt(cum_v)])
        emitted.append("learned_delays.csv")
        sections.append("\n".join(lines) + "\n")

    if not sections:
        raise ConfigurationError(f"{artifacts}: no artifacts to report")

    report_text = "# Wind fleet run report\n\n" + "\n".join(sections)
    if emitted:
        report_text += "\n## Plot data\n\n" + "\n".join(f"- {name}" for name in emitted) + "\n"
    (out / "report.md").write_text(report_text, encoding="utf-8")
    print(f"report written with {len(sections)} sections and {len(emitted)} data files")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="windfleet",
        description="wind-farm zone analytics, storm simulation and shutdown policy training",
    )
    parser.add_argument(
        "--explain-defaults",
        action="store_true",
        help="print every configuration default and where it comes from",
    )
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="override every seeded stage")
    parser.add_argument("--out", help="output directory (overrides the config)")

    sub = parser.add_subparsers(dest="command")
    p = sub.add_parser("cluster", help="extract operational zones")
    p.add_argument("scada_csv")
    p.set_defaults(func=cmd_cluster)
    p = sub.add_parser("profile", help="build per-zone load profiles")
    p.add_argument("scada_csv")
    p.add_argument("assignment_csv")
    p.set_defaults(func=cmd_profile)
    p = sub.add_parser("simulate", help="run the storm simulator")
    p.add_argument("--policy", help="shutdown policy JSON to execute")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("train", help="train shutdown policies")
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("report", help="aggregate artifacts into a report")
    p.add_argument("--artifacts", help="artifact directory (defaults to the output directory)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.explain_defaults:
        for key, value, origin in config.defaults_table():
            print(f"{key:32s} {value:24s} {origin}")
        return EXIT_OK
    if not getattr(args, "command", None):
        parser.print_help()
        return EXIT_INPUT
    try:
        return args.func(args)
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (WindfleetError, FileNotFoundError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
