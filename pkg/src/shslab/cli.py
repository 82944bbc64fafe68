"""Command-line pipeline: validate, segment, build, analyze, design-probe,
run, detect, repro-paper.

Exit codes: 0 success, 1 usage or unreadable input path, 2 document/config
validation failure, 3 numerical failure. Every file-producing stage writes a
manifest recording input digests and the effective configuration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, data_path
from .detection import detect_sequence
from .errors import (BuildError, ConfigError, DegenerateDesignError, EstimationError,
                     NetworkFormatError, NumericalError, SegmentationError, ShslabError)
from .experiment import (ExperimentConfig, eigen_report, generate_sequence,
                         read_windows, run_experiment, write_outputs)
from .grid import NetworkModel, parse_network, validate
from .linsys import discretize_zoh
from .manifest import write_manifest
from .probing import design_mami, probe_from_json, probe_to_json
from .segmentation import SegmentModel, segment_network, segments_to_json
from .ssbuild import (ScenarioFamily, build_family, contingency_from_json,
                      family_from_json, family_to_json)
from .util import default_threads, dump_json, load_json


class _Parser(argparse.ArgumentParser):
    """argparse that exits with code 1 on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_network(path) -> NetworkModel:
    return parse_network(load_json(path))


def _assignment_from_config(cfg: dict) -> dict[int, int]:
    if "segments" not in cfg:
        raise ConfigError("config needs a 'segments' assignment map")
    assignment: dict[int, int] = {}
    for seg_key, buses in cfg["segments"].items():
        try:
            seg_id = int(seg_key)
        except ValueError as exc:
            raise ConfigError(f"segment key '{seg_key}' is not an integer") from exc
        for b in buses:
            if b in assignment:
                raise ConfigError(f"bus {b} assigned to more than one segment")
            assignment[int(b)] = seg_id
    return assignment


def _segment_by_id(segments: list[SegmentModel], seg_id: int) -> SegmentModel:
    for seg in segments:
        if seg.id == seg_id:
            return seg
    raise ConfigError(f"no segment with id {seg_id} "
                      f"(have {[s.id for s in segments]})")


def _contingencies(cfg_list: list) -> list:
    return [contingency_from_json(obj, loc=f"$.contingencies[{i}]")
            for i, obj in enumerate(cfg_list)]


def _channel_arg(value):
    """Accept '0'/'1'/'2' as indices, otherwise a channel name."""
    if isinstance(value, str) and value.lstrip("-").isdigit():
        return int(value)
    return value


def _pick_family(doc: dict, segment: int | None) -> ScenarioFamily:
    families = doc.get("families")
    if families is None:
        raise NetworkFormatError("matrices document lacks 'families'")
    if segment is None:
        if len(families) != 1:
            raise ConfigError(
                f"document holds {len(families)} families; pass --segment")
        return family_from_json(families[0])
    for fam in families:
        if int(fam["segment_id"]) == segment:
            return family_from_json(fam)
    raise ConfigError(f"no family for segment {segment}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    try:
        model = _load_network(args.network)
    except NetworkFormatError as exc:
        print(f"INVALID: {exc}", file=sys.stderr)
        return 2
    report = validate(model)
    if report:
        for v in report:
            print(str(v), file=sys.stderr)
        return 2
    print(f"OK: {model.name} ({len(model.buses)} buses, {len(model.lines)} lines)")
    return 0


def cmd_segment(args) -> int:
    net = _load_network(args.network)
    cfg = load_json(args.config)
    segments = segment_network(net, _assignment_from_config(cfg))
    doc = segments_to_json(segments)
    if args.out:
        dump_json(doc, args.out)
        write_manifest(os.path.dirname(os.path.abspath(args.out)), "segment",
                       [args.network, args.config], cfg,
                       name=os.path.basename(args.out) + ".manifest.json")
        _say(f"wrote {args.out}")
    if args.dump or not args.out:
        json.dump(doc, sys.stdout, indent=2)
        print()
    return 0


def cmd_build(args) -> int:
    net = _load_network(args.network)
    cfg = load_json(args.config)
    segments = segment_network(net, _assignment_from_config(cfg))
    con_map = cfg.get("contingencies", {})
    families = []
    for seg in segments:
        listed = con_map.get(str(seg.id), [{"kind": "normal"}])
        fam = build_family(seg, _contingencies(listed),
                           monitored_bus=cfg.get("monitored_bus", {}).get(str(seg.id))
                           if isinstance(cfg.get("monitored_bus"), dict) else None,
                           threads=args.threads)
        families.append(family_to_json(fam))
        _say(f"segment {seg.id}: n={fam[0].n}, scenarios={fam.names}")
    dump_json({"families": families}, args.out)
    write_manifest(os.path.dirname(os.path.abspath(args.out)), "build",
                   [args.network, args.config], cfg,
                   name=os.path.basename(args.out) + ".manifest.json")
    _say(f"wrote {args.out}")
    return 0


def cmd_analyze(args) -> int:
    fam = _pick_family(load_json(args.family), args.segment)
    rep = eigen_report(fam)
    rep.write_csv(args.out)
    write_manifest(os.path.dirname(os.path.abspath(args.out)), "analyze",
                   [args.family], {"segment": fam.segment_id},
                   name=os.path.basename(args.out) + ".manifest.json")
    for a, name, mx in zip(rep.alphas, rep.names, rep.max_real):
        print(f"alpha{a} ({name}): max Re(lambda) = {mx:.6g} "
              f"[{'stable' if mx < 0 else 'UNSTABLE'}]")
    print(f"all scenarios stable: {'yes' if rep.all_hurwitz else 'NO'}")
    print(f"most damped dominant mode: alpha{rep.most_damped} "
          f"({rep.names[rep.most_damped]})")
    _say(f"wrote {args.out}")
    return 0


def cmd_design_probe(args) -> int:
    fam = _pick_family(load_json(args.family), args.segment)
    probe = design_mami(fam, fam[0].x_op, _channel_arg(args.channel),
                        args.tau0, args.ts, margin=args.margin,
                        threads=args.threads)
    dump_json(probe_to_json(probe), args.out)
    write_manifest(os.path.dirname(os.path.abspath(args.out)), "design-probe",
                   [args.family],
                   {"tau0": args.tau0, "ts": args.ts, "channel": args.channel,
                    "margin": args.margin},
                   name=os.path.basename(args.out) + ".manifest.json")
    print(f"mu0 = {probe.mu0:.6g}")
    print(f"mu1 = {probe.mu1:.6g}")
    print(f"delta_min = {probe.delta_min:.6g} (closest pair {probe.argmin_pair})")
    print(f"R0 = {probe.R0:.6g}")
    print(f"R = {probe.R:.6g}")
    _say(f"wrote {args.out}")
    return 0


def _experiment_from_config(cfg_path, threads: int, probe_off: bool = False,
                            k_override: int | None = None):
    cfg = load_json(cfg_path)
    base = os.path.dirname(os.path.abspath(cfg_path))

    def rel(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    inputs = [cfg_path]
    net_path = rel(cfg["network"])
    inputs.append(net_path)
    net = _load_network(net_path)
    segments = segment_network(net, _assignment_from_config(cfg))
    seg = _segment_by_id(segments, int(cfg["segment"]))
    fam = build_family(seg, _contingencies(cfg["contingencies"]), threads=threads)

    probe_cfg = cfg.get("probe", {})
    if "file" in probe_cfg:
        probe_path = rel(probe_cfg["file"])
        inputs.append(probe_path)
        probe = probe_from_json(load_json(probe_path))
    else:
        probe = design_mami(
            fam, fam[0].x_op,
            _channel_arg(probe_cfg.get("channel", "delta")),
            float(probe_cfg.get("tau0", cfg["tau0"])),
            float(probe_cfg.get("ts", cfg["ts"])),
            margin=float(probe_cfg.get("margin", 1.01)),
            threads=threads)

    exp = ExperimentConfig(
        family=fam, probe=probe,
        tau=float(cfg["tau"]), tau0=float(cfg["tau0"]), ts=float(cfg["ts"]),
        K=int(k_override if k_override is not None else cfg["K"]),
        seed=int(cfg["seed"]),
        noise_sigma=float(cfg.get("noise_sigma", 0.0)),
        subsample=int(cfg.get("subsample", 10)),
        x0_mode=cfg.get("x0_mode", "zero"),
        threads=threads,
        probe_override_R=0.0 if probe_off else None)
    return exp, cfg, inputs


def _print_run_summary(exp: ExperimentConfig, result, reference: dict | None) -> None:
    probe = exp.probe
    print(f"mu0 = {probe.mu0:.6g}")
    print(f"mu1 = {probe.mu1:.6g}")
    print(f"delta_min = {probe.delta_min:.6g}")
    print(f"R0 = {probe.R0:.6g}")
    print(f"R = {probe.R:.6g} (applied {exp.applied_R:.6g})")
    print(f"intervals = {exp.K}, accuracy = {result.accuracy:.4f} "
          f"({result.report.matches}/{exp.K})")
    if reference:
        ref = ", ".join(f"{k}={v}" for k, v in sorted(reference.items()))
        print(f"bundled reference values (source six-bus study): {ref}")


def cmd_run(args) -> int:
    exp, cfg, inputs = _experiment_from_config(
        args.config, args.threads, probe_off=args.probe_off, k_override=args.K)
    result = run_experiment(exp, generate_sequence(exp))
    write_outputs(result, args.out_dir, windows_mode=args.windows)
    dump_json(probe_to_json(exp.probe), os.path.join(args.out_dir, "probe.json"))
    write_manifest(args.out_dir, "run", inputs, cfg)
    _print_run_summary(exp, result, cfg.get("reference"))
    return 0


def cmd_detect(args) -> int:
    fam = _pick_family(load_json(args.family), args.segment)
    probe = probe_from_json(load_json(args.probe)) if args.probe else None
    windows = read_windows(args.trace, probe=probe)
    if not windows:
        raise ConfigError(f"no window files under {args.trace}")
    truth = None
    if args.truth:
        import csv as _csv
        with open(args.truth, "r", encoding="utf-8") as fh:
            rows = list(_csv.reader(fh))
        truth = [int(r[1]) for r in rows[1:]]
    # windows are stored on the estimator grid; use every recorded sample
    dmodels = [discretize_zoh(sc, windows[0].ts) for sc in fam]
    report = detect_sequence(dmodels, windows, truth=truth, subsample=1,
                             threads=args.threads)
    dump_json(report.to_json(), args.out)
    write_manifest(os.path.dirname(os.path.abspath(args.out)), "detect",
                   [args.family] + ([args.probe] if args.probe else [])
                   + ([args.truth] if args.truth else []),
                   {"trace": str(args.trace)},
                   name=os.path.basename(args.out) + ".manifest.json")
    if report.accuracy is not None:
        print(f"accuracy = {report.accuracy:.4f} ({report.matches}/{len(windows)})")
    else:
        print(f"detected = {report.detected}")
    _say(f"wrote {args.out}")
    return 0


def cmd_repro_paper(args) -> int:
    cfg_path = str(data_path("paper6bus_experiment.json"))
    cfg = load_json(cfg_path)
    net = _load_network(str(data_path("paper6bus.json")))
    segments = segment_network(net, _assignment_from_config(cfg))

    print("== segment state dimensions ==")
    families = {}
    for seg in segments:
        listed = (cfg["contingencies"] if seg.id == int(cfg["segment"])
                  else [{"kind": "normal"}])
        fam = build_family(seg, _contingencies(listed), threads=args.threads)
        families[seg.id] = fam
        print(f"segment {seg.id}: n = {fam[0].n}")

    fam = families[int(cfg["segment"])]
    print("== eigenvalue analysis ==")
    rep = eigen_report(fam)
    for a, name, mx in zip(rep.alphas, rep.names, rep.max_real):
        print(f"alpha{a} ({name}): max Re(lambda) = {mx:.6g} "
              f"[{'stable' if mx < 0 else 'UNSTABLE'}]")
    print(f"most damped dominant mode: alpha{rep.most_damped} "
          f"({rep.names[rep.most_damped]})")

    print("== probing design and switched-sequence detection ==")
    exp, cfg, inputs = _experiment_from_config(cfg_path, args.threads,
                                               k_override=args.K)
    result = run_experiment(exp, generate_sequence(exp))
    write_outputs(result, args.out_dir, windows_mode=args.windows)
    dump_json(probe_to_json(exp.probe), os.path.join(args.out_dir, "probe.json"))
    rep.write_csv(os.path.join(args.out_dir, "eigs.csv"))
    write_manifest(args.out_dir, "repro-paper", inputs, cfg)
    _print_run_summary(exp, result, cfg.get("reference"))
    _say(f"artifacts under {args.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _add_threads(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=int, default=default_threads(),
                   help="parallelism cap (env SHS_LAB_THREADS)")


def build_parser() -> _Parser:
    parser = _Parser(prog="shslab", description=__doc__)
    parser.add_argument("--version", action="version", version=f"shslab {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("validate", help="parse and validate a network document")
    p.add_argument("network")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("segment", help="partition a network into segments")
    p.add_argument("--network", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--dump", action="store_true", help="also print segments to stdout")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("build", help="assemble per-scenario state-space families")
    p.add_argument("--network", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    _add_threads(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("analyze", help="per-scenario eigenvalues and stability verdict")
    p.add_argument("--family", required=True)
    p.add_argument("--segment", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("design-probe", help="design the magnitude-modulated probe")
    p.add_argument("--family", required=True)
    p.add_argument("--segment", type=int)
    p.add_argument("--tau0", type=float, required=True)
    p.add_argument("--ts", type=float, required=True)
    p.add_argument("--channel", default="delta", help="0|1|2 or d|delta|m_a")
    p.add_argument("--margin", type=float, default=1.01)
    p.add_argument("--out", required=True)
    _add_threads(p)
    p.set_defaults(func=cmd_design_probe)

    p = sub.add_parser("run", help="run a switched-sequence detection experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--windows", choices=("strided", "full", "none"), default="strided")
    p.add_argument("--probe-off", action="store_true",
                   help="apply R=0 instead of the designed magnitude")
    p.add_argument("--K", type=int, help="override the configured interval count")
    _add_threads(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("detect", help="replay detection from recorded windows")
    p.add_argument("--family", required=True)
    p.add_argument("--segment", type=int)
    p.add_argument("--probe")
    p.add_argument("--trace", required=True, help="windows/ directory with meta.json")
    p.add_argument("--truth")
    p.add_argument("--out", required=True)
    _add_threads(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("repro-paper",
                       help="bundled six-bus reproduction: build, analyze, probe, detect")
    p.add_argument("--out-dir", default="repro-out")
    p.add_argument("--windows", choices=("strided", "full", "none"), default="strided")
    p.add_argument("--K", type=int, help="override the configured interval count")
    _add_threads(p)
    p.set_defaults(func=cmd_repro_paper)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        rc = args.func(args)
    except (NetworkFormatError, ConfigError, SegmentationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (BuildError, NumericalError, DegenerateDesignError, EstimationError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except ShslabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read/write: {exc}", file=sys.stderr)
        return 1
    return rc


if __name__ == "__main__":
    sys.exit(main())
