"""Command-line front end.

Every command writes SI-unit CSV/JSON files into ``--out`` and prints a
short human-readable summary.  Option values come from, in increasing
priority: built-in presets, the JSON file given with ``--config`` (keys are
option names with dashes or underscores) and explicit flags.

Exit codes: 0 success, 2 parse error, 3 invalid parameter, 4 physics
failure (no minima, escaped particle, lost lock, no matching solution),
5 I/O error.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import addressing, dynamics, geometry, metrics, resonator
from .errors import (DomainError, GeometryError, InsufficientDataError, IntegrationError,
                     InvalidParameterError, NoSolutionError, SaddleNotMinimumError)
from .field import DriveConfig, evaluate_grid

EXIT_OK, EXIT_PARSE, EXIT_PARAM, EXIT_PHYSICS, EXIT_IO = 0, 2, 3, 4, 5


class PhysicsFailure(Exception):
    """A run that completed but did not produce the requested physical state."""


class ParseFailure(Exception):
    """Malformed input file."""


# ---------------------------------------------------------------- helpers

def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _read_json(path) -> dict:
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseFailure(f"{path}: not valid JSON ({exc.msg})") from exc
    if not isinstance(d, dict):
        raise ParseFailure(f"{path}: expected a JSON object")
    return d


def _pairs(items, what: str) -> dict:
    out = {}
    for it in items or []:
        if "=" not in it:
            raise InvalidParameterError(f"{what} must look like group=value, got {it!r}")
        k, v = it.split("=", 1)
        out[k] = float(v)
    return out


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _species(args) -> metrics.Species:
    if args.species == "ca40":
        return metrics.CA40
    if args.species == "dust":
        qm = args.qm if args.qm is not None else dynamics.calibrate_dust_qm(150.0, 0.03)
        return metrics.dust_species(qm)
    raise InvalidParameterError(f"unknown species {args.species!r}")


def _drive(args) -> DriveConfig:
    return DriveConfig(args.v_nom, 2 * math.pi * args.freq, _pairs(args.fraction, "--fraction"),
                       _pairs(args.dc, "--dc-bias"))


def _preset_layout(name: str, args=None) -> geometry.ElectrodeLayout:
    kw = {}
    if args is not None:
        for key in ("pitch", "gap", "rows", "cols", "inner_ground_radius"):
            v = getattr(args, key, None)
            if v is not None:
                kw[key] = v
        if getattr(args, "no_ground_plane", False):
            kw["ground_plane_height"] = None
        elif getattr(args, "ground_plane", None) is not None:
            kw["ground_plane_height"] = args.ground_plane
    if name == "point":
        r0 = kw.get("inner_ground_radius", 0.5e-3)
        return geometry.make_point_trap(r0, 2 * r0, kw.get("gap", 50e-6),
                                        ground_plane_height=kw.get("ground_plane_height"))
    if name == "array2x2":
        return geometry.make_addressable_array(geometry.array2x2_params(**kw))
    if name == "array4x4":
        return geometry.make_addressable_array(geometry.array4x4_params(**kw))
    if name == "custom":
        return geometry.make_addressable_array(geometry.ArrayParams(**kw))
    raise InvalidParameterError(f"unknown layout kind {name!r}")


def _layout(args) -> geometry.ElectrodeLayout:
    if args.layout in ("point", "array2x2", "array4x4"):
        return _preset_layout(args.layout)
    try:
        return geometry.ElectrodeLayout.from_dict(_read_json(args.layout))
    except (KeyError, TypeError) as exc:
        raise ParseFailure(f"{args.layout}: not a layout file ({exc})") from exc


# ---------------------------------------------------------------- commands

def cmd_generate(args) -> int:
    layout = _preset_layout(args.kind, args)
    path = _write(args.out, args.name or f"{args.kind}.json", _dump(layout.to_dict()))
    n_addr = sum(1 for e in layout.electrodes if e.role == "rf_addressable")
    print(f"layout {layout.name}: {len(layout.electrodes)} electrodes, {n_addr} addressable, "
          f"{len(layout.sites)} sites -> {path}")
    return EXIT_OK


def _slices(layout, drive, species, site, length, n, fmt):
    """Horizontal slice at site height and vertical slice through the site row."""
    x0, y0, x1, y1 = layout.bounding_region
    top = layout.ground_plane_height or 2 * length
    xs = np.linspace(x0, x1, n)
    ys = np.linspace(y0, y1, n)
    zs = np.linspace(0.02 * top, 0.98 * top, n)
    horiz = evaluate_grid(layout, drive, (xs, ys, [site[2]]), species.charge, species.mass)
    vert = evaluate_grid(layout, drive, (xs, [site[1]], zs), species.charge, species.mass)
    if fmt == "json":
        return horiz.to_json(), vert.to_json()
    return horiz.to_csv(), vert.to_csv()


def cmd_analyze(args) -> int:
    layout = _layout(args)
    drive = _drive(args)
    species = _species(args)
    length = metrics.characteristic_length(layout)
    spacing = args.spacing or length / 24.0
    region = metrics.default_region(layout, spacing)
    if drive.v_nom == 0:
        raise PhysicsFailure("no minima in region")
    reports, _ = metrics.analyze_sites(layout, drive, species, region)
    if not reports:
        raise PhysicsFailure("no minima in region")
    ext = "json" if args.format == "json" else "csv"
    _write(args.out, "sites.json", _dump({"sites": [r.to_dict() for r in reports],
                                          "drive": drive.to_dict(),
                                          "species": species.to_dict()}))
    h, v = _slices(layout, drive, species, reports[0].position, length, args.map_points,
                   args.format)
    _write(args.out, f"slice_horizontal.{ext}", h)
    _write(args.out, f"slice_vertical.{ext}", v)
    for r in reports:
        f = r.secular_frequencies / (2 * math.pi * 1e6)
        print(f"site ({r.position[0] * 1e3:+.3f}, {r.position[1] * 1e3:+.3f}, "
              f"{r.position[2] * 1e3:.3f}) mm  f_sec = {f[0]:.4f}/{f[1]:.4f}/{f[2]:.4f} MHz  "
              f"depth = {r.depth:.4f} eV  kappa_d = {100 * r.kappa_d:.2f}%  {r.classification}")
    print(f"{len(reports)} sites, minimum depth {min(r.depth for r in reports):.4f} eV")
    return EXIT_OK


def cmd_sweep(args) -> int:
    layout = _layout(args)
    drive = _drive(args)
    species = _species(args)
    group = args.group or (layout.addressable_groups[0] if layout.addressable_groups else None)
    if group is None:
        raise InvalidParameterError("layout has no addressable group")
    fr = _floats(args.fractions) if args.fractions else None
    rep = addressing.sweep_addressing(layout, drive, species, group, fr, spacing=args.spacing,
                                      workers=args.threads)
    _write(args.out, "morph.json", rep.to_json() + "\n")
    _write(args.out, "morph.csv", rep.to_csv())
    for p in rep.sweep:
        print(f"V_a/V_nom = {p.fraction:.2f}  a = {p.inter_site_distance * 1e3:.4f} mm  "
              f"barrier = {p.barrier_height:.5f} eV  third trap = {p.third_trap_present}  "
              f"merged = {p.merged}")
    onset, merge = rep.third_trap_onset(), rep.merge_fraction()
    print(f"third trap from {onset}, merged from {merge}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    rng = np.random.default_rng(args.seed) if args.seed is not None else None
    oracle = None
    if args.scenario in ("dust", "ion"):
        if args.scenario == "dust":
            sc, init = dynamics.dust_scenario(rng=rng)
        else:
            sc, init, oracle = dynamics.ion_point_scenario(rng=rng)
    else:
        d = _read_json(args.scenario)
        try:
            sc = dynamics.Scenario.from_dict(d)
            init = dynamics.SimState(d["initial"]["position"], d["initial"].get("velocity", [0, 0, 0]))
        except (KeyError, TypeError) as exc:
            raise ParseFailure(f"{args.scenario}: not a scenario file ({exc})") from exc
    if args.duration is not None:
        sc.duration = args.duration
    traj = dynamics.integrate(sc, init)
    summary = traj.summary()
    try:
        w = dynamics.measured_secular_frequencies(traj)
        summary["measured_secular_frequencies"] = w.tolist()
    except InsufficientDataError as exc:
        w = None
        summary["measured_secular_frequencies"] = None
        summary["spectrum_note"] = str(exc)
    try:
        summary["micromotion_amplitude"] = dynamics.micromotion_amplitude(traj)
    except InsufficientDataError:
        summary["micromotion_amplitude"] = None
    if oracle is not None:
        summary["hessian_secular_frequencies"] = oracle.tolist()
    _write(args.out, "trajectory.csv", traj.to_csv())
    _write(args.out, "summary.json", _dump(summary))
    if traj.escaped:
        print(f"escaped at t = {traj.t[-1]:.6g} s after {len(traj)} samples")
        raise PhysicsFailure("particle escaped")
    if w is not None:
        print("measured secular frequencies: "
              + ", ".join(f"{x / (2 * math.pi):.6g} Hz" for x in w))
        if oracle is not None:
            ref = np.unique(np.round(oracle, 3))
            dev = max(min(abs(x - r) / r for r in ref) for x in w)
            print(f"largest deviation from Hessian frequencies: {100 * dev:.3f}%")
    return EXIT_OK


def _circuit(path):
    if path is None or path == "as-built":
        return resonator.as_built_resonator()
    d = _read_json(path)
    try:
        if "resonator" in d:
            return resonator.PhaseLockLoop.from_dict(d)
        return resonator.TankResonator.from_dict(d)
    except TypeError as exc:
        raise ParseFailure(f"{path}: not a circuit file ({exc})") from exc


def cmd_resonator(args) -> int:
    circ = _circuit(args.circuit)
    if args.action == "response":
        res = circ.resonator if isinstance(circ, resonator.PhaseLockLoop) else circ
        s = resonator.summarize(res)
        f = np.linspace(args.f_start, args.f_stop, args.points)
        table = resonator.frequency_response(res, f)
        if args.format == "json":
            cols = ("f_hz", "gain_abs", "gain_phase_rad", "z_in_real", "z_in_imag")
            _write(args.out, "response.json",
                   _dump({"summary": s.to_dict(), **{c: table[:, k].tolist()
                                                     for k, c in enumerate(cols)}}))
        else:
            lines = ["f_hz,gain_abs,gain_phase_rad,z_in_real,z_in_imag"]
            lines += [",".join(repr(float(v)) for v in row) for row in table]
            _write(args.out, "response.csv", "\n".join(lines) + "\n")
            _write(args.out, "response_summary.json", _dump(s.to_dict()))
        print(f"gain peak {s.gain_peak:.3f} at {s.f_peak / 1e6:.4f} MHz, 90 deg lag at "
              f"{s.f_phase / 1e6:.4f} MHz, loaded Q {s.loaded_q:.2f}")
    elif args.action == "design":
        res = circ.resonator if isinstance(circ, resonator.PhaseLockLoop) else circ
        f = args.f_target or res.drive_frequency
        ca, cb = resonator.design_match(res.L, res.unloaded_Q, res.C_trap, res.R_source, f,
                                        res.topology)
        _write(args.out, "design.json", _dump({"C_A": ca, "C_B": cb, "f_target": f}))
        print(f"C_A = {ca * 1e12:.2f} pF, C_B = {cb * 1e12:.2f} pF for {f / 1e6:.4f} MHz")
    elif args.action == "couple":
        res = resonator.coupled_reference() if args.circuit is None else (
            circ.resonator if isinstance(circ, resonator.PhaseLockLoop) else circ)
        sh = resonator.node_shift(res, args.delta_c)
        _write(args.out, "coupling.json", _dump({"delta_c": args.delta_c,
                                                 "delta_f0": sh.delta_f0,
                                                 "delta_phase_rad": sh.delta_phase}))
        print(f"delta C = {args.delta_c * 1e12:.3f} pF: resonance moves {sh.delta_f0 / 1e3:.3f} kHz,"
              f" phase at old resonance moves {math.degrees(sh.delta_phase):.2f} deg")
    else:
        if isinstance(circ, resonator.PhaseLockLoop):
            loop = circ
        else:
            base = resonator.PhaseLockLoop(circ)
            loop = resonator.PhaseLockLoop(
                resonator.lock_resonator(circ, args.f_lock, base.branch(base.c_initial)))
        r = resonator.phase_lock_sim(loop, args.delta_c)
        hist = ["t,phase_error_rad,varactor_F"]
        hist += [",".join(repr(float(v)) for v in row) for row in r.history]
        _write(args.out, "lock_history.csv", "\n".join(hist) + "\n")
        _write(args.out, "lock.json", _dump({"residual_phase_rad": r.residual_phase,
                                             "varactor_C": r.varactor_C, "locked": r.locked,
                                             "clamped": r.clamped, "diagnostic": r.diagnostic}))
        print(f"residual phase {math.degrees(r.residual_phase):.4f} deg, varactor "
              f"{r.varactor_C * 1e12:.3f} pF, locked = {r.locked}")
        if not r.locked:
            raise PhysicsFailure(r.diagnostic or "loop did not lock")
    return EXIT_OK


def cmd_table1(args) -> int:
    species = _species(args)
    rows = addressing.table1(species)
    if args.format == "json":
        _write(args.out, "table1.json", _dump([
            {"a_m": r.a, "omega_rad_s": r.omega, "t_gate_s": r.t_gate,
             "t_gate_reduced_s": r.t_gate_reduced} for r in rows]))
    else:
        _write(args.out, "table1.csv", addressing.table1_csv(rows))
    for r, (p, _) in zip(rows, addressing.TABLE1_PRINTED_MS):
        print(f"a = {r.a * 1e6:7.1f} um  omega = {r.omega / 1e6:5.2f}e6 rad/s  "
              f"T = {r.t_gate * 1e3:9.4g} ms (printed {p:g})  reduced = {r.t_gate_reduced * 1e3:.4g} ms")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _drive_opts(p, v_nom=215.0, freq=10e6):
    p.add_argument("--v-nom", type=float, default=v_nom, help="RF amplitude (V)")
    p.add_argument("--freq", type=float, default=freq, help="drive frequency (Hz)")
    p.add_argument("--fraction", action="append", metavar="GROUP=F",
                   help="amplitude fraction of a drive group (repeatable)")
    p.add_argument("--dc", action="append", metavar="GROUP=V", help="DC bias (repeatable)")
    p.add_argument("--species", default="ca40", choices=("ca40", "dust"))
    p.add_argument("--qm", type=float, help="dust charge-to-mass ratio (C/kg)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="traparray",
                                 description="Addressable planar Paul-trap arrays.")
    ap.add_argument("--config", help="JSON file with option defaults")
    ap.add_argument("--out", type=Path, default=Path("."), help="output directory")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    ap.add_argument("--seed", type=int, help="seed for sampled starting points")
    ap.add_argument("--format", choices=("csv", "json"), default="csv")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a layout file")
    p.add_argument("kind", choices=("point", "array2x2", "array4x4", "custom"))
    p.add_argument("--pitch", type=float)
    p.add_argument("--gap", type=float)
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--inner-ground-radius", type=float)
    p.add_argument("--ground-plane", type=float, help="ground plane height (m)")
    p.add_argument("--no-ground-plane", action="store_true")
    p.add_argument("--name", help="output file name")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("analyze", help="find trap sites and write reports and map slices")
    p.add_argument("layout", help="layout JSON or preset name")
    _drive_opts(p)
    p.add_argument("--spacing", type=float, help="grid spacing (m)")
    p.add_argument("--map-points", type=int, default=61)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="addressing-electrode amplitude sweep")
    p.add_argument("layout", help="layout JSON or preset name")
    _drive_opts(p)
    p.add_argument("--group", help="addressable drive group")
    p.add_argument("--fractions", help="comma-separated descending fractions")
    p.add_argument("--spacing", type=float, help="grid spacing (m)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="integrate a trajectory")
    p.add_argument("scenario", help="scenario JSON, or the preset 'dust' or 'ion'")
    p.add_argument("--duration", type=float)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("resonator", help="RF resonator response, design, coupling and lock")
    p.add_argument("action", choices=("response", "design", "couple", "lock"))
    p.add_argument("circuit", nargs="?", help="circuit JSON (default: as-built resonator)")
    p.add_argument("--f-start", type=float, default=9.5e6)
    p.add_argument("--f-stop", type=float, default=12e6)
    p.add_argument("--points", type=int, default=501)
    p.add_argument("--f-target", type=float)
    p.add_argument("--f-lock", type=float, default=9.7e6)
    p.add_argument("--delta-c", "--dC", dest="delta_c", type=float, default=0.2e-12)
    p.set_defaults(func=cmd_resonator)

    p = sub.add_parser("table1", help="gate-time table")
    p.add_argument("--species", default="ca40", choices=("ca40", "dust"))
    p.add_argument("--qm", type=float)
    p.set_defaults(func=cmd_table1)
    return ap


class _Parser:
    """argparse wrapper that reports parse errors through exit code 2."""

    def __init__(self):
        self.ap = build_parser()

    def parse(self, argv):
        ns = self.ap.parse_args(argv)
        if ns.config:
            cfg = _read_json(ns.config)
            sub = self.ap._subparsers._group_actions[0].choices[ns.command]
            sub.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
            top = {a.dest for a in self.ap._actions}
            self.ap.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()
                                    if k.replace("-", "_") in top})
            ns = self.ap.parse_args(argv)
            if ns.out is not None:
                ns.out = Path(ns.out)
        return ns


def main(argv=None) -> int:
    try:
        ns = _Parser().parse(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code not in (0, None) else EXIT_OK
    except ParseFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    if ns.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_PARAM
    try:
        return ns.func(ns)
    except ParseFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (InvalidParameterError, GeometryError, ValueError, TypeError) as exc:
        if isinstance(exc, DomainError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_PHYSICS
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAM
    except (PhysicsFailure, NoSolutionError, SaddleNotMinimumError, IntegrationError,
            InsufficientDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PHYSICS
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
