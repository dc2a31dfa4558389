"""Command-line interface.

Exit codes: 0 success, 2 scenario validation error, 3 physics error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import PhysicsError, ScenarioError
from .geometry import discretize
from .magnetics import b_field_many
from .scenario import (
    Scenario,
    build_coil_path,
    compare_coils,
    load_scenario,
    run_scenario,
)

EXIT_OK = 0
EXIT_SCENARIO = 2
EXIT_PHYSICS = 3


def _cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    manifest = run_scenario(scenario, seed=args.seed, out_dir=args.out)
    print(f"wrote {len(manifest['files'])} files to {args.out}")
    for line in (Path(args.out) / "summary.txt").read_text().splitlines():
        print(f"  {line}")
    return EXIT_OK


def _cmd_fieldmap(args) -> int:
    scenario = load_scenario(args.scenario)
    resolved = scenario.resolved
    if args.coil not in resolved["coil"]:
        raise ScenarioError(f"--coil: undefined coil {args.coil!r}")
    try:
        nx, ny, nz = (int(n) for n in args.grid.split(","))
    except ValueError as exc:
        raise ScenarioError(f"--grid: expected NX,NY,NZ, got {args.grid!r}") from exc
    if min(nx, ny, nz) < 1:
        raise ScenarioError("--grid: counts must be >= 1")
    path = build_coil_path(resolved, args.coil)
    coarse = discretize(build_coil_path(resolved, args.coil, discretization_m=0.01), 0.01)
    lo = coarse.vertices.min(axis=0)
    hi = coarse.vertices.max(axis=0)
    z0 = args.height
    xs = np.linspace(lo[0], hi[0], nx)
    ys = np.linspace(lo[1], hi[1], ny)
    zs = np.linspace(z0, z0 + args.depth, nz) if nz > 1 else np.array([z0])
    pts = np.array([(x, y, z) for x in xs for y in ys for z in zs])
    b = b_field_many(path, pts)
    out = Path(args.out) if args.out else Path(f"fieldmap_{args.coil}.csv")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("x,y,z,bx,by,bz\n")
        for p, bi in zip(pts, b):
            row = [float(p[0]), float(p[1]), float(p[2]), float(bi[0]), float(bi[1]), float(bi[2])]
            fh.write(",".join(repr(v) for v in row) + "\n")
    print(f"wrote {len(pts)} samples to {out}")
    return EXIT_OK


def _cmd_compare_coils(args) -> int:
    scenario = load_scenario(args.scenario)
    report = compare_coils(scenario)
    text = report.format()
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


def _cmd_report(args) -> int:
    out = Path(args.out_dir)
    manifest_path = out / "manifest.json"
    if not manifest_path.is_file():
        raise ScenarioError(f"no manifest.json in {out}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    print(f"scenario: {manifest['scenario']}  (tool {manifest['tool']} {manifest['version']}, "
          f"seed {manifest['seed']})")
    summary = out / "summary.txt"
    if summary.is_file():
        print()
        print(summary.read_text(encoding="utf-8").rstrip())
    links = out / "links.csv"
    if links.is_file():
        print()
        print("link budgets:")
        rows = links.read_text(encoding="utf-8").strip().splitlines()
        header = rows[0].split(",")
        widths = [max(len(h), 12) for h in header]
        print("  " + "  ".join(h.ljust(w) for h, w in zip(header, widths)))
        for row in rows[1:]:
            cells = row.split(",")
            fmt = []
            for cell, h in zip(cells, header):
                try:
                    fmt.append(f"{float(cell):.5g}" if h != "uid" else cell)
                except ValueError:
                    fmt.append(cell)
            print("  " + "  ".join(c.ljust(w) for c, w in zip(fmt, widths)))
    for name in sorted(manifest["files"]):
        if name.startswith("energy") or name == "session_energy.txt":
            print()
            print((out / name).read_text(encoding="utf-8").rstrip())
    cov = out / "coverage.csv"
    if cov.is_file():
        rows = cov.read_text(encoding="utf-8").strip().splitlines()[1:]
        readable = sum(int(r.rsplit(",", 1)[1]) for r in rows)
        print()
        print(f"coverage: {readable}/{len(rows)} grid placements readable "
              f"({readable / len(rows):.1%})")
    bend = out / "bend_sweep.csv"
    if bend.is_file():
        print()
        print("bend sweep (radius_m, k, k/k_flat):")
        for row in bend.read_text(encoding="utf-8").strip().splitlines()[1:]:
            r, _l, _m, k, rel = row.split(",")
            print(f"  {float(r) if float(r) > 0 else 'flat':>8}  {float(k):.6g}  {float(rel):.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nfcsim",
        description="Simulate wearable NFC links: coil fields, link budgets, "
                    "inventory protocol, and energy.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario and write the output bundle")
    p.add_argument("scenario", help="scenario TOML file")
    p.add_argument("--seed", type=int, default=1, help="simulation seed (default 1)")
    p.add_argument("--out", default="out", help="output directory (default ./out)")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fieldmap", help="sample the field of one coil on a grid")
    p.add_argument("scenario")
    p.add_argument("--coil", required=True, help="coil name from the scenario")
    p.add_argument("--grid", required=True, help="NX,NY,NZ sample counts")
    p.add_argument("--height", type=float, default=0.005, help="z of the first layer (m)")
    p.add_argument("--depth", type=float, default=0.02, help="z extent when NZ > 1 (m)")
    p.add_argument("--out", default=None, help="output CSV path")
    p.set_defaults(func=_cmd_fieldmap)

    p = sub.add_parser("compare-coils", help="field localization report for two coils")
    p.add_argument("scenario")
    p.add_argument("--out", default=None, help="also write the report to this file")
    p.set_defaults(func=_cmd_compare_coils)

    p = sub.add_parser("report", help="re-render tables from an output bundle")
    p.add_argument("out_dir")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except PhysicsError as exc:
        print(f"physics error: {exc}", file=sys.stderr)
        return EXIT_PHYSICS


if __name__ == "__main__":
    sys.exit(main())
