"""Declarative scenarios: strict TOML loading, pipeline orchestration
(geometry -> magnetics -> circuit -> protocol -> energy), sweeps, and the
reproducible output bundle.

Config values are SI with unit suffixes in key names.  Parsing is strict:
unknown keys are errors, so typos cannot silently corrupt physics inputs.
Every run writes a manifest carrying the seed, tool version, resolved
defaults, and file hashes, sufficient to reproduce the bundle bit-exactly.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .circuit import (
    DETECTION_THRESHOLD,
    DrivenReader,
    LinkBudget,
    TagLoad,
    format_link_table,
    link_budget,
)
from .energy import battery_life, capacity_from_mah, format_energy_report, integrate
from .errors import ScenarioError
from .geometry import (
    AngledCoilSpec,
    Conductor,
    MeanderSpec,
    SpiralSpec,
    WirePath,
    apply_cylinder_bend,
    discretize,
    gen_angled_ring_coil,
    gen_meander,
    gen_spiral,
    write_path_table,
)
from .magnetics import (
    CoilElectrical,
    coil_electrical,
    field_map,
    fit_decay,
    mutual_inductance,
    write_field_csv,
)
from .protocol import (
    EventLog,
    ReaderDevice,
    RingDevice,
    TagDevice,
    WristbandDevice,
    duty_cycle,
    picoring_session,
    read_tag,
    run_inventory,
)

_DEFAULTS = {
    "frequency_hz": 13.56e6,
    "discretization_m": 0.001,
    "detection_threshold": DETECTION_THRESHOLD,
}

# Bends inside scenario runs use a coarser angular step than the geometry
# default: 1e-3 rad keeps arc lengths within ~4e-8 relative, plenty for
# inductance work, at a fraction of the vertex count.
_SCENARIO_BEND_MAX_ANGLE = 1e-3

_READER_DEFAULTS = {
    # 200 mW of the 515 mW board budget is assumed to reach the coil; the
    # remainder goes to MCU and regulators.
    "drive_power_w": 0.2,
    "board_supply_w": 0.515,
    "slot_count": 16,
    "data_rate_bps": 26480.0,
    "frame_overhead_s": 300e-6,
}

_TAG_DEFAULTS = {
    "payload_bytes": 16,
    "activation_threshold_w": 845e-6,
    "load_matched_ohm": 1000.0,
    "load_modulating_ohm": 100.0,
}

_RING_DEFAULTS = {
    "active_power_w": 2.02e-3,
    "sleep_power_w": 371e-6,
    "battery_capacity_mah": 40.0,
    "battery_voltage_v": 1.8,
    "load_matched_ohm": 300.0,
    "load_modulating_ohm": 30.0,
    "duty_active_s": 0.1,
    "duty_period_s": 1.0,
}

_WRISTBAND_DEFAULTS = {
    "active_power_w": 705e-3,
    "sleep_power_w": 83.5e-3,
    "drive_power_w": 0.2,
    "board_supply_w": 0.705,
    "duty_active_s": 0.1,
    "duty_period_s": 1.0,
}

_SESSION_DEFAULTS = {
    "frame_period_s": 0.01,
    "duration_s": 10.0,
    "up_bytes": 8,
    "down_bytes": 4,
    "down_every_frames": 100,
}

ASSUMPTIONS = [
    "reader coil drive power is a fixed 200 mW share of the 515 mW board supply",
    "surface tag stand-in coil geometry (the commercial tag's antenna is unpublished)",
    "meander pitch, trace width, and footprint are calibrated to the inductance target, not published values",
    "ring battery 40 mAh at 1.8 V",
    "fields evaluated in free space; the body is not modeled as a lossy dielectric",
    "data rate 26480 bit/s and 300 us frame overhead (vicinity-protocol class defaults)",
]


@dataclass
class Scenario:
    """A validated scenario: the fully resolved configuration tree."""

    name: str
    resolved: dict
    source_path: str | None = None


# ---------------------------------------------------------------------------
# strict parsing helpers

def _fail(path: str, msg: str):
    raise ScenarioError(f"{path}: {msg}")


def _check_keys(table: dict, allowed: set[str], path: str) -> None:
    for key in table:
        if key not in allowed:
            _fail(f"{path}.{key}" if path else key, "unknown key")


def _require(table: dict, key: str, path: str):
    if key not in table:
        _fail(f"{path}.{key}" if path else key, "missing required key")
    return table[key]


def _number(value, path: str, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, f"expected a number, got {value!r}")
    if positive and value <= 0:
        _fail(path, f"must be > 0, got {value!r}")
    return float(value)


def _integer(value, path: str, positive: bool = False) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(path, f"expected an integer, got {value!r}")
    if positive and value <= 0:
        _fail(path, f"must be > 0, got {value!r}")
    return value


def _vec3(value, path: str) -> list[float]:
    if not isinstance(value, list) or len(value) != 3:
        _fail(path, "expected a list of 3 numbers")
    return [_number(v, f"{path}[{i}]") for i, v in enumerate(value)]


def _string(value, path: str) -> str:
    if not isinstance(value, str):
        _fail(path, f"expected a string, got {value!r}")
    return value


def _bool(value, path: str) -> bool:
    if not isinstance(value, bool):
        _fail(path, f"expected a boolean, got {value!r}")
    return value


_COIL_KEYS = {
    "meander": {"kind", "conductor", "width_m", "height_m", "pitch_m", "trace_width_m",
                "origin_m", "rotation_z_rad", "double_track"},
    "spiral": {"kind", "conductor", "outer_width_m", "outer_height_m", "turns",
               "pitch_m", "trace_width_m", "origin_m", "rotation_z_rad"},
    "angled_ring": {"kind", "conductor", "inner_diameter_m", "turns", "tilt_rad",
                    "trace_width_m", "origin_m", "segments_per_turn"},
}


def _resolve_coil(name: str, cfg: dict, conductors: dict) -> dict:
    path = f"coil.{name}"
    if not isinstance(cfg, dict):
        _fail(path, "expected a table")
    kind = _string(_require(cfg, "kind", path), f"{path}.kind")
    if kind not in _COIL_KEYS:
        _fail(f"{path}.kind", f"unknown coil kind {kind!r} (expected meander, spiral, or angled_ring)")
    _check_keys(cfg, _COIL_KEYS[kind], path)
    cond = _string(_require(cfg, "conductor", path), f"{path}.conductor")
    if cond not in conductors:
        _fail(f"{path}.conductor", f"undefined conductor {cond!r}")
    out = {"kind": kind, "conductor": cond,
           "origin_m": _vec3(cfg.get("origin_m", [0.0, 0.0, 0.0]), f"{path}.origin_m")}
    if kind == "meander":
        out.update(
            width_m=_number(_require(cfg, "width_m", path), f"{path}.width_m", positive=True),
            height_m=_number(_require(cfg, "height_m", path), f"{path}.height_m", positive=True),
            pitch_m=_number(_require(cfg, "pitch_m", path), f"{path}.pitch_m", positive=True),
            trace_width_m=_number(_require(cfg, "trace_width_m", path), f"{path}.trace_width_m", positive=True),
            rotation_z_rad=_number(cfg.get("rotation_z_rad", 0.0), f"{path}.rotation_z_rad"),
            double_track=_bool(cfg.get("double_track", False), f"{path}.double_track"),
        )
    elif kind == "spiral":
        out.update(
            outer_width_m=_number(_require(cfg, "outer_width_m", path), f"{path}.outer_width_m", positive=True),
            outer_height_m=_number(_require(cfg, "outer_height_m", path), f"{path}.outer_height_m", positive=True),
            turns=_integer(_require(cfg, "turns", path), f"{path}.turns", positive=True),
            pitch_m=_number(_require(cfg, "pitch_m", path), f"{path}.pitch_m", positive=True),
            trace_width_m=_number(_require(cfg, "trace_width_m", path), f"{path}.trace_width_m", positive=True),
            rotation_z_rad=_number(cfg.get("rotation_z_rad", 0.0), f"{path}.rotation_z_rad"),
        )
    else:
        out.update(
            inner_diameter_m=_number(_require(cfg, "inner_diameter_m", path), f"{path}.inner_diameter_m", positive=True),
            turns=_integer(_require(cfg, "turns", path), f"{path}.turns", positive=True),
            tilt_rad=_number(cfg.get("tilt_rad", 0.0), f"{path}.tilt_rad"),
            trace_width_m=_number(_require(cfg, "trace_width_m", path), f"{path}.trace_width_m", positive=True),
            segments_per_turn=_integer(cfg.get("segments_per_turn", 180), f"{path}.segments_per_turn", positive=True),
        )
    return out


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file; all defaults resolved."""
    p = Path(path)
    if not p.is_file():
        raise ScenarioError(f"scenario file not found: {p}")
    try:
        raw = tomllib.loads(p.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{p}: invalid TOML: {exc}") from exc
    try:
        scenario = resolve_scenario(raw)
    except ScenarioError as exc:
        raise ScenarioError(f"{p}: {exc}") from exc
    scenario.source_path = str(p)
    return scenario


def resolve_scenario(raw: dict) -> Scenario:
    """Validate a raw config tree and fill in every default."""
    top_allowed = {"name", "description", "defaults", "conductor", "coil", "reader",
                   "tag", "deformation", "protocol", "ring", "wristband", "session",
                   "sweep", "outputs", "compare"}
    _check_keys(raw, top_allowed, "")
    name = _string(_require(raw, "name", ""), "name")
    resolved: dict = {"name": name}
    if "description" in raw:
        resolved["description"] = _string(raw["description"], "description")

    d = dict(_DEFAULTS)
    if "defaults" in raw:
        _check_keys(raw["defaults"], set(_DEFAULTS), "defaults")
        for k, v in raw["defaults"].items():
            d[k] = _number(v, f"defaults.{k}", positive=(k != "detection_threshold"))
    resolved["defaults"] = d

    conductors = {}
    for cname, ccfg in raw.get("conductor", {}).items():
        cpath = f"conductor.{cname}"
        if not isinstance(ccfg, dict):
            _fail(cpath, "expected a table")
        _check_keys(ccfg, {"resistivity_ohm_m", "foil_thickness_m", "trace_width_m", "mu_r"}, cpath)
        conductors[cname] = {
            "resistivity_ohm_m": _number(_require(ccfg, "resistivity_ohm_m", cpath), f"{cpath}.resistivity_ohm_m", positive=True),
            "foil_thickness_m": _number(_require(ccfg, "foil_thickness_m", cpath), f"{cpath}.foil_thickness_m", positive=True),
            "trace_width_m": _number(_require(ccfg, "trace_width_m", cpath), f"{cpath}.trace_width_m", positive=True),
            "mu_r": _number(ccfg.get("mu_r", 1.0), f"{cpath}.mu_r", positive=True),
        }
    resolved["conductor"] = conductors

    coils = {}
    for coil_name, coil_cfg in raw.get("coil", {}).items():
        coils[coil_name] = _resolve_coil(coil_name, coil_cfg, conductors)
    resolved["coil"] = coils

    def _coil_ref(value, path):
        cn = _string(value, path)
        if cn not in coils:
            _fail(path, f"undefined coil {cn!r}")
        return cn

    if "reader" in raw:
        rpath = "reader"
        rcfg = raw["reader"]
        _check_keys(rcfg, {"coil"} | set(_READER_DEFAULTS), rpath)
        reader = dict(_READER_DEFAULTS)
        reader["coil"] = _coil_ref(_require(rcfg, "coil", rpath), f"{rpath}.coil")
        for k in _READER_DEFAULTS:
            if k in rcfg:
                if k == "slot_count":
                    reader[k] = _integer(rcfg[k], f"{rpath}.{k}")
                    if reader[k] not in (1, 16):
                        _fail(f"{rpath}.{k}", "slot_count must be 1 or 16")
                else:
                    reader[k] = _number(rcfg[k], f"{rpath}.{k}", positive=True)
        resolved["reader"] = reader

    tags = []
    seen_uids = set()
    for i, tcfg in enumerate(raw.get("tag", [])):
        tpath = f"tag[{i}]"
        _check_keys(tcfg, {"uid", "coil", "position_m", "q_override"} | set(_TAG_DEFAULTS), tpath)
        uid = _require(tcfg, "uid", tpath)
        if isinstance(uid, str):
            if uid != "random":
                _fail(f"{tpath}.uid", "uid must be an integer or the string 'random'")
        else:
            uid = _integer(uid, f"{tpath}.uid")
            if not (0 <= uid < 2**64):
                _fail(f"{tpath}.uid", "uid must fit in 64 bits")
            if uid in seen_uids:
                _fail(f"{tpath}.uid", f"duplicate uid {uid}")
            seen_uids.add(uid)
        tag = dict(_TAG_DEFAULTS)
        tag["uid"] = uid
        tag["coil"] = _coil_ref(_require(tcfg, "coil", tpath), f"{tpath}.coil")
        tag["position_m"] = _vec3(_require(tcfg, "position_m", tpath), f"{tpath}.position_m")
        for k in _TAG_DEFAULTS:
            if k in tcfg:
                tag[k] = (_integer if k == "payload_bytes" else _number)(tcfg[k], f"{tpath}.{k}", positive=True)
        if "q_override" in tcfg:
            tag["q_override"] = _number(tcfg["q_override"], f"{tpath}.q_override", positive=True)
        tags.append(tag)
    resolved["tag"] = tags

    if "deformation" in raw:
        dcfg = raw["deformation"]
        _check_keys(dcfg, {"bend_radius_m", "axis_point_m", "axis_dir"}, "deformation")
        resolved["deformation"] = {
            "bend_radius_m": _number(_require(dcfg, "bend_radius_m", "deformation"), "deformation.bend_radius_m", positive=True),
            "axis_point_m": _vec3(dcfg.get("axis_point_m", [0.0, 0.0, 0.0]), "deformation.axis_point_m"),
            "axis_dir": _vec3(dcfg.get("axis_dir", [1.0, 0.0, 0.0]), "deformation.axis_dir"),
        }

    if "protocol" in raw:
        pcfg = raw["protocol"]
        _check_keys(pcfg, {"poll_mode", "poll_count", "poll_period_s"}, "protocol")
        mode = _string(pcfg.get("poll_mode", "one_shot"), "protocol.poll_mode")
        if mode not in ("one_shot", "continuous"):
            _fail("protocol.poll_mode", "must be 'one_shot' or 'continuous'")
        resolved["protocol"] = {
            "poll_mode": mode,
            "poll_count": _integer(pcfg.get("poll_count", 3), "protocol.poll_count", positive=True),
            "poll_period_s": _number(pcfg.get("poll_period_s", 1.0), "protocol.poll_period_s", positive=True),
        }
    else:
        resolved["protocol"] = {"poll_mode": "one_shot", "poll_count": 3, "poll_period_s": 1.0}

    for section, defaults in (("ring", _RING_DEFAULTS), ("wristband", _WRISTBAND_DEFAULTS)):
        if section in raw:
            cfg = raw[section]
            _check_keys(cfg, {"coil", "position_m", "q_override"} | set(defaults), section)
            out = dict(defaults)
            out["coil"] = _coil_ref(_require(cfg, "coil", section), f"{section}.coil")
            out["position_m"] = _vec3(cfg.get("position_m", [0.0, 0.0, 0.0]), f"{section}.position_m")
            for k in defaults:
                if k in cfg:
                    out[k] = _number(cfg[k], f"{section}.{k}", positive=True)
            if "q_override" in cfg:
                out["q_override"] = _number(cfg["q_override"], f"{section}.q_override", positive=True)
            resolved[section] = out
    if ("ring" in resolved) != ("wristband" in resolved):
        _fail("ring", "ring and wristband must be configured together")

    if "session" in raw:
        scfg = raw["session"]
        _check_keys(scfg, set(_SESSION_DEFAULTS), "session")
        session = dict(_SESSION_DEFAULTS)
        for k in _SESSION_DEFAULTS:
            if k in scfg:
                if k in ("up_bytes", "down_bytes", "down_every_frames"):
                    session[k] = _integer(scfg[k], f"session.{k}")
                    if session[k] < 0:
                        _fail(f"session.{k}", "must be >= 0")
                else:
                    session[k] = _number(scfg[k], f"session.{k}", positive=True)
        resolved["session"] = session
    elif "ring" in resolved:
        resolved["session"] = dict(_SESSION_DEFAULTS)

    sweep: dict = {}
    if "sweep" in raw:
        swcfg = raw["sweep"]
        _check_keys(swcfg, {"tag_grid", "bend_radii_m", "seeds"}, "sweep")
        if "tag_grid" in swcfg:
            g = swcfg["tag_grid"]
            gpath = "sweep.tag_grid"
            _check_keys(g, {"nx", "ny", "height_m", "margin_x_m", "margin_y_m"}, gpath)
            sweep["tag_grid"] = {
                "nx": _integer(g.get("nx", 10), f"{gpath}.nx", positive=True),
                "ny": _integer(g.get("ny", 10), f"{gpath}.ny", positive=True),
                "height_m": _number(g.get("height_m", 0.003), f"{gpath}.height_m", positive=True),
                "margin_x_m": _number(g.get("margin_x_m", 0.03), f"{gpath}.margin_x_m"),
                "margin_y_m": _number(g.get("margin_y_m", 0.03), f"{gpath}.margin_y_m"),
            }
        if "bend_radii_m" in swcfg:
            radii = swcfg["bend_radii_m"]
            if not isinstance(radii, list) or not radii:
                _fail("sweep.bend_radii_m", "expected a non-empty list (0 means flat)")
            sweep["bend_radii_m"] = [
                _number(r, f"sweep.bend_radii_m[{i}]") for i, r in enumerate(radii)
            ]
        if "seeds" in swcfg:
            seeds = swcfg["seeds"]
            if not isinstance(seeds, list) or not seeds:
                _fail("sweep.seeds", "expected a non-empty list of integers")
            sweep["seeds"] = [_integer(s, f"sweep.seeds[{i}]") for i, s in enumerate(seeds)]
    resolved["sweep"] = sweep

    outputs = {"fieldmap": False, "fieldmap_grid": [51, 51, 1], "fieldmap_height_m": 0.005,
               "write_paths": False}
    if "outputs" in raw:
        ocfg = raw["outputs"]
        _check_keys(ocfg, set(outputs), "outputs")
        if "fieldmap" in ocfg:
            outputs["fieldmap"] = _bool(ocfg["fieldmap"], "outputs.fieldmap")
        if "fieldmap_grid" in ocfg:
            grid = ocfg["fieldmap_grid"]
            if not isinstance(grid, list) or len(grid) != 3:
                _fail("outputs.fieldmap_grid", "expected [nx, ny, nz]")
            outputs["fieldmap_grid"] = [_integer(n, f"outputs.fieldmap_grid[{i}]", positive=True)
                                        for i, n in enumerate(grid)]
        if "fieldmap_height_m" in ocfg:
            outputs["fieldmap_height_m"] = _number(ocfg["fieldmap_height_m"], "outputs.fieldmap_height_m", positive=True)
        if "write_paths" in ocfg:
            outputs["write_paths"] = _bool(ocfg["write_paths"], "outputs.write_paths")
    resolved["outputs"] = outputs

    if "compare" in raw:
        ccfg = raw["compare"]
        _check_keys(ccfg, {"first", "second", "heights_m", "window_m", "window_samples"}, "compare")
        cmp_out = {
            "first": _coil_ref(_require(ccfg, "first", "compare"), "compare.first"),
            "second": _coil_ref(_require(ccfg, "second", "compare"), "compare.second"),
            "heights_m": [_number(h, f"compare.heights_m[{i}]", positive=True)
                          for i, h in enumerate(ccfg.get("heights_m", [0.004, 0.006, 0.008, 0.010, 0.013, 0.016, 0.020]))],
            "window_m": ccfg.get("window_m", [0.04, 0.04]),
            "window_samples": _integer(ccfg.get("window_samples", 24), "compare.window_samples", positive=True),
        }
        if not isinstance(cmp_out["window_m"], list) or len(cmp_out["window_m"]) != 2:
            _fail("compare.window_m", "expected [wx, wy]")
        cmp_out["window_m"] = [_number(w, f"compare.window_m[{i}]", positive=True)
                               for i, w in enumerate(cmp_out["window_m"])]
        if len(cmp_out["heights_m"]) < 4:
            _fail("compare.heights_m", "need at least 4 heights")
        resolved["compare"] = cmp_out

    return Scenario(name=name, resolved=resolved)


# ---------------------------------------------------------------------------
# TOML serialization of resolved scenarios

def _toml_scalar(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_scalar(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v)}")


def _emit_table(out: io.StringIO, prefix: str, table: dict) -> None:
    scalars = {k: v for k, v in table.items() if not isinstance(v, (dict, list)) or
               (isinstance(v, list) and not any(isinstance(x, dict) for x in v))}
    subtables = {k: v for k, v in table.items() if isinstance(v, dict)}
    arrays = {k: v for k, v in table.items()
              if isinstance(v, list) and any(isinstance(x, dict) for x in v)}
    if prefix and (scalars or not (subtables or arrays)):
        out.write(f"[{prefix}]\n")
    for k, v in scalars.items():
        out.write(f"{k} = {_toml_scalar(v)}\n")
    for k, v in subtables.items():
        out.write("\n")
        _emit_table(out, f"{prefix}.{k}" if prefix else k, v)
    for k, items in arrays.items():
        for item in items:
            out.write(f"\n[[{prefix}.{k}]]\n" if prefix else f"\n[[{k}]]\n")
            for kk, vv in item.items():
                out.write(f"{kk} = {_toml_scalar(vv)}\n")


def serialize_scenario(scenario: Scenario) -> str:
    """Emit the resolved scenario as TOML; load_scenario of the result is
    identical to the resolved input."""
    out = io.StringIO()
    _emit_table(out, "", scenario.resolved)
    return out.getvalue()


# ---------------------------------------------------------------------------
# pipeline construction

def build_conductor(resolved: dict, name: str) -> Conductor:
    c = resolved["conductor"][name]
    return Conductor(resistivity_ohm_m=c["resistivity_ohm_m"],
                     foil_thickness_m=c["foil_thickness_m"],
                     trace_width_m=c["trace_width_m"], mu_r=c["mu_r"])


def build_coil_path(resolved: dict, name: str, discretization_m: float | None = None) -> WirePath:
    cfg = resolved["coil"][name]
    kind = cfg["kind"]
    try:
        if kind == "meander":
            path = gen_meander(MeanderSpec(
                width_m=cfg["width_m"], height_m=cfg["height_m"], pitch_m=cfg["pitch_m"],
                trace_width_m=cfg["trace_width_m"], origin_m=tuple(cfg["origin_m"]),
                rotation_z_rad=cfg["rotation_z_rad"], double_track=cfg["double_track"]))
        elif kind == "spiral":
            path = gen_spiral(SpiralSpec(
                outer_width_m=cfg["outer_width_m"], outer_height_m=cfg["outer_height_m"],
                turns=cfg["turns"], pitch_m=cfg["pitch_m"], trace_width_m=cfg["trace_width_m"],
                origin_m=tuple(cfg["origin_m"]), rotation_z_rad=cfg["rotation_z_rad"]))
        else:
            path = gen_angled_ring_coil(AngledCoilSpec(
                inner_diameter_m=cfg["inner_diameter_m"], turns=cfg["turns"],
                tilt_rad=cfg["tilt_rad"], trace_width_m=cfg["trace_width_m"],
                origin_m=tuple(cfg["origin_m"]), segments_per_turn=cfg["segments_per_turn"]))
    except ValueError as exc:
        raise ScenarioError(f"coil.{name}: {exc}") from exc
    if discretization_m is None:
        discretization_m = resolved["defaults"]["discretization_m"]
    return discretize(path, discretization_m)


def _bend(resolved: dict, path: WirePath) -> WirePath:
    deform = resolved.get("deformation")
    if not deform:
        return path
    try:
        return apply_cylinder_bend(path, deform["bend_radius_m"],
                                   axis_point=deform["axis_point_m"],
                                   axis_dir=deform["axis_dir"],
                                   max_angle=_SCENARIO_BEND_MAX_ANGLE)
    except ValueError as exc:
        raise ScenarioError(f"deformation: {exc}") from exc


def _coil_conductor(resolved: dict, coil_name: str) -> Conductor:
    return build_conductor(resolved, resolved["coil"][coil_name]["conductor"])


def _electrical(resolved: dict, path: WirePath, coil_name: str,
                q_override: float | None = None) -> CoilElectrical:
    f = resolved["defaults"]["frequency_hz"]
    ce = coil_electrical(path, _coil_conductor(resolved, coil_name), f)
    if q_override is not None:
        return CoilElectrical.from_lq(ce.inductance_h, q_override, f)
    return ce


def _check_clearance(tag_path: WirePath, reader_path: WirePath, tag_label: str) -> None:
    # coarse vertex screen; mutual_inductance applies the exact guard
    sample = reader_path.vertices[:: max(1, reader_path.n_vertices // 4000)]
    d = np.linalg.norm(tag_path.vertices[:, None, :] - sample[None, :, :], axis=2)
    if float(d.min()) < 1e-5:
        raise ScenarioError(f"{tag_label}: position places its coil on the reader conductor")


def _placed_tag_path(resolved: dict, coil_name: str, position, bend: bool) -> WirePath:
    base = build_coil_path(resolved, coil_name)
    placed = base.translated(position)
    return _bend(resolved, placed) if bend else placed


def _resolve_uids(resolved: dict, seed: int) -> list[int]:
    """Fixed uids from the config; 'random' uids drawn from the seeded PCG64."""
    rng = np.random.default_rng(seed)
    uids: list[int] = []
    taken = {t["uid"] for t in resolved["tag"] if isinstance(t["uid"], int)}
    for t in resolved["tag"]:
        if isinstance(t["uid"], int):
            uids.append(t["uid"])
            continue
        while True:
            candidate = int(rng.integers(0, 2**63, dtype=np.int64)) * 2 + int(rng.integers(0, 2))
            if candidate not in taken:
                taken.add(candidate)
                uids.append(candidate)
                break
    return uids


def _atomic_write(out_dir: Path, name: str, text: str) -> None:
    tmp = out_dir / (name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, out_dir / name)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_scenario(scenario: Scenario, seed: int, out_dir) -> dict:
    """Execute the full pipeline and write the artifact bundle.

    Deterministic given (scenario, seed): no timestamps or machine state
    enter the outputs.  Returns the manifest dictionary.
    """
    resolved = scenario.resolved
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: list[str] = []
    f_hz = resolved["defaults"]["frequency_hz"]
    detection = resolved["defaults"]["detection_threshold"]
    summary: list[str] = [f"scenario: {scenario.name}", f"seed: {seed}"]

    reader_cfg = resolved.get("reader")
    reader = None
    reader_path = None
    if reader_cfg:
        reader_path = _bend(resolved, build_coil_path(resolved, reader_cfg["coil"]))
        reader_elec = _electrical(resolved, reader_path, reader_cfg["coil"])
        reader = ReaderDevice(
            drive=DrivenReader(coil=reader_elec, drive_power_w=reader_cfg["drive_power_w"],
                               board_supply_w=reader_cfg["board_supply_w"]),
            slot_count=reader_cfg["slot_count"],
            data_rate_bps=reader_cfg["data_rate_bps"],
            frame_overhead_s=reader_cfg["frame_overhead_s"],
        )
        summary.append(
            f"reader coil {reader_cfg['coil']}: L={reader_elec.inductance_h!r} H, "
            f"R={reader_elec.ac_resistance_ohm!r} ohm, Q={reader_elec.q_factor!r}, "
            f"C={reader_elec.tuning_capacitance_f!r} F at {f_hz!r} Hz"
        )

    # --- per-tag link budgets and the inventory runs
    uids = _resolve_uids(resolved, seed)
    tags: list[TagDevice] = []
    links: list[LinkBudget] = []
    link_rows: list[tuple[str, LinkBudget]] = []
    if reader and resolved["tag"]:
        for t_cfg, uid in zip(resolved["tag"], uids):
            tag_path = _placed_tag_path(resolved, t_cfg["coil"], t_cfg["position_m"], bend=True)
            _check_clearance(tag_path, reader_path, f"tag uid={uid:x}")
            tag_elec = _electrical(resolved, tag_path, t_cfg["coil"], t_cfg.get("q_override"))
            load = TagLoad(coil=tag_elec, load_matched_ohm=t_cfg["load_matched_ohm"],
                           load_modulating_ohm=t_cfg["load_modulating_ohm"],
                           activation_threshold_w=t_cfg["activation_threshold_w"])
            tag = TagDevice(uid=uid, position_m=tuple(t_cfg["position_m"]), load=load,
                            payload_bytes=t_cfg["payload_bytes"])
            m = mutual_inductance(reader_path, tag_path)
            lb = link_budget(reader.drive, load, m, detection_threshold=detection)
            tags.append(tag)
            links.append(lb)
            link_rows.append((f"{uid:016x}", lb))
        _atomic_write(out, "links.txt", format_link_table(link_rows) + "\n")
        files.append("links.txt")
        csv_lines = ["uid,m_h,k,eta,delivered_w,depth,active,readable"]
        for (uid_s, lb), tag in zip(link_rows, tags):
            csv_lines.append(
                f"{uid_s},{lb.mutual_h!r},{lb.k!r},{lb.eta!r},{lb.delivered_power_w!r},"
                f"{lb.modulation_depth!r},{int(lb.active)},{int(lb.readable)}"
            )
        _atomic_write(out, "links.csv", "\n".join(csv_lines) + "\n")
        files.append("links.csv")

        seeds = resolved["sweep"].get("seeds", [seed])
        proto = resolved["protocol"]
        polls = proto["poll_count"] if proto["poll_mode"] == "continuous" else 1
        for run_seed in seeds:
            log = EventLog(seed=run_seed, scenario=scenario.name)
            singulated_total: set[int] = set()
            t0 = 0.0
            for poll in range(polls):
                poll_log, singulated = run_inventory(
                    reader, tags, links, seed=run_seed, scenario=scenario.name,
                    detection_threshold=detection, t0=t0)
                log.extend(poll_log.records)
                t = log.end_time
                for uid in sorted(singulated):
                    tag = next(tt for tt in tags if tt.uid == uid)
                    dur, recs = read_tag(reader, uid, tag.payload_bytes, singulated, t0=t)
                    log.extend(recs)
                    t += dur
                singulated_total |= singulated
                t0 = (poll + 1) * proto["poll_period_s"]
                if polls > 1 and t0 < t:
                    t0 = t
            buf = io.StringIO()
            log.write(buf)
            log_name = f"events_seed{run_seed}.tsv"
            _atomic_write(out, log_name, buf.getvalue())
            files.append(log_name)

            power_table: dict = {reader.device_id: reader_cfg["board_supply_w"]}
            for tag, lb in zip(tags, links):
                power_table[tag.device_id] = tag.load.activation_threshold_w if lb.readable else 0.0
            duration = log.end_time if log.records else 0.0
            report = integrate(log, power_table, duration_s=duration)
            summary.append(f"seed {run_seed}: singulated {len(singulated_total)}/{len(tags)} tags "
                           f"in {duration!r} s")
            energy_name = f"energy_seed{run_seed}.txt"
            _atomic_write(out, energy_name, format_energy_report(report) + "\n")
            files.append(energy_name)

    # --- tag position grid sweep (coverage)
    grid_cfg = resolved["sweep"].get("tag_grid")
    if grid_cfg and reader:
        if not resolved["tag"]:
            raise ScenarioError("sweep.tag_grid requires at least one [[tag]] as the template")
        rows, coverage = _run_tag_grid(resolved, reader, reader_path, grid_cfg, detection)
        lines = ["x_m,y_m,z_m,m_h,k,eta,delivered_w,depth,readable"]
        lines += rows
        _atomic_write(out, "coverage.csv", "\n".join(lines) + "\n")
        files.append("coverage.csv")
        summary.append(f"tag grid coverage: {coverage!r} readable fraction "
                       f"({grid_cfg['nx']}x{grid_cfg['ny']} placements)")

    # --- bend radius sweep
    radii = resolved["sweep"].get("bend_radii_m")
    if radii and reader_cfg and resolved["tag"]:
        rows = _run_bend_sweep(resolved, reader_cfg, detection)
        lines = ["bend_radius_m,reader_l_h,m_h,k,k_over_flat"]
        lines += rows
        _atomic_write(out, "bend_sweep.csv", "\n".join(lines) + "\n")
        files.append("bend_sweep.csv")

    # --- picoring session
    if "ring" in resolved:
        session_files, session_summary = _run_session(resolved, scenario.name, seed, out)
        files.extend(session_files)
        summary.extend(session_summary)

    # --- optional field map over the reader (or first) coil
    if resolved["outputs"]["fieldmap"]:
        coil_name = reader_cfg["coil"] if reader_cfg else next(iter(resolved["coil"]))
        nx, ny, nz = resolved["outputs"]["fieldmap_grid"]
        path = _bend(resolved, build_coil_path(resolved, coil_name))
        samples = field_map(path, _fieldmap_grid(resolved, coil_name, nx, ny, nz))
        buf = io.StringIO()
        write_field_csv(samples, buf)
        _atomic_write(out, "fieldmap.csv", buf.getvalue())
        files.append("fieldmap.csv")

    if resolved["outputs"]["write_paths"]:
        for coil_name in resolved["coil"]:
            path = _bend(resolved, build_coil_path(resolved, coil_name))
            buf = io.StringIO()
            write_path_table(path, buf, name=coil_name)
            pname = f"path_{coil_name}.txt"
            _atomic_write(out, pname, buf.getvalue())
            files.append(pname)

    _atomic_write(out, "scenario_resolved.toml", serialize_scenario(scenario))
    files.append("scenario_resolved.toml")
    _atomic_write(out, "summary.txt", "\n".join(summary) + "\n")
    files.append("summary.txt")

    manifest = {
        "tool": "nfcsim",
        "version": __version__,
        "scenario": scenario.name,
        "seed": seed,
        "resolved_config": resolved,
        "assumptions": ASSUMPTIONS,
        "files": {name: _sha256(out / name) for name in sorted(files)},
    }
    _atomic_write(out, "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _fieldmap_grid(resolved: dict, coil_name: str, nx: int, ny: int, nz: int):
    path = build_coil_path(resolved, coil_name, discretization_m=0.01)
    lo = path.vertices.min(axis=0)
    hi = path.vertices.max(axis=0)
    z0 = resolved["outputs"]["fieldmap_height_m"]
    xs = np.linspace(lo[0], hi[0], nx)
    ys = np.linspace(lo[1], hi[1], ny)
    zs = np.linspace(z0, z0 + 0.02, nz) if nz > 1 else np.array([z0])
    pts = [(x, y, z) for x in xs for y in ys for z in zs]
    return pts


def _run_tag_grid(resolved: dict, reader, reader_path, grid_cfg, detection,
                  reader_coil_name: str | None = None):
    template = resolved["tag"][0]
    if reader_coil_name is None:
        reader_coil_name = resolved["reader"]["coil"]
    coil_cfg = resolved["coil"][reader_coil_name]
    if coil_cfg["kind"] == "meander":
        half_x, half_y = coil_cfg["width_m"] / 2, coil_cfg["height_m"] / 2
    elif coil_cfg["kind"] == "spiral":
        half_x, half_y = coil_cfg["outer_width_m"] / 2, coil_cfg["outer_height_m"] / 2
    else:
        half_x = half_y = coil_cfg["inner_diameter_m"] / 2
    ox, oy, _oz = coil_cfg["origin_m"]
    xs = np.linspace(ox - half_x + grid_cfg["margin_x_m"], ox + half_x - grid_cfg["margin_x_m"], grid_cfg["nx"])
    ys = np.linspace(oy - half_y + grid_cfg["margin_y_m"], oy + half_y - grid_cfg["margin_y_m"], grid_cfg["ny"])
    base = build_coil_path(resolved, template["coil"])
    rows = []
    readable_count = 0
    for x in xs:
        for y in ys:
            pos = [float(x), float(y), grid_cfg["height_m"]]
            placed = base.translated(pos)
            placed = _bend(resolved, placed)
            tag_elec = _electrical(resolved, placed, template["coil"], template.get("q_override"))
            load = TagLoad(coil=tag_elec, load_matched_ohm=template["load_matched_ohm"],
                           load_modulating_ohm=template["load_modulating_ohm"],
                           activation_threshold_w=template["activation_threshold_w"])
            m = mutual_inductance(reader_path, placed)
            lb = link_budget(reader.drive, load, m, detection_threshold=detection)
            readable_count += int(lb.readable)
            rows.append(f"{pos[0]!r},{pos[1]!r},{pos[2]!r},{lb.mutual_h!r},{lb.k!r},"
                        f"{lb.eta!r},{lb.delivered_power_w!r},{lb.modulation_depth!r},{int(lb.readable)}")
    coverage = readable_count / (grid_cfg["nx"] * grid_cfg["ny"])
    return rows, coverage


def _run_bend_sweep(resolved: dict, reader_cfg, detection):
    template = resolved["tag"][0]
    flat_reader = build_coil_path(resolved, reader_cfg["coil"])
    tag_base = build_coil_path(resolved, template["coil"]).translated(template["position_m"])
    deform = resolved.get("deformation") or {"axis_point_m": [0.0, 0.0, 0.0], "axis_dir": [1.0, 0.0, 0.0]}
    rows = []
    k_flat = None
    for radius in resolved["sweep"]["bend_radii_m"]:
        if radius <= 0:  # flat reference
            rp, tp = flat_reader, tag_base
        else:
            rp = apply_cylinder_bend(flat_reader, radius, deform["axis_point_m"],
                                     deform["axis_dir"], max_angle=_SCENARIO_BEND_MAX_ANGLE)
            tp = apply_cylinder_bend(tag_base, radius, deform["axis_point_m"],
                                     deform["axis_dir"], max_angle=_SCENARIO_BEND_MAX_ANGLE)
        l_reader = _electrical(resolved, rp, reader_cfg["coil"]).inductance_h
        l_tag = _electrical(resolved, tp, template["coil"], template.get("q_override")).inductance_h
        m = mutual_inductance(rp, tp)
        k = abs(m) / math.sqrt(l_reader * l_tag)
        if k_flat is None:
            k_flat = k
        rows.append(f"{radius!r},{l_reader!r},{m!r},{k!r},{k / k_flat!r}")
    return rows


def _run_session(resolved: dict, name: str, seed: int, out: Path):
    f_hz = resolved["defaults"]["frequency_hz"]
    detection = resolved["defaults"]["detection_threshold"]
    ring_cfg = resolved["ring"]
    wb_cfg = resolved["wristband"]
    ring_path = build_coil_path(resolved, ring_cfg["coil"]).translated(ring_cfg["position_m"])
    wb_path = build_coil_path(resolved, wb_cfg["coil"]).translated(wb_cfg["position_m"])
    ring_elec = _electrical(resolved, ring_path, ring_cfg["coil"], ring_cfg.get("q_override"))
    wb_elec = _electrical(resolved, wb_path, wb_cfg["coil"], wb_cfg.get("q_override"))
    m = mutual_inductance(wb_path, ring_path)
    drive = DrivenReader(coil=wb_elec, drive_power_w=wb_cfg["drive_power_w"],
                         board_supply_w=wb_cfg["board_supply_w"])
    ring_load = TagLoad(coil=ring_elec, load_matched_ohm=ring_cfg["load_matched_ohm"],
                        load_modulating_ohm=ring_cfg["load_modulating_ohm"],
                        activation_threshold_w=1e-9)  # battery powered; threshold unused
    lb = link_budget(drive, ring_load, m, detection_threshold=detection)

    ring = RingDevice(active_power_w=ring_cfg["active_power_w"], sleep_power_w=ring_cfg["sleep_power_w"],
                      battery_capacity_j=capacity_from_mah(ring_cfg["battery_capacity_mah"],
                                                           ring_cfg["battery_voltage_v"]))
    wristband = WristbandDevice(active_power_w=wb_cfg["active_power_w"], sleep_power_w=wb_cfg["sleep_power_w"])

    s = resolved["session"]
    n_frames = int(round(s["duration_s"] / s["frame_period_s"]))
    every = s["down_every_frames"]
    schedule = []
    for i in range(n_frames):
        if every and (i + 1) % every == 0:
            schedule.append(("down", s["down_bytes"]))
        else:
            schedule.append(("up", s["up_bytes"]))
    log = picoring_session(ring, wristband, lb, schedule,
                           frame_period_s=s["frame_period_s"],
                           detection_threshold=detection, seed=seed, scenario=name)
    buf = io.StringIO()
    log.write(buf)
    _atomic_write(out, "session_events.tsv", buf.getvalue())

    table = {
        ring.device_id: {"active": ring.active_power_w, "sleep": ring.sleep_power_w},
        wristband.device_id: {"active": wristband.active_power_w, "sleep": wristband.sleep_power_w},
    }
    duration = max(log.end_time, s["duration_s"])
    report = integrate(log, table, duration_s=duration)
    ring_duty = duty_cycle(ring, ring_cfg["duty_active_s"], ring_cfg["duty_period_s"])
    wb_duty = duty_cycle(wristband, wb_cfg["duty_active_s"], wb_cfg["duty_period_s"])
    report.devices[ring.device_id].battery_life_s = battery_life(
        ring.battery_capacity_j, ring_duty.average_power_w)
    text = [
        format_energy_report(report),
        "",
        f"link: M={lb.mutual_h!r} H, k={lb.k!r}, depth={lb.modulation_depth!r}",
        f"standby duty ring: {ring_duty.average_power_w!r} W average "
        f"({ring_cfg['duty_active_s']!r}/{ring_cfg['duty_period_s']!r} s)",
        f"standby duty wristband: {wb_duty.average_power_w!r} W average",
    ]
    _atomic_write(out, "session_energy.txt", "\n".join(text) + "\n")
    summary = [
        f"session link depth {lb.modulation_depth!r} (threshold {detection!r}), "
        f"{len(log.records)} events",
    ]
    return ["session_events.tsv", "session_energy.txt"], summary


@dataclass
class CompareReport:
    decay_length_first_m: float
    decay_length_second_m: float
    ratio: float
    residual_first: float
    residual_second: float
    coverage_first: float | None = None
    coverage_second: float | None = None

    def format(self) -> str:
        lines = [
            f"decay length first [m]: {self.decay_length_first_m!r} (residual {self.residual_first!r})",
            f"decay length second [m]: {self.decay_length_second_m!r} (residual {self.residual_second!r})",
            f"ratio first/second: {self.ratio!r}",
        ]
        if self.coverage_first is not None:
            lines.append(f"surface coverage first: {self.coverage_first!r}")
            lines.append(f"surface coverage second: {self.coverage_second!r}")
        return "\n".join(lines)


def _footprint(coil_cfg: dict) -> tuple[float, float]:
    if coil_cfg["kind"] == "meander":
        return coil_cfg["width_m"], coil_cfg["height_m"]
    if coil_cfg["kind"] == "spiral":
        return coil_cfg["outer_width_m"], coil_cfg["outer_height_m"]
    d = coil_cfg["inner_diameter_m"]
    return d, d


def compare_coils(scenario: Scenario) -> CompareReport:
    """Localization comparison between two equal-footprint coils.

    Fits the vertical field decay of both and, when a tag template and grid
    are configured, the readable surface-coverage fraction of each.
    """
    resolved = scenario.resolved
    if "compare" not in resolved:
        raise ScenarioError("scenario has no [compare] section")
    cmp_cfg = resolved["compare"]
    first, second = cmp_cfg["first"], cmp_cfg["second"]
    fp1 = _footprint(resolved["coil"][first])
    fp2 = _footprint(resolved["coil"][second])
    if fp1 != fp2:
        raise ScenarioError(
            f"compare: coil footprints differ: {first}={fp1}, {second}={fp2}")

    heights = cmp_cfg["heights_m"]
    window = tuple(cmp_cfg["window_m"])
    n = cmp_cfg["window_samples"]
    fits = []
    for coil_name in (first, second):
        path = build_coil_path(resolved, coil_name, discretization_m=0.002)
        center = resolved["coil"][coil_name]["origin_m"][:2]
        fits.append(fit_decay(path, heights, window_center=center,
                              window_size=window, samples=(n, n)))
    cov1 = cov2 = None
    if resolved.get("reader") and resolved["tag"] and resolved["sweep"].get("tag_grid"):
        grid_cfg = resolved["sweep"]["tag_grid"]
        detection = resolved["defaults"]["detection_threshold"]
        covs = []
        for coil_name in (first, second):
            rp = build_coil_path(resolved, coil_name)
            re = _electrical(resolved, rp, coil_name)
            reader = ReaderDevice(drive=DrivenReader(
                coil=re, drive_power_w=resolved["reader"]["drive_power_w"],
                board_supply_w=resolved["reader"]["board_supply_w"]))
            _, cov = _run_tag_grid(resolved, reader, rp, grid_cfg, detection,
                                   reader_coil_name=coil_name)
            covs.append(cov)
        cov1, cov2 = covs
    return CompareReport(
        decay_length_first_m=fits[0].decay_length_m,
        decay_length_second_m=fits[1].decay_length_m,
        ratio=fits[0].decay_length_m / fits[1].decay_length_m,
        residual_first=fits[0].residual,
        residual_second=fits[1].residual,
        coverage_first=cov1,
        coverage_second=cov2,
    )


def bundled_scenario_path(name: str) -> Path:
    """Path of a scenario shipped with the package (no .toml suffix needed)."""
    base = Path(__file__).parent / "scenarios"
    p = base / (name if name.endswith(".toml") else f"{name}.toml")
    if not p.is_file():
        available = ", ".join(sorted(q.stem for q in base.glob("*.toml")))
        raise ScenarioError(f"no bundled scenario {name!r} (available: {available})")
    return p
