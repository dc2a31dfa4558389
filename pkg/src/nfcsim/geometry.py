"""Parametric coil geometry as 3D polylines.

Every coil is reduced to a centerline polyline (WirePath) carrying unit
current; conductor cross-section lives in Conductor and only affects
resistance and the self-inductance regularization radius downstream.
All lengths are meters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Consecutive vertices closer than this are considered degenerate.
MIN_SEGMENT_M = 1e-9

# Default angular step when wrapping a segment onto a cylinder.  Chord
# shortfall per step is (angle^2)/24, so 1e-4 rad keeps the total polyline
# length within 1e-9 of the flat path even for fully transverse runs.
DEFAULT_BEND_MAX_ANGLE = 1e-4


@dataclass
class WirePath:
    """Ordered 3D polyline, optionally closed (implicit last-to-first segment)."""

    vertices: np.ndarray  # (N, 3) float64, meters
    closed: bool = False

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must have shape (N, 3), got {v.shape}")
        if v.shape[0] < 2:
            raise ValueError("a wire path needs at least 2 vertices")
        if not np.all(np.isfinite(v)):
            raise ValueError("wire path vertices must be finite")
        seg = np.diff(v, axis=0)
        lengths = np.linalg.norm(seg, axis=1)
        if self.closed:
            lengths = np.append(lengths, np.linalg.norm(v[0] - v[-1]))
        if np.any(lengths <= MIN_SEGMENT_M):
            i = int(np.argmax(lengths <= MIN_SEGMENT_M))
            raise ValueError(f"degenerate segment at index {i} (length <= {MIN_SEGMENT_M} m)")
        self.vertices = v

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def arc_length(self) -> float:
        """Sum of segment lengths, including the closing segment if closed."""
        starts, ends = self.segments()
        return float(np.linalg.norm(ends - starts, axis=1).sum())

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        """Segment endpoint arrays (starts, ends), each (S, 3)."""
        v = self.vertices
        if self.closed:
            return v, np.roll(v, -1, axis=0)
        return v[:-1], v[1:]

    def reversed(self) -> "WirePath":
        return WirePath(self.vertices[::-1].copy(), closed=self.closed)

    def translated(self, offset) -> "WirePath":
        off = np.asarray(offset, dtype=np.float64)
        return WirePath(self.vertices + off, closed=self.closed)

    def rotated_z(self, angle_rad: float, center=(0.0, 0.0, 0.0)) -> "WirePath":
        """Rotate about a vertical axis through `center`."""
        c, s = math.cos(angle_rad), math.sin(angle_rad)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        ctr = np.asarray(center, dtype=np.float64)
        return WirePath((self.vertices - ctr) @ rot.T + ctr, closed=self.closed)


def concat(a: WirePath, b: WirePath, tol: float = 1e-12) -> WirePath:
    """Join two open paths; the end of `a` must coincide with the start of `b`."""
    if a.closed or b.closed:
        raise ValueError("can only concatenate open paths")
    if np.linalg.norm(a.vertices[-1] - b.vertices[0]) > tol:
        raise ValueError("paths are not contiguous at the junction")
    return WirePath(np.vstack([a.vertices, b.vertices[1:]]))


@dataclass
class Conductor:
    """Conductor material and cross-section (rectangular foil trace)."""

    resistivity_ohm_m: float
    foil_thickness_m: float
    trace_width_m: float
    mu_r: float = 1.0

    def __post_init__(self):
        for name in ("resistivity_ohm_m", "foil_thickness_m", "trace_width_m", "mu_r"):
            if getattr(self, name) <= 0:
                raise ValueError(f"Conductor.{name} must be > 0")

    @property
    def gmd_radius_m(self) -> float:
        """Geometric-mean-distance radius of the rectangular cross-section,
        0.2235 * (width + thickness) (Rosa/Grover)."""
        return 0.2235 * (self.trace_width_m + self.foil_thickness_m)


@dataclass
class MeanderSpec:
    """Serpentine coil: parallel traces along x, winding direction
    alternating between adjacent traces, spaced by `pitch_m` in y."""

    width_m: float
    height_m: float
    pitch_m: float
    trace_width_m: float
    origin_m: tuple = (0.0, 0.0, 0.0)
    rotation_z_rad: float = 0.0
    double_track: bool = False  # mechanical-only feature, electrically a no-op

    def __post_init__(self):
        if not (self.pitch_m > self.trace_width_m > 0):
            raise ValueError("need pitch_m > trace_width_m > 0")
        if self.width_m <= self.pitch_m or self.height_m <= self.pitch_m:
            raise ValueError("footprint must exceed the pitch in both directions")
        if self.n_traces < 2:
            raise ValueError("footprint too small: fewer than 2 traces fit")

    @property
    def n_traces(self) -> int:
        # absolute epsilon absorbs float noise when height is an exact
        # multiple of the pitch
        return int(math.floor(self.height_m / self.pitch_m + 1e-9))


@dataclass
class SpiralSpec:
    """Conventional rectangular spiral, `turns` loops stepping inward by `pitch_m`."""

    outer_width_m: float
    outer_height_m: float
    turns: int
    pitch_m: float
    trace_width_m: float
    origin_m: tuple = (0.0, 0.0, 0.0)
    rotation_z_rad: float = 0.0

    def __post_init__(self):
        if self.turns < 1 or int(self.turns) != self.turns:
            raise ValueError("turns must be a positive integer")
        if self.pitch_m <= 0 or self.trace_width_m <= 0:
            raise ValueError("pitch_m and trace_width_m must be > 0")
        if self.turns * self.pitch_m >= min(self.outer_width_m, self.outer_height_m) / 2:
            raise ValueError("turns * pitch must be < min(outer dimensions) / 2")


@dataclass
class AngledCoilSpec:
    """Ring coil: planar circular turns tilted relative to the finger axis,
    stacked along that axis by one trace width per turn."""

    inner_diameter_m: float
    turns: int
    tilt_rad: float
    trace_width_m: float
    origin_m: tuple = (0.0, 0.0, 0.0)
    segments_per_turn: int = 180

    def __post_init__(self):
        if self.inner_diameter_m <= 0:
            raise ValueError("inner_diameter_m must be > 0")
        if self.turns < 1 or int(self.turns) != self.turns:
            raise ValueError("turns must be a positive integer")
        if not (0 <= self.tilt_rad < math.pi / 2):
            raise ValueError("tilt_rad must lie in [0, pi/2)")
        if self.trace_width_m <= 0:
            raise ValueError("trace_width_m must be > 0")
        if self.segments_per_turn < 8:
            raise ValueError("segments_per_turn must be >= 8")


def _place(vertices: np.ndarray, origin, rotation_z_rad: float) -> np.ndarray:
    if rotation_z_rad != 0.0:
        c, s = math.cos(rotation_z_rad), math.sin(rotation_z_rad)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        vertices = vertices @ rot.T
    return vertices + np.asarray(origin, dtype=np.float64)


def gen_meander(spec: MeanderSpec) -> WirePath:
    """Generate the serpentine path.

    Traces run along x over the full width; the path steps by one pitch in y
    at alternating ends, so adjacent traces carry antiparallel current.  The
    path is open; with an even trace count both terminals sit on the same
    edge (the feed edge).
    """
    n = spec.n_traces
    w2 = spec.width_m / 2.0
    y0 = -(n - 1) * spec.pitch_m / 2.0
    pts = []
    for k in range(n):
        y = y0 + k * spec.pitch_m
        if k % 2 == 0:
            pts.extend([(-w2, y, 0.0), (w2, y, 0.0)])
        else:
            pts.extend([(w2, y, 0.0), (-w2, y, 0.0)])
    vertices = np.array(pts, dtype=np.float64)
    # Drop duplicated step-corner points: consecutive trace endpoints at the
    # same x already differ in y, so nothing to drop; the step segments are
    # implicit between trace end and next trace start.
    return WirePath(_place(vertices, spec.origin_m, spec.rotation_z_rad))


def gen_spiral(spec: SpiralSpec) -> WirePath:
    """Generate a rectangular spiral turning inward.

    Segment lengths follow w, h, w-p, h-p, w-2p, ... so each full turn's
    perimeter shrinks by 8*pitch relative to the previous one.
    """
    w, h, p = spec.outer_width_m, spec.outer_height_m, spec.pitch_m
    directions = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)]
    pos = np.array([-w / 2.0, -h / 2.0, 0.0])
    pts = [pos.copy()]
    for i in range(4 * spec.turns):
        base = w if i % 2 == 0 else h
        length = base - (i // 2) * p
        dx, dy = directions[i % 4]
        pos = pos + np.array([dx * length, dy * length, 0.0])
        pts.append(pos.copy())
    vertices = np.array(pts, dtype=np.float64)
    return WirePath(_place(vertices, spec.origin_m, spec.rotation_z_rad))


def gen_angled_ring_coil(spec: AngledCoilSpec) -> WirePath:
    """Generate the tilted multi-turn ring coil.

    Each turn is a circle of the ring's inner diameter lying in a plane
    tilted by `tilt_rad` about the x axis; the finger axis is z.  Turns
    advance along z by one trace width per turn, so the path is a shallow
    helix of tilted circles.  Projected onto the ring cross-section plane
    (xy), each turn is an ellipse with axis ratio 1/cos(tilt).
    """
    a = spec.inner_diameter_m / 2.0
    ca, sa = math.cos(spec.tilt_rad), math.sin(spec.tilt_rad)
    n_pts = spec.segments_per_turn * spec.turns + 1
    theta = np.linspace(0.0, 2.0 * math.pi * spec.turns, n_pts)
    stack = spec.trace_width_m * theta / (2.0 * math.pi)
    vertices = np.column_stack([
        a * np.cos(theta),
        a * ca * np.sin(theta),
        a * sa * np.sin(theta) + stack,
    ])
    return WirePath(_place(vertices, spec.origin_m, 0.0))


def apply_cylinder_bend(
    path: WirePath,
    cylinder_radius: float,
    axis_point=(0.0, 0.0, 0.0),
    axis_dir=(1.0, 0.0, 0.0),
    max_angle: float = DEFAULT_BEND_MAX_ANGLE,
) -> WirePath:
    """Wrap a (near-)planar path onto a cylinder, preserving surface distances.

    The bend line is the in-plane line through `axis_point` along `axis_dir`;
    the cylinder of radius R is tangent to the z=0 plane along that line,
    with its axis at depth -R (an arm under the textile).  Coordinates along
    the axis are unchanged; the transverse in-plane coordinate t becomes the
    arc coordinate (azimuth t/R), so spacing measured along the surface is
    preserved exactly.  A vertex at height z=h keeps its normal offset and
    maps to radius R+h.

    Segments with transverse extent are subdivided so each mapped piece
    subtends at most `max_angle`, keeping the polyline chord length within
    ~max_angle^2/24 of the flat arc length.
    """
    if cylinder_radius <= 0:
        raise ValueError("cylinder_radius must be > 0")
    u = np.asarray(axis_dir, dtype=np.float64)
    if abs(u[2]) > 1e-12:
        raise ValueError("bend axis must lie in the xy plane")
    norm = np.linalg.norm(u)
    if norm == 0:
        raise ValueError("bend axis direction must be nonzero")
    u = u / norm
    v = np.array([-u[1], u[0], 0.0])  # in-plane transverse direction
    p0 = np.asarray(axis_point, dtype=np.float64)

    rel = path.vertices - p0
    s = rel @ u
    t = rel @ v
    h = rel[:, 2]
    if np.any(np.abs(h) >= cylinder_radius):
        raise ValueError("path offset from the bend plane exceeds the cylinder radius")
    t_span = float(t.max() - t.min())
    if t_span >= 2.0 * math.pi * cylinder_radius:
        raise ValueError(
            f"path transverse span {t_span:.4g} m exceeds cylinder circumference "
            f"{2.0 * math.pi * cylinder_radius:.4g} m (self-intersection)"
        )

    # Subdivide segments by subtended angle, then map pointwise.
    out_s, out_t, out_h = [s[0]], [t[0]], [h[0]]
    for i in range(1, len(s)):
        dt = t[i] - t[i - 1]
        n_sub = max(1, int(math.ceil(abs(dt) / (cylinder_radius * max_angle))))
        frac = np.arange(1, n_sub + 1) / n_sub
        out_s.extend(s[i - 1] + frac * (s[i] - s[i - 1]))
        out_t.extend(t[i - 1] + frac * dt)
        out_h.extend(h[i - 1] + frac * (h[i] - h[i - 1]))
    ss = np.asarray(out_s)
    tt = np.asarray(out_t)
    hh = np.asarray(out_h)

    phi = tt / cylinder_radius
    r = cylinder_radius + hh
    bent = (
        p0
        + ss[:, None] * u
        + (r * np.sin(phi))[:, None] * v
        + (r * np.cos(phi) - cylinder_radius)[:, None] * np.array([0.0, 0.0, 1.0])
    )
    return WirePath(bent, closed=path.closed)


def discretize(path: WirePath, max_segment: float) -> WirePath:
    """Split segments longer than `max_segment` into equal parts.

    Input vertices are a subset of the output and the arc length is
    unchanged (subdivision points are collinear).  Idempotent.
    """
    if max_segment <= 0:
        raise ValueError("max_segment must be > 0")
    starts, ends = path.segments()
    lengths = np.linalg.norm(ends - starts, axis=1)
    pieces = []
    for i in range(len(lengths)):
        # relative guard keeps ceil stable when length is a near-exact multiple
        n = max(1, int(math.ceil(lengths[i] / max_segment * (1.0 - 1e-12))))
        frac = np.arange(0, n) / n
        pieces.append(starts[i] + frac[:, None] * (ends[i] - starts[i]))
    new_vertices = np.vstack(pieces)
    if not path.closed:
        new_vertices = np.vstack([new_vertices, path.vertices[-1]])
    return WirePath(new_vertices, closed=path.closed)


def write_path_table(path: WirePath, fileobj, name: str = "") -> None:
    """Write the vertex table: one `x,y,z` row per vertex (meters), `#` comments."""
    if name:
        fileobj.write(f"# coil: {name}\n")
    fileobj.write(f"# closed: {str(path.closed).lower()}\n")
    fileobj.write("# x_m,y_m,z_m\n")
    for x, y, z in path.vertices:
        fileobj.write(f"{float(x)!r},{float(y)!r},{float(z)!r}\n")


def read_path_table(fileobj) -> WirePath:
    closed = False
    rows = []
    for line in fileobj:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line.lower().startswith("# closed:"):
                closed = line.split(":", 1)[1].strip() == "true"
            continue
        rows.append([float(tok) for tok in line.split(",")])
    return WirePath(np.array(rows, dtype=np.float64), closed=closed)
