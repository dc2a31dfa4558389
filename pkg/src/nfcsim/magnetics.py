"""Magnetoquasistatic solvers on wire polylines.

Fields use the exact analytic finite-segment Biot-Savart expression, so the
only approximation is the polyline itself.  Inductances use the Neumann
double sum with midpoint quadrature for well-separated segment pairs, an
analytic inner integral with Gauss-Legendre outer quadrature for close
pairs, and the exact straight-filament self term with a geometric-mean-
distance radius for the conductor cross-section.

All quantities are SI; fields are tesla per ampere of drive current.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PhysicsError
from .geometry import MIN_SEGMENT_M, Conductor, WirePath

MU0 = 4.0e-7 * math.pi  # vacuum permeability, H/m

# Points closer than this to any conductor segment are rejected.
SINGULARITY_GUARD_M = 1e-6

# Segment pairs with midpoint distance below NEAR_FACTOR * (len_i + len_j)
# switch from midpoint quadrature to the analytic-inner-integral rule.
_NEAR_FACTOR = 2.0

# Open loops whose terminal gap exceeds this fraction of the arc length are
# rejected as undefined for self-inductance.
_MAX_TERMINAL_GAP_FRACTION = 0.25

# 8-point Gauss-Legendre nodes/weights on [0, 1].
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_GL_X = (_GL_X + 1.0) / 2.0
_GL_W = _GL_W / 2.0


@dataclass
class FieldSample:
    point: np.ndarray  # (3,) meters
    b: np.ndarray      # (3,) tesla per ampere


@dataclass
class CoilElectrical:
    """Lumped coil parameters at a fixed frequency.

    Q and the series-resonant tuning capacitance are redundant with (L, R, f)
    and are checked for consistency on construction.
    """

    inductance_h: float
    ac_resistance_ohm: float
    q_factor: float
    tuning_capacitance_f: float
    frequency_hz: float

    def __post_init__(self):
        if self.inductance_h <= 0 or self.ac_resistance_ohm <= 0 or self.frequency_hz <= 0:
            raise ValueError("inductance, resistance, and frequency must be > 0")
        w = 2.0 * math.pi * self.frequency_hz
        q = w * self.inductance_h / self.ac_resistance_ohm
        if not math.isclose(self.q_factor, q, rel_tol=1e-6):
            raise ValueError(f"inconsistent Q: given {self.q_factor}, L,R,f imply {q}")
        c = 1.0 / (w * w * self.inductance_h)
        if not math.isclose(self.tuning_capacitance_f, c, rel_tol=1e-6):
            raise ValueError(f"inconsistent tuning C: given {self.tuning_capacitance_f}, resonance implies {c}")

    @classmethod
    def from_lr(cls, inductance_h: float, ac_resistance_ohm: float, frequency_hz: float) -> "CoilElectrical":
        w = 2.0 * math.pi * frequency_hz
        return cls(
            inductance_h=inductance_h,
            ac_resistance_ohm=ac_resistance_ohm,
            q_factor=w * inductance_h / ac_resistance_ohm,
            tuning_capacitance_f=1.0 / (w * w * inductance_h),
            frequency_hz=frequency_hz,
        )

    @classmethod
    def from_lq(cls, inductance_h: float, q_factor: float, frequency_hz: float) -> "CoilElectrical":
        """Build from inductance and Q, deriving the implied series resistance."""
        w = 2.0 * math.pi * frequency_hz
        return cls.from_lr(inductance_h, w * inductance_h / q_factor, frequency_hz)


@dataclass
class DecayFit:
    """Log-linear fit |B|(z) = B0 * exp(-z / decay_length)."""

    decay_length_m: float
    amplitude_t_per_a: float
    residual: float  # RMS residual of the fit in log space
    flagged: bool    # profile not credibly exponential-decaying


def _segment_arrays(path: WirePath):
    starts, ends = path.segments()
    seg = ends - starts
    return starts, ends, seg


def b_field_many(path: WirePath, points, guard_m: float = SINGULARITY_GUARD_M) -> np.ndarray:
    """Magnetic field (T/A) at each point, exact per straight segment.

    For a segment with endpoint offsets a, b from the field point,
    B = (mu0/4pi) * (a x b) * (|a|+|b|) / (|a||b| (|a||b| + a.b)).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[1] != 3:
        raise ValueError("points must have shape (M, 3)")
    starts, ends, seg = _segment_arrays(path)
    seg_len2 = np.einsum("ij,ij->i", seg, seg)
    out = np.zeros_like(pts)
    # chunk so the (m, S, 3) temporaries stay modest
    chunk = max(1, int(2_000_000 // max(len(starts), 1)))
    for lo in range(0, len(pts), chunk):
        p = pts[lo:lo + chunk]
        a = starts[None, :, :] - p[:, None, :]
        b = ends[None, :, :] - p[:, None, :]
        na = np.linalg.norm(a, axis=2)
        nb = np.linalg.norm(b, axis=2)
        # distance from each point to each segment (not just its endpoints)
        tpar = np.clip(np.einsum("msj,sj->ms", -a, seg) / seg_len2, 0.0, 1.0)
        closest = a + tpar[:, :, None] * seg[None, :, :]
        dist = np.linalg.norm(closest, axis=2)
        if np.any(dist < guard_m):
            m_idx, s_idx = np.unravel_index(int(np.argmin(dist)), dist.shape)
            raise PhysicsError(
                f"field point {pts[lo + m_idx]} lies within {guard_m} m of "
                f"segment {s_idx} (distance {dist[m_idx, s_idx]:.3e} m)"
            )
        cross = np.cross(a, b)
        nanb = na * nb
        denom = nanb * (nanb + np.einsum("msj,msj->ms", a, b))
        out[lo:lo + chunk] = np.einsum("ms,msj->mj", (na + nb) / denom, cross)
    return out * (MU0 / (4.0 * math.pi))


def b_field(path: WirePath, point) -> np.ndarray:
    """Field vector (T/A) at a single point."""
    return b_field_many(path, [point])[0]


def field_map(path: WirePath, grid) -> list[FieldSample]:
    """Evaluate the field at each grid point, preserving grid order."""
    pts = list(grid)
    if not pts:
        return []
    b = b_field_many(path, np.asarray(pts, dtype=np.float64))
    return [FieldSample(point=np.asarray(p, dtype=np.float64), b=bi) for p, bi in zip(pts, b)]


def write_field_csv(samples: list[FieldSample], fileobj) -> None:
    """CSV export `x,y,z,bx,by,bz` (SI), header row, grid order preserved."""
    fileobj.write("x,y,z,bx,by,bz\n")
    for s in samples:
        x, y, z = (float(v) for v in s.point)
        bx, by, bz = (float(v) for v in s.b)
        fileobj.write(f"{x!r},{y!r},{z!r},{bx!r},{by!r},{bz!r}\n")


def _line_potential(p: np.ndarray, a: np.ndarray, b: np.ndarray, reg_m: float = 0.0) -> np.ndarray:
    """Integral of 1/|p - x| along the segment a->b: ln((ra+rb+L)/(ra+rb-L)).

    With reg_m > 0 the endpoint distances are lifted to sqrt(r^2 + reg_m^2),
    equivalent to displacing the point perpendicular to the segment by reg_m.
    """
    ra = np.linalg.norm(a - p, axis=-1)
    rb = np.linalg.norm(b - p, axis=-1)
    if reg_m > 0.0:
        ra = np.sqrt(ra * ra + reg_m * reg_m)
        rb = np.sqrt(rb * rb + reg_m * reg_m)
    length = np.linalg.norm(b - a, axis=-1)
    return np.log((ra + rb + length) / (ra + rb - length))


def _near_pair_mutual(starts_a, segs_a, starts_b, ends_b, segs_b, len_b, reg_m: float = 0.0):
    """Neumann term for close segment pairs: analytic integral along b,
    Gauss-Legendre along a.  Arrays are per-pair, shape (P, 3) or (P,).

    For self-inductance, reg_m is the conductor GMD radius so that mutual
    terms between pieces of the same trace stay consistent with the
    thick-conductor self term under subdivision.
    """
    dot = np.einsum("pj,pj->p", segs_a, segs_b) / len_b
    acc = np.zeros(len(starts_a))
    for x, w in zip(_GL_X, _GL_W):
        p = starts_a + x * segs_a
        acc += w * _line_potential(p, starts_b, ends_b, reg_m)
    return dot * acc


def _min_pair_distance(sa, ea, sb, eb) -> float:
    """Exact minimum distance between two 3D segments."""
    d1 = ea - sa
    d2 = eb - sb
    r = sa - sb
    a = float(d1 @ d1)
    e = float(d2 @ d2)
    f = float(d2 @ r)
    c = float(d1 @ r)
    b = float(d1 @ d2)
    denom = a * e - b * b
    s = np.clip((b * f - c * e) / denom, 0.0, 1.0) if denom > 1e-30 else 0.0
    t = (b * s + f) / e if e > 1e-30 else 0.0
    if t < 0.0:
        t = 0.0
        s = np.clip(-c / a, 0.0, 1.0) if a > 1e-30 else 0.0
    elif t > 1.0:
        t = 1.0
        s = np.clip((b - c) / a, 0.0, 1.0) if a > 1e-30 else 0.0
    return float(np.linalg.norm(sa + s * d1 - (sb + t * d2)))


def mutual_inductance(a: WirePath, b: WirePath, guard_m: float = SINGULARITY_GUARD_M) -> float:
    """Neumann double integral M = (mu0/4pi) oint oint dl_a . dl_b / r.

    The sign follows the two path orientations.  Paths that touch (closer
    than the guard) are rejected.
    """
    sa, ea, da = _segment_arrays(a)
    sb, eb, db = _segment_arrays(b)
    mid_a = 0.5 * (sa + ea)
    mid_b = 0.5 * (sb + eb)
    len_a = np.linalg.norm(da, axis=1)
    len_b = np.linalg.norm(db, axis=1)

    total = 0.0
    chunk = max(1, int(2_000_000 // max(len(sb), 1)))
    for lo in range(0, len(sa), chunk):
        hi = min(lo + chunk, len(sa))
        diff = mid_a[lo:hi, None, :] - mid_b[None, :, :]
        dist = np.linalg.norm(diff, axis=2)
        half_lens = 0.5 * (len_a[lo:hi, None] + len_b[None, :])
        near = dist < _NEAR_FACTOR * 2.0 * half_lens
        # exact distance is only needed where midpoints alone cannot rule
        # out an actual touch
        touch_candidates = dist < half_lens + guard_m
        if np.any(touch_candidates):
            for i, j in zip(*np.nonzero(touch_candidates)):
                if _min_pair_distance(sa[i + lo], ea[i + lo], sb[j], eb[j]) < guard_m:
                    raise PhysicsError(
                        f"paths touch: segment {i + lo} of a within {guard_m} m of segment {j} of b"
                    )
        if np.any(near):
            ia, ib = np.nonzero(near)
            ia_g = ia + lo
            near_sum = _near_pair_mutual(sa[ia_g], da[ia_g], sb[ib], eb[ib], db[ib], len_b[ib])
            total += float(near_sum.sum())
            dist[ia, ib] = np.inf  # exclude from the midpoint sum
        dots = np.einsum("ij,kj->ik", da[lo:hi], db)
        total += float((dots / dist).sum())
    return total * (MU0 / (4.0 * math.pi))


def _loop_segments(path: WirePath):
    """Segments forming the current loop, closing an open path across its
    terminal gap when the gap is small relative to the arc length."""
    starts, ends, _ = _segment_arrays(path)
    if not path.closed:
        gap = float(np.linalg.norm(path.vertices[0] - path.vertices[-1]))
        if gap > _MAX_TERMINAL_GAP_FRACTION * path.arc_length:
            raise PhysicsError(
                "self-inductance undefined: open path with terminals separated by "
                f"{gap:.4g} m over arc length {path.arc_length:.4g} m"
            )
        if gap > MIN_SEGMENT_M:
            starts = np.vstack([starts, path.vertices[-1]])
            ends = np.vstack([ends, path.vertices[0]])
    return starts, ends


def self_inductance(path: WirePath, c: Conductor) -> float:
    """Loop self-inductance of the path with conductor cross-section `c`.

    Cross terms use the Neumann sum (midpoint for far pairs, analytic-inner
    integral for near pairs); each segment's own term is the exact straight
    filament self-inductance with the GMD radius r_g = 0.2235 (w + t):

        L_seg = (mu0/2pi) l [asinh(l/r_g) - sqrt(1 + (r_g/l)^2) + r_g/l]
    """
    starts, ends = _loop_segments(path)
    segs = ends - starts
    mids = 0.5 * (starts + ends)
    lens = np.linalg.norm(segs, axis=1)
    rg = c.gmd_radius_m

    ratio = lens / rg
    # internal inductance is neglected (8 um foil, mu_r ~ 1)
    self_terms = (MU0 / (2.0 * math.pi)) * lens * (
        np.arcsinh(ratio) - np.sqrt(1.0 + 1.0 / ratio**2) + 1.0 / ratio
    )
    total = float(self_terms.sum())

    n = len(starts)
    chunk = max(1, int(2_000_000 // n))
    cross_total = 0.0
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        diff = mids[lo:hi, None, :] - mids[None, :, :]
        dist = np.linalg.norm(diff, axis=2)
        block_rows = np.arange(lo, hi)
        diag_mask = block_rows[:, None] == np.arange(n)[None, :]
        near = (dist < _NEAR_FACTOR * (lens[lo:hi, None] + lens[None, :])) & ~diag_mask
        if np.any(near):
            ia, ib = np.nonzero(near)
            ia_g = ia + lo
            near_sum = _near_pair_mutual(
                starts[ia_g], segs[ia_g], starts[ib], ends[ib], segs[ib], lens[ib], reg_m=rg
            )
            cross_total += float(near_sum.sum())
            dist[ia, ib] = np.inf
        dist[diag_mask] = np.inf
        dots = np.einsum("ij,kj->ik", segs[lo:hi], segs)
        cross_total += float((dots / dist).sum())
    total += cross_total * (MU0 / (4.0 * math.pi))
    if total <= 0:
        raise PhysicsError(f"non-positive self-inductance {total:.4g} H; check path and conductor")
    return total


def skin_depth(c: Conductor, frequency_hz: float) -> float:
    """delta = sqrt(rho / (pi f mu0 mu_r))."""
    return math.sqrt(c.resistivity_ohm_m / (math.pi * frequency_hz * MU0 * c.mu_r))


def ac_resistance(path: WirePath, c: Conductor, frequency_hz: float) -> float:
    """Series resistance with the thin-foil skin-effect model.

    R = rho l / (w t_eff), t_eff = delta (1 - exp(-t/delta)).  Reduces to
    the DC resistance when t << delta; proximity effect is neglected.
    """
    if frequency_hz < 0:
        raise ValueError("frequency must be >= 0")
    length = path.arc_length
    if frequency_hz == 0:
        t_eff = c.foil_thickness_m
    else:
        delta = skin_depth(c, frequency_hz)
        t_eff = delta * (1.0 - math.exp(-c.foil_thickness_m / delta))
    return c.resistivity_ohm_m * length / (c.trace_width_m * t_eff)


def coil_electrical(path: WirePath, c: Conductor, frequency_hz: float) -> CoilElectrical:
    """Assemble L, R_ac, Q and the series tuning capacitance at `frequency_hz`."""
    return CoilElectrical.from_lr(
        self_inductance(path, c), ac_resistance(path, c, frequency_hz), frequency_hz
    )


def rms_field_magnitude(path: WirePath, height_m: float, window_center=(0.0, 0.0),
                        window_size=(0.04, 0.04), samples=(24, 24)) -> float:
    """RMS of |B| over a lateral rectangular window at the given height."""
    cx, cy = window_center
    wx, wy = window_size
    nx, ny = samples
    xs = cx + np.linspace(-wx / 2.0, wx / 2.0, nx)
    ys = cy + np.linspace(-wy / 2.0, wy / 2.0, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, height_m)])
    b = b_field_many(path, pts)
    return float(np.sqrt(np.mean(np.sum(b * b, axis=1))))


def fit_decay_profile(heights, rms_values, flag_residual: float = 0.5) -> DecayFit:
    """Least-squares fit of ln|B| vs z; lambda = -1/slope.

    A profile is flagged as not credibly exponential when it fits poorly
    (log-space RMS residual above `flag_residual`) or barely decays at all
    (less than 2% drop across the sampled heights, which covers flat and
    rising profiles); lambda is still reported, infinite when the fitted
    slope is non-negative.
    """
    z = np.asarray(heights, dtype=np.float64)
    r = np.asarray(rms_values, dtype=np.float64)
    if len(z) < 4:
        raise ValueError("need at least 4 heights for a decay fit")
    if np.any(r <= 0):
        raise ValueError("field magnitudes must be positive for a log fit")
    log_r = np.log(r)
    slope, intercept = np.polyfit(z, log_r, 1)
    residual = float(np.sqrt(np.mean((log_r - (slope * z + intercept)) ** 2)))
    log_drop = -slope * (z.max() - z.min())
    lam = -1.0 / slope if slope < 0 else math.inf
    flagged = residual > flag_residual or log_drop < 0.02
    return DecayFit(
        decay_length_m=float(lam),
        amplitude_t_per_a=float(np.exp(intercept)),
        residual=residual,
        flagged=bool(flagged),
    )


def fit_decay(path: WirePath, heights, window_center=(0.0, 0.0),
              window_size=(0.04, 0.04), samples=(24, 24)) -> DecayFit:
    """Fit the vertical decay of the RMS field above the coil plane.

    The window should span one full meander period (two pitches) so the RMS
    averages over the alternating field sign.
    """
    z = np.asarray(heights, dtype=np.float64)
    if len(z) < 4:
        raise ValueError("need at least 4 heights")
    if np.any(z <= 0):
        raise ValueError("heights must be above the coil plane (> 0)")
    rms = [rms_field_magnitude(path, h, window_center, window_size, samples) for h in z]
    return fit_decay_profile(z, rms)
