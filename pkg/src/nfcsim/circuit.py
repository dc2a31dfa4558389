"""Resonant-link circuit models: coupling, efficiency, delivered power,
and backscatter (load-modulation) depth.

Both coils are assumed series-tuned to the carrier; detuning under
deformation is out of scope, so inductance changes feed through the
coupling coefficient only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import PhysicsError
from .magnetics import CoilElectrical

# Minimum load-modulation depth a reader can detect.  Configurable per
# scenario; this default mirrors typical reader sensitivity.
DETECTION_THRESHOLD = 1e-3

# Tag activation threshold defaults to the tag's measured consumption:
# harvested power must at least cover it.
DEFAULT_ACTIVATION_THRESHOLD_W = 845e-6


@dataclass
class DrivenReader:
    """Reader endpoint: a tuned coil driven with `drive_power_w` of RF power.

    `board_supply_w` is the total board consumption; the coil drive is a
    fixed share of it (the rest goes to MCU and regulators), so
    drive_power_w <= board_supply_w.
    """

    coil: CoilElectrical
    drive_power_w: float
    board_supply_w: float

    def __post_init__(self):
        if self.drive_power_w <= 0:
            raise ValueError("drive_power_w must be > 0")
        if self.drive_power_w > self.board_supply_w:
            raise ValueError("drive_power_w cannot exceed board_supply_w")


@dataclass
class TagLoad:
    """Tag endpoint: tuned coil plus chip load in two states.

    The chip presents `load_matched_ohm` while harvesting/listening and
    `load_modulating_ohm` while backscattering; the two must differ.
    """

    coil: CoilElectrical
    load_matched_ohm: float
    load_modulating_ohm: float
    activation_threshold_w: float = DEFAULT_ACTIVATION_THRESHOLD_W

    def __post_init__(self):
        if self.load_matched_ohm <= 0 or self.load_modulating_ohm <= 0:
            raise ValueError("both chip load states must be > 0")
        if self.load_matched_ohm == self.load_modulating_ohm:
            raise ValueError("chip load states must be distinct")
        if self.activation_threshold_w <= 0:
            raise ValueError("activation_threshold_w must be > 0")


@dataclass
class LinkBudget:
    """Pairwise reader-tag coupling result."""

    mutual_h: float
    k: float
    eta: float
    delivered_power_w: float
    induced_voltage_v: float
    modulation_depth: float
    active: bool    # delivered power reaches the tag's activation threshold
    readable: bool  # active and modulation depth detectable

    def __post_init__(self):
        if not (0.0 <= self.k < 1.0):
            raise ValueError("k must lie in [0, 1)")
        if not (0.0 <= self.eta < 1.0):
            raise ValueError("eta must lie in [0, 1)")
        if not (0.0 <= self.modulation_depth <= 1.0):
            raise ValueError("modulation_depth must lie in [0, 1]")


def coupling_coefficient(m: float, l1: float, l2: float) -> float:
    """k = M / sqrt(L1 L2); |k| >= 1 signals a geometry bug."""
    if l1 <= 0 or l2 <= 0:
        raise ValueError("inductances must be > 0")
    k = m / math.sqrt(l1 * l2)
    if abs(k) >= 1.0:
        raise PhysicsError(f"unphysical coupling |k| = {abs(k):.6g} >= 1")
    return k


def transfer_efficiency(k: float, q1: float, q2: float) -> float:
    """Optimal-load efficiency of a resonant inductive link.

    eta = x / (1 + sqrt(1 + x))^2 with the figure of merit x = k^2 q1 q2;
    strictly increasing in x and saturating at 1.
    """
    if not (0.0 <= k < 1.0):
        raise ValueError("k must lie in [0, 1)")
    if q1 <= 0 or q2 <= 0:
        raise ValueError("Q factors must be > 0")
    x = k * k * q1 * q2
    return x / (1.0 + math.sqrt(1.0 + x)) ** 2


def calibrate_k_from_eta(eta: float, q1: float, q2: float) -> float:
    """Invert transfer_efficiency: the unique k > 0 achieving `eta`.

    With s = sqrt(1 + x), eta = (s - 1)/(s + 1), so x = 4 eta / (1 - eta)^2
    exactly, and k = sqrt(x / (q1 q2)).
    """
    if not (0.0 < eta < 1.0):
        raise ValueError("eta must lie in (0, 1)")
    if q1 <= 0 or q2 <= 0:
        raise ValueError("Q factors must be > 0")
    x = 4.0 * eta / (1.0 - eta) ** 2
    return math.sqrt(x / (q1 * q2))


def delivered_power(reader: DrivenReader, tag: TagLoad, k: float) -> float:
    """RF power available to the tag chip: coil drive power times the
    optimal-load link efficiency."""
    return reader.drive_power_w * transfer_efficiency(k, reader.coil.q_factor, tag.coil.q_factor)


def reflected_impedance(m: float, frequency_hz: float, tag_impedance_ohm: float) -> float:
    """Impedance the tag reflects into the reader coil: (w M)^2 / Z_tag."""
    w = 2.0 * math.pi * frequency_hz
    return (w * m) ** 2 / tag_impedance_ohm


def modulation_depth(k: float, reader: DrivenReader, tag: TagLoad) -> float:
    """Relative change of the reader-side impedance between tag load states.

    depth = |Z_r(matched) - Z_r(modulating)| / (R_reader + mean(Z_r)),
    where Z_r(state) = (w M)^2 / (R_tag_coil + load_state) at resonance.
    Averaging the two reflected states in the total makes the depth
    independent of which state is labeled matched.
    """
    f = reader.coil.frequency_hz
    m = abs(k) * math.sqrt(reader.coil.inductance_h * tag.coil.inductance_h)
    z1 = reflected_impedance(m, f, tag.coil.ac_resistance_ohm + tag.load_matched_ohm)
    z2 = reflected_impedance(m, f, tag.coil.ac_resistance_ohm + tag.load_modulating_ohm)
    depth = abs(z1 - z2) / (reader.coil.ac_resistance_ohm + 0.5 * (z1 + z2))
    return min(depth, 1.0)


def link_budget(reader: DrivenReader, tag: TagLoad, m: float,
                detection_threshold: float = DETECTION_THRESHOLD) -> LinkBudget:
    """Assemble the full budget for one reader-tag pair from the mutual
    inductance computed by the magnetics layer."""
    k = abs(coupling_coefficient(m, reader.coil.inductance_h, tag.coil.inductance_h))
    eta = transfer_efficiency(k, reader.coil.q_factor, tag.coil.q_factor)
    p = reader.drive_power_w * eta
    # open-circuit voltage induced across the tag coil by the drive current
    w = 2.0 * math.pi * reader.coil.frequency_hz
    i_reader = math.sqrt(reader.drive_power_w / reader.coil.ac_resistance_ohm)
    v_ind = w * abs(m) * i_reader
    depth = modulation_depth(k, reader, tag)
    active = p >= tag.activation_threshold_w
    return LinkBudget(
        mutual_h=m,
        k=k,
        eta=eta,
        delivered_power_w=p,
        induced_voltage_v=v_ind,
        modulation_depth=depth,
        active=active,
        readable=active and depth >= detection_threshold,
    )


def format_link_table(rows: list[tuple[str, LinkBudget]]) -> str:
    """Plain-text link-budget table, one row per reader-tag pair."""
    lines = [
        f"{'tag':<14} {'M_H':>12} {'k':>10} {'eta':>10} {'delivered_uW':>14} {'depth':>10} {'active':>7}"
    ]
    for name, lb in rows:
        lines.append(
            f"{name:<14} {lb.mutual_h:>12.4e} {lb.k:>10.6f} {lb.eta:>10.6f} "
            f"{lb.delivered_power_w * 1e6:>14.3f} {lb.modulation_depth:>10.2e} "
            f"{'yes' if lb.readable else 'no':>7}"
        )
    return "\n".join(lines)
