"""Energy accounting: integrate per-device power over event logs and
estimate battery life.

Power is piecewise constant between wake/sleep transitions.  Durations and
power products are accumulated as exact rationals (binary floats convert
losslessly to Fraction), so integration matches closed-form duty-cycle
arithmetic to rounding of the final float conversion.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .protocol import EventLog

_MODE_EVENTS = {"wake": "active", "sleep": "sleep"}


@dataclass
class DeviceEnergy:
    total_j: float
    average_w: float
    time_in_mode_s: dict[str, float]
    battery_life_s: float | None = None


@dataclass
class EnergyReport:
    duration_s: float
    devices: dict[str, DeviceEnergy] = field(default_factory=dict)


def _power_of(table_entry, mode: str, device: str) -> Fraction:
    if isinstance(table_entry, dict):
        if mode not in table_entry:
            raise ValueError(f"unknown mode {mode!r} for device {device!r}")
        return Fraction(table_entry[mode])
    return Fraction(table_entry)  # constant-power device, mode-independent


def integrate(log: EventLog, power_table: dict, duration_s: float | None = None,
              t_start: float = 0.0, initial_modes: dict[str, str] | None = None) -> EnergyReport:
    """Integrate device power over [t_start, t_start + duration].

    `power_table` maps device id to either a constant power in watts or a
    {"active": W, "sleep": W} mode table.  Mode-table devices start in
    "sleep" unless overridden via `initial_modes`.  Every device appearing
    in the log must be present in the table.
    """
    if duration_s is None:
        duration_s = log.end_time - t_start
    if duration_s < 0:
        raise ValueError("duration must be >= 0")
    t_end = Fraction(t_start) + Fraction(duration_s)

    for rec in log.records:
        if rec.device not in power_table:
            raise ValueError(f"device {rec.device!r} appears in log but not in the power table")

    mode: dict[str, str] = {
        dev: ("sleep" if isinstance(entry, dict) else "on")
        for dev, entry in power_table.items()
    }
    if initial_modes:
        mode.update(initial_modes)
    last_t: dict[str, Fraction] = {dev: Fraction(t_start) for dev in power_table}
    energy: dict[str, Fraction] = {dev: Fraction(0) for dev in power_table}
    in_mode: dict[str, dict[str, Fraction]] = {dev: {} for dev in power_table}

    def accumulate(dev: str, until: Fraction) -> None:
        dt = until - last_t[dev]
        if dt == 0:
            return
        if dt < 0:
            raise ValueError(f"event for {dev!r} precedes the integration window")
        m = mode[dev]
        energy[dev] += _power_of(power_table[dev], m, dev) * dt
        in_mode[dev][m] = in_mode[dev].get(m, Fraction(0)) + dt
        last_t[dev] = until

    for rec in log.records:
        new_mode = _MODE_EVENTS.get(rec.kind)
        if new_mode is None:
            continue
        t = Fraction(rec.t)
        if t > t_end:
            break
        accumulate(rec.device, t)
        mode[rec.device] = new_mode
    for dev in power_table:
        accumulate(dev, t_end)

    report = EnergyReport(duration_s=float(duration_s))
    for dev in power_table:
        total = float(energy[dev])
        avg = float(energy[dev] / Fraction(duration_s)) if duration_s > 0 else 0.0
        report.devices[dev] = DeviceEnergy(
            total_j=total,
            average_w=avg,
            time_in_mode_s={m: float(d) for m, d in sorted(in_mode[dev].items())},
        )
    return report


def battery_life(capacity_j: float, avg_power_w: float) -> float:
    """Runtime in seconds of an ideal battery: capacity / average power."""
    if capacity_j <= 0:
        raise ValueError("capacity_j must be > 0")
    if avg_power_w <= 0:
        raise ValueError("avg_power_w must be > 0")
    return capacity_j / avg_power_w


def capacity_from_mah(mah: float, volts: float) -> float:
    """Battery capacity in joules from milliamp-hours at a nominal voltage."""
    return mah * 1e-3 * 3600.0 * volts


def format_energy_report(report: EnergyReport) -> str:
    """One labeled block per device, SI units."""
    lines = [f"simulated time: {report.duration_s!r} s"]
    for dev, e in sorted(report.devices.items()):
        lines.append("")
        lines.append(f"device: {dev}")
        lines.append(f"  total energy [J]: {e.total_j!r}")
        lines.append(f"  average power [W]: {e.average_w!r}")
        for m, d in e.time_in_mode_s.items():
            lines.append(f"  time in {m} [s]: {d!r}")
        if e.battery_life_s is not None:
            lines.append(f"  estimated battery life [s]: {e.battery_life_s!r}")
    return "\n".join(lines)
