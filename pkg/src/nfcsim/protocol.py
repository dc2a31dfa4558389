"""Deterministic discrete-event simulation of the two network modes:
slotted multi-tag inventory with mask-descent anti-collision, and
time-division ring/wristband sessions with duty cycling.

Anti-collision is modeled at the slot level: colliding tags are split by
extending the uid mask (by the 4 slot bits in 16-slot mode, by one bit in
1-slot mode), which makes every run a pure function of the uid set.  Frame
coding, CRCs, and bit timing are folded into a fixed per-exchange overhead.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .circuit import DETECTION_THRESHOLD, DrivenReader, LinkBudget, TagLoad

# Type V high-rate defaults; the standard's framing details are abstracted
# into a flat per-exchange overhead.
DEFAULT_DATA_RATE_BPS = 26480.0
DEFAULT_FRAME_OVERHEAD_S = 300e-6
UID_BITS = 64


@dataclass
class EventRecord:
    t: float
    device: str
    kind: str
    detail: str = ""


@dataclass
class EventLog:
    """Ordered, reproducible protocol trace."""

    seed: int = 0
    scenario: str = ""
    records: list[EventRecord] = field(default_factory=list)

    def add(self, t: float, device: str, kind: str, detail: str = "") -> None:
        if self.records and t < self.records[-1].t:
            raise ValueError(f"event times must be non-decreasing (got {t} after {self.records[-1].t})")
        self.records.append(EventRecord(t, device, kind, detail))

    def extend(self, records) -> None:
        for r in records:
            self.add(r.t, r.device, r.kind, r.detail)

    @property
    def end_time(self) -> float:
        return self.records[-1].t if self.records else 0.0

    def write(self, fileobj) -> None:
        """Line format: `t_seconds<TAB>device<TAB>event<TAB>detail`."""
        fileobj.write(f"# seed={self.seed}\n")
        fileobj.write(f"# scenario={self.scenario}\n")
        for r in self.records:
            fileobj.write(f"{r.t!r}\t{r.device}\t{r.kind}\t{r.detail}\n")


@dataclass
class TagDevice:
    uid: int
    position_m: tuple
    load: TagLoad
    payload_bytes: int = 16
    state: str = "unpowered"  # unpowered | idle | quiet | selected

    def __post_init__(self):
        if not (0 <= self.uid < 2**UID_BITS):
            raise ValueError("uid must fit in 64 bits")
        if self.payload_bytes < 1:
            raise ValueError("payload_bytes must be >= 1")

    @property
    def device_id(self) -> str:
        return f"tag:{self.uid:016x}"


@dataclass
class ReaderDevice:
    drive: DrivenReader
    slot_count: int = 16
    data_rate_bps: float = DEFAULT_DATA_RATE_BPS
    frame_overhead_s: float = DEFAULT_FRAME_OVERHEAD_S
    device_id: str = "reader"

    def __post_init__(self):
        if self.slot_count not in (1, 16):
            raise ValueError("slot_count must be 1 or 16")
        if self.data_rate_bps <= 0:
            raise ValueError("data_rate_bps must be > 0")


@dataclass
class RingDevice:
    active_power_w: float = 2.02e-3
    sleep_power_w: float = 371e-6
    battery_capacity_j: float = 259.2  # 40 mAh at 1.8 V; assumed, not measured
    device_id: str = "ring"

    def __post_init__(self):
        if not (self.active_power_w > self.sleep_power_w > 0):
            raise ValueError("need active_power_w > sleep_power_w > 0")


@dataclass
class WristbandDevice:
    active_power_w: float = 705e-3
    sleep_power_w: float = 83.5e-3
    battery_capacity_j: float | None = None
    device_id: str = "wristband"

    def __post_init__(self):
        if not (self.active_power_w > self.sleep_power_w > 0):
            raise ValueError("need active_power_w > sleep_power_w > 0")


def powered_tags(reader: ReaderDevice, tags: list[TagDevice], links: list[LinkBudget],
                 detection_threshold: float = DETECTION_THRESHOLD) -> set[int]:
    """Uids that harvest enough power to activate and modulate detectably."""
    if len(links) != len(tags):
        raise ValueError(f"need one link per tag: {len(tags)} tags, {len(links)} links")
    powered = set()
    for tag, link in zip(tags, links):
        if link.delivered_power_w >= tag.load.activation_threshold_w and \
                link.modulation_depth >= detection_threshold:
            powered.add(tag.uid)
    return powered


@dataclass
class RoundOutcome:
    singulated: list[int]
    next_masks: list[tuple[int, int]]  # (mask_value, mask_length) of colliding groups
    duration_s: float


def _slot_of(uid: int, mask_len: int, slot_count: int) -> int:
    return (uid >> mask_len) & (slot_count - 1)


def inventory_round(reader: ReaderDevice, active_uids: list[int],
                    mask: tuple[int, int], log: EventLog, t0: float,
                    round_index: int) -> RoundOutcome:
    """One inventory round under the given uid mask.

    Tags whose low `mask_len` uid bits equal `mask_value` respond in the
    slot selected by their next uid bits.  Slots with one responder are
    singulated; slots with more spawn a child mask (slot bits appended in
    16-slot mode, a single extension bit in 1-slot mode).
    """
    mask_value, mask_len = mask
    participants = sorted(u for u in active_uids if (u & ((1 << mask_len) - 1)) == mask_value)
    uid_air_s = UID_BITS / reader.data_rate_bps

    t = t0
    singulated: list[int] = []
    next_masks: list[tuple[int, int]] = []
    for slot in range(reader.slot_count):
        responders = [u for u in participants if _slot_of(u, mask_len, reader.slot_count) == slot]
        log.add(t, reader.device_id, "slot_open",
                f"round={round_index} slot={slot} mask={mask_value:x}/{mask_len}")
        t += reader.frame_overhead_s
        if len(responders) == 1:
            uid = responders[0]
            t += uid_air_s
            log.add(t, f"tag:{uid:016x}", "response", f"slot={slot}")
            log.add(t, reader.device_id, "singulated", f"uid={uid:016x} slot={slot}")
            singulated.append(uid)
        elif len(responders) >= 2:
            t += uid_air_s
            log.add(t, reader.device_id, "collision", f"slot={slot} n={len(responders)}")
            if reader.slot_count == 16:
                next_masks.append((mask_value | (slot << mask_len), mask_len + 4))
            else:
                next_masks.append((mask_value, mask_len + 1))
                next_masks.append((mask_value | (1 << mask_len), mask_len + 1))
    return RoundOutcome(singulated=singulated, next_masks=next_masks, duration_s=t - t0)


def run_inventory(reader: ReaderDevice, tags: list[TagDevice], links: list[LinkBudget],
                  seed: int = 0, scenario: str = "",
                  detection_threshold: float = DETECTION_THRESHOLD,
                  t0: float = 0.0) -> tuple[EventLog, set[int]]:
    """Inventory all powered tags by repeated rounds with mask descent.

    Deterministic given the uid set; terminates because every collision
    strictly extends the mask and distinct uids part ways within 64 bits.
    Unpowered or unreadable tags never appear in the log.
    """
    uids = [t.uid for t in tags]
    if len(set(uids)) != len(uids):
        raise ValueError("duplicate tag uids")
    powered = powered_tags(reader, tags, links, detection_threshold)
    by_uid = {t.uid: t for t in tags}
    for t_dev in tags:
        t_dev.state = "idle" if t_dev.uid in powered else "unpowered"

    log = EventLog(seed=seed, scenario=scenario)
    active = sorted(powered)
    queue: deque[tuple[int, int]] = deque([(0, 0)])
    t = t0
    round_index = 0
    singulated_all: list[int] = []
    while queue:
        mask = queue.popleft()
        if mask[1] > UID_BITS + 4:
            raise RuntimeError("mask descent exceeded uid width; duplicate uids?")
        outcome = inventory_round(reader, active, mask, log, t, round_index)
        t += outcome.duration_s
        round_index += 1
        for uid in outcome.singulated:
            by_uid[uid].state = "quiet"  # stays silent in later rounds
            singulated_all.append(uid)
        active = [u for u in active if u not in set(outcome.singulated)]
        queue.extend(outcome.next_masks)
    return log, set(singulated_all)


def read_tag(reader: ReaderDevice, uid: int, n_bytes: int, singulated: set[int],
             t0: float = 0.0) -> tuple[float, list[EventRecord]]:
    """Read `n_bytes` from a singulated tag.

    duration = n_bytes * 8 / data_rate + frame overhead.  Reading a tag that
    was not singulated is a protocol error: it is logged (the failed command
    still occupies one frame overhead) rather than raised.
    """
    if n_bytes < 0:
        raise ValueError("n_bytes must be >= 0")
    if uid not in singulated:
        dur = reader.frame_overhead_s
        rec = EventRecord(t0 + dur, reader.device_id, "error",
                          f"read_not_singulated uid={uid:016x}")
        return dur, [rec]
    dur = n_bytes * 8 / reader.data_rate_bps + reader.frame_overhead_s
    recs = [
        EventRecord(t0 + dur, f"tag:{uid:016x}", "response", f"bytes={n_bytes}"),
        EventRecord(t0 + dur, reader.device_id, "read", f"uid={uid:016x} bytes={n_bytes}"),
    ]
    return dur, recs


def picoring_session(ring: RingDevice, wristband: WristbandDevice, link: LinkBudget,
                     schedule: list[tuple[str, int]],
                     frame_period_s: float = 0.01,
                     data_rate_bps: float = DEFAULT_DATA_RATE_BPS,
                     frame_overhead_s: float = DEFAULT_FRAME_OVERHEAD_S,
                     detection_threshold: float = DETECTION_THRESHOLD,
                     seed: int = 0, scenario: str = "", t0: float = 0.0) -> EventLog:
    """Time-division session between wristband and ring.

    `schedule` lists exchanges in frame order as (direction, payload_bytes)
    with direction 'down' (wristband -> ring command) or 'up' (ring ->
    wristband data).  Each exchange occupies one frame of `frame_period_s`
    and its airtime must fit inside the frame.  The ring is battery powered,
    so only the modulation-depth condition gates the link.
    """
    log = EventLog(seed=seed, scenario=scenario)
    if link.modulation_depth < detection_threshold:
        log.add(t0, wristband.device_id, "link_down",
                f"depth={link.modulation_depth:.3e} threshold={detection_threshold:.3e}")
        return log
    log.add(t0, wristband.device_id, "wake")
    log.add(t0, ring.device_id, "wake")
    t_end = t0
    for i, (direction, n_bytes) in enumerate(schedule):
        if direction not in ("up", "down"):
            raise ValueError(f"schedule direction must be 'up' or 'down', got {direction!r}")
        if n_bytes < 0:
            raise ValueError("payload bytes must be >= 0")
        airtime = frame_overhead_s + n_bytes * 8 / data_rate_bps
        if frame_period_s > 0:
            if airtime > frame_period_s:
                raise ValueError(
                    f"exchange {i} airtime {airtime:.6f} s exceeds frame period {frame_period_s} s"
                )
            t_slot = t0 + i * frame_period_s
        else:
            t_slot = t_end
        sender, receiver = ((wristband.device_id, ring.device_id) if direction == "down"
                            else (ring.device_id, wristband.device_id))
        log.add(t_slot, sender, "write", f"dir={direction} bytes={n_bytes} airtime={airtime!r}")
        log.add(t_slot + airtime, receiver, "read", f"dir={direction} bytes={n_bytes}")
        t_end = t_slot + airtime
    log.add(t_end, ring.device_id, "sleep")
    log.add(t_end, wristband.device_id, "sleep")
    return log


@dataclass
class DutySchedule:
    """Periodic wake/sleep schedule for a two-mode device."""

    device_id: str
    active_window_s: float
    period_s: float
    active_power_w: float
    sleep_power_w: float

    def __post_init__(self):
        if not (0 < self.active_window_s <= self.period_s):
            raise ValueError("need 0 < active_window_s <= period_s")

    @property
    def average_power_w(self) -> float:
        a, p = self.active_window_s, self.period_s
        return (a * self.active_power_w + (p - a) * self.sleep_power_w) / p

    def events(self, horizon_s: float, t0: float = 0.0) -> list[EventRecord]:
        """Wake/sleep transitions covering [t0, t0 + horizon_s)."""
        recs = []
        k = 0
        while k * self.period_s < horizon_s:
            t_wake = t0 + k * self.period_s
            recs.append(EventRecord(t_wake, self.device_id, "wake"))
            t_sleep = t_wake + self.active_window_s
            if self.active_window_s < self.period_s and t_sleep - t0 < horizon_s:
                recs.append(EventRecord(t_sleep, self.device_id, "sleep"))
            k += 1
        return recs


def duty_cycle(device, active_window_s: float, period_s: float) -> DutySchedule:
    """Build the periodic schedule for a ring or wristband device."""
    return DutySchedule(
        device_id=device.device_id,
        active_window_s=active_window_s,
        period_s=period_s,
        active_power_w=device.active_power_w,
        sleep_power_w=device.sleep_power_w,
    )
