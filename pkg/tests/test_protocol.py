import io
import math

import numpy as np
import pytest

from nfcsim.circuit import DrivenReader, LinkBudget, TagLoad
from nfcsim.magnetics import CoilElectrical
from nfcsim.protocol import (
    DEFAULT_DATA_RATE_BPS,
    DEFAULT_FRAME_OVERHEAD_S,
    EventLog,
    EventRecord,
    ReaderDevice,
    RingDevice,
    TagDevice,
    WristbandDevice,
    duty_cycle,
    inventory_round,
    picoring_session,
    powered_tags,
    read_tag,
    run_inventory,
)

F = 13.56e6


def make_reader(slot_count=16):
    coil = CoilElectrical.from_lq(3.4e-6, 95.0, F)
    return ReaderDevice(drive=DrivenReader(coil=coil, drive_power_w=0.2, board_supply_w=0.515),
                        slot_count=slot_count)


def make_tag(uid, threshold=845e-6):
    coil = CoilElectrical.from_lq(1.0e-6, 30.0, F)
    load = TagLoad(coil=coil, load_matched_ohm=1000.0, load_modulating_ohm=100.0,
                   activation_threshold_w=threshold)
    return TagDevice(uid=uid, position_m=(0.0, 0.0, 0.003), load=load)


def budget(delivered=0.082, depth=0.1):
    return LinkBudget(mutual_h=5e-8, k=0.04, eta=0.4, delivered_power_w=delivered,
                      induced_voltage_v=1.0, modulation_depth=depth,
                      active=delivered >= 845e-6, readable=delivered >= 845e-6 and depth >= 1e-3)


def count_rounds(log):
    return sum(1 for r in log.records if r.kind == "slot_open" and " slot=0 " in f" {r.detail} ")


def oracle_rounds(uids, slot_count):
    """Brute-force enumeration of the deterministic mask-descent tree,
    written independently of the event-driven implementation."""
    def descend(group, mask_len):
        rounds = 1
        slots = {}
        for u in group:
            slots.setdefault((u >> mask_len) & (slot_count - 1), []).append(u)
        for members in slots.values():
            if len(members) >= 2:
                if slot_count == 16:
                    rounds += descend(members, mask_len + 4)
                else:
                    for bit in (0, 1):
                        side = [u for u in members if ((u >> mask_len) & 1) == bit]
                        rounds += descend(side, mask_len + 1) if side else 1
        return rounds
    return descend(list(uids), 0)


class TestEventLog:
    def test_times_must_not_decrease(self):
        log = EventLog()
        log.add(1.0, "reader", "slot_open")
        with pytest.raises(ValueError, match="non-decreasing"):
            log.add(0.5, "reader", "slot_open")

    def test_export_format(self):
        log = EventLog(seed=42, scenario="demo")
        log.add(0.0, "ring", "wake")
        log.add(0.25, "ring", "sleep", "standby")
        buf = io.StringIO()
        log.write(buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "# seed=42"
        assert lines[1] == "# scenario=demo"
        assert lines[2] == "0.0\tring\twake\t"
        assert lines[3] == "0.25\tring\tsleep\tstandby"


class TestPoweredTags:
    def test_all_uncoupled_gives_empty_set(self):
        reader = make_reader()
        tags = [make_tag(1), make_tag(2)]
        links = [budget(delivered=0.0, depth=0.0)] * 2
        assert powered_tags(reader, tags, links) == set()

    def test_strong_link_included(self):
        reader = make_reader()
        assert powered_tags(reader, [make_tag(7)], [budget()]) == {7}

    def test_powered_but_quiet_excluded(self):
        reader = make_reader()
        links = [budget(delivered=0.082, depth=1e-4)]
        assert powered_tags(reader, [make_tag(7)], links) == set()

    def test_missing_link_rejected(self):
        reader = make_reader()
        with pytest.raises(ValueError, match="one link per tag"):
            powered_tags(reader, [make_tag(1), make_tag(2)], [budget()])


class TestInventoryRound:
    def test_single_tag_singulated_any_slot_count(self):
        for slots in (1, 16):
            reader = make_reader(slot_count=slots)
            log = EventLog()
            out = inventory_round(reader, [0xABCD], (0, 0), log, 0.0, 0)
            assert out.singulated == [0xABCD]
            assert out.next_masks == []

    def test_two_tags_distinct_low_bits_one_round(self):
        reader = make_reader()
        log = EventLog()
        out = inventory_round(reader, [0x10, 0x13], (0, 0), log, 0.0, 0)
        assert sorted(out.singulated) == [0x10, 0x13]
        assert out.next_masks == []

    def test_collision_extends_mask(self):
        reader = make_reader()
        log = EventLog()
        # same low 4 bits -> same slot -> collision
        out = inventory_round(reader, [0x07, 0x17], (0, 0), log, 0.0, 0)
        assert out.singulated == []
        assert out.next_masks == [(0x7, 4)]
        kinds = [r.kind for r in log.records]
        assert "collision" in kinds

    def test_one_slot_mode_splits_binary(self):
        reader = make_reader(slot_count=1)
        log = EventLog()
        out = inventory_round(reader, [0b10, 0b11], (0, 0), log, 0.0, 0)
        assert out.next_masks == [(0, 1), (1, 1)]

    def test_slot_events_logged_per_slot(self):
        reader = make_reader()
        log = EventLog()
        inventory_round(reader, [5], (0, 0), log, 0.0, 0)
        assert sum(1 for r in log.records if r.kind == "slot_open") == 16


class TestRunInventory:
    def test_no_powered_tags_one_empty_round(self):
        reader = make_reader()
        tags = [make_tag(1)]
        log, singulated = run_inventory(reader, tags, [budget(delivered=0.0, depth=0.0)])
        assert singulated == set()
        assert count_rounds(log) == 1
        assert not any(r.kind in ("response", "singulated") for r in log.records)

    def test_unpowered_tag_never_in_log(self):
        reader = make_reader()
        tags = [make_tag(1), make_tag(2)]
        links = [budget(), budget(delivered=1e-9, depth=0.0)]
        log, singulated = run_inventory(reader, tags, links)
        assert singulated == {1}
        devices = {r.device for r in log.records}
        assert tags[1].device_id not in devices
        assert tags[1].state == "unpowered"

    def test_crafted_16_way_collision(self):
        reader = make_reader()
        uids = [(i << 4) | 0x7 for i in range(16)]
        tags = [make_tag(u) for u in uids]
        log, singulated = run_inventory(reader, tags, [budget()] * 16)
        assert singulated == set(uids)
        assert count_rounds(log) == oracle_rounds(uids, 16) == 2

    def test_one_slot_mode_terminates(self):
        reader = make_reader(slot_count=1)
        uids = [0b000, 0b100, 0b110]
        tags = [make_tag(u) for u in uids]
        log, singulated = run_inventory(reader, tags, [budget()] * 3)
        assert singulated == set(uids)
        assert count_rounds(log) == oracle_rounds(uids, 1)

    def test_duplicate_uids_rejected(self):
        reader = make_reader()
        tags = [make_tag(9), make_tag(9)]
        with pytest.raises(ValueError, match="duplicate"):
            run_inventory(reader, tags, [budget()] * 2)

    def test_random_trials_match_oracle_and_singulate_once(self):
        reader = make_reader()
        rng = np.random.default_rng(7)
        for _ in range(200):
            uids = set()
            while len(uids) < 8:
                uids.add(int(rng.integers(0, 2**63)) * 2 + int(rng.integers(0, 2)))
            tags = [make_tag(u) for u in sorted(uids)]
            log, singulated = run_inventory(reader, tags, [budget()] * 8)
            assert singulated == uids
            assert count_rounds(log) == oracle_rounds(uids, 16)
            sing_events = [r for r in log.records if r.kind == "singulated"]
            assert len(sing_events) == 8

    def test_deterministic_trace(self):
        reader = make_reader()
        uids = [3, 19, 35, 51]
        tags1 = [make_tag(u) for u in uids]
        tags2 = [make_tag(u) for u in uids]
        log1, _ = run_inventory(reader, tags1, [budget()] * 4, seed=5, scenario="x")
        log2, _ = run_inventory(reader, tags2, [budget()] * 4, seed=5, scenario="x")
        b1, b2 = io.StringIO(), io.StringIO()
        log1.write(b1)
        log2.write(b2)
        assert b1.getvalue() == b2.getvalue()


class TestReadTag:
    def test_zero_byte_read_is_overhead_only(self):
        reader = make_reader()
        dur, recs = read_tag(reader, 0xAA, 0, {0xAA})
        assert dur == pytest.approx(DEFAULT_FRAME_OVERHEAD_S)
        assert recs[-1].kind == "read"

    def test_256_bytes_duration(self):
        reader = make_reader()
        dur, _ = read_tag(reader, 0xAA, 256, {0xAA})
        assert dur == pytest.approx(256 * 8 / DEFAULT_DATA_RATE_BPS + DEFAULT_FRAME_OVERHEAD_S)
        assert dur == pytest.approx(0.0776, abs=2e-4)

    def test_kilobyte_is_subsecond(self):
        reader = make_reader()
        dur, _ = read_tag(reader, 0xAA, 1024, {0xAA})
        assert 0.3 < dur < 0.32

    def test_non_singulated_read_is_protocol_error_event(self):
        reader = make_reader()
        dur, recs = read_tag(reader, 0xBB, 16, {0xAA})
        assert len(recs) == 1
        assert recs[0].kind == "error"
        assert "read_not_singulated" in recs[0].detail
        assert dur == pytest.approx(DEFAULT_FRAME_OVERHEAD_S)


class TestPicoringSession:
    def setup_method(self):
        self.ring = RingDevice()
        self.band = WristbandDevice()

    def test_empty_schedule_wake_sleep_only(self):
        log = picoring_session(self.ring, self.band, budget(), [])
        kinds = [r.kind for r in log.records]
        assert kinds == ["wake", "wake", "sleep", "sleep"]

    def test_unreadable_link_aborts(self):
        weak = budget(depth=1e-5)
        log = picoring_session(self.ring, self.band, weak, [("up", 8)])
        assert [r.kind for r in log.records] == ["link_down"]

    def test_streaming_schedulable(self):
        sched = [("up", 8)] * 1000
        log = picoring_session(self.ring, self.band, budget(), sched, frame_period_s=0.01)
        writes = [r for r in log.records if r.kind == "write"]
        assert len(writes) == 1000
        airtime = DEFAULT_FRAME_OVERHEAD_S + 64 / DEFAULT_DATA_RATE_BPS
        assert airtime / 0.01 < 0.5
        assert log.end_time == pytest.approx(999 * 0.01 + airtime)

    def test_slots_never_overlap(self):
        sched = [("up", 8), ("down", 4)] * 50
        log = picoring_session(self.ring, self.band, budget(), sched, frame_period_s=0.01)
        intervals = []
        for r in log.records:
            if r.kind == "write":
                airtime = float(r.detail.split("airtime=")[1])
                intervals.append((r.t, r.t + airtime))
        intervals.sort()
        for (s1, e1), (s2, e2) in zip(intervals, intervals[1:]):
            assert e1 <= s2 + 1e-12

    def test_overfull_frame_rejected(self):
        with pytest.raises(ValueError, match="exceeds frame period"):
            picoring_session(self.ring, self.band, budget(), [("up", 5000)],
                             frame_period_s=0.01)

    def test_down_command_latency_one_frame(self):
        # gesture in frame i triggers the down-slot in frame i+1
        sched = [("up", 8), ("down", 4), ("up", 8)]
        log = picoring_session(self.ring, self.band, budget(), sched, frame_period_s=0.01)
        downs = [r for r in log.records if r.kind == "write" and "dir=down" in r.detail]
        assert len(downs) == 1
        assert downs[0].t == pytest.approx(0.01)
        assert downs[0].device == "wristband"

    def test_back_to_back_mode(self):
        sched = [("up", 256)] * 4
        log = picoring_session(self.ring, self.band, budget(), sched, frame_period_s=0.0)
        assert log.end_time == pytest.approx(4 * (DEFAULT_FRAME_OVERHEAD_S + 2048 / DEFAULT_DATA_RATE_BPS))


class TestDutyCycle:
    def test_always_active(self):
        ring = RingDevice()
        sched = duty_cycle(ring, 1.0, 1.0)
        assert sched.average_power_w == pytest.approx(ring.active_power_w)

    def test_ring_10_percent(self):
        sched = duty_cycle(RingDevice(), 0.1, 1.0)
        assert sched.average_power_w == pytest.approx(0.536e-3, rel=2e-4)
        assert sched.average_power_w == pytest.approx(0.1 * 2.02e-3 + 0.9 * 371e-6, rel=1e-12)

    def test_wristband_10_percent(self):
        sched = duty_cycle(WristbandDevice(), 0.1, 1.0)
        assert sched.average_power_w == pytest.approx(0.1 * 705e-3 + 0.9 * 83.5e-3, rel=1e-12)
        assert sched.average_power_w == pytest.approx(145.7e-3, rel=1e-3)

    def test_window_validation(self):
        with pytest.raises(ValueError):
            duty_cycle(RingDevice(), 2.0, 1.0)
        with pytest.raises(ValueError):
            duty_cycle(RingDevice(), 0.0, 1.0)

    def test_event_emission(self):
        sched = duty_cycle(RingDevice(), 0.25, 1.0)
        recs = sched.events(3.0)
        kinds = [(round(r.t, 6), r.kind) for r in recs]
        assert kinds == [(0.0, "wake"), (0.25, "sleep"), (1.0, "wake"), (1.25, "sleep"),
                         (2.0, "wake"), (2.25, "sleep")]


class TestDeviceValidation:
    def test_slot_count_must_be_1_or_16(self):
        coil = CoilElectrical.from_lq(3.4e-6, 95.0, F)
        with pytest.raises(ValueError):
            ReaderDevice(drive=DrivenReader(coil=coil, drive_power_w=0.2, board_supply_w=0.515),
                         slot_count=8)

    def test_ring_power_ordering(self):
        with pytest.raises(ValueError):
            RingDevice(active_power_w=1e-4, sleep_power_w=2e-4)

    def test_tag_uid_range(self):
        with pytest.raises(ValueError):
            make_tag(2**64)

    def test_payload_at_least_one(self):
        coil = CoilElectrical.from_lq(1.0e-6, 30.0, F)
        load = TagLoad(coil=coil, load_matched_ohm=1000.0, load_modulating_ohm=100.0)
        with pytest.raises(ValueError):
            TagDevice(uid=1, position_m=(0, 0, 0), load=load, payload_bytes=0)
