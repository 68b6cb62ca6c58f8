import hashlib
import random

import pytest

from mobmod.ingest import (
    ApMapError,
    ApRecord,
    EventKind,
    MergeStats,
    PresenceEvent,
    Role,
    Skip,
    SkipReason,
    anonymize,
    load_ap_map,
    load_event_kind_map,
    parse_line,
    stream_merge,
)

SALT = b"pepper"


def sha(s):
    return hashlib.sha1(SALT + s.encode()).hexdigest()


class TestParseLine:
    def test_assoc_line(self):
        line = "Sep 05 08:31:07 wc-01 <501100> STA 3af100000007 assoc to AP ap-EDU1-2-Z3"
        ev = parse_line(line, salt=SALT)
        assert isinstance(ev, PresenceEvent)
        assert ev.kind == EventKind.ASSOC
        assert ev.ap == "ap-EDU1-2-Z3"
        assert ev.controller == "wc-01"
        assert ev.device == sha("3af100000007")
        assert len(ev.device) == 40 and ev.device == ev.device.lower()

    def test_auth_line(self):
        line = "Sep 05 08:30:55 wc-01 <522008> user u_0042 role student auth STA 3af100000007"
        ev = parse_line(line, salt=SALT)
        assert isinstance(ev, PresenceEvent)
        assert ev.kind == EventKind.AUTH
        assert ev.username == sha("u_0042")
        assert ev.role == Role.STUDENT
        assert ev.device == sha("3af100000007")
        assert ev.ap is None

    def test_garbage_is_malformed(self):
        rec = parse_line("Sep 05 08:31:07 wc-01 garbage-without-event-id")
        assert isinstance(rec, Skip)
        assert rec.reason == SkipReason.MALFORMED

    def test_unknown_event_id(self):
        line = "Sep 05 08:31:07 wc-01 <999999> STA 3af100000007 assoc to AP ap-X"
        rec = parse_line(line)
        assert isinstance(rec, Skip) and rec.reason == SkipReason.UNKNOWN_ID

    def test_known_non_presence_id(self):
        line = "Sep 05 08:31:07 wc-01 <501105> radio stats channel 11"
        rec = parse_line(line)
        assert isinstance(rec, Skip) and rec.reason == SkipReason.NON_PRESENCE

    def test_missing_mac_is_malformed(self):
        line = "Sep 05 08:31:07 wc-01 <501100> STA zz assoc to AP ap-X"
        rec = parse_line(line)
        assert isinstance(rec, Skip) and rec.reason == SkipReason.MALFORMED

    def test_ordering_of_assoc_timestamps(self):
        early = parse_line("Sep 05 08:30:55 wc-01 <501100> STA 3af100000007 assoc to AP a")
        late = parse_line("Sep 05 08:31:07 wc-01 <501100> STA 3af100000007 assoc to AP a")
        assert late.timestamp - early.timestamp == 12

    def test_year_parameter(self):
        line = "Jan 01 00:00:00 wc-01 <501100> STA 3af100000007 assoc to AP a"
        a = parse_line(line, year=2019)
        b = parse_line(line, year=2020)
        assert b.timestamp > a.timestamp

    def test_never_raises_on_arbitrary_bytes(self):
        rnd = random.Random(1234)
        base = "Sep 05 08:31:07 wc-01 <501100> STA 3af100000007 assoc to AP ap-X"
        for _ in range(1500):
            choice = rnd.random()
            if choice < 0.4:
                line = "".join(chr(rnd.randrange(1, 256)) for _ in range(rnd.randrange(0, 120)))
            elif choice < 0.8:
                chars = list(base)
                for _ in range(rnd.randrange(1, 6)):
                    chars[rnd.randrange(len(chars))] = chr(rnd.randrange(1, 256))
                line = "".join(chars)
            else:
                cut = rnd.randrange(len(base))
                line = base[:cut]
            result = parse_line(line, salt=SALT)
            assert isinstance(result, (PresenceEvent, Skip))


class TestAnonymize:
    def test_deterministic(self):
        assert anonymize("abc", b"s") == anonymize("abc", b"s")

    def test_salts_differ_no_collisions(self):
        ids = [f"dev{i:05d}" for i in range(1000)]
        with_a = {anonymize(i, b"saltA") for i in ids}
        with_b = {anonymize(i, b"saltB") for i in ids}
        assert len(with_a) == 1000 and len(with_b) == 1000
        assert not (with_a & with_b)


class TestApMap(object):
    def write(self, tmp_path, rows, header="ap_id,building_name,building_type,floor,zone"):
        p = tmp_path / "aps.csv"
        p.write_text("\n".join([header] + rows) + "\n")
        return p

    def test_basic_row(self, tmp_path):
        p = self.write(tmp_path, ["ap-EDU1-2-Z3,EDU1,Educational,2,Z3"])
        m = load_ap_map(p)
        assert m["ap-EDU1-2-Z3"] == ApRecord("ap-EDU1-2-Z3", "EDU1", "Educational", 2, "Z3")

    def test_duplicate_ap_id(self, tmp_path):
        p = self.write(tmp_path, ["ap-X,B,Dorm,1,Z1", "ap-X,B,Dorm,1,Z2"])
        with pytest.raises(ApMapError, match="duplicate"):
            load_ap_map(p)

    def test_unknown_building_type(self, tmp_path):
        p = self.write(tmp_path, ["ap-X,B,Casino,1,Z1"])
        with pytest.raises(ApMapError, match="unknown building type"):
            load_ap_map(p)

    def test_missing_column(self, tmp_path):
        p = self.write(tmp_path, ["ap-X,B,Dorm,1"], header="ap_id,building_name,building_type,floor")
        with pytest.raises(ApMapError, match="missing column"):
            load_ap_map(p)


class TestKindMap:
    def test_load(self, tmp_path):
        p = tmp_path / "kinds.csv"
        p.write_text("event_id,kind\n1,assoc\n2,other\n")
        m = load_event_kind_map(p)
        assert m[1] == EventKind.ASSOC and m[2] is None


def ev(ts, device="d1", controller="wc-01", kind=EventKind.ASSOC, ap="ap-A"):
    return PresenceEvent(timestamp=ts, device=device, controller=controller, kind=kind, ap=ap)


class TestStreamMerge:
    def test_two_streams_interleave(self):
        merged = stream_merge([[ev(100), ev(200)], [ev(100, device="d2"), ev(200, device="d2")]])
        assert len(merged) == 4
        assert [e.timestamp for e in merged] == [100, 100, 200, 200]

    def test_exact_duplicate_collapses(self):
        stats = MergeStats()
        merged = stream_merge([[ev(100)], [ev(100)]], stats=stats)
        assert len(merged) == 1
        assert stats.duplicates == 1

    def test_late_event_dropped(self):
        stats = MergeStats()
        merged = stream_merge([[ev(400), ev(50)]], window_s=300, stats=stats)
        assert stats.late_drops == 1
        assert [e.timestamp for e in merged] == [400]

    def test_within_window_resorted(self):
        merged = stream_merge([[ev(400), ev(250)]], window_s=300)
        assert [e.timestamp for e in merged] == [250, 400]

    def test_idempotent(self):
        streams = [[ev(300), ev(100), ev(200, device="d2")], [ev(100, controller="wc-02")]]
        once = stream_merge(streams)
        twice = stream_merge([once])
        assert once == twice
