"""AP syslog ingestion: line parsing, AP map loading, and stream merging.

Line grammar (HP-Aruba-like):

    MMM DD hh:mm:ss <controller> <<event_id>> <body>

where the assoc-family body is ``STA <mac12hex> <verb> AP <ap_id>`` and the
auth-family body is ``user <uid> role <student|staff> <verb> STA <mac12hex>``.
Device MACs and usernames are anonymized with SHA-1 over salt||raw-id before
they leave this module; the salt itself is never written anywhere.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from mobmod.vocab import BUILDING_TYPES


class EventKind(str, Enum):
    ASSOC = "assoc"
    DISASSOC = "disassoc"
    REASSOC = "reassoc"
    AUTH = "auth"
    DEAUTH = "deauth"
    DRIFT = "drift"


class Role(str, Enum):
    STUDENT = "student"
    FACULTY_STAFF = "staff"


# assoc-family events carry an AP, auth-family events carry user identity
AP_KINDS = (EventKind.ASSOC, EventKind.DISASSOC, EventKind.REASSOC, EventKind.DRIFT)
USER_KINDS = (EventKind.AUTH, EventKind.DEAUTH)

# Vendor event ids are configurable; a None kind marks an id that is known
# but carries no presence information (diagnostics, radio stats, ...).
DEFAULT_EVENT_KINDS: dict[int, EventKind | None] = {
    501100: EventKind.ASSOC,
    501101: EventKind.REASSOC,
    501102: EventKind.DISASSOC,
    501110: EventKind.DRIFT,
    522008: EventKind.AUTH,
    522010: EventKind.DEAUTH,
    501105: None,
    522999: None,
}


@dataclass(frozen=True, order=True)
class PresenceEvent:
    timestamp: int
    device: str
    controller: str
    kind: EventKind
    ap: str | None = None
    username: str | None = None
    role: Role | None = None

    def to_json(self) -> dict:
        return {
            "ts": self.timestamp,
            "controller": self.controller,
            "kind": self.kind.value,
            "device": self.device,
            "ap": self.ap,
            "username": self.username,
            "role": self.role.value if self.role else None,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PresenceEvent":
        return cls(
            timestamp=int(obj["ts"]),
            controller=obj["controller"],
            kind=EventKind(obj["kind"]),
            device=obj["device"],
            ap=obj.get("ap"),
            username=obj.get("username"),
            role=Role(obj["role"]) if obj.get("role") else None,
        )


@dataclass(frozen=True)
class ApRecord:
    ap_id: str
    building_name: str
    building_type: str
    floor: int
    zone: str


class SkipReason(str, Enum):
    NON_PRESENCE = "non_presence"
    UNKNOWN_ID = "unknown_id"
    MALFORMED = "malformed"


@dataclass(frozen=True)
class Skip:
    reason: SkipReason
    line: str


class ApMapError(ValueError):
    """Bad AP map file: duplicate ap_id, unknown building type, or missing column."""


def anonymize(raw_id: str, salt: bytes) -> str:
    """SHA-1 over salt||raw-id, rendered as 40 lowercase hex chars."""
    return hashlib.sha1(salt + raw_id.encode("utf-8")).hexdigest()


_MONTHS = {
    "Jan": 1, "Feb": 2, "Mar": 3, "Apr": 4, "May": 5, "Jun": 6,
    "Jul": 7, "Aug": 8, "Sep": 9, "Oct": 10, "Nov": 11, "Dec": 12,
}

_HEADER_RE = re.compile(
    r"^(?P<mon>[A-Z][a-z]{2}) +(?P<day>\d{1,2}) (?P<time>\d{2}:\d{2}:\d{2}) "
    r"(?P<controller>\S+) <(?P<event_id>\d+)> (?P<body>.*)$"
)
_STA_RE = re.compile(
    r"^STA (?P<mac>[0-9a-fA-F]{12}) (?P<verb>.+?) AP (?P<ap>\S+)$"
)
_USER_RE = re.compile(
    r"^user (?P<uid>\S+) role (?P<role>student|staff) (?P<verb>\S+) "
    r"STA (?P<mac>[0-9a-fA-F]{12})$"
)


def parse_line(
    line: str,
    kinds: dict[int, EventKind | None] | None = None,
    salt: bytes = b"",
    year: int = 2019,
) -> PresenceEvent | Skip:
    """Parse one syslog line into a PresenceEvent, or a Skip with a reason.

    Never raises on bad input: anything that does not match the grammar comes
    back as Skip(MALFORMED); presence event ids outside `kinds` come back as
    Skip(UNKNOWN_ID). Syslog timestamps have no year field, so the year is a
    parameter.
    """
    kinds = DEFAULT_EVENT_KINDS if kinds is None else kinds
    m = _HEADER_RE.match(line.strip())
    if not m:
        return Skip(SkipReason.MALFORMED, line)
    mon = _MONTHS.get(m.group("mon"))
    if mon is None:
        return Skip(SkipReason.MALFORMED, line)
    try:
        hh, mm, ss = (int(p) for p in m.group("time").split(":"))
        ts = int(
            datetime(year, mon, int(m.group("day")), hh, mm, ss,
                     tzinfo=timezone.utc).timestamp()
        )
    except ValueError:
        return Skip(SkipReason.MALFORMED, line)

    event_id = int(m.group("event_id"))
    if event_id not in kinds:
        return Skip(SkipReason.UNKNOWN_ID, line)
    kind = kinds[event_id]
    if kind is None:
        return Skip(SkipReason.NON_PRESENCE, line)

    body = m.group("body")
    if kind in AP_KINDS:
        bm = _STA_RE.match(body)
        if not bm:
            return Skip(SkipReason.MALFORMED, line)
        return PresenceEvent(
            timestamp=ts,
            controller=m.group("controller"),
            kind=kind,
            device=anonymize(bm.group("mac").lower(), salt),
            ap=bm.group("ap"),
        )
    bm = _USER_RE.match(body)
    if not bm:
        return Skip(SkipReason.MALFORMED, line)
    return PresenceEvent(
        timestamp=ts,
        controller=m.group("controller"),
        kind=kind,
        device=anonymize(bm.group("mac").lower(), salt),
        username=anonymize(bm.group("uid"), salt),
        role=Role(bm.group("role")),
    )


def load_ap_map(path) -> dict[str, ApRecord]:
    """Load the AP location map CSV (ap_id,building_name,building_type,floor,zone)."""
    required = ("ap_id", "building_name", "building_type", "floor", "zone")
    out: dict[str, ApRecord] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise ApMapError(f"missing column: {col}")
        for row in reader:
            ap_id = row["ap_id"]
            if ap_id in out:
                raise ApMapError(f"duplicate ap_id: {ap_id}")
            btype = row["building_type"]
            if btype not in BUILDING_TYPES:
                raise ApMapError(f"unknown building type: {btype}")
            if not row["zone"]:
                raise ApMapError(f"empty zone for ap_id {ap_id}")
            out[ap_id] = ApRecord(
                ap_id=ap_id,
                building_name=row["building_name"],
                building_type=btype,
                floor=int(row["floor"]),
                zone=row["zone"],
            )
    return out


def load_event_kind_map(path) -> dict[int, EventKind | None]:
    """Load a vendor event-id map CSV (event_id,kind); kind 'other' = non-presence."""
    out: dict[int, EventKind | None] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kind = row["kind"]
            out[int(row["event_id"])] = None if kind == "other" else EventKind(kind)
    return out


def _sort_key(e: PresenceEvent):
    # total order; the trailing fields make dedup of exact duplicates adjacent
    return (
        e.timestamp,
        e.device,
        e.controller,
        e.kind.value,
        e.ap or "",
        e.username or "",
        e.role.value if e.role else "",
    )


@dataclass
class MergeStats:
    duplicates: int = 0
    late_drops: int = 0


def stream_merge(
    inputs: Iterable[Iterable[PresenceEvent]],
    window_s: int = 300,
    stats: MergeStats | None = None,
) -> list[PresenceEvent]:
    """Merge per-controller streams into one deterministically ordered stream.

    Within each input stream, an event older than the stream's running max
    timestamp by more than `window_s` is dropped (LateDrop); everything else
    is re-sorted. Exact duplicates collapse to one occurrence.
    """
    stats = stats if stats is not None else MergeStats()
    survivors: list[PresenceEvent] = []
    for stream in inputs:
        frontier: int | None = None
        for ev in stream:
            if frontier is not None and ev.timestamp < frontier - window_s:
                stats.late_drops += 1
                continue
            frontier = ev.timestamp if frontier is None else max(frontier, ev.timestamp)
            survivors.append(ev)
    survivors.sort(key=_sort_key)
    merged: list[PresenceEvent] = []
    for ev in survivors:
        if merged and merged[-1] == ev:
            stats.duplicates += 1
            continue
        merged.append(ev)
    return merged


def write_events_jsonl(events: Iterable[PresenceEvent], path) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(json.dumps(ev.to_json(), sort_keys=True) + "\n")


def read_events_jsonl(path) -> Iterator[PresenceEvent]:
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield PresenceEvent.from_json(json.loads(line))


@dataclass
class IngestStats:
    parsed: int = 0
    malformed: int = 0
    non_presence: int = 0
    unknown_id: int = 0
    merge: MergeStats = field(default_factory=MergeStats)


def ingest_files(
    paths: list,
    kinds: dict[int, EventKind | None] | None = None,
    salt: bytes = b"",
    year: int = 2019,
    window_s: int = 300,
) -> tuple[list[PresenceEvent], IngestStats]:
    """Parse syslog files (one stream per file) and merge them."""
    stats = IngestStats()

    def parse_file(path) -> list[PresenceEvent]:
        out = []
        with open(path, errors="replace") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = parse_line(line, kinds=kinds, salt=salt, year=year)
                if isinstance(rec, Skip):
                    if rec.reason == SkipReason.MALFORMED:
                        stats.malformed += 1
                    elif rec.reason == SkipReason.UNKNOWN_ID:
                        stats.unknown_id += 1
                    else:
                        stats.non_presence += 1
                    continue
                stats.parsed += 1
                out.append(rec)
        return out

    streams = [parse_file(p) for p in sorted(Path(p) for p in paths)]
    merged = stream_merge(streams, window_s=window_s, stats=stats.merge)
    return merged, stats


# heapq is kept for callers that stream pre-sorted inputs lazily
def merge_sorted_streams(streams: list) -> Iterator[PresenceEvent]:
    return heapq.merge(*streams, key=_sort_key)
