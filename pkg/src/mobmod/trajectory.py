"""Events -> sessions -> dwell visits -> multi-scale binned trajectories.

Devices are mapped to users through auth events, stationary devices are
removed, and each user's most mobile device stands in for the user. A stay
of at least 10 minutes at one zone is a dwell visit; shorter stays are
transitions but still compete for bin labels. All times are epoch seconds
interpreted on a UTC clock (campus local time by convention).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

from mobmod.ingest import AP_KINDS, ApRecord, EventKind, PresenceEvent
from mobmod.vocab import BUILDING_TYPES, OFF_LABEL, Vocabulary

DWELL_MIN_S = 600          # "at least 10 minutes"
SESSION_CAP_S = 4 * 3600   # bound on phantom presence when a close is lost
COALESCE_GAP_S = 60        # same-zone AP churn shorter than this is one stay

WORK_START_MIN = 8 * 60 + 30
WORK_END_MIN = 16 * 60 + 30

DAY_S = 86400

GRANULARITIES = (15, 30, 60)


@dataclass(frozen=True)
class Session:
    device: str
    ap: str
    start: int
    end: int


@dataclass(frozen=True)
class Stay:
    """Contiguous presence in one zone; dwell or transition by duration."""

    zone: str
    start: int
    end: int

    @property
    def duration(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class DwellVisit:
    user: str
    start: int
    end: int
    indoor_location: str
    building_name: str
    space_type: str
    context: str


@dataclass(frozen=True)
class MultiScaleTrajectory:
    user: str
    date: str                      # ISO calendar day
    granularity: int               # minutes per bin
    tokens_c: tuple[int, ...]      # raw per-modality ids; 0 is OFF
    tokens_s: tuple[int, ...]
    tokens_b: tuple[int, ...]
    tokens_l: tuple[int, ...]

    def to_json(self) -> dict:
        return {
            "user": self.user,
            "date": self.date,
            "granularity": self.granularity,
            "context": list(self.tokens_c),
            "space_type": list(self.tokens_s),
            "building": list(self.tokens_b),
            "location": list(self.tokens_l),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MultiScaleTrajectory":
        return cls(
            user=obj["user"],
            date=obj["date"],
            granularity=int(obj["granularity"]),
            tokens_c=tuple(obj["context"]),
            tokens_s=tuple(obj["space_type"]),
            tokens_b=tuple(obj["building"]),
            tokens_l=tuple(obj["location"]),
        )


def write_trajectories_jsonl(trajectories, path) -> None:
    with open(path, "w") as fh:
        for t in trajectories:
            fh.write(json.dumps(t.to_json(), sort_keys=True) + "\n")


def read_trajectories_jsonl(path) -> list[MultiScaleTrajectory]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(MultiScaleTrajectory.from_json(json.loads(line)))
    return out


# ---------------------------------------------------------------------------
# sessions
# ---------------------------------------------------------------------------


@dataclass
class ResolveStats:
    orphan_disassoc: int = 0
    zero_length: int = 0
    capped: int = 0


def resolve_sessions(
    events,
    cap_s: int = SESSION_CAP_S,
    stats: ResolveStats | None = None,
) -> dict[str, list[Session]]:
    """Per-device non-overlapping sessions from an ordered event stream.

    Assoc/Reassoc/Drift to an AP opens a session there, implicitly closing
    any session open at a different AP (capped at open+cap_s). A Disassoc
    closes the session only when its AP matches; a mismatch is a stale
    message and counts as orphan. Sessions with no closing event end at
    min(next device event, open + cap_s).
    """
    stats = stats if stats is not None else ResolveStats()
    open_by_device: dict[str, tuple[str, int]] = {}
    sessions: dict[str, list[Session]] = {}

    def close(device: str, at: int, enforce_cap: bool = True) -> None:
        ap, start = open_by_device.pop(device)
        if enforce_cap and at > start + cap_s:
            at = start + cap_s
            stats.capped += 1
        if at <= start:
            stats.zero_length += 1
            return
        sessions.setdefault(device, []).append(Session(device, ap, start, at))

    for ev in events:
        if ev.kind not in AP_KINDS:
            continue
        current = open_by_device.get(ev.device)
        if ev.kind == EventKind.DISASSOC:
            if current is None or current[0] != ev.ap:
                stats.orphan_disassoc += 1
                continue
            # a matching close is authoritative; overnight stays are real
            close(ev.device, ev.timestamp, enforce_cap=False)
            continue
        # assoc / reassoc / drift: device is now at ev.ap
        if current is not None:
            if current[0] == ev.ap and ev.timestamp <= current[1] + cap_s:
                continue  # duplicate keep-alive for the open session
            close(ev.device, ev.timestamp)
        open_by_device[ev.device] = (ev.ap, ev.timestamp)

    for device in sorted(open_by_device):
        close(device, open_by_device[device][1] + cap_s)
    return sessions


@dataclass
class UserDeviceMap:
    user_devices: dict[str, set[str]] = field(default_factory=dict)
    device_user: dict[str, str] = field(default_factory=dict)
    device_role: dict[str, str] = field(default_factory=dict)
    conflicts: int = 0


def map_users_devices(events) -> UserDeviceMap:
    """Auth events -> user/device ownership; last writer wins on conflicts."""
    out = UserDeviceMap()
    for ev in events:
        if ev.kind != EventKind.AUTH or not ev.username:
            continue
        prev = out.device_user.get(ev.device)
        if prev is not None and prev != ev.username:
            out.conflicts += 1
            out.user_devices[prev].discard(ev.device)
        out.device_user[ev.device] = ev.username
        out.user_devices.setdefault(ev.username, set()).add(ev.device)
        if ev.role is not None:
            out.device_role[ev.device] = ev.role.value
    return out


def select_primary_device(
    devices: set[str],
    sessions: dict[str, list[Session]],
) -> str | None:
    """Most mobile device: highest mean distinct-APs-per-active-day.

    Devices seen at a single distinct AP over the whole dataset are
    stationary and removed first. Ties break to the smallest device id;
    returns None when every device is stationary.
    """
    best: tuple[float, str] | None = None
    for device in sorted(devices):
        sess = sessions.get(device, [])
        if len({s.ap for s in sess}) <= 1:
            continue
        per_day: dict[int, set[str]] = {}
        for s in sess:
            per_day.setdefault(s.start // DAY_S, set()).add(s.ap)
        score = sum(len(aps) for aps in per_day.values()) / len(per_day)
        if best is None or score > best[0]:
            best = (score, device)
    return best[1] if best else None


# ---------------------------------------------------------------------------
# stays and dwell visits
# ---------------------------------------------------------------------------


def annotate_context(timestamp: int) -> str:
    """Work iff the time of day falls in [08:30, 16:30)."""
    minute = (timestamp % DAY_S) // 60
    return "Work" if WORK_START_MIN <= minute < WORK_END_MIN else "Home"


def zone_catalog(ap_map: dict[str, ApRecord]) -> dict[str, ApRecord]:
    """zone -> representative ApRecord; zones must identify one building."""
    out: dict[str, ApRecord] = {}
    for ap_id in sorted(ap_map):
        rec = ap_map[ap_id]
        prev = out.get(rec.zone)
        if prev is not None and (prev.building_name != rec.building_name
                                 or prev.building_type != rec.building_type):
            raise ValueError(f"zone {rec.zone!r} maps to conflicting buildings")
        out.setdefault(rec.zone, rec)
    return out


@dataclass
class StayStats:
    unknown_ap: int = 0


def sessions_to_stays(
    sessions: list[Session],
    ap_map: dict[str, ApRecord],
    coalesce_gap_s: int = COALESCE_GAP_S,
    stats: StayStats | None = None,
) -> list[Stay]:
    """Coalesce a device's sessions into zone stays.

    Consecutive sessions in the same zone merge when the gap is at most
    coalesce_gap_s; sessions at unmapped APs are dropped with a count.
    """
    stats = stats if stats is not None else StayStats()
    stays: list[Stay] = []
    for s in sorted(sessions, key=lambda s: (s.start, s.end)):
        rec = ap_map.get(s.ap)
        if rec is None:
            stats.unknown_ap += 1
            continue
        if stays and stays[-1].zone == rec.zone and s.start - stays[-1].end <= coalesce_gap_s:
            stays[-1] = Stay(rec.zone, stays[-1].start, max(stays[-1].end, s.end))
        elif stays and s.start < stays[-1].end:
            continue  # overlap residue; sessions are already resolved
        else:
            stays.append(Stay(rec.zone, s.start, s.end))
    return stays


def split_at_midnight(stays: list[Stay]) -> list[Stay]:
    out: list[Stay] = []
    for stay in stays:
        start = stay.start
        while start < stay.end:
            boundary = (start // DAY_S + 1) * DAY_S
            end = min(stay.end, boundary)
            out.append(Stay(stay.zone, start, end))
            start = end
    return out


def build_dwell_visits(
    sessions: list[Session],
    ap_map: dict[str, ApRecord],
    user: str,
    stats: StayStats | None = None,
) -> tuple[list[DwellVisit], list[Stay]]:
    """Dwell visits (stays of >= 600 s) and sub-threshold transitions."""
    zones = zone_catalog(ap_map)
    dwells: list[DwellVisit] = []
    transitions: list[Stay] = []
    for stay in sessions_to_stays(sessions, ap_map, stats=stats):
        if stay.duration >= DWELL_MIN_S:
            rec = zones[stay.zone]
            dwells.append(
                DwellVisit(
                    user=user,
                    start=stay.start,
                    end=stay.end,
                    indoor_location=stay.zone,
                    building_name=rec.building_name,
                    space_type=rec.building_type,
                    context=annotate_context(stay.start),
                )
            )
        else:
            transitions.append(stay)
    return dwells, transitions


def daily_dwell_sequences(stays: list[Stay]) -> dict[str, list[str]]:
    """Per-calendar-day ordered zone sequences of dwell-length stay parts.

    Stays are split at midnight first; a part counts only if it is itself
    at least the dwell threshold. Used to compare recovered timelines with
    simulator ground truth.
    """
    out: dict[str, list[str]] = {}
    for part in split_at_midnight(sorted(stays, key=lambda s: s.start)):
        if part.duration < DWELL_MIN_S:
            continue
        out.setdefault(ts_to_date(part.start), []).append(part.zone)
    return out


# ---------------------------------------------------------------------------
# binning
# ---------------------------------------------------------------------------


def ts_to_date(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).date().isoformat()


def date_to_ts(date: str) -> int:
    d = datetime.fromisoformat(date).replace(tzinfo=timezone.utc)
    return int(d.timestamp())


def date_range(first: str, last: str) -> list[str]:
    start = datetime.fromisoformat(first).date()
    stop = datetime.fromisoformat(last).date()
    return [
        (start + timedelta(days=i)).isoformat()
        for i in range((stop - start).days + 1)
    ]


def bin_trajectory(
    user: str,
    date: str,
    stays: list[Stay],
    granularity: int,
    vocab: Vocabulary,
    zones: dict[str, ApRecord],
) -> MultiScaleTrajectory:
    """Bin one user-day into aligned (c, s, b, l) raw-id sequences.

    Each bin takes the zone with maximal presence overlap (dwells and
    transitions both count); ties go to the earlier-starting stay. Bins
    without presence carry OFF in all four streams.
    """
    if granularity not in GRANULARITIES:
        raise ValueError(f"granularity must be one of {GRANULARITIES}")
    n_bins = 1440 // granularity
    day_start = date_to_ts(date)
    step = granularity * 60

    relevant = [
        s for s in sorted(stays, key=lambda s: (s.start, s.end))
        if s.end > day_start and s.start < day_start + DAY_S
    ]

    c = np.zeros(n_bins, dtype=np.int64)
    sp = np.zeros(n_bins, dtype=np.int64)
    b = np.zeros(n_bins, dtype=np.int64)
    l = np.zeros(n_bins, dtype=np.int64)

    for i in range(n_bins):
        lo = day_start + i * step
        hi = lo + step
        overlap_by_zone: dict[str, int] = {}
        first_start: dict[str, int] = {}
        for stay in relevant:
            if stay.start >= hi:
                break
            overlap = min(stay.end, hi) - max(stay.start, lo)
            if overlap > 0:
                overlap_by_zone[stay.zone] = overlap_by_zone.get(stay.zone, 0) + overlap
                first_start.setdefault(stay.zone, stay.start)
        if not overlap_by_zone:
            continue
        # zone with maximal total overlap; ties go to the earlier-starting zone
        best_zone = max(overlap_by_zone,
                        key=lambda z: (overlap_by_zone[z], -first_start[z]))
        rec = zones[best_zone]
        c[i] = vocab.raw_id(0, annotate_context(lo))
        sp[i] = vocab.raw_id(1, rec.building_type)
        b[i] = vocab.raw_id(2, rec.building_name)
        l[i] = vocab.raw_id(3, best_zone)
    return MultiScaleTrajectory(
        user=user,
        date=date,
        granularity=granularity,
        tokens_c=tuple(c.tolist()),
        tokens_s=tuple(sp.tolist()),
        tokens_b=tuple(b.tolist()),
        tokens_l=tuple(l.tolist()),
    )


# ---------------------------------------------------------------------------
# whole pipeline
# ---------------------------------------------------------------------------


@dataclass
class BuildStats:
    users_total: int = 0
    users_without_primary: int = 0
    resolve: ResolveStats = field(default_factory=ResolveStats)
    stays: StayStats = field(default_factory=StayStats)
    conflicts: int = 0


def build_trajectories(
    events: list[PresenceEvent],
    ap_map: dict[str, ApRecord],
    granularity: int,
    vocab: Vocabulary | None = None,
) -> tuple[list[MultiScaleTrajectory], Vocabulary, BuildStats]:
    """Full builder: ordered events to one trajectory per (user, day).

    Every mapped user with a non-stationary primary device gets one
    trajectory per day of the dataset's span, all-OFF days included.
    Output ordering is (user, date); identical input yields identical
    output.
    """
    stats = BuildStats()
    if vocab is None:
        vocab = Vocabulary.from_ap_map(ap_map)
    zones = zone_catalog(ap_map)

    udm = map_users_devices(events)
    stats.conflicts = udm.conflicts
    stats.users_total = len(udm.user_devices)
    sessions = resolve_sessions(events, stats=stats.resolve)

    if not events:
        return [], vocab, stats
    dates = date_range(ts_to_date(events[0].timestamp), ts_to_date(events[-1].timestamp))

    trajectories: list[MultiScaleTrajectory] = []
    for user in sorted(udm.user_devices):
        primary = select_primary_device(udm.user_devices[user], sessions)
        if primary is None:
            stats.users_without_primary += 1
            continue
        stays = sessions_to_stays(sessions.get(primary, []), ap_map, stats=stats.stays)
        for date in dates:
            trajectories.append(
                bin_trajectory(user, date, stays, granularity, vocab, zones)
            )
    return trajectories, vocab, stats
