"""Synthetic campus generator: buildings, APs, agents, schedules, syslogs.

Produces ground-truth visit timelines with known structure plus the noisy
syslog files a real controller would emit, so the whole pipeline can be
verified end to end at desk scale. Everything downstream of the seed is
deterministic.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from mobmod.ingest import ApRecord, anonymize
from mobmod.trajectory import DAY_S, Stay, date_to_ts, ts_to_date
from mobmod.vocab import BUILDING_TYPES


@dataclass(frozen=True)
class BuildingSpec:
    name: str
    building_type: str
    floors: int = 1
    zones_per_floor: int = 2


@dataclass(frozen=True)
class CampusConfig:
    buildings: tuple[BuildingSpec, ...]
    students: int
    faculty: int
    seed: int
    start_date: str = "2019-09-02"  # a Monday

    def validate(self) -> None:
        if not self.buildings:
            raise ValueError("invalid config: need at least one building")
        if len({b.building_type for b in self.buildings}) < 2:
            raise ValueError("invalid config: need at least two building types")
        for b in self.buildings:
            if b.building_type not in BUILDING_TYPES:
                raise ValueError(f"invalid config: unknown building type {b.building_type}")
            if b.floors < 1 or b.zones_per_floor < 1:
                raise ValueError("invalid config: every building needs at least one zone")
        if self.students < 0 or self.faculty < 0:
            raise ValueError("invalid config: negative population")

    def to_json(self) -> dict:
        return {
            "buildings": [
                {
                    "name": b.name,
                    "building_type": b.building_type,
                    "floors": b.floors,
                    "zones_per_floor": b.zones_per_floor,
                }
                for b in self.buildings
            ],
            "population": {"students": self.students, "faculty": self.faculty},
            "seed": self.seed,
            "start_date": self.start_date,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CampusConfig":
        return cls(
            buildings=tuple(
                BuildingSpec(
                    name=b["name"],
                    building_type=b["building_type"],
                    floors=int(b.get("floors", 1)),
                    zones_per_floor=int(b.get("zones_per_floor", 2)),
                )
                for b in obj["buildings"]
            ),
            students=int(obj["population"]["students"]),
            faculty=int(obj["population"]["faculty"]),
            seed=int(obj["seed"]),
            start_date=obj.get("start_date", "2019-09-02"),
        )

    @classmethod
    def load(cls, path) -> "CampusConfig":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class Campus:
    config: CampusConfig
    ap_map: dict[str, ApRecord]
    zones_by_building: dict[str, list[str]]

    def zones_of_type(self, building_type: str) -> list[str]:
        out = []
        for b in self.config.buildings:
            if b.building_type == building_type:
                out.extend(self.zones_by_building[b.name])
        return out


def generate_campus(config: CampusConfig) -> Campus:
    """Deterministic topology: one AP per zone, zone ids campus-unique."""
    config.validate()
    ap_map: dict[str, ApRecord] = {}
    zones_by_building: dict[str, list[str]] = {}
    for b in config.buildings:
        zones: list[str] = []
        for floor in range(1, b.floors + 1):
            for z in range(1, b.zones_per_floor + 1):
                zone = f"{b.name}-{floor}-Z{z}"
                ap_id = f"ap-{zone}"
                ap_map[ap_id] = ApRecord(
                    ap_id=ap_id,
                    building_name=b.name,
                    building_type=b.building_type,
                    floor=floor,
                    zone=zone,
                )
                zones.append(zone)
        zones_by_building[b.name] = zones
    return Campus(config=config, ap_map=ap_map, zones_by_building=zones_by_building)


def write_ap_map_csv(campus: Campus, path) -> None:
    lines = ["ap_id,building_name,building_type,floor,zone"]
    for ap_id in sorted(campus.ap_map):
        r = campus.ap_map[ap_id]
        lines.append(f"{r.ap_id},{r.building_name},{r.building_type},{r.floor},{r.zone}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Slot:
    """One template slot: [start_min, end_min) at a zone (None = off network)."""

    start_min: int
    end_min: int
    zone: str | None
    alternatives: tuple[str, ...] = ()


@dataclass
class AgentSchedule:
    agent_id: str
    role: str                       # "student" | "staff"
    weekday: list[Slot]
    weekend: list[Slot]


@dataclass
class ScheduleGrammar:
    """Weekly slot templates per agent plus the noise knobs.

    epsilon: per-slot probability that the day's location is swapped for a
    uniform draw from the slot's alternatives. Micro-breaks model sub-hour
    excursions: eligible slots (located, >= break_eligible_min long,
    starting at/after 08:00) spawn a short trip into same-building zones
    with probability break_prob; a fraction of those are double hops
    through two zones (vending machine, then a colleague's office).
    """

    agents: list[AgentSchedule]
    epsilon: float = 0.1
    break_prob: float = 0.45
    break_minutes: tuple[int, ...] = (12, 22)
    break_weights: tuple[float, ...] = (0.5, 0.5)
    break_eligible_min: int = 80
    double_break_prob: float = 0.4
    hop_minutes: tuple[int, int] = (8, 12)

    def validate(self) -> None:
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        for agent in self.agents:
            for slots in (agent.weekday, agent.weekend):
                if slots[0].start_min != 0 or slots[-1].end_min != 1440:
                    raise ValueError("slots must cover the whole day")
                for a, b in zip(slots, slots[1:]):
                    if a.end_min != b.start_min:
                        raise ValueError("slots must tile the day without overlap")
                for s in slots:
                    if s.zone is not None and not s.alternatives:
                        raise ValueError("located slots need a non-empty alternative set")


def _pick(rng: np.random.Generator, items, exclude=None):
    pool = [x for x in items if x != exclude] or list(items)
    return pool[int(rng.integers(len(pool)))]


def default_grammar(campus: Campus, epsilon: float = 0.1,
                    break_prob: float = 0.45) -> ScheduleGrammar:
    """Role-typical weekly templates, personalized per agent.

    Students: dorm nights, two morning class blocks, lunch, an afternoon
    class, study, a short errand, recreation, dinner, dorm evenings.
    Faculty: off-campus nights, office hours with a lunch break. Class
    zones are shared per "major" so the population has learnable clusters.
    """
    cfg = campus.config
    rng = np.random.default_rng(cfg.seed)

    dorm_zones = campus.zones_of_type("Dorm")
    edu_zones = campus.zones_of_type("Educational")
    dining_zones = campus.zones_of_type("Dining")
    library_zones = campus.zones_of_type("Library") or edu_zones
    rec_zones = campus.zones_of_type("Recreation") or library_zones
    admin_zones = campus.zones_of_type("Admin") or library_zones
    if not dorm_zones or not edu_zones or not dining_zones:
        raise ValueError("invalid config: default grammar needs Dorm, Educational, and Dining buildings")

    n_majors = min(4, max(1, len(edu_zones) // 3))
    majors = []
    for m in range(n_majors):
        rooms = [edu_zones[(3 * m + k) % len(edu_zones)] for k in range(3)]
        majors.append(rooms)

    def others(zone, pool, count=3):
        rest = [z for z in pool if z != zone]
        if not rest:
            return (zone,)
        step = max(1, len(rest) // count)
        return tuple(rest[::step][:count]) or tuple(rest[:1])

    agents: list[AgentSchedule] = []
    for i in range(cfg.students):
        dorm = dorm_zones[int(rng.integers(len(dorm_zones)))]
        major = majors[int(rng.integers(len(majors)))]
        hall = dining_zones[int(rng.integers(len(dining_zones)))]
        dinner_hall = dining_zones[int(rng.integers(len(dining_zones)))]
        study = library_zones[int(rng.integers(len(library_zones)))]
        rec = rec_zones[int(rng.integers(len(rec_zones)))]
        errand = admin_zones[int(rng.integers(len(admin_zones)))]
        weekday = [
            Slot(0, 8 * 60 + 55, dorm, others(dorm, dorm_zones)),
            Slot(8 * 60 + 55, 9 * 60, None),
            Slot(9 * 60, 10 * 60 + 25, major[0], others(major[0], edu_zones)),
            Slot(10 * 60 + 25, 10 * 60 + 30, None),
            Slot(10 * 60 + 30, 11 * 60 + 55, major[1], others(major[1], edu_zones)),
            Slot(11 * 60 + 55, 12 * 60, None),
            Slot(12 * 60, 12 * 60 + 55, hall, others(hall, dining_zones)),
            Slot(12 * 60 + 55, 13 * 60, None),
            Slot(13 * 60, 14 * 60 + 25, major[2], others(major[2], edu_zones)),
            Slot(14 * 60 + 25, 14 * 60 + 30, None),
            Slot(14 * 60 + 30, 15 * 60 + 25, study, others(study, library_zones)),
            Slot(15 * 60 + 25, 15 * 60 + 30, None),
            Slot(15 * 60 + 30, 15 * 60 + 55, errand, others(errand, admin_zones)),
            Slot(15 * 60 + 55, 16 * 60, None),
            Slot(16 * 60, 17 * 60 + 55, rec, others(rec, rec_zones)),
            Slot(17 * 60 + 55, 18 * 60, None),
            Slot(18 * 60, 18 * 60 + 55, dinner_hall, others(dinner_hall, dining_zones)),
            Slot(18 * 60 + 55, 19 * 60, None),
            Slot(19 * 60, 1440, dorm, others(dorm, dorm_zones)),
        ]
        weekend = [
            Slot(0, 10 * 60 + 55, dorm, others(dorm, dorm_zones)),
            Slot(10 * 60 + 55, 11 * 60, None),
            Slot(11 * 60, 12 * 60 + 25, hall, others(hall, dining_zones)),
            Slot(12 * 60 + 25, 12 * 60 + 30, None),
            Slot(12 * 60 + 30, 15 * 60 + 55, dorm, others(dorm, dorm_zones)),
            Slot(15 * 60 + 55, 16 * 60, None),
            Slot(16 * 60, 17 * 60 + 55, rec, others(rec, rec_zones)),
            Slot(17 * 60 + 55, 18 * 60, None),
            Slot(18 * 60, 18 * 60 + 55, dinner_hall, others(dinner_hall, dining_zones)),
            Slot(18 * 60 + 55, 19 * 60, None),
            Slot(19 * 60, 1440, dorm, others(dorm, dorm_zones)),
        ]
        agents.append(AgentSchedule(f"s_{i:04d}", "student", weekday, weekend))

    for i in range(cfg.faculty):
        office = edu_zones[int(rng.integers(len(edu_zones)))]
        hall = dining_zones[int(rng.integers(len(dining_zones)))]
        weekday = [
            Slot(0, 9 * 60, None),
            Slot(9 * 60, 11 * 60 + 55, office, others(office, edu_zones)),
            Slot(11 * 60 + 55, 12 * 60, None),
            Slot(12 * 60, 12 * 60 + 40, hall, others(hall, dining_zones)),
            Slot(12 * 60 + 40, 12 * 60 + 45, None),
            Slot(12 * 60 + 45, 15 * 60 + 55, office, others(office, edu_zones)),
            Slot(15 * 60 + 55, 1440, None),
        ]
        weekend = [Slot(0, 1440, None)]
        agents.append(AgentSchedule(f"f_{i:04d}", "staff", weekday, weekend))

    return ScheduleGrammar(agents=agents, epsilon=epsilon, break_prob=break_prob)


@dataclass(frozen=True)
class GroundVisit:
    """Ground-truth presence interval of one agent in one zone."""

    agent_id: str
    zone: str
    start: int
    end: int


def _is_weekend(date_ts: int) -> bool:
    return datetime.fromtimestamp(date_ts, tz=timezone.utc).weekday() >= 5


def generate_days(
    campus: Campus,
    grammar: ScheduleGrammar,
    days: int,
    seed: int | None = None,
) -> dict[str, list[GroundVisit]]:
    """Roll each agent's template forward for `days` days with noise applied.

    Returns per-agent visit lists, midnight-split and time-ordered. A slot's
    location swaps to an alternative with probability epsilon; eligible long
    slots may contain one micro-break excursion.
    """
    grammar.validate()
    seed = campus.config.seed if seed is None else seed
    start_ts = date_to_ts(campus.config.start_date)
    zone_building = {z: b for b, zs in campus.zones_by_building.items() for z in zs}
    visits: dict[str, list[GroundVisit]] = {}

    for agent in grammar.agents:
        stable = int.from_bytes(hashlib.sha1(agent.agent_id.encode()).digest()[:4], "big")
        rng = np.random.default_rng((seed, stable))
        raw: list[tuple[str, int, int]] = []
        for day in range(days):
            day_ts = start_ts + day * DAY_S
            template = agent.weekend if _is_weekend(day_ts) else agent.weekday
            for slot in template:
                if slot.zone is None:
                    continue
                zone = slot.zone
                if grammar.epsilon > 0 and rng.random() < grammar.epsilon:
                    zone = slot.alternatives[int(rng.integers(len(slot.alternatives)))]
                s = day_ts + slot.start_min * 60
                e = day_ts + slot.end_min * 60
                duration_min = slot.end_min - slot.start_min
                breakable = (
                    duration_min >= grammar.break_eligible_min
                    and slot.start_min >= 8 * 60
                    and rng.random() < grammar.break_prob
                )
                if breakable:
                    pool = campus.zones_by_building[zone_building[zone]]
                    if rng.random() < grammar.double_break_prob and len(pool) > 2:
                        lo_m, hi_m = grammar.hop_minutes
                        hops = [int(rng.integers(lo_m, hi_m + 1)) for _ in range(2)]
                        z1 = _pick(rng, pool, exclude=zone)
                        z2 = _pick(rng, [z for z in pool if z != z1], exclude=zone)
                        segments = [(z1, hops[0]), (z2, hops[1])]
                    else:
                        blen = int(rng.choice(grammar.break_minutes, p=grammar.break_weights))
                        segments = [(_pick(rng, pool, exclude=zone), blen)]
                    total = sum(m for _, m in segments)
                    lo = slot.start_min + 20
                    hi = duration_min - 20 - total + slot.start_min
                    boff = int(rng.integers(lo, max(lo + 1, hi)))
                    cursor = day_ts + boff * 60
                    raw.append((zone, s, cursor))
                    for bzone, minutes in segments:
                        raw.append((bzone, cursor, cursor + minutes * 60))
                        cursor += minutes * 60
                    raw.append((zone, cursor, e))
                else:
                    raw.append((zone, s, e))
        # merge abutting same-zone visits (continuing stays), then split at midnight
        merged: list[tuple[str, int, int]] = []
        for zone, s, e in sorted(raw, key=lambda v: v[1]):
            if merged and merged[-1][0] == zone and merged[-1][2] == s:
                merged[-1] = (zone, merged[-1][1], e)
            else:
                merged.append((zone, s, e))
        split: list[GroundVisit] = []
        for zone, s, e in merged:
            cur = s
            while cur < e:
                boundary = (cur // DAY_S + 1) * DAY_S
                split.append(GroundVisit(agent.agent_id, zone, cur, min(e, boundary)))
                cur = min(e, boundary)
        visits[agent.agent_id] = split
    return visits


# ---------------------------------------------------------------------------
# syslog emission
# ---------------------------------------------------------------------------


_MONTH_NAMES = {1: "Jan", 2: "Feb", 3: "Mar", 4: "Apr", 5: "May", 6: "Jun",
                7: "Jul", 8: "Aug", 9: "Sep", 10: "Oct", 11: "Nov", 12: "Dec"}


def _stamp(ts: int) -> str:
    d = datetime.fromtimestamp(ts, tz=timezone.utc)
    return f"{_MONTH_NAMES[d.month]} {d.day:02d} {d.hour:02d}:{d.minute:02d}:{d.second:02d}"


@dataclass
class NoiseSpec:
    dup_rate: float = 0.0
    drop_disassoc_rate: float = 0.0
    reorder_rate: float = 0.0

    def validate(self) -> None:
        for v in (self.dup_rate, self.drop_disassoc_rate, self.reorder_rate):
            if not 0.0 <= v <= 1.0:
                raise ValueError("noise rates must be in [0, 1]")


@dataclass
class SimOutput:
    lines_by_controller: dict[str, list[str]]
    ground_truth: dict[str, list[GroundVisit]]
    devices: dict[str, list[str]]           # agent -> raw device macs
    hashed_agent: dict[str, str]            # agent -> anonymized user id


def emit_syslog(
    campus: Campus,
    grammar: ScheduleGrammar,
    visits: dict[str, list[GroundVisit]],
    noise: NoiseSpec | None = None,
    salt: bytes = b"",
    seed: int | None = None,
    controllers: int = 2,
) -> SimOutput:
    """Render visits as controller syslog files plus pristine ground truth.

    Noise-free emission is exactly one assoc at each merged stay's start and
    one disassoc at its end (continuing stays do not re-associate across
    midnight). Noise duplicates lines, drops disassociations, and swaps
    adjacent lines, each at its configured rate.
    """
    noise = noise or NoiseSpec()
    noise.validate()
    seed = campus.config.seed if seed is None else seed
    rng = np.random.default_rng((seed, 0xE117))

    role_by_agent = {a.agent_id: a.role for a in grammar.agents}
    zone_ap = {rec.zone: rec.ap_id for rec in campus.ap_map.values()}
    controller_of = {}
    for i, b in enumerate(sorted(campus.zones_by_building)):
        controller_of[b] = f"wc-{(i % controllers) + 1:02d}"

    devices: dict[str, list[str]] = {}
    hashed_agent: dict[str, str] = {}
    phone_of: dict[str, str] = {}
    for idx, agent in enumerate(sorted(visits)):
        phone = f"3af1{idx:08x}"
        devices[agent] = [phone]
        phone_of[agent] = phone
        hashed_agent[agent] = anonymize(agent, salt)
        if rng.random() < 0.3:
            devices[agent].append(f"ab0e{idx:08x}")  # stationary laptop

    # (ts, tiebreak, controller, line, is_disassoc)
    records: list[tuple[int, int, str, str, bool]] = []
    counter = 0

    def emit(ts: int, controller: str, event_id: int, body: str, is_dis: bool = False):
        nonlocal counter
        records.append((ts, counter, controller, f"{_stamp(ts)} {controller} <{event_id}> {body}", is_dis))
        counter += 1

    for agent in sorted(visits):
        agent_visits = visits[agent]
        if not agent_visits:
            continue
        phone = phone_of[agent]
        role = role_by_agent[agent]
        # one auth per day, just before the first visit of the day
        seen_days: set[int] = set()
        # re-merge the midnight-split ground truth into continuous stays
        stays: list[GroundVisit] = []
        for v in agent_visits:
            if stays and stays[-1].zone == v.zone and stays[-1].end == v.start:
                stays[-1] = GroundVisit(v.agent_id, v.zone, stays[-1].start, v.end)
            else:
                stays.append(v)
        for stay in stays:
            ap = zone_ap[stay.zone]
            building = stay.zone.rsplit("-", 2)[0]
            controller = controller_of[building]
            day = stay.start // DAY_S
            if day not in seen_days:
                seen_days.add(day)
                emit(stay.start - 2, controller, 522008,
                     f"user {agent} role {role} auth STA {phone}")
            r = rng.random()
            if r < 0.05:
                emit(stay.start, controller, 501101, f"STA {phone} reassoc to AP {ap}")
            elif r < 0.10:
                emit(stay.start, controller, 501110, f"STA {phone} drift to AP {ap}")
            else:
                emit(stay.start, controller, 501100, f"STA {phone} assoc to AP {ap}")
            emit(stay.end, controller, 501102, f"STA {phone} disassoc from AP {ap}", is_dis=True)
        # deauth at end of the agent's last stay
        last = stays[-1]
        controller = controller_of[last.zone.rsplit("-", 2)[0]]
        emit(last.end + 2, controller, 522010, f"user {agent} role {role} deauth STA {phone}")

        # stationary laptop: one assoc/disassoc pair per day at the agent's first zone
        if len(devices[agent]) > 1:
            laptop = devices[agent][1]
            home_zone = agent_visits[0].zone
            ap = zone_ap[home_zone]
            controller = controller_of[home_zone.rsplit("-", 2)[0]]
            for day in sorted({v.start // DAY_S for v in agent_visits}):
                t0 = day * DAY_S + 7 * 3600 + 120
                emit(t0 - 2, controller, 522008, f"user {agent} role {role} auth STA {laptop}")
                emit(t0, controller, 501100, f"STA {laptop} assoc to AP {ap}")
                emit(day * DAY_S + 23 * 3600, controller, 501102,
                     f"STA {laptop} disassoc from AP {ap}", is_dis=True)

    # occasional known-but-irrelevant chatter exercises the NonPresence path
    chatter_rng = np.random.default_rng((seed, 0xC4A7))
    for _ in range(max(1, len(records) // 200)):
        pick = records[int(chatter_rng.integers(len(records)))]
        emit(pick[0], pick[2], 501105, "radio stats channel 6 noise floor -92")

    lines_by_controller: dict[str, list[str]] = {}
    by_controller: dict[str, list[tuple[int, int, str, bool]]] = {}
    for ts, tie, controller, line, is_dis in sorted(records, key=lambda r: (r[0], r[1])):
        by_controller.setdefault(controller, []).append((ts, tie, line, is_dis))

    for controller in sorted(by_controller):
        out: list[str] = []
        for ts, tie, line, is_dis in by_controller[controller]:
            if is_dis and rng.random() < noise.drop_disassoc_rate:
                continue
            out.append(line)
            if rng.random() < noise.dup_rate:
                out.append(line)
        i = 0
        while i < len(out) - 1:
            if rng.random() < noise.reorder_rate:
                out[i], out[i + 1] = out[i + 1], out[i]
                i += 2
            else:
                i += 1
        lines_by_controller[controller] = out

    return SimOutput(
        lines_by_controller=lines_by_controller,
        ground_truth=visits,
        devices=devices,
        hashed_agent=hashed_agent,
    )


def ground_truth_stays(output: SimOutput, salt: bytes = b"") -> dict[str, list[Stay]]:
    """Ground truth keyed by anonymized user id, as zone stays."""
    out: dict[str, list[Stay]] = {}
    for agent, vs in output.ground_truth.items():
        out[anonymize(agent, salt)] = [Stay(v.zone, v.start, v.end) for v in vs]
    return out


def write_sim_outputs(output: SimOutput, campus: Campus, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_ap_map_csv(campus, out_dir / "ap_map.csv")
    for controller, lines in sorted(output.lines_by_controller.items()):
        (out_dir / f"syslog-{controller}.log").write_text("\n".join(lines) + "\n")
    with open(out_dir / "ground_truth.jsonl", "w") as fh:
        for agent in sorted(output.ground_truth):
            for v in output.ground_truth[agent]:
                fh.write(json.dumps({
                    "agent": agent,
                    "user": output.hashed_agent[agent],
                    "zone": v.zone,
                    "start": v.start,
                    "end": v.end,
                }, sort_keys=True) + "\n")
