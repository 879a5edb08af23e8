"""Scenario construction: merge scheduling, road geometry wiring, randomized
initial conditions, and the mapping from planned longitudinal positions to
2-D reference trajectories.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ArcSegment, LaneCurve, LineSegment, fillet_merge_lane, turn_lane
from .params import Params

RAMP_LANES = ("main", "ramp")
ROAD_HEADINGS = {"W": 0.0, "S": math.pi / 2, "E": math.pi, "N": -math.pi / 2}
TURN_ANGLES = {"straight": 0.0, "left": math.pi / 2, "right": -math.pi / 2}

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class VehicleSpec:
    """One vehicle's spawn description.

    `lane` is "main"/"ramp" in merge scenarios and the approach road letter
    (W/E/S/N) at junctions, where `turn` picks the path through the box.
    """

    id: int
    lane: str
    s0: float
    v0: float
    turn: str | None = None


@dataclass(frozen=True)
class MergeSchedule:
    """Merge ordering and the neighbor relations it induces.

    `sequence` lists vehicle ids in merging order (first merger first); the
    rank S counts slots from the rear of the final platoon, so the first
    merger carries S = N and ends up in the most advanced terminal slot.
    `t_M` maps each vehicle to its merge step index.
    """

    sequence: tuple[int, ...]
    S: dict[int, int]
    t_M: dict[int, int]
    front_before: dict[int, int | None]
    front_after: dict[int, int | None]
    led_before: dict[int, int | None]
    led_after: dict[int, int | None]

    def front_at(self, vehicle: int, step: int) -> int | None:
        """Active front vehicle of `vehicle` at 1-based step `step`."""
        if step <= self.t_M[vehicle]:
            return self.front_before[vehicle]
        return self.front_after[vehicle]


def assign_merge_order(vehicles: list[VehicleSpec], params: Params) -> MergeSchedule:
    """Closest-to-merge-first ordering with ties broken main-road-first, then id.

    The rank S is assigned from the rear (rearmost vehicle gets S=1) so that
    t_M = T_P1 - c1*(S-1) - c0 gives the first merger the earliest merge step
    and the most advanced terminal slot; any other assignment makes the
    average-speed windows unreachable for the trailing vehicles.
    """
    if not vehicles:
        raise ScenarioError("at least one vehicle is required")
    n = len(vehicles)
    lane_rank = {"main": 0, "ramp": 1}
    sequence = tuple(
        v.id for v in sorted(vehicles, key=lambda v: (-v.s0, lane_rank.get(v.lane, 2), v.id))
    )
    S = {vid: n - idx for idx, vid in enumerate(sequence)}
    t_M = {}
    for vid, rank in S.items():
        t = params.T_P1 - params.c1_steps * (rank - 1) - params.c0_steps
        if not 0 < t <= params.T_P1:
            raise ScenarioError(
                f"merge step {t} for vehicle {vid} falls outside the planning horizon; "
                f"reduce N or the c0/c1 spacing"
            )
        t_M[vid] = t

    by_id = {v.id: v for v in vehicles}
    front_before: dict[int, int | None] = {}
    led_before: dict[int, int | None] = {v.id: None for v in vehicles}
    for lane in {v.lane for v in vehicles}:
        members = sorted((v for v in vehicles if v.lane == lane), key=lambda v: (-v.s0, v.id))
        for pos, v in enumerate(members):
            front_before[v.id] = members[pos - 1].id if pos > 0 else None
    for vid, front in front_before.items():
        if front is not None:
            led_before[front] = vid

    by_rank = {rank: vid for vid, rank in S.items()}
    front_after = {vid: by_rank.get(rank + 1) for vid, rank in S.items()}
    led_after = {vid: by_rank.get(rank - 1) for vid, rank in S.items()}
    assert all(by_id[v].id == v for v in sequence)
    return MergeSchedule(
        sequence=sequence,
        S=S,
        t_M=t_M,
        front_before=front_before,
        front_after=front_after,
        led_before=led_before,
        led_after=led_after,
    )


def terminal_bounds(schedule: MergeSchedule, params: Params, vehicle: int) -> tuple[float, float]:
    """Terminal-position slot [lower, upper] for the given vehicle."""
    rank = schedule.S[vehicle]
    base = params.L1 + params.L2
    return base + (rank - 1) * params.L_f, base + rank * params.L_f


def avg_speed_bounds(s0: float, params: Params) -> tuple[float, float]:
    """Bounds on the speed sum over the pre-merge window (reach P, stay short of Q)."""
    return (params.L1 - s0) / params.T_s, (params.L1 + params.L2 - s0) / params.T_s


def map_to_2d(s_seq: np.ndarray, curve: LaneCurve, T_s: float) -> np.ndarray:
    """Map a longitudinal position sequence onto the lane curve.

    Returns an (K, 4) array of [x, y, heading, speed]; speeds come from
    forward differences of s (the last step repeats the previous speed).
    """
    s_seq = np.asarray(s_seq, dtype=float)
    if s_seq.ndim != 1 or len(s_seq) == 0:
        raise ScenarioError("s sequence must be a nonempty 1-D array")
    if np.any(np.diff(s_seq) < -1e-9):
        raise ScenarioError("s sequence must be non-decreasing")
    if s_seq[0] < -1e-9 or s_seq[-1] > curve.length + 1e-9:
        raise ScenarioError(
            f"s range [{s_seq[0]}, {s_seq[-1]}] exceeds the curve length {curve.length}"
        )
    out = np.zeros((len(s_seq), 4))
    for k, s in enumerate(s_seq):
        out[k, 0:2] = curve.point_at(float(s))
        out[k, 2] = curve.heading_at(float(s))
    if len(s_seq) > 1:
        out[:-1, 3] = np.diff(s_seq) / T_s
        out[-1, 3] = out[-2, 3]
    # keep headings unwrapped along the sequence
    out[:, 2] = np.unwrap(out[:, 2])
    return out


@dataclass
class ScenarioConfig:
    """A fully reproducible scenario: kind, parameters, and spawned vehicles."""

    kind: str
    seed: int
    params: Params
    vehicles: list[VehicleSpec] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.vehicles)

    def lane_curves(self) -> dict[int, LaneCurve]:
        """Lane-center curve per vehicle, derived deterministically from params."""
        if self.kind == "ramp":
            curves = ramp_lane_curves(self.params, self.n)
            return {v.id: curves[v.lane] for v in self.vehicles}
        if self.kind in ("t_junction", "crossroads"):
            approach = APPROACH_LENGTH[self.kind]
            return {
                v.id: junction_lane(v.lane, v.turn, self.params, approach, EXIT_LENGTH)
                for v in self.vehicles
            }
        raise ScenarioError(f"unknown scenario kind {self.kind!r}")

    def initial_bicycle_states(self) -> dict[int, np.ndarray]:
        curves = self.lane_curves()
        out = {}
        for v in self.vehicles:
            curve = curves[v.id]
            x, y = curve.point_at(v.s0)
            out[v.id] = np.array([x, y, curve.heading_at(v.s0), v.v0])
        return out

    def to_json(self) -> str:
        doc = {
            "version": SCHEMA_VERSION,
            "kind": self.kind,
            "seed": self.seed,
            "params": self.params.to_dict(),
            "vehicles": [
                {"id": v.id, "lane": v.lane, "s0": v.s0, "v0": v.v0, "turn": v.turn}
                for v in self.vehicles
            ],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"invalid scenario JSON: {exc}") from exc
        if doc.get("version") != SCHEMA_VERSION:
            raise ScenarioError(f"unsupported scenario schema version {doc.get('version')!r}")
        try:
            params = Params.from_dict(doc["params"])
            vehicles = [
                VehicleSpec(id=v["id"], lane=v["lane"], s0=v["s0"], v0=v["v0"], turn=v.get("turn"))
                for v in doc["vehicles"]
            ]
            cfg = cls(kind=doc["kind"], seed=doc["seed"], params=params, vehicles=vehicles)
        except (KeyError, TypeError) as exc:
            raise ScenarioError(f"malformed scenario document: {exc}") from exc
        cfg.validate()
        return cfg

    def validate(self) -> None:
        self.params.validate()
        if self.kind not in ("ramp", "t_junction", "crossroads"):
            raise ScenarioError(f"unknown scenario kind {self.kind!r}")
        ids = [v.id for v in self.vehicles]
        if len(set(ids)) != len(ids):
            raise ScenarioError("vehicle ids must be unique")
        for v in self.vehicles:
            if v.v0 < 0:
                raise ScenarioError(f"vehicle {v.id} has negative initial speed")
        if self.kind == "ramp":
            for lane in RAMP_LANES:
                members = sorted((v for v in self.vehicles if v.lane == lane), key=lambda v: v.s0)
                for a, b in zip(members, members[1:]):
                    if b.s0 - a.s0 < self.params.d_S1 - 1e-9:
                        raise ScenarioError(
                            f"initial gap between vehicles {a.id} and {b.id} below d_S1"
                        )


# road construction ----------------------------------------------------------

APPROACH_LENGTH = {"t_junction": 60.0, "crossroads": 90.0}
EXIT_LENGTH = 150.0
RAMP_TAIL = 120.0


def ramp_lane_curves(params: Params, n: int) -> dict[str, LaneCurve]:
    exit_len = params.L2 + max(n, 1) * params.L_f + RAMP_TAIL
    main = LaneCurve(
        [LineSegment(start=(0.0, 0.0), heading=math.pi / 2, length=params.L1 + exit_len)]
    )
    ramp = fillet_merge_lane(
        merge_point=(0.0, params.L1),
        main_heading=math.pi / 2,
        approach_angle=params.ramp_angle,
        fillet_radius=params.fillet_radius,
        approach_length=params.L1,
        exit_length=exit_len,
    )
    return {"main": main, "ramp": ramp}


def _rotate(point: tuple[float, float], angle: float) -> tuple[float, float]:
    c, s = math.cos(angle), math.sin(angle)
    return (c * point[0] - s * point[1], s * point[0] + c * point[1])


def _rotate_curve(curve: LaneCurve, angle: float) -> LaneCurve:
    segments = []
    for seg in curve.segments:
        if isinstance(seg, LineSegment):
            segments.append(
                LineSegment(start=_rotate(seg.start, angle), heading=seg.heading + angle, length=seg.length)
            )
        elif isinstance(seg, ArcSegment):
            segments.append(
                ArcSegment(
                    center=_rotate(seg.center, angle),
                    radius=seg.radius,
                    entry_heading=seg.entry_heading + angle,
                    turn=seg.turn,
                )
            )
        else:  # pragma: no cover
            raise TypeError(f"unknown segment type {type(seg)!r}")
    return LaneCurve(segments)


def junction_lane(road: str, turn: str | None, params: Params, approach: float, exit_len: float) -> LaneCurve:
    """Lane curve through the junction for one approach road and turn choice.

    Built in the canonical frame of a west approach (heading +x, right lane at
    y = -w/2) and rotated to the requested road. Right turns use radius w,
    left turns 2w, so both arcs start the same distance before the box.
    """
    if road not in ROAD_HEADINGS:
        raise ScenarioError(f"unknown road {road!r}")
    if turn not in TURN_ANGLES:
        raise ScenarioError(f"unknown turn {turn!r}")
    w = params.lane_width
    offset = w / 2
    angle = TURN_ANGLES[turn]
    # with right radius w and left radius 2w, both arcs are tangent to the lane
    # center lines exactly 2w - w/2 before and after the box center
    reach = 2 * w - offset
    start = (-approach - reach, -offset)
    if turn == "straight":
        canonical = LaneCurve(
            [LineSegment(start=start, heading=0.0, length=approach + 2 * reach + exit_len)]
        )
    else:
        radius = 2 * w if turn == "left" else w
        canonical = turn_lane(
            approach_start=start,
            approach_heading=0.0,
            approach_length=approach,
            turn=angle,
            turn_radius=radius,
            exit_length=exit_len,
        )
    return _rotate_curve(canonical, ROAD_HEADINGS[road])


# randomized construction ----------------------------------------------------


def _spawn_line(rng: np.random.Generator, count: int, span: float, gap_lo: float, gap_hi: float, lead_margin: float) -> list[float]:
    """Positions for one lane: lead vehicle near the top of `span`, followers
    spaced by uniform gaps, all within [0, span]. Gap vectors that do not fit
    are redrawn; infeasible packings are rejected outright."""
    if count == 0:
        return []
    if (count - 1) * gap_lo + lead_margin > span:
        raise ScenarioError(
            f"cannot place {count} vehicles with {gap_lo} m gaps inside {span} m"
        )
    for _ in range(1000):
        lead = span - lead_margin * rng.uniform()
        gaps = rng.uniform(gap_lo, gap_hi, size=count - 1)
        positions = lead - np.concatenate([[0.0], np.cumsum(gaps)])
        if positions[-1] >= 0.0:
            return [float(p) for p in positions]
    raise ScenarioError("failed to place vehicles after 1000 attempts")


def make_scenario(kind: str, n: int | None = None, seed: int = 0, params: Params | None = None) -> ScenarioConfig:
    """Build a deterministic randomized scenario of the requested kind."""
    params = params or Params()
    params.validate()
    rng = np.random.default_rng(seed)
    vehicles: list[VehicleSpec] = []
    if kind == "ramp":
        n = 10 if n is None else n
        if n < 1:
            raise ScenarioError("ramp scenario needs at least one vehicle")
        n_main = (n + 1) // 2
        n_ramp = n - n_main
        vid = 0
        for lane, count in (("main", n_main), ("ramp", n_ramp)):
            positions = _spawn_line(rng, count, span=100.0, gap_lo=15.0, gap_hi=25.0, lead_margin=5.0)
            speeds = rng.uniform(40.0, 72.0, size=count) / 3.6
            for pos, v in zip(positions, speeds):
                vehicles.append(VehicleSpec(id=vid, lane=lane, s0=pos, v0=float(v)))
                vid += 1
    elif kind == "t_junction":
        if n not in (None, 3):
            raise ScenarioError("the T-junction preset has exactly 3 vehicles")
        plan = [("W", "straight"), ("E", "left"), ("S", "left")]
        approach = APPROACH_LENGTH[kind]
        for vid, (road, turn) in enumerate(plan):
            dist = rng.uniform(25.0, 40.0)
            speed = rng.uniform(6.0, 9.0)
            vehicles.append(
                VehicleSpec(id=vid, lane=road, s0=approach - dist, v0=float(speed), turn=turn)
            )
    elif kind == "crossroads":
        if n not in (None, 12):
            raise ScenarioError("the crossroads preset has exactly 12 vehicles")
        approach = APPROACH_LENGTH[kind]
        lead_base = {"W": 12.0, "S": 18.0, "E": 24.0, "N": 30.0}
        vid = 0
        for road in ("W", "S", "E", "N"):
            lead = lead_base[road] + rng.uniform(0.0, 4.0)
            dists = lead + np.concatenate([[0.0], np.cumsum(rng.uniform(15.0, 25.0, size=2))])
            for dist in dists:
                turn = str(rng.choice(["left", "straight", "right"]))
                speed = rng.uniform(6.0, 9.0)
                vehicles.append(
                    VehicleSpec(id=vid, lane=road, s0=approach - float(dist), v0=float(speed), turn=turn)
                )
                vid += 1
    else:
        raise ScenarioError(f"unknown scenario kind {kind!r}")
    cfg = ScenarioConfig(kind=kind, seed=seed, params=params, vehicles=vehicles)
    cfg.validate()
    return cfg
