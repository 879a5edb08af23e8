"""Lane-center curves: piecewise line/arc paths, parameterized exactly by arc
length so a planned longitudinal position maps straight onto a 2-D pose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LineSegment:
    start: tuple[float, float]
    heading: float
    length: float

    def point(self, s: float) -> tuple[float, float]:
        return (
            self.start[0] + s * math.cos(self.heading),
            self.start[1] + s * math.sin(self.heading),
        )

    def tangent(self, s: float) -> float:
        return self.heading


@dataclass(frozen=True)
class ArcSegment:
    """Circular arc traversed at unit speed; turn > 0 bends left, < 0 right."""

    center: tuple[float, float]
    radius: float
    entry_heading: float
    turn: float  # signed sweep angle (rad)

    @property
    def length(self) -> float:
        return self.radius * abs(self.turn)

    def point(self, s: float) -> tuple[float, float]:
        frac = s / self.length if self.length > 0 else 0.0
        heading = self.entry_heading + self.turn * frac
        side = 1.0 if self.turn > 0 else -1.0
        # position = center + R * (unit vector from center), which is the
        # entry radius vector rotated by the swept angle
        ang = heading - side * math.pi / 2
        return (
            self.center[0] + self.radius * math.cos(ang),
            self.center[1] + self.radius * math.sin(ang),
        )

    def tangent(self, s: float) -> float:
        frac = s / self.length if self.length > 0 else 0.0
        return self.entry_heading + self.turn * frac


class LaneCurve:
    """Concatenated segments forming one lane center, C1 at the joints."""

    def __init__(self, segments: list):
        if not segments:
            raise ValueError("a lane curve needs at least one segment")
        self.segments = list(segments)
        lengths = np.array([seg.length for seg in self.segments], dtype=float)
        if np.any(lengths <= 0):
            raise ValueError("all segments must have positive length")
        self.breaks = np.concatenate([[0.0], np.cumsum(lengths)])
        self.length = float(self.breaks[-1])

    def _locate(self, s: float) -> tuple[int, float]:
        if s < -1e-9 or s > self.length + 1e-9:
            raise ValueError(f"arc length {s!r} outside curve [0, {self.length}]")
        s = min(max(s, 0.0), self.length)
        idx = int(np.searchsorted(self.breaks, s, side="right") - 1)
        idx = min(idx, len(self.segments) - 1)
        return idx, s - self.breaks[idx]

    def point_at(self, s: float) -> tuple[float, float]:
        idx, local = self._locate(s)
        return self.segments[idx].point(local)

    def heading_at(self, s: float) -> float:
        idx, local = self._locate(s)
        return self.segments[idx].tangent(local)

    def points_at(self, s_values: np.ndarray) -> np.ndarray:
        return np.array([self.point_at(float(s)) for s in s_values])


def straight_lane(start: tuple[float, float], heading: float, length: float) -> LaneCurve:
    return LaneCurve([LineSegment(start=start, heading=heading, length=length)])


def line_to(a: tuple[float, float], b: tuple[float, float]) -> LineSegment:
    dx, dy = b[0] - a[0], b[1] - a[1]
    return LineSegment(start=a, heading=math.atan2(dy, dx), length=math.hypot(dx, dy))


def fillet_merge_lane(
    merge_point: tuple[float, float],
    main_heading: float,
    approach_angle: float,
    fillet_radius: float,
    approach_length: float,
    exit_length: float,
) -> LaneCurve:
    """Ramp lane: straight approach, a single fillet arc tangent to the main
    lane at `merge_point`, then straight along the main direction.

    The approach runs at `main_heading + approach_angle`; a positive angle
    puts the ramp on the right-hand side of the main lane (clockwise fillet).
    """
    if fillet_radius <= 0 or approach_angle <= 0:
        raise ValueError("fillet radius and approach angle must be positive")
    arc_len = fillet_radius * approach_angle
    if arc_len >= approach_length:
        raise ValueError("fillet arc longer than the available approach")
    # clockwise turn (right-hand merge): center sits to the right of travel
    side_heading = main_heading - math.pi / 2
    center = (
        merge_point[0] + fillet_radius * math.cos(side_heading),
        merge_point[1] + fillet_radius * math.sin(side_heading),
    )
    entry_heading = main_heading + approach_angle
    # arc entry point: radius vector at entry, for a right turn the center is
    # at entry_heading - pi/2 from the point
    ang = entry_heading - math.pi / 2 + math.pi
    arc_start = (
        center[0] + fillet_radius * math.cos(ang),
        center[1] + fillet_radius * math.sin(ang),
    )
    straight_len = approach_length - arc_len
    approach_start = (
        arc_start[0] - straight_len * math.cos(entry_heading),
        arc_start[1] - straight_len * math.sin(entry_heading),
    )
    segments = [
        LineSegment(start=approach_start, heading=entry_heading, length=straight_len),
        ArcSegment(center=center, radius=fillet_radius, entry_heading=entry_heading, turn=-approach_angle),
        LineSegment(start=merge_point, heading=main_heading, length=exit_length),
    ]
    return LaneCurve(segments)


def turn_lane(
    approach_start: tuple[float, float],
    approach_heading: float,
    approach_length: float,
    turn: float,
    turn_radius: float,
    exit_length: float,
) -> LaneCurve:
    """Junction lane: straight approach, one turning arc, straight exit.

    turn is the signed heading change through the junction (0 for straight).
    """
    segments: list = [LineSegment(start=approach_start, heading=approach_heading, length=approach_length)]
    end = segments[0].point(approach_length)
    if abs(turn) > 1e-12:
        side = 1.0 if turn > 0 else -1.0
        center = (
            end[0] + turn_radius * math.cos(approach_heading + side * math.pi / 2),
            end[1] + turn_radius * math.sin(approach_heading + side * math.pi / 2),
        )
        arc = ArcSegment(center=center, radius=turn_radius, entry_heading=approach_heading, turn=turn)
        segments.append(arc)
        end = arc.point(arc.length)
    exit_heading = approach_heading + turn
    segments.append(LineSegment(start=end, heading=exit_heading, length=exit_length))
    return LaneCurve(segments)
