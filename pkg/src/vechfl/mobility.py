"""Vehicle trajectories on a wrap-around grid of roads, coverage dwell times,
and the vehicle-to-edge data rate.

Roads are axis-aligned lines ``x = xs[i]`` (vertical) and ``y = ys[i]``
(horizontal) on a ``width x height`` torus, so a vehicle that leaves one side
re-enters on the opposite side. Every crossing of a vertical and a horizontal
road is an intersection; on arrival there a vehicle picks uniformly among the
directions other than a U-turn, using its own seeded stream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .config import EdgeServerSpec, VehicleSpec

_EPS = 1e-9
# turn choices are drawn over this fixed order, minus the U-turn
_DIRECTIONS = ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))
DEFAULT_HORIZON = 1e6


class NotCoveredError(ValueError):
    """The vehicle is outside the edge server's coverage at the query time."""


@dataclass(frozen=True)
class RoadNetwork:
    width: float = 4000.0
    height: float = 4000.0
    xs: tuple[float, ...] = (1000.0, 3000.0)  # vertical roads
    ys: tuple[float, ...] = (1000.0, 3000.0)  # horizontal roads

    def __post_init__(self):
        object.__setattr__(self, "xs", tuple(float(x) for x in self.xs))
        object.__setattr__(self, "ys", tuple(float(y) for y in self.ys))

    @property
    def intersections(self) -> list[tuple[float, float]]:
        return [(x, y) for x in self.xs for y in self.ys]

    def on_vertical(self, p, tol: float = 1e-6) -> bool:
        return any(abs(p[0] - x) <= tol for x in self.xs) and 0.0 <= p[1] <= self.height

    def on_horizontal(self, p, tol: float = 1e-6) -> bool:
        return any(abs(p[1] - y) <= tol for y in self.ys) and 0.0 <= p[0] <= self.width

    def on_road(self, p, tol: float = 1e-6) -> bool:
        return self.on_vertical(p, tol) or self.on_horizontal(p, tol)

    def heading_ok(self, p, heading, tol: float = 1e-6) -> bool:
        """Heading is a unit axis direction along a road through ``p``."""
        hx, hy = heading
        if (abs(hx), abs(hy)) == (1.0, 0.0):
            return self.on_horizontal(p, tol)
        if (abs(hx), abs(hy)) == (0.0, 1.0):
            return self.on_vertical(p, tol)
        return False


@dataclass(frozen=True)
class ChannelParams:
    bandwidth: float = 2e6  # Hz
    snr_ref: float = 1e9  # SNR at 1 m
    pathloss_exponent: float = 3.0


def v2e_rate(vehicle_pos, es: "EdgeServerSpec", ch: ChannelParams) -> float:
    """Shannon rate ``B log2(1 + SNR_ref / d^gamma)`` with ``d`` clamped to 1 m."""
    d = math.hypot(vehicle_pos[0] - es.position[0], vehicle_pos[1] - es.position[1])
    d = max(d, 1.0)
    return ch.bandwidth * math.log2(1.0 + ch.snr_ref / d ** ch.pathloss_exponent)


@dataclass
class _Segment:
    t0: float
    x0: float
    y0: float
    hx: float
    hy: float
    duration: float
    # deferred turn at the end of this segment; False for a wrap split
    ends_at_intersection: bool = True


class Trajectory:
    """Lazily generated piecewise-linear path of one vehicle.

    Turn decisions consume ``rng`` in the order intersections are reached,
    so the path is a pure function of the vehicle and the stream seed.
    """

    def __init__(self, vehicle: "VehicleSpec", net: RoadNetwork, rng: np.random.Generator):
        self.net = net
        self.speed = float(vehicle.speed)
        self.rng = rng
        self._segments: list[_Segment] = []
        x, y = (float(c) for c in vehicle.initial_position)
        self._pos = (x % net.width if x != net.width else x, y % net.height if y != net.height else y)
        self._heading = (float(vehicle.heading[0]), float(vehicle.heading[1]))
        self._t = 0.0
        if self.speed <= 0:
            self._segments.append(_Segment(0.0, *self._pos, *self._heading, math.inf, False))

    # -- generation -------------------------------------------------------
    def _distance_to_stop(self, x, y, hx, hy) -> tuple[float, bool]:
        """Distance to the next intersection or to the area boundary."""
        net = self.net
        if hx:
            coord, size, stops = x, net.width, net.xs
            h = hx
        else:
            coord, size, stops = y, net.height, net.ys
            h = hy
        best = math.inf
        for s in stops:
            d = (s - coord) * h
            if d > _EPS and d < best:
                best = d
        to_edge = (size - coord) if h > 0 else coord
        if to_edge <= _EPS:
            to_edge = size  # sitting on the seam; next stop is a full lap away
        if best <= to_edge + _EPS and best < math.inf:
            return best, True
        return to_edge, False

    def _extend(self) -> None:
        x, y = self._pos
        hx, hy = self._heading
        dist, at_intersection = self._distance_to_stop(x, y, hx, hy)
        seg = _Segment(self._t, x, y, hx, hy, dist / self.speed, at_intersection)
        self._segments.append(seg)
        self._t += seg.duration
        nx, ny = x + hx * dist, y + hy * dist
        if at_intersection:
            # snap onto the crossing road to avoid drift
            if hx:
                nx = min(self.net.xs, key=lambda s: abs(s - nx))
            else:
                ny = min(self.net.ys, key=lambda s: abs(s - ny))
            options = [d for d in _DIRECTIONS if d != (-hx, -hy)]
            choice = int(self.rng.integers(len(options)))
            self._heading = options[choice]
        else:
            # wrap to the opposite side
            if hx > 0:
                nx = 0.0
            elif hx < 0:
                nx = self.net.width
            elif hy > 0:
                ny = 0.0
            else:
                ny = self.net.height
        self._pos = (nx, ny)

    def segments_until(self, t: float) -> list[_Segment]:
        while not self._segments or self._segments[-1].t0 + self._segments[-1].duration < t:
            self._extend()
        return self._segments

    def _segment_at(self, t: float) -> _Segment:
        segs = self.segments_until(t)
        lo, hi = 0, len(segs) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if segs[mid].t0 <= t:
                lo = mid
            else:
                hi = mid - 1
        return segs[lo]

    def position(self, t: float) -> tuple[float, float]:
        if t < 0:
            raise ValueError("t must be >= 0")
        seg = self._segment_at(t)
        s = min(t - seg.t0, seg.duration) * self.speed
        return (seg.x0 + seg.hx * s, seg.y0 + seg.hy * s)

    def exit_time(self, center, radius: float, t0: float, horizon: float = DEFAULT_HORIZON) -> float:
        """First time after ``t0`` at which the vehicle is farther than
        ``radius`` from ``center``; ``t0 + horizon`` if it never leaves."""
        cx, cy = center
        p = self.position(t0)
        if math.hypot(p[0] - cx, p[1] - cy) > radius + 1e-9:
            raise NotCoveredError(f"vehicle at {p} is outside radius {radius} of {center}")
        if self.speed <= 0:
            return t0 + horizon
        i = self._segments.index(self._segment_at(t0))
        t_end = t0 + horizon
        while True:
            while i >= len(self._segments):
                self._extend()
            seg = self._segments[i]
            if seg.t0 > t_end:
                return t_end
            start = max(t0, seg.t0)
            s0 = (start - seg.t0) * self.speed
            px, py = seg.x0 + seg.hx * s0, seg.y0 + seg.hy * s0
            dx, dy = px - cx, py - cy
            c = dx * dx + dy * dy - radius * radius
            if c > 1e-6:
                return start  # entered this piece already outside (wrap jump)
            b = dx * seg.hx + dy * seg.hy
            disc = b * b - c
            root = -b + math.sqrt(max(disc, 0.0))  # distance to leave the disk
            remaining = seg.duration * self.speed - s0
            if root <= remaining:
                return min(start + root / self.speed, t_end)
            i += 1


def position_at(vehicle: "VehicleSpec", net: RoadNetwork, t: float, rng: np.random.Generator):
    """Position of ``vehicle`` at time ``t`` on a trajectory driven by ``rng``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return Trajectory(vehicle, net, rng).position(t)


def dwell_time(vehicle: "VehicleSpec", es: "EdgeServerSpec", net: RoadNetwork, t0: float,
               rng: np.random.Generator, horizon: float = DEFAULT_HORIZON) -> float:
    """Time the vehicle stays inside ``es`` coverage starting from ``t0``."""
    traj = Trajectory(vehicle, net, rng)
    return traj.exit_time(es.position, es.coverage_radius, t0, horizon) - t0


def associate(pos, edge_servers: Sequence["EdgeServerSpec"]) -> Optional[int]:
    """Id of the nearest covering edge server (lowest id on ties), or None."""
    best, best_d = None, math.inf
    for es in sorted(edge_servers, key=lambda e: e.id):
        d = math.hypot(pos[0] - es.position[0], pos[1] - es.position[1])
        if d <= es.coverage_radius + 1e-9 and d < best_d - 1e-12:
            best, best_d = es.id, d
    return best


@dataclass
class Mobility:
    """Trajectory cache for every vehicle of a configuration.

    Each vehicle draws turns from its own ``(seed, "mobility", id)`` stream.
    """

    vehicles: Sequence["VehicleSpec"]
    net: RoadNetwork
    seed: int
    _traj: dict = field(default_factory=dict, repr=False)

    def trajectory(self, n: int) -> Trajectory:
        tr = self._traj.get(n)
        if tr is None:
            from ._rng import stream

            veh = next(v for v in self.vehicles if v.id == n)
            tr = Trajectory(veh, self.net, stream(self.seed, "mobility", n))
            self._traj[n] = tr
        return tr

    def position(self, n: int, t: float):
        return self.trajectory(n).position(t)

    def dwell(self, n: int, es: "EdgeServerSpec", t0: float, horizon: float = DEFAULT_HORIZON) -> float:
        return self.trajectory(n).exit_time(es.position, es.coverage_radius, t0, horizon) - t0
