# envsim/roads.py
"""
Lane geometry and the road network of each task.

Lanes map world points to (s, lateral) coordinates: s runs along the lane,
lateral is positive to the left of the travel direction. Every method
accepts scalars or numpy arrays.
"""
import math

import numpy as np

LANE_WIDTH = 4.0


def wrap_angle(angle):
    """Wrap to (-pi, pi]."""
    wrapped = np.mod(np.asarray(angle, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    wrapped = np.where(wrapped <= -np.pi, wrapped + 2.0 * np.pi, wrapped)
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


class StraightLane:

    def __init__(self, lane_id, start, end, width=LANE_WIDTH):
        self.lane_id = lane_id
        self.start = np.asarray(start, dtype=float)
        self.end = np.asarray(end, dtype=float)
        self.width = width
        delta = self.end - self.start
        self.length = float(np.hypot(*delta))
        self.direction = delta / self.length
        self.left = np.array([-self.direction[1], self.direction[0]])
        self.heading = math.atan2(self.direction[1], self.direction[0])

    def position(self, s, lateral):
        return self.start + s * self.direction + lateral * self.left

    def heading_at(self, s):
        return self.heading

    def local_coordinates(self, x, y):
        dx = np.asarray(x, dtype=float) - self.start[0]
        dy = np.asarray(y, dtype=float) - self.start[1]
        s = dx * self.direction[0] + dy * self.direction[1]
        lateral = dx * self.left[0] + dy * self.left[1]
        return s, lateral


class CircularLane:
    """Counter-clockwise arc from start_phase to end_phase around `center`."""

    def __init__(self, lane_id, center, radius, start_phase, end_phase, width=LANE_WIDTH):
        self.lane_id = lane_id
        self.center = np.asarray(center, dtype=float)
        self.radius = radius
        self.start_phase = start_phase
        self.span = (end_phase - start_phase) % (2.0 * math.pi) or 2.0 * math.pi
        self.width = width
        self.length = self.radius * self.span

    def position(self, s, lateral):
        phase = self.start_phase + s / self.radius
        r = self.radius - lateral
        return self.center + r * np.array([math.cos(phase), math.sin(phase)])

    def heading_at(self, s):
        return wrap_angle(self.start_phase + s / self.radius + math.pi / 2.0)

    def local_coordinates(self, x, y):
        dx = np.asarray(x, dtype=float) - self.center[0]
        dy = np.asarray(y, dtype=float) - self.center[1]
        phase = np.arctan2(dy, dx)
        mid = self.start_phase + self.span / 2.0
        # angular offset measured from the arc middle so s is continuous across the arc
        delta = np.mod(phase - mid + np.pi, 2.0 * np.pi) - np.pi + self.span / 2.0
        s = delta * self.radius
        lateral = self.radius - np.hypot(dx, dy)
        return s, lateral


def contains(lane, x, y, margin=0.0):
    s, lateral = lane.local_coordinates(x, y)
    return (np.abs(lateral) <= lane.width / 2.0 + margin) & (s >= -margin) & (s <= lane.length + margin)


class Road:
    """
    Lane network of one task.

    `successors` maps a lane to its next lane, optionally keyed by the exit
    arm a vehicle is heading for; `neighbours` maps a lane to its
    (left, right) parallel lanes.
    """

    def __init__(self, task, lanes, successors=None, neighbours=None, main_lanes=(), exits=None, ramp_lane=None):
        self.task = task
        self.lanes = {lane.lane_id: lane for lane in lanes}
        self.successors = successors or {}
        self.neighbours = neighbours or {}
        self.main_lanes = tuple(main_lanes)
        self.exits = exits or {}
        self.ramp_lane = ramp_lane

    def lane(self, lane_id):
        return self.lanes[lane_id]

    def next_lane(self, lane_id, exit_arm=None):
        nxt = self.successors.get(lane_id)
        if isinstance(nxt, dict):
            return nxt.get(exit_arm, nxt.get(None))
        return nxt

    def neighbour(self, lane_id, side):
        """Lane to the 'left' or 'right' of lane_id, or None."""
        left, right = self.neighbours.get(lane_id, (None, None))
        return left if side == 'left' else right

    def closest_lane(self, x, y, candidates=None):
        best, best_dist = None, float('inf')
        for lane_id in candidates or self.lanes:
            lane = self.lanes[lane_id]
            s, lateral = lane.local_coordinates(x, y)
            s_out = max(0.0, -float(s), float(s) - lane.length)
            dist = abs(float(lateral)) + s_out
            if dist < best_dist:
                best, best_dist = lane_id, dist
        return best

    def on_road(self, x, y, margin=0.5):
        inside = np.zeros(np.shape(x), dtype=bool)
        for lane in self.lanes.values():
            inside |= contains(lane, x, y, margin)
        return inside


def highway_road(lanes_count, length=6000.0, start=-200.0):
    lanes = [StraightLane(i, (start, -LANE_WIDTH * i), (start + length, -LANE_WIDTH * i))
             for i in range(lanes_count)]
    neighbours = {i: (i - 1 if i > 0 else None, i + 1 if i < lanes_count - 1 else None)
                  for i in range(lanes_count)}
    return Road('highway', lanes, neighbours=neighbours, main_lanes=range(lanes_count))


MERGE_RAMP_END = 200.0
MERGE_ROAD_LENGTH = 600.0


def merge_road(main_lanes=2, ramp_end=MERGE_RAMP_END, length=MERGE_ROAD_LENGTH):
    """Main road lanes 0..main_lanes-1 along +x with an acceleration ramp on the right."""
    lanes = [StraightLane(i, (0.0, -LANE_WIDTH * i), (length, -LANE_WIDTH * i)) for i in range(main_lanes)]
    ramp_id = main_lanes
    lanes.append(StraightLane(ramp_id, (0.0, -LANE_WIDTH * ramp_id), (ramp_end, -LANE_WIDTH * ramp_id)))
    neighbours = {i: (i - 1 if i > 0 else None, i + 1) for i in range(main_lanes)}
    neighbours[main_lanes - 1] = (main_lanes - 2 if main_lanes > 1 else None, ramp_id)
    neighbours[ramp_id] = (main_lanes - 1, None)
    return Road('merge', lanes, neighbours=neighbours, main_lanes=range(main_lanes), ramp_lane=ramp_id)


ROUNDABOUT_RADIUS = 20.0
ARM_LENGTH = 80.0
# arm k meets the ring at this phase; arcs run counter-clockwise from arm k to arm k+1
ARM_PHASES = (-math.pi / 2.0, 0.0, math.pi / 2.0, math.pi)
ENTRY_BASE, EXIT_BASE, OUTER_BASE, INNER_BASE = 10, 20, 30, 40


def roundabout_road(radius=ROUNDABOUT_RADIUS, arm_length=ARM_LENGTH):
    """
    Two-lane counter-clockwise ring with four arms.

    Entry lanes run inward on the right-hand side of each arm, exit lanes
    outward; vehicles leave the ring from the outer lane only.
    """
    inner_radius = radius - LANE_WIDTH
    lanes, successors, neighbours = [], {}, {}
    for k, phase in enumerate(ARM_PHASES):
        nxt = ARM_PHASES[(k + 1) % 4]
        lanes.append(CircularLane(OUTER_BASE + k, (0.0, 0.0), radius, phase, nxt))
        lanes.append(CircularLane(INNER_BASE + k, (0.0, 0.0), inner_radius, phase, nxt))
        neighbours[OUTER_BASE + k] = (INNER_BASE + k, None)
        neighbours[INNER_BASE + k] = (None, OUTER_BASE + k)

        outward = np.array([math.cos(phase), math.sin(phase)])
        inward = -outward
        # right-hand side of travel direction d is (d_y, -d_x)
        entry_offset = np.array([inward[1], -inward[0]]) * (LANE_WIDTH / 2.0)
        exit_offset = np.array([outward[1], -outward[0]]) * (LANE_WIDTH / 2.0)
        edge = radius + LANE_WIDTH / 2.0
        lanes.append(StraightLane(ENTRY_BASE + k, outward * (edge + arm_length) + entry_offset,
                                  outward * edge + entry_offset))
        lanes.append(StraightLane(EXIT_BASE + k, outward * edge + exit_offset,
                                  outward * (edge + arm_length) + exit_offset))
        successors[ENTRY_BASE + k] = OUTER_BASE + k

    for k in range(4):
        arrive = (k + 1) % 4
        successors[OUTER_BASE + k] = {arrive: EXIT_BASE + arrive, None: OUTER_BASE + arrive}
        successors[INNER_BASE + k] = INNER_BASE + arrive
    exits = {k: EXIT_BASE + k for k in range(4)}
    return Road('roundabout', lanes, successors=successors, neighbours=neighbours, exits=exits)


def build_road(task, lanes_count):
    if task == 'highway':
        return highway_road(lanes_count)
    if task == 'merge':
        return merge_road(lanes_count)
    return roundabout_road()
