# envsim/vehicles.py
"""
Vehicle state, kinematic bicycle update, collision test and the scripted
low-level controllers shared by traffic and the discrete-action ego.
"""
import math
from dataclasses import dataclass

import numpy as np

from .roads import wrap_angle

VEHICLE_LENGTH = 5.0
VEHICLE_WIDTH = 2.0

# Lane-tracking controller gains
TAU_LATERAL = 0.6
TAU_HEADING = 0.2
TAU_SPEED = 0.6

# Intelligent-driver-model parameters for traffic
IDM_COMFORT_ACC = 3.0
IDM_COMFORT_DEC = 5.0
IDM_DISTANCE_WANTED = 5.0
IDM_TIME_WANTED = 1.5
IDM_DELTA = 4.0

PERCEPTION_RANGE = 60.0


@dataclass
class VehicleState:
    x: float
    y: float
    heading: float
    speed: float
    length: float = VEHICLE_LENGTH
    width: float = VEHICLE_WIDTH
    lane_id: int = 0
    vehicle_id: int = 0
    target_lane: int = 0
    target_speed: float = 25.0
    exit_arm: int = -1

    @property
    def position(self):
        return np.array([self.x, self.y])


def bicycle_step(vehicle, acceleration, steering, dt):
    """
    Advance one step of the kinematic bicycle model with slip angle.

    The centre of mass sits halfway between the axles, so the slip angle is
    beta = atan(tan(steering) / 2) and the yaw rate v * sin(beta) / (L / 2).
    """
    beta = math.atan(0.5 * math.tan(steering))
    v = vehicle.speed
    vehicle.x += v * math.cos(vehicle.heading + beta) * dt
    vehicle.y += v * math.sin(vehicle.heading + beta) * dt
    vehicle.heading = wrap_angle(vehicle.heading + v * math.sin(beta) / (vehicle.length / 2.0) * dt)
    vehicle.speed = max(0.0, v + acceleration * dt)
    return vehicle


def corners(vehicle):
    """Four corners of the vehicle footprint, shape (4, 2)."""
    c, s = math.cos(vehicle.heading), math.sin(vehicle.heading)
    half_l, half_w = vehicle.length / 2.0, vehicle.width / 2.0
    local = np.array([[half_l, half_w], [half_l, -half_w], [-half_l, -half_w], [-half_l, half_w]])
    rotation = np.array([[c, -s], [s, c]])
    return local @ rotation.T + vehicle.position


def overlap(a, b):
    """Oriented-rectangle overlap by the separating-axis test."""
    if (a.x - b.x) ** 2 + (a.y - b.y) ** 2 > ((a.length + b.length) / 2.0 + a.width + b.width) ** 2:
        return False
    corners_a, corners_b = corners(a), corners(b)
    axes = []
    for heading in (a.heading, b.heading):
        axes.append((math.cos(heading), math.sin(heading)))
        axes.append((-math.sin(heading), math.cos(heading)))
    for axis in np.array(axes):
        proj_a, proj_b = corners_a @ axis, corners_b @ axis
        if proj_a.max() < proj_b.min() or proj_b.max() < proj_a.min():
            return False
    return True


def lane_tracking_steering(vehicle, lane, max_steering):
    """Steering command that pulls the vehicle onto the centre line of `lane`."""
    s, lateral = lane.local_coordinates(vehicle.x, vehicle.y)
    speed = max(vehicle.speed, 1.0)
    lane_heading = lane.heading_at(float(s) + speed * TAU_HEADING)
    lateral_speed_cmd = -float(lateral) / TAU_LATERAL
    heading_cmd = lane_heading + math.asin(np.clip(lateral_speed_cmd / speed, -1.0, 1.0))
    heading_rate = wrap_angle(heading_cmd - vehicle.heading) / TAU_HEADING
    steering = math.asin(np.clip(vehicle.length / 2.0 / speed * heading_rate, -1.0, 1.0))
    return float(np.clip(steering, -max_steering, max_steering))


def speed_tracking_acceleration(vehicle, target_speed, max_acceleration):
    return float(np.clip((target_speed - vehicle.speed) / TAU_SPEED, -max_acceleration, max_acceleration))


def idm_acceleration(vehicle, gap, front_speed, max_acceleration):
    """Intelligent driver model toward vehicle.target_speed with headway braking."""
    v0 = max(vehicle.target_speed, 1e-3)
    acc = IDM_COMFORT_ACC * (1.0 - (max(vehicle.speed, 0.0) / v0) ** IDM_DELTA)
    if gap is not None:
        dv = vehicle.speed - front_speed
        desired = (IDM_DISTANCE_WANTED + vehicle.speed * IDM_TIME_WANTED
                   + vehicle.speed * dv / (2.0 * math.sqrt(IDM_COMFORT_ACC * IDM_COMFORT_DEC)))
        acc -= IDM_COMFORT_ACC * (max(desired, 0.0) / max(gap, 0.5)) ** 2
    return float(np.clip(acc, -max_acceleration, max_acceleration))


def front_vehicle(vehicle, lane, others):
    """
    Nearest vehicle ahead, either on the same lane or inside a narrow cone
    along the current heading.

    Args:
        vehicle (VehicleState): Observer
        lane: Lane the observer follows
        others (list): Candidate vehicles (observer excluded)

    Returns:
        tuple: (bumper-to-bumper gap, front vehicle) or (None, None)
    """
    if not others:
        return None, None
    xs = np.array([o.x for o in others])
    ys = np.array([o.y for o in others])
    lengths = np.array([o.length for o in others])

    s_self, _ = lane.local_coordinates(vehicle.x, vehicle.y)
    s_other, lat_other = lane.local_coordinates(xs, ys)
    ds_lane = s_other - float(s_self)
    in_lane = (np.abs(lat_other) < lane.width / 2.0 + 0.5) & (ds_lane > 0.0) & (ds_lane < PERCEPTION_RANGE)

    c, s = math.cos(vehicle.heading), math.sin(vehicle.heading)
    dx = (xs - vehicle.x) * c + (ys - vehicle.y) * s
    dy = -(xs - vehicle.x) * s + (ys - vehicle.y) * c
    in_cone = (dx > 0.0) & (dx < 25.0) & (np.abs(dy) < vehicle.width + 0.2)

    distance = np.where(in_lane, ds_lane, np.inf)
    distance = np.minimum(distance, np.where(in_cone, dx, np.inf))
    idx = int(np.argmin(distance))
    if not np.isfinite(distance[idx]):
        return None, None
    gap = float(distance[idx] - (vehicle.length + lengths[idx]) / 2.0)
    return gap, others[idx]
