# envsim/env.py
"""
Deterministic driving micro-environment.

One class serves the three tasks; the task decides the road network, how
the ego and traffic are placed at reset, how traffic arrives and what
counts as success. (config, seed, action sequence) fully determines every
StepResult.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from ..constants import META_ACTIONS
from ..errors import UsageError
from ..utils import log_debug
from .render import Observation, render_bev
from .rewards import RewardContext, reward_fn
from .roads import MERGE_RAMP_END, build_road
from .vehicles import (
    VEHICLE_LENGTH, VehicleState, bicycle_step, front_vehicle, idm_acceleration,
    lane_tracking_steering, overlap, speed_tracking_acceleration,
)

LANE_LEFT, IDLE, LANE_RIGHT, FASTER, SLOWER = range(len(META_ACTIONS))

TRAFFIC_LANE_CHANGE_PROB = 0.002  # per vehicle per step, highway only
SPAWN_CLEARANCE = 15.0
MERGE_SUCCESS_MARGIN = 30.0
ROUNDABOUT_EGO_ENTRY = 0
ROUNDABOUT_EGO_EXIT = 2
ROUNDABOUT_SUCCESS_DISTANCE = 20.0


@dataclass
class StepResult:
    observation: Observation
    reward: float
    terminated: bool
    truncated: bool
    collided: bool
    off_road: bool = False
    success: bool = False
    info: dict = field(default_factory=dict)


def speed_setpoints(speed_target):
    lo, hi = speed_target
    return [max(lo - 5.0, 0.0), lo, (lo + hi) / 2.0, hi]


class DrivingEnv:
    """
    Highway, merge or roundabout driving task.

    Continuous actions are (acceleration m/s^2, steering rad); discrete
    actions are meta-actions LANE_LEFT, IDLE, LANE_RIGHT, FASTER, SLOWER
    executed by the lane-tracking controller.
    """

    def __init__(self, config):
        config.validate()
        self.config = config
        self.road = build_road(config.task, config.lanes_count)
        self.ego = None
        self.traffic = []
        self.step_index = 0
        self.done = True
        self.rng = None

    # ------------------------------------------------------------------
    # Action helpers
    # ------------------------------------------------------------------
    @property
    def discrete(self):
        return self.config.action_space == 'discrete'

    @property
    def action_dim(self):
        return self.config.action_dim

    @property
    def action_bounds(self):
        return np.array([self.config.max_acceleration, self.config.max_steering])

    def sample_action(self, rng):
        """Uniform random action, used by the random-policy baseline."""
        if self.discrete:
            return int(rng.integers(len(META_ACTIONS)))
        return rng.uniform(-1.0, 1.0, size=2) * self.action_bounds

    def encode_action(self, action):
        """World-model action vector: scaled to [-1, 1] or one-hot."""
        if self.discrete:
            vector = np.zeros(len(META_ACTIONS), dtype=np.float32)
            vector[int(action)] = 1.0
            return vector
        return np.clip(np.asarray(action, dtype=np.float32) / self.action_bounds, -1.0, 1.0).astype(np.float32)

    def decode_action(self, vector):
        """Inverse of encode_action for policy outputs."""
        if self.discrete:
            return int(np.argmax(vector)) if np.ndim(vector) else int(vector)
        return np.clip(np.asarray(vector, dtype=float), -1.0, 1.0) * self.action_bounds

    # ------------------------------------------------------------------
    # Episode control
    # ------------------------------------------------------------------
    def reset(self, seed=None):
        """
        Place the ego and initial traffic for the configured task.

        Args:
            seed (int): Episode seed; defaults to config.seed

        Returns:
            Observation: First frame
        """
        seed = self.config.seed if seed is None else seed
        self.rng = np.random.default_rng(seed)
        self._next_id = 1
        self.traffic = []
        self.step_index = 0
        self.speed_sum = 0.0
        self.done = False
        if self.config.task == 'highway':
            self._reset_highway()
        elif self.config.task == 'merge':
            self._reset_merge()
        else:
            self._reset_roundabout()
        self._speed_levels = speed_setpoints(self.config.speed_target)
        self._speed_index = int(np.argmin([abs(s - self.ego.target_speed) for s in self._speed_levels]))
        log_debug(f"reset {self.config.task} seed={seed} traffic={len(self.traffic)}")
        return self._observe()

    def _new_vehicle(self, lane_id, s, speed, lateral=0.0, exit_arm=-1):
        lane = self.road.lane(lane_id)
        x, y = lane.position(s, lateral)
        vehicle = VehicleState(x=float(x), y=float(y), heading=float(lane.heading_at(s)), speed=float(speed),
                               lane_id=lane_id, vehicle_id=self._next_id, target_lane=lane_id,
                               target_speed=float(speed), exit_arm=exit_arm)
        self._next_id += 1
        return vehicle

    def _reset_highway(self):
        cfg = self.config
        lo, hi = cfg.speed_target
        ego_lane = int(self.rng.integers(cfg.lanes_count))
        self.ego = self._new_vehicle(ego_lane, 200.0, (lo + hi) / 2.0)
        self.ego.vehicle_id = 0
        density = max(cfg.vehicle_density, 1e-3)
        front = np.full(cfg.lanes_count, 200.0 + 2.0 * VEHICLE_LENGTH)
        front[ego_lane] += VEHICLE_LENGTH
        for _ in range(cfg.vehicle_count):
            lane = int(self.rng.integers(cfg.lanes_count))
            front[lane] += (VEHICLE_LENGTH + 10.0 + self.rng.exponential(20.0)) / density
            speed = float(self.rng.uniform(lo - 4.0, lo + 1.0))
            self.traffic.append(self._new_vehicle(lane, front[lane], speed))

    def _reset_merge(self):
        cfg = self.config
        lo, hi = cfg.speed_target
        self.ego = self._new_vehicle(self.road.ramp_lane, 20.0, lo)
        self.ego.vehicle_id = 0
        for lane in self.road.main_lanes:
            s = float(self.rng.uniform(0.0, 30.0))
            while s < self.road.lane(lane).length - 20.0 and len(self.traffic) < cfg.vehicle_count:
                speed = float(self.rng.uniform(lo, (lo + hi) / 2.0))
                self.traffic.append(self._new_vehicle(lane, s, speed))
                s += SPAWN_CLEARANCE + self.rng.exponential(speed / max(cfg.arrival_rate, 1e-3))

    def _reset_roundabout(self):
        cfg = self.config
        lo, hi = cfg.speed_target
        entry = self.road.lanes[10 + ROUNDABOUT_EGO_ENTRY]
        self.ego = self._new_vehicle(entry.lane_id, entry.length - 40.0, lo, exit_arm=ROUNDABOUT_EGO_EXIT)
        self.ego.vehicle_id = 0
        count = int(self.rng.integers(cfg.vehicle_count // 2 + 1))
        for k in self.rng.permutation(4)[:min(count, 4)]:
            lane_id = 30 + int(k)
            speed = float(self.rng.uniform(lo, hi))
            exit_arm = int(self.rng.integers(4))
            self.traffic.append(self._new_vehicle(lane_id, float(self.rng.uniform(0.0, 20.0)), speed,
                                                  exit_arm=exit_arm))

    # ------------------------------------------------------------------
    # Stepping
    # ------------------------------------------------------------------
    def step(self, action):
        """
        Advance every vehicle by one dt and score the transition.

        Args:
            action: (acceleration, steering) for continuous tasks, meta-action id otherwise

        Returns:
            StepResult
        """
        if self.done:
            raise UsageError("step() called on a finished episode; call reset() first")
        cfg = self.config
        ego = self.ego
        lane_before = self.road.lane(ego.lane_id)
        s_before, _ = lane_before.local_coordinates(ego.x, ego.y)
        lane_heading = lane_before.heading_at(float(s_before))
        x_before, y_before = ego.x, ego.y
        gap_before, _ = front_vehicle(ego, lane_before, self.traffic)

        previous_lane = ego.lane_id
        lane_changed = False
        if self.discrete:
            lane_changed = self._apply_meta_action(action)
            acceleration = speed_tracking_acceleration(ego, ego.target_speed, cfg.max_acceleration)
            steering = lane_tracking_steering(ego, self.road.lane(ego.target_lane), cfg.max_steering)
        else:
            acceleration, steering = self._clamp_continuous(action)

        traffic_controls = [self._traffic_control(v) for v in self.traffic]
        bicycle_step(ego, acceleration, steering, cfg.dt)
        for vehicle, (acc, steer) in zip(self.traffic, traffic_controls):
            bicycle_step(vehicle, acc, steer, cfg.dt)

        self._advance_routes()
        if not self.discrete:
            ego.lane_id = self.road.closest_lane(ego.x, ego.y)
            ego.target_lane = ego.lane_id
            lane_changed = ego.lane_id != previous_lane
        self._spawn_traffic()

        collided = any(overlap(ego, other) for other in self.traffic)
        off_road = not self._ego_on_road()
        self.step_index += 1
        self.speed_sum += ego.speed

        lane_now = self.road.lane(ego.lane_id)
        gap_after, _ = front_vehicle(ego, lane_now, self.traffic)
        smart = lane_changed and (gap_after is None or (gap_before is not None and gap_after > gap_before))
        progress = (ego.x - x_before) * math.cos(lane_heading) + (ego.y - y_before) * math.sin(lane_heading)
        s_now, _ = lane_now.local_coordinates(ego.x, ego.y)

        time_up = self.step_index >= cfg.time_limit
        success = not (collided or off_road) and self._success(time_up)
        terminated = collided or off_road or (success and cfg.task != 'highway')
        truncated = time_up and not terminated

        context = RewardContext(
            speed=ego.speed,
            heading_error=ego.heading - lane_now.heading_at(float(s_now)),
            progress=progress,
            front_gap=gap_after,
            collided=collided,
            off_road=off_road,
            success=success,
            lane_changed=lane_changed,
            smart_lane_change=smart,
        )
        terms = reward_fn(cfg, context)
        self.done = terminated or truncated
        return StepResult(
            observation=self._observe(),
            reward=float(terms.total),
            terminated=terminated,
            truncated=truncated,
            collided=collided,
            off_road=off_road,
            success=success,
            info={'reward_terms': terms.as_dict(), 'lane_id': ego.lane_id, 'speed': ego.speed},
        )

    def _clamp_continuous(self, action):
        action = np.asarray(action, dtype=float).reshape(-1)
        if action.shape != (2,):
            raise UsageError(f"Continuous action must be (acceleration, steering), got shape {action.shape}")
        if not np.all(np.isfinite(action)):
            raise UsageError("Continuous action contains non-finite values")
        acceleration = float(np.clip(action[0], -self.config.max_acceleration, self.config.max_acceleration))
        steering = float(np.clip(action[1], -self.config.max_steering, self.config.max_steering))
        return acceleration, steering

    def _apply_meta_action(self, action):
        """Update the ego's target lane/speed. Returns True when a lane change was accepted."""
        action = int(action)
        if not 0 <= action < len(META_ACTIONS):
            raise UsageError(f"Discrete action must be an id in 0..{len(META_ACTIONS) - 1} "
                             f"({', '.join(META_ACTIONS)}), got {action}")
        ego = self.ego
        if action in (LANE_LEFT, LANE_RIGHT):
            side = 'left' if action == LANE_LEFT else 'right'
            target = self.road.neighbour(ego.lane_id, side)
            if target is not None and self._lane_spans(target, ego):
                ego.lane_id = target
                ego.target_lane = target
                return True
        elif action == FASTER:
            self._speed_index = min(self._speed_index + 1, len(self._speed_levels) - 1)
        elif action == SLOWER:
            self._speed_index = max(self._speed_index - 1, 0)
        ego.target_speed = self._speed_levels[self._speed_index]
        return False

    def _lane_spans(self, lane_id, vehicle):
        """True when lane_id exists alongside the vehicle's current position."""
        lane = self.road.lane(lane_id)
        s, _ = lane.local_coordinates(vehicle.x, vehicle.y)
        return 0.0 <= float(s) <= lane.length

    def _traffic_control(self, vehicle):
        cfg = self.config
        if cfg.task == 'highway' and self.rng.random() < TRAFFIC_LANE_CHANGE_PROB:
            self._try_traffic_lane_change(vehicle)
        lane = self.road.lane(vehicle.target_lane)
        others = [o for o in self.traffic if o is not vehicle] + [self.ego]
        gap, leader = front_vehicle(vehicle, lane, others)
        acc = idm_acceleration(vehicle, gap, leader.speed if leader is not None else 0.0, cfg.max_acceleration)
        steer = lane_tracking_steering(vehicle, lane, cfg.max_steering)
        return acc, steer

    def _try_traffic_lane_change(self, vehicle):
        side = 'left' if self.rng.random() < 0.5 else 'right'
        target = self.road.neighbour(vehicle.lane_id, side)
        if target is None:
            return
        lane = self.road.lane(target)
        s_self, _ = lane.local_coordinates(vehicle.x, vehicle.y)
        for other in self.traffic + [self.ego]:
            if other is vehicle:
                continue
            s_other, lat_other = lane.local_coordinates(other.x, other.y)
            if abs(lat_other) < lane.width / 2.0 and abs(s_other - s_self) < 12.0:
                return
        vehicle.lane_id = target
        vehicle.target_lane = target

    def _advance_routes(self):
        """Move vehicles past the end of a lane onto its successor; drop traffic that left the map."""
        kept = []
        for vehicle in [self.ego] + self.traffic:
            lane = self.road.lane(vehicle.lane_id)
            s, _ = lane.local_coordinates(vehicle.x, vehicle.y)
            if s > lane.length:
                nxt = self.road.next_lane(vehicle.lane_id, vehicle.exit_arm)
                if nxt is not None:
                    vehicle.lane_id = nxt
                    vehicle.target_lane = nxt
                elif vehicle is not self.ego:
                    continue
            if vehicle is not self.ego:
                kept.append(vehicle)
        self.traffic = kept

    def _spawn_traffic(self):
        cfg = self.config
        if cfg.task == 'highway' or cfg.arrival_rate <= 0.0:
            return
        probability = 1.0 - math.exp(-cfg.arrival_rate * cfg.dt)
        lo, hi = cfg.speed_target
        entries = list(self.road.main_lanes) if cfg.task == 'merge' else [10 + k for k in range(4)]
        for lane_id in entries:
            if len(self.traffic) >= cfg.vehicle_count or self.rng.random() >= probability:
                continue
            lane = self.road.lane(lane_id)
            start_x, start_y = lane.position(0.0, 0.0)
            clear = all(math.hypot(v.x - start_x, v.y - start_y) > SPAWN_CLEARANCE
                        for v in self.traffic + [self.ego])
            if not clear:
                continue
            exit_arm = -1
            if cfg.task == 'roundabout':
                exit_arm = int((lane_id - 10 + 1 + self.rng.integers(3)) % 4)
                speed = float(self.rng.uniform(lo, hi))
            else:
                speed = float(self.rng.uniform(lo, (lo + hi) / 2.0))
            self.traffic.append(self._new_vehicle(lane_id, 0.0, speed, exit_arm=exit_arm))

    def _ego_on_road(self):
        ramp = self.road.ramp_lane
        if ramp is not None and self.ego.lane_id == ramp:
            # the ramp ends in a barrier
            s, _ = self.road.lane(ramp).local_coordinates(self.ego.x, self.ego.y)
            if s > MERGE_RAMP_END:
                return False
        return bool(self.road.on_road(self.ego.x, self.ego.y))

    def _success(self, time_up):
        cfg = self.config
        ego = self.ego
        if cfg.task == 'highway':
            if not time_up:
                return False
            lo, hi = cfg.speed_target
            mean_speed = self.speed_sum / max(self.step_index, 1)
            return lo <= mean_speed <= hi
        if cfg.task == 'merge':
            return ego.lane_id in self.road.main_lanes and ego.x > MERGE_RAMP_END + MERGE_SUCCESS_MARGIN
        exit_lane = self.road.exits[ROUNDABOUT_EGO_EXIT]
        if ego.lane_id != exit_lane:
            return False
        s, _ = self.road.lane(exit_lane).local_coordinates(ego.x, ego.y)
        return s > ROUNDABOUT_SUCCESS_DISTANCE

    # ------------------------------------------------------------------
    # Observation
    # ------------------------------------------------------------------
    def _observe(self):
        return render_bev(self.road, self.ego, self.traffic, self.step_index,
                          meters_per_pixel=self.config.bev_meters_per_pixel)

