# envsim/render.py
"""
Ego-centred, heading-up bird's-eye-view rasteriser.

The ego sits at the image centre facing the top edge. Each pixel centre is
mapped to world coordinates once per frame and every layer (road surface,
lane markings, vehicles) is a vectorised point-in-shape test on that grid.
"""
import math
from dataclasses import dataclass

import numpy as np

from ..constants import BEV_COLORS, IMAGE_SIZE
from .roads import contains

MARKING_HALF_WIDTH = 0.35


@dataclass
class Observation:
    image: np.ndarray  # (64, 64, 3) uint8
    ego_speed: float
    step_index: int


def pixel_grid(meters_per_pixel, size=IMAGE_SIZE):
    """Forward/left offsets (metres) of each pixel centre in the ego frame."""
    centre = (size - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(size), np.arange(size), indexing='ij')
    forward = (centre - rows) * meters_per_pixel
    left = (centre - cols) * meters_per_pixel
    return forward, left


def world_grid(ego, meters_per_pixel, size=IMAGE_SIZE):
    forward, left = pixel_grid(meters_per_pixel, size)
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    xs = ego.x + forward * c - left * s
    ys = ego.y + forward * s + left * c
    return xs, ys


def vehicle_mask(vehicle, xs, ys):
    dx, dy = xs - vehicle.x, ys - vehicle.y
    c, s = math.cos(vehicle.heading), math.sin(vehicle.heading)
    along = dx * c + dy * s
    across = -dx * s + dy * c
    return (np.abs(along) <= vehicle.length / 2.0) & (np.abs(across) <= vehicle.width / 2.0)


def render_bev(road, ego, traffic, step_index, meters_per_pixel=1.0, size=IMAGE_SIZE):
    """
    Rasterise the world around the ego vehicle.

    Args:
        road (Road): Lane network
        ego (VehicleState): Ego vehicle, drawn last
        traffic (list): Other vehicles
        step_index (int): Step counter copied into the observation
        meters_per_pixel (float): Raster scale

    Returns:
        Observation: Image plus kinematic metadata
    """
    xs, ys = world_grid(ego, meters_per_pixel, size)
    image = np.zeros((size, size, 3), dtype=np.uint8)
    image[:] = BEV_COLORS['background']

    road_mask = np.zeros((size, size), dtype=bool)
    marking_mask = np.zeros((size, size), dtype=bool)
    for lane in road.lanes.values():
        s, lateral = lane.local_coordinates(xs, ys)
        along = (s >= 0.0) & (s <= lane.length)
        road_mask |= contains(lane, xs, ys)
        edge = np.minimum(np.abs(lateral - lane.width / 2.0), np.abs(lateral + lane.width / 2.0))
        marking_mask |= along & (edge <= MARKING_HALF_WIDTH)
    image[road_mask] = BEV_COLORS['road']
    image[marking_mask] = BEV_COLORS['lane_marking']

    half_view = size * meters_per_pixel / math.sqrt(2.0)
    for vehicle in traffic:
        if math.hypot(vehicle.x - ego.x, vehicle.y - ego.y) > half_view + vehicle.length:
            continue
        image[vehicle_mask(vehicle, xs, ys)] = BEV_COLORS['traffic']
    image[vehicle_mask(ego, xs, ys)] = BEV_COLORS['ego']
    return Observation(image=image, ego_speed=float(ego.speed), step_index=int(step_index))


def write_ppm(path, image):
    """Write an RGB uint8 image as binary PPM (P6)."""
    height, width = image.shape[:2]
    with open(path, 'wb') as handle:
        handle.write(f"P6\n{width} {height}\n255\n".encode('ascii'))
        handle.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())
