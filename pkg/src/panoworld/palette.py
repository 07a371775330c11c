"""Semantic class palette and global scale constants."""

import numpy as np

# Class ids are fixed; C is a config constant elsewhere but defaults to this.
CLASS_NAMES = (
    "void",
    "floor",
    "ceiling",
    "wall",
    "door",
    "window",
    "table",
    "chair",
    "bed",
    "sofa",
    "cabinet",
    "lamp",
    "appliance",
)

NUM_CLASSES = len(CLASS_NAMES)

VOID = 0
FLOOR = 1
CEILING = 2
WALL = 3
DOOR = 4
WINDOW = 5

FURNITURE_CLASSES = (6, 7, 8, 9, 10, 11, 12)

# Base RGB per class, uint8. Room tints modulate floor/wall/ceiling.
PALETTE = np.array(
    [
        [0, 0, 0],  # void
        [170, 140, 110],  # floor
        [235, 235, 225],  # ceiling
        [200, 200, 190],  # wall
        [150, 100, 60],  # door
        [130, 190, 230],  # window
        [140, 90, 50],  # table
        [180, 60, 60],  # chair
        [90, 110, 180],  # bed
        [70, 150, 100],  # sofa
        [120, 80, 140],  # cabinet
        [230, 210, 120],  # lamp
        [160, 160, 170],  # appliance
    ],
    dtype=np.uint8,
)

# Metric depth bound; model I/O normalizes depth to (0, 1) by this.
D_MAX = 10.0

CEILING_HEIGHT = 2.7
CAMERA_HEIGHT = 1.5
WALL_THICKNESS = 0.1
DOOR_HEIGHT = 2.1

# Marker for pixels with no re-projected point in a guidance image.
INVALID_CLASS = -1
