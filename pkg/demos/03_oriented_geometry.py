"""Oriented boxes: corners, rotated IoU, NMS and the five orientation classes.

Run:  python3 demos/03_oriented_geometry.py
"""

import math

from kilnscan.geometry import (
    OrientedBox,
    ThetaClass,
    box_corners,
    nearest_theta_class,
    oriented_nms,
    rotated_iou,
    theta_class_to_box,
)

box = OrientedBox(0, 0, 2, 1, 30)
print("corners of", box, "->", [(round(x, 3), round(y, 3)) for x, y in box_corners(box)])

square = OrientedBox(0, 0, 2, 2)
print("IoU shifted by half:", rotated_iou(square, OrientedBox(1, 0, 2, 2)))
print("IoU rotated 45 deg :", rotated_iou(square, OrientedBox(0, 0, 2, 2, 45)), "=", 1 / math.sqrt(2))

# The detector predicts one of five angle classes for an axis-aligned box.
axis = OrientedBox(128, 128, 40, 20)
for cls in ThetaClass:
    print(cls.name, theta_class_to_box(axis, cls).theta)
print("nearest class to 95 deg:", nearest_theta_class(95).name, "| to 170 deg:", nearest_theta_class(170).name)

dets = [(OrientedBox(10, 10, 8, 4, 20), 0.9), (OrientedBox(10.5, 10, 8, 4, 20), 0.8), (OrientedBox(30, 30, 8, 4, 0), 0.7)]
print("NMS keeps:", oriented_nms(dets, 0.5))
