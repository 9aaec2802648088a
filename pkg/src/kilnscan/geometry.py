"""Oriented boxes, quantized orientation classes, rotated IoU and NMS."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

Point = tuple[float, float]


class ThetaClass(enum.Enum):
    """Detector orientation classes; the value is the rotation in degrees."""

    K0 = 0
    K20 = 20
    K40 = 40
    K140 = 140
    K160 = 160

    @property
    def degrees(self) -> float:
        return float(self.value)

    @classmethod
    def parse(cls, name: str) -> "ThetaClass":
        try:
            return cls[name]
        except KeyError:
            valid = ", ".join(c.name for c in cls)
            raise ValueError(f"unknown theta class {name!r}; valid ids are {valid}") from None


THETA_CLASSES = tuple(ThetaClass)


def normalize_angle(theta: float) -> float:
    theta = math.fmod(theta, 180.0)
    if theta < 0.0:
        theta += 180.0
    if theta >= 180.0:  # fmod of tiny negatives can round up to 180
        theta = 0.0
    return theta


@dataclass(frozen=True)
class OrientedBox:
    """Rectangle of size ``w x h`` centred at ``(cx, cy)``, rotated ``theta`` degrees counterclockwise.

    ``theta`` is normalized to ``[0, 180)`` on construction.
    """

    cx: float
    cy: float
    w: float
    h: float
    theta: float = 0.0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0 and math.isfinite(self.w) and math.isfinite(self.h)):
            raise ValueError(f"box sides must be positive and finite, got w={self.w}, h={self.h}")
        if not (math.isfinite(self.cx) and math.isfinite(self.cy) and math.isfinite(self.theta)):
            raise ValueError("box center and angle must be finite")
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    @property
    def area(self) -> float:
        return self.w * self.h


def box_corners(b: OrientedBox) -> list[Point]:
    """Corners in counterclockwise order starting from local ``(-w/2, -h/2)``."""
    t = math.radians(b.theta)
    c, s = math.cos(t), math.sin(t)
    hw, hh = b.w / 2.0, b.h / 2.0
    corners = []
    for lx, ly in ((-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)):
        corners.append((b.cx + lx * c - ly * s, b.cy + lx * s + ly * c))
    return corners


def polygon_area(poly: Sequence[Point]) -> float:
    """Signed shoelace area; positive for counterclockwise vertex order."""
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return acc / 2.0


def _ccw(poly: Sequence[Point]) -> list[Point]:
    poly = list(poly)
    return poly if polygon_area(poly) >= 0 else poly[::-1]


def clip_convex(subject: Sequence[Point], clip: Sequence[Point]) -> list[Point]:
    """Sutherland-Hodgman clip of ``subject`` by the convex polygon ``clip``.

    Both polygons must be counterclockwise.
    """
    output = list(subject)
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp, output = output, []
        # signed distance (scaled) of each vertex to the left of edge a->b
        side = [ex * (py - ay) - ey * (px - ax) for px, py in inp]
        m = len(inp)
        for j in range(m):
            p, q = inp[j - 1], inp[j]
            sp, sq = side[j - 1], side[j]
            if sq >= 0.0:
                if sp < 0.0:
                    t = sp / (sp - sq)
                    output.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
                output.append(q)
            elif sp >= 0.0:
                t = sp / (sp - sq)
                output.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return output


def convex_iou(p: Sequence[Point], q: Sequence[Point]) -> float:
    """IoU of two convex polygons given in either vertex order."""
    p, q = _ccw(p), _ccw(q)
    area_p, area_q = polygon_area(p), polygon_area(q)
    inter_poly = clip_convex(p, q)
    if len(inter_poly) < 3:
        return 0.0
    inter = max(polygon_area(inter_poly), 0.0)
    union = area_p + area_q - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def rotated_iou(a: OrientedBox, b: OrientedBox) -> float:
    if a == b:
        return 1.0
    # cheap reject: circumscribed circles do not touch
    ra = math.hypot(a.w, a.h) / 2.0
    rb = math.hypot(b.w, b.h) / 2.0
    if math.hypot(a.cx - b.cx, a.cy - b.cy) > ra + rb:
        return 0.0
    pa, pb = box_corners(a), box_corners(b)
    inter_poly = clip_convex(pa, pb)
    if len(inter_poly) < 3:
        return 0.0
    inter = max(polygon_area(inter_poly), 0.0)
    union = a.area + b.area - inter
    return min(max(inter / union, 0.0), 1.0)


def _nms_key(box: OrientedBox, conf: float):
    return (-conf, box.cx, box.cy, box.w, box.h, box.theta)


def nms_order(dets: Sequence[tuple[OrientedBox, float]], iou_thresh: float = 0.5) -> list[int]:
    """Indices into ``dets`` kept by greedy oriented NMS, in keep order."""
    if not 0.0 <= iou_thresh <= 1.0:
        raise ValueError(f"iou_thresh must lie in [0, 1], got {iou_thresh}")
    for _, conf in dets:
        if not math.isfinite(conf):
            raise ValueError(f"confidence must be finite, got {conf}")
    order = sorted(range(len(dets)), key=lambda i: _nms_key(*dets[i]))
    kept: list[int] = []
    for i in order:
        box = dets[i][0]
        if all(rotated_iou(box, dets[k][0]) <= iou_thresh for k in kept):
            kept.append(i)
    return kept


def oriented_nms(dets: Sequence[tuple[OrientedBox, float]], iou_thresh: float = 0.5) -> list[tuple[OrientedBox, float]]:
    """Greedy suppression by rotated IoU.

    Detections are visited by descending confidence (ties: smaller ``cx``,
    then ``cy``); a box is kept iff its IoU with every kept box is at most
    ``iou_thresh``.
    """
    return [dets[i] for i in nms_order(dets, iou_thresh)]


def theta_class_to_box(axis_box: OrientedBox, cls: ThetaClass) -> OrientedBox:
    """Rotate an un-oriented detector box by its class angle."""
    if axis_box.theta != 0.0:
        raise ValueError(f"expected an axis-aligned box, got theta={axis_box.theta}")
    return OrientedBox(axis_box.cx, axis_box.cy, axis_box.w, axis_box.h, cls.degrees)


def angular_distance(a: float, b: float) -> float:
    """Distance between two orientations on the 180-degree-periodic circle."""
    d = abs(normalize_angle(a) - normalize_angle(b))
    return min(d, 180.0 - d)


def nearest_theta_angle(theta: float, angles: Sequence[float]) -> float:
    """Closest angle in ``angles``; ties go to the smaller angle."""
    if not angles:
        raise ValueError("need at least one class angle")
    return min(angles, key=lambda a: (angular_distance(theta, a), a))


def nearest_theta_class(theta: float, classes: Sequence[ThetaClass] = THETA_CLASSES) -> ThetaClass:
    by_degree = {c.degrees: c for c in classes}
    return by_degree[nearest_theta_angle(theta, list(by_degree))]
