"""
plotting.py - Self-contained SVG figures of experience maps.

Nodes are circles, links are lines, loop-closure links are drawn in red. An
optional dead-reckoning trace is overlaid as a polyline. Coordinates are
printed with a fixed "%.3f" format so identical inputs give identical files.
"""

import logging
from typing import Iterable, List, Optional, Sequence, Tuple

from domain import Pose2D, atomic_write
from experience_map import EventKind, ExperienceMap
from slam_pipeline import FrameReport

logger = logging.getLogger(__name__)

LINK_COLOR = "#555555"
CLOSURE_COLOR = "#d62728"
NODE_COLOR = "#1f77b4"
TRACE_COLOR = "#999999"

Point = Tuple[float, float]
Segment = Tuple[Point, Point, bool]


class _Canvas:
    def __init__(self, points: Iterable[Point], size: int, margin: int):
        points = list(points)
        self.size = size
        self.margin = margin
        if points:
            xs, ys = [p[0] for p in points], [p[1] for p in points]
            self.x0, self.y0 = min(xs), min(ys)
            span = max(max(xs) - self.x0, max(ys) - self.y0)
        else:
            self.x0 = self.y0 = 0.0
            span = 0.0
        self.scale = (size - 2 * margin) / span if span > 0 else 1.0

    def map(self, p: Point) -> Point:
        x = self.margin + (p[0] - self.x0) * self.scale
        y = self.size - self.margin - (p[1] - self.y0) * self.scale
        return x, y


def _svg(nodes: Sequence[Point], segments: Sequence[Segment], trace: Optional[Sequence[Point]],
         size: int, margin: int, radius: float) -> str:
    canvas = _Canvas(list(nodes) + [s[0] for s in segments] + [s[1] for s in segments] + list(trace or []),
                     size, margin)
    out: List[str] = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
    ]
    if trace:
        coords = " ".join("%.3f,%.3f" % canvas.map(p) for p in trace)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{TRACE_COLOR}" stroke-width="1"/>')
    # closures last so they sit on top
    for a, b, closure in sorted(segments, key=lambda s: s[2]):
        (x1, y1), (x2, y2) = canvas.map(a), canvas.map(b)
        color, width = (CLOSURE_COLOR, 2) if closure else (LINK_COLOR, 1)
        out.append('<line x1="%.3f" y1="%.3f" x2="%.3f" y2="%.3f" stroke="%s" stroke-width="%d"/>'
                   % (x1, y1, x2, y2, color, width))
    for p in nodes:
        x, y = canvas.map(p)
        out.append('<circle cx="%.3f" cy="%.3f" r="%.3f" fill="%s"/>' % (x, y, radius, NODE_COLOR))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def map_svg(exp_map: ExperienceMap, trace: Optional[Sequence[Pose2D]] = None,
            size: int = 600, margin: int = 20, radius: float = 3.0) -> str:
    poses = [e.map_pose for e in exp_map.experiences]
    nodes = [(p.x, p.y) for p in poses]
    segments = [
        (nodes[link.from_id], nodes[link.to_id], link.is_loop_closure)
        for link in exp_map.links
    ]
    points = [(p.x, p.y) for p in trace] if trace else None
    return _svg(nodes, segments, points, size, margin, radius)


def reports_svg(reports: Sequence[FrameReport], trace: Optional[Sequence[Pose2D]] = None,
                size: int = 600, margin: int = 20, radius: float = 3.0) -> str:
    """
    Figure from a frame-report stream: one node per experience at its last
    reported map pose, one line per distinct experience transition.
    """
    last_pose = {}
    transitions = {}
    prev = None
    for report in reports:
        last_pose[report.experience_id] = report.map_pose
        if prev is not None and prev != report.experience_id:
            key = (prev, report.experience_id)
            transitions.setdefault(key, report.event is EventKind.LOOP_CLOSURE)
        prev = report.experience_id
    ids = sorted(last_pose)
    nodes = [(last_pose[i].x, last_pose[i].y) for i in ids]
    segments = [
        ((last_pose[a].x, last_pose[a].y), (last_pose[b].x, last_pose[b].y), closure)
        for (a, b), closure in sorted(transitions.items())
    ]
    points = [(p.x, p.y) for p in trace] if trace else None
    return _svg(nodes, segments, points, size, margin, radius)


def save_svg(svg: str, path: str) -> None:
    with atomic_write(path) as fh:
        fh.write(svg)
    logger.debug(f"SVG written to {path}")
