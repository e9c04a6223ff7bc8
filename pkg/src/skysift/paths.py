"""Planar flight paths traversed at constant speed.

Each shape is a unit template polyline that gets scaled, rotated, and
translated, then reparameterised by arc length. Open shapes are flown
back and forth; closed shapes loop.
"""
from __future__ import annotations

import numpy as np


def _circle(n: int = 720) -> np.ndarray:
    t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    return 0.5 * np.column_stack([np.cos(t), np.sin(t)])


def _s_curve(n: int = 400) -> np.ndarray:
    x = np.linspace(-0.5, 0.5, n)
    return np.column_stack([x, 0.25 * np.sin(2.0 * np.pi * x)])


def _figure_eight(n: int = 720) -> np.ndarray:
    t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    return np.column_stack([0.5 * np.sin(t), 0.25 * np.sin(2.0 * t)])


def _star(points: int = 5, inner: float = 0.2) -> np.ndarray:
    ang = np.pi / 2 + np.arange(2 * points) * np.pi / points
    r = np.where(np.arange(2 * points) % 2 == 0, 0.5, inner)
    return np.column_stack([r * np.cos(ang), r * np.sin(ang)])


PATH_TEMPLATES: dict[str, tuple[np.ndarray, bool]] = {
    "line": (np.array([[-0.5, 0.0], [0.5, 0.0]]), False),
    "circle": (_circle(), True),
    "s_curve": (_s_curve(), False),
    "figure_eight": (_figure_eight(), True),
    "square": (np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]]),
               True),
    "diamond": (np.array([[0.5, 0.0], [0.0, 0.5], [-0.5, 0.0], [0.0, -0.5]]),
                True),
    "m_shape": (np.array([[-0.5, -0.5], [-0.25, 0.5], [0.0, -0.1],
                          [0.25, 0.5], [0.5, -0.5]]), False),
    "star": (_star(), True),
}

PATH_SHAPES = tuple(sorted(PATH_TEMPLATES))


class PathSampler:
    """Position and velocity along a shaped route at constant speed."""

    def __init__(self, shape: str, size_m: float, origin_xy, altitude_m: float,
                 speed_mps: float, heading_deg: float = 0.0):
        if shape not in PATH_TEMPLATES:
            raise ValueError(f"unknown path shape: {shape!r}")
        template, self.closed = PATH_TEMPLATES[shape]
        ang = np.deg2rad(heading_deg)
        rot = np.array([[np.cos(ang), -np.sin(ang)],
                        [np.sin(ang), np.cos(ang)]])
        verts = template * size_m @ rot.T + np.asarray(origin_xy, dtype=float)
        if self.closed:
            verts = np.vstack([verts, verts[:1]])
        seg = np.diff(verts, axis=0)
        seg_len = np.linalg.norm(seg, axis=1)
        ok = seg_len > 0
        self.verts = np.vstack([verts[:-1][ok], verts[-1]])
        seg = np.diff(self.verts, axis=0)
        self.seg_len = np.linalg.norm(seg, axis=1)
        self.tangent = seg / self.seg_len[:, None]
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.total = float(self.cum[-1])
        self.altitude = float(altitude_m)
        self.speed = float(speed_mps)
        # the circle gets an exact arc; a polyline would sag between
        # vertices and the radius is the one thing callers rely on
        self._circle_r = 0.5 * size_m if shape == "circle" else None
        if self._circle_r is not None:
            self._center = np.asarray(origin_xy, dtype=float)
            self._phase = ang
            self.total = 2.0 * np.pi * self._circle_r

    def _arc_position(self, s: float):
        if self._circle_r is not None:
            th = self._phase + s / self._circle_r
            c, sn = np.cos(th), np.sin(th)
            p = self._center + self._circle_r * np.array([c, sn])
            return p, np.array([-sn, c])
        i = int(np.searchsorted(self.cum, s, side="right")) - 1
        i = min(max(i, 0), len(self.seg_len) - 1)
        p = self.verts[i] + (s - self.cum[i]) * self.tangent[i]
        return p, self.tangent[i]

    def _distance(self, t_s: float) -> tuple[float, float]:
        d = self.speed * t_s
        if self.closed:
            return d % self.total, 1.0
        period = 2.0 * self.total
        u = d % period
        if u <= self.total:
            return u, 1.0
        return period - u, -1.0

    def position(self, t_s: float) -> np.ndarray:
        s, _ = self._distance(t_s)
        p, _ = self._arc_position(s)
        return np.array([p[0], p[1], self.altitude])

    def velocity(self, t_s: float) -> np.ndarray:
        s, direction = self._distance(t_s)
        _, tan = self._arc_position(s)
        v = self.speed * direction * tan
        return np.array([v[0], v[1], 0.0])
