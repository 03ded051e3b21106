"""Procedural race tracks and track-frame projection.

A track is a sampled 2-d centerline polyline with cumulative arc length and
halfwidth.  Projection maps a point to (s, e): arc length along the
centerline and signed lateral offset (positive to the left of the tangent).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class Track:
    s: np.ndarray           # cumulative arc length at each sample, strictly increasing
    xy: np.ndarray          # (n, 2) centerline samples
    halfwidth: np.ndarray   # halfwidth at each sample
    closed: bool

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        xy = np.asarray(self.xy, dtype=float)
        hw = np.asarray(self.halfwidth, dtype=float)
        if xy.ndim != 2 or xy.shape[1] != 2 or len(s) != len(xy) or len(hw) != len(xy):
            raise ValueError("inconsistent track sample arrays")
        if np.any(np.diff(s) <= 0):
            raise ValueError("arc-length samples must be strictly increasing")
        if np.any(hw <= 0):
            raise ValueError("halfwidth must be positive")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "halfwidth", hw)
        # segment cache
        a = xy[:-1]
        d = xy[1:] - xy[:-1]
        seg_len = np.linalg.norm(d, axis=1)
        tang = d / seg_len[:, None]
        object.__setattr__(self, "_seg_a", a)
        object.__setattr__(self, "_seg_t", tang)
        object.__setattr__(self, "_seg_len", seg_len)

    @property
    def length(self):
        return float(self.s[-1])

    def wrap(self, s):
        if not self.closed:
            return s
        return np.mod(s, self.length)

    def nearest_segment(self, point):
        """Index of the closest segment (ties broken toward smaller s)."""
        p = np.asarray([float(ad.value_of(point[0])), float(ad.value_of(point[1]))])
        rel = p - self._seg_a
        t = np.clip(np.einsum("ij,ij->i", rel, self._seg_t) / self._seg_len, 0.0, 1.0)
        foot = self._seg_a + (t * self._seg_len)[:, None] * self._seg_t
        dist2 = np.sum((p - foot) ** 2, axis=1)
        return int(np.argmin(dist2))

    def frame(self, px, py, segment=None):
        """(s, e) of a point; autodiff-safe given the chosen segment.

        Also returns the constant gradients of s and e with respect to
        (px, py): the segment tangent and left normal.
        """
        if segment is None:
            segment = self.nearest_segment((px, py))
        a = self._seg_a[segment]
        t = self._seg_t[segment]
        n = np.array([-t[1], t[0]])  # left normal
        relx, rely = px - a[0], py - a[1]
        s = self.s[segment] + relx * t[0] + rely * t[1]
        e = relx * n[0] + rely * n[1]
        return s, e, t, n

    def project(self, point):
        """Nearest-point projection: (arc length, signed lateral offset)."""
        seg = self.nearest_segment(point)
        s, e, _, _ = self.frame(point[0], point[1], seg)
        s = float(ad.value_of(s))
        if self.closed:
            s = float(np.mod(s, self.length))
        return s, float(ad.value_of(e))

    def tangent_angle(self, segment):
        t = self._seg_t[segment]
        return float(np.arctan2(t[1], t[0]))

    def halfwidth_at(self, s):
        s = self.wrap(float(s))
        return float(np.interp(s, self.s, self.halfwidth))

    def point_at(self, s, e=0.0):
        """World coordinates of track-frame (s, e)."""
        s = self.wrap(float(s))
        idx = min(int(np.searchsorted(self.s, s, side="right")) - 1, len(self._seg_len) - 1)
        idx = max(idx, 0)
        a = self._seg_a[idx]
        t = self._seg_t[idx]
        n = np.array([-t[1], t[0]])
        return a + (s - self.s[idx]) * t + e * n

    def heading_at(self, s):
        s = self.wrap(float(s))
        idx = min(int(np.searchsorted(self.s, s, side="right")) - 1, len(self._seg_len) - 1)
        return self.tangent_angle(max(idx, 0))


def _from_points(points, halfwidth, closed):
    points = np.asarray(points, dtype=float)
    if closed and not np.allclose(points[0], points[-1]):
        points = np.vstack([points, points[0]])
    d = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(d)])
    hw = np.full(len(points), float(halfwidth))
    return Track(s, points, hw, closed)


def straight_track(length=200.0, halfwidth=6.0, ds=5.0):
    n = int(np.ceil(length / ds)) + 1
    xs = np.linspace(0.0, length, n)
    pts = np.stack([xs, np.zeros(n)], axis=1)
    return _from_points(pts, halfwidth, closed=False)


def oval_track(radius_x=80.0, radius_y=50.0, halfwidth=6.0, n_samples=256):
    ang = np.linspace(0.0, 2 * np.pi, n_samples, endpoint=False)
    pts = np.stack([radius_x * np.cos(ang), radius_y * np.sin(ang)], axis=1)
    return _from_points(pts, halfwidth, closed=True)


def chicane_track(straight_len=60.0, offset=18.0, corner_radius=20.0,
                  halfwidth=6.0, ds=2.0):
    """Straight, an S-shaped lateral shift, then another straight."""
    xs1 = np.arange(0.0, straight_len, ds)
    part1 = np.stack([xs1, np.zeros_like(xs1)], axis=1)
    n_curve = max(int(2 * corner_radius / ds) * 2, 16)
    t = np.linspace(0.0, 1.0, n_curve)
    # smoothstep lateral blend over a 4*corner_radius long window
    xs2 = straight_len + t * 4 * corner_radius
    ys2 = offset * (3 * t ** 2 - 2 * t ** 3)
    part2 = np.stack([xs2, ys2], axis=1)
    xs3 = np.arange(xs2[-1] + ds, xs2[-1] + straight_len, ds)
    part3 = np.stack([xs3, np.full_like(xs3, offset)], axis=1)
    pts = np.vstack([part1, part2, part3])
    return _from_points(pts, halfwidth, closed=False)


def make_track(kind, **kwargs):
    builders = {"straight": straight_track, "oval": oval_track, "chicane": chicane_track}
    if kind not in builders:
        raise ValueError(f"unknown track kind {kind!r}")
    return builders[kind](**kwargs)


class ArcUnwrapper:
    """Turn wrapped arc length on a closed track into a monotone signal."""

    def __init__(self, track, s0):
        self.track = track
        self.prev = float(s0)
        self.total = float(s0)

    def update(self, s):
        s = float(s)
        ds = s - self.prev
        if self.track.closed:
            half = 0.5 * self.track.length
            if ds < -half:
                ds += self.track.length
            elif ds > half:
                ds -= self.track.length
        self.prev = s
        self.total += ds
        return self.total


# ---------------------------------------------------------------------------
# CSV I/O: rows of (s, x, y, halfwidth)


def save_track(track, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["s", "x", "y", "halfwidth"])
        for s, (x, y), hw in zip(track.s, track.xy, track.halfwidth):
            writer.writerow([repr(float(s)), repr(float(x)), repr(float(y)), repr(float(hw))])
        f.write(f"# closed={int(track.closed)}\n")


def load_track(path):
    rows, closed = [], False
    with open(path, newline="") as f:
        for line in f:
            line = line.strip()
            if line.startswith("# closed="):
                closed = bool(int(line.split("=")[1]))
            elif line and not line.startswith("s,"):
                rows.append([float(v) for v in line.split(",")])
    arr = np.asarray(rows)
    return Track(arr[:, 0], arr[:, 1:3], arr[:, 3], closed)
