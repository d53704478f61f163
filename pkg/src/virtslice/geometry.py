"""Voronoi cells on a rectangle, cell/disc intersection areas, distance and angle laws."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .scenario import Region

DUPLICATE_TOL_KM = 1e-9


class DuplicateSiteError(ValueError):
    pass


@dataclass(frozen=True)
class Disc:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("radius must be >= 0")

    @property
    def area(self) -> float:
        return math.pi * self.radius ** 2


@dataclass(frozen=True)
class VoronoiCell:
    bs_index: int
    site: tuple[float, float]
    polygon: np.ndarray  # (k, 2), counter-clockwise
    area: float

    @property
    def circumradius(self) -> float:
        """Largest distance from the site to the cell boundary."""
        return float(np.max(np.hypot(*(self.polygon - self.site).T)))

    @property
    def inradius(self) -> float:
        """Distance from the site to the nearest cell edge."""
        return float(min(_point_segment_distance(self.site, p, q) for p, q in _edges(self.polygon)))

    def breakpoints(self) -> np.ndarray:
        """Radii where the disc/cell intersection changes its piecewise form."""
        pts = [np.hypot(*(self.polygon - self.site).T)]
        pts.append([_point_segment_distance(self.site, p, q) for p, q in _edges(self.polygon)])
        return np.unique(np.concatenate([np.ravel(a) for a in pts]))


def _edges(poly: np.ndarray):
    n = len(poly)
    for i in range(n):
        yield poly[i], poly[(i + 1) % n]


def _point_segment_distance(c, p, q) -> float:
    c, p, q = np.asarray(c, float), np.asarray(p, float), np.asarray(q, float)
    d = q - p
    dd = d @ d
    t = 0.0 if dd == 0 else min(1.0, max(0.0, float((c - p) @ d) / dd))
    return float(np.hypot(*(p + t * d - c)))


def polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _clip_halfplane(poly: list, normal: np.ndarray, offset: float) -> list:
    """Keep the part of ``poly`` where ``normal . p <= offset`` (Sutherland-Hodgman)."""
    out = []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        fp = normal @ p - offset
        fq = normal @ q - offset
        if fp <= 0:
            out.append(p)
        if (fp < 0 < fq) or (fq < 0 < fp):
            t = fp / (fp - fq)
            out.append(p + t * (q - p))
    return out


def voronoi_tessellation(sites: Sequence, region: Region) -> list[VoronoiCell]:
    sites = np.asarray(sites, dtype=float).reshape(-1, 2)
    if len(sites) == 0:
        raise ValueError("need at least one site")
    for i in range(len(sites)):
        if not region.contains(*sites[i]):
            raise ValueError(f"site {i} lies outside the region")
        for j in range(i):
            if np.hypot(*(sites[i] - sites[j])) < DUPLICATE_TOL_KM:
                raise DuplicateSiteError(f"sites {j} and {i} coincide")
    x0, y0, x1, y1 = region.bounds
    rect = [np.array(p, float) for p in ((x0, y0), (x1, y0), (x1, y1), (x0, y1))]
    cells = []
    for i, s in enumerate(sites):
        poly = list(rect)
        for j, t in enumerate(sites):
            if j == i:
                continue
            normal = t - s
            offset = 0.5 * (t @ t - s @ s)
            poly = _clip_halfplane(poly, normal, offset)
            if not poly:
                break
        arr = _dedupe(np.array(poly))
        cells.append(VoronoiCell(i, (float(s[0]), float(s[1])), arr, polygon_area(arr)))
    return cells


def _dedupe(poly: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    keep = []
    for i in range(len(poly)):
        if np.hypot(*(poly[i] - poly[i - 1])) > tol:
            keep.append(poly[i])
    return np.array(keep)


def nearest_site(points: np.ndarray, sites: np.ndarray) -> np.ndarray:
    d2 = ((points[:, None, :] - sites[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def _disc_triangle_area(a: np.ndarray, b: np.ndarray, r: float) -> float:
    """Signed area of (disc of radius r at origin) intersected with triangle (0, a, b)."""
    d = b - a
    qa = d @ d
    if qa == 0.0:
        return 0.0
    qb = 2.0 * (a @ d)
    qc = a @ a - r * r
    ts = [0.0]
    disc = qb * qb - 4.0 * qa * qc
    if disc > 0.0:
        sq = math.sqrt(disc)
        for t in sorted(((-qb - sq) / (2 * qa), (-qb + sq) / (2 * qa))):
            if 0.0 < t < 1.0:
                ts.append(t)
    ts.append(1.0)
    total = 0.0
    for t0, t1 in zip(ts[:-1], ts[1:]):
        p = a + t0 * d
        q = a + t1 * d
        mid = a + 0.5 * (t0 + t1) * d
        cross = p[0] * q[1] - p[1] * q[0]
        if mid @ mid <= r * r:
            total += 0.5 * cross
        else:
            total += 0.5 * r * r * math.atan2(cross, p @ q)
    return total


def polygon_disc_area(poly: np.ndarray, center, radius: float) -> float:
    if radius <= 0:
        return 0.0
    c = np.asarray(center, float)
    rel = poly - c
    total = 0.0
    for i in range(len(rel)):
        total += _disc_triangle_area(rel[i], rel[(i + 1) % len(rel)], radius)
    return abs(total)


def cell_disc_area(cell: VoronoiCell, u: float) -> float:
    """Area of the cell intersected with the disc of radius ``u`` about its site."""
    if u <= 0:
        return 0.0
    if u >= cell.circumradius:
        return cell.area
    return polygon_disc_area(cell.polygon, cell.site, u)


def fd_step(u: float) -> float:
    return max(1e-4, 1e-3 * u)


def cell_distance_pdf(cell: VoronoiCell, u: float) -> float:
    """Density of the site-to-UE distance for a UE uniform in the cell (1/km)."""
    if u < 0 or u >= cell.circumradius + fd_step(u):
        return 0.0
    h = fd_step(u)
    lo = max(0.0, u - h)
    val = (cell_disc_area(cell, u + h) - cell_disc_area(cell, lo)) / ((u + h - lo) * cell.area)
    return max(val, 0.0)


def circular_distance_pdf(q: float, u: float) -> float:
    if q <= 0:
        raise ValueError("q must be > 0")
    return 2.0 * u / q ** 2 if 0.0 <= u <= q else 0.0


def circular_distance_cdf(q: float, u: float) -> float:
    if u <= 0:
        return 0.0
    return min(u * u / (q * q), 1.0)


def angle_pdf(v: float) -> float:
    return 1.0 / (2.0 * math.pi) if 0.0 <= v < 2.0 * math.pi else 0.0


def interferer_distance(d, d_bj, theta):
    """Law-of-cosines distance from a UE at distance ``d`` from its server to interferer j."""
    r2 = np.asarray(d) ** 2 + np.asarray(d_bj) ** 2 - 2.0 * np.asarray(d) * np.asarray(d_bj) * np.cos(theta)
    r = np.sqrt(np.maximum(r2, 0.0))
    return float(r) if np.ndim(r) == 0 else r


def _intersect_intervals(a: list, b: list) -> list:
    out = []
    for x0, x1 in a:
        for y0, y1 in b:
            lo, hi = max(x0, y0), min(x1, y1)
            if hi > lo:
                out.append((lo, hi))
    return sorted(out)


def cell_arcs(cell: VoronoiCell, u: float) -> list[tuple[float, float]]:
    """Angular intervals in [0, 2 pi) where the circle of radius ``u`` about the
    site lies inside the cell."""
    two_pi = 2.0 * math.pi
    arcs = [(0.0, two_pi)]
    if u <= 0:
        return arcs
    site = np.asarray(cell.site, float)
    for p, q in _edges(cell.polygon):
        e = q - p
        length = math.hypot(*e)
        if length == 0.0:
            continue
        h = (e[0] * (site[1] - p[1]) - e[1] * (site[0] - p[0])) / length
        if u <= h:
            continue
        k = math.asin(max(-1.0, min(1.0, h / u)))
        phi = math.atan2(e[1], e[0])
        lo = (phi - k) % two_pi
        hi = lo + math.pi + 2.0 * k
        allowed = [(lo, min(hi, two_pi))]
        if hi > two_pi:
            allowed.append((0.0, hi - two_pi))
        arcs = _intersect_intervals(arcs, allowed)
        if not arcs:
            break
    return arcs


def arc_fraction(cell: VoronoiCell, u: float) -> float:
    """Fraction of the circle of radius ``u`` about the site that lies in the cell."""
    return sum(b - a for a, b in cell_arcs(cell, u)) / (2.0 * math.pi)
