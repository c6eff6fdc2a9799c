"""Star-shaped planar domains and their geometric constants.

Three shapes are supported (disk, axis-aligned rectangle, convex polygon).
Each carries a reference point ``x0`` and a boundary quadrature made of
composite midpoint samples on arc length.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    """Base class for rejected domain specifications."""


class DegenerateShapeError(GeometryError):
    pass


class NonInteriorPointError(GeometryError):
    pass


class NonConvexPolygonError(GeometryError):
    pass


@dataclass(frozen=True)
class Disk:
    radius: float
    center: tuple[float, float] = (0.0, 0.0)

    kind = "disk"


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned rectangle ``[cx-a, cx+a] x [cy-b, cy+b]``."""

    a: float
    b: float
    center: tuple[float, float] = (0.0, 0.0)

    kind = "rectangle"

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        cx, cy = self.center
        return cx - self.a, cx + self.a, cy - self.b, cy + self.b


@dataclass(frozen=True)
class Polygon:
    vertices: tuple[tuple[float, float], ...]

    kind = "polygon"


Shape = Disk | Rectangle | Polygon


@dataclass(frozen=True)
class DomainGeometry:
    shape: Shape
    x0: tuple[float, float]
    points: np.ndarray = field(repr=False)
    normals: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def boundary_samples(self):
        return list(zip(self.points, self.normals, self.weights))

    @property
    def perimeter(self) -> float:
        s = self.shape
        if isinstance(s, Disk):
            return 2 * math.pi * s.radius
        if isinstance(s, Rectangle):
            return 4.0 * (s.a + s.b)
        start, end = _polygon_edges(np.asarray(s.vertices, dtype=float))
        return float(np.sum(np.hypot(*(end - start).T)))

    @property
    def sampled_perimeter(self) -> float:
        return float(np.sum(self.weights))

    @property
    def area(self) -> float:
        s = self.shape
        if isinstance(s, Disk):
            return math.pi * s.radius**2
        if isinstance(s, Rectangle):
            return 4.0 * s.a * s.b
        v = np.asarray(s.vertices)
        x, y = v[:, 0], v[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def translated(self, shift) -> "DomainGeometry":
        sx, sy = shift
        s = self.shape
        if isinstance(s, Disk):
            shape = Disk(s.radius, (s.center[0] + sx, s.center[1] + sy))
        elif isinstance(s, Rectangle):
            shape = Rectangle(s.a, s.b, (s.center[0] + sx, s.center[1] + sy))
        else:
            shape = Polygon(tuple((x + sx, y + sy) for x, y in s.vertices))
        return make_domain(shape, (self.x0[0] + sx, self.x0[1] + sy), len(self.weights))

    def scaled(self, factor: float) -> "DomainGeometry":
        s = self.shape
        if isinstance(s, Disk):
            shape = Disk(s.radius * factor, (s.center[0] * factor, s.center[1] * factor))
        elif isinstance(s, Rectangle):
            shape = Rectangle(s.a * factor, s.b * factor,
                              (s.center[0] * factor, s.center[1] * factor))
        else:
            shape = Polygon(tuple((x * factor, y * factor) for x, y in s.vertices))
        return make_domain(shape, (self.x0[0] * factor, self.x0[1] * factor), len(self.weights))


@dataclass(frozen=True)
class GeometryConstants:
    rho0: float
    d: float
    m1: float
    m2: float
    area: float
    perimeter: float

    def as_dict(self) -> dict[str, float]:
        return {"rho0": self.rho0, "d": self.d, "m1": self.m1, "m2": self.m2,
                "area": self.area, "perimeter": self.perimeter}


def _polygon_edges(vertices: np.ndarray):
    start = vertices
    end = np.roll(vertices, -1, axis=0)
    return start, end


def _check_polygon(vertices: np.ndarray) -> None:
    if vertices.ndim != 2 or vertices.shape[1] != 2 or len(vertices) < 3:
        raise DegenerateShapeError("polygon needs at least 3 vertices given as (x, y) pairs")
    start, end = _polygon_edges(vertices)
    edge = end - start
    if np.any(np.hypot(edge[:, 0], edge[:, 1]) <= 0.0):
        raise DegenerateShapeError("polygon has a zero-length edge")
    nxt = np.roll(edge, -1, axis=0)
    cross = edge[:, 0] * nxt[:, 1] - edge[:, 1] * nxt[:, 0]
    if np.any(cross <= 0.0):
        raise NonConvexPolygonError(
            "polygon must be strictly convex with counter-clockwise vertex order")
    # a convex turn sequence can still wind twice
    angles = np.arctan2(edge[:, 1], edge[:, 0])
    turn = np.mod(np.diff(np.append(angles, angles[0])), 2 * np.pi)
    if not math.isclose(float(np.sum(turn)), 2 * np.pi, rel_tol=1e-9):
        raise NonConvexPolygonError("polygon boundary winds more than once")


def _inside(shape: Shape, x0: np.ndarray) -> bool:
    if isinstance(shape, Disk):
        return float(np.hypot(*(x0 - np.asarray(shape.center)))) < shape.radius
    if isinstance(shape, Rectangle):
        xmin, xmax, ymin, ymax = shape.bounds
        return xmin < x0[0] < xmax and ymin < x0[1] < ymax
    v = np.asarray(shape.vertices, dtype=float)
    start, end = _polygon_edges(v)
    edge = end - start
    rel = x0 - start
    return bool(np.all(edge[:, 0] * rel[:, 1] - edge[:, 1] * rel[:, 0] > 0.0))


def _segment_samples(p: np.ndarray, q: np.ndarray, n: int):
    s = (np.arange(n) + 0.5) / n
    pts = p + s[:, None] * (q - p)
    length = float(np.hypot(*(q - p)))
    tangent = (q - p) / length
    normal = np.array([tangent[1], -tangent[0]])
    return pts, np.tile(normal, (n, 1)), np.full(n, length / n)


def _boundary(shape: Shape, n: int):
    if isinstance(shape, Disk):
        theta = 2 * np.pi * (np.arange(n) + 0.5) / n
        nrm = np.column_stack([np.cos(theta), np.sin(theta)])
        pts = np.asarray(shape.center) + shape.radius * nrm
        return pts, nrm, np.full(n, 2 * np.pi * shape.radius / n)
    if isinstance(shape, Rectangle):
        xmin, xmax, ymin, ymax = shape.bounds
        v = np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]])
    else:
        v = np.asarray(shape.vertices, dtype=float)
    start, end = _polygon_edges(v)
    lengths = np.hypot(*(end - start).T)
    # distribute samples proportionally to edge length, at least one per edge
    counts = np.maximum(1, np.round(n * lengths / lengths.sum()).astype(int))
    parts = [_segment_samples(p, q, c) for p, q, c in zip(start, end, counts)]
    return (np.concatenate([a for a, _, _ in parts]),
            np.concatenate([b for _, b, _ in parts]),
            np.concatenate([c for _, _, c in parts]))


def make_domain(shape: Shape, x0, boundary_resolution: int = 256) -> DomainGeometry:
    """Validate a shape and reference point and build the boundary quadrature."""
    if boundary_resolution < 3:
        raise GeometryError("boundary_resolution must be at least 3")
    if isinstance(shape, Disk):
        if not shape.radius > 0:
            raise DegenerateShapeError(f"disk radius must be positive, got {shape.radius}")
    elif isinstance(shape, Rectangle):
        if not (shape.a > 0 and shape.b > 0):
            raise DegenerateShapeError(
                f"rectangle half-widths must be positive, got a={shape.a}, b={shape.b}")
    elif isinstance(shape, Polygon):
        _check_polygon(np.asarray(shape.vertices, dtype=float))
    else:
        raise GeometryError(f"unsupported shape {shape!r}")

    x0_arr = np.asarray(x0, dtype=float)
    if x0_arr.shape != (2,) or not np.all(np.isfinite(x0_arr)):
        raise GeometryError(f"x0 must be two finite reals, got {x0!r}")
    if not _inside(shape, x0_arr):
        raise NonInteriorPointError(f"reference point x0={tuple(x0_arr)} is not interior to the domain")

    pts, nrm, wts = _boundary(shape, boundary_resolution)
    for a in (pts, nrm, wts):
        a.setflags(write=False)
    return DomainGeometry(shape, (float(x0_arr[0]), float(x0_arr[1])), pts, nrm, wts)


def sampled_rho0_d(domain: DomainGeometry) -> tuple[float, float]:
    """rho0 and d from the boundary samples alone (cross-check route)."""
    rel = domain.points - np.asarray(domain.x0)
    support = np.einsum("ij,ij->i", rel, domain.normals)
    return float(support.min()), float(np.hypot(rel[:, 0], rel[:, 1]).max())


def compute_geometry_constants(domain: DomainGeometry) -> GeometryConstants:
    s = domain.shape
    x0 = np.asarray(domain.x0)
    if isinstance(s, Disk):
        off = float(np.hypot(*(x0 - np.asarray(s.center))))
        # on a circle (x - x0).nu = R - (x0 - c).nu, minimised along the offset direction
        rho0 = s.radius - off
        d = s.radius + off
    else:
        if isinstance(s, Rectangle):
            xmin, xmax, ymin, ymax = s.bounds
            v = np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]])
        else:
            v = np.asarray(s.vertices, dtype=float)
        start, end = _polygon_edges(v)
        edge = end - start
        normal = np.column_stack([edge[:, 1], -edge[:, 0]]) / np.hypot(*edge.T)[:, None]
        rho0 = float(np.min(np.einsum("ij,ij->i", start - x0, normal)))
        d = float(np.max(np.hypot(*(v - x0).T)))
    if not rho0 > 0:
        raise NonInteriorPointError(f"x0 is not a star center (rho0={rho0})")
    return GeometryConstants(rho0=rho0, d=d, m1=1.5 / rho0, m2=1.0 + d / rho0,
                             area=domain.area, perimeter=domain.perimeter)


def regular_polygon(n: int, radius: float = 1.0, center=(0.0, 0.0)) -> Polygon:
    theta = 2 * np.pi * np.arange(n) / n
    return Polygon(tuple((center[0] + radius * math.cos(t), center[1] + radius * math.sin(t))
                         for t in theta))
