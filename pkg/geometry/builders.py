"""Mesh generators: ring-stitched polar meshes and Kuhn-subdivided grids."""
from itertools import permutations
import logging
from math import ceil, pi

import numpy as np

from core.exceptions import GeometryError

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * pi


class RingBuilder:
    """
    Grows a 2D triangulation ring by ring around a center point.

    Each ring is a polyline of nodes at a fixed radius. Consecutive rings are
    stitched into triangles by walking both polylines in angular order, so
    interfaces placed at ring radii are resolved exactly by mesh facets.
    """

    def __init__(self, h, center=(0.0, 0.0), start_angle=0.0):
        self.h = float(h)
        self.center = np.asarray(center, dtype=float)
        self.start_angle = float(start_angle)
        self.points = []
        self.triangles = []
        self.tags = []

    def _add_nodes(self, radius, angles):
        first = len(self.points)
        for angle in angles:
            self.points.append(self.center + radius * np.array([np.cos(angle), np.sin(angle)]))
        return np.arange(first, first + len(angles))

    def closed_ring(self, radius, breakpoints=()):
        """Nodes of a full circle, with the given angles guaranteed to be nodes"""
        marks = sorted({(b - self.start_angle) % TWO_PI for b in breakpoints} | {0.0})
        marks.append(TWO_PI)
        angles = []
        for lo, hi in zip(marks[:-1], marks[1:]):
            count = max(1, ceil((hi - lo) * radius / self.h))
            if len(marks) == 2:
                count = max(count, 8)
            angles.extend(lo + (hi - lo) * np.arange(count) / count)
        angles = self.start_angle + np.asarray(angles)
        return self._add_nodes(radius, angles), angles

    def open_arc(self, radius, lo, hi, count=None):
        count = count or max(2, ceil((hi - lo) * radius / self.h))
        angles = lo + (hi - lo) * np.arange(count + 1) / count
        return self._add_nodes(radius, angles), angles

    def center_node(self):
        self.points.append(self.center.copy())
        return len(self.points) - 1

    def fan(self, hub, ring, tag):
        ids, _ = ring
        for a, b in zip(ids, np.roll(ids, -1)):
            self._triangle(hub, a, b, tag)

    def stitch(self, inner, outer, tag, closed=True):
        """Triangulate the strip between two rings (or two arcs spanning the same angles)"""
        a_ids, a_ang = inner
        b_ids, b_ang = outer
        if closed:
            a_ids = np.append(a_ids, a_ids[0])
            b_ids = np.append(b_ids, b_ids[0])
            a_ang = np.append(a_ang, a_ang[0] + TWO_PI)
            b_ang = np.append(b_ang, b_ang[0] + TWO_PI)
        i = j = 0
        while i < len(a_ids) - 1 or j < len(b_ids) - 1:
            advance_inner = j == len(b_ids) - 1 or (
                i < len(a_ids) - 1 and a_ang[i + 1] <= b_ang[j + 1]
            )
            if advance_inner:
                self._triangle(a_ids[i], a_ids[i + 1], b_ids[j], tag)
                i += 1
            else:
                self._triangle(a_ids[i], b_ids[j + 1], b_ids[j], tag)
                j += 1

    def _triangle(self, a, b, c, tag):
        self.triangles.append((a, b, c))
        self.tags.append(tag)

    def result(self):
        vertices = np.asarray(self.points)
        cells = np.asarray(self.triangles, dtype=np.int64)
        p = vertices[cells]
        signed = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        flip = signed < 0
        cells[flip] = cells[flip][:, [0, 2, 1]]
        return vertices, cells, np.asarray(self.tags)


def band_radii(inner, outer, h):
    count = max(1, ceil((outer - inner) / h))
    return inner + (outer - inner) * np.arange(1, count + 1) / count


def polar_disk(radius, h, center=(0.0, 0.0)):
    """Quasi-uniform triangulation of a disk"""
    builder = RingBuilder(h, center)
    previous = None
    hub = builder.center_node()
    for r in band_radii(0.0, radius, h):
        ring = builder.closed_ring(r)
        if previous is None:
            builder.fan(hub, ring, 0)
        else:
            builder.stitch(previous, ring, 0)
        previous = ring
    vertices, cells, _ = builder.result()
    return vertices, cells


def polar_annulus(inner, outer, h, center=(0.0, 0.0)):
    builder = RingBuilder(h, center)
    previous = builder.closed_ring(inner)
    for r in band_radii(inner, outer, h):
        ring = builder.closed_ring(r)
        builder.stitch(previous, ring, 0)
        previous = ring
    vertices, cells, _ = builder.result()
    return vertices, cells


def polar_bulged_disk(bands, outer_breaks, bulge, h, start_angle):
    """
    Disk made of concentric tagged bands, plus an annular-sector bulge.

    ``bands`` is a list of (outer radius, tag) pairs growing from the center;
    the last band ends on the outer circle. ``outer_breaks`` are angles that
    must be nodes of the outer circle. ``bulge`` is (depth, lo, hi, tag), an
    annular sector glued on the outer circle between angles lo and hi.
    """
    builder = RingBuilder(h, start_angle=start_angle)
    hub = builder.center_node()
    previous = None
    inner = 0.0
    outer_ring = None
    for index, (outer, tag) in enumerate(bands):
        radii = band_radii(inner, outer, h)
        for k, r in enumerate(radii):
            last = index == len(bands) - 1 and k == len(radii) - 1
            ring = builder.closed_ring(r, outer_breaks if last else ())
            if previous is None:
                builder.fan(hub, ring, tag)
            else:
                builder.stitch(previous, ring, tag)
            previous = ring
            outer_ring = ring
        inner = outer

    depth, lo, hi, tag = bulge
    ids, angles = outer_ring
    relative = (angles - start_angle) % TWO_PI
    lo_rel, hi_rel = (lo - start_angle) % TWO_PI, (hi - start_angle) % TWO_PI
    on_arc = (relative >= lo_rel - 1e-12) & (relative <= hi_rel + 1e-12)
    if on_arc.sum() < 2:
        raise GeometryError('bulge arc is not resolved by the outer circle', key='geometry.mesh_size')
    arc_ids = ids[on_arc]
    arc_angles = start_angle + relative[on_arc]
    previous = (arc_ids, arc_angles)
    for r in band_radii(inner, inner + depth, h):
        arc = builder.open_arc(r, arc_angles[0], arc_angles[-1])
        builder.stitch(previous, arc, tag, closed=False)
        previous = arc
    return builder.result()


def kuhn_grid(axes):
    """
    Structured simplicial mesh of a tensor grid, each brick cut into d! simplices.

    All bricks share one Kuhn subdivision so the result is conforming.
    """
    axes = [np.asarray(axis, dtype=float) for axis in axes]
    dim = len(axes)
    counts = np.array([len(axis) - 1 for axis in axes])
    if np.any(counts < 1):
        raise GeometryError('every grid axis needs at least two coordinates')
    grid = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, dim)
    shape = tuple(counts + 1)
    corners = np.stack(
        np.meshgrid(*[np.arange(n) for n in counts], indexing='ij'), axis=-1
    ).reshape(-1, dim)
    cells = []
    for order in permutations(range(dim)):
        walk = [corners.copy()]
        for axis in order:
            step = walk[-1].copy()
            step[:, axis] += 1
            walk.append(step)
        cells.append(np.stack([np.ravel_multi_index(tuple(w.T), shape) for w in walk], axis=1))
    return grid, np.concatenate(cells, axis=0)


def carve(vertices, cells, keep):
    """Keep the flagged cells and renumber the vertices they use"""
    cells = cells[keep]
    used, inverse = np.unique(cells, return_inverse=True)
    return vertices[used], inverse.reshape(cells.shape)
