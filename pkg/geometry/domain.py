"""
Tagged computational domains.

A domain is the extended body (the reference body plus a bulge glued on the
accessible part of its boundary), meshed so that every interface the
experiments need is resolved by mesh facets:

    cell tags   A, OmegaMinusDtilde, DtildeMinusDprime, DprimeMinusD, D
    facet tags  Sigma, Sigma0, OuterRest, dOmega, dOmegaTilde, dDtilde, dDprime, dD
"""
from dataclasses import asdict, dataclass, fields, replace
from functools import cached_property
import logging
from math import ceil, pi, sin, sqrt
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from core.exceptions import GeometryError
from .builders import carve, kuhn_grid, polar_bulged_disk
from .mesh import Region, SimplexMesh

logger = logging.getLogger(__name__)

REGION_TAGS = ('A', 'OmegaMinusDtilde', 'DtildeMinusDprime', 'DprimeMinusD', 'D')
TAG_CODES = {tag: code for code, tag in enumerate(REGION_TAGS)}

REGION_UNIONS = {
    'OmegaTilde': REGION_TAGS,
    'Omega': ('OmegaMinusDtilde', 'DtildeMinusDprime', 'DprimeMinusD', 'D'),
    'Dtilde': ('DtildeMinusDprime', 'DprimeMinusD', 'D'),
    'Dprime': ('DprimeMinusD', 'D'),
    'OmegaTildeMinusD': ('A', 'OmegaMinusDtilde', 'DtildeMinusDprime', 'DprimeMinusD'),
    'OmegaTildeMinusDprime': ('A', 'OmegaMinusDtilde', 'DtildeMinusDprime'),
    'OmegaTildeMinusDtilde': ('A', 'OmegaMinusDtilde'),
    **{tag: (tag,) for tag in REGION_TAGS},
}

BOUNDARY_TAGS = ('Sigma', 'Sigma0', 'OuterRest', 'dOmega', 'dOmegaTilde', 'dDtilde', 'dDprime', 'dD')

# region each boundary tag is oriented against (normals point out of it)
FACET_SIDES = {
    'Sigma': 'Omega',
    'Sigma0': 'Omega',
    'OuterRest': 'Omega',
    'dOmega': 'Omega',
    'dOmegaTilde': 'OmegaTilde',
    'dDtilde': 'Dtilde',
    'dDprime': 'Dprime',
    'dD': 'D',
}


@dataclass(frozen=True)
class GeometryParams:
    dimension: int = 2
    family: str = 'disk'
    mesh_size: float = 0.0125
    rho0: float = 0.5
    M0: float = 1.0
    d0: float = 0.3
    rho1: Optional[float] = 0.1
    rho2: float = 0.12
    h1: float = 0.055
    diam_omega: Optional[float] = None
    extent: float = 1.0
    d_size: float = 0.25
    dprime_size: float = 0.4
    dtilde_size: float = 0.55
    sigma_angle: float = pi
    sigma0_fraction: float = 0.5
    bulge_depth: Optional[float] = None
    mesh_layers: int = 4

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise GeometryError(f'unknown geometry keys: {", ".join(unknown)}', key='geometry')
        return cls(**data)


def _require(condition, message, key):
    if not condition:
        raise GeometryError(message, key=f'geometry.{key}')


class ShapeFamily:
    """Analytic description of one kind of body; subclasses build and tag its mesh"""
    name = None
    dimensions = ()

    def center(self, p):
        raise NotImplementedError

    def diameter(self, p):
        raise NotImplementedError

    def rho0_max(self, p):
        raise NotImplementedError

    def clearance(self, p, size):
        """Distance from the boundary of a centered inclusion of the given size to the outer boundary"""
        raise NotImplementedError

    def sigma_depth(self, p):
        """Distance from the middle of Sigma to the rest of the outer boundary"""
        raise NotImplementedError

    def marked_point(self, p):
        raise NotImplementedError

    def bulge_inradius(self, p):
        raise NotImplementedError

    def sigma_predicate(self, p):
        raise NotImplementedError

    def build(self, p):
        raise NotImplementedError

    def resolve(self, p):
        """Validate the parameters and fill in the derived ones"""
        _require(p.dimension in self.dimensions,
                 f'family {self.name} does not support dimension {p.dimension}', 'dimension')
        if p.bulge_depth is None:
            p = replace(p, bulge_depth=0.4 * p.extent)
        for key in ('mesh_size', 'rho0', 'd0', 'rho2', 'h1', 'extent', 'd_size', 'bulge_depth'):
            _require(getattr(p, key) > 0, f'{key} must be positive', key)
        _require(p.mesh_layers >= 1, 'mesh_layers must be at least 1', 'mesh_layers')
        _require(p.d0 <= p.rho0, 'd0 must not exceed rho0 (the size condition on Sigma requires 0 < d0 <= rho0)', 'd0')
        _require(p.M0 >= 1.0, 'the family boundary needs a Lipschitz constant M0 >= 1', 'M0')
        _require(p.rho0 <= self.rho0_max(p) + 1e-12,
                 f'rho0 exceeds the Lipschitz chart radius {self.rho0_max(p):.4g} of the family', 'rho0')
        _require(p.d_size < p.dprime_size < p.dtilde_size,
                 'inclusions must be nested: d_size < dprime_size < dtilde_size', 'dprime_size')
        _require(self.clearance(p, p.d_size) >= p.rho0,
                 'D must stay at distance rho0 from the outer boundary', 'rho0')
        _require(p.dprime_size - p.d_size > p.rho2, 'dist(dD, dDprime) must exceed rho2', 'rho2')
        _require(p.dtilde_size - p.dprime_size > p.rho2, 'dist(dDprime, dDtilde) must exceed rho2', 'rho2')
        _require(self.clearance(p, p.dtilde_size) - p.rho2 > p.rho2,
                 'dist(dDtilde, boundary of the rho2-interior) must exceed rho2', 'rho2')
        _require(p.h1 < p.rho2 / 2, 'h1 must be below rho2 / 2', 'h1')
        _require(0 < p.sigma0_fraction < 1, 'Sigma0 must be compactly inside Sigma', 'sigma0_fraction')
        _require(self.sigma_depth(p) >= p.d0, 'Sigma is too small for the prescribed d0', 'd0')
        inradius = self.bulge_inradius(p)
        if p.rho1 is None:
            p = replace(p, rho1=inradius / 2)
        _require(p.rho1 > 0, 'rho1 must be positive', 'rho1')
        _require(2 * p.rho1 <= inradius + 1e-12,
                 f'ball of radius 2*rho1 does not fit in A (inradius {inradius:.4g})', 'rho1')
        diameter = self.diameter(p)
        if p.diam_omega is None:
            p = replace(p, diam_omega=diameter)
        _require(abs(p.diam_omega - diameter) <= 1e-9 * diameter,
                 f'diam_omega {p.diam_omega} disagrees with the family diameter {diameter:.6g}', 'diam_omega')
        bound = min(p.rho1, p.rho2, p.h1) / p.mesh_layers
        _require(p.mesh_size < bound,
                 f'mesh_size {p.mesh_size} must be below min(rho1, rho2, h1) / {p.mesh_layers} = {bound:.4g}',
                 'mesh_size')
        return p


class DiskFamily(ShapeFamily):
    """Unit-style disk, Sigma an arc centered at the top, bulge an annular sector"""
    name = 'disk'
    dimensions = (2,)

    def _arcs(self, p):
        top = pi / 2
        half_sigma = p.sigma_angle / 2
        half_sigma0 = p.sigma0_fraction * half_sigma
        return (top - half_sigma, top + half_sigma), (top - half_sigma0, top + half_sigma0)

    def center(self, p):
        return np.zeros(2)

    def diameter(self, p):
        return 2 * p.extent

    def rho0_max(self, p):
        return p.extent / sqrt(2)

    def clearance(self, p, size):
        return p.extent - size

    def sigma_depth(self, p):
        return 2 * p.extent * sin(p.sigma_angle / 4)

    def marked_point(self, p):
        return np.array([0.0, p.extent + p.bulge_depth / 2])

    def bulge_inradius(self, p):
        half = p.sigma0_fraction * p.sigma_angle / 2
        side = (p.extent + p.bulge_depth / 2) * sin(half) if half < pi / 2 else np.inf
        return min(p.bulge_depth / 2, side)

    def resolve(self, p):
        _require(0 < p.sigma_angle < 2 * pi, 'sigma_angle must lie in (0, 2*pi)', 'sigma_angle')
        return super().resolve(p)

    def sigma_predicate(self, p):
        (lo, _), _ = self._arcs(p)

        def predicate(points):
            angle = np.arctan2(points[:, 1], points[:, 0])
            return np.mod(angle - lo, 2 * pi) < p.sigma_angle
        return predicate

    def build(self, p):
        sigma, sigma0 = self._arcs(p)
        bands = [
            (p.d_size, TAG_CODES['D']),
            (p.dprime_size, TAG_CODES['DprimeMinusD']),
            (p.dtilde_size, TAG_CODES['DtildeMinusDprime']),
            (p.extent, TAG_CODES['OmegaMinusDtilde']),
        ]
        return polar_bulged_disk(
            bands,
            outer_breaks=(*sigma, *sigma0),
            bulge=(p.bulge_depth, sigma0[0], sigma0[1], TAG_CODES['A']),
            h=p.mesh_size,
            start_angle=sigma0[0],
        )


def graded_axis(breaks, h):
    """Grid coordinates through every breakpoint, spacing at most h"""
    breaks = np.unique(np.round(np.asarray(breaks, dtype=float), 12))
    pieces = [breaks[:1]]
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        count = max(1, ceil((hi - lo) / h - 1e-9))
        pieces.append(np.linspace(lo, hi, count + 1)[1:])
    return np.concatenate(pieces)


def _nested_tags(distance, p):
    tags = np.full(len(distance), TAG_CODES['OmegaMinusDtilde'])
    tags[distance < p.dtilde_size] = TAG_CODES['DtildeMinusDprime']
    tags[distance < p.dprime_size] = TAG_CODES['DprimeMinusD']
    tags[distance < p.d_size] = TAG_CODES['D']
    return tags


class BoxFamily(ShapeFamily):
    """Square or cube (0, L)^d, Sigma its top face, bulge a prism over the middle of Sigma"""
    dimensions = (2, 3)

    def __init__(self, name):
        self.name = name

    def center(self, p):
        return np.full(p.dimension, p.extent / 2)

    def diameter(self, p):
        return p.extent * sqrt(p.dimension)

    def rho0_max(self, p):
        return p.extent / 2

    def clearance(self, p, size):
        return p.extent / 2 - size

    def sigma_depth(self, p):
        return p.extent / 2

    def _sigma0_half(self, p):
        return p.sigma0_fraction * p.extent / 2

    def marked_point(self, p):
        point = self.center(p)
        point[-1] = p.extent + p.bulge_depth / 2
        return point

    def bulge_inradius(self, p):
        return min(p.bulge_depth / 2, self._sigma0_half(p))

    def sigma_predicate(self, p):
        def predicate(points):
            return np.abs(points[:, -1] - p.extent) < 1e-9 * p.extent
        return predicate

    def build(self, p):
        c = p.extent / 2
        s0 = self._sigma0_half(p)
        sizes = (p.d_size, p.dprime_size, p.dtilde_size)
        tangential = [0.0, p.extent, c - s0, c + s0, *[c - s for s in sizes], *[c + s for s in sizes]]
        normal = [0.0, p.extent, p.extent + p.bulge_depth, *[c - s for s in sizes], *[c + s for s in sizes]]
        axes = [graded_axis(tangential, p.mesh_size)] * (p.dimension - 1) + [graded_axis(normal, p.mesh_size)]
        vertices, cells = kuhn_grid(axes)
        centers = vertices[cells].mean(axis=1)
        in_omega = np.all((centers > 0) & (centers < p.extent), axis=1)
        in_bulge = (centers[:, -1] > p.extent) & np.all(np.abs(centers[:, :-1] - c) < s0, axis=1)
        keep = in_omega | in_bulge
        tags = np.where(in_bulge, TAG_CODES['A'], _nested_tags(np.abs(centers - c).max(axis=1), p))[keep]
        vertices, cells = carve(vertices, cells, keep)
        return vertices, cells, tags


class BallFamily(ShapeFamily):
    """Ball of radius R, Sigma a polar cap, bulge a spherical-shell cap over the middle of Sigma"""
    name = 'ball'
    dimensions = (3,)

    def center(self, p):
        return np.zeros(3)

    def diameter(self, p):
        return 2 * p.extent

    def rho0_max(self, p):
        return p.extent / sqrt(2)

    def clearance(self, p, size):
        return p.extent - size

    def sigma_depth(self, p):
        return 2 * p.extent * sin(p.sigma_angle / 4)

    def marked_point(self, p):
        return np.array([0.0, 0.0, p.extent + p.bulge_depth / 2])

    def bulge_inradius(self, p):
        half = p.sigma0_fraction * p.sigma_angle / 2
        side = (p.extent + p.bulge_depth / 2) * sin(half) if half < pi / 2 else np.inf
        return min(p.bulge_depth / 2, side)

    def resolve(self, p):
        _require(0 < p.sigma_angle <= pi, 'sigma_angle must lie in (0, pi] for the ball', 'sigma_angle')
        return super().resolve(p)

    @staticmethod
    def _polar(points):
        radius = np.linalg.norm(points, axis=1)
        return np.arccos(np.clip(points[:, 2] / np.maximum(radius, 1e-300), -1.0, 1.0))

    def sigma_predicate(self, p):
        def predicate(points):
            return self._polar(points) < p.sigma_angle / 2
        return predicate

    def build(self, p):
        R = p.extent
        top = R + p.bulge_depth
        sizes = (p.d_size, p.dprime_size, p.dtilde_size)
        breaks = [-R, R, *sizes, *[-s for s in sizes]]
        axes = [graded_axis(breaks, p.mesh_size)] * 2 + [graded_axis([*breaks, top], p.mesh_size)]
        vertices, cells = kuhn_grid(axes)
        centers = vertices[cells].mean(axis=1)
        radius = np.linalg.norm(centers, axis=1)
        in_omega = radius < R
        in_bulge = (radius >= R) & (radius < top) & (
            self._polar(centers) < p.sigma0_fraction * p.sigma_angle / 2
        )
        keep = in_omega | in_bulge
        tags = np.where(in_bulge, TAG_CODES['A'], _nested_tags(radius, p))[keep]
        vertices, cells = carve(vertices, cells, keep)
        return vertices, cells, tags


FAMILIES = {
    'disk': DiskFamily(),
    'square': BoxFamily('square'),
    'box': BoxFamily('box'),
    'ball': BallFamily(),
}


def get_family(name):
    try:
        return FAMILIES[name]
    except KeyError:
        raise GeometryError(f'unknown shape family {name!r}', key='geometry.family') from None


def tag_facets(mesh, cell_tags, sigma_predicate):
    """Boundary and interface facet tags, derived from the cell tags"""
    fc = mesh.facet_cells
    interior = fc[:, 1] >= 0
    other = np.where(interior, fc[:, 1], fc[:, 0])
    tag0, tag1 = cell_tags[fc[:, 0]], cell_tags[other]

    def crossing(group):
        codes = [TAG_CODES[t] for t in REGION_UNIONS[group]]
        return interior & (np.isin(tag0, codes) ^ np.isin(tag1, codes))

    in_omega0 = tag0 != TAG_CODES['A']
    in_omega1 = interior & (tag1 != TAG_CODES['A'])
    omega_boundary = in_omega0 ^ in_omega1
    sigma0 = omega_boundary & interior
    predicate = sigma_predicate(mesh.facet_centroids)
    if np.any(sigma0 & ~predicate):
        raise GeometryError('Sigma0 is not contained in Sigma', key='geometry.sigma0_fraction')
    sigma = omega_boundary & (predicate | sigma0)
    return {
        'Sigma': np.flatnonzero(sigma),
        'Sigma0': np.flatnonzero(sigma0),
        'OuterRest': np.flatnonzero(omega_boundary & ~sigma),
        'dOmega': np.flatnonzero(omega_boundary),
        'dOmegaTilde': np.flatnonzero(~interior),
        'dDtilde': np.flatnonzero(crossing('Dtilde')),
        'dDprime': np.flatnonzero(crossing('Dprime')),
        'dD': np.flatnonzero(crossing('D')),
    }


@dataclass(eq=False)
class MeshedDomain:
    mesh: SimplexMesh
    cell_tags: np.ndarray
    facet_tags: dict
    marked_point: np.ndarray
    params: GeometryParams
    center: np.ndarray

    def __post_init__(self):
        self._regions = {}

    @property
    def dim(self):
        return self.mesh.dim

    @property
    def rho1(self):
        return self.params.rho1

    @property
    def h(self):
        return self.params.mesh_size

    def region(self, name):
        if name not in self._regions:
            try:
                members = REGION_UNIONS[name]
            except KeyError:
                raise GeometryError(f'unknown region {name!r}') from None
            codes = [TAG_CODES[tag] for tag in members]
            self._regions[name] = Region(self.mesh, np.flatnonzero(np.isin(self.cell_tags, codes)), name)
        return self._regions[name]

    def facets(self, tag):
        try:
            return self.facet_tags[tag]
        except KeyError:
            raise GeometryError(f'unknown boundary tag {tag!r}') from None

    def nodes(self, tag):
        return np.unique(self.mesh.facets[self.facets(tag)])

    @cached_property
    def sigma_dofs(self):
        """Nodes of Sigma that are not shared with the rest of the outer boundary"""
        return np.setdiff1d(self.nodes('Sigma'), self.nodes('OuterRest'))

    def ball(self, center, radius, name='ball', within=None):
        """Cells whose barycenters lie within radius of center"""
        inside = np.linalg.norm(self.mesh.barycenters - np.asarray(center), axis=1) < radius
        if within is not None:
            inside &= self.region(within).mask
        return Region(self.mesh, np.flatnonzero(inside), name)

    def summary(self):
        tags = {tag: int(np.count_nonzero(self.cell_tags == code)) for tag, code in TAG_CODES.items()}
        return {
            'dimension': self.dim,
            'family': self.params.family,
            'vertices': self.mesh.n_vertices,
            'cells': self.mesh.n_cells,
            'max_cell_diameter': self.mesh.mesh_size,
            'cell_tags': tags,
            'facet_tags': {tag: int(len(ids)) for tag, ids in self.facet_tags.items()},
            'sigma_dofs': int(len(self.sigma_dofs)),
            'marked_point': self.marked_point.tolist(),
        }

    def check_invariants(self):
        for tag, code in TAG_CODES.items():
            if not np.any(self.cell_tags == code):
                raise GeometryError(f'region {tag} has no cells; refine the mesh', key='geometry.mesh_size')
        for tag in ('Sigma', 'Sigma0', 'OuterRest', 'dDtilde', 'dDprime', 'dD'):
            if not len(self.facet_tags[tag]):
                raise GeometryError(f'boundary tag {tag} is empty', key='geometry.mesh_size')
        if np.intersect1d(self.nodes('dDtilde'), self.nodes('dOmegaTilde')).size:
            raise GeometryError('dDtilde touches the outer boundary', key='geometry.dtilde_size')
        for name in ('OmegaTilde', 'OmegaTildeMinusDprime', 'OmegaTildeMinusDtilde'):
            if not self.region(name).is_connected():
                raise GeometryError(f'{name} is not connected', key='geometry.mesh_size')
        ball = self.ball(self.marked_point, 2 * self.rho1)
        if not len(ball) or np.any(self.cell_tags[ball.cells] != TAG_CODES['A']):
            raise GeometryError('ball B(Q, 2*rho1) is not contained in A', key='geometry.rho1')


def build_domain(params):
    """Validate params, mesh the extended body and tag it"""
    family = get_family(params.family)
    params = family.resolve(params)
    vertices, cells, tags = family.build(params)
    mesh = SimplexMesh(vertices, cells)
    facet_tags = tag_facets(mesh, tags, family.sigma_predicate(params))
    domain = MeshedDomain(mesh, np.asarray(tags), facet_tags, family.marked_point(params), params,
                          family.center(params))
    domain.check_invariants()
    logger.info('Built %s mesh: %d vertices, %d cells, max diameter %.4g',
                params.family, mesh.n_vertices, mesh.n_cells, mesh.mesh_size)
    if mesh.mesh_size > 2 * params.mesh_size:
        logger.warning('Largest cell diameter %.4g exceeds twice the nominal mesh size %.4g',
                       mesh.mesh_size, params.mesh_size)
    return domain


def _rule(dim, m):
    """Barycentric points and relative weights of a uniform facet subdivision"""
    if dim == 2:
        t = (np.arange(m) + 0.5) / m
        return np.stack([1 - t, t], axis=1), np.full(m, 1.0 / m)
    points = []
    for i in range(m):
        for j in range(m - i):
            points.append(((i + 1 / 3) / m, (j + 1 / 3) / m))
            if i + j <= m - 2:
                points.append(((i + 2 / 3) / m, (j + 2 / 3) / m))
    st = np.asarray(points)
    return np.column_stack([1 - st.sum(axis=1), st]), np.full(len(st), 1.0 / m ** 2)


@dataclass(eq=False)
class SurfaceSample:
    """Quadrature points on tagged facets with outward normals and weights"""
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    facets: np.ndarray
    nodes: np.ndarray
    coords: np.ndarray

    def __len__(self):
        return len(self.points)

    def interpolate(self, values):
        """P1 trace of nodal values at the sample points"""
        return np.einsum('pk,pk->p', self.coords, np.asarray(values)[self.nodes])


def sample_facets(mesh, facet_ids, spacing, normals=None):
    facet_ids = np.asarray(facet_ids)
    dim = mesh.dim
    corners = mesh.vertices[mesh.facets[facet_ids]]
    extent = np.max(np.linalg.norm(corners - corners[:, :1], axis=2), axis=1)
    if dim == 3:
        extent = np.maximum(extent, np.linalg.norm(corners[:, 2] - corners[:, 1], axis=1))
    divisions = np.maximum(1, np.ceil(extent / spacing - 1e-9).astype(int))
    parts = []
    for m in np.unique(divisions):
        chosen = np.flatnonzero(divisions == m)
        coords, rel = _rule(dim, int(m))
        q = len(rel)
        ids = np.repeat(facet_ids[chosen], q)
        local = np.tile(coords, (len(chosen), 1))
        points = np.einsum('fqk,fkd->fqd', np.broadcast_to(coords, (len(chosen), q, dim)),
                           corners[chosen]).reshape(-1, dim)
        weights = np.outer(mesh.facet_measures[facet_ids[chosen]], rel).reshape(-1)
        normal = None if normals is None else np.repeat(normals[chosen], q, axis=0)
        parts.append((points, normal, weights, ids, mesh.facets[ids], local))
    points, normal, weights, ids, nodes, local = zip(*parts)
    return SurfaceSample(
        points=np.concatenate(points),
        normals=None if normals is None else np.concatenate(normal),
        weights=np.concatenate(weights),
        facets=np.concatenate(ids),
        nodes=np.concatenate(nodes),
        coords=np.concatenate(local),
    )


def sample_surface(domain, tag, spacing):
    """Quadrature points on a tagged boundary, normals pointing out of its inside region"""
    if spacing <= 0:
        raise GeometryError('sampling spacing must be positive', key='analysis.quadrature_refine')
    facet_ids = domain.facets(tag)
    if not len(facet_ids):
        raise GeometryError(f'boundary tag {tag} is empty')
    side = domain.region(FACET_SIDES[tag])
    return sample_facets(domain.mesh, facet_ids, spacing, side.outward_normals(facet_ids))


def erode(region, h, name=None):
    """Cells of the region whose barycenters lie farther than h from its boundary"""
    mesh = region.mesh
    facet_ids = region.boundary_facets
    if not len(region) or not len(facet_ids):
        raise GeometryError(f'cannot erode region {region.name}: it has no boundary')
    spacing = max(min(h, mesh.mesh_size) / 4, 1e-12)
    sample = sample_facets(mesh, facet_ids, spacing)
    cloud = np.concatenate([sample.points, mesh.vertices[np.unique(mesh.facets[facet_ids])]])
    distance, _ = cKDTree(cloud).query(mesh.barycenters[region.cells])
    kept = region.cells[distance > h]
    if not kept.size:
        raise GeometryError(f'eroding {region.name} by {h:.4g} leaves no cells')
    return Region(mesh, kept, name or f'{region.name}_eroded')
