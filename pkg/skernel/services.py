"""
The cross-conductivity kernel

    S(z, w) = integral over D of (gamma1 - gamma2) grad G1(., z) . grad G2(., w)

for sources z, w outside the closure of D. Green columns are only ever
needed on the nodes of D, so they are solved in chunks, projected onto
those nodes and cached by source point; S for whole point sets is then
one sparse product with the D-block of the difference stiffness.
"""
from dataclasses import dataclass
import logging
import threading

import numpy as np
from scipy.sparse import linalg as spla

from core.exceptions import KernelError
from geometry.domain import TAG_CODES
from pde.assembly import assemble
from pde.greens import GreenSolver, _key
from .samples import SKernelSample

logger = logging.getLogger(__name__)

# stencil points must stay in these regions
VALID_SHELL = ('A', 'OmegaMinusDtilde', 'DtildeMinusDprime')


@dataclass
class EllipticResidual:
    max_entry: float
    relative: float
    nodes: int


def default_step(domain):
    """max(4h, rho2/8) clamped into [2h, rho2/4]; the lower end wins when the interval is empty"""
    h, rho2 = domain.h, domain.params.rho2
    return max(2 * h, min(max(4 * h, rho2 / 8), rho2 / 4))


class SKernelService:
    """
    Kernel evaluations for one pair of conductivities on one domain.

    With frozen=True both Green factors come from the reference gamma0,
    which makes S exactly linear in gamma1 - gamma2.
    """

    def __init__(self, gamma1, gamma2, domain, gamma0=None, options=None, frozen=False, chunk=128):
        self.gamma1 = gamma1
        self.gamma2 = gamma2
        self.domain = domain
        self.mesh = domain.mesh
        self.frozen = frozen
        self.chunk = chunk
        if frozen:
            if gamma0 is None:
                raise KernelError('the frozen-Green kernel needs the reference conductivity')
            self.green1 = self.green2 = GreenSolver(gamma0, domain, options)
        else:
            self.green1 = GreenSolver(gamma1, domain, options)
            self.green2 = self.green1 if gamma2 is gamma1 else GreenSolver(gamma2, domain, options)
        region = domain.region('D')
        self.d_nodes = region.nodes
        difference = gamma1.cell_means - gamma2.cell_means
        self.weight = assemble(difference, region).tocsr()[self.d_nodes][:, self.d_nodes].tocsc()
        self._closure = np.zeros(self.mesh.n_vertices, dtype=bool)
        self._closure[self.d_nodes] = True
        self._projected = {id(self.green1): {}, id(self.green2): {}}
        self._lock = threading.Lock()

    def __repr__(self):
        return f'SKernelService({self.gamma1.name}, {self.gamma2.name}, frozen={self.frozen})'

    @property
    def trivial(self):
        return self.weight.nnz == 0 or not np.any(self.weight.data)

    def _points(self, points, snap):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if snap:
            index, _ = self.mesh.nearest_vertex(points)
            points = self.mesh.vertices[index]
        loads = self.mesh.point_loads(points)
        touching = np.asarray(loads.tocsr()[self._closure].sum(axis=0)).ravel()
        bad = np.flatnonzero(touching > 1e-12)
        if bad.size:
            raise KernelError(f'{bad.size} source point(s) lie in the closure of D, first {points[bad[0]]}',
                              points=bad.tolist())
        return points

    def _columns(self, green, points):
        """Green columns of the given solver restricted to the nodes of D"""
        cache = self._projected[id(green)]
        keys = [_key(p) for p in points]
        missing = list(dict.fromkeys(key for key in keys if key not in cache))
        for start in range(0, len(missing), self.chunk):
            block = missing[start:start + self.chunk]
            loads = green.loads(np.array(block))
            values = green.solver.solve_many(np.zeros((len(green.solver.boundary), len(block))), loads)
            projected = values[self.d_nodes]
            with self._lock:
                for key, column in zip(block, projected.T):
                    cache[key] = column
        if missing:
            logger.debug('Projected %d Green columns onto %d nodes of D', len(missing), len(self.d_nodes))
        return np.column_stack([cache[key] for key in keys])

    def matrix(self, z_points, w_points, snap=False):
        """S(z_j, w_k) for every pair"""
        z_points = self._points(z_points, snap)
        w_points = self._points(w_points, snap)
        if self.trivial:
            return np.zeros((len(z_points), len(w_points)))
        left = self._columns(self.green1, z_points)
        right = self._columns(self.green2, w_points)
        return left.T @ (self.weight @ right)

    def s_direct(self, z, w):
        """Kernel value with both sources snapped to mesh nodes"""
        return float(self.matrix(z, w, snap=True)[0, 0])

    def _green_traces(self, z, w):
        domain = self.domain
        z, w = self._points(z, True)[0], self._points(w, True)[0]
        radius = domain.rho1 + 1e-12
        for name, point in (('z', z), ('w', w)):
            if np.linalg.norm(point - domain.marked_point) > radius:
                raise KernelError(f'{name} = {point} lies outside the ball B_rho1(Q)', key='geometry.rho1')
        dofs = domain.sigma_dofs
        return z, w, self.green1.columns(z)[dofs, 0], self.green2.columns(w)[dofs, 0]

    def s_via_pairing(self, z, w, local_difference):
        """<(Lambda1 - Lambda2) G1(., z), G2(., w)> on Sigma, sources in B_rho1(Q)"""
        _, _, trace1, trace2 = self._green_traces(z, w)
        return local_difference.pairing(trace1, trace2)

    def smallness_bound(self, z, w, local_difference, epsilon=None):
        """epsilon times the H^{1/2} norms of the two Green traces on Sigma"""
        _, _, trace1, trace2 = self._green_traces(z, w)
        gram = local_difference.gram
        epsilon = local_difference.norm() if epsilon is None else epsilon
        return epsilon * np.sqrt(trace1 @ gram @ trace1) * np.sqrt(trace2 @ gram @ trace2)

    def _stencil(self, sample, step):
        offsets = (0.0, step, -step)
        mesh = self.mesh
        valid = np.isin(self.domain.cell_tags, [TAG_CODES[tag] for tag in VALID_SHELL])
        bad = set()
        for offset in offsets[1:]:
            cells, _ = mesh.locate(sample.points + offset * sample.normals)
            bad.update(np.flatnonzero((cells < 0) | ~valid[np.maximum(cells, 0)]).tolist())
        if bad:
            bad = sorted(bad)
            raise KernelError(f'differencing stencil leaves the shell at {len(bad)} point(s), first {bad[0]}',
                              key='skernel.h_fd', points=bad)
        return [sample.points + offset * sample.normals for offset in offsets]

    def normal_derivatives(self, z_sample, w_sample=None, step=None):
        """S and its normal derivatives by central differences of the source positions"""
        w_sample = z_sample if w_sample is None else w_sample
        step = default_step(self.domain) if step is None else step
        if step <= 0:
            raise KernelError('differencing step must be positive', key='skernel.h_fd')
        if step < 2 * self.domain.h or step > self.domain.params.rho2 / 4:
            logger.warning('Differencing step %.4g outside [2h, rho2/4] = [%.4g, %.4g]',
                           step, 2 * self.domain.h, self.domain.params.rho2 / 4)
        z0, zp, zm = self._stencil(z_sample, step)
        w0, wp, wm = self._stencil(w_sample, step)
        block = {}
        for a, z in (('0', z0), ('+', zp), ('-', zm)):
            for b, w in (('0', w0), ('+', wp), ('-', wm)):
                block[a + b] = self.matrix(z, w)
        return SKernelSample(
            z_points=z_sample.points,
            w_points=w_sample.points,
            values=block['00'],
            dS_dnu_z=(block['+0'] - block['-0']) / (2 * step),
            dS_dnu_w=(block['0+'] - block['0-']) / (2 * step),
            d2S_dnu_z_dnu_w=(block['++'] - block['+-'] - block['-+'] + block['--']) / (4 * step ** 2),
            method='direct',
            step=step,
        )

    def _field(self, solver_green, other_green, point):
        rhs = np.zeros(self.mesh.n_vertices)
        rhs[self.d_nodes] = self.weight @ self._columns(other_green, point)[:, 0]
        boundary = np.zeros((len(solver_green.solver.boundary), 1))
        return solver_green.solver.solve_many(boundary, rhs[:, None])[:, 0]

    def field_in_z(self, w, snap=True):
        """Nodal values of z -> S(z, w) everywhere, by one adjoint solve"""
        return self._field(self.green1, self.green2, self._points(w, snap))

    def field_in_w(self, z, snap=True):
        """Nodal values of w -> S(z, w) everywhere"""
        return self._field(self.green2, self.green1, self._points(z, snap))


def s_direct(gamma1, gamma2, domain, z, w, options=None):
    return SKernelService(gamma1, gamma2, domain, options=options).s_direct(z, w)


def s_via_pairing(gamma1, gamma2, domain, z, w, local_difference, options=None):
    return SKernelService(gamma1, gamma2, domain, options=options).s_via_pairing(z, w, local_difference)


def s_normal_derivatives(gamma1, gamma2, domain, surface, step=None, options=None):
    return SKernelService(gamma1, gamma2, domain, options=options).normal_derivatives(surface, step=step)


def elliptic_residual(values, gamma0, domain):
    """Weak residual of div(gamma0 grad .) on nodes interior to the extended body minus the closure of D"""
    shell = domain.region('OmegaTildeMinusD')
    nodes = shell.interior_nodes
    stiffness = assemble(gamma0, domain.region('OmegaTilde'))
    residual = (stiffness @ np.asarray(values))[nodes]
    max_entry = float(np.abs(residual).max()) if len(nodes) else 0.0
    scale = spla.norm(stiffness, np.inf) * np.abs(values).max()
    relative = max_entry / scale if scale > 0 else 0.0
    return EllipticResidual(max_entry, float(relative), len(nodes))


def shell_maximum(service, spacing=None):
    """Largest |S| over node pairs sampled from the shell outside the closure of D'"""
    domain = service.domain
    region = domain.region('OmegaTildeMinusDprime')
    nodes = region.interior_nodes
    spacing = spacing or 4 * domain.h
    keep = _thin(domain.mesh.vertices[nodes], spacing)
    points = domain.mesh.vertices[nodes[keep]]
    values = service.matrix(points, points)
    return float(np.abs(values).max()) if values.size else 0.0


def _thin(points, spacing):
    """One point per cube of the given spacing"""
    cells = np.floor(points / spacing).astype(np.int64)
    _, first = np.unique(cells, axis=0, return_index=True)
    return np.sort(first)

