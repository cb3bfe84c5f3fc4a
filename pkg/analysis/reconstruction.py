"""
Reconstruction of the interior-surface DtN gap from the kernel S.

For Dirichlet data eta1, eta2 on the boundary of D-tilde,

    <(Lambda1 - Lambda2) eta1, eta2> = I1 - I2 - I3 + I4

where the I terms integrate S and its normal derivatives against the
traces and co-normal fluxes of the gamma_i-harmonic extensions v_i. The
double surface integrals are evaluated by facet quadrature. The same
pairing also equals sum c1(y) c2(y') S(y, y') with c_i = K_i applied to
the zero extension of v_i; that "layer" value has no quadrature error
and separates quadrature error from identity error.
"""
from dataclasses import asdict, dataclass
import logging
from typing import Optional

import numpy as np

from core.exceptions import ExperimentError, KernelError
from dtn.operators import assemble_full_dtn
from geometry.domain import sample_surface
from pde.assembly import assemble
from pde.solvers import DirichletSolver, conormal_flux
from skernel.services import SKernelService, default_step

logger = logging.getLogger(__name__)


@dataclass
class GapReconstruction:
    direct: float
    via_s: float
    layer: float
    i1: float
    i2: float
    i3: float
    i4: float
    refined: Optional[float] = None

    @property
    def gap(self):
        return abs(self.direct - self.via_s)

    @property
    def relative_gap(self):
        return self.gap / abs(self.direct) if self.direct else float('inf') if self.gap else 0.0

    @property
    def quadrature_error(self):
        return None if self.refined is None else abs(self.refined - self.via_s)

    def as_dict(self):
        values = asdict(self)
        values.update(gap=self.gap, relative_gap=self.relative_gap, quadrature_error=self.quadrature_error)
        return values


def fourier_traces(domain, nodes, modes):
    """cos(k theta), sin(k theta) about the domain center (first two coordinates), one row per mode"""
    relative = domain.mesh.vertices[nodes] - domain.center
    theta = np.arctan2(relative[:, 1], relative[:, 0])
    rows = []
    for k in range(1, modes + 1):
        rows.extend([np.cos(k * theta), np.sin(k * theta)])
    return np.array(rows)


class GapReconstructor:
    """Shares the full DtN maps, the kernel and its surface samples across data pairs"""

    def __init__(self, gamma0, gamma1, gamma2, domain, kernel=None, spacing=None, step=None, refine=True,
                 options=None):
        self.gamma0 = gamma0
        self.gamma1 = gamma1
        self.gamma2 = gamma2
        self.domain = domain
        self.options = options
        self.kernel = kernel or SKernelService(gamma1, gamma2, domain, options=options)
        self.nodes = domain.nodes('dDtilde')
        self.facets = domain.facets('dDtilde')
        self.difference = (assemble_full_dtn(gamma1, domain, options=options)
                           - assemble_full_dtn(gamma2, domain, options=options))
        self.step = default_step(domain) if step is None else step
        spacing = domain.h if spacing is None else spacing
        self.levels = [self._level(spacing)]
        if refine:
            self.levels.append(self._level(spacing / 2))
        region = domain.region('Dtilde')
        self._solvers = [DirichletSolver(g, region, options=options) for g in (gamma1, gamma2)]
        self._stiffness = [assemble(g, domain.region('OmegaTilde')) for g in (gamma1, gamma2)]
        self._dtilde_interior = region.interior_nodes

    def _level(self, spacing):
        surface = sample_surface(self.domain, 'dDtilde', spacing)
        sample = self.kernel.normal_derivatives(surface, step=self.step)
        logger.info('Kernel sampled on %d surface points (spacing %.4g)', len(surface), spacing)
        return surface, sample

    def _extend(self, index, eta):
        data = np.zeros(self.domain.mesh.n_vertices)
        data[self.nodes] = eta
        solution = self._solvers[index].solve(data)
        flux = conormal_flux(solution, self.facets)
        density = np.zeros(self.domain.mesh.n_vertices)
        density[flux.nodes] = flux.density
        return solution.values, density

    def _quadrature(self, level, v1, q1, v2, q2):
        surface, sample = level
        if sample.values.shape != (len(surface), len(surface)):
            raise ExperimentError('kernel samples do not cover the quadrature points',
                                  points=list(range(len(surface))))
        gamma0 = surface.interpolate(self.gamma0.values)
        w = surface.weights
        a1, b1 = w * surface.interpolate(q1), w * gamma0 * surface.interpolate(v1)
        a2, b2 = w * surface.interpolate(q2), w * gamma0 * surface.interpolate(v2)
        return (a1 @ sample.values @ a2, a1 @ sample.dS_dnu_w @ b2,
                b1 @ sample.dS_dnu_z @ a2, b1 @ sample.d2S_dnu_z_dnu_w @ b2)

    def _layer(self, v1, v2):
        sources = []
        for index, values in enumerate((v1, v2)):
            # v_i already vanishes off the closure of D-tilde
            charge = self._stiffness[index] @ values
            support = np.setdiff1d(np.flatnonzero(charge), self._dtilde_interior)
            sources.append((support, charge[support]))
        (y1, c1), (y2, c2) = sources
        vertices = self.domain.mesh.vertices
        try:
            values = self.kernel.matrix(vertices[y1], vertices[y2])
        except KernelError as exc:
            raise ExperimentError(f'layer sources are not admissible kernel points: {exc}') from exc
        return float(c1 @ values @ c2)

    def reconstruct(self, eta1, eta2):
        eta1, eta2 = np.asarray(eta1, dtype=float), np.asarray(eta2, dtype=float)
        if eta1.shape != (len(self.nodes),) or eta2.shape != (len(self.nodes),):
            raise ExperimentError(f'data must have one value per node of dDtilde ({len(self.nodes)})')
        direct = self.difference.pairing(eta1, eta2)
        v1, q1 = self._extend(0, eta1)
        v2, q2 = self._extend(1, eta2)
        i1, i2, i3, i4 = (float(x) for x in self._quadrature(self.levels[0], v1, q1, v2, q2))
        refined = None
        if len(self.levels) > 1:
            refined = float(np.sum(np.array(self._quadrature(self.levels[1], v1, q1, v2, q2)) * [1, -1, -1, 1]))
        result = GapReconstruction(direct, i1 - i2 - i3 + i4, self._layer(v1, v2), i1, i2, i3, i4, refined)
        logger.debug('Gap reconstruction: direct %.6e, via S %.6e, layer %.6e', direct, result.via_s, result.layer)
        return result


def reconstruct_gap_via_S(gamma0, gamma1, gamma2, domain, eta1, eta2, **kwargs):
    return GapReconstructor(gamma0, gamma1, gamma2, domain, **kwargs).reconstruct(eta1, eta2)
