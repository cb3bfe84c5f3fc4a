"""
Propagation of smallness: fitting ||u||_{E_h1} <= C ||u||_B^eta ||u||_E^(1 - eta)
over families of discrete gamma0-harmonic functions, B = B_rho1(Q) and
E = the extended body minus the closure of D'.
"""
from dataclasses import dataclass, field
import logging

import numpy as np
from scipy.optimize import linprog

from core.exceptions import ExperimentError
from geometry.domain import erode
from pde.assembly import assemble_mass
from pde.solvers import DirichletSolver

logger = logging.getLogger(__name__)

ETA_BOUNDS = (0.01, 0.99)


@dataclass
class PropagationRegions:
    ball: object
    eroded: object
    shell: object

    @classmethod
    def of(cls, domain):
        shell = domain.region('OmegaTildeMinusDprime')
        ball = domain.ball(domain.marked_point, domain.rho1, name='B_rho1', within='A')
        if not len(ball):
            raise ExperimentError('the ball B_rho1(Q) contains no cells', key='geometry.rho1')
        eroded = erode(shell, domain.params.h1, name='shell_h1')
        return cls(ball, eroded, shell)

    def norms(self, values):
        """L2 norms (ball, eroded shell, shell) per column of nodal values"""
        values = np.atleast_2d(np.asarray(values).T).T
        result = []
        for region in (self.ball, self.eroded, self.shell):
            mass = assemble_mass(region)
            result.append(np.sqrt(np.clip(np.einsum('nk,nk->k', values, mass @ values), 0.0, None)))
        return np.array(result)


@dataclass
class PropagationFit:
    C: float
    eta: float
    margin: float
    residual: float
    size: int
    norms: np.ndarray = field(repr=False)

    def predict(self, a, b):
        return self.C * a ** self.eta * b ** (1 - self.eta)

    @property
    def at_bound(self):
        """eta was stopped by ETA_BOUNDS rather than by the family"""
        lower, upper = ETA_BOUNDS
        return self.eta <= lower + 1e-6 or self.eta >= upper - 1e-6

    def as_dict(self):
        return {'C': self.C, 'eta': self.eta, 'margin': self.margin, 'residual': self.residual, 'size': self.size,
                'at_bound': self.at_bound, 'composed': composed_exponent(self)}


def harmonic_family(gamma0, domain, size, seed, max_sources=3, waves=4, options=None):
    """
    Discrete gamma0-harmonic functions off the closure of D.

    Even members get smooth random Dirichlet data on the outer boundary plus
    random point loads inside D. Odd members carry loads only, with zero
    outer data, the way z -> S(z, w) does; for every other one of those the
    loads sum to zero.
    """
    generator = np.random.default_rng(seed)
    solver = DirichletSolver(gamma0, domain.region('OmegaTilde'), dirichlet_nodes=domain.nodes('dOmegaTilde'),
                             options=options)
    points = domain.mesh.vertices[solver.boundary] - domain.center
    data = np.zeros((len(solver.boundary), size))
    for k in range(0, size, 2):
        for _ in range(waves):
            direction = generator.normal(size=domain.dim)
            frequency = generator.uniform(0.5, 4.0) * direction / np.linalg.norm(direction)
            data[:, k] += generator.normal() * np.cos(points @ frequency + generator.uniform(0, 2 * np.pi))
    inner = domain.region('D').interior_nodes
    loads = np.zeros((domain.mesh.n_vertices, size))
    for k in range(size):
        loads_only = k % 2 == 1
        balanced = k % 4 == 3
        count = generator.integers(2 if balanced else int(loads_only), max_sources + 1)
        if count:
            chosen = generator.choice(inner, size=count, replace=False)
            weights = generator.normal(scale=5.0, size=count)
            loads[chosen, k] = weights - weights.mean() if balanced else weights
    return solver.solve_many(data, loads)


def _supporting_line(x, y, lower, upper, floor=None, objective='mean'):
    """
    Tightest c, s with y_i <= c + s x_i for all i, s in [lower, upper] and
    c >= floor. objective 'mean' minimises the mean slack, 'max' the largest
    one. Returns (c, s, min slack, objective value).
    """
    n = len(x)
    ones = np.ones(n)
    if objective == 'mean':
        cost, a_ub, b_ub = [n, np.sum(x)], np.column_stack([-ones, -x]), -y
        bounds = [(floor, None), (lower, upper)]
    elif objective == 'max':
        # variables (c, s, t): 0 <= c + s x_i - y_i <= t
        cost = [0.0, 0.0, 1.0]
        a_ub = np.vstack([np.column_stack([-ones, -x, 0 * ones]), np.column_stack([ones, x, -ones])])
        b_ub = np.concatenate([-y, y])
        bounds = [(floor, None), (lower, upper), (0, None)]
    else:
        raise ExperimentError(f'unknown supporting-line objective {objective!r}')
    result = linprog(c=cost, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method='highs')
    if not result.success:
        raise ExperimentError(f'feasibility program failed: {result.message}')
    c, s = result.x[:2]
    slack = c + s * x - y
    value = slack.mean() if objective == 'mean' else slack.max()
    return float(c), float(s), float(slack.min()), float(value)


def fit_propagation(gamma0, domain, family=None, size=50, seed=0, regions=None, options=None):
    """Fit (C, eta) over a family; columns of family are nodal values"""
    regions = regions or PropagationRegions.of(domain)
    if family is None:
        family = harmonic_family(gamma0, domain, size, seed, options=options)
    family = np.atleast_2d(np.asarray(family).T).T
    shell_nodes = regions.shell.nodes
    spread = np.ptp(family[shell_nodes], axis=0)
    scale = np.abs(family[shell_nodes]).max(axis=0)
    varying = spread > 1e-12 * np.where(scale > 0, scale, 1.0)
    if not np.any(varying):
        raise ExperimentError('degenerate family: every member is constant', key='analysis.family_size')
    norms = regions.norms(family)
    usable = np.all(norms > 0, axis=0)
    if usable.sum() < 2:
        raise ExperimentError('propagation fit needs at least two members with nonzero norms',
                              key='analysis.family_size')
    a, m, b = norms[:, usable]
    # log m - log b <= log C + eta (log a - log b)
    x, y = np.log(a / b), np.log(m / b)
    c, eta, margin, residual = _supporting_line(x, y, *ETA_BOUNDS, objective='max')
    fit = PropagationFit(float(np.exp(c)), eta, margin, residual, int(usable.sum()), norms)
    logger.info('Propagation fit over %d members: C = %.4g, eta = %.4g, margin %.2e, largest slack %.3g',
                fit.size, fit.C, fit.eta, fit.margin, fit.residual)
    if fit.at_bound:
        logger.warning('Propagation exponent sits on its bound %.4g; the family does not determine eta', fit.eta)
    return fit


@dataclass
class CascadeCheck:
    w: np.ndarray
    ball: float
    eroded: float
    shell: float
    predicted: float

    @property
    def holds(self):
        return self.eroded <= self.predicted * (1 + 1e-9)

    def as_dict(self):
        return {'w': self.w.tolist(), 'ball': self.ball, 'eroded': self.eroded, 'shell': self.shell,
                'predicted': self.predicted, 'holds': self.holds}


def cascade(fit, kernel, w_points, regions=None):
    """Apply the fitted bound to z -> S(z, w) for each w"""
    regions = regions or PropagationRegions.of(kernel.domain)
    checks = []
    for w in np.atleast_2d(w_points):
        values = kernel.field_in_z(w)
        a, m, b = regions.norms(values)[:, 0]
        checks.append(CascadeCheck(np.asarray(w, dtype=float), float(a), float(m), float(b), float(fit.predict(a, b))))
    failed = [c for c in checks if not c.holds]
    if failed:
        logger.warning('Cascaded smallness bound fails for %d of %d points', len(failed), len(checks))
    return checks


def composed_exponent(fit):
    """Exponent of epsilon after propagating smallness first in z, then in w"""
    return fit.eta ** 2
