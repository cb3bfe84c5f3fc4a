"""
Stability sweeps over dyadic perturbation amplitudes.

Each amplitude t_k = t0 2^-k yields the local DtN gap epsilon_k on Sigma,
the full DtN gap on the boundary of D-tilde and the sup-norm conductivity
gap. Fits:

    full gap <= C eps^beta          (least squares slope, capped at 1)
    sup gap  <= C |log eps|^-delta  (feasibility with C >= 1)
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
from math import e, log
from typing import List, Optional

import numpy as np
from django.conf import settings

from conductivity.fields import perturb_in_D
from core.exceptions import ExperimentError
from dtn.operators import assemble_full_dtn, assemble_local_dtn
from .propagation import _supporting_line
from .reconstruction import GapReconstructor, fourier_traces

logger = logging.getLogger(__name__)

DELTA_BOUNDS = (1e-6, 1.0)


@dataclass
class AmplitudeResult:
    t: float
    epsilon: float
    full_gap: float
    sup_gap: float
    sub_epsilon: float
    reconstruction: Optional[object] = None
    dropped: bool = False
    branch: str = ''

    def row(self):
        rec = self.reconstruction
        return {
            't': self.t,
            'epsilon': self.epsilon,
            'full_gap': self.full_gap,
            'sup_gap': self.sup_gap,
            'sub_epsilon': self.sub_epsilon,
            'branch': self.branch,
            'dropped': int(self.dropped),
            'direct': None if rec is None else rec.direct,
            'via_s': None if rec is None else rec.via_s,
            'layer': None if rec is None else rec.layer,
            'relative_gap': None if rec is None else rec.relative_gap,
        }


@dataclass
class HolderFit:
    beta: float
    C: float
    slope: float
    r_squared: float
    margins: np.ndarray = field(repr=False)


@dataclass
class LogFit:
    delta: float
    C: float
    residual: float
    margins: np.ndarray = field(repr=False)


@dataclass
class ExperimentReport:
    run_id: str
    amplitudes: List[AmplitudeResult]
    holder: HolderFit
    logarithmic: LogFit
    lam: float
    propagation: Optional[object] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def kept(self):
        return [a for a in self.amplitudes if not a.dropped]

    @property
    def epsilon(self):
        return np.array([a.epsilon for a in self.amplitudes])

    @property
    def full_gap(self):
        return np.array([a.full_gap for a in self.amplitudes])

    @property
    def sup_gap(self):
        return np.array([a.sup_gap for a in self.amplitudes])

    @property
    def fitted_beta(self):
        return self.holder.beta

    @property
    def fitted_delta(self):
        return self.logarithmic.delta

    @property
    def fitted_eta(self):
        """None when there is no fit or its exponent sits on a bound"""
        if self.propagation is None or self.propagation.at_bound:
            return None
        return self.propagation.eta

    @property
    def composed_constant(self):
        """C_delta (log(C_beta e) / beta)^delta, turning the Holder step into the logarithmic one"""
        base = log(max(self.holder.C, 1.0) * e) / self.holder.beta
        return self.logarithmic.C * base ** self.logarithmic.delta

    def summary(self):
        kept = self.kept
        eps = np.array([a.epsilon for a in kept])
        values = {
            'run_id': self.run_id,
            'amplitudes': len(self.amplitudes),
            'kept': len(kept),
            'beta': self.holder.beta,
            'beta_C': self.holder.C,
            'beta_slope': self.holder.slope,
            'beta_r_squared': self.holder.r_squared,
            'beta_positive_margins': int(np.count_nonzero(self.holder.margins > 0)),
            'delta': self.logarithmic.delta,
            'delta_C': self.logarithmic.C,
            'delta_residual': self.logarithmic.residual,
            'delta_positive_margins': int(np.count_nonzero(self.logarithmic.margins > 0)),
            'composed_constant': self.composed_constant,
            'epsilon_decreasing': bool(np.all(np.diff(eps) < 0)),
            'sup_gap_cap': 1.0 / self.lam,
        }
        if self.propagation is not None:
            values.update({f'eta_{k}': v for k, v in self.propagation.as_dict().items()})
        values.update(self.diagnostics)
        return values


def amplitudes(t0, K):
    if K < 4:
        raise ExperimentError(f'a sweep needs K >= 4 (got {K})', key='sweep.K')
    if t0 <= 0:
        raise ExperimentError('all amplitudes vanish; the sweep is degenerate', key='sweep.t0')
    return [t0 * 2.0 ** -k for k in range(K + 1)]


def fit_holder(epsilon, full_gap):
    x, y = np.log(epsilon), np.log(full_gap)
    slope, intercept = np.polyfit(x, y, 1)
    total = np.sum((y - y.mean()) ** 2)
    r_squared = 1.0 - np.sum((y - (slope * x + intercept)) ** 2) / total if total > 0 else 1.0
    if slope <= 0:
        raise ExperimentError(f'full gap does not decrease with epsilon (slope {slope:.3g})')
    beta = min(float(slope), 1.0)
    C = float(np.max(full_gap / epsilon ** beta))
    margins = np.log(C * epsilon ** beta) - y
    return HolderFit(beta, C, float(slope), float(r_squared), margins)


def fit_logarithmic(epsilon, sup_gap):
    usable = epsilon < 1.0
    if usable.sum() < 2:
        raise ExperimentError('logarithmic fit needs two amplitudes with epsilon < 1', key='sweep.t0')
    # log sup <= log C - delta log|log eps|, log C >= 0
    x = -np.log(-np.log(epsilon[usable]))
    y = np.log(sup_gap[usable])
    c, delta, _, residual = _supporting_line(x, y, *DELTA_BOUNDS, floor=0.0)
    C = float(np.exp(c))
    margins = np.full(len(epsilon), np.nan)
    margins[usable] = c + delta * x - y
    return LogFit(float(delta), C, float(residual), margins)


class StabilitySweep:
    """Shares the reference operators across amplitude jobs"""

    def __init__(self, gamma0, domain, shape='cosine', radius_fraction=0.8, center=None, reconstruct=True,
                 options=None, max_dofs=None):
        self.gamma0 = gamma0
        self.domain = domain
        self.shape = shape
        self.radius_fraction = radius_fraction
        self.center = center
        self.reconstruct = reconstruct
        self.options = options
        self.max_dofs = max_dofs
        self.local0 = assemble_local_dtn(gamma0, domain, max_dofs, options)
        self.full0 = assemble_full_dtn(gamma0, domain, max_dofs=max_dofs, options=options)
        self.sub_dofs = np.intersect1d(domain.sigma_dofs, domain.nodes('Sigma0'))
        traces = fourier_traces(domain, domain.nodes('dDtilde'), 1)
        self.eta1, self.eta2 = traces[0], traces[0]

    def job(self, t):
        gamma1, sup_gap = perturb_in_D(self.gamma0, self.domain, self.shape, t, self.radius_fraction, self.center)
        local = assemble_local_dtn(gamma1, self.domain, self.max_dofs, self.options) - self.local0
        full = assemble_full_dtn(gamma1, self.domain, max_dofs=self.max_dofs, options=self.options) - self.full0
        result = AmplitudeResult(t, local.norm(), full.norm(), sup_gap, local.restrict(self.sub_dofs).norm())
        if self.reconstruct:
            reconstructor = GapReconstructor(self.gamma0, gamma1, self.gamma0, self.domain, refine=False,
                                             options=self.options)
            result.reconstruction = reconstructor.reconstruct(self.eta1, self.eta2)
        logger.info('t = %.4g: epsilon %.4e, full gap %.4e, sup gap %.4e', t, result.epsilon, result.full_gap,
                    sup_gap)
        return result

    def run(self, t0, K, threads=1, run_id='sweep', floor=None):
        ts = amplitudes(t0, K)
        floor = 1e3 * settings.SOLVER_TOL if floor is None else floor
        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            results = list(pool.map(self.job, ts))
        cap = 1.0 / self.gamma0.lam
        for result in results:
            if result.sup_gap > cap:
                raise ExperimentError(f'sup gap {result.sup_gap:.4g} exceeds the cap 1/lambda = {cap:.4g}')
            if result.epsilon < floor:
                result.dropped = True
                logger.warning('Dropping t = %.4g: epsilon %.3e is below the noise floor %.1e',
                               result.t, result.epsilon, floor)
        kept = [r for r in results if not r.dropped]
        if not kept or all(r.full_gap == 0 for r in kept):
            raise ExperimentError('every amplitude gives a zero gap; the sweep is degenerate', key='sweep.t0')
        if len(kept) < 2:
            raise ExperimentError('fewer than two amplitudes survive the noise floor', key='sweep.t0')
        eps = np.array([r.epsilon for r in kept])
        holder = fit_holder(eps, np.array([r.full_gap for r in kept]))
        logarithmic = fit_logarithmic(eps, np.array([r.sup_gap for r in kept]))
        for r in results:
            r.branch = 'holder' if holder.C * r.epsilon ** holder.beta < 1 / e else 'cap'
        diagnostics = {
            'monotone_information': bool(all(r.sub_epsilon <= r.epsilon * (1 + 1e-12) for r in kept)),
        }
        relative = [r.reconstruction.relative_gap for r in kept if r.reconstruction is not None]
        if relative:
            diagnostics['reconstruction_worst_relative_gap'] = float(max(relative))
        report = ExperimentReport(run_id, results, holder, logarithmic, self.gamma0.lam, diagnostics=diagnostics)
        logger.info('Sweep %s: beta %.4g (R^2 %.3f), delta %.4g', run_id, holder.beta, holder.r_squared,
                    logarithmic.delta)
        return report


def stability_sweep(gamma0, domain, t0, K, threads=1, run_id='sweep', **kwargs):
    amplitudes(t0, K)
    return StabilitySweep(gamma0, domain, **kwargs).run(t0, K, threads, run_id)
