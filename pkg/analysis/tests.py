import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from conductivity.fields import make_reference, perturb_in_D
from core.exceptions import ExperimentError
from core.testing import SEED, disk_params, small_disk
from geometry.domain import build_domain
from skernel.services import SKernelService
from .propagation import (
    ETA_BOUNDS, PropagationFit, PropagationRegions, _supporting_line, cascade, fit_propagation,
)
from .reconstruction import GapReconstructor, fourier_traces
from .reports import read_experiment_csv, write_experiment_csv
from .stability import amplitudes, fit_holder, fit_logarithmic, stability_sweep


class ReconstructionTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.domain = small_disk()
        cls.gamma0 = make_reference(cls.domain, 'constant', lam=0.4)
        cls.gamma1, _ = perturb_in_D(cls.gamma0, cls.domain, 'cosine', 0.2)
        cls.reconstructor = GapReconstructor(cls.gamma0, cls.gamma1, cls.gamma0, cls.domain, refine=False)
        cls.traces = fourier_traces(cls.domain, cls.domain.nodes('dDtilde'), 2)

    def test_layer_value_is_exact(self):
        scale = abs(self.reconstructor.reconstruct(self.traces[0], self.traces[0]).direct)
        for eta1, eta2 in ((self.traces[0], self.traces[0]), (self.traces[1], self.traces[3])):
            result = self.reconstructor.reconstruct(eta1, eta2)
            self.assertLessEqual(abs(result.layer - result.direct), 1e-8 * scale)

    def test_surface_quadrature_tracks_the_direct_gap(self):
        # coarse test mesh; the 5% budget applies at the default resolution
        result = self.reconstructor.reconstruct(self.traces[0], self.traces[0])
        self.assertNotEqual(result.direct, 0.0)
        self.assertLess(result.relative_gap, 0.2)
        self.assertAlmostEqual(result.via_s, result.i1 - result.i2 - result.i3 + result.i4)

    def test_constant_data_has_no_direct_gap(self):
        ones = np.ones(len(self.reconstructor.nodes))
        result = self.reconstructor.reconstruct(self.traces[0], ones)
        reference = abs(self.reconstructor.reconstruct(self.traces[0], self.traces[0]).direct)
        self.assertLess(abs(result.direct), 1e-8 * reference)

    def test_equal_conductivities(self):
        reconstructor = GapReconstructor(self.gamma0, self.gamma0, self.gamma0, self.domain, refine=False)
        result = reconstructor.reconstruct(self.traces[0], self.traces[1])
        self.assertEqual((result.direct, result.via_s, result.layer), (0.0, 0.0, 0.0))

    def test_data_must_cover_the_surface(self):
        with self.assertRaises(ExperimentError):
            self.reconstructor.reconstruct(np.ones(3), np.ones(3))


class RefinementTests(SimpleTestCase):
    """The same data pairs on the test mesh and on one refined to the default resolution"""

    @staticmethod
    def gaps(domain, coefficients):
        gamma0 = make_reference(domain, 'constant', lam=0.4)
        gamma1, _ = perturb_in_D(gamma0, domain, 'cosine', 0.2)
        reconstructor = GapReconstructor(gamma0, gamma1, gamma0, domain, refine=False)
        traces = fourier_traces(domain, reconstructor.nodes, 3)
        return [reconstructor.reconstruct(first @ traces, second @ traces).relative_gap
                for first, second in coefficients]

    def test_gap_shrinks_under_refinement(self):
        generator = np.random.default_rng(SEED)
        cosine = np.eye(6)[0]
        coefficients = [(cosine, cosine)] + [tuple(generator.standard_normal((2, 6))) for _ in range(5)]
        coarse = self.gaps(small_disk(), coefficients)
        fine = self.gaps(build_domain(disk_params(mesh_size=0.0125)), coefficients)
        self.assertLess(fine[0], coarse[0])
        self.assertLess(max(fine), max(coarse))
        self.assertLessEqual(max(fine), 0.05)


class PropagationTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.domain = small_disk()
        cls.gamma0 = make_reference(cls.domain, 'smooth_ramp', lam=0.4)
        cls.regions = PropagationRegions.of(cls.domain)
        cls.fit = fit_propagation(cls.gamma0, cls.domain, size=50, seed=SEED, regions=cls.regions)

    def test_supporting_line_through_collinear_points(self):
        x = np.array([-3.0, -2.0, -1.0])
        for objective in ('mean', 'max'):
            c, s, margin, residual = _supporting_line(x, 0.5 + 0.3 * x, 0.01, 0.99, objective=objective)
            self.assertAlmostEqual(c, 0.5)
            self.assertAlmostEqual(s, 0.3)
            self.assertAlmostEqual(margin, 0.0)
            self.assertAlmostEqual(residual, 0.0)

    def test_minimax_line_follows_the_trend(self):
        x = np.linspace(-6.0, -1.0, 12)
        y = 0.3 * x + 0.05 * (-1.0) ** np.arange(12)
        c, s, margin, largest = _supporting_line(x, y, 0.01, 0.99, objective='max')
        self.assertAlmostEqual(s, 0.3, delta=1e-5)
        self.assertAlmostEqual(c, 0.05, delta=1e-5)
        self.assertGreaterEqual(margin, -1e-8)
        self.assertAlmostEqual(largest, 0.1, delta=1e-5)

    def test_unknown_objective(self):
        with self.assertRaises(ExperimentError):
            _supporting_line(np.array([-2.0, -1.0]), np.array([-1.0, -0.5]), 0.01, 0.99, objective='median')

    def test_clamped_exponent_is_flagged(self):
        fit = PropagationFit(C=1.0, eta=ETA_BOUNDS[0], margin=0.0, residual=0.0, size=3, norms=np.ones((3, 3)))
        self.assertTrue(fit.at_bound)
        self.assertTrue(fit.as_dict()['at_bound'])
        inside = PropagationFit(C=1.0, eta=0.3, margin=0.0, residual=0.0, size=3, norms=np.ones((3, 3)))
        self.assertFalse(inside.at_bound)

    def test_random_family_is_feasible(self):
        fit = self.fit
        self.assertEqual(fit.size, 50)
        self.assertGreaterEqual(fit.margin, -1e-6)
        a, m, b = fit.norms
        self.assertTrue(np.all(m <= fit.predict(a, b) * (1 + 1e-6)))
        self.assertAlmostEqual(fit.as_dict()['composed'], fit.eta ** 2)

    def test_exponent_is_set_by_the_family(self):
        lower, upper = ETA_BOUNDS
        self.assertFalse(self.fit.at_bound)
        self.assertTrue(lower < self.fit.eta < upper)

    def test_constant_family_is_degenerate(self):
        family = np.ones((self.domain.mesh.n_vertices, 3)) * np.array([1.0, 2.0, -1.0])
        with self.assertRaises(ExperimentError) as ctx:
            fit_propagation(self.gamma0, self.domain, family=family, regions=self.regions)
        self.assertEqual(ctx.exception.key, 'analysis.family_size')

    def test_cascade_holds_at_every_point(self):
        gamma1, _ = perturb_in_D(self.gamma0, self.domain, 'cosine', 0.3)
        kernel = SKernelService(gamma1, self.gamma0, self.domain)
        offsets = np.array([[0.0, 0.0], [0.03, -0.02], [-0.03, 0.01], [0.0, 0.04], [0.02, 0.03]])
        checks = cascade(self.fit, kernel, self.domain.marked_point + offsets, regions=self.regions)
        self.assertEqual(len(checks), 5)
        for check in checks:
            self.assertGreater(check.ball, 0.0)
            self.assertLessEqual(check.eroded, check.shell)
            self.assertTrue(np.isfinite(check.predicted))
            self.assertTrue(check.holds, check.as_dict())


class FitTests(SimpleTestCase):

    def test_amplitude_validation(self):
        with self.assertRaises(ExperimentError) as ctx:
            amplitudes(0.4, 3)
        self.assertEqual(ctx.exception.key, 'sweep.K')
        with self.assertRaises(ExperimentError) as ctx:
            amplitudes(0.0, 6)
        self.assertEqual(ctx.exception.key, 'sweep.t0')
        self.assertEqual(amplitudes(0.4, 4), [0.4, 0.2, 0.1, 0.05, 0.025])

    def test_holder_fit_recovers_a_power_law(self):
        eps = np.geomspace(1e-2, 1e-5, 6)
        fit = fit_holder(eps, 2.0 * eps ** 0.7)
        self.assertAlmostEqual(fit.beta, 0.7)
        self.assertAlmostEqual(fit.C, 2.0)
        self.assertAlmostEqual(fit.r_squared, 1.0)

    def test_holder_exponent_is_capped(self):
        eps = np.geomspace(1e-2, 1e-5, 6)
        fit = fit_holder(eps, 3.0 * eps ** 1.2)
        self.assertEqual(fit.beta, 1.0)
        self.assertTrue(np.all(fit.margins >= -1e-12))

    def test_holder_fit_rejects_growth(self):
        eps = np.geomspace(1e-2, 1e-5, 6)
        with self.assertRaises(ExperimentError):
            fit_holder(eps, eps ** -0.5)

    def test_logarithmic_fit_is_feasible(self):
        eps = np.geomspace(1e-2, 1e-6, 6)
        sup = np.linspace(0.4, 0.0125, 6)
        fit = fit_logarithmic(eps, sup)
        self.assertGreaterEqual(fit.C, 1.0)
        self.assertTrue(0 < fit.delta <= 1)
        self.assertTrue(np.all(fit.margins >= -1e-6))


class SweepTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.domain = small_disk()
        cls.gamma0 = make_reference(cls.domain, 'constant', lam=0.4)
        cls.report = stability_sweep(cls.gamma0, cls.domain, t0=0.4, K=6, threads=2, reconstruct=False)

    def test_sweep_fits(self):
        report = self.report
        self.assertTrue(np.all(np.diff(report.epsilon) < 0))
        self.assertTrue(0 < report.fitted_beta <= 1)
        self.assertGreaterEqual(report.holder.r_squared, 0.9)
        self.assertTrue(np.all(report.holder.margins >= -1e-12))
        self.assertGreaterEqual(report.logarithmic.C, 1.0)
        self.assertTrue(0 < report.fitted_delta <= 1)
        self.assertTrue(np.all(report.sup_gap <= 1 / 0.4))
        self.assertTrue(report.summary()['monotone_information'])

    def test_amplitudes_are_in_submission_order(self):
        self.assertEqual([a.t for a in self.report.amplitudes], amplitudes(0.4, 6))

    def test_report_csv(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_experiment_csv(self.report, Path(tmp) / 'experiment.csv')
            rows, summary = read_experiment_csv(path)
        self.assertEqual(len(rows), 7)
        self.assertEqual(float(rows[0]['t']), 0.4)
        self.assertEqual(float(summary['beta']), self.report.fitted_beta)
        self.assertEqual(summary['monotone_information'], 'true')
