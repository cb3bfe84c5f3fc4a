import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from core.exceptions import ConductivityError
from core.testing import small_disk
from .fields import ConductivityField, bump, bump_clipping, make_reference, perturb_in_D, validate
from .io import dump_field, load_field


class ReferenceFieldTests(SimpleTestCase):

    def test_constant_reference(self):
        gamma0 = make_reference(small_disk(), 'constant', lam=0.4)
        self.assertTrue(np.all(gamma0.values == 1.0))
        self.assertEqual(gamma0.E1, 1.0)

    def test_smooth_ramp_stays_elliptic(self):
        domain = small_disk()
        gamma0 = make_reference(domain, 'smooth_ramp', lam=0.4, low=1.0, high=2.0)
        self.assertGreater(gamma0.min, 0.4)
        self.assertLess(gamma0.max, 2.5)
        self.assertAlmostEqual(gamma0.min, 1.0)
        self.assertAlmostEqual(gamma0.max, 2.0)

    def test_constant_at_inverse_lambda_is_rejected(self):
        with self.assertRaises(ConductivityError):
            make_reference(small_disk(), 'constant', lam=0.4, value=2.5)

    def test_unknown_profile(self):
        with self.assertRaises(ConductivityError) as ctx:
            make_reference(small_disk(), 'zigzag')
        self.assertEqual(ctx.exception.key, 'conductivity.profile')


class PerturbationTests(SimpleTestCase):

    def setUp(self):
        self.domain = small_disk()
        self.gamma0 = make_reference(self.domain, 'constant', lam=0.4)

    def test_zero_amplitude_is_the_reference(self):
        gamma, gap = perturb_in_D(self.gamma0, self.domain, 'cosine', 0.0)
        np.testing.assert_array_equal(gamma.values, self.gamma0.values)
        self.assertEqual(gap, 0.0)

    def test_sup_gap_equals_the_amplitude(self):
        _, gap = perturb_in_D(self.gamma0, self.domain, 'cosine', 0.3)
        self.assertAlmostEqual(gap, 0.3, places=12)

    def test_values_outside_D_are_bit_exact(self):
        for shape in ('cosine', 'mollified'):
            gamma, _ = perturb_in_D(self.gamma0, self.domain, shape, 0.7)
            outside = np.setdiff1d(np.arange(self.domain.mesh.n_vertices), self.domain.region('D').interior_nodes)
            np.testing.assert_array_equal(gamma.values[outside], self.gamma0.values[outside])

    def test_off_center_bump_is_clipped_and_reported(self):
        center = self.domain.center + np.array([self.domain.params.d_size, 0.0])
        self.assertEqual(len(bump_clipping(self.domain, self.domain.center, 0.8 * self.domain.params.d_size)), 0)
        self.assertGreater(len(bump_clipping(self.domain, center, 0.8 * self.domain.params.d_size)), 0)
        with self.assertLogs('conductivity.fields', 'WARNING') as logs:
            gamma, gap = perturb_in_D(self.gamma0, self.domain, 'cosine', 0.3, center=center)
        self.assertIn('leaves D', logs.output[0])
        outside = np.setdiff1d(np.arange(self.domain.mesh.n_vertices), self.domain.region('D').interior_nodes)
        np.testing.assert_array_equal(gamma.values[outside], self.gamma0.values[outside])
        self.assertGreater(gap, 0.0)

    def test_amplitude_leaving_the_admissible_class(self):
        with self.assertRaises(ConductivityError) as ctx:
            perturb_in_D(self.gamma0, self.domain, 'cosine', 1.5)
        self.assertEqual(ctx.exception.key, 'conductivity.amplitude')

    def test_bump_profiles(self):
        s = np.array([0.0, 0.25, 0.5, 0.75, 1.0, 2.0])
        np.testing.assert_allclose(bump('cosine', s, 1.0), [1.0, 0.5 * (1 + np.cos(np.pi / 4)), 0.5,
                                                           0.5 * (1 + np.cos(3 * np.pi / 4)), 0.0, 0.0])
        mollified = bump('mollified', s, 1.0)
        np.testing.assert_allclose(mollified[[0, 1, 2]], 1.0)
        self.assertAlmostEqual(mollified[3], 0.5)
        np.testing.assert_allclose(mollified[[4, 5]], 0.0)


class ValidationTests(SimpleTestCase):

    def test_unit_field_passes(self):
        domain = small_disk()
        gamma = make_reference(domain, 'constant', lam=0.5, E=1.0)
        report = validate(gamma, domain)
        self.assertTrue(report.passed, str(report))

    def test_steep_sawtooth_fails_the_regularity_surrogate(self):
        domain = small_disk()
        x = domain.mesh.vertices[:, 0]
        sawtooth = 1.0 + 0.2 * np.abs(((x * 20) % 2) - 1)
        gamma = ConductivityField(domain.mesh, sawtooth, lam=0.4, E=5.0)
        report = validate(gamma, domain)
        check = report.check('W2inf')
        self.assertFalse(check.passed)
        self.assertTrue(domain.region('Omega').node_mask()[check.vertex])
        self.assertTrue(report.check('ellipticity').passed)

    def test_vertex_on_lambda_fails_ellipticity(self):
        domain = small_disk()
        values = np.ones(domain.mesh.n_vertices)
        values[17] = 0.5
        report = validate(ConductivityField(domain.mesh, values, lam=0.5, E=50.0), domain)
        self.assertFalse(report.check('ellipticity').passed)
        self.assertEqual(report.check('ellipticity').vertex, 17)

    def test_validation_is_side_effect_free(self):
        domain = small_disk()
        gamma = make_reference(domain, 'smooth_ramp')
        before = gamma.values.copy()
        first = validate(gamma, domain).as_dict()
        second = validate(gamma, domain).as_dict()
        self.assertEqual(first, second)
        np.testing.assert_array_equal(gamma.values, before)


class FieldDumpTests(SimpleTestCase):

    def test_dump_reloads_bit_exactly(self):
        domain = small_disk()
        gamma, _ = perturb_in_D(make_reference(domain, 'smooth_ramp'), domain, 'mollified', 0.2)
        with tempfile.TemporaryDirectory() as tmp:
            loaded = load_field(dump_field(gamma, Path(tmp) / 'gamma.txt'), domain.mesh)
        np.testing.assert_array_equal(loaded.values, gamma.values)
        self.assertEqual(loaded.E1, gamma.E1)
