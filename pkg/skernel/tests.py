import tempfile
from pathlib import Path

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase

from conductivity.fields import make_reference, perturb_in_D
from core.exceptions import KernelError
from core.testing import rng, small_disk
from dtn.operators import assemble_local_dtn
from geometry.domain import sample_surface
from .samples import CSV_COLUMNS, dump_sample, load_sample
from .services import SKernelService, elliptic_residual, shell_maximum


def points_in_ball(domain, count, offset):
    radius = domain.rho1 - 1.5 * domain.h
    angle = rng(offset).uniform(0, 2 * np.pi, count)
    scale = radius * np.sqrt(rng(offset + 1).uniform(0, 1, count))
    return domain.marked_point + scale[:, None] * np.column_stack([np.cos(angle), np.sin(angle)])


class KernelFixture(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.domain = small_disk()
        cls.gamma0 = make_reference(cls.domain, 'constant', lam=0.4)
        cls.gamma1, _ = perturb_in_D(cls.gamma0, cls.domain, 'cosine', 0.5)
        cls.kernel = SKernelService(cls.gamma1, cls.gamma0, cls.domain)
        cls.exchanged = SKernelService(cls.gamma0, cls.gamma1, cls.domain)


class DirectKernelTests(KernelFixture):

    def test_equal_conductivities_give_zero(self):
        kernel = SKernelService(self.gamma0, self.gamma0, self.domain)
        self.assertTrue(kernel.trivial)
        self.assertEqual(kernel.s_direct(self.domain.marked_point, (0.0, -0.7)), 0.0)

    def test_exchange_flips_the_sign(self):
        z, w = self.domain.marked_point, np.array([0.3, -0.6])
        forward = self.kernel.s_direct(z, w)
        backward = self.exchanged.s_direct(w, z)
        self.assertNotEqual(forward, 0.0)
        self.assertLessEqual(abs(forward + backward), 10 * settings.SOLVER_TOL * max(abs(forward), 1.0))

    def test_sources_in_the_closure_of_D_are_rejected(self):
        with self.assertRaises(KernelError):
            self.kernel.s_direct(self.domain.center, self.domain.marked_point)
        with self.assertRaises(KernelError):
            self.kernel.matrix([[self.domain.params.d_size, 0.0]], [self.domain.marked_point])

    def test_kernel_decays_away_from_D(self):
        radii = [0.5, 0.7, 0.9]
        values = [abs(self.kernel.s_direct((0.0, -r), (0.0, -r))) for r in radii]
        self.assertTrue(values[0] > values[1] > values[2] > 0)

    def test_frozen_kernel_is_linear_in_the_amplitude(self):
        z, w = points_in_ball(self.domain, 3, 40), np.array([[0.2, -0.7], [-0.6, 0.1]])
        values = []
        for amplitude in (0.2, 0.4):
            gamma, _ = perturb_in_D(self.gamma0, self.domain, 'cosine', amplitude)
            values.append(SKernelService(gamma, self.gamma0, self.domain, gamma0=self.gamma0, frozen=True).matrix(z, w))
        np.testing.assert_allclose(values[1], 2 * values[0], rtol=1e-10)

    def test_shell_maximum_is_finite(self):
        peak = shell_maximum(self.kernel, spacing=0.2)
        self.assertTrue(np.isfinite(peak))
        self.assertGreater(peak, 0.0)


class PairingTests(KernelFixture):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.local = assemble_local_dtn(cls.gamma1, cls.domain) - assemble_local_dtn(cls.gamma0, cls.domain)

    def test_pairing_matches_the_volume_integral(self):
        zs, ws = points_in_ball(self.domain, 5, 50), points_in_ball(self.domain, 5, 60)
        for z, w in zip(zs, ws):
            direct = self.kernel.s_direct(z, w)
            paired = self.kernel.s_via_pairing(z, w, self.local)
            self.assertLessEqual(abs(direct - paired), 1e-8 * max(abs(direct), 1e-14))

    def test_smallness_transfer(self):
        epsilon = self.local.norm()
        for z, w in zip(points_in_ball(self.domain, 3, 70), points_in_ball(self.domain, 3, 80)):
            value = abs(self.kernel.s_via_pairing(z, w, self.local))
            self.assertLessEqual(value, self.kernel.smallness_bound(z, w, self.local, epsilon) * (1 + 1e-9))

    def test_sources_outside_the_ball_are_rejected(self):
        with self.assertRaises(KernelError):
            self.kernel.s_via_pairing((0.0, -0.7), self.domain.marked_point, self.local)

    def test_equal_conductivities_pair_to_zero(self):
        kernel = SKernelService(self.gamma0, self.gamma0, self.domain)
        zero = self.local.scaled(0.0)
        self.assertEqual(kernel.s_via_pairing(self.domain.marked_point, self.domain.marked_point, zero), 0.0)


class EllipticResidualTests(KernelFixture):

    def test_field_in_z_is_gamma0_harmonic_off_D(self):
        field = self.kernel.field_in_z(self.domain.marked_point)
        report = elliptic_residual(field, self.gamma0, self.domain)
        self.assertGreater(report.nodes, 0)
        self.assertLessEqual(report.relative, 100 * settings.SOLVER_TOL)

    def test_field_in_w_is_gamma0_harmonic_off_D(self):
        field = self.kernel.field_in_w(self.domain.marked_point)
        self.assertLessEqual(elliptic_residual(field, self.gamma0, self.domain).relative, 100 * settings.SOLVER_TOL)

    def test_field_agrees_with_pointwise_values(self):
        w = self.domain.marked_point
        field = self.kernel.field_in_z(w)
        for node in rng(90).choice(self.domain.region('OmegaMinusDtilde').interior_nodes, 4, replace=False):
            value = self.kernel.s_direct(self.domain.mesh.vertices[node], w)
            self.assertAlmostEqual(field[node], value, delta=1e-9 * max(abs(value), 1e-14))

    def test_equal_conductivities_have_zero_residual(self):
        kernel = SKernelService(self.gamma0, self.gamma0, self.domain)
        report = elliptic_residual(kernel.field_in_z(self.domain.marked_point), self.gamma0, self.domain)
        self.assertEqual(report.max_entry, 0.0)


class NormalDerivativeTests(KernelFixture):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.surface = sample_surface(cls.domain, 'dDtilde', 0.1)

    def test_equal_conductivities(self):
        sample = SKernelService(self.gamma0, self.gamma0, self.domain).normal_derivatives(self.surface, step=0.05)
        for block in (sample.values, sample.dS_dnu_z, sample.dS_dnu_w, sample.d2S_dnu_z_dnu_w):
            self.assertFalse(np.any(block))

    def test_mixed_derivative_exchange_symmetry(self):
        forward = self.kernel.normal_derivatives(self.surface, step=0.05)
        backward = self.exchanged.normal_derivatives(self.surface, step=0.05).exchanged()
        scale = np.abs(forward.d2S_dnu_z_dnu_w).max()
        self.assertLess(np.abs(forward.d2S_dnu_z_dnu_w - backward.d2S_dnu_z_dnu_w).max(), 1e-8 * scale)

    def test_halving_the_step(self):
        coarse = self.kernel.normal_derivatives(self.surface, step=0.1).d2S_dnu_z_dnu_w
        fine = self.kernel.normal_derivatives(self.surface, step=0.05).d2S_dnu_z_dnu_w
        self.assertLessEqual(np.linalg.norm(coarse - fine), 0.25 * np.linalg.norm(fine))

    def test_stencil_leaving_the_shell(self):
        with self.assertRaises(KernelError) as ctx:
            self.kernel.normal_derivatives(self.surface, step=0.2)
        self.assertEqual(ctx.exception.key, 'skernel.h_fd')
        self.assertTrue(ctx.exception.details['points'])


class SampleDumpTests(KernelFixture):

    def test_csv_reloads(self):
        surface = sample_surface(self.domain, 'dDtilde', 0.4)
        sample = self.kernel.normal_derivatives(surface, step=0.05)
        with tempfile.TemporaryDirectory() as tmp:
            path = dump_sample(sample, Path(tmp) / 'skernel.csv')
            header = path.read_text().splitlines()[0]
            loaded = load_sample(path)
        self.assertEqual(header, 'z_index,w_index,S,dS_dnu_z,dS_dnu_w,d2S_dnu_z_dnu_w')
        np.testing.assert_array_equal(loaded.values, sample.values)
        np.testing.assert_array_equal(loaded.d2S_dnu_z_dnu_w, sample.d2S_dnu_z_dnu_w)

    def test_empty_files_are_kernel_errors(self):
        with tempfile.TemporaryDirectory() as tmp:
            blank = Path(tmp) / 'blank.csv'
            blank.write_text('')
            header_only = Path(tmp) / 'header.csv'
            header_only.write_text(','.join(CSV_COLUMNS) + '\n')
            for path, message in ((blank, 'not a kernel sample'), (header_only, 'has no rows')):
                with self.subTest(path=path.name), self.assertRaises(KernelError) as ctx:
                    load_sample(path)
                self.assertIn(message, str(ctx.exception))
                self.assertEqual(ctx.exception.key, 'skernel.sample')
