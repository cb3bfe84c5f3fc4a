from math import pi
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from core.exceptions import GeometryError
from core.testing import box_params, disk_params, small_disk, small_square
from .builders import kuhn_grid, polar_annulus, polar_disk
from .domain import TAG_CODES, build_domain, erode, sample_surface
from .io import dump_mesh, load_mesh
from .mesh import SimplexMesh, whole


class SimplexMeshTests(SimpleTestCase):

    def test_degenerate_triangle_is_rejected(self):
        vertices = [[0, 0], [1, 0], [2, 0], [0, 1]]
        with self.assertRaisesMessage(GeometryError, 'degenerate element'):
            SimplexMesh(vertices, [[0, 1, 2], [0, 1, 3]])

    def test_gradients_sum_to_zero_and_reproduce_linears(self):
        mesh = SimplexMesh(*polar_disk(1.0, 0.2))
        np.testing.assert_allclose(mesh.gradients.sum(axis=1), 0.0, atol=1e-10)
        linear = mesh.vertices @ np.array([2.0, -3.0])
        grad = np.einsum('cad,ca->cd', mesh.gradients, linear[mesh.cells])
        np.testing.assert_allclose(grad, np.tile([2.0, -3.0], (mesh.n_cells, 1)), atol=1e-9)

    def test_every_facet_has_one_or_two_cells(self):
        mesh = SimplexMesh(*polar_annulus(0.5, 1.0, 0.1))
        boundary = mesh.facet_cells[:, 1] < 0
        self.assertAlmostEqual(mesh.facet_measures[boundary].sum(), 2 * pi * 1.5, delta=0.05)
        self.assertTrue(whole(mesh).is_connected())

    def test_kuhn_grid_is_conforming_in_3d(self):
        axis = np.linspace(0.0, 1.0, 4)
        mesh = SimplexMesh(*kuhn_grid([axis, axis, axis]))
        self.assertEqual(mesh.n_cells, 27 * 6)
        self.assertAlmostEqual(mesh.volumes.sum(), 1.0, places=12)
        boundary = mesh.facet_cells[:, 1] < 0
        self.assertAlmostEqual(mesh.facet_measures[boundary].sum(), 6.0, places=12)

    def test_locate_returns_containing_cell(self):
        mesh = SimplexMesh(*polar_disk(1.0, 0.1))
        points = np.array([[0.1, 0.2], [-0.5, 0.3], [0.0, 0.0]])
        cells, coords = mesh.locate(points)
        self.assertTrue(np.all(cells >= 0))
        rebuilt = np.einsum('pk,pkd->pd', coords, mesh.vertices[mesh.cells[cells]])
        np.testing.assert_allclose(rebuilt, points, atol=1e-12)
        outside, _ = mesh.locate([[3.0, 0.0]])
        self.assertEqual(outside[0], -1)


class BuildDomainTests(SimpleTestCase):

    def test_disk_domain_has_every_tag(self):
        domain = small_disk()
        for code in TAG_CODES.values():
            self.assertTrue(np.any(domain.cell_tags == code))
        for tag in ('Sigma', 'Sigma0', 'OuterRest', 'dDtilde', 'dDprime', 'dD', 'dOmegaTilde'):
            self.assertGreater(len(domain.facets(tag)), 0, tag)

    def test_sigma0_lies_in_sigma(self):
        domain = small_disk()
        self.assertTrue(np.all(np.isin(domain.facets('Sigma0'), domain.facets('Sigma'))))
        centroids = domain.mesh.facet_centroids[domain.facets('Sigma')]
        self.assertTrue(np.all(centroids[:, 1] > -1e-12))

    def test_interfaces_are_resolved_by_facets(self):
        domain = small_disk()
        for tag, radius in (('dD', 0.25), ('dDprime', 0.4), ('dDtilde', 0.55)):
            nodes = domain.nodes(tag)
            r = np.linalg.norm(domain.mesh.vertices[nodes], axis=1)
            np.testing.assert_allclose(r, radius, atol=1e-12)

    def test_sigma_dofs_avoid_the_rest_of_the_boundary(self):
        domain = small_disk()
        self.assertGreater(len(domain.sigma_dofs), 10)
        self.assertFalse(np.intersect1d(domain.sigma_dofs, domain.nodes('OuterRest')).size)

    def test_region_volumes(self):
        domain = small_disk()
        self.assertAlmostEqual(domain.region('Omega').volume, pi, delta=5e-3)
        self.assertAlmostEqual(domain.region('D').volume, pi * 0.25 ** 2, delta=1e-3)
        bulge = 0.5 * (pi / 2) * (1.4 ** 2 - 1.0)
        self.assertAlmostEqual(domain.region('A').volume, bulge, delta=5e-3)

    def test_rho1_is_derived_when_omitted(self):
        domain = build_domain(disk_params(rho1=None, mesh_size=0.04, mesh_layers=1))
        self.assertAlmostEqual(domain.rho1, 0.1)

    def test_square_domain(self):
        domain = small_square()
        self.assertAlmostEqual(domain.region('Omega').volume, 1.0, places=12)
        self.assertAlmostEqual(domain.region('D').volume, 0.16 ** 2, places=12)
        sigma = domain.mesh.facet_centroids[domain.facets('Sigma')]
        np.testing.assert_allclose(sigma[:, 1], 1.0)
        self.assertAlmostEqual(domain.mesh.facet_measures[domain.facets('Sigma0')].sum(), 0.5, places=12)

    def test_box_domain_tags(self):
        domain = build_domain(box_params(mesh_size=1 / 24, mesh_layers=1))
        self.assertEqual(domain.dim, 3)
        self.assertAlmostEqual(domain.region('Dtilde').volume, 0.56 ** 3, places=10)
        self.assertAlmostEqual(domain.mesh.facet_measures[domain.facets('Sigma0')].sum(), 0.25, places=10)
        self.assertTrue(domain.region('OmegaTildeMinusDtilde').is_connected())


class ParameterValidationTests(SimpleTestCase):

    def assertViolation(self, key, **overrides):
        with self.assertRaises(GeometryError) as ctx:
            build_domain(disk_params(**overrides))
        self.assertEqual(ctx.exception.key, key)

    def test_separation_must_exceed_rho2(self):
        self.assertViolation('geometry.rho2', rho2=0.2, h1=0.09)

    def test_h1_bound(self):
        self.assertViolation('geometry.h1', h1=0.07)

    def test_mesh_too_coarse(self):
        self.assertViolation('geometry.mesh_size', mesh_size=0.05)

    def test_ball_around_marked_point_must_fit(self):
        self.assertViolation('geometry.rho1', rho1=0.15)

    def test_diameter_mismatch(self):
        self.assertViolation('geometry.diam_omega', diam_omega=3.0)

    def test_lipschitz_radius_of_family(self):
        self.assertViolation('geometry.rho0', rho0=0.75)

    def test_unknown_family(self):
        self.assertViolation('geometry.family', family='torus')


class ErodeAndSampleTests(SimpleTestCase):

    def test_tiny_erosion_keeps_every_cell(self):
        region = small_disk().region('Dtilde')
        self.assertEqual(len(erode(region, 1e-12)), len(region))

    def test_erosion_keeps_cells_far_from_the_boundary(self):
        domain = small_disk()
        eroded = erode(domain.region('D'), 0.1)
        radius = np.linalg.norm(domain.mesh.barycenters[eroded.cells], axis=1)
        self.assertLess(radius.max(), 0.15 + 1e-3)
        self.assertGreater(len(eroded), 0)

    def test_erosion_beyond_the_diameter_fails(self):
        with self.assertRaises(GeometryError):
            erode(small_disk().region('Omega'), 3.0)

    def test_eroded_shell_is_connected_and_holds_the_marked_ball(self):
        domain = small_disk()
        shell = erode(domain.region('OmegaTildeMinusDprime'), domain.params.h1)
        self.assertTrue(shell.is_connected())
        ball = domain.ball(domain.marked_point, domain.rho1)
        self.assertTrue(np.all(np.isin(ball.cells, shell.cells)))

    def test_unit_square_perimeter(self):
        sample = sample_surface(small_square(), 'dOmega', 0.01)
        self.assertAlmostEqual(sample.weights.sum(), 4.0, places=12)

    def test_surface_weights_and_normals(self):
        domain = small_disk()
        sample = sample_surface(domain, 'dDtilde', domain.h / 3)
        polygon = domain.mesh.facet_measures[domain.facets('dDtilde')].sum()
        self.assertAlmostEqual(sample.weights.sum(), polygon, places=12)
        self.assertAlmostEqual(sample.weights.sum(), 2 * pi * 0.55, delta=1e-3)
        radial = sample.points / np.linalg.norm(sample.points, axis=1)[:, None]
        self.assertGreater(np.einsum('pd,pd->p', sample.normals, radial).min(), 0.99)

    def test_coarse_spacing_gives_one_point_per_facet(self):
        domain = small_disk()
        sample = sample_surface(domain, 'dD', 10.0)
        self.assertEqual(len(sample), len(domain.facets('dD')))

    def test_trace_interpolation_is_exact_for_linears(self):
        domain = small_disk()
        sample = sample_surface(domain, 'Sigma', domain.h / 2)
        linear = domain.mesh.vertices @ np.array([1.0, 2.0])
        np.testing.assert_allclose(sample.interpolate(linear), sample.points @ np.array([1.0, 2.0]), atol=1e-12)


class MeshDumpTests(SimpleTestCase):

    def test_dump_reloads_bit_exactly(self):
        domain = small_disk()
        with tempfile.TemporaryDirectory() as tmp:
            path = dump_mesh(domain, Path(tmp) / 'mesh.txt')
            loaded = load_mesh(path)
        np.testing.assert_array_equal(loaded.mesh.vertices, domain.mesh.vertices)
        np.testing.assert_array_equal(loaded.cell_tags, domain.cell_tags)
        np.testing.assert_array_equal(loaded.facets('dDtilde'), domain.facets('dDtilde'))
        self.assertEqual(loaded.params, domain.params)
