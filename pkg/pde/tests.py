from math import log, pi
from unittest import mock

import numpy as np
from django.test import SimpleTestCase
from scipy.integrate import quad

from conductivity.fields import make_reference
from core.config import load_config
from core.exceptions import SolverError
from core.testing import rng, small_disk
from geometry.builders import kuhn_grid, polar_annulus
from geometry.domain import build_domain
from geometry.mesh import SimplexMesh, whole
from .assembly import assemble, assemble_mass, unit_element_matrix
from .greens import GreenSolver, energy_annulus, energy_decay
from .solvers import DirichletSolver, SolverOptions, conormal_flux, solve_dirichlet


def annulus(inner=0.5, outer=1.0, h=0.02):
    mesh = SimplexMesh(*polar_annulus(inner, outer, h))
    radius = np.linalg.norm(mesh.vertices, axis=1)
    return mesh, radius


class AssemblyTests(SimpleTestCase):

    def test_unit_right_triangle(self):
        mesh = SimplexMesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
        K = assemble(None, whole(mesh)).toarray()
        expected = 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]])
        np.testing.assert_allclose(K, expected, atol=1e-15)
        np.testing.assert_allclose(unit_element_matrix(2), expected)
        np.testing.assert_allclose(K.sum(axis=1), 0.0, atol=1e-15)

    def test_quadratic_form_of_a_coordinate_integrates_gamma(self):
        domain = small_disk()
        gamma = make_reference(domain, 'smooth_ramp')
        region = domain.region('Omega')
        x = domain.mesh.vertices[:, 0]
        form = x @ (assemble(gamma, region) @ x)
        integral = np.ones(domain.mesh.n_vertices) @ (assemble_mass(region) @ gamma.values)
        self.assertAlmostEqual(form, integral, places=10)

    def test_operator_is_linear_in_gamma(self):
        domain = small_disk()
        gamma = make_reference(domain, 'smooth_ramp')
        region = domain.region('Dtilde')
        single = assemble(gamma, region)
        double = assemble(gamma.scaled(2.0), region)
        self.assertLessEqual(abs(double - 2 * single).max(), 1e-14 * abs(single).max())

    def test_symmetric_with_constants_in_the_kernel(self):
        domain = small_disk()
        K = assemble(make_reference(domain, 'smooth_ramp'), domain.region('OmegaTilde'))
        self.assertLess(abs(K - K.T).max(), 1e-14)
        self.assertLess(np.abs(K @ np.ones(K.shape[0])).max(), 1e-12)


class DirichletTests(SimpleTestCase):

    def test_affine_data_is_reproduced(self):
        domain = small_disk()
        solution = solve_dirichlet(1.0, domain.region('Omega'), lambda p: 1 + p[:, 0] + 2 * p[:, 1])
        nodes = domain.region('Omega').nodes
        expected = 1 + domain.mesh.vertices[nodes] @ np.array([1.0, 2.0])
        np.testing.assert_allclose(solution.values[nodes], expected, atol=1e-10)
        self.assertLessEqual(solution.residual_norm, 1e-12)

    def test_affine_data_in_3d(self):
        axis = np.linspace(0, 1, 7)
        mesh = SimplexMesh(*kuhn_grid([axis, axis, axis]))
        solution = solve_dirichlet(1.0, whole(mesh), lambda p: p @ np.array([1.0, -1.0, 0.5]))
        np.testing.assert_allclose(solution.values, mesh.vertices @ np.array([1.0, -1.0, 0.5]), atol=1e-12)

    def test_constant_data(self):
        domain = small_disk()
        gamma = make_reference(domain, 'smooth_ramp')
        solution = solve_dirichlet(gamma, domain.region('Dtilde'), lambda p: np.full(len(p), 3.0))
        np.testing.assert_allclose(solution.values[domain.region('Dtilde').nodes], 3.0, atol=1e-12)

    def test_radial_conductivity_matches_the_ode(self):
        mesh, radius = annulus()
        gamma = 1 + radius ** 2
        inner = np.isclose(radius, 0.5)
        solution = solve_dirichlet(gamma[mesh.cells].mean(axis=1), whole(mesh),
                                   lambda p: (np.linalg.norm(p, axis=1) > 0.75).astype(float))
        total, _ = quad(lambda s: 1 / (s * (1 + s ** 2)), 0.5, 1.0)
        outside = np.flatnonzero(~inner)
        oracle = np.array([quad(lambda s: 1 / (s * (1 + s ** 2)), 0.5, r)[0] for r in radius[outside]]) / total
        self.assertLess(np.abs(solution.values[outside] - oracle).max(), 2e-3)

    def test_energy_is_minimal(self):
        domain = small_disk()
        region = domain.region('Dtilde')
        gamma = make_reference(domain, 'smooth_ramp')
        solver = DirichletSolver(gamma, region)
        data = rng().standard_normal(len(solver.boundary))
        u = solver.solve(data).values
        K = solver.stiffness
        base = u @ K @ u
        for k in range(5):
            v = u.copy()
            v[solver.interior] += 1e-3 * rng(k + 1).standard_normal(len(solver.interior))
            self.assertGreaterEqual(v @ K @ v, base)

    def test_cg_path_reproduces_affine_data(self):
        domain = small_disk()
        omega = domain.region('Omega')
        solver = DirichletSolver(1.0, omega, options=SolverOptions(tol=1e-10, max_iter=5000, direct_limit=0))
        solution = solver.solve(1 + domain.mesh.vertices[:, 0])
        np.testing.assert_allclose(solution.values[omega.nodes], 1 + domain.mesh.vertices[omega.nodes, 0],
                                   atol=1e-5)
        self.assertLessEqual(solution.residual_norm, 1e-10)

    def test_cg_answer_is_held_to_the_tolerance(self):
        domain = small_disk()
        solver = DirichletSolver(1.0, domain.region('Omega'),
                                 options=SolverOptions(tol=1e-10, max_iter=50, direct_limit=0))
        stalled = (np.zeros(solver.n_unknowns), 0)
        with mock.patch('pde.solvers.spla.cg', return_value=stalled):
            with self.assertRaises(SolverError) as ctx:
                solver.solve(1 + domain.mesh.vertices[:, 0])
        self.assertEqual(ctx.exception.key, 'solver.tol')
        self.assertIn('CG solve residual', str(ctx.exception))


class FluxTests(SimpleTestCase):

    def test_constant_solution_has_zero_flux(self):
        domain = small_disk()
        solution = solve_dirichlet(2.0, domain.region('Dtilde'), lambda p: np.ones(len(p)))
        flux = conormal_flux(solution)
        self.assertLess(np.abs(flux.values).max(), 1e-12)

    def test_total_flux_vanishes_on_closed_boundaries(self):
        domain = small_disk()
        gamma = make_reference(domain, 'smooth_ramp')
        solver = DirichletSolver(gamma, domain.region('Dtilde'))
        solution = solver.solve(rng(3).standard_normal(len(solver.boundary)))
        flux = conormal_flux(solution, domain.facets('dDtilde'))
        self.assertLess(abs(flux.total), 1e-10)

    def test_flux_pairing_is_the_bilinear_form(self):
        domain = small_disk()
        gamma = make_reference(domain, 'smooth_ramp')
        solver = DirichletSolver(gamma, domain.region('Dtilde'))
        u = solver.solve(rng(4).standard_normal(len(solver.boundary)))
        extension = np.zeros(domain.mesh.n_vertices)
        extension[solver.boundary] = rng(5).standard_normal(len(solver.boundary))
        extension[solver.interior] = rng(6).standard_normal(len(solver.interior))
        flux = conormal_flux(u)
        form = u.values @ (solver.stiffness @ extension)
        self.assertAlmostEqual(flux.pairing(extension[solver.boundary]), form, places=9)

    def test_annulus_flux_density_matches_the_radial_oracle(self):
        mesh, radius = annulus(h=0.015)
        solution = solve_dirichlet(1.0, whole(mesh), lambda p: (np.linalg.norm(p, axis=1) > 0.75).astype(float))
        boundary = np.flatnonzero(mesh.facet_cells[:, 1] < 0)
        outer = boundary[np.linalg.norm(mesh.facet_centroids[boundary], axis=1) > 0.75]
        flux = conormal_flux(solution, outer)
        exact = 1 / (1.0 * log(2.0))
        self.assertLess(np.abs(flux.density - exact).max() / exact, 0.15)
        self.assertAlmostEqual(flux.total, 2 * pi / log(2.0), delta=0.01 * 2 * pi / log(2.0))


class GreenTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.domain = small_disk()
        cls.greens = GreenSolver(make_reference(cls.domain, 'smooth_ramp'), cls.domain)

    def test_symmetry_at_nodes(self):
        free = self.greens.solver.interior
        pairs = rng(7).choice(free, size=(20, 2), replace=False)
        columns = self.greens.node_columns(pairs.ravel()).reshape(self.domain.mesh.n_vertices, 20, 2)
        for k, (x, y) in enumerate(pairs):
            gxy, gyx = columns[x, k, 1], columns[y, k, 0]
            scale = max(np.abs(columns[:, k, 0]).max(), np.abs(columns[:, k, 1]).max())
            self.assertLessEqual(abs(gxy - gyx), 1e-10 * scale)

    def test_traces_from_the_bulge_live_on_sigma0(self):
        domain = self.domain
        green = self.greens.green(domain.marked_point)
        self.assertLess(green.snap_distance, domain.h)
        outside = np.setdiff1d(domain.nodes('dOmega'), domain.nodes('Sigma0'))
        self.assertTrue(np.all(green.values[outside] == 0.0))
        self.assertTrue(np.all(green.values[domain.nodes('dOmegaTilde')] == 0.0))
        self.assertGreater(np.abs(green.values[domain.nodes('Sigma0')]).max(), 0.0)

    def test_boundary_source_is_rejected(self):
        node = self.domain.nodes('dOmegaTilde')[0]
        with self.assertRaises(SolverError):
            self.greens.green(self.domain.mesh.vertices[node])

    def test_annulus_energy(self):
        green = self.greens.green(self.domain.marked_point)
        h = self.domain.h
        radii = [3 * h, 4 * h, 6 * h, 10 * h]
        energies = [energy_annulus(green, r, h) for r in radii]
        self.assertTrue(all(a >= b for a, b in zip(energies, energies[1:])))
        self.assertEqual(energy_annulus(green, 10.0, h), 0.0)
        with self.assertRaises(SolverError):
            energy_annulus(green, 1.5 * h, h)

    def test_two_dimensional_growth_is_logarithmic(self):
        green = self.greens.green(self.domain.center)
        decay = energy_decay(green, 4 * self.domain.h, 0.2, count=5, h=self.domain.h)
        # E(r) ~ log(R / r) / (2 pi gamma) in the plane, so the log-log slope is mild
        self.assertLess(decay.slope, 0.0)
        self.assertGreater(decay.slope, -1.0)


class EnergyDecayTests(SimpleTestCase):
    """The bundled coarse 3D box, source at the center of the body"""

    def test_three_dimensional_decay_follows_the_free_space_exponent(self):
        config = load_config('energy3d')
        domain = build_domain(config.geometry)
        gamma = make_reference(domain, 'constant', value=1.0)
        green = GreenSolver(gamma, domain, config.solver).green(domain.center)
        decay = energy_decay(green, 4 * domain.h, domain.rho1, config.skernel['energy_radii'])
        self.assertGreaterEqual(decay.slope, -1.4)
        self.assertLessEqual(decay.slope, -0.6)
        self.assertGreater(decay.r_squared, 0.95)
        self.assertLessEqual(domain.mesh.n_vertices, 150000)
