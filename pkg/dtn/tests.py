import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from scipy.linalg import eigh

from conductivity.fields import make_reference, perturb_in_D
from core.exceptions import OperatorError
from core.testing import rng, small_disk
from geometry.builders import polar_disk
from geometry.mesh import SimplexMesh, whole
from pde.assembly import assemble, surface_mass
from pde.solvers import DirichletSolver
from .io import dump_operator, load_operator
from .operators import (
    BoundaryOperator, assemble_dtn, assemble_full_dtn, assemble_local_dtn, gram_half, op_norm,
    pencil_eigenvalues,
)


def unit_disk(h=0.04):
    mesh = SimplexMesh(*polar_disk(1.0, h))
    region = whole(mesh)
    return mesh, region, region.boundary_facets, region.boundary_nodes


class GramTests(SimpleTestCase):

    def test_circle_pencil_has_squared_wavenumbers(self):
        mesh, _, facets, nodes = unit_disk()
        mu = pencil_eigenvalues(mesh, facets, nodes)[:9]
        expected = np.array([0, 1, 1, 4, 4, 9, 9, 16, 16], dtype=float)
        self.assertLess(abs(mu[0]), 1e-10)
        np.testing.assert_allclose(mu[1:], expected[1:], rtol=0.01)

    def test_constant_has_norm_of_the_perimeter(self):
        mesh, _, facets, nodes = unit_disk()
        gram = gram_half(mesh, facets, nodes)
        ones = np.ones(len(nodes))
        self.assertAlmostEqual(ones @ gram @ ones, mesh.facet_measures[facets].sum(), places=10)
        self.assertTrue(np.all(np.linalg.eigvalsh(gram) > 0))

    def test_single_dof_uses_the_mass(self):
        mesh, _, facets, nodes = unit_disk()
        gram = gram_half(mesh, facets, nodes[:1])
        mass = surface_mass(mesh, facets).toarray()[nodes[0], nodes[0]]
        np.testing.assert_allclose(gram, [[mass]])


class OpNormTests(SimpleTestCase):

    def setUp(self):
        generator = rng(11)
        factor = generator.standard_normal((5, 5))
        self.gram = factor @ factor.T + 5 * np.eye(5)
        sym = generator.standard_normal((5, 5))
        self.matrix = sym + sym.T

    def test_gram_has_unit_norm(self):
        self.assertAlmostEqual(op_norm(self.gram, self.gram), 1.0, places=12)

    def test_zero_operator(self):
        self.assertEqual(op_norm(np.zeros((5, 5)), self.gram), 0.0)

    def test_rayleigh_quotients_approach_the_norm(self):
        norm = op_norm(self.matrix, self.gram)
        generator = rng(12)
        best = 0.0
        for _ in range(10):
            phi = generator.standard_normal((100000, 5))
            quotient = np.abs(np.einsum('pi,ij,pj->p', phi, self.matrix, phi)) / np.einsum(
                'pi,ij,pj->p', phi, self.gram, phi)
            best = max(best, quotient.max())
        self.assertLessEqual(best, norm * (1 + 1e-12))
        self.assertGreaterEqual(best, 0.99 * norm)

    def test_nonsymmetric_operator_uses_singular_values(self):
        matrix = np.triu(np.ones((3, 3)))
        self.assertAlmostEqual(op_norm(matrix, np.eye(3)), np.linalg.svd(matrix, compute_uv=False)[0])

    def test_nonconforming_shapes(self):
        with self.assertRaises(OperatorError):
            op_norm(np.eye(3), np.eye(4))


class SteklovTests(SimpleTestCase):

    def test_disk_spectrum(self):
        mesh, region, facets, nodes = unit_disk()
        operator = assemble_dtn(1.0, region, nodes, facets, 'circle')
        mass = surface_mass(mesh, facets).toarray()[np.ix_(nodes, nodes)]
        sigma = eigh(0.5 * (operator.matrix + operator.matrix.T), mass, eigvals_only=True)[:7]
        self.assertLess(abs(sigma[0]), 1e-8)
        np.testing.assert_allclose(sigma[1:], [1, 1, 2, 2, 3, 3], rtol=0.03)


class LocalDtNTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.domain = small_disk()
        cls.gamma0 = make_reference(cls.domain, 'constant', lam=0.4)
        cls.gamma1, _ = perturb_in_D(cls.gamma0, cls.domain, 'cosine', 0.5)
        cls.local0 = assemble_local_dtn(cls.gamma0, cls.domain)
        cls.local1 = assemble_local_dtn(cls.gamma1, cls.domain)

    def test_symmetric_positive(self):
        self.assertLess(self.local0.symmetry_defect(), 1e-10)
        self.assertGreater(np.linalg.eigvalsh(0.5 * (self.local0.matrix + self.local0.matrix.T)).min(), 0.0)

    def test_block_of_the_full_boundary_map(self):
        omega = self.domain.region('Omega')
        full = assemble_dtn(self.gamma0, omega, omega.boundary_nodes, self.domain.facets('dOmega'), 'dOmega')
        block = full.restrict(self.domain.sigma_dofs)
        scale = np.abs(self.local0.matrix).max()
        self.assertLess(np.abs(block.matrix - self.local0.matrix).max(), 1e-10 * scale)

    def test_restriction_lowers_the_norm(self):
        half = self.domain.sigma_dofs[: len(self.domain.sigma_dofs) // 2]
        gap = self.local1 - self.local0
        self.assertLessEqual(gap.restrict(half).norm(), gap.norm() * (1 + 1e-12))

    def test_difference_pairing_is_the_interior_identity(self):
        omega = self.domain.region('Omega')
        dofs = self.domain.sigma_dofs
        eta1, eta2 = rng(21).standard_normal(len(dofs)), rng(22).standard_normal(len(dofs))
        fields = []
        for gamma, eta in ((self.gamma1, eta1), (self.gamma0, eta2)):
            solver = DirichletSolver(gamma, omega)
            data = np.zeros(self.domain.mesh.n_vertices)
            data[dofs] = eta
            fields.append(solver.solve(data).values)
        difference = self.gamma1.cell_means - self.gamma0.cell_means
        interior = fields[0] @ (assemble(difference, omega) @ fields[1])
        boundary = (self.local1 - self.local0).pairing(eta1, eta2)
        scale = np.linalg.norm(eta1) * np.linalg.norm(eta2) * np.abs(self.local0.matrix).max()
        self.assertLess(abs(boundary - interior), 1e-10 * scale)

    def test_dof_cap(self):
        with self.assertRaises(OperatorError) as ctx:
            assemble_local_dtn(self.gamma0, self.domain, max_dofs=3)
        self.assertEqual(ctx.exception.key, 'dtn.max_dofs')

    def test_mismatched_operators_do_not_subtract(self):
        full = assemble_full_dtn(self.gamma0, self.domain)
        with self.assertRaises(OperatorError):
            full - self.local0


class FullDtNTests(SimpleTestCase):

    def test_constants_have_no_flux(self):
        domain = small_disk()
        operator = assemble_full_dtn(make_reference(domain, 'smooth_ramp'), domain, 'dDtilde')
        ones = np.ones(operator.size)
        self.assertLess(np.abs(operator.apply(ones)).max(), 1e-10 * np.abs(operator.matrix).max())
        np.testing.assert_array_equal(operator.dofs, domain.nodes('dDtilde'))

    def test_difference_pairing_is_the_interior_identity(self):
        domain = small_disk()
        gamma0 = make_reference(domain, 'constant', lam=0.4)
        gamma1, _ = perturb_in_D(gamma0, domain, 'cosine', 0.5)
        full0, full1 = assemble_full_dtn(gamma0, domain), assemble_full_dtn(gamma1, domain)
        region = domain.region('Dtilde')
        solvers = [DirichletSolver(gamma, region) for gamma in (gamma1, gamma0)]
        form = assemble(gamma1.cell_means - gamma0.cell_means, region)
        scale = np.abs(full0.matrix).max()
        for k in range(10):
            etas = rng(40 + k).standard_normal((2, full0.size))
            fields = []
            for solver, eta in zip(solvers, etas):
                data = np.zeros(domain.mesh.n_vertices)
                data[full0.dofs] = eta
                fields.append(solver.solve(data).values)
            interior = fields[0] @ (form @ fields[1])
            boundary = (full1 - full0).pairing(*etas)
            self.assertLess(abs(boundary - interior), 1e-10 * scale * np.prod(np.linalg.norm(etas, axis=1)))

    def test_scales_with_the_conductivity(self):
        domain = small_disk()
        gamma = make_reference(domain, 'smooth_ramp')
        single = assemble_full_dtn(gamma, domain)
        for factor in (0.5, 3.0):
            scaled = assemble_full_dtn(gamma.scaled(factor), domain)
            difference = np.abs(scaled.matrix - factor * single.matrix).max()
            self.assertLess(difference, 1e-10 * factor * np.abs(single.matrix).max())

    def test_unknown_tag(self):
        domain = small_disk()
        with self.assertRaises(OperatorError):
            assemble_full_dtn(1.0, domain, 'Sigma')


class OperatorDumpTests(SimpleTestCase):

    def test_dump_reloads_exactly(self):
        generator = rng(31)
        operator = BoundaryOperator(generator.standard_normal((4, 4)), np.eye(4) * np.pi, np.array([2, 5, 7, 9]),
                                    'Sigma', 'gamma1-gamma2')
        with tempfile.TemporaryDirectory() as tmp:
            loaded = load_operator(dump_operator(operator, Path(tmp) / 'op.txt'))
        np.testing.assert_array_equal(loaded.matrix, operator.matrix)
        np.testing.assert_array_equal(loaded.gram, operator.gram)
        np.testing.assert_array_equal(loaded.dofs, operator.dofs)
        self.assertEqual((loaded.tag, loaded.conductivity), ('Sigma', 'gamma1-gamma2'))

    def test_foreign_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'op.txt'
            path.write_text('hello\n')
            with self.assertRaises(OperatorError):
                load_operator(path)
