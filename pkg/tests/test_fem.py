"""Macro element, assembly and mesh-generator tests."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from porohom import fem
from porohom.errors import (
    DegenerateElement,
    MissingTangent,
    NonPositiveJacobian,
    UnsupportedMesh,
)

ALL_2D = [("square", et) for et in ("q1", "p1", "p2")]
ALL_3D = [("cube", et) for et in ("q1", "p1", "p2")]


class TestShapeFunctions:
    @pytest.mark.parametrize("etype,dim", [
        ("q1", 2), ("q1", 3), ("p1", 2), ("p1", 3), ("p2", 2), ("p2", 3),
    ])
    def test_partition_of_unity(self, etype, dim):
        gp, gw, shape = fem.reference_element(etype, dim)
        rng = np.random.default_rng(0)
        for _ in range(5):
            xi = rng.uniform(0.05, 0.25, dim)
            n, dn = shape(xi)
            assert n.sum() == pytest.approx(1.0, abs=1e-13)
            assert_allclose(dn.sum(axis=0), 0.0, atol=1e-13)

    @pytest.mark.parametrize("etype,dim", [
        ("q1", 2), ("q1", 3), ("p1", 2), ("p1", 3), ("p2", 2), ("p2", 3),
    ])
    def test_quadrature_weight_sum(self, etype, dim):
        gp, gw, _ = fem.reference_element(etype, dim)
        ref_vol = {("q1", 2): 4.0, ("q1", 3): 8.0, ("p1", 2): 0.5,
                   ("p1", 3): 1 / 6, ("p2", 2): 0.5, ("p2", 3): 1 / 6}
        assert gw.sum() == pytest.approx(ref_vol[(etype, dim)], rel=1e-13)


class TestDeformationGradient:
    @pytest.mark.parametrize("shape,etype", ALL_2D + ALL_3D)
    def test_zero_displacement(self, shape, etype):
        mesh = fem.generate_mesh(shape, etype, refine=0)
        F = fem.deformation_gradients(mesh, np.zeros(mesh.n_dofs))
        assert_allclose(F, np.broadcast_to(np.eye(mesh.dim), F.shape), atol=1e-14)

    @pytest.mark.parametrize("shape,etype", ALL_2D + ALL_3D)
    def test_affine_patch(self, shape, etype):
        mesh = fem.generate_mesh(shape, etype, refine=0)
        d = mesh.dim
        rng = np.random.default_rng(1)
        H = 0.1 * rng.normal(size=(d, d))
        u = (mesh.nodes @ H.T).ravel()
        F = fem.deformation_gradients(mesh, u)
        assert abs(F - (np.eye(d) + H)).max() <= 1e-12

    def test_quadratic_field_on_p2(self):
        mesh = fem.generate_mesh("square", "p2", refine=0)
        x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
        # u = (x^2 + 0.3 xy, 0.5 y^2 - 0.2 x^2); grad is linear, exactly
        # representable by P2 shape-function derivatives
        u = np.column_stack([x**2 + 0.3 * x * y, 0.5 * y**2 - 0.2 * x**2]).ravel()
        cache = fem._quad_cache(mesh)
        F = fem.deformation_gradients(mesh, u)
        gp, _, shape = fem.reference_element("p2", 2)
        for e in range(mesh.n_elements):
            Xe = mesh.nodes[mesh.elements[e]]
            for q, xi in enumerate(gp):
                n, _ = shape(xi)
                px, py = n @ Xe
                grad = np.array([
                    [2 * px + 0.3 * py, 0.3 * px],
                    [-0.4 * px, 1.0 * py],
                ])
                assert_allclose(F[e, q], np.eye(2) + grad, atol=1e-10)

    def test_dof_count_guard(self):
        mesh = fem.generate_mesh("square", "q1", 0)
        with pytest.raises(ValueError):
            fem.deformation_gradient(mesh, 0, 0, np.zeros(3))


class TestResidual:
    def test_zero_callback(self):
        mesh = fem.generate_mesh("square", "q1", 0)

        class Zero(fem.ConstitutiveCallback):
            def evaluate(self, F):
                return np.zeros_like(F)

        r = fem.assemble_internal_forces(mesh, np.zeros(mesh.n_dofs), Zero())
        assert abs(r).max() == 0.0

    @pytest.mark.parametrize("shape,etype", ALL_2D + ALL_3D)
    def test_constant_stress_patch(self, shape, etype):
        # affine displacement everywhere -> constant P -> interior residual 0
        mesh = fem.generate_mesh(shape, etype, refine=0)
        d = mesh.dim
        cb = fem.LinearElastic.isotropic(E=70.0, nu=0.3, dim=d)
        H = np.full((d, d), 0.02) + 0.05 * np.eye(d)
        u = (mesh.nodes @ H.T).ravel()
        r = fem.assemble_internal_forces(mesh, u, cb)
        on_bnd = np.zeros(mesh.n_nodes, dtype=bool)
        for ax in range(d):
            on_bnd |= np.isclose(mesh.nodes[:, ax], 0) | np.isclose(mesh.nodes[:, ax], 1)
        if shape == "cube":
            pass  # cube nodes span [0,1] in all axes
        interior = np.repeat(~on_bnd, d)
        scale = abs(r[np.repeat(on_bnd, d)]).max()
        assert abs(r[interior]).max() <= 1e-10 * scale

    def test_matches_dense_hand_assembly(self):
        # independent quadrature loop over explicit Q1 shape functions
        mesh = fem.square_mesh("q1", 2, 1)
        cb = fem.LinearElastic.isotropic(E=10.0, nu=0.25, dim=2)
        rng = np.random.default_rng(2)
        u = 0.01 * rng.normal(size=mesh.n_dofs)

        g = 1 / np.sqrt(3)
        qps = [(-g, -g), (g, -g), (-g, g), (g, g)]
        K = np.zeros((mesh.n_dofs, mesh.n_dofs))
        for el in mesh.elements:
            Xe = mesh.nodes[el]
            edofs = np.concatenate([[2 * n, 2 * n + 1] for n in el])
            for xi, eta in qps:
                dn = 0.25 * np.array([
                    [-(1 - eta), -(1 - xi)],
                    [(1 - eta), -(1 + xi)],
                    [(1 + eta), (1 + xi)],
                    [-(1 + eta), (1 - xi)],
                ])
                J = Xe.T @ dn
                detJ = np.linalg.det(J)
                dndx = dn @ np.linalg.inv(J)
                B = np.zeros((4, 8))
                for a in range(4):
                    for i in range(2):
                        for j in range(2):
                            B[i * 2 + j, 2 * a + i] += dndx[a, j]
                ke = detJ * B.T @ cb.C @ B
                K[np.ix_(edofs, edofs)] += ke
        r_hand = K @ u
        r = fem.assemble_internal_forces(mesh, u, cb)
        assert_allclose(r, r_hand, rtol=1e-12, atol=1e-14)

    def test_translation_invariance(self):
        mesh = fem.generate_mesh("square", "p1", 0)
        cb = fem.LinearElastic.isotropic(E=5.0, nu=0.2, dim=2)
        rng = np.random.default_rng(3)
        u = 0.01 * rng.normal(size=mesh.n_dofs)
        r1 = fem.assemble_internal_forces(mesh, u, cb)
        shift = np.tile([0.3, -0.7], mesh.n_nodes)
        r2 = fem.assemble_internal_forces(mesh, u + shift, cb)
        assert_allclose(r1, r2, atol=1e-12 * max(1.0, abs(r1).max()))

    def test_nonpositive_det_raise_and_warn(self):
        mesh = fem.generate_mesh("square", "q1", 0)
        cb = fem.LinearElastic.isotropic(E=5.0, nu=0.2, dim=2)
        # mirror the mesh in x: F = diag(-1, 1), det = -1
        u = (mesh.nodes @ np.diag([-2.0, 0.0])).ravel()
        with pytest.raises(NonPositiveJacobian):
            fem.assemble_internal_forces(mesh, u, cb, on_nonpositive_det="raise")
        with pytest.warns(RuntimeWarning):
            fem.assemble_internal_forces(mesh, u, cb, on_nonpositive_det="warn")

    def test_dirichlet_rows_zeroed(self):
        mesh = fem.generate_mesh("square", "q1", 0)
        mesh = mesh.with_dirichlet([(0, 0, 0.1), (0, 1, 0.0)])
        cb = fem.LinearElastic.isotropic(E=5.0, nu=0.2, dim=2)
        rng = np.random.default_rng(4)
        u = 0.01 * rng.normal(size=mesh.n_dofs)
        r = fem.assemble_residual(mesh, u, cb)
        assert r[0] == 0.0 and r[1] == 0.0


class TestTangent:
    @pytest.mark.parametrize("shape,etype", [("square", "q1"), ("square", "p2"),
                                             ("cube", "p1")])
    def test_fd_consistency(self, shape, etype):
        mesh = fem.generate_mesh(shape, etype, refine=0)
        cb = fem.LinearElastic.isotropic(E=100.0, nu=0.3, dim=mesh.dim)
        rng = np.random.default_rng(5)
        u = 0.01 * rng.normal(size=mesh.n_dofs)
        K = fem.assemble_tangent(mesh, u, cb)
        v = rng.normal(size=mesh.n_dofs)
        h = 1e-6
        fd = (
            fem.assemble_internal_forces(mesh, u + h * v, cb)
            - fem.assemble_internal_forces(mesh, u - h * v, cb)
        ) / (2 * h)
        Tv = K @ v
        assert np.linalg.norm(fd - Tv) <= 1e-5 * np.linalg.norm(Tv)

    def test_symmetric_modulus_gives_symmetric_tangent(self):
        mesh = fem.generate_mesh("square", "p1", 0)
        cb = fem.LinearElastic.isotropic(E=100.0, nu=0.3, dim=2)
        K = fem.assemble_tangent(mesh, np.zeros(mesh.n_dofs), cb).toarray()
        assert abs(K - K.T).max() <= 1e-10 * abs(K).max()

    def test_missing_tangent(self):
        mesh = fem.generate_mesh("square", "q1", 0)

        class NoTan(fem.ConstitutiveCallback):
            def evaluate(self, F):
                return np.zeros_like(F)

        with pytest.raises(MissingTangent):
            fem.assemble_tangent(mesh, np.zeros(mesh.n_dofs), NoTan())

    def test_p1_reference_element_analytic(self):
        # single unit triangle, plane-strain linear elasticity: the one-point
        # rule integrates the constant-gradient stiffness exactly
        nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        mesh = fem.MacroMesh(dim=2, etype="p1", nodes=nodes,
                             elements=np.array([[0, 1, 2]]))
        E, nu = 13.0, 0.3
        cb = fem.LinearElastic.isotropic(E, nu, 2)
        K = fem.assemble_tangent(mesh, np.zeros(6), cb).toarray()
        # analytic: K = A * G^T C G with constant shape gradients
        grads = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        Kref = np.zeros((6, 6))
        for a in range(3):
            for b in range(3):
                for i in range(2):
                    for j in range(2):
                        acc = 0.0
                        for k in range(2):
                            for l in range(2):
                                acc += grads[a, k] * cb.C[i * 2 + k, j * 2 + l] * grads[b, l]
                        Kref[2 * a + i, 2 * b + j] = 0.5 * acc
        assert_allclose(K, Kref, rtol=1e-12, atol=1e-12)


class TestGenerators:
    def test_refine_dof_ladder(self):
        for et in ("q1", "p1", "p2"):
            m0 = fem.generate_mesh("square", et, 0)
            m1 = fem.mesh_refine(m0)
            assert m0.n_dofs == 50
            assert m1.n_dofs == 162
            m2 = fem.mesh_refine(m1)
            assert m2.n_dofs == 578

    def test_refine_twice_matches_composition(self):
        m = fem.generate_mesh("square", "q1", 0)
        a = fem.mesh_refine(fem.mesh_refine(m))
        b = fem.generate_mesh("square", "q1", 2)
        assert a.n_nodes == b.n_nodes
        assert np.array_equal(a.elements, b.elements)

    def test_refine_unstructured_raises(self):
        mesh = fem.generate_mesh("square", "q1", 0)
        mesh.structure = None
        with pytest.raises(UnsupportedMesh):
            fem.mesh_refine(mesh)

    @pytest.mark.parametrize("shape,etype", [
        ("plate1", "p1"), ("plate5", "p1"), ("plate1", "p2"),
        ("cubehole", "p1"), ("cylinder", "p1"),
    ])
    def test_demo_meshes_valid(self, shape, etype):
        mesh = fem.generate_mesh(shape, etype, refine=0)
        fem._quad_cache(mesh)  # raises DegenerateElement on bad detJ
        assert mesh.n_elements > 0

    def test_plate_q1_unsupported(self):
        with pytest.raises(UnsupportedMesh):
            fem.generate_mesh("plate1", "q1", 0)

    def test_cube_refine_growth(self):
        m0 = fem.generate_mesh("cube", "p1", 0)
        m1 = fem.mesh_refine(m0)
        assert m1.n_dofs == 375  # (2n+1)^3 * 3 at n=2


class TestMeshIO:
    def test_roundtrip(self, tmp_path):
        mesh = fem.generate_mesh("square", "p2", 0).with_dirichlet(
            [(0, 0, 0.25), (3, 1, -0.5)]
        )
        p = tmp_path / "mesh.txt"
        fem.save_mesh(mesh, p)
        back = fem.load_mesh(p)
        assert back.etype == mesh.etype
        assert np.array_equal(back.nodes, mesh.nodes)
        assert np.array_equal(back.elements, mesh.elements)
        assert np.array_equal(back.dirichlet_dofs, mesh.dirichlet_dofs)
        assert np.array_equal(back.dirichlet_vals, mesh.dirichlet_vals)

    def test_degenerate_element_detected(self):
        nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.0]])
        mesh = fem.MacroMesh(dim=2, etype="p1", nodes=nodes,
                             elements=np.array([[0, 1, 2]]))
        with pytest.raises(DegenerateElement):
            fem._quad_cache(mesh)
