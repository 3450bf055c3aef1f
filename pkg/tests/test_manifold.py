import numpy as np
import pytest

from rsam import linalg
from rsam.errors import CapacityError, ShapeError
from rsam.manifold import (
    Euclidean,
    Point,
    Stiefel,
    Tangent,
    project_tangent,
    random_point,
    random_tangent,
    retract,
    riemannian_grad,
    tangent_basis,
)

QR_RETRACTION_CONSTANT = 1 + np.sqrt(2) / 2


def tangency_defect(x: Point, z: np.ndarray) -> float:
    X = x.value
    return np.linalg.norm(X.T @ z + z.T @ X)


class TestProjectTangent:
    def test_tangent_unchanged(self):
        x = random_point(Stiefel(5, 2), 0)
        z = project_tangent(x, np.random.default_rng(1).standard_normal((5, 2)))
        z2 = project_tangent(x, z.value)
        assert np.linalg.norm(z2.value - z.value) <= 1e-12

    def test_point_itself_annihilated(self):
        x = random_point(Stiefel(5, 2), 2)
        z = project_tangent(x, x.value)
        assert np.linalg.norm(z.value) <= 1e-12

    def test_tangency_condition(self):
        rng = np.random.default_rng(3)
        x = random_point(Stiefel(4, 2), 3)
        z = project_tangent(x, rng.standard_normal((4, 2)))
        assert tangency_defect(x, z.value) <= 1e-12

    def test_idempotent_many_points(self):
        rng = np.random.default_rng(4)
        for trial in range(1000):
            n = int(rng.integers(2, 17))
            p = int(rng.integers(1, n + 1))
            x = random_point(Stiefel(n, p), trial)
            v = rng.standard_normal((n, p))
            z = project_tangent(x, v).value
            z2 = project_tangent(x, z).value
            assert np.linalg.norm(z2 - z) <= 1e-12

    def test_orthogonal_to_normal_space(self):
        # residual v - Proj(v) must be Frobenius-orthogonal to every
        # tangent basis element
        rng = np.random.default_rng(5)
        x = random_point(Stiefel(5, 2), 5)
        v = rng.standard_normal((5, 2))
        resid = v - project_tangent(x, v).value
        for u in tangent_basis(x):
            assert abs(linalg.dot_flat(resid, u.value)) <= 1e-10

    def test_euclidean_identity(self):
        x = random_point(Euclidean(3, 2), 0)
        v = np.random.default_rng(0).standard_normal((3, 2))
        assert np.array_equal(project_tangent(x, v).value, v)

    def test_shape_mismatch(self):
        x = random_point(Stiefel(4, 2), 0)
        with pytest.raises(ShapeError):
            project_tangent(x, np.zeros((3, 2)))


class TestRetract:
    def test_zero_tangent(self):
        x = random_point(Stiefel(6, 3), 1)
        y = retract(x, Tangent(x, np.zeros((6, 3))))
        assert np.linalg.norm(y.value - x.value) <= 1e-12

    def test_euclidean_is_addition(self):
        x = random_point(Euclidean(3, 2), 1)
        v = np.random.default_rng(2).standard_normal((3, 2))
        y = retract(x, Tangent(x, v))
        assert np.array_equal(y.value, x.value + v)

    def test_membership_preserved(self):
        x = random_point(Stiefel(8, 3), 7)
        for i in range(200):
            t = random_tangent(x, 0.2, i)
            x = retract(x, t)
            assert np.linalg.norm(x.value.T @ x.value - np.eye(3)) <= 1e-8

    def test_second_order_bound(self):
        # || R_X(eps) - X - eps ||_F <= (1 + sqrt(2)/2) ||eps||_F^2
        rng = np.random.default_rng(11)
        for trial in range(1000):
            n, p = [(4, 2), (8, 3), (16, 5)][trial % 3]
            x = random_point(Stiefel(n, p), trial)
            norm = float(rng.uniform(1e-4, 0.3))
            eps = random_tangent(x, norm, trial)
            y = retract(x, eps)
            defect = np.linalg.norm(y.value - x.value - eps.value)
            assert defect <= QR_RETRACTION_CONSTANT * norm**2


class TestRiemannianGrad:
    def test_euclidean_passthrough(self):
        x = random_point(Euclidean(2, 3), 0)
        g = np.random.default_rng(1).standard_normal((2, 3))
        assert np.array_equal(riemannian_grad(x, g).value, g)

    def test_zero_gradient(self):
        x = random_point(Stiefel(4, 2), 1)
        assert np.linalg.norm(riemannian_grad(x, np.zeros((4, 2))).value) == 0

    def test_result_is_tangent(self):
        x = random_point(Stiefel(4, 2), 2)
        g = np.random.default_rng(3).standard_normal((4, 2))
        assert tangency_defect(x, riemannian_grad(x, g).value) <= 1e-12


class TestRandomPoint:
    def test_deterministic(self):
        a = random_point(Stiefel(6, 2), 42)
        b = random_point(Stiefel(6, 2), 42)
        assert np.array_equal(a.value, b.value)

    def test_membership(self):
        x = random_point(Stiefel(8, 3), 0)
        assert np.linalg.norm(x.value.T @ x.value - np.eye(3)) <= 1e-10

    def test_euclidean_matches_reference_stream(self):
        x = random_point(Euclidean(3, 2), 123)
        want = np.random.default_rng(123).standard_normal((3, 2))
        assert np.array_equal(x.value, want)


class TestRandomTangent:
    def test_zero_norm(self):
        x = random_point(Stiefel(4, 2), 0)
        t = random_tangent(x, 0.0, 5)
        assert np.all(t.value == 0)

    def test_norm_contract(self):
        x = random_point(Stiefel(4, 2), 1)
        t = random_tangent(x, 0.5, 7)
        assert abs(t.norm - 0.5) <= 1e-10

    def test_tangency(self):
        x = random_point(Stiefel(6, 3), 2)
        t = random_tangent(x, 1.0, 9)
        assert tangency_defect(x, t.value) <= 1e-10


class TestTangentBasis:
    def test_euclidean_canonical(self):
        x = random_point(Euclidean(2, 1), 0)
        basis = tangent_basis(x)
        assert len(basis) == 2
        assert np.array_equal(basis[0].value, [[1.0], [0.0]])
        assert np.array_equal(basis[1].value, [[0.0], [1.0]])

    def test_circle_has_one_direction(self):
        x = random_point(Stiefel(2, 1), 3)
        basis = tangent_basis(x)
        assert len(basis) == 1
        assert abs(linalg.dot_flat(basis[0].value, x.value)) <= 1e-12

    def test_dimension_and_gram(self):
        x = random_point(Stiefel(4, 2), 4)
        basis = tangent_basis(x)
        assert len(basis) == 4 * 2 - 2 * 3 // 2  # 5
        gram = np.array(
            [[linalg.dot_flat(a.value, b.value) for b in basis] for a in basis]
        )
        assert np.linalg.norm(gram - np.eye(len(basis))) <= 1e-10

    @pytest.mark.parametrize("n,p", [(3, 1), (5, 2), (6, 3), (7, 5)])
    def test_dimension_formula(self, n, p):
        x = random_point(Stiefel(n, p), n * 10 + p)
        assert len(tangent_basis(x)) == n * p - p * (p + 1) // 2

    def test_capacity_guard(self):
        x = random_point(Stiefel(2048, 3), 0)
        with pytest.raises(CapacityError):
            tangent_basis(x)


class TestTypes:
    def test_stiefel_requires_p_le_n(self):
        with pytest.raises(ShapeError):
            Stiefel(2, 3)

    def test_point_membership_checked(self):
        with pytest.raises(ShapeError):
            Point(Stiefel(3, 2), np.ones((3, 2)))
