"""Manifold geometry: the Stiefel manifold St(p, n) of n x p matrices
with orthonormal columns, and the trivial Euclidean manifold.

Points and tangents are immutable value objects.  The Stiefel retraction
is the unique Q factor of the QR decomposition of X + eps; the tangent
projection is Proj_X(v) = v - X * Sym(X^T v).
"""

from dataclasses import dataclass

import numpy as np

from rsam import linalg
from rsam.errors import CapacityError, ShapeError

MEMBERSHIP_TOL = 1e-8
TANGENT_BASIS_GUARD = 4096  # max n*p for the explicit basis construction


@dataclass(frozen=True)
class Stiefel:
    n: int
    p: int

    def __post_init__(self):
        if not (0 < self.p <= self.n):
            raise ShapeError(f"Stiefel requires 0 < p <= n, got ({self.n}, {self.p})")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.p)

    @property
    def dim(self) -> int:
        return self.n * self.p - self.p * (self.p + 1) // 2


@dataclass(frozen=True)
class Euclidean:
    rows: int
    cols: int

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def dim(self) -> int:
        return self.rows * self.cols


ManifoldKind = Stiefel | Euclidean


@dataclass(frozen=True)
class Point:
    manifold: ManifoldKind
    value: np.ndarray

    def __post_init__(self):
        v = linalg.as_matrix(self.value)
        object.__setattr__(self, "value", v)
        if v.shape != self.manifold.shape:
            raise ShapeError(
                f"point shape {v.shape} does not match manifold {self.manifold}"
            )
        if isinstance(self.manifold, Stiefel):
            resid = np.linalg.norm(v.T @ v - np.eye(self.manifold.p))
            if resid > MEMBERSHIP_TOL:
                raise ShapeError(
                    f"not on St({self.manifold.p},{self.manifold.n}): "
                    f"||X^T X - I|| = {resid:.3e}"
                )


@dataclass(frozen=True)
class Tangent:
    at: Point
    value: np.ndarray

    def __post_init__(self):
        v = linalg.as_matrix(self.value)
        object.__setattr__(self, "value", v)
        if v.shape != self.at.value.shape:
            raise ShapeError(
                f"tangent shape {v.shape} does not match point {self.at.value.shape}"
            )

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.value))


def project_tangent(x: Point, v: np.ndarray) -> Tangent:
    """Orthogonal projection of an ambient matrix onto the tangent space
    at x (identity on Euclidean manifolds)."""
    v = linalg.as_matrix(v)
    if v.shape != x.value.shape:
        raise ShapeError(f"shape {v.shape} does not match point {x.value.shape}")
    if isinstance(x.manifold, Euclidean):
        return Tangent(x, v)
    X = x.value
    return Tangent(x, v - X @ linalg.sym(X.T @ v))


def retract(x: Point, eps: Tangent) -> Point:
    """Map a tangent step back onto the manifold.

    Stiefel: the sign-fixed Q factor of X + eps.  Raises RankError when
    X + eps is rank-deficient (the step was too large for this point).
    Euclidean: plain addition.
    """
    if eps.at is not x and not np.array_equal(eps.at.value, x.value):
        raise ShapeError("tangent is anchored at a different point")
    if isinstance(x.manifold, Euclidean):
        return Point(x.manifold, x.value + eps.value)
    q, _ = linalg.qr_unique(x.value + eps.value)
    return Point(x.manifold, q)


def riemannian_grad(x: Point, euclid_grad: np.ndarray) -> Tangent:
    """Riemannian gradient: tangent projection of the Euclidean gradient."""
    return project_tangent(x, euclid_grad)


def random_point(kind: ManifoldKind, seed: int) -> Point:
    """Seeded random point: the Q factor of a Gaussian matrix on Stiefel,
    a standard-normal matrix on Euclidean."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(kind.shape)
    if isinstance(kind, Euclidean):
        return Point(kind, g)
    while True:
        try:
            q, _ = linalg.qr_unique(g)
            return Point(kind, q)
        except Exception:
            g = rng.standard_normal(kind.shape)  # full rank almost surely


def random_tangent(x: Point, norm: float, seed: int) -> Tangent:
    """Seeded random tangent of the requested Frobenius norm: project a
    Gaussian matrix, then rescale.  Redraws if the projection is
    degenerate."""
    if norm < 0:
        raise ValueError(f"norm must be nonnegative, got {norm}")
    if norm == 0:
        return Tangent(x, np.zeros_like(x.value))
    s = seed
    while True:
        rng = np.random.default_rng(s)
        z = project_tangent(x, rng.standard_normal(x.value.shape))
        zn = z.norm
        if zn >= 1e-12:
            return Tangent(x, z.value * (norm / zn))
        s += 1


def tangent_basis(x: Point) -> list[Tangent]:
    """Orthonormal basis of the tangent space at x.

    Projects all canonical matrix units onto the tangent space and
    orthonormalizes with modified Gram-Schmidt, discarding directions
    whose residual norm falls below 1e-9.  Euclidean manifolds return
    the canonical basis directly.
    """
    n, p = x.value.shape
    if isinstance(x.manifold, Euclidean):
        out = []
        for i in range(n):
            for j in range(p):
                e = np.zeros((n, p))
                e[i, j] = 1.0
                out.append(Tangent(x, e))
        return out
    if n * p > TANGENT_BASIS_GUARD:
        raise CapacityError(
            f"tangent basis for St({p},{n}) needs {n * p} candidate directions; "
            f"guard is {TANGENT_BASIS_GUARD}"
        )
    basis: list[np.ndarray] = []
    for i in range(n):
        for j in range(p):
            e = np.zeros((n, p))
            e[i, j] = 1.0
            z = project_tangent(x, e).value
            for b in basis:
                z = z - np.sum(b * z) * b
            zn = np.linalg.norm(z)
            if zn >= 1e-9:
                basis.append(z / zn)
    return [Tangent(x, b) for b in basis]
