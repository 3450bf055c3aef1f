"""Optimizer steps: SGD with momentum, Riemannian SGD, SAM, and
Riemannian SAM with both the exact (tangent-basis) and approximate
(normalize-then-project) solvers for the inner maximization.

A GradOracle is any callable ``oracle(params, batch) -> (loss, grads)``
where ``params`` and ``grads`` map group names to matrices.  Oracles
must be deterministic for fixed parameters and batch.
"""

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from rsam import linalg
from rsam.errors import ConfigError, DegenerateGradientError, RankError
from rsam.manifold import (
    Euclidean,
    Point,
    Stiefel,
    Tangent,
    project_tangent,
    retract,
    riemannian_grad,
    tangent_basis,
)

DEGENERATE_TOL = 1e-12


class MetricKind(enum.Enum):
    """Diagonal metric weighting the tangent inner product."""

    IDENTITY = "identity"
    DIAG_ABS = "diag-abs"


class Strategy(enum.Enum):
    SGD = "sgd"
    RSGD = "rsgd"
    SAM = "sam"
    RSAM_APPROX = "rsam-approx"
    RSAM_EXACT = "rsam-exact"


PERTURBING = {Strategy.SAM, Strategy.RSAM_APPROX, Strategy.RSAM_EXACT}
EUCLIDEAN_ONLY = {Strategy.SGD, Strategy.SAM}


@dataclass(frozen=True)
class OptimizerConfig:
    strategy: Strategy
    lr: float
    rho: float = 0.0
    momentum: float = 0.0
    metric: MetricKind = MetricKind.IDENTITY

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.rho < 0:
            raise ConfigError(f"rho must be nonnegative, got {self.rho}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.strategy in PERTURBING and self.rho <= 0:
            raise ConfigError(f"{self.strategy.value} requires rho > 0")


@dataclass(frozen=True)
class ParamGroup:
    name: str
    point: Point
    config: OptimizerConfig
    momentum_buffer: np.ndarray | None = None

    def __post_init__(self):
        strat = self.config.strategy
        if strat in EUCLIDEAN_ONLY and not isinstance(self.point.manifold, Euclidean):
            raise ConfigError(
                f"group '{self.name}': {strat.value} requires a Euclidean parameter"
            )


def apply_metric(grad: np.ndarray, point: Point, metric: MetricKind) -> np.ndarray:
    """Weight a gradient by the diagonal metric D_theta.  The diagonal of
    |theta| acts elementwise on the row-major flattening, which for a
    matrix parameter is an elementwise product with |theta|."""
    grad = linalg.as_matrix(grad)
    if grad.shape != point.value.shape:
        raise linalg.ShapeError(
            f"gradient shape {grad.shape} does not match point {point.value.shape}"
        )
    if metric is MetricKind.IDENTITY:
        return grad
    return grad * np.abs(point.value)


def approx_epsilon(
    point: Point, euclid_grad: np.ndarray, rho: float, metric: MetricKind
) -> Tangent:
    """Approximate ascent direction: normalize the metric-weighted
    Riemannian gradient to radius rho, then project onto the tangent
    space.  The projection is non-expansive, so the result has norm at
    most rho."""
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    g = riemannian_grad(point, euclid_grad)
    v = apply_metric(g.value, point, metric)
    nv = np.linalg.norm(v)
    if nv < DEGENERATE_TOL:
        raise DegenerateGradientError(f"||v|| = {nv:.3e} below {DEGENERATE_TOL}")
    return project_tangent(point, (rho / nv) * v)


def exact_epsilon(
    point: Point,
    euclid_grad: np.ndarray,
    rho: float,
    metric: MetricKind,
    basis: list[Tangent] | None = None,
) -> Tangent:
    """Exact ascent direction via an orthonormal tangent basis (u_j):
    eps = rho * sum_j c_j u_j / sqrt(sum_j c_j^2) with c_j = <v, u_j>,
    v the metric-weighted Riemannian gradient.

    The basis can be passed in to amortize its construction over several
    calls at the same point.
    """
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if basis is None:
        basis = tangent_basis(point)
    g = riemannian_grad(point, euclid_grad)
    v = apply_metric(g.value, point, metric)
    coeffs = np.array([linalg.dot_flat(v, u.value) for u in basis])
    s = np.linalg.norm(coeffs)
    if s < DEGENERATE_TOL or np.all(np.abs(coeffs) < DEGENERATE_TOL):
        raise DegenerateGradientError(f"all basis coefficients below {DEGENERATE_TOL}")
    eps = np.zeros_like(point.value)
    for c, u in zip(coeffs, basis):
        eps += c * u.value
    return Tangent(point, (rho / s) * eps)


def _params_of(groups: list[ParamGroup]) -> dict[str, np.ndarray]:
    return {g.name: g.point.value for g in groups}


def _descend(group: ParamGroup, euclid_grad: np.ndarray) -> ParamGroup:
    """One retraction step along the negative Riemannian gradient."""
    d = riemannian_grad(group.point, euclid_grad)
    step = Tangent(group.point, -group.config.lr * d.value)
    try:
        new_point = retract(group.point, step)
    except RankError as e:
        raise RankError(f"group '{group.name}': retraction failed: {e}") from e
    return replace(group, point=new_point)


def _momentum_descend(group: ParamGroup, grad: np.ndarray) -> ParamGroup:
    mu = group.config.momentum
    buf = grad if group.momentum_buffer is None else mu * group.momentum_buffer + grad
    new_value = group.point.value - group.config.lr * buf
    return replace(
        group,
        point=Point(group.point.manifold, new_value),
        momentum_buffer=buf,
    )


def sgd_step(groups, oracle, batch):
    """Classical SGD with momentum; Euclidean groups only."""
    for g in groups:
        if not isinstance(g.point.manifold, Euclidean):
            raise ConfigError(f"group '{g.name}': sgd_step requires Euclidean groups")
    loss, grads = oracle(_params_of(groups), batch)
    return loss, [_momentum_descend(g, grads[g.name]) for g in groups]


def rsgd_step(groups, oracle, batch):
    """Riemannian SGD: retract along the negative Riemannian gradient."""
    loss, grads = oracle(_params_of(groups), batch)
    return loss, [_descend(g, grads[g.name]) for g in groups]


def _ascent_direction(group: ParamGroup, euclid_grad: np.ndarray) -> Tangent | None:
    """Perturbation for one group; None when the gradient is degenerate,
    in which case the step falls back to a plain descent for the group."""
    cfg = group.config
    try:
        if cfg.strategy is Strategy.RSAM_EXACT:
            return exact_epsilon(group.point, euclid_grad, cfg.rho, cfg.metric)
        return approx_epsilon(group.point, euclid_grad, cfg.rho, cfg.metric)
    except DegenerateGradientError:
        return None


def rsam_step(groups, oracle, batch):
    """Sharpness-aware step (Euclidean SAM is the special case with
    trivial projection and retraction).

    Two oracle calls: gradients at the current parameters give the
    per-group perturbations; gradients at the simultaneously perturbed
    snapshot, projected back onto the tangent space of the ORIGINAL
    point, drive the descent retraction.  SGD/RSGD groups in the same
    step descend using the second call's gradients, unperturbed.
    Returns the loss from the first call.
    """
    if not any(g.config.strategy in PERTURBING for g in groups):
        raise ConfigError("rsam_step needs at least one SAM/RSAM group")
    loss, grads0 = oracle(_params_of(groups), batch)

    eps: dict[str, Tangent | None] = {}
    perturbed = {}
    for g in groups:
        if g.config.strategy in PERTURBING:
            e = _ascent_direction(g, grads0[g.name])
            eps[g.name] = e
            if e is not None:
                try:
                    perturbed[g.name] = retract(g.point, e).value
                    continue
                except RankError as err:
                    raise RankError(
                        f"group '{g.name}': ascent retraction failed: {err}"
                    ) from err
        perturbed[g.name] = g.point.value

    _, grads1 = oracle(perturbed, batch)

    updated = []
    for g in groups:
        if g.config.strategy is Strategy.SGD:
            updated.append(_momentum_descend(g, grads1[g.name]))
        else:
            updated.append(_descend(g, grads1[g.name]))
    return loss, updated


def step(groups, oracle, batch):
    """Dispatch on the group strategies: a single sharpness-aware group
    anywhere makes this an rsam_step; otherwise mixed SGD/RSGD groups
    take their one-call updates."""
    if any(g.config.strategy in PERTURBING for g in groups):
        return rsam_step(groups, oracle, batch)
    if all(g.config.strategy is Strategy.SGD for g in groups):
        return sgd_step(groups, oracle, batch)
    return rsgd_step(groups, oracle, batch)


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    """Cosine annealing from base_lr to 0 over total_epochs."""
    if total_epochs <= 0:
        return base_lr
    return 0.5 * base_lr * (1 + math.cos(math.pi * min(epoch, total_epochs) / total_epochs))
