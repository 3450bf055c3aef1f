"""Flatness diagnostics: rho-ball sharpness estimates on the manifold
and Hessian spectral summaries via Lanczos iteration with
finite-difference Hessian-vector products.

The Hessian is taken in the ambient (Euclidean) parameterization so that
models trained under different strategies share one spectrum tool.
"""

import enum
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from rsam.errors import NumericError
from rsam.manifold import Tangent, random_tangent, retract
from rsam.optim import (
    DegenerateGradientError,
    MetricKind,
    ParamGroup,
    approx_epsilon,
)

BREAKDOWN_TOL = 1e-12


class SharpnessMode(enum.Enum):
    FIRST_ORDER = "first-order"
    RANDOM_PROBE = "random-probe"


@dataclass(frozen=True)
class SharpnessConfig:
    rho: float
    mode: SharpnessMode = SharpnessMode.FIRST_ORDER
    probes: int = 16  # random-probe count (also the fallback count)

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.probes < 1:
            raise ValueError(f"probes must be >= 1, got {self.probes}")


@dataclass(frozen=True)
class SpectrumConfig:
    lanczos_iters: int
    probes: int = 1
    fd_step: float | None = None  # None: 1e-4 * (1 + ||theta||_inf)
    seed: int = 0

    def __post_init__(self):
        if self.lanczos_iters < 1:
            raise ValueError(f"lanczos_iters must be >= 1, got {self.lanczos_iters}")
        if self.probes < 1:
            raise ValueError(f"probes must be >= 1, got {self.probes}")
        if self.fd_step is not None and self.fd_step <= 0:
            raise ValueError(f"fd_step must be positive, got {self.fd_step}")


def _loss_at(groups, oracle, batch, values: dict[str, np.ndarray]) -> float:
    loss, _ = oracle(values, batch)
    return loss


def _probe_difference(groups, oracle, batch, base_loss, rho, seed) -> float:
    values = {}
    for g in groups:
        t = random_tangent(g.point, rho, seed)
        values[g.name] = retract(g.point, t).value
    return _loss_at(groups, oracle, batch, values) - base_loss


def sharpness_estimate(
    groups: list[ParamGroup],
    oracle,
    batch,
    cfg: SharpnessConfig,
    seed: int = 0,
) -> float:
    """Estimate max over the retracted rho-ball of L(theta') - L(theta).

    First-order mode retracts along the normalized (identity-metric)
    ascent direction; the result can be negative near non-critical
    points with strong curvature and is reported as-is.  Random-probe
    mode takes the max over seeded random tangents of norm rho and
    lower-bounds the true sharpness.  A degenerate gradient in
    first-order mode falls back to random probing.
    """
    params = {g.name: g.point.value for g in groups}
    base_loss, grads = oracle(params, batch)

    if cfg.mode is SharpnessMode.FIRST_ORDER:
        try:
            values = {}
            for g in groups:
                eps = approx_epsilon(g.point, grads[g.name], cfg.rho, MetricKind.IDENTITY)
                values[g.name] = retract(g.point, eps).value
            return _loss_at(groups, oracle, batch, values) - base_loss
        except DegenerateGradientError:
            pass  # fall through to random probing

    best = -np.inf
    for k in range(cfg.probes):
        best = max(
            best,
            _probe_difference(groups, oracle, batch, base_loss, cfg.rho, seed * 100003 + k),
        )
    return float(best)


def flatten_groups(groups: list[ParamGroup]) -> np.ndarray:
    """Concatenate all group values (row-major) in declared order."""
    return np.concatenate([g.point.value.ravel() for g in groups])


def unflatten(groups: list[ParamGroup], flat: np.ndarray) -> dict[str, np.ndarray]:
    out = {}
    offset = 0
    for g in groups:
        size = g.point.value.size
        out[g.name] = flat[offset : offset + size].reshape(g.point.value.shape)
        offset += size
    if offset != flat.size:
        raise ValueError(f"flat vector has {flat.size} entries, expected {offset}")
    return out


def _flat_grad(groups, oracle, batch, flat: np.ndarray) -> np.ndarray:
    _, grads = oracle(unflatten(groups, flat), batch)
    return np.concatenate([grads[g.name].ravel() for g in groups])


def default_fd_step(theta: np.ndarray) -> float:
    return 1e-4 * (1.0 + float(np.max(np.abs(theta))) if theta.size else 1.0)


def hvp(oracle, groups, v: np.ndarray, h: float, batch) -> np.ndarray:
    """Central-difference Hessian-vector product over the flattened,
    concatenated parameters: (g(theta + h v) - g(theta - h v)) / (2 h)."""
    v = np.asarray(v, dtype=np.float64).ravel()
    nv = np.linalg.norm(v)
    if nv == 0:
        raise ValueError("v must be nonzero")
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    theta = flatten_groups(groups)
    gp = _flat_grad(groups, oracle, batch, theta + h * v)
    gm = _flat_grad(groups, oracle, batch, theta - h * v)
    out = (gp - gm) / (2.0 * h)
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite Hessian-vector product")
    return out


def lanczos_spectrum(
    oracle, groups, cfg: SpectrumConfig, batch
) -> tuple[list[tuple[int, float, float]], float, bool]:
    """Ritz value/weight pairs of the ambient Hessian from m-step Lanczos
    with full reorthogonalization, aggregated over seeded Gaussian
    starting probes.

    Returns (records, max_eig, truncated) where records are
    (probe, ritz_value, weight) tuples and truncated flags any probe
    that hit a Lanczos breakdown (beta below 1e-12) early.
    """
    theta = flatten_groups(groups)
    dim = theta.size
    m = min(cfg.lanczos_iters, dim)
    h = cfg.fd_step if cfg.fd_step is not None else default_fd_step(theta)

    records: list[tuple[int, float, float]] = []
    max_eig = -np.inf
    truncated = False
    for probe in range(cfg.probes):
        rng = np.random.default_rng(cfg.seed * 1000003 + probe)
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        V = [v]
        alphas: list[float] = []
        betas: list[float] = []
        for j in range(m):
            w = hvp(oracle, groups, V[j], h, batch)
            alpha = float(np.dot(w, V[j]))
            alphas.append(alpha)
            w = w - alpha * V[j]
            if j > 0:
                w = w - betas[-1] * V[j - 1]
            for u in V:  # full reorthogonalization
                w = w - np.dot(u, w) * u
            beta = float(np.linalg.norm(w))
            if j == m - 1:
                break
            if beta < BREAKDOWN_TOL:
                truncated = True
                break
            betas.append(beta)
            V.append(w / beta)
        k = len(alphas)
        if k == 1:
            vals = np.array([alphas[0]])
            weights = np.array([1.0])
        else:
            vals, vecs = eigh_tridiagonal(np.array(alphas), np.array(betas[: k - 1]))
            weights = vecs[0, :] ** 2
        for val, wgt in zip(vals, weights):
            records.append((probe, float(val), float(wgt)))
        max_eig = max(max_eig, float(vals.max()))
    return records, float(max_eig), truncated
