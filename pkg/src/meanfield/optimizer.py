"""Consensus-based optimization and ensemble Kalman sampling, with an exact
gaussian posterior oracle for the linear-inverse-problem regime."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import Ensemble, RngStream, weighted_mean
from .errors import StepError


@dataclass
class CboConfig:
    """Consensus-based optimization run description.

    The swarm contracts toward the exp(-alpha G)-weighted mean of the
    positions while an isotropic multiplicative noise keeps exploring;
    ``eps_heaviside`` = 0 (the default) drops the gating factor entirely,
    so the drift is always on; a positive value uses a logistic smoothing
    of width eps of the unit step.
    """

    objective: callable  # vectorized over rows of an (n, d) array
    alpha: float
    lambda_drift: float
    sigma_noise: float
    dt: float
    steps: int
    n: int
    dim: int
    eps_heaviside: float = 0.0
    init: object = None  # (n, dim) array, or callable (n, dim, rng) -> array; default N(0, I)

    def __post_init__(self):
        if self.alpha <= 0 or self.lambda_drift <= 0 or self.dt <= 0:
            raise ValueError("alpha, lambda_drift and dt must be positive")
        if self.sigma_noise < 0 or self.eps_heaviside < 0:
            raise ValueError("sigma_noise and eps_heaviside must be nonnegative")


@dataclass
class CboResult:
    consensus: np.ndarray
    best_particle: np.ndarray
    objective_at_consensus: float
    consensus_trajectory: np.ndarray  # (steps + 1, dim)

    def write_trajectory_csv(self, path):
        dim = self.consensus_trajectory.shape[1]
        cols = ",".join(f"v{k}" for k in range(dim))
        with open(path, "w", newline="\n") as fh:
            fh.write(f"step,{cols}\n")
            for k, row in enumerate(self.consensus_trajectory):
                fh.write(f"{k}," + ",".join(repr(float(x)) for x in row) + "\n")


def _cbo_init(cfg: CboConfig, rng: RngStream) -> np.ndarray:
    if cfg.init is None:
        return rng.normal((cfg.n, cfg.dim))
    if callable(cfg.init):
        return np.asarray(cfg.init(cfg.n, cfg.dim, rng), dtype=float).reshape(cfg.n, cfg.dim)
    return np.array(cfg.init, dtype=float).reshape(cfg.n, cfg.dim)


def cbo_minimize(cfg: CboConfig, rng: RngStream) -> CboResult:
    """Minimize an objective with the consensus-based particle dynamics
    dX = -lambda (X - v) H(G(X) - G(v)) dt + sqrt(2) sigma |X - v| dB.

    The consensus point v is the exp(-alpha G)-weighted position mean,
    computed in the log domain so large alpha never underflows. Returns the
    final consensus point, the best particle seen in the final swarm and
    the consensus trajectory.
    """
    states = _cbo_init(cfg, rng)
    g_vals = np.asarray(cfg.objective(states), dtype=float)
    if not np.all(np.isfinite(g_vals)):
        raise ValueError("objective must be finite at every initial particle")

    trajectory = np.empty((cfg.steps + 1, cfg.dim))
    sqrt_2dt = math.sqrt(2.0 * cfg.dt)
    for k in range(cfg.steps + 1):
        ensemble = Ensemble(states)
        v = weighted_mean(ensemble, log_w=lambda pts: -cfg.alpha * np.asarray(cfg.objective(pts)))
        trajectory[k] = v
        if k == cfg.steps:
            break
        gap = states - v
        if cfg.eps_heaviside > 0.0:
            g_v = float(np.asarray(cfg.objective(v.reshape(1, -1)), dtype=float)[0])
            # logistic smoothing of the unit step, in overflow-safe form
            gate = 0.5 * (1.0 + np.tanh((g_vals - g_v) / (2.0 * cfg.eps_heaviside)))
        else:
            gate = 1.0
        drift = -cfg.lambda_drift * gap * (gate if np.isscalar(gate) else gate[:, None])
        radius = np.linalg.norm(gap, axis=1, keepdims=True)
        xi = rng.normal((cfg.n, cfg.dim))
        states = states + drift * cfg.dt + sqrt_2dt * cfg.sigma_noise * radius * xi
        g_vals = np.asarray(cfg.objective(states), dtype=float)
        if not np.all(np.isfinite(g_vals)):
            bad = int(np.argwhere(~np.isfinite(g_vals))[0][0])
            raise StepError("objective became non-finite", particle=bad, step=k)

    best = states[int(np.argmin(g_vals))]
    consensus = trajectory[-1]
    g_cons = float(np.asarray(cfg.objective(consensus.reshape(1, -1)), dtype=float)[0])
    return CboResult(consensus=consensus, best_particle=best.copy(),
                     objective_at_consensus=g_cons, consensus_trajectory=trajectory)


@dataclass
class EksConfig:
    """Ensemble Kalman sampler configuration for y = G(x) + noise.

    ``forward`` is a (k, d) matrix or a callable acting on rows;
    ``forward_jacobian(x)``, needed only in gradient mode with a callable
    forward map, returns the (k, d) Jacobian at x. Noise and prior
    covariances must pass a Cholesky factorization.
    """

    forward: object
    Gamma: np.ndarray
    Gamma0: np.ndarray
    y: np.ndarray
    n: int
    dt: float
    steps: int
    derivative_free: bool = False
    forward_jacobian: callable | None = None

    def __post_init__(self):
        self.Gamma = np.atleast_2d(np.asarray(self.Gamma, dtype=float))
        self.Gamma0 = np.atleast_2d(np.asarray(self.Gamma0, dtype=float))
        self.y = np.atleast_1d(np.asarray(self.y, dtype=float))
        for name, mat in (("Gamma", self.Gamma), ("Gamma0", self.Gamma0)):
            if not np.allclose(mat, mat.T):
                raise ValueError(f"{name} must be symmetric")
            try:
                np.linalg.cholesky(mat)
            except np.linalg.LinAlgError as err:
                raise ValueError(f"{name} must be positive definite") from err

    def apply_forward(self, states: np.ndarray) -> np.ndarray:
        if callable(self.forward):
            out = np.asarray(self.forward(states), dtype=float)
        else:
            out = states @ np.asarray(self.forward, dtype=float).T
        return out.reshape(states.shape[0], -1)


def matrix_sqrt_psd(mat: np.ndarray) -> np.ndarray:
    """Symmetric square root via eigendecomposition, negative eigenvalues
    clipped at zero (ensemble covariances can be rank deficient)."""
    vals, vecs = np.linalg.eigh(mat)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def eks_drift(cfg: EksConfig, states: np.ndarray) -> np.ndarray:
    """Per-particle drift of the Kalman sampler dynamics at the given
    states, using the configured mode. Exposed so the stationarity of the
    exact posterior can be checked directly."""
    states = np.asarray(states, dtype=float)
    n = states.shape[0]
    mean = states.mean(axis=0)
    centered = states - mean
    cov = centered.T @ centered / n
    gamma_inv = np.linalg.inv(cfg.Gamma)
    gamma0_inv = np.linalg.inv(cfg.Gamma0)
    misfit = (cfg.apply_forward(states) - cfg.y) @ gamma_inv.T
    if cfg.derivative_free:
        g_vals = cfg.apply_forward(states)
        cross = centered.T @ (g_vals - g_vals.mean(axis=0)) / n
        return -misfit @ cross.T - states @ (cov @ gamma0_inv.T).T
    if not callable(cfg.forward):
        jac = np.atleast_2d(np.asarray(cfg.forward, dtype=float))
        grad_data = misfit @ jac
    elif cfg.forward_jacobian is not None:
        grad_data = np.stack([cfg.forward_jacobian(x).T @ m for x, m in zip(states, misfit)])
    else:
        raise ValueError("gradient mode with a callable forward map needs forward_jacobian")
    return -(grad_data + states @ gamma0_inv.T) @ cov.T


def eks_sample(cfg: EksConfig, e0: Ensemble, rng: RngStream) -> Ensemble:
    """Euler-Maruyama on the ensemble Kalman sampler dynamics.

    Gradient mode evolves dX = -Cov grad PhiR(X) dt + sqrt(2 Cov) dB with
    grad PhiR(x) = J(x)^T Gamma^-1 (G(x) - y) + Gamma0^-1 x. The
    derivative-free mode replaces Cov * J^T by the cross-covariance
    Cov[mu, G] in the data-misfit term while keeping Cov on the prior term,
    which coincides with gradient mode exactly when G is linear. The two
    modes consume identical noise, so runs with a shared stream can be
    compared trajectory-wise.
    """
    states = e0.states.copy()
    n, d = states.shape
    if n != cfg.n:
        raise ValueError(f"ensemble has {n} particles but the config says {cfg.n}")
    if n < d + 1:
        warnings.warn(f"n = {n} <= dim = {d}: ensemble covariance is rank deficient")

    frozen_warned = False
    t = e0.time
    sqrt_dt = math.sqrt(cfg.dt)
    for _ in range(cfg.steps):
        centered = states - states.mean(axis=0)
        cov = centered.T @ centered / n  # measure-functional normalization, 1/N
        if not frozen_warned and np.all(np.abs(cov) < 1e-300):
            warnings.warn("ensemble collapsed to a point: dynamics are frozen")
            frozen_warned = True
        drift = eks_drift(cfg, states)
        noise = rng.normal((n, d)) @ matrix_sqrt_psd(2.0 * cov).T
        states = states + drift * cfg.dt + noise * sqrt_dt
        t += cfg.dt
    return Ensemble(states, t)


def posterior_gaussian_oracle(G, Gamma, Gamma0, y):
    """Exact posterior moments for the linear-gaussian inverse problem.

    cov = (Gamma0^-1 + G^T Gamma^-1 G)^-1 and mean = cov G^T Gamma^-1 y,
    both obtained through factorized solves rather than explicit inverses
    of the assembled sums.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    Gamma = np.atleast_2d(np.asarray(Gamma, dtype=float))
    Gamma0 = np.atleast_2d(np.asarray(Gamma0, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    d = G.shape[1]
    gi_g = np.linalg.solve(Gamma, G)
    gi_y = np.linalg.solve(Gamma, y)
    precision = np.linalg.solve(Gamma0, np.eye(d)) + G.T @ gi_g
    try:
        cov = np.linalg.solve(precision, np.eye(d))
        mean = np.linalg.solve(precision, G.T @ gi_y)
    except np.linalg.LinAlgError as err:
        raise ValueError("posterior normal matrix is singular") from err
    return mean, cov
