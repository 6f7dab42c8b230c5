"""One-dimensional particle scheme for McKean-Vlasov PDEs in CDF form,
including the Burgers instance driven by a Heaviside kernel.

The update is implemented verbatim as displayed in the source scheme:
Y^i <- Y^i + mean_j K1(Y^i, Y^j) dt + sqrt(dt) mean_j K2(Y^i, Y^j) G^i,
with one gaussian per particle per step. Note the diffusion coefficient is
the plain kernel average, not the square root of an averaged square.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import RngStream


def heaviside(z):
    """Unit step with H(0) = 1, the convention used by the Burgers kernel.
    This feeds the self-interaction term, so it is pinned by tests."""
    return np.where(np.asarray(z, dtype=float) >= 0.0, 1.0, 0.0)


@dataclass
class CdfScheme:
    """Kernel pair driving the scheme plus run geometry.

    ``k1`` and ``k2`` are pairwise kernels K(x, y) vectorized over numpy
    broadcasting, or plain floats for constant kernels (the constant short
    circuits the O(N^2) pairwise average; the value is identical).
    ``initial(n, rng)`` samples the starting points.
    """

    k1: object
    k2: object
    n: int
    dt: float
    T: float
    initial: callable

    def __post_init__(self):
        if self.dt <= 0 or self.n < 1:
            raise ValueError("need dt > 0 and n >= 1")
        if self.T <= 0:
            raise ValueError("need T > 0")


class StepCdf:
    """Empirical CDF V(x) = (1/N) sum_i H(x - Y^i): a right-continuous step
    function with values on the grid {0, 1/N, ..., 1}."""

    def __init__(self, samples, time: float = 0.0):
        self.samples = np.sort(np.asarray(samples, dtype=float).reshape(-1))
        self.time = time

    @property
    def n(self) -> int:
        return self.samples.size

    def evaluate(self, x) -> np.ndarray:
        return np.searchsorted(self.samples, np.asarray(x, dtype=float), side="right") / self.n

    def __call__(self, x):
        return self.evaluate(x)


def _kernel_mean(kernel, ys) -> np.ndarray:
    """mean_j kernel(Y^i, Y^j) for every i, O(N^2) unless constant."""
    if not callable(kernel):
        return np.full(ys.shape, float(kernel))
    return np.asarray(kernel(ys[:, None], ys[None, :]), dtype=float).mean(axis=1)


def bossy_talay_run(scheme: CdfScheme, rng: RngStream, checkpoints=None) -> list[StepCdf]:
    """Run the Euler scheme and return the empirical CDF at each checkpoint.

    ``checkpoints`` is a sequence of times (default: final time only);
    each is snapped to the nearest step boundary.
    """
    steps = max(1, round(scheme.T / scheme.dt))
    if checkpoints is None:
        checkpoints = [scheme.T]
    checkpoint_steps = {min(steps, max(0, round(t / scheme.dt))): t for t in checkpoints}

    ys = np.asarray(scheme.initial(scheme.n, rng), dtype=float).reshape(-1)
    sqrt_dt = math.sqrt(scheme.dt)
    out = []
    if 0 in checkpoint_steps:
        out.append(StepCdf(ys, 0.0))
    for k in range(steps):
        drift = _kernel_mean(scheme.k1, ys)
        diff = _kernel_mean(scheme.k2, ys)
        if not (np.all(np.isfinite(drift)) and np.all(np.isfinite(diff))):
            raise ValueError(f"non-finite kernel sum at step {k}")
        gauss = rng.normal(scheme.n)
        ys = ys + drift * scheme.dt + sqrt_dt * diff * gauss
        if k + 1 in checkpoint_steps:
            out.append(StepCdf(ys, (k + 1) * scheme.dt))
    return out


def burgers_scheme(sigma_const: float, initial, n: int, dt: float, T: float) -> CdfScheme:
    """Scheme whose empirical CDF approximates the viscous Burgers solution:
    K1(x, y) = H(x - y) with H(0) = 1, constant diffusion."""
    return CdfScheme(k1=lambda x, y: heaviside(x - y), k2=float(sigma_const),
                     n=n, dt=dt, T=T, initial=initial)


def smoothed_density(samples, eps: float):
    """Gaussian-kernel density x -> (1/N) sum_i phi_eps(x - Y^i) with
    phi_eps the N(0, eps^2) density. Returns a vectorized callable."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    samples = np.asarray(samples, dtype=float).reshape(-1)
    norm = 1.0 / (math.sqrt(2.0 * math.pi) * eps * samples.size)

    def density(x):
        x = np.asarray(x, dtype=float)
        sq = (np.atleast_1d(x)[:, None] - samples[None, :]) ** 2
        vals = norm * np.exp(-sq / (2.0 * eps * eps)).sum(axis=1)
        return vals if np.ndim(x) else float(vals[0])

    return density


def write_cdf_checkpoints_csv(cdfs, path):
    """Serialize checkpoint CDFs as rows ``time, sorted_sample_0..n``."""
    if not cdfs:
        raise ValueError("no checkpoints to write")
    n = cdfs[0].n
    header = "time," + ",".join(f"sorted_sample_{k}" for k in range(n))
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for cdf in cdfs:
            fh.write(f"{cdf.time!r}," + ",".join(repr(float(y)) for y in cdf.samples) + "\n")


def l1_cdf_error(v: StepCdf, v_exact, grid) -> float:
    """Trapezoid approximation of the L1 distance between an empirical CDF
    and an exact CDF over a grid. The grid must cover the support with
    margin: a boundary gap above 1e-3 triggers a warning."""
    grid = np.asarray(grid, dtype=float)
    emp = v.evaluate(grid)
    exact = np.asarray(v_exact(grid), dtype=float)
    left_gap = max(emp[0], exact[0])
    right_gap = max(1.0 - emp[-1], 1.0 - exact[-1])
    if max(left_gap, right_gap) > 1e-3:
        warnings.warn(f"integration grid too narrow: boundary CDF gap {max(left_gap, right_gap):.2g}")
    return float(np.trapezoid(np.abs(emp - exact), grid))
