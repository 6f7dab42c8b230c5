"""McKean-Vlasov diffusions: Euler-Maruyama simulation, factories for the
named interacting systems, and the synchronous-coupling harness that
measures the distance to the nonlinear limit empirically.

Drift and diffusion callables are vectorized over particles: they receive
the full (n, d) state array together with the empirical measure and return
per-particle values. Within one explicit step every particle sees the same
pre-step measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Ensemble, RngStream, TimeGrid
from .errors import ModelSpecError, StepError, UnsupportedReference


@dataclass
class McKeanModel:
    """Drift/diffusion specification b(x, mu), sigma(x, mu).

    ``drift(states, mu)`` returns an (n, d) array. ``diffusion(states, mu)``
    may return a scalar (isotropic), an (n,) array (per-particle scalar),
    an (n, d) array (per-particle diagonal) or an (n, d, d) array of full
    matrices. ``kernel_drift`` optionally records the factored form
    (K1, b_tilde) with b(x, mu) = b_tilde(x, K1*mu(x)); factories that have
    one attach it so it can be spot-checked against ``drift``.
    """

    drift: callable
    diffusion: callable
    dim: int
    family: str = ""
    params: dict = field(default_factory=dict)
    kernel_drift: tuple | None = None
    kernel_diffusion: tuple | None = None


def _apply_diffusion(sigma, xi):
    """Map noise increments xi (n, d) through a diffusion coefficient."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim == 0:
        return sigma * xi
    if sigma.ndim == 1:
        return sigma[:, None] * xi
    if sigma.ndim == 2:
        return sigma * xi
    if sigma.ndim == 3:
        return np.einsum("nij,nj->ni", sigma, xi)
    raise ValueError(f"unsupported diffusion shape {sigma.shape}")


def _em_update(model, states, mu, dt, xi, time):
    """One explicit Euler-Maruyama update against a frozen measure."""
    b = np.asarray(model.drift(states, mu), dtype=float)
    if not np.all(np.isfinite(b)):
        bad = int(np.argwhere(~np.isfinite(b))[0][0])
        raise StepError("non-finite drift", particle=bad, time=time)
    sigma = np.asarray(model.diffusion(states, mu), dtype=float)
    if not np.all(np.isfinite(sigma)):
        flat = np.argwhere(~np.isfinite(sigma))[0]
        raise StepError("non-finite diffusion", particle=int(flat[0]) if sigma.ndim else None, time=time)
    return states + b * dt + _apply_diffusion(sigma, xi) * math.sqrt(dt)


def step_em(model: McKeanModel, ensemble: Ensemble, dt: float, rng: RngStream) -> Ensemble:
    """Advance an ensemble by one explicit Euler-Maruyama step.

    x^i <- x^i + b(x^i, mu) dt + sigma(x^i, mu) sqrt(dt) xi^i with iid
    standard gaussian xi^i; mu is the pre-step empirical measure for every
    particle.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if model.dim != ensemble.dim:
        raise ValueError(f"model dim {model.dim} != ensemble dim {ensemble.dim}")
    mu = ensemble.measure()
    xi = rng.normal((ensemble.n, ensemble.dim))
    new_states = _em_update(model, ensemble.states, mu, dt, xi, ensemble.time)
    return Ensemble(new_states, ensemble.time + dt)


def simulate(model: McKeanModel, e0: Ensemble, grid: TimeGrid, rng: RngStream, observers=()) -> Ensemble:
    """Run step_em over a time grid, invoking observers after every step.

    Observers are callables ``obs(ensemble, step_index)``; they also see the
    initial state with step_index 0. A StepError from any step is re-raised
    with the step index attached.
    """
    ensemble = e0.copy()
    for obs in observers:
        obs(ensemble, 0)
    for k, h in enumerate(grid.step_durations()):
        try:
            ensemble = step_em(model, ensemble, h, rng)
        except StepError as err:
            raise StepError(str(err.args[0]).split(" | ")[0], particle=err.particle,
                            step=k, time=err.time) from err
        for obs in observers:
            obs(ensemble, k + 1)
    return ensemble


class MomentTracker:
    """Observer recording coordinate-wise p-th moments at every step."""

    def __init__(self, p: int = 2):
        self.p = p
        self.times = []
        self.values = []

    def __call__(self, ensemble: Ensemble, step: int):
        self.times.append(ensemble.time)
        self.values.append(np.mean(ensemble.states ** self.p, axis=0))


class SnapshotWriter:
    """Observer appending particle states as CSV rows
    ``time, replica, particle, coord0..coordD``."""

    def __init__(self, path, replica: int = 0, every: int = 1):
        self.path = path
        self.replica = replica
        self.every = every
        self._file = open(path, "w", newline="\n")
        self._header_written = False

    def __call__(self, ensemble: Ensemble, step: int):
        if not self._header_written:
            coords = ",".join(f"coord{k}" for k in range(ensemble.dim))
            self._file.write(f"time,replica,particle,{coords}\n")
            self._header_written = True
        if step % self.every:
            return
        for i, row in enumerate(ensemble.states):
            vals = ",".join(repr(float(v)) for v in row)
            self._file.write(f"{ensemble.time!r},{self.replica},{i},{vals}\n")

    def close(self):
        self._file.close()


# ---------------------------------------------------------------------------
# Reference laws for the synchronous coupling


@dataclass
class GaussianReference:
    """Exact law of the 1-D mean-field OU limit: f_t gaussian with
    m' = -lam m and v' = -2 (lam + kappa) v + 1, both in closed form.
    The nonlinear drift is -lam x - kappa (x - m(t)) with unit diffusion.
    """

    lam: float
    kappa: float
    m0: float
    v0: float

    exact = True

    def __post_init__(self):
        if self.v0 < 0:
            raise ValueError("initial variance must be nonnegative")

    def mean(self, t: float) -> float:
        return self.m0 * math.exp(-self.lam * t)

    def variance(self, t: float) -> float:
        rate = 2.0 * (self.lam + self.kappa)
        if rate == 0.0:
            return self.v0 + t
        v_inf = 1.0 / rate
        return v_inf + (self.v0 - v_inf) * math.exp(-rate * t)

    def initial(self, n: int, rng: RngStream) -> np.ndarray:
        return self.m0 + math.sqrt(self.v0) * rng.normal((n, 1))

    def check_model(self, model: McKeanModel):
        if model.family != "mean-field-ou":
            raise UnsupportedReference(
                f"exact gaussian reference requires the mean-field OU family, got {model.family!r}"
            )
        if (model.params.get("lam"), model.params.get("kappa")) != (self.lam, self.kappa):
            raise UnsupportedReference("reference parameters differ from the model's")

    def drift(self, states: np.ndarray, t: float) -> np.ndarray:
        return -self.lam * states - self.kappa * (states - self.mean(t))

    def diffusion(self, states: np.ndarray, t: float) -> float:
        return 1.0


@dataclass
class SurrogateReference:
    """Frozen large-ensemble stand-in for the limit law f_t.

    A surrogate system of size ``factor * n`` (at least) is simulated once
    per replica with an independent stream; the nonlinear processes read
    their drift and diffusion from the surrogate's empirical measure. The
    size factor 16 is a tunable default, not a modelling constant.
    """

    model: McKeanModel
    initial_sampler: callable  # (n, rng) -> (n, d) array
    factor: int = 16

    exact = False

    def initial(self, n: int, rng: RngStream) -> np.ndarray:
        return np.asarray(self.initial_sampler(n, rng), dtype=float).reshape(n, self.model.dim)

    def check_model(self, model: McKeanModel):
        if model is not self.model and model.family != self.model.family:
            raise UnsupportedReference("surrogate was built for a different model family")


@dataclass
class CouplingReport:
    """Per-time mean-square synchronous-coupling error, replica-averaged."""

    times: np.ndarray
    mse: np.ndarray
    n: int
    replicas: int

    @property
    def sup_mse(self) -> float:
        return float(np.max(self.mse))

    def mse_at(self, t: float) -> float:
        return float(self.mse[int(np.argmin(np.abs(self.times - t)))])

    def write_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write("time,n,replicas,mse\n")
            for t, m in zip(self.times, self.mse):
                fh.write(f"{float(t)!r},{self.n},{self.replicas},{float(m)!r}\n")


def ou_reference(lam: float, kappa: float, m0: float, v0: float) -> GaussianReference:
    """Exact reference law for the 1-D mean-field OU model
    b(x, mu) = -lam x - kappa (x - m(mu)), sigma = 1."""
    return GaussianReference(lam=lam, kappa=kappa, m0=m0, v0=v0)


def mean_field_ou_model(lam: float, kappa: float) -> McKeanModel:
    """1-D model with linear confinement plus mean reversion to the
    ensemble mean, b(x, mu) = -lam x - kappa (x - m(mu)), sigma = 1. The
    ensemble mean includes the particle itself."""

    def drift(states, mu):
        return -lam * states - kappa * (states - mu.mean())

    return McKeanModel(
        drift=drift,
        diffusion=lambda states, mu: 1.0,
        dim=1,
        family="mean-field-ou",
        params={"lam": lam, "kappa": kappa},
        kernel_drift=(lambda x, y: y, lambda x, k: -lam * x - kappa * (x - k)),
    )


def coupling_replica_mse(model: McKeanModel, ref, n: int, grid: TimeGrid, stream: RngStream) -> np.ndarray:
    """Squared coupling error per grid time for one replica.

    The interacting system and the nonlinear system share initial states
    and reuse the identical gaussian increments per particle per step; only
    the measure their coefficients see differs (empirical vs reference).
    """
    init_stream = stream.substream(0)
    noise_stream = stream.substream(1)
    x = ref.initial(n, init_stream)
    x_bar = x.copy()
    surrogate = None
    if not ref.exact:
        m = ref.factor * n
        surrogate = ref.initial(m, stream.substream(2))
        surrogate_noise = stream.substream(3)

    mse = np.zeros(grid.steps + 1)
    t = grid.t0
    for k, h in enumerate(grid.step_durations()):
        xi = noise_stream.normal((n, model.dim))
        mu_x = Ensemble(x, t).measure()
        if ref.exact:
            b_bar = ref.drift(x_bar, t)
            sig_bar = ref.diffusion(x_bar, t)
        else:
            mu_s = Ensemble(surrogate, t).measure()
            b_bar = model.drift(x_bar, mu_s)
            sig_bar = model.diffusion(x_bar, mu_s)
            xi_s = surrogate_noise.normal(surrogate.shape)
            surrogate = (
                surrogate
                + np.asarray(model.drift(surrogate, mu_s), dtype=float) * h
                + _apply_diffusion(model.diffusion(surrogate, mu_s), xi_s) * math.sqrt(h)
            )
        x = _em_update(model, x, mu_x, h, xi, t)
        x_bar = x_bar + np.asarray(b_bar, dtype=float) * h + _apply_diffusion(sig_bar, xi) * math.sqrt(h)
        t += h
        mse[k + 1] = np.mean(np.sum((x - x_bar) ** 2, axis=1))
    return mse


def simulate_synchronous_coupling(
    model: McKeanModel, ref, n: int, grid: TimeGrid, rng: RngStream, replicas: int = 1
) -> CouplingReport:
    """Measure the propagation-of-chaos error by coupling the trajectories.

    Evolves the N-particle system and N nonlinear processes driven by the
    reference law with the same noise, and returns the per-time value of
    (1/N) sum_i E|X^i_t - Xbar^i_t|^2 averaged over replicas.
    """
    if n < 2:
        raise ValueError("need at least two particles")
    ref.check_model(model)
    total = np.zeros(grid.steps + 1)
    for r in range(replicas):
        total += coupling_replica_mse(model, ref, n, grid, rng.substream(r))
    return CouplingReport(times=grid.times(), mse=total / replicas, n=n, replicas=replicas)


# ---------------------------------------------------------------------------
# Model factories


def gradient_system_model(
    grad_V, grad_W, sigma_const: float, dim: int = 1, grad_W_conv=None, probe_rng=None
) -> McKeanModel:
    """Gradient system b(x, mu) = -grad V(x) - grad W * mu(x), sigma = const.

    ``grad_V`` and ``grad_W`` act row-wise on (..., d) arrays. The
    interaction gradient must be odd; this is probed on random points at
    construction. ``grad_W_conv(states, mu_points)``, when supplied, is a
    closed form for the convolution grad W * mu evaluated at each state
    (e.g. x - mean for quadratic W), replacing the O(N^2) pairwise sum.
    The pairwise sum includes the self term, which vanishes for odd
    gradients.
    """
    gen = (probe_rng or RngStream(2024, 777)).gen
    probes = gen.standard_normal((8, dim)) * 3.0
    odd_gap = np.abs(np.asarray(grad_W(probes)) + np.asarray(grad_W(-probes)))
    if np.any(odd_gap > 1e-8):
        raise ModelSpecError("grad_W fails the odd-symmetry probe; W must be symmetric")

    if grad_W_conv is not None:
        def interaction(states, mu):
            return np.asarray(grad_W_conv(states, mu.points), dtype=float)
    else:
        def interaction(states, mu):
            diffs = states[:, None, :] - mu.points[None, :, :]
            return np.asarray(grad_W(diffs), dtype=float).mean(axis=1)

    def drift(states, mu):
        return -np.asarray(grad_V(states), dtype=float) - interaction(states, mu)

    return McKeanModel(
        drift=drift,
        diffusion=lambda states, mu: float(sigma_const),
        dim=dim,
        family="gradient-system",
        kernel_drift=(lambda x, y: -np.asarray(grad_W(x - y)), lambda x, k: -np.asarray(grad_V(x)) + k),
    )


def kuramoto_model(coupling: float, n: int | None = None, disorder_sampler=None, rng: RngStream | None = None) -> McKeanModel:
    """Coupled oscillators d theta^i = xi_i dt - (K/N) sum_j sin(theta^i - theta^j) dt + dB^i.

    The natural frequencies xi_i are quenched: drawn once at construction
    (``disorder_sampler(n, rng)``) and frozen for the model's lifetime.
    Phases live in R; reduce mod 2 pi only for reporting. The alignment sum
    is evaluated through the complex order parameter, so each step is O(N).
    """
    if disorder_sampler is not None:
        if n is None or rng is None:
            raise ModelSpecError("quenched disorder needs n and an rng at construction")
        disorder = np.asarray(disorder_sampler(n, rng), dtype=float).reshape(n)
    else:
        disorder = None

    def drift(states, mu):
        theta = states[:, 0]
        if disorder is not None and theta.shape[0] != disorder.shape[0]:
            raise ValueError("ensemble size differs from the quenched disorder draw")
        z = np.mean(np.exp(1j * theta))
        align = -coupling * np.imag(np.exp(1j * theta) * np.conj(z))
        if disorder is not None:
            align = align + disorder
        return align[:, None]

    return McKeanModel(drift=drift, diffusion=lambda states, mu: 1.0, dim=1, family="kuramoto",
                       params={"coupling": coupling})


def cucker_smale_model(gamma: float, sigma_const: float, d: int = 1) -> McKeanModel:
    """Flocking model on states (x, v) in R^d x R^d.

    dx = v dt; dv = (1/N) sum_j K(|x^j - x^i|) (v^j - v^i) dt + sigma dB
    with the observation kernel K(r) = (1 + r^2)^(-gamma/2). Noise acts on
    the velocity block only. The self term of the alignment sum is zero and
    is kept in the average.
    """
    if gamma <= 0:
        raise ModelSpecError("gamma must be positive")
    if d < 1:
        raise ModelSpecError("d must be >= 1")

    def drift(states, mu):
        pos, vel = states[:, :d], states[:, d:]
        mpos, mvel = mu.points[:, :d], mu.points[:, d:]
        r2 = np.sum((mpos[None, :, :] - pos[:, None, :]) ** 2, axis=2)
        k = (1.0 + r2) ** (-gamma / 2.0)
        dv = (k[:, :, None] * (mvel[None, :, :] - vel[:, None, :])).mean(axis=1)
        return np.concatenate([vel, dv], axis=1)

    def diffusion(states, mu):
        sig = np.zeros((states.shape[0], 2 * d))
        sig[:, d:] = sigma_const
        return sig

    return McKeanModel(drift=drift, diffusion=diffusion, dim=2 * d, family="cucker-smale",
                       params={"gamma": gamma, "sigma": sigma_const, "d": d})


def regularized_coulomb_model(xi_strength: float, eps: float, sigma_const: float, d: int = 2) -> McKeanModel:
    """First-order system with the regularized Coulomb force
    F_eps(x) = xi x / max(|x|, eps)^d; dX = F_eps * mu dt + sigma dB.

    The self term j = i is excluded from the interaction sum; since
    F_eps(0) = 0 exactly, dropping it leaves the 1/N average unchanged, so
    no index bookkeeping is needed. Clamping the denominator at eps keeps
    the force bounded at coincident particles.
    """
    if eps <= 0:
        raise ModelSpecError("the regularization eps must be strictly positive")

    def force(diffs):
        norms = np.linalg.norm(diffs, axis=-1)
        return xi_strength * diffs / np.maximum(norms, eps)[..., None] ** d

    def drift(states, mu):
        diffs = states[:, None, :] - mu.points[None, :, :]
        return force(diffs).mean(axis=1)

    return McKeanModel(drift=drift, diffusion=lambda states, mu: float(sigma_const), dim=d,
                       family="regularized-coulomb", params={"xi": xi_strength, "eps": eps})
