"""Probability core: likelihoods, the latent posterior, MAP, posterior stats.

The latent posterior replaces the PDE forward map with the trained generator:
log rho(z | y) = log rho_eta(y - h(G(z))) + log rho_z(z), unnormalized.  The
evidence is never computed; MAP search and MCMC only need density ratios and
gradients, which come off the autodiff tape.

Generators are duck-typed: anything exposing `latent_dim`, `n_state`,
`n_param`, `push(z)`, `observed_values(z, idx)` and
`observed_state_node(tape, z_node, idx)` works, which keeps the module usable
with analytic stand-ins (linear maps) for conjugate cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Node, Tape, backward
from .priors import LatentPrior

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GaussianNoise:
    """Independent Gaussian observation noise, scalar or per-channel std."""

    std: np.ndarray

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.std, dtype=float))
        object.__setattr__(self, "std", s)
        if np.any(s <= 0):
            raise ValueError("noise std must be positive")

    def expanded(self, n: int) -> np.ndarray:
        if self.std.size == 1:
            return np.full(n, self.std[0])
        if self.std.size != n:
            raise ValueError("noise std length does not match observation count")
        return self.std

    def log_density(self, residual: np.ndarray) -> float:
        r = np.asarray(residual, dtype=float).ravel()
        s = self.expanded(r.size)
        return float(
            -0.5 * np.sum((r / s) ** 2) - np.sum(np.log(s)) - 0.5 * r.size * LOG_2PI
        )


def log_likelihood(state_vector, y, op, noise: GaussianNoise) -> float:
    """Gaussian data log-density of observations given a full state vector."""
    from .forward import observe

    predicted = observe(state_vector, op)
    y = np.asarray(y, dtype=float).ravel()
    if y.shape != predicted.shape:
        raise ValueError("observation vector length mismatch")
    return noise.log_density(y - predicted)


class LatentPosterior:
    """Unnormalized posterior over the generator's latent space.

    With no observations (op is None) it reduces to the latent prior, which is
    occasionally useful for smoke checks.
    """

    def __init__(self, generator, op=None, noise: GaussianNoise | None = None, y=None):
        self.generator = generator
        self.op = op
        self.latent_prior = LatentPrior(generator.latent_dim)
        if op is None:
            if y is not None and np.size(y) > 0:
                raise ValueError("observations supplied without an operator")
            self.noise = None
            self.y = np.zeros(0)
            self._std = np.zeros(0)
        else:
            if noise is None:
                raise ValueError("observation operator requires a noise model")
            self.y = np.asarray(y, dtype=float).ravel()
            if self.y.size != op.n_obs:
                raise ValueError(
                    f"got {self.y.size} observations for an operator with {op.n_obs}"
                )
            self.noise = noise
            self._std = noise.expanded(op.n_obs)
            self._loglik_const = float(
                -np.sum(np.log(self._std)) - 0.5 * op.n_obs * LOG_2PI
            )

    # -- tape route -----------------------------------------------------------
    def log_posterior_node(self, tape: Tape, z_node: Node) -> Node:
        """Unnormalized log posterior recorded on the tape for differentiation."""
        log_prior = z_node.square().sum().scale(-0.5) + tape.const(
            np.array(-0.5 * self.latent_prior.dim * LOG_2PI)
        )
        if self.op is None:
            return log_prior
        h = self.generator.observed_state_node(tape, z_node, self.op.indices)
        resid = tape.const(self.y) - h
        scaled = resid * tape.const(1.0 / self._std)
        log_lik = scaled.square().sum().scale(-0.5) + tape.const(
            np.array(self._loglik_const)
        )
        return log_lik + log_prior

    def logp_and_grad(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        tape = Tape()
        z_node = tape.leaf(np.asarray(z, dtype=float))
        node = self.log_posterior_node(tape, z_node)
        grad = backward(node, wrt=[z_node])[z_node.idx]
        return float(node.value), grad

    # -- fast numpy route (no gradients) ---------------------------------------
    def log_unnorm(self, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=float)
        val = self.latent_prior.log_density(z)
        if self.op is not None:
            predicted = self.generator.observed_values(z, self.op.indices)
            r = (self.y - predicted) / self._std
            val += float(-0.5 * np.sum(r * r) + self._loglik_const)
        return val

    def push(self, z: np.ndarray) -> np.ndarray:
        return self.generator.push(np.asarray(z, dtype=float))


@dataclass(frozen=True)
class MapConfig:
    steps: int = 500
    initial_step: float = 0.1
    restarts: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.restarts < 1 or self.initial_step <= 0:
            raise ValueError("MAP search needs positive counts and step")


ARMIJO_C = 1e-4
BACKTRACK = 0.5


def map_estimate(post: LatentPosterior, cfg: MapConfig) -> np.ndarray:
    """Gradient ascent with Armijo backtracking from several Gaussian starts."""
    rng = np.random.default_rng(cfg.seed)
    dim = post.latent_prior.dim
    best_val, best_z = -np.inf, None
    for _ in range(cfg.restarts):
        z = rng.standard_normal(dim)
        try:
            val, grad = post.logp_and_grad(z)
        except Exception:
            continue
        if not np.isfinite(val):
            continue
        step = cfg.initial_step
        for _ in range(cfg.steps):
            gnorm2 = float(np.dot(grad, grad))
            if gnorm2 < 1e-24:
                break
            accepted = False
            for _ in range(60):
                z_try = z + step * grad
                try:
                    v_try, g_try = post.logp_and_grad(z_try)
                except Exception:
                    v_try = -np.inf
                if np.isfinite(v_try) and v_try >= val + ARMIJO_C * step * gnorm2:
                    z, val, grad = z_try, v_try, g_try
                    accepted = True
                    break
                step *= BACKTRACK
            if not accepted:
                break
            step *= 1.5  # re-expand after a success so steps can grow back
        if val > best_val:
            best_val, best_z = val, z
    if best_z is None:
        raise RuntimeError("every MAP restart produced a non-finite objective")
    return best_z


@dataclass
class PosteriorStats:
    """Pushforward posterior summaries over a set of latent samples."""

    q_mean: np.ndarray
    q_std: np.ndarray
    m_mean: np.ndarray
    m_std: np.ndarray
    f_q: np.ndarray | float | None = None
    f_m: np.ndarray | float | None = None


def posterior_stats(samples: np.ndarray, generator, f=None) -> PosteriorStats:
    """Monte Carlo pushforward statistics: (1/N) sum f(G(z_i)), blockwise."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[None, :]
    if samples.shape[0] < 1:
        raise ValueError("need at least one sample")
    pushed = np.stack([generator.push(z) for z in samples])
    nq = generator.n_state
    q = pushed[:, :nq]
    m = pushed[:, nq:]
    stats = PosteriorStats(
        q_mean=q.mean(axis=0),
        q_std=q.std(axis=0),
        m_mean=m.mean(axis=0),
        m_std=m.std(axis=0),
    )
    if f is not None:
        stats.f_q = np.mean([np.asarray(f(qi), dtype=float) for qi in q], axis=0)
        if m.shape[1]:
            stats.f_m = np.mean([np.asarray(f(mi), dtype=float) for mi in m], axis=0)
    return stats


class LinearGenerator:
    """Analytic generator G(z) = A z (+ offset); the conjugate-test stand-in."""

    def __init__(self, a: np.ndarray, offset: np.ndarray | None = None, n_param: int = 0):
        self.a = np.asarray(a, dtype=float)
        self.offset = (
            np.zeros(self.a.shape[0]) if offset is None else np.asarray(offset, float)
        )
        self.latent_dim = self.a.shape[1]
        self.n_param = n_param
        self.n_state = self.a.shape[0] - n_param

    def push(self, z):
        return self.a @ z + self.offset

    def observed_values(self, z, idx):
        return self.a[idx, :] @ z + self.offset[idx]

    def observed_state_node(self, tape, z_node, idx):
        idx = np.asarray(idx, dtype=np.intp)
        return tape.const(self.a[idx, :]) @ z_node + tape.const(self.offset[idx])
