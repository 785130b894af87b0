"""MCMC engines over differentiable log-densities.

The workhorse is a multinomial no-U-turn sampler: trajectories grow by tree
doubling until the momentum turns against the endpoint displacement, proposals
are drawn from the whole tree with weights exp(-H), and the step size adapts
by dual averaging toward a target acceptance statistic during warmup.  A plain
HMC step and a random-walk Metropolis step are provided as baselines and for
cross-checks.

Targets are duck-typed: either a callable z -> (logp, grad) or an object with
a `logp_and_grad` method (the latent posterior).  Random-walk MH only needs
z -> logp.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "HmcConfig",
    "Chain",
    "leapfrog",
    "hmc_step",
    "hmc_sample",
    "nuts_sample",
    "mh_step",
    "mh_sample",
    "ergodic_average",
    "find_reasonable_epsilon",
]

DIVERGENCE_THRESHOLD = 1000.0


@dataclass(frozen=True)
class HmcConfig:
    mass_diag: np.ndarray | None = None
    target_accept: float = 0.8
    warmup: int = 1000
    max_tree_depth: int = 10
    seed: int = 0
    step_size: float | None = None  # fixed step disables dual averaging

    def __post_init__(self):
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target acceptance must lie in (0, 1)")
        if self.mass_diag is not None:
            m = np.asarray(self.mass_diag, dtype=float)
            if np.any(m <= 0):
                raise ValueError("mass matrix entries must be positive")
            object.__setattr__(self, "mass_diag", m)
        if self.max_tree_depth < 1 or self.warmup < 0:
            raise ValueError("invalid tree depth or warmup count")


@dataclass
class Chain:
    """Ordered samples with densities, move flags, and the burn-in marker."""

    samples: np.ndarray
    log_densities: np.ndarray
    accepted: np.ndarray
    burn_in: int

    def __post_init__(self):
        n = self.samples.shape[0]
        if not (self.log_densities.shape[0] == n and self.accepted.shape[0] == n):
            raise ValueError("chain columns must have equal length")
        if not 0 <= self.burn_in < n:
            raise ValueError("burn-in marker must fall inside the chain")

    def __len__(self) -> int:
        return self.samples.shape[0]

    def post_burn(self) -> np.ndarray:
        return self.samples[self.burn_in :]

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted[self.burn_in :]))

    def to_csv(self, path) -> None:
        dim = self.samples.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["sample_index", "accepted", "log_density"]
                + [f"z{i + 1}" for i in range(dim)]
            )
            writer.writerow(["burn_in", int(self.burn_in), "", *[""] * dim])
            for i in range(len(self)):
                writer.writerow(
                    [i, int(self.accepted[i]), repr(float(self.log_densities[i]))]
                    + [repr(float(v)) for v in self.samples[i]]
                )

    @classmethod
    def from_csv(cls, path) -> "Chain":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, marker, body = rows[0], rows[1], rows[2:]
        dim = len(header) - 3
        if marker[0] != "burn_in":
            raise ValueError("missing burn-in marker row")
        samples = np.array([[float(v) for v in r[3 : 3 + dim]] for r in body])
        logps = np.array([float(r[2]) for r in body])
        accepted = np.array([bool(int(r[1])) for r in body])
        return cls(samples, logps, accepted, int(marker[1]))


def _as_target(target):
    if callable(target):
        return target
    if hasattr(target, "logp_and_grad"):
        return target.logp_and_grad
    raise TypeError("target must be callable or expose logp_and_grad")


def leapfrog(z, p, eps: float, grad_u, inv_mass=None):
    """One symplectic step of the Hamiltonian flow.

    grad_u returns the potential gradient (the negative log-density gradient).
    Half kick, full drift with the inverse mass, half kick.
    """
    z = np.asarray(z, dtype=float)
    p = np.asarray(p, dtype=float)
    inv_mass = np.ones_like(z) if inv_mass is None else inv_mass
    g = np.asarray(grad_u(z), dtype=float)
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite potential gradient in leapfrog")
    p = p - 0.5 * eps * g
    z = z + eps * inv_mass * p
    g = np.asarray(grad_u(z), dtype=float)
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite potential gradient in leapfrog")
    p = p - 0.5 * eps * g
    return z, p


@dataclass
class _Point:
    z: np.ndarray
    p: np.ndarray
    logp: float
    grad: np.ndarray  # gradient of logp


def _leap(target, pt: _Point, eps: float, inv_mass) -> _Point:
    """Leapfrog step reusing the cached log-density gradient at the endpoint."""
    p = pt.p + 0.5 * eps * pt.grad
    z = pt.z + eps * inv_mass * p
    logp, grad = target(z)
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite potential gradient in leapfrog")
    p = p + 0.5 * eps * grad
    return _Point(z=z, p=p, logp=float(logp), grad=grad)


def _energy(pt: _Point, inv_mass) -> float:
    return -pt.logp + 0.5 * float(np.dot(pt.p, inv_mass * pt.p))


def hmc_step(target, z, n_leapfrog: int, eps: float, rng, mass_diag=None):
    """Single Hamiltonian Monte Carlo transition.

    Fresh Gaussian momentum, n_leapfrog steps, and acceptance with probability
    min(1, exp(H(start) - H(end))); the momentum is negated before the ratio
    (a no-op for the Gaussian kinetic energy, kept for the detailed-balance
    convention).  Returns (z_new, logp_new, accepted).
    """
    target = _as_target(target)
    z = np.asarray(z, dtype=float)
    mass = np.ones_like(z) if mass_diag is None else np.asarray(mass_diag, float)
    inv_mass = 1.0 / mass
    logp0, grad0 = target(z)
    p0 = rng.standard_normal(z.shape) * np.sqrt(mass)
    pt = _Point(z=z, p=p0.copy(), logp=float(logp0), grad=np.asarray(grad0, float))
    h0 = _energy(pt, inv_mass)
    try:
        for _ in range(n_leapfrog):
            pt = _leap(target, pt, eps, inv_mass)
    except ValueError:
        return z, float(logp0), False
    pt.p = -pt.p
    h1 = _energy(pt, inv_mass)
    log_alpha = h0 - h1
    if np.isfinite(log_alpha) and np.log(rng.uniform()) < min(0.0, log_alpha):
        return pt.z, pt.logp, True
    return z, float(logp0), False


def hmc_sample(
    target, z0, n_samples: int, n_leapfrog: int, eps: float, seed: int = 0,
    warmup: int = 0, mass_diag=None,
) -> Chain:
    """Fixed-step HMC chain; records every state including warmup."""
    target_fn = _as_target(target)
    rng = np.random.default_rng(seed)
    z = np.asarray(z0, dtype=float).copy()
    logp, _ = target_fn(z)
    samples, logps, moved = [], [], []
    for _ in range(n_samples):
        z, logp, acc = hmc_step(target_fn, z, n_leapfrog, eps, rng, mass_diag)
        samples.append(z.copy())
        logps.append(logp)
        moved.append(acc)
    return Chain(np.array(samples), np.array(logps), np.array(moved), warmup)


def find_reasonable_epsilon(target, z, rng, mass_diag=None) -> float:
    """Double or halve the step until one leapfrog step crosses 1/2 acceptance."""
    target = _as_target(target)
    z = np.asarray(z, dtype=float)
    mass = np.ones_like(z) if mass_diag is None else np.asarray(mass_diag, float)
    inv_mass = 1.0 / mass
    logp, grad = target(z)
    eps = 1.0
    p = rng.standard_normal(z.shape) * np.sqrt(mass)
    pt = _Point(z=z, p=p, logp=float(logp), grad=np.asarray(grad, float))
    h0 = _energy(pt, inv_mass)

    def log_ratio(e):
        try:
            nxt = _leap(target, pt, e, inv_mass)
        except ValueError:
            return -np.inf
        h1 = _energy(nxt, inv_mass)
        return h0 - h1 if np.isfinite(h1) else -np.inf

    direction = 1.0 if log_ratio(eps) > np.log(0.5) else -1.0
    for _ in range(60):
        if direction * log_ratio(eps) <= direction * np.log(0.5):
            break
        eps *= 2.0**direction
    return eps


@dataclass
class _Tree:
    minus: _Point
    plus: _Point
    proposal: _Point
    log_weight: float
    alpha_sum: float
    n_alpha: int
    turning: bool
    divergent: bool


def _is_turning(minus: _Point, plus: _Point, inv_mass) -> bool:
    dz = plus.z - minus.z
    return (
        float(np.dot(dz, inv_mass * minus.p)) < 0.0
        or float(np.dot(dz, inv_mass * plus.p)) < 0.0
    )


def _build_tree(target, pt, direction, depth, eps, h0, rng, inv_mass) -> _Tree:
    if depth == 0:
        try:
            nxt = _leap(target, pt, direction * eps, inv_mass)
            h1 = _energy(nxt, inv_mass)
        except ValueError:
            h1 = np.inf
            nxt = pt
        delta = h1 - h0 if np.isfinite(h1) else np.inf
        divergent = not np.isfinite(delta) or delta > DIVERGENCE_THRESHOLD
        log_w = -delta if np.isfinite(delta) else -np.inf
        alpha = float(np.exp(min(0.0, -delta))) if np.isfinite(delta) else 0.0
        return _Tree(
            minus=nxt, plus=nxt, proposal=nxt, log_weight=log_w,
            alpha_sum=alpha, n_alpha=1, turning=False, divergent=divergent,
        )

    first = _build_tree(target, pt, direction, depth - 1, eps, h0, rng, inv_mass)
    if first.divergent or first.turning:
        return first
    start = first.plus if direction > 0 else first.minus
    second = _build_tree(target, start, direction, depth - 1, eps, h0, rng, inv_mass)

    minus = first.minus if direction > 0 else second.minus
    plus = second.plus if direction > 0 else first.plus
    alpha_sum = first.alpha_sum + second.alpha_sum
    n_alpha = first.n_alpha + second.n_alpha
    if second.divergent or second.turning:
        # an invalid half invalidates the whole subtree; the caller discards it
        return _Tree(
            minus=minus, plus=plus, proposal=first.proposal,
            log_weight=-np.inf, alpha_sum=alpha_sum, n_alpha=n_alpha,
            turning=True, divergent=second.divergent,
        )
    total = np.logaddexp(first.log_weight, second.log_weight)
    proposal = first.proposal
    if np.isfinite(second.log_weight) and np.log(rng.uniform()) < (
        second.log_weight - total
    ):
        proposal = second.proposal
    return _Tree(
        minus=minus,
        plus=plus,
        proposal=proposal,
        log_weight=float(total),
        alpha_sum=alpha_sum,
        n_alpha=n_alpha,
        turning=_is_turning(minus, plus, inv_mass),
        divergent=False,
    )


def nuts_sample(target, cfg: HmcConfig, n_samples: int, z0) -> Chain:
    """No-U-turn chain with dual-averaging warmup.

    Records n_samples states in total; the first cfg.warmup are flagged as
    burn-in.  Fully deterministic for a fixed seed.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if cfg.warmup >= n_samples:
        raise ValueError("warmup must leave room for retained samples")
    target_fn = _as_target(target)
    rng = np.random.default_rng(cfg.seed)
    z = np.asarray(z0, dtype=float).copy()
    dim = z.shape[0]
    mass = np.ones(dim) if cfg.mass_diag is None else cfg.mass_diag
    inv_mass = 1.0 / mass

    logp, grad = target_fn(z)
    logp = float(logp)
    grad = np.asarray(grad, dtype=float)

    if cfg.step_size is not None:
        eps = float(cfg.step_size)
        adapting = False
    else:
        eps = find_reasonable_epsilon(target_fn, z, rng, mass)
        adapting = True
    mu = np.log(10.0 * eps)
    log_eps_bar, h_bar = 0.0, 0.0
    gamma, t0, kappa = 0.05, 10.0, 0.75

    samples = np.empty((n_samples, dim))
    logps = np.empty(n_samples)
    moved = np.zeros(n_samples, dtype=bool)
    all_divergent_warmup = 0

    for m in range(n_samples):
        p0 = rng.standard_normal(dim) * np.sqrt(mass)
        current = _Point(z=z, p=p0, logp=logp, grad=grad)
        h0 = _energy(current, inv_mass)
        minus = plus = current
        selected = current
        log_w_tree = 0.0  # the initial point carries weight exp(-(h0-h0)) = 1
        alpha_sum, n_alpha = 0.0, 0
        nondivergent_expansion = False
        for depth in range(cfg.max_tree_depth):
            direction = 1 if rng.uniform() < 0.5 else -1
            start = plus if direction > 0 else minus
            sub = _build_tree(
                target_fn, start, direction, depth, eps, h0, rng, inv_mass
            )
            alpha_sum += sub.alpha_sum
            n_alpha += sub.n_alpha
            if not sub.divergent:
                nondivergent_expansion = True
            if sub.divergent or sub.turning:
                break
            # multinomial merge of the new subtree into the trajectory
            total = np.logaddexp(log_w_tree, sub.log_weight)
            if np.log(rng.uniform()) < sub.log_weight - total:
                selected = sub.proposal
            log_w_tree = float(total)
            if direction > 0:
                plus = sub.plus
            else:
                minus = sub.minus
            if _is_turning(minus, plus, inv_mass):
                break

        if m < cfg.warmup and not nondivergent_expansion:
            all_divergent_warmup += 1
        moved[m] = selected is not current
        z, logp, grad = selected.z, selected.logp, selected.grad
        samples[m] = z
        logps[m] = logp

        if adapting:
            accept_stat = alpha_sum / max(n_alpha, 1)
            if m < cfg.warmup:
                frac = 1.0 / (m + 1 + t0)
                h_bar = (1.0 - frac) * h_bar + frac * (cfg.target_accept - accept_stat)
                log_eps = mu - np.sqrt(m + 1.0) / gamma * h_bar
                eta = (m + 1.0) ** (-kappa)
                log_eps_bar = eta * log_eps + (1.0 - eta) * log_eps_bar
                eps = float(np.exp(log_eps))
            elif m == cfg.warmup and cfg.warmup > 0:
                eps = float(np.exp(log_eps_bar))

    if cfg.warmup > 0 and all_divergent_warmup == cfg.warmup:
        raise RuntimeError("every warmup step diverged on all tree expansions")
    return Chain(samples, logps, moved, cfg.warmup)


def mh_step(target_logp, z, logp: float, proposal_std: float, rng):
    """Gaussian random-walk Metropolis transition; returns (z, logp, accepted)."""
    if proposal_std <= 0:
        raise ValueError("proposal std must be positive")
    z = np.asarray(z, dtype=float)
    proposal = z + rng.normal(0.0, proposal_std, size=z.shape)
    lp_new = float(target_logp(proposal))
    if np.log(rng.uniform()) < lp_new - logp:
        return proposal, lp_new, True
    return z, logp, False


def mh_sample(
    target_logp, z0, n_samples: int, proposal_std: float, seed: int = 0, warmup: int = 0
) -> Chain:
    rng = np.random.default_rng(seed)
    z = np.asarray(z0, dtype=float).copy()
    logp = float(target_logp(z))
    samples = np.empty((n_samples, z.size))
    logps = np.empty(n_samples)
    moved = np.zeros(n_samples, dtype=bool)
    for i in range(n_samples):
        z, logp, acc = mh_step(target_logp, z, logp, proposal_std, rng)
        samples[i] = z
        logps[i] = logp
        moved[i] = acc
    return Chain(samples, logps, moved, warmup)


def ergodic_average(chain: Chain, f) -> np.ndarray | float:
    """Mean of f over the post-burn-in samples."""
    kept = chain.post_burn()
    if kept.shape[0] == 0:
        raise ValueError("no post-burn-in samples")
    vals = np.array([f(z) for z in kept], dtype=float)
    return vals.mean(axis=0)
