"""Wasserstein GAN with gradient penalty over joint state-parameter rows.

Offline stage: the generator learns to map a Gaussian latent space onto the
normalized training rows.  The discriminator is driven toward the 1-Lipschitz
dual witness by penalizing (||grad D|| - 1)^2 at points interpolated between
real and generated rows; its parameter gradients run through the engine's
forward-over-reverse sweep.  Training alternates a configurable number of
discriminator steps per generator step, both under RMSProp.

The trained :class:`Generator` carries the de-normalization maps, exposes
plain sampling for posterior statistics, and a column-sliced "observed head"
so the latent posterior touches only the output entries the sensors read.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Node, NonFiniteError, Tape, backward, concat, grad_wrt_input
from .data import Dataset, Normalization
from .metrics import rrmse
from .nnet import (
    MlpParams,
    MlpSpec,
    RmspropState,
    init_params,
    mlp_apply,
    mlp_forward_nodes,
    params_on_tape,
    read_checkpoint,
    write_checkpoint,
)


class TrainingDiverged(RuntimeError):
    """Raised when a loss goes non-finite; carries the offending epoch."""

    def __init__(self, epoch: int):
        super().__init__(f"training diverged at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class GanConfig:
    latent_dim: int
    gp_weight: float = 5.0
    batch_size: int = 64
    lr: float = 1e-4
    n_disc_per_gen: int = 1
    epochs: int = 100
    seed: int = 0
    hidden: tuple[int, ...] = (64,)
    n_diag_samples: int = 256

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent dimension must be >= 1")
        if self.gp_weight < 0:
            raise ValueError("gradient-penalty weight must be nonnegative")
        if self.n_disc_per_gen < 1:
            raise ValueError("need at least one discriminator step per generator step")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


class Generator:
    """Latent-to-data map with blockwise output heads and de-normalization."""

    def __init__(self, params: MlpParams, n_state: int, n_param: int,
                 norm: Normalization, meta: dict | None = None):
        if params.spec.out_width != n_state + n_param:
            raise ValueError("output width must equal state length + parameter length")
        self.params = params
        self.n_state = n_state
        self.n_param = n_param
        self.norm = norm
        self.meta = dict(meta or {})
        self._head_cache: tuple | None = None

    @property
    def latent_dim(self) -> int:
        return self.params.spec.in_width

    # -- normalized-space forward ------------------------------------------
    def raw_batch(self, z: np.ndarray) -> np.ndarray:
        """Normalized rows, with the tanh parameter head applied (pipe case)."""
        out = mlp_apply(self.params, np.atleast_2d(np.asarray(z, dtype=float)))
        if self.n_param and self.norm.param_tanh:
            out = out.copy()
            out[:, self.n_state :] = np.tanh(out[:, self.n_state :])
        return out

    def raw_nodes(self, tape: Tape, layer_nodes, z_node: Node) -> Node:
        out = mlp_forward_nodes(self.params.spec, layer_nodes, z_node)
        if self.n_param and self.norm.param_tanh:
            state = out.slice(0, self.n_state)
            par = out.slice(self.n_state, self.n_state + self.n_param).tanh()
            out = concat([state, par])
        return out

    # -- physical-space forward --------------------------------------------
    def push_batch(self, z: np.ndarray) -> np.ndarray:
        rows = self.raw_batch(z)
        q = self.norm.denormalize_state(rows[:, : self.n_state])
        if self.n_param == 0:
            return q
        m = self.norm.denormalize_params(rows[:, self.n_state :])
        return np.concatenate([q, m], axis=1)

    def push(self, z: np.ndarray) -> np.ndarray:
        return self.push_batch(np.asarray(z, dtype=float)[None, :])[0]

    def split(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return u[..., : self.n_state], u[..., self.n_state :]

    # -- observed head -------------------------------------------------------
    def _head(self, idx: np.ndarray):
        """Final layer restricted to observed state columns, with their affine."""
        idx = np.asarray(idx, dtype=np.intp)
        if idx.size and idx.max() >= self.n_state:
            raise IndexError("observed indices must fall inside the state block")
        key = idx.tobytes()
        if self._head_cache is None or self._head_cache[0] != key:
            w = self.params.weights[-1][:, idx].copy()
            b = self.params.biases[-1][idx].copy()
            self._head_cache = (
                key, w, b,
                self.norm.state_scale[idx].copy(),
                self.norm.state_shift[idx].copy(),
            )
        return self._head_cache[1:]

    def _hidden_apply(self, z: np.ndarray) -> np.ndarray:
        h = z
        spec = self.params.spec
        for k in range(len(self.params.weights) - 1):
            h = h @ self.params.weights[k] + self.params.biases[k]
            h = np.tanh(h) if spec.hidden_activation == "tanh" else np.where(
                h >= 0.0, h, 0.2 * h
            )
        return h

    def observed_values(self, z: np.ndarray, idx) -> np.ndarray:
        w, b, scale, shift = self._head(idx)
        h = self._hidden_apply(np.asarray(z, dtype=float))
        return (h @ w + b) * scale + shift

    def observed_state_node(self, tape: Tape, z_node: Node, idx) -> Node:
        w, b, scale, shift = self._head(idx)
        spec = self.params.spec
        h = z_node
        for k in range(len(self.params.weights) - 1):
            h = h @ tape.const(self.params.weights[k]) + tape.const(self.params.biases[k])
            h = h.tanh() if spec.hidden_activation == "tanh" else h.leaky_relu()
        out = h @ tape.const(w) + tape.const(b)
        return out * tape.const(scale) + tape.const(shift)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _disc_loss_node(tape, d_spec, d_nodes, real, fake, eps, gp_weight):
    d_real = mlp_forward_nodes(d_spec, d_nodes, tape.const(real))
    d_fake = mlp_forward_nodes(d_spec, d_nodes, tape.const(fake))
    loss = d_real.mean().scale(-1.0) + d_fake.mean()
    if gp_weight > 0.0:
        mix = eps[:, None] * real + (1.0 - eps[:, None]) * fake
        x_hat = tape.leaf(mix)
        d_hat = mlp_forward_nodes(d_spec, d_nodes, x_hat)
        g = grad_wrt_input(d_hat.sum(), x_hat)
        penalty = (g.l2norm(axis=1) - 1.0).square().mean()
        loss = loss + penalty.scale(gp_weight)
    return loss


def wgan_losses(
    disc: MlpParams,
    gen: Generator,
    real_batch: np.ndarray,
    z_batch: np.ndarray,
    eps_batch: np.ndarray,
    gp_weight: float,
) -> tuple[float, float]:
    """Generator and discriminator loss values for one batch (no gradients).

    L_G = -mean D(G(z)); L_D = -mean D(x) + mean D(G(z)) + gp_weight *
    mean((||grad D|| - 1)^2) at per-row interpolates eps x + (1-eps) G(z).
    """
    real = np.asarray(real_batch, dtype=float)
    z = np.asarray(z_batch, dtype=float)
    eps = np.asarray(eps_batch, dtype=float)
    if not (real.shape[0] == z.shape[0] == eps.shape[0]):
        raise ValueError("batches must have equal length")
    if np.any((eps < 0) | (eps > 1)):
        raise ValueError("interpolation draws must lie in [0, 1]")
    fake = gen.raw_batch(z)
    tape = Tape()
    d_nodes = [(tape.const(w), tape.const(b)) for w, b in zip(disc.weights, disc.biases)]
    l_d = _disc_loss_node(tape, disc.spec, d_nodes, real, fake, eps, gp_weight)
    l_g = mlp_forward_nodes(disc.spec, d_nodes, tape.const(fake)).mean().scale(-1.0)
    if not (np.isfinite(l_g.value) and np.isfinite(l_d.value)):
        raise NonFiniteError("non-finite loss")
    return float(l_g.value), float(l_d.value)


@dataclass
class TrainDiagnostics:
    """Per-epoch loss and prior-moment convergence records."""

    epochs: list[int] = field(default_factory=list)
    d_loss: list[float] = field(default_factory=list)
    g_loss: list[float] = field(default_factory=list)
    rrmse_mean: list[float] = field(default_factory=list)
    rrmse_std: list[float] = field(default_factory=list)

    def append(self, epoch, d, g, rm, rs):
        self.epochs.append(int(epoch))
        self.d_loss.append(float(d))
        self.g_loss.append(float(g))
        self.rrmse_mean.append(float(rm))
        self.rrmse_std.append(float(rs))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "d_loss", "g_loss", "rrmse_mean", "rrmse_std"])
            for row in zip(
                self.epochs, self.d_loss, self.g_loss, self.rrmse_mean, self.rrmse_std
            ):
                writer.writerow([row[0]] + [repr(v) for v in row[1:]])


def moment_convergence(
    gen: Generator, test_rows: np.ndarray, n_samples: int,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """RRMSE of pointwise mean and std between generated and reference rows.

    Both sides live in physical units; the reference rows are de-normalized
    data, the generated side is pushed through the de-normalization head.
    """
    test = np.asarray(test_rows, dtype=float)
    if n_samples < 2 or test.shape[0] < 2:
        raise ValueError("need at least two samples on both sides")
    rng = rng or np.random.default_rng(0)
    z = rng.standard_normal((n_samples, gen.latent_dim))
    fake = gen.push_batch(z)
    return (
        rrmse(fake.mean(axis=0), test.mean(axis=0)),
        rrmse(fake.std(axis=0), test.std(axis=0)),
    )


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _apply_step(state, params, loss_node, layer_nodes):
    flat_nodes = [n for pair in layer_nodes for n in pair]
    grads = backward(loss_node, wrt=flat_nodes)
    from .nnet import rmsprop_step

    rmsprop_step(state, params, [grads[n.idx] for n in flat_nodes])


def train_gan(
    dataset: Dataset, cfg: GanConfig, eval_rows: np.ndarray | None = None
) -> tuple[Generator, TrainDiagnostics]:
    """Alternating WGAN-GP training over shuffled minibatches.

    Runs cfg.n_disc_per_gen discriminator updates per generator update, all
    with RMSProp at the configured rate; deterministic for a fixed seed.
    Raises :class:`TrainingDiverged` when a loss stops being finite.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    width = dataset.n_state + dataset.n_param
    g_spec = MlpSpec(
        (cfg.latent_dim, *cfg.hidden, width),
        hidden_activation="leaky_relu",
        output_activation="identity",
    )
    d_spec = MlpSpec(
        (width, *cfg.hidden, 1),
        hidden_activation="leaky_relu",
        output_activation="identity",
    )
    g_params = init_params(g_spec, rng)
    d_params = init_params(d_spec, rng)
    gen = Generator(g_params, dataset.n_state, dataset.n_param, dataset.norm,
                    meta=dict(dataset.meta))
    g_state = RmspropState.for_params(g_params, cfg.lr)
    d_state = RmspropState.for_params(d_params, cfg.lr)

    if eval_rows is None:
        eval_rows = dataset.denormalized()
        if eval_rows.shape[0] > 2048:
            eval_rows = eval_rows[
                rng.choice(eval_rows.shape[0], 2048, replace=False)
            ]

    rows = dataset.rows
    n = rows.shape[0]
    bs = min(cfg.batch_size, n)
    diag = TrainDiagnostics()

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        d_losses, g_losses = [], []
        disc_count = 0
        try:
            for start in range(0, n - bs + 1, bs):
                batch = rows[order[start : start + bs]]
                z = rng.standard_normal((bs, cfg.latent_dim))
                eps = rng.uniform(0.0, 1.0, size=bs)
                fake = gen.raw_batch(z)

                tape = Tape()
                d_nodes = params_on_tape(d_params, tape)
                l_d = _disc_loss_node(
                    tape, d_spec, d_nodes, batch, fake, eps, cfg.gp_weight
                )
                d_losses.append(float(l_d.value))
                _apply_step(d_state, d_params, l_d, d_nodes)
                gen._head_cache = None  # weights moved under the cache

                disc_count += 1
                if disc_count % cfg.n_disc_per_gen == 0:
                    z = rng.standard_normal((bs, cfg.latent_dim))
                    tape = Tape()
                    g_nodes = params_on_tape(g_params, tape)
                    fake_node = gen.raw_nodes(tape, g_nodes, tape.const(z))
                    d_consts = [
                        (tape.const(w), tape.const(b))
                        for w, b in zip(d_params.weights, d_params.biases)
                    ]
                    l_g = (
                        mlp_forward_nodes(d_spec, d_consts, fake_node)
                        .mean()
                        .scale(-1.0)
                    )
                    g_losses.append(float(l_g.value))
                    _apply_step(g_state, g_params, l_g, g_nodes)
                    gen._head_cache = None
        except NonFiniteError as exc:
            raise TrainingDiverged(epoch) from exc

        mean_d = float(np.mean(d_losses)) if d_losses else np.nan
        mean_g = float(np.mean(g_losses)) if g_losses else np.nan
        if not (np.isfinite(mean_d) and np.isfinite(mean_g)):
            raise TrainingDiverged(epoch)
        rm, rs = moment_convergence(
            gen, eval_rows, max(2, cfg.n_diag_samples),
            np.random.default_rng(cfg.seed + 7919 + epoch),
        )
        diag.append(epoch, mean_d, mean_g, rm, rs)
    return gen, diag


# ---------------------------------------------------------------------------
# Checkpointing (shared "MCGW" container)
# ---------------------------------------------------------------------------


def save_generator(path, gen: Generator) -> None:
    header = {
        "kind": "generator",
        "spec": {
            "widths": list(gen.params.spec.widths),
            "hidden_activation": gen.params.spec.hidden_activation,
            "output_activation": gen.params.spec.output_activation,
        },
        "n_state": gen.n_state,
        "n_param": gen.n_param,
        "param_tanh": bool(gen.norm.param_tanh),
        "meta": gen.meta,
    }
    blobs = {}
    for i, (w, b) in enumerate(zip(gen.params.weights, gen.params.biases)):
        blobs[f"w{i:03d}"] = w
        blobs[f"b{i:03d}"] = b
    blobs["state_shift"] = gen.norm.state_shift
    blobs["state_scale"] = gen.norm.state_scale
    blobs["param_shift"] = gen.norm.param_shift
    blobs["param_scale"] = gen.norm.param_scale
    write_checkpoint(path, header, blobs)


def load_generator(path) -> Generator:
    header, blobs = read_checkpoint(path)
    if header.get("kind") != "generator":
        raise ValueError("checkpoint does not hold a generator")
    sp = header["spec"]
    spec = MlpSpec(tuple(sp["widths"]), sp["hidden_activation"], sp["output_activation"])
    nlayers = len(spec.widths) - 1
    params = MlpParams(
        spec,
        [blobs[f"w{i:03d}"].copy() for i in range(nlayers)],
        [blobs[f"b{i:03d}"].copy() for i in range(nlayers)],
    )
    norm = Normalization(
        state_shift=blobs["state_shift"].copy(),
        state_scale=blobs["state_scale"].copy(),
        param_shift=blobs["param_shift"].copy(),
        param_scale=blobs["param_scale"].copy(),
        param_tanh=header["param_tanh"],
    )
    return Generator(
        params, header["n_state"], header["n_param"], norm, header.get("meta", {})
    )
