"""Dense networks on the autodiff tape, plus the RMSProp optimizer.

Desk-scale stand-in for the convolutional architectures used at full scale:
state fields are flattened to vectors, so plain MLPs suffice.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Node, NonFiniteError, Tape

HIDDEN_ACTIVATIONS = ("tanh", "leaky_relu")
OUTPUT_ACTIVATIONS = ("identity", "tanh")

RMSPROP_DECAY = 0.99
RMSPROP_EPS = 1e-8


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths and activation choices for a dense network."""

    widths: tuple[int, ...]
    hidden_activation: str = "leaky_relu"
    output_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        if any(w < 1 for w in self.widths):
            raise ValueError("all layer widths must be >= 1")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")

    @property
    def in_width(self) -> int:
        return self.widths[0]

    @property
    def out_width(self) -> int:
        return self.widths[-1]


@dataclass
class MlpParams:
    """Weight matrices and bias vectors matching an :class:`MlpSpec`."""

    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        w = self.spec.widths
        if len(self.weights) != len(w) - 1 or len(self.biases) != len(w) - 1:
            raise ValueError("layer count does not match spec")
        for i, (wm, bv) in enumerate(zip(self.weights, self.biases)):
            if wm.shape != (w[i], w[i + 1]) or bv.shape != (w[i + 1],):
                raise ValueError(f"layer {i} shapes inconsistent with spec")

    def tensors(self) -> list[np.ndarray]:
        out = []
        for wm, bv in zip(self.weights, self.biases):
            out.extend([wm, bv])
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(
            self.spec,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )


def init_params(spec: MlpSpec, rng: np.random.Generator) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(spec, weights, biases)


def _activate(h: Node, name: str) -> Node:
    if name == "tanh":
        return h.tanh()
    if name == "leaky_relu":
        return h.leaky_relu()
    return h


def mlp_forward(params: MlpParams, x: Node, tape: Tape | None = None) -> Node:
    """Forward pass recorded on the tape.  Accepts (n,) or (batch, n) inputs.

    Parameters may be passed either as raw arrays (treated as constants of the
    input's tape) or pre-registered nodes via :func:`params_on_tape` when their
    gradients are needed.
    """
    tape = tape or x.tape
    if x.value.shape[-1] != params.spec.in_width:
        raise ValueError(
            f"input width {x.value.shape[-1]} != spec width {params.spec.in_width}"
        )
    nodes = [
        (tape.const(w), tape.const(b))
        for w, b in zip(params.weights, params.biases)
    ]
    return mlp_forward_nodes(params.spec, nodes, x)


def params_on_tape(params: MlpParams, tape: Tape) -> list[tuple[Node, Node]]:
    """Register each weight matrix and bias vector as a differentiable leaf."""
    return [
        (tape.leaf(w), tape.leaf(b))
        for w, b in zip(params.weights, params.biases)
    ]


def mlp_forward_nodes(
    spec: MlpSpec, layer_nodes: list[tuple[Node, Node]], x: Node
) -> Node:
    """Forward pass with parameters already living on the tape."""
    h = x
    last = len(layer_nodes) - 1
    for k, (w, b) in enumerate(layer_nodes):
        h = h @ w + b
        h = _activate(h, spec.hidden_activation if k < last else spec.output_activation)
    return h


def mlp_apply(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Tape-free forward pass for sampling loops where gradients are not needed."""
    h = np.asarray(x, dtype=np.float64)
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        name = params.spec.hidden_activation if k < last else params.spec.output_activation
        if name == "tanh":
            h = np.tanh(h)
        elif name == "leaky_relu":
            h = np.where(h >= 0.0, h, 0.2 * h)
    return h


@dataclass
class RmspropState:
    """Running mean-square accumulators, one per parameter tensor."""

    lr: float
    accum: list[np.ndarray] = field(default_factory=list)
    decay: float = RMSPROP_DECAY
    eps: float = RMSPROP_EPS

    @classmethod
    def for_params(cls, params: MlpParams, lr: float) -> "RmspropState":
        return cls(lr=lr, accum=[np.zeros_like(t) for t in params.tensors()])


def rmsprop_step(state: RmspropState, params: MlpParams, grads: list[np.ndarray]) -> MlpParams:
    """In-place RMSProp update: v <- 0.99 v + 0.01 g^2, p <- p - lr g/(sqrt(v)+eps)."""
    tensors = params.tensors()
    if len(grads) != len(tensors) or len(state.accum) != len(tensors):
        raise ValueError("gradient count does not match parameter count")
    for t, g, v in zip(tensors, grads, state.accum):
        if t.shape != g.shape:
            raise ValueError("gradient shape mismatch")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("NaN gradient in RMSProp step")
        v *= state.decay
        v += (1.0 - state.decay) * g * g
        t -= state.lr * g / (np.sqrt(v) + state.eps)
    return params


# ---------------------------------------------------------------------------
# Checkpoint container: magic "MCGW", version, JSON header, f64 blobs.
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"MCGW"
CHECKPOINT_VERSION = 1


def write_checkpoint(path, header: dict, blobs: dict[str, np.ndarray]) -> None:
    """Write a parameter container: little-endian f64 blobs behind a JSON header."""
    manifest = {
        name: list(np.asarray(arr).shape) for name, arr in blobs.items()
    }
    head = dict(header)
    head["blobs"] = manifest
    payload = json.dumps(head, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(struct.pack("<I", len(payload)))
    buf.write(payload)
    for name in sorted(blobs):
        arr = np.ascontiguousarray(blobs[name], dtype="<f8")
        buf.write(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a parameter checkpoint (bad magic)")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    blobs: dict[str, np.ndarray] = {}
    off = 12 + hlen
    for name in sorted(header["blobs"]):
        shape = tuple(header["blobs"][name])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw[off : off + 8 * n], dtype="<f8").reshape(shape)
        blobs[name] = arr.astype(np.float64)
        off += 8 * n
    return header, blobs


def save_mlp(path, params: MlpParams, extra: dict | None = None) -> None:
    header = {
        "kind": "mlp",
        "spec": {
            "widths": list(params.spec.widths),
            "hidden_activation": params.spec.hidden_activation,
            "output_activation": params.spec.output_activation,
        },
    }
    if extra:
        header["extra"] = extra
    blobs = {}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        blobs[f"w{i:03d}"] = w
        blobs[f"b{i:03d}"] = b
    write_checkpoint(path, header, blobs)


def load_mlp(path) -> tuple[MlpParams, dict]:
    header, blobs = read_checkpoint(path)
    sp = header["spec"]
    spec = MlpSpec(
        tuple(sp["widths"]), sp["hidden_activation"], sp["output_activation"]
    )
    nlayers = len(spec.widths) - 1
    params = MlpParams(
        spec,
        [blobs[f"w{i:03d}"].copy() for i in range(nlayers)],
        [blobs[f"b{i:03d}"].copy() for i in range(nlayers)],
    )
    return params, header.get("extra", {})
