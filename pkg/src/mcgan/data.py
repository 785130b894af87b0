"""Training datasets: joint state-parameter rows with their normalization.

Rows are stored normalized: state entries z-scored per grid point against the
training set, parameters mapped affinely onto [-1, 1] from prior bounds (a
tanh head then keeps generated parameters inside the box) or z-scored like the
state when no bounds exist (field-valued parameters).

File format: magic "MCG1", version, JSON header (problem id, row count, row
width, block split, blob manifest), then little-endian float64 blobs.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

DATASET_MAGIC = b"MCG1"
DATASET_VERSION = 1

STD_FLOOR = 1e-12


@dataclass
class Normalization:
    """Affine (de)normalization per output block."""

    state_shift: np.ndarray
    state_scale: np.ndarray
    param_shift: np.ndarray
    param_scale: np.ndarray
    param_tanh: bool = False

    @classmethod
    def fit(
        cls,
        states: np.ndarray,
        params: np.ndarray,
        param_lower=None,
        param_upper=None,
    ) -> "Normalization":
        """Z-score the state; map parameters from box bounds when given."""
        s_shift = states.mean(axis=0)
        s_scale = np.maximum(states.std(axis=0), STD_FLOOR)
        if param_lower is not None:
            lo = np.asarray(param_lower, dtype=float)
            hi = np.asarray(param_upper, dtype=float)
            p_shift = 0.5 * (lo + hi)
            p_scale = 0.5 * (hi - lo)
            tanh = True
        elif params.shape[1]:
            p_shift = params.mean(axis=0)
            p_scale = np.maximum(params.std(axis=0), STD_FLOOR)
            tanh = False
        else:
            p_shift = np.zeros(0)
            p_scale = np.ones(0)
            tanh = False
        return cls(s_shift, s_scale, p_shift, p_scale, tanh)

    @classmethod
    def identity(cls, n_state: int, n_param: int = 0) -> "Normalization":
        return cls(
            np.zeros(n_state),
            np.ones(n_state),
            np.zeros(n_param),
            np.ones(n_param),
            False,
        )

    def normalize(self, states: np.ndarray, params: np.ndarray) -> np.ndarray:
        q = (states - self.state_shift) / self.state_scale
        if params.shape[1] == 0:
            return q
        m = (params - self.param_shift) / self.param_scale
        if self.param_tanh and np.any(np.abs(m) > 1.0):
            raise ValueError("parameters outside their prior box")
        return np.concatenate([q, m], axis=1)

    def denormalize_state(self, q_norm: np.ndarray) -> np.ndarray:
        return q_norm * self.state_scale + self.state_shift

    def denormalize_params(self, m_norm: np.ndarray) -> np.ndarray:
        return m_norm * self.param_scale + self.param_shift


@dataclass
class Dataset:
    """Normalized (state, parameter) rows plus the maps back to physical units."""

    problem: str
    rows: np.ndarray  # (n, n_state + n_param), normalized
    n_state: int
    n_param: int
    norm: Normalization
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rows.ndim != 2 or self.rows.shape[1] != self.n_state + self.n_param:
            raise ValueError("row width does not match the block split")

    def __len__(self) -> int:
        return self.rows.shape[0]

    @classmethod
    def from_raw(
        cls,
        problem: str,
        states: np.ndarray,
        params: np.ndarray,
        param_lower=None,
        param_upper=None,
        meta: dict | None = None,
    ) -> "Dataset":
        states = np.asarray(states, dtype=float)
        params = np.asarray(params, dtype=float)
        if params.ndim == 1:
            params = params[:, None]
        norm = Normalization.fit(states, params, param_lower, param_upper)
        rows = norm.normalize(states, params)
        return cls(
            problem=problem,
            rows=rows,
            n_state=states.shape[1],
            n_param=params.shape[1],
            norm=norm,
            meta=dict(meta or {}),
        )

    def denormalized(self) -> np.ndarray:
        """Rows in physical units (tanh on the parameter head is *not* undone:
        stored parameter columns are pre-squash values in [-1, 1])."""
        q = self.norm.denormalize_state(self.rows[:, : self.n_state])
        if self.n_param == 0:
            return q
        m = self.norm.denormalize_params(self.rows[:, self.n_state :])
        return np.concatenate([q, m], axis=1)


def save_dataset(path, ds: Dataset) -> None:
    header = {
        "problem": ds.problem,
        "n_rows": int(len(ds)),
        "row_width": int(ds.rows.shape[1]),
        "n_state": int(ds.n_state),
        "n_param": int(ds.n_param),
        "param_tanh": bool(ds.norm.param_tanh),
        "meta": ds.meta,
        "blobs": ["state_shift", "state_scale", "param_shift", "param_scale", "rows"],
    }
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(DATASET_MAGIC)
    buf.write(struct.pack("<I", DATASET_VERSION))
    buf.write(struct.pack("<I", len(payload)))
    buf.write(payload)
    for blob in (
        ds.norm.state_shift,
        ds.norm.state_scale,
        ds.norm.param_shift,
        ds.norm.param_scale,
        ds.rows,
    ):
        buf.write(np.ascontiguousarray(blob, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != DATASET_MAGIC:
        raise ValueError("not a training dataset (bad magic)")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != DATASET_VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    off = 12 + hlen
    n_state = header["n_state"]
    n_param = header["n_param"]
    n_rows = header["n_rows"]

    def take(count):
        nonlocal off
        arr = np.frombuffer(raw[off : off + 8 * count], dtype="<f8").astype(np.float64)
        off += 8 * count
        return arr

    norm = Normalization(
        state_shift=take(n_state),
        state_scale=take(n_state),
        param_shift=take(n_param),
        param_scale=take(n_param),
        param_tanh=header["param_tanh"],
    )
    rows = take(n_rows * header["row_width"]).reshape(n_rows, header["row_width"])
    return Dataset(
        problem=header["problem"],
        rows=rows,
        n_state=n_state,
        n_param=n_param,
        norm=norm,
        meta=header.get("meta", {}),
    )
