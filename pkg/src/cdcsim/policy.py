"""Recurrent consumption/investment policy with exact reverse-mode gradients.

Architecture (fixed): input(2) -> dense(32, ReLU) -> GRU(10) ->
dense(32, ReLU) -> dense(32, ReLU) -> dense(2).  The two inputs per year are
the latest observed noise increment and normalised time t/(T-1); the two
outputs are the consumption fraction (sigmoid-squashed into [0, 1]) and the
risky proportion (unsquashed real).

The GRU is the classic reset-before-matmul formulation with tanh candidate
and sigmoid gates:

    z_t = sigmoid(x_t Wz + h_{t-1} Uz + bz)
    r_t = sigmoid(x_t Wr + h_{t-1} Ur + br)
    n_t = tanh(x_t Wn + (r_t * h_{t-1}) Un + bn)
    h_t = (1 - z_t) * h_{t-1} + z_t * n_t

``backward`` replays a recorded forward tape through time and returns exact
gradients for every parameter, including the recurrent kernels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

IN_DIM = 2
D1 = 32
HID = 10
D3 = 32
D4 = 32
OUT_DIM = 2

ARCHITECTURE = {
    "input": IN_DIM,
    "dense1": D1,
    "gru": HID,
    "dense2": D3,
    "dense3": D4,
    "output": OUT_DIM,
    "gru_variant": "cho-reset-before",
    "dense_activation": "relu",
    "gru_activation": "tanh",
    "gru_recurrent_activation": "sigmoid",
    "output_squash": ["sigmoid", "identity"],
}

CHECKPOINT_FORMAT_VERSION = 1


def _sigmoid(x):
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class PolicyParams:
    """All weights and biases, with a lossless flat-vector view for the optimizer."""

    W1: np.ndarray  # (IN_DIM, D1)
    b1: np.ndarray  # (D1,)
    Wx: np.ndarray  # (D1, 3*HID) input kernel, gate order [z | r | n]
    Uh: np.ndarray  # (HID, 3*HID) recurrent kernel, same gate order
    bg: np.ndarray  # (3*HID,)
    W3: np.ndarray  # (HID, D3)
    b3: np.ndarray  # (D3,)
    W4: np.ndarray  # (D3, D4)
    b4: np.ndarray  # (D4,)
    W5: np.ndarray  # (D4, OUT_DIM)
    b5: np.ndarray  # (OUT_DIM,)

    _SHAPES = {
        "W1": (IN_DIM, D1),
        "b1": (D1,),
        "Wx": (D1, 3 * HID),
        "Uh": (HID, 3 * HID),
        "bg": (3 * HID,),
        "W3": (HID, D3),
        "b3": (D3,),
        "W4": (D3, D4),
        "b4": (D4,),
        "W5": (D4, OUT_DIM),
        "b5": (OUT_DIM,),
    }

    def __post_init__(self):
        for name, shape in self._SHAPES.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            setattr(self, name, arr)

    @classmethod
    def n_params(cls) -> int:
        return sum(int(np.prod(s)) for s in cls._SHAPES.values())

    def to_flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, n).ravel() for n in self._SHAPES])

    @classmethod
    def from_flat(cls, flat: np.ndarray) -> "PolicyParams":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (cls.n_params(),):
            raise ValueError(f"flat vector must have length {cls.n_params()}, got {flat.shape}")
        parts = {}
        pos = 0
        for name, shape in cls._SHAPES.items():
            size = int(np.prod(shape))
            parts[name] = flat[pos : pos + size].reshape(shape).copy()
            pos += size
        return cls(**parts)

    def zeros_like(self) -> "PolicyParams":
        return PolicyParams(**{n: np.zeros(s) for n, s in self._SHAPES.items()})

    def copy(self) -> "PolicyParams":
        return PolicyParams(**{n: getattr(self, n).copy() for n in self._SHAPES})


assert PolicyParams.n_params() == 2860


# Output-bias starting point: sigmoid(CONSUME_BIAS_INIT) ~ 4.5% consumption
# and a moderate risky share.  Starting inside the sane drawdown region keeps
# early gradients informative instead of tail-dominated.
CONSUME_BIAS_INIT = -3.05
RISKY_BIAS_INIT = 0.5


def init(seed: int) -> PolicyParams:
    """Seeded initialisation.

    Dense and GRU input kernels are uniform with fan scaling
    U(-L, L), L = sqrt(6 / (fan_in + fan_out per gate)); recurrent kernels
    are per-gate orthogonal (QR of a seeded normal matrix, sign-fixed);
    hidden biases start at zero and the output bias at the documented
    starting point above.
    """
    rng = np.random.default_rng(seed)

    def uniform(fan_in, fan_out, shape):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape)

    def orthogonal(n):
        a = rng.standard_normal((n, n))
        q, r = np.linalg.qr(a)
        return q * np.sign(np.diag(r))

    return PolicyParams(
        W1=uniform(IN_DIM, D1, (IN_DIM, D1)),
        b1=np.zeros(D1),
        Wx=np.concatenate([uniform(D1, HID, (D1, HID)) for _ in range(3)], axis=1),
        Uh=np.concatenate([orthogonal(HID) for _ in range(3)], axis=1),
        bg=np.zeros(3 * HID),
        W3=uniform(HID, D3, (HID, D3)),
        b3=np.zeros(D3),
        W4=uniform(D3, D4, (D3, D4)),
        b4=np.zeros(D4),
        W5=uniform(D4, OUT_DIM, (D4, OUT_DIM)),
        b5=np.array([CONSUME_BIAS_INIT, RISKY_BIAS_INIT]),
    )


@dataclass
class Tape:
    """Recorded forward pass for backpropagation through time."""

    inputs: np.ndarray  # (S, T, IN_DIM)
    a1: np.ndarray  # (S, T, D1) post-ReLU
    h: np.ndarray  # (S, T+1, HID) hidden states, h[:, 0] = 0
    z: np.ndarray  # (S, T, HID)
    r: np.ndarray  # (S, T, HID)
    n: np.ndarray  # (S, T, HID)
    a3: np.ndarray  # (S, T, D3) post-ReLU
    a4: np.ndarray  # (S, T, D4) post-ReLU
    consume: np.ndarray  # (S, T) sigmoid output


def forward(params: PolicyParams, inputs: np.ndarray, return_tape: bool = False):
    """Run the network over a batch of input sequences.

    ``inputs`` has shape (S, T, 2).  Returns (consume_frac, risky_prop),
    each (S, T), plus the tape when requested.  Pure in (params, inputs).
    """
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 3 or inputs.shape[2] != IN_DIM:
        raise ValueError(f"inputs must have shape (S, T, {IN_DIM}), got {inputs.shape}")
    S, T, _ = inputs.shape

    a1 = np.maximum(inputs @ params.W1 + params.b1, 0.0)

    h = np.zeros((S, T + 1, HID))
    z_seq = np.empty((S, T, HID))
    r_seq = np.empty((S, T, HID))
    n_seq = np.empty((S, T, HID))
    gx = a1 @ params.Wx + params.bg  # (S, T, 3*HID)
    Uz, Ur, Un = params.Uh[:, :HID], params.Uh[:, HID : 2 * HID], params.Uh[:, 2 * HID :]
    for t in range(T):
        h_prev = h[:, t]
        z = _sigmoid(gx[:, t, :HID] + h_prev @ Uz)
        r = _sigmoid(gx[:, t, HID : 2 * HID] + h_prev @ Ur)
        n = np.tanh(gx[:, t, 2 * HID :] + (r * h_prev) @ Un)
        h[:, t + 1] = (1.0 - z) * h_prev + z * n
        z_seq[:, t], r_seq[:, t], n_seq[:, t] = z, r, n

    a3 = np.maximum(h[:, 1:] @ params.W3 + params.b3, 0.0)
    a4 = np.maximum(a3 @ params.W4 + params.b4, 0.0)
    raw = a4 @ params.W5 + params.b5
    consume = _sigmoid(raw[:, :, 0])
    risky = raw[:, :, 1]

    if not return_tape:
        return consume, risky
    tape = Tape(inputs=inputs, a1=a1, h=h, z=z_seq, r=r_seq, n=n_seq, a3=a3, a4=a4, consume=consume)
    return (consume, risky), tape


def backward(params: PolicyParams, tape: Tape, d_consume: np.ndarray, d_risky: np.ndarray) -> PolicyParams:
    """Exact gradients of sum(d_consume * consume + d_risky * risky) w.r.t. params.

    ``d_consume`` and ``d_risky`` are the upstream gradients with respect to
    the squashed module outputs, shape (S, T).
    """
    S, T, _ = tape.inputs.shape
    if d_consume.shape != (S, T) or d_risky.shape != (S, T):
        raise ValueError("upstream gradients do not match the recorded forward pass")

    g = params.zeros_like()
    Uz, Ur, Un = params.Uh[:, :HID], params.Uh[:, HID : 2 * HID], params.Uh[:, 2 * HID :]

    # output head
    d_raw = np.empty((S, T, OUT_DIM))
    d_raw[:, :, 0] = d_consume * tape.consume * (1.0 - tape.consume)
    d_raw[:, :, 1] = d_risky
    g.W5 = np.einsum("stk,stm->km", tape.a4, d_raw)
    g.b5 = d_raw.sum(axis=(0, 1))
    d_a4 = (d_raw @ params.W5.T) * (tape.a4 > 0)
    g.W4 = np.einsum("stk,stm->km", tape.a3, d_a4)
    g.b4 = d_a4.sum(axis=(0, 1))
    d_a3 = (d_a4 @ params.W4.T) * (tape.a3 > 0)
    g.W3 = np.einsum("stk,stm->km", tape.h[:, 1:], d_a3)
    g.b3 = d_a3.sum(axis=(0, 1))
    d_h_from_head = d_a3 @ params.W3.T  # (S, T, HID)

    # backpropagation through time
    d_gx = np.zeros((S, T, 3 * HID))
    d_h = np.zeros((S, HID))
    for t in range(T - 1, -1, -1):
        d_h = d_h + d_h_from_head[:, t]
        h_prev = tape.h[:, t]
        z, r, n = tape.z[:, t], tape.r[:, t], tape.n[:, t]

        d_z = d_h * (n - h_prev)
        d_n = d_h * z
        d_h_prev = d_h * (1.0 - z)

        d_n_pre = d_n * (1.0 - n * n)
        d_rh = d_n_pre @ Un.T
        g.Uh[:, 2 * HID :] += (r * h_prev).T @ d_n_pre
        d_r = d_rh * h_prev
        d_h_prev = d_h_prev + d_rh * r

        d_z_pre = d_z * z * (1.0 - z)
        d_r_pre = d_r * r * (1.0 - r)
        g.Uh[:, :HID] += h_prev.T @ d_z_pre
        g.Uh[:, HID : 2 * HID] += h_prev.T @ d_r_pre
        d_h_prev = d_h_prev + d_z_pre @ Uz.T + d_r_pre @ Ur.T

        d_gx[:, t, :HID] = d_z_pre
        d_gx[:, t, HID : 2 * HID] = d_r_pre
        d_gx[:, t, 2 * HID :] = d_n_pre
        d_h = d_h_prev

    g.Wx = np.einsum("stk,stm->km", tape.a1, d_gx)
    g.bg = d_gx.sum(axis=(0, 1))
    d_a1 = (d_gx @ params.Wx.T) * (tape.a1 > 0)
    g.W1 = np.einsum("stk,stm->km", tape.inputs, d_a1)
    g.b1 = d_a1.sum(axis=(0, 1))
    return g


def save_checkpoint(params: PolicyParams, path, seed=None, metadata=None) -> None:
    """Versioned JSON checkpoint; parameters stored at full double precision."""
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "architecture": ARCHITECTURE,
        "parameters": [float(v) for v in params.to_flat()],
        "seed": seed,
        "metadata": metadata or {},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)


def load_checkpoint(path) -> tuple[PolicyParams, dict]:
    """Reload a checkpoint bit-exactly; rejects architecture mismatches."""
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format: {doc.get('format_version')}")
    arch = doc.get("architecture", {})
    if arch != ARCHITECTURE:
        raise ValueError(f"checkpoint architecture {arch} does not match {ARCHITECTURE}")
    params = PolicyParams.from_flat(np.array(doc["parameters"], dtype=float))
    meta = {"seed": doc.get("seed"), **doc.get("metadata", {})}
    return params, meta
